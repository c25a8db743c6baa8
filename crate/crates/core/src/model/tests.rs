use super::*;
use crate::image::bicubic_resize;

fn small() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        num_ldgs: 2,
        rbs_per_ldg: 2,
        max_scale: 3,
        overscale_factor: 4,
        ..ModelConfig::default()
    }
}

fn smooth_input(h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let (y, x) = (y as f64 / h as f64, x as f64 / w as f64);
        0.5 + 0.3 * (2.0 * y + 1.3 * x + c as f64).sin() * (1.7 * x - 0.4 * y).cos()
    })
}

fn zero_all(p: &mut ParamStore<f64>) {
    p.zero_values();
}

#[test]
fn closed_form_count_matches_store() {
    for cfg in [ModelConfig::default(), ModelConfig::tiny(), small()] {
        let p = init_params::<f32>(&cfg, 1).unwrap();
        assert_eq!(p.scalar_count(), param_count(&cfg), "{cfg:?}");
    }
}

#[test]
fn tiny_model_is_small() {
    assert!(param_count(&ModelConfig::tiny()) < 60_000);
}

#[test]
fn gdg_toggle_changes_count_by_merges_only() {
    let on = small();
    let off = ModelConfig {
        sc_in_gdg: false,
        ..on.clone()
    };
    let c = on.base_channels;
    // one merge of 2C → C plus the final fusion of D·C → C
    let delta = (2 * c * c + 2 * c) + (on.num_ldgs * c * c + 2 * c);
    assert_eq!(param_count(&on) - param_count(&off), delta);
}

#[test]
fn init_is_seeded_and_gains_match_norms() {
    let cfg = ModelConfig::tiny();
    let a = init_params::<f32>(&cfg, 7).unwrap();
    let b = init_params::<f32>(&cfg, 7).unwrap();
    let c = init_params::<f32>(&cfg, 8).unwrap();
    assert_eq!(a.value("shallow.v").unwrap(), b.value("shallow.v").unwrap());
    assert_ne!(a.value("shallow.v").unwrap(), c.value("shallow.v").unwrap());
    let v = a.value("osm.refine.v").unwrap();
    let g = a.value("osm.refine.g").unwrap();
    for (o, row) in v.data().chunks_exact(27).enumerate() {
        let n: f32 = row.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((n - g.data()[o]).abs() < 1e-5);
    }
    assert_eq!(a.value("skip.lambda1").unwrap().item(), 1.0);
    check_params(&cfg, &a).unwrap();
    let err = check_params(&small(), &a).unwrap_err().to_string();
    assert!(err.contains("parameter"), "{err}");
}

fn block_input(g: &mut Graph<f64>, c: usize) -> Var {
    let t = Tensor::from_fn(Shape::new(2, c, 5, 6), |n, c, y, x| {
        ((n * 31 + c * 7 + y * 3 + x) % 11) as f64 / 5.0 - 1.0
    });
    g.input(t, true)
}

#[test]
fn closed_gate_leaves_scaled_identity() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 3).unwrap();
    p.value_mut("ldg0.rb0.lambda_o").unwrap().fill(0.0);
    p.value_mut("ldg0.rb0.lambda_i").unwrap().fill(0.75);
    let mut g = Graph::new();
    let x = block_input(&mut g, cfg.base_channels);
    let y = residual_block(&mut g, &p, &cfg, "ldg0.rb0", x).unwrap();
    let expect = g.value(x).map(|v| 0.75 * v);
    assert_eq!(g.value(y), &expect);
}

#[test]
fn dead_branch_passes_input_through() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 3).unwrap();
    p.value_mut("ldg0.rb1.conv.g").unwrap().fill(0.0);
    p.value_mut("ldg0.rb1.conv.v").unwrap().fill(0.0);
    let mut g = Graph::new();
    let x = block_input(&mut g, cfg.base_channels);
    let y = residual_block(&mut g, &p, &cfg, "ldg0.rb1", x).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn channel_attention_is_uniform_for_symmetric_weights() {
    // With fc2 rows identical, every channel receives the same scale.
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 5).unwrap();
    let fc2 = p.value("ldg0.rb0.se.fc2.v").unwrap().clone();
    let s = fc2.shape();
    let row: Vec<f64> = fc2.data()[..s.c].to_vec();
    *p.value_mut("ldg0.rb0.se.fc2.v").unwrap() = Tensor::from_fn(s, |_, i, _, _| row[i]);
    p.value_mut("ldg0.rb0.se.fc2.g").unwrap().fill(0.9);
    let mut g = Graph::new();
    let x = block_input(&mut g, cfg.base_channels);
    let e = conv(&mut g, &p, "ldg0.rb0.expand", x).unwrap();
    let e = g.relu(e);
    let e = conv(&mut g, &p, "ldg0.rb0.reduce", e).unwrap();
    let t = conv(&mut g, &p, "ldg0.rb0.conv", e).unwrap();
    let sq = g.gap(t);
    let sq = conv(&mut g, &p, "ldg0.rb0.se.fc1", sq).unwrap();
    let sq = g.relu(sq);
    let sq = conv(&mut g, &p, "ldg0.rb0.se.fc2", sq).unwrap();
    let sq = g.sigmoid(sq);
    let v = g.value(sq);
    for n in 0..2 {
        let first = v.at(n, 0, 0, 0);
        for c in 1..cfg.base_channels {
            assert!((v.at(n, c, 0, 0) - first).abs() < 1e-12);
        }
    }
}

#[test]
fn single_block_group_is_the_block() {
    let cfg = ModelConfig {
        rbs_per_ldg: 1,
        ..small()
    };
    let p = init_params::<f64>(&cfg, 9).unwrap();
    let mut g = Graph::new();
    let x = block_input(&mut g, cfg.base_channels);
    let a = ldg_forward(&mut g, &p, &cfg, 1, x).unwrap();
    let b = residual_block(&mut g, &p, &cfg, "ldg1.rb0", x).unwrap();
    assert_eq!(g.value(a), g.value(b));
    assert_eq!(g.shape(a), g.shape(x));
}

#[test]
fn group_without_skips_is_a_plain_chain() {
    let cfg = ModelConfig {
        sc_in_ldg: false,
        rbs_per_ldg: 3,
        ..small()
    };
    let p = init_params::<f64>(&cfg, 9).unwrap();
    let mut g = Graph::new();
    let x = block_input(&mut g, cfg.base_channels);
    let a = ldg_forward(&mut g, &p, &cfg, 0, x).unwrap();
    let mut y = x;
    for k in 0..3 {
        y = residual_block(&mut g, &p, &cfg, &format!("ldg0.rb{k}"), y).unwrap();
    }
    assert_eq!(g.value(a), g.value(y));
}

#[test]
fn group_shapes_for_every_skip_combination() {
    for (l, d) in [(false, false), (false, true), (true, false), (true, true)] {
        let cfg = ModelConfig {
            sc_in_ldg: l,
            sc_in_gdg: d,
            ..small()
        };
        let p = init_params::<f64>(&cfg, 2).unwrap();
        let mut g = Graph::new();
        let x = block_input(&mut g, cfg.base_channels);
        let y = gdg_forward(&mut g, &p, &cfg, x).unwrap();
        assert_eq!(g.shape(y), g.shape(x));
        assert_eq!(p.scalar_count(), param_count(&cfg));
    }
}

#[test]
fn closed_pool_gate_leaves_scaled_features() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 4).unwrap();
    p.value_mut("skip.lambda1").unwrap().fill(0.0);
    p.value_mut("skip.lambda0").unwrap().fill(1.5);
    let mut g = Graph::new();
    let f = block_input(&mut g, cfg.base_channels);
    let s = block_input(&mut g, cfg.base_channels);
    let h = global_skip(&mut g, &p, f, s).unwrap();
    assert_eq!(g.value(h), &g.value(f).map(|v| 1.5 * v));
}

#[test]
fn skip_rejects_spatial_mismatch() {
    let cfg = small();
    let p = init_params::<f64>(&cfg, 4).unwrap();
    let mut g = Graph::new();
    let f = block_input(&mut g, cfg.base_channels);
    let s = g.input(Tensor::zeros(Shape::new(2, cfg.base_channels, 4, 6)), false);
    assert!(matches!(global_skip(&mut g, &p, f, s), Err(Error::Config(_))));
}

#[test]
fn zero_head_gives_bicubic_upscale() {
    let cfg = small();
    let mut p = init_params::<f64>(&cfg, 4).unwrap();
    for name in ["osm.up", "osm.refine"] {
        for suffix in ["v", "g", "b"] {
            p.value_mut(&format!("{name}.{suffix}")).unwrap().fill(0.0);
        }
    }
    let mut g = Graph::new();
    let lr = g.input(smooth_input(6, 7), false);
    let h = g.input(
        Tensor::from_fn(Shape::new(1, 8, 6, 7), |_, c, y, x| {
            ((c * 5 + y * 3 + x) % 7) as f64 / 3.0 - 1.0
        }),
        false,
    );
    let out = osm_forward(&mut g, &p, &cfg, h, lr).unwrap();
    assert_eq!(g.shape(out), Shape::new(1, 3, 18, 21));
    let plan = Resize2d::new(Filter::Bicubic, 6, 7, 18, 21);
    let src = g.value(lr);
    for c in 0..3 {
        let mut dst = vec![0.0; 18 * 21];
        plan.apply_plane(&src.data()[c * 42..(c + 1) * 42], &mut dst);
        assert_eq!(&g.value(out).data()[c * 378..(c + 1) * 378], &dst[..]);
    }
}

#[test]
fn overscale_equal_to_max_scale_matches_subpixel_head() {
    let a = ModelConfig {
        overscale_factor: 3,
        ..small()
    };
    let b = ModelConfig {
        head: Head::PixelShuffle,
        ..small()
    };
    assert_eq!(layout(&a), layout(&b));
    let p = init_params::<f64>(&a, 6).unwrap();
    let run = |cfg: &ModelConfig| {
        let mut g = Graph::new();
        let x = g.input(smooth_input(5, 6), false);
        let o = overnet_forward(&mut g, &p, cfg, x, &[Scale::integer(3)]).unwrap();
        g.value(o[0].1).clone()
    };
    assert_eq!(run(&a), run(&b));
}

#[test]
fn output_shapes_and_scale_limits() {
    let cfg = ModelConfig {
        max_scale: 4,
        overscale_factor: 5,
        ..small()
    };
    let p = init_params::<f64>(&cfg, 1).unwrap();
    let mut g = Graph::new();
    let x = g.input(smooth_input(6, 5), false);
    let scales: Vec<Scale> = [2, 3, 4].map(Scale::integer).to_vec();
    let outs = overnet_forward(&mut g, &p, &cfg, x, &scales).unwrap();
    let dims: Vec<_> = outs.iter().map(|(_, v)| (g.shape(*v).h, g.shape(*v).w)).collect();
    assert_eq!(dims, vec![(12, 10), (18, 15), (24, 20)]);

    let frac = overnet_forward(&mut g, &p, &cfg, x, &["2.5".parse().unwrap()]).unwrap();
    assert_eq!(g.shape(frac[0].1), Shape::new(1, 3, 15, 13));

    let err = overnet_forward(&mut g, &p, &cfg, x, &[Scale::integer(5)]).unwrap_err();
    assert!(matches!(err, Error::ScaleOverflow { max: 4, .. }));
}

#[test]
fn forward_is_deterministic() {
    let cfg = small();
    let p = init_params::<f32>(&cfg, 11).unwrap();
    let img = Image::from_fn(3, 7, 9, |c, y, x| ((c + 2 * y + 3 * x) % 10) as f32 / 9.0);
    let scales = [Scale::integer(2), Scale::integer(3)];
    let a = super_resolve(&cfg, &p, &img, &scales).unwrap();
    let b = super_resolve(&cfg, &p, &img, &scales).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_model_tracks_bicubic_at_every_scale() {
    let cfg = ModelConfig {
        max_scale: 4,
        overscale_factor: 5,
        ..small()
    };
    let mut p = init_params::<f64>(&cfg, 1).unwrap();
    zero_all(&mut p);
    let lr = smooth_input(12, 10);
    let img = Image::from_tensor(&lr, 0).unwrap();
    let scales: Vec<Scale> = ["1.5", "2", "3", "4"].iter().map(|s| s.parse().unwrap()).collect();
    let mut g = Graph::new();
    let x = g.constant(lr);
    let outs = overnet_forward(&mut g, &p, &cfg, x, &scales).unwrap();
    for (s, v) in outs {
        let out = g.value(v);
        let reference = bicubic_resize(&img, out.shape().h, out.shape().w).unwrap();
        let worst = out
            .data()
            .iter()
            .zip(reference.pixels())
            .map(|(a, b)| (a - *b as f64).abs())
            .fold(0.0, f64::max);
        if s == Scale::integer(4) {
            assert!(worst < 1e-6, "×{s}: {worst}");
        } else {
            assert!(worst < 1.0 / 255.0, "×{s}: {worst}");
        }
    }
}

#[test]
fn gradients_reach_first_layer_and_every_gate() {
    let cfg = ModelConfig::tiny();
    let mut p = init_params::<f64>(&cfg, 21).unwrap();
    let mut g = Graph::new();
    let x = g.constant(smooth_input(6, 6));
    let outs = overnet_forward(&mut g, &p, &cfg, x, &[Scale::integer(2), Scale::integer(4)]).unwrap();
    let target = Tensor::full(g.shape(outs[0].1), 0.3);
    let l0 = g.l1_mean(outs[0].1, &target).unwrap();
    let target = Tensor::full(g.shape(outs[1].1), 0.6);
    let l1 = g.l1_mean(outs[1].1, &target).unwrap();
    let loss = g.add(l0, l1).unwrap();
    g.backward(loss, &mut p).unwrap();
    let norm = |n: &str| p.grad(n).unwrap().data().iter().map(|v| v.abs()).sum::<f64>();
    assert!(norm("shallow.v") > 0.0);
    let gates: Vec<String> = p
        .names()
        .filter(|n| n.contains("lambda"))
        .map(str::to_string)
        .collect();
    assert_eq!(gates.len(), 2 * cfg.rbs_per_ldg + 2);
    for name in gates {
        assert!(norm(&name) > 0.0, "{name}");
    }
}

#[test]
fn pooled_skip_carries_gradient_with_frozen_backbone() {
    // Severing the backbone (λ_0 = 0) leaves the pooled branch as the only
    // path from the first convolution to the output.
    let cfg = ModelConfig::tiny();
    let mut p = init_params::<f64>(&cfg, 2).unwrap();
    p.value_mut("skip.lambda0").unwrap().fill(0.0);
    let mut g = Graph::new();
    let x = g.constant(smooth_input(6, 6));
    let outs = overnet_forward(&mut g, &p, &cfg, x, &[Scale::integer(4)]).unwrap();
    let target = Tensor::full(g.shape(outs[0].1), 0.5);
    let loss = g.l1_mean(outs[0].1, &target).unwrap();
    g.backward(loss, &mut p).unwrap();
    let shallow: f64 = p.grad("shallow.b").unwrap().data().iter().map(|v| v.abs()).sum();
    let backbone: f64 = p.grad("ldg0.rb0.expand.v").unwrap().data().iter().map(|v| v.abs()).sum();
    assert!(shallow > 0.0);
    assert_eq!(backbone, 0.0);
}
