//! Procedural test images.
#![allow(dead_code)]

use overnet::image::Image;
use rand::Rng;

/// A 3-channel scene with a smooth background, hard-edged shapes and
/// striped texture, deterministic in `seed`.
pub fn scene(seed: u64, h: usize, w: usize) -> Image {
    let mut rng = overnet::rng::stream(seed, "scene", 0);
    let bg: [[f32; 3]; 2] = [
        [rng.random_range(0.1..0.5), rng.random_range(0.1..0.5), rng.random_range(0.1..0.5)],
        [rng.random_range(0.5..0.9), rng.random_range(0.5..0.9), rng.random_range(0.5..0.9)],
    ];
    let angle: f32 = rng.random_range(0.0..std::f32::consts::PI);
    struct Disk {
        cy: f32,
        cx: f32,
        r: f32,
        color: [f32; 3],
    }
    let disks: Vec<Disk> = (0..7)
        .map(|_| Disk {
            cy: rng.random_range(0.0..h as f32),
            cx: rng.random_range(0.0..w as f32),
            r: rng.random_range(0.05..0.2) * h.min(w) as f32,
            color: [rng.random(), rng.random(), rng.random()],
        })
        .collect();
    struct Stripes {
        y0: f32,
        x0: f32,
        size: f32,
        freq: f32,
        dir: (f32, f32),
        amp: f32,
    }
    let stripes: Vec<Stripes> = (0..3)
        .map(|_| {
            let a: f32 = rng.random_range(0.0..std::f32::consts::PI);
            Stripes {
                y0: rng.random_range(0.0..h as f32 * 0.7),
                x0: rng.random_range(0.0..w as f32 * 0.7),
                size: rng.random_range(0.2..0.35) * h.min(w) as f32,
                freq: rng.random_range(0.15..0.6),
                dir: (a.cos(), a.sin()),
                amp: rng.random_range(0.15..0.3),
            }
        })
        .collect();
    Image::from_fn(3, h, w, |c, y, x| {
        let (yf, xf) = (y as f32, x as f32);
        let t = ((yf * angle.cos() + xf * angle.sin()) / (h + w) as f32 + 0.5).clamp(0.0, 1.0);
        let mut v = bg[0][c] * (1.0 - t) + bg[1][c] * t;
        for d in &disks {
            let dist = ((yf - d.cy).powi(2) + (xf - d.cx).powi(2)).sqrt();
            let cover = (d.r - dist + 0.5).clamp(0.0, 1.0);
            v = v * (1.0 - cover) + d.color[c] * cover;
        }
        for s in &stripes {
            if yf >= s.y0 && yf < s.y0 + s.size && xf >= s.x0 && xf < s.x0 + s.size {
                let phase = (yf * s.dir.0 + xf * s.dir.1) * s.freq;
                v += s.amp * phase.sin() * if c == 1 { 1.0 } else { 0.6 };
            }
        }
        v.clamp(0.0, 1.0)
    })
}
