//! Multi-scale L1 objective.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::resample::{Filter, Resize2d};
use crate::scale::Scale;
use crate::tensor::{Real, Shape, Tensor};

/// Ground truth at scale `s` for an LR input of `lr_h × lr_w`: the HR
/// batch resized bicubically to `round(s·H) × round(s·W)` and clamped to
/// `[0, 1]`. Same-size requests return the HR batch untouched.
pub fn scale_target<T: Real>(hr: &Tensor<T>, s: Scale, lr_h: usize, lr_w: usize) -> Tensor<T> {
    let hs = hr.shape();
    let (oh, ow) = (s.apply(lr_h), s.apply(lr_w));
    if (oh, ow) == (hs.h, hs.w) {
        return hr.clone();
    }
    let plan = Resize2d::new(Filter::Bicubic, hs.h, hs.w, oh, ow);
    let os = Shape::new(hs.n, hs.c, oh, ow);
    let mut out = Tensor::zeros(os);
    for (src, dst) in hr
        .data()
        .chunks_exact(hs.plane())
        .zip(out.data_mut().chunks_exact_mut(os.plane()))
    {
        plan.apply_plane(src, dst);
    }
    out.map(|v| v.max(T::zero()).min(T::one()))
}

/// Sum over `scales` of the mean absolute error between each output and
/// its target. Targets come from [`scale_target`] on `hr`.
pub fn multiscale_l1<T: Real>(
    g: &mut Graph<T>,
    outputs: &[(Scale, Var)],
    hr: &Tensor<T>,
    lr_hw: (usize, usize),
    scales: &[Scale],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &s in scales {
        let &(_, out) = outputs
            .iter()
            .find(|(o, _)| *o == s)
            .ok_or_else(|| Error::usage(format!("no output for scale {s}")))?;
        let target = scale_target(hr, s, lr_hw.0, lr_hw.1);
        let term = g.l1_mean(out, &target)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::usage("empty scale set"))
}
