use rand::Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::rng;

/// Cut an aligned (LR, HR) training pair with random flip/rotation.
///
/// The LR patch is `patch × patch` at a random location; the HR patch is
/// the `patch·scale` square at `scale ×` those coordinates. A horizontal
/// flip and a 90° rotation are each applied with probability ½, identically
/// to both patches.
pub fn sample_patch(
    hr: &Image,
    lr: &Image,
    patch: usize,
    scale: usize,
    rng_seed: u64,
) -> Result<(Image, Image)> {
    if hr.height() != lr.height() * scale || hr.width() != lr.width() * scale {
        return Err(Error::usage(format!(
            "HR {}x{} is not ×{scale} of LR {}x{}",
            hr.height(),
            hr.width(),
            lr.height(),
            lr.width()
        )));
    }
    if patch == 0 || patch > lr.height() || patch > lr.width() {
        return Err(Error::usage(format!(
            "patch {patch} does not fit a {}x{} LR image",
            lr.height(),
            lr.width()
        )));
    }
    let mut rng = rng::stream(rng_seed, "patch", 0);
    let y = rng.random_range(0..=lr.height() - patch);
    let x = rng.random_range(0..=lr.width() - patch);
    let flip = rng.random_bool(0.5);
    let rotate = rng.random_bool(0.5);

    let mut lp = lr.crop(y, x, patch, patch)?;
    let mut hp = hr.crop(y * scale, x * scale, patch * scale, patch * scale)?;
    if flip {
        lp = lp.flip_horizontal();
        hp = hp.flip_horizontal();
    }
    if rotate {
        lp = lp.rotate90();
        hp = hp.rotate90();
    }
    Ok((lp, hp))
}
