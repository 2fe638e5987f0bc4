//! Two-view augmentation on channel-major `3 x H x W` images (rows are
//! frequency bins, columns are frames).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Largest circular time shift as a fraction of the width.
    pub max_shift: f64,
    /// Widest frequency mask as a fraction of the height.
    pub max_mask: f64,
    /// Channel 0 is scaled by `U(1 - jitter, 1 + jitter)`.
    pub jitter: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { max_shift: 0.10, max_mask: 0.15, jitter: 0.10 }
    }
}

impl AugmentParams {
    pub fn none() -> Self {
        Self { max_shift: 0.0, max_mask: 0.0, jitter: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.max_shift) || !(0.0..1.0).contains(&self.max_mask) || !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(format!("augmentation fractions must be in [0, 1): {self:?}")));
        }
        Ok(())
    }
}

/// Seed for one view: first 8 bytes of `sha256(run_seed, step, sample, view)`.
pub fn view_seed(run_seed: u64, step: u64, sample: u64, view: u64) -> u64 {
    derive_seed(&[run_seed, step, sample, view])
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Draws of one augmented view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewDraw {
    /// Signed circular shift in columns.
    pub shift: i64,
    /// First masked row and mask height (0 = no mask).
    pub mask_start: usize,
    pub mask_len: usize,
    pub gain: f32,
}

pub fn draw_view(params: &AugmentParams, h: usize, w: usize, seed: u64) -> ViewDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_s = (params.max_shift * w as f64).floor() as i64;
    let shift = rng.random_range(-max_s..=max_s);
    let max_m = (params.max_mask * h as f64).floor() as usize;
    let mask_len = rng.random_range(0..=max_m);
    let mask_start = rng.random_range(0..=h - mask_len);
    let gain = if params.jitter > 0.0 {
        rng.random_range(1.0 - params.jitter..=1.0 + params.jitter) as f32
    } else {
        1.0
    };
    ViewDraw { shift, mask_start, mask_len, gain }
}

/// Applies `d` to `src` (`3 x h x w`, values in `[0, 1]`) writing into `dst`.
pub fn apply_view(src: &[f32], h: usize, w: usize, d: &ViewDraw, dst: &mut [f32]) {
    let plane = h * w;
    let s = d.shift.rem_euclid(w as i64) as usize;
    for c in 0..3 {
        for r in 0..h {
            let row = &src[c * plane + r * w..c * plane + (r + 1) * w];
            let out = &mut dst[c * plane + r * w..c * plane + (r + 1) * w];
            let masked = r >= d.mask_start && r < d.mask_start + d.mask_len;
            for (x, o) in out.iter_mut().enumerate() {
                let v = row[(x + w - s) % w];
                *o = if masked {
                    if c == 0 {
                        0.0
                    } else {
                        0.5
                    }
                } else if c == 0 {
                    (v * d.gain).clamp(0.0, 1.0)
                } else {
                    v
                };
            }
        }
    }
}

/// Both views of one image.
pub fn two_view_augment(
    x: &[f32],
    h: usize,
    w: usize,
    params: &AugmentParams,
    run_seed: u64,
    step: u64,
    sample: u64,
) -> (Vec<f32>, Vec<f32>) {
    let mut a = vec![0.0; x.len()];
    let mut b = vec![0.0; x.len()];
    apply_view(x, h, w, &draw_view(params, h, w, view_seed(run_seed, step, sample, 0)), &mut a);
    apply_view(x, h, w, &draw_view(params, h, w, view_seed(run_seed, step, sample, 1)), &mut b);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize) -> Vec<f32> {
        (0..3 * h * w).map(|k| ((k * 37) % 101) as f32 / 100.0).collect()
    }

    #[test]
    fn zero_params_is_identity() {
        let x = img(8, 8);
        let (a, b) = two_view_augment(&x, 8, 8, &AugmentParams::none(), 1, 2, 3);
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn masked_band_values() {
        let x = img(8, 8);
        let d = ViewDraw { shift: 0, mask_start: 2, mask_len: 3, gain: 1.0 };
        let mut y = vec![0.0; x.len()];
        apply_view(&x, 8, 8, &d, &mut y);
        for r in 2..5 {
            assert!(y[r * 8..(r + 1) * 8].iter().all(|&v| v == 0.0));
            assert!(y[64 + r * 8..64 + (r + 1) * 8].iter().all(|&v| v == 0.5));
            assert!(y[128 + r * 8..128 + (r + 1) * 8].iter().all(|&v| v == 0.5));
        }
        assert_eq!(y[0..16], x[0..16]);
    }

    #[test]
    fn shift_is_circular_on_columns() {
        let x = img(2, 5);
        let d = ViewDraw { shift: 2, mask_start: 0, mask_len: 0, gain: 1.0 };
        let mut y = vec![0.0; x.len()];
        apply_view(&x, 2, 5, &d, &mut y);
        for c in 0..3 {
            for r in 0..2 {
                for col in 0..5 {
                    assert_eq!(y[c * 10 + r * 5 + (col + 2) % 5], x[c * 10 + r * 5 + col]);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_view_dependent() {
        let x = img(16, 16);
        let p = AugmentParams::default();
        let v1 = two_view_augment(&x, 16, 16, &p, 9, 4, 2);
        assert_eq!(v1, two_view_augment(&x, 16, 16, &p, 9, 4, 2));
        assert_ne!(v1.0, v1.1);
    }
}
