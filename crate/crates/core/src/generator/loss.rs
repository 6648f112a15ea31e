//! Perceptual proxy loss: a mean-squared image pyramid plus a frozen random
//! 3×3 feature bank at the first pooled level.
//!
//! `L(a, b) = Σ_{l=0..3} mean((P_l a − P_l b)²) + 0.1 · mean((F P_1 a − F P_1 b)²)`
//! where `P_l` is `l` rounds of 2×2 average pooling and `F` is 8 filters of
//! shape 3×3×3 (valid convolution). Both parts are linear in the image, so
//! the loss is evaluated on the difference `a − b`.

use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::image::{Image, CHANNELS};
use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};

pub const PYRAMID_LEVELS: usize = 4;
pub const FEATURE_WEIGHT: f64 = 0.1;
const FILTERS: usize = 8;
const KERNEL: usize = 3;
const BANK_SEED: u64 = 0x5eed_ba4c;

fn feature_bank() -> &'static Array {
    static BANK: OnceLock<Array> = OnceLock::new();
    BANK.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(BANK_SEED);
        let fan_in = (CHANNELS * KERNEL * KERNEL) as f64;
        let data = (0..FILTERS * CHANNELS * KERNEL * KERNEL)
            .map(|_| {
                let n: f64 = StandardNormal.sample(&mut rng);
                n / fan_in.sqrt()
            })
            .collect();
        Array::new(vec![FILTERS, CHANNELS * KERNEL * KERNEL], data).expect("bank shape")
    })
}

/// Loss evaluator for one image size; holds the im2col gather table.
#[derive(Clone, Debug)]
pub struct PerceptualLoss {
    width: usize,
    height: usize,
    patches: Arc<[usize]>,
    out_h: usize,
    out_w: usize,
}

impl PerceptualLoss {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        let pool = 1 << (PYRAMID_LEVELS - 1);
        if !width.is_multiple_of(pool) || !height.is_multiple_of(pool) || width / 2 < KERNEL || height / 2 < KERNEL {
            return Err(Error::InvalidArgument(format!(
                "image {width}x{height} too small or not divisible by {pool}"
            )));
        }
        let (h1, w1) = (height / 2, width / 2);
        let (out_h, out_w) = (h1 - KERNEL + 1, w1 - KERNEL + 1);
        // rows: (channel, ky, kx), columns: output pixel
        let mut idx = Vec::with_capacity(CHANNELS * KERNEL * KERNEL * out_h * out_w);
        for c in 0..CHANNELS {
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    for oy in 0..out_h {
                        for ox in 0..out_w {
                            idx.push((c * h1 + oy + ky) * w1 + ox + kx);
                        }
                    }
                }
            }
        }
        Ok(Self {
            width,
            height,
            patches: idx.into(),
            out_h,
            out_w,
        })
    }

    pub fn for_image(img: &Image) -> Result<Self> {
        Self::new(img.width(), img.height())
    }

    /// Record `L(image, target)` where `image` is a `[3,H,W]` node.
    pub fn on_tape(&self, tape: &mut Tape, image: Var, target: &Image) -> Result<Var> {
        if target.width() != self.width || target.height() != self.height {
            return Err(Error::shape(
                "perceptual_loss",
                format!("target {}x{} vs {}x{}", target.width(), target.height(), self.width, self.height),
            ));
        }
        let t = tape.constant(target.to_array());
        let diff = tape.sub(image, t)?;
        self.on_difference(tape, diff)
    }

    fn on_difference(&self, tape: &mut Tape, diff: Var) -> Result<Var> {
        if tape.shape(diff) != [CHANNELS, self.height, self.width] {
            return Err(Error::shape(
                "perceptual_loss",
                format!("{:?} vs {}x{}", tape.shape(diff), self.width, self.height),
            ));
        }
        let mut level = diff;
        let mut terms = Vec::with_capacity(PYRAMID_LEVELS + 1);
        let mut level1 = None;
        for l in 0..PYRAMID_LEVELS {
            if l > 0 {
                level = tape.avgpool2x2(level)?;
            }
            if l == 1 {
                level1 = Some(level);
            }
            let sq = tape.square(level)?;
            terms.push(tape.mean(sq)?);
        }
        let level1 = level1.expect("at least two pyramid levels");
        let cols = tape.gather(
            level1,
            self.patches.clone(),
            &[CHANNELS * KERNEL * KERNEL, self.out_h * self.out_w],
        )?;
        let bank = tape.constant(feature_bank().clone());
        let feats = tape.matmul(bank, cols)?;
        let fsq = tape.square(feats)?;
        let fmean = tape.mean(fsq)?;
        terms.push(tape.scale(fmean, FEATURE_WEIGHT)?);
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        Ok(total)
    }

    /// Plain value of `L(a, b)`.
    pub fn value(&self, a: &Image, b: &Image) -> Result<f64> {
        if !a.same_dims(b) {
            return Err(Error::shape(
                "perceptual_loss",
                format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
            ));
        }
        let mut tape = Tape::new();
        let av = tape.constant(a.to_array());
        let loss = self.on_tape(&mut tape, av, b)?;
        Ok(tape.scalar(loss))
    }
}

/// `L(a, b)` for two images of equal size.
pub fn perceptual_proxy_loss(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::shape(
            "perceptual_loss",
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    PerceptualLoss::for_image(a)?.value(a, b)
}
