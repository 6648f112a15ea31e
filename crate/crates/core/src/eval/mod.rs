//! Error metrics, AP aggregation, image disturbances and the experiment
//! suites (clean, initialization sweep, robustness, timing).

mod suites;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::generator::{Image, PoseState, BACKGROUND, CHANNELS};
use crate::geometry::{euler_to_matrix, rotation_error, symmetric_rotation_error, translation_error, Vec3};

pub use suites::{
    evaluate, init_sweep, make_episodes, robustness_suite, sweep_episodes, timing_suite,
    write_report, Episode, EpisodeResults, EvalReport, Method, ReportRow, SweepBin, SWEEP_BINS,
};

/// AP thresholds: rotation in degrees, translation in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    pub rotation: Vec<f64>,
    pub translation: Vec<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rotation: vec![10.0, 30.0, 60.0],
            translation: vec![0.05, 0.10, 0.15],
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for list in [&self.rotation, &self.translation] {
            if list.is_empty()
                || list[0] <= 0.0
                || list.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(Error::Config(format!(
                    "thresholds must be positive and strictly increasing: {list:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Fraction of `errors` strictly below `threshold`.
pub fn compute_ap(errors: &[f64], threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("AP of an empty error list".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be > 0, got {threshold}")));
    }
    Ok(errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64)
}

/// `(rotation error in radians, translation error)` of a final state against
/// the goal; spin about `symmetry_axis` is not penalized.
pub fn episode_error(final_state: &PoseState, goal: &PoseState, symmetry_axis: Option<Vec3>) -> (f64, f64) {
    let a = euler_to_matrix(final_state.theta);
    let b = euler_to_matrix(goal.theta);
    let rot = match symmetry_axis {
        Some(axis) => symmetric_rotation_error(&a, &b, axis),
        None => rotation_error(&a, &b),
    };
    (rot, translation_error(&final_state.t, &goal.t))
}

/// Median; the mean of the two middle values for even lengths. NaN when empty.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation (zero for fewer than two values).
pub fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DisturbanceKind {
    Brightness,
    Occlusion,
    Shift,
}

impl DisturbanceKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Brightness => "brightness",
            Self::Occlusion => "occlusion",
            Self::Shift => "shift",
        }
    }
}

/// Brightness is a multiplicative factor, occlusion an area fraction and
/// shift an image fraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub magnitude: f64,
}

impl Disturbance {
    pub fn new(kind: DisturbanceKind, magnitude: f64) -> Result<Self> {
        let ok = match kind {
            DisturbanceKind::Brightness => magnitude > 0.0 && magnitude.is_finite(),
            DisturbanceKind::Occlusion => (0.0..=0.5).contains(&magnitude),
            DisturbanceKind::Shift => (0.0..=0.25).contains(&magnitude),
        };
        if ok {
            Ok(Self { kind, magnitude })
        } else {
            Err(Error::InvalidArgument(format!("{} magnitude {magnitude} out of range", kind.name())))
        }
    }

    /// Whether the disturbance leaves every image unchanged.
    pub fn is_identity(&self) -> bool {
        match self.kind {
            DisturbanceKind::Brightness => self.magnitude == 1.0,
            _ => self.magnitude == 0.0,
        }
    }

    pub fn label(&self) -> String {
        format!("{}={}", self.kind.name(), self.magnitude)
    }
}

/// Apply `d` to `img`; brightness results are clamped to `[0, 1]`. Occlusion draws the square position from `rng`; the
/// other kinds do not consume randomness.
pub fn apply_disturbance(img: &Image, d: &Disturbance, rng: &mut ChaCha8Rng) -> Result<Image> {
    let d = Disturbance::new(d.kind, d.magnitude)?;
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    match d.kind {
        DisturbanceKind::Brightness => {
            let data: Vec<f64> = img.data().iter().map(|v| (v * d.magnitude).clamp(0.0, 1.0)).collect();
            out = Image::new(w, h, data)?;
        }
        DisturbanceKind::Occlusion => {
            let side = ((d.magnitude * (w * h) as f64).sqrt().round() as usize).min(w.min(h));
            if side > 0 {
                let x0 = rng.random_range(0..=w - side);
                let y0 = rng.random_range(0..=h - side);
                for c in 0..CHANNELS {
                    for y in y0..y0 + side {
                        for x in x0..x0 + side {
                            out.set(c, y, x, BACKGROUND);
                        }
                    }
                }
            }
        }
        DisturbanceKind::Shift => {
            let dx = (d.magnitude * w as f64).round() as usize % w;
            let dy = (d.magnitude * h as f64).round() as usize % h;
            for c in 0..CHANNELS {
                for y in 0..h {
                    for x in 0..w {
                        out.set(c, (y + dy) % h, (x + dx) % w, img.get(c, y, x));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
