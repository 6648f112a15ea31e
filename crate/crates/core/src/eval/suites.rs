use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{apply_disturbance, compute_ap, episode_error, median, stddev, Disturbance, Thresholds};
use crate::error::{Error, Result};
use crate::generator::{GeneratorSpec, Image, LatentCode, PoseState};
use crate::geometry::EulerPose;
use crate::il::hybrid_rollout;
use crate::policy::{
    apply_action, multi_start_gd_from, rollout, Action, EpisodeConfig, GdConfig, NetPolicy,
};

/// An estimation procedure under evaluation.
#[derive(Clone, Debug)]
pub enum Method {
    /// Gradient descent from `starts` azimuth-spread initial states.
    Gd { starts: usize, cfg: GdConfig },
    /// A learned policy run for `steps` steps.
    Learned { policy: NetPolicy, steps: usize },
    /// Applies the exact residual to the goal in one step; a ceiling for
    /// sanity checks.
    Oracle,
    /// A learned policy followed by gradient descent.
    Hybrid {
        policy: NetPolicy,
        il_steps: usize,
        gd_steps: usize,
        cfg: GdConfig,
    },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Gd { starts: 1, .. } => "gd".into(),
            Method::Gd { starts, .. } => format!("gd{starts}"),
            Method::Learned { policy, .. } => policy.label.clone(),
            Method::Hybrid { policy, .. } => format!("{}+gd", policy.label),
            Method::Oracle => "oracle".into(),
        }
    }

    /// Final state reached from the episode's initial state toward its
    /// target. Only [`Method::Oracle`] looks at the goal.
    pub fn estimate(&self, spec: &GeneratorSpec, ep: &Episode) -> Result<PoseState> {
        let (init, target) = (&ep.init, &ep.target);
        match self {
            Method::Oracle => Ok(apply_action(init, &Action::residual(&ep.goal, init))),
            Method::Gd { starts, cfg } => Ok(multi_start_gd_from(spec, init, target, *starts, cfg)?.0),
            Method::Learned { policy, steps } => {
                let t = rollout(policy, spec, init, target, &EpisodeConfig::new(*steps)?)?;
                Ok(*t.final_state())
            }
            Method::Hybrid {
                policy,
                il_steps,
                gd_steps,
                cfg,
            } => Ok(*hybrid_rollout(policy, spec, init, target, *il_steps, *gd_steps, cfg)?.final_state()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub goal: PoseState,
    pub init: PoseState,
    pub target: Image,
}

/// `n` episodes from the mean pose toward sampled goals.
pub fn make_episodes(spec: &GeneratorSpec, n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let goal = spec.sample_state(&mut rng);
            Episode {
                target: spec.render(&goal),
                init: spec.mean_pose(),
                goal,
            }
        })
        .collect()
}

/// `n` episodes whose initial state is the goal rotated in azimuth by
/// `±angle_deg` (sign alternating), with the goal's translation and `z = 0`.
pub fn sweep_episodes(spec: &GeneratorSpec, angle_deg: f64, n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let goal = spec.sample_state(&mut rng);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let th = goal.theta;
            let init = PoseState {
                theta: EulerPose::new(th.azimuth + sign * angle_deg.to_radians(), th.elevation, th.inplane),
                t: goal.t,
                z: LatentCode::zero(),
            };
            Episode {
                target: spec.render(&goal),
                init,
                goal,
            }
        })
        .collect()
}

/// Per-episode final errors (rotation in degrees) and wall times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeResults {
    pub rot_deg: Vec<f64>,
    pub trans: Vec<f64>,
    pub seconds: Vec<f64>,
}

fn run_one(method: &Method, spec: &GeneratorSpec, ep: &Episode) -> Result<(f64, f64, f64)> {
    let t0 = Instant::now();
    let fin = method.estimate(spec, ep)?;
    let secs = t0.elapsed().as_secs_f64();
    let (r, t) = episode_error(&fin, &ep.goal, spec.symmetry_axis);
    Ok((r.to_degrees(), t, secs))
}

/// Evaluate `method` on every episode. With `threads > 1` episodes run on a
/// dedicated pool; results keep episode order either way.
pub fn evaluate(method: &Method, spec: &GeneratorSpec, episodes: &[Episode], threads: usize) -> Result<EpisodeResults> {
    let rows: Vec<(f64, f64, f64)> = if threads <= 1 {
        episodes.iter().map(|ep| run_one(method, spec, ep)).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| episodes.par_iter().map(|ep| run_one(method, spec, ep)).collect::<Result<_>>())?
    };
    let mut out = EpisodeResults::default();
    for (r, t, s) in rows {
        out.rot_deg.push(r);
        out.trans.push(t);
        out.seconds.push(s);
    }
    Ok(out)
}

/// Errors and AP of one policy under one condition and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub policy: String,
    pub condition: String,
    pub seed: u64,
    pub results: EpisodeResults,
    /// `(threshold in degrees, AP)`.
    pub ap_rot: Vec<(f64, f64)>,
    /// `(threshold, AP)`.
    pub ap_trans: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn new(
        policy: impl Into<String>,
        condition: impl Into<String>,
        seed: u64,
        results: EpisodeResults,
        thresholds: &Thresholds,
    ) -> Result<Self> {
        let ap = |errs: &[f64], ths: &[f64]| -> Result<Vec<(f64, f64)>> {
            ths.iter().map(|&t| Ok((t, compute_ap(errs, t)?))).collect()
        };
        Ok(Self {
            ap_rot: ap(&results.rot_deg, &thresholds.rotation)?,
            ap_trans: ap(&results.trans, &thresholds.translation)?,
            policy: policy.into(),
            condition: condition.into(),
            seed,
            results,
        })
    }

    pub fn ap_rot_at(&self, threshold_deg: f64) -> Option<f64> {
        self.ap_rot.iter().find(|(t, _)| *t == threshold_deg).map(|p| p.1)
    }

    /// `(metric, value)` pairs in report order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut m: Vec<(String, f64)> = self.ap_rot.iter().map(|(t, v)| (format!("ap_rot@{t}"), *v)).collect();
        m.extend(self.ap_trans.iter().map(|(t, v)| (format!("ap_trans@{t}"), *v)));
        m.push(("median_rot_deg".into(), median(&self.results.rot_deg)));
        m.push(("median_trans".into(), median(&self.results.trans)));
        m
    }
}

/// Plot-ready long-format row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub policy: String,
    pub condition: String,
    pub metric: String,
    pub value: f64,
    pub seed_count: usize,
    pub stddev: f64,
}

impl ReportRow {
    /// Median over seeds with the across-seed standard deviation.
    pub fn aggregate(policy: &str, condition: &str, metric: &str, per_seed: &[f64]) -> Self {
        Self {
            policy: policy.into(),
            condition: condition.into(),
            metric: metric.into(),
            value: median(per_seed),
            seed_count: per_seed.len(),
            stddev: stddev(per_seed),
        }
    }

    /// Aggregate reports that share policy and condition but differ in seed.
    pub fn from_reports(reports: &[EvalReport]) -> Vec<ReportRow> {
        let Some(first) = reports.first() else {
            return Vec::new();
        };
        let per: Vec<Vec<(String, f64)>> = reports.iter().map(|r| r.metrics()).collect();
        first
            .metrics()
            .iter()
            .enumerate()
            .map(|(k, (name, _))| {
                let vals: Vec<f64> = per.iter().map(|m| m[k].1).collect();
                Self::aggregate(&first.policy, &first.condition, name, &vals)
            })
            .collect()
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["policy", "condition", "metric", "value", "seed_count", "stddev"])?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.condition.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.seed_count.to_string(),
            r.stddev.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SWEEP_BINS: usize = 18;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepBin {
    pub angle_deg: f64,
    pub ap10: f64,
    pub ap30: f64,
    pub median_rot_deg: f64,
}

/// AP₁₀ and AP₃₀ for azimuth offsets 10°, 20°, …, 180°.
pub fn init_sweep(
    method: &Method,
    spec: &GeneratorSpec,
    episodes_per_angle: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<SweepBin>> {
    (1..=SWEEP_BINS)
        .map(|k| {
            let angle = 10.0 * k as f64;
            let eps = sweep_episodes(spec, angle, episodes_per_angle, seed.wrapping_mul(1000).wrapping_add(k as u64));
            let res = evaluate(method, spec, &eps, threads)?;
            Ok(SweepBin {
                angle_deg: angle,
                ap10: compute_ap(&res.rot_deg, 10.0)?,
                ap30: compute_ap(&res.rot_deg, 30.0)?,
                median_rot_deg: median(&res.rot_deg),
            })
        })
        .collect()
}

/// Evaluate every method on the same disturbed targets, one report per
/// `(method, disturbance)`. Disturbances touch only the target image.
pub fn robustness_suite(
    methods: &[Method],
    spec: &GeneratorSpec,
    grid: &[Disturbance],
    episodes: usize,
    seed: u64,
    threads: usize,
    thresholds: &Thresholds,
) -> Result<Vec<EvalReport>> {
    let clean = make_episodes(spec, episodes, seed);
    let mut out = Vec::with_capacity(methods.len() * grid.len());
    for (gi, d) in grid.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5151_0000 + gi as u64));
        let disturbed: Vec<Episode> = clean
            .iter()
            .map(|ep| {
                Ok(Episode {
                    target: apply_disturbance(&ep.target, d, &mut rng)?,
                    ..ep.clone()
                })
            })
            .collect::<Result<_>>()?;
        for m in methods {
            let res = evaluate(m, spec, &disturbed, threads)?;
            out.push(EvalReport::new(m.name(), d.label(), seed, res, thresholds)?);
        }
    }
    Ok(out)
}

/// Mean wall-clock seconds per target image for each method, excluding the
/// first three images as warmup. Always single-threaded.
pub fn timing_suite(methods: &[Method], spec: &GeneratorSpec, n_images: usize, seed: u64) -> Result<Vec<(String, f64)>> {
    if n_images < 10 {
        return Err(Error::InvalidArgument(format!("timing needs >= 10 images, got {n_images}")));
    }
    const WARMUP: usize = 3;
    let eps = make_episodes(spec, n_images, seed);
    methods
        .iter()
        .map(|m| {
            let res = evaluate(m, spec, &eps, 1)?;
            let kept = &res.seconds[WARMUP..];
            Ok((m.name(), kept.iter().sum::<f64>() / kept.len() as f64))
        })
        .collect()
}
