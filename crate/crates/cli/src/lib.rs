//! Command implementations behind the `posenav` binary.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use posenav::eval::{
    evaluate, init_sweep, make_episodes, robustness_suite, timing_suite, write_report, Disturbance,
    DisturbanceKind, EvalReport, Method, ReportRow, Thresholds, SWEEP_BINS,
};
use posenav::generator::{GeneratorSpec, LatentCode, PerceptualLoss, PoseState, LATENT_DIM};
use posenav::geometry::{EulerPose, Translation};
use posenav::il::{hybrid_rollout, make_demos, train_il, write_demo_set, write_il_log, IlConfig};
use posenav::policy::{rollout, EpisodeConfig, GdPolicy, NetPolicy, PolicyNet};
use posenav::rl::{train_rl, write_training_log};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ConfigError, PolicyKind, RunConfig};

pub const VERSION: &str = env!("POSENAV_VERSION");
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const MODEL_FILE: &str = "model.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.ini";
pub const LANDSCAPE_FILE: &str = "landscape.csv";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<posenav::Error> for CliError {
    fn from(e: posenav::Error) -> Self {
        use posenav::Error as E;
        let code = match &e {
            _ if e.is_numerical() => EXIT_NUMERIC,
            E::Config(_) | E::InvalidArgument(_) => EXIT_USAGE,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::usage(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    Ok(cfg.out.clone())
}

/// Writes the resolved configuration, prefixed by the version and the
/// command line as comments.
pub fn write_manifest(cfg: &RunConfig, command: &str) -> CliResult {
    let path = cfg.out.join(MANIFEST_FILE);
    let text = format!("; posenav {VERSION}\n; command: {command}\n{}", cfg.to_ini());
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Clean,
    Sweep,
    Robustness,
    Timing,
    Ablation,
}

impl Suite {
    pub fn parse(s: &str) -> CliResult<Self> {
        Ok(match s {
            "clean" => Suite::Clean,
            "sweep" => Suite::Sweep,
            "robustness" => Suite::Robustness,
            "timing" => Suite::Timing,
            "ablation" => Suite::Ablation,
            _ => return Err(CliError::usage(format!("unknown suite {s:?}"))),
        })
    }
}

/// Parses `key=value` tokens separated by commas into a state. Angles (`az`,
/// `el`, `ip`) are in degrees; `tx`, `ty`, `scale` and `z0`..`z15` are raw.
/// Omitted keys keep their mean-pose values; `mean` alone is the mean pose.
pub fn parse_state(spec: &GeneratorSpec, text: &str) -> CliResult<PoseState> {
    let base = spec.mean_pose();
    let mut th = base.theta.to_array();
    let mut t = base.t.to_array();
    let mut z = base.z.0;
    let text = text.trim();
    if text.is_empty() || text == "mean" {
        return Ok(base);
    }
    for tok in text.split(',') {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("state token {tok:?} is not key=value")))?;
        let (k, v) = (k.trim(), v.trim());
        let x: f64 = v
            .parse()
            .ok()
            .filter(|x: &f64| x.is_finite())
            .ok_or_else(|| CliError::usage(format!("state value {v:?} for {k} is not a number")))?;
        match k {
            "az" => th[0] = x.to_radians(),
            "el" => th[1] = x.to_radians(),
            "ip" => th[2] = x.to_radians(),
            "tx" => t[0] = x,
            "ty" => t[1] = x,
            "scale" => t[2] = x,
            _ => {
                let i = k
                    .strip_prefix('z')
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|i| *i < LATENT_DIM)
                    .ok_or_else(|| CliError::usage(format!("unknown state key {k:?}")))?;
                z[i] = x;
            }
        }
    }
    Ok(PoseState::new(EulerPose::from_array(th), Translation::from_array(t), LatentCode::new(z)))
}

fn learned_steps_for(cfg: &RunConfig, kind: PolicyKind) -> usize {
    match kind.base() {
        PolicyKind::Rl => cfg.sac.steps_per_episode,
        _ => cfg.il.inference_steps,
    }
}

fn load_policy(kind: PolicyKind, model: &Path) -> CliResult<NetPolicy> {
    if !model.is_file() {
        return Err(CliError::usage(format!("model not found: {}", model.display())));
    }
    Ok(NetPolicy::new(PolicyNet::load(model)?, kind.base().name()))
}

/// The evaluation method for `kind`, loading weights from `model` for
/// learned kinds.
pub fn build_method(cfg: &RunConfig, kind: PolicyKind, model: Option<&Path>, steps: usize) -> CliResult<Method> {
    if let Some(starts) = kind.gd_starts() {
        return Ok(Method::Gd {
            starts,
            cfg: cfg.gd.clone(),
        });
    }
    let model = model.ok_or_else(|| CliError::usage(format!("policy {} needs a model file", kind.name())))?;
    let policy = load_policy(kind, model)?;
    Ok(if kind.is_hybrid() {
        Method::Hybrid {
            policy,
            il_steps: steps,
            gd_steps: cfg.eval.hybrid_gd_steps,
            cfg: cfg.gd.clone(),
        }
    } else {
        Method::Learned { policy, steps }
    })
}

pub fn cmd_train(cfg: &RunConfig, command: &str) -> CliResult {
    let kind = cfg.policy.base();
    if kind.gd_starts().is_some() {
        return Err(CliError::usage(format!("policy {} has nothing to train", cfg.policy.name())));
    }
    let out = prepare_out(cfg)?;
    let spec = cfg.spec();
    let net = match kind {
        PolicyKind::Rl => {
            let (net, log) = train_rl(&spec, &cfg.sac, cfg.seed)?;
            write_training_log(&out.join(TRAIN_LOG_FILE), &log)?;
            net
        }
        _ => {
            let il = IlConfig {
                dagger_rounds: if kind == PolicyKind::Bc { 0 } else { cfg.il.dagger_rounds },
                ..cfg.il.clone()
            };
            let res = train_il(&spec, &il, cfg.seed)?;
            write_il_log(&out.join(TRAIN_LOG_FILE), &res.log)?;
            res.net
        }
    };
    net.save(&out.join(MODEL_FILE))?;
    write_manifest(cfg, command)
}

fn robustness_grid() -> posenav::Result<Vec<Disturbance>> {
    use DisturbanceKind::*;
    [
        (Occlusion, 0.0),
        (Brightness, 0.5),
        (Brightness, 1.5),
        (Occlusion, 0.1),
        (Occlusion, 0.2),
        (Occlusion, 0.3),
        (Shift, 0.05),
        (Shift, 0.1),
    ]
    .into_iter()
    .map(|(k, m)| Disturbance::new(k, m))
    .collect()
}

/// Group reports by `(policy, condition)` in first-seen order and aggregate
/// each group over seeds.
fn aggregate_reports(reports: &[EvalReport]) -> Vec<ReportRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        let k = (r.policy.clone(), r.condition.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.iter()
        .flat_map(|(p, c)| {
            let group: Vec<EvalReport> =
                reports.iter().filter(|r| &r.policy == p && &r.condition == c).cloned().collect();
            ReportRow::from_reports(&group)
        })
        .collect()
}

/// Runs `suite` and writes `report.csv`. `target` is a built-in GD policy
/// name or a model path interpreted with `cfg.policy`.
pub fn cmd_eval(cfg: &RunConfig, target: Option<&str>, suite: Suite, command: &str) -> CliResult {
    let spec = cfg.spec();
    let th = Thresholds::default();
    let (kind, model) = match target {
        Some(t) => match PolicyKind::parse(t) {
            Ok(k) if k.gd_starts().is_some() => (k, None),
            Ok(k) => return Err(CliError::usage(format!("policy {} needs a model path", k.name()))),
            Err(_) => (cfg.policy, Some(PathBuf::from(t))),
        },
        None => (cfg.policy, None),
    };
    let needs_method = !matches!(suite, Suite::Timing | Suite::Ablation);
    let method = if needs_method || model.is_some() || kind.gd_starts().is_some() {
        Some(build_method(cfg, kind, model.as_deref(), learned_steps_for(cfg, kind))?)
    } else {
        None
    };
    let out = prepare_out(cfg)?;
    let seeds = &cfg.eval.seeds;
    let rows: Vec<ReportRow> = match suite {
        Suite::Clean => {
            let m = method.expect("clean suite has a method");
            let mut reports = Vec::new();
            for &seed in seeds {
                let eps = make_episodes(&spec, cfg.eval.episodes, seed);
                let res = evaluate(&m, &spec, &eps, cfg.threads)?;
                reports.push(EvalReport::new(m.name(), "clean", seed, res, &th)?);
            }
            aggregate_reports(&reports)
        }
        Suite::Sweep => {
            let m = method.expect("sweep suite has a method");
            let per_seed = seeds
                .iter()
                .map(|&s| init_sweep(&m, &spec, cfg.eval.episodes_per_angle, s, cfg.threads))
                .collect::<posenav::Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            for k in 0..SWEEP_BINS {
                let cond = format!("az_offset={}", per_seed[0][k].angle_deg);
                let col = |f: fn(&posenav::eval::SweepBin) -> f64| per_seed.iter().map(|b| f(&b[k])).collect::<Vec<_>>();
                rows.push(ReportRow::aggregate(&m.name(), &cond, "ap_rot@10", &col(|b| b.ap10)));
                rows.push(ReportRow::aggregate(&m.name(), &cond, "ap_rot@30", &col(|b| b.ap30)));
                rows.push(ReportRow::aggregate(&m.name(), &cond, "median_rot_deg", &col(|b| b.median_rot_deg)));
            }
            rows
        }
        Suite::Robustness => {
            let m = method.expect("robustness suite has a method");
            let grid = robustness_grid()?;
            let mut reports = Vec::new();
            for &seed in seeds {
                reports.extend(robustness_suite(
                    std::slice::from_ref(&m),
                    &spec,
                    &grid,
                    cfg.eval.episodes,
                    seed,
                    cfg.threads,
                    &th,
                )?);
            }
            aggregate_reports(&reports)
        }
        Suite::Timing => {
            let mut methods: Vec<Method> = [1, 16, 32]
                .into_iter()
                .map(|starts| Method::Gd {
                    starts,
                    cfg: cfg.gd.clone(),
                })
                .collect();
            if let (Some(m), None) = (method, kind.gd_starts()) {
                methods.push(match m {
                    Method::Learned { policy, .. } if kind.base() != PolicyKind::Bc => Method::Learned {
                        policy,
                        steps: cfg.eval.learned_steps,
                    },
                    Method::Hybrid { policy, gd_steps, cfg, .. } => Method::Hybrid {
                        policy,
                        il_steps: 10,
                        gd_steps,
                        cfg,
                    },
                    other => other,
                });
            }
            timing_suite(&methods, &spec, cfg.eval.timing_images, cfg.seed)?
                .into_iter()
                .map(|(name, secs)| ReportRow::aggregate(&name, "timing", "seconds_per_image", &[secs]))
                .collect()
        }
        Suite::Ablation => ablation_rows(cfg, &spec, &th)?,
    };
    write_report(&out.join(REPORT_FILE), &rows)?;
    write_manifest(cfg, command)
}

/// BC vs DAgger at one and `learned_steps` steps, and BC with and without
/// the latent loss term, each trained per seed from `cfg.il`.
fn ablation_rows(cfg: &RunConfig, spec: &GeneratorSpec, th: &Thresholds) -> CliResult<Vec<ReportRow>> {
    let multi = cfg.eval.learned_steps;
    let mut reports = Vec::new();
    for &seed in &cfg.eval.seeds {
        let bc_cfg = IlConfig {
            dagger_rounds: 0,
            ..cfg.il.clone()
        };
        let bc = train_il(spec, &bc_cfg, seed)?.net;
        let bc_nolat = train_il(
            spec,
            &IlConfig {
                use_latent_loss: false,
                ..bc_cfg.clone()
            },
            seed,
        )?
        .net;
        let da = train_il(spec, &cfg.il, seed)?.net;
        let eps = make_episodes(spec, cfg.eval.episodes, seed.wrapping_add(0x5eed));
        let runs = [
            (NetPolicy::new(bc.clone(), "bc"), 1, "steps=1"),
            (NetPolicy::new(bc, "bc"), multi, "steps=multi"),
            (NetPolicy::new(da.clone(), "dagger"), 1, "steps=1"),
            (NetPolicy::new(da, "dagger"), multi, "steps=multi"),
            (NetPolicy::new(bc_nolat, "bc_no_latent"), 1, "steps=1"),
        ];
        for (policy, steps, cond) in runs {
            let m = Method::Learned { policy, steps };
            let res = evaluate(&m, spec, &eps, cfg.threads)?;
            reports.push(EvalReport::new(m.name(), cond, seed, res, th)?);
        }
    }
    Ok(aggregate_reports(&reports))
}

/// Writes `target.ppm` for `state`; with a policy, also `frame_000.ppm` ..
/// `frame_T.ppm` of a rollout from the mean pose toward it.
pub fn cmd_render(
    cfg: &RunConfig,
    state: &str,
    policy: Option<PolicyKind>,
    model: Option<&Path>,
    steps: Option<usize>,
    command: &str,
) -> CliResult {
    let spec = cfg.spec();
    let goal = parse_state(&spec, state)?;
    let out = prepare_out(cfg)?;
    let target = spec.render(&goal);
    target.write_ppm(&out.join("target.ppm"))?;
    if let Some(kind) = policy {
        let t = steps.unwrap_or(match kind.gd_starts() {
            Some(_) => cfg.gd.steps,
            None => learned_steps_for(cfg, kind),
        });
        if t == 0 {
            return Err(CliError::usage("--steps must be >= 1"));
        }
        let s0 = spec.mean_pose();
        let traj = match kind.gd_starts() {
            Some(_) => rollout(&GdPolicy::new(cfg.gd.clone()), &spec, &s0, &target, &EpisodeConfig::new(t)?)?,
            None => {
                let model = model.ok_or_else(|| CliError::usage(format!("policy {} needs --model", kind.name())))?;
                let p = load_policy(kind, model)?;
                let gd_steps = if kind.is_hybrid() { cfg.eval.hybrid_gd_steps } else { 0 };
                hybrid_rollout(&p, &spec, &s0, &target, t, gd_steps, &cfg.gd)?
            }
        };
        for (i, s) in traj.states.iter().enumerate() {
            spec.render(s).write_ppm(&out.join(format!("frame_{i:03}.ppm")))?;
        }
    }
    write_manifest(cfg, command)
}

/// Parses `AxE` into azimuth and elevation cell counts.
pub fn parse_grid(text: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("grid {text:?} must look like 36x7 with an odd elevation count"));
    let (a, e) = text.split_once('x').ok_or_else(bad)?;
    let (a, e): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, e.trim().parse().map_err(|_| bad())?);
    if a == 0 || e == 0 || e % 2 == 0 {
        return Err(bad());
    }
    Ok((a, e))
}

/// Image loss over a grid around the target: azimuth offsets `360k/n_az`
/// degrees and elevation offsets `(j - (n_el-1)/2) · el_step` degrees, other
/// state components fixed at the target's.
pub fn landscape(spec: &GeneratorSpec, goal: &PoseState, n_az: usize, n_el: usize, el_step_deg: f64) -> posenav::Result<Vec<(f64, f64, f64)>> {
    let target = spec.render(goal);
    let loss = PerceptualLoss::for_image(&target)?;
    let th = goal.theta;
    let mut rows = Vec::with_capacity(n_az * n_el);
    for i in 0..n_az {
        let az = th.azimuth + (360.0 * i as f64 / n_az as f64).to_radians();
        for j in 0..n_el {
            let el = th.elevation + ((j as f64 - (n_el - 1) as f64 / 2.0) * el_step_deg).to_radians();
            let s = PoseState {
                theta: EulerPose::new(az, el, th.inplane),
                ..*goal
            };
            let l = loss.value(&spec.render(&s), &target)?;
            rows.push((s.theta.azimuth.to_degrees(), s.theta.elevation.to_degrees(), l));
        }
    }
    Ok(rows)
}

pub fn cmd_landscape(cfg: &RunConfig, state: &str, grid: &str, el_step_deg: f64, command: &str) -> CliResult {
    let spec = cfg.spec();
    let goal = parse_state(&spec, state)?;
    let (n_az, n_el) = parse_grid(grid)?;
    if !(el_step_deg >= 0.0 && el_step_deg.is_finite()) {
        return Err(CliError::usage("--el-step must be >= 0"));
    }
    let out = prepare_out(cfg)?;
    let rows = landscape(&spec, &goal, n_az, n_el, el_step_deg)?;
    let path = out.join(LANDSCAPE_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(posenav::Error::from)?;
    let mut write = || -> csv::Result<()> {
        w.write_record(["azimuth_deg", "elevation_deg", "loss"])?;
        for (a, e, l) in &rows {
            w.write_record([a.to_string(), e.to_string(), l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(posenav::Error::from)?;
    write_manifest(cfg, command)
}

pub fn cmd_demo_export(cfg: &RunConfig, n: Option<usize>, command: &str) -> CliResult {
    let spec = cfg.spec();
    let out = prepare_out(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let set = make_demos(&spec, &mut rng, n.unwrap_or(cfg.il.demos), cfg.il.random_starts)?;
    write_demo_set(&out, &set)?;
    write_manifest(cfg, command)
}
