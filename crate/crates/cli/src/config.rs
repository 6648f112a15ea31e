//! INI run configuration.
//!
//! Every key is optional; omitted keys take the defaults below and unknown
//! sections or keys are rejected. The resolved configuration is written back
//! verbatim into each run's manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use posenav::generator::{Category, GeneratorSpec};
use posenav::il::IlConfig;
use posenav::policy::GdConfig;
use posenav::rl::{LossWeights, SacConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Gd,
    Gd16,
    Gd32,
    Rl,
    Bc,
    Dagger,
    RlGd,
    DaggerGd,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Gd,
        PolicyKind::Gd16,
        PolicyKind::Gd32,
        PolicyKind::Rl,
        PolicyKind::Bc,
        PolicyKind::Dagger,
        PolicyKind::RlGd,
        PolicyKind::DaggerGd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Gd => "gd",
            PolicyKind::Gd16 => "gd16",
            PolicyKind::Gd32 => "gd32",
            PolicyKind::Rl => "rl",
            PolicyKind::Bc => "bc",
            PolicyKind::Dagger => "dagger",
            PolicyKind::RlGd => "rl+gd",
            PolicyKind::DaggerGd => "dagger+gd",
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }

    /// Number of GD starts for the parameter-free kinds.
    pub fn gd_starts(self) -> Option<usize> {
        match self {
            PolicyKind::Gd => Some(1),
            PolicyKind::Gd16 => Some(16),
            PolicyKind::Gd32 => Some(32),
            _ => None,
        }
    }

    /// The trainable policy underlying a learned or hybrid kind.
    pub fn base(self) -> Self {
        match self {
            PolicyKind::RlGd => PolicyKind::Rl,
            PolicyKind::DaggerGd => PolicyKind::Dagger,
            k => k,
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, PolicyKind::RlGd | PolicyKind::DaggerGd)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    /// Held-out episodes per seed for the clean and robustness suites.
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub episodes_per_angle: usize,
    pub timing_images: usize,
    /// Steps for multi-step learned policies.
    pub learned_steps: usize,
    /// GD refinement steps of hybrid policies.
    pub hybrid_gd_steps: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: 200,
            seeds: (0..10).collect(),
            episodes_per_angle: 50,
            timing_images: 13,
            learned_steps: 10,
            hybrid_gd_steps: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub category: Category,
    pub seed: u64,
    pub policy: PolicyKind,
    pub out: PathBuf,
    /// Square render size; must be a multiple of 16.
    pub resolution: usize,
    pub threads: usize,
    pub weights: LossWeights,
    pub gd: GdConfig,
    pub sac: SacConfig,
    pub il: IlConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            category: Category::Laptop,
            seed: 0,
            policy: PolicyKind::Gd,
            out: PathBuf::from("out"),
            resolution: posenav::generator::DEFAULT_RESOLUTION,
            threads: 1,
            weights: LossWeights::default(),
            gd: GdConfig::default(),
            sac: SacConfig::default(),
            il: IlConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

#[derive(Debug, PartialEq)]
pub enum ConfigError {
    Missing(PathBuf),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Missing(p) => write!(f, "config file not found: {}", p.display()),
            ConfigError::Invalid(m) => f.write_str(m),
        }
    }
}

type Section = BTreeMap<String, String>;

struct Reader<'a> {
    name: &'a str,
    keys: Section,
}

impl Reader<'_> {
    fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.keys.remove(key) {
            *slot = v
                .parse()
                .map_err(|e| ConfigError::Invalid(format!("[{}] {key} = {v:?}: {e}", self.name)))?;
        }
        Ok(())
    }

    fn take_with<T>(&mut self, key: &str, slot: &mut T, f: impl Fn(&str) -> Result<T, String>) -> Result<(), ConfigError> {
        if let Some(v) = self.keys.remove(key) {
            *slot = f(&v).map_err(|e| ConfigError::Invalid(format!("[{}] {key}: {e}", self.name)))?;
        }
        Ok(())
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.keys.keys().next() {
            Some(k) => Err(ConfigError::Invalid(format!("unknown key {k:?} in section [{}]", self.name))),
            None => Ok(()),
        }
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if seeds.is_empty() {
        return Err("empty seed list".into());
    }
    Ok(seeds)
}

const SECTIONS: [&str; 6] = ["run", "loss", "gd", "sac", "il", "eval"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|_| ConfigError::Missing(path.to_path_buf()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        let mut current = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) || name.is_empty() {
                    return Err(ConfigError::Invalid(format!("unknown section [{name}]")));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Invalid(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if current.is_empty() {
                return Err(ConfigError::Invalid(format!("key {k:?} outside any section")));
            }
            let sec = sections.entry(current.clone()).or_default();
            if sec.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Invalid(format!("duplicate key {k:?} in [{current}]")));
            }
        }
        let mut reader = |name: &'static str| Reader {
            name,
            keys: sections.remove(name).unwrap_or_default(),
        };
        let mut c = RunConfig::default();

        let mut r = reader("run");
        r.take_with("category", &mut c.category, |v| Category::parse(v).map_err(|e| e.to_string()))?;
        r.take("seed", &mut c.seed)?;
        r.take_with("policy", &mut c.policy, PolicyKind::parse)?;
        r.take("out", &mut c.out)?;
        r.take("resolution", &mut c.resolution)?;
        r.take("threads", &mut c.threads)?;
        r.finish()?;

        let mut r = reader("loss");
        r.take("lambda1", &mut c.weights.lambda1)?;
        r.take("lambda2", &mut c.weights.lambda2)?;
        r.take("lambda3", &mut c.weights.lambda3)?;
        r.finish()?;

        let mut r = reader("gd");
        r.take("lr", &mut c.gd.lr)?;
        r.take("steps", &mut c.gd.steps)?;
        r.take("beta1", &mut c.gd.beta1)?;
        r.take("beta2", &mut c.gd.beta2)?;
        r.take("eps", &mut c.gd.eps)?;
        r.finish()?;

        let s = &mut c.sac;
        let mut r = reader("sac");
        r.take("gamma", &mut s.gamma)?;
        r.take("tau", &mut s.tau)?;
        r.take("batch", &mut s.batch)?;
        r.take("actor_lr", &mut s.actor_lr)?;
        r.take("critic_lr", &mut s.critic_lr)?;
        r.take("alpha_lr", &mut s.alpha_lr)?;
        r.take("init_alpha", &mut s.init_alpha)?;
        r.take("target_entropy", &mut s.target_entropy)?;
        r.take("steps_per_episode", &mut s.steps_per_episode)?;
        r.take("episodes", &mut s.episodes)?;
        r.take("capacity", &mut s.capacity)?;
        r.take("relabel", &mut s.relabel)?;
        r.take("failure_deg", &mut s.failure_deg)?;
        r.take("expert_inject_every", &mut s.expert_inject_every)?;
        r.take("expert_inject_count", &mut s.expert_inject_count)?;
        r.take("updates_per_step", &mut s.updates_per_step)?;
        r.take("eval_every", &mut s.eval_every)?;
        r.take("eval_episodes", &mut s.eval_episodes)?;
        r.finish()?;

        let il = &mut c.il;
        let mut r = reader("il");
        r.take("demos", &mut il.demos)?;
        r.take("epochs", &mut il.epochs)?;
        r.take("round_epochs", &mut il.round_epochs)?;
        r.take("batch", &mut il.batch)?;
        r.take("lr", &mut il.lr)?;
        r.take("dagger_rounds", &mut il.dagger_rounds)?;
        r.take("rollouts_per_round", &mut il.rollouts_per_round)?;
        r.take("rollout_steps", &mut il.rollout_steps)?;
        r.take("inference_steps", &mut il.inference_steps)?;
        r.take("use_latent_loss", &mut il.use_latent_loss)?;
        r.take("from_scratch", &mut il.from_scratch)?;
        r.take("random_starts", &mut il.random_starts)?;
        r.finish()?;

        let e = &mut c.eval;
        let mut r = reader("eval");
        r.take("episodes", &mut e.episodes)?;
        r.take_with("seeds", &mut e.seeds, parse_seeds)?;
        r.take("episodes_per_angle", &mut e.episodes_per_angle)?;
        r.take("timing_images", &mut e.timing_images)?;
        r.take("learned_steps", &mut e.learned_steps)?;
        r.take("hybrid_gd_steps", &mut e.hybrid_gd_steps)?;
        r.finish()?;

        c.sac.weights = c.weights;
        c.il.weights = c.weights;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: posenav::Error| ConfigError::Invalid(e.to_string());
        self.spec().validate().map_err(inv)?;
        if self.resolution == 0 || !self.resolution.is_multiple_of(16) {
            return Err(ConfigError::Invalid(format!(
                "[run] resolution must be a positive multiple of 16, got {}",
                self.resolution
            )));
        }
        if self.threads == 0 {
            return Err(ConfigError::Invalid("[run] threads must be >= 1".into()));
        }
        self.gd.validate().map_err(inv)?;
        self.sac.validate().map_err(inv)?;
        self.il.validate().map_err(inv)?;
        let e = &self.eval;
        if e.episodes == 0 || e.episodes_per_angle == 0 || e.learned_steps == 0 {
            return Err(ConfigError::Invalid("[eval] episode and step counts must be >= 1".into()));
        }
        if e.timing_images < 10 {
            return Err(ConfigError::Invalid("[eval] timing_images must be >= 10".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> GeneratorSpec {
        GeneratorSpec::new(self.category).with_resolution(self.resolution, self.resolution)
    }

    /// The resolved configuration in the same INI layout it is read from.
    pub fn to_ini(&self) -> String {
        let mut o = String::new();
        let (s, il, e, w) = (&self.sac, &self.il, &self.eval, &self.weights);
        let seeds: Vec<String> = e.seeds.iter().map(|v| v.to_string()).collect();
        let _ = write!(
            o,
            "[run]\ncategory = {}\nseed = {}\npolicy = {}\nout = {}\nresolution = {}\nthreads = {}\n\n",
            self.category,
            self.seed,
            self.policy.name(),
            self.out.display(),
            self.resolution,
            self.threads
        );
        let _ = write!(o, "[loss]\nlambda1 = {}\nlambda2 = {}\nlambda3 = {}\n\n", w.lambda1, w.lambda2, w.lambda3);
        let g = &self.gd;
        let _ = write!(
            o,
            "[gd]\nlr = {}\nsteps = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\n\n",
            g.lr, g.steps, g.beta1, g.beta2, g.eps
        );
        let _ = write!(
            o,
            "[sac]\ngamma = {}\ntau = {}\nbatch = {}\nactor_lr = {}\ncritic_lr = {}\nalpha_lr = {}\ninit_alpha = {}\n\
             target_entropy = {}\nsteps_per_episode = {}\nepisodes = {}\ncapacity = {}\nrelabel = {}\nfailure_deg = {}\n\
             expert_inject_every = {}\nexpert_inject_count = {}\nupdates_per_step = {}\neval_every = {}\neval_episodes = {}\n\n",
            s.gamma,
            s.tau,
            s.batch,
            s.actor_lr,
            s.critic_lr,
            s.alpha_lr,
            s.init_alpha,
            s.target_entropy,
            s.steps_per_episode,
            s.episodes,
            s.capacity,
            s.relabel,
            s.failure_deg,
            s.expert_inject_every,
            s.expert_inject_count,
            s.updates_per_step,
            s.eval_every,
            s.eval_episodes
        );
        let _ = write!(
            o,
            "[il]\ndemos = {}\nepochs = {}\nround_epochs = {}\nbatch = {}\nlr = {}\ndagger_rounds = {}\n\
             rollouts_per_round = {}\nrollout_steps = {}\ninference_steps = {}\nuse_latent_loss = {}\n\
             from_scratch = {}\nrandom_starts = {}\n\n",
            il.demos,
            il.epochs,
            il.round_epochs,
            il.batch,
            il.lr,
            il.dagger_rounds,
            il.rollouts_per_round,
            il.rollout_steps,
            il.inference_steps,
            il.use_latent_loss,
            il.from_scratch,
            il.random_starts
        );
        let _ = write!(
            o,
            "[eval]\nepisodes = {}\nseeds = {}\nepisodes_per_angle = {}\ntiming_images = {}\nlearned_steps = {}\nhybrid_gd_steps = {}\n",
            e.episodes,
            seeds.join(","),
            e.episodes_per_angle,
            e.timing_images,
            e.learned_steps,
            e.hybrid_gd_steps
        );
        o
    }
}
