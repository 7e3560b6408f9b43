//! Experiment configuration: TOML with dotted keys, e.g.
//!
//! ```toml
//! experiment.name = "forward-flatland"
//! experiment.seeds = [0, 1, 2]
//! model.variant = "forward"
//! forward.gamma = 1.0
//! ```
//!
//! Unknown keys are rejected so typos fail before any training starts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::BetaConfig;
use crate::models::{ForwardConfig, VaeConfig, Variant};
use crate::rgrvae::{ExploreSpec, RewardMode, RgrvaeConfig};
use crate::symrep::ProbeConfig;
use crate::symrep::RepKind;
use crate::worlds::{NoiseSpec, TextureSource};

/// What gets trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// A VAE-family baseline without representations.
    Vae(Variant),
    /// Action-supervised forward model.
    Forward,
    /// Unsupervised action estimation.
    Rgrvae,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Vae(v) => write!(f, "{v}"),
            Method::Forward => f.write_str("forward"),
            Method::Rgrvae => f.write_str("rgrvae"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Method::Forward),
            "rgrvae" => Ok(Method::Rgrvae),
            other => other.parse::<Variant>().map(Method::Vae).map_err(|_| {
                Error::Config(format!("unknown model variant `{other}` (expected vae, beta, cc, dip1, dip2, forward or rgrvae)"))
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// Natively generated Flatland.
    Flatland,
    /// A complete grid in the raw container format; actions move one index.
    Raw(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub noise: NoiseSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsConfig {
    /// Equal-count bins per latent dim for information metrics.
    pub bins: usize,
    pub dci_alpha: f64,
    pub beta: BetaConfig,
    /// States scored by the independence metrics.
    pub states: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { bins: 20, dci_alpha: 0.01, beta: BetaConfig::default(), states: 300 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Transitions drawn per epoch; `None` means one per world state.
    pub pairs_per_epoch: Option<usize>,
    /// Independence is tracked in the history every this many epochs.
    pub eval_every: usize,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub method: Method,
    pub vae: VaeConfig,
    /// Learning rate of baseline models.
    pub lr: f64,
    pub forward: ForwardConfig,
    pub rgrvae: RgrvaeConfig,
    pub probe: ProbeConfig,
    /// Probe samples per action.
    pub probe_pairs: usize,
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    /// Defaults for `method` on Flatland.
    pub fn new(name: &str, method: Method) -> Self {
        let variant = match method {
            Method::Vae(v) => v,
            Method::Forward => Variant::Forward,
            Method::Rgrvae => Variant::Vae,
        };
        Self {
            name: name.to_string(),
            seeds: vec![0, 1, 2],
            epochs: 100,
            batch_size: 32,
            pairs_per_epoch: None,
            eval_every: 1,
            out: PathBuf::from("runs").join(name),
            dataset: DatasetConfig { source: DatasetSource::Flatland, noise: NoiseSpec::None },
            method,
            vae: VaeConfig::new(variant, 4),
            lr: 1e-4,
            forward: ForwardConfig::default(),
            rgrvae: RgrvaeConfig::default(),
            probe: ProbeConfig::default(),
            probe_pairs: 200,
            metrics: MetricsConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Ok((text.parse()?, text))
    }

    /// Checks everything that can be checked before training.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds is empty".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("experiment.seeds must be distinct".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be positive".into()));
        }
        if self.pairs_per_epoch == Some(0) || self.probe_pairs < 2 || self.metrics.bins == 0 || self.metrics.states == 0 {
            return Err(Error::Config("pairs_per_epoch, probe.pairs, metrics.bins and metrics.states must be positive".into()));
        }
        if let DatasetSource::Raw(p) = &self.dataset.source {
            if !p.exists() {
                return Err(Error::MissingPath(p.clone()));
            }
        }
        self.dataset.noise.validate()?;
        self.vae.validate()?;
        self.rgrvae.explore.validate()?;
        if self.rgrvae.n_reps == 0 {
            return Err(Error::Config("rgrvae.n_reps must be positive".into()));
        }
        Ok(())
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut keys = Keys::default();
        flatten("", &toml::Value::Table(table), &mut keys.values);

        let name = keys.string("experiment.name")?.unwrap_or_else(|| "experiment".into());
        let method = match keys.string("model.variant")? {
            Some(v) => v.parse()?,
            None => Method::Forward,
        };
        let mut c = Self::new(&name, method);
        if let Some(seeds) = keys.int_list("experiment.seeds")? {
            c.seeds = seeds;
        }
        keys.usize("experiment.epochs", &mut c.epochs)?;
        keys.usize("experiment.batch_size", &mut c.batch_size)?;
        if let Some(n) = keys.int("experiment.pairs_per_epoch")? {
            c.pairs_per_epoch = Some(n as usize);
        }
        keys.usize("experiment.eval_every", &mut c.eval_every)?;
        if let Some(out) = keys.string("experiment.out")? {
            c.out = PathBuf::from(out);
        }

        if let Some(source) = keys.string("dataset.source")? {
            c.dataset.source = match source.as_str() {
                "flatland" => DatasetSource::Flatland,
                "raw" => DatasetSource::Raw(PathBuf::from(
                    keys.string("dataset.path")?.ok_or_else(|| Error::Config("dataset.source = \"raw\" needs dataset.path".into()))?,
                )),
                other => return Err(Error::Config(format!("unknown dataset.source `{other}` (expected flatland or raw)"))),
            };
        }
        let mut sigma = 0.1;
        let mut p = 0.05;
        keys.float("dataset.sigma", &mut sigma)?;
        keys.float("dataset.p", &mut p)?;
        let texture_dir = keys.string("dataset.texture_dir")?;
        let mut texture_seed = 0usize;
        keys.usize("dataset.texture_seed", &mut texture_seed)?;
        if let Some(noise) = keys.string("dataset.noise")? {
            c.dataset.noise = parse_noise(&noise, sigma, p, texture_dir, texture_seed as u64)?;
        }

        keys.usize("model.latent_dim", &mut c.vae.latent_dim)?;
        keys.usize("model.channels", &mut c.vae.channels)?;
        keys.float("model.beta", &mut c.vae.beta)?;
        keys.float("model.capacity_max", &mut c.vae.capacity_max)?;
        let mut steps = c.vae.capacity_steps as usize;
        keys.usize("model.capacity_steps", &mut steps)?;
        c.vae.capacity_steps = steps as u64;
        keys.float("model.dip_lambda_od", &mut c.vae.dip_lambda_od)?;
        keys.float("model.dip_lambda_d", &mut c.vae.dip_lambda_d)?;
        keys.float("model.lr", &mut c.lr)?;

        keys.float("forward.gamma", &mut c.forward.gamma)?;
        keys.float("forward.identity_decay", &mut c.forward.identity_decay)?;
        keys.float("forward.lr_vae", &mut c.forward.lr_vae)?;
        keys.float("forward.lr_reps", &mut c.forward.lr_reps)?;
        keys.bool("forward.pixel_prediction", &mut c.forward.pixel_prediction)?;
        if let Some(kind) = keys.string("forward.rep_kind")? {
            c.forward.rep_kind = parse_rep_kind(&kind)?;
        }

        keys.usize("rgrvae.n_reps", &mut c.rgrvae.n_reps)?;
        let mut epsilon = 0.1;
        let mut decay = 0.999;
        let mut weight = 0.01;
        keys.float("rgrvae.epsilon", &mut epsilon)?;
        keys.float("rgrvae.epsilon_decay", &mut decay)?;
        keys.float("rgrvae.entropy_weight", &mut weight)?;
        c.rgrvae.explore = match keys.string("rgrvae.explore")?.as_deref() {
            None | Some("eps") => ExploreSpec::EpsGreedy { epsilon, decay },
            Some("entropy") => ExploreSpec::Entropy { weight },
            Some(other) => return Err(Error::Config(format!("unknown rgrvae.explore `{other}` (expected eps or entropy)"))),
        };
        if let Some(mode) = keys.string("rgrvae.reward_mode")? {
            c.rgrvae.reward_mode = mode.parse::<RewardMode>()?;
        }
        keys.float("rgrvae.gamma", &mut c.rgrvae.gamma)?;
        keys.float("rgrvae.lr_vae", &mut c.rgrvae.lr_vae)?;
        keys.float("rgrvae.lr_policy", &mut c.rgrvae.lr_policy)?;
        keys.float("rgrvae.lr_reps", &mut c.rgrvae.lr_reps)?;
        keys.float("rgrvae.identity_decay", &mut c.rgrvae.identity_decay)?;
        keys.usize("rgrvae.policy_channels", &mut c.rgrvae.policy_channels)?;
        keys.bool("rgrvae.pixel_prediction", &mut c.rgrvae.pixel_prediction)?;

        keys.usize("probe.iters", &mut c.probe.iters)?;
        keys.float("probe.lr", &mut c.probe.lr)?;
        keys.float("probe.basis_penalty", &mut c.probe.basis_penalty)?;
        keys.usize("probe.restarts", &mut c.probe.restarts)?;
        keys.usize("probe.pairs", &mut c.probe_pairs)?;

        keys.usize("metrics.bins", &mut c.metrics.bins)?;
        keys.float("metrics.dci_alpha", &mut c.metrics.dci_alpha)?;
        keys.usize("metrics.states", &mut c.metrics.states)?;
        keys.usize("metrics.beta_train_votes", &mut c.metrics.beta.train_votes)?;
        keys.usize("metrics.beta_test_votes", &mut c.metrics.beta.test_votes)?;
        keys.usize("metrics.beta_batch", &mut c.metrics.beta.batch)?;

        keys.finish()?;
        c.validate()?;
        Ok(c)
    }
}

pub fn parse_noise(kind: &str, sigma: f64, p: f64, texture_dir: Option<String>, texture_seed: u64) -> Result<NoiseSpec> {
    let spec = match kind {
        "none" => NoiseSpec::None,
        "gaussian" => NoiseSpec::Gaussian { sigma },
        "salt" | "salt_pepper" => NoiseSpec::SaltPepper { p },
        "background" => NoiseSpec::Background {
            source: match texture_dir {
                Some(dir) => TextureSource::Directory(PathBuf::from(dir)),
                None => TextureSource::Procedural { seed: texture_seed },
            },
        },
        other => return Err(Error::Config(format!("unknown noise `{other}` (expected none, gaussian, salt or background)"))),
    };
    spec.validate()?;
    Ok(spec)
}

fn parse_rep_kind(s: &str) -> Result<RepKind> {
    match s {
        "cyclic" => Ok(RepKind::Cyclic),
        "generic" => Ok(RepKind::Generic),
        other => Err(Error::Config(format!("unknown rep_kind `{other}` (expected cyclic or generic)"))),
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Dotted keys consumed one at a time; whatever is left over is an error.
#[derive(Default)]
struct Keys {
    values: BTreeMap<String, toml::Value>,
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<toml::Value> {
        self.values.remove(key)
    }

    fn wrong(key: &str, expected: &str, v: &toml::Value) -> Error {
        Error::Config(format!("{key}: expected {expected}, got `{v}`"))
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(Self::wrong(key, "a string", &v)),
        }
    }

    fn int(&mut self, key: &str) -> Result<Option<i64>> {
        match self.take(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if i >= 0 => Ok(Some(i)),
            Some(v) => Err(Self::wrong(key, "a non-negative integer", &v)),
        }
    }

    fn usize(&mut self, key: &str, slot: &mut usize) -> Result<()> {
        if let Some(i) = self.int(key)? {
            *slot = i as usize;
        }
        Ok(())
    }

    fn float(&mut self, key: &str, slot: &mut f64) -> Result<()> {
        match self.take(key) {
            None => {}
            Some(toml::Value::Float(f)) => *slot = f,
            Some(toml::Value::Integer(i)) => *slot = i as f64,
            Some(v) => return Err(Self::wrong(key, "a number", &v)),
        }
        Ok(())
    }

    fn bool(&mut self, key: &str, slot: &mut bool) -> Result<()> {
        match self.take(key) {
            None => {}
            Some(toml::Value::Boolean(b)) => *slot = b,
            Some(v) => return Err(Self::wrong(key, "true or false", &v)),
        }
        Ok(())
    }

    fn int_list(&mut self, key: &str) -> Result<Option<Vec<u64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(toml::Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                    other => Err(Self::wrong(key, "a list of non-negative integers", other)),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(Self::wrong(key, "a list", &v)),
        }
    }

    fn finish(self) -> Result<()> {
        match self.values.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown key `{k}`"))),
            None => Ok(()),
        }
    }
}
