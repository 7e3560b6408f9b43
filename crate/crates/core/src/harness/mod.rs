//! Experiment orchestration: environments, training sessions, evaluation and
//! run artifacts.

mod config;
mod report;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symlin_numgrad::{read_checkpoint, write_checkpoint, Tensor};

use crate::error::{Error, Result};
use crate::metrics::{
    beta_metric, dci_disentanglement, factor_leakage, independence_score, mig, modularity, mutual_info_table, sap,
    tau_threshold,
};
use crate::models::{ForwardVae, StepLosses, VaeNet, VaeTrainer};
use crate::rgrvae::Rgrvae;
use crate::symrep::{probe_fit, ProbePair, ProbeReport};
use crate::symrep::{extract_angle, ActionRepresentation, RepSet, SymmetryStructure};
use crate::worlds::{sample_transition, ActionLabel, Flatland, Image, Noise, RawDataset, Transition, World};

pub use config::{parse_noise, DatasetConfig, DatasetSource, ExperimentConfig, Method, MetricsConfig};
pub use report::{
    aggregate, correlation_table, latent_traversal, read_metrics_csv, traversal_grid, write_aggregate_csv, write_correlation_csv,
    write_history_csv, write_metrics_csv, write_probe_csv, write_report_csv, AggregateRow, RunRow,
};

/// Level of the epochs-to-threshold statistic.
pub const TAU_LEVEL: f64 = 0.95;

/// A world selected by configuration.
#[derive(Clone, Debug)]
pub enum Env {
    Flatland(Flatland),
    Raw(RawDataset),
}

impl Env {
    pub fn from_config(config: &DatasetConfig) -> Result<Self> {
        match &config.source {
            DatasetSource::Flatland => Ok(Env::Flatland(Flatland)),
            DatasetSource::Raw(path) => {
                let data = crate::worlds::load_raw_dataset(path)?;
                if !data.is_complete() {
                    return Err(Error::Config(format!("{} is not a complete factor grid", path.display())));
                }
                Ok(Env::Raw(data))
            }
        }
    }

    /// One cyclic group per factor, each on its own latent plane.
    pub fn structure(&self) -> SymmetryStructure {
        match self {
            Env::Flatland(_) => SymmetryStructure::flatland(),
            Env::Raw(d) => SymmetryStructure::cyclic_planes(d.factor_sizes.iter().map(|&n| n as f64).collect()),
        }
    }
}

impl World for Env {
    fn factor_sizes(&self) -> &[usize] {
        match self {
            Env::Flatland(w) => w.factor_sizes(),
            Env::Raw(w) => w.factor_sizes(),
        }
    }

    fn render(&self, factors: &[usize]) -> Result<Image> {
        match self {
            Env::Flatland(w) => w.render(factors),
            Env::Raw(w) => w.render(factors),
        }
    }

    fn step(&self, factors: &[usize], action: ActionLabel) -> Result<Vec<usize>> {
        match self {
            Env::Flatland(w) => w.step(factors, action),
            Env::Raw(w) => w.step(factors, action),
        }
    }
}

/// The trainable model of an experiment.
#[derive(Clone, Debug)]
pub enum Model {
    Vae(VaeTrainer<f32>),
    Forward(ForwardVae<f32>),
    Rgrvae(Rgrvae<f32>),
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: &ExperimentConfig, num_actions: usize, rng: &mut R) -> Result<Self> {
        match config.method {
            crate::harness::Method::Vae(_) => Ok(Model::Vae(VaeTrainer::new(config.vae.clone(), config.lr, rng)?)),
            crate::harness::Method::Forward => {
                Ok(Model::Forward(ForwardVae::new(config.vae.clone(), num_actions, config.forward.clone(), rng)?))
            }
            crate::harness::Method::Rgrvae => Ok(Model::Rgrvae(Rgrvae::new(config.vae.clone(), config.rgrvae.clone(), rng)?)),
        }
    }

    pub fn vae(&self) -> &VaeNet<f32> {
        match self {
            Model::Vae(m) => &m.vae,
            Model::Forward(m) => &m.vae,
            Model::Rgrvae(m) => &m.vae,
        }
    }

    pub fn reps(&self) -> Option<&RepSet<f32>> {
        match self {
            Model::Vae(_) => None,
            Model::Forward(m) => Some(&m.reps),
            Model::Rgrvae(m) => Some(&m.reps),
        }
    }

    fn needs_labels(&self) -> bool {
        matches!(self, Model::Forward(_))
    }

    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[Transition], rng: &mut R) -> Result<StepLosses> {
        match self {
            Model::Vae(m) => m.train_step(&batch.iter().map(|t| &t.x_pre).collect::<Vec<_>>(), rng),
            Model::Forward(m) => m.train_step(batch, rng),
            Model::Rgrvae(m) => m.train_step(batch, rng),
        }
    }

    pub fn end_epoch(&mut self) {
        if let Model::Rgrvae(m) = self {
            m.end_epoch();
        }
    }

    /// All parameters, prefixed by the store they belong to.
    pub fn named_values(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = prefixed("vae", &self.vae().store);
        if let Some(reps) = self.reps() {
            out.extend(prefixed("reps", &reps.store));
        }
        if let Model::Rgrvae(m) = self {
            out.extend(prefixed("policy", &m.policy.store));
        }
        out
    }

    pub fn load_named(&mut self, named: &[(String, Tensor<f32>)]) -> Result<()> {
        let part = |prefix: &str| -> Vec<(String, Tensor<f32>)> {
            let p = format!("{prefix}/");
            named.iter().filter_map(|(n, t)| n.strip_prefix(&p).map(|s| (s.to_string(), t.clone()))).collect()
        };
        match self {
            Model::Vae(m) => m.vae.store.load_named(&part("vae"))?,
            Model::Forward(m) => {
                m.vae.store.load_named(&part("vae"))?;
                m.reps.store.load_named(&part("reps"))?;
            }
            Model::Rgrvae(m) => {
                m.vae.store.load_named(&part("vae"))?;
                m.reps.store.load_named(&part("reps"))?;
                m.policy.store.load_named(&part("policy"))?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(f, &self.named_values())?;
        Ok(())
    }

    /// Rebuilds the configured model and overwrites it from a checkpoint.
    pub fn load(config: &ExperimentConfig, num_actions: usize, path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let mut model = Self::new(config, num_actions, &mut ChaCha8Rng::seed_from_u64(0))?;
        let named = read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))?;
        model.load_named(&named)?;
        Ok(model)
    }
}

fn prefixed(prefix: &str, store: &symlin_numgrad::ParamStore<f32>) -> Vec<(String, Tensor<f32>)> {
    store.named_values().into_iter().map(|(n, t)| (format!("{prefix}/{n}"), t)).collect()
}

/// Mean loss terms of one epoch and the tracked independence values.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub terms: Vec<(&'static str, f64)>,
    pub independence: Option<f64>,
    /// Label-free estimate (RGrVAE only).
    pub estimated_independence: Option<f64>,
}

/// One seed of an experiment: world, noise, model and history.
pub struct Session {
    pub config: ExperimentConfig,
    pub env: Env,
    pub noise: Noise,
    pub model: Model,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    rng: ChaCha8Rng,
    tracked: Vec<Vec<usize>>,
}

impl Session {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = Env::from_config(&config.dataset)?;
        let noise = config.dataset.noise.prepare()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(config, env.num_actions(), &mut rng)?;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e7a1);
        let tracked = (0..config.metrics.states.min(200)).map(|_| env.random_state(&mut eval_rng)).collect();
        Ok(Self { config: config.clone(), env, noise, model, seed, history: Vec::new(), rng, tracked })
    }

    /// Resumes from a checkpoint with an empty history.
    pub fn with_model(mut self, model: Model) -> Self {
        self.model = model;
        self
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn train_epoch(&mut self) -> Result<&EpochRecord> {
        let n = self.config.pairs_per_epoch.unwrap_or_else(|| self.env.num_states());
        let supervised = self.model.needs_labels();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut t = sample_transition(&self.env, &mut self.rng, 1, supervised)?.transition;
            let (a, b) = self.noise.apply_pair(&t.x_pre, &t.x_post, &mut self.rng);
            t.x_pre = a;
            t.x_post = b;
            data.push(t);
        }
        data.shuffle(&mut self.rng);
        let mut sums: Vec<(&'static str, f64)> = Vec::new();
        let mut batches = 0usize;
        for chunk in data.chunks(self.config.batch_size) {
            let losses = self.model.train_step(chunk, &mut self.rng)?;
            for (name, v) in losses.terms {
                match sums.iter_mut().find(|(n, _)| *n == name) {
                    Some(slot) => slot.1 += v,
                    None => sums.push((name, v)),
                }
            }
            batches += 1;
        }
        self.model.end_epoch();
        let epoch = self.history.len();
        let terms = sums.into_iter().map(|(n, v)| (n, v / batches as f64)).collect();
        let (independence, estimated_independence) = if (epoch + 1).is_multiple_of(self.config.eval_every) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ epoch as u64);
            let scenes = scenes(&self.env, &self.noise, &self.tracked, &mut rng)?;
            let est = match &self.model {
                Model::Rgrvae(m) => Some(m.estimated_independence_frames(&scenes, &self.env.structure().subspaces)?),
                _ => None,
            };
            (Some(scene_independence(self.model.vae(), &scenes)?), est)
        } else {
            (None, None)
        };
        self.history.push(EpochRecord { epoch, terms, independence, estimated_independence });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Trains the remaining configured epochs.
    pub fn train(&mut self, mut progress: impl FnMut(&EpochRecord)) -> Result<()> {
        while self.history.len() < self.config.epochs {
            progress(self.train_epoch()?);
        }
        Ok(())
    }

    /// Epochs until the tracked independence (label-free estimate for
    /// RGrVAE) first reaches [`TAU_LEVEL`].
    pub fn tau(&self) -> Option<usize> {
        let series: Vec<(usize, f64)> = self
            .history
            .iter()
            .filter_map(|r| r.estimated_independence.or(r.independence).map(|v| (r.epoch, v)))
            .collect();
        let values: Vec<f64> = series.iter().map(|s| s.1).collect();
        tau_threshold(&values, TAU_LEVEL).map(|i| series[i].0 + 1)
    }

    /// Full metric suite plus the probe.
    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate(&self.config, &self.env, &self.noise, &self.model, self.seed, self.tau())
    }
}

/// Each state followed by its images under every generator and inverse,
/// noised as one scene.
pub fn scenes<W: World + ?Sized, R: Rng + ?Sized>(world: &W, noise: &Noise, states: &[Vec<usize>], rng: &mut R) -> Result<Vec<Vec<Image>>> {
    let actions = ActionLabel::all(world.num_factors());
    let mut out = Vec::with_capacity(states.len());
    for s in states {
        let mut clean = vec![world.render(s)?];
        for &a in &actions {
            clean.push(world.render(&world.step(s, a)?)?);
        }
        out.push(noise.apply_group(&clean.iter().collect::<Vec<_>>(), rng));
    }
    Ok(out)
}

/// Independence of the encoder means over prepared scenes, deltas filed
/// under their true groups.
pub fn scene_independence(vae: &VaeNet<f32>, scenes: &[Vec<Image>]) -> Result<f64> {
    let refs: Vec<&Image> = scenes.iter().flatten().collect();
    let codes = vae.means(&refs)?;
    let stride = scenes.first().map_or(1, Vec::len);
    let groups = (stride - 1) / 2;
    let samples: Vec<_> = codes
        .chunks(stride)
        .map(|chunk| {
            let mut deltas = vec![Vec::new(); groups];
            for (ai, za) in chunk[1..].iter().enumerate() {
                deltas[ActionLabel::from_index(ai).factor].push(chunk[0].iter().zip(za).map(|(x, y)| x - y).collect());
            }
            crate::metrics::MetricSample { deltas }
        })
        .collect();
    Ok(independence_score(&samples)?.score)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Vec<(String, f64)>,
    pub probe: ProbeReport,
}

impl Evaluation {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Labeled `(x, xₐ)` image pairs, `per_action` for every action.
pub fn labeled_pairs<W: World + ?Sized, R: Rng + ?Sized>(
    world: &W,
    noise: &Noise,
    per_action: usize,
    rng: &mut R,
) -> Result<Vec<(Image, Image, ActionLabel)>> {
    let mut out = Vec::with_capacity(per_action * world.num_actions());
    for a in ActionLabel::all(world.num_factors()) {
        for _ in 0..per_action {
            let s = world.random_state(rng);
            let (x, xa) = noise.apply_pair(&world.render(&s)?, &world.render(&world.step(&s, a)?)?, rng);
            out.push((x, xa, a));
        }
    }
    Ok(out)
}

/// Fits the probe to the encoder means of labeled pairs.
pub fn run_probe(vae: &VaeNet<f32>, pairs: &[(Image, Image, ActionLabel)], structure: &SymmetryStructure, config: &crate::symrep::ProbeConfig) -> Result<ProbeReport> {
    let pre = vae.means(&pairs.iter().map(|p| &p.0).collect::<Vec<_>>())?;
    let post = vae.means(&pairs.iter().map(|p| &p.1).collect::<Vec<_>>())?;
    let probe_pairs: Vec<ProbePair> = pre
        .into_iter()
        .zip(post)
        .zip(pairs)
        .map(|((z, z_post), p)| ProbePair { z, z_post, action: p.2.index() })
        .collect();
    probe_fit(&probe_pairs, structure, config)
}

/// Most frequently inferred representation for each true action.
pub fn dominant_reps(model: &Rgrvae<f32>, pairs: &[(Image, Image, ActionLabel)], num_actions: usize) -> Result<(Vec<usize>, f64)> {
    let inferred = model.infer_actions(&pairs.iter().map(|p| (&p.0, &p.1)).collect::<Vec<_>>())?;
    let k = model.policy.num_reps();
    let mut counts = vec![vec![0usize; k]; num_actions];
    for (p, &r) in pairs.iter().zip(&inferred) {
        counts[p.2.index()][r] += 1;
    }
    let dominant: Vec<usize> = counts.iter().map(|c| (0..k).max_by_key(|&j| (c[j], std::cmp::Reverse(j))).unwrap_or(0)).collect();
    let agree = pairs.iter().zip(&inferred).filter(|(p, &r)| dominant[p.2.index()] == r).count();
    Ok((dominant, agree as f64 / pairs.len().max(1) as f64))
}

fn rep_alpha_error(reps: &[ActionRepresentation], structure: &SymmetryStructure) -> f64 {
    let total: f64 = reps.iter().enumerate().map(|(a, r)| (extract_angle(r).angle - structure.angle(a / 2)).abs()).sum();
    total / reps.len().max(1) as f64
}

/// Scores a model: independence, probe statistics, the information and
/// classifier metrics, reconstruction error and (for RGrVAE) policy
/// statistics. Deterministic given `seed`.
pub fn evaluate(config: &ExperimentConfig, env: &Env, noise: &Noise, model: &Model, seed: u64, tau: Option<usize>) -> Result<Evaluation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xe7a1_0000));
    let vae = model.vae();
    let structure = env.structure();
    let mut metrics: Vec<(String, f64)> = Vec::new();
    let mut put = |name: &str, v: f64| metrics.push((name.to_string(), v));

    let states: Vec<Vec<usize>> = (0..config.metrics.states).map(|_| env.random_state(&mut rng)).collect();
    let scenes = scenes(env, noise, &states, &mut rng)?;
    put("independence", scene_independence(vae, &scenes)?);
    if let Model::Rgrvae(m) = model {
        put("estimated_independence", m.estimated_independence_frames(&scenes, &structure.subspaces)?);
    }

    let pairs = labeled_pairs(env, noise, config.probe_pairs, &mut rng)?;
    let probe_config = crate::symrep::ProbeConfig { seed, ..config.probe.clone() };
    let probe = run_probe(vae, &pairs, &structure, &probe_config)?;
    put("alpha_error", probe.alpha_error(&structure));
    put("latent_err", probe.latent_err);
    put("rel_err", probe.rel_err);
    match model {
        Model::Forward(m) => put("model_alpha_error", rep_alpha_error(&m.reps.snapshots(), &structure)),
        Model::Rgrvae(m) => {
            let (dominant, agreement) = dominant_reps(m, &pairs, env.num_actions())?;
            let reps: Vec<ActionRepresentation> = dominant.iter().map(|&k| m.reps.snapshot(k)).collect();
            put("model_alpha_error", rep_alpha_error(&reps, &structure));
            put("action_agreement", agreement);
            let refs: Vec<(&Image, &Image, ActionLabel)> = pairs.iter().map(|p| (&p.0, &p.1, p.2)).collect();
            let (total, per_action) = m.active_rep_estimate(&refs, env.num_actions())?;
            put("active_total", total);
            put("active_per_action", per_action.iter().sum::<f64>() / per_action.len().max(1) as f64);
            put("active_per_action_max", per_action.iter().copied().fold(0.0, f64::max));
        }
        Model::Vae(_) => {}
    }

    let mut all = env.all_states();
    if all.len() > 5000 {
        all.shuffle(&mut rng);
        all.truncate(5000);
    }
    let mut images = Vec::with_capacity(all.len());
    let mut clean = Vec::with_capacity(all.len());
    for s in &all {
        let im = env.render(s)?;
        images.push(noise.apply(&im, &mut rng));
        clean.push(im);
    }
    let latents = vae.means(&images.iter().collect::<Vec<_>>())?;
    let table = mutual_info_table(&latents, &all, config.metrics.bins)?;
    let mut code = |batch: &[Vec<usize>]| -> Result<Vec<Vec<f64>>> {
        let mut ims = Vec::with_capacity(batch.len());
        for s in batch {
            ims.push(noise.apply(&env.render(s)?, &mut ChaCha8Rng::seed_from_u64(s.iter().fold(seed, |h, &v| h.wrapping_mul(31).wrapping_add(v as u64)))));
        }
        vae.means(&ims.iter().collect::<Vec<_>>())
    };
    put("beta", beta_metric(env, &mut code, &config.metrics.beta, &mut rng)?);
    put("mig", mig(&table));
    put("sap", sap(&latents, &all)?);
    put("modularity", modularity(&table));
    put("dci", dci_disentanglement(&latents, &all, config.metrics.dci_alpha)?);
    put("factor_leakage", factor_leakage(&table));
    let decoded = vae.decode_many(&latents)?;
    let l1: f64 = decoded.iter().zip(&clean).map(|(d, c)| f64::from(d.l1_distance(c))).sum::<f64>() / clean.len() as f64;
    put("recon_l1", l1);
    put("tau_095", tau.map_or(f64::NAN, |t| t as f64));
    Ok(Evaluation { metrics, probe })
}

/// Everything a finished experiment produced.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub out: PathBuf,
    pub rows: Vec<RunRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Trains and evaluates every seed, writing per-seed histories, checkpoints,
/// probe reports and traversals, then `metrics.csv` and `aggregate.csv`.
/// `snapshot` is the launching config text, stored byte for byte. On failure
/// a `PARTIAL` marker with the error is left in the output directory.
pub fn run_experiment(config: &ExperimentConfig, snapshot: &str, mut progress: impl FnMut(u64, &EpochRecord)) -> Result<RunArtifacts> {
    config.validate()?;
    std::fs::create_dir_all(&config.out)?;
    let result = (|| -> Result<RunArtifacts> {
        std::fs::write(config.out.join("config.toml"), snapshot)?;
        let mut rows = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            let mut session = Session::new(config, seed)?;
            session.train(|r| progress(seed, r))?;
            write_history_csv(&config.out.join(format!("history_seed{seed}.csv")), &session.history)?;
            session.model.save(&config.out.join(format!("checkpoint_seed{seed}.syml")))?;
            let eval = session.evaluate()?;
            write_probe_csv(&config.out.join(format!("probe_seed{seed}.csv")), &eval.probe)?;
            let grid = match session.model.reps() {
                Some(reps) => {
                    let z0 = session.model.vae().means(&[&session.env.render(&vec![0; session.env.num_factors()])?])?.remove(0);
                    traversal_grid(session.model.vae(), &reps.snapshots(), &z0, 10)?
                }
                None => latent_traversal(session.model.vae(), 10, 2.0)?,
            };
            crate::pgm::write_pgm(&config.out.join(format!("traversal_seed{seed}.pgm")), &grid)?;
            rows.push(RunRow { run: config.name.clone(), method: config.method.to_string(), seed, metrics: eval.metrics });
        }
        write_metrics_csv(&config.out.join("metrics.csv"), &rows)?;
        let agg = aggregate(&rows);
        write_aggregate_csv(&config.out.join("aggregate.csv"), &agg)?;
        Ok(RunArtifacts { out: config.out.clone(), rows, aggregate: agg })
    })();
    if let Err(e) = &result {
        std::fs::write(config.out.join("PARTIAL"), format!("run aborted: {e}\n"))?;
    }
    result
}

/// Flatland in the `SYMD` container. `n = 0` stores the complete grid, one
/// image per state. Otherwise `n` pairs are stored as consecutive rows: a
/// random state, then the state reached by `steps` random actions. Noise is
/// applied pairwise and quantised to bytes.
pub fn generate_flatland<R: Rng + ?Sized>(n: usize, steps: usize, noise: &Noise, rng: &mut R) -> Result<RawDataset> {
    let world = Flatland;
    let mut states = Vec::new();
    let mut images = Vec::new();
    if n == 0 {
        for s in world.all_states() {
            images.push(noise.apply(&world.render(&s)?, rng));
            states.push(s);
        }
    } else {
        if steps == 0 {
            return Err(Error::InvalidArgument("pairs need at least one step".into()));
        }
        for _ in 0..n {
            let t = sample_transition(&world, rng, steps, false)?;
            let (a, b) = noise.apply_pair(&t.transition.x_pre, &t.transition.x_post, rng);
            images.extend([a, b]);
            states.extend([t.start, t.end]);
        }
    }
    let (h, w) = (images[0].height, images[0].width);
    let bytes = images.iter().flat_map(|im| im.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
    let indices = states.iter().flatten().map(|&v| v as u16).collect();
    RawDataset::new(h, w, world.factor_sizes().to_vec(), bytes, indices)
}
