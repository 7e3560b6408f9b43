//! Unsupervised action estimation: a policy picks which internal
//! representation explains each observation pair, trained by REINFORCE
//! alongside the VAE.

mod policy;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use symlin_numgrad::{Adam, AdamConfig, Binding, Graph, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::metrics::{independence_score, MetricSample};
use crate::models::{apply_choices, images_tensor, prediction_loss, reconstruction_graph, reparameterize, sample_noise, vae_loss_graph, StepLosses, VaeConfig, VaeNet};
use crate::symrep::{matvec, RepKind, RepSet};
use crate::worlds::{ActionLabel, Image, Transition, World};

pub use policy::PolicyNet;

const PROB_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExploreSpec {
    /// Uniform index with probability `epsilon`, else a categorical draw;
    /// `epsilon` is multiplied by `decay` after every epoch.
    EpsGreedy { epsilon: f64, decay: f64 },
    /// Categorical draws; `weight · H(p)` is subtracted from the policy loss.
    Entropy { weight: f64 },
}

impl Default for ExploreSpec {
    fn default() -> Self {
        ExploreSpec::EpsGreedy { epsilon: 0.1, decay: 0.999 }
    }
}

impl ExploreSpec {
    pub fn entropy() -> Self {
        ExploreSpec::Entropy { weight: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ExploreSpec::EpsGreedy { epsilon, decay } if (0.0..=1.0).contains(&epsilon) && (0.0..=1.0).contains(&decay) => Ok(()),
            ExploreSpec::Entropy { weight } if weight >= 0.0 => Ok(()),
            other => Err(Error::Config(format!("invalid exploration settings {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    Reward,
    /// `R(Aᵢ) − max_j R(A_j)`; needs every candidate evaluated.
    Regret,
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Reward => "reward",
            RewardMode::Regret => "regret",
        })
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward" => Ok(RewardMode::Reward),
            "regret" => Ok(RewardMode::Regret),
            other => Err(Error::Config(format!("unknown reward mode `{other}` (expected reward or regret)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgrvaeConfig {
    pub n_reps: usize,
    pub explore: ExploreSpec,
    pub reward_mode: RewardMode,
    pub gamma: f64,
    pub lr_vae: f64,
    pub lr_policy: f64,
    pub lr_reps: f64,
    pub identity_decay: f64,
    pub policy_channels: usize,
    /// Also decode the predicted code and score it against the post-action image.
    pub pixel_prediction: bool,
}

impl Default for RgrvaeConfig {
    fn default() -> Self {
        Self {
            n_reps: 4,
            explore: ExploreSpec::default(),
            reward_mode: RewardMode::Regret,
            gamma: 1.0,
            lr_vae: 1e-4,
            lr_policy: 1e-4,
            lr_reps: 1e-2,
            identity_decay: 1e-3,
            policy_channels: 16,
            pixel_prediction: false,
        }
    }
}

/// Draws an index from `dist` under the exploration rule.
pub fn select_action<R: Rng + ?Sized>(dist: &[f64], spec: &ExploreSpec, rng: &mut R) -> usize {
    if let ExploreSpec::EpsGreedy { epsilon, .. } = *spec {
        if rng.random::<f64>() < epsilon {
            return rng.random_range(0..dist.len());
        }
    }
    let u: f64 = rng.random::<f64>() * dist.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u at the very top: take the last index with mass
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(dist.len() - 1)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `‖z − zₐ‖² − ‖ẑₐ − zₐ‖²`.
pub fn reward(z: &[f64], z_post: &[f64], z_pred: &[f64]) -> f64 {
    squared_distance(z, z_post) - squared_distance(z_pred, z_post)
}

/// Two-branch REINFORCE loss for one chosen index with probability `p`.
pub fn policy_loss(p: f64, r: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if r > 0.0 {
        -p.ln() * r
    } else if r < 0.0 {
        -(1.0 - p).ln() * r.abs()
    } else {
        0.0
    }
}

/// `exp(H(p))`.
pub fn effective_count(dist: &[f64]) -> f64 {
    dist.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>().exp()
}

/// Detached per-sample quantities the sampling step is decided from.
#[derive(Clone, Debug, PartialEq)]
pub struct StepValues {
    pub mu: Vec<Vec<f64>>,
    pub mu_post: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

/// Sampled representation per sample and the (detached) reward driving it.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPlan {
    pub choices: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Result of following the policy from one observation towards another.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub actions: Vec<usize>,
    pub converged: bool,
    /// `‖z_current − z_target‖²` at the end.
    pub final_error: f64,
}

/// VAE, policy and internal representations trained together.
#[derive(Clone, Debug)]
pub struct Rgrvae<T> {
    pub vae: VaeNet<T>,
    pub policy: PolicyNet<T>,
    pub reps: RepSet<T>,
    pub config: RgrvaeConfig,
    /// Exploration state; `epsilon` decays per epoch.
    pub explore: ExploreSpec,
    vae_opt: Adam<T>,
    policy_opt: Adam<T>,
    rep_opt: Adam<T>,
    step: u64,
}

fn rows(t: &Tensor<impl Real>, width: usize) -> Vec<Vec<f64>> {
    t.to_f64_vec().chunks(width).map(<[f64]>::to_vec).collect()
}

impl<T: Real> Rgrvae<T> {
    pub fn new<R: Rng + ?Sized>(vae: VaeConfig, config: RgrvaeConfig, rng: &mut R) -> Result<Self> {
        config.explore.validate()?;
        if config.n_reps == 0 {
            return Err(Error::Config("rgrvae.n_reps must be positive".into()));
        }
        let l = vae.latent_dim;
        let size = vae.image_size;
        let vae = VaeNet::new(vae, rng)?;
        let policy = PolicyNet::new(config.n_reps, config.policy_channels, size, rng)?;
        let reps = RepSet::cyclic(config.n_reps, l, rng);
        Ok(Self::from_parts(vae, policy, reps, config))
    }

    pub fn from_parts(vae: VaeNet<T>, policy: PolicyNet<T>, reps: RepSet<T>, config: RgrvaeConfig) -> Self {
        let vae_opt = Adam::new(AdamConfig::with_lr(config.lr_vae), &vae.store);
        let policy_opt = Adam::new(AdamConfig::with_lr(config.lr_policy), &policy.store);
        let rep_opt = Adam::new(AdamConfig::with_lr(config.lr_reps), &reps.store);
        Self { vae, policy, reps, explore: config.explore, config, vae_opt, policy_opt, rep_opt, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies the per-epoch ε decay.
    pub fn end_epoch(&mut self) {
        if let ExploreSpec::EpsGreedy { epsilon, decay } = &mut self.explore {
            *epsilon *= *decay;
        }
    }

    /// Action distribution for one pair.
    pub fn policy_forward(&self, x_pre: &Image, x_post: &Image) -> Result<Vec<f64>> {
        if x_pre.height != x_post.height || x_pre.width != x_post.width {
            return Err(Error::InvalidArgument("pair images differ in shape".into()));
        }
        Ok(self.policy.probabilities(&[(x_pre, x_post)])?.remove(0))
    }

    /// `ẑ` for every representation applied to `z`.
    pub fn candidates(&self, z: &[f64]) -> Vec<Vec<f64>> {
        self.reps.snapshots().iter().map(|r| matvec(&r.rep_matrix(), z)).collect()
    }

    /// Samples a representation per pair and computes the reward signal.
    pub fn plan<R: Rng + ?Sized>(&self, values: &StepValues, rng: &mut R) -> StepPlan {
        let mats: Vec<Vec<f64>> = self.reps.snapshots().iter().map(|r| r.rep_matrix()).collect();
        let mut choices = Vec::with_capacity(values.mu.len());
        let mut rewards = Vec::with_capacity(values.mu.len());
        for ((z, za), dist) in values.mu.iter().zip(&values.mu_post).zip(&values.probs) {
            let choice = select_action(dist, &self.explore, rng);
            let r = |k: usize| reward(z, za, &matvec(&mats[k], z));
            let chosen = r(choice);
            let signal = match self.config.reward_mode {
                RewardMode::Reward => chosen,
                RewardMode::Regret => chosen - (0..mats.len()).map(r).fold(f64::NEG_INFINITY, f64::max),
            };
            choices.push(choice);
            rewards.push(signal);
        }
        StepPlan { choices, rewards }
    }

    /// Builds the full objective. `planner` sees the detached encoder and
    /// policy outputs and fixes the sampled representations and rewards.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_graph<F>(
        &self,
        g: &mut Graph<T>,
        bv: &Binding,
        bp: &Binding,
        br: &Binding,
        pairs: &[(&Image, &Image)],
        eps: Tensor<T>,
        mut planner: F,
    ) -> Result<(Var, Vec<(&'static str, Var)>, StepPlan)>
    where
        F: FnMut(&StepValues) -> StepPlan,
    {
        let n = pairs.len();
        let l = self.vae.latent_dim();
        let pre: Vec<&Image> = pairs.iter().map(|p| p.0).collect();
        let post: Vec<&Image> = pairs.iter().map(|p| p.1).collect();
        let x = g.constant(images_tensor(&pre)?);
        let xa = g.constant(images_tensor(&post)?);
        let (mu, logvar) = self.vae.encode_graph(g, bv, x)?;
        let (mu_a, _) = self.vae.encode_graph(g, bv, xa)?;
        let z = reparameterize(g, mu, logvar, eps)?;
        let logits = self.vae.decode_graph(g, bv, z)?;
        let vae = vae_loss_graph(g, x, logits, mu, logvar, &self.vae.config, self.step)?;

        let pair = g.constant(self.policy.pair_tensor(pairs)?);
        let plogits = self.policy.logits_graph(g, bp, pair)?;
        let probs = g.softmax(plogits);
        let values = StepValues {
            mu: rows(g.value(mu), l),
            mu_post: rows(g.value(mu_a), l),
            probs: rows(g.value(probs), self.policy.num_reps()),
        };
        let plan = planner(&values);
        if plan.choices.len() != n || plan.rewards.len() != n {
            return Err(Error::InvalidArgument("plan does not cover the batch".into()));
        }

        // two-branch REINFORCE with the reward as a constant weight on either branch
        let k = self.policy.num_reps();
        let onehot: Vec<f64> = plan.choices.iter().flat_map(|&c| (0..k).map(move |j| f64::from(u8::from(j == c)))).collect();
        let onehot = g.constant(Tensor::from_f64([n, k], &onehot)?);
        let picked = g.mul(probs, onehot)?;
        let p = g.sum_axis(picked, 1)?;
        let p = g.clamp(p, PROB_FLOOR, 1.0 - PROB_FLOOR);
        let log_p = g.log(p);
        let neg_p = g.neg(p);
        let q = g.add_scalar(neg_p, 1.0);
        let log_q = g.log(q);
        let pos_w: Vec<f64> = plan.rewards.iter().map(|r| r.max(0.0)).collect();
        let neg_w: Vec<f64> = plan.rewards.iter().map(|r| (-r).max(0.0)).collect();
        let pos_w = g.constant(Tensor::from_f64([n], &pos_w)?);
        let neg_w = g.constant(Tensor::from_f64([n], &neg_w)?);
        let a = g.mul(log_p, pos_w)?;
        let b = g.mul(log_q, neg_w)?;
        let ab = g.add(a, b)?;
        let s = g.sum(ab);
        let mut policy = g.scale(s, -1.0 / n as f64);
        if let ExploreSpec::Entropy { weight } = self.explore {
            let logp = g.log_softmax(plogits);
            let plogp = g.mul(probs, logp)?;
            let total = g.sum(plogp);
            // −Σ p log p averaged over the batch, subtracted with `weight`
            let bonus = g.scale(total, weight / n as f64);
            policy = g.add(policy, bonus)?;
        }

        let pred = apply_choices(g, br, &self.reps, mu, &plan.choices)?;
        let prediction = prediction_loss(g, pred, mu_a)?;
        let decay = self.reps.identity_decay_graph(g, br, self.config.identity_decay)?;
        let mut terms = vec![
            ("reconstruction", vae.reconstruction),
            ("kl", vae.kl),
            ("policy", policy),
            ("prediction", prediction),
            ("identity_decay", decay),
        ];
        let mut predicted = prediction;
        if self.config.pixel_prediction {
            let logits_a = self.vae.decode_graph(g, bv, pred)?;
            let pixel = reconstruction_graph(g, xa, logits_a)?;
            terms.push(("pixel_prediction", pixel));
            predicted = g.add(predicted, pixel)?;
        }
        let weighted = g.scale(predicted, self.config.gamma);
        let total = g.add(vae.total, policy)?;
        let total = g.add(total, weighted)?;
        let total = g.add(total, decay)?;
        if let Some(r) = vae.regularizer {
            terms.push(("regularizer", r));
        }
        Ok((total, terms, plan))
    }

    /// One step on unlabeled single-action transitions.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[Transition], rng: &mut R) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(t) = batch.iter().find(|t| t.steps != 1) {
            return Err(Error::InvalidArgument(format!("transition spans {} actions, expected 1", t.steps)));
        }
        let pairs: Vec<(&Image, &Image)> = batch.iter().map(|t| (&t.x_pre, &t.x_post)).collect();
        let eps = sample_noise(pairs.len(), self.vae.latent_dim(), rng);
        let mut g = Graph::new();
        let bv = self.vae.store.bind(&mut g);
        let bp = self.policy.store.bind(&mut g);
        let br = self.reps.store.bind(&mut g);
        let (total, terms, plan) = self.loss_graph(&mut g, &bv, &bp, &br, &pairs, eps, |v| self.plan(v, rng))?;
        let mut losses = StepLosses::default();
        losses.push("total", g.value(total).item().as_f64());
        for (name, v) in terms {
            losses.push(name, g.value(v).item().as_f64());
        }
        losses.push("reward", plan.rewards.iter().sum::<f64>() / plan.rewards.len() as f64);
        losses.check_finite(self.step)?;
        let grads = g.backward(total)?;
        for store in [&mut self.vae.store, &mut self.policy.store] {
            store.zero_grad();
        }
        self.reps.store.zero_grad();
        self.vae.store.accumulate(&bv, &grads);
        self.policy.store.accumulate(&bp, &grads);
        self.reps.store.accumulate(&br, &grads);
        self.vae_opt.step(&mut self.vae.store)?;
        self.policy_opt.step(&mut self.policy.store)?;
        self.rep_opt.step(&mut self.reps.store)?;
        self.step += 1;
        Ok(losses)
    }

    /// Most probable representation for each pair.
    pub fn infer_actions(&self, pairs: &[(&Image, &Image)]) -> Result<Vec<usize>> {
        Ok(self
            .policy
            .probabilities(pairs)?
            .iter()
            .map(|d| (0..d.len()).fold(0, |best, i| if d[i] > d[best] { i } else { best }))
            .collect())
    }

    /// Greedy decode loop from `start` towards `target`.
    pub fn rollout_sequence(&self, start: &Image, target: &Image, max_steps: usize, tolerance: f64) -> Result<Rollout> {
        if max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        let z_target = self.vae.means(&[target])?.remove(0);
        let mut current = start.clone();
        let mut z = self.vae.means(&[&current])?.remove(0);
        let mut actions = Vec::new();
        loop {
            let err = squared_distance(&z, &z_target);
            if err < tolerance {
                return Ok(Rollout { actions, converged: true, final_error: err });
            }
            if actions.len() == max_steps {
                return Ok(Rollout { actions, converged: false, final_error: err });
            }
            let k = self.infer_actions(&[(&current, target)])?[0];
            let moved = self.reps.snapshot(k).apply(&z);
            current = self.vae.decode(&moved)?;
            z = self.vae.means(&[&current])?.remove(0);
            actions.push(k);
        }
    }

    /// `exp(H)` of the marginal policy distribution and of the mean
    /// distribution conditioned on each true action.
    pub fn active_rep_estimate(&self, pairs: &[(&Image, &Image, ActionLabel)], num_actions: usize) -> Result<(f64, Vec<f64>)> {
        let dists = self.policy.probabilities(&pairs.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>())?;
        let k = self.policy.num_reps();
        let mean = |sel: &dyn Fn(usize) -> bool| -> Vec<f64> {
            let mut acc = vec![0.0; k];
            let mut n = 0;
            for (i, d) in dists.iter().enumerate() {
                if sel(i) {
                    acc.iter_mut().zip(d).for_each(|(a, p)| *a += p);
                    n += 1;
                }
            }
            acc.into_iter().map(|a| a / n.max(1) as f64).collect()
        };
        let total = effective_count(&mean(&|_| true));
        let per_action = (0..num_actions).map(|a| effective_count(&mean(&|i| pairs[i].2.index() == a))).collect();
        Ok((total, per_action))
    }

    /// Independence with each delta filed under the group owning the latent
    /// plane of the inferred representation (no environment labels used).
    /// A group that receives no delta at a state counts as fully overlapping.
    pub fn estimated_independence<W: World + ?Sized>(&self, world: &W, states: &[Vec<usize>], groups: &[Vec<usize>]) -> Result<f64> {
        let actions = ActionLabel::all(world.num_factors());
        let mut frames = Vec::with_capacity(states.len());
        for s in states {
            let mut scene = vec![world.render(s)?];
            for &a in &actions {
                scene.push(world.render(&world.step(s, a)?)?);
            }
            frames.push(scene);
        }
        self.estimated_independence_frames(&frames, groups)
    }

    /// As [`Self::estimated_independence`] on prepared scenes, each an
    /// observation followed by its images under every generator and inverse.
    pub fn estimated_independence_frames(&self, frames: &[Vec<Image>], groups: &[Vec<usize>]) -> Result<f64> {
        let stride = frames.first().map_or(0, Vec::len);
        if stride < 2 || frames.iter().any(|f| f.len() != stride) {
            return Err(Error::InvalidArgument("scenes need an observation and at least one neighbour, all of equal size".into()));
        }
        let refs: Vec<&Image> = frames.iter().flatten().collect();
        let codes = self.vae.means(&refs)?;
        let mut pairs = Vec::with_capacity(frames.len() * (stride - 1));
        for chunk in refs.chunks(stride) {
            for post in &chunk[1..] {
                pairs.push((chunk[0], *post));
            }
        }
        let inferred = self.infer_actions(&pairs)?;
        let group_of = |k: usize| {
            let (i, _) = self.reps.block(k);
            groups.iter().position(|g| g.contains(&i))
        };
        let mut samples = Vec::with_capacity(frames.len());
        let mut overlapping = 0usize;
        for (si, chunk) in codes.chunks(stride).enumerate() {
            let mut deltas = vec![Vec::new(); groups.len()];
            for (ai, za) in chunk[1..].iter().enumerate() {
                if let Some(gi) = group_of(inferred[si * (stride - 1) + ai]) {
                    deltas[gi].push(chunk[0].iter().zip(za).map(|(x, y)| x - y).collect::<Vec<f64>>());
                }
            }
            if deltas.iter().any(Vec::is_empty) {
                overlapping += 1;
            } else {
                samples.push(MetricSample { deltas });
            }
        }
        let scored = if samples.is_empty() {
            0.0
        } else {
            independence_score(&samples).map(|i| i.score * samples.len() as f64).unwrap_or(0.0)
        };
        Ok(scored / (samples.len() + overlapping) as f64)
    }

    /// `RepKind` used for the internal representations.
    pub fn rep_kind(&self) -> RepKind {
        self.reps.snapshot(0).kind
    }
}
