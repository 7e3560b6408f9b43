use rand::Rng;
use symlin_numgrad::{Adam, AdamConfig, Binding, Graph, Real, Var};

use super::{apply_choices, images_tensor, prediction_loss, reconstruction_graph, reparameterize, sample_noise, vae_loss_graph, StepLosses, VaeConfig, VaeNet};
use crate::error::{Error, Result};
use crate::symrep::{RepKind, RepSet};
use crate::worlds::{Image, Transition};

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardConfig {
    /// Weight of the latent prediction term.
    pub gamma: f64,
    pub identity_decay: f64,
    pub lr_vae: f64,
    pub lr_reps: f64,
    pub rep_kind: RepKind,
    /// Also decode the predicted code and score it against the post-action image.
    pub pixel_prediction: bool,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self { gamma: 1.0, identity_decay: 1e-3, lr_vae: 1e-4, lr_reps: 1e-2, rep_kind: RepKind::Cyclic, pixel_prediction: false }
    }
}

/// VAE with one learnable representation per observed action.
#[derive(Clone, Debug)]
pub struct ForwardVae<T> {
    pub vae: VaeNet<T>,
    pub reps: RepSet<T>,
    pub config: ForwardConfig,
    vae_opt: Adam<T>,
    rep_opt: Adam<T>,
    step: u64,
}

impl<T: Real> ForwardVae<T> {
    /// `num_actions` representations, action `a` initially on latent plane `a / 2`.
    pub fn new<R: Rng + ?Sized>(vae: VaeConfig, num_actions: usize, config: ForwardConfig, rng: &mut R) -> Result<Self> {
        let l = vae.latent_dim;
        let vae = VaeNet::new(vae, rng)?;
        let reps = match config.rep_kind {
            RepKind::Cyclic => RepSet::cyclic(num_actions, l, rng),
            RepKind::Generic => RepSet::generic(num_actions, l, rng),
        };
        Ok(Self::from_parts(vae, reps, config))
    }

    pub fn from_parts(vae: VaeNet<T>, reps: RepSet<T>, config: ForwardConfig) -> Self {
        let vae_opt = Adam::new(AdamConfig::with_lr(config.lr_vae), &vae.store);
        let rep_opt = Adam::new(AdamConfig::with_lr(config.lr_reps), &reps.store);
        Self { vae, reps, config, vae_opt, rep_opt, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Full objective on one batch; returns the total and named terms.
    pub fn loss_graph(
        &self,
        g: &mut Graph<T>,
        bv: &Binding,
        br: &Binding,
        batch: &[(&Image, &Image, usize)],
        eps: symlin_numgrad::Tensor<T>,
    ) -> Result<(Var, Vec<(&'static str, Var)>)> {
        let pre: Vec<&Image> = batch.iter().map(|t| t.0).collect();
        let post: Vec<&Image> = batch.iter().map(|t| t.1).collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.2).collect();
        let x = g.constant(images_tensor(&pre)?);
        let xa = g.constant(images_tensor(&post)?);
        let (mu, logvar) = self.vae.encode_graph(g, bv, x)?;
        let (mu_a, _) = self.vae.encode_graph(g, bv, xa)?;
        let z = reparameterize(g, mu, logvar, eps)?;
        let logits = self.vae.decode_graph(g, bv, z)?;
        let vae = vae_loss_graph(g, x, logits, mu, logvar, &self.vae.config, self.step)?;
        let pred = apply_choices(g, br, &self.reps, mu, &actions)?;
        let prediction = prediction_loss(g, pred, mu_a)?;
        let decay = self.reps.identity_decay_graph(g, br, self.config.identity_decay)?;
        let mut terms = vec![("reconstruction", vae.reconstruction), ("kl", vae.kl), ("prediction", prediction), ("identity_decay", decay)];
        let mut predicted = prediction;
        if self.config.pixel_prediction {
            let logits_a = self.vae.decode_graph(g, bv, pred)?;
            let pixel = reconstruction_graph(g, xa, logits_a)?;
            terms.push(("pixel_prediction", pixel));
            predicted = g.add(predicted, pixel)?;
        }
        let weighted = g.scale(predicted, self.config.gamma);
        let total = g.add(vae.total, weighted)?;
        let total = g.add(total, decay)?;
        if let Some(r) = vae.regularizer {
            terms.push(("regularizer", r));
        }
        Ok((total, terms))
    }

    /// One Adam step on the VAE and the representations. Every transition
    /// must carry its action label.
    pub fn train_step<R: Rng + ?Sized>(&mut self, batch: &[Transition], rng: &mut R) -> Result<StepLosses> {
        let mut items = Vec::with_capacity(batch.len());
        for (i, t) in batch.iter().enumerate() {
            let a = t.true_action.ok_or_else(|| Error::InvalidArgument(format!("transition {i} has no action label")))?;
            if a.index() >= self.reps.len() {
                return Err(Error::InvalidArgument(format!("action {} has no representation", a.index())));
            }
            items.push((&t.x_pre, &t.x_post, a.index()));
        }
        if items.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let eps = sample_noise(items.len(), self.vae.latent_dim(), rng);
        let mut g = Graph::new();
        let bv = self.vae.store.bind(&mut g);
        let br = self.reps.store.bind(&mut g);
        let (total, terms) = self.loss_graph(&mut g, &bv, &br, &items, eps)?;
        let mut losses = StepLosses::default();
        losses.push("total", g.value(total).item().as_f64());
        for (name, v) in terms {
            losses.push(name, g.value(v).item().as_f64());
        }
        losses.check_finite(self.step)?;
        let grads = g.backward(total)?;
        self.vae.store.zero_grad();
        self.reps.store.zero_grad();
        self.vae.store.accumulate(&bv, &grads);
        self.reps.store.accumulate(&br, &grads);
        self.vae_opt.step(&mut self.vae.store)?;
        self.rep_opt.step(&mut self.reps.store)?;
        self.step += 1;
        Ok(losses)
    }
}
