use rand::Rng;
use symlin_numgrad::{Adam, AdamConfig, Graph, Real};

use super::{images_tensor, reparameterize, sample_noise, vae_loss_graph, StepLosses, VaeConfig, VaeNet};
use crate::error::{Error, Result};
use crate::worlds::Image;

/// A VAE-family baseline with its optimiser.
#[derive(Clone, Debug)]
pub struct VaeTrainer<T> {
    pub vae: VaeNet<T>,
    opt: Adam<T>,
    step: u64,
}

impl<T: Real> VaeTrainer<T> {
    pub fn new<R: Rng + ?Sized>(config: VaeConfig, lr: f64, rng: &mut R) -> Result<Self> {
        Ok(Self::from_net(VaeNet::new(config, rng)?, lr))
    }

    pub fn from_net(vae: VaeNet<T>, lr: f64) -> Self {
        let opt = Adam::new(AdamConfig::with_lr(lr), &vae.store);
        Self { vae, opt, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One Adam step on the variant's objective.
    pub fn train_step<R: Rng + ?Sized>(&mut self, images: &[&Image], rng: &mut R) -> Result<StepLosses> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let eps = sample_noise(images.len(), self.vae.latent_dim(), rng);
        let mut g = Graph::new();
        let b = self.vae.store.bind(&mut g);
        let x = g.constant(images_tensor(images)?);
        let (mu, logvar) = self.vae.encode_graph(&mut g, &b, x)?;
        let z = reparameterize(&mut g, mu, logvar, eps)?;
        let logits = self.vae.decode_graph(&mut g, &b, z)?;
        let loss = vae_loss_graph(&mut g, x, logits, mu, logvar, &self.vae.config, self.step)?;
        let mut losses = StepLosses::default();
        losses.push("total", g.value(loss.total).item().as_f64());
        losses.push("reconstruction", g.value(loss.reconstruction).item().as_f64());
        losses.push("kl", g.value(loss.kl).item().as_f64());
        if let Some(r) = loss.regularizer {
            losses.push("regularizer", g.value(r).item().as_f64());
        }
        losses.check_finite(self.step)?;
        let grads = g.backward(loss.total)?;
        self.vae.store.zero_grad();
        self.vae.store.accumulate(&b, &grads);
        self.opt.step(&mut self.vae.store)?;
        self.step += 1;
        Ok(losses)
    }
}
