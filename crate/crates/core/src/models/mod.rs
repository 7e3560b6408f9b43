//! Convolutional VAE family and the action-supervised forward model.

mod forward;
mod trainer;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use symlin_numgrad::{Binding, Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::symrep::RepSet;
use crate::worlds::Image;

pub use forward::{ForwardConfig, ForwardVae};
pub use trainer::VaeTrainer;

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;
const LAYERS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Vae,
    Beta,
    Cc,
    Dip1,
    Dip2,
    /// Plain VAE objective plus the supervised prediction term.
    Forward,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::Vae, Variant::Beta, Variant::Cc, Variant::Dip1, Variant::Dip2, Variant::Forward];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::Beta => "beta",
            Variant::Cc => "cc",
            Variant::Dip1 => "dip1",
            Variant::Dip2 => "dip2",
            Variant::Forward => "forward",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}` (expected vae, beta, cc, dip1, dip2 or forward)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub variant: Variant,
    /// KL weight for `beta`, capacity weight for `cc`.
    pub beta: f64,
    pub capacity_max: f64,
    pub capacity_steps: u64,
    pub dip_lambda_od: f64,
    pub dip_lambda_d: f64,
    pub latent_dim: usize,
    /// Channels in every conv layer.
    pub channels: usize,
    pub image_size: usize,
}

impl VaeConfig {
    /// Conventional defaults for `variant` with `latent_dim` latents.
    pub fn new(variant: Variant, latent_dim: usize) -> Self {
        let (beta, dip_lambda_d) = match variant {
            Variant::Beta => (4.0, 100.0),
            Variant::Cc => (1000.0, 100.0),
            Variant::Dip2 => (1.0, 10.0),
            _ => (1.0, 100.0),
        };
        Self {
            variant,
            beta,
            capacity_max: 25.0,
            capacity_steps: 100_000,
            dip_lambda_od: 10.0,
            dip_lambda_d,
            latent_dim,
            channels: 32,
            image_size: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 || self.capacity_max < 0.0 || self.dip_lambda_od < 0.0 || self.dip_lambda_d < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.latent_dim == 0 || self.channels == 0 {
            return Err(Error::Config("latent_dim and channels must be positive".into()));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << LAYERS) {
            return Err(Error::Config(format!("image size {} is not divisible by {}", self.image_size, 1 << LAYERS)));
        }
        Ok(())
    }

    /// Capacity `C(step)` of the `cc` variant: linear ramp to `capacity_max`.
    pub fn capacity(&self, step: u64) -> f64 {
        if self.capacity_steps == 0 {
            return self.capacity_max;
        }
        self.capacity_max * (step.min(self.capacity_steps) as f64 / self.capacity_steps as f64)
    }

    fn bottleneck(&self) -> usize {
        self.image_size >> LAYERS
    }
}

/// Posterior parameters and one reparameterised draw.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

/// Encoder and decoder parameters in one store.
#[derive(Clone, Debug)]
pub struct VaeNet<T> {
    pub config: VaeConfig,
    pub store: ParamStore<T>,
    enc_conv: Vec<Layer>,
    enc_out: Layer,
    dec_in: Layer,
    dec_conv: Vec<Layer>,
}

/// Uniform `±sqrt(6 / fan_in)` weights, zero bias.
pub fn he_layer<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    bias: usize,
    gain: f64,
    rng: &mut R,
) -> (ParamId, ParamId) {
    let bound = gain * (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    let w = store.add(format!("{name}.weight"), Tensor::from_f64(shape.to_vec(), &values).expect("shape matches"));
    let b = store.add(format!("{name}.bias"), Tensor::zeros([bias]));
    (w, b)
}

impl<T: Real> VaeNet<T> {
    pub fn new<R: Rng + ?Sized>(config: VaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let l = config.latent_dim;
        let flat = c * config.bottleneck() * config.bottleneck();
        let mut store = ParamStore::new();
        let mut enc_conv = Vec::with_capacity(LAYERS);
        for i in 0..LAYERS {
            let cin = if i == 0 { 1 } else { c };
            let (w, b) = he_layer(&mut store, &format!("encoder.conv{i}"), &[c, cin, KERNEL, KERNEL], cin * KERNEL * KERNEL, c, 1.0, rng);
            enc_conv.push(Layer { w, b });
        }
        let (w, b) = he_layer(&mut store, "encoder.out", &[2 * l, flat], flat, 2 * l, 0.5, rng);
        let enc_out = Layer { w, b };
        let (w, b) = he_layer(&mut store, "decoder.in", &[flat, l], l, flat, 1.0, rng);
        let dec_in = Layer { w, b };
        let mut dec_conv = Vec::with_capacity(LAYERS);
        for i in 0..LAYERS {
            let cout = if i + 1 == LAYERS { 1 } else { c };
            // each output pixel of a stride-2 transposed conv sees (k/s)² taps per input channel
            let fan_in = c * (KERNEL / STRIDE) * (KERNEL / STRIDE);
            let (w, b) = he_layer(&mut store, &format!("decoder.deconv{i}"), &[c, cout, KERNEL, KERNEL], fan_in, cout, 1.0, rng);
            dec_conv.push(Layer { w, b });
        }
        Ok(Self { config, store, enc_conv, enc_out, dec_in, dec_conv })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// `x: [n, 1, H, W]` → `(μ, logvar)`, each `[n, l]`.
    pub fn encode_graph(&self, g: &mut Graph<T>, b: &Binding, x: Var) -> Result<(Var, Var)> {
        let n = g.shape(x)[0];
        let mut h = x;
        for layer in &self.enc_conv {
            h = g.conv2d(h, b.var(layer.w), b.var(layer.b), STRIDE, PAD)?;
            h = g.relu(h);
        }
        let flat: usize = g.shape(h)[1..].iter().product();
        let h = g.reshape(h, &[n, flat])?;
        let out = g.affine(h, b.var(self.enc_out.w), b.var(self.enc_out.b))?;
        let l = self.config.latent_dim;
        let mu = g.slice(out, 1, 0, l)?;
        let logvar = g.slice(out, 1, l, 2 * l)?;
        Ok((mu, logvar))
    }

    /// `z: [n, l]` → pixel logits `[n, 1, H, W]`.
    pub fn decode_graph(&self, g: &mut Graph<T>, b: &Binding, z: Var) -> Result<Var> {
        let n = g.shape(z)[0];
        let s = self.config.bottleneck();
        let h = g.affine(z, b.var(self.dec_in.w), b.var(self.dec_in.b))?;
        let h = g.relu(h);
        let mut h = g.reshape(h, &[n, self.config.channels, s, s])?;
        for (i, layer) in self.dec_conv.iter().enumerate() {
            h = g.conv_transpose2d(h, b.var(layer.w), b.var(layer.b), STRIDE, PAD)?;
            if i + 1 < LAYERS {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let s = self.config.image_size;
        if image.height != s || image.width != s {
            return Err(Error::InvalidArgument(format!("expected a {s}×{s} image, got {}×{}", image.height, image.width)));
        }
        Ok(())
    }

    /// Posterior means and log-variances for a set of images, in batches.
    pub fn posterior(&self, images: &[&Image]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let l = self.config.latent_dim;
        let mut mus = Vec::with_capacity(images.len());
        let mut logvars = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            for im in chunk {
                self.check_image(im)?;
            }
            let mut g = Graph::new();
            let b = self.store.bind_frozen(&mut g);
            let x = g.constant(images_tensor(chunk)?);
            let (mu, logvar) = self.encode_graph(&mut g, &b, x)?;
            mus.extend(g.value(mu).to_f64_vec().chunks(l).map(<[f64]>::to_vec));
            logvars.extend(g.value(logvar).to_f64_vec().chunks(l).map(<[f64]>::to_vec));
        }
        Ok((mus, logvars))
    }

    /// Posterior means only.
    pub fn means(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        Ok(self.posterior(images)?.0)
    }

    /// Deterministic `(μ, logvar)`; `z` drawn from `rng`.
    pub fn encode<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Result<LatentCode> {
        let (mut mus, mut logvars) = self.posterior(&[image])?;
        let (mu, logvar) = (mus.remove(0), logvars.remove(0));
        let z = mu
            .iter()
            .zip(&logvar)
            .map(|(m, lv)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + (lv / 2.0).exp() * eps
            })
            .collect();
        Ok(LatentCode { mu, logvar, z })
    }

    /// Images in `(0, 1)` for a batch of codes.
    pub fn decode_many(&self, codes: &[Vec<f64>]) -> Result<Vec<Image>> {
        let l = self.config.latent_dim;
        let s = self.config.image_size;
        let mut out = Vec::with_capacity(codes.len());
        for chunk in codes.chunks(64) {
            if let Some(z) = chunk.iter().find(|z| z.len() != l) {
                return Err(Error::InvalidArgument(format!("code of length {} for a {l}-dim model", z.len())));
            }
            let flat: Vec<f64> = chunk.concat();
            let mut g = Graph::new();
            let b = self.store.bind_frozen(&mut g);
            let z = g.constant(Tensor::from_f64([chunk.len(), l], &flat)?);
            let logits = self.decode_graph(&mut g, &b, z)?;
            let probs = g.sigmoid(logits);
            for pixels in g.value(probs).to_f64_vec().chunks(s * s) {
                out.push(Image { height: s, width: s, pixels: pixels.iter().map(|&p| p as f32).collect() });
            }
        }
        Ok(out)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Image> {
        Ok(self.decode_many(&[z.to_vec()])?.remove(0))
    }
}

/// Stacks images into `[n, 1, H, W]`.
pub fn images_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
    let (h, w) = images.first().map_or((0, 0), |i| (i.height, i.width));
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        if im.height != h || im.width != w {
            return Err(Error::InvalidArgument("images in a batch must share a size".into()));
        }
        data.extend(im.pixels.iter().map(|&p| T::of(f64::from(p))));
    }
    Ok(Tensor::new([images.len(), 1, h, w], data)?)
}

/// Standard-normal noise of shape `[n, l]`.
pub fn sample_noise<T: Real, R: Rng + ?Sized>(n: usize, l: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..n * l).map(|_| T::of(StandardNormal.sample(rng))).collect();
    Tensor::new([n, l], data).expect("shape matches")
}

/// `μ + exp(logvar / 2) ⊙ ε`.
pub fn reparameterize<T: Real>(g: &mut Graph<T>, mu: Var, logvar: Var, eps: Tensor<T>) -> Result<Var> {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let e = g.constant(eps);
    let noise = g.mul(std, e)?;
    Ok(g.add(mu, noise)?)
}

/// `½ Σ (μ² + e^{logvar} − logvar − 1)` for one code.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu.iter().zip(logvar).map(|(m, lv)| m * m + lv.exp() - lv - 1.0).sum::<f64>()
}

/// Bernoulli cross-entropy summed over pixels for one image and its logits.
pub fn bernoulli_nll(x: &[f64], logits: &[f64]) -> f64 {
    x.iter().zip(logits).map(|(x, l)| l.max(0.0) - l * x + (-l.abs()).exp().ln_1p()).sum()
}

/// Named scalar losses from one optimisation step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub terms: Vec<(&'static str, f64)>,
}

impl StepLosses {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    pub fn push(&mut self, name: &'static str, value: f64) {
        self.terms.push((name, value));
    }

    /// Fails on the first non-finite term.
    pub fn check_finite(&self, step: u64) -> Result<()> {
        match self.terms.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::Diverged { step: step as usize, detail: format!("{name} = {v}; terms {:?}", self.terms) }),
            None => Ok(()),
        }
    }
}

/// Graph handles of the loss terms, each a batch mean.
#[derive(Clone, Debug)]
pub struct LossVars {
    pub total: Var,
    pub reconstruction: Var,
    pub kl: Var,
    /// Capacity deviation (`cc`) or covariance penalty (`dip1`, `dip2`).
    pub regularizer: Option<Var>,
}

/// Mean over the batch of the per-sample sums along the last axis.
fn batch_mean_of_sums<T: Real>(g: &mut Graph<T>, v: Var) -> Var {
    let n = g.shape(v)[0] as f64;
    let s = g.sum(v);
    g.scale(s, 1.0 / n)
}

/// Covariance `[l, l]` of the rows of `m: [n, l]`.
fn covariance<T: Real>(g: &mut Graph<T>, m: Var) -> Result<Var> {
    let n = g.shape(m)[0];
    let avg = g.constant(Tensor::full([n, n], T::of(1.0 / n as f64)));
    let means = g.matmul(avg, m)?;
    let centered = g.sub(m, means)?;
    let ct = g.transpose(centered)?;
    let cov = g.matmul(ct, centered)?;
    Ok(g.scale(cov, 1.0 / n as f64))
}

/// `λ_od Σ_{i≠j} C_ij² + λ_d Σ_i (C_ii − 1)²`.
fn dip_penalty<T: Real>(g: &mut Graph<T>, cov: Var, l: usize, lambda_od: f64, lambda_d: f64) -> Result<Var> {
    let eye = g.constant(Tensor::eye(l));
    let mut off = vec![1.0; l * l];
    for i in 0..l {
        off[i * l + i] = 0.0;
    }
    let off = g.constant(Tensor::from_f64([l, l], &off)?);
    let off_part = g.mul(cov, off)?;
    let off_sq = g.square(off_part);
    let off_sum = g.sum(off_sq);
    let diag_part = g.mul(cov, eye)?;
    let diag_dev = g.sub(diag_part, eye)?;
    let diag_sq = g.square(diag_dev);
    let diag_sum = g.sum(diag_sq);
    let a = g.scale(off_sum, lambda_od);
    let d = g.scale(diag_sum, lambda_d);
    Ok(g.add(a, d)?)
}

/// Bernoulli cross-entropy of `x` under decoder logits, summed over pixels and
/// averaged over the batch.
pub fn reconstruction_graph<T: Real>(g: &mut Graph<T>, x: Var, logits: Var) -> Result<Var> {
    // softplus(l) − x·l is the Bernoulli NLL with logits l
    let sp = g.softplus(logits);
    let xl = g.mul(x, logits)?;
    let nll = g.sub(sp, xl)?;
    Ok(batch_mean_of_sums(g, nll))
}

/// Per-variant objective on `x: [n,1,H,W]` given decoder logits and posterior
/// parameters. The `forward` variant contributes the plain VAE terms here.
pub fn vae_loss_graph<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    logits: Var,
    mu: Var,
    logvar: Var,
    config: &VaeConfig,
    step: u64,
) -> Result<LossVars> {
    let reconstruction = reconstruction_graph(g, x, logits)?;

    let mu2 = g.square(mu);
    let ev = g.exp(logvar);
    let t = g.add(mu2, ev)?;
    let t = g.sub(t, logvar)?;
    let t = g.add_scalar(t, -1.0);
    let t = g.scale(t, 0.5);
    let kl = batch_mean_of_sums(g, t);

    let l = config.latent_dim;
    let (total, regularizer) = match config.variant {
        Variant::Vae | Variant::Forward => (g.add(reconstruction, kl)?, None),
        Variant::Beta => {
            let bkl = g.scale(kl, config.beta);
            (g.add(reconstruction, bkl)?, None)
        }
        Variant::Cc => {
            let dev = g.add_scalar(kl, -config.capacity(step));
            let dev = g.abs(dev);
            let reg = g.scale(dev, config.beta);
            (g.add(reconstruction, reg)?, Some(dev))
        }
        Variant::Dip1 | Variant::Dip2 => {
            let mut cov = covariance(g, mu)?;
            if config.variant == Variant::Dip2 {
                // Cov_q(z) = Cov(μ) + E[diag(σ²)]
                let n = g.shape(ev)[0];
                let avg = g.constant(Tensor::full([l, n], T::of(1.0 / n as f64)));
                let spread = g.matmul(avg, ev)?;
                let eye = g.constant(Tensor::eye(l));
                let diag = g.mul(spread, eye)?;
                cov = g.add(cov, diag)?;
            }
            let pen = dip_penalty(g, cov, l, config.dip_lambda_od, config.dip_lambda_d)?;
            let base = g.add(reconstruction, kl)?;
            (g.add(base, pen)?, Some(pen))
        }
    };
    Ok(LossVars { total, reconstruction, kl, regularizer })
}

/// Predictions `ẑ[i] = M_{choice[i]} · μ[i]` for `μ: [n, l]`, built from one
/// masked product per representation (so every candidate stays in the graph).
pub fn apply_choices<T: Real>(g: &mut Graph<T>, b: &Binding, reps: &RepSet<T>, mu: Var, choices: &[usize]) -> Result<Var> {
    let n = g.shape(mu)[0];
    let l = reps.latent_dim();
    if choices.len() != n {
        return Err(Error::InvalidArgument(format!("{} choices for a batch of {n}", choices.len())));
    }
    if let Some(c) = choices.iter().find(|&&c| c >= reps.len()) {
        return Err(Error::InvalidArgument(format!("choice {c} but only {} representations", reps.len())));
    }
    let mut out: Option<Var> = None;
    for k in 0..reps.len() {
        if !choices.contains(&k) {
            continue;
        }
        let mask: Vec<f64> = choices.iter().flat_map(|&c| std::iter::repeat_n(f64::from(u8::from(c == k)), l)).collect();
        let mask = g.constant(Tensor::from_f64([n, l], &mask)?);
        let m = reps.matrix_graph(g, b, k)?;
        let mt = g.transpose(m)?;
        let pred = g.matmul(mu, mt)?;
        let part = g.mul(pred, mask)?;
        out = Some(match out {
            None => part,
            Some(o) => g.add(o, part)?,
        });
    }
    out.ok_or_else(|| Error::InvalidArgument("empty batch".into()))
}

/// Mean over the batch of `‖ẑ − target‖²`.
pub fn prediction_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let d2 = g.square(d);
    Ok(batch_mean_of_sums(g, d2))
}
