use rand::Rng;
use symlin_numgrad::{Binding, Graph, ParamStore, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::models::he_layer;
use crate::worlds::Image;

const LAYERS: usize = 4;
const HIDDEN: usize = 64;

/// Small conv net over the channel-stacked pair `(x, xₐ)` with a softmax head
/// over the internal representations.
#[derive(Clone, Debug)]
pub struct PolicyNet<T> {
    pub store: ParamStore<T>,
    convs: Vec<(symlin_numgrad::ParamId, symlin_numgrad::ParamId)>,
    hidden: (symlin_numgrad::ParamId, symlin_numgrad::ParamId),
    head: (symlin_numgrad::ParamId, symlin_numgrad::ParamId),
    image_size: usize,
    num_reps: usize,
}

impl<T: Real> PolicyNet<T> {
    pub fn new<R: Rng + ?Sized>(num_reps: usize, channels: usize, image_size: usize, rng: &mut R) -> Result<Self> {
        if num_reps == 0 || channels == 0 {
            return Err(Error::Config("policy needs at least one representation and one channel".into()));
        }
        if image_size == 0 || !image_size.is_multiple_of(1 << LAYERS) {
            return Err(Error::Config(format!("image size {image_size} is not divisible by {}", 1 << LAYERS)));
        }
        let mut store = ParamStore::new();
        let mut convs = Vec::with_capacity(LAYERS);
        for i in 0..LAYERS {
            let cin = if i == 0 { 2 } else { channels };
            convs.push(he_layer(&mut store, &format!("policy.conv{i}"), &[channels, cin, 4, 4], cin * 16, channels, 1.0, rng));
        }
        let side = image_size >> LAYERS;
        let flat = channels * side * side;
        let hidden = he_layer(&mut store, "policy.hidden", &[HIDDEN, flat], flat, HIDDEN, 1.0, rng);
        // a tiny head keeps the initial distribution close to uniform
        let head = he_layer(&mut store, "policy.head", &[num_reps, HIDDEN], HIDDEN, num_reps, 0.01, rng);
        Ok(Self { store, convs, hidden, head, image_size, num_reps })
    }

    pub fn num_reps(&self) -> usize {
        self.num_reps
    }

    /// `pair: [n, 2, H, W]` → logits `[n, N_rep]`.
    pub fn logits_graph(&self, g: &mut Graph<T>, b: &Binding, pair: Var) -> Result<Var> {
        let n = g.shape(pair)[0];
        let mut h = pair;
        for &(w, bias) in &self.convs {
            h = g.conv2d(h, b.var(w), b.var(bias), 2, 1)?;
            h = g.relu(h);
        }
        let flat: usize = g.shape(h)[1..].iter().product();
        let h = g.reshape(h, &[n, flat])?;
        let h = g.affine(h, b.var(self.hidden.0), b.var(self.hidden.1))?;
        let h = g.relu(h);
        Ok(g.affine(h, b.var(self.head.0), b.var(self.head.1))?)
    }

    /// Stacks `(x, xₐ)` pairs into `[n, 2, H, W]`.
    pub fn pair_tensor(&self, pairs: &[(&Image, &Image)]) -> Result<Tensor<T>> {
        let s = self.image_size;
        let mut data = Vec::with_capacity(pairs.len() * 2 * s * s);
        for (a, b) in pairs {
            for im in [a, b] {
                if im.height != s || im.width != s {
                    return Err(Error::InvalidArgument(format!("expected {s}×{s} images, got {}×{}", im.height, im.width)));
                }
                data.extend(im.pixels.iter().map(|&p| T::of(f64::from(p))));
            }
        }
        Ok(Tensor::new([pairs.len(), 2, s, s], data)?)
    }

    /// Action distributions for a set of pairs.
    pub fn probabilities(&self, pairs: &[(&Image, &Image)]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(64) {
            let mut g = Graph::new();
            let b = self.store.bind_frozen(&mut g);
            let x = g.constant(self.pair_tensor(chunk)?);
            let logits = self.logits_graph(&mut g, &b, x)?;
            let probs = g.softmax(logits);
            out.extend(g.value(probs).to_f64_vec().chunks(self.num_reps).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}
