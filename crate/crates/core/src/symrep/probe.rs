use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symlin_numgrad::{Adam, AdamConfig, Graph, Tensor};

use super::{extract_angle, matvec, ActionRepresentation, RepSet, SymmetryStructure};
use crate::error::{Error, Result};
use crate::metrics::mean_pairwise_distance;

/// Code of an observation, code of the observation after `action`, and the
/// action's dense index (`2·group` generator, `2·group + 1` inverse).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbePair {
    pub z: Vec<f64>,
    pub z_post: Vec<f64>,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub iters: usize,
    pub lr: f64,
    /// Weight of `‖PQ − I‖²_F`.
    pub basis_penalty: f64,
    /// Initialisations per action, the first from the closed-form
    /// least-squares fit; the lowest final loss wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { iters: 2000, lr: 1e-2, basis_penalty: 0.1, restarts: 3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeActionFit {
    pub action: usize,
    pub rep: ActionRepresentation,
    pub alpha_hat: f64,
    /// Mean `‖ẑₐ − zₐ‖₂` over this action's pairs.
    pub latent_err: f64,
    pub rel_err: f64,
    pub samples: usize,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub fits: Vec<ProbeActionFit>,
    /// Mean `‖ẑₐ − zₐ‖₂` over all pairs.
    pub latent_err: f64,
    pub rel_err: f64,
    /// Mean distance between randomly paired codes.
    pub expected_distance: f64,
}

impl ProbeReport {
    /// `‖α̂ − α‖₁` averaged over actions, against the structure's angles.
    pub fn alpha_error(&self, structure: &SymmetryStructure) -> f64 {
        let total: f64 = self.fits.iter().map(|f| (f.alpha_hat - structure.angle(f.action / 2)).abs()).sum();
        total / self.fits.len() as f64
    }

    pub fn fit(&self, action: usize) -> Option<&ProbeActionFit> {
        self.fits.iter().find(|f| f.action == action)
    }

    /// `ẑₐ` from the fitted representation of `action`.
    pub fn predict(&self, z: &[f64], action: usize) -> Option<Vec<f64>> {
        self.fit(action).map(|f| f.rep.apply(z))
    }

    /// Worst per-action relative error is at most `threshold` (0.1 by default
    /// convention).
    pub fn admits(&self, threshold: f64) -> bool {
        self.fits.iter().all(|f| f.rel_err <= threshold)
    }
}

/// Fits one basis-conjugated cyclic representation per action to frozen
/// latent pairs.
pub fn probe_fit(pairs: &[ProbePair], structure: &SymmetryStructure, config: &ProbeConfig) -> Result<ProbeReport> {
    let l = structure.latent_dim();
    if l < 2 {
        return Err(Error::InvalidArgument("probe needs a latent space of at least two dims".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.z.len() != l || p.z_post.len() != l) {
        return Err(Error::InvalidArgument(format!("probe pair of length {} for a {l}-dim structure", p.z.len())));
    }
    let num_actions = 2 * structure.num_groups();
    let codes: Vec<Vec<f64>> = pairs.iter().map(|p| p.z.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let expected_distance = mean_pairwise_distance(&codes, &mut rng)?;

    let mut fits = Vec::with_capacity(num_actions);
    let mut err_total = 0.0;
    for action in 0..num_actions {
        let group: Vec<&ProbePair> = pairs.iter().filter(|p| p.action == action).collect();
        if group.len() < 2 {
            return Err(Error::InvalidArgument(format!("action {action} has {} probe samples, need at least 2", group.len())));
        }
        let dims = &structure.subspaces[action / 2];
        let block = (dims[0], *dims.get(1).unwrap_or(&((dims[0] + 1) % l)));
        let inverse = action % 2 == 1;
        let closed = least_squares_map(&group, l).and_then(|m| conjugated_rotation(&m, l, block, inverse));
        let mut best: Option<(f64, ActionRepresentation)> = None;
        for restart in 0..config.restarts.max(1) {
            let init = match &closed {
                Some(c) if restart == 0 => c.clone(),
                _ => (rng.random_range(0.0..PI), None),
            };
            let (loss, rep) = fit_one(&group, l, block, init, inverse, config, &mut rng)?;
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, rep));
            }
        }
        let (final_loss, rep) = best.expect("at least one restart");
        let errs: Vec<f64> = group
            .iter()
            .map(|p| {
                let pred = matvec(&rep.rep_matrix(), &p.z);
                pred.iter().zip(&p.z_post).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        err_total += errs.iter().sum::<f64>();
        let latent_err = errs.iter().sum::<f64>() / errs.len() as f64;
        fits.push(ProbeActionFit {
            action,
            alpha_hat: extract_angle(&rep).angle,
            rel_err: latent_err / expected_distance,
            latent_err,
            samples: group.len(),
            final_loss,
            rep,
        });
    }
    let counted: usize = fits.iter().map(|f| f.samples).sum();
    let latent_err = err_total / counted as f64;
    Ok(ProbeReport { fits, latent_err, rel_err: latent_err / expected_distance, expected_distance })
}

/// Starting angle and, when known, the basis pair `(P, Q)`.
type Init = (f64, Option<(Vec<f64>, Vec<f64>)>);

fn fit_one(
    pairs: &[&ProbePair],
    l: usize,
    block: (usize, usize),
    init: Init,
    inverse: bool,
    config: &ProbeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ActionRepresentation)> {
    let m = pairs.len();
    let z: Vec<f64> = pairs.iter().flat_map(|p| p.z.iter().copied()).collect();
    let za: Vec<f64> = pairs.iter().flat_map(|p| p.z_post.iter().copied()).collect();
    let z = Tensor::<f64>::from_f64([m, l], &z)?;
    let za = Tensor::<f64>::from_f64([m, l], &za)?;

    let mut reps = RepSet::<f64>::cyclic(1, l, rng).with_learned_basis();
    let (theta, basis) = init;
    reps.set_block(0, block);
    match basis {
        Some((p, q)) => {
            reps.set_theta(0, theta);
            reps.set_basis(0, &p, &q)?;
        }
        None => reps.set_theta(0, if inverse { -theta } else { theta }),
    }
    let start = {
        let mut g = Graph::new();
        let b = reps.store.bind_frozen(&mut g);
        let loss = probe_loss(&mut g, &b, &reps, &z, &za, config.basis_penalty)?;
        (g.value(loss).item(), reps.snapshot(0))
    };
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), &reps.store);
    let mut last = f64::INFINITY;
    for _ in 0..config.iters {
        let mut g = Graph::new();
        let b = reps.store.bind(&mut g);
        let loss = probe_loss(&mut g, &b, &reps, &z, &za, config.basis_penalty)?;
        last = g.value(loss).item();
        let grads = g.backward(loss)?;
        reps.store.zero_grad();
        reps.store.accumulate(&b, &grads);
        adam.step(&mut reps.store)?;
    }
    let mut g = Graph::new();
    let b = reps.store.bind_frozen(&mut g);
    let loss = probe_loss(&mut g, &b, &reps, &z, &za, config.basis_penalty)?;
    let final_loss = g.value(loss).item();
    if !final_loss.is_finite() {
        return Err(Error::Diverged { step: config.iters, detail: format!("probe loss {last}") });
    }
    if start.0 <= final_loss {
        return Ok(start);
    }
    Ok((final_loss, reps.snapshot(0)))
}

/// Row-major `M` minimising `Σ‖M z − z_post‖²`; `None` when the codes do
/// not span the latent space.
fn least_squares_map(pairs: &[&ProbePair], l: usize) -> Option<Vec<f64>> {
    // (Σ z zᵀ) Mᵀ = Σ z z_postᵀ
    let mut a = vec![0.0; l * l];
    let mut b = vec![0.0; l * l];
    for p in pairs {
        for i in 0..l {
            for j in 0..l {
                a[i * l + j] += p.z[i] * p.z[j];
                b[i * l + j] += p.z[i] * p.z_post[j];
            }
        }
    }
    let mt = solve(a, b, l)?;
    Some(transpose(&mt, l))
}

fn transpose(m: &[f64], l: usize) -> Vec<f64> {
    (0..l * l).map(|k| m[(k % l) * l + k / l]).collect()
}

/// `X` with `A X = B` by Gauss–Jordan elimination with partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, l: usize) -> Option<Vec<f64>> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for c in 0..l {
        let piv = (c..l).max_by(|&i, &j| a[i * l + c].abs().total_cmp(&a[j * l + c].abs()))?;
        if a[piv * l + c].abs() <= 1e-10 * scale {
            return None;
        }
        for k in 0..l {
            a.swap(c * l + k, piv * l + k);
            b.swap(c * l + k, piv * l + k);
        }
        let d = a[c * l + c];
        for k in 0..l {
            a[c * l + k] /= d;
            b[c * l + k] /= d;
        }
        for r in (0..l).filter(|&r| r != c) {
            let f = a[r * l + c];
            for k in 0..l {
                a[r * l + k] -= f * a[c * l + k];
                b[r * l + k] -= f * b[c * l + k];
            }
        }
    }
    Some(b)
}

/// The `n` most significant orthonormal directions of `vectors` (pivoted
/// Gram–Schmidt), after projecting out `against`.
fn principal_directions(mut vectors: Vec<Vec<f64>>, against: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let project_out = |v: &mut Vec<f64>, u: &[f64]| {
        let d = dot(v, u);
        v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
    };
    for v in vectors.iter_mut() {
        for u in against {
            project_out(v, u);
        }
    }
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n && !vectors.is_empty() {
        let k = (0..vectors.len()).max_by(|&i, &j| dot(&vectors[i], &vectors[i]).total_cmp(&dot(&vectors[j], &vectors[j]))).expect("non-empty");
        let mut v = vectors.swap_remove(k);
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-12 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        for w in vectors.iter_mut() {
            project_out(w, &v);
        }
        out.push(v);
    }
    out
}

/// Closed-form `(θ, (P, Q))` with `Q·blockdiag(ρ(θ), I)·P` closest to `M` as
/// a conjugated rotation: the rotation plane is the range of `M − I`, the
/// fixed space its kernel, and the plane's 2×2 action is brought to `ρ(θ)`
/// by a similarity.
fn conjugated_rotation(m: &[f64], l: usize, block: (usize, usize), inverse: bool) -> Option<Init> {
    let mut n = m.to_vec();
    for i in 0..l {
        n[i * l + i] -= 1.0;
    }
    let columns: Vec<Vec<f64>> = (0..l).map(|j| (0..l).map(|i| n[i * l + j]).collect()).collect();
    let rows: Vec<Vec<f64>> = (0..l).map(|i| n[i * l..(i + 1) * l].to_vec()).collect();
    let plane = principal_directions(columns, &[], 2);
    let row_space = principal_directions(rows, &[], 2);
    let fixed = principal_directions((0..l).map(|i| (0..l).map(|j| f64::from(u8::from(i == j))).collect()).collect(), &row_space, l - 2);
    if plane.len() < 2 || fixed.len() < l - 2 {
        return None;
    }
    // basis B = [u₁, u₂, w…] and the plane block of B⁻¹ M B
    let mut basis = vec![0.0; l * l];
    for (c, v) in plane.iter().chain(&fixed).enumerate() {
        for r in 0..l {
            basis[r * l + c] = v[r];
        }
    }
    let inv = solve(basis.clone(), super::identity(l), l)?;
    let t = super::matmul(&super::matmul(&inv, m, l), &basis, l);
    let (a00, a01, a10, a11) = (t[0], t[1], t[l], t[l + 1]);
    let angle = super::block_angle([a00, a01, a10, a11]).angle;
    let theta = if inverse { -angle } else { angle };
    let (c, s) = (theta.cos(), theta.sin());
    if s.abs() < 1e-9 {
        return None;
    }
    // x = e₁, y = (A x − cos θ·x) / sin θ gives A [x y] = [x y] ρ(θ)
    let y = [(a00 - c) / s, a10 / s];
    let mut conj = vec![0.0; l * l];
    let mut others = (0..l).filter(|&k| k != block.0 && k != block.1);
    for r in 0..l {
        conj[r * l + block.0] = plane[0][r];
        conj[r * l + block.1] = y[0] * plane[0][r] + y[1] * plane[1][r];
    }
    for w in &fixed {
        let k = others.next()?;
        for r in 0..l {
            conj[r * l + k] = w[r];
        }
    }
    let conj_inv = solve(conj.clone(), super::identity(l), l)?;
    Some((theta, Some((conj_inv, conj))))
}

fn probe_loss(
    g: &mut Graph<f64>,
    b: &symlin_numgrad::Binding,
    reps: &RepSet<f64>,
    z: &Tensor<f64>,
    za: &Tensor<f64>,
    basis_penalty: f64,
) -> Result<symlin_numgrad::Var> {
    let m = z.shape()[0] as f64;
    let mat = reps.matrix_graph(g, b, 0)?;
    let mt = g.transpose(mat)?;
    let zc = g.constant(z.clone());
    let zac = g.constant(za.clone());
    let pred = g.matmul(zc, mt)?;
    let diff = g.sub(pred, zac)?;
    let sq = g.square(diff);
    let total = g.sum(sq);
    let mut loss = g.scale(total, 1.0 / m);
    if let Some(pen) = reps.basis_penalty_graph(g, b)? {
        let pen = g.scale(pen, basis_penalty);
        loss = g.add(loss, pen)?;
    }
    Ok(loss)
}
