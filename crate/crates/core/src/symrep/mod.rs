//! Group-representation matrices acting on latent codes.
//!
//! Cyclic groups act through 2×2 rotation blocks embedded in the latent space
//! (the real irreducibles of `C_N`); a learned change of basis lets a block
//! act on a plane that is not axis aligned.

mod probe;

use std::f64::consts::PI;

use rand::Rng;
use symlin_numgrad::{Binding, Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::{Error, Result};

pub use probe::{probe_fit, ProbeActionFit, ProbeConfig, ProbePair, ProbeReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RepKind {
    /// Rotation by a learned angle on one latent plane.
    Cyclic,
    /// Unconstrained `l×l` matrix.
    Generic,
}

/// A latent-space group action in plain numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionRepresentation {
    pub kind: RepKind,
    pub latent_dim: usize,
    /// Latent plane the rotation block acts on.
    pub block: (usize, usize),
    pub theta: f64,
    /// Row-major `l×l`; used by the generic kind.
    pub matrix: Vec<f64>,
    /// Row-major `l×l` change of basis `P` and its learned inverse `Q`.
    pub basis: Vec<f64>,
    pub basis_inverse: Vec<f64>,
}

pub fn identity(l: usize) -> Vec<f64> {
    let mut m = vec![0.0; l * l];
    for i in 0..l {
        m[i * l + i] = 1.0;
    }
    m
}

pub fn matmul(a: &[f64], b: &[f64], l: usize) -> Vec<f64> {
    let mut out = vec![0.0; l * l];
    for i in 0..l {
        for k in 0..l {
            let aik = a[i * l + k];
            for j in 0..l {
                out[i * l + j] += aik * b[k * l + j];
            }
        }
    }
    out
}

pub fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let l = v.len();
    (0..l).map(|i| (0..l).map(|j| m[i * l + j] * v[j]).sum()).collect()
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

impl ActionRepresentation {
    /// Axis-aligned rotation on `block` with identity basis.
    pub fn cyclic(latent_dim: usize, block: (usize, usize), theta: f64) -> Self {
        Self {
            kind: RepKind::Cyclic,
            latent_dim,
            block,
            theta,
            matrix: identity(latent_dim),
            basis: identity(latent_dim),
            basis_inverse: identity(latent_dim),
        }
    }

    pub fn generic(latent_dim: usize, block: (usize, usize), matrix: Vec<f64>) -> Self {
        assert_eq!(matrix.len(), latent_dim * latent_dim, "generic representation needs an l×l matrix");
        Self { kind: RepKind::Generic, matrix, ..Self::cyclic(latent_dim, block, 0.0) }
    }

    pub fn with_basis(mut self, basis: Vec<f64>, basis_inverse: Vec<f64>) -> Self {
        self.basis = basis;
        self.basis_inverse = basis_inverse;
        self
    }

    /// `blockdiag(ρ(θ), I)` before any change of basis.
    pub fn rotation(&self) -> Vec<f64> {
        let l = self.latent_dim;
        let mut m = identity(l);
        let (i, j) = self.block;
        let (c, s) = (self.theta.cos(), self.theta.sin());
        m[i * l + i] = c;
        m[i * l + j] = -s;
        m[j * l + i] = s;
        m[j * l + j] = c;
        m
    }

    /// `Q · blockdiag(ρ(θ), I) · P` for the cyclic kind, `M` for the generic kind.
    pub fn rep_matrix(&self) -> Vec<f64> {
        match self.kind {
            RepKind::Generic => self.matrix.clone(),
            RepKind::Cyclic => {
                let l = self.latent_dim;
                matmul(&matmul(&self.basis_inverse, &self.rotation(), l), &self.basis, l)
            }
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        matvec(&self.rep_matrix(), z)
    }

    /// `‖PQ − I‖_F`.
    pub fn basis_defect(&self) -> f64 {
        let l = self.latent_dim;
        let pq = matmul(&self.basis, &self.basis_inverse, l);
        pq.iter().zip(identity(l)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// `ẑₐ = rep_matrix(rep) · z`.
pub fn apply_action(rep: &ActionRepresentation, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != rep.latent_dim {
        return Err(Error::InvalidArgument(format!("code of length {} for a {}-dim representation", z.len(), rep.latent_dim)));
    }
    Ok(rep.apply(z))
}

/// Rotation angle carried by a representation, in `[0, π]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleEstimate {
    pub angle: f64,
    /// Set when the generic block is not rotation-like (eigenvalues off the
    /// unit circle by more than 0.1, or real).
    pub flagged: bool,
}

pub fn extract_angle(rep: &ActionRepresentation) -> AngleEstimate {
    match rep.kind {
        RepKind::Cyclic => AngleEstimate { angle: wrap_angle(rep.theta).abs(), flagged: false },
        RepKind::Generic => {
            let l = rep.latent_dim;
            let (i, j) = rep.block;
            let m = &rep.matrix;
            block_angle([m[i * l + i], m[i * l + j], m[j * l + i], m[j * l + j]])
        }
    }
}

/// Angle of a 2×2 block `[a, b, c, d]` (row-major) from its eigenvalues.
pub fn block_angle(block: [f64; 4]) -> AngleEstimate {
    let [a, b, c, d] = block;
    let half_tr = (a + d) / 2.0;
    let det = a * d - b * c;
    let disc = det - half_tr * half_tr;
    if disc > 0.0 {
        let modulus = det.sqrt();
        AngleEstimate { angle: disc.sqrt().atan2(half_tr), flagged: (modulus - 1.0).abs() > 0.1 }
    } else {
        // real eigenvalues: report the trace-based angle
        AngleEstimate { angle: half_tr.clamp(-1.0, 1.0).acos(), flagged: disc < -1e-12 || (det - 1.0).abs() > 0.1 }
    }
}

/// Angle of an `l×l` matrix with a single (possibly basis-conjugated) rotation
/// block, via the similarity-invariant trace: `tr = 2cos θ + (l − 2)`.
pub fn angle_from_trace(matrix: &[f64], l: usize) -> f64 {
    let tr: f64 = (0..l).map(|i| matrix[i * l + i]).sum();
    ((tr - (l as f64 - 2.0)) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Decomposition `G = G₁ × … × G_s` with one latent subspace per component.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryStructure {
    /// Group orders; may be non-integer (Flatland's 34/5 = 6.8 cycle).
    pub orders: Vec<f64>,
    /// Latent dimensions owned by each component group.
    pub subspaces: Vec<Vec<usize>>,
}

impl SymmetryStructure {
    pub fn new(orders: Vec<f64>, subspaces: Vec<Vec<usize>>) -> Result<Self> {
        if orders.is_empty() || orders.len() != subspaces.len() {
            return Err(Error::InvalidArgument("need at least one group and one subspace per group".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for d in subspaces.iter().flatten() {
            if !seen.insert(*d) {
                return Err(Error::InvalidArgument(format!("latent dim {d} assigned to two groups")));
            }
        }
        Ok(Self { orders, subspaces })
    }

    /// Cyclic groups on consecutive latent planes `(0,1), (2,3), …`.
    pub fn cyclic_planes(orders: Vec<f64>) -> Self {
        let subspaces = (0..orders.len()).map(|i| vec![2 * i, 2 * i + 1]).collect();
        Self { orders, subspaces }
    }

    /// Flatland: two cycles of order 34/5 on planes (0,1) and (2,3).
    pub fn flatland() -> Self {
        let order = 2.0 * PI / crate::worlds::Flatland::phase_angle();
        Self::cyclic_planes(vec![order, order])
    }

    pub fn num_groups(&self) -> usize {
        self.orders.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.subspaces.iter().flatten().max().map_or(0, |m| m + 1)
    }

    /// Expected rotation angle of group `i`'s generator, `2π / order`.
    pub fn angle(&self, group: usize) -> f64 {
        2.0 * PI / self.orders[group]
    }
}

/// Learnable representations, one per internal action.
#[derive(Clone, Debug)]
pub struct RepSet<T> {
    pub store: ParamStore<T>,
    entries: Vec<RepEntry>,
    latent_dim: usize,
}

#[derive(Clone, Debug)]
struct RepEntry {
    kind: RepKind,
    block: (usize, usize),
    theta: Option<ParamId>,
    matrix: Option<ParamId>,
    basis: Option<(ParamId, ParamId)>,
}

impl<T: Real> RepSet<T> {
    /// `count` cyclic representations: two per latent plane (cycling through
    /// the planes), random angles in `(0, π)` with alternating signs.
    pub fn cyclic<R: Rng + ?Sized>(count: usize, latent_dim: usize, rng: &mut R) -> Self {
        let planes = (latent_dim / 2).max(1);
        let mut store = ParamStore::new();
        let mut entries = Vec::with_capacity(count);
        for k in 0..count {
            let plane = (k / 2) % planes;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let theta = sign * rng.random_range(0.0..PI);
            let id = store.add(format!("rep{k}.theta"), Tensor::scalar(T::of(theta)));
            entries.push(RepEntry { kind: RepKind::Cyclic, block: (2 * plane, 2 * plane + 1), theta: Some(id), matrix: None, basis: None });
        }
        Self { store, entries, latent_dim }
    }

    /// `count` generic matrices initialised near the identity.
    pub fn generic<R: Rng + ?Sized>(count: usize, latent_dim: usize, rng: &mut R) -> Self {
        let planes = (latent_dim / 2).max(1);
        let mut store = ParamStore::new();
        let mut entries = Vec::with_capacity(count);
        for k in 0..count {
            let plane = (k / 2) % planes;
            let m: Vec<f64> = identity(latent_dim).into_iter().map(|v| v + rng.random_range(-0.01..0.01)).collect();
            let id = store.add(format!("rep{k}.matrix"), Tensor::from_f64([latent_dim, latent_dim], &m).expect("square"));
            entries.push(RepEntry { kind: RepKind::Generic, block: (2 * plane, 2 * plane + 1), theta: None, matrix: Some(id), basis: None });
        }
        Self { store, entries, latent_dim }
    }

    /// Adds a learnable change of basis `(P, Q)` to every cyclic entry,
    /// initialised at the identity.
    pub fn with_learned_basis(mut self) -> Self {
        let l = self.latent_dim;
        for (k, e) in self.entries.iter_mut().enumerate() {
            if e.kind == RepKind::Cyclic {
                let p = self.store.add(format!("rep{k}.basis"), Tensor::eye(l));
                let q = self.store.add(format!("rep{k}.basis_inverse"), Tensor::eye(l));
                e.basis = Some((p, q));
            }
        }
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn block(&self, k: usize) -> (usize, usize) {
        self.entries[k].block
    }

    pub fn set_block(&mut self, k: usize, block: (usize, usize)) {
        self.entries[k].block = block;
    }

    pub fn set_theta(&mut self, k: usize, theta: f64) {
        if let Some(id) = self.entries[k].theta {
            *self.store.value_mut(id) = Tensor::scalar(T::of(theta));
        }
    }

    /// Overwrites the learned `(P, Q)` of entry `k`; no-op without a basis.
    pub fn set_basis(&mut self, k: usize, basis: &[f64], basis_inverse: &[f64]) -> Result<()> {
        if let Some((p, q)) = self.entries[k].basis {
            let l = self.latent_dim;
            *self.store.value_mut(p) = Tensor::from_f64([l, l], basis)?;
            *self.store.value_mut(q) = Tensor::from_f64([l, l], basis_inverse)?;
        }
        Ok(())
    }

    /// Current values of entry `k`.
    pub fn snapshot(&self, k: usize) -> ActionRepresentation {
        let e = &self.entries[k];
        let l = self.latent_dim;
        let mut rep = match e.kind {
            RepKind::Cyclic => {
                let theta = self.store.value(e.theta.expect("cyclic entry has theta")).item().as_f64();
                ActionRepresentation::cyclic(l, e.block, theta)
            }
            RepKind::Generic => ActionRepresentation::generic(l, e.block, self.store.value(e.matrix.expect("generic entry")).to_f64_vec()),
        };
        if let Some((p, q)) = e.basis {
            rep = rep.with_basis(self.store.value(p).to_f64_vec(), self.store.value(q).to_f64_vec());
        }
        rep
    }

    pub fn snapshots(&self) -> Vec<ActionRepresentation> {
        (0..self.len()).map(|k| self.snapshot(k)).collect()
    }

    /// Differentiable `l×l` matrix of entry `k`.
    pub fn matrix_graph(&self, g: &mut Graph<T>, b: &Binding, k: usize) -> Result<Var> {
        let e = &self.entries[k];
        let l = self.latent_dim;
        match e.kind {
            RepKind::Generic => Ok(b.var(e.matrix.expect("generic entry"))),
            RepKind::Cyclic => {
                // I + (cos θ − 1)·A + sin θ·B with A, B fixed plane selectors
                let theta = b.var(e.theta.expect("cyclic entry"));
                let (i, j) = e.block;
                let mut a = vec![0.0; l * l];
                a[i * l + i] = 1.0;
                a[j * l + j] = 1.0;
                let mut bm = vec![0.0; l * l];
                bm[i * l + j] = -1.0;
                bm[j * l + i] = 1.0;
                let eye = g.constant(Tensor::eye(l));
                let a = g.constant(Tensor::from_f64([l, l], &a)?);
                let bm = g.constant(Tensor::from_f64([l, l], &bm)?);
                let c = g.cos(theta);
                let c = g.add_scalar(c, -1.0);
                let s = g.sin(theta);
                let ca = g.mul(c, a)?;
                let sb = g.mul(s, bm)?;
                let rot = g.add(eye, ca)?;
                let rot = g.add(rot, sb)?;
                match e.basis {
                    None => Ok(rot),
                    Some((p, q)) => {
                        let qr = g.matmul(b.var(q), rot)?;
                        Ok(g.matmul(qr, b.var(p))?)
                    }
                }
            }
        }
    }

    /// `‖PQ − I‖²_F` summed over entries with a learned basis.
    pub fn basis_penalty_graph(&self, g: &mut Graph<T>, b: &Binding) -> Result<Option<Var>> {
        let mut total: Option<Var> = None;
        for e in &self.entries {
            if let Some((p, q)) = e.basis {
                let pq = g.matmul(b.var(p), b.var(q))?;
                let eye = g.constant(Tensor::eye(self.latent_dim));
                let d = g.sub(pq, eye)?;
                let d2 = g.square(d);
                let s = g.sum(d2);
                total = Some(match total {
                    None => s,
                    Some(t) => g.add(t, s)?,
                });
            }
        }
        Ok(total)
    }

    /// `weight · Σₖ ‖Mₖ − I‖²_F`.
    pub fn identity_decay_graph(&self, g: &mut Graph<T>, b: &Binding, weight: f64) -> Result<Var> {
        let mut terms = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let m = self.matrix_graph(g, b, k)?;
            let eye = g.constant(Tensor::eye(self.latent_dim));
            let d = g.sub(m, eye)?;
            let d2 = g.square(d);
            let s = g.sum(d2);
            terms.push(g.reshape(s, &[1])?);
        }
        let all = g.concat(&terms, 0)?;
        let total = g.sum(all);
        Ok(g.scale(total, weight))
    }
}

/// `weight · Σₖ ‖rep_matrix(repₖ) − I‖²_F`.
pub fn identity_decay_loss(reps: &[ActionRepresentation], weight: f64) -> f64 {
    weight
        * reps
            .iter()
            .map(|r| r.rep_matrix().iter().zip(identity(r.latent_dim)).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>()
}
