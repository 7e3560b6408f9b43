//! Synthetic latent oracles shared by the probe and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use symlin_core::metrics::{independence_score, MetricSample};
use symlin_core::symrep::{identity, matmul, ActionRepresentation, ProbePair, ProbeReport};

pub const ALPHA: f64 = 2.0 * PI * 5.0 / 34.0;

pub fn random_matrix(l: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..l * l).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Gram–Schmidt on the rows of a random matrix.
pub fn random_orthogonal(l: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    while rows.len() < l {
        let mut v: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows.concat()
}

pub fn transpose(m: &[f64], l: usize) -> Vec<f64> {
    (0..l * l).map(|k| m[(k % l) * l + k / l]).collect()
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn inverse(m: &[f64], l: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    let mut inv = identity(l);
    for c in 0..l {
        let p = (c..l).max_by(|&i, &j| a[i * l + c].abs().total_cmp(&a[j * l + c].abs())).unwrap();
        for k in 0..l {
            a.swap(c * l + k, p * l + k);
            inv.swap(c * l + k, p * l + k);
        }
        let d = a[c * l + c];
        for k in 0..l {
            a[c * l + k] /= d;
            inv[c * l + k] /= d;
        }
        for r in 0..l {
            if r != c {
                let f = a[r * l + c];
                for k in 0..l {
                    a[r * l + k] -= f * a[c * l + k];
                    inv[r * l + k] -= f * inv[c * l + k];
                }
            }
        }
    }
    inv
}

pub fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let l = v.len();
    (0..l).map(|i| (0..l).map(|j| m[i * l + j] * v[j]).sum()).collect()
}

/// Matrix exponential by scaling and squaring of a Taylor series.
pub fn expm(m: &[f64], l: usize) -> Vec<f64> {
    let scaled: Vec<f64> = m.iter().map(|v| v / 1024.0).collect();
    let mut term = identity(l);
    let mut sum = identity(l);
    for k in 1..20 {
        term = matmul(&term, &scaled, l).into_iter().map(|v| v / k as f64).collect();
        sum.iter_mut().zip(&term).for_each(|(s, t)| *s += t);
    }
    for _ in 0..10 {
        sum = matmul(&sum, &sum, l);
    }
    sum
}

/// Codes on a product of circles viewed through a random invertible basis,
/// with each generator an exact conjugated rotation of `theta`.
pub fn oracle_pairs(theta: f64, n: usize, rng: &mut ChaCha8Rng) -> (Vec<ProbePair>, Vec<Vec<f64>>) {
    let l = 4;
    let basis = random_matrix(l, rng);
    let basis_inv = inverse(&basis, l);
    let mut mats = Vec::new();
    for action in 0..4 {
        let block = if action < 2 { (0, 1) } else { (2, 3) };
        let sign = if action % 2 == 0 { 1.0 } else { -1.0 };
        let rot = ActionRepresentation::cyclic(l, block, sign * theta).rotation();
        mats.push(matmul(&matmul(&basis, &rot, l), &basis_inv, l));
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        let (a, b) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
        let z = matvec(&basis, &[a.cos(), a.sin(), b.cos(), b.sin()]);
        let action = i % 4;
        pairs.push(ProbePair { z_post: matvec(&mats[action], &z), z, action });
    }
    (pairs, mats)
}

/// Each generator an independent random rotation of the whole space, so
/// both groups act on every latent direction.
pub fn anti_oracle_pairs(n: usize, rng: &mut ChaCha8Rng) -> Vec<ProbePair> {
    let l = 4;
    let gens: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let a = random_matrix(l, rng);
            let skew: Vec<f64> = (0..l * l).map(|k| a[k] - a[(k % l) * l + k / l]).collect();
            expm(&skew, l)
        })
        .collect();
    let mats: Vec<Vec<f64>> = gens.iter().flat_map(|g| [g.clone(), transpose(g, l)]).collect();
    (0..n)
        .map(|i| {
            let z: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
            let action = i % 4;
            ProbePair { z_post: matvec(&mats[action], &z), z, action }
        })
        .collect()
}

/// Independence of the deltas the fitted probe predicts for every action.
pub fn probe_independence(report: &ProbeReport, pairs: &[ProbePair]) -> f64 {
    let samples: Vec<MetricSample> = pairs
        .iter()
        .step_by(4)
        .map(|p| {
            let delta = |a: usize| -> Vec<f64> { report.predict(&p.z, a).unwrap().iter().zip(&p.z).map(|(x, y)| y - x).collect() };
            MetricSample { deltas: vec![vec![delta(0), delta(1)], vec![delta(2), delta(3)]] }
        })
        .collect();
    independence_score(&samples).unwrap().score
}
