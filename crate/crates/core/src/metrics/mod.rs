//! Disentanglement metrics.
//!
//! All functions here are pure: latent codes come in as `Vec<f64>` rows and
//! factors as integer tuples, so any model (or a synthetic code) can be scored.

mod classify;
mod info;

use rand::Rng;

use crate::error::{Error, Result};
use crate::worlds::{ActionLabel, Image, World};

pub use classify::{beta_metric, dci_disentanglement, dci_from_importance, lasso, sap, BetaConfig};
pub use info::{factor_leakage, mig, modularity, mutual_info_table, MiTable};

/// Per-sample latent displacements `z − zₐ`, indexed `[group][generator]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSample {
    pub deltas: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Independence {
    pub score: f64,
    /// Zero-length deltas left out of the cosine comparisons.
    pub skipped: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `1 − (1 / s(s−1)) Σ_{i≠j} E[max_{a∈Gᵢ, b∈Gⱼ} |cos(Δₐ, Δ_b)|]`.
///
/// For two groups this is the `1/2` (= `1/s!`) normalisation.
pub fn independence_score(samples: &[MetricSample]) -> Result<Independence> {
    let s = samples.first().map_or(0, |m| m.deltas.len());
    if s < 2 {
        return Err(Error::InvalidArgument("independence needs at least two groups".into()));
    }
    let mut skipped = 0;
    let mut sums = vec![0.0; s * s];
    let mut counts = vec![0usize; s * s];
    for sample in samples {
        if sample.deltas.len() != s {
            return Err(Error::InvalidArgument("samples disagree on the number of groups".into()));
        }
        let unit: Vec<Vec<Vec<f64>>> = sample
            .deltas
            .iter()
            .map(|group| {
                group
                    .iter()
                    .filter_map(|d| {
                        let n = norm(d);
                        if n > 0.0 {
                            Some(d.iter().map(|x| x / n).collect())
                        } else {
                            skipped += 1;
                            None
                        }
                    })
                    .collect()
            })
            .collect();
        for i in 0..s {
            for j in 0..s {
                if i == j || unit[i].is_empty() || unit[j].is_empty() {
                    continue;
                }
                let mut best: f64 = 0.0;
                for a in &unit[i] {
                    for b in &unit[j] {
                        let c: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                        best = best.max(c.abs().min(1.0));
                    }
                }
                sums[i * s + j] += best;
                counts[i * s + j] += 1;
            }
        }
    }
    let mut total = 0.0;
    for i in 0..s {
        for j in 0..s {
            if i == j {
                continue;
            }
            if counts[i * s + j] == 0 {
                return Err(Error::Degenerate(format!("no non-zero deltas for groups {i} and {j}")));
            }
            total += sums[i * s + j] / counts[i * s + j] as f64;
        }
    }
    Ok(Independence { score: 1.0 - total / (s * (s - 1)) as f64, skipped })
}

/// Deltas `μ(s) − μ(step(s, a))` for every generator and inverse at each of
/// the given states. `code` maps a batch of factor tuples to codes.
pub fn delta_samples<W, F>(world: &W, states: &[Vec<usize>], mut code: F) -> Result<Vec<MetricSample>>
where
    W: World + ?Sized,
    F: FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>>,
{
    let actions = ActionLabel::all(world.num_factors());
    let mut batch = Vec::with_capacity(states.len() * (actions.len() + 1));
    for s in states {
        batch.push(s.clone());
        for &a in &actions {
            batch.push(world.step(s, a)?);
        }
    }
    let codes = code(&batch)?;
    let stride = actions.len() + 1;
    Ok(codes
        .chunks(stride)
        .map(|chunk| {
            let z = &chunk[0];
            let mut deltas = vec![Vec::new(); world.num_factors()];
            for (a, za) in actions.iter().zip(&chunk[1..]) {
                deltas[a.factor].push(z.iter().zip(za).map(|(x, y)| x - y).collect());
            }
            MetricSample { deltas }
        })
        .collect())
}

/// Mean Euclidean distance between randomly paired codes (each code paired
/// with a uniformly chosen different code, at least 1000 pairs).
pub fn mean_pairwise_distance<R: Rng + ?Sized>(codes: &[Vec<f64>], rng: &mut R) -> Result<f64> {
    let n = codes.len();
    if n < 2 {
        return Err(Error::InvalidArgument("expected distance needs at least two codes".into()));
    }
    let pairs = n.max(1000);
    let mut total = 0.0;
    for p in 0..pairs {
        let i = p % n;
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        total += codes[i].iter().zip(&codes[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    }
    let mean = total / pairs as f64;
    if mean <= 0.0 {
        return Err(Error::Degenerate("all latent codes coincide".into()));
    }
    Ok(mean)
}

/// Mean latent error divided by the expected distance between codes.
pub fn relative_latent_error<R: Rng + ?Sized>(errors: &[f64], codes: &[Vec<f64>], rng: &mut R) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("no latent errors given".into()));
    }
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok(mean / mean_pairwise_distance(codes, rng)?)
}

/// Mean `|α̂ − α|`.
pub fn alpha_error(estimates: &[f64], truth: &[f64]) -> f64 {
    estimates.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / estimates.len().max(1) as f64
}

/// Mean L1 error per step count `k = 1..=max_steps` between the initial code
/// pushed through `k` true-action representations and the encoding of the
/// true `k`-step observation.
pub fn temporal_consistency<W, R, E, A>(
    world: &W,
    mut encode: E,
    apply: A,
    max_steps: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    W: World + ?Sized,
    R: Rng + ?Sized,
    E: FnMut(&[Image]) -> Result<Vec<Vec<f64>>>,
    A: Fn(&[f64], ActionLabel) -> Vec<f64>,
{
    let mut curve = vec![0.0; max_steps];
    for _ in 0..n {
        let mut state = world.random_state(rng);
        let mut images = vec![world.render(&state)?];
        let mut actions = Vec::with_capacity(max_steps);
        for _ in 0..max_steps {
            let a = ActionLabel::from_index(rng.random_range(0..world.num_actions()));
            state = world.step(&state, a)?;
            images.push(world.render(&state)?);
            actions.push(a);
        }
        let codes = encode(&images)?;
        let mut z = codes[0].clone();
        for (k, &a) in actions.iter().enumerate() {
            z = apply(&z, a);
            curve[k] += z.iter().zip(&codes[k + 1]).map(|(x, y)| (x - y).abs()).sum::<f64>();
        }
    }
    Ok(curve.into_iter().map(|c| c / n.max(1) as f64).collect())
}

/// First epoch index whose value reaches `level`.
pub fn tau_threshold(history: &[f64], level: f64) -> Option<usize> {
    history.iter().position(|&v| v >= level)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}
