use rand::Rng;

use crate::error::{Error, Result};
use crate::worlds::World;

#[derive(Clone, Debug, PartialEq)]
pub struct BetaConfig {
    pub train_votes: usize,
    pub test_votes: usize,
    /// Pairs averaged per vote.
    pub batch: usize,
    pub iters: usize,
    pub lr: f64,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self { train_votes: 500, test_votes: 300, batch: 64, iters: 500, lr: 0.5 }
    }
}

/// Column-wise standardisation fitted on `rows`; constant columns map to 0.
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len() as f64;
        let l = rows[0].len();
        let mean: Vec<f64> = (0..l).map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n).collect();
        let scale = (0..l)
            .map(|d| {
                let var = rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    1.0 / var.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) * s).collect()
    }
}

/// Multinomial logistic regression by full-batch gradient descent.
struct Softmax {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Softmax {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.w.iter().zip(&self.b).map(|(w, b)| w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b).collect()
    }

    fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        (0..s.len()).fold(0, |best, i| if s[i] > s[best] { i } else { best })
    }

    fn train(xs: &[Vec<f64>], ys: &[usize], classes: usize, iters: usize, lr: f64) -> Self {
        let l = xs[0].len();
        let n = xs.len() as f64;
        let mut model = Self { w: vec![vec![0.0; l]; classes], b: vec![0.0; classes] };
        for _ in 0..iters {
            let mut gw = vec![vec![0.0; l]; classes];
            let mut gb = vec![0.0; classes];
            for (x, &y) in xs.iter().zip(ys) {
                let s = model.scores(x);
                let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..classes {
                    let g = e[c] / z - f64::from(u8::from(c == y));
                    gb[c] += g;
                    for d in 0..l {
                        gw[c][d] += g * x[d];
                    }
                }
            }
            for c in 0..classes {
                model.b[c] -= lr * gb[c] / n;
                for d in 0..l {
                    model.w[c][d] -= lr * gw[c][d] / n;
                }
            }
        }
        model
    }
}

/// Higgins et al. vote protocol: each vote fixes one factor across a batch of
/// pairs, averages `|z₁ − z₂|`, and a linear classifier predicts the fixed
/// factor. Returns held-out accuracy. `code` maps factor tuples to codes.
pub fn beta_metric<W, R, F>(world: &W, mut code: F, config: &BetaConfig, rng: &mut R) -> Result<f64>
where
    W: World + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&[Vec<usize>]) -> Result<Vec<Vec<f64>>>,
{
    let nf = world.num_factors();
    if nf < 2 {
        return Err(Error::InvalidArgument("beta metric needs at least two factors".into()));
    }
    let mut vote = |rng: &mut R| -> Result<(Vec<f64>, usize)> {
        let k = rng.random_range(0..nf);
        let mut states = Vec::with_capacity(2 * config.batch);
        for _ in 0..config.batch {
            let a = world.random_state(rng);
            let mut b = world.random_state(rng);
            b[k] = a[k];
            states.push(a);
            states.push(b);
        }
        let codes = code(&states)?;
        let l = codes[0].len();
        let mut feature = vec![0.0; l];
        for pair in codes.chunks(2) {
            for d in 0..l {
                feature[d] += (pair[0][d] - pair[1][d]).abs() / config.batch as f64;
            }
        }
        Ok((feature, k))
    };
    let mut train = Vec::with_capacity(config.train_votes);
    for _ in 0..config.train_votes {
        train.push(vote(rng)?);
    }
    let mut test = Vec::with_capacity(config.test_votes);
    for _ in 0..config.test_votes {
        test.push(vote(rng)?);
    }
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<usize> = train.iter().map(|(_, y)| *y).collect();
    let std = Standardizer::fit(&xs);
    let xs: Vec<Vec<f64>> = xs.iter().map(|x| std.apply(x)).collect();
    let model = Softmax::train(&xs, &ys, nf, config.iters, config.lr);
    let correct = test.iter().filter(|(x, y)| model.predict(&std.apply(x)) == *y).count();
    Ok(correct as f64 / test.len().max(1) as f64)
}

/// Balanced accuracy of a nearest-class-mean rule on one latent dim, fitted on
/// even-indexed samples and scored on odd-indexed ones.
fn balanced_accuracy_1d(values: &[f64], labels: &[usize]) -> f64 {
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sum = vec![0.0; classes];
    let mut count = vec![0usize; classes];
    for i in (0..values.len()).step_by(2) {
        sum[labels[i]] += values[i];
        count[labels[i]] += 1;
    }
    let means: Vec<Option<f64>> = sum.iter().zip(&count).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect();
    let mut hits = vec![0usize; classes];
    let mut seen = vec![0usize; classes];
    for i in (1..values.len()).step_by(2) {
        let pred = means
            .iter()
            .enumerate()
            .filter_map(|(c, m)| m.map(|m| (c, (values[i] - m).abs())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c);
        seen[labels[i]] += 1;
        if pred == Some(labels[i]) {
            hits[labels[i]] += 1;
        }
    }
    let present: Vec<f64> = hits.iter().zip(&seen).filter(|(_, &s)| s > 0).map(|(&h, &s)| h as f64 / s as f64).collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Mean over factors of the gap between the two best single-dim predictors.
pub fn sap(latents: &[Vec<f64>], factors: &[Vec<usize>]) -> Result<f64> {
    if latents.len() < 4 || latents.len() != factors.len() {
        return Err(Error::InvalidArgument("sap needs at least four paired samples".into()));
    }
    let l = latents[0].len();
    let nf = factors[0].len();
    let mut total = 0.0;
    for f in 0..nf {
        let labels: Vec<usize> = factors.iter().map(|r| r[f]).collect();
        let mut scores: Vec<f64> = (0..l)
            .map(|d| {
                let col: Vec<f64> = latents.iter().map(|r| r[d]).collect();
                balanced_accuracy_1d(&col, &labels)
            })
            .collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        total += scores[0] - scores.get(1).copied().unwrap_or(0.0);
    }
    Ok(total / nf as f64)
}

/// Lasso `min (1/2n)‖y − Xw‖² + α‖w‖₁` by coordinate descent on the Gram
/// matrix. Inputs should be centred.
pub fn lasso(xs: &[Vec<f64>], ys: &[f64], alpha: f64, sweeps: usize) -> Vec<f64> {
    let n = xs.len() as f64;
    let l = xs.first().map_or(0, Vec::len);
    let mut gram = vec![0.0; l * l];
    let mut xty = vec![0.0; l];
    for (x, &y) in xs.iter().zip(ys) {
        for i in 0..l {
            xty[i] += x[i] * y / n;
            for j in 0..l {
                gram[i * l + j] += x[i] * x[j] / n;
            }
        }
    }
    lasso_gram(&gram, &xty, alpha, sweeps)
}

fn lasso_gram(gram: &[f64], xty: &[f64], alpha: f64, sweeps: usize) -> Vec<f64> {
    let l = xty.len();
    let mut w = vec![0.0; l];
    for _ in 0..sweeps {
        let mut change: f64 = 0.0;
        for j in 0..l {
            let a = gram[j * l + j];
            if a <= 0.0 {
                continue;
            }
            let rho = xty[j] - (0..l).filter(|&k| k != j).map(|k| gram[j * l + k] * w[k]).sum::<f64>();
            let next = rho.signum() * (rho.abs() - alpha).max(0.0) / a;
            change = change.max((next - w[j]).abs());
            w[j] = next;
        }
        if change < 1e-10 {
            break;
        }
    }
    w
}

/// Importance-weighted mean of `1 − H(P_d)/log F` over dims, where `P_d` is
/// dim `d`'s normalised importance over factors. `importance[d][f]`.
pub fn dci_from_importance(importance: &[Vec<f64>]) -> f64 {
    let nf = importance.first().map_or(0, Vec::len);
    let grand: f64 = importance.iter().flatten().sum();
    if grand <= 0.0 {
        return 0.0;
    }
    importance
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            let d = if nf < 2 {
                1.0
            } else {
                let h: f64 = row.iter().map(|r| r / total).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
                1.0 - h / (nf as f64).ln()
            };
            d * total / grand
        })
        .sum()
}

/// DCI disentanglement with importances from one-vs-rest Lasso predictors on
/// standardised latents (importance of dim `d` for factor `f` is the summed
/// absolute weight over that factor's classes).
pub fn dci_disentanglement(latents: &[Vec<f64>], factors: &[Vec<usize>], alpha: f64) -> Result<f64> {
    if latents.len() < 2 || latents.len() != factors.len() {
        return Err(Error::InvalidArgument("dci needs at least two paired samples".into()));
    }
    let std = Standardizer::fit(latents);
    let xs: Vec<Vec<f64>> = latents.iter().map(|x| std.apply(x)).collect();
    let n = xs.len() as f64;
    let l = xs[0].len();
    let mut gram = vec![0.0; l * l];
    for x in &xs {
        for i in 0..l {
            for j in 0..l {
                gram[i * l + j] += x[i] * x[j] / n;
            }
        }
    }
    let nf = factors[0].len();
    let mut importance = vec![vec![0.0; nf]; l];
    for f in 0..nf {
        let labels: Vec<usize> = factors.iter().map(|r| r[f]).collect();
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        for c in 0..classes {
            let prior = labels.iter().filter(|&&y| y == c).count() as f64 / n;
            if prior == 0.0 || prior == 1.0 {
                continue;
            }
            let mut xty = vec![0.0; l];
            for (x, &y) in xs.iter().zip(&labels) {
                let t = f64::from(u8::from(y == c)) - prior;
                for i in 0..l {
                    xty[i] += x[i] * t / n;
                }
            }
            // scale-free targets: one-vs-rest indicator normalised by its std
            let sd = (prior * (1.0 - prior)).sqrt();
            let xty: Vec<f64> = xty.iter().map(|v| v / sd).collect();
            for (d, w) in lasso_gram(&gram, &xty, alpha, 500).into_iter().enumerate() {
                importance[d][f] += w.abs();
            }
        }
    }
    Ok(dci_from_importance(&importance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dci_of_identity_and_uniform() {
        assert!((dci_from_importance(&[vec![1.0, 0.0], vec![0.0, 1.0]]) - 1.0).abs() < 1e-12);
        assert!(dci_from_importance(&[vec![1.0, 1.0], vec![1.0, 1.0]]).abs() < 1e-12);
    }

    #[test]
    fn lasso_recovers_sparse_weights() {
        let xs: Vec<Vec<f64>> = (0..200).map(|i| vec![((i * 7) % 13) as f64 - 6.0, ((i * 5) % 11) as f64 - 5.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0]).collect();
        let w = lasso(&xs, &ys, 1e-6, 1000);
        assert!((w[0] - 2.0).abs() < 1e-3 && w[1].abs() < 1e-3, "{w:?}");
        assert!(lasso(&xs, &ys, 1e6, 10).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sap_of_a_copied_factor() {
        let factors: Vec<Vec<usize>> = (0..200).map(|i| vec![(i / 2) % 4, (i / 8) % 5]).collect();
        let latents: Vec<Vec<f64>> = factors.iter().map(|f| vec![f[0] as f64, f[1] as f64]).collect();
        let s = sap(&latents, &factors).unwrap();
        assert!(s > 0.7, "{s}");
    }
}
