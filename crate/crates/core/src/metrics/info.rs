use crate::error::{Error, Result};

/// Mutual information (nats) between each latent dim and each factor.
#[derive(Clone, Debug, PartialEq)]
pub struct MiTable {
    /// `mi[d][f]`.
    pub mi: Vec<Vec<f64>>,
    /// Plug-in entropy of each factor.
    pub entropy: Vec<f64>,
}

impl MiTable {
    pub fn num_dims(&self) -> usize {
        self.mi.len()
    }

    pub fn num_factors(&self) -> usize {
        self.entropy.len()
    }

    fn column(&self, f: usize) -> Vec<f64> {
        self.mi.iter().map(|row| row[f]).collect()
    }
}

/// Equal-count bin index per sample; tied values share a bin.
fn equal_count_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut current = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank == 0 || values[i] != values[order[rank - 1]] {
            current = rank * bins / n;
        }
        out[i] = current;
    }
    out
}

fn entropy_of(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

fn plug_in_mi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint = std::collections::BTreeMap::new();
    let mut pa = std::collections::BTreeMap::new();
    let mut pb = std::collections::BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0usize) += 1;
        *pa.entry(x).or_insert(0usize) += 1;
        *pb.entry(y).or_insert(0usize) += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (pa[&x] as f64 * pb[&y] as f64)).ln()
        })
        .sum();
    mi.max(0.0)
}

/// Plug-in MI after discretising each latent dim into `bins` equal-count bins.
pub fn mutual_info_table(latents: &[Vec<f64>], factors: &[Vec<usize>], bins: usize) -> Result<MiTable> {
    if latents.is_empty() || latents.len() != factors.len() {
        return Err(Error::InvalidArgument("latents and factors must be non-empty and the same length".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    let l = latents[0].len();
    let num_factors = factors[0].len();
    let factor_cols: Vec<Vec<usize>> = (0..num_factors).map(|f| factors.iter().map(|r| r[f]).collect()).collect();
    let entropy = factor_cols.iter().map(|c| entropy_of(c)).collect();
    let mi = (0..l)
        .map(|d| {
            let col: Vec<f64> = latents.iter().map(|r| r[d]).collect();
            let binned = equal_count_bins(&col, bins);
            factor_cols.iter().map(|fc| plug_in_mi(&binned, fc)).collect()
        })
        .collect();
    Ok(MiTable { mi, entropy })
}

/// Mean over factors of the normalised gap between the two most informative dims.
pub fn mig(table: &MiTable) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for f in 0..table.num_factors() {
        let h = table.entropy[f];
        if h <= 0.0 {
            continue;
        }
        let mut col = table.column(f);
        col.sort_by(|a, b| b.total_cmp(a));
        let second = col.get(1).copied().unwrap_or(0.0);
        total += ((col[0] - second) / h).clamp(0.0, 1.0);
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// `1 − mean_k C_k` of the sorted cumulative normalised MI curve, averaged
/// over factors. Lower is better.
pub fn factor_leakage(table: &MiTable) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for f in 0..table.num_factors() {
        let mut col = table.column(f);
        let mass: f64 = col.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        col.sort_by(|a, b| b.total_cmp(a));
        let mut cum = 0.0;
        let mut area = 0.0;
        for v in &col {
            cum += v / mass;
            area += cum;
        }
        total += 1.0 - area / col.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

/// Each dim's deviation from its best single-factor template.
pub fn modularity(table: &MiTable) -> f64 {
    let nf = table.num_factors();
    if nf < 2 {
        return 1.0;
    }
    let mut total = 0.0;
    let mut counted = 0;
    for row in &table.mi {
        let (best, theta) = row.iter().enumerate().fold((0, 0.0f64), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if theta <= 0.0 {
            continue;
        }
        let dev: f64 = row.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, v)| v * v).sum();
        total += 1.0 - dev / (theta * theta * (nf - 1) as f64);
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}
