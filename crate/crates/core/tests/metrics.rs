use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use symlin_core::metrics::{
    beta_metric, dci_disentanglement, delta_samples, factor_leakage, independence_score, mig, modularity, mutual_info_table,
    relative_latent_error, sap, spearman, tau_threshold, temporal_consistency, BetaConfig, MiTable,
};
use symlin_core::worlds::{ActionLabel, Flatland, Image, World};

const ALPHA: f64 = 2.0 * std::f64::consts::PI * 5.0 / 34.0;

/// Agent coordinates recovered from the centroid of the lit pixels.
fn locate(image: &Image) -> (f64, f64) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for r in 0..image.height {
        for c in 0..image.width {
            if image.get(r, c) > 0.5 {
                sx += c as f64;
                sy += r as f64;
                n += 1.0;
            }
        }
    }
    (sx / n - 15.0, sy / n - 15.0)
}

/// Each factor on its own circle, one step of 5 px turning it by α.
fn circle_code(x: f64, y: f64) -> Vec<f64> {
    let (ax, ay) = (x * ALPHA / 5.0, y * ALPHA / 5.0);
    vec![ax.cos(), ax.sin(), ay.cos(), ay.sin()]
}

fn grid_factors() -> Vec<Vec<usize>> {
    (0..2000).map(|i| vec![(i / 2) % 4, (i / 8) % 5]).collect()
}

fn exact_mi(joint: &[Vec<usize>]) -> f64 {
    let n: usize = joint.iter().flatten().sum();
    let n = n as f64;
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum::<usize>() as f64 / n).collect();
    let cols: Vec<f64> = (0..joint[0].len()).map(|j| joint.iter().map(|r| r[j]).sum::<usize>() as f64 / n).collect();
    let mut mi = 0.0;
    for (i, r) in joint.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p / (rows[i] * cols[j])).ln();
            }
        }
    }
    mi
}

#[test]
fn mi_matches_enumerated_joints() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let (a, b) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let joint: Vec<Vec<usize>> = (0..a).map(|_| (0..b).map(|_| rng.random_range(0..6)).collect()).collect();
        let mut latents = Vec::new();
        let mut factors = Vec::new();
        for (i, row) in joint.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    latents.push(vec![i as f64]);
                    factors.push(vec![j]);
                }
            }
        }
        // one bin per sample so every latent value keeps its own bin
        let table = mutual_info_table(&latents, &factors, latents.len()).unwrap();
        assert!((table.mi[0][0] - exact_mi(&joint)).abs() < 1e-6);
    }
}

#[test]
fn copied_factor_carries_its_full_entropy() {
    let factors: Vec<Vec<usize>> = (0..4000).map(|i| vec![i % 4]).collect();
    let latents: Vec<Vec<f64>> = factors.iter().map(|f| vec![f[0] as f64]).collect();
    let table = mutual_info_table(&latents, &factors, 20).unwrap();
    assert!((table.mi[0][0] - 4f64.ln()).abs() < 1e-9);
    assert!((table.entropy[0] - 4f64.ln()).abs() < 1e-9);
}

#[test]
fn noise_dims_carry_almost_no_information() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let factors: Vec<Vec<usize>> = (0..10_000).map(|_| vec![rng.random_range(0..4)]).collect();
    let latents: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.random()]).collect();
    let table = mutual_info_table(&latents, &factors, 20).unwrap();
    assert!(table.mi[0][0] < 0.05);
}

#[test]
fn perfect_codes_score_perfectly() {
    let factors = grid_factors();
    let latents: Vec<Vec<f64>> = factors.iter().map(|f| vec![f[0] as f64, f[1] as f64]).collect();
    let table = mutual_info_table(&latents, &factors, 20).unwrap();
    assert!((mig(&table) - 1.0).abs() < 1e-9);
    assert!(factor_leakage(&table).abs() < 1e-9);
    assert!((modularity(&table) - 1.0).abs() < 1e-9);
    assert!((dci_disentanglement(&latents, &factors, 0.01).unwrap() - 1.0).abs() < 1e-6);
    // the runner-up dim sits at chance, so each factor's gap is 1 − 1/K
    let chance_gap = ((1.0 - 1.0 / 4.0) + (1.0 - 1.0 / 5.0)) / 2.0;
    assert!((sap(&latents, &factors).unwrap() - chance_gap).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let world = Flatland;
    let beta = beta_metric(&world, |s| Ok(s.iter().map(|f| vec![f[0] as f64, f[1] as f64]).collect()), &BetaConfig::default(), &mut rng).unwrap();
    assert_eq!(beta, 1.0);

    let states: Vec<Vec<usize>> = world.all_states().into_iter().step_by(7).collect();
    let samples = delta_samples(&world, &states, |s| Ok(s.iter().map(|f| circle_code(f[0] as f64, f[1] as f64)).collect())).unwrap();
    assert!((independence_score(&samples).unwrap().score - 1.0).abs() < 1e-12);
}

#[test]
fn random_codes_score_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let factors = grid_factors();
    let latents: Vec<Vec<f64>> = factors.iter().map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let table = mutual_info_table(&latents, &factors, 20).unwrap();
    assert!(mig(&table) < 0.1);
    let mut noise = ChaCha8Rng::seed_from_u64(4);
    let beta = beta_metric(
        &Flatland,
        |s| Ok(s.iter().map(|_| (0..4).map(|_| noise.sample(StandardNormal)).collect()).collect()),
        &BetaConfig::default(),
        &mut rng,
    )
    .unwrap();
    // chance is 1/2 with two factors; 0.1 is over three standard errors at 300 votes
    assert!((beta - 0.5).abs() < 0.1, "{beta}");
}

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|a| a / norm).collect());
    }
    q
}

#[test]
fn independence_is_invariant_to_global_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random_orthogonal(4, &mut rng);
    let world = Flatland;
    let mix = [[1.0, 0.3, 0.0, 0.2], [0.1, 1.0, 0.4, 0.0], [0.0, 0.5, 1.0, 0.1], [0.3, 0.0, 0.2, 1.0]];
    let code = |f: &Vec<usize>| -> Vec<f64> {
        let c = circle_code(f[0] as f64, f[1] as f64);
        mix.iter().map(|row| row.iter().zip(&c).map(|(a, b)| a * b).sum()).collect()
    };
    let states: Vec<Vec<usize>> = (0..150).map(|_| world.random_state(&mut rng)).collect();
    let plain = delta_samples(&world, &states, |s| Ok(s.iter().map(code).collect())).unwrap();
    let rotated = delta_samples(&world, &states, |s| {
        Ok(s.iter().map(|f| {
            let c = code(f);
            q.iter().map(|row| row.iter().zip(&c).map(|(a, b)| a * b).sum()).collect()
        })
        .collect())
    })
    .unwrap();
    let a = independence_score(&plain).unwrap().score;
    let b = independence_score(&rotated).unwrap().score;
    assert!(a < 0.99 && (a - b).abs() < 1e-9, "{a} {b}");
}

#[test]
fn metrics_ignore_latent_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let factors = grid_factors();
    let latents: Vec<Vec<f64>> = factors
        .iter()
        .map(|f| {
            let n: f64 = rng.sample(StandardNormal);
            vec![f[0] as f64 + 0.3 * n, f[1] as f64 * 0.5 + f[0] as f64 * 0.2, rng.sample(StandardNormal), n]
        })
        .collect();
    let permuted: Vec<Vec<f64>> = latents.iter().map(|z| vec![z[2], z[0], z[3], z[1]]).collect();
    let (t1, t2) = (mutual_info_table(&latents, &factors, 20).unwrap(), mutual_info_table(&permuted, &factors, 20).unwrap());
    for (a, b) in [
        (mig(&t1), mig(&t2)),
        (factor_leakage(&t1), factor_leakage(&t2)),
        (modularity(&t1), modularity(&t2)),
        (sap(&latents, &factors).unwrap(), sap(&permuted, &factors).unwrap()),
        (dci_disentanglement(&latents, &factors, 0.01).unwrap(), dci_disentanglement(&permuted, &factors, 0.01).unwrap()),
    ] {
        assert!((0.0..=1.0).contains(&a) && (a - b).abs() < 1e-6, "{a} {b}");
    }
}

#[test]
fn relative_error_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let codes: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
    assert_eq!(relative_latent_error(&[0.0; 10], &codes, &mut rng).unwrap(), 0.0);
    let expected = symlin_core::metrics::mean_pairwise_distance(&codes, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let r = relative_latent_error(&[expected; 10], &codes, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert!((r - 1.0).abs() < 1e-12);
    assert!(relative_latent_error(&[1.0], &vec![vec![1.0, 2.0]; 5], &mut rng).is_err());
}

#[test]
fn temporal_curves_for_identity_and_oracle_reps() {
    let world = Flatland;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let constant = temporal_consistency(&world, |ims| Ok(vec![vec![1.0, 2.0]; ims.len()]), |z, _| z.to_vec(), 5, 20, &mut rng).unwrap();
    assert_eq!(constant, vec![0.0; 5]);
    let oracle = temporal_consistency(
        &world,
        |ims| Ok(ims.iter().map(|im| { let (x, y) = locate(im); circle_code(x, y) }).collect()),
        |z, a: ActionLabel| {
            let t = a.direction.sign() as f64 * ALPHA;
            let (c, s) = (t.cos(), t.sin());
            let mut out = z.to_vec();
            let (i, j) = (2 * a.factor, 2 * a.factor + 1);
            out[i] = c * z[i] - s * z[j];
            out[j] = s * z[i] + c * z[j];
            out
        },
        5,
        50,
        &mut rng,
    )
    .unwrap();
    assert!(oracle.iter().all(|&e| e < 1e-9), "{oracle:?}");
}

#[test]
fn tau_threshold_examples() {
    assert_eq!(tau_threshold(&[0.5, 0.96, 0.2], 0.95), Some(1));
    assert_eq!(tau_threshold(&[0.5, 0.6], 0.95), None);
}

fn table_strategy() -> impl Strategy<Value = MiTable> {
    (proptest::collection::vec(proptest::collection::vec(0.0..1.0f64, 2), 4), proptest::collection::vec(1.0..2.0f64, 2))
        .prop_map(|(mi, entropy)| MiTable { mi, entropy })
}

proptest! {
    #[test]
    fn table_metrics_stay_in_unit_range(table in table_strategy()) {
        for v in [mig(&table), factor_leakage(&table), modularity(&table)] {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn concentrating_information_lowers_leakage(mut table in table_strategy(), share in 0.05..0.95f64) {
        // sort dims by MI on factor 0 so that dims 0 and 1 are the top two
        table.mi.sort_by(|a, b| b[0].total_cmp(&a[0]));
        prop_assume!(table.mi[1][0] > 1e-3);
        let before = factor_leakage(&table);
        let moved = table.mi[1][0] * share;
        table.mi[0][0] += moved;
        table.mi[1][0] -= moved;
        prop_assert!(factor_leakage(&table) < before);
    }

    #[test]
    fn spearman_matches_rank_difference_formula(values in proptest::collection::hash_set(-1000i32..1000, 3..30), seed in any::<u64>()) {
        let a: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = a.clone();
        for i in (1..b.len()).rev() {
            b.swap(i, rng.random_range(0..=i));
        }
        let rank = |v: &[f64], x: f64| v.iter().filter(|&&y| y < x).count() as f64;
        let n = a.len() as f64;
        let d2: f64 = a.iter().zip(&b).map(|(&x, &y)| (rank(&a, x) - rank(&b, y)).powi(2)).sum();
        let oracle = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        prop_assert!((spearman(&a, &b).unwrap() - oracle).abs() < 1e-9);
    }
}
