//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Cheap criteria always run. Criteria that train models run only when the
//! binary gets `--ignored` or `--include-ignored`
//! (`cargo test -p symlin-core --test acceptance -- --ignored`); otherwise
//! they print SKIP. `SYMLIN_ACCEPTANCE_EPOCHS` shortens training for smoke
//! runs; verdicts at a reduced budget are not acceptance verdicts.

mod common;
#[path = "../../numgrad/tests/common/mod.rs"]
mod ops;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use symlin_core::harness::{
    dominant_reps, labeled_pairs, parse_noise, run_experiment, Env, ExperimentConfig, Method, Model, RunRow,
};
use symlin_core::metrics::{
    beta_metric, dci_disentanglement, delta_samples, factor_leakage, independence_score, mig, modularity, mutual_info_table,
    spearman, temporal_consistency, BetaConfig,
};
use symlin_core::models::{sample_noise, Variant, VaeConfig};
use symlin_core::rgrvae::{ExploreSpec, RewardMode, Rgrvae, RgrvaeConfig};
use symlin_core::symrep::{probe_fit, ProbeConfig, SymmetryStructure};
use symlin_core::worlds::{ActionLabel, Flatland, Image, NoiseSpec, World};
use symlin_numgrad::{grad_check_sampled, Graph, NumgradError, ParamStore};

const ALPHA: f64 = 2.0 * std::f64::consts::PI * 5.0 / 34.0;

const GRAD_TOL: f64 = 1e-4;
const PROBE_ANGLE_TOL: f64 = 1e-2;
const PROBE_REL_TOL: f64 = 1e-2;
const ANTI_ORACLE_MAX_INDEPENDENCE: f64 = 0.5;
const MI_TOL: f64 = 1e-6;
const RANDOM_MIG_MAX: f64 = 0.1;
const RANDOM_BETA_BAND: f64 = 0.1;
const ALPHA_ERR_MAX: f64 = 0.05;
const NOISY_ALPHA_ERR_MAX: f64 = 0.06;
const INDEPENDENCE_MIN: f64 = 0.90;
const REL_ERR_MAX: f64 = 0.25;
const ACTIVE_PER_ACTION_MAX: f64 = 1.5;
const ACTIVE_TOTAL: (f64, f64) = (3.5, 6.5);
const BACKGROUND_TAU_FACTOR: f64 = 5.0;

const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 100;
const N_REPS: usize = 8;

struct Suite {
    heavy: bool,
    failures: usize,
    lines: Vec<String>,
}

impl Suite {
    fn verdict(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push(line);
        if !pass {
            self.failures += 1;
        }
    }

    fn skip(&mut self, name: &str) {
        let line = format!("SKIP {name}: trains models; run with -- --ignored");
        println!("{line}");
        self.lines.push(line);
    }
}

fn wrap(e: symlin_core::Error) -> NumgradError {
    NumgradError::InvalidArgument { op: "rgrvae", msg: e.to_string() }
}

fn jitter_biases(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut().filter(|p| p.name.ends_with("bias")) {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.05..0.3));
    }
}

fn gradient_correctness(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_op = (String::new(), 0.0f64);
    for (name, shapes, build) in ops::op_cases() {
        let inputs = shapes.iter().map(|s| ops::random_off_kink(&mut rng, s)).collect();
        let err = ops::check(inputs, build);
        if err >= worst_op.1 {
            worst_op = (name.to_string(), err);
        }
    }

    // full objective on 64×64 Flatland frames, all three parameter groups
    let world = Flatland;
    let mut worst_graph = (String::new(), 0.0f64);
    let settings = [
        ("eps/regret", ExploreSpec::default(), RewardMode::Regret, false),
        ("entropy/reward", ExploreSpec::entropy(), RewardMode::Reward, false),
        ("pixel-prediction", ExploreSpec::default(), RewardMode::Regret, true),
    ];
    for (label, explore, reward_mode, pixel_prediction) in settings {
        let vae = VaeConfig { channels: 2, ..VaeConfig::new(Variant::Vae, 4) };
        let config = RgrvaeConfig { explore, reward_mode, pixel_prediction, policy_channels: 2, ..RgrvaeConfig::default() };
        let mut model = Rgrvae::<f64>::new(vae, config, &mut rng).unwrap();
        jitter_biases(&mut model.vae.store, &mut rng);
        jitter_biases(&mut model.policy.store, &mut rng);
        let images: Vec<Image> = (0..4).map(|_| world.render(&world.random_state(&mut rng)).unwrap()).collect();
        let pairs = [(&images[0], &images[1]), (&images[2], &images[3])];
        let eps = sample_noise::<f64, _>(2, 4, &mut rng);
        let plan = {
            let mut g = Graph::new();
            let (bv, bp, br) = (model.vae.store.bind(&mut g), model.policy.store.bind(&mut g), model.reps.store.bind(&mut g));
            model.loss_graph(&mut g, &bv, &bp, &br, &pairs, eps.clone(), |v| model.plan(v, &mut ChaCha8Rng::seed_from_u64(1))).unwrap().2
        };
        let fixed = |_: &_| plan.clone();
        let mut record = |part: &str, err: f64| {
            if err >= worst_graph.1 {
                worst_graph = (format!("{label} {part}"), err);
            }
        };
        let mut vae = model.vae.store.clone();
        let r = grad_check_sampled(&mut vae, 1e-6, 6, |g, bv| {
            let (bp, br) = (model.policy.store.bind_frozen(g), model.reps.store.bind_frozen(g));
            Ok(model.loss_graph(g, bv, &bp, &br, &pairs, eps.clone(), fixed).map_err(wrap)?.0)
        })
        .unwrap();
        record("vae", r.max_rel_error);
        let mut policy = model.policy.store.clone();
        let r = grad_check_sampled(&mut policy, 1e-6, 6, |g, bp| {
            let (bv, br) = (model.vae.store.bind_frozen(g), model.reps.store.bind_frozen(g));
            Ok(model.loss_graph(g, &bv, bp, &br, &pairs, eps.clone(), fixed).map_err(wrap)?.0)
        })
        .unwrap();
        record("policy", r.max_rel_error);
        let mut reps = model.reps.store.clone();
        let r = grad_check_sampled(&mut reps, 1e-6, 6, |g, br| {
            let (bv, bp) = (model.vae.store.bind_frozen(g), model.policy.store.bind_frozen(g));
            Ok(model.loss_graph(g, &bv, &bp, br, &pairs, eps.clone(), fixed).map_err(wrap)?.0)
        })
        .unwrap();
        record("reps", r.max_rel_error);
    }
    suite.verdict(
        "gradient correctness",
        worst_op.1 < GRAD_TOL && worst_graph.1 < GRAD_TOL,
        format!(
            "max rel err {:.2e} over ops (worst {}), {:.2e} over the RGrVAE objective (worst {}); tol {GRAD_TOL:e}",
            worst_op.1, worst_op.0, worst_graph.1, worst_graph.0
        ),
    );
}

fn environment_group_structure(suite: &mut Suite) {
    let world = Flatland;
    let states = world.all_states();
    let mut violations = 0usize;
    for s in &states {
        let gx = ActionLabel::from_index(0);
        let gy = ActionLabel::from_index(2);
        let xy = world.step(&world.step(s, gx).unwrap(), gy).unwrap();
        let yx = world.step(&world.step(s, gy).unwrap(), gx).unwrap();
        violations += usize::from(xy != yx);
        for a in ActionLabel::all(2) {
            let mut t = world.step(s, a).unwrap();
            violations += usize::from(t[1 - a.factor] != s[1 - a.factor]);
            let mut orbit = 1;
            while t != *s && orbit <= 34 {
                t = world.step(&t, a).unwrap();
                orbit += 1;
            }
            violations += usize::from(orbit != 34);
        }
    }
    let mut seen = std::collections::HashSet::new();
    let distinct = states.iter().filter(|s| seen.insert(world.render(s).unwrap().pixels.iter().map(|&p| p > 0.5).collect::<Vec<_>>())).count();
    suite.verdict(
        "environment group structure",
        states.len() == 1156 && violations == 0 && distinct == states.len(),
        format!("{} states, {violations} commutation/fixing/orbit violations, {distinct} distinct renders", states.len()),
    );
}

fn probe_oracle(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (pairs, _) = common::oracle_pairs(ALPHA, 400, &mut rng);
    let report = probe_fit(&pairs, &SymmetryStructure::flatland(), &ProbeConfig::default()).unwrap();
    let angle_err = report.fits.iter().map(|f| (f.alpha_hat - ALPHA).abs()).fold(0.0, f64::max);
    let rel = report.fits.iter().map(|f| f.rel_err).fold(0.0, f64::max);
    let anti = common::anti_oracle_pairs(400, &mut rng);
    let anti_report = probe_fit(&anti, &SymmetryStructure::flatland(), &ProbeConfig::default()).unwrap();
    let anti_ind = common::probe_independence(&anti_report, &anti);
    suite.verdict(
        "probe oracle",
        angle_err < PROBE_ANGLE_TOL && rel < PROBE_REL_TOL && anti_ind < ANTI_ORACLE_MAX_INDEPENDENCE,
        format!(
            "max |α̂−θ*| {angle_err:.2e} (tol {PROBE_ANGLE_TOL}), max rel err {rel:.2e} (tol {PROBE_REL_TOL}), anti-oracle independence {anti_ind:.3} (< {ANTI_ORACLE_MAX_INDEPENDENCE})"
        ),
    );
}

fn exact_mi(joint: &[Vec<usize>]) -> f64 {
    let n = joint.iter().flatten().sum::<usize>() as f64;
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

fn metric_sanity(suite: &mut Suite) {
    let factors: Vec<Vec<usize>> = (0..2000).map(|i| vec![(i / 2) % 4, (i / 8) % 5]).collect();
    let perfect: Vec<Vec<f64>> = factors.iter().map(|f| vec![f[0] as f64, f[1] as f64]).collect();
    let table = mutual_info_table(&perfect, &factors, 20).unwrap();
    let world = Flatland;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let beta = beta_metric(&world, |s| Ok(s.iter().map(|f| vec![f[0] as f64, f[1] as f64]).collect()), &BetaConfig::default(), &mut rng).unwrap();
    let circle = |f: &Vec<usize>| {
        let (a, b) = (f[0] as f64 * ALPHA / 5.0, f[1] as f64 * ALPHA / 5.0);
        vec![a.cos(), a.sin(), b.cos(), b.sin()]
    };
    let states: Vec<Vec<usize>> = world.all_states().into_iter().step_by(7).collect();
    let samples = delta_samples(&world, &states, |s| Ok(s.iter().map(circle).collect())).unwrap();
    let perfect_scores = [
        ("beta", beta),
        ("mig", mig(&table)),
        ("dci", dci_disentanglement(&perfect, &factors, 0.01).unwrap()),
        ("modularity", modularity(&table)),
        ("independence", independence_score(&samples).unwrap().score),
    ];
    let fl = factor_leakage(&table);
    let perfect_ok = perfect_scores.iter().all(|(_, v)| (v - 1.0).abs() < 1e-6) && fl.abs() < 1e-9;

    let random: Vec<Vec<f64>> = factors.iter().map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let random_mig = mig(&mutual_info_table(&random, &factors, 20).unwrap());
    let mut noise = ChaCha8Rng::seed_from_u64(32);
    let random_beta = beta_metric(
        &world,
        |s| Ok(s.iter().map(|_| (0..4).map(|_| noise.sample(StandardNormal)).collect()).collect()),
        &BetaConfig::default(),
        &mut rng,
    )
    .unwrap();
    let random_ok = random_mig < RANDOM_MIG_MAX && (random_beta - 0.5).abs() < RANDOM_BETA_BAND;

    let mut mi_err = 0.0f64;
    for _ in 0..20 {
        let (a, b) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let joint: Vec<Vec<usize>> = (0..a).map(|_| (0..b).map(|_| rng.random_range(0..6)).collect()).collect();
        let (mut latents, mut fs) = (Vec::new(), Vec::new());
        for (i, row) in joint.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    latents.push(vec![i as f64]);
                    fs.push(vec![j]);
                }
            }
        }
        let t = mutual_info_table(&latents, &fs, latents.len()).unwrap();
        mi_err = mi_err.max((t.mi[0][0] - exact_mi(&joint)).abs());
    }
    let shown: Vec<String> = perfect_scores.iter().map(|(n, v)| format!("{n}={v:.4}")).collect();
    suite.verdict(
        "metric sanity",
        perfect_ok && random_ok && mi_err < MI_TOL,
        format!(
            "perfect: {} FL={fl:.1e}; random: beta={random_beta:.3} (chance 0.5 ± {RANDOM_BETA_BAND}) mig={random_mig:.3} (< {RANDOM_MIG_MAX}); max MI err {mi_err:.1e}",
            shown.join(" ")
        ),
    );
}

fn budget() -> usize {
    std::env::var("SYMLIN_ACCEPTANCE_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(EPOCHS)
}

fn base_config(name: &str, method: Method) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(name, method);
    c.seeds = SEEDS.to_vec();
    c.epochs = budget();
    c.eval_every = 5;
    c.out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    c.vae.channels = 16;
    c.lr = 1e-3;
    c.forward.lr_vae = 1e-3;
    c.forward.pixel_prediction = true;
    c.rgrvae.n_reps = N_REPS;
    c.rgrvae.lr_vae = 1e-3;
    c.rgrvae.lr_policy = 1e-3;
    c.rgrvae.policy_channels = 8;
    c.rgrvae.pixel_prediction = true;
    c
}

fn snapshot(c: &ExperimentConfig) -> String {
    format!("{c:#?}\n")
}

/// Trained runs, keyed by name; each trained once per process.
struct Runs {
    done: BTreeMap<String, (ExperimentConfig, Vec<RunRow>)>,
}

impl Runs {
    fn get(&mut self, config: ExperimentConfig) -> &(ExperimentConfig, Vec<RunRow>) {
        let name = config.name.clone();
        self.done.entry(name.clone()).or_insert_with(|| {
            let start = Instant::now();
            let rows = run_experiment(&config, &snapshot(&config), |seed, r| {
                if (r.epoch + 1) % 10 == 0 {
                    let ind = r.independence.map_or(String::new(), |v| format!(" independence={v:.3}"));
                    eprintln!("  [{name} seed {seed}] epoch {}{ind} ({:.0}s)", r.epoch + 1, start.elapsed().as_secs_f64());
                }
            })
            .unwrap_or_else(|e| panic!("training {name} failed: {e}"))
            .rows;
            (config, rows)
        })
    }
}

fn mean(rows: &[RunRow], metric: &str) -> f64 {
    rows.iter().map(|r| r.get(metric).unwrap_or(f64::NAN)).sum::<f64>() / rows.len() as f64
}

fn per_seed(rows: &[RunRow], metric: &str) -> String {
    rows.iter().map(|r| format!("{:.3}", r.get(metric).unwrap_or(f64::NAN))).collect::<Vec<_>>().join("/")
}

fn forward_criterion(suite: &mut Suite, runs: &mut Runs) {
    let (_, rows) = runs.get(base_config("forward", Method::Forward));
    let (a, i) = (mean(rows, "model_alpha_error"), mean(rows, "independence"));
    suite.verdict(
        "ForwardVAE Flatland",
        a <= ALPHA_ERR_MAX && i >= INDEPENDENCE_MIN,
        format!(
            "α-error {a:.3} [{}] (≤ {ALPHA_ERR_MAX}), independence {i:.3} [{}] (≥ {INDEPENDENCE_MIN})",
            per_seed(rows, "model_alpha_error"),
            per_seed(rows, "independence")
        ),
    );
}

fn rgrvae_criterion(suite: &mut Suite, runs: &mut Runs) {
    let (_, rows) = runs.get(base_config("rgrvae", Method::Rgrvae));
    let (a, i, r) = (mean(rows, "model_alpha_error"), mean(rows, "independence"), mean(rows, "rel_err"));
    suite.verdict(
        "RGrVAE Flatland",
        a <= ALPHA_ERR_MAX && i >= INDEPENDENCE_MIN && r <= REL_ERR_MAX,
        format!(
            "α-error {a:.3} [{}] (≤ {ALPHA_ERR_MAX}), independence {i:.3} [{}] (≥ {INDEPENDENCE_MIN}), rel err {r:.3} [{}] (≤ {REL_ERR_MAX})",
            per_seed(rows, "model_alpha_error"),
            per_seed(rows, "independence"),
            per_seed(rows, "rel_err")
        ),
    );
}

fn baseline_gap(suite: &mut Suite, runs: &mut Runs) {
    let mut stats = Vec::new();
    for (name, method) in [
        ("vae", Method::Vae(Variant::Vae)),
        ("beta", Method::Vae(Variant::Beta)),
        ("forward", Method::Forward),
        ("rgrvae", Method::Rgrvae),
    ] {
        let (_, rows) = runs.get(base_config(name, method));
        stats.push((name, mean(rows, "independence"), mean(rows, "rel_err")));
    }
    let (baselines, ours) = stats.split_at(2);
    let pass = baselines.iter().all(|b| ours.iter().all(|o| b.1 < o.1 && b.2 > o.2));
    let shown: Vec<String> = stats.iter().map(|(n, i, r)| format!("{n}: indep {i:.3} rel {r:.3}")).collect();
    suite.verdict("baseline gap ordering", pass, shown.join("; "));
}

fn table_orderings(suite: &mut Suite, runs: &mut Runs) {
    let forward = runs.get(base_config("forward", Method::Forward)).1.clone();
    let vae = runs.get(base_config("vae", Method::Vae(Variant::Vae))).1.clone();
    let mut pass = true;
    let mut shown = Vec::new();
    for (metric, higher) in [("beta", true), ("modularity", true), ("dci", true), ("independence", true), ("factor_leakage", false)] {
        let (f, v) = (mean(&forward, metric), mean(&vae, metric));
        pass &= if higher { f > v } else { f < v };
        shown.push(format!("{metric} {f:.3} vs {v:.3}"));
    }
    suite.verdict("metric orderings (forward vs vae)", pass, shown.join(", "));
}

fn over_representation(suite: &mut Suite, runs: &mut Runs) {
    let (_, rows) = runs.get(base_config("rgrvae", Method::Rgrvae));
    let per = rows.iter().map(|r| r.get("active_per_action_max").unwrap_or(f64::NAN)).fold(f64::NEG_INFINITY, f64::max);
    let total = mean(rows, "active_total");
    suite.verdict(
        "over-representation",
        per <= ACTIVE_PER_ACTION_MAX && (ACTIVE_TOTAL.0..=ACTIVE_TOTAL.1).contains(&total),
        format!(
            "{N_REPS} reps: max per-action {per:.2} (≤ {ACTIVE_PER_ACTION_MAX}), total {total:.2} [{}] (in {:?})",
            per_seed(rows, "active_total"),
            ACTIVE_TOTAL
        ),
    );
}

fn temporal_criterion(suite: &mut Suite, runs: &mut Runs) {
    let (config, rows) = runs.get(base_config("rgrvae", Method::Rgrvae)).clone();
    let env = Env::from_config(&config.dataset).unwrap();
    let noise = config.dataset.noise.prepare().unwrap();
    let mut rhos = Vec::new();
    for row in &rows {
        let path = config.out.join(format!("checkpoint_seed{}.syml", row.seed));
        let Model::Rgrvae(model) = Model::load(&config, env.num_actions(), &path).unwrap() else { unreachable!() };
        let mut rng = ChaCha8Rng::seed_from_u64(row.seed);
        let pairs = labeled_pairs(&env, &noise, 50, &mut rng).unwrap();
        let (dominant, _) = dominant_reps(&model, &pairs, env.num_actions()).unwrap();
        let reps: Vec<_> = dominant.iter().map(|&k| model.reps.snapshot(k)).collect();
        let curve = temporal_consistency(
            &env,
            |ims| model.vae.means(&ims.iter().collect::<Vec<_>>()).map_err(Into::into),
            |z, a| reps[a.index()].apply(z),
            5,
            100,
            &mut rng,
        )
        .unwrap();
        let ks: Vec<f64> = (1..=5).map(f64::from).collect();
        rhos.push(spearman(&ks, &curve).unwrap_or(f64::NAN));
    }
    let shown: Vec<String> = rhos.iter().map(|r| format!("{r:.2}")).collect();
    suite.verdict("temporal consistency", rhos.iter().all(|&r| r >= 0.0), format!("Spearman ρ(k, error) per seed {} (≥ 0)", shown.join("/")));
}

fn noisy(name: &str, spec: NoiseSpec) -> ExperimentConfig {
    let mut c = base_config(name, Method::Rgrvae);
    c.seeds = vec![SEEDS[0]];
    c.dataset.noise = spec;
    c
}

fn noise_robustness(suite: &mut Suite, runs: &mut Runs) {
    let mut pass = true;
    let mut shown = Vec::new();
    for (name, spec) in [("gaussian", NoiseSpec::Gaussian { sigma: 0.1 }), ("salt", NoiseSpec::SaltPepper { p: 0.05 })] {
        let (_, rows) = runs.get(noisy(name, spec));
        let (i, a) = (mean(rows, "independence"), mean(rows, "model_alpha_error"));
        pass &= i >= INDEPENDENCE_MIN && a <= NOISY_ALPHA_ERR_MAX;
        shown.push(format!("{name}: indep {i:.3} α-err {a:.3}"));
    }
    let (_, clean) = runs.get(base_config("rgrvae", Method::Rgrvae)).clone();
    let tau0 = mean(&clean, "tau_095");
    if tau0.is_finite() {
        let mut c = noisy("background", parse_noise("background", 0.0, 0.0, None, 0).unwrap());
        c.epochs = (BACKGROUND_TAU_FACTOR * tau0).ceil() as usize;
        let (_, rows) = runs.get(c);
        let tau = mean(rows, "tau_095");
        pass &= tau.is_finite() && tau <= BACKGROUND_TAU_FACTOR * tau0;
        shown.push(format!("background: τ {tau} vs noiseless τ₀ {tau0:.1} (≤ {BACKGROUND_TAU_FACTOR}×)"));
    } else {
        pass = false;
        shown.push("background: noiseless run never reached 0.95 independence, no τ₀ budget".into());
    }
    suite.verdict("noise robustness", pass, shown.join("; "));
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let heavy = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let mut suite = Suite { heavy, failures: 0, lines: Vec::new() };
    if !args.iter().any(|a| a == "--ignored") {
        gradient_correctness(&mut suite);
        environment_group_structure(&mut suite);
        probe_oracle(&mut suite);
        metric_sanity(&mut suite);
    }
    let heavy_criteria: [(&str, fn(&mut Suite, &mut Runs)); 7] = [
        ("ForwardVAE Flatland", forward_criterion),
        ("RGrVAE Flatland", rgrvae_criterion),
        ("baseline gap ordering", baseline_gap),
        ("metric orderings (forward vs vae)", table_orderings),
        ("over-representation", over_representation),
        ("temporal consistency", temporal_criterion),
        ("noise robustness", noise_robustness),
    ];
    let mut runs = Runs { done: BTreeMap::new() };
    for (name, run) in heavy_criteria {
        if suite.heavy {
            run(&mut suite, &mut runs);
        } else {
            suite.skip(name);
        }
    }
    if suite.heavy && budget() != EPOCHS {
        println!("note: trained for {} epochs instead of {EPOCHS}; not an acceptance verdict", budget());
    }
    let summary = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_summary.txt");
    let _ = std::fs::create_dir_all(summary.parent().unwrap());
    let _ = std::fs::write(&summary, suite.lines.join("\n") + "\n");
    if suite.failures > 0 {
        eprintln!("{} criteria failed", suite.failures);
        std::process::exit(1);
    }
}
