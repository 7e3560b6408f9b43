use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symlin_core::models::{
    images_tensor, kl_divergence, reparameterize, sample_noise, vae_loss_graph, ForwardConfig, ForwardVae, VaeConfig, VaeNet,
    Variant,
};
use symlin_core::worlds::{ActionLabel, Direction, Flatland, Image, Transition, World};
use symlin_numgrad::{grad_check_sampled, Graph, NumgradError, Tensor};

fn small_config(variant: Variant) -> VaeConfig {
    VaeConfig { channels: 2, image_size: 16, ..VaeConfig::new(variant, 4) }
}

fn random_image(size: usize, rng: &mut ChaCha8Rng) -> Image {
    Image { height: size, width: size, pixels: (0..size * size).map(|_| rng.random::<f32>()).collect() }
}

/// Random biases keep ReLU inputs off their kink at exactly zero.
fn jitter_biases(store: &mut symlin_numgrad::ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut().filter(|p| p.name.ends_with("bias")) {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.05..0.3));
    }
}

fn wrap(e: symlin_core::Error) -> NumgradError {
    NumgradError::InvalidArgument { op: "model", msg: e.to_string() }
}

#[test]
fn encoder_is_deterministic_and_shaped() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = VaeNet::<f32>::new(VaeConfig::new(Variant::Vae, 4), &mut rng).unwrap();
    let x = Flatland.render(&[3, 7]).unwrap();
    let a = net.encode(&x, &mut rng).unwrap();
    let b = net.encode(&x, &mut rng).unwrap();
    assert_eq!(a.mu.len(), 4);
    assert_eq!((a.mu.clone(), a.logvar.clone()), (b.mu, b.logvar));
    assert_ne!(a.z, b.z);
    assert!(a.logvar.iter().all(|v| v.is_finite()));
    let noise = random_image(64, &mut rng);
    assert!(net.encode(&noise, &mut rng).unwrap().logvar.iter().all(|v| v.is_finite()));
    assert!(net.encode(&Image::zeros(32, 32), &mut rng).is_err());
}

#[test]
fn decoder_output_is_a_probability_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = VaeNet::<f32>::new(VaeConfig::new(Variant::Vae, 4), &mut rng).unwrap();
    let z = [3.0, -8.0, 0.5, 20.0];
    let a = net.decode(&z).unwrap();
    assert_eq!((a.height, a.width), (64, 64));
    assert!(a.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
    assert_eq!(a, net.decode(&z).unwrap());
    assert!(net.decode(&[1.0]).is_err());
}

#[test]
fn reparameterised_draws_match_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20_000;
    let mut g = Graph::<f64>::new();
    let mu = g.constant(Tensor::full([n, 1], 1.5));
    let lv = g.constant(Tensor::full([n, 1], (0.25f64).ln()));
    let z = reparameterize(&mut g, mu, lv, sample_noise(n, 1, &mut rng)).unwrap();
    let draws = g.value(z).to_f64_vec();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    // three standard errors
    assert!((mean - 1.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{mean}");
    assert!((var - 0.25).abs() < 3.0 * 0.25 * (2.0 / n as f64).sqrt(), "{var}");
}

#[test]
fn kl_is_non_negative() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lv: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        assert!(kl_divergence(&mu, &lv) >= 0.0);
    }
}

#[test]
fn every_variant_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let images: Vec<Image> = (0..2).map(|_| random_image(16, &mut rng)).collect();
    for variant in Variant::ALL {
        let mut net = VaeNet::<f64>::new(small_config(variant), &mut rng).unwrap();
        jitter_biases(&mut net.store, &mut rng);
        let eps = sample_noise::<f64, _>(2, 4, &mut rng);
        let frozen = net.clone();
        let report = grad_check_sampled(&mut net.store, 1e-6, 12, |g, b| {
            let refs: Vec<&Image> = images.iter().collect();
            let x = g.constant(images_tensor(&refs).map_err(wrap)?);
            let (mu, lv) = frozen.encode_graph(g, b, x).map_err(wrap)?;
            let z = reparameterize(g, mu, lv, eps.clone()).map_err(wrap)?;
            let logits = frozen.decode_graph(g, b, z).map_err(wrap)?;
            // a late step keeps the capacity term away from its kink
            Ok(vae_loss_graph(g, x, logits, mu, lv, &frozen.config, 60_000).map_err(wrap)?.total)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{variant}: {report:?}");
    }
}

fn supervised(world: &Flatland, from: [usize; 2], action: ActionLabel) -> Transition {
    let to = world.step(&from, action).unwrap();
    Transition {
        x_pre: world.render(&from).unwrap(),
        x_post: world.render(&to).unwrap(),
        true_action: Some(action),
        steps: 1,
    }
}

#[test]
fn forward_step_requires_labels_and_reports_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = ForwardVae::<f32>::new(VaeConfig { channels: 4, ..VaeConfig::new(Variant::Forward, 4) }, 4, ForwardConfig::default(), &mut rng).unwrap();
    let world = Flatland;
    let mut t = supervised(&world, [0, 0], ActionLabel::new(0, Direction::Forward));
    let losses = model.train_step(std::slice::from_ref(&t), &mut rng).unwrap();
    for name in ["total", "reconstruction", "kl", "prediction", "identity_decay"] {
        assert!(losses.get(name).unwrap().is_finite(), "{name}");
    }
    t.true_action = None;
    assert!(model.train_step(&[t], &mut rng).is_err());
}

#[test]
fn identity_reps_on_unchanged_pair_predict_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = ForwardVae::<f64>::new(small_config(Variant::Forward), 4, ForwardConfig::default(), &mut rng).unwrap();
    for k in 0..4 {
        model.reps.set_theta(k, 0.0);
    }
    let x = random_image(16, &mut rng);
    let mut g = Graph::new();
    let bv = model.vae.store.bind(&mut g);
    let br = model.reps.store.bind(&mut g);
    let (_, terms) = model.loss_graph(&mut g, &bv, &br, &[(&x, &x, 2)], sample_noise(1, 4, &mut rng)).unwrap();
    let pred = terms.iter().find(|(n, _)| *n == "prediction").unwrap().1;
    assert_eq!(g.value(pred).item(), 0.0);
}

#[test]
fn forward_objective_passes_gradient_check() {
    for pixel_prediction in [false, true] {
        check_forward_gradients(ForwardConfig { pixel_prediction, ..ForwardConfig::default() });
    }
}

fn check_forward_gradients(config: ForwardConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = ForwardVae::<f64>::new(small_config(Variant::Forward), 4, config, &mut rng).unwrap();
    jitter_biases(&mut model.vae.store, &mut rng);
    let images: Vec<Image> = (0..4).map(|_| random_image(16, &mut rng)).collect();
    let batch = [(&images[0], &images[1], 0), (&images[2], &images[3], 3)];
    let eps = sample_noise::<f64, _>(2, 4, &mut rng);

    let mut reps = model.reps.clone();
    let report = grad_check_sampled(&mut reps.store, 1e-6, 8, |g, br| {
        let bv = model.vae.store.bind_frozen(g);
        Ok(model.loss_graph(g, &bv, br, &batch, eps.clone()).map_err(wrap)?.0)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "reps: {report:?}");

    let mut vae = model.vae.clone();
    let report = grad_check_sampled(&mut vae.store, 1e-6, 8, |g, bv| {
        let br = model.reps.store.bind_frozen(g);
        Ok(model.loss_graph(g, bv, &br, &batch, eps.clone()).map_err(wrap)?.0)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "vae: {report:?}");
}
