//! Shared gradient-check fixtures: one case per graph op.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use symlin_numgrad::{grad_check, Binding, Graph, ParamStore, Result, Tensor, Var};

pub fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU/abs kinks are never straddled.
pub fn random_off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.5);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn store(inputs: Vec<Tensor<f64>>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (i, x) in inputs.into_iter().enumerate() {
        s.add(format!("in{i}"), x);
    }
    s
}

/// Reduces any output to a scalar with fixed pseudo-random weights so every
/// output element contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph<f64>, v: Var) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| ((i as f64) * 0.7317).sin() + 0.3).collect())?;
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

pub fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> f64 {
    let mut s = store(inputs);
    let report = grad_check(&mut s, 1e-6, |g: &mut Graph<f64>, b: &Binding| {
        let vars = b.vars().to_vec();
        let out = f(g, &vars)?;
        weighted_sum(g, out)
    })
    .unwrap();
    report.max_rel_error
}

/// One case per op: (name, input shapes, builder). Inputs avoid kinks and
/// keep log/sqrt arguments positive.
pub type OpCase = (&'static str, Vec<Vec<usize>>, fn(&mut Graph<f64>, &[Var]) -> Result<Var>);

pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("add", vec![vec![2, 3], vec![2, 3]], |g, v| g.add(v[0], v[1])),
        ("add_broadcast", vec![vec![2, 3], vec![1]], |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![2, 3], vec![2, 3]], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], |g, v| g.mul(v[0], v[1])),
        ("mul_broadcast", vec![vec![1], vec![4]], |g, v| g.mul(v[0], v[1])),
        ("mul_self", vec![vec![3]], |g, v| g.mul(v[0], v[0])),
        ("scale", vec![vec![3]], |g, v| Ok(g.scale(v[0], -2.5))),
        ("add_scalar", vec![vec![3]], |g, v| Ok(g.add_scalar(v[0], 0.7))),
        ("matmul", vec![vec![2, 3], vec![3, 4]], |g, v| g.matmul(v[0], v[1])),
        ("transpose", vec![vec![2, 3]], |g, v| g.transpose(v[0])),
        ("affine", vec![vec![3, 4], vec![2, 4], vec![2]], |g, v| g.affine(v[0], v[1], v[2])),
        ("conv2d_s1", vec![vec![1, 2, 5, 5], vec![3, 2, 3, 3], vec![3]], |g, v| g.conv2d(v[0], v[1], v[2], 1, 1)),
        ("conv2d_s2", vec![vec![2, 1, 6, 6], vec![2, 1, 4, 4], vec![2]], |g, v| g.conv2d(v[0], v[1], v[2], 2, 1)),
        ("conv_transpose2d", vec![vec![2, 2, 3, 3], vec![2, 3, 4, 4], vec![3]], |g, v| g.conv_transpose2d(v[0], v[1], v[2], 2, 1)),
        ("relu", vec![vec![6]], |g, v| Ok(g.relu(v[0]))),
        ("sigmoid", vec![vec![6]], |g, v| Ok(g.sigmoid(v[0]))),
        ("tanh", vec![vec![6]], |g, v| Ok(g.tanh(v[0]))),
        ("exp", vec![vec![6]], |g, v| Ok(g.exp(v[0]))),
        ("log", vec![vec![6]], |g, v| {
            let a = g.abs(v[0]);
            Ok(g.log(a))
        }),
        ("square", vec![vec![6]], |g, v| Ok(g.square(v[0]))),
        ("abs", vec![vec![6]], |g, v| Ok(g.abs(v[0]))),
        ("sin", vec![vec![6]], |g, v| Ok(g.sin(v[0]))),
        ("cos", vec![vec![6]], |g, v| Ok(g.cos(v[0]))),
        ("softplus", vec![vec![6]], |g, v| Ok(g.softplus(v[0]))),
        ("sqrt", vec![vec![6]], |g, v| {
            let a = g.abs(v[0]);
            Ok(g.sqrt(a))
        }),
        ("clamp", vec![vec![6]], |g, v| Ok(g.clamp(v[0], -1.0, 1.0))),
        ("sum", vec![vec![2, 3]], |g, v| Ok(g.sum(v[0]))),
        ("mean", vec![vec![2, 3]], |g, v| Ok(g.mean(v[0]))),
        ("sum_axis", vec![vec![2, 3, 2]], |g, v| g.sum_axis(v[0], 1)),
        ("reshape", vec![vec![2, 3]], |g, v| g.reshape(v[0], &[3, 2])),
        ("concat", vec![vec![2, 1], vec![2, 3]], |g, v| g.concat(&[v[0], v[1]], 1)),
        ("slice", vec![vec![3, 4]], |g, v| g.slice(v[0], 1, 1, 3)),
        ("softmax", vec![vec![2, 4]], |g, v| Ok(g.softmax(v[0]))),
        ("log_softmax", vec![vec![2, 4]], |g, v| Ok(g.log_softmax(v[0]))),
    ]
}
