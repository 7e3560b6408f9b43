use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{Binding, ParamStore};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares backward-pass gradients against central differences for every
/// element of every trainable parameter in `store`.
///
/// `build` must construct the same scalar graph on each call.
pub fn grad_check<T, F>(store: &mut ParamStore<T>, eps: f64, build: F) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &Binding) -> Result<Var>,
{
    grad_check_sampled(store, eps, usize::MAX, build)
}

/// Like [`grad_check`] but probes at most `per_param` evenly spaced elements
/// of each parameter.
pub fn grad_check_sampled<T, F>(store: &mut ParamStore<T>, eps: f64, per_param: usize, mut build: F) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&mut Graph<T>, &Binding) -> Result<Var>,
{
    let mut g = Graph::new();
    let binding = store.bind(&mut g);
    let out = build(&mut g, &binding)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Option<Vec<f64>>> = binding
        .vars()
        .iter()
        .zip(store.iter())
        .map(|(v, p)| {
            p.requires_grad.then(|| match grads.get(*v) {
                Some(t) => t.to_f64_vec(),
                None => vec![0.0; p.value.numel()],
            })
        })
        .collect();

    let mut eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let b = store.bind_frozen(&mut g);
        let out = build(&mut g, &b)?;
        Ok(g.value(out).item().as_f64())
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    let n_params = store.len();
    for pi in 0..n_params {
        let Some(an) = analytic[pi].as_ref() else { continue };
        let numel = an.len();
        let stride = if numel > per_param { numel.div_ceil(per_param) } else { 1 };
        for idx in (0..numel).step_by(stride) {
            let original = param_at(store, pi, idx);
            set_param_at(store, pi, idx, T::of(original + eps));
            let plus = eval(store)?;
            set_param_at(store, pi, idx, T::of(original - eps));
            let minus = eval(store)?;
            set_param_at(store, pi, idx, T::of(original));
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (an[idx] - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.iter().nth(pi).unwrap().name.clone(), idx));
            }
        }
    }
    Ok(report)
}

fn param_at<T: Real>(store: &ParamStore<T>, pi: usize, idx: usize) -> f64 {
    store.iter().nth(pi).unwrap().value.data()[idx].as_f64()
}

fn set_param_at<T: Real>(store: &mut ParamStore<T>, pi: usize, idx: usize, v: T) {
    store.iter_mut().nth(pi).unwrap().value.data_mut()[idx] = v;
}
