//! Central-difference verification of analytic gradients.
//!
//! The check is the independent route: it only ever calls the loss function,
//! never the backward code it is judging, so a broken backward pass cannot
//! hide. Always run in f64.

use super::param::{ParamStore, ParamTensor};
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_SAMPLES_PER_PARAM: usize = 20;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

/// Compare analytic gradients against central differences on a random sample
/// of at least `samples_per_param` coordinates per parameter (all of them for
/// small tensors).
///
/// `loss_and_grad` must zero the gradients, run a full forward/backward pass,
/// leave analytic gradients in the store, and return the scalar loss. It is
/// called once for the analytic side and twice per sampled coordinate for the
/// numeric side.
pub fn finite_difference_check<S, F>(
    store: &mut S,
    mut loss_and_grad: F,
    epsilon: f64,
    samples_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    S: ParamStore<f64>,
    F: FnMut(&mut S) -> Result<f64>,
{
    loss_and_grad(store)?;
    let analytic: Vec<(String, Vec<f64>)> = store
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();

    for (pi, (name, grads)) in analytic.iter().enumerate() {
        let len = grads.len();
        let coords: Vec<usize> = if len <= samples_per_param {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, samples_per_param).into_vec()
        };
        let mut max_rel = 0.0f64;
        for &c in &coords {
            let orig = store.params()[pi].value.data()[c];
            set_coord(store, pi, c, orig + epsilon);
            let plus = loss_and_grad(store)?;
            set_coord(store, pi, c, orig - epsilon);
            let minus = loss_and_grad(store)?;
            set_coord(store, pi, c, orig);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic_g = grads[c];
            let denom = analytic_g.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic_g - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
        report.per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: max_rel,
            coords_checked: coords.len(),
        });
    }

    // Leave the store in its original analytic-gradient state.
    loss_and_grad(store)?;
    Ok(report)
}

fn set_coord<S: ParamStore<f64>>(store: &mut S, param_idx: usize, coord: usize, value: f64) {
    store.params_mut()[param_idx].value.data_mut()[coord] = value;
}

/// Convenience for ad-hoc stores in tests and op-level checks.
pub fn check_params<F>(
    params: &mut Vec<ParamTensor<f64>>,
    loss_and_grad: F,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Vec<ParamTensor<f64>>) -> Result<f64>,
{
    finite_difference_check(
        params,
        loss_and_grad,
        DEFAULT_EPSILON,
        DEFAULT_SAMPLES_PER_PARAM,
        seed,
    )
}
