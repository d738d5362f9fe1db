//! Central finite-difference probes of analytic gradients.

use rand::seq::index::sample;

use super::store::{Gradients, ParamStore};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub probes: Vec<Probe>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.probes.iter().all(|p| p.rel_error < tol)
    }
}

/// Relative error `|a - n| / max(|a|, |n|)`, or zero when both are below `1e-10`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares `grads` against fourth-order central differences of `loss` at `count`
/// randomly chosen scalar coordinates of `store`.
pub fn check(
    store: &ParamStore,
    grads: &Gradients,
    loss: impl Fn(&ParamStore) -> f64,
    count: usize,
    step: f64,
    rng: &mut Rng,
) -> GradCheck {
    let total = store.num_values();
    let picks = sample(rng, total, count.min(total));
    let mut work = store.clone();
    let mut probes = Vec::with_capacity(picks.len());
    for flat in picks.iter() {
        let (id, k) = store.locate(flat).expect("index within store");
        let orig = store.get(id).data()[k];
        let mut at = |x: f64| {
            work.get_mut(id).data_mut()[k] = x;
            loss(&work)
        };
        let (up2, up, down, down2) = (at(orig + 2.0 * step), at(orig + step), at(orig - step), at(orig - 2.0 * step));
        work.get_mut(id).data_mut()[k] = orig;
        let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * step);
        let analytic = grads.flat_get(id, k);
        probes.push(Probe {
            name: store.name(id).to_string(),
            index: k,
            analytic,
            numeric,
            rel_error: rel_error(analytic, numeric),
        });
    }
    GradCheck { probes }
}
