//! Central finite-difference gradient checking.
//!
//! The relative error for one coordinate is
//! `|analytic − numeric| / max(|analytic|, |numeric|, floor)`; the floor
//! keeps coordinates whose true gradient is zero from dividing noise by
//! noise.
//!
//! Piecewise-linear units (PReLU, ReLU) and the max over attention heads
//! have kinks. A probe that straddles a kink measures a secant slope rather
//! than the derivative, so [`check_params_routed`] takes a routing
//! signature (a hash of every branch decision) and skips probes whose `±h`
//! evaluations route differently from the base point. Skips are counted in
//! the report.

use alloc::string::String;
use alloc::vec::Vec;

use super::param::Parameterized;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn skipped_fraction(&self) -> f64 {
        self.skipped as f64 / (self.checked + self.skipped).max(1) as f64
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare analytic parameter gradients against central differences.
///
/// `backward` must zero and then fill the gradients of `model` for the
/// current parameter values. `loss` must be a pure function of the model.
/// At most `max_per_param` evenly spaced coordinates are probed per tensor.
pub fn check_params<M: Parameterized>(
    model: &mut M,
    step: f64,
    max_per_param: usize,
    loss: &dyn Fn(&M) -> f64,
    backward: &mut dyn FnMut(&mut M),
) -> GradCheckReport {
    check_params_routed(model, step, max_per_param, loss, backward, &|_| 0)
}

/// [`check_params`] with kink detection through `routing`.
pub fn check_params_routed<M: Parameterized>(
    model: &mut M,
    step: f64,
    max_per_param: usize,
    loss: &dyn Fn(&M) -> f64,
    backward: &mut dyn FnMut(&mut M),
    routing: &dyn Fn(&M) -> u64,
) -> GradCheckReport {
    let base_route = routing(model);
    model.zero_grad();
    backward(model);
    let grads: Vec<(String, Vec<f64>)> = model
        .named_params("")
        .into_iter()
        .map(|(n, p)| (n, p.grad.clone()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        skipped: 0,
    };
    for (pi, (name, grad)) in grads.iter().enumerate() {
        let len = grad.len();
        let stride = len.div_ceil(max_per_param.max(1)).max(1);
        for i in (0..len).step_by(stride) {
            let (f_plus, r_plus) = perturbed(model, pi, i, step, loss, routing);
            let (f_minus, r_minus) = perturbed(model, pi, i, -step, loss, routing);
            if r_plus != base_route || r_minus != base_route {
                report.skipped += 1;
                continue;
            }
            let numeric = (f_plus - f_minus) / (2.0 * step);
            let err = relative_error(grad[i], numeric, DEFAULT_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    report
}

fn perturbed<M: Parameterized>(
    model: &mut M,
    param: usize,
    index: usize,
    delta: f64,
    loss: &dyn Fn(&M) -> f64,
    routing: &dyn Fn(&M) -> u64,
) -> (f64, u64) {
    nudge(model, param, index, delta);
    let f = loss(model);
    let r = routing(model);
    nudge(model, param, index, -delta);
    (f, r)
}

fn nudge<M: Parameterized>(model: &mut M, param: usize, index: usize, delta: f64) {
    let mut k = 0;
    model.visit_params_mut("", &mut |_, p| {
        if k == param {
            p.value[index] += delta;
        }
        k += 1;
    });
}

/// Finite-difference gradient of a scalar function of a vector.
pub fn numeric_gradient(x: &[f64], step: f64, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + step;
            let fp = f(&buf);
            buf[i] = x[i] - step;
            let fm = f(&buf);
            buf[i] = x[i];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

/// Largest coordinate-wise relative error between two gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, DEFAULT_FLOOR))
        .fold(0.0, f64::max)
}

/// Incremental FNV-1a hash for routing signatures.
#[derive(Debug, Clone, Copy)]
pub struct RouteHasher(u64);

impl Default for RouteHasher {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl RouteHasher {
    #[inline]
    pub fn push(&mut self, bit: u8) {
        self.0 ^= u64::from(bit);
        self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
    }

    /// Hash the sign pattern (`> 0`) of a slice.
    pub fn signs(&mut self, values: &[f64]) {
        for &v in values {
            self.push(u8::from(v > 0.0));
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}
