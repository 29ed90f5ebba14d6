//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

use super::network::{Gradients, Network};
use super::train::{Objective, Part};

/// Largest network `gradient_check` accepts; each parameter costs two
/// forward passes.
pub const MAX_CHECKED_PARAMS: usize = 20_000;

/// Compares the analytic gradient of training unit `index` with central
/// differences. Returns the largest relative error
/// `|a - n| / max(|a|, |n|, 1e-6)` over all parameters.
pub fn gradient_check<O: Objective>(net: &Network, objective: &O, index: usize) -> Result<f64> {
    if net.param_count() >= MAX_CHECKED_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "gradient check needs fewer than {MAX_CHECKED_PARAMS} parameters, network has {}",
            net.param_count()
        )));
    }
    let mut analytic = Gradients::zeros_like(net);
    objective.evaluate(net, Part::Train, index, Some(&mut analytic))?;
    let analytic = analytic.flatten();

    let h = 1e-4;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut k = 0;
    for li in 0..probe.layers.len() {
        let Some((w, b)) = probe.layers[li].params() else {
            continue;
        };
        let sizes = (w.len(), b.len());
        for pi in 0..sizes.0 + sizes.1 {
            let original = param(&probe, li, pi);
            set_param(&mut probe, li, pi, original + h);
            let plus = objective.evaluate(&probe, Part::Train, index, None)?.loss;
            set_param(&mut probe, li, pi, original - h);
            let minus = objective.evaluate(&probe, Part::Train, index, None)?.loss;
            set_param(&mut probe, li, pi, original);
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
            k += 1;
        }
    }
    Ok(worst)
}

fn param(net: &Network, layer: usize, i: usize) -> f64 {
    let (w, b) = net.layers[layer].params().expect("parametric layer");
    if i < w.len() {
        w[i]
    } else {
        b[i - w.len()]
    }
}

fn set_param(net: &mut Network, layer: usize, i: usize, value: f64) {
    let (w, b) = net.layers[layer].params_mut().expect("parametric layer");
    if i < w.len() {
        w[i] = value;
    } else {
        b[i - w.len()] = value;
    }
}
