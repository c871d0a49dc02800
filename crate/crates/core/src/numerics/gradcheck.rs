use super::net::{Activation, DenseNet};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared on this absolute scale.
const MAGNITUDE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all non-excluded coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(layer, is_bias, index)` of coordinates whose perturbation moved a
    /// relu pre-activation across zero.
    pub excluded: Vec<(usize, bool, usize)>,
}

/// Compares analytic gradients against central differences for every
/// parameter of `net`.
///
/// `loss` maps the network output to `(value, ∂value/∂output)`.
pub fn finite_difference_check<F>(net: &DenseNet<f64>, input: &[f64], loss: F) -> GradCheckReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (out, cache) = net.forward(input).expect("input matches network");
    let (_, dloss) = loss(&out);
    let analytic = net.backward(&cache, &dloss).expect("fresh cache");
    let base_gates = gates(net, input);

    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: Vec::new(),
    };
    for (li, grads) in analytic.layers.iter().enumerate() {
        for (is_bias, count) in [(false, grads.weight.len()), (true, grads.bias.len())] {
            for idx in 0..count {
                let original = param(&probe, li, is_bias, idx);

                *param_mut(&mut probe, li, is_bias, idx) = original + FD_STEP;
                let up_gates = gates(&probe, input);
                let up = loss(&probe.predict(input).expect("shape")).0;

                *param_mut(&mut probe, li, is_bias, idx) = original - FD_STEP;
                let down_gates = gates(&probe, input);
                let down = loss(&probe.predict(input).expect("shape")).0;

                *param_mut(&mut probe, li, is_bias, idx) = original;

                if up_gates != base_gates || down_gates != base_gates {
                    report.excluded.push((li, is_bias, idx));
                    continue;
                }
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = if is_bias { grads.bias[idx] } else { grads.weight[idx] };
                let scale = a.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
                let rel = (a - numeric).abs() / scale;
                report.max_rel_error = report.max_rel_error.max(rel);
                report.checked += 1;
            }
        }
    }
    report
}

fn param(net: &DenseNet<f64>, layer: usize, is_bias: bool, idx: usize) -> f64 {
    let l = &net.layers()[layer];
    if is_bias {
        l.bias[idx]
    } else {
        l.weight[idx]
    }
}

fn param_mut(net: &mut DenseNet<f64>, layer: usize, is_bias: bool, idx: usize) -> &mut f64 {
    let l = net.layer_mut(layer);
    if is_bias {
        &mut l.bias[idx]
    } else {
        &mut l.weight[idx]
    }
}

/// On/off pattern of every relu unit.
fn gates(net: &DenseNet<f64>, input: &[f64]) -> Vec<bool> {
    let (_, cache) = net.forward(input).expect("shape");
    net.layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.activation == Activation::Relu)
        .flat_map(|(i, _)| cache.pre_activation(i).iter().map(|&z| z > 0.0).collect::<Vec<_>>())
        .collect()
}
