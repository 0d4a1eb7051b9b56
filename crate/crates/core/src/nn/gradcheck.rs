//! Central finite-difference checks for tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{LayerSpec, Sequential};
use super::params::ModelParams;
use super::tape::Tape;
use crate::error::Result;

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheck {
    /// True when every component agrees within `rel` relative error, or
    /// within `abs_floor` absolutely for near-zero components.
    pub fn passes(&self, rel: f64) -> bool {
        self.max_rel_error < rel
    }
}

/// Compares `analytic` with `(f(x + eps e_k) - f(x - eps e_k)) / 2 eps`.
///
/// Relative error per component is `|a - n| / max(|a|, |n|)`, except that
/// components with `|a - n| <= abs_floor` count as exact.
pub fn check(
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    abs_floor: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: x.len(),
    };
    for k in 0..x.len() {
        probe[k] = x[k] + eps;
        let plus = f(&probe);
        probe[k] = x[k] - eps;
        let minus = f(&probe);
        probe[k] = x[k];
        let numeric = (plus - minus) / (2.0 * eps);
        let abs = (analytic[k] - numeric).abs();
        worst.max_abs_error = worst.max_abs_error.max(abs);
        if abs > abs_floor {
            let rel = abs / analytic[k].abs().max(numeric.abs());
            worst.max_rel_error = worst.max_rel_error.max(rel);
        }
    }
    worst
}

/// Checks one freshly initialized layer: gradients of a random projection
/// of its output with respect to every parameter and the input.
pub fn check_layer(
    spec: LayerSpec,
    input_shape: &[usize],
    seed: u64,
    eps: f64,
    abs_floor: f64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    let net = Sequential::build(&[spec], &mut params, "layer", &mut rng)?;
    // Push every parameter away from zero so ReLU kinks and zero biases do
    // not dominate the check.
    for id in params.ids().collect::<Vec<_>>() {
        for v in params.tensor_mut(id).data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let n: usize = input_shape.iter().product();
    // Inputs stay clear of 0 so ReLU is differentiable at every probe.
    let input: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();

    let eval =
        |params: &ModelParams, input: &[f64], proj: Option<&[f64]>| -> Result<(f64, Vec<f64>)> {
            let mut tape = Tape::new(params);
            let x = tape.input(input_shape.to_vec(), input.to_vec())?;
            let y = net.forward(&mut tape, x)?;
            let out = tape.value(y).to_vec();
            let value = proj.map_or(0.0, |p| p.iter().zip(&out).map(|(a, b)| a * b).sum());
            Ok((value, out))
        };
    let (_, out) = eval(&params, &input, None)?;
    let proj: Vec<f64> = (0..out.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();

    let mut tape = Tape::new(&params);
    let x = tape.input(input_shape.to_vec(), input.clone())?;
    let y = net.forward(&mut tape, x)?;
    let grads = tape.backward_with(y, &proj)?;

    let mut worst = check(
        &input,
        grads.wrt(x).unwrap_or(&vec![0.0; n]),
        eps,
        abs_floor,
        |xi| eval(&params, xi, Some(&proj)).expect("forward").0,
    );
    for id in params.ids().collect::<Vec<_>>() {
        let base = params.value(id).to_vec();
        let zero = vec![0.0; base.len()];
        let analytic = grads.params.get(id).unwrap_or(&zero).to_vec();
        let mut probe = params.clone();
        let r = check(&base, &analytic, eps, abs_floor, |p| {
            probe.tensor_mut(id).data_mut().copy_from_slice(p);
            eval(&probe, &input, Some(&proj)).expect("forward").0
        });
        worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
        worst.max_abs_error = worst.max_abs_error.max(r.max_abs_error);
        worst.checked += r.checked;
    }
    Ok(worst)
}
