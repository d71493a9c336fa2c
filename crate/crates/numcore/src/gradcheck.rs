//! Central finite-difference gradient checking.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a finite-difference check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|)` over all checked
    /// coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of a scalar function of several inputs
/// against central differences with step `h`.
///
/// `f` builds the scalar output from leaf variables on a fresh tape; it is
/// called once for the analytic pass and twice per perturbed coordinate.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> GradCheck
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars);
        let grads = tape.backward(out);
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    };
    let eval = |perturbed: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars);
        tape.value(out).item()
    };
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradCheck {
        max_rel_error: max_rel,
        checked,
    }
}

/// Deterministic pseudo-random weights for contracting a tensor-valued op to
/// a scalar, so every output element influences the checked gradient.
pub fn probe(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape.to_vec(), |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// `sum(x ⊙ probe)`, a scalar contraction used by gradient checks.
pub fn contract(tape: &Tape, x: Var, seed: u64) -> Var {
    let p = probe(&tape.shape(x), seed);
    let y = tape
        .mul_const(x, std::rc::Rc::new(p))
        .expect("probe shape matches");
    tape.sum(y)
}
