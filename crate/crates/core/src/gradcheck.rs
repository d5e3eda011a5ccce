//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error with an absolute floor, so near-zero pairs compare sanely.
///
/// Against a tolerance `tol` the floor implies an absolute tolerance of
/// `tol * 1e-3`, which must stay above central-difference roundoff noise,
/// roughly `1e-16 * |f| / eps` for values `f` of the checked function.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares the tape gradient of a scalar-valued function against central
/// finite differences, elementwise over `x`. Returns the worst relative
/// error.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_multi(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
    )
}

/// Multi-input variant of [`grad_check`]: one backward pass supplies analytic
/// gradients for every input; finite differences then probe each element of
/// each input.
pub fn grad_check_multi<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Param {
            name: "eps",
            msg: format!("must be > 0, got {eps}"),
        });
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract(format!(
            "grad_check requires a scalar-valued function, got shape {:?}",
            tape.value(out).shape()
        )));
    }
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        t.value(o).item()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[ti])
            .ok_or_else(|| Error::Contract("backward produced no gradient for an input".into()))?
            .clone();
        for e in 0..input.numel() {
            let orig = input.data()[e];
            work[ti].data_mut()[e] = orig + eps;
            let fp = eval(&work)?;
            work[ti].data_mut()[e] = orig - eps;
            let fm = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            worst = worst.max(rel_err(analytic.data()[e], fd));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_is_exact() {
        // Zero truncation error for a linear map, so a wide step keeps the
        // difference quotient clear of cancellation noise.
        let x = Tensor::new(vec![5], vec![0.3, -1.0, 2.0, 4.5, -0.2]).unwrap();
        let err = grad_check(|t, v| t.sum_all(v), &x, 1e-3).unwrap();
        assert!(err < 1e-10, "err = {err}");
    }

    #[test]
    fn sum_of_squares_matches_analytic() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v, v)?;
                t.sum_all(sq)
            },
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn rejects_nonscalar_function() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            grad_check(|t, v| t.relu(v), &x, 1e-6),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn multi_input_product() {
        let a = Tensor::new(vec![1], vec![3.0]).unwrap();
        let b = Tensor::new(vec![1], vec![4.0]).unwrap();
        let err = grad_check_multi(|t, vs| t.mul(vs[0], vs[1]), &[a, b], 1e-6).unwrap();
        assert!(err < 1e-9, "err = {err}");
    }
}
