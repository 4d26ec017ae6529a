//! Finite-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::rng::RngState;
use super::tensor::Tensor;
use super::NumericsError;

/// A scalar-valued differentiable function built on a fresh graph from
/// leaf vars matching the given inputs.
pub trait ScalarFn: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError> {}
impl<T: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>> ScalarFn for T {}

fn eval_scalar<F: ScalarFn>(f: &F, inputs: &[Tensor]) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let mut vars = Vec::with_capacity(inputs.len());
    for t in inputs {
        vars.push(g.leaf(t.shape(), t.values())?);
    }
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(NumericsError::InvalidShape(
            "grad check target must be scalar".into(),
        ));
    }
    let v = g.scalar_value(out);
    if !v.is_finite() {
        return Err(NumericsError::NonFinite("grad check forward".into()));
    }
    Ok(v)
}

/// Forward plus reverse sweep; returns the scalar value and one gradient
/// buffer per input.
pub fn reverse_gradients<F: ScalarFn>(
    f: &F,
    inputs: &[Tensor],
) -> Result<(f64, Vec<Vec<f64>>), NumericsError> {
    let mut g = Graph::new();
    let mut vars = Vec::with_capacity(inputs.len());
    for t in inputs {
        vars.push(g.leaf(t.shape(), t.values())?);
    }
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(NumericsError::InvalidShape(
            "grad check target must be scalar".into(),
        ));
    }
    let value = g.scalar_value(out);
    if !value.is_finite() {
        return Err(NumericsError::NonFinite("grad check forward".into()));
    }
    let sink = g.backward(out)?;
    let mut grads = Vec::with_capacity(inputs.len());
    for (t, v) in inputs.iter().zip(&vars) {
        let buf = sink
            .get(*v)
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        if !buf.iter().all(|x| x.is_finite()) {
            return Err(NumericsError::NonFinite("grad check backward".into()));
        }
        grads.push(buf);
    }
    Ok((value, grads))
}

/// Central differences with step `eps`, element by element.
pub fn finite_difference_gradients<F: ScalarFn>(
    f: &F,
    inputs: &[Tensor],
    eps: f64,
) -> Result<Vec<Vec<f64>>, NumericsError> {
    if eps <= 0.0 {
        return Err(NumericsError::InvalidConfig(format!(
            "finite difference step {eps} must be positive"
        )));
    }
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let numel = inputs[i].numel();
        let mut buf = vec![0.0; numel];
        for j in 0..numel {
            let orig = work[i].values()[j];
            work[i].values_mut()[j] = orig + eps;
            let plus = eval_scalar(f, &work)?;
            work[i].values_mut()[j] = orig - eps;
            let minus = eval_scalar(f, &work)?;
            work[i].values_mut()[j] = orig;
            buf[j] = (plus - minus) / (2.0 * eps);
        }
        grads.push(buf);
    }
    Ok(grads)
}

/// Worst relative disagreement between two gradient sets:
/// `|a-n| / max(1e-6, |a|, |n|)` over all elements.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a_buf, n_buf) in analytic.iter().zip(numeric) {
        for (a, n) in a_buf.iter().zip(n_buf) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    worst
}

/// Compares reverse-mode gradients against central differences and
/// returns the worst relative error over all input elements.
pub fn grad_check<F: ScalarFn>(f: &F, inputs: &[Tensor], eps: f64) -> Result<f64, NumericsError> {
    let (_, analytic) = reverse_gradients(f, inputs)?;
    let numeric = finite_difference_gradients(f, inputs, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}

/// Reduces any var to a scalar via a fixed random positive weighting, so
/// a grad check exercises every output element.
pub fn scalarize(g: &mut Graph, v: Var, rng: &mut RngState) -> Result<Var, NumericsError> {
    let n = g.value(v).len();
    let weights: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5)).collect();
    let shape = g.shape(v).to_vec();
    let w = g.constant(&shape, &weights)?;
    let prod = g.mul(v, w)?;
    g.sum_all(prod)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let mut rng = RngState::new(21);
        let x = Tensor::uniform(vec![8], -2.0, 2.0, &mut rng);
        let f = |g: &mut Graph, vars: &[Var]| {
            let sq = g.mul(vars[0], vars[0])?;
            g.sum_all(sq)
        };
        let err = grad_check(&f, &[x], 1e-5).unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut rng = RngState::new(22);
        let x = Tensor::uniform(vec![6], 0.5, 2.0, &mut rng);
        let f = |g: &mut Graph, vars: &[Var]| {
            let t = g.tanh(vars[0])?;
            let sq = g.mul(t, t)?;
            g.sum_all(sq)
        };
        let (_, mut analytic) = reverse_gradients(&f, &[x.clone()]).unwrap();
        for buf in &mut analytic {
            for v in buf.iter_mut() {
                *v *= 1.01;
            }
        }
        let numeric = finite_difference_gradients(&f, &[x], 1e-5).unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err > 1e-3, "sensitivity err {err}");
    }

    #[test]
    fn non_finite_forward_is_a_numeric_error() {
        let x = Tensor::vector(vec![800.0]).unwrap();
        // exp overflow via repeated squaring of e^x would be cleaner, but
        // scale keeps it simple: 800 * 1e308 overflows.
        let f = |g: &mut Graph, vars: &[Var]| {
            let y = g.scale(vars[0], 1e308)?;
            g.sum_all(y)
        };
        assert!(matches!(
            grad_check(&f, &[x], 1e-5),
            Err(NumericsError::NonFinite(_))
        ));
    }

    #[test]
    fn eps_must_be_positive() {
        let x = Tensor::vector(vec![1.0]).unwrap();
        let f = |g: &mut Graph, vars: &[Var]| g.sum_all(vars[0]);
        assert!(finite_difference_gradients(&f, &[x], 0.0).is_err());
    }
}
