use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares the reverse-mode gradient of `f` at `x` against central
/// differences with step `eps`.
///
/// Returns the largest `|analytic - numeric| / (|analytic| + 1e-8)` over all
/// coordinates. A non-finite value anywhere counts as infinite error.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let analytic = {
        let g = Graph::new();
        let xv = g.param(x.clone());
        let y = f(&g, xv)?;
        g.grad(y, &[xv], false)?[0].value()
    };
    let eval = |t: Tensor| -> Result<f64> {
        let g = Graph::new();
        let xv = g.constant(t);
        Ok(f(&g, xv)?.item())
    };

    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + 1e-8);
        if !err.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err = finite_diff_check(|_, x| Ok(x.mul(x)?.sum()), &x, 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn relu_away_from_kink_is_exact() {
        let x = Tensor::vector(vec![1.5, 2.0, 7.25]);
        let err = finite_diff_check(|_, x| Ok(x.relu().sum()), &x, 1e-4).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn nan_reports_infinite_error() {
        let x = Tensor::vector(vec![1.0]);
        let err = finite_diff_check(
            |g, x| x.mul(g.constant(Tensor::scalar(f64::NAN))).map(|v| v.sum()),
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err.is_infinite());
    }
}
