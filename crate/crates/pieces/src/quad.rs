//! Quadrature helpers: Gauss-Legendre panels and an adaptive 1D integrator.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

/// Gauss-Legendre rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct GlRule {
    pairs: Vec<(f64, f64)>,
}

impl GlRule {
    pub fn new(n: usize) -> Self {
        let n = NonZeroUsize::new(n.max(1)).unwrap();
        let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(n).as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        GlRule { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        self.pairs.iter().map(move |&(x, w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Adaptive integration of a smooth-by-parts function on [a, b].
///
/// Each subinterval is handled with tanh-sinh; subintervals whose error
/// estimate misses the target are bisected.
pub fn integrate(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("integration limits must be finite"));
    }
    if b <= a {
        return Ok(0.0);
    }
    let whole = quadrature::double_exponential::integrate(f, a, b, abs_tol);
    let target = abs_tol.max(rel_tol * whole.integral.abs());
    let mut total = 0.0;
    let mut err_total = 0.0;
    let mut stack = vec![(a, b, 0usize)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let width_share = (hi - lo) / (b - a);
        let local_tol = (target * width_share).max(f64::MIN_POSITIVE);
        let out = quadrature::double_exponential::integrate(f, lo, hi, local_tol * 0.5);
        if out.error_estimate <= local_tol || depth >= 40 {
            if out.error_estimate > local_tol {
                err_total += out.error_estimate;
            }
            total += out.integral;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    if !total.is_finite() || err_total > 10.0 * target {
        return Err(Error::numerical("adaptive quadrature", err_total));
    }
    Ok(total)
}

/// [`integrate`] over consecutive panels split at `breaks` (clipped to [a, b]).
pub fn integrate_split(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    let pieces = (pts.len() - 1).max(1) as f64;
    let mut s = 0.0;
    for w in pts.windows(2) {
        s += integrate(f, w[0], w[1], abs_tol / pieces, rel_tol)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_is_exact_for_polynomials() {
        let r = GlRule::new(6);
        // degree 11 is the exactness limit for six nodes
        let v = r.integrate(0.0, 2.0, |x| x.powi(11));
        assert!((v - 2f64.powi(12) / 12.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let f = |x: f64| (x - 0.3).abs();
        let v = integrate_split(&f, 0.0, 1.0, &[0.3], 1e-13, 1e-12).unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-12);
    }

    #[test]
    fn adaptive_empty_range() {
        assert_eq!(integrate(&|x| x, 1.0, 1.0, 1e-10, 0.0).unwrap(), 0.0);
    }
}
