/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the maximum error occurred.
    pub worst_index: usize,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Central-difference check. The error per parameter is
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<F>(f: F, params: &[f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length must match parameters");
    let mut p = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut worst = (0.0f64, 0usize);
    for i in 0..params.len() {
        let orig = p[i];
        p[i] = orig + h;
        let plus = f(&p);
        p[i] = orig - h;
        let minus = f(&p);
        p[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / fd.abs().max(1.0);
        if err > worst.0 || err.is_nan() {
            worst = (if err.is_nan() { f64::INFINITY } else { err }, i);
        }
        numeric.push(fd);
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        numeric,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic_gradient_passes_tightly() {
        let f = |p: &[f64]| 3.0 * p[0] * p[0] + p[0] * p[1] - 2.0 * p[1] * p[1];
        let x = [0.7, -1.3];
        let g = [6.0 * x[0] + x[1], x[0] - 4.0 * x[1]];
        let r = finite_diff_check(f, &x, &g, 1e-4);
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn doubled_gradient_is_flagged() {
        let f = |p: &[f64]| p[0] * p[0];
        let r = finite_diff_check(f, &[0.25], &[2.0 * 0.5], 1e-5);
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
        assert!(!r.passes(1e-4));
    }
}
