//! Logistic sigmoid and its derivatives as polynomials in σ.
//!
//! `σ' = σ − σ²`, and differentiating `σ^j` gives `j·σ^j − j·σ^{j+1}`, so
//! `σ^(k)` is a polynomial of degree `k + 1` in `σ`.

use crate::real::Real;

/// Highest derivative order tabulated. The forward pass needs up to 6, its
/// adjoint one more.
pub const MAX_DERIVATIVE: usize = 7;

#[derive(Debug, Clone)]
pub struct SigmoidPolys {
    /// `coeffs[k][j]` is the coefficient of `σ^j` in `σ^(k)`.
    coeffs: Vec<Vec<f64>>,
}

impl Default for SigmoidPolys {
    fn default() -> Self {
        Self::new(MAX_DERIVATIVE)
    }
}

impl SigmoidPolys {
    pub fn new(max_k: usize) -> Self {
        let mut coeffs = vec![vec![0.0, 1.0]];
        for k in 0..max_k {
            let prev = &coeffs[k];
            let mut next = vec![0.0; prev.len() + 1];
            for (j, &c) in prev.iter().enumerate() {
                let jc = j as f64 * c;
                next[j] += jc;
                next[j + 1] -= jc;
            }
            coeffs.push(next);
        }
        SigmoidPolys { coeffs }
    }

    pub fn max_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coefficients(&self, k: usize) -> &[f64] {
        &self.coeffs[k]
    }

    /// `σ^(k)` given `σ` itself.
    pub fn eval<T: Real>(&self, k: usize, sigma: T) -> T {
        self.coeffs[k]
            .iter()
            .rev()
            .fold(T::zero(), |acc, &c| acc * sigma + T::from_f64(c))
    }

    /// Fills `out[k]` with `σ^(k)(u)` for `k = 0..out.len()`, elementwise.
    pub fn table<T: Real>(&self, u: &[T], out: &mut [Vec<T>]) {
        let orders = out.len();
        for row in out.iter_mut() {
            row.resize(u.len(), T::zero());
        }
        for (e, &x) in u.iter().enumerate() {
            let s = sigmoid(x);
            out[0][e] = s;
            for (k, row) in out.iter_mut().enumerate().take(orders).skip(1) {
                row[e] = self.eval(k, s);
            }
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_derivatives_closed_form() {
        let p = SigmoidPolys::default();
        for &x in &[-3.0f64, -0.4, 0.0, 0.9, 5.0] {
            let s = sigmoid(x);
            assert!((p.eval(1, s) - s * (1.0 - s)).abs() < 1e-15);
            assert!((p.eval(2, s) - s * (1.0 - s) * (1.0 - 2.0 * s)).abs() < 1e-15);
        }
    }

    #[test]
    fn degree_is_k_plus_one() {
        let p = SigmoidPolys::default();
        for k in 0..=MAX_DERIVATIVE {
            assert_eq!(p.coefficients(k).len(), k + 2);
            assert_ne!(*p.coefficients(k).last().unwrap(), 0.0);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = SigmoidPolys::default();
        let h = 1e-4;
        for &x in &[-1.3f64, 0.2, 2.1] {
            for k in 0..MAX_DERIVATIVE {
                let fd = (p.eval(k, sigmoid(x + h)) - p.eval(k, sigmoid(x - h))) / (2.0 * h);
                let exact = p.eval(k + 1, sigmoid(x));
                assert!(
                    (fd - exact).abs() < 1e-6 * (1.0 + exact.abs()),
                    "k={k} x={x}: {fd} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn sigma_at_zero() {
        let p = SigmoidPolys::default();
        let s = sigmoid(0.0f64);
        assert_eq!(s, 0.5);
        assert_eq!(p.eval(1, s), 0.25);
        assert_eq!(p.eval(2, s), 0.0);
    }
}
