//! Small dense symmetric positive-definite solves. Systems here have at most
//! a couple dozen unknowns, so a plain Cholesky factorization is enough.

use ndarray::{Array1, Array2};

/// Relative pivot threshold below which a matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-11;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factors a symmetric matrix; `None` when it is not numerically
    /// positive definite.
    pub fn factor(a: &Array2<f64>) -> Option<Cholesky> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max);
        if n == 0 || scale.is_nan() || scale <= 0.0 || !scale.is_finite() {
            return None;
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if d.is_nan() || d <= PIVOT_TOL * scale {
                return None;
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Some(Cholesky { l })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.l.nrows();
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        y
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.l.nrows();
        let mut inv = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::zeros(n);
            e[j] = 1.0;
            inv.column_mut(j).assign(&self.solve(&e));
        }
        // symmetrize away round-off
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
                inv[[i, j]] = v;
                inv[[j, i]] = v;
            }
        }
        inv
    }
}
