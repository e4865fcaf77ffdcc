//! Small dense symmetric-indefinite solves (Bunch-Kaufman `LDLᵀ`).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const BK_ALPHA: f64 = 0.640_388_203_202_208; // (1 + √17) / 8

/// `P·A·Pᵀ = L·D·Lᵀ` with `L` unit lower triangular and `D` block diagonal
/// (1×1 and 2×2 blocks).
#[derive(Debug, Clone)]
pub struct Ldlt {
    l: DMatrix<f64>,
    d: DMatrix<f64>,
    /// `block[k]` is 1 or 2 at the first index of each pivot block, 0 on the
    /// second row of a 2×2 block.
    block: Vec<u8>,
    perm: Vec<usize>,
}

impl Ldlt {
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::ShapeMismatch("LDLt needs a square matrix".into()));
        }
        let mut w = a.clone();
        let mut l = DMatrix::<f64>::identity(n, n);
        let mut d = DMatrix::<f64>::zeros(n, n);
        let mut block = vec![0u8; n];
        let mut perm: Vec<usize> = (0..n).collect();

        let swap = |w: &mut DMatrix<f64>,
                    l: &mut DMatrix<f64>,
                    perm: &mut Vec<usize>,
                    i: usize,
                    j: usize,
                    k: usize| {
            if i == j {
                return;
            }
            w.swap_rows(i, j);
            w.swap_columns(i, j);
            for c in 0..k {
                let t = l[(i, c)];
                l[(i, c)] = l[(j, c)];
                l[(j, c)] = t;
            }
            perm.swap(i, j);
        };

        let mut k = 0;
        while k < n {
            let akk = w[(k, k)].abs();
            let (mut r, mut colmax) = (k, 0.0f64);
            for i in (k + 1)..n {
                if w[(i, k)].abs() > colmax {
                    colmax = w[(i, k)].abs();
                    r = i;
                }
            }
            if akk.max(colmax) == 0.0 || !akk.max(colmax).is_finite() {
                return Err(Error::SingularMatrix);
            }
            let two_by_two = if akk >= BK_ALPHA * colmax {
                false
            } else {
                let mut rowmax = 0.0f64;
                for j in k..n {
                    if j != r {
                        rowmax = rowmax.max(w[(r, j)].abs());
                    }
                }
                if akk * rowmax >= BK_ALPHA * colmax * colmax {
                    false
                } else if w[(r, r)].abs() >= BK_ALPHA * rowmax {
                    swap(&mut w, &mut l, &mut perm, k, r, k);
                    false
                } else {
                    swap(&mut w, &mut l, &mut perm, k + 1, r, k);
                    true
                }
            };

            if !two_by_two {
                let piv = w[(k, k)];
                d[(k, k)] = piv;
                block[k] = 1;
                for i in (k + 1)..n {
                    l[(i, k)] = w[(i, k)] / piv;
                }
                for i in (k + 1)..n {
                    for j in (k + 1)..n {
                        w[(i, j)] -= l[(i, k)] * w[(k, j)];
                    }
                }
                k += 1;
            } else {
                let (p, q, s) = (w[(k, k)], w[(k + 1, k)], w[(k + 1, k + 1)]);
                let det = p * s - q * q;
                if det == 0.0 || !det.is_finite() {
                    return Err(Error::SingularMatrix);
                }
                d[(k, k)] = p;
                d[(k + 1, k)] = q;
                d[(k, k + 1)] = q;
                d[(k + 1, k + 1)] = s;
                block[k] = 2;
                for i in (k + 2)..n {
                    let (u, v) = (w[(i, k)], w[(i, k + 1)]);
                    l[(i, k)] = (u * s - v * q) / det;
                    l[(i, k + 1)] = (v * p - u * q) / det;
                }
                for i in (k + 2)..n {
                    for j in (k + 2)..n {
                        w[(i, j)] -= l[(i, k)] * w[(k, j)] + l[(i, k + 1)] * w[(k + 1, j)];
                    }
                }
                k += 2;
            }
        }
        Ok(Self { l, d, block, perm })
    }

    /// Solve `A·X = B` column by column.
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.l.nrows();
        let mut x = DMatrix::<f64>::zeros(n, b.ncols());
        let mut y = vec![0.0; n];
        for col in 0..b.ncols() {
            for i in 0..n {
                y[i] = b[(self.perm[i], col)];
            }
            // L z = y
            for i in 0..n {
                let mut s = y[i];
                for j in 0..i {
                    s -= self.l[(i, j)] * y[j];
                }
                y[i] = s;
            }
            // D w = z
            let mut k = 0;
            while k < n {
                if self.block[k] == 1 {
                    y[k] /= self.d[(k, k)];
                    k += 1;
                } else {
                    let (p, q, s) = (self.d[(k, k)], self.d[(k + 1, k)], self.d[(k + 1, k + 1)]);
                    let det = p * s - q * q;
                    let (u, v) = (y[k], y[k + 1]);
                    y[k] = (u * s - v * q) / det;
                    y[k + 1] = (v * p - u * q) / det;
                    k += 2;
                }
            }
            // Lᵀ u = w
            for i in (0..n).rev() {
                let mut s = y[i];
                for j in (i + 1)..n {
                    s -= self.l[(j, i)] * y[j];
                }
                y[i] = s;
            }
            for i in 0..n {
                x[(self.perm[i], col)] = y[i];
            }
        }
        x
    }
}

/// 2-norm condition number of a symmetric matrix from its eigenvalues.
pub fn symmetric_condition(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solve `A·X = B` for symmetric `A` after symmetric diagonal equilibration
/// `S·A·S` with `S_ii = 1/√(max_j |A_ij|)`.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::ShapeMismatch("right-hand side row count".into()));
    }
    let s: Vec<f64> = (0..n)
        .map(|i| {
            let m = a.row(i).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if m > 0.0 {
                1.0 / m.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| s[i] * a[(i, j)] * s[j]);
    let rhs = DMatrix::from_fn(n, b.ncols(), |i, j| s[i] * b[(i, j)]);
    let y = Ldlt::factor(&scaled)?.solve(&rhs);
    Ok(DMatrix::from_fn(n, b.ncols(), |i, j| s[i] * y[(i, j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn solves_indefinite_with_zero_diagonal() {
        // needs a 2x2 pivot
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]);
        let x_true = DMatrix::from_row_slice(3, 1, &[1.0, -2.0, 0.5]);
        let b = &a * &x_true;
        let x = Ldlt::factor(&a).unwrap().solve(&b);
        assert!((x - x_true).abs().max() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let a = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(Ldlt::factor(&a), Err(Error::SingularMatrix)));
    }

    #[test]
    fn condition_of_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-4.0, 2.0, 0.5]));
        assert!((symmetric_condition(&a) - 8.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn random_symmetric_solves(entries in prop::collection::vec(-3.0f64..3.0, 15), rhs in prop::collection::vec(-1.0f64..1.0, 5)) {
            let mut a = DMatrix::<f64>::zeros(5, 5);
            let mut it = entries.iter();
            for i in 0..5 {
                for j in i..5 {
                    let v = *it.next().unwrap();
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            prop_assume!(symmetric_condition(&a) < 1e8);
            let b = DMatrix::from_column_slice(5, 1, &rhs);
            let x = solve_symmetric(&a, &b).unwrap();
            let r = &a * &x - &b;
            prop_assert!(r.abs().max() < 1e-9);
        }
    }
}
