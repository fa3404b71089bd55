//! LU factorization with partial pivoting, inversion, numerical rank and
//! minimum-norm least squares for short-wide systems.

use super::{Matrix, NumericsError};

/// Relative pivot tolerance: a pivot is treated as zero when
/// `|pivot| <= PIVOT_TOLERANCE * max|a|`.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Packed LU factors of a square matrix, `P·A = L·U`.
#[derive(Debug, Clone)]
pub struct Lu {
    factors: Matrix,
    // row_perm[i] is the original row that ended up in position i
    row_perm: Vec<usize>,
    swaps: usize,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self, NumericsError> {
        let n = a.rows();
        if n != a.cols() {
            return Err(NumericsError::NotSquare { rows: a.rows(), cols: a.cols() });
        }
        let scale = a.max_abs();
        let tol = PIVOT_TOLERANCE * scale;
        let mut lu = a.clone();
        let mut row_perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;

        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax.is_nan() || pmax <= tol || scale == 0.0 {
                return Err(NumericsError::Singular { pivot: k, magnitude: pmax.max(0.0) });
            }
            let data = lu.as_mut_slice();
            if p != k {
                let (head, tail) = data.split_at_mut(p * n);
                head[k * n..(k + 1) * n].swap_with_slice(&mut tail[..n]);
                row_perm.swap(k, p);
                swaps += 1;
            }
            let (upper, lower) = data.split_at_mut((k + 1) * n);
            let pivot_row = &upper[k * n..];
            let pivot = pivot_row[k];
            for row in lower.chunks_exact_mut(n) {
                let factor = row[k] / pivot;
                row[k] = factor;
                if factor != 0.0 {
                    for (x, u) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                        *x -= factor * u;
                    }
                }
            }
        }
        Ok(Self { factors: lu, row_perm, swaps })
    }

    pub fn dim(&self) -> usize {
        self.factors.rows()
    }

    /// Diagonal of `U`.
    pub fn pivots(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.factors[(i, i)]).collect()
    }

    pub fn determinant(&self) -> f64 {
        let sign = if self.swaps % 2 == 0 { 1.0 } else { -1.0 };
        sign * self.pivots().iter().product::<f64>()
    }

    /// Solves `A·X = B` for every column of `B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix, NumericsError> {
        let n = self.dim();
        if b.rows() != n {
            return Err(NumericsError::Shape { op: "lu_solve", left: (n, n), right: b.shape() });
        }
        let m = b.cols();
        let mut x = Matrix::zeros(n, m);
        for (i, &src) in self.row_perm.iter().enumerate() {
            x.row_mut(i).copy_from_slice(b.row(src));
        }
        let xs = x.as_mut_slice();
        // forward substitution, unit lower triangle
        for i in 1..n {
            let (done, rest) = xs.split_at_mut(i * m);
            let xi = &mut rest[..m];
            for (k, &l) in self.factors.row(i)[..i].iter().enumerate() {
                if l != 0.0 {
                    for (a, b) in xi.iter_mut().zip(&done[k * m..(k + 1) * m]) {
                        *a -= l * b;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            let (head, solved) = xs.split_at_mut((i + 1) * m);
            let xi = &mut head[i * m..];
            let urow = self.factors.row(i);
            for (k, &u) in urow.iter().enumerate().skip(i + 1) {
                if u != 0.0 {
                    let xk = &solved[(k - i - 1) * m..(k - i) * m];
                    for (a, b) in xi.iter_mut().zip(xk) {
                        *a -= u * b;
                    }
                }
            }
            let d = urow[i];
            for a in xi.iter_mut() {
                *a /= d;
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.dim())).expect("identity matches factor dimension")
    }
}

/// Inverse via LU with partial pivoting.
pub fn invert(a: &Matrix) -> Result<Matrix, NumericsError> {
    Ok(Lu::factor(a)?.inverse())
}

/// 1-norm condition number `‖A‖₁·‖A⁻¹‖₁`.
pub fn condition_one(a: &Matrix, a_inv: &Matrix) -> f64 {
    a.norm_one() * a_inv.norm_one()
}

/// Numerical rank by Gaussian elimination with complete pivoting.
pub fn numerical_rank(a: &Matrix) -> usize {
    let (r, c) = a.shape();
    let tol = PIVOT_TOLERANCE * a.max_abs() * r.max(c) as f64;
    let mut m = a.clone();
    let mut rank = 0;
    let mut row_used = vec![false; r];
    let mut col_used = vec![false; c];
    for _ in 0..r.min(c) {
        let mut best = (0, 0, 0.0);
        for i in (0..r).filter(|&i| !row_used[i]) {
            for j in (0..c).filter(|&j| !col_used[j]) {
                let v = m[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        let (pi, pj, pv) = best;
        if pv.is_nan() || pv <= tol {
            break;
        }
        rank += 1;
        row_used[pi] = true;
        col_used[pj] = true;
        let pivot = m[(pi, pj)];
        for i in (0..r).filter(|&i| !row_used[i]) {
            let f = m[(i, pj)] / pivot;
            if f != 0.0 {
                for j in 0..c {
                    m[(i, j)] -= f * m[(pi, j)];
                }
            }
        }
    }
    rank
}

/// Minimum-norm solve of `y = Xᵀ·g` for `X`.
///
/// `g` is `N×D` with `N ≤ D` and full row rank, `y` is `L×D`; the result is
/// `X = (g·gᵀ)⁻¹·g·yᵀ`, of shape `N×L`. Row `i` of `X` is the coefficient
/// vector multiplying row `i` of `g` in `y = Σᵢ xᵢᵀ gᵢ`.
pub fn solve_least_squares(g: &Matrix, y: &Matrix) -> Result<Matrix, NumericsError> {
    let (n, d) = g.shape();
    if y.cols() != d || n > d {
        return Err(NumericsError::Shape { op: "solve_least_squares", left: g.shape(), right: y.shape() });
    }
    let rank = numerical_rank(g);
    if rank < n {
        return Err(NumericsError::RankDeficient { rank, required: n });
    }
    let gram = g.matmul_t(g)?;
    let lu = Lu::factor(&gram).map_err(|_| NumericsError::RankDeficient { rank: numerical_rank(&gram), required: n })?;
    lu.solve(&g.matmul_t(y)?)
}
