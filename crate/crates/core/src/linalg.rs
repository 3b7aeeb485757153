//! Small dense linear-algebra helpers shared by the LQR back ends.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `(X + X^T) / 2`, in place.
pub fn symmetrize(x: &mut Mat) {
    let n = x.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (x[(i, j)] + x[(j, i)]);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut x: Mat) -> Mat {
    symmetrize(&mut x);
    x
}

/// Relative difference `|a - b| / max(|b|, floor)` in the Frobenius norm.
pub fn rel_err_mat(a: &Mat, b: &Mat, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

pub fn rel_err_vec(a: &Vector, b: &Vector, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

pub fn all_finite_mat(x: &Mat) -> bool {
    x.iter().all(|v| v.is_finite())
}

pub fn all_finite_vec(x: &Vector) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Solves `H u = rhs` for symmetric positive definite `H`.
pub fn spd_solve(h: &Mat, rhs: &Mat) -> Option<Mat> {
    h.clone().cholesky().map(|c| c.solve(rhs))
}

pub fn spd_solve_vec(h: &Mat, rhs: &Vector) -> Option<Vector> {
    h.clone().cholesky().map(|c| c.solve(rhs))
}

/// Copies `block` into `dst` with its top-left corner at `(row, col)`.
pub fn set_block(dst: &mut Mat, row: usize, col: usize, block: &Mat) {
    dst.view_mut((row, col), block.shape()).copy_from(block);
}

pub fn add_block(dst: &mut Mat, row: usize, col: usize, block: &Mat) {
    let mut v = dst.view_mut((row, col), block.shape());
    v += block;
}
