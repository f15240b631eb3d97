//! Small dense helpers over `nalgebra` and flat `f64` slices.

use nalgebra::DMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest and smallest singular values.
pub fn singular_range(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    (max, min)
}

/// The l2 operator norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    singular_range(m).0
}

pub fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let d = m.nrows();
    (0..d)
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum())
        .collect()
}

/// Row-major flattening, the layout used by the convolution kernels.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

pub fn from_row_major(d: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, data)
}

/// `out += m * v` for a row-major `d x d` block.
#[inline]
pub fn gemv_acc(d: usize, m: &[f64], v: &[f64], out: &mut [f64]) {
    if d == 1 {
        out[0] += m[0] * v[0];
        return;
    }
    for r in 0..d {
        let row = &m[r * d..(r + 1) * d];
        out[r] += dot(row, v);
    }
}
