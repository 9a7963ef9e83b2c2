//! Optimal rigid alignment of particle configurations.

use nalgebra::{DMatrix, Matrix3};

/// Squared distance between two configurations of `particles` points in 3-D
/// after optimally rotating and translating `moving` onto `reference`.
/// Reflections are excluded.
pub fn aligned_squared_distance(reference: &[f64], moving: &[f64], particles: usize) -> f64 {
    let a = centred(reference, particles);
    let b = centred(moving, particles);
    let h: Matrix3<f64> = {
        let m = b.transpose() * &a;
        Matrix3::from_iterator(m.iter().copied())
    };
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, d));
    // Row-vector convention: aligned = b R with R = U diag(1, 1, d) V^T.
    let rotation = u * fix * vt;
    let aligned = b * DMatrix::from_iterator(3, 3, rotation.iter().copied());
    (aligned - a).norm_squared()
}

fn centred(x: &[f64], particles: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_row_slice(particles, 3, x);
    let mean = m.row_mean();
    for mut row in m.row_iter_mut() {
        row -= &mean;
    }
    m
}
