//! Helpers shared by the integration tests. Matrix conversions here are
//! written out by hand so they stay independent of the library's own.

#![allow(dead_code)]

use std::path::PathBuf;

use handover::se3::Pose;
use nalgebra::{Matrix3, Matrix4, Vector3};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn catalog_file() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join("grasp_catalog.toml")
}

pub fn quat_to_matrix([w, x, y, z]: [f64; 4]) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn homogeneous(position: [f64; 3], wxyz: [f64; 4]) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&quat_to_matrix(wxyz));
    m[(0, 3)] = position[0];
    m[(1, 3)] = position[1];
    m[(2, 3)] = position[2];
    m
}

pub fn pose_matrix(p: &Pose) -> Matrix4<f64> {
    homogeneous(p.translation.into(), p.rotation.wxyz())
}

pub fn translation(m: &Matrix4<f64>) -> Vector3<f64> {
    Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)])
}

/// Position distance and rotation angle between two homogeneous transforms.
pub fn matrix_error(a: &Matrix4<f64>, b: &Matrix4<f64>) -> (f64, f64) {
    let dp = (translation(a) - translation(b)).norm();
    let ra = a.fixed_view::<3, 3>(0, 0);
    let rb = b.fixed_view::<3, 3>(0, 0);
    let rel = ra.transpose() * rb;
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    (dp, c.acos())
}

/// Largest absolute entry difference.
pub fn max_abs_diff(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
    (a - b).abs().max()
}
