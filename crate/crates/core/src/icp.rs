//! Point-to-point ICP, used as an independent baseline for NDT.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose6D};
use crate::kdtree::KdTree;
use crate::math::sqrt;
use crate::ndt::RegistrationResult;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop once the incremental update is shorter than this (m, rad combined).
    pub step_tolerance: f64,
    /// Pairs farther apart than this are ignored.
    pub max_correspondence_distance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            step_tolerance: 1e-10,
            max_correspondence_distance: f64::INFINITY,
        }
    }
}

/// Least-squares rigid transform taking `src[i]` onto `dst[i]` (Kabsch).
pub fn rigid_fit(src: &[Point3], dst: &[Point3]) -> Result<Pose6D> {
    let n = src.len().min(dst.len());
    if n < 3 {
        return Err(Error::InsufficientCorrespondences(n));
    }
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n as f64;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n as f64;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - cs) * (d.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::NumericalDivergence);
    };
    let v = v_t.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
    let t = cd - r * cs;
    Ok(Pose6D::from_parts(&r, &t))
}

/// Registers `input` onto `reference` by iterating nearest-neighbour pairing
/// and closed-form rigid updates.
pub fn icp_register(
    reference: &PointCloud,
    input: &PointCloud,
    initial: &Pose6D,
    params: &IcpParams,
) -> Result<RegistrationResult> {
    let tree = KdTree::new(reference.points());
    let max_d2 = params.max_correspondence_distance * params.max_correspondence_distance;
    let mut pose = *initial;
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    let mut rms = 0.0;
    let mut evaluations = 0u64;

    while iterations < params.max_iterations.max(1) {
        iterations += 1;
        let mut src = Vec::with_capacity(input.len());
        let mut dst = Vec::with_capacity(input.len());
        let mut sq = 0.0;
        for p in input.points() {
            let q = pose.apply(p);
            let Some((idx, d2)) = tree.nearest(&q) else { continue };
            evaluations += 1;
            if d2 <= max_d2 {
                src.push(q);
                dst.push(*tree.point(idx));
                sq += d2;
            }
        }
        rms = if src.is_empty() { 0.0 } else { sqrt(sq / src.len() as f64) };
        let update = rigid_fit(&src, &dst)?;
        pose = update.compose(&pose);
        last_step = update.translation_norm() + update.rotation_norm();
        if !pose.is_finite() {
            return Err(Error::NumericalDivergence);
        }
        if last_step < params.step_tolerance {
            converged = true;
            break;
        }
    }

    Ok(RegistrationResult {
        transform: pose,
        converged,
        iterations,
        elapsed: 0.0,
        final_score: rms,
        matching_degree: None,
        point_evaluations: evaluations,
        last_step_norm: last_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..5 {
                for k in 0..4 {
                    let (x, y, z) = (i as f64, j as f64 * 1.3, k as f64 * 0.7);
                    pts.push(Point3::new(x + 0.05 * (j * k) as f64, y + 0.1 * i as f64, z));
                }
            }
        }
        PointCloud::from_points(pts).unwrap()
    }

    #[test]
    fn self_registration_is_identity() {
        let c = lattice();
        let r = icp_register(&c, &c, &Pose6D::identity(), &IcpParams::default()).unwrap();
        assert!(r.converged);
        assert!(r.transform.translation_norm() < 1e-6);
        assert!(r.transform.rotation_norm() < 1e-6);
    }

    #[test]
    fn recovers_exact_rigid_transform() {
        let reference = lattice();
        let truth = Pose6D::new(0.12, -0.08, 0.05, 0.01, -0.015, 0.03);
        // input = truth^-1 applied to the reference, so truth maps input onto reference.
        let input = reference.transformed(&truth.inverse());
        let r = icp_register(&reference, &input, &Pose6D::identity(), &IcpParams::default()).unwrap();
        let err = truth.inverse().compose(&r.transform);
        assert!(err.translation_norm() < 1e-6, "{err:?}");
        assert!(err.rotation_norm() < 1e-6);
    }

    #[test]
    fn too_few_pairs() {
        let a = PointCloud::from_points(alloc::vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let r = icp_register(&a, &a, &Pose6D::identity(), &IcpParams::default());
        assert_eq!(r.unwrap_err(), Error::InsufficientCorrespondences(2));
    }

    #[test]
    fn rigid_fit_exact() {
        let src: Vec<Point3> = lattice().points().to_vec();
        let truth = Pose6D::new(1.0, 2.0, -0.5, 0.3, -0.2, 1.1);
        let dst: Vec<Point3> = src.iter().map(|p| truth.apply(p)).collect();
        let fit = rigid_fit(&src, &dst).unwrap();
        assert!((fit.to_vector() - truth.to_vector()).norm() < 1e-9);
    }
}
