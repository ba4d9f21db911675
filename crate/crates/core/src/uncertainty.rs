//! Transformation uncertainty of a registration and its conversion into
//! pose-graph edge weights.
//!
//! The total uncertainty is the sum of three terms: the post-convergence
//! matching residual, a term proportional to optimization time, and a term
//! proportional to the iteration count.

use nalgebra::Matrix6;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::Pose6D;
use crate::kdtree::KdTree;
use crate::math::sqrt;

/// Floor applied to the total uncertainty before it is inverted.
pub const MIN_TOTAL_UNCERTAINTY: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyCoefficients {
    /// m/s
    pub c_t: f64,
    /// m/iteration
    pub c_n: f64,
    pub c_p: f64,
    pub c_r: f64,
}

impl Default for UncertaintyCoefficients {
    fn default() -> Self {
        Self {
            c_t: 0.1,
            c_n: 0.01,
            c_p: 1.0,
            c_r: 0.2,
        }
    }
}

impl UncertaintyCoefficients {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.c_t, self.c_n, self.c_p, self.c_r]
            .iter()
            .all(|c| c.is_finite() && *c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCoefficients)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyBreakdown {
    pub u_delta: f64,
    pub u_time: f64,
    pub u_iter: f64,
    pub u_total: f64,
}

/// Block-diagonal edge information: `translation * I3` and `rotation * I3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationMatrix6 {
    pub translation: f64,
    pub rotation: f64,
}

impl InformationMatrix6 {
    pub fn new(translation: f64, rotation: f64) -> Result<Self> {
        if translation.is_finite() && rotation.is_finite() && translation > 0.0 && rotation > 0.0 {
            Ok(Self {
                translation,
                rotation,
            })
        } else {
            Err(Error::InvalidParameter {
                name: "information",
                reason: "weights must be finite and positive",
            })
        }
    }

    pub fn identity() -> Self {
        Self {
            translation: 1.0,
            rotation: 1.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            translation: self.translation * factor,
            rotation: self.rotation * factor,
        }
    }

    pub fn to_matrix(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        for i in 0..3 {
            m[(i, i)] = self.translation;
            m[(i + 3, i + 3)] = self.rotation;
        }
        m
    }

    #[inline]
    pub fn weight(&self, row: usize) -> f64 {
        if row < 3 {
            self.translation
        } else {
            self.rotation
        }
    }
}

/// Mean Euclidean distance between each transformed input point and its
/// nearest reference point.
pub fn matching_degree(reference: &PointCloud, input: &PointCloud, converged: &Pose6D) -> f64 {
    matching_degree_with(&KdTree::new(reference.points()), input, converged)
}

/// [`matching_degree`] against a prebuilt index of the reference cloud.
pub fn matching_degree_with(tree: &KdTree, input: &PointCloud, converged: &Pose6D) -> f64 {
    let r = converged.rotation();
    let t = converged.translation();
    let mut sum = 0.0;
    for p in input.points() {
        let q = crate::geometry::Point3::from(r * p.coords + t);
        if let Some((_, d2)) = tree.nearest(&q) {
            sum += sqrt(d2);
        }
    }
    sum / input.len() as f64
}

pub fn total_uncertainty(
    u_delta: f64,
    t_c: f64,
    n_c: usize,
    coeffs: &UncertaintyCoefficients,
) -> Result<UncertaintyBreakdown> {
    coeffs.validate()?;
    if !(t_c >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_c",
            reason: "must be non-negative",
        });
    }
    if n_c < 1 {
        return Err(Error::InvalidParameter {
            name: "n_c",
            reason: "must be at least 1",
        });
    }
    if !(u_delta >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "u_delta",
            reason: "must be non-negative",
        });
    }
    let u_time = coeffs.c_t * t_c;
    let u_iter = coeffs.c_n * n_c as f64;
    Ok(UncertaintyBreakdown {
        u_delta,
        u_time,
        u_iter,
        u_total: u_delta + u_time + u_iter,
    })
}

/// `I / (c_p^2 U)` on the translation block and `I / (c_r^2 U)` on the
/// rotation block. `U` is clamped to [`MIN_TOTAL_UNCERTAINTY`].
pub fn information_matrix(u_total: f64, coeffs: &UncertaintyCoefficients) -> Result<InformationMatrix6> {
    coeffs.validate()?;
    if !(u_total >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "u_total",
            reason: "must be non-negative",
        });
    }
    let u = u_total.max(MIN_TOTAL_UNCERTAINTY);
    InformationMatrix6::new(
        1.0 / (coeffs.c_p * coeffs.c_p * u),
        1.0 / (coeffs.c_r * coeffs.c_r * u),
    )
}

/// Radius `c_p * sqrt(U)` meant to cover the positioning error.
pub fn reliability_radius(u_total: f64, c_p: f64) -> f64 {
    c_p * sqrt(u_total.max(0.0))
}
