use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose6D};
use crate::math::floor;

/// Integer voxel coordinates, `floor(coordinate / size)` per axis.
pub type VoxelIndex = (i64, i64, i64);

#[inline]
pub fn voxel_index(p: &Point3, size: f64) -> VoxelIndex {
    (
        floor(p.x / size) as i64,
        floor(p.y / size) as i64,
        floor(p.z / size) as i64,
    )
}

/// One LiDAR sweep. Always holds at least one finite point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    pub timestamp: f64,
    pub frame_id: u64,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, timestamp: f64, frame_id: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinitePoint);
        }
        Ok(Self {
            points,
            timestamp,
            frame_id,
        })
    }

    pub fn from_points(points: Vec<Point3>) -> Result<Self> {
        Self::new(points, 0.0, 0)
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn transformed(&self, pose: &Pose6D) -> PointCloud {
        let r = pose.rotation();
        let t = pose.translation();
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| Point3::from(r * p.coords + t))
                .collect(),
            timestamp: self.timestamp,
            frame_id: self.frame_id,
        }
    }

    /// Replaces the points of every occupied `leaf`-sized voxel by their
    /// centroid. Output order follows the voxel index order.
    pub fn voxel_downsample(&self, leaf: f64) -> Result<PointCloud> {
        if !(leaf > 0.0) {
            return Err(Error::InvalidParameter {
                name: "leaf",
                reason: "must be positive",
            });
        }
        let mut voxels: BTreeMap<VoxelIndex, (Vector3<f64>, usize)> = BTreeMap::new();
        for p in &self.points {
            let entry = voxels
                .entry(voxel_index(p, leaf))
                .or_insert((Vector3::zeros(), 0));
            entry.0 += p.coords;
            entry.1 += 1;
        }
        let points = voxels
            .values()
            .map(|(sum, n)| Point3::from(sum / *n as f64))
            .collect();
        PointCloud::new(points, self.timestamp, self.frame_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert_eq!(PointCloud::from_points(vec![]), Err(Error::EmptyCloud));
        assert_eq!(
            PointCloud::from_points(vec![Point3::new(f64::NAN, 0.0, 0.0)]),
            Err(Error::NonFinitePoint)
        );
    }

    #[test]
    fn downsample_merges_voxels() {
        let cloud = PointCloud::from_points(vec![
            Point3::new(0.1, 0.1, 0.1),
            Point3::new(0.3, 0.3, 0.3),
            Point3::new(1.2, 0.1, 0.1),
            Point3::new(-0.1, 0.1, 0.1),
        ])
        .unwrap();
        let ds = cloud.voxel_downsample(0.5).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds
            .points()
            .iter()
            .any(|p| (p - Point3::new(0.2, 0.2, 0.2)).norm() < 1e-12));
    }

    #[test]
    fn voxel_index_floors_negative() {
        assert_eq!(voxel_index(&Point3::new(-0.5, 0.5, 1.0), 1.0), (-1, 0, 1));
    }
}
