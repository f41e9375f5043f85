//! Point-cloud and mesh types plus the geometric kernels everything else is
//! built on: neighbor queries, PCA normals and curvature, Chamfer distance,
//! and the baseline samplers.

mod chamfer;
mod grid;
mod knn;
mod normals;
mod sample;

pub use chamfer::chamfer_l2;
pub use grid::PointGrid;
pub use knn::{knn, radius_neighbors, NeighborGraph, NeighborQuery};
pub use normals::{curvature, default_radius, estimate_normals, estimate_normals_auto, mean_nn_spacing, neighborhood_eigenvalues};
pub use sample::{fps, fps_in_pool, fps_weighted, random_sample, voxel_sample};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

/// A point cloud with optional per-point attributes.
///
/// `gt_label` marks anomalous points (1) and `region_id` groups them into
/// defect regions (0 = normal). Both are either absent or full length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub gt_label: Option<Vec<u8>>,
    pub region_id: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self {
            points,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        if self.points.is_empty() {
            return Vec3::zeros();
        }
        self.points.iter().sum::<Vec3>() / self.points.len() as f64
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds_of(&self.points)
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    /// Checks the structural invariants: finite coordinates, unit normals,
    /// attribute lengths, and the gt/region consistency rule.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        for (i, p) in self.points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidConfig(format!("point {i} is not finite")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} normals for {n} points",
                    normals.len()
                )));
            }
            for (i, nv) in normals.iter().enumerate() {
                if (nv.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidConfig(format!(
                        "normal {i} has norm {}",
                        nv.norm()
                    )));
                }
            }
        }
        match (&self.gt_label, &self.region_id) {
            (Some(gt), Some(region)) => {
                if gt.len() != n || region.len() != n {
                    return Err(Error::ShapeMismatch("gt/region length".into()));
                }
                for i in 0..n {
                    if (region[i] > 0) != (gt[i] == 1) {
                        return Err(Error::InvalidConfig(format!(
                            "point {i}: region_id {} but gt {}",
                            region[i], gt[i]
                        )));
                    }
                }
            }
            (Some(gt), None) => {
                if gt.len() != n {
                    return Err(Error::ShapeMismatch("gt length".into()));
                }
            }
            (None, Some(region)) => {
                if region.len() != n {
                    return Err(Error::ShapeMismatch("region length".into()));
                }
            }
            (None, None) => {}
        }
        Ok(())
    }

    /// Keeps only the points at `keep` (ascending indices), remapping all
    /// per-point attributes.
    pub fn select(&self, keep: &[usize]) -> PointCloud {
        let pick = |v: &Vec<Vec3>| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        PointCloud {
            points: pick(&self.points),
            normals: self.normals.as_ref().map(pick),
            gt_label: self
                .gt_label
                .as_ref()
                .map(|v| keep.iter().map(|&i| v[i]).collect()),
            region_id: self
                .region_id
                .as_ref()
                .map(|v| keep.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!("face {fi} indexes out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn face_area(&self, f: &[usize; 3]) -> f64 {
        let (a, b, c) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }
}

pub(crate) fn bounds_of(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    (lo, hi)
}
