//! PCA plane-fit normals and covariance curvature.

use nalgebra::Matrix3;

use super::{grid::PointGrid, PointCloud, Vec3};
use crate::error::{Error, Result};

/// Mean distance to the nearest other point.
pub fn mean_nn_spacing(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return Err(Error::EmptyCloud);
    }
    let grid = PointGrid::build(&cloud.points);
    let mut acc = 0.0;
    for p in &cloud.points {
        // Entry 0 is the point itself at distance 0.
        acc += grid.k_nearest(p, 2)[1].0.sqrt();
    }
    Ok(acc / cloud.len() as f64)
}

/// Default neighborhood radius: 2.5x the mean nearest-neighbor spacing.
pub fn default_radius(cloud: &PointCloud) -> Result<f64> {
    Ok(2.5 * mean_nn_spacing(cloud)?)
}

/// Normals at the default radius, growing the radius (up to 8 times) where
/// sampling noise leaves isolated spots with fewer than 3 neighbors.
/// Returns the cloud with normals and the radius that succeeded.
pub fn estimate_normals_auto(cloud: &PointCloud) -> Result<(PointCloud, f64)> {
    let mut radius = default_radius(cloud)?;
    for _ in 0..8 {
        match estimate_normals(cloud, radius) {
            Ok(out) => return Ok((out, radius)),
            Err(Error::InsufficientNeighbors { .. }) => radius *= 1.5,
            Err(e) => return Err(e),
        }
    }
    estimate_normals(cloud, radius).map(|out| (out, radius))
}

/// Eigenvalues (descending) and the eigenvector of the smallest eigenvalue
/// of the covariance of `{ cloud[i] } ∪ neighbors`.
fn local_pca(points: &[Vec3], center: usize, neighbors: &[u32]) -> ([f64; 3], Vec3) {
    let cnt = neighbors.len() + 1;
    let mut mean = points[center];
    for &j in neighbors {
        mean += points[j as usize];
    }
    mean /= cnt as f64;
    let mut cov = Matrix3::zeros();
    let mut accum = |p: Vec3| {
        let d = p - mean;
        cov += d * d.transpose();
    };
    accum(points[center]);
    for &j in neighbors {
        accum(points[j as usize]);
    }
    cov /= cnt as f64;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let vals = [
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    ];
    let normal = eig.eigenvectors.column(order[2]).into_owned();
    (vals, normal)
}

fn oriented(normal: Vec3, outward: Vec3) -> Vec3 {
    let d = normal.dot(&outward);
    if d > 0.0 {
        return normal;
    }
    if d < 0.0 {
        return -normal;
    }
    // Ambiguous orientation: keep the +z hemisphere, then +y, then +x.
    for c in [2, 1, 0] {
        if normal[c] > 0.0 {
            return normal;
        }
        if normal[c] < 0.0 {
            return -normal;
        }
    }
    normal
}

/// Plane-fit normals from the covariance of each point's radius
/// neighborhood, oriented away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, radius: f64) -> Result<PointCloud> {
    let grid = PointGrid::build(&cloud.points);
    let centroid = cloud.centroid();
    let mut normals = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let mut nbrs = grid.within_radius(p, radius);
        nbrs.retain(|&j| j as usize != i);
        if nbrs.len() < 3 {
            return Err(Error::InsufficientNeighbors {
                index: i,
                found: nbrs.len(),
            });
        }
        let (_, mut normal) = local_pca(&cloud.points, i, &nbrs);
        normal.normalize_mut();
        normals.push(oriented(normal, p - centroid));
    }
    let mut out = cloud.clone();
    out.normals = Some(normals);
    Ok(out)
}

/// Covariance-ratio curvature per point.
///
/// With descending eigenvalues a >= b >= c of the neighborhood covariance,
/// K = c / (b + c + eps), which is 0 on a plane and at most 1/2.
pub fn curvature(cloud: &PointCloud, radius: f64, eps: f64) -> Result<Vec<f64>> {
    let grid = PointGrid::build(&cloud.points);
    let mut out = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let mut nbrs = grid.within_radius(p, radius);
        nbrs.retain(|&j| j as usize != i);
        if nbrs.len() < 3 {
            return Err(Error::InsufficientNeighbors {
                index: i,
                found: nbrs.len(),
            });
        }
        let (vals, _) = local_pca(&cloud.points, i, &nbrs);
        out.push(vals[2] / (vals[1] + vals[2] + eps));
    }
    Ok(out)
}

/// Descending covariance eigenvalues of one radius neighborhood; used by
/// fixtures and tests that probe the spectrum directly.
pub fn neighborhood_eigenvalues(cloud: &PointCloud, index: usize, radius: f64) -> Result<[f64; 3]> {
    let grid = PointGrid::build(&cloud.points);
    let mut nbrs = grid.within_radius(&cloud.points[index], radius);
    nbrs.retain(|&j| j as usize != index);
    if nbrs.len() < 3 {
        return Err(Error::InsufficientNeighbors {
            index,
            found: nbrs.len(),
        });
    }
    Ok(local_pca(&cloud.points, index, &nbrs).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_grid(side: usize, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..side {
            for j in 0..side {
                pts.push(Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        PointCloud::from_points(pts)
    }

    #[test]
    fn plane_normals_are_z() {
        let cloud = plane_grid(12, 0.1);
        let out = estimate_normals(&cloud, 0.25).unwrap();
        for n in out.normals.as_ref().unwrap() {
            let angle = n.cross(&Vec3::z()).norm().asin();
            assert!(angle < 1e-6, "angular error {angle}");
        }
    }

    #[test]
    fn plane_curvature_is_zero() {
        let cloud = plane_grid(12, 0.1);
        let k = curvature(&cloud, 0.25, 1e-9).unwrap();
        assert!(k.iter().all(|&v| v <= 1e-6));
        assert!(k.iter().all(|&v| (0.0..=0.5).contains(&v)));
    }

    #[test]
    fn too_few_neighbors_is_an_error() {
        let cloud = PointCloud::from_points(vec![
            Vec3::zeros(),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.0, 0.1, 0.0),
        ]);
        assert!(matches!(
            estimate_normals(&cloud, 0.15),
            Err(Error::InsufficientNeighbors { .. })
        ));
    }

    #[test]
    fn collinear_neighborhood_has_zero_curvature() {
        let cloud = PointCloud::from_points(
            (0..8).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect(),
        );
        let k = curvature(&cloud, 0.35, 1e-9).unwrap();
        assert!(k.iter().all(|&v| v < 1e-9));
    }
}
