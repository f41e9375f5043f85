//! Point patches: center + k nearest neighbors in center-relative
//! coordinates, plus the random patch mask shared by training and inference.

use rand::seq::index::sample as index_sample;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, PointGrid, Vec3};
use crate::seed;

/// Sampled centers with their kNN index table and center-relative
/// coordinates. All patches share the same k.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub centers: Vec<Vec3>,
    pub neighbor_idx: Vec<Vec<u32>>,
    /// local_coords[i][j] = cloud[neighbor_idx[i][j]] - centers[i]
    pub local_coords: Vec<Vec<Vec3>>,
    pub k: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Absolute coordinates of patch `i`.
    pub fn absolute_patch(&self, i: usize) -> Vec<Vec3> {
        self.local_coords[i]
            .iter()
            .map(|p| p + self.centers[i])
            .collect()
    }

    /// Union of all patch points as one cloud (n_c * k points).
    pub fn assemble_cloud(&self) -> PointCloud {
        let mut points = Vec::with_capacity(self.len() * self.k);
        for i in 0..self.len() {
            for p in &self.local_coords[i] {
                points.push(p + self.centers[i]);
            }
        }
        PointCloud::from_points(points)
    }
}

/// Patches around cloud points given by index. The center point itself is
/// eligible as a neighbor and always lands first (distance zero).
pub fn make_patches(cloud: &PointCloud, centers: &[usize], k: usize) -> Result<PatchSet> {
    let coords: Vec<Vec3> = centers.iter().map(|&i| cloud.points[i]).collect();
    make_patches_at(cloud, &coords, k)
}

/// Patches around arbitrary center coordinates (used when transferring one
/// cloud's centers onto another cloud).
pub fn make_patches_at(cloud: &PointCloud, centers: &[Vec3], k: usize) -> Result<PatchSet> {
    let n = cloud.len();
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let grid = PointGrid::build(&cloud.points);
    let mut neighbor_idx = Vec::with_capacity(centers.len());
    let mut local_coords = Vec::with_capacity(centers.len());
    for c in centers {
        let nn = grid.k_nearest(c, k);
        let idx: Vec<u32> = nn.iter().map(|&(_, i)| i).collect();
        let local: Vec<Vec3> = idx.iter().map(|&i| cloud.points[i as usize] - c).collect();
        neighbor_idx.push(idx);
        local_coords.push(local);
    }
    Ok(PatchSet {
        centers: centers.to_vec(),
        neighbor_idx,
        local_coords,
        k,
    })
}

/// Which patches are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub masked: Vec<bool>,
    pub ratio: f64,
}

impl MaskSpec {
    pub fn none(n_patches: usize) -> Self {
        Self {
            masked: vec![false; n_patches],
            ratio: 0.0,
        }
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i]).collect()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| !self.masked[i]).collect()
    }
}

/// Uniform random mask of floor(m * n_c) patches, deterministic in the seed.
pub fn random_mask(n_patches: usize, m: f64, seed_value: u64) -> Result<MaskSpec> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::InvalidRatio(m));
    }
    let n_masked = (m * n_patches as f64).floor() as usize;
    if m > 0.0 && n_masked == 0 {
        return Err(Error::DegenerateMask {
            n_patches,
            ratio: m,
        });
    }
    let mut masked = vec![false; n_patches];
    if n_masked > 0 {
        let mut rng = seed::rng(seed_value, "mask", &[]);
        for i in index_sample(&mut rng, n_patches, n_masked) {
            masked[i] = true;
        }
    }
    Ok(MaskSpec { masked, ratio: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::fps;
    use crate::synth::{icosphere, sample_surface};

    fn sphere_cloud(n: usize) -> PointCloud {
        let mesh = icosphere(1.0, 3);
        sample_surface(&mesh, n, &mut crate::seed::rng(4, "patch-test", &[])).unwrap()
    }

    #[test]
    fn default_shape_is_256_by_64() {
        let cloud = sphere_cloud(6000);
        let centers = fps(&cloud, 256).unwrap();
        let patches = make_patches(&cloud, &centers, 64).unwrap();
        assert_eq!(patches.len(), 256);
        assert!(patches.local_coords.iter().all(|p| p.len() == 64));
    }

    #[test]
    fn own_center_is_first_and_zero() {
        let cloud = sphere_cloud(2000);
        let centers = fps(&cloud, 32).unwrap();
        let patches = make_patches(&cloud, &centers, 16).unwrap();
        for (pi, &ci) in centers.iter().enumerate() {
            assert_eq!(patches.neighbor_idx[pi][0] as usize, ci);
            assert_eq!(patches.local_coords[pi][0], Vec3::zeros());
        }
    }

    #[test]
    fn k_larger_than_n_is_an_error() {
        let cloud = sphere_cloud(100);
        assert!(matches!(
            make_patches(&cloud, &[0], 128),
            Err(Error::KTooLarge { .. })
        ));
    }

    #[test]
    fn mask_counts_follow_floor() {
        assert_eq!(random_mask(256, 0.4, 1).unwrap().masked_count(), 102);
        assert_eq!(random_mask(256, 0.99, 1).unwrap().masked_count(), 253);
        assert_eq!(random_mask(256, 0.0, 1).unwrap().masked_count(), 0);
    }

    #[test]
    fn mask_partition_is_exact() {
        let mask = random_mask(64, 0.4, 9).unwrap();
        let masked = mask.masked_indices();
        let visible = mask.visible_indices();
        assert_eq!(masked.len() + visible.len(), 64);
        assert!(masked.iter().all(|i| !visible.contains(i)));
    }

    #[test]
    fn invalid_ratios_are_rejected() {
        assert!(matches!(random_mask(10, -0.1, 0), Err(Error::InvalidRatio(_))));
        assert!(matches!(random_mask(10, 1.0, 0), Err(Error::InvalidRatio(_))));
        assert!(matches!(
            random_mask(10, 0.05, 0),
            Err(Error::DegenerateMask { .. })
        ));
    }

    #[test]
    fn mask_is_seed_deterministic() {
        assert_eq!(random_mask(128, 0.4, 7).unwrap(), random_mask(128, 0.4, 7).unwrap());
    }

    #[test]
    fn mask_frequency_is_near_ratio() {
        let n = 50;
        let m = 0.4;
        let trials = 1000;
        let mut hits = vec![0usize; n];
        for s in 0..trials {
            let mask = random_mask(n, m, s as u64).unwrap();
            for (i, &b) in mask.masked.iter().enumerate() {
                if b {
                    hits[i] += 1;
                }
            }
        }
        for &h in &hits {
            let freq = h as f64 / trials as f64;
            assert!((freq - m).abs() < 0.05, "frequency {freq}");
        }
    }
}
