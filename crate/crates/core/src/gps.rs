//! Geometry-aware point sampling.
//!
//! Per-point salience (rate of change of normals and curvature over a radius
//! neighborhood), rank-threshold selection of the salient set, and
//! salience-weighted center sampling used to place patch centers.

use crate::error::{Error, Result};
use crate::geom::{curvature, fps_in_pool, fps_weighted, radius_neighbors, PointCloud};

/// Per-point rate-of-change field with dense ranks (rank 1 = highest).
#[derive(Debug, Clone)]
pub struct SalienceField {
    pub values: Vec<f64>,
    /// rank[i] in 1..=n; ties in value resolved by ascending point index.
    pub rank: Vec<usize>,
}

impl SalienceField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the point with rank 1.
    pub fn top_index(&self) -> usize {
        self.rank.iter().position(|&r| r == 1).expect("nonempty field")
    }
}

/// Center-sampling configuration.
#[derive(Debug, Clone, Copy)]
pub struct GpsConfig {
    /// Fraction of points (by rank) forming the salient set, in (0, 1].
    pub tau: f64,
    /// Sampling-density multiplier for the salient set, >= 1.
    pub salient_boost: f64,
    /// Number of centers to select.
    pub center_count: usize,
}

impl Default for GpsConfig {
    fn default() -> Self {
        Self {
            tau: 0.3,
            salient_boost: 2.0,
            center_count: 256,
        }
    }
}

impl GpsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau {} outside (0, 1]", self.tau)));
        }
        if self.salient_boost < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "salient_boost {} below 1",
                self.salient_boost
            )));
        }
        if self.center_count == 0 {
            return Err(Error::InvalidConfig("center_count is zero".into()));
        }
        Ok(())
    }
}

/// Rate-of-change salience over radius neighborhoods:
/// the average over neighbors of |Ni - Nj| / |pi - pj| + |Ki - Kj|.
pub fn salience(cloud: &PointCloud, radius: f64) -> Result<SalienceField> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("salience requires normals".into()))?;
    let curv = curvature(cloud, radius, 1e-9)?;
    let graph = radius_neighbors(cloud, radius);
    let n = cloud.len();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let nbrs = &graph.neighbors[i];
        if nbrs.is_empty() {
            return Err(Error::IsolatedPoint { index: i });
        }
        let mut acc = 0.0;
        for &j in nbrs {
            let j = j as usize;
            let dist = (cloud.points[i] - cloud.points[j]).norm();
            acc += (normals[i] - normals[j]).norm() / dist + (curv[i] - curv[j]).abs();
        }
        values.push(acc / nbrs.len() as f64);
    }
    Ok(SalienceField {
        rank: ranks_descending(&values),
        values,
    })
}

/// Dense 1-based ranks by descending value, ties by ascending index.
fn ranks_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    let mut rank = vec![0usize; values.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

/// The salient set: all points with rank <= floor(tau * n).
pub fn salient_set(field: &SalienceField, tau: f64) -> Vec<usize> {
    let cut = (tau * field.len() as f64).floor() as usize;
    (0..field.len()).filter(|&i| field.rank[i] <= cut).collect()
}

/// Splits `center_count` between the salient set and its complement in
/// proportion to their point shares with the salient share multiplied by
/// `boost`, then samples each pool with farthest-point sampling. The salient
/// pool uses salience-weighted FPS so that high-rate-of-change structure
/// inside the pool is sampled more densely than the pool's diffuse tail.
///
/// Deterministic: the salient run starts at the global max-salience point,
/// the complement run at the complement's max-salience point.
pub fn gps_centers(
    cloud: &PointCloud,
    field: &SalienceField,
    cfg: &GpsConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = cloud.len();
    if cfg.center_count > n {
        return Err(Error::CountTooLarge {
            requested: cfg.center_count,
            available: n,
        });
    }
    if field.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "salience field has {} entries for {n} points",
            field.len()
        )));
    }
    let salient = salient_set(field, cfg.tau);
    let in_salient = {
        let mut mask = vec![false; n];
        for &i in &salient {
            mask[i] = true;
        }
        mask
    };
    let complement: Vec<usize> = (0..n).filter(|&i| !in_salient[i]).collect();

    let q = cfg.center_count;
    let share = salient.len() as f64 / n as f64;
    let boosted = share * cfg.salient_boost;
    let mut q_salient = ((q as f64) * boosted / (boosted + (1.0 - share))).round() as usize;
    q_salient = q_salient.min(salient.len()).min(q);
    let mut q_rest = q - q_salient;
    if q_rest > complement.len() {
        // Overflow back into the salient pool.
        q_salient += q_rest - complement.len();
        q_rest = complement.len();
    }

    let best_of = |pool: &[usize]| -> usize {
        pool.iter()
            .copied()
            .min_by(|&a, &b| field.rank[a].cmp(&field.rank[b]))
            .expect("nonempty pool")
    };

    let mut centers = Vec::with_capacity(q);
    if q_salient > 0 {
        let weights = pool_weights(&field.values, &salient);
        centers.extend(fps_weighted(
            &cloud.points,
            &salient,
            q_salient,
            best_of(&salient),
            Some(&weights),
        )?);
    }
    if q_rest > 0 {
        centers.extend(fps_in_pool(
            &cloud.points,
            &complement,
            q_rest,
            best_of(&complement),
        )?);
    }
    Ok(centers)
}

/// Per-point FPS weights for a pool: salience normalized by the pool median,
/// clamped to [1e-3, 8]. A flat field yields uniform weights, which reduces
/// the weighted run to plain FPS; the upper clamp keeps one extreme outlier
/// from absorbing the whole quota.
fn pool_weights(values: &[f64], pool: &[usize]) -> Vec<f64> {
    let mut pool_vals: Vec<f64> = pool.iter().map(|&i| values[i]).collect();
    pool_vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = pool_vals[pool_vals.len() / 2];
    let scale = if median > 0.0 { median } else { 1.0 };
    let mut weights = vec![0.0; values.len()];
    for &i in pool {
        weights[i] = (values[i] / scale).clamp(1e-3, 8.0);
    }
    weights
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{estimate_normals, Vec3};

    fn plane_with_normals(side: usize) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..side {
            for j in 0..side {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        estimate_normals(&PointCloud::from_points(pts), 0.25).unwrap()
    }

    #[test]
    fn plane_interior_salience_is_flat() {
        let cloud = plane_with_normals(14);
        let field = salience(&cloud, 0.25).unwrap();
        // Interior points (away from the boundary ring) see constant normals
        // and zero curvature.
        for i in 0..cloud.len() {
            let p = cloud.points[i];
            let interior = p.x > 0.25 && p.x < 1.05 && p.y > 0.25 && p.y < 1.05;
            if interior {
                assert!(field.values[i] < 1e-4, "interior R = {}", field.values[i]);
            }
        }
    }

    #[test]
    fn ranks_are_a_permutation() {
        let cloud = plane_with_normals(10);
        let field = salience(&cloud, 0.25).unwrap();
        let mut seen = vec![false; field.len()];
        for &r in &field.rank {
            assert!(r >= 1 && r <= field.len());
            assert!(!seen[r - 1]);
            seen[r - 1] = true;
        }
    }

    #[test]
    fn salient_set_size_is_floor_tau_n() {
        let cloud = plane_with_normals(10);
        let field = salience(&cloud, 0.25).unwrap();
        assert_eq!(salient_set(&field, 0.3).len(), 30);
        assert_eq!(salient_set(&field, 1.0).len(), 100);
        assert_eq!(salient_set(&field, 0.005).len(), 0);
    }

    #[test]
    fn quota_matches_the_worked_example() {
        // q = 256, tau = 0.3, boost = 2 on 10000 points:
        // round(256 * 0.6 / (0.6 + 0.7)) = 118.
        let q = 256.0f64;
        let share = 0.3;
        let boosted = share * 2.0;
        let q_s = (q * boosted / (boosted + (1.0 - share))).round() as usize;
        assert_eq!(q_s, 118);
    }

    #[test]
    fn centers_are_distinct_and_complete() {
        let cloud = plane_with_normals(14);
        let field = salience(&cloud, 0.25).unwrap();
        let cfg = GpsConfig {
            center_count: 48,
            ..GpsConfig::default()
        };
        let centers = gps_centers(&cloud, &field, &cfg).unwrap();
        assert_eq!(centers.len(), 48);
        let mut unique = centers.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 48);
        assert!(centers.iter().all(|&c| c < cloud.len()));
    }

    #[test]
    fn deterministic_for_fixed_inputs() {
        let cloud = plane_with_normals(12);
        let field = salience(&cloud, 0.25).unwrap();
        let cfg = GpsConfig {
            center_count: 32,
            ..GpsConfig::default()
        };
        assert_eq!(
            gps_centers(&cloud, &field, &cfg).unwrap(),
            gps_centers(&cloud, &field, &cfg).unwrap()
        );
    }

    #[test]
    fn tiny_tau_falls_back_to_plain_fps() {
        let cloud = plane_with_normals(10);
        let field = salience(&cloud, 0.25).unwrap();
        let cfg = GpsConfig {
            tau: 0.005,
            salient_boost: 2.0,
            center_count: 16,
        };
        let centers = gps_centers(&cloud, &field, &cfg).unwrap();
        assert_eq!(centers.len(), 16);
    }

    #[test]
    fn salient_quota_grows_with_tau() {
        let cloud = plane_with_normals(12);
        let field = salience(&cloud, 0.25).unwrap();
        let mut prev = 0;
        for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let salient = salient_set(&field, tau);
            let share = salient.len() as f64 / field.len() as f64;
            let boosted = share * 2.0;
            let q_s = ((40.0 * boosted) / (boosted + 1.0 - share)).round() as usize;
            let q_s = q_s.min(salient.len());
            assert!(q_s >= prev, "tau {tau}: {q_s} < {prev}");
            prev = q_s;
        }
    }
}
