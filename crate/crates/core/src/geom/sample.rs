//! Baseline down-samplers: farthest-point, seeded random, and voxel.

use std::collections::HashMap;

use rand::seq::index::sample as index_sample;

use super::{bounds_of, PointCloud, Vec3};
use crate::error::{Error, Result};
use crate::seed;

/// Farthest-point sampling over the whole cloud, started at index 0.
pub fn fps(cloud: &PointCloud, count: usize) -> Result<Vec<usize>> {
    let pool: Vec<usize> = (0..cloud.len()).collect();
    fps_in_pool(&cloud.points, &pool, count, 0)
}

/// Farthest-point sampling restricted to `pool`, seeded at `start`
/// (an index into `points`, which must be a member of `pool`).
///
/// Fully deterministic: each round picks the pool point with the largest
/// distance to the selected set, ties broken by ascending index.
pub fn fps_in_pool(
    points: &[Vec3],
    pool: &[usize],
    count: usize,
    start: usize,
) -> Result<Vec<usize>> {
    fps_weighted(points, pool, count, start, None)
}

/// Farthest-point sampling where each candidate's distance is scaled by a
/// per-point weight before the max is taken. `weights[i]` indexes `points`;
/// `None` means plain FPS. Higher weight draws samples closer together
/// around that point, raising local sample density.
pub fn fps_weighted(
    points: &[Vec3],
    pool: &[usize],
    count: usize,
    start: usize,
    weights: Option<&[f64]>,
) -> Result<Vec<usize>> {
    if count > pool.len() {
        return Err(Error::CountTooLarge {
            requested: count,
            available: pool.len(),
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    debug_assert!(pool.contains(&start));
    let mut selected = Vec::with_capacity(count);
    let mut best = vec![f64::INFINITY; pool.len()];
    let mut chosen = vec![false; pool.len()];
    let mut last = start;
    selected.push(start);
    while selected.len() < count {
        let mut arg_slot = usize::MAX;
        let mut score = f64::NEG_INFINITY;
        for (slot, &idx) in pool.iter().enumerate() {
            let d = (points[idx] - points[last]).norm_squared();
            if d < best[slot] {
                best[slot] = d;
            }
            if chosen[slot] || idx == start {
                continue;
            }
            let s = match weights {
                Some(w) => best[slot].sqrt() * w[idx],
                None => best[slot],
            };
            if s > score || (s == score && arg_slot != usize::MAX && idx < pool[arg_slot]) {
                score = s;
                arg_slot = slot;
            }
        }
        chosen[arg_slot] = true;
        selected.push(pool[arg_slot]);
        last = pool[arg_slot];
    }
    Ok(selected)
}

/// Uniform sample of `count` distinct indices, deterministic in `seed`.
pub fn random_sample(cloud: &PointCloud, count: usize, seed_value: u64) -> Result<Vec<usize>> {
    let n = cloud.len();
    if count > n {
        return Err(Error::CountTooLarge {
            requested: count,
            available: n,
        });
    }
    let mut rng = seed::rng(seed_value, "random-sample", &[]);
    Ok(index_sample(&mut rng, n, count).into_vec())
}

/// Keeps, for every occupied voxel, the point nearest that voxel's point
/// centroid. Returns ascending indices.
pub fn voxel_sample(cloud: &PointCloud, voxel: f64) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(voxel > 0.0) {
        return Err(Error::InvalidConfig(format!("voxel size {voxel}")));
    }
    let (lo, _) = bounds_of(&cloud.points);
    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = [
            ((p.x - lo.x) / voxel).floor() as i64,
            ((p.y - lo.y) / voxel).floor() as i64,
            ((p.z - lo.z) / voxel).floor() as i64,
        ];
        cells.entry(key).or_default().push(i);
    }
    let mut keep: Vec<usize> = cells
        .values()
        .map(|members| {
            let centroid =
                members.iter().map(|&i| cloud.points[i]).sum::<Vec3>() / members.len() as f64;
            members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = (cloud.points[a] - centroid).norm_squared();
                    let db = (cloud.points[b] - centroid).norm_squared();
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                })
                .unwrap()
        })
        .collect();
    keep.sort_unstable();
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_corners() -> PointCloud {
        PointCloud::from_points(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        ])
    }

    #[test]
    fn fps_picks_farthest_corner_second() {
        let cloud = unit_square_corners();
        let picked = fps(&cloud, 2).unwrap();
        assert_eq!(picked, vec![0, 3]);
    }

    #[test]
    fn fps_is_deterministic() {
        let cloud = unit_square_corners();
        assert_eq!(fps(&cloud, 4).unwrap(), fps(&cloud, 4).unwrap());
    }

    #[test]
    fn random_sample_full_count_returns_everything() {
        let cloud = unit_square_corners();
        let mut got = random_sample(&cloud, 4, 11).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 3]);
    }

    #[test]
    fn random_sample_seed_deterministic() {
        let cloud = unit_square_corners();
        assert_eq!(
            random_sample(&cloud, 2, 5).unwrap(),
            random_sample(&cloud, 2, 5).unwrap()
        );
    }

    #[test]
    fn huge_voxel_keeps_one_point() {
        let cloud = unit_square_corners();
        assert_eq!(voxel_sample(&cloud, 10.0).unwrap().len(), 1);
    }

    #[test]
    fn oversized_count_is_an_error() {
        let cloud = unit_square_corners();
        assert!(matches!(fps(&cloud, 5), Err(Error::CountTooLarge { .. })));
    }
}
