use super::{grid::PointGrid, PointCloud, Vec3};
use crate::error::{Error, Result};

/// How a [`NeighborGraph`] was built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeighborQuery {
    Knn { k: usize },
    Radius { radius: f64 },
}

/// Per-query neighbor index lists.
///
/// kNN lists have exactly `k` entries sorted by ascending distance (ties by
/// ascending index). Radius lists are sorted by ascending index and never
/// contain the query point itself.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub query: NeighborQuery,
    pub neighbors: Vec<Vec<u32>>,
}

/// k nearest cloud points for each query coordinate.
///
/// A cloud point coincident with a query (e.g. the query is a cloud point)
/// is eligible and sorts first.
pub fn knn(cloud: &PointCloud, queries: &[Vec3], k: usize) -> Result<NeighborGraph> {
    let n = cloud.len();
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    let grid = PointGrid::build(&cloud.points);
    let neighbors = queries
        .iter()
        .map(|q| grid.k_nearest(q, k).into_iter().map(|(_, i)| i).collect())
        .collect();
    Ok(NeighborGraph {
        query: NeighborQuery::Knn { k },
        neighbors,
    })
}

/// All neighbors within `radius` of every cloud point, excluding the point
/// itself.
pub fn radius_neighbors(cloud: &PointCloud, radius: f64) -> NeighborGraph {
    let grid = PointGrid::build(&cloud.points);
    let neighbors = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut v = grid.within_radius(p, radius);
            v.retain(|&j| j as usize != i);
            v
        })
        .collect();
    NeighborGraph {
        query: NeighborQuery::Radius { radius },
        neighbors,
    }
}
