//! Uniform-grid spatial index for exact neighbor queries.
//!
//! The grid only prunes candidates; distances are always evaluated exactly,
//! so results are identical to a brute-force scan (including tie order).

use std::collections::HashMap;

use super::{bounds_of, Vec3};

pub struct PointGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    origin: Vec3,
    dims: [i64; 3],
    table: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let (lo, hi) = bounds_of(points);
        let ext = hi - lo;
        let n = points.len().max(1);
        // Aim for ~8 points per occupied cell over the non-degenerate axes.
        let mut measure = 1.0;
        let mut live_axes = 0;
        for c in 0..3 {
            if ext[c] > 0.0 {
                measure *= ext[c];
                live_axes += 1;
            }
        }
        let cell = if live_axes == 0 {
            1.0
        } else {
            (measure * 8.0 / n as f64).powf(1.0 / live_axes as f64).max(1e-12)
        };
        let mut dims = [1i64; 3];
        for c in 0..3 {
            dims[c] = ((ext[c] / cell).floor() as i64 + 1).max(1);
        }
        let mut table: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            table.entry(cell_of(p, &lo, cell, &dims)).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            origin: lo,
            dims,
            table,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of the `k` nearest points to `q`, sorted by ascending distance
    /// with ties broken by ascending index. Requires `k <= len()`.
    pub fn k_nearest(&self, q: &Vec3, k: usize) -> Vec<(f64, u32)> {
        debug_assert!(k <= self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let home = cell_of(q, &self.origin, self.cell, &self.dims);
        let max_shell = self.dims.iter().max().copied().unwrap_or(1);
        let mut cand: Vec<(f64, u32)> = Vec::with_capacity(4 * k);
        let mut kth_d2 = f64::INFINITY;
        for shell in 0..=max_shell {
            self.for_shell(&home, shell, |idx| {
                let d2 = (self.points[idx as usize] - q).norm_squared();
                cand.push((d2, idx));
            });
            if cand.len() >= k {
                // Any point in an unvisited shell is at least `shell * cell` away.
                kth_d2 = kth_smallest(&mut cand, k);
                let reach = shell as f64 * self.cell;
                if kth_d2 <= reach * reach {
                    break;
                }
            }
        }
        debug_assert!(cand.len() >= k, "grid search exhausted below k");
        cand.retain(|&(d2, _)| d2 <= kth_d2);
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        cand.truncate(k);
        cand
    }

    /// Squared distance to the single nearest point.
    pub fn nearest_sq(&self, q: &Vec3) -> f64 {
        self.k_nearest(q, 1)[0].0
    }

    /// Indices (ascending) of all points with distance <= `radius` from `q`.
    pub fn within_radius(&self, q: &Vec3, radius: f64) -> Vec<u32> {
        let home = cell_of(q, &self.origin, self.cell, &self.dims);
        let span = (radius / self.cell).ceil() as i64 + 1;
        let r2 = radius * radius;
        let mut out = Vec::new();
        for dx in -span..=span {
            let x = home[0] + dx;
            if x < 0 || x >= self.dims[0] {
                continue;
            }
            for dy in -span..=span {
                let y = home[1] + dy;
                if y < 0 || y >= self.dims[1] {
                    continue;
                }
                for dz in -span..=span {
                    let z = home[2] + dz;
                    if z < 0 || z >= self.dims[2] {
                        continue;
                    }
                    if let Some(v) = self.table.get(&[x, y, z]) {
                        for &idx in v {
                            if (self.points[idx as usize] - q).norm_squared() <= r2 {
                                out.push(idx);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn for_shell(&self, home: &[i64; 3], shell: i64, mut visit: impl FnMut(u32)) {
        let mut scan = |key: [i64; 3]| {
            if key.iter().zip(&self.dims).all(|(&v, &d)| v >= 0 && v < d) {
                if let Some(v) = self.table.get(&key) {
                    for &idx in v {
                        visit(idx);
                    }
                }
            }
        };
        if shell == 0 {
            scan(*home);
            return;
        }
        // Walk the surface of the Chebyshev cube of radius `shell`.
        for dx in -shell..=shell {
            for dy in -shell..=shell {
                for dz in -shell..=shell {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != shell {
                        continue;
                    }
                    scan([home[0] + dx, home[1] + dy, home[2] + dz]);
                }
            }
        }
    }
}

fn cell_of(p: &Vec3, origin: &Vec3, cell: f64, dims: &[i64; 3]) -> [i64; 3] {
    let mut key = [0i64; 3];
    for c in 0..3 {
        let idx = ((p[c] - origin[c]) / cell).floor() as i64;
        key[c] = idx.clamp(0, dims[c] - 1);
    }
    key
}

/// Value of the k-th smallest distance (with index tiebreak) in `cand`.
fn kth_smallest(cand: &mut [(f64, u32)], k: usize) -> f64 {
    let (_, kth, _) = cand.select_nth_unstable_by(k - 1, |a, b| {
        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
    });
    kth.0
}
