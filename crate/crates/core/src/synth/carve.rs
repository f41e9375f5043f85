//! Defect carving on point clouds.
//!
//! Six families: bulge, concavity, hole, break, bending, crack. Displacement
//! defects (bulge, concavity, bending) move points and preserve the count;
//! removal defects (hole, break, crack) delete points and label the
//! surviving rim. Every carve retries with a rescaled footprint until the
//! anomalous fraction lands in [0.01, 0.10].

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geom::{knn, PointCloud, PointGrid, Vec3};
use crate::seed;

pub const FRACTION_RANGE: (f64, f64) = (0.01, 0.10);
const MAX_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectKind {
    Bulge,
    Concavity,
    Hole,
    Break,
    Bending,
    Crack,
}

impl DefectKind {
    pub const ALL: [DefectKind; 6] = [
        DefectKind::Bulge,
        DefectKind::Concavity,
        DefectKind::Hole,
        DefectKind::Break,
        DefectKind::Bending,
        DefectKind::Crack,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DefectKind::Bulge => "bulge",
            DefectKind::Concavity => "concavity",
            DefectKind::Hole => "hole",
            DefectKind::Break => "break",
            DefectKind::Bending => "bending",
            DefectKind::Crack => "crack",
        }
    }

    /// Removal defects delete points; the others displace them.
    pub fn removes_points(&self) -> bool {
        matches!(self, DefectKind::Hole | DefectKind::Break | DefectKind::Crack)
    }
}

/// Kind-specific knobs beyond magnitude/sigma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectExtra {
    None,
    /// Outward unit normal of the cutting plane.
    Break { plane_normal: [f64; 3] },
    /// Hinge plane normal, rotation axis (in-plane), and bend angle (rad).
    Bend {
        hinge_normal: [f64; 3],
        axis: [f64; 3],
        angle: f64,
    },
    /// Random-walk hop count and half-width of the carved slit.
    Crack { path_hops: usize, width: f64 },
}

/// One defect to carve: a seed point on the surface, an amplitude or removal
/// radius (`magnitude`), a Gaussian footprint radius (`sigma`), and
/// kind-specific extras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub kind: DefectKind,
    pub seed_index: usize,
    pub magnitude: f64,
    pub sigma: f64,
    pub extra: DefectExtra,
}

/// Per-point labels plus the region inventory produced by carving.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub gt_label: Vec<u8>,
    pub region_id: Vec<i32>,
    pub inventory: BTreeMap<i32, DefectSpec>,
}

impl GroundTruth {
    pub fn anomaly_fraction(&self) -> f64 {
        if self.gt_label.is_empty() {
            return 0.0;
        }
        self.gt_label.iter().map(|&g| g as usize).sum::<usize>() as f64
            / self.gt_label.len() as f64
    }
}

struct CarveOutcome {
    cloud: PointCloud,
    gt: Vec<u8>,
}

/// Applies `spec` to a cloud with normals, retrying with a rescaled
/// footprint (up to 32 attempts) until the anomaly fraction is in
/// [0.01, 0.10]. The ground truth is written into the returned cloud and
/// reported with region id `region`.
pub fn carve(
    cloud: &PointCloud,
    spec: &DefectSpec,
    seed_value: u64,
    region: i32,
) -> Result<(PointCloud, GroundTruth)> {
    if cloud.normals.is_none() {
        return Err(Error::InvalidConfig("carve requires normals".into()));
    }
    if spec.seed_index >= cloud.len() {
        return Err(Error::InvalidConfig(format!(
            "seed index {} out of range",
            spec.seed_index
        )));
    }
    let mut attempt_spec = spec.clone();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seed::rng(seed_value, "carve-attempt", &[attempt as u64]);
        let outcome = carve_once(cloud, &attempt_spec, &mut rng)?;
        let n_out = outcome.cloud.len().max(1);
        let fraction = outcome.gt.iter().map(|&g| g as usize).sum::<usize>() as f64 / n_out as f64;
        if (FRACTION_RANGE.0..=FRACTION_RANGE.1).contains(&fraction) {
            let region_id: Vec<i32> = outcome
                .gt
                .iter()
                .map(|&g| if g == 1 { region } else { 0 })
                .collect();
            let mut out = outcome.cloud;
            out.gt_label = Some(outcome.gt.clone());
            out.region_id = Some(region_id.clone());
            let mut inventory = BTreeMap::new();
            inventory.insert(region, attempt_spec);
            return Ok((
                out,
                GroundTruth {
                    gt_label: outcome.gt,
                    region_id,
                    inventory,
                },
            ));
        }
        // Rescale the footprint toward the valid band and try again.
        let grow = fraction < FRACTION_RANGE.0;
        let factor = if grow { 1.35 } else { 0.72 };
        attempt_spec.sigma *= factor;
        if matches!(
            attempt_spec.kind,
            DefectKind::Hole | DefectKind::Crack | DefectKind::Bending
        ) {
            attempt_spec.magnitude *= factor;
        }
        if let DefectExtra::Crack { path_hops, width } = &mut attempt_spec.extra {
            *width *= factor;
            if grow {
                *path_hops += 2;
            }
        }
    }
    Err(Error::CannotSatisfyFraction {
        kind: spec.kind.name().into(),
        attempts: MAX_ATTEMPTS,
    })
}

fn carve_once(cloud: &PointCloud, spec: &DefectSpec, rng: &mut ChaCha8Rng) -> Result<CarveOutcome> {
    match spec.kind {
        DefectKind::Bulge => Ok(gaussian_displace(cloud, spec, spec.magnitude)),
        DefectKind::Concavity => Ok(gaussian_displace(cloud, spec, -spec.magnitude)),
        DefectKind::Hole => Ok(punch_hole(cloud, spec)),
        DefectKind::Break => Ok(break_cap(cloud, spec)),
        DefectKind::Bending => Ok(bend(cloud, spec)),
        DefectKind::Crack => crack(cloud, spec, rng),
    }
}

/// p' = p + amplitude * exp(-|p-s|^2 / (2 sigma^2)) * normal(s) inside the
/// 3-sigma footprint. Every displaced point is ground truth (the footprint
/// floor exp(-4.5) keeps displacements above the 1e-4 * |amplitude| cut).
fn gaussian_displace(cloud: &PointCloud, spec: &DefectSpec, amplitude: f64) -> CarveOutcome {
    let normals = cloud.normals.as_ref().unwrap();
    let s = cloud.points[spec.seed_index];
    let dir = normals[spec.seed_index];
    let sigma2 = 2.0 * spec.sigma * spec.sigma;
    let cutoff2 = (3.0 * spec.sigma) * (3.0 * spec.sigma);
    let mut out = cloud.clone();
    let mut gt = vec![0u8; cloud.len()];
    for (i, p) in cloud.points.iter().enumerate() {
        let d2 = (p - s).norm_squared();
        if d2 > cutoff2 {
            continue;
        }
        let displacement = amplitude * (-d2 / sigma2).exp();
        if displacement.abs() > 1e-4 * amplitude.abs() {
            out.points[i] += dir * displacement;
            gt[i] = 1;
        }
    }
    out.normals = None; // displaced surface invalidates estimated normals
    CarveOutcome { cloud: out, gt }
}

/// Deletes everything within `magnitude` of the seed; the surviving ring out
/// to 1.5x that radius is labeled as the rim.
fn punch_hole(cloud: &PointCloud, spec: &DefectSpec) -> CarveOutcome {
    let s = cloud.points[spec.seed_index];
    let r2 = spec.magnitude * spec.magnitude;
    let rim2 = (1.5 * spec.magnitude) * (1.5 * spec.magnitude);
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| (cloud.points[i] - s).norm_squared() > r2)
        .collect();
    let out = cloud.select(&keep);
    let gt = keep
        .iter()
        .map(|&i| u8::from((cloud.points[i] - s).norm_squared() <= rim2))
        .collect();
    let mut out = out;
    out.normals = None;
    CarveOutcome { cloud: out, gt }
}

/// Removes the cap around the seed: the plane sits `magnitude` below the
/// seed along the cap direction, and everything on the seed's side goes.
/// The surviving band within `sigma` of the cut plane is the rim.
fn break_cap(cloud: &PointCloud, spec: &DefectSpec) -> CarveOutcome {
    let s = cloud.points[spec.seed_index];
    let normal = match &spec.extra {
        DefectExtra::Break { plane_normal } => {
            Vec3::new(plane_normal[0], plane_normal[1], plane_normal[2]).normalize()
        }
        _ => {
            let centroid = cloud.centroid();
            let d = s - centroid;
            if d.norm() > 1e-9 {
                d.normalize()
            } else {
                Vec3::z()
            }
        }
    };
    let offset = -spec.magnitude;
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| (cloud.points[i] - s).dot(&normal) <= offset)
        .collect();
    let gt = keep
        .iter()
        .map(|&i| u8::from(((cloud.points[i] - s).dot(&normal) - offset).abs() <= spec.sigma))
        .collect();
    let mut out = cloud.select(&keep);
    out.normals = None;
    CarveOutcome { cloud: out, gt }
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Bends a local crease around the seed: points past the hinge plane (at
/// depth `magnitude` below the seed) rotate about the hinge line by up to
/// `angle`, ramped with a smoothstep over the plane distance and windowed by
/// distance to the seed so the fold stays local on flat geometry. Points
/// rotated by more than 0.1x the full angle are ground truth.
fn bend(cloud: &PointCloud, spec: &DefectSpec) -> CarveOutcome {
    let s = cloud.points[spec.seed_index];
    let (hinge_normal, axis, angle) = match &spec.extra {
        DefectExtra::Bend {
            hinge_normal,
            axis,
            angle,
        } => (
            Vec3::new(hinge_normal[0], hinge_normal[1], hinge_normal[2]).normalize(),
            Vec3::new(axis[0], axis[1], axis[2]),
            *angle,
        ),
        _ => (Vec3::x(), Vec3::y(), 0.4),
    };
    // Hinge line: through the plane anchor, orthogonal to the hinge normal.
    let axis = (axis - hinge_normal * axis.dot(&hinge_normal)).normalize();
    let anchor = s - hinge_normal * spec.magnitude;
    let ramp = 3.0 * spec.sigma;
    let reach = 3.0 * spec.sigma;
    let weight = |p: &Vec3| -> f64 {
        let t = (p - anchor).dot(&hinge_normal);
        if t <= 0.0 {
            return 0.0;
        }
        let radial = smoothstep(1.0 - (p - s).norm() / reach);
        smoothstep(t / ramp) * radial
    };
    // Cap the angle so no point moves farther than `magnitude`, which keeps
    // bounding-box growth bounded like the other displacement defects.
    let lever = cloud
        .points
        .iter()
        .filter(|p| weight(p) > 0.0)
        .map(|p| (p - anchor).norm())
        .fold(0.0f64, f64::max);
    let angle = if lever > 0.0 {
        angle.min(spec.magnitude / lever)
    } else {
        angle
    };
    let mut out = cloud.clone();
    let mut gt = vec![0u8; cloud.len()];
    for (i, p) in cloud.points.iter().enumerate() {
        let w = weight(p);
        if w <= 0.0 {
            continue;
        }
        let rot = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle * w,
        );
        out.points[i] = anchor + rot * (p - anchor);
        if w > 0.1 {
            gt[i] = 1;
        }
    }
    out.normals = None;
    CarveOutcome { cloud: out, gt }
}

/// Walks a random path over the kNN graph from the seed and deletes points
/// within `width` of any path vertex; survivors within 1.5x width are the
/// rim.
fn crack(cloud: &PointCloud, spec: &DefectSpec, rng: &mut ChaCha8Rng) -> Result<CarveOutcome> {
    let (path_hops, width) = match &spec.extra {
        DefectExtra::Crack { path_hops, width } => (*path_hops, *width),
        _ => (12, spec.magnitude),
    };
    let hop_k = 8.min(cloud.len());
    let graph = knn(cloud, &cloud.points, hop_k)?;
    let mut path = vec![cloud.points[spec.seed_index]];
    let mut at = spec.seed_index;
    let mut prev = spec.seed_index;
    for _ in 0..path_hops {
        let nbrs = &graph.neighbors[at];
        // Skip self (entry 0) and avoid immediately backtracking.
        let candidates: Vec<usize> = nbrs
            .iter()
            .map(|&j| j as usize)
            .filter(|&j| j != at && j != prev)
            .collect();
        if candidates.is_empty() {
            break;
        }
        let next = candidates[rng.gen_range(0..candidates.len())];
        prev = at;
        at = next;
        path.push(cloud.points[at]);
    }
    let grid = PointGrid::build(&path);
    let w2 = width * width;
    let rim2 = (1.5 * width) * (1.5 * width);
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| grid.nearest_sq(&cloud.points[i]) > w2)
        .collect();
    let gt = keep
        .iter()
        .map(|&i| u8::from(grid.nearest_sq(&cloud.points[i]) <= rim2))
        .collect();
    let mut out = cloud.select(&keep);
    out.normals = None;
    Ok(CarveOutcome { cloud: out, gt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::estimate_normals;

    /// 60x60 grid on [0, 6]^2 so a sigma=0.2 bulge covers ~3% of it.
    fn plane_cloud() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        estimate_normals(&PointCloud::from_points(pts), 0.25).unwrap()
    }

    fn center_index(cloud: &PointCloud) -> usize {
        let c = cloud.centroid();
        (0..cloud.len())
            .min_by(|&a, &b| {
                let da = (cloud.points[a] - c).norm_squared();
                let db = (cloud.points[b] - c).norm_squared();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap()
    }

    fn bulge_spec(seed_index: usize) -> DefectSpec {
        DefectSpec {
            kind: DefectKind::Bulge,
            seed_index,
            magnitude: 0.1,
            sigma: 0.2,
            extra: DefectExtra::None,
        }
    }

    #[test]
    fn plane_bulge_marks_exactly_the_displaced_points() {
        let cloud = plane_cloud();
        let spec = bulge_spec(center_index(&cloud));
        let (out, gt) = carve(&cloud, &spec, 1, 1).unwrap();
        assert_eq!(out.len(), cloud.len());
        for i in 0..out.len() {
            let moved = (out.points[i] - cloud.points[i]).norm() > 0.0;
            assert_eq!(moved, gt.gt_label[i] == 1, "point {i}");
            if moved {
                // Plane normal is +z everywhere, so displacement is along +z.
                let d = out.points[i] - cloud.points[i];
                assert!(d.z > 0.0 && d.x.abs() < 1e-12 && d.y.abs() < 1e-12);
            }
        }
        let f = gt.anomaly_fraction();
        assert!((0.01..=0.10).contains(&f), "fraction {f}");
    }

    #[test]
    fn concavity_is_a_negated_bulge() {
        let cloud = plane_cloud();
        let si = center_index(&cloud);
        let mut bulge_neg = bulge_spec(si);
        bulge_neg.magnitude = -0.1;
        let concave = DefectSpec {
            kind: DefectKind::Concavity,
            ..bulge_spec(si)
        };
        let mut rng_a = seed::rng(0, "x", &[]);
        let mut rng_b = seed::rng(0, "x", &[]);
        let a = carve_once(&cloud, &bulge_neg, &mut rng_a).unwrap();
        let b = carve_once(&cloud, &concave, &mut rng_b).unwrap();
        assert_eq!(a.cloud.points, b.cloud.points);
        assert_eq!(a.gt, b.gt);
    }

    #[test]
    fn hole_removes_points_and_labels_the_rim() {
        let cloud = plane_cloud();
        let spec = DefectSpec {
            kind: DefectKind::Hole,
            seed_index: center_index(&cloud),
            magnitude: 0.4,
            sigma: 0.2,
            extra: DefectExtra::None,
        };
        let (out, gt) = carve(&cloud, &spec, 2, 1).unwrap();
        assert!(out.len() < cloud.len());
        assert!(gt.gt_label.iter().any(|&g| g == 1));
        let f = gt.anomaly_fraction();
        assert!((0.01..=0.10).contains(&f), "fraction {f}");
        // Rim points sit outside the (possibly rescaled) hole radius but
        // inside 1.5x of it.
        let radius = gt.inventory[&1].magnitude;
        let s = cloud.points[spec.seed_index];
        for (i, &g) in gt.gt_label.iter().enumerate() {
            let d = (out.points[i] - s).norm();
            assert_eq!(
                g == 1,
                d > radius - 1e-12 && d <= 1.5 * radius + 1e-12,
                "d = {d}"
            );
        }
    }

    #[test]
    fn carve_is_seed_deterministic() {
        let cloud = plane_cloud();
        let spec = DefectSpec {
            kind: DefectKind::Crack,
            seed_index: center_index(&cloud),
            magnitude: 0.08,
            sigma: 0.2,
            extra: DefectExtra::Crack {
                path_hops: 14,
                width: 0.08,
            },
        };
        let a = carve(&cloud, &spec, 42, 1).unwrap();
        let b = carve(&cloud, &spec, 42, 1).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn displacement_defects_stay_finite_and_bounded() {
        let cloud = plane_cloud();
        let spec = bulge_spec(center_index(&cloud));
        let (out, _) = carve(&cloud, &spec, 3, 1).unwrap();
        let (lo_a, hi_a) = cloud.bounds();
        let (lo_b, hi_b) = out.bounds();
        for c in 0..3 {
            assert!(out.points.iter().all(|p| p[c].is_finite()));
            assert!(lo_a[c] - lo_b[c] <= spec.magnitude + 1e-6);
            assert!(hi_b[c] - hi_a[c] <= spec.magnitude + 1e-6);
        }
    }
}
