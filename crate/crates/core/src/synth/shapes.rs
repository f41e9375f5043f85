//! Procedural base meshes, midpoint subdivision, and area-weighted surface
//! sampling.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{Mesh, PointCloud, Vec3};

/// Built-in object families used as dataset classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseShape {
    Sphere,
    Box,
    Cylinder,
    Bottle,
    Bowl,
    Cap,
}

impl BaseShape {
    pub const ALL: [BaseShape; 6] = [
        BaseShape::Sphere,
        BaseShape::Box,
        BaseShape::Cylinder,
        BaseShape::Bottle,
        BaseShape::Bowl,
        BaseShape::Cap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaseShape::Sphere => "sphere",
            BaseShape::Box => "box",
            BaseShape::Cylinder => "cylinder",
            BaseShape::Bottle => "bottle",
            BaseShape::Bowl => "bowl",
            BaseShape::Cap => "cap",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown shape {name}")))
    }

    pub fn mesh(&self) -> Mesh {
        match self {
            BaseShape::Sphere => icosphere(1.0, 3),
            BaseShape::Box => cuboid(1.4, 1.0, 0.8),
            BaseShape::Cylinder => cylinder(0.5, 1.6, 48),
            BaseShape::Bottle => lathe(&bottle_profile(), 48),
            BaseShape::Bowl => lathe(&bowl_profile(), 48),
            BaseShape::Cap => lathe(&cap_profile(), 48),
        }
    }
}

fn icosahedron(radius: f64) -> Mesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let vertices = raw
        .iter()
        .map(|v| Vec3::new(v[0], v[1], v[2]).normalize() * radius)
        .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh { vertices, faces }
}

/// Icosahedron refined `rounds` times with every vertex projected back to
/// the sphere.
pub fn icosphere(radius: f64, rounds: usize) -> Mesh {
    let mut mesh = icosahedron(radius);
    for _ in 0..rounds {
        mesh = midpoint_subdivide_once(&mesh);
        for v in &mut mesh.vertices {
            *v = v.normalize() * radius;
        }
    }
    mesh
}

pub fn cuboid(sx: f64, sy: f64, sz: f64) -> Mesh {
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let vertices = vec![
        Vec3::new(-hx, -hy, -hz),
        Vec3::new(hx, -hy, -hz),
        Vec3::new(hx, hy, -hz),
        Vec3::new(-hx, hy, -hz),
        Vec3::new(-hx, -hy, hz),
        Vec3::new(hx, -hy, hz),
        Vec3::new(hx, hy, hz),
        Vec3::new(-hx, hy, hz),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [3, 0, 4],
        [3, 4, 7],
    ];
    Mesh { vertices, faces }
}

pub fn cylinder(radius: f64, height: f64, seg: usize) -> Mesh {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let h = height / 2.0;
    for ring in [-h, h] {
        for s in 0..seg {
            let a = TAU * s as f64 / seg as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), ring));
        }
    }
    let bottom_center = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, -h));
    let top_center = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, h));
    for s in 0..seg {
        let s1 = (s + 1) % seg;
        faces.push([s, seg + s1, seg + s]);
        faces.push([s, s1, seg + s1]);
        faces.push([bottom_center, s1, s]);
        faces.push([top_center, seg + s, seg + s1]);
    }
    Mesh { vertices, faces }
}

/// Revolves an (r, z) profile polyline around the z axis with `seg` angular
/// steps. Profile points with r = 0 become shared apex vertices.
pub fn lathe(profile: &[(f64, f64)], seg: usize) -> Mesh {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut ring_index: Vec<Option<usize>> = Vec::new(); // start of ring, or apex idx
    let mut apex: Vec<bool> = Vec::new();
    for &(r, z) in profile {
        if r.abs() < 1e-12 {
            ring_index.push(Some(vertices.len()));
            apex.push(true);
            vertices.push(Vec3::new(0.0, 0.0, z));
        } else {
            ring_index.push(Some(vertices.len()));
            apex.push(false);
            for s in 0..seg {
                let a = TAU * s as f64 / seg as f64;
                vertices.push(Vec3::new(r * a.cos(), r * a.sin(), z));
            }
        }
    }
    let mut faces = Vec::new();
    for w in 0..profile.len() - 1 {
        let (a0, a1) = (ring_index[w].unwrap(), ring_index[w + 1].unwrap());
        match (apex[w], apex[w + 1]) {
            (false, false) => {
                for s in 0..seg {
                    let s1 = (s + 1) % seg;
                    faces.push([a0 + s, a0 + s1, a1 + s1]);
                    faces.push([a0 + s, a1 + s1, a1 + s]);
                }
            }
            (true, false) => {
                for s in 0..seg {
                    let s1 = (s + 1) % seg;
                    faces.push([a0, a1 + s1, a1 + s]);
                }
            }
            (false, true) => {
                for s in 0..seg {
                    let s1 = (s + 1) % seg;
                    faces.push([a0 + s, a0 + s1, a1]);
                }
            }
            (true, true) => {}
        }
    }
    Mesh { vertices, faces }
}

fn bottle_profile() -> Vec<(f64, f64)> {
    vec![
        (0.0, 0.0),
        (0.38, 0.0),
        (0.46, 0.12),
        (0.48, 0.45),
        (0.42, 0.75),
        (0.22, 0.95),
        (0.14, 1.05),
        (0.13, 1.25),
        (0.16, 1.32),
        (0.0, 1.38),
    ]
}

fn bowl_profile() -> Vec<(f64, f64)> {
    // Outer wall up, lip, inner wall back down.
    let mut profile = vec![(0.0, 0.0)];
    let outer = 0.62;
    for i in 1..=10 {
        let t = i as f64 / 10.0;
        let a = t * PI * 0.45;
        profile.push((outer * a.sin(), 0.5 * (1.0 - a.cos())));
    }
    profile.push((outer * (PI * 0.45).sin() - 0.05, 0.5 * (1.0 - (PI * 0.45).cos()) + 0.02));
    for i in (2..=9).rev() {
        let t = i as f64 / 10.0;
        let a = t * PI * 0.45;
        profile.push(((outer - 0.06) * a.sin(), 0.5 * (1.0 - a.cos()) + 0.06));
    }
    profile.push((0.0, 0.12));
    profile
}

fn cap_profile() -> Vec<(f64, f64)> {
    // Spherical dome with a flat brim ring.
    let mut profile = vec![(0.85, 0.0), (0.55, 0.0)];
    for i in 1..=8 {
        let t = i as f64 / 8.0;
        let a = t * PI / 2.0;
        profile.push((0.55 * a.cos(), 0.45 * a.sin()));
    }
    profile
}

fn midpoint_subdivide_once(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let m = (vertices[a] + vertices[b]) / 2.0;
            vertices.push(m);
            vertices.len() - 1
        })
    };
    for f in &mesh.faces {
        let ab = midpoint(f[0], f[1], &mut vertices);
        let bc = midpoint(f[1], f[2], &mut vertices);
        let ca = midpoint(f[2], f[0], &mut vertices);
        faces.push([f[0], ab, ca]);
        faces.push([f[1], bc, ab]);
        faces.push([f[2], ca, bc]);
        faces.push([ab, bc, ca]);
    }
    Mesh { vertices, faces }
}

/// Midpoint (1-to-4) subdivision repeated until the vertex count reaches
/// `target_vertices`. New vertices lie on existing edges, so the surface is
/// unchanged. A mesh already at or above the target is returned as-is.
pub fn subdivide(mesh: &Mesh, target_vertices: usize) -> Result<Mesh> {
    mesh.validate()?;
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut out = mesh.clone();
    while out.vertices.len() < target_vertices {
        out = midpoint_subdivide_once(&out);
    }
    Ok(out)
}

/// Area-weighted uniform surface sampling, deterministic in the rng stream.
pub fn sample_surface(mesh: &Mesh, n_points: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(Error::InvalidMesh("zero surface area".into()));
    }
    let mut points = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let t = rng.gen_range(0.0..total);
        let fi = cumulative.partition_point(|&c| c <= t).min(mesh.faces.len() - 1);
        let f = &mesh.faces[fi];
        let (a, b, c) = (
            mesh.vertices[f[0]],
            mesh.vertices[f[1]],
            mesh.vertices[f[2]],
        );
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let sq = r1.sqrt();
        let (u, v) = (1.0 - sq, r2 * sq);
        points.push(a + (b - a) * u + (c - a) * v);
    }
    Ok(PointCloud::from_points(points))
}

/// Random rotation (uniform via quaternion) plus uniform scale jitter.
pub fn pose_jitter(mesh: &Mesh, scale_range: (f64, f64), rng: &mut ChaCha8Rng) -> Mesh {
    let q = random_rotation(rng);
    let scale = rng.gen_range(scale_range.0..scale_range.1);
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        *v = q * (*v * scale);
    }
    out
}

fn random_rotation(rng: &mut ChaCha8Rng) -> nalgebra::Rotation3<f64> {
    // Shoemake's uniform quaternions.
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
        b * (TAU * u3).cos(),
    );
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn single_triangle_subdivides_to_six_vertices() {
        let mesh = Mesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            faces: vec![[0, 1, 2]],
        };
        let out = subdivide(&mesh, 4).unwrap();
        assert_eq!(out.vertices.len(), 6);
        assert_eq!(out.faces.len(), 4);
    }

    #[test]
    fn icosahedron_subdivides_to_42() {
        let mesh = icosahedron(1.0);
        assert_eq!(mesh.vertices.len(), 12);
        assert_eq!(mesh.faces.len(), 20);
        let out = subdivide(&mesh, 40).unwrap();
        // 12 original + 30 edge midpoints.
        assert_eq!(out.vertices.len(), 42);
        assert_eq!(out.faces.len(), 80);
    }

    #[test]
    fn subdivide_is_a_noop_at_target() {
        let mesh = icosahedron(1.0);
        let out = subdivide(&mesh, 12).unwrap();
        assert_eq!(out, mesh);
    }

    #[test]
    fn all_base_shapes_are_valid() {
        for shape in BaseShape::ALL {
            let mesh = shape.mesh();
            mesh.validate().unwrap();
            assert!(mesh.surface_area() > 0.1, "{:?}", shape);
        }
    }

    #[test]
    fn surface_sampling_is_area_weighted() {
        // Unit square split into two triangles of areas 1/2 each; count per
        // triangle should be near n/2.
        let mesh = Mesh {
            vertices: vec![
                Vec3::zeros(),
                Vec3::x(),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::y(),
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
        };
        let mut rng = seed::rng(3, "test-surface", &[]);
        let cloud = sample_surface(&mesh, 10_000, &mut rng).unwrap();
        let upper = cloud
            .points
            .iter()
            .filter(|p| p.y > p.x) // strictly inside face 2's half
            .count();
        let ratio = upper as f64 / 10_000.0;
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn surface_sampling_is_seed_deterministic() {
        let mesh = icosphere(1.0, 2);
        let a = sample_surface(&mesh, 500, &mut seed::rng(9, "t", &[])).unwrap();
        let b = sample_surface(&mesh, 500, &mut seed::rng(9, "t", &[])).unwrap();
        assert_eq!(a, b);
    }
}
