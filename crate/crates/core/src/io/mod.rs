//! File formats: PLY point clouds and OBJ/OFF triangle meshes.

mod mesh;
mod ply;

pub use mesh::{read_mesh, read_obj, read_off};
pub use ply::{read_ply, write_ply, PlyExtras, PlyFormat};
