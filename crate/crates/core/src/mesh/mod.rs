//! Closed oriented triangle meshes and the discrete operators built on them.

mod generate;
mod off;
mod operators;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use thiserror::Error;

pub use generate::{icosphere, torus_grid};
pub use off::{parse_off, read_off, write_off};
pub use operators::{
    area_and_mass, assemble_operators, curvature, mean_curvature_r, DiscreteOperators,
    OVERFLOW_EXPONENT,
};
pub(crate) use operators::mean_from_parts;

/// Faces whose area falls below this multiple of the mean face area are
/// rejected as degenerate.
pub const DEGENERATE_AREA_RATIO: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh has no faces")]
    Empty,
    #[error("face {face} references vertex {index}, but the mesh has {num_vertices} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        num_vertices: usize,
    },
    #[error("edge ({a}, {b}) has {count} incident faces, expected 2")]
    NonManifoldEdge { a: usize, b: usize, count: usize },
    #[error("edge ({a}, {b}) is traversed twice in the same direction")]
    InconsistentOrientation { a: usize, b: usize },
    #[error("face {face} is degenerate (area {area:e})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("periodic grid {nx}x{ny} is too small; both sides need at least 3 cells")]
    GridTooSmall { nx: usize, ny: usize },
    #[error("corner offsets given for {got} faces, expected {expected}")]
    OffsetCount { got: usize, expected: usize },
    #[error("OFF parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
    #[error("exp(2u) overflows: 2u = {value} at vertex {vertex}")]
    Overflow { vertex: usize, value: f64 },
}

/// A closed, consistently oriented triangle mesh.
///
/// Periodic meshes (the flat torus) carry per-corner translation offsets: the
/// geometry of a face is taken from `vertex + offset` at each corner, so the
/// intrinsic metric can be flat even though the vertices live in one
/// fundamental domain.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    corner_offsets: Option<Vec<[[f64; 3]; 3]>>,
    num_edges: usize,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        Self::build(vertices, faces, None)
    }

    pub fn with_corner_offsets(
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
        offsets: Vec<[[f64; 3]; 3]>,
    ) -> Result<Self, MeshError> {
        if offsets.len() != faces.len() {
            return Err(MeshError::OffsetCount {
                got: offsets.len(),
                expected: faces.len(),
            });
        }
        Self::build(vertices, faces, Some(offsets))
    }

    fn build(
        vertices: Vec<[f64; 3]>,
        faces: Vec<[usize; 3]>,
        corner_offsets: Option<Vec<[[f64; 3]; 3]>>,
    ) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        let nv = vertices.len();
        for (f, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= nv) {
                return Err(MeshError::IndexOutOfRange {
                    face: f,
                    index,
                    num_vertices: nv,
                });
            }
        }
        let num_edges = check_edges(&faces)?;
        let mesh = Self {
            vertices,
            faces,
            corner_offsets,
            num_edges,
        };
        mesh.check_areas()?;
        Ok(mesh)
    }

    fn check_areas(&self) -> Result<(), MeshError> {
        let areas: Vec<f64> = (0..self.faces.len()).map(|f| self.face_area(f)).collect();
        let mean = areas.iter().sum::<f64>() / areas.len() as f64;
        let threshold = DEGENERATE_AREA_RATIO * mean;
        for (f, face) in self.faces.iter().enumerate() {
            let repeated = face[0] == face[1] || face[1] == face[2] || face[0] == face[2];
            if repeated || !(areas[f] > threshold) {
                return Err(MeshError::DegenerateFace {
                    face: f,
                    area: areas[f],
                });
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn is_periodic(&self) -> bool {
        self.corner_offsets.is_some()
    }

    /// V − E + F
    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_edges as i64 + self.num_faces() as i64
    }

    /// Corner positions of face `f`, including periodic offsets.
    pub fn face_corners(&self, f: usize) -> [Vector3<f64>; 3] {
        let face = self.faces[f];
        std::array::from_fn(|c| {
            let p = Vector3::from(self.vertices[face[c]]);
            match &self.corner_offsets {
                Some(offsets) => p + Vector3::from(offsets[f][c]),
                None => p,
            }
        })
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_corners(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_faces()).map(|f| self.face_area(f)).sum()
    }

    /// Longest edge of the mesh; used as the mesh size `h`.
    pub fn max_edge_length(&self) -> f64 {
        (0..self.num_faces())
            .flat_map(|f| {
                let p = self.face_corners(f);
                (0..3).map(move |c| (p[(c + 1) % 3] - p[c]).norm())
            })
            .fold(0.0, f64::max)
    }
}

/// Every undirected edge must appear exactly twice, once in each direction.
/// Returns the number of edges.
fn check_edges(faces: &[[usize; 3]]) -> Result<usize, MeshError> {
    // key: (min, max); value: (uses, uses in the min->max direction)
    let mut edges: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for face in faces {
        for c in 0..3 {
            let (a, b) = (face[c], face[(c + 1) % 3]);
            let entry = edges.entry((a.min(b), a.max(b))).or_insert((0, 0));
            entry.0 += 1;
            if a < b {
                entry.1 += 1;
            }
        }
    }
    for face in faces {
        for c in 0..3 {
            let (a, b) = (face[c], face[(c + 1) % 3]);
            let key = (a.min(b), a.max(b));
            let (count, forward) = edges[&key];
            if count != 2 {
                return Err(MeshError::NonManifoldEdge {
                    a: key.0,
                    b: key.1,
                    count,
                });
            }
            if forward != 1 {
                return Err(MeshError::InconsistentOrientation { a: key.0, b: key.1 });
            }
        }
    }
    Ok(edges.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosahedron_has_euler_characteristic_two() {
        let mesh = icosphere(0);
        assert_eq!(mesh.num_vertices(), 12);
        assert_eq!(mesh.num_faces(), 20);
        assert_eq!(mesh.num_edges(), 30);
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn flat_pillow_is_accepted() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let mesh = TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 1]]).unwrap();
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn collapsed_pillow_is_degenerate() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let err = TriangleMesh::new(v, vec![[0, 1, 2], [0, 2, 1]]).unwrap_err();
        assert!(matches!(err, MeshError::DegenerateFace { face: 0, .. }));
    }

    #[test]
    fn out_of_range_index() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = TriangleMesh::new(v, vec![[0, 1, 2], [0, 3, 1]]).unwrap_err();
        assert_eq!(
            err,
            MeshError::IndexOutOfRange {
                face: 1,
                index: 3,
                num_vertices: 3
            }
        );
    }

    #[test]
    fn open_surface_is_non_manifold() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = TriangleMesh::new(v, vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::NonManifoldEdge { count: 1, .. }));
    }

    #[test]
    fn flipped_face_is_inconsistent() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = TriangleMesh::new(v, vec![[0, 1, 2], [0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::InconsistentOrientation { .. }));
    }

    #[test]
    fn torus_grid_is_genus_one() {
        let mesh = torus_grid(8, 6, 1.0, 2.0).unwrap();
        assert_eq!(mesh.euler_characteristic(), 0);
        assert!((mesh.total_area() - 2.0).abs() < 1e-14);
    }
}
