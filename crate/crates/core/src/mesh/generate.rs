use std::collections::HashMap;

use super::{MeshError, TriangleMesh};

/// Regular icosahedron subdivided `level` times by edge midpoints, with every
/// vertex projected to the unit sphere.
pub fn icosphere(level: u32) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
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

    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 3]>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (vertices[a], vertices[b]);
                vertices.push(normalize([
                    0.5 * (p[0] + q[0]),
                    0.5 * (p[1] + q[1]),
                    0.5 * (p[2] + q[2]),
                ]));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    TriangleMesh::new(vertices, faces).expect("icosphere construction is always valid")
}

fn normalize(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Flat periodic `lx × ly` torus sampled on an `nx × ny` grid, each cell split
/// along its main diagonal. Vertex `(i, j)` sits at `(i·lx/nx, j·ly/ny, 0)`
/// and has index `j·nx + i`.
pub fn torus_grid(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<TriangleMesh, MeshError> {
    if nx < 3 || ny < 3 {
        return Err(MeshError::GridTooSmall { nx, ny });
    }
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let vertices: Vec<[f64; 3]> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| [i as f64 * hx, j as f64 * hy, 0.0]))
        .collect();
    let mut faces = Vec::with_capacity(2 * nx * ny);
    let mut offsets = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            // (di, dj) corner of the cell, wrapped
            let corner = |di: usize, dj: usize| {
                let (ii, jj) = (i + di, j + dj);
                let index = (jj % ny) * nx + (ii % nx);
                let offset = [
                    if ii == nx { lx } else { 0.0 },
                    if jj == ny { ly } else { 0.0 },
                    0.0,
                ];
                (index, offset)
            };
            let (v00, o00) = corner(0, 0);
            let (v10, o10) = corner(1, 0);
            let (v11, o11) = corner(1, 1);
            let (v01, o01) = corner(0, 1);
            faces.push([v00, v10, v11]);
            offsets.push([o00, o10, o11]);
            faces.push([v00, v11, v01]);
            offsets.push([o00, o11, o01]);
        }
    }
    TriangleMesh::with_corner_offsets(vertices, faces, offsets)
}
