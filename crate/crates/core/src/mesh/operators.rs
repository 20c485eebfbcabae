use std::f64::consts::PI;

use super::{MeshError, TriangleMesh};
use crate::sparse::CsrMatrix;

/// `|2u|` above this aborts: `exp(2u)` would leave the finite `f64` range.
pub const OVERFLOW_EXPONENT: f64 = 700.0;

/// Cotangent stiffness, lumped base mass and base curvature of a mesh.
///
/// The geometer's Laplacian of the base metric is `Δf ≈ −(S f)_i / A_i`. For a
/// conformal metric `e^{2u} g0` only the mass changes: `A_i e^{2u_i}`.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub stiffness: CsrMatrix,
    pub base_mass: Vec<f64>,
    /// Scalar curvature at t = 0: twice the Gauss curvature, `2 · defect_i / A_i`.
    pub base_curvature: Vec<f64>,
    pub angle_defect: Vec<f64>,
    pub euler_characteristic: i64,
    /// Longest mesh edge.
    pub h: f64,
}

impl DiscreteOperators {
    pub fn num_vertices(&self) -> usize {
        self.base_mass.len()
    }

    pub fn base_area(&self) -> f64 {
        self.base_mass.iter().sum()
    }

    pub fn total_angle_defect(&self) -> f64 {
        self.angle_defect.iter().sum()
    }
}

pub fn assemble_operators(mesh: &TriangleMesh) -> DiscreteOperators {
    let nv = mesh.num_vertices();
    let mut mass = vec![0.0; nv];
    let mut angle_sum = vec![0.0; nv];
    let mut off_diagonal = Vec::with_capacity(6 * mesh.num_faces());

    for (f, face) in mesh.faces().iter().enumerate() {
        let p = mesh.face_corners(f);
        let area = mesh.face_area(f);
        for c in 0..3 {
            let e1 = p[(c + 1) % 3] - p[c];
            let e2 = p[(c + 2) % 3] - p[c];
            let cross = e1.cross(&e2).norm();
            let dot = e1.dot(&e2);
            angle_sum[face[c]] += cross.atan2(dot);
            mass[face[c]] += area / 3.0;

            // the angle at corner c sits opposite edge (c+1, c+2)
            let w = 0.5 * dot / cross;
            let (i, j) = (face[(c + 1) % 3], face[(c + 2) % 3]);
            off_diagonal.push((i, j, -w));
            off_diagonal.push((j, i, -w));
        }
    }

    let off = CsrMatrix::from_triplets(nv, off_diagonal);
    let mut triplets = Vec::with_capacity(off.nnz() + nv);
    for i in 0..nv {
        let mut diag = 0.0;
        for (j, v) in off.row(i) {
            diag -= v;
            triplets.push((i, j, v));
        }
        triplets.push((i, i, diag));
    }
    let stiffness = CsrMatrix::from_triplets(nv, triplets);

    let angle_defect: Vec<f64> = angle_sum.iter().map(|s| 2.0 * PI - s).collect();
    let base_curvature = angle_defect
        .iter()
        .zip(&mass)
        .map(|(d, a)| 2.0 * d / a)
        .collect();

    DiscreteOperators {
        stiffness,
        base_mass: mass,
        base_curvature,
        angle_defect,
        euler_characteristic: mesh.euler_characteristic(),
        h: mesh.max_edge_length(),
    }
}

fn check_exponent(u: &[f64]) -> Result<(), MeshError> {
    match u.iter().position(|x| !((2.0 * x).abs() <= OVERFLOW_EXPONENT)) {
        Some(vertex) => Err(MeshError::Overflow {
            vertex,
            value: 2.0 * u[vertex],
        }),
        None => Ok(()),
    }
}

/// Scalar curvature of `e^{2u} g0`: `R_i = e^{−2u_i} (R0_i + 2 (S u)_i / A_i)`.
pub fn curvature(ops: &DiscreteOperators, u: &[f64]) -> Result<Vec<f64>, MeshError> {
    assert_eq!(u.len(), ops.num_vertices());
    check_exponent(u)?;
    let su = ops.stiffness.mul_vec(u);
    Ok((0..u.len())
        .map(|i| (-2.0 * u[i]).exp() * (ops.base_curvature[i] + 2.0 * su[i] / ops.base_mass[i]))
        .collect())
}

/// Total area and the diagonal of the conformal mass matrix `A_i e^{2u_i}`.
pub fn area_and_mass(ops: &DiscreteOperators, u: &[f64]) -> Result<(f64, Vec<f64>), MeshError> {
    assert_eq!(u.len(), ops.num_vertices());
    check_exponent(u)?;
    let mass: Vec<f64> = ops
        .base_mass
        .iter()
        .zip(u)
        .map(|(a, x)| a * (2.0 * x).exp())
        .collect();
    Ok((mass.iter().sum(), mass))
}

/// Average scalar curvature `∫R dμ / ∫dμ`.
pub fn mean_curvature_r(ops: &DiscreteOperators, u: &[f64]) -> Result<f64, MeshError> {
    let r = curvature(ops, u)?;
    let (area, mass) = area_and_mass(ops, u)?;
    Ok(mean_from_parts(ops, &r, &mass, area))
}

pub(crate) fn mean_from_parts(ops: &DiscreteOperators, r: &[f64], mass: &[f64], area: f64) -> f64 {
    let integral: f64 = r.iter().zip(mass).map(|(r, m)| r * m).sum();
    debug_assert!({
        // Σ R_i A_i e^{2u_i} = 2 Σ defect because S annihilates constants
        let scale: f64 = r.iter().zip(mass).map(|(r, m)| (r * m).abs()).sum::<f64>() + 1.0;
        (integral - 2.0 * ops.total_angle_defect()).abs() <= 1e-9 * scale
    });
    integral / area
}
