//! Normalized Ricci flow on closed surfaces and on homogeneous product
//! spheres, with the Laplacian spectrum tracked along the flow and the
//! curvature-bound weights that make eigenvalue multiples monotone.
//!
//! Layout:
//! - [`mesh`]: triangle meshes, cotangent stiffness, lumped mass, curvature.
//! - [`spectrum`]: smallest nonzero eigenpairs of `S u = λ M u`, with branch tracking.
//! - [`bounds`]: the scalar-curvature bounds φ, ψ, their blowup horizons and the weights.
//! - [`surface_flow`]: conformal-factor time stepping and [`trace::FlowTrace`] recording.
//! - [`homogeneous`]: the flow on `S^p × S^q` reduced to two radii.
//! - [`monotone`]: monotone quantities, verdicts and the eigenvalue rate check.
//! - [`scenario`]: the `key = value` scenario format driving the command-line tool.

pub mod bounds;
pub mod homogeneous;
pub mod mesh;
pub mod monotone;
pub mod scenario;
pub mod sparse;
pub mod spectrum;
pub mod surface_flow;
pub mod trace;
