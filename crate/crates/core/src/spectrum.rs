//! Smallest nonzero eigenpairs of the pencil `S u = λ M u`, with `M` diagonal.
//!
//! The solver is block inverse iteration at shift zero followed by a
//! Rayleigh-Ritz projection each sweep. `S` is singular (constants span its
//! kernel), so it is grounded at vertex 0 and factored once; the iterates are
//! kept M-orthogonal to the constants. Only `M` changes along a conformal flow,
//! so one [`SpectralSolver`] serves a whole run.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::sparse::{CsrMatrix, EnvelopeCholesky, FactorError};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const MAX_ITERATIONS: usize = 10_000;
/// Below this `|uᵢᵀ M uⱼ|` a branch match is flagged as ambiguous.
pub const MIN_BRANCH_OVERLAP: f64 = 0.5;
const SEED: u64 = 0x5eed_1a7c;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("eigensolver did not converge after {iterations} iterations (worst residual {worst_residual:e})")]
    ConvergenceFailure {
        iterations: usize,
        worst_residual: f64,
    },
    #[error("stiffness factorization failed: {0}")]
    Factorization(#[from] FactorError),
    #[error("invalid eigenproblem request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// M-normalized: `vᵀ M v = 1`.
    pub vector: Vec<f64>,
    /// `‖S v − λ M v‖ / ‖M v‖`
    pub residual: f64,
}

/// New pairs matched to the previous step's branches.
#[derive(Debug, Clone)]
pub struct Tracked {
    /// Sorted by value, like [`SpectralSolver::smallest_eigenpairs`].
    pub pairs: Vec<EigenPair>,
    /// `matching[branch]` is the index into `pairs` continuing that branch.
    pub matching: Vec<usize>,
    /// `|prevᵀ M new|` of each matched branch.
    pub overlaps: Vec<f64>,
    pub ambiguities: Vec<BranchAmbiguity>,
}

impl Tracked {
    /// Pairs reordered so that entry `b` continues branch `b`.
    pub fn in_branch_order(&self) -> Vec<EigenPair> {
        self.matching.iter().map(|&i| self.pairs[i].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchAmbiguity {
    pub branch: usize,
    pub best_overlap: f64,
}

#[derive(Debug, Clone)]
pub struct SpectralSolver {
    stiffness: CsrMatrix,
    factor: EnvelopeCholesky,
    deflate: bool,
}

impl SpectralSolver {
    /// Solver for a stiffness matrix whose kernel is exactly the constants.
    pub fn new(stiffness: &CsrMatrix) -> Result<Self, SpectrumError> {
        if stiffness.dim() < 2 {
            return Err(SpectrumError::InvalidRequest("need at least two vertices".into()));
        }
        Ok(Self {
            stiffness: stiffness.clone(),
            factor: EnvelopeCholesky::factor(&stiffness.without_index(0))?,
            deflate: true,
        })
    }

    /// Solver for a nonsingular `S`; every eigenpair is admissible.
    pub fn without_deflation(stiffness: &CsrMatrix) -> Result<Self, SpectrumError> {
        Ok(Self {
            stiffness: stiffness.clone(),
            factor: EnvelopeCholesky::factor(stiffness)?,
            deflate: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    fn admissible_dim(&self) -> usize {
        if self.deflate {
            self.dim() - 1
        } else {
            self.dim()
        }
    }

    pub fn smallest_eigenpairs(
        &self,
        mass: &[f64],
        k: usize,
        tol: f64,
    ) -> Result<Vec<EigenPair>, SpectrumError> {
        self.solve(mass, k, tol, &[])
    }

    /// Warm-started solve from `prev`, with each previous branch matched to
    /// the new pair of largest `|uᵢᵀ M uⱼ|`. Matched vectors are sign-aligned
    /// with their predecessors.
    pub fn track_eigenpairs(
        &self,
        prev: &[EigenPair],
        mass: &[f64],
        k: usize,
        tol: f64,
    ) -> Result<Tracked, SpectrumError> {
        if prev.len() > k {
            return Err(SpectrumError::InvalidRequest(format!(
                "{} previous branches but only {k} requested",
                prev.len()
            )));
        }
        let init: Vec<&[f64]> = prev.iter().map(|p| p.vector.as_slice()).collect();
        let mut pairs = self.solve(mass, k, tol, &init)?;

        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(prev.len() * k);
        for (b, p) in prev.iter().enumerate() {
            for (i, q) in pairs.iter().enumerate() {
                candidates.push((m_dot(mass, &p.vector, &q.vector).abs(), b, i));
            }
        }
        candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut matching = vec![usize::MAX; prev.len()];
        let mut overlaps = vec![0.0; prev.len()];
        let mut taken = vec![false; pairs.len()];
        for (overlap, b, i) in candidates {
            if matching[b] == usize::MAX && !taken[i] {
                matching[b] = i;
                overlaps[b] = overlap;
                taken[i] = true;
            }
        }
        let mut ambiguities = Vec::new();
        for (b, p) in prev.iter().enumerate() {
            let i = matching[b];
            if m_dot(mass, &p.vector, &pairs[i].vector) < 0.0 {
                pairs[i].vector.iter_mut().for_each(|x| *x = -*x);
            }
            if overlaps[b] < MIN_BRANCH_OVERLAP {
                ambiguities.push(BranchAmbiguity {
                    branch: b,
                    best_overlap: overlaps[b],
                });
            }
        }
        Ok(Tracked {
            pairs,
            matching,
            overlaps,
            ambiguities,
        })
    }

    fn solve(
        &self,
        mass: &[f64],
        k: usize,
        tol: f64,
        init: &[&[f64]],
    ) -> Result<Vec<EigenPair>, SpectrumError> {
        let n = self.dim();
        let n_eff = self.admissible_dim();
        if mass.len() != n {
            return Err(SpectrumError::InvalidRequest(format!(
                "mass has length {}, expected {n}",
                mass.len()
            )));
        }
        if !mass.iter().all(|&m| m > 0.0 && m.is_finite()) {
            return Err(SpectrumError::InvalidRequest("mass must be positive and finite".into()));
        }
        if k == 0 || k > n_eff {
            return Err(SpectrumError::InvalidRequest(format!(
                "k = {k} outside 1..={n_eff}"
            )));
        }
        if !(tol > 0.0) {
            return Err(SpectrumError::InvalidRequest(format!("tolerance {tol} must be positive")));
        }

        let block = (2 * k).max(k + 6).min(n_eff);
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let mut basis: Vec<Vec<f64>> = init.iter().take(block).map(|v| v.to_vec()).collect();
        while basis.len() < block {
            basis.push((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        }

        let mut worst = f64::INFINITY;
        for iteration in 0..MAX_ITERATIONS {
            self.orthonormalize(mass, &mut basis, &mut rng);
            let (values, ritz) = self.rayleigh_ritz(&basis);

            let residuals: Vec<f64> = ritz[..k]
                .par_iter()
                .zip(&values[..k])
                .map(|(x, &lambda)| self.residual(mass, x, lambda))
                .collect();
            worst = residuals.iter().copied().fold(0.0, f64::max);
            if worst <= tol {
                return Ok(ritz
                    .into_iter()
                    .zip(values)
                    .zip(residuals)
                    .map(|((vector, value), residual)| EigenPair {
                        value,
                        vector: if init.is_empty() { canonical_sign(vector) } else { vector },
                        residual,
                    })
                    .collect());
            }
            if iteration + 1 == MAX_ITERATIONS {
                break;
            }
            basis = ritz.par_iter().map(|x| self.apply_inverse(mass, x)).collect();
        }
        Err(SpectrumError::ConvergenceFailure {
            iterations: MAX_ITERATIONS,
            worst_residual: worst,
        })
    }

    /// `S⁺ M x`, returned M-orthogonal to the constants when deflating.
    fn apply_inverse(&self, mass: &[f64], x: &[f64]) -> Vec<f64> {
        let mut b: Vec<f64> = x.iter().zip(mass).map(|(x, m)| x * m).collect();
        if !self.deflate {
            return self.factor.solve(&b);
        }
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        b.iter_mut().for_each(|v| *v -= mean);
        let tail = self.factor.solve(&b[1..]);
        let mut y = Vec::with_capacity(x.len());
        y.push(0.0);
        y.extend(tail);
        self.deflate_constants(mass, &mut y);
        y
    }

    fn deflate_constants(&self, mass: &[f64], v: &mut [f64]) {
        if self.deflate {
            let c = m_dot(mass, v, &vec![1.0; v.len()]) / mass.iter().sum::<f64>();
            v.iter_mut().for_each(|x| *x -= c);
        }
    }

    /// Twice-iterated modified Gram-Schmidt in the M inner product. Columns
    /// that collapse are replaced by fresh random vectors.
    fn orthonormalize(&self, mass: &[f64], basis: &mut [Vec<f64>], rng: &mut ChaCha8Rng) {
        let n = self.dim();
        for j in 0..basis.len() {
            for attempt in 0..8 {
                let before = m_dot(mass, &basis[j], &basis[j]).sqrt();
                let (done, rest) = basis.split_at_mut(j);
                let v = &mut rest[0];
                for _ in 0..2 {
                    self.deflate_constants(mass, v);
                    for q in done.iter() {
                        let c = m_dot(mass, q, v);
                        v.iter_mut().zip(q).for_each(|(x, q)| *x -= c * q);
                    }
                }
                let norm = m_dot(mass, v, v).sqrt();
                if norm > 1e-10 * before && norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                    break;
                }
                assert!(attempt < 7, "could not complete an M-orthonormal basis");
                *v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            }
        }
    }

    /// Ritz values (ascending) and vectors of `S` on an M-orthonormal basis.
    fn rayleigh_ritz(&self, basis: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = basis.len();
        let images: Vec<Vec<f64>> = basis.par_iter().map(|q| self.stiffness.mul_vec(q)).collect();
        let mut projected = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = dot(&basis[i], &images[j]);
                let w = dot(&basis[j], &images[i]);
                projected[(i, j)] = 0.5 * (v + w);
                projected[(j, i)] = 0.5 * (v + w);
            }
        }
        let eig = SymmetricEigen::new(projected);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let n = self.dim();
        let values = order.iter().map(|&c| eig.eigenvalues[c]).collect();
        let vectors = order
            .iter()
            .map(|&c| {
                let mut x = vec![0.0; n];
                for (i, q) in basis.iter().enumerate() {
                    let z = eig.eigenvectors[(i, c)];
                    x.iter_mut().zip(q).for_each(|(x, q)| *x += z * q);
                }
                x
            })
            .collect();
        (values, vectors)
    }

    fn residual(&self, mass: &[f64], x: &[f64], lambda: f64) -> f64 {
        let sx = self.stiffness.mul_vec(x);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..x.len() {
            let mx = mass[i] * x[i];
            num += (sx[i] - lambda * mx).powi(2);
            den += mx * mx;
        }
        (num / den).sqrt()
    }
}

/// One-shot convenience wrapper around [`SpectralSolver`].
pub fn smallest_eigenpairs(
    stiffness: &CsrMatrix,
    mass: &[f64],
    k: usize,
    tol: f64,
) -> Result<Vec<EigenPair>, SpectrumError> {
    SpectralSolver::new(stiffness)?.smallest_eigenpairs(mass, k, tol)
}

pub fn m_dot(mass: &[f64], a: &[f64], b: &[f64]) -> f64 {
    mass.iter().zip(a).zip(b).map(|((m, a), b)| m * a * b).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let pivot = v
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, *x) } else { best });
    if pivot.1 < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}
