//! Free Dirichlet levels, two-particle eigen-solves and chain energy levels.

pub mod fit;
pub mod galerkin;
pub mod levels;
pub mod potential;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
pub use fit::{fit_gamma, fit_sigma, AsymptoticFit, FitPoint};
use galerkin::{ground_state, NodeRule, PairOperator, SamePieceOp, SolveMethod, TwoPieceOp};
pub use levels::{ChainLevels, LevelEngine};
pub use potential::Potential;

/// `i^2 pi^2 / l^2` for `i = 1..=k_max`.
pub fn free_levels<T: Real>(l: T, k_max: usize) -> Result<Vec<T>> {
    if !(l > T::zero()) {
        return Err(Error::invalid("piece length must be positive"));
    }
    let base = T::PI() / l;
    Ok((1..=k_max)
        .map(|i| {
            let k = T::from_usize(i).unwrap() * base;
            k * k
        })
        .collect())
}

/// Sum of the `k` lowest Dirichlet levels of `[0, l]`,
/// `pi^2 k (k+1) (2k+1) / (6 l^2)`.
pub fn free_energy(l: f64, k: usize) -> f64 {
    let k = k as f64;
    std::f64::consts::PI.powi(2) * k * (k + 1.0) * (2.0 * k + 1.0) / (6.0 * l * l)
}

/// Number of sine modes per piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeRule {
    Fixed(usize),
    /// `clamp(ceil(per_length * l), min, max)`: the step of the potential
    /// has to be resolved on the scale of the range, so the mode count grows
    /// with the piece.
    PerLength {
        per_length: f64,
        min: usize,
        max: usize,
    },
}

impl ModeRule {
    pub fn modes(&self, l: f64) -> usize {
        match *self {
            ModeRule::Fixed(n) => n,
            ModeRule::PerLength {
                per_length,
                min,
                max,
            } => ((per_length * l).ceil() as usize).clamp(min, max),
        }
    }
}

impl Default for ModeRule {
    fn default() -> Self {
        ModeRule::PerLength {
            per_length: 1.5,
            min: 16,
            max: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub modes: ModeRule,
    /// Relative tolerance for single interaction elements.
    pub quad_tol: f64,
    /// Relative tolerance of the eigen-solve.
    pub eig_tol: f64,
    /// Largest basis handed to dense diagonalization.
    pub dense_limit: usize,
    pub nodes: NodeRule,
    /// Chebyshev nodes for the tabulated single-piece pair energy over
    /// `[l_min, 3 l_min]`; `None` solves every piece.
    pub same_table: Option<usize>,
    /// Allow `kappa > 2` levels from free energy plus first-order interaction.
    pub perturbative: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            modes: ModeRule::default(),
            quad_tol: 1e-8,
            eig_tol: 1e-12,
            dense_limit: 400,
            nodes: NodeRule::default(),
            same_table: Some(40),
            perturbative: false,
        }
    }
}

impl SolverConfig {
    pub fn with_modes(mut self, modes: ModeRule) -> Self {
        self.modes = modes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quad_tol > 0.0 && self.eig_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if let ModeRule::PerLength {
            per_length,
            min,
            max,
        } = self.modes
        {
            if !(per_length > 0.0) || min < 2 || max < min {
                return Err(Error::invalid("bad mode rule"));
            }
        }
        if matches!(self.modes, ModeRule::Fixed(n) if n < 2) {
            return Err(Error::invalid("need at least two modes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoParticleSolution {
    pub energy: f64,
    pub free_energy: f64,
    /// `energy - free_energy` without cancellation.
    pub shift: f64,
    /// Same piece: antisymmetric `C` with `psi = sum C_pq phi_p (x) phi_q`.
    /// Two pieces: `C_pq` on `phi_p^left (x) phi_q^right`. Frobenius norm 1.
    #[serde(skip)]
    pub coefficients: DMatrix<f64>,
    pub basis_size: usize,
    pub residual: f64,
    pub method: SolveMethod,
}

/// Where the two particles live.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    /// Wedge `phi_p ^ phi_q` on `[0, l]`, modes counted from 1.
    SamePiece { l: f64, p: usize, q: usize },
    /// `phi_p` on `[-left, 0]` times `phi_q` on `[d, d + right]`.
    TwoPiece {
        left: f64,
        right: f64,
        d: f64,
        p: usize,
        q: usize,
    },
}

fn diagonal_element(op: &dyn PairOperator, idx: usize) -> f64 {
    let mut e = vec![0.0; op.dim()];
    e[idx] = 1.0;
    op.apply_v(&e)[idx]
}

fn element_with_rule(geom: &Geometry, u: &Potential, rule: &NodeRule) -> f64 {
    match *geom {
        Geometry::SamePiece { l, p, q } => {
            let (p, q) = (p.min(q), p.max(q));
            let op = SamePieceOp::new(l, q, u, rule);
            let idx = op
                .pairs()
                .iter()
                .position(|&pq| pq == (p - 1, q - 1))
                .unwrap();
            diagonal_element(&op, idx)
        }
        Geometry::TwoPiece {
            left,
            right,
            d,
            p,
            q,
        } => {
            let op = TwoPieceOp::new(left, right, d, p, q, u, rule);
            diagonal_element(&op, (p - 1) * q + (q - 1))
        }
    }
}

/// `<chi, U chi>` for the wedge or product state `chi` of `geom`.
///
/// Checked against a refined rule; fails if the two disagree beyond `rel_tol`.
pub fn interaction_element(geom: &Geometry, u: &Potential, rel_tol: f64) -> Result<f64> {
    match *geom {
        Geometry::SamePiece { l, p, q } => {
            if p == 0 || q == 0 || p == q || !(l > 0.0) {
                return Err(Error::invalid(
                    "same-piece element needs l > 0 and distinct modes >= 1",
                ));
            }
        }
        Geometry::TwoPiece {
            left,
            right,
            d,
            p,
            q,
        } => {
            if p == 0 || q == 0 || !(left > 0.0 && right > 0.0 && d >= 0.0) {
                return Err(Error::invalid(
                    "two-piece element needs positive lengths, d >= 0, modes >= 1",
                ));
            }
        }
    }
    if u.is_zero() {
        return Ok(0.0);
    }
    let mut rule = NodeRule::default();
    let mut prev = element_with_rule(geom, u, &rule);
    let mut gap = f64::NAN;
    for _ in 0..4 {
        rule = rule.refined(1.6);
        let next = element_with_rule(geom, u, &rule);
        gap = (next - prev).abs();
        if gap <= rel_tol * next.abs() || gap <= 1e-300 {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::numerical(
        "interaction element quadrature",
        gap / prev.abs(),
    ))
}

/// Two particles on `[0, l]` with pair interaction `U`.
pub fn solve_same_piece_pair(
    l: f64,
    u: &Potential,
    n_modes: usize,
    cfg: &SolverConfig,
) -> Result<TwoParticleSolution> {
    if !(l > 0.0) {
        return Err(Error::invalid("piece length must be positive"));
    }
    if n_modes < 2 {
        return Err(Error::invalid("need at least two modes"));
    }
    let op = SamePieceOp::new(l, n_modes, u, &cfg.nodes);
    let g = ground_state(&op, cfg.eig_tol, cfg.dense_limit)?;
    Ok(TwoParticleSolution {
        energy: g.energy,
        free_energy: g.free_energy,
        shift: g.shift,
        coefficients: op.to_matrix(&g.vector),
        basis_size: n_modes,
        residual: g.residual,
        method: g.method,
    })
}

/// One particle on `[-l_left, 0]`, one on `[d, d + l_right]`.
pub fn solve_two_piece(
    l_left: f64,
    l_right: f64,
    d: f64,
    u: &Potential,
    n_left: usize,
    n_right: usize,
    cfg: &SolverConfig,
) -> Result<TwoParticleSolution> {
    if !(l_left > 0.0 && l_right > 0.0) {
        return Err(Error::invalid("piece lengths must be positive"));
    }
    if !(d >= 0.0) {
        return Err(Error::invalid("distance must be non-negative"));
    }
    if n_left < 1 || n_right < 1 {
        return Err(Error::invalid("need at least one mode per piece"));
    }
    let op = TwoPieceOp::new(l_left, l_right, d, n_left, n_right, u, &cfg.nodes);
    let g = ground_state(&op, cfg.eig_tol, cfg.dense_limit)?;
    Ok(TwoParticleSolution {
        energy: g.energy,
        free_energy: g.free_energy,
        shift: g.shift,
        coefficients: op.to_matrix(&g.vector),
        basis_size: n_left.max(n_right),
        residual: g.residual,
        method: g.method,
    })
}

/// Left piece of length `a l`, right piece of length `l`, distance `d`.
pub fn solve_two_piece_pair(
    l: f64,
    a: f64,
    d: f64,
    u: &Potential,
    n_modes: usize,
    cfg: &SolverConfig,
) -> Result<TwoParticleSolution> {
    if !(a >= 1.0) {
        return Err(Error::invalid("aspect a must be >= 1"));
    }
    solve_two_piece(a * l, l, d, u, n_modes, n_modes, cfg)
}
