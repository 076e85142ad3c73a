//! Reduced one- and two-particle densities of factorized fermion states.
//!
//! Kernels live on a midpoint grid and are stored weighted,
//! `M_ij = sqrt(w_i) K(x_i, x_j) sqrt(w_j)`, so the trace norm of the integral
//! operator is the nuclear norm of `M`. Order-2 kernels are indexed by node
//! pairs `(x1, x2) -> x1 * G + x2`.
//!
//! Whole-box comparisons of greedy and test states never build grid kernels:
//! both states are products over disjoint blocks (a `P_2` chain, or a single
//! `N_2` piece), so the trace norms split into per-block terms that are
//! evaluated in the sine-mode basis. Sine modes are exactly orthonormal under
//! the midpoint rule, so this agrees with the grid computation.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::chains::ChainDecomposition;
use crate::error::{Error, Result};
use crate::optimizer::Occupation;
use crate::spectra::{solve_same_piece_pair, solve_two_piece, LevelEngine, TwoParticleSolution};

pub const MIN_NODES_PER_LENGTH: f64 = 20.0;
const ORTHO_TOL: f64 = 1e-8;
/// Eigenvalues of block one-densities below this are dropped in cross terms.
const TRUNC: f64 = 1e-10;

/// Midpoint nodes on a union of disjoint intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub intervals: Vec<(f64, f64)>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn midpoint(intervals: &[(f64, f64)], per_length: f64) -> Result<Self> {
        if !(per_length >= MIN_NODES_PER_LENGTH) {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_NODES_PER_LENGTH} nodes per unit length"
            )));
        }
        let mut iv = intervals.to_vec();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        if iv.is_empty()
            || iv.iter().any(|&(a, b)| !(b > a))
            || iv.windows(2).any(|w| w[1].0 < w[0].1)
        {
            return Err(Error::invalid(
                "grid intervals must be non-empty, proper and disjoint",
            ));
        }
        let (mut nodes, mut weights) = (Vec::new(), Vec::new());
        for &(a, b) in &iv {
            let m = ((b - a) * per_length).ceil() as usize;
            let h = (b - a) / m as f64;
            for j in 0..m {
                nodes.push(a + (j as f64 + 0.5) * h);
                weights.push(h);
            }
        }
        Ok(Grid {
            intervals: iv,
            nodes,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }

    /// `sqrt(2/l) sin(k pi (x - a) / l)` on `(a, a + l)`, zero elsewhere.
    pub fn sine_mode(&self, a: f64, l: f64, k: usize) -> Vec<f64> {
        let c = (2.0 / l).sqrt();
        self.sample(|x| {
            if x > a && x < a + l {
                c * (k as f64 * PI * (x - a) / l).sin()
            } else {
                0.0
            }
        })
    }

    fn sqrt_weights(&self, order: usize) -> DVector<f64> {
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        match order {
            1 => DVector::from_vec(s),
            _ => {
                let g = s.len();
                DVector::from_fn(g * g, |i, _| s[i / g] * s[i % g])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DensityKernel {
    pub order: usize,
    pub grid: Arc<Grid>,
    /// Weighted samples.
    pub matrix: DMatrix<f64>,
    pub trace: f64,
}

impl DensityKernel {
    fn from_weighted(order: usize, grid: &Arc<Grid>, matrix: DMatrix<f64>) -> Self {
        let trace = matrix.trace();
        DensityKernel {
            order,
            grid: grid.clone(),
            matrix,
            trace,
        }
    }

    /// Unweighted kernel value at node indices (node pairs for order 2).
    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        let s = self.grid.sqrt_weights(self.order);
        self.matrix[(i, j)] / (s[i] * s[j])
    }

    /// `max |M - M^T|`.
    pub fn hermitian_defect(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.matrix + self.matrix.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }

    /// Largest difference of unweighted kernel values.
    pub fn max_kernel_error(&self, other: &DensityKernel) -> Result<f64> {
        same_shape(self, other)?;
        let s = self.grid.sqrt_weights(self.order);
        let d = &self.matrix - &other.matrix;
        let mut worst = 0.0f64;
        for j in 0..d.ncols() {
            for i in 0..d.nrows() {
                worst = worst.max((d[(i, j)] / (s[i] * s[j])).abs());
            }
        }
        Ok(worst)
    }

    /// CSV rows `i, j, value` with the unweighted kernel.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        wr.write_record(["i", "j", "value"]).map_err(csv_err)?;
        let s = self.grid.sqrt_weights(self.order);
        for i in 0..self.matrix.nrows() {
            for j in 0..self.matrix.ncols() {
                let v = self.matrix[(i, j)] / (s[i] * s[j]);
                wr.write_record(&[i.to_string(), j.to_string(), format!("{v:e}")])
                    .map_err(csv_err)?;
            }
        }
        wr.flush()
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        Ok(())
    }
}

fn same_shape(a: &DensityKernel, b: &DensityKernel) -> Result<()> {
    if a.order != b.order {
        return Err(Error::invalid("kernels of different order"));
    }
    if !Arc::ptr_eq(&a.grid, &b.grid) && *a.grid != *b.grid {
        return Err(Error::invalid("kernels live on different grids"));
    }
    Ok(())
}

/// Sum of singular values of the weighted difference; kernels are
/// symmetric, so these are the absolute eigenvalues.
pub fn trace_norm_distance(k1: &DensityKernel, k2: &DensityKernel) -> Result<f64> {
    same_shape(k1, k2)?;
    Ok(nuclear_sym(&(&k1.matrix - &k2.matrix)))
}

/// Weighted orbital matrix `G x q`, checked for orthonormality.
fn weighted_orbitals(orbitals: &[Vec<f64>], grid: &Grid) -> Result<DMatrix<f64>> {
    let g = grid.len();
    if orbitals.iter().any(|o| o.len() != g) {
        return Err(Error::invalid("orbital samples do not match the grid"));
    }
    let s = grid.sqrt_weights(1);
    let phi = DMatrix::from_fn(g, orbitals.len(), |i, a| s[i] * orbitals[a][i]);
    let gram = phi.transpose() * &phi;
    let defect = (gram - DMatrix::identity(orbitals.len(), orbitals.len())).amax();
    if defect > ORTHO_TOL {
        return Err(Error::invalid(format!(
            "orbitals are not orthonormal: Gram defect {defect:e}"
        )));
    }
    Ok(phi)
}

/// `sum_j phi_j(x) phi_j(y)`.
pub fn slater_one_density(orbitals: &[Vec<f64>], grid: &Arc<Grid>) -> Result<DensityKernel> {
    let phi = weighted_orbitals(orbitals, grid)?;
    Ok(DensityKernel::from_weighted(
        1,
        grid,
        &phi * phi.transpose(),
    ))
}

/// One factor of a product state, sampled on the whole grid.
#[derive(Debug, Clone)]
pub enum Component {
    /// Slater determinant of orthonormal orbitals.
    Slater(Vec<Vec<f64>>),
    /// Normalized antisymmetric two-particle wavefunction, `psi[(x1, x2)]`.
    Pair(DMatrix<f64>),
}

impl Component {
    pub fn particles(&self) -> usize {
        match self {
            Component::Slater(o) => o.len(),
            Component::Pair(_) => 2,
        }
    }

    fn support(&self, g: usize) -> Vec<bool> {
        let mut s = vec![false; g];
        match self {
            Component::Slater(orbs) => {
                for o in orbs {
                    for (i, &v) in o.iter().enumerate() {
                        s[i] |= v != 0.0;
                    }
                }
            }
            Component::Pair(psi) => {
                for i in 0..g {
                    s[i] = psi.row(i).iter().any(|&v| v != 0.0);
                }
            }
        }
        s
    }
}

fn check_pair(psi: &DMatrix<f64>, grid: &Grid) -> Result<DMatrix<f64>> {
    let g = grid.len();
    if psi.nrows() != g || psi.ncols() != g {
        return Err(Error::invalid("pair samples do not match the grid"));
    }
    let scale = psi.amax().max(f64::MIN_POSITIVE);
    if (psi + psi.transpose()).amax() > 1e-10 * scale {
        return Err(Error::invalid("pair wavefunction is not antisymmetric"));
    }
    let s = grid.sqrt_weights(1);
    let pw = DMatrix::from_fn(g, g, |i, j| s[i] * psi[(i, j)] * s[j]);
    let norm = pw.norm_squared();
    if (norm - 1.0).abs() > ORTHO_TOL {
        return Err(Error::invalid(format!(
            "pair wavefunction has norm^2 {norm} on this grid"
        )));
    }
    Ok(pw)
}

/// Column permutation `(y1, y2) -> (y2, y1)`.
fn swap_columns(m: &DMatrix<f64>, g: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, (c % g) * g + c / g)])
}

/// `(1/2)(A (x) A - (A (x) A) tau)`: order-2 density of a Slater state with one-density `A`.
fn slater_two(a: &DMatrix<f64>, g: usize) -> DMatrix<f64> {
    let aa = a.kronecker(a);
    (&aa - swap_columns(&aa, g)) * 0.5
}

/// Order-1 and order-2 densities of the antisymmetrized product of
/// components with disjoint supports:
/// `gamma1 = sum_I gamma1_I` and
/// `gamma2 = sum_I gamma2_I + (1/2) sum_{I != J} (gamma1_I (x) gamma1_J)(1 - tau)`.
pub fn factorized_densities(
    grid: &Arc<Grid>,
    comps: &[Component],
) -> Result<(DensityKernel, DensityKernel)> {
    let g = grid.len();
    let supports: Vec<Vec<bool>> = comps.iter().map(|c| c.support(g)).collect();
    for a in 0..comps.len() {
        for b in a + 1..comps.len() {
            if supports[a].iter().zip(&supports[b]).any(|(x, y)| *x && *y) {
                return Err(Error::invalid(format!("components {a} and {b} overlap")));
            }
        }
    }
    let mut ones = Vec::with_capacity(comps.len());
    let mut g2 = DMatrix::zeros(g * g, g * g);
    for c in comps {
        match c {
            Component::Slater(orbs) => {
                let phi = weighted_orbitals(orbs, grid)?;
                let a = &phi * phi.transpose();
                g2 += slater_two(&a, g);
                ones.push(a);
            }
            Component::Pair(psi) => {
                let pw = check_pair(psi, grid)?;
                let v = DVector::from_column_slice(pw.transpose().as_slice());
                g2 += &v * v.transpose();
                ones.push(&pw * pw.transpose() * 2.0);
            }
        }
    }
    let total: DMatrix<f64> = ones.iter().fold(DMatrix::zeros(g, g), |acc, a| acc + a);
    let mut cross = total.kronecker(&total);
    for a in &ones {
        cross -= a.kronecker(a);
    }
    g2 += (&cross - swap_columns(&cross, g)) * 0.5;
    Ok((
        DensityKernel::from_weighted(1, grid, total),
        DensityKernel::from_weighted(2, grid, g2),
    ))
}

/// All permutations of `0..n` with their signs.
fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out.into_iter()
        .map(|p| {
            let inversions = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| p[i] > p[j])
                .count();
            (p, if inversions % 2 == 0 { 1.0 } else { -1.0 })
        })
        .collect()
}

pub const BRUTE_MAX_PARTICLES: usize = 4;
const BRUTE_MAX_SAMPLES: usize = 1 << 24;

/// Direct quadrature of the defining integrals
/// `gamma1 = n int Psi(x, Z) Psi(y, Z) dZ` and
/// `gamma2 = C(n, 2) int Psi(x1, x2, Z) Psi(y1, y2, Z) dZ`
/// for the antisymmetrized product of `comps`, built on the full `G^n` grid.
pub fn brute_force_densities(
    grid: &Arc<Grid>,
    comps: &[Component],
) -> Result<(DensityKernel, DensityKernel)> {
    let g = grid.len();
    // factors: single orbitals or pair functions, in particle order
    enum F<'a> {
        One(&'a [f64]),
        Two(&'a DMatrix<f64>),
    }
    let mut factors = Vec::new();
    for c in comps {
        match c {
            Component::Slater(orbs) => factors.extend(orbs.iter().map(|o| F::One(o))),
            Component::Pair(psi) => factors.push(F::Two(psi)),
        }
    }
    let n: usize = comps.iter().map(Component::particles).sum();
    if !(2..=BRUTE_MAX_PARTICLES).contains(&n) {
        return Err(Error::TooLarge(format!(
            "brute force takes 2..={BRUTE_MAX_PARTICLES} particles, got {n}"
        )));
    }
    let size = g.checked_pow(n as u32).filter(|&s| s <= BRUTE_MAX_SAMPLES);
    let size = size.ok_or_else(|| Error::TooLarge(format!("{g}^{n} samples")))?;
    let perms = permutations(n);
    let s = grid.sqrt_weights(1);
    let mut psi = vec![0.0; size];
    let mut idx = vec![0usize; n];
    let mut y = vec![0usize; n];
    for (flat, out) in psi.iter_mut().enumerate() {
        let mut r = flat;
        for k in (0..n).rev() {
            idx[k] = r % g;
            r /= g;
        }
        let mut acc = 0.0;
        for (p, sign) in &perms {
            for k in 0..n {
                y[k] = idx[p[k]];
            }
            let mut v = *sign;
            let mut k = 0;
            for f in &factors {
                match f {
                    F::One(o) => {
                        v *= o[y[k]];
                        k += 1;
                    }
                    F::Two(m) => {
                        v *= m[(y[k], y[k + 1])];
                        k += 2;
                    }
                }
                if v == 0.0 {
                    break;
                }
            }
            acc += v;
        }
        *out = acc * idx.iter().map(|&i| s[i]).product::<f64>();
    }
    let norm: f64 = psi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::invalid("the product state vanishes"));
    }
    psi.iter_mut().for_each(|v| *v /= norm);
    let nf = n as f64;
    // row-major flat index: the leading coordinates are the slowest
    let m1 = DMatrix::from_row_slice(g, size / g, &psi);
    let m2 = DMatrix::from_row_slice(g * g, size / (g * g), &psi);
    Ok((
        DensityKernel::from_weighted(1, grid, &m1 * m1.transpose() * nf),
        DensityKernel::from_weighted(2, grid, &m2 * m2.transpose() * (nf * (nf - 1.0) / 2.0)),
    ))
}

/// Where a two-particle solution lives on the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairPlacement {
    SamePiece {
        start: f64,
        length: f64,
    },
    /// Left piece first; the solution's rows belong to it.
    TwoPiece {
        left_start: f64,
        left_length: f64,
        right_start: f64,
        right_length: f64,
    },
}

/// Grid samples of the antisymmetric wavefunction behind `sol`.
pub fn pair_wavefunction(
    sol: &TwoParticleSolution,
    place: PairPlacement,
    grid: &Grid,
) -> DMatrix<f64> {
    let c = &sol.coefficients;
    let modes = |a: f64, l: f64, n: usize| -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = (1..=n).map(|k| grid.sine_mode(a, l, k)).collect();
        DMatrix::from_fn(grid.len(), n, |i, k| cols[k][i])
    };
    match place {
        PairPlacement::SamePiece { start, length } => {
            let phi = modes(start, length, c.nrows());
            &phi * c * phi.transpose()
        }
        PairPlacement::TwoPiece {
            left_start,
            left_length,
            right_start,
            right_length,
        } => {
            let pl = modes(left_start, left_length, c.nrows());
            let pr = modes(right_start, right_length, c.ncols());
            let d = &pl * c * pr.transpose();
            (&d - d.transpose()) * std::f64::consts::FRAC_1_SQRT_2
        }
    }
}

/// Densities of a numerical two-particle ground state.
pub fn pair_state_densities(
    sol: &TwoParticleSolution,
    place: PairPlacement,
    grid: &Arc<Grid>,
) -> Result<(DensityKernel, DensityKernel)> {
    let psi = pair_wavefunction(sol, place, grid);
    factorized_densities(grid, &[Component::Pair(psi)])
}

// ---------------------------------------------------------------------------
// Block-wise comparison of two product states on a decomposition.

/// A factor of the product state: a `P_2` chain or one `N_2` piece.
#[derive(Debug, Clone)]
struct Block {
    pieces: Vec<usize>,
    /// Owning chain when it is a `P_2` chain.
    chain: Option<usize>,
}

fn blocks(decomp: &ChainDecomposition) -> Vec<Block> {
    let mut out = Vec::new();
    for (c, ch) in decomp.chains.iter().enumerate() {
        if decomp.in_small[c] {
            out.push(Block {
                pieces: ch.pieces.clone(),
                chain: Some(c),
            });
        } else {
            out.extend(ch.pieces.iter().map(|&i| Block {
                pieces: vec![i],
                chain: None,
            }));
        }
    }
    out
}

/// Block state in the block's sine basis (pieces stacked in order).
enum Local {
    Empty,
    /// Occupied basis indices.
    Slater(Vec<usize>),
    /// Antisymmetric coefficients, Frobenius norm 1.
    Pair(DMatrix<f64>),
}

impl Local {
    fn one_density(&self, dim: usize) -> DMatrix<f64> {
        match self {
            Local::Empty => DMatrix::zeros(dim, dim),
            Local::Slater(idx) => {
                let mut a = DMatrix::zeros(dim, dim);
                for &i in idx {
                    a[(i, i)] = 1.0;
                }
                a
            }
            Local::Pair(c) => c * c.transpose() * 2.0,
        }
    }

    /// Orthonormal vectors `v_k` with `gamma2 = sum_k v_k v_k^T` on `R^{dim^2}`.
    fn two_density_range(&self, dim: usize) -> Vec<DVector<f64>> {
        match self {
            Local::Empty => vec![],
            Local::Slater(idx) => {
                let mut out = Vec::new();
                for (k, &a) in idx.iter().enumerate() {
                    for &b in &idx[k + 1..] {
                        let mut v = DVector::zeros(dim * dim);
                        v[a * dim + b] = std::f64::consts::FRAC_1_SQRT_2;
                        v[b * dim + a] = -std::f64::consts::FRAC_1_SQRT_2;
                        out.push(v);
                    }
                }
                out
            }
            Local::Pair(c) => vec![DVector::from_column_slice(c.transpose().as_slice())],
        }
    }
}

fn pair_modes(engine: &LevelEngine, l: f64) -> usize {
    engine.cfg.modes.modes(l).max(4)
}

/// Basis size each piece of the block needs for occupation `q`.
fn needed_modes(
    decomp: &ChainDecomposition,
    engine: &LevelEngine,
    blk: &Block,
    q: &[usize],
) -> Vec<usize> {
    let total: usize = q.iter().sum();
    let interacting = blk.chain.is_some() && total == 2 && !engine.is_free();
    blk.pieces
        .iter()
        .zip(q)
        .map(|(&i, &qi)| {
            if interacting && qi > 0 {
                pair_modes(engine, decomp.piece_lengths[i])
            } else {
                qi
            }
        })
        .collect()
}

fn local_state(
    decomp: &ChainDecomposition,
    engine: &LevelEngine,
    blk: &Block,
    q: &[usize],
    dims: &[usize],
) -> Result<Local> {
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let dim: usize = dims.iter().sum();
    let total: usize = q.iter().sum();
    let occupied: Vec<usize> = (0..q.len()).filter(|&k| q[k] > 0).collect();
    let offs = &offsets;
    let lowest = || -> Local {
        Local::Slater(
            occupied
                .iter()
                .flat_map(|&k| (0..q[k]).map(move |j| offs[k] + j))
                .collect(),
        )
    };
    let Some(c) = blk.chain else {
        return Ok(if total == 0 { Local::Empty } else { lowest() });
    };
    match total {
        0 => Ok(Local::Empty),
        1 => Ok(lowest()),
        2 if engine.is_free() => Ok(lowest()),
        2 => {
            let ch = &decomp.chains[c];
            let u = &engine.potential;
            let mut psi = DMatrix::zeros(dim, dim);
            if occupied.len() == 1 {
                let k = occupied[0];
                let l = ch.lengths[k];
                let sol = solve_same_piece_pair(l, u, pair_modes(engine, l), &engine.cfg)?;
                let o = offsets[k];
                let n = sol.coefficients.nrows();
                psi.view_mut((o, o), (n, n)).copy_from(&sol.coefficients);
            } else {
                let (a, b) = (occupied[0], occupied[1]);
                let d = ch.distance(a, b);
                if d > u.range() {
                    return Ok(lowest());
                }
                let (la, lb) = (ch.lengths[a], ch.lengths[b]);
                let sol = solve_two_piece(
                    la,
                    lb,
                    d,
                    u,
                    pair_modes(engine, la),
                    pair_modes(engine, lb),
                    &engine.cfg,
                )?;
                let s = std::f64::consts::FRAC_1_SQRT_2;
                let cm = &sol.coefficients * s;
                let (oa, ob) = (offsets[a], offsets[b]);
                psi.view_mut((oa, ob), (cm.nrows(), cm.ncols()))
                    .copy_from(&cm);
                psi.view_mut((ob, oa), (cm.ncols(), cm.nrows()))
                    .copy_from(&(-cm.transpose()));
            }
            Ok(Local::Pair(psi))
        }
        _ => Err(Error::invalid(
            "densities of chains with more than two particles are not available",
        )),
    }
}

fn nuclear_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().map(|v| v.abs()).sum()
}

/// `|| V_a V_a^T - V_b V_b^T ||_tr` through an orthonormal basis of the joint range.
fn low_rank_distance(va: &[DVector<f64>], vb: &[DVector<f64>]) -> f64 {
    if va.is_empty() && vb.is_empty() {
        return 0.0;
    }
    let cols: Vec<DVector<f64>> = va.iter().chain(vb).cloned().collect();
    let v = DMatrix::from_columns(&cols);
    let svd = v.svd(true, false);
    let u = svd.u.expect("left vectors");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * smax)
        .collect();
    let q = u.select_columns(keep.iter());
    let proj = |vs: &[DVector<f64>]| -> DMatrix<f64> {
        if vs.is_empty() {
            return DMatrix::zeros(q.ncols(), q.ncols());
        }
        let c = q.transpose() * DMatrix::from_columns(vs);
        &c * c.transpose()
    };
    nuclear_sym(&(proj(va) - proj(vb)))
}

/// Truncated one-densities of a changed block in a shared compressed basis.
struct Compressed {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    dropped_a: f64,
    dropped_b: f64,
}

fn compress(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Compressed {
    let keep = |m: &DMatrix<f64>| -> (Vec<DVector<f64>>, f64) {
        let e = SymmetricEigen::new(m.clone());
        let mut vs = Vec::new();
        let mut dropped = 0.0;
        for (k, &lam) in e.eigenvalues.iter().enumerate() {
            if lam.abs() > TRUNC {
                vs.push(e.eigenvectors.column(k).into_owned());
            } else {
                dropped += lam.abs();
            }
        }
        (vs, dropped)
    };
    let (va, dropped_a) = keep(a);
    let (vb, dropped_b) = keep(b);
    let cols: Vec<DVector<f64>> = va.iter().chain(&vb).cloned().collect();
    if cols.is_empty() {
        return Compressed {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 0),
            dropped_a,
            dropped_b,
        };
    }
    let svd = DMatrix::from_columns(&cols).svd(true, false);
    let u = svd.u.expect("left vectors");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * smax)
        .collect();
    let q = u.select_columns(keep.iter());
    Compressed {
        a: q.transpose() * a * &q,
        b: q.transpose() * b * &q,
        dropped_a,
        dropped_b,
    }
}

/// Trace-norm gaps between the reduced densities of two product states.
#[derive(Debug, Clone, Serialize)]
pub struct DensityGap {
    pub n: usize,
    pub blocks: usize,
    pub changed_blocks: usize,
    /// Particles of the first state sitting in changed blocks (max of the two states per block).
    pub outside_common: usize,
    pub trace_norm_1: f64,
    pub trace_norm_2: f64,
    /// `trace_norm_1 / n`.
    pub scaled_1: f64,
    /// `trace_norm_2 / n^2`.
    pub scaled_2: f64,
    /// Upper bound on the error from dropping tiny natural occupations.
    pub truncation_bound: f64,
}

struct BlockDiff {
    qa: usize,
    qb: usize,
    one: f64,
    two: f64,
    comp: Compressed,
}

/// Compare the product states of two occupations of `decomp`: interacting
/// pair ground states on `P_2` chains with two particles, Slater states of
/// the lowest modes elsewhere.
pub fn compare_occupations(
    decomp: &ChainDecomposition,
    engine: &LevelEngine,
    a: &Occupation,
    b: &Occupation,
) -> Result<DensityGap> {
    let m = decomp.piece_lengths.len();
    if a.counts.len() != m || b.counts.len() != m {
        return Err(Error::invalid("occupations do not match the decomposition"));
    }
    if a.total != b.total {
        return Err(Error::invalid(
            "occupations carry different particle numbers",
        ));
    }
    let blks = blocks(decomp);
    let changed: Vec<&Block> = blks
        .iter()
        .filter(|blk| blk.pieces.iter().any(|&i| a.counts[i] != b.counts[i]))
        .collect();
    let diffs: Vec<BlockDiff> = changed
        .par_iter()
        .map(|blk| {
            let qa: Vec<usize> = blk.pieces.iter().map(|&i| a.counts[i]).collect();
            let qb: Vec<usize> = blk.pieces.iter().map(|&i| b.counts[i]).collect();
            let na = needed_modes(decomp, engine, blk, &qa);
            let nb = needed_modes(decomp, engine, blk, &qb);
            let dims: Vec<usize> = na.iter().zip(&nb).map(|(x, y)| *x.max(y)).collect();
            let dim: usize = dims.iter().sum();
            let sa = local_state(decomp, engine, blk, &qa, &dims)?;
            let sb = local_state(decomp, engine, blk, &qb, &dims)?;
            let (ga, gb) = (sa.one_density(dim), sb.one_density(dim));
            let one = nuclear_sym(&(&ga - &gb));
            let two = low_rank_distance(&sa.two_density_range(dim), &sb.two_density_range(dim));
            Ok(BlockDiff {
                qa: qa.iter().sum(),
                qb: qb.iter().sum(),
                one,
                two,
                comp: compress(&ga, &gb),
            })
        })
        .collect::<Result<_>>()?;
    let changed_a: usize = diffs.iter().map(|d| d.qa).sum();
    // particles in unchanged blocks; identical in both states
    let common = a.total - changed_a;
    let trace_norm_1: f64 = diffs.iter().map(|d| d.one).sum();
    let mut trace_norm_2: f64 = diffs.iter().map(|d| d.two + d.one * common as f64).sum();
    let mut bound = 0.0;
    let pairs: Vec<(usize, usize)> = (0..diffs.len())
        .flat_map(|i| (i + 1..diffs.len()).map(move |j| (i, j)))
        .collect();
    let cross: f64 = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (x, y) = (&diffs[i].comp, &diffs[j].comp);
            nuclear_sym(&(x.a.kronecker(&y.a) - x.b.kronecker(&y.b)))
        })
        .sum();
    trace_norm_2 += cross;
    for &(i, j) in &pairs {
        let (x, y) = (&diffs[i], &diffs[j]);
        bound += x.comp.dropped_a * y.qa as f64 + y.comp.dropped_a * x.qa as f64;
        bound += x.comp.dropped_b * y.qb as f64 + y.comp.dropped_b * x.qb as f64;
    }
    let n = a.total;
    let nf = (n as f64).max(1.0);
    Ok(DensityGap {
        n,
        blocks: blks.len(),
        changed_blocks: diffs.len(),
        outside_common: diffs.iter().map(|d| d.qa.max(d.qb)).sum(),
        trace_norm_1,
        trace_norm_2,
        scaled_1: trace_norm_1 / nf,
        scaled_2: trace_norm_2 / (nf * nf),
        truncation_bound: bound,
    })
}

/// Grid components of the product state of `occ` (for small instances).
pub fn occupation_components(
    decomp: &ChainDecomposition,
    engine: &LevelEngine,
    occ: &Occupation,
    starts: &[f64],
    grid: &Grid,
) -> Result<Vec<Component>> {
    if starts.len() != decomp.piece_lengths.len() {
        return Err(Error::invalid("one start per piece"));
    }
    let mut out = Vec::new();
    for blk in blocks(decomp) {
        let q: Vec<usize> = blk.pieces.iter().map(|&i| occ.counts[i]).collect();
        let dims = needed_modes(decomp, engine, &blk, &q);
        let basis: Vec<Vec<f64>> = blk
            .pieces
            .iter()
            .zip(&dims)
            .flat_map(|(&i, &d)| (1..=d).map(move |k| (i, k)))
            .map(|(i, k)| grid.sine_mode(starts[i], decomp.piece_lengths[i], k))
            .collect();
        match local_state(decomp, engine, &blk, &q, &dims)? {
            Local::Empty => {}
            Local::Slater(idx) => out.push(Component::Slater(
                idx.iter().map(|&k| basis[k].clone()).collect(),
            )),
            Local::Pair(c) => {
                let phi = DMatrix::from_fn(grid.len(), basis.len(), |x, k| basis[k][x]);
                out.push(Component::Pair(&phi * c * phi.transpose()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(iv: &[(f64, f64)], per: f64) -> Arc<Grid> {
        Arc::new(Grid::midpoint(iv, per).unwrap())
    }

    #[test]
    fn midpoint_sines_are_orthonormal() {
        let g = grid(&[(0.0, 2.0)], 20.0);
        let orbs: Vec<_> = (1..=6).map(|k| g.sine_mode(0.0, 2.0, k)).collect();
        let k = slater_one_density(&orbs, &g).unwrap();
        assert!((k.trace - 6.0).abs() < 1e-12);
        let ev = k.matrix.symmetric_eigenvalues();
        assert_eq!(ev.iter().filter(|v| (*v - 1.0).abs() < 1e-10).count(), 6);
    }

    #[test]
    fn non_orthonormal_rejected() {
        let g = grid(&[(0.0, 1.0)], 20.0);
        let o = g.sine_mode(0.0, 1.0, 1);
        assert!(slater_one_density(&[o.clone(), o], &g).is_err());
        assert!(Grid::midpoint(&[(0.0, 1.0)], 10.0).is_err());
    }

    #[test]
    fn orthogonal_projectors_at_distance_two() {
        let g = grid(&[(0.0, 1.0)], 20.0);
        let a = slater_one_density(&[g.sine_mode(0.0, 1.0, 1)], &g).unwrap();
        let b = slater_one_density(&[g.sine_mode(0.0, 1.0, 2)], &g).unwrap();
        assert!((trace_norm_distance(&a, &b).unwrap() - 2.0).abs() < 1e-10);
        assert!(trace_norm_distance(&a, &a).unwrap() < 1e-12);
    }

    #[test]
    fn permutation_signs() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p.iter().map(|x| x.1).sum::<f64>(), 0.0);
    }
}
