//! Sine-basis Galerkin operators for two particles and their ground state.
//!
//! The interaction is never assembled. Its matrix is a sum over quadrature
//! nodes of rank-one terms, `V = sum_k w_k U(r_k) chi_k chi_k^T`, and is
//! applied through dense products with the basis values at the nodes.
//!
//! The ground state is computed with a Schur-complement fixed point on the
//! lowest free state `e0`:
//!
//! ```text
//! E = D_0 + V_00 - v^T (H' - E)^{-1} v,     v = P' V e0
//! ```
//!
//! solved by Newton on `E` with preconditioned CG for the inner system. The
//! shift `E - D_0 = V_00 - v^T x` comes out as a difference of small numbers
//! rather than of two energies, so corrections of order `l^{-6}` keep their
//! relative precision. When `D_0 + V_00` does not sit below the rest of the
//! free spectrum the solver falls back to dense diagonalization.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::potential::Potential;
use crate::error::{Error, Result};
use crate::quad::GlRule;

/// How many Gauss-Legendre nodes to spend on an interval, given the total
/// phase (in radians) that the integrand sweeps across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeRule {
    pub phase_density: f64,
    pub base: usize,
    pub max_panel: usize,
}

impl Default for NodeRule {
    fn default() -> Self {
        NodeRule {
            phase_density: 0.66,
            base: 10,
            max_panel: 64,
        }
    }
}

fn gl(n: usize) -> &'static GlRule {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static GlRule>>> = OnceLock::new();
    let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
    map.entry(n)
        .or_insert_with(|| Box::leak(Box::new(GlRule::new(n))))
}

impl NodeRule {
    pub fn refined(&self, factor: f64) -> Self {
        NodeRule {
            phase_density: self.phase_density * factor,
            base: ((self.base as f64) * factor).ceil() as usize,
            max_panel: self.max_panel,
        }
    }

    /// Append nodes for [a, b]; `phase` is the integrand's phase span there.
    pub fn nodes(&self, a: f64, b: f64, phase: f64, out: &mut Vec<(f64, f64)>) {
        if !(b > a) {
            return;
        }
        let need = (self.phase_density * phase).ceil() as usize + self.base;
        let panels = need.div_ceil(self.max_panel);
        let per = need.div_ceil(panels);
        let rule = gl(per);
        let h = (b - a) / panels as f64;
        for k in 0..panels {
            let lo = a + k as f64 * h;
            let hi = if k + 1 == panels { b } else { lo + h };
            out.extend(rule.on(lo, hi));
        }
    }
}

/// `sqrt(2/len) sin(p pi s / len)` for p = 1..=n.
#[inline]
fn sine_row(len: f64, n: usize, s: f64, out: &mut [f64]) {
    let norm = (2.0 / len).sqrt();
    let k = PI * s / len;
    for (p, o) in out.iter_mut().enumerate().take(n) {
        *o = norm * (k * (p + 1) as f64).sin();
    }
}

/// Two-particle Hamiltonian in some orthonormal basis: free part diagonal,
/// interaction applied matrix-free.
pub trait PairOperator: Sync {
    fn dim(&self) -> usize;
    fn free_diag(&self) -> &[f64];
    fn apply_v(&self, x: &[f64]) -> Vec<f64>;
    /// False when every interaction element is exactly zero.
    fn interacts(&self) -> bool;
}

/// Antisymmetric pairs `phi_p ^ phi_q`, p < q, on one piece `[0, l]`.
pub struct SamePieceOp {
    pub l: f64,
    pub n: usize,
    pairs: Vec<(usize, usize)>,
    free: Vec<f64>,
    /// Basis values at the x nodes, `n x n_x` (column i = node i).
    at: DMatrix<f64>,
    node_x: Vec<usize>,
    node_w: Vec<f64>,
    /// Basis values at y = x + r, `n` per node.
    node_phi: Vec<f64>,
}

impl SamePieceOp {
    pub fn new(l: f64, n: usize, u: &Potential, rule: &NodeRule) -> Self {
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        let mut free = Vec::with_capacity(n * (n - 1) / 2);
        for p in 0..n {
            for q in p + 1..n {
                pairs.push((p, q));
                let (a, b) = ((p + 1) as f64, (q + 1) as f64);
                free.push(PI * PI * (a * a + b * b) / (l * l));
            }
        }
        let mut xs = Vec::new();
        let mut node_x = Vec::new();
        let mut node_w = Vec::new();
        let mut node_phi = Vec::new();
        if !u.is_zero() {
            let kmax = n as f64 * PI / l;
            let m = u.range().min(l);
            let mut cuts = vec![0.0];
            if l - m > 0.0 {
                cuts.push(l - m);
            }
            cuts.push(l);
            let mut xn = Vec::new();
            for w in cuts.windows(2) {
                rule.nodes(w[0], w[1], 4.0 * kmax * (w[1] - w[0]), &mut xn);
            }
            let breaks = u.breakpoints();
            let mut rn = Vec::new();
            let mut row = vec![0.0; n];
            for &(x, wx) in &xn {
                let r_hi = m.min(l - x);
                if !(r_hi > 0.0) {
                    continue;
                }
                rn.clear();
                let mut lo = 0.0;
                for &b in breaks
                    .iter()
                    .filter(|&&b| b < r_hi)
                    .chain(std::iter::once(&r_hi))
                {
                    rule.nodes(lo, b, 2.0 * kmax * (b - lo), &mut rn);
                    lo = b;
                }
                let ix = xs.len();
                let mut used = false;
                for &(r, wr) in &rn {
                    let w = wx * wr * u.eval(r);
                    if w == 0.0 {
                        continue;
                    }
                    used = true;
                    sine_row(l, n, x + r, &mut row);
                    node_x.push(ix);
                    node_w.push(w);
                    node_phi.extend_from_slice(&row);
                }
                if used {
                    xs.push(x);
                }
            }
        }
        let mut at = DMatrix::zeros(n, xs.len());
        let mut row = vec![0.0; n];
        for (i, &x) in xs.iter().enumerate() {
            sine_row(l, n, x, &mut row);
            at.column_mut(i).copy_from_slice(&row);
        }
        SamePieceOp {
            l,
            n,
            pairs,
            free,
            at,
            node_x,
            node_w,
            node_phi,
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Antisymmetric coefficient matrix `C` with `psi(x,y) = sum C_pq phi_p(x) phi_q(y)`.
    pub fn to_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut c = DMatrix::zeros(self.n, self.n);
        for (k, &(p, q)) in self.pairs.iter().enumerate() {
            c[(p, q)] = x[k] * s;
            c[(q, p)] = -x[k] * s;
        }
        c
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.node_w.len()
    }
}

impl PairOperator for SamePieceOp {
    fn dim(&self) -> usize {
        self.pairs.len()
    }

    fn free_diag(&self) -> &[f64] {
        &self.free
    }

    fn interacts(&self) -> bool {
        !self.node_w.is_empty()
    }

    fn apply_v(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; self.pairs.len()];
        if self.node_w.is_empty() {
            return out;
        }
        let c = self.to_matrix(x);
        // column i of ac_t is row i of A C
        let ac_t = c.transpose() * &self.at;
        let mut z_t = DMatrix::zeros(n, self.at.ncols());
        for (k, (&ix, &w)) in self.node_x.iter().zip(&self.node_w).enumerate() {
            let phi = &self.node_phi[k * n..(k + 1) * n];
            let col = ac_t.column(ix);
            let psi: f64 = col.iter().zip(phi).map(|(a, b)| a * b).sum();
            let g = w * psi;
            let mut zc = z_t.column_mut(ix);
            for (zv, &b) in zc.iter_mut().zip(phi) {
                *zv += g * b;
            }
        }
        // integration ran over y > x only; antisymmetry restores the rest
        let g = &self.at * z_t.transpose();
        let s2 = std::f64::consts::SQRT_2;
        for (k, &(p, q)) in self.pairs.iter().enumerate() {
            out[k] = s2 * (g[(p, q)] - g[(q, p)]);
        }
        out
    }
}

/// Product basis `phi_p^left (x) phi_q^right` on `[-l_left, 0] x [d, d + l_right]`.
pub struct TwoPieceOp {
    pub l_left: f64,
    pub l_right: f64,
    pub d: f64,
    pub n_left: usize,
    pub n_right: usize,
    free: Vec<f64>,
    /// Left basis values at the nodes, `nodes x n_left`.
    a: DMatrix<f64>,
    /// Right basis values at the nodes, `nodes x n_right`.
    b: DMatrix<f64>,
    w: Vec<f64>,
}

impl TwoPieceOp {
    pub fn new(
        l_left: f64,
        l_right: f64,
        d: f64,
        n_left: usize,
        n_right: usize,
        u: &Potential,
        rule: &NodeRule,
    ) -> Self {
        let mut free = Vec::with_capacity(n_left * n_right);
        for p in 1..=n_left {
            for q in 1..=n_right {
                let (a, b) = (p as f64 / l_left, q as f64 / l_right);
                free.push(PI * PI * (a * a + b * b));
            }
        }
        let mut s_nodes: Vec<(f64, f64, f64)> = Vec::new(); // (s, t, weight)
        let reach = u.range() - d;
        if !u.is_zero() && reach > 0.0 {
            let k = PI * (n_left as f64 / l_left + n_right as f64 / l_right);
            let top = reach.min(l_left + l_right);
            let mut cuts = vec![0.0];
            cuts.extend(
                u.breakpoints()
                    .iter()
                    .map(|b| b - d)
                    .filter(|&b| b > 0.0 && b < top),
            );
            cuts.push(top);
            let mut rn = Vec::new();
            for w in cuts.windows(2) {
                rule.nodes(w[0], w[1], 2.0 * k * (w[1] - w[0]), &mut rn);
            }
            let mut sn = Vec::new();
            for &(rho, wr) in &rn {
                let uu = u.eval(d + rho);
                if uu == 0.0 {
                    continue;
                }
                let lo = (rho - l_right).max(0.0);
                let hi = rho.min(l_left);
                sn.clear();
                rule.nodes(lo, hi, 2.0 * k * (hi - lo), &mut sn);
                for &(s, ws) in &sn {
                    s_nodes.push((s, rho - s, wr * ws * uu));
                }
            }
        }
        let m = s_nodes.len();
        let mut a = DMatrix::zeros(m, n_left);
        let mut b = DMatrix::zeros(m, n_right);
        let mut w = Vec::with_capacity(m);
        let mut ra = vec![0.0; n_left];
        let mut rb = vec![0.0; n_right];
        for (k, &(s, t, wk)) in s_nodes.iter().enumerate() {
            // phi_p(-s) on [-l_left, 0] equals (-1)^{p+1} sqrt(2/l) sin(p pi s / l)
            sine_row(l_left, n_left, s, &mut ra);
            for (p, v) in ra.iter().enumerate() {
                a[(k, p)] = if p % 2 == 0 { *v } else { -*v };
            }
            sine_row(l_right, n_right, t, &mut rb);
            for (q, v) in rb.iter().enumerate() {
                b[(k, q)] = *v;
            }
            w.push(wk);
        }
        TwoPieceOp {
            l_left,
            l_right,
            d,
            n_left,
            n_right,
            free,
            a,
            b,
            w,
        }
    }

    pub fn to_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_left, self.n_right, x)
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.w.len()
    }
}

impl PairOperator for TwoPieceOp {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn free_diag(&self) -> &[f64] {
        &self.free
    }

    fn interacts(&self) -> bool {
        !self.w.is_empty()
    }

    fn apply_v(&self, x: &[f64]) -> Vec<f64> {
        if self.w.is_empty() {
            return vec![0.0; x.len()];
        }
        let c = self.to_matrix(x);
        let ac = &self.a * c;
        let mut bg = self.b.clone();
        for k in 0..self.w.len() {
            let psi: f64 = ac
                .row(k)
                .iter()
                .zip(self.b.row(k).iter())
                .map(|(p, q)| p * q)
                .sum();
            let g = self.w[k] * psi;
            bg.row_mut(k).scale_mut(g);
        }
        let g = self.a.tr_mul(&bg);
        let mut out = vec![0.0; x.len()];
        for p in 0..self.n_left {
            for q in 0..self.n_right {
                out[p * self.n_right + q] = g[(p, q)];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Free,
    Schur,
    Dense,
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub energy: f64,
    pub free_energy: f64,
    /// `energy - free_energy`, computed without cancellation.
    pub shift: f64,
    pub vector: Vec<f64>,
    /// `|H psi - E psi| / (E |psi|)`.
    pub residual: f64,
    pub method: SolveMethod,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn relative_residual(op: &dyn PairOperator, psi: &[f64], e: f64) -> f64 {
    let vpsi = op.apply_v(psi);
    let r: Vec<f64> = psi
        .iter()
        .zip(op.free_diag())
        .zip(&vpsi)
        .map(|((c, d), v)| d * c + v - e * c)
        .collect();
    norm(&r) / (e.abs() * norm(psi))
}

/// PCG for `P (D - E + V) P x = v` on the complement of `skip`.
fn pcg(op: &dyn PairOperator, e: f64, skip: usize, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = rhs.len();
    let d = op.free_diag();
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y = op.apply_v(x);
        for i in 0..n {
            y[i] += (d[i] - e) * x[i];
        }
        y[skip] = 0.0;
        y
    };
    let precond = |r: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| if i == skip { 0.0 } else { r[i] / (d[i] - e) })
            .collect()
    };
    let bnorm = norm(rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = rhs.to_vec();
    r[skip] = 0.0;
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iter = 20 * (n as f64).sqrt() as usize + 400;
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::numerical(
                "conjugate gradients lost positivity",
                norm(&r) / bnorm,
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * bnorm {
            return Ok(x);
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::numerical(
        "conjugate gradients did not converge",
        norm(&r) / bnorm,
    ))
}

/// Lowest eigenpair by dense diagonalization (assembles `dim` columns).
pub fn dense_ground(op: &dyn PairOperator) -> Result<GroundState> {
    let n = op.dim();
    let d = op.free_diag();
    let mut h = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply_v(&e);
        e[j] = 0.0;
        for i in 0..n {
            h[(i, j)] = col[i];
        }
        h[(j, j)] += d[j];
    }
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let (k, &energy) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::numerical("empty basis", f64::NAN))?;
    let mut vector: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let i0 = argmin(d);
    if vector[i0] < 0.0 {
        vector.iter_mut().for_each(|v| *v = -*v);
    }
    let residual = relative_residual(op, &vector, energy);
    Ok(GroundState {
        energy,
        free_energy: d[i0],
        shift: energy - d[i0],
        vector,
        residual,
        method: SolveMethod::Dense,
    })
}

fn argmin(d: &[f64]) -> usize {
    d.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Ground state via the Schur fixed point, dense fallback for small bases.
pub fn ground_state(op: &dyn PairOperator, tol: f64, dense_limit: usize) -> Result<GroundState> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::invalid("empty basis"));
    }
    let d = op.free_diag();
    let i0 = argmin(d);
    let d0 = d[i0];
    let mut e0 = vec![0.0; n];
    e0[i0] = 1.0;
    if !op.interacts() {
        return Ok(GroundState {
            energy: d0,
            free_energy: d0,
            shift: 0.0,
            vector: e0,
            residual: 0.0,
            method: SolveMethod::Free,
        });
    }
    let mut v = op.apply_v(&e0);
    let v00 = v[i0];
    v[i0] = 0.0;
    let h00 = d0 + v00;
    let second = d
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != i0)
        .map(|(_, &x)| x)
        .fold(f64::INFINITY, f64::min);
    if !(h00 < second) {
        if n <= dense_limit {
            return dense_ground(op);
        }
        return Err(Error::numerical(
            "ground level not separated from the free spectrum and basis too large for dense fallback",
            h00 - second,
        ));
    }
    let inner_tol = tol.min(1e-8);
    let mut e = h00;
    let mut x = vec![0.0; n];
    let mut converged = false;
    for _ in 0..40 {
        x = pcg(op, e, i0, &v, inner_tol)?;
        let phi = dot(&v, &x);
        let g = e - h00 + phi;
        let step = g / (1.0 + dot(&x, &x));
        e -= step;
        if step.abs() <= tol * (v00 - phi).abs() + 4.0 * f64::EPSILON * e.abs() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numerical(
            "Schur fixed point did not converge",
            f64::NAN,
        ));
    }
    x = pcg(op, e, i0, &v, inner_tol)?;
    let shift = v00 - dot(&v, &x);
    let energy = d0 + shift;
    let mut psi: Vec<f64> = x.iter().map(|xi| -xi).collect();
    psi[i0] = 1.0;
    let nn = norm(&psi);
    psi.iter_mut().for_each(|c| *c /= nn);
    let residual = relative_residual(op, &psi, energy);
    if !(residual <= 1e3 * tol) {
        return Err(Error::numerical("two-particle eigen-solve", residual));
    }
    Ok(GroundState {
        energy,
        free_energy: d0,
        shift,
        vector: psi,
        residual,
        method: SolveMethod::Schur,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step() -> Potential {
        Potential::step(1.0, 1.0).unwrap()
    }

    #[test]
    fn schur_matches_dense_same_piece() {
        let op = SamePieceOp::new(6.0, 12, &step(), &NodeRule::default());
        let a = ground_state(&op, 1e-12, 0).unwrap();
        let b = dense_ground(&op).unwrap();
        assert_eq!(a.method, SolveMethod::Schur);
        assert!(
            (a.energy - b.energy).abs() <= 1e-11 * b.energy,
            "{} {}",
            a.energy,
            b.energy
        );
        let overlap = dot(&a.vector, &b.vector).abs();
        assert!((overlap - 1.0).abs() < 1e-9);
    }

    #[test]
    fn schur_matches_dense_two_pieces() {
        let op = TwoPieceOp::new(5.0, 4.0, 0.3, 10, 9, &step(), &NodeRule::default());
        let a = ground_state(&op, 1e-12, 0).unwrap();
        let b = dense_ground(&op).unwrap();
        assert!((a.energy - b.energy).abs() <= 1e-11 * b.energy);
        assert!(a.shift > 0.0);
    }

    #[test]
    fn operator_is_symmetric() {
        let op = SamePieceOp::new(4.0, 7, &step(), &NodeRule::default());
        let n = op.dim();
        let mut ei = vec![0.0; n];
        let mut ej = vec![0.0; n];
        for i in 0..n {
            ei[i] = 1.0;
            let vi = op.apply_v(&ei);
            for j in 0..n {
                ej[j] = 1.0;
                let vj = op.apply_v(&ej);
                assert!((vi[j] - vj[i]).abs() < 1e-13);
                ej[j] = 0.0;
            }
            ei[i] = 0.0;
        }
    }

    #[test]
    fn refinement_does_not_move_elements() {
        let u = step();
        let coarse = SamePieceOp::new(9.0, 10, &u, &NodeRule::default());
        let fine = SamePieceOp::new(9.0, 10, &u, &NodeRule::default().refined(2.0));
        let x: Vec<f64> = (0..coarse.dim())
            .map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0)
            .collect();
        let a = coarse.apply_v(&x);
        let b = fine.apply_v(&x);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12, "{p} {q}");
        }
    }
}
