//! Energy levels of chains.
//!
//! `F(I, k)` is the lowest energy of `k` particles in chain `I`, minimized
//! over how they split between the member pieces; `f(I, k) = F(I, k) -
//! F(I, k-1)`. Splits with at most two particles are solved exactly; larger
//! ones use free energy plus first-order interaction and are flagged.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    free_energy, interaction_element, solve_same_piece_pair, solve_two_piece, Geometry, Potential,
    SolverConfig,
};
use crate::chains::{Chain, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainLevels {
    /// `F(I, k)` for `k = 0..=kappa_max`.
    pub totals: Vec<f64>,
    /// `f(I, k)` for `k = 1..=kappa_max` (index `k - 1`).
    pub levels: Vec<f64>,
    /// Minimizing per-member split for each `k = 0..=kappa_max`.
    pub splits: Vec<Vec<usize>>,
    /// Per level: true when it came from the perturbative estimate.
    pub approximate: Vec<bool>,
}

/// Barycentric interpolant on Chebyshev points of the second kind.
#[derive(Debug, Clone)]
struct ChebTable {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    values: Vec<f64>,
}

impl ChebTable {
    fn nodes(lo: f64, hi: f64, m: usize) -> Vec<f64> {
        (0..m)
            .map(|j| {
                let c = (PI * j as f64 / (m - 1) as f64).cos();
                0.5 * (lo + hi) - 0.5 * (hi - lo) * c
            })
            .collect()
    }

    fn new(nodes: Vec<f64>, values: Vec<f64>) -> Self {
        let m = nodes.len();
        let weights = (0..m)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == m - 1 {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        ChebTable {
            nodes,
            weights,
            values,
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&xj, &wj), &fj) in self.nodes.iter().zip(&self.weights).zip(&self.values) {
            let dx = x - xj;
            if dx == 0.0 {
                return fj;
            }
            let t = wj / dx;
            num += t * fj;
            den += t;
        }
        num / den
    }
}

/// Chain level evaluation for one potential and one set of thresholds.
///
/// Single-piece pair energies are used thousands of times per
/// configuration, always for lengths in `[l_min, 3 l_min)`; there the
/// smooth scaled shift `l^3 (E - 5 pi^2 / l^2)` is tabulated once at a
/// fixed mode count. Everything else is solved on demand.
#[derive(Debug, Clone)]
pub struct LevelEngine {
    pub potential: Potential,
    pub cfg: SolverConfig,
    pub params: ModelParams,
    table: Option<(f64, f64, ChebTable)>,
}

impl LevelEngine {
    pub fn new(potential: Potential, cfg: SolverConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        let mut engine = LevelEngine {
            potential,
            cfg,
            params,
            table: None,
        };
        if let (Some(m), false) = (engine.cfg.same_table, engine.potential.is_zero()) {
            if m < 2 {
                return Err(Error::invalid("table needs at least two nodes"));
            }
            let lo = params.minimal_length;
            let hi = 3.0 * lo;
            let n = engine.cfg.modes.modes(hi).max(4);
            let xs = ChebTable::nodes(lo, hi, m);
            let ys: Vec<f64> = xs
                .par_iter()
                .map(|&l| {
                    solve_same_piece_pair(l, &engine.potential, n, &engine.cfg)
                        .map(|s| s.shift * l.powi(3))
                })
                .collect::<Result<_>>()?;
            engine.table = Some((lo, hi, ChebTable::new(xs, ys)));
        }
        Ok(engine)
    }

    pub fn is_free(&self) -> bool {
        self.potential.is_zero()
    }

    /// Exact two-particle energy of `[0, l]` at the configured mode count.
    pub fn same_pair_exact(&self, l: f64) -> Result<f64> {
        if self.is_free() {
            return Ok(free_energy(l, 2));
        }
        let n = self.cfg.modes.modes(l).max(4);
        Ok(solve_same_piece_pair(l, &self.potential, n, &self.cfg)?.energy)
    }

    /// Two-particle energy of `[0, l]`, tabulated where possible.
    pub fn same_pair_energy(&self, l: f64) -> Result<f64> {
        if let Some((lo, hi, t)) = &self.table {
            if l >= *lo && l <= *hi {
                return Ok(5.0 * PI * PI / (l * l) + t.eval(l) / l.powi(3));
            }
        }
        self.same_pair_exact(l)
    }

    /// One particle in each piece, facing distance `d`.
    pub fn two_piece_energy(&self, l_left: f64, l_right: f64, d: f64) -> Result<f64> {
        if self.is_free() || d > self.potential.range() {
            return Ok(PI * PI / (l_left * l_left) + PI * PI / (l_right * l_right));
        }
        let m = &self.cfg.modes;
        Ok(solve_two_piece(
            l_left,
            l_right,
            d,
            &self.potential,
            m.modes(l_left),
            m.modes(l_right),
            &self.cfg,
        )?
        .energy)
    }

    /// Energy of a chain for a given per-member split.
    pub fn split_energy(&self, chain: &Chain, q: &[usize]) -> Result<(f64, bool)> {
        let total: usize = q.iter().sum();
        let occupied: Vec<usize> = (0..q.len()).filter(|&i| q[i] > 0).collect();
        match total {
            0 => Ok((0.0, false)),
            1 => {
                let l = chain.lengths[occupied[0]];
                Ok((PI * PI / (l * l), false))
            }
            2 if occupied.len() == 1 => {
                Ok((self.same_pair_energy(chain.lengths[occupied[0]])?, false))
            }
            2 => {
                let (i, j) = (occupied[0], occupied[1]);
                Ok((
                    self.two_piece_energy(
                        chain.lengths[i],
                        chain.lengths[j],
                        chain.distance(i, j),
                    )?,
                    false,
                ))
            }
            _ => {
                if !self.cfg.perturbative {
                    return Err(Error::invalid(
                        "more than two particles in a chain needs the perturbative estimate (solver.perturbative)",
                    ));
                }
                Ok((self.first_order(chain, q)?, true))
            }
        }
    }

    /// Free energy plus first-order interaction of the Slater state.
    fn first_order(&self, chain: &Chain, q: &[usize]) -> Result<f64> {
        let mut e: f64 = q
            .iter()
            .zip(&chain.lengths)
            .map(|(&k, &l)| free_energy(l, k))
            .sum();
        if self.is_free() {
            return Ok(e);
        }
        let tol = self.cfg.quad_tol;
        for (i, &qi) in q.iter().enumerate() {
            for a in 1..=qi {
                for b in a + 1..=qi {
                    let l = chain.lengths[i];
                    e += interaction_element(
                        &Geometry::SamePiece { l, p: a, q: b },
                        &self.potential,
                        tol,
                    )?;
                }
            }
            for j in i + 1..q.len() {
                let d = chain.distance(i, j);
                if qi == 0 || q[j] == 0 || d > self.potential.range() {
                    continue;
                }
                for a in 1..=qi {
                    for b in 1..=q[j] {
                        let g = Geometry::TwoPiece {
                            left: chain.lengths[i],
                            right: chain.lengths[j],
                            d,
                            p: a,
                            q: b,
                        };
                        e += interaction_element(&g, &self.potential, tol)?;
                    }
                }
            }
        }
        Ok(e)
    }

    /// `F(I, k)`: minimum over splits with member caps (or none).
    pub fn chain_total(
        &self,
        chain: &Chain,
        k: usize,
        capped: bool,
    ) -> Result<(f64, Vec<usize>, bool)> {
        let caps: Vec<usize> = if capped {
            chain.caps.clone()
        } else {
            vec![k; chain.size()]
        };
        let mut best: Option<(f64, Vec<usize>, bool)> = None;
        let mut q = vec![0; chain.size()];
        let mut err = None;
        for_each_split(&caps, k, &mut q, 0, &mut |q| {
            if err.is_some() {
                return;
            }
            match self.split_energy(chain, q) {
                Ok((e, approx)) => {
                    if best.as_ref().map_or(true, |b| e < b.0) {
                        best = Some((e, q.to_vec(), approx));
                    }
                }
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        best.ok_or(Error::Capacity {
            chain: 0,
            requested: k,
            cap: caps.iter().sum(),
        })
    }

    /// `F(I, k)` and `f(I, k)` for `k = 1..=kappa_max` under member caps.
    pub fn chain_levels(&self, chain: &Chain, kappa_max: usize) -> Result<ChainLevels> {
        if kappa_max > chain.cap() {
            return Err(Error::Capacity {
                chain: 0,
                requested: kappa_max,
                cap: chain.cap(),
            });
        }
        self.levels_to(chain, kappa_max, kappa_max)
    }

    /// Levels up to `kappa_max`, capped while `k <= capped_up_to` and
    /// ignoring member caps beyond.
    pub fn levels_to(
        &self,
        chain: &Chain,
        kappa_max: usize,
        capped_up_to: usize,
    ) -> Result<ChainLevels> {
        if kappa_max > 2 && !self.cfg.perturbative {
            return Err(Error::invalid(
                "kappa > 2 levels need the perturbative estimate (solver.perturbative)",
            ));
        }
        let mut out = ChainLevels {
            totals: vec![0.0],
            levels: vec![],
            splits: vec![vec![0; chain.size()]],
            approximate: vec![],
        };
        for k in 1..=kappa_max {
            let (e, split, approx) = self.chain_total(chain, k, k <= capped_up_to)?;
            out.levels.push(e - out.totals[k - 1]);
            out.totals.push(e);
            out.splits.push(split);
            out.approximate.push(approx);
        }
        Ok(out)
    }
}

/// Every `q` with `q[i] <= caps[i]` and `sum q = k`, in lexicographic order
/// of `q` read from the last member backwards.
fn for_each_split(
    caps: &[usize],
    k: usize,
    q: &mut [usize],
    i: usize,
    f: &mut dyn FnMut(&[usize]),
) {
    if i == caps.len() {
        if k == 0 {
            f(q);
        }
        return;
    }
    let rest: usize = caps[i + 1..].iter().sum();
    let lo = k.saturating_sub(rest);
    for v in lo..=caps[i].min(k) {
        q[i] = v;
        for_each_split(caps, k - v, q, i + 1, f);
    }
    q[i] = 0;
}

pub(crate) fn splits_of(caps: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut q = vec![0; caps.len()];
    for_each_split(caps, k, &mut q, 0, &mut |q| out.push(q.to_vec()));
    out
}
