//! Level pool, greedy filling and its brute-force oracle.
//!
//! Every chain of `P_p` contributes its first `p` levels to the pool. Levels
//! beyond the chain's capacity are kept (they count towards the pool size)
//! but marked inadmissible; the greedy never takes them.
//!
//! Pieces of `N_p` only receive free Dirichlet levels. Two fill policies
//! decide how those interleave with the pool:
//!
//! * [`FillPolicy::PoolFirst`] exhausts the admissible pool before touching
//!   `N_p`. This is the ground state restricted to `P_p` first.
//! * [`FillPolicy::Merged`] sorts pool entries and free `N_p` levels
//!   together, which is the exact minimizer over all admissible
//!   occupations.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::ChainDecomposition;
use crate::error::{Error, Result};
use crate::spectra::levels::splits_of;
use crate::spectra::{free_energy, ChainLevels, LevelEngine};

/// Values closer than this (relative) are ordered by position.
pub const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    PoolFirst,
    #[default]
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub chain: usize,
    pub kappa: usize,
    pub value: f64,
    /// `kappa <= cap` of the chain.
    pub admissible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelPool {
    pub p: usize,
    pub entries: Vec<PoolEntry>,
    /// Levels per chain; `None` for chains outside `P_p`.
    #[serde(skip)]
    pub chain_levels: Vec<Option<ChainLevels>>,
}

impl LevelPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn admissible(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.iter().filter(|e| e.admissible)
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }
}

/// Sort by value; runs within [`TIE_REL`] of their first element are then
/// ordered by `key`.
pub fn tie_sort<T, K: Ord>(items: &mut [T], value: impl Fn(&T) -> f64, key: impl Fn(&T) -> K) {
    items.sort_by(|a, b| {
        value(a)
            .total_cmp(&value(b))
            .then_with(|| key(a).cmp(&key(b)))
    });
    let mut start = 0;
    while start < items.len() {
        let v0 = value(&items[start]);
        let mut end = start + 1;
        while end < items.len() && (value(&items[end]) - v0).abs() <= TIE_REL * v0.abs() {
            end += 1;
        }
        items[start..end].sort_by_key(&key);
        start = end;
    }
}

/// Pool of the first `p = decomp.p` levels of every chain in `P_p`.
pub fn build_level_pool(decomp: &ChainDecomposition, engine: &LevelEngine) -> Result<LevelPool> {
    let p = decomp.p;
    let small: Vec<usize> = decomp.small_chains().collect();
    let levels: Vec<(usize, ChainLevels)> = small
        .par_iter()
        .map(|&c| {
            let ch = &decomp.chains[c];
            engine
                .levels_to(ch, p, ch.cap())
                .map(|lv| (c, lv))
                .map_err(|e| Error::InChain {
                    chain: c,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let mut chain_levels = vec![None; decomp.chains.len()];
    let mut entries = Vec::with_capacity(p * levels.len());
    for (c, lv) in levels {
        let cap = decomp.chains[c].cap();
        for (k, &value) in lv.levels.iter().enumerate() {
            entries.push(PoolEntry {
                chain: c,
                kappa: k + 1,
                value,
                admissible: k < cap,
            });
        }
        chain_levels[c] = Some(lv);
    }
    tie_sort(&mut entries, |e| e.value, |e| (e.chain, e.kappa));
    Ok(LevelPool {
        p,
        entries,
        chain_levels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// `kappa`-th particle of a `P_p` chain.
    Chain {
        chain: usize,
        kappa: usize,
        value: f64,
    },
    /// `k`-th free Dirichlet level of an `N_p` piece.
    Free { piece: usize, k: usize, value: f64 },
}

impl Placement {
    pub fn value(&self) -> f64 {
        match *self {
            Placement::Chain { value, .. } | Placement::Free { value, .. } => value,
        }
    }
}

fn free_placements(decomp: &ChainDecomposition) -> Vec<Placement> {
    let mut out = Vec::new();
    for i in decomp.leftover_pieces() {
        let l = decomp.piece_lengths[i];
        for k in 1..=decomp.caps[i] {
            let kk = k as f64;
            out.push(Placement::Free {
                piece: i,
                k,
                value: kk * kk * PI * PI / (l * l),
            });
        }
    }
    out
}

/// The order in which the greedy places particles; its first `n` items
/// form the greedy state with `n` particles.
pub fn placement_order(
    pool: &LevelPool,
    decomp: &ChainDecomposition,
    policy: FillPolicy,
) -> Vec<Placement> {
    let pos = |p: &Placement| match *p {
        Placement::Chain { chain, kappa, .. } => (decomp.chains[chain].first(), kappa),
        Placement::Free { piece, k, .. } => (piece, k),
    };
    let chain_part = pool.admissible().map(|e| Placement::Chain {
        chain: e.chain,
        kappa: e.kappa,
        value: e.value,
    });
    let mut free = free_placements(decomp);
    match policy {
        FillPolicy::PoolFirst => {
            tie_sort(&mut free, Placement::value, pos);
            chain_part.chain(free).collect()
        }
        FillPolicy::Merged => {
            let mut all: Vec<Placement> = chain_part.collect();
            all.append(&mut free);
            tie_sort(&mut all, Placement::value, pos);
            all
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupation {
    pub counts: Vec<usize>,
    pub total: usize,
}

impl Occupation {
    pub fn new(counts: Vec<usize>) -> Self {
        let total = counts.iter().sum();
        Occupation { counts, total }
    }

    /// Membership in the admissible set: `q_i <= cap_i`.
    pub fn is_admissible(&self, caps: &[usize]) -> bool {
        self.counts.len() == caps.len() && self.counts.iter().zip(caps).all(|(q, c)| q <= c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundStateEstimate {
    pub occupation: Occupation,
    /// Particles per chain.
    pub chain_kappa: Vec<usize>,
    /// Sum of the chain levels used.
    pub energy_p: f64,
    /// Free energy of the `N_p` occupants.
    pub energy_n: f64,
    pub energy: f64,
    pub particles_in_n: usize,
    pub levels_used: Vec<Placement>,
}

impl GroundStateEstimate {
    pub fn energy_per_particle(&self) -> f64 {
        self.energy / self.occupation.total as f64
    }
}

/// Place the first `n` items of [`placement_order`].
pub fn greedy_fill(
    pool: &LevelPool,
    n: usize,
    decomp: &ChainDecomposition,
    policy: FillPolicy,
) -> Result<GroundStateEstimate> {
    let order = placement_order(pool, decomp, policy);
    if n > order.len() {
        return Err(Error::Infeasible(format!(
            "{n} particles but total capacity is {}",
            order.len()
        )));
    }
    let mut kappa = vec![0usize; decomp.chains.len()];
    let mut counts = vec![0usize; decomp.piece_lengths.len()];
    let (mut energy_p, mut energy_n) = (0.0, 0.0);
    for pl in &order[..n] {
        match *pl {
            Placement::Chain {
                chain,
                kappa: k,
                value,
            } => {
                if k != kappa[chain] + 1 {
                    return Err(Error::InChain {
                        chain,
                        source: Box::new(Error::invalid(
                            "chain levels are not increasing; greedy order undefined",
                        )),
                    });
                }
                kappa[chain] = k;
                energy_p += value;
            }
            Placement::Free { piece, k, value } => {
                debug_assert_eq!(k, counts[piece] + 1);
                counts[piece] = k;
                energy_n += value;
            }
        }
    }
    let particles_in_n = counts.iter().sum();
    for (c, &k) in kappa.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let lv = pool.chain_levels[c]
            .as_ref()
            .expect("levels for pool chains");
        for (&piece, &q) in decomp.chains[c].pieces.iter().zip(&lv.splits[k]) {
            counts[piece] = q;
        }
    }
    Ok(GroundStateEstimate {
        occupation: Occupation::new(counts),
        chain_kappa: kappa,
        energy_p,
        energy_n,
        energy: energy_p + energy_n,
        particles_in_n,
        levels_used: order[..n].to_vec(),
    })
}

pub const BRUTE_MAX_PIECES: usize = 8;
pub const BRUTE_MAX_CAPS: usize = 12;

/// Exhaustive minimum of `sum_I E(I, q|_I) + sum_{N_p} E0(l_i, q_i)` over
/// admissible `q` with `|q| = n`.
///
/// With `PoolFirst` the search is restricted to occupations putting
/// `min(n, capacity of P_p)` particles on `P_p`, the family that policy
/// minimizes over.
pub fn brute_force_ground(
    decomp: &ChainDecomposition,
    engine: &LevelEngine,
    n: usize,
    policy: FillPolicy,
) -> Result<(Occupation, f64)> {
    let m = decomp.piece_lengths.len();
    let total_cap = decomp.total_cap();
    if m > BRUTE_MAX_PIECES || total_cap > BRUTE_MAX_CAPS {
        return Err(Error::TooLarge(format!(
            "{m} pieces, total capacity {total_cap} (limits {BRUTE_MAX_PIECES}, {BRUTE_MAX_CAPS})"
        )));
    }
    if n > total_cap {
        return Err(Error::Infeasible(format!(
            "{n} particles but total capacity is {total_cap}"
        )));
    }
    let p_cap: usize = decomp.small_chains().map(|c| decomp.chains[c].cap()).sum();
    let want_p = n.min(p_cap);
    let mut in_small = vec![false; m];
    for c in decomp.small_chains() {
        for &i in &decomp.chains[c].pieces {
            in_small[i] = true;
        }
    }
    let mut memo: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for q in splits_of(&decomp.caps, n) {
        if policy == FillPolicy::PoolFirst {
            let on_p: usize = (0..m).filter(|&i| in_small[i]).map(|i| q[i]).sum();
            if on_p != want_p {
                continue;
            }
        }
        let mut e = 0.0;
        for c in 0..decomp.chains.len() {
            let ch = &decomp.chains[c];
            let local: Vec<usize> = ch.pieces.iter().map(|&i| q[i]).collect();
            if decomp.in_small[c] {
                let key = (c, local);
                let v = match memo.get(&key) {
                    Some(&v) => v,
                    None => {
                        let v = engine
                            .split_energy(ch, &key.1)
                            .map_err(|e| Error::InChain {
                                chain: c,
                                source: Box::new(e),
                            })?;
                        memo.insert(key, v.0);
                        v.0
                    }
                };
                e += v;
            } else {
                e += ch
                    .pieces
                    .iter()
                    .map(|&i| free_energy(decomp.piece_lengths[i], q[i]))
                    .sum::<f64>();
            }
        }
        if best.as_ref().map_or(true, |b| e < b.0) {
            best = Some((e, q));
        }
    }
    let (e, q) = best.ok_or_else(|| Error::Infeasible("no admissible occupation".into()))?;
    Ok((Occupation::new(q), e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub checked: usize,
    /// Chains whose levels fail to increase strictly.
    pub violations: Vec<usize>,
}

/// Strict increase of `f(I, k)` in `k` for every listed chain.
pub fn convexity_check<'a>(
    levels: impl IntoIterator<Item = (usize, &'a [f64])>,
) -> ConvexityReport {
    let mut checked = 0;
    let mut violations = Vec::new();
    for (c, lv) in levels {
        checked += 1;
        if lv.windows(2).any(|w| !(w[1] > w[0])) {
            violations.push(c);
        }
    }
    ConvexityReport {
        checked,
        violations,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegeneracyReport {
    /// `(first value, multiplicity)` per cluster, ascending.
    pub clusters: Vec<(f64, usize)>,
    pub max_multiplicity: usize,
}

/// Cluster sorted pool values; a cluster extends while values stay within
/// `tol * max(1, |v0|)` of its first value `v0`.
pub fn degeneracy_count(values: &[f64], tol: f64) -> Result<DegeneracyReport> {
    if !(tol >= 0.0) {
        return Err(Error::invalid("tolerance must be non-negative"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    for x in v {
        match clusters.last_mut() {
            Some((v0, k)) if (x - *v0).abs() <= tol * v0.abs().max(1.0) => *k += 1,
            _ => clusters.push((x, 1)),
        }
    }
    let max_multiplicity = clusters.iter().map(|c| c.1).max().unwrap_or(0);
    Ok(DegeneracyReport {
        clusters,
        max_multiplicity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StableSet {
    /// Occupied chains whose particle count is constant on the window.
    pub chains: Vec<usize>,
    /// `(piece, q)` for the members of stable chains.
    pub counts: Vec<(usize, usize)>,
}

/// Chains untouched by the greedy steps `n - window + 1 ..= n`.
pub fn stable_chains(
    pool: &LevelPool,
    decomp: &ChainDecomposition,
    n: usize,
    window: usize,
    policy: FillPolicy,
) -> Result<StableSet> {
    if window > n {
        return Err(Error::invalid("window exceeds n"));
    }
    let order = placement_order(pool, decomp, policy);
    if n > order.len() {
        return Err(Error::Infeasible(format!(
            "{n} particles but total capacity is {}",
            order.len()
        )));
    }
    let mut kappa = vec![0usize; decomp.chains.len()];
    let mut touched = vec![false; decomp.chains.len()];
    for (r, pl) in order[..n].iter().enumerate() {
        if let Placement::Chain {
            chain, kappa: k, ..
        } = *pl
        {
            kappa[chain] = k;
            if r >= n - window {
                touched[chain] = true;
            }
        }
    }
    let mut chains = Vec::new();
    let mut counts = Vec::new();
    for c in 0..decomp.chains.len() {
        if kappa[c] > 0 && !touched[c] {
            chains.push(c);
            let lv = pool.chain_levels[c]
                .as_ref()
                .expect("levels for pool chains");
            counts.extend(
                decomp.chains[c]
                    .pieces
                    .iter()
                    .copied()
                    .zip(lv.splits[kappa[c]].iter().copied()),
            );
        }
    }
    Ok(StableSet { chains, counts })
}
