//! Free IDS, the counting function of the level pool and its closed form,
//! the Fermi level, the test occupation and the energy experiments.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::{decompose, ChainDecomposition, ModelParams};
use crate::disorder::sample_pieces;
use crate::error::{Error, Result};
use crate::optimizer::{
    build_level_pool, greedy_fill, tie_sort, FillPolicy, GroundStateEstimate, LevelPool, Occupation,
};
use crate::quad::{integrate, GlRule};
use crate::scalar::Real;
use crate::spectra::{free_energy, AsymptoticFit, LevelEngine};

/// Free integrated density of states `N(E) = e^{-pi/sqrt E} / (1 - e^{-pi/sqrt E})`.
pub fn ids_free<T: Real>(e: T) -> T {
    if !(e > T::zero()) {
        return T::zero();
    }
    let x = (-T::PI() / e.sqrt()).exp();
    x / (T::one() - x)
}

/// Unique solution of `N(E) = rho`: `(pi / l_rho)^2`.
pub fn fermi_energy<T: Real>(rho: T) -> Result<T> {
    if !(rho > T::zero()) || !rho.is_finite() {
        return Err(Error::invalid("density must be positive"));
    }
    let k = T::PI() / (T::one() + rho.recip()).ln();
    Ok(k * k)
}

/// `(1/rho) int_0^{E_rho} E N'(E) dE`.
pub fn free_energy_per_particle(rho: f64) -> Result<f64> {
    let e_rho = fermi_energy(rho)?;
    let f = |e: f64| {
        if e <= 0.0 {
            return 0.0;
        }
        let u = PI / e.sqrt();
        let x = (-u).exp();
        e * x / ((1.0 - x) * (1.0 - x)) * PI / (2.0 * e * e.sqrt())
    };
    Ok(integrate(&f, 0.0, e_rho, 0.0, 1e-10)? / rho)
}

/// The same mean energy in the length variable,
/// `(1/rho) int_{l_rho}^inf (pi^2/u^2) e^{-u} / (1 - e^{-u})^2 du`.
pub fn free_energy_per_particle_length_form(rho: f64) -> Result<f64> {
    let l = crate::chains::fermi_length(rho);
    let f = |u: f64| {
        let x = (-u).exp();
        PI * PI / (u * u) * x / ((1.0 - x) * (1.0 - x))
    };
    let head = integrate(&f, l, l + 60.0, 0.0, 1e-12)?;
    Ok(head / rho)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingFunction {
    pub grid: Vec<f64>,
    pub empirical: Vec<f64>,
    pub closed_form: Vec<f64>,
}

impl CountingFunction {
    pub fn sup_gap(&self) -> f64 {
        self.empirical
            .iter()
            .zip(&self.closed_form)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `(1/L) #{x in pool : x <= lambda}` on `grid`, inadmissible levels included.
pub fn empirical_counting(pool: &LevelPool, box_length: f64, grid: &[f64]) -> Result<Vec<f64>> {
    if pool.p != 2 {
        return Err(Error::invalid("the counting function is defined for p = 2"));
    }
    let v = pool.values();
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(grid
        .iter()
        .map(|&lam| sorted.partition_point(|&x| x <= lam) as f64 / box_length)
        .collect())
}

fn gl() -> &'static GlRule {
    static R: std::sync::OnceLock<GlRule> = std::sync::OnceLock::new();
    R.get_or_init(|| GlRule::new(24))
}

/// Breakpoints of the piecewise-linear `sigma` inside `[0, m]`.
fn t_segments(fit: &AsymptoticFit, m: f64) -> Vec<f64> {
    let mut cuts = vec![0.0];
    cuts.extend(fit.sigma_d.iter().copied().filter(|&d| d > 0.0 && d < m));
    cuts.push(m);
    cuts
}

/// Smallest `x >= l` allowed for the shorter piece of a pair with longer
/// piece `y`: `max(l, x0 + s / (2 y^3))`.
#[inline]
fn pair_floor(l: f64, x0: f64, s: f64, y: f64) -> f64 {
    l.max(x0 + s / (2.0 * y * y * y))
}

/// Points in `(lo, hi)` where `y -> pair_floor(y)` meets `y` or changes branch.
fn pair_kinks(l: f64, x0: f64, s: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut out = vec![];
    let g = |y: f64| x0 + s / (2.0 * y * y * y);
    // g decreasing, so g(y) = y and g(y) = l have at most one root each
    for target in [None, Some(l)] {
        let h = |y: f64| match target {
            None => g(y) - y,
            Some(t) => g(y) - t,
        };
        let (mut a, mut b) = (lo, hi);
        if h(a).signum() == h(b).signum() {
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if h(m).signum() == h(a).signum() {
                a = m;
            } else {
                b = m;
            }
        }
        out.push(0.5 * (a + b));
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Integrate a smooth-by-parts function over `[lo, hi]` split at `kinks`.
fn gl_split(lo: f64, hi: f64, kinks: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut a = lo;
    for &k in kinks
        .iter()
        .filter(|&&k| k > lo && k < hi)
        .chain(std::iter::once(&hi))
    {
        acc += gl().integrate(a, k, &f);
        a = k;
    }
    acc
}

/// `int_0^M dt int_l^{2l} dy 2 e^{-y} int_{floor(y)}^{y} w(x, y, t) e^{-x} dx`,
/// with the inner integral supplied as `inner(a, y, t)`.
fn pair_second_integral(
    params: &ModelParams,
    fit: &AsymptoticFit,
    x0: f64,
    inner: &dyn Fn(f64, f64, f64) -> f64,
) -> f64 {
    let l = params.minimal_length;
    let m = params.interaction_range;
    if m <= 0.0 {
        return 0.0;
    }
    let cuts = t_segments(fit, m);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += gl().integrate(w[0], w[1], |t| {
            let s = fit.sigma(t);
            let kinks = pair_kinks(l, x0, s, l, 2.0 * l);
            gl_split(l, 2.0 * l, &kinks, |y| {
                let a = pair_floor(l, x0, s, y);
                if a >= y {
                    0.0
                } else {
                    2.0 * (-y).exp() * inner(a, y, t)
                }
            })
        });
    }
    total
}

/// Closed-form counting function `J(lambda)` of the `p = 2` pool.
pub fn closed_form_j(lambda: f64, params: &ModelParams, fit: &AsymptoticFit) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let l = params.minimal_length;
    let m = params.interaction_range;
    let c = 1.0 - m * (-l).exp();
    let x0 = PI / lambda.sqrt();
    let e = |x: f64| (-x).exp();
    let a1 = l.max(x0);
    let i1 = if a1 < 3.0 * l {
        e(a1) - e(3.0 * l)
    } else {
        0.0
    };
    let a2 = (2.0 * l).max(2.0 * x0 + fit.gamma / (8.0 * PI * PI));
    let i2 = if a2 < 3.0 * l {
        e(a2) - e(3.0 * l)
    } else {
        0.0
    };
    let b = l.max(x0);
    let i3 = if b < 2.0 * l {
        2.0 * m * (e(l) * (e(b) - e(2.0 * l)) - 0.5 * (e(2.0 * b) - e(4.0 * l)))
    } else {
        0.0
    };
    let i4 = pair_second_integral(params, fit, x0, &|a, y, _| e(a) - e(y));
    let j = c * c * (i1 + i2 + i3 + i4);
    if !j.is_finite() {
        return Err(Error::numerical("J quadrature", f64::NAN));
    }
    Ok(j)
}

/// Energy functional: the integrals of `J` weighted by the asymptotic
/// levels `pi^2/u^2`, `4 pi^2/u^2 + gamma/u^3`, `pi^2/y^2` and
/// `pi^2/x^2 + sigma(t)/(x^3 y^3)`. Per unit length.
pub fn energy_functional(lambda: f64, params: &ModelParams, fit: &AsymptoticFit) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let l = params.minimal_length;
    let m = params.interaction_range;
    let c = 1.0 - m * (-l).exp();
    let x0 = PI / lambda.sqrt();
    let g = fit.gamma;
    let pi2 = PI * PI;
    let e = |x: f64| (-x).exp();
    let mut total = 0.0;
    let a1 = l.max(x0);
    if a1 < 3.0 * l {
        total += gl_split(a1, 3.0 * l, &[2.0 * l], |u| pi2 / (u * u) * e(u));
    }
    let a2 = (2.0 * l).max(2.0 * x0 + g / (8.0 * pi2));
    if a2 < 3.0 * l {
        total += gl().integrate(a2, 3.0 * l, |u| {
            (4.0 * pi2 / (u * u) + g / (u * u * u)) * e(u)
        });
    }
    let b = l.max(x0);
    if b < 2.0 * l {
        total += 2.0 * m * gl().integrate(b, 2.0 * l, |y| pi2 / (y * y) * e(y) * (e(l) - e(y)));
    }
    total += pair_second_integral(params, fit, x0, &|a, y, t| {
        let s = fit.sigma(t);
        gl().integrate(a, y, |x| {
            (pi2 / (x * x) + s / (x * x * x * y * y * y)) * e(x)
        })
    });
    Ok(c * c * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FermiSolution {
    pub lambda_rho: f64,
    /// `pi / sqrt(lambda_rho)`.
    pub delta_rho: f64,
    /// `|J(lambda_rho) - rho|`.
    pub residual: f64,
}

pub const FERMI_TOL: f64 = 1e-10;

/// Root of `J(lambda) = rho` by bisection.
pub fn fermi_level(rho: f64, params: &ModelParams, fit: &AsymptoticFit) -> Result<FermiSolution> {
    if !(rho > 0.0) {
        return Err(Error::invalid("density must be positive"));
    }
    let l = params.minimal_length;
    // J vanishes once pi/sqrt(lambda) > 3 l
    let mut lo = (PI / (3.0 * l)).powi(2);
    let mut hi = (PI / l).powi(2);
    let mut j_hi = closed_form_j(hi, params, fit)?;
    let mut grow = 0;
    while j_hi < rho {
        lo = hi;
        hi *= 4.0;
        j_hi = closed_form_j(hi, params, fit)?;
        grow += 1;
        if grow > 40 {
            return Err(Error::NoRoot(format!(
                "J stays below rho = {rho} (sup J ~ {j_hi:.6e})"
            )));
        }
    }
    let mut mid = hi;
    let mut jm = j_hi;
    for _ in 0..300 {
        mid = 0.5 * (lo + hi);
        jm = closed_form_j(mid, params, fit)?;
        if (jm - rho).abs() <= FERMI_TOL * 1e-2 || hi - lo <= 1e-15 * hi {
            break;
        }
        if jm < rho {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let residual = (jm - rho).abs();
    if residual > FERMI_TOL {
        return Err(Error::numerical("Fermi level bisection", residual));
    }
    Ok(FermiSolution {
        lambda_rho: mid,
        delta_rho: PI / mid.sqrt(),
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TestOccupation {
    pub occupation: Occupation,
    /// Particles placed on `P_2` by the threshold rules (before trimming).
    pub from_rules: usize,
    /// Particles added to reach `n`.
    pub completed: usize,
    /// Part of `completed` that went to unused `P_2` levels because `N_2`
    /// was full.
    pub completed_on_p: usize,
    /// Rule placements removed to get down to `n`.
    pub trimmed: usize,
}

struct RulePlacement {
    piece: usize,
    level: f64,
}

/// Threshold rules on `P_2`, then completion on `N_2` (or trimming of the
/// highest asymptotic levels) so that exactly `n` particles are placed.
pub fn build_test_occupation(
    decomp: &ChainDecomposition,
    fermi: &FermiSolution,
    fit: &AsymptoticFit,
    n: usize,
) -> Result<TestOccupation> {
    if decomp.p != 2 {
        return Err(Error::invalid("the test occupation is defined for p = 2"));
    }
    let delta = fermi.delta_rho;
    let pi2 = PI * PI;
    let two_threshold = 2.0 * delta + fit.gamma / (8.0 * pi2);
    // admissible placements on P_2 in chain order, and how many the rules take
    let mut placed: Vec<RulePlacement> = Vec::new();
    let mut spare: Vec<RulePlacement> = Vec::new();
    for c in decomp.small_chains() {
        let ch = &decomp.chains[c];
        let (cands, q) = match ch.size() {
            1 => {
                let (i, l) = (ch.pieces[0], ch.lengths[0]);
                let mut v = vec![RulePlacement {
                    piece: i,
                    level: pi2 / (l * l),
                }];
                if ch.caps[0] >= 2 {
                    v.push(RulePlacement {
                        piece: i,
                        level: 4.0 * pi2 / (l * l) + fit.gamma / l.powi(3),
                    });
                }
                let q = if l < delta {
                    0
                } else if l < two_threshold {
                    1
                } else {
                    2
                };
                (v, q)
            }
            2 => {
                let (short, long) = if ch.lengths[0] <= ch.lengths[1] {
                    (0, 1)
                } else {
                    (1, 0)
                };
                let (lj, lk) = (ch.lengths[short], ch.lengths[long]);
                let s = fit.sigma(ch.gaps[0]);
                let v = vec![
                    RulePlacement {
                        piece: ch.pieces[long],
                        level: pi2 / (lk * lk),
                    },
                    RulePlacement {
                        piece: ch.pieces[short],
                        level: pi2 / (lj * lj) + s / (lj.powi(3) * lk.powi(3)),
                    },
                ];
                let q = if lk < delta {
                    0
                } else if lj < delta + s / (2.0 * lk.powi(3)) {
                    1
                } else {
                    2
                };
                (v, q)
            }
            _ => return Err(Error::invalid("P_2 chain with more than two pieces")),
        };
        let q = q.min(cands.len());
        let mut it = cands.into_iter();
        placed.extend(it.by_ref().take(q));
        spare.extend(it);
    }
    let from_rules = placed.len();
    let mut trimmed = 0;
    if from_rules > n {
        // drop the highest levels; a chain's second level sits above its first
        tie_sort(&mut placed, |p| -p.level, |p| std::cmp::Reverse(p.piece));
        trimmed = from_rules - n;
        placed.drain(..trimmed);
    }
    let mut counts = vec![0usize; decomp.piece_lengths.len()];
    for p in &placed {
        counts[p.piece] += 1;
    }
    let mut completed = 0;
    let mut completed_on_p = 0;
    if placed.len() < n {
        let need = n - placed.len();
        let mut free: Vec<RulePlacement> = Vec::new();
        for i in decomp.leftover_pieces() {
            let l = decomp.piece_lengths[i];
            for k in 1..=decomp.caps[i] {
                free.push(RulePlacement {
                    piece: i,
                    level: (k * k) as f64 * pi2 / (l * l),
                });
            }
        }
        tie_sort(&mut free, |f| f.level, |f| f.piece);
        tie_sort(&mut spare, |f| f.level, |f| f.piece);
        if free.len() + spare.len() < need {
            return Err(Error::Infeasible(format!(
                "test occupation needs {need} more particles but only {} places are left",
                free.len() + spare.len()
            )));
        }
        let on_n = need.min(free.len());
        for f in free.iter().take(on_n).chain(spare.iter().take(need - on_n)) {
            counts[f.piece] += 1;
        }
        completed = need;
        completed_on_p = need - on_n;
    }
    Ok(TestOccupation {
        occupation: Occupation::new(counts),
        from_rules,
        completed,
        completed_on_p,
        trimmed,
    })
}

/// Energy of an occupation: exact chain energies on `P_p`, free energies on `N_p`.
pub fn occupation_energy(
    decomp: &ChainDecomposition,
    engine: &LevelEngine,
    occ: &Occupation,
) -> Result<f64> {
    let mut e = 0.0;
    for (c, ch) in decomp.chains.iter().enumerate() {
        let q: Vec<usize> = ch.pieces.iter().map(|&i| occ.counts[i]).collect();
        if decomp.in_small[c] {
            e += engine
                .split_energy(ch, &q)
                .map_err(|err| Error::InChain {
                    chain: c,
                    source: Box::new(err),
                })?
                .0;
        } else {
            e += q
                .iter()
                .zip(&ch.lengths)
                .map(|(&k, &l)| free_energy(l, k))
                .sum::<f64>();
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, Serialize)]
pub struct LeftoverReport {
    /// `(1/n) sum_{N_p} q_i`.
    pub fraction: f64,
    pub lower: f64,
    pub upper: f64,
    /// `fraction <= upper`.
    pub below_upper: bool,
    /// `lower <= fraction <= upper`.
    pub within_band: bool,
    /// Free energy of the `N_p` occupants.
    pub energy_free: f64,
    /// Free energy plus first-order interaction of the `N_p` occupants.
    pub energy_bound: f64,
    /// `energy_bound / (particles in N_p)`.
    pub energy_per_occupant: f64,
    /// `C / l_min^2` with `C = 3 pi^2`.
    pub per_occupant_limit: f64,
}

/// Particles and energy in `N_p` against the `rho^{p +- delta}` band.
pub fn leftover_checks(
    decomp: &ChainDecomposition,
    occ: &Occupation,
    delta: f64,
    engine: &LevelEngine,
) -> Result<LeftoverReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1)"));
    }
    let rho = decomp.params.density;
    let p = decomp.p as f64;
    let n = occ.total.max(1) as f64;
    let mut in_n = 0usize;
    let mut energy_free = 0.0;
    let mut energy_bound = 0.0;
    let mut pert = engine.clone();
    pert.cfg.perturbative = true;
    for c in decomp.leftover_chains() {
        let ch = &decomp.chains[c];
        let q: Vec<usize> = ch.pieces.iter().map(|&i| occ.counts[i]).collect();
        in_n += q.iter().sum::<usize>();
        energy_free += q
            .iter()
            .zip(&ch.lengths)
            .map(|(&k, &l)| free_energy(l, k))
            .sum::<f64>();
        energy_bound += pert.split_energy(ch, &q)?.0;
    }
    let fraction = in_n as f64 / n;
    let lower = rho.powf(p + delta);
    let upper = rho.powf(p - delta);
    let l_min = decomp.params.minimal_length;
    Ok(LeftoverReport {
        fraction,
        lower,
        upper,
        below_upper: fraction <= upper,
        within_band: fraction >= lower && fraction <= upper,
        energy_free,
        energy_bound,
        energy_per_occupant: if in_n > 0 {
            energy_bound / in_n as f64
        } else {
            0.0
        },
        per_occupant_limit: 3.0 * PI * PI / (l_min * l_min),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub n: usize,
    pub e_greedy_per_n: f64,
    pub e_test_per_n: f64,
    /// Greedy state itself, for downstream density comparisons.
    #[serde(skip)]
    pub greedy: Option<GroundStateEstimate>,
    #[serde(skip)]
    pub test: Option<Occupation>,
    pub leftover_fraction: f64,
    pub pool_size: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub rho: f64,
    pub box_length: f64,
    pub lambda_rho: f64,
    pub delta_rho: f64,
    /// `(1/rho) * energy functional at lambda_rho`.
    pub j_lambda_over_rho: f64,
    pub free_energy_per_particle: f64,
    pub seeds: Vec<SeedReport>,
    pub mean_greedy: f64,
    pub stderr_greedy: f64,
    pub mean_test: f64,
    pub stderr_test: f64,
    /// `|mean_greedy - j_lambda_over_rho|`.
    pub gap_greedy_j: f64,
    pub gap_test_j: f64,
    pub gap_greedy_test: f64,
}

pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Everything one seed contributes to the energy experiment.
pub struct SeedRun {
    pub decomp: ChainDecomposition,
    pub pool: LevelPool,
    pub greedy: GroundStateEstimate,
    pub test: TestOccupation,
    pub e_test: f64,
}

/// Sample, decompose (`p = 2`), pool, greedy state and test state.
pub fn run_seed(
    rho: f64,
    box_length: f64,
    seed: u64,
    engine: &LevelEngine,
    fit: &AsymptoticFit,
    fermi: &FermiSolution,
    policy: FillPolicy,
) -> Result<SeedRun> {
    let cfg = sample_pieces(box_length, seed)?;
    let decomp = decompose(&cfg, &engine.params, 2)?;
    let pool = build_level_pool(&decomp, engine)?;
    let n = (rho * box_length).round() as usize;
    let greedy = greedy_fill(&pool, n, &decomp, policy)?;
    let test = build_test_occupation(&decomp, fermi, fit, n)?;
    let e_test = occupation_energy(&decomp, engine, &test.occupation)?;
    Ok(SeedRun {
        decomp,
        pool,
        greedy,
        test,
        e_test,
    })
}

/// Greedy and test energies per particle against `(1/rho) J_E(lambda_rho)`.
pub fn energy_per_particle_experiment(
    box_length: f64,
    seeds: &[u64],
    engine: &LevelEngine,
    fit: &AsymptoticFit,
    policy: FillPolicy,
) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("no seeds"));
    }
    let rho = engine.params.density;
    let fermi = fermi_level(rho, &engine.params, fit)?;
    let j_over_rho = energy_functional(fermi.lambda_rho, &engine.params, fit)? / rho;
    let runs: Vec<SeedReport> = seeds
        .par_iter()
        .map(|&seed| {
            let r = run_seed(rho, box_length, seed, engine, fit, &fermi, policy)?;
            let n = r.greedy.occupation.total;
            Ok(SeedReport {
                seed,
                n,
                e_greedy_per_n: r.greedy.energy / n as f64,
                e_test_per_n: r.e_test / n as f64,
                leftover_fraction: r.greedy.particles_in_n as f64 / n as f64,
                pool_size: r.pool.len(),
                greedy: None,
                test: None,
            })
        })
        .collect::<Result<_>>()?;
    let g: Vec<f64> = runs.iter().map(|r| r.e_greedy_per_n).collect();
    let t: Vec<f64> = runs.iter().map(|r| r.e_test_per_n).collect();
    let (mean_greedy, stderr_greedy) = mean_stderr(&g);
    let (mean_test, stderr_test) = mean_stderr(&t);
    Ok(ExperimentReport {
        rho,
        box_length,
        lambda_rho: fermi.lambda_rho,
        delta_rho: fermi.delta_rho,
        j_lambda_over_rho: j_over_rho,
        free_energy_per_particle: free_energy_per_particle(rho)?,
        seeds: runs,
        mean_greedy,
        stderr_greedy,
        mean_test,
        stderr_test,
        gap_greedy_j: (mean_greedy - j_over_rho).abs(),
        gap_test_j: (mean_test - j_over_rho).abs(),
        gap_greedy_test: (mean_greedy - mean_test).abs(),
    })
}
