//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use pieces::chains::{chain_statistics, decompose, model_params, ModelParams};
use pieces::cli::counting_grid;
use pieces::densities::{
    brute_force_densities, compare_occupations, factorized_densities, Component,
};
use pieces::disorder::{
    gap_pattern_count, piece_length_histogram, sample_pieces, PieceConfiguration,
};
use pieces::optimizer::{
    brute_force_ground, build_level_pool, greedy_fill, FillPolicy, BRUTE_MAX_CAPS,
};
use pieces::spectra::*;
use pieces::thermo::*;

type Outcome = Result<String, String>;

fn step() -> Potential {
    Potential::step(1.0, 1.0).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// gamma and sigma(d) for the step potential, shared by several criteria.
fn fit() -> &'static AsymptoticFit {
    static FIT: OnceLock<AsymptoticFit> = OnceLock::new();
    FIT.get_or_init(|| {
        let cfg = SolverConfig::default();
        let ls = [20.0, 40.0, 80.0];
        let d: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let g = fit_gamma(&step(), &ls, &cfg).unwrap();
        let s = fit_sigma(&step(), &d, &ls, 1.0, &cfg).unwrap();
        g.with_sigma(&s)
    })
}

fn engine(rho: f64) -> LevelEngine {
    let prm = model_params(rho, 1.0).unwrap();
    LevelEngine::new(step(), SolverConfig::default(), prm).unwrap()
}

fn spread(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    (hi - lo) / mean.abs()
}

fn c1_oracle() -> Outcome {
    let prm = ModelParams::custom(0.05, 1.0, 1.0).unwrap();
    let eng = LevelEngine::new(step(), SolverConfig::default(), prm).unwrap();
    let mut r = common::rng(2024);
    let mut worst = 0.0f64;
    let mut counts = [0usize; 2];
    for (k, policy) in [FillPolicy::Merged, FillPolicy::PoolFirst]
        .into_iter()
        .enumerate()
    {
        while counts[k] < 200 {
            let m = 2 + common::below(&mut r, 7);
            let lengths: Vec<f64> = (0..m)
                .map(|_| 0.1 + 3.1 * common::uniform(&mut r))
                .collect();
            let p = 1 + common::below(&mut r, 2);
            let d = decompose(
                &PieceConfiguration::from_lengths(&lengths).unwrap(),
                &prm,
                p,
            )
            .unwrap();
            let cap = d.total_cap();
            if cap == 0 || cap > BRUTE_MAX_CAPS {
                continue;
            }
            let n = common::below(&mut r, cap + 1);
            let pool = build_level_pool(&d, &eng).map_err(|e| e.to_string())?;
            let g = greedy_fill(&pool, n, &d, policy).map_err(|e| e.to_string())?;
            let (_, b) = brute_force_ground(&d, &eng, n, policy).map_err(|e| e.to_string())?;
            let rel = (g.energy - b).abs() / b.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(if g.energy == b { 0.0 } else { rel });
            counts[k] += 1;
        }
    }
    check(
        worst <= 1e-12,
        format!(
            "{} merged + {} pool-first instances, worst relative gap {worst:.1e}",
            counts[0], counts[1]
        ),
    )
}

fn c2_free_pair() -> Outcome {
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    for l in [5.0, 20.0, 80.0] {
        let s =
            solve_same_piece_pair(l, &Potential::zero(), 32, &cfg).map_err(|e| e.to_string())?;
        let want = 5.0 * PI * PI / (l * l);
        worst = worst.max((s.energy - want).abs() / want);
    }
    check(worst <= 1e-10, format!("worst relative error {worst:.1e}"))
}

fn c3_range_cutoff() -> Outcome {
    let cfg = SolverConfig::default();
    let u = step();
    let d = u.range() + 0.01;
    let (a, b) = (3.0, 4.5);
    let s = solve_two_piece(a, b, d, &u, 16, 16, &cfg).map_err(|e| e.to_string())?;
    let free = PI * PI / (a * a) + PI * PI / (b * b);
    let rel = (s.energy - free).abs() / free;
    let mut nonzero = 0;
    for p in 1..=6 {
        for q in 1..=6 {
            let g = Geometry::TwoPiece {
                left: a,
                right: b,
                d,
                p,
                q,
            };
            if interaction_element(&g, &u, 1e-8).map_err(|e| e.to_string())? != 0.0 {
                nonzero += 1;
            }
        }
    }
    check(
        rel <= 1e-12 && nonzero == 0,
        format!("relative gap to free sum {rel:.1e}, {nonzero} non-zero elements of 36"),
    )
}

fn c4_gamma() -> Outcome {
    let f = fit();
    let v: Vec<f64> = f
        .points
        .iter()
        .filter(|p| p.d.is_none())
        .map(|p| p.scaled_correction)
        .collect();
    let sp = spread(&v);
    check(
        v.len() == 3 && sp <= 0.05 && v.iter().all(|&x| x > 0.0),
        format!(
            "(E - 5 pi^2/l^2) l^3 = {v:.4?}, spread {:.2}%, gamma {:.4}",
            100.0 * sp,
            f.gamma
        ),
    )
}

fn c5_sigma() -> Outcome {
    let f = fit();
    let v: Vec<f64> = f
        .points
        .iter()
        .filter(|p| p.d == Some(0.0))
        .map(|p| p.scaled_correction)
        .collect();
    let sp = spread(&v);
    let cfg = SolverConfig::default();
    let beyond =
        solve_two_piece_pair(20.0, 1.0, 1.01, &step(), 24, &cfg).map_err(|e| e.to_string())?;
    let zero_beyond = f.sigma(1.01) == 0.0 && f.sigma(2.0) == 0.0 && beyond.shift == 0.0;
    check(
        v.len() == 3 && sp <= 0.10 && v.iter().all(|&x| x > 0.0) && zero_beyond,
        format!(
            "shift l^6 at d=0: {v:.4?}, spread {:.2}%, sigma(d > M) = 0: {zero_beyond}",
            100.0 * sp
        ),
    )
}

fn c6_counting() -> Outcome {
    let rho = 0.05;
    let l = 5e4;
    let eng = engine(rho);
    let prm = eng.params;
    let grid = counting_grid(prm.minimal_length, 50);
    let j: Vec<f64> = grid
        .iter()
        .map(|&x| closed_form_j(x, &prm, fit()).unwrap())
        .collect();
    let mut gaps = Vec::new();
    for seed in 1..=10 {
        let d = decompose(&sample_pieces(l, seed).unwrap(), &prm, 2).unwrap();
        let pool = build_level_pool(&d, &eng).map_err(|e| e.to_string())?;
        let emp = empirical_counting(&pool, l, &grid).map_err(|e| e.to_string())?;
        gaps.push(
            emp.iter()
                .zip(&j)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    check(
        mean <= 0.15 * rho,
        format!(
            "mean sup gap {mean:.3e} = {:.4} rho (limit 0.15 rho)",
            mean / rho
        ),
    )
}

fn c7_pool_size() -> Outcome {
    let rho = 0.05;
    let l = 1e5;
    let m = 1.0;
    let eng = engine(rho);
    let hi = 1.0 + (3.0 * m + 6.0) * rho + 0.03;
    let mut ratios = Vec::new();
    for seed in 1..=10 {
        let d = decompose(&sample_pieces(l, seed).unwrap(), &eng.params, 2).unwrap();
        let pool = build_level_pool(&d, &eng).map_err(|e| e.to_string())?;
        ratios.push(pool.len() as f64 / (2.0 * rho * l));
    }
    let ok = ratios.iter().all(|&x| (0.97..=hi).contains(&x));
    let (lo_r, hi_r) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    check(
        ok,
        format!("#pool/(2 rho L) in [{lo_r:.4}, {hi_r:.4}], allowed [0.97, {hi:.2}]"),
    )
}

fn c8_fermi() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for rho in [0.02, 0.05, 0.1] {
        let prm = model_params(rho, 1.0).unwrap();
        let f = fermi_level(rho, &prm, fit()).map_err(|e| e.to_string())?;
        let sandwich = prm.minimal_length < f.delta_rho && f.delta_rho < prm.fermi_length;
        let above = prm.fermi_energy < f.lambda_rho;
        ok &= sandwich && above;
        parts.push(format!(
            "rho {rho}: {:.3} < {:.3} < {:.3}, E {:.4} < lambda {:.4}",
            prm.minimal_length, f.delta_rho, prm.fermi_length, prm.fermi_energy, f.lambda_rho
        ));
    }
    check(ok, parts.join("; "))
}

fn c9_free_model() -> Outcome {
    let l = 1e5;
    let mut parts = Vec::new();
    let mut ok = true;
    for rho in [0.05, 0.1] {
        let prm = model_params(rho, 0.0).unwrap();
        let eng = LevelEngine::new(Potential::zero(), SolverConfig::default(), prm).unwrap();
        let e0 = free_energy_per_particle(rho).map_err(|e| e.to_string())?;
        for seed in 1..=3 {
            let d = decompose(&sample_pieces(l, seed).unwrap(), &prm, 2).unwrap();
            let pool = build_level_pool(&d, &eng).map_err(|e| e.to_string())?;
            let n = (rho * l).round() as usize;
            let g = greedy_fill(&pool, n, &d, FillPolicy::Merged).map_err(|e| e.to_string())?;
            let rel = (g.energy_per_particle() - e0).abs() / e0;
            ok &= rel <= 0.02;
            if seed == 1 {
                parts.push(format!(
                    "rho {rho}: E/n {:.4} vs E0 {e0:.4} ({:.2}%)",
                    g.energy_per_particle(),
                    100.0 * rel
                ));
            }
        }
    }
    check(ok, parts.join("; ") + " (seeds 1..3 all checked)")
}

fn c10_trend() -> Outcome {
    let l = 1e5;
    let seeds: Vec<u64> = (1..=5).collect();
    let mut gaps = Vec::new();
    for rho in [0.1, 0.05, 0.025] {
        let rep =
            energy_per_particle_experiment(l, &seeds, &engine(rho), fit(), FillPolicy::Merged)
                .map_err(|e| e.to_string())?;
        gaps.push((
            rho,
            rep.mean_greedy,
            rep.j_lambda_over_rho,
            rep.gap_greedy_j,
        ));
    }
    let ok = gaps.windows(2).all(|w| w[1].3 < w[0].3);
    let txt: Vec<String> = gaps
        .iter()
        .map(|(r, g, j, d)| format!("rho {r}: E/n {g:.4} vs J/rho {j:.4} (gap {d:.2e})"))
        .collect();
    check(ok, txt.join("; "))
}

fn c11_factorization() -> Outcome {
    let iv = [(0.0, 0.5), (0.8, 1.3), (1.6, 2.0)];
    let g = common::grid(&iv, 20.0);
    let mut r = common::rng(77);
    let (mut k_err, mut t_err) = (0.0f64, 0.0f64);
    let trials = 12;
    for _ in 0..trials {
        let comps = common::random_components(&mut r, &g, &iv, 4);
        let n = comps.iter().map(Component::particles).sum::<usize>() as f64;
        let (f1, f2) = factorized_densities(&g, &comps).map_err(|e| e.to_string())?;
        let (b1, b2) = brute_force_densities(&g, &comps).map_err(|e| e.to_string())?;
        k_err = k_err
            .max(f1.max_kernel_error(&b1).unwrap())
            .max(f2.max_kernel_error(&b2).unwrap());
        t_err = t_err
            .max((f1.trace - n).abs())
            .max((f2.trace - n * (n - 1.0) / 2.0).abs());
    }
    check(
        k_err <= 1e-8 && t_err <= 1e-10,
        format!(
            "{trials} random states, max kernel error {k_err:.1e}, max trace error {t_err:.1e}"
        ),
    )
}

fn c12_densities() -> Outcome {
    let rho: f64 = 0.05;
    let l = 1e4;
    let eng = engine(rho);
    let fermi = fermi_level(rho, &eng.params, fit()).map_err(|e| e.to_string())?;
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    for seed in 1..=10 {
        let run = run_seed(rho, l, seed, &eng, fit(), &fermi, FillPolicy::Merged)
            .map_err(|e| e.to_string())?;
        let gap = compare_occupations(
            &run.decomp,
            &eng,
            &run.greedy.occupation,
            &run.test.occupation,
        )
        .map_err(|e| e.to_string())?;
        s1.push(gap.scaled_1);
        s2.push(gap.scaled_2);
    }
    let m1 = s1.iter().sum::<f64>() / 10.0;
    let m2 = s2.iter().sum::<f64>() / 10.0;
    let (b1, b2) = (10.0 * rho.powf(1.5), 45.0 * rho.powf(1.5));
    let over = s1.iter().filter(|&&x| x > b1).count();
    check(
        m1 <= b1 && m2 <= b2,
        format!(
            "10-seed means: order 1 {m1:.4} (limit {b1:.4}, {over} seeds above), order 2 {m2:.4} (limit {b2:.4})"
        ),
    )
}

fn c13_statistics() -> Outcome {
    let l = 1e5;
    let rho = 0.05;
    let prm = model_params(rho, 1.0).unwrap();
    let lm = prm.minimal_length;
    let edges = [0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, f64::INFINITY];
    let length_bins = [
        (lm, lm + 0.5),
        (lm + 0.5, lm + 1.5),
        (lm + 1.5, f64::INFINITY),
    ];
    let gap_bins = [(0.0, 0.5), (0.5, 1.0)];
    let mut good = 0;
    let mut worst = 0.0f64;
    for seed in 1..=10 {
        let cfg = sample_pieces(l, seed).unwrap();
        let h = piece_length_histogram(&cfg, &edges).map_err(|e| e.to_string())?;
        let d = decompose(&cfg, &prm, 2).unwrap();
        let st = chain_statistics(&d, &length_bins, &gap_bins).map_err(|e| e.to_string())?;
        let pat = gap_pattern_count(&cfg, &[(1.0, 2.0), (1.0, 2.0)], &[(0.0, 1.0)], 1.0)
            .map_err(|e| e.to_string())?;
        let extra = [
            (cfg.piece_count() as f64 - l) / l.sqrt(),
            (pat.count as f64 - pat.expected) / pat.expected.sqrt(),
        ];
        let z = h
            .zscores()
            .into_iter()
            .chain(extra)
            .chain(st.size1.iter().chain(&st.size2).map(|b| b.zscore()))
            .fold(0.0f64, |a, z| a.max(z.abs()));
        worst = worst.max(z);
        if z <= 5.0 {
            good += 1;
        }
    }
    check(
        good >= 9,
        format!("{good}/10 seeds within 5 sigma (largest |z| {worst:.2})"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("greedy equals exhaustive minimum", c1_oracle),
        ("free pair energy", c2_free_pair),
        ("range cutoff", c3_range_cutoff),
        ("gamma scaling", c4_gamma),
        ("sigma scaling", c5_sigma),
        ("counting function", c6_counting),
        ("pool size bracket", c7_pool_size),
        ("Fermi sandwich", c8_fermi),
        ("free model energy", c9_free_model),
        ("energy gap trend", c10_trend),
        ("density factorization", c11_factorization),
        ("desk-scale density comparison", c12_densities),
        ("piece and chain statistics", c13_statistics),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1}s]", k + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1}s]", k + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
