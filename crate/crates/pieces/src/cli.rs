//! Command-line front end: configuration, subcommands and report output.

use std::f64::consts::PI;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::chains::{chain_statistics, decompose, model_params, ChainDecomposition, ModelParams};
use crate::densities::compare_occupations;
use crate::disorder::{
    ks_critical_1pct, ks_exponential, max_piece_length, piece_length_histogram, sample_pieces,
};
use crate::error::{Error, Result};
use crate::optimizer::{build_level_pool, greedy_fill, FillPolicy};
use crate::spectra::{
    fit_gamma, fit_sigma, AsymptoticFit, LevelEngine, ModeRule, Potential, SolverConfig,
};
use crate::thermo::{
    closed_form_j, empirical_counting, energy_functional, fermi_level, mean_stderr, run_seed,
    FermiSolution,
};

/// Schema version stamped on every JSON report.
pub const SCHEMA_VERSION: &str = "1.0";

const POTENTIAL_HELP: &str = "\
Potential specs:
  step:<u0>:<M>   U(x) = u0 for |x| <= M, 0 beyond
  table:<path>    CSV with columns r,u (r >= 0 increasing); U is piecewise
                  linear in |x| and vanishes beyond the last row

Exit codes: 0 ok, 2 invalid input, 3 numerical failure, 4 infeasible instance.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Fixed sine modes per piece; `None` scales with the piece length.
    pub n_modes: Option<usize>,
    pub quad_tol: f64,
    pub eig_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSettings {
            n_modes: None,
            quad_tol: d.quad_tol,
            eig_tol: d.eig_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub lengths: Vec<f64>,
    pub distances: Vec<f64>,
    pub aspect: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            lengths: vec![20.0, 40.0, 80.0],
            distances: (0..=10).map(|k| k as f64 / 10.0).collect(),
            aspect: 1.0,
        }
    }
}

/// Everything a run needs; read from JSON, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rho: f64,
    pub box_length: f64,
    pub seeds: Vec<u64>,
    pub potential: String,
    pub p: usize,
    /// Exponent slack in the `rho^{2 - delta}` error bounds.
    pub delta: f64,
    pub policy: FillPolicy,
    pub solver: SolverSettings,
    pub fit: FitSettings,
    /// Densities visited by `sweep`.
    pub sweep_rhos: Vec<f64>,
    /// Worker threads for sweeps; 0 picks the core count.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rho: 0.05,
            box_length: 1e4,
            seeds: vec![1],
            potential: "step:1:1".into(),
            p: 2,
            delta: 0.5,
            policy: FillPolicy::default(),
            solver: SolverSettings::default(),
            fit: FitSettings::default(),
            sweep_rhos: vec![0.1, 0.05, 0.025],
            workers: 0,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid("rho must be positive"));
        }
        if !(self.box_length > 0.0 && self.box_length.is_finite()) {
            return Err(Error::invalid("box length must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("no seeds"));
        }
        if self.p < 1 {
            return Err(Error::invalid("p must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if !(self.solver.quad_tol > 0.0 && self.solver.eig_tol > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.sweep_rhos.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::invalid("sweep densities must be positive"));
        }
        self.solver_config().validate()?;
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut c = SolverConfig {
            quad_tol: self.solver.quad_tol,
            eig_tol: self.solver.eig_tol,
            ..SolverConfig::default()
        };
        if let Some(n) = self.solver.n_modes {
            c.modes = ModeRule::Fixed(n);
        }
        c
    }

    pub fn potential(&self) -> Result<Potential> {
        Potential::parse(&self.potential)
    }
}

/// `3`, `1,4,9` or the inclusive range `1..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::invalid(format!("bad seed list {s:?}"));
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<u64>>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number list {s:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Merged,
    PoolFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct Overrides {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Box length.
    #[arg(long = "L", global = true)]
    box_length: Option<f64>,
    /// Single seed (shorthand for --seeds N).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seed list: `1,2,3` or inclusive range `1..10`.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// step:<u0>:<M> or table:<path>.
    #[arg(long, global = true)]
    potential: Option<String>,
    #[arg(long, global = true)]
    p: Option<usize>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, global = true)]
    n_modes: Option<usize>,
    #[arg(long, global = true)]
    quad_tol: Option<f64>,
    #[arg(long, global = true)]
    eig_tol: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for report.json and CSV artifacts.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Output on stdout; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a Poisson configuration and check the length law.
    Sample,
    /// Split a sample into chains; chain counts against predictions.
    Decompose,
    /// Build the level pool of a sample.
    Levels,
    /// Fit gamma and sigma(d) from two-particle solves.
    Fit {
        /// Comma-separated piece lengths.
        #[arg(long)]
        lengths: Option<String>,
        /// Comma-separated distances for sigma.
        #[arg(long)]
        distances: Option<String>,
    },
    /// Greedy ground state of a sample.
    Ground,
    /// Empirical counting function against the closed form.
    Counting {
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Fermi level of the interacting model.
    Fermi,
    /// Greedy against test state: energies and density distances per seed.
    Compare,
    /// Reduced-density distances between greedy and test states.
    Densities,
    /// Energy experiment over every (rho, seed) pair.
    Sweep {
        /// Comma-separated densities (default from the config).
        #[arg(long)]
        rhos: Option<String>,
    },
}

#[derive(Debug, Parser)]
#[command(name = "pieces", version, about = "Fermions on a Poisson-fragmented interval", after_help = POTENTIAL_HELP)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

fn effective_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config: {e}")))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = o.rho {
        cfg.rho = v;
    }
    if let Some(v) = o.box_length {
        cfg.box_length = v;
    }
    if let Some(s) = &o.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(v) = o.seed {
        cfg.seeds = vec![v];
    }
    if let Some(v) = &o.potential {
        cfg.potential = v.clone();
    }
    if let Some(v) = o.p {
        cfg.p = v;
    }
    if let Some(v) = o.delta {
        cfg.delta = v;
    }
    if let Some(v) = o.policy {
        cfg.policy = match v {
            PolicyArg::Merged => FillPolicy::Merged,
            PolicyArg::PoolFirst => FillPolicy::PoolFirst,
        };
    }
    if let Some(v) = o.n_modes {
        cfg.solver.n_modes = Some(v);
    }
    if let Some(v) = o.quad_tol {
        cfg.solver.quad_tol = v;
    }
    if let Some(v) = o.eig_tol {
        cfg.solver.eig_tol = v;
    }
    if let Some(v) = o.workers {
        cfg.workers = v;
    }
    if let Some(v) = &o.output_dir {
        cfg.output_dir = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::InvalidArgument(_)
        | Error::EmptyDomain(_)
        | Error::TooLarge(_)
        | Error::DensityTooLarge { .. }
        | Error::Capacity { .. } => 2,
        Error::Numerical { .. } | Error::NoRoot(_) => 3,
        Error::Infeasible(_) => 4,
        Error::InChain { .. } => unreachable!("root unwraps chain context"),
    }
}

struct Report {
    json: Value,
    csv: Option<(&'static str, String)>,
    default_format: Format,
}

impl Report {
    fn json(json: Value) -> Self {
        Report {
            json,
            csv: None,
            default_format: Format::Json,
        }
    }

    fn with_csv(mut self, name: &'static str, body: String) -> Self {
        self.csv = Some((name, body));
        self
    }

    fn csv_default(mut self) -> Self {
        self.default_format = Format::Csv;
        self
    }
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

fn stamp(command: &str, cfg: &RunConfig, body: Value) -> Value {
    let mut out = json!({
        "spec_version": SCHEMA_VERSION,
        "command": command,
        "config": cfg,
    });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    out
}

/// Shared pieces of a run: potential, parameters, solver settings.
struct Setup {
    potential: Potential,
    params: ModelParams,
    solver: SolverConfig,
}

impl Setup {
    fn new(cfg: &RunConfig, rho: f64) -> Result<Self> {
        let potential = cfg.potential()?;
        let params = model_params(rho, potential.range())?;
        Ok(Setup {
            potential,
            params,
            solver: cfg.solver_config(),
        })
    }

    fn engine(&self) -> Result<LevelEngine> {
        LevelEngine::new(self.potential.clone(), self.solver.clone(), self.params)
    }

    fn decomposition(&self, cfg: &RunConfig, seed: u64) -> Result<ChainDecomposition> {
        let pieces = sample_pieces(cfg.box_length, seed)?;
        decompose(&pieces, &self.params, cfg.p)
    }
}

fn asymptotic_fit(cfg: &RunConfig, u: &Potential, solver: &SolverConfig) -> Result<AsymptoticFit> {
    if u.is_zero() {
        return Ok(AsymptoticFit::zero());
    }
    let f = &cfg.fit;
    let g = fit_gamma(u, &f.lengths, solver)?;
    let s = fit_sigma(u, &f.distances, &f.lengths, f.aspect, solver)?;
    Ok(g.with_sigma(&s))
}

fn particle_count(cfg: &RunConfig, rho: f64) -> usize {
    (rho * cfg.box_length).round() as usize
}

fn first_seed(cfg: &RunConfig) -> u64 {
    cfg.seeds[0]
}

fn cmd_sample(cfg: &RunConfig) -> Result<Report> {
    let seed = first_seed(cfg);
    let pieces = sample_pieces(cfg.box_length, seed)?;
    let edges: Vec<f64> = (0..=10).map(f64::from).collect();
    let h = piece_length_histogram(&pieces, &edges)?;
    let ks = ks_exponential(&pieces)?;
    let n = pieces.piece_count();
    let lengths = pieces.lengths();
    let rows = pieces.pieces().iter().enumerate().map(|(i, p)| {
        vec![
            i.to_string(),
            p.left.to_string(),
            p.right.to_string(),
            p.length.to_string(),
        ]
    });
    let csv = csv_table(&["index", "left", "right", "length"], rows);
    let hist: Vec<Value> = h
        .counts
        .iter()
        .zip(&h.expected)
        .zip(h.bin_edges.windows(2))
        .map(|((c, e), w)| json!({"lo": w[0], "hi": w[1], "count": c, "expected": e}))
        .collect();
    Ok(Report::json(stamp(
        "sample",
        cfg,
        json!({
            "seed": seed,
            "piece_count": n,
            "mean_length": lengths.iter().sum::<f64>() / n as f64,
            "max_length": max_piece_length(&pieces)?,
            "ks_statistic": ks,
            "ks_critical_1pct": ks_critical_1pct(n),
            "histogram": hist,
        }),
    ))
    .with_csv("pieces.csv", csv))
}

fn cmd_decompose(cfg: &RunConfig) -> Result<Report> {
    let setup = Setup::new(cfg, cfg.rho)?;
    let seed = first_seed(cfg);
    let d = setup.decomposition(cfg, seed)?;
    let l = d.params.minimal_length;
    let m = d.params.interaction_range;
    let length_bins = [(l, l + 1.0), (l + 1.0, l + 2.0), (l + 2.0, f64::INFINITY)];
    let gap_bins = if m > 0.0 {
        vec![(0.0, m / 2.0), (m / 2.0, m)]
    } else {
        vec![]
    };
    let stats = chain_statistics(&d, &length_bins, &gap_bins)?;
    let by_size = |k: usize| d.chains.iter().filter(|c| c.size() == k).count();
    let rows = d.chains.iter().enumerate().map(|(c, ch)| {
        let join = |v: Vec<String>| v.join(" ");
        vec![
            c.to_string(),
            ch.size().to_string(),
            d.in_small[c].to_string(),
            ch.cap().to_string(),
            join(ch.pieces.iter().map(|x| x.to_string()).collect()),
            join(ch.lengths.iter().map(|x| x.to_string()).collect()),
            join(ch.gaps.iter().map(|x| x.to_string()).collect()),
        ]
    });
    let csv = csv_table(
        &["chain", "size", "small", "cap", "pieces", "lengths", "gaps"],
        rows,
    );
    let z = |b: &crate::chains::BinCount| json!({"label": b.label, "count": b.count, "expected": b.expected, "z": b.zscore()});
    Ok(Report::json(stamp(
        "decompose",
        cfg,
        json!({
            "seed": seed,
            "minimal_length": l,
            "fermi_length": d.params.fermi_length,
            "piece_count": d.piece_lengths.len(),
            "chain_count": d.chains.len(),
            "chains_of_size_1": by_size(1),
            "chains_of_size_2": by_size(2),
            "small_chains": d.small_chains().count(),
            "leftover_pieces": d.leftover_pieces().len(),
            "total_cap": d.total_cap(),
            "size1": stats.size1.iter().map(z).collect::<Vec<_>>(),
            "size2": stats.size2.iter().map(z).collect::<Vec<_>>(),
        }),
    ))
    .with_csv("chains.csv", csv))
}

fn cmd_levels(cfg: &RunConfig) -> Result<Report> {
    let setup = Setup::new(cfg, cfg.rho)?;
    let seed = first_seed(cfg);
    let d = setup.decomposition(cfg, seed)?;
    let pool = build_level_pool(&d, &setup.engine()?)?;
    let rows = pool.entries.iter().map(|e| {
        vec![
            e.chain.to_string(),
            e.kappa.to_string(),
            e.value.to_string(),
            e.admissible.to_string(),
        ]
    });
    let csv = csv_table(&["chain", "kappa", "value", "admissible"], rows);
    let lowest: Vec<f64> = pool.entries.iter().take(10).map(|e| e.value).collect();
    Ok(Report::json(stamp(
        "levels",
        cfg,
        json!({
            "seed": seed,
            "pool_size": pool.len(),
            "admissible": pool.admissible().count(),
            "pool_over_2n": pool.len() as f64 / (2.0 * cfg.rho * cfg.box_length),
            "lowest": lowest,
        }),
    ))
    .with_csv("levels.csv", csv))
}

fn cmd_fit(
    cfg: &RunConfig,
    lengths: &Option<String>,
    distances: &Option<String>,
) -> Result<Report> {
    let mut cfg = cfg.clone();
    if let Some(s) = lengths {
        cfg.fit.lengths = parse_list(s)?;
    }
    if let Some(s) = distances {
        cfg.fit.distances = parse_list(s)?;
    }
    let u = cfg.potential()?;
    let solver = cfg.solver_config();
    let g = fit_gamma(&u, &cfg.fit.lengths, &solver)?;
    let s = fit_sigma(
        &u,
        &cfg.fit.distances,
        &cfg.fit.lengths,
        cfg.fit.aspect,
        &solver,
    )?;
    let fit = g.with_sigma(&s);
    let mut buf = Vec::new();
    fit.write_csv(&mut buf)?;
    let csv = String::from_utf8(buf).expect("utf8 csv");
    Ok(Report::json(stamp(
        "fit",
        &cfg,
        json!({
            "gamma": fit.gamma,
            "sigma_d": fit.sigma_d,
            "sigma": fit.sigma_values,
            "range": fit.range,
            "points": fit.points,
        }),
    ))
    .with_csv("fit.csv", csv)
    .csv_default())
}

fn cmd_ground(cfg: &RunConfig) -> Result<Report> {
    let setup = Setup::new(cfg, cfg.rho)?;
    let seed = first_seed(cfg);
    let d = setup.decomposition(cfg, seed)?;
    let pool = build_level_pool(&d, &setup.engine()?)?;
    let n = particle_count(cfg, cfg.rho);
    let g = greedy_fill(&pool, n, &d, cfg.policy)?;
    let max_q = g.occupation.counts.iter().copied().max().unwrap_or(0);
    let mut hist = vec![0usize; max_q + 1];
    for &q in &g.occupation.counts {
        hist[q] += 1;
    }
    let rows = g.occupation.counts.iter().enumerate().map(|(i, q)| {
        vec![
            i.to_string(),
            d.piece_lengths[i].to_string(),
            d.caps[i].to_string(),
            q.to_string(),
        ]
    });
    let csv = csv_table(&["piece", "length", "cap", "q"], rows);
    Ok(Report::json(stamp(
        "ground",
        cfg,
        json!({
            "seed": seed,
            "n": n,
            "energy": g.energy,
            "energy_per_particle": g.energy_per_particle(),
            "energy_p": g.energy_p,
            "energy_n": g.energy_n,
            "particles_in_n": g.particles_in_n,
            "occupied_chains": g.chain_kappa.iter().filter(|&&k| k > 0).count(),
            "pieces_by_occupation": hist,
        }),
    ))
    .with_csv("occupation.csv", csv))
}

/// `points` equally spaced values of `lambda` on `[pi^2/(3 l)^2, pi^2/l^2]`.
pub fn counting_grid(minimal_length: f64, points: usize) -> Vec<f64> {
    let lo = (PI / (3.0 * minimal_length)).powi(2);
    let hi = (PI / minimal_length).powi(2);
    if points < 2 {
        return vec![hi];
    }
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect()
}

fn cmd_counting(cfg: &RunConfig, points: usize) -> Result<Report> {
    if cfg.p != 2 {
        return Err(Error::invalid("counting needs p = 2"));
    }
    let setup = Setup::new(cfg, cfg.rho)?;
    let fit = setup_fit(cfg, &setup)?;
    let grid = counting_grid(setup.params.minimal_length, points);
    let j: Vec<f64> = grid
        .iter()
        .map(|&l| closed_form_j(l, &setup.params, &fit))
        .collect::<Result<_>>()?;
    let engine = setup.engine()?;
    let per_seed: Vec<Vec<f64>> = cfg
        .seeds
        .par_iter()
        .map(|&s| {
            let d = setup.decomposition(cfg, s)?;
            empirical_counting(&build_level_pool(&d, &engine)?, cfg.box_length, &grid)
        })
        .collect::<Result<_>>()?;
    let gaps: Vec<f64> = per_seed
        .iter()
        .map(|e| {
            e.iter()
                .zip(&j)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let (mean, stderr) = mean_stderr(&gaps);
    let mut header = vec!["lambda".to_string(), "j".to_string()];
    header.extend(cfg.seeds.iter().map(|s| format!("seed_{s}")));
    let rows = (0..grid.len()).map(|k| {
        let mut r = vec![grid[k].to_string(), j[k].to_string()];
        r.extend(per_seed.iter().map(|e| e[k].to_string()));
        r
    });
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let csv = csv_table(&header_ref, rows);
    Ok(Report::json(stamp(
        "counting",
        cfg,
        json!({
            "lambda": grid,
            "j": j,
            "sup_gaps": gaps,
            "mean_sup_gap": mean,
            "stderr_sup_gap": stderr,
            "mean_sup_gap_over_rho": mean / cfg.rho,
        }),
    ))
    .with_csv("counting.csv", csv))
}

fn setup_fit(cfg: &RunConfig, setup: &Setup) -> Result<AsymptoticFit> {
    asymptotic_fit(cfg, &setup.potential, &setup.solver)
}

fn fermi_json(rho: f64, params: &ModelParams, f: &FermiSolution) -> Value {
    json!({
        "rho": rho,
        "lambda_rho": f.lambda_rho,
        "delta_rho": f.delta_rho,
        "residual": f.residual,
        "minimal_length": params.minimal_length,
        "fermi_length": params.fermi_length,
        "fermi_energy": params.fermi_energy,
        "sandwich": params.minimal_length < f.delta_rho && f.delta_rho < params.fermi_length,
        "above_free_fermi_energy": params.fermi_energy < f.lambda_rho,
    })
}

fn cmd_fermi(cfg: &RunConfig) -> Result<Report> {
    let setup = Setup::new(cfg, cfg.rho)?;
    let fit = setup_fit(cfg, &setup)?;
    let f = fermi_level(cfg.rho, &setup.params, &fit)?;
    let mut body = fermi_json(cfg.rho, &setup.params, &f);
    body["gamma"] = json!(fit.gamma);
    Ok(Report::json(stamp("fermi", cfg, body)))
}

#[derive(Debug, Clone, Serialize)]
struct CompareRow {
    rho: f64,
    #[serde(rename = "L")]
    box_length: f64,
    seed: u64,
    n: usize,
    #[serde(rename = "E_greedy_per_n")]
    e_greedy_per_n: f64,
    #[serde(rename = "E_test_per_n")]
    e_test_per_n: f64,
    #[serde(rename = "J_lambda_over_rho")]
    j_lambda_over_rho: f64,
    gaps: Gaps,
    lambda_rho: f64,
    delta_rho: f64,
    pool_size: usize,
    leftover_fraction: f64,
    density: Option<DensityColumns>,
}

#[derive(Debug, Clone, Serialize)]
struct Gaps {
    greedy_j: f64,
    test_j: f64,
    greedy_test: f64,
}

#[derive(Debug, Clone, Serialize)]
struct DensityColumns {
    trace_norm_1_over_n: f64,
    trace_norm_2_over_n2: f64,
    changed_blocks: usize,
}

fn compare_rows(
    cfg: &RunConfig,
    rho: f64,
    seeds: &[u64],
    with_densities: bool,
) -> Result<Vec<CompareRow>> {
    if cfg.p != 2 {
        return Err(Error::invalid("greedy/test comparisons need p = 2"));
    }
    let setup = Setup::new(cfg, rho)?;
    let fit = setup_fit(cfg, &setup)?;
    let fermi = fermi_level(rho, &setup.params, &fit)?;
    let j = energy_functional(fermi.lambda_rho, &setup.params, &fit)? / rho;
    let engine = setup.engine()?;
    seeds
        .par_iter()
        .map(|&seed| {
            let r = run_seed(rho, cfg.box_length, seed, &engine, &fit, &fermi, cfg.policy)?;
            let n = r.greedy.occupation.total;
            let (eg, et) = (r.greedy.energy / n as f64, r.e_test / n as f64);
            let density = if with_densities {
                let g = compare_occupations(
                    &r.decomp,
                    &engine,
                    &r.greedy.occupation,
                    &r.test.occupation,
                )?;
                Some(DensityColumns {
                    trace_norm_1_over_n: g.scaled_1,
                    trace_norm_2_over_n2: g.scaled_2,
                    changed_blocks: g.changed_blocks,
                })
            } else {
                None
            };
            Ok(CompareRow {
                rho,
                box_length: cfg.box_length,
                seed,
                n,
                e_greedy_per_n: eg,
                e_test_per_n: et,
                j_lambda_over_rho: j,
                gaps: Gaps {
                    greedy_j: (eg - j).abs(),
                    test_j: (et - j).abs(),
                    greedy_test: (eg - et).abs(),
                },
                lambda_rho: fermi.lambda_rho,
                delta_rho: fermi.delta_rho,
                pool_size: r.pool.len(),
                leftover_fraction: r.greedy.particles_in_n as f64 / n as f64,
                density,
            })
        })
        .collect()
}

fn rows_csv(rows: &[CompareRow]) -> String {
    let header = [
        "rho",
        "L",
        "seed",
        "n",
        "E_greedy_per_n",
        "E_test_per_n",
        "J_lambda_over_rho",
        "gap_greedy_j",
        "gap_test_j",
        "gap_greedy_test",
        "lambda_rho",
        "delta_rho",
        "pool_size",
        "leftover_fraction",
        "trace_norm_1_over_n",
        "trace_norm_2_over_n2",
    ];
    csv_table(
        &header,
        rows.iter().map(|r| {
            let (d1, d2) = r
                .density
                .as_ref()
                .map_or((String::new(), String::new()), |d| {
                    (
                        d.trace_norm_1_over_n.to_string(),
                        d.trace_norm_2_over_n2.to_string(),
                    )
                });
            vec![
                r.rho.to_string(),
                r.box_length.to_string(),
                r.seed.to_string(),
                r.n.to_string(),
                r.e_greedy_per_n.to_string(),
                r.e_test_per_n.to_string(),
                r.j_lambda_over_rho.to_string(),
                r.gaps.greedy_j.to_string(),
                r.gaps.test_j.to_string(),
                r.gaps.greedy_test.to_string(),
                r.lambda_rho.to_string(),
                r.delta_rho.to_string(),
                r.pool_size.to_string(),
                r.leftover_fraction.to_string(),
                d1,
                d2,
            ]
        }),
    )
}

fn cmd_compare(cfg: &RunConfig) -> Result<Report> {
    let rows = compare_rows(cfg, cfg.rho, &cfg.seeds, true)?;
    let eg: Vec<f64> = rows.iter().map(|r| r.e_greedy_per_n).collect();
    let et: Vec<f64> = rows.iter().map(|r| r.e_test_per_n).collect();
    let csv = rows_csv(&rows);
    Ok(Report::json(stamp(
        "compare",
        cfg,
        json!({
            "rows": rows,
            "mean_greedy_per_n": mean_stderr(&eg).0,
            "mean_test_per_n": mean_stderr(&et).0,
        }),
    ))
    .with_csv("compare.csv", csv)
    .csv_default())
}

fn cmd_densities(cfg: &RunConfig) -> Result<Report> {
    let setup = Setup::new(cfg, cfg.rho)?;
    let fit = setup_fit(cfg, &setup)?;
    let fermi = fermi_level(cfg.rho, &setup.params, &fit)?;
    let engine = setup.engine()?;
    let gaps: Vec<_> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let r = run_seed(
                cfg.rho,
                cfg.box_length,
                seed,
                &engine,
                &fit,
                &fermi,
                cfg.policy,
            )?;
            let g =
                compare_occupations(&r.decomp, &engine, &r.greedy.occupation, &r.test.occupation)?;
            Ok(json!({"seed": seed, "gap": g}))
        })
        .collect::<Result<_>>()?;
    let scale = cfg.rho.powf(2.0 - cfg.delta);
    Ok(Report::json(stamp(
        "densities",
        cfg,
        json!({
            "seeds": gaps,
            "bound_1": 10.0 * scale,
            "bound_2": 45.0 * scale,
        }),
    )))
}

fn cmd_sweep(cfg: &RunConfig, rhos: &Option<String>) -> Result<Report> {
    let rhos = match rhos {
        Some(s) => parse_list(s)?,
        None => cfg.sweep_rhos.clone(),
    };
    if rhos.is_empty() || rhos.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::invalid("sweep needs positive densities"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let mut rows: Vec<CompareRow> = pool
        .install(|| {
            rhos.par_iter()
                .map(|&rho| compare_rows(cfg, rho, &cfg.seeds, false))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| a.rho.total_cmp(&b.rho).then(a.seed.cmp(&b.seed)));
    let csv = rows_csv(&rows);
    Ok(Report::json(stamp("sweep", cfg, json!({ "rows": rows })))
        .with_csv("sweep.csv", csv)
        .csv_default())
}

fn write_artifacts(dir: &Path, report: &Report) -> Result<()> {
    let io = |e: std::io::Error| Error::invalid(format!("cannot write to {}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let text = serde_json::to_string_pretty(&report.json).expect("json");
    std::fs::write(dir.join("report.json"), text + "\n").map_err(io)?;
    if let Some((name, body)) = &report.csv {
        std::fs::write(dir.join(name), body).map_err(io)?;
    }
    Ok(())
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(&cli.overrides)?;
    let report = match &cli.command {
        Command::Sample => cmd_sample(&cfg),
        Command::Decompose => cmd_decompose(&cfg),
        Command::Levels => cmd_levels(&cfg),
        Command::Fit { lengths, distances } => cmd_fit(&cfg, lengths, distances),
        Command::Ground => cmd_ground(&cfg),
        Command::Counting { points } => cmd_counting(&cfg, *points),
        Command::Fermi => cmd_fermi(&cfg),
        Command::Compare => cmd_compare(&cfg),
        Command::Densities => cmd_densities(&cfg),
        Command::Sweep { rhos } => cmd_sweep(&cfg, rhos),
    }?;
    if let Some(dir) = &cfg.output_dir {
        write_artifacts(dir, &report)?;
    }
    let format = cli.overrides.format.unwrap_or(report.default_format);
    let io = |e: std::io::Error| Error::invalid(format!("stdout: {e}"));
    match (format, &report.csv) {
        (Format::Csv, Some((_, body))) => out.write_all(body.as_bytes()).map_err(io)?,
        _ => writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&report.json).expect("json")
        )
        .map_err(io)?,
    }
    Ok(())
}

/// Parse `argv`, run one subcommand, write its report to `out`; returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_grammar() {
        assert_eq!(parse_seeds("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("3, 1").unwrap(), vec![3, 1]);
        assert!(parse_seeds("5..2").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn config_round_trip() {
        let mut c = RunConfig::default();
        c.seeds = vec![4, 9];
        c.solver.n_modes = Some(24);
        c.output_dir = Some("out".into());
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_json(r#"{"rho": -1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::invalid("x")), 2);
        assert_eq!(exit_code(&Error::numerical("x", 1.0)), 3);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 4);
        let wrapped = Error::InChain {
            chain: 3,
            source: Box::new(Error::NoRoot("x".into())),
        };
        assert_eq!(exit_code(&wrapped), 3);
    }

    #[test]
    fn counting_grid_ends() {
        let g = counting_grid(2.0, 50);
        assert_eq!(g.len(), 50);
        assert!((g[0] - (PI / 6.0).powi(2)).abs() < 1e-15);
        assert!((g[49] - (PI / 2.0).powi(2)).abs() < 1e-15);
    }
}
