//! Fitted interaction constants: `gamma` for two particles in one piece and
//! `sigma(d)` for one particle in each of two pieces at distance `d`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_same_piece_pair, solve_two_piece, Potential, SolverConfig};
use crate::error::{Error, Result};

/// One row of the fit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub l: f64,
    /// Distance for sigma rows, empty for gamma rows.
    pub d: Option<f64>,
    pub raw_energy: f64,
    /// `shift * l^3` (gamma) or `shift * a^3 l^6` (sigma).
    pub scaled_correction: f64,
    pub fit_value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFit {
    pub gamma: f64,
    /// Sorted distances and fitted `sigma` there.
    pub sigma_d: Vec<f64>,
    pub sigma_values: Vec<f64>,
    /// Support radius of the potential; `sigma` vanishes beyond it.
    pub range: f64,
    pub fit_lengths: Vec<f64>,
    pub fit_residuals: Vec<f64>,
    pub points: Vec<FitPoint>,
}

impl AsymptoticFit {
    /// Constants of the non-interacting model.
    pub fn zero() -> Self {
        AsymptoticFit {
            gamma: 0.0,
            sigma_d: vec![],
            sigma_values: vec![],
            range: 0.0,
            fit_lengths: vec![],
            fit_residuals: vec![],
            points: vec![],
        }
    }

    /// Hand-set constants: `gamma` and a constant `sigma` on `[0, range]`.
    pub fn constant(gamma: f64, sigma: f64, range: f64) -> Self {
        AsymptoticFit {
            gamma,
            sigma_d: vec![0.0, range],
            sigma_values: vec![sigma, sigma],
            range,
            ..Self::zero()
        }
    }

    /// Linear interpolation, clamped inside `[0, range]`, zero beyond.
    pub fn sigma(&self, d: f64) -> f64 {
        if d > self.range || self.sigma_d.is_empty() {
            return 0.0;
        }
        let xs = &self.sigma_d;
        let ys = &self.sigma_values;
        if d <= xs[0] {
            return ys[0];
        }
        let k = xs.partition_point(|&x| x <= d);
        if k >= xs.len() {
            return *ys.last().unwrap();
        }
        let t = (d - xs[k - 1]) / (xs[k] - xs[k - 1]);
        ys[k - 1] * (1.0 - t) + ys[k] * t
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_values.iter().copied().fold(0.0, f64::max)
    }

    /// `self` with the sigma table of `other`.
    pub fn with_sigma(mut self, other: &AsymptoticFit) -> Self {
        self.sigma_d = other.sigma_d.clone();
        self.sigma_values = other.sigma_values.clone();
        self.range = other.range;
        self.fit_lengths.extend(&other.fit_lengths);
        self.fit_residuals.extend(&other.fit_residuals);
        self.points.extend(other.points.iter().cloned());
        self
    }

    /// CSV with columns `l, d, raw_energy, scaled_correction, fit_value, residual`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for p in &self.points {
            wr.serialize(p)
                .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        }
        wr.flush()
            .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        Ok(())
    }
}

fn check_grid(l_grid: &[f64]) -> Result<()> {
    if l_grid.len() < 3 {
        return Err(Error::invalid("fit needs at least three lengths"));
    }
    if l_grid.windows(2).any(|w| !(w[1] > w[0])) || !(l_grid[0] > 0.0) {
        return Err(Error::invalid(
            "fit lengths must be positive and increasing",
        ));
    }
    Ok(())
}

/// Weighted least squares for `shift_i = c * x_i`; returns `c`.
fn one_parameter_fit(shift: &[f64], x: &[f64]) -> Result<f64> {
    let num: f64 = shift.iter().zip(x).map(|(s, x)| s * x).sum();
    let den: f64 = x.iter().map(|x| x * x).sum();
    if !(den > 0.0) || !num.is_finite() {
        return Err(Error::numerical("singular fit", den));
    }
    Ok(num / den)
}

/// Fit `E(l) = 5 pi^2 / l^2 + gamma / l^3` over `l_grid`.
pub fn fit_gamma(u: &Potential, l_grid: &[f64], cfg: &SolverConfig) -> Result<AsymptoticFit> {
    check_grid(l_grid)?;
    let sols: Vec<_> = l_grid
        .par_iter()
        .map(|&l| solve_same_piece_pair(l, u, cfg.modes.modes(l), cfg))
        .collect::<Result<_>>()?;
    let shifts: Vec<f64> = sols.iter().map(|s| s.shift).collect();
    let x: Vec<f64> = l_grid.iter().map(|l| l.powi(-3)).collect();
    let gamma = one_parameter_fit(&shifts, &x)?;
    let mut out = AsymptoticFit {
        gamma,
        range: u.range(),
        ..AsymptoticFit::zero()
    };
    for (&l, s) in l_grid.iter().zip(&sols) {
        let scaled = s.shift * l.powi(3);
        out.fit_lengths.push(l);
        out.fit_residuals.push(scaled - gamma);
        out.points.push(FitPoint {
            l,
            d: None,
            raw_energy: s.energy,
            scaled_correction: scaled,
            fit_value: gamma,
            residual: scaled - gamma,
        });
    }
    Ok(out)
}

/// Fit `E(l) = pi^2 / (a l)^2 + pi^2 / l^2 + sigma(d) / (a^3 l^6)` over
/// `l_grid` for every `d` in `d_grid`.
pub fn fit_sigma(
    u: &Potential,
    d_grid: &[f64],
    l_grid: &[f64],
    a: f64,
    cfg: &SolverConfig,
) -> Result<AsymptoticFit> {
    check_grid(l_grid)?;
    if !(a >= 1.0) {
        return Err(Error::invalid("aspect a must be >= 1"));
    }
    if d_grid.is_empty() || d_grid.iter().any(|&d| !(d >= 0.0)) {
        return Err(Error::invalid("distances must be non-negative"));
    }
    let mut ds = d_grid.to_vec();
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    let jobs: Vec<(f64, f64)> = ds
        .iter()
        .flat_map(|&d| l_grid.iter().map(move |&l| (d, l)))
        .collect();
    let sols: Vec<_> = jobs
        .par_iter()
        .map(|&(d, l)| {
            solve_two_piece(
                a * l,
                l,
                d,
                u,
                cfg.modes.modes(a * l),
                cfg.modes.modes(l),
                cfg,
            )
        })
        .collect::<Result<_>>()?;
    let mut out = AsymptoticFit {
        range: u.range(),
        ..AsymptoticFit::zero()
    };
    for (k, &d) in ds.iter().enumerate() {
        let rows = &sols[k * l_grid.len()..(k + 1) * l_grid.len()];
        let shifts: Vec<f64> = rows.iter().map(|s| s.shift).collect();
        let x: Vec<f64> = l_grid
            .iter()
            .map(|l| 1.0 / (a.powi(3) * l.powi(6)))
            .collect();
        let sigma = if shifts.iter().all(|&s| s == 0.0) {
            0.0
        } else {
            one_parameter_fit(&shifts, &x)?
        };
        out.sigma_d.push(d);
        out.sigma_values.push(sigma);
        for (&l, s) in l_grid.iter().zip(rows) {
            let scaled = s.shift * a.powi(3) * l.powi(6);
            out.fit_lengths.push(l);
            out.fit_residuals.push(scaled - sigma);
            out.points.push(FitPoint {
                l,
                d: Some(d),
                raw_energy: s.energy,
                scaled_correction: scaled,
                fit_value: sigma,
                residual: scaled - sigma,
            });
        }
    }
    Ok(out)
}
