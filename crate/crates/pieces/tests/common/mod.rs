//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use pieces::densities::{Component, Grid};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn below(r: &mut ChaCha8Rng, n: usize) -> usize {
    (uniform(r) * n as f64) as usize % n
}

fn sine_basis(grid: &Grid, iv: (f64, f64), modes: usize) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = (1..=modes)
        .map(|k| grid.sine_mode(iv.0, iv.1 - iv.0, k))
        .collect();
    DMatrix::from_fn(grid.len(), modes, |i, k| cols[k][i])
}

/// Orthonormal columns: QR of a random `rows x cols` matrix.
fn random_orthonormal(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(rows, cols, |_, _| uniform(r) - 0.5);
    m.qr().q()
}

/// Random factorized state on `intervals` (one component per interval, or a
/// pair spread over two intervals), total particle number in `2..=4`.
pub fn random_components(
    r: &mut ChaCha8Rng,
    grid: &Grid,
    intervals: &[(f64, f64)],
    modes: usize,
) -> Vec<Component> {
    loop {
        let mut comps = Vec::new();
        let mut k = 0;
        while k < intervals.len() {
            let kind = below(r, 3);
            if kind == 2 && k + 1 < intervals.len() {
                // pair across two intervals
                let a = sine_basis(grid, intervals[k], modes);
                let b = sine_basis(grid, intervals[k + 1], modes);
                let mut c = DMatrix::from_fn(modes, modes, |_, _| uniform(r) - 0.5);
                c /= c.norm();
                let d = &a * c * b.transpose();
                comps.push(Component::Pair(
                    (&d - d.transpose()) * std::f64::consts::FRAC_1_SQRT_2,
                ));
                k += 2;
                continue;
            }
            let basis = sine_basis(grid, intervals[k], modes);
            if kind == 1 {
                let mut c = DMatrix::from_fn(modes, modes, |_, _| uniform(r) - 0.5);
                c = &c - c.transpose();
                c /= c.norm();
                comps.push(Component::Pair(&basis * c * basis.transpose()));
            } else {
                let q = 1 + below(r, 2);
                let u = random_orthonormal(r, modes, q);
                let orbs = &basis * u;
                comps.push(Component::Slater(
                    (0..q)
                        .map(|j| orbs.column(j).iter().copied().collect())
                        .collect(),
                ));
            }
            k += 1;
        }
        let n: usize = comps.iter().map(Component::particles).sum();
        if (2..=4).contains(&n) && comps.len() >= 2 {
            return comps;
        }
    }
}

pub fn grid(intervals: &[(f64, f64)], per_length: f64) -> Arc<Grid> {
    Arc::new(Grid::midpoint(intervals, per_length).unwrap())
}
