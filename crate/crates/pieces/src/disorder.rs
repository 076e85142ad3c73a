//! Poisson fragmentation of the box [0, L].
//!
//! Points are drawn with unit intensity and `x0 = 0` always present. The
//! pieces are the intervals between consecutive points; the trailing stub
//! `[x_m, L]` has no Dirichlet wall on its right and is not a piece.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with `seed_from_u64`;
//! gaps use the inverse CDF `-ln(1 - u)` with `u` built from the top 53 bits
//! of each draw, so a seed gives the same configuration on every platform.

use std::io::Write;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub left: f64,
    pub right: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceConfiguration {
    box_length: f64,
    points: Vec<f64>,
    pieces: Vec<Piece>,
}

impl PieceConfiguration {
    /// Build from explicit points; `points[0]` must be 0 and the sequence
    /// strictly increasing inside `[0, box_length]`.
    pub fn from_points(box_length: f64, points: Vec<f64>) -> Result<Self> {
        if !(box_length > 0.0) || !box_length.is_finite() {
            return Err(Error::invalid(format!(
                "box length must be positive, got {box_length}"
            )));
        }
        if points.first() != Some(&0.0) {
            return Err(Error::invalid("first point must be 0"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("points must be strictly increasing"));
        }
        if *points.last().unwrap() > box_length {
            return Err(Error::invalid("points must lie in [0, L]"));
        }
        let pieces = points
            .windows(2)
            .map(|w| Piece {
                left: w[0],
                right: w[1],
                length: w[1] - w[0],
            })
            .collect();
        Ok(PieceConfiguration {
            box_length,
            points,
            pieces,
        })
    }

    /// Consecutive pieces with the given lengths, starting at 0, no stub.
    pub fn from_lengths(lengths: &[f64]) -> Result<Self> {
        let mut points = Vec::with_capacity(lengths.len() + 1);
        let mut x = 0.0;
        points.push(x);
        for &l in lengths {
            if !(l > 0.0) {
                return Err(Error::invalid("piece lengths must be positive"));
            }
            x += l;
            points.push(x);
        }
        let total = x.max(f64::MIN_POSITIVE);
        Self::from_points(total, points)
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// m(w): number of sampled points in (0, L].
    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.length).collect()
    }

    /// Length of the excluded trailing interval [x_m, L].
    pub fn stub(&self) -> f64 {
        self.box_length - self.points.last().copied().unwrap_or(0.0)
    }
}

/// Uniform draw in [0, 1) from the top 53 bits.
#[inline]
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn sample_pieces(box_length: f64, seed: u64) -> Result<PieceConfiguration> {
    if !(box_length > 0.0) || !box_length.is_finite() {
        return Err(Error::invalid(format!(
            "box length must be positive, got {box_length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(box_length as usize + 16);
    points.push(0.0);
    let mut x = 0.0;
    loop {
        x += -(1.0 - unit(&mut rng)).ln();
        if x > box_length {
            break;
        }
        // a zero-length gap has probability 2^-53 per draw; skip it to keep
        // the points strictly increasing
        if x > *points.last().unwrap() {
            points.push(x);
        }
    }
    PieceConfiguration::from_points(box_length, points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub expected: Vec<f64>,
}

impl LengthHistogram {
    /// (count - expected) / sqrt(expected); 0 for empty expectations.
    pub fn zscores(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.expected)
            .map(|(&c, &e)| {
                if e > 0.0 {
                    (c as f64 - e) / e.sqrt()
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::invalid(format!("csv output: {e}"));
        out.write_record(["bin_lo", "bin_hi", "count", "expected", "zscore"])
            .map_err(io)?;
        let z = self.zscores();
        for j in 0..self.counts.len() {
            out.write_record(&[
                self.bin_edges[j].to_string(),
                self.bin_edges[j + 1].to_string(),
                self.counts[j].to_string(),
                self.expected[j].to_string(),
                z[j].to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()
            .map_err(|e| Error::invalid(format!("csv output: {e}")))?;
        Ok(())
    }
}

/// e^{-a} - e^{-b}, the exponential mass of [a, b).
pub fn exp_mass(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    (-a).exp() - (-b).exp()
}

/// Counts of piece lengths in `[edge_j, edge_{j+1})` next to L(e^{-a} - e^{-b}).
pub fn piece_length_histogram(
    cfg: &PieceConfiguration,
    bin_edges: &[f64],
) -> Result<LengthHistogram> {
    if bin_edges.len() < 2 {
        return Err(Error::invalid("need at least two bin edges"));
    }
    if bin_edges.iter().any(|e| e.is_nan() || *e < 0.0) {
        return Err(Error::invalid("bin edges must be non-negative"));
    }
    if bin_edges.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("bin edges must be sorted"));
    }
    let nb = bin_edges.len() - 1;
    let mut counts = vec![0u64; nb];
    for p in cfg.pieces() {
        // last bin whose lower edge is <= length
        let j = bin_edges.partition_point(|&e| e <= p.length);
        if j >= 1 && j <= nb && p.length < bin_edges[j] {
            counts[j - 1] += 1;
        }
    }
    let expected = bin_edges
        .windows(2)
        .map(|w| cfg.box_length() * exp_mass(w[0], w[1]))
        .collect();
    Ok(LengthHistogram {
        bin_edges: bin_edges.to_vec(),
        counts,
        expected,
    })
}

pub fn max_piece_length(cfg: &PieceConfiguration) -> Result<f64> {
    cfg.pieces()
        .iter()
        .map(|p| p.length)
        .reduce(f64::max)
        .ok_or_else(|| Error::EmptyDomain("configuration has no pieces".into()))
}

/// Pattern count and its closed-form expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternCount {
    pub count: u64,
    pub expected: f64,
}

/// Distance between consecutive long pieces (length >= `l_min`), measured
/// between facing endpoints. Entry `k` is the gap after the k-th long piece.
pub fn long_piece_gaps(cfg: &PieceConfiguration, l_min: f64) -> (Vec<usize>, Vec<f64>) {
    let long: Vec<usize> = (0..cfg.piece_count())
        .filter(|&i| cfg.pieces()[i].length >= l_min)
        .collect();
    let gaps = long
        .windows(2)
        .map(|w| cfg.pieces()[w[1]].left - cfg.pieces()[w[0]].right)
        .collect();
    (long, gaps)
}

/// Runs of consecutive long pieces whose lengths fall in `length_windows`
/// (half-open `[a, b)`) and whose separating gaps fall in `gap_windows`
/// (`(c, d]`: directly adjacent long pieces have gap 0 and never match).
pub fn gap_pattern_count(
    cfg: &PieceConfiguration,
    length_windows: &[(f64, f64)],
    gap_windows: &[(f64, f64)],
    l_min: f64,
) -> Result<PatternCount> {
    let k = length_windows.len();
    if k == 0 || gap_windows.len() + 1 != k {
        return Err(Error::invalid("need k length windows and k-1 gap windows"));
    }
    if length_windows
        .iter()
        .chain(gap_windows)
        .any(|&(a, b)| !(a <= b) || a < 0.0)
    {
        return Err(Error::invalid("windows must satisfy 0 <= lo <= hi"));
    }
    let (long, gaps) = long_piece_gaps(cfg, l_min);
    let lengths: Vec<f64> = long.iter().map(|&i| cfg.pieces()[i].length).collect();
    let mut count = 0u64;
    if long.len() >= k {
        'start: for s in 0..=long.len() - k {
            for (j, &(a, b)) in length_windows.iter().enumerate() {
                let l = lengths[s + j];
                if !(l >= a && l < b) {
                    continue 'start;
                }
            }
            for (j, &(c, d)) in gap_windows.iter().enumerate() {
                let g = gaps[s + j];
                if !(g > c && g <= d) {
                    continue 'start;
                }
            }
            count += 1;
        }
    }
    let expected = cfg.box_length()
        * gap_windows.iter().map(|&(c, d)| d - c).product::<f64>()
        * length_windows
            .iter()
            .map(|&(a, b)| exp_mass(a, b))
            .product::<f64>();
    Ok(PatternCount { count, expected })
}

/// Kolmogorov-Smirnov distance between the piece lengths and Exponential(1).
pub fn ks_exponential(cfg: &PieceConfiguration) -> Result<f64> {
    let mut l = cfg.lengths();
    if l.is_empty() {
        return Err(Error::EmptyDomain("configuration has no pieces".into()));
    }
    l.sort_by(f64::total_cmp);
    let n = l.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in l.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    Ok(d)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}
