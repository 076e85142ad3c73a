//! Length thresholds and the split of a configuration into chains.
//!
//! A chain is a maximal run of consecutive long pieces (length at least
//! `l_{rho,U}`) in which neighbours sit at distance `d` with `0 < d <= M`,
//! `d` measured between facing endpoints. Long pieces that share an endpoint
//! (`d = 0`, no short piece in between) are not linked; this is what makes
//! the chain statistics come out as `(1 - M e^{-l})^2` per chain.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::disorder::{exp_mass, PieceConfiguration};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = f64> {
    pub density: T,
    pub interaction_range: T,
    pub fermi_length: T,
    pub minimal_length: T,
    pub fermi_energy: T,
}

/// l_rho = -ln(rho / (1 + rho)).
pub fn fermi_length<T: Real>(rho: T) -> T {
    (T::one() + rho.recip()).ln()
}

pub fn model_params<T: Real>(rho: T, m: T) -> Result<ModelParams<T>> {
    if !(rho > T::zero()) || !rho.is_finite() {
        return Err(Error::invalid("density must be positive"));
    }
    if !(m >= T::zero()) || !m.is_finite() {
        return Err(Error::invalid("interaction range must be non-negative"));
    }
    let l_rho = fermi_length(rho);
    let l_min = l_rho - (lit::<T>(4.0) * m + lit(6.0)) * rho;
    if !(l_min > T::zero()) {
        return Err(Error::DensityTooLarge {
            minimal_length: l_min.to_f64().unwrap_or(f64::NAN),
        });
    }
    let e = T::PI() / l_rho;
    Ok(ModelParams {
        density: rho,
        interaction_range: m,
        fermi_length: l_rho,
        minimal_length: l_min,
        fermi_energy: e * e,
    })
}

impl ModelParams<f64> {
    /// Parameters with a hand-chosen minimal length (synthetic instances).
    /// The Fermi length and energy still follow from `density`.
    pub fn custom(density: f64, interaction_range: f64, minimal_length: f64) -> Result<Self> {
        let mut p = model_params(density, 0.0)?;
        if !(minimal_length > 0.0) {
            return Err(Error::DensityTooLarge { minimal_length });
        }
        p.interaction_range = interaction_range;
        p.minimal_length = minimal_length;
        Ok(p)
    }

    /// floor(l / l_{rho,U}).
    pub fn cap(&self, length: f64) -> usize {
        (length / self.minimal_length).floor() as usize
    }
}

/// Whether two long pieces at facing distance `d` interact.
#[inline]
pub fn linked(d: f64, m: f64) -> bool {
    d > 0.0 && d <= m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub pieces: Vec<usize>,
    pub lengths: Vec<f64>,
    /// Facing-endpoint distances between consecutive members.
    pub gaps: Vec<f64>,
    pub caps: Vec<usize>,
}

impl Chain {
    pub fn size(&self) -> usize {
        self.pieces.len()
    }

    /// Total capacity, the sum of the member caps.
    pub fn cap(&self) -> usize {
        self.caps.iter().sum()
    }

    pub fn first(&self) -> usize {
        self.pieces[0]
    }

    pub fn last(&self) -> usize {
        *self.pieces.last().unwrap()
    }

    /// Facing distance between members `a < b` (sum of the gaps and of the
    /// member lengths strictly between them).
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let mut d = 0.0;
        for k in a..b {
            d += self.gaps[k];
            if k > a {
                d += self.lengths[k];
            }
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDecomposition {
    pub params: ModelParams,
    pub p: usize,
    pub box_length: f64,
    pub chains: Vec<Chain>,
    /// Per chain: true when it belongs to P_p.
    pub in_small: Vec<bool>,
    /// Per piece: floor(l_i / l_{rho,U}).
    pub caps: Vec<usize>,
    pub piece_lengths: Vec<f64>,
    /// Per piece: owning chain, if the piece is long.
    pub chain_of: Vec<Option<usize>>,
}

impl ChainDecomposition {
    pub fn small_chains(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.chains.len()).filter(|&c| self.in_small[c])
    }

    pub fn leftover_chains(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.chains.len()).filter(|&c| !self.in_small[c])
    }

    /// Pieces of N_p (members of chains outside P_p).
    pub fn leftover_pieces(&self) -> Vec<usize> {
        self.leftover_chains()
            .flat_map(|c| self.chains[c].pieces.iter().copied())
            .collect()
    }

    pub fn short_pieces(&self) -> Vec<usize> {
        (0..self.piece_lengths.len())
            .filter(|&i| self.chain_of[i].is_none())
            .collect()
    }

    pub fn total_cap(&self) -> usize {
        self.caps.iter().sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let chains: Vec<_> = self
            .chains
            .iter()
            .enumerate()
            .map(|(c, ch)| {
                json!({
                    "pieces": ch.pieces.iter().zip(&ch.lengths)
                        .map(|(&i, &l)| json!({"index": i, "length": l, "cap": self.caps[i]}))
                        .collect::<Vec<_>>(),
                    "gaps": ch.gaps,
                    "small": self.in_small[c],
                })
            })
            .collect();
        json!({
            "p": self.p,
            "box_length": self.box_length,
            "minimal_length": self.params.minimal_length,
            "interaction_range": self.params.interaction_range,
            "piece_count": self.piece_lengths.len(),
            "chains": chains,
        })
    }
}

/// One left-to-right sweep over the long pieces.
pub fn decompose(
    cfg: &PieceConfiguration,
    params: &ModelParams,
    p: usize,
) -> Result<ChainDecomposition> {
    if p < 1 {
        return Err(Error::invalid("p must be at least 1"));
    }
    let l_min = params.minimal_length;
    let m = params.interaction_range;
    let pieces = cfg.pieces();
    let caps: Vec<usize> = pieces.iter().map(|x| params.cap(x.length)).collect();
    let mut chain_of = vec![None; pieces.len()];
    let mut chains: Vec<Chain> = Vec::new();
    let mut prev_long: Option<usize> = None;
    for (i, piece) in pieces.iter().enumerate() {
        if piece.length < l_min {
            continue;
        }
        let extend = match prev_long {
            Some(j) => linked(piece.left - pieces[j].right, m),
            None => false,
        };
        if extend {
            let j = prev_long.unwrap();
            let ch = chains.last_mut().unwrap();
            ch.gaps.push(piece.left - pieces[j].right);
            ch.pieces.push(i);
            ch.lengths.push(piece.length);
            ch.caps.push(caps[i]);
        } else {
            chains.push(Chain {
                pieces: vec![i],
                lengths: vec![piece.length],
                gaps: vec![],
                caps: vec![caps[i]],
            });
        }
        chain_of[i] = Some(chains.len() - 1);
        prev_long = Some(i);
    }
    let in_small = chains.iter().map(|c| c.cap() < p + 1).collect();
    Ok(ChainDecomposition {
        params: *params,
        p,
        box_length: cfg.box_length(),
        chains,
        in_small,
        caps,
        piece_lengths: cfg.lengths(),
        chain_of,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCount {
    pub label: String,
    pub count: u64,
    pub expected: f64,
}

impl BinCount {
    /// Poisson-scale z-score.
    pub fn zscore(&self) -> f64 {
        if self.expected > 0.0 {
            (self.count as f64 - self.expected) / self.expected.sqrt()
        } else if self.count == 0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStatistics {
    pub size1: Vec<BinCount>,
    pub size2: Vec<BinCount>,
}

/// Chain counts against the closed-form predictions.
///
/// Size 1: `L (1 - M e^{-l})^2 (e^{-a} - e^{-b})` for length bins `[a, b)`.
/// Size 2: `L (1 - M e^{-l})^2 (g - f)(e^{-a} - e^{-b})(e^{-c} - e^{-d})` for
/// left length in `[a, b)`, right length in `[c, d)` and gap in `(f, g]`.
pub fn chain_statistics(
    decomp: &ChainDecomposition,
    length_bins: &[(f64, f64)],
    gap_bins: &[(f64, f64)],
) -> Result<ChainStatistics> {
    if length_bins.iter().chain(gap_bins).any(|&(a, b)| !(a <= b)) {
        return Err(Error::invalid("bins must satisfy lo <= hi"));
    }
    let prm = &decomp.params;
    let boundary = 1.0 - prm.interaction_range * (-prm.minimal_length).exp();
    let scale = decomp.box_length * boundary * boundary;
    let inside = |l: f64, (a, b): (f64, f64)| l >= a && l < b;
    let mut size1 = Vec::new();
    for &bin in length_bins {
        let count = decomp
            .chains
            .iter()
            .filter(|c| c.size() == 1 && inside(c.lengths[0], bin))
            .count() as u64;
        size1.push(BinCount {
            label: format!("[{}, {})", bin.0, bin.1),
            count,
            expected: scale * exp_mass(bin.0, bin.1),
        });
    }
    let mut size2 = Vec::new();
    for &lb in length_bins {
        for &rb in length_bins {
            for &(f, g) in gap_bins {
                let count = decomp
                    .chains
                    .iter()
                    .filter(|c| {
                        c.size() == 2
                            && inside(c.lengths[0], lb)
                            && inside(c.lengths[1], rb)
                            && c.gaps[0] > f
                            && c.gaps[0] <= g
                    })
                    .count() as u64;
                size2.push(BinCount {
                    label: format!(
                        "[{}, {}) x [{}, {}) gap ({}, {}]",
                        lb.0, lb.1, rb.0, rb.1, f, g
                    ),
                    count,
                    expected: scale * (g - f) * exp_mass(lb.0, lb.1) * exp_mass(rb.0, rb.1),
                });
            }
        }
    }
    Ok(ChainStatistics { size1, size2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        let p = model_params(0.1, 1.0).unwrap();
        assert!((p.fermi_length - 11f64.ln()).abs() < 1e-14);
        assert!((p.minimal_length - (11f64.ln() - 1.0)).abs() < 1e-14);
        let q = model_params(0.1, 0.0).unwrap();
        assert!((q.minimal_length - (11f64.ln() - 0.6)).abs() < 1e-14);
        assert!(matches!(
            model_params(0.5, 10.0),
            Err(Error::DensityTooLarge { .. })
        ));
        assert!(model_params(0.0, 1.0).is_err());
        assert!(model_params(0.1, -1.0).is_err());
    }

    #[test]
    fn thresholds_in_single_precision() {
        let p = model_params(0.1f32, 1.0f32).unwrap();
        assert!((p.minimal_length - (11f32.ln() - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn hand_example() {
        // long (>= 1.4): 2.0 and 1.8 at distance 0.9, then 3.1 at 0.8 + 0.7
        let cfg = PieceConfiguration::from_lengths(&[0.5, 2.0, 0.9, 1.8, 0.8, 0.7, 3.1]).unwrap();
        let prm = ModelParams::custom(0.05, 1.0, 1.4).unwrap();
        let d = decompose(&cfg, &prm, 2).unwrap();
        let members: Vec<_> = d.chains.iter().map(|c| c.pieces.clone()).collect();
        assert_eq!(members, vec![vec![1, 3], vec![6]]);
        assert!((d.chains[0].gaps[0] - 0.9).abs() < 1e-12);
        // caps (1, 1) -> P_2; cap 2 -> P_2
        assert_eq!(d.in_small, vec![true, true]);
        let d1 = decompose(&cfg, &prm, 1).unwrap();
        assert_eq!(d1.in_small, vec![false, false]);
    }

    #[test]
    fn all_short() {
        let cfg = PieceConfiguration::from_lengths(&[0.3, 0.2, 0.9]).unwrap();
        let prm = ModelParams::custom(0.05, 1.0, 1.0).unwrap();
        let d = decompose(&cfg, &prm, 2).unwrap();
        assert!(d.chains.is_empty());
        assert_eq!(d.caps, vec![0, 0, 0]);
        assert_eq!(d.short_pieces(), vec![0, 1, 2]);
    }

    #[test]
    fn adjacent_long_pieces_not_linked() {
        let cfg = PieceConfiguration::from_lengths(&[2.0, 2.5, 3.0]).unwrap();
        let prm = ModelParams::custom(0.05, 0.0, 1.0).unwrap();
        let d = decompose(&cfg, &prm, 2).unwrap();
        assert_eq!(d.chains.len(), 3);
        let prm1 = ModelParams::custom(0.05, 1.0, 1.0).unwrap();
        assert_eq!(decompose(&cfg, &prm1, 2).unwrap().chains.len(), 3);
    }

    #[test]
    fn inclusive_at_range() {
        let cfg = PieceConfiguration::from_lengths(&[2.0, 0.5, 0.5, 2.0]).unwrap();
        let prm = ModelParams::custom(0.05, 1.0, 1.0).unwrap();
        let d = decompose(&cfg, &prm, 2).unwrap();
        assert_eq!(d.chains.len(), 1);
        assert_eq!(d.chains[0].size(), 2);
    }

    #[test]
    fn chain_distance() {
        let c = Chain {
            pieces: vec![0, 2, 4],
            lengths: vec![2.0, 3.0, 2.0],
            gaps: vec![0.5, 0.25],
            caps: vec![1, 1, 1],
        };
        assert_eq!(c.distance(0, 1), 0.5);
        assert_eq!(c.distance(0, 2), 0.5 + 3.0 + 0.25);
    }

    #[test]
    fn empty_gap_window() {
        let cfg = PieceConfiguration::from_lengths(&[2.0, 0.5, 2.0]).unwrap();
        let prm = ModelParams::custom(0.05, 1.0, 1.0).unwrap();
        let d = decompose(&cfg, &prm, 2).unwrap();
        let s = chain_statistics(&d, &[(1.0, 3.0)], &[(0.7, 0.7)]).unwrap();
        assert_eq!(s.size2[0].count, 0);
        assert_eq!(s.size2[0].expected, 0.0);
    }
}
