use pieces::chains::*;
use pieces::disorder::*;
use proptest::prelude::*;

#[test]
fn sampling_is_deterministic() {
    let a = sample_pieces(1e3, 9).unwrap();
    let b = sample_pieces(1e3, 9).unwrap();
    assert_eq!(a.points(), b.points());
    assert_ne!(a.points(), sample_pieces(1e3, 10).unwrap().points());
    assert!(sample_pieces(0.0, 1).is_err());
}

#[test]
fn lengths_and_stub_fill_the_box() {
    let c = sample_pieces(5e3, 3).unwrap();
    let s: f64 = c.lengths().iter().sum::<f64>() + c.stub();
    assert!((s - 5e3).abs() <= 1e-12 * 5e3);
    assert_eq!(c.points()[0], 0.0);
}

#[test]
fn piece_count_near_box_length() {
    let l = 1e5;
    let c = sample_pieces(l, 5).unwrap();
    assert!((c.piece_count() as f64 - l).abs() <= 5.0 * l.powf(2.0 / 3.0));
}

#[test]
fn lengths_look_exponential() {
    let good = (1..=20)
        .filter(|&s| {
            let c = sample_pieces(1e4, s).unwrap();
            ks_exponential(&c).unwrap() < ks_critical_1pct(c.piece_count())
        })
        .count();
    assert!(good >= 18);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_invariants(seed in any::<u64>(), p in 1usize..=3) {
        let prm = model_params(0.05, 1.0).unwrap();
        let cfg = sample_pieces(400.0, seed).unwrap();
        let d = decompose(&cfg, &prm, p).unwrap();
        let mut seen = vec![false; cfg.piece_count()];
        for (c, ch) in d.chains.iter().enumerate() {
            prop_assert_eq!(d.in_small[c], ch.cap() <= p);
            for (k, &i) in ch.pieces.iter().enumerate() {
                prop_assert!(!seen[i]);
                seen[i] = true;
                prop_assert!(d.piece_lengths[i] >= prm.minimal_length);
                prop_assert_eq!(d.chain_of[i], Some(c));
                prop_assert_eq!(ch.caps[k], d.caps[i]);
            }
            for &g in &ch.gaps {
                prop_assert!(linked(g, 1.0));
            }
        }
        for (i, &l) in d.piece_lengths.iter().enumerate() {
            prop_assert_eq!(seen[i], l >= prm.minimal_length);
        }
        // consecutive chains are not linked
        for w in d.chains.windows(2) {
            let gap = cfg.pieces()[w[1].first()].left - cfg.pieces()[w[0].last()].right;
            prop_assert!(!linked(gap, 1.0));
        }
    }
}
