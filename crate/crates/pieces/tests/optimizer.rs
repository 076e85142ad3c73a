mod common;

use pieces::chains::{decompose, ModelParams};
use pieces::disorder::PieceConfiguration;
use pieces::optimizer::*;
use pieces::spectra::{LevelEngine, Potential, SolverConfig};
use pieces::Error;
use proptest::prelude::*;
use std::sync::OnceLock;

fn params() -> ModelParams {
    ModelParams::custom(0.05, 1.0, 1.0).unwrap()
}

fn engine() -> &'static LevelEngine {
    static E: OnceLock<LevelEngine> = OnceLock::new();
    E.get_or_init(|| {
        LevelEngine::new(
            Potential::step(1.0, 1.0).unwrap(),
            SolverConfig::default(),
            params(),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn greedy_matches_exhaustive_search(
        lengths in prop::collection::vec(0.1f64..3.2, 2..=8),
        p in 1usize..=2,
        frac in 0.0f64..=1.0,
        merged in any::<bool>(),
    ) {
        let d = decompose(&PieceConfiguration::from_lengths(&lengths).unwrap(), &params(), p).unwrap();
        let cap = d.total_cap();
        prop_assume!(cap > 0 && cap <= BRUTE_MAX_CAPS);
        let n = (frac * cap as f64).round() as usize;
        let policy = if merged { FillPolicy::Merged } else { FillPolicy::PoolFirst };
        let pool = build_level_pool(&d, engine()).unwrap();
        let g = greedy_fill(&pool, n, &d, policy).unwrap();
        let (occ, b) = brute_force_ground(&d, engine(), n, policy).unwrap();
        prop_assert!((g.energy - b).abs() <= 1e-12 * b.abs().max(1e-300));
        prop_assert_eq!(g.occupation.total, n);
        prop_assert!(g.occupation.is_admissible(&d.caps));
        prop_assert!(occ.is_admissible(&d.caps));
    }

    #[test]
    fn chain_levels_increase(lengths in prop::collection::vec(0.1f64..3.2, 2..=8)) {
        let d = decompose(&PieceConfiguration::from_lengths(&lengths).unwrap(), &params(), 2).unwrap();
        let pool = build_level_pool(&d, engine()).unwrap();
        let lv: Vec<(usize, Vec<f64>)> = pool
            .chain_levels
            .iter()
            .enumerate()
            .filter_map(|(c, l)| l.as_ref().map(|l| (c, l.levels.clone())))
            .collect();
        let rep = convexity_check(lv.iter().map(|(c, v)| (*c, v.as_slice())));
        prop_assert!(rep.violations.is_empty(), "{:?}", rep);
    }

    #[test]
    fn greedy_energy_is_monotone_in_n(lengths in prop::collection::vec(0.3f64..3.2, 3..=8)) {
        let d = decompose(&PieceConfiguration::from_lengths(&lengths).unwrap(), &params(), 2).unwrap();
        let pool = build_level_pool(&d, engine()).unwrap();
        let mut last = 0.0;
        for n in 0..=d.total_cap() {
            let e = greedy_fill(&pool, n, &d, FillPolicy::Merged).unwrap().energy;
            prop_assert!(e >= last);
            last = e;
        }
    }
}

#[test]
fn over_capacity_is_infeasible() {
    let d = decompose(
        &PieceConfiguration::from_lengths(&[2.5, 0.5, 1.5]).unwrap(),
        &params(),
        2,
    )
    .unwrap();
    let pool = build_level_pool(&d, engine()).unwrap();
    let n = d.total_cap() + 1;
    assert!(matches!(
        greedy_fill(&pool, n, &d, FillPolicy::Merged),
        Err(Error::Infeasible(_))
    ));
    assert!(matches!(
        brute_force_ground(&d, engine(), n, FillPolicy::Merged),
        Err(Error::Infeasible(_))
    ));
}

#[test]
fn exhaustive_search_refuses_large_instances() {
    let d = decompose(
        &PieceConfiguration::from_lengths(&[1.5; 9]).unwrap(),
        &params(),
        2,
    )
    .unwrap();
    assert!(matches!(
        brute_force_ground(&d, engine(), 1, FillPolicy::Merged),
        Err(Error::TooLarge(_))
    ));
}

#[test]
fn tie_sort_is_stable_by_key() {
    let mut v = vec![(2.0, 'b'), (1.0, 'z'), (2.0 + 1e-15, 'a'), (1.0, 'y')];
    tie_sort(&mut v, |x| x.0, |x| x.1);
    let keys: String = v.iter().map(|x| x.1).collect();
    assert_eq!(keys, "yzab");
}

#[test]
fn identical_pieces_give_degenerate_pool() {
    let d = decompose(
        &PieceConfiguration::from_lengths(&[1.5, 0.6, 0.6, 1.5, 0.6, 0.6, 1.5]).unwrap(),
        &params(),
        1,
    )
    .unwrap();
    let pool = build_level_pool(&d, engine()).unwrap();
    let rep = degeneracy_count(&pool.values(), TIE_REL).unwrap();
    assert_eq!(rep.max_multiplicity, 3);
}
