mod common;

use pieces::chains::{decompose, ModelParams};
use pieces::densities::*;
use pieces::disorder::PieceConfiguration;
use pieces::optimizer::Occupation;
use pieces::spectra::{
    solve_same_piece_pair, solve_two_piece, LevelEngine, ModeRule, Potential, SolverConfig,
};
use proptest::prelude::*;

#[test]
fn slater_density_matches_defining_integral() {
    let g = common::grid(&[(0.0, 2.0)], 20.0);
    let orbs = vec![g.sine_mode(0.0, 2.0, 1), g.sine_mode(0.0, 2.0, 3)];
    let direct = slater_one_density(&orbs, &g).unwrap();
    let (brute, _) = brute_force_densities(&g, &[Component::Slater(orbs)]).unwrap();
    assert_eq!(g.len(), 40);
    assert!(direct.max_kernel_error(&brute).unwrap() < 1e-8);
    assert!((direct.trace - 2.0).abs() < 1e-12);
}

#[test]
fn two_single_particles_antisymmetrized() {
    let g = common::grid(&[(0.0, 1.0), (1.5, 2.5)], 20.0);
    let comps = vec![
        Component::Slater(vec![g.sine_mode(0.0, 1.0, 1)]),
        Component::Slater(vec![g.sine_mode(1.5, 1.0, 2)]),
    ];
    let (f1, f2) = factorized_densities(&g, &comps).unwrap();
    let (b1, b2) = brute_force_densities(&g, &comps).unwrap();
    assert!(f1.max_kernel_error(&b1).unwrap() < 1e-8);
    assert!(f2.max_kernel_error(&b2).unwrap() < 1e-8);
    assert!((f2.trace - 1.0).abs() < 1e-12);
}

#[test]
fn random_factorized_states_match_brute_force() {
    let iv = [(0.0, 0.5), (0.8, 1.3), (1.6, 2.0)];
    let g = common::grid(&iv, 20.0);
    let mut r = common::rng(11);
    for _ in 0..4 {
        let comps = common::random_components(&mut r, &g, &iv, 4);
        let n: usize = comps.iter().map(Component::particles).sum();
        let (f1, f2) = factorized_densities(&g, &comps).unwrap();
        let (b1, b2) = brute_force_densities(&g, &comps).unwrap();
        assert!(f1.max_kernel_error(&b1).unwrap() < 1e-8);
        assert!(f2.max_kernel_error(&b2).unwrap() < 1e-8);
        assert!((f1.trace - n as f64).abs() < 1e-10);
        assert!((f2.trace - (n * (n - 1)) as f64 / 2.0).abs() < 1e-10);
        assert!(f1.hermitian_defect() < 1e-10 && f2.hermitian_defect() < 1e-10);
        assert!(f1.min_eigenvalue() > -1e-8 && f2.min_eigenvalue() > -1e-8);
    }
}

#[test]
fn overlapping_components_rejected() {
    let g = common::grid(&[(0.0, 1.0)], 20.0);
    let comps = vec![
        Component::Slater(vec![g.sine_mode(0.0, 1.0, 1)]),
        Component::Slater(vec![g.sine_mode(0.0, 1.0, 2)]),
    ];
    assert!(factorized_densities(&g, &comps).is_err());
}

#[test]
fn free_pair_is_a_slater_state() {
    let cfg = SolverConfig::default().with_modes(ModeRule::Fixed(8));
    let g = common::grid(&[(0.0, 2.0)], 20.0);
    let sol = solve_same_piece_pair(2.0, &Potential::zero(), 8, &cfg).unwrap();
    let (p1, _) = pair_state_densities(
        &sol,
        PairPlacement::SamePiece {
            start: 0.0,
            length: 2.0,
        },
        &g,
    )
    .unwrap();
    let s = slater_one_density(&[g.sine_mode(0.0, 2.0, 1), g.sine_mode(0.0, 2.0, 2)], &g).unwrap();
    assert!(p1.max_kernel_error(&s).unwrap() < 1e-8);
}

#[test]
fn pieces_beyond_range_give_product_state() {
    let cfg = SolverConfig::default().with_modes(ModeRule::Fixed(6));
    let u = Potential::step(1.0, 1.0).unwrap();
    let g = common::grid(&[(0.0, 1.5), (2.6, 4.6)], 20.0);
    let sol = solve_two_piece(1.5, 2.0, 1.1, &u, 6, 6, &cfg).unwrap();
    let place = PairPlacement::TwoPiece {
        left_start: 0.0,
        left_length: 1.5,
        right_start: 2.6,
        right_length: 2.0,
    };
    let (p1, _) = pair_state_densities(&sol, place, &g).unwrap();
    let a = slater_one_density(&[g.sine_mode(0.0, 1.5, 1), g.sine_mode(2.6, 2.0, 1)], &g).unwrap();
    assert!(p1.max_kernel_error(&a).unwrap() < 1e-8);
}

#[test]
fn interacting_pair_normalization() {
    let cfg = SolverConfig::default();
    let u = Potential::step(1.0, 1.0).unwrap();
    let l = 20.0;
    let n = cfg.modes.modes(l);
    let sol = solve_same_piece_pair(l, &u, n, &cfg).unwrap();
    // 20 nodes per unit length would make the order-2 kernel huge; order 1 suffices
    let g = common::grid(&[(0.0, l)], 20.0);
    let psi = pair_wavefunction(
        &sol,
        PairPlacement::SamePiece {
            start: 0.0,
            length: l,
        },
        &g,
    );
    let w: Vec<f64> = g.weights.iter().map(|w| w.sqrt()).collect();
    let pw = nalgebra::DMatrix::from_fn(g.len(), g.len(), |i, j| w[i] * psi[(i, j)] * w[j]);
    let gamma1 = &pw * pw.transpose() * 2.0;
    assert!((gamma1.trace() - 2.0).abs() < 1e-8);
}

fn tiny_instance() -> (pieces::chains::ChainDecomposition, LevelEngine, Vec<f64>) {
    // chain [0.46, 0.47] linked over 0.2; isolated 0.92 and 0.46 pieces
    let lengths = [0.46, 0.2, 0.47, 0.4, 0.4, 0.4, 0.92, 0.4, 0.4, 0.4, 0.46];
    let cfg_pieces = PieceConfiguration::from_lengths(&lengths).unwrap();
    let params = ModelParams::custom(0.05, 1.0, 0.45).unwrap();
    let decomp = decompose(&cfg_pieces, &params, 2).unwrap();
    let cfg = SolverConfig {
        same_table: None,
        ..SolverConfig::default().with_modes(ModeRule::Fixed(4))
    };
    let engine = LevelEngine::new(Potential::step(1.0, 1.0).unwrap(), cfg, params).unwrap();
    let starts = cfg_pieces.pieces().iter().map(|p| p.left).collect();
    (decomp, engine, starts)
}

#[test]
fn blockwise_distance_matches_grid_kernels() {
    let (decomp, engine, starts) = tiny_instance();
    assert_eq!(decomp.chains.len(), 3);
    assert!(decomp.in_small.iter().all(|&s| s));
    let occupied = [0usize, 2, 6, 10];
    let iv: Vec<(f64, f64)> = occupied
        .iter()
        .map(|&i| (starts[i], starts[i] + decomp.piece_lengths[i]))
        .collect();
    let g = common::grid(&iv, 20.0);
    let mut a = vec![0; 11];
    let mut b = vec![0; 11];
    // chain pair (1,1) + one on the long piece + one on the last piece,
    // against one on the chain + a same-piece pair + one on the last piece
    (a[0], a[2], a[6], a[10]) = (1, 1, 1, 1);
    (b[0], b[2], b[6], b[10]) = (0, 1, 2, 1);
    let (oa, ob) = (Occupation::new(a), Occupation::new(b));
    let gap = compare_occupations(&decomp, &engine, &oa, &ob).unwrap();
    assert_eq!(gap.changed_blocks, 2);
    let ca = occupation_components(&decomp, &engine, &oa, &starts, &g).unwrap();
    let cb = occupation_components(&decomp, &engine, &ob, &starts, &g).unwrap();
    let (a1, a2) = factorized_densities(&g, &ca).unwrap();
    let (b1, b2) = factorized_densities(&g, &cb).unwrap();
    let d1 = trace_norm_distance(&a1, &b1).unwrap();
    let d2 = trace_norm_distance(&a2, &b2).unwrap();
    assert!(
        (gap.trace_norm_1 - d1).abs() < 1e-8,
        "{} {d1}",
        gap.trace_norm_1
    );
    assert!(
        (gap.trace_norm_2 - d2).abs() < 1e-8 + gap.truncation_bound,
        "{} {d2}",
        gap.trace_norm_2
    );
    assert!(gap.trace_norm_1 <= 2.0 * gap.outside_common as f64);
}

#[test]
fn identical_occupations_are_at_distance_zero() {
    let (decomp, engine, _) = tiny_instance();
    let o = Occupation::new(vec![1, 0, 1, 0, 0, 0, 2, 0, 0, 0, 0]);
    let gap = compare_occupations(&decomp, &engine, &o, &o).unwrap();
    assert_eq!(
        (gap.changed_blocks, gap.trace_norm_1, gap.trace_norm_2),
        (0, 0.0, 0.0)
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trace_distance_is_a_metric(seed in any::<u64>()) {
        let g = common::grid(&[(0.0, 1.0)], 20.0);
        let mut r = common::rng(seed);
        let mut kernel = || {
            let q = 1 + common::below(&mut r, 3);
            let c = nalgebra::DMatrix::from_fn(6, q, |_, _| common::uniform(&mut r) - 0.5).qr().q();
            let basis: Vec<Vec<f64>> = (1..=6).map(|k| g.sine_mode(0.0, 1.0, k)).collect();
            let orbs: Vec<Vec<f64>> = (0..q)
                .map(|j| (0..g.len()).map(|x| (0..6).map(|k| c[(k, j)] * basis[k][x]).sum()).collect())
                .collect();
            slater_one_density(&orbs, &g).unwrap()
        };
        let (a, b, c) = (kernel(), kernel(), kernel());
        let ab = trace_norm_distance(&a, &b).unwrap();
        let ba = trace_norm_distance(&b, &a).unwrap();
        let bc = trace_norm_distance(&b, &c).unwrap();
        let ac = trace_norm_distance(&a, &c).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(trace_norm_distance(&a, &a).unwrap() <= 1e-9);
    }
}

#[test]
fn sine_mode_normalization() {
    let g = common::grid(&[(1.0, 3.0)], 25.0);
    let v = g.sine_mode(1.0, 2.0, 5);
    let s: f64 = v.iter().zip(&g.weights).map(|(v, w)| v * v * w).sum();
    assert!((s - 1.0).abs() < 1e-12);
    assert!(v.iter().all(|x| x.abs() <= 1.0 + 1e-12));
}
