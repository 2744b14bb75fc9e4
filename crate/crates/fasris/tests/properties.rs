use fasris::channel_model::{
    fas_correlation_matrix, ris_correlation_matrix, select_submatrix, CorrelationMode, PhaseShifts, PlanarFasGeometry,
    PortSelection, RisAngularProfile, Scenario,
};
use fasris::deterministic_rate::{evaluate, Precoder};
use fasris::experiment::{AngularSpec, Axis, BsSpec, GainSpec, PowerSpec, RisSpec, ScenarioSpec, SweepSpec};
use fasris::fixed_point::{solve_rzf_uncommon, SolverSettings};
use fasris::linalg::{self, CMat};
use fasris::monte_carlo::{build_precoder, instantaneous_sinr, PrecoderKind};
use fasris::optimizer::{fw_linear_oracle, gradient_ascent_phases, OptimizerSettings};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(mode: CorrelationMode, m: usize, k: usize, l: usize, seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ang = || AngularSpec {
        dc: 0.5,
        alpha: rng.random_range(-60.0..60.0),
        beta: rng.random_range(5.0..40.0),
        alpha_step: rng.random_range(0.0..15.0),
    };
    let (c_l, c_r) = (ang(), ang());
    ScenarioSpec {
        id: "prop".into(),
        mode,
        m,
        k,
        l,
        snr_db: 10.0 + (seed % 10) as f64,
        bs: BsSpec::Fas { wx: 1.5, wy: 1.0, nx: 4, ny: 3 },
        ris: RisSpec::Angular { c_l, c_r },
        gains: GainSpec::Fixed { u: 0.5 + (seed % 7) as f64 / 7.0, t: 0.3 + (seed % 5) as f64 / 5.0 },
        powers: PowerSpec::Pairs,
    }
}

fn random_phases(l: usize, seed: u64) -> PhaseShifts {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    PhaseShifts::new((0..l).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect())
}

fn random_h(m: usize, k: usize, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CMat::from_fn(m, k, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn mode_strategy() -> impl Strategy<Value = CorrelationMode> {
    prop_oneof![Just(CorrelationMode::Common), Just(CorrelationMode::Uncommon)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ris_correlation_is_hermitian_psd(alpha in -90.0..90.0f64, beta in 2.0..60.0f64, l in 2usize..24) {
        let c = ris_correlation_matrix(&RisAngularProfile { dc: 0.5, alpha, beta, l }).unwrap();
        prop_assert!(linalg::is_hermitian(&c, 1e-12));
        prop_assert!(linalg::min_eigenvalue(&c) >= -1e-10);
    }

    #[test]
    fn fas_correlation_is_hermitian_psd(wx in 0.2..6.0f64, wy in 0.2..6.0f64, nx in 2usize..7, ny in 2usize..7) {
        let a = fas_correlation_matrix(&PlanarFasGeometry { wx, wy, nx, ny }).unwrap();
        prop_assert!(linalg::is_hermitian(&a, 1e-12));
        prop_assert!(linalg::min_eigenvalue(&a) >= -1e-10);
        for i in 0..nx * ny {
            prop_assert!((a[(i, i)].re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_selection_submatrix_is_identity_map(n in 1usize..10, seed in any::<u64>()) {
        let h = random_h(n, n, seed);
        let a = &h * h.adjoint();
        let sub = select_submatrix(&a, &PortSelection::all(n)).unwrap();
        prop_assert_eq!(sub, a);
    }

    #[test]
    fn precoder_meets_power_budget(m in 3usize..10, seed in any::<u64>(), budget in 0.5..20.0f64) {
        let k = 1 + (seed % m as u64) as usize;
        let h = random_h(m, k, seed);
        let p: Vec<f64> = (0..k).map(|i| 0.5 + i as f64).collect();
        for kind in [PrecoderKind::Rzf(0.3), PrecoderKind::Zf, PrecoderKind::Mrt] {
            let g = build_precoder(&h, kind, &p, budget).unwrap();
            let tr: f64 = (0..k).map(|j| p[j] * g.column(j).norm_squared()).sum();
            prop_assert!((tr / budget - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn power_scaling_is_absorbed_and_noise_scaling_is_not(seed in any::<u64>(), c in 0.1..10.0f64) {
        let (m, k) = (6, 3);
        let h = random_h(m, k, seed);
        let p = [1.0, 2.0, 0.5];
        let pc: Vec<f64> = p.iter().map(|x| c * x).collect();
        for kind in [PrecoderKind::Rzf(0.2), PrecoderKind::Zf, PrecoderKind::Mrt] {
            let a = instantaneous_sinr(&h, &build_precoder(&h, kind, &p, 1.0).unwrap(), &p, 0.1);
            let g = build_precoder(&h, kind, &pc, 1.0).unwrap();
            let b = instantaneous_sinr(&h, &g, &pc, 0.1);
            let joint = instantaneous_sinr(&h, &g, &pc, 0.1 * c);
            for i in 0..k {
                prop_assert!((a[i] / b[i] - 1.0).abs() < 1e-9);
                if kind == PrecoderKind::Zf {
                    prop_assert!((a[i] / joint[i] / c - 1.0).abs() < 1e-9);
                } else {
                    prop_assert!(joint[i] <= b[i] || c <= 1.0);
                }
            }
        }
    }

    #[test]
    fn linear_oracle_maximizes_linearization(g in prop::collection::vec(-1.0..1.0f64, 4..9), m in 1usize..4) {
        let v = fw_linear_oracle(&g, m).unwrap();
        prop_assert!(v.is_binary());
        prop_assert_eq!(v.indices().len(), m);
        let val: f64 = g.iter().zip(v.values()).map(|(a, b)| a * b).sum();
        // Best binary vertex with exactly M ones.
        let n = g.len();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == m {
                best = best.max((0..n).filter(|i| mask >> i & 1 == 1).map(|i| g[i]).sum());
            }
        }
        prop_assert!((val - best).abs() < 1e-12);
    }

    #[test]
    fn sweep_values_must_be_sorted(mut v in prop::collection::vec(-100.0..100.0f64, 2..8)) {
        v.dedup();
        let sorted = v.windows(2).all(|w| w[1] > w[0]);
        let mut cfg = fasris::experiment::recipe("fig4").unwrap();
        cfg.sweep = SweepSpec { axis: Axis::SnrDb, values: v };
        prop_assert_eq!(cfg.validate().is_ok(), sorted);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn solution_does_not_depend_on_initialization(seed in any::<u64>()) {
        let sc = spec(CorrelationMode::Uncommon, 6, 3, 8, seed).build().unwrap();
        let st = sc.stats(&PortSelection::uniform(12, 6).unwrap(), &random_phases(8, seed)).unwrap();
        let z = 0.05;
        let a = solve_rzf_uncommon(&st, z, &SolverSettings { init: 1.0, ..Default::default() }).unwrap();
        let b = solve_rzf_uncommon(&st, z, &SolverSettings { init: 10.0, ..Default::default() }).unwrap();
        prop_assert!((a.delta.v / b.delta.v - 1.0).abs() < 1e-8);
        for (x, y) in a.mu.iter().zip(&b.mu) {
            prop_assert!((x.v / y.v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn mu_decreases_in_z(seed in any::<u64>()) {
        let sc = spec(CorrelationMode::Uncommon, 6, 3, 8, seed).build().unwrap();
        let st = sc.stats(&PortSelection::uniform(12, 6).unwrap(), &random_phases(8, seed)).unwrap();
        let s = SolverSettings::default();
        let mut prev: Option<Vec<f64>> = None;
        for i in 0..8 {
            let z = 1e-3 * 4f64.powi(i);
            let mu: Vec<f64> = solve_rzf_uncommon(&st, z, &s).unwrap().mu.iter().map(|x| x.v).collect();
            if let Some(p) = &prev {
                prop_assert!(mu.iter().zip(p).all(|(a, b)| a < b));
            }
            prev = Some(mu);
        }
    }

    #[test]
    fn rzf_dominates_zf(mode in mode_strategy(), seed in any::<u64>()) {
        let sc = spec(mode, 6, 4, 8, seed).build().unwrap();
        let sel = PortSelection::uniform(12, 6).unwrap();
        let phi = random_phases(8, seed);
        let s = SolverSettings::default();
        let rzf = evaluate(&sc, &sel, &phi, Precoder::Rzf, None, &s).unwrap().esr;
        let zf = evaluate(&sc, &sel, &phi, Precoder::Zf, None, &s).unwrap().esr;
        prop_assert!(zf >= 0.0);
        prop_assert!(rzf >= zf * (1.0 - 1e-9), "rzf {} zf {}", rzf, zf);
    }

    #[test]
    fn sinr_is_permutation_equivariant(seed in any::<u64>(), shift in 1usize..4) {
        let sc = spec(CorrelationMode::Uncommon, 6, 4, 8, seed).build().unwrap();
        let k = 4;
        let perm: Vec<usize> = (0..k).map(|i| (i + shift) % k).collect();
        let c = sc.correlations();
        let mut corr = c.clone();
        corr.f_tot = perm.iter().map(|&i| c.f_tot(i).clone()).collect();
        corr.c_r = perm.iter().map(|&i| c.c_r(i).clone()).collect();
        let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let permuted = Scenario::new(*sc.dims(), corr, pick(sc.u()), pick(sc.t()), pick(sc.p()), sc.sigma2()).unwrap();
        let sel = PortSelection::uniform(12, 6).unwrap();
        let phi = random_phases(8, seed);
        let s = SolverSettings::default();
        let a = evaluate(&sc, &sel, &phi, Precoder::Rzf, None, &s).unwrap();
        let b = evaluate(&permuted, &sel, &phi, Precoder::Rzf, None, &s).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((b.sinr[j] / a.sinr[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_ascent_never_decreases(mode in mode_strategy(), seed in any::<u64>()) {
        let sc = spec(mode, 6, 3, 8, seed).build().unwrap();
        let sel = PortSelection::uniform(12, 6).unwrap();
        let phi = random_phases(8, seed);
        let set = OptimizerSettings { phase_max_iter: 15, ..Default::default() };
        let z = 0.05;
        let start = evaluate(&sc, &sel, &phi, Precoder::Rzf, Some(z), &set.solver).unwrap().esr;
        let r = gradient_ascent_phases(&sc, &sel, Precoder::Rzf, z, &phi, &set).unwrap();
        prop_assert!(r.esr >= start);
        prop_assert!(r.records.windows(2).all(|w| w[1].objective >= w[0].objective));
    }
}
