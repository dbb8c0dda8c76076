use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rothe_core::assembly::divergence;
use rothe_core::diagnostics::{
    a3_sum, dual_shift, random_smooth_field, sample_level, time_shift_modulus, Level, LevelSummary, ScalingFit,
};
use rothe_core::field::DiscreteField;
use rothe_core::geometry::{
    ale_apply, envelope, estimate_lipschitz, AleMap, EtaShape, LipschitzSampling, Motion, ShearProfile,
};
use rothe_core::grid::{Grid, Layout, Walls};
use rothe_core::rothe_fsi::{run_fsi, FsiParams, Pulse, ShellParams};
use rothe_core::rothe_ns::{run_ns, NsParams};
use rothe_core::spaces::{
    h1_semi_sq, h_mass, l2_sq, leray_project, norm, squeeze, BoxGrid, DualSpace, HQuad, Leray, NormDescriptor,
    NormKind, Region,
};
use std::sync::Arc;

fn layout(nz: usize, nr: usize, walls: Walls) -> Arc<Layout> {
    Arc::new(Layout::new(Grid::new(nz, nr, 2.0).unwrap(), walls).unwrap())
}

fn radial(amp: f64, mode: f64) -> AleMap {
    AleMap::Radial { radius: 1.0, length: 2.0, eta: EtaShape::Sine { amp, mode } }
}

fn profile(linear: bool) -> ShearProfile {
    if linear {
        ShearProfile::Linear
    } else {
        ShearProfile::Sine
    }
}

fn random_level(seed: u64, steps: usize, dt: f64, constant: bool) -> (Level, HQuad) {
    let l = layout(6, 4, Walls::closed());
    let map = AleMap::identity(2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = random_smooth_field(&l, &mut rng);
    let fields = (0..=steps)
        .map(|_| {
            let x = if constant { first.clone() } else { random_smooth_field(&l, &mut rng) };
            DiscreteField::new(l.clone(), map.clone(), x).unwrap()
        })
        .collect();
    let q = HQuad::covering(&[map], 16, 8).unwrap();
    (Level { dt, fields, etas: None, summary: LevelSummary::default() }, q)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ale_step_map_inverts(amp1 in -0.3f64..0.3, amp2 in -0.3f64..0.3, mode in 1.0f64..3.0,
                            z in 0.0f64..2.0, r in 0.0f64..1.0) {
        let (a, b) = (radial(amp1, mode), radial(amp2, 1.0));
        let x = b.apply([z, r]);
        let y = ale_apply(&a, &b, x).unwrap();
        let back = ale_apply(&b, &a, y).unwrap();
        prop_assert!((back[0] - x[0]).abs() <= 1e-12 && (back[1] - x[1]).abs() <= 1e-12);
    }

    #[test]
    fn shear_map_preserves_area(g in -0.5f64..0.5, linear: bool, z in 0.0f64..2.0, r in 0.0f64..1.0) {
        let m = AleMap::Shear { length: 2.0, g, profile: profile(linear) };
        prop_assert!((m.det([z, r]) - 1.0).abs() <= 1e-12);
        let p = m.inverse(m.apply([z, r])).unwrap();
        prop_assert!((p[0] - z).abs() <= 1e-12 && (p[1] - r).abs() <= 1e-12);
    }

    #[test]
    fn envelopes_sandwich_every_level(
        etas in prop::collection::vec(prop::collection::vec(-0.2f64..0.2, 9), 2..8),
        width in 1usize..6,
        start in 0usize..3,
    ) {
        let n = start.min(etas.len() - 1);
        let l = etas.len() - 1 - n;
        let env = envelope(&etas, n, l, width, 2.0).unwrap();
        prop_assert!(env.sandwiches(&etas));
        prop_assert!(env.gap_max >= 0.0 && env.gap_l2 >= 0.0);
    }

    #[test]
    fn power_law_fit_recovers_exponent(c in 0.1f64..10.0, p in -2.0f64..3.0, n in 3usize..8) {
        let x: Vec<f64> = (0..n).map(|k| 0.5f64.powi(k as i32)).collect();
        let y: Vec<f64> = x.iter().map(|v| c * v.powf(p)).collect();
        let f = ScalingFit::fit(&x, &y).unwrap();
        prop_assert!((f.slope - p).abs() <= 1e-9);
        prop_assert!(f.r2 >= 1.0 - 1e-9 || p.abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lipschitz_estimates_tighten_on_supersets(amp in 0.0f64..0.3, omega in 0.5f64..6.0, extra in 1usize..4) {
        let m = Motion::Channel { radius: 1.0, length: 2.0, amp, omega, mode: 1.0 };
        let base: Vec<f64> = (0..4).map(|k| k as f64 * 0.25).collect();
        let mut more = base.clone();
        more.extend((0..extra).map(|k| 0.1 + 0.2 * k as f64));
        let s = |times: Vec<f64>| LipschitzSampling { times, nx: 8, ny: 4, space_radius: 0.3, time_radius: 0.3 };
        let a = estimate_lipschitz(&m, &s(base)).unwrap();
        let b = estimate_lipschitz(&m, &s(more)).unwrap();
        prop_assert!(b.c_lower <= a.c_lower);
        prop_assert!(b.c_upper >= a.c_upper);
    }

    #[test]
    fn shift_modulus_at_one_step_is_a3(seed: u64, steps in 3usize..10) {
        let dt = 1.0 / steps as f64;
        let (level, q) = random_level(seed, steps, dt, false);
        let s = sample_level(&level, &q).unwrap();
        let m = time_shift_modulus(&s, &q, dt, dt).unwrap();
        let a3 = a3_sum(&s, &q, dt);
        prop_assert!((m - a3.sqrt()).abs() <= 1e-12 * a3.sqrt());
    }

    #[test]
    fn shift_modulus_vanishes_for_constant_trajectories(seed: u64, steps in 3usize..10, frac in 0.01f64..0.99) {
        let dt = 1.0 / steps as f64;
        let (level, q) = random_level(seed, steps, dt, true);
        let s = sample_level(&level, &q).unwrap();
        prop_assert_eq!(time_shift_modulus(&s, &q, dt, frac).unwrap(), 0.0);
    }

    #[test]
    fn dual_shift_without_shift_is_zero(seed: u64) {
        let (mut level, _) = random_level(seed, 4, 0.25, false);
        level.etas = Some(vec![vec![0.0; 7]; 5]);
        prop_assert_eq!(dual_shift(&level, 2, 0, 3).unwrap().0, 0.0);
    }

    #[test]
    fn leray_projection_is_idempotent(seed: u64, amp in -0.25f64..0.25) {
        let l = layout(8, 6, Walls::tube());
        let map = radial(amp, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DiscreteField::new(l.clone(), map.clone(), random_smooth_field(&l, &mut rng)).unwrap();
        let p = leray_project(&u).unwrap();
        let pp = leray_project(&p).unwrap();
        let m = h_mass(&l, &map).to_csr();
        let d: Vec<f64> = p.x.iter().zip(&pp.x).map(|(a, b)| a - b).collect();
        prop_assert!(m.quad(&d).sqrt() <= 1e-10 * m.quad(&u.x).sqrt());
    }

    #[test]
    fn l2_dual_norm_is_mass_norm_of_representer(seed: u64, amp in -0.25f64..0.25) {
        let l = layout(8, 6, Walls::tube());
        let map = radial(amp, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_smooth_field(&l, &mut rng);
        let ds = DualSpace::new(l.clone(), map.clone(), NormKind::L2, false).unwrap();
        let q = ds.riesz(&f).unwrap();
        let want = h_mass(&l, &map).to_csr().quad(&q).sqrt();
        prop_assert!((ds.dual_norm(&f).unwrap() - want).abs() <= 1e-10 * want);
    }

    #[test]
    fn squeezing_keeps_fields_solenoidal(seed: u64, amp in -0.2f64..0.2, sigma in 1.0f64..1.2, theta in 0.0f64..1.0) {
        let l = layout(12, 8, Walls::tube());
        let map = radial(amp, 1.0);
        let eta: Vec<f64> = (0..=12).map(|k| EtaShape::Sine { amp, mode: 1.0 }.eval(k as f64 / 6.0, 2.0)).collect();
        let target_eta: Vec<f64> = eta.iter().map(|e| e + theta * (sigma - 1.0) * (1.0 + e)).collect();
        let target = AleMap::Radial { radius: 1.0, length: 2.0, eta: EtaShape::Table(target_eta) };
        let leray = Leray::new(&l, &map).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DiscreteField::new(l.clone(), map, leray.project(&random_smooth_field(&l, &mut rng)).unwrap()).unwrap();
        let s = squeeze(&u, sigma, &target).unwrap();
        let res = divergence(&l, &target).to_csr().mul(&s.x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let h1 = (l2_sq(&u) + h1_semi_sq(&u)).sqrt();
        prop_assert!(res <= 1e-10 * h1, "residual {}", res);
    }

    #[test]
    fn fractional_norm_of_constant_is_its_l2_norm(c0 in -2.0f64..2.0, c1 in -2.0f64..2.0) {
        let l = layout(8, 4, Walls::free());
        let map = AleMap::identity(2.0);
        let u = DiscreteField::from_fn(l, map.clone(), |c, _| if c == rothe_core::grid::Comp::Z { c0 } else { c1 }, |_| 0.0);
        let b = BoxGrid::covering(&[map], 10, 5);
        let l2 = norm(&u, &NormDescriptor { kind: NormKind::L2, region: Region::Maximal(b) }).unwrap();
        let hs = norm(&u, &NormDescriptor { kind: NormKind::Hs(0.3), region: Region::Maximal(b) }).unwrap();
        prop_assert_eq!(hs, l2);
    }

    #[test]
    fn ns_steps_satisfy_the_energy_inequality(seed: u64, amp in 0.0f64..0.2, linear: bool, dt in 0.01f64..0.1) {
        let l = layout(8, 6, Walls::closed());
        let motion = Motion::Shear { length: 2.0, amp, omega: std::f64::consts::TAU, profile: profile(linear) };
        let m0 = motion.map_at(0.0);
        let leray = Leray::new(&l, &m0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u0 = DiscreteField::new(l.clone(), m0, leray.project(&random_smooth_field(&l, &mut rng)).unwrap()).unwrap();
        let params = NsParams { rho: 1.0, mu: 1.0, dt, steps: 5, body_force: [0.0, 0.0], p_in: 0.0, p_out: 0.0 };
        let t = run_ns(&u0, &motion, &params).unwrap();
        let e0 = 0.5 * l2_sq(&u0);
        for r in &t.ledger {
            prop_assert!(r.energy_slack >= -1e-8 * e0, "{:?}", r);
        }
        for u in &t.fields[1..] {
            let div = divergence(&l, &u.map).to_csr().mul(&u.x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(div <= 1e-10 * (l2_sq(u) + h1_semi_sq(u)).sqrt());
        }
        if amp == 0.0 {
            prop_assert!(t.ledger.windows(2).all(|w| w[1].kinetic <= w[0].kinetic));
        }
    }

    #[test]
    fn fsi_steps_satisfy_the_energy_inequality(amp in 0.0f64..1.0, duration in 0.05f64..0.3, c1 in 0.0f64..2.0) {
        let grid = Grid::new(12, 6, 2.0).unwrap();
        let params = FsiParams {
            rho_f: 1.0,
            mu: 1.0,
            radius: 1.0,
            length: 2.0,
            dt: 0.02,
            steps: 6,
            shell: ShellParams { c1, ..ShellParams::default() },
            p_in: Pulse::smooth(amp, duration),
            p_out: Pulse::zero(),
            forcing_constant: true,
        };
        let t = run_fsi(grid, &params, None, None).unwrap();
        let scale = t.e0.max(t.ledger.iter().map(|r| r.e).fold(0.0, f64::max)).max(1e-300);
        for (r, e) in t.ledger.iter().zip(&t.extra) {
            prop_assert!(r.dee_slack >= -1e-8 * scale, "{:?}", r);
            prop_assert_eq!(e.kinematic_residual, 0.0);
            prop_assert!(e.eta_update_residual <= 1e-15);
        }
        prop_assert!(t.etas.iter().all(|e| e[0] == 0.0 && e[12] == 0.0));
    }
}
