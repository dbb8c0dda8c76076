use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rothe_core::assembly::divergence;
use rothe_core::diagnostics::EhrlingDomain;
use rothe_core::field::DiscreteField;
use rothe_core::geometry::{ale_apply, AleMap, EtaShape, Motion, ShearProfile};
use rothe_core::grid::{Comp, Grid, Layout, Walls};
use rothe_core::linalg::{dot, Saddle, Triplets};
use rothe_core::rothe_ns::{run_ns, NsParams};
use rothe_core::spaces::{norm_matrix, trace_shift_error, DualSpace, Leray, NormKind};
use rothe_core::step::{body_force_covector, closed_pin, viscous_matrix, Viscous};
use std::sync::Arc;

fn dense(t: &Triplets) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(t.rows, t.cols);
    for &(r, c, v) in &t.entries {
        m[(r, c)] += v;
    }
    m
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tube_map() -> AleMap {
    AleMap::Radial { radius: 1.0, length: 2.0, eta: EtaShape::Sine { amp: 0.15, mode: 1.0 } }
}

/// Dense reference: `sup_{Bq = 0} f.q / |q|_K` through an explicit null-space basis.
fn dense_dual_norm(k: &DMatrix<f64>, b: &DMatrix<f64>, f: &[f64]) -> f64 {
    let btb = b.transpose() * b;
    let eig = btb.symmetric_eigen();
    let scale = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| l < 1e-10 * scale)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    let z = DMatrix::from_columns(&cols);
    let kz = z.transpose() * k * &z;
    let fz = z.transpose() * DVector::from_column_slice(f);
    let y = kz.cholesky().expect("restricted norm matrix is positive definite").solve(&fz);
    fz.dot(&y).sqrt()
}

#[test]
fn constrained_dual_norm_matches_dense_null_space() {
    let layout = Arc::new(Layout::new(Grid::new(16, 8, 2.0).unwrap(), Walls::tube()).unwrap());
    let map = tube_map();
    let k = dense(&norm_matrix(&layout, &map, NormKind::H2).unwrap());
    let b = dense(&divergence(&layout, &map));
    let space = DualSpace::new(layout.clone(), map, NormKind::H2, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let f = random_vec(layout.ndof(), &mut rng);
        let want = dense_dual_norm(&k, &b, &f);
        let got = space.dual_norm(&f).unwrap();
        assert!((got - want).abs() <= 1e-8 * want, "dual norm {got} vs dense {want}");
    }
}

#[test]
fn unconstrained_dual_norm_matches_dense_inverse() {
    let layout = Arc::new(Layout::new(Grid::new(16, 8, 2.0).unwrap(), Walls::tube()).unwrap());
    let map = tube_map();
    let k = dense(&norm_matrix(&layout, &map, NormKind::H1).unwrap());
    let space = DualSpace::new(layout.clone(), map, NormKind::H1, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = random_vec(layout.ndof(), &mut rng);
    let fv = DVector::from_column_slice(&f);
    let want = fv.dot(&k.cholesky().unwrap().solve(&fv)).sqrt();
    let got = space.dual_norm(&f).unwrap();
    assert!((got - want).abs() <= 1e-8 * want, "dual norm {got} vs dense {want}");
}

#[test]
fn poiseuille_flow_is_a_fixed_point_of_the_step() {
    let (nz, nr) = (16, 12);
    let layout = Arc::new(Layout::new(Grid::new(nz, nr, 2.0).unwrap(), Walls::periodic_channel()).unwrap());
    let motion = Motion::Shear { length: 2.0, amp: 0.0, omega: 1.0, profile: ShearProfile::Sine };
    let map = motion.map_at(0.0);
    let force = [1.0, 0.0];
    let k = viscous_matrix(&layout, &map, 1.0, Viscous::Full);
    let b = divergence(&layout, &map);
    let f = body_force_covector(&layout, &map, force);
    let s = Saddle::new(&k, &b, closed_pin(&layout)).unwrap();
    let (x, _) = s.solve(&f, &vec![0.0; s.np]).unwrap();

    // close to the parabolic profile y (1 - y) / 2
    let exact = DiscreteField::from_fn(
        layout.clone(),
        map.clone(),
        |c, p| if c == Comp::Z { 0.5 * p[1] * (1.0 - p[1]) } else { 0.0 },
        |_| 0.0,
    );
    let err = x.iter().zip(&exact.x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-2, "steady profile off by {err}");

    let u0 = DiscreteField::new(layout.clone(), map, x.clone()).unwrap();
    let params = NsParams { rho: 1.0, mu: 1.0, dt: 0.01, steps: 1, body_force: force, p_in: 0.0, p_out: 0.0 };
    let traj = run_ns(&u0, &motion, &params).unwrap();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let drift = traj.fields[1].x.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(drift <= 1e-8 * scale, "steady state drifted by {drift}");
}

#[test]
fn leray_projection_is_idempotent_and_orthogonal() {
    for (walls, map) in [(Walls::tube(), tube_map()), (Walls::closed(), AleMap::identity(2.0))] {
        let layout = Layout::new(Grid::new(16, 8, 2.0).unwrap(), walls).unwrap();
        let leray = Leray::new(&layout, &map).unwrap();
        let b = divergence(&layout, &map).to_csr();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_vec(layout.ndof(), &mut rng);
        let y = random_vec(layout.ndof(), &mut rng);
        let px = leray.project(&x).unwrap();
        let ppx = leray.project(&px).unwrap();
        let py = leray.project(&y).unwrap();
        let m = leray.mass();
        let norm = m.quad(&x).sqrt();
        let diff: Vec<f64> = px.iter().zip(&ppx).map(|(a, b)| a - b).collect();
        assert!(m.quad(&diff).sqrt() <= 1e-10 * norm);
        let div = b.mul(&px).iter().fold(0.0f64, |s, v| s.max(v.abs()));
        assert!(div <= 1e-10 * norm, "projected field has divergence {div}");
        // (x - Px, Py)_H = 0
        let r: Vec<f64> = x.iter().zip(&px).map(|(a, b)| a - b).collect();
        let inner = dot(&r, &m.mul(&py));
        assert!(inner.abs() <= 1e-10 * norm * m.quad(&py).sqrt(), "residual not orthogonal: {inner}");
    }
}

#[test]
fn trace_shift_obeys_lipschitz_bound_for_linear_fields() {
    let layout = Arc::new(Layout::new(Grid::new(24, 12, 2.0).unwrap(), Walls::free()).unwrap());
    let map = AleMap::identity(2.0);
    let u = DiscreteField::from_fn(
        layout,
        map,
        |c, p| if c == Comp::Z { 0.3 + 0.7 * p[0] - 1.1 * p[1] } else { -0.2 + 0.4 * p[0] + 0.5 * p[1] },
        |_| 0.0,
    );
    let n = 40;
    let z = |k: usize| (k as f64 + 0.5) * 2.0 / n as f64;
    let phi1: Vec<[f64; 2]> = (0..n).map(|k| [z(k), 0.5]).collect();
    let phi2: Vec<[f64; 2]> = (0..n).map(|k| [z(k), 0.5 + 0.2 * (std::f64::consts::PI * z(k)).sin()]).collect();
    let ts = trace_shift_error(&u, &phi1, &phi2).unwrap();
    assert!(ts.measured > 0.0);
    assert!(ts.measured <= ts.bound_l2 * (1.0 + 1e-9), "{ts:?}");
    assert!(ts.measured <= ts.bound_inf * 2.0, "{ts:?}");
}

#[test]
fn ale_step_map_round_trips() {
    let a = tube_map();
    let b = AleMap::Radial { radius: 1.0, length: 2.0, eta: EtaShape::Sine { amp: -0.1, mode: 2.0 } };
    let s = AleMap::Shear { length: 2.0, g: 0.1, profile: ShearProfile::Sine };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let p = [rng.random_range(0.0..2.0), rng.random_range(0.0..1.0)];
        for (old, new) in [(&a, &b), (&b, &a)] {
            let x = new.apply(p);
            let y = ale_apply(old, new, x).unwrap();
            let back = ale_apply(new, old, y).unwrap();
            assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
        }
        let q = s.inverse(s.apply(p)).unwrap();
        assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
    }
}

#[test]
fn ehrling_gradient_matches_finite_differences() {
    let layout = Arc::new(Layout::new(Grid::new(12, 6, 2.0).unwrap(), Walls::tube()).unwrap());
    let dom = EhrlingDomain::new(layout, tube_map()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v = dom.random_solenoidal(&mut rng).unwrap();
    let d = dom.random_solenoidal(&mut rng).unwrap();
    let delta = 0.05;
    let (_, g) = dom.objective_gradient(&v, delta).unwrap();
    let scale = (dot(&v, &v) / dot(&d, &d)).sqrt();
    let eps = 1e-6 * scale;
    let shifted = |s: f64| -> Vec<f64> { v.iter().zip(&d).map(|(a, b)| a + s * b).collect() };
    let fd =
        (dom.objective(&shifted(eps), delta).unwrap() - dom.objective(&shifted(-eps), delta).unwrap()) / (2.0 * eps);
    let an = dot(&g, &d);
    assert!((fd - an).abs() <= 1e-5 * an.abs().max(fd.abs()), "finite difference {fd} vs gradient {an}");
}

#[test]
fn quadrature_norms_converge_at_second_order() {
    use rothe_core::diagnostics::ScalingFit;
    use rothe_core::spaces::{h1_semi_sq, l2_sq};
    let map = AleMap::identity(2.0);
    // both components exp(z / 2) (1 + r^2)
    let e = 2f64.exp() - 1.0;
    let (l2_exact, h1_exact) = (2.0 * e * 28.0 / 15.0, 2.0 * e * 1.8);
    let (mut hs, mut e0, mut e1) = (vec![], vec![], vec![]);
    for n in [8usize, 16, 32] {
        let layout = Arc::new(Layout::new(Grid::new(2 * n, n, 2.0).unwrap(), Walls::free()).unwrap());
        let u = DiscreteField::from_fn(layout, map.clone(), |_, p| (0.5 * p[0]).exp() * (1.0 + p[1] * p[1]), |_| 0.0);
        hs.push(1.0 / n as f64);
        e0.push((l2_sq(&u) - l2_exact).abs());
        e1.push((h1_semi_sq(&u) - h1_exact).abs());
    }
    for e in [e0, e1] {
        let f = ScalingFit::fit(&hs, &e).unwrap();
        assert!((f.slope - 2.0).abs() <= 0.3, "convergence slope {} from {:?}", f.slope, e);
    }
}
