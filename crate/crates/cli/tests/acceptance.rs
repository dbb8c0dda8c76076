//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero on any failure not listed in `EXPECTED_RED`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rothe_cli::config::{InitialSpec, Mode, MotionSpec, RunConfig};
use rothe_cli::sweep::{diagnose, run_level, run_single, sweep, Trajectory};
use rothe_core::assembly::divergence;
use rothe_core::diagnostics::DiagnosticsReport;
use rothe_core::field::DiscreteField;
use rothe_core::geometry::{AleMap, EtaShape, Motion, ShearProfile};
use rothe_core::grid::{Grid, Layout, Walls};
use rothe_core::linalg::{dot, Saddle, Triplets};
use rothe_core::rothe_fsi::Noise;
use rothe_core::rothe_ns::{run_ns, NsParams};
use rothe_core::spaces::{norm_matrix, DualSpace, Leray, NormKind};
use rothe_core::step::{body_force_covector, closed_pin, viscous_matrix, Viscous};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// Criteria that fail on smooth reference data; see the project notes.
const EXPECTED_RED: &[&str] = &["equicontinuity", "dual_shift", "squeezing"];

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(4)
}

fn base(mode: &str, nz: usize, nr: usize, dt: f64) -> RunConfig {
    let text = format!("mode = \"{mode}\"\n[grid]\nnz = {nz}\nnr = {nr}\n[time]\ndt = {dt}\nt_final = 1.0\n");
    let mut c = RunConfig::parse(&text).expect("built-in config");
    c.sweep.jobs = jobs();
    c
}

fn report_row(rep: &DiagnosticsReport, id: &'static str) -> Outcome {
    match rep.rows.iter().find(|r| r.id == id) {
        Some(r) => Outcome { id, passed: r.passed, detail: r.measured.clone() },
        None => Outcome {
            id,
            passed: false,
            detail: format!(
                "not evaluated: {}",
                rep.errors.iter().filter(|e| e.contains(id)).cloned().collect::<Vec<_>>().join("; ")
            ),
        },
    }
}

fn bundle_report(cfg: &RunConfig, dir: &Path) -> Result<DiagnosticsReport, String> {
    let _ = std::fs::remove_dir_all(dir);
    sweep(cfg, dir).map_err(|e| e.to_string())?;
    diagnose(dir, None).map_err(|e| e.to_string())
}

fn ns_energy(root: &Path) -> Outcome {
    let mut cfg = base("ns", 64, 32, 1.0 / 400.0);
    cfg.ns.motion = MotionSpec::Shear { amp: 0.1, omega: std::f64::consts::TAU, profile: ShearProfile::Sine };
    let moving = match run_single(&cfg, &root.join("ns_energy")) {
        Ok(l) => l.summary.worst_slack,
        Err(e) => return Outcome { id: "energy_ns", passed: false, detail: e.to_string() },
    };
    let mut st = base("ns", 64, 32, 1.0 / 100.0);
    st.ns.motion = MotionSpec::Static;
    st.ns.initial = InitialSpec::Random { amplitude: 1.0 };
    let (monotone, static_slack) = match run_level(&st, 0) {
        Ok(Trajectory::Ns(t)) => (t.ledger.windows(2).all(|w| w[1].kinetic <= w[0].kinetic), t.worst_relative_slack()),
        Ok(_) => unreachable!(),
        Err(e) => return Outcome { id: "energy_ns", passed: false, detail: e.to_string() },
    };
    let tol = cfg.diagnostics.tolerances.energy_slack;
    Outcome {
        id: "energy_ns",
        passed: moving >= -tol && static_slack >= -tol && monotone,
        detail: format!(
            "400 shear steps: worst relative slack {moving:.3e}; static run: slack {static_slack:.3e}, energy non-increasing {monotone}"
        ),
    }
}

fn dense(t: &Triplets) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(t.rows, t.cols);
    for &(r, c, v) in &t.entries {
        m[(r, c)] += v;
    }
    m
}

fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };

    // Poiseuille flow in a periodic channel
    let layout = Arc::new(Layout::new(Grid::new(32, 16, 2.0).unwrap(), Walls::periodic_channel()).unwrap());
    let motion = Motion::Shear { length: 2.0, amp: 0.0, omega: 1.0, profile: ShearProfile::Sine };
    let map = motion.map_at(0.0);
    let s = Saddle::new(
        &viscous_matrix(&layout, &map, 1.0, Viscous::Full),
        &divergence(&layout, &map),
        closed_pin(&layout),
    )
    .unwrap();
    let (x, _) = s.solve(&body_force_covector(&layout, &map, [1.0, 0.0]), &vec![0.0; s.np]).unwrap();
    let u0 = DiscreteField::new(layout, map, x.clone()).unwrap();
    let params = NsParams { rho: 1.0, mu: 1.0, dt: 0.01, steps: 3, body_force: [1.0, 0.0], p_in: 0.0, p_out: 0.0 };
    let t = run_ns(&u0, &motion, &params).unwrap();
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let drift = t
        .fields
        .windows(2)
        .map(|w| w[1].x.iter().zip(&w[0].x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale)
        .fold(0.0, f64::max);

    // constrained H2 dual norm against a dense null-space computation
    let layout = Arc::new(Layout::new(Grid::new(16, 8, 2.0).unwrap(), Walls::tube()).unwrap());
    let map = AleMap::Radial { radius: 1.0, length: 2.0, eta: EtaShape::Sine { amp: 0.15, mode: 1.0 } };
    let k = dense(&norm_matrix(&layout, &map, NormKind::H2).unwrap());
    let b = dense(&divergence(&layout, &map));
    let eig = (b.transpose() * &b).symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<DVector<f64>> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] < 1e-10 * top)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let z = DMatrix::from_columns(&cols);
    let kz = (z.transpose() * &k * &z).cholesky().unwrap();
    let space = DualSpace::new(layout.clone(), map.clone(), NormKind::H2, true).unwrap();
    let mut dual_err: f64 = 0.0;
    for _ in 0..3 {
        let f = rand_vec(layout.ndof());
        let fz = z.transpose() * DVector::from_column_slice(&f);
        let want = fz.dot(&kz.solve(&fz)).sqrt();
        dual_err = dual_err.max((space.dual_norm(&f).unwrap() - want).abs() / want);
    }

    // Leray projection
    let leray = Leray::new(&layout, &map).unwrap();
    let (xv, yv) = (rand_vec(layout.ndof()), rand_vec(layout.ndof()));
    let (px, py) = (leray.project(&xv).unwrap(), leray.project(&yv).unwrap());
    let ppx = leray.project(&px).unwrap();
    let m = leray.mass();
    let d: Vec<f64> = px.iter().zip(&ppx).map(|(a, b)| a - b).collect();
    let idem = m.quad(&d).sqrt() / m.quad(&xv).sqrt();
    let r: Vec<f64> = xv.iter().zip(&px).map(|(a, b)| a - b).collect();
    let orth = dot(&r, &m.mul(&py)).abs() / (m.quad(&xv).sqrt() * m.quad(&py).sqrt());

    Outcome {
        id: "oracles",
        passed: drift <= 1e-8 && dual_err <= 1e-8 && idem <= 1e-10 && orth <= 1e-10,
        detail: format!(
            "Poiseuille drift per step {drift:.2e}, dual norm vs dense {dual_err:.2e}, Leray idempotence {idem:.2e}, orthogonality {orth:.2e}"
        ),
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(root: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for mode in ["ns", "fsi"] {
        let mut cfg = base(mode, 16, 8, 0.125);
        cfg.seed = 7;
        let o = &mut cfg.diagnostics;
        o.quad_lines = 24;
        o.quad_cells = 12;
        o.shifts = vec![1, 2];
        o.shift_samples = 2;
        o.b_samples = 3;
        o.ehrling_domains = 2;
        o.ehrling_verify = 200;
        o.ehrling_grid = [12, 6];
        o.squeeze_fields = 3;
        o.inclusion_samples = 50;
        let mut trees = Vec::new();
        for k in 0..2 {
            let dir = root.join(format!("determinism_{mode}_{k}"));
            cfg.sweep.jobs = k + 1;
            if let Err(e) = bundle_report(&cfg, &dir) {
                return Outcome { id: "determinism", passed: false, detail: format!("{mode}: {e}") };
            }
            trees.push(tree(&dir));
        }
        let differing: Vec<String> = trees[0]
            .iter()
            .filter(|(p, b)| trees[1].get(*p) != Some(*b))
            .map(|(p, _)| p.display().to_string())
            .collect();
        let same = differing.is_empty() && trees[0].len() == trees[1].len();
        ok &= same;
        details.push(if same {
            format!("{mode}: {} files identical", trees[0].len())
        } else {
            format!("{mode}: differing {}", differing.join(", "))
        });
    }
    Outcome { id: "determinism", passed: ok, detail: details.join("; ") }
}

fn fsi_reference() -> RunConfig {
    let mut cfg = base("fsi", 64, 32, 0.01);
    cfg.seed = 2024;
    cfg
}

fn ns_reference() -> RunConfig {
    let mut cfg = base("ns", 32, 16, 0.02);
    cfg.seed = 2024;
    cfg.sweep.levels = 5;
    cfg
}

/// FSI family driven by a rough (piecewise constant, random sign) inlet pressure.
fn rough_family() -> RunConfig {
    let mut cfg = base("fsi", 32, 16, 0.02);
    cfg.seed = 2024;
    cfg.fsi.forcing_constant = false;
    cfg.fsi.p_in.noise = Some(Noise { amp: 2.0, cell: 1.0 / 400.0, seed: 0 });
    cfg.diagnostics.ehrling_domains = 2;
    cfg.diagnostics.ehrling_verify = 1000;
    cfg
}

fn main() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&root).unwrap();
    println!("acceptance bundles under {}", root.display());
    let mut out: Vec<Outcome> = Vec::new();
    let timed = |label: &str, f: &mut dyn FnMut() -> Vec<Outcome>| {
        let t = Instant::now();
        let rows = f();
        eprintln!("[{label}: {:.0} s]", t.elapsed().as_secs_f64());
        rows
    };

    out.extend(timed("ns energy", &mut || vec![ns_energy(&root)]));

    let fsi = fsi_reference();
    assert_eq!(fsi.mode, Mode::Fsi);
    out.extend(timed("fsi family", &mut || match bundle_report(&fsi, &root.join("fsi_reference")) {
        Ok(rep) => ["dee", "a3", "equicontinuity", "dual_shift", "squeezing", "envelopes", "ehrling", "condition_b"]
            .into_iter()
            .map(|id| report_row(&rep, id))
            .collect(),
        Err(e) => ["dee", "a3", "equicontinuity", "dual_shift", "squeezing", "envelopes", "ehrling", "condition_b"]
            .into_iter()
            .map(|id| Outcome { id, passed: false, detail: e.clone() })
            .collect(),
    }));

    out.extend(timed("ns family", &mut || match bundle_report(&ns_reference(), &root.join("ns_reference")) {
        Ok(rep) => ["composition", "inclusion"].into_iter().map(|id| report_row(&rep, id)).collect(),
        Err(e) => ["composition", "inclusion"]
            .into_iter()
            .map(|id| Outcome { id, passed: false, detail: e.clone() })
            .collect(),
    }));

    out.extend(timed("oracles", &mut || vec![oracles()]));
    out.extend(timed("determinism", &mut || vec![determinism(&root)]));

    let mut unexpected = Vec::new();
    for o in &out {
        let expected = EXPECTED_RED.contains(&o.id);
        let note = if !o.passed && expected { " (known red on smooth data)" } else { "" };
        println!("{} {}: {}{note}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.detail);
        if !o.passed && !expected {
            unexpected.push(o.id);
        }
    }

    // informational only: the same checks on rough-in-time forcing
    let t = Instant::now();
    match bundle_report(&rough_family(), &root.join("fsi_rough")) {
        Ok(rep) => {
            for r in &rep.rows {
                println!("INFO rough-forcing {}: {} (within tolerance: {})", r.id, r.measured, r.passed);
            }
        }
        Err(e) => println!("INFO rough-forcing: not evaluated: {e}"),
    }
    eprintln!("[rough family: {:.0} s]", t.elapsed().as_secs_f64());

    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
