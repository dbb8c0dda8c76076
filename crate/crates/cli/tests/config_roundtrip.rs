use proptest::prelude::*;
use rothe_cli::config::{InitialSpec, Mode, MotionSpec, RunConfig, WallsSpec};
use rothe_core::geometry::ShearProfile;
use rothe_core::rothe_fsi::{Noise, Pulse};

const BASE: &str = "mode = \"ns\"\n[grid]\nnz = 8\nnr = 4\n[time]\ndt = 0.25\nt_final = 1.0\n";

fn motion() -> impl Strategy<Value = MotionSpec> {
    prop_oneof![
        Just(MotionSpec::Static),
        (-0.3f64..0.3, 0.1f64..10.0, any::<bool>()).prop_map(|(amp, omega, lin)| MotionSpec::Shear {
            amp,
            omega,
            profile: if lin { ShearProfile::Linear } else { ShearProfile::Sine },
        }),
        (0.5f64..2.0, -0.4f64..0.4, 0.1f64..10.0, 1.0f64..3.0)
            .prop_map(|(radius, amp, omega, mode)| MotionSpec::Channel { radius, amp, omega, mode }),
    ]
}

fn pulse() -> impl Strategy<Value = Pulse> {
    (0.0f64..2.0, 0.01f64..1.0, prop::option::of((0.0f64..3.0, 0.001f64..0.1, 0..=i64::MAX as u64))).prop_map(
        |(amp, duration, noise)| {
            let mut p = Pulse::smooth(amp, duration);
            p.noise = noise.map(|(amp, cell, seed)| Noise { amp, cell, seed });
            p
        },
    )
}

fn config() -> impl Strategy<Value = RunConfig> {
    (
        any::<bool>(),
        0..=i64::MAX as u64,
        2usize..64,
        2usize..32,
        1u32..6,
        1usize..20,
        (0.1f64..5.0, 0.1f64..5.0),
        motion(),
        prop_oneof![Just(WallsSpec::Closed), Just(WallsSpec::PeriodicChannel), Just(WallsSpec::Tube)],
        (pulse(), pulse(), any::<bool>(), 1usize..6, 1usize..4),
    )
        .prop_map(|(fsi, seed, nz, nr, k, steps, (rho, mu), motion, walls, (p_in, p_out, fc, levels, jobs))| {
            let mut c = RunConfig::parse(BASE).unwrap();
            c.mode = if fsi { Mode::Fsi } else { Mode::Ns };
            c.seed = seed;
            c.grid.nz = nz;
            c.grid.nr = nr;
            c.time.dt = 0.5f64.powi(k as i32);
            c.time.t_final = c.time.dt * steps as f64;
            c.physics.rho = rho;
            c.physics.mu = mu;
            c.ns.motion = motion;
            c.ns.walls = walls;
            c.ns.initial = InitialSpec::Random { amplitude: mu };
            c.fsi.p_in = p_in;
            c.fsi.p_out = p_out;
            c.fsi.forcing_constant = fc;
            c.sweep.levels = levels;
            c.sweep.jobs = jobs;
            c.diagnostics.seed = seed ^ 1;
            c.diagnostics.tolerances.fit_r2 = rho / 10.0;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn configs_survive_a_toml_round_trip(c in config()) {
        prop_assume!(c.validate().is_ok());
        let text = c.to_toml().unwrap();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }
}

#[test]
fn errors_name_the_offending_key() {
    let bad = BASE.replace("nr = 4", "nr = \"four\"");
    let e = RunConfig::parse(&bad).unwrap_err().to_string();
    assert!(e.contains("grid.nr"), "{e}");
    let e = RunConfig::parse(&format!("{BASE}[physics]\nmu = -1.0\n")).unwrap_err().to_string();
    assert!(e.contains("physics.mu"), "{e}");
    let e = RunConfig::parse(&format!("{BASE}[diagnostics]\nquad_lines = 8\nbogus = 1\n")).unwrap_err().to_string();
    assert!(e.contains("diagnostics"), "{e}");
    let e = RunConfig::parse(&BASE.replace("t_final = 1.0", "t_final = 0.9")).unwrap_err().to_string();
    assert!(e.contains("time.dt"), "{e}");
    let e = RunConfig::parse(&BASE.replace("mode = \"ns\"", "mode = \"ns\"\nseed = 1")).unwrap();
    let mut big = e.clone();
    big.seed = u64::MAX;
    assert!(big.validate().unwrap_err().to_string().contains("seed"));
}
