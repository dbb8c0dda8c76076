//! Run configuration read from TOML.

use rothe_core::diagnostics::DiagOptions;
use rothe_core::geometry::{Motion, ShearProfile};
use rothe_core::grid::Walls;
use rothe_core::rothe_fsi::{FsiParams, Pulse, ShellParams};
use rothe_core::rothe_ns::NsParams;
use rothe_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ns,
    Fsi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub ns: NsSpec,
    #[serde(default)]
    pub fsi: FsiSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub diagnostics: DiagOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nz: usize,
    pub nr: usize,
    #[serde(default = "default_length")]
    pub length: f64,
}

fn default_length() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    /// Step of the coarsest level.
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub rho: f64,
    pub mu: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics { rho: 1.0, mu: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallsSpec {
    Closed,
    PeriodicChannel,
    Tube,
}

impl WallsSpec {
    pub fn walls(&self) -> Walls {
        match self {
            WallsSpec::Closed => Walls::closed(),
            WallsSpec::PeriodicChannel => Walls::periodic_channel(),
            WallsSpec::Tube => {
                let mut w = Walls::tube();
                w.top = rothe_core::grid::WallKind::NoSlip;
                w
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    Static,
    Shear { amp: f64, omega: f64, profile: ShearProfile },
    Channel { radius: f64, amp: f64, omega: f64, mode: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Zero,
    /// Smooth random solenoidal field drawn from the run seed.
    Random {
        amplitude: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsSpec {
    pub motion: MotionSpec,
    pub walls: WallsSpec,
    pub initial: InitialSpec,
    pub body_force: [f64; 2],
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for NsSpec {
    fn default() -> Self {
        NsSpec {
            motion: MotionSpec::Shear { amp: 0.1, omega: 2.0 * std::f64::consts::PI, profile: ShearProfile::Sine },
            walls: WallsSpec::Closed,
            initial: InitialSpec::Random { amplitude: 1.0 },
            body_force: [0.0, 0.0],
            p_in: 0.0,
            p_out: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FsiSpec {
    pub radius: f64,
    pub shell: ShellParams,
    pub p_in: Pulse,
    pub p_out: Pulse,
    pub forcing_constant: bool,
}

impl Default for FsiSpec {
    fn default() -> Self {
        FsiSpec {
            radius: 1.0,
            shell: ShellParams::default(),
            p_in: Pulse::smooth(0.25, 0.5),
            p_out: Pulse::zero(),
            forcing_constant: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    /// Number of time steps in the family, each half the previous.
    pub levels: usize,
    pub jobs: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { levels: 4, jobs: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Write every velocity field (needed to diagnose a bundle later).
    pub fields: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { fields: true }
    }
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.message().to_string();
            if path == "." || path.is_empty() {
                Error::Config(msg)
            } else {
                invalid(&path, msg)
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |path: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(path, format!("must be positive, got {v}")))
            }
        };
        if self.grid.nz < 2 || self.grid.nr < 2 {
            return Err(invalid("grid", "need at least 2 cells per direction"));
        }
        pos("grid.length", self.grid.length)?;
        pos("time.dt", self.time.dt)?;
        pos("time.t_final", self.time.t_final)?;
        let steps = self.time.t_final / self.time.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return Err(invalid("time.dt", "must divide time.t_final"));
        }
        pos("physics.rho", self.physics.rho)?;
        pos("physics.mu", self.physics.mu)?;
        // TOML integers are signed 64-bit
        let seed = |path: &str, v: u64| {
            if v <= i64::MAX as u64 {
                Ok(())
            } else {
                Err(invalid(path, format!("must be at most {}", i64::MAX)))
            }
        };
        seed("seed", self.seed)?;
        seed("diagnostics.seed", self.diagnostics.seed)?;
        if self.sweep.jobs == 0 {
            return Err(invalid("sweep.jobs", "must be at least 1"));
        }
        match self.mode {
            Mode::Fsi => {
                pos("fsi.radius", self.fsi.radius)?;
                let s = &self.fsi.shell;
                pos("fsi.shell.rho_s", s.rho_s)?;
                pos("fsi.shell.thickness", s.thickness)?;
                pos("fsi.shell.c2", s.c2)?;
                if s.c0 < 0.0 {
                    return Err(invalid("fsi.shell.c0", "must be non-negative"));
                }
                if s.c1 < 0.0 {
                    return Err(invalid("fsi.shell.c1", "must be non-negative"));
                }
                pos("fsi.p_in.duration", self.fsi.p_in.duration)?;
                pos("fsi.p_out.duration", self.fsi.p_out.duration)?;
                for (key, p) in [("fsi.p_in.noise.cell", &self.fsi.p_in), ("fsi.p_out.noise.cell", &self.fsi.p_out)] {
                    if let Some(n) = p.noise {
                        pos(key, n.cell)?;
                        seed(&key.replace("cell", "seed"), n.seed)?;
                    }
                }
            }
            Mode::Ns => {
                if let MotionSpec::Channel { radius, amp, .. } = self.ns.motion {
                    pos("ns.motion.radius", radius)?;
                    if amp.abs() >= radius {
                        return Err(invalid("ns.motion.amp", "must be smaller than the radius"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn steps(&self, level: usize) -> usize {
        (self.time.t_final / self.time.dt).round() as usize * (1usize << level)
    }

    pub fn dt(&self, level: usize) -> f64 {
        self.time.dt / (1u64 << level) as f64
    }

    /// The configuration without execution-only settings (worker count).
    pub fn canonical(&self) -> RunConfig {
        let mut c = self.clone();
        c.sweep.jobs = SweepSpec::default().jobs;
        c
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let text = self.canonical().to_toml().expect("validated configs serialize");
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn motion(&self) -> Option<Motion> {
        if self.mode != Mode::Ns {
            return None;
        }
        let length = self.grid.length;
        Some(match self.ns.motion {
            MotionSpec::Static => Motion::Shear { length, amp: 0.0, omega: 0.0, profile: ShearProfile::Linear },
            MotionSpec::Shear { amp, omega, profile } => Motion::Shear { length, amp, omega, profile },
            MotionSpec::Channel { radius, amp, omega, mode } => Motion::Channel { radius, length, amp, omega, mode },
        })
    }

    pub fn ns_params(&self, level: usize) -> NsParams {
        NsParams {
            rho: self.physics.rho,
            mu: self.physics.mu,
            dt: self.dt(level),
            steps: self.steps(level),
            body_force: self.ns.body_force,
            p_in: self.ns.p_in,
            p_out: self.ns.p_out,
        }
    }

    pub fn fsi_params(&self, level: usize) -> FsiParams {
        FsiParams {
            rho_f: self.physics.rho,
            mu: self.physics.mu,
            radius: self.fsi.radius,
            length: self.grid.length,
            dt: self.dt(level),
            steps: self.steps(level),
            shell: self.fsi.shell,
            p_in: self.fsi.p_in,
            p_out: self.fsi.p_out,
            forcing_constant: self.fsi.forcing_constant,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
