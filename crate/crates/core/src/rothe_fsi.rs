//! Kinematically coupled splitting for a viscous fluid in a tube with an
//! elastic wall: an implicit wall substep followed by a fluid substep on the
//! previous domain in which the wall velocity is a shared unknown.

use crate::assembly::{shell_mass, shell_stiffness};
use crate::error::{contract, Result};
use crate::field::DiscreteField;
use crate::geometry::{trapezoid_sq, AleMap, EtaShape, Motion};
use crate::grid::{Grid, Layout, Walls};
use crate::linalg::{banded_cholesky_solve, dot, Csr, Saddle, Triplets};
use crate::spaces::h1_semi_sq;
use crate::step::{pressure_covector, solve_step, viscous_matrix, StepInput, Viscous, WallInertia};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellParams {
    pub rho_s: f64,
    pub thickness: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for ShellParams {
    fn default() -> Self {
        ShellParams { rho_s: 1.0, thickness: 1.0, c0: 1.0, c1: 1.0, c2: 1.0 }
    }
}

/// `amp/2 (1 - cos(2 pi t / duration))` for `t < duration`, then zero, plus an
/// optional rough part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub amp: f64,
    pub duration: f64,
    /// Constant offset added for all times.
    #[serde(default)]
    pub base: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Noise>,
}

/// Seeded `+-amp` values, constant on time cells of width `cell`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Noise {
    pub amp: f64,
    pub cell: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Noise {
    fn sign(&self, k: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(2 * k as u128);
        if rng.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        self.amp * self.sign((t / self.cell).floor() as u64)
    }

    /// Exact mean over `[a, b]`.
    pub fn mean(&self, a: f64, b: f64) -> f64 {
        let (a, b) = (a.max(0.0), b.max(0.0));
        if b <= a {
            return 0.0;
        }
        let first = (a / self.cell).floor() as u64;
        let last = ((b / self.cell).ceil() as u64).max(first + 1);
        let mut sum = 0.0;
        for k in first..last {
            let (lo, hi) = ((k as f64 * self.cell).max(a), ((k + 1) as f64 * self.cell).min(b));
            if hi > lo {
                sum += self.sign(k) * (hi - lo);
            }
        }
        self.amp * sum / (b - a)
    }
}

impl Pulse {
    pub fn zero() -> Self {
        Pulse { amp: 0.0, duration: 1.0, base: 0.0, noise: None }
    }

    pub fn smooth(amp: f64, duration: f64) -> Self {
        Pulse { amp, duration, base: 0.0, noise: None }
    }

    pub fn constant(p: f64) -> Self {
        Pulse { amp: 0.0, duration: 1.0, base: p, noise: None }
    }

    pub fn at(&self, t: f64) -> f64 {
        let pulse = if t >= 0.0 && t < self.duration {
            0.5 * self.amp * (1.0 - (2.0 * PI * t / self.duration).cos())
        } else {
            0.0
        };
        self.base + pulse + self.noise.map_or(0.0, |n| n.at(t))
    }

    fn smooth_at(&self, t: f64) -> f64 {
        let pulse = if t >= 0.0 && t < self.duration {
            0.5 * self.amp * (1.0 - (2.0 * PI * t / self.duration).cos())
        } else {
            0.0
        };
        self.base + pulse
    }

    /// Mean over `[a, b]` (four-point Gauss for the smooth part, exact for the rough part).
    pub fn mean(&self, a: f64, b: f64) -> f64 {
        const X: [f64; 4] =
            [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
        const W: [f64; 4] =
            [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        let smooth = 0.5 * X.iter().zip(&W).map(|(x, w)| w * self.smooth_at(c + h * x)).sum::<f64>();
        smooth + self.noise.map_or(0.0, |n| n.mean(a, b))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FsiParams {
    pub rho_f: f64,
    pub mu: f64,
    pub radius: f64,
    pub length: f64,
    pub dt: f64,
    pub steps: usize,
    pub shell: ShellParams,
    pub p_in: Pulse,
    pub p_out: Pulse,
    /// Compute the per-step forcing constant of the energy inequality.
    #[serde(default = "yes")]
    pub forcing_constant: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FsiLedgerRow {
    pub n: usize,
    pub t: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "D_inc")]
    pub d_inc: f64,
    pub jump_u: f64,
    pub jump_v: f64,
    pub forcing_inc: f64,
    pub dee_slack: f64,
    pub eta_l2: f64,
    pub eta_h2: f64,
}

/// Per-step quantities not written to the ledger file.
#[derive(Clone, Debug, Default, Serialize)]
pub struct FsiStepExtra {
    pub forcing_constant: f64,
    pub identity_residual: f64,
    pub work: f64,
    pub kinematic_residual: f64,
    pub eta_update_residual: f64,
}

#[derive(Clone, Debug)]
pub struct FsiTrajectory {
    pub params: FsiParams,
    pub grid: Grid,
    /// `u^n` (with `v^n`) on the domain of `eta^{n-1}` (`eta^0` for `n = 0`).
    pub fields: Vec<DiscreteField>,
    /// `eta^0 .. eta^N` at the wall vertices.
    pub etas: Vec<Vec<f64>>,
    /// Intermediate wall velocities `v^{n+1/2}`.
    pub v_half: Vec<Vec<f64>>,
    pub ledger: Vec<FsiLedgerRow>,
    pub extra: Vec<FsiStepExtra>,
    pub e0: f64,
}

pub fn tube_layout(grid: Grid) -> Result<Arc<Layout>> {
    Ok(Arc::new(Layout::new(grid, Walls::tube())?))
}

pub fn tube_map(params: &FsiParams, eta: &[f64]) -> AleMap {
    AleMap::Radial { radius: params.radius, length: params.length, eta: EtaShape::Table(eta.to_vec()) }
}

/// Implicit wall substep: `rho h (v_half - v)/dt + L eta' = 0`, `eta' = eta + dt v_half`.
pub fn structure_substep(layout: &Layout, p: &FsiParams, eta: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let nz = layout.grid.nz;
    let n = nz - 1;
    let hz = layout.grid.hz();
    let off = layout.n_fluid;
    let a = shell_stiffness(layout, p.shell.c0, p.shell.c1, p.shell.c2).to_csr();
    let rh = p.shell.rho_s * p.shell.thickness;
    let mut band = vec![0.0; n * n];
    for k in 0..n {
        for (c, val) in a.row_entries(off + k) {
            band[k * n + (c - off)] += p.dt * val;
        }
        band[k * n + k] += rh / p.dt * hz;
    }
    let mut full_eta = vec![0.0; layout.ndof()];
    for k in 1..nz {
        full_eta[off + k - 1] = eta[k];
    }
    let ae = a.mul(&full_eta);
    let rhs: Vec<f64> = (0..n).map(|k| rh / p.dt * hz * v[k + 1] - ae[off + k]).collect();
    let sol = banded_cholesky_solve(n, 2, |i, j| band[i * n + j], &rhs)?;
    let mut vh = vec![0.0; nz + 1];
    vh[1..nz].copy_from_slice(&sol);
    let eta_new: Vec<f64> = eta.iter().zip(&vh).map(|(e, w)| e + p.dt * w).collect();
    Ok((vh, eta_new))
}

/// `1/2 a_e(eta, eta)`.
pub fn elastic_energy(layout: &Layout, p: &FsiParams, eta: &[f64]) -> f64 {
    let a = shell_stiffness(layout, p.shell.c0, p.shell.c1, p.shell.c2).to_csr();
    let mut x = vec![0.0; layout.ndof()];
    for k in 1..layout.grid.nz {
        x[layout.n_fluid + k - 1] = eta[k];
    }
    0.5 * a.quad(&x)
}

/// `|eta|_{L2}` and the discrete `H^2` norm (clamped second differences).
pub fn eta_norms(eta: &[f64], hz: f64) -> (f64, f64) {
    let n = eta.len() - 1;
    let l2 = trapezoid_sq(eta, hz);
    let d1: f64 = (0..n).map(|k| ((eta[k + 1] - eta[k]) / hz).powi(2) * hz).sum();
    let at = |k: isize| -> f64 {
        let k = if k < 0 {
            -k
        } else if k > n as isize {
            2 * n as isize - k
        } else {
            k
        };
        eta[k as usize]
    };
    let d2: f64 = (0..=n as isize)
        .map(|k| {
            let w = if k == 0 || k == n as isize { 0.5 } else { 1.0 };
            w * hz * ((at(k + 1) - 2.0 * at(k) + at(k - 1)) / (hz * hz)).powi(2)
        })
        .sum();
    (l2.sqrt(), (l2 + d1 + d2).sqrt())
}

/// `lambda_max(G) / (4 mu)` where `G` is the Gram matrix of the inlet/outlet
/// functionals in the dual of the (solenoidal) symmetric-gradient norm.
pub fn forcing_constant(layout: &Layout, map: &AleMap, p: &FsiParams) -> Result<f64> {
    let k = viscous_matrix(layout, map, 0.5, Viscous::Symmetric);
    let mut a = Triplets::new(layout.ndof(), layout.ndof());
    a.extend_scaled(&k, 1.0);
    // the fluid cannot see wall modes with zero face average; pin them weakly
    let scale = k.diag().iter().cloned().fold(0.0, f64::max);
    a.extend_scaled(&shell_mass(layout), 1e-12 * scale / layout.grid.hz());
    let b = crate::assembly::divergence(layout, map);
    let s = Saddle::new(&a, &b, None)?;
    let f_in = pressure_covector(layout, map, p.radius, 1.0, 0.0);
    let f_out = pressure_covector(layout, map, p.radius, 0.0, 1.0);
    let zero = vec![0.0; b.rows];
    let mut q = s.solve_many(&[(&f_in, &zero), (&f_out, &zero)])?;
    let q_out = q.pop().unwrap().0;
    let q_in = q.pop().unwrap().0;
    let (g11, g12, g22) = (dot(&f_in, &q_in), 0.5 * (dot(&f_in, &q_out) + dot(&f_out, &q_in)), dot(&f_out, &q_out));
    let tr = 0.5 * (g11 + g22);
    let lam = tr + ((0.5 * (g11 - g22)).powi(2) + g12 * g12).sqrt();
    Ok(lam / (4.0 * p.mu))
}

/// Runs the coupled scheme from `u0` (on the reference domain, with wall velocity) and `eta0`.
pub fn run_fsi(grid: Grid, params: &FsiParams, u0: Option<Vec<f64>>, eta0: Option<Vec<f64>>) -> Result<FsiTrajectory> {
    if !(params.dt > 0.0 && params.mu > 0.0 && params.rho_f > 0.0 && params.radius > 0.0) {
        return Err(contract("dt, mu, rho_f and radius must be positive"));
    }
    if (grid.length - params.length).abs() > 1e-12 {
        return Err(contract("grid length differs from the tube length"));
    }
    let s = &params.shell;
    if !(s.rho_s > 0.0 && s.thickness > 0.0 && s.c0 >= 0.0 && s.c1 >= 0.0 && s.c2 > 0.0) {
        return Err(contract("shell parameters must be positive"));
    }
    let layout = tube_layout(grid)?;
    let nz = grid.nz;
    let hz = grid.hz();
    let rh = s.rho_s * s.thickness;
    let mut eta = eta0.unwrap_or_else(|| vec![0.0; nz + 1]);
    if eta.len() != nz + 1 || eta[0] != 0.0 || eta[nz] != 0.0 {
        return Err(contract("initial displacement must have nz + 1 values with clamped ends"));
    }
    let mut x = u0.unwrap_or_else(|| vec![0.0; layout.ndof()]);
    if x.len() != layout.ndof() {
        return Err(contract("initial velocity has the wrong length"));
    }
    let map0 = tube_map(params, &eta);
    map0.check_admissible()?;
    let ms = shell_mass(&layout).to_csr();
    let wall_kin = |x: &[f64]| 0.5 * rh * ms.quad(x);
    let e0 = 0.5 * params.rho_f * crate::assembly::mass(&layout, &map0).to_csr().quad(&x)
        + wall_kin(&x)
        + elastic_energy(&layout, params, &eta);
    let mut fields = vec![DiscreteField::new(layout.clone(), map0, x.clone())?];
    let mut etas = vec![eta.clone()];
    let mut v_halfs = Vec::with_capacity(params.steps);
    let mut ledger = Vec::with_capacity(params.steps);
    let mut extra = Vec::with_capacity(params.steps);
    let mut e_prev = e0;
    for n in 0..params.steps {
        let t0 = n as f64 * params.dt;
        let t1 = t0 + params.dt;
        let v = layout.shell_values(&x);
        let (vh, eta_new) = structure_substep(&layout, params, &eta, &v)?;
        let map_n = tube_map(params, &eta);
        let map_new = tube_map(params, &eta_new);
        map_new.check_admissible()?;
        let (pin, pout) = (params.p_in.mean(t0, t1), params.p_out.mean(t0, t1));
        let f = pressure_covector(&layout, &map_n, params.radius, pin, pout);
        let len = params.length;
        let vh_shape = EtaShape::Table(vh.clone());
        let w = |p: [f64; 2]| [0.0, vh_shape.eval(p[0], len) * p[1]];
        let out = solve_step(&StepInput {
            layout: &layout,
            ops: &map_n,
            mass_old: &map_n,
            mass_new: &map_new,
            dt: params.dt,
            rho: params.rho_f,
            mu: params.mu,
            viscous: Viscous::Symmetric,
            u_old: &x,
            domain_velocity: &w,
            wall: Some(WallInertia { rho_h: rh, v_half: &vh }),
            forcing: &f,
        })?;
        let cf = if params.forcing_constant { forcing_constant(&layout, &map_n, params)? } else { 0.0 };
        let elastic = elastic_energy(&layout, params, &eta_new);
        let e_new = out.kin_new + out.wall_new + elastic;
        let d = 0.5 * out.visc;
        let budget = cf * params.dt * (pin * pin + pout * pout);
        let slack = e_prev + budget - (e_new + out.jump + out.wall_jump + d);
        let (l2, h2) = eta_norms(&eta_new, hz);
        // structure substep identity closes the energy balance
        let elastic_old = elastic_energy(&layout, params, &eta);
        let vkin_old = 0.5 * rh * dot(&v[1..nz], &v[1..nz]) * hz;
        let vkin_half = 0.5 * rh * dot(&vh[1..nz], &vh[1..nz]) * hz;
        let dvh: Vec<f64> = vh.iter().zip(&v).map(|(a, b)| a - b).collect();
        let deta: Vec<f64> = eta_new.iter().zip(&eta).map(|(a, b)| a - b).collect();
        let struct_jumps = 0.5 * rh * dot(&dvh, &dvh) * hz + elastic_energy(&layout, params, &deta);
        let struct_resid = vkin_old + elastic_old - (vkin_half + elastic + struct_jumps);
        let kin_resid: f64 = {
            let xs = &out.x;
            let top = layout.shell_values(xs);
            let (_, ur, _) = layout.unpack(xs);
            (0..nz).map(|i| (ur[i * (grid.nr + 1) + grid.nr] - 0.5 * (top[i] + top[i + 1])).abs()).fold(0.0, f64::max)
        };
        let eta_resid =
            eta_new.iter().zip(&eta).zip(&vh).map(|((a, b), w)| (a - b - params.dt * w).abs()).fold(0.0, f64::max);
        extra.push(FsiStepExtra {
            forcing_constant: cf,
            identity_residual: out.identity_residual() + struct_resid,
            work: out.work,
            kinematic_residual: kin_resid,
            eta_update_residual: eta_resid,
        });
        ledger.push(FsiLedgerRow {
            n: n + 1,
            t: t1,
            e: e_new,
            d_inc: d,
            jump_u: out.jump,
            jump_v: out.wall_jump,
            forcing_inc: budget,
            dee_slack: slack,
            eta_l2: l2,
            eta_h2: h2,
        });
        e_prev = e_new;
        x = out.x;
        eta = eta_new;
        fields.push(DiscreteField::new(layout.clone(), map_n, x.clone())?);
        etas.push(eta.clone());
        v_halfs.push(vh);
    }
    Ok(FsiTrajectory { params: params.clone(), grid, fields, etas, v_half: v_halfs, ledger, extra, e0 })
}

impl FsiTrajectory {
    pub fn motion(&self) -> Motion {
        Motion::Evolved {
            radius: self.params.radius,
            length: self.params.length,
            dt: self.params.dt,
            etas: self.etas.clone(),
        }
    }

    pub fn max_energy(&self) -> f64 {
        self.ledger.iter().map(|r| r.e).fold(self.e0, f64::max)
    }

    pub fn total_dissipation(&self) -> f64 {
        self.ledger.iter().map(|r| r.d_inc).sum()
    }

    /// Worst relative slack of the discrete energy inequality.
    pub fn worst_slack(&self) -> f64 {
        let s = self.ledger.iter().map(|r| r.dee_slack).fold(f64::INFINITY, f64::min);
        s / self.e0.max(self.max_energy()).max(f64::MIN_POSITIVE)
    }

    pub fn time_integrated_grad_sq(&self) -> f64 {
        self.fields.iter().skip(1).map(|u| self.params.dt * h1_semi_sq(u)).sum()
    }

    pub fn csr_shell_mass(&self) -> Csr {
        shell_mass(&self.fields[0].layout).to_csr()
    }
}
