//! One linearised implicit step of the ALE momentum equation:
//!
//! `rho/dt M_old (u' - u) + rho/(2 dt) (M_new - M_old) u' + rho S(a) u' + mu_eff K u' + B^T p = F`,
//! `B u' = 0`, with `S` the skew part of convection, plus an optional wall-inertia block.

use crate::assembly::{advection, cross_avg, divergence, grad_samples, mass, shell_mass, skew, stiffness};
use crate::error::Result;
use crate::geometry::{AleMap, Point};
use crate::grid::{Comp, Face, Layout, Padded};
use crate::linalg::{dot, Csr, Saddle, Triplets};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Viscous {
    /// `mu |grad u|^2`
    Full,
    /// `2 mu |D u|^2`
    Symmetric,
}

pub struct WallInertia<'a> {
    pub rho_h: f64,
    /// Intermediate wall velocity at all wall vertices.
    pub v_half: &'a [f64],
}

pub struct StepInput<'a> {
    pub layout: &'a Layout,
    /// Geometry of the operators (divergence, viscosity, convection, forcing).
    pub ops: &'a AleMap,
    pub mass_old: &'a AleMap,
    pub mass_new: &'a AleMap,
    pub dt: f64,
    pub rho: f64,
    pub mu: f64,
    pub viscous: Viscous,
    /// Old velocity in reference representation on this layout.
    pub u_old: &'a [f64],
    /// Domain velocity (physical) at a reference point.
    pub domain_velocity: &'a dyn Fn(Point) -> Point,
    pub wall: Option<WallInertia<'a>>,
    /// Forcing covector.
    pub forcing: &'a [f64],
}

#[derive(Clone, Debug, Default)]
pub struct StepOutput {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    /// `rho/2 |u'|^2_{J new}`
    pub kin_new: f64,
    /// `rho/2 |u|^2_{J old}`
    pub kin_old: f64,
    /// `rho/2 |u' - u|^2_{J old}`
    pub jump: f64,
    /// `dt mu_eff <K u', u'>`
    pub visc: f64,
    /// `rho h/2 |v'|^2`
    pub wall_new: f64,
    /// `rho h/2 |v_half|^2`
    pub wall_old: f64,
    /// `rho h/2 |v' - v_half|^2`
    pub wall_jump: f64,
    /// `dt F(u')`
    pub work: f64,
    /// Max integrated divergence residual per cell.
    pub div_residual: f64,
}

impl StepOutput {
    /// `old + work - (new + jumps + visc)`; zero up to rounding.
    pub fn identity_residual(&self) -> f64 {
        self.kin_old + self.wall_old + self.work
            - (self.kin_new + self.jump + self.visc + self.wall_new + self.wall_jump)
    }
}

/// Advecting velocity `u - w` at a face, physical components.
pub fn advecting(layout: &Layout, pad: &Padded, x: &[f64], f: &Face, w: Point) -> Point {
    let own = match f.comp {
        Comp::Z => pad.uz(f.i as isize, f.j as isize),
        Comp::R => pad.ur(f.i as isize, f.j as isize),
    };
    let cross = cross_avg(layout, f).eval(x);
    match f.comp {
        Comp::Z => [own - w[0], cross - w[1]],
        Comp::R => [cross - w[0], own - w[1]],
    }
}

pub fn viscous_matrix(layout: &Layout, map: &AleMap, mu: f64, form: Viscous) -> Triplets {
    let s = grad_samples(layout, map);
    match form {
        Viscous::Full => stiffness(layout, &s, false).scaled(mu),
        Viscous::Symmetric => stiffness(layout, &s, true).scaled(2.0 * mu),
    }
}

fn shell_vector(layout: &Layout, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; layout.ndof()];
    for k in 1..layout.grid.nz {
        if let Some(i) = layout.shell_index(k) {
            out[i] = v[k];
        }
    }
    out
}

pub fn closed_pin(layout: &Layout) -> Option<usize> {
    if layout.is_closed() {
        Some(layout.grid.nz * layout.grid.nr - 1)
    } else {
        None
    }
}

pub fn solve_step(inp: &StepInput) -> Result<StepOutput> {
    let l = inp.layout;
    let n = l.ndof();
    let m_old = mass(l, inp.mass_old);
    let m_new = mass(l, inp.mass_new);
    let pad = Padded::new(l, inp.u_old);
    let c = advection(l, inp.ops, |f| advecting(l, &pad, inp.u_old, f, (inp.domain_velocity)(f.pos)));
    let k = viscous_matrix(l, inp.ops, inp.mu, inp.viscous);
    let b = divergence(l, inp.ops);

    let mut a = Triplets::new(n, n);
    a.extend_scaled(&m_old, inp.rho / inp.dt * 0.5);
    a.extend_scaled(&m_new, inp.rho / inp.dt * 0.5);
    a.extend_scaled(&skew(&c), inp.rho);
    a.extend_scaled(&k, 1.0);
    let ms = shell_mass(l);
    let mut rhs: Vec<f64> = m_old.to_csr().mul(inp.u_old).iter().map(|v| v * inp.rho / inp.dt).collect();
    let mut vh = vec![0.0; n];
    if let Some(w) = &inp.wall {
        a.extend_scaled(&ms, w.rho_h / inp.dt);
        vh = shell_vector(l, w.v_half);
        let t = ms.to_csr().mul(&vh);
        for (r, ti) in rhs.iter_mut().zip(&t) {
            *r += w.rho_h / inp.dt * ti;
        }
    }
    for (r, f) in rhs.iter_mut().zip(inp.forcing) {
        *r += f;
    }
    let s = Saddle::new(&a, &b, closed_pin(l))?;
    let (x, p) = s.solve(&rhs, &vec![0.0; b.rows])?;

    let (mo, mn, kc, bc) = (m_old.to_csr(), m_new.to_csr(), k.to_csr(), b.to_csr());
    let d: Vec<f64> = x.iter().zip(inp.u_old).map(|(a, b)| a - b).collect();
    let mut out = StepOutput {
        kin_new: 0.5 * inp.rho * mn.quad(&x),
        kin_old: 0.5 * inp.rho * mo.quad(inp.u_old),
        jump: 0.5 * inp.rho * mo.quad(&d),
        visc: inp.dt * kc.quad(&x),
        work: inp.dt * dot(inp.forcing, &x),
        div_residual: bc.mul(&x).iter().fold(0.0, |m, v| m.max(v.abs())),
        ..Default::default()
    };
    if let Some(w) = &inp.wall {
        let msc: Csr = ms.to_csr();
        let xs = shell_vector(l, &l.shell_values(&x));
        let dv: Vec<f64> = xs.iter().zip(&vh).map(|(a, b)| a - b).collect();
        out.wall_new = 0.5 * w.rho_h * msc.quad(&xs);
        out.wall_old = 0.5 * w.rho_h * msc.quad(&vh);
        out.wall_jump = 0.5 * w.rho_h * msc.quad(&dv);
    }
    out.x = x;
    out.p = p;
    Ok(out)
}

/// `q -> R (p_in int_in q_z - p_out int_out q_z)` on the open ends.
pub fn pressure_covector(layout: &Layout, map: &AleMap, radius: f64, p_in: f64, p_out: f64) -> Vec<f64> {
    let g = &layout.grid;
    let mut f = vec![0.0; layout.ndof()];
    for j in 0..g.nr {
        for (i, p, sign) in [(0usize, p_in, 1.0), (g.nz, p_out, -1.0)] {
            if let crate::grid::Slot::Dof(k) = layout.uz_slot(i, j) {
                let pos = g.uz_pos(i, j);
                f[k] += sign * radius * p * map.det(pos) * g.hr();
            }
        }
    }
    f
}

/// `q -> int J f . q` for a constant body force.
pub fn body_force_covector(layout: &Layout, map: &AleMap, force: Point) -> Vec<f64> {
    let mut f = vec![0.0; layout.ndof()];
    if force == [0.0, 0.0] {
        return f;
    }
    for face in layout.faces() {
        if face.slot == crate::grid::Slot::Zero {
            continue;
        }
        let val = if face.comp == Comp::Z { force[0] } else { force[1] };
        let w = crate::assembly::face_weight(layout, map, &face) * val;
        for &(k, c) in &layout.face_combo(&face).0 {
            f[k] += w * c;
        }
    }
    f
}
