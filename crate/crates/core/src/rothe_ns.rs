//! Rothe scheme for Navier-Stokes on a prescribed moving domain: the previous
//! velocity is carried to the new domain by the step map and one linear
//! problem is solved on the new domain.

use crate::error::{contract, Result};
use crate::field::DiscreteField;
use crate::geometry::{ale_apply, in_reference, AleMap, Motion};
use crate::grid::{Layout, Slot};
use crate::spaces::{divergence_l2, l2_sq};
use crate::step::{body_force_covector, pressure_covector, solve_step, StepInput, Viscous};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsParams {
    pub rho: f64,
    pub mu: f64,
    pub dt: f64,
    pub steps: usize,
    pub body_force: [f64; 2],
    /// Inlet/outlet pressures, used on open ends.
    pub p_in: f64,
    pub p_out: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct NsLedgerRow {
    pub n: usize,
    pub t: f64,
    pub kinetic: f64,
    pub dissipation_increment: f64,
    pub composition_increment: f64,
    pub div_residual: f64,
    pub energy_slack: f64,
}

#[derive(Clone, Debug)]
pub struct NsTrajectory {
    pub params: NsParams,
    pub dt: f64,
    pub motion: Motion,
    /// `u^0 .. u^N`, `u^n` on the domain at `t = n dt`.
    pub fields: Vec<DiscreteField>,
    pub ledger: Vec<NsLedgerRow>,
}

/// `u_prev o A` on the new domain. Face values are pulled back through the step map
/// and interpolated, so they coincide with the reference values of `u_prev`.
pub fn compose_with_ale(u_prev: &DiscreteField, new_map: &AleMap) -> Result<DiscreteField> {
    if *new_map == u_prev.map {
        return Ok(u_prev.clone());
    }
    let l = &u_prev.layout;
    let pad = u_prev.padded();
    let mut x = u_prev.x.clone();
    for f in l.faces() {
        if let Slot::Dof(k) = f.slot {
            let y = ale_apply(&u_prev.map, new_map, new_map.apply(f.pos))?;
            let p = u_prev.map.inverse(y)?;
            if !in_reference(p, l.grid.length, 1e-9) {
                return Err(contract("step map leaves the previous domain"));
            }
            let v = pad.interp(p);
            x[k] = if f.comp == crate::grid::Comp::Z { v[0] } else { v[1] };
        }
    }
    DiscreteField::new(l.clone(), new_map.clone(), x)
}

/// Advances `u0` (given on the domain at `t = 0`) through `params.steps` steps.
pub fn run_ns(u0: &DiscreteField, motion: &Motion, params: &NsParams) -> Result<NsTrajectory> {
    if !(params.dt > 0.0) || !(params.mu > 0.0) || !(params.rho > 0.0) {
        return Err(contract("dt, mu and rho must be positive"));
    }
    let layout: Arc<Layout> = u0.layout.clone();
    if layout.has_shell() {
        return Err(contract("the prescribed-motion scheme does not take a wall unknown"));
    }
    let m0 = motion.map_at(0.0);
    m0.check_admissible()?;
    let mut u = DiscreteField::new(layout.clone(), m0, u0.x.clone())?;
    let mut fields = vec![u.clone()];
    let mut ledger = Vec::with_capacity(params.steps);
    for n in 0..params.steps {
        let t1 = (n + 1) as f64 * params.dt;
        let new_map = motion.map_at(t1);
        new_map.check_admissible()?;
        let carried = compose_with_ale(&u, &new_map)?;
        let vel = |p| motion.velocity(t1, p);
        let mut f = body_force_covector(&layout, &new_map, params.body_force);
        if params.p_in != 0.0 || params.p_out != 0.0 {
            let radius = match &new_map {
                AleMap::Radial { radius, .. } => *radius,
                _ => 1.0,
            };
            let pf = pressure_covector(&layout, &new_map, radius, params.p_in, params.p_out);
            for (a, b) in f.iter_mut().zip(&pf) {
                *a += b;
            }
        }
        let out = solve_step(&StepInput {
            layout: &layout,
            ops: &new_map,
            mass_old: &u.map,
            mass_new: &new_map,
            dt: params.dt,
            rho: params.rho,
            mu: params.mu,
            viscous: Viscous::Full,
            u_old: &carried.x,
            domain_velocity: &vel,
            wall: None,
            forcing: &f,
        })?;
        let next = DiscreteField::new(layout.clone(), new_map, out.x.clone())?;
        ledger.push(NsLedgerRow {
            n: n + 1,
            t: t1,
            kinetic: out.kin_new,
            dissipation_increment: out.visc,
            composition_increment: out.jump,
            div_residual: divergence_l2(&next),
            energy_slack: out.kin_old + out.work - (out.kin_new + out.jump + out.visc),
        });
        u = next;
        fields.push(u.clone());
    }
    Ok(NsTrajectory { params: params.clone(), dt: params.dt, motion: motion.clone(), fields, ledger })
}

impl NsTrajectory {
    /// `max_n (|u^n|^2 + sum |u^{k+1} - u^k o A^k|^2 + sum dt |grad u^k|^2) / |u^0|^2`.
    pub fn energy_constant(&self) -> f64 {
        let e0 = l2_sq(&self.fields[0]);
        if e0 <= 0.0 {
            return 0.0;
        }
        let (rho, mu) = (self.params.rho, self.params.mu);
        let mut acc = 0.0;
        let mut worst: f64 = 1.0;
        for r in &self.ledger {
            acc += 2.0 * r.composition_increment / rho + r.dissipation_increment / mu;
            worst = worst.max((2.0 * r.kinetic / rho + acc) / e0);
        }
        worst
    }

    /// Worst per-step energy slack relative to the kinetic energy before the step.
    pub fn worst_relative_slack(&self) -> f64 {
        let mut prev = 0.5 * self.params.rho * l2_sq(&self.fields[0]);
        let mut worst = f64::INFINITY;
        for r in &self.ledger {
            worst = worst.min(r.energy_slack / prev.max(f64::MIN_POSITIVE));
            prev = r.kinetic;
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, Walls};

    #[test]
    fn compose_is_identity_on_static_domain() {
        let l = Arc::new(Layout::new(Grid::new(6, 4, 1.0).unwrap(), Walls::closed()).unwrap());
        let m = AleMap::identity(1.0);
        let x: Vec<f64> = (0..l.ndof()).map(|k| (k as f64).sin()).collect();
        let u = DiscreteField::new(l, m.clone(), x.clone()).unwrap();
        assert_eq!(compose_with_ale(&u, &m).unwrap().x, x);
    }

    #[test]
    fn compose_keeps_reference_values_on_moving_domain() {
        let l = Arc::new(Layout::new(Grid::new(8, 4, 1.0).unwrap(), Walls::closed()).unwrap());
        let mo = Motion::Shear { length: 1.0, amp: 0.1, omega: 1.0, profile: crate::geometry::ShearProfile::Sine };
        let x: Vec<f64> = (0..l.ndof()).map(|k| (k as f64).sin()).collect();
        let u = DiscreteField::new(l, mo.map_at(0.2), x.clone()).unwrap();
        let c = compose_with_ale(&u, &mo.map_at(0.25)).unwrap();
        let d = c.x.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-12, "{d}");
    }
}
