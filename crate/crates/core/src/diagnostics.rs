//! Compactness diagnostics over families of time-discrete trajectories:
//! uniform bounds, numerical dissipation, time-shift moduli, dual-norm shift
//! estimates, envelope and squeezing rates, and uniform Ehrling constants.

use crate::error::{contract, Result};
use crate::field::DiscreteField;
use crate::geometry::{envelope, trapezoid_sq, AleMap, GammaOrientation, Motion, Point};
use crate::grid::{Comp, Grid, Layout, Slot, Walls};
use crate::linalg::{dot, Csr};
use crate::rothe_fsi::FsiTrajectory;
use crate::rothe_ns::{compose_with_ale, NsTrajectory};
use crate::spaces::{
    divergence_l2, h1_semi_sq, l2_sq, norm_matrix, pairing_covector, radial_with, squeeze, BoxGrid, DualSpace, HQuad,
    HSample, Leray, NormKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Least-squares line through `(log x, log y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl ScalingFit {
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(contract("abscissa and ordinate lengths differ"));
        }
        if x.len() < 3 {
            return Err(contract(format!("a scaling fit needs at least 3 points, got {}", x.len())));
        }
        if x.iter().chain(y).any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(contract("scaling fit needs positive finite values"));
        }
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let n = lx.len() as f64;
        let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
        let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
        if sxx == 0.0 {
            return Err(contract("scaling fit needs distinct abscissae"));
        }
        let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_tot: f64 = ly.iter().map(|b| (b - my).powi(2)).sum();
        let ss_res: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
        Ok(ScalingFit { x: x.to_vec(), y: y.to_vec(), slope, intercept, r2 })
    }
}

/// Scalar bookkeeping carried over from the solver ledger.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    /// Worst per-step energy slack relative to the reference energy.
    pub worst_slack: f64,
    pub max_energy: f64,
    pub total_dissipation: f64,
    pub initial_energy: f64,
    /// Forcing budget `sum C dt (P_in^2 + P_out^2)`.
    pub forcing_budget: f64,
    /// Aggregate of the prescribed-motion energy estimate relative to `|u^0|^2`.
    pub energy_constant: f64,
    pub eta_increment_sq: f64,
    pub eta_increment: f64,
}

/// One trajectory `u^0 .. u^N` of a family.
#[derive(Clone, Debug)]
pub struct Level {
    pub dt: f64,
    pub fields: Vec<DiscreteField>,
    /// Wall displacements `eta^0 .. eta^N` when the domain is computed.
    pub etas: Option<Vec<Vec<f64>>>,
    pub summary: LevelSummary,
}

impl Level {
    pub fn steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn has_wall(&self) -> bool {
        self.fields[0].layout.has_shell()
    }

    pub fn from_fsi(t: &FsiTrajectory) -> Self {
        let hz = t.grid.hz();
        let inc: Vec<f64> = t
            .etas
            .windows(2)
            .map(|w| {
                let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
                crate::rothe_fsi::eta_norms(&d, hz).1
            })
            .collect();
        let summary = LevelSummary {
            worst_slack: t.worst_slack(),
            max_energy: t.max_energy(),
            total_dissipation: t.total_dissipation(),
            initial_energy: t.e0,
            forcing_budget: t.ledger.iter().map(|r| r.forcing_inc).sum(),
            energy_constant: 0.0,
            eta_increment_sq: inc.iter().map(|v| v * v).sum(),
            eta_increment: inc.iter().sum(),
        };
        Level { dt: t.params.dt, fields: t.fields.clone(), etas: Some(t.etas.clone()), summary }
    }

    pub fn from_ns(t: &NsTrajectory) -> Self {
        let summary = LevelSummary {
            worst_slack: t.worst_relative_slack(),
            max_energy: t.ledger.iter().map(|r| r.kinetic).fold(0.5 * t.params.rho * l2_sq(&t.fields[0]), f64::max),
            total_dissipation: t.ledger.iter().map(|r| r.dissipation_increment).sum(),
            initial_energy: 0.5 * t.params.rho * l2_sq(&t.fields[0]),
            forcing_budget: 0.0,
            energy_constant: t.energy_constant(),
            eta_increment_sq: 0.0,
            eta_increment: 0.0,
        };
        Level { dt: t.dt, fields: t.fields.clone(), etas: None, summary }
    }
}

/// Trajectories of one configuration over a sequence of halved time steps.
#[derive(Clone, Debug)]
pub struct TrajectoryBundle {
    pub levels: Vec<Level>,
    pub config_hash: String,
    /// Prescribed motion, when the domain is not computed.
    pub motion: Option<Motion>,
}

impl TrajectoryBundle {
    pub fn new(levels: Vec<Level>, config_hash: impl Into<String>, motion: Option<Motion>) -> Result<Self> {
        let first = levels.first().ok_or_else(|| contract("empty trajectory bundle"))?;
        let t = first.horizon();
        let grid = first.fields[0].layout.grid;
        for w in levels.windows(2) {
            if !(w[1].dt < w[0].dt) {
                return Err(contract("time steps of a bundle must be strictly decreasing"));
            }
        }
        for l in &levels {
            if l.fields.len() < 2 {
                return Err(contract("every level needs at least one step"));
            }
            if (l.horizon() - t).abs() > 1e-9 * t.max(1.0) {
                return Err(contract("levels of a bundle must share the final time"));
            }
            if l.fields[0].layout.grid != grid {
                return Err(contract("levels of a bundle must share the spatial grid"));
            }
        }
        Ok(TrajectoryBundle { levels, config_hash: config_hash.into(), motion })
    }

    pub fn dts(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.dt).collect()
    }

    pub fn horizon(&self) -> f64 {
        self.levels[0].horizon()
    }

    pub fn has_wall(&self) -> bool {
        self.levels[0].has_wall()
    }

    /// Quadrature for `H` over a region containing every domain of the bundle.
    pub fn quadrature(&self, lines: usize, cells: usize) -> Result<HQuad> {
        let maps: Vec<AleMap> = self.levels.iter().flat_map(|l| l.fields.iter().map(|f| f.map.clone())).collect();
        let q = HQuad::covering(&maps, lines, cells)?;
        Ok(if self.has_wall() { q.with_wall(self.levels[0].fields[0].layout.grid.hz()) } else { q })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagOptions {
    pub quad_lines: usize,
    pub quad_cells: usize,
    pub shift_points: usize,
    /// Shift counts `l` for the dual-shift, envelope and squeezing sweeps.
    pub shifts: Vec<usize>,
    pub shift_samples: usize,
    /// Index of the level used for single-trajectory sweeps.
    pub reference_level: usize,
    pub envelope_width: usize,
    pub b_samples: usize,
    pub ehrling_deltas: Vec<f64>,
    pub ehrling_domains: usize,
    pub ehrling_trials: usize,
    pub ehrling_iters: usize,
    pub ehrling_verify: usize,
    pub ehrling_grid: [usize; 2],
    pub squeeze_fields: usize,
    pub squeeze_sigmas: Vec<f64>,
    pub inclusion_samples: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

/// Pass/fail thresholds of the report rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Per-step energy slack, relative.
    pub energy_slack: f64,
    pub energy_spread: f64,
    pub energy_constant_ratio: f64,
    pub a3_slope: f64,
    pub fit_r2: f64,
    pub shift_alpha: f64,
    pub shift_spread: f64,
    pub dual_shift_range: [f64; 2],
    pub dual_shift_r2: f64,
    pub squeeze_divergence: f64,
    pub squeeze_lemma_ratio: f64,
    pub density_range: [f64; 2],
    pub density_r2: f64,
    pub composition_ratio: f64,
    pub envelope_max_exponent: f64,
    pub envelope_l2_exponent: f64,
    pub ehrling_ratio: f64,
    pub ehrling_headroom: f64,
    pub b_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            energy_slack: 1e-8,
            energy_spread: 0.5,
            energy_constant_ratio: 1.5,
            a3_slope: 0.8,
            fit_r2: 0.9,
            shift_alpha: 0.4,
            shift_spread: 0.25,
            dual_shift_range: [0.35, 0.75],
            dual_shift_r2: 0.85,
            squeeze_divergence: 1e-10,
            squeeze_lemma_ratio: 4.0,
            density_range: [0.2, 0.35],
            density_r2: 0.85,
            composition_ratio: 3.0,
            envelope_max_exponent: 0.45,
            envelope_l2_exponent: 0.9,
            ehrling_ratio: 3.0,
            ehrling_headroom: 1.05,
            b_ratio: 2.0,
        }
    }
}

impl Default for DiagOptions {
    fn default() -> Self {
        DiagOptions {
            quad_lines: 96,
            quad_cells: 48,
            shift_points: 12,
            shifts: vec![1, 2, 4, 8, 16],
            shift_samples: 8,
            reference_level: 1,
            envelope_width: 3,
            b_samples: 50,
            ehrling_deltas: vec![0.1, 0.05],
            ehrling_domains: 10,
            ehrling_trials: 4,
            ehrling_iters: 60,
            ehrling_verify: 10_000,
            ehrling_grid: [24, 12],
            squeeze_fields: 20,
            squeeze_sigmas: vec![1.001, 1.01, 1.05, 1.1, 1.2],
            inclusion_samples: 1000,
            seed: 0,
            tolerances: Tolerances::default(),
        }
    }
}

/// `sum_{n >= 1} |u^n|^2_{H^1} dt`.
pub fn check_a1(level: &Level) -> f64 {
    level.fields[1..].iter().map(|u| level.dt * (l2_sq(u) + h1_semi_sq(u))).sum()
}

pub fn sample_level(level: &Level, q: &HQuad) -> Result<Vec<HSample>> {
    level.fields.iter().map(|u| q.sample(u)).collect()
}

/// `max_{n >= 1} |u^n|_H`.
pub fn check_a2(samples: &[HSample], q: &HQuad) -> f64 {
    samples[1..].iter().map(|s| q.norm_sq(s).sqrt()).fold(0.0, f64::max)
}

/// `sum_{n >= 2} |u^n - u^{n-1}|_H^2 dt`, the squared shift by one step over `(dt, T)`.
pub fn a3_sum(samples: &[HSample], q: &HQuad, dt: f64) -> f64 {
    (2..samples.len()).map(|n| dt * q.dist_sq(&samples[n], 1.0, &samples[n - 1], 1.0)).sum()
}

/// `|tau_h u - u|_{L^2(h, T; H)}` for the piecewise constant interpolant
/// (`u(t) = u^m` on `((m-1) dt, m dt]`), exact in time.
pub fn time_shift_modulus(samples: &[HSample], q: &HQuad, dt: f64, h: f64) -> Result<f64> {
    let n = samples.len() - 1;
    let t = dt * n as f64;
    if !(h > 0.0 && h < t) {
        return Err(contract(format!("shift h = {h} outside (0, {t})")));
    }
    let ratio = h / dt;
    let mut l = ratio.floor();
    if ratio - l > 1.0 - 1e-9 {
        l += 1.0;
    }
    let s = (h - l * dt).max(0.0);
    let l = l as usize;
    let mut sum = 0.0;
    if dt - s > 0.0 && l >= 1 {
        for m in l + 1..=n {
            sum += (dt - s) * q.dist_sq(&samples[m], 1.0, &samples[m - l], 1.0);
        }
    }
    if s > 0.0 {
        for m in l + 2..=n {
            sum += s * q.dist_sq(&samples[m], 1.0, &samples[m - l - 1], 1.0);
        }
    }
    Ok(sum.sqrt())
}

/// `n` log-spaced values in `[a, b]`.
pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| (a.ln() + (b.ln() - a.ln()) * k as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub h: f64,
    /// Modulus per level, same order as the bundle.
    pub modulus: Vec<f64>,
    pub sup: f64,
    /// `(max - min) / max` across levels.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BRow {
    pub level: usize,
    pub n: usize,
    pub t: f64,
    pub dual: f64,
    pub v_norm: f64,
    pub ratio: f64,
}

/// Covector of `q -> (g, q)_H` on the layout of `test`, where `g` is the difference
/// of two fields extended by zero (`a - b`, scaled).
fn difference_covector(test: &Layout, map: &AleMap, a: &DiscreteField, b: &DiscreteField, scale: f64) -> Vec<f64> {
    let (pa, pb) = (a.padded(), b.padded());
    let wall: Option<Vec<f64>> = if test.has_shell() {
        Some(a.shell().iter().zip(b.shell()).map(|(x, y)| scale * (x - y)).collect())
    } else {
        None
    };
    pairing_covector(
        test,
        map,
        |x: Point| {
            let (u, v) = (a.eval_physical(&pa, x), b.eval_physical(&pb, x));
            [scale * (u[0] - v[0]), scale * (u[1] - v[1])]
        },
        wall.as_deref(),
    )
}

/// Dual-norm ratio of the discrete time derivative at step `n`:
/// `|(u^{n+1} - u^n)/dt|_{Q'} / (|u^{n+1}|_V + 1)` with `Q` the solenoidal `H^2`
/// space on the domain of `u^{n+1}`.
pub fn b_ratio(level: &Level, n: usize) -> Result<(f64, f64)> {
    if n + 1 >= level.fields.len() {
        return Err(contract("step index beyond the trajectory"));
    }
    let (u0, u1) = (&level.fields[n], &level.fields[n + 1]);
    let ds = DualSpace::new(u1.layout.clone(), u1.map.clone(), NormKind::H2, true)?;
    let f = difference_covector(&u1.layout, &u1.map, u1, u0, 1.0 / level.dt);
    let dual = ds.dual_norm(&f)?;
    let v = (l2_sq(u1) + h1_semi_sq(u1)).sqrt();
    Ok((dual, v))
}

pub fn check_b(level: &Level, level_index: usize, samples: usize) -> Result<Vec<BRow>> {
    let n_steps = level.steps();
    let stride = (n_steps / samples.max(1)).max(1);
    let mut rows = Vec::new();
    for n in (0..n_steps).step_by(stride) {
        let (dual, v) = b_ratio(level, n)?;
        rows.push(BRow { level: level_index, n, t: n as f64 * level.dt, dual, v_norm: v, ratio: dual / (v + 1.0) });
    }
    Ok(rows)
}

fn gauss8(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    const X: [f64; 4] =
        [0.183_434_642_495_649_8, 0.525_532_409_916_329_0, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    const W: [f64; 4] =
        [0.362_683_783_378_362_0, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * X.iter().zip(&W).map(|(x, w)| w * (f(c - h * x) + f(c + h * x))).sum::<f64>()
}

/// Test layout on the lower envelope of `eta^{n-1} .. eta^{n+l}`, the domain common to
/// the fields `u^n .. u^{n+l}`.
fn common_domain(level: &Level, n: usize, l: usize, width: usize) -> Result<(crate::geometry::DomainEnvelope, AleMap)> {
    let etas = level.etas.as_ref().ok_or_else(|| contract("shift checks need computed wall displacements"))?;
    if n == 0 || n + l > level.steps() {
        return Err(contract(format!("window n = {n}, l = {l} outside 1..={}", level.steps())));
    }
    let base = &level.fields[0].map;
    let env = envelope(etas, n - 1, l + 1, width, base.length())?;
    let m = radial_with(base, env.lower.clone())?;
    m.check_admissible()?;
    Ok((env, m))
}

/// `|u^{n+l} - u^n|` in the dual of the common solenoidal test space (extended above
/// the common domain by the wall value), and `sqrt(l dt)`.
pub fn dual_shift(level: &Level, n: usize, l: usize, width: usize) -> Result<(f64, f64)> {
    let bound = (l as f64 * level.dt).sqrt();
    if l == 0 {
        return Ok((0.0, bound));
    }
    let (_, m) = common_domain(level, n, l, width)?;
    let layout = level.fields[0].layout.clone();
    let (a, b) = (&level.fields[n + l], &level.fields[n]);
    let mut f = difference_covector(&layout, &m, a, b, 1.0);
    // test functions continue above the common domain as (0, psi)
    let g = layout.grid;
    let (pa, pb) = (a.padded(), b.padded());
    for k in 1..g.nz {
        let z = k as f64 * g.hz();
        let r0 = m.apply([z, 1.0])[1];
        let mut strip = 0.0;
        for (fld, pad, sign) in [(a, &pa, 1.0), (b, &pb, -1.0)] {
            let top = fld.map.apply([z, 1.0])[1];
            if top > r0 {
                strip += sign * gauss8(r0, top, |r| fld.eval_physical(pad, [z, r])[1]);
            }
        }
        if let Some(i) = layout.shell_index(k) {
            f[i] += g.hz() * strip;
        }
    }
    let ds = DualSpace::new(layout, m, NormKind::H2, true)?;
    Ok((ds.dual_norm(&f)?, bound))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualShiftRow {
    pub n: usize,
    pub l: usize,
    pub h: f64,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub n: usize,
    pub l: usize,
    pub h: f64,
    pub gap_max: f64,
    pub gap_l2: f64,
    pub sandwich: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezeRow {
    pub n: usize,
    pub l: usize,
    pub h: f64,
    pub sigma: f64,
    pub error: f64,
    pub v_norm: f64,
    /// `error / |u|_V`
    pub relative: f64,
    /// `error / (sqrt(sigma - 1) (|grad u| + |v|))`
    pub lemma_ratio: f64,
    pub div_residual: f64,
}

/// Squeezes `u^{n+l}` from its domain into the common domain of the window and
/// extends it by the wall value up to the upper envelope.
pub fn squeeze_density(level: &Level, n: usize, l: usize, width: usize, q: (usize, usize)) -> Result<SqueezeRow> {
    let (env, _) = common_domain(level, n, l, width)?;
    let u = &level.fields[n + l];
    let AleMap::Radial { radius, length, eta } = &u.map else {
        return Err(contract("squeezing needs radial maps"));
    };
    let nz = u.layout.grid.nz;
    let hz = u.layout.grid.hz();
    let mut sigma: f64 = 1.0;
    for k in 0..=nz {
        let h = radius + eta.eval(k as f64 * hz, *length);
        sigma = sigma.max((radius + env.upper[k]) / h).max(h / (radius + env.lower[k]));
    }
    let target = radial_with(&u.map, env.upper.clone())?;
    let us = squeeze(u, sigma, &target)?;
    let hq = HQuad::covering(&[u.map.clone(), target.clone()], q.0, q.1)?;
    let error = hq.dist_sq(&hq.sample(&us)?, 1.0, &hq.sample(u)?, 1.0).sqrt();
    let grad = h1_semi_sq(u).sqrt();
    let v_norm = (l2_sq(u) + grad * grad).sqrt();
    let wall = trapezoid_sq(&u.shell(), hz).sqrt();
    let scale = (sigma - 1.0).sqrt() * (grad + wall);
    Ok(SqueezeRow {
        n,
        l,
        h: l as f64 * level.dt,
        sigma,
        error,
        v_norm,
        relative: if v_norm > 0.0 { error / v_norm } else { 0.0 },
        lemma_ratio: if scale > 0.0 { error / scale } else { 0.0 },
        div_residual: divergence_l2(&us) / v_norm.max(f64::MIN_POSITIVE),
    })
}

/// Random field with a few smooth modes of random decay (reference coordinates),
/// plus wall values when the layout has a wall.
pub fn random_smooth_field<R: Rng>(layout: &Layout, rng: &mut R) -> Vec<f64> {
    let kmax = rng.random_range(1..=6usize);
    let beta = rng.random_range(0.5..3.0);
    let len = layout.grid.length;
    let mut modes = Vec::new();
    for p in 0..=kmax {
        for q in 0..=kmax {
            let amp = (1.0 + (p + q) as f64).powf(-beta);
            let c: [f64; 2] = [amp * rng.random_range(-1.0..1.0), amp * rng.random_range(-1.0..1.0)];
            let ph: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
            modes.push((p as f64, q as f64, c, ph));
        }
    }
    let pi = std::f64::consts::PI;
    let mut x = vec![0.0; layout.ndof()];
    for f in layout.faces() {
        if let Slot::Dof(k) = f.slot {
            let c = if f.comp == Comp::Z { 0 } else { 1 };
            x[k] = modes
                .iter()
                .map(|(p, q, a, ph)| {
                    a[c] * (p * pi * f.pos[0] / len + ph[2 * c]).cos() * (q * pi * f.pos[1] + ph[2 * c + 1]).cos()
                })
                .sum();
        }
    }
    if layout.has_shell() {
        let wall: Vec<(f64, f64, f64)> = (1..=kmax)
            .map(|p| (p as f64, (p as f64).powf(-beta) * rng.random_range(-1.0..1.0), rng.random_range(0.0..pi)))
            .collect();
        for k in 1..layout.grid.nz {
            let z = k as f64 * layout.grid.hz();
            let v: f64 =
                wall.iter().map(|(p, a, ph)| a * (p * pi * z / len).sin() * (1.0 + 0.3 * (ph + z).cos())).sum();
            if let Some(i) = layout.shell_index(k) {
                x[i] = v;
            }
        }
    }
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezeLemmaRow {
    pub field: usize,
    pub sigma: f64,
    pub error: f64,
    pub ratio: f64,
    /// Divergence residual of the squeezed field over `|u|_{H^1}`.
    pub div_residual: f64,
}

/// `|u - u_sigma| / (sqrt(sigma - 1) (|grad u| + |v|))` for random solenoidal fields
/// on `map`, each squeezed into the widest admissible target `R + eta_M = sigma (R + eta)`.
pub fn squeeze_lemma_table(
    layout: Arc<Layout>,
    map: &AleMap,
    sigmas: &[f64],
    n_fields: usize,
    quad: (usize, usize),
    seed: u64,
) -> Result<Vec<SqueezeLemmaRow>> {
    let AleMap::Radial { radius, length, eta } = map else {
        return Err(contract("squeezing needs radial maps"));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leray = Leray::new(&layout, map)?;
    let g = layout.grid;
    let mut rows = Vec::new();
    for k in 0..n_fields {
        let x = leray.project(&random_smooth_field(&layout, &mut rng))?;
        let u = DiscreteField::new(layout.clone(), map.clone(), x)?;
        let grad = h1_semi_sq(&u).sqrt();
        let wall = trapezoid_sq(&u.shell(), g.hz()).sqrt();
        let h1 = (l2_sq(&u) + grad * grad).sqrt();
        for &s in sigmas {
            let top: Vec<f64> =
                (0..=g.nz).map(|i| s * (radius + eta.eval(i as f64 * g.hz(), *length)) - radius).collect();
            let target = radial_with(map, top)?;
            let us = squeeze(&u, s, &target)?;
            let hq = HQuad::covering(&[map.clone(), target.clone()], quad.0, quad.1)?;
            let error = hq.dist_sq(&hq.sample(&us)?, 1.0, &hq.sample(&u)?, 1.0).sqrt();
            rows.push(SqueezeLemmaRow {
                field: k,
                sigma: s,
                error,
                ratio: error / ((s - 1.0).sqrt() * (grad + wall)),
                div_residual: divergence_l2(&us) / h1,
            });
        }
    }
    Ok(rows)
}

/// Norms of `H`, `V` and the dual of the solenoidal `H^2` space on one domain.
pub struct EhrlingDomain {
    pub layout: Arc<Layout>,
    pub map: AleMap,
    m: Csr,
    kv: Csr,
    q: DualSpace,
    leray: Leray,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EhrlingRow {
    pub domain: usize,
    pub n: usize,
    pub l: usize,
    pub delta: f64,
    pub c_hat: f64,
    pub iterates: usize,
    pub verified: usize,
    pub violations: usize,
    /// Largest `(|v|_H - delta |v|_V) / |v|_{Q'}` seen among the verification fields.
    pub worst_fresh: f64,
}

impl EhrlingDomain {
    pub fn new(layout: Arc<Layout>, map: AleMap) -> Result<Self> {
        let leray = Leray::new(&layout, &map)?;
        let m = leray.mass().clone();
        let kv = norm_matrix(&layout, &map, NormKind::H1)?.to_csr();
        let q = DualSpace::new(layout.clone(), map.clone(), NormKind::H2, true)?;
        Ok(EhrlingDomain { layout, map, m, kv, q, leray })
    }

    /// `(|v|_H, |v|_V, |v|_{Q'})`
    pub fn norms(&self, vs: &[Vec<f64>]) -> Result<Vec<[f64; 3]>> {
        let fs: Vec<Vec<f64>> = vs.iter().map(|v| self.m.mul(v)).collect();
        let c = self.q.dual_norms(&fs)?;
        Ok(vs
            .iter()
            .zip(&fs)
            .zip(&c)
            .map(|((v, f), c)| [dot(v, f).max(0.0).sqrt(), self.kv.quad(v).max(0.0).sqrt(), *c])
            .collect())
    }

    /// `f(v) = (|v|_H - delta |v|_V) / |v|_{Q'}` and its Euclidean gradient.
    pub fn objective_gradient(&self, v: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
        let mv = self.m.mul(v);
        let kvv = self.kv.mul(v);
        let a = dot(v, &mv).sqrt();
        let b = dot(v, &kvv).sqrt();
        let qv = self.q.riesz(&mv)?;
        let c = dot(&mv, &qv).sqrt();
        let f = (a - delta * b) / c;
        let mq = self.m.mul(&qv);
        let grad = (0..v.len()).map(|i| (mv[i] / a - delta * kvv[i] / b - f * mq[i] / c) / c).collect();
        Ok((f, grad))
    }

    pub fn objective(&self, v: &[f64], delta: f64) -> Result<f64> {
        let [a, b, c] = self.norms(&[v.to_vec()])?[0];
        Ok((a - delta * b) / c)
    }

    pub fn random_solenoidal<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.leray.project(&random_smooth_field(&self.layout, rng))
    }

    /// Best value of `(|v|_H - delta |v|_V) / |v|_{Q'}` found by projected gradient
    /// ascent from random starts, with the number of iterates visited.
    pub fn estimate<R: Rng>(&self, delta: f64, trials: usize, iters: usize, rng: &mut R) -> Result<(f64, usize)> {
        let mut best = f64::NEG_INFINITY;
        let mut visited = 0;
        for _ in 0..trials {
            let mut v = self.random_solenoidal(rng)?;
            let mut fv = self.objective(&v, delta)?;
            visited += 1;
            best = best.max(fv);
            let mut step = 0.1;
            for _ in 0..iters {
                let (_, grad) = self.objective_gradient(&v, delta)?;
                let a = dot(&v, &self.m.mul(&v)).sqrt();
                let d = self.leray.riesz(&grad)?;
                let dn = dot(&d, &self.m.mul(&d)).sqrt();
                if !(dn > 0.0) {
                    break;
                }
                let mut improved = false;
                for _ in 0..12 {
                    let t = step * a / dn;
                    let w: Vec<f64> = v.iter().zip(&d).map(|(x, y)| x + t * y).collect();
                    let fw = self.objective(&w, delta)?;
                    visited += 1;
                    best = best.max(fw);
                    if fw > fv {
                        let wn = dot(&w, &self.m.mul(&w)).sqrt();
                        v = w.iter().map(|x| x / wn).collect();
                        improved = fw - fv > 1e-10 * fv.abs();
                        fv = fw;
                        step *= 2.0;
                        break;
                    }
                    step *= 0.25;
                }
                if !improved {
                    break;
                }
            }
        }
        Ok((best.max(0.0), visited))
    }

    /// Counts fresh random fields violating `|v|_H <= delta |v|_V + headroom c_hat |v|_{Q'}`
    /// for each `(delta, c_hat)`; also returns the largest ratio seen per pair.
    pub fn verify<R: Rng>(
        &self,
        pairs: &[(f64, f64)],
        count: usize,
        headroom: f64,
        rng: &mut R,
    ) -> Result<Vec<(usize, f64)>> {
        let mut out = vec![(0usize, f64::NEG_INFINITY); pairs.len()];
        let mut left = count;
        while left > 0 {
            let batch = left.min(256);
            left -= batch;
            let vs: Vec<Vec<f64>> = (0..batch).map(|_| self.random_solenoidal(rng)).collect::<Result<_>>()?;
            for [a, b, c] in self.norms(&vs)? {
                for (k, &(delta, ch)) in pairs.iter().enumerate() {
                    out[k].1 = out[k].1.max((a - delta * b) / c);
                    if a > delta * b + headroom * ch * c + 1e-12 * a {
                        out[k].0 += 1;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Radial map on a coarser wall grid, interpolating the displacement.
pub fn coarse_radial(map: &AleMap, nz: usize) -> Result<AleMap> {
    let AleMap::Radial { length, eta, .. } = map else {
        return Err(contract("not a radial map"));
    };
    let table: Vec<f64> = (0..=nz).map(|k| eta.eval(k as f64 * length / nz as f64, *length)).collect();
    radial_with(map, table)
}

/// `|u^n o A^n - u^n|_H / (dt |grad u^n|)`, with `u^n o A^n` carried to the next domain.
pub fn composition_ratio(level: &Level, n: usize, q: &HQuad) -> Result<f64> {
    if n + 1 >= level.fields.len() {
        return Err(contract("no next domain for the composition check"));
    }
    let u = &level.fields[n];
    let carried = compose_with_ale(u, &level.fields[n + 1].map)?;
    let d = q.dist_sq(&q.sample(&carried)?, 1.0, &q.sample(u)?, 1.0).sqrt();
    let g = h1_semi_sq(u).sqrt();
    if g == 0.0 {
        return Err(contract("zero gradient in the composition check"));
    }
    Ok(d / (level.dt * g))
}

/// `|u|_{H^s(box)} / |grad u|` with `u` extended by zero to a box of `n x m` cells.
pub fn gagliardo_ratio(u: &DiscreteField, b: &BoxGrid, s: f64) -> Result<f64> {
    let e = crate::spaces::extend_by_zero(u, b, None)?;
    let hs = (e.l2().powi(2) + crate::spaces::hs_gagliardo(&e, s)?.powi(2)).sqrt();
    Ok(hs / h1_semi_sq(u).sqrt())
}

/// Pass/fail line of the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionRow {
    pub id: String,
    pub description: String,
    pub passed: bool,
    pub measured: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub config_hash: String,
    pub dts: Vec<f64>,
    pub summaries: Vec<LevelSummary>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    pub a3_fit: Option<ScalingFit>,
    pub shift: Vec<ShiftRow>,
    pub shift_fit: Option<ScalingFit>,
    pub b: Vec<BRow>,
    pub b_max: Vec<f64>,
    pub dual_shift: Vec<DualShiftRow>,
    pub dual_shift_fit: Option<ScalingFit>,
    pub envelope: Vec<EnvelopeRow>,
    pub envelope_max_fit: Option<ScalingFit>,
    pub envelope_l2_fit: Option<ScalingFit>,
    pub squeeze: Vec<SqueezeRow>,
    pub squeeze_fit: Option<ScalingFit>,
    pub squeeze_lemma: Vec<SqueezeLemmaRow>,
    pub ehrling: Vec<EhrlingRow>,
    pub composition: Vec<(f64, f64)>,
    pub inclusion_violations: Option<usize>,
    pub rows: Vec<CriterionRow>,
    pub errors: Vec<String>,
}

impl DiagnosticsReport {
    pub fn all_passed(&self) -> bool {
        self.errors.is_empty() && self.rows.iter().all(|r| r.passed)
    }

    fn row(&mut self, id: &str, description: &str, passed: bool, measured: String) {
        self.rows.push(CriterionRow {
            id: id.into(),
            description: description.into(),
            passed,
            measured,
            config_hash: self.config_hash.clone(),
        });
    }

    fn fail(&mut self, id: &str, description: &str, e: &crate::Error) {
        self.errors.push(format!("{id}: {e}"));
        self.row(id, description, false, format!("error: {e}"));
    }
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        (max - min) / max
    } else {
        0.0
    }
}

pub fn max_over_min(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else if max == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Random window starts `1..=max_n`, sorted and distinct when possible.
fn window_starts(rng: &mut ChaCha8Rng, max_n: usize, count: usize) -> Vec<usize> {
    let mut v: Vec<usize> = if max_n <= count {
        (1..=max_n).collect()
    } else {
        let mut all: Vec<usize> = (1..=max_n).collect();
        for k in 0..count {
            let j = rng.random_range(k..all.len());
            all.swap(k, j);
        }
        all.truncate(count);
        all
    };
    v.sort_unstable();
    v
}

/// Time-shift table over `points` log-spaced shifts between the smallest step and `T/10`.
pub fn shift_table(
    bundle: &TrajectoryBundle,
    samples: &[Vec<HSample>],
    q: &HQuad,
    points: usize,
) -> Result<Vec<ShiftRow>> {
    let dt_min = bundle.levels.iter().map(|l| l.dt).fold(f64::INFINITY, f64::min);
    let hs = log_space(dt_min, bundle.horizon() / 10.0, points);
    hs.iter()
        .map(|&h| {
            let modulus: Vec<f64> = bundle
                .levels
                .iter()
                .zip(samples)
                .map(|(l, s)| time_shift_modulus(s, q, l.dt, h))
                .collect::<Result<_>>()?;
            let sup = modulus.iter().cloned().fold(0.0, f64::max);
            Ok(ShiftRow { h, spread: spread(&modulus), sup, modulus })
        })
        .collect()
}

/// Runs every check that applies to the bundle and evaluates the pass/fail rows.
pub fn build_report(bundle: &TrajectoryBundle, opts: &DiagOptions) -> Result<DiagnosticsReport> {
    if bundle.levels.len() < 3 {
        return Err(contract(format!("a report needs at least 3 levels, got {}", bundle.levels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rep = DiagnosticsReport {
        config_hash: bundle.config_hash.clone(),
        dts: bundle.dts(),
        summaries: bundle.levels.iter().map(|l| l.summary.clone()).collect(),
        ..Default::default()
    };
    let wall = bundle.has_wall();
    let tol = &opts.tolerances;

    // energy
    let slack = bundle.levels.iter().map(|l| l.summary.worst_slack).fold(f64::INFINITY, f64::min);
    if wall {
        let emax: Vec<f64> = bundle.levels.iter().map(|l| l.summary.max_energy).collect();
        let dsum: Vec<f64> = bundle.levels.iter().map(|l| l.summary.total_dissipation).collect();
        let ok = slack >= -tol.energy_slack && spread(&emax) <= tol.energy_spread && spread(&dsum) <= tol.energy_spread;
        rep.row(
            "dee",
            "per-step energy inequality on every level; max energy and total dissipation uniform within 50%",
            ok,
            format!(
                "worst slack {slack:.3e}, max-energy spread {:.3}, dissipation spread {:.3}",
                spread(&emax),
                spread(&dsum)
            ),
        );
    } else {
        let consts: Vec<f64> = bundle.levels.iter().map(|l| l.summary.energy_constant).collect();
        let ok = slack >= -tol.energy_slack && max_over_min(&consts) <= tol.energy_constant_ratio;
        rep.row(
            "energy_ns",
            "per-step energy inequality on every level; energy constant uniform within 1.5x",
            ok,
            format!("worst slack {slack:.3e}, energy-constant max/min {:.3}", max_over_min(&consts)),
        );
    }

    // A1, A2, A3 and shifts
    rep.a1 = bundle.levels.iter().map(check_a1).collect();
    let q = bundle.quadrature(opts.quad_lines, opts.quad_cells)?;
    let mut samples = Vec::with_capacity(bundle.levels.len());
    for l in &bundle.levels {
        samples.push(sample_level(l, &q)?);
    }
    rep.a2 = samples.iter().map(|s| check_a2(s, &q)).collect();
    rep.a3 = bundle.levels.iter().zip(&samples).map(|(l, s)| a3_sum(s, &q, l.dt)).collect();
    match ScalingFit::fit(&rep.dts, &rep.a3) {
        Ok(f) => {
            let ok = f.slope >= tol.a3_slope && f.r2 >= tol.fit_r2;
            rep.row(
                "a3",
                "numerical dissipation slope >= 0.8 with R^2 >= 0.9",
                ok,
                format!("slope {:.3}, R^2 {:.4}", f.slope, f.r2),
            );
            rep.a3_fit = Some(f);
        }
        Err(e) => rep.fail("a3", "numerical dissipation slope >= 0.8 with R^2 >= 0.9", &e),
    }
    match shift_table(bundle, &samples, &q, opts.shift_points) {
        Ok(rows) => {
            let hs: Vec<f64> = rows.iter().map(|r| r.h).collect();
            let sups: Vec<f64> = rows.iter().map(|r| r.sup).collect();
            let worst = rows.iter().map(|r| r.spread).fold(0.0, f64::max);
            match ScalingFit::fit(&hs, &sups) {
                Ok(f) => {
                    let ok = f.slope >= tol.shift_alpha && f.r2 >= tol.fit_r2 && worst <= tol.shift_spread;
                    rep.row(
                        "equicontinuity",
                        "sup shift modulus ~ h^alpha with alpha >= 0.4, R^2 >= 0.9; spread across levels <= 25% at every h",
                        ok,
                        format!("alpha {:.3}, R^2 {:.4}, worst spread {:.3}", f.slope, f.r2, worst),
                    );
                    rep.shift_fit = Some(f);
                }
                Err(e) => rep.fail("equicontinuity", "shift modulus fit", &e),
            }
            rep.shift = rows;
        }
        Err(e) => rep.fail("equicontinuity", "shift modulus table", &e),
    }
    drop(samples);

    // condition B
    let mut bmax = Vec::new();
    for (k, l) in bundle.levels.iter().enumerate() {
        match check_b(l, k, opts.b_samples) {
            Ok(rows) => {
                bmax.push(rows.iter().map(|r| r.ratio).fold(0.0, f64::max));
                rep.b.extend(rows);
            }
            Err(e) => {
                rep.fail("condition_b", "dual-norm time derivative ratio", &e);
                break;
            }
        }
    }
    if bmax.len() == bundle.levels.len() {
        let r = max_over_min(&bmax);
        rep.row(
            "condition_b",
            "max (B)-ratio varies at most 2x across levels",
            r <= tol.b_ratio,
            format!("max/min {r:.3}"),
        );
    }
    rep.b_max = bmax;

    if wall {
        wall_checks(bundle, opts, &mut rep, &mut rng);
    } else if let Some(motion) = &bundle.motion {
        motion_checks(bundle, motion, opts, &q, &mut rep, &mut rng);
    }
    Ok(rep)
}

fn wall_checks(bundle: &TrajectoryBundle, opts: &DiagOptions, rep: &mut DiagnosticsReport, rng: &mut ChaCha8Rng) {
    let tol = &opts.tolerances;
    let k = opts.reference_level.min(bundle.levels.len() - 1);
    let level = &bundle.levels[k];
    let lmax = opts.shifts.iter().cloned().max().unwrap_or(1);
    if level.steps() <= lmax + 1 {
        rep.fail(
            "dual_shift",
            "reference level too short",
            &contract("reference level shorter than the largest shift"),
        );
        return;
    }
    let starts = window_starts(rng, level.steps() - lmax, opts.shift_samples);
    let w = opts.envelope_width;

    // envelopes
    let etas = level.etas.as_ref().expect("wall levels carry displacements");
    let mut gmax = Vec::new();
    let mut gl2 = Vec::new();
    let mut sandwich = true;
    for &l in &opts.shifts {
        let (mut a, mut b) = (0.0, 0.0);
        for &n in &starts {
            match envelope(etas, n, l, w, level.fields[0].map.length()) {
                Ok(e) => {
                    let s = e.sandwiches(etas);
                    sandwich &= s;
                    a += e.gap_max;
                    b += e.gap_l2;
                    rep.envelope.push(EnvelopeRow {
                        n,
                        l,
                        h: l as f64 * level.dt,
                        gap_max: e.gap_max,
                        gap_l2: e.gap_l2,
                        sandwich: s,
                    });
                }
                Err(e) => {
                    rep.fail("envelopes", "envelope construction", &e);
                    return;
                }
            }
        }
        gmax.push(a / starts.len() as f64);
        gl2.push(b / starts.len() as f64);
    }
    let hs: Vec<f64> = opts.shifts.iter().map(|l| *l as f64 * level.dt).collect();
    match (ScalingFit::fit(&hs, &gmax), ScalingFit::fit(&hs, &gl2)) {
        (Ok(a), Ok(b)) => {
            let ok = a.slope >= tol.envelope_max_exponent && b.slope >= tol.envelope_l2_exponent && sandwich;
            rep.row(
                "envelopes",
                "pointwise gap exponent >= 0.45, L2 gap exponent >= 0.9, sandwich at every node",
                ok,
                format!("pointwise {:.3}, L2 {:.3}, sandwich {sandwich}", a.slope, b.slope),
            );
            rep.envelope_max_fit = Some(a);
            rep.envelope_l2_fit = Some(b);
        }
        (Err(e), _) | (_, Err(e)) => rep.fail("envelopes", "envelope gap fits", &e),
    }

    // dual shift
    let mut means = Vec::new();
    for &l in &opts.shifts {
        let mut acc = 0.0;
        for &n in &starts {
            match dual_shift(level, n, l, w) {
                Ok((m, b)) => {
                    acc += m;
                    rep.dual_shift.push(DualShiftRow { n, l, h: l as f64 * level.dt, measured: m, bound: b });
                }
                Err(e) => {
                    rep.fail("dual_shift", "dual-shift estimate", &e);
                    return;
                }
            }
        }
        means.push(acc / starts.len() as f64);
    }
    match ScalingFit::fit(&hs, &means) {
        Ok(f) => {
            let ok =
                (tol.dual_shift_range[0]..=tol.dual_shift_range[1]).contains(&f.slope) && f.r2 >= tol.dual_shift_r2;
            rep.row(
                "dual_shift",
                "exponent of the dual norm of shifted differences in [0.35, 0.75], R^2 >= 0.85",
                ok,
                format!("exponent {:.3}, R^2 {:.4}", f.slope, f.r2),
            );
            rep.dual_shift_fit = Some(f);
        }
        Err(e) => rep.fail("dual_shift", "dual-shift fit", &e),
    }

    // squeezing
    let mut rel = Vec::new();
    let mut div_worst: f64 = 0.0;
    for &l in &opts.shifts {
        let mut acc = 0.0;
        for &n in &starts {
            match squeeze_density(level, n, l, w, (opts.quad_lines, opts.quad_cells)) {
                Ok(r) => {
                    acc += r.relative;
                    div_worst = div_worst.max(r.div_residual);
                    rep.squeeze.push(r);
                }
                Err(e) => {
                    rep.fail("squeezing", "squeeze density", &e);
                    return;
                }
            }
        }
        rel.push(acc / starts.len() as f64);
    }
    let u0 = &level.fields[starts[0]];
    let lemma = squeeze_lemma_table(
        u0.layout.clone(),
        &u0.map,
        &opts.squeeze_sigmas,
        opts.squeeze_fields,
        (opts.quad_lines, opts.quad_cells),
        opts.seed ^ 0x5eed,
    );
    match (ScalingFit::fit(&hs, &rel), lemma) {
        (Ok(f), Ok(lem)) => {
            let per_field = (0..opts.squeeze_fields)
                .map(|k| {
                    let r: Vec<f64> = lem.iter().filter(|r| r.field == k).map(|r| r.ratio).collect();
                    max_over_min(&r)
                })
                .fold(0.0, f64::max);
            let div = lem.iter().map(|r| r.div_residual).fold(div_worst, f64::max);
            let ok = div <= tol.squeeze_divergence
                && per_field <= tol.squeeze_lemma_ratio
                && (tol.density_range[0]..=tol.density_range[1]).contains(&f.slope)
                && f.r2 >= tol.density_r2;
            rep.row(
                "squeezing",
                "divergence of u_sigma <= 1e-10 |u|_H1; lemma ratio max/min <= 4 over sigma; density exponent in [0.2, 0.35], R^2 >= 0.85",
                ok,
                format!(
                    "divergence {div:.2e}, lemma max/min {per_field:.3}, density exponent {:.3} (R^2 {:.4})",
                    f.slope, f.r2
                ),
            );
            rep.squeeze_fit = Some(f);
            rep.squeeze_lemma = lem;
        }
        (Err(e), _) | (_, Err(e)) => rep.fail("squeezing", "squeezing checks", &e),
    }

    // Ehrling
    match ehrling_family(level, &starts, opts, rng) {
        Ok(rows) => {
            let mut ok = true;
            let mut parts = Vec::new();
            for &d in &opts.ehrling_deltas {
                let c: Vec<f64> = rows.iter().filter(|r| r.delta == d).map(|r| r.c_hat).collect();
                let v: usize = rows.iter().filter(|r| r.delta == d).map(|r| r.violations).sum();
                let r = max_over_min(&c);
                ok &= r <= tol.ehrling_ratio && v == 0;
                parts.push(format!("delta {d}: max/min {r:.3}, violations {v}"));
            }
            rep.row(
                "ehrling",
                "C(delta) family max/min <= 3; certified on fresh random fields with 5% headroom",
                ok,
                parts.join("; "),
            );
            rep.ehrling = rows;
        }
        Err(e) => rep.fail("ehrling", "Ehrling estimates", &e),
    }
}

/// Ehrling constants on the common domains of several windows of the reference level.
pub fn ehrling_family(
    level: &Level,
    starts: &[usize],
    opts: &DiagOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EhrlingRow>> {
    let [nz, nr] = opts.ehrling_grid;
    let length = level.fields[0].map.length();
    let layout = Arc::new(Layout::new(Grid::new(nz, nr, length)?, Walls::tube())?);
    let mut windows = Vec::new();
    'outer: for &n in starts {
        for &l in &opts.shifts {
            if windows.len() == opts.ehrling_domains {
                break 'outer;
            }
            windows.push((n, l));
        }
    }
    let mut rows = Vec::new();
    for (k, &(n, l)) in windows.iter().enumerate() {
        let (_, m) = common_domain(level, n, l, opts.envelope_width)?;
        let dom = EhrlingDomain::new(layout.clone(), coarse_radial(&m, nz)?)?;
        let mut pairs = Vec::new();
        let mut partial = Vec::new();
        for &d in &opts.ehrling_deltas {
            let (c, it) = dom.estimate(d, opts.ehrling_trials, opts.ehrling_iters, rng)?;
            pairs.push((d, c));
            partial.push(it);
        }
        let checks = dom.verify(&pairs, opts.ehrling_verify, opts.tolerances.ehrling_headroom, rng)?;
        for ((&(d, c), it), (viol, worst)) in pairs.iter().zip(partial).zip(checks) {
            rows.push(EhrlingRow {
                domain: k,
                n,
                l,
                delta: d,
                c_hat: c,
                iterates: it,
                verified: opts.ehrling_verify,
                violations: viol,
                worst_fresh: worst,
            });
        }
    }
    Ok(rows)
}

fn motion_checks(
    bundle: &TrajectoryBundle,
    motion: &Motion,
    opts: &DiagOptions,
    q: &HQuad,
    rep: &mut DiagnosticsReport,
    rng: &mut ChaCha8Rng,
) {
    let tol = &opts.tolerances;
    // composition error at a common time on every level
    let t = 0.5 * bundle.horizon();
    let mut ratios = Vec::new();
    for l in &bundle.levels {
        let n = ((t / l.dt).round() as usize).min(l.steps() - 1);
        match composition_ratio(l, n, q) {
            Ok(r) => {
                ratios.push(r);
                rep.composition.push((l.dt, r));
            }
            Err(e) => {
                rep.fail("composition", "ALE composition error", &e);
                return;
            }
        }
    }
    let r = max_over_min(&ratios);
    rep.row(
        "composition",
        "ALE composition ratio max/min <= 3 across levels",
        r <= tol.composition_ratio,
        format!("max/min {r:.3}"),
    );

    // shrunk-domain inclusion on random (t, s, h)
    let horizon = bundle.horizon();
    let sampling = crate::geometry::LipschitzSampling {
        times: (0..=32).map(|k| horizon * k as f64 / 32.0).collect(),
        nx: 32,
        ny: 16,
        space_radius: 0.1,
        time_radius: horizon / 16.0,
    };
    let lip = match crate::geometry::estimate_lipschitz(motion, &sampling) {
        Ok(l) => l,
        Err(e) => {
            rep.fail("inclusion", "Lipschitz estimate", &e);
            return;
        }
    };
    let mut violations = 0;
    for _ in 0..opts.inclusion_samples {
        let h = rng.random_range(1e-3..0.05);
        let t0 = rng.random_range(0.0..horizon);
        let s0 = (t0 + rng.random_range(-h..h)).clamp(0.0, horizon);
        let gamma = crate::geometry::shrink_distance(&lip, h, GammaOrientation::UpperOverLower);
        match crate::geometry::shrunk_domain_inclusion(motion, gamma, t0, s0, 4, rng) {
            Ok(r) => violations += r.violations,
            Err(e) => {
                rep.fail("inclusion", "shrunk-domain inclusion", &e);
                return;
            }
        }
    }
    rep.inclusion_violations = Some(violations);
    rep.row(
        "inclusion",
        "shrunk domains map inside the shifted domain on random (t, s, h)",
        violations == 0,
        format!("{violations} violations over {} triples", opts.inclusion_samples),
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::face_weight;
    use crate::geometry::EtaShape;

    #[test]
    fn fit_recovers_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(0.7)).collect();
        let f = ScalingFit::fit(&x, &y).unwrap();
        assert!((f.slope - 0.7).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        assert!(ScalingFit::fit(&x[..2], &y[..2]).is_err());
        assert!(ScalingFit::fit(&x, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn log_space_endpoints() {
        let v = log_space(0.01, 1.0, 3);
        assert!((v[1] - 0.1).abs() < 1e-12 && (v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gauss8_integrates_polynomials() {
        let v = gauss8(0.0, 2.0, |x| x.powi(7));
        assert!((v - 32.0).abs() < 1e-11);
    }

    #[test]
    fn face_weights_are_positive() {
        let l = Layout::new(Grid::new(4, 4, 1.0).unwrap(), Walls::tube()).unwrap();
        let m = AleMap::identity(1.0);
        assert!(l.faces().iter().all(|f| face_weight(&l, &m, f) >= 0.0));
    }

    #[test]
    fn radial_table_is_coarsened_by_sampling() {
        let m = AleMap::Radial { radius: 1.0, length: 2.0, eta: EtaShape::Sine { amp: 0.1, mode: 1.0 } };
        let c = coarse_radial(&m, 4).unwrap();
        assert!((c.apply([1.0, 1.0])[1] - 1.1).abs() < 1e-12);
    }
}
