//! Reference domain, ALE maps and boundary motions.

use crate::error::{contract, geometry, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

/// Displacement of the elastic wall along the axis.
#[derive(Clone, Debug, PartialEq)]
pub enum EtaShape {
    Zero,
    /// `amp * sin(mode * pi * z / L)`
    Sine {
        amp: f64,
        mode: f64,
    },
    /// Values at the `n + 1` uniform vertices of `[0, L]`, linear in between.
    Table(Vec<f64>),
}

impl EtaShape {
    pub fn eval(&self, z: f64, length: f64) -> f64 {
        match self {
            EtaShape::Zero => 0.0,
            EtaShape::Sine { amp, mode } => amp * (mode * PI * z / length).sin(),
            EtaShape::Table(v) => {
                let n = v.len() - 1;
                let s = (z / length * n as f64).clamp(0.0, n as f64);
                let k = (s.floor() as usize).min(n.saturating_sub(1));
                let th = s - k as f64;
                if n == 0 {
                    v[0]
                } else {
                    (1.0 - th) * v[k] + th * v[k + 1]
                }
            }
        }
    }

    /// Derivative in z. Tables use the cell slope inside a cell and the
    /// centred difference at vertices (zero slope at the clamped ends).
    pub fn deriv(&self, z: f64, length: f64) -> f64 {
        match self {
            EtaShape::Zero => 0.0,
            EtaShape::Sine { amp, mode } => amp * mode * PI / length * (mode * PI * z / length).cos(),
            EtaShape::Table(v) => {
                let n = v.len() - 1;
                if n == 0 {
                    return 0.0;
                }
                let h = length / n as f64;
                let s = (z / length * n as f64).clamp(0.0, n as f64);
                let k = s.round();
                if (s - k).abs() < 1e-9 {
                    let k = k as usize;
                    if k == 0 || k == n {
                        0.0
                    } else {
                        (v[k + 1] - v[k - 1]) / (2.0 * h)
                    }
                } else {
                    let k = (s.floor() as usize).min(n - 1);
                    (v[k + 1] - v[k]) / h
                }
            }
        }
    }

    pub fn max_abs(&self, length: f64) -> f64 {
        match self {
            EtaShape::Zero => 0.0,
            EtaShape::Sine { amp, .. } => amp.abs(),
            EtaShape::Table(v) => {
                let _ = length;
                v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShearProfile {
    Linear,
    Sine,
}

impl ShearProfile {
    pub fn f(&self, y: f64) -> f64 {
        match self {
            ShearProfile::Linear => y,
            ShearProfile::Sine => (PI * y).sin(),
        }
    }

    pub fn df(&self, y: f64) -> f64 {
        match self {
            ShearProfile::Linear => 1.0,
            ShearProfile::Sine => PI * (PI * y).cos(),
        }
    }
}

/// Map from the reference rectangle `(0, L) x (0, 1)` onto a physical domain
/// at a frozen time.
#[derive(Clone, Debug, PartialEq)]
pub enum AleMap {
    /// `(z, r) = (Z, (R + eta(Z)) * Rt)`
    Radial { radius: f64, length: f64, eta: EtaShape },
    /// `(x, y) = (X + g * f(Y), Y)`
    Shear { length: f64, g: f64, profile: ShearProfile },
}

impl AleMap {
    pub fn identity(length: f64) -> Self {
        AleMap::Radial { radius: 1.0, length, eta: EtaShape::Zero }
    }

    pub fn length(&self) -> f64 {
        match self {
            AleMap::Radial { length, .. } | AleMap::Shear { length, .. } => *length,
        }
    }

    pub fn is_radial(&self) -> bool {
        matches!(self, AleMap::Radial { .. })
    }

    pub fn apply(&self, p: Point) -> Point {
        match self {
            AleMap::Radial { radius, length, eta } => [p[0], (radius + eta.eval(p[0], *length)) * p[1]],
            AleMap::Shear { g, profile, .. } => [p[0] + g * profile.f(p[1]), p[1]],
        }
    }

    /// Inverse map; the result may fall outside the reference rectangle.
    pub fn inverse(&self, x: Point) -> Result<Point> {
        match self {
            AleMap::Radial { radius, length, eta } => {
                let j = radius + eta.eval(x[0].clamp(0.0, *length), *length);
                if j <= 0.0 {
                    return Err(geometry(format!("degenerate radius {j} at z = {}", x[0])));
                }
                Ok([x[0], x[1] / j])
            }
            AleMap::Shear { g, profile, .. } => Ok([x[0] - g * profile.f(x[1]), x[1]]),
        }
    }

    /// Jacobian `F[a][b] = d x_a / d X_b`.
    pub fn jacobian(&self, p: Point) -> Mat2 {
        match self {
            AleMap::Radial { radius, length, eta } => {
                let j = radius + eta.eval(p[0], *length);
                [[1.0, 0.0], [p[1] * eta.deriv(p[0], *length), j]]
            }
            AleMap::Shear { g, profile, .. } => [[1.0, g * profile.df(p[1])], [0.0, 1.0]],
        }
    }

    pub fn det(&self, p: Point) -> f64 {
        let f = self.jacobian(p);
        f[0][0] * f[1][1] - f[0][1] * f[1][0]
    }

    pub fn jacobian_inv(&self, p: Point) -> Mat2 {
        let f = self.jacobian(p);
        let d = f[0][0] * f[1][1] - f[0][1] * f[1][0];
        [[f[1][1] / d, -f[0][1] / d], [-f[1][0] / d, f[0][0] / d]]
    }

    /// Whether a physical point lies in the closed domain (with tolerance).
    pub fn contains(&self, x: Point, tol: f64) -> bool {
        match self.inverse(x) {
            Ok(p) => in_reference(p, self.length(), tol),
            Err(_) => false,
        }
    }

    /// Interval occupied by the domain along the line used for quadrature:
    /// vertical lines `z = c` for radial maps, horizontal lines `y = c` for shear maps.
    pub fn line_extent(&self, c: f64) -> (f64, f64) {
        match self {
            AleMap::Radial { radius, length, eta } => (0.0, radius + eta.eval(c, *length)),
            AleMap::Shear { length, g, profile } => {
                let s = g * profile.f(c);
                (s, length + s)
            }
        }
    }

    /// Jacobian determinant is positive everywhere (sampled on a fine lattice).
    pub fn check_admissible(&self) -> Result<()> {
        let l = self.length();
        for i in 0..=64 {
            for j in 0..=16 {
                let p = [l * i as f64 / 64.0, j as f64 / 16.0];
                let d = self.det(p);
                if !(d > 0.0) {
                    return Err(geometry(format!("map not admissible: det = {d} at {p:?}")));
                }
            }
        }
        Ok(())
    }
}

pub fn in_reference(p: Point, length: f64, tol: f64) -> bool {
    p[0] >= -tol && p[0] <= length + tol && p[1] >= -tol && p[1] <= 1.0 + tol
}

/// Signed distance to the boundary of the reference rectangle (positive inside).
pub fn reference_margin(p: Point, length: f64) -> f64 {
    p[0].min(length - p[0]).min(p[1]).min(1.0 - p[1])
}

/// Step map `A = Phi_n o Phi_{n+1}^{-1}` from the new domain onto the old one.
pub fn ale_apply(old: &AleMap, new: &AleMap, x: Point) -> Result<Point> {
    let p = new.inverse(x)?;
    if !in_reference(p, new.length(), 1e-12) {
        return Err(geometry(format!("point {x:?} lies outside the current domain")));
    }
    Ok(old.apply(p))
}

/// Time-dependent family of domains.
#[derive(Clone, Debug, PartialEq)]
pub enum Motion {
    /// `eta(t, z) = amp * sin(mode pi z / L) * sin(omega t)`
    Channel { radius: f64, length: f64, amp: f64, omega: f64, mode: f64 },
    /// `g(t) = amp * sin(omega t)`
    Shear { length: f64, amp: f64, omega: f64, profile: ShearProfile },
    /// Computed displacements at `t = n dt`, vertex values per level.
    Evolved { radius: f64, length: f64, dt: f64, etas: Vec<Vec<f64>> },
}

impl Motion {
    pub fn length(&self) -> f64 {
        match self {
            Motion::Channel { length, .. } | Motion::Shear { length, .. } | Motion::Evolved { length, .. } => *length,
        }
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self, Motion::Shear { .. })
    }

    pub fn map_at(&self, t: f64) -> AleMap {
        match self {
            Motion::Channel { radius, length, amp, omega, mode } => AleMap::Radial {
                radius: *radius,
                length: *length,
                eta: EtaShape::Sine { amp: amp * (omega * t).sin(), mode: *mode },
            },
            Motion::Shear { length, amp, omega, profile } => {
                AleMap::Shear { length: *length, g: amp * (omega * t).sin(), profile: *profile }
            }
            Motion::Evolved { radius, length, dt, etas } => {
                let n = ((t / dt).round().max(0.0) as usize).min(etas.len() - 1);
                AleMap::Radial { radius: *radius, length: *length, eta: EtaShape::Table(etas[n].clone()) }
            }
        }
    }

    /// Domain velocity `d/dt Phi(t, X)` at a reference point.
    pub fn velocity(&self, t: f64, p: Point) -> Point {
        match self {
            Motion::Channel { length, amp, omega, mode, .. } => {
                let d = amp * omega * (omega * t).cos() * (mode * PI * p[0] / length).sin();
                [0.0, d * p[1]]
            }
            Motion::Shear { amp, omega, profile, .. } => [amp * omega * (omega * t).cos() * profile.f(p[1]), 0.0],
            Motion::Evolved { length, dt, etas, .. } => {
                let n = ((t / dt).round().max(0.0) as usize).min(etas.len() - 1);
                if n == 0 {
                    return [0.0, 0.0];
                }
                let a = EtaShape::Table(etas[n].clone()).eval(p[0], *length);
                let b = EtaShape::Table(etas[n - 1].clone()).eval(p[0], *length);
                [0.0, (a - b) / dt * p[1]]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzData {
    /// Lower bi-Lipschitz constant (injectivity).
    pub c_lower: f64,
    /// Joint space-time Lipschitz constant.
    pub c_upper: f64,
}

/// Sampling used to estimate Lipschitz constants of `Phi(t, X)`.
#[derive(Clone, Debug)]
pub struct LipschitzSampling {
    pub times: Vec<f64>,
    pub nx: usize,
    pub ny: usize,
    /// Pairs with spatial distance at most this value are compared.
    pub space_radius: f64,
    /// Pairs with time distance at most this value are compared.
    pub time_radius: f64,
}

pub fn estimate_lipschitz(motion: &Motion, s: &LipschitzSampling) -> Result<LipschitzData> {
    if s.times.is_empty() || s.nx == 0 || s.ny == 0 {
        return Err(contract("empty Lipschitz sample set"));
    }
    let l = motion.length();
    let hx = l / s.nx as f64;
    let hy = 1.0 / s.ny as f64;
    let pts: Vec<Point> = (0..=s.nx).flat_map(|i| (0..=s.ny).map(move |j| [i as f64 * hx, j as f64 * hy])).collect();
    let maps: Vec<AleMap> = s.times.iter().map(|&t| motion.map_at(t)).collect();
    for m in &maps {
        m.check_admissible()?;
    }
    let images: Vec<Vec<Point>> = maps.iter().map(|m| pts.iter().map(|&p| m.apply(p)).collect()).collect();
    let kx = (s.space_radius / hx + 1e-9).floor() as isize;
    let ky = (s.space_radius / hy + 1e-9).floor() as isize;
    let idx = |i: isize, j: isize| (i as usize) * (s.ny + 1) + j as usize;
    let mut c_lo = f64::INFINITY;
    let mut c_hi = 0.0f64;
    for (a, ta) in s.times.iter().enumerate() {
        for (b, tb) in s.times.iter().enumerate() {
            let dt = (ta - tb).abs();
            if dt > s.time_radius + 1e-12 {
                continue;
            }
            for i in 0..=s.nx as isize {
                for j in 0..=s.ny as isize {
                    for di in -kx..=kx {
                        for dj in -ky..=ky {
                            let (i2, j2) = (i + di, j + dj);
                            if i2 < 0 || j2 < 0 || i2 > s.nx as isize || j2 > s.ny as isize {
                                continue;
                            }
                            let dx = dist(pts[idx(i, j)], pts[idx(i2, j2)]);
                            if dx > s.space_radius + 1e-12 || (dx == 0.0 && dt == 0.0) {
                                continue;
                            }
                            let dphi = dist(images[a][idx(i, j)], images[b][idx(i2, j2)]);
                            c_hi = c_hi.max(dphi / (dx + dt));
                            if a == b && dx > 0.0 {
                                c_lo = c_lo.min(dphi / dx);
                            }
                        }
                    }
                }
            }
        }
    }
    if !c_lo.is_finite() || c_lo <= 0.0 {
        return Err(geometry("motion is not injective on the sample set"));
    }
    Ok(LipschitzData { c_lower: c_lo, c_upper: c_hi })
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Which ratio of Lipschitz constants scales the shrink distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaOrientation {
    /// `gamma = 2 (C / c) h`
    #[default]
    UpperOverLower,
    /// `gamma = 2 (c / C) h`
    LowerOverUpper,
}

pub fn shrink_distance(lip: &LipschitzData, h: f64, o: GammaOrientation) -> f64 {
    match o {
        GammaOrientation::UpperOverLower => 2.0 * lip.c_upper / lip.c_lower * h,
        GammaOrientation::LowerOverUpper => 2.0 * lip.c_lower / lip.c_upper * h,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InclusionReport {
    pub gamma: f64,
    pub samples: usize,
    pub violations: usize,
    /// Smallest distance (reference coordinates) of a pulled-back sample to the boundary.
    pub worst_margin: f64,
    /// The shrunk domain was empty; nothing to check.
    pub empty: bool,
}

/// Checks `Phi(t, Omega_gamma) ⊂ Phi(s, Omega)` on boundary and random samples of `Omega_gamma`.
pub fn shrunk_domain_inclusion<R: Rng>(
    motion: &Motion,
    gamma: f64,
    t: f64,
    s: f64,
    n_random: usize,
    rng: &mut R,
) -> Result<InclusionReport> {
    if gamma < 0.0 {
        return Err(contract("negative shrink distance"));
    }
    let l = motion.length();
    let inradius = 0.5 * l.min(1.0);
    if gamma >= inradius {
        return Ok(InclusionReport { gamma, samples: 0, violations: 0, worst_margin: f64::INFINITY, empty: true });
    }
    let (x0, x1, y0, y1) = (gamma, l - gamma, gamma, 1.0 - gamma);
    let mut pts = Vec::with_capacity(n_random + 40);
    for k in 0..=8 {
        let a = k as f64 / 8.0;
        pts.push([x0 + a * (x1 - x0), y0]);
        pts.push([x0 + a * (x1 - x0), y1]);
        pts.push([x0, y0 + a * (y1 - y0)]);
        pts.push([x1, y0 + a * (y1 - y0)]);
    }
    for _ in 0..n_random {
        pts.push([rng.random_range(x0..=x1), rng.random_range(y0..=y1)]);
    }
    let mt = motion.map_at(t);
    let ms = motion.map_at(s);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for p in &pts {
        let q = ms.inverse(mt.apply(*p))?;
        let m = reference_margin(q, l);
        worst = worst.min(m);
        if m < -1e-12 {
            violations += 1;
        }
    }
    Ok(InclusionReport { gamma, samples: pts.len(), violations, worst_margin: worst, empty: false })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainEnvelope {
    pub n: usize,
    pub l: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub gap_max: f64,
    pub gap_l2: f64,
}

impl DomainEnvelope {
    /// `lower <= eta^{n+i} <= upper` at every vertex for `i = 0..=l`.
    pub fn sandwiches(&self, etas: &[Vec<f64>]) -> bool {
        (0..=self.l).all(|i| {
            etas[self.n + i].iter().zip(self.lower.iter().zip(&self.upper)).all(|(e, (lo, hi))| lo <= e && e <= hi)
        })
    }
}

/// Envelopes of `eta^n, ..., eta^{n+l}`. The half-gap is widened by a moving
/// average of `width` vertices; the midline is left untouched so a single
/// displacement gives `lower = upper = eta`.
pub fn envelope(etas: &[Vec<f64>], n: usize, l: usize, width: usize, length: f64) -> Result<DomainEnvelope> {
    if n + l >= etas.len() {
        return Err(contract(format!("window n = {n}, l = {l} exceeds {} levels", etas.len())));
    }
    let nv = etas[n].len();
    if nv < 2 || etas[n..=n + l].iter().any(|e| e.len() != nv) {
        return Err(contract("displacements of inconsistent length"));
    }
    let mut lo = etas[n].clone();
    let mut hi = etas[n].clone();
    for e in &etas[n + 1..=n + l] {
        for k in 0..nv {
            lo[k] = lo[k].min(e[k]);
            hi[k] = hi[k].max(e[k]);
        }
    }
    let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let half: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let w = (width.max(1) / 2) as isize;
    let smooth: Vec<f64> = (0..nv as isize)
        .map(|k| {
            let (a, b) = ((k - w).max(0), (k + w).min(nv as isize - 1));
            let s: f64 = (a..=b).map(|i| half[i as usize]).sum();
            (s / (b - a + 1) as f64).max(half[k as usize])
        })
        .collect();
    let lower: Vec<f64> = mid.iter().zip(&smooth).map(|(m, h)| m - h).collect();
    let upper: Vec<f64> = mid.iter().zip(&smooth).map(|(m, h)| m + h).collect();
    // re-impose the sandwich against rounding in mid +- half
    let lower: Vec<f64> = lower.iter().zip(&lo).map(|(a, b)| a.min(*b)).collect();
    let upper: Vec<f64> = upper.iter().zip(&hi).map(|(a, b)| a.max(*b)).collect();
    let dz = length / (nv - 1) as f64;
    let gaps: Vec<f64> = upper.iter().zip(&lower).map(|(a, b)| a - b).collect();
    let gap_max = gaps.iter().cloned().fold(0.0, f64::max);
    let gap_l2 = trapezoid_sq(&gaps, dz).sqrt();
    Ok(DomainEnvelope { n, l, lower, upper, gap_max, gap_l2 })
}

/// Trapezoid rule for the integral of `v^2` on uniform vertices.
pub fn trapezoid_sq(v: &[f64], dz: f64) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mut s: f64 = v.iter().map(|x| x * x).sum();
    s -= 0.5 * (v[0] * v[0] + v[n - 1] * v[n - 1]);
    s * dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_map_roundtrip() {
        let m = AleMap::identity(2.0);
        let p = [0.3, 0.7];
        assert_eq!(m.apply(p), p);
        assert_eq!(m.inverse(p).unwrap(), p);
        assert_eq!(m.det(p), 1.0);
    }

    #[test]
    fn table_derivative_at_ends_is_zero() {
        let e = EtaShape::Table(vec![0.0, 0.1, 0.3, 0.1, 0.0]);
        assert_eq!(e.deriv(0.0, 1.0), 0.0);
        assert_eq!(e.deriv(1.0, 1.0), 0.0);
        assert!((e.deriv(0.5, 1.0) - 0.0).abs() < 1e-12);
        assert!((e.deriv(0.1, 1.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn static_lipschitz_is_one() {
        let m = Motion::Channel { radius: 1.0, length: 2.0, amp: 0.0, omega: 1.0, mode: 1.0 };
        let s = LipschitzSampling { times: vec![0.0, 0.1], nx: 8, ny: 4, space_radius: 0.6, time_radius: 0.2 };
        let d = estimate_lipschitz(&m, &s).unwrap();
        assert!((d.c_lower - 1.0).abs() < 1e-12);
        assert!((d.c_upper - 1.0).abs() < 1e-12);
    }

    #[test]
    fn static_inclusion_margin_is_gamma() {
        let m = Motion::Channel { radius: 1.0, length: 2.0, amp: 0.0, omega: 1.0, mode: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = shrunk_domain_inclusion(&m, 0.05, 0.3, 0.3, 100, &mut rng).unwrap();
        assert_eq!(r.violations, 0);
        assert!((r.worst_margin - 0.05).abs() < 1e-12);
        let r = shrunk_domain_inclusion(&m, 0.0, 0.3, 0.3, 10, &mut rng).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.worst_margin.abs() < 1e-12);
        let r = shrunk_domain_inclusion(&m, 0.6, 0.3, 0.3, 10, &mut rng).unwrap();
        assert!(r.empty);
    }

    #[test]
    fn envelope_of_single_level_is_itself() {
        let e = vec![vec![0.0, 0.2, -0.1, 0.3, 0.0]];
        let env = envelope(&e, 0, 0, 3, 1.0).unwrap();
        assert_eq!(env.lower, e[0]);
        assert_eq!(env.upper, e[0]);
        assert_eq!(env.gap_max, 0.0);
    }

    #[test]
    fn envelope_window_out_of_range() {
        let e = vec![vec![0.0, 0.0]; 3];
        assert!(envelope(&e, 2, 1, 3, 1.0).is_err());
    }
}
