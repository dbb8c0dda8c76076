//! Function-space machinery on moving and maximal domains.

use crate::assembly::{
    self, divergence, eval_grad, face_weight, flux_r, flux_z, grad_samples, laplacian_gram, mass, shell_mass,
    shell_stiffness, stiffness,
};
use crate::error::{contract, geometry, Result};
use crate::field::DiscreteField;
use crate::geometry::{AleMap, EtaShape, Point};
use crate::grid::{Comp, Layout, Slot, Walls};
use crate::linalg::{dot, Csr, Factored, Saddle, Triplets};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    H1,
    H2,
    /// Fractional order `0 < s < 1/2` (Gagliardo).
    Hs(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// The field's own domain.
    Moving,
    /// A common box containing all domains, field extended by zero.
    Maximal(BoxGrid),
    /// The elastic wall.
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormDescriptor {
    pub kind: NormKind,
    pub region: Region,
}

impl NormDescriptor {
    pub fn moving(kind: NormKind) -> Self {
        NormDescriptor { kind, region: Region::Moving }
    }
}

pub fn l2_sq(u: &DiscreteField) -> f64 {
    let l = &u.layout;
    l.faces()
        .iter()
        .filter(|f| f.slot != Slot::Zero)
        .map(|f| face_weight(l, &u.map, f) * l.face_combo(f).eval(&u.x).powi(2))
        .sum()
}

pub fn h1_semi_sq(u: &DiscreteField) -> f64 {
    grad_samples(&u.layout, &u.map)
        .iter()
        .map(|s| {
            let g = eval_grad(s, &u.x);
            s.weight * (g[0][0].powi(2) + g[0][1].powi(2) + g[1][0].powi(2) + g[1][1].powi(2))
        })
        .sum()
}

/// Largest pointwise Frobenius norm of the transformed gradient.
pub fn grad_sup(u: &DiscreteField) -> f64 {
    grad_samples(&u.layout, &u.map)
        .iter()
        .map(|s| {
            let g = eval_grad(s, &u.x);
            (g[0][0].powi(2) + g[0][1].powi(2) + g[1][0].powi(2) + g[1][1].powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

fn lap_sq(u: &DiscreteField) -> f64 {
    laplacian_gram(&u.layout, &u.map).to_csr().quad(&u.x)
}

/// Wall-trace norms: `|v|`, `|v'|`, `|v''|` squared on the wall vertices.
fn boundary_sq(u: &DiscreteField, order: usize) -> f64 {
    let l = &u.layout;
    let g = &l.grid;
    let v: Vec<f64> = if l.has_shell() {
        u.shell()
    } else {
        // top trace of the physical velocity at vertices
        let pad = u.padded();
        (0..=g.nz)
            .map(|k| {
                let p = pad.interp([k as f64 * g.hz(), 1.0]);
                (p[0] * p[0] + p[1] * p[1]).sqrt()
            })
            .collect()
    };
    let hz = g.hz();
    let mut s = crate::geometry::trapezoid_sq(&v, hz);
    if order >= 1 {
        s += (0..g.nz).map(|k| ((v[k + 1] - v[k]) / hz).powi(2) * hz).sum::<f64>();
    }
    if order >= 2 {
        let n = g.nz;
        let at = |k: isize| -> f64 {
            let k = if k < 0 {
                -k
            } else if k > n as isize {
                2 * n as isize - k
            } else {
                k
            };
            v[k as usize]
        };
        s += (0..=n as isize)
            .map(|k| {
                let w = if k == 0 || k == n as isize { 0.5 } else { 1.0 };
                w * hz * ((at(k + 1) - 2.0 * at(k) + at(k - 1)) / (hz * hz)).powi(2)
            })
            .sum::<f64>();
    }
    s
}

pub fn norm(u: &DiscreteField, d: &NormDescriptor) -> Result<f64> {
    match (d.kind, d.region) {
        (NormKind::L2, Region::Moving) => Ok(l2_sq(u).sqrt()),
        (NormKind::H1, Region::Moving) => Ok((l2_sq(u) + h1_semi_sq(u)).sqrt()),
        (NormKind::H2, Region::Moving) => Ok((l2_sq(u) + h1_semi_sq(u) + lap_sq(u)).sqrt()),
        (NormKind::L2, Region::Boundary) => Ok(boundary_sq(u, 0).sqrt()),
        (NormKind::H1, Region::Boundary) => Ok(boundary_sq(u, 1).sqrt()),
        (NormKind::H2, Region::Boundary) => Ok(boundary_sq(u, 2).sqrt()),
        (NormKind::L2, Region::Maximal(b)) => Ok(extend_by_zero(u, &b, None)?.l2()),
        (NormKind::Hs(s), Region::Maximal(b)) => {
            let e = extend_by_zero(u, &b, None)?;
            Ok((e.l2().powi(2) + hs_gagliardo(&e, s)?.powi(2)).sqrt())
        }
        (k, r) => Err(contract(format!("norm {k:?} is not defined on {r:?}"))),
    }
}

/// Uniform cell grid on a physical box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
}

impl BoxGrid {
    /// Smallest box containing all domains, with `nx x ny` cells.
    pub fn covering(maps: &[AleMap], nx: usize, ny: usize) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for m in maps {
            let l = m.length();
            for i in 0..=256 {
                for j in 0..=16 {
                    let p = m.apply([l * i as f64 / 256.0, j as f64 / 16.0]);
                    x0 = x0.min(p[0]);
                    x1 = x1.max(p[0]);
                    y0 = y0.min(p[1]);
                    y1 = y1.max(p[1]);
                }
            }
        }
        BoxGrid { x0, x1, y0, y1, nx, ny }
    }

    pub fn dx(&self) -> f64 {
        (self.x1 - self.x0) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y1 - self.y0) / self.ny as f64
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        [self.x0 + (i as f64 + 0.5) * self.dx(), self.y0 + (j as f64 + 0.5) * self.dy()]
    }
}

/// Cell-centred vector field on a box; `region` marks cells of the maximal domain.
#[derive(Clone, Debug)]
pub struct BoxField {
    pub grid: BoxGrid,
    pub values: Vec<[f64; 2]>,
    pub region: Vec<bool>,
}

impl BoxField {
    pub fn l2(&self) -> f64 {
        let a = self.grid.dx() * self.grid.dy();
        self.values
            .iter()
            .zip(&self.region)
            .filter(|(_, r)| **r)
            .map(|(v, _)| a * (v[0] * v[0] + v[1] * v[1]))
            .sum::<f64>()
            .sqrt()
    }
}

/// Samples the field at box cell centres, zero outside its domain. `maximal`
/// restricts the region (defaults to the whole box).
pub fn extend_by_zero(u: &DiscreteField, b: &BoxGrid, maximal: Option<&AleMap>) -> Result<BoxField> {
    let l = u.layout.grid.length;
    let tol = 1e-9 * (1.0 + (b.x1 - b.x0).abs() + (b.y1 - b.y0).abs());
    for i in 0..=64 {
        for j in [0.0, 1.0] {
            let p = u.map.apply([l * i as f64 / 64.0, j]);
            if p[0] < b.x0 - tol || p[0] > b.x1 + tol || p[1] < b.y0 - tol || p[1] > b.y1 + tol {
                return Err(geometry(format!("domain point {p:?} lies outside the maximal box")));
            }
        }
    }
    let pad = u.padded();
    let mut values = Vec::with_capacity(b.nx * b.ny);
    let mut region = Vec::with_capacity(b.nx * b.ny);
    for i in 0..b.nx {
        for j in 0..b.ny {
            let c = b.center(i, j);
            values.push(u.eval_physical(&pad, c));
            region.push(maximal.is_none_or(|m| m.contains(c, 0.0)));
        }
    }
    if let Some(m) = maximal {
        // the field's domain must sit inside the maximal one
        for (k, v) in values.iter().enumerate() {
            if !region[k] && (v[0] != 0.0 || v[1] != 0.0) {
                return Err(geometry("field domain is not contained in the maximal domain"));
            }
        }
        let _ = m;
    }
    Ok(BoxField { grid: *b, values, region })
}

/// Gagliardo seminorm of order `s` over the region (cell-centre collocation, diagonal excluded).
pub fn hs_gagliardo(f: &BoxField, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 0.5) {
        return Err(contract(format!("fractional order {s} outside (0, 1/2)")));
    }
    let g = &f.grid;
    let a = g.dx() * g.dy();
    let pts: Vec<(Point, [f64; 2])> = (0..g.nx)
        .flat_map(|i| (0..g.ny).map(move |j| (i, j)))
        .enumerate()
        .filter(|(k, _)| f.region[*k])
        .map(|(k, (i, j))| (g.center(i, j), f.values[k]))
        .collect();
    let e = 1.0 + s; // |x - y|^{d + 2s} with d = 2
    let mut sum = 0.0;
    for (p, (x, u)) in pts.iter().enumerate() {
        for (y, v) in &pts[p + 1..] {
            let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            let du = (u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2);
            if du != 0.0 {
                sum += du / d2.powf(e);
            }
        }
    }
    Ok((2.0 * sum * a * a).sqrt())
}

/// Line quadrature over a common region containing several domains, exact in
/// the position of each domain's boundary along the lines.
#[derive(Clone, Debug)]
pub struct HQuad {
    radial: bool,
    lines: Vec<f64>,
    dline: f64,
    lo: f64,
    hi: f64,
    nb: usize,
    /// Wall-vertex spacing for the boundary part (0 when not used).
    wall_dz: f64,
}

/// A field sampled on an [`HQuad`]: covered interval and value per cell.
#[derive(Clone, Debug)]
pub struct HSample {
    cells: Vec<(f64, f64, [f64; 2])>,
    wall: Vec<f64>,
}

impl HQuad {
    pub fn covering(maps: &[AleMap], n_lines: usize, n_cells: usize) -> Result<Self> {
        let first = maps.first().ok_or_else(|| contract("no domains to cover"))?;
        let radial = first.is_radial();
        if maps.iter().any(|m| m.is_radial() != radial) {
            return Err(contract("mixed map families"));
        }
        let l = first.length();
        let (span, dline) = if radial { (l, l / n_lines as f64) } else { (1.0, 1.0 / n_lines as f64) };
        let lines: Vec<f64> = (0..n_lines).map(|c| (c as f64 + 0.5) * dline).collect();
        let _ = span;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for m in maps {
            for k in 0..=512 {
                let c = if radial { l * k as f64 / 512.0 } else { k as f64 / 512.0 };
                let (a, b) = m.line_extent(c);
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        Ok(HQuad { radial, lines, dline, lo, hi, nb: n_cells, wall_dz: 0.0 })
    }

    /// Include `L2` of the wall velocity (fields with a wall) in the inner product.
    pub fn with_wall(mut self, dz: f64) -> Self {
        self.wall_dz = dz;
        self
    }

    pub fn sample(&self, u: &DiscreteField) -> Result<HSample> {
        let pad = u.padded();
        let db = (self.hi - self.lo) / self.nb as f64;
        let mut cells = Vec::with_capacity(self.lines.len() * self.nb);
        for &c in &self.lines {
            let (a, b) = u.map.line_extent(c);
            if a < self.lo - 1e-9 || b > self.hi + 1e-9 {
                return Err(geometry("domain leaves the quadrature region"));
            }
            for k in 0..self.nb {
                let c0 = self.lo + k as f64 * db;
                let (s, e) = (c0.max(a), (c0 + db).min(b));
                if e > s {
                    let m = 0.5 * (s + e);
                    let x = if self.radial { [c, m] } else { [m, c] };
                    let p = u.map.inverse(x)?;
                    cells.push((s, e, pad.interp(p)));
                } else {
                    cells.push((0.0, 0.0, [0.0, 0.0]));
                }
            }
        }
        let wall = if self.wall_dz > 0.0 { u.shell() } else { Vec::new() };
        Ok(HSample { cells, wall })
    }

    /// `|| a f - b g ||^2`.
    pub fn dist_sq(&self, f: &HSample, a: f64, g: &HSample, b: f64) -> f64 {
        let mut s = 0.0;
        for (cf, cg) in f.cells.iter().zip(&g.cells) {
            let (lf, lg) = (cf.1 - cf.0, cg.1 - cg.0);
            let ov = (cf.1.min(cg.1) - cf.0.max(cg.0)).max(0.0);
            let (u, v) = (cf.2, cg.2);
            let d = (a * u[0] - b * v[0]).powi(2) + (a * u[1] - b * v[1]).powi(2);
            let nu = a * a * (u[0] * u[0] + u[1] * u[1]);
            let nv = b * b * (v[0] * v[0] + v[1] * v[1]);
            s += d * ov + nu * (lf - ov) + nv * (lg - ov);
        }
        s *= self.dline;
        if self.wall_dz > 0.0 {
            let n = f.wall.len().max(g.wall.len());
            let d: Vec<f64> = (0..n)
                .map(|k| a * f.wall.get(k).copied().unwrap_or(0.0) - b * g.wall.get(k).copied().unwrap_or(0.0))
                .collect();
            s += crate::geometry::trapezoid_sq(&d, self.wall_dz);
        }
        s
    }

    pub fn norm_sq(&self, f: &HSample) -> f64 {
        self.dist_sq(f, 1.0, f, 0.0)
    }
}

/// Mass of `H = L^2(fluid) x L^2(wall)` on the layout.
pub fn h_mass(layout: &Layout, map: &AleMap) -> Triplets {
    let mut m = mass(layout, map);
    m.extend_scaled(&shell_mass(layout), 1.0);
    m
}

/// Weight matrix for a norm kind on the layout (wall part included when present).
pub fn norm_matrix(layout: &Layout, map: &AleMap, kind: NormKind) -> Result<Triplets> {
    let mut m = mass(layout, map);
    match kind {
        NormKind::L2 => m.extend_scaled(&shell_mass(layout), 1.0),
        NormKind::H1 => {
            m.extend_scaled(&stiffness(layout, &grad_samples(layout, map), false), 1.0);
            m.extend_scaled(&shell_stiffness(layout, 1.0, 1.0, 0.0), 1.0);
        }
        NormKind::H2 => {
            m.extend_scaled(&stiffness(layout, &grad_samples(layout, map), false), 1.0);
            m.extend_scaled(&laplacian_gram(layout, map), 1.0);
            m.extend_scaled(&shell_stiffness(layout, 1.0, 1.0, 1.0), 1.0);
        }
        NormKind::Hs(_) => return Err(contract("fractional norms have no matrix on the moving domain")),
    }
    Ok(m)
}

fn pin_for(layout: &Layout) -> Option<usize> {
    if layout.is_closed() {
        Some(layout.grid.nz * layout.grid.nr - 1)
    } else {
        None
    }
}

/// Riesz map for a norm, optionally restricted to discretely solenoidal fields.
pub struct DualSpace {
    pub layout: Arc<Layout>,
    pub map: AleMap,
    pub kind: NormKind,
    inner: DualInner,
}

enum DualInner {
    Plain(Factored),
    Constrained(Saddle),
}

impl DualSpace {
    pub fn new(layout: Arc<Layout>, map: AleMap, kind: NormKind, constrained: bool) -> Result<Self> {
        let k = norm_matrix(&layout, &map, kind)?;
        let inner = if constrained {
            DualInner::Constrained(Saddle::new(&k, &divergence(&layout, &map), pin_for(&layout))?)
        } else {
            DualInner::Plain(Factored::new(&k)?)
        };
        Ok(DualSpace { layout, map, kind, inner })
    }

    /// Representer `q` with `<K q, p> = f(p)` on the (constrained) space.
    pub fn riesz(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.layout.ndof() {
            return Err(contract("functional length does not match the test space"));
        }
        match &self.inner {
            DualInner::Plain(lu) => lu.solve(f),
            DualInner::Constrained(s) => Ok(s.solve(f, &vec![0.0; s.np])?.0),
        }
    }

    pub fn dual_norm(&self, f: &[f64]) -> Result<f64> {
        let q = self.riesz(f)?;
        Ok(dot(f, &q).max(0.0).sqrt())
    }

    /// Dual norms of several functionals with one batched solve.
    pub fn dual_norms(&self, fs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let qs = match &self.inner {
            DualInner::Plain(lu) => lu.solve_many(fs)?,
            DualInner::Constrained(s) => {
                let zero = vec![0.0; s.np];
                let rhs: Vec<(&[f64], &[f64])> = fs.iter().map(|f| (f.as_slice(), zero.as_slice())).collect();
                s.solve_many(&rhs)?.into_iter().map(|(q, _)| q).collect()
            }
        };
        Ok(fs.iter().zip(&qs).map(|(f, q)| dot(f, q).max(0.0).sqrt()).collect())
    }
}

/// One-shot dual norm of a functional given as a covector on the layout.
pub fn dual_norm(f: &[f64], layout: Arc<Layout>, map: &AleMap, kind: NormKind, constrained: bool) -> Result<f64> {
    DualSpace::new(layout, map.clone(), kind, constrained)?.dual_norm(f)
}

/// `H`-orthogonal projection onto discretely solenoidal fields.
pub struct Leray {
    m: Csr,
    s: Saddle,
}

impl Leray {
    pub fn new(layout: &Layout, map: &AleMap) -> Result<Self> {
        let m = h_mass(layout, map);
        let s = Saddle::new(&m, &divergence(layout, map), pin_for(layout))?;
        Ok(Leray { m: m.to_csr(), s })
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let rhs = self.m.mul(x);
        self.riesz(&rhs)
    }

    /// Solenoidal `H`-representer of a covector.
    pub fn riesz(&self, f: &[f64]) -> Result<Vec<f64>> {
        Ok(self.s.solve(f, &vec![0.0; self.s.np])?.0)
    }

    pub fn mass(&self) -> &Csr {
        &self.m
    }
}

pub fn leray_project(u: &DiscreteField) -> Result<DiscreteField> {
    let p = Leray::new(&u.layout, &u.map)?.project(&u.x)?;
    Ok(u.with_values(p))
}

/// Discrete divergence residual `sqrt(sum_cells J |div u|^2 area)`.
pub fn divergence_l2(u: &DiscreteField) -> f64 {
    let g = &u.layout.grid;
    let d = divergence(&u.layout, &u.map).to_csr().mul(&u.x);
    let a = g.cell_area();
    let mut s = 0.0;
    for i in 0..g.nz {
        for j in 0..g.nr {
            let jac = u.map.det(g.center(i, j));
            // row is area * J * div
            s += (d[i * g.nr + j] / (a * jac)).powi(2) * jac * a;
        }
    }
    s.sqrt()
}

/// Solenoidal correction with zero boundary values: `div w = div v`, minimal `|grad w|`.
pub fn divergence_corrector(v: &DiscreteField) -> Result<DiscreteField> {
    let closed = Arc::new(Layout::new(v.layout.grid, Walls::closed())?);
    let dv = divergence(&v.layout, &v.map).to_csr().mul(&v.x);
    let total: f64 = dv.iter().sum();
    let scale: f64 = dv.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
    if total.abs() > 1e-9 * scale.max(v.layout.grid.cell_area()) {
        return Err(contract(format!("incompatible data: net divergence {total:e}")));
    }
    let k = stiffness(&closed, &grad_samples(&closed, &v.map), false);
    let b = divergence(&closed, &v.map);
    let s = Saddle::new(&k, &b, pin_for(&closed))?;
    let (w, _) = s.solve(&vec![0.0; closed.ndof()], &dv)?;
    DiscreteField::new(closed, v.map.clone(), w)
}

/// Radial squeeze `u_sigma(z, r) = (sigma u_z(z, sigma r), u_r(z, sigma r))` inside the
/// scaled domain and `v e_r` above it, realised through the stream function so the
/// result is discretely solenoidal on `target`.
pub fn squeeze(u: &DiscreteField, sigma: f64, target: &AleMap) -> Result<DiscreteField> {
    let (AleMap::Radial { radius, length, eta }, AleMap::Radial { radius: rt, eta: eta_t, .. }) = (&u.map, target)
    else {
        return Err(contract("squeezing needs radial maps"));
    };
    if (rt - radius).abs() > 1e-12 || (target.length() - length).abs() > 1e-12 {
        return Err(contract("squeeze target has a different reference configuration"));
    }
    if !u.layout.has_shell() {
        return Err(contract("squeezing needs a layout with an elastic wall"));
    }
    if sigma < 1.0 {
        return Err(contract(format!("sigma = {sigma} < 1")));
    }
    let l = &u.layout;
    let g = l.grid;
    let (nz, nr) = (g.nz, g.nr);
    let (hz, hr) = (g.hz(), g.hr());
    for k in 0..=nz {
        let z = k as f64 * hz;
        let (h, ht) = (radius + eta.eval(z, *length), radius + eta_t.eval(z, *length));
        if ht > sigma * h * (1.0 + 1e-12) + 1e-14 {
            return Err(contract(format!("sigma = {sigma} too small at z = {z}: {ht} > sigma * {h}")));
        }
        if ht < h - 1e-12 {
            return Err(contract("squeeze target does not contain the source domain"));
        }
    }
    let div = divergence(l, &u.map).to_csr().mul(&u.x);
    let fl: f64 = div.iter().map(|d| d.abs()).sum();
    let scale = (l2_sq(u) + h1_semi_sq(u)).sqrt().max(1e-300);
    if fl > 1e-8 * scale * g.cell_area().sqrt() {
        return Err(contract(format!("field is not solenoidal (residual {fl:e})")));
    }
    // stream function of the reference fluxes
    let fz: Vec<f64> = (0..=nz)
        .flat_map(|i| (0..nr).map(move |j| (i, j)))
        .map(|(i, j)| flux_z(l, &u.map, i as isize, j as isize).eval(&u.x))
        .collect();
    let fr = |i: usize, j: usize| flux_r(l, &u.map, i as isize, j as isize).eval(&u.x);
    let mut psi = vec![0.0; (nz + 1) * (nr + 1)];
    let at = |i: usize, j: usize| i * (nr + 1) + j;
    for i in 0..=nz {
        if i > 0 {
            psi[at(i, 0)] = psi[at(i - 1, 0)] - hz * fr(i - 1, 0);
        }
        for j in 0..nr {
            psi[at(i, j + 1)] = psi[at(i, j)] + hr * fz[i * nr + j];
        }
    }
    // stream function on the target vertices
    let mut psi_t = vec![0.0; (nz + 1) * (nr + 1)];
    for i in 0..=nz {
        let z = i as f64 * hz;
        let (h, ht) = (radius + eta.eval(z, *length), radius + eta_t.eval(z, *length));
        for j in 0..=nr {
            let r = ht * j as f64 * hr;
            let s = (sigma * r / h).min(1.0);
            let a = s / hr;
            let j0 = (a.floor() as usize).min(nr - 1);
            let th = a - j0 as f64;
            psi_t[at(i, j)] = (1.0 - th) * psi[at(i, j0)] + th * psi[at(i, j0 + 1)];
        }
    }
    // physical components from the target fluxes
    let mut uz = vec![0.0; (nz + 1) * nr];
    for i in 0..=nz {
        for j in 0..nr {
            let jac = target.det(g.uz_pos(i, j));
            uz[i * nr + j] = (psi_t[at(i, j + 1)] - psi_t[at(i, j)]) / hr / jac;
        }
    }
    let shell = u.shell();
    let mut ur = vec![0.0; nz * (nr + 1)];
    let tmp = l.pack(&uz, &ur, Some(&shell))?;
    let pad = crate::grid::Padded::new(l, &tmp);
    for i in 0..nz {
        for j in 0..=nr {
            let pos = g.ur_pos(i, j);
            let fi = target.jacobian_inv(pos);
            let jac = target.det(pos);
            let (ii, jj) = (i as isize, j as isize);
            let avg = 0.25 * (pad.uz(ii, jj - 1) + pad.uz(ii + 1, jj - 1) + pad.uz(ii, jj) + pad.uz(ii + 1, jj));
            let flux = -(psi_t[at(i + 1, j)] - psi_t[at(i, j)]) / hz;
            ur[i * (nr + 1) + j] = (flux - jac * fi[1][0] * avg) / (jac * fi[1][1]);
        }
    }
    let x = l.pack(&uz, &ur, Some(&shell))?;
    DiscreteField::new(u.layout.clone(), target.clone(), x)
}

/// Wall displacement of a radial map as vertex values.
pub fn radial_eta(map: &AleMap, nz: usize) -> Option<Vec<f64>> {
    match map {
        AleMap::Radial { length, eta, .. } => {
            Some((0..=nz).map(|k| eta.eval(k as f64 * length / nz as f64, *length)).collect())
        }
        _ => None,
    }
}

/// Radial map with a given displacement table.
pub fn radial_with(map: &AleMap, eta: Vec<f64>) -> Result<AleMap> {
    match map {
        AleMap::Radial { radius, length, .. } => {
            Ok(AleMap::Radial { radius: *radius, length: *length, eta: EtaShape::Table(eta) })
        }
        _ => Err(contract("not a radial map")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceShift {
    pub measured: f64,
    /// `|phi1 - phi2|_inf * |grad u|_{L2}`
    pub bound_inf: f64,
    /// `|phi1 - phi2|_{L2} * |grad u|_inf`
    pub bound_l2: f64,
}

/// Difference of `u` along two curves sampled at the wall midpoints `(k + 1/2) L / n`.
pub fn trace_shift_error(u: &DiscreteField, phi1: &[Point], phi2: &[Point]) -> Result<TraceShift> {
    if phi1.len() != phi2.len() || phi1.is_empty() {
        return Err(contract("curves must have the same positive number of samples"));
    }
    let w = u.layout.grid.length / phi1.len() as f64;
    let pad = u.padded();
    let mut m = 0.0;
    let mut sup = 0.0f64;
    let mut l2 = 0.0;
    for (a, b) in phi1.iter().zip(phi2) {
        for p in [a, b] {
            if !u.map.contains(*p, 1e-12) {
                return Err(geometry(format!("curve point {p:?} leaves the domain")));
            }
        }
        let (ua, ub) = (pad.interp(u.map.inverse(*a)?), pad.interp(u.map.inverse(*b)?));
        m += w * ((ua[0] - ub[0]).powi(2) + (ua[1] - ub[1]).powi(2));
        let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
        sup = sup.max(d2.sqrt());
        l2 += w * d2;
    }
    Ok(TraceShift { measured: m.sqrt(), bound_inf: sup * h1_semi_sq(u).sqrt(), bound_l2: l2.sqrt() * grad_sup(u) })
}

/// Covector of `q -> (g, q)_H` on a test layout, where `g(x)` is a physical field
/// and `wall` the wall part of `g` at the wall vertices.
pub fn pairing_covector(test: &Layout, map: &AleMap, g: impl Fn(Point) -> [f64; 2], wall: Option<&[f64]>) -> Vec<f64> {
    let mut f = vec![0.0; test.ndof()];
    for face in test.faces() {
        if face.slot == Slot::Zero {
            continue;
        }
        let v = g(map.apply(face.pos));
        let val = if face.comp == Comp::Z { v[0] } else { v[1] };
        let w = assembly::face_weight(test, map, &face) * val;
        for &(k, c) in &test.face_combo(&face).0 {
            f[k] += w * c;
        }
    }
    if let Some(wv) = wall {
        let hz = test.grid.hz();
        for k in 1..test.grid.nz {
            if let Some(i) = test.shell_index(k) {
                f[i] += hz * wv[k];
            }
        }
    }
    f
}
