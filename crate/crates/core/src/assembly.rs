//! Discrete operators on a layout mapped by an ALE map.
//!
//! Gradients are sampled at cell centres and at vertices (half weight each);
//! every quadratic form is assembled as a weighted Gram matrix so it is
//! symmetric positive semi-definite by construction.

use crate::geometry::{AleMap, Mat2, Point};
use crate::grid::{Comp, Face, Layout, Slot};
use crate::linalg::{lin, Combo, Triplets};

/// `w * |grad u|^2` contribution at one point: `g[c][a] = d u_c / d x_a`.
pub struct GradSample {
    pub weight: f64,
    pub pos: Point,
    pub g: [[Combo; 2]; 2],
}

pub fn face_weight(layout: &Layout, map: &AleMap, f: &Face) -> f64 {
    map.det(f.pos) * layout.grid.cell_area() * f.frac
}

/// J-weighted fluid mass (wall unknowns enter through the top trace).
pub fn mass(layout: &Layout, map: &AleMap) -> Triplets {
    let mut t = Triplets::new(layout.ndof(), layout.ndof());
    for f in layout.faces() {
        if f.slot == Slot::Zero {
            continue;
        }
        let c = layout.face_combo(&f);
        t.outer(face_weight(layout, map, &f), &c, &c);
    }
    t
}

/// `sum_f w_f q_f s_f` for per-face scalar weights (used for the mass rate).
pub fn weighted_mass(layout: &Layout, weight: impl Fn(&Face) -> f64) -> Triplets {
    let mut t = Triplets::new(layout.ndof(), layout.ndof());
    for f in layout.faces() {
        if f.slot == Slot::Zero {
            continue;
        }
        let c = layout.face_combo(&f);
        t.outer(weight(&f), &c, &c);
    }
    t
}

/// Trapezoid mass of the wall velocity on the wall vertices.
pub fn shell_mass(layout: &Layout) -> Triplets {
    let mut t = Triplets::new(layout.ndof(), layout.ndof());
    let hz = layout.grid.hz();
    for k in 1..layout.grid.nz {
        if let Some(i) = layout.shell_index(k) {
            t.push(i, i, hz);
        }
    }
    t
}

fn shell_combo(layout: &Layout, k: isize) -> Combo {
    let nz = layout.grid.nz as isize;
    // clamped ghosts: v_{-1} = v_1, v_{nz+1} = v_{nz-1}
    let k = if k < 0 {
        -k
    } else if k > nz {
        2 * nz - k
    } else {
        k
    };
    match layout.shell_index(k as usize) {
        Some(i) => Combo::unit(i),
        None => Combo::zero(),
    }
}

/// `c0 |v|^2 + c1 |v'|^2 + c2 |v''|^2` on the wall with clamped ends.
pub fn shell_stiffness(layout: &Layout, c0: f64, c1: f64, c2: f64) -> Triplets {
    let mut t = Triplets::new(layout.ndof(), layout.ndof());
    if !layout.has_shell() {
        return t;
    }
    let nz = layout.grid.nz as isize;
    let hz = layout.grid.hz();
    for k in 1..nz {
        let c = shell_combo(layout, k);
        t.outer(c0 * hz, &c, &c);
    }
    for k in 0..nz {
        let d = lin(&[(1.0 / hz, &shell_combo(layout, k + 1)), (-1.0 / hz, &shell_combo(layout, k))]).compact();
        t.outer(c1 * hz, &d, &d);
    }
    for k in 0..=nz {
        let w = if k == 0 || k == nz { 0.5 } else { 1.0 };
        let d = lin(&[
            (1.0 / (hz * hz), &shell_combo(layout, k + 1)),
            (-2.0 / (hz * hz), &shell_combo(layout, k)),
            (1.0 / (hz * hz), &shell_combo(layout, k - 1)),
        ])
        .compact();
        t.outer(c2 * w * hz, &d, &d);
    }
    t
}

/// Reference partial derivatives `d[c][b] = d u_c / d X_b` at cell centres and vertices.
struct RefPartials<'a> {
    l: &'a Layout,
    hz: f64,
    hr: f64,
}

impl<'a> RefPartials<'a> {
    fn new(l: &'a Layout) -> Self {
        RefPartials { l, hz: l.grid.hz(), hr: l.grid.hr() }
    }

    fn wrap_i(&self, i: isize) -> Option<isize> {
        let nz = self.l.grid.nz as isize;
        if (0..nz).contains(&i) {
            Some(i)
        } else if self.l.is_periodic() {
            Some(i.rem_euclid(nz))
        } else {
            None
        }
    }

    // natural at centres
    fn c_dz_uz(&self, i: isize, j: isize) -> Combo {
        lin(&[(1.0 / self.hz, &self.l.uz(i + 1, j)), (-1.0 / self.hz, &self.l.uz(i, j))])
    }

    fn c_dr_ur(&self, i: isize, j: isize) -> Combo {
        lin(&[(1.0 / self.hr, &self.l.ur(i, j + 1)), (-1.0 / self.hr, &self.l.ur(i, j))])
    }

    // natural at vertices
    fn v_dr_uz(&self, i: isize, j: isize) -> Combo {
        lin(&[(1.0 / self.hr, &self.l.uz(i, j)), (-1.0 / self.hr, &self.l.uz(i, j - 1))])
    }

    fn v_dz_ur(&self, i: isize, j: isize) -> Combo {
        lin(&[(1.0 / self.hz, &self.l.ur(i, j)), (-1.0 / self.hz, &self.l.ur(i - 1, j))])
    }

    fn centre(&self, i: isize, j: isize) -> [[Combo; 2]; 2] {
        let avg = |f: &dyn Fn(isize, isize) -> Combo| {
            let mut c = Combo::zero();
            for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                c = c.add(&f(a, b), 0.25);
            }
            c.compact()
        };
        [
            [self.c_dz_uz(i, j).compact(), avg(&|a, b| self.v_dr_uz(a, b))],
            [avg(&|a, b| self.v_dz_ur(a, b)), self.c_dr_ur(i, j).compact()],
        ]
    }

    fn vertex(&self, i: isize, j: isize) -> [[Combo; 2]; 2] {
        let nr = self.l.grid.nr as isize;
        let avg = |f: &dyn Fn(isize, isize) -> Combo| {
            let mut terms = Vec::new();
            for a in [i - 1, i] {
                let Some(a) = self.wrap_i(a) else { continue };
                for b in [j - 1, j] {
                    if (0..nr).contains(&b) {
                        terms.push(f(a, b));
                    }
                }
            }
            let s = 1.0 / terms.len() as f64;
            terms.iter().fold(Combo::zero(), |c, t| c.add(t, s)).compact()
        };
        [
            [avg(&|a, b| self.c_dz_uz(a, b)), self.v_dr_uz(i, j).compact()],
            [self.v_dz_ur(i, j).compact(), avg(&|a, b| self.c_dr_ur(a, b))],
        ]
    }
}

fn transform(d: [[Combo; 2]; 2], finv: Mat2) -> [[Combo; 2]; 2] {
    let g = |c: usize, a: usize| lin(&[(finv[0][a], &d[c][0]), (finv[1][a], &d[c][1])]).compact();
    [[g(0, 0), g(0, 1)], [g(1, 0), g(1, 1)]]
}

/// Transformed-gradient samples with quadrature weights `J * area`.
pub fn grad_samples(layout: &Layout, map: &AleMap) -> Vec<GradSample> {
    let g = &layout.grid;
    let p = RefPartials::new(layout);
    let area = g.cell_area();
    let mut out = Vec::with_capacity(2 * (g.nz + 1) * (g.nr + 1));
    for i in 0..g.nz {
        for j in 0..g.nr {
            let pos = g.center(i, j);
            let d = p.centre(i as isize, j as isize);
            out.push(GradSample { weight: 0.5 * map.det(pos) * area, pos, g: transform(d, map.jacobian_inv(pos)) });
        }
    }
    let per = layout.is_periodic();
    let imax = if per { g.nz - 1 } else { g.nz };
    for i in 0..=imax {
        for j in 0..=g.nr {
            let pos = g.vertex(i, j);
            let fi = if !per && (i == 0 || i == g.nz) { 0.5 } else { 1.0 };
            let fj = if j == 0 || j == g.nr { 0.5 } else { 1.0 };
            let d = p.vertex(i as isize, j as isize);
            out.push(GradSample {
                weight: 0.5 * fi * fj * map.det(pos) * area,
                pos,
                g: transform(d, map.jacobian_inv(pos)),
            });
        }
    }
    out
}

/// `sum w |grad u|^2` (full) or `sum w |D u|^2` (symmetric part).
pub fn stiffness(layout: &Layout, samples: &[GradSample], symmetric: bool) -> Triplets {
    let mut t = Triplets::new(layout.ndof(), layout.ndof());
    for s in samples {
        for c in 0..2 {
            for a in 0..2 {
                if symmetric {
                    if a < c {
                        continue;
                    }
                    let d = lin(&[(0.5, &s.g[c][a]), (0.5, &s.g[a][c])]).compact();
                    let mult = if a == c { 1.0 } else { 2.0 };
                    t.outer(mult * s.weight, &d, &d);
                } else {
                    t.outer(s.weight, &s.g[c][a], &s.g[c][a]);
                }
            }
        }
    }
    t
}

pub fn eval_grad(s: &GradSample, x: &[f64]) -> [[f64; 2]; 2] {
    [[s.g[0][0].eval(x), s.g[0][1].eval(x)], [s.g[1][0].eval(x), s.g[1][1].eval(x)]]
}

/// Integrated divergence per cell: `h_r [U_z] + h_z [U_r]`, with contravariant
/// fluxes `U = J F^{-1} u`.
pub fn divergence(layout: &Layout, map: &AleMap) -> Triplets {
    let g = &layout.grid;
    let (nz, nr) = (g.nz, g.nr);
    let mut t = Triplets::new(nz * nr, layout.ndof());
    for i in 0..nz {
        for j in 0..nr {
            let row = i * nr + j;
            let (ii, jj) = (i as isize, j as isize);
            let c = lin(&[
                (g.hr(), &flux_z(layout, map, ii + 1, jj)),
                (-g.hr(), &flux_z(layout, map, ii, jj)),
                (g.hz(), &flux_r(layout, map, ii, jj + 1)),
                (-g.hz(), &flux_r(layout, map, ii, jj)),
            ])
            .compact();
            t.row(row, 1.0, &c);
        }
    }
    t
}

/// `U_z` at `u_z` face `(i, j)`.
pub fn flux_z(layout: &Layout, map: &AleMap, i: isize, j: isize) -> Combo {
    let pos = layout.grid.uz_pos(i as usize, j as usize);
    let (jac, fi) = (map.det(pos), map.jacobian_inv(pos));
    let mut c = layout.uz(i, j).scale(jac * fi[0][0]);
    if fi[0][1] != 0.0 {
        let avg = lin(&[
            (0.25, &layout.ur(i - 1, j)),
            (0.25, &layout.ur(i, j)),
            (0.25, &layout.ur(i - 1, j + 1)),
            (0.25, &layout.ur(i, j + 1)),
        ]);
        c = c.add(&avg, jac * fi[0][1]);
    }
    c
}

/// `U_r` at `u_r` face `(i, j)`.
pub fn flux_r(layout: &Layout, map: &AleMap, i: isize, j: isize) -> Combo {
    let pos = layout.grid.ur_pos(i as usize, j as usize);
    let (jac, fi) = (map.det(pos), map.jacobian_inv(pos));
    let mut c = layout.ur(i, j).scale(jac * fi[1][1]);
    if fi[1][0] != 0.0 {
        let avg = lin(&[
            (0.25, &layout.uz(i, j - 1)),
            (0.25, &layout.uz(i + 1, j - 1)),
            (0.25, &layout.uz(i, j)),
            (0.25, &layout.uz(i + 1, j)),
        ]);
        c = c.add(&avg, jac * fi[1][0]);
    }
    c
}

/// Velocity component not stored on this face, averaged from the four neighbours.
pub fn cross_avg(layout: &Layout, f: &Face) -> Combo {
    let (i, j) = (f.i as isize, f.j as isize);
    match f.comp {
        Comp::Z => lin(&[
            (0.25, &layout.ur(i - 1, j)),
            (0.25, &layout.ur(i, j)),
            (0.25, &layout.ur(i - 1, j + 1)),
            (0.25, &layout.ur(i, j + 1)),
        ]),
        Comp::R => lin(&[
            (0.25, &layout.uz(i, j - 1)),
            (0.25, &layout.uz(i + 1, j - 1)),
            (0.25, &layout.uz(i, j)),
            (0.25, &layout.uz(i + 1, j)),
        ]),
    }
}

/// Convection form `c(u, q) = sum_f w_f q_f (a . grad^eta) u` for a frozen
/// advecting velocity `a` (physical components) given per face.
pub fn advection(layout: &Layout, map: &AleMap, a: impl Fn(&Face) -> Point) -> Triplets {
    let g = &layout.grid;
    let (hz, hr) = (g.hz(), g.hr());
    let mut t = Triplets::new(layout.ndof(), layout.ndof());
    for f in layout.faces() {
        if f.slot == Slot::Zero {
            continue;
        }
        let av = a(&f);
        if av == [0.0, 0.0] {
            continue;
        }
        let fi = map.jacobian_inv(f.pos);
        let ref_a = [fi[0][0] * av[0] + fi[0][1] * av[1], fi[1][0] * av[0] + fi[1][1] * av[1]];
        let (i, j) = (f.i as isize, f.j as isize);
        let dz = lin(&[(0.5 / hz, &layout.comp(f.comp, i + 1, j)), (-0.5 / hz, &layout.comp(f.comp, i - 1, j))]);
        let dr = lin(&[(0.5 / hr, &layout.comp(f.comp, i, j + 1)), (-0.5 / hr, &layout.comp(f.comp, i, j - 1))]);
        let d = lin(&[(ref_a[0], &dz), (ref_a[1], &dr)]).compact();
        t.outer(face_weight(layout, map, &f), &layout.face_combo(&f), &d);
    }
    t
}

/// `(C - C^T) / 2`.
pub fn skew(c: &Triplets) -> Triplets {
    let mut s = c.scaled(0.5);
    s.extend_scaled(&c.transpose(), -0.5);
    s
}

/// Gram matrix of the reference five-point Laplacian at every active face.
pub fn laplacian_gram(layout: &Layout, map: &AleMap) -> Triplets {
    let g = &layout.grid;
    let (hz2, hr2) = (g.hz() * g.hz(), g.hr() * g.hr());
    let mut t = Triplets::new(layout.ndof(), layout.ndof());
    for f in layout.faces() {
        if f.slot == Slot::Zero {
            continue;
        }
        let (i, j) = (f.i as isize, f.j as isize);
        let u = |a, b| layout.comp(f.comp, a, b);
        let l = lin(&[
            (1.0 / hz2, &u(i + 1, j)),
            (1.0 / hz2, &u(i - 1, j)),
            (1.0 / hr2, &u(i, j + 1)),
            (1.0 / hr2, &u(i, j - 1)),
            (-2.0 / hz2 - 2.0 / hr2, &u(i, j)),
        ])
        .compact();
        t.outer(face_weight(layout, map, &f), &l, &l);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EtaShape;
    use crate::grid::{Grid, Walls};
    use crate::linalg::Csr;

    fn sample_field(l: &Layout, f: impl Fn(Comp, Point) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; l.ndof()];
        for face in l.faces() {
            if let Slot::Dof(k) = face.slot {
                x[k] = f(face.comp, face.pos);
            }
        }
        x
    }

    #[test]
    fn mass_of_constant_is_area() {
        let g = Grid::new(8, 4, 2.0).unwrap();
        let l = Layout::new(g, Walls::free()).unwrap();
        let m = AleMap::identity(2.0);
        let x = sample_field(&l, |c, _| if c == Comp::Z { 1.0 } else { 0.0 });
        let q = mass(&l, &m).to_csr().quad(&x);
        assert!((q - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_linear_field_is_exact() {
        let g = Grid::new(8, 4, 2.0).unwrap();
        let l = Layout::new(g, Walls::free()).unwrap();
        let m = AleMap::identity(2.0);
        let x = sample_field(&l, |c, p| if c == Comp::Z { 3.0 * p[1] } else { 2.0 * p[0] });
        let k = stiffness(&l, &grad_samples(&l, &m), false).to_csr().quad(&x);
        assert!((k - 2.0 * 13.0).abs() < 1e-10, "{k}");
    }

    #[test]
    fn divergence_free_linear_field() {
        let g = Grid::new(6, 4, 1.5).unwrap();
        let l = Layout::new(g, Walls::free()).unwrap();
        let m = AleMap::identity(1.5);
        let x = sample_field(&l, |c, p| if c == Comp::Z { p[0] } else { -p[1] });
        let d = divergence(&l, &m).to_csr().mul(&x);
        assert!(d.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn radial_map_divergence_of_physical_solenoidal_field() {
        // u = (z, -r) is solenoidal in physical coordinates for any radial map
        let g = Grid::new(16, 8, 2.0).unwrap();
        let l = Layout::new(g, Walls::free()).unwrap();
        let m = AleMap::Radial { radius: 1.0, length: 2.0, eta: EtaShape::Sine { amp: 0.2, mode: 1.0 } };
        let x = sample_field(&l, |c, p| {
            let q = m.apply(p);
            if c == Comp::Z {
                q[0]
            } else {
                -q[1]
            }
        });
        let d = divergence(&l, &m).to_csr().mul(&x);
        let mx = d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(mx < 2e-3 * g.cell_area(), "{mx}");
    }

    #[test]
    fn skew_form_has_zero_energy() {
        let g = Grid::new(6, 4, 1.0).unwrap();
        let l = Layout::new(g, Walls::tube()).unwrap();
        let m = AleMap::identity(1.0);
        let c = advection(&l, &m, |f| [f.pos[1], f.pos[0] - 0.3]);
        let s = Csr::from_triplets(&skew(&c));
        let x: Vec<f64> = (0..l.ndof()).map(|k| ((k * 7) as f64).sin()).collect();
        assert!(s.quad(&x).abs() < 1e-12);
    }

    #[test]
    fn shell_stiffness_is_spd_on_bumps() {
        let g = Grid::new(8, 4, 1.0).unwrap();
        let l = Layout::new(g, Walls::tube()).unwrap();
        let a = shell_stiffness(&l, 1.0, 1.0, 1.0).to_csr();
        let mut x = vec![0.0; l.ndof()];
        for k in 1..8 {
            x[l.shell_index(k).unwrap()] = ((k as f64) * 0.9).cos();
        }
        assert!(a.quad(&x) > 0.0);
    }
}
