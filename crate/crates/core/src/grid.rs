//! Staggered grid on the reference rectangle and boundary-aware unknown layouts.
//!
//! `u_z` lives on vertical faces `(i h_z, (j + 1/2) h_r)`, `i = 0..=nz`, `j = 0..nr`;
//! `u_r` on horizontal faces `((i + 1/2) h_z, j h_r)`, `i = 0..nz`, `j = 0..=nr`.
//! Values stored are physical velocity components at the reference positions.

use crate::error::{contract, Result};
use crate::geometry::Point;
use crate::linalg::Combo;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nz: usize,
    pub nr: usize,
    pub length: f64,
}

impl Grid {
    pub fn new(nz: usize, nr: usize, length: f64) -> Result<Self> {
        if nz < 2 || nr < 2 || !(length > 0.0) {
            return Err(contract(format!("invalid grid {nz} x {nr} on length {length}")));
        }
        Ok(Grid { nz, nr, length })
    }

    pub fn hz(&self) -> f64 {
        self.length / self.nz as f64
    }

    pub fn hr(&self) -> f64 {
        1.0 / self.nr as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hz() * self.hr()
    }

    pub fn uz_pos(&self, i: usize, j: usize) -> Point {
        [i as f64 * self.hz(), (j as f64 + 0.5) * self.hr()]
    }

    pub fn ur_pos(&self, i: usize, j: usize) -> Point {
        [(i as f64 + 0.5) * self.hz(), j as f64 * self.hr()]
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        [(i as f64 + 0.5) * self.hz(), (j as f64 + 0.5) * self.hr()]
    }

    pub fn vertex(&self, i: usize, j: usize) -> Point {
        [i as f64 * self.hz(), j as f64 * self.hr()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallKind {
    /// Zero velocity.
    NoSlip,
    /// Zero normal velocity, free tangential velocity.
    Slip,
    /// Free normal velocity, zero tangential velocity (pressure inlet/outlet).
    Open,
    /// Normal velocity equals the wall velocity, zero tangential velocity (top only).
    Interface,
    /// No condition (natural); tangential values linearly extrapolated.
    Free,
    /// Left/right identified.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Walls {
    pub left: WallKind,
    pub right: WallKind,
    pub bottom: WallKind,
    pub top: WallKind,
}

impl Walls {
    pub fn closed() -> Self {
        Walls { left: WallKind::NoSlip, right: WallKind::NoSlip, bottom: WallKind::NoSlip, top: WallKind::NoSlip }
    }

    /// Pressure-driven tube with a symmetry axis at the bottom and an elastic top wall.
    pub fn tube() -> Self {
        Walls { left: WallKind::Open, right: WallKind::Open, bottom: WallKind::Slip, top: WallKind::Interface }
    }

    pub fn free() -> Self {
        Walls { left: WallKind::Free, right: WallKind::Free, bottom: WallKind::Free, top: WallKind::Free }
    }

    pub fn periodic_channel() -> Self {
        Walls { left: WallKind::Periodic, right: WallKind::Periodic, bottom: WallKind::NoSlip, top: WallKind::NoSlip }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Dof(usize),
    Zero,
    /// Top `u_r` face `i`, equal to the mean of the wall velocity at vertices `i`, `i + 1`.
    Trace(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comp {
    Z,
    R,
}

/// A face with its slot, reference position and control-volume fraction.
#[derive(Clone, Copy, Debug)]
pub struct Face {
    pub comp: Comp,
    pub i: usize,
    pub j: usize,
    pub slot: Slot,
    pub pos: Point,
    pub frac: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub grid: Grid,
    pub walls: Walls,
    uz: Vec<Slot>,
    ur: Vec<Slot>,
    pub n_fluid: usize,
    /// Wall-velocity unknowns at interior vertices `1..nz` of the top wall.
    pub n_shell: usize,
}

fn ghost_sign(kind: WallKind) -> Ghost {
    match kind {
        WallKind::NoSlip | WallKind::Open | WallKind::Interface => Ghost::Odd,
        WallKind::Slip => Ghost::Even,
        WallKind::Free => Ghost::Linear,
        WallKind::Periodic => Ghost::Wrap,
    }
}

fn normal_ghost(kind: WallKind) -> Ghost {
    match kind {
        WallKind::Slip => Ghost::Odd,
        WallKind::Free => Ghost::Linear,
        WallKind::Periodic => Ghost::Wrap,
        _ => Ghost::Even,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Ghost {
    Odd,
    Even,
    Linear,
    Wrap,
}

impl Layout {
    pub fn new(grid: Grid, walls: Walls) -> Result<Self> {
        let periodic = [walls.left, walls.right].iter().filter(|w| **w == WallKind::Periodic).count();
        if periodic == 1 {
            return Err(contract("left and right walls must both be periodic"));
        }
        if walls.bottom == WallKind::Periodic || walls.top == WallKind::Periodic {
            return Err(contract("only left/right walls may be periodic"));
        }
        if [walls.left, walls.right, walls.bottom].contains(&WallKind::Interface) {
            return Err(contract("an interface wall is only supported on top"));
        }
        let (nz, nr) = (grid.nz, grid.nr);
        let mut next = 0usize;
        let mut uz = vec![Slot::Zero; (nz + 1) * nr];
        for i in 0..=nz {
            for j in 0..nr {
                let free_normal = |k: WallKind| matches!(k, WallKind::Open | WallKind::Free | WallKind::Periodic);
                let s = if i == 0 && !free_normal(walls.left) || i == nz && !free_normal(walls.right) {
                    Slot::Zero
                } else if i == nz && walls.right == WallKind::Periodic {
                    uz[j]
                } else {
                    next += 1;
                    Slot::Dof(next - 1)
                };
                uz[i * nr + j] = s;
            }
        }
        let mut ur = vec![Slot::Zero; nz * (nr + 1)];
        for i in 0..nz {
            for j in 0..=nr {
                let free_normal = |k: WallKind| matches!(k, WallKind::Open | WallKind::Free);
                let s = if j == nr && walls.top == WallKind::Interface {
                    Slot::Trace(i)
                } else if j == 0 && !free_normal(walls.bottom) || j == nr && !free_normal(walls.top) {
                    Slot::Zero
                } else {
                    next += 1;
                    Slot::Dof(next - 1)
                };
                ur[i * (nr + 1) + j] = s;
            }
        }
        let n_shell = if walls.top == WallKind::Interface { nz - 1 } else { 0 };
        Ok(Layout { grid, walls, uz, ur, n_fluid: next, n_shell })
    }

    pub fn ndof(&self) -> usize {
        self.n_fluid + self.n_shell
    }

    pub fn has_shell(&self) -> bool {
        self.n_shell > 0
    }

    pub fn is_periodic(&self) -> bool {
        self.walls.left == WallKind::Periodic
    }

    /// Index of wall-velocity vertex `k` (`1..nz`), if it is an unknown.
    pub fn shell_index(&self, k: usize) -> Option<usize> {
        if self.has_shell() && k >= 1 && k < self.grid.nz {
            Some(self.n_fluid + k - 1)
        } else {
            None
        }
    }

    /// No boundary normal velocity is free, so the divergence has a constant left null vector.
    pub fn is_closed(&self) -> bool {
        let open = |k: WallKind| matches!(k, WallKind::Open | WallKind::Free | WallKind::Interface);
        !(open(self.walls.left) || open(self.walls.right) || open(self.walls.bottom) || open(self.walls.top))
    }

    pub fn uz_slot(&self, i: usize, j: usize) -> Slot {
        self.uz[i * self.grid.nr + j]
    }

    pub fn ur_slot(&self, i: usize, j: usize) -> Slot {
        self.ur[i * (self.grid.nr + 1) + j]
    }

    fn slot_combo(&self, s: Slot) -> Combo {
        match s {
            Slot::Dof(k) => Combo::unit(k),
            Slot::Zero => Combo::zero(),
            Slot::Trace(i) => {
                let mut c = Combo::zero();
                for k in [i, i + 1] {
                    if let Some(idx) = self.shell_index(k) {
                        c.0.push((idx, 0.5));
                    }
                }
                c
            }
        }
    }

    /// `u_z` at padded index `i in -1..=nz+1`, `j in -1..=nr`.
    pub fn uz(&self, i: isize, j: isize) -> Combo {
        let (nz, nr) = (self.grid.nz as isize, self.grid.nr as isize);
        if i < 0 || i > nz {
            let (wall, inner, edge) = if i < 0 { (self.walls.left, 1, 0) } else { (self.walls.right, nz - 1, nz) };
            return match normal_ghost(wall) {
                Ghost::Even => self.uz(inner, j),
                Ghost::Odd => self.uz(inner, j).scale(-1.0),
                Ghost::Linear => self.uz(edge, j).scale(2.0).add(&self.uz(inner, j), -1.0),
                Ghost::Wrap => self.uz(if i < 0 { nz - 1 } else { 1 }, j),
            };
        }
        if j < 0 || j >= nr {
            let (wall, first, second) =
                if j < 0 { (self.walls.bottom, 0, 1) } else { (self.walls.top, nr - 1, nr - 2) };
            return match ghost_sign(wall) {
                Ghost::Odd => self.uz(i, first).scale(-1.0),
                Ghost::Even => self.uz(i, first),
                Ghost::Linear => self.uz(i, first).scale(2.0).add(&self.uz(i, second), -1.0),
                Ghost::Wrap => unreachable!(),
            };
        }
        self.slot_combo(self.uz_slot(i as usize, j as usize))
    }

    /// `u_r` at padded index `i in -1..=nz`, `j in -1..=nr+1`.
    pub fn ur(&self, i: isize, j: isize) -> Combo {
        let (nz, nr) = (self.grid.nz as isize, self.grid.nr as isize);
        if j < 0 || j > nr {
            let (wall, inner, edge) = if j < 0 { (self.walls.bottom, 1, 0) } else { (self.walls.top, nr - 1, nr) };
            return match normal_ghost(wall) {
                Ghost::Even => self.ur(i, inner),
                Ghost::Odd => self.ur(i, inner).scale(-1.0),
                Ghost::Linear => self.ur(i, edge).scale(2.0).add(&self.ur(i, inner), -1.0),
                Ghost::Wrap => unreachable!(),
            };
        }
        if i < 0 || i >= nz {
            let (wall, first, second) =
                if i < 0 { (self.walls.left, 0, 1) } else { (self.walls.right, nz - 1, nz - 2) };
            return match ghost_sign(wall) {
                Ghost::Odd => self.ur(first, j).scale(-1.0),
                Ghost::Even => self.ur(first, j),
                Ghost::Linear => self.ur(first, j).scale(2.0).add(&self.ur(second, j), -1.0),
                Ghost::Wrap => self.ur(if i < 0 { nz - 1 } else { 0 }, j),
            };
        }
        self.slot_combo(self.ur_slot(i as usize, j as usize))
    }

    /// All distinct faces (periodic duplicates skipped).
    pub fn faces(&self) -> Vec<Face> {
        let g = &self.grid;
        let mut out = Vec::with_capacity((g.nz + 1) * g.nr + g.nz * (g.nr + 1));
        let per = self.is_periodic();
        for i in 0..=g.nz {
            if per && i == g.nz {
                continue;
            }
            for j in 0..g.nr {
                let frac = if !per && (i == 0 || i == g.nz) { 0.5 } else { 1.0 };
                out.push(Face { comp: Comp::Z, i, j, slot: self.uz_slot(i, j), pos: g.uz_pos(i, j), frac });
            }
        }
        for i in 0..g.nz {
            for j in 0..=g.nr {
                let frac = if j == 0 || j == g.nr { 0.5 } else { 1.0 };
                out.push(Face { comp: Comp::R, i, j, slot: self.ur_slot(i, j), pos: g.ur_pos(i, j), frac });
            }
        }
        out
    }

    pub fn face_combo(&self, f: &Face) -> Combo {
        self.slot_combo(f.slot)
    }

    /// Padded combo of a component.
    pub fn comp(&self, c: Comp, i: isize, j: isize) -> Combo {
        match c {
            Comp::Z => self.uz(i, j),
            Comp::R => self.ur(i, j),
        }
    }

    /// Builds the unknown vector from face values and wall velocity.
    /// `uz` is `(nz+1) x nr`, `ur` is `nz x (nr+1)` row-major; `shell` holds vertices `0..=nz`.
    pub fn pack(&self, uz: &[f64], ur: &[f64], shell: Option<&[f64]>) -> Result<Vec<f64>> {
        let g = &self.grid;
        if uz.len() != (g.nz + 1) * g.nr || ur.len() != g.nz * (g.nr + 1) {
            return Err(contract("face array dimensions do not match the grid"));
        }
        let mut x = vec![0.0; self.ndof()];
        for i in 0..=g.nz {
            for j in 0..g.nr {
                if let Slot::Dof(k) = self.uz_slot(i, j) {
                    x[k] = uz[i * g.nr + j];
                }
            }
        }
        for i in 0..g.nz {
            for j in 0..=g.nr {
                if let Slot::Dof(k) = self.ur_slot(i, j) {
                    x[k] = ur[i * (g.nr + 1) + j];
                }
            }
        }
        if self.has_shell() {
            let s = shell.ok_or_else(|| contract("wall velocity required for an interface layout"))?;
            if s.len() != g.nz + 1 {
                return Err(contract("wall velocity must have nz + 1 vertex values"));
            }
            for k in 1..g.nz {
                x[self.n_fluid + k - 1] = s[k];
            }
        }
        Ok(x)
    }

    /// Face arrays (`uz`, `ur`) and wall velocity at vertices.
    pub fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let mut uz = vec![0.0; (g.nz + 1) * g.nr];
        let mut ur = vec![0.0; g.nz * (g.nr + 1)];
        for i in 0..=g.nz {
            for j in 0..g.nr {
                uz[i * g.nr + j] = self.uz(i as isize, j as isize).eval(x);
            }
        }
        for i in 0..g.nz {
            for j in 0..=g.nr {
                ur[i * (g.nr + 1) + j] = self.ur(i as isize, j as isize).eval(x);
            }
        }
        (uz, ur, self.shell_values(x))
    }

    /// Wall velocity at all `nz + 1` vertices (zero when there is no interface).
    pub fn shell_values(&self, x: &[f64]) -> Vec<f64> {
        let nz = self.grid.nz;
        (0..=nz).map(|k| self.shell_index(k).map_or(0.0, |i| x[i])).collect()
    }
}

/// Numeric padded arrays of a field for fast interpolation.
#[derive(Clone, Debug)]
pub struct Padded {
    grid: Grid,
    /// `(nz + 3) x (nr + 2)`, offset (1, 1)
    uz: Vec<f64>,
    /// `(nz + 2) x (nr + 3)`, offset (1, 1)
    ur: Vec<f64>,
}

impl Padded {
    pub fn new(layout: &Layout, x: &[f64]) -> Self {
        let g = layout.grid;
        let (nz, nr) = (g.nz as isize, g.nr as isize);
        let mut uz = vec![0.0; (g.nz + 3) * (g.nr + 2)];
        for i in -1..=nz + 1 {
            for j in -1..=nr {
                uz[((i + 1) * (nr + 2) + j + 1) as usize] = layout.uz(i, j).eval(x);
            }
        }
        let mut ur = vec![0.0; (g.nz + 2) * (g.nr + 3)];
        for i in -1..=nz {
            for j in -1..=nr + 1 {
                ur[((i + 1) * (nr + 3) + j + 1) as usize] = layout.ur(i, j).eval(x);
            }
        }
        Padded { grid: g, uz, ur }
    }

    pub fn uz(&self, i: isize, j: isize) -> f64 {
        self.uz[((i + 1) * (self.grid.nr as isize + 2) + j + 1) as usize]
    }

    pub fn ur(&self, i: isize, j: isize) -> f64 {
        self.ur[((i + 1) * (self.grid.nr as isize + 3) + j + 1) as usize]
    }

    /// Bilinear interpolation of both components at a reference point
    /// (clamped to the reference rectangle).
    pub fn interp(&self, p: Point) -> [f64; 2] {
        let g = &self.grid;
        let (hz, hr) = (g.hz(), g.hr());
        let (nz, nr) = (g.nz as isize, g.nr as isize);
        let z = p[0].clamp(0.0, g.length);
        let r = p[1].clamp(0.0, 1.0);
        // u_z lattice: i = z / hz, j = r / hr - 1/2
        let a = z / hz;
        let b = r / hr - 0.5;
        let i0 = (a.floor() as isize).clamp(0, nz - 1);
        let j0 = (b.floor() as isize).clamp(-1, nr - 1);
        let (ta, tb) = (a - i0 as f64, b - j0 as f64);
        let vz = (1.0 - ta) * ((1.0 - tb) * self.uz(i0, j0) + tb * self.uz(i0, j0 + 1))
            + ta * ((1.0 - tb) * self.uz(i0 + 1, j0) + tb * self.uz(i0 + 1, j0 + 1));
        // u_r lattice: i = z / hz - 1/2, j = r / hr
        let a = z / hz - 0.5;
        let b = r / hr;
        let i0 = (a.floor() as isize).clamp(-1, nz - 1);
        let j0 = (b.floor() as isize).clamp(0, nr - 1);
        let (ta, tb) = (a - i0 as f64, b - j0 as f64);
        let vr = (1.0 - ta) * ((1.0 - tb) * self.ur(i0, j0) + tb * self.ur(i0, j0 + 1))
            + ta * ((1.0 - tb) * self.ur(i0 + 1, j0) + tb * self.ur(i0 + 1, j0 + 1));
        [vz, vr]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_layout_counts() {
        let g = Grid::new(4, 3, 1.0).unwrap();
        let l = Layout::new(g, Walls::closed()).unwrap();
        assert_eq!(l.n_fluid, 3 * 3 + 4 * 2);
        assert!(l.is_closed());
        assert_eq!(l.n_shell, 0);
    }

    #[test]
    fn tube_layout_counts() {
        let g = Grid::new(4, 3, 1.0).unwrap();
        let l = Layout::new(g, Walls::tube()).unwrap();
        assert_eq!(l.n_fluid, 5 * 3 + 4 * 2);
        assert_eq!(l.n_shell, 3);
        assert!(!l.is_closed());
        // top face 0 sees only vertex 1
        assert_eq!(l.ur(0, 3).0, vec![(l.n_fluid, 0.5)]);
    }

    #[test]
    fn periodic_faces_identified() {
        let g = Grid::new(4, 3, 1.0).unwrap();
        let l = Layout::new(g, Walls::periodic_channel()).unwrap();
        assert_eq!(l.uz_slot(0, 1), l.uz_slot(4, 1));
        assert_eq!(l.ur(-1, 1), l.ur(3, 1));
    }

    #[test]
    fn no_slip_ghost_vanishes_on_wall() {
        let g = Grid::new(4, 3, 1.0).unwrap();
        let l = Layout::new(g, Walls::closed()).unwrap();
        let x: Vec<f64> = (0..l.ndof()).map(|k| k as f64 + 1.0).collect();
        let p = Padded::new(&l, &x);
        let v = p.interp([0.5, 0.0]);
        assert!(v[0].abs() < 1e-14 && v[1].abs() < 1e-14);
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let g = Grid::new(4, 3, 1.0).unwrap();
        let l = Layout::new(g, Walls::tube()).unwrap();
        let x: Vec<f64> = (0..l.ndof()).map(|k| (k as f64).sin()).collect();
        let (uz, ur, s) = l.unpack(&x);
        assert_eq!(l.pack(&uz, &ur, Some(&s)).unwrap(), x);
    }
}
