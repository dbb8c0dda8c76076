use crate::error::{contract, Result};
use crate::geometry::{in_reference, AleMap, Point};
use crate::grid::{Comp, Layout, Padded, Slot};
use std::sync::Arc;

/// Velocity (and wall velocity) on a layout over one domain snapshot.
#[derive(Clone, Debug)]
pub struct DiscreteField {
    pub layout: Arc<Layout>,
    pub map: AleMap,
    pub x: Vec<f64>,
}

impl DiscreteField {
    pub fn new(layout: Arc<Layout>, map: AleMap, x: Vec<f64>) -> Result<Self> {
        if x.len() != layout.ndof() {
            return Err(contract(format!("field has {} values, layout needs {}", x.len(), layout.ndof())));
        }
        if (map.length() - layout.grid.length).abs() > 1e-12 {
            return Err(contract("map and grid lengths differ"));
        }
        Ok(DiscreteField { layout, map, x })
    }

    pub fn zeros(layout: Arc<Layout>, map: AleMap) -> Self {
        let n = layout.ndof();
        DiscreteField { layout, map, x: vec![0.0; n] }
    }

    /// Samples physical components `f(comp, physical point)` at the unknown faces
    /// and the wall velocity `wall(z)` at the wall vertices.
    pub fn from_fn(
        layout: Arc<Layout>,
        map: AleMap,
        f: impl Fn(Comp, Point) -> f64,
        wall: impl Fn(f64) -> f64,
    ) -> Self {
        let mut x = vec![0.0; layout.ndof()];
        for face in layout.faces() {
            if let Slot::Dof(k) = face.slot {
                x[k] = f(face.comp, map.apply(face.pos));
            }
        }
        let hz = layout.grid.hz();
        for k in 1..layout.grid.nz {
            if let Some(i) = layout.shell_index(k) {
                x[i] = wall(k as f64 * hz);
            }
        }
        DiscreteField { layout, map, x }
    }

    pub fn with_values(&self, x: Vec<f64>) -> Self {
        DiscreteField { layout: self.layout.clone(), map: self.map.clone(), x }
    }

    pub fn padded(&self) -> Padded {
        Padded::new(&self.layout, &self.x)
    }

    pub fn shell(&self) -> Vec<f64> {
        self.layout.shell_values(&self.x)
    }

    /// Value at a physical point, zero outside the domain.
    pub fn eval_physical(&self, pad: &Padded, x: Point) -> [f64; 2] {
        match self.map.inverse(x) {
            Ok(p) if in_reference(p, self.layout.grid.length, 1e-12) => pad.interp(p),
            _ => [0.0, 0.0],
        }
    }

    pub fn same_layout(&self, other: &DiscreteField) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }
}
