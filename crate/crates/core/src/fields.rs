//! Fields on uniform rectangular lattices in one or two dimensions.
//!
//! Nodes are ordered lexicographically with axis 0 slowest: the node
//! `(i, j)` has flat index `i·N₁ + j`. In one dimension `N₁ = 1`. A field with
//! `m` components stores component `c` of node `k` at `k·m + c`.
//!
//! Cell-centred quantities (the discrete gradient in particular) live on the
//! lattice of cell centres returned by [`GridSpec::cell_grid`], so every
//! operation in this module applies to them as well.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Boundary condition attached to a face. `Interior` marks a face produced by
/// cutting a window out of a larger domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
}

/// Axis-aligned face of the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub fn new(axis: usize, side: Side) -> Self {
        Self { axis, side }
    }

    /// Face with outward normal `normal`; only coordinate directions are supported.
    pub fn from_normal(normal: &[f64]) -> Result<Self> {
        let nz: Vec<usize> = (0..normal.len()).filter(|&k| normal[k] != 0.0).collect();
        match nz.as_slice() {
            [k] => Ok(Face::new(*k, if normal[*k] < 0.0 { Side::Low } else { Side::High })),
            _ => Err(Error::Unsupported(format!("face with normal {normal:?} is not axis-aligned"))),
        }
    }

    fn slot(&self) -> usize {
        match self.side {
            Side::Low => 0,
            Side::High => 1,
        }
    }
}

/// Uniform lattice on a box `[a₁,b₁] × …` with per-face boundary tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub nodes: [usize; 2],
    pub tags: [[BoundaryTag; 2]; 2],
    /// Marks the corner-quadrant model domain: the low faces are the two
    /// boundary pieces meeting at the corner.
    pub corner_mode: bool,
}

impl GridSpec {
    /// Interval `[a, b]` with `nodes ≥ 3` nodes, Dirichlet at both ends.
    pub fn interval(a: f64, b: f64, nodes: usize) -> Result<Self> {
        let g = Self {
            dim: 1,
            lower: [a, 0.0],
            upper: [b, 0.0],
            nodes: [nodes, 1],
            tags: [[BoundaryTag::Dirichlet; 2], [BoundaryTag::Interior; 2]],
            corner_mode: false,
        };
        g.validate()?;
        Ok(g)
    }

    /// Rectangle `[a₁,b₁] × [a₂,b₂]`, Dirichlet on every face.
    pub fn rectangle(x: (f64, f64), y: (f64, f64), nodes: [usize; 2]) -> Result<Self> {
        let g = Self {
            dim: 2,
            lower: [x.0, y.0],
            upper: [x.1, y.1],
            nodes,
            tags: [[BoundaryTag::Dirichlet; 2]; 2],
            corner_mode: false,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_tag(mut self, face: Face, tag: BoundaryTag) -> Self {
        self.tags[face.axis][face.slot()] = tag;
        self
    }

    pub fn with_all_tags(mut self, tag: BoundaryTag) -> Self {
        for a in 0..self.dim {
            self.tags[a] = [tag; 2];
        }
        self
    }

    pub fn tag(&self, face: Face) -> BoundaryTag {
        self.tags[face.axis][face.slot()]
    }

    /// Faces of the box in a fixed order.
    pub fn faces(&self) -> Vec<Face> {
        (0..self.dim).flat_map(|a| [Face::new(a, Side::Low), Face::new(a, Side::High)]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return invalid(format!("grid dimension must be 1 or 2, got {}", self.dim));
        }
        for a in 0..self.dim {
            if self.nodes[a] < 3 {
                return invalid(format!("need at least 3 nodes per axis, got {} on axis {a}", self.nodes[a]));
            }
            if !(self.lower[a] < self.upper[a]) || !self.lower[a].is_finite() || !self.upper[a].is_finite() {
                return invalid(format!("degenerate extent on axis {a}"));
            }
        }
        if self.dim == 1 && self.nodes[1] != 1 {
            return invalid("one-dimensional grids carry a single node on axis 1");
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.nodes[axis] - 1) as f64
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    /// Product of the spacings: volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.nodes[1] + j
    }

    /// Lattice coordinates of a flat index.
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k / self.nodes[1], k % self.nodes[1])
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.nodes[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.spacing(axis)
        }
    }

    /// Position of node `k` (length `dim`).
    pub fn point(&self, k: usize) -> Vec<f64> {
        let (i, j) = self.ij(k);
        if self.dim == 1 {
            vec![self.coord(0, i)]
        } else {
            vec![self.coord(0, i), self.coord(1, j)]
        }
    }

    /// Lattice of cell centres: one node per cell, same spacing.
    pub fn cell_grid(&self) -> GridSpec {
        let mut g = self.clone();
        for a in 0..self.dim {
            let h = self.spacing(a);
            g.lower[a] = self.lower[a] + h / 2.0;
            g.upper[a] = self.upper[a] - h / 2.0;
            g.nodes[a] = self.nodes[a] - 1;
        }
        g
    }

    pub fn num_cells(&self) -> usize {
        (0..self.dim).map(|a| self.nodes[a] - 1).product()
    }

    /// Sub-box `[origin, origin + shape)` in lattice units; faces not shared
    /// with this grid are tagged `Interior`.
    pub fn sub_box(&self, origin: [usize; 2], shape: [usize; 2]) -> GridSpec {
        let mut g = self.clone();
        for a in 0..self.dim {
            g.lower[a] = self.coord(a, origin[a]);
            let last = origin[a] + shape[a] - 1;
            g.upper[a] = if shape[a] == 1 { g.lower[a] } else { self.coord(a, last) };
            g.nodes[a] = shape[a];
            if origin[a] != 0 {
                g.tags[a][0] = BoundaryTag::Interior;
            }
            if last + 1 != self.nodes[a] {
                g.tags[a][1] = BoundaryTag::Interior;
            }
        }
        g
    }

    /// Nodes lying on `face`.
    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        let fixed = match face.side {
            Side::Low => 0,
            Side::High => self.nodes[face.axis] - 1,
        };
        let other = 1 - face.axis;
        (0..self.nodes[other])
            .map(|t| if face.axis == 0 { self.index(fixed, t) } else { self.index(t, fixed) })
            .collect()
    }

    /// Trapezoid weights: integrating a node field with them equals the
    /// midpoint rule applied to corner averages over cells.
    pub fn node_weights(&self) -> Vec<f64> {
        let w1 = |a: usize, i: usize| {
            if a >= self.dim {
                return 1.0;
            }
            let h = self.spacing(a);
            if i == 0 || i + 1 == self.nodes[a] {
                h / 2.0
            } else {
                h
            }
        };
        (0..self.num_nodes())
            .map(|k| {
                let (i, j) = self.ij(k);
                w1(0, i) * w1(1, j)
            })
            .collect()
    }

    /// Boundary weights of the faces selected by `keep`: trapezoid along each
    /// face in 2D, unit point masses in 1D.
    pub fn boundary_weights(&self, keep: impl Fn(Face) -> bool) -> Vec<f64> {
        let mut w = vec![0.0; self.num_nodes()];
        for face in self.faces() {
            if !keep(face) {
                continue;
            }
            let nodes = self.face_nodes(face);
            if self.dim == 1 {
                w[nodes[0]] += 1.0;
                continue;
            }
            let h = self.spacing(1 - face.axis);
            let last = nodes.len() - 1;
            for (t, &k) in nodes.iter().enumerate() {
                w[k] += if t == 0 || t == last { h / 2.0 } else { h };
            }
        }
        w
    }

    /// Whether `x` lies in the closed box (with a relative tolerance).
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dim).all(|a| {
            let tol = 1e-12 * self.width(a).max(1.0);
            x[a] >= self.lower[a] - tol && x[a] <= self.upper[a] + tol
        })
    }
}

/// `ℝ^m`-valued field on the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: GridSpec,
    pub components: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridSpec, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() != grid.num_nodes() * components {
            return invalid(format!(
                "expected {} values for {} components, got {}",
                grid.num_nodes() * components,
                components,
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("field values must be finite");
        }
        Ok(Self { grid, components, values })
    }

    pub fn zeros(grid: &GridSpec, components: usize) -> Self {
        Self { grid: grid.clone(), components, values: vec![0.0; grid.num_nodes() * components] }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &GridSpec, components: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.num_nodes() * components);
        for k in 0..grid.num_nodes() {
            let v = f(&grid.point(k));
            assert_eq!(v.len(), components, "sampler returned the wrong number of components");
            values.extend(v);
        }
        Self { grid: grid.clone(), components, values }
    }

    pub fn from_scalar_fn(grid: &GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, 1, |x| vec![f(x)])
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.components..(k + 1) * self.components]
    }

    pub fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        self.values[self.grid.index(i, j) * self.components + c]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * s).collect(), ..self.clone() }
    }

    /// `self − other` on the same grid.
    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        if self.grid != other.grid || self.components != other.components {
            return invalid("fields live on different grids");
        }
        Ok(Self { values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(), ..self.clone() })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise Euclidean norm of the node vectors.
    pub fn pointwise_norm(&self) -> GridFunction {
        let values = self.values.chunks(self.components).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        GridFunction { grid: self.grid.clone(), components: 1, values }
    }

    /// Applies `f` to each node vector, producing `out_components` per node.
    pub fn map_nodes(&self, out_components: usize, f: impl Fn(&[f64], &[f64]) -> Vec<f64>) -> GridFunction {
        let mut values = Vec::with_capacity(self.grid.num_nodes() * out_components);
        for k in 0..self.grid.num_nodes() {
            values.extend(f(&self.grid.point(k), self.node(k)));
        }
        GridFunction { grid: self.grid.clone(), components: out_components, values }
    }

    /// Restriction to the nodes inside `[lo, hi]` (per axis), with cut faces
    /// tagged `Interior`.
    pub fn window(&self, lo: &[f64], hi: &[f64]) -> Result<GridFunction> {
        let g = &self.grid;
        let mut origin = [0usize; 2];
        let mut shape = [1usize; 2];
        for a in 0..g.dim {
            let h = g.spacing(a);
            let i0 = ((lo[a] - g.lower[a]) / h - 1e-9).ceil().max(0.0) as usize;
            let i1 = (((hi[a] - g.lower[a]) / h + 1e-9).floor() as usize).min(g.nodes[a] - 1);
            if i1 < i0 + 2 {
                return invalid(format!("window on axis {a} holds fewer than 3 nodes"));
            }
            origin[a] = i0;
            shape[a] = i1 - i0 + 1;
        }
        Ok(self.sub_box(origin, shape))
    }

    fn sub_box(&self, origin: [usize; 2], shape: [usize; 2]) -> GridFunction {
        let grid = self.grid.sub_box(origin, shape);
        let m = self.components;
        let mut values = Vec::with_capacity(shape[0] * shape[1] * m);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                values.extend_from_slice(self.node(self.grid.index(origin[0] + i, origin[1] + j)));
            }
        }
        GridFunction { grid, components: m, values }
    }

    /// CSV with header `x[,y],component_index,value`, one row per node and
    /// component in storage order, floats with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(if self.grid.dim == 1 { "x,component_index,value\n" } else { "x,y,component_index,value\n" });
        for k in 0..self.grid.num_nodes() {
            let pt = self.grid.point(k);
            for c in 0..self.components {
                for v in &pt {
                    let _ = write!(s, "{},", fmt_f64(*v));
                }
                let _ = writeln!(s, "{c},{}", fmt_f64(self.values[k * self.components + c]));
            }
        }
        s
    }

    /// Parses the output of [`GridFunction::to_csv`] back onto `grid`.
    pub fn from_csv(grid: &GridSpec, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty csv".into()))?;
        let ncoord = grid.dim;
        let expect = if ncoord == 1 { "x,component_index,value" } else { "x,y,component_index,value" };
        if header.trim() != expect {
            return invalid(format!("unexpected csv header {header:?}"));
        }
        let rows: Vec<(usize, f64)> = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(r, l)| {
                let cols: Vec<&str> = l.split(',').collect();
                if cols.len() != ncoord + 2 {
                    return invalid(format!("row {}: expected {} columns", r + 2, ncoord + 2));
                }
                let c = cols[ncoord].trim().parse::<usize>().map_err(|e| Error::InvalidArgument(format!("row {}: {e}", r + 2)))?;
                let v = cols[ncoord + 1].trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("row {}: {e}", r + 2)))?;
                Ok((c, v))
            })
            .collect::<Result<_>>()?;
        let m = rows.iter().map(|(c, _)| c + 1).max().unwrap_or(0);
        if m == 0 || rows.len() != m * grid.num_nodes() {
            return invalid("csv does not match the grid");
        }
        GridFunction::new(grid.clone(), m, rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// Fixed float formatting used by every text artifact: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0.0000000000000000e0".into();
    }
    format!("{v:.16e}")
}

/// Cell-centred discrete gradient, `m·n` components per cell (entry `(c, k)`
/// at `c·n + k`). In 2D each partial derivative is the average of the two
/// forward differences along the cell edges parallel to that axis.
pub fn discrete_gradient(u: &GridFunction) -> GridFunction {
    let g = &u.grid;
    let cg = g.cell_grid();
    let (m, n) = (u.components, g.dim);
    let mut values = vec![0.0; cg.num_nodes() * m * n];
    if n == 1 {
        let h = g.spacing(0);
        for i in 0..g.nodes[0] - 1 {
            for c in 0..m {
                values[i * m + c] = (u.at(i + 1, 0, c) - u.at(i, 0, c)) / h;
            }
        }
    } else {
        let (hx, hy) = (g.spacing(0), g.spacing(1));
        for i in 0..g.nodes[0] - 1 {
            for j in 0..g.nodes[1] - 1 {
                let base = cg.index(i, j) * m * n;
                for c in 0..m {
                    let (u00, u10, u01, u11) = (u.at(i, j, c), u.at(i + 1, j, c), u.at(i, j + 1, c), u.at(i + 1, j + 1, c));
                    values[base + c * n] = ((u10 - u00) + (u11 - u01)) / (2.0 * hx);
                    values[base + c * n + 1] = ((u01 - u00) + (u11 - u10)) / (2.0 * hy);
                }
            }
        }
    }
    GridFunction { grid: cg, components: m * n, values }
}

/// Quadrature rules for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// Field sampled at cell centres: every value weighted by the cell volume.
    Midpoint,
    /// Node field: midpoint rule on corner averages (the trapezoid rule).
    Nodal,
    /// Node field integrated over `∂Ω`: trapezoid along faces in 2D, point
    /// evaluation at both ends in 1D.
    Boundary,
}

/// Componentwise integral of `field`.
pub fn integrate(field: &GridFunction, rule: Quadrature) -> Vec<f64> {
    let g = &field.grid;
    let m = field.components;
    let weights: Vec<f64> = match rule {
        Quadrature::Midpoint => vec![g.cell_volume(); g.num_nodes()],
        Quadrature::Nodal => g.node_weights(),
        Quadrature::Boundary => g.boundary_weights(|_| true),
    };
    let mut out = vec![0.0; m];
    for (k, w) in weights.iter().enumerate() {
        for c in 0..m {
            out[c] += w * field.values[k * m + c];
        }
    }
    out
}

/// Result of [`shift_difference`]: the difference field on `Ω^h` plus the
/// lattice offset of `Ω^h` inside the parent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceField {
    pub field: GridFunction,
    pub origin: [usize; 2],
    pub shape: [usize; 2],
}

/// Converts a real shift vector into lattice steps, rejecting misaligned input.
pub fn lattice_shift(grid: &GridSpec, h: &[f64]) -> Result<[i64; 2]> {
    let mut k = [0i64; 2];
    for a in 0..grid.dim {
        let s = grid.spacing(a);
        let r = (h[a] / s).round();
        if (r * s - h[a]).abs() > 1e-9 * s {
            return invalid(format!("shift component {} is not a multiple of the spacing {s}", h[a]));
        }
        k[a] = r as i64;
    }
    Ok(k)
}

/// Range of lattice indices where the stencil of shift `k` and `order` fits.
fn stencil_range(n: usize, k: i64, order: u8) -> Option<(usize, usize)> {
    let n = n as i64;
    let (lo, hi) = match order {
        1 => ((-k).max(0), n - 1 - k.max(0)),
        _ => (k.abs(), n - 1 - k.abs()),
    };
    (lo <= hi).then_some((lo as usize, hi as usize))
}

/// `Δ_h u = u(·+h) − u` (order 1) or `Δ²_h u = u(·+h) + u(·−h) − 2u` (order 2)
/// on the nodes of `Ω^h` where the whole stencil lies in the lattice.
pub fn shift_difference(u: &GridFunction, shift: [i64; 2], order: u8) -> Result<DifferenceField> {
    let g = &u.grid;
    if order != 1 && order != 2 {
        return invalid(format!("order must be 1 or 2, got {order}"));
    }
    if shift.iter().all(|&k| k == 0) {
        return invalid("shift must be non-zero");
    }
    let mut origin = [0usize; 2];
    let mut shape = [1usize; 2];
    for a in 0..2 {
        if a >= g.dim {
            if shift[a] != 0 {
                return invalid("shift has a component along a missing axis");
            }
            continue;
        }
        if shift[a].unsigned_abs() as usize >= g.nodes[a] - 1 {
            return invalid(format!("|h| along axis {a} is not smaller than the domain width"));
        }
        let (lo, hi) = stencil_range(g.nodes[a], shift[a], order)
            .ok_or_else(|| Error::InvalidArgument(format!("empty shrunken domain along axis {a}")))?;
        origin[a] = lo;
        shape[a] = hi - lo + 1;
    }
    let m = u.components;
    let grid = g.sub_box(origin, shape);
    let mut values = Vec::with_capacity(shape[0] * shape[1] * m);
    let off = |i: usize, d: i64| (i as i64 + d) as usize;
    for i in origin[0]..origin[0] + shape[0] {
        for j in origin[1]..origin[1] + shape[1] {
            let k0 = g.index(i, j);
            let kp = g.index(off(i, shift[0]), off(j, shift[1]));
            if order == 1 {
                for c in 0..m {
                    values.push(u.values[kp * m + c] - u.values[k0 * m + c]);
                }
            } else {
                let km = g.index(off(i, -shift[0]), off(j, -shift[1]));
                for c in 0..m {
                    values.push(u.values[kp * m + c] + u.values[km * m + c] - 2.0 * u.values[k0 * m + c]);
                }
            }
        }
    }
    Ok(DifferenceField { field: GridFunction { grid, components: m, values }, origin, shape })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
    Zero,
}

/// Output of [`extend`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extension {
    pub field: GridFunction,
    /// Largest `|u|` on the reflected face relative to the field scale
    /// (meaningful for odd reflections).
    pub trace_violation: f64,
    pub warning: Option<String>,
}

/// Tolerance on the trace of `u` for odd reflections, relative to `max |u|`.
pub const ODD_TRACE_TOL: f64 = 1e-8;

/// Reflects `u` across `face` onto the doubled box.
///
/// The mirrored copy is `−u` (odd), `u` (even) or `0` (zero); nodes on the
/// face keep their values. The image of the opposite face inherits its tag.
pub fn extend(u: &GridFunction, face: Face, parity: Parity) -> Result<Extension> {
    let g = &u.grid;
    if face.axis >= g.dim {
        return Err(Error::Unsupported(format!("grid has no axis {}", face.axis)));
    }
    let a = face.axis;
    let n = g.nodes[a];
    let mut grid = g.clone();
    grid.nodes[a] = 2 * n - 1;
    let w = g.width(a);
    match face.side {
        Side::Low => {
            grid.lower[a] = g.lower[a] - w;
            grid.tags[a][0] = g.tags[a][1];
        }
        Side::High => {
            grid.upper[a] = g.upper[a] + w;
            grid.tags[a][1] = g.tags[a][0];
        }
    }
    let m = u.components;
    let sign = match parity {
        Parity::Odd => -1.0,
        Parity::Even => 1.0,
        Parity::Zero => 0.0,
    };
    let mut values = vec![0.0; grid.num_nodes() * m];
    for k in 0..grid.num_nodes() {
        let (i, j) = grid.ij(k);
        let t = if a == 0 { i } else { j };
        // Source index along the axis and whether this is a mirrored node.
        let (src, mirrored) = match face.side {
            Side::Low => {
                if t >= n - 1 {
                    (t - (n - 1), false)
                } else {
                    ((n - 1) - t, true)
                }
            }
            Side::High => {
                if t <= n - 1 {
                    (t, false)
                } else {
                    (2 * (n - 1) - t, true)
                }
            }
        };
        let sk = if a == 0 { g.index(src, j) } else { g.index(i, src) };
        let f = if mirrored { sign } else { 1.0 };
        for c in 0..m {
            values[k * m + c] = f * u.values[sk * m + c];
        }
    }
    let scale = u.max_abs().max(f64::MIN_POSITIVE);
    let trace = g.face_nodes(face).iter().flat_map(|&k| u.node(k).iter()).fold(0.0f64, |mx, v| mx.max(v.abs())) / scale;
    let warning = (parity == Parity::Odd && trace > ODD_TRACE_TOL)
        .then(|| format!("odd reflection of a field with non-vanishing trace (relative size {trace:.3e})"));
    Ok(Extension { field: GridFunction { grid, components: m, values }, trace_violation: trace, warning })
}

/// Samples of `σ : (−s, s) → ℝ^N` on the symmetric lattice `t_j = j·dt`,
/// `j = −J..=J`, with a declared parity.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSamples {
    pub dt: f64,
    pub components: usize,
    /// `(2J+1)·components` values, ordered by `j` from `−J` to `J`.
    pub values: Vec<f64>,
    pub parity: Parity,
}

impl SymmetricSamples {
    pub fn from_fn(half_count: usize, dt: f64, components: usize, parity: Parity, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let j = half_count as i64;
        let values = (-j..=j).flat_map(|t| f(t as f64 * dt)).collect();
        Self { dt, components, values, parity }
    }

    fn half_count(&self) -> usize {
        (self.values.len() / self.components - 1) / 2
    }

    fn at(&self, j: i64, c: usize) -> f64 {
        let idx = (j + self.half_count() as i64) as usize;
        self.values[idx * self.components + c]
    }

    /// Largest `|σ(−t) ∓ σ(t)|` relative to `max |σ|` for the declared parity.
    pub fn parity_defect(&self) -> f64 {
        let sign = if self.parity == Parity::Odd { -1.0 } else { 1.0 };
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let jj = self.half_count() as i64;
        let mut d = 0.0f64;
        for j in 0..=jj {
            for c in 0..self.components {
                d = d.max((self.at(-j, c) - sign * self.at(j, c)).abs());
            }
        }
        d / scale
    }
}

/// Reflection residual of the boundary cancellation identity
/// `∫_{−h}^{0} Δ_h(σ·Δ_{−h}τ) dt = ∫_0^h Δ_{−h}(σ·Δ_hτ) dt`, trapezoid rule on
/// the sample lattice, without any parity check.
pub fn cancellation_residual(sigma: &SymmetricSamples, tau: &SymmetricSamples, h: f64) -> Result<f64> {
    if sigma.components != tau.components || sigma.values.len() != tau.values.len() || sigma.dt != tau.dt {
        return invalid("sigma and tau must share the sample lattice");
    }
    let k = (h / sigma.dt).round() as i64;
    if k == 0 || ((k as f64) * sigma.dt - h).abs() > 1e-9 * sigma.dt {
        return invalid("h must be a non-zero multiple of the sample spacing");
    }
    let kk = k.abs();
    let jj = sigma.half_count() as i64;
    if 2 * kk > jj {
        return invalid("need |h| <= s/2");
    }
    let dot = |a: i64, b: i64| -> f64 { (0..sigma.components).map(|c| sigma.at(a, c) * tau.at(b, c)).sum() };
    // σ·Δ_{−h}τ at t and σ·Δ_hτ at t.
    let g_minus = |t: i64| dot(t, t - kk) - dot(t, t);
    let g_plus = |t: i64| dot(t, t + kk) - dot(t, t);
    let f1 = |t: i64| g_minus(t + kk) - g_minus(t);
    let f2 = |t: i64| g_plus(t - kk) - g_plus(t);
    let trap = |f: &dyn Fn(i64) -> f64, a: i64, b: i64| -> f64 {
        let mut s = 0.0;
        for t in a..=b {
            let w = if t == a || t == b { 0.5 } else { 1.0 };
            s += w * f(t);
        }
        s * sigma.dt
    };
    let lhs = trap(&f1, -kk, 0);
    let rhs = trap(&f2, 0, kk);
    Ok((lhs - rhs).abs())
}

/// Parity tolerance for [`cancellation_check`], relative to the sample scale.
pub const PARITY_TOL: f64 = 1e-12;

/// [`cancellation_residual`] for parity-valid input: both fields must declare
/// the same parity (odd or even) and their samples must honour it.
pub fn cancellation_check(sigma: &SymmetricSamples, tau: &SymmetricSamples, h: f64) -> Result<f64> {
    if sigma.parity != tau.parity || sigma.parity == Parity::Zero {
        return invalid(format!("sigma is declared {:?} but tau is declared {:?}", sigma.parity, tau.parity));
    }
    for (name, s) in [("sigma", sigma), ("tau", tau)] {
        let d = s.parity_defect();
        if d > PARITY_TOL {
            return invalid(format!("{name} samples are not {:?} (defect {d:.3e})", s.parity));
        }
    }
    cancellation_residual(sigma, tau, h)
}

/// Output of [`smooth_annulus`].
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothing {
    pub field: GridFunction,
    /// `‖D(Tu)‖_{L¹(annulus)} / ‖Du‖_{L¹(annulus)}`, `None` when `Du = 0` there.
    pub gradient_ratio: Option<f64>,
}

/// Sub-samples per cell and axis used to integrate over balls.
const BALL_SUBSAMPLES: usize = 4;

/// Averages `u` over balls of radius `θ(x) = ½ max(0, min{|x−c| − r′, s′ − |x−c|})`.
///
/// Each ball average integrates the bilinear interpolant of `u` with a
/// symmetric sub-cell point set, so affine fields are reproduced exactly up to
/// rounding. Where `θ(x) = 0` the value of `u` is kept.
pub fn smooth_annulus(u: &GridFunction, center: &[f64], r_prime: f64, s_prime: f64) -> Result<Smoothing> {
    let g = &u.grid;
    if !(0.0 < r_prime && r_prime < s_prime) {
        return invalid("need 0 < r' < s'");
    }
    let dist_to_boundary = (0..g.dim).map(|a| (center[a] - g.lower[a]).min(g.upper[a] - center[a])).fold(f64::INFINITY, f64::min);
    if !(s_prime < dist_to_boundary) {
        return invalid("annulus leaves the domain");
    }
    let m = u.components;
    let hs: Vec<f64> = (0..g.dim).map(|a| g.spacing(a)).collect();
    let sub = BALL_SUBSAMPLES as f64;
    let mut out = u.values.clone();
    let radius = |x: &[f64]| -> f64 { x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() };
    for k in 0..g.num_nodes() {
        let x = g.point(k);
        let r = radius(&x);
        let theta = 0.5 * (r - r_prime).min(s_prime - r).max(0.0);
        if theta <= 0.0 {
            continue;
        }
        let steps: Vec<i64> = (0..g.dim).map(|a| (theta / hs[a] * sub).ceil() as i64 + 1).collect();
        let mut acc = vec![0.0; m];
        let mut count = 0usize;
        let sy = if g.dim == 2 { steps[1] } else { 0 };
        for a in -steps[0]..steps[0] {
            for b in -sy.max(1)..sy.max(1) {
                let mut y = vec![x[0] + (a as f64 + 0.5) / sub * hs[0]];
                if g.dim == 2 {
                    y.push(x[1] + (b as f64 + 0.5) / sub * hs[1]);
                } else if b != 0 {
                    continue;
                }
                let d2: f64 = y.iter().zip(&x).map(|(p, q)| (p - q) * (p - q)).sum();
                if d2 > theta * theta {
                    continue;
                }
                let v = interpolate(u, &y);
                for c in 0..m {
                    acc[c] += v[c];
                }
                count += 1;
            }
        }
        if count > 0 {
            for c in 0..m {
                out[k * m + c] = acc[c] / count as f64;
            }
        }
    }
    let field = GridFunction { grid: g.clone(), components: m, values: out };
    let du = discrete_gradient(u);
    let dw = discrete_gradient(&field);
    let (mut nu, mut nw) = (0.0, 0.0);
    for k in 0..du.grid.num_nodes() {
        let r = radius(&du.grid.point(k));
        if r > r_prime && r < s_prime {
            nu += du.node(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            nw += dw.node(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        }
    }
    Ok(Smoothing { field, gradient_ratio: (nu > 0.0).then(|| nw / nu) })
}

/// Multilinear interpolation of a node field at `x` (clamped to the box).
pub fn interpolate(u: &GridFunction, x: &[f64]) -> Vec<f64> {
    let g = &u.grid;
    let m = u.components;
    let mut idx = [0usize; 2];
    let mut frac = [0.0f64; 2];
    for a in 0..g.dim {
        let t = ((x[a] - g.lower[a]) / g.spacing(a)).clamp(0.0, (g.nodes[a] - 1) as f64);
        let i = (t.floor() as usize).min(g.nodes[a] - 2);
        idx[a] = i;
        frac[a] = t - i as f64;
    }
    let mut out = vec![0.0; m];
    if g.dim == 1 {
        for c in 0..m {
            out[c] = (1.0 - frac[0]) * u.at(idx[0], 0, c) + frac[0] * u.at(idx[0] + 1, 0, c);
        }
    } else {
        let (i, j) = (idx[0], idx[1]);
        let (fx, fy) = (frac[0], frac[1]);
        for c in 0..m {
            out[c] = (1.0 - fx) * (1.0 - fy) * u.at(i, j, c)
                + fx * (1.0 - fy) * u.at(i + 1, j, c)
                + (1.0 - fx) * fy * u.at(i, j + 1, c)
                + fx * fy * u.at(i + 1, j + 1, c);
        }
    }
    out
}

/// Closed-form vector fields used for forcing and boundary data.
#[derive(Clone)]
pub enum FieldExpr {
    Zero,
    Constant(Vec<f64>),
    /// `A x + b` with `A` stored row-major `m × n`.
    Affine { matrix: Vec<f64>, offset: Vec<f64> },
    /// `low` where `x[axis] < at`, `high` elsewhere.
    Step { axis: usize, at: f64, low: Vec<f64>, high: Vec<f64> },
    /// `amplitude · Π_k cos(π·frequency·x_k)` in every component.
    CosProduct { amplitude: f64, frequency: f64, components: usize },
    /// Node values on a specific grid; evaluated at the nearest node.
    Nodal(GridFunction),
    Custom { components: usize, f: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync> },
}

impl std::fmt::Debug for FieldExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldExpr::Zero => write!(f, "Zero"),
            FieldExpr::Constant(v) => write!(f, "Constant({v:?})"),
            FieldExpr::Affine { matrix, offset } => write!(f, "Affine({matrix:?}, {offset:?})"),
            FieldExpr::Step { axis, at, low, high } => write!(f, "Step({axis}, {at}, {low:?}, {high:?})"),
            FieldExpr::CosProduct { amplitude, frequency, .. } => write!(f, "CosProduct({amplitude}, {frequency})"),
            FieldExpr::Nodal(_) => write!(f, "Nodal"),
            FieldExpr::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl FieldExpr {
    pub fn custom(components: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        FieldExpr::Custom { components, f: Arc::new(f) }
    }

    /// Value at `x`, padded or truncated to `m` components.
    pub fn eval(&self, x: &[f64], m: usize) -> Vec<f64> {
        let mut v = match self {
            FieldExpr::Zero => vec![0.0; m],
            FieldExpr::Constant(c) => c.clone(),
            FieldExpr::Affine { matrix, offset } => {
                let n = x.len();
                offset.iter().enumerate().map(|(c, b)| b + (0..n).map(|k| matrix[c * n + k] * x[k]).sum::<f64>()).collect()
            }
            FieldExpr::Step { axis, at, low, high } => {
                if x[*axis] < *at {
                    low.clone()
                } else {
                    high.clone()
                }
            }
            FieldExpr::CosProduct { amplitude, frequency, components } => {
                let v = amplitude * x.iter().map(|t| (std::f64::consts::PI * frequency * t).cos()).product::<f64>();
                vec![v; *components]
            }
            FieldExpr::Nodal(gf) => {
                let g = &gf.grid;
                let mut idx = [0usize; 2];
                for a in 0..g.dim {
                    let t = ((x[a] - g.lower[a]) / g.spacing(a)).round().clamp(0.0, (g.nodes[a] - 1) as f64);
                    idx[a] = t as usize;
                }
                gf.node(g.index(idx[0], idx[1])).to_vec()
            }
            FieldExpr::Custom { f, .. } => f(x),
        };
        v.resize(m, 0.0);
        v
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FieldExpr::Zero)
    }

    /// Samples the expression on every node of `grid`.
    pub fn sample(&self, grid: &GridSpec, m: usize) -> GridFunction {
        GridFunction::from_fn(grid, m, |x| self.eval(x, m))
    }
}
