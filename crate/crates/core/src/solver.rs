//! Minimisation of `F_ε(u) = ∫ F(x,Du) + ε|Du|^q − f·u dx + ∫_{Γ_N} g_N·u`
//! over lattice fields, the ε → 0 continuation and the Lavrentiev gap probe.
//!
//! The energy uses piecewise-linear gradients on the four corner triangles of
//! every cell (each weighted by a quarter of the cell volume, `F` evaluated
//! at the cell centre). Their average is the cell-centred gradient of
//! [`crate::fields::discrete_gradient`], and unlike a single midpoint
//! gradient the rule has no zero-energy checkerboard modes.

use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{BoundaryTag, Face, FieldExpr, GridFunction, GridSpec};
use crate::integrands::IntegrandSpec;

/// μ used internally when an integrand declares `μ = 0`.
pub const MU_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Dirichlet,
    Neumann,
    /// Per-face conditions taken from the grid tags.
    Mixed,
}

/// A boundary value problem on a lattice.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub integrand: IntegrandSpec,
    pub grid: GridSpec,
    pub forcing: FieldExpr,
    pub dirichlet_data: FieldExpr,
    pub neumann_data: FieldExpr,
    pub mode: BoundaryMode,
}

impl ProblemSpec {
    /// Problem with zero forcing and zero boundary data.
    pub fn new(integrand: IntegrandSpec, grid: GridSpec, mode: BoundaryMode) -> Self {
        Self { integrand, grid, forcing: FieldExpr::Zero, dirichlet_data: FieldExpr::Zero, neumann_data: FieldExpr::Zero, mode }
    }

    pub fn with_forcing(mut self, f: FieldExpr) -> Self {
        self.forcing = f;
        self
    }

    pub fn with_dirichlet(mut self, g: FieldExpr) -> Self {
        self.dirichlet_data = g;
        self
    }

    pub fn with_neumann(mut self, g: FieldExpr) -> Self {
        self.neumann_data = g;
        self
    }

    pub fn components(&self) -> usize {
        self.integrand.params.m
    }

    pub fn face_is_dirichlet(&self, face: Face) -> bool {
        match self.mode {
            BoundaryMode::Dirichlet => true,
            BoundaryMode::Neumann => false,
            BoundaryMode::Mixed => self.grid.tag(face) == BoundaryTag::Dirichlet,
        }
    }

    fn has_dirichlet_face(&self) -> bool {
        self.grid.faces().into_iter().any(|f| self.face_is_dirichlet(f))
    }

    /// `∫_Ω f − ∫_{Γ_N} g_N` per component with the solver's quadrature, plus
    /// the scale it is compared against. `None` when some face is Dirichlet.
    pub fn compatibility_residual(&self) -> Option<(Vec<f64>, f64)> {
        if self.has_dirichlet_face() {
            return None;
        }
        let m = self.components();
        let wn = self.grid.node_weights();
        let wb = self.grid.boundary_weights(|_| true);
        let mut res = vec![0.0; m];
        let mut scale: f64 = 1.0;
        let (mut af, mut ag) = (vec![0.0; m], vec![0.0; m]);
        for k in 0..self.grid.num_nodes() {
            let x = self.grid.point(k);
            let f = self.forcing.eval(&x, m);
            let g = if wb[k] > 0.0 { self.neumann_data.eval(&x, m) } else { vec![0.0; m] };
            for c in 0..m {
                res[c] += wn[k] * f[c] - wb[k] * g[c];
                af[c] += wn[k] * f[c].abs();
                ag[c] += wb[k] * g[c].abs();
            }
        }
        for c in 0..m {
            scale = scale.max(af[c]).max(ag[c]);
        }
        Some((res, scale))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.integrand.params.validate()?;
        if self.integrand.params.n != self.grid.dim {
            return invalid(format!("integrand is {}-dimensional but the grid is {}-dimensional", self.integrand.params.n, self.grid.dim));
        }
        if self.mode == BoundaryMode::Mixed {
            for face in self.grid.faces() {
                if self.grid.tag(face) == BoundaryTag::Interior {
                    return invalid(format!("mixed mode needs a Dirichlet or Neumann tag on face {face:?}"));
                }
            }
        }
        if let Some((res, scale)) = self.compatibility_residual() {
            if res.iter().any(|r| r.abs() > 1e-10 * scale) {
                return invalid(format!("Neumann data violate the compatibility condition: residual {res:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon0: f64,
    pub rho: f64,
    pub k_max: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub armijo: f64,
    pub shrink: f64,
    /// Gap tolerance relative to `max(1, |competitor energy|)`.
    pub gap_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon0: 0.1,
            rho: 0.5,
            k_max: 12,
            max_iterations: 20_000,
            gradient_tolerance: 1e-8,
            armijo: 1e-4,
            shrink: 0.5,
            gap_tolerance: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon0 > 0.0) || !(self.rho > 0.0 && self.rho < 1.0) {
            return invalid("need epsilon0 > 0 and rho in (0,1)");
        }
        if !(self.gradient_tolerance > 0.0 && self.armijo > 0.0 && self.armijo < 1.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return invalid("tolerances must be positive and line-search factors in (0,1)");
        }
        if !(self.gap_tolerance > 0.0) || self.max_iterations == 0 {
            return invalid("gap tolerance and iteration budget must be positive");
        }
        Ok(())
    }

    /// `ε_k = ε₀ ρ^k` for `k = 0..=k_max`.
    pub fn schedule(&self) -> Vec<f64> {
        (0..=self.k_max).map(|k| self.epsilon0 * self.rho.powi(k as i32)).collect()
    }
}

/// Outcome for one value of ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStep {
    pub epsilon: f64,
    /// `F_ε(u_ε)`.
    pub energy: f64,
    /// `ε ∫ |Du_ε|^q`.
    pub penalty: f64,
    /// `F_ε(u_ε) − ε ∫ |Du_ε|^q`.
    pub relaxed: f64,
    pub iterations: usize,
    pub el_residual: f64,
    pub converged: bool,
    /// Discrete `W^{1,p}` distance to the previous iterate of the schedule.
    pub cauchy_increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub final_energy: f64,
    pub regularized_energy_trace: Vec<f64>,
    pub epsilon_trace: Vec<EpsilonStep>,
    pub el_residual: f64,
    pub iterations: Vec<usize>,
    pub stress_qprime_norm: f64,
    pub converged: bool,
    pub relaxed_estimate: f64,
    pub richardson_estimate: Option<f64>,
    pub richardson_order: Option<f64>,
    /// Slope of `log(ε ∫|Du_ε|^q)` against `log(1/ε)`; negative means decay.
    pub penalty_decay_slope: Option<f64>,
    pub lavrentiev_flag: bool,
    pub mu_shifted: bool,
    pub notes: Vec<String>,
}

/// Precomputed lattice data for one energy functional.
struct Assembly {
    spec: IntegrandSpec,
    grid: GridSpec,
    m: usize,
    n: usize,
    h: [f64; 2],
    centers: Vec<[f64; 2]>,
    corners: Vec<[usize; 4]>,
    free: Vec<bool>,
    load: Vec<f64>,
    dirichlet: Vec<f64>,
    gauge: bool,
    q: f64,
}

impl Assembly {
    fn new(problem: &ProblemSpec, spec: IntegrandSpec) -> Self {
        let grid = problem.grid.clone();
        let m = problem.components();
        let n = grid.dim;
        let nn = grid.num_nodes();
        let h = [grid.spacing(0), if n == 2 { grid.spacing(1) } else { 1.0 }];
        let mut centers = Vec::with_capacity(grid.num_cells());
        let mut corners = Vec::with_capacity(grid.num_cells());
        if n == 1 {
            for i in 0..grid.nodes[0] - 1 {
                centers.push([0.5 * (grid.coord(0, i) + grid.coord(0, i + 1)), 0.0]);
                corners.push([i, i + 1, 0, 0]);
            }
        } else {
            for i in 0..grid.nodes[0] - 1 {
                for j in 0..grid.nodes[1] - 1 {
                    centers.push([0.5 * (grid.coord(0, i) + grid.coord(0, i + 1)), 0.5 * (grid.coord(1, j) + grid.coord(1, j + 1))]);
                    corners.push([grid.index(i, j), grid.index(i + 1, j), grid.index(i, j + 1), grid.index(i + 1, j + 1)]);
                }
            }
        }
        let mut free = vec![true; nn * m];
        let mut dirichlet = vec![0.0; nn * m];
        for face in grid.faces() {
            if !problem.face_is_dirichlet(face) {
                continue;
            }
            for k in grid.face_nodes(face) {
                let g = problem.dirichlet_data.eval(&grid.point(k), m);
                for c in 0..m {
                    free[k * m + c] = false;
                    dirichlet[k * m + c] = g[c];
                }
            }
        }
        let wn = grid.node_weights();
        let wb = grid.boundary_weights(|f| !problem.face_is_dirichlet(f));
        let mut load = vec![0.0; nn * m];
        for k in 0..nn {
            let x = grid.point(k);
            let f = problem.forcing.eval(&x, m);
            let g = if wb[k] > 0.0 { problem.neumann_data.eval(&x, m) } else { vec![0.0; m] };
            for c in 0..m {
                load[k * m + c] = wn[k] * f[c] - wb[k] * g[c];
            }
        }
        let gauge = free.iter().all(|&b| b);
        let q = spec.params.q;
        Self { spec, grid, m, n, h, centers, corners, free, load, dirichlet, gauge, q }
    }

    fn len(&self) -> usize {
        self.free.len()
    }

    /// Visits every quadrature gradient: `visit(x, z, weight, cell, triangle)`.
    fn for_each_gradient(&self, u: &[f64], z: &mut [f64], mut visit: impl FnMut(&[f64], &[f64], f64, usize, usize)) {
        let (m, n) = (self.m, self.n);
        if n == 1 {
            let h = self.h[0];
            for (cell, cn) in self.corners.iter().enumerate() {
                for c in 0..m {
                    z[c] = (u[cn[1] * m + c] - u[cn[0] * m + c]) / h;
                }
                visit(&self.centers[cell][..1], z, h, cell, 0);
            }
            return;
        }
        let (hx, hy) = (self.h[0], self.h[1]);
        let w = 0.25 * hx * hy;
        for (cell, cn) in self.corners.iter().enumerate() {
            for t in 0..4 {
                let (tx, ty) = (t & 1, t >> 1);
                for c in 0..m {
                    let val = |a: usize, b: usize| u[cn[a + 2 * b] * m + c];
                    z[c * 2] = (val(1, ty) - val(0, ty)) / hx;
                    z[c * 2 + 1] = (val(tx, 1) - val(tx, 0)) / hy;
                }
                visit(&self.centers[cell][..2], z, w, cell, t);
            }
        }
    }

    /// Energy and its gradient (zero on pinned entries, mean-free under gauge).
    fn energy_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let (m, n) = (self.m, self.n);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut z = vec![0.0; m * n];
        let mut gz = vec![0.0; m * n];
        let mut energy = 0.0;
        let (hx, hy) = (self.h[0], self.h[1]);
        let corners = &self.corners;
        self.for_each_gradient(u, &mut z, |x, z, w, cell, t| {
            energy += w * self.spec.value_and_gradient(x, z, &mut gz);
            let cn = &corners[cell];
            if n == 1 {
                for c in 0..m {
                    let s = w * gz[c] / hx;
                    grad[cn[1] * m + c] += s;
                    grad[cn[0] * m + c] -= s;
                }
            } else {
                let (tx, ty) = (t & 1, t >> 1);
                for c in 0..m {
                    let sx = w * gz[c * 2] / hx;
                    let sy = w * gz[c * 2 + 1] / hy;
                    grad[cn[1 + 2 * ty] * m + c] += sx;
                    grad[cn[2 * ty] * m + c] -= sx;
                    grad[cn[tx + 2] * m + c] += sy;
                    grad[cn[tx] * m + c] -= sy;
                }
            }
        });
        for i in 0..u.len() {
            energy -= self.load[i] * u[i];
            grad[i] -= self.load[i];
        }
        self.project(grad);
        energy
    }

    fn project(&self, v: &mut [f64]) {
        for (vi, &f) in v.iter_mut().zip(&self.free) {
            if !f {
                *vi = 0.0;
            }
        }
        if self.gauge {
            let nn = self.grid.num_nodes() as f64;
            for c in 0..self.m {
                let mean = v.iter().skip(c).step_by(self.m).sum::<f64>() / nn;
                v.iter_mut().skip(c).step_by(self.m).for_each(|x| *x -= mean);
            }
        }
    }

    /// `∫ φ(x, Du)` with the energy quadrature.
    fn integrate_gradient(&self, u: &[f64], mut phi: impl FnMut(&[f64], &[f64]) -> f64) -> f64 {
        let mut z = vec![0.0; self.m * self.n];
        let mut s = 0.0;
        self.for_each_gradient(u, &mut z, |x, z, w, _, _| s += w * phi(x, z));
        s
    }

    /// Subtracts the trapezoid-weighted mean of each component.
    fn fix_gauge(&self, u: &mut [f64]) {
        let w = self.grid.node_weights();
        let vol: f64 = w.iter().sum();
        for c in 0..self.m {
            let mean: f64 = w.iter().enumerate().map(|(k, wk)| wk * u[k * self.m + c]).sum::<f64>() / vol;
            u.iter_mut().skip(c).step_by(self.m).for_each(|x| *x -= mean);
        }
    }

    fn initial(&self, warm: Option<&GridFunction>) -> Result<Vec<f64>> {
        let mut u = match warm {
            Some(w) => {
                if w.grid != self.grid || w.components != self.m {
                    return invalid("warm start does not match the problem grid");
                }
                w.values.clone()
            }
            None => vec![0.0; self.len()],
        };
        for i in 0..u.len() {
            if !self.free[i] {
                u[i] = self.dirichlet[i];
            }
        }
        Ok(u)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Trial {
    alpha: f64,
    energy: f64,
    grad: Vec<f64>,
}

/// Armijo backtracking with secant refinement toward `φ'(α) ≈ 0`.
fn line_search(asm: &Assembly, u: &[f64], d: &[f64], e0: f64, gd0: f64, alpha0: f64, cfg: &SolverConfig, trial_u: &mut [f64], trial_g: &mut [f64]) -> Option<Trial> {
    let noise = 1e-13 * e0.abs();
    let mut lo = (0.0, gd0);
    let mut lo_prev: Option<(f64, f64)> = None;
    let mut hi: Option<(f64, Option<f64>)> = None;
    let mut best: Option<Trial> = None;
    let mut alpha = alpha0;
    for _ in 0..60 {
        for i in 0..u.len() {
            trial_u[i] = u[i] + alpha * d[i];
        }
        let e = asm.energy_grad(trial_u, trial_g);
        let gd = dot(trial_g, d);
        let armijo = e <= e0 + cfg.armijo * alpha * gd0;
        let flat = e <= e0 + noise && gd.abs() <= 0.5 * gd0.abs();
        if !e.is_finite() || !(armijo || flat) {
            hi = Some((alpha, None));
            alpha = lo.0 + cfg.shrink * (alpha - lo.0);
            if best.is_some() && alpha - lo.0 < 1e-3 * lo.0 {
                break;
            }
            continue;
        }
        if best.as_ref().map_or(true, |b| e < b.energy) {
            best = Some(Trial { alpha, energy: e, grad: trial_g.to_vec() });
        }
        if gd.abs() <= 0.1 * gd0.abs() {
            break;
        }
        if gd < 0.0 {
            lo_prev = Some(lo);
            lo = (alpha, gd);
        } else {
            hi = Some((alpha, Some(gd)));
        }
        let secant = |a: (f64, f64), b: (f64, f64)| a.0 - a.1 * (b.0 - a.0) / (b.1 - a.1);
        alpha = match hi {
            None => {
                let prev = lo_prev.unwrap_or((0.0, gd0));
                let s = secant(prev, lo);
                if s.is_finite() && s > lo.0 {
                    s.clamp(1.5 * lo.0, 4.0 * lo.0)
                } else {
                    4.0 * lo.0
                }
            }
            Some((ha, Some(hd))) => {
                let s = secant(lo, (ha, hd));
                let span = ha - lo.0;
                if s.is_finite() {
                    s.clamp(lo.0 + 0.1 * span, ha - 0.1 * span)
                } else {
                    lo.0 + 0.5 * span
                }
            }
            Some((ha, None)) => lo.0 + 0.5 * (ha - lo.0),
        };
    }
    best
}

struct NcgOutcome {
    iterations: usize,
    converged: bool,
    residual: f64,
    energy: f64,
}

/// Iterations between refreshes of the preconditioner.
const PRECONDITIONER_REFRESH: usize = 25;

/// Scalar stiffness matrix `Σ w·a·BᵀB` built from the secant modulus
/// `a = |∂_zF|/|z|` of every quadrature gradient, factored by sparse Cholesky.
/// Pinned nodes are decoupled; a pure Neumann problem gets a small diagonal
/// shift. Applied componentwise.
struct Preconditioner {
    factor: CscCholesky<f64>,
}

impl Preconditioner {
    fn build(asm: &Assembly, u: &[f64]) -> Option<Self> {
        let (m, n) = (asm.m, asm.n);
        let nn = asm.grid.num_nodes();
        let mut moduli = Vec::with_capacity(asm.corners.len() * if n == 1 { 1 } else { 4 });
        let mut z = vec![0.0; m * n];
        let mut g = vec![0.0; m * n];
        asm.for_each_gradient(u, &mut z, |x, z, _, _, _| {
            let zn = dot(z, z).sqrt();
            let a = if zn > 1e-12 {
                asm.spec.value_and_gradient(x, z, &mut g);
                dot(&g, &g).sqrt() / zn
            } else {
                let mut probe = vec![0.0; z.len()];
                probe[0] = 1e-6;
                asm.spec.gradient(x, &probe, &mut g);
                g[0] / 1e-6
            };
            moduli.push(a);
        });
        let amax = moduli.iter().cloned().fold(0.0f64, f64::max);
        if !(amax > 0.0 && amax.is_finite()) {
            return None;
        }
        let floor = 1e-10 * amax;
        let pinned: Vec<bool> = (0..nn).map(|k| !asm.free[k * m]).collect();
        let mut coo = CooMatrix::new(nn, nn);
        let mut push = |i: usize, j: usize, v: f64| {
            let v = if pinned[i] || pinned[j] { 0.0 } else { v };
            coo.push(i, j, v);
        };
        let (hx, hy) = (asm.h[0], asm.h[1]);
        let mut q = 0usize;
        let mut diag_max: f64 = 0.0;
        for cn in &asm.corners {
            let ts = if n == 1 { 1 } else { 4 };
            for t in 0..ts {
                let a = moduli[q].max(floor);
                q += 1;
                let w = if n == 1 { hx } else { 0.25 * hx * hy };
                let mut edge = |i: usize, j: usize, h: f64| {
                    let c = w * a / (h * h);
                    diag_max = diag_max.max(c);
                    push(i, i, c);
                    push(j, j, c);
                    push(i, j, -c);
                    push(j, i, -c);
                };
                if n == 1 {
                    edge(cn[0], cn[1], hx);
                } else {
                    let (tx, ty) = (t & 1, t >> 1);
                    edge(cn[2 * ty], cn[1 + 2 * ty], hx);
                    edge(cn[tx], cn[tx + 2], hy);
                }
            }
        }
        let shift = if asm.gauge { 1e-9 * diag_max } else { 0.0 };
        for k in 0..nn {
            coo.push(k, k, if pinned[k] { diag_max.max(1.0) } else { shift });
        }
        let csc = CscMatrix::from(&coo);
        CscCholesky::factor(&csc).ok().map(|factor| Self { factor })
    }

    fn apply(&self, asm: &Assembly, r: &[f64], out: &mut [f64]) {
        let m = asm.m;
        let nn = r.len() / m;
        let rhs = DMatrix::from_fn(nn, m, |k, c| r[k * m + c]);
        let sol = self.factor.solve(&rhs);
        for k in 0..nn {
            for c in 0..m {
                out[k * m + c] = sol[(k, c)];
            }
        }
        asm.project(out);
    }
}

/// Preconditioned Polak–Ribière⁺ nonlinear conjugate gradients. The
/// preconditioner is rebuilt periodically and after failed line searches,
/// each time restarting the conjugate sequence.
fn ncg(asm: &Assembly, u: &mut [f64], cfg: &SolverConfig) -> NcgOutcome {
    let len = u.len();
    let mut g = vec![0.0; len];
    let mut e = asm.energy_grad(u, &mut g);
    let mut s = vec![0.0; len];
    let mut pre = Preconditioner::build(asm, u);
    let precondition = |pre: &Option<Preconditioner>, g: &[f64], s: &mut [f64]| match pre {
        Some(p) => p.apply(asm, g, s),
        None => s.copy_from_slice(g),
    };
    precondition(&pre, &g, &mut s);
    let mut gs = dot(&g, &s);
    let mut d: Vec<f64> = s.iter().map(|v| -v).collect();
    let mut gd = -gs;
    let mut last_step: Option<(f64, f64)> = None;
    let mut trial_u = vec![0.0; len];
    let mut trial_g = vec![0.0; len];
    let mut fresh = true;
    let mut since_refresh = 0usize;
    let mut failures = 0usize;
    for it in 0..cfg.max_iterations {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= cfg.gradient_tolerance {
            return NcgOutcome { iterations: it, converged: true, residual: gnorm, energy: e };
        }
        let alpha0 = match last_step {
            Some((a, gd_prev)) if !fresh => (a * gd_prev / gd).min(1e3 * a),
            _ => 1.0,
        };
        let Some(t) = line_search(asm, u, &d, e, gd, alpha0, cfg, &mut trial_u, &mut trial_g) else {
            failures += 1;
            if fresh && failures > 2 {
                return NcgOutcome { iterations: it, converged: false, residual: gnorm, energy: e };
            }
            pre = if failures > 1 { None } else { Preconditioner::build(asm, u) };
            precondition(&pre, &g, &mut s);
            gs = dot(&g, &s);
            d.iter_mut().zip(&s).for_each(|(di, si)| *di = -si);
            gd = -gs;
            fresh = true;
            since_refresh = 0;
            continue;
        };
        failures = 0;
        for i in 0..len {
            u[i] += t.alpha * d[i];
        }
        e = t.energy;
        let g_new = t.grad;
        since_refresh += 1;
        let refresh = since_refresh >= PRECONDITIONER_REFRESH;
        if refresh {
            pre = Preconditioner::build(asm, u);
            since_refresh = 0;
        }
        let mut s_new = vec![0.0; len];
        precondition(&pre, &g_new, &mut s_new);
        let gs_new = dot(&g_new, &s_new);
        let mut beta = ((gs_new - dot(&g_new, &s)) / gs).max(0.0);
        if refresh || !beta.is_finite() {
            beta = 0.0;
        }
        last_step = Some((t.alpha, gd));
        for i in 0..len {
            d[i] = -s_new[i] + beta * d[i];
        }
        gd = dot(&g_new, &d);
        fresh = beta == 0.0;
        if gd >= 0.0 {
            d.iter_mut().zip(&s_new).for_each(|(di, si)| *di = -si);
            gd = -gs_new;
            fresh = true;
        }
        g = g_new;
        s = s_new;
        gs = gs_new;
    }
    let gnorm = dot(&g, &g).sqrt();
    NcgOutcome { iterations: cfg.max_iterations, converged: gnorm <= cfg.gradient_tolerance, residual: gnorm, energy: e }
}

/// Integrand actually minimised: `μ` floored at [`MU_FLOOR`].
fn smooth_integrand(problem: &ProblemSpec) -> (IntegrandSpec, bool) {
    if problem.integrand.params.mu == 0.0 {
        (problem.integrand.with_mu(MU_FLOOR), true)
    } else {
        (problem.integrand.clone(), false)
    }
}

fn q_prime(q: f64) -> f64 {
    q / (q - 1.0)
}

/// `(∫ |∂_zF(x,Du)|^{q′})^{1/q′}`.
fn stress_norm(asm: &Assembly, spec: &IntegrandSpec, u: &[f64]) -> f64 {
    let qp = q_prime(spec.params.q);
    let mut g = vec![0.0; asm.m * asm.n];
    asm.integrate_gradient(u, |x, z| {
        spec.gradient(x, z, &mut g);
        dot(&g, &g).sqrt().powf(qp)
    })
    .powf(1.0 / qp)
}

/// Discrete `W^{1,p}` norm.
fn w1p_norm(asm: &Assembly, v: &[f64], p: f64) -> f64 {
    let w = asm.grid.node_weights();
    let m = asm.m;
    let lp: f64 = (0..w.len()).map(|k| w[k] * dot(&v[k * m..(k + 1) * m], &v[k * m..(k + 1) * m]).sqrt().powf(p)).sum();
    let dp = asm.integrate_gradient(v, |_, z| dot(z, z).sqrt().powf(p));
    (lp + dp).powf(1.0 / p)
}

fn single_solve(problem: &ProblemSpec, base: &IntegrandSpec, epsilon: f64, cfg: &SolverConfig, u0: Vec<f64>) -> Result<(Vec<f64>, EpsilonStep, Assembly)> {
    let spec = base.regularized(epsilon)?;
    let asm = Assembly::new(problem, spec);
    let mut u = u0;
    let out = ncg(&asm, &mut u, cfg);
    if asm.gauge {
        asm.fix_gauge(&mut u);
    }
    let q = asm.q;
    let penalty = epsilon * asm.integrate_gradient(&u, |_, z| dot(z, z).powf(q / 2.0));
    let step = EpsilonStep {
        epsilon,
        energy: out.energy,
        penalty,
        relaxed: out.energy - penalty,
        iterations: out.iterations,
        el_residual: out.residual,
        converged: out.converged,
        cauchy_increment: None,
    };
    Ok((u, step, asm))
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn build_report(problem: &ProblemSpec, asm: &Assembly, base: &IntegrandSpec, u: &[f64], steps: Vec<EpsilonStep>, mu_shifted: bool, rho: f64) -> SolveReport {
    let last = steps.last().expect("at least one step").clone();
    let mut notes = Vec::new();
    if mu_shifted {
        notes.push(format!("mu = 0 replaced by {MU_FLOOR:e} for a differentiable energy"));
    }
    let (richardson_estimate, richardson_order) = if steps.len() >= 3 {
        let r: Vec<f64> = steps[steps.len() - 3..].iter().map(|s| s.relaxed).collect();
        let (d1, d2) = (r[1] - r[0], r[2] - r[1]);
        if d1 != 0.0 && d2 != 0.0 && d1.signum() == d2.signum() && d2.abs() < d1.abs() {
            let order = (d1 / d2).ln() / (1.0 / rho).ln();
            (Some(r[2] - d2 * d2 / (d2 - d1)), Some(order))
        } else {
            (Some(r[2]), None)
        }
    } else {
        (None, None)
    };
    let positive: Vec<&EpsilonStep> = steps.iter().filter(|s| s.penalty > 0.0).collect();
    let penalty_decay_slope = if positive.len() >= 3 {
        let xs: Vec<f64> = positive.iter().map(|s| (1.0 / s.epsilon).ln()).collect();
        let ys: Vec<f64> = positive.iter().map(|s| s.penalty.ln()).collect();
        ls_slope(&xs, &ys)
    } else {
        None
    };
    let lavrentiev_flag = penalty_decay_slope.is_some_and(|s| s >= 0.0);
    if lavrentiev_flag {
        notes.push("epsilon * int |Du|^q does not decay along the schedule".into());
    }
    let converged = steps.iter().all(|s| s.converged);
    if !converged {
        notes.push("at least one minimisation stopped before reaching the gradient tolerance".into());
    }
    let _ = problem;
    SolveReport {
        final_energy: last.energy,
        regularized_energy_trace: steps.iter().map(|s| s.energy).collect(),
        el_residual: last.el_residual,
        iterations: steps.iter().map(|s| s.iterations).collect(),
        stress_qprime_norm: stress_norm(asm, base, u),
        converged,
        relaxed_estimate: last.relaxed,
        richardson_estimate,
        richardson_order,
        penalty_decay_slope,
        lavrentiev_flag,
        mu_shifted,
        notes,
        epsilon_trace: steps,
    }
}

/// Minimises `F_ε` for one `ε > 0`.
pub fn minimize_regularized(problem: &ProblemSpec, epsilon: f64, config: &SolverConfig, warm_start: Option<&GridFunction>) -> Result<(GridFunction, SolveReport)> {
    problem.validate()?;
    config.validate()?;
    let (base, shifted) = smooth_integrand(problem);
    let u0 = Assembly::new(problem, base.clone()).initial(warm_start)?;
    let (u, step, asm) = single_solve(problem, &base, epsilon, config, u0)?;
    let report = build_report(problem, &asm, &base, &u, vec![step], shifted, config.rho);
    Ok((GridFunction { grid: problem.grid.clone(), components: problem.components(), values: u }, report))
}

/// Runs the ε schedule with warm starts.
pub fn relax_continuation(problem: &ProblemSpec, config: &SolverConfig) -> Result<(GridFunction, SolveReport)> {
    problem.validate()?;
    config.validate()?;
    let (base, shifted) = smooth_integrand(problem);
    let p = base.params.p;
    let mut u = Assembly::new(problem, base.clone()).initial(None)?;
    let mut steps: Vec<EpsilonStep> = Vec::new();
    let mut last_asm = None;
    for eps in config.schedule() {
        let prev = u.clone();
        let (next, mut step, asm) = single_solve(problem, &base, eps, config, u)?;
        if !steps.is_empty() {
            let diff: Vec<f64> = next.iter().zip(&prev).map(|(a, b)| a - b).collect();
            step.cauchy_increment = Some(w1p_norm(&asm, &diff, p));
        }
        steps.push(step);
        u = next;
        last_asm = Some(asm);
    }
    let asm = last_asm.expect("schedule is never empty");
    let report = build_report(problem, &asm, &base, &u, steps, shifted, config.rho);
    Ok((GridFunction { grid: problem.grid.clone(), components: problem.components(), values: u }, report))
}

fn conforming(problem: &ProblemSpec, u: &GridFunction) -> Result<()> {
    if u.grid != problem.grid || u.components != problem.components() {
        return invalid("field does not live on the problem grid");
    }
    Ok(())
}

/// Dual norm of the discrete weak Euler–Lagrange system over test fields
/// vanishing on Dirichlet nodes (and mean-free under the Neumann gauge),
/// together with `‖∂_zF(x,Du)‖_{L^{q′}}`.
pub fn el_residual(problem: &ProblemSpec, u: &GridFunction) -> Result<(f64, f64)> {
    conforming(problem, u)?;
    let asm = Assembly::new(problem, problem.integrand.clone());
    let mut g = vec![0.0; asm.len()];
    asm.energy_grad(&u.values, &mut g);
    Ok((dot(&g, &g).sqrt(), stress_norm(&asm, &problem.integrand, &u.values)))
}

/// Discrete energy `∫F(x,Du) − f·u + ∫_{Γ_N} g_N·u` without regularisation.
pub fn discrete_energy(problem: &ProblemSpec, u: &GridFunction) -> Result<f64> {
    conforming(problem, u)?;
    let asm = Assembly::new(problem, problem.integrand.clone());
    let mut g = vec![0.0; asm.len()];
    Ok(asm.energy_grad(&u.values, &mut g))
}

/// Discrete `F_ε(u)` (used by the convexity certificate).
pub fn regularized_energy(problem: &ProblemSpec, epsilon: f64, u: &GridFunction) -> Result<f64> {
    conforming(problem, u)?;
    let (base, _) = smooth_integrand(problem);
    let asm = Assembly::new(problem, base.regularized(epsilon)?);
    let mut g = vec![0.0; asm.len()];
    Ok(asm.energy_grad(&u.values, &mut g))
}

/// Discrete `∫|Du|^p` with the energy quadrature.
pub fn gradient_power_integral(u: &GridFunction, p: f64) -> Result<f64> {
    let params = crate::integrands::GrowthParams::new(2.0, 2.0, u.grid.dim, u.components);
    let problem = ProblemSpec::new(IntegrandSpec::p_energy(params)?, u.grid.clone(), BoundaryMode::Neumann);
    let asm = Assembly::new(&problem, problem.integrand.clone());
    Ok(asm.integrate_gradient(&u.values, |_, z| dot(z, z).sqrt().powf(p)))
}

/// A `W^{1,p}` field given in closed form.
pub trait ClosedFormField: Send + Sync {
    fn components(&self) -> usize;
    fn value(&self, x: &[f64]) -> Vec<f64>;
    /// Row-major `m × n` gradient.
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Points near which quadrature is always refined to the finest level.
    fn singular_points(&self) -> Vec<Vec<f64>> {
        Vec::new()
    }
}

#[derive(Clone)]
pub enum Competitor {
    Grid(GridFunction),
    ClosedForm(Arc<dyn ClosedFormField>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub relaxed_estimate: f64,
    /// `None` when the competitor energy diverges under refinement.
    pub competitor_energy: Option<f64>,
    pub gap_indicator: Option<f64>,
    pub tolerance: f64,
    pub gap_detected: bool,
    pub competitor_infinite: bool,
    pub solve: SolveReport,
    pub notes: Vec<String>,
}

const GL3: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

/// Result of [`adaptive_integral`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveIntegral {
    pub value: f64,
    pub diverges: bool,
    /// Estimates at the successive refinement caps.
    pub last_increment: f64,
}

struct Adapt<'a> {
    f: &'a dyn Fn(&[f64]) -> f64,
    dim: usize,
    singular: &'a [Vec<f64>],
    max_depth: usize,
}

impl Adapt<'_> {
    fn rule(&self, lo: &[f64; 2], hi: &[f64; 2]) -> f64 {
        let half = [(hi[0] - lo[0]) / 2.0, (hi[1] - lo[1]) / 2.0];
        let mid = [(hi[0] + lo[0]) / 2.0, (hi[1] + lo[1]) / 2.0];
        let mut s = 0.0;
        if self.dim == 1 {
            for (t, w) in GL3 {
                let v = (self.f)(&[mid[0] + half[0] * t]);
                if v.is_finite() {
                    s += w * v;
                }
            }
            return s * half[0];
        }
        for (t, w) in GL3 {
            for (r, wr) in GL3 {
                let v = (self.f)(&[mid[0] + half[0] * t, mid[1] + half[1] * r]);
                if v.is_finite() {
                    s += w * wr * v;
                }
            }
        }
        s * half[0] * half[1]
    }

    fn children(&self, lo: &[f64; 2], hi: &[f64; 2]) -> Vec<([f64; 2], [f64; 2])> {
        let mid = [(hi[0] + lo[0]) / 2.0, (hi[1] + lo[1]) / 2.0];
        if self.dim == 1 {
            return vec![(*lo, [mid[0], hi[1]]), ([mid[0], lo[1]], *hi)];
        }
        vec![(*lo, mid), ([mid[0], lo[1]], [hi[0], mid[1]]), ([lo[0], mid[1]], [mid[0], hi[1]]), (mid, *hi)]
    }

    fn touches_singular(&self, lo: &[f64; 2], hi: &[f64; 2]) -> bool {
        self.singular.iter().any(|p| (0..self.dim).all(|a| p[a] >= lo[a] - 1e-14 && p[a] <= hi[a] + 1e-14))
    }

    fn run(&self, lo: [f64; 2], hi: [f64; 2], est: f64, depth: usize, tol: f64) -> f64 {
        let kids = self.children(&lo, &hi);
        let parts: Vec<f64> = kids.iter().map(|(a, b)| self.rule(a, b)).collect();
        let sum: f64 = parts.iter().sum();
        if depth >= self.max_depth {
            return sum;
        }
        let forced = self.touches_singular(&lo, &hi);
        if !forced && (sum - est).abs() <= tol {
            return sum;
        }
        let share = tol / kids.len() as f64;
        kids.iter().zip(parts).map(|((a, b), e)| self.run(*a, *b, e, depth + 1, share)).sum()
    }
}

/// Adaptive Gauss–Legendre quadrature of `f` over a box in one or two
/// dimensions, refined toward `singular` points. Runs at increasing depth caps
/// and flags divergence when the increments stop shrinking.
pub fn adaptive_integral(f: &dyn Fn(&[f64]) -> f64, lower: &[f64], upper: &[f64], singular: &[Vec<f64>], tol: f64) -> AdaptiveIntegral {
    let dim = lower.len();
    let lo = [lower[0], if dim == 2 { lower[1] } else { 0.0 }];
    let hi = [upper[0], if dim == 2 { upper[1] } else { 0.0 }];
    let mut values = Vec::new();
    for depth in [8usize, 10, 12, 14, 16] {
        let a = Adapt { f, dim, singular, max_depth: depth };
        let est = a.rule(&lo, &hi);
        values.push(a.run(lo, hi, est, 0, tol));
    }
    let k = values.len();
    let inc_last = values[k - 1] - values[k - 2];
    let inc_prev = values[k - 2] - values[k - 3];
    let scale = values[k - 1].abs().max(1.0);
    let stalled = inc_last.abs() > 1e-6 * scale && inc_last.abs() >= 0.7 * inc_prev.abs();
    let value = if inc_prev != 0.0 && inc_last.abs() < inc_prev.abs() {
        let r = inc_last / inc_prev;
        values[k - 1] + inc_last * r / (1.0 - r)
    } else {
        values[k - 1]
    };
    AdaptiveIntegral { value, diverges: stalled || !value.is_finite(), last_increment: inc_last }
}

/// `∫F(x,Dv) − f·v + ∫_{Γ_N} g_N·v` of a closed-form field.
pub fn closed_form_energy(problem: &ProblemSpec, v: &dyn ClosedFormField, tol: f64) -> AdaptiveIntegral {
    let g = &problem.grid;
    let m = problem.components();
    let spec = &problem.integrand;
    let dim = g.dim;
    let density = |x: &[f64]| {
        let dv = v.gradient(x);
        let val = v.value(x);
        let f = problem.forcing.eval(x, m);
        spec.value(x, &dv) - dot(&f, &val)
    };
    let lower = &g.lower[..dim];
    let upper = &g.upper[..dim];
    let sing = v.singular_points();
    let mut total = adaptive_integral(&density, lower, upper, &sing, tol);
    for face in g.faces() {
        if problem.face_is_dirichlet(face) || problem.neumann_data.is_zero() {
            continue;
        }
        let fixed = match face.side {
            crate::fields::Side::Low => g.lower[face.axis],
            crate::fields::Side::High => g.upper[face.axis],
        };
        if dim == 1 {
            let x = [fixed];
            total.value += dot(&problem.neumann_data.eval(&x, m), &v.value(&x));
            continue;
        }
        let other = 1 - face.axis;
        let line = |t: &[f64]| {
            let mut x = [0.0; 2];
            x[face.axis] = fixed;
            x[other] = t[0];
            dot(&problem.neumann_data.eval(&x, m), &v.value(&x))
        };
        let b = adaptive_integral(&line, &[g.lower[other]], &[g.upper[other]], &[], tol);
        total.value += b.value;
        total.diverges |= b.diverges;
    }
    total
}

/// Compares the relaxed value with the pointwise energy of a competitor.
pub fn gap_probe(problem: &ProblemSpec, competitor: &Competitor, config: &SolverConfig) -> Result<GapReport> {
    let (_, solve) = relax_continuation(problem, config)?;
    let relaxed = solve.relaxed_estimate;
    let mut notes = Vec::new();
    let energy = match competitor {
        Competitor::Grid(v) => {
            let mut pr = problem.clone();
            pr.grid = v.grid.clone();
            if v.components != problem.components() {
                return invalid("competitor has the wrong number of components");
            }
            Some(discrete_energy(&pr, v)?)
        }
        Competitor::ClosedForm(v) => {
            if v.components() != problem.components() {
                return invalid("competitor has the wrong number of components");
            }
            let m = problem.components();
            let mut mismatch: f64 = 0.0;
            for face in problem.grid.faces() {
                if !problem.face_is_dirichlet(face) {
                    continue;
                }
                for k in problem.grid.face_nodes(face) {
                    let x = problem.grid.point(k);
                    let d: Vec<f64> = v.value(&x).iter().zip(problem.dirichlet_data.eval(&x, m)).map(|(a, b)| a - b).collect();
                    mismatch = mismatch.max(dot(&d, &d).sqrt());
                }
            }
            if mismatch > 1e-6 {
                notes.push(format!("competitor misses the Dirichlet data by {mismatch:.3e}"));
            }
            let r = closed_form_energy(problem, v.as_ref(), 1e-9);
            if r.diverges {
                notes.push("competitor energy keeps growing under refinement".into());
                None
            } else {
                Some(r.value)
            }
        }
    };
    let tolerance = config.gap_tolerance * energy.map_or(1.0, |e| e.abs().max(1.0));
    let gap_indicator = energy.map(|e| relaxed - e);
    Ok(GapReport {
        relaxed_estimate: relaxed,
        competitor_energy: energy,
        gap_indicator,
        tolerance,
        gap_detected: gap_indicator.is_some_and(|g| g > tolerance),
        competitor_infinite: energy.is_none(),
        solve,
        notes,
    })
}
