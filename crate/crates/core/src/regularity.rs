//! Excess energies, excess-decay profiles, ε-regularity classification and
//! Caccioppoli diagnostics.
//!
//! Averages over `Ω_R(x) = Ω ∩ B_R(x)` use the cells whose centres lie in
//! the ball, with `Du` the cell-centred discrete gradient.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{discrete_gradient, fmt_f64, GridFunction};
use crate::integrands::v_norm_sq;
use crate::solver::{ls_slope, BoundaryMode, ProblemSpec};

/// Fewest cells an average may use.
pub const MIN_CELLS: usize = 4;

/// Pieces of the excess on one ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessParts {
    /// `⨍ |V_{p,μ}(Du − (Du)_R)|²`.
    pub v_excess: f64,
    pub mean_gradient: Vec<f64>,
    pub cells: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cell indices of `du` whose centres lie in `B_R(x)`.
fn ball_cells(du: &GridFunction, x: &[f64], r: f64) -> Vec<usize> {
    (0..du.grid.num_nodes()).filter(|&k| dist2(&du.grid.point(k), x) <= r * r).collect()
}

fn parts_from_gradient(du: &GridFunction, x: &[f64], r: f64, p: f64, mu: f64) -> Result<ExcessParts> {
    if !(r > 0.0) {
        return invalid("radius must be positive");
    }
    let cells = ball_cells(du, x, r);
    if cells.len() < MIN_CELLS {
        return invalid(format!("B_R(x) with R = {r:e} holds {} cells, need at least {MIN_CELLS}", cells.len()));
    }
    let d = du.components;
    let mut mean = vec![0.0; d];
    for &k in &cells {
        for (m, v) in mean.iter_mut().zip(du.node(k)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= cells.len() as f64);
    let mut diff = vec![0.0; d];
    let mut acc = 0.0;
    for &k in &cells {
        for ((o, v), m) in diff.iter_mut().zip(du.node(k)).zip(&mean) {
            *o = v - m;
        }
        acc += v_norm_sq(p, mu, &diff);
    }
    Ok(ExcessParts { v_excess: acc / cells.len() as f64, mean_gradient: mean, cells: cells.len() })
}

/// Averaged `V`-excess, mean gradient and cell count on `Ω_R(x)`.
pub fn excess_parts(u: &GridFunction, x: &[f64], r: f64, p: f64, mu: f64) -> Result<ExcessParts> {
    parts_from_gradient(&discrete_gradient(u), x, r, p, mu)
}

/// `E(x,R) = ⨍_{Ω_R(x)} |V_{p,μ}(Du − (Du)_{Ω_R(x)})|² + R^{2β}`.
pub fn excess(u: &GridFunction, x: &[f64], r: f64, beta: f64, p: f64, mu: f64) -> Result<f64> {
    Ok(excess_parts(u, x, r, p, mu)?.v_excess + r.powf(2.0 * beta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessProfile {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub excess_values: Vec<f64>,
    /// The `V`-excess without the `R^{2β}` term.
    pub v_excess_values: Vec<f64>,
    pub mean_gradients: Vec<Vec<f64>>,
    pub beta: f64,
    /// Slope of `log E` against `log R`.
    pub fitted_decay: Option<f64>,
    /// Slope of the `V`-excess alone (absent when it vanishes).
    pub v_excess_decay: Option<f64>,
    /// `fitted_decay ≥ 2β − 0.2`.
    pub consistent: bool,
    pub warnings: Vec<String>,
}

impl ExcessProfile {
    /// CSV `R,excess,mean_grad_norm`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("R,excess,mean_grad_norm\n");
        for ((r, e), m) in self.radii.iter().zip(&self.excess_values).zip(&self.mean_gradients) {
            s.push_str(&format!("{},{},{}\n", fmt_f64(*r), fmt_f64(*e), fmt_f64(norm(m))));
        }
        s
    }
}

/// `E(x, τ^k R₀)` for `k = 0..=steps`, truncated when balls get too small.
#[allow(clippy::too_many_arguments)]
pub fn excess_decay_profile(u: &GridFunction, x: &[f64], r0: f64, tau: f64, steps: usize, beta: f64, p: f64, mu: f64) -> Result<ExcessProfile> {
    if !(tau > 0.0 && tau <= 0.25) {
        return invalid(format!("tau must lie in (0, 1/4], got {tau}"));
    }
    let du = discrete_gradient(u);
    let mut prof = ExcessProfile {
        center: x.to_vec(),
        radii: vec![],
        excess_values: vec![],
        v_excess_values: vec![],
        mean_gradients: vec![],
        beta,
        fitted_decay: None,
        v_excess_decay: None,
        consistent: false,
        warnings: vec![],
    };
    for k in 0..=steps {
        let r = r0 * tau.powi(k as i32);
        match parts_from_gradient(&du, x, r, p, mu) {
            Ok(parts) => {
                prof.radii.push(r);
                prof.excess_values.push(parts.v_excess + r.powf(2.0 * beta));
                prof.v_excess_values.push(parts.v_excess);
                prof.mean_gradients.push(parts.mean_gradient);
            }
            Err(_) => {
                prof.warnings.push(format!("profile truncated at R = {r:e}: ball holds fewer than {MIN_CELLS} cells"));
                break;
            }
        }
    }
    if prof.radii.is_empty() {
        return invalid("the largest ball already holds too few cells");
    }
    let xs: Vec<f64> = prof.radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = prof.excess_values.iter().map(|e| e.ln()).collect();
    prof.fitted_decay = ls_slope(&xs, &ys);
    if prof.v_excess_values.iter().all(|v| *v > 0.0) {
        let yv: Vec<f64> = prof.v_excess_values.iter().map(|e| e.ln()).collect();
        prof.v_excess_decay = ls_slope(&xs, &yv);
    }
    prof.consistent = prof.fitted_decay.is_some_and(|s| s >= 2.0 * beta - 0.2);
    Ok(prof)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointLabel {
    Regular,
    SingularCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: Vec<f64>,
    pub label: PointLabel,
    /// Smallest `V`-excess over the tested radii (`+∞` when none were testable).
    pub excess_min: f64,
    pub r_at_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub epsilon: f64,
    pub m: f64,
    pub r0: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMap {
    pub points: Vec<PointRecord>,
    pub thresholds: Thresholds,
}

impl ClassificationMap {
    /// CSV `x[,y],label,excess_min,R_at_min`.
    pub fn to_csv(&self) -> String {
        let dim = self.points.first().map_or(1, |p| p.x.len());
        let mut s = String::from(if dim == 1 { "x,label,excess_min,R_at_min\n" } else { "x,y,label,excess_min,R_at_min\n" });
        for p in &self.points {
            for v in &p.x {
                s.push_str(&fmt_f64(*v));
                s.push(',');
            }
            let label = match p.label {
                PointLabel::Regular => "regular",
                PointLabel::SingularCandidate => "singular-candidate",
            };
            s.push_str(&format!("{label},{},{}\n", fmt_f64(p.excess_min), fmt_f64(p.r_at_min)));
        }
        s
    }

    pub fn regular_count(&self) -> usize {
        self.points.iter().filter(|p| p.label == PointLabel::Regular).count()
    }
}

/// Radii tested below `R₀`: `R₀·2^{−k}`, `k ≥ 1`, while balls hold enough cells.
const MAX_HALVINGS: usize = 40;

/// Labels a point regular iff some tested `R < R₀` has `|(Du)_{Ω_R}| ≤ M` and
/// `V`-excess `< ε²`. `p` and `μ` come from the problem integrand.
pub fn classify_points(u: &GridFunction, problem: &ProblemSpec, epsilon: f64, m: f64, r0: f64, beta: f64, sample: &[Vec<f64>]) -> Result<ClassificationMap> {
    if !(epsilon > 0.0 && m > 0.0 && r0 > 0.0 && beta > 0.0) {
        return invalid("thresholds must be positive");
    }
    let (p, mu) = (problem.integrand.params.p, problem.integrand.params.mu);
    let du = discrete_gradient(u);
    let mut points = Vec::with_capacity(sample.len());
    for x in sample {
        if x.len() != u.grid.dim {
            return invalid("sample point has the wrong dimension");
        }
        let mut rec = PointRecord { x: x.clone(), label: PointLabel::SingularCandidate, excess_min: f64::INFINITY, r_at_min: f64::NAN };
        for k in 1..=MAX_HALVINGS {
            let r = r0 * 0.5f64.powi(k as i32);
            let Ok(parts) = parts_from_gradient(&du, x, r, p, mu) else { break };
            if parts.v_excess < rec.excess_min {
                rec.excess_min = parts.v_excess;
                rec.r_at_min = r;
            }
            if norm(&parts.mean_gradient) <= m && parts.v_excess < epsilon * epsilon {
                rec.label = PointLabel::Regular;
            }
        }
        points.push(rec);
    }
    Ok(ClassificationMap { points, thresholds: Thresholds { epsilon, m, r0, beta } })
}

/// Affine map `a(x) = A x + b`, `A` row-major `m × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        self.offset.iter().enumerate().map(|(c, b)| b + (0..n).map(|k| self.matrix[c * n + k] * x[k]).sum::<f64>()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliTerms {
    /// `⨍_{Ω_R} |V_p((u − a)/R)|²`.
    pub lower_order: f64,
    /// `|V_{p′}(R^α L)|²`.
    pub data: f64,
    /// `(⨍_{Ω_R} |V_p(D(u − a))|² + |V_p((u − a)/R)|²)^{q/p}`.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaccioppoliRecord {
    /// `⨍_{Ω_{R/2}} |V_p(D(u − a))|²`.
    pub lhs: f64,
    pub rhs_terms: CaccioppoliTerms,
    pub ratio: f64,
    /// `L = 1 + [g_N]_{C^{0,α}} + ‖f‖_{L^{n/(1−α)}}` on the ball.
    pub data_constant: f64,
}

/// Both sides of the boundary Caccioppoli inequality, without constants.
///
/// In Neumann mode the constant part of `a` is replaced by the mean of `u − a`
/// on `Ω_R`, which makes the record invariant under adding constants to `u`.
pub fn caccioppoli_ratio(u: &GridFunction, problem: &ProblemSpec, x: &[f64], r: f64, a: &AffineMap) -> Result<CaccioppoliRecord> {
    let params = problem.integrand.params;
    let (p, q, mu, alpha, n) = (params.p, params.q, params.mu, params.alpha, params.n);
    let mcomp = u.components;
    if a.offset.len() != mcomp || a.matrix.len() != mcomp * n {
        return invalid("affine map has the wrong shape");
    }
    let du = discrete_gradient(u);
    let cg = du.grid.clone();
    let big = ball_cells(&du, x, r);
    let small = ball_cells(&du, x, r / 2.0);
    if small.len() < MIN_CELLS {
        return invalid(format!("B_(R/2)(x) holds {} cells, need at least {MIN_CELLS}", small.len()));
    }
    // u − a at cell centres, from corner averages of u.
    let g = &u.grid;
    let centre_value = |k: usize| -> Vec<f64> {
        let (i, j) = cg.ij(k);
        let corners: Vec<usize> = if g.dim == 1 { vec![g.index(i, 0), g.index(i + 1, 0)] } else { vec![g.index(i, j), g.index(i + 1, j), g.index(i, j + 1), g.index(i + 1, j + 1)] };
        let mut v = vec![0.0; mcomp];
        for &c in &corners {
            for (o, w) in v.iter_mut().zip(u.node(c)) {
                *o += w / corners.len() as f64;
            }
        }
        v
    };
    let mut shift = vec![0.0; mcomp];
    if problem.mode == BoundaryMode::Neumann {
        for &k in &big {
            let av = a.eval(&cg.point(k));
            for (c, s) in shift.iter_mut().enumerate() {
                *s += (centre_value(k)[c] - av[c]) / big.len() as f64;
            }
        }
    }
    let w_of = |k: usize| -> Vec<f64> {
        let av = a.eval(&cg.point(k));
        centre_value(k).iter().zip(&av).zip(&shift).map(|((uv, aval), s)| uv - aval - s).collect()
    };
    let dw_of = |k: usize| -> Vec<f64> { du.node(k).iter().zip(&a.matrix).map(|(d, am)| d - am).collect() };
    let avg = |cells: &[usize], f: &dyn Fn(usize) -> f64| cells.iter().map(|&k| f(k)).sum::<f64>() / cells.len() as f64;
    let lhs = avg(&small, &|k| v_norm_sq(p, mu, &dw_of(k)));
    let scaled = |k: usize| -> Vec<f64> { w_of(k).iter().map(|v| v / r).collect() };
    let lower_order = avg(&big, &|k| v_norm_sq(p, mu, &scaled(k)));
    let grad_part = avg(&big, &|k| v_norm_sq(p, mu, &dw_of(k)));
    let power = (grad_part + lower_order).powf(q / p);
    let l = 1.0 + neumann_holder_seminorm(problem, x, r, alpha) + forcing_norm(problem, &cg, &big, n, alpha);
    let pp = p / (p - 1.0);
    let data = v_norm_sq(pp, mu.powf(p - 1.0), &[r.powf(alpha) * l]);
    let rhs = lower_order + data + power;
    Ok(CaccioppoliRecord { lhs, rhs_terms: CaccioppoliTerms { lower_order, data, power }, ratio: lhs / rhs, data_constant: l })
}

fn neumann_holder_seminorm(problem: &ProblemSpec, x: &[f64], r: f64, alpha: f64) -> f64 {
    if problem.neumann_data.is_zero() {
        return 0.0;
    }
    let g = &problem.grid;
    let m = problem.components();
    let pts: Vec<Vec<f64>> = g
        .faces()
        .into_iter()
        .filter(|f| !problem.face_is_dirichlet(*f))
        .flat_map(|f| g.face_nodes(f))
        .map(|k| g.point(k))
        .filter(|y| dist2(y, x) <= r * r)
        .collect();
    let vals: Vec<Vec<f64>> = pts.iter().map(|y| problem.neumann_data.eval(y, m)).collect();
    let mut best: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = dist2(&pts[i], &pts[j]).sqrt();
            if d > 0.0 {
                let diff: Vec<f64> = vals[i].iter().zip(&vals[j]).map(|(a, b)| a - b).collect();
                best = best.max(norm(&diff) / d.powf(alpha));
            }
        }
    }
    best
}

fn forcing_norm(problem: &ProblemSpec, cg: &crate::fields::GridSpec, cells: &[usize], n: usize, alpha: f64) -> f64 {
    if problem.forcing.is_zero() {
        return 0.0;
    }
    let m = problem.components();
    let vals: Vec<f64> = cells.iter().map(|&k| norm(&problem.forcing.eval(&cg.point(k), m))).collect();
    if alpha >= 1.0 {
        return vals.iter().cloned().fold(0.0, f64::max);
    }
    let s = n as f64 / (1.0 - alpha);
    let vol = cg.cell_volume();
    vals.iter().map(|v| vol * v.powf(s)).sum::<f64>().powf(1.0 / s)
}
