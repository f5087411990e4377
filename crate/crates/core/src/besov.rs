//! Difference-quotient seminorms and their decay rates.
//!
//! For a field `v`, a lattice direction `e` and a step count `k`, the shift is
//! `h = k·e` (in lattice units) and `‖Δ_h v‖_{L^p(Ω^h)}` is computed with the
//! trapezoid rule on `Ω^h`, the set of nodes where the difference stencil fits.
//! The measured Besov exponent is the least-squares slope of
//! `log ‖Δ_h v‖` against `log |h|`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{discrete_gradient, extend, shift_difference, BoundaryTag, Face, GridFunction, GridSpec, Parity};
use crate::integrands::{v_transform, IntegrandSpec};
use crate::solver::ls_slope;

/// Difference-quotient probe: smoothness candidate, integrability, lattice
/// directions and dyadic step counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovProbe {
    pub s: f64,
    pub p_norm: f64,
    pub directions: Vec<[i64; 2]>,
    /// Step counts along each direction, decreasing.
    pub steps: Vec<i64>,
    pub order: u8,
}

/// Default number of halvings below the coarsest shift.
pub const DEFAULT_HALVINGS: usize = 6;

impl BesovProbe {
    /// Dyadic steps `H₀·2^{−j}` with `H₀` the largest power-of-two step count
    /// not exceeding an eighth of the shortest axis, `j ≤ 6`. Directions are
    /// the axes, plus both diagonals in 2D.
    pub fn dyadic(grid: &GridSpec, s: f64, p_norm: f64, order: u8) -> Self {
        let cells = (0..grid.dim).map(|a| grid.nodes[a] - 1).min().unwrap_or(1) as i64;
        Self::with_coarsest(grid, s, p_norm, order, (cells / 8).max(1), DEFAULT_HALVINGS)
    }

    /// Dyadic steps starting at `coarsest` lattice steps (rounded down to a
    /// power of two), at most `halvings` halvings.
    pub fn with_coarsest(grid: &GridSpec, s: f64, p_norm: f64, order: u8, coarsest: i64, halvings: usize) -> Self {
        let mut h0 = 1i64;
        while h0 * 2 <= coarsest.max(1) {
            h0 *= 2;
        }
        let mut steps = Vec::new();
        let mut k = h0;
        while k >= 1 && steps.len() <= halvings {
            steps.push(k);
            k /= 2;
        }
        let directions = if grid.dim == 1 { vec![[1, 0]] } else { vec![[1, 0], [0, 1], [1, 1], [1, -1]] };
        Self { s, p_norm, directions, steps, order }
    }

    pub fn with_directions(mut self, directions: Vec<[i64; 2]>) -> Self {
        self.directions = directions;
        self
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if !(self.s > 0.0 && self.s < 2.0) {
            return invalid(format!("smoothness s must lie in (0,2), got {}", self.s));
        }
        if !(self.p_norm >= 1.0) {
            return invalid(format!("p_norm must be >= 1, got {}", self.p_norm));
        }
        if self.order != 1 && self.order != 2 {
            return invalid("order must be 1 or 2");
        }
        if self.directions.is_empty() || self.steps.is_empty() {
            return invalid("probe needs at least one direction and one step");
        }
        for d in &self.directions {
            if *d == [0, 0] || (grid.dim == 1 && d[1] != 0) {
                return invalid(format!("direction {d:?} is not valid on a {}-dimensional grid", grid.dim));
            }
            for &k in &self.steps {
                if k <= 0 {
                    return invalid("step counts must be positive");
                }
                for a in 0..grid.dim {
                    let len = (k * d[a]).abs() as f64 * grid.spacing(a);
                    if len > grid.width(a) / 3.0 + 1e-12 {
                        return invalid(format!("shift of {k} steps along {d:?} exceeds a third of the domain width"));
                    }
                }
            }
        }
        Ok(())
    }

    fn shift_length(&self, grid: &GridSpec, dir: [i64; 2], k: i64) -> f64 {
        (0..grid.dim).map(|a| ((k * dir[a]) as f64 * grid.spacing(a)).powi(2)).sum::<f64>().sqrt()
    }
}

/// One row of the seminorm table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormEntry {
    pub direction: [i64; 2],
    pub h: f64,
    /// `‖Δ_h v‖_{L^p(Ω^h)}`.
    pub difference_norm: f64,
    /// `|h|^{−s} ‖Δ_h v‖_{L^p(Ω^h)}`.
    pub seminorm: f64,
    /// Fraction of the nodes of `v` kept in `Ω^h`.
    pub retained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormReport {
    pub value: f64,
    pub entries: Vec<SeminormEntry>,
    /// `|h|^{−s}‖Δ_h v‖` grows as `h` shrinks.
    pub divergent_trend: bool,
    pub warnings: Vec<String>,
}

impl SeminormReport {
    /// CSV `direction,h,seminorm`; the direction is written as `dx:dy`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("direction,h,seminorm\n");
        for e in &self.entries {
            s.push_str(&format!("{}:{},{},{}\n", e.direction[0], e.direction[1], crate::fields::fmt_f64(e.h), crate::fields::fmt_f64(e.seminorm)));
        }
        s
    }
}

fn lp_norm(field: &GridFunction, p: f64) -> f64 {
    let w = field.grid.node_weights();
    let m = field.components;
    let s: f64 = (0..w.len())
        .map(|k| {
            let v = &field.values[k * m..(k + 1) * m];
            w[k] * v.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p)
        })
        .sum();
    s.powf(1.0 / p)
}

/// `‖Δ_h v‖_{L^p}` for every direction and step of the probe.
pub fn seminorm_table(v: &GridFunction, probe: &BesovProbe) -> Result<SeminormReport> {
    probe.validate(&v.grid)?;
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for &dir in &probe.directions {
        for &k in &probe.steps {
            let shift = [k * dir[0], k * dir[1]];
            let h = probe.shift_length(&v.grid, dir, k);
            match shift_difference(v, shift, probe.order) {
                Ok(d) => {
                    let norm = lp_norm(&d.field, probe.p_norm);
                    let retained = d.field.grid.num_nodes() as f64 / v.grid.num_nodes() as f64;
                    entries.push(SeminormEntry { direction: dir, h, difference_norm: norm, seminorm: norm / h.powf(probe.s), retained });
                }
                Err(e) => warnings.push(format!("skipped h = {h:e} along {dir:?}: {e}")),
            }
        }
    }
    let value = entries.iter().map(|e| e.seminorm).fold(0.0, f64::max);
    let mut divergent_trend = false;
    for &dir in &probe.directions {
        let rows: Vec<&SeminormEntry> = entries.iter().filter(|e| e.direction == dir && e.seminorm > 0.0).collect();
        let xs: Vec<f64> = rows.iter().map(|e| e.h.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|e| e.seminorm.ln()).collect();
        if let Some(sl) = ls_slope(&xs, &ys) {
            divergent_trend |= sl < -0.05;
        }
    }
    if divergent_trend {
        warnings.push(format!("seminorm grows as h decreases: the field is not in B^{{{},{}}}", probe.s, probe.p_norm));
    }
    Ok(SeminormReport { value, entries, divergent_trend, warnings })
}

/// `max_h |h|^{−s} ‖Δ_h v‖_{L^p(Ω^h)}` over the probe.
pub fn seminorm(v: &GridFunction, probe: &BesovProbe) -> Result<f64> {
    Ok(seminorm_table(v, probe)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSlope {
    pub direction: [i64; 2],
    pub slope: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovEstimate {
    /// Pooled decay exponent; `+∞` when every difference vanishes.
    pub slope: f64,
    pub r_squared: f64,
    pub per_direction: Vec<DirectionSlope>,
    /// `(h, |h|^{−s}‖Δ_h v‖)` for all usable shifts, direction by direction.
    pub seminorm_at: Vec<(f64, f64)>,
    pub saturated: bool,
    pub order: u8,
    pub used_shifts: usize,
    pub warnings: Vec<String>,
}

/// Shifts with at least this fraction of the nodes in `Ω^h` enter the fit.
pub const MIN_RETAINED: f64 = 0.5;

fn fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let slope = ls_slope(xs, ys).unwrap_or(f64::NAN);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let b = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - b - slope * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    (slope, r2)
}

/// Least-squares decay exponent of `‖Δ_h v‖_{L^p}` over the probe shifts.
pub fn decay_fit(v: &GridFunction, probe: &BesovProbe) -> Result<BesovEstimate> {
    let table = seminorm_table(v, probe)?;
    let mut warnings = table.warnings.clone();
    let usable: Vec<&SeminormEntry> = table.entries.iter().filter(|e| e.retained >= MIN_RETAINED).collect();
    let dropped = table.entries.len() - usable.len();
    if dropped > 0 {
        warnings.push(format!("{dropped} shifts dropped: shrunken domain below half the lattice"));
    }
    let per_dir_count = probe.directions.iter().map(|d| usable.iter().filter(|e| e.direction == *d).count()).min().unwrap_or(0);
    if per_dir_count < 4 {
        return invalid(format!("need at least 4 usable shifts per direction, have {per_dir_count}"));
    }
    let seminorm_at: Vec<(f64, f64)> = usable.iter().map(|e| (e.h, e.seminorm)).collect();
    if usable.iter().all(|e| e.difference_norm == 0.0) {
        return Ok(BesovEstimate {
            slope: f64::INFINITY,
            r_squared: 1.0,
            per_direction: probe.directions.iter().map(|&d| DirectionSlope { direction: d, slope: f64::INFINITY, r_squared: 1.0 }).collect(),
            seminorm_at,
            saturated: true,
            order: probe.order,
            used_shifts: usable.len(),
            warnings,
        });
    }
    if usable.iter().any(|e| e.difference_norm == 0.0) {
        return invalid("some but not all differences vanish; the log-log fit is undefined");
    }
    let xs: Vec<f64> = usable.iter().map(|e| e.h.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|e| e.difference_norm.ln()).collect();
    let (slope, r_squared) = fit(&xs, &ys);
    let per_direction: Vec<DirectionSlope> = probe
        .directions
        .iter()
        .map(|&d| {
            let rows: Vec<&&SeminormEntry> = usable.iter().filter(|e| e.direction == d).collect();
            let xs: Vec<f64> = rows.iter().map(|e| e.h.ln()).collect();
            let ys: Vec<f64> = rows.iter().map(|e| e.difference_norm.ln()).collect();
            let (slope, r_squared) = fit(&xs, &ys);
            DirectionSlope { direction: d, slope, r_squared }
        })
        .collect();
    let (lo, hi) = per_direction.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d.slope), b.max(d.slope)));
    if hi - lo > 0.15 {
        warnings.push(format!("anisotropic decay: direction slopes range over [{lo:.3}, {hi:.3}]"));
    }
    Ok(BesovEstimate {
        slope,
        r_squared,
        per_direction,
        seminorm_at,
        saturated: slope >= probe.order as f64 - 0.05,
        order: probe.order,
        used_shifts: usable.len(),
        warnings,
    })
}

/// How the boundary is treated before measuring `V(Du)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum BoundaryHandling {
    /// Differences restricted to the shrunken domain.
    InteriorShrink,
    /// Odd reflection of `u` across the face.
    OddReflect { face: Face },
    /// Even reflection of `u` across the face.
    EvenReflect { face: Face },
}

/// `V_{p,μ}(Du)` at cell centres.
pub fn v_of_gradient(u: &GridFunction, p: f64, mu: f64) -> GridFunction {
    let du = discrete_gradient(u);
    du.map_nodes(du.components, |_, z| v_transform(p, mu, z))
}

/// Measured Besov exponent (`p_norm = 2`) of `V_{p,μ}(Du)` after the requested
/// boundary treatment. `p` and `μ` come from the integrand.
pub fn v_field_regularity(u: &GridFunction, integrand: &IntegrandSpec, probe: &BesovProbe, handling: BoundaryHandling) -> Result<BesovEstimate> {
    let (p, mu) = (integrand.params.p, integrand.params.mu);
    let field = match handling {
        BoundaryHandling::InteriorShrink => u.clone(),
        BoundaryHandling::OddReflect { face } | BoundaryHandling::EvenReflect { face } => {
            if face.axis >= u.grid.dim || u.grid.tag(face) == BoundaryTag::Interior {
                return invalid(format!("face {face:?} is not a tagged boundary face of the grid"));
            }
            let parity = if matches!(handling, BoundaryHandling::OddReflect { .. }) { Parity::Odd } else { Parity::Even };
            extend(u, face, parity)?.field
        }
    };
    let v = v_of_gradient(&field, p, mu);
    let probe = BesovProbe { p_norm: 2.0, ..probe.clone() };
    decay_fit(&v, &probe)
}
