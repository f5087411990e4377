//! Builds core objects from a [`Config`].

use std::sync::Arc;

use vreg_core::fields::{BoundaryTag, Face, FieldExpr, Side};
use vreg_core::integrands::Coefficient;
use vreg_core::solver::{BoundaryMode, ClosedFormField, ProblemSpec, SolverConfig};
use vreg_core::{GridSpec, GrowthParams, IntegrandSpec};

use crate::config::{Config, ConfigError, ConfigResult};

/// Splits `name(a, b, ...)` into the name and its numeric arguments.
fn call(text: &str) -> Option<(String, Vec<f64>)> {
    let text = text.trim();
    match text.split_once('(') {
        None => Some((text.to_string(), Vec::new())),
        Some((name, rest)) => {
            let args = rest.strip_suffix(')')?;
            let nums = if args.trim().is_empty() { Ok(Vec::new()) } else { args.split(',').map(|a| a.trim().parse::<f64>()).collect() };
            Some((name.trim().to_string(), nums.ok()?))
        }
    }
}

pub fn grid(cfg: &Config) -> ConfigResult<GridSpec> {
    let lower = cfg.list("grid", "lower")?.unwrap_or_else(|| vec![0.0]);
    let upper = cfg.list("grid", "upper")?.unwrap_or_else(|| vec![1.0; lower.len()]);
    let nodes = cfg.list("grid", "nodes")?.unwrap_or_else(|| vec![65.0; lower.len()]);
    if lower.len() != upper.len() || lower.len() != nodes.len() || !(1..=2).contains(&lower.len()) {
        return cfg.fail("grid", "nodes", "lower, upper and nodes must all have length 1 or 2");
    }
    if nodes.iter().any(|n| n.fract() != 0.0 || *n < 3.0) {
        return cfg.fail("grid", "nodes", "node counts must be integers >= 3");
    }
    let g = if lower.len() == 1 {
        GridSpec::interval(lower[0], upper[0], nodes[0] as usize)
    } else {
        GridSpec::rectangle((lower[0], upper[0]), (lower[1], upper[1]), [nodes[0] as usize, nodes[1] as usize])
    };
    let mut g = g.or_else(|e| cfg.fail("grid", "lower", e))?;
    if let Some(tags) = cfg.raw("grid", "tags") {
        let tags: Vec<&str> = tags.split(',').map(str::trim).collect();
        if tags.len() != 2 * g.dim {
            return cfg.fail("grid", "tags", format!("expected {} tags (low/high per axis)", 2 * g.dim));
        }
        for (i, t) in tags.iter().enumerate() {
            let tag = match *t {
                "D" | "dirichlet" => BoundaryTag::Dirichlet,
                "N" | "neumann" => BoundaryTag::Neumann,
                _ => return cfg.fail("grid", "tags", format!("unknown tag `{t}`, use D or N")),
            };
            g = g.with_tag(Face::new(i / 2, if i % 2 == 0 { Side::Low } else { Side::High }), tag);
        }
    }
    Ok(g)
}

fn coefficient(cfg: &Config, dim: usize) -> ConfigResult<Option<Coefficient>> {
    let Some(text) = cfg.raw("integrand", "coefficient") else { return Ok(None) };
    let bad = |msg: &str| cfg.fail("integrand", "coefficient", msg);
    let Some((name, a)) = call(text) else { return bad("expected `name(args)`") };
    let c = match (name.as_str(), a.len()) {
        ("constant", 1) => Coefficient::Constant { value: a[0] },
        ("power-distance", k) if k == 2 || k == 2 + dim => {
            let center = if k == 2 { vec![0.0; dim] } else { a[2..].to_vec() };
            Coefficient::PowerDistance { center, exponent: a[0], scale: a[1] }
        }
        ("step", 4) if a[0].fract() == 0.0 && (a[0] as usize) < dim => Coefficient::Step { axis: a[0] as usize, at: a[1], low: a[2], high: a[3] },
        ("checkerboard", 2) => Coefficient::Checkerboard { exponent: a[0], scale: a[1] },
        _ => return bad("use constant(v), power-distance(exponent, scale[, center]), step(axis, at, low, high) or checkerboard(exponent, scale)"),
    };
    Ok(Some(c))
}

pub fn integrand(cfg: &Config, grid: &GridSpec) -> ConfigResult<IntegrandSpec> {
    let p: f64 = cfg.require("integrand", "p")?;
    let q: f64 = cfg.get_or("integrand", "q", p)?;
    let m: usize = cfg.get_or("integrand", "m", 1)?;
    let mut params = GrowthParams::new(p, q, grid.dim, m);
    params.mu = cfg.get_or("integrand", "mu", params.mu)?;
    params.alpha = cfg.get_or("integrand", "alpha", params.alpha)?;
    params.nu = cfg.get_or("integrand", "nu", params.nu)?;
    params.lambda = cfg.get_or("integrand", "lambda", params.lambda)?;
    let kind: String = cfg.get_or("integrand", "type", "p-energy".to_string())?;
    let coef = coefficient(cfg, grid.dim)?;
    let need = |c: Option<Coefficient>| c.ok_or_else(|| ConfigError(format!("integrand type `{kind}` needs `integrand.coefficient`")));
    let built = match kind.as_str() {
        "p-energy" => IntegrandSpec::weighted_p_energy(params, cfg.get_or("integrand", "weight", 1.0)?),
        "double-phase" => IntegrandSpec::double_phase(params, need(coef)?),
        "radial-modulated" => IntegrandSpec::radial_modulated(params, need(coef)?),
        other => return cfg.fail("integrand", "type", format!("unknown integrand type `{other}`")),
    };
    let mut spec = built.or_else(|e| cfg.fail("integrand", "p", e))?;
    let domain: Vec<(f64, f64)> = (0..grid.dim).map(|a| (grid.lower[a], grid.upper[a])).collect();
    spec = spec.with_domain(domain).or_else(|e| cfg.fail("grid", "lower", e))?;
    if let Some(eps) = cfg.get::<f64>("integrand", "epsilon")? {
        spec = spec.regularized(eps).or_else(|e| cfg.fail("integrand", "epsilon", e))?;
    }
    Ok(spec)
}

/// Field expressions: a number list, `affine(A…, b…)`, `step(axis, at, low, high)`,
/// `cos(amplitude, frequency)` or `zhikov`.
pub fn field(cfg: &Config, section: &str, key: &str, dim: usize, m: usize) -> ConfigResult<FieldExpr> {
    let Some(text) = cfg.raw(section, key) else { return Ok(FieldExpr::Zero) };
    if let Ok(Some(v)) = cfg.list(section, key) {
        return match v.len() {
            1 if v[0] == 0.0 => Ok(FieldExpr::Zero),
            1 => Ok(FieldExpr::Constant(vec![v[0]; m])),
            k if k == m => Ok(FieldExpr::Constant(v)),
            _ => cfg.fail(section, key, format!("expected 1 or {m} values")),
        };
    }
    let Some((name, a)) = call(text) else { return cfg.fail(section, key, "expected `name(args)`") };
    let expr = match (name.as_str(), a.len()) {
        ("zero", 0) => FieldExpr::Zero,
        ("affine", k) if k == m * (dim + 1) => FieldExpr::Affine { matrix: a[..m * dim].to_vec(), offset: a[m * dim..].to_vec() },
        ("step", 4) if a[0].fract() == 0.0 && (a[0] as usize) < dim => FieldExpr::Step { axis: a[0] as usize, at: a[1], low: vec![a[2]; m], high: vec![a[3]; m] },
        ("cos", 2) => FieldExpr::CosProduct { amplitude: a[0], frequency: a[1], components: m },
        ("zhikov", 0) if dim == 2 && m == 1 => {
            let z = Zhikov;
            FieldExpr::custom(1, move |x| z.value(x))
        }
        _ => return cfg.fail(section, key, "use numbers, affine(A, b), step(axis, at, low, high), cos(amplitude, frequency) or zhikov (2D scalar)"),
    };
    Ok(expr)
}

pub fn problem(cfg: &Config) -> ConfigResult<ProblemSpec> {
    let g = grid(cfg)?;
    let f = integrand(cfg, &g)?;
    let m = f.params.m;
    let mode = match cfg.get_or("problem", "mode", "dirichlet".to_string())?.as_str() {
        "dirichlet" => BoundaryMode::Dirichlet,
        "neumann" => BoundaryMode::Neumann,
        "mixed" => BoundaryMode::Mixed,
        other => return cfg.fail("problem", "mode", format!("unknown mode `{other}`")),
    };
    let dim = g.dim;
    let pr = ProblemSpec::new(f, g, mode)
        .with_forcing(field(cfg, "problem", "forcing", dim, m)?)
        .with_dirichlet(field(cfg, "problem", "dirichlet", dim, m)?)
        .with_neumann(field(cfg, "problem", "neumann", dim, m)?);
    pr.validate().or_else(|e| cfg.fail("problem", "mode", e))?;
    Ok(pr)
}

pub fn solver(cfg: &Config) -> ConfigResult<SolverConfig> {
    let d = SolverConfig::default();
    let s = SolverConfig {
        epsilon0: cfg.get_or("solver", "epsilon0", d.epsilon0)?,
        rho: cfg.get_or("solver", "rho", d.rho)?,
        k_max: cfg.get_or("solver", "k_max", d.k_max)?,
        max_iterations: cfg.get_or("solver", "max_iterations", d.max_iterations)?,
        gradient_tolerance: cfg.get_or("solver", "gradient_tolerance", d.gradient_tolerance)?,
        armijo: cfg.get_or("solver", "armijo", d.armijo)?,
        shrink: cfg.get_or("solver", "shrink", d.shrink)?,
        gap_tolerance: cfg.get_or("solver", "gap_tolerance", d.gap_tolerance)?,
    };
    s.validate().or_else(|e| cfg.fail("solver", "epsilon0", e))?;
    Ok(s)
}

/// The angular competitor of the checkerboard gap example: `−cos 2θ` on the
/// first quadrant, `1` on the second, `cos 2θ` on the third and `−1` on the
/// fourth. It is constant wherever the checkerboard weight is positive.
#[derive(Debug, Clone, Copy)]
pub struct Zhikov;

impl ClosedFormField for Zhikov {
    fn components(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        let th = x[1].atan2(x[0]);
        let v = match (x[0] >= 0.0, x[1] >= 0.0) {
            (true, true) => -(2.0 * th).cos(),
            (false, true) => 1.0,
            (false, false) => (2.0 * th).cos(),
            (true, false) => -1.0,
        };
        vec![v]
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let r2 = x[0] * x[0] + x[1] * x[1];
        if r2 == 0.0 {
            return vec![0.0, 0.0];
        }
        let th = x[1].atan2(x[0]);
        let dth = match (x[0] >= 0.0, x[1] >= 0.0) {
            (true, true) => 2.0 * (2.0 * th).sin(),
            (false, false) => -2.0 * (2.0 * th).sin(),
            _ => 0.0,
        };
        // ∇θ = (−y, x)/r².
        vec![-dth * x[1] / r2, dth * x[0] / r2]
    }

    fn singular_points(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0]]
    }
}

pub fn zhikov() -> Arc<dyn ClosedFormField> {
    Arc::new(Zhikov)
}
