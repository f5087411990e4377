//! Experiment pipelines, one per kind.

use std::path::PathBuf;

use serde::Serialize;
use vreg_core::besov::{decay_fit, seminorm_table, v_field_regularity, v_of_gradient, BesovEstimate, BesovProbe, BoundaryHandling};
use vreg_core::exponents::{iterate_deltas, predicted_delta, BoundaryKind, Scenario};
use vreg_core::fields::{extend, Face, Parity, Side};
use vreg_core::integrands::verify_growth;
use vreg_core::regularity::{classify_points, excess_decay_profile};
use vreg_core::solver::{gap_probe, relax_continuation, Competitor, ProblemSpec, SolveReport};
use vreg_core::{Error, GridFunction};

use crate::config::{Config, ConfigError};
use crate::output::{to_json, Artifacts};
use crate::setup;

pub const KINDS: &[&str] = &["solve", "besov", "exponents", "excess", "classify", "gap", "verify-integrand"];

/// Sections searched first for bare `--key` flags.
pub fn preferred_sections(kind: &str) -> Vec<&'static str> {
    let own: &[&str] = match kind {
        "exponents" => &["exponents"],
        "verify-integrand" => &["verify"],
        "besov" => &["besov"],
        "excess" => &["excess"],
        "classify" => &["classify"],
        "gap" => &["gap"],
        _ => &[],
    };
    let mut v = own.to_vec();
    v.extend(["", "integrand", "grid", "problem", "solver"]);
    v
}

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Numerical(String),
    Io(anyhow::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.0)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(m) => RunError::Numerical(m),
            other => RunError::Config(other.to_string()),
        }
    }
}

impl From<anyhow::Error> for RunError {
    fn from(e: anyhow::Error) -> Self {
        RunError::Io(e)
    }
}

pub struct Outcome {
    pub stdout: String,
    pub manifest: PathBuf,
}

/// Runs the experiment named by the config's `kind`.
pub fn run(cfg: &Config) -> Result<Outcome, RunError> {
    let kind: String = cfg.require("", "kind")?;
    if !KINDS.contains(&kind.as_str()) {
        return Err(cfg.error("", "kind", format!("unknown kind `{kind}`, expected one of {}", KINDS.join(", "))).into());
    }
    let seed: u64 = cfg.get_or("", "seed", 0)?;
    let dir: PathBuf = cfg.get_or("", "output", PathBuf::from(format!("vreg-out/{kind}")))?;
    // Everything is validated before the output directory is touched.
    let plan = Plan::build(cfg, &kind)?;
    let mut art = Artifacts::create(&dir)?;
    // Echoed without the output directory.
    let mut echo = cfg.clone();
    echo.remove("", "output");
    art.write("config.cfg", &echo.to_text())?;
    let stdout = plan.execute(cfg, seed, &mut art)?;
    let manifest = art.finish(&kind, seed)?;
    Ok(Outcome { stdout, manifest })
}

enum Plan {
    Solve(ProblemSpec),
    Exponents(Scenario),
    Verify,
}

impl Plan {
    fn build(cfg: &Config, kind: &str) -> Result<Self, RunError> {
        Ok(match kind {
            "exponents" => Plan::Exponents(scenario(cfg)?),
            "verify-integrand" => {
                let g = setup::grid(cfg)?;
                setup::integrand(cfg, &g)?;
                Plan::Verify
            }
            _ => {
                setup::solver(cfg)?;
                Plan::Solve(setup::problem(cfg)?)
            }
        })
    }

    fn execute(self, cfg: &Config, seed: u64, art: &mut Artifacts) -> Result<String, RunError> {
        let kind: String = cfg.require("", "kind")?;
        match self {
            Plan::Exponents(sc) => exponents(cfg, &sc, art),
            Plan::Verify => {
                let g = setup::grid(cfg)?;
                let spec = setup::integrand(cfg, &g)?;
                let samples: usize = cfg.get_or("verify", "samples", 1000)?;
                let report = verify_growth(&spec, samples, seed);
                art.write_json("verification.json", &report)?;
                Ok(to_json(&report)?)
            }
            Plan::Solve(pr) => {
                let sc = setup::solver(cfg)?;
                if kind == "gap" {
                    return gap(cfg, &pr, &sc, art);
                }
                let (u, report) = relax_continuation(&pr, &sc)?;
                if !report.final_energy.is_finite() {
                    return Err(RunError::Numerical("solver produced a non-finite energy".into()));
                }
                art.write("solution.csv", &u.to_csv())?;
                art.write_json("report.json", &report)?;
                match kind.as_str() {
                    "solve" => Ok(to_json(&report)?),
                    "besov" => besov(cfg, &pr, &u, art),
                    "excess" => excess(cfg, &pr, &u, art),
                    "classify" => classify(cfg, &pr, &u, &report, art),
                    _ => unreachable!("kind checked against KINDS"),
                }
            }
        }
    }
}

fn scenario(cfg: &Config) -> Result<Scenario, RunError> {
    let s = "exponents";
    let n: usize = cfg.require(s, "n")?;
    let p: f64 = cfg.require(s, "p")?;
    let mut sc = Scenario::new(n, p, cfg.get_or(s, "q", p)?, cfg.get_or(s, "alpha", 1.0)?);
    if let Some(b) = cfg.get::<f64>(s, "beta")? {
        sc = sc.with_beta(b);
    }
    sc.bc = match cfg.get_or(s, "bc", "dirichlet".to_string())?.as_str() {
        "dirichlet" => BoundaryKind::Dirichlet,
        "neumann" => BoundaryKind::Neumann,
        "mixed" => BoundaryKind::Mixed,
        other => return Err(cfg.error(s, "bc", format!("unknown boundary kind `{other}`")).into()),
    };
    sc.radial = cfg.get_or(s, "radial", false)?;
    sc.autonomous = cfg.get_or(s, "autonomous", false)?;
    sc.g_regularity = cfg.get(s, "g_regularity")?;
    sc.apriori_w1q = cfg.get_or(s, "apriori_w1q", false)?;
    if let Err(e) = sc.validate() {
        return Err(cfg.error(s, "p", e).into());
    }
    let format: String = cfg.get_or(s, "format", "table".to_string())?;
    if format != "table" && format != "json" {
        return Err(cfg.error(s, "format", "expected `table` or `json`").into());
    }
    Ok(sc)
}

fn exponents(cfg: &Config, sc: &Scenario, art: &mut Artifacts) -> Result<String, RunError> {
    #[derive(Serialize)]
    struct Out<'a> {
        scenario: &'a Scenario,
        report: vreg_core::exponents::ExponentReport,
        trace: vreg_core::exponents::IterationTrace,
    }
    let k_max: usize = cfg.get_or("exponents", "k_max", 60)?;
    let out = Out { scenario: sc, report: predicted_delta(sc), trace: iterate_deltas(sc, k_max) };
    art.write_json("exponents.json", &out)?;
    let mut csv = String::from("k,delta\n");
    for (k, d) in out.trace.deltas.iter().enumerate() {
        csv.push_str(&format!("{k},{}\n", vreg_core::fields::fmt_f64(*d)));
    }
    art.write("deltas.csv", &csv)?;
    if cfg.get_or("exponents", "format", "table".to_string())? == "json" {
        return Ok(to_json(&out)?);
    }
    let r = &out.report;
    let b = &r.q_upper_bounds;
    let mut rows: Vec<(String, String)> = vec![
        ("n".into(), sc.n.to_string()),
        ("p".into(), sc.p.to_string()),
        ("q".into(), sc.q.to_string()),
        ("alpha".into(), sc.alpha.to_string()),
        ("delta_predicted".into(), r.delta_predicted.to_string()),
        ("delta_iterated".into(), out.trace.limit.to_string()),
        ("kappa_infinity".into(), out.trace.kappa_infinity.to_string()),
        ("q_bound_basic".into(), b.basic.to_string()),
        ("q_bound_apriori".into(), b.apriori.to_string()),
        ("q_bound_autonomous".into(), b.autonomous.to_string()),
        ("q_bound_partial_regularity".into(), b.partial_regularity.to_string()),
        ("singular_dim_bound".into(), r.singular_dim_bound.to_string()),
        ("boundary_condition_holds".into(), r.boundary_regular_condition.holds.to_string()),
    ];
    rows.push(("applicable".into(), serde_json::to_value(&r.applicable).map(|v| v.to_string()).unwrap_or_default()));
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut table = format!("{:<width$}  value\n", "quantity");
    for (k, v) in rows {
        table.push_str(&format!("{k:<width$}  {v}\n"));
    }
    for note in &r.notes {
        table.push_str(&format!("note: {note}\n"));
    }
    Ok(table)
}

fn face(cfg: &Config) -> Result<Face, RunError> {
    let text: String = cfg.get_or("besov", "face", "x-low".to_string())?;
    let (axis, side) = match text.as_str() {
        "x-low" => (0, Side::Low),
        "x-high" => (0, Side::High),
        "y-low" => (1, Side::Low),
        "y-high" => (1, Side::High),
        other => return Err(cfg.error("besov", "face", format!("unknown face `{other}`, use x-low, x-high, y-low or y-high")).into()),
    };
    Ok(Face::new(axis, side))
}

fn besov(cfg: &Config, pr: &ProblemSpec, u: &GridFunction, art: &mut Artifacts) -> Result<String, RunError> {
    let s = "besov";
    let mut field = u.clone();
    if let (Some(lo), Some(hi)) = (cfg.list(s, "window_lo")?, cfg.list(s, "window_hi")?) {
        field = field.window(&lo, &hi).or_else(|e| cfg.fail(s, "window_lo", e))?;
    }
    let smooth: f64 = cfg.get_or(s, "s", 0.5)?;
    let order: u8 = cfg.get_or(s, "order", 1)?;
    let p_norm: f64 = cfg.get_or(s, "p_norm", 2.0)?;
    let probe = match cfg.get::<i64>(s, "coarsest")? {
        Some(c) => BesovProbe::with_coarsest(&field.grid, smooth, p_norm, order, c, cfg.get_or(s, "halvings", vreg_core::besov::DEFAULT_HALVINGS)?),
        None => BesovProbe::dyadic(&field.grid, smooth, p_norm, order),
    };
    let handling = match cfg.get_or(s, "boundary", "interior".to_string())?.as_str() {
        "interior" => BoundaryHandling::InteriorShrink,
        "odd" => BoundaryHandling::OddReflect { face: face(cfg)? },
        "even" => BoundaryHandling::EvenReflect { face: face(cfg)? },
        other => return Err(cfg.error(s, "boundary", format!("unknown boundary handling `{other}`")).into()),
    };
    let target: String = cfg.get_or(s, "target", "v".to_string())?;
    let (measured, estimate): (GridFunction, BesovEstimate) = match target.as_str() {
        "u" => {
            probe.validate(&field.grid).or_else(|e| cfg.fail(s, "s", e))?;
            let est = decay_fit(&field, &probe)?;
            (field, est)
        }
        "v" => {
            let (p, mu) = (pr.integrand.params.p, pr.integrand.params.mu);
            let est = v_field_regularity(&field, &pr.integrand, &probe, handling)?;
            let base = match handling {
                BoundaryHandling::InteriorShrink => field,
                BoundaryHandling::OddReflect { face } => extend(&field, face, Parity::Odd)?.field,
                BoundaryHandling::EvenReflect { face } => extend(&field, face, Parity::Even)?.field,
            };
            (v_of_gradient(&base, p, mu), est)
        }
        other => return Err(cfg.error(s, "target", format!("unknown target `{other}`, use u or v")).into()),
    };
    let table_probe = if target == "v" { BesovProbe { p_norm: 2.0, ..probe.clone() } } else { probe.clone() };
    let table = seminorm_table(&measured, &table_probe)?;
    #[derive(Serialize)]
    struct Out<'a> {
        target: &'a str,
        probe: &'a BesovProbe,
        estimate: &'a BesovEstimate,
        seminorm: f64,
        divergent_trend: bool,
    }
    let out = Out { target: &target, probe: &table_probe, estimate: &estimate, seminorm: table.value, divergent_trend: table.divergent_trend };
    art.write("seminorm.csv", &table.to_csv())?;
    art.write_json("besov.json", &out)?;
    Ok(to_json(&out)?)
}

fn default_radius(pr: &ProblemSpec) -> f64 {
    (0..pr.grid.dim).map(|a| pr.grid.width(a)).fold(f64::INFINITY, f64::min) / 4.0
}

fn excess(cfg: &Config, pr: &ProblemSpec, u: &GridFunction, art: &mut Artifacts) -> Result<String, RunError> {
    let s = "excess";
    let center = cfg.list(s, "center")?.ok_or_else(|| ConfigError("missing required field `excess.center`".into()))?;
    if center.len() != pr.grid.dim {
        return Err(cfg.error(s, "center", "center has the wrong dimension").into());
    }
    let params = pr.integrand.params;
    let profile = excess_decay_profile(
        u,
        &center,
        cfg.get_or(s, "r0", default_radius(pr))?,
        cfg.get_or(s, "tau", 0.25)?,
        cfg.get_or(s, "steps", 4)?,
        cfg.get_or(s, "beta", 0.5)?,
        params.p,
        params.mu,
    )?;
    art.write("profile.csv", &profile.to_csv())?;
    art.write_json("excess.json", &profile)?;
    Ok(to_json(&profile)?)
}

fn classify(cfg: &Config, pr: &ProblemSpec, u: &GridFunction, report: &SolveReport, art: &mut Artifacts) -> Result<String, RunError> {
    let s = "classify";
    let g = &pr.grid;
    let lower = cfg.list(s, "lower")?.unwrap_or_else(|| g.lower[..g.dim].to_vec());
    let upper = cfg.list(s, "upper")?.unwrap_or_else(|| g.upper[..g.dim].to_vec());
    let count: usize = cfg.get_or(s, "samples", 21)?;
    if lower.len() != g.dim || upper.len() != g.dim || count < 2 {
        return Err(cfg.error(s, "samples", "sample box must match the grid dimension and hold at least 2 points per axis").into());
    }
    let axis = |a: usize| -> Vec<f64> { (0..count).map(|i| lower[a] + (upper[a] - lower[a]) * i as f64 / (count - 1) as f64).collect() };
    let sample: Vec<Vec<f64>> = if g.dim == 1 { axis(0).into_iter().map(|x| vec![x]).collect() } else { axis(1).into_iter().flat_map(|y| axis(0).into_iter().map(move |x| vec![x, y])).collect() };
    let map = classify_points(u, pr, cfg.get_or(s, "epsilon", 0.1)?, cfg.get_or(s, "m_bound", 2.0)?, cfg.get_or(s, "r0", default_radius(pr))?, cfg.get_or(s, "beta", 0.5)?, &sample)?;
    #[derive(Serialize)]
    struct Out<'a> {
        map: &'a vreg_core::regularity::ClassificationMap,
        regular: usize,
        total: usize,
        solver_converged: bool,
    }
    let out = Out { map: &map, regular: map.regular_count(), total: map.points.len(), solver_converged: report.converged };
    art.write("classification.csv", &map.to_csv())?;
    art.write_json("classification.json", &out)?;
    Ok(to_json(&out)?)
}

fn gap(cfg: &Config, pr: &ProblemSpec, sc: &vreg_core::solver::SolverConfig, art: &mut Artifacts) -> Result<String, RunError> {
    let competitor = match cfg.get_or("gap", "competitor", "data".to_string())?.as_str() {
        "data" => Competitor::Grid(pr.dirichlet_data.sample(&pr.grid, pr.components())),
        "zhikov" if pr.grid.dim == 2 && pr.components() == 1 => Competitor::ClosedForm(setup::zhikov()),
        other => return Err(cfg.error("gap", "competitor", format!("unknown competitor `{other}`, use data or zhikov (2D scalar)")).into()),
    };
    let report = gap_probe(pr, &competitor, sc)?;
    let mut csv = String::from("epsilon,energy,penalty,relaxed\n");
    for st in &report.solve.epsilon_trace {
        csv.push_str(&format!("{},{},{},{}\n", fmt(st.epsilon), fmt(st.energy), fmt(st.penalty), fmt(st.relaxed)));
    }
    art.write("schedule.csv", &csv)?;
    art.write_json("gap.json", &report)?;
    Ok(to_json(&report)?)
}

fn fmt(v: f64) -> String {
    vreg_core::fields::fmt_f64(v)
}
