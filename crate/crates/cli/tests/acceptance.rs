//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test --test acceptance`. Set `VREG_CALIBRATE=1` to print
//! freshly calibrated V-inequality constants instead.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use vreg_core::besov::{decay_fit, seminorm, v_field_regularity, BesovProbe, BoundaryHandling};
use vreg_core::exponents::{iterate_deltas, kappa_infinity, predicted_delta, q_range, singular_dim_bound, Scenario};
use vreg_core::fields::{cancellation_check, discrete_gradient, extend, smooth_annulus, Face, FieldExpr, Parity, Side, SymmetricSamples};
use vreg_core::integrands::{v_norm_sq, v_transform, Coefficient};
use vreg_core::regularity::{classify_points, excess, PointLabel};
use vreg_core::solver::{relax_continuation, BoundaryMode, ProblemSpec, SolverConfig};
use vreg_core::{GridFunction, GridSpec, GrowthParams, IntegrandSpec};

// Pinned tolerances.
const EXPONENT_LIMIT_TOL: f64 = 1e-9;
const ORACLE_MAX_ERROR: f64 = 2e-3;
const ORACLE_EL_RESIDUAL: f64 = 1e-8;
const ORACLE_ENERGY_TOL: f64 = 1e-3;
const BESOV_SLOPE_TOL: f64 = 0.05;
const V_SLOPE_TARGET: f64 = 1.25;
const V_SLOPE_TOL: f64 = 0.1;
const SATURATION_MIN: f64 = 0.95;
const ZERO_EXTENSION_TOL: f64 = 0.05;
const ODD_EXTENSION_TOL: f64 = 0.05;
const CANCELLATION_TOL: f64 = 1e-12;
const SMOOTHING_REL_TOL: f64 = 1e-3;
const GRADIENT_FD_TOL: f64 = 1e-6;

type Check = fn() -> Result<String, String>;

fn main() {
    if std::env::var_os("VREG_CALIBRATE").is_some() {
        calibrate_v_constants();
        return;
    }
    let criteria: [(u8, &str, f64, Check); 10] = [
        (1, "exponent calculus", 1.0, exponent_calculus),
        (2, "1D p-Laplace oracle", 10.0, p_laplace_oracle),
        (3, "Besov calibration", 5.0, besov_calibration),
        (4, "differentiability", 30.0, differentiability),
        (5, "extension parity", 10.0, extension_parity),
        (6, "smoothing operator", 5.0, smoothing_operator),
        (7, "V-function inequalities", 5.0, v_inequalities),
        (8, "regularity classifier", 10.0, classifier),
        (9, "gap probe", 120.0, gap_probe),
        (10, "reproducibility", 300.0, reproducibility),
    ];
    let mut failed = 0;
    for (n, name, budget, check) in criteria {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match result {
            Ok(d) if secs <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget} s budget")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!("criterion {n:>2} {:<4} {name} ({secs:.2} s): {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn core<T>(r: vreg_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 1

fn exponent_calculus() -> Result<String, String> {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for n in [2usize, 3] {
        for p in [1.5, 2.0, 2.5, 3.0, 4.0] {
            for alpha in [0.25, 0.5, 0.75, 1.0] {
                let bound = n as f64 * p / (n as f64 - alpha);
                for t in [0.0, 0.25, 0.5, 0.9, 1.2] {
                    let q = p + t * (bound - p);
                    let sc = Scenario::new(n, p, q, alpha);
                    count += 1;
                    let below = q < bound;
                    let kappa = kappa_infinity(&sc);
                    ensure((kappa < 1.0) == below, || format!("kappa_inf = {kappa} for n={n} p={p} q={q} alpha={alpha}"))?;
                    let trace = iterate_deltas(&sc, 400);
                    ensure(trace.applicable == below, || format!("applicability mismatch at n={n} p={p} q={q} alpha={alpha}"))?;
                    if below {
                        let err = (trace.limit - predicted_delta(&sc).delta_predicted).abs();
                        worst = worst.max(err);
                        ensure(err <= EXPONENT_LIMIT_TOL, || format!("limit off by {err:e} at n={n} p={p} q={q} alpha={alpha}"))?;
                    }
                }
            }
        }
    }
    let d = predicted_delta(&Scenario::new(2, 3.0, 3.0, 1.0)).delta_predicted;
    let qb = q_range(&Scenario::new(2, 2.0, 2.0, 1.0)).basic;
    let dim = singular_dim_bound(&Scenario::new(3, 2.0, 2.0, 1.0));
    ensure((d - 0.75).abs() < 1e-15 && (qb - 3.0).abs() < 1e-15 && (dim - 1.0).abs() < 1e-15, || format!("spot values {d}, {qb}, {dim}"))?;
    Ok(format!("{count} scenarios, worst limit error {worst:.1e}; spot values 0.75 / 3 / 1"))
}

// ---------------------------------------------------------------- 2

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_vreg")
}

fn run_preset(name: &str, kind: &str, out: &Path) -> Result<Value, String> {
    let o = Command::new(bin()).args([kind, "--preset", name, "--output"]).arg(out).output().map_err(|e| e.to_string())?;
    ensure(o.status.success(), || format!("{name} exited with {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
    serde_json::from_slice(&o.stdout).map_err(|e| format!("{name}: stdout is not JSON: {e}"))
}

fn benchmark_u(x: f64) -> f64 {
    2.0 / 3.0 * (0.5f64.powf(1.5) - (x - 0.5).abs().powf(1.5))
}

/// `∫₀¹ |u′|³/3 − u` for the closed form, composite midpoint rule on 2²² cells.
fn benchmark_energy() -> f64 {
    let n = 1usize << 22;
    let h = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            let du = (x - 0.5).abs().sqrt();
            du.powi(3) / 3.0 - benchmark_u(x)
        })
        .sum::<f64>()
        * h
}

fn p_laplace_oracle() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = run_preset("pLaplace1d-p3", "solve", dir.path())?;
    let csv = std::fs::read_to_string(dir.path().join("solution.csv")).map_err(|e| e.to_string())?;
    let mut err: f64 = 0.0;
    let mut nodes = 0;
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        err = err.max((cols[2] - benchmark_u(cols[0])).abs());
        nodes += 1;
    }
    let el = report["el_residual"].as_f64().ok_or("missing el_residual")?;
    let energy = report["final_energy"].as_f64().ok_or("missing final_energy")?;
    let exact = benchmark_energy();
    ensure(nodes == 257, || format!("expected 257 nodes, got {nodes}"))?;
    ensure(err <= ORACLE_MAX_ERROR, || format!("max error {err:e}"))?;
    ensure(el <= ORACLE_EL_RESIDUAL, || format!("Euler-Lagrange residual {el:e}"))?;
    ensure((energy - exact).abs() <= ORACLE_ENERGY_TOL, || format!("energy {energy} vs {exact}"))?;
    Ok(format!("max error {err:.2e}, EL residual {el:.2e}, energy {energy:.7} vs {exact:.7}"))
}

// ---------------------------------------------------------------- 3

/// Least-squares slope of `log y` against `log x`.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// `‖f(·+h) − f‖_{L²(−1, 1−h)}` by the midpoint rule on a fine grid.
fn brute_force_l2_difference(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let n = 1usize << 21;
    let len = 2.0 - h;
    let dx = len / n as f64;
    let s: f64 = (0..n)
        .map(|i| {
            let x = -1.0 + (i as f64 + 0.5) * dx;
            (f(x + h) - f(x)).powi(2)
        })
        .sum();
    (s * dx).sqrt()
}

fn besov_calibration() -> Result<String, String> {
    // The cusp is only resolved once a shift spans hundreds of lattice steps,
    // and the bounded domain bends the slope at coarse h, so probe a middle band.
    let g = core(GridSpec::interval(-1.0, 1.0, (1 << 20) + 1))?;
    let mut parts = Vec::new();
    for gamma in [0.1, 0.25, 0.4] {
        let f = move |x: f64| x.abs().powf(gamma);
        let v = GridFunction::from_scalar_fn(&g, |x| f(x[0]));
        let probe = BesovProbe::with_coarsest(&g, gamma + 0.5, 2.0, 1, 1 << 15, 6);
        let est = core(decay_fit(&v, &probe))?;
        let hs: Vec<f64> = probe.steps.iter().map(|&k| k as f64 * g.spacing(0)).collect();
        let norms: Vec<f64> = hs.iter().map(|&h| brute_force_l2_difference(f, h)).collect();
        let oracle = slope(&hs, &norms);
        let target = gamma + 0.5;
        ensure((est.slope - target).abs() <= BESOV_SLOPE_TOL, || format!("gamma={gamma}: slope {} vs {target}", est.slope))?;
        ensure((est.slope - oracle).abs() <= BESOV_SLOPE_TOL, || format!("gamma={gamma}: slope {} vs oracle {oracle}", est.slope))?;
        parts.push(format!("{gamma}: {:.3} (oracle {oracle:.3})", est.slope));
    }
    let c = GridFunction::from_scalar_fn(&g, |_| 3.5);
    let s = core(seminorm(&c, &BesovProbe::with_coarsest(&g, 0.5, 2.0, 1, 1 << 15, 6)))?;
    ensure(s == 0.0, || format!("constant field has seminorm {s}"))?;
    Ok(format!("slopes {}; constant seminorm 0", parts.join(", ")))
}

// ---------------------------------------------------------------- 4

fn benchmark_problem(nodes: usize) -> Result<ProblemSpec, String> {
    let mut pr = GrowthParams::new(3.0, 3.0, 1, 1);
    pr.mu = 0.0;
    let f = core(IntegrandSpec::weighted_p_energy(pr, 1.0 / 3.0))?;
    let g = core(GridSpec::interval(0.0, 1.0, nodes))?;
    Ok(ProblemSpec::new(f, g, BoundaryMode::Dirichlet).with_forcing(FieldExpr::Constant(vec![1.0])))
}

fn solve(pr: &ProblemSpec) -> Result<GridFunction, String> {
    let (u, r) = core(relax_continuation(pr, &SolverConfig::default()))?;
    ensure(r.converged, || format!("solver did not converge: {:?}", r.notes))?;
    Ok(u)
}

fn differentiability() -> Result<String, String> {
    let pr = benchmark_problem(1025)?;
    let u = solve(&pr)?;
    let w = core(u.window(&[0.25], &[0.75]))?;
    let probe = BesovProbe::dyadic(&w.grid, 1.25, 2.0, 2);
    let est = core(v_field_regularity(&w, &pr.integrand, &probe, BoundaryHandling::InteriorShrink))?;
    // Near x = 1/2, u′ ~ |t|^{1/(p−1)} so V ~ |t|^{p/(2(p−1))}; the L² difference adds 1/2.
    let p = 3.0;
    let local = p / (2.0 * (p - 1.0)) + 0.5;
    ensure((local - V_SLOPE_TARGET).abs() < 1e-15, || format!("derived local exponent {local}"))?;
    ensure((est.slope - V_SLOPE_TARGET).abs() <= V_SLOPE_TOL, || format!("V_3(u') slope {}", est.slope))?;

    let mut pr2 = GrowthParams::new(2.0, 2.0, 1, 1);
    pr2.mu = 0.0;
    let f2 = core(IntegrandSpec::weighted_p_energy(pr2, 0.5))?;
    let g2 = core(GridSpec::interval(0.0, 1.0, 513))?;
    let prob2 = ProblemSpec::new(f2, g2, BoundaryMode::Dirichlet).with_forcing(FieldExpr::Step { axis: 0, at: 0.4, low: vec![-1.0], high: vec![2.0] });
    let u2 = solve(&prob2)?;
    let probe2 = BesovProbe::dyadic(&u2.grid, 0.9, 2.0, 1);
    let est2 = core(v_field_regularity(&u2, &prob2.integrand, &probe2, BoundaryHandling::InteriorShrink))?;
    ensure(est2.saturated && est2.slope >= SATURATION_MIN, || format!("p=2 slope {} saturated={}", est2.slope, est2.saturated))?;
    Ok(format!("V_3(u') order-2 slope {:.3} (target {local}); p=2 slope {:.3}, saturated", est.slope, est2.slope))
}

// ---------------------------------------------------------------- 5

fn extension_parity() -> Result<String, String> {
    // Zero extension of Du for a p = 2 solution with non-vanishing normal derivative.
    let mut pr = GrowthParams::new(2.0, 2.0, 2, 1);
    pr.mu = 0.0;
    let f = core(IntegrandSpec::weighted_p_energy(pr, 0.5))?;
    let g = core(GridSpec::rectangle((0.0, 1.0), (0.0, 1.0), [65, 65]))?;
    let prob = ProblemSpec::new(f, g, BoundaryMode::Dirichlet).with_forcing(FieldExpr::Constant(vec![1.0]));
    let u = solve(&prob)?;
    let du = discrete_gradient(&u);
    let ext = core(extend(&du, Face::new(0, Side::Low), Parity::Zero))?.field;
    // The gradient lives on 64 cell centres, so start the probe at 8 steps.
    let probe = BesovProbe::with_coarsest(&du.grid, 0.5, 2.0, 1, 8, 3).with_directions(vec![[1, 0]]);
    let grad_zero = core(decay_fit(&ext, &probe))?.slope;
    ensure((grad_zero - 0.5).abs() <= ZERO_EXTENSION_TOL, || format!("zero-extension slope of Du {grad_zero}"))?;

    // u = 1 extended by zero is the indicator of one half.
    let one = GridFunction::from_scalar_fn(&core(GridSpec::rectangle((0.0, 1.0), (0.0, 1.0), [65, 65]))?, |_| 1.0);
    let ind = core(extend(&one, Face::new(0, Side::Low), Parity::Zero))?.field;
    let probe = BesovProbe::dyadic(&ind.grid, 0.5, 2.0, 1).with_directions(vec![[1, 0]]);
    let zero = core(decay_fit(&ind, &probe))?.slope;
    ensure((zero - 0.5).abs() <= ZERO_EXTENSION_TOL, || format!("zero-extension slope {zero}"))?;

    // Odd reflection of the Dirichlet benchmark across x = 0.
    // The reflected face carries a milder kink whose share of the norm fades
    // slowly with h, so this comparison needs small shifts.
    let bp = benchmark_problem(32769)?;
    let ub = solve(&bp)?;
    let probe = BesovProbe::with_coarsest(&ub.grid, 1.25, 2.0, 2, 256, 5);
    let inner = core(v_field_regularity(&ub, &bp.integrand, &probe, BoundaryHandling::InteriorShrink))?.slope;
    let odd = core(v_field_regularity(&ub, &bp.integrand, &probe, BoundaryHandling::OddReflect { face: Face::new(0, Side::Low) }))?.slope;
    ensure((inner - odd).abs() <= ODD_EXTENSION_TOL, || format!("odd reflection slope {odd} vs interior {inner}"))?;

    // Cancellation identity on random parity-valid pairs.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let parity = if rng.gen_bool(0.5) { Parity::Odd } else { Parity::Even };
        let comps = rng.gen_range(1..=3);
        let half = 64;
        let dt = 1.0 / half as f64;
        let make = |rng: &mut ChaCha8Rng| {
            let coef: Vec<Vec<f64>> = (0..comps).map(|_| (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
            SymmetricSamples::from_fn(half, dt, comps, parity, move |t| {
                coef.iter()
                    .map(|c| match parity {
                        Parity::Odd => c[0] * t + c[1] * t.powi(3) + c[2] * (3.0 * t).sin() + c[3] * t.powi(5),
                        _ => c[0] + c[1] * t * t + c[2] * (2.0 * t).cos() + c[3] * t.powi(4),
                    })
                    .collect()
            })
        };
        let sigma = make(&mut rng);
        let tau = make(&mut rng);
        let h = rng.gen_range(1..=half / 2) as f64 * dt;
        let res = core(cancellation_check(&sigma, &tau, h))?;
        let scale = h * sigma.values.iter().fold(0.0f64, |m, v| m.max(v.abs())) * tau.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(res / scale);
    }
    ensure(worst <= CANCELLATION_TOL, || format!("cancellation residual {worst:e} x scale"))?;
    Ok(format!("zero-extension slope {zero:.3} (Du {grad_zero:.3}); odd {odd:.3} vs interior {inner:.3}; cancellation {worst:.1e} x scale"))
}

// ---------------------------------------------------------------- 6

fn smoothing_operator() -> Result<String, String> {
    let g = core(GridSpec::rectangle((0.0, 1.0), (0.0, 1.0), [41, 41]))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let center = [0.5, 0.5];
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let affine = move |x: &[f64]| vec![a[0] * x[0] + a[1] * x[1] + a[2], a[3] * x[0] + a[4] * x[1] + a[5]];
        let u = GridFunction::from_fn(&g, 2, &affine);
        let t = core(smooth_annulus(&u, &center, 0.1, 0.4))?;
        let rel = t.field.sub(&u).map_err(|e| e.to_string())?.max_abs() / u.max_abs();
        worst = worst.max(rel);
    }
    ensure(worst <= SMOOTHING_REL_TOL, || format!("affine reproduction error {worst:e}"))?;
    let u = GridFunction::from_scalar_fn(&g, |x| (5.0 * x[0]).sin() * (3.0 * x[1]).cos() + x[0] * x[0]);
    let t = core(smooth_annulus(&u, &center, 0.1, 0.4))?;
    let mut changed_outside = 0;
    for k in 0..g.num_nodes() {
        let x = g.point(k);
        let r = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
        if (r <= 0.1 || r >= 0.4) && t.field.node(k) != u.node(k) {
            changed_outside += 1;
        }
    }
    ensure(changed_outside == 0, || format!("{changed_outside} nodes outside the annulus changed"))?;
    Ok(format!("20 affine maps reproduced to {worst:.1e}; field unchanged outside the annulus"))
}

// ---------------------------------------------------------------- 7

const PS: [f64; 4] = [1.5, 2.0, 3.0, 4.0];
const MUS: [f64; 2] = [0.0, 1.0];
const YOUNG_DELTAS: [f64; 2] = [0.5, 0.1];
const DOF: usize = 4;

/// Oracle `|V_{p,μ}(z)|²` written out from the definition.
fn e(p: f64, mu: f64, z: &[f64]) -> f64 {
    let s: f64 = z.iter().map(|v| v * v).sum();
    if s == 0.0 {
        0.0
    } else {
        (mu * mu + s).powf((p - 2.0) / 2.0) * s
    }
}

fn v_vec(p: f64, mu: f64, z: &[f64]) -> Vec<f64> {
    let s: f64 = z.iter().map(|v| v * v).sum();
    let f = if s == 0.0 && mu == 0.0 { 0.0 } else { (mu * mu + s).powf((p - 2.0) / 4.0) };
    z.iter().map(|v| f * v).collect()
}

fn sample(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..DOF).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = 10f64.powf(rng.gen_range(-3.0..3.0));
    v.into_iter().map(|x| x * r / n).collect()
}

/// Extreme ratios of each inequality over `count` samples.
#[derive(Default, Clone, Copy, Debug)]
struct Ratios {
    diff_lo: f64,
    diff_hi: f64,
    young: [f64; 2],
    pq: [f64; 2],
}

fn measure(p: f64, mu: f64, count: usize, seed: u64) -> Ratios {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Ratios { diff_lo: f64::INFINITY, ..Default::default() };
    let pc = p / (p - 1.0);
    for _ in 0..count {
        let (z1, z2) = (sample(&mut rng), sample(&mut rng));
        let (v1, v2) = (v_vec(p, mu, &z1), v_vec(p, mu, &z2));
        let lhs: f64 = v1.iter().zip(&v2).map(|(a, b)| (a - b).powi(2)).sum();
        let s = mu * mu + z1.iter().chain(&z2).map(|v| v * v).sum::<f64>();
        let d2: f64 = z1.iter().zip(&z2).map(|(a, b)| (a - b).powi(2)).sum();
        if d2 > 0.0 {
            let q = lhs / (s.powf((p - 2.0) / 2.0) * d2);
            r.diff_lo = r.diff_lo.min(q);
            r.diff_hi = r.diff_hi.max(q);
        }
        let zw: f64 = z1.iter().zip(&z2).map(|(a, b)| a * b).sum::<f64>().abs();
        let nz = [z1.iter().map(|v| v * v).sum::<f64>().sqrt()];
        let nw = [z2.iter().map(|v| v * v).sum::<f64>().sqrt()];
        for (i, d) in YOUNG_DELTAS.iter().enumerate() {
            let rest = zw - d * e(p, mu, &nz);
            let dual = d.powf(1.0 - p.min(2.0)) * e(pc, mu.powf(p - 1.0), &nw);
            if rest > 0.0 {
                r.young[i] = r.young[i].max(rest / dual);
            }
        }
        for (i, q) in [p + 1.0, 2.0 * p].iter().enumerate() {
            let ep = e(p, mu, &z1);
            r.pq[i] = r.pq[i].max(e(*q, mu, &z1) / (ep + ep.powf(q / p)));
        }
    }
    r
}

/// Constants `(diff_lo, diff_hi, young δ=0.5, young δ=0.1, pq q=p+1, pq q=2p)` per `(p, μ)`,
/// from `measure(p, μ, 1_000_000, 2024)`, widened by 10%.
const V_CONSTANTS: [[[f64; 6]; 2]; 4] = [
    [[0.6308, 1.3155, 0.4567, 5.1160, 1.0989, 1.1000], [0.6328, 1.3154, 0.4559, 4.9209, 1.0999, 1.1000]],
    [[0.9091, 1.1000, 0.2739, 0.2728, 1.0989, 1.1000], [0.9091, 1.1000, 0.2739, 0.2728, 1.0989, 1.1000]],
    [[0.6428, 1.6854, 0.2992, 0.1329, 1.0989, 1.1000], [0.6428, 1.6735, 0.2962, 0.2713, 1.0989, 1.2913]],
    [[0.4545, 2.0770, 0.3241, 0.1119, 1.0989, 1.1000], [0.4545, 2.0566, 0.3209, 0.2713, 1.0989, 1.4667]],
];

fn calibrate_v_constants() {
    for p in PS {
        let row: Vec<String> = MUS
            .iter()
            .map(|&mu| {
                let r = measure(p, mu, 1_000_000, 2024);
                format!("[{:.4}, {:.4}, {:.4}, {:.4}, {:.4}, {:.4}]", r.diff_lo / 1.1, r.diff_hi * 1.1, r.young[0] * 1.1, r.young[1] * 1.1, r.pq[0] * 1.1, r.pq[1] * 1.1)
            })
            .collect();
        println!("    [{}],", row.join(", "));
    }
}

fn v_inequalities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (ip, &p) in PS.iter().enumerate() {
        for (im, &mu) in MUS.iter().enumerate() {
            let c = V_CONSTANTS[ip][im];
            let r = measure(p, mu, 1000, 100 + ip as u64 * 10 + im as u64);
            let tag = format!("p={p} mu={mu}");
            ensure(r.diff_lo >= c[0] && r.diff_hi <= c[1], || format!("{tag}: difference ratios [{}, {}] outside [{}, {}]", r.diff_lo, r.diff_hi, c[0], c[1]))?;
            ensure(r.young[0] <= c[2] && r.young[1] <= c[3], || format!("{tag}: Young constants {:?}", r.young))?;
            ensure(r.pq[0] <= c[4] && r.pq[1] <= c[5], || format!("{tag}: p-q comparison {:?}", r.pq))?;
            let add_c = 4f64.max(2f64.powf(p));
            for _ in 0..1000 {
                let (z1, z2) = (sample(&mut rng), sample(&mut rng));
                let sum: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a + b).collect();
                let (a, b, s) = (e(p, mu, &z1), e(p, mu, &z2), e(p, mu, &sum));
                ensure(s <= add_c * (a + b) * (1.0 + 1e-12), || format!("{tag}: additivity fails"))?;
                let lambda = 10f64.powf(rng.gen_range(-2.0..2.0));
                let scaled: Vec<f64> = z1.iter().map(|v| lambda * v).collect();
                let el = e(p, mu, &scaled);
                let (lo, hi) = ((lambda * lambda).min(lambda.powf(p)), (lambda * lambda).max(lambda.powf(p)));
                ensure(el >= lo * a * (1.0 - 1e-12) && el <= hi * a * (1.0 + 1e-12), || format!("{tag}: homogeneity fails at lambda={lambda}"))?;
                let lib = v_norm_sq(p, mu, &z1);
                ensure((lib - a).abs() <= 1e-12 * a, || format!("{tag}: library |V|^2 {lib} vs {a}"))?;
                let vl = v_transform(p, mu, &z1);
                let vo = v_vec(p, mu, &z1);
                ensure(vl.iter().zip(&vo).all(|(x, y)| (x - y).abs() <= 1e-12 * y.abs().max(1e-300)), || format!("{tag}: library V differs"))?;
            }
        }
    }
    let worst = gradient_fd_check()?;
    Ok(format!("8 (p, mu) pairs x 1000 samples within fixture constants; grad_z vs FD {worst:.1e}"))
}

fn gradient_fd_check() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for p in PS {
        let mut params = GrowthParams::new(p, p + 0.5, 2, 2);
        params.mu = 1.0;
        let specs = [
            core(IntegrandSpec::p_energy(params))?,
            core(IntegrandSpec::double_phase(params, Coefficient::PowerDistance { center: vec![0.0, 0.0], exponent: 1.0, scale: 1.0 }))?,
            core(IntegrandSpec::radial_modulated(params, Coefficient::Constant { value: 0.5 }))?,
            core(core(IntegrandSpec::p_energy(params))?.regularized(0.01))?,
        ];
        for spec in &specs {
            for _ in 0..50 {
                let x = [rng.gen_range(0.1..1.0), rng.gen_range(0.1..1.0)];
                let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let g = core(spec.grad_z(&x, &z))?;
                let mut fd = vec![0.0; 4];
                for i in 0..4 {
                    let h = 1e-5;
                    let (mut a, mut b) = (z.clone(), z.clone());
                    a[i] += h;
                    b[i] -= h;
                    fd[i] = (core(spec.eval(&x, &a))? - core(spec.eval(&x, &b))?) / (2.0 * h);
                }
                let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
                worst = worst.max(num / den);
            }
        }
    }
    ensure(worst <= GRADIENT_FD_TOL, || format!("grad_z vs finite differences {worst:e}"))?;
    Ok(worst)
}

// ---------------------------------------------------------------- 8

fn classifier() -> Result<String, String> {
    let pr = benchmark_problem(1025)?;
    let u = solve(&pr)?;
    let sample: Vec<Vec<f64>> = (0..=40).map(|i| vec![i as f64 / 40.0]).collect();
    let map = core(classify_points(&u, &pr, 0.1, 2.0, 0.25, 0.5, &sample))?;
    let bad: Vec<f64> = map.points.iter().filter(|p| (p.x[0] < 0.45 || p.x[0] > 0.55) && p.label != PointLabel::Regular).map(|p| p.x[0]).collect();
    ensure(bad.is_empty(), || format!("points classified singular away from 1/2: {bad:?}"))?;

    let mut params = GrowthParams::new(2.5, 2.5, 2, 1);
    params.mu = 0.5;
    let f = core(IntegrandSpec::p_energy(params))?;
    let g = core(GridSpec::rectangle((0.0, 1.0), (0.0, 1.0), [33, 33]))?;
    let aff = GridFunction::from_scalar_fn(&g, |x| 0.7 * x[0] - 1.3 * x[1] + 0.2);
    let prob = ProblemSpec::new(f, g.clone(), BoundaryMode::Dirichlet);
    let grid_pts: Vec<Vec<f64>> = (0..=10).flat_map(|i| (0..=10).map(move |j| vec![i as f64 / 10.0, j as f64 / 10.0])).collect();
    let amap = core(classify_points(&aff, &prob, 0.1, 2.0, 0.25, 0.5, &grid_pts))?;
    ensure(amap.regular_count() == grid_pts.len(), || format!("affine field: {} of {} regular", amap.regular_count(), grid_pts.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let r: f64 = rng.gen_range(0.1..0.5);
        let e = core(excess(&aff, &x, r, 0.5, 2.5, 0.5))?;
        ensure(e == r, || format!("affine excess {e} != R = {r}"))?;
    }
    Ok(format!("{} of 41 benchmark points regular, none singular outside [0.45, 0.55]; affine fields regular, excess = R^(2 beta) exactly", map.regular_count()))
}

// ---------------------------------------------------------------- 9

fn gap_probe() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let auto = run_preset("gap-autonomous", "gap", &dir.path().join("a"))?;
    let ind = auto["gap_indicator"].as_f64().ok_or("missing gap_indicator")?;
    let tol = auto["tolerance"].as_f64().ok_or("missing tolerance")?;
    ensure(ind <= tol, || format!("autonomous p=q gap indicator {ind} above {tol}"))?;
    let dp = run_preset("gap-double-phase", "gap", &dir.path().join("b"))?;
    let slope = dp["solve"]["penalty_decay_slope"].as_f64().ok_or("missing penalty slope")?;
    ensure(slope < 0.0, || format!("penalty slope {slope} is not negative"))?;
    let cb = run_preset("gap-checkerboard", "gap", &dir.path().join("c"))?;
    ensure(dir.path().join("c/gap.json").exists() && cb.get("gap_indicator").is_some(), || "checkerboard report missing".into())?;
    Ok(format!(
        "autonomous indicator {ind:.3e} <= {tol:.1e}; double-phase penalty slope {slope:.3}; checkerboard indicator {}",
        cb["gap_indicator"].as_f64().map_or("n/a".into(), |v| format!("{v:.3}"))
    ))
}

// ---------------------------------------------------------------- 10

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
    }
    out
}

fn reproducibility() -> Result<String, String> {
    let list = Command::new(bin()).arg("presets").output().map_err(|e| e.to_string())?;
    let names: Vec<String> = String::from_utf8_lossy(&list.stdout).lines().map(str::to_string).collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for name in &names {
        let (a, b) = (dir.path().join(format!("{name}-1")), dir.path().join(format!("{name}-2")));
        for out in [&a, &b] {
            let st = Command::new(bin()).arg("run").arg(preset_path(name)).arg("--output").arg(out).output().map_err(|e| e.to_string())?;
            ensure(st.status.success(), || format!("{name}: {}", String::from_utf8_lossy(&st.stderr)))?;
        }
        let (ta, tb) = (read_tree(&a), read_tree(&b));
        ensure(ta == tb, || format!("{name}: artifacts differ between runs"))?;
        ensure(ta.contains_key(Path::new("manifest.json")), || format!("{name}: no manifest"))?;
        files += ta.len();
    }
    Ok(format!("{} presets, {files} artifacts byte-identical across reruns", names.len()))
}

fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.cfg"))
}
