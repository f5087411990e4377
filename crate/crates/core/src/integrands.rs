//! Integrands with `(p,q)`-growth, the `V`-function calculus and sampled
//! verification of the structural hypotheses.
//!
//! Gradients `z ∈ ℝ^{m×n}` are stored row-major as flat slices of length
//! `m·n` (entry `(c, k)` at index `c·n + k`). Points `x` are slices of
//! length `n`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Growth and ellipticity constants of an integrand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthParams {
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub mu: f64,
    pub nu: f64,
    pub lambda: f64,
    pub n: usize,
    pub m: usize,
}

impl GrowthParams {
    pub fn new(p: f64, q: f64, n: usize, m: usize) -> Self {
        Self { p, q, alpha: 1.0, mu: 1.0, nu: 1.0, lambda: 1.0, n, m }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { p, q, alpha, mu, nu, lambda, n, m } = *self;
        if !(p > 1.0 && q >= p && q.is_finite()) {
            return invalid(format!("need 1 < p <= q < inf, got p={p}, q={q}"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return invalid(format!("alpha must lie in (0,1], got {alpha}"));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return invalid(format!("mu must be finite and >= 0, got {mu}"));
        }
        if !(nu > 0.0 && nu <= lambda && lambda.is_finite()) {
            return invalid(format!("need 0 < nu <= Lambda, got nu={nu}, Lambda={lambda}"));
        }
        if !(1..=2).contains(&n) || m == 0 {
            return invalid(format!("need n in {{1,2}} and m >= 1, got n={n}, m={m}"));
        }
        Ok(())
    }

    /// Entries in a gradient matrix.
    pub fn dof(&self) -> usize {
        self.m * self.n
    }
}

/// Spatial coefficient `a(x)` with a declared Hölder exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `scale · |x − center|^exponent`.
    PowerDistance { center: Vec<f64>, exponent: f64, scale: f64 },
    /// `low` for `x[axis] < at`, `high` otherwise.
    Step { axis: usize, at: f64, low: f64, high: f64 },
    /// `scale · |x|^exponent · max(0, −2x₁x₂/|x|²)`: vanishes on the first and
    /// third quadrants. In one dimension, `scale · max(0, −x)^exponent`.
    Checkerboard { exponent: f64, scale: f64 },
}

impl Coefficient {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::PowerDistance { center, exponent, scale } => {
                let r2: f64 = x.iter().zip(center.iter().chain(std::iter::repeat(&0.0))).map(|(a, b)| (a - b) * (a - b)).sum();
                scale * r2.sqrt().powf(*exponent)
            }
            Coefficient::Step { axis, at, low, high } => {
                if x[*axis] < *at {
                    *low
                } else {
                    *high
                }
            }
            Coefficient::Checkerboard { exponent, scale } => {
                if x.len() == 1 {
                    return scale * (-x[0]).max(0.0).powf(*exponent);
                }
                let r2 = x[0] * x[0] + x[1] * x[1];
                if r2 == 0.0 {
                    return 0.0;
                }
                let ang = (-2.0 * x[0] * x[1] / r2).max(0.0);
                scale * r2.sqrt().powf(*exponent) * ang
            }
        }
    }

    /// Hölder exponent the coefficient is declared to have, `None` if discontinuous.
    pub fn holder_exponent(&self) -> Option<f64> {
        match self {
            Coefficient::Constant { .. } => Some(1.0),
            Coefficient::PowerDistance { exponent, .. } | Coefficient::Checkerboard { exponent, .. } => Some(exponent.min(1.0)),
            Coefficient::Step { low, high, .. } => (low == high).then_some(1.0),
        }
    }

    /// Hyperplanes `(axis, coordinate)` across which the coefficient jumps.
    pub fn jumps(&self) -> Vec<(usize, f64)> {
        match self {
            Coefficient::Step { axis, at, low, high } if low != high => vec![(*axis, *at)],
            _ => Vec::new(),
        }
    }
}

/// Integrand supplied by the caller.
pub trait UserIntegrand: Send + Sync {
    fn value(&self, x: &[f64], z: &[f64]) -> f64;

    /// Defaults to central differences of [`UserIntegrand::value`].
    fn gradient(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let mut zz = z.to_vec();
        for i in 0..z.len() {
            let h = 1e-6 * (1.0 + z[i].abs());
            zz[i] = z[i] + h;
            let fp = self.value(x, &zz);
            zz[i] = z[i] - h;
            let fm = self.value(x, &zz);
            zz[i] = z[i];
            out[i] = (fp - fm) / (2.0 * h);
        }
    }

    fn is_radial(&self) -> bool {
        false
    }
}

/// Tag naming the integrand family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrandKind {
    PEnergy,
    DoublePhase,
    RadialModulated,
    Shifted,
    Regularized,
    UserDefined,
}

#[derive(Clone)]
enum Form {
    /// `weight · e_{p,μ}(z)`.
    PEnergy { weight: f64 },
    /// `e_{p,μ}(z) + a(x) e_{q,μ}(z)`.
    DoublePhase,
    /// `(1 + a(x)) e_{p,μ}(z)`.
    RadialModulated,
    Shifted { base: Arc<IntegrandSpec>, z0: Vec<f64>, grad0: Option<Vec<f64>> },
    Regularized { base: Arc<IntegrandSpec>, epsilon: f64 },
    User(Arc<dyn UserIntegrand>),
}

/// A `(p,q)`-growth integrand `F(x, z)`.
#[derive(Clone)]
pub struct IntegrandSpec {
    pub params: GrowthParams,
    pub coefficient: Option<Coefficient>,
    /// Box `[a_k, b_k]` on which `x` may be sampled.
    pub domain: Vec<(f64, f64)>,
    form: Form,
}

impl fmt::Debug for IntegrandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrandSpec")
            .field("kind", &self.kind())
            .field("params", &self.params)
            .field("coefficient", &self.coefficient)
            .field("epsilon", &self.epsilon())
            .field("shift_point", &self.shift_point())
            .finish()
    }
}

/// `|V_{p,μ}(z)|² = (μ² + |z|²)^{(p−2)/2} |z|²` given `s = |z|²`.
pub fn e_pmu(p: f64, mu: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    if mu == 0.0 {
        return s.powf(p / 2.0);
    }
    (mu * mu + s).powf((p - 2.0) / 2.0) * s
}

/// Scalar factor `g` with `∂_z e_{p,μ}(z) = g · z`, given `s = |z|²`.
fn e_pmu_factor(p: f64, mu: f64, s: f64) -> f64 {
    if mu == 0.0 {
        if s == 0.0 {
            return 0.0;
        }
        return p * s.powf((p - 2.0) / 2.0);
    }
    let m2 = mu * mu;
    2.0 * (m2 + s).powf((p - 4.0) / 2.0) * (m2 + 0.5 * p * s)
}

/// `(e_{p,μ}(z), g)` with `∂_z e_{p,μ}(z) = g·z`, sharing one power evaluation.
#[inline]
fn e_pmu_both(p: f64, mu: f64, s: f64) -> (f64, f64) {
    let t = mu * mu + s;
    if t == 0.0 {
        return (0.0, 0.0);
    }
    let b = t.powf((p - 4.0) / 2.0);
    (b * t * s, 2.0 * b * (mu * mu + 0.5 * p * s))
}

fn norm_sq(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}

/// `V_{p,μ}(z) = (μ² + |z|²)^{(p−2)/4} z`.
pub fn v_transform(p: f64, mu: f64, z: &[f64]) -> Vec<f64> {
    let s = norm_sq(z);
    if s == 0.0 {
        return vec![0.0; z.len()];
    }
    let f = (mu * mu + s).powf((p - 2.0) / 4.0);
    z.iter().map(|v| f * v).collect()
}

/// `|V_{p,μ}(z)|²`.
pub fn v_norm_sq(p: f64, mu: f64, z: &[f64]) -> f64 {
    e_pmu(p, mu, norm_sq(z))
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        invalid(format!("non-finite {what}"))
    }
}

impl IntegrandSpec {
    fn builtin(params: GrowthParams, form: Form, coefficient: Option<Coefficient>) -> Result<Self> {
        params.validate()?;
        let domain = vec![(0.0, 1.0); params.n];
        Ok(Self { params, coefficient, domain, form })
    }

    /// `e_{p,μ}(z) = |V_{p,μ}(z)|²`.
    pub fn p_energy(params: GrowthParams) -> Result<Self> {
        Self::builtin(params, Form::PEnergy { weight: 1.0 }, None)
    }

    /// `weight · e_{p,μ}(z)`; `weight = 1/p` gives the usual `|z|^p/p` normalization.
    pub fn weighted_p_energy(params: GrowthParams, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return invalid(format!("weight must be positive, got {weight}"));
        }
        Self::builtin(params, Form::PEnergy { weight }, None)
    }

    /// `e_{p,μ}(z) + a(x) e_{q,μ}(z)` with `a ≥ 0`.
    pub fn double_phase(params: GrowthParams, a: Coefficient) -> Result<Self> {
        Self::builtin(params, Form::DoublePhase, Some(a))
    }

    /// `(1 + a(x)) e_{p,μ}(z)` with `a ≥ 0`.
    pub fn radial_modulated(params: GrowthParams, a: Coefficient) -> Result<Self> {
        Self::builtin(params, Form::RadialModulated, Some(a))
    }

    pub fn user_defined(params: GrowthParams, f: Arc<dyn UserIntegrand>) -> Result<Self> {
        Self::builtin(params, Form::User(f), None)
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Result<Self> {
        if domain.len() != self.params.n || domain.iter().any(|(a, b)| !(a < b)) {
            return invalid("domain must be a non-degenerate box of dimension n");
        }
        self.domain = domain;
        Ok(self)
    }

    pub fn kind(&self) -> IntegrandKind {
        match self.form {
            Form::PEnergy { .. } => IntegrandKind::PEnergy,
            Form::DoublePhase => IntegrandKind::DoublePhase,
            Form::RadialModulated => IntegrandKind::RadialModulated,
            Form::Shifted { .. } => IntegrandKind::Shifted,
            Form::Regularized { .. } => IntegrandKind::Regularized,
            Form::User(_) => IntegrandKind::UserDefined,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self.form {
            Form::Regularized { epsilon, .. } => Some(epsilon),
            _ => None,
        }
    }

    pub fn shift_point(&self) -> Option<&[f64]> {
        match &self.form {
            Form::Shifted { z0, .. } => Some(z0),
            _ => None,
        }
    }

    pub fn base(&self) -> Option<&IntegrandSpec> {
        match &self.form {
            Form::Shifted { base, .. } | Form::Regularized { base, .. } => Some(base),
            _ => None,
        }
    }

    /// Depends on `z` only through `|z|`.
    pub fn is_radial(&self) -> bool {
        match &self.form {
            Form::PEnergy { .. } | Form::DoublePhase | Form::RadialModulated => true,
            Form::Regularized { base, .. } => base.is_radial(),
            Form::Shifted { z0, base, .. } => z0.iter().all(|v| *v == 0.0) && base.is_radial(),
            Form::User(u) => u.is_radial(),
        }
    }

    /// Independent of `x`.
    pub fn is_autonomous(&self) -> bool {
        match &self.form {
            Form::PEnergy { .. } => true,
            Form::DoublePhase | Form::RadialModulated => {
                matches!(self.coefficient, None | Some(Coefficient::Constant { .. }))
            }
            Form::Shifted { base, .. } | Form::Regularized { base, .. } => base.is_autonomous(),
            Form::User(_) => false,
        }
    }

    fn coef(&self, x: &[f64]) -> f64 {
        self.coefficient.as_ref().map_or(0.0, |c| c.eval(x))
    }

    /// `F(x, z)` without input validation. Used on hot paths.
    pub fn value(&self, x: &[f64], z: &[f64]) -> f64 {
        let GrowthParams { p, q, mu, .. } = self.params;
        match &self.form {
            Form::PEnergy { weight } => weight * e_pmu(p, mu, norm_sq(z)),
            Form::DoublePhase => {
                let s = norm_sq(z);
                e_pmu(p, mu, s) + self.coef(x) * e_pmu(q, mu, s)
            }
            Form::RadialModulated => (1.0 + self.coef(x)) * e_pmu(p, mu, norm_sq(z)),
            Form::Shifted { base, z0, grad0 } => {
                let zs: Vec<f64> = z.iter().zip(z0).map(|(a, b)| a + b).collect();
                let g0 = match grad0 {
                    Some(g) => g.clone(),
                    None => {
                        let mut g = vec![0.0; z.len()];
                        base.gradient(x, z0, &mut g);
                        g
                    }
                };
                let lin: f64 = g0.iter().zip(z).map(|(a, b)| a * b).sum();
                base.value(x, &zs) - base.value(x, z0) - lin
            }
            Form::Regularized { base, epsilon } => base.value(x, z) + epsilon * norm_sq(z).powf(q / 2.0),
            Form::User(u) => u.value(x, z),
        }
    }

    /// `∂_z F(x, z)` written into `out`, without input validation.
    pub fn gradient(&self, x: &[f64], z: &[f64], out: &mut [f64]) {
        let GrowthParams { p, q, mu, .. } = self.params;
        let scale_into = |f: f64, out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(z) {
                *o = f * v;
            }
        };
        match &self.form {
            Form::PEnergy { weight } => scale_into(weight * e_pmu_factor(p, mu, norm_sq(z)), out),
            Form::DoublePhase => {
                let s = norm_sq(z);
                scale_into(e_pmu_factor(p, mu, s) + self.coef(x) * e_pmu_factor(q, mu, s), out)
            }
            Form::RadialModulated => scale_into((1.0 + self.coef(x)) * e_pmu_factor(p, mu, norm_sq(z)), out),
            Form::Shifted { base, z0, .. } => {
                let zs: Vec<f64> = z.iter().zip(z0).map(|(a, b)| a + b).collect();
                base.gradient(x, &zs, out);
                let mut g0 = vec![0.0; z.len()];
                base.gradient(x, z0, &mut g0);
                for (o, g) in out.iter_mut().zip(g0) {
                    *o -= g;
                }
            }
            Form::Regularized { base, epsilon } => {
                base.gradient(x, z, out);
                let s = norm_sq(z);
                if s > 0.0 {
                    let f = epsilon * q * s.powf((q - 2.0) / 2.0);
                    for (o, v) in out.iter_mut().zip(z) {
                        *o += f * v;
                    }
                }
            }
            Form::User(u) => u.gradient(x, z, out),
        }
    }

    /// `F(x, z)` and `∂_zF(x, z)` (written to `out`) in one pass.
    pub fn value_and_gradient(&self, x: &[f64], z: &[f64], out: &mut [f64]) -> f64 {
        let GrowthParams { p, q, mu, .. } = self.params;
        let scaled = |f: f64, out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(z) {
                *o = f * v;
            }
        };
        match &self.form {
            Form::PEnergy { weight } => {
                let (e, g) = e_pmu_both(p, mu, norm_sq(z));
                scaled(weight * g, out);
                weight * e
            }
            Form::DoublePhase => {
                let s = norm_sq(z);
                let a = self.coef(x);
                let (ep, gp) = e_pmu_both(p, mu, s);
                let (eq, gq) = if a != 0.0 { e_pmu_both(q, mu, s) } else { (0.0, 0.0) };
                scaled(gp + a * gq, out);
                ep + a * eq
            }
            Form::RadialModulated => {
                let a = 1.0 + self.coef(x);
                let (e, g) = e_pmu_both(p, mu, norm_sq(z));
                scaled(a * g, out);
                a * e
            }
            Form::Regularized { base, epsilon } => {
                let v = base.value_and_gradient(x, z, out);
                let s = norm_sq(z);
                if s == 0.0 {
                    return v;
                }
                let r = s.powf((q - 2.0) / 2.0);
                let f = epsilon * q * r;
                for (o, zz) in out.iter_mut().zip(z) {
                    *o += f * zz;
                }
                v + epsilon * r * s
            }
            _ => {
                self.gradient(x, z, out);
                self.value(x, z)
            }
        }
    }

    fn check_inputs(&self, x: &[f64], z: &[f64]) -> Result<()> {
        if x.len() != self.params.n || z.len() != self.params.dof() {
            return invalid(format!(
                "expected x of length {} and z of length {}, got {} and {}",
                self.params.n,
                self.params.dof(),
                x.len(),
                z.len()
            ));
        }
        check_finite("x", x)?;
        check_finite("z", z)
    }

    /// `F(x, z)`. Rejects non-finite input.
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_inputs(x, z)?;
        Ok(self.value(x, z))
    }

    /// `∂_z F(x, z)`. Rejects non-finite input.
    pub fn grad_z(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, z)?;
        let mut out = vec![0.0; z.len()];
        self.gradient(x, z, &mut out);
        Ok(out)
    }

    /// `F_{z₀}(x, z) = F(x, z+z₀) − F(x, z₀) − ∂_zF(x, z₀)·z`.
    pub fn shifted(&self, z0: &[f64]) -> Result<Self> {
        if z0.len() != self.params.dof() {
            return invalid("shift point has the wrong shape");
        }
        check_finite("z0", z0)?;
        let base = Arc::new(self.clone());
        let grad0 = if self.is_autonomous() {
            let mut g = vec![0.0; z0.len()];
            let x0: Vec<f64> = self.domain.iter().map(|(a, _)| *a).collect();
            self.gradient(&x0, z0, &mut g);
            Some(g)
        } else {
            None
        };
        Ok(Self {
            params: self.params,
            coefficient: None,
            domain: self.domain.clone(),
            form: Form::Shifted { base, z0: z0.to_vec(), grad0 },
        })
    }

    /// `F(x, z) + ε|z|^q`.
    pub fn regularized(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return invalid(format!("epsilon must be positive, got {epsilon}"));
        }
        Ok(Self {
            params: self.params,
            coefficient: None,
            domain: self.domain.clone(),
            form: Form::Regularized { base: Arc::new(self.clone()), epsilon },
        })
    }

    /// Copy with `μ` replaced throughout the wrapper chain.
    pub fn with_mu(&self, mu: f64) -> Self {
        let mut out = self.clone();
        out.params.mu = mu;
        out.form = match &self.form {
            Form::Shifted { base, z0, .. } => {
                let b = base.with_mu(mu);
                return b.shifted(z0).expect("shape already validated");
            }
            Form::Regularized { base, epsilon } => Form::Regularized { base: Arc::new(base.with_mu(mu)), epsilon: *epsilon },
            other => other.clone(),
        };
        out
    }
}

/// One sampled hypothesis check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    /// Largest sampled ratio (or smallest, for lower bounds; see `lower_bound`).
    pub worst_ratio: f64,
    pub bound: f64,
    /// The check is `worst_ratio > bound` instead of `worst_ratio ≤ bound · slack`.
    pub lower_bound: bool,
    pub passed: bool,
    pub samples: usize,
    pub note: Option<String>,
}

/// Result of [`verify_growth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<HypothesisCheck>,
    pub passed: bool,
    pub warnings: Vec<String>,
    /// Smallest sampled value of the ellipticity quotient
    /// `[F(z) − F(w) − ∂F(w)·(z−w)] / (ν (μ²+|z|²+|w|²)^{(p−2)/2} |z−w|²)`.
    pub ellipticity_quotient_min: f64,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Multiplicative slack on declared constants.
pub const SLACK: f64 = 1.05;

/// Draws `|z|` log-uniformly in `[1e−3, 1e3]` with a uniform direction.
pub fn sample_matrix<R: Rng>(rng: &mut R, dof: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dof).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let nrm = norm_sq(&v).sqrt();
        if nrm > 1e-12 {
            let r = 10f64.powf(rng.gen_range(-3.0..=3.0));
            return v.into_iter().map(|c| c * r / nrm).collect();
        }
    }
}

fn sample_point<R: Rng>(rng: &mut R, domain: &[(f64, f64)]) -> Vec<f64> {
    domain.iter().map(|(a, b)| rng.gen_range(*a..=*b)).collect()
}

struct Worst {
    value: f64,
    count: usize,
    bad: usize,
}

impl Worst {
    fn max() -> Self {
        Self { value: f64::NEG_INFINITY, count: 0, bad: 0 }
    }
    fn min() -> Self {
        Self { value: f64::INFINITY, count: 0, bad: 0 }
    }
    fn push_max(&mut self, r: f64) {
        if r.is_finite() {
            self.value = self.value.max(r);
            self.count += 1;
        } else {
            self.bad += 1;
        }
    }
    fn push_min(&mut self, r: f64) {
        if r.is_finite() {
            self.value = self.value.min(r);
            self.count += 1;
        } else {
            self.bad += 1;
        }
    }
}

fn upper_check(name: &str, w: Worst, bound: f64) -> HypothesisCheck {
    let finite = w.bad == 0;
    let value = if w.count == 0 { 0.0 } else { w.value };
    HypothesisCheck {
        name: name.into(),
        worst_ratio: value,
        bound,
        lower_bound: false,
        passed: finite && value <= bound * SLACK,
        samples: w.count,
        note: (!finite).then(|| format!("{} samples produced non-finite values", w.bad)),
    }
}

fn lower_check(name: &str, w: Worst) -> HypothesisCheck {
    let finite = w.bad == 0;
    HypothesisCheck {
        name: name.into(),
        worst_ratio: w.value,
        bound: 0.0,
        lower_bound: true,
        passed: finite && w.count > 0 && w.value > 0.0,
        samples: w.count,
        note: (!finite).then(|| format!("{} samples produced non-finite values", w.bad)),
    }
}

/// Samples `(x, z)` and pairs thereof and records the worst constant ratio
/// for each structural hypothesis.
///
/// Checks, with `Λ` and `ν` from `spec.params`:
/// * `convexity`: `F − ν|V_{p,μ}|²` midpoint-convex (ratio of second
///   differences, bound 1);
/// * `growth`: `|F(x,z)| ≤ Λ(1+|z|²)^{q/2}`;
/// * `holder_x`: `|F(x,z) − F(y,z)| ≤ Λ|x−y|^α (1+|z|²)^{q/2}`;
/// * `holder_x_gradient`: same for `∂_zF` with exponent `(q−1)/2`;
/// * `coercivity`: `F(x,z) ≥ c(|z|^p − 1)` with measured `c > 0`;
/// * `fenchel`: `∂_zF·z ≥ c(|z|^p + |∂_zF|^{q'} − 1)` with measured `c > 0`.
///
/// Point pairs are drawn at log-uniform distances and, for coefficients with
/// declared jumps, additionally straddle each jump at distances down to 1e−12.
pub fn verify_growth(spec: &IntegrandSpec, sample_count: usize, seed: u64) -> VerificationReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let GrowthParams { p, q, alpha, mu, nu, lambda, n, .. } = spec.params;
    let dof = spec.params.dof();
    let qc = q / (q - 1.0);
    let mut warnings = Vec::new();
    if mu == 0.0 {
        warnings.push("mu = 0: the integrand is not differentiable at z = 0 and cannot be used by the solver".into());
    }

    let (mut convex, mut growth, mut hx, mut hg) = (Worst::max(), Worst::max(), Worst::max(), Worst::max());
    let (mut coer, mut fen, mut ell) = (Worst::min(), Worst::min(), Worst::min());
    let mut g = vec![0.0; dof];
    let mut g2 = vec![0.0; dof];
    let jumps: Vec<(usize, f64)> = spec.coefficient.as_ref().map(|c| c.jumps()).unwrap_or_default();

    for i in 0..sample_count {
        let x = sample_point(&mut rng, &spec.domain);
        let z = sample_matrix(&mut rng, dof);
        let w = sample_matrix(&mut rng, dof);
        let sz = norm_sq(&z);
        let fz = spec.value(&x, &z);
        let fw = spec.value(&x, &w);
        spec.gradient(&x, &z, &mut g);

        growth.push_max(fz.abs() / (1.0 + sz).powf(q / 2.0));

        let zp = sz.powf(p / 2.0);
        if zp > 2.0 {
            coer.push_min(fz / (zp - 1.0));
        }
        let gz: f64 = g.iter().zip(&z).map(|(a, b)| a * b).sum();
        let denom = zp + norm_sq(&g).sqrt().powf(qc) - 1.0;
        if denom > 1.0 {
            fen.push_min(gz / denom);
        }

        let mid: Vec<f64> = z.iter().zip(&w).map(|(a, b)| 0.5 * (a + b)).collect();
        let dd_f = fz + fw - 2.0 * spec.value(&x, &mid);
        let dd_v = nu * (v_norm_sq(p, mu, &z) + v_norm_sq(p, mu, &w) - 2.0 * v_norm_sq(p, mu, &mid));
        let scale = fz.abs() + fw.abs() + 1e-300;
        if dd_f > 1e-10 * scale {
            convex.push_max(dd_v / dd_f);
        } else if dd_v > 1e-9 * scale {
            convex.push_max(f64::MAX);
        }

        spec.gradient(&x, &w, &mut g2);
        let diff: Vec<f64> = z.iter().zip(&w).map(|(a, b)| a - b).collect();
        let lin: f64 = g2.iter().zip(&diff).map(|(a, b)| a * b).sum();
        let wt = nu * (mu * mu + sz + norm_sq(&w)).powf((p - 2.0) / 2.0) * norm_sq(&diff);
        if wt > 1e-200 {
            ell.push_min((fz - fw - lin) / wt);
        }

        // x-regularity on a pair at a log-uniform distance.
        let mut y = x.clone();
        let dist = 10f64.powf(rng.gen_range(-8.0..=0.0));
        let k = i % n;
        let (a, b) = spec.domain[k];
        y[k] = if x[k] + dist <= b { x[k] + dist } else { (x[k] - dist).max(a) };
        let mut pairs = vec![(x.clone(), y)];
        for &(axis, at) in &jumps {
            let d = 10f64.powf(-((i % 12) as f64) - 1.0);
            let mut lo = x.clone();
            let mut hi = x.clone();
            lo[axis] = at - d / 2.0;
            hi[axis] = at + d / 2.0;
            pairs.push((lo, hi));
        }
        for (x1, x2) in pairs {
            let dxy = x1.iter().zip(&x2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if dxy == 0.0 {
                continue;
            }
            let f1 = spec.value(&x1, &z);
            let f2 = spec.value(&x2, &z);
            hx.push_max((f1 - f2).abs() / (dxy.powf(alpha) * (1.0 + sz).powf(q / 2.0)));
            spec.gradient(&x1, &z, &mut g);
            spec.gradient(&x2, &z, &mut g2);
            let gd = g.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            hg.push_max(gd / (dxy.powf(alpha) * (1.0 + sz).powf((q - 1.0) / 2.0)));
        }
    }

    let checks = vec![
        upper_check("convexity", convex, 1.0),
        upper_check("growth", growth, lambda),
        upper_check("holder_x", hx, lambda),
        upper_check("holder_x_gradient", hg, lambda),
        lower_check("coercivity", coer),
        lower_check("fenchel", fen),
    ];
    let passed = checks.iter().all(|c| c.passed);
    VerificationReport { checks, passed, warnings, ellipticity_quotient_min: ell.value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(p: f64, q: f64, mu: f64) -> GrowthParams {
        GrowthParams { mu, ..GrowthParams::new(p, q, 2, 1) }
    }

    #[test]
    fn p_energy_values() {
        let f = IntegrandSpec::p_energy(params(2.0, 2.0, 1.0)).unwrap();
        assert_eq!(f.eval(&[0.5, 0.5], &[0.0, 0.0]).unwrap(), 0.0);
        let f4 = IntegrandSpec::p_energy(params(4.0, 4.0, 0.0)).unwrap();
        assert_eq!(f4.eval(&[0.5, 0.5], &[2.0, 0.0]).unwrap(), 16.0);
    }

    #[test]
    fn double_phase_with_zero_coefficient() {
        let f = IntegrandSpec::double_phase(params(2.0, 3.0, 0.0), Coefficient::Constant { value: 0.0 }).unwrap();
        assert_eq!(f.eval(&[0.1, 0.2], &[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn gradients_closed_form() {
        let f2 = IntegrandSpec::p_energy(params(2.0, 2.0, 0.0)).unwrap();
        assert_eq!(f2.grad_z(&[0.0, 0.0], &[0.3, -1.5]).unwrap(), vec![0.6, -3.0]);
        let f3 = IntegrandSpec::p_energy(params(3.0, 3.0, 0.0)).unwrap();
        assert_relative_eq!(f3.grad_z(&[0.0, 0.0], &[1.0, 0.0]).unwrap()[0], 3.0, epsilon = 1e-15);
        let f = IntegrandSpec::p_energy(params(3.0, 3.0, 0.5)).unwrap();
        assert_eq!(f.grad_z(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_non_finite() {
        let f = IntegrandSpec::p_energy(params(2.0, 2.0, 1.0)).unwrap();
        assert!(f.eval(&[0.0, 0.0], &[f64::NAN, 0.0]).is_err());
        assert!(f.grad_z(&[f64::INFINITY, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn v_transform_values() {
        assert_eq!(v_transform(4.0, 0.0, &[2.0, 0.0]), vec![4.0, 0.0]);
        assert_eq!(v_transform(2.0, 3.0, &[0.7, -0.2]), vec![0.7, -0.2]);
        assert_eq!(v_transform(3.0, 1.0, &[0.0, 0.0]), vec![0.0, 0.0]);
        assert_relative_eq!(v_norm_sq(3.0, 0.0, &[0.0, 2.0]), 8.0, epsilon = 1e-14);
    }

    #[test]
    fn shifted_is_normalized() {
        let f = IntegrandSpec::double_phase(params(2.0, 3.0, 1.0), Coefficient::Constant { value: 0.5 }).unwrap();
        let z0 = [0.8, -1.2];
        let fs = f.shifted(&z0).unwrap();
        assert_eq!(fs.eval(&[0.3, 0.3], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(fs.grad_z(&[0.3, 0.3], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn regularized_rejects_nonpositive_epsilon() {
        let f = IntegrandSpec::p_energy(params(2.0, 2.0, 1.0)).unwrap();
        assert!(f.regularized(0.0).is_err());
        assert!(f.regularized(-1.0).is_err());
        let r = f.regularized(0.1).unwrap();
        assert_eq!(r.epsilon(), Some(0.1));
        assert_relative_eq!(r.eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 1.1, epsilon = 1e-15);
    }

    #[test]
    fn step_coefficient_declares_jump() {
        let c = Coefficient::Step { axis: 0, at: 0.5, low: 0.0, high: 1.0 };
        assert_eq!(c.holder_exponent(), None);
        assert_eq!(c.jumps(), vec![(0, 0.5)]);
    }

    #[test]
    fn mu_zero_warns() {
        let f = IntegrandSpec::p_energy(params(3.0, 3.0, 0.0)).unwrap();
        let r = verify_growth(&f, 50, 1);
        assert!(!r.warnings.is_empty());
    }
}
