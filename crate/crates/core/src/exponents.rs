//! Closed-form regularity exponents, admissible growth ranges and the
//! bootstrap recursion that produces them.
//!
//! Everything here is plain arithmetic on a [`Scenario`]. The recursion in
//! [`iterate_deltas`] reproduces the differentiability bootstrap step by step,
//! including the auxiliary integrability exponents, so that its limit can be
//! compared against the closed form returned by [`predicted_delta`].

use serde::{Deserialize, Serialize};

/// Boundary condition attached to a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Mixed,
}

/// Fine index of the Besov class the forcing belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineIndex {
    One,
    Infinity,
}

/// Regularity descriptor of the forcing term.
///
/// `beta = None` is the base class (`f` merely integrable enough); a value
/// `beta ∈ [α, 2]` selects the stronger data class used for `p ≥ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataClass {
    pub beta: Option<f64>,
    pub fine_index: FineIndex,
}

impl Default for DataClass {
    fn default() -> Self {
        Self { beta: None, fine_index: FineIndex::Infinity }
    }
}

/// Structural description of a variational problem, enough to evaluate every
/// exponent formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub alpha: f64,
    pub data: DataClass,
    pub bc: BoundaryKind,
    /// `F(x, z) = F₀(x, |z|)`.
    pub radial: bool,
    /// `F` does not depend on `x`.
    pub autonomous: bool,
    /// Smoothness index of the Neumann datum, when one is prescribed.
    pub g_regularity: Option<f64>,
    pub homogeneous_boundary: bool,
    /// The minimiser is already known to lie in `W^{1,q}`.
    pub apriori_w1q: bool,
}

impl Scenario {
    /// Interior scenario with base data and Dirichlet boundary.
    pub fn new(n: usize, p: f64, q: f64, alpha: f64) -> Self {
        Self {
            n,
            p,
            q,
            alpha,
            data: DataClass::default(),
            bc: BoundaryKind::Dirichlet,
            radial: false,
            autonomous: false,
            g_regularity: None,
            homogeneous_boundary: true,
            apriori_w1q: false,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.data.beta = Some(beta);
        self
    }

    /// Checks `1 < p ≤ q`, `α ∈ (0,1]`, `β ∈ [α,2]` and `n ≥ 1`.
    pub fn validate(&self) -> crate::Result<()> {
        if self.n == 0 {
            return crate::error::invalid("n must be at least 1");
        }
        if !(self.p > 1.0 && self.q >= self.p && self.q.is_finite()) {
            return crate::error::invalid(format!("need 1 < p <= q, got p={}, q={}", self.p, self.q));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return crate::error::invalid(format!("alpha must lie in (0,1], got {}", self.alpha));
        }
        if let Some(b) = self.data.beta {
            if !(b >= self.alpha && b <= 2.0) {
                return crate::error::invalid(format!("beta must lie in [alpha, 2], got {b}"));
            }
        }
        Ok(())
    }

    fn nf(&self) -> f64 {
        self.n as f64
    }

    /// Hölder exponent in `x` actually used by the formulas.
    pub fn effective_alpha(&self) -> f64 {
        if self.autonomous {
            1.0
        } else {
            self.alpha
        }
    }

    /// Uses the strong-data recursion: `p ≥ 2` with a declared `β`.
    fn strong_data(&self) -> bool {
        self.p >= 2.0 && self.data.beta.is_some()
    }
}

/// Hölder conjugate `p/(p−1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// Upper bounds on `q` under which the various results are available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QBounds {
    /// `(n+α)p/n`.
    pub basic: f64,
    /// `np/(n−α)`, valid once the minimiser is known to be `W^{1,q}`.
    pub apriori: f64,
    /// `max{np/(n−1), p+1}` for `x`-independent integrands with `p ≥ 2`.
    pub autonomous: f64,
    /// `min{np/(n−1), p+1}`.
    pub partial_regularity: f64,
    pub basic_satisfied: bool,
    pub apriori_satisfied: bool,
    pub autonomous_satisfied: bool,
    pub partial_regularity_satisfied: bool,
}

/// `np/(n−s)` with the convention `+∞` when `n ≤ s`.
fn sobolev_ratio(n: f64, p: f64, s: f64) -> f64 {
    if n - s <= 0.0 {
        f64::INFINITY
    } else {
        n * p / (n - s)
    }
}

/// Evaluates all four named growth bounds and whether `sc.q` lies strictly
/// below each of them.
pub fn q_range(sc: &Scenario) -> QBounds {
    let n = sc.nf();
    let (p, q, a) = (sc.p, sc.q, sc.effective_alpha());
    let basic = (n + a) * p / n;
    let apriori = sobolev_ratio(n, p, a);
    let np1 = sobolev_ratio(n, p, 1.0);
    let autonomous = np1.max(p + 1.0);
    let partial = np1.min(p + 1.0);
    QBounds {
        basic,
        apriori,
        autonomous,
        partial_regularity: partial,
        basic_satisfied: q < basic,
        apriori_satisfied: q < apriori,
        autonomous_satisfied: sc.autonomous && p >= 2.0 && q < autonomous,
        partial_regularity_satisfied: q < partial,
    }
}

/// Named results a scenario falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Applicability {
    /// Interior differentiability, `q < (n+α)p/n`.
    InteriorBasic,
    /// Interior differentiability with an a-priori `W^{1,q}` bound.
    InteriorApriori,
    /// Interior differentiability for `x`-independent integrands.
    InteriorAutonomous,
    /// Global differentiability for radial integrands with homogeneous data.
    BoundaryHomogeneous,
    /// Global differentiability for Neumann problems with inhomogeneous data.
    NeumannInhomogeneous,
}

/// Inequality evaluated by [`boundary_regularity_condition`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub holds: bool,
    pub inequality: String,
    pub rule: String,
}

/// Closed-form predictions for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub q_upper_bounds: QBounds,
    pub delta_predicted: f64,
    /// Set when the global estimate is capped by an unquantified `δ₀ > 1/2`.
    pub delta_neumann_cap: bool,
    pub singular_dim_bound: f64,
    pub boundary_regular_condition: ConditionRecord,
    pub applicable: Vec<Applicability>,
    pub notes: Vec<String>,
}

/// The differentiability exponent `δ` of `V_{p,μ}(Du)` predicted for `sc`.
pub fn delta_formula(sc: &Scenario) -> f64 {
    let a = sc.effective_alpha();
    let pc = conjugate(sc.p);
    match sc.data.beta {
        Some(beta) if sc.p >= 2.0 => (pc * beta / 2.0).min(a),
        _ => a / 2.0 * pc.min(2.0),
    }
}

/// Full closed-form report: bounds, `δ`, singular-set dimension bound,
/// boundary regularity condition and which results apply.
pub fn predicted_delta(sc: &Scenario) -> ExponentReport {
    let bounds = q_range(sc);
    let mut notes = Vec::new();
    if sc.data.beta.is_some() && sc.p < 2.0 {
        notes.push("strong data class only sharpens the estimate for p >= 2; base formula used".into());
    }
    let mut applicable = Vec::new();
    if bounds.basic_satisfied {
        applicable.push(Applicability::InteriorBasic);
    }
    if sc.apriori_w1q && bounds.apriori_satisfied {
        applicable.push(Applicability::InteriorApriori);
    }
    if bounds.autonomous_satisfied {
        applicable.push(Applicability::InteriorAutonomous);
    }
    let mut cap = false;
    if bounds.basic_satisfied && sc.radial {
        match sc.bc {
            BoundaryKind::Neumann if !sc.homogeneous_boundary => {
                applicable.push(Applicability::NeumannInhomogeneous);
                cap = true;
                notes.push("global exponent capped by a non-quantified delta_0 > 1/2".into());
            }
            _ if sc.homogeneous_boundary => applicable.push(Applicability::BoundaryHomogeneous),
            _ => notes.push("inhomogeneous Dirichlet data: interior estimate only".into()),
        }
    }
    if applicable.is_empty() {
        notes.push("q lies outside every admissible range".into());
    }
    let (dim, dim_note) = singular_dim_bound_with_note(sc);
    if let Some(nt) = dim_note {
        notes.push(nt);
    }
    ExponentReport {
        q_upper_bounds: bounds,
        delta_predicted: delta_formula(sc),
        delta_neumann_cap: cap,
        singular_dim_bound: dim,
        boundary_regular_condition: boundary_regularity_condition(sc),
        applicable,
        notes,
    }
}

/// Upper bound on the Hausdorff dimension of the singular set, clamped at 0.
pub fn singular_dim_bound(sc: &Scenario) -> f64 {
    singular_dim_bound_with_note(sc).0
}

fn singular_dim_bound_with_note(sc: &Scenario) -> (f64, Option<String>) {
    let n = sc.nf();
    let a = sc.effective_alpha();
    let pc = conjugate(sc.p);
    let raw = match sc.data.beta {
        Some(beta) if sc.p >= 2.0 => n - (2.0 * a).min(pc * beta),
        _ => n - a * pc.min(2.0),
    };
    let mut note = None;
    let bound_q = ((n + a) * sc.p / n).min(sc.p + 1.0);
    if sc.q > bound_q || !sc.radial || !sc.homogeneous_boundary {
        note = Some("dimension bound hypotheses (q <= min{(n+a)p/n, p+1}, radial, homogeneous data) not all met".into());
    }
    if raw < 0.0 {
        let msg = format!("dimension bound {raw} clamped at 0");
        note = Some(match note {
            Some(prev) => format!("{prev}; {msg}"),
            None => msg,
        });
    }
    (raw.max(0.0), note)
}

/// Whether `H^{n−1}`-almost every boundary point is predicted regular.
pub fn boundary_regularity_condition(sc: &Scenario) -> ConditionRecord {
    let pc = conjugate(sc.p);
    let a = sc.effective_alpha();
    if sc.bc == BoundaryKind::Neumann && !sc.homogeneous_boundary {
        let beta = sc.g_regularity.or(sc.data.beta).unwrap_or(a);
        let thr = 0.5f64.max(1.0 / pc);
        let q_ok = sc.q < ((sc.nf() + a) * sc.p / sc.nf()).min(sc.p + 1.0);
        return ConditionRecord {
            holds: a > 0.5 && beta > thr && q_ok,
            inequality: format!("alpha={a} > 1/2, beta={beta} > max{{1/2, 1/p'}}={thr}, q < min{{(n+a)p/n, p+1}}"),
            rule: "neumann_inhomogeneous".into(),
        };
    }
    if let (Some(beta), true) = (sc.data.beta, sc.p >= 2.0) {
        let thr = 1.0 / pc;
        return ConditionRecord {
            holds: a > 0.5 && beta > thr,
            inequality: format!("alpha={a} > 1/2 and beta={beta} > 1/p'={thr}"),
            rule: "strong_data".into(),
        };
    }
    let thr = 0.5f64.max(1.0 / pc);
    ConditionRecord {
        holds: a > thr,
        inequality: format!("alpha={a} > max{{1/2, 1/p'}}={thr}"),
        rule: if sc.autonomous { "autonomous".into() } else { "base".into() },
    }
}

/// Outcome of [`embedding_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingVerdict {
    Holds,
    Fails,
    Inapplicable,
}

/// Besov embedding test `B^{s,p}_{q} ↪ B^{s₁,p₁}_{q₁}` on an `n`-dimensional
/// domain: `s − n/p ≥ s₁ − n/p₁`, strict when `q > q₁`.
pub fn embedding_check(s: f64, p: f64, s1: f64, p1: f64, q_fine: f64, q1_fine: f64, n: usize) -> EmbeddingVerdict {
    if !(1.0 <= p && p <= p1 && 0.0 < s1 && s1 < s && s < 2.0) {
        return EmbeddingVerdict::Inapplicable;
    }
    let n = n as f64;
    let lhs = s - n / p;
    let rhs = s1 - n / p1;
    let ok = if q_fine <= q1_fine { lhs >= rhs } else { lhs > rhs };
    if ok {
        EmbeddingVerdict::Holds
    } else {
        EmbeddingVerdict::Fails
    }
}

/// Which of the two bootstrap alternatives a step used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Integrability gain forces a loss of smoothness (`τ₂ > 2`, `σ < δ`).
    A,
    /// Quadratic integrability suffices (`τ₂ ≤ 2`, `σ = δ`).
    B,
}

/// One outer step `δ_k → δ_{k+1}` of the bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStep {
    pub k: usize,
    pub delta: f64,
    pub branch: Branch,
    pub tau1: f64,
    pub tau2: f64,
    pub sigma: f64,
    /// The auxiliary shrink parameter, always taken in the limit `0⁺`.
    pub eps: f64,
    /// Inner sequence `δ_{k,j}` (starts at `δ_k`, ends at the first value in branch B).
    pub inner: Vec<f64>,
    pub j0: usize,
    pub xi: f64,
    pub theta: f64,
    pub kappa: f64,
}

/// Complete record of [`iterate_deltas`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub applicable: bool,
    pub note: String,
    pub deltas: Vec<f64>,
    pub steps: Vec<IterationStep>,
    pub kappa_sequence: Vec<f64>,
    pub kappa_infinity: f64,
    pub limit: f64,
    pub predicted: f64,
}

/// Recursion regime.
#[derive(Clone, Copy, PartialEq)]
enum Regime {
    /// `p ≥ 2`, base data: divisor `p`.
    Super,
    /// `p < 2`: divisor 2.
    Sub,
    /// `p ≥ 2` with strong data.
    Strong(f64),
}

struct Recursion<'a> {
    sc: &'a Scenario,
    regime: Regime,
}

impl Recursion<'_> {
    fn n(&self) -> f64 {
        self.sc.nf()
    }

    /// `τ₁` with `1/τ₁ = 1/2 − δ/n`, returned as its reciprocal.
    fn inv_tau1(&self, delta: f64) -> f64 {
        (0.5 - delta / self.n()).max(0.0)
    }

    /// Reciprocal of the critical exponent `τ₂,₀` (at `ε = 0`).
    fn inv_tau2_0(&self, delta: f64) -> f64 {
        let (p, q) = (self.sc.p, self.sc.q);
        let it1 = self.inv_tau1(delta);
        match self.regime {
            Regime::Super => p / 2.0 - (q - 1.0) * it1,
            Regime::Sub | Regime::Strong(_) => 1.0 - (2.0 * q / p - 1.0) * it1,
        }
    }

    /// Threshold `δ*`: branch A iff `δ < δ*`.
    fn threshold(&self) -> f64 {
        let (n, p, q) = (self.n(), self.sc.p, self.sc.q);
        match self.regime {
            Regime::Super => n * (q - p) / (2.0 * (q - 1.0)),
            Regime::Sub | Regime::Strong(_) => n * (q - p) / (2.0 * q - p),
        }
    }

    fn branch_by_tau(&self, delta: f64) -> Branch {
        let inv = self.inv_tau2_0(delta);
        if inv < 0.5 {
            Branch::A
        } else {
            Branch::B
        }
    }

    fn branch_by_threshold(&self, delta: f64) -> Branch {
        if delta < self.threshold() {
            Branch::A
        } else {
            Branch::B
        }
    }

    /// `σ = δ + n(1/τ₂ − 1/2)` in branch A, `δ` otherwise.
    fn sigma(&self, delta: f64) -> f64 {
        match self.branch_by_tau(delta) {
            Branch::A => delta + self.n() * (self.inv_tau2_0(delta) - 0.5),
            Branch::B => delta,
        }
    }

    fn divisor(&self) -> f64 {
        match self.regime {
            Regime::Super => self.sc.p,
            _ => 2.0,
        }
    }

    /// Improvement obtained from a known exponent `d` (the `α`-branch).
    fn gain(&self, d: f64) -> f64 {
        self.sc.effective_alpha() / 2.0 + d.min(self.sigma(d)) / self.divisor()
    }

    /// Target value `δ_{k+1}` guaranteed once branch B is reached from `δ_k`.
    fn target(&self, delta: f64) -> f64 {
        let a = self.sc.effective_alpha();
        match self.regime {
            Regime::Super => a / 2.0 + delta / self.sc.p,
            Regime::Sub => a / 2.0 + delta / 2.0,
            Regime::Strong(beta) => 1f64.min(beta / 2.0 + delta / self.sc.p).min(a / 2.0 + delta / 2.0),
        }
    }

    fn theta(&self, xi_inv: f64) -> f64 {
        let (p, q) = (self.sc.p, self.sc.q);
        let denom = p / q - xi_inv;
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        match self.regime {
            Regime::Super => (q - p) / (q * (q - 1.0)) / denom,
            _ => p * (q - p) / (q * (2.0 * q - p)) / denom,
        }
    }

    fn kappa(&self, theta: f64) -> f64 {
        let (p, q) = (self.sc.p, self.sc.q);
        if !theta.is_finite() {
            return f64::INFINITY;
        }
        match self.regime {
            Regime::Super => 1.0 / p + (q - 1.0) / p * theta,
            _ => 0.5 + (2.0 * q - p) / (2.0 * p) * theta,
        }
    }

    fn xi_inv(&self, delta: f64) -> f64 {
        ((self.n() - 2.0 * delta) / self.n()).max(0.0)
    }
}

fn regime_of(sc: &Scenario) -> Regime {
    if sc.p < 2.0 {
        Regime::Sub
    } else if sc.strong_data() {
        Regime::Strong(sc.data.beta.unwrap())
    } else {
        Regime::Super
    }
}

/// Whether branch A is selected at `delta`, computed through `τ₂,₀` and
/// through the closed-form threshold. Both must agree.
pub fn branch_cross_check(sc: &Scenario, delta: f64) -> (Branch, Branch) {
    let r = Recursion { sc, regime: regime_of(sc) };
    (r.branch_by_tau(delta), r.branch_by_threshold(delta))
}

/// Limit of `κ_k`: `+∞` when the interpolation exponent degenerates.
pub fn kappa_infinity(sc: &Scenario) -> f64 {
    let r = Recursion { sc, regime: regime_of(sc) };
    r.kappa(r.theta(r.xi_inv(delta_formula(sc))))
}

/// Runs the bootstrap recursion for at most `k_max` outer steps.
///
/// The trace is computed for every scenario; `applicable` is false when `q`
/// is not strictly below `np/(n−α)`.
pub fn iterate_deltas(sc: &Scenario, k_max: usize) -> IterationTrace {
    let r = Recursion { sc, regime: regime_of(sc) };
    let bound = sobolev_ratio(sc.nf(), sc.p, sc.effective_alpha());
    let applicable = sc.validate().is_ok() && sc.q < bound;
    let note = if applicable {
        String::new()
    } else {
        format!("q={} is not below np/(n-alpha)={bound}; recursion shown for reference only", sc.q)
    };
    let mut delta = sc.effective_alpha() / 2.0;
    let mut deltas = vec![delta];
    let mut steps = Vec::new();
    let mut kappas = Vec::new();
    for k in 0..k_max {
        let target = r.target(delta);
        let branch = r.branch_by_tau(delta);
        let it1 = r.inv_tau1(delta);
        let it2 = match branch {
            Branch::A => r.inv_tau2_0(delta),
            Branch::B => 0.5,
        };
        let sigma = r.sigma(delta);
        let mut inner = vec![delta];
        let mut cur = delta;
        if applicable {
            while r.branch_by_tau(cur) == Branch::A && cur < target && inner.len() < 10_000 {
                let next = target.min(r.gain(cur));
                if next <= cur {
                    break;
                }
                cur = next;
                inner.push(cur);
            }
        }
        let next = if r.branch_by_tau(cur) == Branch::B || cur >= target { target } else { cur };
        let xi_inv = r.xi_inv(delta);
        let theta = r.theta(xi_inv);
        let kappa = r.kappa(theta);
        kappas.push(kappa);
        steps.push(IterationStep {
            k,
            delta,
            branch,
            tau1: if it1 > 0.0 { 1.0 / it1 } else { f64::INFINITY },
            tau2: if it2 > 0.0 { 1.0 / it2 } else { f64::INFINITY },
            sigma,
            eps: 0.0,
            j0: inner.len() - 1,
            inner,
            xi: if xi_inv > 0.0 { 1.0 / xi_inv } else { f64::INFINITY },
            theta,
            kappa,
        });
        if !(next > delta) {
            break;
        }
        delta = next;
        deltas.push(delta);
    }
    IterationTrace {
        applicable,
        note,
        limit: delta,
        deltas,
        steps,
        kappa_sequence: kappas,
        kappa_infinity: kappa_infinity(sc),
        predicted: delta_formula(sc),
    }
}
