//! Continuous-time model data for the controlled switching SIS and SIV
//! systems, and evaluation of their coefficient and cost functions.
//!
//! Regimes are indexed from 0 in code. Cost presets that weight terms by the
//! regime label use `ℓ = index + 1`, so regime index 1 carries weight 2.
//!
//! Infected-fraction model (one dimension):
//!
//! ```text
//! dI = b(I, α, C) dt + sqrt(a(I, α)) dw
//! b(i, ℓ, c) = i (λℓ − μℓ − γℓ − λℓ i − c)
//! a(i, ℓ)    = σℓ² i² (1 − i)²
//! ```
//!
//! Vaccination model, reduced to the (I, V) pair since S = 1 − I − V:
//!
//! ```text
//! b1(i, v, ℓ, c)       = λℓ (1 − i − v) i − (μℓ + γℓ + c) i
//! b2(i, v, ℓ, c, p, q) = μℓ q + p (1 − i − v) − (μℓ + εℓ) v
//! a1(i, v, ℓ)          = σℓ² (1 − i − v)² i²
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used when testing that a state lies in its domain.
const DOMAIN_SLACK: f64 = 1e-12;

/// Coefficients of the SDE in one environment regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub mu: f64,
    pub gamma: f64,
    #[serde(rename = "lambda")]
    pub lambda_: f64,
    pub sigma: f64,
    /// Immunity-loss rate. Only the vaccination model reads it and there it
    /// is mandatory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl RegimeSpec {
    pub fn new(mu: f64, gamma: f64, lambda_: f64, sigma: f64) -> Self {
        RegimeSpec {
            mu,
            gamma,
            lambda_,
            sigma,
            epsilon: None,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    #[inline]
    pub fn drift(&self, i: f64, c: f64) -> f64 {
        i * (self.lambda_ - self.mu - self.gamma - self.lambda_ * i - c)
    }

    #[inline]
    pub fn diffusion(&self, i: f64) -> f64 {
        let s = self.sigma * i * (1.0 - i);
        s * s
    }

    #[inline]
    pub fn drift_infected(&self, i: f64, v: f64, c: f64) -> f64 {
        self.lambda_ * (1.0 - i - v) * i - (self.mu + self.gamma + c) * i
    }

    /// Vaccinated-fraction drift. A missing `epsilon` is treated as zero;
    /// callers that need it validate with [`ProblemSpec::require_epsilon`].
    #[inline]
    pub fn drift_vaccinated(&self, i: f64, v: f64, p: f64, q: f64) -> f64 {
        let eps = self.epsilon.unwrap_or(0.0);
        self.mu * q + p * (1.0 - i - v) - (self.mu + eps) * v
    }

    #[inline]
    pub fn diffusion_infected(&self, i: f64, v: f64) -> f64 {
        let s = self.sigma * (1.0 - i - v) * i;
        s * s
    }

    fn validate(&self, k: usize) -> Result<()> {
        let check = |name: &str, x: f64| -> Result<()> {
            if !x.is_finite() {
                return Err(Error::config(
                    format!("regimes[{k}].{name}"),
                    "must be a finite number",
                ));
            }
            if x < 0.0 {
                return Err(Error::config(
                    format!("regimes[{k}].{name}"),
                    format!("{x} is negative; rates must be nonnegative"),
                ));
            }
            Ok(())
        };
        check("mu", self.mu)?;
        check("gamma", self.gamma)?;
        check("lambda", self.lambda_)?;
        check("sigma", self.sigma)?;
        if let Some(eps) = self.epsilon {
            check("epsilon", eps)?;
        }
        Ok(())
    }
}

/// Generator of the regime-switching Markov chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SwitchingGenerator {
    rows: Vec<Vec<f64>>,
}

impl SwitchingGenerator {
    pub const ROW_SUM_TOL: f64 = 1e-12;

    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let g = SwitchingGenerator { rows };
        g.validate()?;
        Ok(g)
    }

    /// Generator of a single regime (no switching).
    pub fn trivial() -> Self {
        SwitchingGenerator {
            rows: vec![vec![0.0]],
        }
    }

    /// Symmetric two-state generator with the given switching rate.
    pub fn symmetric_two_state(rate: f64) -> Result<Self> {
        Self::new(vec![vec![-rate, rate], vec![rate, -rate]])
    }

    pub fn validate(&self) -> Result<()> {
        let m0 = self.rows.len();
        if m0 == 0 {
            return Err(Error::config("generator", "needs at least one regime"));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != m0 {
                return Err(Error::config(
                    format!("generator[{r}]"),
                    format!("has {} entries, expected {m0}", row.len()),
                ));
            }
            let mut sum = 0.0;
            for (c, &x) in row.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::config(
                        format!("generator[{r}][{c}]"),
                        "must be a finite number",
                    ));
                }
                if r != c && x < 0.0 {
                    return Err(Error::config(
                        format!("generator[{r}][{c}]"),
                        format!("off-diagonal rate {x} is negative"),
                    ));
                }
                sum += x;
            }
            let scale = row.iter().map(|x| x.abs()).fold(1.0, f64::max);
            if sum.abs() > Self::ROW_SUM_TOL * scale {
                return Err(Error::config(
                    format!("generator[{r}]"),
                    format!("row sums to {sum}, expected 0"),
                ));
            }
        }
        Ok(())
    }

    pub fn m0(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.rows[from][to]
    }

    /// Total leaving rate `−Λℓℓ`.
    #[inline]
    pub fn exit_rate(&self, from: usize) -> f64 {
        -self.rows[from][from]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// A single control action `(c, p, q)`. The one-dimensional model uses only
/// `c` and keeps `p = q = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub c: f64,
    pub p: f64,
    pub q: f64,
}

impl Control {
    pub fn treatment(c: f64) -> Self {
        Control { c, p: 0.0, q: 0.0 }
    }

    pub fn new(c: f64, p: f64, q: f64) -> Self {
        Control { c, p, q }
    }
}

/// Finite admissible control sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSets {
    pub u: Vec<f64>,
    #[serde(default)]
    pub vp: Vec<f64>,
    #[serde(default)]
    pub vq: Vec<f64>,
}

impl ControlSets {
    pub fn treatment_only(u: Vec<f64>) -> Self {
        ControlSets {
            u,
            vp: Vec::new(),
            vq: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.is_empty() {
            return Err(Error::config("controls.u", "must be nonempty"));
        }
        check_ascending("controls.u", &self.u, 0.0, f64::INFINITY)?;
        if !self.u.contains(&0.0) {
            return Err(Error::config(
                "controls.u",
                "must contain 0 (doing nothing is always admissible)",
            ));
        }
        check_ascending("controls.vp", &self.vp, 0.0, 1.0)?;
        check_ascending("controls.vq", &self.vq, 0.0, 1.0)?;
        Ok(())
    }

    /// Vaccination sets with an empty set read as `{0}`.
    pub fn vp_effective(&self) -> &[f64] {
        if self.vp.is_empty() {
            &[0.0]
        } else {
            &self.vp
        }
    }

    pub fn vq_effective(&self) -> &[f64] {
        if self.vq.is_empty() {
            &[0.0]
        } else {
            &self.vq
        }
    }

    pub fn treatments(&self) -> Vec<Control> {
        self.u.iter().map(|&c| Control::treatment(c)).collect()
    }

    /// All `(c, p, q)` tuples in lexicographic order.
    pub fn tuples(&self) -> Vec<Control> {
        let mut out = Vec::with_capacity(self.u.len() * self.vp_effective().len() * self.vq_effective().len());
        for &c in &self.u {
            for &p in self.vp_effective() {
                for &q in self.vq_effective() {
                    out.push(Control { c, p, q });
                }
            }
        }
        out
    }

    pub fn tuple_count(&self) -> usize {
        self.u.len() * self.vp_effective().len() * self.vq_effective().len()
    }

    /// Position of `(c, p, q)` in [`ControlSets::tuples`], by exact match.
    pub fn tuple_index(&self, ctrl: Control) -> Option<usize> {
        let ic = self.u.iter().position(|&x| x == ctrl.c)?;
        let vp = self.vp_effective();
        let vq = self.vq_effective();
        let ip = vp.iter().position(|&x| x == ctrl.p)?;
        let iq = vq.iter().position(|&x| x == ctrl.q)?;
        Some((ic * vp.len() + ip) * vq.len() + iq)
    }

    /// The maximal controls `(max U, max Vp, max Vq)`.
    pub fn max_control(&self) -> Control {
        let last = |s: &[f64]| s.last().copied().unwrap_or(0.0);
        Control {
            c: last(&self.u),
            p: last(self.vp_effective()),
            q: last(self.vq_effective()),
        }
    }
}

fn check_ascending(field: &str, xs: &[f64], lo: f64, hi: f64) -> Result<()> {
    for (k, &x) in xs.iter().enumerate() {
        if !x.is_finite() || x < lo || x > hi {
            return Err(Error::config(
                format!("{field}[{k}]"),
                format!("{x} outside [{lo}, {hi}]"),
            ));
        }
        if k > 0 && x <= xs[k - 1] {
            return Err(Error::config(
                format!("{field}[{k}]"),
                "entries must be strictly ascending",
            ));
        }
    }
    Ok(())
}

/// Running-cost families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostPreset {
    /// `a0 + a1 i + a2 i c²`
    Poly,
    /// `a0 + a1 ℓ i + a2 ℓ i c²`
    PolyRegime,
    /// `a0 + a1 λℓ (1 − i) i + a2 i c²`
    NewInfection,
    /// `a0 + a1 ℓ i + a2 ℓ i c`
    LinearControl,
    /// `a0 + a1 ℓ i + a2 ℓ i c² + wp p + wq q`
    VaccinationPoly,
    /// Tabulated values, linearly interpolated in `i`.
    CustomTable,
}

/// Tabulated running cost: `values[regime][tuple][node]` at `i_nodes`, where
/// `tuple` indexes [`ControlSets::tuples`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub i_nodes: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl CostTable {
    fn eval(&self, i: f64, regime: usize, tuple: usize) -> f64 {
        let ys = &self.values[regime][tuple];
        let xs = &self.i_nodes;
        if i <= xs[0] {
            return ys[0];
        }
        let n = xs.len();
        if i >= xs[n - 1] {
            return ys[n - 1];
        }
        let k = xs.partition_point(|&x| x <= i) - 1;
        let w = (i - xs[k]) / (xs[k + 1] - xs[k]);
        ys[k] + w * (ys[k + 1] - ys[k])
    }

    fn validate(&self, m0: usize, tuples: usize) -> Result<()> {
        if self.i_nodes.len() < 2 {
            return Err(Error::config("cost.table.i_nodes", "needs at least two nodes"));
        }
        check_ascending("cost.table.i_nodes", &self.i_nodes, 0.0, 1.0)?;
        if self.values.len() != m0 {
            return Err(Error::config(
                "cost.table.values",
                format!("expected {m0} regimes, found {}", self.values.len()),
            ));
        }
        for (r, per_regime) in self.values.iter().enumerate() {
            if per_regime.len() != tuples {
                return Err(Error::config(
                    format!("cost.table.values[{r}]"),
                    format!("expected {tuples} control tuples, found {}", per_regime.len()),
                ));
            }
            for (t, ys) in per_regime.iter().enumerate() {
                if ys.len() != self.i_nodes.len() {
                    return Err(Error::config(
                        format!("cost.table.values[{r}][{t}]"),
                        format!("expected {} values, found {}", self.i_nodes.len(), ys.len()),
                    ));
                }
                if let Some(k) = ys.iter().position(|y| !y.is_finite() || *y < 0.0) {
                    return Err(Error::config(
                        format!("cost.table.values[{r}][{t}][{k}]"),
                        "cost must be finite and nonnegative",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub preset: CostPreset,
    #[serde(default)]
    pub a0: f64,
    #[serde(default)]
    pub a1: f64,
    #[serde(default)]
    pub a2: f64,
    #[serde(default)]
    pub wp: f64,
    #[serde(default)]
    pub wq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<CostTable>,
}

impl CostModel {
    fn weights(preset: CostPreset, a0: f64, a1: f64, a2: f64) -> Self {
        CostModel {
            preset,
            a0,
            a1,
            a2,
            wp: 0.0,
            wq: 0.0,
            table: None,
        }
    }

    pub fn poly(a0: f64, a1: f64, a2: f64) -> Self {
        Self::weights(CostPreset::Poly, a0, a1, a2)
    }

    pub fn poly_regime(a0: f64, a1: f64, a2: f64) -> Self {
        Self::weights(CostPreset::PolyRegime, a0, a1, a2)
    }

    pub fn new_infection(a0: f64, a1: f64, a2: f64) -> Self {
        Self::weights(CostPreset::NewInfection, a0, a1, a2)
    }

    pub fn linear_control(a0: f64, a1: f64, a2: f64) -> Self {
        Self::weights(CostPreset::LinearControl, a0, a1, a2)
    }

    pub fn vaccination_poly(a0: f64, a1: f64, a2: f64, wp: f64, wq: f64) -> Self {
        CostModel {
            wp,
            wq,
            ..Self::weights(CostPreset::VaccinationPoly, a0, a1, a2)
        }
    }

    pub fn custom_table(table: CostTable) -> Self {
        CostModel {
            table: Some(table),
            ..Self::weights(CostPreset::CustomTable, 0.0, 0.0, 0.0)
        }
    }

    /// Zero running cost.
    pub fn zero() -> Self {
        Self::poly(0.0, 0.0, 0.0)
    }

    fn validate(&self, m0: usize, tuples: usize) -> Result<()> {
        for (name, x) in [
            ("a0", self.a0),
            ("a1", self.a1),
            ("a2", self.a2),
            ("wp", self.wp),
            ("wq", self.wq),
        ] {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::config(
                    format!("cost.{name}"),
                    format!("{x} must be finite and nonnegative"),
                ));
            }
        }
        match (&self.preset, &self.table) {
            (CostPreset::CustomTable, Some(t)) => t.validate(m0, tuples),
            (CostPreset::CustomTable, None) => Err(Error::config(
                "cost.table",
                "required by the custom_table preset",
            )),
            (_, Some(_)) => Err(Error::config(
                "cost.table",
                "only allowed with the custom_table preset",
            )),
            _ => Ok(()),
        }
    }
}

/// Complete description of a control problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub regimes: Vec<RegimeSpec>,
    pub generator: SwitchingGenerator,
    pub controls: ControlSets,
    pub cost: CostModel,
    /// Discount rate δ > 0.
    pub delta: f64,
    /// Eradication threshold ξ ∈ (0, 1).
    pub xi: f64,
}

impl ProblemSpec {
    /// Parameters of the two-regime treatment example, with the given cost.
    pub fn example1(cost: CostModel) -> Self {
        ProblemSpec {
            regimes: vec![
                RegimeSpec::new(0.45, 0.35, 2.0, 0.0),
                RegimeSpec::new(0.05, 0.15, 2.4, 1.0),
            ],
            generator: SwitchingGenerator {
                rows: vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
            },
            controls: ControlSets::treatment_only((0..=15).map(|k| k as f64 / 5.0).collect()),
            cost,
            delta: 0.05,
            xi: 0.02,
        }
    }

    /// The vaccination example. Immunity-loss rates are not part of the
    /// published parameter set, so they are passed in.
    pub fn example2(epsilon: [f64; 2]) -> Self {
        let mut spec = Self::example1(CostModel::vaccination_poly(1.0, 1.0, 2.0, 0.1, 0.1));
        for (r, eps) in spec.regimes.iter_mut().zip(epsilon) {
            r.epsilon = Some(eps);
        }
        let v: Vec<f64> = (0..=4).map(|k| k as f64 / 5.0).collect();
        spec.controls.vp = v.clone();
        spec.controls.vq = v;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::config("regimes", "needs at least one regime"));
        }
        for (k, r) in self.regimes.iter().enumerate() {
            r.validate(k)?;
        }
        self.generator.validate()?;
        if self.generator.m0() != self.regimes.len() {
            return Err(Error::config(
                "generator",
                format!(
                    "is {0}x{0} but {1} regimes are defined",
                    self.generator.m0(),
                    self.regimes.len()
                ),
            ));
        }
        self.controls.validate()?;
        self.cost.validate(self.m0(), self.controls.tuple_count())?;
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::config("delta", "discount rate must be positive"));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::config("xi", "eradication threshold must lie in (0, 1)"));
        }
        // every drift, diffusion and transition denominator must stay finite
        let top = self.controls.max_control();
        for (k, r) in self.regimes.iter().enumerate() {
            let scale = r.lambda_ + 2.0 * r.mu + r.gamma + r.epsilon.unwrap_or(0.0) + top.c + top.p + top.q;
            if !(4.0 * scale).is_finite() || !(r.sigma * r.sigma).is_finite() {
                return Err(Error::config(format!("regimes[{k}]"), "rates too large to represent"));
            }
        }
        let f = self.cost_sup();
        if !(f.is_finite() && (f / self.delta).is_finite()) {
            return Err(Error::config("cost", "running cost too large for the discount rate"));
        }
        Ok(())
    }

    /// Checks that every regime has an immunity-loss rate.
    pub fn require_epsilon(&self) -> Result<()> {
        for (k, r) in self.regimes.iter().enumerate() {
            if r.epsilon.is_none() {
                return Err(Error::config(
                    format!("regimes[{k}].epsilon"),
                    "required by the vaccination model (no default)",
                ));
            }
        }
        Ok(())
    }

    pub fn m0(&self) -> usize {
        self.regimes.len()
    }

    fn regime(&self, ell: usize) -> Result<&RegimeSpec> {
        self.regimes.get(ell).ok_or_else(|| {
            Error::Domain(format!("regime index {ell} out of range (m0 = {})", self.m0()))
        })
    }

    pub fn drift_b(&self, i: f64, ell: usize, c: f64) -> Result<f64> {
        check_unit("i", i)?;
        Ok(self.regime(ell)?.drift(i, c))
    }

    pub fn diffusion_a(&self, i: f64, ell: usize) -> Result<f64> {
        check_unit("i", i)?;
        Ok(self.regime(ell)?.diffusion(i))
    }

    pub fn drift_b1(&self, i: f64, v: f64, ell: usize, c: f64) -> Result<f64> {
        check_simplex(i, v)?;
        Ok(self.regime(ell)?.drift_infected(i, v, c))
    }

    pub fn drift_b2(&self, i: f64, v: f64, ell: usize, p: f64, q: f64) -> Result<f64> {
        check_simplex(i, v)?;
        let r = self.regime(ell)?;
        if r.epsilon.is_none() {
            return Err(Error::config(
                format!("regimes[{ell}].epsilon"),
                "required by the vaccination model (no default)",
            ));
        }
        Ok(r.drift_vaccinated(i, v, p, q))
    }

    pub fn diffusion_a1(&self, i: f64, v: f64, ell: usize) -> Result<f64> {
        check_simplex(i, v)?;
        Ok(self.regime(ell)?.diffusion_infected(i, v))
    }

    /// Running cost `F(i, ℓ, c, p, q)`.
    pub fn cost_f(&self, i: f64, ell: usize, c: f64, p: f64, q: f64) -> Result<f64> {
        check_unit("i", i)?;
        self.regime(ell)?;
        let ctrl = Control { c, p, q };
        let tuple = match self.cost.preset {
            CostPreset::CustomTable => Some(self.controls.tuple_index(ctrl).ok_or_else(|| {
                Error::Domain(format!("control {ctrl:?} is not in the control sets"))
            })?),
            _ => None,
        };
        Ok(self.running_cost(i, ell, ctrl, tuple))
    }

    /// Unchecked cost evaluation. `tuple` must be supplied for tabulated costs.
    #[inline]
    pub(crate) fn running_cost(&self, i: f64, ell: usize, ctrl: Control, tuple: Option<usize>) -> f64 {
        let m = &self.cost;
        let w = (ell + 1) as f64;
        let Control { c, p, q } = ctrl;
        match m.preset {
            CostPreset::Poly => m.a0 + m.a1 * i + m.a2 * i * c * c,
            CostPreset::PolyRegime => m.a0 + m.a1 * w * i + m.a2 * w * i * c * c,
            CostPreset::NewInfection => {
                m.a0 + m.a1 * self.regimes[ell].lambda_ * (1.0 - i) * i + m.a2 * i * c * c
            }
            CostPreset::LinearControl => m.a0 + m.a1 * w * i + m.a2 * w * i * c,
            CostPreset::VaccinationPoly => {
                m.a0 + m.a1 * w * i + m.a2 * w * i * c * c + m.wp * p + m.wq * q
            }
            CostPreset::CustomTable => {
                let table = m.table.as_ref().expect("validated custom table");
                table.eval(i, ell, tuple.expect("tuple index for tabulated cost"))
            }
        }
    }

    /// Supremum of the running cost over `[0, 1] × regimes × controls`.
    ///
    /// Every preset is a polynomial whose maximum over `i` is attained at
    /// `0`, `1/2`, `1` or a table node, so evaluating there is exact.
    pub fn cost_sup(&self) -> f64 {
        let mut pts = vec![0.0, 0.5, 1.0];
        if let Some(t) = &self.cost.table {
            pts.extend_from_slice(&t.i_nodes);
        }
        let mut sup: f64 = 0.0;
        for (k, ctrl) in self.controls.tuples().into_iter().enumerate() {
            for ell in 0..self.m0() {
                for &i in &pts {
                    sup = sup.max(self.running_cost(i, ell, ctrl, Some(k)));
                }
            }
        }
        sup
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&x) {
        return Err(Error::Domain(format!("{name} = {x} outside [0, 1]")));
    }
    Ok(())
}

fn check_simplex(i: f64, v: f64) -> Result<()> {
    check_unit("i", i)?;
    check_unit("v", v)?;
    if i + v > 1.0 + DOMAIN_SLACK {
        return Err(Error::Domain(format!("i + v = {} exceeds 1", i + v)));
    }
    Ok(())
}
