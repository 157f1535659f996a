//! Interface shared by the one- and two-dimensional controlled chains.

use smallvec::SmallVec;

use crate::model::{Control, ProblemSpec};

/// Sparse transition row: `(target state, probability)` pairs plus the
/// interpolation interval assigned to the step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub q_h: f64,
    pub dt: f64,
    pub targets: SmallVec<[(usize, f64); 8]>,
}

impl Transition {
    pub fn total_mass(&self) -> f64 {
        self.targets.iter().map(|&(_, p)| p).sum()
    }

    /// `Σ p · v[target]`, summed in target order.
    #[inline]
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.targets.iter().map(|&(s, p)| p * values[s]).sum()
    }
}

/// A controlled Markov chain on a finite grid with absorbing eradication
/// states. States are flattened as `regime * nodes + node`.
pub trait ControlledChain: Sync {
    fn spec(&self) -> &ProblemSpec;

    fn n_states(&self) -> usize;

    fn n_controls(&self) -> usize;

    fn control(&self, u: usize) -> Control;

    fn is_absorbed(&self, s: usize) -> bool;

    fn regime_of(&self, s: usize) -> usize;

    /// Infected fraction at state `s`.
    fn infected(&self, s: usize) -> f64;

    fn transition(&self, s: usize, u: usize) -> Transition;

    fn running_cost(&self, s: usize, u: usize) -> f64;

    /// Starting iterate for value iteration: the discounted cost of holding
    /// the worst state under the maximal control forever.
    fn initial_value(&self, s: usize) -> f64;

    fn discount_rate(&self) -> f64 {
        self.spec().delta
    }
}

/// Chain wrapper holding every transition row in memory.
pub struct CachedChain<'a, C: ControlledChain> {
    inner: &'a C,
    rows: Vec<Transition>,
}

impl<'a, C: ControlledChain> CachedChain<'a, C> {
    pub fn new(inner: &'a C) -> Self {
        use rayon::prelude::*;
        let nu = inner.n_controls();
        let rows = (0..inner.n_states() * nu)
            .into_par_iter()
            .map(|k| inner.transition(k / nu, k % nu))
            .collect();
        CachedChain { inner, rows }
    }
}

impl<C: ControlledChain> ControlledChain for CachedChain<'_, C> {
    fn spec(&self) -> &ProblemSpec {
        self.inner.spec()
    }
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }
    fn n_controls(&self) -> usize {
        self.inner.n_controls()
    }
    fn control(&self, u: usize) -> Control {
        self.inner.control(u)
    }
    fn is_absorbed(&self, s: usize) -> bool {
        self.inner.is_absorbed(s)
    }
    fn regime_of(&self, s: usize) -> usize {
        self.inner.regime_of(s)
    }
    fn infected(&self, s: usize) -> f64 {
        self.inner.infected(s)
    }
    fn transition(&self, s: usize, u: usize) -> Transition {
        self.rows[s * self.inner.n_controls() + u].clone()
    }
    fn running_cost(&self, s: usize, u: usize) -> f64 {
        self.inner.running_cost(s, u)
    }
    fn initial_value(&self, s: usize) -> f64 {
        self.inner.initial_value(s)
    }
}

/// One materialized row of a transition law.
#[derive(Clone, Debug, PartialEq)]
pub struct LawRow {
    pub state: usize,
    pub control: usize,
    pub transition: Transition,
}

/// Every `(state, control)` row of a chain, for auditing and export.
/// Absorbed states are included; their rows describe the law the chain would
/// follow if it were not stopped.
#[derive(Clone, Debug, Default)]
pub struct TransitionLaw {
    pub rows: Vec<LawRow>,
}

impl TransitionLaw {
    pub fn build<C: ControlledChain>(chain: &C) -> Self {
        use rayon::prelude::*;
        let nu = chain.n_controls();
        let rows = (0..chain.n_states() * nu)
            .into_par_iter()
            .map(|k| {
                let (state, control) = (k / nu, k % nu);
                LawRow {
                    state,
                    control,
                    transition: chain.transition(state, control),
                }
            })
            .collect();
        TransitionLaw { rows }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StochasticViolation {
    pub state: usize,
    pub control: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct StochasticReport {
    pub rows_checked: usize,
    pub worst_sum_error: f64,
    pub violations: Vec<StochasticViolation>,
}

impl StochasticReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Row-sum tolerance for a transition row to count as a distribution.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Checks that every row is a probability distribution with a positive
/// interpolation interval.
pub fn check_stochastic(law: &TransitionLaw) -> StochasticReport {
    let mut report = StochasticReport::default();
    for row in &law.rows {
        report.rows_checked += 1;
        let t = &row.transition;
        let mut fail = |reason: String| {
            report.violations.push(StochasticViolation {
                state: row.state,
                control: row.control,
                reason,
            })
        };
        if let Some(&(target, p)) = t.targets.iter().find(|&&(_, p)| !(0.0..=1.0).contains(&p)) {
            fail(format!("probability {p} to state {target} outside [0, 1]"));
        }
        let err = (t.total_mass() - 1.0).abs();
        report.worst_sum_error = report.worst_sum_error.max(err);
        if !(err <= ROW_SUM_TOL) {
            fail(format!("row sums to {}", t.total_mass()));
        }
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            fail(format!("interpolation interval {} not positive", t.dt));
        }
    }
    report
}
