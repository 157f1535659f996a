//! Value iteration for the discounted first-exit problem on a controlled
//! chain, and exact evaluation of a fixed policy.
//!
//! One Bellman sweep computes, at every non-absorbed state,
//!
//! ```text
//! V'(s) = min_u [ exp(−δ dt(s,u)) Σ p(s,s'|u) V(s') + F(s,u) dt(s,u) ]
//! ```
//!
//! and keeps `V' = 0` on absorbed states. Each row is summed sequentially in
//! target order, so a sweep is bitwise identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::ControlledChain;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sweep {
    /// Update every state from the previous iterate.
    Jacobi,
    /// Update states in index order, reading values already refreshed in
    /// the current sweep.
    GaussSeidel,
}

impl std::str::FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(Sweep::Jacobi),
            "gauss-seidel" | "gs" => Ok(Sweep::GaussSeidel),
            other => Err(Error::config("sweep", format!("unknown sweep `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitialValue {
    /// Discounted cost of the worst state under maximal controls.
    MaxControl,
    Zero,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub init: InitialValue,
    pub sweep: Sweep,
    /// Stop on `‖ΔV‖∞ / max(1, ‖V‖∞)` instead of the absolute increment.
    pub relative: bool,
    /// Keep every transition row in memory instead of recomputing per sweep.
    pub cache: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iters: 1_000_000,
            init: InitialValue::MaxControl,
            sweep: Sweep::Jacobi,
            relative: false,
            cache: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::config("tol", "must be positive"));
        }
        if self.max_iters < 1 {
            return Err(Error::config("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// Converged (or capped) value iteration output.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Discounted cost per flattened state.
    pub value: Vec<f64>,
    /// Index of the minimizing control per state; 0 on absorbed states.
    pub policy: Vec<usize>,
    pub iterations: usize,
    pub final_increment: f64,
    pub converged: bool,
    /// Sup-norm increment after each sweep.
    pub increments: Vec<f64>,
}

/// Minimizing control index and value at one state. Ties keep the earliest
/// control in the chain's ordering.
#[inline]
fn best_control<C: ControlledChain>(chain: &C, s: usize, values: &[f64]) -> (f64, usize) {
    let delta = chain.discount_rate();
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for u in 0..chain.n_controls() {
        let t = chain.transition(s, u);
        let q = (-delta * t.dt).exp() * t.expect(values) + chain.running_cost(s, u) * t.dt;
        if q < best {
            best = q;
            arg = u;
        }
    }
    (best, arg)
}

/// One Jacobi Bellman sweep.
pub fn bellman_update<C: ControlledChain>(chain: &C, v_in: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    if v_in.len() != chain.n_states() {
        return Err(Error::Domain(format!(
            "value array has {} entries, chain has {} states",
            v_in.len(),
            chain.n_states()
        )));
    }
    if let Some(s) = v_in.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value {} at state {s}", v_in[s])));
    }
    let (v_out, policy) = (0..chain.n_states())
        .into_par_iter()
        .map(|s| {
            if chain.is_absorbed(s) {
                (0.0, 0)
            } else {
                best_control(chain, s, v_in)
            }
        })
        .unzip();
    Ok((v_out, policy))
}

/// Gauss–Seidel sweep in place; returns the sup-norm change.
fn gauss_seidel_sweep<C: ControlledChain>(chain: &C, values: &mut [f64], policy: &mut [usize]) -> f64 {
    let mut inc: f64 = 0.0;
    for s in 0..chain.n_states() {
        if chain.is_absorbed(s) {
            inc = inc.max(values[s].abs());
            values[s] = 0.0;
            policy[s] = 0;
            continue;
        }
        let (v, u) = best_control(chain, s, values);
        inc = inc.max((v - values[s]).abs());
        values[s] = v;
        policy[s] = u;
    }
    inc
}

pub fn initial_values<C: ControlledChain>(chain: &C, init: InitialValue) -> Vec<f64> {
    (0..chain.n_states())
        .map(|s| match init {
            _ if chain.is_absorbed(s) => 0.0,
            InitialValue::MaxControl => chain.initial_value(s),
            InitialValue::Zero => 0.0,
        })
        .collect()
}

/// Iterates Bellman sweeps from `cfg.init` until the increment drops to
/// `cfg.tol` or `cfg.max_iters` is reached.
pub fn value_iterate<C: ControlledChain>(chain: &C, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if cfg.cache {
        let cached = crate::chain::CachedChain::new(chain);
        return iterate_from(&cached, cfg, initial_values(chain, cfg.init));
    }
    iterate_from(chain, cfg, initial_values(chain, cfg.init))
}

/// Value iteration from an explicit starting iterate.
pub fn iterate_from<C: ControlledChain>(chain: &C, cfg: &SolverConfig, start: Vec<f64>) -> Result<Solution> {
    cfg.validate()?;
    let mut values = start;
    for s in 0..chain.n_states() {
        if chain.is_absorbed(s) {
            values[s] = 0.0;
        }
    }
    let mut policy = vec![0usize; chain.n_states()];
    let mut increments = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let inc = match cfg.sweep {
            Sweep::Jacobi => {
                let (next, pol) = bellman_update(chain, &values)?;
                let inc = sup_diff(&next, &values);
                values = next;
                policy = pol;
                inc
            }
            Sweep::GaussSeidel => gauss_seidel_sweep(chain, &mut values, &mut policy),
        };
        if !inc.is_finite() {
            return Err(Error::Numeric(format!("increment became {inc} at sweep {iterations}")));
        }
        let measured = if cfg.relative {
            inc / sup_norm(&values).max(1.0)
        } else {
            inc
        };
        increments.push(inc);
        if measured <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(Solution {
        value: values,
        policy,
        iterations,
        final_increment: increments.last().copied().unwrap_or(0.0),
        converged,
        increments,
    })
}

/// Largest one-step discount factor `max exp(−δ dt)` over non-absorbed
/// states and all controls: the Bellman operator's contraction modulus.
pub fn contraction_modulus<C: ControlledChain>(chain: &C) -> f64 {
    let delta = chain.discount_rate();
    (0..chain.n_states())
        .into_par_iter()
        .filter(|&s| !chain.is_absorbed(s))
        .map(|s| {
            (0..chain.n_controls())
                .map(|u| (-delta * chain.transition(s, u).dt).exp())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// States at most this many use a dense LU factorization in
/// [`evaluate_policy`]; larger systems use Gauss–Seidel on the linear system.
pub const DENSE_LIMIT: usize = 3000;

/// Discounted cost of a stationary policy: solves `(I − D P) V = r` over the
/// non-absorbed states, with `D = diag(exp(−δ dt))` and `r = F dt`.
pub fn evaluate_policy<C: ControlledChain>(chain: &C, policy: &[usize]) -> Result<Vec<f64>> {
    let n = chain.n_states();
    if policy.len() != n {
        return Err(Error::Domain(format!("policy has {} entries, expected {n}", policy.len())));
    }
    if let Some(s) = policy.iter().position(|&u| u >= chain.n_controls()) {
        return Err(Error::Domain(format!("policy control {} at state {s} out of range", policy[s])));
    }
    let free: Vec<usize> = (0..n).filter(|&s| !chain.is_absorbed(s)).collect();
    let mut slot = vec![usize::MAX; n];
    for (k, &s) in free.iter().enumerate() {
        slot[s] = k;
    }
    let delta = chain.discount_rate();
    // rows of the reduced system: (diagonal-free off entries, rhs)
    let rows: Vec<(Vec<(usize, f64)>, f64)> = free
        .par_iter()
        .map(|&s| {
            let u = policy[s];
            let t = chain.transition(s, u);
            let disc = (-delta * t.dt).exp();
            let entries = t
                .targets
                .iter()
                .filter(|&&(target, _)| slot[target] != usize::MAX)
                .map(|&(target, p)| (slot[target], disc * p))
                .collect();
            (entries, chain.running_cost(s, u) * t.dt)
        })
        .collect();

    let m = free.len();
    let solved = if m <= DENSE_LIMIT {
        let mut a = DMatrix::<f64>::identity(m, m);
        let mut b = DVector::<f64>::zeros(m);
        for (k, (entries, rhs)) in rows.iter().enumerate() {
            for &(j, w) in entries {
                a[(k, j)] -= w;
            }
            b[k] = *rhs;
        }
        let x = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numeric("policy system is singular".into()))?;
        x.iter().copied().collect::<Vec<_>>()
    } else {
        solve_iterative(&rows)?
    };

    let mut value = vec![0.0; n];
    for (k, &s) in free.iter().enumerate() {
        value[s] = solved[k];
    }
    Ok(value)
}

fn solve_iterative(rows: &[(Vec<(usize, f64)>, f64)]) -> Result<Vec<f64>> {
    let m = rows.len();
    let mut x = vec![0.0; m];
    for _ in 0..10_000_000usize {
        let mut change: f64 = 0.0;
        for k in 0..m {
            let (entries, rhs) = &rows[k];
            let mut diag = 1.0;
            let mut acc = *rhs;
            for &(j, w) in entries {
                if j == k {
                    diag -= w;
                } else {
                    acc += w * x[j];
                }
            }
            let next = acc / diag;
            change = change.max((next - x[k]).abs());
            x[k] = next;
        }
        if change <= 1e-14 * sup_norm(&x).max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::Numeric("iterative policy evaluation did not converge".into()))
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
