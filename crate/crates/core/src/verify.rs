//! Local-consistency audits, HJB residuals and mesh-refinement studies.

use rayon::prelude::*;

use crate::chain::{ControlledChain, TransitionLaw};
use crate::chain1d::SisChain;
use crate::chain2d::SivChain;
use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::solver::{value_iterate, Solution, SolverConfig};

/// Relative tolerance for the exact (algebraic) consistency clauses.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clause {
    Mean,
    Variance,
    Switch,
    Stay,
    Jump,
}

impl Clause {
    pub fn name(self) -> &'static str {
        match self {
            Clause::Mean => "mean",
            Clause::Variance => "variance",
            Clause::Switch => "switch",
            Clause::Stay => "stay",
            Clause::Jump => "jump",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClauseFailure {
    pub state: usize,
    pub control: usize,
    pub clause: Clause,
    pub detail: String,
}

/// Per-row audit numbers, kept for CSV export.
#[derive(Clone, Debug, PartialEq)]
pub struct RowAudit {
    pub state: usize,
    pub control: usize,
    pub mean_error: f64,
    /// `|Cov − a dt| / dt`, summed over coordinates.
    pub variance_gap: f64,
    pub max_jump: f64,
    pub boundary: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ConsistencyReport {
    pub h: f64,
    pub rows_checked: usize,
    /// Rows altered by the simplex boundary policy; excluded from the mean
    /// and variance clauses.
    pub boundary_rows: usize,
    pub worst_mean_error: f64,
    /// Largest `|Cov − a dt| / (h dt)`: the constant `C` in `C h dt`.
    pub variance_constant: f64,
    pub max_jump: f64,
    pub failures: Vec<ClauseFailure>,
    pub rows: Vec<RowAudit>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn clause_passed(&self, clause: Clause) -> bool {
        !self.failures.iter().any(|f| f.clause == clause)
    }
}

/// Geometry and coefficients the auditor needs from a chain.
struct RowModel {
    /// Drift per coordinate.
    drift: [f64; 2],
    /// Diffusion per coordinate (`v` is noiseless).
    diffusion: [f64; 2],
    boundary: bool,
}

fn audit<C: ControlledChain>(
    chain: &C,
    law: &TransitionLaw,
    h: f64,
    model: impl Fn(usize, usize) -> RowModel + Sync,
    displacement: impl Fn(usize, usize) -> ([f64; 2], bool) + Sync,
) -> ConsistencyReport {
    let gen = &chain.spec().generator;
    let audited: Vec<(RowAudit, Vec<ClauseFailure>)> = law
        .rows
        .par_iter()
        .map(|row| {
            let t = &row.transition;
            let (s, u) = (row.state, row.control);
            let m = model(s, u);
            let ell = chain.regime_of(s);
            let mut fails = Vec::new();
            let mut fail = |clause, detail: String| {
                fails.push(ClauseFailure {
                    state: s,
                    control: u,
                    clause,
                    detail,
                })
            };

            let mut mean = [0.0; 2];
            let mut abs_mean = [0.0; 2];
            let mut second = [0.0; 2];
            let mut max_jump: f64 = 0.0;
            let mut switch_mass = vec![0.0; gen.m0()];
            for &(target, p) in &t.targets {
                let (d, switched) = displacement(s, target);
                if switched {
                    switch_mass[chain.regime_of(target)] += p;
                }
                for c in 0..2 {
                    mean[c] += d[c] * p;
                    abs_mean[c] += d[c].abs() * p;
                    second[c] += d[c] * d[c] * p;
                    max_jump = max_jump.max(d[c].abs());
                }
            }

            let mut mean_error: f64 = 0.0;
            let mut variance_gap = 0.0;
            if !m.boundary {
                for c in 0..2 {
                    let want = m.drift[c] * t.dt;
                    let scale = want.abs().max(abs_mean[c]);
                    let err = if scale > 0.0 { (mean[c] - want).abs() / scale } else { mean[c].abs() };
                    mean_error = mean_error.max(err);
                    if !(err <= EXACT_TOL) {
                        fail(Clause::Mean, format!("coord {c}: mean {} vs b dt {want}", mean[c]));
                    }
                    let cov = second[c] - mean[c] * mean[c];
                    let gap = (cov - m.diffusion[c] * t.dt).abs();
                    let b = m.drift[c].abs();
                    let bound = (h * b + b * b * t.dt) * t.dt;
                    variance_gap += gap / t.dt;
                    if gap > bound * (1.0 + 1e-9) + 1e-15 * t.dt {
                        fail(Clause::Variance, format!("coord {c}: |Cov − a dt| = {gap} > {bound}"));
                    }
                }
            }

            for to in 0..gen.m0() {
                if to == ell {
                    continue;
                }
                let want = gen.rate(ell, to) * t.dt;
                if (switch_mass[to] - want).abs() > EXACT_TOL * want.max(t.dt) {
                    fail(Clause::Switch, format!("to regime {to}: {} vs Λ dt {want}", switch_mass[to]));
                }
            }
            let stay_regime: f64 = 1.0 - switch_mass.iter().sum::<f64>();
            let want = 1.0 - gen.exit_rate(ell) * t.dt;
            if (stay_regime - want).abs() > EXACT_TOL {
                fail(Clause::Stay, format!("{stay_regime} vs 1 + Λℓℓ dt = {want}"));
            }
            if max_jump > h * (1.0 + EXACT_TOL) {
                fail(Clause::Jump, format!("jump {max_jump} exceeds h = {h}"));
            }
            (
                RowAudit {
                    state: s,
                    control: u,
                    mean_error,
                    variance_gap,
                    max_jump,
                    boundary: m.boundary,
                },
                fails,
            )
        })
        .collect();

    let mut report = ConsistencyReport {
        h,
        ..Default::default()
    };
    for (row, fails) in audited {
        report.rows_checked += 1;
        report.boundary_rows += row.boundary as usize;
        report.worst_mean_error = report.worst_mean_error.max(row.mean_error);
        report.variance_constant = report.variance_constant.max(row.variance_gap / h);
        report.max_jump = report.max_jump.max(row.max_jump);
        report.failures.extend(fails);
        report.rows.push(row);
    }
    report
}

/// Audits every row of a one-dimensional law against the drift and
/// diffusion it should reproduce.
pub fn audit_consistency_1d(chain: &SisChain, law: &TransitionLaw) -> ConsistencyReport {
    let g = *chain.grid();
    let spec = chain.spec();
    audit(
        chain,
        law,
        g.h,
        |s, u| {
            let (k, ell) = g.split(s);
            let i = g.node(k);
            let r = &spec.regimes[ell];
            RowModel {
                drift: [r.drift(i, chain.control(u).c), 0.0],
                diffusion: [r.diffusion(i), 0.0],
                boundary: false,
            }
        },
        |s, target| {
            let (k, ell) = g.split(s);
            let (k2, ell2) = g.split(target);
            ([g.node(k2) - g.node(k), 0.0], ell2 != ell)
        },
    )
}

/// Two-dimensional audit. Rows changed by the boundary policy are flagged
/// and skip the mean and variance clauses.
pub fn audit_consistency_2d(chain: &SivChain, law: &TransitionLaw) -> ConsistencyReport {
    let g = *chain.grid();
    let spec = chain.spec();
    audit(
        chain,
        law,
        g.h,
        |s, u| {
            let (k1, k2, ell) = chain.split(s);
            let (i, v) = (g.value(k1), g.value(k2));
            let r = &spec.regimes[ell];
            let ctrl = chain.control(u);
            RowModel {
                drift: [r.drift_infected(i, v, ctrl.c), r.drift_vaccinated(i, v, ctrl.p, ctrl.q)],
                diffusion: [r.diffusion_infected(i, v), 0.0],
                boundary: chain.row(k1, k2, ell, u).folded > 0.0,
            }
        },
        |s, target| {
            let (k1, k2, ell) = chain.split(s);
            let (j1, j2, ell2) = chain.split(target);
            ([g.value(j1) - g.value(k1), g.value(j2) - g.value(k2)], ell2 != ell)
        },
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct HjbNode {
    pub k: usize,
    pub regime: usize,
    pub i: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HjbReport {
    pub nodes: Vec<HjbNode>,
    pub sup_abs: f64,
    pub mean_abs: f64,
}

/// Central-difference HJB residual of a one-dimensional solution at nodes
/// whose two neighbours are both live grid nodes.
pub fn hjb_residual(chain: &SisChain, solution: &Solution) -> Result<HjbReport> {
    let g = *chain.grid();
    let spec = chain.spec();
    if solution.value.len() != chain.n_states() {
        return Err(Error::Domain("solution does not belong to this chain".into()));
    }
    let v = |k: usize, ell: usize| solution.value[g.state(k, ell)];
    let h = g.h;
    let mut nodes = Vec::new();
    for ell in 0..g.m0 {
        for k in 1..g.k_max {
            if g.is_absorbed(k - 1) {
                continue;
            }
            let i = g.node(k);
            let d1 = (v(k + 1, ell) - v(k - 1, ell)) / (2.0 * h);
            let d2 = (v(k + 1, ell) - 2.0 * v(k, ell) + v(k - 1, ell)) / (h * h);
            let coupling: f64 = (0..g.m0).map(|j| spec.generator.rate(ell, j) * v(k, j)).sum();
            let r = &spec.regimes[ell];
            let s = g.state(k, ell);
            let residual = (0..chain.n_controls())
                .map(|u| {
                    r.drift(i, chain.control(u).c) * d1 + 0.5 * r.diffusion(i) * d2 + coupling
                        + chain.running_cost(s, u)
                        - spec.delta * v(k, ell)
                })
                .fold(f64::INFINITY, f64::min);
            nodes.push(HjbNode { k, regime: ell, i, residual });
        }
    }
    let sup_abs = nodes.iter().fold(0.0_f64, |m, n| m.max(n.residual.abs()));
    let mean_abs = if nodes.is_empty() {
        0.0
    } else {
        nodes.iter().map(|n| n.residual.abs()).sum::<f64>() / nodes.len() as f64
    };
    Ok(HjbReport { nodes, sup_abs, mean_abs })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Infected fraction only.
    Sis,
    /// Infected and vaccinated fractions.
    Siv,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefinementReport {
    pub meshes: Vec<f64>,
    pub iterations: Vec<usize>,
    /// `‖V_{h_{j+1}} − V_{h_j}‖∞` on the coarsest grid's nodes.
    pub diffs: Vec<f64>,
    /// `diffs[j] / diffs[j + 1]`.
    pub ratios: Vec<f64>,
    /// Mesh at which value iteration hit its cap, if any.
    pub aborted_at: Option<f64>,
}

impl RefinementReport {
    pub fn passed(&self) -> bool {
        self.aborted_at.is_none()
            && self.diffs.iter().all(|d| d.is_finite())
            && (self.diffs.windows(2).all(|w| w[1] < w[0]) || self.diffs.iter().all(|&d| d == 0.0))
    }
}

/// Solves on each mesh (coarsest first) and compares successive value
/// functions on the coarsest grid.
pub fn refinement_study(spec: &ProblemSpec, kind: ModelKind, cfg: &SolverConfig, meshes: &[f64]) -> Result<RefinementReport> {
    if meshes.len() < 3 {
        return Err(Error::config("meshes", "refinement needs at least three meshes"));
    }
    let divisions: Vec<usize> = meshes
        .iter()
        .map(|&h| crate::chain1d::mesh_divisions(h))
        .collect::<Result<_>>()?;
    for w in divisions.windows(2) {
        if w[1] <= w[0] || w[1] % w[0] != 0 {
            return Err(Error::config("meshes", "meshes must be nested and strictly refining"));
        }
    }
    let k0 = divisions[0];
    let mut report = RefinementReport {
        meshes: meshes.to_vec(),
        ..Default::default()
    };
    let mut restricted: Vec<Vec<f64>> = Vec::new();
    for (&h, &k) in meshes.iter().zip(&divisions) {
        let ratio = k / k0;
        let (sol, values) = match kind {
            ModelKind::Sis => {
                let chain = SisChain::new(spec.clone(), h)?;
                let sol = value_iterate(&chain, cfg)?;
                let g = chain.grid();
                let vals = (0..spec.m0())
                    .flat_map(|ell| (0..=k0).map(move |c| (c, ell)))
                    .map(|(c, ell)| sol.value[g.state(c * ratio, ell)])
                    .collect();
                (sol, vals)
            }
            ModelKind::Siv => {
                let chain = SivChain::new(spec.clone(), h)?;
                let sol = value_iterate(&chain, cfg)?;
                let g = chain.grid();
                let mut vals = Vec::new();
                for ell in 0..spec.m0() {
                    for c1 in 0..=k0 {
                        for c2 in 0..=(k0 - c1) {
                            vals.push(sol.value[g.state(c1 * ratio, c2 * ratio, ell)]);
                        }
                    }
                }
                (sol, vals)
            }
        };
        report.iterations.push(sol.iterations);
        if !sol.converged {
            report.aborted_at = Some(h);
            return Ok(report);
        }
        restricted.push(values);
    }
    for w in restricted.windows(2) {
        report.diffs.push(crate::solver::sup_diff(&w[0], &w[1]));
    }
    report.ratios = report.diffs.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(report)
}
