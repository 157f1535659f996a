//! Grid and locally consistent controlled chain for the infected-fraction
//! model.
//!
//! For a node `i`, regime `ℓ` and treatment `c`:
//!
//! ```text
//! Q      = a(i, ℓ) + h |b(i, ℓ, c)| − h² Λℓℓ + h
//! p(up)  = (a/2 + h b⁺) / Q        p(down) = (a/2 + h b⁻) / Q
//! p(ℓ→ℓ') = h² Λℓℓ' / Q            p(stay) = h / Q
//! dt     = h² / Q
//! ```

use std::io::Write;

use smallvec::SmallVec;

use crate::chain::{ControlledChain, Transition};
use crate::error::{Error, Result};
use crate::model::{Control, ProblemSpec};

/// Nodes with `i ≤ ξ + ABSORB_SLACK` are absorbing.
pub const ABSORB_SLACK: f64 = 1e-12;

/// Uniform grid `{k h : 0 ≤ k ≤ K}` with `K = 1/h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    pub h: f64,
    pub k_max: usize,
    pub xi: f64,
    pub m0: usize,
}

/// Resolves `h` to the integer `K = 1/h`.
pub(crate) fn mesh_divisions(h: f64) -> Result<usize> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::config("h", format!("mesh {h} must be positive")));
    }
    let k = (1.0 / h).round();
    if k < 2.0 || ((k * h) - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "h",
            format!("1/h must be an integer ≥ 2, got 1/h = {}", 1.0 / h),
        ));
    }
    Ok(k as usize)
}

impl Grid1D {
    pub fn build(h: f64, spec: &ProblemSpec) -> Result<Self> {
        let k_max = mesh_divisions(h)?;
        Ok(Grid1D {
            h: 1.0 / k_max as f64,
            k_max,
            xi: spec.xi,
            m0: spec.m0(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.k_max + 1
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        k as f64 / self.k_max as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.k_max).map(|k| self.node(k))
    }

    #[inline]
    pub fn is_absorbed(&self, k: usize) -> bool {
        self.node(k) <= self.xi + ABSORB_SLACK
    }

    pub fn absorbed_nodes(&self) -> Vec<usize> {
        (0..=self.k_max).take_while(|&k| self.is_absorbed(k)).collect()
    }

    #[inline]
    pub fn state(&self, k: usize, regime: usize) -> usize {
        regime * self.n_nodes() + k
    }

    #[inline]
    pub fn split(&self, s: usize) -> (usize, usize) {
        (s % self.n_nodes(), s / self.n_nodes())
    }

    /// Nearest node to `i`, clamped into the grid.
    pub fn nearest(&self, i: f64) -> usize {
        let k = (i * self.k_max as f64).round();
        k.clamp(0.0, self.k_max as f64) as usize
    }
}

/// Transition row of the one-dimensional chain, split by move type.
#[derive(Clone, Debug, PartialEq)]
pub struct Row1D {
    pub q_h: f64,
    pub up: f64,
    pub down: f64,
    /// `(target regime, probability)` for every regime with a positive rate.
    pub switches: SmallVec<[(usize, f64); 4]>,
    pub stay: f64,
    pub dt: f64,
}

impl Row1D {
    fn compute(spec: &ProblemSpec, grid: &Grid1D, k: usize, ell: usize, c: f64) -> Row1D {
        let h = grid.h;
        let i = grid.node(k);
        let r = &spec.regimes[ell];
        let a = r.diffusion(i);
        let b = r.drift(i, c);
        let gen = &spec.generator;
        let q_h = a + h * b.abs() + h * h * gen.exit_rate(ell) + h;
        let mut up = (0.5 * a + h * b.max(0.0)) / q_h;
        let mut down = (0.5 * a + h * (-b).max(0.0)) / q_h;
        let mut stay = h / q_h;
        // a and b vanish at i = 0 and b ≤ 0 at i = 1, so these only guard
        // against rounding.
        if k == grid.k_max {
            stay += up;
            up = 0.0;
        }
        if k == 0 {
            stay += down;
            down = 0.0;
        }
        let switches = (0..grid.m0)
            .filter(|&to| to != ell && gen.rate(ell, to) > 0.0)
            .map(|to| (to, h * h * gen.rate(ell, to) / q_h))
            .collect();
        Row1D {
            q_h,
            up,
            down,
            switches,
            stay,
            dt: h * h / q_h,
        }
    }

    fn to_transition(&self, grid: &Grid1D, k: usize, ell: usize) -> Transition {
        let mut targets = SmallVec::new();
        if self.up > 0.0 {
            targets.push((grid.state(k + 1, ell), self.up));
        }
        if self.down > 0.0 {
            targets.push((grid.state(k - 1, ell), self.down));
        }
        for &(to, p) in &self.switches {
            targets.push((grid.state(k, to), p));
        }
        targets.push((grid.state(k, ell), self.stay));
        Transition {
            q_h: self.q_h,
            dt: self.dt,
            targets,
        }
    }
}

/// Transition row for node `k`, regime `ell` and treatment level `c`.
pub fn transition_1d(spec: &ProblemSpec, grid: &Grid1D, k: usize, ell: usize, c: f64) -> Result<Row1D> {
    if k > grid.k_max {
        return Err(Error::Domain(format!("node {k} outside grid of {} nodes", grid.n_nodes())));
    }
    if ell >= spec.m0() {
        return Err(Error::Domain(format!("regime index {ell} out of range")));
    }
    if !spec.controls.u.contains(&c) {
        return Err(Error::Domain(format!("treatment {c} not in the control set")));
    }
    Ok(Row1D::compute(spec, grid, k, ell, c))
}

/// Controlled chain for the infected-fraction model over treatment levels.
#[derive(Clone, Debug)]
pub struct SisChain {
    spec: ProblemSpec,
    grid: Grid1D,
    controls: Vec<Control>,
    cost_tuples: Vec<Option<usize>>,
}

impl SisChain {
    pub fn new(spec: ProblemSpec, h: f64) -> Result<Self> {
        spec.validate()?;
        let grid = Grid1D::build(h, &spec)?;
        let controls = spec.controls.treatments();
        let cost_tuples = controls
            .iter()
            .map(|&ctrl| spec.controls.tuple_index(ctrl))
            .collect::<Vec<_>>();
        if matches!(spec.cost.preset, crate::model::CostPreset::CustomTable)
            && cost_tuples.iter().any(Option::is_none)
        {
            return Err(Error::config(
                "cost.table",
                "tabulated cost needs p = q = 0 in the vaccination sets for the treatment-only chain",
            ));
        }
        Ok(SisChain {
            spec,
            grid,
            controls,
            cost_tuples,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn row(&self, k: usize, ell: usize, u: usize) -> Row1D {
        Row1D::compute(&self.spec, &self.grid, k, ell, self.controls[u].c)
    }

    /// Writes the law as CSV rows `i,ell,c,i_next,ell_next,prob,dt`. Regime
    /// labels are 1-based.
    pub fn write_law_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,ell,c,i_next,ell_next,prob,dt")?;
        for s in 0..self.n_states() {
            let (k, ell) = self.grid.split(s);
            for u in 0..self.controls.len() {
                let t = self.transition(s, u);
                for &(target, p) in &t.targets {
                    let (k2, ell2) = self.grid.split(target);
                    writeln!(
                        out,
                        "{},{},{},{},{},{:e},{:e}",
                        self.grid.node(k),
                        ell + 1,
                        self.controls[u].c,
                        self.grid.node(k2),
                        ell2 + 1,
                        p,
                        t.dt
                    )?;
                }
            }
        }
        Ok(())
    }
}

impl ControlledChain for SisChain {
    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn n_states(&self) -> usize {
        self.grid.n_nodes() * self.grid.m0
    }

    fn n_controls(&self) -> usize {
        self.controls.len()
    }

    fn control(&self, u: usize) -> Control {
        self.controls[u]
    }

    fn is_absorbed(&self, s: usize) -> bool {
        self.grid.is_absorbed(self.grid.split(s).0)
    }

    fn regime_of(&self, s: usize) -> usize {
        self.grid.split(s).1
    }

    fn infected(&self, s: usize) -> f64 {
        self.grid.node(self.grid.split(s).0)
    }

    fn transition(&self, s: usize, u: usize) -> Transition {
        let (k, ell) = self.grid.split(s);
        self.row(k, ell, u).to_transition(&self.grid, k, ell)
    }

    fn running_cost(&self, s: usize, u: usize) -> f64 {
        let (k, ell) = self.grid.split(s);
        self.spec
            .running_cost(self.grid.node(k), ell, self.controls[u], self.cost_tuples[u])
    }

    /// `F(1, ℓ, max U) / δ`, evaluated per regime.
    fn initial_value(&self, s: usize) -> f64 {
        let ell = self.regime_of(s);
        let ctrl = self.spec.controls.max_control();
        let ctrl = Control::treatment(ctrl.c);
        let tuple = self.spec.controls.tuple_index(ctrl);
        self.spec.running_cost(1.0, ell, ctrl, tuple) / self.spec.delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{check_stochastic, TransitionLaw};
    use crate::model::{CostModel, RegimeSpec, SwitchingGenerator};
    use approx::assert_abs_diff_eq;

    fn ex1() -> ProblemSpec {
        ProblemSpec::example1(CostModel::poly_regime(1.0, 1.0, 1.0))
    }

    #[test]
    fn grid_shapes() {
        let s = ex1();
        let g = Grid1D::build(0.5, &s).unwrap();
        assert_eq!(g.nodes().collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!(Grid1D::build(0.1, &s).unwrap().absorbed_nodes(), vec![0]);
        assert_eq!(Grid1D::build(0.01, &s).unwrap().absorbed_nodes(), vec![0, 1, 2]);
        assert!(matches!(Grid1D::build(0.3, &s), Err(Error::Config { .. })));
        assert!(Grid1D::build(1.0, &s).is_err());
        assert!(Grid1D::build(-0.1, &s).is_err());
        assert_eq!(Grid1D::build(1.0 / 200.0, &s).unwrap().n_nodes(), 201);
    }

    #[test]
    fn hand_rows() {
        let s = ex1();
        let g = Grid1D::build(0.1, &s).unwrap();
        let r = transition_1d(&s, &g, 5, 0, 0.0).unwrap();
        assert_abs_diff_eq!(r.q_h, 0.12, epsilon = 1e-15);
        assert_abs_diff_eq!(r.up, 1.0 / 12.0, epsilon = 1e-14);
        assert_eq!(r.down, 0.0);
        assert_eq!(r.switches.len(), 1);
        assert_eq!(r.switches[0].0, 1);
        assert_abs_diff_eq!(r.switches[0].1, 1.0 / 12.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.stay, 5.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.dt, 1.0 / 12.0, epsilon = 1e-14);

        let r = transition_1d(&s, &g, 0, 0, 0.0).unwrap();
        assert_abs_diff_eq!(r.q_h, 0.11, epsilon = 1e-15);
        assert_eq!((r.up, r.down), (0.0, 0.0));
        assert_abs_diff_eq!(r.switches[0].1, 1.0 / 11.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.stay, 10.0 / 11.0, epsilon = 1e-14);

        assert!(transition_1d(&s, &g, 11, 0, 0.0).is_err());
        assert!(transition_1d(&s, &g, 5, 0, 0.3).is_err());
    }

    #[test]
    fn example_law_is_stochastic() {
        let chain = SisChain::new(ex1(), 0.1).unwrap();
        let law = TransitionLaw::build(&chain);
        let report = check_stochastic(&law);
        assert!(report.passed(), "{:?}", report.violations);
        assert_eq!(report.rows_checked, 11 * 2 * 16);
    }

    #[test]
    fn corrupted_probability_is_reported() {
        let chain = SisChain::new(ex1(), 0.1).unwrap();
        let mut law = TransitionLaw::build(&chain);
        law.rows[37].transition.targets[0].1 = 1.2;
        let report = check_stochastic(&law);
        assert!(!report.passed());
        assert_eq!(report.violations[0].state, law.rows[37].state);
        assert_eq!(report.violations[0].control, law.rows[37].control);
    }

    #[test]
    fn single_regime_has_no_switch_targets() {
        let mut s = ex1();
        s.regimes = vec![RegimeSpec::new(0.05, 0.15, 2.4, 1.0)];
        s.generator = SwitchingGenerator::trivial();
        let chain = SisChain::new(s, 0.1).unwrap();
        let law = TransitionLaw::build(&chain);
        assert!(check_stochastic(&law).passed());
        for row in &law.rows {
            let (k, _) = chain.grid().split(row.state);
            for &(t, _) in &row.transition.targets {
                let (k2, ell2) = chain.grid().split(t);
                assert_eq!(ell2, 0);
                assert!(k2.abs_diff(k) <= 1);
            }
        }
    }

    #[test]
    fn moment_identities() {
        let chain = SisChain::new(ex1(), 0.01).unwrap();
        let g = *chain.grid();
        for s in 0..chain.n_states() {
            let (k, ell) = g.split(s);
            let i = g.node(k);
            for u in 0..chain.n_controls() {
                let row = chain.row(k, ell, u);
                let r = &chain.spec().regimes[ell];
                let b = r.drift(i, chain.control(u).c);
                let a = r.diffusion(i);
                let mean = g.h * (row.up - row.down);
                let scale = g.h * (row.up + row.down) + 1e-300;
                assert!((mean - b * row.dt).abs() <= 1e-12 * scale.max((b * row.dt).abs()));
                let second = g.h * g.h * (row.up + row.down);
                let want = (a + g.h * b.abs()) * row.dt;
                assert!((second - want).abs() <= 1e-12 * want.max(1e-300));
                for &(_, p) in &row.switches {
                    assert!((p / row.dt - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn law_csv_has_header_and_rows() {
        let chain = SisChain::new(ex1(), 0.5).unwrap();
        let mut buf = Vec::new();
        chain.write_law_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("i,ell,c,i_next,ell_next,prob,dt"));
        assert!(lines.count() >= 3 * 2 * 16);
    }
}
