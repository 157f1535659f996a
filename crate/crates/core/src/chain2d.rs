//! Simplex grid and controlled chain for the vaccination model.
//!
//! Moves in `i` carry `(a1/2 + h b1±)/Q`, moves in `v` carry `h b2±/Q`, with
//! `Q = a1 + h|b1| + h|b2| − h²Λℓℓ + h`. Mass that would leave the simplex is
//! folded into the self-transition by [`boundary_policy`].

use std::io::Write;

use smallvec::SmallVec;

use crate::chain::{ControlledChain, Transition};
use crate::chain1d::{mesh_divisions, ABSORB_SLACK};
use crate::error::{Error, Result};
use crate::model::{Control, CostPreset, ProblemSpec};

/// Nodes `(k1 h, k2 h)` with `k1 + k2 ≤ K`, ordered by `k1` then `k2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid2D {
    pub h: f64,
    pub k_max: usize,
    pub xi: f64,
    pub m0: usize,
}

impl Grid2D {
    pub fn build(h: f64, spec: &ProblemSpec) -> Result<Self> {
        let k_max = mesh_divisions(h)?;
        Ok(Grid2D {
            h: 1.0 / k_max as f64,
            k_max,
            xi: spec.xi,
            m0: spec.m0(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        (self.k_max + 1) * (self.k_max + 2) / 2
    }

    #[inline]
    fn offset(&self, k1: usize) -> usize {
        k1 * (self.k_max + 1) - k1 * k1.saturating_sub(1) / 2
    }

    #[inline]
    pub fn index(&self, k1: usize, k2: usize) -> usize {
        debug_assert!(k1 + k2 <= self.k_max);
        self.offset(k1) + k2
    }

    /// Inverse of [`Grid2D::index`].
    pub fn coords(&self, n: usize) -> (usize, usize) {
        // row k1 holds K + 1 − k1 nodes
        let mut lo = 0;
        let mut hi = self.k_max;
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.offset(mid) <= n {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        (lo, n - self.offset(lo))
    }

    #[inline]
    pub fn value(&self, k: usize) -> f64 {
        k as f64 / self.k_max as f64
    }

    pub fn contains(&self, k1: usize, k2: usize) -> bool {
        k1 + k2 <= self.k_max
    }

    #[inline]
    pub fn is_absorbed(&self, k1: usize) -> bool {
        self.value(k1) <= self.xi + ABSORB_SLACK
    }

    #[inline]
    pub fn state(&self, k1: usize, k2: usize, regime: usize) -> usize {
        regime * self.n_nodes() + self.index(k1, k2)
    }

    /// `(k1, k2, regime)` of a flattened state.
    pub fn split(&self, s: usize) -> (usize, usize, usize) {
        let n = self.n_nodes();
        let (k1, k2) = self.coords(s % n);
        (k1, k2, s / n)
    }

    /// Nearest grid node to `(i, v)`, pulled back onto the simplex.
    pub fn nearest(&self, i: f64, v: f64) -> (usize, usize) {
        let kmax = self.k_max as f64;
        let k1 = (i * kmax).round().clamp(0.0, kmax) as usize;
        let k2 = (v * kmax).round().clamp(0.0, kmax) as usize;
        (k1, k2.min(self.k_max - k1))
    }
}

/// Transition row of the two-dimensional chain, split by move type.
#[derive(Clone, Debug, PartialEq)]
pub struct Row2D {
    pub q_h: f64,
    pub i_up: f64,
    pub i_down: f64,
    pub v_up: f64,
    pub v_down: f64,
    pub switches: SmallVec<[(usize, f64); 4]>,
    pub stay: f64,
    pub dt: f64,
    /// Mass moved into `stay` by the boundary policy.
    pub folded: f64,
}

/// Row before any boundary handling.
pub fn raw_row_2d(spec: &ProblemSpec, grid: &Grid2D, k1: usize, k2: usize, ell: usize, ctrl: Control) -> Row2D {
    let h = grid.h;
    let (i, v) = (grid.value(k1), grid.value(k2));
    let r = &spec.regimes[ell];
    let a1 = r.diffusion_infected(i, v);
    let b1 = r.drift_infected(i, v, ctrl.c);
    let b2 = r.drift_vaccinated(i, v, ctrl.p, ctrl.q);
    let gen = &spec.generator;
    let q_h = a1 + h * b1.abs() + h * b2.abs() + h * h * gen.exit_rate(ell) + h;
    let switches = (0..grid.m0)
        .filter(|&to| to != ell && gen.rate(ell, to) > 0.0)
        .map(|to| (to, h * h * gen.rate(ell, to) / q_h))
        .collect();
    Row2D {
        q_h,
        i_up: (0.5 * a1 + h * b1.max(0.0)) / q_h,
        i_down: (0.5 * a1 + h * (-b1).max(0.0)) / q_h,
        v_up: h * b2.max(0.0) / q_h,
        v_down: h * (-b2).max(0.0) / q_h,
        switches,
        stay: h / q_h,
        dt: h * h / q_h,
        folded: 0.0,
    }
}

/// Folds any move whose target leaves the simplex grid into the
/// self-transition. Interior rows are returned unchanged.
pub fn boundary_policy(mut row: Row2D, grid: &Grid2D, k1: usize, k2: usize) -> Row2D {
    let on_edge = k1 + k2 == grid.k_max;
    let mut fold = |p: &mut f64| {
        row.folded += *p;
        *p = 0.0;
    };
    let mut moves = [row.i_up, row.i_down, row.v_up, row.v_down];
    if on_edge {
        fold(&mut moves[0]);
        fold(&mut moves[2]);
    }
    if k1 == 0 {
        fold(&mut moves[1]);
    }
    if k2 == 0 {
        fold(&mut moves[3]);
    }
    [row.i_up, row.i_down, row.v_up, row.v_down] = moves;
    row.stay += row.folded;
    row
}

/// Transition row for node `(k1, k2)`, regime `ell` and control `ctrl`.
pub fn transition_2d(
    spec: &ProblemSpec,
    grid: &Grid2D,
    k1: usize,
    k2: usize,
    ell: usize,
    ctrl: Control,
) -> Result<Row2D> {
    if !grid.contains(k1, k2) {
        return Err(Error::Domain(format!("node ({k1}, {k2}) outside the simplex grid")));
    }
    if ell >= spec.m0() {
        return Err(Error::Domain(format!("regime index {ell} out of range")));
    }
    if spec.controls.tuple_index(ctrl).is_none() {
        return Err(Error::Domain(format!("control {ctrl:?} not in the control sets")));
    }
    Ok(boundary_policy(raw_row_2d(spec, grid, k1, k2, ell, ctrl), grid, k1, k2))
}

/// Controlled chain for the vaccination model over `U × Vp × Vq`.
#[derive(Clone, Debug)]
pub struct SivChain {
    spec: ProblemSpec,
    grid: Grid2D,
    controls: Vec<Control>,
    coords: Vec<(u32, u32)>,
}

impl SivChain {
    pub fn new(spec: ProblemSpec, h: f64) -> Result<Self> {
        spec.validate()?;
        spec.require_epsilon()?;
        let grid = Grid2D::build(h, &spec)?;
        let controls = spec.controls.tuples();
        let coords = (0..grid.n_nodes())
            .map(|n| {
                let (a, b) = grid.coords(n);
                (a as u32, b as u32)
            })
            .collect();
        Ok(SivChain {
            spec,
            grid,
            controls,
            coords,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn split(&self, s: usize) -> (usize, usize, usize) {
        let n = self.grid.n_nodes();
        let (k1, k2) = self.coords[s % n];
        (k1 as usize, k2 as usize, s / n)
    }

    pub fn row(&self, k1: usize, k2: usize, ell: usize, u: usize) -> Row2D {
        let raw = raw_row_2d(&self.spec, &self.grid, k1, k2, ell, self.controls[u]);
        boundary_policy(raw, &self.grid, k1, k2)
    }

    /// CSV rows `i,v,ell,c,p,q,i_next,v_next,ell_next,prob,dt`, 1-based
    /// regimes.
    pub fn write_law_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,v,ell,c,p,q,i_next,v_next,ell_next,prob,dt")?;
        let g = &self.grid;
        for s in 0..self.n_states() {
            let (k1, k2, ell) = self.split(s);
            for (u, ctrl) in self.controls.iter().enumerate() {
                let t = self.transition(s, u);
                for &(target, p) in &t.targets {
                    let (j1, j2, ell2) = self.split(target);
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{},{:e},{:e}",
                        g.value(k1),
                        g.value(k2),
                        ell + 1,
                        ctrl.c,
                        ctrl.p,
                        ctrl.q,
                        g.value(j1),
                        g.value(j2),
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

impl ControlledChain for SivChain {
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
        self.grid.is_absorbed(self.split(s).0)
    }

    fn regime_of(&self, s: usize) -> usize {
        s / self.grid.n_nodes()
    }

    fn infected(&self, s: usize) -> f64 {
        self.grid.value(self.split(s).0)
    }

    fn transition(&self, s: usize, u: usize) -> Transition {
        let (k1, k2, ell) = self.split(s);
        let row = self.row(k1, k2, ell, u);
        let g = &self.grid;
        let mut targets = SmallVec::new();
        if row.i_up > 0.0 {
            targets.push((g.state(k1 + 1, k2, ell), row.i_up));
        }
        if row.i_down > 0.0 {
            targets.push((g.state(k1 - 1, k2, ell), row.i_down));
        }
        if row.v_up > 0.0 {
            targets.push((g.state(k1, k2 + 1, ell), row.v_up));
        }
        if row.v_down > 0.0 {
            targets.push((g.state(k1, k2 - 1, ell), row.v_down));
        }
        for &(to, p) in &row.switches {
            targets.push((g.state(k1, k2, to), p));
        }
        targets.push((s, row.stay));
        Transition {
            q_h: row.q_h,
            dt: row.dt,
            targets,
        }
    }

    fn running_cost(&self, s: usize, u: usize) -> f64 {
        let (k1, _, ell) = self.split(s);
        let tuple = match self.spec.cost.preset {
            CostPreset::CustomTable => Some(u),
            _ => None,
        };
        self.spec
            .running_cost(self.grid.value(k1), ell, self.controls[u], tuple)
    }

    /// `F(1, m0, max U, max Vp, max Vq) / δ` in every state.
    fn initial_value(&self, _s: usize) -> f64 {
        let ctrl = self.spec.controls.max_control();
        let u = self.controls.len() - 1;
        let tuple = match self.spec.cost.preset {
            CostPreset::CustomTable => Some(u),
            _ => None,
        };
        self.spec.running_cost(1.0, self.spec.m0() - 1, ctrl, tuple) / self.spec.delta
    }
}
