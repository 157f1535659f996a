//! Monte Carlo simulation of the controlled switching SDEs and of the
//! approximating chain.
//!
//! Every path draws from its own ChaCha stream derived from `(seed, path)`,
//! so results do not depend on how paths are scheduled across threads. The
//! regime process uses a stream separate from the Brownian increments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;

use crate::chain::ControlledChain;
use crate::chain1d::SisChain;
use crate::chain2d::SivChain;
use crate::error::{Error, Result};
use crate::model::{Control, CostPreset, ProblemSpec, SwitchingGenerator};
use crate::solver::Solution;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt_sim: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep every Euler step of each path.
    pub record: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt_sim: 1e-3,
            t_max: 250.0,
            n_paths: 10_000,
            seed: 0,
            record: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_sim > 0.0 && self.dt_sim.is_finite()) {
            return Err(Error::config("dt_sim", "must be positive"));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::config("t_max", "must be positive"));
        }
        if self.n_paths < 1 {
            return Err(Error::config("n_paths", "must be at least 1"));
        }
        Ok(())
    }

    /// Smallest horizon whose truncation bound `F_sup e^{−δT}/δ` is at most
    /// `bound`.
    pub fn horizon_for_tail(spec: &ProblemSpec, bound: f64) -> f64 {
        let f = spec.cost_sup();
        if f == 0.0 {
            return 0.0;
        }
        ((f / (spec.delta * bound)).ln() / spec.delta).max(0.0)
    }
}

/// Independent RNG stream for one path.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Piecewise-constant regime trajectory: regime `regimes[k]` holds on
/// `[times[k], times[k + 1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimePath {
    pub times: Vec<f64>,
    pub regimes: Vec<usize>,
}

impl RegimePath {
    pub fn regime_at(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        self.regimes[k.saturating_sub(1)]
    }

    /// Time of the first switch strictly after segment `k` starts.
    fn segment_end(&self, k: usize) -> f64 {
        self.times.get(k + 1).copied().unwrap_or(f64::INFINITY)
    }
}

/// Samples the switching process on `[0, t_max]` by exponential holding
/// times.
pub fn simulate_regime_path<R: Rng>(gen: &SwitchingGenerator, start: usize, t_max: f64, rng: &mut R) -> RegimePath {
    let mut times = vec![0.0];
    let mut regimes = vec![start];
    let mut t = 0.0;
    let mut ell = start;
    loop {
        let rate = gen.exit_rate(ell);
        if rate <= 0.0 {
            break;
        }
        t += Exp::new(rate).expect("positive rate").sample(rng);
        if t > t_max {
            break;
        }
        let mut x = rng.random::<f64>() * rate;
        let mut next = ell;
        for to in 0..gen.m0() {
            if to == ell {
                continue;
            }
            next = to;
            x -= gen.rate(ell, to);
            if x < 0.0 {
                break;
            }
        }
        ell = next;
        times.push(t);
        regimes.push(ell);
    }
    RegimePath { times, regimes }
}

/// State feedback used while simulating the diffusion.
pub trait Feedback: Sync {
    fn control(&self, i: f64, v: f64, regime: usize) -> Control;
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantControl(pub Control);

impl Feedback for ConstantControl {
    fn control(&self, _: f64, _: f64, _: usize) -> Control {
        self.0
    }
}

/// Nearest-node lookup into a one-dimensional solution. Points whose nearest
/// node is absorbing use the first live node instead.
pub struct GridPolicy1D<'a> {
    pub chain: &'a SisChain,
    pub solution: &'a Solution,
}

impl Feedback for GridPolicy1D<'_> {
    fn control(&self, i: f64, _: f64, regime: usize) -> Control {
        let g = self.chain.grid();
        let mut k = g.nearest(i);
        while g.is_absorbed(k) && k < g.k_max {
            k += 1;
        }
        self.chain.control(self.solution.policy[g.state(k, regime)])
    }
}

/// Nearest-node lookup into a two-dimensional solution.
pub struct GridPolicy2D<'a> {
    pub chain: &'a SivChain,
    pub solution: &'a Solution,
}

impl Feedback for GridPolicy2D<'_> {
    fn control(&self, i: f64, v: f64, regime: usize) -> Control {
        let g = self.chain.grid();
        let (mut k1, mut k2) = g.nearest(i, v);
        while g.is_absorbed(k1) && k1 < g.k_max {
            k1 += 1;
            k2 = k2.min(g.k_max - k1);
        }
        self.chain.control(self.solution.policy[g.state(k1, k2, regime)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajPoint {
    pub t: f64,
    pub i: f64,
    pub v: f64,
    pub regime: usize,
    pub control: Control,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathOutcome {
    /// Discounted running cost accumulated up to `τ ∧ t_max`.
    pub cost: f64,
    /// First time with `I ≤ ξ`, if it happened before `t_max`.
    pub tau: Option<f64>,
    /// Steps whose state had to be projected back into the domain.
    pub clamps: u64,
    pub trajectory: Vec<TrajPoint>,
}

fn cost_tuple(spec: &ProblemSpec, ctrl: Control) -> Option<usize> {
    match spec.cost.preset {
        CostPreset::CustomTable => spec.controls.tuple_index(ctrl),
        _ => None,
    }
}

/// Euler–Maruyama path of the vaccination pair `(I, V)`; the infected-only
/// model is the special case `with_v = false`.
fn euler_path(
    spec: &ProblemSpec,
    policy: &dyn Feedback,
    cfg: &SimConfig,
    start: (f64, f64, usize),
    path: u64,
    with_v: bool,
) -> PathOutcome {
    let (mut i, mut v, ell0) = start;
    let mut out = PathOutcome {
        cost: 0.0,
        tau: None,
        clamps: 0,
        trajectory: Vec::new(),
    };
    if i <= spec.xi {
        out.tau = Some(0.0);
        return out;
    }
    let mut regime_rng = path_rng(cfg.seed, 2 * path);
    let mut noise_rng = path_rng(cfg.seed, 2 * path + 1);
    let regimes = simulate_regime_path(&spec.generator, ell0, cfg.t_max, &mut regime_rng);
    let delta = spec.delta;
    let mut seg = 0;
    let mut t = 0.0;
    while t < cfg.t_max {
        let ell = regimes.regimes[seg];
        let switch_at = regimes.segment_end(seg);
        let step = cfg.dt_sim.min(switch_at - t).min(cfg.t_max - t);
        let ctrl = policy.control(i, v, ell);
        if cfg.record {
            out.trajectory.push(TrajPoint { t, i, v, regime: ell, control: ctrl });
        }
        let r = &spec.regimes[ell];
        out.cost += (-delta * t).exp() * spec.running_cost(i, ell, ctrl, cost_tuple(spec, ctrl)) * step;
        let dw: f64 = step.sqrt() * noise_rng.sample::<f64, _>(StandardNormal);
        let mut clamped = false;
        if with_v {
            let s = 1.0 - i - v;
            let di = r.drift_infected(i, v, ctrl.c) * step + r.sigma * s * i * dw;
            let dv = r.drift_vaccinated(i, v, ctrl.p, ctrl.q) * step;
            i += di;
            v += dv;
            if i < 0.0 {
                i = 0.0;
                clamped = true;
            }
            if v < 0.0 {
                v = 0.0;
                clamped = true;
            }
            if i + v > 1.0 {
                let total = i + v;
                i /= total;
                v /= total;
                clamped = true;
            }
        } else {
            i += r.drift(i, ctrl.c) * step + r.sigma * i * (1.0 - i) * dw;
            if i < 0.0 {
                i = 0.0;
                clamped = true;
            } else if i > 1.0 {
                i = 1.0;
                clamped = true;
            }
        }
        out.clamps += clamped as u64;
        // land exactly on switch times and the horizon so that no
        // sub-ulp step can stall the loop
        if switch_at - t <= cfg.dt_sim && switch_at <= cfg.t_max {
            t = switch_at;
            seg += 1;
        } else if cfg.t_max - t <= cfg.dt_sim {
            t = cfg.t_max;
        } else {
            t += step;
        }
        if i <= spec.xi {
            out.tau = Some(t);
            break;
        }
    }
    if cfg.record {
        let ell = regimes.regime_at(t);
        out.trajectory.push(TrajPoint {
            t,
            i,
            v,
            regime: ell,
            control: policy.control(i, v, ell),
        });
    }
    out
}

/// One Euler–Maruyama path of the infected-fraction SDE from `(i0, ell0)`.
pub fn simulate_sis_path(
    spec: &ProblemSpec,
    policy: &dyn Feedback,
    cfg: &SimConfig,
    i0: f64,
    ell0: usize,
    path: u64,
) -> PathOutcome {
    euler_path(spec, policy, cfg, (i0, 0.0, ell0), path, false)
}

/// One Euler–Maruyama path of the vaccination model from `(i0, v0, ell0)`.
pub fn simulate_siv_path(
    spec: &ProblemSpec,
    policy: &dyn Feedback,
    cfg: &SimConfig,
    i0: f64,
    v0: f64,
    ell0: usize,
    path: u64,
) -> PathOutcome {
    euler_path(spec, policy, cfg, (i0, v0, ell0), path, true)
}

/// Result of running the controlled chain itself.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutcome {
    pub cost: f64,
    /// Interpolated time `t_η` at absorption (or at the horizon).
    pub t_eta: f64,
    pub steps: u64,
    pub absorbed: bool,
    pub states: Vec<usize>,
}

/// Samples the chain under a stationary policy from `start` until it is
/// absorbed or its interpolated time passes `t_max`, accumulating
/// `Σ e^{−δ t_n} F Δt_n`.
pub fn simulate_chain_path<C: ControlledChain>(
    chain: &C,
    policy: &[usize],
    start: usize,
    t_max: f64,
    seed: u64,
    path: u64,
    record: bool,
) -> ChainOutcome {
    let mut rng = path_rng(seed, path);
    let delta = chain.discount_rate();
    let mut s = start;
    let mut out = ChainOutcome {
        cost: 0.0,
        t_eta: 0.0,
        steps: 0,
        absorbed: chain.is_absorbed(start),
        states: Vec::new(),
    };
    while !chain.is_absorbed(s) && out.t_eta < t_max {
        if record {
            out.states.push(s);
        }
        let u = policy[s];
        let t = chain.transition(s, u);
        out.cost += (-delta * out.t_eta).exp() * chain.running_cost(s, u) * t.dt;
        out.t_eta += t.dt;
        let x: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = t.targets.last().expect("row has a self target").0;
        for &(target, p) in &t.targets {
            acc += p;
            if x < acc {
                next = target;
                break;
            }
        }
        s = next;
        out.steps += 1;
    }
    out.absorbed = chain.is_absorbed(s);
    if record {
        out.states.push(s);
    }
    out
}

/// Aggregate statistics over simulated paths.
#[derive(Clone, Debug, PartialEq)]
pub struct PathStats {
    pub n_paths: usize,
    pub mean_cost: f64,
    pub std_dev: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci_halfwidth: f64,
    /// `F_sup e^{−δ t_max} / δ`: the most cost truncation can hide.
    pub tail_bound: f64,
    pub eradication_fraction: f64,
    /// Mean of `τ` over eradicated paths.
    pub mean_tau: Option<f64>,
    pub violations: u64,
}

pub const Z_95: f64 = 1.959963984540054;

/// Neumaier-compensated sum.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if f64::abs(sum) >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean, normal 95% interval and truncation bound of `costs`.
pub fn estimate_cost(
    costs: &[f64],
    taus: &[Option<f64>],
    violations: u64,
    f_sup: f64,
    delta: f64,
    t_max: f64,
) -> Result<PathStats> {
    let n = costs.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 paths, got {n}")));
    }
    let mean = compensated_sum(costs.iter().copied()) / n as f64;
    let var = compensated_sum(costs.iter().map(|c| (c - mean) * (c - mean))) / (n - 1) as f64;
    let std_dev = var.sqrt();
    let hits: Vec<f64> = taus.iter().flatten().copied().collect();
    Ok(PathStats {
        n_paths: n,
        mean_cost: mean,
        std_dev,
        ci_halfwidth: Z_95 * std_dev / (n as f64).sqrt(),
        tail_bound: f_sup * (-delta * t_max).exp() / delta,
        eradication_fraction: if taus.is_empty() { 0.0 } else { hits.len() as f64 / taus.len() as f64 },
        mean_tau: (!hits.is_empty()).then(|| compensated_sum(hits.iter().copied()) / hits.len() as f64),
        violations,
    })
}

fn summarize(spec: &ProblemSpec, cfg: &SimConfig, paths: &[PathOutcome]) -> Result<PathStats> {
    let costs: Vec<f64> = paths.iter().map(|p| p.cost).collect();
    let taus: Vec<Option<f64>> = paths.iter().map(|p| p.tau).collect();
    let clamps = paths.iter().map(|p| p.clamps).sum();
    estimate_cost(&costs, &taus, clamps, spec.cost_sup(), spec.delta, cfg.t_max)
}

/// Runs `cfg.n_paths` infected-fraction paths in parallel.
pub fn run_sis(
    spec: &ProblemSpec,
    policy: &dyn Feedback,
    cfg: &SimConfig,
    i0: f64,
    ell0: usize,
) -> Result<(PathStats, Vec<PathOutcome>)> {
    cfg.validate()?;
    check_start(spec, i0, 0.0, ell0)?;
    let paths: Vec<PathOutcome> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|k| simulate_sis_path(spec, policy, cfg, i0, ell0, k))
        .collect();
    Ok((summarize(spec, cfg, &paths)?, paths))
}

/// Runs `cfg.n_paths` vaccination-model paths in parallel.
pub fn run_siv(
    spec: &ProblemSpec,
    policy: &dyn Feedback,
    cfg: &SimConfig,
    i0: f64,
    v0: f64,
    ell0: usize,
) -> Result<(PathStats, Vec<PathOutcome>)> {
    cfg.validate()?;
    spec.require_epsilon()?;
    check_start(spec, i0, v0, ell0)?;
    let paths: Vec<PathOutcome> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|k| simulate_siv_path(spec, policy, cfg, i0, v0, ell0, k))
        .collect();
    Ok((summarize(spec, cfg, &paths)?, paths))
}

/// Runs `n_paths` chain paths from `start` under `policy` in parallel.
pub fn run_chain<C: ControlledChain>(
    chain: &C,
    policy: &[usize],
    start: usize,
    cfg: &SimConfig,
) -> Result<PathStats> {
    cfg.validate()?;
    let outcomes: Vec<ChainOutcome> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|k| simulate_chain_path(chain, policy, start, cfg.t_max, cfg.seed, k, false))
        .collect();
    let costs: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
    let taus: Vec<Option<f64>> = outcomes.iter().map(|o| o.absorbed.then_some(o.t_eta)).collect();
    let spec = chain.spec();
    estimate_cost(&costs, &taus, 0, spec.cost_sup(), spec.delta, cfg.t_max)
}

fn check_start(spec: &ProblemSpec, i0: f64, v0: f64, ell0: usize) -> Result<()> {
    if ell0 >= spec.m0() {
        return Err(Error::Domain(format!("start regime {ell0} out of range")));
    }
    if !(0.0..=1.0).contains(&i0) || !(0.0..=1.0).contains(&v0) || i0 + v0 > 1.0 {
        return Err(Error::Domain(format!("start state ({i0}, {v0}) outside the simplex")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostModel, RegimeSpec};
    use approx::assert_abs_diff_eq;

    fn ex1() -> ProblemSpec {
        ProblemSpec::example1(CostModel::poly_regime(1.0, 1.0, 1.0))
    }

    fn one_regime(r: RegimeSpec) -> ProblemSpec {
        let mut s = ex1();
        s.regimes = vec![r];
        s.generator = SwitchingGenerator::trivial();
        s
    }

    #[test]
    fn trivial_generator_never_switches() {
        let mut rng = path_rng(1, 0);
        let p = simulate_regime_path(&SwitchingGenerator::trivial(), 0, 100.0, &mut rng);
        assert_eq!(p.regimes, vec![0]);
        assert_eq!(p.regime_at(50.0), 0);
    }

    #[test]
    fn holding_times_are_unit_exponential() {
        let gen = ex1().generator;
        let n = 10_000;
        let holds: Vec<f64> = (0..n)
            .map(|k| {
                let mut rng = path_rng(7, k);
                let p = simulate_regime_path(&gen, 0, 1e3, &mut rng);
                p.times[1]
            })
            .collect();
        let mean = holds.iter().sum::<f64>() / n as f64;
        // Exp(1): standard error of the mean is 1/sqrt(n)
        assert!((mean - 1.0).abs() <= 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn symmetric_occupation_is_half() {
        let gen = SwitchingGenerator::symmetric_two_state(2.0).unwrap();
        let horizon = 50.0;
        let n = 2000;
        let occ: Vec<f64> = (0..n)
            .map(|k| {
                let mut rng = path_rng(11, k);
                let p = simulate_regime_path(&gen, 0, horizon, &mut rng);
                let mut in0 = 0.0;
                for (j, &ell) in p.regimes.iter().enumerate() {
                    let end = p.times.get(j + 1).copied().unwrap_or(horizon);
                    if ell == 0 {
                        in0 += end - p.times[j];
                    }
                }
                in0 / horizon
            })
            .collect();
        let mean = occ.iter().sum::<f64>() / n as f64;
        let sd = (occ.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - 0.5).abs() <= 3.0 * sd / (n as f64).sqrt() + 1.0 / (4.0 * horizon), "mean {mean}");
    }

    /// RK4 on dI/dt = b(I) with a fine step.
    fn ode_exit(r: &RegimeSpec, i0: f64, xi: f64, h: f64) -> f64 {
        let f = |i: f64| r.drift(i, 0.0);
        let (mut i, mut t) = (i0, 0.0);
        while i > xi {
            let k1 = f(i);
            let k2 = f(i + 0.5 * h * k1);
            let k3 = f(i + 0.5 * h * k2);
            let k4 = f(i + h * k3);
            let next = i + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if next <= xi {
                // linear interpolation inside the last step
                return t + h * (i - xi) / (i - next);
            }
            i = next;
            t += h;
        }
        t
    }

    #[test]
    fn deterministic_path_matches_ode() {
        let r = RegimeSpec::new(0.45, 0.35, 0.5, 0.0);
        let spec = one_regime(r.clone());
        let exact = ode_exit(&r, 0.5, spec.xi, 1e-5);
        for dt in [1e-2, 1e-3] {
            let cfg = SimConfig {
                dt_sim: dt,
                t_max: 100.0,
                n_paths: 1,
                record: true,
                ..Default::default()
            };
            let out = simulate_sis_path(&spec, &ConstantControl(Control::default()), &cfg, 0.5, 0, 0);
            let tau = out.tau.unwrap();
            assert!((tau - exact).abs() <= 5.0 * dt, "dt {dt}: {tau} vs {exact}");
            assert!(out.trajectory.windows(2).all(|w| w[1].i < w[0].i));
            assert_eq!(out.clamps, 0);
        }
    }

    #[test]
    fn start_at_threshold_is_immediate() {
        let spec = ex1();
        let cfg = SimConfig::default();
        let out = simulate_sis_path(&spec, &ConstantControl(Control::default()), &cfg, spec.xi, 0, 0);
        assert_eq!(out.tau, Some(0.0));
        assert_eq!(out.cost, 0.0);
    }

    #[test]
    fn no_vaccination_reduces_to_sis() {
        let spec = ProblemSpec::example2([0.3, 0.7]);
        let cfg = SimConfig {
            dt_sim: 1e-3,
            t_max: 20.0,
            record: true,
            ..Default::default()
        };
        let ctrl = ConstantControl(Control::new(0.4, 0.0, 0.0));
        for path in 0..20 {
            let a = simulate_sis_path(&spec, &ctrl, &cfg, 0.5, 1, path);
            let b = simulate_siv_path(&spec, &ctrl, &cfg, 0.5, 0.0, 1, path);
            assert!(b.trajectory.iter().all(|p| p.v == 0.0));
            assert_eq!(a.trajectory.len(), b.trajectory.len());
            for (x, y) in a.trajectory.iter().zip(&b.trajectory) {
                assert_abs_diff_eq!(x.i, y.i, epsilon = 1e-9);
            }
            assert_eq!(a.tau.is_some(), b.tau.is_some());
        }
    }

    #[test]
    fn deterministic_siv_matches_ode() {
        let mut spec = ProblemSpec::example2([0.1, 0.1]);
        spec.regimes.truncate(1);
        spec.generator = SwitchingGenerator::trivial();
        let ctrl = Control::new(0.4, 0.4, 0.6);
        let r = spec.regimes[0].clone();
        let rhs = |i: f64, v: f64| (r.drift_infected(i, v, ctrl.c), r.drift_vaccinated(i, v, ctrl.p, ctrl.q));
        // RK4 reference at t = 2
        let (mut i, mut v) = (0.5, 0.1);
        let h = 1e-4;
        for _ in 0..20_000 {
            let k1 = rhs(i, v);
            let k2 = rhs(i + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
            let k3 = rhs(i + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
            let k4 = rhs(i + h * k3.0, v + h * k3.1);
            i += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        let cfg = SimConfig {
            dt_sim: 1e-3,
            t_max: 2.0,
            record: true,
            ..Default::default()
        };
        let out = simulate_siv_path(&spec, &ConstantControl(ctrl), &cfg, 0.5, 0.1, 0, 0);
        let last = out.trajectory.last().unwrap();
        assert!(out.tau.is_none());
        assert_abs_diff_eq!(last.t, 2.0, epsilon = 1e-9);
        assert!((last.i - i).abs() <= 5e-3 && (last.v - v).abs() <= 5e-3);
    }

    #[test]
    fn identical_costs_have_zero_width() {
        let s = estimate_cost(&[2.0; 10], &[None; 10], 0, 1.0, 0.05, 10.0).unwrap();
        assert_eq!(s.mean_cost, 2.0);
        assert_eq!(s.ci_halfwidth, 0.0);
        assert!(estimate_cost(&[1.0], &[None], 0, 1.0, 0.05, 1.0).is_err());
    }

    #[test]
    fn bernoulli_interval_matches_closed_form() {
        let n = 400;
        let k = 100;
        let costs: Vec<f64> = (0..n).map(|j| if j < k { 1.0 } else { 0.0 }).collect();
        let s = estimate_cost(&costs, &vec![None; n], 0, 1.0, 0.05, 10.0).unwrap();
        let p = k as f64 / n as f64;
        let sd = (p * (1.0 - p) * n as f64 / (n - 1) as f64).sqrt();
        assert_abs_diff_eq!(s.mean_cost, p, epsilon = 1e-15);
        assert_abs_diff_eq!(s.ci_halfwidth, Z_95 * sd / (n as f64).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn tail_bound_squares_when_horizon_doubles() {
        let a = estimate_cost(&[0.0, 1.0], &[None, None], 0, 3.0, 0.05, 10.0).unwrap();
        let b = estimate_cost(&[0.0, 1.0], &[None, None], 0, 3.0, 0.05, 20.0).unwrap();
        let fa = a.tail_bound * 0.05 / 3.0;
        let fb = b.tail_bound * 0.05 / 3.0;
        assert_abs_diff_eq!(fb, fa * fa, epsilon = 1e-15);
        let spec = ex1();
        let t = SimConfig::horizon_for_tail(&spec, 0.01);
        assert_abs_diff_eq!(spec.cost_sup() * (-0.05 * t).exp() / 0.05, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn runs_are_reproducible_across_thread_counts() {
        let spec = ex1();
        let cfg = SimConfig {
            n_paths: 64,
            t_max: 5.0,
            seed: 42,
            ..Default::default()
        };
        let ctrl = ConstantControl(Control::treatment(1.0));
        let a = run_sis(&spec, &ctrl, &cfg, 0.5, 1).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_sis(&spec, &ctrl, &cfg, 0.5, 1).unwrap());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn chain_path_from_absorbed_start_is_free() {
        let chain = SisChain::new(ex1(), 0.1).unwrap();
        let policy = vec![0; chain.n_states()];
        let out = simulate_chain_path(&chain, &policy, 0, 100.0, 0, 0, false);
        assert_eq!((out.cost, out.t_eta, out.steps), (0.0, 0.0, 0));
        assert!(out.absorbed);
    }

    #[test]
    fn heavy_discount_leaves_first_step_dominant() {
        let mut spec = ex1();
        spec.cost = CostModel::poly(1.0, 0.0, 0.0);
        spec.delta = 1e4;
        let chain = SisChain::new(spec, 0.1).unwrap();
        let policy = vec![0; chain.n_states()];
        let s = chain.grid().state(5, 0);
        let dt0 = chain.transition(s, 0).dt;
        for path in 0..50 {
            let out = simulate_chain_path(&chain, &policy, s, 1e3, 3, path, false);
            // first term is exactly F dt0; every later term is discounted by at least e^{−δ dt_min}
            assert!(out.cost >= dt0);
            assert!(out.cost <= dt0 + 1e-6);
        }
    }
}
