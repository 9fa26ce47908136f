//! The leader's projected gradient descent with Armijo backtracking along the
//! projection arc.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{JointStrategy, PricingGame};
use crate::nash::{NashConfig, NashResult, NashSolver};
use crate::projection::project_box;
use crate::sensitivity::{nash_sensitivities, SensitivityResult, DEFAULT_ACTIVE_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderConfig {
    /// Backtracking factor, in (0, 1).
    pub beta: f64,
    /// Initial step `s̄`.
    pub s_bar: f64,
    /// Sufficient-decrease constant, in (0, 1).
    pub delta: f64,
    /// Outer iteration cap `T`.
    pub max_outer: usize,
    /// Bound on `‖π − Π[π − s̄·grad]‖`. `None` uses `1e-9·s̄·‖grad₀‖`, floored at 1e-14.
    pub tol_stat: Option<f64>,
    pub l_max: u32,
    /// Active-set tolerance for the follower Jacobians.
    pub active_tol: f64,
}

impl Default for LeaderConfig {
    fn default() -> Self {
        LeaderConfig {
            beta: 0.25,
            s_bar: 1e-6,
            delta: 1e-5,
            max_outer: 10_000,
            tol_stat: None,
            l_max: 60,
            active_tol: DEFAULT_ACTIVE_TOL,
        }
    }
}

impl LeaderConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.beta) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !open_unit(self.delta) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.s_bar > 0.0 && self.s_bar.is_finite()) {
            return Err(Error::Config(format!("s_bar must be positive, got {}", self.s_bar)));
        }
        if let Some(t) = self.tol_stat {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("tol_stat must be nonnegative, got {t}")));
            }
        }
        if !(self.active_tol > 0.0) {
            return Err(Error::Config(format!("active_tol must be positive, got {}", self.active_tol)));
        }
        Ok(())
    }

    fn default_tol_stat(&self, grad0_norm: f64) -> f64 {
        self.tol_stat.unwrap_or_else(|| (1e-9 * self.s_bar * grad0_norm).max(1e-14))
    }
}

/// `∂J^L/∂π + Σ_i D_πx^{i*}ᵀ ∂J^L/∂x^i` at the equilibrium.
pub fn total_gradient(
    game: &PricingGame,
    x: &JointStrategy,
    sens: &[SensitivityResult],
    price: &DVector<f64>,
) -> DVector<f64> {
    let eval = game.leader_value_and_partials(x, price);
    let mut g = eval.d_price;
    for (s, d) in sens.iter().zip(&eval.d_strategy) {
        g += s.jacobian.tr_mul(d);
    }
    g
}

/// `‖π − Π[π − s·grad]‖`.
pub fn stationarity_gap(
    price: &DVector<f64>,
    grad: &DVector<f64>,
    s: f64,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> Result<f64> {
    Ok((price - project_box(&(price - grad * s), lo, hi)?).norm())
}

#[derive(Debug, Clone)]
pub struct ArmijoOutcome<T> {
    pub price: DVector<f64>,
    pub l: u32,
    /// Accepted `s = β^l s̄`; zero when the start was already stationary.
    pub step: f64,
    /// Objective at the accepted point and whatever the evaluator attached.
    /// `None` when the start was stationary.
    pub accepted: Option<(f64, T)>,
    /// Evaluator calls made, including rejected trials.
    pub trials: u32,
}

/// Finds the smallest `l` with
/// `J(π) − J(π⁺) ≥ δ·gradᵀ(π − π⁺)` where `π⁺ = Π[π − β^l s̄·grad]`.
///
/// The evaluator returns the true objective at a trial price.
#[allow(clippy::too_many_arguments)]
pub fn armijo_step<T, F>(
    price: &DVector<f64>,
    grad: &DVector<f64>,
    current_value: f64,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    cfg: &LeaderConfig,
    tol_stat: f64,
    mut evaluator: F,
) -> Result<ArmijoOutcome<T>>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, T)>,
{
    if stationarity_gap(price, grad, cfg.s_bar, lo, hi)? <= tol_stat {
        return Ok(ArmijoOutcome { price: price.clone(), l: 0, step: 0.0, accepted: None, trials: 0 });
    }
    let mut s = cfg.s_bar;
    for l in 0..=cfg.l_max {
        let trial = project_box(&(price - grad * s), lo, hi)?;
        let (value, payload) = evaluator(&trial)?;
        let decrease = current_value - value;
        let required = cfg.delta * grad.dot(&(price - &trial));
        if decrease >= required {
            return Ok(ArmijoOutcome { price: trial, l, step: s, accepted: Some((value, payload)), trials: l + 1 });
        }
        s *= cfg.beta;
    }
    Err(Error::StalledStep { l_max: cfg.l_max })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub price: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub grad_norm: f64,
    pub armijo_l: u32,
    pub step: f64,
    /// Picard sweeps spent in this iteration, Armijo trials included.
    pub nash_iters: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LeaderTrace {
    pub rows: Vec<TraceRow>,
}

impl LeaderTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].value <= w[0].value)
    }

    /// Largest `|J_{t+1} − J_t|` over the last `k` steps.
    pub fn tail_change(&self, k: usize) -> f64 {
        let n = self.rows.len();
        self.rows[n.saturating_sub(k + 1)..].windows(2).map(|w| (w[1].value - w[0].value).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Stationary,
    /// Backtracking hit `l_max`; treated as stationary.
    Stalled {
        l_max: u32,
    },
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct StackelbergResult {
    pub price: DVector<f64>,
    pub nash: NashResult,
    pub value: f64,
    pub trace: LeaderTrace,
    pub termination: Termination,
    pub tol_stat: f64,
}

impl StackelbergResult {
    pub fn strategy(&self) -> &JointStrategy {
        &self.nash.x
    }
}

/// Leader descent from `π₀` (projected into the box if needed).
pub fn solve_stackelberg(
    game: &PricingGame,
    price0: &DVector<f64>,
    nash_cfg: &NashConfig,
    cfg: &LeaderConfig,
) -> Result<StackelbergResult> {
    cfg.validate()?;
    if price0.len() != game.price_dim() {
        return Err(Error::dim(None, "pi0", game.price_dim(), price0.len()));
    }
    let (lo, hi) = (&game.price_lo, &game.price_hi);
    let mut price = project_box(price0, lo, hi)?;
    if price != *price0 {
        warn!("initial price {:?} projected into the leader box", price0.as_slice());
    }
    let mut solver = NashSolver::new(game, nash_cfg.clone())?;
    let at = |t: usize| move |e: Error| Error::Leader { t, source: Box::new(e) };

    let mut nash = solver.solve(game, &price, None).map_err(at(0))?;
    let mut value = game.leader_value_and_partials(&nash.x, &price).value;
    let mut trace = LeaderTrace::default();
    let mut tol_stat = cfg.tol_stat.unwrap_or(0.0);
    let mut pending_iters = nash.iterations;
    let mut termination = Termination::MaxIterations;

    for t in 0..cfg.max_outer {
        let clock = Instant::now();
        let sens = nash_sensitivities(game, &nash, &price, cfg.active_tol).map_err(at(t))?;
        let grad = total_gradient(game, &nash.x, &sens, &price);
        if t == 0 {
            tol_stat = cfg.default_tol_stat(grad.norm());
        }
        let mut sweeps = pending_iters;
        let x_t = nash.x.clone();
        let step = armijo_step(&price, &grad, value, lo, hi, cfg, tol_stat, |trial| {
            let r = solver.solve(game, trial, Some(&x_t))?;
            sweeps += r.iterations;
            Ok((game.leader_value_and_partials(&r.x, trial).value, r))
        });
        let mut row = TraceRow {
            t,
            price: price.clone(),
            value,
            grad_norm: grad.norm(),
            grad,
            armijo_l: 0,
            step: 0.0,
            nash_iters: 0,
            wall_ms: 0.0,
        };
        let outcome = match step {
            Ok(o) => o,
            Err(Error::StalledStep { l_max }) => {
                warn!("leader iteration {t}: Armijo backtracking stalled after {l_max} reductions");
                row.armijo_l = l_max;
                row.nash_iters = sweeps;
                row.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
                trace.rows.push(row);
                termination = Termination::Stalled { l_max };
                break;
            }
            Err(e) => return Err(at(t)(e)),
        };
        row.armijo_l = outcome.l;
        row.step = outcome.step;
        row.nash_iters = sweeps;
        row.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        debug!("t={t} J={value:e} |g|={:e} l={} s={:e}", row.grad_norm, row.armijo_l, row.step);
        trace.rows.push(row);
        match outcome.accepted {
            None => {
                termination = Termination::Stationary;
                break;
            }
            Some((v, r)) => {
                price = outcome.price;
                value = v;
                nash = r;
                pending_iters = 0;
            }
        }
    }
    Ok(StackelbergResult { price, nash, value, trace, termination, tol_stat })
}

/// Runs [`solve_stackelberg`] from each seed; results keep the seed order.
pub fn solve_multistart(
    game: &PricingGame,
    seeds: &[DVector<f64>],
    nash_cfg: &NashConfig,
    cfg: &LeaderConfig,
) -> Vec<Result<StackelbergResult>> {
    seeds.par_iter().map(|s| solve_stackelberg(game, s, nash_cfg, cfg)).collect()
}

/// Index of the lowest final objective among successful runs.
pub fn best_run(runs: &[Result<StackelbergResult>]) -> Option<usize> {
    runs.iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().ok().map(|r| (i, r.value)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::g2;
    use crate::nash::solve_nash;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn gradient_at(game: &PricingGame, price: &DVector<f64>) -> DVector<f64> {
        let nash = solve_nash(game, price, &NashConfig::default(), None).unwrap();
        let sens = nash_sensitivities(game, &nash, price, DEFAULT_ACTIVE_TOL).unwrap();
        total_gradient(game, &nash.x, &sens, price)
    }

    #[test]
    fn g2_total_gradient() {
        let game = g2();
        assert_abs_diff_eq!(gradient_at(&game, &v(&[0.0, 0.0])), v(&[-1.0 / 3.0, 1.0 / 3.0]), epsilon = 1e-7);
        assert_abs_diff_eq!(gradient_at(&game, &v(&[1.0, 0.0])), v(&[0.0, 0.0]), epsilon = 1e-7);
    }

    #[test]
    fn price_blind_followers_leave_only_direct_partial() {
        let mut game = g2();
        for f in &mut game.followers {
            f.s = DMatrix::zeros(2, 2);
        }
        assert_eq!(gradient_at(&game, &v(&[2.0, 1.0])), v(&[0.0, 0.0]));
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let cfg = LeaderConfig::default();
        let (lo, hi) = (v(&[0.0, 0.0]), v(&[5.0, 5.0]));
        let out = armijo_step(&v(&[1.0, 2.0]), &v(&[0.0, 0.0]), 3.0, &lo, &hi, &cfg, 0.0, |_| -> Result<(f64, ())> {
            panic!("no trial expected")
        })
        .unwrap();
        assert_eq!((out.l, out.price), (0, v(&[1.0, 2.0])));
        assert!(out.accepted.is_none());
    }

    #[test]
    fn g2_first_trial_accepted() {
        let game = g2();
        let cfg = LeaderConfig::default();
        let grad = v(&[-1.0 / 3.0, 1.0 / 3.0]);
        let eval = |p: &DVector<f64>| -> Result<(f64, ())> {
            let r = solve_nash(&game, p, &NashConfig::with_eps(1e-13), None)?;
            Ok((game.leader_value_and_partials(&r.x, p).value, ()))
        };
        let out =
            armijo_step(&v(&[0.0, 0.0]), &grad, 1.0 / 9.0, &game.price_lo, &game.price_hi, &cfg, 0.0, eval).unwrap();
        assert_eq!(out.l, 0);
        assert_abs_diff_eq!(out.price, v(&[1e-6 / 3.0, 0.0]), epsilon = 1e-20);
        assert!(out.accepted.unwrap().0 < 1.0 / 9.0);
    }

    #[test]
    fn strict_delta_forces_backtracking() {
        // f = ½‖π‖², grad = π: decrease (s − s²/2)‖π‖² ≥ δ s‖π‖² iff s ≤ 2(1 − δ)
        let cfg = LeaderConfig { s_bar: 1.0, delta: 0.999, ..LeaderConfig::default() };
        let (lo, hi) = (v(&[-10.0, -10.0]), v(&[10.0, 10.0]));
        let p = v(&[1.0, 1.0]);
        let out = armijo_step(&p, &p, 1.0, &lo, &hi, &cfg, 0.0, |q| Ok((0.5 * q.norm_squared(), ()))).unwrap();
        assert_eq!(out.l, 5);
        assert_eq!(out.step, 0.25f64.powi(5));
    }

    #[test]
    fn ascent_direction_stalls() {
        let cfg = LeaderConfig { l_max: 3, ..LeaderConfig::default() };
        let (lo, hi) = (v(&[-10.0]), v(&[10.0]));
        let err = armijo_step(&v(&[1.0]), &v(&[-1.0]), 0.5, &lo, &hi, &cfg, 0.0, |q| Ok((0.5 * q.norm_squared(), ())))
            .unwrap_err();
        assert!(matches!(err, Error::StalledStep { l_max: 3 }));
    }

    #[test]
    fn optimum_start_stops_at_once() {
        let game = g2();
        let r = solve_stackelberg(&game, &v(&[1.0, 0.0]), &NashConfig::default(), &LeaderConfig::default()).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.termination, Termination::Stationary);
        assert_eq!(r.price, v(&[1.0, 0.0]));
    }

    #[test]
    fn zero_cap_returns_start() {
        let game = g2();
        let cfg = LeaderConfig { max_outer: 0, ..LeaderConfig::default() };
        let r = solve_stackelberg(&game, &v(&[0.0, 0.0]), &NashConfig::default(), &cfg).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(r.price, v(&[0.0, 0.0]));
        assert_eq!(r.termination, Termination::MaxIterations);
    }

    #[test]
    fn outside_start_is_projected() {
        let game = g2();
        let cfg = LeaderConfig { max_outer: 0, ..LeaderConfig::default() };
        let r = solve_stackelberg(&game, &v(&[-1.0, 7.0]), &NashConfig::default(), &cfg).unwrap();
        assert_eq!(r.price, v(&[0.0, 5.0]));
    }

    #[test]
    fn g2_descends_to_zero() {
        let game = g2();
        let cfg = LeaderConfig { s_bar: 1e-2, ..LeaderConfig::default() };
        let r = solve_stackelberg(&game, &v(&[0.0, 0.0]), &NashConfig::default(), &cfg).unwrap();
        assert!(r.trace.is_nonincreasing());
        assert!(r.value <= 1e-8, "{}", r.value);
        assert_ne!(r.termination, Termination::MaxIterations);
        assert!(r.trace.tail_change(5) < 1e-10);
        for row in &r.trace.rows {
            assert!(row.price.iter().zip(game.price_lo.iter().zip(&game.price_hi)).all(|(p, (l, h))| l <= p && p <= h));
        }
    }

    #[test]
    fn bad_config_rejected() {
        for cfg in [
            LeaderConfig { beta: 1.0, ..LeaderConfig::default() },
            LeaderConfig { delta: 0.0, ..LeaderConfig::default() },
            LeaderConfig { s_bar: -1.0, ..LeaderConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
