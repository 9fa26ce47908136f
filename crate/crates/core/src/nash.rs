//! Followers' Nash equilibrium by projected Picard-Banach iteration
//!
//! ```text
//!     x_{k+1} = Π_X[x_k − γ F(x_k, π)]
//! ```
//!
//! with Jacobi-style sweeps: every follower block of `x_{k+1}` is computed from
//! the same `x_k`, and each block is projected onto its own polyhedron.

use log::debug;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::game::{assemble_f1, check_strategy, FollowerSpec, JointStrategy, PricingGame};
use crate::linalg::sym_eigenvalues;
use crate::projection::ActiveSetQp;

pub const DEFAULT_EPS: f64 = 1e-8;
/// Extra Picard sweeps allowed beyond the contraction-based estimate.
pub const MAX_ITER_MARGIN: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct NashConfig {
    /// Fixed step `γ`; `None` picks `2/(λ_min + λ_max)` of `F1`.
    pub step: Option<f64>,
    /// Stop once `‖x_{k+1} − x_k‖ ≤ eps`.
    pub eps: f64,
    /// `None` derives the cap from the contraction factor.
    pub max_iter: Option<usize>,
}

impl Default for NashConfig {
    fn default() -> Self {
        NashConfig { step: None, eps: DEFAULT_EPS, max_iter: None }
    }
}

impl NashConfig {
    pub fn with_eps(eps: f64) -> Self {
        NashConfig { eps, ..Self::default() }
    }
}

/// Step size and the contraction factor it guarantees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contraction {
    pub gamma: f64,
    pub q: f64,
}

/// `γ* = 2/(λ_min + λ_max)` and `q = (λ_max − λ_min)/(λ_max + λ_min)`.
pub fn contraction_params(game: &PricingGame) -> Result<Contraction> {
    let spec = assemble_f1(game)?;
    Ok(contraction_from_spectrum(spec.lambda_min, spec.lambda_max))
}

pub fn contraction_from_spectrum(lambda_min: f64, lambda_max: f64) -> Contraction {
    let sum = lambda_min + lambda_max;
    Contraction { gamma: 2.0 / sum, q: (lambda_max - lambda_min) / sum }
}

/// Contraction factor `‖I − γ F1‖₂` for a user-chosen step.
pub fn contraction_for_step(game: &PricingGame, gamma: f64) -> Result<Contraction> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("Nash step must be positive, got {gamma}")));
    }
    let spec = assemble_f1(game)?;
    let q = sym_eigenvalues(&spec.matrix).into_iter().map(|l| (1.0 - gamma * l).abs()).fold(0.0, f64::max);
    if q >= 1.0 {
        return Err(Error::Config(format!("step {gamma} is not contractive: ‖I − γF1‖ = {q}")));
    }
    Ok(Contraction { gamma, q })
}

#[derive(Debug, Clone)]
pub struct FollowerDuals {
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct NashResult {
    pub x: JointStrategy,
    pub iterations: usize,
    pub residual: f64,
    /// `‖x_{k+1} − x_k‖` for every sweep.
    pub residual_history: Vec<f64>,
    /// Duals of each follower's last projection QP.
    pub duals: Vec<FollowerDuals>,
    pub contraction: Contraction,
    /// Stopping tolerance the result was computed with.
    pub eps: f64,
}

/// Picard solver holding one warm-startable projection per follower.
#[derive(Debug, Clone)]
pub struct NashSolver {
    projectors: Vec<ActiveSetQp>,
    contraction: Contraction,
    cfg: NashConfig,
}

impl NashSolver {
    pub fn new(game: &PricingGame, cfg: NashConfig) -> Result<Self> {
        if !(cfg.eps > 0.0) {
            return Err(Error::Config(format!("Nash tolerance must be positive, got {}", cfg.eps)));
        }
        let contraction = match cfg.step {
            Some(gamma) => contraction_for_step(game, gamma)?,
            None => contraction_params(game)?,
        };
        let projectors =
            game.followers.iter().map(|f| ActiveSetQp::new(&f.polyhedron())).collect::<Result<Vec<_>>>()?;
        Ok(NashSolver { projectors, contraction, cfg })
    }

    pub fn contraction(&self) -> Contraction {
        self.contraction
    }

    pub fn config(&self) -> &NashConfig {
        &self.cfg
    }

    /// Default start: each follower's phase-1 point.
    pub fn default_start(&self) -> JointStrategy {
        JointStrategy::from_blocks(self.projectors.iter().map(|p| p.start_point().clone()).collect())
    }

    pub fn solve(
        &mut self,
        game: &PricingGame,
        price: &DVector<f64>,
        x0: Option<&JointStrategy>,
    ) -> Result<NashResult> {
        if price.len() != game.price_dim() {
            return Err(Error::dim(None, "price", game.price_dim(), price.len()));
        }
        if (0..price.len()).any(|j| price[j] < game.price_lo[j] || price[j] > game.price_hi[j]) {
            debug!("price {:?} lies outside the leader box", price.as_slice());
        }
        let n = game.n_followers();
        let mut x = match x0 {
            Some(x0) => {
                check_strategy(game, x0)?;
                // make the start feasible; identity when it already is
                let blocks = self
                    .projectors
                    .iter_mut()
                    .zip(x0.blocks())
                    .map(|(p, b)| p.project(b, None).map(|s| s.x))
                    .collect::<Result<Vec<_>>>()?;
                JointStrategy::from_blocks(blocks)
            }
            None => self.default_start(),
        };

        let gamma = self.contraction.gamma;
        let q = self.contraction.q;
        let eps = self.cfg.eps;
        let mut history = Vec::new();
        let mut cap = self.cfg.max_iter.unwrap_or(usize::MAX);
        let mut duals = vec![FollowerDuals { lambda: DVector::zeros(0), nu: DVector::zeros(0) }; n];
        loop {
            let sigma = x.aggregate();
            let mut next = Vec::with_capacity(n);
            for (i, f) in game.followers.iter().enumerate() {
                let xi = x.block(i);
                let others = &sigma - xi;
                let z = xi - f.gradient(xi, &others, price) * gamma;
                let sol = self.projectors[i].project(&z, Some(xi))?;
                duals[i] = FollowerDuals { lambda: sol.lambda, nu: sol.nu };
                next.push(sol.x);
            }
            let next = JointStrategy::from_blocks(next);
            let residual = next.distance(&x);
            history.push(residual);
            x = next;

            if history.len() == 1 && self.cfg.max_iter.is_none() {
                cap = default_max_iter(eps, residual, q);
            }
            if residual <= eps {
                break;
            }
            if history.len() >= cap {
                return Err(Error::NashNonconvergence { iterations: history.len(), residual, history });
            }
        }
        Ok(NashResult {
            x,
            iterations: history.len(),
            residual: *history.last().unwrap_or(&0.0),
            residual_history: history,
            duals,
            contraction: self.contraction,
            eps,
        })
    }
}

/// `ceil(log(ε/‖x₁ − x₀‖)/log q) + 1000`.
fn default_max_iter(eps: f64, first_residual: f64, q: f64) -> usize {
    if first_residual <= eps || q <= 0.0 {
        return 1 + MAX_ITER_MARGIN;
    }
    let est = ((eps / first_residual).ln() / q.ln()).ceil();
    (est.max(0.0) as usize).saturating_add(1 + MAX_ITER_MARGIN)
}

/// Solves `G₀(π)` from `x0` (or each follower's phase-1 point).
pub fn solve_nash(
    game: &PricingGame,
    price: &DVector<f64>,
    cfg: &NashConfig,
    x0: Option<&JointStrategy>,
) -> Result<NashResult> {
    NashSolver::new(game, cfg.clone())?.solve(game, price, x0)
}

/// Optimal point and KKT multipliers of one follower's best response.
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub x: DVector<f64>,
    /// Inequality multipliers, `λ ≥ 0`.
    pub lambda: DVector<f64>,
    /// Equality multipliers.
    pub nu: DVector<f64>,
}

/// `min ½xᵀPx + xᵀ(Qσ_others + r + Sπ)` over the follower's polyhedron.
pub fn best_response_qp(
    follower: &FollowerSpec,
    sigma_others: &DVector<f64>,
    price: &DVector<f64>,
) -> Result<BestResponse> {
    let mut solver = ActiveSetQp::new(&follower.polyhedron())?;
    best_response_with(&mut solver, follower, sigma_others, price)
}

pub fn best_response_with(
    solver: &mut ActiveSetQp,
    follower: &FollowerSpec,
    sigma_others: &DVector<f64>,
    price: &DVector<f64>,
) -> Result<BestResponse> {
    let c = follower.linear_term(sigma_others, price);
    let sol = solver.solve(&follower.p, &c, None)?;
    Ok(BestResponse { x: sol.x, lambda: sol.lambda, nu: sol.nu })
}

#[derive(Debug, Clone)]
pub struct NashVerification {
    /// `‖x^{i*} − BR_i(σ(x^{-i*}), π)‖` per follower.
    pub deviations: Vec<f64>,
    pub worst: f64,
    pub worst_follower: usize,
    /// Followers whose deviation exceeds the tolerance.
    pub flagged: Vec<usize>,
    pub tol: f64,
}

impl NashVerification {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

/// Compares every follower's strategy with its exact best response to the others.
pub fn verify_nash(game: &PricingGame, x: &JointStrategy, price: &DVector<f64>, tol: f64) -> Result<NashVerification> {
    check_strategy(game, x)?;
    let sigma = x.aggregate();
    let mut deviations = Vec::with_capacity(game.n_followers());
    for (i, f) in game.followers.iter().enumerate() {
        let others = &sigma - x.block(i);
        let br = best_response_qp(f, &others, price)?;
        deviations.push((&br.x - x.block(i)).norm());
    }
    let (worst_follower, worst) =
        deviations.iter().copied().enumerate().fold((0, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    let flagged = deviations.iter().enumerate().filter(|(_, &d)| d > tol).map(|(i, _)| i).collect();
    Ok(NashVerification { deviations, worst, worst_follower, flagged, tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::g2;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn g2_contraction_parameters() {
        let c = contraction_params(&g2()).unwrap();
        assert_abs_diff_eq!(c.gamma, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.q, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn scalar_spectrum_is_one_step() {
        let c = contraction_from_spectrum(1.0, 1.0);
        assert_eq!((c.gamma, c.q), (1.0, 0.0));
        let c = contraction_from_spectrum(4.0, 4.0);
        assert_eq!((c.gamma, c.q), (0.25, 0.0));
    }

    #[test]
    fn explicit_step_is_checked() {
        let game = g2();
        let c = contraction_for_step(&game, 0.4).unwrap();
        assert_abs_diff_eq!(c.q, 0.6, epsilon = 1e-12);
        assert!(matches!(contraction_for_step(&game, 0.7), Err(Error::Config(_))));
    }

    #[test]
    fn g2_equilibria() {
        let game = g2();
        let cfg = NashConfig::default();
        let r = solve_nash(&game, &v(&[0.0, 0.0]), &cfg, None).unwrap();
        for b in r.x.blocks() {
            assert_abs_diff_eq!(*b, v(&[0.5, 0.5]), epsilon = cfg.eps);
        }
        let r = solve_nash(&game, &v(&[1.0, 0.0]), &cfg, None).unwrap();
        for b in r.x.blocks() {
            assert_abs_diff_eq!(*b, v(&[1.0 / 3.0, 2.0 / 3.0]), epsilon = 1e-6);
        }
        assert!(r.residual <= cfg.eps);
    }

    #[test]
    fn g2_independent_starts_agree() {
        let game = g2();
        let cfg = NashConfig::default();
        let price = v(&[1.0, 0.0]);
        let a = JointStrategy::from_blocks(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]);
        let b = JointStrategy::from_blocks(vec![v(&[0.1, 0.9]), v(&[0.8, 0.2])]);
        let ra = solve_nash(&game, &price, &cfg, Some(&a)).unwrap();
        let rb = solve_nash(&game, &price, &cfg, Some(&b)).unwrap();
        assert!(ra.x.distance(&rb.x) <= 2.0 * cfg.eps);
    }

    #[test]
    fn nonconvergence_carries_history() {
        let cfg = NashConfig { max_iter: Some(2), eps: 1e-14, step: None };
        let err = solve_nash(&g2(), &v(&[1.0, 0.0]), &cfg, None).unwrap_err();
        match err {
            Error::NashNonconvergence { iterations, history, .. } => {
                assert_eq!(iterations, 2);
                assert_eq!(history.len(), 2);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn best_response_examples() {
        let game = g2();
        let f = &game.followers[0];
        let br = best_response_qp(f, &v(&[1.0 / 3.0, 2.0 / 3.0]), &v(&[1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(br.x, v(&[1.0 / 3.0, 2.0 / 3.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(br.nu[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(br.lambda.amax(), 0.0, epsilon = 1e-12);

        let br = best_response_qp(f, &v(&[0.0, 0.0]), &v(&[0.0, 5.0])).unwrap();
        assert_abs_diff_eq!(br.x, v(&[1.0, 0.0]), epsilon = 1e-12);
        assert!(br.lambda[1] > 0.0);
    }

    #[test]
    fn unconstrained_best_response_is_minus_s_pi() {
        let f = FollowerSpec {
            p: DMatrix::identity(2, 2),
            q: DMatrix::zeros(2, 2),
            r: DVector::zeros(2),
            s: DMatrix::identity(2, 2),
            a: DMatrix::zeros(0, 2),
            b: DVector::zeros(0),
            g: DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            h: DVector::from_element(4, 10.0),
        };
        let br = best_response_qp(&f, &DVector::zeros(2), &v(&[1.5, -2.0])).unwrap();
        assert_abs_diff_eq!(br.x, v(&[-1.5, 2.0]), epsilon = 1e-12);
    }

    #[test]
    fn verification_flags_perturbed_follower() {
        let game = g2();
        let price = v(&[1.0, 0.0]);
        let r = solve_nash(&game, &price, &NashConfig::default(), None).unwrap();
        let ok = verify_nash(&game, &r.x, &price, 1e-6).unwrap();
        assert!(ok.passed(), "{ok:?}");

        let mut bad = r.x.clone();
        bad.blocks_mut()[1] += v(&[0.1, -0.1]);
        let rep = verify_nash(&game, &bad, &price, 1e-6).unwrap();
        assert!(rep.flagged.contains(&1));
        assert!(rep.worst > 1e-6);
    }

    #[test]
    fn single_follower_verification() {
        let mut game = g2();
        game.followers.truncate(1);
        let price = v(&[1.0, 0.0]);
        let r = solve_nash(&game, &price, &NashConfig::default(), None).unwrap();
        let br = best_response_qp(&game.followers[0], &DVector::zeros(2), &price).unwrap();
        assert_abs_diff_eq!(r.x.block(0).clone(), br.x, epsilon = 1e-7);
        assert!(verify_nash(&game, &r.x, &price, 1e-6).unwrap().passed());
    }
}
