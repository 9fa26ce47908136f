//! Stackelberg pricing games: follower cost data, the leader's objective, and
//! the affine pseudo-gradient of the followers' game.
//!
//! Follower `i` minimizes
//!
//! ```text
//!     J^i(x^i, x^{-i}, π) = ½ x^iᵀ P x^i + x^iᵀ Q σ(x^{-i}) + r_iᵀ x^i + x^iᵀ S_i π
//! ```
//!
//! over `X_i = {x : A_i x = b_i, G_i x ≤ h_i}`, where `σ(x^{-i})` is the sum of
//! the other followers' strategies.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::sym_extreme_eigenvalues;
use crate::projection::Polyhedron;

/// One follower's quadratic cost and feasible polyhedron.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerSpec {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DVector<f64>,
    /// Price weighting, `m_F × m_L`.
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl FollowerSpec {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn polyhedron(&self) -> Polyhedron {
        Polyhedron { a: self.a.clone(), b: self.b.clone(), g: self.g.clone(), h: self.h.clone() }
    }

    /// `Q σ_others + r + S π`, the part of the gradient that does not depend on `x^i`.
    pub fn linear_term(&self, sigma_others: &DVector<f64>, price: &DVector<f64>) -> DVector<f64> {
        &self.q * sigma_others + &self.r + &self.s * price
    }

    pub fn gradient(&self, x: &DVector<f64>, sigma_others: &DVector<f64>, price: &DVector<f64>) -> DVector<f64> {
        &self.p * x + self.linear_term(sigma_others, price)
    }

    pub fn cost(&self, x: &DVector<f64>, sigma_others: &DVector<f64>, price: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + x.dot(&self.linear_term(sigma_others, price))
    }

    fn check_dimensions(&self, i: usize, m_f: usize, m_l: usize) -> Result<()> {
        let fi = Some(i);
        let shape = |m: &DMatrix<f64>| format!("{}x{}", m.nrows(), m.ncols());
        if self.p.shape() != (m_f, m_f) {
            return Err(Error::dim(fi, "P", format!("{m_f}x{m_f}"), shape(&self.p)));
        }
        if self.q.shape() != (m_f, m_f) {
            return Err(Error::dim(fi, "Q", format!("{m_f}x{m_f}"), shape(&self.q)));
        }
        if self.r.len() != m_f {
            return Err(Error::dim(fi, "r", m_f, self.r.len()));
        }
        if self.s.shape() != (m_f, m_l) {
            return Err(Error::dim(fi, "S", format!("{m_f}x{m_l}"), shape(&self.s)));
        }
        if self.a.nrows() > 0 && self.a.ncols() != m_f {
            return Err(Error::dim(fi, "A", format!("{}x{m_f}", self.a.nrows()), shape(&self.a)));
        }
        if self.b.len() != self.a.nrows() {
            return Err(Error::dim(fi, "b", self.a.nrows(), self.b.len()));
        }
        if self.g.nrows() > 0 && self.g.ncols() != m_f {
            return Err(Error::dim(fi, "G", format!("{}x{m_f}", self.g.nrows()), shape(&self.g)));
        }
        if self.h.len() != self.g.nrows() {
            return Err(Error::dim(fi, "h", self.g.nrows(), self.h.len()));
        }
        Ok(())
    }
}

/// Partial derivatives of the leader's objective at one `(x, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderEval {
    pub value: f64,
    pub d_price: DVector<f64>,
    /// One `m_F` vector per follower.
    pub d_strategy: Vec<DVector<f64>>,
}

/// What a leader objective must provide to the optimizer.
pub trait LeaderCost {
    fn evaluate(&self, x: &JointStrategy, price: &DVector<f64>) -> LeaderEval;

    fn value(&self, x: &JointStrategy, price: &DVector<f64>) -> f64 {
        self.evaluate(x, price).value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeaderObjective {
    /// `½‖σ(x) − target‖²`.
    Tracking { target: DVector<f64> },
}

impl LeaderCost for LeaderObjective {
    fn evaluate(&self, x: &JointStrategy, price: &DVector<f64>) -> LeaderEval {
        match self {
            LeaderObjective::Tracking { target } => {
                let err = x.aggregate() - target;
                LeaderEval {
                    value: 0.5 * err.norm_squared(),
                    d_price: DVector::zeros(price.len()),
                    d_strategy: vec![err; x.len()],
                }
            }
        }
    }
}

/// Followers, the leader's box price set and the leader's objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingGame {
    pub followers: Vec<FollowerSpec>,
    pub price_lo: DVector<f64>,
    pub price_hi: DVector<f64>,
    pub leader: LeaderObjective,
}

impl PricingGame {
    pub fn new(
        followers: Vec<FollowerSpec>,
        price_lo: DVector<f64>,
        price_hi: DVector<f64>,
        leader: LeaderObjective,
    ) -> Result<Self> {
        let game = PricingGame { followers, price_lo, price_hi, leader };
        game.check_dimensions()?;
        Ok(game)
    }

    pub fn n_followers(&self) -> usize {
        self.followers.len()
    }

    /// `m_F`, the per-follower strategy dimension.
    pub fn strategy_dim(&self) -> usize {
        self.followers.first().map_or(0, FollowerSpec::dim)
    }

    /// `m_L`, the price dimension.
    pub fn price_dim(&self) -> usize {
        self.price_lo.len()
    }

    pub fn box_midpoint(&self) -> DVector<f64> {
        (&self.price_lo + &self.price_hi) * 0.5
    }

    pub fn check_dimensions(&self) -> Result<()> {
        if self.followers.is_empty() {
            return Err(Error::dim(None, "followers", ">= 1", 0));
        }
        let m_f = self.strategy_dim();
        let m_l = self.price_dim();
        if self.price_hi.len() != m_l {
            return Err(Error::dim(None, "price_hi", m_l, self.price_hi.len()));
        }
        for (i, f) in self.followers.iter().enumerate() {
            f.check_dimensions(i, m_f, m_l)?;
        }
        match &self.leader {
            LeaderObjective::Tracking { target } if target.len() != m_f => {
                Err(Error::dim(None, "leader.target", m_f, target.len()))
            }
            _ => Ok(()),
        }
    }

    /// `J^L(x, π)` with its partials.
    pub fn leader_value_and_partials(&self, x: &JointStrategy, price: &DVector<f64>) -> LeaderEval {
        self.leader.evaluate(x, price)
    }
}

/// Per-follower strategies, ordered by follower index.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStrategy {
    blocks: Vec<DVector<f64>>,
}

impl JointStrategy {
    pub fn from_blocks(blocks: Vec<DVector<f64>>) -> Self {
        JointStrategy { blocks }
    }

    /// Splits a stacked vector into `n` blocks of equal length.
    pub fn from_stacked(x: &DVector<f64>, n: usize) -> Self {
        let m = x.len() / n.max(1);
        JointStrategy { blocks: (0..n).map(|i| x.rows(i * m, m).into_owned()).collect() }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let total: usize = self.blocks.iter().map(|b| b.len()).sum();
        DVector::from_iterator(total, self.blocks.iter().flat_map(|b| b.iter().copied()))
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, i: usize) -> &DVector<f64> {
        &self.blocks[i]
    }

    pub fn blocks(&self) -> &[DVector<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DVector<f64>] {
        &mut self.blocks
    }

    /// `σ(x) = Σ_i x^i`.
    pub fn aggregate(&self) -> DVector<f64> {
        let m = self.blocks.first().map_or(0, |b| b.len());
        self.blocks.iter().fold(DVector::zeros(m), |acc, b| acc + b)
    }

    /// `σ(x^{-i}) = Σ_{j≠i} x^j`.
    pub fn aggregate_excluding(&self, i: usize) -> DVector<f64> {
        let m = self.blocks.first().map_or(0, |b| b.len());
        self.blocks.iter().enumerate().filter(|&(j, _)| j != i).fold(DVector::zeros(m), |acc, (_, b)| acc + b)
    }

    pub fn distance(&self, other: &JointStrategy) -> f64 {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt()
    }
}

/// `F(x, π) = col(P x^i + Q σ(x^{-i}) + r_i + S_i π)`.
pub fn pseudo_gradient(game: &PricingGame, x: &JointStrategy, price: &DVector<f64>) -> Result<DVector<f64>> {
    check_strategy(game, x)?;
    if price.len() != game.price_dim() {
        return Err(Error::dim(None, "price", game.price_dim(), price.len()));
    }
    let sigma = x.aggregate();
    let blocks = game
        .followers
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let others = &sigma - x.block(i);
            f.gradient(x.block(i), &others, price)
        })
        .collect();
    Ok(JointStrategy::from_blocks(blocks).stacked())
}

pub(crate) fn check_strategy(game: &PricingGame, x: &JointStrategy) -> Result<()> {
    if x.len() != game.n_followers() {
        return Err(Error::dim(None, "x", game.n_followers(), x.len()));
    }
    let m = game.strategy_dim();
    for (i, b) in x.blocks().iter().enumerate() {
        if b.len() != m {
            return Err(Error::dim(Some(i), "x", m, b.len()));
        }
    }
    Ok(())
}

/// Linear part `F1 = I_N ⊗ (P − Q) + 1 1ᵀ ⊗ Q` of the pseudo-gradient and its
/// extreme eigenvalues.
#[derive(Debug, Clone)]
pub struct F1Spectrum {
    pub matrix: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

pub fn assemble_f1(game: &PricingGame) -> Result<F1Spectrum> {
    game.check_dimensions()?;
    let n = game.n_followers();
    let m = game.strategy_dim();
    let p = &game.followers[0].p;
    let q = &game.followers[0].q;
    let diag = p - q;
    let mut f1 = DMatrix::zeros(n * m, n * m);
    for i in 0..n {
        for j in 0..n {
            let block = if i == j { &diag + q } else { q.clone() };
            f1.view_mut((i * m, j * m), (m, m)).copy_from(&block);
        }
    }
    let (lambda_min, lambda_max) = sym_extreme_eigenvalues(&f1);
    if lambda_min <= 0.0 {
        return Err(Error::Monotonicity { lambda_min });
    }
    Ok(F1Spectrum { matrix: f1, lambda_min, lambda_max })
}
