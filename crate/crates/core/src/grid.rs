//! Exhaustive grid search over the leader's price box.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{JointStrategy, PricingGame};
use crate::nash::{NashConfig, NashSolver};

pub const MAX_GRID_EVALUATIONS: u128 = 1_000_000;
/// Grid points solved in sequence by one warm-started solver.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    /// Position in lexicographic grid order, first coordinate slowest.
    pub index: usize,
    pub price: DVector<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Every grid point, best first.
    pub ranked: Vec<GridPoint>,
    pub points_per_axis: usize,
}

impl GridResult {
    pub fn best(&self) -> &GridPoint {
        &self.ranked[0]
    }
}

/// `k`-th of `n` evenly spaced values on `[lo, hi]`; the midpoint when `n = 1`.
fn axis_value(lo: f64, hi: f64, k: usize, n: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}

pub fn grid_price(game: &PricingGame, index: usize, points_per_axis: usize) -> DVector<f64> {
    let m = game.price_dim();
    let mut rest = index;
    let mut p = DVector::zeros(m);
    for j in (0..m).rev() {
        let k = rest % points_per_axis;
        rest /= points_per_axis;
        p[j] = axis_value(game.price_lo[j], game.price_hi[j], k, points_per_axis);
    }
    p
}

/// Evaluates `J^L(x*(π), π)` at every point of the uniform grid. Chunks of
/// consecutive points share a warm-started solver, so results do not depend
/// on the thread count.
pub fn grid_search(game: &PricingGame, points_per_axis: usize, nash_cfg: &NashConfig) -> Result<GridResult> {
    if points_per_axis == 0 {
        return Err(Error::Config("grid needs at least one point per axis".into()));
    }
    let total = (points_per_axis as u128).checked_pow(game.price_dim() as u32).unwrap_or(u128::MAX);
    if total > MAX_GRID_EVALUATIONS {
        return Err(Error::Budget { evaluations: total, cap: MAX_GRID_EVALUATIONS });
    }
    let total = total as usize;
    let template = NashSolver::new(game, nash_cfg.clone())?;
    let chunks: Vec<Vec<GridPoint>> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut solver = template.clone();
            let mut warm: Option<JointStrategy> = None;
            (c * CHUNK..((c + 1) * CHUNK).min(total))
                .map(|index| {
                    let price = grid_price(game, index, points_per_axis);
                    let r = solver.solve(game, &price, warm.as_ref())?;
                    let value = game.leader_value_and_partials(&r.x, &price).value;
                    warm = Some(r.x);
                    Ok(GridPoint { index, price, value })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut ranked: Vec<GridPoint> = chunks.into_iter().flatten().collect();
    ranked.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)));
    Ok(GridResult { ranked, points_per_axis })
}
