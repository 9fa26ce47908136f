//! Shared fixtures for the benchmarks.

use nalgebra::{DMatrix, DVector};
use stackprice::{load_game, FollowerSpec, LeaderObjective, PricingGame};

pub fn g2() -> PricingGame {
    let f = FollowerSpec {
        p: DMatrix::identity(2, 2) * 2.0,
        q: DMatrix::identity(2, 2),
        r: DVector::zeros(2),
        s: DMatrix::identity(2, 2),
        a: DMatrix::from_element(1, 2, 1.0),
        b: DVector::from_element(1, 1.0),
        g: -DMatrix::identity(2, 2),
        h: DVector::zeros(2),
    };
    PricingGame::new(
        vec![f.clone(), f],
        DVector::zeros(2),
        DVector::from_element(2, 5.0),
        LeaderObjective::Tracking { target: DVector::from_vec(vec![2.0 / 3.0, 4.0 / 3.0]) },
    )
    .unwrap()
}

pub fn synthetic_scenario() -> PricingGame {
    load_game(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/charging_synthetic.json")).unwrap()
}

/// `n` identical followers on the simplex in `R^m` with a tridiagonal cost.
pub fn chain_game(n: usize, m: usize) -> PricingGame {
    let q = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            0.5
        } else if i.abs_diff(j) == 1 {
            0.1
        } else {
            0.0
        }
    });
    let p = &q + DMatrix::identity(m, m) * 1.5;
    let f = FollowerSpec {
        p,
        q,
        r: DVector::from_fn(m, |i, _| (i as f64 * 0.7).sin()),
        s: DMatrix::identity(m, m),
        a: DMatrix::from_element(1, m, 1.0),
        b: DVector::from_element(1, 1.0),
        g: -DMatrix::identity(m, m),
        h: DVector::zeros(m),
    };
    PricingGame::new(
        vec![f; n],
        DVector::zeros(m),
        DVector::from_element(m, 2.0),
        LeaderObjective::Tracking { target: DVector::from_element(m, n as f64 / m as f64) },
    )
    .unwrap()
}
