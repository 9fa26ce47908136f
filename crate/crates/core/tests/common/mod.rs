//! Fixtures and random instance generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stackprice::{FollowerSpec, LeaderObjective, Polyhedron, PricingGame};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn g2() -> PricingGame {
    let f = FollowerSpec {
        p: DMatrix::identity(2, 2) * 2.0,
        q: DMatrix::identity(2, 2),
        r: DVector::zeros(2),
        s: DMatrix::identity(2, 2),
        a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
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

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw is enough here
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gaussian(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gaussian(rng))
}

/// Symmetric matrix with eigenvalues drawn from `[lo, hi]`.
pub fn random_sym(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = gaussian_matrix(rng, n, n).qr().q();
    let d = DVector::from_fn(n, |_, _| rng.gen_range(lo..=hi));
    let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Bounded polyhedron with a known strictly interior point. Always contains
/// `x ≥ 0`; either `1ᵀx = b` or `1ᵀx ≤ b` closes it. At most `max_ineq`
/// inequalities.
pub fn random_polyhedron(rng: &mut ChaCha8Rng, n: usize, max_ineq: usize) -> (Polyhedron, DVector<f64>) {
    let with_eq = rng.gen_bool(0.7);
    polyhedron_with(rng, n, max_ineq, with_eq)
}

pub fn polyhedron_with(rng: &mut ChaCha8Rng, n: usize, max_ineq: usize, with_eq: bool) -> (Polyhedron, DVector<f64>) {
    assert!(max_ineq > n);
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(0.2..1.0));
    let room = max_ineq - n - usize::from(!with_eq);
    let extra = rng.gen_range(0..=room);
    let mut rows: Vec<(DVector<f64>, f64)> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = -1.0;
            (e, 0.0)
        })
        .collect();
    if !with_eq {
        rows.push((DVector::from_element(n, 1.0), x0.sum() + rng.gen_range(0.1..1.0)));
    }
    for _ in 0..extra {
        let g = gaussian_vector(rng, n);
        let h = g.dot(&x0) + rng.gen_range(0.05..0.5);
        rows.push((g, h));
    }
    let g = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let h = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let (a, b) = if with_eq {
        (DMatrix::from_element(1, n, 1.0), DVector::from_element(1, x0.sum()))
    } else {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    };
    (Polyhedron::new(a, b, g, h).unwrap(), x0)
}

#[derive(Debug, Clone, Copy)]
pub struct GameShape {
    pub followers: usize,
    pub m_f: usize,
    pub m_l: usize,
    pub max_ineq: usize,
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> GameShape {
    GameShape { followers: rng.gen_range(1..=4), m_f: rng.gen_range(1..=4), m_l: rng.gen_range(1..=3), max_ineq: 6 }
}

/// Game satisfying every standing assumption: `P − Q` has spectrum in
/// `[1, 3]`, `Q ⪰ 0` has spectrum in `[0, 1]`, `S ≥ 0`.
pub fn random_game(rng: &mut ChaCha8Rng, shape: GameShape) -> PricingGame {
    build_game(rng, shape, None, (3.0, 1.0))
}

/// Like [`random_game`] but with `P − Q` in `[1, 1.5]` and `Q` in
/// `[0, 0.35]`, so `λmax(F1) ≤ 3 λmin(F1)` for up to four followers and the
/// contraction factor is at most 1/2.
pub fn random_fast_game(rng: &mut ChaCha8Rng, shape: GameShape) -> PricingGame {
    assert!(shape.followers <= 4);
    build_game(rng, shape, None, (1.5, 0.35))
}

fn build_game(rng: &mut ChaCha8Rng, shape: GameShape, force_eq: Option<bool>, spread: (f64, f64)) -> PricingGame {
    let n = shape.m_f;
    let diff = random_sym(rng, n, 1.0, spread.0);
    let q = random_sym(rng, n, 0.0, spread.1);
    let p = &diff + &q;
    let followers = (0..shape.followers)
        .map(|_| {
            let with_eq = force_eq.unwrap_or_else(|| rng.gen_bool(0.7));
            let (poly, _) = polyhedron_with(rng, n, shape.max_ineq.max(n + 1), with_eq);
            FollowerSpec {
                p: p.clone(),
                q: q.clone(),
                r: gaussian_vector(rng, n),
                s: DMatrix::from_fn(n, shape.m_l, |_, _| rng.gen_range(0.0..1.0)),
                a: poly.a,
                b: poly.b,
                g: poly.g,
                h: poly.h,
            }
        })
        .collect();
    let target = DVector::from_fn(n, |_, _| rng.gen_range(0.0..2.0));
    PricingGame::new(
        followers,
        DVector::zeros(shape.m_l),
        DVector::from_element(shape.m_l, 2.0),
        LeaderObjective::Tracking { target },
    )
    .unwrap()
}

/// Random game meeting the price-shift invariance hypotheses: one diagonal
/// positive `S` shared by all followers and `A_i = 1ᵀ`.
pub fn random_invariant_game(rng: &mut ChaCha8Rng) -> PricingGame {
    let n = rng.gen_range(2..=4);
    let shape = GameShape { followers: rng.gen_range(1..=4), m_f: n, m_l: n, max_ineq: 6 };
    let mut game = build_game(rng, shape, Some(true), (3.0, 1.0));
    let s = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.5..2.0)));
    for f in &mut game.followers {
        f.s = s.clone();
    }
    game
}
