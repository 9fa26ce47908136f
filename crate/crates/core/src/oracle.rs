//! Brute-force references for testing: an enumeration QP solver and
//! finite-difference derivatives. Nothing here is on the solve path.

use log::info;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{FollowerSpec, PricingGame};
use crate::leader::total_gradient;
use crate::nash::{best_response_qp, solve_nash, NashConfig};
use crate::sensitivity::{nash_sensitivities, DEFAULT_ACTIVE_TOL};

pub const MAX_ENUMERATED_INEQUALITIES: usize = 12;
pub const DEFAULT_FD_STEP: f64 = 1e-6;
const KKT_TOL: f64 = 1e-9;

/// `min ½xᵀHx + cᵀx  s.t.  Ax = b, Gx ≤ h` by trying every subset of
/// inequalities as the active set.
pub fn dense_qp_reference(
    h_mat: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = g.nrows();
    if m > MAX_ENUMERATED_INEQUALITIES {
        return Err(Error::OracleScale { got: m, max: MAX_ENUMERATED_INEQUALITIES });
    }
    let n = h_mat.nrows();
    let p = a.nrows();
    let scale = 1.0 + c.amax() + h.amax() + b.amax();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|j| mask & (1 << j) != 0).collect();
        let k = p + rows.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h_mat);
        rhs.rows_mut(0, n).copy_from(&(-c));
        for r in 0..k {
            let (row, val) = if r < p { (a.row(r), b[r]) } else { (g.row(rows[r - p]), h[rows[r - p]]) };
            for j in 0..n {
                kkt[(n + r, j)] = row[j];
                kkt[(j, n + r)] = row[j];
            }
            rhs[n + r] = val;
        }
        let lu = kkt.full_piv_lu();
        if !lu.is_invertible() {
            continue;
        }
        let Some(z) = lu.solve(&rhs) else { continue };
        let x = z.rows(0, n).into_owned();
        // the tail of z holds ν and λ with Hx + c + Aᵀν + Gᵀλ = 0
        let dual_ok = (0..rows.len()).all(|r| z[n + p + r] >= -KKT_TOL * scale);
        let primal_ok = (g * &x - h).iter().all(|&s| s <= KKT_TOL * scale);
        if dual_ok && primal_ok {
            let obj = 0.5 * x.dot(&(h_mat * &x)) + c.dot(&x);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x));
            }
        }
    }
    best.map(|(_, x)| x).ok_or_else(|| Error::Infeasible("no active set yields a KKT point".into()))
}

fn active_rows(follower: &FollowerSpec, x: &DVector<f64>) -> Vec<usize> {
    let slack = &follower.g * x - &follower.h;
    let tol = 1e-9 * (1.0 + follower.h.amax());
    (0..slack.len()).filter(|&j| slack[j] >= -tol).collect()
}

/// Central differences of the best response in each price coordinate, with
/// the other followers' aggregate frozen. Retries one decade down, then one
/// up, if the active set changes inside the stencil.
pub fn fd_jacobian(
    follower: &FollowerSpec,
    sigma_others: &DVector<f64>,
    price: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let base = best_response_qp(follower, sigma_others, price)?;
    let base_active = active_rows(follower, &base.x);
    let n = follower.dim();
    let mut jac = DMatrix::zeros(n, price.len());
    for k in 0..price.len() {
        let mut column = None;
        for h in [step, step / 10.0, step * 10.0] {
            let mut plus = price.clone();
            plus[k] += h;
            let mut minus = price.clone();
            minus[k] -= h;
            let xp = best_response_qp(follower, sigma_others, &plus)?.x;
            let xm = best_response_qp(follower, sigma_others, &minus)?.x;
            if active_rows(follower, &xp) == base_active && active_rows(follower, &xm) == base_active {
                column = Some((xp - xm) / (2.0 * h));
                break;
            }
        }
        match column {
            Some(col) => jac.set_column(k, &col),
            None => return Err(Error::UnreliableStencil { coordinate: k }),
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone)]
pub struct GradientComparison {
    /// Central differences of `π ↦ J^L(x*(π), π)` through full re-solves.
    pub fd: DVector<f64>,
    /// The assembled total gradient at the same price.
    pub formula: DVector<f64>,
    pub discrepancy: f64,
}

/// Finite-difference leader gradient next to the assembled one. The two are
/// reported, not required to agree.
pub fn fd_total_gradient(
    game: &PricingGame,
    price: &DVector<f64>,
    step: f64,
    nash_cfg: &NashConfig,
) -> Result<GradientComparison> {
    let value = |p: &DVector<f64>| -> Result<f64> {
        let r = solve_nash(game, p, nash_cfg, None)?;
        Ok(game.leader_value_and_partials(&r.x, p).value)
    };
    let mut fd = DVector::zeros(price.len());
    for k in 0..price.len() {
        let mut plus = price.clone();
        plus[k] += step;
        let mut minus = price.clone();
        minus[k] -= step;
        fd[k] = (value(&plus)? - value(&minus)?) / (2.0 * step);
    }
    let nash = solve_nash(game, price, nash_cfg, None)?;
    let active_tol = DEFAULT_ACTIVE_TOL.max(10.0 * nash_cfg.eps);
    let sens = nash_sensitivities(game, &nash, price, active_tol)?;
    let formula = total_gradient(game, &nash.x, &sens, price);
    let discrepancy = (&fd - &formula).amax();
    info!("fd gradient {:?}, assembled {:?}, discrepancy {discrepancy:e}", fd.as_slice(), formula.as_slice());
    Ok(GradientComparison { fd, formula, discrepancy })
}

/// Entrywise max-norm of `a − b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::g2;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn unconstrained_identity_qp() {
        let x = dense_qp_reference(
            &DMatrix::identity(3, 3),
            &DVector::zeros(3),
            &DMatrix::zeros(0, 3),
            &DVector::zeros(0),
            &DMatrix::zeros(0, 3),
            &DVector::zeros(0),
        )
        .unwrap();
        assert_eq!(x, DVector::zeros(3));
    }

    #[test]
    fn g2_best_response_by_enumeration() {
        let f = &g2().followers[0];
        let c = f.linear_term(&v(&[1.0 / 3.0, 2.0 / 3.0]), &v(&[1.0, 0.0]));
        let x = dense_qp_reference(&f.p, &c, &f.a, &f.b, &f.g, &f.h).unwrap();
        assert_abs_diff_eq!(x, v(&[1.0 / 3.0, 2.0 / 3.0]), epsilon = 1e-12);
    }

    #[test]
    fn projection_by_enumeration() {
        let f = &g2().followers[0];
        let z = v(&[2.0, -1.0]);
        let x = dense_qp_reference(&DMatrix::identity(2, 2), &(-z), &f.a, &f.b, &f.g, &f.h).unwrap();
        assert_abs_diff_eq!(x, v(&[1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn too_many_inequalities() {
        let err = dense_qp_reference(
            &DMatrix::identity(1, 1),
            &DVector::zeros(1),
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &DMatrix::zeros(13, 1),
            &DVector::zeros(13),
        )
        .unwrap_err();
        assert!(matches!(err, Error::OracleScale { got: 13, max: 12 }));
    }

    #[test]
    fn g2_fd_jacobian() {
        let f = &g2().followers[0];
        let j = fd_jacobian(f, &v(&[1.0 / 3.0, 2.0 / 3.0]), &v(&[1.0, 0.0]), DEFAULT_FD_STEP).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[-0.25, 0.25, 0.25, -0.25]);
        assert!(max_abs_diff(&j, &want) < 1e-5);
    }

    #[test]
    fn blind_and_pinned_followers_fd_zero() {
        let mut f = g2().followers[0].clone();
        f.s = DMatrix::zeros(2, 2);
        let j = fd_jacobian(&f, &v(&[0.5, 0.5]), &v(&[0.0, 0.0]), DEFAULT_FD_STEP).unwrap();
        assert_eq!(j, DMatrix::zeros(2, 2));

        let mut f = g2().followers[0].clone();
        f.a = DMatrix::identity(2, 2);
        f.b = v(&[0.25, 0.75]);
        let j = fd_jacobian(&f, &v(&[0.5, 0.5]), &v(&[0.0, 0.0]), DEFAULT_FD_STEP).unwrap();
        assert_abs_diff_eq!(j, DMatrix::zeros(2, 2), epsilon = 1e-9);
    }

    #[test]
    fn stencil_on_a_kink_is_rejected() {
        // best response to π=[0,2] is [1,0] with x₂ ≥ 0 weakly active
        let f = &g2().followers[0];
        let err = fd_jacobian(f, &v(&[0.0, 0.0]), &v(&[0.0, 2.0]), DEFAULT_FD_STEP).unwrap_err();
        assert!(matches!(err, Error::UnreliableStencil { coordinate: 0 }), "{err}");
    }

    #[test]
    fn g2_gradient_at_optimum() {
        let r = fd_total_gradient(&g2(), &v(&[1.0, 0.0]), 1e-5, &NashConfig::with_eps(1e-13)).unwrap();
        assert_abs_diff_eq!(r.fd, v(&[0.0, 0.0]), epsilon = 1e-6);
        assert_abs_diff_eq!(r.formula, v(&[0.0, 0.0]), epsilon = 1e-6);
    }

    #[test]
    fn g2_gradient_at_origin_reports_both() {
        let r = fd_total_gradient(&g2(), &v(&[0.0, 0.0]), 1e-5, &NashConfig::with_eps(1e-13)).unwrap();
        assert_abs_diff_eq!(r.formula, v(&[-1.0 / 3.0, 1.0 / 3.0]), epsilon = 1e-8);
        // J^L = (1 − π₁ + π₂)²/9 along the equilibrium map
        assert_abs_diff_eq!(r.fd, v(&[-2.0 / 9.0, 2.0 / 9.0]), epsilon = 1e-6);
        assert!(r.discrepancy > 0.1);
    }
}
