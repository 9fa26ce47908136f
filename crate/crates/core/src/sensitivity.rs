//! Price sensitivities `D_π x^{i*}` of each follower's equilibrium strategy.
//!
//! At the Nash point every active inequality is moved into the equality block,
//! giving the equivalent problem
//!
//! ```text
//!     min J^i(x, x^{-i*}, π)  s.t.  Ā x = b̄,  G_inact x ≤ h_inact
//! ```
//!
//! whose KKT map is differentiated by the implicit function theorem with the
//! other followers' strategies held fixed. The reduced KKT Jacobian is
//!
//! ```text
//!     D_z l = [ P   G_inactᵀ                 Āᵀ ]        D_π l = [ S ]
//!             [ 0   Dg(G_inact x − h_inact)  0  ]                [ 0 ]
//!             [ Ā   0                        0  ]                [ 0 ]
//! ```
//!
//! and `D_π x^{i*}` is the top block of `−D_z l⁻¹ D_π l`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{FollowerSpec, PricingGame};
use crate::linalg::{condition_number, lu_solve_refined, numerical_rank, row_rank, sym_eigenvalues};
use crate::nash::NashResult;

pub const DEFAULT_ACTIVE_TOL: f64 = 1e-6;
/// Condition number above which the KKT solve is flagged.
pub const ILL_CONDITIONED: f64 = 1e12;
/// Relative stationarity residual accepted when recovering multipliers.
pub const DUAL_RESIDUAL_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetInfo {
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub tol: f64,
    /// Largest `|g_jᵀx − h_j|` among active rows (0 when none).
    pub max_active_gap: f64,
    /// Smallest `h_j − g_jᵀx` among inactive rows (∞ when none).
    pub min_inactive_margin: f64,
}

/// Row `j` is active iff `|g_jᵀx − h_j| ≤ tol`.
pub fn detect_active_set(follower: &FollowerSpec, x: &DVector<f64>, tol: f64) -> Result<ActiveSetInfo> {
    let slack = &follower.g * x - &follower.h;
    let mut active = Vec::new();
    let mut inactive = Vec::new();
    let mut max_active_gap = 0.0_f64;
    let mut min_inactive_margin = f64::INFINITY;
    for (j, &s) in slack.iter().enumerate() {
        if s > tol {
            return Err(Error::InfeasiblePoint { constraint: j, violation: s });
        }
        if s.abs() <= tol {
            active.push(j);
            max_active_gap = max_active_gap.max(s.abs());
        } else {
            inactive.push(j);
            min_inactive_margin = min_inactive_margin.min(-s);
        }
    }
    Ok(ActiveSetInfo { active, inactive, tol, max_active_gap, min_inactive_margin })
}

/// Where a row of `Ā` came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOrigin {
    Equality(usize),
    Inequality(usize),
}

impl std::fmt::Display for RowOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowOrigin::Equality(k) => write!(f, "A[{k}]"),
            RowOrigin::Inequality(k) => write!(f, "G[{k}]"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquivalentProblem {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DVector<f64>,
    pub g_inact: DMatrix<f64>,
    pub h_inact: DVector<f64>,
    pub rows: Vec<RowOrigin>,
    /// Rows dropped as exact duplicates of an earlier row.
    pub pruned: Vec<RowOrigin>,
    pub rank: usize,
    pub active: ActiveSetInfo,
}

/// Stacks `A` and the active rows of `G` into `Ā`, drops exact duplicates and
/// requires full row rank.
pub fn build_equivalent_problem(
    follower: &FollowerSpec,
    index: usize,
    active: &ActiveSetInfo,
) -> Result<EquivalentProblem> {
    let n = follower.dim();
    let mut rows: Vec<(RowOrigin, DVector<f64>, f64)> = Vec::new();
    let mut pruned = Vec::new();
    let candidates = (0..follower.a.nrows())
        .map(|k| (RowOrigin::Equality(k), follower.a.row(k).transpose(), follower.b[k]))
        .chain(active.active.iter().map(|&j| (RowOrigin::Inequality(j), follower.g.row(j).transpose(), follower.h[j])));
    for (origin, coeffs, rhs) in candidates {
        if rows.iter().any(|(_, c, r)| *r == rhs && *c == coeffs) {
            pruned.push(origin);
        } else {
            rows.push((origin, coeffs, rhs));
        }
    }
    let a_bar = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].1[j]);
    let b_bar = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2));
    let (rank, dependent) = row_rank(&a_bar, 1e-10);
    if rank < rows.len() {
        return Err(Error::ActiveSetRank {
            follower: index,
            rank,
            dependent_rows: dependent.iter().map(|&k| rows[k].0.to_string()).collect(),
        });
    }
    let g_inact = DMatrix::from_fn(active.inactive.len(), n, |i, j| follower.g[(active.inactive[i], j)]);
    let h_inact = DVector::from_iterator(active.inactive.len(), active.inactive.iter().map(|&j| follower.h[j]));
    Ok(EquivalentProblem {
        a_bar,
        b_bar,
        g_inact,
        h_inact,
        rows: rows.into_iter().map(|r| r.0).collect(),
        pruned,
        rank,
        active: active.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct DualRecovery {
    /// Multipliers of `Ā`; the inactive block is identically zero.
    pub nu_bar: DVector<f64>,
    pub residual: f64,
    pub threshold: f64,
}

/// Least-squares solve of `Āᵀν̄ = −(P x + Q σ_others + r + S π)`.
pub fn recover_duals(
    follower: &FollowerSpec,
    index: usize,
    eq: &EquivalentProblem,
    x: &DVector<f64>,
    sigma_others: &DVector<f64>,
    price: &DVector<f64>,
) -> Result<DualRecovery> {
    let px = &follower.p * x;
    let lin = follower.linear_term(sigma_others, price);
    let grad = &px + &lin;
    let scale = 1.0 + px.amax() + lin.amax();
    let threshold = DUAL_RESIDUAL_RTOL * scale;
    let nu_bar = if eq.a_bar.nrows() == 0 {
        DVector::zeros(0)
    } else {
        let gram = &eq.a_bar * eq.a_bar.transpose();
        let rhs = -(&eq.a_bar * &grad);
        match gram.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                return Err(Error::ActiveSetRank {
                    follower: index,
                    rank: numerical_rank(&eq.a_bar, 1e-10),
                    dependent_rows: Vec::new(),
                })
            }
        }
    };
    let residual = (eq.a_bar.transpose() * &nu_bar + &grad).norm();
    if residual > threshold {
        return Err(Error::StaleEquilibrium { follower: index, residual, threshold });
    }
    Ok(DualRecovery { nu_bar, residual, threshold })
}

#[derive(Debug, Clone)]
pub struct KktSystem {
    pub dz: DMatrix<f64>,
    pub dpi: DMatrix<f64>,
    pub condition: f64,
    pub ill_conditioned: bool,
}

/// Builds `D_z l` and `D_π l` at `λ = 0` on the inactive rows.
pub fn assemble_kkt_system(follower: &FollowerSpec, eq: &EquivalentProblem, x: &DVector<f64>) -> KktSystem {
    let n = follower.dim();
    let k = eq.g_inact.nrows();
    let p = eq.a_bar.nrows();
    let size = n + k + p;
    let mut dz = DMatrix::zeros(size, size);
    dz.view_mut((0, 0), (n, n)).copy_from(&follower.p);
    if k > 0 {
        dz.view_mut((0, n), (n, k)).copy_from(&eq.g_inact.transpose());
        let margins = &eq.g_inact * x - &eq.h_inact;
        for j in 0..k {
            dz[(n + j, n + j)] = margins[j];
        }
    }
    if p > 0 {
        dz.view_mut((0, n + k), (n, p)).copy_from(&eq.a_bar.transpose());
        dz.view_mut((n + k, 0), (p, n)).copy_from(&eq.a_bar);
    }
    let mut dpi = DMatrix::zeros(size, follower.s.ncols());
    dpi.view_mut((0, 0), (n, follower.s.ncols())).copy_from(&follower.s);
    let condition = condition_number(&dz);
    KktSystem { dz, dpi, condition, ill_conditioned: !(condition < ILL_CONDITIONED) }
}

/// Blocks of the Schur complement of `P` in `D_z l` that must be negative
/// definite: `Dg(G_inact x − h_inact)` and `−Ā P⁻¹ Āᵀ`.
#[derive(Debug, Clone)]
pub struct SchurFactors {
    pub inactive_margins: DVector<f64>,
    pub reduced_eigenvalues: Vec<f64>,
}

impl SchurFactors {
    pub fn negative_definite(&self) -> bool {
        self.inactive_margins.iter().all(|&v| v < 0.0) && self.reduced_eigenvalues.iter().all(|&v| v < 0.0)
    }
}

pub fn schur_factors(follower: &FollowerSpec, eq: &EquivalentProblem, x: &DVector<f64>) -> Option<SchurFactors> {
    let p_inv = follower.p.clone().try_inverse()?;
    let s4 = -(&eq.a_bar * p_inv * eq.a_bar.transpose());
    Some(SchurFactors { inactive_margins: &eq.g_inact * x - &eq.h_inact, reduced_eigenvalues: sym_eigenvalues(&s4) })
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub follower: usize,
    /// `D_π x^{i*}`, `m_F × m_L`.
    pub jacobian: DMatrix<f64>,
    pub equivalent: EquivalentProblem,
    pub nu_bar: DVector<f64>,
    /// Multipliers of the inactive rows; always zero.
    pub lambda_inactive: DVector<f64>,
    pub dual_residual: f64,
    pub condition: f64,
    pub ill_conditioned: bool,
    /// Inactive rows that are also tight (empty by construction).
    pub weakly_active: Vec<usize>,
}

/// Full pipeline for one follower at `x^{i*}` with `σ(x^{-i*})` frozen.
pub fn follower_jacobian(
    follower: &FollowerSpec,
    index: usize,
    x: &DVector<f64>,
    sigma_others: &DVector<f64>,
    price: &DVector<f64>,
    active_tol: f64,
) -> Result<SensitivityResult> {
    let active = detect_active_set(follower, x, active_tol)?;
    let eq = build_equivalent_problem(follower, index, &active)?;
    let duals = recover_duals(follower, index, &eq, x, sigma_others, price)?;
    let kkt = assemble_kkt_system(follower, &eq, x);
    let size = kkt.dz.nrows();
    let singular = || Error::SingularKkt { follower: index, size, rank: numerical_rank(&kkt.dz, 1e-14) };
    if !kkt.condition.is_finite() || kkt.condition > 1.0 / f64::EPSILON {
        return Err(singular());
    }
    let sol = lu_solve_refined(&kkt.dz, &(-&kkt.dpi)).ok_or_else(singular)?;
    let n = follower.dim();
    let jacobian = sol.rows(0, n).into_owned();
    let margins = &eq.g_inact * x - &eq.h_inact;
    let weakly_active =
        (0..margins.len()).filter(|&j| margins[j].abs() <= active_tol).map(|j| eq.active.inactive[j]).collect();
    Ok(SensitivityResult {
        follower: index,
        jacobian,
        lambda_inactive: DVector::zeros(eq.g_inact.nrows()),
        nu_bar: duals.nu_bar,
        dual_residual: duals.residual,
        condition: kkt.condition,
        ill_conditioned: kkt.ill_conditioned,
        weakly_active,
        equivalent: eq,
    })
}

/// Jacobians for every follower at a Nash point, computed in parallel.
pub fn nash_sensitivities(
    game: &PricingGame,
    nash: &NashResult,
    price: &DVector<f64>,
    active_tol: f64,
) -> Result<Vec<SensitivityResult>> {
    if active_tol < 10.0 * nash.eps {
        return Err(Error::Config(format!(
            "active-set tolerance {active_tol:e} must be at least 10x the Nash tolerance {:e}",
            nash.eps
        )));
    }
    let sigma = nash.x.aggregate();
    game.followers
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let xi = nash.x.block(i);
            let others = &sigma - xi;
            follower_jacobian(f, i, xi, &others, price, active_tol)
        })
        .collect()
}
