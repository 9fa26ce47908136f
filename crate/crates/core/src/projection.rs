//! Euclidean projections onto the leader's price box and onto follower
//! polyhedra, plus the dense active-set QP solver behind them.
//!
//! The polyhedron projection is a strictly convex QP
//!
//! ```text
//!     minimize    ½‖y − z‖²
//!     subject to  A y = b,  G y ≤ h
//! ```
//!
//! solved by a primal active-set method. The same solver handles a general
//! Hessian, which is how follower best responses are computed.

use log::debug;
use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{lu_solve_refined, row_rank, select_rows, vstack};

/// Margin a phase-1 LP must exceed to certify a strictly feasible point.
pub const SLATER_TOL: f64 = 1e-9;
/// Default KKT tolerance of the projection QP.
pub const PROJECTION_TOL: f64 = 1e-9;

/// `{x : A x = b, G x ≤ h}`; either block may have zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

/// Strictly feasible point from the max-margin phase-1 LP.
#[derive(Debug, Clone)]
pub struct SlaterCertificate {
    pub point: DVector<f64>,
    /// Largest uniform slack `t` with `G x ≤ h − t·1` (capped at 1).
    pub margin: f64,
}

impl SlaterCertificate {
    pub fn is_strict(&self) -> bool {
        self.margin > SLATER_TOL
    }
}

impl Polyhedron {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = a.ncols().max(g.ncols());
        if a.ncols() != n && a.nrows() > 0 {
            return Err(Error::dim(None, "A", format!("* x {n}"), format!("{}x{}", a.nrows(), a.ncols())));
        }
        if g.ncols() != n && g.nrows() > 0 {
            return Err(Error::dim(None, "G", format!("* x {n}"), format!("{}x{}", g.nrows(), g.ncols())));
        }
        if b.len() != a.nrows() {
            return Err(Error::dim(None, "b", a.nrows(), b.len()));
        }
        if h.len() != g.nrows() {
            return Err(Error::dim(None, "h", g.nrows(), h.len()));
        }
        let a = if a.nrows() == 0 { DMatrix::zeros(0, n) } else { a };
        let g = if g.nrows() == 0 { DMatrix::zeros(0, n) } else { g };
        Ok(Polyhedron { a, b, g, h })
    }

    /// Box `lo ≤ x ≤ hi` written as inequalities.
    pub fn from_box(lo: &DVector<f64>, hi: &DVector<f64>) -> Self {
        let n = lo.len();
        let mut g = DMatrix::zeros(2 * n, n);
        let mut h = DVector::zeros(2 * n);
        for j in 0..n {
            g[(j, j)] = 1.0;
            h[j] = hi[j];
            g[(n + j, j)] = -1.0;
            h[n + j] = -lo[j];
        }
        Polyhedron { a: DMatrix::zeros(0, n), b: DVector::zeros(0), g, h }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_eq(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_ineq(&self) -> usize {
        self.g.nrows()
    }

    /// `G x − h`; nonpositive entries are satisfied.
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.g * x - &self.h
    }

    /// Coordinates that appear in no constraint row.
    fn free_coordinates(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&j| self.a.column(j).iter().all(|&v| v == 0.0) && self.g.column(j).iter().all(|&v| v == 0.0))
            .collect()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let eq_ok = (&self.a * x - &self.b).iter().all(|v| v.abs() <= tol);
        eq_ok && self.slack(x).iter().all(|&v| v <= tol)
    }

    /// Phase-1 LP: maximize `t ≤ 1` subject to `A x = b`, `G x + t·1 ≤ h`.
    ///
    /// Fails with [`Error::Infeasible`] when the set is empty. A margin above
    /// [`SLATER_TOL`] certifies a strictly feasible point.
    pub fn slater_point(&self) -> Result<SlaterCertificate> {
        let n = self.dim();
        // unconstrained coordinates are pinned to 0; the LP solver mistakes
        // them for unbounded rays
        let free = self.free_coordinates();
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let xs: Vec<_> = (0..n)
            .map(|j| {
                let bounds = if free.contains(&j) { (0.0, 0.0) } else { (f64::NEG_INFINITY, f64::INFINITY) };
                lp.add_var(0.0, bounds)
            })
            .collect();
        let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
        for i in 0..self.n_eq() {
            let terms: Vec<_> = (0..n).filter(|&j| self.a[(i, j)] != 0.0).map(|j| (xs[j], self.a[(i, j)])).collect();
            if terms.is_empty() {
                if self.b[i] != 0.0 {
                    return Err(Error::Infeasible(format!("equality row {i} is zero with nonzero rhs")));
                }
                continue;
            }
            lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, self.b[i]);
        }
        for i in 0..self.n_ineq() {
            let mut terms: Vec<_> =
                (0..n).filter(|&j| self.g[(i, j)] != 0.0).map(|j| (xs[j], self.g[(i, j)])).collect();
            terms.push((t, 1.0));
            lp.add_constraint(terms.as_slice(), ComparisonOp::Le, self.h[i]);
        }
        let sol = lp.solve().map_err(|e| match e {
            microlp::Error::Infeasible => Error::Infeasible("phase-1 LP is infeasible".into()),
            other => Error::Infeasible(format!("phase-1 LP failed: {other}")),
        })?;
        let point = DVector::from_iterator(n, xs.iter().map(|&v| *sol.var_value(v)));
        let margin = *sol.var_value(t);
        if margin < -SLATER_TOL {
            return Err(Error::Infeasible(format!("phase-1 margin {margin:e} is negative")));
        }
        Ok(SlaterCertificate { point, margin })
    }

    /// Maximizes `±x_j` for every coordinate; returns the first coordinate
    /// (and sign) along which the set is unbounded.
    pub fn unbounded_coordinate(&self) -> Result<Option<(usize, f64)>> {
        let n = self.dim();
        if let Some(&j) = self.free_coordinates().first() {
            return Ok(Some((j, 1.0)));
        }
        for j in 0..n {
            for sign in [1.0, -1.0] {
                let mut lp = Problem::new(OptimizationDirection::Maximize);
                let xs: Vec<_> = (0..n)
                    .map(|k| lp.add_var(if k == j { sign } else { 0.0 }, (f64::NEG_INFINITY, f64::INFINITY)))
                    .collect();
                for i in 0..self.n_eq() {
                    let terms: Vec<_> =
                        (0..n).filter(|&k| self.a[(i, k)] != 0.0).map(|k| (xs[k], self.a[(i, k)])).collect();
                    if !terms.is_empty() {
                        lp.add_constraint(terms.as_slice(), ComparisonOp::Eq, self.b[i]);
                    }
                }
                for i in 0..self.n_ineq() {
                    let terms: Vec<_> =
                        (0..n).filter(|&k| self.g[(i, k)] != 0.0).map(|k| (xs[k], self.g[(i, k)])).collect();
                    if !terms.is_empty() {
                        lp.add_constraint(terms.as_slice(), ComparisonOp::Le, self.h[i]);
                    }
                }
                match lp.solve() {
                    Ok(_) => {}
                    Err(microlp::Error::Unbounded) => return Ok(Some((j, sign))),
                    Err(microlp::Error::Infeasible) => {
                        return Err(Error::Infeasible("boundedness LP is infeasible".into()))
                    }
                    Err(e) => return Err(Error::Infeasible(format!("boundedness LP failed: {e}"))),
                }
            }
        }
        Ok(None)
    }

    /// Removes inequality rows that exactly repeat an earlier row (same
    /// coefficients and right-hand side). Returns the reduced set and, for each
    /// kept row, its index in the original matrix.
    pub fn dedup_inequalities(&self) -> (Polyhedron, Vec<usize>) {
        let mut keep: Vec<usize> = Vec::with_capacity(self.n_ineq());
        for i in 0..self.n_ineq() {
            let dup = keep.iter().any(|&k| self.h[k] == self.h[i] && self.g.row(k) == self.g.row(i));
            if !dup {
                keep.push(i);
            }
        }
        if keep.len() == self.n_ineq() {
            return (self.clone(), keep);
        }
        let g = select_rows(&self.g, &keep);
        let h = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.h[i]));
        (Polyhedron { a: self.a.clone(), b: self.b.clone(), g, h }, keep)
    }
}

/// Clamps `z` onto `[lo, hi]` elementwise.
pub fn project_box(z: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<DVector<f64>> {
    if z.len() != lo.len() || lo.len() != hi.len() {
        return Err(Error::dim(None, "box", lo.len(), z.len()));
    }
    for j in 0..lo.len() {
        if lo[j] > hi[j] {
            return Err(Error::InvalidBox { index: j, lo: lo[j], hi: hi[j] });
        }
    }
    Ok(DVector::from_iterator(z.len(), (0..z.len()).map(|j| z[j].clamp(lo[j], hi[j]))))
}

/// Solves the equality-constrained QP `min ½xᵀHx + cᵀx s.t. A x = b` through
/// its KKT saddle system `[H Aᵀ; A 0][x; ν] = [−c; b]`.
pub fn solve_eq_qp(
    hess: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = hess.nrows();
    let m = a.nrows();
    if hess.ncols() != n || c.len() != n || (m > 0 && a.ncols() != n) || b.len() != m {
        return Err(Error::dim(
            None,
            "eq_qp",
            n,
            format!("H {}x{}, c {}, A {}x{}", hess.nrows(), hess.ncols(), c.len(), a.nrows(), a.ncols()),
        ));
    }
    if m > 0 {
        let (rank, dependent) = row_rank(a, 1e-10);
        if rank < m {
            return Err(Error::RankDeficient { rows: dependent });
        }
    }
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(hess);
    if m > 0 {
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(a);
    }
    let mut rhs = DMatrix::zeros(n + m, 1);
    for i in 0..n {
        rhs[(i, 0)] = -c[i];
    }
    for i in 0..m {
        rhs[(n + i, 0)] = b[i];
    }
    let sol = lu_solve_refined(&kkt, &rhs).ok_or(Error::RankDeficient { rows: Vec::new() })?;
    let x = DVector::from_iterator(n, (0..n).map(|i| sol[(i, 0)]));
    let nu = DVector::from_iterator(m, (0..m).map(|i| sol[(n + i, 0)]));
    Ok((x, nu))
}

/// Optimal primal-dual pair of an inequality-constrained QP.
///
/// Stationarity convention: `H x + c + Aᵀν + Gᵀλ = 0`, `λ ≥ 0`.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    /// Inequalities in the final working set, in original row indexing.
    pub active: Vec<usize>,
    pub iterations: usize,
    /// Max of stationarity, primal and dual infeasibility.
    pub kkt_residual: f64,
}

/// Primal active-set solver bound to one polyhedron. Holds the last working
/// set so consecutive solves can warm start.
#[derive(Debug, Clone)]
pub struct ActiveSetQp {
    poly: Polyhedron,
    /// Original row index of each deduplicated inequality.
    row_map: Vec<usize>,
    n_ineq_orig: usize,
    start: DVector<f64>,
    working: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl ActiveSetQp {
    /// Builds the solver and certifies a feasible starting point by phase-1 LP.
    pub fn new(poly: &Polyhedron) -> Result<Self> {
        let cert = poly.slater_point()?;
        Ok(Self::with_start(poly, cert.point))
    }

    /// Builds the solver from a known feasible point.
    pub fn with_start(poly: &Polyhedron, start: DVector<f64>) -> Self {
        let (reduced, row_map) = poly.dedup_inequalities();
        let m = reduced.n_ineq();
        ActiveSetQp {
            poly: reduced,
            row_map,
            n_ineq_orig: poly.n_ineq(),
            start,
            working: Vec::new(),
            tol: PROJECTION_TOL,
            max_iter: 50 * (m + 1),
        }
    }

    /// Feasible point used when no start is supplied.
    pub fn start_point(&self) -> &DVector<f64> {
        &self.start
    }

    pub fn polyhedron(&self) -> &Polyhedron {
        &self.poly
    }

    /// Working set of the last solve, in original row indexing.
    pub fn working_set(&self) -> Vec<usize> {
        self.working.iter().map(|&k| self.row_map[k]).collect()
    }

    /// Euclidean projection of `z`; `x0` (feasible) overrides the start point.
    pub fn project(&mut self, z: &DVector<f64>, x0: Option<&DVector<f64>>) -> Result<QpSolution> {
        let n = self.poly.dim();
        let eye = DMatrix::identity(n, n);
        self.solve(&eye, &(-z), x0)
    }

    /// Minimizes `½xᵀHx + cᵀx` over the polyhedron, `H ≻ 0`.
    pub fn solve(&mut self, hess: &DMatrix<f64>, c: &DVector<f64>, x0: Option<&DVector<f64>>) -> Result<QpSolution> {
        let n = self.poly.dim();
        if hess.nrows() != n || hess.ncols() != n || c.len() != n {
            return Err(Error::dim(None, "qp", n, c.len()));
        }
        let mut x = x0.cloned().unwrap_or_else(|| self.start.clone());
        let scale = 1.0 + x.amax();
        let act_tol = 1e-9 * scale;
        let slack = self.poly.slack(&x);

        // Warm-start working set: previous constraints still tight at x,
        // then keep only rows independent of A and of each other.
        let mut cand: Vec<usize> =
            self.working.iter().copied().filter(|&k| k < slack.len() && slack[k].abs() <= act_tol).collect();
        cand.sort_unstable();
        let mut working: Vec<usize> = Vec::new();
        for k in cand {
            let mut trial = working.clone();
            trial.push(k);
            let rows = self.constraint_rows(&trial);
            if row_rank(&rows, 1e-10).0 == rows.nrows() {
                working = trial;
            }
        }

        let m_ineq = self.poly.n_ineq();
        let zero_rhs = |k: usize| DVector::zeros(k);
        let mut iterations = 0;
        loop {
            if iterations >= self.max_iter {
                let residual = self.kkt_residual(hess, c, &x, None);
                self.working = working;
                return Err(Error::QpNonconvergence { iterations, residual });
            }
            iterations += 1;

            let grad = hess * &x + c;
            let rows = self.constraint_rows(&working);
            let (p, mult) = solve_eq_qp(hess, &grad, &rows, &zero_rhs(rows.nrows()))?;

            // Step towards the working-face minimizer, stopping at the first
            // blocking constraint (lowest index on ties).
            let mut alpha = 1.0;
            let mut blocking = None;
            for j in 0..m_ineq {
                if working.contains(&j) {
                    continue;
                }
                let gp = self.poly.g.row(j).dot(&p.transpose());
                if gp > 1e-14 * (1.0 + p.amax()) {
                    let room = (self.poly.h[j] - self.poly.g.row(j).dot(&x.transpose())).max(0.0);
                    let step = room / gp;
                    if step < alpha {
                        alpha = step;
                        blocking = Some(j);
                    }
                }
            }
            x.axpy(alpha, &p, 1.0);

            if let Some(j) = blocking {
                working.push(j);
                continue;
            }
            if p.norm() > self.tol * 1e-3 * scale {
                // Full step taken; the next pass confirms stationarity.
                continue;
            }

            // Stationary on the working face: drop the most negative multiplier.
            let n_eq = self.poly.n_eq();
            let mut worst: Option<(usize, f64)> = None;
            for (pos, _) in working.iter().enumerate() {
                let mu = mult[n_eq + pos];
                if mu < -self.tol && worst.is_none_or(|(_, w)| mu < w) {
                    worst = Some((pos, mu));
                }
            }
            if let Some((pos, _)) = worst {
                working.remove(pos);
                continue;
            }

            let mut lambda = DVector::zeros(self.n_ineq_orig);
            for (pos, &k) in working.iter().enumerate() {
                lambda[self.row_map[k]] = mult[n_eq + pos].max(0.0);
            }
            let nu = mult.rows(0, n_eq).into_owned();
            let mut active: Vec<usize> = working.iter().map(|&k| self.row_map[k]).collect();
            active.sort_unstable();
            let residual = self.kkt_residual(hess, c, &x, Some((&lambda, &nu)));
            self.working = working;
            debug!("active-set QP converged in {iterations} iterations, residual {residual:e}");
            return Ok(QpSolution { x, lambda, nu, active, iterations, kkt_residual: residual });
        }
    }

    fn constraint_rows(&self, working: &[usize]) -> DMatrix<f64> {
        let gw = select_rows(&self.poly.g, working);
        vstack(&[&self.poly.a, &gw], self.poly.dim())
    }

    fn kkt_residual(
        &self,
        hess: &DMatrix<f64>,
        c: &DVector<f64>,
        x: &DVector<f64>,
        duals: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> f64 {
        let primal_eq = (&self.poly.a * x - &self.poly.b).amax();
        let primal_ineq = self.poly.slack(x).iter().fold(0.0_f64, |m, &v| m.max(v));
        let mut res = primal_eq.max(primal_ineq);
        if let Some((lambda, nu)) = duals {
            // lambda is in original indexing; map back onto reduced rows
            let mut stat = hess * x + c + self.poly.a.transpose() * nu;
            for (k, &orig) in self.row_map.iter().enumerate() {
                if lambda[orig] != 0.0 {
                    stat += self.poly.g.row(k).transpose() * lambda[orig];
                }
            }
            res = res.max(stat.amax());
        }
        res
    }
}

/// One-shot projection of `z` onto `poly`, returning the projection and its
/// duals. `tol` bounds the reported KKT residual.
pub fn project_polyhedron(z: &DVector<f64>, poly: &Polyhedron, tol: f64) -> Result<QpSolution> {
    let mut solver = ActiveSetQp::new(poly)?;
    solver.tol = tol;
    let sol = solver.project(z, None)?;
    if sol.kkt_residual > tol * (1.0 + z.amax()) {
        return Err(Error::QpNonconvergence { iterations: sol.iterations, residual: sol.kkt_residual });
    }
    Ok(sol)
}
