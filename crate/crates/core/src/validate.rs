//! Checks of the standing assumptions on a [`PricingGame`].

use std::fmt;

use log::warn;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::game::PricingGame;
use crate::linalg::{definiteness_tol, is_symmetric, sym_extreme_eigenvalues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckKind {
    PSymmetric,
    PPositiveDefinite,
    QSymmetric,
    QPositiveSemidefinite,
    PMinusQPositiveDefinite,
    SNonnegative,
    SharedP,
    SharedQ,
    Feasible,
    Slater,
    Bounded,
    PriceBox,
}

impl CheckKind {
    fn field(self) -> &'static str {
        match self {
            CheckKind::PSymmetric | CheckKind::PPositiveDefinite | CheckKind::SharedP => "P",
            CheckKind::QSymmetric | CheckKind::QPositiveSemidefinite | CheckKind::SharedQ => "Q",
            CheckKind::PMinusQPositiveDefinite => "P-Q",
            CheckKind::SNonnegative => "S",
            CheckKind::Feasible | CheckKind::Slater | CheckKind::Bounded => "X",
            CheckKind::PriceBox => "price_box",
        }
    }
}

impl fmt::Display for CheckKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CheckKind::PSymmetric => "P = Pᵀ",
            CheckKind::PPositiveDefinite => "P ≻ 0",
            CheckKind::QSymmetric => "Q = Qᵀ",
            CheckKind::QPositiveSemidefinite => "Q ⪰ 0",
            CheckKind::PMinusQPositiveDefinite => "P − Q ≻ 0",
            CheckKind::SNonnegative => "S ≥ 0",
            CheckKind::SharedP => "P shared by all followers",
            CheckKind::SharedQ => "Q shared by all followers",
            CheckKind::Feasible => "X nonempty",
            CheckKind::Slater => "Slater point exists",
            CheckKind::Bounded => "X bounded",
            CheckKind::PriceBox => "price box nonempty and finite",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub kind: CheckKind,
    pub follower: Option<usize>,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// Location of the offending data, e.g. `followers[0].P`.
    pub fn path(&self) -> String {
        match self.follower {
            Some(i) => format!("followers[{i}].{}", self.kind.field()),
            None => self.kind.field().to_string(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "pass" } else { "FAIL" };
        write!(f, "[{mark}] {}: {}", self.path(), self.kind)?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Strictly feasible point per follower when the Slater LP certified one.
    pub slater_points: Vec<Option<DVector<f64>>>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, kind: CheckKind, follower: Option<usize>) -> Option<&Check> {
        self.checks.iter().find(|c| c.kind == kind && c.follower == follower)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        for w in &self.warnings {
            writeln!(f, "[warn] {w}")?;
        }
        Ok(())
    }
}

/// Runs every assumption check. Structural (dimension) problems are errors;
/// everything else is reported entry by entry.
pub fn validate_game(game: &PricingGame) -> Result<ValidationReport> {
    game.check_dimensions()?;
    let mut report = ValidationReport::default();
    let mut push = |kind, follower, passed, detail: String| {
        report.checks.push(Check { kind, follower, passed, detail });
    };

    let first = &game.followers[0];
    for (i, f) in game.followers.iter().enumerate() {
        let fi = Some(i);
        let p_sym = is_symmetric(&f.p, definiteness_tol(&f.p));
        push(CheckKind::PSymmetric, fi, p_sym, String::new());
        let (p_min, _) = sym_extreme_eigenvalues(&f.p);
        push(CheckKind::PPositiveDefinite, fi, p_min > definiteness_tol(&f.p), format!("smallest eigenvalue {p_min}"));
        push(CheckKind::QSymmetric, fi, is_symmetric(&f.q, definiteness_tol(&f.q)), String::new());
        let (q_min, _) = sym_extreme_eigenvalues(&f.q);
        push(
            CheckKind::QPositiveSemidefinite,
            fi,
            q_min >= -definiteness_tol(&f.q),
            format!("smallest eigenvalue {q_min}"),
        );
        let diff = &f.p - &f.q;
        let (d_min, _) = sym_extreme_eigenvalues(&diff);
        push(
            CheckKind::PMinusQPositiveDefinite,
            fi,
            d_min > definiteness_tol(&diff),
            format!("smallest eigenvalue {d_min}"),
        );
        let neg = f.s.iter().position(|&v| v < 0.0);
        push(
            CheckKind::SNonnegative,
            fi,
            neg.is_none(),
            neg.map(|k| format!("negative entry at ({}, {})", k % f.s.nrows(), k / f.s.nrows())).unwrap_or_default(),
        );
        if i > 0 {
            push(CheckKind::SharedP, fi, f.p == first.p, String::new());
            push(CheckKind::SharedQ, fi, f.q == first.q, String::new());
        }

        let poly = f.polyhedron();
        match poly.slater_point() {
            Ok(cert) => {
                push(CheckKind::Feasible, fi, true, String::new());
                let strict = cert.is_strict();
                push(CheckKind::Slater, fi, strict, format!("margin {:e}", cert.margin));
                report.slater_points.push(strict.then_some(cert.point));
                match poly.unbounded_coordinate() {
                    Ok(None) => push(CheckKind::Bounded, fi, true, String::new()),
                    Ok(Some((j, sign))) => push(
                        CheckKind::Bounded,
                        fi,
                        false,
                        format!("unbounded along {}x[{j}]", if sign > 0.0 { "+" } else { "-" }),
                    ),
                    Err(e) => push(CheckKind::Bounded, fi, false, e.to_string()),
                }
            }
            Err(Error::Infeasible(msg)) => {
                push(CheckKind::Feasible, fi, false, msg);
                push(CheckKind::Slater, fi, false, "set is empty".into());
                report.slater_points.push(None);
            }
            Err(e) => return Err(e),
        }
        if i > 0 && f.s != first.s {
            report.warnings.push(format!("followers[{i}].S differs from followers[0].S"));
        }
    }

    let bad = (0..game.price_dim()).find(|&j| {
        let (lo, hi) = (game.price_lo[j], game.price_hi[j]);
        !(lo.is_finite() && hi.is_finite() && lo <= hi)
    });
    report.checks.push(Check {
        kind: CheckKind::PriceBox,
        follower: None,
        passed: bad.is_none(),
        detail: bad.map(|j| format!("coordinate {j}")).unwrap_or_default(),
    });

    for w in &report.warnings {
        warn!("{w}");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::fixtures::g2;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn status(r: &ValidationReport) -> Vec<(CheckKind, Option<usize>, bool)> {
        r.checks.iter().map(|c| (c.kind, c.follower, c.passed)).collect()
    }

    fn flipped(a: &ValidationReport, b: &ValidationReport) -> Vec<(CheckKind, Option<usize>)> {
        status(a).into_iter().zip(status(b)).filter(|(x, y)| x.2 != y.2).map(|(x, _)| (x.0, x.1)).collect()
    }

    #[test]
    fn g2_passes_with_center_slater_point() {
        let r = validate_game(&g2()).unwrap();
        assert!(r.passed(), "{r}");
        for p in &r.slater_points {
            assert_abs_diff_eq!(p.as_ref().unwrap(), &DVector::from_vec(vec![0.5, 0.5]), epsilon = 1e-9);
        }
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn q_too_large_fails_p_minus_q() {
        let mut game = g2();
        for f in &mut game.followers {
            f.q = DMatrix::identity(2, 2) * 3.0;
        }
        let r = validate_game(&game).unwrap();
        let c = r.get(CheckKind::PMinusQPositiveDefinite, Some(0)).unwrap();
        assert!(!c.passed);
        assert!(c.detail.contains("-1"), "{}", c.detail);
        assert!(r.get(CheckKind::PPositiveDefinite, Some(0)).unwrap().passed);
    }

    #[test]
    fn negative_rhs_is_infeasible() {
        let mut game = g2();
        game.followers[0].b[0] = -1.0;
        let base = validate_game(&g2()).unwrap();
        let r = validate_game(&game).unwrap();
        assert_eq!(flipped(&base, &r), vec![(CheckKind::Feasible, Some(0)), (CheckKind::Slater, Some(0))]);
    }

    #[test]
    fn single_perturbations_flip_their_entry() {
        let base = validate_game(&g2()).unwrap();

        let mut game = g2();
        game.followers[1].q = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, 1.0]);
        let r = validate_game(&game).unwrap();
        assert_eq!(
            flipped(&base, &r),
            vec![(CheckKind::QPositiveSemidefinite, Some(1)), (CheckKind::SharedQ, Some(1))]
        );

        let mut game = g2();
        for f in &mut game.followers {
            f.p = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        }
        let r = validate_game(&game).unwrap();
        let flips = flipped(&base, &r);
        assert!(flips.contains(&(CheckKind::PPositiveDefinite, Some(0))));
        assert!(flips
            .iter()
            .all(|(k, _)| matches!(k, CheckKind::PPositiveDefinite | CheckKind::PMinusQPositiveDefinite)));
    }

    #[test]
    fn asymmetric_p_names_path() {
        let mut game = g2();
        game.followers[0].p[(0, 1)] = 0.5;
        let r = validate_game(&game).unwrap();
        let bad: Vec<_> = r.failures().map(Check::path).collect();
        assert!(bad.contains(&"followers[0].P".to_string()), "{bad:?}");
    }

    #[test]
    fn unbounded_set_fails_compactness() {
        let mut game = g2();
        game.followers[0].a = DMatrix::zeros(0, 2);
        game.followers[0].b = DVector::zeros(0);
        let r = validate_game(&game).unwrap();
        assert!(!r.get(CheckKind::Bounded, Some(0)).unwrap().passed);
        assert!(r.get(CheckKind::Slater, Some(0)).unwrap().passed);
    }

    #[test]
    fn heterogeneous_s_only_warns() {
        let mut game = g2();
        game.followers[1].s = DMatrix::identity(2, 2) * 2.0;
        let r = validate_game(&game).unwrap();
        assert!(r.passed());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let mut game = g2();
        game.followers[1].g = DMatrix::zeros(2, 3);
        let err = validate_game(&game).unwrap_err();
        assert!(err.to_string().contains("followers[1].G"), "{err}");
    }
}
