//! Central finite-difference verification of analytic gradients.

use std::fmt;

/// Relative jump between one-sided differences above which a coordinate is
/// treated as sitting on a kink (clip saturation edge, branch switch).
const KINK_THRESHOLD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordStatus {
    Pass,
    Fail,
    /// Known nondifferentiable point; excluded from pass/fail.
    Boundary,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordReport {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub status: CoordStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub name: String,
    pub tol: f64,
    pub coords: Vec<CoordReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.coords
            .iter()
            .all(|c| matches!(c.status, CoordStatus::Pass | CoordStatus::Boundary))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.coords
            .iter()
            .filter(|c| c.status != CoordStatus::Boundary)
            .map(|c| c.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn boundary_count(&self) -> usize {
        self.coords.iter().filter(|c| c.status == CoordStatus::Boundary).count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordReport> {
        self.coords
            .iter()
            .filter(|c| matches!(c.status, CoordStatus::Fail | CoordStatus::NonFinite))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} ({} coords, max rel err {:.2e}, {} at boundaries)",
            self.name,
            if self.passed() { "pass" } else { "FAIL" },
            self.coords.len(),
            self.max_rel_error(),
            self.boundary_count()
        )?;
        for c in self.failures().take(5) {
            write!(
                f,
                "\n  coord {}: analytic {:.6e} numeric {:.6e} rel {:.2e} {:?}",
                c.index, c.analytic, c.numeric, c.rel_error, c.status
            )?;
        }
        Ok(())
    }
}

/// Compare `analytic` against central differences of the scalar program `f`
/// at `point`, for the coordinates in `coords` (all when `None`).
///
/// Relative error is `|analytic - numeric| / max(1, |numeric|)`.
pub fn gradcheck<F>(
    name: &str,
    f: F,
    point: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    h: f64,
    tol: f64,
) -> GradcheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length");
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let f0 = f(point);
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let rel_error = (a - numeric).abs() / numeric.abs().max(1.0);
        let status = if !(fp.is_finite() && fm.is_finite() && f0.is_finite() && a.is_finite()) {
            CoordStatus::NonFinite
        } else {
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            if (fwd - bwd).abs() > KINK_THRESHOLD * numeric.abs().max(1.0) {
                CoordStatus::Boundary
            } else if rel_error <= tol {
                CoordStatus::Pass
            } else {
                CoordStatus::Fail
            }
        };
        out.push(CoordReport {
            index: i,
            analytic: a,
            numeric,
            rel_error,
            status,
        });
    }
    GradcheckReport {
        name: name.to_string(),
        tol,
        coords: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_passes() {
        let r = gradcheck("const", |_| 4.0, &[1.0, 2.0], &[0.0, 0.0], None, 1e-6, 1e-5);
        assert!(r.passed());
        assert_eq!(r.max_rel_error(), 0.0);
    }

    #[test]
    fn wrong_gradient_fails() {
        let r = gradcheck("sq", |x| x[0] * x[0], &[3.0], &[5.0], None, 1e-6, 1e-5);
        assert!(!r.passed());
    }

    #[test]
    fn clip_kink_is_flagged_as_boundary() {
        let clip = |x: &[f64]| x[0].clamp(-1.0, 1.0);
        let r = gradcheck("clip", clip, &[1.0], &[0.0], None, 1e-6, 1e-5);
        assert_eq!(r.coords[0].status, CoordStatus::Boundary);
        assert!(r.passed());
    }

    #[test]
    fn non_finite_is_reported() {
        let r = gradcheck(
            "nan",
            |x| if x[0] > 1.0 { f64::NAN } else { x[0] },
            &[1.0],
            &[1.0],
            None,
            1e-6,
            1e-5,
        );
        assert_eq!(r.coords[0].status, CoordStatus::NonFinite);
        assert!(!r.passed());
    }
}
