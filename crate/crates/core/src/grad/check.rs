//! Finite-difference gradients and Jacobians, and analytic-vs-numeric
//! comparison reports.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::Result;

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn central_difference_gradient(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Central-difference Jacobian (rows = outputs).
pub fn central_difference_jacobian(
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let m = f(x)?.len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        for r in 0..m {
            jac[(r, i)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Vector-valued map with an optional analytic Jacobian.
pub trait VectorMap {
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn analytic_jacobian(&self, _x: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

/// Analytic Jacobian when the map supplies one, central differences
/// (step `h`) otherwise.
pub fn jacobian(map: &dyn VectorMap, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    match map.analytic_jacobian(x) {
        Some(j) => j,
        None => central_difference_jacobian(|y| map.eval(y), x, h),
    }
}

/// `|a − n| / max(|a|, |n|, floor)` where the floor is `1e-4` of the
/// largest numeric magnitude in the same check (and at least `1e-8`), so
/// entries that are tiny relative to the gradient are judged on scale.
pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    let scale = numeric.iter().chain(analytic).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-4 * scale).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub term: String,
    /// Random configuration the row belongs to.
    pub config: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

pub fn compare_gradients(term: &str, analytic: &[f64], numeric: &[f64]) -> Vec<GradCheckRow> {
    relative_errors(analytic, numeric)
        .into_iter()
        .enumerate()
        .map(|(i, rel_err)| GradCheckRow {
            term: term.to_string(),
            config: 0,
            index: i,
            analytic: analytic[i],
            numeric: numeric[i],
            rel_err,
        })
        .collect()
}

pub fn max_rel_err(rows: &[GradCheckRow]) -> f64 {
    rows.iter().map(|r| r.rel_err).fold(0.0, f64::max)
}

/// CSV with header `term,config,index,analytic,numeric,rel_err`.
pub fn write_gradcheck_csv(rows: &[GradCheckRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear(DMatrix<f64>);
    impl VectorMap for Linear {
        fn output_dim(&self) -> usize {
            self.0.nrows()
        }
        fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok((&self.0 * nalgebra::DVector::from_column_slice(x)).iter().copied().collect())
        }
    }

    #[test]
    fn identity_and_linear_jacobians() {
        let id = Linear(DMatrix::identity(3, 3));
        let j = jacobian(&id, &[1.0, 2.0, 3.0], 1e-6).unwrap();
        assert!((j - DMatrix::<f64>::identity(3, 3)).norm() < 1e-9);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let j = jacobian(&Linear(a.clone()), &[0.3, -0.1, 2.0], 1e-6).unwrap();
        assert!((j - a).norm() < 1e-9);
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let g = central_difference_gradient(|x| Ok(x[0] * x[0] + 3.0 * x[1]), &[2.0, 5.0], 1e-5).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        let e = relative_errors(&[1.0, 1e-9], &[1.0005, 0.0]);
        assert!((e[0] - 0.0005 / 1.0005).abs() < 1e-12);
        assert!(e[1] < 1e-4);
    }

    #[test]
    fn csv_dump_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        write_gradcheck_csv(&compare_gradients("mask", &[1.0], &[1.0]), &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("term,config,index,analytic,numeric,rel_err\nmask,0,0,1.0,1.0,0.0"));
    }
}
