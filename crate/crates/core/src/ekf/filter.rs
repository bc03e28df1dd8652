//! Generic extended Kalman filter step.

use nalgebra::{DMatrix, DVector};

use crate::grad::central_difference_jacobian;
use crate::{Error, Result};

/// Covariance symmetry tolerance.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues above this (negative) floor are clamped to zero.
pub const PSD_TOL: f64 = 1e-9;
/// Innovation covariances with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e14;

/// State transition `x' = f(x, u)`.
pub trait Dynamics {
    fn propagate(&self, x: &DVector<f64>, u: &[f64]) -> Result<DVector<f64>>;

    /// `∂f/∂x`; central differences by default.
    fn jacobian(&self, x: &DVector<f64>, u: &[f64]) -> Result<DMatrix<f64>> {
        fd_jacobian(x, |p| self.propagate(p, u))
    }
}

/// Observation `z = h(x)`.
pub trait Observation {
    fn output_dim(&self) -> usize;

    fn observe(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// `∂h/∂x`; central differences by default.
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        fd_jacobian(x, |p| self.observe(p))
    }
}

fn fd_jacobian(x: &DVector<f64>, f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>) -> Result<DMatrix<f64>> {
    central_difference_jacobian(
        |p| f(&DVector::from_column_slice(p)).map(|v| v.as_slice().to_vec()),
        x.as_slice(),
        crate::grad::DEFAULT_FD_STEP,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub observation_noise: DMatrix<f64>,
}

impl FilterState {
    pub fn new(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        process_noise: DMatrix<f64>,
        observation_noise: DMatrix<f64>,
    ) -> Result<Self> {
        let n = mean.len();
        for (what, m) in [("covariance", &covariance), ("process noise", &process_noise)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension {
                    what,
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        if observation_noise.nrows() != observation_noise.ncols() {
            return Err(Error::InvalidArgument("observation noise must be square".into()));
        }
        let mut s = FilterState {
            mean,
            covariance,
            process_noise,
            observation_noise,
        };
        s.covariance = make_psd(&s.covariance);
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetrises `p` and clamps eigenvalues in `[−PSD_TOL, 0)` to zero.
pub fn make_psd(p: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (p + p.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| if l >= -PSD_TOL { l.max(0.0) } else { l });
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (&rebuilt + rebuilt.transpose()) * 0.5
}

/// Quantities from one update, for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub innovation: DVector<f64>,
    pub innovation_covariance: DMatrix<f64>,
    /// Normalised innovation squared `yᵀ S⁻¹ y`.
    pub nis: f64,
}

/// Measurement update from a predicted mean and covariance.
fn update(
    filter: &FilterState,
    x_pred: DVector<f64>,
    p_pred: DMatrix<f64>,
    z: &DVector<f64>,
    h: &dyn Observation,
) -> Result<(FilterState, StepReport)> {
    let m = h.output_dim();
    if z.len() != m {
        return Err(Error::Dimension {
            what: "observation",
            expected: m,
            got: z.len(),
        });
    }
    if filter.observation_noise.nrows() != m {
        return Err(Error::Dimension {
            what: "observation noise",
            expected: m,
            got: filter.observation_noise.nrows(),
        });
    }
    let hm = h.jacobian(&x_pred)?;
    let y = z - h.observe(&x_pred)?;
    let s = &hm * &p_pred * hm.transpose() + &filter.observation_noise;
    let s = (&s + s.transpose()) * 0.5;
    let sv = s.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularInnovation { condition });
    }
    let s_inv = s.clone().try_inverse().ok_or(Error::SingularInnovation { condition })?;
    let k = &p_pred * hm.transpose() * &s_inv;
    let mean = &x_pred + &k * &y;
    let n = filter.dim();
    let cov = (DMatrix::identity(n, n) - &k * &hm) * &p_pred;
    let nis = (y.transpose() * &s_inv * &y)[(0, 0)];
    Ok((
        FilterState {
            mean,
            covariance: make_psd(&cov),
            ..filter.clone()
        },
        StepReport {
            innovation: y,
            innovation_covariance: s,
            nis,
        },
    ))
}

/// One predict/update cycle:
/// `F = ∂f/∂x`, `x' = f(x̂, u)`, `H = ∂h/∂x'`, `P' = F P Fᵀ + Q`,
/// `y = z − h(x')`, `S = H P' Hᵀ + R`, `K = P' Hᵀ S⁻¹`, `x̂ = x' + K y`,
/// `P̂ = (I − K H) P'`.
pub fn ekf_step(
    filter: &FilterState,
    u: &[f64],
    z: &DVector<f64>,
    f: &dyn Dynamics,
    h: &dyn Observation,
) -> Result<(FilterState, StepReport)> {
    let fm = f.jacobian(&filter.mean, u)?;
    let n = filter.dim();
    if fm.nrows() != n || fm.ncols() != n {
        return Err(Error::Dimension {
            what: "dynamics Jacobian",
            expected: n,
            got: fm.nrows(),
        });
    }
    let x_pred = f.propagate(&filter.mean, u)?;
    let p_pred = &fm * &filter.covariance * fm.transpose() + &filter.process_noise;
    update(filter, x_pred, p_pred, z, h)
}

/// Update without a prediction, for the first frame.
pub fn ekf_update(filter: &FilterState, z: &DVector<f64>, h: &dyn Observation) -> Result<(FilterState, StepReport)> {
    update(filter, filter.mean.clone(), filter.covariance.clone(), z, h)
}
