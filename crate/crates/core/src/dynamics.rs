//! Gradient-descent training and the kernel-regime reference dynamics.
//!
//! Function-space quantities on a sample of size `n` use the normalized inner
//! product `<a, b>_n = (1/n) a . b`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, dot_n, linear_fit, norm, norm_n, sub, Matrix};
use crate::net::{Network, ParamVector};
use crate::spectral::EigenSystem;

pub const MAX_HALVINGS: usize = 20;
pub const DRIFT_SLACK: f64 = 0.05;
pub const NOISE_FLOOR: f64 = 1e-6;
/// Gaps to the next checkpoint below this fraction of its time are closed
/// without a step.
const TIME_RESOLUTION: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eta0: f64,
    pub t_max: f64,
    /// Increasing times in `(0, t_max]` at which the state is recorded, in
    /// addition to `t = 0`.
    pub checkpoints: Vec<f64>,
}

impl Schedule {
    /// `count` checkpoints spaced geometrically from `t_first` to `t_max`.
    pub fn geometric(eta0: f64, t_first: f64, t_max: f64, count: usize) -> Self {
        let count = count.max(1);
        let checkpoints = if count == 1 {
            vec![t_max]
        } else {
            let ratio = (t_max / t_first).ln() / (count - 1) as f64;
            (0..count)
                .map(|i| if i + 1 == count { t_max } else { t_first * (ratio * i as f64).exp() })
                .collect()
        };
        Self {
            eta0,
            t_max,
            checkpoints,
        }
    }

    /// `count` evenly spaced checkpoints ending at `t_max`.
    pub fn uniform(eta0: f64, t_max: f64, count: usize) -> Self {
        Self {
            eta0,
            t_max,
            checkpoints: (1..=count).map(|i| t_max * i as f64 / count as f64).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) {
            return Err(Error::InvalidArgument(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(self.t_max >= self.eta0) {
            return Err(Error::InvalidArgument(format!(
                "t_max = {} must be at least eta0 = {}",
                self.t_max, self.eta0
            )));
        }
        let mut last = 0.0;
        for &c in &self.checkpoints {
            if !(c > last) || c > self.t_max {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint {c} is not increasing within (0, t_max]"
                )));
            }
            last = c;
        }
        Ok(())
    }
}

/// Labeled points `(x_i, y_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl Sample {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: xs.len(),
                got: ys.len(),
            });
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// `f(x_i) - y_i`.
    pub fn residual(&self, net: &Network, params: &ParamVector) -> Result<Vec<f64>> {
        let f = net.forward_batch(params, &self.xs)?;
        Ok(f.iter().zip(&self.ys).map(|(a, b)| a - b).collect())
    }
}

/// Functions evaluated on a fixed sample, one column per function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBasis {
    pub values: Matrix,
}

impl ProjectionBasis {
    pub fn new(values: Matrix) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.cols() == 0
    }

    pub fn sample_size(&self) -> usize {
        self.values.rows()
    }

    /// Orthonormal eigenvectors of an eigensystem on the same sample, scaled to
    /// unit norm in `<.,.>_n`.
    pub fn from_eigensystem(es: &EigenSystem, k: usize) -> Self {
        let n = es.len();
        let rn = (n as f64).sqrt();
        let mut values = Matrix::zeros(n, k);
        for i in 0..k {
            for r in 0..n {
                values[(r, i)] = es.eigenvectors[(r, i)] * rn;
            }
        }
        Self { values }
    }

    fn check(&self, r: &[f64], k: usize) -> Result<()> {
        if r.len() != self.sample_size() {
            return Err(Error::DimensionMismatch {
                what: "residual on projection sample",
                expected: self.sample_size(),
                got: r.len(),
            });
        }
        if k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "projection onto {k} functions requested, {} available",
                self.len()
            )));
        }
        Ok(())
    }
}

/// `<r, phi_i>_n` for the first `k` basis functions.
pub fn project(r: &[f64], basis: &ProjectionBasis, k: usize) -> Result<Vec<f64>> {
    basis.check(r, k)?;
    Ok((0..k).map(|i| dot_n(r, &basis.values.column(i))).collect())
}

/// Orthonormal (in `<.,.>_n`) basis of the span of the first `k` columns by
/// twice-applied modified Gram-Schmidt, with the triangular factor.
fn qr(basis: &ProjectionBasis, k: usize) -> Result<(Vec<Vec<f64>>, Matrix)> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = Matrix::zeros(k, k);
    for j in 0..k {
        let mut v = basis.values.column(j);
        let original = norm_n(&v);
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot_n(qi, &v);
                r[(i, j)] += c;
                axpy(-c, qi, &mut v);
            }
        }
        let len = norm_n(&v);
        if !(len > 1e-10 * original) {
            return Err(Error::InvalidArgument(format!(
                "basis function {j} is linearly dependent on the previous ones on this sample"
            )));
        }
        r[(j, j)] = len;
        q.push(v.into_iter().map(|x| x / len).collect());
    }
    Ok((q, r))
}

/// Coefficients `c` of the orthogonal projection `P_k r = sum_i c_i phi_i` onto the
/// span of the first `k` basis functions (least squares in `<.,.>_n`).
pub fn project_least_squares(r: &[f64], basis: &ProjectionBasis, k: usize) -> Result<Vec<f64>> {
    basis.check(r, k)?;
    let (q, rr) = qr(basis, k)?;
    let qtr: Vec<f64> = q.iter().map(|qi| dot_n(qi, r)).collect();
    let mut c = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = qtr[i];
        for j in (i + 1)..k {
            s -= rr[(i, j)] * c[j];
        }
        c[i] = s / rr[(i, i)];
    }
    Ok(c)
}

/// `P_k r` as a vector on the sample.
pub fn projection_of(r: &[f64], basis: &ProjectionBasis, k: usize) -> Result<Vec<f64>> {
    basis.check(r, k)?;
    let (q, _) = qr(basis, k)?;
    let mut out = vec![0.0; r.len()];
    for qi in &q {
        axpy(dot_n(qi, r), qi, &mut out);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub eta: f64,
    pub loss: f64,
    pub drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointChecks {
    pub drift: f64,
    pub drift_bound: f64,
    pub drift_ok: bool,
    pub residual_norm: f64,
    pub residual_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub params_snapshots: Vec<Vec<f64>>,
    pub train_residuals: Vec<Vec<f64>>,
    pub test_residuals: Vec<Vec<f64>>,
    /// `<r_t, phi_i>` on the held-out sample, per checkpoint.
    pub projections: Vec<Vec<f64>>,
    /// Least-squares coefficients of `r_t` in the tracked basis, per checkpoint.
    pub projection_coefficients: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
    pub checks: Vec<CheckpointChecks>,
    pub steps: Vec<StepRecord>,
    pub rejected_steps: usize,
    /// Every accepted step had loss no larger than the one before.
    pub loss_monotone: bool,
}

impl Trajectory {
    pub fn all_checks_hold(&self) -> bool {
        self.loss_monotone && self.checks.iter().all(|c| c.drift_ok && c.residual_ok)
    }

    /// CSV with one row per checkpoint: `t`, then one column per tracked function.
    pub fn projections_csv(&self, least_squares: bool) -> String {
        let rows = if least_squares {
            &self.projection_coefficients
        } else {
            &self.projections
        };
        let k = rows.first().map_or(0, Vec::len);
        let mut s = String::from("t");
        for i in 1..=k {
            write!(s, ",phi_{i}").unwrap();
        }
        s.push('\n');
        for (t, row) in self.times.iter().zip(rows) {
            write!(s, "{t:e}").unwrap();
            for c in row {
                write!(s, ",{c:e}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

fn loss_and_gradient(net: &Network, theta: &ParamVector, train: &Sample) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = train.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    let mut residual = Vec::with_capacity(train.len());
    for (x, y) in train.xs.iter().zip(&train.ys) {
        let (f, g) = net.value_and_grad(theta, x)?;
        let r = f - y;
        axpy(r / n, &g, &mut grad);
        residual.push(r);
    }
    let loss = dot(&residual, &residual) / (2.0 * n);
    Ok((loss, grad, residual))
}

/// Explicit Euler steps on `Phi = |f(X) - y|^2 / (2n)`.
///
/// A step that increases the loss is retried with half the step size, up to
/// [`MAX_HALVINGS`] times; the reduced step size is kept afterwards. Steps are
/// shortened to land exactly on checkpoint times, and time advances by the step
/// size actually taken. When `basis` is given, held-out residuals are projected
/// onto it at every checkpoint.
pub fn train(
    net: &Network,
    params0: &ParamVector,
    train: &Sample,
    holdout: &Sample,
    schedule: &Schedule,
    basis: Option<&ProjectionBasis>,
    keep_snapshots: bool,
) -> Result<Trajectory> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training sample is empty".into()));
    }
    let mut theta = params0.clone();
    let (mut loss, mut grad, mut residual) = loss_and_gradient(net, &theta, train)?;
    let r0_norm = norm_n(&residual);
    let mut traj = Trajectory {
        times: Vec::new(),
        params_snapshots: Vec::new(),
        train_residuals: Vec::new(),
        test_residuals: Vec::new(),
        projections: Vec::new(),
        projection_coefficients: Vec::new(),
        losses: Vec::new(),
        checks: Vec::new(),
        steps: Vec::new(),
        rejected_steps: 0,
        loss_monotone: true,
    };
    let record = |traj: &mut Trajectory, t: f64, theta: &ParamVector, residual: &[f64], loss: f64| -> Result<()> {
        let drift = norm(&sub(&theta.data, &params0.data));
        let drift_bound = (1.0 + DRIFT_SLACK) * (t / 2.0).sqrt() * r0_norm;
        let rn = norm_n(residual);
        traj.checks.push(CheckpointChecks {
            drift,
            drift_bound,
            drift_ok: drift <= drift_bound,
            residual_norm: rn,
            residual_ok: rn <= r0_norm,
        });
        traj.times.push(t);
        traj.losses.push(loss);
        traj.train_residuals.push(residual.to_vec());
        let test = if holdout.is_empty() {
            Vec::new()
        } else {
            holdout.residual(net, theta)?
        };
        if let Some(b) = basis {
            let k = b.len();
            traj.projections.push(project(&test, b, k)?);
            traj.projection_coefficients.push(project_least_squares(&test, b, k)?);
        }
        traj.test_residuals.push(test);
        if keep_snapshots {
            traj.params_snapshots.push(theta.data.clone());
        }
        Ok(())
    };
    record(&mut traj, 0.0, &theta, &residual, loss)?;
    let mut t = 0.0;
    let mut eta = schedule.eta0;
    for &checkpoint in &schedule.checkpoints {
        while t < checkpoint {
            let remaining = checkpoint - t;
            if remaining <= TIME_RESOLUTION * checkpoint {
                // accumulated round-off, not a step worth taking
                t = checkpoint;
                break;
            }
            let mut halvings = 0;
            loop {
                let (step, lands) = if eta >= remaining { (remaining, true) } else { (eta, false) };
                let mut trial = theta.clone();
                axpy(-step, &grad, &mut trial.data);
                let (trial_loss, trial_grad, trial_residual) = loss_and_gradient(net, &trial, train)?;
                if trial_loss <= loss {
                    theta = trial;
                    loss = trial_loss;
                    grad = trial_grad;
                    residual = trial_residual;
                    t = if lands { checkpoint } else { t + step };
                    traj.steps.push(StepRecord {
                        time: t,
                        eta: step,
                        loss,
                        drift: norm(&sub(&theta.data, &params0.data)),
                    });
                    break;
                }
                traj.rejected_steps += 1;
                if halvings == MAX_HALVINGS {
                    return Err(Error::FlowIntegration {
                        time: t,
                        halvings,
                        eta: step,
                    });
                }
                halvings += 1;
                eta = step / 2.0;
            }
        }
        record(&mut traj, checkpoint, &theta, &residual, loss)?;
    }
    traj.loss_monotone = traj.steps.windows(2).all(|w| w[1].loss <= w[0].loss)
        && traj.steps.first().is_none_or(|s| s.loss <= traj.losses[0]);
    Ok(traj)
}

/// Linear kernel dynamics `r_t = exp(-(G/n) t) r_0` in the eigenbasis of `G/n`.
///
/// Eigenvalues below zero (round-off on a PSD Gram matrix) are treated as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDynamics {
    pub eigen: EigenSystem,
    pub r0: Vec<f64>,
    coefficients: Vec<f64>,
}

impl KernelDynamics {
    pub fn new(eigen: EigenSystem, r0: Vec<f64>) -> Result<Self> {
        if r0.len() != eigen.len() {
            return Err(Error::DimensionMismatch {
                what: "initial residual",
                expected: eigen.len(),
                got: r0.len(),
            });
        }
        let coefficients = eigen.eigenvectors.tr_matvec(&r0);
        Ok(Self {
            eigen,
            r0,
            coefficients,
        })
    }

    fn rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigen.eigenvalues.iter().map(|&s| s.max(0.0))
    }

    fn combine(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let weights: Vec<f64> = self
            .coefficients
            .iter()
            .zip(self.rates())
            .map(|(c, s)| c * f(s))
            .collect();
        self.eigen.eigenvectors.matvec(&weights)
    }

    /// `V diag(exp(-s_i t)) V^T r_0`.
    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        if t == 0.0 {
            return Ok(self.r0.clone());
        }
        Ok(self.combine(|s| (-s * t).exp()))
    }

    /// Residual on another sample under the same flow:
    /// `r_t(x') = r_0(x') - (1/n) C V diag((1 - exp(-s t)) / s) V^T r_0`, with
    /// `C[a][j] = K(x'_a, x_j)`.
    pub fn extend(&self, cross: &Matrix, r0_other: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        if cross.cols() != self.r0.len() || cross.rows() != r0_other.len() {
            return Err(Error::DimensionMismatch {
                what: "cross-kernel shape",
                expected: self.r0.len(),
                got: cross.cols(),
            });
        }
        let integrated = self.combine(|s| if s == 0.0 { t } else { -(-s * t).exp_m1() / s });
        let n = self.r0.len() as f64;
        let correction = cross.matvec(&integrated);
        Ok(r0_other
            .iter()
            .zip(&correction)
            .map(|(r, c)| r - c / n)
            .collect())
    }
}

/// Alias of [`KernelDynamics::at`].
pub fn kernel_flow(kd: &KernelDynamics, t: f64) -> Result<Vec<f64>> {
    kd.at(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub index: usize,
    pub rate: f64,
    pub r_squared: f64,
    pub points: usize,
    /// False when fewer than 5 checkpoints lie above the noise floor.
    pub fit: bool,
}

/// Least-squares slope of `log |c_t|` against `t` over the leading run of
/// checkpoints with `|c_t| > 1e-6`; the rate is the negated slope.
pub fn decay_rate_fit_series(times: &[f64], coeffs: &[f64], index: usize) -> DecayFit {
    let valid = coeffs
        .iter()
        .take_while(|c| c.abs() > NOISE_FLOOR && c.is_finite())
        .count();
    if valid < 5 {
        return DecayFit {
            index,
            rate: f64::NAN,
            r_squared: f64::NAN,
            points: valid,
            fit: false,
        };
    }
    let logs: Vec<f64> = coeffs[..valid].iter().map(|c| c.abs().ln()).collect();
    let (slope, _, r2) = linear_fit(&times[..valid], &logs);
    DecayFit {
        index,
        rate: -slope,
        r_squared: r2,
        points: valid,
        fit: true,
    }
}

/// Decay rate of tracked function `index` in a trajectory.
pub fn decay_rate_fit(traj: &Trajectory, index: usize, least_squares: bool) -> Result<DecayFit> {
    let rows = if least_squares {
        &traj.projection_coefficients
    } else {
        &traj.projections
    };
    if rows.first().is_none_or(|r| index >= r.len()) {
        return Err(Error::InvalidArgument(format!(
            "trajectory does not track function {index}"
        )));
    }
    let series: Vec<f64> = rows.iter().map(|r| r[index]).collect();
    Ok(decay_rate_fit_series(&traj.times, &series, index))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRow {
    pub t: f64,
    pub k: usize,
    pub sigma_k: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnprojectedRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub kernel_distance_sq: f64,
    pub f_star_sup: f64,
    pub eps_slack: f64,
    pub rows: Vec<DeviationRow>,
    pub unprojected: Vec<UnprojectedRow>,
    pub violations: usize,
}

/// One-sided check of
/// `|P_k(r_t - exp(-T t) r_0)|^2 <= ((1 - exp(-s_k t)) / s_k)^2 (4 |f*|_inf^2 D + eps)`
/// at every checkpoint of `traj` and every `k` in `k_list`.
///
/// The operator and `P_k` both come from `kd`, an eigensystem of a kernel Gram
/// matrix over the held-out sample; `traj.test_residuals` must live on that same
/// sample. The unprojected rows compare the full squared distance against
/// `t^2 (4 |f*|_inf^2 D + eps)`.
pub fn damped_deviation_report(
    traj: &Trajectory,
    kd: &KernelDynamics,
    k_list: &[usize],
    kernel_distance_sq: f64,
    f_star_sup: f64,
    eps_slack: f64,
) -> Result<DeviationReport> {
    damped_deviation_report_for(
        &traj.times,
        &traj.test_residuals,
        kd,
        k_list,
        kernel_distance_sq,
        f_star_sup,
        eps_slack,
    )
}

/// [`damped_deviation_report`] for any residual series on the sample of `kd`,
/// such as the training residuals against a Gram matrix on the training inputs.
pub fn damped_deviation_report_for(
    times: &[f64],
    residuals: &[Vec<f64>],
    kd: &KernelDynamics,
    k_list: &[usize],
    kernel_distance_sq: f64,
    f_star_sup: f64,
    eps_slack: f64,
) -> Result<DeviationReport> {
    let n = kd.r0.len();
    if residuals.first().map(Vec::len) != Some(n) {
        return Err(Error::DimensionMismatch {
            what: "residual vs kernel dynamics sample",
            expected: n,
            got: residuals.first().map_or(0, Vec::len),
        });
    }
    let max_k = k_list.iter().copied().max().unwrap_or(0);
    if max_k > n || k_list.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "projection ranks {k_list:?} must lie in 1..={n}"
        )));
    }
    let budget = 4.0 * f_star_sup * f_star_sup * kernel_distance_sq + eps_slack;
    let mut rows = Vec::new();
    let mut unprojected = Vec::new();
    for (t, r_t) in times.iter().zip(residuals) {
        let ideal = kd.at(*t)?;
        let diff = sub(r_t, &ideal);
        let coeffs = kd.eigen.eigenvectors.tr_matvec(&diff);
        for &k in k_list {
            // |P_k g|_n^2 with P_k the projection onto the top-k eigenvectors
            let lhs = coeffs[..k].iter().map(|c| c * c).sum::<f64>() / n as f64;
            let sigma = kd.eigen.eigenvalues[k - 1].max(0.0);
            let damping = if sigma == 0.0 { *t } else { -(-sigma * t).exp_m1() / sigma };
            let rhs = damping * damping * budget;
            rows.push(DeviationRow {
                t: *t,
                k,
                sigma_k: sigma,
                lhs,
                rhs,
                holds: lhs <= rhs,
            });
        }
        let lhs = dot_n(&diff, &diff);
        let rhs = t * t * budget;
        unprojected.push(UnprojectedRow {
            t: *t,
            lhs,
            rhs,
            holds: lhs <= rhs,
        });
    }
    let violations = rows.iter().filter(|r| !r.holds).count();
    Ok(DeviationReport {
        kernel_distance_sq,
        f_star_sup,
        eps_slack,
        rows,
        unprojected,
        violations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestErrorReport {
    /// `|P_k r_T|^2`
    pub projected_final: f64,
    /// `(1/2) |r_T|^2`
    pub half_final: f64,
    /// `|(I - P_k) r_0|^2`
    pub complement_initial: f64,
}

/// Test-error decomposition on the held-out sample, with `P_k` the orthogonal
/// projection onto the span of the first `k` basis functions.
pub fn test_error_report(traj: &Trajectory, basis: &ProjectionBasis, k: usize) -> Result<TestErrorReport> {
    let r0 = traj
        .test_residuals
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    let r_t = traj.test_residuals.last().expect("nonempty");
    let p_t = projection_of(r_t, basis, k)?;
    let p_0 = projection_of(r0, basis, k)?;
    let comp = sub(r0, &p_0);
    Ok(TestErrorReport {
        projected_final: dot_n(&p_t, &p_t),
        half_final: 0.5 * dot_n(r_t, r_t),
        complement_initial: dot_n(&comp, &comp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::eigh;

    #[test]
    fn flow_by_hand() {
        let es = eigh(&Matrix::diagonal(&[1.0, 2.0])).unwrap();
        let kd = KernelDynamics::new(es, vec![1.0, 1.0]).unwrap();
        let r = kd.at(std::f64::consts::LN_2).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.25).abs() < 1e-15);
        assert_eq!(kd.at(0.0).unwrap(), vec![1.0, 1.0]);
        assert!(kd.at(-1.0).is_err());
        assert!(norm(&kd.at(1e6).unwrap()) < 1e-12);
    }

    #[test]
    fn exact_exponential_fit() {
        let times: Vec<f64> = (0..12).map(|i| 0.3 * i as f64).collect();
        let c: Vec<f64> = times.iter().map(|t| 2.5 * (-0.7 * t).exp()).collect();
        let fit = decay_rate_fit_series(&times, &c, 0);
        assert!(fit.fit && (fit.rate - 0.7).abs() < 1e-8);
        let short = decay_rate_fit_series(&times[..4], &c[..4], 0);
        assert!(!short.fit);
    }

    #[test]
    fn projection_of_constructed_residual() {
        let es = eigh(&Matrix::from_rows(&[
            vec![2.0, 0.5, 0.0],
            vec![0.5, 1.0, 0.2],
            vec![0.0, 0.2, 0.5],
        ])
        .unwrap())
        .unwrap();
        let basis = ProjectionBasis::from_eigensystem(&es, 3);
        let r: Vec<f64> = (0..3)
            .map(|a| 2.0 * basis.values[(a, 0)] + 3.0 * basis.values[(a, 1)])
            .collect();
        let c = project(&r, &basis, 3).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] - 3.0).abs() < 1e-12 && c[2].abs() < 1e-12);
        let ls = project_least_squares(&r, &basis, 2).unwrap();
        assert!((ls[0] - 2.0).abs() < 1e-12 && (ls[1] - 3.0).abs() < 1e-12);
        assert!(project(&r, &basis, 4).is_err());
    }

    #[test]
    fn geometric_schedule_shape() {
        let s = Schedule::geometric(1e-2, 0.05, 5.0, 6);
        assert_eq!(s.checkpoints.len(), 6);
        assert_eq!(*s.checkpoints.last().unwrap(), 5.0);
        assert!((s.checkpoints[0] - 0.05).abs() < 1e-15);
        assert!(s.checkpoints.windows(2).all(|w| w[1] > w[0]));
        assert!(s.validate().is_ok());
        let bad = Schedule {
            eta0: 1.0,
            t_max: 0.5,
            checkpoints: vec![0.5],
        };
        assert!(bad.validate().is_err());
    }
}
