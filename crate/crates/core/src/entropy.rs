//! Covering numbers of ellipsoids, effective rank and the Fisher information
//! matrix of a network at initialization.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::net::{Network, ParamVector};
use crate::ntk::FactorCache;
use crate::rng::Rng;
use crate::spectral::{eigh, EigenScale, EigenSystem};

/// Consecutive rejected candidates after which a greedy packing is declared maximal.
pub const DEFAULT_REJECTION_LIMIT: usize = 10_000;

/// Largest parameter count for which the Fisher matrix is materialized.
pub const EXPLICIT_FISHER_LIMIT: usize = 2000;

/// `|{i : lambda_i > eps}|`.
pub fn effective_rank(eigenvalues: &[f64], eps: f64) -> usize {
    eigenvalues.iter().filter(|&&l| l > eps).count()
}

pub fn effective_rank_sweep(eigenvalues: &[f64], eps_grid: &[f64]) -> Vec<(f64, usize)> {
    eps_grid
        .iter()
        .map(|&e| (e, effective_rank(eigenvalues, e)))
        .collect()
}

pub fn effective_rank_csv(sweep: &[(f64, usize)]) -> String {
    let mut s = String::from("eps,effective_rank\n");
    for (e, r) in sweep {
        writeln!(s, "{e:e},{r}").expect("string write");
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub half_axes: Vec<f64>,
}

impl Ellipsoid {
    pub fn new(half_axes: Vec<f64>) -> Result<Self> {
        if half_axes.is_empty() {
            return Err(Error::InvalidArgument("ellipsoid needs at least one axis".into()));
        }
        if let Some(bad) = half_axes.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "half-axes must be finite and nonnegative, got {bad}"
            )));
        }
        Ok(Self { half_axes })
    }

    pub fn dim(&self) -> usize {
        self.half_axes.len()
    }

    /// Uniform point of the solid ellipsoid (zero axes contribute zero coordinates).
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let u = rng.unit_ball(self.dim());
        u.iter().zip(&self.half_axes).map(|(x, a)| x * a).collect()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in (0, 1/2), got {gamma}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub half_axes: Vec<f64>,
    pub gamma: f64,
    /// `sum_{a_i > 1} log a_i`
    pub k_lower: f64,
    /// `|{i : a_i > 1 - gamma}|`
    pub mu_gamma: usize,
    /// `k_lower + mu_gamma log(3 / gamma)`
    pub upper: f64,
    pub constructed_count: Option<usize>,
    pub centers: Option<Vec<Vec<f64>>>,
    pub rejection_limit: Option<usize>,
    pub candidates_drawn: Option<u64>,
    pub audit: Option<CoverageAudit>,
}

impl CoverReport {
    /// `k_lower <= log(count) <= upper` for the constructed cover.
    pub fn sandwich_holds(&self) -> Option<bool> {
        self.constructed_count.map(|c| {
            let lc = (c as f64).ln();
            self.k_lower <= lc + 1e-12 && lc <= self.upper + 1e-12
        })
    }
}

/// Lower and upper bounds on `log N(E_a, B_1)` computed from the half-axes.
pub fn ellipsoid_cover_bounds(e: &Ellipsoid, gamma: f64) -> Result<CoverReport> {
    check_gamma(gamma)?;
    let k_lower: f64 = e.half_axes.iter().filter(|&&a| a > 1.0).map(|a| a.ln()).sum();
    let mu_gamma = e.half_axes.iter().filter(|&&a| a > 1.0 - gamma).count();
    Ok(CoverReport {
        half_axes: e.half_axes.clone(),
        gamma,
        k_lower,
        mu_gamma,
        upper: k_lower + mu_gamma as f64 * (3.0 / gamma).ln(),
        constructed_count: None,
        centers: None,
        rejection_limit: None,
        candidates_drawn: None,
        audit: None,
    })
}

/// Uniform grid over the retained coordinates, for near-neighbour queries.
struct GridIndex {
    cell: f64,
    axes: Vec<usize>,
    cells: HashMap<Vec<i64>, Vec<usize>>,
    points: Vec<Vec<f64>>,
}

impl GridIndex {
    fn new(cell: f64, axes: Vec<usize>) -> Self {
        Self {
            cell,
            axes,
            cells: HashMap::new(),
            points: Vec::new(),
        }
    }

    fn key(&self, p: &[f64]) -> Vec<i64> {
        self.axes.iter().map(|&a| (p[a] / self.cell).floor() as i64).collect()
    }

    fn insert(&mut self, p: Vec<f64>) {
        let key = self.key(&p);
        self.cells.entry(key).or_default().push(self.points.len());
        self.points.push(p);
    }

    /// Squared distance over the retained coordinates.
    fn sq_dist(&self, p: &[f64], q: &[f64]) -> f64 {
        self.axes.iter().map(|&a| (p[a] - q[a]).powi(2)).sum()
    }

    /// Whether some stored point lies within `radius` (over the retained axes).
    fn any_within(&self, p: &[f64], radius: f64) -> bool {
        let reach = (radius / self.cell).ceil() as i64;
        let base = self.key(p);
        let r2 = radius * radius;
        let dims = base.len();
        if dims == 0 {
            return !self.points.is_empty();
        }
        let mut offset = vec![-reach; dims];
        loop {
            let key: Vec<i64> = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
            if let Some(ids) = self.cells.get(&key) {
                if ids.iter().any(|&i| self.sq_dist(p, &self.points[i]) <= r2) {
                    return true;
                }
            }
            let mut d = 0;
            loop {
                if d == dims {
                    return false;
                }
                offset[d] += 1;
                if offset[d] <= reach {
                    break;
                }
                offset[d] = -reach;
                d += 1;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cover {
    /// Centers in the ellipsoid's full coordinates.
    pub centers: Vec<Vec<f64>>,
    /// Axes with `a_i > 1 - gamma`, where the packing lives (empty when the
    /// ellipsoid already sits inside the unit ball).
    pub kept_axes: Vec<usize>,
    pub gamma: f64,
    pub rejection_limit: usize,
    pub candidates_drawn: u64,
}

/// Greedy maximal `gamma`-packing of the projection of `E_a` onto its axes with
/// `a_i > 1 - gamma`.
///
/// Candidates are drawn uniformly from the projected ellipsoid and accepted
/// when farther than `gamma` from every accepted center. The packing is declared
/// maximal after `rejection_limit` consecutive rejections. A maximal packing is a
/// `gamma`-cover of the projection, and because the dropped axes are at most
/// `1 - gamma` long it is a unit-ball cover of `E_a`. An ellipsoid inside the
/// unit ball (every `a_i <= 1`) gets the origin alone.
pub fn construct_cover(e: &Ellipsoid, gamma: f64, rejection_limit: usize, rng: &mut Rng) -> Result<Cover> {
    check_gamma(gamma)?;
    if e.dim() > 3 {
        return Err(Error::InvalidArgument(format!(
            "explicit covers are built in at most 3 dimensions, got {}",
            e.dim()
        )));
    }
    let inside_unit_ball = e.half_axes.iter().all(|&a| a <= 1.0);
    let kept: Vec<usize> = if inside_unit_ball {
        Vec::new()
    } else {
        (0..e.dim()).filter(|&i| e.half_axes[i] > 1.0 - gamma).collect()
    };
    let mut grid = GridIndex::new(gamma, kept.clone());
    grid.insert(vec![0.0; e.dim()]);
    let mut drawn = 0u64;
    if !kept.is_empty() {
        let sub_axes: Vec<f64> = kept.iter().map(|&i| e.half_axes[i]).collect();
        let sub = Ellipsoid { half_axes: sub_axes };
        let mut rejections = 0;
        while rejections < rejection_limit {
            let s = sub.sample(rng);
            drawn += 1;
            let mut full = vec![0.0; e.dim()];
            for (&axis, v) in kept.iter().zip(&s) {
                full[axis] = *v;
            }
            if grid.any_within(&full, gamma) {
                rejections += 1;
            } else {
                grid.insert(full);
                rejections = 0;
            }
        }
    }
    Ok(Cover {
        centers: grid.points,
        kept_axes: kept,
        gamma,
        rejection_limit,
        candidates_drawn: drawn,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageAudit {
    pub samples: usize,
    pub radius: f64,
    pub violations: usize,
}

/// Points `p` for which no center lies within `radius`, over `samples` uniform
/// draws from the ellipsoid.
pub fn coverage_audit(
    e: &Ellipsoid,
    centers: &[Vec<f64>],
    radius: f64,
    samples: usize,
    rng: &mut Rng,
) -> CoverageAudit {
    let violations = audit_points(centers, radius, samples, || e.sample(rng));
    CoverageAudit {
        samples,
        radius,
        violations,
    }
}

fn audit_points(
    centers: &[Vec<f64>],
    radius: f64,
    samples: usize,
    mut draw: impl FnMut() -> Vec<f64>,
) -> usize {
    let dim = centers.first().map_or(0, Vec::len);
    let mut grid = GridIndex::new(radius.max(1e-12) / 4.0, (0..dim).collect());
    for c in centers {
        grid.insert(c.clone());
    }
    (0..samples)
        .filter(|_| {
            let p = draw();
            !grid.any_within(&p, radius)
        })
        .count()
}

/// Bounds, constructed cover and coverage audit in one report.
pub fn cover_report(
    e: &Ellipsoid,
    gamma: f64,
    rejection_limit: usize,
    audit_samples: usize,
    keep_centers: bool,
    rng: &mut Rng,
) -> Result<CoverReport> {
    let mut report = ellipsoid_cover_bounds(e, gamma)?;
    let cover = construct_cover(e, gamma, rejection_limit, rng)?;
    let audit = coverage_audit(e, &cover.centers, 1.0, audit_samples, rng);
    report.constructed_count = Some(cover.centers.len());
    report.rejection_limit = Some(cover.rejection_limit);
    report.candidates_drawn = Some(cover.candidates_drawn);
    report.audit = Some(audit);
    if keep_centers {
        report.centers = Some(cover.centers);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureTag {
    /// Average over a sample from the data distribution (the empirical measure).
    Empirical,
    /// Average over fresh draws from the data distribution.
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FisherRepr {
    /// The `p x p` matrix itself.
    Explicit(Matrix),
    /// `N x p` matrix `J / sqrt(N)` with `F = factor^T factor`.
    Factor(Matrix),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherMatrix {
    pub representation: FisherRepr,
    pub measure: MeasureTag,
    pub samples: usize,
    pub params: usize,
}

impl FisherMatrix {
    pub fn trace(&self) -> f64 {
        match &self.representation {
            FisherRepr::Explicit(f) => f.trace(),
            FisherRepr::Factor(j) => dot(j.as_slice(), j.as_slice()),
        }
    }

    /// Eigenvalues of `F`: all `p` of them for the explicit form, the `N`
    /// eigenvalues of `factor factor^T` (which carry every nonzero one) otherwise.
    pub fn eigensystem(&self) -> Result<EigenSystem> {
        match &self.representation {
            FisherRepr::Explicit(f) => eigh(f),
            FisherRepr::Factor(j) => {
                let mut es = eigh(&j.row_gram())?;
                es.scale = EigenScale::GramOverN;
                es.source = "fisher factor".into();
                Ok(es)
            }
        }
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eigensystem()?.eigenvalues)
    }
}

/// Empirical Fisher matrix `(1/N) sum_i grad f(x_i) grad f(x_i)^T` at `params0`.
/// The `p x p` matrix is formed only when `p <= 2000` and `explicit` is requested.
pub fn fim(net: &Network, params0: &ParamVector, xs: &[Vec<f64>], explicit: bool) -> Result<FisherMatrix> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("Fisher matrix needs a nonempty sample".into()));
    }
    let p = params0.len();
    if explicit && p > EXPLICIT_FISHER_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "explicit Fisher matrix requested for p = {p} > {EXPLICIT_FISHER_LIMIT}"
        )));
    }
    let mut j = net.jacobian(params0, xs)?;
    j.scale(1.0 / (xs.len() as f64).sqrt());
    let representation = if explicit {
        FisherRepr::Explicit(j.transpose().matmul(&j))
    } else {
        FisherRepr::Factor(j)
    };
    Ok(FisherMatrix {
        representation,
        measure: MeasureTag::Empirical,
        samples: xs.len(),
        params: p,
    })
}

/// Eigenvalues of `G / N` for the same sample, through factored gradients.
pub fn gram_over_n_eigenvalues(net: &Network, params0: &ParamVector, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let g = FactorCache::new(net, params0, xs)?.gram();
    Ok(crate::spectral::eigh_gram_over_n(&g, "gram")?.eigenvalues)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizedBound {
    pub radius: f64,
    pub eps: f64,
    pub gamma: f64,
    pub lower: f64,
    pub upper: f64,
    /// Count of scaled axes above `1 - gamma`.
    pub mu_gamma: usize,
    /// Count of `sqrt(lambda_i) > 3 eps / (4 R)`.
    pub effective_rank: usize,
}

/// Log-covering bounds for the linearized model with Fisher eigenvalues
/// `lambda_i`, parameter radius `R` and function-space scale `eps`, using the
/// scaled axes `(R/eps) sqrt(lambda_i)`.
pub fn linearized_covering_bound(eigenvalues: &[f64], radius: f64, eps: f64, gamma: f64) -> Result<LinearizedBound> {
    check_gamma(gamma)?;
    if !(radius >= 1.0) {
        return Err(Error::InvalidArgument(format!("radius must be at least 1, got {radius}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let singular: Vec<f64> = eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    let axes: Vec<f64> = singular.iter().map(|s| radius / eps * s).collect();
    let lower: f64 = axes.iter().filter(|&&a| a > 1.0).map(|a| a.ln()).sum();
    let mu_gamma = axes.iter().filter(|&&a| a > 1.0 - gamma).count();
    Ok(LinearizedBound {
        radius,
        eps,
        gamma,
        lower,
        upper: lower + mu_gamma as f64 * (3.0 / gamma).ln(),
        mu_gamma,
        effective_rank: effective_rank(&singular, 3.0 * eps / (4.0 * radius)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverEquivalenceReport {
    pub scaled_axes: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub samples: usize,
    pub violations: usize,
    pub max_distance: f64,
}

/// Builds an `eps`-cover of the ball `B_R` in the seminorm `|v|_M = sqrt(v^T M v)`
/// from a unit cover of the ellipsoid with axes `(R/eps) sqrt(lambda_i(M))`, and
/// audits it on `samples` uniform points of `B_R`.
///
/// Centers map back through the pseudo-inverse square root of `M`; directions in
/// the null space of `M` are free and left at zero.
pub fn cover_equivalence_check(
    m: &Matrix,
    radius: f64,
    eps: f64,
    gamma: f64,
    samples: usize,
    rng: &mut Rng,
) -> Result<CoverEquivalenceReport> {
    let p = m.rows();
    if p == 0 || p > 3 || !m.is_square() {
        return Err(Error::InvalidArgument(format!(
            "cover equivalence is checked for square matrices of size 1..=3, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let es = eigh(m)?;
    let top = es.eigenvalues[0].abs();
    let sigma: Vec<f64> = es
        .eigenvalues
        .iter()
        .map(|&l| if l > 1e-12 * top { l.sqrt() } else { 0.0 })
        .collect();
    let axes: Vec<f64> = sigma.iter().map(|s| radius / eps * s).collect();
    let cover = construct_cover(&Ellipsoid::new(axes.clone())?, gamma, DEFAULT_REJECTION_LIMIT, rng)?;
    let v = &es.eigenvectors;
    let centers: Vec<Vec<f64>> = cover
        .centers
        .iter()
        .map(|c| {
            let coords: Vec<f64> = c
                .iter()
                .zip(&sigma)
                .map(|(ci, s)| if *s > 0.0 { eps * ci / s } else { 0.0 })
                .collect();
            v.matvec(&coords)
        })
        .collect();
    let seminorm = |d: &[f64]| dot(d, &m.matvec(d)).max(0.0).sqrt();
    let mut violations = 0;
    let mut max_distance: f64 = 0.0;
    for _ in 0..samples {
        let theta: Vec<f64> = rng.unit_ball(p).into_iter().map(|x| x * radius).collect();
        let best = centers
            .iter()
            .map(|c| {
                let d: Vec<f64> = theta.iter().zip(c).map(|(a, b)| a - b).collect();
                seminorm(&d)
            })
            .fold(f64::INFINITY, f64::min);
        max_distance = max_distance.max(best);
        if best > eps * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    Ok(CoverEquivalenceReport {
        scaled_axes: axes,
        centers,
        samples,
        violations,
        max_distance,
    })
}
