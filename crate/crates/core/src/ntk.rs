//! Empirical and Monte-Carlo neural tangent kernels.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::net::{GradFactors, Network, ParamVector};
use crate::rng::Rng;

/// Which kernel a Gram matrix was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelTag {
    /// `K^theta` at the named parameter snapshot.
    Empirical { params: String },
    /// Average of `K^theta` over `n_init` fresh initializations.
    MonteCarloLimit { n_init: usize },
}

impl KernelTag {
    pub fn label(&self) -> String {
        match self {
            KernelTag::Empirical { params } => format!("empirical:{params}"),
            KernelTag::MonteCarloLimit { n_init } => format!("mc-limit:{n_init}"),
        }
    }

    pub fn parse(label: &str) -> Result<Self> {
        if let Some(p) = label.strip_prefix("empirical:") {
            return Ok(KernelTag::Empirical { params: p.into() });
        }
        if let Some(n) = label.strip_prefix("mc-limit:") {
            let n_init = n
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad init count in kernel tag {label:?}")))?;
            return Ok(KernelTag::MonteCarloLimit { n_init });
        }
        Err(Error::InvalidArgument(format!("unknown kernel tag {label:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub entries: Matrix,
    pub point_ids: Vec<usize>,
    pub kernel_tag: KernelTag,
}

pub const GRAM_MAGIC: &[u8; 8] = b"NTKGRAM\0";

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    /// Binary layout, all integers and floats little-endian:
    ///
    /// ```text
    /// magic  8 bytes  "NTKGRAM\0"
    /// n      u64
    /// tag    u64 byte length, then UTF-8 label
    /// body   n(n+1)/2 f64, upper triangle in row-major order
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.n();
        let tag = self.kernel_tag.label();
        let mut out = Vec::with_capacity(24 + tag.len() + 4 * n * (n + 1));
        out.extend_from_slice(GRAM_MAGIC);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(tag.len() as u64).to_le_bytes());
        out.extend_from_slice(tag.as_bytes());
        for i in 0..n {
            for j in i..n {
                out.extend_from_slice(&self.entries[(i, j)].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("gram file: {msg}"));
        if bytes.len() < 24 || &bytes[..8] != GRAM_MAGIC {
            return Err(bad("missing magic".into()));
        }
        let word = |at: usize| -> Result<u64> {
            bytes
                .get(at..at + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| bad(format!("truncated at byte {at}")))
        };
        let n = word(8)? as usize;
        let tag_len = word(16)? as usize;
        let tag_bytes = bytes
            .get(24..24 + tag_len)
            .ok_or_else(|| bad("truncated tag".into()))?;
        let tag = std::str::from_utf8(tag_bytes).map_err(|_| bad("tag is not UTF-8".into()))?;
        let body = 24 + tag_len;
        let expected = body + 8 * n * (n + 1) / 2;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let mut entries = Matrix::zeros(n, n);
        let mut at = body;
        for i in 0..n {
            for j in i..n {
                let v = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
                entries[(i, j)] = v;
                entries[(j, i)] = v;
                at += 8;
            }
        }
        Ok(Self {
            entries,
            point_ids: (0..n).collect(),
            kernel_tag: KernelTag::parse(tag)?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = self.entries.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(s, "{}", row.join(",")).expect("string write");
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_init: usize,
}

impl KernelEstimate {
    /// Sample mean and standard error of the mean.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            value: mean,
            stderr,
            n_init: n,
        }
    }
}

/// `<grad f(x), grad f(x')>` from explicit gradients.
pub fn ntk_value(net: &Network, params: &ParamVector, x: &[f64], x2: &[f64]) -> Result<f64> {
    let g1 = net.grad(params, x)?;
    let g2 = net.grad(params, x2)?;
    Ok(dot(&g1, &g2))
}

/// Factored gradients of a fixed sample, for repeated kernel rows.
pub struct FactorCache<'a> {
    net: &'a Network,
    params: &'a ParamVector,
    factors: Vec<GradFactors>,
}

impl<'a> FactorCache<'a> {
    pub fn new(net: &'a Network, params: &'a ParamVector, xs: &[Vec<f64>]) -> Result<Self> {
        let factors = xs
            .iter()
            .map(|x| net.grad_factors(params, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { net, params, factors })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// `K(x, x_j)` for every cached point.
    pub fn row(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.net.grad_factors(self.params, x)?;
        Ok(self.factors.iter().map(|f| g.inner(f)).collect())
    }

    pub fn gram(&self) -> Matrix {
        let n = self.factors.len();
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.factors[i].inner(&self.factors[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// `C[a][j] = K(y_a, x_j)`.
    pub fn cross(&self, ys: &[Vec<f64>]) -> Result<Matrix> {
        let mut c = Matrix::zeros(ys.len(), self.factors.len());
        for (a, y) in ys.iter().enumerate() {
            c.row_mut(a).copy_from_slice(&self.row(y)?);
        }
        Ok(c)
    }

    pub fn gradient_norms(&self) -> Vec<f64> {
        self.factors.iter().map(|f| f.sq_norm().sqrt()).collect()
    }
}

/// Gram matrix of `K^theta` on `xs`: the upper triangle is computed and mirrored.
pub fn gram(net: &Network, params: &ParamVector, xs: &[Vec<f64>], params_label: &str) -> Result<GramMatrix> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("gram needs a nonempty sample".into()));
    }
    let cache = FactorCache::new(net, params, xs)?;
    Ok(GramMatrix {
        entries: cache.gram(),
        point_ids: (0..xs.len()).collect(),
        kernel_tag: KernelTag::Empirical {
            params: params_label.into(),
        },
    })
}

/// `C[a][j] = K^theta(ys_a, xs_j)`.
pub fn cross_gram(net: &Network, params: &ParamVector, ys: &[Vec<f64>], xs: &[Vec<f64>]) -> Result<Matrix> {
    FactorCache::new(net, params, xs)?.cross(ys)
}

fn check_n_init(n_init: usize) -> Result<()> {
    if n_init < 2 {
        return Err(Error::InvalidArgument(format!(
            "Monte-Carlo estimates need n_init >= 2, got {n_init}"
        )));
    }
    Ok(())
}

/// Monte-Carlo estimate of the infinite-width kernel at one pair of inputs.
///
/// Replica `r` initializes from `rng.child(r)`, so the estimate depends only on
/// the root seed.
pub fn analytic_ntk_mc(
    net: &Network,
    x: &[f64],
    x2: &[f64],
    n_init: usize,
    rng: &Rng,
) -> Result<KernelEstimate> {
    check_n_init(n_init)?;
    let mut samples = Vec::with_capacity(n_init);
    for r in 0..n_init {
        let params = net.init_params(&mut rng.child(r as u64));
        let a = net.grad_factors(&params, x)?;
        let b = net.grad_factors(&params, x2)?;
        samples.push(a.inner(&b));
    }
    Ok(KernelEstimate::from_samples(&samples))
}

/// Kernel averaged over a fixed set of initializations (common random numbers
/// across all input pairs).
pub struct MonteCarloKernel<'a> {
    net: &'a Network,
    inits: Vec<ParamVector>,
}

impl<'a> MonteCarloKernel<'a> {
    pub fn new(net: &'a Network, n_init: usize, rng: &Rng) -> Result<Self> {
        check_n_init(n_init)?;
        let inits = (0..n_init)
            .map(|r| net.init_params(&mut rng.child(r as u64)))
            .collect();
        Ok(Self { net, inits })
    }

    pub fn n_init(&self) -> usize {
        self.inits.len()
    }

    pub fn value(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for p in &self.inits {
            s += self.net.grad_factors(p, x)?.inner(&self.net.grad_factors(p, x2)?);
        }
        Ok(s / self.inits.len() as f64)
    }

    fn caches(&self, xs: &[Vec<f64>]) -> Result<Vec<FactorCache<'_>>> {
        self.inits
            .iter()
            .map(|p| FactorCache::new(self.net, p, xs))
            .collect()
    }

    pub fn gram(&self, xs: &[Vec<f64>]) -> Result<GramMatrix> {
        let n = xs.len();
        let mut acc = Matrix::zeros(n, n);
        for cache in self.caches(xs)? {
            let g = cache.gram();
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        acc.scale(1.0 / self.inits.len() as f64);
        Ok(GramMatrix {
            entries: acc,
            point_ids: (0..n).collect(),
            kernel_tag: KernelTag::MonteCarloLimit {
                n_init: self.inits.len(),
            },
        })
    }

    /// `C[a][j] = K(ys_a, xs_j)` averaged over the initializations.
    pub fn cross(&self, ys: &[Vec<f64>], xs: &[Vec<f64>]) -> Result<Matrix> {
        let mut acc = Matrix::zeros(ys.len(), xs.len());
        for cache in self.caches(xs)? {
            let c = cache.cross(ys)?;
            for (a, b) in acc.as_mut_slice().iter_mut().zip(c.as_slice()) {
                *a += b;
            }
        }
        acc.scale(1.0 / self.inits.len() as f64);
        Ok(acc)
    }
}

/// Monte-Carlo estimate of `|k1 - k2|^2` in `L^2(rho x rho)` from `n_pairs`
/// independent pairs drawn by `sampler`.
pub fn kernel_l2_distance(
    k1: impl Fn(&[f64], &[f64]) -> Result<f64>,
    k2: impl Fn(&[f64], &[f64]) -> Result<f64>,
    mut sampler: impl FnMut(&mut Rng) -> Vec<f64>,
    n_pairs: usize,
    rng: &mut Rng,
) -> Result<KernelEstimate> {
    if n_pairs < 2 {
        return Err(Error::InvalidArgument(format!(
            "kernel distance needs at least 2 pairs, got {n_pairs}"
        )));
    }
    let mut samples = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let x = sampler(rng);
        let y = sampler(rng);
        let d = k1(&x, &y)? - k2(&x, &y)?;
        samples.push(d * d);
    }
    Ok(KernelEstimate::from_samples(&samples))
}

/// Measured form of the kernel-deviation bound
/// `max |K^theta - K^theta0| <= 2 B H_max R` on a probe set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDeviationReport {
    pub max_deviation: f64,
    pub gradient_bound: f64,
    pub hessian_bound: f64,
    pub radius: f64,
    pub bound: f64,
    pub holds: bool,
    /// Points of the segment theta0 -> theta where B and H_max were measured.
    pub segment_points: usize,
}

/// Compares kernels at `theta0` and `theta` over all probe pairs. `B` and `H_max`
/// are maxima over the probes and over `segment_points` evenly spaced points of
/// the segment between the two parameter vectors.
pub fn kernel_deviation_check(
    net: &Network,
    theta0: &ParamVector,
    theta: &ParamVector,
    probes: &[Vec<f64>],
    segment_points: usize,
    hessian_iters: usize,
    rng: &mut Rng,
) -> Result<KernelDeviationReport> {
    let k0 = FactorCache::new(net, theta0, probes)?.gram();
    let k1 = FactorCache::new(net, theta, probes)?.gram();
    let max_deviation = k1.sub(&k0).max_abs();
    let delta: Vec<f64> = theta.data.iter().zip(&theta0.data).map(|(a, b)| a - b).collect();
    let radius = norm(&delta);
    let mut b: f64 = 0.0;
    let mut h: f64 = 0.0;
    let steps = segment_points.max(2);
    for s in 0..steps {
        let frac = s as f64 / (steps - 1) as f64;
        let point = theta0.with_data(
            theta0
                .data
                .iter()
                .zip(&delta)
                .map(|(a, d)| a + frac * d)
                .collect(),
        );
        for x in probes {
            b = b.max(net.gradient_norm(&point, x)?);
            h = h.max(net.hessian_opnorm_estimate(&point, x, hessian_iters, rng)?.value);
        }
    }
    let bound = 2.0 * b * h * radius;
    Ok(KernelDeviationReport {
        max_deviation,
        gradient_bound: b,
        hessian_bound: h,
        radius,
        bound,
        holds: max_deviation <= bound,
        segment_points: steps,
    })
}
