//! Symmetric eigendecomposition, Nystrom eigenfunctions and spectrum reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Which matrix the eigenvalues belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenScale {
    /// Eigenvalues of the matrix as given.
    Raw,
    /// Eigenvalues of a Gram matrix divided by its size (the empirical operator).
    GramOverN,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: Matrix,
    pub scale: EigenScale,
    pub source: String,
    pub sweeps: usize,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.column(i)
    }

    /// `V diag(f(lambda)) V^T r`.
    pub fn apply_function(&self, r: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let coeffs = self.eigenvectors.tr_matvec(r);
        let scaled: Vec<f64> = coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, &l)| c * f(l))
            .collect();
        self.eigenvectors.matvec(&scaled)
    }

    /// `max |A - V Lambda V^T|`.
    pub fn reconstruction_error(&self, a: &Matrix) -> f64 {
        let n = self.len();
        let v = &self.eigenvectors;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += v[(i, k)] * self.eigenvalues[k] * v[(j, k)];
                }
                worst = worst.max((a[(i, j)] - s).abs());
            }
        }
        worst
    }

    /// `max |V^T V - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let vtv = self.eigenvectors.transpose().matmul(&self.eigenvectors);
        vtv.sub(&Matrix::identity(self.len())).max_abs()
    }
}

const MAX_SWEEPS: usize = 100;

/// Threshold below which an eigenvector component counts as zero for the sign rule.
pub const SIGN_THRESHOLD: f64 = 1e-10;

/// Cyclic Jacobi eigensolver.
///
/// Requires symmetry within `1e-10 * max|a_ij|` and iterates until the
/// off-diagonal Frobenius mass falls below `1e-12 |A|_F`. Eigenvalues are sorted
/// nonincreasing (stable, so equal values keep their original order) and each
/// eigenvector is signed so its first component with magnitude above
/// [`SIGN_THRESHOLD`] is positive.
pub fn eigh(a: &Matrix) -> Result<EigenSystem> {
    eigh_tagged(a, EigenScale::Raw, "matrix")
}

pub fn eigh_tagged(a: &Matrix, scale: EigenScale, source: &str) -> Result<EigenSystem> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            what: "eigh input (columns)",
            expected: a.rows(),
            got: a.cols(),
        });
    }
    let n = a.rows();
    if let Some(pos) = a.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eigh input has a non-finite entry at ({}, {})",
            pos / n.max(1),
            pos % n.max(1)
        )));
    }
    let (gap, row, col) = a.asymmetry();
    if gap > 1e-10 * a.max_abs() {
        return Err(Error::NotSymmetric { row, col, gap });
    }
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    let target = 1e-12 * a.frobenius_norm();
    // V is stored transposed so that rotations touch contiguous rows.
    let mut vt = Matrix::identity(n);
    let mut sweeps = 0;
    let mut off = off_diagonal_norm(&m);
    while off >= target && off > 0.0 {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_diagonal: off,
                target,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate_columns(&mut m, p, q, c, s);
                rotate_rows(&mut m, p, q, c, s);
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        off = off_diagonal_norm(&m);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = vt.row(src);
        let sign = v
            .iter()
            .find(|x| x.abs() > SIGN_THRESHOLD)
            .map_or(1.0, |x| x.signum());
        for r in 0..n {
            vectors[(r, col)] = sign * v[r];
        }
    }
    Ok(EigenSystem {
        eigenvalues,
        eigenvectors: vectors,
        scale,
        source: source.to_string(),
        sweeps,
    })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (a, b) in rp.iter_mut().zip(rq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.rows() {
        let x = m[(k, p)];
        let y = m[(k, q)];
        m[(k, p)] = c * x - s * y;
        m[(k, q)] = s * x + c * y;
    }
}

/// Eigen-decomposition of `G / n`.
pub fn eigh_gram_over_n(gram: &Matrix, source: &str) -> Result<EigenSystem> {
    let n = gram.rows() as f64;
    eigh_tagged(&gram.scaled(1.0 / n), EigenScale::GramOverN, source)
}

/// Empirical eigenfunction of the kernel operator on a training sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenFunction {
    pub index: usize,
    /// Unit-norm eigenvector of `G / n` over the training points.
    pub coefficients: Vec<f64>,
    /// Eigenvalue of `G / n`.
    pub eigenvalue: f64,
}

impl EigenFunction {
    /// Nystrom extension `(1/(n s)) sum_j K(x, x_j) sqrt(n) u_j` from the kernel row
    /// `K(x, x_j)` over the training points.
    pub fn eval(&self, kernel_row: &[f64]) -> f64 {
        let n = self.coefficients.len() as f64;
        dot(kernel_row, &self.coefficients) * n.sqrt() / (n * self.eigenvalue)
    }

    /// Values on the training points, `sqrt(n) u`.
    pub fn on_training_set(&self) -> Vec<f64> {
        let rn = (self.coefficients.len() as f64).sqrt();
        self.coefficients.iter().map(|u| u * rn).collect()
    }
}

/// The top eigenfunctions of one training Gram matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NystromBasis {
    pub functions: Vec<EigenFunction>,
    pub top_eigenvalue: f64,
    pub n_train: usize,
}

/// Relative tolerance below which an eigenvalue cannot be extended off-sample.
pub const EXTENSION_TOLERANCE: f64 = 1e-10;

impl NystromBasis {
    /// Top `k` eigenfunctions of `G / n` from an existing decomposition.
    pub fn from_eigensystem(es: &EigenSystem, k: usize) -> Result<Self> {
        if es.scale != EigenScale::GramOverN {
            return Err(Error::InvalidArgument(
                "Nystrom extension needs eigenvalues of G/n".into(),
            ));
        }
        if k > es.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {k} eigenfunctions from a system of size {}",
                es.len()
            )));
        }
        let top = es.eigenvalues.first().copied().unwrap_or(0.0);
        let tolerance = EXTENSION_TOLERANCE * top;
        let mut functions = Vec::with_capacity(k);
        for i in 0..k {
            let value = es.eigenvalues[i];
            if !(value > tolerance) {
                return Err(Error::IllPosedExtension {
                    index: i,
                    value,
                    tolerance,
                });
            }
            functions.push(EigenFunction {
                index: i,
                coefficients: es.vector(i),
                eigenvalue: value,
            });
        }
        Ok(Self {
            functions,
            top_eigenvalue: top,
            n_train: es.len(),
        })
    }

    pub fn from_gram(gram: &Matrix, k: usize) -> Result<Self> {
        Self::from_eigensystem(&eigh_gram_over_n(gram, "gram")?, k)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.functions.iter().map(|f| f.eigenvalue).collect()
    }

    /// All eigenfunctions at one point given its kernel row.
    pub fn eval_row(&self, kernel_row: &[f64]) -> Vec<f64> {
        self.functions.iter().map(|f| f.eval(kernel_row)).collect()
    }

    /// Evaluate on a sample from the cross-kernel matrix `C[a][j] = K(x'_a, x_j)`.
    /// Returns one column per eigenfunction, one row per sample point.
    pub fn eval_matrix(&self, cross: &Matrix) -> Result<Matrix> {
        if cross.cols() != self.n_train {
            return Err(Error::DimensionMismatch {
                what: "cross-kernel columns",
                expected: self.n_train,
                got: cross.cols(),
            });
        }
        let mut out = Matrix::zeros(cross.rows(), self.len());
        for a in 0..cross.rows() {
            let row = cross.row(a);
            for (i, f) in self.functions.iter().enumerate() {
                out[(a, i)] = f.eval(row);
            }
        }
        Ok(out)
    }
}

/// Single Nystrom evaluation at a point with kernel row `K(x, x_j)`.
pub fn nystrom_eval(phi: &EigenFunction, kernel_row: &[f64]) -> f64 {
    phi.eval(kernel_row)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub k: usize,
    pub lambda: f64,
    pub lambda_normalized: f64,
}

/// The first `k_max` eigenvalues divided by the top one. `k_max = None` reports
/// the first half of the spectrum.
pub fn spectrum_report(es: &EigenSystem, k_max: Option<usize>) -> Result<Vec<SpectrumPoint>> {
    let n = es.len();
    let k_max = k_max.unwrap_or(n / 2).max(usize::from(n > 0));
    if k_max > n {
        return Err(Error::InvalidArgument(format!(
            "k_max = {k_max} exceeds the spectrum size {n}"
        )));
    }
    let top = es.eigenvalues.first().copied().unwrap_or(0.0);
    Ok(es.eigenvalues[..k_max]
        .iter()
        .enumerate()
        .map(|(i, &l)| SpectrumPoint {
            k: i + 1,
            lambda: l,
            lambda_normalized: if i == 0 { 1.0 } else { l / top },
        })
        .collect())
}

pub fn spectrum_csv(points: &[SpectrumPoint]) -> String {
    let mut s = String::from("k,lambda,lambda_normalized\n");
    for p in points {
        writeln!(s, "{},{:e},{:e}", p.k, p.lambda, p.lambda_normalized).expect("string write");
    }
    s
}

/// A polyline plot with a log-scaled y axis.
pub struct LogPlot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    /// Each series: name and points. Non-positive y values are dropped.
    pub series: Vec<(String, Vec<(f64, f64)>)>,
    /// Seconds since the Unix epoch to embed as metadata, if any.
    pub timestamp: Option<u64>,
    /// Free text placed in a `<desc>` element.
    pub description: Option<&'a str>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

impl LogPlot<'_> {
    pub fn to_svg(&self) -> String {
        let (w, h) = (640.0, 420.0);
        let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|(_, p)| p.iter().copied())
            .filter(|(_, y)| *y > 0.0 && y.is_finite())
            .collect();
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y.log10());
            y1 = y1.max(y.log10());
        }
        if pts.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 0.0);
        }
        let y0 = y0.floor();
        let y1 = y1.ceil().max(y0 + 1.0);
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
        let py = |ly: f64| top + (y1 - ly) / (y1 - y0) * (h - top - bottom);
        let mut s = String::new();
        writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        )
        .unwrap();
        if let Some(ts) = self.timestamp {
            writeln!(s, "<metadata>generated-unix-time: {ts}</metadata>").unwrap();
        }
        if let Some(d) = self.description {
            writeln!(s, "<desc>{}</desc>", escape(d)).unwrap();
        }
        writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="22" font-size="15" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            w / 2.0,
            escape(self.title)
        )
        .unwrap();
        writeln!(
            s,
            r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            h - bottom,
            w - right,
            h - bottom
        )
        .unwrap();
        writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, h - bottom).unwrap();
        let mut decade = y0;
        while decade <= y1 + 1e-9 {
            let y = py(decade);
            writeln!(
                s,
                r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" font-size="11" text-anchor="end" font-family="sans-serif">1e{}</text>"##,
                w - right,
                left - 6.0,
                y + 4.0,
                decade as i64
            )
            .unwrap();
            decade += 1.0;
        }
        for t in 0..=4 {
            let x = x0 + (x1 - x0) * t as f64 / 4.0;
            writeln!(
                s,
                r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{}</text>"#,
                px(x),
                h - bottom + 16.0,
                format_tick(x)
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif">{}</text>"#,
            (left + w - right) / 2.0,
            h - 12.0,
            escape(self.x_label)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="16" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 16 {})">{}</text>"#,
            (top + h - bottom) / 2.0,
            (top + h - bottom) / 2.0,
            escape(self.y_label)
        )
        .unwrap();
        for (idx, (name, points)) in self.series.iter().enumerate() {
            let color = PALETTE[idx % PALETTE.len()];
            let coords: Vec<String> = points
                .iter()
                .filter(|(_, y)| *y > 0.0 && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y.log10())))
                .collect();
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
                coords.join(" "),
                escape(name)
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" fill="{color}" text-anchor="end" font-family="sans-serif">{}</text>"#,
                w - right - 4.0,
                top + 14.0 * (idx as f64 + 1.0),
                escape(name)
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}

fn format_tick(x: f64) -> String {
    if x.abs() >= 1e4 || (x != 0.0 && x.abs() < 1e-2) {
        format!("{x:.1e}")
    } else {
        let s = format!("{x:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Log-scale line plot of a normalized spectrum.
pub fn spectrum_svg(points: &[SpectrumPoint], title: &str, timestamp: Option<u64>) -> String {
    LogPlot {
        title,
        x_label: "k",
        y_label: "lambda_k / lambda_1",
        series: vec![(
            "normalized eigenvalue".into(),
            points.iter().map(|p| (p.k as f64, p.lambda_normalized)).collect(),
        )],
        timestamp,
        description: None,
    }
    .to_svg()
}
