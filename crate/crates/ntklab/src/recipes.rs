//! The five experiment recipes.
//!
//! Every recipe derives all of its randomness from the config seed through
//! fixed child streams, writes its artifacts into one directory and returns a
//! typed summary. Reproducible runs (no SVG timestamps) are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ntklab_core::dynamics::{
    damped_deviation_report, damped_deviation_report_for, decay_rate_fit, test_error_report, train, DeviationReport, KernelDynamics,
    ProjectionBasis, Schedule, TestErrorReport,
};
use ntklab_core::entropy::{
    cover_report, effective_rank, effective_rank_csv, effective_rank_sweep, fim, linearized_covering_bound,
    CoverReport, Ellipsoid, FisherRepr, LinearizedBound,
};
use ntklab_core::linalg::{dot_n, linear_fit, sub};
use ntklab_core::ntk::{kernel_l2_distance, FactorCache, MonteCarloKernel};
use ntklab_core::spectral::{eigh_gram_over_n, spectrum_csv, spectrum_report, LogPlot, NystromBasis};
use ntklab_core::{rng, Network, NetworkSpec, ParamVector, Rng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{
    ConfigError, CoverAuditConfig, DataSpec, EffectiveRankConfig, ExperimentConfig, HessianProbeConfig, Recipe,
    SpectralBiasConfig, SpectrumConfig,
};
use crate::data::{load_idx, sha256_hex, synth_dataset, Dataset, IdxError, Provenance, SynthError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const STREAM_INIT: u64 = 2;
const STREAM_LIMIT: u64 = 3;
const STREAM_DISTANCE: u64 = 4;
const STREAM_PROBES: u64 = 5;
const STREAM_COVER: u64 = 6;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid experiment: {0}")]
    Validation(String),
    #[error("dataset: {0}")]
    Idx(#[from] IdxError),
    #[error("synthetic dataset: {0}")]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Compute(#[from] ntklab_core::Error),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(ConfigError::Io { .. }) => "config_io",
            RunError::Config(ConfigError::Invalid { .. }) => "config_invalid",
            RunError::Validation(_) => "validation",
            RunError::Idx(_) => "dataset",
            RunError::Synth(_) => "dataset",
            RunError::Compute(ntklab_core::Error::InvalidSpec(_)) => "validation",
            RunError::Compute(_) => "numerical",
            RunError::Io { .. } => "io",
        }
    }

    /// 2 for anything wrong with the request itself, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Validation(_) => 2,
            RunError::Compute(ntklab_core::Error::InvalidSpec(_)) => 2,
            _ => 1,
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            RunError::Config(c) => c.path(),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({"error": {"kind": self.kind(), "message": self.to_string(), "path": self.path()}})
    }
}

type Result<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    /// Absent for files that embed a wall-clock timestamp.
    pub sha256: Option<String>,
}

/// Output directory, provenance block and the list of files written so far.
pub struct RunContext {
    recipe: Recipe,
    seed: u64,
    out_dir: PathBuf,
    reproducible: bool,
    config: Value,
    config_sha256: String,
    artifacts: Vec<ArtifactRecord>,
}

impl RunContext {
    pub fn new(config: &ExperimentConfig, out_dir: &Path, reproducible: bool) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| RunError::Io {
            path: out_dir.display().to_string(),
            message: e.to_string(),
        })?;
        let config_json = config.to_json();
        let canonical = serde_json::to_string(&config_json).expect("json value serializes");
        Ok(Self {
            recipe: config.recipe(),
            seed: config.seed(),
            out_dir: out_dir.to_path_buf(),
            reproducible,
            config: config_json,
            config_sha256: sha256_hex(canonical.as_bytes()),
            artifacts: Vec::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn provenance(&self) -> Value {
        json!({
            "tool": "ntklab",
            "version": VERSION,
            "recipe": self.recipe.name(),
            "seed": self.seed,
            "rng": rng::ALGORITHM,
            "config_sha256": self.config_sha256,
            "config": self.config,
        })
    }

    fn write(&mut self, name: &str, body: &[u8], hashed: bool) -> Result<()> {
        let path = self.out_dir.join(name);
        fs::write(&path, body).map_err(|e| RunError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.artifacts.push(ArtifactRecord {
            name: name.to_string(),
            sha256: hashed.then(|| sha256_hex(body)),
        });
        Ok(())
    }

    /// Two `#` comment lines: version, recipe, seed and config hash, then the
    /// resolved config as compact JSON.
    fn header_lines(&self) -> String {
        format!(
            "# ntklab {VERSION} recipe={} seed={} config_sha256={}\n# config={}",
            self.recipe.name(),
            self.seed,
            self.config_sha256,
            serde_json::to_string(&self.config).expect("json value serializes")
        )
    }

    /// CSV body prefixed with the provenance comment lines.
    pub fn csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("{}\n{body}", self.header_lines());
        self.write(name, text.as_bytes(), true)
    }

    /// `{"provenance": ..., "result": value}`, pretty-printed.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let doc = json!({"provenance": self.provenance(), "result": value});
        let mut text = serde_json::to_string_pretty(&doc).expect("json value serializes");
        text.push('\n');
        self.write(name, text.as_bytes(), true)
    }

    pub fn svg(&mut self, name: &str, plot: LogPlot<'_>) -> Result<()> {
        let header = self.header_lines();
        let desc: Vec<&str> = header.lines().map(|l| l.trim_start_matches("# ")).collect();
        let desc = desc.join("\n");
        let timestamp = if self.reproducible {
            None
        } else {
            SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
        };
        let plot = LogPlot {
            description: Some(&desc),
            timestamp,
            ..plot
        };
        let text = plot.to_svg();
        let reproducible = self.reproducible;
        self.write(name, text.as_bytes(), reproducible)
    }

    /// Writes `run.json` listing every artifact.
    pub fn finish(mut self) -> Result<Vec<ArtifactRecord>> {
        let doc = json!({
            "provenance": self.provenance(),
            "reproducible": self.reproducible,
            "artifacts": self.artifacts,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("json value serializes");
        text.push('\n');
        self.write("run.json", text.as_bytes(), false)?;
        Ok(self.artifacts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub n: usize,
    pub params: usize,
    pub lambda_1: f64,
    /// `lambda_{n/4} / lambda_1` (1-based index `n/4`).
    pub quarter_ratio: f64,
    pub quarter_index: usize,
    pub reported: usize,
    pub nonincreasing: bool,
    pub eigen_sweeps: usize,
    pub dataset: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub index: usize,
    /// Eigenvalue of `G_0 / n`.
    pub sigma: f64,
    pub rate: f64,
    pub rate_over_sigma: f64,
    pub r_squared: f64,
    pub points: usize,
    pub fit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    /// Squared `L^2` distance between the kernel at initialization and the
    /// Monte-Carlo limit, corrected for the limit's own sampling variance.
    pub value: f64,
    pub raw: f64,
    pub stderr: f64,
    pub pairs: usize,
    pub limit_inits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBiasSummary {
    pub n: usize,
    pub holdout: usize,
    pub params: usize,
    pub t_max: f64,
    pub eta0: f64,
    pub eta_final: f64,
    pub steps: usize,
    pub rejected_steps: usize,
    pub loss_monotone: bool,
    pub monitors_hold: bool,
    pub decay: Vec<DecayRow>,
    /// `|c_1(T)| / |c_1(0)|` for the top tracked direction.
    pub top_decay_measured: f64,
    /// Largest `|rate / sigma - 1|` over the fitted rows.
    pub worst_rate_error: f64,
    /// Pairs `i < j` with `sigma_i >= 2 sigma_j` whose fitted rates are out of order.
    pub ordering_violations: Vec<(usize, usize)>,
    pub kernel_distance: DistanceEstimate,
    /// Slack of the training-sample check; the held-out check adds `eps_sampling`.
    pub eps_slack: f64,
    /// Largest squared gap between the training residual and the flow of `G_0 / n`.
    pub eps_integration: f64,
    /// Largest squared finite-sample operator error of the limit kernel.
    pub eps_sampling: f64,
    /// Violations with the limit operator on the training inputs.
    pub train_deviation_violations: usize,
    /// Violations with the limit operator on the held-out inputs.
    pub holdout_deviation_violations: usize,
    /// Largest `lhs / rhs` over both forms.
    pub worst_deviation_ratio: f64,
    pub deviation_rows: usize,
    pub test_error: TestErrorReport,
    pub dataset: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveRankSummary {
    pub n: usize,
    pub params: usize,
    pub explicit: bool,
    pub trace: f64,
    pub top_singular_value: f64,
    /// Effective rank at `eps = 0.01 * s_1` divided by the parameter count.
    pub skew_ratio: f64,
    pub sweep: Vec<(f64, usize)>,
    pub bounds: Vec<LinearizedBound>,
    pub dataset: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    pub width: usize,
    pub params: usize,
    pub max_opnorm: f64,
    pub mean_opnorm: f64,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianProbeSummary {
    pub rows: Vec<WidthRow>,
    /// Least-squares slope of `log max_opnorm` against `log width`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverAuditSummary {
    pub covers: usize,
    pub sandwich_failures: usize,
    pub audit_violations: usize,
    pub audit_samples: usize,
    pub reports: Vec<CoverReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "kebab-case")]
pub enum Summary {
    Spectrum(SpectrumSummary),
    SpectralBias(Box<SpectralBiasSummary>),
    EffectiveRank(EffectiveRankSummary),
    HessianProbe(HessianProbeSummary),
    CoverAudit(CoverAuditSummary),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub summary: Summary,
    pub artifacts: Vec<ArtifactRecord>,
}

/// Runs `config` and writes its artifacts into `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, reproducible: bool) -> Result<RunOutcome> {
    let mut ctx = RunContext::new(config, out_dir, reproducible)?;
    let summary = match config {
        ExperimentConfig::Spectrum(c) => Summary::Spectrum(spectrum(c, &mut ctx)?),
        ExperimentConfig::SpectralBias(c) => Summary::SpectralBias(Box::new(spectral_bias(c, &mut ctx)?)),
        ExperimentConfig::EffectiveRank(c) => Summary::EffectiveRank(effective_rank_recipe(c, &mut ctx)?),
        ExperimentConfig::HessianProbe(c) => Summary::HessianProbe(hessian_probe(c, &mut ctx)?),
        ExperimentConfig::CoverAudit(c) => Summary::CoverAudit(cover_audit(c, &mut ctx)?),
    };
    let out_dir = ctx.out_dir().to_path_buf();
    let artifacts = ctx.finish()?;
    Ok(RunOutcome {
        out_dir,
        summary,
        artifacts,
    })
}

fn network_at_init(spec: &NetworkSpec, seed: u64) -> Result<(Network, ParamVector)> {
    let net = Network::new(spec.clone())?;
    let params = net.init_params(&mut Rng::new(seed).child(STREAM_INIT));
    Ok((net, params))
}

fn build_dataset(spec: &DataSpec, seed: u64, default_holdout: usize, reference: (&Network, &ParamVector)) -> Result<Dataset> {
    let holdout = spec.holdout().unwrap_or(default_holdout);
    let data = match spec {
        DataSpec::Synthetic {
            generator, target, n, ..
        } => {
            if generator.dim() != reference.0.input_dim() {
                return Err(RunError::Validation(format!(
                    "generator produces {}-dimensional inputs but the network expects {}",
                    generator.dim(),
                    reference.0.input_dim()
                )));
            }
            synth_dataset(generator, target, *n, holdout, seed, Some(reference))?
        }
        DataSpec::Idx {
            images,
            labels,
            label_map,
            n,
            ..
        } => load_idx(Path::new(images), Path::new(labels), *label_map, *n, holdout, seed)?,
    };
    if data.input_dim() != reference.0.input_dim() {
        return Err(RunError::Validation(format!(
            "dataset inputs have dimension {} but the network expects {}",
            data.input_dim(),
            reference.0.input_dim()
        )));
    }
    Ok(data)
}

fn spectrum(cfg: &SpectrumConfig, ctx: &mut RunContext) -> Result<SpectrumSummary> {
    let (net, params) = network_at_init(&cfg.network, cfg.seed)?;
    let data = build_dataset(&cfg.data, cfg.seed, 0, (&net, &params))?;
    let n = data.len();
    if n < 4 {
        return Err(RunError::Validation(format!("spectrum needs at least 4 samples, got {n}")));
    }
    let gram = FactorCache::new(&net, &params, &data.inputs)?.gram();
    let es = eigh_gram_over_n(&gram, "empirical kernel at initialization")?;
    let points = spectrum_report(&es, Some(cfg.k_max.unwrap_or(n / 2).min(n)))?;
    let quarter_index = n / 4;
    let lambda_1 = es.eigenvalues[0];
    let summary = SpectrumSummary {
        n,
        params: net.param_count(),
        lambda_1,
        quarter_ratio: es.eigenvalues[quarter_index - 1] / lambda_1,
        quarter_index,
        reported: points.len(),
        nonincreasing: es.eigenvalues.windows(2).all(|w| w[1] <= w[0]),
        eigen_sweeps: es.sweeps,
        dataset: data.provenance.clone(),
    };
    ctx.csv("spectrum.csv", &spectrum_csv(&points))?;
    ctx.svg(
        "spectrum.svg",
        LogPlot {
            title: "normalized kernel spectrum",
            x_label: "k",
            y_label: "lambda_k / lambda_1",
            series: vec![(
                "normalized eigenvalue".into(),
                points.iter().map(|p| (p.k as f64, p.lambda_normalized)).collect(),
            )],
            timestamp: None,
            description: None,
        },
    )?;
    ctx.json("summary.json", &summary)?;
    Ok(summary)
}

fn spectral_bias(cfg: &SpectralBiasConfig, ctx: &mut RunContext) -> Result<SpectralBiasSummary> {
    let (net, params) = network_at_init(&cfg.network, cfg.seed)?;
    let data = build_dataset(&cfg.data, cfg.seed, cfg.data.n(), (&net, &params))?;
    let (n, holdout) = (data.len(), data.holdout_inputs.len());
    if holdout == 0 {
        return Err(RunError::Validation("spectral-bias needs a nonempty held-out sample".into()));
    }
    if cfg.tracked == 0 || cfg.tracked > n {
        return Err(RunError::Validation(format!("tracked must lie in 1..={n}, got {}", cfg.tracked)));
    }
    if let Some(&k) = cfg.deviation_ranks.iter().find(|&&k| k == 0 || k > holdout) {
        return Err(RunError::Validation(format!(
            "deviation rank {k} outside 1..={holdout}"
        )));
    }

    let cache = FactorCache::new(&net, &params, &data.inputs)?;
    let es_train = eigh_gram_over_n(&cache.gram(), "empirical kernel at initialization")?;
    let nystrom = NystromBasis::from_eigensystem(&es_train, cfg.tracked)?;
    let basis = ProjectionBasis::new(nystrom.eval_matrix(&cache.cross(&data.holdout_inputs)?)?);
    let sigma1 = es_train.eigenvalues[0];
    let t_max = match cfg.schedule.t_max {
        Some(t) => t,
        None => cfg.schedule.top_decay.ln() / sigma1,
    };
    let t_first = cfg.schedule.t_first.unwrap_or(t_max / 500.0);
    let schedule = Schedule::geometric(cfg.schedule.eta0, t_first, t_max, cfg.schedule.checkpoints);
    let train_sample = data.train_sample()?;
    let holdout_sample = data.holdout_sample()?;
    let traj = train(&net, &params, &train_sample, &holdout_sample, &schedule, Some(&basis), false)?;

    let mut decay = Vec::with_capacity(cfg.tracked);
    for i in 0..cfg.tracked {
        let fit = decay_rate_fit(&traj, i, cfg.least_squares)?;
        let sigma = es_train.eigenvalues[i];
        decay.push(DecayRow {
            index: i + 1,
            sigma,
            rate: fit.rate,
            rate_over_sigma: fit.rate / sigma,
            r_squared: fit.r_squared,
            points: fit.points,
            fit: fit.fit,
        });
    }
    let worst_rate_error = decay
        .iter()
        .filter(|d| d.fit)
        .map(|d| (d.rate_over_sigma - 1.0).abs())
        .fold(0.0, f64::max);
    let mut ordering_violations = Vec::new();
    for a in &decay {
        for b in decay.iter().filter(|b| b.index > a.index) {
            if a.fit && b.fit && a.sigma >= 2.0 * b.sigma && a.rate <= b.rate {
                ordering_violations.push((a.index, b.index));
            }
        }
    }

    // kernel-regime reference on the held-out sample, from the width limit
    let root = Rng::new(cfg.seed);
    let mc = MonteCarloKernel::new(&net, cfg.limit_inits, &root.child(STREAM_LIMIT))?;
    let limit_gram = mc.gram(&data.holdout_inputs)?;
    let es_limit = eigh_gram_over_n(&limit_gram.entries, "monte-carlo limit kernel")?;
    let kd = KernelDynamics::new(es_limit, traj.test_residuals[0].clone())?;

    let pool: Vec<&Vec<f64>> = data.inputs.iter().chain(&data.holdout_inputs).collect();
    let raw = kernel_l2_distance(
        |x, y| Ok(net.grad_factors(&params, x)?.inner(&net.grad_factors(&params, y)?)),
        |x, y| mc.value(x, y),
        |r| pool[r.below(pool.len() as u64) as usize].clone(),
        cfg.distance_pairs,
        &mut root.child(STREAM_DISTANCE),
    )?;
    let unbias = 1.0 + 1.0 / cfg.limit_inits as f64;
    let kernel_distance = DistanceEstimate {
        value: raw.value / unbias,
        raw: raw.value,
        stderr: raw.stderr / unbias,
        pairs: cfg.distance_pairs,
        limit_inits: cfg.limit_inits,
    };

    // Slack: integration error of the training flow against its own linearized
    // flow, plus the finite-sample operator error sup_s |(T - T_n) r_s|^2 of the
    // limit kernel, with T realized on the held-out sample.
    let kd_train = KernelDynamics::new(es_train.clone(), traj.train_residuals[0].clone())?;
    let cross_limit = mc.cross(&data.holdout_inputs, &data.inputs)?;
    let mut eps_integration: f64 = 0.0;
    let mut eps_sampling: f64 = 0.0;
    for ((t, r), r_test) in traj.times.iter().zip(&traj.train_residuals).zip(&traj.test_residuals) {
        let d = sub(r, &kd_train.at(*t)?);
        eps_integration = eps_integration.max(dot_n(&d, &d));
        let mut population = limit_gram.entries.matvec(r_test);
        population.iter_mut().for_each(|v| *v /= holdout as f64);
        let mut empirical = cross_limit.matvec(r);
        empirical.iter_mut().for_each(|v| *v /= n as f64);
        let gap = sub(&population, &empirical);
        eps_sampling = eps_sampling.max(dot_n(&gap, &gap));
    }
    let eps_slack = cfg.eps_slack.unwrap_or(eps_integration);
    let f_star_sup = data.f_star_sup();
    let deviation = damped_deviation_report(
        &traj,
        &kd,
        &cfg.deviation_ranks,
        kernel_distance.value,
        f_star_sup,
        eps_slack + eps_sampling,
    )?;
    // empirical-measure form: the limit operator realized on the training inputs
    let es_limit_train = eigh_gram_over_n(&mc.gram(&data.inputs)?.entries, "monte-carlo limit kernel")?;
    let kd_limit_train = KernelDynamics::new(es_limit_train, traj.train_residuals[0].clone())?;
    let deviation_train = damped_deviation_report_for(
        &traj.times,
        &traj.train_residuals,
        &kd_limit_train,
        &cfg.deviation_ranks,
        kernel_distance.value,
        f_star_sup,
        eps_slack,
    )?;
    let test_error = test_error_report(&traj, &basis, cfg.tracked)?;

    let coeffs = if cfg.least_squares {
        &traj.projection_coefficients
    } else {
        &traj.projections
    };
    let top_decay_measured = coeffs.last().expect("nonempty")[0].abs() / coeffs[0][0].abs();
    let summary = SpectralBiasSummary {
        n,
        holdout,
        params: net.param_count(),
        t_max,
        eta0: cfg.schedule.eta0,
        eta_final: traj.steps.last().map_or(cfg.schedule.eta0, |s| s.eta),
        steps: traj.steps.len(),
        rejected_steps: traj.rejected_steps,
        loss_monotone: traj.loss_monotone,
        monitors_hold: traj.all_checks_hold(),
        decay,
        top_decay_measured,
        worst_rate_error,
        ordering_violations,
        kernel_distance,
        eps_slack,
        eps_integration,
        eps_sampling,
        train_deviation_violations: deviation_train.violations,
        holdout_deviation_violations: deviation.violations,
        worst_deviation_ratio: deviation
            .rows
            .iter()
            .chain(&deviation_train.rows)
            .filter(|r| r.rhs > 0.0)
            .map(|r| r.lhs / r.rhs)
            .fold(0.0, f64::max),
        deviation_rows: deviation.rows.len() + deviation_train.rows.len(),
        test_error,
        dataset: data.provenance.clone(),
    };

    ctx.json(
        "trajectory.json",
        &json!({
            "times": traj.times,
            "losses": traj.losses,
            "checks": traj.checks,
            "steps": traj.steps.len(),
            "rejected_steps": traj.rejected_steps,
            "loss_monotone": traj.loss_monotone,
        }),
    )?;
    ctx.csv("projections.csv", &traj.projections_csv(cfg.least_squares))?;
    ctx.csv("deviation.csv", &deviation_csv(&[("train", &deviation_train), ("holdout", &deviation)]))?;
    let mut series = Vec::new();
    for (i, row) in summary.decay.iter().enumerate() {
        let c0 = coeffs[0][i].abs();
        series.push((
            format!("|c_{}(t)|", i + 1),
            traj.times.iter().zip(coeffs).map(|(t, c)| (*t, c[i].abs())).collect(),
        ));
        series.push((
            format!("exp(-sigma_{} t)", i + 1),
            traj.times.iter().map(|t| (*t, c0 * (-row.sigma * t).exp())).collect(),
        ));
    }
    ctx.svg(
        "decay.svg",
        LogPlot {
            title: "held-out residual projections",
            x_label: "t",
            y_label: "|coefficient|",
            series,
            timestamp: None,
            description: None,
        },
    )?;
    ctx.json("summary.json", &summary)?;
    Ok(summary)
}

fn deviation_csv(reports: &[(&str, &DeviationReport)]) -> String {
    let mut s = String::from("sample,t,k,sigma_k,lhs,rhs,holds\n");
    for (sample, report) in reports {
        for r in &report.rows {
            writeln!(s, "{sample},{:e},{},{:e},{:e},{:e},{}", r.t, r.k, r.sigma_k, r.lhs, r.rhs, r.holds)
                .expect("string write");
        }
        for r in &report.unprojected {
            writeln!(s, "{sample},{:e},all,,{:e},{:e},{}", r.t, r.lhs, r.rhs, r.holds).expect("string write");
        }
    }
    s
}

fn effective_rank_recipe(cfg: &EffectiveRankConfig, ctx: &mut RunContext) -> Result<EffectiveRankSummary> {
    let (net, params) = network_at_init(&cfg.network, cfg.seed)?;
    let data = build_dataset(&cfg.data, cfg.seed, 0, (&net, &params))?;
    let fisher = fim(&net, &params, &data.inputs, cfg.explicit)?;
    let eigenvalues: Vec<f64> = fisher.eigenvalues()?.into_iter().map(|l| l.max(0.0)).collect();
    let singular: Vec<f64> = eigenvalues.iter().map(|l| l.sqrt()).collect();
    let s1 = singular[0];
    let grid: Vec<f64> = cfg.eps_relative.iter().map(|r| r * s1).collect();
    let sweep = effective_rank_sweep(&singular, &grid);
    let bounds = cfg
        .radii
        .iter()
        .map(|&r| linearized_covering_bound(&eigenvalues, r, cfg.cover_eps, cfg.gamma))
        .collect::<ntklab_core::Result<Vec<_>>>()?;
    let summary = EffectiveRankSummary {
        n: data.len(),
        params: net.param_count(),
        explicit: matches!(fisher.representation, FisherRepr::Explicit(_)),
        trace: fisher.trace(),
        top_singular_value: s1,
        skew_ratio: effective_rank(&singular, 0.01 * s1) as f64 / net.param_count() as f64,
        sweep,
        bounds,
        dataset: data.provenance.clone(),
    };
    let mut spectrum = String::from("i,lambda,singular_value\n");
    for (i, (l, s)) in eigenvalues.iter().zip(&singular).enumerate() {
        writeln!(spectrum, "{},{l:e},{s:e}", i + 1).expect("string write");
    }
    ctx.csv("fisher_spectrum.csv", &spectrum)?;
    ctx.csv("effective_rank.csv", &effective_rank_csv(&summary.sweep))?;
    ctx.svg(
        "fisher_spectrum.svg",
        LogPlot {
            title: "Fisher singular values",
            x_label: "i",
            y_label: "sqrt(lambda_i) / sqrt(lambda_1)",
            series: vec![(
                "singular value".into(),
                singular.iter().enumerate().map(|(i, s)| ((i + 1) as f64, s / s1)).collect(),
            )],
            timestamp: None,
            description: None,
        },
    )?;
    ctx.json("summary.json", &summary)?;
    Ok(summary)
}

fn hessian_probe(cfg: &HessianProbeConfig, ctx: &mut RunContext) -> Result<HessianProbeSummary> {
    if cfg.widths.len() < 2 {
        return Err(RunError::Validation("hessian-probe needs at least two widths".into()));
    }
    if cfg.probes == 0 || cfg.depth == 0 {
        return Err(RunError::Validation("probes and depth must be positive".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.widths.len());
    let mut csv = String::from("width,probe,opnorm,iterations,converged\n");
    for (wi, &m) in cfg.widths.iter().enumerate() {
        let net = Network::new(NetworkSpec::fully_connected(cfg.input_dim, &vec![m; cfg.depth], cfg.activation))?;
        let width_rng = root.child(STREAM_PROBES).child(wi as u64);
        let mut values = Vec::with_capacity(cfg.probes);
        let mut all_converged = true;
        for j in 0..cfg.probes {
            let mut rng = width_rng.child(j as u64);
            let mut params = net.init_params(&mut rng);
            if cfg.radius > 0.0 {
                let dir = rng.unit_vector(params.len());
                let moved = params.data.iter().zip(&dir).map(|(p, d)| p + cfg.radius * d).collect();
                params = params.with_data(moved);
            }
            let scale = (cfg.input_dim as f64).sqrt();
            let x: Vec<f64> = rng.unit_vector(cfg.input_dim).iter().map(|v| v * scale).collect();
            let est = net.hessian_opnorm_estimate(&params, &x, cfg.iterations, &mut rng)?;
            writeln!(csv, "{m},{},{:e},{},{}", j + 1, est.value, est.iterations, est.converged).expect("string write");
            all_converged &= est.converged;
            values.push(est.value);
        }
        rows.push(WidthRow {
            width: m,
            params: net.param_count(),
            max_opnorm: values.iter().copied().fold(0.0, f64::max),
            mean_opnorm: values.iter().sum::<f64>() / values.len() as f64,
            all_converged,
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| (r.width as f64).ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.max_opnorm.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&lx, &ly);
    let summary = HessianProbeSummary {
        rows,
        slope,
        intercept,
        r_squared,
    };
    ctx.csv("hessian.csv", &csv)?;
    ctx.svg(
        "hessian.svg",
        LogPlot {
            title: "Hessian operator norm against width",
            x_label: "width",
            y_label: "max |H|_op",
            series: vec![
                (
                    "max over probes".into(),
                    summary.rows.iter().map(|r| (r.width as f64, r.max_opnorm)).collect(),
                ),
                (
                    format!("fit, slope {slope:.3}"),
                    summary
                        .rows
                        .iter()
                        .map(|r| (r.width as f64, (intercept + slope * (r.width as f64).ln()).exp()))
                        .collect(),
                ),
            ],
            timestamp: None,
            description: None,
        },
    )?;
    ctx.json("summary.json", &summary)?;
    Ok(summary)
}

fn cover_audit(cfg: &CoverAuditConfig, ctx: &mut RunContext) -> Result<CoverAuditSummary> {
    if cfg.min_dim == 0 || cfg.min_dim > cfg.max_dim {
        return Err(RunError::Validation(format!(
            "dimension range {}..={} is empty or starts at 0",
            cfg.min_dim, cfg.max_dim
        )));
    }
    if !(cfg.axis_min > 0.0 && cfg.axis_min <= cfg.axis_max) {
        return Err(RunError::Validation(format!(
            "axis range [{}, {}] must be positive and ordered",
            cfg.axis_min, cfg.axis_max
        )));
    }
    let root = Rng::new(cfg.seed).child(STREAM_COVER);
    let mut shape_rng = root.child(0);
    let mut reports = Vec::new();
    let mut csv = String::from("ellipsoid,half_axes,gamma,lower,constructed,upper,sandwich,audit_violations\n");
    for e in 0..cfg.ellipsoids {
        let dim = cfg.min_dim + shape_rng.below((cfg.max_dim - cfg.min_dim + 1) as u64) as usize;
        let mut axes: Vec<f64> = (0..dim)
            .map(|_| shape_rng.uniform_range(cfg.axis_min, cfg.axis_max))
            .collect();
        axes.sort_by(|a, b| b.total_cmp(a));
        let ellipsoid = Ellipsoid::new(axes.clone())?;
        for (g, &gamma) in cfg.gammas.iter().enumerate() {
            let mut rng = root.child(1 + (e * cfg.gammas.len() + g) as u64);
            let report = cover_report(
                &ellipsoid,
                gamma,
                cfg.rejection_limit,
                cfg.audit_samples,
                cfg.keep_centers,
                &mut rng,
            )?;
            let axes_text: Vec<String> = axes.iter().map(|a| format!("{a:.6}")).collect();
            writeln!(
                csv,
                "{},{},{gamma},{:e},{},{:e},{},{}",
                e + 1,
                axes_text.join(" "),
                report.k_lower,
                report.constructed_count.unwrap_or(0),
                report.upper,
                report.sandwich_holds().unwrap_or(false),
                report.audit.as_ref().map_or(0, |a| a.violations)
            )
            .expect("string write");
            reports.push(report);
        }
    }
    let summary = CoverAuditSummary {
        covers: reports.len(),
        sandwich_failures: reports.iter().filter(|r| r.sandwich_holds() != Some(true)).count(),
        audit_violations: reports.iter().map(|r| r.audit.as_ref().map_or(0, |a| a.violations)).sum(),
        audit_samples: cfg.audit_samples,
        reports,
    };
    ctx.csv("covers.csv", &csv)?;
    ctx.json("covers.json", &summary.reports)?;
    ctx.json(
        "summary.json",
        &json!({
            "covers": summary.covers,
            "sandwich_failures": summary.sandwich_failures,
            "audit_violations": summary.audit_violations,
            "audit_samples": summary.audit_samples,
        }),
    )?;
    Ok(summary)
}
