//! Experiment configs and the replication runner.
//!
//! A config names one path generator, default `n`, `tau`, `reps` and
//! `base_seed`, and a list of analyses that may override any of these.
//! Replication `i` of every analysis uses seed `base_seed ^ i`, so analyses
//! sharing `n` see the same paths. Results are folded in replication order
//! and therefore do not depend on the engine.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chaos::{
    canonical_correlation, canonical_correlation_search, hypercontractivity_check, CatalogFn,
    GaussianBlockPair,
};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::evt::{
    self, block_counts, blocks_from_counts, maxima_record, mean_sd, runs_from_counts, runs_profile,
    scan_counts, scan_table, BlockCounts, DprimeReport, EstimatorReport, MaximaRecord,
    NonexceedReport, RunsCounts, ScanCounts, ScanRow,
};
use crate::gausslin::{autocov, berman_profile, make_coeffs, LinearProcessSpec, SimulatorCache};
use crate::m4::{self, M4Generator, M4Spec, ThresholdVector};
use crate::numerics::{normal_isf, normal_sf};
use crate::pointproc::{self, gapped_blocks, lambda_rp, GapConfig, PoissonReport};
use crate::rng::{self, RNG_ALGORITHM};
use crate::series::SeriesMatrix;
use crate::subordinate::{apply, Part, WindowTransform};

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// Gaussian linear process, optionally passed through a window transform.
    Linear {
        process: LinearProcessSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        transform: Option<WindowTransform>,
    },
    M4 {
        spec: M4Spec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// Per-replication maxima records and `P(M_n <= u_n(tau))`.
    Nonexceed {
        #[serde(default)]
        m_trunc: Option<usize>,
    },
    /// Runs estimates pooled over replications.
    Runs {
        m: Vec<usize>,
    },
    Blocks {
        b: usize,
    },
    Dprime {
        n_stat: usize,
        k: Vec<usize>,
    },
    /// Gapped-block patterns and Poisson diagnostics. Without `theta`, the
    /// runs profile `theta_0..theta_m` is estimated on `theta_reps` paths of
    /// length `theta_n`.
    Pointproc {
        r: usize,
        p: usize,
        m: usize,
        #[serde(default = "default_bins")]
        bins: usize,
        #[serde(default)]
        theta: Option<Vec<f64>>,
        #[serde(default)]
        theta_n: Option<usize>,
        #[serde(default)]
        theta_reps: Option<usize>,
        /// `G(tau)`; taken from the M4 closed form when absent.
        #[serde(default)]
        g: Option<f64>,
    },
    /// Joint exceedances of a bivariate path at marginal tail levels `fbar`.
    Scan {
        fbar: Vec<f64>,
    },
    /// Closed-form `A`, `G`, `theta`, tail limit and the `theta_2m` profile.
    M4Limits {
        m_trunc: Vec<usize>,
    },
    /// Sample autocovariance of coordinate 0 against the exact one.
    Acf {
        max_lag: usize,
    },
    Berman {
        from: usize,
        to: usize,
    },
    Hypercontractivity {
        a: Vec<f64>,
        #[serde(default)]
        functions: Option<Vec<CatalogFn>>,
    },
    /// SVD canonical correlation vs direct search on random covariances.
    CancorrCheck {
        pairs: usize,
        p: usize,
        q: usize,
        directions: usize,
    },
}

fn default_bins() -> usize {
    10
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Nonexceed { .. } => "nonexceed",
            Task::Runs { .. } => "runs",
            Task::Blocks { .. } => "blocks",
            Task::Dprime { .. } => "dprime",
            Task::Pointproc { .. } => "pointproc",
            Task::Scan { .. } => "scan",
            Task::M4Limits { .. } => "m4_limits",
            Task::Acf { .. } => "acf",
            Task::Berman { .. } => "berman",
            Task::Hypercontractivity { .. } => "hypercontractivity",
            Task::CancorrCheck { .. } => "cancorr_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    #[serde(flatten)]
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

impl Analysis {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            label: None,
            n: None,
            reps: None,
            tau: None,
            generator: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub generator: GeneratorSpec,
    pub n: usize,
    pub tau: Vec<f64>,
    pub reps: usize,
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<Engine>,
    pub analyses: Vec<Analysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::invalid("reps", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        Source::new(&self.generator)
            .map_err(|e| e.within("generator"))?
            .check_tau(&self.tau)?;
        for (i, a) in self.analyses.iter().enumerate() {
            let path = format!("analyses[{i}]");
            if a.reps == Some(0) || a.n == Some(0) {
                return Err(Error::invalid(path, "n and reps must be at least 1"));
            }
            if let Some(g) = &a.generator {
                Source::new(g).map_err(|e| e.within(&format!("{path}.generator")))?;
            }
            if let Some(tau) = &a.tau {
                if let Some(j) = tau.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
                    return Err(Error::invalid(
                        format!("{path}.tau[{j}]"),
                        "must be positive",
                    ));
                }
            }
            validate_task(&a.task).map_err(|e| e.within(&path))?;
        }
        Ok(())
    }
}

fn validate_task(task: &Task) -> Result<()> {
    match task {
        Task::Runs { m } if m.is_empty() => Err(Error::invalid("m", "needs at least one lag")),
        Task::Blocks { b: 0 } => Err(Error::invalid("b", "must be positive")),
        Task::Dprime { n_stat, k } => {
            if k.is_empty() || k.contains(&0) || k.iter().any(|k| k > n_stat) {
                Err(Error::invalid("k", "entries must lie in 1..=n_stat"))
            } else {
                Ok(())
            }
        }
        Task::Pointproc { r, p, m, bins, .. } => {
            GapConfig::new(*r, *p, *m)?;
            if *bins == 0 {
                return Err(Error::invalid("bins", "must be positive"));
            }
            Ok(())
        }
        Task::Scan { fbar } => {
            if fbar.is_empty() || fbar.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
                Err(Error::invalid("fbar", "levels must lie in (0, 1)"))
            } else {
                Ok(())
            }
        }
        Task::Berman { from, to } if from >= to || *from < 2 => {
            Err(Error::invalid("from", "need 2 <= from < to"))
        }
        Task::Hypercontractivity { a, .. } if a.iter().any(|a| !(-1.0..=1.0).contains(a)) => {
            Err(Error::invalid("a", "entries must lie in [-1, 1]"))
        }
        Task::CancorrCheck {
            pairs,
            p,
            q,
            directions,
        } => {
            if *pairs == 0 || *p == 0 || *q == 0 || *directions == 0 {
                Err(Error::invalid(
                    "pairs",
                    "pairs, p, q and directions must be positive",
                ))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// Closed-form marginal law of one output coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Marginal {
    Normal,
    AbsNormal,
    SquareNormal,
    Pareto(f64),
}

impl Marginal {
    fn tail(self, x: f64) -> f64 {
        match self {
            Marginal::Normal => normal_sf(x),
            Marginal::AbsNormal => (2.0 * normal_sf(x.max(0.0))).min(1.0),
            Marginal::SquareNormal => (2.0 * normal_sf(x.max(0.0).sqrt())).min(1.0),
            Marginal::Pareto(alpha) => x.max(1.0).powf(-alpha),
        }
    }

    fn isf(self, p: f64) -> f64 {
        match self {
            Marginal::Normal => normal_isf(p),
            Marginal::AbsNormal => normal_isf(p / 2.0),
            Marginal::SquareNormal => normal_isf(p / 2.0).powi(2),
            Marginal::Pareto(alpha) => p.powf(-1.0 / alpha),
        }
    }
}

/// Runtime form of a [`GeneratorSpec`].
pub struct Source {
    spec: GeneratorSpec,
    kind: SourceKind,
}

enum SourceKind {
    Linear {
        cache: SimulatorCache,
        transform: Option<WindowTransform>,
    },
    M4(M4Generator),
}

impl Source {
    pub fn new(spec: &GeneratorSpec) -> Result<Self> {
        let kind = match spec {
            GeneratorSpec::Linear { process, transform } => {
                let coeffs = make_coeffs(process).map_err(|e| e.within("process"))?;
                if let Some(t) = transform {
                    t.validate(process.d0).map_err(|e| e.within("transform"))?;
                }
                SourceKind::Linear {
                    cache: SimulatorCache::new(coeffs),
                    transform: transform.clone(),
                }
            }
            GeneratorSpec::M4 { spec } => {
                SourceKind::M4(M4Generator::new(spec).map_err(|e| e.within("spec"))?)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            kind,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Output dimension.
    pub fn d(&self) -> usize {
        match &self.kind {
            SourceKind::Linear { cache, transform } => transform
                .as_ref()
                .map_or(cache.coeffs().d0(), WindowTransform::d),
            SourceKind::M4(g) => g.spec().d,
        }
    }

    pub fn m4_spec(&self) -> Option<&M4Spec> {
        match &self.kind {
            SourceKind::M4(g) => Some(g.spec()),
            SourceKind::Linear { .. } => None,
        }
    }

    fn check_tau(&self, tau: &[f64]) -> Result<()> {
        if tau.len() != self.d() {
            return Err(Error::invalid(
                "tau",
                format!("expected {} entries, got {}", self.d(), tau.len()),
            ));
        }
        if let Some(i) = tau.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!("tau[{i}]"), "must be positive"));
        }
        Ok(())
    }

    /// `n` rows of the output process for `seed`.
    pub fn path(&self, n: usize, seed: u64, m_trunc: Option<usize>) -> Result<SeriesMatrix> {
        match &self.kind {
            SourceKind::Linear { cache, transform } => {
                if m_trunc.is_some() {
                    return Err(Error::invalid("m_trunc", "only applies to M4 generators"));
                }
                let m = transform.as_ref().map_or(0, |t| t.m);
                let x = cache.get(n + m)?.simulate(seed);
                match transform {
                    Some(t) => apply(&x, t),
                    None => Ok(x),
                }
            }
            SourceKind::M4(g) => g.path(n, seed, m_trunc),
        }
    }

    fn unit_variance(&self, coord: usize) -> Result<()> {
        if let SourceKind::Linear { cache, .. } = &self.kind {
            let var = autocov(cache.coeffs(), 0)?.gamma[(coord, coord)];
            if (var - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "generator.process.standardize",
                    format!("coordinate {coord} has variance {var}; exact thresholds need unit variance"),
                ));
            }
        }
        Ok(())
    }

    fn marginal(&self, i: usize) -> Result<Marginal> {
        let SourceKind::Linear { transform, .. } = &self.kind else {
            return Err(Error::invalid(
                "generator",
                "marginals are defined for linear generators",
            ));
        };
        let (coord, marginal) = match transform.as_ref().map(|t| &t.parts[i]) {
            None => (i, Marginal::Normal),
            Some(Part::Identity { coord, .. }) => (*coord, Marginal::Normal),
            Some(Part::Abs { coord, .. }) => (*coord, Marginal::AbsNormal),
            Some(Part::Square { coord, .. }) => (*coord, Marginal::SquareNormal),
            Some(Part::Pareto { coord, alpha, .. })
            | Some(Part::FoldedPareto { coord, alpha, .. }) => (*coord, Marginal::Pareto(*alpha)),
            Some(Part::WindowMax { .. }) => {
                return Err(Error::invalid(
                    format!("generator.transform.parts[{i}]"),
                    "window_max has no closed-form marginal",
                ))
            }
        };
        self.unit_variance(coord)?;
        Ok(marginal)
    }

    /// `u_n(tau)`: the M4 levels `(A_i n / tau_i)^{1/alpha}`, or the exact
    /// `1 - tau_i / n` quantile of each closed-form marginal.
    pub fn thresholds(&self, n: usize, tau: &[f64]) -> Result<ThresholdVector> {
        self.check_tau(tau)?;
        match &self.kind {
            SourceKind::M4(g) => m4::thresholds(g.spec(), n, tau),
            SourceKind::Linear { .. } => {
                let u = tau
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        if *t >= n as f64 {
                            return Err(Error::invalid(format!("tau[{i}]"), "must be below n"));
                        }
                        Ok(self.marginal(i)?.isf(t / n as f64))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ThresholdVector::fixed(n, tau.to_vec(), u)
            }
        }
    }

    /// `(G(tau), theta(tau))` when available in closed form.
    pub fn limits(&self, tau: &[f64]) -> Option<(f64, f64)> {
        let spec = self.m4_spec()?;
        Some((m4::g_limit(spec, tau).ok()?, m4::theta(spec, tau).ok()?))
    }

    /// Canonical correlation of the Gaussian inputs of a bivariate,
    /// instantaneous output.
    fn pair_correlation(&self) -> Result<f64> {
        let SourceKind::Linear { cache, transform } = &self.kind else {
            return Err(Error::invalid("generator", "scan needs a linear generator"));
        };
        let coords = match transform {
            None => vec![0, 1],
            Some(t) => t
                .parts
                .iter()
                .map(|p| match p {
                    Part::Identity { coord, lag: 0 }
                    | Part::Abs { coord, lag: 0 }
                    | Part::Square { coord, lag: 0 }
                    | Part::Pareto { coord, lag: 0, .. }
                    | Part::FoldedPareto { coord, lag: 0, .. } => Ok(*coord),
                    _ => Err(Error::invalid(
                        "generator.transform",
                        "scan needs single-coordinate, lag-0 parts",
                    )),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if coords.len() != 2 || coords[0] == coords[1] {
            return Err(Error::invalid(
                "generator",
                "scan needs two distinct coordinates",
            ));
        }
        let g = autocov(cache.coeffs(), 0)?.gamma;
        let (a, b) = (coords[0], coords[1]);
        let pair = GaussianBlockPair::new(
            DMatrix::from_element(1, 1, g[(a, a)]),
            DMatrix::from_element(1, 1, g[(b, b)]),
            DMatrix::from_element(1, 1, g[(a, b)]),
        )?;
        canonical_correlation(&pair)
    }

    fn coeffs(&self) -> Result<&crate::gausslin::CoeffTable> {
        match &self.kind {
            SourceKind::Linear { cache, .. } => Ok(cache.coeffs()),
            SourceKind::M4(_) => Err(Error::invalid("generator", "needs a linear generator")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub analysis: usize,
    pub replication: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsRow {
    pub counts: RunsCounts,
    pub report: Option<EstimatorReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DprimeOutcome {
    pub report: DprimeReport,
    /// `n floor(n/k) (tau/n)^2`, the value under independence.
    pub independent: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitsOutcome {
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "G")]
    pub g: f64,
    pub theta: f64,
    pub tail_limit: f64,
    /// `(m_trunc, theta_2m)`.
    pub theta_2m: Vec<(usize, f64)>,
    pub summability: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfRow {
    pub lag: usize,
    pub sample: f64,
    pub stderr: f64,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BermanOutcome {
    pub from: usize,
    pub to: usize,
    pub nonincreasing: bool,
    /// Largest `b(h+1) - b(h)` over the range (negative when decreasing).
    pub max_step: f64,
    pub value_from: f64,
    pub value_to: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRow {
    pub function: CatalogFn,
    pub a: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancorrRow {
    pub svd: f64,
    pub search: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Nonexceed {
        report: NonexceedReport,
        u: Vec<f64>,
        m_trunc: Option<usize>,
        /// `G(tau)^theta(tau)` for M4 generators.
        limit: Option<f64>,
    },
    Runs {
        rows: Vec<RunsRow>,
        theta_limit: Option<f64>,
    },
    Blocks {
        report: Option<EstimatorReport>,
        error: Option<String>,
    },
    Dprime(DprimeOutcome),
    Pointproc {
        theta: Vec<f64>,
        g: f64,
        lambda_target: f64,
        report: PoissonReport,
    },
    Scan {
        rho: f64,
        samples: usize,
        rows: Vec<ScanRow>,
    },
    M4Limits(LimitsOutcome),
    Acf {
        rows: Vec<AcfRow>,
    },
    Berman(BermanOutcome),
    Hypercontractivity {
        rows: Vec<HyperRow>,
        max_excess: f64,
    },
    CancorrCheck {
        rows: Vec<CancorrRow>,
        max_abs_diff: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub kind: String,
    pub label: Option<String>,
    pub n: usize,
    pub reps: usize,
    pub tau: Vec<f64>,
    pub failures: usize,
    pub outcome: Outcome,
    /// Artifact written for this analysis, relative to the output directory.
    pub artifact: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub base_seed: u64,
    pub rng: String,
    pub results: Vec<AnalysisResult>,
    pub failures: Vec<FailureRecord>,
    pub failure_rate: f64,
}

impl RunSummary {
    pub fn result(&self, label: &str) -> Option<&AnalysisResult> {
        self.results
            .iter()
            .find(|r| r.label.as_deref() == Some(label))
    }
}

/// Collects successes in index order; aborts when more than 1% fail.
fn gather<T>(
    analysis: usize,
    base_seed: u64,
    results: Vec<Result<T>>,
    failures: &mut Vec<FailureRecord>,
) -> Result<Vec<T>> {
    let reps = results.len();
    let mut ok = Vec::with_capacity(reps);
    let mut local = Vec::new();
    let mut first = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                local.push(FailureRecord {
                    analysis,
                    replication: i,
                    seed: rng::replication_seed(base_seed, i),
                    error: e.to_string(),
                });
                first.get_or_insert((i, e));
            }
        }
    }
    if let Some((index, source)) = first {
        if local.len() as f64 > MAX_FAILURE_RATE * reps as f64 {
            return Err(Error::Replication {
                index,
                source: Box::new(Error::Numerical(format!(
                    "{} of {reps} replications failed in analysis {analysis}; first: {source}",
                    local.len()
                ))),
            });
        }
    }
    failures.extend(local);
    Ok(ok)
}

/// Output files of one analysis.
struct Artifacts<'a> {
    dir: Option<&'a Path>,
}

impl Artifacts<'_> {
    fn write(
        &self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> Result<()>,
    ) -> Result<Option<String>> {
        let Some(dir) = self.dir else {
            return Ok(None);
        };
        let mut out = BufWriter::new(fs::File::create(dir.join(name))?);
        body(&mut out)?;
        out.flush()?;
        Ok(Some(name.to_string()))
    }
}

pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    run_with(
        config,
        config.engine.unwrap_or_default(),
        config.output.as_deref(),
    )
}

/// Runs every analysis with `engine`, writing artifacts and `summary.json`
/// under `out` when given.
pub fn run_with(
    config: &ExperimentConfig,
    engine: Engine,
    out: Option<&Path>,
) -> Result<RunSummary> {
    config.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let base = Source::new(&config.generator)?;
    let mut failures = Vec::new();
    let mut results = Vec::with_capacity(config.analyses.len());
    let mut total_reps = 0usize;
    for (idx, analysis) in config.analyses.iter().enumerate() {
        let own;
        let source = match &analysis.generator {
            Some(g) => {
                own = Source::new(g)?;
                &own
            }
            None => &base,
        };
        let ctx = Context {
            idx,
            engine,
            source,
            n: analysis.n.unwrap_or(config.n),
            reps: analysis.reps.unwrap_or(config.reps),
            tau: analysis.tau.clone().unwrap_or_else(|| config.tau.clone()),
            base_seed: config.base_seed,
            artifacts: Artifacts { dir: out },
            file_stem: format!(
                "{idx:02}_{}",
                analysis.label.as_deref().unwrap_or(analysis.task.name())
            ),
        };
        let before = failures.len();
        let (outcome, artifact) = ctx.execute(&analysis.task, &mut failures)?;
        if analysis.task.uses_replications() {
            total_reps += ctx.reps;
        }
        results.push(AnalysisResult {
            kind: analysis.task.name().to_string(),
            label: analysis.label.clone(),
            n: ctx.n,
            reps: ctx.reps,
            tau: ctx.tau.clone(),
            failures: failures.len() - before,
            outcome,
            artifact,
        });
    }
    let summary = RunSummary {
        name: config.name.clone(),
        base_seed: config.base_seed,
        rng: RNG_ALGORITHM.to_string(),
        failure_rate: if total_reps > 0 {
            failures.len() as f64 / total_reps as f64
        } else {
            0.0
        },
        results,
        failures,
    };
    if let Some(dir) = out {
        let mut f = BufWriter::new(fs::File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(&mut f, &summary)?;
        writeln!(f)?;
        f.flush()?;
    }
    Ok(summary)
}

impl Task {
    fn uses_replications(&self) -> bool {
        !matches!(
            self,
            Task::M4Limits { .. } | Task::Berman { .. } | Task::Hypercontractivity { .. }
        )
    }
}

struct Context<'a> {
    idx: usize,
    engine: Engine,
    source: &'a Source,
    n: usize,
    reps: usize,
    tau: Vec<f64>,
    base_seed: u64,
    artifacts: Artifacts<'a>,
    file_stem: String,
}

impl Context<'_> {
    fn replicate<T: Send>(
        &self,
        reps: usize,
        failures: &mut Vec<FailureRecord>,
        f: impl Fn(u64) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        let raw = self
            .engine
            .replicate(reps, self.base_seed, |_, seed| f(seed));
        gather(self.idx, self.base_seed, raw, failures)
    }

    fn execute(
        &self,
        task: &Task,
        failures: &mut Vec<FailureRecord>,
    ) -> Result<(Outcome, Option<String>)> {
        let src = self.source;
        match task {
            Task::Nonexceed { m_trunc } => {
                // Truncated paths are compared against the full process levels.
                let u = src.thresholds(self.n, &self.tau)?;
                let records = self.replicate(self.reps, failures, |seed| {
                    maxima_record(&src.path(self.n, seed, *m_trunc)?, &u)
                })?;
                let flags: Vec<bool> = records.iter().map(|r| r.nonexceed).collect();
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        write_maxima(w, &records)
                    })?;
                let limit = src.limits(&self.tau).map(|(g, th)| g.powf(th));
                Ok((
                    Outcome::Nonexceed {
                        report: NonexceedReport::from_flags(&flags),
                        u: u.u.clone(),
                        m_trunc: *m_trunc,
                        limit,
                    },
                    artifact,
                ))
            }
            Task::Runs { m } => {
                let counts =
                    self.pooled_runs(self.n, self.reps, *m.iter().max().unwrap_or(&0), failures)?;
                let rows: Vec<RunsRow> = m
                    .iter()
                    .map(|&m| {
                        let c = counts[m];
                        match runs_from_counts(c) {
                            Ok(r) => RunsRow {
                                counts: c,
                                report: Some(r),
                                error: None,
                            },
                            Err(e) => RunsRow {
                                counts: c,
                                report: None,
                                error: Some(e.to_string()),
                            },
                        }
                    })
                    .collect();
                let reports: Vec<EstimatorReport> =
                    rows.iter().filter_map(|r| r.report.clone()).collect();
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        evt::write_estimates(w, &reports)
                    })?;
                Ok((
                    Outcome::Runs {
                        rows,
                        theta_limit: src.limits(&self.tau).map(|(_, th)| th),
                    },
                    artifact,
                ))
            }
            Task::Blocks { b } => {
                let u = src.thresholds(self.n, &self.tau)?;
                let per = self.replicate(self.reps, failures, |seed| {
                    block_counts(&src.path(self.n, seed, None)?, &u, *b)
                })?;
                let pooled = per.into_iter().fold(
                    BlockCounts {
                        b: *b,
                        ..Default::default()
                    },
                    BlockCounts::merge,
                );
                let (report, error) = match blocks_from_counts(&pooled) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        evt::write_estimates(w, report.as_slice())
                    })?;
                Ok((Outcome::Blocks { report, error }, artifact))
            }
            Task::Dprime { n_stat, k } => {
                if self.tau.len() != 1 {
                    return Err(Error::invalid("tau", "dprime needs a univariate generator"));
                }
                let u = src.thresholds(*n_stat, &self.tau)?.u[0];
                let raw = self.engine.replicate(self.reps, self.base_seed, |_, seed| {
                    src.path(self.n, seed, None)
                });
                // Validate paths up front so failures are recorded, then
                // hand the survivors to the estimator in order.
                let paths = gather(self.idx, self.base_seed, raw, failures)?;
                let report = evt::dprime_stat(
                    Engine::Sequential,
                    |i| Ok(paths[i as usize].clone()),
                    *n_stat,
                    u,
                    k,
                    paths.len(),
                    0,
                )?;
                let t = self.tau[0];
                let independent = k
                    .iter()
                    .map(|&k| {
                        (*n_stat as f64) * ((n_stat / k) as f64) * (t / *n_stat as f64).powi(2)
                    })
                    .collect::<Vec<_>>();
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        writeln!(w, "k,statistic,stderr,joint_events,independent")?;
                        for (row, ind) in report.rows.iter().zip(&independent) {
                            writeln!(
                                w,
                                "{},{},{},{},{}",
                                row.k, row.statistic, row.stderr, row.joint_events, ind
                            )?;
                        }
                        Ok(())
                    })?;
                Ok((
                    Outcome::Dprime(DprimeOutcome {
                        report,
                        independent,
                    }),
                    artifact,
                ))
            }
            Task::Pointproc {
                r,
                p,
                m,
                bins,
                theta,
                theta_n,
                theta_reps,
                g,
            } => {
                let cfg = GapConfig::new(*r, *p, *m)?;
                let g = match g {
                    Some(g) => *g,
                    None => src
                        .limits(&self.tau)
                        .map(|(g, _)| g)
                        .ok_or_else(|| Error::invalid("g", "required for non-M4 generators"))?,
                };
                let theta = match theta {
                    Some(t) => {
                        if t.len() != m + 1 {
                            return Err(Error::invalid(
                                "theta",
                                format!("expected {} values", m + 1),
                            ));
                        }
                        t.clone()
                    }
                    None => {
                        let counts = self.pooled_runs(
                            theta_n.unwrap_or(self.n),
                            theta_reps.unwrap_or(self.reps),
                            *m,
                            failures,
                        )?;
                        counts
                            .into_iter()
                            .map(|c| runs_from_counts(c).map(|r| r.estimate))
                            .collect::<Result<Vec<_>>>()?
                    }
                };
                let lambda = lambda_rp(&theta[..*m], theta[*m], g, &cfg)?;
                let u = src.thresholds(self.n, &self.tau)?;
                let patterns = self.replicate(self.reps, failures, |seed| {
                    gapped_blocks(&src.path(self.n, seed, None)?, &u, &cfg)
                })?;
                let report = pointproc::poisson_diagnostics(&patterns, lambda, *bins)?;
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        pointproc::write_patterns(w, &patterns)
                    })?;
                Ok((
                    Outcome::Pointproc {
                        theta,
                        g,
                        lambda_target: lambda,
                        report,
                    },
                    artifact,
                ))
            }
            Task::Scan { fbar } => {
                if src.d() != 2 {
                    return Err(Error::invalid(
                        "generator",
                        "scan needs a bivariate generator",
                    ));
                }
                let rho = src.pair_correlation()?;
                let marginal = src.marginal(0)?;
                if src.marginal(1)? != marginal {
                    return Err(Error::invalid(
                        "generator.transform",
                        "scan needs identical marginals",
                    ));
                }
                let levels: Vec<f64> = fbar.iter().map(|&f| marginal.isf(f)).collect();
                let per = self.replicate(self.reps, failures, |seed| {
                    scan_counts(&src.path(self.n, seed, None)?, &levels)
                })?;
                let mut iter = per.into_iter();
                let first = iter
                    .next()
                    .ok_or_else(|| Error::Numerical("no successful replication".into()))?;
                let pooled: ScanCounts = iter.fold(first, |acc, c| acc.merge(&c));
                let rows = scan_table(&pooled, &levels, |x| marginal.tail(x), rho);
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        writeln!(w, "{}", evt::SCAN_CSV_HEADER)?;
                        for r in &rows {
                            writeln!(w, "{}", r.csv_row())?;
                        }
                        Ok(())
                    })?;
                Ok((
                    Outcome::Scan {
                        rho,
                        samples: pooled.samples,
                        rows,
                    },
                    artifact,
                ))
            }
            Task::M4Limits { m_trunc } => {
                let spec = src.m4_spec().ok_or_else(|| {
                    Error::invalid("generator", "m4_limits needs an M4 generator")
                })?;
                let out = LimitsOutcome {
                    a: m4::a_vec(spec),
                    g: m4::g_limit(spec, &self.tau)?,
                    theta: m4::theta(spec, &self.tau)?,
                    tail_limit: m4::tail_limit(spec, &self.tau)?,
                    theta_2m: m_trunc
                        .iter()
                        .map(|&m| Ok((m, m4::theta_2m(spec, &self.tau, m)?)))
                        .collect::<Result<Vec<_>>>()?,
                    summability: m4::SUMMABILITY.to_string(),
                };
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        writeln!(w, "m_trunc,theta_2m")?;
                        for (m, t) in &out.theta_2m {
                            writeln!(w, "{m},{t}")?;
                        }
                        Ok(())
                    })?;
                Ok((Outcome::M4Limits(out), artifact))
            }
            Task::Acf { max_lag } => {
                let coeffs = src.coeffs()?;
                if *max_lag >= self.n || *max_lag > coeffs.horizon() {
                    return Err(Error::invalid(
                        "max_lag",
                        "must be below n and within the horizon",
                    ));
                }
                let per = self.replicate(self.reps, failures, |seed| {
                    let x = src.cache_path(self.n, seed)?;
                    Ok(sample_autocov(&x.column(0), *max_lag))
                })?;
                let exact = crate::gausslin::autocov_all(coeffs, *max_lag)?;
                let rows: Vec<AcfRow> = (0..=*max_lag)
                    .map(|h| {
                        let xs: Vec<f64> = per.iter().map(|v| v[h]).collect();
                        let (mean, sd) = mean_sd(&xs);
                        AcfRow {
                            lag: h,
                            sample: mean,
                            stderr: sd / (xs.len() as f64).sqrt(),
                            exact: exact[h][(0, 0)],
                        }
                    })
                    .collect();
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        writeln!(w, "lag,sample,stderr,exact")?;
                        for r in &rows {
                            writeln!(w, "{},{},{},{}", r.lag, r.sample, r.stderr, r.exact)?;
                        }
                        Ok(())
                    })?;
                Ok((Outcome::Acf { rows }, artifact))
            }
            Task::Berman { from, to } => {
                let profile = berman_profile(src.coeffs()?, *to)?;
                let window: Vec<(usize, f64)> = profile
                    .iter()
                    .copied()
                    .filter(|(h, _)| h >= from && h <= to)
                    .collect();
                let max_step = window
                    .windows(2)
                    .map(|w| w[1].1 - w[0].1)
                    .fold(f64::NEG_INFINITY, f64::max);
                let out = BermanOutcome {
                    from: *from,
                    to: *to,
                    nonincreasing: max_step <= 0.0,
                    max_step,
                    value_from: window.first().map_or(f64::NAN, |v| v.1),
                    value_to: window.last().map_or(f64::NAN, |v| v.1),
                };
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        writeln!(w, "h,value")?;
                        // Log-spaced sample of the profile.
                        let mut last = 0;
                        for &(h, v) in &profile {
                            if h >= last + 1 + last / 64 || h == *to {
                                writeln!(w, "{h},{v}")?;
                                last = h;
                            }
                        }
                        Ok(())
                    })?;
                Ok((Outcome::Berman(out), artifact))
            }
            Task::Hypercontractivity { a, functions } => {
                let fs = functions.clone().unwrap_or_else(default_catalog);
                let mut rows = Vec::new();
                for f in &fs {
                    for &a in a {
                        let pair = hypercontractivity_check(f, a)?;
                        rows.push(HyperRow {
                            function: f.clone(),
                            a,
                            lhs: pair.lhs,
                            rhs: pair.rhs,
                        });
                    }
                }
                let max_excess = rows
                    .iter()
                    .map(|r| r.lhs - r.rhs)
                    .fold(f64::NEG_INFINITY, f64::max);
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        writeln!(w, "function,a,lhs,rhs")?;
                        for r in &rows {
                            let name = serde_json::to_string(&r.function)?.replace(',', ";");
                            writeln!(w, "{name},{},{},{}", r.a, r.lhs, r.rhs)?;
                        }
                        Ok(())
                    })?;
                Ok((Outcome::Hypercontractivity { rows, max_excess }, artifact))
            }
            Task::CancorrCheck {
                pairs,
                p,
                q,
                directions,
            } => {
                let rows = self.replicate(*pairs, failures, |seed| {
                    let mut rng = rng::stream(seed, 0);
                    let pair = random_block_pair(&mut rng, *p, *q)?;
                    Ok(CancorrRow {
                        svd: canonical_correlation(&pair)?,
                        search: canonical_correlation_search(&pair, *directions, &mut rng)?,
                    })
                })?;
                let max_abs_diff = rows
                    .iter()
                    .map(|r| (r.svd - r.search).abs())
                    .fold(0.0, f64::max);
                let artifact = self
                    .artifacts
                    .write(&format!("{}.csv", self.file_stem), |w| {
                        writeln!(w, "pair,svd,search")?;
                        for (i, r) in rows.iter().enumerate() {
                            writeln!(w, "{i},{},{}", r.svd, r.search)?;
                        }
                        Ok(())
                    })?;
                Ok((Outcome::CancorrCheck { rows, max_abs_diff }, artifact))
            }
        }
    }

    /// Runs counts for `m = 0..=m_max`, pooled over replications.
    fn pooled_runs(
        &self,
        n: usize,
        reps: usize,
        m_max: usize,
        failures: &mut Vec<FailureRecord>,
    ) -> Result<Vec<RunsCounts>> {
        let u = self.source.thresholds(n, &self.tau)?;
        let per = self.replicate(reps, failures, |seed| {
            runs_profile(&self.source.path(n, seed, None)?, &u, m_max)
        })?;
        let zero: Vec<RunsCounts> = (0..=m_max)
            .map(|m| RunsCounts {
                m,
                ..Default::default()
            })
            .collect();
        Ok(per.into_iter().fold(zero, |acc, c| {
            acc.into_iter().zip(c).map(|(a, b)| a.merge(b)).collect()
        }))
    }
}

impl Source {
    /// Untransformed Gaussian path of a linear generator.
    fn cache_path(&self, n: usize, seed: u64) -> Result<SeriesMatrix> {
        match &self.kind {
            SourceKind::Linear { cache, .. } => Ok(cache.get(n)?.simulate(seed)),
            SourceKind::M4(_) => Err(Error::invalid("generator", "needs a linear generator")),
        }
    }
}

fn write_maxima(w: &mut dyn Write, records: &[MaximaRecord]) -> Result<()> {
    let d = records.first().map_or(0, |r| r.maxima.len());
    let cols: Vec<String> = (1..=d).map(|i| format!("M{i}")).collect();
    writeln!(w, "replication,nonexceed,{}", cols.join(","))?;
    for (i, r) in records.iter().enumerate() {
        let m: Vec<String> = r.maxima.iter().map(f64::to_string).collect();
        writeln!(w, "{i},{},{}", u8::from(r.nonexceed), m.join(","))?;
    }
    Ok(())
}

/// `(1/n) sum_t (x_t - xbar)(x_{t+h} - xbar)` for `h = 0..=max_lag`.
pub fn sample_autocov(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    (0..=max_lag)
        .map(|h| {
            c[..n - h]
                .iter()
                .zip(&c[h..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// The catalog used when no function list is given.
pub fn default_catalog() -> Vec<CatalogFn> {
    vec![
        CatalogFn::Exp { t: 0.5 },
        CatalogFn::Exp { t: -1.0 },
        CatalogFn::Indicator { c: 0.0 },
        CatalogFn::Indicator { c: 1.5 },
        CatalogFn::Polynomial {
            coeffs: vec![0.0, 1.0],
        },
        CatalogFn::Polynomial {
            coeffs: vec![-1.0, 0.0, 1.0],
        },
        CatalogFn::Polynomial {
            coeffs: vec![0.5, -1.0, 0.0, 0.3],
        },
        CatalogFn::Abs,
    ]
}

/// Random well-conditioned joint covariance split into `p` and `q` blocks.
pub fn random_block_pair(rng: &mut rng::PathRng, p: usize, q: usize) -> Result<GaussianBlockPair> {
    use rand::Rng;
    let n = p + q;
    let a = DMatrix::from_fn(n, n + 2, |_, _| rng.random::<f64>() - 0.5);
    let joint = &a * a.transpose() + DMatrix::identity(n, n) * 0.05;
    GaussianBlockPair::from_joint(&joint, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausslin::Family;

    fn iid_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "iid".into(),
            generator: GeneratorSpec::Linear {
                process: LinearProcessSpec::iid(1),
                transform: None,
            },
            n: 100,
            tau: vec![1.0],
            reps: 1,
            base_seed: 42,
            engine: None,
            analyses: vec![Analysis::new(Task::Nonexceed { m_trunc: None })],
            output: None,
        }
    }

    #[test]
    fn single_replication_gives_one_record() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_with(&iid_config(), Engine::default(), Some(dir.path())).unwrap();
        let csv = fs::read_to_string(dir.path().join("00_nonexceed.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("replication,nonexceed,M1\n0,"));
        let Outcome::Nonexceed { report, u, .. } = &summary.results[0].outcome else {
            panic!()
        };
        assert_eq!(report.reps, 1);
        assert!((u[0] - normal_isf(0.01)).abs() < 1e-12);
    }

    #[test]
    fn outputs_are_byte_identical_and_engine_free() {
        let mut cfg = iid_config();
        cfg.reps = 150;
        cfg.analyses
            .push(Analysis::new(Task::Runs { m: vec![0, 1] }));
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_with(&cfg, Engine::Parallel, Some(a.path())).unwrap();
        run_with(&cfg, Engine::Sequential, Some(b.path())).unwrap();
        for name in ["summary.json", "00_nonexceed.csv", "01_runs.csv"] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap(),
                "{name}"
            );
        }
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut cfg = iid_config();
        cfg.generator = GeneratorSpec::Linear {
            process: LinearProcessSpec::new(
                1,
                Family::Polynomial {
                    beta: 0.4,
                    scale: vec![vec![1.0]],
                },
                10,
            ),
            transform: None,
        };
        match cfg.validate().unwrap_err() {
            Error::Invalid { field, .. } => {
                assert!(field.starts_with("generator.process"), "{field}")
            }
            e => panic!("{e}"),
        }
        let mut cfg = iid_config();
        cfg.analyses.push(Analysis::new(Task::Blocks { b: 0 }));
        match cfg.validate().unwrap_err() {
            Error::Invalid { field, .. } => assert_eq!(field, "analyses[1].b"),
            e => panic!("{e}"),
        }
        let mut cfg = iid_config();
        cfg.tau = vec![1.0, 1.0];
        assert!(cfg.validate().unwrap_err().is_validation());
    }

    #[test]
    fn unstandardized_thresholds_rejected() {
        let src = Source::new(&GeneratorSpec::Linear {
            process: LinearProcessSpec::new(
                1,
                Family::Polynomial {
                    beta: 1.0,
                    scale: vec![vec![1.0]],
                },
                10,
            ),
            transform: None,
        })
        .unwrap();
        assert!(src.thresholds(100, &[1.0]).unwrap_err().is_validation());
    }

    #[test]
    fn failures_are_recorded_then_abort() {
        let mut failures = Vec::new();
        let ok: Vec<Result<u32>> = (0..200)
            .map(|i| {
                if i == 5 {
                    Err(Error::Numerical("x".into()))
                } else {
                    Ok(i)
                }
            })
            .collect();
        let kept = gather(0, 7, ok, &mut failures).unwrap();
        assert_eq!(kept.len(), 199);
        assert_eq!(failures[0].replication, 5);
        assert_eq!(failures[0].seed, 7 ^ 5);
        let bad: Vec<Result<u32>> = (0..200)
            .map(|i| {
                if i < 3 {
                    Err(Error::Numerical("x".into()))
                } else {
                    Ok(i)
                }
            })
            .collect();
        assert!(matches!(
            gather(0, 7, bad, &mut failures),
            Err(Error::Replication { index: 0, .. })
        ));
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{
          "name": "demo", "n": 1000, "tau": [1.0], "reps": 10, "base_seed": 3,
          "generator": {"kind": "linear",
             "process": {"d0": 1, "family": "log_boundary", "params": {"q": 2.0, "B": [[1.0]]}, "L": 100, "standardize": true},
             "transform": {"m": 0, "parts": [{"kind": "pareto", "alpha": 1.0, "coord": 0}]}},
          "analyses": [{"kind": "runs", "m": [0, 3], "n": 5000},
                       {"kind": "pointproc", "r": 50, "p": 5, "m": 3, "g": 0.3678}]
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(cfg.analyses[0].n, Some(5000));
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
