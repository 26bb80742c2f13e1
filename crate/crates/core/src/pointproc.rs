//! Gapped-block exceedance point process and Poisson diagnostics.
//!
//! The path is cut into units of `r` block samples followed by `p` gap
//! samples. Block `j` (1-based) covers `k = (j-1)(r+p)+1 ..= (j-1)(r+p)+r`
//! and emits a point at `j(r+p)/n` when some `Y_k` in it exceeds `u`. Only
//! the `floor(n / (r+p))` complete units are used; the trailing remainder is
//! dropped, so the horizon is `T = floor(n/(r+p)) (r+p) / n <= 1`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::m4::ThresholdVector;
use crate::rng::PathRng;
use crate::series::SeriesMatrix;

pub const PATTERN_CSV_HEADER: &str = "replication,block_index,time";
/// Minimum number of patterns for [`poisson_diagnostics`].
pub const MIN_PATTERNS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapConfig {
    pub r: usize,
    pub p: usize,
    pub m: usize,
}

impl GapConfig {
    pub fn new(r: usize, p: usize, m: usize) -> Result<Self> {
        let cfg = Self { r, p, m };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.r <= self.m {
            return Err(Error::invalid(
                "r",
                format!(
                    "block length {} must exceed the window m = {}",
                    self.r, self.m
                ),
            ));
        }
        if self.p < self.m {
            return Err(Error::invalid(
                "p",
                format!("gap {} must be at least the window m = {}", self.p, self.m),
            ));
        }
        Ok(())
    }

    pub fn unit(&self) -> usize {
        self.r + self.p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPattern {
    /// 1-based block indices carrying a point.
    pub blocks: Vec<usize>,
    /// `times[i] = blocks[i] (r+p) / n`.
    pub times: Vec<f64>,
    pub horizon: f64,
}

impl PointPattern {
    /// Pattern from explicit times; they must be strictly increasing within
    /// `[0, horizon]`.
    pub fn from_times(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be positive"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("times", "must be strictly increasing"));
        }
        if times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err(Error::invalid("times", "must lie in [0, horizon]"));
        }
        Ok(Self {
            blocks: (1..=times.len()).collect(),
            times,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Points with time in `[lo, hi)`.
    pub fn count_in(&self, lo: f64, hi: f64) -> usize {
        self.times.iter().filter(|&&t| t >= lo && t < hi).count()
    }
}

pub fn gapped_blocks(
    y: &SeriesMatrix,
    u: &ThresholdVector,
    cfg: &GapConfig,
) -> Result<PointPattern> {
    cfg.validate()?;
    if y.d() != u.d() {
        return Err(Error::Dimension(format!(
            "series has d = {}, thresholds have {}",
            y.d(),
            u.d()
        )));
    }
    let n = y.n();
    let unit = cfg.unit();
    if n < unit {
        return Err(Error::Dimension(format!(
            "path of length {n} is shorter than r + p = {unit}"
        )));
    }
    let units = n / unit;
    let mut blocks = Vec::new();
    for j in 0..units {
        let start = j * unit;
        if (start..start + cfg.r).any(|k| u.exceeds(y.row(k))) {
            blocks.push(j + 1);
        }
    }
    let times = blocks
        .iter()
        .map(|&j| (j * unit) as f64 / n as f64)
        .collect();
    Ok(PointPattern {
        blocks,
        times,
        horizon: (units * unit) as f64 / n as f64,
    })
}

/// Limiting intensity of the gapped-block process,
/// `-[(r-m)/(r+p) theta_m + R/(r+p)] log G` with `R = sum_{l<m} theta_l`.
/// Reported as a nonnegative rate.
pub fn lambda_rp(theta_list: &[f64], theta_m: f64, g: f64, cfg: &GapConfig) -> Result<f64> {
    cfg.validate()?;
    if theta_list.len() < cfg.m {
        return Err(Error::invalid(
            "theta_list",
            format!(
                "need theta_0..theta_{} ({} values)",
                cfg.m.saturating_sub(1),
                cfg.m
            ),
        ));
    }
    if let Some(i) = theta_list
        .iter()
        .chain(std::iter::once(&theta_m))
        .position(|t| !(0.0..=1.0).contains(t))
    {
        return Err(Error::invalid(
            format!("theta_list[{i}]"),
            "must lie in [0, 1]",
        ));
    }
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::invalid("G", format!("must lie in (0, 1), got {g}")));
    }
    let unit = cfg.unit() as f64;
    let r_sum: f64 = theta_list[..cfg.m].iter().sum();
    Ok(-((cfg.r - cfg.m) as f64 / unit * theta_m + r_sum / unit) * g.ln())
}

pub fn write_patterns<W: Write>(mut out: W, patterns: &[PointPattern]) -> Result<()> {
    writeln!(out, "{PATTERN_CSV_HEADER}")?;
    for (rep, pat) in patterns.iter().enumerate() {
        for (b, t) in pat.blocks.iter().zip(&pat.times) {
            writeln!(out, "{rep},{b},{t}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonReport {
    pub patterns: usize,
    pub lambda_target: f64,
    /// Mean number of points per unit time.
    pub mean_count: f64,
    /// Sample variance over mean of the per-pattern counts.
    pub dispersion_index: f64,
    /// KS distance of the inter-arrival times of the concatenated patterns
    /// against Exponential(lambda_target).
    pub ks_interarrival: f64,
    pub ks_pvalue: f64,
    pub interarrivals: usize,
    /// Pearson statistic of per-bin counts against Poisson(lambda * width).
    pub chi2_counts: f64,
    pub chi2_dof: usize,
    pub chi2_pvalue: f64,
    /// Every pattern was empty; the statistics above are zero.
    pub degenerate: bool,
}

/// Asymptotic Kolmogorov tail `P(sup|B| > x)`.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * x * x).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

fn poisson_pmf(k: usize, mean: f64) -> f64 {
    let lg = statrs::function::gamma::ln_gamma(k as f64 + 1.0);
    (k as f64 * mean.ln() - mean - lg).exp()
}

pub fn poisson_diagnostics(
    patterns: &[PointPattern],
    lambda_target: f64,
    bins: usize,
) -> Result<PoissonReport> {
    if patterns.len() < MIN_PATTERNS {
        return Err(Error::invalid(
            "patterns",
            format!(
                "need at least {MIN_PATTERNS} replications, got {}",
                patterns.len()
            ),
        ));
    }
    if !(lambda_target > 0.0 && lambda_target.is_finite()) {
        return Err(Error::invalid("lambda_target", "must be positive"));
    }
    if bins == 0 {
        return Err(Error::invalid("bins", "must be positive"));
    }
    let reps = patterns.len();
    let horizon = patterns[0].horizon;
    let counts: Vec<f64> = patterns.iter().map(|p| p.len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / reps as f64;
    if mean == 0.0 {
        return Ok(PoissonReport {
            patterns: reps,
            lambda_target,
            mean_count: 0.0,
            dispersion_index: 0.0,
            ks_interarrival: 0.0,
            ks_pvalue: 0.0,
            interarrivals: 0,
            chi2_counts: 0.0,
            chi2_dof: 0,
            chi2_pvalue: 0.0,
            degenerate: true,
        });
    }
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;

    // Patterns laid end to end on [0, sum of horizons).
    let mut gaps = Vec::new();
    let mut offset = 0.0;
    let mut last = 0.0;
    for p in patterns {
        for &t in &p.times {
            gaps.push(offset + t - last);
            last = offset + t;
        }
        offset += p.horizon;
    }
    gaps.sort_by(f64::total_cmp);
    let m = gaps.len() as f64;
    let ks = gaps
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let f = 1.0 - (-lambda_target * g).exp();
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);

    // Pearson on the distribution of counts per bin.
    let width = horizon / bins as f64;
    let per_bin: Vec<usize> = patterns
        .iter()
        .flat_map(|p| {
            (0..bins).map(move |b| {
                let lo = b as f64 * width;
                let hi = if b + 1 == bins {
                    f64::INFINITY
                } else {
                    lo + width
                };
                p.count_in(lo, hi)
            })
        })
        .collect();
    let total = per_bin.len() as f64;
    let mu = lambda_target * width;
    // Categories 0..K-1 and ">= K", with K grown while the expectation
    // of the open tail category stays at least 5.
    let mut k_cat = 1;
    while total * (1.0 - (0..=k_cat).map(|k| poisson_pmf(k, mu)).sum::<f64>()) >= 5.0 {
        k_cat += 1;
    }
    let mut chi2 = 0.0;
    let mut cum = 0.0;
    for k in 0..=k_cat {
        let observed = if k < k_cat {
            per_bin.iter().filter(|&&c| c == k).count()
        } else {
            per_bin.iter().filter(|&&c| c >= k).count()
        } as f64;
        let prob = if k < k_cat {
            poisson_pmf(k, mu)
        } else {
            1.0 - cum
        };
        cum += prob;
        let expected = total * prob;
        if expected > 0.0 {
            chi2 += (observed - expected).powi(2) / expected;
        }
    }
    let dof = k_cat;
    let chi2_pvalue = ChiSquared::new(dof as f64)
        .map(|d| d.sf(chi2))
        .unwrap_or(f64::NAN);

    Ok(PoissonReport {
        patterns: reps,
        lambda_target,
        mean_count: mean / horizon,
        dispersion_index: var / mean,
        ks_interarrival: ks,
        ks_pvalue: kolmogorov_sf(ks * m.sqrt()),
        interarrivals: gaps.len(),
        chi2_counts: chi2,
        chi2_dof: dof,
        chi2_pvalue,
        degenerate: false,
    })
}

/// Homogeneous Poisson(lambda) pattern on `[0, horizon]`.
pub fn synthetic_poisson(rng: &mut PathRng, lambda: f64, horizon: f64) -> Result<PointPattern> {
    let count = if lambda * horizon > 0.0 {
        Poisson::new(lambda * horizon)
            .map_err(|e| Error::invalid("lambda", e.to_string()))?
            .sample(rng) as usize
    } else {
        0
    };
    let mut times: Vec<f64> = (0..count).map(|_| rng.random::<f64>() * horizon).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    PointPattern::from_times(times, horizon)
}
