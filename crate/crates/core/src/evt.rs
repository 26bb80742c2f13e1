//! Componentwise maxima, extremal-index estimators, non-exceedance
//! probabilities, `D'(u_n)` statistics and extremal-independence scans.
//!
//! A row `Y_k` exceeds `u` when `Y_{k,i} > u_i` for some `i` (`Y_k` is not
//! `<= u`); equality counts as a non-exceedance.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chaos::joint_tail_bound;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::m4::ThresholdVector;
use crate::series::SeriesMatrix;

/// Minimum number of exceedances for the runs and blocks estimators.
pub const MIN_EXCEEDANCES: usize = 20;
/// Minimum number of blocks for [`blocks_theta`].
pub const MIN_BLOCKS: usize = 50;
/// Minimum number of replications for [`empirical_nonexceed`].
pub const MIN_NONEXCEED_REPS: usize = 100;

pub const ESTIMATOR_CSV_HEADER: &str = "method,m_or_b,estimate,stderr,exceed_count";

pub fn cmax(y: &SeriesMatrix) -> Vec<f64> {
    let mut m = vec![f64::NEG_INFINITY; y.d()];
    for row in y.rows() {
        for (acc, v) in m.iter_mut().zip(row) {
            *acc = acc.max(*v);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximaRecord {
    pub n: usize,
    pub tau: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(rename = "M")]
    pub maxima: Vec<f64>,
    pub nonexceed: bool,
}

pub fn maxima_record(y: &SeriesMatrix, u: &ThresholdVector) -> Result<MaximaRecord> {
    check_dims(y, u)?;
    let maxima = cmax(y);
    Ok(MaximaRecord {
        n: y.n(),
        tau: u.tau.clone(),
        u: u.u.clone(),
        nonexceed: !u.exceeds(&maxima),
        maxima,
    })
}

fn check_dims(y: &SeriesMatrix, u: &ThresholdVector) -> Result<()> {
    if y.d() != u.d() {
        return Err(Error::Dimension(format!(
            "series has d = {}, thresholds have {}",
            y.d(),
            u.d()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", content = "param", rename_all = "snake_case")]
pub enum Method {
    Runs(usize),
    Blocks(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub stderr: f64,
    pub count_exceed: usize,
    pub method: Method,
}

impl EstimatorReport {
    pub fn csv_row(&self) -> String {
        let (name, param) = match self.method {
            Method::Runs(m) => ("runs", m),
            Method::Blocks(b) => ("blocks", b),
        };
        format!(
            "{name},{param},{},{},{}",
            self.estimate, self.stderr, self.count_exceed
        )
    }
}

pub fn write_estimates<W: Write>(mut out: W, reports: &[EstimatorReport]) -> Result<()> {
    writeln!(out, "{ESTIMATOR_CSV_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Indices `k` with `Y_k` exceeding `u`.
pub fn exceedance_times(y: &SeriesMatrix, u: &ThresholdVector) -> Result<Vec<usize>> {
    check_dims(y, u)?;
    Ok(y.rows()
        .enumerate()
        .filter(|(_, row)| u.exceeds(row))
        .map(|(k, _)| k)
        .collect())
}

/// Sufficient statistics of the runs estimator on one path: `exceed` counts
/// `k` with `k + m < n` and `Y_k` exceeding, `clear` those among them with
/// no exceedance at `k+1..=k+m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunsCounts {
    pub m: usize,
    pub exceed: usize,
    pub clear: usize,
}

impl RunsCounts {
    pub fn merge(self, other: RunsCounts) -> RunsCounts {
        debug_assert_eq!(self.m, other.m);
        RunsCounts {
            m: self.m,
            exceed: self.exceed + other.exceed,
            clear: self.clear + other.clear,
        }
    }
}

fn runs_from_times(times: &[usize], n: usize, m: usize) -> RunsCounts {
    let mut c = RunsCounts {
        m,
        ..Default::default()
    };
    for (idx, &k) in times.iter().enumerate() {
        if k + m >= n {
            break;
        }
        c.exceed += 1;
        if times.get(idx + 1).is_none_or(|&next| next > k + m) {
            c.clear += 1;
        }
    }
    c
}

/// Runs counts for every `m` in `0..=m_max` from one pass over the path.
pub fn runs_profile(
    y: &SeriesMatrix,
    u: &ThresholdVector,
    m_max: usize,
) -> Result<Vec<RunsCounts>> {
    let times = exceedance_times(y, u)?;
    Ok((0..=m_max)
        .map(|m| runs_from_times(&times, y.n(), m))
        .collect())
}

pub fn runs_counts(y: &SeriesMatrix, u: &ThresholdVector, m: usize) -> Result<RunsCounts> {
    let times = exceedance_times(y, u)?;
    Ok(runs_from_times(&times, y.n(), m))
}

/// `theta_m` estimate from (pooled) counts; `m = 0` gives exactly 1.
pub fn runs_from_counts(c: RunsCounts) -> Result<EstimatorReport> {
    if c.exceed < MIN_EXCEEDANCES {
        return Err(Error::InsufficientExceedances {
            observed: c.exceed,
            required: MIN_EXCEEDANCES,
        });
    }
    let theta = c.clear as f64 / c.exceed as f64;
    Ok(EstimatorReport {
        estimate: theta,
        stderr: (theta * (1.0 - theta) / c.exceed as f64).sqrt(),
        count_exceed: c.exceed,
        method: Method::Runs(c.m),
    })
}

/// `#{k: Y_k exceeds, Y_{k+1..=k+m} do not} / #{k: Y_k exceeds}`.
pub fn runs_theta(y: &SeriesMatrix, u: &ThresholdVector, m: usize) -> Result<EstimatorReport> {
    runs_from_counts(runs_counts(y, u, m)?)
}

/// Per-block exceedance counts over the `n / b` complete blocks.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockCounts {
    pub b: usize,
    /// Exceedances in each block that has at least one.
    pub per_block: Vec<usize>,
    pub blocks: usize,
}

impl BlockCounts {
    pub fn merge(mut self, other: BlockCounts) -> BlockCounts {
        debug_assert_eq!(self.b, other.b);
        self.per_block.extend(other.per_block);
        self.blocks += other.blocks;
        self
    }
}

pub fn block_counts(y: &SeriesMatrix, u: &ThresholdVector, b: usize) -> Result<BlockCounts> {
    if b == 0 {
        return Err(Error::invalid("b", "block length must be positive"));
    }
    let blocks = y.n() / b;
    if blocks < MIN_BLOCKS {
        return Err(Error::invalid(
            "b",
            format!("n / b = {blocks} blocks, need at least {MIN_BLOCKS}"),
        ));
    }
    let mut per_block = Vec::new();
    let mut current = (usize::MAX, 0usize);
    for k in exceedance_times(y, u)? {
        let blk = k / b;
        if blk >= blocks {
            break;
        }
        if blk != current.0 {
            if current.1 > 0 {
                per_block.push(current.1);
            }
            current = (blk, 0);
        }
        current.1 += 1;
    }
    if current.1 > 0 {
        per_block.push(current.1);
    }
    Ok(BlockCounts {
        b,
        per_block,
        blocks,
    })
}

/// Blocks estimate (blocks with an exceedance) / (exceedances), clamped to
/// `[0, 1]`. The standard error is the ratio-estimator sandwich with
/// blocks as units.
pub fn blocks_from_counts(c: &BlockCounts) -> Result<EstimatorReport> {
    let total: usize = c.per_block.iter().sum();
    if total < MIN_EXCEEDANCES {
        return Err(Error::InsufficientExceedances {
            observed: total,
            required: MIN_EXCEEDANCES,
        });
    }
    let theta = c.per_block.len() as f64 / total as f64;
    let resid: f64 = c
        .per_block
        .iter()
        .map(|&n| (1.0 - theta * n as f64).powi(2))
        .sum();
    Ok(EstimatorReport {
        estimate: theta.clamp(0.0, 1.0),
        stderr: resid.sqrt() / total as f64,
        count_exceed: total,
        method: Method::Blocks(c.b),
    })
}

pub fn blocks_theta(y: &SeriesMatrix, u: &ThresholdVector, b: usize) -> Result<EstimatorReport> {
    blocks_from_counts(&block_counts(y, u, b)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonexceedReport {
    pub p_hat: f64,
    pub ci_halfwidth: f64,
    pub reps: usize,
    pub nonexceed: usize,
}

impl NonexceedReport {
    pub fn from_flags(flags: &[bool]) -> Self {
        let reps = flags.len();
        let nonexceed = flags.iter().filter(|&&f| f).count();
        let p = nonexceed as f64 / reps as f64;
        Self {
            p_hat: p,
            ci_halfwidth: 1.96 * (p * (1.0 - p) / reps as f64).sqrt(),
            reps,
            nonexceed,
        }
    }
}

/// Fraction of replications with `M_n <= u`. `generator(seed)` produces one
/// path; replication `i` uses `base_seed ^ i`.
pub fn empirical_nonexceed<G>(
    engine: Engine,
    generator: G,
    u: &ThresholdVector,
    reps: usize,
    base_seed: u64,
) -> Result<NonexceedReport>
where
    G: Fn(u64) -> Result<SeriesMatrix> + Sync + Send,
{
    if reps < MIN_NONEXCEED_REPS {
        return Err(Error::invalid(
            "reps",
            format!("need at least {MIN_NONEXCEED_REPS} replications, got {reps}"),
        ));
    }
    let flags = engine.replicate_all(reps, base_seed, |_, seed| {
        let y = generator(seed)?;
        Ok(maxima_record(&y, u)?.nonexceed)
    })?;
    Ok(NonexceedReport::from_flags(&flags))
}

/// Joint exceedance counts `#{t: Y_t > u, Y_{t+j} > u}` and the number of
/// available pairs `N - j`, for lags `1..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCounts {
    pub len: usize,
    pub joint: Vec<usize>,
}

pub fn pair_counts(y: &[f64], u: f64, max_lag: usize) -> PairCounts {
    let times: Vec<usize> = (0..y.len()).filter(|&t| y[t] > u).collect();
    let mut joint = vec![0; max_lag + 1];
    for (idx, &t) in times.iter().enumerate() {
        for &s in &times[idx + 1..] {
            let lag = s - t;
            if lag > max_lag {
                break;
            }
            joint[lag] += 1;
        }
    }
    PairCounts {
        len: y.len(),
        joint,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DprimeRow {
    pub k: usize,
    pub statistic: f64,
    pub stderr: f64,
    /// Joint exceedances pooled over replications at lags `1..=n/k`.
    pub joint_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DprimeReport {
    pub n: usize,
    pub u: f64,
    pub reps: usize,
    pub rows: Vec<DprimeRow>,
    /// Some row saw fewer than 10 joint events: its interval is unreliable.
    pub wide_ci: bool,
}

/// `n * sum_{j=1}^{n/k} P(Y_0 > u, Y_j > u)` for each `k`, with the joint
/// probabilities estimated by pair counts along each replication path and
/// averaged over replications. Paths must be univariate and longer than
/// `n / min(k)`.
pub fn dprime_stat<G>(
    engine: Engine,
    generator: G,
    n: usize,
    u: f64,
    k_list: &[usize],
    reps: usize,
    base_seed: u64,
) -> Result<DprimeReport>
where
    G: Fn(u64) -> Result<SeriesMatrix> + Sync + Send,
{
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::invalid("k_list", "needs positive entries"));
    }
    if reps < 2 {
        return Err(Error::invalid("reps", "need at least 2 replications"));
    }
    let max_lag = n / k_list.iter().min().copied().unwrap_or(1);
    if max_lag == 0 {
        return Err(Error::invalid("k_list", "n / k must be at least 1"));
    }
    let per_rep = engine.replicate_all(reps, base_seed, |_, seed| {
        let y = generator(seed)?;
        if y.d() != 1 {
            return Err(Error::Dimension(
                "dprime_stat needs a univariate path".into(),
            ));
        }
        if y.n() <= max_lag {
            return Err(Error::Dimension(format!(
                "path length {} does not exceed the largest lag {max_lag}",
                y.n()
            )));
        }
        Ok(pair_counts(y.values(), u, max_lag))
    })?;
    let rows = k_list
        .iter()
        .map(|&k| {
            let lags = n / k;
            let stats: Vec<f64> = per_rep
                .iter()
                .map(|pc| {
                    n as f64
                        * (1..=lags)
                            .map(|j| pc.joint[j] as f64 / (pc.len - j) as f64)
                            .sum::<f64>()
                })
                .collect();
            let (mean, sd) = mean_sd(&stats);
            DprimeRow {
                k,
                statistic: mean,
                stderr: sd / (reps as f64).sqrt(),
                joint_events: per_rep
                    .iter()
                    .map(|pc| pc.joint[1..=lags].iter().sum::<usize>())
                    .sum(),
            }
        })
        .collect::<Vec<_>>();
    Ok(DprimeReport {
        n,
        u,
        reps,
        wide_ci: rows.iter().any(|r| r.joint_events < 10),
        rows,
    })
}

pub(crate) fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Exceedance counts of a bivariate sample at a list of levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCounts {
    pub samples: usize,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    pub joint: Vec<usize>,
}

impl ScanCounts {
    pub fn merge(mut self, other: &ScanCounts) -> ScanCounts {
        self.samples += other.samples;
        for (a, b) in [
            (&mut self.first, &other.first),
            (&mut self.second, &other.second),
            (&mut self.joint, &other.joint),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self
    }
}

pub fn scan_counts(pairs: &SeriesMatrix, levels: &[f64]) -> Result<ScanCounts> {
    if pairs.d() != 2 {
        return Err(Error::Dimension("scan needs a bivariate sample".into()));
    }
    let z = vec![0; levels.len()];
    let mut c = ScanCounts {
        samples: pairs.n(),
        first: z.clone(),
        second: z.clone(),
        joint: z,
    };
    for row in pairs.rows() {
        for (l, &x) in levels.iter().enumerate() {
            let (a, b) = (row[0] > x, row[1] > x);
            c.first[l] += usize::from(a);
            c.second[l] += usize::from(b);
            c.joint[l] += usize::from(a && b);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub x: f64,
    pub fbar: f64,
    /// `P(Y_1 > x | Y_2 > x)`
    pub conditional: f64,
    pub joint: f64,
    pub joint_stderr: f64,
    /// `fbar^{2/(1+|rho|)}`
    pub joint_bound: f64,
    pub conditional_bound: f64,
}

impl ScanRow {
    /// Joint tail within the hypercontractive bound up to `z` standard errors.
    pub fn within_bound(&self, z: f64) -> bool {
        self.joint <= self.joint_bound + z * self.joint_stderr
    }
}

pub const SCAN_CSV_HEADER: &str =
    "x,fbar,conditional,joint,joint_stderr,joint_bound,conditional_bound";

impl ScanRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.x,
            self.fbar,
            self.conditional,
            self.joint,
            self.joint_stderr,
            self.joint_bound,
            self.conditional_bound
        )
    }
}

/// Table of empirical conditional exceedances against the bound implied by
/// the canonical correlation `rho` of the underlying Gaussian pair. Both
/// marginals must have the exact tail `fbar`.
pub fn scan_table(
    counts: &ScanCounts,
    levels: &[f64],
    fbar: impl Fn(f64) -> f64,
    rho: f64,
) -> Vec<ScanRow> {
    let n = counts.samples as f64;
    levels
        .iter()
        .enumerate()
        .map(|(l, &x)| {
            let f = fbar(x);
            let joint = counts.joint[l] as f64 / n;
            let bound = joint_tail_bound(f, rho);
            ScanRow {
                x,
                fbar: f,
                conditional: if counts.second[l] > 0 {
                    counts.joint[l] as f64 / counts.second[l] as f64
                } else {
                    0.0
                },
                joint,
                joint_stderr: (joint * (1.0 - joint) / n).sqrt(),
                joint_bound: bound,
                conditional_bound: bound / f,
            }
        })
        .collect()
}

pub fn extremal_independence_scan(
    pairs: &SeriesMatrix,
    levels: &[f64],
    fbar: impl Fn(f64) -> f64,
    rho: f64,
) -> Result<Vec<ScanRow>> {
    Ok(scan_table(&scan_counts(pairs, levels)?, levels, fbar, rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::m4::{build, innovations, thresholds, M4Spec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn column(v: &[f64]) -> SeriesMatrix {
        SeriesMatrix::from_column(v.to_vec()).unwrap()
    }

    fn level(u: f64) -> ThresholdVector {
        ThresholdVector::fixed(1, vec![1.0], vec![u]).unwrap()
    }

    #[test]
    fn cmax_hand_values() {
        let y = SeriesMatrix::from_rows(3, 2, vec![1.0, 5.0, 4.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(cmax(&y), vec![4.0, 5.0]);
        assert_eq!(cmax(&column(&[2.5; 7])), vec![2.5]);
    }

    #[test]
    fn maxima_record_ties_are_nonexceedances() {
        let rec = maxima_record(&column(&[1.0, 3.0, 2.0]), &level(3.0)).unwrap();
        assert!(rec.nonexceed);
        assert!(
            !maxima_record(&column(&[1.0, 3.1]), &level(3.0))
                .unwrap()
                .nonexceed
        );
    }

    #[test]
    fn runs_hand_counts() {
        // Exceedances at 1, 2, 6, 9 (n = 10).
        let mut v = vec![0.0; 10];
        for k in [1, 2, 6, 9] {
            v[k] = 5.0;
        }
        let y = column(&v);
        let u = level(1.0);
        assert_eq!(
            runs_counts(&y, &u, 0).unwrap(),
            RunsCounts {
                m: 0,
                exceed: 4,
                clear: 4
            }
        );
        assert_eq!(
            runs_counts(&y, &u, 1).unwrap(),
            RunsCounts {
                m: 1,
                exceed: 3,
                clear: 2
            }
        );
        assert_eq!(
            runs_counts(&y, &u, 3).unwrap(),
            RunsCounts {
                m: 3,
                exceed: 3,
                clear: 1
            }
        );
        assert_eq!(
            runs_counts(&y, &u, 4).unwrap(),
            RunsCounts {
                m: 4,
                exceed: 2,
                clear: 0
            }
        );
        let profile = runs_profile(&y, &u, 4).unwrap();
        assert_eq!(profile[1], runs_counts(&y, &u, 1).unwrap());
        assert!(matches!(
            runs_theta(&y, &u, 1),
            Err(Error::InsufficientExceedances {
                observed: 3,
                required: 20
            })
        ));
    }

    #[test]
    fn iid_estimators_near_one() {
        let spec = M4Spec::univariate(1.0, &[1.0]);
        let n = 200_000;
        let y = innovations(&spec, n, 3).unwrap();
        let u = thresholds(&spec, n / 500, &[1.0]).unwrap();
        let runs = runs_theta(&y, &u, 1).unwrap();
        assert!((runs.estimate - 1.0).abs() < 0.02, "{runs:?}");
        // Blocks need few exceedances per block to be unbiased.
        let big = innovations(&spec, 1_000_000, 4).unwrap();
        let high = thresholds(&spec, 20_000, &[1.0]).unwrap();
        let blocks = blocks_theta(&big, &high, 500).unwrap();
        assert!((blocks.estimate - 1.0).abs() < 0.05, "{blocks:?}");
    }

    #[test]
    fn moving_maxima_estimators_agree() {
        let spec = M4Spec::univariate(1.0, &[1.0; 4]);
        let n = 400_000;
        let y = build(&innovations(&spec, n + 3, 8).unwrap(), &spec, None).unwrap();
        let u = thresholds(&spec, 2000, &[1.0]).unwrap();
        let runs = runs_theta(&y, &u, 3).unwrap();
        let blocks = blocks_theta(&y, &u, 2000).unwrap();
        assert!(
            (runs.estimate - 0.25).abs() < 4.0 * runs.stderr + 0.01,
            "{runs:?}"
        );
        let joint = (runs.stderr.powi(2) + blocks.stderr.powi(2)).sqrt();
        assert!(
            (runs.estimate - blocks.estimate).abs() < 3.0 * joint,
            "{runs:?} {blocks:?}"
        );
    }

    #[test]
    fn blocks_degenerate_all_exceed() {
        let y = column(&vec![9.0; 1000]);
        let r = blocks_theta(&y, &level(1.0), 10).unwrap();
        assert_relative_eq!(r.estimate, 0.1, epsilon = 1e-15);
        assert!(blocks_theta(&y, &level(1.0), 100)
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn estimator_csv() {
        let r = EstimatorReport {
            estimate: 0.25,
            stderr: 0.01,
            count_exceed: 40,
            method: Method::Runs(3),
        };
        let mut buf = Vec::new();
        write_estimates(&mut buf, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "method,m_or_b,estimate,stderr,exceed_count\nruns,3,0.25,0.01,40\n"
        );
    }

    #[test]
    fn nonexceed_iid_exact_target() {
        let spec = M4Spec::univariate(1.0, &[1.0]);
        let n = 50;
        let u = thresholds(&spec, n, &[1.0]).unwrap();
        let report = empirical_nonexceed(
            Engine::default(),
            |seed| innovations(&spec, n, seed),
            &u,
            4000,
            17,
        )
        .unwrap();
        let target = (1.0 - 1.0 / n as f64).powi(n as i32);
        assert!(
            (report.p_hat - target).abs() < 2.0 * report.ci_halfwidth,
            "{report:?}"
        );
        assert!(
            empirical_nonexceed(Engine::default(), |s| innovations(&spec, n, s), &u, 99, 0)
                .is_err()
        );
    }

    #[test]
    fn pair_counts_hand() {
        let pc = pair_counts(&[2.0, 0.0, 2.0, 2.0, 0.0], 1.0, 3);
        assert_eq!(pc.joint, vec![0, 1, 1, 1]);
    }

    #[test]
    fn dprime_iid_matches_independence() {
        let spec = M4Spec::univariate(1.0, &[1.0]);
        let n = 256;
        let report = dprime_stat(
            Engine::default(),
            |seed| innovations(&spec, 20_000, seed),
            n,
            n as f64,
            &[2, 4, 8, 16],
            200,
            5,
        )
        .unwrap();
        for row in &report.rows {
            let want = 1.0 / row.k as f64;
            assert!((row.statistic - want).abs() < 3.0 * row.stderr, "{row:?}");
        }
        assert!(!report.wide_ci);
    }

    #[test]
    fn scan_independent_pair() {
        let spec = M4Spec::iid(1.0, [0, 0], vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
        let w = innovations(&spec, 400_000, 2).unwrap();
        let rows = extremal_independence_scan(&w, &[10.0, 20.0], |x| 1.0 / x, 0.0).unwrap();
        for r in &rows {
            let se = (r.fbar * (1.0 - r.fbar) / (r.fbar * 400_000.0)).sqrt();
            assert!((r.conditional - r.fbar).abs() < 4.0 * se, "{r:?}");
            assert!(r.within_bound(4.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cmax_shuffle_invariant(mut v in prop::collection::vec(-100.0f64..100.0, 1..50), seed in any::<u64>()) {
            let before = cmax(&column(&v));
            let mut rng = crate::rng::stream(seed, 0);
            use rand::seq::SliceRandom;
            v.shuffle(&mut rng);
            prop_assert_eq!(before, cmax(&column(&v)));
        }

        #[test]
        fn runs_m0_is_one(v in prop::collection::vec(0.0f64..10.0, 30..200)) {
            let c = runs_counts(&column(&v), &level(0.5), 0).unwrap();
            prop_assert_eq!(c.exceed, c.clear);
            if c.exceed >= MIN_EXCEEDANCES {
                prop_assert_eq!(runs_from_counts(c).unwrap().estimate, 1.0);
            }
        }

        #[test]
        fn runs_profile_matches_single(v in prop::collection::vec(0.0f64..10.0, 5..200), m in 0usize..6) {
            let y = column(&v);
            let u = level(7.0);
            prop_assert_eq!(runs_profile(&y, &u, 6).unwrap()[m], runs_counts(&y, &u, m).unwrap());
            // Brute force.
            let n = v.len();
            let exceed = (0..n).filter(|&k| k + m < n && v[k] > 7.0).count();
            let clear = (0..n)
                .filter(|&k| k + m < n && v[k] > 7.0 && (k + 1..=k + m).all(|j| v[j] <= 7.0))
                .count();
            prop_assert_eq!(runs_counts(&y, &u, m).unwrap(), RunsCounts { m, exceed, clear });
        }
    }
}
