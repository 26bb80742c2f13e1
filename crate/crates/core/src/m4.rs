//! Maxima of moving maxima
//! `Y_{k,i} = max_r max_j a_{ij,r} W_{k-r,j}` over a finite two-sided lag
//! window, with Pareto(alpha) innovations `W`, and the closed-form limits
//! `A_i`, `G(tau)`, `theta(tau)` and their truncated versions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gausslin::{make_coeffs, LinearProcessSpec, SimulatorCache};
use crate::rng::{self, RNG_ALGORITHM};
use crate::series::{SeriesMatrix, SeriesMeta};
use crate::subordinate::{apply, Part, WindowTransform};

/// With a finite lag window the moment condition on the coefficients
/// holds trivially.
pub const SUMMABILITY: &str = "finite-window: vacuous";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMap {
    Pareto,
    FoldedPareto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Innovation {
    /// i.i.d. Pareto(alpha) entries; the reference mode.
    IidPareto,
    /// `W_{k,j} = h(X_{k,j})` for a `d`-variate Gaussian linear process.
    /// The process is standardized before the transform so that the
    /// marginals are exactly Pareto(alpha).
    SubGauss {
        process: LinearProcessSpec,
        transform: TailMap,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M4Spec {
    pub d: usize,
    pub alpha: f64,
    /// Inclusive `[r_lo, r_hi]`.
    pub lags: [i64; 2],
    /// `a[r - r_lo][i][j]`.
    pub a: Vec<Vec<Vec<f64>>>,
    pub innovation: Innovation,
}

impl M4Spec {
    /// Spec with i.i.d. Pareto innovations.
    pub fn iid(alpha: f64, lags: [i64; 2], a: Vec<Vec<Vec<f64>>>) -> Self {
        let d = a.first().map_or(0, Vec::len);
        Self {
            d,
            alpha,
            lags,
            a,
            innovation: Innovation::IidPareto,
        }
    }

    /// Univariate moving maxima `max_r c_r W_{k-r}` over lags `0..c.len()`.
    pub fn univariate(alpha: f64, c: &[f64]) -> Self {
        let a = c.iter().map(|&v| vec![vec![v]]).collect();
        Self::iid(alpha, [0, c.len() as i64 - 1], a)
    }

    pub fn with_innovation(mut self, innovation: Innovation) -> Self {
        self.innovation = innovation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(
                "alpha",
                format!("must be positive, got {}", self.alpha),
            ));
        }
        let [lo, hi] = self.lags;
        if lo > hi {
            return Err(Error::invalid(
                "lags",
                format!("empty interval [{lo}, {hi}]"),
            ));
        }
        let width = (hi - lo + 1) as usize;
        if self.a.len() != width {
            return Err(Error::invalid(
                "a",
                format!(
                    "expected {width} lag matrices for lags [{lo}, {hi}], got {}",
                    self.a.len()
                ),
            ));
        }
        for (r, mat) in self.a.iter().enumerate() {
            if mat.len() != self.d {
                return Err(Error::invalid(
                    format!("a[{r}]"),
                    format!("expected {} rows", self.d),
                ));
            }
            for (i, row) in mat.iter().enumerate() {
                if row.len() != self.d {
                    return Err(Error::invalid(
                        format!("a[{r}][{i}]"),
                        format!("expected {} columns", self.d),
                    ));
                }
                if let Some(j) = row.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::invalid(
                        format!("a[{r}][{i}][{j}]"),
                        "coefficients must be finite and nonnegative",
                    ));
                }
            }
        }
        for i in 0..self.d {
            if !self.a.iter().any(|mat| mat[i].iter().any(|&v| v > 0.0)) {
                return Err(Error::invalid(
                    format!("a[*][{i}]"),
                    "component has no positive coefficient (degenerate marginal)",
                ));
            }
        }
        if let Innovation::SubGauss { process, .. } = &self.innovation {
            if process.d0 != self.d {
                return Err(Error::invalid(
                    "innovation.process.d0",
                    format!("must equal d = {}", self.d),
                ));
            }
            make_coeffs(process).map_err(|e| e.within("innovation.process"))?;
        }
        Ok(())
    }

    pub fn lag_values(&self) -> impl Iterator<Item = i64> {
        self.lags[0]..=self.lags[1]
    }

    /// Number of extra innovation rows needed beyond the output length.
    pub fn span(&self) -> usize {
        (self.lags[1] - self.lags[0]) as usize
    }

    fn coef(&self, r: i64, i: usize, j: usize) -> f64 {
        self.a[(r - self.lags[0]) as usize][i][j]
    }

    /// Copy keeping only lags with `|r| <= m_trunc` (entries zeroed, window kept).
    pub fn truncated(&self, m_trunc: usize) -> Self {
        let mut out = self.clone();
        for (idx, r) in self.lag_values().enumerate() {
            if r.unsigned_abs() as usize > m_trunc {
                out.a[idx].iter_mut().flatten().for_each(|v| *v = 0.0);
            }
        }
        out
    }
}

fn check_tau(spec: &M4Spec, tau: &[f64]) -> Result<()> {
    if tau.len() != spec.d {
        return Err(Error::Dimension(format!(
            "tau has {} entries, spec has d = {}",
            tau.len(),
            spec.d
        )));
    }
    if let Some(i) = tau.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::invalid(format!("tau[{i}]"), "must be positive"));
    }
    Ok(())
}

/// `A_i = sum_r sum_j a_{ij,r}^alpha`.
pub fn a_vec(spec: &M4Spec) -> Vec<f64> {
    (0..spec.d)
        .map(|i| {
            spec.a
                .iter()
                .flat_map(|mat| mat[i].iter())
                .map(|v| v.powf(spec.alpha))
                .sum()
        })
        .collect()
}

/// `w[r][j] = max_i a_{ij,r}^alpha tau_i / A_i`; rows with `A_i = 0` are
/// skipped (they only occur after truncation).
fn weights(spec: &M4Spec, tau: &[f64]) -> Vec<Vec<f64>> {
    let a = a_vec(spec);
    spec.lag_values()
        .map(|r| {
            (0..spec.d)
                .map(|j| {
                    (0..spec.d)
                        .filter(|&i| a[i] > 0.0)
                        .map(|i| spec.coef(r, i, j).powf(spec.alpha) * tau[i] / a[i])
                        .fold(0.0, f64::max)
                })
                .collect()
        })
        .collect()
}

/// `G(tau) = exp(-sum_r sum_j max_i a_{ij,r}^alpha tau_i / A_i)`, evaluated
/// as a product of per-term factors.
pub fn g_limit(spec: &M4Spec, tau: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_tau(spec, tau)?;
    let a = a_vec(spec);
    let mut g = 1.0;
    for r in spec.lag_values() {
        for j in 0..spec.d {
            let factor = (0..spec.d)
                .map(|i| (-spec.coef(r, i, j).powf(spec.alpha) / a[i] * tau[i]).exp())
                .fold(1.0, f64::min);
            g *= factor;
        }
    }
    Ok(g)
}

/// `sum_r sum_j max_i a_{ij,r}^alpha tau_i / A_i`, the limit of
/// `n P(Y_0 not <= u_n(tau))`.
pub fn tail_limit(spec: &M4Spec, tau: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_tau(spec, tau)?;
    Ok(weights(spec, tau).iter().flatten().sum())
}

fn theta_of(spec: &M4Spec, tau: &[f64]) -> f64 {
    let w = weights(spec, tau);
    let num: f64 = (0..spec.d)
        .map(|j| w.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum();
    let den: f64 = w.iter().flatten().sum();
    num / den
}

/// Multivariate extremal index
/// `sum_j max_r w_{r,j} / sum_j sum_r w_{r,j}`.
pub fn theta(spec: &M4Spec, tau: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_tau(spec, tau)?;
    Ok(theta_of(spec, tau))
}

/// `theta` of the process truncated to lags `|r| <= m_trunc`, with `A_i`
/// recomputed on the retained lags.
pub fn theta_2m(spec: &M4Spec, tau: &[f64], m_trunc: usize) -> Result<f64> {
    spec.validate()?;
    check_tau(spec, tau)?;
    let cut = spec.truncated(m_trunc);
    if a_vec(&cut).iter().all(|&v| v == 0.0) {
        return Err(Error::invalid(
            "m_trunc",
            format!("no positive coefficient within |r| <= {m_trunc}"),
        ));
    }
    Ok(theta_of(&cut, tau))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdMode {
    AnalyticPareto,
    EmpiricalQuantile { reps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub n: usize,
    pub tau: Vec<f64>,
    pub u: Vec<f64>,
    pub mode: ThresholdMode,
}

impl ThresholdVector {
    /// Fixed levels, e.g. for a plain Gaussian path.
    pub fn fixed(n: usize, tau: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if tau.len() != u.len() {
            return Err(Error::Dimension("tau and u differ in length".into()));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("u[{i}]"), "must be finite"));
        }
        Ok(Self {
            n,
            tau,
            u,
            mode: ThresholdMode::AnalyticPareto,
        })
    }

    pub fn d(&self) -> usize {
        self.u.len()
    }

    /// `row > u` in at least one coordinate.
    pub fn exceeds(&self, row: &[f64]) -> bool {
        row.iter().zip(&self.u).any(|(y, u)| y > u)
    }
}

/// `u_i = (A_i n / tau_i)^{1/alpha}`.
pub fn thresholds(spec: &M4Spec, n: usize, tau: &[f64]) -> Result<ThresholdVector> {
    spec.validate()?;
    check_tau(spec, tau)?;
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let u = a_vec(spec)
        .iter()
        .zip(tau)
        .map(|(a, t)| (a * n as f64 / t).powf(1.0 / spec.alpha))
        .collect();
    Ok(ThresholdVector {
        n,
        tau: tau.to_vec(),
        u,
        mode: ThresholdMode::AnalyticPareto,
    })
}

/// Levels from pooled samples: `u_i` is the empirical `1 - tau_i / n`
/// quantile of column `i` over all rows of all `samples`.
pub fn empirical_thresholds(
    samples: &[SeriesMatrix],
    n: usize,
    tau: &[f64],
) -> Result<ThresholdVector> {
    let d = tau.len();
    if samples.is_empty() || samples.iter().any(|s| s.d() != d) {
        return Err(Error::Dimension(
            "samples must be non-empty with d = tau.len()".into(),
        ));
    }
    let mut u = Vec::with_capacity(d);
    for (i, &t) in tau.iter().enumerate() {
        if !(t > 0.0 && t < n as f64) {
            return Err(Error::invalid(format!("tau[{i}]"), "must lie in (0, n)"));
        }
        let mut col: Vec<f64> = samples.iter().flat_map(|s| s.column(i)).collect();
        col.sort_by(f64::total_cmp);
        let q = 1.0 - t / n as f64;
        let idx = ((q * col.len() as f64).ceil() as usize).clamp(1, col.len()) - 1;
        u.push(col[idx]);
    }
    Ok(ThresholdVector {
        n,
        tau: tau.to_vec(),
        u,
        mode: ThresholdMode::EmpiricalQuantile {
            reps: samples.len(),
        },
    })
}

/// `Y_k = max_r max_j a_{ij,r} W_{k-r,j}`. Output row `t` corresponds to
/// `k = t + r_hi`, so that every lag of the full window is available; the
/// output has `W.n() - span` rows whether or not `m_trunc` is given, which
/// keeps truncated and full builds aligned.
pub fn build(w: &SeriesMatrix, spec: &M4Spec, m_trunc: Option<usize>) -> Result<SeriesMatrix> {
    spec.validate()?;
    if w.d() != spec.d {
        return Err(Error::Dimension(format!(
            "W has d = {}, spec has {}",
            w.d(),
            spec.d
        )));
    }
    let span = spec.span();
    if w.n() <= span {
        return Err(Error::Dimension(format!(
            "lag window of width {} exceeds series length {}",
            span + 1,
            w.n()
        )));
    }
    let d = spec.d;
    let hi = spec.lags[1];
    let active: Vec<(i64, usize)> = spec
        .lag_values()
        .enumerate()
        .filter(|&(_, r)| m_trunc.is_none_or(|m| r.unsigned_abs() as usize <= m))
        .map(|(idx, r)| (r, idx))
        .collect();
    let rows = w.n() - span;
    let mut out = vec![0.0; rows * d];
    for t in 0..rows {
        let k = t as i64 + hi;
        for &(r, idx) in &active {
            let src = w.row((k - r) as usize);
            let mat = &spec.a[idx];
            for i in 0..d {
                let best = mat[i]
                    .iter()
                    .zip(src)
                    .map(|(c, v)| c * v)
                    .fold(0.0, f64::max);
                if best > out[t * d + i] {
                    out[t * d + i] = best;
                }
            }
        }
    }
    SeriesMatrix::from_rows(rows, d, out).map(|s| s.with_meta(w.meta.clone()))
}

/// Reusable innovation and path source for one spec.
pub struct M4Generator {
    spec: M4Spec,
    source: Source,
}

enum Source {
    Iid,
    SubGauss {
        sims: SimulatorCache,
        transform: WindowTransform,
    },
}

impl M4Generator {
    pub fn new(spec: &M4Spec) -> Result<Self> {
        spec.validate()?;
        let source = match &spec.innovation {
            Innovation::IidPareto => Source::Iid,
            Innovation::SubGauss { process, transform } => {
                let coeffs = make_coeffs(&process.clone().standardized())
                    .map_err(|e| e.within("innovation.process"))?;
                let alpha = spec.alpha;
                let transform = WindowTransform::coordinatewise(spec.d, |coord| match transform {
                    TailMap::Pareto => Part::Pareto {
                        alpha,
                        coord,
                        lag: 0,
                    },
                    TailMap::FoldedPareto => Part::FoldedPareto {
                        alpha,
                        coord,
                        lag: 0,
                    },
                });
                Source::SubGauss {
                    sims: SimulatorCache::new(coeffs),
                    transform,
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            source,
        })
    }

    pub fn spec(&self) -> &M4Spec {
        &self.spec
    }

    /// `n` rows of innovations for `seed`.
    pub fn innovations(&self, n: usize, seed: u64) -> Result<SeriesMatrix> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        match &self.source {
            Source::Iid => {
                let mut rng = rng::stream(seed, 0);
                let alpha = self.spec.alpha;
                let values = (0..n * self.spec.d)
                    .map(|_| rng::pareto(&mut rng, alpha))
                    .collect();
                Ok(
                    SeriesMatrix::from_rows(n, self.spec.d, values)?.with_meta(SeriesMeta {
                        seed: Some(seed),
                        fingerprint: Some(crate::series::fingerprint(&self.spec)),
                        rng: Some(RNG_ALGORITHM.to_string()),
                    }),
                )
            }
            Source::SubGauss { sims, transform } => {
                let x = sims.get(n)?.simulate(seed);
                let mut w = apply(&x, transform)?;
                w.meta.fingerprint = Some(crate::series::fingerprint(&self.spec));
                Ok(w)
            }
        }
    }

    /// `Y_1..Y_n` (optionally truncated), built from `n + span` innovations.
    pub fn path(&self, n: usize, seed: u64, m_trunc: Option<usize>) -> Result<SeriesMatrix> {
        let w = self.innovations(n + self.spec.span(), seed)?;
        build(&w, &self.spec, m_trunc)
    }
}

/// One-shot [`M4Generator::innovations`].
pub fn innovations(spec: &M4Spec, n: usize, seed: u64) -> Result<SeriesMatrix> {
    M4Generator::new(spec)?.innovations(n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gausslin::Family;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_dim(alpha: f64) -> M4Spec {
        M4Spec::iid(
            alpha,
            [0, 1],
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            ],
        )
    }

    #[test]
    fn a_vec_hand_values() {
        assert_eq!(a_vec(&M4Spec::univariate(1.0, &[1.0; 4])), vec![4.0]);
        assert_eq!(a_vec(&M4Spec::univariate(1.0, &[2.0, 1.0])), vec![3.0]);
        assert_eq!(a_vec(&two_dim(2.0)), vec![2.0, 1.0]);
    }

    #[test]
    fn limits_hand_values() {
        let s = two_dim(1.0);
        assert_relative_eq!(
            g_limit(&s, &[1.0, 1.0]).unwrap(),
            (-2.0f64).exp(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            g_limit(&s, &[1.0, 0.5]).unwrap(),
            (-1.5f64).exp(),
            epsilon = 1e-15
        );
        assert_relative_eq!(tail_limit(&s, &[1.0, 1.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(tail_limit(&s, &[1.0, 0.5]).unwrap(), 1.5, epsilon = 1e-15);
        assert_relative_eq!(theta(&s, &[1.0, 1.0]).unwrap(), 0.75, epsilon = 1e-15);
        let eq = M4Spec::univariate(1.0, &[1.0; 4]);
        assert_relative_eq!(theta(&eq, &[1.0]).unwrap(), 0.25, epsilon = 1e-15);
        assert_relative_eq!(
            g_limit(&eq, &[0.7]).unwrap(),
            (-0.7f64).exp(),
            epsilon = 1e-15
        );
        let uneq = M4Spec::univariate(1.0, &[2.0, 1.0]);
        assert_relative_eq!(theta(&uneq, &[1.0]).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert!(g_limit(&s, &[1.0, 0.0]).unwrap_err().is_validation());
    }

    #[test]
    fn theta_2m_hand_values() {
        let eq = M4Spec::univariate(1.0, &[1.0; 4]);
        assert_relative_eq!(theta_2m(&eq, &[1.0], 1).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(theta_2m(&eq, &[1.0], 3).unwrap(), 0.25, epsilon = 1e-15);
        let mut wide = two_dim(1.0);
        wide.lags = [0, 5];
        let z = vec![vec![0.0; 2]; 2];
        wide.a.extend([z.clone(), z.clone(), z.clone()]);
        wide.a.push(vec![vec![0.05, 0.0], vec![0.0, 0.05]]);
        let tau = [1.0, 1.0];
        assert_eq!(theta_2m(&wide, &tau, 0).unwrap(), 1.0);
        for m in 1..5 {
            assert_relative_eq!(theta_2m(&wide, &tau, m).unwrap(), 0.75, epsilon = 1e-15);
        }
        for m in [5, 6, 50] {
            assert_relative_eq!(
                theta_2m(&wide, &tau, m).unwrap(),
                620.0 / 861.0,
                epsilon = 1e-15
            );
        }
        assert_relative_eq!(theta(&wide, &tau).unwrap(), 620.0 / 861.0, epsilon = 1e-15);
    }

    #[test]
    fn thresholds_hand_values() {
        let u = thresholds(&M4Spec::univariate(1.0, &[1.0]), 100, &[1.0]).unwrap();
        assert_relative_eq!(u.u[0], 100.0, epsilon = 1e-12);
        let u = thresholds(&M4Spec::univariate(1.0, &[2.0, 1.0]), 300, &[1.0]).unwrap();
        assert_relative_eq!(u.u[0], 900.0, epsilon = 1e-12);
        let u = thresholds(&two_dim(2.0), 50, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(u.u[0], 10.0, epsilon = 1e-12);
        assert_relative_eq!(u.u[1], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn build_hand_path() {
        let w = SeriesMatrix::from_column(vec![3.0, 1.0, 4.0, 1.0, 5.0]).unwrap();
        let one = build(&w, &M4Spec::univariate(1.0, &[1.0]), None).unwrap();
        assert_eq!(one, w);
        let y = build(&w, &M4Spec::univariate(1.0, &[1.0, 1.0]), None).unwrap();
        assert_eq!(y.values(), &[3.0, 4.0, 4.0, 5.0]);
        let y = build(&w, &M4Spec::univariate(1.0, &[1.0, 1.0]), Some(0)).unwrap();
        assert_eq!(y.values(), &[1.0, 4.0, 1.0, 5.0]);
        let short = SeriesMatrix::from_column(vec![1.0]).unwrap();
        assert!(build(&short, &M4Spec::univariate(1.0, &[1.0, 1.0]), None).is_err());
    }

    #[test]
    fn build_two_sided_window() {
        // Lags -1..=1: Y_k = max(W_{k+1}, W_k, W_{k-1}).
        let w = SeriesMatrix::from_column(vec![1.0, 7.0, 2.0, 3.0, 2.0]).unwrap();
        let spec = M4Spec::iid(1.0, [-1, 1], vec![vec![vec![1.0]]; 3]);
        assert_eq!(build(&w, &spec, None).unwrap().values(), &[7.0, 7.0, 3.0]);
    }

    #[test]
    fn validation_points_at_field() {
        let mut s = two_dim(1.0);
        s.a[1][0][1] = -1.0;
        match s.validate().unwrap_err() {
            Error::Invalid { field, .. } => assert_eq!(field, "a[1][0][1]"),
            e => panic!("{e}"),
        }
        let mut s = two_dim(1.0);
        s.a[0][1][1] = 0.0;
        assert!(s.validate().is_err());
        let s = two_dim(1.0).with_innovation(Innovation::SubGauss {
            process: LinearProcessSpec::new(
                2,
                Family::LogBoundary {
                    q: 0.5,
                    scale: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                },
                100,
            ),
            transform: TailMap::Pareto,
        });
        match s.validate().unwrap_err() {
            Error::Invalid { field, .. } => assert!(field.starts_with("innovation.process")),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn json_schema() {
        let json = r#"{"d":1,"alpha":1.0,"lags":[0,1],"a":[[[1.0]],[[0.5]]],
            "innovation":{"kind":"sub_gauss","transform":"folded_pareto",
              "process":{"d0":1,"family":"log_boundary","params":{"q":2.0,"B":[[1.0]]},"L":50}}}"#;
        let spec: M4Spec = serde_json::from_str(json).unwrap();
        spec.validate().unwrap();
        let back: M4Spec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn innovations_are_pareto_and_reproducible() {
        let spec = M4Spec::univariate(1.0, &[1.0]);
        let n = 200_000;
        let w = innovations(&spec, n, 5).unwrap();
        assert_eq!(w, innovations(&spec, n, 5).unwrap());
        let hits = w.values().iter().filter(|&&v| v > 10.0).count() as f64;
        let se = (0.1 * 0.9 / n as f64).sqrt();
        assert!((hits / n as f64 - 0.1).abs() < 4.0 * se);

        let sub = spec.with_innovation(Innovation::SubGauss {
            process: LinearProcessSpec::new(
                1,
                Family::LogBoundary {
                    q: 2.0,
                    scale: vec![vec![1.0]],
                },
                500,
            ),
            transform: TailMap::Pareto,
        });
        let w = innovations(&sub, n, 5).unwrap();
        assert!(w.values().iter().all(|&v| v >= 1.0));
        let hits = w.values().iter().filter(|&&v| v > 10.0).count() as f64;
        // Dependent draws: allow a wider band than the i.i.d. binomial one.
        assert!((hits / n as f64 - 0.1).abs() < 10.0 * se);
    }

    fn univariate_strategy() -> impl Strategy<Value = (f64, Vec<f64>)> {
        (0.3f64..4.0, prop::collection::vec(0.0f64..3.0, 1..7))
            .prop_filter("needs a positive coefficient", |(_, c)| {
                c.iter().any(|&v| v > 0.0)
            })
    }

    fn bivariate_strategy() -> impl Strategy<Value = (M4Spec, Vec<f64>)> {
        (
            0.3f64..3.0,
            -2i64..1,
            1usize..4,
            prop::collection::vec(0.0f64..2.0, 16),
            prop::collection::vec(0.1f64..3.0, 2),
        )
            .prop_filter_map("degenerate component", |(alpha, lo, width, raw, tau)| {
                let a: Vec<Vec<Vec<f64>>> = (0..width)
                    .map(|r| {
                        (0..2)
                            .map(|i| (0..2).map(|j| raw[(r * 4 + i * 2 + j) % 16]).collect())
                            .collect()
                    })
                    .collect();
                let spec = M4Spec::iid(alpha, [lo, lo + width as i64 - 1], a);
                spec.validate().ok().map(|_| (spec, tau))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn g_and_tail_limit_agree((spec, tau) in bivariate_strategy()) {
            let g = g_limit(&spec, &tau).unwrap();
            let t = tail_limit(&spec, &tau).unwrap();
            prop_assert!((-g.ln() - t).abs() <= 1e-12 * t.max(1.0));
            let max = tau.iter().cloned().fold(0.0, f64::max);
            let sum: f64 = tau.iter().sum();
            prop_assert!(t >= max - 1e-12 && t <= sum + 1e-12);
            prop_assert!(g > 0.0 && g < 1.0);
        }

        #[test]
        fn theta_scale_invariant((spec, tau) in bivariate_strategy(), c in 0.01f64..100.0) {
            let mut scaled = spec.clone();
            scaled.a.iter_mut().flatten().flatten().for_each(|v| *v *= c);
            let a = theta(&spec, &tau).unwrap();
            let b = theta(&scaled, &tau).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a > 0.0 && a <= 1.0 + 1e-15);
        }

        #[test]
        fn theta_2m_covering_window_is_theta((spec, tau) in bivariate_strategy()) {
            let m = spec.lags[0].unsigned_abs().max(spec.lags[1].unsigned_abs()) as usize;
            let full = theta(&spec, &tau).unwrap();
            prop_assert_eq!(theta_2m(&spec, &tau, m).unwrap(), full);
            prop_assert_eq!(theta_2m(&spec, &tau, m + 3).unwrap(), full);
        }

        #[test]
        fn univariate_theta_bounds((alpha, c) in univariate_strategy(), tau in 0.1f64..5.0) {
            let spec = M4Spec::univariate(alpha, &c);
            let active = c.iter().filter(|&&v| v > 0.0).count() as f64;
            let th = theta(&spec, &[tau]).unwrap();
            prop_assert!(th >= 1.0 / active - 1e-12 && th <= 1.0 + 1e-12);
            prop_assert!((g_limit(&spec, &[tau]).unwrap() - (-tau).exp()).abs() < 1e-14);
        }

        #[test]
        fn build_monotone_and_truncation_local(
            (spec, _) in bivariate_strategy(),
            seed in any::<u64>(),
            bump in 0.0f64..2.0,
            pick in 0usize..64,
            m in 0usize..3,
        ) {
            let w = innovations(&spec, 30, seed).unwrap();
            let y = build(&w, &spec, None).unwrap();
            let mut bigger = spec.clone();
            let flat: Vec<&mut f64> = bigger.a.iter_mut().flatten().flatten().collect();
            let len = flat.len();
            for (idx, v) in flat.into_iter().enumerate() {
                if idx == pick % len {
                    *v += bump;
                }
            }
            let y2 = build(&w, &bigger, None).unwrap();
            prop_assert!(y.values().iter().zip(y2.values()).all(|(a, b)| b >= a));

            // Truncated and full builds differ only where a dropped lag wins.
            let yt = build(&w, &spec, Some(m)).unwrap();
            let dropped = {
                let mut s = spec.clone();
                for (idx, r) in spec.lag_values().enumerate() {
                    if r.unsigned_abs() as usize <= m {
                        s.a[idx].iter_mut().flatten().for_each(|v| *v = 0.0);
                    }
                }
                s
            };
            for t in 0..y.n() {
                for i in 0..2 {
                    let (full, cut) = (y.get(t, i), yt.get(t, i));
                    prop_assert!(cut <= full);
                    if cut < full {
                        let k = t as i64 + spec.lags[1];
                        let best_dropped = dropped
                            .lag_values()
                            .flat_map(|r| {
                                let row = w.row((k - r) as usize).to_vec();
                                let d = &dropped;
                                (0..2).map(move |j| d.coef(r, i, j) * row[j])
                            })
                            .fold(0.0, f64::max);
                        prop_assert_eq!(best_dropped, full);
                    }
                }
            }
        }
    }
}
