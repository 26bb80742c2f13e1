//! Multivariate causal Gaussian linear processes `X_k = sum_l Psi_l eps_{k-l}`.
//!
//! A [`LinearProcessSpec`] names a coefficient family and a truncation
//! horizon `L`; [`make_coeffs`] turns it into a [`CoeffTable`] holding
//! `Psi_0..Psi_L`. Everything downstream (autocovariances, the block-Toeplitz
//! covariance, simulation) is exact for the truncated process, and
//! [`autocov`] reports an analytic bound on the distance to the untruncated
//! one.
//!
//! Autocovariance convention: `autocov(h) = sum_j Psi_j Psi_{j+h}'`, which is
//! `E[X_k X_{k+h}']`.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlannerScalar};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, RNG_ALGORITHM};
use crate::series::{fingerprint, SeriesMatrix, SeriesMeta};

pub const DEFAULT_HORIZON: usize = 10_000;

/// Largest `nblock * d0` accepted by [`block_toeplitz_min_eig`].
pub const DENSE_EIGEN_BUDGET: usize = 2000;

/// Relative eigenvalue floor for the full-rank check.
pub const RANK_TOLERANCE: f64 = 1e-10;

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    /// `psi_{ij,l} = B_ij (l+1)^{-beta}`.
    Polynomial {
        beta: f64,
        #[serde(rename = "B")]
        scale: Vec<Vec<f64>>,
    },
    /// `psi_{ij,0} = B_ij`, zero for `1 <= l < 4`, then
    /// `B_ij l^{-1/2} (log l)^{-q}`. With `q` close to 1 this sits right at
    /// the edge of the admissible decay.
    LogBoundary {
        q: f64,
        #[serde(rename = "B")]
        scale: Vec<Vec<f64>>,
    },
    Iid,
    /// Explicit table indexed `[l][i][j]`; treated as exact.
    Custom {
        table: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProcessSpec {
    pub d0: usize,
    #[serde(flatten)]
    pub family: Family,
    /// Number of retained lags after lag 0.
    #[serde(rename = "L", default = "default_horizon")]
    pub horizon: usize,
    /// Rescale rows so every coordinate has unit variance.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub standardize: bool,
}

impl LinearProcessSpec {
    pub fn new(d0: usize, family: Family, horizon: usize) -> Self {
        Self {
            d0,
            family,
            horizon,
            standardize: false,
        }
    }

    pub fn iid(d0: usize) -> Self {
        Self::new(d0, Family::Iid, 0)
    }

    pub fn standardized(mut self) -> Self {
        self.standardize = true;
        self
    }
}

/// `Psi_0..Psi_L` for one spec, stored `[l][i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearProcessSpec", into = "LinearProcessSpec")]
pub struct CoeffTable {
    spec: LinearProcessSpec,
    d0: usize,
    horizon: usize,
    psi: Vec<f64>,
    /// Per-row factor applied by standardization (1 otherwise).
    row_scale: Vec<f64>,
}

impl TryFrom<LinearProcessSpec> for CoeffTable {
    type Error = Error;
    fn try_from(spec: LinearProcessSpec) -> Result<Self> {
        make_coeffs(&spec)
    }
}

impl From<CoeffTable> for LinearProcessSpec {
    fn from(table: CoeffTable) -> Self {
        table.spec
    }
}

impl CoeffTable {
    pub fn spec(&self) -> &LinearProcessSpec {
        &self.spec
    }

    pub fn d0(&self) -> usize {
        self.d0
    }

    /// Truncation horizon `L`; the table holds `L + 1` matrices.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn psi(&self, l: usize, i: usize, j: usize) -> f64 {
        self.psi[(l * self.d0 + i) * self.d0 + j]
    }

    pub fn lag_matrix(&self, l: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.d0, self.d0, |i, j| self.psi(l, i, j))
    }

    /// The sequence `psi_{ij,0..=L}`.
    pub fn entry_sequence(&self, i: usize, j: usize) -> Vec<f64> {
        (0..=self.horizon).map(|l| self.psi(l, i, j)).collect()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.spec)
    }

    /// Entrywise bound on `|Gamma_inf(h) - Gamma_L(h)|` from the family's
    /// analytic tail, via Cauchy–Schwarz on the discarded products.
    fn truncation_bound(&self, h: usize) -> f64 {
        let (scale, tail): (&Vec<Vec<f64>>, Box<dyn Fn(usize) -> f64>) = match &self.spec.family {
            Family::Iid | Family::Custom { .. } => return 0.0,
            Family::Polynomial { beta, scale } => {
                let beta = *beta;
                // sum_{l>=a} (l+1)^{-2 beta} <= a^{1-2 beta} / (2 beta - 1)
                (
                    scale,
                    Box::new(move |a: usize| {
                        let a = a.max(1) as f64;
                        a.powf(1.0 - 2.0 * beta) / (2.0 * beta - 1.0)
                    }),
                )
            }
            Family::LogBoundary { q, scale } => {
                let q = *q;
                // sum_{l>=a} 1/(l log^{2q} l) <= log(a-1)^{1-2q} / (2q - 1)
                (
                    scale,
                    Box::new(move |a: usize| {
                        let a = a.max(4) as f64;
                        (a - 1.0).ln().powf(1.0 - 2.0 * q) / (2.0 * q - 1.0)
                    }),
                )
            }
        };
        let d = self.d0;
        let mut gram = 0.0f64;
        for i in 0..d {
            for k in 0..d {
                let s: f64 = (0..d).map(|j| scale[i][j].abs() * scale[k][j].abs()).sum();
                gram = gram.max(s * self.row_scale[i] * self.row_scale[k]);
            }
        }
        let a = self.horizon - h + 1;
        gram * (tail(a) * tail(a + h)).sqrt()
    }
}

fn validate_scale(scale: &[Vec<f64>], d0: usize, field: &str) -> Result<()> {
    if scale.len() != d0 || scale.iter().any(|row| row.len() != d0) {
        return Err(Error::invalid(field, format!("must be a {d0}x{d0} matrix")));
    }
    if scale.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(
            field,
            "entries must be finite and nonnegative",
        ));
    }
    if scale.iter().flatten().all(|v| *v == 0.0) {
        return Err(Error::invalid(field, "all-zero scale matrix"));
    }
    Ok(())
}

/// Build `Psi_0..Psi_L` for `spec`.
pub fn make_coeffs(spec: &LinearProcessSpec) -> Result<CoeffTable> {
    let d0 = spec.d0;
    if d0 == 0 {
        return Err(Error::invalid("d0", "must be positive"));
    }
    let mut horizon = spec.horizon;
    let mut psi;
    match &spec.family {
        Family::Polynomial { beta, scale } => {
            if !(beta.is_finite() && *beta > 0.5) {
                return Err(Error::invalid("params.beta", "must exceed 1/2"));
            }
            validate_scale(scale, d0, "params.B")?;
            psi = vec![0.0; (horizon + 1) * d0 * d0];
            for l in 0..=horizon {
                let g = ((l + 1) as f64).powf(-beta);
                for i in 0..d0 {
                    for j in 0..d0 {
                        psi[(l * d0 + i) * d0 + j] = scale[i][j] * g;
                    }
                }
            }
        }
        Family::LogBoundary { q, scale } => {
            if !(q.is_finite() && *q > 1.0) {
                return Err(Error::invalid("params.q", "must exceed 1"));
            }
            validate_scale(scale, d0, "params.B")?;
            psi = vec![0.0; (horizon + 1) * d0 * d0];
            for l in 0..=horizon {
                let g = match l {
                    0 => 1.0,
                    1..=3 => 0.0,
                    _ => {
                        let lf = l as f64;
                        lf.powf(-0.5) * lf.ln().powf(-q)
                    }
                };
                for i in 0..d0 {
                    for j in 0..d0 {
                        psi[(l * d0 + i) * d0 + j] = scale[i][j] * g;
                    }
                }
            }
        }
        Family::Iid => {
            psi = vec![0.0; (horizon + 1) * d0 * d0];
            for i in 0..d0 {
                psi[i * d0 + i] = 1.0;
            }
        }
        Family::Custom { table } => {
            if table.is_empty() {
                return Err(Error::invalid("params.table", "needs at least Psi_0"));
            }
            if spec.horizon != table.len() - 1 && spec.horizon != DEFAULT_HORIZON {
                return Err(Error::invalid(
                    "L",
                    format!(
                        "custom table has {} lags but L = {}",
                        table.len() - 1,
                        spec.horizon
                    ),
                ));
            }
            horizon = table.len() - 1;
            psi = Vec::with_capacity(table.len() * d0 * d0);
            for (l, m) in table.iter().enumerate() {
                if m.len() != d0 || m.iter().any(|r| r.len() != d0) {
                    return Err(Error::invalid(
                        format!("params.table[{l}]"),
                        format!("must be {d0}x{d0}"),
                    ));
                }
                psi.extend(m.iter().flatten().copied());
            }
            if psi.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("params.table", "non-finite entry"));
            }
            if psi.iter().all(|v| *v == 0.0) {
                return Err(Error::invalid("params.table", "all-zero table"));
            }
        }
    }

    let mut table = CoeffTable {
        spec: LinearProcessSpec {
            horizon,
            ..spec.clone()
        },
        d0,
        horizon,
        psi,
        row_scale: vec![1.0; d0],
    };
    if spec.standardize {
        let gamma0 = lag_direct(&table, 0);
        for i in 0..d0 {
            let v = gamma0[(i, i)];
            if v <= 0.0 {
                return Err(Error::invalid(
                    "standardize",
                    format!("coordinate {i} has zero variance"),
                ));
            }
            let s = 1.0 / v.sqrt();
            table.row_scale[i] = s;
            for l in 0..=horizon {
                for j in 0..d0 {
                    table.psi[(l * d0 + i) * d0 + j] *= s;
                }
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// `(l, s_l)` with `s_l = max_ij |psi_{ij,l}| l^{1/2} log l`, `l >= 2`.
    pub profile: Vec<(usize, f64)>,
    /// Whether `s_l` is nonincreasing (to 1e-12) over the last half of the
    /// table. A finite table cannot certify a little-o condition, so this is
    /// a diagnostic only.
    pub tail_decreasing: bool,
}

pub fn check_decay(coeffs: &CoeffTable) -> DecayReport {
    let d = coeffs.d0;
    let profile: Vec<(usize, f64)> = (2..=coeffs.horizon)
        .map(|l| {
            let lf = l as f64;
            let m = (0..d * d)
                .map(|e| coeffs.psi(l, e / d, e % d).abs())
                .fold(0.0, f64::max);
            (l, m * lf.sqrt() * lf.ln())
        })
        .collect();
    let start = coeffs.horizon.div_ceil(2);
    let tail_decreasing = profile
        .windows(2)
        .filter(|w| w[0].0 >= start)
        .all(|w| w[1].1 <= w[0].1 + 1e-12);
    DecayReport {
        profile,
        tail_decreasing,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autocov {
    pub gamma: DMatrix<f64>,
    pub tail_bound: f64,
}

fn lag_direct(coeffs: &CoeffTable, h: usize) -> DMatrix<f64> {
    let d = coeffs.d0;
    let mut g = DMatrix::zeros(d, d);
    for j in 0..=(coeffs.horizon - h) {
        for i in 0..d {
            for k in 0..d {
                let mut s = 0.0;
                for l in 0..d {
                    s += coeffs.psi(j, i, l) * coeffs.psi(j + h, k, l);
                }
                g[(i, k)] += s;
            }
        }
    }
    g
}

/// `Gamma(h) = sum_{j=0}^{L-h} Psi_j Psi_{j+h}'` with its truncation bound.
pub fn autocov(coeffs: &CoeffTable, h: usize) -> Result<Autocov> {
    if h > coeffs.horizon {
        return Err(Error::invalid(
            "h",
            format!("lag {h} exceeds horizon {}", coeffs.horizon),
        ));
    }
    Ok(Autocov {
        gamma: lag_direct(coeffs, h),
        tail_bound: coeffs.truncation_bound(h),
    })
}

/// `Gamma(0..=hmax)`. Large tables go through FFT cross-correlation.
pub fn autocov_all(coeffs: &CoeffTable, hmax: usize) -> Result<Vec<DMatrix<f64>>> {
    if hmax > coeffs.horizon {
        return Err(Error::invalid(
            "hmax",
            format!("lag {hmax} exceeds horizon {}", coeffs.horizon),
        ));
    }
    let len = coeffs.horizon + 1;
    if (len as u64) * (hmax as u64 + 1) <= 1 << 22 {
        return Ok((0..=hmax).map(|h| lag_direct(coeffs, h)).collect());
    }
    let d = coeffs.d0;
    let size = (2 * len).next_power_of_two();
    let mut planner = FftPlannerScalar::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let spectra: Vec<Vec<Complex<f64>>> = (0..d * d)
        .map(|e| {
            let mut buf = vec![Complex::new(0.0, 0.0); size];
            for (l, b) in buf.iter_mut().take(len).enumerate() {
                b.re = coeffs.psi(l, e / d, e % d);
            }
            fwd.process(&mut buf);
            buf
        })
        .collect();
    let mut out = vec![DMatrix::zeros(d, d); hmax + 1];
    let norm = 1.0 / size as f64;
    for i in 0..d {
        for k in 0..d {
            // sum_l sum_j psi_{il,j} psi_{kl,j+h}
            let mut acc = vec![Complex::new(0.0, 0.0); size];
            for l in 0..d {
                let a = &spectra[i * d + l];
                let b = &spectra[k * d + l];
                for (z, (x, y)) in acc.iter_mut().zip(a.iter().zip(b)) {
                    *z += x.conj() * y;
                }
            }
            inv.process(&mut acc);
            for (h, m) in out.iter_mut().enumerate() {
                m[(i, k)] = acc[h].re * norm;
            }
        }
    }
    Ok(out)
}

/// `max_ij |Gamma_ij(h)| log h` for `h = 2..=hmax`.
pub fn berman_profile(coeffs: &CoeffTable, hmax: usize) -> Result<Vec<(usize, f64)>> {
    let all = autocov_all(coeffs, hmax)?;
    Ok((2..=hmax)
        .map(|h| (h, all[h].amax() * (h as f64).ln()))
        .collect())
}

/// Covariance of the stacked vector `(X_1', ..., X_nblock')'`.
pub fn block_toeplitz(coeffs: &CoeffTable, nblock: usize) -> Result<DMatrix<f64>> {
    let d = coeffs.d0;
    let dim = nblock * d;
    if nblock == 0 || dim > DENSE_EIGEN_BUDGET {
        return Err(Error::invalid(
            "nblock",
            format!("nblock * d0 = {dim} outside 1..={DENSE_EIGEN_BUDGET}"),
        ));
    }
    let hmax = (nblock - 1).min(coeffs.horizon);
    let lags = autocov_all(coeffs, hmax)?;
    let mut m = DMatrix::zeros(dim, dim);
    for a in 0..nblock {
        for b in a..nblock {
            let h = b - a;
            if h > hmax {
                continue;
            }
            let g = &lags[h];
            for i in 0..d {
                for k in 0..d {
                    // E[X_a X_{a+h}'] = Gamma(h)
                    m[(a * d + i, b * d + k)] = g[(i, k)];
                    m[(b * d + k, a * d + i)] = g[(i, k)];
                }
            }
        }
    }
    Ok(m)
}

/// Smallest eigenvalue of the `nblock`-step block-Toeplitz covariance,
/// returned as is even when nonpositive.
pub fn block_toeplitz_min_eig(coeffs: &CoeffTable, nblock: usize) -> Result<f64> {
    let m = block_toeplitz(coeffs, nblock)?;
    Ok(SymmetricEigen::new(m).eigenvalues.min())
}

/// `lambda_min(Gamma(0)) > 1e-10 * lambda_max(Gamma(0))`.
pub fn full_rank_check(coeffs: &CoeffTable) -> bool {
    let eig = SymmetricEigen::new(lag_direct(coeffs, 0)).eigenvalues;
    let max = eig.max();
    max > 0.0 && eig.min() > RANK_TOLERANCE * max
}

enum Method {
    Direct,
    Fft {
        size: usize,
        half: usize,
        fwd: Arc<dyn Fft<f64>>,
        inv: Arc<dyn Fft<f64>>,
        /// `d0 * d0` spectra of `psi_{ij,.}`, scaled by `1/size`.
        spectra: Vec<Vec<Complex<f64>>>,
    },
}

/// Reusable simulator for a fixed `(coeffs, n)`; [`simulate`] is the
/// one-shot form.
///
/// Long horizons use FFT convolution: the output range is split in two
/// halves carried as the real and imaginary parts of one complex transform.
pub struct LinearSimulator {
    coeffs: CoeffTable,
    n: usize,
    method: Method,
    fingerprint: String,
}

const DIRECT_MAX_HORIZON: usize = 48;

impl LinearSimulator {
    pub fn new(coeffs: &CoeffTable, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        let l = coeffs.horizon;
        let method = if l <= DIRECT_MAX_HORIZON || n < 2 {
            Method::Direct
        } else {
            let half = n.div_ceil(2);
            let size = (half + l).next_power_of_two();
            let mut planner = FftPlannerScalar::<f64>::new();
            let fwd = planner.plan_fft_forward(size);
            let inv = planner.plan_fft_inverse(size);
            let d = coeffs.d0;
            let norm = 1.0 / size as f64;
            let spectra = (0..d * d)
                .map(|e| {
                    let mut buf = vec![Complex::new(0.0, 0.0); size];
                    for (lag, b) in buf.iter_mut().take(l + 1).enumerate() {
                        b.re = coeffs.psi(lag, e / d, e % d) * norm;
                    }
                    fwd.process(&mut buf);
                    buf
                })
                .collect();
            Method::Fft {
                size,
                half,
                fwd,
                inv,
                spectra,
            }
        };
        Ok(Self {
            fingerprint: coeffs.fingerprint(),
            coeffs: coeffs.clone(),
            n,
            method,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d0(&self) -> usize {
        self.coeffs.d0
    }

    /// Path for `seed`, drawn from stream 0 of that seed.
    pub fn simulate(&self, seed: u64) -> SeriesMatrix {
        let mut rng = rng::stream(seed, 0);
        self.simulate_with(&mut rng, Some(seed))
    }

    /// Path drawn from an existing stream; `n + L` innovation vectors are
    /// consumed in time-major order.
    pub fn simulate_with(&self, rng: &mut rng::PathRng, seed: Option<u64>) -> SeriesMatrix {
        let d = self.coeffs.d0;
        let l = self.coeffs.horizon;
        let n = self.n;
        // eps[t] is the innovation at time t - L.
        let mut eps = vec![0.0; (n + l) * d];
        rng::fill_standard_normal(rng, &mut eps);
        let mut out = vec![0.0; n * d];
        match &self.method {
            Method::Direct => {
                for k in 0..n {
                    for lag in 0..=l {
                        let e = &eps[(k + l - lag) * d..(k + l - lag + 1) * d];
                        for i in 0..d {
                            let mut s = 0.0;
                            for (j, ej) in e.iter().enumerate() {
                                s += self.coeffs.psi(lag, i, j) * ej;
                            }
                            out[k * d + i] += s;
                        }
                    }
                }
            }
            Method::Fft {
                size,
                half,
                fwd,
                inv,
                spectra,
            } => {
                let (size, half) = (*size, *half);
                let second = n - half;
                let mut scratch = vec![
                    Complex::new(0.0, 0.0);
                    fwd.get_inplace_scratch_len()
                        .max(inv.get_inplace_scratch_len())
                ];
                let inputs: Vec<Vec<Complex<f64>>> = (0..d)
                    .map(|j| {
                        let mut buf = vec![Complex::new(0.0, 0.0); size];
                        // First half needs eps[0 .. half + L], second half
                        // eps[half .. n + L].
                        for (t, b) in buf.iter_mut().take(half + l).enumerate() {
                            b.re = eps[t * d + j];
                        }
                        for (t, b) in buf.iter_mut().take(second + l).enumerate() {
                            b.im = eps[(t + half) * d + j];
                        }
                        fwd.process_with_scratch(&mut buf, &mut scratch);
                        buf
                    })
                    .collect();
                let mut acc = vec![Complex::new(0.0, 0.0); size];
                for i in 0..d {
                    acc.iter_mut().for_each(|z| *z = Complex::new(0.0, 0.0));
                    for (j, input) in inputs.iter().enumerate() {
                        let h = &spectra[i * d + j];
                        for (z, (x, y)) in acc.iter_mut().zip(input.iter().zip(h)) {
                            *z += x * y;
                        }
                    }
                    inv.process_with_scratch(&mut acc, &mut scratch);
                    for k in 0..half {
                        out[k * d + i] = acc[k + l].re;
                    }
                    for k in 0..second {
                        out[(k + half) * d + i] = acc[k + l].im;
                    }
                }
            }
        }
        SeriesMatrix::from_rows(n, d, out)
            .expect("finite gaussian path")
            .with_meta(SeriesMeta {
                seed,
                fingerprint: Some(self.fingerprint.clone()),
                rng: Some(RNG_ALGORITHM.to_string()),
            })
    }
}

/// `X_1..X_n` of the truncated process for `seed`, started in stationarity
/// (the first `L` innovations serve as burn-in).
pub fn simulate(coeffs: &CoeffTable, n: usize, seed: u64) -> Result<SeriesMatrix> {
    Ok(LinearSimulator::new(coeffs, n)?.simulate(seed))
}

/// Simulators for one coefficient table, built lazily per path length and
/// shared between threads.
pub struct SimulatorCache {
    coeffs: CoeffTable,
    sims: std::sync::Mutex<Vec<(usize, Arc<LinearSimulator>)>>,
}

impl SimulatorCache {
    pub fn new(coeffs: CoeffTable) -> Self {
        Self {
            coeffs,
            sims: std::sync::Mutex::new(Vec::new()),
        }
    }

    pub fn coeffs(&self) -> &CoeffTable {
        &self.coeffs
    }

    pub fn get(&self, n: usize) -> Result<Arc<LinearSimulator>> {
        let mut sims = self.sims.lock().expect("simulator cache poisoned");
        if let Some((_, s)) = sims.iter().find(|(len, _)| *len == n) {
            return Ok(s.clone());
        }
        let s = Arc::new(LinearSimulator::new(&self.coeffs, n)?);
        sims.push((n, s.clone()));
        Ok(s)
    }
}
