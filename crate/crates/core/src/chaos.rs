//! Gaussian Hilbert space tools: canonical (= maximal) correlation between
//! Gaussian blocks, Hermite expansions of catalog functions, the Mehler
//! transform, hypercontractive norms, and bivariate-normal tail oracles.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gausslin::{autocov_all, CoeffTable};
use crate::numerics::{
    adaptive_gk, composite_gl_many, gaussian_expectation, normal_cdf, normal_pdf, normal_sf,
};

/// Covariance blocks of a jointly Gaussian pair `(X_1, X_2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlockPair {
    pub cov11: DMatrix<f64>,
    pub cov22: DMatrix<f64>,
    pub cov12: DMatrix<f64>,
}

impl GaussianBlockPair {
    pub fn new(cov11: DMatrix<f64>, cov22: DMatrix<f64>, cov12: DMatrix<f64>) -> Result<Self> {
        let (p, q) = (cov11.nrows(), cov22.nrows());
        if !cov11.is_square() || !cov22.is_square() || cov12.shape() != (p, q) {
            return Err(Error::Dimension(format!(
                "blocks {:?}, {:?}, cross {:?}",
                cov11.shape(),
                cov22.shape(),
                cov12.shape()
            )));
        }
        Ok(Self {
            cov11,
            cov22,
            cov12,
        })
    }

    /// Split the covariance of `(X_1', X_2')'` after the first `p` coordinates.
    pub fn from_joint(joint: &DMatrix<f64>, p: usize) -> Result<Self> {
        let n = joint.nrows();
        if !joint.is_square() || p == 0 || p >= n {
            return Err(Error::Dimension(format!("cannot split {n}x{n} at {p}")));
        }
        Self::new(
            joint.view((0, 0), (p, p)).into_owned(),
            joint.view((p, p), (n - p, n - p)).into_owned(),
            joint.view((0, p), (p, n - p)).into_owned(),
        )
    }
}

/// Eigenvalue floor relative to the largest eigenvalue.
const EIGEN_FLOOR: f64 = 1e-12;

fn inverse_sqrt(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= EIGEN_FLOOR * max {
        return Err(Error::Numerical(format!(
            "{name} is not positive definite: eigenvalues in [{min:e}, {max:e}], condition {:e}",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    let floor = EIGEN_FLOOR * max;
    let inv = eig.eigenvalues.map(|v| 1.0 / v.max(floor).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose())
}

/// Largest singular value of `C11^{-1/2} C12 C22^{-1/2}`: the canonical
/// correlation of the two spans, which is also the maximal correlation over
/// all square-integrable functions of the two blocks.
pub fn canonical_correlation(pair: &GaussianBlockPair) -> Result<f64> {
    let w1 = inverse_sqrt(&pair.cov11, "cov11")?;
    let w2 = inverse_sqrt(&pair.cov22, "cov22")?;
    let k = w1 * &pair.cov12 * w2;
    let sv = k.singular_values();
    Ok(sv.max().clamp(0.0, 1.0))
}

/// Direct search for `max corr(a'X_1, b'X_2)`, independent of the SVD route:
/// for fixed `a` the best `b` gives `a'C12 C22^{-1} C21 a / a'C11 a`, which is
/// maximized over `directions` random unit vectors followed by a shrinking
/// random-perturbation climb from the best one.
pub fn canonical_correlation_search(
    pair: &GaussianBlockPair,
    directions: usize,
    rng: &mut crate::rng::PathRng,
) -> Result<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let c22_inv = pair
        .cov22
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("cov22 is singular".into()))?;
    let m = &pair.cov12 * c22_inv * pair.cov12.transpose();
    let p = pair.cov11.nrows();
    let score = |a: &nalgebra::DVector<f64>| {
        let den = (a.transpose() * &pair.cov11 * a)[(0, 0)];
        let num = (a.transpose() * &m * a)[(0, 0)];
        if den > 0.0 {
            (num / den).max(0.0)
        } else {
            0.0
        }
    };
    let draw = |rng: &mut crate::rng::PathRng| {
        nalgebra::DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    let mut best = draw(rng);
    let mut best_score = score(&best);
    for _ in 1..directions.max(1) {
        let a = draw(rng);
        let s = score(&a);
        if s > best_score {
            best = a;
            best_score = s;
        }
    }
    let mut step = 0.1;
    while step > 1e-9 {
        let mut improved = false;
        for _ in 0..50 {
            let trial = &best / best.norm() + draw(rng) * step;
            let s = score(&trial);
            if s > best_score {
                best = trial;
                best_score = s;
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(best_score.sqrt().min(1.0))
}

/// Canonical correlation between the Gaussian inputs of two gapped blocks.
///
/// Block `i` of the subordinated series covers times `i(r+p)+1 ..= i(r+p)+r`,
/// so with window `m` it depends on `X` at times `i(r+p)+1-m ..= i(r+p)+r`
/// (`r + m` steps). Returns `rho(X(h), X(0))`.
pub fn block_canonical_corr(
    coeffs: &CoeffTable,
    r: usize,
    p_gap: usize,
    m: usize,
    h: usize,
) -> Result<f64> {
    if r == 0 {
        return Err(Error::invalid("r", "block length must be positive"));
    }
    if p_gap < m {
        return Err(Error::invalid("p_gap", "gap must be at least the window m"));
    }
    let d = coeffs.d0();
    let len = r + m;
    let offset = h * (r + p_gap);
    let span = offset + len - 1;
    if span > coeffs.horizon() {
        return Err(Error::invalid(
            "h",
            format!(
                "blocks span {span} lags, beyond horizon {}",
                coeffs.horizon()
            ),
        ));
    }
    let lags = autocov_all(coeffs, span)?;
    // E[X_s X_t'] for s <= t is Gamma(t - s).
    let cov = |s: usize, t: usize| -> DMatrix<f64> {
        if s <= t {
            lags[t - s].clone()
        } else {
            lags[s - t].transpose()
        }
    };
    let times0: Vec<usize> = (0..len).collect();
    let times1: Vec<usize> = (offset..offset + len).collect();
    let build = |a: &[usize], b: &[usize]| {
        let mut out = DMatrix::zeros(a.len() * d, b.len() * d);
        for (ia, &s) in a.iter().enumerate() {
            for (ib, &t) in b.iter().enumerate() {
                out.view_mut((ia * d, ib * d), (d, d)).copy_from(&cov(s, t));
            }
        }
        out
    };
    let pair = GaussianBlockPair::new(
        build(&times1, &times1),
        build(&times0, &times0),
        build(&times1, &times0),
    )?;
    canonical_correlation(&pair)
}

/// Real roots of `sum_k coeffs[k] x^k` from the companion matrix.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let Some(deg) = coeffs.iter().rposition(|c| *c != 0.0) else {
        return vec![];
    };
    if deg == 0 {
        return vec![];
    }
    let lead = coeffs[deg];
    let companion = DMatrix::from_fn(deg, deg, |i, j| {
        if j == deg - 1 {
            -coeffs[i] / lead
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    let mut roots: Vec<f64> = companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-9 * (1.0 + z.re.abs()))
        .map(|z| z.re)
        .collect();
    roots.sort_by(f64::total_cmp);
    roots
}

/// Scalar maps whose Gaussian integrals can be certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CatalogFn {
    /// `exp(t x)`
    Exp { t: f64 },
    /// `1{x > c}`
    Indicator { c: f64 },
    /// `sum_k coeffs[k] x^k`
    Polynomial { coeffs: Vec<f64> },
    /// `|x|`
    Abs,
}

impl CatalogFn {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            CatalogFn::Exp { t } => (t * x).exp(),
            CatalogFn::Indicator { c } => f64::from(u8::from(x > *c)),
            CatalogFn::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            CatalogFn::Abs => x.abs(),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            CatalogFn::Indicator { c } => vec![*c],
            CatalogFn::Abs => vec![0.0],
            // |f|^p has kinks at the real roots.
            CatalogFn::Polynomial { coeffs } => real_roots(coeffs),
            CatalogFn::Exp { .. } => vec![],
        }
    }

    /// Half-width of the integration window.
    fn reach(&self) -> f64 {
        match self {
            CatalogFn::Exp { t } => 16.0 + 3.0 * t.abs(),
            CatalogFn::Indicator { c } => 16.0 + c.abs(),
            _ => 16.0,
        }
    }

    /// `E f(mu + s Z)` in closed form.
    fn gaussian_mean(&self, mu: f64, s: f64) -> f64 {
        match self {
            CatalogFn::Exp { t } => (t * mu + 0.5 * t * t * s * s).exp(),
            CatalogFn::Indicator { c } => {
                if s == 0.0 {
                    self.eval(mu)
                } else {
                    normal_sf((c - mu) / s)
                }
            }
            CatalogFn::Polynomial { coeffs } => {
                // E (mu + sZ)^n = sum_k C(n,k) mu^{n-k} s^k E Z^k
                let mut total = 0.0;
                for (n, c) in coeffs.iter().enumerate() {
                    let mut term = 0.0;
                    let mut binom = 1.0;
                    let mut z_moment = 1.0; // E Z^k for even k
                    for k in 0..=n {
                        if k > 0 {
                            binom *= (n - k + 1) as f64 / k as f64;
                        }
                        if k % 2 == 0 {
                            if k >= 2 {
                                z_moment *= (k - 1) as f64;
                            }
                            term += binom * mu.powi((n - k) as i32) * s.powi(k as i32) * z_moment;
                        }
                    }
                    total += c * term;
                }
                total
            }
            CatalogFn::Abs => {
                if s == 0.0 {
                    mu.abs()
                } else {
                    let z = mu / s;
                    mu * (2.0 * normal_cdf(z) - 1.0) + 2.0 * s * normal_pdf(z)
                }
            }
        }
    }
}

/// Coefficients of `f` against the orthonormal Hermite polynomials
/// `He_k / sqrt(k!)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteExpansion {
    pub coeffs: Vec<f64>,
}

impl HermiteExpansion {
    pub fn order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn mean(&self) -> f64 {
        self.coeffs.first().copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut total = 0.0;
        let (mut h0, mut h1) = (1.0, x);
        for (k, c) in self.coeffs.iter().enumerate() {
            let hk = match k {
                0 => h0,
                1 => h1,
                _ => {
                    let h2 = (x * h1 - ((k - 1) as f64).sqrt() * h0) / (k as f64).sqrt();
                    h0 = h1;
                    h1 = h2;
                    h2
                }
            };
            total += c * hk;
        }
        total
    }
}

pub const MAX_HERMITE_ORDER: usize = 60;

/// Orthonormal Hermite values `h_0..h_K` at `x`.
fn hermite_values(x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 2..out.len() {
        out[k] = (x * out[k - 1] - ((k - 1) as f64).sqrt() * out[k - 2]) / (k as f64).sqrt();
    }
}

/// `c_k = E[f(Z) He_k(Z)] / sqrt(k!)`, `k = 0..=order`.
///
/// Integrals use composite Gauss–Legendre under the Gaussian density, split
/// at the function's kinks; the panel count is doubled until no coefficient
/// moves by more than 1e-10.
pub fn hermite_expand(f: &CatalogFn, order: usize) -> Result<HermiteExpansion> {
    if order > MAX_HERMITE_ORDER {
        return Err(Error::invalid(
            "K",
            format!("order above {MAX_HERMITE_ORDER}"),
        ));
    }
    let reach = f.reach();
    let breaks = f.breakpoints();
    let at = |density: f64| {
        let mut acc = vec![0.0; order + 1];
        let mut h = vec![0.0; order + 1];
        composite_gl_many(
            |x, w| {
                let fx = f.eval(x) * normal_pdf(x) * w;
                if fx == 0.0 {
                    return;
                }
                hermite_values(x, &mut h);
                for (a, hk) in acc.iter_mut().zip(&h) {
                    *a += fx * hk;
                }
            },
            -reach,
            reach,
            &breaks,
            density,
        );
        acc
    };
    let mut density = 2.0;
    let mut prev = at(density);
    for _ in 0..7 {
        density *= 2.0;
        let next = at(density);
        let moved = prev
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved <= 1e-10 {
            return Ok(HermiteExpansion { coeffs: next });
        }
        prev = next;
    }
    Err(Error::Numerical(
        "hermite coefficients did not settle".into(),
    ))
}

fn check_mehler_parameter(a: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&a) {
        return Err(Error::invalid("a", "Mehler parameter must lie in [-1, 1]"));
    }
    Ok(())
}

/// `M_a`: scale the k-th chaos component by `a^k`.
pub fn mehler_apply(exp: &HermiteExpansion, a: f64) -> Result<HermiteExpansion> {
    check_mehler_parameter(a)?;
    let mut pow = 1.0;
    let coeffs = exp
        .coeffs
        .iter()
        .map(|c| {
            let v = pow * c;
            pow *= a;
            v
        })
        .collect();
    Ok(HermiteExpansion { coeffs })
}

/// `Var M_a(X) = sum_{k>=1} a^{2k} c_k^2`.
pub fn mehler_variance(exp: &HermiteExpansion, a: f64) -> f64 {
    let a2 = a * a;
    let mut pow = 1.0;
    let mut total = 0.0;
    for c in exp.coeffs.iter().skip(1) {
        pow *= a2;
        total += pow * c * c;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HyperPair {
    /// `||M_a f||_2`
    pub lhs: f64,
    /// `||f||_{1+a^2}`
    pub rhs: f64,
}

const HYPER_TOL: f64 = 1e-12;
const HYPER_SETTLE: f64 = 1e-8;

fn settled(f: impl Fn(f64) -> f64, breaks: &[f64], reach: f64) -> Result<f64> {
    match gaussian_expectation(f, breaks, reach, HYPER_TOL) {
        Ok((v, _)) => Ok(v),
        Err(_) => Err(Error::Numerical(format!(
            "quadrature moved by more than {HYPER_SETTLE:e} under node doubling"
        ))),
    }
}

/// Both sides of `||M_a f||_2 <= ||f||_{1+a^2}` under the standard Gaussian.
///
/// The left side uses the Mehler kernel `M_a f(x) = E f(a x + sqrt(1-a^2) Z)`
/// (closed form per catalog entry) and one outer quadrature.
pub fn hypercontractivity_check(f: &CatalogFn, a: f64) -> Result<HyperPair> {
    check_mehler_parameter(a)?;
    let s = (1.0 - a * a).max(0.0).sqrt();
    let reach = f.reach();
    let mut breaks = f.breakpoints();
    let lhs_sq = if s == 0.0 {
        settled(
            |x| f.eval(a * x).powi(2),
            &breaks.iter().map(|b| b / a).collect::<Vec<_>>(),
            reach,
        )?
    } else if a == 0.0 {
        f.gaussian_mean(0.0, 1.0).powi(2)
    } else {
        // M_a f is smooth for |a| < 1, but keep nodes dense near where the
        // kernel mean crosses a kink.
        let scaled: Vec<f64> = breaks.iter().map(|b| b / a).collect();
        settled(|x| f.gaussian_mean(a * x, s).powi(2), &scaled, reach)?
    };
    let p = 1.0 + a * a;
    breaks.sort_by(f64::total_cmp);
    let moment = settled(|x| f.eval(x).abs().powf(p), &breaks, reach)?;
    Ok(HyperPair {
        lhs: lhs_sq.max(0.0).sqrt(),
        rhs: moment.powf(1.0 / p),
    })
}

/// `Fbar^{2/(1+rho)}`: the joint-exceedance bound for identically
/// distributed functionals of Gaussian spaces with maximal correlation `rho`.
pub fn joint_tail_bound(fbar: f64, rho: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&fbar));
    fbar.powf(2.0 / (1.0 + rho.abs().min(1.0)))
}

/// Largest `|x|` for which [`bvn_joint_tail`] is certified.
pub const BVN_MAX_LEVEL: f64 = 8.0;

/// `P(X_1 > x, X_2 > x)` for a standard bivariate normal with correlation
/// `rho`, as `int_x^inf phi(s) Phibar((x - rho s)/sqrt(1-rho^2)) ds`.
pub fn bvn_joint_tail(rho: f64, x: f64) -> Result<f64> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::invalid("rho", "must lie in (-1, 1)"));
    }
    if !(x.abs() <= BVN_MAX_LEVEL) {
        return Err(Error::invalid(
            "x",
            format!("accuracy not certified beyond |x| = {BVN_MAX_LEVEL}"),
        ));
    }
    let sigma = (1.0 - rho * rho).sqrt();
    let integrand = |s: f64| normal_pdf(s) * normal_sf((x - rho * s) / sigma);
    let upper = x.max(0.0) + 14.0;
    let mut cuts = vec![x];
    if rho > 0.0 {
        let kink = x / rho;
        if kink > x && kink < upper {
            cuts.push(kink);
        }
    }
    cuts.push(upper);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        total += adaptive_gk(integrand, w[0], w[1], 1e-14)?;
    }
    Ok(total)
}
