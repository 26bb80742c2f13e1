//! Normal-law helpers and quadrature rules shared by the Gaussian tooling.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Upper tail `P(Z > x)`, accurate in relative terms far into the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    normal_sf(-x)
}

/// `x` with `P(Z > x) = p`, polished by Newton steps on [`normal_sf`].
pub fn normal_isf(p: f64) -> f64 {
    let mut x = SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..3 {
        let dens = normal_pdf(x);
        if !(dens > 0.0) {
            break;
        }
        x += (normal_sf(x) - p) / dens;
    }
    x
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp;
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=order {
                let j = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
            }
            dp = n * (z * p1 - p2) / (z * z - 1.0);
            let step = p1 / dp;
            z -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[order - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

const PANEL_ORDER: usize = 20;

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

/// Composite Gauss–Legendre on `[lo, hi]`: the interval is split at every
/// breakpoint and each piece into `panels_per_unit * length` equal panels.
pub fn composite_gl<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    panels_per_unit: f64,
) -> f64 {
    let (nodes, weights) = panel_rule();
    let mut cuts: Vec<f64> = std::iter::once(lo)
        .chain(breakpoints.iter().copied().filter(|&b| b > lo && b < hi))
        .chain(std::iter::once(hi))
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let panels = ((b - a) * panels_per_unit).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            let half = 0.5 * h;
            let s: f64 = nodes
                .iter()
                .zip(weights)
                .map(|(x, w)| w * f(mid + half * x))
                .sum();
            total += s * half;
        }
    }
    total
}

/// Vector-valued [`composite_gl`]: `f(x, out)` adds `weight * value` terms
/// through the accumulator callback. Used when many moments share nodes.
pub fn composite_gl_many<F: FnMut(f64, f64)>(
    mut f: F,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    panels_per_unit: f64,
) {
    let (nodes, weights) = panel_rule();
    let mut cuts: Vec<f64> = std::iter::once(lo)
        .chain(breakpoints.iter().copied().filter(|&b| b > lo && b < hi))
        .chain(std::iter::once(hi))
        .collect();
    cuts.sort_by(f64::total_cmp);
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let panels = ((b - a) * panels_per_unit).ceil().max(1.0) as usize;
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            let half = 0.5 * h;
            for (x, w) in nodes.iter().zip(weights) {
                f(mid + half * x, w * half);
            }
        }
    }
}

const GRADING_LEVELS: i32 = 40;

/// `E f(Z)` for standard normal `Z`, integrating over `[-reach, reach]` with
/// panel doubling until two successive estimates agree within `tol`.
/// Returns the estimate and the last doubling difference.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(
    f: F,
    breakpoints: &[f64],
    reach: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let g = |x: f64| f(x) * normal_pdf(x);
    // Geometric grading toward each breakpoint keeps convergence fast for
    // algebraic kinks such as |x - b|^p.
    let cuts: Vec<f64> = breakpoints
        .iter()
        .flat_map(|&b| {
            (0..GRADING_LEVELS).flat_map(move |k| {
                let off = 0.5f64.powi(k);
                [b - off, b + off]
            })
        })
        .chain(breakpoints.iter().copied())
        .collect();
    let mut density = 2.0;
    let mut prev = composite_gl(g, -reach, reach, &cuts, density);
    for _ in 0..8 {
        density *= 2.0;
        let next = composite_gl(g, -reach, reach, &cuts, density);
        let diff = (next - prev).abs();
        if diff <= tol * next.abs().max(1.0) {
            return Ok((next, diff));
        }
        prev = next;
    }
    Err(Error::Numerical(format!(
        "gaussian quadrature did not settle within {tol:e}"
    )))
}

// Gauss–Kronrod 7/15 abscissae and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integration of `f` over `[a, b]`. A piece is
/// accepted once its error estimate is below its share of `rel_tol * |I|`.
pub fn adaptive_gk<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let (coarse, _) = gk15(&f, a, b);
    let span = b - a;
    let mut stack = vec![(a, b, 0u32)];
    let mut pieces = Vec::new();
    let mut err_total = 0.0;
    let mut scale = coarse.abs();
    let mut evaluations = 0usize;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15(&f, lo, hi);
        evaluations += 1;
        if evaluations > 400_000 {
            return Err(Error::Numerical(
                "adaptive quadrature budget exhausted".into(),
            ));
        }
        scale = scale.max(val.abs());
        let share = rel_tol * scale * (hi - lo) / span;
        if err <= share || err <= 0.1 * rel_tol * val.abs() || depth >= 60 {
            pieces.push(val);
            err_total += err;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    pieces.sort_by(|x: &f64, y: &f64| x.abs().total_cmp(&y.abs()));
    let total: f64 = pieces.iter().sum();
    if err_total > 10.0 * rel_tol * total.abs() && err_total > f64::MIN_POSITIVE {
        return Err(Error::Numerical(format!(
            "adaptive quadrature error {err_total:e} exceeds tolerance"
        )));
    }
    Ok(total)
}
