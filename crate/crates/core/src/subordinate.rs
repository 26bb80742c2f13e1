//! Moving-window transforms `Y_{k,i} = G_i(X_k, ..., X_{k-m})`.
//!
//! Only catalog maps are accepted so that every marginal law used downstream
//! (thresholds, tail oracles) is known in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::normal_sf;
use crate::series::SeriesMatrix;

/// One output coordinate. `lag` counts steps back from the current time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Part {
    Identity {
        coord: usize,
        #[serde(default)]
        lag: usize,
    },
    Abs {
        coord: usize,
        #[serde(default)]
        lag: usize,
    },
    Square {
        coord: usize,
        #[serde(default)]
        lag: usize,
    },
    /// `(1 - Phi(x))^{-1/alpha}`: exact Pareto(alpha) for standard normal `x`.
    Pareto {
        alpha: f64,
        coord: usize,
        #[serde(default)]
        lag: usize,
    },
    /// `(1 - F_|N|(|x|))^{-1/alpha}`; same marginal, not monotone in `x`.
    FoldedPareto {
        alpha: f64,
        coord: usize,
        #[serde(default)]
        lag: usize,
    },
    /// Maximum of `X_{k-l, c}` over all `c` in `coords` and `l` in `lags`.
    WindowMax {
        coords: Vec<usize>,
        lags: Vec<usize>,
    },
}

impl Part {
    fn eval(&self, window: impl Fn(usize, usize) -> f64) -> f64 {
        match *self {
            Part::Identity { coord, lag } => window(lag, coord),
            Part::Abs { coord, lag } => window(lag, coord).abs(),
            Part::Square { coord, lag } => window(lag, coord).powi(2),
            Part::Pareto { alpha, coord, lag } => pareto_of(window(lag, coord), alpha),
            Part::FoldedPareto { alpha, coord, lag } => folded_pareto_of(window(lag, coord), alpha),
            Part::WindowMax {
                ref coords,
                ref lags,
            } => lags
                .iter()
                .flat_map(|&l| coords.iter().map(move |&c| (l, c)))
                .map(|(l, c)| window(l, c))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn references(&self) -> Vec<(usize, usize)> {
        match self {
            Part::Identity { coord, lag }
            | Part::Abs { coord, lag }
            | Part::Square { coord, lag }
            | Part::Pareto { coord, lag, .. }
            | Part::FoldedPareto { coord, lag, .. } => vec![(*lag, *coord)],
            Part::WindowMax { coords, lags } => lags
                .iter()
                .flat_map(|&l| coords.iter().map(move |&c| (l, c)))
                .collect(),
        }
    }

    fn alpha(&self) -> Option<f64> {
        match self {
            Part::Pareto { alpha, .. } | Part::FoldedPareto { alpha, .. } => Some(*alpha),
            _ => None,
        }
    }
}

pub fn pareto_of(x: f64, alpha: f64) -> f64 {
    normal_sf(x).powf(-1.0 / alpha)
}

pub fn folded_pareto_of(x: f64, alpha: f64) -> f64 {
    (2.0 * normal_sf(x.abs())).min(1.0).powf(-1.0 / alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTransform {
    pub m: usize,
    pub parts: Vec<Part>,
}

impl WindowTransform {
    /// The same instantaneous map on every coordinate of a `d`-variate input.
    pub fn coordinatewise(d: usize, part: impl Fn(usize) -> Part) -> Self {
        Self {
            m: 0,
            parts: (0..d).map(part).collect(),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::coordinatewise(d, |coord| Part::Identity { coord, lag: 0 })
    }

    pub fn d(&self) -> usize {
        self.parts.len()
    }

    /// Checks every part against an input of dimension `d0`.
    pub fn validate(&self, d0: usize) -> Result<()> {
        if self.parts.is_empty() {
            return Err(Error::invalid(
                "parts",
                "at least one output coordinate is required",
            ));
        }
        for (i, part) in self.parts.iter().enumerate() {
            if let Some(alpha) = part.alpha() {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::invalid(
                        format!("parts[{i}].alpha"),
                        format!("must be positive and finite, got {alpha}"),
                    ));
                }
            }
            let refs = part.references();
            if refs.is_empty() {
                return Err(Error::invalid(
                    format!("parts[{i}]"),
                    "window_max needs at least one coordinate and lag",
                ));
            }
            for (lag, coord) in refs {
                if coord >= d0 {
                    return Err(Error::invalid(
                        format!("parts[{i}].coord"),
                        format!("coordinate {coord} out of range for d0 = {d0}"),
                    ));
                }
                if lag > self.m {
                    return Err(Error::invalid(
                        format!("parts[{i}].lag"),
                        format!("lag {lag} exceeds window m = {}", self.m),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// `Y_{k} = G(X_k, ..., X_{k-m})` for `k = m+1..n`; the output has `n - m` rows.
pub fn apply(x: &SeriesMatrix, t: &WindowTransform) -> Result<SeriesMatrix> {
    t.validate(x.d())?;
    let n = x.n();
    if n <= t.m {
        return Err(Error::Dimension(format!(
            "path of length {n} is too short for window m = {}",
            t.m
        )));
    }
    let d = t.d();
    let rows = n - t.m;
    let mut out = Vec::with_capacity(rows * d);
    for k in t.m..n {
        for part in &t.parts {
            out.push(part.eval(|lag, c| x.get(k - lag, c)));
        }
    }
    SeriesMatrix::from_rows(rows, d, out).map(|s| s.with_meta(x.meta.clone()))
}

/// Exact `P(W > u)` for Pareto-type parts on a standard normal coordinate.
pub fn marginal_tail(part: &Part, u: f64) -> Result<f64> {
    let alpha = part
        .alpha()
        .ok_or_else(|| Error::invalid("part", "tail is only known for pareto and folded_pareto"))?;
    if !(u >= 1.0) {
        return Err(Error::invalid("u", format!("must be at least 1, got {u}")));
    }
    Ok(u.powf(-alpha))
}
