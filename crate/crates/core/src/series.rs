//! Time-major sample paths.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SeriesMeta {
    pub seed: Option<u64>,
    /// FNV-1a hash of the generating spec's JSON form.
    pub fingerprint: Option<String>,
    pub rng: Option<String>,
}

/// A finite stationary sample path: `n` rows (time), `d` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
    pub meta: SeriesMeta,
}

impl SeriesMatrix {
    pub fn from_rows(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Dimension("series needs n >= 1 and d >= 1".into()));
        }
        if values.len() != n * d {
            return Err(Error::Dimension(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite entry at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self {
            n,
            d,
            values,
            meta: SeriesMeta::default(),
        })
    }

    /// Single-column series.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::from_rows(n, 1, values)
    }

    pub fn with_meta(mut self, meta: SeriesMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.d + i]
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n).map(|k| self.get(k, i)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    /// Rows `start..end` as a new series (meta is carried over).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n {
            return Err(Error::Dimension(format!(
                "slice {start}..{end} out of range for length {}",
                self.n
            )));
        }
        let values = self.values[start * self.d..end * self.d].to_vec();
        Ok(Self {
            n: end - start,
            d: self.d,
            values,
            meta: self.meta.clone(),
        })
    }

    /// CSV with header `t,x1,...,xd`; `t` counts from 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (1..=self.d).map(|i| format!("x{i}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for (k, row) in self.rows().enumerate() {
            write!(out, "{}", k + 1)?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub(crate) fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).unwrap_or_default();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in json.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{hash:016x}")
}
