//! Linearly increasing depth discretization.
//!
//! Bin `l` (zero based) has width `δ·(l+1)`, so bins are finest near the
//! camera. With `K` bins over `[d_min, d_max]` the unit width is
//! `δ = 2(d_max − d_min) / (K(K+1))` and the lower edge of bin `l` sits at
//! `d_min + δ·l(l+1)/2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DepthBinRecord", into = "DepthBinRecord")]
pub struct DepthBinSpec {
    d_min: f64,
    d_max: f64,
    num_bins: usize,
    delta: f64,
}

/// Config-file keys for a depth bin spec.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DepthBinRecord {
    pub depth_min: f64,
    pub depth_max: f64,
    pub depth_bins: usize,
}

impl DepthBinSpec {
    pub fn new(d_min: f64, d_max: f64, num_bins: usize) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite()) {
            return Err(Error::NonFinite("depth range"));
        }
        if d_min >= d_max {
            return Err(Error::invariant(format!(
                "depth range requires d_min < d_max (got {d_min} >= {d_max})"
            )));
        }
        if num_bins == 0 {
            return Err(Error::invariant("depth bin count must be >= 1"));
        }
        let k = num_bins as f64;
        Ok(DepthBinSpec {
            d_min,
            d_max,
            num_bins,
            delta: 2.0 * (d_max - d_min) / (k * (k + 1.0)),
        })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    /// Unit width `δ`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Edge `e` in `0..=K`; edge `K` is pinned to `d_max`.
    fn edge(&self, e: usize) -> f64 {
        if e >= self.num_bins {
            return self.d_max;
        }
        let tri = (e * (e + 1) / 2) as f64;
        self.d_min + self.delta * tri
    }

    /// Bin index of a depth, clamped to `[0, K−1]`.
    ///
    /// The closed-form floor is evaluated first and then nudged by at most a
    /// step so the answer agrees with [`bin_bounds`](Self::bin_bounds) even
    /// when rounding lands a depth on the wrong side of an edge.
    pub fn depth_to_bin(&self, d_hat: f64) -> usize {
        let last = self.num_bins - 1;
        if d_hat.is_nan() || d_hat <= self.d_min {
            return 0;
        }
        if d_hat >= self.d_max {
            return last;
        }
        let raw = (-0.5 + 0.5 * (1.0 + 8.0 * (d_hat - self.d_min) / self.delta).sqrt()).floor();
        let mut l = if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(last)
        };
        while l > 0 && d_hat < self.edge(l) {
            l -= 1;
        }
        while l < last && d_hat >= self.edge(l + 1) {
            l += 1;
        }
        l
    }

    pub fn bin_bounds(&self, l: usize) -> Result<(f64, f64)> {
        if l >= self.num_bins {
            return Err(Error::OutOfRange {
                what: "depth bin",
                index: l,
                limit: self.num_bins,
            });
        }
        Ok((self.edge(l), self.edge(l + 1)))
    }

    pub fn bin_center(&self, l: usize) -> Result<f64> {
        let (lo, hi) = self.bin_bounds(l)?;
        Ok(0.5 * (lo + hi))
    }

    pub fn bin_width(&self, l: usize) -> Result<f64> {
        let (lo, hi) = self.bin_bounds(l)?;
        Ok(hi - lo)
    }
}

impl TryFrom<DepthBinRecord> for DepthBinSpec {
    type Error = Error;

    fn try_from(r: DepthBinRecord) -> Result<Self> {
        DepthBinSpec::new(r.depth_min, r.depth_max, r.depth_bins)
    }
}

impl From<DepthBinSpec> for DepthBinRecord {
    fn from(s: DepthBinSpec) -> Self {
        DepthBinRecord {
            depth_min: s.d_min,
            depth_max: s.d_max,
            depth_bins: s.num_bins,
        }
    }
}
