use serde::{Deserialize, Serialize};

pub const HISTOGRAM_BINS: usize = 10;

/// Quantiles reported per channel: min, lower quartile, median, upper quartile.
pub const QUANTILES: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

/// Moments and a fixed histogram over [0, 1] of one probability channel.
/// `m2` is the sum of squared deviations from the mean; keeping it instead
/// of the raw sum of squares avoids cancellation on near-constant channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub histogram: [u64; HISTOGRAM_BINS],
}

impl Default for ChannelStats {
    fn default() -> Self {
        ChannelStats { count: 0, mean: 0.0, m2: 0.0, histogram: [0; HISTOGRAM_BINS] }
    }
}

fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

impl ChannelStats {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
        self.histogram[bin_of(v)] += 1;
    }

    pub fn merge(&mut self, other: &ChannelStats) {
        if other.count == 0 {
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let d = other.mean - self.mean;
        self.mean += d * nb / n;
        self.m2 += other.m2 + d * d * na * nb / n;
        self.count += other.count;
        for (a, b) in self.histogram.iter_mut().zip(&other.histogram) {
            *a += b;
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.m2 / self.count as f64).max(0.0).sqrt()
    }

    /// Histogram estimate of the `q` quantile: the bin where the cumulative
    /// count first reaches `q * count`, interpolated linearly inside it.
    /// Lands in the same bin as the exact order statistic
    /// `sorted[ceil(q * count) - 1]` (or `sorted[0]` for q = 0).
    pub fn quantile(&self, q: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let target = q * self.count as f64;
        let mut below = 0.0;
        for (b, &h) in self.histogram.iter().enumerate() {
            if h == 0 {
                continue;
            }
            let h = h as f64;
            if below + h >= target {
                let frac = ((target - below) / h).clamp(0.0, 1.0);
                return (b as f64 + frac) / HISTOGRAM_BINS as f64;
            }
            below += h;
        }
        1.0
    }

    /// Mean, std and the four quantiles.
    pub fn summary(&self) -> [f64; 6] {
        let mut out = [self.mean(), self.std(), 0.0, 0.0, 0.0, 0.0];
        for (slot, &q) in out[2..].iter_mut().zip(&QUANTILES) {
            *slot = self.quantile(q);
        }
        out
    }
}

/// Per-channel statistics of a set of probability vectors; merging two sets
/// costs O(k) regardless of their sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeableStats {
    pub channels: Vec<ChannelStats>,
}

impl MergeableStats {
    pub fn new(k: usize) -> Self {
        MergeableStats { channels: vec![ChannelStats::default(); k] }
    }

    pub fn from_rows<'a>(k: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut s = Self::new(k);
        for r in rows {
            s.push(r);
        }
        s
    }

    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn count(&self) -> u64 {
        self.channels.first().map_or(0, |c| c.count)
    }

    pub fn push(&mut self, row: &[f64]) {
        for (c, &v) in self.channels.iter_mut().zip(row) {
            c.push(v);
        }
    }

    pub fn merge(&mut self, other: &MergeableStats) {
        for (a, b) in self.channels.iter_mut().zip(&other.channels) {
            a.merge(b);
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.channels.iter().map(ChannelStats::mean).collect()
    }

    /// `6 * k` values: per channel mean, std, min, q25, median, q75.
    pub fn summary(&self) -> Vec<f64> {
        self.channels.iter().flat_map(|c| c.summary()).collect()
    }
}
