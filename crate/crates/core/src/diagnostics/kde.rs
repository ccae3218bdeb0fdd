//! Gaussian kernel density estimates on a fixed grid.

use serde::{Deserialize, Serialize};

use crate::stats::LN_2PI;

/// Grid for density evaluation. `Auto` spans the draws padded by four
/// bandwidths on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridSpec {
    Auto { points: usize },
    Fixed { low: f64, high: f64, points: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto { points: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTable {
    pub bandwidth: f64,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityTable {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.x
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`. Falls back to the
/// larger of the two spreads, then to `0.01 max(1, |mean|)` when the draws
/// have no spread.
pub fn silverman_bandwidth(draws: &[f64]) -> f64 {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = if draws.len() > 1 {
        (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return 0.01 * mean.abs().max(1.0),
    };
    0.9 * spread * n.powf(-0.2)
}

pub fn kde_export(draws: &[f64], grid: GridSpec) -> DensityTable {
    assert!(!draws.is_empty(), "density estimate needs at least one draw");
    let h = silverman_bandwidth(draws);
    let (low, high, points) = match grid {
        GridSpec::Auto { points } => {
            let min = draws.iter().copied().fold(f64::INFINITY, f64::min);
            let max = draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (min - 4.0 * h, max + 4.0 * h, points)
        }
        GridSpec::Fixed { low, high, points } => (low, high, points),
    };
    let points = points.max(2);
    let step = (high - low) / (points - 1) as f64;
    let norm = -0.5 * LN_2PI - h.ln() - (draws.len() as f64).ln();
    let x: Vec<f64> = (0..points).map(|i| low + i as f64 * step).collect();
    let density = x
        .iter()
        .map(|&g| draws.iter().map(|&d| (norm - 0.5 * ((g - d) / h).powi(2)).exp()).sum())
        .collect();
    DensityTable { bandwidth: h, x, density }
}
