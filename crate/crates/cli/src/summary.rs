//! Structured fit summaries.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ovb_core::predictive::{density_table, linspace, local_maxima, write_density_tsv, ModeSummary};
use ovb_core::{GammaParams, GlobalState, MixtureOfNormals, Result, Summary};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

use crate::args::DensityArgs;

const LOWER: f64 = 0.025;
const UPPER: f64 = 0.975;

/// Posterior mean, sd and central 95% interval of a gamma variable.
pub fn gamma_interval(p: GammaParams) -> Summary {
    let law = Gamma::new(p.shape, p.rate).expect("gamma parameters are validated upstream");
    Summary {
        mean: p.shape / p.rate,
        sd: p.shape.sqrt() / p.rate,
        lower: law.inverse_cdf(LOWER),
        upper: law.inverse_cdf(UPPER),
    }
}

/// Same for the reciprocal of a gamma variable; moments that do not exist
/// come out as NaN (written as null).
pub fn inverse_gamma_interval(p: GammaParams) -> Summary {
    let law = Gamma::new(p.shape, p.rate).expect("gamma parameters are validated upstream");
    let (a, b) = (p.shape, p.rate);
    Summary {
        mean: if a > 1.0 { b / (a - 1.0) } else { f64::NAN },
        sd: if a > 2.0 {
            b / ((a - 1.0) * (a - 2.0).sqrt())
        } else {
            f64::NAN
        },
        lower: 1.0 / law.inverse_cdf(UPPER),
        upper: 1.0 / law.inverse_cdf(LOWER),
    }
}

pub fn normal_interval(mean: f64, var: f64) -> Summary {
    let z = Normal::standard().inverse_cdf(UPPER);
    let sd = var.sqrt();
    Summary {
        mean,
        sd,
        lower: mean - z * sd,
        upper: mean + z * sd,
    }
}

#[derive(Debug, Serialize)]
pub struct ComponentSummary {
    pub index: usize,
    pub weight: f64,
    pub effective: bool,
    /// Random-walk precision (variants with temporal factors).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<Summary>,
    pub beta: Vec<Summary>,
}

/// Components ordered by decreasing expected weight.
pub fn components(
    global: &GlobalState,
    weights: &[f64],
    with_theta: bool,
    min_weight: f64,
) -> Vec<ComponentSummary> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    order
        .into_iter()
        .map(|r| ComponentSummary {
            index: r,
            weight: weights[r],
            effective: weights[r] >= min_weight,
            theta: with_theta.then(|| gamma_interval(global.theta[r])),
            beta: (0..global.beta_mean[r].len())
                .map(|j| normal_interval(global.beta_mean[r][j], global.beta_cov[r][(j, j)]))
                .collect(),
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Marginal {
    pub coordinate: usize,
    pub mean: f64,
    pub sd: f64,
    /// Local maxima `(x, density)` of the exported marginal, highest first.
    pub peaks: Vec<(f64, f64)>,
    /// Mode locations of the smoothed reading below.
    pub modes: Vec<f64>,
    pub reading: ModeSummary,
}

/// Writes the density table of `mix` to `path` and reads `k` modes off
/// every marginal.
pub fn export_density(
    mix: &MixtureOfNormals,
    opts: &DensityArgs,
    k: usize,
    path: &Path,
) -> Result<Vec<Marginal>> {
    let grid = match opts.range {
        Some((lo, hi, points)) => linspace(lo, hi, points),
        None => mix.default_grid(opts.width, opts.points),
    };
    let table = density_table(mix, &grid);
    write_density_tsv(BufWriter::new(File::create(path)?), &grid, &table)?;
    let k = opts.modes.unwrap_or(k).max(1);
    Ok((0..mix.dim())
        .map(|j| {
            let (mean, sd) = mix.marginal_moments(j);
            let reading = mix.mode_summary(j, k, opts.points);
            let mut peaks = local_maxima(&grid, &table[j]);
            peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
            Marginal {
                coordinate: j,
                mean,
                sd,
                peaks,
                modes: reading.modes.clone(),
                reading,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_interval_brackets_mean() {
        let s = gamma_interval(GammaParams::new(20.0, 4.0));
        assert!((s.mean - 5.0).abs() < 1e-12);
        assert!(s.lower < s.mean && s.mean < s.upper);
    }

    #[test]
    fn inverse_interval_is_reciprocal_of_gamma() {
        let p = GammaParams::new(30.0, 3.0);
        let (g, inv) = (gamma_interval(p), inverse_gamma_interval(p));
        assert!((inv.lower * g.upper - 1.0).abs() < 1e-12);
        assert!((inv.upper * g.lower - 1.0).abs() < 1e-12);
        assert!((inv.mean - 3.0 / 29.0).abs() < 1e-12);
    }

    #[test]
    fn normal_interval_is_symmetric() {
        let s = normal_interval(1.0, 4.0);
        assert!((s.upper - 1.0 - 1.959963984540054 * 2.0).abs() < 1e-9);
        assert!((s.upper + s.lower - 2.0).abs() < 1e-12);
    }
}
