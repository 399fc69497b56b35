//! Predictive distribution of a new subject's coefficients: a mixture of
//! normals weighted by the expected stick-breaking proportions.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::model::GlobalState;
use crate::special::ln_two_pi;

/// How expected stick proportions combine into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WeightForm {
    /// w_r = E[v_r] ∏_{l<r} (1 − E[v_l]); sums to one.
    #[default]
    Standard,
    /// w_r = E[v_r] ∏_{l<r} E[v_l], returned unnormalized.
    Printed,
}

pub fn mixing_weights(global: &GlobalState) -> Vec<f64> {
    mixing_weights_with(global, WeightForm::Standard)
}

pub fn mixing_weights_with(global: &GlobalState, form: WeightForm) -> Vec<f64> {
    let r_max = global.components();
    let mut out = Vec::with_capacity(r_max);
    let mut carry = 1.0;
    for r in 0..r_max {
        let v = if r + 1 < r_max {
            global.sticks[r].mean()
        } else {
            1.0
        };
        out.push(carry * v);
        carry *= match form {
            WeightForm::Standard => 1.0 - v,
            WeightForm::Printed => v,
        };
    }
    out
}

/// One group of atoms merged into a single normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Basin {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// Critical smoothing width; zero if the raw marginal already had few
    /// enough modes.
    pub width: f64,
    /// Maxima of the critically smoothed marginal.
    pub prominent: Vec<f64>,
    pub basins: Vec<Basin>,
    /// Maxima of the moment-matched reduction.
    pub modes: Vec<f64>,
}

impl ModeSummary {
    /// Weighted root-mean-square of the basin standard deviations.
    pub fn pooled_sd(&self) -> f64 {
        let total: f64 = self.basins.iter().map(|b| b.weight).sum();
        (self
            .basins
            .iter()
            .map(|b| b.weight * b.sd * b.sd)
            .sum::<f64>()
            / total)
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOfNormals {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl MixtureOfNormals {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let mix = MixtureOfNormals {
            weights,
            means,
            covs,
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn from_global(global: &GlobalState) -> Self {
        MixtureOfNormals {
            weights: mixing_weights(global),
            means: global.beta_mean.clone(),
            covs: global.beta_cov.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.weights.len();
        if r == 0 || self.means.len() != r || self.covs.len() != r {
            return Err(Error::Domain(
                "mixture needs matching, non-empty parts".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain("mixture weights must be non-negative".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::Domain("mixture weights must sum to one".into()));
        }
        if self.covs.iter().any(|c| c.clone().cholesky().is_none()) {
            return Err(Error::Domain(
                "mixture covariances must be positive definite".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Marginal density of coordinate `j` at `x`.
    pub fn marginal_density(&self, j: usize, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.covs)
            .map(|((w, m), c)| {
                let var = c[(j, j)];
                let d = x - m[j];
                w * (-0.5 * (ln_two_pi() + var.ln()) - 0.5 * d * d / var).exp()
            })
            .sum()
    }

    /// Mean and standard deviation of coordinate `j`.
    pub fn marginal_moments(&self, j: usize) -> (f64, f64) {
        let total: f64 = self.weights.iter().sum();
        let mean: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m[j])
            .sum::<f64>()
            / total;
        let second: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.covs)
            .map(|((w, m), c)| w * (c[(j, j)] + m[j] * m[j]))
            .sum::<f64>()
            / total;
        (mean, (second - mean * mean).max(0.0).sqrt())
    }

    /// The mixture restricted to components selected by `keep`, renormalized;
    /// `None` if they carry no weight.
    pub fn restrict(&self, keep: impl Fn(&DVector<f64>) -> bool) -> Option<MixtureOfNormals> {
        let mut out = MixtureOfNormals {
            weights: Vec::new(),
            means: Vec::new(),
            covs: Vec::new(),
        };
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            if keep(m) {
                out.weights.push(*w);
                out.means.push(m.clone());
                out.covs.push(c.clone());
            }
        }
        let total: f64 = out.weights.iter().sum();
        if out.weights.is_empty() || total <= 0.0 {
            return None;
        }
        out.weights.iter_mut().for_each(|w| *w /= total);
        Some(out)
    }

    /// The same mixture with every component widened by an independent
    /// N(0, bandwidth²) in every coordinate.
    pub fn smoothed(&self, bandwidth: f64) -> MixtureOfNormals {
        let b2 = bandwidth * bandwidth;
        let covs = self
            .covs
            .iter()
            .map(|c| {
                let mut c = c.clone();
                for i in 0..c.nrows() {
                    c[(i, i)] += b2;
                }
                c
            })
            .collect();
        MixtureOfNormals {
            covs,
            ..self.clone()
        }
    }

    fn marginal_modes(&self, j: usize, grid: &[f64]) -> Vec<(f64, f64)> {
        let ys: Vec<f64> = grid.iter().map(|&x| self.marginal_density(j, x)).collect();
        local_maxima(grid, &ys)
    }

    /// The `k` most prominent modes of the coordinate-`j` marginal.
    ///
    /// A fitted mixture is often a comb of atoms much narrower than the
    /// spread they describe, so its raw marginal has many spikes. This finds
    /// the critical width (Silverman): the smallest Gaussian smoothing under
    /// which the marginal has at most `k` local maxima, and returns that
    /// width with the maxima there, in increasing order. With a Gaussian
    /// kernel the mode count never increases with the width, so bisection is
    /// valid. The result can have fewer than `k` modes when the count jumps
    /// past `k`.
    pub fn prominent_modes(&self, j: usize, k: usize, points: usize) -> (f64, Vec<f64>) {
        let grid = self.default_grid(6.0, points);
        let raw = self.marginal_modes(j, &grid);
        let pick = |m: Vec<(f64, f64)>| m.into_iter().map(|p| p.0).collect::<Vec<_>>();
        if raw.len() <= k {
            return (0.0, pick(raw));
        }
        let (_, sd) = self.marginal_moments(j);
        let (mut lo, mut hi) = (0.0, sd.max(f64::MIN_POSITIVE));
        while self.smoothed(hi).marginal_modes(j, &grid).len() > k {
            hi *= 2.0;
        }
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.smoothed(mid).marginal_modes(j, &grid).len() > k {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (hi, pick(self.smoothed(hi).marginal_modes(j, &grid)))
    }

    /// Summary of the coordinate-`j` marginal at the resolution of its `k`
    /// prominent modes. Atoms are split into basins at the minima of the
    /// critically smoothed density between consecutive prominent modes;
    /// each basin is merged into one normal by matching its first two
    /// moments, and the modes are the local maxima of that reduced mixture.
    pub fn mode_summary(&self, j: usize, k: usize, points: usize) -> ModeSummary {
        let (width, prominent) = self.prominent_modes(j, k, points);
        let grid = self.default_grid(6.0, points);
        let wide = self.smoothed(width);
        let mut cuts = Vec::new();
        for pair in prominent.windows(2) {
            let (mut at, mut low) = (pair[0], f64::INFINITY);
            for &x in grid.iter().filter(|&&x| x > pair[0] && x < pair[1]) {
                let y = wide.marginal_density(j, x);
                if y < low {
                    (at, low) = (x, y);
                }
            }
            cuts.push(at);
        }
        let total: f64 = self.weights.iter().sum();
        // weight, first and second moment per basin; each component's mass
        // is split at the cuts
        let mut acc = vec![[0.0; 3]; cuts.len() + 1];
        let mut edges = vec![f64::NEG_INFINITY];
        edges.extend(&cuts);
        edges.push(f64::INFINITY);
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covs) {
            let w = w / total;
            for (b, pair) in edges.windows(2).enumerate() {
                let [p, m1, m2] = truncated_moments(m[j], c[(j, j)].sqrt(), pair[0], pair[1]);
                acc[b][0] += w * p;
                acc[b][1] += w * m1;
                acc[b][2] += w * m2;
            }
        }
        let basins: Vec<Basin> = acc
            .iter()
            .filter(|a| a[0] > 0.0)
            .map(|&[w, m1, m2]| {
                let mean = m1 / w;
                Basin {
                    weight: w,
                    mean,
                    sd: (m2 / w - mean * mean).max(0.0).sqrt(),
                }
            })
            .collect();
        let reduced = MixtureOfNormals {
            weights: basins.iter().map(|b| b.weight).collect(),
            means: basins
                .iter()
                .map(|b| DVector::from_element(1, b.mean))
                .collect(),
            covs: basins
                .iter()
                .map(|b| DMatrix::from_element(1, 1, b.sd.max(1e-12).powi(2)))
                .collect(),
        };
        let modes = reduced
            .marginal_modes(0, &grid)
            .into_iter()
            .map(|p| p.0)
            .collect();
        ModeSummary {
            width,
            prominent,
            basins,
            modes,
        }
    }

    /// Evenly spaced grid covering every component mean ± `width` standard
    /// deviations in every coordinate.
    pub fn default_grid(&self, width: f64, points: usize) -> Vec<f64> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (m, c) in self.means.iter().zip(&self.covs) {
            for j in 0..m.len() {
                let sd = c[(j, j)].sqrt();
                lo = lo.min(m[j] - width * sd);
                hi = hi.max(m[j] + width * sd);
            }
        }
        linspace(lo, hi, points)
    }
}

/// ∫ x^p N(x; m, s²) dx over (a, b) for p = 0, 1, 2.
fn truncated_moments(m: f64, s: f64, a: f64, b: f64) -> [f64; 3] {
    if s == 0.0 {
        return if m > a && m <= b {
            [1.0, m, m * m]
        } else {
            [0.0; 3]
        };
    }
    let (za, zb) = ((a - m) / s, (b - m) / s);
    let pdf = |z: f64| {
        if z.is_finite() {
            (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
        } else {
            0.0
        }
    };
    let zpdf = |z: f64| if z.is_finite() { z * pdf(z) } else { 0.0 };
    // upper tails keep precision far from the mean
    let mass = 0.5 * (erfc(za / SQRT_2) - erfc(zb / SQRT_2));
    let dp = pdf(za) - pdf(zb);
    [
        mass,
        m * mass + s * dp,
        (m * m + s * s) * mass + 2.0 * m * s * dp + s * s * (zpdf(za) - zpdf(zb)),
    ]
}

pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Marginal predictive densities of every coordinate on a shared grid;
/// entry `[j][i]` is coordinate `j` at `grid[i]`.
pub fn predict_beta_density(global: &GlobalState, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    if grid.is_empty() {
        return Err(Error::Domain("evaluation grid is empty".into()));
    }
    let mix = MixtureOfNormals::from_global(global);
    Ok(density_table(&mix, grid))
}

pub fn density_table(mix: &MixtureOfNormals, grid: &[f64]) -> Vec<Vec<f64>> {
    (0..mix.dim())
        .map(|j| grid.iter().map(|&x| mix.marginal_density(j, x)).collect())
        .collect()
}

/// Interior strict local maxima of `ys` as `(x, y)` pairs, plateaus counted once.
pub fn local_maxima(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let n = ys.len();
    let mut i = 1;
    while i + 1 < n {
        if ys[i] > ys[i - 1] {
            let mut j = i;
            while j + 1 < n && ys[j + 1] == ys[i] {
                j += 1;
            }
            if j + 1 < n && ys[j + 1] < ys[i] {
                out.push((xs[(i + j) / 2], ys[i]));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Tab-separated table: grid value, then one density column per coordinate.
pub fn write_density_tsv<W: Write>(
    mut out: W,
    grid: &[f64],
    densities: &[Vec<f64>],
) -> std::io::Result<()> {
    write!(out, "x")?;
    for j in 0..densities.len() {
        write!(out, "\tbeta{}", j + 1)?;
    }
    writeln!(out)?;
    for (i, x) in grid.iter().enumerate() {
        write!(out, "{x:.10e}")?;
        for d in densities {
            write!(out, "\t{:.10e}", d[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
