//! Proximity structure of the conditional autoregressive (CAR) prior on a
//! regular lattice, together with the log-determinants and quadratic forms
//! its precision `τ Ω⁻¹(I − ρC)` requires.
//!
//! `D` holds inverse-distance weights `‖r − s‖^{-φ}` for neighbours within
//! the cutoff radius, `C = Ω D` is its row-normalized version and
//! `Ω = diag(1 / d_{k+})`. Because `Ω⁻¹(I − ρC) = diag(d_{+}) − ρD` is
//! symmetric and diagonally dominant for `ρ < 1`, every log-determinant is
//! taken from a banded Cholesky factor of that matrix.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular lattice of spatial sites, indexed row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Line { len: usize },
    Lattice { rows: usize, cols: usize },
}

impl GridSpec {
    pub fn sites(&self) -> usize {
        match *self {
            GridSpec::Line { len } => len,
            GridSpec::Lattice { rows, cols } => rows * cols,
        }
    }

    /// Square lattice with `k` sites; `None` unless `k` is a perfect square.
    pub fn square(k: usize) -> Option<Self> {
        let side = (k as f64).sqrt().round() as usize;
        (side * side == k && k > 0).then_some(GridSpec::Lattice {
            rows: side,
            cols: side,
        })
    }

    fn coords(&self, k: usize) -> (i64, i64) {
        match *self {
            GridSpec::Line { .. } => (0, k as i64),
            GridSpec::Lattice { cols, .. } => ((k / cols) as i64, (k % cols) as i64),
        }
    }

    fn index(&self, row: i64, col: i64) -> Option<usize> {
        match *self {
            GridSpec::Line { len } => {
                (row == 0 && col >= 0 && (col as usize) < len).then_some(col as usize)
            }
            GridSpec::Lattice { rows, cols } => {
                (row >= 0 && col >= 0 && (row as usize) < rows && (col as usize) < cols)
                    .then(|| row as usize * cols + col as usize)
            }
        }
    }
}

/// Construction parameters for [`CarStructure`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarParams {
    /// Distance-decay exponent φ.
    pub phi: f64,
    /// Neighbours farther than this (in lattice steps) get zero weight.
    pub cutoff_radius: f64,
    /// Number of regular ρ levels M; the grid has M + 1 points.
    pub levels: usize,
    /// The top grid point is (M − ε) / M.
    pub epsilon: f64,
}

impl Default for CarParams {
    fn default() -> Self {
        CarParams {
            phi: 1.0,
            cutoff_radius: 2.0,
            levels: 10,
            epsilon: 0.01,
        }
    }
}

/// How the log-determinants over the ρ grid are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogDetMethod {
    /// Banded Cholesky factorization; exact up to rounding.
    Exact,
    /// Monte-Carlo trace estimates of the power series
    /// `log|I − ρC| = −Σ_j ρ^j tr(C^j) / j` (Barry & Pace). Only worth it
    /// for very large lattices.
    Stochastic {
        probes: usize,
        order: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct CarStructure {
    grid: GridSpec,
    params: CarParams,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// Raw proximities d_{rs}; symmetric.
    prox: Vec<f64>,
    /// c_{rs} = d_{rs} / d_{r+}.
    c_vals: Vec<f64>,
    row_sum: Vec<f64>,
    omega: Vec<f64>,
    bandwidth: usize,
    rho_grid: Vec<f64>,
    rho_prior: Vec<f64>,
    log_dets: Vec<f64>,
}

/// Builds the CAR structure with exact log-determinants.
pub fn build_car(
    grid: GridSpec,
    phi: f64,
    cutoff_radius: f64,
    levels: usize,
    epsilon: f64,
) -> Result<CarStructure> {
    CarStructure::new(
        grid,
        CarParams {
            phi,
            cutoff_radius,
            levels,
            epsilon,
        },
        LogDetMethod::Exact,
    )
}

impl CarStructure {
    pub fn new(grid: GridSpec, params: CarParams, method: LogDetMethod) -> Result<Self> {
        let k = grid.sites();
        if k == 0 {
            return Err(Error::Config("grid has no sites".into()));
        }
        if !(params.phi > 0.0) {
            return Err(Error::Config(format!(
                "phi must be positive, got {}",
                params.phi
            )));
        }
        if !(params.cutoff_radius >= 1.0) {
            return Err(Error::Config(format!(
                "cutoff radius must be at least 1, got {}",
                params.cutoff_radius
            )));
        }
        if params.levels < 2 {
            return Err(Error::Config(format!(
                "need M >= 2 rho levels, got {}",
                params.levels
            )));
        }
        if !(params.epsilon > 0.0 && params.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                params.epsilon
            )));
        }

        let reach = params.cutoff_radius.floor() as i64;
        let cutoff_sq = params.cutoff_radius * params.cutoff_radius;
        let mut row_ptr = Vec::with_capacity(k + 1);
        let mut col_idx = Vec::new();
        let mut prox = Vec::new();
        let mut row_sum = Vec::with_capacity(k);
        let mut bandwidth = 0usize;
        row_ptr.push(0);
        for site in 0..k {
            let (r, c) = grid.coords(site);
            let mut sum = 0.0;
            // offsets visited in row-major order keep column indices sorted
            for dr in -reach..=reach {
                for dc in -reach..=reach {
                    let dist_sq = (dr * dr + dc * dc) as f64;
                    if dist_sq == 0.0 || dist_sq > cutoff_sq + 1e-12 {
                        continue;
                    }
                    if let Some(nb) = grid.index(r + dr, c + dc) {
                        let w = dist_sq.sqrt().powf(-params.phi);
                        col_idx.push(nb);
                        prox.push(w);
                        sum += w;
                        bandwidth = bandwidth.max(nb.abs_diff(site));
                    }
                }
            }
            if sum == 0.0 {
                return Err(Error::Config(format!(
                    "site {site} has no neighbours within radius {}",
                    params.cutoff_radius
                )));
            }
            row_sum.push(sum);
            row_ptr.push(col_idx.len());
        }
        let mut c_vals = prox.clone();
        for site in 0..k {
            for v in &mut c_vals[row_ptr[site]..row_ptr[site + 1]] {
                *v /= row_sum[site];
            }
        }
        let omega = row_sum.iter().map(|s| 1.0 / s).collect();

        let m = params.levels;
        let mut rho_grid: Vec<f64> = (0..m).map(|l| l as f64 / m as f64).collect();
        rho_grid.push((m as f64 - params.epsilon) / m as f64);
        let rho_prior = vec![1.0 / (m + 1) as f64; m + 1];

        let mut car = CarStructure {
            grid,
            params,
            row_ptr,
            col_idx,
            prox,
            c_vals,
            row_sum,
            omega,
            bandwidth,
            rho_grid,
            rho_prior,
            log_dets: Vec::new(),
        };
        car.log_dets = match method {
            LogDetMethod::Exact => car
                .rho_grid
                .iter()
                .map(|&rho| car.log_det_shifted(rho))
                .collect::<Result<_>>()?,
            LogDetMethod::Stochastic {
                probes,
                order,
                seed,
            } => {
                let traces = car.power_traces(probes, order, seed);
                car.rho_grid
                    .iter()
                    .map(|&rho| series_log_det(&traces, rho))
                    .collect()
            }
        };
        Ok(car)
    }

    pub fn sites(&self) -> usize {
        self.row_sum.len()
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn params(&self) -> CarParams {
        self.params
    }

    /// Ω_kk = 1 / d_{k+}.
    pub fn omega_diag(&self) -> &[f64] {
        &self.omega
    }

    /// d_{k+}, the row sums of the proximity matrix (Ω⁻¹ diagonal).
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sum
    }

    pub fn rho_grid(&self) -> &[f64] {
        &self.rho_grid
    }

    pub fn rho_prior(&self) -> &[f64] {
        &self.rho_prior
    }

    /// Cached `log|I − ρ_l C|` for every grid point.
    pub fn grid_log_dets(&self) -> &[f64] {
        &self.log_dets
    }

    /// `log|Ω|`.
    pub fn log_det_omega(&self) -> f64 {
        -self.row_sum.iter().map(|s| s.ln()).sum::<f64>()
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Neighbours of `site` as `(column, c_rs, d_rs)`.
    pub fn row(&self, site: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let span = self.row_ptr[site]..self.row_ptr[site + 1];
        self.col_idx[span.clone()]
            .iter()
            .zip(&self.c_vals[span.clone()])
            .zip(&self.prox[span])
            .map(|((&c, &cv), &d)| (c, cv, d))
    }

    /// `log|I − ρC|` from a banded Cholesky factor of `diag(d_+) − ρD`.
    pub fn log_det_shifted(&self, rho: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Domain(format!("rho must lie in [0, 1), got {rho}")));
        }
        if rho == 0.0 {
            return Ok(0.0);
        }
        let chol = self.precision_factor(rho, 1.0, 0.0)?;
        Ok(chol.log_det() + self.log_det_omega())
    }

    /// `v'Ω⁻¹(I − ρC)v` using only the sparse rows.
    pub fn car_quadratic(&self, rho: f64, v: &[f64]) -> Result<f64> {
        if v.len() != self.sites() {
            return Err(Error::Domain(format!(
                "vector has length {}, expected {}",
                v.len(),
                self.sites()
            )));
        }
        Ok(self.diag_quadratic(v) - rho * self.neighbor_quadratic(v))
    }

    /// `Σ_k d_{k+} v_k²`.
    pub fn diag_quadratic(&self, v: &[f64]) -> f64 {
        self.row_sum.iter().zip(v).map(|(d, x)| d * x * x).sum()
    }

    /// `v'Dv`.
    pub fn neighbor_quadratic(&self, v: &[f64]) -> f64 {
        (0..self.sites())
            .map(|k| v[k] * self.row(k).map(|(s, _, d)| d * v[s]).sum::<f64>())
            .sum()
    }

    /// `(Dv)_k`.
    pub fn neighbor_sum(&self, site: usize, v: impl Fn(usize) -> f64) -> f64 {
        self.row(site).map(|(s, _, d)| d * v(s)).sum()
    }

    /// Cholesky factor of `shift·I + scale·(diag(d_+) − ρD)`.
    pub fn precision_factor(&self, rho: f64, scale: f64, shift: f64) -> Result<BandedCholesky> {
        let n = self.sites();
        let bw = self.bandwidth;
        let mut band = vec![0.0; n * (bw + 1)];
        for i in 0..n {
            band[i * (bw + 1)] = shift + scale * self.row_sum[i];
            for (j, _, d) in self.row(i) {
                if j < i {
                    band[i * (bw + 1) + (i - j)] = -scale * rho * d;
                }
            }
        }
        BandedCholesky::factor(n, bw, band)
    }

    /// Dense `C`, for checks at small K.
    pub fn dense_c(&self) -> DMatrix<f64> {
        let n = self.sites();
        let mut c = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, cv, _) in self.row(i) {
                c[(i, j)] = cv;
            }
        }
        c
    }

    /// `log|I − ρC|` via a dense LU decomposition; O(K³), small K only.
    pub fn log_det_dense(&self, rho: f64) -> f64 {
        let n = self.sites();
        let a = DMatrix::identity(n, n) - self.dense_c() * rho;
        let lu = a.lu();
        let u = lu.u();
        (0..n).map(|i| u[(i, i)].abs().ln()).sum()
    }

    fn power_traces(&self, probes: usize, order: usize, seed: u64) -> Vec<f64> {
        let n = self.sites();
        let probes = probes.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traces = vec![0.0; order + 1];
        // Rademacher probes; tr(C) = 0 and tr(C²) are filled in exactly below
        for _ in 0..probes {
            let x: Vec<f64> = (0..n)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let mut cur = x.clone();
            for tr in traces.iter_mut().skip(1) {
                let next: Vec<f64> = (0..n)
                    .map(|i| self.row(i).map(|(j, cv, _)| cv * cur[j]).sum())
                    .collect();
                cur = next;
                *tr += x.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>() / probes as f64;
            }
        }
        if order >= 1 {
            traces[1] = 0.0;
        }
        if order >= 2 {
            let c = |i: usize, j: usize| {
                self.row(i)
                    .find(|&(col, _, _)| col == j)
                    .map_or(0.0, |(_, cv, _)| cv)
            };
            traces[2] = (0..n)
                .map(|i| self.row(i).map(|(j, cv, _)| cv * c(j, i)).sum::<f64>())
                .sum();
        }
        traces
    }

    /// Writes `C` and `Ω` as `matrix row col value` lines.
    pub fn write_coo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# matrix row col value")?;
        for i in 0..self.sites() {
            for (j, cv, _) in self.row(i) {
                writeln!(out, "C {i} {j} {cv:e}")?;
            }
        }
        for (i, w) in self.omega.iter().enumerate() {
            writeln!(out, "Omega {i} {i} {w:e}")?;
        }
        Ok(())
    }
}

fn series_log_det(traces: &[f64], rho: f64) -> f64 {
    let mut acc = 0.0;
    let mut pow = 1.0;
    for (j, tr) in traces.iter().enumerate().skip(1) {
        pow *= rho;
        acc -= pow * tr / j as f64;
    }
    acc
}

/// Cholesky factor `L` of a symmetric positive definite band matrix, stored
/// row-wise as `L[i][i - j]` for `0 <= i - j <= bandwidth`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factors in place; `band` holds the lower band of the matrix in the
    /// same layout as the factor.
    pub fn factor(n: usize, bw: usize, mut band: Vec<f64>) -> Result<Self> {
        let w = bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut sum = band[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    sum -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(Error::numerical(
                            "banded cholesky",
                            format!("matrix not positive definite at pivot {i} ({sum})"),
                        ));
                    }
                    band[i * w] = sum.sqrt();
                } else {
                    band[i * w + (i - j)] = sum / band[j * w];
                }
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.bw + 1) + (i - j)]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.at(i, i).ln()).sum::<f64>()
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.at(i, k) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solves `L' x = y` in place.
    pub fn solve_upper(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= self.at(k, i) * b[k];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.solve_lower(b);
        self.solve_upper(b);
    }
}
