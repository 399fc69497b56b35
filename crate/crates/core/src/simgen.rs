//! Seeded generators for the three simulated designs: mixture of random-walk
//! precisions, spatial field plus mixture regression, and plain mixture
//! regression.
//!
//! Every subject draws from its own ChaCha stream `(seed, id + 1)`; quantities
//! shared by all subjects come from stream 0. A subject's data therefore do
//! not depend on how many other subjects are generated or in what order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::car::GridSpec;
use crate::error::{Error, Result};
use crate::model::SubjectData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaDraw {
    /// Two atoms drawn once; every subject in a group shares its atom.
    SharedAtoms,
    /// Each subject draws its own precision from its group's gamma law.
    PerSubject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaReading {
    ShapeRate,
    ShapeScale,
}

/// Whether the drawn θ_i is the precision or the variance of the
/// random-walk increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WalkReading {
    Precision,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseReading {
    Variance,
    Precision,
}

/// Random-walk design: `Y_it = μ_it + ε_it` with K = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example1Params {
    pub n: usize,
    pub times: usize,
    /// Gamma laws of the two groups' random-walk precisions.
    pub theta_laws: [(f64, f64); 2],
    pub weights: [f64; 2],
    pub gamma_reading: GammaReading,
    pub theta_draw: ThetaDraw,
    pub walk_reading: WalkReading,
    pub noise: f64,
    pub noise_reading: NoiseReading,
    /// Variance of μ_i0 around zero.
    pub init_var: f64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Example1Params {
            n: 10_000,
            times: 50,
            theta_laws: [(2.0, 1.0 / 3.0), (4.0, 1.0 / 5.0)],
            weights: [0.5, 0.5],
            gamma_reading: GammaReading::ShapeRate,
            theta_draw: ThetaDraw::SharedAtoms,
            walk_reading: WalkReading::Variance,
            noise: 1.0 / 7.0,
            noise_reading: NoiseReading::Variance,
            init_var: 1.0,
        }
    }
}

/// Spatial regression design: `Y_it = η_i + X_it β_i + ε_it`, X the time
/// indicators. With `eta_scale = 0` this is the plain regression design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example2Params {
    pub n: usize,
    pub sites: usize,
    pub times: usize,
    pub means: [Vec<f64>; 2],
    pub weights: [f64; 2],
    /// Degrees of freedom of the Wishart law (identity scale) of Σ⁻¹.
    pub wishart_df: f64,
    pub eta_scale: f64,
    pub noise_scale: f64,
}

impl Example2Params {
    pub fn new(sites: usize, n: usize, times: usize) -> Self {
        let base = [1.5, 1.5, 1.0, 2.0, 2.0];
        let pos: Vec<f64> = (0..times).map(|j| base[j % base.len()]).collect();
        let neg = pos.iter().map(|v| -v).collect();
        Example2Params {
            n,
            sites,
            times,
            means: [pos, neg],
            weights: [0.5, 0.5],
            wishart_df: 10.0,
            eta_scale: 1.0,
            noise_scale: 1.0,
        }
    }

    pub fn regression_only(sites: usize, n: usize, times: usize) -> Self {
        Example2Params {
            eta_scale: 0.0,
            ..Self::new(sites, n, times)
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::square(self.sites)
            .ok_or_else(|| Error::Config(format!("K={} is not a perfect square", self.sites)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectTruth {
    pub id: u64,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
}

/// Population-level truth shared by all subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTruth {
    pub example: u8,
    pub weights: Vec<f64>,
    /// Random-walk precision atoms (design 1, shared-atom reading).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theta_atoms: Vec<f64>,
    /// Component means of β (designs 2 and 3).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta_means: Vec<Vec<f64>>,
    /// Within-component covariance of β, row-major.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta_cov: Vec<f64>,
    pub noise_variance: f64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gamma_draw(
    rng: &mut ChaCha8Rng,
    shape: f64,
    rate_or_scale: f64,
    reading: GammaReading,
) -> Result<f64> {
    let scale = match reading {
        GammaReading::ShapeRate => 1.0 / rate_or_scale,
        GammaReading::ShapeScale => rate_or_scale,
    };
    let law = Gamma::new(shape, scale).map_err(|e| Error::Config(format!("gamma law: {e}")))?;
    Ok(law.sample(rng))
}

fn pick_label(rng: &mut ChaCha8Rng, weights: &[f64; 2]) -> usize {
    let u: f64 = rng.random();
    usize::from(u * (weights[0] + weights[1]) >= weights[0])
}

/// Bartlett draw of W ~ Wishart(I_p, df).
pub fn wishart_identity(rng: &mut ChaCha8Rng, p: usize, df: f64) -> Result<DMatrix<f64>> {
    if !(df > p as f64 - 1.0) {
        return Err(Error::Config(format!(
            "Wishart needs df > p - 1, got df={df}, p={p}"
        )));
    }
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(df - i as f64)
            .map_err(|e| Error::Config(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = normal(rng);
        }
    }
    Ok(&a * a.transpose())
}

/// Generator for the random-walk design.
#[derive(Debug, Clone)]
pub struct Example1 {
    pub params: Example1Params,
    pub seed: u64,
    atoms: [f64; 2],
}

impl Example1 {
    pub fn new(params: Example1Params, seed: u64) -> Result<Self> {
        if params.n == 0 || params.times == 0 {
            return Err(Error::Config("n and T must be positive".into()));
        }
        if !(params.noise > 0.0 && params.init_var >= 0.0) {
            return Err(Error::Config("noise must be positive".into()));
        }
        let mut rng = stream_rng(seed, 0);
        let mut atoms = [0.0; 2];
        for (a, &(shape, p)) in atoms.iter_mut().zip(&params.theta_laws) {
            *a = gamma_draw(&mut rng, shape, p, params.gamma_reading)?;
        }
        Ok(Example1 {
            params,
            seed,
            atoms,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        match self.params.noise_reading {
            NoiseReading::Variance => self.params.noise,
            NoiseReading::Precision => 1.0 / self.params.noise,
        }
    }

    pub fn population(&self) -> PopulationTruth {
        PopulationTruth {
            example: 1,
            weights: self.params.weights.to_vec(),
            theta_atoms: match self.params.theta_draw {
                ThetaDraw::SharedAtoms => self.atoms.to_vec(),
                ThetaDraw::PerSubject => Vec::new(),
            },
            beta_means: Vec::new(),
            beta_cov: Vec::new(),
            noise_variance: self.noise_variance(),
        }
    }

    pub fn subject(&self, id: u64) -> Result<(SubjectData, SubjectTruth)> {
        let p = &self.params;
        let mut rng = stream_rng(self.seed, id + 1);
        let label = pick_label(&mut rng, &p.weights);
        let theta = match p.theta_draw {
            ThetaDraw::SharedAtoms => self.atoms[label],
            ThetaDraw::PerSubject => {
                let (shape, q) = p.theta_laws[label];
                gamma_draw(&mut rng, shape, q, p.gamma_reading)?
            }
        };
        let step_sd = match p.walk_reading {
            WalkReading::Precision => 1.0 / theta.sqrt(),
            WalkReading::Variance => theta.sqrt(),
        };
        let noise_sd = self.noise_variance().sqrt();
        let mut mu = p.init_var.sqrt() * normal(&mut rng);
        let mut y = Vec::with_capacity(p.times);
        for _ in 0..p.times {
            mu += step_sd * normal(&mut rng);
            y.push(DVector::from_element(1, mu + noise_sd * normal(&mut rng)));
        }
        let x = vec![DMatrix::zeros(1, 1); p.times];
        let data = SubjectData::new(id, y, x)?;
        Ok((
            data,
            SubjectTruth {
                id,
                label,
                theta: Some(theta),
                beta: Vec::new(),
            },
        ))
    }
}

/// Generator for the spatial and plain regression designs.
#[derive(Debug, Clone)]
pub struct Example2 {
    pub params: Example2Params,
    pub seed: u64,
    cov: DMatrix<f64>,
    cov_chol: DMatrix<f64>,
}

impl Example2 {
    pub fn new(params: Example2Params, seed: u64) -> Result<Self> {
        if params.n == 0 || params.sites == 0 || params.times == 0 {
            return Err(Error::Config("n, K and T must be positive".into()));
        }
        if params.means.iter().any(|m| m.len() != params.times) {
            return Err(Error::Config(format!(
                "component means must have length g = T = {}",
                params.times
            )));
        }
        let mut rng = stream_rng(seed, 0);
        let prec = wishart_identity(&mut rng, params.times, params.wishart_df)?;
        let cov = prec
            .cholesky()
            .ok_or_else(|| Error::numerical("simulation", "Wishart draw not positive definite"))?
            .inverse();
        let cov_chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numerical("simulation", "covariance not positive definite"))?
            .unpack();
        Ok(Example2 {
            params,
            seed,
            cov,
            cov_chol,
        })
    }

    /// Within-component covariance Σ of β.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn population(&self) -> PopulationTruth {
        PopulationTruth {
            example: if self.params.eta_scale == 0.0 { 3 } else { 2 },
            weights: self.params.weights.to_vec(),
            theta_atoms: Vec::new(),
            beta_means: self.params.means.to_vec(),
            beta_cov: self.cov.transpose().iter().copied().collect(),
            noise_variance: self.params.noise_scale * self.params.noise_scale,
        }
    }

    pub fn subject(&self, id: u64) -> Result<(SubjectData, SubjectTruth)> {
        let p = &self.params;
        let (k, t_max) = (p.sites, p.times);
        let mut rng = stream_rng(self.seed, id + 1);
        let label = pick_label(&mut rng, &p.weights);
        let z = DVector::from_fn(t_max, |_, _| normal(&mut rng));
        let beta = DVector::from_column_slice(&p.means[label]) + &self.cov_chol * z;
        let eta = DVector::from_fn(k, |_, _| p.eta_scale * normal(&mut rng));
        let mut y = Vec::with_capacity(t_max);
        let mut x = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let xt = DMatrix::from_fn(k, t_max, |_, j| if j == t { 1.0 } else { 0.0 });
            let yt = DVector::from_fn(k, |s, _| {
                eta[s] + beta[t] + p.noise_scale * normal(&mut rng)
            });
            y.push(yt);
            x.push(xt);
        }
        let data = SubjectData::new(id, y, x)?;
        Ok((
            data,
            SubjectTruth {
                id,
                label,
                theta: None,
                beta: beta.iter().copied().collect(),
            },
        ))
    }
}

/// Any of the three designs.
#[derive(Debug, Clone)]
pub enum Generator {
    RandomWalk(Example1),
    Spatial(Example2),
}

impl Generator {
    pub fn n(&self) -> usize {
        match self {
            Generator::RandomWalk(g) => g.params.n,
            Generator::Spatial(g) => g.params.n,
        }
    }

    pub fn population(&self) -> PopulationTruth {
        match self {
            Generator::RandomWalk(g) => g.population(),
            Generator::Spatial(g) => g.population(),
        }
    }

    pub fn subject(&self, id: u64) -> Result<(SubjectData, SubjectTruth)> {
        match self {
            Generator::RandomWalk(g) => g.subject(id),
            Generator::Spatial(g) => g.subject(id),
        }
    }

    /// Lazily yields subjects 0..n.
    pub fn stream(&self) -> impl Iterator<Item = Result<(SubjectData, SubjectTruth)>> + '_ {
        (0..self.n() as u64).map(move |i| self.subject(i))
    }

    pub fn generate(&self) -> Result<(Vec<SubjectData>, Vec<SubjectTruth>)> {
        let mut data = Vec::with_capacity(self.n());
        let mut truth = Vec::with_capacity(self.n());
        for item in self.stream() {
            let (d, t) = item?;
            data.push(d);
            truth.push(t);
        }
        Ok((data, truth))
    }
}

pub fn gen_example1(
    n: usize,
    times: usize,
    seed: u64,
) -> Result<(Vec<SubjectData>, Vec<SubjectTruth>, PopulationTruth)> {
    let g = Example1::new(
        Example1Params {
            n,
            times,
            ..Default::default()
        },
        seed,
    )?;
    let gen = Generator::RandomWalk(g);
    let (d, t) = gen.generate()?;
    Ok((d, t, gen.population()))
}

pub fn gen_example2(
    sites: usize,
    n: usize,
    times: usize,
    seed: u64,
) -> Result<(Vec<SubjectData>, Vec<SubjectTruth>, PopulationTruth)> {
    let params = Example2Params::new(sites, n, times);
    params.grid()?;
    let gen = Generator::Spatial(Example2::new(params, seed)?);
    let (d, t) = gen.generate()?;
    Ok((d, t, gen.population()))
}

pub fn gen_example3(
    sites: usize,
    n: usize,
    times: usize,
    seed: u64,
) -> Result<(Vec<SubjectData>, Vec<SubjectTruth>, PopulationTruth)> {
    let gen = Generator::Spatial(Example2::new(
        Example2Params::regression_only(sites, n, times),
        seed,
    )?);
    let (d, t) = gen.generate()?;
    Ok((d, t, gen.population()))
}
