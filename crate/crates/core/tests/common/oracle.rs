//! Independent scalar transcription of one batch sweep for the
//! spatio-temporal model with m = 1 and g = 1, on a small lattice. Shares no
//! code with the library: dense proximity matrices built from coordinates,
//! determinants by elimination, special functions from statrs.

use std::f64::consts::PI;

use statrs::function::beta::ln_beta;
use statrs::function::gamma::{digamma, ln_gamma};

#[derive(Debug, Clone)]
pub struct Hyper {
    pub noise: (f64, f64),
    pub alpha: (f64, f64),
    pub theta: (f64, f64),
    pub tau: (f64, f64),
    pub mu0: f64,
    pub mu0_var: f64,
    pub beta0: f64,
    pub sigma0: f64,
}

#[derive(Debug, Clone)]
pub struct Global {
    pub noise: (f64, f64),
    pub alpha: (f64, f64),
    pub tau: (f64, f64),
    pub theta: Vec<(f64, f64)>,
    pub beta: Vec<f64>,
    pub beta_var: Vec<f64>,
    pub sticks: Vec<(f64, f64)>,
    pub rho_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Local {
    pub kappa: Vec<f64>,
    /// factor means and variances, t = 0..=T
    pub lam: Vec<f64>,
    pub lam_var: Vec<f64>,
    pub xi: Vec<f64>,
    pub psi: Vec<f64>,
}

/// y[t][k], x[t][k]
#[derive(Debug, Clone)]
pub struct Data {
    pub y: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
}

pub struct Car {
    pub d: Vec<Vec<f64>>,
    pub dplus: Vec<f64>,
    pub grid: Vec<f64>,
    pub prior: Vec<f64>,
    pub log_det: Vec<f64>,
}

impl Car {
    pub fn lattice(
        rows: usize,
        cols: usize,
        phi: f64,
        cutoff: f64,
        levels: usize,
        eps: f64,
    ) -> Car {
        let k = rows * cols;
        let pos = |s: usize| ((s / cols) as f64, (s % cols) as f64);
        let mut d = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in 0..k {
                let (ra, ca) = pos(a);
                let (rb, cb) = pos(b);
                let dist = ((ra - rb).powi(2) + (ca - cb).powi(2)).sqrt();
                if a != b && dist <= cutoff {
                    d[a][b] = dist.powf(-phi);
                }
            }
        }
        let dplus: Vec<f64> = d.iter().map(|row| row.iter().sum()).collect();
        let mut grid: Vec<f64> = (0..levels).map(|l| l as f64 / levels as f64).collect();
        grid.push((levels as f64 - eps) / levels as f64);
        let prior = vec![1.0 / grid.len() as f64; grid.len()];
        let log_det = grid
            .iter()
            .map(|&rho| {
                let m: Vec<Vec<f64>> = (0..k)
                    .map(|a| {
                        (0..k)
                            .map(|b| if a == b { 1.0 } else { 0.0 } - rho * d[a][b] / dplus[a])
                            .collect()
                    })
                    .collect();
                det(m).ln()
            })
            .collect();
        Car {
            d,
            dplus,
            grid,
            prior,
            log_det,
        }
    }

    fn sites(&self) -> usize {
        self.dplus.len()
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut out = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .unwrap();
        if p != c {
            m.swap(p, c);
            out = -out;
        }
        out *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for j in c..n {
                m[r][j] -= f * m[c][j];
            }
        }
    }
    out
}

fn gmean(p: (f64, f64)) -> f64 {
    p.0 / p.1
}

fn glog(p: (f64, f64)) -> f64 {
    digamma(p.0) - p.1.ln()
}

fn elog_pi(g: &Global) -> Vec<f64> {
    let r = g.beta.len();
    let mut out = Vec::new();
    let mut acc = 0.0;
    for i in 0..r {
        if i + 1 < r {
            let (a, b) = g.sticks[i];
            out.push(acc + digamma(a) - digamma(a + b));
            acc += digamma(b) - digamma(a + b);
        } else {
            out.push(acc);
        }
    }
    out
}

fn rho_bar(g: &Global, car: &Car) -> f64 {
    g.rho_probs.iter().zip(&car.grid).map(|(p, r)| p * r).sum()
}

/// Per-subject sums that enter every update.
#[derive(Debug, Clone)]
pub struct Stats {
    pub resid_sq: f64,
    pub cross: f64,
    pub gram: f64,
    pub extra: f64,
    pub ar_sq: f64,
    pub init_sq: f64,
    pub diag_quad: f64,
    pub nb_quad: f64,
    pub psi_weighted: f64,
}

pub fn stats(data: &Data, l: &Local, car: &Car, h: &Hyper) -> Stats {
    let k = car.sites();
    let t_max = data.y.len();
    let xx: f64 = l.xi.iter().map(|v| v * v).sum();
    let tr_psi: f64 = l.psi.iter().sum();
    let mut s = Stats {
        resid_sq: 0.0,
        cross: 0.0,
        gram: 0.0,
        extra: 0.0,
        ar_sq: 0.0,
        init_sq: (l.lam[0] - h.mu0).powi(2) + l.lam_var[0],
        diag_quad: 0.0,
        nb_quad: 0.0,
        psi_weighted: 0.0,
    };
    for t in 0..t_max {
        let lam = l.lam[t + 1];
        for site in 0..k {
            let r = data.y[t][site] - l.xi[site] * lam;
            s.resid_sq += r * r;
            s.cross += data.x[t][site] * r;
            s.gram += data.x[t][site] * data.x[t][site];
        }
        s.extra += tr_psi * lam * lam + (xx + tr_psi) * l.lam_var[t + 1];
        s.ar_sq += (l.lam[t + 1] - l.lam[t]).powi(2) + l.lam_var[t + 1] + l.lam_var[t];
    }
    for a in 0..k {
        s.diag_quad += car.dplus[a] * l.xi[a] * l.xi[a];
        s.psi_weighted += car.dplus[a] * l.psi[a];
        for b in 0..k {
            s.nb_quad += l.xi[a] * car.d[a][b] * l.xi[b];
        }
    }
    s
}

fn comp_sq(s: &Stats, beta: f64, var: f64) -> f64 {
    s.resid_sq - 2.0 * beta * s.cross + s.gram * beta * beta + s.extra + s.gram * var
}

/// Factors t = 0..=T in order, then allocations, then loading variances and
/// one Gauss–Seidel pass over loading means.
pub fn local_update(data: &Data, l: &Local, g: &Global, car: &Car, h: &Hyper) -> Local {
    let mut l = l.clone();
    let k = car.sites();
    let t_max = data.y.len();
    let s = gmean(g.noise);
    let r_max = g.beta.len();
    let theta_bar: f64 = (0..r_max).map(|r| l.kappa[r] * gmean(g.theta[r])).sum();
    let beta_bar: f64 = (0..r_max).map(|r| l.kappa[r] * g.beta[r]).sum();

    let p0 = 1.0 / h.mu0_var + theta_bar;
    l.lam[0] = (h.mu0 / h.mu0_var + theta_bar * l.lam[1]) / p0;
    l.lam_var[0] = 1.0 / p0;
    let b = l.xi.iter().map(|v| v * v).sum::<f64>() + l.psi.iter().sum::<f64>();
    for t in 1..=t_max {
        let links = if t < t_max { 2.0 } else { 1.0 };
        let mut rhs = theta_bar * l.lam[t - 1];
        if t < t_max {
            rhs += theta_bar * l.lam[t + 1];
        }
        for site in 0..k {
            rhs += s * l.xi[site] * (data.y[t - 1][site] - data.x[t - 1][site] * beta_bar);
        }
        let p = s * b + links * theta_bar;
        l.lam[t] = rhs / p;
        l.lam_var[t] = 1.0 / p;
    }

    let st = stats(data, &l, car, h);
    let ep = elog_pi(g);
    let w: Vec<f64> = (0..r_max)
        .map(|r| {
            ep[r] - 0.5 * s * comp_sq(&st, g.beta[r], g.beta_var[r])
                + 0.5 * t_max as f64 * glog(g.theta[r])
                - 0.5 * gmean(g.theta[r]) * st.ar_sq
        })
        .collect();
    let top = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = w.iter().map(|v| (v - top).exp()).sum();
    l.kappa = w.iter().map(|v| (v - top).exp() / z).collect();

    let beta_bar: f64 = (0..r_max).map(|r| l.kappa[r] * g.beta[r]).sum();
    let tau = gmean(g.tau);
    let rho = rho_bar(g, car);
    let second: f64 = (1..=t_max)
        .map(|t| l.lam[t] * l.lam[t] + l.lam_var[t])
        .sum();
    for site in 0..k {
        l.psi[site] = 1.0 / (s * second + tau * car.dplus[site]);
    }
    for site in 0..k {
        let pull: f64 = (1..=t_max)
            .map(|t| l.lam[t] * (data.y[t - 1][site] - data.x[t - 1][site] * beta_bar))
            .sum();
        let nb: f64 = (0..k).map(|o| car.d[site][o] * l.xi[o]).sum();
        l.xi[site] = (s * pull + tau * rho * nb) / (s * second + tau * car.dplus[site]);
    }
    l
}

/// Noise, walk precisions, coefficients, sticks, concentration, spatial
/// precision, spatial dependence, each from the freshest values.
pub fn global_update(data: &[Data], locals: &[Local], g: &Global, car: &Car, h: &Hyper) -> Global {
    let n = data.len() as f64;
    let k = car.sites() as f64;
    let t_max = data[0].y.len() as f64;
    let r_max = g.beta.len();
    let st: Vec<Stats> = data
        .iter()
        .zip(locals)
        .map(|(d, l)| stats(d, l, car, h))
        .collect();
    let mut out = g.clone();

    let mut sq = 0.0;
    for (s, l) in st.iter().zip(locals) {
        for r in 0..r_max {
            sq += l.kappa[r] * comp_sq(s, g.beta[r], g.beta_var[r]);
        }
    }
    out.noise = (h.noise.0 + 0.5 * n * k * t_max, h.noise.1 + 0.5 * sq);

    for r in 0..r_max {
        let cnt: f64 = locals.iter().map(|l| l.kappa[r]).sum();
        let ar: f64 = st
            .iter()
            .zip(locals)
            .map(|(s, l)| l.kappa[r] * s.ar_sq)
            .sum();
        out.theta[r] = (h.theta.0 + 0.5 * t_max * cnt, h.theta.1 + 0.5 * ar);
    }

    let s_bar = gmean(out.noise);
    for r in 0..r_max {
        let mut prec = 1.0 / h.sigma0;
        let mut lin = h.beta0 / h.sigma0;
        for (s, l) in st.iter().zip(locals) {
            prec += s_bar * l.kappa[r] * s.gram;
            lin += s_bar * l.kappa[r] * s.cross;
        }
        out.beta[r] = lin / prec;
        out.beta_var[r] = 1.0 / prec;
    }

    let alpha_bar = gmean(g.alpha);
    for r in 0..r_max - 1 {
        let here: f64 = locals.iter().map(|l| l.kappa[r]).sum();
        let later: f64 = locals
            .iter()
            .map(|l| l.kappa[r + 1..].iter().sum::<f64>())
            .sum();
        out.sticks[r] = (1.0 + here, alpha_bar + later);
    }
    let log1m: f64 = out
        .sticks
        .iter()
        .map(|&(a, b)| digamma(b) - digamma(a + b))
        .sum();
    out.alpha = (h.alpha.0 + (r_max - 1) as f64, h.alpha.1 - log1m);

    let rho = rho_bar(g, car);
    let quad: f64 = st
        .iter()
        .map(|s| s.diag_quad - rho * s.nb_quad + s.psi_weighted)
        .sum();
    out.tau = (h.tau.0 + 0.5 * n * k, h.tau.1 + 0.5 * quad);

    let tau = gmean(out.tau);
    let nb: f64 = st.iter().map(|s| s.nb_quad).sum();
    let logits: Vec<f64> = (0..car.grid.len())
        .map(|l| car.prior[l].ln() + 0.5 * n * car.log_det[l] + 0.5 * tau * car.grid[l] * nb)
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - top).exp()).sum();
    out.rho_probs = logits.iter().map(|v| (v - top).exp() / z).collect();
    out
}

fn gamma_kl_term(prior: (f64, f64), post: (f64, f64)) -> f64 {
    // E[ln Ga(x; prior)] − E[ln Ga(x; post)] under x ~ post
    let (a, b) = prior;
    let (at, bt) = post;
    let el = glog(post);
    let ex = gmean(post);
    (a * b.ln() - ln_gamma(a) + (a - 1.0) * el - b * ex)
        - (at * bt.ln() - ln_gamma(at) + (at - 1.0) * el - bt * ex)
}

/// The bound's blocks, in the library's field order.
#[derive(Debug, Clone, Default)]
pub struct Terms {
    pub likelihood: f64,
    pub allocations: f64,
    pub sticks: f64,
    pub concentration: f64,
    pub noise: f64,
    pub walk_precisions: f64,
    pub coefficients: f64,
    pub factors: f64,
    pub loadings: f64,
    pub spatial_precision: f64,
    pub spatial_dependence: f64,
}

pub fn elbo(data: &[Data], locals: &[Local], g: &Global, car: &Car, h: &Hyper) -> Terms {
    let l2pi = (2.0 * PI).ln();
    let k = car.sites() as f64;
    let t_max = data[0].y.len() as f64;
    let r_max = g.beta.len();
    let s = gmean(g.noise);
    let ep = elog_pi(g);
    let mut out = Terms {
        noise: gamma_kl_term(h.noise, g.noise),
        concentration: gamma_kl_term(h.alpha, g.alpha),
        spatial_precision: gamma_kl_term(h.tau, g.tau),
        walk_precisions: g.theta.iter().map(|&p| gamma_kl_term(h.theta, p)).sum(),
        ..Default::default()
    };
    let (ea, ela) = (gmean(g.alpha), glog(g.alpha));
    for &(a, b) in &g.sticks {
        let el = digamma(a) - digamma(a + b);
        let el1m = digamma(b) - digamma(a + b);
        // E ln Beta(v; 1, α) − E ln Beta(v; a, b)
        out.sticks += ela + (ea - 1.0) * el1m + ln_beta(a, b) - (a - 1.0) * el - (b - 1.0) * el1m;
    }
    for r in 0..r_max {
        let (m, v) = (g.beta[r], g.beta_var[r]);
        out.coefficients +=
            -0.5 * (h.sigma0.ln() + (v + (m - h.beta0).powi(2)) / h.sigma0) + 0.5 * (v.ln() + 1.0);
    }
    for (&p, &phi) in g.rho_probs.iter().zip(&car.prior) {
        if p > 0.0 {
            out.spatial_dependence += p * (phi.ln() - p.ln());
        }
    }
    let rho = rho_bar(g, car);
    let e_log_det: f64 = g
        .rho_probs
        .iter()
        .zip(&car.log_det)
        .map(|(p, d)| p * d)
        .sum();
    let log_omega: f64 = -car.dplus.iter().map(|d| d.ln()).sum::<f64>();
    let (tau, ltau) = (gmean(g.tau), glog(g.tau));
    for (d, l) in data.iter().zip(locals) {
        let st = stats(d, l, car, h);
        let mut sq = 0.0;
        for r in 0..r_max {
            sq += l.kappa[r] * comp_sq(&st, g.beta[r], g.beta_var[r]);
            out.allocations += l.kappa[r] * (ep[r] - l.kappa[r].ln());
        }
        out.likelihood += 0.5 * k * t_max * (glog(g.noise) - l2pi) - 0.5 * s * sq;

        let mut f = -0.5 * (l2pi + h.mu0_var.ln()) - st.init_sq / (2.0 * h.mu0_var);
        for r in 0..r_max {
            f += l.kappa[r]
                * (0.5 * t_max * (glog(g.theta[r]) - l2pi) - 0.5 * gmean(g.theta[r]) * st.ar_sq);
        }
        // Gaussian entropies of q(μ_t), t = 0..=T
        f += l
            .lam_var
            .iter()
            .map(|v| 0.5 * (1.0 + l2pi + v.ln()))
            .sum::<f64>();
        out.factors += f;

        let prior = -0.5 * k * l2pi + 0.5 * k * ltau - 0.5 * log_omega + 0.5 * e_log_det
            - 0.5 * tau * (st.diag_quad - rho * st.nb_quad + st.psi_weighted);
        let entropy: f64 = l.psi.iter().map(|p| 0.5 * (1.0 + l2pi + p.ln())).sum();
        out.loadings += prior + entropy;
    }
    out
}
