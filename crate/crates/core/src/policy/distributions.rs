//! Bernoulli, generalized Poisson (GP-2) and Gaussian building blocks of the
//! mixture policy, with log-probabilities and their derivatives.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

/// `log(sigmoid(x))` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Recompute head output as a logit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bernoulli {
    pub logit: f64,
}

impl Bernoulli {
    pub fn probability(&self) -> f64 {
        sigmoid(self.logit)
    }

    pub fn log_prob(&self, c: bool) -> f64 {
        if c {
            log_sigmoid(self.logit)
        } else {
            log_sigmoid(-self.logit)
        }
    }

    /// `d log P(c) / d logit = c - w`.
    pub fn dlogit(&self, c: bool) -> f64 {
        f64::from(u8::from(c)) - self.probability()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        rng.random::<f64>() < self.probability()
    }
}

/// Inverse of the sigmoid, the logit giving recompute probability `c_init`.
pub fn recompute_bias(c_init: f64) -> f64 {
    -(1.0 / c_init - 1.0).ln()
}

/// Horizon range and the tanh scaling of the rate head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonRange {
    pub min: usize,
    pub max: usize,
}

impl HorizonRange {
    pub fn span(&self) -> f64 {
        (self.max - self.min) as f64
    }

    /// `mu = N_min + (tanh(y) + 1) / 2 * (N_max - N_min)`.
    pub fn rate(&self, raw: f64) -> f64 {
        self.min as f64 + 0.5 * (raw.tanh() + 1.0) * self.span()
    }

    pub fn drate(&self, raw: f64) -> f64 {
        let t = raw.tanh();
        0.5 * (1.0 - t * t) * self.span()
    }

    /// Raw head output whose scaled rate equals `n_init`.
    pub fn bias_for(&self, n_init: f64) -> f64 {
        (2.0 * (n_init - self.min as f64) / self.span() - 1.0).atanh()
    }

    pub fn clip(&self, n: f64) -> usize {
        n.clamp(self.min as f64, self.max as f64) as usize
    }

    /// Lowest dispersion that is a normalized GP-2 for every rate up to `max`.
    /// Also keeps `1 + alpha N > 0` on the whole range.
    pub fn alpha_floor(&self) -> f64 {
        -0.5 / self.max as f64 + 1e-6
    }
}

/// GP-2 generalized Poisson with rate `mu` and dispersion `alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneralizedPoisson {
    pub mu: f64,
    pub alpha: f64,
}

impl GeneralizedPoisson {
    /// `-inf` outside the support (`1 + alpha mu <= 0` or `1 + alpha N <= 0`).
    pub fn log_pmf(&self, n: usize) -> f64 {
        let (mu, a) = (self.mu, self.alpha);
        let nf = n as f64;
        let d = 1.0 + a * mu;
        let e = 1.0 + a * nf;
        if d <= 0.0 || e <= 0.0 || mu <= 0.0 {
            return f64::NEG_INFINITY;
        }
        nf * (mu / d).ln() + (nf - 1.0) * e.ln() - mu * e / d - libm::lgamma(nf + 1.0)
    }

    pub fn pmf(&self, n: usize) -> f64 {
        self.log_pmf(n).exp()
    }

    /// `d log P(N) / d mu`.
    pub fn dmu(&self, n: usize) -> f64 {
        let (mu, a) = (self.mu, self.alpha);
        let nf = n as f64;
        let d = 1.0 + a * mu;
        nf / mu - nf * a / d - (1.0 + a * nf) / (d * d)
    }

    /// `d log P(N) / d alpha`.
    pub fn dalpha(&self, n: usize) -> f64 {
        let (mu, a) = (self.mu, self.alpha);
        let nf = n as f64;
        let d = 1.0 + a * mu;
        -nf * mu / d + (nf - 1.0) * nf / (1.0 + a * nf) - mu * (nf - mu) / (d * d)
    }

    pub fn mean(&self) -> f64 {
        self.mu
    }

    pub fn variance(&self) -> f64 {
        let d = 1.0 + self.alpha * self.mu;
        self.mu * d * d
    }

    /// Unclipped normal approximation `floor(mu + sd zeta + 0.5)`.
    pub fn sample_unclipped<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let zeta: f64 = rng.sample(StandardNormal);
        (self.mu + self.variance().sqrt() * zeta + 0.5).floor()
    }

    pub fn sample<R: Rng + ?Sized>(&self, range: &HorizonRange, rng: &mut R) -> usize {
        range.clip(self.sample_unclipped(rng))
    }

    /// Deterministic horizon used in exploitation: the rounded rate.
    pub fn mode(&self, range: &HorizonRange) -> usize {
        range.clip(self.mu.round())
    }
}

/// Scalar Gaussian parameterized by its mean and log standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub log_std: f64,
}

impl Gaussian {
    pub fn std(&self) -> f64 {
        self.log_std.exp()
    }

    pub fn log_prob(&self, u: f64) -> f64 {
        let z = (u - self.mean) / self.std();
        -0.5 * z * z - self.log_std - 0.5 * (2.0 * PI).ln()
    }

    pub fn dmean(&self, u: f64) -> f64 {
        let s = self.std();
        (u - self.mean) / (s * s)
    }

    pub fn dlog_std(&self, u: f64) -> f64 {
        let z = (u - self.mean) / self.std();
        z * z - 1.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.std() * z
    }
}
