//! Goodness-of-fit statistics and sample moments.

use crate::quadrature::{integrate, Tolerance};
use crate::special::i0_scaled;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erf;
use std::f64::consts::PI;

/// Additive sample summary; merging two summaries is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: f64,
    pub sum: f64,
    pub sum2: f64,
    pub sum4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum2 += x * x;
        self.sum4 += x.powi(4);
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            n: self.n + o.n,
            sum: self.sum + o.sum,
            sum2: self.sum2 + o.sum2,
            sum4: self.sum4 + o.sum4,
        }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n
    }

    pub fn variance(&self) -> f64 {
        ((self.sum2 - self.sum * self.sum / self.n) / (self.n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }

    /// Ratio E[x^4] / E[x^2]^2 of raw moments; large values flag heavy tails.
    pub fn raw_kurtosis(&self) -> f64 {
        let m2 = self.sum2 / self.n;
        (self.sum4 / self.n) / (m2 * m2)
    }
}

/// Kolmogorov–Smirnov distance between sorted samples and a CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS statistic `d` at sample size `n`.
pub fn ks_pvalue(n: usize, d: f64) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Upper tail probability of a chi-square statistic.
pub fn chi_square_pvalue(stat: f64, dof: f64) -> f64 {
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// CDF of the speed |v| when each component is N(0, T).
pub fn maxwell_speed_cdf(s: f64, t: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let a = s / t.sqrt();
    erf(a / std::f64::consts::SQRT_2) - (2.0 / PI).sqrt() * a * (-a * a / 2.0).exp()
}

/// Rice density (w / s^2) exp(-(w^2 + nu^2) / (2 s^2)) I0(w nu / s^2), w >= 0.
pub fn rice_pdf(w: f64, nu: f64, sigma: f64) -> f64 {
    if w < 0.0 {
        return 0.0;
    }
    let s2 = sigma * sigma;
    w / s2 * (-(w - nu).powi(2) / (2.0 * s2)).exp() * i0_scaled(w * nu / s2)
}

/// CDF built by integrating a density panel by panel and interpolating with
/// cubic Hermite segments (the density supplies the slopes).
#[derive(Debug, Clone)]
pub struct TabulatedCdf {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl TabulatedCdf {
    pub fn new<F: Fn(f64) -> f64>(pdf: F, a: f64, b: f64, panels: usize) -> Self {
        let h = (b - a) / panels as f64;
        let knots: Vec<f64> = (0..=panels).map(|i| a + h * i as f64).collect();
        let mut values = Vec::with_capacity(panels + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for w in knots.windows(2) {
            acc += integrate(&pdf, w[0], w[1], Tolerance::new(1e-15, 1e-13)).value;
            values.push(acc);
        }
        let slopes = knots.iter().map(|&x| pdf(x)).collect();
        Self {
            knots,
            values,
            slopes,
        }
    }

    pub fn total(&self) -> f64 {
        *self.values.last().expect("nonempty table")
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (a, b) = (self.knots[0], *self.knots.last().expect("nonempty table"));
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return self.total();
        }
        let h = self.knots[1] - self.knots[0];
        let i = (((x - a) / h) as usize).min(self.knots.len() - 2);
        let s = (x - self.knots[i]) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }
}
