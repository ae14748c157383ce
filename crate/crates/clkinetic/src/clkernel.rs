//! The Cercignani-Lampis scattering kernel R(u -> v; x).
//!
//! Conventions: `n` is the unit outward normal at the wall point, the incoming
//! velocity `u` satisfies n.u > 0 and the outgoing velocity `v` satisfies
//! n.v < 0. Temperatures are in energy units with k_B = m = 1, so a wall
//! Maxwellian is proportional to exp(-|v|^2 / (2 T)).

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::params;
use crate::quadrature::{gauss_legendre_on, QuadResult};
use crate::report::LemmaReport;
use crate::special::i0_scaled;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Wall temperature as a closed-form field over boundary points.
#[derive(Debug, Clone, PartialEq)]
pub enum WallTemperature {
    Constant(f64),
    /// `low` where `x[axis] < split`, `high` elsewhere; patch ids 0 and 1.
    Patchwise {
        axis: usize,
        split: f64,
        low: f64,
        high: f64,
    },
    /// `base + amplitude * tanh(direction . x)`.
    Smooth {
        base: f64,
        amplitude: f64,
        direction: Vec3,
    },
}

impl WallTemperature {
    pub fn eval(&self, x: &Vec3) -> f64 {
        match self {
            Self::Constant(t) => *t,
            Self::Patchwise {
                axis,
                split,
                low,
                high,
            } => {
                if x[*axis] < *split {
                    *low
                } else {
                    *high
                }
            }
            Self::Smooth {
                base,
                amplitude,
                direction,
            } => base + amplitude * direction.dot(x).tanh(),
        }
    }

    /// (T_m, T_M). For the smooth field these are the bounds base -/+ |amplitude|.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Self::Constant(t) => (*t, *t),
            Self::Patchwise { low, high, .. } => (low.min(*high), low.max(*high)),
            Self::Smooth {
                base, amplitude, ..
            } => (base - amplitude.abs(), base + amplitude.abs()),
        }
    }

    pub fn patch(&self, x: &Vec3) -> usize {
        match self {
            Self::Patchwise { axis, split, .. } => usize::from(x[*axis] >= *split),
            _ => 0,
        }
    }

    pub fn n_patches(&self) -> usize {
        match self {
            Self::Patchwise { .. } => 2,
            _ => 1,
        }
    }

    pub fn is_uniform(&self) -> bool {
        let (lo, hi) = self.bounds();
        lo == hi
    }
}

/// Wall temperature field with accommodation coefficients r_perp in (0, 1]
/// and r_par in (0, 2).
#[derive(Debug, Clone, PartialEq)]
pub struct WallModel {
    temperature: WallTemperature,
    r_perp: f64,
    r_par: f64,
}

impl WallModel {
    pub fn new(temperature: WallTemperature, r_perp: f64, r_par: f64) -> Result<Self> {
        if !(r_perp > 0.0 && r_perp <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "r_perp = {r_perp} must lie in (0, 1]"
            )));
        }
        if !(r_par > 0.0 && r_par < 2.0) {
            return Err(Error::InvalidParam(format!(
                "r_par = {r_par} must lie in (0, 2)"
            )));
        }
        if let WallTemperature::Patchwise { axis, .. } = temperature {
            if axis > 2 {
                return Err(Error::InvalidParam(format!(
                    "patch axis {axis} must be 0, 1 or 2"
                )));
            }
        }
        let (t_m, t_max) = temperature.bounds();
        if !(t_m > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "wall temperature must stay in (0, inf), bounds are [{t_m}, {t_max}]"
            )));
        }
        Ok(Self {
            temperature,
            r_perp,
            r_par,
        })
    }

    pub fn diffuse(t_w: f64) -> Result<Self> {
        Self::new(WallTemperature::Constant(t_w), 1.0, 1.0)
    }

    pub fn temperature(&self) -> &WallTemperature {
        &self.temperature
    }
    pub fn r_perp(&self) -> f64 {
        self.r_perp
    }
    pub fn r_par(&self) -> f64 {
        self.r_par
    }
    pub fn t_w(&self, x: &Vec3) -> f64 {
        self.temperature.eval(x)
    }
    pub fn t_min(&self) -> f64 {
        self.temperature.bounds().0
    }
    pub fn t_max(&self) -> f64 {
        self.temperature.bounds().1
    }
    fn tangential_accommodation(&self) -> f64 {
        self.r_par * (2.0 - self.r_par)
    }
    pub fn r_min(&self) -> f64 {
        self.tangential_accommodation().min(self.r_perp)
    }
    pub fn r_max(&self) -> f64 {
        self.tangential_accommodation().max(self.r_perp)
    }

    pub fn is_diffuse(&self) -> bool {
        self.r_perp == 1.0 && self.r_par == 1.0
    }

    /// T_m / T_M > max((1-r_par)/(2-r_par), (sqrt(1-r_perp) - (1-r_perp))/r_perp).
    pub fn temperature_constraint(&self) -> bool {
        self.t_min() / self.t_max() > self.temperature_constraint_rhs()
    }

    pub fn temperature_constraint_rhs(&self) -> f64 {
        let a = (1.0 - self.r_par) / (2.0 - self.r_par);
        let q = 1.0 - self.r_perp;
        let b = (q.sqrt() - q) / self.r_perp;
        a.max(b)
    }

    /// sup|T_w - T0| < delta0 and max(|1-r_perp|, |1-r_par|) < delta0.
    pub fn small_perturbation(&self, t0: f64, delta0: f64) -> bool {
        let dev = (self.t_max() - t0).abs().max((self.t_min() - t0).abs());
        let rdev = (1.0 - self.r_perp).abs().max((1.0 - self.r_par).abs());
        dev < delta0 && rdev < delta0
    }
}

/// Normal and tangential parts of a velocity at a wall point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityDecomposition {
    pub v_perp: f64,
    pub v_par: [f64; 2],
}

/// Orthonormal tangent pair (t1, t2) with t1 x t2 = n.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let i = n.iamin();
    let t1 = n.cross(&Vec3::ith(i, 1.0)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

pub fn decompose(n: &Vec3, v: &Vec3) -> VelocityDecomposition {
    let (t1, t2) = tangent_basis(n);
    VelocityDecomposition {
        v_perp: n.dot(v),
        v_par: [t1.dot(v), t2.dot(v)],
    }
}

fn check_halves(n: &Vec3, u: &Vec3, v: &Vec3) -> Result<(f64, f64)> {
    let un = n.dot(u);
    let vn = n.dot(v);
    if !(un > 0.0) {
        return Err(Error::WrongHalfSpace("incoming velocity needs n.u > 0"));
    }
    if !(vn < 0.0) {
        return Err(Error::WrongHalfSpace("outgoing velocity needs n.v < 0"));
    }
    Ok((un, vn))
}

/// log R(u -> v; x). The Bessel factor is folded into the normal Gaussian so
/// that only exp(-y) I0(y) is ever evaluated.
pub fn cl_log_density(wall: &WallModel, x: &Vec3, n: &Vec3, u: &Vec3, v: &Vec3) -> Result<f64> {
    let (un, vn) = check_halves(n, u, v)?;
    let t = wall.t_w(x);
    let rp = wall.r_perp;
    let ra = wall.tangential_accommodation();
    let w = -vn;

    let u_par = u - un * n;
    let v_par = v - vn * n;
    let tang = (v_par - (1.0 - wall.r_par) * u_par).norm_squared() / (2.0 * t * ra);

    let nu = (1.0 - rp).sqrt() * un;
    let sigma2 = t * rp;
    let normal = (w - nu).powi(2) / (2.0 * sigma2);
    let bessel = i0_scaled(w * nu / sigma2).ln();

    Ok(-(rp * ra * PI / 2.0).ln() + w.ln() - 2.0 * (2.0 * t).ln() - tang - normal + bessel)
}

pub fn cl_density(wall: &WallModel, x: &Vec3, n: &Vec3, u: &Vec3, v: &Vec3) -> Result<f64> {
    cl_log_density(wall, x, n, u, v).map(f64::exp)
}

/// log R(u->v) - [log R(-v->-u) + (|u|^2 - |v|^2)/(2 T_w) + log(|n.v| / |n.u|)].
pub fn reciprocity_residual(
    wall: &WallModel,
    x: &Vec3,
    n: &Vec3,
    u: &Vec3,
    v: &Vec3,
) -> Result<f64> {
    let forward = cl_log_density(wall, x, n, u, v)?;
    let backward = cl_log_density(wall, x, n, &(-v), &(-u))?;
    let t = wall.t_w(x);
    let shift =
        (u.norm_squared() - v.norm_squared()) / (2.0 * t) + (n.dot(v).abs() / n.dot(u)).ln();
    Ok(forward - (backward + shift))
}

/// Exact draw from R(u -> . ; x): Gaussian tangential part, Rice-distributed
/// normal speed. The result points into the domain (n.v < 0).
pub fn sample_outgoing<R: Rng + ?Sized>(
    wall: &WallModel,
    x: &Vec3,
    n: &Vec3,
    u: &Vec3,
    rng: &mut R,
) -> Result<Vec3> {
    let un = n.dot(u);
    if !(un > 0.0) {
        return Err(Error::WrongHalfSpace("incoming velocity needs n.u > 0"));
    }
    let t = wall.t_w(x);
    let (t1, t2) = tangent_basis(n);
    let mean_par = (1.0 - wall.r_par) * (u - un * n);
    let s_par = (t * wall.tangential_accommodation()).sqrt();
    let sigma = (t * wall.r_perp).sqrt();
    let nu = (1.0 - wall.r_perp).sqrt() * un;
    let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let w = (sigma * g[0] + nu).hypot(sigma * g[1]);
    Ok(mean_par + s_par * (g[2] * t1 + g[3] * t2) - w * n)
}

/// Exact draw from the tilted law R(u -> v; x) e^{beta |v|^2} / Z together with
/// ln Z. Both factors of the kernel stay in their families: the tangential
/// Gaussian variance grows by p = 1/(1 - 2 beta T r_par(2 - r_par)) and the Rice
/// amplitude law by q = 1/(1 - 2 beta T r_perp), with
/// ln Z = ln p + beta p |m_par|^2 + ln q + beta q nu^2.
pub fn sample_outgoing_tilted<R: Rng + ?Sized>(
    wall: &WallModel,
    x: &Vec3,
    n: &Vec3,
    u: &Vec3,
    beta: f64,
    rng: &mut R,
) -> Result<(Vec3, f64)> {
    let un = n.dot(u);
    if !(un > 0.0) {
        return Err(Error::WrongHalfSpace("incoming velocity needs n.u > 0"));
    }
    let t = wall.t_w(x);
    let s2 = t * wall.tangential_accommodation();
    let sigma2 = t * wall.r_perp;
    let (dp, dq) = (1.0 - 2.0 * beta * s2, 1.0 - 2.0 * beta * sigma2);
    if !(dp > 0.0 && dq > 0.0) {
        return Err(Error::InvalidParam(format!(
            "tilt {beta} makes the kernel non-normalizable"
        )));
    }
    let (p, q) = (1.0 / dp, 1.0 / dq);
    let (t1, t2) = tangent_basis(n);
    let mean_par = (1.0 - wall.r_par) * (u - un * n);
    let nu = (1.0 - wall.r_perp).sqrt() * un;
    let log_z = p.ln() + beta * p * mean_par.norm_squared() + q.ln() + beta * q * nu * nu;
    let s = (s2 * p).sqrt();
    let sigma = (sigma2 * q).sqrt();
    let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let w = (sigma * g[0] + q * nu).hypot(sigma * g[1]);
    Ok((p * mean_par + s * (g[2] * t1 + g[3] * t2) - w * n, log_z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    Specular,
    BounceBack,
}

pub fn limiting_reflection(kind: LimitKind, n: &Vec3, u: &Vec3) -> Vec3 {
    match kind {
        LimitKind::Specular => u - 2.0 * n.dot(u) * n,
        LimitKind::BounceBack => -u,
    }
}

/// Wall law used by the particle simulator: the kernel proper or one of its
/// two deterministic limits (r_perp = r_par = 0 and r_perp = 0, r_par = 2).
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryLaw {
    Kernel(WallModel),
    Limit {
        kind: LimitKind,
        temperature: WallTemperature,
    },
}

impl BoundaryLaw {
    pub fn from_coefficients(
        temperature: WallTemperature,
        r_perp: f64,
        r_par: f64,
    ) -> Result<Self> {
        match (r_perp, r_par) {
            (0.0, 0.0) => Ok(Self::Limit {
                kind: LimitKind::Specular,
                temperature,
            }),
            (0.0, 2.0) => Ok(Self::Limit {
                kind: LimitKind::BounceBack,
                temperature,
            }),
            _ => WallModel::new(temperature, r_perp, r_par).map(Self::Kernel),
        }
    }

    pub fn temperature(&self) -> &WallTemperature {
        match self {
            Self::Kernel(w) => w.temperature(),
            Self::Limit { temperature, .. } => temperature,
        }
    }

    pub fn reflect<R: Rng + ?Sized>(
        &self,
        x: &Vec3,
        n: &Vec3,
        u: &Vec3,
        rng: &mut R,
    ) -> Result<Vec3> {
        match self {
            Self::Kernel(w) => sample_outgoing(w, x, n, u, rng),
            Self::Limit { kind, .. } => Ok(limiting_reflection(*kind, n, u)),
        }
    }
}

/// Maxwellian at temperature T0 in the normalization 1/(2 pi T0^2) used for
/// the steady problem.
pub fn mu0(t0: f64, v: &Vec3) -> f64 {
    (-v.norm_squared() / (2.0 * t0)).exp() / (2.0 * PI * t0 * t0)
}

/// r_s = (mu_{x, r_par, r_perp} - mu0) / sqrt(mu0).
pub fn steady_remainder(wall: &WallModel, t0: f64, x: &Vec3, n: &Vec3, v: &Vec3) -> f64 {
    let tw = wall.t_w(x);
    let a = t0 * (1.0 - wall.r_par).powi(2) + tw * wall.tangential_accommodation();
    let b = t0 * (1.0 - wall.r_perp) + tw * wall.r_perp;
    let vn = n.dot(v);
    let vpar2 = v.norm_squared() - vn * vn;
    let mu_x = (-vpar2 / (2.0 * a)).exp() / (2.0 * PI * a) * (-vn * vn / (2.0 * b)).exp() / b;
    let m0 = mu0(t0, v);
    (mu_x - m0) / m0.sqrt()
}

/// Tensor Gauss–Legendre quadrature of R(u -> v) over {n.v < 0}.
///
/// The tangential box spans ten standard deviations about the Gaussian mean
/// and the normal interval ten Rice widths about nu. The 2D Gaussian mass
/// outside such a box and the Rice mass outside nu -/+ 10 sigma are each below
/// exp(-50), so the truncation bound 3 exp(-50) is added to the difference
/// between an `order`-point and a (2 order / 3)-point rule.
pub fn normalization_integral(
    wall: &WallModel,
    x: &Vec3,
    n: &Vec3,
    u: &Vec3,
    order: usize,
) -> Result<QuadResult> {
    let un = n.dot(u);
    if !(un > 0.0) {
        return Err(Error::WrongHalfSpace("incoming velocity needs n.u > 0"));
    }
    let t = wall.t_w(x);
    let (t1, t2) = tangent_basis(n);
    let mean = (1.0 - wall.r_par) * (u - un * n);
    let s_par = (t * wall.tangential_accommodation()).sqrt();
    let sigma = (t * wall.r_perp).sqrt();
    let nu = (1.0 - wall.r_perp).sqrt() * un;

    let rule = |m: usize| -> Result<f64> {
        let tang = gauss_legendre_on(m, -10.0, 10.0);
        let norm = gauss_legendre_on(m, (nu - 10.0 * sigma).max(0.0), nu + 10.0 * sigma);
        let mut sum = 0.0;
        for &(w, ww) in &norm {
            if w <= 0.0 {
                continue;
            }
            for &(a, wa) in &tang {
                for &(b, wb) in &tang {
                    let v = mean + s_par * (a * t1 + b * t2) - w * n;
                    sum += ww * wa * wb * cl_log_density(wall, x, n, u, &v)?.exp();
                }
            }
        }
        Ok(sum * s_par * s_par)
    };
    let fine = rule(order)?;
    let coarse = rule((2 * order / 3).max(2))?;
    Ok(QuadResult {
        value: fine,
        error: (fine - coarse).abs() + 3.0 * (-50.0f64).exp(),
        evals: order.pow(3) + (2 * order / 3).pow(3),
    })
}

/// Sizes of the kernel verification suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSuite {
    pub n_configs: usize,
    pub n_pairs: usize,
    pub n_samples: usize,
    pub order: usize,
}

impl Default for KernelSuite {
    fn default() -> Self {
        Self {
            n_configs: 20,
            n_pairs: 1000,
            n_samples: 1_000_000,
            order: 40,
        }
    }
}

fn random_wall<R: Rng + ?Sized>(g: &mut R) -> WallModel {
    let t = 0.5 + 1.5 * g.random::<f64>();
    // r_perp in (0, 1], r_par in (0, 2).
    let rp = 1.0 - g.random::<f64>();
    let ra = 2.0 * (1.0 - g.random::<f64>()) * (1.0 - 1e-9);
    WallModel::new(WallTemperature::Constant(t), rp, ra).expect("coefficients in range")
}

fn random_unit<R: Rng + ?Sized>(g: &mut R) -> Vec3 {
    let z: [f64; 3] = std::array::from_fn(|_| g.sample(StandardNormal));
    Vec3::from(z).normalize()
}

/// Incoming velocity with n.u > 0 and speed up to 3.
fn random_incoming<R: Rng + ?Sized>(g: &mut R, n: &Vec3) -> Vec3 {
    let d = random_unit(g);
    let d = if n.dot(&d) > 0.0 {
        d
    } else {
        d - 2.0 * n.dot(&d) * n
    };
    (0.05 + 2.95 * g.random::<f64>()) * d
}

/// Normalization over random walls, reciprocity over random pairs, and the
/// sampler's normal-speed law, tangential mean and diffuse limit.
pub fn kernel_suite(cfg: &KernelSuite, seed: u64) -> Vec<LemmaReport> {
    use crate::rng::stream;
    use crate::stats::{ks_statistic, rice_pdf, TabulatedCdf};
    let x = Vec3::zeros();
    let mut out = Vec::new();

    let mut g = stream(seed, 0x6b6e, 0);
    for i in 0..cfg.n_configs {
        let wall = random_wall(&mut g);
        let n = random_unit(&mut g);
        let u = random_incoming(&mut g, &n);
        let q =
            normalization_integral(&wall, &x, &n, &u, cfg.order).expect("incoming by construction");
        out.push(LemmaReport::identity(
            "kernel_normalization",
            params! {"config" => i, "T_w" => wall.t_w(&x), "r_perp" => wall.r_perp, "r_par" => wall.r_par,
                     "u" => [u.x, u.y, u.z], "n" => [n.x, n.y, n.z]},
            q.value,
            1.0,
            q.error,
            1e-4,
        ));
    }

    let mut g = stream(seed, 0x6b6e, 1);
    let worst = (0..cfg.n_pairs)
        .map(|_| {
            let wall = random_wall(&mut g);
            let n = random_unit(&mut g);
            let u = random_incoming(&mut g, &n);
            let v = -random_incoming(&mut g, &n);
            reciprocity_residual(&wall, &x, &n, &u, &v)
                .expect("half-spaces by construction")
                .abs()
        })
        .fold(0.0, f64::max);
    out.push(LemmaReport::inequality(
        "kernel_reciprocity",
        params! {"pairs" => cfg.n_pairs},
        worst,
        1e-10,
        0.0,
    ));

    let wall = WallModel::new(WallTemperature::Constant(1.3), 0.4, 0.6).expect("valid wall");
    let n = Vec3::new(0.0, 0.6, 0.8);
    let u = Vec3::new(0.8, -0.5, 1.2);
    let draws = |wall: &WallModel, stream_id: u64| -> Vec<Vec3> {
        crate::rng::par_blocks(
            seed,
            0x6b6e00 + stream_id,
            cfg.n_samples,
            16_384,
            |g, count| {
                (0..count)
                    .map(|_| sample_outgoing(wall, &x, &n, &u, g).expect("incoming"))
                    .collect::<Vec<_>>()
            },
        )
        .into_iter()
        .flatten()
        .collect()
    };
    let vs = draws(&wall, 2);
    let (t, rp) = (wall.t_w(&x), wall.r_perp);
    let nu = (1.0 - rp).sqrt() * n.dot(&u);
    let sigma = (t * rp).sqrt();
    let cdf = TabulatedCdf::new(|w| rice_pdf(w, nu, sigma), 0.0, nu + 14.0 * sigma, 4000);
    let mut ws: Vec<f64> = vs.iter().map(|v| -n.dot(v)).collect();
    ws.sort_by(f64::total_cmp);
    let d = ks_statistic(&ws, |w| cdf.eval(w));
    let p = params! {"T_w" => t, "r_perp" => rp, "r_par" => wall.r_par, "samples" => cfg.n_samples};
    out.push(LemmaReport::inequality(
        "sampler_rice_ks",
        p.clone(),
        d,
        0.01,
        0.0,
    ));
    let (t1, t2) = tangent_basis(&n);
    let mean_par = (1.0 - wall.r_par) * (u - n.dot(&u) * n);
    let se = (t * wall.tangential_accommodation() / cfg.n_samples as f64).sqrt();
    for (k, e) in [t1, t2].iter().enumerate() {
        let m = vs.iter().map(|v| e.dot(v)).sum::<f64>() / vs.len() as f64;
        let mut r = LemmaReport::inequality(
            "sampler_tangential_mean",
            p.clone(),
            (m - e.dot(&mean_par)).abs(),
            3.0 * se,
            0.0,
        );
        r.params.insert("component".into(), serde_json::json!(k));
        out.push(r);
    }

    let diffuse = WallModel::diffuse(t).expect("valid wall");
    let mut g = stream(seed, 0x6b6e, 3);
    let worst = (0..1000)
        .map(|_| {
            let v = -random_incoming(&mut g, &n);
            let exact =
                n.dot(&v).abs() * (-v.norm_squared() / (2.0 * t)).exp() / (2.0 * PI * t * t);
            let got = cl_density(&diffuse, &x, &n, &u, &v).expect("half-spaces by construction");
            ((got - exact) / exact).abs()
        })
        .fold(0.0, f64::max);
    out.push(LemmaReport::inequality(
        "diffuse_limit_density",
        params! {"T_w" => t, "points" => 1000},
        worst,
        1e-12,
        0.0,
    ));
    let mut ws: Vec<f64> = draws(&diffuse, 4).iter().map(|v| -n.dot(v)).collect();
    ws.sort_by(f64::total_cmp);
    let d = ks_statistic(&ws, |w| 1.0 - (-w * w / (2.0 * t)).exp());
    out.push(LemmaReport::inequality(
        "diffuse_limit_ks",
        params! {"T_w" => t, "samples" => cfg.n_samples},
        d,
        0.01,
        0.0,
    ));
    out
}
