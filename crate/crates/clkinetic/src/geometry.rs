//! Convex level-set domains, backward exit times, the kinetic distance and the
//! derivative formulas of the backward exit map.

use crate::error::{Error, Result};
use crate::rng;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Level-set residual accepted as "on the boundary".
pub const TOL: f64 = 1e-10;
/// Rays with |n.v|/|v| at or below this value are treated as grazing.
pub const TOL_GRAZE: f64 = 1e-8;
/// Smallest gradient norm for which a normal is defined.
pub const TOL_GRAD: f64 = 1e-12;

/// A monomial `coef * x^p0 * y^p1 * z^p2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub pow: [u32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// xi = |x - c|^2 / R^2 - 1
    Ball { center: Vec3, radius: f64 },
    /// xi = sum_i (x_i - c_i)^2 / a_i^2 - 1
    Ellipsoid { center: Vec3, semi_axes: Vec3 },
    /// xi = sum of monomials of total degree at most 4, domain inside the
    /// ball of `bounding_radius` about the origin.
    Polynomial(Vec<Monomial>),
}

/// Strictly convex domain Omega = {xi < 0}.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexDomain {
    shape: Shape,
    convexity_lower_bound: f64,
    bounding_radius: f64,
}

/// Result of tracing the backward ray x - s v to the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitRecord {
    pub t_b: f64,
    pub x_b: Vec3,
    pub n_xb: Vec3,
    pub grazing: bool,
}

/// Derivatives of (t_b, x_b) with respect to x and v.
///
/// Matrices use the row-major Jacobian layout `m[(i, j)] = d x_b,i / d y_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitDerivatives {
    pub grad_x_tb: Vec3,
    pub grad_v_tb: Vec3,
    pub jac_x_xb: Mat3,
    pub jac_v_xb: Mat3,
}

/// Point (t, x, v) of phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub t: f64,
    pub x: Vec3,
    pub v: Vec3,
}

/// Cutoff scale of the kinetic distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticWeightParams {
    pub eps: f64,
}

impl KineticWeightParams {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "cutoff scale must be positive, got {eps}"
            )));
        }
        Ok(Self { eps })
    }

    /// Smooth nondecreasing cutoff: identity on [0, eps], constant 2 eps from
    /// 4 eps on, with slope (1-u)^4 (1+4u) in between (u the rescaled position).
    /// The slope blend is C^2 and never exceeds one.
    pub fn chi(&self, s: f64) -> f64 {
        let a = self.eps;
        if s <= a {
            s
        } else if s >= 4.0 * a {
            2.0 * a
        } else {
            let w = 1.0 - (s - a) / (3.0 * a);
            2.0 * a - 3.0 * a * w.powi(5) + 2.0 * a * w.powi(6)
        }
    }

    pub fn chi_prime(&self, s: f64) -> f64 {
        let a = self.eps;
        if s <= a {
            1.0
        } else if s >= 4.0 * a {
            0.0
        } else {
            let u = (s - a) / (3.0 * a);
            (1.0 - u).powi(4) * (1.0 + 4.0 * u)
        }
    }
}

fn falling(p: u32, k: u32) -> f64 {
    (0..k).map(|j| p.saturating_sub(j) as f64).product()
}

impl Monomial {
    /// Value of the mixed partial derivative with multi-index `d`.
    fn partial(&self, d: [u32; 3], x: &Vec3) -> f64 {
        let mut out = self.coef;
        for i in 0..3 {
            if d[i] > self.pow[i] {
                return 0.0;
            }
            out *= falling(self.pow[i], d[i]) * x[i].powi((self.pow[i] - d[i]) as i32);
        }
        out
    }
}

fn poly_partial(terms: &[Monomial], d: [u32; 3], x: &Vec3) -> f64 {
    terms.iter().map(|m| m.partial(d, x)).sum()
}

fn unit(i: usize) -> [u32; 3] {
    let mut d = [0; 3];
    d[i] = 1;
    d
}

fn add(a: [u32; 3], b: [u32; 3]) -> [u32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

impl ConvexDomain {
    pub fn unit_ball() -> Self {
        Self::ball(Vec3::zeros(), 1.0).expect("unit ball is valid")
    }

    pub fn ball(center: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            shape: Shape::Ball { center, radius },
            convexity_lower_bound: 2.0 / (radius * radius),
            bounding_radius: radius,
        })
    }

    pub fn ellipsoid(center: Vec3, semi_axes: Vec3) -> Result<Self> {
        if semi_axes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParam(
                "ellipsoid semi-axes must be positive".into(),
            ));
        }
        let amax = semi_axes.max();
        Ok(Self {
            shape: Shape::Ellipsoid { center, semi_axes },
            convexity_lower_bound: 2.0 / (amax * amax),
            bounding_radius: amax,
        })
    }

    /// Polynomial level set. When `convexity_lower_bound` is `None` it is
    /// estimated as the smallest Hessian eigenvalue over 10^4 sampled points of
    /// the domain.
    pub fn polynomial(
        terms: Vec<Monomial>,
        bounding_radius: f64,
        convexity_lower_bound: Option<f64>,
    ) -> Result<Self> {
        if terms.iter().any(|m| m.pow.iter().sum::<u32>() > 4) {
            return Err(Error::InvalidParam("polynomial degree exceeds 4".into()));
        }
        if !(bounding_radius > 0.0 && bounding_radius.is_finite()) {
            return Err(Error::InvalidParam(
                "bounding radius must be positive".into(),
            ));
        }
        let mut dom = Self {
            shape: Shape::Polynomial(terms),
            convexity_lower_bound: f64::NAN,
            bounding_radius,
        };
        if dom.xi(&Vec3::zeros()) >= 0.0 {
            return Err(Error::InvalidParam(
                "the origin must lie inside a polynomial domain".into(),
            ));
        }
        let probe = dom.hessian_floor(10_000);
        let c = match convexity_lower_bound {
            Some(c) if c > 0.0 && c <= probe * (1.0 + 1e-12) => c,
            Some(c) => {
                return Err(Error::NotConvex(format!(
                    "claimed bound {c} exceeds sampled Hessian minimum {probe}"
                )))
            }
            None if probe > 0.0 => probe,
            None => return Err(Error::NotConvex(format!("sampled Hessian minimum {probe}"))),
        };
        dom.convexity_lower_bound = c;
        Ok(dom)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn convexity_lower_bound(&self) -> f64 {
        self.convexity_lower_bound
    }

    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    /// Center of the bounding ball that contains the domain.
    pub fn bounding_center(&self) -> Vec3 {
        match &self.shape {
            Shape::Ball { center, .. } | Shape::Ellipsoid { center, .. } => *center,
            Shape::Polynomial(_) => Vec3::zeros(),
        }
    }

    fn inv_sq_axes(&self) -> Option<(Vec3, Vec3)> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                Some((*center, Vec3::repeat(1.0 / (radius * radius))))
            }
            Shape::Ellipsoid { center, semi_axes } => {
                Some((*center, semi_axes.map(|a| 1.0 / (a * a))))
            }
            Shape::Polynomial(_) => None,
        }
    }

    pub fn xi(&self, x: &Vec3) -> f64 {
        match (&self.shape, self.inv_sq_axes()) {
            (_, Some((c, w))) => (x - c).component_mul(&(x - c)).dot(&w) - 1.0,
            (Shape::Polynomial(t), None) => poly_partial(t, [0; 3], x),
            _ => unreachable!(),
        }
    }

    pub fn grad_xi(&self, x: &Vec3) -> Vec3 {
        match (&self.shape, self.inv_sq_axes()) {
            (_, Some((c, w))) => 2.0 * (x - c).component_mul(&w),
            (Shape::Polynomial(t), None) => Vec3::from_fn(|i, _| poly_partial(t, unit(i), x)),
            _ => unreachable!(),
        }
    }

    pub fn hess_xi(&self, x: &Vec3) -> Mat3 {
        match (&self.shape, self.inv_sq_axes()) {
            (_, Some((_, w))) => Mat3::from_diagonal(&(2.0 * w)),
            (Shape::Polynomial(t), None) => {
                Mat3::from_fn(|i, j| poly_partial(t, add(unit(i), unit(j)), x))
            }
            _ => unreachable!(),
        }
    }

    /// Third derivative contracted three times with `v`.
    pub fn third_xi(&self, x: &Vec3, v: &Vec3) -> f64 {
        let Shape::Polynomial(t) = &self.shape else {
            return 0.0;
        };
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    s += poly_partial(t, add(add(unit(i), unit(j)), unit(k)), x)
                        * v[i]
                        * v[j]
                        * v[k];
                }
            }
        }
        s
    }

    /// Frobenius norm of the third derivative tensor, an upper bound for its
    /// operator norm.
    pub fn third_xi_norm(&self, x: &Vec3) -> f64 {
        let Shape::Polynomial(t) = &self.shape else {
            return 0.0;
        };
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    s += poly_partial(t, add(add(unit(i), unit(j)), unit(k)), x).powi(2);
                }
            }
        }
        s.sqrt()
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.xi(x) <= TOL
    }

    /// Uniform point of Omega by rejection from the bounding cube.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let c = self.bounding_center();
        let r = self.bounding_radius;
        loop {
            let x = c + Vec3::from_fn(|_, _| r * (2.0 * rng.random::<f64>() - 1.0));
            if self.xi(&x) < 0.0 {
                return x;
            }
        }
    }

    /// Volume of Omega; closed form for quadrics, a fixed-seed Monte Carlo
    /// estimate (10^6 points) otherwise.
    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match &self.shape {
            Shape::Ball { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Ellipsoid { semi_axes, .. } => 4.0 / 3.0 * PI * semi_axes.product(),
            Shape::Polynomial(_) => {
                let n = 1_000_000;
                let mut g = rng::stream(0x766f_6c75_6d65, 0, 0);
                let r = self.bounding_radius;
                let hits = (0..n)
                    .filter(|_| {
                        let x = Vec3::from_fn(|_, _| r * (2.0 * g.random::<f64>() - 1.0));
                        self.xi(&x) < 0.0
                    })
                    .count();
                (2.0 * r).powi(3) * hits as f64 / n as f64
            }
        }
    }

    fn hessian_floor(&self, n: usize) -> f64 {
        let mut g = rng::stream(0x6865_7373, 0, 0);
        (0..n)
            .map(|_| {
                let x = self.sample_interior(&mut g);
                self.hess_xi(&x).symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Estimate of sup|xi| + sup|grad xi| + sup|hess xi| over the closed domain.
    pub fn c2_norm_estimate(&self) -> f64 {
        let mut g = rng::stream(0x6332_6e6f_726d, 0, 0);
        let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..4096 {
            let x = self.sample_interior(&mut g);
            // Push half of the probes onto the boundary along the ray from the center.
            let x = if g.random::<bool>() {
                let d = x - self.bounding_center();
                if d.norm() > 0.0 {
                    self.backward_exit(&self.bounding_center(), &(-d))
                        .map(|e| e.x_b)
                        .unwrap_or(x)
                } else {
                    x
                }
            } else {
                x
            };
            a = a.max(self.xi(&x).abs());
            b = b.max(self.grad_xi(&x).norm());
            c = c.max(self.hess_xi(&x).norm());
        }
        a + b + c
    }

    /// Default kinetic-distance cutoff, one hundredth of the C^2 size of xi.
    pub fn default_weight_params(&self) -> KineticWeightParams {
        KineticWeightParams {
            eps: 0.01 * self.c2_norm_estimate(),
        }
    }

    pub fn outward_normal(&self, x: &Vec3) -> Result<Vec3> {
        let g = self.grad_xi(x);
        let norm = g.norm();
        if norm < TOL_GRAD {
            return Err(Error::DegenerateGradient(norm));
        }
        Ok(g / norm)
    }

    /// Backward exit time t_b(x, v) = sup{s > 0 : x - s' v in Omega for s' < s}.
    ///
    /// Points on the boundary whose backward ray leaves at once get t_b = 0.
    pub fn backward_exit(&self, x: &Vec3, v: &Vec3) -> Result<ExitRecord> {
        let speed = v.norm();
        if speed == 0.0 {
            return Err(Error::ZeroVelocity);
        }
        let g0 = self.xi(x);
        if g0 > TOL {
            return Err(Error::OutsideDomain(g0));
        }
        if let Some(t_b) = self.quadric_exit(x, v) {
            return self.finish(x, v, t_b, false);
        }
        let g = |s: f64| self.xi(&(x - s * v));
        let dg = |s: f64| -self.grad_xi(&(x - s * v)).dot(v);

        // Start the march from a point where xi < 0. On the boundary that is
        // the vertex of the osculating parabola of s -> xi(x - s v).
        let anchor = if g0 < -TOL {
            0.0
        } else {
            let d0 = dg(0.0);
            if d0 >= 0.0 {
                return self.finish(x, v, 0.0, false);
            }
            let vertex = -d0 / v.dot(&(self.hess_xi(x) * v));
            if g(vertex) >= 0.0 {
                return self.finish(x, v, 2.0 * vertex, true);
            }
            vertex
        };

        let h = self.bounding_radius / (8.0 * speed);
        let s_max = anchor + 2.0 * self.bounding_radius / speed + h;
        let mut lo = anchor;
        let mut hi = anchor + h;
        loop {
            let gh = g(hi);
            if gh == 0.0 {
                return self.finish(x, v, hi, false);
            }
            if gh > 0.0 {
                break;
            }
            lo = hi;
            hi += h;
            if hi > s_max {
                return Err(Error::NoExit);
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut s = 0.5 * (lo + hi);
        let d = dg(s);
        if d != 0.0 {
            let polished = s - g(s) / d;
            if polished >= lo && polished <= hi {
                s = polished;
            }
        }
        self.finish(x, v, s, false)
    }

    /// Larger root of the quadratic xi(x - s v) = 0 for balls and ellipsoids.
    fn quadric_exit(&self, x: &Vec3, v: &Vec3) -> Option<f64> {
        let (y, w) = match &self.shape {
            Shape::Ball { center, radius } => ((x - center) / *radius, v / *radius),
            Shape::Ellipsoid { center, semi_axes } => (
                (x - center).component_div(semi_axes),
                v.component_div(semi_axes),
            ),
            Shape::Polynomial(_) => return None,
        };
        // |y - s w|^2 = 1: a s^2 - 2 b s + c = 0 with c <= 0 inside.
        let a = w.norm_squared();
        let b = y.dot(&w);
        let c = (y.norm_squared() - 1.0).min(0.0);
        let root = b.abs() + (b * b - a * c).max(0.0).sqrt();
        Some(if b >= 0.0 {
            root / a
        } else {
            (-c / root).max(0.0)
        })
    }

    fn finish(&self, x: &Vec3, v: &Vec3, t_b: f64, forced_graze: bool) -> Result<ExitRecord> {
        let x_b = x - t_b * v;
        let n_xb = self.outward_normal(&x_b)?;
        let grazing = forced_graze || n_xb.dot(v).abs() <= TOL_GRAZE * v.norm();
        Ok(ExitRecord {
            t_b,
            x_b,
            n_xb,
            grazing,
        })
    }

    /// Gradients of t_b and Jacobians of x_b in x and v.
    pub fn exit_derivatives(&self, x: &Vec3, v: &Vec3) -> Result<ExitDerivatives> {
        let e = self.backward_exit(x, v)?;
        let nv = e.n_xb.dot(v);
        if nv.abs() <= TOL_GRAZE * v.norm() {
            return Err(Error::GrazingRay(nv.abs() / v.norm()));
        }
        let grad_x_tb = e.n_xb / nv;
        let grad_v_tb = -e.t_b * e.n_xb / nv;
        let outer = v * e.n_xb.transpose() / nv;
        Ok(ExitDerivatives {
            grad_x_tb,
            grad_v_tb,
            jac_x_xb: Mat3::identity() - outer,
            jac_v_xb: -e.t_b * Mat3::identity() + e.t_b * outer,
        })
    }

    /// |det d(tangential coordinates of x_b, t_b)/dv| = t_b^3 / |n(x_b).v|.
    pub fn velocity_to_boundary_jacobian(&self, x: &Vec3, v: &Vec3) -> Result<f64> {
        let e = self.backward_exit(x, v)?;
        let nv = e.n_xb.dot(v);
        if nv.abs() <= TOL_GRAZE * v.norm() {
            return Err(Error::GrazingRay(nv.abs() / v.norm()));
        }
        Ok(e.t_b.powi(3) / nv.abs())
    }

    /// alpha-tilde(x, v) before the cutoff; a negative radicand from rounding
    /// at the boundary is clamped to zero.
    pub fn kinetic_distance_raw(&self, x: &Vec3, v: &Vec3) -> f64 {
        let gv = v.dot(&self.grad_xi(x));
        let hv = v.dot(&(self.hess_xi(x) * v));
        (gv * gv - 2.0 * self.xi(x) * hv).max(0.0).sqrt()
    }

    pub fn kinetic_distance(&self, params: &KineticWeightParams, x: &Vec3, v: &Vec3) -> f64 {
        params.chi(self.kinetic_distance_raw(x, v))
    }

    /// log[alpha(x - s2 v, v) / alpha(x - s1 v, v)].
    pub fn velocity_lemma_ratio(
        &self,
        params: &KineticWeightParams,
        x: &Vec3,
        v: &Vec3,
        s1: f64,
        s2: f64,
    ) -> Result<f64> {
        let a1 = self.kinetic_distance(params, &(x - s1 * v), v);
        let a2 = self.kinetic_distance(params, &(x - s2 * v), v);
        if a1 == 0.0 || a2 == 0.0 {
            return Err(Error::ZeroWeight);
        }
        Ok((a2 / a1).ln())
    }

    /// Constant C with |d/ds log alpha(x - s v, v)| <= C |v| along free flight.
    ///
    /// The derivative of alpha-tilde squared along the ray is 2 xi D^3 xi[v,v,v]
    /// while alpha-tilde squared is at least 2|xi| c |v|^2, so
    /// C = sup|D^3 xi| / (2c). The cutoff is concave with slope at most one,
    /// so the same C serves the cut weight. Quadrics give C = 0.
    pub fn velocity_lemma_constant(&self) -> f64 {
        if !matches!(self.shape, Shape::Polynomial(_)) {
            return 0.0;
        }
        let mut g = rng::stream(0x7665_6c6c_656d, 0, 0);
        let sup = (0..20_000)
            .map(|_| self.third_xi_norm(&self.sample_interior(&mut g)))
            .fold(0.0, f64::max);
        sup / (2.0 * self.convexity_lower_bound)
    }
}

/// Worst relative deviations between the closed-form exit derivatives and
/// central differences over random non-grazing configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitMapCheck {
    pub configs: usize,
    pub grad_x_tb: f64,
    pub grad_v_tb: f64,
    pub jac_x_xb: f64,
    pub jac_v_xb: f64,
    pub jacobian: f64,
}

fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

impl ConvexDomain {
    /// Compares `exit_derivatives` and `velocity_to_boundary_jacobian` with
    /// central differences (step `h`) at `n` configurations with x in the
    /// domain and |n(x_b).v|/|v| > `min_cos`.
    pub fn exit_map_check(
        &self,
        n: usize,
        h: f64,
        min_cos: f64,
        seed: u64,
    ) -> Result<ExitMapCheck> {
        let mut g = rng::stream(seed, 0x6578, 0);
        let mut out = ExitMapCheck {
            configs: 0,
            grad_x_tb: 0.0,
            grad_v_tb: 0.0,
            jac_x_xb: 0.0,
            jac_v_xb: 0.0,
            jacobian: 0.0,
        };
        while out.configs < n {
            let x = self.sample_interior(&mut g);
            let v = Vec3::from(std::array::from_fn::<f64, 3, _>(|_| {
                g.sample(StandardNormal)
            }));
            let e = self.backward_exit(&x, &v)?;
            if e.n_xb.dot(&v).abs() <= min_cos * v.norm() || self.xi(&x) > -1e-3 {
                continue;
            }
            let d = self.exit_derivatives(&x, &v)?;
            let (t1, t2) = crate::clkernel::tangent_basis(&e.n_xb);
            let mut fd_tx = Vec3::zeros();
            let mut fd_tv = Vec3::zeros();
            let mut fd_xx = Mat3::zeros();
            let mut fd_xv = Mat3::zeros();
            let mut chart = Mat3::zeros();
            for k in 0..3 {
                let dk = h * basis(k);
                let (xp, xm) = (
                    self.backward_exit(&(x + dk), &v)?,
                    self.backward_exit(&(x - dk), &v)?,
                );
                let (vp, vm) = (
                    self.backward_exit(&x, &(v + dk))?,
                    self.backward_exit(&x, &(v - dk))?,
                );
                fd_tx[k] = (xp.t_b - xm.t_b) / (2.0 * h);
                fd_tv[k] = (vp.t_b - vm.t_b) / (2.0 * h);
                fd_xx.set_column(k, &((xp.x_b - xm.x_b) / (2.0 * h)));
                let dxb = (vp.x_b - vm.x_b) / (2.0 * h);
                fd_xv.set_column(k, &dxb);
                chart.set_column(k, &Vec3::new(t1.dot(&dxb), t2.dot(&dxb), fd_tv[k]));
            }
            let jac = self.velocity_to_boundary_jacobian(&x, &v)?;
            out.grad_x_tb = out
                .grad_x_tb
                .max(rel_dev(fd_tx.as_slice(), d.grad_x_tb.as_slice()));
            out.grad_v_tb = out
                .grad_v_tb
                .max(rel_dev(fd_tv.as_slice(), d.grad_v_tb.as_slice()));
            out.jac_x_xb = out
                .jac_x_xb
                .max(rel_dev(fd_xx.as_slice(), d.jac_x_xb.as_slice()));
            out.jac_v_xb = out
                .jac_v_xb
                .max(rel_dev(fd_xv.as_slice(), d.jac_v_xb.as_slice()));
            out.jacobian = out
                .jacobian
                .max(((chart.determinant().abs() - jac) / jac).abs());
            out.configs += 1;
        }
        Ok(out)
    }
}

fn basis(k: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[k] = 1.0;
    e
}

/// Empirical velocity-lemma constants from two disjoint sets of free-flight
/// segments, and how often one set breaks the other's bound with a safety factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityLemmaFit {
    pub c_first: f64,
    pub c_second: f64,
    /// |c_first - c_second| / max(c_first, c_second).
    pub spread: f64,
    /// Segments of either set whose ratio exceeds `safety` times the other
    /// set's constant.
    pub violations: usize,
    /// Upper bound from the third derivative and the convexity constant.
    pub c_theory: f64,
}

impl ConvexDomain {
    /// |log alpha(x - s v, v) / alpha(x, v)| / (|v| s) on `n` random segments:
    /// x uniform in the domain, v standard normal, s uniform on (0, t_b).
    /// Only segments along which the weight changes are kept; away from the
    /// boundary the cutoff holds alpha constant and the ratio is exactly zero.
    pub fn velocity_lemma_samples(
        &self,
        params: &KineticWeightParams,
        n: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let mut g = rng::stream(seed, 0x766c, 0);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let x = self.sample_interior(&mut g);
            let v = Vec3::from(std::array::from_fn::<f64, 3, _>(|_| {
                g.sample(StandardNormal)
            }));
            let t_b = self.backward_exit(&x, &v)?.t_b;
            let s = t_b * (1.0 - 1e-6) * (1.0 - g.random::<f64>());
            match self.velocity_lemma_ratio(params, &x, &v, 0.0, s) {
                Ok(0.0) => continue,
                Ok(r) => out.push(r.abs() / (v.norm() * s)),
                Err(Error::ZeroWeight) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    pub fn velocity_lemma_fit(
        &self,
        params: &KineticWeightParams,
        n_per_set: usize,
        safety: f64,
        seed: u64,
    ) -> Result<VelocityLemmaFit> {
        let a = self.velocity_lemma_samples(params, n_per_set, seed)?;
        let b = self.velocity_lemma_samples(params, n_per_set, seed.wrapping_add(1))?;
        let c_first = a.iter().copied().fold(0.0, f64::max);
        let c_second = b.iter().copied().fold(0.0, f64::max);
        let violations = a.iter().filter(|&&r| r > safety * c_second).count()
            + b.iter().filter(|&&r| r > safety * c_first).count();
        Ok(VelocityLemmaFit {
            c_first,
            c_second,
            spread: (c_first - c_second).abs() / c_first.max(c_second),
            violations,
            c_theory: self.velocity_lemma_constant(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn ellipsoid() -> ConvexDomain {
        ConvexDomain::ellipsoid(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0)).unwrap()
    }

    #[test]
    fn normals_on_simple_shapes() {
        let b = ConvexDomain::unit_ball();
        assert_eq!(
            b.outward_normal(&Vec3::new(1.0, 0.0, 0.0)).unwrap(),
            Vec3::x()
        );
        assert_eq!(
            b.outward_normal(&Vec3::new(0.0, 0.0, -1.0)).unwrap(),
            -Vec3::z()
        );
        let n = ellipsoid()
            .outward_normal(&Vec3::new(0.0, 1.0, 0.0))
            .unwrap();
        assert!((n - Vec3::y()).norm() < 1e-15);
    }

    #[test]
    fn degenerate_gradient_at_center() {
        let b = ConvexDomain::unit_ball();
        assert!(matches!(
            b.outward_normal(&Vec3::zeros()),
            Err(Error::DegenerateGradient(_))
        ));
    }

    #[test]
    fn exit_examples() {
        let b = ConvexDomain::unit_ball();
        let e = b
            .backward_exit(&Vec3::zeros(), &Vec3::new(2.0, 0.0, 0.0))
            .unwrap();
        assert!((e.t_b - 0.5).abs() < 1e-14);
        assert!((e.x_b - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-14);
        let e = b
            .backward_exit(&Vec3::new(0.5, 0.0, 0.0), &Vec3::x())
            .unwrap();
        assert!((e.t_b - 1.5).abs() < 1e-14);
        let e = ellipsoid()
            .backward_exit(&Vec3::zeros(), &Vec3::x())
            .unwrap();
        assert!((e.t_b - 2.0).abs() < 1e-14);
        assert!((e.x_b - Vec3::new(-2.0, 0.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn exit_errors() {
        let b = ConvexDomain::unit_ball();
        assert_eq!(
            b.backward_exit(&Vec3::zeros(), &Vec3::zeros()),
            Err(Error::ZeroVelocity)
        );
        assert!(matches!(
            b.backward_exit(&Vec3::new(2.0, 0.0, 0.0), &Vec3::x()),
            Err(Error::OutsideDomain(_))
        ));
    }

    #[test]
    fn exit_from_boundary_crosses_the_chord() {
        let b = ConvexDomain::unit_ball();
        // x on the sphere, backward ray pointing inward: chord 2|n.v| / |v|^2.
        let x = Vec3::new(1.0, 0.0, 0.0);
        let v = Vec3::new(0.6, 0.8, 0.0);
        let e = b.backward_exit(&x, &v).unwrap();
        assert!((e.t_b - 1.2).abs() < 1e-13);
        // Backward ray pointing out of the domain leaves immediately.
        let e = b.backward_exit(&x, &(-v)).unwrap();
        assert_eq!(e.t_b, 0.0);
    }

    #[test]
    fn trace_of_velocity_jacobian() {
        let b = ConvexDomain::unit_ball();
        let x = Vec3::new(0.2, -0.1, 0.3);
        let v = Vec3::new(0.4, 1.1, -0.7);
        let d = b.exit_derivatives(&x, &v).unwrap();
        let t_b = b.backward_exit(&x, &v).unwrap().t_b;
        assert!((d.jac_v_xb.trace() + 2.0 * t_b).abs() < 1e-12);
    }

    #[test]
    fn grad_x_tb_at_center() {
        let d = ConvexDomain::unit_ball()
            .exit_derivatives(&Vec3::zeros(), &Vec3::x())
            .unwrap();
        assert!((d.grad_x_tb - Vec3::x()).norm() < 1e-14);
    }

    #[test]
    fn grazing_derivatives_are_refused() {
        let b = ConvexDomain::unit_ball();
        let r = b.exit_derivatives(&Vec3::new(0.0, 1.0, 0.0), &Vec3::x());
        assert!(matches!(r, Err(Error::GrazingRay(_))));
    }

    #[test]
    fn kinetic_distance_examples() {
        let b = ConvexDomain::unit_ball();
        let p = KineticWeightParams::new(0.01).unwrap();
        let x = Vec3::x();
        assert_eq!(b.kinetic_distance(&p, &x, &Vec3::y()), 0.0);
        assert!((b.kinetic_distance_raw(&x, &(-Vec3::x())) - 2.0).abs() < 1e-15);
        assert!((b.kinetic_distance(&p, &x, &(-Vec3::x())) - 0.02).abs() < 1e-15);
        assert!(b.kinetic_distance(&p, &Vec3::new(0.1, 0.2, 0.0), &Vec3::y()) > 0.0);
    }

    #[test]
    fn cutoff_endpoints() {
        let p = KineticWeightParams::new(0.5).unwrap();
        assert_eq!(p.chi(0.3), 0.3);
        assert_eq!(p.chi(0.5), 0.5);
        assert!((p.chi(2.0 - 1e-12) - 1.0).abs() < 1e-10);
        assert_eq!(p.chi(7.0), 1.0);
        assert!((p.chi_prime(0.5 + 1e-9) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn quartic_domain_builds() {
        let d = quartic();
        assert!(d.convexity_lower_bound() >= 2.0 - 1e-9);
        assert!(d.velocity_lemma_constant() > 0.0);
        let e = d.backward_exit(&Vec3::zeros(), &Vec3::x()).unwrap();
        assert!(d.xi(&e.x_b).abs() < TOL);
    }

    #[test]
    fn nonconvex_polynomial_rejected() {
        // Saddle-shaped xi = x^2 - y^2 + z^2 + 0.1 * (x^4 + y^4 + z^4) - 1.
        let t = vec![
            Monomial {
                coef: 1.0,
                pow: [2, 0, 0],
            },
            Monomial {
                coef: -1.0,
                pow: [0, 2, 0],
            },
            Monomial {
                coef: 1.0,
                pow: [0, 0, 2],
            },
            Monomial {
                coef: 0.1,
                pow: [4, 0, 0],
            },
            Monomial {
                coef: 0.1,
                pow: [0, 4, 0],
            },
            Monomial {
                coef: 0.1,
                pow: [0, 0, 4],
            },
            Monomial {
                coef: -1.0,
                pow: [0, 0, 0],
            },
        ];
        assert!(matches!(
            ConvexDomain::polynomial(t, 4.0, None),
            Err(Error::NotConvex(_))
        ));
    }

    #[test]
    fn velocity_lemma_fit_on_quartic() {
        let d = quartic();
        let f = d
            .velocity_lemma_fit(&d.default_weight_params(), 2000, 2.0, 5)
            .unwrap();
        assert!(f.c_first > 0.0 && f.c_first.is_finite());
        assert!(f.c_first <= f.c_theory && f.c_second <= f.c_theory);
        eprintln!("{f:?}");
    }

    #[test]
    fn velocity_lemma_is_trivial_on_a_ball() {
        let d = ConvexDomain::unit_ball();
        let f = d
            .velocity_lemma_fit(&d.default_weight_params(), 500, 2.0, 5)
            .unwrap();
        assert!(f.c_first < 1e-6, "{f:?}");
    }

    #[test]
    fn exit_map_matches_differences() {
        let c = ConvexDomain::unit_ball()
            .exit_map_check(50, 1e-6, 0.1, 1)
            .unwrap();
        for dev in [c.grad_x_tb, c.grad_v_tb, c.jac_x_xb, c.jac_v_xb, c.jacobian] {
            assert!(dev < 1e-5, "{c:?}");
        }
        eprintln!("{c:?}");
    }

    pub(crate) fn quartic() -> ConvexDomain {
        let mut t = vec![Monomial {
            coef: -1.0,
            pow: [0, 0, 0],
        }];
        for i in 0..3 {
            let mut p2 = [0; 3];
            p2[i] = 2;
            let mut p4 = [0; 3];
            p4[i] = 4;
            t.push(Monomial { coef: 1.0, pow: p2 });
            t.push(Monomial { coef: 1.0, pow: p4 });
        }
        ConvexDomain::polynomial(t, 1.0, None).unwrap()
    }

    fn quartic_certified() -> ConvexDomain {
        let ConvexDomain {
            shape: Shape::Polynomial(t),
            ..
        } = quartic()
        else {
            unreachable!()
        };
        // Hessian is diag(2 + 12 x_i^2), so 2 is an exact lower bound.
        ConvexDomain::polynomial(t, 1.0, Some(2.0)).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn convexity_certificate(x in prop::array::uniform3(-1.0f64..1.0), z in prop::array::uniform3(-1.0f64..1.0)) {
            let (x, z) = (Vec3::from(x), Vec3::from(z));
            for d in [ellipsoid(), quartic_certified()] {
                if d.contains(&x) {
                    let q = z.dot(&(d.hess_xi(&x) * z));
                    prop_assert!(q >= d.convexity_lower_bound() * z.norm_squared() * (1.0 - 1e-12));
                }
            }
        }

        #[test]
        fn single_crossing_at_exit(seed in any::<u64>()) {
            let mut g = rng::stream(seed, 1, 0);
            for d in [ellipsoid(), quartic_certified()] {
                let x = d.sample_interior(&mut g);
                let v = Vec3::from(std::array::from_fn::<f64, 3, _>(|_| g.sample(StandardNormal)));
                let s_max = 2.0 * d.bounding_radius() / v.norm() * 2.0;
                let grid: Vec<f64> = (1..=2000).map(|i| s_max * i as f64 / 2000.0).collect();
                let signs: Vec<bool> = grid.iter().map(|&s| d.xi(&(x - s * v)) < 0.0).collect();
                let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
                prop_assert_eq!(changes, 1);
                let t_b = d.backward_exit(&x, &v).unwrap().t_b;
                let first_out = grid[signs.iter().position(|&inside| !inside).unwrap()];
                prop_assert!(t_b <= first_out && t_b >= first_out - s_max / 2000.0);
            }
        }

        #[test]
        fn weight_matches_normal_speed_at_the_wall(seed in any::<u64>(), frac in 0.01f64..0.5) {
            let mut g = rng::stream(seed, 2, 0);
            for d in [ConvexDomain::unit_ball(), ellipsoid()] {
                let p = d.default_weight_params();
                let x0 = d.sample_interior(&mut g);
                let w = Vec3::from(std::array::from_fn::<f64, 3, _>(|_| g.sample(StandardNormal)));
                let xb = d.backward_exit(&x0, &w).unwrap().x_b;
                let n = d.outward_normal(&xb).unwrap();
                let grad = d.grad_xi(&xb).norm();
                let tangent = (w - n.dot(&w) * n).normalize();
                // |n.v| below eps/|grad xi| keeps the cutoff in its identity range.
                let v = tangent + frac * p.eps / grad * n;
                let ratio = d.kinetic_distance(&p, &xb, &v) / (grad * n.dot(&v).abs());
                prop_assert!((ratio - 1.0).abs() < 1e-6, "ratio {}", ratio);
            }
        }

        #[test]
        fn exit_derivatives_match_differences(seed in any::<u64>()) {
            let c = ellipsoid().exit_map_check(5, 1e-6, 0.1, seed).unwrap();
            for dev in [c.grad_x_tb, c.grad_v_tb, c.jac_x_xb, c.jac_v_xb, c.jacobian] {
                prop_assert!(dev < 1e-6, "{:?}", c);
            }
        }
    }
}
