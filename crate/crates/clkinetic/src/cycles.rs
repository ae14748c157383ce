//! Backward stochastic cycles: tracing x_{j+1} = x_j - t_b v_j, drawing
//! v_{j+1} from the boundary probability measure, grazing classification, and
//! Monte Carlo estimates of survival probabilities and weighted cycle measures.

use crate::clkernel::{
    cl_log_density, sample_outgoing, sample_outgoing_tilted, tangent_basis, WallModel,
};
use crate::error::{Error, Result};
use crate::geometry::{ConvexDomain, Shape, Vec3};
use crate::lemma_oracle::{a_lp, c_tm_tm, t_recursive, ExponentData};
use crate::params;
use crate::quadrature::{integrate, Tolerance};
use crate::report::LemmaReport;
use crate::rng::{self, StreamRng};
use crate::stats::Moments;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleStep {
    pub j: usize,
    pub t_j: f64,
    pub x_j: Vec3,
    pub n_j: Vec3,
    pub v_j: Vec3,
    pub in_grazing_set: bool,
    /// Log of the interior factor of the trajectory measure for this step.
    pub log_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ReachedInitialTime,
    MaxBounces,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleTrace {
    pub t: f64,
    pub x: Vec3,
    pub v: Vec3,
    pub steps: Vec<CycleStep>,
    /// Time of the hit after the last step (t_{k+1}); nonpositive once the
    /// cycle has run past the initial time.
    pub next_time: f64,
    /// Point of that hit.
    pub next_point: Vec3,
    pub terminated_by: Termination,
}

impl CycleTrace {
    /// Hit times t_1, t_2, ... including the final one.
    pub fn hit_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps
            .iter()
            .map(|s| s.t_j)
            .chain(std::iter::once(self.next_time))
    }

    /// Whether t_k > 0.
    pub fn survives(&self, k: usize) -> bool {
        self.hit_times().nth(k - 1).is_some_and(|t| t > 0.0)
    }

    /// Flight time from the j-th point (j = 0 is the start) to the next hit.
    pub fn gap(&self, j: usize) -> f64 {
        let mut times = std::iter::once(self.t).chain(self.hit_times());
        let a = times.nth(j).expect("step index");
        a - times.next().expect("step index")
    }
}

/// Exponents of the polynomial weights in the trajectory measure: ⟨v_j⟩^interior
/// on the inner factors and ⟨v_{l-1}⟩^last on the l-th factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureExponents {
    pub interior: f64,
    pub last: f64,
}

impl Default for MeasureExponents {
    fn default() -> Self {
        Self {
            interior: 4.0,
            last: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureParams {
    pub lam: f64,
    pub t_star: f64,
    pub c: f64,
    pub exponents: MeasureExponents,
}

impl Default for MeasureParams {
    fn default() -> Self {
        Self {
            lam: 1.0,
            t_star: 1e-2,
            c: 1.0 / 15.0,
            exponents: MeasureExponents::default(),
        }
    }
}

fn japanese(v: &Vec3) -> f64 {
    (1.0 + v.norm_squared()).sqrt()
}

/// v in V^delta: normal component above delta and speed at most 1/delta.
pub fn grazing_classify(v: &Vec3, n: &Vec3, delta: f64) -> bool {
    n.dot(v).abs() > delta && v.norm() <= 1.0 / delta
}

/// log of e^{lam<v_j>t_j} ⟨v_j⟩^p e^{[1/2T_w(x_j) - 1/2T_w(x_{j+1})]|v_j|^2} / (n(x_j).v_j).
fn interior_log_factor(wall: &WallModel, mp: &MeasureParams, s: &CycleStep, x_next: &Vec3) -> f64 {
    let jv = japanese(&s.v_j);
    let dt = 0.5 / wall.t_w(&s.x_j) - 0.5 / wall.t_w(x_next);
    mp.lam * jv * s.t_j + mp.exponents.interior * jv.ln() + dt * s.v_j.norm_squared()
        - s.n_j.dot(&s.v_j).ln()
}

/// log of e^{lam<v_l>t_l} ⟨v_{l-1}⟩^p e^{-[1/4T_M - 1/2T_w(x_l)]|v_l|^2} / (n(x_l).v_l).
fn last_log_factor(wall: &WallModel, mp: &MeasureParams, s: &CycleStep, v_prev: &Vec3) -> f64 {
    let jv = japanese(&s.v_j);
    let c2 = 0.25 / wall.t_max() - 0.5 / wall.t_w(&s.x_j);
    mp.lam * jv * s.t_j + mp.exponents.last * japanese(v_prev).ln()
        - c2 * s.v_j.norm_squared()
        - s.n_j.dot(&s.v_j).ln()
}

/// Traces the backward cycle from (t, x, v) for at most `k_max` sampled
/// velocities. Each v_{j+1} is drawn from R(-v_j -> . ; x_{j+1}) and negated.
#[allow(clippy::too_many_arguments)]
pub fn sample_cycle<R: Rng + ?Sized>(
    domain: &ConvexDomain,
    wall: &WallModel,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    k_max: usize,
    delta: f64,
    mp: &MeasureParams,
    rng: &mut R,
) -> Result<CycleTrace> {
    trace_cycle(
        domain,
        wall,
        t,
        x,
        v,
        k_max,
        delta,
        mp,
        Proposal::Kernel,
        rng,
    )
    .map(|(tr, _)| tr)
}

/// Gaussian tilt (in units of 1/T_w) of interior draws on diffuse walls; it
/// widens the proposal toward the fast particles favored by ⟨v⟩^4 e^{lam⟨v⟩t}.
const INTERIOR_TILT: f64 = 0.3;

/// How `trace_cycle` draws velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Proposal {
    /// Plain dσ at every step.
    Kernel,
    /// dσ, except that the last velocity absorbs the exponential of the l-th
    /// measure factor; on diffuse walls every step also absorbs 1/(n.v) and
    /// interior steps are widened by `INTERIOR_TILT`.
    Weighted,
}

/// Draws the velocity at a boundary point and returns it with
/// ln(dσ/q)(v), the log likelihood ratio of the draw.
fn propose<R: Rng + ?Sized>(
    wall: &WallModel,
    xb: &Vec3,
    n: &Vec3,
    v_in: &Vec3,
    beta: f64,
    rng: &mut R,
) -> Result<(Vec3, f64)> {
    if wall.is_diffuse() {
        // q ∝ e^{-(1/2T - beta)|v|^2} on n.v > 0, mass (2 pi T')^{3/2}/2.
        let t = wall.t_w(xb);
        let tp = t / (1.0 - 2.0 * beta * t);
        let g: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let mut v = tp.sqrt() * Vec3::from(g);
        let vn = n.dot(&v);
        if vn < 0.0 {
            v -= 2.0 * vn * n;
        }
        let log_mass = 1.5 * (2.0 * PI * tp).ln() - 2f64.ln();
        let log_ratio =
            n.dot(&v).ln() - beta * v.norm_squared() + log_mass - (2.0 * PI * t * t).ln();
        return Ok((v, log_ratio));
    }
    if beta == 0.0 {
        return Ok((-sample_outgoing(wall, xb, n, &(-v_in), rng)?, 0.0));
    }
    let (w, log_z) = sample_outgoing_tilted(wall, xb, n, &(-v_in), beta, rng)?;
    Ok((-w, log_z - beta * w.norm_squared()))
}

/// Traces a cycle and returns it with the summed log likelihood ratio of the
/// proposal against dσ.
#[allow(clippy::too_many_arguments)]
fn trace_cycle<R: Rng + ?Sized>(
    domain: &ConvexDomain,
    wall: &WallModel,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    k_max: usize,
    delta: f64,
    mp: &MeasureParams,
    proposal: Proposal,
    rng: &mut R,
) -> Result<(CycleTrace, f64)> {
    if !(t > 0.0) || k_max == 0 {
        return Err(Error::InvalidParam(format!(
            "need t > 0 and k_max >= 1, got t = {t}, k_max = {k_max}"
        )));
    }
    let mut steps: Vec<CycleStep> = Vec::with_capacity(k_max);
    let (mut tj, mut xj, mut vj) = (t, *x, *v);
    let mut log_ratio = 0.0;
    loop {
        let exit = domain.backward_exit(&xj, &vj)?;
        if exit.grazing {
            return Err(Error::GrazingRay(exit.n_xb.dot(&vj).abs() / vj.norm()));
        }
        let t_next = tj - exit.t_b;
        if let Some(last) = steps.last_mut() {
            last.log_weight = interior_log_factor(wall, mp, last, &exit.x_b);
        }
        if t_next <= 0.0 || steps.len() == k_max {
            let terminated_by = if t_next <= 0.0 {
                Termination::ReachedInitialTime
            } else {
                Termination::MaxBounces
            };
            let trace = CycleTrace {
                t,
                x: *x,
                v: *v,
                steps,
                next_time: t_next,
                next_point: exit.x_b,
                terminated_by,
            };
            return Ok((trace, log_ratio));
        }
        let n = exit.n_xb;
        let v_new = match proposal {
            Proposal::Kernel => -sample_outgoing(wall, &exit.x_b, &n, &(-vj), rng)?,
            Proposal::Weighted => {
                let beta = if steps.len() + 1 == k_max {
                    0.5 / wall.t_w(&exit.x_b) - 0.25 / wall.t_max()
                } else if wall.is_diffuse() {
                    INTERIOR_TILT / wall.t_w(&exit.x_b)
                } else {
                    0.0
                };
                let (v_new, lr) = propose(wall, &exit.x_b, &n, &vj, beta, rng)?;
                log_ratio += lr;
                v_new
            }
        };
        if n.dot(&v_new) <= 0.0 {
            return Err(Error::WrongHalfSpace(
                "sampled velocity must satisfy n.v > 0",
            ));
        }
        steps.push(CycleStep {
            j: steps.len() + 1,
            t_j: t_next,
            x_j: exit.x_b,
            n_j: n,
            v_j: v_new,
            in_grazing_set: grazing_classify(&v_new, &n, delta),
            log_weight: 0.0,
        });
        (tj, xj, vj) = (t_next, exit.x_b, v_new);
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl Estimate {
    fn from_moments(m: &Moments) -> Self {
        if m.n < 2.0 {
            return Self {
                estimate: m.mean(),
                std_error: f64::INFINITY,
            };
        }
        Self {
            estimate: m.mean(),
            std_error: m.std_error(),
        }
    }
}

/// P(t_k > 0) for every k = 1..=k_max from one set of traces. Traces that hit a
/// grazing ray are counted as not surviving and reported separately.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub by_k: Vec<Estimate>,
    pub grazing_excluded: usize,
}

#[allow(clippy::too_many_arguments)]
pub fn survival_curve(
    domain: &ConvexDomain,
    wall: &WallModel,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    k_max: usize,
    n_samples: usize,
    seed: u64,
) -> Result<SurvivalCurve> {
    let mp = MeasureParams::default();
    let blocks = rng::par_blocks(
        seed,
        0x7375,
        n_samples,
        4096,
        |g, count| -> Result<(Vec<Moments>, usize)> {
            let mut m = vec![Moments::default(); k_max];
            let mut excluded = 0;
            for _ in 0..count {
                // k_max - 1 sampled velocities decide every t_k up to k_max.
                let trace = match sample_cycle(
                    domain,
                    wall,
                    t,
                    x,
                    v,
                    k_max.saturating_sub(1).max(1),
                    0.1,
                    &mp,
                    g,
                ) {
                    Ok(tr) => Some(tr),
                    Err(Error::GrazingRay(_)) => {
                        excluded += 1;
                        None
                    }
                    Err(e) => return Err(e),
                };
                for (k, mk) in m.iter_mut().enumerate() {
                    mk.push(f64::from(u8::from(
                        trace.as_ref().is_some_and(|tr| tr.survives(k + 1)),
                    )));
                }
            }
            Ok((m, excluded))
        },
    );
    let mut total = vec![Moments::default(); k_max];
    let mut grazing_excluded = 0;
    for b in blocks {
        let (m, e) = b?;
        grazing_excluded += e;
        for (acc, x) in total.iter_mut().zip(m) {
            *acc = acc.merge(x);
        }
    }
    Ok(SurvivalCurve {
        by_k: total.iter().map(Estimate::from_moments).collect(),
        grazing_excluded,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn survival_probability(
    domain: &ConvexDomain,
    wall: &WallModel,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    Ok(survival_curve(domain, wall, t, x, v, k, n_samples, seed)?.by_k[k - 1])
}

/// Importance-sampled value of the k-fold trajectory measure with the
/// indicator of t_{k+1} > 0, next to the bound built from the coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMeasure {
    pub estimate: f64,
    pub std_error: f64,
    pub bound: f64,
    pub grazing_excluded: usize,
    pub raw_kurtosis: f64,
    /// Fourth-moment diagnostic: the variance estimate itself is unreliable.
    pub heavy_tail: bool,
}

/// Bound t_*^{-kc} C_{T_M,T_m}^k A_{k,1} for the measure started at (x, v).
pub fn measure_bound(
    domain: &ConvexDomain,
    wall: &WallModel,
    x: &Vec3,
    v: &Vec3,
    k: usize,
    mp: &MeasureParams,
) -> Result<f64> {
    let first = domain.backward_exit(x, v)?;
    let data = ExponentData {
        v_prev: *v,
        t_w_xp: wall.t_w(&first.x_b),
        t_star: mp.t_star,
        c: mp.c,
    };
    let t_k1 = t_recursive(wall.t_max(), wall.r_min(), k, 1);
    let kf = k as f64;
    Ok(mp.t_star.powf(-kf * mp.c) * c_tm_tm(wall).powf(kf) * a_lp(wall, k, 1, t_k1, &data))
}

/// Full log-weight of a trace with k sampled velocities, or None when t_{k+1} <= 0.
pub fn trace_log_weight(
    wall: &WallModel,
    mp: &MeasureParams,
    trace: &CycleTrace,
    k: usize,
) -> Option<f64> {
    if trace.steps.len() < k || !(trace.next_time > 0.0) {
        return None;
    }
    let interior: f64 = trace.steps[..k - 1].iter().map(|s| s.log_weight).sum();
    let v_prev = if k >= 2 {
        trace.steps[k - 2].v_j
    } else {
        trace.v
    };
    Some(interior + last_log_factor(wall, mp, &trace.steps[k - 1], &v_prev))
}

#[allow(clippy::too_many_arguments)]
pub fn weighted_cycle_measure(
    domain: &ConvexDomain,
    wall: &WallModel,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    k: usize,
    mp: &MeasureParams,
    n_samples: usize,
    seed: u64,
) -> Result<WeightedMeasure> {
    if k == 0 || k > 6 {
        return Err(Error::InvalidParam(format!(
            "weighted measures need 1 <= k <= 6, got {k}"
        )));
    }
    let blocks = rng::par_blocks(
        seed,
        0x776d,
        n_samples,
        4096,
        |g: &mut StreamRng, count| -> Result<(Moments, usize)> {
            let mut m = Moments::default();
            let mut excluded = 0;
            for _ in 0..count {
                match trace_cycle(domain, wall, t, x, v, k, 0.1, mp, Proposal::Weighted, g) {
                    Ok((tr, log_ratio)) => m.push(
                        trace_log_weight(wall, mp, &tr, k).map_or(0.0, |lw| (lw + log_ratio).exp()),
                    ),
                    Err(Error::GrazingRay(_)) => {
                        excluded += 1;
                        m.push(0.0);
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok((m, excluded))
        },
    );
    let mut m = Moments::default();
    let mut grazing_excluded = 0;
    for b in blocks {
        let (bm, e) = b?;
        m = m.merge(bm);
        grazing_excluded += e;
    }
    let est = Estimate::from_moments(&m);
    let kurt = m.raw_kurtosis();
    Ok(WeightedMeasure {
        estimate: est.estimate,
        std_error: est.std_error,
        bound: measure_bound(domain, wall, x, v, k, mp)?,
        grazing_excluded,
        raw_kurtosis: kurt,
        heavy_tail: !(kurt / m.n).sqrt().is_finite() || (kurt / m.n).sqrt() > 0.5,
    })
}

fn ball_radius(domain: &ConvexDomain) -> Result<(Vec3, f64)> {
    match domain.shape() {
        Shape::Ball { center, radius } => Ok((*center, *radius)),
        _ => Err(Error::InvalidParam(
            "the quadrature oracle needs a ball".into(),
        )),
    }
}

/// Direct quadrature of the one-fold measure on a ball: v_1 in spherical
/// coordinates about n(x_1), the chord indicator as the lower speed limit
/// 2 R cos(theta)/t_1.
pub fn one_fold_quadrature(
    domain: &ConvexDomain,
    wall: &WallModel,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    mp: &MeasureParams,
) -> Result<f64> {
    let (_, radius) = ball_radius(domain)?;
    let first = domain.backward_exit(x, v)?;
    let t1 = t - first.t_b;
    if t1 <= 0.0 {
        return Ok(0.0);
    }
    let (x1, n) = (first.x_b, first.n_xb);
    let (e1, e2) = tangent_basis(&n);
    let u_in = -v;
    let lead = mp.exponents.last * japanese(v).ln();
    let c2 = 0.25 / wall.t_max() - 0.5 / wall.t_w(&x1);
    let rho_max = v.norm() + 15.0 * (wall.t_max().max(1.0)).sqrt();
    let n_phi = 48;
    let tol = Tolerance::new(1e-13, 1e-9);
    let theta_integrand = |th: f64| -> f64 {
        let (st, ct) = th.sin_cos();
        let lo = 2.0 * radius * ct / t1;
        if lo >= rho_max {
            return 0.0;
        }
        let mut acc = 0.0;
        for ip in 0..n_phi {
            let ph = 2.0 * PI * ip as f64 / n_phi as f64;
            let dir = ct * n + st * (ph.cos() * e1 + ph.sin() * e2);
            let f = |rho: f64| {
                let v1 = rho * dir;
                let out = -v1;
                // R carries the factor n.v_1 that cancels 1/(n.v_1).
                let log_r = cl_log_density(wall, &x1, &n, &u_in, &out)
                    .expect("half-spaces by construction");
                let log_w = mp.lam * japanese(&v1) * t1 + lead - c2 * rho * rho - (rho * ct).ln();
                (log_r + log_w).exp() * rho * rho
            };
            acc += integrate(f, lo, rho_max, tol).value;
        }
        acc * 2.0 * PI / n_phi as f64 * st
    };
    Ok(integrate(theta_integrand, 0.0, PI / 2.0, tol).value)
}

/// Direct quadrature of the two-fold measure on a ball with a diffuse wall at
/// uniform temperature. Azimuths integrate out and the polar angle of v_2
/// reduces to the factor min(1, rho tau / 2R).
pub fn two_fold_diffuse_quadrature(
    domain: &ConvexDomain,
    wall: &WallModel,
    t: f64,
    x: &Vec3,
    v: &Vec3,
    mp: &MeasureParams,
) -> Result<f64> {
    let (_, radius) = ball_radius(domain)?;
    if !wall.is_diffuse() || !wall.temperature().is_uniform() {
        return Err(Error::InvalidParam(
            "the two-fold oracle needs a uniform diffuse wall".into(),
        ));
    }
    let first = domain.backward_exit(x, v)?;
    let t1 = t - first.t_b;
    if t1 <= 0.0 {
        return Ok(0.0);
    }
    let tw = wall.t_max();
    let c2 = 0.25 / tw - 0.5 / tw;
    let rho_max = 15.0 * tw.max(1.0).sqrt();
    let tol = Tolerance::new(1e-14, 1e-10);
    let jap = |r: f64| (1.0 + r * r).sqrt();
    // G(tau) = (1/T^2) int rho^2 e^{-rho^2/2T} e^{lam<rho>tau} e^{-c2 rho^2} min(1, rho tau/2R) drho
    let g = |tau: f64| -> f64 {
        let knee = (2.0 * radius / tau).min(rho_max);
        let f = |r: f64| {
            r * r
                * (-(0.5 / tw + c2) * r * r + mp.lam * jap(r) * tau).exp()
                * (r * tau / (2.0 * radius)).min(1.0)
        };
        (integrate(f, 0.0, knee, tol).value + integrate(f, knee, rho_max, tol).value) / (tw * tw)
    };
    let p_int = mp.exponents.interior + mp.exponents.last;
    let outer = |r: f64| -> f64 {
        let s_max = (r * t1 / (2.0 * radius)).min(1.0);
        if s_max <= 0.0 {
            return 0.0;
        }
        let radial = r * r * (-0.5 * r * r / tw + mp.lam * jap(r) * t1).exp() * jap(r).powf(p_int)
            / (tw * tw);
        radial * integrate(|s| g(t1 - 2.0 * radius * s / r), 0.0, s_max, tol).value
    };
    let knee = (2.0 * radius / t1).min(rho_max);
    Ok(integrate(outer, 0.0, knee, tol).value + integrate(outer, knee, rho_max, tol).value)
}

/// Fits c_Omega = min |t_j - t_{j+1}| / delta^3 over all steps with v_j in
/// V^delta and asserts the fit is positive.
pub fn time_gap_check(traces: &[CycleTrace], delta: f64) -> LemmaReport {
    let mut fit = f64::INFINITY;
    let mut count = 0usize;
    for tr in traces {
        for (i, s) in tr.steps.iter().enumerate() {
            if s.in_grazing_set != grazing_classify(&s.v_j, &s.n_j, delta) {
                continue;
            }
            if grazing_classify(&s.v_j, &s.n_j, delta) {
                count += 1;
                fit = fit.min(tr.gap(i + 1) / delta.powi(3));
            }
        }
    }
    let mut r = LemmaReport::inequality(
        "time_gap",
        params! {"delta" => delta, "steps_in_set" => count, "traces" => traces.len()},
        0.0,
        fit,
        0.0,
    );
    r.pass = fit > 0.0;
    r
}

/// Number of steps with v_j in V^delta per trace against ceil(t/(c delta^3)) + 1.
pub fn count_bound_check(traces: &[CycleTrace], delta: f64, c_omega: f64) -> LemmaReport {
    let worst = traces
        .iter()
        .map(|tr| {
            let n = tr
                .steps
                .iter()
                .filter(|s| grazing_classify(&s.v_j, &s.n_j, delta))
                .count() as f64;
            n - ((tr.t / (c_omega * delta.powi(3))).ceil() + 1.0)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    LemmaReport::inequality(
        "grazing_count",
        params! {"delta" => delta, "c_omega" => c_omega},
        worst,
        0.0,
        0.0,
    )
}
