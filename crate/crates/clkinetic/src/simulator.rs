//! Free-molecular particle simulation with event-driven wall hits.
//!
//! Every particle flies straight to the wall, is re-emitted by the boundary
//! law at once, and continues. Particles never interact, so the ensemble is
//! split into fixed blocks that each own a random stream; results do not depend
//! on the thread count.

use crate::clkernel::{sample_outgoing, BoundaryLaw, WallModel};
use crate::error::{Error, Result};
use crate::geometry::{ConvexDomain, Vec3, TOL};
use crate::rng::{self, StreamRng};
use crate::stats::{chi_square_pvalue, maxwell_speed_cdf};
use rand::Rng;
use rand_distr::StandardNormal;

/// Particles per random stream.
const BLOCK: usize = 1024;
/// Boundary-law draws tried before a particle is declared stuck.
const MAX_RESAMPLE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub clock: f64,
}

impl ParticleEnsemble {
    /// Uniform positions in the domain and Maxwellian velocities at `t_init`.
    pub fn initial(domain: &ConvexDomain, n: usize, t_init: f64, seed: u64) -> Self {
        let sd = t_init.sqrt();
        let parts = rng::par_blocks(seed, 0x696e6974, n, BLOCK, |g, count| {
            (0..count)
                .map(|_| {
                    let x = domain.sample_interior(g);
                    let v = sd * Vec3::from_fn(|_, _| g.sample(StandardNormal));
                    (x, v)
                })
                .collect::<Vec<_>>()
        });
        let (positions, velocities) = parts.into_iter().flatten().unzip();
        Self {
            positions,
            velocities,
            weights: vec![1.0; n],
            clock: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.velocities.iter().map(|v| v.norm()).collect()
    }
}

/// Per-patch wall statistics over a tally window. Fluxes are totals; divide
/// by the window length for rates.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WallTally {
    pub patch: usize,
    pub incident: f64,
    pub emitted: f64,
    pub energy_in: f64,
    pub energy_out: f64,
    /// Normal momentum handed to the wall, sum of w (n.u - n.v').
    pub momentum: f64,
    /// Sum over particles of the squared net energy each one delivered.
    net_energy_sq: f64,
}

impl WallTally {
    fn merge(mut self, o: &Self) -> Self {
        self.incident += o.incident;
        self.emitted += o.emitted;
        self.energy_in += o.energy_in;
        self.energy_out += o.energy_out;
        self.momentum += o.momentum;
        self.net_energy_sq += o.net_energy_sq;
        self
    }

    /// Energy the wall hands to the gas, out minus in.
    pub fn net_energy(&self) -> f64 {
        self.energy_out - self.energy_in
    }

    /// Standard error of `net_energy` treating particles as independent.
    pub fn net_energy_se(&self, n_particles: usize) -> f64 {
        let n = n_particles as f64;
        let mean = self.net_energy() / n;
        ((self.net_energy_sq / n - mean * mean).max(0.0) * n / (n - 1.0)).sqrt() * n.sqrt()
    }
}

/// Density, bulk velocity and temperature of the ensemble at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSnapshot {
    pub time: f64,
    pub density: f64,
    pub bulk_velocity: Vec3,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct MomentAcc {
    weight: f64,
    momentum: Vec3,
    energy: f64,
}

impl MomentAcc {
    fn push(&mut self, w: f64, v: &Vec3) {
        self.weight += w;
        self.momentum += w * v;
        self.energy += w * v.norm_squared();
    }

    fn merge(mut self, o: &Self) -> Self {
        self.weight += o.weight;
        self.momentum += o.momentum;
        self.energy += o.energy;
        self
    }

    fn finish(&self, time: f64, volume: f64) -> MomentSnapshot {
        let u = self.momentum / self.weight;
        MomentSnapshot {
            time,
            density: self.weight / volume,
            bulk_velocity: u,
            temperature: (self.energy / self.weight - u.norm_squared()) / 3.0,
        }
    }
}

/// What happened while the ensemble advanced.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub wall_hits: u64,
    pub stuck: u64,
    /// Largest level-set value seen at any wall hit or final position.
    pub max_xi: f64,
    pub tallies: Vec<WallTally>,
    pub snapshots: Vec<MomentSnapshot>,
}

/// Fixed schedule for one advance: tally window start and snapshot times.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub horizon: f64,
    pub tally_from: f64,
    pub snapshot_times: Vec<f64>,
}

struct ParticleOutcome {
    x: Vec3,
    v: Vec3,
    hits: u64,
    stuck: u64,
    max_xi: f64,
}

fn fresh_diffuse<R: Rng + ?Sized>(
    law: &BoundaryLaw,
    x: &Vec3,
    n: &Vec3,
    rng: &mut R,
) -> Result<Vec3> {
    let wall = WallModel::diffuse(law.temperature().eval(x))?;
    sample_outgoing(&wall, x, n, n, rng)
}

/// Re-emits a particle that arrived at `x` with velocity `u`. Zero-length or
/// grazing flights are redrawn up to `MAX_RESAMPLE` times; after that the
/// particle is counted as stuck and re-emitted diffusely.
fn reemit<R: Rng + ?Sized>(
    domain: &ConvexDomain,
    law: &BoundaryLaw,
    x: &Vec3,
    n: &Vec3,
    u: &Vec3,
    rng: &mut R,
    stuck: &mut u64,
) -> Result<(Vec3, f64)> {
    let usable = |v: &Vec3| -> Result<Option<f64>> {
        if !(n.dot(v) < 0.0) {
            return Ok(None);
        }
        let e = domain.backward_exit(x, &(-v))?;
        Ok((!e.grazing && e.t_b > 0.0).then_some(e.t_b))
    };
    if n.dot(u) > 0.0 {
        for _ in 0..MAX_RESAMPLE {
            let v = law.reflect(x, n, u, rng)?;
            if let Some(tf) = usable(&v)? {
                return Ok((v, tf));
            }
        }
    }
    *stuck += 1;
    loop {
        let v = fresh_diffuse(law, x, n, rng)?;
        if let Some(tf) = usable(&v)? {
            return Ok((v, tf));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn advance_particle<R: Rng + ?Sized>(
    domain: &ConvexDomain,
    law: &BoundaryLaw,
    mut x: Vec3,
    mut v: Vec3,
    w: f64,
    from: f64,
    sched: &Schedule,
    tallies: &mut [WallTally],
    net: &mut [f64],
    snaps: &mut [MomentAcc],
    rng: &mut R,
) -> Result<ParticleOutcome> {
    let temp = law.temperature();
    let mut clock = from;
    let mut out = ParticleOutcome {
        x,
        v,
        hits: 0,
        stuck: 0,
        max_xi: domain.xi(&x),
    };
    let mut next_snap = sched.snapshot_times.partition_point(|&s| s < from);
    let mut flight = domain.backward_exit(&x, &(-v))?.t_b;
    loop {
        let arrival = clock + flight;
        while next_snap < sched.snapshot_times.len()
            && sched.snapshot_times[next_snap] <= arrival.min(sched.horizon)
        {
            snaps[next_snap].push(w, &v);
            next_snap += 1;
        }
        if arrival >= sched.horizon {
            x += (sched.horizon - clock) * v;
            out.max_xi = out.max_xi.max(domain.xi(&x));
            break;
        }
        x += flight * v;
        clock = arrival;
        out.hits += 1;
        out.max_xi = out.max_xi.max(domain.xi(&x));
        let n = domain.outward_normal(&x)?;
        let u = v;
        let (v_new, next_flight) = reemit(domain, law, &x, &n, &u, rng, &mut out.stuck)?;
        if clock >= sched.tally_from {
            let p = temp.patch(&x);
            let t = &mut tallies[p];
            let (ein, eout) = (0.5 * w * u.norm_squared(), 0.5 * w * v_new.norm_squared());
            t.incident += w;
            t.emitted += w;
            t.energy_in += ein;
            t.energy_out += eout;
            t.momentum += w * (n.dot(&u) - n.dot(&v_new));
            net[p] += eout - ein;
        }
        v = v_new;
        flight = next_flight;
    }
    out.x = x;
    out.v = v;
    Ok(out)
}

/// Advances every particle from the ensemble clock to `sched.horizon`.
pub fn step_to_wall(
    domain: &ConvexDomain,
    law: &BoundaryLaw,
    ensemble: &mut ParticleEnsemble,
    sched: &Schedule,
    seed: u64,
) -> Result<EventLog> {
    let n = ensemble.len();
    let n_patches = law.temperature().n_patches();
    let n_snaps = sched.snapshot_times.len();
    let from = ensemble.clock;
    let states: Vec<(Vec3, Vec3, f64)> = (0..n)
        .map(|i| {
            (
                ensemble.positions[i],
                ensemble.velocities[i],
                ensemble.weights[i],
            )
        })
        .collect();
    type BlockOut = (
        Vec<(Vec3, Vec3)>,
        Vec<WallTally>,
        Vec<MomentAcc>,
        u64,
        u64,
        f64,
    );
    let blocks: Vec<Result<BlockOut>> =
        rng::par_blocks_indexed(seed, 0x73696d, n, BLOCK, |g: &mut StreamRng, b, count| {
            let mut tallies: Vec<WallTally> = (0..n_patches)
                .map(|p| WallTally {
                    patch: p,
                    ..Default::default()
                })
                .collect();
            let mut snaps = vec![MomentAcc::default(); n_snaps];
            let (mut hits, mut stuck, mut max_xi) = (0u64, 0u64, f64::NEG_INFINITY);
            let mut finals = Vec::with_capacity(count);
            for &(x, v, w) in &states[b * BLOCK..b * BLOCK + count] {
                let mut net = vec![0.0; n_patches];
                let o = advance_particle(
                    domain,
                    law,
                    x,
                    v,
                    w,
                    from,
                    sched,
                    &mut tallies,
                    &mut net,
                    &mut snaps,
                    g,
                )?;
                for (t, e) in tallies.iter_mut().zip(&net) {
                    t.net_energy_sq += e * e;
                }
                hits += o.hits;
                stuck += o.stuck;
                max_xi = max_xi.max(o.max_xi);
                finals.push((o.x, o.v));
            }
            Ok((finals, tallies, snaps, hits, stuck, max_xi))
        });
    let mut tallies: Vec<WallTally> = (0..n_patches)
        .map(|p| WallTally {
            patch: p,
            ..Default::default()
        })
        .collect();
    let mut snaps = vec![MomentAcc::default(); n_snaps];
    let (mut hits, mut stuck, mut max_xi) = (0, 0, f64::NEG_INFINITY);
    let mut i = 0;
    for blk in blocks {
        let (finals, t, s, h, st, mx) = blk?;
        for (x, v) in finals {
            ensemble.positions[i] = x;
            ensemble.velocities[i] = v;
            i += 1;
        }
        for (a, b) in tallies.iter_mut().zip(&t) {
            *a = a.merge(b);
        }
        for (a, b) in snaps.iter_mut().zip(&s) {
            *a = a.merge(b);
        }
        hits += h;
        stuck += st;
        max_xi = max_xi.max(mx);
    }
    ensemble.clock = sched.horizon;
    let volume = domain.volume();
    Ok(EventLog {
        wall_hits: hits,
        stuck,
        max_xi,
        tallies,
        snapshots: snaps
            .iter()
            .zip(&sched.snapshot_times)
            .map(|(a, &t)| a.finish(t, volume))
            .collect(),
    })
}

/// Mean time between wall hits per particle, from a pilot run.
pub fn mean_bounce_time(
    domain: &ConvexDomain,
    law: &BoundaryLaw,
    t_init: f64,
    seed: u64,
) -> Result<f64> {
    let n = 2000;
    let mut ens = ParticleEnsemble::initial(domain, n, t_init, seed ^ 0x70696c6f74);
    let t_scale = 2.0 * domain.bounding_radius() / law.temperature().bounds().0.min(t_init).sqrt();
    let sched = Schedule {
        horizon: 20.0 * t_scale,
        tally_from: f64::INFINITY,
        snapshot_times: vec![],
    };
    let log = step_to_wall(domain, law, &mut ens, &sched, seed ^ 0x70696c6f74)?;
    if log.wall_hits == 0 {
        return Err(Error::InvalidParam("pilot run saw no wall hits".into()));
    }
    Ok(sched.horizon * n as f64 / log.wall_hits as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_particles: usize,
    /// Target bounces per particle; the horizon is this many mean bounce times.
    pub n_bounces: usize,
    /// Explicit horizon, overriding `n_bounces`.
    pub horizon: Option<f64>,
    pub t_init: f64,
    pub n_snapshots: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_particles: 100_000,
            n_bounces: 100,
            horizon: None,
            t_init: 1.0,
            n_snapshots: 10,
            seed: 1,
        }
    }
}

/// Outcome of a simulation run with the equilibrium statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub horizon: f64,
    pub bounce_time: f64,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub mass_defect: f64,
    pub log: EventLog,
    pub ensemble: ParticleEnsemble,
}

impl EquilibriumReport {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Chi-square statistic of speeds against the Maxwell speed law at `t` with
/// `bins` equiprobable bins.
pub fn speed_chi_square(speeds: &[f64], t: f64, bins: usize) -> (f64, usize) {
    let mut counts = vec![0usize; bins];
    for &s in speeds {
        let k = ((maxwell_speed_cdf(s, t) * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let expect = speeds.len() as f64 / bins as f64;
    let chi2 = counts
        .iter()
        .map(|&c| (c as f64 - expect).powi(2) / expect)
        .sum();
    (chi2, bins - 1)
}

/// Runs the ensemble to the horizon, tallying walls over the second half, and
/// tests the final speeds against the Maxwellian at the wall temperature.
/// For non-uniform walls the chi-square is computed against T_M and is only
/// informative.
pub fn equilibrium_test(
    domain: &ConvexDomain,
    law: &BoundaryLaw,
    cfg: &SimConfig,
) -> Result<EquilibriumReport> {
    if cfg.n_particles < 2 {
        return Err(Error::InvalidParam("need at least two particles".into()));
    }
    let bounce_time = mean_bounce_time(domain, law, cfg.t_init, cfg.seed)?;
    let horizon = cfg.horizon.unwrap_or(cfg.n_bounces as f64 * bounce_time);
    let snapshot_times = (1..=cfg.n_snapshots)
        .map(|i| horizon * i as f64 / cfg.n_snapshots as f64)
        .collect();
    let sched = Schedule {
        horizon,
        tally_from: 0.5 * horizon,
        snapshot_times,
    };
    let mut ens = ParticleEnsemble::initial(domain, cfg.n_particles, cfg.t_init, cfg.seed);
    let w0 = ens.total_weight();
    let log = step_to_wall(domain, law, &mut ens, &sched, cfg.seed)?;
    let mass_defect =
        (ens.total_weight() - w0).abs() + (ens.len() as f64 - cfg.n_particles as f64).abs();
    let (chi2, dof) = speed_chi_square(&ens.speeds(), law.temperature().bounds().1, 50);
    Ok(EquilibriumReport {
        horizon,
        bounce_time,
        chi2,
        dof,
        p_value: chi_square_pvalue(chi2, dof as f64),
        mass_defect,
        log,
        ensemble: ens,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullFluxReport {
    pub patch: usize,
    /// Net particle flux (incident minus emitted) per unit time.
    pub mass_flux: f64,
    /// Net energy the wall hands to the gas per unit time and its standard error.
    pub energy_flux: f64,
    pub energy_se: f64,
    /// Normal momentum transfer per unit time; reported only.
    pub momentum_flux: f64,
    pub mass_balanced: bool,
    /// Energy flux within three standard errors of zero.
    pub energy_balanced: bool,
}

pub fn null_flux_tally(
    tallies: &[WallTally],
    window: f64,
    n_particles: usize,
) -> Vec<NullFluxReport> {
    tallies
        .iter()
        .map(|t| {
            let mass_flux = (t.incident - t.emitted) / window;
            let energy_flux = t.net_energy() / window;
            let energy_se = t.net_energy_se(n_particles) / window;
            NullFluxReport {
                patch: t.patch,
                mass_flux,
                energy_flux,
                energy_se,
                momentum_flux: t.momentum / window,
                mass_balanced: mass_flux == 0.0,
                energy_balanced: energy_flux.abs() <= 3.0 * energy_se,
            }
        })
        .collect()
}

pub const DUMP_MAGIC: &[u8; 4] = b"CLKS";
pub const DUMP_VERSION: u32 = 1;

/// Final-state layout: magic "CLKS", version u32, N u64, then N records of
/// (x, y, z, vx, vy, vz) as f64; all little-endian.
pub fn encode_state(ens: &ParticleEnsemble) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 48 * ens.len());
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    out.extend_from_slice(&(ens.len() as u64).to_le_bytes());
    for (x, v) in ens.positions.iter().zip(&ens.velocities) {
        for c in x.iter().chain(v.iter()) {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn decode_state(bytes: &[u8]) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let bad = |m: &str| Error::InvalidParam(format!("state dump: {m}"));
    if bytes.len() < 16 || &bytes[..4] != DUMP_MAGIC {
        return Err(bad("missing CLKS header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != DUMP_VERSION {
        return Err(bad("unknown version"));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 16 + 48 * n {
        return Err(bad("length does not match N"));
    }
    let f =
        |i: usize| f64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().expect("8 bytes"));
    Ok((0..n)
        .map(|p| {
            (
                Vec3::new(f(6 * p), f(6 * p + 1), f(6 * p + 2)),
                Vec3::new(f(6 * p + 3), f(6 * p + 4), f(6 * p + 5)),
            )
        })
        .unzip())
}

/// Whether every position lies in the closed domain up to `TOL`.
pub fn all_inside(domain: &ConvexDomain, ens: &ParticleEnsemble) -> bool {
    ens.positions.iter().all(|x| domain.xi(x) <= TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clkernel::WallTemperature;
    use proptest::prelude::*;

    fn law(rp: f64, ra: f64) -> BoundaryLaw {
        BoundaryLaw::from_coefficients(WallTemperature::Constant(1.0), rp, ra).unwrap()
    }

    #[test]
    fn specular_billiard_keeps_speed() {
        let d = ConvexDomain::unit_ball();
        let mut ens = ParticleEnsemble {
            positions: vec![Vec3::new(0.1, 0.2, -0.3)],
            velocities: vec![Vec3::new(0.7, -1.1, 0.4)],
            weights: vec![1.0],
            clock: 0.0,
        };
        let s0 = ens.velocities[0].norm();
        let sched = Schedule {
            horizon: 200.0,
            tally_from: 0.0,
            snapshot_times: vec![],
        };
        let log = step_to_wall(&d, &law(0.0, 0.0), &mut ens, &sched, 5).unwrap();
        assert!(log.wall_hits > 50);
        assert!((ens.velocities[0].norm() - s0).abs() < 1e-12 * s0);
        assert!(log.max_xi <= TOL);
    }

    #[test]
    fn diffuse_emission_energy() {
        // Flux-weighted Maxwellian: E|v'|^2 = 4 T_w, so mean emitted energy is 2 T_w.
        let d = ConvexDomain::unit_ball();
        let mut ens = ParticleEnsemble::initial(&d, 4000, 1.0, 2);
        let sched = Schedule {
            horizon: 20.0,
            tally_from: 0.0,
            snapshot_times: vec![],
        };
        let log = step_to_wall(&d, &law(1.0, 1.0), &mut ens, &sched, 2).unwrap();
        let t = log.tallies[0];
        let mean = t.energy_out / t.emitted;
        assert!((mean - 2.0).abs() < 0.02, "{mean}");
        assert!(all_inside(&d, &ens));
    }

    #[test]
    fn dump_roundtrip() {
        let d = ConvexDomain::unit_ball();
        let ens = ParticleEnsemble::initial(&d, 17, 1.0, 3);
        let bytes = encode_state(&ens);
        assert_eq!(&bytes[..4], b"CLKS");
        assert_eq!(bytes.len(), 16 + 17 * 48);
        let (x, v) = decode_state(&bytes).unwrap();
        assert_eq!(x, ens.positions);
        assert_eq!(v, ens.velocities);
        assert!(decode_state(&bytes[..20]).is_err());
    }

    #[test]
    fn thread_count_does_not_matter() {
        let d = ConvexDomain::unit_ball();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let mut ens = ParticleEnsemble::initial(&d, 3000, 1.0, 4);
                let sched = Schedule {
                    horizon: 3.0,
                    tally_from: 1.0,
                    snapshot_times: vec![1.0, 2.0],
                };
                let log = step_to_wall(&d, &law(0.5, 0.5), &mut ens, &sched, 4).unwrap();
                (ens, log)
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn chi_square_flags_wrong_temperature() {
        let d = ConvexDomain::unit_ball();
        let ens = ParticleEnsemble::initial(&d, 20_000, 1.0, 6);
        let (c_ok, dof) = speed_chi_square(&ens.speeds(), 1.0, 50);
        assert!(chi_square_pvalue(c_ok, dof as f64) > 1e-3);
        let (c_bad, _) = speed_chi_square(&ens.speeds(), 1.2, 50);
        assert!(chi_square_pvalue(c_bad, dof as f64) < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn mass_is_conserved(seed in any::<u64>(), n in 20usize..300, rp in 0.0f64..1.0, ra in 0.0f64..2.0,
                             hot in 0.5f64..3.0) {
            let d = ConvexDomain::ellipsoid(Vec3::zeros(), Vec3::new(1.5, 1.0, 0.8)).unwrap();
            let temp = WallTemperature::Patchwise { axis: 2, split: 0.1, low: 1.0, high: hot };
            let law = BoundaryLaw::from_coefficients(temp, rp, ra).unwrap_or_else(|_| law(1.0, 1.0));
            let mut ens = ParticleEnsemble::initial(&d, n, 1.0, seed);
            let w0 = ens.total_weight();
            let sched = Schedule { horizon: 5.0, tally_from: 0.0, snapshot_times: vec![2.5, 5.0] };
            let log = step_to_wall(&d, &law, &mut ens, &sched, seed).unwrap();
            prop_assert_eq!(ens.len(), n);
            prop_assert_eq!(ens.total_weight(), w0);
            prop_assert!(all_inside(&d, &ens));
            prop_assert!(log.max_xi <= crate::geometry::TOL);
            for t in &log.tallies {
                prop_assert_eq!(t.incident, t.emitted);
            }
        }
    }
}
