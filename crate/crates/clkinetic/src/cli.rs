//! Command-line front end: configuration, worker pool, report files.
//!
//! Every computation runs to completion in memory before the output directory
//! is touched, so a failed or rejected run leaves nothing behind.

use crate::clkernel::{kernel_suite, BoundaryLaw, KernelSuite, WallTemperature};
use crate::collision::{k_rho_l1_check, k_theta_exchange_fit};
use crate::cycles::{
    count_bound_check, sample_cycle, time_gap_check, weighted_cycle_measure, CycleTrace,
    MeasureParams,
};
use crate::geometry::{ConvexDomain, Monomial, TOL};
use crate::lemma_oracle::{coefficient_suite, integral_suite, reference_walls, LemmaGrid};
use crate::report::LemmaReport;
use crate::simulator::{encode_state, equilibrium_test, null_flux_tally, SimConfig};
use crate::{params, rng, Error, Vec3};
use clap::{Parser, Subcommand};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "clk",
    version,
    about = "Cercignani-Lampis kinetic verification and simulation"
)]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Subcommand)]
pub enum Command {
    /// Kernel normalization, reciprocity and sampler checks.
    VerifyKernel,
    /// Integral identities, coefficient recursions, exit-map and collision checks.
    VerifyLemmas,
    /// Backward stochastic cycles from one phase point.
    Trace {
        #[arg(long)]
        samples: Option<usize>,
        /// Largest hit index k for the survival curve.
        #[arg(long)]
        k: Option<usize>,
        /// Grazing-set parameter.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Free-molecular particle simulation.
    Simulate,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("computation failed: {0}")]
    Compute(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 3,
            Self::Compute(_) => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Ball {
        center: [f64; 3],
        radius: f64,
    },
    Ellipsoid {
        center: [f64; 3],
        semi_axes: [f64; 3],
    },
    Polynomial {
        terms: Vec<TermSpec>,
        bounding_radius: f64,
        convexity_lower_bound: Option<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coef: f64,
    pub pow: [u32; 3],
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self::Ball {
            center: [0.0; 3],
            radius: 1.0,
        }
    }
}

impl DomainSpec {
    pub fn build(&self) -> crate::Result<ConvexDomain> {
        match self {
            Self::Ball { center, radius } => ConvexDomain::ball(Vec3::from(*center), *radius),
            Self::Ellipsoid { center, semi_axes } => {
                ConvexDomain::ellipsoid(Vec3::from(*center), Vec3::from(*semi_axes))
            }
            Self::Polynomial {
                terms,
                bounding_radius,
                convexity_lower_bound,
            } => ConvexDomain::polynomial(
                terms
                    .iter()
                    .map(|t| Monomial {
                        coef: t.coef,
                        pow: t.pow,
                    })
                    .collect(),
                *bounding_radius,
                *convexity_lower_bound,
            ),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemperatureSpec {
    Constant {
        value: f64,
    },
    Patchwise {
        axis: usize,
        split: f64,
        low: f64,
        high: f64,
    },
    Smooth {
        base: f64,
        amplitude: f64,
        direction: [f64; 3],
    },
}

impl TemperatureSpec {
    fn build(&self) -> Result<WallTemperature, CliError> {
        if let Self::Patchwise { axis, .. } = self {
            if *axis > 2 {
                return Err(config_err(format!(
                    "patchwise axis {axis} must be 0, 1 or 2"
                )));
            }
        }
        Ok(match self {
            Self::Constant { value } => WallTemperature::Constant(*value),
            Self::Patchwise {
                axis,
                split,
                low,
                high,
            } => WallTemperature::Patchwise {
                axis: *axis,
                split: *split,
                low: *low,
                high: *high,
            },
            Self::Smooth {
                base,
                amplitude,
                direction,
            } => WallTemperature::Smooth {
                base: *base,
                amplitude: *amplitude,
                direction: Vec3::from(*direction),
            },
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSpec {
    pub r_perp: f64,
    pub r_par: f64,
    pub temperature: TemperatureSpec,
}

impl Default for WallSpec {
    fn default() -> Self {
        Self {
            r_perp: 1.0,
            r_par: 1.0,
            temperature: TemperatureSpec::Constant { value: 1.0 },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub n_configs: usize,
    pub n_pairs: usize,
    pub n_samples: usize,
    pub order: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        let d = KernelSuite::default();
        Self {
            n_configs: d.n_configs,
            n_pairs: d.n_pairs,
            n_samples: d.n_samples,
            order: d.order,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaSection {
    pub max_gap: usize,
    pub t_stars: Vec<f64>,
    pub c: f64,
    pub exit_configs: usize,
    pub velocity_segments: usize,
    pub k_rho: Vec<f64>,
}

impl Default for LemmaSection {
    fn default() -> Self {
        Self {
            max_gap: 64,
            t_stars: vec![1e-3, 1e-4],
            c: 1.0 / 15.0,
            exit_configs: 100,
            velocity_segments: 10_000,
            k_rho: vec![0.5, 1.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub t: f64,
    pub x: [f64; 3],
    pub v: [f64; 3],
    pub samples: usize,
    pub k: usize,
    pub delta: f64,
    /// Traces written step by step to trace.csv.
    pub dump_traces: usize,
    /// Weighted measures are estimated for k = 1..=weighted_k (at most 6).
    pub weighted_k: usize,
    pub lam: f64,
    pub t_star: f64,
    pub c: f64,
}

impl Default for TraceSection {
    fn default() -> Self {
        let mp = MeasureParams::default();
        Self {
            t: 0.1,
            x: [0.95, 0.0, 0.0],
            v: [-1.0, 0.0, 0.0],
            samples: 100_000,
            k: 8,
            delta: 0.1,
            dump_traces: 100,
            weighted_k: 0,
            lam: mp.lam,
            t_star: mp.t_star,
            c: mp.c,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_particles: usize,
    pub n_bounces: usize,
    pub horizon: Option<f64>,
    pub t_init: f64,
    pub n_snapshots: usize,
    /// Significance level of the speed-law test.
    pub alpha: f64,
    /// Particle-particle collisions are outside the free-molecular model.
    pub collisions: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            n_particles: d.n_particles,
            n_bounces: d.n_bounces,
            horizon: d.horizon,
            t_init: d.t_init,
            n_snapshots: d.n_snapshots,
            alpha: 0.01,
            collisions: false,
        }
    }
}

/// Contents of the JSON configuration file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub domain: DomainSpec,
    pub wall: WallSpec,
    pub verify_kernel: KernelSection,
    pub verify_lemmas: LemmaSection,
    pub trace: TraceSection,
    pub simulate: SimulateSection,
}

/// Validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub output_dir: PathBuf,
    pub domain: ConvexDomain,
    pub law: BoundaryLaw,
    pub payload: Payload,
}

#[derive(Debug, Clone)]
pub enum Payload {
    VerifyKernel(KernelSection),
    VerifyLemmas(LemmaSection),
    Trace(TraceSection),
    Simulate(SimulateSection),
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

fn nonzero(name: &str, n: usize) -> Result<(), CliError> {
    if n == 0 {
        Err(config_err(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

impl RunConfig {
    /// Merges file and flags (flags win) and validates everything.
    pub fn resolve(cli: &Cli) -> Result<Self, CliError> {
        let file = match &cli.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<FileConfig>(&text)
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let seed = cli.seed.or(file.seed).unwrap_or(1);
        let threads = cli.threads.or(file.threads).unwrap_or(1);
        nonzero("threads", threads)?;
        let output_dir = cli
            .out
            .clone()
            .or(file.output_dir)
            .unwrap_or_else(|| PathBuf::from("out"));
        let domain = file.domain.build().map_err(config_err)?;
        let temperature = file.wall.temperature.build()?;
        let law = BoundaryLaw::from_coefficients(temperature, file.wall.r_perp, file.wall.r_par)
            .map_err(config_err)?;
        let payload = match cli.command {
            Command::VerifyKernel => {
                let k = file.verify_kernel;
                nonzero("verify_kernel.n_configs", k.n_configs)?;
                nonzero("verify_kernel.n_pairs", k.n_pairs)?;
                nonzero("verify_kernel.order", k.order)?;
                if k.n_samples < 2 {
                    return Err(config_err("verify_kernel.n_samples must be at least 2"));
                }
                Payload::VerifyKernel(k)
            }
            Command::VerifyLemmas => {
                let l = file.verify_lemmas;
                positive("verify_lemmas.c", l.c)?;
                for &t in &l.t_stars {
                    positive("verify_lemmas.t_stars", t)?;
                }
                for &r in &l.k_rho {
                    positive("verify_lemmas.k_rho", r)?;
                }
                nonzero("verify_lemmas.exit_configs", l.exit_configs)?;
                nonzero("verify_lemmas.velocity_segments", l.velocity_segments)?;
                Payload::VerifyLemmas(l)
            }
            Command::Trace { samples, k, delta } => {
                let mut t = file.trace;
                t.samples = samples.unwrap_or(t.samples);
                t.k = k.unwrap_or(t.k);
                t.delta = delta.unwrap_or(t.delta);
                nonzero("trace.samples", t.samples)?;
                if t.k < 2 {
                    return Err(config_err("trace.k must be at least 2"));
                }
                if t.weighted_k > 6 {
                    return Err(config_err("trace.weighted_k must be at most 6"));
                }
                positive("trace.t", t.t)?;
                positive("trace.delta", t.delta)?;
                positive("trace.t_star", t.t_star)?;
                positive("trace.c", t.c)?;
                if !t.lam.is_finite() {
                    return Err(config_err("trace.lam must be finite"));
                }
                let x = Vec3::from(t.x);
                if !domain.contains(&x) {
                    return Err(config_err(format!(
                        "trace.x = {:?} is outside the domain",
                        t.x
                    )));
                }
                if Vec3::from(t.v).norm() == 0.0 {
                    return Err(config_err("trace.v must be nonzero"));
                }
                if !matches!(law, BoundaryLaw::Kernel(_)) {
                    return Err(config_err("trace needs r_perp > 0 and 0 < r_par < 2"));
                }
                Payload::Trace(t)
            }
            Command::Simulate => {
                let s = file.simulate;
                if s.collisions {
                    return Err(config_err(
                        "simulate.collisions is not supported; the simulator is collisionless",
                    ));
                }
                if s.n_particles < 2 {
                    return Err(config_err("simulate.n_particles must be at least 2"));
                }
                nonzero("simulate.n_snapshots", s.n_snapshots)?;
                positive("simulate.t_init", s.t_init)?;
                if let Some(h) = s.horizon {
                    positive("simulate.horizon", h)?;
                } else {
                    nonzero("simulate.n_bounces", s.n_bounces)?;
                }
                if !(s.alpha > 0.0 && s.alpha < 1.0) {
                    return Err(config_err("simulate.alpha must lie in (0, 1)"));
                }
                Payload::Simulate(s)
            }
        };
        Ok(Self {
            seed,
            threads,
            output_dir,
            domain,
            law,
            payload,
        })
    }
}

/// A CSV file held in memory until the run finishes.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvFile {
    pub name: String,
    pub body: String,
}

/// Files of one run and the asserted pass/fail totals.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub csv: Vec<CsvFile>,
    pub binary: Vec<(String, Vec<u8>)>,
    pub pass: usize,
    pub fail: usize,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.fail > 0)
    }

    fn add_reports(&mut self, name: &str, rows: &[LemmaReport]) {
        let mut body = String::from("lemma_id,params,lhs,rhs,margin,quad_error,pass\n");
        let (mut pass, mut fail) = (0, 0);
        for r in rows {
            let _ = writeln!(
                body,
                "{},{},{:e},{:e},{:e},{:e},{}",
                r.lemma_id,
                csv_quote(&r.params_json()),
                r.lhs,
                r.rhs,
                r.margin,
                r.quad_error,
                r.pass
            );
            if r.asserted {
                if r.pass {
                    pass += 1;
                } else {
                    fail += 1;
                    self.failures.push(format!(
                        "{name}: {} {} lhs={:e} rhs={:e}",
                        r.lemma_id,
                        r.params_json(),
                        r.lhs,
                        r.rhs
                    ));
                }
            }
        }
        let _ = writeln!(body, "# pass={pass} fail={fail}");
        self.pass += pass;
        self.fail += fail;
        self.csv.push(CsvFile {
            name: name.into(),
            body,
        });
    }

    /// Data table with a summary line counting its own checks.
    fn add_table(&mut self, name: &str, header: &str, rows: Vec<String>, pass: usize, fail: usize) {
        let mut body = format!("{header}\n");
        for r in rows {
            body.push_str(&r);
            body.push('\n');
        }
        let _ = writeln!(body, "# pass={pass} fail={fail}");
        self.pass += pass;
        self.fail += fail;
        self.csv.push(CsvFile {
            name: name.into(),
            body,
        });
    }
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn run_kernel(cfg: &RunConfig, k: &KernelSection) -> Outcome {
    let suite = KernelSuite {
        n_configs: k.n_configs,
        n_pairs: k.n_pairs,
        n_samples: k.n_samples,
        order: k.order,
    };
    let mut out = Outcome::default();
    out.add_reports("kernel.csv", &kernel_suite(&suite, cfg.seed));
    out
}

fn run_lemmas(cfg: &RunConfig, l: &LemmaSection) -> Result<Outcome, CliError> {
    let mut rows = integral_suite(&LemmaGrid::default())?;
    rows.extend(coefficient_suite(
        &reference_walls(),
        l.max_gap,
        &l.t_stars,
        l.c,
    ));

    let d = &cfg.domain;
    let ex = d.exit_map_check(l.exit_configs, 1e-6, 0.1, cfg.seed)?;
    for (id, dev) in [
        ("exit_grad_x_tb", ex.grad_x_tb),
        ("exit_grad_v_tb", ex.grad_v_tb),
        ("exit_jac_x_xb", ex.jac_x_xb),
        ("exit_jac_v_xb", ex.jac_v_xb),
        ("exit_jacobian_v_to_xbtb", ex.jacobian),
    ] {
        rows.push(LemmaReport::inequality(
            id,
            params! {"configs" => ex.configs, "step" => 1e-6},
            dev,
            1e-5,
            0.0,
        ));
    }

    let wp = d.default_weight_params();
    let vf = d.velocity_lemma_fit(&wp, l.velocity_segments, 2.0, cfg.seed)?;
    let p = params! {"segments_per_set" => l.velocity_segments, "eps" => wp.eps, "c_first" => vf.c_first,
    "c_second" => vf.c_second, "c_theory" => vf.c_theory};
    if vf.c_theory == 0.0 {
        // Quadric domains keep the weight constant along every ray.
        rows.push(LemmaReport::inequality(
            "velocity_lemma_constant_weight",
            p,
            vf.c_first.max(vf.c_second),
            1e-8,
            0.0,
        ));
    } else {
        rows.push(LemmaReport::inequality(
            "velocity_lemma_stability",
            p.clone(),
            vf.spread,
            0.2,
            0.0,
        ));
        rows.push(LemmaReport::inequality(
            "velocity_lemma_violations",
            p.clone(),
            vf.violations as f64,
            0.0,
            0.0,
        ));
        rows.push(LemmaReport::inequality(
            "velocity_lemma_theory",
            p,
            vf.c_first.max(vf.c_second),
            vf.c_theory,
            0.0,
        ));
    }

    for &rho in &l.k_rho {
        rows.extend(k_rho_l1_check(&Vec3::new(0.3, -1.0, 2.0), rho));
    }
    let speeds: Vec<f64> = (0..=20).map(f64::from).collect();
    rows.push(k_theta_exchange_fit(
        1.0,
        0.5,
        0.4,
        &speeds,
        &[0.0, 0.5, 1.0, 2.0, 4.0],
    ));

    let mut out = Outcome::default();
    out.add_reports("lemmas.csv", &rows);
    Ok(out)
}

fn fmt_vec(v: &Vec3) -> String {
    format!("{:e},{:e},{:e}", v.x, v.y, v.z)
}

fn run_trace(cfg: &RunConfig, tr: &TraceSection) -> Result<Outcome, CliError> {
    let BoundaryLaw::Kernel(wall) = &cfg.law else {
        return Err(config_err("trace needs a Cercignani-Lampis wall"));
    };
    let mp = MeasureParams {
        lam: tr.lam,
        t_star: tr.t_star,
        c: tr.c,
        ..MeasureParams::default()
    };
    let (x, v) = (Vec3::from(tr.x), Vec3::from(tr.v));
    let blocks = rng::par_blocks(
        cfg.seed,
        0x7472,
        tr.samples,
        4096,
        |g, count| -> crate::Result<Vec<Option<CycleTrace>>> {
            (0..count)
                .map(|_| {
                    match sample_cycle(&cfg.domain, wall, tr.t, &x, &v, tr.k - 1, tr.delta, &mp, g)
                    {
                        Ok(t) => Ok(Some(t)),
                        Err(Error::GrazingRay(_)) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        },
    );
    let mut traces = Vec::with_capacity(tr.samples);
    for b in blocks {
        traces.extend(b?);
    }
    let excluded = traces.iter().filter(|t| t.is_none()).count();
    let traces: Vec<CycleTrace> = traces.into_iter().flatten().collect();

    let mut lines = Vec::new();
    for (id, t) in traces.iter().take(tr.dump_traces).enumerate() {
        for s in &t.steps {
            lines.push(format!(
                "{id},{},{:e},{},{},{},{},{:e}",
                s.j,
                s.t_j,
                fmt_vec(&s.x_j),
                fmt_vec(&s.n_j),
                fmt_vec(&s.v_j),
                s.in_grazing_set,
                s.log_weight
            ));
        }
    }
    let mut out = Outcome::default();
    out.add_table(
        "trace.csv",
        "trace,j,t_j,x,y,z,nx,ny,nz,vx,vy,vz,in_grazing_set,log_weight",
        lines,
        0,
        0,
    );

    let n = tr.samples as f64;
    let mut rows = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for k in 1..=tr.k {
        let p = traces.iter().filter(|t| t.survives(k)).count() as f64 / n;
        let se = (p * (1.0 - p) / (n - 1.0).max(1.0)).sqrt();
        let par = params! {"k" => k, "t" => tr.t, "samples" => tr.samples, "grazing_excluded" => excluded};
        // Value row: rhs carries the standard error.
        let mut value =
            LemmaReport::inequality("survival_probability", par.clone(), p, se, 0.0).report_only();
        value.pass = true;
        rows.push(value);
        if let Some((p0, se0)) = prev {
            rows.push(LemmaReport::inequality(
                "survival_monotone",
                par,
                p - p0,
                3.0 * (se * se + se0 * se0).sqrt(),
                0.0,
            ));
        }
        prev = Some((p, se));
    }
    let gap = time_gap_check(&traces, tr.delta);
    let c_omega = gap.rhs;
    rows.push(gap);
    if c_omega.is_finite() && c_omega > 0.0 {
        rows.push(count_bound_check(&traces, tr.delta, c_omega));
    }
    for k in 1..=tr.weighted_k {
        let w = weighted_cycle_measure(
            &cfg.domain,
            wall,
            tr.t,
            &x,
            &v,
            k,
            &mp,
            tr.samples,
            cfg.seed,
        )?;
        rows.push(LemmaReport::inequality(
            "weighted_measure_bound",
            params! {"k" => k, "t" => tr.t, "std_error" => w.std_error, "heavy_tail" => w.heavy_tail,
                     "lam" => mp.lam, "t_star" => mp.t_star, "c" => mp.c},
            w.estimate,
            w.bound,
            0.0,
        ));
    }
    out.add_reports("trace_summary.csv", &rows);
    Ok(out)
}

fn run_simulate(cfg: &RunConfig, s: &SimulateSection) -> Result<Outcome, CliError> {
    let sim = SimConfig {
        n_particles: s.n_particles,
        n_bounces: s.n_bounces,
        horizon: s.horizon,
        t_init: s.t_init,
        n_snapshots: s.n_snapshots,
        seed: cfg.seed,
    };
    let rep = equilibrium_test(&cfg.domain, &cfg.law, &sim)?;
    let mut out = Outcome::default();

    let lines = rep
        .log
        .snapshots
        .iter()
        .map(|m| {
            format!(
                "{:e},{:e},{},{:e}",
                m.time,
                m.density,
                fmt_vec(&m.bulk_velocity),
                m.temperature
            )
        })
        .collect();
    out.add_table(
        "moments.csv",
        "time,density,ux,uy,uz,temperature",
        lines,
        0,
        0,
    );

    let window = 0.5 * rep.horizon;
    let uniform = matches!(cfg.law.temperature(), WallTemperature::Constant(_));
    let flux = null_flux_tally(&rep.log.tallies, window, s.n_particles);
    let (mut pass, mut fail) = (0, 0);
    let lines = rep
        .log
        .tallies
        .iter()
        .zip(&flux)
        .map(|(t, f)| {
            let ok = f.mass_balanced && (!uniform || f.energy_balanced);
            if ok {
                pass += 1;
            } else {
                fail += 1;
            }
            format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                t.patch,
                t.incident,
                t.emitted,
                t.energy_in,
                t.energy_out,
                t.momentum,
                f.mass_flux,
                f.energy_flux,
                f.energy_se,
                f.momentum_flux,
                ok
            )
        })
        .collect();
    out.add_table(
        "wall_tally.csv",
        "patch,incident,emitted,energy_in,energy_out,momentum,mass_flux,energy_flux,energy_se,momentum_flux,pass",
        lines,
        pass,
        fail,
    );

    let base = params! {"n_particles" => s.n_particles, "horizon" => rep.horizon, "bounce_time" => rep.bounce_time};
    let mut rows = Vec::new();
    let mut chi = LemmaReport::inequality(
        "equilibrium_speed_chi2",
        params! {"chi2" => rep.chi2, "dof" => rep.dof, "alpha" => s.alpha},
        s.alpha,
        rep.p_value,
        0.0,
    );
    chi.pass = rep.passes(s.alpha);
    rows.push(if uniform { chi } else { chi.report_only() });
    rows.push(LemmaReport::identity(
        "mass_conservation",
        base.clone(),
        rep.mass_defect,
        0.0,
        0.0,
        0.0,
    ));
    rows.push(LemmaReport::inequality(
        "particles_inside",
        base.clone(),
        rep.log.max_xi,
        TOL,
        0.0,
    ));
    rows.push(
        LemmaReport::inequality(
            "stuck_particles",
            base.clone(),
            rep.log.stuck as f64,
            0.0,
            0.0,
        )
        .report_only(),
    );
    if let WallTemperature::Patchwise { low, high, .. } = cfg.law.temperature() {
        if low != high && flux.len() == 2 {
            // Patch 1 is the hot side when high > low: it must feed energy to the gas.
            let (hot, cold) = if high > low {
                (&flux[1], &flux[0])
            } else {
                (&flux[0], &flux[1])
            };
            rows.push(LemmaReport::inequality(
                "hot_to_cold_energy_flux",
                params! {"hot_patch" => hot.patch, "hot_flux" => hot.energy_flux, "cold_flux" => cold.energy_flux,
                         "hot_se" => hot.energy_se, "cold_se" => cold.energy_se},
                cold.energy_flux.max(-hot.energy_flux),
                0.0,
                0.0,
            ));
        }
    }
    out.add_reports("simulate_summary.csv", &rows);
    out.binary
        .push(("state.bin".into(), encode_state(&rep.ensemble)));
    Ok(out)
}

/// Runs the configured subcommand on a pool of `cfg.threads` workers.
pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(config_err)?;
    pool.install(|| match &cfg.payload {
        Payload::VerifyKernel(k) => Ok(run_kernel(cfg, k)),
        Payload::VerifyLemmas(l) => run_lemmas(cfg, l),
        Payload::Trace(t) => run_trace(cfg, t),
        Payload::Simulate(s) => run_simulate(cfg, s),
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_outcome(dir: &Path, out: &Outcome) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for f in &out.csv {
        let p = dir.join(&f.name);
        std::fs::write(&p, &f.body).map_err(io_err(&p))?;
    }
    for (name, bytes) in &out.binary {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(io_err(&p))?;
    }
    Ok(())
}

/// Parses arguments, runs, writes files and returns the process exit code.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = RunConfig::resolve(&cli).and_then(|cfg| {
        let out = run(&cfg)?;
        write_outcome(&cfg.output_dir, &out)?;
        Ok((cfg, out))
    });
    match result {
        Ok((cfg, out)) => {
            for f in &out.failures {
                eprintln!("FAIL {f}");
            }
            println!(
                "pass={} fail={} output={}",
                out.pass,
                out.fail,
                cfg.output_dir.display()
            );
            out.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
