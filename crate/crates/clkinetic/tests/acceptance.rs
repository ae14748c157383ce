//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the summary lines always appear in the
//! test log. Criteria that cannot hold are still evaluated as stated.

use clkinetic::clkernel::{
    kernel_suite, mu0, BoundaryLaw, KernelSuite, WallModel, WallTemperature,
};
use clkinetic::collision::{k_rho_l1_check, post_collision, q_gain_mc};
use clkinetic::cycles::{
    one_fold_quadrature, survival_curve, two_fold_diffuse_quadrature, weighted_cycle_measure,
    MeasureParams,
};
use clkinetic::geometry::{ConvexDomain, Monomial};
use clkinetic::lemma_oracle::{coefficient_suite, integral_suite, reference_walls, LemmaGrid};
use clkinetic::report::LemmaReport;
use clkinetic::rng::{par_blocks, stream};
use clkinetic::simulator::{equilibrium_test, null_flux_tally, SimConfig};
use clkinetic::Vec3;
use rand::Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn rows<'a>(all: &'a [LemmaReport], id: &str) -> Vec<&'a LemmaReport> {
    all.iter().filter(|r| r.lemma_id == id).collect()
}

/// All asserted rows with the given ids pass; returns (passed, total).
fn tally(all: &[LemmaReport], ids: &[&str]) -> (usize, usize) {
    let sel: Vec<_> = all
        .iter()
        .filter(|r| r.asserted && ids.contains(&r.lemma_id.as_str()))
        .collect();
    (sel.iter().filter(|r| r.pass).count(), sel.len())
}

fn gaussian3<R: Rng + ?Sized>(g: &mut R) -> Vec3 {
    Vec3::from(std::array::from_fn::<f64, 3, _>(|_| {
        g.sample(StandardNormal)
    }))
}

fn kernel_criteria() -> Vec<(&'static str, Verdict)> {
    let start = Instant::now();
    let rep = kernel_suite(&KernelSuite::default(), 20_240_601);
    let secs = start.elapsed().as_secs_f64();

    let norm = rows(&rep, "kernel_normalization");
    let worst = norm.iter().map(|r| (r.lhs - 1.0).abs()).fold(0.0, f64::max);
    let norm_ok = norm.len() == 20 && norm.iter().all(|r| r.pass) && secs < 30.0;

    let rec = rows(&rep, "kernel_reciprocity")[0];

    let (sp, st) = tally(
        &rep,
        &[
            "sampler_rice_ks",
            "sampler_tangential_mean",
            "diffuse_limit_density",
            "diffuse_limit_ks",
        ],
    );
    let ks = rows(&rep, "sampler_rice_ks")[0].lhs;
    let dks = rows(&rep, "diffuse_limit_ks")[0].lhs;
    vec![
        (
            "kernel normalization",
            verdict(norm_ok, format!("20 configs, max |Q-1| = {worst:.2e} (tol 1e-4), suite time {secs:.1} s (limit 30 s)")),
        ),
        (
            "kernel reciprocity",
            verdict(rec.pass, format!("max |log residual| over 1000 pairs = {:.2e} (limit 1e-10)", rec.lhs)),
        ),
        (
            "sampler correctness",
            verdict(
                sp == st,
                format!("{sp}/{st} checks; Rice KS = {ks:.2e}, diffuse KS = {dks:.2e} (limit 0.01, 1e6 samples)"),
            ),
        ),
    ]
}

fn integral_criteria() -> Vec<(&'static str, Verdict)> {
    let rep = integral_suite(&LemmaGrid::default()).expect("grid is convergent");
    let (ap, at) = tally(&rep, &["abc_identity", "abc_tail"]);
    let abc_worst = rows(&rep, "abc_identity")
        .iter()
        .map(|r| ((r.lhs - r.rhs) / r.rhs).abs())
        .fold(0.0, f64::max);
    let (pp, pt) = tally(&rep, &["perp_identity", "perp_tail", "perp_small"]);
    let perp_worst = rows(&rep, "perp_identity")
        .iter()
        .map(|r| ((r.lhs - r.rhs) / r.rhs).abs())
        .fold(0.0, f64::max);
    let unweighted = rows(&rep, "perp_unweighted");
    let off = unweighted.iter().filter(|r| !r.pass).count();
    let extra = rows(&rep, "extra_term");
    let ep = extra.iter().filter(|r| r.pass).count();
    let extra_worst = extra
        .iter()
        .map(|r| r.lhs)
        .fold(f64::NEG_INFINITY, f64::max);
    vec![
        (
            "Gaussian-Bessel identity and tail",
            verdict(ap == at, format!("{ap}/{at} rows over the 5^3 grid, delta <= 0.2; max rel identity error {abc_worst:.1e}")),
        ),
        (
            "normal-direction identity and tail",
            verdict(
                pp == pt,
                format!(
                    "{pp}/{pt} rows; max rel identity error {perp_worst:.1e}; unweighted form off in {off}/{} cases (reported only)",
                    unweighted.len()
                ),
            ),
        ),
        (
            "extra-term bound",
            verdict(ep == extra.len(), format!("{ep}/{} (t, lambda) grid cells hold; worst excess {extra_worst:.3}", extra.len())),
        ),
    ]
}

fn coefficient_criterion() -> (&'static str, Verdict) {
    let rep = coefficient_suite(&reference_walls(), 64, &[1e-3, 1e-4], 1.0 / 15.0);
    let (rp, rt) = tally(&rep, &["t_recursion", "coefficients_positive"]);
    let neg = rows(&rep, "exponent_negativity");
    let np = neg.iter().filter(|r| r.pass).count();
    let crit = neg
        .iter()
        .filter_map(|r| r.params.get("critical_t_star").and_then(|v| v.as_f64()))
        .fold(0.0, f64::max);
    (
        "temperature recursion and exponent sign",
        verdict(
            rp == rt && np == neg.len(),
            format!(
                "recursion {rp}/{rt} (l-i <= 64, tol 1e-12 T_M); exponent negative in {np}/{} cases at t_* in {{1e-3, 1e-4}}, largest critical t_* {crit:.1e}",
                neg.len()
            ),
        ),
    )
}

fn exit_map_criterion() -> (&'static str, Verdict) {
    let c = ConvexDomain::unit_ball()
        .exit_map_check(100, 1e-6, 0.1, 77)
        .expect("ball exits");
    let worst = [c.grad_x_tb, c.grad_v_tb, c.jac_x_xb, c.jac_v_xb, c.jacobian]
        .into_iter()
        .fold(0.0, f64::max);
    (
        "exit-map derivatives and Jacobian",
        verdict(
            c.configs == 100 && worst < 1e-5,
            format!("100 configs, worst relative deviation {worst:.2e} (limit 1e-5)"),
        ),
    )
}

fn quartic() -> ConvexDomain {
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
    ConvexDomain::polynomial(t, 1.0, None).expect("convex quartic")
}

fn velocity_lemma_criterion() -> (&'static str, Verdict) {
    let d = quartic();
    let f = d
        .velocity_lemma_fit(&d.default_weight_params(), 10_000, 2.0, 31)
        .expect("segments trace");
    let ok = f.c_first.is_finite()
        && f.c_second.is_finite()
        && f.c_first > 0.0
        && f.spread <= 0.2
        && f.violations == 0;
    (
        "velocity lemma fit",
        verdict(
            ok,
            format!(
                "quartic domain, C = {:.4} / {:.4} on two sets of 1e4 (spread {:.1}%), {} violations at 2x",
                f.c_first,
                f.c_second,
                100.0 * f.spread,
                f.violations
            ),
        ),
    )
}

fn survival_criterion() -> (&'static str, Verdict) {
    let d = ConvexDomain::unit_ball();
    let wall = WallModel::diffuse(1.0).unwrap();
    let start = Instant::now();
    let c = survival_curve(
        &d,
        &wall,
        0.1,
        &Vec3::new(0.95, 0.0, 0.0),
        &Vec3::new(-1.0, 0.0, 0.0),
        8,
        100_000,
        5,
    )
    .expect("cycles trace");
    let secs = start.elapsed().as_secs_f64();
    let monotone = c.by_k.windows(2).all(|w| {
        w[1].estimate - w[0].estimate
            <= 3.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt()
    });
    let p8 = c.by_k[7].estimate;
    let curve: Vec<String> = c
        .by_k
        .iter()
        .map(|e| format!("{:.4}", e.estimate))
        .collect();
    (
        "cycle survival decay",
        verdict(
            monotone && p8 < 0.5 && secs < 120.0,
            format!(
                "P(t_k>0), k=1..8: [{}]; {secs:.1} s for 1e5 traces",
                curve.join(", ")
            ),
        ),
    )
}

fn weighted_measure_criterion() -> (&'static str, Verdict) {
    let d = ConvexDomain::unit_ball();
    let mp = MeasureParams::default();
    let x = Vec3::new(0.8, 0.0, 0.0);
    let v = Vec3::new(-1.0, 0.5, 0.0);

    let cl = WallModel::new(WallTemperature::Constant(1.0), 0.6, 0.8).unwrap();
    let q1 = one_fold_quadrature(&d, &cl, 0.5, &x, &v, &mp).expect("ball quadrature");
    let m1 =
        weighted_cycle_measure(&d, &cl, 0.5, &x, &v, 1, &mp, 4_000_000, 11).expect("cycles trace");
    let dev1 = (m1.estimate - q1) / q1;

    let dw = WallModel::diffuse(1.0).unwrap();
    let q2 = two_fold_diffuse_quadrature(&d, &dw, 1.0, &x, &v, &mp).expect("ball quadrature");
    let m2 =
        weighted_cycle_measure(&d, &dw, 1.0, &x, &v, 2, &mp, 4_000_000, 11).expect("cycles trace");
    let dev2 = (m2.estimate - q2) / q2;

    // Bound check at t = t_*, started next to the wall.
    let xb = Vec3::new(0.99, 0.0, 0.0);
    let vb = Vec3::new(-1.0, 0.5, 0.0);
    let mut bound_ok = true;
    let mut ratios = Vec::new();
    for (wi, wall) in [&cl, &dw].into_iter().enumerate() {
        for k in 1..=6 {
            let m = weighted_cycle_measure(
                &d,
                wall,
                mp.t_star,
                &xb,
                &vb,
                k,
                &mp,
                200_000,
                100 + k as u64 + 10 * wi as u64,
            )
            .expect("cycles trace");
            bound_ok &= m.estimate <= m.bound;
            ratios.push(m.estimate / m.bound);
        }
    }
    let worst_ratio = ratios.into_iter().fold(0.0, f64::max);
    (
        "weighted cycle measure",
        verdict(
            dev1.abs() <= 0.01 && dev2.abs() <= 0.01 && bound_ok,
            format!(
                "k=1 dev {:+.3}% (se {:.2}%), k=2 dev {:+.3}% (se {:.2}%), k<=6 max estimate/bound {worst_ratio:.2e}",
                100.0 * dev1,
                100.0 * m1.std_error / q1,
                100.0 * dev2,
                100.0 * m2.std_error / q2
            ),
        ),
    )
}

fn collision_criterion() -> (&'static str, Verdict) {
    let worst = par_blocks(2024, 0x636f, 1_000_000, 8192, |g, count| {
        (0..count)
            .map(|_| {
                let u = gaussian3(g);
                let v = 3.0 * gaussian3(g);
                let omega = gaussian3(g).normalize();
                let (up, vp) = post_collision(&u, &v, &omega).expect("unit omega");
                let scale = u.norm_squared() + v.norm_squared();
                let dm = ((up + vp) - (u + v)).norm() / scale.sqrt();
                let de = (up.norm_squared() + vp.norm_squared() - scale).abs() / scale;
                dm.max(de)
            })
            .fold(0.0, f64::max)
    })
    .into_iter()
    .fold(0.0, f64::max);

    let t0 = 1.0;
    let m = |w: &Vec3| mu0(t0, w);
    let mut g = stream(5, 0, 0);
    let mut q_ok = true;
    let mut worst_z: f64 = 0.0;
    for i in 0..12 {
        let speed = 5.0 * i as f64 / 11.0;
        let v = speed * gaussian3(&mut g).normalize();
        let e = q_gain_mc(m, m, &v, t0, 100_000, 40 + i);
        // Gain and loss cancel sample by sample, so what remains of Q is
        // floating-point rounding; it gets a floor next to the 3 sigma band.
        let floor = 64.0 * f64::EPSILON * e.gain.estimate;
        worst_z = worst_z.max(e.q.estimate.abs() / (3.0 * e.q.std_error + floor));
        q_ok &= e.q.estimate.abs() <= 3.0 * e.q.std_error + floor;
    }
    let k_rows: Vec<LemmaReport> = [0.5, 1.0, 3.0]
        .iter()
        .flat_map(|&rho| k_rho_l1_check(&Vec3::new(0.3, -1.0, 2.0), rho))
        .collect();
    let k_ok = k_rows.iter().all(|r| r.pass);
    let k_worst = k_rows
        .iter()
        .map(|r| ((r.lhs - r.rhs) / r.rhs).abs())
        .fold(0.0, f64::max);
    (
        "collision operator",
        verdict(
            worst <= 1e-12 && q_ok && k_ok,
            format!(
                "max conservation defect {worst:.1e} on 1e6 triples; Q(mu,mu) worst |Q|/(3 se + rounding) = {worst_z:.2} over 12 speeds <= 5; k_rho L1 rel error {k_worst:.1e}"
            ),
        ),
    )
}

fn simulator_criterion() -> (&'static str, Verdict) {
    let d = ConvexDomain::unit_ball();
    let start = Instant::now();
    let mut ok = true;
    let mut ps = Vec::new();
    for (i, rp) in [0.3, 0.7, 1.0].into_iter().enumerate() {
        for (j, ra) in [0.3, 0.7, 1.0].into_iter().enumerate() {
            let law =
                BoundaryLaw::from_coefficients(WallTemperature::Constant(1.0), rp, ra).unwrap();
            let cfg = SimConfig {
                t_init: 0.6,
                seed: 1000 + 3 * i as u64 + j as u64,
                ..SimConfig::default()
            };
            let rep = equilibrium_test(&d, &law, &cfg).expect("simulation runs");
            ok &= rep.passes(0.01) && rep.mass_defect == 0.0;
            ps.push(rep.p_value);
        }
    }
    let temp = WallTemperature::Patchwise {
        axis: 0,
        split: 0.0,
        low: 0.5,
        high: 2.0,
    };
    let law = BoundaryLaw::from_coefficients(temp, 0.7, 0.7).unwrap();
    let cfg = SimConfig {
        seed: 2000,
        ..SimConfig::default()
    };
    let rep = equilibrium_test(&d, &law, &cfg).expect("simulation runs");
    let flux = null_flux_tally(&rep.log.tallies, 0.5 * rep.horizon, cfg.n_particles);
    let (cold, hot) = (&flux[0], &flux[1]);
    let sign_ok = hot.energy_flux > 3.0 * hot.energy_se && cold.energy_flux < -3.0 * cold.energy_se;
    ok &= sign_ok && rep.mass_defect == 0.0;
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 300.0;
    let pmin = ps.iter().copied().fold(1.0, f64::min);
    (
        "simulator equilibrium",
        verdict(
            ok,
            format!(
                "3x3 (r_perp, r_par) grid: min p = {pmin:.3} (> 0.01), mass exact; two-temperature wall: hot {:+.0}, cold {:+.0} (se {:.0}); {secs:.0} s",
                hot.energy_flux, cold.energy_flux, hot.energy_se
            ),
        ),
    )
}

fn main() {
    let total = Instant::now();
    let mut results = kernel_criteria();
    results.extend(integral_criteria());
    results.push(coefficient_criterion());
    results.push(exit_map_criterion());
    results.push(velocity_lemma_criterion());
    results.push(survival_criterion());
    results.push(weighted_measure_criterion());
    results.push(collision_criterion());
    results.push(simulator_criterion());

    println!("acceptance criteria");
    for (name, v) in &results {
        println!(
            "[{}] {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed, {:.0} s",
        results.len() - failed,
        total.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
