//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs all ten; `cargo test --test acceptance -- 3 8`
//! runs a subset.

use phi4lab::bosegas::{self, FockBasis, GibbsState, ReducedDensity};
use phi4lab::bridges;
use phi4lab::gff::{SpectralTable, StreamKey};
use phi4lab::interactions::{self, CountertermSet, InteractionKind, Interactions, PotentialSpec};
use phi4lab::malliavin::{self, DerivativeOp, Functional};
use phi4lab::mc::{self, MCEstimate};
use phi4lab::runner::{self, Command, RunConfig};
use phi4lab::torus::{self, CutoffProfile};
use phi4lab::wick::{self, PairingIntegrand};
use phi4lab::{Point, Result, C64};
use std::sync::Arc;
use std::time::Instant;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Combine sub-checks: all must pass; details are joined.
fn all(parts: Vec<(bool, String)>) -> Verdict {
    let pass = parts.iter().all(|p| p.0);
    let detail = parts
        .iter()
        .map(|(ok, d)| if *ok { d.clone() } else { format!("[x] {d}") })
        .collect::<Vec<_>>()
        .join("; ");
    Verdict::new(pass, detail)
}

fn c1_wick_oracle() -> Result<Verdict> {
    // one grid for MC and pairing sums, so the oracle is exact on the grid
    let (n, eps, l, samples) = (32.0, 0.1, 128, 100_000);
    let table = SpectralTable::cutoff(n, CutoffProfile::Gaussian, l, 1.0)?;
    let inter = Interactions::new(&table, &PotentialSpec::bump(eps)?)?;
    let rows = mc::par_replicas(samples, None, |r| inter.all(&table.sample(&StreamKey::new(101, "X", r))));
    let col = |f: &dyn Fn(&[f64; 3]) -> f64| MCEstimate::from_samples(&rows.iter().map(f).collect::<Vec<_>>());
    let cases: Vec<(&str, MCEstimate, PairingIntegrand)> = vec![
        ("E[V_N^2]", col(&|r| r[0] * r[0]), PairingIntegrand::VnSquare),
        ("E[(V^eps)^2]", col(&|r| r[1] * r[1]), PairingIntegrand::VepsSquare),
        ("E[(W^eps)^2]", col(&|r| r[2] * r[2]), PairingIntegrand::WepsSquare),
        ("E[(V^eps-W^eps)^2]", col(&|r| (r[1] - r[2]).powi(2)), PairingIntegrand::VepsMinusWepsSquare),
        ("E[(V^eps-V_N)^2]", col(&|r| (r[1] - r[0]).powi(2)), PairingIntegrand::VepsMinusVnSquare),
        ("E[V^eps V_N]", col(&|r| r[1] * r[0]), PairingIntegrand::VepsVnCross),
        ("E[W^eps]", col(&|r| r[2]), PairingIntegrand::WepsMean),
    ];
    Ok(all(cases
        .into_iter()
        .map(|(name, est, integrand)| {
            let exact = wick::pairing_grid_value(integrand, &inter, &table.var);
            let z = est.z_score(exact);
            (z < 3.0, format!("{name} z={z:.2}"))
        })
        .collect()))
}

fn c2_covariance() -> Result<Verdict> {
    let table = SpectralTable::cutoff(16.0, CutoffProfile::Gaussian, 64, 1.0)?;
    let o = runner::covariance_check(&table, 20, 100_000, 202, None)?;
    Ok(Verdict::new(o.passed(), o.assertions[0].detail.clone() + " over 20 pairs"))
}

fn c3_slopes() -> Result<Verdict> {
    let s = runner::renormalization_slopes(&runner::DEFAULT_EPS_SCAN, &runner::DEFAULT_NU_SCAN, 1.0)?;
    Ok(all(vec![
        ((0.28..=0.36).contains(&s.tau_slope), format!("tau slope {:.4}", s.tau_slope)),
        ((0.04..=0.07).contains(&s.energy_slope), format!("E slope {:.4}", s.energy_slope)),
        ((0.14..=0.18).contains(&s.rho_slope), format!("rho slope {:.4}", s.rho_slope)),
    ]))
}

fn c4_l2_exponents() -> Result<Verdict> {
    let eps = runner::DEFAULT_L2_EPS;
    let dv = runner::veps_weps_distances(256.0, &eps, 1.0, 1024)?;
    let ns = runner::DEFAULT_L2_N;
    let dn = runner::cauchy_distances(&ns, 0.1, 1.0)?;
    let logs = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    let s_eps = mc::fit_slope(&logs(&eps), &logs(&dv));
    let s_n = mc::fit_slope(&logs(&ns), &logs(&dn));
    Ok(all(vec![
        ((0.5..=1.2).contains(&s_eps), format!("eps exponent {s_eps:.3}")),
        (s_n <= -0.6, format!("N exponent {s_n:.3}")),
    ]))
}

fn c5_nelson() -> Result<Verdict> {
    let mut parts = Vec::new();
    // (a) lower bound with one C
    let spec = PotentialSpec::bump(0.1)?;
    let mut cs = Vec::new();
    for n in [16.0, 32.0, 64.0] {
        let (min, c) = interactions::lower_bound_scan(n, &spec, 1.0, 10_000, 501, None)?;
        cs.push((n, min, c));
    }
    let c_max = cs.iter().map(|c| c.2).fold(0.0, f64::max);
    // one C covers every N, and C_N must not grow with N
    let ok = cs.iter().all(|&(n, min, _)| min >= -c_max * n.ln().powi(2)) && cs[2].2 <= cs[0].2;
    parts.push((ok, format!("(a) C_N = {:?}", cs.iter().map(|c| format!("{:.3}", c.2)).collect::<Vec<_>>())));
    // (b) moment growth constants
    let spec = PotentialSpec::bump(0.25)?;
    let mut consts = Vec::new();
    for n in [4.0, 8.0, 16.0] {
        let r = mc::moment_route(n, 4.0 * n, &spec, 1.0, &[2, 4, 8], 10_000, 502, None)?;
        consts.push(r.constants.iter().cloned().fold(0.0, f64::max));
    }
    let hi = consts.iter().cloned().fold(0.0, f64::max);
    let lo = consts.iter().cloned().fold(f64::INFINITY, f64::min);
    parts.push((hi <= 2.0 * lo, format!("(b) max_p C_p(N) = {:?}", consts.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>())));
    // (c) tail exponent with 10^6 samples
    let (n, eps) = (16.0, 0.25);
    let spec = PotentialSpec::bump(eps)?;
    let table = SpectralTable::cutoff(n, CutoffProfile::Gaussian, interactions::default_grid(n, eps), 1.0)?;
    let inter = Interactions::new(&table, &spec)?;
    let vals = mc::par_replicas(1_000_000, None, |r| inter.v_eps(&table.sample(&StreamKey::new(503, "X", r))).value);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let tc = mc::tail_curve(&vals, &mc::default_thresholds(min, 40))?;
    parts.push((tc.local_exponent > 5.0, format!("(c) local exponent {:.2} at t = {:.3}", tc.local_exponent, tc.t_resolved)));
    Ok(all(parts))
}

fn c6_malliavin() -> Result<Verdict> {
    let mut parts = Vec::new();
    let (n, l) = (8.0, 32);
    let table = Arc::new(SpectralTable::cutoff(n, CutoffProfile::Compact, l, 1.0)?);
    let spec = PotentialSpec::bump(0.2)?;
    let inter = Interactions::new(&table, &spec)?;
    let x = Point::new(0.125, -0.25);
    let y = Point::new(-0.3125, 0.1875);
    // L_x acting on the field itself
    let lx = DerivativeOp::l(x, table.clone())?;
    let lbx = DerivativeOp::l_bar(x, table.clone())?;
    let g = table.covariance_at(x.sub(&y));
    let exact = malliavin::apply(&lx, &Functional::phi_bar(y))? == Functional::scalar(g)
        && malliavin::apply(&lbx, &Functional::phi(y))? == Functional::scalar(g)
        && malliavin::apply(&lx, &Functional::phi(y))? == Functional::scalar(0.0)
        && malliavin::apply(&lbx, &Functional::phi_bar(y))? == Functional::scalar(0.0);
    parts.push((exact, "L phi exact".to_string()));
    // integration by parts on three functionals
    for (name, f) in [
        ("phi_bar", Functional::phi_bar(y)),
        ("W", Functional::interaction(InteractionKind::WEpsN)),
        ("phi_bar e^-W/2", Functional::Product(vec![Functional::phi_bar(y), Functional::boltzmann(InteractionKind::WEpsN, 0.5)])),
    ] {
        let r = malliavin::ibp_check(&lx, &f, &inter, 20_000, 601, None)?;
        parts.push((r.passes(3.0), format!("IBP {name} z={:.2}", r.diff.z_score(C64::new(0.0, 0.0)))));
    }
    // two estimators of the weighted correlation
    let xs = [4usize, 8];
    let xd = [10usize, 3];
    let pt = |i: [usize; 2]| Point::new(i[0] as f64 / l as f64, i[1] as f64 / l as f64);
    let r = malliavin::correlation_by_derivatives(table.clone(), &inter, Some(InteractionKind::WEpsN), 0.5, &[pt(xs)], &[pt(xd)], 20_000, 602, None)?;
    let z = r.diff.z_score(C64::new(0.0, 0.0));
    parts.push((z < 3.0, format!("representation z={z:.2}")));
    // first order: intercept at small couplings, O(g²) residuals at the larger ones
    let small = malliavin::perturbative_fit(table.clone(), &inter, &[0.005, 0.01, 0.02], xs, xd, 400_000, 603, None)?;
    let zf = (small.fitted_slope - small.oracle_slope).abs() / small.fitted_slope_stderr;
    parts.push((zf < 3.0, format!("first order {:.4} ± {:.4} vs oracle {:.4}", small.fitted_slope, small.fitted_slope_stderr, small.oracle_slope)));
    let big = malliavin::perturbative_fit(table.clone(), &inter, &[0.05, 0.1, 0.2], xs, xd, 100_000, 604, None)?;
    let fine = big.residuals.iter().all(|r| r.is_finite() && *r <= 2.0 * big.residuals[2]);
    parts.push((fine, format!("|est - g b|/g^2 = {:?}", big.residuals.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>())));
    Ok(all(parts))
}

fn c7_quantum_exactness() -> Result<Verdict> {
    let modes = vec![[0, 0], [1, 0], [-1, 0]];
    let (nu, kappa) = (0.5, 1.0);
    let b = FockBasis::with_caps(modes.clone(), 90, bosegas::default_caps(&modes, nu, kappa, 90, 36.0))?;
    let zero = CountertermSet::from_parts(0.0, 0.0, 0.0);
    let h0 = bosegas::free_hamiltonian(&b, nu, kappa)?;
    let (h, _) = bosegas::build_hamiltonian(&b, nu, kappa, None, &zero)?;
    let g0 = GibbsState::new(&h0);
    let g = GibbsState::new(&h);
    let z = bosegas::partition_functions(&g, &g0).z_rel;
    let g1 = bosegas::reduced_density(&b, &g0, 1)?;
    let mut spec_err = 0.0f64;
    for (i, &k) in modes.iter().enumerate() {
        let lam = torus::eigenvalue(k, kappa)?;
        let occ = 1.0 / (nu * lam).exp_m1();
        spec_err = spec_err.max((g1.matrix[(i, i)] - occ).abs());
        for j in 0..modes.len() {
            if j != i {
                spec_err = spec_err.max(g1.matrix[(i, j)].abs());
            }
        }
    }
    let g2 = bosegas::reduced_density(&b, &g0, 2)?;
    let p2 = bosegas::symmetrizer(3, 2);
    let wick = &p2 * g1.matrix.kronecker(&g1.matrix) * &p2 * 2.0;
    let wick_err = (&g2.matrix - wick).abs().max();
    let id = ReducedDensity::identity(3);
    let gi1 = bosegas::reduced_density(&b, &g, 1)?;
    let gi2 = bosegas::reduced_density(&b, &g, 2)?;
    let gam = vec![id.clone(), gi1, gi2];
    let fr = vec![id, g1.clone(), g2.clone()];
    let hat = bosegas::wick_ordered_density(&gam, &fr, 1)?.matrix.abs().max().max(bosegas::wick_ordered_density(&gam, &fr, 2)?.matrix.abs().max());
    // Peierls-Bogoliubov at nonzero coupling
    let spec = PotentialSpec::bump(0.3)?;
    let ct = bosegas::finite_mode_counterterms(&modes, nu, kappa, &spec)?;
    let bi = FockBasis::new(modes.clone(), 12)?;
    let (hi, _) = bosegas::build_hamiltonian(&bi, nu, kappa, Some(&spec), &ct)?;
    let hi0 = bosegas::free_hamiltonian(&bi, nu, kappa)?;
    let gi0 = GibbsState::new(&hi0);
    let zi = bosegas::partition_functions(&GibbsState::new(&hi), &gi0).z_rel;
    let floor = bosegas::peierls_bogoliubov_floor(&hi, &hi0, &gi0);
    Ok(all(vec![
        (spec_err < 1e-10, format!("Gamma1 spectrum err {spec_err:.1e}")),
        (wick_err < 1e-10, format!("Gamma2 Wick err {wick_err:.1e}")),
        ((z - 1.0).abs() < 1e-10, format!("|Z-1| {:.1e}", (z - 1.0).abs())),
        (hat < 1e-10, format!("max |hat Gamma_p| {hat:.1e}")),
        (zi >= floor - 1e-10, format!("Z {zi:.6} >= PB floor {floor:.6}")),
    ]))
}

fn c8_toy() -> Result<Verdict> {
    let spec = PotentialSpec::bump(0.3)?;
    let modes = [[0, 0], [1, 0], [-1, 0]];
    let r = bosegas::toy_convergence(&modes, 1.0, &spec, &[0.5, 0.25, 0.125, 0.0625], bosegas::TOY_N_SCALE, bosegas::TOY_BUDGET)?;
    let gaps: Vec<String> = r.points.iter().map(|p| format!("{:.4}", p.relative_gap)).collect();
    let last = r.points.last().map_or(f64::NAN, |p| p.relative_gap);
    Ok(all(vec![
        (r.gap_decreasing, format!("relative gaps {gaps:?}")),
        (r.gamma_gap_decreasing, format!("gamma gaps {:?}", r.points.iter().map(|p| format!("{:.4}", p.gamma_gap)).collect::<Vec<_>>())),
        (last < 0.05, format!("final {last:.4}")),
        (r.stable, "n_max doubling stable".to_string()),
    ]))
}

fn c9_bridges() -> Result<Verdict> {
    let mut parts = Vec::new();
    // (iii) on a 10-point grid
    let mut worst = f64::NEG_INFINITY;
    for i in 0..10 {
        let s = 1e-3 * 3f64.powi(i);
        let (d, b) = bridges::heat_kernel_l1_check(s, 2.0 * s)?;
        worst = worst.max(d - b);
    }
    parts.push((worst <= 0.0, format!("(iii) max(dist - 2 ln 2) = {worst:.3}")));
    // (i) one C on a fitting grid, checked on held-out durations
    let c = bridges::fit_mass_bound(&[1e-3, 1e-2, 0.1, 1.0, 10.0])?;
    let mut held = true;
    for t in [3e-3, 3e-2, 0.3, 3.0, 7.0] {
        held &= bridges::max_mass(t)? <= c * (1.0 + 1.0 / t);
    }
    parts.push((held, format!("(i) C = {c:.4}")));
    // (ii) fitted constants, held-out grid within 2C
    let fit = bridges::fit_moment_bound(&[0.1, 0.5, 2.0], &[0.1, 0.3, 0.6], &[0.0, 0.2, 0.45], 5000, 901, None)?;
    let held = bridges::fit_moment_bound(&[0.2, 1.0, 5.0], &[0.2, 0.5], &[0.1, 0.3], 5000, 902, None)?;
    let ok2 = held.c_second <= 2.0 * fit.c_second && held.c_first <= 2.0 * fit.c_first && fit.c_second.is_finite() && fit.c_first.is_finite();
    parts.push((
        ok2,
        format!("(ii) C2 = {:.3} (held-out {:.3}), C1 = {:.3} (held-out {:.3})", fit.c_second, held.c_second, fit.c_first, held.c_first),
    ));
    // W-measure marginal at an interior time
    let (xt, x) = (Point::new(0.1, -0.2), Point::new(-0.15, 0.05));
    let (tau_t, tau, t1) = (0.0, 0.3, 0.1);
    let f = |y: Point| (2.0 * std::f64::consts::PI * y.x[0]).cos() + 0.5 * (2.0 * std::f64::consts::PI * y.x[1]).sin();
    let exact = bridges::marginal_by_quadrature(xt, x, tau_t, tau, t1, &f)?;
    let (est, _) = bridges::weighted_estimate(xt, x, &[tau_t, t1, tau], 100_000, 903, "marginal", bridges::BridgeSampler::Mixture, None, &|p| f(p.positions[1]))?;
    let z = est.z_score(exact);
    parts.push((z < 4.0, format!("marginal {:.5} ± {:.5} vs {exact:.5}", est.mean, est.stderr)));
    Ok(all(parts))
}

fn quick(command: Command) -> RunConfig {
    let mut c = RunConfig { seed: Some(1001), ..Default::default() };
    match command {
        Command::Green => {}
        Command::Sample => {
            c.n = Some(8.0);
            c.samples = Some(2000);
        }
        Command::Counterterms => {
            c.eps_list = Some(vec![0.2, 0.1, 0.05]);
            c.nu_list = Some(vec![0.1, 0.05]);
        }
        Command::L2Scan => {
            c.n = Some(32.0);
            c.eps_list = Some(vec![0.2, 0.1]);
            c.n_list = Some(vec![4.0, 8.0]);
            c.eps = Some(0.2);
        }
        Command::Nelson => {
            c.n = Some(8.0);
            c.eps = Some(0.25);
            c.samples = Some(5000);
        }
        Command::Ibp => {
            c.n = Some(4.0);
            c.grid = Some(16);
            c.samples = Some(2000);
        }
        Command::Bosegas => {
            c.modes = Some(vec![[0, 0]]);
            c.nu_list = Some(vec![0.5, 0.25]);
        }
        Command::Bridges => c.samples = Some(200),
    }
    c
}

fn csv_body(path: &std::path::Path) -> Result<Vec<u8>> {
    Ok(std::fs::read(path)?)
}

fn c10_determinism() -> Result<Verdict> {
    let mut parts = Vec::new();
    let commands = [
        Command::Green,
        Command::Sample,
        Command::Counterterms,
        Command::L2Scan,
        Command::Nelson,
        Command::Ibp,
        Command::Bosegas,
        Command::Bridges,
    ];
    for cmd in commands {
        let a = tempfile::tempdir()?;
        let b = tempfile::tempdir()?;
        let mut ca = quick(cmd);
        ca.out = Some(a.path().into());
        let mut cb = ca.clone();
        cb.out = Some(b.path().into());
        let ma = runner::run(cmd, &ca)?;
        let mb = runner::run(cmd, &cb)?;
        let same = csv_body(&a.path().join(format!("{}.csv", cmd.name())))? == csv_body(&b.path().join(format!("{}.csv", cmd.name())))?;
        parts.push((same && ma.config_hash == mb.config_hash, cmd.name().to_string()));
    }
    // the binary itself, including a usage error
    let exe = env!("CARGO_BIN_EXE_phi4lab");
    let d = tempfile::tempdir()?;
    let mut bodies = Vec::new();
    for sub in ["r1", "r2"] {
        let out = d.path().join(sub);
        let st = std::process::Command::new(exe).args(["green", "--seed", "5", "--out"]).arg(&out).output()?;
        bodies.push((st.status.code(), csv_body(&out.join("green.csv"))?));
    }
    parts.push((bodies[0] == bodies[1] && bodies[0].0 == Some(0), "binary green".into()));
    let bad = std::process::Command::new(exe).args(["green", "--no-such-flag"]).output()?;
    parts.push((bad.status.code() == Some(2), format!("unknown flag exit {:?}", bad.status.code())));
    Ok(all(parts))
}

type Criterion = (u32, &'static str, fn() -> Result<Verdict>);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "Wick oracle equivalence", c1_wick_oracle),
        (2, "covariance reproduction", c2_covariance),
        (3, "renormalization slopes", c3_slopes),
        (4, "L2 convergence exponents", c4_l2_exponents),
        (5, "Nelson package", c5_nelson),
        (6, "Malliavin identities", c6_malliavin),
        (7, "quantum exactness", c7_quantum_exactness),
        (8, "toy convergence", c8_toy),
        (9, "heat kernel and bridges", c9_bridges),
        (10, "determinism", c10_determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = f().unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {id:>2} {} {name} ({secs:.1}s): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
