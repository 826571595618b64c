//! Experiment runner behind the `phi4lab` binary: configuration merging,
//! per-command drivers, CSV tables and JSON manifests.
//!
//! CSV bodies depend only on the resolved configuration, so two runs with the
//! same config produce byte-identical files; wall time goes to the manifest.

use crate::bosegas;
use crate::bridges;
use crate::gff::{SpectralTable, StreamKey};
use crate::interactions::{self, InteractionKind, Interactions, ModeCutoff, PotentialSpec};
use crate::malliavin::{self, DerivativeOp, Functional};
use crate::mc::{self, fit_slope, MCEstimate, McSetup};
use crate::torus::{CutoffProfile, GreenEvaluator};
use crate::wick::{self, PairingIntegrand, PairingSetup};
use crate::{invalid, Error, Point, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Environment variable consulted for the default seed.
pub const SEED_ENV: &str = "PHI4LAB_SEED";
pub const DEFAULT_SEED: u64 = 20240601;

/// Subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Green,
    Sample,
    Counterterms,
    L2Scan,
    Nelson,
    Ibp,
    Bosegas,
    Bridges,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Green => "green",
            Command::Sample => "sample",
            Command::Counterterms => "counterterms",
            Command::L2Scan => "l2-scan",
            Command::Nelson => "nelson",
            Command::Ibp => "ibp",
            Command::Bosegas => "bosegas",
            Command::Bridges => "bridges",
        }
    }
}

/// Everything a run depends on. Unset fields take per-command defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kappa: Option<f64>,
    pub eps: Option<f64>,
    pub nu: Option<f64>,
    pub n: Option<f64>,
    pub m: Option<f64>,
    pub p: Option<Vec<u32>>,
    pub grid: Option<usize>,
    pub modes: Option<Vec<[i64; 2]>>,
    pub n_max: Option<usize>,
    pub eps_list: Option<Vec<f64>>,
    pub n_list: Option<Vec<f64>>,
    pub nu_list: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub samples: Option<u64>,
    pub batches: Option<usize>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fields set in `flags` override those set here.
    pub fn merged(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(kappa, eps, nu, n, m, p, grid, modes, n_max, eps_list, n_list, nu_list, seed, samples, batches, workers, out);
        self
    }

    /// Seed and where it came from.
    pub fn resolve_seed(&self) -> Result<(u64, &'static str)> {
        if let Some(s) = self.seed {
            return Ok((s, "config"));
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map(|s| (s, "env"))
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer"))),
            Err(_) => Ok((DEFAULT_SEED, "default")),
        }
    }

    /// sha256 of the canonical JSON of (command, config with resolved seed).
    pub fn hash(&self, command: Command) -> Result<String> {
        let (seed, _) = self.resolve_seed()?;
        let mut c = self.clone();
        c.seed = Some(seed);
        c.out = None;
        let body = serde_json::to_string(&(command, &c)).map_err(|e| Error::Config(e.to_string()))?;
        let d = Sha256::digest(body.as_bytes());
        Ok(d.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// A CSV table: header plus string cells (floats in shortest round-trip form).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip float text.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Command output before it is written.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub table: Table,
    pub results: serde_json::Map<String, serde_json::Value>,
    pub assertions: Vec<Assertion>,
}

impl Outcome {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.assertions.push(Assertion {
            name: name.into(),
            passed,
            detail,
        });
    }

    fn result<T: Serialize>(&mut self, key: &str, v: T) {
        self.results.insert(key.into(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub seed_source: String,
    pub config: RunConfig,
    pub wall_time_s: f64,
    pub csv: String,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
    pub results: serde_json::Map<String, serde_json::Value>,
}

/// Write the CSV: '#' metadata lines, then header and rows.
pub fn write_csv(path: &Path, command: Command, hash: &str, table: &Table) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(format!("# command: {}\n# config_sha256: {hash}\n# version: {}\n", command.name(), env!("CARGO_PKG_VERSION")).as_bytes());
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&table.header)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<()> {
    let pos = |name: &str, v: Option<f64>| match v {
        Some(x) if !(x > 0.0) || !x.is_finite() => Err(Error::Config(format!("{name} must be positive and finite, got {x}"))),
        _ => Ok(()),
    };
    pos("kappa", cfg.kappa)?;
    pos("eps", cfg.eps)?;
    pos("nu", cfg.nu)?;
    pos("n", cfg.n)?;
    pos("m", cfg.m)?;
    for (name, l) in [("eps_list", &cfg.eps_list), ("n_list", &cfg.n_list), ("nu_list", &cfg.nu_list)] {
        if let Some(l) = l {
            if l.len() < 2 {
                return Err(Error::Config(format!("{name} needs at least two entries")));
            }
            for &x in l {
                pos(name, Some(x))?;
            }
        }
    }
    if cfg.batches == Some(0) {
        return Err(Error::Config("batches must be at least 1".into()));
    }
    if cfg.p.as_ref().is_some_and(|p| p.is_empty() || p.contains(&0)) {
        return Err(Error::Config("p must list positive moment orders".into()));
    }
    if cfg.samples == Some(0) {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    if cfg.eps.is_some_and(|e| e > 0.5) {
        return Err(Error::Config("eps must be at most 0.5 so the potential fits the torus".into()));
    }
    if let (Some(n), Some(m)) = (cfg.n, cfg.m) {
        if m < n {
            return Err(Error::Config("m must be at least n".into()));
        }
    }
    Ok(())
}

/// Run one command, write `<out>/<command>.csv` and `<out>/<command>.manifest.json`.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunManifest> {
    validate(cfg)?;
    let (seed, source) = cfg.resolve_seed()?;
    let hash = cfg.hash(command)?;
    let start = std::time::Instant::now();
    let outcome = execute(command, cfg, seed)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("phi4lab-out"));
    std::fs::create_dir_all(&out)?;
    let csv_path = out.join(format!("{}.csv", command.name()));
    write_csv(&csv_path, command, &hash, &outcome.table)?;
    let manifest = RunManifest {
        command: command.name().into(),
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        seed_source: source.into(),
        config: cfg.clone(),
        wall_time_s: start.elapsed().as_secs_f64(),
        csv: csv_path.display().to_string(),
        passed: outcome.passed(),
        assertions: outcome.assertions,
        results: outcome.results,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join(format!("{}.manifest.json", command.name())), text)?;
    Ok(manifest)
}

/// Compute the outcome without touching the file system.
pub fn execute(command: Command, cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    match command {
        Command::Green => green(cfg),
        Command::Sample => sample(cfg, seed),
        Command::Counterterms => counterterms(cfg),
        Command::L2Scan => l2_scan(cfg),
        Command::Nelson => nelson(cfg, seed),
        Command::Ibp => ibp(cfg, seed),
        Command::Bosegas => bosegas_cmd(cfg),
        Command::Bridges => bridges_cmd(cfg, seed),
    }
}

fn green(cfg: &RunConfig) -> Result<Outcome> {
    let kappa = cfg.kappa.unwrap_or(1.0);
    let nu = cfg.nu.unwrap_or(0.1);
    let g = GreenEvaluator::<f64>::new(kappa)?;
    let mut o = Outcome {
        table: Table::new(&["r", "green", "green_regular", "log_asymptote", "line_sum", "green_quantum"]),
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for r in [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5] {
        let p = Point::new(r, 0.1 * r);
        let gv = g.green(p)?;
        let line = g.green_line_sum(p, 4000);
        worst = worst.max((gv - line).abs());
        let asym = -p.norm().ln() / std::f64::consts::PI;
        o.table.push(vec![fmt(r), fmt(gv), fmt(g.green_regular(p)), fmt(asym), fmt(line), fmt(g.green_quantum(p, nu)?)]);
    }
    o.result("max_line_sum_deviation", worst);
    o.result("green_regular_origin", g.green_regular(Point::origin()));
    o.check("ewald_matches_line_sum", worst < 1e-8, format!("max |G − line sum| = {worst:e}"));
    Ok(o)
}

fn sample(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let kappa = cfg.kappa.unwrap_or(1.0);
    let n = cfg.n.unwrap_or(16.0);
    let samples = cfg.samples.unwrap_or(20_000);
    let l = cfg.grid.unwrap_or(4 * n as usize).next_power_of_two();
    let table = SpectralTable::cutoff(n, CutoffProfile::Gaussian, l, kappa)?;
    covariance_check(&table, 8, samples, seed, cfg.workers)
}

/// Empirical E[φ(x)φ̄(y)] at random grid pairs against G_N(x − y).
pub fn covariance_check(table: &SpectralTable, pairs: usize, samples: u64, seed: u64, workers: Option<usize>) -> Result<Outcome> {
    use rand::Rng;
    let l = table.l;
    let mut rng = StreamKey::new(seed, "pairs", 0).rng();
    let pts: Vec<(usize, usize)> = (0..pairs).map(|_| (rng.random_range(0..l * l), rng.random_range(0..l * l))).collect();
    let prods = mc::par_replicas(samples, workers, |r| {
        let f = table.sample(&StreamKey::new(seed, "X", r));
        let g = f.grid();
        pts.iter().map(|&(a, b)| (g[a] * g[b].conj()).re).collect::<Vec<f64>>()
    });
    let mut o = Outcome {
        table: Table::new(&["pair", "dx1", "dx2", "empirical", "stderr", "exact", "z"]),
        ..Default::default()
    };
    let mut zmax = 0.0f64;
    for (i, &(a, b)) in pts.iter().enumerate() {
        let col: Vec<f64> = prods.iter().map(|v| v[i]).collect();
        let e = MCEstimate::from_samples(&col);
        let d = [((a / l) as f64 - (b / l) as f64) / l as f64, ((a % l) as f64 - (b % l) as f64) / l as f64];
        let exact = table.covariance_at(Point::new(d[0], d[1]));
        let z = e.z_score(exact);
        zmax = zmax.max(z);
        o.table.push(vec![fmt(i as f64), fmt(d[0]), fmt(d[1]), fmt(e.mean), fmt(e.stderr), fmt(exact), fmt(z)]);
    }
    o.result("max_z", zmax);
    o.check("covariance_within_4_sigma", zmax < 4.0, format!("max z = {zmax:.3}"));
    Ok(o)
}

/// Slopes of τ^ε against ln(1/ε), E^ε against ln(1/ε)² (leading coefficient
/// of a quadratic fit), ϱ_ν against ln(1/ν).
pub struct SlopeReport {
    pub tau: Vec<f64>,
    pub energy: Vec<f64>,
    pub rho: Vec<f64>,
    pub tau_slope: f64,
    pub energy_slope: f64,
    pub rho_slope: f64,
}

pub fn renormalization_slopes(eps: &[f64], nus: &[f64], kappa: f64) -> Result<SlopeReport> {
    let mut tau = Vec::new();
    let mut energy = Vec::new();
    for &e in eps {
        let (t, en) = interactions::tau_and_energy(&PotentialSpec::bump(e)?, kappa)?;
        tau.push(t);
        energy.push(en);
    }
    let rho: Vec<f64> = nus.iter().map(|&nu| interactions::rho_nu(nu, kappa, &ModeCutoff::Full)).collect::<Result<_>>()?;
    let le: Vec<f64> = eps.iter().map(|e| (1.0 / e).ln()).collect();
    let ln: Vec<f64> = nus.iter().map(|n| (1.0 / n).ln()).collect();
    Ok(SlopeReport {
        tau_slope: fit_slope(&le, &tau),
        energy_slope: quadratic_leading(&le, &energy)?,
        rho_slope: fit_slope(&ln, &rho),
        tau,
        energy,
        rho,
    })
}

/// Leading coefficient a of the least-squares fit y = a x² + b x + c.
/// E^ε carries a large ln(1/ε) term next to the ln(1/ε)² one, so a plain
/// regression on x² would mix the two.
pub fn quadratic_leading(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 3 || x.len() != y.len() {
        return Err(invalid("quadratic fit needs at least three points"));
    }
    let a = nalgebra::DMatrix::from_fn(x.len(), 3, |i, j| x[i].powi(2 - j as i32));
    let b = nalgebra::DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-14).map_err(invalid)?;
    Ok(sol[0])
}

pub const DEFAULT_EPS_SCAN: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
pub const DEFAULT_NU_SCAN: [f64; 4] = [0.1, 0.05, 0.02, 0.01];

fn counterterms(cfg: &RunConfig) -> Result<Outcome> {
    let kappa = cfg.kappa.unwrap_or(1.0);
    let eps = cfg.eps_list.clone().unwrap_or(DEFAULT_EPS_SCAN.to_vec());
    let nus = cfg.nu_list.clone().unwrap_or(DEFAULT_NU_SCAN.to_vec());
    let s = renormalization_slopes(&eps, &nus, kappa)?;
    let mut o = Outcome {
        table: Table::new(&["quantity", "parameter", "value"]),
        ..Default::default()
    };
    for (e, (t, en)) in eps.iter().zip(s.tau.iter().zip(&s.energy)) {
        o.table.push(vec!["tau_eps".into(), fmt(*e), fmt(*t)]);
        o.table.push(vec!["E_eps".into(), fmt(*e), fmt(*en)]);
    }
    for (nu, r) in nus.iter().zip(&s.rho) {
        o.table.push(vec!["rho_nu".into(), fmt(*nu), fmt(*r)]);
    }
    o.result("tau_slope", s.tau_slope);
    o.result("energy_slope", s.energy_slope);
    o.result("rho_slope", s.rho_slope);
    o.check("tau_slope_window", (0.28..=0.36).contains(&s.tau_slope), format!("{:.4} in [0.28, 0.36]", s.tau_slope));
    o.check("energy_slope_window", (0.04..=0.07).contains(&s.energy_slope), format!("{:.4} in [0.04, 0.07]", s.energy_slope));
    o.check("rho_slope_window", (0.14..=0.18).contains(&s.rho_slope), format!("{:.4} in [0.14, 0.18]", s.rho_slope));
    Ok(o)
}

/// ‖V^ε_N − W^ε_N‖_{L²} on an ε list at fixed N, by exact pairing sums.
pub fn veps_weps_distances(n: f64, eps: &[f64], kappa: f64, l: usize) -> Result<Vec<f64>> {
    eps.iter()
        .map(|&e| {
            let spec = PotentialSpec::bump(e)?;
            let (tau, energy) = interactions::tau_and_energy(&spec, kappa)?;
            let setup = PairingSetup { n, kappa, profile: CutoffProfile::Gaussian, spec, tau, energy };
            let (t, i) = setup.interactions(l)?;
            Ok(wick::pairing_grid_value(PairingIntegrand::VepsMinusWepsSquare, &i, &t.var).max(0.0).sqrt())
        })
        .collect()
}

/// ‖V^ε_{2N} − V^ε_N‖_{L²} along an N list at fixed ε.
pub fn cauchy_distances(ns: &[f64], eps: f64, kappa: f64) -> Result<Vec<f64>> {
    let spec = PotentialSpec::bump(eps)?;
    let (tau, energy) = interactions::tau_and_energy(&spec, kappa)?;
    ns.iter()
        .map(|&n| {
            let setup = PairingSetup { n, kappa, profile: CutoffProfile::Gaussian, spec, tau, energy };
            let l = interactions::default_grid(2.0 * n, eps);
            wick::cauchy_distance(&setup, 2.0 * n, l)
        })
        .collect()
}

pub const DEFAULT_L2_EPS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
pub const DEFAULT_L2_N: [f64; 4] = [8.0, 16.0, 32.0, 64.0];

fn l2_scan(cfg: &RunConfig) -> Result<Outcome> {
    let kappa = cfg.kappa.unwrap_or(1.0);
    let n = cfg.n.unwrap_or(256.0);
    let eps = cfg.eps_list.clone().unwrap_or(DEFAULT_L2_EPS.to_vec());
    let ns = cfg.n_list.clone().unwrap_or(DEFAULT_L2_N.to_vec());
    let eps0 = cfg.eps.unwrap_or(0.1);
    let l = cfg.grid.unwrap_or(4 * n as usize).next_power_of_two();
    let dv = veps_weps_distances(n, &eps, kappa, l)?;
    let dn = cauchy_distances(&ns, eps0, kappa)?;
    let mut o = Outcome {
        table: Table::new(&["scan", "parameter", "l2_distance"]),
        ..Default::default()
    };
    for (e, d) in eps.iter().zip(&dv) {
        o.table.push(vec!["veps_minus_weps".into(), fmt(*e), fmt(*d)]);
    }
    for (nn, d) in ns.iter().zip(&dn) {
        o.table.push(vec!["veps_2n_minus_veps_n".into(), fmt(*nn), fmt(*d)]);
    }
    let le: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let s_eps = fit_slope(&le, &dv.iter().map(|d| d.ln()).collect::<Vec<_>>());
    let ln: Vec<f64> = ns.iter().map(|e| e.ln()).collect();
    let s_n = fit_slope(&ln, &dn.iter().map(|d| d.ln()).collect::<Vec<_>>());
    o.result("eps_exponent", s_eps);
    o.result("n_exponent", s_n);
    o.check("eps_exponent_window", (0.5..=1.2).contains(&s_eps), format!("{s_eps:.3} in [0.5, 1.2]"));
    o.check("n_exponent_window", s_n <= -0.6, format!("{s_n:.3} <= -0.6"));
    Ok(o)
}

fn nelson(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let kappa = cfg.kappa.unwrap_or(1.0);
    let n = cfg.n.unwrap_or(32.0);
    let eps = cfg.eps.unwrap_or(0.1);
    let samples = cfg.samples.unwrap_or(100_000);
    let spec = PotentialSpec::bump(eps)?;
    let l = cfg.grid.unwrap_or_else(|| interactions::default_grid(n, eps));
    let table = SpectralTable::cutoff(n, CutoffProfile::Gaussian, l, kappa)?;
    let inter = Interactions::new(&table, &spec)?;
    let mut setup = McSetup::new(table, inter, seed);
    setup.workers = cfg.workers;
    let vals = mc::par_replicas(samples, cfg.workers, |r| setup.inter.v_eps(&setup.field(r)).value);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let th = mc::default_thresholds(min, 40);
    let tc = mc::tail_curve(&vals, &th)?;
    let mut o = Outcome {
        table: Table::new(&["threshold", "exceedances", "probability", "lower", "upper"]),
        ..Default::default()
    };
    for i in 0..th.len() {
        o.table.push(vec![fmt(th[i]), tc.exceedances[i].to_string(), fmt(tc.prob[i]), fmt(tc.lower[i]), fmt(tc.upper[i])]);
    }
    o.result("min_v", min);
    o.result("lower_bound_constant", (-min).max(0.0) / n.ln().powi(2));
    o.result("local_exponent", tc.local_exponent);
    o.result("t_resolved", tc.t_resolved);
    o.result("double_exp_slope", tc.double_exp_slope);
    let boltz: Vec<f64> = vals.iter().map(|v| (-v).exp()).collect();
    let (zeta, zeta_se) = mc::batch_means(&boltz, cfg.batches.unwrap_or(50));
    o.result("zeta", zeta);
    o.result("zeta_batch_stderr", zeta_se);
    // moment route for V^ε_M − V^ε_N only on request
    if let Some(ps) = &cfg.p {
        let m = cfg.m.unwrap_or(4.0 * n);
        let r = mc::moment_route(n, m, &spec, kappa, ps, samples.min(10_000), seed, cfg.workers)?;
        o.result("moment_route", &r);
    }
    o.check(
        "tail_exponent_above_5",
        tc.local_exponent > 5.0,
        format!("local exponent {:.3} at t = {:.3}", tc.local_exponent, tc.t_resolved),
    );
    Ok(o)
}

fn ibp(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let kappa = cfg.kappa.unwrap_or(1.0);
    let n = cfg.n.unwrap_or(8.0);
    let eps = cfg.eps.unwrap_or(0.2);
    let samples = cfg.samples.unwrap_or(20_000);
    let spec = PotentialSpec::bump(eps)?;
    let l = cfg.grid.unwrap_or(32).next_power_of_two();
    let table = Arc::new(SpectralTable::cutoff(n, CutoffProfile::Compact, l, kappa)?);
    let inter = Interactions::new(&table, &spec)?;
    let x = Point::new(0.125, -0.25);
    let y = Point::new(-0.3125, 0.1875);
    let op = DerivativeOp::l(x, table.clone())?;
    let cases: Vec<(&str, Functional)> = vec![
        ("phi_bar", Functional::phi_bar(y)),
        ("W_eps", Functional::interaction(InteractionKind::WEpsN)),
        ("phi_bar_times_boltzmann", Functional::Product(vec![Functional::phi_bar(y), Functional::boltzmann(InteractionKind::WEpsN, 0.5)])),
    ];
    let mut o = Outcome {
        table: Table::new(&["functional", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "diff_re", "diff_stderr_re", "diff_im", "diff_stderr_im"]),
        ..Default::default()
    };
    for (name, f) in cases {
        let r = malliavin::ibp_check(&op, &f, &inter, samples, seed, cfg.workers)?;
        o.table.push(vec![
            name.into(),
            fmt(r.lhs.re.mean),
            fmt(r.lhs.im.mean),
            fmt(r.rhs.re.mean),
            fmt(r.rhs.im.mean),
            fmt(r.diff.re.mean),
            fmt(r.diff.re.stderr),
            fmt(r.diff.im.mean),
            fmt(r.diff.im.stderr),
        ]);
        o.check(&format!("ibp_{name}"), r.passes(3.0), format!("diff {:.3e} ± {:.3e}", r.diff.re.mean, r.diff.re.stderr));
    }
    Ok(o)
}

fn bosegas_cmd(cfg: &RunConfig) -> Result<Outcome> {
    let kappa = cfg.kappa.unwrap_or(1.0);
    let eps = cfg.eps.unwrap_or(0.3);
    let modes = cfg.modes.clone().unwrap_or(vec![[0, 0], [1, 0], [-1, 0]]);
    let nus = cfg.nu_list.clone().unwrap_or(vec![0.5, 0.25, 0.125, 0.0625]);
    let n_scale = match cfg.n_max {
        // n_max given for the largest ν; scale it as 1/ν
        Some(n) => n as f64 * nus[0],
        None => bosegas::TOY_N_SCALE,
    };
    let spec = PotentialSpec::bump(eps)?;
    let r = bosegas::toy_convergence(&modes, kappa, &spec, &nus, n_scale, bosegas::TOY_BUDGET)?;
    let mut o = Outcome {
        table: Table::new(&["nu", "n_max", "dim", "z_rel", "z_rel_doubled", "zeta_fm", "gap", "relative_gap", "gamma_gap", "transfers_dropped", "cap_drops"]),
        ..Default::default()
    };
    for p in &r.points {
        o.table.push(vec![
            fmt(p.nu),
            p.n_max.to_string(),
            p.dim.to_string(),
            fmt(p.z_rel),
            fmt(p.z_rel_doubled),
            fmt(r.zeta_fm),
            fmt(p.gap),
            fmt(p.relative_gap),
            fmt(p.gamma_gap),
            p.drops.transfers_dropped.to_string(),
            p.drops.cap_drops.to_string(),
        ]);
    }
    let last = r.points.last().map_or(f64::NAN, |p| p.relative_gap);
    o.check("partition_gap_decreasing", r.gap_decreasing, "strict decrease of |Z − ζ_fm|".into());
    o.check("gamma_gap_decreasing", r.gamma_gap_decreasing, "strict decrease of ‖νΓ̂₁ − γ̂₁‖".into());
    o.check("n_max_stability", r.stable, "doubling n_max changes Z by < 1e-8".into());
    o.check("final_gap_below_5_percent", last < 0.05, format!("{:.4}", last));
    o.result("report", &r);
    Ok(o)
}

fn bridges_cmd(cfg: &RunConfig, seed: u64) -> Result<Outcome> {
    let samples = cfg.samples.unwrap_or(4000);
    let mut o = Outcome {
        table: Table::new(&["duration", "dt", "separation", "second_moment", "second_stderr", "rhs_second", "first_moment", "first_stderr", "rhs_first"]),
        ..Default::default()
    };
    let fit = bridges::fit_moment_bound(&[0.1, 0.5, 2.0], &[0.1, 0.3, 0.6], &[0.0, 0.2, 0.45], samples, seed, cfg.workers)?;
    for p in &fit.points {
        o.table.push(vec![
            fmt(p.duration),
            fmt(p.dt),
            fmt(p.separation),
            fmt(p.second.mean),
            fmt(p.second.stderr),
            fmt(p.rhs_second),
            fmt(p.first.mean),
            fmt(p.first.stderr),
            fmt(p.rhs_first),
        ]);
    }
    let mut l1_ok = true;
    for i in 0..10 {
        let s = 0.01 * 1.5f64.powi(i);
        let (d, b) = bridges::heat_kernel_l1_check(s, 2.5 * s)?;
        l1_ok &= d <= b;
    }
    let c_mass = bridges::fit_mass_bound(&[0.01, 0.1, 1.0, 10.0])?;
    // W-measure marginal at an interior time against quadrature
    let (xt, x) = (Point::new(0.1, -0.2), Point::new(-0.15, 0.05));
    let f = |y: Point| (2.0 * std::f64::consts::PI * y.x[0]).cos() + 0.5 * (2.0 * std::f64::consts::PI * y.x[1]).sin();
    let exact = bridges::marginal_by_quadrature(xt, x, 0.0, 0.3, 0.1, &f)?;
    let (est, _) = bridges::weighted_estimate(xt, x, &[0.0, 0.1, 0.3], 10 * samples, seed, "marginal", bridges::BridgeSampler::Mixture, cfg.workers, &|p| f(p.positions[1]))?;
    o.result("marginal_exact", exact);
    o.result("marginal_estimate", est);
    o.check("marginal_within_4_sigma", est.z_score(exact) < 4.0, format!("{:.5} ± {:.5} vs {exact:.5}", est.mean, est.stderr));
    o.result("c_second", fit.c_second);
    o.result("c_first", fit.c_first);
    o.result("c_mass", c_mass);
    o.check("heat_kernel_l1_bound", l1_ok, "‖ψ^t − ψ^s‖₁ ≤ 2 ln(t/s) on 10 pairs".into());
    o.check("moment_constants_finite", fit.c_second.is_finite() && fit.c_first.is_finite(), format!("C2 = {:.4}, C1 = {:.4}", fit.c_second, fit.c_first));
    Ok(o)
}

/// Parse `a,b;c,d` into modes.
pub fn parse_modes(s: &str) -> Result<Vec<[i64; 2]>> {
    s.split(';')
        .map(|m| {
            let v: Vec<i64> = m.split(',').map(|t| t.trim().parse::<i64>()).collect::<std::result::Result<_, _>>().map_err(|_| invalid(format!("bad mode '{m}'")))?;
            if v.len() != 2 {
                return Err(invalid(format!("mode '{m}' needs two components")));
            }
            Ok([v[0], v[1]])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_hash_is_stable() {
        let file = RunConfig::from_toml("kappa = 2.0\neps = 0.2\nseed = 7\n").unwrap();
        let flags = RunConfig { eps: Some(0.1), ..Default::default() };
        let c = file.merged(flags);
        assert_eq!(c.kappa, Some(2.0));
        assert_eq!(c.eps, Some(0.1));
        let h1 = c.hash(Command::Green).unwrap();
        assert_eq!(h1, c.clone().hash(Command::Green).unwrap());
        assert_ne!(h1, c.hash(Command::Sample).unwrap());
        assert_eq!(h1.len(), 64);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        for c in [
            RunConfig { eps: Some(-1.0), ..Default::default() },
            RunConfig { eps: Some(0.8), ..Default::default() },
            RunConfig { n: Some(8.0), m: Some(4.0), ..Default::default() },
            RunConfig { samples: Some(0), ..Default::default() },
            RunConfig { nu_list: Some(vec![0.1]), ..Default::default() },
        ] {
            assert!(validate(&c).is_err(), "{c:?}");
        }
    }

    #[test]
    fn modes_parse() {
        assert_eq!(parse_modes("0,0;1,0;-1,0").unwrap(), vec![[0, 0], [1, 0], [-1, 0]]);
        assert!(parse_modes("0").is_err());
    }

    #[test]
    fn csv_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out: Some(dir.path().to_path_buf()), seed: Some(3), ..Default::default() };
        let m = run(Command::Counterterms, &cfg).unwrap();
        assert!(m.passed, "{:?}", m.assertions);
        let a = std::fs::read(dir.path().join("counterterms.csv")).unwrap();
        run(Command::Counterterms, &cfg).unwrap();
        let b = std::fs::read(dir.path().join("counterterms.csv")).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("# command: counterterms\n"));
        assert!(text.lines().nth(3).unwrap().starts_with("quantity,parameter,value"));
    }

    #[test]
    fn quadratic_fit_recovers_leading_term() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|t| 0.05 * t * t + 0.7 * t - 2.0).collect();
        assert!((quadratic_leading(&x, &y).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn float_text_round_trips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789] {
            assert_eq!(fmt(x).parse::<f64>().unwrap(), x);
        }
    }
}
