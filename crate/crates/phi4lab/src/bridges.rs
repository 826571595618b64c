//! Brownian bridges on the torus under the unnormalized W-measure, and the
//! point/path interaction functionals built from them.
//!
//! ψ^t is the heat kernel of Δ/2, so each coordinate of a free path has
//! variance t. The torus kernel factorizes over coordinates and so does the
//! bridge: every coordinate is sampled as an independent circle bridge.

use crate::gff::StreamKey;
use crate::interactions::PotentialSpec;
use crate::mc::{fit_line, par_replicas, MCEstimate};
use crate::torus::{heat_1d_fourier, heat_1d_images, heat_kernel, heat_kernel_l1_distance, T0};
use crate::{invalid, Error, Point, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Proposals allowed per point before the sampler reports a collapse.
pub const MAX_PROPOSALS: u64 = 100_000;

/// Circle heat kernel p_t(s).
pub fn psi_1d(t: f64, s: f64) -> f64 {
    if t <= T0 {
        heat_1d_images(t, s)
    } else {
        heat_1d_fourier(t, s)
    }
}

/// ψ^t(x) on the 2-torus.
pub fn psi(t: f64, x: Point) -> f64 {
    psi_1d(t, x.x[0]) * psi_1d(t, x.x[1])
}

fn wrap(s: f64) -> f64 {
    Point::new(s, 0.0).x[0]
}

/// A discretized bridge path with its W-mass.
#[derive(Clone, Debug)]
pub struct BridgePath {
    pub times: Vec<f64>,
    pub positions: Vec<Point>,
    pub start: Point,
    pub end: Point,
    /// ψ^{τ−τ̃}(x − x̃), the total mass of the W-measure.
    pub weight: f64,
    /// Proposals drawn (both coordinates), for acceptance diagnostics.
    pub proposals: u64,
}

impl BridgePath {
    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Position at a grid time (exact match required).
    pub fn at(&self, t: f64) -> Option<Point> {
        self.times.iter().position(|&s| (s - t).abs() < 1e-12).map(|i| self.positions[i])
    }

    /// Reversed path: the bridge from `end` to `start` on the mirrored time grid.
    pub fn reversed(&self) -> BridgePath {
        let (a, b) = (self.times[0], self.times[self.times.len() - 1]);
        BridgePath {
            times: self.times.iter().rev().map(|&t| a + b - t).collect(),
            positions: self.positions.iter().rev().copied().collect(),
            start: self.end,
            end: self.start,
            weight: self.weight,
            proposals: self.proposals,
        }
    }

    /// Constant path ω ≡ y on [0, r], for tests of the interaction functionals.
    pub fn constant(y: Point, r: f64, steps: usize) -> BridgePath {
        let times: Vec<f64> = (0..=steps).map(|i| r * i as f64 / steps as f64).collect();
        BridgePath {
            positions: vec![y; times.len()],
            times,
            start: y,
            end: y,
            weight: psi(r.max(1e-300), Point::origin()),
            proposals: 0,
        }
    }
}

/// One bridge coordinate at time t given ω(s) = a and ω(τ) = x, by rejection
/// from the circle Gaussian started at a: accept with p_{τ−t}(x − y)/p_{τ−t}(0).
fn step_rejection<R: Rng>(a: f64, x: f64, dt: f64, rest: f64, rng: &mut R, count: &mut u64) -> Result<f64> {
    let top = psi_1d(rest, 0.0);
    let sd = dt.sqrt();
    for _ in 0..MAX_PROPOSALS {
        *count += 1;
        let z: f64 = StandardNormal.sample(rng);
        let y = wrap(a + sd * z);
        let u: f64 = rng.random();
        if u * top <= psi_1d(rest, x - y) {
            return Ok(y);
        }
    }
    Err(Error::NotConverged(format!("bridge rejection collapsed (dt = {dt}, remaining = {rest}, a = {a}, x = {x})")))
}

/// Same conditional law drawn as a winding mixture of flat bridges.
fn step_mixture<R: Rng>(a: f64, x: f64, dt: f64, rest: f64, rng: &mut R) -> f64 {
    let total = dt + rest;
    let d = wrap(x - a);
    let kmax = (3.0 + (40.0 * total).sqrt()).ceil() as i64;
    let w: Vec<f64> = (-kmax..=kmax)
        .map(|k| (-(d + k as f64).powi(2) / (2.0 * total)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    let mut u: f64 = rng.random::<f64>() * s;
    let mut k = kmax;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            k = i as i64 - kmax;
            break;
        }
        u -= wi;
    }
    let target = d + k as f64;
    let z: f64 = StandardNormal.sample(rng);
    wrap(a + dt / total * target + (dt * rest / total).sqrt() * z)
}

/// Which conditional sampler to use. Both are exact. The winding mixture is
/// the default: plain rejection from the circle Gaussian loses its acceptance
/// when the path sits several standard deviations from the endpoint one step
/// before the end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BridgeSampler {
    Rejection,
    Mixture,
}

/// Bridge x̃ → x on an increasing time grid (first and last entries are τ̃, τ).
pub fn sample_bridge_on<R: Rng>(xt: Point, x: Point, times: &[f64], sampler: BridgeSampler, rng: &mut R) -> Result<BridgePath> {
    if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("bridge times must be strictly increasing, at least two"));
    }
    let tau = times[times.len() - 1];
    let mut pos = vec![xt];
    let mut proposals = 0;
    for i in 1..times.len() - 1 {
        let a = pos[i - 1];
        let dt = times[i] - times[i - 1];
        let rest = tau - times[i];
        let mut c = [0.0; 2];
        for j in 0..2 {
            c[j] = match sampler {
                BridgeSampler::Rejection => step_rejection(a.x[j], x.x[j], dt, rest, rng, &mut proposals)?,
                BridgeSampler::Mixture => step_mixture(a.x[j], x.x[j], dt, rest, rng),
            };
        }
        pos.push(Point::new(c[0], c[1]));
    }
    pos.push(x);
    Ok(BridgePath {
        times: times.to_vec(),
        positions: pos,
        start: xt,
        end: x,
        weight: psi(tau - times[0], x.sub(&xt)),
        proposals,
    })
}

/// Uniform-grid bridge with `steps` intervals.
pub fn sample_bridge<R: Rng>(xt: Point, x: Point, tau_t: f64, tau: f64, steps: usize, rng: &mut R) -> Result<BridgePath> {
    if !(tau > tau_t) || steps < 2 {
        return Err(invalid("need tau > tau_tilde and steps >= 2"));
    }
    let times: Vec<f64> = (0..=steps).map(|i| tau_t + (tau - tau_t) * i as f64 / steps as f64).collect();
    sample_bridge_on(xt, x, &times, BridgeSampler::Mixture, rng)
}

/// Insert the midpoint of every interval by an exact sub-bridge.
pub fn refine<R: Rng>(path: &BridgePath, rng: &mut R) -> Result<BridgePath> {
    let mut times = vec![path.times[0]];
    let mut pos = vec![path.positions[0]];
    let mut proposals = path.proposals;
    for i in 1..path.times.len() {
        let (s, u) = (path.times[i - 1], path.times[i]);
        let m = 0.5 * (s + u);
        let sub = sample_bridge_on(path.positions[i - 1], path.positions[i], &[s, m, u], BridgeSampler::Mixture, rng)?;
        proposals += sub.proposals;
        times.push(m);
        pos.push(sub.positions[1]);
        times.push(u);
        pos.push(path.positions[i]);
    }
    Ok(BridgePath {
        times,
        positions: pos,
        start: path.start,
        end: path.end,
        weight: path.weight,
        proposals,
    })
}

fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for i in 1..n {
        let h = times[i] - times[i - 1];
        w[i - 1] += 0.5 * h;
        w[i] += 0.5 * h;
    }
    w
}

/// Which interaction functional to evaluate.
#[derive(Clone, Debug)]
pub enum PathInteraction<'a> {
    /// v^ε(x − x̃).
    PointPoint(Point, Point),
    /// ∫ds v^ε(x − ω(s)).
    PointPath(Point, &'a BridgePath),
    /// ∫∫ds ds̃ v^ε(ω(s) − ω̃(s̃)).
    PathPath(&'a BridgePath, &'a BridgePath),
}

/// Trapezoid evaluation of a point/path interaction.
pub fn path_interaction(kind: &PathInteraction<'_>, spec: &PotentialSpec) -> f64 {
    match kind {
        PathInteraction::PointPoint(x, xt) => spec.eval(x.sub(xt)),
        PathInteraction::PointPath(x, w) => {
            let tw = trapezoid_weights(&w.times);
            crate::scalar::ksum(w.positions.iter().zip(&tw).map(|(p, c)| c * spec.eval(x.sub(p))))
        }
        PathInteraction::PathPath(a, b) => {
            let wa = trapezoid_weights(&a.times);
            let wb = trapezoid_weights(&b.times);
            let mut acc = crate::CompensatedSum::new();
            for (p, ca) in a.positions.iter().zip(&wa) {
                let mut row = 0.0;
                for (q, cb) in b.positions.iter().zip(&wb) {
                    row += cb * spec.eval(p.sub(q));
                }
                acc.add(ca * row);
            }
            acc.value()
        }
    }
}

/// 𝕍(ω,ω) + 𝕍(ω̃,ω̃) − 2𝕍(ω,ω̃), nonnegative for a positive-type v.
pub fn quadratic_form_defect(spec: &PotentialSpec, a: &BridgePath, b: &BridgePath) -> f64 {
    let aa = path_interaction(&PathInteraction::PathPath(a, a), spec);
    let bb = path_interaction(&PathInteraction::PathPath(b, b), spec);
    let ab = path_interaction(&PathInteraction::PathPath(a, b), spec);
    aa + bb - 2.0 * ab
}

/// Periodic trapezoid on an n×n grid, doubled until the change is below tol.
pub fn torus_integral(f: &dyn Fn(Point) -> f64, tol: f64) -> Result<f64> {
    let eval = |n: usize| {
        let h = 1.0 / n as f64;
        let mut acc = crate::CompensatedSum::new();
        for i in 0..n {
            for j in 0..n {
                acc.add(f(Point::new(-0.5 + i as f64 * h, -0.5 + j as f64 * h)));
            }
        }
        acc.value() * h * h
    };
    let mut n = 32;
    let mut prev = eval(n);
    while n < 2048 {
        n *= 2;
        let cur = eval(n);
        if (cur - prev).abs() <= tol * cur.abs().max(1.0) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::NotConverged("torus trapezoid".into()))
}

/// ∫dy ψ^{t₁−τ̃}(y − x̃) ψ^{τ−t₁}(x − y) f(y).
pub fn marginal_by_quadrature(xt: Point, x: Point, tau_t: f64, tau: f64, t1: f64, f: &dyn Fn(Point) -> f64) -> Result<f64> {
    if !(tau_t < t1 && t1 < tau) {
        return Err(invalid("need tau_tilde < t1 < tau"));
    }
    torus_integral(&|y| psi(t1 - tau_t, y.sub(&xt)) * psi(tau - t1, x.sub(&y)) * f(y), 1e-11)
}

/// E_P|ω(τ̃ + t/2) − x|²_Λ for the closed bridge of duration t, exact on the
/// torus. Per coordinate the midpoint density is p_{t/2}(s)²/p_t(0) on the
/// cell centered at x, where it is smooth, so Gauss–Legendre applies.
pub fn loop_midpoint_second_moment(t: f64) -> f64 {
    let (xs, ws) = crate::quadrature::gauss_legendre_on(200, -0.5, 0.5);
    let m: f64 = xs.iter().zip(&ws).map(|(s, w)| w * s * s * psi_1d(0.5 * t, *s).powi(2)).sum();
    2.0 * m / psi_1d(t, 0.0)
}

/// ∫dy ψ^t(y − x̃) ψ^s(x − y), computed coordinatewise (the kernel factorizes).
pub fn chapman_kolmogorov(xt: Point, x: Point, t: f64, s: f64) -> f64 {
    let n = 4096;
    let h = 1.0 / n as f64;
    let one = |a: f64, b: f64| {
        crate::scalar::ksum((0..n).map(|i| {
            let y = -0.5 + i as f64 * h;
            psi_1d(t, y - a) * psi_1d(s, b - y)
        })) * h
    };
    one(xt.x[0], x.x[0]) * one(xt.x[1], x.x[1])
}

/// W-weighted MC estimate of E_W[f(path)] = ψ^{τ−τ̃}(x − x̃)·E_P[f].
pub fn weighted_estimate(
    xt: Point,
    x: Point,
    times: &[f64],
    samples: u64,
    seed: u64,
    tag: &str,
    sampler: BridgeSampler,
    workers: Option<usize>,
    f: &(dyn Fn(&BridgePath) -> f64 + Sync),
) -> Result<(MCEstimate, f64)> {
    let chunk = 1000u64;
    let blocks = samples.div_ceil(chunk);
    let out: Vec<Result<(Vec<f64>, u64)>> = par_replicas(blocks, workers, |b| {
        let mut rng = StreamKey::new(seed, tag, b).rng();
        let n = chunk.min(samples - b * chunk);
        let mut v = Vec::with_capacity(n as usize);
        let mut props = 0;
        for _ in 0..n {
            let p = sample_bridge_on(xt, x, times, sampler, &mut rng)?;
            props += p.proposals;
            v.push(p.weight * f(&p));
        }
        Ok((v, props))
    });
    let mut all = Vec::with_capacity(samples as usize);
    let mut props = 0;
    for r in out {
        let (v, p) = r?;
        all.extend(v);
        props += p;
    }
    let inner = (times.len().saturating_sub(2) * 2) as f64;
    let acceptance = if inner > 0.0 && props > 0 { inner * samples as f64 / props as f64 } else { 1.0 };
    Ok((MCEstimate::from_samples(&all), acceptance))
}

/// Periodic torus distance.
pub fn torus_distance(a: Point, b: Point) -> f64 {
    a.sub(&b).norm()
}

/// One point of the path-moment experiment.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PathMoment {
    pub duration: f64,
    pub dt: f64,
    pub separation: f64,
    /// ∫𝕎|ω(t) − ω(s)|².
    pub second: MCEstimate,
    /// ∫𝕎|ω(t) − ω(s)|.
    pub first: MCEstimate,
    /// Right-hand sides without the constant.
    pub rhs_second: f64,
    pub rhs_first: f64,
}

/// Weighted path moments at (s, t) with s centered in [τ̃, τ].
pub fn verify_path_moments(xt: Point, x: Point, tau_t: f64, tau: f64, s: f64, t: f64, samples: u64, seed: u64, workers: Option<usize>) -> Result<PathMoment> {
    if !(tau_t <= s && s <= t && t <= tau && tau_t < tau) {
        return Err(invalid("need tau_tilde <= s <= t <= tau"));
    }
    let big = tau - tau_t;
    let sep = torus_distance(x, xt);
    let pre = 1.0 + 1.0 / big;
    let rhs_second = pre * ((t - s) + sep * sep * (t - s).powi(2) / (big * big));
    let rhs_first = pre * ((t - s).sqrt() + sep * (t - s) / big);
    if s == t {
        let zero = MCEstimate::exact(0.0);
        return Ok(PathMoment { duration: big, dt: 0.0, separation: sep, second: zero, first: zero, rhs_second, rhs_first });
    }
    let mut times = vec![tau_t];
    for u in [s, t] {
        if u > *times.last().unwrap() && u < tau {
            times.push(u);
        }
    }
    times.push(tau);
    let pick = |p: &BridgePath, u: f64| if u == tau_t { p.start } else if u == tau { p.end } else { p.at(u).unwrap() };
    let d2 = |p: &BridgePath| torus_distance(pick(p, t), pick(p, s)).powi(2);
    let d1 = |p: &BridgePath| torus_distance(pick(p, t), pick(p, s));
    let (second, _) = weighted_estimate(xt, x, &times, samples, seed, "moment2", BridgeSampler::Mixture, workers, &d2)?;
    let (first, _) = weighted_estimate(xt, x, &times, samples, seed, "moment1", BridgeSampler::Mixture, workers, &d1)?;
    Ok(PathMoment { duration: big, dt: t - s, separation: sep, second, first, rhs_second, rhs_first })
}

/// Constants C₂, C₁ fitted as the largest observed ratio over a parameter grid.
#[derive(Clone, Debug, serde::Serialize)]
pub struct MomentBoundFit {
    pub points: Vec<PathMoment>,
    pub c_second: f64,
    pub c_first: f64,
}

/// Grid over durations × (t − s)/duration × separations, s centered.
pub fn fit_moment_bound(durations: &[f64], fractions: &[f64], separations: &[f64], samples: u64, seed: u64, workers: Option<usize>) -> Result<MomentBoundFit> {
    let mut points = Vec::new();
    for &big in durations {
        for &fr in fractions {
            for &sep in separations {
                let dt = fr * big;
                let s = 0.5 * (big - dt);
                let x = Point::new(sep, 0.0);
                points.push(verify_path_moments(Point::origin(), x, 0.0, big, s, s + dt, samples, seed, workers)?);
            }
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let c_second = points.iter().map(|p| ratio(p.second.mean, p.rhs_second)).fold(0.0, f64::max);
    let c_first = points.iter().map(|p| ratio(p.first.mean, p.rhs_first)).fold(0.0, f64::max);
    Ok(MomentBoundFit { points, c_second, c_first })
}

/// Fitted exponent of ∫𝕎|ω(t) − ω(s)|² against t − s for a closed loop.
pub fn moment_scaling_exponent(duration: f64, dts: &[f64], samples: u64, seed: u64, workers: Option<usize>) -> Result<(f64, Vec<PathMoment>)> {
    let mut pts = Vec::new();
    for &dt in dts {
        let s = 0.5 * (duration - dt);
        pts.push(verify_path_moments(Point::origin(), Point::origin(), 0.0, duration, s, s + dt, samples, seed, workers)?);
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.dt.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.second.mean.ln()).collect();
    Ok((fit_line(&lx, &ly).1, pts))
}

/// ‖ψ^t − ψ^s‖_{L¹} against the bound d·log(t/s) with d = 2.
pub fn heat_kernel_l1_check(s: f64, t: f64) -> Result<(f64, f64)> {
    Ok((heat_kernel_l1_distance(s, t)?, 2.0 * (t / s).ln()))
}

/// Largest ψ^t(0)/(1 + 1/t) over a list of durations (the sup over endpoints
/// of the W-mass sits at x = x̃).
pub fn fit_mass_bound(durations: &[f64]) -> Result<f64> {
    let mut c = 0.0f64;
    for &t in durations {
        c = c.max(max_mass(t)? / (1.0 + 1.0 / t));
    }
    Ok(c)
}

/// Step-halving of the W-expected interactions under common paths: every
/// path is refined by exact midpoints and both grids are integrated. A single
/// rough path changes by O(√dt) under refinement; the expectation is smooth in
/// time and changes by O(dt²). Without `path_path` the path-path columns are
/// placeholders (value 1, change 0).
#[derive(Clone, Debug, serde::Serialize)]
pub struct HalvingReport {
    pub point_path: MCEstimate,
    pub point_path_change: MCEstimate,
    pub path_path: MCEstimate,
    pub path_path_change: MCEstimate,
    /// Median pathwise relative change of the point-path functional.
    pub pathwise_change: f64,
}

impl HalvingReport {
    /// Relative change of the expectations, with its standard error.
    pub fn relative(&self) -> [(f64, f64); 2] {
        [
            (self.point_path_change.mean / self.point_path.mean, self.point_path_change.stderr / self.point_path.mean.abs()),
            (self.path_path_change.mean / self.path_path.mean, self.path_path_change.stderr / self.path_path.mean.abs()),
        ]
    }
}

#[allow(clippy::too_many_arguments)]
pub fn halving_check(spec: &PotentialSpec, xt: Point, x: Point, duration: f64, steps: usize, path_path: bool, samples: u64, seed: u64, workers: Option<usize>) -> Result<HalvingReport> {
    let chunk = 500u64;
    let blocks = samples.div_ceil(chunk);
    let probe = Point::new(0.5 * (x.x[0] + xt.x[0]), 0.5 * (x.x[1] + xt.x[1]));
    let out: Vec<Result<Vec<[f64; 5]>>> = par_replicas(blocks, workers, |b| {
        let mut rng = StreamKey::new(seed, "halving", b).rng();
        let n = chunk.min(samples - b * chunk);
        let mut v = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let a = sample_bridge(xt, x, 0.0, duration, steps, &mut rng)?;
            let a2 = refine(&a, &mut rng)?;
            let p1 = path_interaction(&PathInteraction::PointPath(probe, &a), spec);
            let p2 = path_interaction(&PathInteraction::PointPath(probe, &a2), spec);
            let (q1, q2) = if path_path {
                let c = sample_bridge(x, xt, 0.0, duration, steps, &mut rng)?;
                let c2 = refine(&c, &mut rng)?;
                (
                    path_interaction(&PathInteraction::PathPath(&a, &c), spec),
                    path_interaction(&PathInteraction::PathPath(&a2, &c2), spec),
                )
            } else {
                (1.0, 1.0)
            };
            v.push([p2, p2 - p1, q2, q2 - q1, ((p2 - p1) / p2).abs()]);
        }
        Ok(v)
    });
    let mut rows = Vec::new();
    for r in out {
        rows.extend(r?);
    }
    let col = |i: usize| -> Vec<f64> { rows.iter().map(|r| r[i]).collect() };
    let mut pw: Vec<f64> = col(4).into_iter().filter(|v| v.is_finite()).collect();
    pw.sort_by(f64::total_cmp);
    Ok(HalvingReport {
        point_path: MCEstimate::from_samples(&col(0)),
        point_path_change: MCEstimate::from_samples(&col(1)),
        path_path: MCEstimate::from_samples(&col(2)),
        path_path_change: MCEstimate::from_samples(&col(3)),
        pathwise_change: pw.get(pw.len() / 2).copied().unwrap_or(0.0),
    })
}

/// Kolmogorov distribution tail Q(λ) = 2Σ(−1)^{k−1}e^{−2k²λ²}.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        acc += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let l = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(l))
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample(a: &[f64], cdf: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let mut x = a.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let l = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    (d, kolmogorov_q(l))
}

/// CDF on [−½, ½) of one bridge coordinate at time t (start a at s, end x at τ).
pub fn conditional_cdf(a: f64, x: f64, dt: f64, rest: f64) -> impl Fn(f64) -> f64 {
    let n = 8192;
    let h = 1.0 / n as f64;
    let dens: Vec<f64> = (0..n)
        .map(|i| {
            let y = -0.5 + (i as f64 + 0.5) * h;
            psi_1d(dt, y - a) * psi_1d(rest, x - y)
        })
        .collect();
    let total: f64 = dens.iter().sum::<f64>() * h;
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + dens[i] * h / total;
    }
    move |y: f64| {
        let u = ((y + 0.5) / h).clamp(0.0, n as f64);
        let i = (u.floor() as usize).min(n - 1);
        cum[i] + (u - i as f64) * (cum[i + 1] - cum[i])
    }
}

/// ψ^t at the origin, the sup of the W-mass over endpoints.
pub fn max_mass(t: f64) -> Result<f64> {
    heat_kernel(t, Point::origin())
}
