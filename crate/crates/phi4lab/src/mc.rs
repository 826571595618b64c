//! Monte-Carlo estimators and error accounting.
//!
//! Everything samples the Gaussian field directly and reweights by e^{−V};
//! standard errors come from batch means over replica order, which keeps
//! them deterministic for a given seed.

use crate::gff::{SpectralTable, StreamKey};
use crate::interactions::{InteractionKind, Interactions};
use crate::scalar::{ksum, ksum_c};
use crate::torus::TorusPoint;
use crate::wick::{wick_order, Label};
use crate::{invalid, Result, C64};
use statrs::distribution::{Beta, ContinuousCDF};

/// Number of batches for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 50;

/// Replicas with effective sample size below this are flagged.
pub const MIN_ESS: f64 = 100.0;

/// Least-squares slope of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    fit_line(x, y).1
}

/// Least-squares (intercept, slope).
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Evaluate `f` on replicas 0..n in parallel, keeping replica order.
///
/// With `workers = Some(k)` a dedicated pool of k threads is used, otherwise
/// the global rayon pool. Each replica owns its random stream, so the output
/// does not depend on the worker count.
pub fn par_replicas<T: Send, F: Fn(u64) -> T + Sync>(n: u64, workers: Option<usize>, f: F) -> Vec<T> {
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect::<Vec<T>>();
    match workers {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
        None => run(),
    }
}

/// Mean with standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
    /// Effective sample size; equals n for unweighted averages.
    pub ess: f64,
}

impl MCEstimate {
    /// Batch-means estimate with [`DEFAULT_BATCHES`] batches.
    pub fn from_samples(xs: &[f64]) -> Self {
        let (mean, stderr) = batch_means(xs, DEFAULT_BATCHES);
        Self {
            mean,
            stderr,
            n_samples: xs.len() as u64,
            ess: xs.len() as f64,
        }
    }

    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n_samples: 0,
            ess: f64::INFINITY,
        }
    }

    /// |mean − target| in units of stderr (∞ when stderr = 0 and they differ).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.stderr
        }
    }

    /// Whether the two estimates agree within k combined standard errors
    /// (treated as independent).
    pub fn agrees_with(&self, other: &MCEstimate, k: f64) -> bool {
        let s = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        (self.mean - other.mean).abs() <= k * s
    }

    pub fn low_ess(&self) -> bool {
        self.ess < MIN_ESS
    }
}

/// Real and imaginary parts estimated separately.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ComplexEstimate {
    pub re: MCEstimate,
    pub im: MCEstimate,
}

impl ComplexEstimate {
    pub fn mean(&self) -> C64 {
        C64::new(self.re.mean, self.im.mean)
    }

    pub fn from_samples(xs: &[C64]) -> Self {
        let re: Vec<f64> = xs.iter().map(|z| z.re).collect();
        let im: Vec<f64> = xs.iter().map(|z| z.im).collect();
        Self {
            re: MCEstimate::from_samples(&re),
            im: MCEstimate::from_samples(&im),
        }
    }

    /// Max over components of |Δ|/stderr against a target.
    pub fn z_score(&self, target: C64) -> f64 {
        self.re.z_score(target.re).max(self.im.z_score(target.im))
    }
}

/// Mean and batch-means standard error. With fewer than 2 samples per batch
/// the plain sample standard deviation is used.
pub fn batch_means(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = ksum(xs.iter().copied()) / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    if batches < 2 || n < 2 * batches {
        let var = ksum(xs.iter().map(|x| (x - mean).powi(2))) / (n - 1) as f64;
        return (mean, (var / n as f64).sqrt());
    }
    let bm = batch_averages(xs, batches);
    let b = bm.len() as f64;
    let mb = ksum(bm.iter().copied()) / b;
    let var = ksum(bm.iter().map(|x| (x - mb).powi(2))) / (b - 1.0);
    (mean, (var / b).sqrt())
}

/// Averages over `batches` contiguous blocks (the last absorbs the remainder).
fn batch_averages(xs: &[f64], batches: usize) -> Vec<f64> {
    let size = xs.len() / batches;
    (0..batches)
        .map(|b| {
            let lo = b * size;
            let hi = if b + 1 == batches { xs.len() } else { lo + size };
            ksum(xs[lo..hi].iter().copied()) / (hi - lo) as f64
        })
        .collect()
}

/// (Σw)²/Σw².
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s = ksum(w.iter().copied());
    let s2 = ksum(w.iter().map(|x| x * x));
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Ratio Σ num / Σ den with delta-method standard error from batch sums.
pub fn ratio_estimate(num: &[f64], den: &[f64]) -> MCEstimate {
    assert_eq!(num.len(), den.len());
    let n = num.len();
    let r = ksum(num.iter().copied()) / ksum(den.iter().copied());
    let batches = if n >= 2 * DEFAULT_BATCHES { DEFAULT_BATCHES } else { n };
    let bn = batch_averages(num, batches);
    let bd = batch_averages(den, batches);
    let b = batches as f64;
    let md = ksum(bd.iter().copied()) / b;
    let resid = ksum(bn.iter().zip(&bd).map(|(a, d)| (a - r * d).powi(2))) / (b - 1.0);
    MCEstimate {
        mean: r,
        stderr: (resid / b).sqrt() / md.abs(),
        n_samples: n as u64,
        ess: effective_sample_size(den),
    }
}

/// Complex ratio estimate with per-component delta-method errors.
pub fn ratio_estimate_c(num: &[C64], den: &[f64]) -> ComplexEstimate {
    let re: Vec<f64> = num.iter().map(|z| z.re).collect();
    let im: Vec<f64> = num.iter().map(|z| z.im).collect();
    ComplexEstimate {
        re: ratio_estimate(&re, den),
        im: ratio_estimate(&im, den),
    }
}

/// Sampling context: one spectral table, its interactions and a coupling.
#[derive(Clone, Debug)]
pub struct McSetup {
    pub table: SpectralTable,
    pub inter: Interactions,
    pub coupling: f64,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl McSetup {
    pub fn new(table: SpectralTable, inter: Interactions, seed: u64) -> Self {
        Self {
            table,
            inter,
            coupling: 1.0,
            seed,
            workers: None,
        }
    }

    pub fn field(&self, replica: u64) -> crate::gff::CutoffField {
        self.table.sample(&StreamKey::new(self.seed, "X", replica))
    }

    /// g·V on a field, or 0 for the free theory.
    pub fn potential(&self, kind: Option<InteractionKind>, field: &crate::gff::CutoffField) -> f64 {
        let v = match kind {
            None => return 0.0,
            Some(InteractionKind::VN) => self.inter.v_n(field).value,
            Some(InteractionKind::VEpsN) => self.inter.v_eps(field).value,
            Some(InteractionKind::WEpsN) => self.inter.w_eps(field).value,
        };
        self.coupling * v
    }

    fn cov(&self, d: TorusPoint<f64>) -> f64 {
        self.table.covariance_at(d)
    }
}

/// ζ = E[e^{−gV}] and its effective sample size.
pub fn estimate_zeta(setup: &McSetup, kind: Option<InteractionKind>, samples: u64) -> MCEstimate {
    let w = par_replicas(samples, setup.workers, |r| {
        let f = setup.field(r);
        (-setup.potential(kind, &f)).exp()
    });
    let mut est = MCEstimate::from_samples(&w);
    est.ess = effective_sample_size(&w);
    est
}

/// −ln ζ / χ(ε)² with χ(ε) = ln(1/ε), the constant in ζ ≥ exp(−c χ²).
pub fn lower_bound_constant(zeta: f64, eps: f64) -> f64 {
    -zeta.ln() / (1.0 / eps).ln().powi(2)
}

/// Value of :φ̄(x̃₁)⋯φ̄(x̃_p)φ(x₁)⋯φ(x_p): for one field, with the
/// covariance oracle taken from the spectral table.
pub fn wick_monomial(setup: &McSetup, xt: &[TorusPoint<f64>], x: &[TorusPoint<f64>], field: &crate::gff::CutoffField) -> Result<C64> {
    if xt.len() != x.len() {
        return Err(invalid("need as many conjugated as unconjugated points"));
    }
    let p = x.len();
    let pts: Vec<TorusPoint<f64>> = xt.iter().chain(x).copied().collect();
    let labels: Vec<Label> = (0..2 * p).map(|i| Label::field(i, i < p)).collect();
    let oracle = |a: &Label, b: &Label| -> C64 {
        if a.conj == b.conj {
            return C64::new(0.0, 0.0);
        }
        C64::new(setup.cov(pts[a.id].sub(&pts[b.id])), 0.0)
    };
    let expr = wick_order(&labels, &oracle)?;
    let vals: Vec<C64> = pts
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let v = field.eval(y);
            if i < p {
                v.conj()
            } else {
                v
            }
        })
        .collect();
    Ok(expr.evaluate(&vals))
}

/// Plain product φ̄(x̃₁)⋯φ̄(x̃_k)φ(x₁)⋯φ(x_k).
fn plain_monomial(xt: &[TorusPoint<f64>], x: &[TorusPoint<f64>], field: &crate::gff::CutoffField) -> C64 {
    let mut acc = C64::new(1.0, 0.0);
    for &y in xt {
        acc *= field.eval(y).conj();
    }
    for &y in x {
        acc *= field.eval(y);
    }
    acc
}

/// γ̂_p(x̃; x) = E[:φ̄⋯φ: e^{−gV}] / E[e^{−gV}] by the ratio estimator.
pub fn estimate_gamma_hat(
    setup: &McSetup,
    kind: Option<InteractionKind>,
    xt: &[TorusPoint<f64>],
    x: &[TorusPoint<f64>],
    samples: u64,
) -> Result<ComplexEstimate> {
    if x.len() > 2 {
        return Err(crate::Error::Unsupported("correlation functions beyond p = 2".into()));
    }
    let rows = par_replicas(samples, setup.workers, |r| {
        let f = setup.field(r);
        let w = (-setup.potential(kind, &f)).exp();
        wick_monomial(setup, xt, x, &f).map(|m| (m * w, w))
    });
    let rows: Vec<(C64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let num: Vec<C64> = rows.iter().map(|r| r.0).collect();
    let den: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(ratio_estimate_c(&num, &den))
}

/// Per-sample pieces of the two-point assembly check.
#[derive(Clone, Copy, Debug)]
pub struct GammaTwoCheck {
    /// Direct γ̂₂ estimate.
    pub direct: ComplexEstimate,
    /// Σ_k C(2,k)²(−1)^{2−k} P(γ_k ⊗ γ⁽⁰⁾_{2−k})P from estimated γ₁, γ₂.
    pub assembled: ComplexEstimate,
}

/// γ̂₂ directly and from the binomial assembly over plain correlations
/// γ_k = E[φ̄⋯φ e^{−gV}]/ζ and free γ⁽⁰⁾ kernels, on common samples.
pub fn gamma_two_assembly(
    setup: &McSetup,
    kind: Option<InteractionKind>,
    xt: [TorusPoint<f64>; 2],
    x: [TorusPoint<f64>; 2],
    samples: u64,
) -> Result<GammaTwoCheck> {
    let g = |a: TorusPoint<f64>, b: TorusPoint<f64>| setup.cov(b.sub(&a));
    // free kernels γ⁽⁰⁾₁(x̃; x) = G(x − x̃), γ⁽⁰⁾₂ = permanent
    let free2 = g(xt[0], x[0]) * g(xt[1], x[1]) + g(xt[0], x[1]) * g(xt[1], x[0]);
    let rows = par_replicas(samples, setup.workers, |r| -> Result<(C64, C64, f64)> {
        let f = setup.field(r);
        let w = (-setup.potential(kind, &f)).exp();
        let direct = wick_monomial(setup, &xt, &x, &f)? * w;
        let gamma2 = plain_monomial(&xt, &x, &f);
        // P(γ₁ ⊗ γ⁽⁰⁾₁)P averaged over both orderings of x̃ and x
        let mut mixed = C64::new(0.0, 0.0);
        for s in 0..2 {
            for t in 0..2 {
                mixed += plain_monomial(&[xt[s]], &[x[t]], &f) * g(xt[1 - s], x[1 - t]);
            }
        }
        mixed /= 4.0;
        let assembled = gamma2 - mixed * 4.0 + C64::new(free2, 0.0);
        Ok((direct, assembled * w, w))
    });
    let rows: Vec<(C64, C64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let den: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let d: Vec<C64> = rows.iter().map(|r| r.0).collect();
    let a: Vec<C64> = rows.iter().map(|r| r.1).collect();
    Ok(GammaTwoCheck {
        direct: ratio_estimate_c(&d, &den),
        assembled: ratio_estimate_c(&a, &den),
    })
}

/// Paired difference a − b on common draws; the stderr is that of the difference.
pub fn crn_difference<A, B>(setup: &McSetup, a: A, b: B, samples: u64) -> MCEstimate
where
    A: Fn(&crate::gff::CutoffField) -> f64 + Sync,
    B: Fn(&crate::gff::CutoffField) -> f64 + Sync,
{
    let d = par_replicas(samples, setup.workers, |r| {
        let f = setup.field(r);
        a(&f) - b(&f)
    });
    MCEstimate::from_samples(&d)
}

/// Exact two-sided binomial interval at confidence 1 − α.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> (f64, f64) {
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0)
            .map(|b| b.inverse_cdf(alpha / 2.0))
            .unwrap_or(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf)
            .map(|b| b.inverse_cdf(1.0 - alpha / 2.0))
            .unwrap_or(1.0)
    };
    (lo, hi)
}

/// Weighted pool-adjacent-violators fit constrained to be nonincreasing.
pub fn isotonic_nonincreasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (y2, w2, c2) = blocks[blocks.len() - 1];
            let (y1, w1, c1) = blocks[blocks.len() - 2];
            if y1 >= y2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let ww = w1 + w2;
            let m = if ww > 0.0 { (y1 * w1 + y2 * w2) / ww } else { 0.5 * (y1 + y2) };
            blocks.push((m, ww, c1 + c2));
        }
    }
    blocks.into_iter().flat_map(|(m, _, c)| std::iter::repeat_n(m, c)).collect()
}

/// Empirical exceedance curve of e^{−V}.
#[derive(Clone, Debug, serde::Serialize)]
pub struct TailCurve {
    pub thresholds: Vec<f64>,
    pub exceedances: Vec<u64>,
    pub n_samples: u64,
    pub raw: Vec<f64>,
    /// Isotonic (nonincreasing) correction of `raw`.
    pub prob: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Local exponent −d ln ℙ / d ln t at the largest resolvable thresholds.
    pub local_exponent: f64,
    /// Largest threshold with at least [`MIN_TAIL_COUNT`] exceedances.
    pub t_resolved: f64,
    /// Slope of ln(−ln ℙ) against √(ln t).
    pub double_exp_slope: f64,
}

/// Exceedance count needed for a threshold to count as resolved.
pub const MIN_TAIL_COUNT: u64 = 20;

/// Tail curve from samples of V: ℙ(e^{−V} > t) = ℙ(V < −ln t).
pub fn tail_curve(values: &[f64], thresholds: &[f64]) -> Result<TailCurve> {
    if thresholds.windows(2).any(|w| w[1] <= w[0]) || thresholds.first().is_some_and(|&t| t < 1.0) {
        return Err(invalid("thresholds must be increasing and >= 1"));
    }
    let n = values.len() as u64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let exceedances: Vec<u64> = thresholds
        .iter()
        .map(|t| sorted.partition_point(|&v| v < -t.ln()) as u64)
        .collect();
    let raw: Vec<f64> = exceedances.iter().map(|&k| k as f64 / n as f64).collect();
    let prob = isotonic_nonincreasing(&raw, &vec![1.0; raw.len()]);
    let (lower, upper): (Vec<f64>, Vec<f64>) = exceedances.iter().map(|&k| clopper_pearson(k, n, 0.05)).unzip();
    let resolved: Vec<usize> = (0..thresholds.len()).filter(|&i| exceedances[i] >= MIN_TAIL_COUNT).collect();
    let last = resolved.last().copied();
    let (local_exponent, t_resolved) = match last {
        Some(i) if i >= 1 => {
            // fit over the top quarter of the resolved log-threshold range
            let lt_hi = thresholds[i].ln();
            let lt_lo = thresholds[resolved[0]].ln();
            let cut = lt_hi - 0.25 * (lt_hi - lt_lo);
            let idx: Vec<usize> = resolved.iter().copied().filter(|&j| thresholds[j].ln() >= cut).collect();
            let idx = if idx.len() >= 2 { idx } else { vec![resolved[resolved.len() - 2], i] };
            let xs: Vec<f64> = idx.iter().map(|&j| thresholds[j].ln()).collect();
            let ys: Vec<f64> = idx.iter().map(|&j| prob[j].ln()).collect();
            (-fit_slope(&xs, &ys), thresholds[i])
        }
        _ => (f64::NAN, thresholds.first().copied().unwrap_or(1.0)),
    };
    let pts: Vec<(f64, f64)> = resolved
        .iter()
        .filter(|&&j| thresholds[j] > 1.0 && prob[j] < 1.0)
        .map(|&j| (thresholds[j].ln().sqrt(), (-prob[j].ln()).ln()))
        .collect();
    let double_exp_slope = if pts.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        fit_slope(&xs, &ys)
    } else {
        f64::NAN
    };
    Ok(TailCurve {
        thresholds: thresholds.to_vec(),
        exceedances,
        n_samples: n,
        raw,
        prob,
        lower,
        upper,
        local_exponent,
        t_resolved,
        double_exp_slope,
    })
}

/// Draws V^ε_N and returns its tail curve for e^{−V^ε_N}.
pub fn nelson_tail(setup: &McSetup, thresholds: &[f64], samples: u64) -> Result<(TailCurve, Vec<f64>)> {
    let vals = par_replicas(samples, setup.workers, |r| setup.inter.v_eps(&setup.field(r)).value);
    Ok((tail_curve(&vals, thresholds)?, vals))
}

/// Thresholds e^{s} on a uniform grid of s from 0 to −min V (inclusive).
pub fn default_thresholds(min_v: f64, count: usize) -> Vec<f64> {
    let top = (-min_v).max(0.5);
    (0..count).map(|i| (top * i as f64 / (count - 1) as f64).exp()).collect()
}

/// E|D|^p and C_p = N^{2/3}(E|D|^p)^{1/p}/p² for the coupled difference
/// D = V^ε_M − V^ε_N.
#[derive(Clone, Debug, serde::Serialize)]
pub struct MomentRoute {
    pub n: f64,
    pub m: f64,
    pub p: Vec<u32>,
    pub moments: Vec<f64>,
    pub constants: Vec<f64>,
}

/// Moment route for the Nelson argument with φ_M = φ_N + ψ_{N,M} drawn from
/// independent streams "X" and "Y".
pub fn moment_route(
    n: f64,
    m: f64,
    spec: &crate::interactions::PotentialSpec,
    kappa: f64,
    ps: &[u32],
    samples: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<MomentRoute> {
    let l = crate::interactions::default_grid(m, spec.eps);
    let profile = crate::torus::CutoffProfile::Gaussian;
    let tn = SpectralTable::cutoff(n, profile, l, kappa)?;
    let tm = SpectralTable::cutoff(m, profile, l, kappa)?;
    let tpsi = SpectralTable::increment(n, m, profile, l, kappa)?;
    let (tau, e) = crate::interactions::tau_and_energy(spec, kappa)?;
    let in_ = Interactions::with_counterterms(&tn, spec, tau, e);
    let im = Interactions::with_counterterms(&tm, spec, tau, e);
    let d = par_replicas(samples, workers, |r| {
        let phi = tn.sample(&StreamKey::new(seed, "X", r));
        let psi = tpsi.sample(&StreamKey::new(seed, "Y", r));
        let full = phi.add(&psi);
        im.v_eps(&full).value - in_.v_eps(&phi).value
    });
    let moments: Vec<f64> = ps
        .iter()
        .map(|&p| ksum(d.iter().map(|x| x.abs().powi(p as i32))) / d.len() as f64)
        .collect();
    let constants = ps
        .iter()
        .zip(&moments)
        .map(|(&p, &mo)| n.powf(2.0 / 3.0) * mo.powf(1.0 / p as f64) / (p * p) as f64)
        .collect();
    Ok(MomentRoute {
        n,
        m,
        p: ps.to_vec(),
        moments,
        constants,
    })
}

/// Sample mean of complex values with compensated summation.
pub fn mean_c(xs: &[C64]) -> C64 {
    ksum_c(xs.iter().copied()) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interactions::PotentialSpec;
    use crate::torus::CutoffProfile;

    fn setup(n: f64, l: usize, seed: u64) -> McSetup {
        let t = SpectralTable::cutoff(n, CutoffProfile::Gaussian, l, 1.0).unwrap();
        let spec = PotentialSpec::bump(0.25).unwrap();
        let i = Interactions::new(&t, &spec).unwrap();
        McSetup::new(t, i, seed)
    }

    #[test]
    fn batch_means_on_constant_and_iid() {
        let (m, s) = batch_means(&[2.0; 500], 50);
        assert_eq!((m, s), (2.0, 0.0));
        let xs: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let (m, s) = batch_means(&xs, 50);
        assert_eq!(m, 0.0);
        assert!(s < 1e-12);
        let (_, s) = batch_means(&[1.0, 2.0, 3.0], 50);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn ratio_estimator_matches_algebra() {
        let num = [1.0, 2.0, 3.0, 4.0];
        let den = [1.0, 1.0, 2.0, 2.0];
        let r = ratio_estimate(&num, &den);
        assert!((r.mean - 10.0 / 6.0).abs() < 1e-15);
        assert!(r.ess <= 4.0);
        // constant weights give the plain mean
        let r = ratio_estimate(&num, &[3.0; 4]);
        assert!((r.mean - 2.5 / 3.0).abs() < 1e-15);
        assert!((r.ess - 4.0).abs() < 1e-12);
    }

    #[test]
    fn clopper_pearson_reference_values() {
        let (lo, hi) = clopper_pearson(0, 10, 0.05);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.308_497_1).abs() < 1e-6);
        let (lo, hi) = clopper_pearson(5, 10, 0.05);
        assert!((lo - 0.187_086_0).abs() < 1e-6);
        assert!((hi - 0.812_914_0).abs() < 1e-6);
    }

    #[test]
    fn pav_examples() {
        assert_eq!(isotonic_nonincreasing(&[3.0, 1.0, 2.0], &[1.0; 3]), vec![3.0, 1.5, 1.5]);
        assert_eq!(isotonic_nonincreasing(&[1.0, 2.0, 3.0], &[1.0; 3]), vec![2.0; 3]);
        let y = [0.9, 0.5, 0.6, 0.2, 0.25, 0.0];
        let f = isotonic_nonincreasing(&y, &[1.0; 6]);
        assert!(f.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn free_theory_zeta_is_exactly_one() {
        let s = setup(2.0, 16, 1);
        let z = estimate_zeta(&s, None, 200);
        assert_eq!(z.mean, 1.0);
        assert_eq!(z.stderr, 0.0);
    }

    #[test]
    fn crn_of_identical_quantities_is_zero() {
        let s = setup(2.0, 16, 2);
        let d = crn_difference(&s, |f| s.inter.v_n(f).value, |f| s.inter.v_n(f).value, 300);
        assert_eq!((d.mean, d.stderr), (0.0, 0.0));
    }

    #[test]
    fn seed_determinism_across_worker_counts() {
        let mut a = setup(2.0, 16, 7);
        a.workers = Some(1);
        let mut b = a.clone();
        b.workers = Some(3);
        let za = estimate_zeta(&a, Some(InteractionKind::WEpsN), 500);
        let zb = estimate_zeta(&b, Some(InteractionKind::WEpsN), 500);
        assert_eq!(za.mean.to_bits(), zb.mean.to_bits());
        assert_eq!(za.stderr.to_bits(), zb.stderr.to_bits());
    }

    #[test]
    fn jensen_floor() {
        let s = setup(4.0, 16, 3);
        let z = estimate_zeta(&s, Some(InteractionKind::WEpsN), 4000);
        let w: Vec<f64> = (0..4000).map(|r| s.inter.w_eps(&s.field(r)).value).collect();
        let mean_w = MCEstimate::from_samples(&w);
        assert!(z.mean >= (-mean_w.mean).exp() - 3.0 * z.stderr);
        assert!(!z.low_ess());
    }

    #[test]
    fn free_gamma_hat_vanishes_and_is_hermitian() {
        let s = setup(3.0, 16, 4);
        let a = TorusPoint::new(0.1, 0.2);
        let b = TorusPoint::new(-0.3, 0.05);
        let g = estimate_gamma_hat(&s, None, &[a], &[b], 4000).unwrap();
        assert!(g.z_score(C64::new(0.0, 0.0)) < 4.0);
        let g2 = estimate_gamma_hat(&s, None, &[a, b], &[b, a], 2000).unwrap();
        assert!(g2.z_score(C64::new(0.0, 0.0)) < 4.0);
        let mut s2 = s.clone();
        s2.coupling = 1.0;
        let h1 = estimate_gamma_hat(&s2, Some(InteractionKind::WEpsN), &[a], &[b], 1000).unwrap();
        let h2 = estimate_gamma_hat(&s2, Some(InteractionKind::WEpsN), &[b], &[a], 1000).unwrap();
        assert!((h1.mean() - h2.mean().conj()).norm() < 1e-12);
        assert!(estimate_gamma_hat(&s, None, &[a; 3], &[b; 3], 10).is_err());
    }

    #[test]
    fn gamma_two_assembly_matches_direct() {
        let s = setup(3.0, 16, 5);
        let xt = [TorusPoint::new(0.1, 0.2), TorusPoint::new(0.3, -0.1)];
        let x = [TorusPoint::new(0.0, 0.25), TorusPoint::new(-0.2, 0.4)];
        let c = gamma_two_assembly(&s, Some(InteractionKind::WEpsN), xt, x, 1000).unwrap();
        assert!((c.direct.mean() - c.assembled.mean()).norm() < 1e-10 * (1.0 + c.direct.mean().norm()));
    }

    #[test]
    fn tail_curve_basics() {
        let vals = [-2.0, -1.0, -0.5, 0.1, 0.3, 1.0, 2.0, -0.1];
        let t = tail_curve(&vals, &[1.0, 2.0, 5.0]).unwrap();
        // ℙ(V < 0) = 4/8
        assert_eq!(t.raw[0], 0.5);
        assert!(t.prob.windows(2).all(|w| w[0] >= w[1]));
        assert!(tail_curve(&vals, &[2.0, 1.0]).is_err());
        assert!(tail_curve(&vals, &[0.5]).is_err());
        for i in 0..3 {
            assert!(t.lower[i] <= t.raw[i] && t.raw[i] <= t.upper[i]);
        }
    }

    #[test]
    fn chebyshev_consistency() {
        let s = setup(4.0, 32, 6);
        let (t, vals) = nelson_tail(&s, &[1.0], 3000).unwrap();
        assert!(t.raw[0] > 0.0 && t.raw[0] < 1.0);
        let var = crate::wick::veps_square(&s.inter);
        for &thr in &[0.5, 1.0, 2.0, 4.0] {
            let frac = vals.iter().filter(|v| v.abs() > thr).count() as f64 / vals.len() as f64;
            assert!(frac <= var / (thr * thr) + 3.0 * (frac / vals.len() as f64).sqrt());
        }
    }
}
