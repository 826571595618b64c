//! Geometry, spectrum, heat kernel and Green functions on Λ = [−½, ½)².
//!
//! G is evaluated by an Ewald split of ∫₀^∞ e^{−κt} ψ^t dt at a time t₀: the
//! short-time piece is integrated image by image in closed form through the
//! generalized exponential integrals E_n, the long-time piece is a rapidly
//! convergent spectral sum. The logarithmic singularity sits entirely in the
//! n = 0, j = 0 term, which is what makes [`GreenEvaluator::green_regular`]
//! cheap and accurate at tiny |x|.

use crate::scalar::Real;
use crate::{invalid, Result};
use std::io::Write;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// λ_k = κ + 2π²|k|².
pub fn eigenvalue<T: Real>(k: [i64; 2], kappa: T) -> Result<T> {
    if !(kappa > T::zero()) {
        return Err(invalid("kappa must be positive"));
    }
    Ok(lambda(k, kappa))
}

#[inline]
pub(crate) fn lambda<T: Real>(k: [i64; 2], kappa: T) -> T {
    let k2 = T::lit((k[0] * k[0] + k[1] * k[1]) as f64);
    kappa + T::lit(2.0) * T::PI() * T::PI() * k2
}

/// Modes with |k_i| ≤ k_max and their eigenvalues.
#[derive(Clone, Debug)]
pub struct ModeLattice<T> {
    pub k_max: i64,
    pub kappa: T,
}

impl<T: Real> ModeLattice<T> {
    pub fn new(k_max: i64, kappa: T) -> Result<Self> {
        if !(kappa > T::zero()) {
            return Err(invalid("kappa must be positive"));
        }
        Ok(Self { k_max, kappa })
    }

    pub fn modes(&self) -> impl Iterator<Item = [i64; 2]> + '_ {
        let m = self.k_max;
        (-m..=m).flat_map(move |a| (-m..=m).map(move |b| [a, b]))
    }

    pub fn eigenvalue(&self, k: [i64; 2]) -> T {
        lambda(k, self.kappa)
    }
}

/// Point of Λ, stored reduced to [−½, ½)².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusPoint<T> {
    pub x: [T; 2],
}

#[inline]
fn wrap<T: Real>(s: T) -> T {
    let half = T::lit(0.5);
    let r = s - (s + half).floor();
    if r >= half {
        r - T::one()
    } else {
        r
    }
}

impl<T: Real> TorusPoint<T> {
    pub fn new(x1: T, x2: T) -> Self {
        Self {
            x: [wrap(x1), wrap(x2)],
        }
    }

    pub fn origin() -> Self {
        Self::new(T::zero(), T::zero())
    }

    /// Periodic Euclidean norm min_n |x − n|.
    pub fn norm(&self) -> T {
        (self.x[0] * self.x[0] + self.x[1] * self.x[1]).sqrt()
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.x[0] - o.x[0], self.x[1] - o.x[1])
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.x[0] + o.x[0], self.x[1] + o.x[1])
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.x[0], -self.x[1])
    }
}

/// Spectral cutoff profile ϑ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffProfile {
    /// ϑ(ξ) = e^{−|ξ|²}.
    Gaussian,
    /// ϑ(ξ) = (1 − |ξ|²)² on |ξ| < 1.
    Compact,
}

impl CutoffProfile {
    /// ϑ as a function of |ξ|².
    pub fn eval_sq<T: Real>(&self, xi2: T) -> T {
        match self {
            CutoffProfile::Gaussian => (-xi2).exp(),
            CutoffProfile::Compact => {
                if xi2 < T::one() {
                    let a = T::one() - xi2;
                    a * a
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn eval<T: Real>(&self, xi: [T; 2]) -> T {
        self.eval_sq(xi[0] * xi[0] + xi[1] * xi[1])
    }

    /// Radius beyond which ϑ < 10⁻¹⁶ (exactly zero for the compact profile).
    pub fn support_radius(&self) -> f64 {
        match self {
            CutoffProfile::Gaussian => 37f64.sqrt(),
            CutoffProfile::Compact => 1.0,
        }
    }

    /// Largest |k_i| with ϑ(k/N) retained.
    pub fn k_max(&self, n: f64) -> i64 {
        (self.support_radius() * n).ceil() as i64
    }
}

/// Generalized exponential integral E_n(x) = ∫₁^∞ e^{−xs} s^{−n} ds, x ≥ 0.
pub fn expint<T: Real>(n: usize, x: T) -> T {
    let eps = T::tiny();
    let gamma = T::lit(EULER_GAMMA);
    if x == T::zero() {
        assert!(n > 1, "E_n(0) diverges for n ≤ 1");
        return T::one() / T::lit((n - 1) as f64);
    }
    if n == 0 {
        return (-x).exp() / x;
    }
    let nf = T::lit(n as f64);
    if x > T::one() {
        // modified Lentz on the continued fraction
        let big = T::max_value() / T::lit(1e10);
        let mut b = x + nf;
        let mut c = big;
        let mut d = T::one() / b;
        let mut h = d;
        for i in 1..10_000 {
            let fi = T::lit(i as f64);
            let an = -fi * (nf - T::one() + fi);
            b = b + T::lit(2.0);
            d = T::one() / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h = h * del;
            if (del - T::one()).abs() < eps {
                break;
            }
        }
        h * (-x).exp()
    } else {
        let mut ans = if n > 1 {
            T::one() / T::lit((n - 1) as f64)
        } else {
            -x.ln() - gamma
        };
        let mut fact = T::one();
        for i in 1..10_000 {
            fact = fact * (-x / T::lit(i as f64));
            let del = if i != n - 1 {
                -fact / (T::lit(i as f64) - nf + T::one())
            } else {
                let mut psi = -gamma;
                for ii in 1..n {
                    psi = psi + T::one() / T::lit(ii as f64);
                }
                fact * (-x.ln() + psi)
            };
            ans = ans + del;
            if del.abs() < ans.abs() * eps {
                break;
            }
        }
        ans
    }
}

/// Σ_{m≥1} (−z)^m/(m·m!), so that E₁(z) = −γ − ln z − series(z).
fn e1_series_tail<T: Real>(z: T) -> T {
    let mut term = T::one();
    let mut acc = T::zero();
    for m in 1..200 {
        term = term * (-z) / T::lit(m as f64);
        let d = term / T::lit(m as f64);
        acc = acc + d;
        if d.abs() <= T::tiny() * acc.abs().max(T::lit(1e-300)) {
            break;
        }
    }
    acc
}

/// E₁(z) + ln z, finite at z = 0.
fn e1_plus_log<T: Real>(z: T) -> T {
    if z < T::one() {
        -T::lit(EULER_GAMMA) - e1_series_tail(z)
    } else {
        expint(1, z) + z.ln()
    }
}

/// 1D periodized Gaussian p_t(s) = Σ_n (2πt)^{−1/2} e^{−(s−n)²/(2t)} by images.
pub fn heat_1d_images<T: Real>(t: T, s: T) -> T {
    let two = T::lit(2.0);
    let s = wrap(s);
    let nmax = ((two * t * T::lit(40.0)).sqrt() + two).to_f64_lossy().ceil() as i64;
    let norm = (two * T::PI() * t).sqrt().recip();
    let mut acc = T::zero();
    for n in -nmax..=nmax {
        let d = s - T::lit(n as f64);
        acc = acc + (-(d * d) / (two * t)).exp();
    }
    acc * norm
}

/// Same kernel by its Fourier series Σ_k e^{−2π²k²t} cos(2πks).
pub fn heat_1d_fourier<T: Real>(t: T, s: T) -> T {
    let two = T::lit(2.0);
    let pi = T::PI();
    let kmax = (T::lit(40.0) / (two * pi * pi * t)).sqrt().to_f64_lossy().ceil() as i64 + 1;
    let mut acc = T::one();
    for k in 1..=kmax {
        let kf = T::lit(k as f64);
        acc = acc + two * (-(two * pi * pi * kf * kf * t)).exp() * (two * pi * kf * s).cos();
    }
    acc
}

/// Default Ewald split time.
pub const T0: f64 = 0.05;

/// ψ^t(x) with the image sum for t ≤ t₀ and the Fourier series above it.
pub fn heat_kernel<T: Real>(t: T, x: TorusPoint<T>) -> Result<T> {
    if !(t > T::zero()) {
        return Err(invalid("heat kernel time must be positive"));
    }
    let f = if t <= T::lit(T0) {
        heat_1d_images
    } else {
        heat_1d_fourier
    };
    Ok(f(t, x.x[0]) * f(t, x.x[1]))
}

/// ∫_Λ |ψ^t − ψ^s| by a midpoint grid, doubled until the change is < 10⁻⁶.
pub fn heat_kernel_l1_distance(s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0) || s > t {
        return Err(invalid("need 0 < s <= t"));
    }
    if s == t {
        return Ok(0.0);
    }
    let eval = |n: usize| -> f64 {
        let h = 1.0 / n as f64;
        let pts: Vec<f64> = (0..n).map(|i| -0.5 + (i as f64 + 0.5) * h).collect();
        let pt: Vec<f64> = pts.iter().map(|&x| heat_kernel_1d(t, x)).collect();
        let ps: Vec<f64> = pts.iter().map(|&x| heat_kernel_1d(s, x)).collect();
        let mut acc = crate::scalar::CompensatedSum::new();
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += (pt[i] * pt[j] - ps[i] * ps[j]).abs();
            }
            acc.add(row);
        }
        acc.value() * h * h
    };
    let mut n = 64;
    let mut prev = eval(n);
    while n < 8192 {
        n *= 2;
        let cur = eval(n);
        if (cur - prev).abs() < 1e-6 {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(crate::Error::NotConverged(format!(
        "L1 heat-kernel distance at s={s}, t={t}"
    )))
}

fn heat_kernel_1d(t: f64, s: f64) -> f64 {
    if t <= T0 {
        heat_1d_images(t, s)
    } else {
        heat_1d_fourier(t, s)
    }
}

/// Evaluator for G, G_N, G_[ν] and G*G.
#[derive(Clone, Debug)]
pub struct GreenEvaluator<T> {
    pub kappa: T,
    /// Ewald split time.
    pub t0: T,
    /// Spectral cutoff of the long-time sum.
    k_spec: i64,
}

impl<T: Real> GreenEvaluator<T> {
    pub fn new(kappa: T) -> Result<Self> {
        if !(kappa > T::zero()) {
            return Err(invalid("kappa must be positive"));
        }
        // the short-time series in κt₀ alternates; keep κt₀ ≤ ½
        let t0 = T::lit(T0).min(T::lit(0.5) / kappa);
        let pi = T::PI();
        let k_spec = (T::lit(40.0) / (T::lit(2.0) * pi * pi * t0))
            .sqrt()
            .to_f64_lossy()
            .ceil() as i64;
        Ok(Self { kappa, t0, k_spec })
    }

    pub fn eigenvalue(&self, k: [i64; 2]) -> T {
        lambda(k, self.kappa)
    }

    /// ∫_{t_lo}^{t_hi} t^m e^{−κt} ψ^t(x) dt for t_hi ≤ t₀, by images.
    ///
    /// With `t_lo = None` the lower limit is 0; then for `m = 0` the
    /// n = 0 logarithm is either kept or, with `regular`, replaced by its
    /// finite part (so the result is the integral plus (1/π) ln|x|).
    fn short_time(&self, x: &TorusPoint<T>, m: usize, t_lo: Option<T>, t_hi: T, regular: bool) -> T {
        let two = T::lit(2.0);
        let pi = T::PI();
        let kappa = self.kappa;
        let mut total = T::zero();
        for n1 in -2i64..=2 {
            for n2 in -2i64..=2 {
                let d1 = x.x[0] - T::lit(n1 as f64);
                let d2 = x.x[1] - T::lit(n2 as f64);
                let r2 = d1 * d1 + d2 * d2;
                let z_hi = r2 / (two * t_hi);
                if z_hi > T::lit(40.0) {
                    continue;
                }
                let origin = n1 == 0 && n2 == 0;
                let z_lo = t_lo.map(|tl| r2 / (two * tl));
                let mut coef = T::one();
                let mut acc = T::zero();
                for j in 0..60usize {
                    if j > 0 {
                        coef = coef * (-kappa) / T::lit(j as f64);
                    }
                    let p = j + m;
                    let term = if origin && p == 0 {
                        match z_lo {
                            Some(zl) => {
                                if zl < T::one() {
                                    // E1(z_hi) − E1(z_lo) = ln(z_lo/z_hi) − tail(z_hi) + tail(z_lo)
                                    (t_hi / t_lo.unwrap()).ln() - e1_series_tail(z_hi)
                                        + e1_series_tail(zl)
                                } else {
                                    expint(1, z_hi) - expint(1, zl)
                                }
                            }
                            None => {
                                if regular {
                                    e1_plus_log(z_hi) + (two * t_hi).ln()
                                } else {
                                    expint(1, z_hi)
                                }
                            }
                        }
                    } else {
                        let hi = t_hi.powi(p as i32) * expint(p + 1, z_hi);
                        let lo = match (t_lo, z_lo) {
                            (Some(tl), Some(zl)) if zl <= T::lit(700.0) => {
                                tl.powi(p as i32) * expint(p + 1, zl)
                            }
                            _ => T::zero(),
                        };
                        hi - lo
                    };
                    let d = coef * term;
                    acc = acc + d;
                    if j > 2 && (coef * t_hi.powi(p as i32)).abs() < T::lit(1e-18) * acc.abs().max(T::tiny()) {
                        break;
                    }
                }
                total = total + acc;
            }
        }
        total / (two * pi)
    }

    /// Σ_k e^{−λ_k t}/λ_k^{1+m}·P_m(λ_k t) cos(2πk·x), the long-time part of
    /// ∫_t^∞ t'^m e^{−κt'} ψ^{t'} dt' for m ∈ {0, 1}.
    fn long_time(&self, x: &TorusPoint<T>, m: usize, t: T) -> T {
        let two = T::lit(2.0);
        let pi = T::PI();
        let kmax = self.k_spec.max(
            (T::lit(40.0) / (two * pi * pi * t)).sqrt().to_f64_lossy().ceil() as i64,
        );
        let c1: Vec<T> = (0..=kmax)
            .map(|k| (two * pi * T::lit(k as f64) * x.x[0]).cos())
            .collect();
        let c2: Vec<T> = (0..=kmax)
            .map(|k| (two * pi * T::lit(k as f64) * x.x[1]).cos())
            .collect();
        let mut acc = crate::scalar::CompensatedSum::new();
        for a in -kmax..=kmax {
            for b in -kmax..=kmax {
                let lam = self.eigenvalue([a, b]);
                if lam == T::zero() {
                    continue;
                }
                let e = (-lam * t).exp();
                let w = match m {
                    0 => e / lam,
                    _ => e * (t / lam + T::one() / (lam * lam)),
                };
                let c = c1[a.unsigned_abs() as usize] * c2[b.unsigned_abs() as usize];
                acc.add((w * c).to_f64_lossy());
            }
        }
        T::lit(acc.value())
    }

    /// G(x) = Σ_k e^{2πik·x}/λ_k; rejects x = 0.
    pub fn green(&self, x: TorusPoint<T>) -> Result<T> {
        if x.norm() == T::zero() {
            return Err(invalid("G diverges at the origin"));
        }
        Ok(self.short_time(&x, 0, None, self.t0, false) + self.long_time(&x, 0, self.t0))
    }

    /// G̃(x) = G(x) + (1/π) ln|x|_Λ, continuous through the origin.
    pub fn green_regular(&self, x: TorusPoint<T>) -> T {
        self.short_time(&x, 0, None, self.t0, true) + self.long_time(&x, 0, self.t0)
    }

    /// (G * G)(x) = Σ_k e^{2πik·x}/λ_k², finite everywhere.
    pub fn green_squared(&self, x: TorusPoint<T>) -> T {
        self.short_time(&x, 1, None, self.t0, false) + self.long_time(&x, 1, self.t0)
    }

    /// Σ_k 1/λ_k².
    pub fn sum_inv_lambda_sq(&self) -> T {
        self.green_squared(TorusPoint::origin())
    }

    /// Spectral-sum oracle Σ_{|k_i| ≤ k_max} cos(2πk·x)/λ_k.
    pub fn green_spectral(&self, x: TorusPoint<T>, k_max: i64) -> T {
        let two = T::lit(2.0);
        let pi = T::PI();
        let mut acc = crate::scalar::CompensatedSum::new();
        for a in -k_max..=k_max {
            let ca = (two * pi * T::lit(a as f64) * x.x[0]).cos();
            for b in -k_max..=k_max {
                let cb = (two * pi * T::lit(b as f64) * x.x[1]).cos();
                acc.add((ca * cb / self.eigenvalue([a, b])).to_f64_lossy());
            }
        }
        T::lit(acc.value())
    }

    /// Independent oracle: the k₂ sum done in closed form,
    /// Σ_{k₂} e^{2πik₂s}/(c + 2π²k₂²) = (1/2π²)(π/b)(e^{−2πb|s|} + e^{−2πb(1−|s|)})/(1 − e^{−2πb}),
    /// with b² = c/(2π²), leaving a single sum over k₁ that converges like e^{−2π|k₁||s|}.
    pub fn green_line_sum(&self, x: TorusPoint<T>, k1_max: i64) -> T {
        let two = T::lit(2.0);
        let pi = T::PI();
        let (mut p, mut s) = (x.x[0], x.x[1].abs());
        if p.abs() > s {
            std::mem::swap(&mut p, &mut s);
            s = s.abs();
        }
        let mut acc = crate::scalar::CompensatedSum::new();
        for k1 in -k1_max..=k1_max {
            let kf = T::lit(k1 as f64);
            let c = self.kappa + two * pi * pi * kf * kf;
            let b = (c / (two * pi * pi)).sqrt();
            let num = (-(two * pi * b * s)).exp() + (-(two * pi * b * (T::one() - s))).exp();
            let den = -(-(two * pi * b)).exp_m1();
            let line = (pi / b) * num / den / (two * pi * pi);
            acc.add((line * (two * pi * kf * p).cos()).to_f64_lossy());
        }
        T::lit(acc.value())
    }

    /// G_N(x) = Σ_k ϑ(k/N)/λ_k e^{2πik·x}.
    ///
    /// Gaussian profile: ϑ(k/N) = e^{−2π²|k|² t_N}, t_N = 1/(2π²N²), so
    /// G_N = e^{κt_N} ∫_{t_N}^∞ e^{−κt}ψ^t dt, evaluated with the same Ewald
    /// pieces as G. Compact profile: the finite sum.
    pub fn green_truncated(&self, x: TorusPoint<T>, n: T, profile: CutoffProfile) -> Result<T> {
        if !(n > T::zero()) {
            return Err(invalid("cutoff N must be positive"));
        }
        match profile {
            CutoffProfile::Gaussian => {
                let pi = T::PI();
                let tn = T::one() / (T::lit(2.0) * pi * pi * n * n);
                if tn >= self.t0 {
                    return Ok(self.green_truncated_direct(x, n, profile));
                }
                let val = self.short_time(&x, 0, Some(tn), self.t0, false)
                    + self.long_time(&x, 0, self.t0);
                Ok((self.kappa * tn).exp() * val)
            }
            CutoffProfile::Compact => Ok(self.green_truncated_direct(x, n, profile)),
        }
    }

    /// Direct lattice sum of G_N over the retained modes.
    pub fn green_truncated_direct(&self, x: TorusPoint<T>, n: T, profile: CutoffProfile) -> T {
        let two = T::lit(2.0);
        let pi = T::PI();
        let kmax = profile.k_max(n.to_f64_lossy());
        let c1: Vec<T> = (0..=kmax)
            .map(|k| (two * pi * T::lit(k as f64) * x.x[0]).cos())
            .collect();
        let c2: Vec<T> = (0..=kmax)
            .map(|k| (two * pi * T::lit(k as f64) * x.x[1]).cos())
            .collect();
        let mut acc = crate::scalar::CompensatedSum::new();
        for a in -kmax..=kmax {
            for b in -kmax..=kmax {
                let th = profile.eval([T::lit(a as f64) / n, T::lit(b as f64) / n]);
                if th == T::zero() {
                    continue;
                }
                let c = c1[a.unsigned_abs() as usize] * c2[b.unsigned_abs() as usize];
                acc.add((th * c / self.eigenvalue([a, b])).to_f64_lossy());
            }
        }
        T::lit(acc.value())
    }

    /// Quantum Green function G_[ν](x) = Σ_k ν/(e^{νλ_k} − 1) e^{2πik·x}.
    pub fn green_quantum(&self, x: TorusPoint<T>, nu: T) -> Result<T> {
        if !(nu > T::zero()) {
            return Err(invalid("nu must be positive"));
        }
        let two = T::lit(2.0);
        let pi = T::PI();
        // ν e^{−νλ} < 10⁻¹⁶ν beyond νλ = 37
        let lam_max = T::lit(37.0) / nu;
        let kmax = ((lam_max - self.kappa).max(T::zero()) / (two * pi * pi))
            .sqrt()
            .to_f64_lossy()
            .ceil() as i64;
        let mut acc = crate::scalar::CompensatedSum::new();
        for a in -kmax..=kmax {
            let ca = (two * pi * T::lit(a as f64) * x.x[0]).cos();
            for b in -kmax..=kmax {
                let lam = self.eigenvalue([a, b]);
                if lam > lam_max {
                    continue;
                }
                let cb = (two * pi * T::lit(b as f64) * x.x[1]).cos();
                acc.add((nu / (nu * lam).exp_m1() * ca * cb).to_f64_lossy());
            }
        }
        Ok(T::lit(acc.value()))
    }
}

/// Zero-mean Green function of −Δ/2, Σ_{k≠0} e^{2πik·x}/(2π²|k|²), by the
/// κ = 0 Ewald split; `regular` adds (1/π) ln|x|_Λ.
pub fn zero_mean_green<T: Real>(x: TorusPoint<T>, regular: bool) -> Result<T> {
    if !regular && x.norm() == T::zero() {
        return Err(invalid("zero-mean Green function diverges at the origin"));
    }
    let t0 = T::lit(T0);
    let pi = T::PI();
    let k_spec = (T::lit(40.0) / (T::lit(2.0) * pi * pi * t0))
        .sqrt()
        .to_f64_lossy()
        .ceil() as i64;
    let ev = GreenEvaluator {
        kappa: T::zero(),
        t0,
        k_spec,
    };
    Ok(ev.short_time(&x, 0, None, t0, regular) - t0 + ev.long_time(&x, 0, t0))
}

/// Tabulate G on the L×L grid of cell centres as (x1, x2, value) CSV.
pub fn write_green_table<W: Write>(green: &GreenEvaluator<f64>, l: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x1", "x2", "value"])?;
    let h = 1.0 / l as f64;
    for i in 0..l {
        for j in 0..l {
            let p = TorusPoint::new(-0.5 + (i as f64 + 0.5) * h, -0.5 + (j as f64 + 0.5) * h);
            let g = green.green(p)?;
            w.write_record([p.x[0].to_string(), p.x[1].to_string(), g.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::duffy_square;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn g1() -> GreenEvaluator<f64> {
        GreenEvaluator::new(1.0).unwrap()
    }

    #[test]
    fn eigenvalue_examples() {
        assert_eq!(eigenvalue([0, 0], 1.0).unwrap(), 1.0);
        assert!((eigenvalue([1, 0], 1.0f64).unwrap() - 20.739_208_802_178_716).abs() < 1e-12);
        assert!((eigenvalue([1, 1], 1.0f64).unwrap() - 40.478_417_604_357_43).abs() < 1e-12);
        assert!(eigenvalue([1, 0], 0.0f64).is_err());
        let lat = ModeLattice::new(3, 2.0).unwrap();
        for k in lat.modes() {
            assert_eq!(lat.eigenvalue(k), lat.eigenvalue([-k[0], -k[1]]));
            assert!(lat.eigenvalue(k) >= 2.0);
        }
    }

    #[test]
    fn expint_matches_reference_values() {
        // E1(1) = 0.21938393439552, E1(0.1) = 1.82292395841939, E2(2) = 0.03753426182049
        assert!((expint(1, 1.0f64) - 0.219_383_934_395_520_3).abs() < 1e-14);
        assert!((expint(1, 0.1f64) - 1.822_923_958_419_390_7).abs() < 1e-13);
        assert!((expint(2, 2.0f64) - 0.037_534_261_820_491_2).abs() < 1e-14);
        assert!((e1_plus_log(0.3f64) - (expint(1, 0.3) + 0.3f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn heat_kernel_representations_agree_on_grid() {
        for &t in &[0.01, 0.05, 0.1, 1.0] {
            for i in 0..64 {
                let s = -0.5 + i as f64 / 64.0;
                let a = heat_1d_images(t, s);
                let b = heat_1d_fourier(t, s);
                for j in 0..64 {
                    let s2 = -0.5 + j as f64 / 64.0;
                    let a2 = a * heat_1d_images(t, s2);
                    let b2 = b * heat_1d_fourier(t, s2);
                    assert!(((a2 - b2) / b2).abs() < 1e-8 || (a2 - b2).abs() < 1e-200);
                }
            }
        }
        let t0 = T0;
        assert!(((heat_1d_images(t0, 0.3) - heat_1d_fourier(t0, 0.3)) / heat_1d_fourier(t0, 0.3)).abs() < 1e-10);
    }

    #[test]
    fn heat_kernel_examples() {
        let v = heat_kernel(0.01, TorusPoint::origin()).unwrap();
        assert!((v - 1.0 / (2.0 * PI * 0.01)).abs() < 1e-12);
        let far: f64 = heat_kernel(50.0, TorusPoint::new(0.3, -0.2)).unwrap();
        assert!((far - 1.0).abs() < 1e-12);
        assert!(heat_kernel(0.0, TorusPoint::origin()).is_err());
        // unit mass by midpoint rule (spectrally accurate for periodic integrands)
        let n = 64;
        let mass: f64 = (0..n)
            .map(|i| heat_1d_images(0.02, -0.5 + (i as f64 + 0.5) / n as f64))
            .sum::<f64>()
            / n as f64;
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ewald_green_matches_closed_form_line_sum() {
        let g = g1();
        for &(a, b) in &[(0.25, 0.0), (0.1, 0.3), (-0.37, 0.05), (0.01, 0.02), (0.5, 0.5), (0.2, -0.45)] {
            let p = TorusPoint::new(a, b);
            let e = g.green(p).unwrap();
            let o = g.green_line_sum(p, 4000);
            assert!((e - o).abs() < 1e-8, "{a},{b}: {e} vs {o}");
        }
    }

    #[test]
    fn ewald_green_matches_for_other_kappa() {
        for &kappa in &[0.3, 4.0, 25.0] {
            let g = GreenEvaluator::<f64>::new(kappa).unwrap();
            let p = TorusPoint::new(0.13, -0.41);
            assert!((g.green(p).unwrap() - g.green_line_sum(p, 2000)).abs() < 1e-8);
        }
    }

    #[test]
    fn regular_part_is_bounded_and_continuous() {
        let g = g1();
        let mut vals = Vec::new();
        for &r in &[1e-2, 1e-3, 1e-4] {
            let p = TorusPoint::new(r * 0.6, r * 0.8);
            let direct = g.green(p).unwrap() + r.ln() / PI;
            let reg = g.green_regular(p);
            assert!((direct - reg).abs() < 1e-10);
            vals.push(reg);
        }
        let g0 = g.green_regular(TorusPoint::origin());
        for v in &vals {
            assert!((v - g0).abs() < 1e-2);
        }
        // frozen band for κ = 1 (regression baseline from the line-sum oracle at r = 10⁻²)
        let p = TorusPoint::new(0.006, 0.008);
        let oracle = g.green_line_sum(p, 20000) + 0.01f64.ln() / PI;
        assert!((vals[0] - oracle).abs() < 1e-7);
        assert!((g0 - 0.567_955_491_944_253).abs() < 1e-9, "G̃(0) = {g0}");
    }

    #[test]
    fn green_squared_is_parseval_of_green() {
        let g = g1();
        let s2 = g.sum_inv_lambda_sq();
        // direct lattice sum plus integral tail
        let k = 400i64;
        let mut direct = 0.0;
        for a in -k..=k {
            for b in -k..=k {
                direct += 1.0 / g.eigenvalue([a, b]).powi(2);
            }
        }
        let a = k as f64 + 0.5;
        let tail = (PI + 2.0) / (8.0 * PI.powi(4) * a * a);
        assert!((s2 - direct - tail).abs() < 1e-8, "{s2} vs {}", direct + tail);
        let rule = duffy_square(0.5, 32, 18);
        let int = rule.integrate(|p| g.green(TorusPoint::new(p[0], p[1])).unwrap().powi(2));
        assert!((int - s2).abs() < 1e-6, "{int} vs {s2}");
        let mean = rule.integrate(|p| g.green(TorusPoint::new(p[0], p[1])).unwrap());
        assert!((mean - 1.0).abs() < 1e-8);
    }

    #[test]
    fn truncated_green_fast_route_matches_lattice_sum() {
        let g = g1();
        for &n in &[2.0, 8.0, 32.0] {
            for &(a, b) in &[(0.0, 0.0), (0.25, 0.0), (0.01, -0.003), (0.4, 0.33)] {
                let p = TorusPoint::new(a, b);
                let fast = g.green_truncated(p, n, CutoffProfile::Gaussian).unwrap();
                let direct = g.green_truncated_direct(p, n, CutoffProfile::Gaussian);
                assert!((fast - direct).abs() < 1e-9, "N={n} ({a},{b}): {fast} vs {direct}");
            }
        }
    }

    #[test]
    fn truncated_green_log_growth_and_limit() {
        let g = g1();
        let ns = [16.0, 32.0, 64.0, 128.0];
        let ys: Vec<f64> = ns
            .iter()
            .map(|&n| g.green_truncated(TorusPoint::origin(), n, CutoffProfile::Gaussian).unwrap())
            .collect();
        let xs: Vec<f64> = ns.iter().map(|n: &f64| n.ln()).collect();
        let slope = crate::mc::fit_slope(&xs, &ys);
        assert!((0.29..=0.35).contains(&slope), "slope {slope}");
        let p = TorusPoint::new(0.25, 0.0);
        let full = g.green(p).unwrap();
        let mut prev = f64::INFINITY;
        for &n in &[64.0, 128.0, 256.0, 512.0] {
            let d = (g.green_truncated(p, n, CutoffProfile::Gaussian).unwrap() - full).abs();
            assert!(d <= prev);
            prev = d;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn truncated_green_is_mollified_green() {
        // G_N = G * ρ_N with ρ(x) = π e^{−π²|x|²}, periodized
        let g = g1();
        let n: f64 = 3.0;
        let rule = duffy_square(0.5, 48, 18);
        let rho = |z: [f64; 2]| -> f64 {
            let mut acc = 0.0;
            for a in -1..=1 {
                for b in -1..=1 {
                    let d1 = z[0] - a as f64;
                    let d2 = z[1] - b as f64;
                    acc += PI * n * n * (-(PI * n) * (PI * n) * (d1 * d1 + d2 * d2)).exp();
                }
            }
            acc
        };
        for &(a, b) in &[(0.0, 0.0), (0.1, 0.2), (0.3, -0.1), (0.45, 0.45), (-0.2, 0.05)] {
            let x = TorusPoint::new(a, b);
            let conv = rule.integrate(|z| {
                let y = TorusPoint::new(x.x[0] - z[0], x.x[1] - z[1]);
                g.green(TorusPoint::new(z[0], z[1])).unwrap() * rho(y.x)
            });
            let gn = g.green_truncated(x, n, CutoffProfile::Gaussian).unwrap();
            assert!((conv - gn).abs() < 1e-4, "({a},{b}): {conv} vs {gn}");
        }
    }

    #[test]
    fn truncated_green_compact_profile_is_finite_sum() {
        let g = g1();
        let p = TorusPoint::new(0.2, 0.1);
        let v = g.green_truncated(p, 1.0, CutoffProfile::Compact).unwrap();
        // only k = 0 survives at N = 1
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantum_green_examples() {
        let g = g1();
        // the k = 0 term alone
        let nu: f64 = 0.5;
        assert!((nu / nu.exp_m1() - 0.770_747_041_268_399_8).abs() < 1e-12);
        let p = TorusPoint::new(0.3, 0.1);
        let gq = g.green_quantum(p, 1e-3).unwrap();
        let gc = g.green(p).unwrap();
        assert!(((gq - gc) / gc).abs() < 1e-2);
        assert_eq!(g.green_quantum(p, 0.2).unwrap(), g.green_quantum(p.neg(), 0.2).unwrap());
    }

    #[test]
    fn zero_mean_green_matches_spectral_sum() {
        let p = TorusPoint::new(0.21, -0.13);
        let e: f64 = zero_mean_green(p, false).unwrap();
        // G_κ − 1/κ → G₀ as κ → 0, error O(κ)
        let kappa = 1e-6;
        let s = GreenEvaluator::new(kappa).unwrap().green_line_sum(p, 3000) - 1.0 / kappa;
        assert!((e - s).abs() < 1e-8, "{e} vs {s}");
        // zero mean
        let rule = duffy_square(0.5, 24, 16);
        let m = rule.integrate(|q| zero_mean_green(TorusPoint::new(q[0], q[1]), false).unwrap());
        assert!(m.abs() < 1e-9);
    }

    #[test]
    fn l1_distance_examples() {
        assert_eq!(heat_kernel_l1_distance(0.3, 0.3).unwrap(), 0.0);
        let d = heat_kernel_l1_distance(0.1, 0.2).unwrap();
        assert!(d <= 2.0 * 2f64.ln());
        let d = heat_kernel_l1_distance(0.01, 1.0).unwrap();
        assert!(d <= 2.0 * 100f64.ln());
        assert!(heat_kernel_l1_distance(0.2, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn green_is_even(a in -0.5f64..0.5, b in -0.5f64..0.5) {
            prop_assume!(a.abs() + b.abs() > 1e-3);
            let g = g1();
            let p = TorusPoint::new(a, b);
            let d = g.green(p).unwrap() - g.green(p.neg()).unwrap();
            prop_assert!(d.abs() < 1e-12);
        }

        #[test]
        fn torus_norm_bounds(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let p = TorusPoint::new(a, b);
            prop_assert!(p.norm() <= 2f64.sqrt() / 2.0 + 1e-15);
            prop_assert!((p.norm() - p.neg().norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn single_precision_evaluator_tracks_double() {
        let g32 = GreenEvaluator::<f32>::new(1.0).unwrap();
        let g64 = g1();
        let v32 = g32.green(TorusPoint::new(0.2f32, 0.1)).unwrap() as f64;
        let v64 = g64.green(TorusPoint::new(0.2, 0.1)).unwrap();
        assert!((v32 - v64).abs() < 1e-4);
    }
}
