//! Potentials v^ε, counterterms, and the realized interactions V_N, V^ε_N, W^ε_N.
//!
//! With f = |φ|² − G_N(0) on the grid, hats denoting h²·DFT (h = 1/L) and
//! K = v^ε G_N pointwise on the grid offsets,
//!
//!   W^ε = ½ Σ_p v̂(p)|f̂(p)|² − τ f̂(0) − E,
//!   W^ε − V^ε = Σ_p (K̂(p) − τ)(|c_p|² − g_p) + ½ h² Σ_z v G_N² − E,
//!
//! which is the finite form of the identity relating the two interactions.

use crate::fft2::{bin, freq, Fft2};
use crate::gff::{CutoffField, SpectralTable};
use crate::quadrature::{duffy_square, gauss_legendre_on};
use crate::scalar::ksum;
use crate::torus::{lambda, CutoffProfile, GreenEvaluator, TorusPoint};
use crate::{invalid, Result, C64};
use std::f64::consts::PI;
use std::sync::OnceLock;

const TABLE_NODES: usize = 4096;

fn beta(s: f64) -> f64 {
    let a = 1.0 - 4.0 * s * s;
    if a <= 0.0 {
        0.0
    } else {
        (-1.0 / a).exp()
    }
}

fn beta_prime(s: f64) -> f64 {
    let a = 1.0 - 4.0 * s * s;
    if a <= 0.0 {
        0.0
    } else {
        (-1.0 / a).exp() * (-8.0 * s / (a * a))
    }
}

/// Composite Gauss rule on [−½, ½] for the bump convolutions.
fn bump_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let panels = 64;
        let mut xs = Vec::new();
        let mut ws = Vec::new();
        for p in 0..panels {
            let a = -0.5 + p as f64 / panels as f64;
            let (x, w) = gauss_legendre_on(20, a, a + 1.0 / panels as f64);
            xs.extend(x);
            ws.extend(w);
        }
        (xs, ws)
    })
}

struct BumpTable {
    w: Vec<f64>,
    dw: Vec<f64>,
    beta_mass: f64,
}

fn bump_table() -> &'static BumpTable {
    static TABLE: OnceLock<BumpTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let (xs, ws) = bump_rule();
        let beta_mass: f64 = xs.iter().zip(ws).map(|(&x, &w)| w * beta(x)).sum();
        let norm = 1.0 / (beta_mass * beta_mass);
        let mut w = Vec::with_capacity(TABLE_NODES + 1);
        let mut dw = Vec::with_capacity(TABLE_NODES + 1);
        for i in 0..=TABLE_NODES {
            let s = i as f64 / TABLE_NODES as f64;
            // (β*β)(s) = ∫ β(t) β(s − t) dt
            let mut a = 0.0;
            let mut b = 0.0;
            for (&t, &wt) in xs.iter().zip(ws) {
                let bt = beta(t);
                if bt == 0.0 {
                    continue;
                }
                a += wt * bt * beta(s - t);
                b += wt * bt * beta_prime(s - t);
            }
            w.push(a * norm);
            dw.push(b * norm);
        }
        BumpTable { w, dw, beta_mass }
    })
}

/// Normalized 1D bump w = (β*β)/(∫β)², supported on |s| < 1, ∫w = 1.
pub fn bump_w(s: f64) -> f64 {
    let s = s.abs();
    if s >= 1.0 {
        return 0.0;
    }
    let t = bump_table();
    let u = s * TABLE_NODES as f64;
    let i = (u.floor() as usize).min(TABLE_NODES - 1);
    let r = u - i as f64;
    let h = 1.0 / TABLE_NODES as f64;
    // cubic Hermite
    let (y0, y1) = (t.w[i], t.w[i + 1]);
    let (d0, d1) = (t.dw[i] * h, t.dw[i + 1] * h);
    let r2 = r * r;
    let r3 = r2 * r;
    (2.0 * r3 - 3.0 * r2 + 1.0) * y0
        + (r3 - 2.0 * r2 + r) * d0
        + (-2.0 * r3 + 3.0 * r2) * y1
        + (r3 - r2) * d1
}

/// ŵ(ξ) = (β̂(ξ)/β̂(0))², nonnegative.
pub fn bump_w_hat(xi: f64) -> f64 {
    let (xs, ws) = bump_rule();
    let t = bump_table();
    let b: f64 = xs
        .iter()
        .zip(ws)
        .map(|(&x, &w)| w * beta(x) * (2.0 * PI * xi * x).cos())
        .sum();
    let r = b / t.beta_mass;
    r * r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialFamily {
    /// v = w ⊗ w with w a normalized self-convolved bump.
    BumpConvolution,
    /// Coulomb kernel convolved with a positive mollifier δ_ε.
    MollifiedCoulomb,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PotentialSpec {
    pub family: PotentialFamily,
    pub eps: f64,
}

impl PotentialSpec {
    pub fn new(family: PotentialFamily, eps: f64) -> Result<Self> {
        if !(eps > 0.0) || eps > 0.5 {
            return Err(invalid("epsilon must lie in (0, 1/2]"));
        }
        Ok(Self { family, eps })
    }

    pub fn bump(eps: f64) -> Result<Self> {
        Self::new(PotentialFamily::BumpConvolution, eps)
    }

    pub fn coulomb(eps: f64) -> Result<Self> {
        Self::new(PotentialFamily::MollifiedCoulomb, eps)
    }

    /// Largest |k_i| in the Coulomb family's finite Fourier sum.
    fn coulomb_kmax(&self) -> i64 {
        (1.0 / self.eps).ceil() as i64
    }

    /// Coulomb mollifier Fourier profile ψ(ξ) = ω(ξ₁)ω(ξ₂) with ω = w/w(0).
    fn mollifier_hat(&self, k: [i64; 2]) -> f64 {
        let w0 = bump_w(0.0);
        bump_w(self.eps * k[0] as f64) * bump_w(self.eps * k[1] as f64) / (w0 * w0)
    }

    /// v̂^ε(k).
    pub fn fourier(&self, k: [i64; 2]) -> f64 {
        match self.family {
            PotentialFamily::BumpConvolution => {
                bump_w_hat(self.eps * k[0] as f64) * bump_w_hat(self.eps * k[1] as f64)
            }
            PotentialFamily::MollifiedCoulomb => {
                if k == [0, 0] {
                    1.0
                } else {
                    let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
                    self.mollifier_hat(k) / (4.0 * PI * PI * k2)
                }
            }
        }
    }

    /// Periodized v^ε(x).
    pub fn eval(&self, x: TorusPoint<f64>) -> f64 {
        match self.family {
            PotentialFamily::BumpConvolution => {
                let e = self.eps;
                bump_w(x.x[0] / e) * bump_w(x.x[1] / e) / (e * e)
            }
            PotentialFamily::MollifiedCoulomb => {
                let km = self.coulomb_kmax();
                let mut acc = crate::CompensatedSum::new();
                acc.add(1.0);
                for a in -km..=km {
                    for b in -km..=km {
                        if a == 0 && b == 0 {
                            continue;
                        }
                        let c = self.fourier([a, b]);
                        if c == 0.0 {
                            continue;
                        }
                        let ph = 2.0 * PI * (a as f64 * x.x[0] + b as f64 * x.x[1]);
                        acc.add(c * ph.cos());
                    }
                }
                acc.value()
            }
        }
    }

    /// Half-width of the support (None when not compactly supported).
    pub fn support(&self) -> Option<f64> {
        match self.family {
            PotentialFamily::BumpConvolution => Some(self.eps),
            PotentialFamily::MollifiedCoulomb => None,
        }
    }

    /// Grid kernel v(z/L), row-major over offsets, with h² Σ v = v̂(0) = 1.
    ///
    /// The bump family is sampled and renormalized to unit mass, so the
    /// completed-square identity of W^ε holds exactly on the grid.
    pub fn grid_kernel(&self, l: usize) -> Vec<f64> {
        match self.family {
            PotentialFamily::BumpConvolution => {
                let mut v = vec![0.0; l * l];
                let r = (self.eps * l as f64).ceil() as i64;
                let w1: Vec<f64> = (-r..=r).map(|j| bump_w(j as f64 / (l as f64 * self.eps))).collect();
                for a in -r..=r {
                    for b in -r..=r {
                        v[bin(a, l) * l + bin(b, l)] +=
                            w1[(a + r) as usize] * w1[(b + r) as usize] / (self.eps * self.eps);
                    }
                }
                let h2 = 1.0 / (l * l) as f64;
                let mass = ksum(v.iter().copied()) * h2;
                v.iter_mut().for_each(|x| *x /= mass);
                v
            }
            PotentialFamily::MollifiedCoulomb => {
                let vh = self.grid_fourier(l);
                let mut d: Vec<C64> = vh.iter().map(|&c| C64::new(c, 0.0)).collect();
                Fft2::new(l).inverse(&mut d);
                d.into_iter().map(|c| c.re).collect()
            }
        }
    }

    /// v̂ of the grid kernel at each bin: h²·DFT(v_grid).
    pub fn grid_fourier(&self, l: usize) -> Vec<f64> {
        match self.family {
            PotentialFamily::BumpConvolution => {
                let v = self.grid_kernel(l);
                let h2 = 1.0 / (l * l) as f64;
                Fft2::new(l)
                    .forward_real(&v)
                    .into_iter()
                    .map(|c| c.re * h2)
                    .collect()
            }
            PotentialFamily::MollifiedCoulomb => {
                let mut out = vec![0.0; l * l];
                let km = self.coulomb_kmax();
                for a in -km..=km {
                    for b in -km..=km {
                        out[bin(a, l) * l + bin(b, l)] += self.fourier([a, b]);
                    }
                }
                out
            }
        }
    }

    /// ‖v^ε‖_{L^q(Λ)} by a product Gauss rule on the grid cells.
    pub fn lq_norm(&self, q: f64) -> f64 {
        let rule = duffy_square(0.5, 24, 4);
        rule.integrate(|p| self.eval(TorusPoint::new(p[0], p[1])).abs().powf(q))
            .powf(1.0 / q)
    }
}

/// ‖v‖_{L^q} of the unmollified torus Coulomb kernel 1 + ½G₀, G₀ the zero-mean
/// Green function of −Δ/2.
pub fn coulomb_lq_norm(q: f64) -> Result<f64> {
    let rule = duffy_square(0.5, 32, 16);
    let err = std::cell::RefCell::new(None);
    let val = rule.integrate(|p| match crate::torus::zero_mean_green(TorusPoint::new(p[0], p[1]), false) {
        Ok(g) => (1.0 + 0.5 * g).abs().powf(q),
        Err(e) => {
            *err.borrow_mut() = Some(e);
            0.0
        }
    });
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(val.powf(1.0 / q)),
    }
}

/// Which modes a spectral counterterm sums over.
#[derive(Clone, Debug, PartialEq)]
pub enum ModeCutoff {
    Full,
    Modes(Vec<[i64; 2]>),
}

/// Renormalization constants for one (v^ε, ν, κ).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct CountertermSet {
    pub tau_eps: f64,
    pub e_eps: f64,
    pub rho_nu: f64,
    pub alpha: f64,
    pub theta: f64,
    pub t_eps: f64,
}

impl CountertermSet {
    pub fn from_parts(tau_eps: f64, e_eps: f64, rho_nu: f64) -> Self {
        Self {
            tau_eps,
            e_eps,
            rho_nu,
            alpha: rho_nu + tau_eps,
            theta: 0.5 * rho_nu * rho_nu + tau_eps * rho_nu - e_eps,
            t_eps: 0.5 * tau_eps * tau_eps + e_eps,
        }
    }
}

/// ϱ_ν = Σ_k ν/(e^{νλ_k} − 1).
pub fn rho_nu(nu: f64, kappa: f64, cutoff: &ModeCutoff) -> Result<f64> {
    if !(nu > 0.0) || !(kappa > 0.0) {
        return Err(invalid("nu and kappa must be positive"));
    }
    let term = |k: [i64; 2]| nu / (nu * lambda(k, kappa)).exp_m1();
    Ok(match cutoff {
        ModeCutoff::Full => {
            let kmax = ((40.0 / nu) / (2.0 * PI * PI)).sqrt().ceil() as i64 + 1;
            let mut acc = crate::CompensatedSum::new();
            for a in -kmax..=kmax {
                for b in -kmax..=kmax {
                    acc.add(term([a, b]));
                }
            }
            acc.value()
        }
        ModeCutoff::Modes(ms) => ksum(ms.iter().map(|&k| term(k))),
    })
}

/// τ^ε = ∫ v^ε G and E^ε = ½ ∫ v^ε G² by singular-corner quadrature; the
/// order is raised until both change by less than 10⁻⁹ relative.
pub fn tau_and_energy(spec: &PotentialSpec, kappa: f64) -> Result<(f64, f64)> {
    let green = GreenEvaluator::new(kappa)?;
    let half = spec.support().unwrap_or(0.5);
    let compute = |order: usize, levels: usize| -> Result<(f64, f64)> {
        let rule = duffy_square(half, order, levels);
        let mut t = crate::CompensatedSum::new();
        let mut e = crate::CompensatedSum::new();
        for (p, &w) in rule.nodes.iter().zip(&rule.weights) {
            let x = TorusPoint::new(p[0], p[1]);
            let v = spec.eval(x);
            if v == 0.0 {
                continue;
            }
            let g = green.green(x)?;
            t.add(w * v * g);
            e.add(0.5 * w * v * g * g);
        }
        Ok((t.value(), e.value()))
    };
    let mut prev = compute(16, 12)?;
    for &(o, lv) in &[(24, 16), (32, 20), (40, 24)] {
        let cur = compute(o, lv)?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        if close(cur.0, prev.0) && close(cur.1, prev.1) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(crate::Error::NotConverged(format!(
        "counterterm quadrature at eps = {}",
        spec.eps
    )))
}

/// Spectral oracle for τ^ε: Σ_k v̂^ε(k)/λ_k over |εk_i| ≤ ξ_max.
pub fn tau_fourier(spec: &PotentialSpec, kappa: f64, xi_max: f64) -> f64 {
    let km = (xi_max / spec.eps).ceil() as i64;
    match spec.family {
        PotentialFamily::BumpConvolution => {
            let w1: Vec<f64> = (0..=km).map(|k| bump_w_hat(spec.eps * k as f64)).collect();
            let mut acc = crate::CompensatedSum::new();
            for a in -km..=km {
                for b in -km..=km {
                    acc.add(w1[a.unsigned_abs() as usize] * w1[b.unsigned_abs() as usize] / lambda([a, b], kappa));
                }
            }
            acc.value()
        }
        PotentialFamily::MollifiedCoulomb => {
            let km = spec.coulomb_kmax();
            let mut acc = crate::CompensatedSum::new();
            for a in -km..=km {
                for b in -km..=km {
                    acc.add(spec.fourier([a, b]) / lambda([a, b], kappa));
                }
            }
            acc.value()
        }
    }
}

/// Full counterterm set. `nu` may be `None` when only τ^ε, E^ε are wanted.
pub fn counterterms(spec: &PotentialSpec, nu: Option<f64>, kappa: f64, cutoff: &ModeCutoff) -> Result<CountertermSet> {
    let (tau, e) = tau_and_energy(spec, kappa)?;
    let rho = match nu {
        Some(nu) => rho_nu(nu, kappa, cutoff)?,
        None => 0.0,
    };
    Ok(CountertermSet::from_parts(tau, e, rho))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InteractionKind {
    #[serde(rename = "V_N")]
    VN,
    #[serde(rename = "V_eps_N")]
    VEpsN,
    #[serde(rename = "W_eps_N")]
    WEpsN,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct InteractionValue {
    pub value: f64,
    pub kind: InteractionKind,
    pub n: f64,
    pub eps: f64,
    pub kappa: f64,
}

/// Precomputed spectral data to evaluate all three interactions on fields
/// drawn from one [`SpectralTable`].
#[derive(Clone, Debug)]
pub struct Interactions {
    pub spec: PotentialSpec,
    pub l: usize,
    pub n: f64,
    pub kappa: f64,
    pub g0: f64,
    pub tau: f64,
    pub energy: f64,
    /// v̂ per bin.
    pub v_hat: Vec<f64>,
    /// K̂ = h²·DFT(v G_N) per bin.
    pub k_hat: Vec<f64>,
    /// ½ h² Σ_z v(z) G_N(z)².
    pub half_vg2: f64,
    /// Grid covariance G_N(z).
    pub cov: Vec<f64>,
    /// Grid potential.
    pub v_grid: Vec<f64>,
}

impl Interactions {
    /// Uses the continuum counterterms τ^ε, E^ε.
    pub fn new(table: &SpectralTable, spec: &PotentialSpec) -> Result<Self> {
        let (tau, e) = tau_and_energy(spec, table.kappa)?;
        Ok(Self::with_counterterms(table, spec, tau, e))
    }

    pub fn with_counterterms(table: &SpectralTable, spec: &PotentialSpec, tau: f64, energy: f64) -> Self {
        let l = table.l;
        let h2 = 1.0 / (l * l) as f64;
        let cov = table.covariance_grid();
        let v_grid = spec.grid_kernel(l);
        let v_hat = spec.grid_fourier(l);
        let kg: Vec<f64> = v_grid.iter().zip(&cov).map(|(v, g)| v * g).collect();
        let k_hat = table
            .fft
            .forward_real(&kg)
            .into_iter()
            .map(|c| c.re * h2)
            .collect();
        let half_vg2 = 0.5 * h2 * ksum(kg.iter().zip(&cov).map(|(k, g)| k * g));
        let n = match table.kind {
            crate::gff::FieldKind::Cutoff { n } => n,
            crate::gff::FieldKind::Increment { m, .. } => m,
        };
        Self {
            spec: *spec,
            l,
            n,
            kappa: table.kappa,
            g0: table.g0(),
            tau,
            energy,
            v_hat,
            k_hat,
            half_vg2,
            cov,
            v_grid,
        }
    }

    fn value(&self, v: f64, kind: InteractionKind) -> InteractionValue {
        InteractionValue {
            value: v,
            kind,
            n: self.n,
            eps: self.spec.eps,
            kappa: self.kappa,
        }
    }

    /// f̂ = h²·DFT(|φ|² − G_N(0)).
    fn f_hat(&self, field: &CutoffField) -> Vec<C64> {
        let h2 = 1.0 / (self.l * self.l) as f64;
        let f: Vec<f64> = field.grid().iter().map(|p| p.norm_sqr() - self.g0).collect();
        let mut out = field.table.fft.forward_real(&f);
        out.iter_mut().for_each(|c| *c *= h2);
        out
    }

    fn quad_form(&self, fh: &[C64]) -> f64 {
        0.5 * ksum(fh.iter().zip(&self.v_hat).map(|(c, v)| v * c.norm_sqr()))
    }

    pub fn v_n(&self, field: &CutoffField) -> InteractionValue {
        let h2 = 1.0 / (self.l * self.l) as f64;
        let g = self.g0;
        let s = ksum(field.grid().iter().map(|p| {
            let r = p.norm_sqr();
            r * r - 4.0 * g * r + 2.0 * g * g
        }));
        self.value(0.5 * h2 * s, InteractionKind::VN)
    }

    pub fn w_eps(&self, field: &CutoffField) -> InteractionValue {
        let fh = self.f_hat(field);
        let w = self.quad_form(&fh) - self.tau * fh[0].re - self.energy;
        self.value(w, InteractionKind::WEpsN)
    }

    pub fn v_eps(&self, field: &CutoffField) -> InteractionValue {
        let fh = self.f_hat(field);
        let cross = ksum(field.coeffs.iter().zip(&self.k_hat).map(|(c, k)| k * c.norm_sqr()));
        self.value(self.quad_form(&fh) - cross + self.half_vg2, InteractionKind::VEpsN)
    }

    /// (V_N, V^ε_N, W^ε_N) sharing one FFT.
    pub fn all(&self, field: &CutoffField) -> [f64; 3] {
        let fh = self.f_hat(field);
        let q = self.quad_form(&fh);
        let cross = ksum(field.coeffs.iter().zip(&self.k_hat).map(|(c, k)| k * c.norm_sqr()));
        [
            self.v_n(field).value,
            q - cross + self.half_vg2,
            q - self.tau * fh[0].re - self.energy,
        ]
    }

    /// W^ε − V^ε = Σ_p (K̂ − τ)(|c_p|² − g_p) + ½h²ΣvG² − E.
    pub fn w_minus_v(&self, field: &CutoffField) -> f64 {
        ksum(
            field
                .coeffs
                .iter()
                .zip(&self.k_hat)
                .zip(&field.table.var)
                .map(|((c, k), g)| (k - self.tau) * (c.norm_sqr() - g)),
        ) + self.half_vg2
            - self.energy
    }

    /// T^ε = τ²/2 + E.
    pub fn t_eps(&self) -> f64 {
        0.5 * self.tau * self.tau + self.energy
    }

    /// Completed square ½⟨f − τ, v(f − τ)⟩ − T^ε.
    pub fn w_eps_completed_square(&self, field: &CutoffField) -> f64 {
        let mut fh = self.f_hat(field);
        fh[0] -= self.tau;
        self.quad_form(&fh) - self.t_eps()
    }

    /// W^ε term by term in real space: ½h⁴ΣΣ v f f − τh²Σf − E (O(L² · support)).
    pub fn w_eps_direct(&self, field: &CutoffField) -> f64 {
        let l = self.l;
        let h2 = 1.0 / (l * l) as f64;
        let f: Vec<f64> = field.grid().iter().map(|p| p.norm_sqr() - self.g0).collect();
        let offsets: Vec<(usize, usize, f64)> = (0..l * l)
            .filter(|&i| self.v_grid[i].abs() > 0.0)
            .map(|i| (i / l, i % l, self.v_grid[i]))
            .collect();
        let mut acc = crate::CompensatedSum::new();
        for i in 0..l {
            for j in 0..l {
                let fx = f[i * l + j];
                let mut row = 0.0;
                for &(a, b, v) in &offsets {
                    row += v * f[((i + a) % l) * l + (j + b) % l];
                }
                acc.add(fx * row);
            }
        }
        0.5 * h2 * h2 * acc.value() - self.tau * h2 * ksum(f.iter().copied()) - self.energy
    }

    /// V^ε from the four-field Wick expansion done symbolically; O(L⁴), for
    /// small grids only.
    pub fn v_eps_direct(&self, field: &CutoffField) -> f64 {
        use crate::wick::{wick_order, Label};
        let l = self.l;
        let h2 = 1.0 / (l * l) as f64;
        let grid = field.grid();
        let cov = &self.cov;
        let mut acc = crate::CompensatedSum::new();
        for x in 0..l * l {
            for y in 0..l * l {
                let (x1, x2) = (x / l, x % l);
                let (y1, y2) = (y / l, y % l);
                let d = ((x1 + l - y1) % l) * l + (x2 + l - y2) % l;
                let v = self.v_grid[d];
                if v == 0.0 {
                    continue;
                }
                // labels: φ(x), φ̄(x), φ(y), φ̄(y)
                let pos = [x, x, y, y];
                let labels = [
                    Label::field(0, false),
                    Label::field(1, true),
                    Label::field(2, false),
                    Label::field(3, true),
                ];
                let oracle = |a: &Label, b: &Label| -> C64 {
                    if a.conj == b.conj {
                        return C64::new(0.0, 0.0);
                    }
                    let (p, q) = if a.conj { (pos[b.id], pos[a.id]) } else { (pos[a.id], pos[b.id]) };
                    let (p1, p2) = (p / l, p % l);
                    let (q1, q2) = (q / l, q % l);
                    C64::new(cov[((p1 + l - q1) % l) * l + (p2 + l - q2) % l], 0.0)
                };
                let expr = wick_order(&labels, &oracle).expect("four labels");
                let vals = [grid[x], grid[x].conj(), grid[y], grid[y].conj()];
                acc.add(v * expr.evaluate(&vals).re);
            }
        }
        0.5 * h2 * h2 * acc.value()
    }

    /// Pathwise floor for V^ε_N.
    ///
    /// From V^ε = ½Σv̂|f̂|² − ΣK̂|c_p|² + ½h²ΣvG², with ½Σv̂|f̂|² ≥ ½f̂(0)² and
    /// Σ_p|c_p|² = f̂(0) + G_N(0), minimizing over f̂(0) gives
    /// V^ε ≥ −½K̂²_max − K̂_max G_N(0) + ½h²ΣvG², and K̂_max ≤ G_N(0) turns this
    /// into the (log N)² floor −(3/2)G_N(0)².
    pub fn v_eps_floor(&self) -> f64 {
        let kmax = self.k_hat.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        -0.5 * kmax * kmax - kmax * self.g0 + self.half_vg2
    }
}

/// Per-bin signed frequency helper re-exported for the oracles.
pub(crate) fn bin_freq(i: usize, l: usize) -> [i64; 2] {
    [freq(i / l, l), freq(i % l, l)]
}

/// min over samples of V^ε_N and C_N = −min/(log N)².
pub fn lower_bound_scan(
    n: f64,
    spec: &PotentialSpec,
    kappa: f64,
    samples: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<(f64, f64)> {
    if samples < 1000 {
        return Err(invalid("lower_bound_scan needs at least 10^3 samples"));
    }
    let l = default_grid(n, spec.eps);
    let table = SpectralTable::cutoff(n, CutoffProfile::Gaussian, l, kappa)?;
    let inter = Interactions::new(&table, spec)?;
    let vals = crate::mc::par_replicas(samples, workers, |r| {
        let f = table.sample(&crate::gff::StreamKey::new(seed, "X", r));
        inter.v_eps(&f).value
    });
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let c = (-min).max(0.0) / n.ln().powi(2);
    Ok((min, c))
}

/// Grid size used for interaction runs at cutoff N and range ε.
pub fn default_grid(n: f64, eps: f64) -> usize {
    let need = (4.0 * n).max(16.0 / eps);
    (need.ceil() as usize).next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::StreamKey;
    use proptest::prelude::*;

    #[test]
    fn bump_is_normalized_and_positive_type() {
        let n = 4000;
        let mass: f64 = (0..n).map(|i| bump_w(-1.0 + (i as f64 + 0.5) * 2.0 / n as f64)).sum::<f64>() * 2.0 / n as f64;
        assert!((mass - 1.0).abs() < 1e-10);
        assert!((bump_w_hat(0.0) - 1.0).abs() < 1e-14);
        for &xi in &[0.3, 1.7, 5.0, 12.5] {
            assert!(bump_w_hat(xi) >= 0.0);
            // ŵ is the cosine transform of w
            let ft: f64 = (0..n)
                .map(|i| {
                    let s = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
                    bump_w(s) * (2.0 * PI * xi * s).cos()
                })
                .sum::<f64>()
                * 2.0
                / n as f64;
            assert!((ft - bump_w_hat(xi)).abs() < 1e-9, "xi={xi}: {ft} vs {}", bump_w_hat(xi));
        }
    }

    #[test]
    fn bump_interpolation_is_smooth() {
        // Hermite table against the direct convolution
        let (xs, ws) = bump_rule();
        let t = bump_table();
        for &s in &[0.1234567, 0.5, 0.77777] {
            let direct: f64 = xs.iter().zip(ws).map(|(&x, &w)| w * beta(x) * beta(s - x)).sum::<f64>()
                / (t.beta_mass * t.beta_mass);
            assert!((bump_w(s) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn potential_unit_mass_and_scaling() {
        let mut sups = Vec::new();
        for &e in &[0.2, 0.1, 0.05] {
            let s = PotentialSpec::bump(e).unwrap();
            let l = 512;
            let h = 1.0 / l as f64;
            let mut mass = 0.0;
            for i in 0..l {
                for j in 0..l {
                    mass += s.eval(TorusPoint::new(i as f64 * h, j as f64 * h));
                }
            }
            assert!((mass * h * h - 1.0).abs() < 1e-9);
            assert!((s.fourier([0, 0]) - 1.0).abs() < 1e-14);
            sups.push(s.eval(TorusPoint::origin()));
        }
        let r1 = (sups[1] / sups[0]).log2();
        let r2 = (sups[2] / sups[1]).log2();
        assert!((r1 - 2.0).abs() < 0.1 && (r2 - 2.0).abs() < 0.1);
    }

    #[test]
    fn grid_kernels_are_positive_type() {
        for spec in [PotentialSpec::bump(0.1).unwrap(), PotentialSpec::coulomb(0.1).unwrap()] {
            let vh = spec.grid_fourier(64);
            assert!(vh.iter().all(|&c| c >= -1e-12));
            assert!((vh[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coulomb_grid_kernel_matches_pointwise() {
        let spec = PotentialSpec::coulomb(0.2).unwrap();
        let v = spec.grid_kernel(32);
        for &(i, j) in &[(0usize, 0usize), (3, 7), (16, 1)] {
            let x = TorusPoint::new(i as f64 / 32.0, j as f64 / 32.0);
            assert!((v[i * 32 + j] - spec.eval(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn coulomb_lq_norms_decrease_under_mollification() {
        // Parseval for q = 2
        let v2 = coulomb_lq_norm(2.0).unwrap();
        let mut ps = 1.0;
        let k = 400i64;
        for a in -k..=k {
            for b in -k..=k {
                if a != 0 || b != 0 {
                    ps += 1.0 / (16.0 * PI.powi(4) * ((a * a + b * b) as f64).powi(2));
                }
            }
        }
        assert!((v2 * v2 - ps).abs() < 1e-7, "{} vs {ps}", v2 * v2);
        for &q in &[1.5, 2.0, 4.0] {
            let vq = coulomb_lq_norm(q).unwrap();
            for &e in &[0.2, 0.1] {
                let s = PotentialSpec::coulomb(e).unwrap();
                assert!(s.lq_norm(q) <= vq * (1.0 + 1e-9), "q={q}, eps={e}");
            }
        }
    }

    #[test]
    fn tau_quadrature_matches_fourier_oracle() {
        for &e in &[0.2, 0.1] {
            let s = PotentialSpec::bump(e).unwrap();
            let (tau, energy) = tau_and_energy(&s, 1.0).unwrap();
            let oracle = tau_fourier(&s, 1.0, 80.0);
            assert!((tau - oracle).abs() < 1e-8, "eps={e}: {tau} vs {oracle}");
            assert!(tau > 0.0 && energy > 0.0);
        }
    }

    #[test]
    fn counterterm_algebra() {
        let c = CountertermSet::from_parts(0.7, 0.3, 0.2);
        assert_eq!(c.alpha, 0.7 + 0.2);
        assert_eq!(c.theta, 0.5 * 0.04 + 0.7 * 0.2 - 0.3);
        assert_eq!(c.t_eps, 0.5 * 0.49 + 0.3);
    }

    #[test]
    fn rho_nu_is_quantum_green_at_origin() {
        let g = GreenEvaluator::new(1.0).unwrap();
        for &nu in &[0.1, 0.01] {
            let r = rho_nu(nu, 1.0, &ModeCutoff::Full).unwrap();
            let q = g.green_quantum(TorusPoint::origin(), nu).unwrap();
            assert!((r - q).abs() < 1e-8);
        }
    }

    fn setup(l: usize, n: f64, eps: f64) -> (SpectralTable, Interactions) {
        let t = SpectralTable::cutoff(n, CutoffProfile::Gaussian, l, 1.0).unwrap();
        let s = PotentialSpec::bump(eps).unwrap();
        let i = Interactions::with_counterterms(&t, &s, 1.3, 0.4);
        (t, i)
    }

    #[test]
    fn interaction_identities_per_sample() {
        let (t, inter) = setup(32, 4.0, 0.2);
        for r in 0..5 {
            let f = t.sample(&StreamKey::new(3, "X", r));
            let [vn, ve, we] = inter.all(&f);
            assert!((we - inter.w_eps_completed_square(&f)).abs() < 1e-8);
            assert!((we - inter.w_eps_direct(&f)).abs() < 1e-8);
            assert!((we - ve - inter.w_minus_v(&f)).abs() < 1e-8);
            assert!(we >= -inter.t_eps());
            assert!(ve >= inter.v_eps_floor() - 1e-12);
            assert_eq!(vn, inter.v_n(&f).value);
        }
    }

    #[test]
    fn v_eps_matches_symbolic_wick_on_small_grid() {
        let (t, inter) = setup(8, 2.0, 0.3);
        let f = t.sample(&StreamKey::new(5, "X", 0));
        let a = inter.v_eps(&f).value;
        let b = inter.v_eps_direct(&f);
        assert!((a - b).abs() < 1e-6 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn deterministic_zero_field() {
        let (t, inter) = setup(32, 4.0, 0.2);
        let z = t.field_from_coeffs(vec![C64::new(0.0, 0.0); 32 * 32]);
        let g0 = t.g0();
        assert!((inter.v_n(&z).value - g0 * g0).abs() < 1e-12);
        // ½∫∫v(G(0)² + G(x−x̃)²)
        let h2 = 1.0 / 1024.0;
        let expect = 0.5 * g0 * g0 + inter.half_vg2;
        let _ = h2;
        assert!((inter.v_eps(&z).value - expect).abs() < 1e-12);
        assert!(inter.v_eps(&z).value > 0.0);
    }

    proptest! {
        #[test]
        fn interactions_are_gauge_invariant(theta in 0.0f64..6.3, seed in 0u64..200) {
            let (t, inter) = setup(16, 2.0, 0.25);
            let f = t.sample(&StreamKey::new(seed, "X", 0));
            let g = f.rotate(theta);
            let a = inter.all(&f);
            let b = inter.all(&g);
            for i in 0..3 {
                prop_assert!((a[i] - b[i]).abs() < 1e-10);
            }
        }
    }
}
