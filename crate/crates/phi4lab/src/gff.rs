//! Sampling the regularized complex free field φ_N and its high-frequency
//! increments ψ_{N,M} on an L×L grid.
//!
//! All modes k ≡ p (mod L) land on the same grid bin, so on grid points the
//! field is exactly a sum over bins of independent complex Gaussians with
//! variances g_p = Σ_{k≡p} ϑ(k/N)/λ_k. This keeps one normal pair per bin
//! while reproducing the grid covariance G_N exactly.

use crate::fft2::{freq, Fft2};
use crate::torus::{lambda, CutoffProfile, TorusPoint};
use crate::{invalid, Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::{Arc, OnceLock};

/// Counter-style RNG stream keyed by (seed, purpose tag, replica index).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub tag: String,
    pub replica: u64,
}

impl StreamKey {
    pub fn new(seed: u64, tag: &str, replica: u64) -> Self {
        Self {
            seed,
            tag: tag.to_string(),
            replica,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.tag.as_bytes());
        let key: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.replica);
        rng
    }
}

/// Standard complex Gaussian (g₁ + i g₂)/√2.
#[inline]
pub fn complex_normal<R: Rng>(rng: &mut R) -> C64 {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    C64::new(a * FRAC_1_SQRT_2, b * FRAC_1_SQRT_2)
}

/// Which spectral window a table describes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldKind {
    /// ϑ(k/N).
    Cutoff { n: f64 },
    /// ϑ(k/M) − ϑ(k/N).
    Increment { n: f64, m: f64 },
}

/// Per-bin variances and FFT plan for one (kind, profile, L, κ).
#[derive(Clone)]
pub struct SpectralTable {
    pub kind: FieldKind,
    pub profile: CutoffProfile,
    pub l: usize,
    pub kappa: f64,
    /// g_p for bins in row-major order (p₁ major).
    pub var: Vec<f64>,
    pub(crate) fft: Arc<Fft2>,
}

impl std::fmt::Debug for SpectralTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralTable")
            .field("kind", &self.kind)
            .field("profile", &self.profile)
            .field("l", &self.l)
            .field("kappa", &self.kappa)
            .finish()
    }
}

fn window(kind: FieldKind, profile: CutoffProfile, k: [i64; 2]) -> f64 {
    let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
    match kind {
        FieldKind::Cutoff { n } => profile.eval_sq(k2 / (n * n)),
        FieldKind::Increment { n, m } => {
            (profile.eval_sq(k2 / (m * m)) - profile.eval_sq(k2 / (n * n))).max(0.0)
        }
    }
}

impl SpectralTable {
    fn build(kind: FieldKind, profile: CutoffProfile, l: usize, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(invalid("kappa must be positive"));
        }
        let top = match kind {
            FieldKind::Cutoff { n } => n,
            FieldKind::Increment { m, .. } => m,
        };
        if !l.is_power_of_two() || (l as f64) < 4.0 * top {
            return Err(invalid(format!(
                "grid size {l} must be a power of two >= 4N = {}",
                4.0 * top
            )));
        }
        let kmax = profile.k_max(top);
        let mut var = vec![0.0; l * l];
        let mut comp = vec![0.0; l * l];
        for a in -kmax..=kmax {
            for b in -kmax..=kmax {
                let th = window(kind, profile, [a, b]);
                if th == 0.0 {
                    continue;
                }
                let idx = crate::fft2::bin(a, l) * l + crate::fft2::bin(b, l);
                // Neumaier on each bin
                let x = th / lambda([a, b], kappa);
                let t = var[idx] + x;
                if f64::abs(var[idx]) >= x.abs() {
                    comp[idx] += (var[idx] - t) + x;
                } else {
                    comp[idx] += (x - t) + var[idx];
                }
                var[idx] = t;
            }
        }
        for (v, c) in var.iter_mut().zip(&comp) {
            *v += c;
        }
        Ok(Self {
            kind,
            profile,
            l,
            kappa,
            var,
            fft: Arc::new(Fft2::new(l)),
        })
    }

    /// Table for φ_N.
    pub fn cutoff(n: f64, profile: CutoffProfile, l: usize, kappa: f64) -> Result<Self> {
        if !(n > 0.0) {
            return Err(invalid("cutoff N must be positive"));
        }
        Self::build(FieldKind::Cutoff { n }, profile, l, kappa)
    }

    /// Table for ψ_{N,M}.
    pub fn increment(n: f64, m: f64, profile: CutoffProfile, l: usize, kappa: f64) -> Result<Self> {
        if !(n > 0.0) || n > m {
            return Err(invalid("need 0 < N <= M"));
        }
        Self::build(FieldKind::Increment { n, m }, profile, l, kappa)
    }

    /// E|φ(x)|², i.e. G_N(0) (or G_M(0) − G_N(0) for increments).
    pub fn g0(&self) -> f64 {
        crate::scalar::ksum(self.var.iter().copied())
    }

    /// Grid covariance Σ_p g_p e^{2πip·z/L} at the grid offset z = (j₁, j₂)/L.
    pub fn covariance_grid(&self) -> Vec<f64> {
        let mut d: Vec<C64> = self.var.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.fft.inverse(&mut d);
        d.into_iter().map(|c| c.re).collect()
    }

    /// E[φ(x + y) φ̄(x)] = Σ_p g_p cos(2π p̃·y) at an arbitrary offset y, matching
    /// the trigonometric interpolant used by [`CutoffField::eval`].
    pub fn covariance_at(&self, y: TorusPoint<f64>) -> f64 {
        let l = self.l;
        let mut acc = crate::CompensatedSum::new();
        for (idx, &g) in self.var.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let (a, b) = (freq(idx / l, l), freq(idx % l, l));
            acc.add(g * (2.0 * PI * (a as f64 * y.x[0] + b as f64 * y.x[1])).cos());
        }
        acc.value()
    }

    /// Draw a field realization from the given stream.
    pub fn sample(&self, key: &StreamKey) -> CutoffField {
        let mut rng = key.rng();
        self.sample_with(&mut rng)
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R) -> CutoffField {
        let coeffs = self
            .var
            .iter()
            .map(|&g| {
                let z = complex_normal(rng);
                z * g.sqrt()
            })
            .collect();
        CutoffField {
            table: self.clone(),
            coeffs,
            grid: OnceLock::new(),
        }
    }

    /// Field from given coefficients (for deterministic inputs such as φ ≡ 0).
    pub fn field_from_coeffs(&self, coeffs: Vec<C64>) -> CutoffField {
        assert_eq!(coeffs.len(), self.l * self.l);
        CutoffField {
            table: self.clone(),
            coeffs,
            grid: OnceLock::new(),
        }
    }
}

/// One realization: bin coefficients c_p and lazily synthesized grid values.
#[derive(Clone, Debug)]
pub struct CutoffField {
    pub table: SpectralTable,
    pub coeffs: Vec<C64>,
    grid: OnceLock<Vec<C64>>,
}

/// The increment ψ_{N,M} shares the representation.
pub type IncrementField = CutoffField;

impl CutoffField {
    pub fn l(&self) -> usize {
        self.table.l
    }

    /// Values φ(j/L) on the grid, row-major.
    pub fn grid(&self) -> &[C64] {
        self.grid.get_or_init(|| {
            let mut d = self.coeffs.clone();
            self.table.fft.inverse(&mut d);
            d
        })
    }

    /// Trigonometric interpolant Σ_p c_p e^{2πi p̃·x} with p̃ the signed bin frequency.
    ///
    /// When no two retained modes share a bin (e.g. compact profile with
    /// L ≥ 2N) this is the field itself at every point.
    pub fn eval(&self, x: TorusPoint<f64>) -> C64 {
        let l = self.l();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..l {
            let a = freq(i, l);
            for j in 0..l {
                let c = self.coeffs[i * l + j];
                if c.re == 0.0 && c.im == 0.0 {
                    continue;
                }
                let b = freq(j, l);
                let ph = 2.0 * PI * (a as f64 * x.x[0] + b as f64 * x.x[1]);
                acc += c * C64::new(ph.cos(), ph.sin());
            }
        }
        acc
    }

    /// Sum of two fields on the same grid (φ_N + ψ_{N,M}).
    pub fn add(&self, other: &CutoffField) -> CutoffField {
        assert_eq!(self.l(), other.l());
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        let mut var = self.table.var.clone();
        for (v, w) in var.iter_mut().zip(&other.table.var) {
            *v += w;
        }
        let kind = match (self.table.kind, other.table.kind) {
            (FieldKind::Cutoff { .. }, FieldKind::Increment { m, .. }) => FieldKind::Cutoff { n: m },
            (k, _) => k,
        };
        let table = SpectralTable {
            kind,
            var,
            ..self.table.clone()
        };
        CutoffField {
            table,
            coeffs,
            grid: OnceLock::new(),
        }
    }

    /// Multiply every coefficient by e^{iθ}.
    pub fn rotate(&self, theta: f64) -> CutoffField {
        let u = C64::new(theta.cos(), theta.sin());
        CutoffField {
            table: self.table.clone(),
            coeffs: self.coeffs.iter().map(|c| c * u).collect(),
            grid: OnceLock::new(),
        }
    }
}

/// Supported Wick monomials of the field at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WickPattern {
    /// :|φ|²:
    Abs2,
    /// :|φ|⁴:
    Abs4,
    /// :φ^a φ̄^b:
    Power { a: u32, b: u32 },
    /// :φ(z) φ̄(z + s): for a fixed grid shift s.
    Pair { shift: [i64; 2] },
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// :φ^a φ̄^b: = Σ_j (−1)^j C(a,j) C(b,j) j! c^j φ^{a−j} φ̄^{b−j} for a
/// scalar field value with E|φ|² = c.
pub fn wick_local(phi: C64, a: u32, b: u32, c: f64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    let mut fact = 1.0;
    for j in 0..=a.min(b) {
        if j > 0 {
            fact *= j as f64;
        }
        let coef = binom(a, j) * binom(b, j) * fact * c.powi(j as i32);
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        acc += phi.powu(a - j) * phi.conj().powu(b - j) * (sign * coef);
    }
    acc
}

/// Pointwise Wick-ordered values of `pattern` on the field grid.
pub fn wick_power(field: &CutoffField, pattern: WickPattern) -> Result<Vec<C64>> {
    let g0 = field.table.g0();
    let grid = field.grid();
    let l = field.l();
    Ok(match pattern {
        WickPattern::Abs2 => grid.iter().map(|p| C64::new(p.norm_sqr() - g0, 0.0)).collect(),
        WickPattern::Abs4 => grid
            .iter()
            .map(|p| {
                let r = p.norm_sqr();
                C64::new(r * r - 4.0 * g0 * r + 2.0 * g0 * g0, 0.0)
            })
            .collect(),
        WickPattern::Power { a, b } => {
            if a + b > 12 {
                return Err(crate::Error::Unsupported(format!(
                    "Wick power of degree {} exceeds the catalog",
                    a + b
                )));
            }
            grid.iter().map(|&p| wick_local(p, a, b, g0)).collect()
        }
        WickPattern::Pair { shift } => {
            let cov = field.table.covariance_grid();
            let s0 = crate::fft2::bin(shift[0], l);
            let s1 = crate::fft2::bin(shift[1], l);
            // E[φ(z)φ̄(z+s)] = G_N(−s) = G_N(s)
            let c = cov[s0 * l + s1];
            (0..l * l)
                .map(|idx| {
                    let (i, j) = (idx / l, idx % l);
                    let o = ((i + s0) % l) * l + (j + s1) % l;
                    grid[idx] * grid[o].conj() - c
                })
                .collect()
        }
    })
}
