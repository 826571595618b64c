//! Exact Wick calculus over partial pairings, and the pairing quadratures
//! that turn Gaussian moments of the interactions into grid sums.
//!
//! Labels are the individual Gaussian factors ξ_i; a complex field value
//! contributes a holomorphic and an antiholomorphic label, and the oracle
//! returns E[ξ_i ξ_j] (zero for two unconjugated labels).

use crate::interactions::Interactions;
use crate::scalar::{ksum, WickScalar};
use crate::{invalid, Result};
use std::collections::BTreeMap;

/// Largest label count accepted by the enumerators.
pub const MAX_LABELS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub id: usize,
    pub conj: bool,
}

impl Label {
    pub fn field(id: usize, conj: bool) -> Self {
        Self { id, conj }
    }

    pub fn real(id: usize) -> Self {
        Self { id, conj: false }
    }
}

/// E[ξ_a ξ_b], symmetric in its arguments.
pub trait CovarianceOracle<S> {
    fn cov(&self, a: &Label, b: &Label) -> S;
}

impl<S, F: Fn(&Label, &Label) -> S> CovarianceOracle<S> for F {
    fn cov(&self, a: &Label, b: &Label) -> S {
        self(a, b)
    }
}

/// One partial pairing: surviving label positions and Π(−E[ξ_i ξ_j]).
#[derive(Clone, Debug, PartialEq)]
pub struct WickTerm<S> {
    pub survivors: Vec<usize>,
    pub pairs: Vec<(usize, usize)>,
    pub coef: S,
}

/// :ξ₁⋯ξ_n: expanded over partial pairings.
#[derive(Clone, Debug, PartialEq)]
pub struct WickExpression<S> {
    pub labels: Vec<Label>,
    pub terms: Vec<WickTerm<S>>,
}

/// Σ_m n!/(m!(n−2m)!2^m).
pub fn count_partial_pairings(n: usize) -> u128 {
    let fact = |k: usize| (1..=k as u128).product::<u128>();
    (0..=n / 2)
        .map(|m| fact(n) / (fact(m) * fact(n - 2 * m) * (1u128 << m)))
        .sum()
}

/// Every partial pairing of 0..n, enumerated over the smallest unpaired index.
pub fn partial_pairings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &[usize], cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        match rest.split_first() {
            None => out.push(cur.clone()),
            Some((&first, tail)) => {
                // first stays unpaired
                rec(tail, cur, out);
                for (k, &j) in tail.iter().enumerate() {
                    let mut next: Vec<usize> = tail.to_vec();
                    next.remove(k);
                    cur.push((first, j));
                    rec(&next, cur, out);
                    cur.pop();
                }
            }
        }
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    rec(&idx, &mut Vec::new(), &mut out);
    out
}

/// Expansion of :ξ₁⋯ξ_n: with the sign (−E) per pair.
pub fn wick_order<S: WickScalar, O: CovarianceOracle<S>>(labels: &[Label], oracle: &O) -> Result<WickExpression<S>> {
    if labels.len() > MAX_LABELS {
        return Err(invalid(format!(
            "{} labels exceed the combinatorial guard of {MAX_LABELS}",
            labels.len()
        )));
    }
    let n = labels.len();
    let terms = partial_pairings(n)
        .into_iter()
        .filter_map(|pairs| {
            let mut coef = S::one();
            for &(i, j) in &pairs {
                coef = coef * -oracle.cov(&labels[i], &labels[j]);
            }
            if coef == S::zero() {
                return None;
            }
            let mut used = vec![false; n];
            for &(i, j) in &pairs {
                used[i] = true;
                used[j] = true;
            }
            let survivors = (0..n).filter(|&i| !used[i]).collect();
            Some(WickTerm { survivors, pairs, coef })
        })
        .collect();
    Ok(WickExpression {
        labels: labels.to_vec(),
        terms,
    })
}

impl<S: WickScalar> WickExpression<S> {
    /// Substitute values for the labels.
    pub fn evaluate(&self, values: &[S]) -> S {
        S::sum_terms(self.terms.iter().map(|t| {
            t.survivors
                .iter()
                .fold(t.coef.clone(), |acc, &i| acc * values[i].clone())
        }))
    }

    /// Canonical polynomial: survivor set → summed coefficient, zeros dropped.
    pub fn polynomial(&self) -> BTreeMap<Vec<usize>, S> {
        let mut m: BTreeMap<Vec<usize>, S> = BTreeMap::new();
        for t in &self.terms {
            let e = m.entry(t.survivors.clone()).or_insert_with(S::zero);
            *e = e.clone() + t.coef.clone();
        }
        m.retain(|_, v| *v != S::zero());
        m
    }

    /// ∂/∂ξ_k of the polynomial, as a map over the remaining positions
    /// renumbered to skip k.
    pub fn derivative(&self, k: usize) -> BTreeMap<Vec<usize>, S> {
        let mut m: BTreeMap<Vec<usize>, S> = BTreeMap::new();
        for t in &self.terms {
            if let Some(pos) = t.survivors.iter().position(|&i| i == k) {
                let mut s = t.survivors.clone();
                s.remove(pos);
                let s: Vec<usize> = s.into_iter().map(|i| if i > k { i - 1 } else { i }).collect();
                let e = m.entry(s).or_insert_with(S::zero);
                *e = e.clone() + t.coef.clone();
            }
        }
        m.retain(|_, v| *v != S::zero());
        m
    }
}

/// :ξ₁⋯ξ_n: rebuilt by :ξ₁⋯ξ_n: = ξ₁:ξ₂⋯ξ_n: − Σ_{j≥2} E[ξ₁ξ_j] :ξ₂⋯ξ̂_j⋯ξ_n:,
/// returned as a canonical polynomial over label positions.
pub fn wick_recursion<S: WickScalar, O: CovarianceOracle<S>>(labels: &[Label], oracle: &O) -> BTreeMap<Vec<usize>, S> {
    fn rec<S: WickScalar, O: CovarianceOracle<S>>(idx: &[usize], labels: &[Label], oracle: &O) -> BTreeMap<Vec<usize>, S> {
        let mut out: BTreeMap<Vec<usize>, S> = BTreeMap::new();
        let Some((&first, rest)) = idx.split_first() else {
            out.insert(Vec::new(), S::one());
            return out;
        };
        let add = |out: &mut BTreeMap<Vec<usize>, S>, k: Vec<usize>, v: S| {
            let e = out.entry(k).or_insert_with(S::zero);
            *e = e.clone() + v;
        };
        for (mono, c) in rec(rest, labels, oracle) {
            let mut k = mono;
            k.push(first);
            k.sort_unstable();
            add(&mut out, k, c);
        }
        for (pos, &j) in rest.iter().enumerate() {
            let cov = oracle.cov(&labels[first], &labels[j]);
            if cov == S::zero() {
                continue;
            }
            let mut sub: Vec<usize> = rest.to_vec();
            sub.remove(pos);
            for (mono, c) in rec(&sub, labels, oracle) {
                add(&mut out, mono, -(cov.clone() * c));
            }
        }
        out.retain(|_, v| *v != S::zero());
        out
    }
    let idx: Vec<usize> = (0..labels.len()).collect();
    rec(&idx, labels, oracle)
}

/// E[Π_B :Π_{i∈B} ξ_i:] = Σ over complete pairings with no pair inside a block.
pub fn wick_moment<S: WickScalar, O: CovarianceOracle<S>>(blocks: &[Vec<Label>], oracle: &O) -> S {
    let flat: Vec<(usize, Label)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, ls)| ls.iter().map(move |&l| (b, l)))
        .collect();
    if flat.len() % 2 == 1 {
        return S::zero();
    }
    fn rec<S: WickScalar, O: CovarianceOracle<S>>(rest: &[(usize, Label)], oracle: &O) -> S {
        let Some((&(b0, l0), tail)) = rest.split_first() else {
            return S::one();
        };
        let mut terms = Vec::new();
        for (k, &(b, l)) in tail.iter().enumerate() {
            if b == b0 {
                continue;
            }
            let c = oracle.cov(&l0, &l);
            if c == S::zero() {
                continue;
            }
            let mut next = tail.to_vec();
            next.remove(k);
            terms.push(c * rec(&next, oracle));
        }
        S::sum_terms(terms)
    }
    rec(&flat, oracle)
}

/// Plain Isserlis moment E[ξ₁⋯ξ_n].
pub fn naive_moment<S: WickScalar, O: CovarianceOracle<S>>(labels: &[Label], oracle: &O) -> S {
    let blocks: Vec<Vec<Label>> = labels.iter().map(|&l| vec![l]).collect();
    wick_moment(&blocks, oracle)
}

/// E[:ξ₁⋯ξ_n: · ζ₁⋯ζ_m] by expanding the Wick product and applying Isserlis
/// to every term; the brute-force counterpart of [`wick_moment`].
pub fn naive_mixed_moment<S: WickScalar, O: CovarianceOracle<S>>(
    wick_labels: &[Label],
    plain: &[Label],
    oracle: &O,
) -> Result<S> {
    let expr = wick_order(wick_labels, oracle)?;
    Ok(S::sum_terms(expr.terms.iter().map(|t| {
        let mut ls: Vec<Label> = t.survivors.iter().map(|&i| wick_labels[i]).collect();
        ls.extend_from_slice(plain);
        t.coef.clone() * naive_moment(&ls, oracle)
    })))
}

/// Hypercontractive ceiling p^{np/2} · var^{p/2} for an order-n chaos element.
pub fn chaos_bound(n: u32, p: u32, variance: f64) -> Result<f64> {
    if p < 2 || p % 2 == 1 {
        return Err(invalid("p must be an even integer >= 2"));
    }
    let pf = p as f64;
    Ok(pf.powf(n as f64 * pf / 2.0) * variance.powf(pf / 2.0))
}

// ---------------------------------------------------------------------------
// Pairing quadratures on the sampling grid.

/// Gaussian second moments expressible as exact grid sums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairingIntegrand {
    /// E[V_N²] = h² Σ_z G⁴.
    VnSquare,
    /// E[(V^ε_N)²], the fourth-chaos pairing sum.
    VepsSquare,
    /// E[(W^ε_N)²].
    WepsSquare,
    /// E[(V^ε_N − W^ε_N)²].
    VepsMinusWepsSquare,
    /// The same with the cancellation ∫u(y)(G(z−y) − G(z)) replaced by ∫u(y)G(z−y).
    VepsMinusWepsNoCancellation,
    /// E[V^ε_N V_N].
    VepsVnCross,
    /// E[(V^ε_N − V_N)²].
    VepsMinusVnSquare,
    /// E[W^ε_N].
    WepsMean,
}

fn u_tilde(inter: &Interactions) -> Vec<f64> {
    let g2: Vec<f64> = inter.cov.iter().map(|g| g * g).collect();
    crate::fft2::Fft2::new(inter.l)
        .forward_real(&g2)
        .into_iter()
        .map(|c| c.re)
        .collect()
}

/// h² Σ_z G(z)⁴.
pub fn vn_square(inter: &Interactions) -> f64 {
    let h2 = 1.0 / (inter.l * inter.l) as f64;
    h2 * ksum(inter.cov.iter().map(|g| g.powi(4)))
}

/// E[(V^ε)²] = ¼h⁸ Σ⁴ v v [2G²G² + 2GGGG], reduced to FFTs: the G²-cycle part is
/// Σ_p ṽ²ũ² (trace of a four-cycle of circulants), the crossed part
/// Σ_b v(b) Σ_p ṽ|H̃_b|² with H_b(z) = G(z)G(z+b), summed over D4 orbits of b.
pub fn veps_square(inter: &Interactions) -> f64 {
    let l = inter.l;
    let lf = l as f64;
    let h2 = 1.0 / (lf * lf);
    let v_t: Vec<f64> = inter.v_hat.iter().map(|v| v / h2).collect();
    let ut = u_tilde(inter);
    let a2 = ksum(v_t.iter().zip(&ut).map(|(v, u)| v * v * u * u));
    // orbits of b under the dihedral group
    let mut orbits: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
    for i in 0..l * l {
        let v = inter.v_grid[i];
        if v == 0.0 {
            continue;
        }
        let f = crate::interactions::bin_freq(i, l);
        let (a, b) = (f[0].abs(), f[1].abs());
        let key = if a >= b { (a, b) } else { (b, a) };
        let e = orbits.entry(key).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let fft = crate::fft2::Fft2::new(l);
    let mut ab = crate::CompensatedSum::new();
    for (&(b1, b2), &(vsum, _count)) in &orbits {
        let (s1, s2) = (crate::fft2::bin(b1, l), crate::fft2::bin(b2, l));
        let h: Vec<f64> = (0..l * l)
            .map(|idx| {
                let (i, j) = (idx / l, idx % l);
                inter.cov[idx] * inter.cov[((i + s1) % l) * l + (j + s2) % l]
            })
            .collect();
        let ht = fft.forward_real(&h);
        let s = ksum(ht.iter().zip(&v_t).map(|(c, v)| v * c.norm_sqr()));
        ab.add(vsum * s);
    }
    0.25 * h2.powi(4) * (2.0 * a2 + 2.0 * ab.value())
}

/// Σ_p (K̂ − τ)² g_p², the variance of the quadratic part of W^ε − V^ε.
pub fn quadratic_variance(inter: &Interactions, var: &[f64], cancel: bool) -> f64 {
    let tau = if cancel { inter.tau } else { 0.0 };
    ksum(inter.k_hat.iter().zip(var).map(|(k, g)| (k - tau).powi(2) * g * g))
}

/// The real-space form h² Σ_z [(u*G)(z) − τG(z)]², u = vG, which equals
/// [`quadratic_variance`] by Parseval.
pub fn quadratic_variance_real_space(inter: &Interactions) -> f64 {
    let l = inter.l;
    let h2 = 1.0 / (l * l) as f64;
    let fft = crate::fft2::Fft2::new(l);
    let u: Vec<f64> = inter.v_grid.iter().zip(&inter.cov).map(|(v, g)| v * g).collect();
    let ut = fft.forward_real(&u);
    let gt = fft.forward_real(&inter.cov);
    let mut conv: Vec<crate::C64> = ut.iter().zip(&gt).map(|(a, b)| a * b).collect();
    fft.inverse(&mut conv);
    // (u*G)(z) = h² Σ_y u(y) G(z − y)
    ksum(
        conv.iter()
            .zip(&inter.cov)
            .map(|(c, g)| (c.re * h2 * h2 - inter.tau * g).powi(2)),
    ) * h2
}

/// E[V^ε V_N] = h⁶ Σ_p ṽ ũ².
pub fn veps_vn_cross(inter: &Interactions) -> f64 {
    let l = inter.l as f64;
    let h2 = 1.0 / (l * l);
    let ut = u_tilde(inter);
    h2 * h2 * h2 * ksum(inter.v_hat.iter().zip(&ut).map(|(v, u)| v / h2 * u * u))
}

/// Exact value of `integrand` for the grid described by `inter` and the
/// bin variances `var`.
pub fn pairing_grid_value(integrand: PairingIntegrand, inter: &Interactions, var: &[f64]) -> f64 {
    let mean = inter.half_vg2 - inter.energy;
    match integrand {
        PairingIntegrand::VnSquare => vn_square(inter),
        PairingIntegrand::VepsSquare => veps_square(inter),
        PairingIntegrand::WepsSquare => veps_square(inter) + quadratic_variance(inter, var, true) + mean * mean,
        PairingIntegrand::VepsMinusWepsSquare => quadratic_variance(inter, var, true) + mean * mean,
        PairingIntegrand::VepsMinusWepsNoCancellation => quadratic_variance(inter, var, false) + mean * mean,
        PairingIntegrand::VepsVnCross => veps_vn_cross(inter),
        PairingIntegrand::VepsMinusVnSquare => {
            veps_square(inter) - 2.0 * veps_vn_cross(inter) + vn_square(inter)
        }
        PairingIntegrand::WepsMean => mean,
    }
}

/// Physical setup of a pairing quadrature.
#[derive(Clone, Copy, Debug)]
pub struct PairingSetup {
    pub n: f64,
    pub kappa: f64,
    pub profile: crate::torus::CutoffProfile,
    pub spec: crate::interactions::PotentialSpec,
    pub tau: f64,
    pub energy: f64,
}

impl PairingSetup {
    pub fn interactions(&self, l: usize) -> Result<(crate::gff::SpectralTable, Interactions)> {
        let t = crate::gff::SpectralTable::cutoff(self.n, self.profile, l, self.kappa)?;
        let i = Interactions::with_counterterms(&t, &self.spec, self.tau, self.energy);
        Ok((t, i))
    }
}

/// Result of a resolution-checked pairing quadrature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairingValue {
    pub value: f64,
    pub coarse: f64,
    pub relative_change: f64,
    pub l: usize,
}

/// Evaluate at L and 2L and require the relative change to stay below 10⁻⁴.
pub fn pairing_quadrature(integrand: PairingIntegrand, setup: &PairingSetup, l: usize) -> Result<PairingValue> {
    let (tc, ic) = setup.interactions(l)?;
    let coarse = pairing_grid_value(integrand, &ic, &tc.var);
    let (tf, i_f) = setup.interactions(2 * l)?;
    let fine = pairing_grid_value(integrand, &i_f, &tf.var);
    let rel = (fine - coarse).abs() / fine.abs().max(1e-300);
    if rel > 1e-4 {
        return Err(crate::Error::NotConverged(format!(
            "pairing quadrature {integrand:?}: relative change {rel:.3e} on doubling L = {l}"
        )));
    }
    Ok(PairingValue {
        value: coarse,
        coarse,
        relative_change: rel,
        l,
    })
}

/// ‖V^ε_M − V^ε_N‖_{L²} under the frequency-split coupling φ_M = φ_N + ψ_{N,M}.
///
/// The coupling makes V_N the conditional expectation of V_M given φ_N, so
/// E[(V_M − V_N)²] = E[V_M²] − E[V_N²], both on a common grid L ≥ 4M.
pub fn cauchy_distance(setup: &PairingSetup, m: f64, l: usize) -> Result<f64> {
    if m < setup.n {
        return Err(invalid("cauchy_distance needs N <= M"));
    }
    if m == setup.n {
        return Ok(0.0);
    }
    let (_, i_n) = setup.interactions(l)?;
    let hi = PairingSetup { n: m, ..*setup };
    let (_, i_m) = hi.interactions(l)?;
    let d = veps_square(&i_m) - veps_square(&i_n);
    Ok(d.max(0.0).sqrt())
}

/// First-order coefficient b(x, x̃) in E[:φ̄(x̃)φ(x): e^{−gW}] = g·b + O(g²):
/// b = −Σ_p (K̂(p) − τ) g_p² e^{2πip·(x−x̃)}, x, x̃ grid indices.
pub fn gamma1_first_order(inter: &Interactions, var: &[f64], x: [usize; 2], xt: [usize; 2]) -> f64 {
    let l = inter.l;
    let d = [
        (x[0] as i64 - xt[0] as i64) as f64 / l as f64,
        (x[1] as i64 - xt[1] as i64) as f64 / l as f64,
    ];
    -ksum((0..l * l).map(|i| {
        let f = crate::interactions::bin_freq(i, l);
        let ph = 2.0 * std::f64::consts::PI * (f[0] as f64 * d[0] + f[1] as f64 * d[1]);
        (inter.k_hat[i] - inter.tau) * var[i] * var[i] * ph.cos()
    }))
}
