//! Truncated Fock-space Bose gas on a handful of momentum modes, and the
//! matched finite-mode classical field theory.
//!
//! The Hamiltonian conserves particle number and total momentum, so the
//! basis is split into (N, P) sectors and every operator is stored block by
//! block. All matrix elements are real in the occupation basis.

use crate::interactions::{CountertermSet, PotentialSpec};
use crate::quadrature::gauss_legendre_on;
use crate::scalar::ksum;
use crate::torus::lambda;
use crate::{invalid, Result};
use nalgebra::{DMatrix, SymmetricEigen};
use std::collections::HashMap;

/// Occupation-number basis with a total cap and per-mode caps.
#[derive(Clone, Debug)]
pub struct FockBasis {
    pub modes: Vec<[i64; 2]>,
    pub n_max: usize,
    pub caps: Vec<usize>,
    pub sectors: Vec<Sector>,
    index: HashMap<u128, (usize, usize)>,
}

/// States with fixed particle number and momentum.
#[derive(Clone, Debug)]
pub struct Sector {
    pub n: usize,
    pub p: [i64; 2],
    /// Occupations in graded lexicographic order.
    pub states: Vec<Vec<u16>>,
}

fn key(occ: &[u16]) -> u128 {
    occ.iter().fold(0u128, |acc, &n| (acc << 16) | n as u128)
}

impl FockBasis {
    /// Basis with Σn ≤ n_max and no further per-mode restriction.
    pub fn new(modes: Vec<[i64; 2]>, n_max: usize) -> Result<Self> {
        let caps = vec![n_max; modes.len()];
        Self::with_caps(modes, n_max, caps)
    }

    pub fn with_caps(modes: Vec<[i64; 2]>, n_max: usize, caps: Vec<usize>) -> Result<Self> {
        if modes.is_empty() || modes.len() > 8 {
            return Err(invalid("between 1 and 8 modes are supported"));
        }
        if caps.len() != modes.len() || n_max > u16::MAX as usize {
            return Err(invalid("one cap per mode, n_max < 65536"));
        }
        for (i, a) in modes.iter().enumerate() {
            if modes[..i].contains(a) {
                return Err(invalid("duplicate mode"));
            }
        }
        let mut groups: HashMap<(usize, [i64; 2]), Vec<Vec<u16>>> = HashMap::new();
        let mut occ = vec![0u16; modes.len()];
        fn rec(
            i: usize,
            left: usize,
            occ: &mut Vec<u16>,
            modes: &[[i64; 2]],
            caps: &[usize],
            n_max: usize,
            out: &mut HashMap<(usize, [i64; 2]), Vec<Vec<u16>>>,
        ) {
            if i == modes.len() {
                let n = n_max - left;
                let mut p = [0i64; 2];
                for (k, &c) in modes.iter().zip(occ.iter()) {
                    p[0] += k[0] * c as i64;
                    p[1] += k[1] * c as i64;
                }
                out.entry((n, p)).or_default().push(occ.clone());
                return;
            }
            for c in 0..=left.min(caps[i]) {
                occ[i] = c as u16;
                rec(i + 1, left - c, occ, modes, caps, n_max, out);
            }
            occ[i] = 0;
        }
        rec(0, n_max, &mut occ, &modes, &caps, n_max, &mut groups);
        let mut sectors: Vec<Sector> = groups
            .into_iter()
            .map(|((n, p), mut states)| {
                states.sort_by(|a, b| b.cmp(a));
                Sector { n, p, states }
            })
            .collect();
        sectors.sort_by(|a, b| (a.n, a.p).cmp(&(b.n, b.p)));
        let mut index = HashMap::new();
        for (s, sec) in sectors.iter().enumerate() {
            for (j, st) in sec.states.iter().enumerate() {
                index.insert(key(st), (s, j));
            }
        }
        Ok(Self {
            modes,
            n_max,
            caps,
            sectors,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.sectors.iter().map(|s| s.states.len()).sum()
    }

    /// Number of multisets of size ≤ n_max over the modes (no per-mode caps).
    pub fn multiset_count(modes: usize, n_max: usize) -> u128 {
        // C(n_max + modes, modes)
        (0..modes as u128).fold(1u128, |acc, i| acc * (n_max as u128 + modes as u128 - i) / (i + 1))
    }

    pub fn locate(&self, occ: &[u16]) -> Option<(usize, usize)> {
        self.index.get(&key(occ)).copied()
    }

    pub fn mode_index(&self, k: [i64; 2]) -> Option<usize> {
        self.modes.iter().position(|&m| m == k)
    }

    /// a_i |occ⟩ = √n_i |occ − e_i⟩.
    pub fn annihilate(&self, occ: &[u16], i: usize) -> Option<(Vec<u16>, f64)> {
        if occ[i] == 0 {
            return None;
        }
        let mut o = occ.to_vec();
        let f = (o[i] as f64).sqrt();
        o[i] -= 1;
        Some((o, f))
    }

    /// a†_i |occ⟩ = √(n_i + 1) |occ + e_i⟩, or None when the result leaves the truncation.
    pub fn create(&self, occ: &[u16], i: usize) -> Option<(Vec<u16>, f64)> {
        let total: usize = occ.iter().map(|&n| n as usize).sum();
        if total >= self.n_max || occ[i] as usize >= self.caps[i] {
            return None;
        }
        let mut o = occ.to_vec();
        o[i] += 1;
        let f = (o[i] as f64).sqrt();
        Some((o, f))
    }

    /// Apply a†_{c₁}⋯a†_{c_m} a_{d₁}⋯a_{d_n} (rightmost acts first).
    pub fn apply_monomial(&self, occ: &[u16], create: &[usize], annihilate: &[usize]) -> Option<(Vec<u16>, f64)> {
        let mut o = occ.to_vec();
        let mut amp = 1.0;
        for &i in annihilate.iter().rev() {
            let (n, f) = self.annihilate(&o, i)?;
            o = n;
            amp *= f;
        }
        for &i in create.iter().rev() {
            let (n, f) = self.create(&o, i)?;
            o = n;
            amp *= f;
        }
        Some((o, amp))
    }
}

/// Block-diagonal real symmetric operator over the sectors of a basis.
#[derive(Clone, Debug)]
pub struct FockOperator {
    pub blocks: Vec<DMatrix<f64>>,
    pub hermitian: bool,
}

impl FockOperator {
    /// max |A − Aᵀ| over all blocks.
    pub fn asymmetry(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| (b - b.transpose()).abs().max())
            .fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &FockOperator) -> FockOperator {
        FockOperator {
            blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a - b).collect(),
            hermitian: self.hermitian && other.hermitian,
        }
    }
}

/// Momentum-transfer bookkeeping for the interaction assembly.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct DropReport {
    /// (k, q) pairs with k in the mode set but k + q outside it.
    pub transfers_dropped: usize,
    /// Matrix elements lost because a† left the occupation caps.
    pub cap_drops: usize,
}

/// Finite-mode counterterms: ϱ_ν = Σ_{k∈M} ν/(e^{νλ_k} − 1),
/// τ = Σ_{k∈M} v̂(k)/λ_k, E = ½Σ_{k,l∈M} v̂(k − l)/(λ_kλ_l).
pub fn finite_mode_counterterms(modes: &[[i64; 2]], nu: f64, kappa: f64, spec: &PotentialSpec) -> Result<CountertermSet> {
    let rho = crate::interactions::rho_nu(nu, kappa, &crate::interactions::ModeCutoff::Modes(modes.to_vec()))?;
    let (tau, e) = classical_counterterms(modes, kappa, spec);
    Ok(CountertermSet::from_parts(tau, e, rho))
}

/// (τ, E) on a mode set.
pub fn classical_counterterms(modes: &[[i64; 2]], kappa: f64, spec: &PotentialSpec) -> (f64, f64) {
    let tau = ksum(modes.iter().map(|&k| spec.fourier(k) / lambda(k, kappa)));
    let mut e = crate::CompensatedSum::new();
    for &k in modes {
        for &l in modes {
            e.add(0.5 * spec.fourier([k[0] - l[0], k[1] - l[1]]) / (lambda(k, kappa) * lambda(l, kappa)));
        }
    }
    (tau, e.value())
}

/// Distinct nonzero momentum differences of the mode set.
fn transfers(modes: &[[i64; 2]]) -> Vec<[i64; 2]> {
    let mut q = Vec::new();
    for a in modes {
        for b in modes {
            let d = [a[0] - b[0], a[1] - b[1]];
            if d != [0, 0] && !q.contains(&d) {
                q.push(d);
            }
        }
    }
    q
}

/// H = Σνλ_k n_k + ½Σ_q v̂(q)(νρ_q − ϱδ_{q0})†(νρ_q − ϱδ_{q0}) − τ(νN̂ − ϱ) − E,
/// ρ_q = Σ_{k} a†_k a_{k+q}, the momentum form of the position-space
/// Hamiltonian restricted to the mode set. `spec = None` means v ≡ 0.
pub fn build_hamiltonian(
    basis: &FockBasis,
    nu: f64,
    kappa: f64,
    spec: Option<&PotentialSpec>,
    ct: &CountertermSet,
) -> Result<(FockOperator, DropReport)> {
    if !(nu > 0.0) || !(kappa > 0.0) {
        return Err(invalid("nu and kappa must be positive"));
    }
    let lam: Vec<f64> = basis.modes.iter().map(|&k| lambda(k, kappa)).collect();
    let mut drops = DropReport::default();
    let qs = transfers(&basis.modes);
    if spec.is_some() {
        for q in &qs {
            for k in &basis.modes {
                if basis.mode_index([k[0] + q[0], k[1] + q[1]]).is_none() {
                    drops.transfers_dropped += 1;
                }
            }
        }
    }
    let v0 = spec.map_or(0.0, |s| s.fourier([0, 0]));
    let vq: Vec<f64> = qs.iter().map(|&q| spec.map_or(0.0, |s| s.fourier(q))).collect();
    let mut blocks = Vec::with_capacity(basis.sectors.len());
    for sec in &basis.sectors {
        let d = sec.states.len();
        let mut h = DMatrix::<f64>::zeros(d, d);
        let nf = sec.n as f64;
        let f0 = nu * nf - ct.rho_nu;
        for (j, st) in sec.states.iter().enumerate() {
            let kin: f64 = st.iter().zip(&lam).map(|(&n, l)| nu * l * n as f64).sum();
            h[(j, j)] = kin + 0.5 * v0 * f0 * f0 - ct.tau_eps * f0 - ct.e_eps;
        }
        if spec.is_some() {
            for (&q, &v) in qs.iter().zip(&vq) {
                if v == 0.0 {
                    continue;
                }
                // R = ρ_q restricted to the sector, columns = source states
                let mut cols: Vec<Vec<(Vec<u16>, f64)>> = vec![Vec::new(); d];
                for (j, st) in sec.states.iter().enumerate() {
                    for (ki, k) in basis.modes.iter().enumerate() {
                        let Some(li) = basis.mode_index([k[0] + q[0], k[1] + q[1]]) else { continue };
                        match basis.apply_monomial(st, &[ki], &[li]) {
                            Some(t) => cols[j].push(t),
                            None => {
                                if st[li] > 0 {
                                    drops.cap_drops += 1;
                                }
                            }
                        }
                    }
                }
                // (ρ_q†ρ_q)_{ij} = Σ_m R_{mi}R_{mj}
                let mut target: HashMap<u128, Vec<(usize, f64)>> = HashMap::new();
                for (j, c) in cols.iter().enumerate() {
                    for (o, a) in c {
                        target.entry(key(o)).or_default().push((j, *a));
                    }
                }
                let s = 0.5 * v * nu * nu;
                for entries in target.values() {
                    for &(i, a) in entries {
                        for &(j, b) in entries {
                            h[(i, j)] += s * a * b;
                        }
                    }
                }
            }
        }
        blocks.push(h);
    }
    Ok((FockOperator { blocks, hermitian: true }, drops))
}

/// H⁽⁰⁾ = Σ νλ_k n_k.
pub fn free_hamiltonian(basis: &FockBasis, nu: f64, kappa: f64) -> Result<FockOperator> {
    let zero = CountertermSet::from_parts(0.0, 0.0, 0.0);
    Ok(build_hamiltonian(basis, nu, kappa, None, &zero)?.0)
}

/// Eigendecomposition of every block and the Gibbs weights.
#[derive(Clone, Debug)]
pub struct GibbsState {
    pub eigenvalues: Vec<Vec<f64>>,
    pub eigenvectors: Vec<DMatrix<f64>>,
    /// Minimum eigenvalue, subtracted before exponentiating.
    pub shift: f64,
    /// ln tr e^{−H}.
    pub log_z: f64,
}

impl GibbsState {
    pub fn new(h: &FockOperator) -> Self {
        let eig: Vec<SymmetricEigen<f64, nalgebra::Dyn>> =
            h.blocks.iter().map(|b| SymmetricEigen::new(b.clone())).collect();
        let shift = eig
            .iter()
            .flat_map(|e| e.eigenvalues.iter().copied())
            .fold(f64::INFINITY, f64::min);
        let z = ksum(eig.iter().flat_map(|e| e.eigenvalues.iter().map(|&l| (-(l - shift)).exp()).collect::<Vec<_>>()));
        Self {
            eigenvalues: eig.iter().map(|e| e.eigenvalues.iter().copied().collect()).collect(),
            eigenvectors: eig.into_iter().map(|e| e.eigenvectors).collect(),
            shift,
            log_z: z.ln() - shift,
        }
    }

    /// ρ restricted to sector s.
    pub fn density_block(&self, s: usize) -> DMatrix<f64> {
        let v = &self.eigenvectors[s];
        let w: Vec<f64> = self.eigenvalues[s]
            .iter()
            .map(|&l| (-(l - self.shift) - (self.log_z + self.shift)).exp())
            .collect();
        let d = v.nrows();
        let mut rho = DMatrix::<f64>::zeros(d, d);
        for (c, &wc) in w.iter().enumerate() {
            if wc == 0.0 {
                continue;
            }
            let col = v.column(c);
            rho += col * col.transpose() * wc;
        }
        rho
    }

    /// tr(A ρ) for a block operator.
    pub fn expect_operator(&self, a: &FockOperator) -> f64 {
        ksum((0..a.blocks.len()).map(|s| {
            let rho = self.density_block(s);
            (a.blocks[s].component_mul(&rho)).sum()
        }))
    }
}

/// ⟨a†_{c₁}⋯a_{d_n}⟩ in a Gibbs state, momentum conserving monomials only.
pub fn expect_monomial(basis: &FockBasis, state: &GibbsState, create: &[usize], annihilate: &[usize]) -> f64 {
    let mut acc = crate::CompensatedSum::new();
    for (s, sec) in basis.sectors.iter().enumerate() {
        let rho = state.density_block(s);
        for (j, st) in sec.states.iter().enumerate() {
            if let Some((o, a)) = basis.apply_monomial(st, create, annihilate) {
                if let Some((s2, i)) = basis.locate(&o) {
                    if s2 == s {
                        acc.add(a * rho[(j, i)]);
                    }
                }
            }
        }
    }
    acc.value()
}

/// (Z, Z⁽⁰⁾, 𝒵) in log form plus the relative partition function.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct PartitionFunctions {
    pub log_z: f64,
    pub log_z0: f64,
    pub z_rel: f64,
}

pub fn partition_functions(h: &GibbsState, h0: &GibbsState) -> PartitionFunctions {
    PartitionFunctions {
        log_z: h.log_z,
        log_z0: h0.log_z,
        z_rel: (h.log_z - h0.log_z).exp(),
    }
}

/// exp(−⟨H − H⁽⁰⁾⟩₀), the Peierls–Bogoliubov lower bound on 𝒵.
pub fn peierls_bogoliubov_floor(h: &FockOperator, h0: &FockOperator, free: &GibbsState) -> f64 {
    (-free.expect_operator(&h.sub(h0))).exp()
}

/// Γ_p in the momentum basis: rows index (k₁..k_p), columns (k̃₁..k̃_p),
/// entries tr(a†_{k̃₁}⋯a†_{k̃_p} a_{k₁}⋯a_{k_p} ρ).
#[derive(Clone, Debug)]
pub struct ReducedDensity {
    pub p: usize,
    pub labels: Vec<Vec<usize>>,
    pub matrix: DMatrix<f64>,
}

fn tuples(m: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..p {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..m).map(move |i| {
                    let mut u = t.clone();
                    u.push(i);
                    u
                })
            })
            .collect();
    }
    out
}

impl ReducedDensity {
    pub fn identity(m: usize) -> Self {
        // Γ₀ = 1 on the zero-particle space
        let _ = m;
        Self {
            p: 0,
            labels: vec![Vec::new()],
            matrix: DMatrix::from_element(1, 1, 1.0),
        }
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }

    /// Γ₁ position kernel Σ_{k,k̃} Γ_{k,k̃} e^{2πi(k·x − k̃·x̃)}.
    pub fn kernel_one(&self, modes: &[[i64; 2]], x: [f64; 2], xt: [f64; 2]) -> crate::C64 {
        assert_eq!(self.p, 1);
        let mut acc = crate::C64::new(0.0, 0.0);
        for (r, a) in self.labels.iter().enumerate() {
            for (c, b) in self.labels.iter().enumerate() {
                let (k, kt) = (modes[a[0]], modes[b[0]]);
                let ph = 2.0 * std::f64::consts::PI
                    * (k[0] as f64 * x[0] + k[1] as f64 * x[1] - kt[0] as f64 * xt[0] - kt[1] as f64 * xt[1]);
                acc += crate::C64::new(ph.cos(), ph.sin()) * self.matrix[(r, c)];
            }
        }
        acc
    }
}

/// Γ_p of a Gibbs state by direct traces.
pub fn reduced_density(basis: &FockBasis, state: &GibbsState, p: usize) -> Result<ReducedDensity> {
    if p > 2 {
        return Err(crate::Error::Unsupported("reduced densities beyond p = 2".into()));
    }
    let m = basis.modes.len();
    let labels = tuples(m, p);
    let n = labels.len();
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mom = |t: &[usize]| {
        t.iter().fold([0i64; 2], |acc, &i| [acc[0] + basis.modes[i][0], acc[1] + basis.modes[i][1]])
    };
    for (r, k) in labels.iter().enumerate() {
        for (c, kt) in labels.iter().enumerate() {
            if mom(k) != mom(kt) {
                continue;
            }
            mat[(r, c)] = expect_monomial(basis, state, kt, k);
        }
    }
    Ok(ReducedDensity { p, labels, matrix: mat })
}

/// Free Γ⁽⁰⁾₁ = diag 1/(e^{νλ_k} − 1) (untruncated).
pub fn free_density_one(modes: &[[i64; 2]], nu: f64, kappa: f64) -> ReducedDensity {
    let m = modes.len();
    let mut mat = DMatrix::<f64>::zeros(m, m);
    for (i, &k) in modes.iter().enumerate() {
        mat[(i, i)] = 1.0 / (nu * lambda(k, kappa)).exp_m1();
    }
    ReducedDensity {
        p: 1,
        labels: tuples(m, 1),
        matrix: mat,
    }
}

/// Orthogonal projection P_p onto symmetric tensors in the tuple basis.
pub fn symmetrizer(m: usize, p: usize) -> DMatrix<f64> {
    let labels = tuples(m, p);
    let n = labels.len();
    let perms = permutations(p);
    let mut pm = DMatrix::<f64>::zeros(n, n);
    let pos: HashMap<Vec<usize>, usize> = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
    for (r, t) in labels.iter().enumerate() {
        for s in &perms {
            let u: Vec<usize> = s.iter().map(|&i| t[i]).collect();
            pm[(r, pos[&u])] += 1.0 / perms.len() as f64;
        }
    }
    pm
}

fn permutations(p: usize) -> Vec<Vec<usize>> {
    if p == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for s in permutations(p - 1) {
        for i in 0..=s.len() {
            let mut t = s.clone();
            t.insert(i, p - 1);
            out.push(t);
        }
    }
    out
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Γ̂_p = Σ_k C(p,k)²(−1)^{p−k} P_p(Γ_k ⊗ Γ⁽⁰⁾_{p−k})P_p with Γ₀ = 1.
///
/// `gammas[k]` and `free[k]` hold Γ_k and Γ⁽⁰⁾_k for k = 0..=p.
pub fn wick_ordered_density(gammas: &[ReducedDensity], free: &[ReducedDensity], p: usize) -> Result<ReducedDensity> {
    if gammas.len() <= p || free.len() <= p {
        return Err(invalid("density lists must run from k = 0 to p"));
    }
    let m = if p == 0 { 1 } else { (gammas[1].matrix.nrows() as f64).round() as usize };
    let proj = symmetrizer(m, p);
    let n = proj.nrows();
    let mut out = DMatrix::<f64>::zeros(n, n);
    for k in 0..=p {
        let t = kron(&gammas[k].matrix, &free[p - k].matrix);
        let sign = if (p - k) % 2 == 0 { 1.0 } else { -1.0 };
        out += &proj * t * &proj * (sign * binom(p, k).powi(2));
    }
    Ok(ReducedDensity {
        p,
        labels: tuples(m, p),
        matrix: out,
    })
}

/// Classical finite-mode reference: ζ_fm = E[e^{−W_fm}] and the Wick-ordered
/// one-point entries γ̂₁(k) = E[|c_k|² e^{−W}]/ζ − 1/λ_k.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ClassicalReference {
    pub zeta: f64,
    pub gamma1: Vec<f64>,
    pub relative_change: f64,
    pub nodes: (usize, usize),
}

/// W_fm(c) = ½Σ_q v̂(q)|f̂_q|² − τ f̂₀ − E with f̂_q = Σ_{l−k=q} c̄_k c_l − G₀δ_{q0}.
pub fn finite_mode_w(modes: &[[i64; 2]], c: &[crate::C64], vhat: &dyn Fn([i64; 2]) -> f64, g0: f64, tau: f64, e: f64) -> f64 {
    let mut fq: HashMap<[i64; 2], crate::C64> = HashMap::new();
    for (i, k) in modes.iter().enumerate() {
        for (j, l) in modes.iter().enumerate() {
            let q = [l[0] - k[0], l[1] - k[1]];
            *fq.entry(q).or_insert(crate::C64::new(0.0, 0.0)) += c[i].conj() * c[j];
        }
    }
    let f0 = fq[&[0, 0]].re - g0;
    let mut w = 0.5 * vhat([0, 0]) * f0 * f0 - tau * f0 - e;
    for (q, v) in &fq {
        if *q != [0, 0] {
            w += 0.5 * vhat(*q) * v.norm_sqr();
        }
    }
    w
}

fn classical_at(modes: &[[i64; 2]], kappa: f64, spec: Option<&PotentialSpec>, tau: f64, e: f64, nt: usize, nth: usize) -> (f64, Vec<f64>) {
    let m = modes.len();
    let lam: Vec<f64> = modes.iter().map(|&k| lambda(k, kappa)).collect();
    let g0: f64 = lam.iter().map(|l| 1.0 / l).sum();
    let vhat = |q: [i64; 2]| spec.map_or(0.0, |s| s.fourier(q));
    // pairs (i, j) grouped by q = k_j − k_i ≠ 0, with v̂(q)
    let mut groups: Vec<([i64; 2], f64, Vec<(usize, usize)>)> = Vec::new();
    for (i, k) in modes.iter().enumerate() {
        for (j, l) in modes.iter().enumerate() {
            let q = [l[0] - k[0], l[1] - k[1]];
            if q == [0, 0] {
                continue;
            }
            match groups.iter_mut().find(|g| g.0 == q) {
                Some(g) => g.2.push((i, j)),
                None => groups.push((q, vhat(q), vec![(i, j)])),
            }
        }
    }
    let v0 = vhat([0, 0]);
    // t = λ|c|² ~ Exp(1); e^{−W} is bounded, so [0, 45] loses below e^{−45}
    let (tn, tw): (Vec<f64>, Vec<f64>) = {
        let (x, w) = gauss_legendre_on(nt, 0.0, 45.0);
        let tw = x.iter().zip(&w).map(|(a, b)| b * (-a).exp()).collect();
        (x, tw)
    };
    let nth = if m == 1 { 1 } else { nth };
    let units: Vec<crate::C64> = (0..nth)
        .map(|a| crate::C64::from_polar(1.0, 2.0 * std::f64::consts::PI * a as f64 / nth as f64))
        .collect();
    let n_t = tn.len();
    let n_rad = n_t.pow(m as u32);
    let n_ph = nth.pow((m - 1) as u32);
    let mut z = crate::CompensatedSum::new();
    let mut moments = vec![crate::CompensatedSum::new(); m];
    let mut c = vec![crate::C64::new(0.0, 0.0); m];
    let mut s = vec![0.0; m];
    for ridx in 0..n_rad {
        let mut r = ridx;
        let mut w = 1.0 / n_ph as f64;
        for i in 0..m {
            let ti = r % n_t;
            r /= n_t;
            s[i] = tn[ti] / lam[i];
            w *= tw[ti];
        }
        let f0 = s.iter().sum::<f64>() - g0;
        let base = 0.5 * v0 * f0 * f0 - tau * f0 - e;
        let mut acc = 0.0;
        for pidx in 0..n_ph {
            let mut r = pidx;
            c[0] = crate::C64::new(s[0].sqrt(), 0.0);
            for i in 1..m {
                c[i] = units[r % nth] * s[i].sqrt();
                r /= nth;
            }
            let mut wq = base;
            for (_, v, pairs) in &groups {
                let mut f = crate::C64::new(0.0, 0.0);
                for &(i, j) in pairs {
                    f += c[i].conj() * c[j];
                }
                wq += 0.5 * v * f.norm_sqr();
            }
            acc += (-wq).exp();
        }
        let b = w * acc;
        z.add(b);
        for i in 0..m {
            moments[i].add(b * s[i]);
        }
    }
    let zeta = z.value();
    let gamma1 = (0..m).map(|i| moments[i].value() / zeta - 1.0 / lam[i]).collect();
    (zeta, gamma1)
}

/// Product quadrature over radii (composite Gauss–Legendre in λ|c|²) and
/// relative phases (trapezoid); the gauge phase of the first mode is fixed.
/// The node counts are raised until ζ changes by less than 10⁻⁸ relative.
pub fn classical_reference(modes: &[[i64; 2]], kappa: f64, spec: Option<&PotentialSpec>, tau: f64, e: f64) -> Result<ClassicalReference> {
    if modes.is_empty() || modes.len() > 3 {
        return Err(invalid("the classical reference supports 1 to 3 modes"));
    }
    let ladder = [(32, 8), (48, 12), (64, 16), (96, 24), (144, 32)];
    let mut prev = classical_at(modes, kappa, spec, tau, e, ladder[0].0, ladder[0].1);
    for &(nt, nth) in &ladder[1..] {
        if modes.len() == 3 && nt > 96 {
            // 144³·32² evaluations is past the desk budget
            break;
        }
        let cur = classical_at(modes, kappa, spec, tau, e, nt, nth);
        let rel = (cur.0 - prev.0).abs() / cur.0;
        if rel < 1e-8 {
            return Ok(ClassicalReference {
                zeta: cur.0,
                gamma1: cur.1,
                relative_change: rel,
                nodes: (nt, nth),
            });
        }
        prev = cur;
    }
    Err(crate::Error::NotConverged("finite-mode classical quadrature".into()))
}

/// Per-mode caps c_k = min(n_max, ⌈budget/(νλ_k)⌉): higher modes are Boltzmann
/// suppressed at e^{−νλ_k n}.
pub fn default_caps(modes: &[[i64; 2]], nu: f64, kappa: f64, n_max: usize, budget: f64) -> Vec<usize> {
    modes
        .iter()
        .map(|&k| ((budget / (nu * lambda(k, kappa))).ceil() as usize).min(n_max))
        .collect()
}

/// One ν point of the toy convergence experiment.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ToyPoint {
    pub nu: f64,
    pub n_max: usize,
    pub caps: Vec<usize>,
    pub dim: usize,
    pub z_rel: f64,
    pub z_rel_doubled: f64,
    pub stability: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub gamma_gap: f64,
    pub drops: DropReport,
    pub counterterms: CountertermSet,
}

/// ν-scan of |𝒵 − ζ_fm| and ‖νΓ̂₁ − γ̂₁‖_max at fixed modes and ε.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ToyReport {
    pub modes: Vec<[i64; 2]>,
    pub kappa: f64,
    pub eps: f64,
    pub zeta_fm: f64,
    pub gamma1_fm: Vec<f64>,
    pub points: Vec<ToyPoint>,
    pub gap_decreasing: bool,
    pub gamma_gap_decreasing: bool,
    pub stable: bool,
}

/// Quantum side at one ν: 𝒵 and νΓ̂₁ on the caps (n_max, budget).
fn quantum_point(modes: &[[i64; 2]], nu: f64, kappa: f64, spec: &PotentialSpec, n_max: usize, budget: f64, densities: bool) -> Result<(f64, Vec<f64>, usize, Vec<usize>, DropReport, CountertermSet)> {
    let caps = default_caps(modes, nu, kappa, n_max, budget);
    let basis = FockBasis::with_caps(modes.to_vec(), n_max, caps.clone())?;
    let ct = finite_mode_counterterms(modes, nu, kappa, spec)?;
    let (h, drops) = build_hamiltonian(&basis, nu, kappa, Some(spec), &ct)?;
    let h0 = free_hamiltonian(&basis, nu, kappa)?;
    let g = GibbsState::new(&h);
    let g0 = GibbsState::new(&h0);
    let pf = partition_functions(&g, &g0);
    let free = free_density_one(modes, nu, kappa);
    let gamma1: Vec<f64> = if densities {
        (0..modes.len())
            .map(|i| nu * (expect_monomial(&basis, &g, &[i], &[i]) - free.matrix[(i, i)]))
            .collect()
    } else {
        Vec::new()
    };
    Ok((pf.z_rel, gamma1, basis.dim(), caps, drops, ct))
}

/// Defaults for `toy_convergence`: the Boltzmann factor at the cap is e^{−24}.
pub const TOY_N_SCALE: f64 = 24.0;
pub const TOY_BUDGET: f64 = 36.0;

/// Run the toy experiment: for each ν a truncation with n_max = ⌈n_scale/ν⌉ and
/// per-mode budget `budget`, gated by doubling both.
pub fn toy_convergence(modes: &[[i64; 2]], kappa: f64, spec: &PotentialSpec, nus: &[f64], n_scale: f64, budget: f64) -> Result<ToyReport> {
    let (tau, e) = classical_counterterms(modes, kappa, spec);
    let cl = classical_reference(modes, kappa, Some(spec), tau, e)?;
    let mut points = Vec::new();
    for &nu in nus {
        let n_max = (n_scale / nu).ceil() as usize;
        let (z, g1, dim, caps, drops, ct) = quantum_point(modes, nu, kappa, spec, n_max, budget, true)?;
        let (z2, _, _, _, _, _) = quantum_point(modes, nu, kappa, spec, 2 * n_max, 2.0 * budget, false)?;
        let gamma_gap = g1.iter().zip(&cl.gamma1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        points.push(ToyPoint {
            nu,
            n_max,
            caps,
            dim,
            z_rel: z,
            z_rel_doubled: z2,
            stability: (z2 - z).abs(),
            gap: (z - cl.zeta).abs(),
            relative_gap: (z - cl.zeta).abs() / cl.zeta,
            gamma_gap,
            drops,
            counterterms: ct,
        });
    }
    let dec = |f: &dyn Fn(&ToyPoint) -> f64| points.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let gap_decreasing = dec(&|p: &ToyPoint| p.gap);
    let gamma_gap_decreasing = dec(&|p: &ToyPoint| p.gamma_gap);
    let stable = points.iter().all(|p| p.stability < 1e-8);
    Ok(ToyReport {
        modes: modes.to_vec(),
        kappa,
        eps: spec.eps,
        zeta_fm: cl.zeta,
        gamma1_fm: cl.gamma1,
        points,
        gap_decreasing,
        gamma_gap_decreasing,
        stable,
    })
}
