//! Directional Gaussian derivatives L_{N,x}, L̄_{N,x} on functionals of the
//! compact-profile field, with symbolic Leibniz/chain rules.
//!
//! With φ = Σ_p c_p e_p and g_p the bin variances,
//! L_{N,x} = Σ_p g_p e^{2πip·x} ∂/∂c̄_p and L̄_{N,x} = Σ_p g_p e^{−2πip·x} ∂/∂c_p,
//! so L_{N,x} φ̄(y) = G_N(x − y) and L_{N,x} φ(y) = 0.
//!
//! Derivatives of the interactions are represented symbolically by the list
//! of directions and evaluated numerically through a nilpotent jet: every
//! grid value carries one infinitesimal e_i per direction with e_i² = 0, φ is
//! shifted by e_i G(x_i − ·) for each L̄ direction and φ̄ by e_j G(x_j − ·) for
//! each L direction (φ and φ̄ treated as independent). The coefficient of
//! Π e_i is the exact mixed derivative of the grid functional.

use crate::gff::{wick_local, CutoffField, SpectralTable};
use crate::interactions::{InteractionKind, Interactions};
use crate::mc::{par_replicas, ComplexEstimate, MCEstimate};
use crate::scalar::ksum_c;
use crate::torus::{CutoffProfile, TorusPoint};
use crate::{invalid, Result, C64};
use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

type Pt = TorusPoint<f64>;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// One derivative direction: the point and whether it is L̄ (acting on φ).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    pub x: Pt,
    pub conj: bool,
}

/// L_{N,x} (conj = false) or L̄_{N,x} (conj = true).
#[derive(Clone, Debug)]
pub struct DerivativeOp {
    pub x: Pt,
    pub conj: bool,
    table: Arc<SpectralTable>,
}

impl DerivativeOp {
    /// The profile must be compactly supported so the mode sum is finite.
    pub fn new(x: Pt, conj: bool, table: Arc<SpectralTable>) -> Result<Self> {
        if table.profile != CutoffProfile::Compact {
            return Err(invalid("derivative operators need the compact cutoff profile"));
        }
        Ok(Self { x, conj, table })
    }

    pub fn l(x: Pt, table: Arc<SpectralTable>) -> Result<Self> {
        Self::new(x, false, table)
    }

    pub fn l_bar(x: Pt, table: Arc<SpectralTable>) -> Result<Self> {
        Self::new(x, true, table)
    }

    pub fn direction(&self) -> Direction {
        Direction { x: self.x, conj: self.conj }
    }

    /// G_N(x − y).
    pub fn green(&self, y: Pt) -> f64 {
        self.table.covariance_at(self.x.sub(&y))
    }
}

/// Smooth functionals in the supported catalog.
#[derive(Clone, Debug, PartialEq)]
pub enum Functional {
    Const(C64),
    /// φ(y), or φ̄(y) when `conj`.
    Field { y: Pt, conj: bool },
    /// :φ̄^a φ^b:(y).
    Wick { a: u32, b: u32, y: Pt },
    /// D_{d₁}⋯D_{d_k} V for one interaction (k = 0 is V itself).
    Interaction { kind: InteractionKind, derivs: Vec<Direction> },
    Sum(Vec<Functional>),
    Product(Vec<Functional>),
    /// e^{f}.
    Exp(Box<Functional>),
}

impl Functional {
    pub fn one() -> Self {
        Functional::Const(C64::new(1.0, 0.0))
    }

    pub fn scalar(c: f64) -> Self {
        Functional::Const(C64::new(c, 0.0))
    }

    pub fn phi(y: Pt) -> Self {
        Functional::Field { y, conj: false }
    }

    pub fn phi_bar(y: Pt) -> Self {
        Functional::Field { y, conj: true }
    }

    pub fn interaction(kind: InteractionKind) -> Self {
        Functional::Interaction { kind, derivs: Vec::new() }
    }

    /// e^{−g V}.
    pub fn boltzmann(kind: InteractionKind, g: f64) -> Self {
        Functional::Exp(Box::new(Functional::Product(vec![
            Functional::scalar(-g),
            Functional::interaction(kind),
        ])))
    }

    fn is_zero(&self) -> bool {
        matches!(self, Functional::Const(c) if *c == ZERO)
    }

    /// The complex-conjugate functional.
    pub fn conjugate(&self) -> Self {
        match self {
            Functional::Const(c) => Functional::Const(c.conj()),
            Functional::Field { y, conj } => Functional::Field { y: *y, conj: !conj },
            Functional::Wick { a, b, y } => Functional::Wick { a: *b, b: *a, y: *y },
            Functional::Interaction { kind, derivs } => Functional::Interaction {
                kind: *kind,
                derivs: derivs.iter().map(|d| Direction { x: d.x, conj: !d.conj }).collect(),
            },
            Functional::Sum(fs) => Functional::Sum(fs.iter().map(|f| f.conjugate()).collect()),
            Functional::Product(fs) => Functional::Product(fs.iter().map(|f| f.conjugate()).collect()),
            Functional::Exp(f) => Functional::Exp(Box::new(f.conjugate())),
        }
    }

    fn collect_directions(&self, kind: InteractionKind, out: &mut Vec<Direction>) {
        match self {
            Functional::Interaction { kind: k, derivs } if *k == kind => {
                // multiset union with maximal multiplicity
                let mut used = vec![false; out.len()];
                let mut extra = Vec::new();
                for d in derivs {
                    match (0..out.len()).find(|&i| !used[i] && out[i] == *d) {
                        Some(i) => used[i] = true,
                        None => extra.push(*d),
                    }
                }
                out.extend(extra);
            }
            Functional::Sum(fs) | Functional::Product(fs) => fs.iter().for_each(|f| f.collect_directions(kind, out)),
            Functional::Exp(f) => f.collect_directions(kind, out),
            _ => {}
        }
    }

    /// Number of nodes, a size diagnostic for the expansions.
    pub fn size(&self) -> usize {
        match self {
            Functional::Sum(fs) | Functional::Product(fs) => 1 + fs.iter().map(|f| f.size()).sum::<usize>(),
            Functional::Exp(f) => 1 + f.size(),
            _ => 1,
        }
    }
}

fn sum(mut fs: Vec<Functional>) -> Functional {
    fs.retain(|f| !f.is_zero());
    match fs.len() {
        0 => Functional::Const(ZERO),
        1 => fs.pop().expect("one term"),
        _ => Functional::Sum(fs),
    }
}

fn product(fs: Vec<Functional>) -> Functional {
    if fs.iter().any(|f| f.is_zero()) {
        return Functional::Const(ZERO);
    }
    if fs.len() == 1 {
        return fs.into_iter().next().expect("one factor");
    }
    Functional::Product(fs)
}

/// Symbolic application of a derivative operator.
pub fn apply(op: &DerivativeOp, f: &Functional) -> Result<Functional> {
    Ok(match f {
        Functional::Const(_) => Functional::Const(ZERO),
        Functional::Field { y, conj } => {
            // L hits φ̄, L̄ hits φ
            if *conj != op.conj {
                Functional::scalar(op.green(*y))
            } else {
                Functional::Const(ZERO)
            }
        }
        Functional::Wick { a, b, y } => {
            if a + b > 12 {
                return Err(crate::Error::Unsupported("Wick monomials above degree 12".into()));
            }
            let (mult, a2, b2) = if op.conj { (*b, *a, b.wrapping_sub(1)) } else { (*a, a.wrapping_sub(1), *b) };
            if mult == 0 {
                Functional::Const(ZERO)
            } else {
                product(vec![
                    Functional::scalar(mult as f64 * op.green(*y)),
                    Functional::Wick { a: a2, b: b2, y: *y },
                ])
            }
        }
        Functional::Interaction { kind, derivs } => {
            let mut d = derivs.clone();
            d.push(op.direction());
            // quartic, and at most quadratic in each of φ and φ̄
            let nc = d.iter().filter(|x| x.conj).count();
            if nc > 2 || d.len() - nc > 2 {
                Functional::Const(ZERO)
            } else {
                Functional::Interaction { kind: *kind, derivs: d }
            }
        }
        Functional::Sum(fs) => sum(fs.iter().map(|g| apply(op, g)).collect::<Result<_>>()?),
        Functional::Product(fs) => {
            let mut terms = Vec::new();
            for i in 0..fs.len() {
                let di = apply(op, &fs[i])?;
                if di.is_zero() {
                    continue;
                }
                let mut factors = fs.clone();
                factors[i] = di;
                terms.push(product(factors));
            }
            sum(terms)
        }
        Functional::Exp(g) => product(vec![apply(op, g)?, f.clone()]),
    })
}

/// Apply several operators, rightmost first: ops = [A, B] gives A(B f).
pub fn apply_all(ops: &[DerivativeOp], f: &Functional) -> Result<Functional> {
    let mut out = f.clone();
    for op in ops.iter().rev() {
        out = apply(op, &out)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Jet evaluation of interaction derivatives.

/// Grid jet: component S (bitmask of infinitesimals) holds the coefficient of Π_{i∈S} e_i.
struct Jet {
    comps: Vec<Vec<C64>>,
}

impl Jet {
    fn zero(ncomp: usize, len: usize) -> Self {
        Self {
            comps: vec![vec![ZERO; len]; ncomp],
        }
    }

    fn mul(&self, other: &Jet) -> Jet {
        let ncomp = self.comps.len();
        let len = self.comps[0].len();
        let mut out = Jet::zero(ncomp, len);
        for s in 0..ncomp {
            // T ⊆ S
            let mut t = s;
            loop {
                let (a, b) = (&self.comps[t], &other.comps[s & !t]);
                if a.iter().any(|z| *z != ZERO) && b.iter().any(|z| *z != ZERO) {
                    for ((o, x), y) in out.comps[s].iter_mut().zip(a).zip(b) {
                        *o += x * y;
                    }
                }
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
        }
        out
    }

    /// h²·Σ_z per component.
    fn integrate(&self, h2: f64) -> Vec<C64> {
        self.comps.iter().map(|c| ksum_c(c.iter().copied()) * h2).collect()
    }
}

/// G(x − z) on the grid, from Σ_p g_p e^{2πip·x} e^{−2πip·z}.
fn green_grid(table: &SpectralTable, x: Pt) -> Vec<C64> {
    let l = table.l;
    let mut a: Vec<C64> = (0..l * l)
        .map(|i| {
            let g = table.var[i];
            if g == 0.0 {
                return ZERO;
            }
            let f = crate::interactions::bin_freq(i, l);
            let ph = 2.0 * PI * (f[0] as f64 * x.x[0] + f[1] as f64 * x.x[1]);
            C64::new(ph.cos(), ph.sin()) * g
        })
        .collect();
    table.fft.forward(&mut a);
    a
}

/// All 2^d mixed derivatives of one interaction along `dirs` at `field`.
pub fn interaction_jet(inter: &Interactions, field: &CutoffField, kind: InteractionKind, dirs: &[Direction]) -> Result<Vec<C64>> {
    let d = dirs.len();
    if d > 6 {
        return Err(crate::Error::Unsupported("more than six derivative directions".into()));
    }
    let table = &field.table;
    let l = table.l;
    let len = l * l;
    let h2 = 1.0 / len as f64;
    let ncomp = 1usize << d;
    let grid = field.grid();
    let mut phi = Jet::zero(ncomp, len);
    let mut phib = Jet::zero(ncomp, len);
    phi.comps[0] = grid.to_vec();
    phib.comps[0] = grid.iter().map(|z| z.conj()).collect();
    for (i, dir) in dirs.iter().enumerate() {
        let g = green_grid(table, dir.x);
        if dir.conj {
            phi.comps[1 << i] = g;
        } else {
            phib.comps[1 << i] = g;
        }
    }
    let r = phi.mul(&phib);
    let g0 = inter.g0;
    let totals = match kind {
        InteractionKind::VN => {
            // ½(r² − 4G₀r + 2G₀²)
            let mut q = r.mul(&r);
            for (qs, rs) in q.comps.iter_mut().zip(&r.comps) {
                for (a, b) in qs.iter_mut().zip(rs) {
                    *a -= 4.0 * g0 * b;
                }
            }
            q.comps[0].iter_mut().for_each(|a| *a += 2.0 * g0 * g0);
            q.integrate(h2).into_iter().map(|z| z * 0.5).collect::<Vec<_>>()
        }
        InteractionKind::VEpsN | InteractionKind::WEpsN => {
            let mut f = r;
            f.comps[0].iter_mut().for_each(|a| *a -= g0);
            let vf = convolve(table, &f, &inter.v_hat);
            let quad: Vec<C64> = f.mul(&vf).integrate(h2).into_iter().map(|z| z * 0.5).collect();
            if kind == InteractionKind::WEpsN {
                let lin = f.integrate(h2);
                let mut out: Vec<C64> = quad.iter().zip(&lin).map(|(q, s)| q - s * inter.tau).collect();
                out[0] -= inter.energy;
                out
            } else {
                let kphi = convolve(table, &phi, &inter.k_hat);
                let cross = phib.mul(&kphi).integrate(h2);
                let mut out: Vec<C64> = quad.iter().zip(&cross).map(|(q, c)| q - c).collect();
                out[0] += inter.half_vg2;
                out
            }
        }
    };
    Ok(totals)
}

/// Grid convolution h²Σ_{z'} k(z − z') f(z') per component, given ĥ = h²·DFT(k).
fn convolve(table: &SpectralTable, f: &Jet, k_hat: &[f64]) -> Jet {
    let len = table.l * table.l;
    let h2 = 1.0 / len as f64;
    let comps = f
        .comps
        .iter()
        .map(|c| {
            if c.iter().all(|z| *z == ZERO) {
                return c.clone();
            }
            let mut d = c.clone();
            table.fft.forward(&mut d);
            for (z, k) in d.iter_mut().zip(k_hat) {
                *z *= *k;
            }
            table.fft.inverse(&mut d);
            // forward·inverse is L² times identity; the h² of the sum cancels it
            d.iter_mut().for_each(|z| *z *= h2);
            d
        })
        .collect();
    Jet { comps }
}

/// Evaluation context: one field, one set of interactions, cached jets.
pub struct EvalContext<'a> {
    pub field: &'a CutoffField,
    pub inter: &'a Interactions,
    cache: RefCell<Vec<(InteractionKind, Vec<Direction>, Vec<C64>)>>,
}

impl<'a> EvalContext<'a> {
    pub fn new(field: &'a CutoffField, inter: &'a Interactions) -> Self {
        Self {
            field,
            inter,
            cache: RefCell::new(Vec::new()),
        }
    }

    /// Precompute one jet per interaction kind covering every derivative in `f`.
    pub fn prepare(&self, f: &Functional) -> Result<()> {
        for kind in [InteractionKind::VN, InteractionKind::VEpsN, InteractionKind::WEpsN] {
            let mut dirs = Vec::new();
            f.collect_directions(kind, &mut dirs);
            if contains_kind(f, kind) {
                let jet = interaction_jet(self.inter, self.field, kind, &dirs)?;
                self.cache.borrow_mut().push((kind, dirs, jet));
            }
        }
        Ok(())
    }

    fn interaction(&self, kind: InteractionKind, derivs: &[Direction]) -> Result<C64> {
        for (k, dirs, jet) in self.cache.borrow().iter() {
            if *k != kind {
                continue;
            }
            let mut used = vec![false; dirs.len()];
            let mut mask = 0usize;
            let mut ok = true;
            for d in derivs {
                match (0..dirs.len()).find(|&i| !used[i] && dirs[i] == *d) {
                    Some(i) => {
                        used[i] = true;
                        mask |= 1 << i;
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                return Ok(jet[mask]);
            }
        }
        let jet = interaction_jet(self.inter, self.field, kind, derivs)?;
        let v = jet[jet.len() - 1];
        self.cache.borrow_mut().push((kind, derivs.to_vec(), jet));
        Ok(v)
    }

    pub fn evaluate(&self, f: &Functional) -> Result<C64> {
        Ok(match f {
            Functional::Const(c) => *c,
            Functional::Field { y, conj } => {
                let v = self.field.eval(*y);
                if *conj {
                    v.conj()
                } else {
                    v
                }
            }
            Functional::Wick { a, b, y } => {
                // wick_local orders as :φ^p φ̄^q:
                wick_local(self.field.eval(*y), *b, *a, self.inter.g0)
            }
            Functional::Interaction { kind, derivs } => self.interaction(*kind, derivs)?,
            Functional::Sum(fs) => {
                let mut acc = ZERO;
                for g in fs {
                    acc += self.evaluate(g)?;
                }
                acc
            }
            Functional::Product(fs) => {
                let mut acc = C64::new(1.0, 0.0);
                for g in fs {
                    acc *= self.evaluate(g)?;
                }
                acc
            }
            Functional::Exp(g) => self.evaluate(g)?.exp(),
        })
    }
}

fn contains_kind(f: &Functional, kind: InteractionKind) -> bool {
    match f {
        Functional::Interaction { kind: k, .. } => *k == kind,
        Functional::Sum(fs) | Functional::Product(fs) => fs.iter().any(|g| contains_kind(g, kind)),
        Functional::Exp(g) => contains_kind(g, kind),
        _ => false,
    }
}

/// Evaluate f on a field.
pub fn evaluate(f: &Functional, field: &CutoffField, inter: &Interactions) -> Result<C64> {
    let ctx = EvalContext::new(field, inter);
    ctx.prepare(f)?;
    ctx.evaluate(f)
}

/// Perturb c̄_p by h g_p e^{2πip·x} (and c_p by h g_p e^{−2πip·x} for L̄)
/// without keeping c̄ = conj(c): the Wirtinger difference quotient.
///
/// Returns (V(h) − V(−h))/2h for the grid functional evaluated with φ and φ̄
/// perturbed independently, which is what the jet computes exactly.
pub fn finite_difference(inter: &Interactions, field: &CutoffField, kind: InteractionKind, dir: Direction, h: f64) -> Result<C64> {
    let g = green_grid(&field.table, dir.x);
    let eval = |s: f64| -> Result<C64> {
        // a jet with no directions, but with shifted φ or φ̄
        let grid = field.grid();
        let (phi, phib): (Vec<C64>, Vec<C64>) = if dir.conj {
            (grid.iter().zip(&g).map(|(p, gg)| p + gg * s).collect(), grid.iter().map(|p| p.conj()).collect())
        } else {
            (grid.to_vec(), grid.iter().zip(&g).map(|(p, gg)| p.conj() + gg * s).collect())
        };
        interaction_on_grids(inter, &field.table, kind, &phi, &phib)
    };
    Ok((eval(h)? - eval(-h)?) / (2.0 * h))
}

/// The grid interaction with independent φ, φ̄ grids.
fn interaction_on_grids(inter: &Interactions, table: &SpectralTable, kind: InteractionKind, phi: &[C64], phib: &[C64]) -> Result<C64> {
    let len = phi.len();
    let h2 = 1.0 / len as f64;
    let g0 = inter.g0;
    let r: Vec<C64> = phi.iter().zip(phib).map(|(a, b)| a * b).collect();
    Ok(match kind {
        InteractionKind::VN => ksum_c(r.iter().map(|x| 0.5 * (x * x - 4.0 * g0 * x + 2.0 * g0 * g0))) * h2,
        _ => {
            let f = Jet {
                comps: vec![r.iter().map(|x| x - g0).collect()],
            };
            let vf = convolve(table, &f, &inter.v_hat);
            let quad = ksum_c(f.comps[0].iter().zip(&vf.comps[0]).map(|(a, b)| a * b)) * (0.5 * h2);
            if kind == InteractionKind::WEpsN {
                quad - ksum_c(f.comps[0].iter().copied()) * (h2 * inter.tau) - inter.energy
            } else {
                let p = Jet { comps: vec![phi.to_vec()] };
                let kp = convolve(table, &p, &inter.k_hat);
                quad - ksum_c(phib.iter().zip(&kp.comps[0]).map(|(a, b)| a * b)) * h2 + inter.half_vg2
            }
        }
    })
}

/// Richardson-extrapolated central difference from steps h and h/10.
pub fn richardson_derivative(inter: &Interactions, field: &CutoffField, kind: InteractionKind, dir: Direction) -> Result<C64> {
    let a = finite_difference(inter, field, kind, dir, 1e-3)?;
    let b = finite_difference(inter, field, kind, dir, 1e-4)?;
    // central differences have O(h²) error
    Ok((b * 100.0 - a) / 99.0)
}

/// Paired IBP estimates of E[L_x f] and E[φ(x) f] (E[φ̄(x) f] for L̄).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct IbpReport {
    pub lhs: ComplexEstimate,
    pub rhs: ComplexEstimate,
    pub diff: ComplexEstimate,
}

impl IbpReport {
    /// |lhs − rhs| ≤ k · stderr(diff) in both components.
    pub fn passes(&self, k: f64) -> bool {
        let ok = |e: &MCEstimate| e.mean.abs() <= k * e.stderr || e.mean.abs() < 1e-13;
        ok(&self.diff.re) && ok(&self.diff.im)
    }
}

/// Common-random-number check of E[L f] = E[φ(x) f].
pub fn ibp_check(
    op: &DerivativeOp,
    f: &Functional,
    inter: &Interactions,
    samples: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<IbpReport> {
    let lf = apply(op, f)?;
    let table = &*op.table;
    let rows = par_replicas(samples, workers, |r| -> Result<(C64, C64)> {
        let field = table.sample(&crate::gff::StreamKey::new(seed, "X", r));
        let ctx = EvalContext::new(&field, inter);
        ctx.prepare(&lf)?;
        ctx.prepare(f)?;
        let a = ctx.evaluate(&lf)?;
        let phi = field.eval(op.x);
        let phi = if op.conj { phi.conj() } else { phi };
        Ok((a, phi * ctx.evaluate(f)?))
    });
    let rows: Vec<(C64, C64)> = rows.into_iter().collect::<Result<_>>()?;
    let lhs: Vec<C64> = rows.iter().map(|r| r.0).collect();
    let rhs: Vec<C64> = rows.iter().map(|r| r.1).collect();
    let diff: Vec<C64> = rows.iter().map(|r| r.0 - r.1).collect();
    Ok(IbpReport {
        lhs: ComplexEstimate::from_samples(&lhs),
        rhs: ComplexEstimate::from_samples(&rhs),
        diff: ComplexEstimate::from_samples(&diff),
    })
}

/// ζγ̂₁ from both routes on common samples.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct CorrelationReport {
    /// E[L̄_{x̃} L_x e^{−gV}].
    pub by_derivatives: ComplexEstimate,
    /// E[:φ̄(x̃)φ(x): e^{−gV}].
    pub direct: ComplexEstimate,
    /// Paired difference of the two.
    pub diff: ComplexEstimate,
}

/// Derivative representation of ζγ̂_p for p = 1.
///
/// The direct route subtracts the exactly mean-zero control :φ̄(x̃)φ(x):
/// (free expectation), which leaves its mean unchanged and removes the O(1)
/// noise at small coupling.
pub fn correlation_by_derivatives(
    table: Arc<SpectralTable>,
    inter: &Interactions,
    kind: Option<InteractionKind>,
    coupling: f64,
    xt: &[Pt],
    x: &[Pt],
    samples: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<CorrelationReport> {
    if xt.len() != x.len() || x.is_empty() {
        return Err(invalid("need matching nonempty point lists"));
    }
    if x.len() > 1 {
        return Err(crate::Error::Unsupported("derivative representation implemented for p = 1".into()));
    }
    let boltz = match kind {
        Some(k) => Functional::boltzmann(k, coupling),
        None => Functional::one(),
    };
    let ops = [
        DerivativeOp::l_bar(xt[0], table.clone())?,
        DerivativeOp::l(x[0], table.clone())?,
    ];
    let rep = apply_all(&ops, &boltz)?;
    let gxx = table.covariance_at(x[0].sub(&xt[0]));
    let rows = par_replicas(samples, workers, |r| -> Result<(C64, C64)> {
        let field = table.sample(&crate::gff::StreamKey::new(seed, "X", r));
        let ctx = EvalContext::new(&field, inter);
        ctx.prepare(&rep)?;
        ctx.prepare(&boltz)?;
        let a = ctx.evaluate(&rep)?;
        let w = ctx.evaluate(&boltz)?;
        let wick = field.eval(xt[0]).conj() * field.eval(x[0]) - gxx;
        Ok((a, wick * (w - 1.0)))
    });
    let rows: Vec<(C64, C64)> = rows.into_iter().collect::<Result<_>>()?;
    let a: Vec<C64> = rows.iter().map(|r| r.0).collect();
    let b: Vec<C64> = rows.iter().map(|r| r.1).collect();
    let d: Vec<C64> = rows.iter().map(|r| r.0 - r.1).collect();
    Ok(CorrelationReport {
        by_derivatives: ComplexEstimate::from_samples(&a),
        direct: ComplexEstimate::from_samples(&b),
        diff: ComplexEstimate::from_samples(&d),
    })
}

/// Small-coupling check of ζγ̂₁(g)/g against the first-order oracle.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PerturbativeFit {
    pub couplings: Vec<f64>,
    /// Direct estimates of ζγ̂₁(g)/g.
    pub direct: Vec<f64>,
    pub stderr: Vec<f64>,
    pub oracle_slope: f64,
    /// Polynomial extrapolation of ζγ̂₁(g)/g to g = 0 through all couplings.
    pub fitted_slope: f64,
    pub fitted_slope_stderr: f64,
    /// |est − g·oracle| / g² per coupling.
    pub residuals: Vec<f64>,
    /// Largest of `residuals`.
    pub residual_scale: f64,
}

/// Lagrange weights of the interpolant through `nodes` evaluated at 0.
fn extrapolation_weights(nodes: &[f64]) -> Vec<f64> {
    (0..nodes.len())
        .map(|j| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, &gk)| gk / (gk - nodes[j]))
                .product()
        })
        .collect()
}

/// First-order check at couplings g against −Σ_p (K̂ − τ) g_p² e^{2πip·(x−x̃)}.
///
/// All couplings share the samples, so the extrapolated intercept is a
/// per-sample linear combination and its standard error is exact. Over
/// g ∈ [0.05, 0.2] the curvature of ζγ̂₁(g)/g is large, and a straight-line
/// intercept there is biased by about +0.05 at N = 8.
///
/// The grid points x, x̃ are given as integer indices so the oracle is exact.
pub fn perturbative_fit(
    table: Arc<SpectralTable>,
    inter: &Interactions,
    couplings: &[f64],
    xt: [usize; 2],
    x: [usize; 2],
    samples: u64,
    seed: u64,
    workers: Option<usize>,
) -> Result<PerturbativeFit> {
    if couplings.is_empty() || couplings.iter().any(|&g| !(g > 0.0)) {
        return Err(invalid("couplings must be positive"));
    }
    let l = table.l;
    let oracle = crate::wick::gamma1_first_order(inter, &table.var, x, xt);
    let d = ((x[0] + l - xt[0]) % l) * l + (x[1] + l - xt[1]) % l;
    let gxx = table.covariance_grid()[d];
    let rows = par_replicas(samples, workers, |r| {
        let field = table.sample(&crate::gff::StreamKey::new(seed, "X", r));
        let g = field.grid();
        let wick = (g[xt[0] * l + xt[1]].conj() * g[x[0] * l + x[1]]).re - gxx;
        let w = inter.w_eps(&field).value;
        couplings.iter().map(|&c| wick * (-c * w).exp_m1() / c).collect::<Vec<f64>>()
    });
    let per: Vec<MCEstimate> = (0..couplings.len())
        .map(|j| MCEstimate::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let wts = extrapolation_weights(couplings);
    let icpt = MCEstimate::from_samples(&rows.iter().map(|r| r.iter().zip(&wts).map(|(y, w)| y * w).sum()).collect::<Vec<f64>>());
    let residuals: Vec<f64> = couplings.iter().zip(&per).map(|(g, e)| (e.mean - oracle).abs() / g).collect();
    Ok(PerturbativeFit {
        couplings: couplings.to_vec(),
        direct: per.iter().map(|e| e.mean).collect(),
        stderr: per.iter().map(|e| e.stderr).collect(),
        oracle_slope: oracle,
        fitted_slope: icpt.mean,
        fitted_slope_stderr: icpt.stderr,
        residual_scale: residuals.iter().cloned().fold(0.0, f64::max),
        residuals,
    })
}

/// E[X · conj(:φ̄^a φ^b:(y))] for X a derivative output, by MC.
pub fn chaos_cross_moment(
    f: &Functional,
    inter: &Interactions,
    table: &SpectralTable,
    a: u32,
    b: u32,
    y: Pt,
    samples: u64,
    seed: u64,
) -> Result<ComplexEstimate> {
    let rows = par_replicas(samples, None, |r| -> Result<C64> {
        let field = table.sample(&crate::gff::StreamKey::new(seed, "X", r));
        let v = evaluate(f, &field, inter)?;
        let w = wick_local(field.eval(y), b, a, inter.g0);
        Ok(v * w.conj())
    });
    let rows: Vec<C64> = rows.into_iter().collect::<Result<_>>()?;
    Ok(ComplexEstimate::from_samples(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::StreamKey;
    use crate::interactions::PotentialSpec;

    fn setup(n: f64, l: usize) -> (Arc<SpectralTable>, Interactions) {
        let t = SpectralTable::cutoff(n, CutoffProfile::Compact, l, 1.0).unwrap();
        let spec = PotentialSpec::bump(0.25).unwrap();
        let i = Interactions::new(&t, &spec).unwrap();
        (Arc::new(t), i)
    }

    fn pts() -> (Pt, Pt) {
        (TorusPoint::new(0.125, -0.25), TorusPoint::new(0.3, 0.1))
    }

    #[test]
    fn kernel_identities_are_exact() {
        let (t, _) = setup(4.0, 16);
        let (x, y) = pts();
        let l = DerivativeOp::l(x, t.clone()).unwrap();
        let lb = DerivativeOp::l_bar(x, t.clone()).unwrap();
        let g = t.covariance_at(x.sub(&y));
        assert_eq!(apply(&l, &Functional::phi_bar(y)).unwrap(), Functional::scalar(g));
        assert_eq!(apply(&l, &Functional::phi(y)).unwrap(), Functional::Const(ZERO));
        assert_eq!(apply(&lb, &Functional::phi(y)).unwrap(), Functional::scalar(g));
        assert_eq!(apply(&l, &Functional::one()).unwrap(), Functional::Const(ZERO));
        let gauss = SpectralTable::cutoff(4.0, CutoffProfile::Gaussian, 32, 1.0).unwrap();
        assert!(DerivativeOp::l(x, Arc::new(gauss)).is_err());
        let w = Functional::Wick { a: 7, b: 6, y };
        assert!(apply(&l, &w).is_err());
    }

    #[test]
    fn jet_base_values_match_interactions() {
        let (t, inter) = setup(4.0, 16);
        let f = t.sample(&StreamKey::new(1, "X", 0));
        for (kind, v) in [
            (InteractionKind::VN, inter.v_n(&f).value),
            (InteractionKind::VEpsN, inter.v_eps(&f).value),
            (InteractionKind::WEpsN, inter.w_eps(&f).value),
        ] {
            let j = interaction_jet(&inter, &f, kind, &[]).unwrap();
            assert!((j[0].re - v).abs() < 1e-11 * (1.0 + v.abs()), "{kind:?}");
            assert!(j[0].im.abs() < 1e-11);
        }
    }

    #[test]
    fn first_derivative_of_v_n_matches_convolution_formula_and_differences() {
        let (t, inter) = setup(4.0, 16);
        let f = t.sample(&StreamKey::new(2, "X", 0));
        let (x, _) = pts();
        let dir = Direction { x, conj: false };
        let j = interaction_jet(&inter, &f, InteractionKind::VN, &[dir]).unwrap()[1];
        // h² Σ_z G(x − z) :φ|φ|²:(z)
        let l = t.l;
        let h2 = 1.0 / (l * l) as f64;
        let gx = green_grid(&t, x);
        let direct = ksum_c(f.grid().iter().zip(&gx).map(|(p, g)| g * wick_local(*p, 2, 1, inter.g0))) * h2;
        assert!((j - direct).norm() < 1e-12 * (1.0 + direct.norm()));
        for kind in [InteractionKind::VN, InteractionKind::VEpsN, InteractionKind::WEpsN] {
            for conj in [false, true] {
                let d = Direction { x, conj };
                let j = interaction_jet(&inter, &f, kind, &[d]).unwrap()[1];
                let fd = richardson_derivative(&inter, &f, kind, d).unwrap();
                assert!((j - fd).norm() < 1e-5 * (1.0 + j.norm()), "{kind:?} {conj}: {j} vs {fd}");
            }
        }
    }

    #[test]
    fn real_interactions_have_conjugate_gradients() {
        let (t, inter) = setup(4.0, 16);
        let f = t.sample(&StreamKey::new(3, "X", 0));
        let (x, y) = pts();
        for kind in [InteractionKind::VN, InteractionKind::VEpsN, InteractionKind::WEpsN] {
            let j = interaction_jet(&inter, &f, kind, &[Direction { x, conj: false }, Direction { x: y, conj: true }]).unwrap();
            let jb = interaction_jet(&inter, &f, kind, &[Direction { x, conj: true }, Direction { x: y, conj: false }]).unwrap();
            assert!((j[1] - jb[1].conj()).norm() < 1e-12);
            assert!((j[3] - jb[3].conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn leibniz_and_conjugation_on_random_fields() {
        let (t, inter) = setup(4.0, 16);
        let (x, y) = pts();
        let z = TorusPoint::new(-0.4, 0.35);
        let l = DerivativeOp::l(x, t.clone()).unwrap();
        let lb = DerivativeOp::l_bar(x, t.clone()).unwrap();
        let f = Functional::Product(vec![Functional::phi_bar(y), Functional::Wick { a: 2, b: 1, y: z }]);
        let g = Functional::boltzmann(InteractionKind::WEpsN, 0.3);
        let fg = Functional::Product(vec![f.clone(), g.clone()]);
        let lfg = apply(&l, &fg).unwrap();
        let lf = apply(&l, &f).unwrap();
        let lg = apply(&l, &g).unwrap();
        let lbar_conj = apply(&lb, &fg.conjugate()).unwrap();
        for r in 0..100 {
            let field = t.sample(&StreamKey::new(9, "X", r));
            let e = |h: &Functional| evaluate(h, &field, &inter).unwrap();
            let lhs = e(&lfg);
            let rhs = e(&lf) * e(&g) + e(&f) * e(&lg);
            assert!((lhs - rhs).norm() < 1e-8 * (1.0 + lhs.norm()));
            assert!((e(&lbar_conj) - lhs.conj()).norm() < 1e-8 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn derivatives_beyond_the_degree_vanish() {
        let (t, _) = setup(4.0, 16);
        let (x, _) = pts();
        let l = DerivativeOp::l(x, t).unwrap();
        let v = Functional::interaction(InteractionKind::VN);
        let three = apply_all(&[l.clone(), l.clone(), l], &v).unwrap();
        assert_eq!(three, Functional::Const(ZERO));
    }

    #[test]
    fn ibp_small_sample_identities() {
        let (t, inter) = setup(4.0, 16);
        let (x, y) = pts();
        let l = DerivativeOp::l(x, t.clone()).unwrap();
        let r = ibp_check(&l, &Functional::one(), &inter, 200, 1, None).unwrap();
        assert_eq!(r.lhs.mean(), ZERO);
        assert!(r.passes(3.0));
        let r = ibp_check(&l, &Functional::phi_bar(y), &inter, 4000, 2, None).unwrap();
        let g = t.covariance_at(x.sub(&y));
        assert!((r.lhs.mean().re - g).abs() < 1e-14);
        assert!(r.rhs.z_score(C64::new(g, 0.0)) < 4.0);
        let r = ibp_check(&l, &Functional::boltzmann(InteractionKind::WEpsN, 1.0), &inter, 4000, 3, None).unwrap();
        assert!(r.passes(3.0), "{r:?}");
    }

    #[test]
    fn extrapolation_weights_reproduce_quadratics() {
        let g = [0.05, 0.1, 0.2];
        let w = extrapolation_weights(&g);
        let f = |x: f64| 0.3 - 2.0 * x + 5.0 * x * x;
        let at0: f64 = g.iter().zip(&w).map(|(x, w)| w * f(*x)).sum();
        assert!((at0 - 0.3).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_correlation_vanishes() {
        let (t, inter) = setup(4.0, 16);
        let (x, _) = pts();
        let r = correlation_by_derivatives(t, &inter, None, 0.0, &[x], &[x], 100, 1, None).unwrap();
        assert_eq!(r.by_derivatives.mean(), ZERO);
        assert_eq!(r.direct.mean(), ZERO);
    }

    #[test]
    fn derivative_outputs_are_orthogonal_to_high_chaos() {
        let (t, inter) = setup(4.0, 16);
        let (x, y) = pts();
        let l = DerivativeOp::l(x, t.clone()).unwrap();
        let lv = apply(&l, &Functional::interaction(InteractionKind::VEpsN)).unwrap();
        // L V has two φ and one φ̄; the matching order-5 monomial is :φ̄²φ³:
        let e = chaos_cross_moment(&lv, &inter, &t, 2, 3, y, 30000, 5).unwrap();
        assert!(e.z_score(ZERO) < 4.0);
        // sanity: the order-3 projection is visible
        let e3 = chaos_cross_moment(&lv, &inter, &t, 1, 2, x, 3000, 4).unwrap();
        assert!(e3.z_score(ZERO) > 4.0);
    }
}
