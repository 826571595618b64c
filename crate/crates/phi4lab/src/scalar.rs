//! Scalar abstractions shared by the generic parts of the crate.

use num_complex::Complex;
use num_rational::Ratio;
use num_traits as nt;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

/// Real floating point type used by the geometric evaluators.
pub trait Real:
    nt::Float + nt::FloatConst + nt::FromPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }

    fn to_f64_lossy(self) -> f64 {
        nt::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Relative machine precision, used to stop series.
    fn tiny() -> Self {
        Self::epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Commutative ring elements that the Wick oracle can sum and multiply.
///
/// `sum_terms` lets floating point types use compensated accumulation while
/// exact types keep plain addition.
pub trait WickScalar:
    Clone
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(n: i64) -> Self;

    fn sum_terms<I: IntoIterator<Item = Self>>(terms: I) -> Self {
        terms.into_iter().fold(Self::zero(), |acc, t| acc + t)
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Compensated sum of a slice or iterator of `f64`.
pub fn ksum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Compensated sum of complex values, real and imaginary parts separately.
pub fn ksum_c<I: IntoIterator<Item = Complex<f64>>>(iter: I) -> Complex<f64> {
    let mut re = CompensatedSum::new();
    let mut im = CompensatedSum::new();
    for z in iter {
        re.add(z.re);
        im.add(z.im);
    }
    Complex::new(re.value(), im.value())
}

impl WickScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_i64(n: i64) -> Self {
        n as f64
    }
    fn sum_terms<I: IntoIterator<Item = Self>>(terms: I) -> Self {
        ksum(terms)
    }
}

impl WickScalar for Complex<f64> {
    fn zero() -> Self {
        Complex::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex::new(1.0, 0.0)
    }
    fn from_i64(n: i64) -> Self {
        Complex::new(n as f64, 0.0)
    }
    fn sum_terms<I: IntoIterator<Item = Self>>(terms: I) -> Self {
        ksum_c(terms)
    }
}

impl WickScalar for i64 {
    fn zero() -> Self {
        0
    }
    fn one() -> Self {
        1
    }
    fn from_i64(n: i64) -> Self {
        n
    }
}

impl WickScalar for Ratio<i64> {
    fn zero() -> Self {
        Ratio::from_integer(0)
    }
    fn one() -> Self {
        Ratio::from_integer(1)
    }
    fn from_i64(n: i64) -> Self {
        Ratio::from_integer(n)
    }
}

impl WickScalar for Complex<Ratio<i64>> {
    fn zero() -> Self {
        Complex::new(Ratio::from_integer(0), Ratio::from_integer(0))
    }
    fn one() -> Self {
        Complex::new(Ratio::from_integer(1), Ratio::from_integer(0))
    }
    fn from_i64(n: i64) -> Self {
        Complex::new(Ratio::from_integer(n), Ratio::from_integer(0))
    }
}
