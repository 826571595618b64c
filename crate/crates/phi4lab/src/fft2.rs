//! Square 2D FFTs on row-major L×L buffers.

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub(crate) struct Fft2 {
    pub l: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(l: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            l,
            fwd: p.plan_fft_forward(l),
            inv: p.plan_fft_inverse(l),
        }
    }

    fn run(&self, data: &mut [Complex<f64>], plan: &Arc<dyn Fft<f64>>) {
        let l = self.l;
        debug_assert_eq!(data.len(), l * l);
        let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        let mut col = vec![Complex::new(0.0, 0.0); l];
        for j in 0..l {
            for i in 0..l {
                col[i] = data[i * l + j];
            }
            plan.process_with_scratch(&mut col, &mut scratch);
            for i in 0..l {
                data[i * l + j] = col[i];
            }
        }
    }

    /// Unnormalized Σ_z f(z) e^{−2πi p·z/L}.
    pub fn forward(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.fwd)
    }

    /// Unnormalized Σ_p c(p) e^{+2πi p·z/L}.
    pub fn inverse(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.inv)
    }

    pub fn forward_real(&self, f: &[f64]) -> Vec<Complex<f64>> {
        let mut d: Vec<Complex<f64>> = f.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.forward(&mut d);
        d
    }
}

/// Signed frequency of FFT bin i.
#[inline]
pub(crate) fn freq(i: usize, l: usize) -> i64 {
    if i <= l / 2 {
        i as i64
    } else {
        i as i64 - l as i64
    }
}

/// Bin of the integer frequency k.
#[inline]
pub(crate) fn bin(k: i64, l: usize) -> usize {
    k.rem_euclid(l as i64) as usize
}
