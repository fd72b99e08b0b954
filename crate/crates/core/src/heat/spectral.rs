//! Separable n-D FFT on the lattice and Fourier multipliers of the Laplacian.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::group::GroupModel;
use crate::par;

pub struct SpectralPlan {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    eigenvalues: Vec<f64>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("shape", &self.shape)
            .finish()
    }
}

/// Signed wavenumber `2πm/L` of FFT bin `m` on an axis of `n` points.
pub fn wavenumber(m: usize, n: usize, extent: f64) -> f64 {
    let signed = if m <= n / 2 {
        m as f64
    } else {
        m as f64 - n as f64
    };
    2.0 * PI * signed / extent
}

impl SpectralPlan {
    pub fn new(g: &GroupModel) -> Self {
        let shape = g.shape();
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let strides = g.strides();
        let mut eigenvalues = vec![0.0; g.len()];
        par::fill(&mut eigenvalues, |flat| {
            let mut lam = 0.0;
            for (k, axis) in g.axes.iter().enumerate() {
                let m = (flat / strides[k]) % axis.points;
                let w = wavenumber(m, axis.points, axis.extent());
                lam += w * w;
            }
            lam
        });
        Self {
            shape,
            forward,
            inverse,
            eigenvalues,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Laplacian symbol `|k|²` per flat mode, in FFT order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `e^{−tλ_k}` per mode.
    pub fn multipliers(&self, t: f64) -> Vec<f64> {
        let mut m = vec![0.0; self.len()];
        par::fill(&mut m, |i| (-t * self.eigenvalues[i]).exp());
        m
    }

    pub fn forward(&self, u: &[f64]) -> Vec<Complex<f64>> {
        let mut data: Vec<Complex<f64>> = u.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Inverse transform, normalized, real part.
    pub fn inverse_real(&self, mut data: Vec<Complex<f64>>) -> Vec<f64> {
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        data.into_iter().map(|c| c.re * scale).collect()
    }

    /// Multiply the spectrum of `u` by `mult` and transform back.
    pub fn apply_multipliers(&self, u: &[f64], mult: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(u);
        for (c, &m) in spec.iter_mut().zip(mult) {
            *c *= m;
        }
        self.inverse_real(spec)
    }

    /// `e^{tΔ}u`.
    pub fn heat(&self, u: &[f64], t: f64) -> Vec<f64> {
        if t == 0.0 {
            return u.to_vec();
        }
        self.apply_multipliers(u, &self.multipliers(t))
    }

    fn transform(&self, data: &mut [Complex<f64>], plans: &[Arc<dyn Fft<f64>>]) {
        let nd = self.shape.len();
        for axis in 0..nd {
            let n = self.shape[axis];
            let inner: usize = self.shape[axis + 1..].iter().product();
            let plan = &plans[axis];
            let block = n * inner;
            let run = |chunk: &mut [Complex<f64>]| {
                if inner == 1 {
                    plan.process(chunk);
                } else {
                    // gather the `inner` strided lines of this block contiguously
                    let mut lines = vec![Complex::new(0.0, 0.0); block];
                    for j in 0..n {
                        for r in 0..inner {
                            lines[r * n + j] = chunk[j * inner + r];
                        }
                    }
                    plan.process(&mut lines);
                    for j in 0..n {
                        for r in 0..inner {
                            chunk[j * inner + r] = lines[r * n + j];
                        }
                    }
                }
            };
            par_blocks(data, block, run);
        }
    }
}

fn par_blocks<F>(data: &mut [Complex<f64>], block: usize, f: F)
where
    F: Fn(&mut [Complex<f64>]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par::mode() == par::Mode::Parallel {
        use rayon::prelude::*;
        // group small blocks so each task does a reasonable amount of work
        let per_task = (4096 / block).max(1) * block;
        data.par_chunks_mut(per_task)
            .for_each(|c| c.chunks_mut(block).for_each(&f));
        return;
    }
    data.chunks_mut(block).for_each(f);
}
