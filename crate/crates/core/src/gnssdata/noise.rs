use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::diffcore::seeded;

/// 1/f noise by spectral shaping of white Gaussian noise: every Fourier
/// bin is scaled by 1/sqrt(f), the DC bin is zeroed, and the result is
/// rescaled to standard deviation `amplitude`.
pub fn pink_noise(n: usize, amplitude: f64, seed: u64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if amplitude == 0.0 || n == 1 {
        return vec![0.0; n];
    }
    let mut rng = seeded(seed, 0x9e37);
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        // |f| in cycles per sample; bins k and n-k share a frequency
        let f = k.min(n - k) as f64 / n as f64;
        *c /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    out.iter_mut().for_each(|v| *v -= mean);
    let std = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if std > 0.0 {
        out.iter_mut().for_each(|v| *v *= amplitude / std);
    }
    out
}
