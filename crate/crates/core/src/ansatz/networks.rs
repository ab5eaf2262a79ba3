//! Log-amplitude evaluation and parameter gradients for each architecture.
//!
//! Complex parameters occupy two consecutive real slots `(re, im)`. Every
//! architecture except the feedforward network is holomorphic in its
//! complex parameters, so the gradient slot of an imaginary part is `i` times
//! the slot of the matching real part.

use num_complex::Complex64;

use crate::model::SpinConfiguration;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub(crate) fn cplx(theta: &[f64], k: usize) -> Complex64 {
    Complex64::new(theta[2 * k], theta[2 * k + 1])
}

#[inline]
fn put_holomorphic(out: &mut [Complex64], k: usize, d: Complex64) {
    out[2 * k] = d;
    out[2 * k + 1] = I * d;
}

/// `ln(2 cosh z)` without overflow for large `|Re z|`.
#[inline]
pub(crate) fn ln_2cosh(z: Complex64) -> Complex64 {
    let z = if z.re < 0.0 { -z } else { z };
    z + (1.0 + (-2.0 * z).exp()).ln()
}

#[inline]
fn spins(x: SpinConfiguration, n: usize, buf: &mut [f64]) {
    for (i, s) in buf.iter_mut().enumerate().take(n) {
        *s = x.spin(i);
    }
}

pub(crate) mod rbm {
    use super::*;

    // Parameters: visible biases `a` (n), hidden biases `b` (m), weights
    // `W` (m × n, row-major), all complex.

    pub fn log_amplitude(theta: &[f64], n: usize, m: usize, x: SpinConfiguration) -> Complex64 {
        let mut s = [0.0; crate::model::MAX_SITES];
        spins(x, n, &mut s);
        let mut chi = Complex64::new(0.0, 0.0);
        for (i, si) in s.iter().enumerate().take(n) {
            chi += cplx(theta, i) * si;
        }
        let w0 = n + m;
        for j in 0..m {
            let mut z = cplx(theta, n + j);
            let row = w0 + j * n;
            for (i, si) in s.iter().enumerate().take(n) {
                z += cplx(theta, row + i) * si;
            }
            chi += ln_2cosh(z);
        }
        chi
    }

    pub fn log_derivatives(
        theta: &[f64],
        n: usize,
        m: usize,
        x: SpinConfiguration,
        out: &mut [Complex64],
    ) {
        let mut s = [0.0; crate::model::MAX_SITES];
        spins(x, n, &mut s);
        for (i, si) in s.iter().enumerate().take(n) {
            put_holomorphic(out, i, Complex64::new(*si, 0.0));
        }
        let w0 = n + m;
        for j in 0..m {
            let mut z = cplx(theta, n + j);
            let row = w0 + j * n;
            for (i, si) in s.iter().enumerate().take(n) {
                z += cplx(theta, row + i) * si;
            }
            let t = z.tanh();
            put_holomorphic(out, n + j, t);
            for (i, si) in s.iter().enumerate().take(n) {
                put_holomorphic(out, row + i, t * si);
            }
        }
    }
}

pub(crate) mod jastrow {
    use super::*;

    /// `χ = Σ_S w_S Π_{i∈S} s_i` over the monomial masks `S`.
    pub fn log_amplitude(theta: &[f64], monomials: &[u64], x: SpinConfiguration) -> Complex64 {
        monomials
            .iter()
            .enumerate()
            .map(|(k, &mask)| cplx(theta, k) * x.parity(mask))
            .sum()
    }

    pub fn log_derivatives(
        monomials: &[u64],
        x: SpinConfiguration,
        out: &mut [Complex64],
    ) {
        for (k, &mask) in monomials.iter().enumerate() {
            put_holomorphic(out, k, Complex64::new(x.parity(mask), 0.0));
        }
    }
}

pub(crate) mod full {
    use super::*;

    pub fn log_amplitude(theta: &[f64], x: SpinConfiguration) -> Complex64 {
        cplx(theta, x.index())
    }

    pub fn log_derivatives(x: SpinConfiguration, out: &mut [Complex64]) {
        out.fill(Complex64::new(0.0, 0.0));
        put_holomorphic(out, x.index(), Complex64::new(1.0, 0.0));
    }
}

/// Real-parameter network: tanh hidden layers followed by two linear heads
/// producing `Re χ` (amplitude) and `Im χ` (phase).
pub(crate) mod feedforward {
    use super::*;

    struct Forward {
        /// Activations per layer, starting with the spin input.
        activations: Vec<Vec<f64>>,
    }

    fn forward(theta: &[f64], n: usize, widths: &[usize], x: SpinConfiguration) -> (Forward, usize) {
        let mut activations = Vec::with_capacity(widths.len() + 1);
        activations.push((0..n).map(|i| x.spin(i)).collect::<Vec<_>>());
        let mut off = 0;
        for &w in widths {
            let input = activations.last().expect("input layer");
            let fan_in = input.len();
            let weights = &theta[off..off + w * fan_in];
            let bias = &theta[off + w * fan_in..off + w * fan_in + w];
            let h: Vec<f64> = (0..w)
                .map(|r| {
                    let row = &weights[r * fan_in..(r + 1) * fan_in];
                    let z: f64 = row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>() + bias[r];
                    z.tanh()
                })
                .collect();
            off += w * fan_in + w;
            activations.push(h);
        }
        (Forward { activations }, off)
    }

    pub fn log_amplitude(theta: &[f64], n: usize, widths: &[usize], x: SpinConfiguration) -> Complex64 {
        let (fwd, off) = forward(theta, n, widths, x);
        let h = fwd.activations.last().expect("output layer");
        let k = h.len();
        let amp: f64 = theta[off..off + k].iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + theta[off + k];
        let ph_off = off + k + 1;
        let phase: f64 =
            theta[ph_off..ph_off + k].iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + theta[ph_off + k];
        Complex64::new(amp, phase)
    }

    pub fn log_derivatives(
        theta: &[f64],
        n: usize,
        widths: &[usize],
        x: SpinConfiguration,
        out: &mut [Complex64],
    ) {
        let (fwd, off) = forward(theta, n, widths, x);
        let h = fwd.activations.last().expect("output layer");
        let k = h.len();
        let ph_off = off + k + 1;
        // heads
        for (idx, hv) in h.iter().enumerate() {
            out[off + idx] = Complex64::new(*hv, 0.0);
            out[ph_off + idx] = Complex64::new(0.0, *hv);
        }
        out[off + k] = Complex64::new(1.0, 0.0);
        out[ph_off + k] = I;
        // adjoint of the last hidden activations
        let mut g: Vec<Complex64> = (0..k)
            .map(|idx| Complex64::new(theta[off + idx], theta[ph_off + idx]))
            .collect();
        // walk layers backwards; recompute offsets
        let mut offsets = Vec::with_capacity(widths.len());
        let mut o = 0;
        let mut fan_in = n;
        for &w in widths {
            offsets.push((o, fan_in));
            o += w * fan_in + w;
            fan_in = w;
        }
        for (layer, &w) in widths.iter().enumerate().rev() {
            let (o, fan_in) = offsets[layer];
            let h_out = &fwd.activations[layer + 1];
            let h_in = &fwd.activations[layer];
            let delta: Vec<Complex64> = (0..w).map(|r| g[r] * (1.0 - h_out[r] * h_out[r])).collect();
            for r in 0..w {
                for c in 0..fan_in {
                    out[o + r * fan_in + c] = delta[r] * h_in[c];
                }
                out[o + w * fan_in + r] = delta[r];
            }
            if layer > 0 {
                let weights = &theta[o..o + w * fan_in];
                g = (0..fan_in)
                    .map(|c| (0..w).map(|r| delta[r] * weights[r * fan_in + c]).sum())
                    .collect();
            }
        }
    }
}
