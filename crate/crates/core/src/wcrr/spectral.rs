//! Frequency-domain helpers for real multichannel signals on periodic grids.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::fft::Fft3;
use crate::volume::{voxel_count, Dims};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Tap offsets of a kernel of width `k` along one axis.
pub fn offsets(k: usize) -> Vec<isize> {
    (0..k).map(|i| i as isize - (k / 2) as isize).collect()
}

/// `exp(+i 2 pi f d / n)` for `f in 0..n` and each offset `d`, laid out `[f][d]`.
pub fn phase_table(n: usize, k: usize) -> Vec<Complex64> {
    let offs = offsets(k);
    let mut out = Vec::with_capacity(n * k);
    for f in 0..n {
        for &d in &offs {
            let w = 2.0 * PI * f as f64 * d as f64 / n as f64;
            out.push(Complex64::new(w.cos(), w.sin()));
        }
    }
    out
}

/// Linear index of `-f` for every frequency `f`.
pub fn negated_indices(dims: Dims) -> Vec<usize> {
    let mut out = Vec::with_capacity(voxel_count(dims));
    for k in 0..dims[2] {
        let nk = (dims[2] - k) % dims[2];
        for j in 0..dims[1] {
            let nj = (dims[1] - j) % dims[1];
            for i in 0..dims[0] {
                let ni = (dims[0] - i) % dims[0];
                out.push(ni + dims[0] * (nj + dims[1] * nk));
            }
        }
    }
    out
}

/// Splits the spectrum of `a + i b` (with `a`, `b` real) into the spectra of `a` and `b`.
pub fn split_pair(z: &[Complex64], neg: &[usize]) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut a = Vec::with_capacity(z.len());
    let mut b = Vec::with_capacity(z.len());
    let half_i = Complex64::new(0.0, -0.5);
    for (f, &zf) in z.iter().enumerate() {
        let zc = z[neg[f]].conj();
        a.push((zf + zc) * 0.5);
        b.push((zf - zc) * half_i);
    }
    (a, b)
}

/// Spectra of real channels, transforming two channels per complex FFT.
pub fn forward_real(channels: &[Vec<f64>], fft: &Fft3, neg: &[usize]) -> Vec<Vec<Complex64>> {
    let mut out = Vec::with_capacity(channels.len());
    for pair in channels.chunks(2) {
        let mut buf: Vec<Complex64> = match pair {
            [a, b] => a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect(),
            [a] => a.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            _ => unreachable!(),
        };
        fft.forward(&mut buf);
        if pair.len() == 2 {
            let (a, b) = split_pair(&buf, neg);
            out.push(a);
            out.push(b);
        } else {
            out.push(buf);
        }
    }
    out
}

/// Real channels from spectra of real signals (inverse of [`forward_real`]).
pub fn inverse_real(spectra: &[Vec<Complex64>], fft: &Fft3) -> Vec<Vec<f64>> {
    let n = spectra.first().map_or(0, |s| s.len());
    let scale = 1.0 / n as f64;
    let mut out = Vec::with_capacity(spectra.len());
    for pair in spectra.chunks(2) {
        let mut buf: Vec<Complex64> = match pair {
            [a, b] => a.iter().zip(b).map(|(&x, &y)| x + Complex64::new(-y.im, y.re)).collect(),
            [a] => a.clone(),
            _ => unreachable!(),
        };
        fft.inverse(&mut buf);
        out.push(buf.iter().map(|z| z.re * scale).collect());
        if pair.len() == 2 {
            out.push(buf.iter().map(|z| z.im * scale).collect());
        }
    }
    out
}

/// `Re sum_f p(f) exp(+i w_f . d)` for every tap offset `d` of a `k^3` kernel,
/// laid out `[dz][dy][dx]`.
pub fn offset_sums(p: &[Complex64], dims: Dims, k: usize) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let (ex, ey, ez) = (phase_table(nx, k), phase_table(ny, k), phase_table(nz, k));
    // s1[(fz, fy)][dx]
    let mut s1 = vec![ZERO; nz * ny * k];
    for row in 0..nz * ny {
        let line = &p[row * nx..(row + 1) * nx];
        let acc = &mut s1[row * k..(row + 1) * k];
        for (fx, &v) in line.iter().enumerate() {
            for (dx, a) in acc.iter_mut().enumerate() {
                *a += v * ex[fx * k + dx];
            }
        }
    }
    // s2[fz][dy][dx]
    let mut s2 = vec![ZERO; nz * k * k];
    for fz in 0..nz {
        for fy in 0..ny {
            let src = &s1[(fz * ny + fy) * k..(fz * ny + fy + 1) * k];
            for dy in 0..k {
                let w = ey[fy * k + dy];
                for dx in 0..k {
                    s2[(fz * k + dy) * k + dx] += src[dx] * w;
                }
            }
        }
    }
    let mut out = vec![0.0; k * k * k];
    for fz in 0..nz {
        for dz in 0..k {
            let w = ez[fz * k + dz];
            for t in 0..k * k {
                out[dz * k * k + t] += (s2[fz * k * k + t] * w).re;
            }
        }
    }
    out
}
