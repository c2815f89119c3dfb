use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wcrr_core::wcrr::{kernel_offsets, FilterBank};
use wcrr_core::{ComplexVolume, Dims};

pub fn random_volume(dims: Dims, seed: u64, scale: f64) -> ComplexVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexVolume::from_fn(dims, |_, _, _| {
        Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
    })
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Periodic multichannel cross-correlation by explicit loops.
pub fn naive_layer(input: &[Vec<f64>], dims: Dims, weights: &[f64], outputs: usize, k: usize) -> Vec<Vec<f64>> {
    let [nx, ny, nz] = dims;
    let offs = kernel_offsets(k);
    let taps = k * k * k;
    let mut out = vec![vec![0.0; nx * ny * nz]; outputs];
    for (o, ch) in out.iter_mut().enumerate() {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let mut acc = 0.0;
                    for (i, inp) in input.iter().enumerate() {
                        let kernel = &weights[(o * input.len() + i) * taps..(o * input.len() + i + 1) * taps];
                        for (a, &dz) in offs.iter().enumerate() {
                            for (b, &dy) in offs.iter().enumerate() {
                                for (c, &dx) in offs.iter().enumerate() {
                                    let sx = (x as isize + dx).rem_euclid(nx as isize) as usize;
                                    let sy = (y as isize + dy).rem_euclid(ny as isize) as usize;
                                    let sz = (z as isize + dz).rem_euclid(nz as isize) as usize;
                                    acc += kernel[(a * k + b) * k + c] * inp[sx + nx * (sy + ny * sz)];
                                }
                            }
                        }
                    }
                    ch[x + nx * (y + ny * z)] = acc;
                }
            }
        }
    }
    out
}

/// `W x` by explicit loops (first-layer mean removal and `1/|U|` included).
pub fn naive_features(bank: &FilterBank, x: &ComplexVolume) -> Vec<Vec<f64>> {
    let mut chans = vec![
        x.data().iter().map(|z| z.re).collect::<Vec<_>>(),
        x.data().iter().map(|z| z.im).collect::<Vec<_>>(),
    ];
    for (l, layer) in bank.layers().iter().enumerate() {
        let mut w = layer.weights.clone();
        if l == 0 && bank.zero_mean() {
            for kernel in w.chunks_mut(layer.taps()) {
                let mean: f64 = kernel.iter().sum::<f64>() / kernel.len() as f64;
                kernel.iter_mut().for_each(|v| *v -= mean);
            }
        }
        chans = naive_layer(&chans, x.dims(), &w, layer.outputs, layer.ksize);
    }
    let s = 1.0 / bank.norm();
    chans.iter().map(|c| c.iter().map(|v| v * s).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cyclic Jacobi eigenvalues of a dense symmetric matrix (row-major).
pub fn symmetric_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    x
}

/// Conjugate gradients on a symmetric positive semidefinite operator.
pub fn conjugate_gradient(apply: impl Fn(&[f64]) -> Vec<f64>, b: &[f64], iters: usize, tol: f64) -> Vec<f64> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = tol * tol * rr;
    for _ in 0..iters {
        if rr <= stop {
            break;
        }
        let ap = apply(&p);
        let alpha = rr / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let next = dot(&r, &r);
        let beta = next / rr;
        rr = next;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    x
}

/// Exact 1D TV denoising `argmin 1/2 |x - y|^2 + lambda sum |x[i+1] - x[i]|`
/// (open boundary) by the taut-string construction on cumulative sums.
pub fn taut_string(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let mut r = vec![0.0; n + 1];
    for i in 0..n {
        r[i + 1] = r[i] + y[i];
    }
    let lo = |k: usize| if k == 0 || k == n { r[k] } else { r[k] - lambda };
    let hi = |k: usize| if k == 0 || k == n { r[k] } else { r[k] + lambda };
    let mut s = vec![0.0; n + 1];
    let (mut k0, mut s0) = (0usize, 0.0f64);
    while k0 < n {
        let (mut smin, mut smax) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut imin, mut imax) = (k0, k0);
        let mut next = None;
        for j in k0 + 1..=n {
            let d = (j - k0) as f64;
            let (l, h) = ((lo(j) - s0) / d, (hi(j) - s0) / d);
            if l > smax {
                next = Some((imax, hi(imax), smax));
                break;
            }
            if h < smin {
                next = Some((imin, lo(imin), smin));
                break;
            }
            if l > smin {
                smin = l;
                imin = j;
            }
            if h < smax {
                smax = h;
                imax = j;
            }
        }
        let (k1, s1, slope) = next.unwrap_or((n, r[n], (r[n] - s0) / (n - k0) as f64));
        for k in k0 + 1..=k1 {
            s[k] = s0 + slope * (k - k0) as f64;
        }
        s[k1] = s1;
        k0 = k1;
        s0 = s1;
    }
    (0..n).map(|i| s[i + 1] - s[i]).collect()
}

/// Periodic 1D TV denoising: the wrap-around difference is handled by its
/// dual variable `c`, found by bisection on `x[0] - x[n-1] = 0`.
pub fn taut_string_periodic(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let solve = |c: f64| {
        let mut z = y.to_vec();
        z[0] -= c;
        z[n - 1] += c;
        taut_string(&z, lambda)
    };
    let gap = |x: &[f64]| x[0] - x[n - 1];
    let hi = solve(lambda);
    if gap(&hi) >= 0.0 {
        return hi;
    }
    let lo = solve(-lambda);
    if gap(&lo) <= 0.0 {
        return lo;
    }
    let (mut a, mut b) = (-lambda, lambda);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if gap(&solve(m)) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    solve(0.5 * (a + b))
}

/// Materializes a linear operator on `R^n` column by column.
pub fn materialize(apply: impl Fn(&[f64]) -> Vec<f64>, n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        let col = apply(&e);
        for r in 0..n {
            m[r * n + c] = col[r];
        }
    }
    m
}
