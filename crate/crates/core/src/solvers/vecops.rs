//! Dense real vector helpers.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `a + s b`.
pub fn add_scaled(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `|a - b| / |b|`, with an exact-zero guard when `b = 0`.
pub fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let d = dist(a, b);
    let n = norm(b);
    if d == 0.0 {
        0.0
    } else if n == 0.0 {
        f64::INFINITY
    } else {
        d / n
    }
}
