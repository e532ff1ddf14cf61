//! Small dense-vector helpers shared by the quantizer and the feature model.

/// Smoothing constant added under every square root so distances and norms
/// stay differentiable at coincident points.
pub const DIST_EPS: f64 = 1e-12;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Smoothed Euclidean distance `sqrt(sum((a-b)^2) + DIST_EPS)`.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    (squared_distance(a, b) + DIST_EPS).sqrt()
}

/// Smoothed Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    let ssq: f64 = v.iter().map(|x| x * x).sum();
    (ssq + DIST_EPS).sqrt()
}

/// Direction of `v` under the smoothed norm.
pub fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `acc += scale * v`
pub fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

/// Gradient of `distance(a, b)` with respect to `a`, i.e. `(a - b) / d`.
/// The gradient with respect to `b` is its negation.
pub fn distance_grad(a: &[f64], b: &[f64], d: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (x - y) / d).collect()
}
