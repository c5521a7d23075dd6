//! Central finite differences, the oracle for every analytic gradient.

/// Central-difference gradient of `loss` with respect to the `len` scalars
/// reachable through `access`.
pub fn central_difference<S>(
    state: &mut S,
    len: usize,
    h: f64,
    mut access: impl FnMut(&mut S, usize) -> &mut f64,
    mut loss: impl FnMut(&mut S) -> f64,
) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let orig = *access(state, i);
            *access(state, i) = orig + h;
            let up = loss(state);
            *access(state, i) = orig - h;
            let down = loss(state);
            *access(state, i) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
