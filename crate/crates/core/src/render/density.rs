//! Laplace-CDF mapping from signed distance to volume density.

/// `σ(s) = Ψ_β(−s) / β`, with `Ψ_β` the CDF of a zero-mean Laplace distribution
/// of scale `β`. Equals `1/(2β)` on the surface, tends to 0 outside and `1/β`
/// deep inside.
pub fn sdf_to_density(s: f64, beta: f64) -> f64 {
    if s > 0.0 {
        (-s / beta).exp() / (2.0 * beta)
    } else {
        1.0 / beta - (s / beta).exp() / (2.0 * beta)
    }
}

/// `(dσ/ds, dσ/dβ)`.
pub fn density_gradients(s: f64, beta: f64) -> (f64, f64) {
    let b2 = beta * beta;
    if s > 0.0 {
        let sigma = (-s / beta).exp() / (2.0 * beta);
        (-sigma / beta, sigma * (s - beta) / b2)
    } else {
        let e = (s / beta).exp();
        (-e / (2.0 * b2), -1.0 / b2 + e * (s / beta + 1.0) / (2.0 * b2))
    }
}
