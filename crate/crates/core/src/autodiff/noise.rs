use crate::math;

/// `E[max(0, z + eta)]` for `eta ~ N(0, sigma_tilde^2)`:
/// `z Phi(z/s) + s phi(z/s)`.
///
/// Evaluated as `max(0, z)` plus [`relu_noise_excess`] so the strictly
/// positive excess survives far into either tail.
pub fn relu_noise_expectation(z: f64, sigma_tilde: f64) -> f64 {
    z.max(0.0) + relu_noise_excess(z, sigma_tilde)
}

/// Expected activation above the clean ReLU output, `E[relu(z + eta)] - relu(z)`.
///
/// Symmetric in `z`: `s (phi(t) - t Q(t))` with `t = |z| / s` and `Q` the
/// upper normal tail. Positive for every finite `z` until `phi` underflows.
pub fn relu_noise_excess(z: f64, sigma_tilde: f64) -> f64 {
    debug_assert!(sigma_tilde > 0.0);
    let t = math::abs(z) / sigma_tilde;
    if t <= 4.0 {
        let upper_tail = math::norm_cdf(-t);
        return sigma_tilde * (math::norm_pdf(t) - t * upper_tail);
    }
    // Tail: with the Mills ratio Q/phi = 1/(t + c), c = 1/(t + 2/(t + 3/...)),
    // phi - tQ = phi c / (t + c), free of cancellation.
    let mut c = 0.0;
    for k in (2..=60).rev() {
        c = k as f64 / (t + c);
    }
    c = 1.0 / (t + c);
    sigma_tilde * math::norm_pdf(t) * c / (t + c)
}

/// Variance of convolved i.i.d. noise at one output pixel: `sigma^2 ||K||_2^2`.
pub fn kernel_noise_variance(kernel: &[f64], sigma: f64) -> f64 {
    sigma * sigma * kernel.iter().map(|k| k * k).sum::<f64>()
}
