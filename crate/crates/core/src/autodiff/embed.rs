use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{AutodiffError, Tape, Tensor, Var};

/// Bounds applied to every log-σ head.
pub const LOG_SIGMA_MIN: f64 = -8.0;
pub const LOG_SIGMA_MAX: f64 = 4.0;

/// `[x | sin(2^0 π x) | cos(2^0 π x) | … | sin(2^{K-1} π x) | cos(2^{K-1} π x)]`
/// for each row, so `d` inputs become `d (2K + 1)` outputs.
pub fn fourier_embed(tape: &mut Tape, x: Var, num_freqs: usize) -> Result<Var, AutodiffError> {
    let mut parts = Vec::with_capacity(2 * num_freqs + 1);
    parts.push(x);
    for k in 0..num_freqs {
        let s = tape.scale(x, (1u64 << k) as f64 * PI);
        parts.push(tape.sin(s));
        parts.push(tape.cos(s));
    }
    tape.concat_cols(&parts)
}

/// Plain-value version of [`fourier_embed`] for a single row.
pub fn fourier_features(x: &[f64], num_freqs: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for k in 0..num_freqs {
        let f = (1u64 << k) as f64 * PI;
        out.extend(x.iter().map(|v| (f * v).sin()));
        out.extend(x.iter().map(|v| (f * v).cos()));
    }
    out
}

/// Fixed sinusoidal table of shape `[frames, dim]`: column `2i` holds
/// `sin(t / 10000^{2i/dim})` and column `2i + 1` the matching cosine.
pub fn time_embeddings(frames: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        for j in 0..dim {
            let i = (j / 2) as f64;
            let arg = t as f64 / 10000f64.powf(2.0 * i / dim as f64);
            data.push(if j % 2 == 0 { arg.sin() } else { arg.cos() });
        }
    }
    Tensor::new(vec![frames, dim], data).expect("sized by construction")
}

/// Standard-normal noise of the given shape.
pub fn standard_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("sized by construction")
}

/// `z = μ + exp(log σ) ⊙ ε`; `ε` is a constant so only `μ` and `log σ`
/// receive gradients.
pub fn reparameterize_with(tape: &mut Tape, mu: Var, log_sigma: Var, eps: Tensor) -> Result<Var, AutodiffError> {
    let e = tape.constant(eps)?;
    let sigma = tape.exp(log_sigma);
    let noise = tape.mul(sigma, e)?;
    tape.add(mu, noise)
}

/// [`reparameterize_with`] drawing `ε` from `rng`.
pub fn reparameterize(tape: &mut Tape, mu: Var, log_sigma: Var, rng: &mut impl Rng) -> Result<Var, AutodiffError> {
    let (r, c) = (tape.value(mu).rows(), tape.value(mu).cols());
    reparameterize_with(tape, mu, log_sigma, standard_normal(rng, r, c))
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − 2 log σ)`.
pub fn kl_diag_gaussian(tape: &mut Tape, mu: Var, log_sigma: Var) -> Result<Var, AutodiffError> {
    let mu2 = tape.square(mu);
    let two_ls = tape.scale(log_sigma, 2.0);
    let var = tape.exp(two_ls);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, two_ls)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum(c);
    Ok(tape.scale(s, 0.5))
}

/// Clamps a log-σ head into its allowed range.
pub fn clamp_log_sigma(tape: &mut Tape, v: Var) -> Var {
    tape.clamp(v, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
}
