use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{NumError, Tape, Var};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `mean + exp(clamp(log_std)) * eps` with `eps ~ N(0, 1)` drawn from `rng`.
///
/// Gradients reach `mean` and `log_std`; the noise is a constant leaf.
pub fn gaussian_rsample<R: Rng + ?Sized>(
    tape: &mut Tape,
    mean: Var,
    log_std: Var,
    rng: &mut R,
) -> Result<(Var, Vec<f64>), NumError> {
    let (r, c) = tape.shape(mean);
    let eps = standard_normal(rng, r * c);
    let sample = gaussian_rsample_with(tape, mean, log_std, eps.clone())?;
    Ok((sample, eps))
}

/// Same as [`gaussian_rsample`] with caller-supplied noise.
pub fn gaussian_rsample_with(
    tape: &mut Tape,
    mean: Var,
    log_std: Var,
    eps: Vec<f64>,
) -> Result<Var, NumError> {
    let (r, c) = tape.shape(mean);
    let clamped = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let std = tape.exp(clamped);
    let noise = tape.constant(r, c, eps)?;
    let scaled = tape.mul(std, noise)?;
    tape.add(mean, scaled)
}
