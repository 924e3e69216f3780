//! Seeded synthetic noise with exactly calibrated relative level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::space::DataBlock;

/// Perturbed data together with the measured per-block noise levels
/// `delta_i = ||y_i_noisy - y_i||`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyData {
    pub data: Vec<DataBlock>,
    pub noise_levels: Vec<f64>,
}

/// Adds Gaussian noise to every block, scaled so that the relative data
/// perturbation `||y_noisy - y|| / ||y||` equals `rel_level` exactly in the
/// block's own norm. Blocks with zero exact data fall back to absolute
/// noise of magnitude `rel_level`. Each block draws from its own stream of
/// the seeded generator, so results do not depend on block order.
pub fn add_noise(exact: &[DataBlock], rel_level: f64, seed: u64) -> NoisyData {
    assert!(
        rel_level.is_finite() && rel_level >= 0.0,
        "noise level must be finite and non-negative"
    );
    let mut data = Vec::with_capacity(exact.len());
    let mut noise_levels = Vec::with_capacity(exact.len());
    for (i, y) in exact.iter().enumerate() {
        if rel_level == 0.0 {
            data.push(y.clone());
            noise_levels.push(0.0);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let draw: Vec<f64> = (0..y.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let noise = DataBlock::new_unchecked(draw, y.weights().to_vec());
        let noise_norm = noise.norm();
        if noise_norm == 0.0 {
            log::warn!("block {i}: noise draw has zero norm under the quadrature weights; data left unperturbed");
            data.push(y.clone());
            noise_levels.push(0.0);
            continue;
        }
        let y_norm = y.norm();
        let scale = if y_norm == 0.0 {
            log::warn!("block {i}: exact data is zero, falling back to absolute noise of magnitude {rel_level}");
            rel_level / noise_norm
        } else {
            rel_level * y_norm / noise_norm
        };
        let mut noisy = y.clone();
        noisy
            .axpy(scale, &noise)
            .expect("noise draw shares the block's space");
        noise_levels.push(noisy.diff_norm(y).expect("same space"));
        data.push(noisy);
    }
    NoisyData { data, noise_levels }
}
