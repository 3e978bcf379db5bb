//! Keyed random streams and multinomial sampling.
//!
//! Every random draw in the crate comes from a ChaCha stream whose key is
//! derived from `(seed, purpose, key)` and whose stream number is the work
//! item index, so results do not depend on how work is scheduled.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

/// Separates the streams used by different procedures under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    SimulationReplicate = 1,
    CoverageDataset = 2,
    BootstrapReplicate = 3,
    CoverageBootstrap = 4,
}

pub fn stream_rng(seed: u64, purpose: Purpose, key: u64, index: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    bytes[16..24].copy_from_slice(&key.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finaliser, used to derive child seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `n` trials over the cells of `probs` (normalised by their sum) as a
/// chain of conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut cells = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass: f64 = probs.iter().sum();
    for (i, &q) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() {
            cells[i] = left;
            break;
        }
        let cond = if mass > 0.0 { (q / mass).clamp(0.0, 1.0) } else { 1.0 };
        let draw = if cond == 0.0 {
            0
        } else if cond == 1.0 {
            left
        } else {
            Binomial::new(left, cond).expect("probability in [0, 1]").sample(rng)
        };
        cells[i] = draw;
        left -= draw;
        mass -= q;
    }
    cells
}
