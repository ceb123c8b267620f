use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Per-sample head mask: each head is dropped independently with
/// probability `p_drop`; if every head drops, one chosen uniformly is
/// reinstated. Draws come from ChaCha8 stream `counter` under `seed`.
///
/// Surviving heads are averaged with weight `1 / survivors`.
pub fn headdrop_mask(num_heads: usize, p_drop: f64, seed: u64, counter: u64) -> Result<Vec<bool>> {
    if !(0.0..1.0).contains(&p_drop) {
        return Err(invalid(format!("drop probability {p_drop} outside [0, 1)")));
    }
    if num_heads == 0 {
        return Err(invalid("at least one head is required"));
    }
    if p_drop == 0.0 {
        return Ok(vec![true; num_heads]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(counter);
    let mut mask = independent_draws(&mut rng, num_heads, p_drop);
    if mask.iter().all(|keep| !keep) {
        mask[rng.random_range(0..num_heads)] = true;
    }
    Ok(mask)
}

fn independent_draws<R: Rng>(rng: &mut R, num_heads: usize, p_drop: f64) -> Vec<bool> {
    (0..num_heads).map(|_| rng.random::<f64>() >= p_drop).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_drop_keeps_all() {
        assert_eq!(headdrop_mask(4, 0.0, 1, 2).unwrap(), vec![true; 4]);
    }

    #[test]
    fn single_head_always_survives() {
        for c in 0..200 {
            assert_eq!(headdrop_mask(1, 0.9, 5, c).unwrap(), vec![true]);
        }
    }

    #[test]
    fn drop_rate_before_reinstatement() {
        let mut dropped = 0usize;
        let draws = 100_000;
        for c in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            rng.set_stream(c);
            dropped += independent_draws(&mut rng, 4, 0.5).iter().filter(|k| !**k).count();
        }
        let rate = dropped as f64 / (4 * draws) as f64;
        assert!((rate - 0.5).abs() <= 0.01, "rate {rate}");
    }

    #[test]
    fn invalid_probability() {
        assert!(headdrop_mask(2, 1.0, 0, 0).is_err());
        assert!(headdrop_mask(2, -0.1, 0, 0).is_err());
    }
}
