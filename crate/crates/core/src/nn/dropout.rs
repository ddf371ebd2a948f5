use crate::rng;

/// Zeroes each entry with probability `p`, rounded to a multiple of 2^-16.
/// The mask is a SplitMix64 sequence from `seed`; each 64-bit output yields
/// four 16-bit draws.
pub(crate) fn apply_dropout_mask(values: &mut [f64], seed: u64, p: f64) {
    let threshold = (p * 65_536.0).round() as u64;
    let keep = |bits: u64| ((bits & 0xffff >= threshold) as u8) as f64;
    let word = |i: usize| rng::mix(seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    let mut quads = values.chunks_exact_mut(4);
    let mut i = 0;
    for quad in &mut quads {
        let w = word(i);
        quad[0] *= keep(w);
        quad[1] *= keep(w >> 16);
        quad[2] *= keep(w >> 32);
        quad[3] *= keep(w >> 48);
        i += 1;
    }
    let w = word(i);
    for (k, v) in quads.into_remainder().iter_mut().enumerate() {
        *v *= keep(w >> (16 * k));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_rate_and_replay() {
        let mut a = vec![1.0; 100_003];
        apply_dropout_mask(&mut a, 42, 0.1);
        let dropped = a.iter().filter(|&&v| v == 0.0).count() as f64 / a.len() as f64;
        assert!((dropped - 0.1).abs() < 0.005, "{dropped}");
        let mut b = vec![1.0; 100_003];
        apply_dropout_mask(&mut b, 42, 0.1);
        assert_eq!(a, b);
        let mut c = vec![2.0; 10];
        apply_dropout_mask(&mut c, 1, 0.0);
        assert!(c.iter().all(|&v| v == 2.0));
    }
}
