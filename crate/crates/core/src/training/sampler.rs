use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One epoch's batches of sample positions. Positions are grouped by
/// length so batches need no padding; each group is shuffled, cut into
/// batches of at most `batch_size`, and the batch order shuffled again.
pub fn length_bucketed_batches(lengths: &[usize], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in lengths.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut batches = Vec::new();
    for mut g in groups.into_values() {
        g.shuffle(&mut rng);
        batches.extend(g.chunks(batch_size.max(1)).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_position_once_and_uniform_lengths() {
        let lengths: Vec<usize> = (0..103).map(|i| 3 + i % 5).collect();
        let batches = length_bucketed_batches(&lengths, 8, 9);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.len() <= 8 && !b.is_empty());
            assert!(b.iter().all(|&i| lengths[i] == lengths[b[0]]));
        }
    }

    #[test]
    fn seeded() {
        let lengths = vec![3; 50];
        assert_eq!(length_bucketed_batches(&lengths, 4, 1), length_bucketed_batches(&lengths, 4, 1));
        assert_ne!(length_bucketed_batches(&lengths, 4, 1), length_bucketed_batches(&lengths, 4, 2));
    }
}
