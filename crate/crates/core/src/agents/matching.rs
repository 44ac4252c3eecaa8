use rayon::prelude::*;

use super::DescriptorSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub current: usize,
    pub target: usize,
    pub distance: u32,
}

/// Two-nearest-neighbour matching with a ratio test. A match survives when
/// `best < ratio * second`; with fewer than two targets nothing survives.
///
/// Ties for the nearest neighbour resolve to the lowest target index.
pub fn knn_ratio_match(current: &DescriptorSet, target: &DescriptorSet, ratio: f64) -> Vec<Match> {
    if target.len() < 2 || current.is_empty() {
        return Vec::new();
    }
    assert_eq!(current.bits(), target.bits(), "descriptor lengths differ");
    (0..current.len())
        .into_par_iter()
        .filter_map(|i| {
            let (best, second) = two_nearest(current.get(i), target);
            ((best.0 as f64) < ratio * second as f64).then_some(Match {
                current: i,
                target: best.1,
                distance: best.0,
            })
        })
        .collect()
}

#[inline(always)]
fn keep_two(best: &mut (u32, usize), second: &mut u32, d: u32, j: usize) {
    if d < best.0 {
        *second = best.0;
        *best = (d, j);
    } else if d < *second {
        *second = d;
    }
}

/// Fixed word count, so the distance loop unrolls without bounds checks.
#[inline(always)]
fn two_nearest_fixed<const N: usize>(q: &[u64], target: &DescriptorSet) -> ((u32, usize), u32) {
    let q: [u64; N] = q.try_into().expect("descriptor length checked by caller");
    let (mut best, mut second) = ((u32::MAX, usize::MAX), u32::MAX);
    for (j, t) in target.data.chunks_exact(N).enumerate() {
        let d = (0..N).map(|k| (q[k] ^ t[k]).count_ones()).sum();
        keep_two(&mut best, &mut second, d, j);
    }
    (best, second)
}

#[inline(always)]
fn two_nearest_generic(q: &[u64], target: &DescriptorSet) -> ((u32, usize), u32) {
    if target.words == 4 {
        return two_nearest_fixed::<4>(q, target);
    }
    let (mut best, mut second) = ((u32::MAX, usize::MAX), u32::MAX);
    for j in 0..target.len() {
        keep_two(&mut best, &mut second, DescriptorSet::hamming(q, target.get(j)), j);
    }
    (best, second)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn two_nearest_popcnt(q: &[u64], target: &DescriptorSet) -> ((u32, usize), u32) {
    two_nearest_generic(q, target)
}

/// Nearest `(distance, index)` and second-nearest distance.
fn two_nearest(q: &[u64], target: &DescriptorSet) -> ((u32, usize), u32) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("popcnt") {
        // SAFETY: the CPU supports popcnt, checked just above.
        return unsafe { two_nearest_popcnt(q, target) };
    }
    two_nearest_generic(q, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, rng: &mut ChaCha8Rng) -> DescriptorSet {
        let mut s = DescriptorSet::new(256);
        for _ in 0..n {
            let d: [u64; 4] = rng.random();
            s.push(&d);
        }
        s
    }

    #[test]
    fn identical_sets_self_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_set(50, &mut rng);
        let m = knn_ratio_match(&s, &s, 0.7);
        assert_eq!(m.len(), 50);
        assert!(m.iter().all(|m| m.current == m.target && m.distance == 0));
    }

    #[test]
    fn single_target_never_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_set(1, &mut rng);
        assert!(knn_ratio_match(&s, &s, 0.7).is_empty());
    }

    #[test]
    fn random_descriptors_rarely_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_set(100, &mut rng);
        let b = random_set(100, &mut rng);
        let m = knn_ratio_match(&a, &b, 0.7);
        assert!(m.len() < 20, "{} of 100 passed", m.len());
    }

    #[test]
    fn equal_distances_fail_the_strict_test() {
        let mut s = DescriptorSet::new(256);
        s.push(&[0b11, 0, 0, 0]);
        s.push(&[0b1100, 0, 0, 0]);
        let mut q = DescriptorSet::new(256);
        q.push(&[0, 0, 0, 0]);
        assert!(knn_ratio_match(&q, &s, 0.99).is_empty());
    }
}
