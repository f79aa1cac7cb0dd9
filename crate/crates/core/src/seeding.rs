//! Stable per-realization seeds.

/// FNV-1a over `bytes`, continuing from `state`.
fn fnv1a(mut state: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        state ^= u64::from(*b);
        state = state.wrapping_mul(0x0000_0100_0000_01b3);
    }
    state
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for realization `r` of experiment `id` under `master`. Independent of
/// platform and of the order realizations are run in.
pub fn realization_seed(master: u64, id: &str, r: u64) -> u64 {
    let mut h = fnv1a(0xcbf2_9ce4_8422_2325, &master.to_le_bytes());
    h = fnv1a(h, id.as_bytes());
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, &r.to_le_bytes());
    splitmix64(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference generator seeded with 0
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(splitmix64(0x9e37_79b9_7f4a_7c15), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn seeds_are_distinct_across_ids_and_realizations() {
        let mut seen = HashSet::new();
        for id in ["success-rate", "coherence-vs-sparsity", "model-1"] {
            for r in 0..500 {
                assert!(seen.insert(realization_seed(7, id, r)));
            }
        }
        assert_eq!(realization_seed(7, "a", 3), realization_seed(7, "a", 3));
        assert_ne!(realization_seed(7, "a", 3), realization_seed(8, "a", 3));
    }
}
