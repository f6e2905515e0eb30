//! The tiled renderer against a per-pixel brute-force compositor that
//! shares none of its projection or binning code.

mod common;

use proptest::prelude::*;

use fogsplat_core::fog::FogParams;

#[test]
fn matches_on_fixed_scenes() {
    for seed in 0..8 {
        assert!(common::oracle_error(seed, 50, 16, None) < 1e-6);
        let fog = FogParams::with_light(0.9, [0.7, 0.8, 0.6], seed % 2 == 0);
        assert!(common::oracle_error(seed, 50, 16, Some(fog)) < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_on_random_scenes(
        seed in any::<u64>(),
        n in 1usize..=50,
        tile_size in prop::sample::select(vec![16usize, 7, 32]),
        beta in 0.0f64..2.0,
        sigmoid in any::<bool>(),
    ) {
        let fog = FogParams::with_light(beta, [0.8, 0.75, 0.7], sigmoid);
        prop_assert!(common::oracle_error(seed, n, tile_size, None) < 1e-6);
        prop_assert!(common::oracle_error(seed, n, tile_size, Some(fog)) < 1e-6);
    }
}
