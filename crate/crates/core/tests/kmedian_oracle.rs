mod common;

use common::{brute_kmedian, random_int_image};
use emdsparse::emd::emd_norm;
use emdsparse::kmedian::{kmedian, KMedianMethod, KMedianOptions};
use emdsparse::pipeline::strict_sparsify;
use emdsparse::{Grid, GridImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sparse_image(grid: Grid, rng: &mut ChaCha8Rng, points: usize) -> GridImage {
    let mut x = GridImage::zeros(grid);
    for _ in 0..points {
        let p = rng.random_range(0..grid.n());
        let (r, c) = grid.pixel_coords(p);
        x.add_at(r, c, rng.random_range(1..5) as f64);
    }
    x
}

#[test]
fn exact_kmedian_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (delta, k) in [(4, 1), (4, 2), (4, 3), (8, 1), (8, 2)] {
        let grid = Grid::new(delta).unwrap();
        for _ in 0..6 {
            let x = sparse_image(grid, &mut rng, 7);
            let sol = kmedian(&x, k, &KMedianOptions::default()).unwrap();
            let brute = brute_kmedian(&x, k);
            assert!((sol.cost - brute).abs() < 1e-9, "delta={delta} k={k}: {} vs {brute}", sol.cost);
            assert!((emd_norm(&(&x - &sol.sparse_image(&x))) - sol.cost).abs() < 1e-9);
        }
    }
}

#[test]
fn local_search_is_close_to_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = Grid::new(8).unwrap();
    let opts = KMedianOptions { exact_limit: 0, ..Default::default() };
    let (mut hits, trials) = (0, 20);
    for _ in 0..trials {
        let x = random_int_image(grid, &mut rng, 0, 2);
        let sol = kmedian(&x, 2, &opts).unwrap();
        assert_eq!(sol.method, KMedianMethod::LocalSearch);
        let brute = brute_kmedian(&x, 2);
        assert!(sol.cost >= brute - 1e-9);
        if sol.cost <= brute + 1e-9 {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/{trials}");
}

#[test]
fn strict_sparsify_with_one_center_is_the_one_median() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let grid = Grid::new(8).unwrap();
    for _ in 0..10 {
        let x = sparse_image(grid, &mut rng, 6);
        let out = strict_sparsify(&x, 1, &KMedianOptions::default()).unwrap();
        assert_eq!(out.image.nnz(), 1);
        assert!((out.cost - brute_kmedian(&x, 1)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn strict_output_is_k_sparse_and_mass_preserving(
        vals in proptest::collection::vec(prop_oneof![4 => Just(0.0f64), 1 => 0.1f64..5.0], 64),
        k in 1usize..5,
    ) {
        let x = GridImage::from_values(8, vals).unwrap();
        let out = strict_sparsify(&x, k, &KMedianOptions::default()).unwrap();
        prop_assert!(out.image.nnz() <= k);
        prop_assert!((out.image.mass() - x.mass()).abs() <= 1e-9 * x.mass().max(1.0));
        if x.nnz() <= k {
            prop_assert_eq!(&out.image, &x);
        }
    }
}
