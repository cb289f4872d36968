mod common;

use common::{lp_emd, random_int_image};
use emdsparse::emd::{emd_equal_mass, emd_norm};
use emdsparse::haar::haar_transform;
use emdsparse::pyramid::pyramid_transform;
use emdsparse::{Grid, GridImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn signed_emd_matches_transport_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for delta in [2, 4] {
        let grid = Grid::new(delta).unwrap();
        for _ in 0..25 {
            let w = random_int_image(grid, &mut rng, -3, 3);
            let (a, b) = (emd_norm(&w), lp_emd(&w));
            assert!((a - b).abs() <= 1e-6 * b.max(1.0), "{a} vs {b} on {:?}", w.values());
        }
    }
}

#[test]
fn balanced_emd_matches_transport_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = Grid::new(8).unwrap();
    for _ in 0..10 {
        let x = random_int_image(grid, &mut rng, 0, 2);
        let y = random_int_image(grid, &mut rng, 1, 3);
        let y = y.scaled(x.mass() / y.mass());
        let sol = emd_equal_mass(&x, &y).unwrap();
        let lp = lp_emd(&(&x - &y));
        assert!((sol.cost - lp).abs() <= 1e-6 * lp.max(1.0));
        assert!((sol.plan.cost() - sol.cost).abs() <= 1e-6 * lp.max(1.0), "{} {} {} {}", sol.plan.cost(), sol.cost, lp, sol.plan.unmatched_mass());
        let close = |a: &GridImage, b: &GridImage| a.values().iter().zip(b.values()).all(|(p, q)| (p - q).abs() < 1e-9);
        assert!(close(&sol.plan.source_marginal(), &x));
        assert!(close(&sol.plan.sink_marginal(), &y));
    }
}

#[test]
fn haar_embedding_expands_signed_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = Grid::new(4).unwrap();
    for _ in 0..50 {
        let w = random_int_image(grid, &mut rng, -4, 4);
        let wx: f64 = haar_transform(&w).values().iter().map(|v| v.abs()).sum();
        assert!(lp_emd(&w) <= wx + 1e-9);
    }
}

#[test]
fn pyramid_expansion_fails_for_a_lone_unit_mass() {
    let grid = Grid::new(8).unwrap();
    let e = GridImage::point(grid, 3, 5);
    let pe: f64 = pyramid_transform(&e).values().iter().map(|v| v.abs()).sum();
    assert_eq!(pe, 15.0);
    assert_eq!(emd_norm(&e), 16.0);
    assert_eq!(lp_emd(&e), 16.0);
}

fn signed_image(delta: usize) -> impl Strategy<Value = GridImage> {
    proptest::collection::vec(-5i32..=5, delta * delta)
        .prop_map(move |v| GridImage::from_values(delta, v.into_iter().map(f64::from).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn emd_is_a_norm(a in signed_image(4), b in signed_image(4), c in 0.0f64..4.0) {
        let (na, nb) = (emd_norm(&a), emd_norm(&b));
        prop_assert!((emd_norm(&a.scaled(-1.0)) - na).abs() <= 1e-9 * na.max(1.0));
        prop_assert!((emd_norm(&a.scaled(c)) - c * na).abs() <= 1e-9 * na.max(1.0));
        prop_assert!(emd_norm(&(&a + &b)) <= na + nb + 1e-9);
        prop_assert!(na >= 0.0);
    }

    #[test]
    fn emd_is_at_most_the_l1_mass_times_the_penalty(a in signed_image(8)) {
        prop_assert!(emd_norm(&a) <= 16.0 * a.l1_norm() + 1e-9);
    }
}
