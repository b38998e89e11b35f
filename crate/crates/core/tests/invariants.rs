use proptest::prelude::*;
use pslab::cartan::{self, CartanVector, Functional, RootSubset};
use pslab::convexity;
use pslab::flags::{self, PartialFlag, TransversePair};
use pslab::hilbert::{self, ConvexDomain};
use pslab::linalg;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kappa_of_inverse_is_opposition(seed: u64, d in 2usize..6) {
        let g = linalg::random_sl(&mut rng(seed), d);
        let k = cartan::cartan_projection(&g).unwrap();
        let ki = cartan::cartan_projection(&linalg::inverse(&g).unwrap()).unwrap();
        prop_assert!(ki.dist_sup(&cartan::opposition(&k)) < 1e-8);
        prop_assert!(k.0.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(k.0.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn iwasawa_cocycle_is_additive(seed: u64, d in 2usize..6) {
        let mut r = rng(seed);
        let g = linalg::random_sl(&mut r, d);
        let h = linalg::random_sl(&mut r, d);
        let x = PartialFlag::standard(RootSubset::full(d)).act(&linalg::random_sl(&mut r, d));
        let lhs = flags::iwasawa_cocycle(&(&g * &h), &x).unwrap();
        let rhs = &flags::iwasawa_cocycle(&g, &x.act(&h)).unwrap() + &flags::iwasawa_cocycle(&h, &x).unwrap();
        prop_assert!(lhs.dist_sup(&rhs) < 1e-9);
        let dual = flags::iwasawa_cocycle_dual(&g, &linalg::inverse(&g).unwrap(), &x).unwrap();
        prop_assert!(dual.dist_sup(&flags::iwasawa_cocycle(&g, &x).unwrap()) < 1e-9);
    }

    #[test]
    fn gromov_product_swaps_with_opposition(seed: u64, d in 2usize..6) {
        let g = linalg::random_sl(&mut rng(seed), d);
        let pair = TransversePair::from_witness(&g, &RootSubset::full(d)).unwrap();
        let a = flags::gromov_product(&pair).unwrap();
        let b = flags::gromov_product(&pair.swap().unwrap()).unwrap();
        prop_assert!(b.dist_sup(&cartan::opposition(&a)) < 1e-7);
    }

    #[test]
    fn istar_is_an_involution(coeffs in prop::collection::vec(-3.0f64..3.0, 1..6)) {
        let phi = Functional::new(coeffs);
        prop_assert_eq!(cartan::istar(&cartan::istar(&phi)), phi);
    }

    #[test]
    fn comparison_slack_is_nonnegative(t in prop::collection::vec(-10.0f64..10.0, 3..9), p_raw: usize) {
        let d = t.len();
        let p = 1 + p_raw % (d - 2);
        let mean = t.iter().sum::<f64>() / d as f64;
        let x = CartanVector(t.iter().map(|v| v - mean).collect()).into_chamber();
        let c = convexity::functional_comparison(&x, d, p).unwrap();
        prop_assert!(c.slack >= -1e-12);
        prop_assert!((c.lhs - c.rhs - c.slack).abs() < 1e-12);
    }

    #[test]
    fn hilbert_distance_is_a_metric(
        p in prop::array::uniform2(-0.6f64..0.6),
        q in prop::array::uniform2(-0.6f64..0.6),
        r in prop::array::uniform2(-0.6f64..0.6),
    ) {
        for dom in [ConvexDomain::klein(2), ConvexDomain::cube(2)] {
            let pq = dom.distance(&p, &q).unwrap();
            prop_assert!((pq - dom.distance(&q, &p).unwrap()).abs() < 1e-10);
            prop_assert!(pq >= 0.0);
            let pr = dom.distance(&p, &r).unwrap();
            let qr = dom.distance(&q, &r).unwrap();
            prop_assert!(pr <= pq + qr + 1e-8);
        }
    }

    #[test]
    fn klein_radial_distance(x in prop::array::uniform2(-0.7f64..0.7)) {
        let n = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let d = ConvexDomain::klein(2).distance(&[0.0, 0.0], &x).unwrap();
        prop_assert!((d - n.atanh()).abs() < 1e-10);
    }

    #[test]
    fn homogeneous_chart_round_trip(x in prop::collection::vec(-5.0f64..5.0, 1..5)) {
        let back = hilbert::chart(&hilbert::homogeneous(&x));
        prop_assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
