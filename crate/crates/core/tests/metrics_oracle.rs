//! Dice, HD95 and containment against brute-force oracles.

mod common;

use common::{oracle_dice, oracle_hausdorff, oracle_hd95, random_mask, EXT};
use mmtsn::metrics::{containment_violation, dice_score, evaluate_volume, hd95};
use mmtsn::phantom::LabelVolume;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_hundred_random_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut undefined = 0;
    for pair in 0..200 {
        let (a, b) = (random_mask(&mut rng), random_mask(&mut rng));
        assert_eq!(dice_score(&a, &b).unwrap(), oracle_dice(&a, &b), "pair {pair}");
        let got = hd95(&a, &b, EXT).unwrap();
        match (got, oracle_hd95(&a, &b)) {
            (None, None) => undefined += 1,
            (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-9, "pair {pair}: {x} vs {y}"),
            other => panic!("pair {pair}: {other:?}"),
        }
    }
    assert!(undefined > 0, "sentinel cases were exercised");
}

#[test]
fn cubes_offset_by_three() {
    let ext = [16, 16, 16];
    let cube = |x0: usize| -> Vec<bool> {
        (0..4096)
            .map(|i| {
                let (z, y, x) = (i / 256, (i / 16) % 16, i % 16);
                (4..8).contains(&z) && (4..8).contains(&y) && (x0..x0 + 4).contains(&x)
            })
            .collect()
    };
    let (a, b) = (cube(2), cube(5));
    assert_eq!(hd95(&a, &b, ext).unwrap(), Some(3.0));
    assert_eq!(hd95(&a, &a, ext).unwrap(), Some(0.0));
}

#[test]
fn dice_examples() {
    let mut a = vec![false; 16];
    let mut b = vec![false; 16];
    a[..8].iter_mut().for_each(|v| *v = true);
    b[4..12].iter_mut().for_each(|v| *v = true);
    assert_eq!(dice_score(&a, &b).unwrap(), 0.5);
    assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
    assert_eq!(dice_score(&vec![false; 16], &vec![false; 16]).unwrap(), 1.0);
    assert!(dice_score(&a, &b[..8]).is_err());
}

#[test]
fn containment_examples() {
    let outer = [true, true, false, false];
    assert_eq!(containment_violation(&outer, &[true, false, false, false]).unwrap(), 0.0);
    assert_eq!(containment_violation(&outer, &[false, true, true, false]).unwrap(), 0.5);
    assert_eq!(containment_violation(&outer, &[false; 4]).unwrap(), 0.0);
}

#[test]
fn random_label_pair_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..5 {
        let pred = LabelVolume::new(EXT, (0..512).map(|_| rng.gen_range(0..4)).collect()).unwrap();
        let gt = LabelVolume::new(EXT, (0..512).map(|_| rng.gen_range(0..4)).collect()).unwrap();
        let r = evaluate_volume(&pred, &gt).unwrap();
        let region = |l: &LabelVolume, classes: &[u8]| l.data().iter().map(|c| classes.contains(c)).collect::<Vec<_>>();
        for (metrics, classes) in [(r.wt, &[1u8, 2, 3][..]), (r.tc, &[1, 3]), (r.et, &[3])] {
            let (p, g) = (region(&pred, classes), region(&gt, classes));
            assert_eq!(metrics.dice, oracle_dice(&p, &g));
            assert!((metrics.hd95.unwrap() - oracle_hd95(&p, &g).unwrap()).abs() <= 1e-9);
        }
    }
}

#[test]
fn all_background_prediction() {
    let gt = LabelVolume::new(EXT, (0..512).map(|i| (i % 4) as u8).collect()).unwrap();
    let pred = LabelVolume::new(EXT, vec![0; 512]).unwrap();
    let r = evaluate_volume(&pred, &gt).unwrap();
    for m in [r.wt, r.tc, r.et] {
        assert_eq!(m.dice, 0.0);
        assert_eq!(m.hd95, None);
    }
}

fn mask_strategy() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(prop::bool::weighted(0.3), 512)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric(a in mask_strategy(), b in mask_strategy()) {
        prop_assert_eq!(dice_score(&a, &b).unwrap(), dice_score(&b, &a).unwrap());
        prop_assert_eq!(hd95(&a, &b, EXT).unwrap(), hd95(&b, &a, EXT).unwrap());
    }

    #[test]
    fn hd95_bounded_by_hausdorff(a in mask_strategy(), b in mask_strategy()) {
        if let Some(h) = hd95(&a, &b, EXT).unwrap() {
            prop_assert!(h <= oracle_hausdorff(&a, &b) + 1e-12);
            prop_assert!(h >= 0.0);
        }
    }
}
