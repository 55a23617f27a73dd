//! Loss values against scripted sums and finite differences.

use mmtsn::loss::{
    multiclass_dice_loss, soft_dice_loss, spatial_constraint_loss, total_loss, total_spatial_constraint, LossComponents,
    LossWeights, EPSILON,
};
use mmtsn::model::{ModelConfig, ModelGraph, Variant};
use mmtsn::phantom::{derive_regions, generate_phantom, LabelVolume};
use mmtsn::pipeline::normalize;
use mmtsn::tensor::gradcheck::grad_check_coords;
use mmtsn::tensor::Tensor;
use proptest::prelude::*;

fn t(values: &[f32]) -> Tensor {
    Tensor::new(&[1, 1, 1, values.len()], values.to_vec()).unwrap()
}

fn dice_oracle(p: &[f64], g: &[f64]) -> f64 {
    let eps = EPSILON as f64;
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    1.0 - (2.0 * inter + eps) / (p.iter().sum::<f64>() + g.iter().sum::<f64>() + eps)
}

#[test]
fn soft_dice_examples() {
    let g = [1.0f32, 0.0, 1.0, 0.0];
    assert!(soft_dice_loss(&t(&g), &t(&g)).unwrap().item().unwrap() < 1e-5);
    let half = soft_dice_loss(&t(&[0.5; 4]), &t(&g)).unwrap().item().unwrap();
    assert!((half as f64 - dice_oracle(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0])).abs() < 1e-6);
    assert!((half - 0.5).abs() < 1e-5);
    let disjoint = soft_dice_loss(&t(&[0.0, 1.0, 0.0, 1.0]), &t(&g)).unwrap().item().unwrap();
    assert!((disjoint as f64 - (1.0 - EPSILON as f64 / (4.0 + EPSILON as f64))).abs() < 1e-6);
    assert!(soft_dice_loss(&t(&[0.5; 3]), &t(&g)).is_err());
}

#[test]
fn uniform_multiclass_matches_per_class_sums() {
    let ext = [2, 2, 3];
    let labels = LabelVolume::new(ext, vec![0, 1, 2, 3, 2, 2, 0, 1, 3, 0, 2, 0]).unwrap();
    let probs = Tensor::full(&[4, 2, 2, 3], 0.25);
    let got = multiclass_dice_loss(&probs, &labels).unwrap().item().unwrap() as f64;
    let mut want = 0.0;
    for class in 1..4u8 {
        let g: Vec<f64> = labels.data().iter().map(|&c| f64::from(c == class)).collect();
        want += dice_oracle(&vec![0.25; 12], &g) / 3.0;
    }
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn all_background_labels_stay_finite() {
    let labels = LabelVolume::new([1, 2, 2], vec![0; 4]).unwrap();
    let probs = Tensor::full(&[4, 1, 2, 2], 0.25);
    let v = multiclass_dice_loss(&probs, &labels).unwrap().item().unwrap();
    assert!(v.is_finite() && v > 0.99);
}

#[test]
fn containment_loss_contract() {
    let outer = t(&[1.0, 1.0, 0.0, 0.0]);
    let inside = spatial_constraint_loss(&outer, &t(&[1.0, 1.0, 0.0, 0.0])).unwrap().item().unwrap();
    assert!(inside.abs() < 1e-4);
    let half = spatial_constraint_loss(&outer, &t(&[1.0, 1.0, 1.0, 1.0])).unwrap().item().unwrap();
    assert!((half - 0.5).abs() < 1e-5);
    assert_eq!(spatial_constraint_loss(&outer, &t(&[0.0; 4])).unwrap().item().unwrap(), 0.0);
    let total = total_spatial_constraint(&t(&[1.0; 4]), &outer, &t(&[0.0, 0.0, 1.0, 0.0])).unwrap();
    assert!((total.item().unwrap() - 1.0).abs() < 1e-4);
}

#[test]
fn total_weights_components() {
    let c = LossComponents {
        bt: Tensor::scalar(0.1),
        wt: Tensor::scalar(0.1),
        tc: Tensor::scalar(0.1),
        et: Tensor::scalar(0.1),
        sc: Tensor::scalar(0.1),
    };
    let (total, breakdown) = c.combine(&LossWeights::default()).unwrap();
    assert!((total.item().unwrap() - 0.32).abs() < 1e-6);
    assert!((breakdown.recombined(&LossWeights::default()) - breakdown.total).abs() < 1e-6);
    let zero = LossWeights { lambda_wt: 0.0, lambda_tc: 0.0, lambda_et: 0.0, lambda_sc: 0.0 };
    assert_eq!(c.combine(&zero).unwrap().0.item().unwrap(), 0.1);
}

#[test]
fn total_gradient_is_weighted_component_gradient() {
    let config = ModelConfig { variant: Variant::Mmtsn, depth: 2, base_channels: 2 };
    let graph = ModelGraph::init(config, 4).unwrap();
    let (image, labels) = generate_phantom(3, [16, 16, 16]).unwrap();
    let crop = mmtsn::pipeline::PatchGrid::new([16, 16, 16], [8, 8, 8]).unwrap();
    let patch = &mmtsn::pipeline::extract_patches(&normalize(&image).unwrap(), Some(&labels), &crop).unwrap()[7];
    let labels = patch.labels.clone().unwrap();
    let regions = derive_regions(&labels).unwrap();
    let input = patch.image.to_tensor();
    let name = "bt.head.weight";
    let probe = graph.param(name).unwrap().clone();
    let w = LossWeights::default();
    let f = |p: &Tensor| {
        let g = graph.with_param(name, p.clone())?;
        Ok(total_loss(&g.forward(&input)?, &labels, &regions, &w)?.0)
    };
    let report = grad_check_coords(f, &probe, 1e-3, &[0, 3, 5]).unwrap();
    assert!(report.max_rel_error < 1e-2, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn soft_dice_in_unit_interval(p in prop::collection::vec(0.0f32..=1.0, 12), g in prop::collection::vec(any::<bool>(), 12)) {
        let g: Vec<f32> = g.into_iter().map(f32::from).collect();
        let v = soft_dice_loss(&t(&p), &t(&g)).unwrap().item().unwrap();
        prop_assert!((-1e-6..=1.0 + 1e-6).contains(&v));
        let p64: Vec<f64> = p.iter().map(|&x| x as f64).collect();
        let g64: Vec<f64> = g.iter().map(|&x| x as f64).collect();
        prop_assert!((v as f64 - dice_oracle(&p64, &g64)).abs() < 1e-5);
    }

    #[test]
    fn moving_inner_mass_outside_increases_loss(
        outer in prop::collection::vec(any::<bool>(), 10),
        inner in prop::collection::vec(0.0f32..=1.0, 10),
    ) {
        let inside = outer.iter().position(|&o| o);
        let outside = outer.iter().position(|&o| !o);
        prop_assume!(inside.is_some() && outside.is_some());
        let (i, o) = (inside.unwrap(), outside.unwrap());
        let mut before = inner.clone();
        before[i] = 1.0;
        before[o] = 0.0;
        let mut after = before.clone();
        after[i] = 0.0;
        after[o] = 1.0;
        let outer: Vec<f32> = outer.into_iter().map(f32::from).collect();
        let a = spatial_constraint_loss(&t(&outer), &t(&before)).unwrap().item().unwrap();
        let b = spatial_constraint_loss(&t(&outer), &t(&after)).unwrap().item().unwrap();
        prop_assert!(b > a, "{a} then {b}");
    }
}
