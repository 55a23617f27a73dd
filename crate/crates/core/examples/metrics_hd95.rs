//! Dice and HD95 between two offset spheres, checked against a brute-force
//! all-pairs surface distance computation.
//!
//! cargo run --release --example metrics_hd95 -- [shift]

use mmtsn::metrics::distance::boundary;
use mmtsn::metrics::{dice_score, hd95};
use mmtsn::metrics::stats::quantile;
use mmtsn::phantom::Extents;

fn sphere(extents: Extents, center: [f64; 3], radius: f64) -> Vec<bool> {
    let [d, h, w] = extents;
    (0..d * h * w)
        .map(|i| {
            let p = [(i / (h * w)) as f64, ((i / w) % h) as f64, (i % w) as f64];
            (0..3).map(|a| (p[a] - center[a]).powi(2)).sum::<f64>() <= radius * radius
        })
        .collect()
}

fn coords(mask: &[bool], extents: Extents) -> Vec<[f64; 3]> {
    let [_, h, w] = extents;
    (0..mask.len())
        .filter(|&i| mask[i])
        .map(|i| [(i / (h * w)) as f64, ((i / w) % h) as f64, (i % w) as f64])
        .collect()
}

fn brute_force_hd95(a: &[bool], b: &[bool], extents: Extents) -> f64 {
    let (sa, sb) = (coords(&boundary(a, extents), extents), coords(&boundary(b, extents), extents));
    let nearest = |p: &[f64; 3], set: &[[f64; 3]]| {
        set.iter()
            .map(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    };
    let mut all: Vec<f64> = sa.iter().map(|p| nearest(p, &sb)).collect();
    all.extend(sb.iter().map(|p| nearest(p, &sa)));
    quantile(&all, 0.95).expect("both surfaces are non-empty")
}

fn main() -> mmtsn::Result<()> {
    let shift: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3.0);
    let extents = [24, 24, 24];
    let a = sphere(extents, [12.0, 12.0, 12.0], 6.0);
    let b = sphere(extents, [12.0, 12.0, 12.0 + shift], 6.0);
    let fast = hd95(&a, &b, extents)?.expect("non-empty masks");
    println!("shift {shift}: dice {:.4}  hd95 {fast:.4}  brute force {:.4}", dice_score(&a, &b)?, brute_force_hd95(&a, &b, extents));
    let empty = vec![false; a.len()];
    println!("against an empty mask: dice {:.4}  hd95 {:?}", dice_score(&a, &empty)?, hd95(&a, &empty, extents)?);
    Ok(())
}
