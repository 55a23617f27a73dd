//! Brute-force metric oracles shared by the metric and acceptance tests.

#![allow(dead_code)]

use mmtsn::phantom::Extents;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const EXT: Extents = [8, 8, 8];

pub fn point(i: usize) -> [i64; 3] {
    let [_, h, w] = EXT;
    [(i / (h * w)) as i64, ((i / w) % h) as i64, (i % w) as i64]
}

pub fn oracle_surface(mask: &[bool]) -> Vec<[i64; 3]> {
    let get = |p: [i64; 3]| {
        if p.iter().zip(EXT).any(|(&c, n)| c < 0 || c >= n as i64) {
            return false;
        }
        mask[((p[0] * 8 + p[1]) * 8 + p[2]) as usize]
    };
    let steps = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    (0..mask.len())
        .filter(|&i| mask[i])
        .map(point)
        .filter(|p| steps.iter().any(|s| !get([p[0] + s[0], p[1] + s[1], p[2] + s[2]])))
        .collect()
}

pub fn oracle_hd95(a: &[bool], b: &[bool]) -> Option<f64> {
    let (sa, sb) = (oracle_surface(a), oracle_surface(b));
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let closest = |p: &[i64; 3], set: &[[i64; 3]]| {
        let best = set
            .iter()
            .map(|q| (0..3).map(|k| (p[k] - q[k]).pow(2)).sum::<i64>())
            .min()
            .unwrap();
        (best as f64).sqrt()
    };
    let mut d: Vec<f64> = sa.iter().map(|p| closest(p, &sb)).collect();
    d.extend(sb.iter().map(|p| closest(p, &sa)));
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = 0.95 * (d.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(d[lo] + (d[hi] - d[lo]) * (pos - lo as f64))
}

pub fn oracle_hausdorff(a: &[bool], b: &[bool]) -> f64 {
    let (sa, sb) = (oracle_surface(a), oracle_surface(b));
    let directed = |x: &[[i64; 3]], y: &[[i64; 3]]| {
        x.iter()
            .map(|p| y.iter().map(|q| (0..3).map(|k| (p[k] - q[k]).pow(2)).sum::<i64>()).min().unwrap())
            .max()
            .unwrap()
    };
    (directed(&sa, &sb).max(directed(&sb, &sa)) as f64).sqrt()
}

pub fn oracle_dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

pub fn random_mask(rng: &mut ChaCha8Rng) -> Vec<bool> {
    match rng.gen_range(0..10) {
        0 => vec![false; 512],
        1 => {
            // a solid box
            let lo: [i64; 3] = std::array::from_fn(|_| rng.gen_range(0..6));
            let hi: [i64; 3] = std::array::from_fn(|k| rng.gen_range(lo[k]..8));
            (0..512).map(|i| (0..3).all(|k| (lo[k]..=hi[k]).contains(&point(i)[k]))).collect()
        }
        _ => {
            let density = rng.gen_range(0.02..0.7);
            (0..512).map(|_| rng.gen_bool(density)).collect()
        }
    }
}

