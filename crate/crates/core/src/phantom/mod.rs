//! Deterministic synthetic multi-modal head phantoms with nested tumors.
//!
//! A phantom is an ellipsoidal head containing a randomly oriented whole-tumor
//! ellipsoid, a scaled tumor-core ellipsoid inside it and a scaled enhancing
//! ellipsoid inside that. Each inner ellipsoid shares the outer orientation,
//! is scaled by `s < 1` and has its center displaced by less than `1 − s` in
//! the outer ellipsoid's normalized frame, which puts it inside the outer one.

pub mod dataset;
pub mod io;
mod volume;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

pub use volume::{
    derive_regions, voxel_count, Extents, LabelVolume, Modality, MultiModalVolume, Region, RegionMasks,
    BACKGROUND, EDEMA, ENHANCING, NECROTIC, NUM_CLASSES,
};

pub const MIN_EXTENT: usize = 16;

const HEAD_RADIUS: f64 = 0.46;
const MAX_ATTEMPTS: usize = 64;

/// Healthy tissue intensity per modality (T1, T1c, T2, Flair).
const TISSUE: [f64; 4] = [100.0, 110.0, 80.0, 90.0];
/// Intensity offset from healthy tissue, indexed by class then modality.
const CLASS_OFFSET: [[f64; 4]; 4] = [
    [0.0, 0.0, 0.0, 0.0],
    // necrotic / non-enhancing core: dark in T1 and T1c
    [-45.0, -35.0, 50.0, 20.0],
    // edema: bright in T2 and Flair
    [-15.0, -10.0, 70.0, 80.0],
    // enhancing: bright in T1c only
    [-20.0, 90.0, 0.0, 0.0],
];
const NOISE_FRACTION: f64 = 0.05;

fn tissue_contrast() -> f64 {
    CLASS_OFFSET.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    /// Rows are the ellipsoid's axes in volume coordinates.
    axes: [[f64; 3]; 3],
}

impl Ellipsoid {
    fn normalized(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        std::array::from_fn(|i| {
            let a = self.axes[i];
            (a[0] * d[0] + a[1] * d[1] + a[2] * d[2]) / self.radii[i]
        })
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        self.normalized(p).iter().map(|q| q * q).sum::<f64>() <= 1.0
    }

    /// Same orientation, radii scaled by `s`, center moved by `offset`
    /// expressed in this ellipsoid's normalized frame.
    fn nested(&self, s: f64, offset: [f64; 3]) -> Ellipsoid {
        let mut center = self.center;
        for i in 0..3 {
            for (c, a) in center.iter_mut().zip(self.axes[i]) {
                *c += a * offset[i] * self.radii[i];
            }
        }
        Ellipsoid {
            center,
            radii: self.radii.map(|r| r * s),
            axes: self.axes,
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    q.iter_mut().for_each(|v| *v /= norm);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Offset of normalized length in `[0, max_len)` along a random direction.
fn random_offset(rng: &mut ChaCha8Rng, max_len: f64) -> [f64; 3] {
    let mut dir: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let len = rng.gen_range(0.0..max_len);
    dir.iter_mut().for_each(|v| *v *= len / norm);
    dir
}

fn voxel_center(extents: Extents, i: usize) -> [f64; 3] {
    let [_, h, w] = extents;
    [(i / (h * w)) as f64, ((i / w) % h) as f64, (i % w) as f64]
}

fn sample_classes(rng: &mut ChaCha8Rng, extents: Extents) -> (Ellipsoid, Vec<u8>) {
    let min_extent = *extents.iter().min().expect("three extents") as f64;
    let head = Ellipsoid {
        center: extents.map(|n| (n as f64 - 1.0) / 2.0),
        radii: extents.map(|n| HEAD_RADIUS * n as f64),
        axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };
    let radii: [f64; 3] = std::array::from_fn(|_| min_extent * rng.gen_range(0.22..0.30));
    let r_max = radii.iter().cloned().fold(0.0, f64::max);
    let center: [f64; 3] = std::array::from_fn(|a| {
        let slack = (HEAD_RADIUS * extents[a] as f64 - r_max - 1.0).max(0.0) * 0.8;
        head.center[a] + if slack > 0.0 { rng.gen_range(-slack..slack) } else { 0.0 }
    });
    let wt = Ellipsoid {
        center,
        radii,
        axes: random_rotation(rng),
    };
    let s_core = rng.gen_range(0.55..0.70);
    let core_offset = random_offset(rng, (1.0 - s_core) * 0.8);
    let tc = wt.nested(s_core, core_offset);
    let s_enh = rng.gen_range(0.50..0.65);
    let enh_offset = random_offset(rng, (1.0 - s_enh) * 0.8);
    let et = tc.nested(s_enh, enh_offset);

    let classes = (0..voxel_count(extents))
        .map(|i| {
            let p = voxel_center(extents, i);
            if !head.contains(p) {
                BACKGROUND
            } else if et.contains(p) {
                ENHANCING
            } else if tc.contains(p) {
                NECROTIC
            } else if wt.contains(p) {
                EDEMA
            } else {
                BACKGROUND
            }
        })
        .collect();
    (head, classes)
}

/// Generates one phantom; a pure function of `(seed, extents)`.
pub fn generate_phantom(seed: u64, extents: Extents) -> Result<(MultiModalVolume, LabelVolume)> {
    if extents.iter().any(|&n| n < MIN_EXTENT) {
        return Err(Error::Data(format!(
            "phantom extents {:?} too small to nest three ellipsoids (minimum {MIN_EXTENT} per axis)",
            extents
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (head, classes) = (0..MAX_ATTEMPTS)
        .map(|_| sample_classes(&mut rng, extents))
        .find(|(_, classes)| [NECROTIC, EDEMA, ENHANCING].iter().all(|c| classes.contains(c)))
        .ok_or_else(|| Error::Data(format!("could not place a non-empty nested tumor in {:?}", extents)))?;

    let n = voxel_count(extents);
    let noise = Normal::new(0.0, NOISE_FRACTION * tissue_contrast()).expect("positive sigma");
    // slow multiplicative tissue modulation so per-channel normalization matters
    let phase: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let mut data = vec![0f32; 4 * n];
    for (i, &class) in classes.iter().enumerate() {
        let p = voxel_center(extents, i);
        if !head.contains(p) {
            continue;
        }
        let bias = 1.0
            + 0.08
                * (0..3)
                    .map(|a| (std::f64::consts::TAU * p[a] / extents[a] as f64 + phase[a]).sin())
                    .sum::<f64>()
                / 3.0;
        for m in 0..4 {
            let clean = TISSUE[m] * bias + CLASS_OFFSET[class as usize][m];
            let v = clean + noise.sample(&mut rng);
            data[m * n + i] = v.max(1.0) as f32;
        }
    }
    Ok((
        MultiModalVolume::new(extents, data, 1.0)?,
        LabelVolume::new(extents, classes)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_phantom(11, [16, 16, 16]).unwrap();
        let b = generate_phantom(11, [16, 16, 16]).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(12, [16, 16, 16]).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn regions_nested_and_non_empty() {
        for seed in 0..20 {
            let (_, labels) = generate_phantom(seed, [16, 18, 20]).unwrap();
            let m = derive_regions(&labels).unwrap();
            for i in 0..m.wt.len() {
                assert!(!m.et[i] || m.tc[i]);
                assert!(!m.tc[i] || m.wt[i]);
            }
            assert!(m.et.iter().any(|&b| b), "seed {seed}");
            assert!(labels.count(NECROTIC) > 0 && labels.count(EDEMA) > 0);
        }
    }

    #[test]
    fn background_is_exactly_zero_and_head_positive() {
        let (vol, labels) = generate_phantom(3, [16, 16, 16]).unwrap();
        let n = voxel_count(vol.extents());
        let corner = 0;
        for m in Modality::ALL {
            assert_eq!(vol.channel(m)[corner], 0.0);
        }
        let tumor = labels.data().iter().position(|&c| c != BACKGROUND).unwrap();
        assert!(tumor < n);
        assert!(Modality::ALL.iter().all(|&m| vol.channel(m)[tumor] > 0.0));
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(matches!(generate_phantom(0, [15, 32, 32]), Err(Error::Data(_))));
    }
}
