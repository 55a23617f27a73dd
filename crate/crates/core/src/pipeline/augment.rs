use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::phantom::{voxel_count, Extents, LabelVolume, MultiModalVolume};

pub const GAMMA_RANGE: RangeInclusive<f32> = 0.7..=1.5;

/// One sampled augmentation. Rotation turns the H–W (axial) plane by
/// `rot_k · 90°`; flips mirror the depth, height and width axes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub gamma: Option<f32>,
    pub rot_k: u8,
    pub flips: [bool; 3],
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            gamma: None,
            rot_k: 0,
            flips: [false; 3],
        }
    }

    /// Each transform fires independently with probability 0.5. Quarter
    /// turns are only drawn when the axial plane is square.
    pub fn sample(seed: u64, extents: Extents) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = rng.gen_bool(0.5).then(|| rng.gen_range(GAMMA_RANGE));
        let rot_k = if rng.gen_bool(0.5) {
            if extents[1] == extents[2] {
                rng.gen_range(1..=3)
            } else {
                2
            }
        } else {
            0
        };
        let flips = [rng.gen_bool(0.5), rng.gen_bool(0.5), rng.gen_bool(0.5)];
        AugmentParams { gamma, rot_k, flips }
    }

    /// Source voxel of every output voxel, plus the output extents.
    fn source_map(&self, extents: Extents) -> (Vec<usize>, Extents) {
        let mut map: Vec<usize> = (0..voxel_count(extents)).collect();
        let mut ext = extents;
        for _ in 0..self.rot_k % 4 {
            let [d, h, w] = ext;
            let mut next = Vec::with_capacity(map.len());
            // output is d × w × h with out[z][i][j] = in[z][j][w-1-i]
            for z in 0..d {
                for i in 0..w {
                    for j in 0..h {
                        next.push(map[(z * h + j) * w + (w - 1 - i)]);
                    }
                }
            }
            map = next;
            ext = [d, w, h];
        }
        let [d, h, w] = ext;
        let [fz, fy, fx] = self.flips;
        if fz || fy || fx {
            let flip = |v: usize, n: usize, on: bool| if on { n - 1 - v } else { v };
            let mut next = Vec::with_capacity(map.len());
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        next.push(map[(flip(z, d, fz) * h + flip(y, h, fy)) * w + flip(x, w, fx)]);
                    }
                }
            }
            map = next;
        }
        (map, ext)
    }

    pub fn apply(
        &self,
        patch: &MultiModalVolume,
        labels: &LabelVolume,
    ) -> Result<(MultiModalVolume, LabelVolume)> {
        let n = voxel_count(patch.extents());
        let mut data = patch.data().to_vec();
        if let Some(g) = self.gamma {
            for channel in data.chunks_mut(n) {
                gamma_correct(channel, g);
            }
        }
        let (map, ext) = self.source_map(patch.extents());
        let moved: Vec<f32> = data
            .chunks(n)
            .flat_map(|channel| map.iter().map(move |&s| channel[s]))
            .collect();
        let label_data = map.iter().map(|&s| labels.data()[s]).collect();
        Ok((
            MultiModalVolume::new(ext, moved, patch.spacing())?,
            LabelVolume::new(ext, label_data)?,
        ))
    }
}

/// `min + (max − min) · ((x − min) / (max − min))^γ`; constant channels are
/// left alone.
fn gamma_correct(channel: &mut [f32], gamma: f32) {
    let (lo, hi) = channel
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi as f64 - lo as f64;
    if !(range > 0.0) {
        return;
    }
    for v in channel {
        let unit = ((*v as f64 - lo as f64) / range).clamp(0.0, 1.0);
        *v = (lo as f64 + range * unit.powf(gamma as f64)) as f32;
    }
}

/// Samples parameters from `seed` and applies them.
pub fn augment(
    patch: &MultiModalVolume,
    labels: &LabelVolume,
    seed: u64,
) -> Result<(MultiModalVolume, LabelVolume)> {
    AugmentParams::sample(seed, patch.extents()).apply(patch, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate_phantom;

    fn ramp(ext: Extents) -> (MultiModalVolume, LabelVolume) {
        let n = voxel_count(ext);
        let img = MultiModalVolume::new(ext, (0..4 * n).map(|i| i as f32).collect(), 1.0).unwrap();
        let labels = LabelVolume::new(ext, (0..n).map(|i| (i % 4) as u8).collect()).unwrap();
        (img, labels)
    }

    #[test]
    fn identity_params_change_nothing() {
        let (img, labels) = generate_phantom(4, [16, 16, 16]).unwrap();
        let (a, b) = AugmentParams::identity().apply(&img, &labels).unwrap();
        assert_eq!(a, img);
        assert_eq!(b, labels);
    }

    #[test]
    fn four_quarter_turns_return_home() {
        let (img, labels) = ramp([2, 3, 3]);
        let mut cur = (img.clone(), labels.clone());
        let turn = AugmentParams { rot_k: 1, ..AugmentParams::identity() };
        for _ in 0..4 {
            cur = turn.apply(&cur.0, &cur.1).unwrap();
        }
        assert_eq!(cur.0, img);
        assert_eq!(cur.1, labels);
    }

    #[test]
    fn quarter_turn_moves_corner() {
        let (img, labels) = ramp([1, 2, 3]);
        let turn = AugmentParams { rot_k: 1, ..AugmentParams::identity() };
        let (out, _) = turn.apply(&img, &labels).unwrap();
        assert_eq!(out.extents(), [1, 3, 2]);
        // first output row reads the last input column top to bottom
        assert_eq!(&out.data()[..6], &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
    }

    #[test]
    fn gamma_keeps_channel_range() {
        let mut v = vec![-2.0f32, 0.0, 1.0, 6.0];
        gamma_correct(&mut v, 1.5);
        assert_eq!(v[0], -2.0);
        assert_eq!(v[3], 6.0);
        assert!(v[1] < 0.0 && v[2] < 1.0);
        let mut flat = vec![3.0f32; 4];
        gamma_correct(&mut flat, 0.7);
        assert_eq!(flat, vec![3.0; 4]);
    }

    #[test]
    fn non_square_plane_only_half_turns() {
        for seed in 0..64 {
            let p = AugmentParams::sample(seed, [4, 4, 6]);
            assert!(p.rot_k == 0 || p.rot_k == 2);
            if let Some(g) = p.gamma {
                assert!(GAMMA_RANGE.contains(&g));
            }
        }
    }
}
