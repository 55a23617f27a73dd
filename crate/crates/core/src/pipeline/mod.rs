//! Intensity normalization, sliding-window patching and augmentation.

mod augment;
mod patches;

use crate::error::{Error, Result};
use crate::phantom::{voxel_count, MultiModalVolume};

pub use augment::{augment, AugmentParams, GAMMA_RANGE};
pub use patches::{extract_patches, reassemble, Patch, PatchGrid, ProbVolume};

/// Per-channel z-score over head voxels (voxels where any channel is
/// nonzero). Background stays exactly 0.
pub fn normalize(volume: &MultiModalVolume) -> Result<MultiModalVolume> {
    let n = voxel_count(volume.extents());
    let data = volume.data();
    let head: Vec<bool> = (0..n)
        .map(|i| (0..MultiModalVolume::CHANNELS).any(|c| data[c * n + i] != 0.0))
        .collect();
    let head_count = head.iter().filter(|&&h| h).count();
    if head_count == 0 {
        return Err(Error::Data("volume has no nonzero voxels to normalize".into()));
    }
    let mut out = volume.clone();
    for c in 0..MultiModalVolume::CHANNELS {
        let channel = out.channel_mut(c);
        let values = || channel_values(&head, channel);
        let mean = values().sum::<f64>() / head_count as f64;
        let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / head_count as f64;
        let std = var.sqrt();
        if !(std > 1e-12) {
            return Err(Error::Data(format!(
                "channel {c} has zero variance over the head region"
            )));
        }
        for (v, &h) in channel.iter_mut().zip(&head) {
            *v = if h { ((*v as f64 - mean) / std) as f32 } else { 0.0 };
        }
    }
    Ok(out)
}

fn channel_values<'a>(head: &'a [bool], channel: &'a [f32]) -> impl Iterator<Item = f64> + 'a {
    channel.iter().zip(head).filter(|(_, &h)| h).map(|(&v, _)| v as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, Modality};

    #[test]
    fn head_voxels_become_standard() {
        let (vol, _) = generate_phantom(8, [16, 16, 16]).unwrap();
        let norm = normalize(&vol).unwrap();
        for m in Modality::ALL {
            let head: Vec<f64> = vol
                .channel(m)
                .iter()
                .zip(norm.channel(m))
                .filter(|(&raw, _)| raw != 0.0)
                .map(|(_, &v)| v as f64)
                .collect();
            let mean = head.iter().sum::<f64>() / head.len() as f64;
            let var = head.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / head.len() as f64;
            assert!(mean.abs() < 1e-5, "{mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-5);
            for (&raw, &v) in vol.channel(m).iter().zip(norm.channel(m)) {
                if raw == 0.0 {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn renormalizing_is_idempotent() {
        let (vol, _) = generate_phantom(9, [16, 16, 16]).unwrap();
        let once = normalize(&vol).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_head_channel_is_error() {
        let mut data = vec![0f32; 4 * 8];
        for c in 0..4 {
            for i in 0..4 {
                data[c * 8 + i] = if c == 2 { 5.0 } else { i as f32 + 1.0 };
            }
        }
        let vol = MultiModalVolume::new([2, 2, 2], data, 1.0).unwrap();
        assert!(matches!(normalize(&vol), Err(Error::Data(_))));
    }
}
