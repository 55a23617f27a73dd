use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{voxel_count, Extents, LabelVolume, MultiModalVolume};

/// Sliding-window layout: stride equals the patch size and the last window
/// on each axis is shifted back to end flush with the volume.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub volume_extents: Extents,
    pub patch_extents: Extents,
    /// Patch corners in depth-major order.
    pub origins: Vec<[usize; 3]>,
}

fn axis_origins(volume: usize, patch: usize) -> Vec<usize> {
    let n = volume.div_ceil(patch);
    (0..n).map(|i| if i + 1 == n { volume - patch } else { i * patch }).collect()
}

impl PatchGrid {
    pub fn new(volume_extents: Extents, patch_extents: Extents) -> Result<Self> {
        if patch_extents.contains(&0) || (0..3).any(|a| patch_extents[a] > volume_extents[a]) {
            return Err(Error::shape(format!(
                "patch {:?} does not fit inside volume {:?}",
                patch_extents, volume_extents
            )));
        }
        let [zs, ys, xs] = [0, 1, 2].map(|a| axis_origins(volume_extents[a], patch_extents[a]));
        let mut origins = Vec::with_capacity(zs.len() * ys.len() * xs.len());
        for &z in &zs {
            for &y in &ys {
                for &x in &xs {
                    origins.push([z, y, x]);
                }
            }
        }
        Ok(PatchGrid {
            volume_extents,
            patch_extents,
            origins,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("grid serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let grid: PatchGrid = serde_json::from_str(text)?;
        let rebuilt = PatchGrid::new(grid.volume_extents, grid.patch_extents)?;
        for o in &grid.origins {
            if (0..3).any(|a| o[a] + grid.patch_extents[a] > grid.volume_extents[a]) {
                return Err(Error::shape(format!("origin {:?} leaves the volume", o)));
            }
        }
        drop(rebuilt);
        Ok(grid)
    }

    /// Calls `f(volume_index, patch_index)` for every voxel of the patch at `origin`.
    fn for_each_voxel(&self, origin: [usize; 3], mut f: impl FnMut(usize, usize)) {
        let [_, vh, vw] = self.volume_extents;
        let [pd, ph, pw] = self.patch_extents;
        let mut p = 0;
        for z in 0..pd {
            for y in 0..ph {
                let row = ((origin[0] + z) * vh + origin[1] + y) * vw + origin[2];
                for x in 0..pw {
                    f(row + x, p);
                    p += 1;
                }
            }
        }
    }

    fn crop<T: Copy>(&self, origin: [usize; 3], channels: usize, data: &[T]) -> Vec<T> {
        let vn = voxel_count(self.volume_extents);
        let pn = voxel_count(self.patch_extents);
        let mut out = Vec::with_capacity(channels * pn);
        for c in 0..channels {
            let src = &data[c * vn..(c + 1) * vn];
            self.for_each_voxel(origin, |v, _| out.push(src[v]));
        }
        out
    }
}

/// One window cut from an image and, when given, its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: [usize; 3],
    pub image: MultiModalVolume,
    pub labels: Option<LabelVolume>,
}

pub fn extract_patches(
    volume: &MultiModalVolume,
    labels: Option<&LabelVolume>,
    grid: &PatchGrid,
) -> Result<Vec<Patch>> {
    if volume.extents() != grid.volume_extents {
        return Err(Error::shape(format!(
            "volume {:?} does not match grid {:?}",
            volume.extents(),
            grid.volume_extents
        )));
    }
    if let Some(l) = labels {
        if l.extents() != grid.volume_extents {
            return Err(Error::shape("label extents do not match grid"));
        }
    }
    grid.origins
        .iter()
        .map(|&origin| {
            let image = MultiModalVolume::new(
                grid.patch_extents,
                grid.crop(origin, MultiModalVolume::CHANNELS, volume.data()),
                volume.spacing(),
            )?;
            let labels = labels
                .map(|l| LabelVolume::new(grid.patch_extents, grid.crop(origin, 1, l.data())))
                .transpose()?;
            Ok(Patch { origin, image, labels })
        })
        .collect()
}

/// Channel-major per-voxel probabilities over a whole volume or a patch.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVolume {
    pub channels: usize,
    pub extents: Extents,
    pub data: Vec<f32>,
}

impl ProbVolume {
    pub fn new(channels: usize, extents: Extents, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || data.len() != channels * voxel_count(extents) {
            return Err(Error::shape(format!(
                "probability volume {channels}×{:?} cannot hold {} values",
                extents,
                data.len()
            )));
        }
        Ok(ProbVolume { channels, extents, data })
    }

    /// Highest-probability class per voxel; ties go to the lower class.
    pub fn argmax(&self) -> Result<LabelVolume> {
        let n = voxel_count(self.extents);
        let labels = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.channels {
                    if self.data[c * n + i] > self.data[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelVolume::new(self.extents, labels)
    }

    /// Per-channel masks of `probability > threshold`.
    pub fn threshold(&self, channel: usize, threshold: f32) -> Vec<bool> {
        let n = voxel_count(self.extents);
        self.data[channel * n..(channel + 1) * n].iter().map(|&p| p > threshold).collect()
    }
}

/// Averages per-patch predictions back onto the full volume; voxels covered by
/// several windows get the mean of their contributors.
pub fn reassemble(patches: &[ProbVolume], grid: &PatchGrid) -> Result<ProbVolume> {
    if patches.len() != grid.len() {
        return Err(Error::shape(format!(
            "grid has {} windows but {} predictions were given",
            grid.len(),
            patches.len()
        )));
    }
    let channels = patches.first().map(|p| p.channels).unwrap_or(1);
    let vn = voxel_count(grid.volume_extents);
    let pn = voxel_count(grid.patch_extents);
    let mut sum = vec![0f64; channels * vn];
    let mut hits = vec![0u32; vn];
    for (patch, &origin) in patches.iter().zip(&grid.origins) {
        if patch.channels != channels || patch.extents != grid.patch_extents {
            return Err(Error::shape(format!(
                "prediction {}×{:?} does not match {channels}×{:?}",
                patch.channels, patch.extents, grid.patch_extents
            )));
        }
        grid.for_each_voxel(origin, |v, p| {
            hits[v] += 1;
            for c in 0..channels {
                sum[c * vn + v] += patch.data[c * pn + p] as f64;
            }
        });
    }
    if let Some(v) = hits.iter().position(|&h| h == 0) {
        return Err(Error::shape(format!("voxel {v} is not covered by any window")));
    }
    let data = sum
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / hits[i % vn] as f64) as f32)
        .collect();
    ProbVolume::new(channels, grid.volume_extents, data)
}
