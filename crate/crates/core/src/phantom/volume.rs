use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial extents `[D, H, W]`.
pub type Extents = [usize; 3];

pub fn voxel_count(extents: Extents) -> usize {
    extents.iter().product()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    T1,
    T1c,
    T2,
    Flair,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::T1, Modality::T1c, Modality::T2, Modality::Flair];

    /// Channel position inside a [`MultiModalVolume`].
    pub fn index(self) -> usize {
        self as usize
    }
}

pub const BACKGROUND: u8 = 0;
pub const NECROTIC: u8 = 1;
pub const EDEMA: u8 = 2;
pub const ENHANCING: u8 = 3;
pub const NUM_CLASSES: usize = 4;

/// Four co-registered MR channels (T1, T1c, T2, Flair), channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalVolume {
    extents: Extents,
    data: Vec<f32>,
    spacing: f32,
}

impl MultiModalVolume {
    pub const CHANNELS: usize = 4;

    pub fn new(extents: Extents, data: Vec<f32>, spacing: f32) -> Result<Self> {
        let expected = Self::CHANNELS * voxel_count(extents);
        if data.len() != expected {
            return Err(Error::shape(format!(
                "multi-modal volume {:?} needs {expected} values, got {}",
                extents,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite intensity at index {i}")));
        }
        Ok(MultiModalVolume {
            extents,
            data,
            spacing,
        })
    }

    pub fn extents(&self) -> Extents {
        self.extents
    }

    pub fn spacing(&self) -> f32 {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, m: Modality) -> &[f32] {
        let n = voxel_count(self.extents);
        &self.data[m.index() * n..(m.index() + 1) * n]
    }

    pub(crate) fn channel_mut(&mut self, index: usize) -> &mut [f32] {
        let n = voxel_count(self.extents);
        &mut self.data[index * n..(index + 1) * n]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `4×D×H×W` constant tensor.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.extents;
        Tensor::new(&[Self::CHANNELS, d, h, w], self.data.clone()).expect("length checked at construction")
    }
}

/// Per-voxel tumor classes: 0 background, 1 necrotic/non-enhancing, 2 edema, 3 enhancing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    extents: Extents,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(extents: Extents, data: Vec<u8>) -> Result<Self> {
        if data.len() != voxel_count(extents) {
            return Err(Error::shape(format!(
                "label volume {:?} needs {} values, got {}",
                extents,
                voxel_count(extents),
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
            return Err(Error::Data(format!("unknown tumor class {v}")));
        }
        Ok(LabelVolume { extents, data })
    }

    pub fn extents(&self) -> Extents {
        self.extents
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }

    /// One-hot indicator of `class` as a `1×D×H×W` tensor.
    pub fn indicator(&self, class: u8) -> Tensor {
        let [d, h, w] = self.extents;
        let data = self.data.iter().map(|&v| if v == class { 1.0 } else { 0.0 }).collect();
        Tensor::new(&[1, d, h, w], data).expect("length checked at construction")
    }
}

/// Nested tumor regions: whole tumor ⊇ tumor core ⊇ enhancing tumor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMasks {
    pub extents: Extents,
    pub wt: Vec<bool>,
    pub tc: Vec<bool>,
    pub et: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "wt")]
    WholeTumor,
    #[serde(rename = "tc")]
    TumorCore,
    #[serde(rename = "et")]
    Enhancing,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::WholeTumor, Region::TumorCore, Region::Enhancing];

    pub fn short_name(self) -> &'static str {
        match self {
            Region::WholeTumor => "WT",
            Region::TumorCore => "TC",
            Region::Enhancing => "ET",
        }
    }
}

impl RegionMasks {
    /// Builds masks from raw class codes; codes outside `0..=3` are a data error.
    pub fn from_classes(extents: Extents, classes: &[u8]) -> Result<Self> {
        if classes.len() != voxel_count(extents) {
            return Err(Error::shape("class grid does not match extents"));
        }
        let n = classes.len();
        let mut masks = RegionMasks {
            extents,
            wt: vec![false; n],
            tc: vec![false; n],
            et: vec![false; n],
        };
        for (i, &c) in classes.iter().enumerate() {
            let (wt, tc, et) = match c {
                BACKGROUND => (false, false, false),
                NECROTIC => (true, true, false),
                EDEMA => (true, false, false),
                ENHANCING => (true, true, true),
                other => return Err(Error::Data(format!("unknown tumor class {other} at voxel {i}"))),
            };
            masks.wt[i] = wt;
            masks.tc[i] = tc;
            masks.et[i] = et;
        }
        Ok(masks)
    }

    pub fn get(&self, region: Region) -> &[bool] {
        match region {
            Region::WholeTumor => &self.wt,
            Region::TumorCore => &self.tc,
            Region::Enhancing => &self.et,
        }
    }

    /// Binary mask as a `1×D×H×W` tensor of 0/1 values.
    pub fn tensor(&self, region: Region) -> Tensor {
        let [d, h, w] = self.extents;
        let data = self.get(region).iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new(&[1, d, h, w], data).expect("mask length matches extents")
    }
}

pub fn derive_regions(labels: &LabelVolume) -> Result<RegionMasks> {
    RegionMasks::from_classes(labels.extents(), labels.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_gives_empty_regions() {
        let labels = LabelVolume::new([2, 2, 2], vec![0; 8]).unwrap();
        let m = derive_regions(&labels).unwrap();
        assert!(m.wt.iter().chain(&m.tc).chain(&m.et).all(|&b| !b));
    }

    #[test]
    fn enhancing_voxel_is_in_every_region() {
        let mut v = vec![0; 8];
        v[3] = ENHANCING;
        let m = derive_regions(&LabelVolume::new([2, 2, 2], v).unwrap()).unwrap();
        assert!(m.wt[3] && m.tc[3] && m.et[3]);
        assert_eq!(m.wt.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn region_sizes_follow_class_unions() {
        let classes = vec![1, 2, 3, 2, 2, 1, 0, 3, 0, 2, 1, 1];
        let labels = LabelVolume::new([1, 3, 4], classes).unwrap();
        let m = derive_regions(&labels).unwrap();
        let count = |mask: &[bool]| mask.iter().filter(|&&b| b).count();
        let (n1, n2, n3) = (labels.count(1), labels.count(2), labels.count(3));
        assert_eq!(count(&m.wt), n1 + n2 + n3);
        assert_eq!(count(&m.tc), n1 + n3);
        assert_eq!(count(&m.et), n3);
    }

    #[test]
    fn unknown_class_is_data_error() {
        assert!(matches!(RegionMasks::from_classes([1, 1, 2], &[0, 4]), Err(Error::Data(_))));
        assert!(matches!(LabelVolume::new([1, 1, 2], vec![0, 7]), Err(Error::Data(_))));
    }
}
