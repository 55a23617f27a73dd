//! Overlap and surface-distance evaluation of tumor region masks.

pub mod distance;
pub mod report;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{derive_regions, voxel_count, Extents, LabelVolume, Region};

fn check_pair(op: &str, a: &[bool], b: &[bool]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{op}: masks have {} and {} voxels", a.len(), b.len())));
    }
    Ok(())
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&v| v).count()
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice_score(a: &[bool], b: &[bool]) -> Result<f64> {
    check_pair("dice_score", a, b)?;
    let both = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let total = count(a) + count(b);
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

/// Linear-interpolated 95th percentile of the pooled A→B and B→A surface
/// distances in voxel units. `None` when either mask is empty.
pub fn hd95(a: &[bool], b: &[bool], extents: Extents) -> Result<Option<f64>> {
    check_pair("hd95", a, b)?;
    if a.len() != voxel_count(extents) {
        return Err(Error::shape(format!("hd95: masks do not match extents {:?}", extents)));
    }
    let distances = surface_distances(a, b, extents);
    Ok(distances.map(|mut d| {
        d.sort_by(f64::total_cmp);
        stats::quantile_sorted(&d, 0.95)
    }))
}

/// Pooled directed boundary-to-boundary distances, or `None` if a mask is empty.
pub fn surface_distances(a: &[bool], b: &[bool], extents: Extents) -> Option<Vec<f64>> {
    if count(a) == 0 || count(b) == 0 {
        return None;
    }
    let (sa, sb) = (distance::boundary(a, extents), distance::boundary(b, extents));
    let (da, db) = (
        distance::squared_distance_transform(&sa, extents),
        distance::squared_distance_transform(&sb, extents),
    );
    let directed = |from: &[bool], to_dt: &[f64]| -> Vec<f64> {
        from.iter()
            .zip(to_dt)
            .filter(|(&s, _)| s)
            .map(|(_, &d2)| d2.sqrt())
            .collect::<Vec<_>>()
    };
    let mut pooled = directed(&sa, &db);
    pooled.extend(directed(&sb, &da));
    Some(pooled)
}

/// `|inner \ outer| / |inner|`, zero for an empty inner mask.
pub fn containment_violation(outer: &[bool], inner: &[bool]) -> Result<f64> {
    check_pair("containment_violation", outer, inner)?;
    let n = count(inner);
    if n == 0 {
        return Ok(0.0);
    }
    let outside = inner.iter().zip(outer).filter(|(&i, &o)| i && !o).count();
    Ok(outside as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub dice: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub wt: RegionMetrics,
    pub tc: RegionMetrics,
    pub et: RegionMetrics,
    pub containment_violation_wt_tc: f64,
    pub containment_violation_tc_et: f64,
}

impl RegionReport {
    pub fn region(&self, region: Region) -> &RegionMetrics {
        match region {
            Region::WholeTumor => &self.wt,
            Region::TumorCore => &self.tc,
            Region::Enhancing => &self.et,
        }
    }
}

/// Compares predicted and reference label volumes region by region.
pub fn evaluate_volume(pred: &LabelVolume, gt: &LabelVolume) -> Result<RegionReport> {
    if pred.extents() != gt.extents() {
        return Err(Error::shape(format!(
            "evaluate_volume: extents {:?} and {:?} differ",
            pred.extents(),
            gt.extents()
        )));
    }
    let extents = pred.extents();
    let (p, g) = (derive_regions(pred)?, derive_regions(gt)?);
    let region = |r: Region| -> Result<RegionMetrics> {
        Ok(RegionMetrics {
            dice: dice_score(p.get(r), g.get(r))?,
            hd95: hd95(p.get(r), g.get(r), extents)?,
        })
    };
    Ok(RegionReport {
        wt: region(Region::WholeTumor)?,
        tc: region(Region::TumorCore)?,
        et: region(Region::Enhancing)?,
        containment_violation_wt_tc: containment_violation(&p.wt, &p.tc)?,
        containment_violation_tc_et: containment_violation(&p.tc, &p.et)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(extents: Extents, lo: [usize; 3], size: usize) -> Vec<bool> {
        let [d, h, w] = extents;
        let mut m = vec![false; d * h * w];
        for z in lo[0]..lo[0] + size {
            for y in lo[1]..lo[1] + size {
                for x in lo[2]..lo[2] + size {
                    m[(z * h + y) * w + x] = true;
                }
            }
        }
        m
    }

    #[test]
    fn dice_fixtures() {
        let a = cube([4, 4, 4], [0, 0, 0], 2);
        assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        let b = cube([4, 4, 4], [1, 0, 0], 2);
        // |A| = |B| = 8, overlap 4
        assert_eq!(dice_score(&a, &b).unwrap(), 0.5);
        let c = cube([4, 4, 4], [2, 2, 2], 2);
        assert_eq!(dice_score(&a, &c).unwrap(), 0.0);
        let e = vec![false; 64];
        assert_eq!(dice_score(&e, &e).unwrap(), 1.0);
        assert!(dice_score(&a, &e[..10]).is_err());
    }

    #[test]
    fn hd95_identity_and_empty() {
        let a = cube([6, 6, 6], [1, 1, 1], 3);
        assert_eq!(hd95(&a, &a, [6, 6, 6]).unwrap(), Some(0.0));
        assert_eq!(hd95(&a, &vec![false; 216], [6, 6, 6]).unwrap(), None);
    }

    #[test]
    fn containment_fixtures() {
        let outer = vec![true, true, false, false];
        assert_eq!(containment_violation(&outer, &[true, false, false, false]).unwrap(), 0.0);
        assert_eq!(containment_violation(&outer, &[false, true, true, false]).unwrap(), 0.5);
        assert_eq!(containment_violation(&outer, &[false; 4]).unwrap(), 0.0);
    }

    #[test]
    fn perfect_report_against_self() {
        let (_, labels) = crate::phantom::generate_phantom(2, [16, 16, 16]).unwrap();
        let r = evaluate_volume(&labels, &labels).unwrap();
        for region in Region::ALL {
            assert_eq!(r.region(region).dice, 1.0);
            assert_eq!(r.region(region).hd95, Some(0.0));
        }
        assert_eq!(r.containment_violation_wt_tc, 0.0);
        assert_eq!(r.containment_violation_tc_et, 0.0);
    }

    #[test]
    fn all_background_prediction() {
        let (_, gt) = crate::phantom::generate_phantom(2, [16, 16, 16]).unwrap();
        let pred = LabelVolume::new(gt.extents(), vec![0; gt.data().len()]).unwrap();
        let r = evaluate_volume(&pred, &gt).unwrap();
        for region in Region::ALL {
            assert_eq!(r.region(region).dice, 0.0);
            assert_eq!(r.region(region).hd95, None);
        }
    }
}
