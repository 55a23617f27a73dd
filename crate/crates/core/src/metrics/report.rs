//! JSON evaluation reports with Mean / Median / 25 quantile / 75 quantile rows.

use serde::{Deserialize, Serialize};

use super::stats::{mean, quantile};
use super::RegionReport;
use crate::phantom::Region;

pub const REPORT_TITLE: &str = "phantom benchmark (synthetic data, not BraTS)";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case: String,
    pub regions: RegionReport,
    /// Containment of thresholded sub-branch outputs, when the model has them.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub branch_containment: Option<BranchContainment>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchContainment {
    pub wt_tc: f64,
    pub tc_et: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerRegion {
    pub et: Option<f64>,
    pub tc: Option<f64>,
    pub wt: Option<f64>,
}

impl PerRegion {
    pub fn get(&self, region: Region) -> Option<f64> {
        match region {
            Region::WholeTumor => self.wt,
            Region::TumorCore => self.tc,
            Region::Enhancing => self.et,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dice: PerRegion,
    /// Cases with an undefined HD95 are left out.
    pub hd95: PerRegion,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: SummaryRow,
    pub median: SummaryRow,
    pub q25: SummaryRow,
    pub q75: SummaryRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub title: String,
    pub cases: Vec<CaseReport>,
    pub aggregate: Aggregate,
}

fn summarize(cases: &[CaseReport], stat: impl Fn(&[f64]) -> Option<f64>) -> SummaryRow {
    let column = |region: Region, hd: bool| -> Option<f64> {
        let values: Vec<f64> = cases
            .iter()
            .filter_map(|c| {
                let m = c.regions.region(region);
                if hd {
                    m.hd95
                } else {
                    Some(m.dice)
                }
            })
            .collect();
        stat(&values)
    };
    let row = |hd| PerRegion {
        et: column(Region::Enhancing, hd),
        tc: column(Region::TumorCore, hd),
        wt: column(Region::WholeTumor, hd),
    };
    SummaryRow {
        dice: row(false),
        hd95: row(true),
    }
}

pub fn aggregate(cases: &[CaseReport]) -> Aggregate {
    Aggregate {
        mean: summarize(cases, mean),
        median: summarize(cases, |v| quantile(v, 0.5)),
        q25: summarize(cases, |v| quantile(v, 0.25)),
        q75: summarize(cases, |v| quantile(v, 0.75)),
    }
}

impl EvaluationReport {
    pub fn new(cases: Vec<CaseReport>) -> Self {
        let aggregate = aggregate(&cases);
        EvaluationReport {
            title: REPORT_TITLE.to_string(),
            cases,
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
