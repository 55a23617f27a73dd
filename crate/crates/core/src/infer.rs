//! Whole-volume sliding-window inference and per-case evaluation.

use crate::error::{Error, Result};
use crate::metrics::report::{BranchContainment, CaseReport};
use crate::metrics::{containment_violation, evaluate_volume};
use crate::model::ModelGraph;
use crate::phantom::dataset::Case;
use crate::phantom::{Extents, LabelVolume, MultiModalVolume, NUM_CLASSES};
use crate::pipeline::{extract_patches, normalize, reassemble, PatchGrid, ProbVolume};

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Main-head class probabilities, `4×D×H×W`.
    pub probs: ProbVolume,
    /// Sub-branch WT, TC and ET probabilities stacked as `3×D×H×W`.
    pub branches: Option<ProbVolume>,
}

impl Prediction {
    pub fn labels(&self) -> Result<LabelVolume> {
        self.probs.argmax()
    }

    /// Containment violations of the branch maps thresholded at 0.5.
    pub fn branch_containment(&self) -> Result<Option<BranchContainment>> {
        let Some(b) = &self.branches else {
            return Ok(None);
        };
        let (wt, tc, et) = (b.threshold(0, 0.5), b.threshold(1, 0.5), b.threshold(2, 0.5));
        Ok(Some(BranchContainment {
            wt_tc: containment_violation(&wt, &tc)?,
            tc_et: containment_violation(&tc, &et)?,
        }))
    }
}

/// Normalizes `image`, runs the model on every window of a tail-aligned grid
/// and averages the window predictions.
pub fn predict_volume(graph: &ModelGraph, image: &MultiModalVolume, patch_extents: Extents) -> Result<Prediction> {
    let m = graph.config().extent_multiple();
    if patch_extents.iter().any(|&e| e % m != 0) {
        return Err(Error::Config(format!(
            "patch extents {:?} are not multiples of {m}",
            patch_extents
        )));
    }
    let frozen = graph.frozen();
    let image = normalize(image)?;
    let grid = PatchGrid::new(image.extents(), patch_extents)?;
    let mut main = Vec::with_capacity(grid.len());
    let mut branches = Vec::with_capacity(grid.len());
    for patch in extract_patches(&image, None, &grid)? {
        let out = frozen.forward(&patch.image.to_tensor())?;
        main.push(ProbVolume::new(NUM_CLASSES, patch_extents, out.main_probs.data().to_vec())?);
        if let (Some(wt), Some(tc), Some(et)) = (&out.wt_prob, &out.tc_prob, &out.et_prob) {
            let stacked = [wt, tc, et].iter().flat_map(|t| t.data().iter().copied()).collect();
            branches.push(ProbVolume::new(3, patch_extents, stacked)?);
        }
    }
    Ok(Prediction {
        probs: reassemble(&main, &grid)?,
        branches: if branches.is_empty() { None } else { Some(reassemble(&branches, &grid)?) },
    })
}

pub fn evaluate_case(graph: &ModelGraph, case: &Case, patch_extents: Extents) -> Result<CaseReport> {
    let prediction = predict_volume(graph, &case.image, patch_extents)?;
    Ok(CaseReport {
        case: case.name.clone(),
        regions: evaluate_volume(&prediction.labels()?, &case.labels)?,
        branch_containment: prediction.branch_containment()?,
    })
}

/// Scores the ground truth against itself; a sanity check of the report path.
pub fn evaluate_ground_truth(case: &Case) -> Result<CaseReport> {
    Ok(CaseReport {
        case: case.name.clone(),
        regions: evaluate_volume(&case.labels, &case.labels)?,
        branch_containment: None,
    })
}

/// Evaluates `cases` on up to `threads` worker threads. Reports come back
/// in case order whatever the thread count.
pub fn evaluate_cases<F>(cases: &[Case], threads: usize, eval: F) -> Result<Vec<CaseReport>>
where
    F: Fn(&Case) -> Result<CaseReport> + Sync,
{
    let threads = threads.clamp(1, cases.len().max(1));
    if threads == 1 {
        return cases.iter().map(&eval).collect();
    }
    let chunk = cases.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = cases
            .chunks(chunk)
            .map(|part| {
                let eval = &eval;
                scope.spawn(move || part.iter().map(eval).collect::<Result<Vec<_>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(cases.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}
