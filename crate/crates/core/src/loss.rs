//! Training objectives: soft Dice region losses, the spatial containment
//! loss and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ForwardOutputs;
use crate::phantom::{LabelVolume, Region, RegionMasks, ENHANCING, NECROTIC, EDEMA};
use crate::tensor::{add, add_scalar, div, mul, scale, slice_channels, sum, Tensor};

/// Smoothing term added to Dice numerator and denominator and to the
/// containment denominator.
pub const EPSILON: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_wt: f32,
    pub lambda_tc: f32,
    pub lambda_et: f32,
    pub lambda_sc: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_wt: 0.5,
            lambda_tc: 0.6,
            lambda_et: 0.6,
            lambda_sc: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_wt", self.lambda_wt),
            ("lambda_tc", self.lambda_tc),
            ("lambda_et", self.lambda_et),
            ("lambda_sc", self.lambda_sc),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_same(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: prediction {:?} and target {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `1 − (2·Σ p·g + ε) / (Σ p + Σ g + ε)`.
pub fn soft_dice_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    check_same("soft_dice_loss", pred, target)?;
    let intersection = sum(&mul(pred, target)?);
    let numerator = add_scalar(&scale(&intersection, 2.0), EPSILON);
    let target_mass: f64 = target.data().iter().map(|&v| v as f64).sum();
    let denominator = add_scalar(&sum(pred), target_mass as f32 + EPSILON);
    Ok(add_scalar(&scale(&div(&numerator, &denominator)?, -1.0), 1.0))
}

/// Mean soft Dice loss over the three tumor classes of a `4×D×H×W`
/// probability map; background is excluded.
pub fn multiclass_dice_loss(main_probs: &Tensor, labels: &LabelVolume) -> Result<Tensor> {
    let (classes, spatial) = main_probs.dims4()?;
    if classes != crate::phantom::NUM_CLASSES || spatial != labels.extents() {
        return Err(Error::shape(format!(
            "multiclass_dice_loss: probabilities {:?} do not match {}-class labels {:?}",
            main_probs.shape(),
            crate::phantom::NUM_CLASSES,
            labels.extents()
        )));
    }
    let mut total: Option<Tensor> = None;
    for class in [NECROTIC, EDEMA, ENHANCING] {
        let loss = soft_dice_loss(&slice_channels(main_probs, class as usize, 1)?, &labels.indicator(class))?;
        total = Some(match total {
            Some(t) => add(&t, &loss)?,
            None => loss,
        });
    }
    Ok(scale(&total.expect("three classes"), 1.0 / 3.0))
}

/// `1 − Σ(outer·inner) / (Σ inner + ε)`: the fraction of inner mass lying
/// outside the outer region. Zero when `Σ inner < ε`.
pub fn spatial_constraint_loss(outer: &Tensor, inner: &Tensor) -> Result<Tensor> {
    check_same("spatial_constraint_loss", outer, inner)?;
    let inner_mass = sum(inner);
    if (inner_mass.item()? as f64) < EPSILON as f64 {
        return Ok(Tensor::scalar(0.0));
    }
    let overlap = sum(&mul(outer, inner)?);
    let ratio = div(&overlap, &add_scalar(&inner_mass, EPSILON))?;
    Ok(add_scalar(&scale(&ratio, -1.0), 1.0))
}

/// Containment of TC in WT plus containment of ET in TC.
pub fn total_spatial_constraint(wt: &Tensor, tc: &Tensor, et: &Tensor) -> Result<Tensor> {
    add(&spatial_constraint_loss(wt, tc)?, &spatial_constraint_loss(tc, et)?)
}

/// Per-component loss values of one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bt: f64,
    pub wt: f64,
    pub tc: f64,
    pub et: f64,
    pub sc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,loss_bt,loss_wt,loss_tc,loss_et,loss_sc,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{},{}",
            self.bt, self.wt, self.tc, self.et, self.sc, self.total
        )
    }

    /// Re-derives the total from components in f64.
    pub fn recombined(&self, w: &LossWeights) -> f64 {
        self.bt
            + w.lambda_wt as f64 * self.wt
            + w.lambda_tc as f64 * self.tc
            + w.lambda_et as f64 * self.et
            + w.lambda_sc as f64 * self.sc
    }
}

/// The five scalar loss terms as graph nodes.
#[derive(Clone, Debug)]
pub struct LossComponents {
    pub bt: Tensor,
    pub wt: Tensor,
    pub tc: Tensor,
    pub et: Tensor,
    pub sc: Tensor,
}

impl LossComponents {
    /// `bt + λ_wt·wt + λ_tc·tc + λ_et·et + λ_sc·sc`.
    pub fn combine(&self, w: &LossWeights) -> Result<(Tensor, LossBreakdown)> {
        let mut total = self.bt.clone();
        for (term, lambda) in [
            (&self.wt, w.lambda_wt),
            (&self.tc, w.lambda_tc),
            (&self.et, w.lambda_et),
            (&self.sc, w.lambda_sc),
        ] {
            total = add(&total, &scale(term, lambda))?;
        }
        let breakdown = LossBreakdown {
            bt: self.bt.item()? as f64,
            wt: self.wt.item()? as f64,
            tc: self.tc.item()? as f64,
            et: self.et.item()? as f64,
            sc: self.sc.item()? as f64,
            total: total.item()? as f64,
        };
        Ok((total, breakdown))
    }
}

/// Full objective for one patch. Variants without sub-branches contribute
/// zero branch and containment terms.
pub fn total_loss(
    outputs: &ForwardOutputs,
    labels: &LabelVolume,
    regions: &RegionMasks,
    weights: &LossWeights,
) -> Result<(Tensor, LossBreakdown)> {
    weights.validate()?;
    let bt = multiclass_dice_loss(&outputs.main_probs, labels)?;
    let components = match (&outputs.wt_prob, &outputs.tc_prob, &outputs.et_prob) {
        (Some(wt), Some(tc), Some(et)) => LossComponents {
            bt,
            wt: soft_dice_loss(wt, &regions.tensor(Region::WholeTumor))?,
            tc: soft_dice_loss(tc, &regions.tensor(Region::TumorCore))?,
            et: soft_dice_loss(et, &regions.tensor(Region::Enhancing))?,
            sc: total_spatial_constraint(wt, tc, et)?,
        },
        (None, None, None) => LossComponents {
            bt,
            wt: Tensor::scalar(0.0),
            tc: Tensor::scalar(0.0),
            et: Tensor::scalar(0.0),
            sc: Tensor::scalar(0.0),
        },
        _ => return Err(Error::Contract("branch outputs must be all present or all absent".into())),
    };
    components.combine(weights)
}
