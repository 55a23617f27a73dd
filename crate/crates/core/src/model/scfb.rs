//! Spatial-channel fusion block.
//!
//! ```text
//! F_concat = concat(F_wt, F_tc, F_et, F_bt)
//! W_c      = sigmoid(k1(relu(k1(avgpool(F_concat)))))    C×1×1×1
//! W_s      = sigmoid(k1(F_concat))                       1×D×H×W
//! F_out    = relu(k3(W_c ⊙ F_concat + W_s ⊙ F_concat))
//! ```

use crate::error::Result;
use crate::tensor::{
    add, concat_channels, conv3d, global_avg_pool, mul_broadcast, relu, sigmoid, ConvParams, Tensor,
};

/// The four convolutions of one fusion block.
#[derive(Clone, Debug)]
pub struct ScfbParams {
    /// 1×1×1, `C → C/4`
    pub channel_reduce: ConvParams,
    /// 1×1×1, `C/4 → C`
    pub channel_expand: ConvParams,
    /// 1×1×1, `C → 1`
    pub spatial: ConvParams,
    /// 3×3×3, `C → C_out`
    pub out: ConvParams,
}

/// Every intermediate of a fusion block evaluation.
#[derive(Clone, Debug)]
pub struct ScfbTrace {
    pub concat: Tensor,
    pub channel_weights: Tensor,
    pub spatial_weights: Tensor,
    pub channel_attended: Tensor,
    pub spatial_attended: Tensor,
    pub output: Tensor,
}

pub fn scfb_traced(
    f_wt: &Tensor,
    f_tc: &Tensor,
    f_et: &Tensor,
    f_bt: &Tensor,
    params: &ScfbParams,
) -> Result<ScfbTrace> {
    let concat = concat_channels(&[f_wt, f_tc, f_et, f_bt])?;

    let pooled = global_avg_pool(&concat)?;
    let hidden = relu(&conv3d(&pooled, &params.channel_reduce)?);
    let channel_weights = sigmoid(&conv3d(&hidden, &params.channel_expand)?);
    let channel_attended = mul_broadcast(&concat, &channel_weights)?;

    let spatial_weights = sigmoid(&conv3d(&concat, &params.spatial)?);
    let spatial_attended = mul_broadcast(&concat, &spatial_weights)?;

    let combined = add(&channel_attended, &spatial_attended)?;
    let output = relu(&conv3d(&combined, &params.out)?);
    Ok(ScfbTrace {
        concat,
        channel_weights,
        spatial_weights,
        channel_attended,
        spatial_attended,
        output,
    })
}

pub fn scfb(f_wt: &Tensor, f_tc: &Tensor, f_et: &Tensor, f_bt: &Tensor, params: &ScfbParams) -> Result<Tensor> {
    scfb_traced(f_wt, f_tc, f_et, f_bt, params).map(|t| t.output)
}
