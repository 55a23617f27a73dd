use super::{scfb, ModelGraph, Variant};
use crate::error::{Error, Result};
use crate::tensor::{
    add, concat_channels, conv3d, max_pool3d, nearest_upsample, relu, sigmoid, slice_channels,
    softmax_channels, Tensor,
};

/// Network outputs for one `4×D×H×W` patch.
#[derive(Clone, Debug)]
pub struct ForwardOutputs {
    /// `4×D×H×W` class probabilities (softmax).
    pub main_probs: Tensor,
    /// `1×D×H×W` region probabilities from the sub-branches; `None` for the U-Net baselines.
    pub wt_prob: Option<Tensor>,
    pub tc_prob: Option<Tensor>,
    pub et_prob: Option<Tensor>,
}

impl ModelGraph {
    fn conv_relu(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        Ok(relu(&conv3d(x, &self.conv_params(name)?)?))
    }

    fn conv_block(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let h = self.conv_relu(x, &format!("{name}.conv1"))?;
        self.conv_relu(&h, &format!("{name}.conv2"))
    }

    /// Encoder features of branch `prefix`, finest scale first.
    fn encode(&self, prefix: &str, input: &Tensor) -> Result<Vec<Tensor>> {
        let mut features: Vec<Tensor> = Vec::with_capacity(self.config.depth);
        for l in 0..self.config.depth {
            let x = match features.last() {
                Some(prev) => max_pool3d(prev, 2)?,
                None => input.clone(),
            };
            features.push(self.conv_block(&x, &format!("{prefix}.enc{l}"))?);
        }
        Ok(features)
    }

    /// Decoder from the coarsest feature back to head logits.
    fn decode(&self, prefix: &str, skips: &[Tensor]) -> Result<Tensor> {
        let depth = self.config.depth;
        let mut x = skips[depth - 1].clone();
        for l in (0..depth - 1).rev() {
            let up = nearest_upsample(&x, 2)?;
            let cat = concat_channels(&[&up, &skips[l]])?;
            x = self.conv_block(&cat, &format!("{prefix}.dec{l}"))?;
        }
        conv3d(&x, &self.conv_params(&format!("{prefix}.head"))?)
    }

    fn check_patch(&self, patch: &Tensor) -> Result<()> {
        let (c, spatial) = patch.dims4()?;
        if c != 4 {
            return Err(Error::shape(format!("patch must have 4 modality channels, got {c}")));
        }
        let m = self.config.extent_multiple();
        if spatial.iter().any(|&s| s == 0 || s % m != 0) {
            return Err(Error::shape(format!(
                "patch extents {:?} must be positive multiples of {m} for depth {}",
                spatial, self.config.depth
            )));
        }
        Ok(())
    }

    /// Runs whichever topology this graph was built for.
    pub fn forward(&self, patch: &Tensor) -> Result<ForwardOutputs> {
        match self.config.variant {
            Variant::Mmtsn => self.forward_mmtsn(patch),
            _ => self.forward_baseline(patch),
        }
    }

    pub fn forward_mmtsn(&self, patch: &Tensor) -> Result<ForwardOutputs> {
        if self.config.variant != Variant::Mmtsn {
            return Err(Error::Contract(format!(
                "forward_mmtsn called on a {} graph",
                self.config.variant
            )));
        }
        self.forward_branched(patch)
    }

    pub fn forward_baseline(&self, patch: &Tensor) -> Result<ForwardOutputs> {
        match self.config.variant {
            Variant::Mmtsn => Err(Error::Contract("forward_baseline called on an mmtsn graph".into())),
            Variant::MmtsnNoScfb => self.forward_branched(patch),
            Variant::UnetPre => {
                self.check_patch(patch)?;
                let logits = self.decode("bt", &self.encode("bt", patch)?)?;
                Ok(ForwardOutputs {
                    main_probs: softmax_channels(&logits)?,
                    wt_prob: None,
                    tc_prob: None,
                    et_prob: None,
                })
            }
            Variant::UnetPost => {
                self.check_patch(patch)?;
                let mut total: Option<Tensor> = None;
                for (i, name) in ["t1", "t1c", "t2", "flair"].iter().enumerate() {
                    let input = slice_channels(patch, i, 1)?;
                    let logits = self.decode(name, &self.encode(name, &input)?)?;
                    total = Some(match total {
                        Some(t) => add(&t, &logits)?,
                        None => logits,
                    });
                }
                Ok(ForwardOutputs {
                    main_probs: softmax_channels(&total.expect("four branches"))?,
                    wt_prob: None,
                    tc_prob: None,
                    et_prob: None,
                })
            }
        }
    }

    /// Sub-branches plus the fused main branch (MMTSN and its no-SCFB ablation).
    fn forward_branched(&self, patch: &Tensor) -> Result<ForwardOutputs> {
        self.check_patch(patch)?;
        // channel order T1, T1c, T2, Flair
        let wt_in = slice_channels(patch, 2, 2)?;
        let tc_in = slice_channels(patch, 0, 2)?;
        let et_in = slice_channels(patch, 1, 1)?;
        let wt_enc = self.encode("wt", &wt_in)?;
        let tc_enc = self.encode("tc", &tc_in)?;
        let et_enc = self.encode("et", &et_in)?;
        let wt_prob = sigmoid(&self.decode("wt", &wt_enc)?);
        let tc_prob = sigmoid(&self.decode("tc", &tc_enc)?);
        let et_prob = sigmoid(&self.decode("et", &et_enc)?);

        let mut fused: Vec<Tensor> = Vec::with_capacity(self.config.depth);
        for l in 0..self.config.depth {
            let x = match fused.last() {
                Some(prev) => max_pool3d(prev, 2)?,
                None => patch.clone(),
            };
            let f_bt = self.conv_block(&x, &format!("bt.enc{l}"))?;
            let out = match self.config.variant {
                Variant::Mmtsn => scfb(&wt_enc[l], &tc_enc[l], &et_enc[l], &f_bt, &self.scfb_params(l)?)?,
                _ => {
                    let cat = concat_channels(&[&wt_enc[l], &tc_enc[l], &et_enc[l], &f_bt])?;
                    self.conv_relu(&cat, &format!("bt.fuse{l}.out"))?
                }
            };
            fused.push(out);
        }
        let logits = self.decode("bt", &fused)?;
        Ok(ForwardOutputs {
            main_probs: softmax_channels(&logits)?,
            wt_prob: Some(wt_prob),
            tc_prob: Some(tc_prob),
            et_prob: Some(et_prob),
        })
    }
}
