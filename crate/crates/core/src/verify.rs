//! The gradient-check suite: every differentiable op, the fusion block and a
//! tiny full model, each compared against central finite differences.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::loss::{multiclass_dice_loss, soft_dice_loss, spatial_constraint_loss, total_loss, LossWeights};
use crate::model::{scfb, ModelConfig, ModelGraph, ScfbParams, Variant};
use crate::phantom::{derive_regions, LabelVolume};
use crate::tensor::gradcheck::{grad_check, grad_check_coords, GradCheckReport};
use crate::tensor::{
    add, add_scalar, concat_channels, conv3d, div, global_avg_pool, max_pool3d, mul, mul_broadcast,
    nearest_upsample, relu, scale, sigmoid, slice_channels, softmax_channels, sub, sum, ConvParams, Tensor,
};

/// Per-op tolerance on the relative error.
pub const OP_TOLERANCE: f64 = 1e-3;
/// Tolerance for the composed tiny model.
pub const MODEL_TOLERANCE: f64 = 1e-2;

const STEP: f32 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Suite {
    rng: ChaCha8Rng,
    checks: Vec<CheckResult>,
}

impl Suite {
    fn record(&mut self, name: &str, tolerance: f64, report: GradCheckReport) {
        self.checks.push(CheckResult {
            name: name.into(),
            max_rel_error: report.max_rel_error,
            tolerance,
            checked: report.checked,
            passed: report.max_rel_error < tolerance,
        });
    }

    fn op<F>(&mut self, name: &str, input: &Tensor, f: F) -> Result<()>
    where
        F: Fn(&Tensor) -> Result<Tensor>,
    {
        let report = grad_check(f, input, STEP)?;
        self.record(name, OP_TOLERANCE, report);
        Ok(())
    }

    fn uniform(&mut self, shape: &[usize], lo: f32, hi: f32) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(lo..hi)).collect();
        Tensor::new(shape, data).expect("length matches shape")
    }

    /// Values bounded away from zero, so ReLU kinks sit outside the stencil.
    fn off_zero(&mut self, shape: &[usize]) -> Tensor {
        let t = self.uniform(shape, 0.05, 1.0);
        let data = t.data().iter().map(|&v| if self.rng.gen_bool(0.5) { v } else { -v }).collect();
        Tensor::new(shape, data).expect("same shape")
    }

    /// Distinct values at least 0.01 apart, so max-pool winners are unambiguous.
    fn distinct(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let mut data: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.01).collect();
        data.shuffle(&mut self.rng);
        Tensor::new(shape, data).expect("length matches shape")
    }

    fn conv(&mut self, in_c: usize, out_c: usize, k: usize) -> ConvParams {
        let std = (2.0 / (in_c * k * k * k) as f32).sqrt();
        ConvParams::same(
            self.uniform(&[out_c, in_c, k, k, k], -std, std),
            self.uniform(&[out_c], -0.1, 0.1),
        )
        .expect("odd kernel")
    }
}

fn with_kernel(p: &ConvParams, kernel: &Tensor) -> ConvParams {
    ConvParams { kernel: kernel.clone(), ..p.clone() }
}

fn with_bias(p: &ConvParams, bias: &Tensor) -> ConvParams {
    ConvParams { bias: bias.clone(), ..p.clone() }
}

/// Runs every check. The composed-model checks use a depth-2, 2-channel
/// network on an 8³ patch.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut s = Suite { rng: ChaCha8Rng::seed_from_u64(seed), checks: Vec::new() };
    elementwise_checks(&mut s)?;
    structural_checks(&mut s)?;
    conv_checks(&mut s)?;
    loss_checks(&mut s)?;
    scfb_checks(&mut s)?;
    model_checks(&mut s)?;
    Ok(SuiteReport { seed, checks: s.checks, elapsed: start.elapsed() })
}

fn elementwise_checks(s: &mut Suite) -> Result<()> {
    let shape = [2, 3, 3, 3];
    let a = s.uniform(&shape, -1.0, 1.0);
    let b = s.uniform(&shape, -1.0, 1.0);
    let positive = s.uniform(&shape, 0.5, 1.5);
    s.op("add", &a, |x| add(x, &b))?;
    s.op("sub", &b, |x| sub(&a, x))?;
    s.op("mul", &a, |x| mul(x, &b))?;
    s.op("div/numerator", &a, |x| div(x, &positive))?;
    s.op("div/denominator", &positive, |x| div(&a, x))?;
    s.op("scale", &a, |x| Ok(scale(x, -2.5)))?;
    s.op("add_scalar", &a, |x| Ok(add_scalar(x, 0.75)))?;
    s.op("sum", &a, |x| Ok(sum(x)))?;
    let kinked = s.off_zero(&shape);
    s.op("relu", &kinked, |x| Ok(relu(x)))?;
    let wide = s.uniform(&shape, -4.0, 4.0);
    s.op("sigmoid", &wide, |x| Ok(sigmoid(x)))?;
    s.op("softmax_channels", &wide, softmax_channels)?;

    let channel = s.uniform(&[2, 1, 1, 1], -1.0, 1.0);
    let spatial = s.uniform(&[1, 3, 3, 3], -1.0, 1.0);
    s.op("mul_broadcast/channel", &channel, |w| mul_broadcast(&a, w))?;
    s.op("mul_broadcast/spatial", &spatial, |w| mul_broadcast(&a, w))?;
    s.op("mul_broadcast/input", &a, |x| mul_broadcast(x, &spatial))?;
    Ok(())
}

fn structural_checks(s: &mut Suite) -> Result<()> {
    let a = s.uniform(&[2, 2, 4, 4], -1.0, 1.0);
    let b = s.uniform(&[3, 2, 4, 4], -1.0, 1.0);
    s.op("concat_channels", &a, |x| concat_channels(&[&b, x, &b]))?;
    s.op("slice_channels", &b, |x| slice_channels(x, 1, 2))?;
    s.op("global_avg_pool", &b, global_avg_pool)?;
    let pooled = s.distinct(&[2, 4, 4, 4]);
    s.op("max_pool3d", &pooled, |x| max_pool3d(x, 2))?;
    s.op("nearest_upsample", &a, |x| nearest_upsample(x, 2))?;
    Ok(())
}

fn conv_checks(s: &mut Suite) -> Result<()> {
    let input = s.uniform(&[2, 4, 4, 4], -1.0, 1.0);
    let p = s.conv(2, 3, 3);
    s.op("conv3d/input", &input, |x| conv3d(x, &p))?;
    s.op("conv3d/kernel", &p.kernel, |k| conv3d(&input, &with_kernel(&p, k)))?;
    s.op("conv3d/bias", &p.bias, |b| conv3d(&input, &with_bias(&p, b)))?;
    let strided = ConvParams::new(p.kernel.clone(), p.bias.clone(), [2, 2, 2], [1, 1, 1])?;
    s.op("conv3d/strided_input", &input, |x| conv3d(x, &strided))?;
    s.op("conv3d/strided_kernel", &p.kernel, |k| conv3d(&input, &with_kernel(&strided, k)))?;
    Ok(())
}

fn loss_checks(s: &mut Suite) -> Result<()> {
    let shape = [1, 3, 3, 3];
    let pred = s.uniform(&shape, 0.05, 0.95);
    let target_data: Vec<f32> = (0..27).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    let target = Tensor::new(&shape, target_data)?;
    s.op("soft_dice_loss", &pred, |p| soft_dice_loss(p, &target))?;
    let inner = s.uniform(&shape, 0.05, 0.95);
    s.op("spatial_constraint/outer", &pred, |o| spatial_constraint_loss(o, &inner))?;
    s.op("spatial_constraint/inner", &inner, |i| spatial_constraint_loss(&pred, i))?;

    let logits = s.uniform(&[4, 3, 3, 3], -2.0, 2.0);
    let labels = LabelVolume::new([3, 3, 3], (0..27).map(|i| (i % 4) as u8).collect())?;
    s.op("multiclass_dice_loss", &logits, |l| multiclass_dice_loss(&softmax_channels(l)?, &labels))?;
    Ok(())
}

fn scfb_checks(s: &mut Suite) -> Result<()> {
    let shape = [2, 4, 4, 4];
    let inputs: Vec<Tensor> = (0..4).map(|_| s.uniform(&shape, -1.0, 1.0)).collect();
    let params = ScfbParams {
        channel_reduce: s.conv(8, 2, 1),
        channel_expand: s.conv(2, 8, 1),
        spatial: s.conv(8, 1, 1),
        out: s.conv(8, 2, 3),
    };
    let run = |xs: &[&Tensor], p: &ScfbParams| scfb(xs[0], xs[1], xs[2], xs[3], p);
    for (i, name) in ["scfb/f_wt", "scfb/f_tc", "scfb/f_et", "scfb/f_bt"].into_iter().enumerate() {
        s.op(name, &inputs[i], |x| {
            let mut xs: Vec<&Tensor> = inputs.iter().collect();
            xs[i] = x;
            run(&xs, &params)
        })?;
    }
    let xs: Vec<&Tensor> = inputs.iter().collect();
    let parts: [(&str, fn(&mut ScfbParams) -> &mut ConvParams); 4] = [
        ("channel_reduce", |p| &mut p.channel_reduce),
        ("channel_expand", |p| &mut p.channel_expand),
        ("spatial", |p| &mut p.spatial),
        ("out", |p| &mut p.out),
    ];
    for (name, field) in parts {
        let mut probe = params.clone();
        let kernel = field(&mut probe).kernel.clone();
        s.op(&format!("scfb/{name}.weight"), &kernel, |k| {
            let mut p = params.clone();
            field(&mut p).kernel = k.clone();
            run(&xs, &p)
        })?;
    }
    Ok(())
}

fn model_checks(s: &mut Suite) -> Result<()> {
    let extents = [8, 8, 8];
    let patch = s.uniform(&[4, 8, 8, 8], -1.0, 1.0);
    let labels = LabelVolume::new(extents, (0..512).map(|_| s.rng.gen_range(0..4u8)).collect())?;
    let regions = derive_regions(&labels)?;
    let weights = LossWeights::default();
    for variant in [Variant::Mmtsn, Variant::UnetPost] {
        let config = ModelConfig { variant, depth: 2, base_channels: 2 };
        let graph = ModelGraph::init(config, s.rng.gen())?;
        let loss_of = |g: &ModelGraph, x: &Tensor| -> Result<Tensor> {
            Ok(total_loss(&g.forward(x)?, &labels, &regions, &weights)?.0)
        };
        let coords: Vec<usize> = (0..24).map(|_| s.rng.gen_range(0..patch.numel())).collect();
        let report = grad_check_coords(|x| loss_of(&graph, x), &patch, STEP, &coords)?;
        s.record(&format!("model/{variant}/input"), MODEL_TOLERANCE, report);

        let names: Vec<String> = graph
            .parameters()
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| n.contains("enc0.conv1") || n.contains("fuse1") || n.contains("head") || n.contains("dec0.conv2"))
            .collect();
        for name in names {
            let p = graph.param(&name)?.detach();
            let coords: Vec<usize> = (0..6).map(|_| s.rng.gen_range(0..p.numel())).collect();
            let report = grad_check_coords(|t| loss_of(&graph.with_param(&name, t.clone())?, &patch), &p, STEP, &coords)?;
            s.record(&format!("model/{variant}/{name}"), MODEL_TOLERANCE, report);
        }
    }
    Ok(())
}
