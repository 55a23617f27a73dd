//! Evaluates one spatial-channel fusion block on random features and shows
//! the channel and spatial attention weights, first with zeroed attention
//! parameters and then with its seeded initial parameters.
//!
//! cargo run --release --example scfb_attention

use mmtsn::model::{scfb_traced, ModelConfig, ModelGraph, ScfbParams, Variant};
use mmtsn::tensor::{ConvParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn zeroed(p: &ConvParams) -> mmtsn::Result<ConvParams> {
    ConvParams::same(Tensor::zeros(p.kernel.shape()), Tensor::zeros(p.bias.shape()))
}

fn summary(name: &str, t: &Tensor) {
    let d = t.data();
    let (lo, hi) = d.iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
    println!("  {name:<16} {:?}  min {lo:.4}  mean {mean:.4}  max {hi:.4}", t.shape());
}

fn main() -> mmtsn::Result<()> {
    let config = ModelConfig { variant: Variant::Mmtsn, depth: 3, base_channels: 8 };
    let graph = ModelGraph::init(config, 3)?;
    let params = graph.scfb_params(0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut feature = || {
        let data = (0..8 * 8 * 8 * 8).map(|_| rng.gen_range(0.0f32..1.0)).collect();
        Tensor::new(&[8, 8, 8, 8], data)
    };
    let (wt, tc, et, bt) = (feature()?, feature()?, feature()?, feature()?);

    let zero = ScfbParams {
        channel_reduce: zeroed(&params.channel_reduce)?,
        channel_expand: zeroed(&params.channel_expand)?,
        spatial: zeroed(&params.spatial)?,
        out: params.out.clone(),
    };
    let t = scfb_traced(&wt, &tc, &et, &bt, &zero)?;
    let sum: Vec<f32> = t.channel_attended.data().iter().zip(t.spatial_attended.data()).map(|(a, b)| a + b).collect();
    println!("zero attention parameters:");
    summary("channel weights", &t.channel_weights);
    summary("spatial weights", &t.spatial_weights);
    println!("  F_c + F_s == F_concat: {}", sum == t.concat.data());

    let t = scfb_traced(&wt, &tc, &et, &bt, &params)?;
    println!("initialized parameters:");
    summary("channel weights", &t.channel_weights);
    summary("spatial weights", &t.spatial_weights);
    summary("output", &t.output);
    Ok(())
}
