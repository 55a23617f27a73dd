//! Tiles a non-cubic volume with tail-aligned windows, reassembles an
//! identity prediction, then segments the volume with an untrained model.
//!
//! cargo run --release --example sliding_window

use mmtsn::infer::predict_volume;
use mmtsn::model::{ModelConfig, ModelGraph, Variant};
use mmtsn::phantom::{generate_phantom, MultiModalVolume};
use mmtsn::pipeline::{extract_patches, reassemble, PatchGrid, ProbVolume};

fn main() -> mmtsn::Result<()> {
    let grid = PatchGrid::new([240, 240, 155], [64, 64, 48])?;
    println!("240×240×155 with 64×64×48 windows: {} origins, last {:?}", grid.len(), grid.origins.last().unwrap());

    let extents = [20, 24, 18];
    let (image, _) = generate_phantom(4, extents)?;
    let grid = PatchGrid::new(extents, [16, 16, 16])?;
    let patches = extract_patches(&image, None, &grid)?;
    let identity: Vec<ProbVolume> = patches
        .iter()
        .map(|p| ProbVolume::new(MultiModalVolume::CHANNELS, p.image.extents(), p.image.data().to_vec()))
        .collect::<mmtsn::Result<_>>()?;
    let back = reassemble(&identity, &grid)?;
    let max_err = back
        .data
        .iter()
        .zip(image.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("{:?} in {} windows, identity reassembly max error {max_err:e}", extents, grid.len());

    let config = ModelConfig { variant: Variant::Mmtsn, depth: 3, base_channels: 4 };
    let graph = ModelGraph::init(config, 1)?;
    let prediction = predict_volume(&graph, &image, [16, 16, 16])?;
    let labels = prediction.labels()?;
    println!(
        "untrained prediction class counts: {:?}",
        (0..4).map(|c| labels.count(c)).collect::<Vec<_>>()
    );
    Ok(())
}
