//! The containment loss on hand-built masks: exact containment, half
//! containment, and the loss rising as inner mass leaks outside.
//!
//! cargo run --release --example spatial_constraint

use mmtsn::loss::{spatial_constraint_loss, total_spatial_constraint};
use mmtsn::metrics::containment_violation;
use mmtsn::tensor::Tensor;

fn mask(values: &[f32]) -> mmtsn::Result<Tensor> {
    Tensor::new(&[1, 1, 1, values.len()], values.to_vec())
}

fn main() -> mmtsn::Result<()> {
    let outer = mask(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0])?;
    let inside = mask(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0])?;
    let half = mask(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0])?;
    println!("contained:      {:.6}", spatial_constraint_loss(&outer, &inside)?.item()?);
    println!("half contained: {:.6}", spatial_constraint_loss(&outer, &half)?.item()?);

    println!("moving inner mass outside, one unit at a time:");
    let mut inner = vec![1.0f32, 1.0, 0.0, 0.0, 0.0, 0.0];
    for step in 0..=2 {
        let soft = spatial_constraint_loss(&outer, &mask(&inner)?)?.item()?;
        let hard = containment_violation(
            &outer.data().iter().map(|&v| v > 0.5).collect::<Vec<_>>(),
            &inner.iter().map(|&v| v > 0.5).collect::<Vec<_>>(),
        )?;
        println!("  moved {step}: soft loss {soft:.6}  thresholded violation {hard:.3}");
        if step < 2 {
            inner[step] = 0.0;
            inner[step + 2] = 1.0;
        }
    }

    let wt = mask(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0])?;
    let tc = mask(&[0.0, 1.0, 1.0, 0.0, 0.0, 0.0])?;
    let et = mask(&[0.0, 0.0, 1.0, 0.0, 0.0, 1.0])?;
    println!("total over WT ⊇ TC ⊇ ET with one stray ET voxel: {:.6}", total_spatial_constraint(&wt, &tc, &et)?.item()?);
    Ok(())
}
