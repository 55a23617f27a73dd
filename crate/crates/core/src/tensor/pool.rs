use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Per-channel spatial mean: `C×D×H×W` → `C×1×1×1`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (channels, spatial) = input.dims4()?;
    let voxels = numel(&spatial);
    if voxels == 0 {
        return Err(Error::shape("global_avg_pool on empty spatial extents"));
    }
    let data = input
        .data()
        .chunks(voxels)
        .map(|c| (c.iter().map(|&v| v as f64).sum::<f64>() / voxels as f64) as f32)
        .collect();
    Ok(Tensor::from_op(
        "global_avg_pool",
        vec![channels, 1, 1, 1],
        data,
        &[input],
        Box::new(move |args| {
            let inv = 1.0 / voxels as f64;
            let g = args
                .grad
                .iter()
                .flat_map(|&g| std::iter::repeat_n((g as f64 * inv) as f32, voxels))
                .collect();
            vec![Some(g)]
        }),
    ))
}

fn pooled_extents(spatial: [usize; 3], factor: usize) -> Result<[usize; 3]> {
    if factor == 0 || spatial.iter().any(|&s| s % factor != 0) {
        return Err(Error::shape(format!(
            "extents {:?} not divisible by pooling factor {factor}",
            spatial
        )));
    }
    Ok(spatial.map(|s| s / factor))
}

/// Non-overlapping `factor³` max pooling. Ties go to the first voxel in
/// row-major window order.
pub fn max_pool3d(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (channels, spatial) = input.dims4()?;
    let out = pooled_extents(spatial, factor)?;
    let [d, h, w] = spatial;
    let [od, oh, ow] = out;
    let x = input.data();
    let mut data = Vec::with_capacity(channels * numel(&out));
    let mut argmax = Vec::with_capacity(channels * numel(&out));
    for c in 0..channels {
        let base = c * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for dz in 0..factor {
                        for dy in 0..factor {
                            for dx in 0..factor {
                                let i = base
                                    + ((z * factor + dz) * h + y * factor + dy) * w
                                    + xx * factor
                                    + dx;
                                if best_i == usize::MAX || x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    data.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    let n = x.len();
    Ok(Tensor::from_op(
        "max_pool3d",
        vec![channels, od, oh, ow],
        data,
        &[input],
        Box::new(move |args| {
            let mut g = vec![0f32; n];
            for (&i, &gv) in argmax.iter().zip(args.grad) {
                g[i] += gv;
            }
            vec![Some(g)]
        }),
    ))
}

/// Nearest-neighbour upsampling by an integer factor along every spatial axis.
pub fn nearest_upsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (channels, [d, h, w]) = input.dims4()?;
    if factor == 0 {
        return Err(Error::shape("upsampling factor must be positive"));
    }
    let [ud, uh, uw] = [d * factor, h * factor, w * factor];
    let x = input.data();
    let mut data = Vec::with_capacity(channels * ud * uh * uw);
    for c in 0..channels {
        for z in 0..ud {
            for y in 0..uh {
                let row = &x[((c * d + z / factor) * h + y / factor) * w..][..w];
                for xx in 0..uw {
                    data.push(row[xx / factor]);
                }
            }
        }
    }
    Ok(Tensor::from_op(
        "nearest_upsample",
        vec![channels, ud, uh, uw],
        data,
        &[input],
        Box::new(move |args| {
            let mut acc = vec![0f64; channels * d * h * w];
            let g = args.grad;
            let mut i = 0;
            for c in 0..channels {
                for z in 0..ud {
                    for y in 0..uh {
                        let row = ((c * d + z / factor) * h + y / factor) * w;
                        for xx in 0..uw {
                            acc[row + xx / factor] += g[i] as f64;
                            i += 1;
                        }
                    }
                }
            }
            vec![Some(acc.into_iter().map(|v| v as f32).collect())]
        }),
    ))
}
