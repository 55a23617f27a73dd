use super::{numel, wants, BackwardArgs, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        "add",
        a.shape().to_vec(),
        data,
        &[a, b],
        Box::new(|args| {
            let g = args.grad;
            vec![
                wants(args, 0).then(|| g.to_vec()),
                wants(args, 1).then(|| g.to_vec()),
            ]
        }),
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        "sub",
        a.shape().to_vec(),
        data,
        &[a, b],
        Box::new(|args| {
            let g = args.grad;
            vec![
                wants(args, 0).then(|| g.to_vec()),
                wants(args, 1).then(|| g.iter().map(|v| -v).collect()),
            ]
        }),
    ))
}

/// Elementwise quotient of equally shaped tensors.
pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("div", a, b)?;
    if b.data().contains(&0.0) {
        return Err(Error::Contract("div: zero divisor".into()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x / y).collect();
    Ok(Tensor::from_op(
        "div",
        a.shape().to_vec(),
        data,
        &[a, b],
        Box::new(|args| {
            let (a, b) = (args.parents[0].data(), args.parents[1].data());
            let g = args.grad;
            vec![
                wants(args, 0).then(|| g.iter().zip(b).map(|(g, y)| g / y).collect()),
                wants(args, 1).then(|| {
                    g.iter()
                        .zip(a.iter().zip(b))
                        .map(|(g, (x, y))| -g * x / (y * y))
                        .collect()
                }),
            ]
        }),
    ))
}

pub fn scale(a: &Tensor, factor: f32) -> Tensor {
    let data = a.data().iter().map(|x| x * factor).collect();
    Tensor::from_op(
        "scale",
        a.shape().to_vec(),
        data,
        &[a],
        Box::new(move |args| vec![Some(args.grad.iter().map(|g| g * factor).collect())]),
    )
}

pub fn add_scalar(a: &Tensor, value: f32) -> Tensor {
    let data = a.data().iter().map(|x| x + value).collect();
    Tensor::from_op(
        "add_scalar",
        a.shape().to_vec(),
        data,
        &[a],
        Box::new(|args| vec![Some(args.grad.to_vec())]),
    )
}

/// Sum of all elements as a scalar (f64 accumulation, row-major order).
pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op(
        "sum",
        Vec::new(),
        vec![total as f32],
        &[a],
        Box::new(|args| vec![Some(vec![args.grad[0]; args.parents[0].numel()])]),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Equal,
    /// `b` is `C×1×1×1`: one weight per channel of `a`.
    Channel,
    /// `b` is `1×D×H×W`: one weight per voxel, shared by every channel of `a`.
    Spatial,
}

fn broadcast_kind(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    if a == b {
        return Some(Broadcast::Equal);
    }
    match (a, b) {
        ([c, _, _, _], [bc, 1, 1, 1]) if c == bc => Some(Broadcast::Channel),
        ([_, d, h, w], [1, bd, bh, bw]) if (d, h, w) == (bd, bh, bw) => Some(Broadcast::Spatial),
        _ => None,
    }
}

/// Elementwise product of equally shaped tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    mul_broadcast(a, b)
}

/// Elementwise product where `b` may also be a channel (`C×1×1×1`) or
/// spatial (`1×D×H×W`) weight map broadcast over `a`.
pub fn mul_broadcast(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let kind = broadcast_kind(a.shape(), b.shape()).ok_or_else(|| {
        Error::shape(format!(
            "mul_broadcast: {:?} cannot be broadcast against {:?}",
            b.shape(),
            a.shape()
        ))
    })?;
    let (channels, voxels) = match kind {
        Broadcast::Equal => (1, a.numel()),
        _ => (a.shape()[0], numel(&a.shape()[1..])),
    };
    let av = a.data();
    let bv = b.data();
    let data: Vec<f32> = match kind {
        Broadcast::Equal => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
        Broadcast::Channel => av
            .chunks(voxels)
            .zip(bv)
            .flat_map(|(chunk, &w)| chunk.iter().map(move |x| x * w))
            .collect(),
        Broadcast::Spatial => av
            .chunks(voxels)
            .flat_map(|chunk| chunk.iter().zip(bv).map(|(x, w)| x * w))
            .collect(),
    };
    Ok(Tensor::from_op(
        "mul_broadcast",
        a.shape().to_vec(),
        data,
        &[a, b],
        Box::new(move |args| {
            let (av, bv) = (args.parents[0].data(), args.parents[1].data());
            let g = args.grad;
            let ga = wants(args, 0).then(|| match kind {
                Broadcast::Equal => g.iter().zip(bv).map(|(g, y)| g * y).collect(),
                Broadcast::Channel => g
                    .chunks(voxels)
                    .zip(bv)
                    .flat_map(|(chunk, &w)| chunk.iter().map(move |g| g * w))
                    .collect(),
                Broadcast::Spatial => g
                    .chunks(voxels)
                    .flat_map(|chunk| chunk.iter().zip(bv).map(|(g, w)| g * w))
                    .collect(),
            });
            let gb = wants(args, 1).then(|| match kind {
                Broadcast::Equal => g.iter().zip(av).map(|(g, x)| g * x).collect(),
                Broadcast::Channel => g
                    .chunks(voxels)
                    .zip(av.chunks(voxels))
                    .map(|(gc, ac)| {
                        gc.iter().zip(ac).map(|(&g, &x)| g as f64 * x as f64).sum::<f64>() as f32
                    })
                    .collect(),
                Broadcast::Spatial => {
                    let mut acc = vec![0f64; voxels];
                    for c in 0..channels {
                        let gc = &g[c * voxels..(c + 1) * voxels];
                        let ac = &av[c * voxels..(c + 1) * voxels];
                        for ((s, &g), &x) in acc.iter_mut().zip(gc).zip(ac) {
                            *s += g as f64 * x as f64;
                        }
                    }
                    acc.into_iter().map(|v| v as f32).collect()
                }
            });
            vec![ga, gb]
        }),
    ))
}

/// `max(0, x)`; the subgradient at 0 is 0.
pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    Tensor::from_op(
        "relu",
        a.shape().to_vec(),
        data,
        &[a],
        Box::new(|args| {
            let x = args.parents[0].data();
            vec![Some(
                args.grad
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            )]
        }),
    )
}

pub(crate) fn stable_sigmoid(x: f32) -> f32 {
    let x = x as f64;
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y as f32
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| stable_sigmoid(x)).collect();
    Tensor::from_op(
        "sigmoid",
        a.shape().to_vec(),
        data,
        &[a],
        Box::new(|args| {
            vec![Some(
                args.grad
                    .iter()
                    .zip(args.parents[0].data())
                    .map(|(&g, &x)| (g as f64 * sigmoid_slope(x)) as f32)
                    .collect(),
            )]
        }),
    )
}

/// `σ'(x) = e^{−|x|} / (1 + e^{−|x|})²`, evaluated from the input so that it
/// stays nonzero where `σ(x)` has rounded to 1 in f32.
fn sigmoid_slope(x: f32) -> f64 {
    let e = (-(x as f64).abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Per-voxel softmax across the channel axis of a `C×D×H×W` tensor.
pub fn softmax_channels(a: &Tensor) -> Result<Tensor> {
    let (channels, spatial) = a.dims4()?;
    if channels < 2 {
        return Err(Error::shape(format!("softmax_channels needs C ≥ 2, got {channels}")));
    }
    let voxels = numel(&spatial);
    let x = a.data();
    let mut data = vec![0f32; x.len()];
    let mut exps = vec![0f64; channels];
    for v in 0..voxels {
        let max = (0..channels).map(|c| x[c * voxels + v]).fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0f64;
        for (c, e) in exps.iter_mut().enumerate() {
            *e = ((x[c * voxels + v] - max) as f64).exp();
            total += *e;
        }
        for (c, e) in exps.iter().enumerate() {
            data[c * voxels + v] = (e / total) as f32;
        }
    }
    Ok(Tensor::from_op(
        "softmax_channels",
        a.shape().to_vec(),
        data,
        &[a],
        Box::new(move |args| {
            let (y, g) = (args.output, args.grad);
            let mut out = vec![0f32; y.len()];
            for v in 0..voxels {
                let dot: f64 = (0..channels)
                    .map(|c| g[c * voxels + v] as f64 * y[c * voxels + v] as f64)
                    .sum();
                for c in 0..channels {
                    let i = c * voxels + v;
                    out[i] = (y[i] as f64 * (g[i] as f64 - dot)) as f32;
                }
            }
            vec![Some(out)]
        }),
    ))
}

/// Stacks `C_i×D×H×W` tensors along the channel axis.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.len() < 2 {
        return Err(Error::shape("concat_channels needs at least two inputs"));
    }
    let (_, spatial) = inputs[0].dims4()?;
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let (c, s) = t.dims4()?;
        if s != spatial {
            return Err(Error::shape(format!(
                "concat_channels: spatial extents {:?} and {:?} differ",
                spatial, s
            )));
        }
        channels.push(c);
    }
    let voxels = numel(&spatial);
    let total: usize = channels.iter().sum();
    let mut data = Vec::with_capacity(total * voxels);
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_op(
        "concat_channels",
        vec![total, spatial[0], spatial[1], spatial[2]],
        data,
        inputs,
        Box::new(move |args| {
            let mut offset = 0;
            channels
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let len = c * voxels;
                    let slice = wants(args, i).then(|| args.grad[offset..offset + len].to_vec());
                    offset += len;
                    slice
                })
                .collect()
        }),
    ))
}

/// Channels `start..start + len` of a `C×D×H×W` tensor.
pub fn slice_channels(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (channels, spatial) = a.dims4()?;
    if len == 0 || start + len > channels {
        return Err(Error::shape(format!(
            "slice_channels: {start}..{} out of range for {channels} channels",
            start + len
        )));
    }
    let voxels = numel(&spatial);
    let data = a.data()[start * voxels..(start + len) * voxels].to_vec();
    Ok(Tensor::from_op(
        "slice_channels",
        vec![len, spatial[0], spatial[1], spatial[2]],
        data,
        &[a],
        Box::new(move |args: &BackwardArgs<'_>| {
            let mut g = vec![0f32; channels * voxels];
            g[start * voxels..(start + len) * voxels].copy_from_slice(args.grad);
            vec![Some(g)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn relu_values_and_zero_subgradient() {
        let x = Tensor::param(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_is_flat() {
        let x = Tensor::param(&[4], vec![-0.5, -1.0, -2.0, -3.0]).unwrap();
        let y = relu(&x);
        assert!(y.data().iter().all(|&v| v == 0.0));
        sum(&y).backward().unwrap();
        assert!(x.grad().unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sigmoid_gradient_survives_saturation() {
        let x = Tensor::param(&[2], vec![30.0, -30.0]).unwrap();
        sum(&sigmoid(&x)).backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(sigmoid(&x).data()[0], 1.0);
        assert!(g[0] > 0.0 && g[1] > 0.0);
        assert!((g[0] as f64 - (-30f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn sigmoid_is_stable() {
        let y = sigmoid(&t(&[4], vec![0.0, -1000.0, 1000.0, -90.0]));
        assert_eq!(y.data()[0], 0.5);
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert_eq!(y.data()[1], 0.0);
        assert_eq!(y.data()[2], 1.0);
    }

    #[test]
    fn sigmoid_open_interval_for_moderate_inputs() {
        let y = sigmoid(&t(&[3], vec![-15.0, 0.3, 15.0]));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        let x = t(&[4, 1, 1, 2], vec![1.0, 0.3, 1.0, -2.0, 1.0, 0.5, 1.0, 4.0]);
        let y = softmax_channels(&x).unwrap();
        for c in 0..4 {
            assert!((y.data()[c * 2] - 0.25).abs() < 1e-7);
        }
        let shifted = add_scalar(&x, 7.5);
        let ys = softmax_channels(&shifted).unwrap();
        for (a, b) in y.data().iter().zip(ys.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let s: f32 = (0..4).map(|c| y.data()[c * 2 + 1]).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_rejects_single_channel() {
        assert!(softmax_channels(&Tensor::zeros(&[1, 2, 2, 2])).is_err());
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let s = [2, 2, 2];
        let parts: Vec<Tensor> = [1usize, 1, 1, 2]
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let n = c * 8;
                t(&[c, s[0], s[1], s[2]], (0..n).map(|v| (v + 100 * i) as f32 * 0.37).collect())
            })
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let cat = concat_channels(&refs).unwrap();
        assert_eq!(cat.shape(), &[5, 2, 2, 2]);
        let mut start = 0;
        for p in &parts {
            let c = p.shape()[0];
            let back = slice_channels(&cat, start, c).unwrap();
            assert_eq!(back.data(), p.data());
            start += c;
        }
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros(&[1, 2, 2, 2]);
        let b = Tensor::zeros(&[1, 2, 2, 3]);
        assert!(matches!(concat_channels(&[&a, &b]), Err(Error::Shape(_))));
    }

    #[test]
    fn mul_broadcast_patterns() {
        let a = t(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let ones = Tensor::full(&[2, 1, 1, 2], 1.0);
        assert_eq!(mul_broadcast(&a, &ones).unwrap().data(), a.data());
        let w = t(&[2, 1, 1, 1], vec![0.5, 1.0]);
        assert_eq!(mul_broadcast(&a, &w).unwrap().data(), &[0.5, 1.0, 3.0, 4.0]);
        let s = t(&[1, 1, 1, 2], vec![2.0, 0.0]);
        assert_eq!(mul_broadcast(&a, &s).unwrap().data(), &[2.0, 0.0, 6.0, 0.0]);
        let bad = Tensor::zeros(&[2, 1, 2, 1]);
        assert!(matches!(mul_broadcast(&a, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn add_identities() {
        let a = t(&[3], vec![1.5, -2.0, 0.25]);
        assert_eq!(add(&a, &Tensor::zeros(&[3])).unwrap().data(), a.data());
        assert_eq!(add(&a, &a).unwrap().data(), scale(&a, 2.0).data());
        assert!(add(&a, &Tensor::zeros(&[4])).is_err());
    }
}
