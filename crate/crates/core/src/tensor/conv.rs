use std::cell::Cell;

use super::{numel, wants, Tensor};
use crate::error::{Error, Result};

thread_local! {
    /// Test fixture: negates the input gradient of every conv on this thread.
    pub(crate) static FLIP_INPUT_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Kernel, bias and geometry of a 3D convolution.
///
/// `kernel` is `OutC×InC×kd×kh×kw`, `bias` is `OutC`.
#[derive(Clone, Debug)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvParams {
    pub fn new(kernel: Tensor, bias: Tensor, stride: [usize; 3], padding: [usize; 3]) -> Result<Self> {
        let ks = kernel.shape();
        if ks.len() != 5 || ks[0] == 0 || ks[1] == 0 || ks[2..].contains(&0) {
            return Err(Error::shape(format!(
                "conv kernel must be OutC×InC×kd×kh×kw with positive extents, got {:?}",
                ks
            )));
        }
        if bias.shape() != [ks[0]] {
            return Err(Error::shape(format!(
                "conv bias must have shape [{}], got {:?}",
                ks[0],
                bias.shape()
            )));
        }
        if stride.contains(&0) {
            return Err(Error::shape("conv stride must be positive"));
        }
        Ok(ConvParams {
            kernel,
            bias,
            stride,
            padding,
        })
    }

    /// Stride 1 with `k/2` padding, which keeps spatial extents unchanged.
    pub fn same(kernel: Tensor, bias: Tensor) -> Result<Self> {
        let ks = kernel.shape().to_vec();
        if ks.len() != 5 || ks[2..].iter().any(|k| k % 2 == 0) {
            return Err(Error::shape(format!(
                "\"same\" convolution needs odd kernel extents, got {:?}",
                ks
            )));
        }
        Self::new(kernel, bias, [1; 3], [ks[2] / 2, ks[3] / 2, ks[4] / 2])
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    fn kernel_extents(&self) -> [usize; 3] {
        let ks = self.kernel.shape();
        [ks[2], ks[3], ks[4]]
    }
}

/// Output positions `o` for which `o*s + k - p` lands inside `0..input`.
fn valid_range(k: usize, pad: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if input + pad > k {
        (input + pad - k).div_ceil(stride).min(output)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[derive(Clone, Copy)]
struct Geometry {
    in_c: usize,
    out_c: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn ranges(&self, kd: usize, kh: usize, kw: usize) -> [(usize, usize); 3] {
        let k = [kd, kh, kw];
        std::array::from_fn(|a| valid_range(k[a], self.pad[a], self.stride[a], self.input[a], self.output[a]))
    }

    #[inline]
    fn in_index(&self, a: usize, o: usize, k: usize) -> usize {
        o * self.stride[a] + k - self.pad[a]
    }
}

/// Visits every (output row, input row) pair touched by kernel tap `(kd, kh, kw)`.
///
/// The callback receives the output row offset, the input row offset, the
/// first valid output column and the number of valid columns.
#[inline]
fn for_each_row(g: &Geometry, kd: usize, kh: usize, kw: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let [(d0, d1), (h0, h1), (w0, w1)] = g.ranges(kd, kh, kw);
    if w1 <= w0 {
        return;
    }
    let [_, oh_n, ow_n] = g.output;
    let [_, ih_n, iw_n] = g.input;
    for od in d0..d1 {
        let id = g.in_index(0, od, kd);
        for oh in h0..h1 {
            let ih = g.in_index(1, oh, kh);
            f((od * oh_n + oh) * ow_n, (id * ih_n + ih) * iw_n, w0, w1 - w0);
        }
    }
}

/// 3D cross-correlation of a `C×D×H×W` input.
///
/// Each output voxel sums over input channel, then kernel depth, height and
/// width, in f64, and adds the bias last.
pub fn conv3d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let (in_c, spatial) = input.dims4()?;
    if in_c != params.in_channels() {
        return Err(Error::shape(format!(
            "conv3d: input has {in_c} channels, kernel expects {}",
            params.in_channels()
        )));
    }
    let kernel = params.kernel_extents();
    let mut output = [0usize; 3];
    for a in 0..3 {
        let padded = spatial[a] + 2 * params.padding[a];
        if padded < kernel[a] {
            return Err(Error::shape(format!(
                "conv3d: kernel {:?} larger than padded input {:?}",
                kernel, spatial
            )));
        }
        output[a] = (padded - kernel[a]) / params.stride[a] + 1;
    }
    let geo = Geometry {
        in_c,
        out_c: params.out_channels(),
        input: spatial,
        output,
        kernel,
        stride: params.stride,
        pad: params.padding,
    };
    let data = forward(&geo, input.data(), params.kernel.data(), params.bias.data());
    Ok(Tensor::from_op(
        "conv3d",
        vec![geo.out_c, output[0], output[1], output[2]],
        data,
        &[input, &params.kernel, &params.bias],
        Box::new(move |args| {
            let x = args.parents[0].data();
            let w = args.parents[1].data();
            let g = args.grad;
            let gx = wants(args, 0).then(|| {
                let mut gx = input_grad(&geo, w, g);
                if FLIP_INPUT_GRAD.with(|f| f.get()) {
                    gx.iter_mut().for_each(|v| *v = -*v);
                }
                gx
            });
            let gw = wants(args, 1).then(|| kernel_grad(&geo, x, g));
            let gb = wants(args, 2).then(|| {
                let n = numel(&geo.output);
                g.chunks(n).map(|c| c.iter().map(|&v| v as f64).sum::<f64>() as f32).collect()
            });
            vec![gx, gw, gb]
        }),
    ))
}

fn forward(g: &Geometry, x: &[f32], w: &[f32], b: &[f32]) -> Vec<f32> {
    let in_vox = numel(&g.input);
    let out_vox = numel(&g.output);
    let taps = numel(&g.kernel);
    let [_, kh_n, kw_n] = g.kernel;
    let sw = g.stride[2];
    let mut out = Vec::with_capacity(g.out_c * out_vox);
    let mut acc = vec![0f64; out_vox];
    for o in 0..g.out_c {
        acc.fill(0.0);
        for c in 0..g.in_c {
            let xc = &x[c * in_vox..(c + 1) * in_vox];
            let wk = &w[(o * g.in_c + c) * taps..(o * g.in_c + c + 1) * taps];
            for (t, &wv) in wk.iter().enumerate() {
                let (kd, kh, kw) = (t / (kh_n * kw_n), (t / kw_n) % kh_n, t % kw_n);
                let wv = wv as f64;
                for_each_row(g, kd, kh, kw, |orow, irow, w0, n| {
                    let dst = &mut acc[orow + w0..orow + w0 + n];
                    let start = irow + w0 * sw + kw - g.pad[2];
                    if sw == 1 {
                        for (a, &v) in dst.iter_mut().zip(&xc[start..start + n]) {
                            *a += wv * v as f64;
                        }
                    } else {
                        for (i, a) in dst.iter_mut().enumerate() {
                            *a += wv * xc[start + i * sw] as f64;
                        }
                    }
                });
            }
        }
        let bias = b[o] as f64;
        out.extend(acc.iter().map(|&a| (a + bias) as f32));
    }
    out
}

fn input_grad(g: &Geometry, w: &[f32], grad: &[f32]) -> Vec<f32> {
    let in_vox = numel(&g.input);
    let out_vox = numel(&g.output);
    let taps = numel(&g.kernel);
    let [_, kh_n, kw_n] = g.kernel;
    let sw = g.stride[2];
    let mut out = Vec::with_capacity(g.in_c * in_vox);
    let mut acc = vec![0f64; in_vox];
    for c in 0..g.in_c {
        acc.fill(0.0);
        for o in 0..g.out_c {
            let go = &grad[o * out_vox..(o + 1) * out_vox];
            let wk = &w[(o * g.in_c + c) * taps..(o * g.in_c + c + 1) * taps];
            for (t, &wv) in wk.iter().enumerate() {
                let (kd, kh, kw) = (t / (kh_n * kw_n), (t / kw_n) % kh_n, t % kw_n);
                let wv = wv as f64;
                for_each_row(g, kd, kh, kw, |orow, irow, w0, n| {
                    let src = &go[orow + w0..orow + w0 + n];
                    let start = irow + w0 * sw + kw - g.pad[2];
                    if sw == 1 {
                        for (a, &v) in acc[start..start + n].iter_mut().zip(src) {
                            *a += wv * v as f64;
                        }
                    } else {
                        for (i, &v) in src.iter().enumerate() {
                            acc[start + i * sw] += wv * v as f64;
                        }
                    }
                });
            }
        }
        out.extend(acc.iter().map(|&a| a as f32));
    }
    out
}

fn kernel_grad(g: &Geometry, x: &[f32], grad: &[f32]) -> Vec<f32> {
    let in_vox = numel(&g.input);
    let out_vox = numel(&g.output);
    let taps = numel(&g.kernel);
    let [_, kh_n, kw_n] = g.kernel;
    let sw = g.stride[2];
    let mut out = vec![0f32; g.out_c * g.in_c * taps];
    for o in 0..g.out_c {
        let go = &grad[o * out_vox..(o + 1) * out_vox];
        for c in 0..g.in_c {
            let xc = &x[c * in_vox..(c + 1) * in_vox];
            for t in 0..taps {
                let (kd, kh, kw) = (t / (kh_n * kw_n), (t / kw_n) % kh_n, t % kw_n);
                let mut acc = 0f64;
                for_each_row(g, kd, kh, kw, |orow, irow, w0, n| {
                    let src = &go[orow + w0..orow + w0 + n];
                    let start = irow + w0 * sw + kw - g.pad[2];
                    if sw == 1 {
                        for (&gv, &xv) in src.iter().zip(&xc[start..start + n]) {
                            acc += gv as f64 * xv as f64;
                        }
                    } else {
                        for (i, &gv) in src.iter().enumerate() {
                            acc += gv as f64 * xc[start + i * sw] as f64;
                        }
                    }
                });
                out[(o * g.in_c + c) * taps + t] = acc as f32;
            }
        }
    }
    out
}
