use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Layer kinds. Activations are per-sample, either `[C, H, W]` maps or flat `[D]` vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    /// `y = W x + b` with `W: [out, in]`.
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    /// 3x3 convolution, zero padding 1. `weight: [out, in, 3, 3]`.
    Conv3x3 {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
    },
    /// 2x2 average pooling with stride 2.
    AvgPool2,
    /// Mean over the spatial dimensions.
    GlobalAvgPool,
    Relu,
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv3x3 { .. } => "conv3x3",
            Layer::AvgPool2 => "avgpool2",
            Layer::GlobalAvgPool => "globalavgpool",
            Layer::Relu => "relu",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv3x3 { weight, bias, .. } => {
                vec![weight, bias]
            }
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv3x3 { weight, bias, .. } => {
                vec![weight, bias]
            }
            _ => Vec::new(),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { weight, bias } => {
                let fan_in: usize = input.iter().product();
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                if inp != fan_in || bias.len() != out {
                    return Err(Error::Shape(format!(
                        "dense layer [{out}, {inp}] cannot take input {input:?}"
                    )));
                }
                Ok(vec![out])
            }
            Layer::Conv3x3 {
                weight,
                bias,
                stride,
            } => {
                let &[c, h, w] = input else {
                    return Err(Error::Shape(format!("conv needs [C,H,W], got {input:?}")));
                };
                let ws = weight.shape();
                if ws[1] != c || ws[2] != 3 || ws[3] != 3 || bias.len() != ws[0] || *stride == 0 {
                    return Err(Error::Shape(format!(
                        "conv weight {ws:?} (stride {stride}) cannot take input {input:?}"
                    )));
                }
                Ok(vec![ws[0], (h - 1) / stride + 1, (w - 1) / stride + 1])
            }
            Layer::AvgPool2 => match input {
                &[c, h, w] if h % 2 == 0 && w % 2 == 0 && h > 0 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(Error::Shape(format!(
                    "avgpool2 cannot take input {input:?}"
                ))),
            },
            Layer::GlobalAvgPool => match input {
                &[c, _, _] => Ok(vec![c]),
                _ => Err(Error::Shape(format!(
                    "global pool cannot take input {input:?}"
                ))),
            },
            Layer::Relu => Ok(input.to_vec()),
        }
    }

    /// Forward pass for one sample.
    pub fn forward(&self, input_shape: &[usize], x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense { weight, bias } => {
                let inp = weight.shape()[1];
                let w = weight.data();
                bias.data()
                    .iter()
                    .enumerate()
                    .map(|(o, b)| b + dot(&w[o * inp..(o + 1) * inp], x))
                    .collect()
            }
            Layer::Conv3x3 {
                weight,
                bias,
                stride,
            } => conv_forward(input_shape, x, weight, bias, *stride),
            Layer::AvgPool2 => {
                let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    let src = &x[ch * h * w..(ch + 1) * h * w];
                    let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
                    for oy in 0..oh {
                        let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
                        let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
                        for ox in 0..ow {
                            dst[oy * ow + ox] =
                                0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
                        }
                    }
                }
                out
            }
            Layer::GlobalAvgPool => {
                let c = input_shape[0];
                let hw = input_shape[1] * input_shape[2];
                (0..c)
                    .map(|ch| x[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
                    .collect()
            }
            Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    /// Backward pass for one sample.
    ///
    /// Accumulates parameter gradients into `grads` (one tensor per entry of
    /// [`Layer::params`]) and returns the gradient with respect to the input when
    /// `need_input_grad` is set.
    pub fn backward(
        &self,
        input_shape: &[usize],
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        grads: &mut [Tensor],
        need_input_grad: bool,
    ) -> Option<Vec<f64>> {
        match self {
            Layer::Dense { weight, .. } => {
                let inp = weight.shape()[1];
                {
                    let gw = grads[0].data_mut();
                    for (o, &g) in dy.iter().enumerate() {
                        if g != 0.0 {
                            axpy(g, x, &mut gw[o * inp..(o + 1) * inp]);
                        }
                    }
                }
                for (gb, g) in grads[1].data_mut().iter_mut().zip(dy) {
                    *gb += g;
                }
                need_input_grad.then(|| {
                    let w = weight.data();
                    let mut dx = vec![0.0; inp];
                    for (o, &g) in dy.iter().enumerate() {
                        if g != 0.0 {
                            axpy(g, &w[o * inp..(o + 1) * inp], &mut dx);
                        }
                    }
                    dx
                })
            }
            Layer::Conv3x3 { weight, stride, .. } => {
                conv_backward(input_shape, x, dy, weight, *stride, grads, need_input_grad)
            }
            Layer::AvgPool2 => need_input_grad.then(|| {
                let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut dx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for iy in 0..h {
                        for ix in 0..w {
                            dx[ch * h * w + iy * w + ix] =
                                0.25 * dy[ch * oh * ow + (iy / 2) * ow + ix / 2];
                        }
                    }
                }
                dx
            }),
            Layer::GlobalAvgPool => need_input_grad.then(|| {
                let c = input_shape[0];
                let hw = input_shape[1] * input_shape[2];
                let mut dx = vec![0.0; c * hw];
                for ch in 0..c {
                    let g = dy[ch] / hw as f64;
                    dx[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v = g);
                }
                dx
            }),
            Layer::Relu => need_input_grad.then(|| {
                y.iter()
                    .zip(dy)
                    .map(|(&out, &g)| if out > 0.0 { g } else { 0.0 })
                    .collect()
            }),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Output columns `ox` whose input column `ox*stride + kx - 1` lies inside `[0, w)`.
#[inline]
fn valid_range(k: usize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    // largest ox with ox*stride + k - 1 <= w - 1
    let hi = if w >= k {
        ((w - k) / stride + 1).min(ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn conv_forward(shape: &[usize], x: &[f64], weight: &Tensor, bias: &Tensor, s: usize) -> Vec<f64> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let oc = weight.shape()[0];
    let (oh, ow) = ((h - 1) / s + 1, (w - 1) / s + 1);
    let wd = weight.data();
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let dst = &mut out[o * oh * ow..(o + 1) * oh * ow];
        dst.iter_mut().for_each(|v| *v = bias.data()[o]);
        for ch in 0..c {
            let src = &x[ch * h * w..(ch + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = wd[((o * c + ch) * 3 + ky) * 3 + kx];
                    let (lo, hi) = valid_range(kx, s, w, ow);
                    for oy in 0..oh {
                        let iy = oy * s + ky;
                        if iy == 0 || iy > h {
                            continue;
                        }
                        let row = &src[(iy - 1) * w..iy * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let off = lo + kx - 1;
                            axpy(wv, &row[off..off + (hi - lo)], &mut drow[lo..hi]);
                        } else {
                            for ox in lo..hi {
                                drow[ox] += wv * row[ox * s + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    shape: &[usize],
    x: &[f64],
    dy: &[f64],
    weight: &Tensor,
    s: usize,
    grads: &mut [Tensor],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let oc = weight.shape()[0];
    let (oh, ow) = ((h - 1) / s + 1, (w - 1) / s + 1);
    let wd = weight.data();
    let mut dx = if need_input_grad {
        vec![0.0; c * h * w]
    } else {
        Vec::new()
    };
    let (gw, gb) = grads.split_at_mut(1);
    let gw = gw[0].data_mut();
    let gb = gb[0].data_mut();
    for o in 0..oc {
        let g = &dy[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += g.iter().sum::<f64>();
        for ch in 0..c {
            let src = &x[ch * h * w..(ch + 1) * h * w];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((o * c + ch) * 3 + ky) * 3 + kx;
                    let wv = wd[widx];
                    let (lo, hi) = valid_range(kx, s, w, ow);
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let iy = oy * s + ky;
                        if iy == 0 || iy > h {
                            continue;
                        }
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let off = lo + kx - 1;
                            let row = &src[(iy - 1) * w + off..(iy - 1) * w + off + (hi - lo)];
                            acc += dot(&grow[lo..hi], row);
                            if need_input_grad {
                                let drow = &mut dx[ch * h * w + (iy - 1) * w + off
                                    ..ch * h * w + (iy - 1) * w + off + (hi - lo)];
                                axpy(wv, &grow[lo..hi], drow);
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = ox * s + kx - 1;
                                acc += grow[ox] * src[(iy - 1) * w + ix];
                                if need_input_grad {
                                    dx[ch * h * w + (iy - 1) * w + ix] += wv * grow[ox];
                                }
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    need_input_grad.then_some(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        shape: &[usize],
        x: &[f64],
        weight: &Tensor,
        bias: &Tensor,
        s: usize,
    ) -> Vec<f64> {
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let oc = weight.shape()[0];
        let (oh, ow) = ((h - 1) / s + 1, (w - 1) / s + 1);
        let mut out = vec![0.0; oc * oh * ow];
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[o];
                    for ch in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * s + ky) as isize - 1;
                                let ix = (ox * s + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weight.data()[((o * c + ch) * 3 + ky) * 3 + kx]
                                    * x[ch * h * w + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out[o * oh * ow + oy * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop() {
        let shape = [2, 5, 6];
        let x: Vec<f64> = (0..60).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let weight = Tensor::from_vec(
            &[3, 2, 3, 3],
            (0..54).map(|i| ((i * 7 % 5) as f64) * 0.1 - 0.2).collect(),
        )
        .unwrap();
        let bias = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        for s in [1, 2, 3] {
            let layer = Layer::Conv3x3 {
                weight: weight.clone(),
                bias: bias.clone(),
                stride: s,
            };
            let fast = layer.forward(&shape, &x);
            let slow = naive_conv(&shape, &x, &weight, &bias, s);
            assert_eq!(
                layer
                    .output_shape(&shape)
                    .unwrap()
                    .iter()
                    .product::<usize>(),
                slow.len()
            );
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "stride {s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn pool_shapes() {
        assert_eq!(
            Layer::AvgPool2.output_shape(&[3, 4, 4]).unwrap(),
            vec![3, 2, 2]
        );
        assert!(Layer::AvgPool2.output_shape(&[3, 5, 4]).is_err());
        assert_eq!(
            Layer::GlobalAvgPool.output_shape(&[7, 4, 4]).unwrap(),
            vec![7]
        );
    }
}
