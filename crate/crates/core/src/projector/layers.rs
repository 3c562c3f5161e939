/// Channel-major activation of shape `channels x len`. Dense vectors use
/// `len == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub len: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, len: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            channels * len,
            "tensor data does not match shape"
        );
        Tensor {
            channels,
            len,
            data,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            channels: data.len(),
            len: 1,
            data,
        }
    }

    fn zeros(channels: usize, len: usize) -> Self {
        Tensor {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    #[inline]
    fn at(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.len + t]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `weight` is `outputs x inputs`, row-major.
    Linear {
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    /// Valid (unpadded) stride-1 convolution; `weight` is
    /// `out_channels x in_channels x kernel`.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Relu,
    /// Non-overlapping max over `size` frames; a trailing remainder is dropped.
    MaxPool1d {
        size: usize,
    },
    GlobalAvgPool,
}

impl Layer {
    pub fn n_parameters(&self) -> usize {
        self.params().map_or(0, |(w, b)| w.len() + b.len())
    }

    pub(crate) fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Linear { weight, bias, .. } | Layer::Conv1d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub(crate) fn params_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Linear { weight, bias, .. } | Layer::Conv1d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub(crate) fn output_len(&self, len: usize) -> Option<usize> {
        let out = match self {
            Layer::Linear { .. } => (len == 1).then_some(1)?,
            Layer::Conv1d { kernel, .. } => len.checked_sub(*kernel)? + 1,
            Layer::Relu => len,
            Layer::MaxPool1d { size } => len / size,
            Layer::GlobalAvgPool => (len > 0).then_some(1)?,
        };
        (out > 0).then_some(out)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Linear {
                inputs,
                outputs,
                weight,
                bias,
            } => {
                debug_assert_eq!(x.data.len(), *inputs);
                let data = (0..*outputs)
                    .map(|o| {
                        let row = &weight[o * inputs..(o + 1) * inputs];
                        bias[o] + row.iter().zip(&x.data).map(|(w, v)| w * v).sum::<f64>()
                    })
                    .collect();
                Tensor::vector(data)
            }
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                weight,
                bias,
            } => {
                let out_len = x.len + 1 - kernel;
                let mut y = Tensor::zeros(*out_channels, out_len);
                for o in 0..*out_channels {
                    let dst = &mut y.data[o * out_len..(o + 1) * out_len];
                    dst.iter_mut().for_each(|v| *v = bias[o]);
                    for c in 0..*in_channels {
                        let src = &x.data[c * x.len..(c + 1) * x.len];
                        for j in 0..*kernel {
                            let w = weight[(o * in_channels + c) * kernel + j];
                            for (t, d) in dst.iter_mut().enumerate() {
                                *d += w * src[t + j];
                            }
                        }
                    }
                }
                y
            }
            Layer::Relu => Tensor {
                channels: x.channels,
                len: x.len,
                data: x.data.iter().map(|&v| v.max(0.0)).collect(),
            },
            Layer::MaxPool1d { size } => {
                let out_len = x.len / size;
                let mut y = Tensor::zeros(x.channels, out_len);
                for c in 0..x.channels {
                    for t in 0..out_len {
                        y.data[c * out_len + t] = (0..*size)
                            .map(|j| x.at(c, t * size + j))
                            .fold(f64::NEG_INFINITY, f64::max);
                    }
                }
                y
            }
            Layer::GlobalAvgPool => Tensor::vector(
                (0..x.channels)
                    .map(|c| x.data[c * x.len..(c + 1) * x.len].iter().sum::<f64>() / x.len as f64)
                    .collect(),
            ),
        }
    }

    /// Given the layer input `x` and the loss gradient `dy` w.r.t. its output,
    /// add parameter gradients into `grad` (weights then biases) and return the
    /// gradient w.r.t. `x`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut [f64]) -> Tensor {
        match self {
            Layer::Linear {
                inputs,
                outputs,
                weight,
                ..
            } => {
                let (gw, gb) = grad.split_at_mut(inputs * outputs);
                let mut dx = vec![0.0; *inputs];
                for o in 0..*outputs {
                    let g = dy.data[o];
                    gb[o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    let row = &weight[o * inputs..(o + 1) * inputs];
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for i in 0..*inputs {
                        grow[i] += g * x.data[i];
                        dx[i] += row[i] * g;
                    }
                }
                Tensor {
                    channels: x.channels,
                    len: x.len,
                    data: dx,
                }
            }
            Layer::Conv1d {
                in_channels,
                out_channels,
                kernel,
                weight,
                ..
            } => {
                let out_len = dy.len;
                let (gw, gb) = grad.split_at_mut(out_channels * in_channels * kernel);
                let mut dx = Tensor::zeros(x.channels, x.len);
                for (o, gb_o) in gb.iter_mut().enumerate() {
                    let g = &dy.data[o * out_len..(o + 1) * out_len];
                    *gb_o += g.iter().sum::<f64>();
                    for c in 0..*in_channels {
                        let src = &x.data[c * x.len..(c + 1) * x.len];
                        let dst = &mut dx.data[c * x.len..(c + 1) * x.len];
                        for j in 0..*kernel {
                            let wi = (o * in_channels + c) * kernel + j;
                            let w = weight[wi];
                            let mut acc = 0.0;
                            for t in 0..out_len {
                                acc += g[t] * src[t + j];
                                dst[t + j] += w * g[t];
                            }
                            gw[wi] += acc;
                        }
                    }
                }
                dx
            }
            Layer::Relu => Tensor {
                channels: x.channels,
                len: x.len,
                data: x
                    .data
                    .iter()
                    .zip(&dy.data)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
            },
            Layer::MaxPool1d { size } => {
                let mut dx = Tensor::zeros(x.channels, x.len);
                for c in 0..x.channels {
                    for t in 0..dy.len {
                        let mut best = t * size;
                        for j in 1..*size {
                            if x.at(c, t * size + j) > x.at(c, best) {
                                best = t * size + j;
                            }
                        }
                        dx.data[c * x.len + best] += dy.data[c * dy.len + t];
                    }
                }
                dx
            }
            Layer::GlobalAvgPool => {
                let mut dx = Tensor::zeros(x.channels, x.len);
                for c in 0..x.channels {
                    let g = dy.data[c] / x.len as f64;
                    dx.data[c * x.len..(c + 1) * x.len]
                        .iter_mut()
                        .for_each(|v| *v = g);
                }
                dx
            }
        }
    }
}
