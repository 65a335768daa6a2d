//! Inference engine for small feed-forward convolutional networks.
//!
//! Images are channel-first (`[C, H, W]`). Neurons live in `conv2d` and
//! `dense` layers only: a dense unit is one neuron, and a conv output channel
//! is one neuron whose activation is the spatial mean of its feature map. When
//! a neuron-bearing layer is followed directly by `relu`, activations are read
//! after the nonlinearity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FuzzError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding so that the output extent is `ceil(in / stride)`.
    Same,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        /// `[out_channels, in_channels, kernel_h, kernel_w]`
        weight: Tensor,
        bias: Vec<f32>,
        stride: usize,
        padding: Padding,
    },
    Dense {
        /// `[out, in]`
        weight: Tensor,
        bias: Vec<f32>,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Flatten,
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::Flatten => "flatten",
            Layer::Softmax => "softmax",
        }
    }

    pub fn is_neuron_bearing(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv2d { weight, bias, .. } | Layer::Dense { weight, bias } => {
                weight.len() + bias.len()
            }
            _ => 0,
        }
    }

    /// Output shape for `input`, or a shape-mismatch error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let [out_c, in_c, kh, kw] = dims4(weight.shape())?;
                if bias.len() != out_c {
                    return Err(FuzzError::ShapeMismatch(format!(
                        "conv2d bias length {} != out channels {out_c}",
                        bias.len()
                    )));
                }
                if *stride == 0 {
                    return Err(FuzzError::ShapeMismatch("conv2d stride is 0".into()));
                }
                let [c, h, w] = dims3(input)?;
                if c != in_c {
                    return Err(FuzzError::ShapeMismatch(format!(
                        "conv2d expects {in_c} input channels, got {c}"
                    )));
                }
                let oh = conv_extent(h, kh, *stride, *padding)?;
                let ow = conv_extent(w, kw, *stride, *padding)?;
                Ok(vec![out_c, oh, ow])
            }
            Layer::Dense { weight, bias } => {
                let (out, inp) = match weight.shape() {
                    [o, i] => (*o, *i),
                    s => {
                        return Err(FuzzError::ShapeMismatch(format!(
                            "dense weight must be 2-d, got {s:?}"
                        )))
                    }
                };
                if bias.len() != out {
                    return Err(FuzzError::ShapeMismatch(format!(
                        "dense bias length {} != out {out}",
                        bias.len()
                    )));
                }
                if input != [inp] {
                    return Err(FuzzError::ShapeMismatch(format!(
                        "dense expects input [{inp}], got {input:?}"
                    )));
                }
                Ok(vec![out])
            }
            Layer::MaxPool2d { window, stride } => {
                let [c, h, w] = dims3(input)?;
                if *window == 0 || *stride == 0 || *window > h || *window > w {
                    return Err(FuzzError::ShapeMismatch(format!(
                        "maxpool2d window {window}/stride {stride} on {h}x{w}"
                    )));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Relu | Layer::Softmax => Ok(input.to_vec()),
        }
    }

    fn apply(&self, input: &Tensor) -> Tensor {
        match self {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => conv2d(input, weight, bias, *stride, *padding),
            Layer::Dense { weight, bias } => dense(input, weight, bias),
            Layer::Relu => {
                let data = input.data().iter().map(|v| v.max(0.0)).collect();
                Tensor::new(input.shape().to_vec(), data).expect("same shape")
            }
            Layer::MaxPool2d { window, stride } => maxpool2d(input, *window, *stride),
            Layer::Flatten => input.clone().reshape(vec![input.len()]).expect("same len"),
            Layer::Softmax => {
                let max = input.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let exps: Vec<f32> = input.data().iter().map(|v| (v - max).exp()).collect();
                let sum: f32 = exps.iter().sum();
                let data = exps.into_iter().map(|e| e / sum).collect();
                Tensor::new(input.shape().to_vec(), data).expect("same shape")
            }
        }
    }
}

fn dims3(shape: &[usize]) -> Result<[usize; 3]> {
    shape
        .try_into()
        .map_err(|_| FuzzError::ShapeMismatch(format!("expected [C, H, W], got {shape:?}")))
}

fn dims4(shape: &[usize]) -> Result<[usize; 4]> {
    shape.try_into().map_err(|_| {
        FuzzError::ShapeMismatch(format!("conv2d weight must be 4-d, got {shape:?}"))
    })
}

fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<usize> {
    match padding {
        Padding::Valid => {
            if kernel == 0 || kernel > input {
                return Err(FuzzError::ShapeMismatch(format!(
                    "kernel {kernel} does not fit input extent {input}"
                )));
            }
            Ok((input - kernel) / stride + 1)
        }
        Padding::Same => Ok(input.div_ceil(stride)),
    }
}

/// Leading zero padding for `Padding::Same`, split the same way Keras does.
fn same_pad(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

fn conv2d(input: &Tensor, weight: &Tensor, bias: &[f32], stride: usize, padding: Padding) -> Tensor {
    let (ic_n, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ws = weight.shape();
    let (oc_n, kh_n, kw_n) = (ws[0], ws[2], ws[3]);
    let oh_n = conv_extent(h, kh_n, stride, padding).expect("validated");
    let ow_n = conv_extent(w, kw_n, stride, padding).expect("validated");
    let (pad_h, pad_w) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => (same_pad(h, kh_n, stride), same_pad(w, kw_n, stride)),
    };
    let x = input.data();
    let wt = weight.data();
    let mut out = vec![0.0f32; oc_n * oh_n * ow_n];
    for (oc, plane) in out.chunks_mut(oh_n * ow_n).enumerate() {
        plane.fill(bias[oc]);
        for ic in 0..ic_n {
            let src = &x[ic * h * w..(ic + 1) * h * w];
            for ky in 0..kh_n {
                for kx in 0..kw_n {
                    let wv = wt[((oc * ic_n + ic) * kh_n + ky) * kw_n + kx];
                    for oy in 0..oh_n {
                        let iy = (oy * stride + ky) as isize - pad_h as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[oy * ow_n..(oy + 1) * ow_n];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad_w as isize;
                            if ix >= 0 && ix < w as isize {
                                *d += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oc_n, oh_n, ow_n], out).expect("conv output shape")
}

fn dense(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Tensor {
    let inp = weight.shape()[1];
    let x = input.data();
    let out: Vec<f32> = weight
        .data()
        .chunks(inp)
        .zip(bias)
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>())
        .collect();
    let n = out.len();
    Tensor::new(vec![n], out).expect("dense output shape")
}

fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..window {
                    let row = (oy * stride + ky) * w;
                    for kx in 0..window {
                        m = m.max(plane[row + ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("pool output shape")
}

/// Stable neuron identity: (model layer index, channel-or-unit index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub unit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct NeuronLayer {
    layer: usize,
    /// Layer whose output is sampled (the following relu, if any).
    read_after: usize,
    units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    /// One vector per neuron-bearing layer, in layer order.
    pub layers: Vec<Vec<f32>>,
    /// Input to the final classification layer.
    pub penultimate: Vec<f32>,
    pub logits: Vec<f32>,
    pub predicted_label: usize,
}

impl ActivationRecord {
    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Activations flattened in neuron-enumeration order.
    pub fn flat(&self) -> impl Iterator<Item = f32> + '_ {
        self.layers.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    name: String,
    input_shape: Vec<usize>,
    label_count: usize,
    layers: Vec<Layer>,
    neuron_layers: Vec<NeuronLayer>,
    classifier: usize,
}

impl Model {
    /// Validates the layer chain and builds the neuron enumeration.
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        label_count: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(FuzzError::EmptyModel);
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| FuzzError::ShapeMismatch(format!("layer {i} ({}): {e}", layer.kind())))?;
        }
        let classifier = layers
            .iter()
            .rposition(|l| matches!(l, Layer::Dense { .. }))
            .ok_or_else(|| FuzzError::ShapeMismatch("model has no dense classification layer".into()))?;
        let logits_len = match &layers[classifier] {
            Layer::Dense { bias, .. } => bias.len(),
            _ => unreachable!(),
        };
        if logits_len != label_count {
            return Err(FuzzError::ShapeMismatch(format!(
                "classifier has {logits_len} outputs but label_count is {label_count}"
            )));
        }
        let neuron_layers = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_neuron_bearing())
            .map(|(i, l)| {
                let read_after = match layers.get(i + 1) {
                    Some(Layer::Relu) => i + 1,
                    _ => i,
                };
                let units = match l {
                    Layer::Conv2d { bias, .. } | Layer::Dense { bias, .. } => bias.len(),
                    _ => unreachable!(),
                };
                NeuronLayer {
                    layer: i,
                    read_after,
                    units,
                }
            })
            .collect();
        Ok(Model {
            name: name.into(),
            input_shape,
            label_count,
            layers,
            neuron_layers,
            classifier,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn neuron_count(&self) -> usize {
        self.neuron_layers.iter().map(|n| n.units).sum()
    }

    /// Units per neuron-bearing layer, in layer order.
    pub fn neuron_layer_sizes(&self) -> Vec<usize> {
        self.neuron_layers.iter().map(|n| n.units).collect()
    }

    pub fn neuron_ids(&self) -> Vec<NeuronId> {
        self.neuron_layers
            .iter()
            .flat_map(|n| (0..n.units).map(move |unit| NeuronId { layer: n.layer, unit }))
            .collect()
    }

    /// Output shape after every layer.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    pub fn forward(&self, input: &Tensor) -> Result<ActivationRecord> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(FuzzError::ShapeMismatch(format!(
                "model `{}` expects input {:?}, got {:?}",
                self.name,
                self.input_shape,
                input.shape()
            )));
        }
        let mut layers_out: Vec<Vec<f32>> = Vec::with_capacity(self.neuron_layers.len());
        let mut penultimate = Vec::new();
        let mut logits = Vec::new();
        let mut current = input.clone();
        let mut pending = self.neuron_layers.iter().peekable();
        for (i, layer) in self.layers.iter().enumerate() {
            if i == self.classifier {
                penultimate = current.data().to_vec();
            }
            current = layer.apply(&current);
            if i == self.classifier {
                logits = current.data().to_vec();
            }
            while let Some(n) = pending.peek() {
                if n.read_after != i {
                    break;
                }
                layers_out.push(neuron_values(&current));
                pending.next();
            }
        }
        let predicted_label = argmax(&logits);
        Ok(ActivationRecord {
            layers: layers_out,
            penultimate,
            logits,
            predicted_label,
        })
    }

    /// Per-element [`Model::forward`], parallel across the batch.
    pub fn forward_batch(&self, batch: &[Tensor]) -> Result<Vec<ActivationRecord>> {
        batch
            .par_iter()
            .enumerate()
            .map(|(index, x)| {
                self.forward(x).map_err(|e| FuzzError::BatchElement {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Conv maps reduce to per-channel spatial means; vectors pass through.
fn neuron_values(t: &Tensor) -> Vec<f32> {
    match t.shape() {
        [c, h, w] => {
            let plane = h * w;
            t.data()
                .chunks(plane)
                .take(*c)
                .map(|ch| ch.iter().sum::<f32>() / plane as f32)
                .collect()
        }
        _ => t.data().to_vec(),
    }
}

fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dense() -> Model {
        Model::new(
            "tiny",
            vec![1, 2, 2],
            2,
            vec![
                Layer::Flatten,
                Layer::Dense {
                    weight: Tensor::new(vec![3, 4], (0..12).map(|i| i as f32 * 0.1 - 0.5).collect()).unwrap(),
                    bias: vec![0.1, -0.2, 0.0],
                },
                Layer::Relu,
                Layer::Dense {
                    weight: Tensor::new(vec![2, 3], vec![1.0, -1.0, 0.5, 0.25, 0.5, -0.5]).unwrap(),
                    bias: vec![0.0, 0.0],
                },
                Layer::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_dense_chain() {
        let m = tiny_dense();
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.5, 1.0]).unwrap();
        let rec = m.forward(&x).unwrap();
        // hidden pre-activations: row0 = -0.5*1 + -0.4*0 + -0.3*0.5 + -0.2*1 + 0.1 = -0.75
        // row1 = -0.1 + 0 + 0.05 + 0.2 - 0.2 = -0.05 ; row2 = 0.3 + 0 + 0.25 + 0.6 = 1.15
        let hidden = &rec.layers[0];
        assert_eq!(hidden[0], 0.0);
        assert_eq!(hidden[1], 0.0);
        assert!((hidden[2] - 1.15).abs() < 1e-6);
        assert_eq!(rec.penultimate, *hidden);
        assert!((rec.logits[0] - 0.575).abs() < 1e-6);
        assert!((rec.logits[1] + 0.575).abs() < 1e-6);
        assert_eq!(rec.predicted_label, 0);
        // softmax output is not neuron-bearing; the logits layer is.
        assert_eq!(rec.layers.len(), 2);
        assert_eq!(m.neuron_count(), 5);
    }

    #[test]
    fn dense_bias_mismatch_is_rejected() {
        let err = Model::new(
            "bad",
            vec![4],
            2,
            vec![Layer::Dense {
                weight: Tensor::zeros(vec![2, 4]),
                bias: vec![0.0; 3],
            }],
        )
        .unwrap_err();
        assert!(matches!(err, FuzzError::ShapeMismatch(_)), "{err}");
    }

    #[test]
    fn empty_model_is_rejected() {
        assert!(matches!(Model::new("e", vec![1], 1, vec![]), Err(FuzzError::EmptyModel)));
    }

    #[test]
    fn conv_extent_valid_and_same() {
        assert_eq!(conv_extent(28, 5, 1, Padding::Valid).unwrap(), 24);
        assert_eq!(conv_extent(28, 5, 2, Padding::Valid).unwrap(), 12);
        assert_eq!(conv_extent(28, 5, 1, Padding::Same).unwrap(), 28);
        assert_eq!(same_pad(28, 5, 1), 2);
        assert!(conv_extent(4, 5, 1, Padding::Valid).is_err());
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let m = tiny_dense();
        assert!(matches!(m.forward(&Tensor::zeros(vec![4])), Err(FuzzError::ShapeMismatch(_))));
        let err = m
            .forward_batch(&[Tensor::zeros(vec![1, 2, 2]), Tensor::zeros(vec![2, 2])])
            .unwrap_err();
        assert!(matches!(err, FuzzError::BatchElement { index: 1, .. }));
    }

    #[test]
    fn conv_neuron_is_channel_mean() {
        let m = Model::new(
            "c",
            vec![1, 3, 3],
            1,
            vec![
                Layer::Conv2d {
                    weight: Tensor::new(vec![2, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap(),
                    bias: vec![0.0, 0.0],
                    stride: 1,
                    padding: Padding::Valid,
                },
                Layer::Relu,
                Layer::Flatten,
                Layer::Dense {
                    weight: Tensor::zeros(vec![1, 8]),
                    bias: vec![0.0],
                },
            ],
        )
        .unwrap();
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let rec = m.forward(&x).unwrap();
        // channel 0 copies the top-left 2x2 window: (1+2+4+5)/4 = 3; channel 1 is negative -> relu 0.
        assert_eq!(rec.layers[0], vec![3.0, 0.0]);
        assert_eq!(m.neuron_ids()[1], NeuronId { layer: 0, unit: 1 });
    }
}
