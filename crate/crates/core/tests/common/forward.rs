//! Naive f64 reference interpreter and random micro-model generator.

use nnfuzz_core::model::{Layer, Model, Padding};
use nnfuzz_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Vol = Vec<Vec<Vec<f64>>>; // [c][y][x]

#[derive(Debug, Default)]
pub struct OracleRecord {
    pub layers: Vec<Vec<f64>>,
    pub penultimate: Vec<f64>,
    pub logits: Vec<f64>,
}

enum Val {
    Vol(Vol),
    Vec(Vec<f64>),
}

fn to_vol(t: &Tensor) -> Vol {
    let s = t.shape();
    (0..s[0])
        .map(|c| {
            (0..s[1])
                .map(|y| (0..s[2]).map(|x| t.data()[(c * s[1] + y) * s[2] + x] as f64).collect())
                .collect()
        })
        .collect()
}

fn w4(w: &Tensor, o: usize, i: usize, y: usize, x: usize) -> f64 {
    let s = w.shape();
    w.data()[((o * s[1] + i) * s[2] + y) * s[3] + x] as f64
}

fn conv(v: &Vol, w: &Tensor, b: &[f32], stride: usize, padding: Padding) -> Vol {
    let (h, wd) = (v[0].len() as i64, v[0][0].len() as i64);
    let (oc, ic, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2] as i64, w.shape()[3] as i64);
    let s = stride as i64;
    let (oh, ow, pt, pl) = match padding {
        Padding::Valid => ((h - kh) / s + 1, (wd - kw) / s + 1, 0, 0),
        Padding::Same => {
            let oh = (h + s - 1) / s;
            let ow = (wd + s - 1) / s;
            let th = ((oh - 1) * s + kh - h).max(0);
            let tw = ((ow - 1) * s + kw - wd).max(0);
            (oh, ow, th / 2, tw / 2)
        }
    };
    let mut out = vec![vec![vec![0.0; ow as usize]; oh as usize]; oc];
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[o] as f64;
                for i in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let (y, x) = (oy * s + ky - pt, ox * s + kx - pl);
                            if y >= 0 && y < h && x >= 0 && x < wd {
                                acc += w4(w, o, i, ky as usize, kx as usize) * v[i][y as usize][x as usize];
                            }
                        }
                    }
                }
                out[o][oy as usize][ox as usize] = acc;
            }
        }
    }
    out
}

fn pool(v: &Vol, window: usize, stride: usize) -> Vol {
    let (h, w) = (v[0].len(), v[0][0].len());
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    v.iter()
        .map(|plane| {
            (0..oh)
                .map(|oy| {
                    (0..ow)
                        .map(|ox| {
                            let mut m = f64::NEG_INFINITY;
                            for y in oy * stride..oy * stride + window {
                                for x in ox * stride..ox * stride + window {
                                    m = m.max(plane[y][x]);
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn means(v: &Val) -> Vec<f64> {
    match v {
        Val::Vol(vol) => vol
            .iter()
            .map(|p| {
                let n = (p.len() * p[0].len()) as f64;
                p.iter().flatten().sum::<f64>() / n
            })
            .collect(),
        Val::Vec(x) => x.clone(),
    }
}

pub fn oracle(layers: &[Layer], input: &Tensor) -> OracleRecord {
    let classifier = layers.iter().rposition(|l| matches!(l, Layer::Dense { .. })).unwrap();
    let mut rec = OracleRecord::default();
    let mut cur = Val::Vol(to_vol(input));
    let mut pending: Option<usize> = None;
    for (i, layer) in layers.iter().enumerate() {
        if i == classifier {
            rec.penultimate = match &cur {
                Val::Vec(x) => x.clone(),
                Val::Vol(v) => v.iter().flatten().flatten().copied().collect(),
            };
        }
        cur = match (layer, cur) {
            (Layer::Conv2d { weight, bias, stride, padding }, Val::Vol(v)) => Val::Vol(conv(&v, weight, bias, *stride, *padding)),
            (Layer::Dense { weight, bias }, Val::Vec(x)) => {
                let n_in = weight.shape()[1];
                Val::Vec(
                    (0..bias.len())
                        .map(|o| bias[o] as f64 + (0..n_in).map(|j| weight.data()[o * n_in + j] as f64 * x[j]).sum::<f64>())
                        .collect(),
                )
            }
            (Layer::Relu, Val::Vol(v)) => Val::Vol(
                v.into_iter()
                    .map(|p| p.into_iter().map(|r| r.into_iter().map(|a| a.max(0.0)).collect()).collect())
                    .collect(),
            ),
            (Layer::Relu, Val::Vec(x)) => Val::Vec(x.into_iter().map(|a| a.max(0.0)).collect()),
            (Layer::MaxPool2d { window, stride }, Val::Vol(v)) => Val::Vol(pool(&v, *window, *stride)),
            (Layer::Flatten, Val::Vol(v)) => Val::Vec(v.into_iter().flatten().flatten().collect()),
            (Layer::Flatten, Val::Vec(x)) => Val::Vec(x),
            (Layer::Softmax, Val::Vec(x)) => {
                let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = x.iter().map(|a| (a - m).exp()).collect();
                let s: f64 = e.iter().sum();
                Val::Vec(e.into_iter().map(|a| a / s).collect())
            }
            (l, _) => panic!("oracle cannot apply {l:?} here"),
        };
        if i == classifier {
            rec.logits = match &cur {
                Val::Vec(x) => x.clone(),
                Val::Vol(_) => unreachable!(),
            };
        }
        // a neuron is read after the ReLU that directly follows its layer
        if let Some(p) = pending.take() {
            if matches!(layer, Layer::Relu) && p + 1 == i {
                rec.layers.push(means(&cur));
                continue;
            }
            unreachable!();
        }
        if matches!(layer, Layer::Conv2d { .. } | Layer::Dense { .. }) {
            if matches!(layers.get(i + 1), Some(Layer::Relu)) {
                pending = Some(i);
            } else {
                rec.layers.push(means(&cur));
            }
        }
    }
    rec
}

pub fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect()).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng) -> Model {
    let c0 = rng.gen_range(1..=3);
    let (mut c, mut h, mut w) = (c0, rng.gen_range(6..=11), rng.gen_range(6..=11));
    let input_shape = vec![c, h, w];
    let mut layers = Vec::new();
    for _ in 0..rng.gen_range(1..=2) {
        let oc = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=3.min(h).min(w));
        let stride = rng.gen_range(1..=2);
        let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
        layers.push(Layer::Conv2d {
            weight: rand_tensor(vec![oc, c, k, k], rng),
            bias: (0..oc).map(|_| rng.gen_range(-0.2..0.2)).collect(),
            stride,
            padding,
        });
        (h, w) = match padding {
            Padding::Valid => ((h - k) / stride + 1, (w - k) / stride + 1),
            Padding::Same => (h.div_ceil(stride), w.div_ceil(stride)),
        };
        c = oc;
        if rng.gen_bool(0.7) {
            layers.push(Layer::Relu);
        }
        if h >= 2 && w >= 2 && rng.gen_bool(0.5) {
            layers.push(Layer::MaxPool2d { window: 2, stride: 2 });
            (h, w) = ((h - 2) / 2 + 1, (w - 2) / 2 + 1);
        }
    }
    layers.push(Layer::Flatten);
    let mut n = c * h * w;
    if rng.gen_bool(0.5) {
        let hidden = rng.gen_range(2..=8);
        layers.push(Layer::Dense {
            weight: rand_tensor(vec![hidden, n], rng),
            bias: (0..hidden).map(|_| rng.gen_range(-0.2..0.2)).collect(),
        });
        layers.push(Layer::Relu);
        n = hidden;
    }
    let labels = rng.gen_range(2..=5);
    layers.push(Layer::Dense {
        weight: rand_tensor(vec![labels, n], rng),
        bias: (0..labels).map(|_| rng.gen_range(-0.2..0.2)).collect(),
    });
    if rng.gen_bool(0.5) {
        layers.push(Layer::Softmax);
    }
    Model::new("micro", input_shape, labels, layers).unwrap()
}

pub fn close(a: &[f32], b: &[f64], tol: f64) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("length {} vs {}", a.len(), b.len()));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if (*x as f64 - y).abs() > tol {
            return Err(format!("[{i}]: {x} vs {y}"));
        }
    }
    Ok(())
}

/// Compares `forward` with the oracle on `models` random micro-models, three
/// inputs each; returns the largest absolute deviation.
pub fn check_random_models(seed: u64, models: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for m in 0..models {
        let model = random_model(&mut rng);
        for _ in 0..3 {
            let shape = model.input_shape().to_vec();
            let n: usize = shape.iter().product();
            let x = Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap();
            let got = model.forward(&x).map_err(|e| e.to_string())?;
            let want = oracle(model.layers(), &x);
            let mut pairs = vec![(&got.logits, &want.logits), (&got.penultimate, &want.penultimate)];
            if got.layers.len() != want.layers.len() {
                return Err(format!("model {m}: {} neuron layers vs {}", got.layers.len(), want.layers.len()));
            }
            pairs.extend(got.layers.iter().zip(&want.layers));
            for (a, b) in pairs {
                close(a, b, 1e-5).map_err(|e| format!("model {m}: {e}"))?;
                for (x, y) in a.iter().zip(b.iter()) {
                    worst = worst.max((*x as f64 - y).abs());
                }
            }
            let argmax = want
                .logits
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            if got.predicted_label != argmax {
                return Err(format!("model {m}: label {} vs {argmax}", got.predicted_label));
            }
        }
    }
    Ok(worst)
}
