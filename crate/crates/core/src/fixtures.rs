//! Deterministic desk-scale fixtures: seeded models and procedural datasets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::TfcProfile;
use crate::error::{FuzzError, Result};
use crate::io::{self, nnwc, tds, Dataset};
use crate::model::{Layer, Model, Padding};
use crate::mutation::MutatorConfig;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// 1x28x28 -> conv 4@5x5 -> pool -> conv 12@5x5 -> pool -> dense 10.
    Lenet1Shape,
    /// 1x8x8 -> conv 3@3x3 -> pool -> dense 6 -> dense 4.
    MicroCnn,
    /// 1x2x2 -> dense 3 -> dense 2.
    DenseOnly,
}

impl Architecture {
    pub fn input_shape(self) -> Vec<usize> {
        match self {
            Architecture::Lenet1Shape => vec![1, 28, 28],
            Architecture::MicroCnn => vec![1, 8, 8],
            Architecture::DenseOnly => vec![1, 2, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lenet1Shape => "lenet1-shape",
            Architecture::MicroCnn => "micro-cnn",
            Architecture::DenseOnly => "dense-only",
        }
    }

    fn label_count(self) -> usize {
        match self {
            Architecture::Lenet1Shape => 10,
            Architecture::MicroCnn => 4,
            Architecture::DenseOnly => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    #[default]
    /// Five blob positions and five stripe patterns, one per class.
    BlobsStripes,
}

fn default_train() -> usize {
    100
}

fn default_test() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(default = "default_train")]
    pub train_count: usize,
    #[serde(default = "default_test")]
    pub test_count: usize,
    #[serde(default)]
    pub generator: Generator,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train_count: default_train(),
            test_count: default_test(),
            generator: Generator::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub architecture: Architecture,
    #[serde(default)]
    pub weight_seed: u64,
    #[serde(default)]
    pub dataset: DatasetSpec,
}

impl FixtureSpec {
    pub fn new(architecture: Architecture, seed: u64) -> Self {
        FixtureSpec {
            architecture,
            weight_seed: seed,
            dataset: DatasetSpec {
                train_count: default_train(),
                test_count: default_test(),
                generator: Generator::BlobsStripes,
                seed: seed.wrapping_add(1),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub spec: FixtureSpec,
    pub model: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub parameter_count: usize,
    /// File name -> sha256.
    pub digests: BTreeMap<String, String>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| (rng.gen::<f32>() - 0.5) * scale).collect()
}

/// uniform(-0.5, 0.5) rescaled to He variance for the layer's fan-in.
fn conv(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, k: usize, padding: Padding) -> Layer {
    let fan_in = (in_c * k * k) as f32;
    let scale = (24.0 / fan_in).sqrt();
    Layer::Conv2d {
        weight: Tensor::new(vec![out_c, in_c, k, k], uniform(rng, out_c * in_c * k * k, scale)).expect("shape"),
        bias: uniform(rng, out_c, 0.1),
        stride: 1,
        padding,
    }
}

fn dense(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Layer {
    let scale = (24.0 / inp as f32).sqrt();
    Layer::Dense {
        weight: Tensor::new(vec![out, inp], uniform(rng, out * inp, scale)).expect("shape"),
        bias: uniform(rng, out, 0.1),
    }
}

pub fn build_model(arch: Architecture, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = match arch {
        Architecture::Lenet1Shape => vec![
            conv(&mut rng, 4, 1, 5, Padding::Same),
            Layer::Relu,
            Layer::MaxPool2d { window: 2, stride: 2 },
            conv(&mut rng, 12, 4, 5, Padding::Same),
            Layer::Relu,
            Layer::MaxPool2d { window: 2, stride: 2 },
            Layer::Flatten,
            dense(&mut rng, 10, 12 * 7 * 7),
            Layer::Softmax,
        ],
        Architecture::MicroCnn => vec![
            conv(&mut rng, 3, 1, 3, Padding::Valid),
            Layer::Relu,
            Layer::MaxPool2d { window: 2, stride: 2 },
            Layer::Flatten,
            dense(&mut rng, 6, 27),
            Layer::Relu,
            dense(&mut rng, 4, 6),
        ],
        Architecture::DenseOnly => vec![Layer::Flatten, dense(&mut rng, 3, 4), Layer::Relu, dense(&mut rng, 2, 3)],
    };
    Model::new(arch.name(), arch.input_shape(), arch.label_count(), layers).expect("fixture architectures are consistent")
}

/// Procedural image for `class` (0..10) on a `[C, H, W]` canvas.
pub fn synth_image(shape: &[usize], class: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let (c, h, w) = match shape {
        [c, h, w] => (*c, *h, *w),
        _ => panic!("synthetic images need [C, H, W], got {shape:?}"),
    };
    let (hf, wf) = (h as f32, w as f32);
    let amp = 0.55 + 0.4 * rng.gen::<f32>();
    let jitter_y = (rng.gen::<f32>() - 0.5) * 0.15 * hf;
    let jitter_x = (rng.gen::<f32>() - 0.5) * 0.15 * wf;
    let sigma = (0.1 + 0.08 * rng.gen::<f32>()) * hf.min(wf);
    let period = (0.15 + 0.1 * rng.gen::<f32>()) * hf.min(wf);
    let phase = rng.gen::<f32>() * std::f32::consts::TAU;
    let class = class % 10;
    let centers = [(0.3, 0.3), (0.3, 0.7), (0.7, 0.3), (0.7, 0.7), (0.5, 0.5)];
    let mut data = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f32, x as f32);
                let base = if class < 5 {
                    let (cy, cx) = centers[class];
                    let dy = yf - (cy * hf + jitter_y);
                    let dx = xf - (cx * wf + jitter_x);
                    amp * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
                } else {
                    let t = match class {
                        5 => yf,
                        6 => xf,
                        7 => (xf + yf) / std::f32::consts::SQRT_2,
                        8 => (xf - yf) / std::f32::consts::SQRT_2,
                        _ => (xf * yf).sqrt() * 2.0,
                    };
                    amp * (0.5 + 0.5 * (std::f32::consts::TAU * t / period + phase).sin())
                };
                let noise = 0.1 * rng.gen::<f32>();
                data.push((base + noise).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape")
}

pub fn synth_dataset(shape: &[usize], count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
    let samples = labels.iter().map(|&l| synth_image(shape, l as usize, &mut rng)).collect();
    Dataset::new(shape.to_vec(), samples, Some(labels)).expect("consistent")
}

/// Rescales the lenet1-shape model so that the strongest single complete
/// action moves a typical penultimate vector by about `fraction` of the TFC
/// squared-distance threshold. Conv, relu and pooling are positively
/// homogeneous, so scaling the last conv layer scales the penultimate vector
/// linearly; the classifier is scaled inversely so logits are unchanged.
fn calibrate_penultimate(model: Model, probes: &[Tensor], fraction: f32) -> Model {
    let mutator = MutatorConfig::default();
    let base = model.forward_batch(probes).expect("fixture forward");
    let mut per_seed: Vec<f32> = probes
        .iter()
        .zip(&base)
        .map(|(x, rec)| {
            mutator
                .actions()
                .map(|a| {
                    let m = mutator.apply(std::slice::from_ref(x), a).expect("valid action");
                    let r = model.forward(&m[0]).expect("fixture forward");
                    crate::coverage::squared_distance(&r.penultimate, &rec.penultimate)
                })
                .fold(0.0f32, f32::max)
        })
        .collect();
    per_seed.sort_by(f32::total_cmp);
    let median = per_seed[per_seed.len() / 2];
    if median <= 0.0 {
        return model;
    }
    let target = fraction * TfcProfile::Lenet1.threshold();
    let s = (target / median).sqrt();
    let (name, shape, labels) = (model.name().to_string(), model.input_shape().to_vec(), model.label_count());
    let last_conv = model
        .layers()
        .iter()
        .rposition(|l| matches!(l, Layer::Conv2d { .. }))
        .expect("lenet1-shape has convs");
    let layers = model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } if i == last_conv => Layer::Conv2d {
                weight: scaled(weight, s),
                bias: bias.iter().map(|b| b * s).collect(),
                stride: *stride,
                padding: *padding,
            },
            Layer::Dense { weight, bias } => Layer::Dense {
                weight: scaled(weight, 1.0 / s),
                bias: bias.clone(),
            },
            other => other.clone(),
        })
        .collect();
    Model::new(name, shape, labels, layers).expect("scaling keeps shapes")
}

fn scaled(t: &Tensor, s: f32) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect()).expect("same shape")
}

pub const PENULTIMATE_FRACTION: f32 = 0.5;

/// Model, train split and test split for a spec, all in memory.
pub fn build_fixture(spec: &FixtureSpec) -> (Model, Dataset, Dataset) {
    let shape = spec.architecture.input_shape();
    let train = synth_dataset(&shape, spec.dataset.train_count, spec.dataset.seed);
    let test = synth_dataset(&shape, spec.dataset.test_count, spec.dataset.seed.wrapping_add(0x5eed));
    let mut model = build_model(spec.architecture, spec.weight_seed);
    if spec.architecture == Architecture::Lenet1Shape && !train.is_empty() {
        let probes: Vec<Tensor> = train.samples.iter().take(10).cloned().collect();
        model = calibrate_penultimate(model, &probes, PENULTIMATE_FRACTION);
    }
    (model, train, test)
}

/// Writes `<arch>.nnwc`, `train.tds`, `test.tds` and `manifest.json` into `out`.
pub fn generate_fixture(spec: &FixtureSpec, out: impl AsRef<Path>) -> Result<FixtureManifest> {
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| FuzzError::io(out, e))?;
    let (model, train, test) = build_fixture(spec);
    let model_path = out.join(format!("{}.nnwc", spec.architecture.name()));
    let train_path = out.join("train.tds");
    let test_path = out.join("test.tds");
    nnwc::save_model(&model, &model_path)?;
    tds::save_dataset(&train, &train_path)?;
    tds::save_dataset(&test, &test_path)?;
    let mut digests = BTreeMap::new();
    for p in [&model_path, &train_path, &test_path] {
        let name = p.file_name().expect("file").to_string_lossy().into_owned();
        digests.insert(name, io::file_digest(p)?);
    }
    let manifest = FixtureManifest {
        spec: *spec,
        model: model_path,
        train: train_path,
        test: test_path,
        parameter_count: model.parameter_count(),
        digests,
    };
    let manifest_path = out.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(&manifest_path, json).map_err(|e| FuzzError::io(&manifest_path, e))?;
    Ok(manifest)
}
