//! Region-local image mutations and the seed-distance constraint.

use serde::{Deserialize, Serialize};

use crate::error::{FuzzError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub rows: usize,
    pub cols: usize,
}

impl Default for RegionGrid {
    fn default() -> Self {
        RegionGrid { rows: 3, cols: 3 }
    }
}

impl RegionGrid {
    pub fn region_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Half-open pixel rectangle `[top, bottom) x [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom).contains(&y) && (self.left..self.right).contains(&x)
    }
}

fn split_extent(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = len / parts;
    (0..parts)
        .map(|i| {
            let start = i * base;
            let end = if i + 1 == parts { len } else { start + base };
            (start, end)
        })
        .collect()
}

/// Row-major tiling; the last row and column absorb any remainder.
pub fn enumerate_regions(height: usize, width: usize, grid: RegionGrid) -> Result<Vec<Rect>> {
    if grid.rows == 0 || grid.cols == 0 || grid.rows > height || grid.cols > width {
        return Err(FuzzError::GridTooLarge {
            rows: grid.rows,
            cols: grid.cols,
            height,
            width,
        });
    }
    let rows = split_extent(height, grid.rows);
    let cols = split_extent(width, grid.cols);
    Ok(rows
        .iter()
        .flat_map(|&(top, bottom)| {
            cols.iter().map(move |&(left, right)| Rect {
                top,
                bottom,
                left,
                right,
            })
        })
        .collect())
}

fn default_pivot() -> f32 {
    0.5
}

fn default_radius() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MutationKind {
    /// Adds `delta` (fraction of the dynamic range).
    Brightness { delta: f32 },
    /// `pivot + gamma * (p - pivot)`.
    Contrast {
        gamma: f32,
        #[serde(default = "default_pivot")]
        pivot: f32,
    },
    /// Uniform mean over a `(2r+1)^2` window, edge taps clamped to the image.
    Blur {
        #[serde(default = "default_radius")]
        radius: usize,
    },
}

pub const BRIGHTNESS_DELTA: f32 = 0.05;
pub const CONTRAST_GAMMA: f32 = 1.25;

/// brightness(+δ), brightness(−δ), contrast(×γ), contrast(×1/γ), blur.
pub fn default_mutations() -> Vec<MutationKind> {
    vec![
        MutationKind::Brightness { delta: BRIGHTNESS_DELTA },
        MutationKind::Brightness { delta: -BRIGHTNESS_DELTA },
        MutationKind::Contrast {
            gamma: CONTRAST_GAMMA,
            pivot: 0.5,
        },
        MutationKind::Contrast {
            gamma: 1.0 / CONTRAST_GAMMA,
            pivot: 0.5,
        },
        MutationKind::Blur { radius: 1 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CompleteAction {
    pub region: usize,
    pub mutation: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum DistanceConstraint {
    Linf { epsilon: f32 },
    L2 { epsilon: f32 },
    /// Few-pixel changes (`L0 < alpha * pixels`) are unbounded in magnitude;
    /// otherwise `Linf < beta`.
    Compound { alpha: f32, beta: f32 },
}

pub const DEFAULT_EPSILON: f32 = 0.25;

impl Default for DistanceConstraint {
    fn default() -> Self {
        DistanceConstraint::Linf { epsilon: DEFAULT_EPSILON }
    }
}

impl DistanceConstraint {
    /// `d(mutated, seed) < ε` under this metric.
    pub fn within(&self, mutated: &Tensor, seed: &Tensor) -> Result<bool> {
        if mutated.shape() != seed.shape() {
            return Err(FuzzError::ShapeMismatch(format!(
                "distance between {:?} and {:?}",
                mutated.shape(),
                seed.shape()
            )));
        }
        let diffs = mutated.data().iter().zip(seed.data()).map(|(a, b)| (a - b).abs());
        Ok(match *self {
            DistanceConstraint::Linf { epsilon } => diffs.fold(0.0f32, f32::max) < epsilon,
            DistanceConstraint::L2 { epsilon } => diffs.map(|d| d * d).sum::<f32>().sqrt() < epsilon,
            DistanceConstraint::Compound { alpha, beta } => {
                let (l0, linf) = diffs.fold((0usize, 0.0f32), |(n, m), d| (n + usize::from(d > 0.0), m.max(d)));
                (l0 as f32) < alpha * seed.len() as f32 || linf < beta
            }
        })
    }

    /// A batch passes iff every image passes against its own seed.
    pub fn batch_within(&self, mutated: &[Tensor], seeds: &[Tensor]) -> Result<bool> {
        if mutated.len() != seeds.len() {
            return Err(FuzzError::ShapeMismatch(format!(
                "{} mutated images for {} seeds",
                mutated.len(),
                seeds.len()
            )));
        }
        for (m, s) in mutated.iter().zip(seeds) {
            if !self.within(m, s)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Region grid, mutation list and distance constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutatorConfig {
    #[serde(default)]
    pub grid: RegionGrid,
    #[serde(default = "default_mutations")]
    pub mutations: Vec<MutationKind>,
    #[serde(default)]
    pub constraint: DistanceConstraint,
}

impl Default for MutatorConfig {
    fn default() -> Self {
        MutatorConfig {
            grid: RegionGrid::default(),
            mutations: default_mutations(),
            constraint: DistanceConstraint::default(),
        }
    }
}

impl MutatorConfig {
    pub fn region_count(&self) -> usize {
        self.grid.region_count()
    }

    pub fn mutation_count(&self) -> usize {
        self.mutations.len()
    }

    /// All complete actions, region-major.
    pub fn actions(&self) -> impl Iterator<Item = CompleteAction> + '_ {
        (0..self.region_count()).flat_map(move |region| {
            (0..self.mutation_count()).map(move |mutation| CompleteAction { region, mutation })
        })
    }

    /// Applies `action` identically to every image, returning a new batch.
    pub fn apply(&self, batch: &[Tensor], action: CompleteAction) -> Result<Vec<Tensor>> {
        let kind = *self.mutations.get(action.mutation).ok_or_else(|| {
            FuzzError::IndexOutOfRange(format!(
                "mutation {} of {}",
                action.mutation,
                self.mutation_count()
            ))
        })?;
        if action.region >= self.region_count() {
            return Err(FuzzError::IndexOutOfRange(format!(
                "region {} of {}",
                action.region,
                self.region_count()
            )));
        }
        let Some(first) = batch.first() else {
            return Ok(Vec::new());
        };
        let (h, w) = first.spatial()?;
        let rect = enumerate_regions(h, w, self.grid)?[action.region];
        batch
            .iter()
            .map(|img| {
                if img.shape() != first.shape() {
                    return Err(FuzzError::ShapeMismatch(format!(
                        "batch mixes shapes {:?} and {:?}",
                        first.shape(),
                        img.shape()
                    )));
                }
                Ok(mutate_image(img, rect, kind))
            })
            .collect()
    }

    pub fn apply_sequence(&self, batch: &[Tensor], actions: &[CompleteAction]) -> Result<Vec<Tensor>> {
        let mut current = batch.to_vec();
        for &a in actions {
            current = self.apply(&current, a)?;
        }
        Ok(current)
    }
}

fn mutate_image(img: &Tensor, rect: Rect, kind: MutationKind) -> Tensor {
    let (h, w) = img.spatial().expect("checked by caller");
    let mut out = img.clone();
    let src = img.data();
    let dst = out.data_mut();
    let planes = src.len() / (h * w);
    for c in 0..planes {
        let base = c * h * w;
        for y in rect.top..rect.bottom {
            for x in rect.left..rect.right {
                let i = base + y * w + x;
                let p = src[i];
                let v = match kind {
                    MutationKind::Brightness { delta } => p + delta,
                    MutationKind::Contrast { gamma, pivot } => pivot + gamma * (p - pivot),
                    MutationKind::Blur { radius } => {
                        let r = radius as isize;
                        let mut sum = 0.0f32;
                        for dy in -r..=r {
                            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                            for dx in -r..=r {
                                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                                sum += src[base + yy * w + xx];
                            }
                        }
                        sum / ((2 * radius + 1) * (2 * radius + 1)) as f32
                    }
                };
                dst[i] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}
