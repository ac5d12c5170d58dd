//! Small generated tasks for fast end-to-end runs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImageShape, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticTask {
    /// Two Gaussian intensity clusters on 1×4×4 images; linearly separable.
    TwoBlobs,
    /// One horizontal or one vertical bright stripe on a 9×9 image.
    Bars,
    /// Two optional bright patches on 8×8; the class is their exclusive or.
    XorPatches,
}

impl SyntheticTask {
    pub const ALL: [SyntheticTask; 3] = [
        SyntheticTask::TwoBlobs,
        SyntheticTask::Bars,
        SyntheticTask::XorPatches,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::TwoBlobs => "two-blobs",
            SyntheticTask::Bars => "bars",
            SyntheticTask::XorPatches => "xor-patches",
        }
    }

    pub fn shape(self) -> ImageShape {
        match self {
            SyntheticTask::TwoBlobs => ImageShape::new(1, 4, 4),
            SyntheticTask::Bars => ImageShape::new(1, 9, 9),
            SyntheticTask::XorPatches => ImageShape::new(1, 8, 8),
        }
    }

    fn sizes(self) -> (usize, usize) {
        match self {
            SyntheticTask::TwoBlobs => (2000, 500),
            SyntheticTask::Bars => (600, 200),
            SyntheticTask::XorPatches => (1000, 400),
        }
    }
}

impl fmt::Display for SyntheticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SyntheticTask::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| {
                Error::input(format!(
                    "unknown synthetic task {s:?} (expected two-blobs, bars or xor-patches)"
                ))
            })
    }
}

fn generate(task: SyntheticTask, count: usize, split: Split, rng: &mut impl Rng) -> Dataset {
    let shape = task.shape();
    let (h, w) = (shape.height, shape.width);
    let mut pixels = Vec::with_capacity(count * shape.len());
    let mut labels = Vec::with_capacity(count);
    let noise = Normal::new(0.0, 0.15).unwrap();
    for i in 0..count {
        // alternating labels keep both classes exactly balanced
        let label = (i % 2) as u8;
        match task {
            SyntheticTask::TwoBlobs => {
                let centre = if label == 0 { 0.3 } else { 0.7 };
                for _ in 0..shape.len() {
                    let v: f64 = centre + noise.sample(rng);
                    pixels.push(v.clamp(0.0, 1.0) as f32);
                }
            }
            SyntheticTask::Bars => {
                let line = rng.random_range(0..if label == 0 { h } else { w });
                for y in 0..h {
                    for x in 0..w {
                        let on = if label == 0 { y == line } else { x == line };
                        let v: f32 = if on {
                            rng.random_range(0.8..=1.0)
                        } else {
                            rng.random_range(0.0..0.3)
                        };
                        pixels.push(v);
                    }
                }
            }
            SyntheticTask::XorPatches => {
                let first = rng.random_bool(0.5);
                let second = first ^ (label == 1);
                for y in 0..h {
                    for x in 0..w {
                        let in_first = y < 3 && x < 3;
                        let in_second = y >= h - 3 && x >= w - 3;
                        let on = (in_first && first) || (in_second && second);
                        let v: f32 = if on {
                            rng.random_range(0.8..=1.0)
                        } else {
                            rng.random_range(0.0..0.2)
                        };
                        pixels.push(v);
                    }
                }
            }
        }
        labels.push(label);
    }
    Dataset::new(pixels, labels, shape, 2, split).expect("generated data is valid")
}

/// Deterministic `(train, test)` pair for `task` given the RNG state.
pub fn synthetic_task(task: SyntheticTask, rng: &mut impl Rng) -> (Dataset, Dataset) {
    let (n_train, n_test) = task.sizes();
    let train = generate(task, n_train, Split::Train, rng);
    let test = generate(task, n_test, Split::Test, rng);
    (train, test)
}
