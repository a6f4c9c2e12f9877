//! Ellipsoid phantoms on an anisotropic grid.

use super::volume::{LabelVolume, Spacing, Volume};
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::str::FromStr;

pub const SYNTH_SPACING: Spacing = [3.0, 0.5, 0.5];
pub const BACKGROUND_LEVEL: f32 = 0.2;
pub const NOISE_SIGMA: f32 = 0.05;
pub const CENTER_NOISE_SIGMA: f32 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SyntheticMode {
    #[default]
    Clean,
    /// Center slices of triplets get heavy extra noise.
    NoisyCenter,
}

impl SyntheticMode {
    pub fn center_noise(self) -> f32 {
        match self {
            SyntheticMode::Clean => 0.0,
            SyntheticMode::NoisyCenter => CENTER_NOISE_SIGMA,
        }
    }
}

impl fmt::Display for SyntheticMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticMode::Clean => "clean",
            SyntheticMode::NoisyCenter => "noisy-center",
        })
    }
}

impl FromStr for SyntheticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(SyntheticMode::Clean),
            "noisy-center" => Ok(SyntheticMode::NoisyCenter),
            other => Err(Error::config(format!("mode must be clean or noisy-center, got {other:?}"))),
        }
    }
}

/// Axis-aligned ellipsoid in voxel coordinates `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub class: u8,
}

impl Ellipsoid {
    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z as f64, y as f64, x as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// Labels of ellipsoids painted in order; later ones overwrite.
pub fn rasterize(dims: [usize; 3], shapes: &[Ellipsoid]) -> Vec<u8> {
    let [d, h, w] = dims;
    let mut out = vec![0u8; d * h * w];
    for e in shapes {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if e.contains(z, y, x) {
                        out[(z * h + y) * w + x] = e.class;
                    }
                }
            }
        }
    }
    out
}

/// Mean intensity of class `c` out of `classes`.
pub fn class_level(c: u8, classes: usize) -> f32 {
    if c == 0 {
        BACKGROUND_LEVEL
    } else {
        BACKGROUND_LEVEL + 0.5 * c as f32 / (classes - 1) as f32
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCase {
    pub image: Volume,
    pub label: LabelVolume,
    pub shapes: Vec<Ellipsoid>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub mode: SyntheticMode,
    pub cases: Vec<SyntheticCase>,
}

fn random_shape(rng: &mut ChaCha8Rng, dims: [usize; 3], classes: usize) -> Ellipsoid {
    let [d, h, w] = dims.map(|v| v as f64);
    let radii = [
        rng.random_range(0.2..0.45) * d,
        rng.random_range(0.1..0.22) * h,
        rng.random_range(0.1..0.22) * w,
    ];
    let center = [
        rng.random_range(0.3..0.7) * (d - 1.0),
        rng.random_range(radii[1]..=(h - 1.0 - radii[1]).max(radii[1])),
        rng.random_range(radii[2]..=(w - 1.0 - radii[2]).max(radii[2])),
    ];
    Ellipsoid {
        center,
        radii,
        class: rng.random_range(1..classes) as u8,
    }
}

/// `n` phantom volumes with 1 to 3 ellipsoids each, per-class intensity
/// levels, and Gaussian noise of σ = 0.05. Each volume draws from its own
/// stream of the seeded generator.
pub fn generate_synthetic(
    seed: u64,
    n: usize,
    dims: [usize; 3],
    classes: usize,
    mode: SyntheticMode,
) -> Result<SyntheticSet> {
    if dims.iter().any(|&v| v == 0) {
        return Err(Error::config(format!("synthetic dims {dims:?} contain a zero")));
    }
    if !(2..=256).contains(&classes) {
        return Err(Error::config(format!("classes must be in [2, 256], got {classes}")));
    }
    let noise = Normal::new(0.0f32, NOISE_SIGMA).expect("positive sigma");
    let mut cases = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let count = rng.random_range(1..=3);
        let shapes: Vec<Ellipsoid> = (0..count).map(|_| random_shape(&mut rng, dims, classes)).collect();
        let labels = rasterize(dims, &shapes);
        let image = labels
            .iter()
            .map(|&c| class_level(c, classes) + noise.sample(&mut rng))
            .collect();
        cases.push(SyntheticCase {
            image: Volume::new(dims, SYNTH_SPACING, image)?,
            label: LabelVolume::new(dims, SYNTH_SPACING, labels)?,
            shapes,
        });
    }
    Ok(SyntheticSet { mode, cases })
}
