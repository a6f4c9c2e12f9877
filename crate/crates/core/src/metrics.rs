//! Overlap and surface-distance metrics on 3D masks with physical spacing.

use crate::data::LabelVolume;
use crate::error::{Error, Result};

/// Binary volume, `D × H × W`, with spacing `(z, y, x)` in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    dims: [usize; 3],
    voxels: Vec<bool>,
    spacing: [f64; 3],
}

impl Mask {
    pub fn new(dims: [usize; 3], voxels: Vec<bool>, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::input(format!("spacing {spacing:?} must be positive")));
        }
        let n = dims.iter().product::<usize>();
        if n != voxels.len() {
            return Err(Error::input(format!(
                "dims {dims:?} need {n} voxels, got {}",
                voxels.len()
            )));
        }
        Ok(Mask { dims, voxels, spacing })
    }

    /// Voxels equal to `class`.
    pub fn from_labels(labels: &LabelVolume, class: u8) -> Self {
        let s = labels.spacing();
        Mask {
            dims: labels.dims(),
            voxels: labels.data().iter().map(|&l| l == class).collect(),
            spacing: [s[0] as f64, s[1] as f64, s[2] as f64],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> bool {
        self.voxels[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.voxels.iter().any(|&v| v)
    }
}

fn same_dims(g: &Mask, p: &Mask) -> Result<()> {
    if g.dims != p.dims {
        return Err(Error::input(format!(
            "mask dims differ: {:?} vs {:?}",
            g.dims, p.dims
        )));
    }
    Ok(())
}

/// `2|G ∩ P| / (|G| + |P|)`; two empty masks score 1.
pub fn dsc(g: &Mask, p: &Mask) -> Result<f64> {
    same_dims(g, p)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&a, &b) in g.voxels.iter().zip(&p.voxels) {
        inter += (a && b) as usize;
        total += a as usize + b as usize;
    }
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Foreground voxels with at least one background 6-neighbor, treating
/// everything outside the volume as background. Raster order.
pub fn extract_boundary(m: &Mask) -> Vec<[usize; 3]> {
    let [d, h, w] = m.dims;
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !m.get(z, y, x) {
                    continue;
                }
                let on_face = z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w;
                if on_face
                    || !m.get(z - 1, y, x)
                    || !m.get(z + 1, y, x)
                    || !m.get(z, y - 1, x)
                    || !m.get(z, y + 1, x)
                    || !m.get(z, y, x - 1)
                    || !m.get(z, y, x + 1)
                {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

/// Value at 1-based rank `⌈q/100 · n⌉` of an ascending slice.
pub fn nearest_rank(sorted: &[f64], q: usize) -> f64 {
    assert!(!sorted.is_empty() && (1..=100).contains(&q));
    let rank = (q * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

fn scaled_points(m: &Mask) -> Vec<[f64; 3]> {
    let s = m.spacing;
    extract_boundary(m)
        .into_iter()
        .map(|[z, y, x]| [z as f64 * s[0], y as f64 * s[1], x as f64 * s[2]])
        .collect()
}

/// Sorted distances from each point of `from` to its nearest point in `to`.
fn directed(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<f64> {
    let mut d: Vec<f64> = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    let (dz, dy, dx) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
                    dz * dz + dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

fn surface_distances(g: &Mask, p: &Mask) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    same_dims(g, p)?;
    if g.spacing != p.spacing {
        return Err(Error::input(format!(
            "mask spacing differs: {:?} vs {:?}",
            g.spacing, p.spacing
        )));
    }
    let (bg, bp) = (scaled_points(g), scaled_points(p));
    if bg.is_empty() || bp.is_empty() {
        return Ok(None);
    }
    Ok(Some((directed(&bg, &bp), directed(&bp, &bg))))
}

/// 95th-percentile symmetric Hausdorff distance between boundaries in mm.
/// `None` when either mask is empty.
pub fn hd95(g: &Mask, p: &Mask) -> Result<Option<f64>> {
    Ok(surface_distances(g, p)?.map(|(a, b)| nearest_rank(&a, 95).max(nearest_rank(&b, 95))))
}

/// Full symmetric Hausdorff distance between boundaries in mm.
pub fn hausdorff(g: &Mask, p: &Mask) -> Result<Option<f64>> {
    Ok(surface_distances(g, p)?.map(|(a, b)| a[a.len() - 1].max(b[b.len() - 1])))
}

/// Scores for one class of one volume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: u8,
    pub dsc: f64,
    /// `None` flags an undefined distance (an empty mask on either side).
    pub hd95_mm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
}

impl MetricReport {
    pub fn mean_dsc(&self) -> f64 {
        if self.classes.is_empty() {
            return f64::NAN;
        }
        self.classes.iter().map(|c| c.dsc).sum::<f64>() / self.classes.len() as f64
    }

    /// Mean over defined distances; `None` if none is defined.
    pub fn mean_hd95(&self) -> Option<f64> {
        let d: Vec<f64> = self.classes.iter().filter_map(|c| c.hd95_mm).collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// Per-class DSC and HD95 of the foreground classes `1..classes`.
pub fn evaluate_volume(pred: &LabelVolume, truth: &LabelVolume, classes: usize) -> Result<MetricReport> {
    if pred.dims() != truth.dims() || pred.spacing() != truth.spacing() {
        return Err(Error::input(format!(
            "prediction {:?} @ {:?} does not match truth {:?} @ {:?}",
            pred.dims(),
            pred.spacing(),
            truth.dims(),
            truth.spacing()
        )));
    }
    if !(2..=256).contains(&classes) {
        return Err(Error::input(format!("classes must be in [2, 256], got {classes}")));
    }
    pred.check_classes(classes)?;
    truth.check_classes(classes)?;
    let mut report = MetricReport::default();
    for k in 1..classes {
        let k = k as u8;
        let (p, g) = (Mask::from_labels(pred, k), Mask::from_labels(truth, k));
        report.classes.push(ClassMetrics {
            class: k,
            dsc: dsc(&g, &p)?,
            hd95_mm: hd95(&g, &p)?,
        });
    }
    Ok(report)
}
