use crate::error::{Error, Result};

/// Voxel spacing `(z, y, x)` in millimetres.
pub type Spacing = [f32; 3];

fn check_geometry(dims: [usize; 3], spacing: Spacing, len: usize) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::input(format!("volume dims {dims:?} contain a zero")));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::input(format!("spacing {spacing:?} must be positive")));
    }
    let n = dims.iter().product::<usize>();
    if n != len {
        return Err(Error::input(format!(
            "dims {dims:?} need {n} voxels, got {len}"
        )));
    }
    Ok(())
}

/// Intensity volume, `D × H × W`, z-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: Spacing,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        check_geometry(dims, spacing, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("voxel {i} is not finite")));
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn depth(&self) -> usize {
        self.dims[0]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    /// Applies `f` to every slice in place, keeping the in-plane extent.
    pub fn map_slices(&mut self, mut f: impl FnMut(usize, &mut [f32])) {
        let n = self.slice_len();
        for (z, s) in self.data.chunks_mut(n).enumerate() {
            f(z, s);
        }
    }
}

/// Integer label volume with the same layout as [`Volume`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: Spacing,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        check_geometry(dims, spacing, data.len())?;
        Ok(LabelVolume { dims, spacing, data })
    }

    /// Stacks per-slice label maps of one extent into a volume.
    pub fn from_slices(slices: &[Vec<u8>], height: usize, width: usize, spacing: Spacing) -> Result<Self> {
        let mut data = Vec::with_capacity(slices.len() * height * width);
        for (z, s) in slices.iter().enumerate() {
            if s.len() != height * width {
                return Err(Error::dim(format!(
                    "slice {z} has {} labels, expected {}",
                    s.len(),
                    height * width
                )));
            }
            data.extend_from_slice(s);
        }
        Self::new([slices.len(), height, width], spacing, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn depth(&self) -> usize {
        self.dims[0]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Fails when any label is `>= classes`.
    pub fn check_classes(&self, classes: usize) -> Result<()> {
        match self.data.iter().position(|&l| l as usize >= classes) {
            Some(i) => Err(Error::input(format!(
                "label {} at voxel {i} is outside [0, {classes})",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }
}
