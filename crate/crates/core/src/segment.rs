//! Sliding-window segmentation and patch extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::EmgRecording;

/// Longest window accepted, in seconds.
pub const MAX_WINDOW_SECONDS: f64 = 0.3;

/// One `(time × grid_rows × grid_cols)` segment, stored time-major then
/// row-major over the electrode grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTensor {
    data: Vec<f64>,
    window_size: usize,
    grid_rows: usize,
    grid_cols: usize,
    pub gesture_id: u32,
    pub subject_id: u32,
    pub repetition_id: u32,
}

impl WindowTensor {
    pub fn new(
        data: Vec<f64>,
        window_size: usize,
        grid_rows: usize,
        grid_cols: usize,
        gesture_id: u32,
        subject_id: u32,
        repetition_id: u32,
    ) -> Result<Self> {
        if window_size == 0 || grid_rows == 0 || grid_cols == 0 {
            return Err(Error::Shape("window dimensions must be positive".into()));
        }
        if data.len() != window_size * grid_rows * grid_cols {
            return Err(Error::Shape(format!(
                "{} values for a ({window_size}, {grid_rows}, {grid_cols}) window",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("window contains non-finite values".into()));
        }
        Ok(Self {
            data,
            window_size,
            grid_rows,
            grid_cols,
            gesture_id,
            subject_id,
            repetition_id,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.window_size, self.grid_rows, self.grid_cols)
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn num_channels(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, t: usize, row: usize, col: usize) -> f64 {
        self.data[(t * self.grid_rows + row) * self.grid_cols + col]
    }

    /// Series of one flattened channel (`row * grid_cols + col`).
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        let c = self.num_channels();
        (0..self.window_size).map(|t| self.data[t * c + channel]).collect()
    }

    /// Same window with a different class label.
    pub fn relabeled(&self, gesture_id: u32) -> Self {
        Self {
            gesture_id,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowingSpec {
    pub window_size: usize,
    pub skip_step: usize,
}

impl Default for WindowingSpec {
    fn default() -> Self {
        Self {
            window_size: 64,
            skip_step: 32,
        }
    }
}

impl WindowingSpec {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if self.window_size == 0 || self.skip_step == 0 || self.skip_step > self.window_size {
            return Err(Error::Config(format!(
                "need 1 <= skip_step ({}) <= window_size ({})",
                self.skip_step, self.window_size
            )));
        }
        let seconds = self.window_size as f64 / sample_rate_hz;
        if seconds > MAX_WINDOW_SECONDS {
            return Err(Error::Config(format!(
                "window of {} samples lasts {:.1} ms at {sample_rate_hz} Hz, above the {} ms limit",
                self.window_size,
                seconds * 1e3,
                MAX_WINDOW_SECONDS * 1e3
            )));
        }
        Ok(())
    }

    /// Number of full windows in `num_samples`; zero when none fits.
    pub fn count(&self, num_samples: usize) -> usize {
        if num_samples < self.window_size {
            0
        } else {
            (num_samples - self.window_size) / self.skip_step + 1
        }
    }
}

/// Cuts a recording into overlapping windows. Channel `c` lands on grid cell
/// `(c / grid_cols, c % grid_cols)`.
pub fn slide_windows(
    recording: &EmgRecording,
    grid_rows: usize,
    grid_cols: usize,
    spec: &WindowingSpec,
) -> Result<Vec<WindowTensor>> {
    spec.validate(recording.sample_rate_hz())?;
    if recording.num_channels() != grid_rows * grid_cols {
        return Err(Error::Shape(format!(
            "{} channels do not fill a {grid_rows}x{grid_cols} grid",
            recording.num_channels()
        )));
    }
    let count = spec.count(recording.num_samples());
    if count == 0 {
        return Err(Error::EmptyResult(format!(
            "{} samples cannot hold a {}-sample window",
            recording.num_samples(),
            spec.window_size
        )));
    }
    let stride = recording.num_channels();
    // Sample-major storage already matches the (time, row, col) window layout.
    (0..count)
        .map(|k| {
            let start = k * spec.skip_step * stride;
            WindowTensor::new(
                recording.samples()[start..start + spec.window_size * stride].to_vec(),
                spec.window_size,
                grid_rows,
                grid_cols,
                recording.gesture_id,
                recording.subject_id,
                recording.repetition_id,
            )
        })
        .collect()
}

/// Which 2-D plane a window is cut into patches over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchLayout {
    /// Plane of (time × flattened channels); each patch is `p × p` values.
    #[default]
    TimeByChannels,
    /// Plane of the electrode grid with time stacked as depth; each patch is
    /// `p × p × window_size` values, flattened as (grid row, grid col, time).
    GridDepth,
}

/// Patch layout plus patch side, i.e. everything patchify needs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub layout: PatchLayout,
    pub patch_side: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    patches: Vec<f64>,
    num_patches: usize,
    patch_dim: usize,
}

impl PatchSequence {
    pub fn num_patches(&self) -> usize {
        self.num_patches
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_dim
    }

    /// Row-major `num_patches × patch_dim` matrix.
    pub fn data(&self) -> &[f64] {
        &self.patches
    }

    pub fn patch(&self, i: usize) -> &[f64] {
        &self.patches[i * self.patch_dim..(i + 1) * self.patch_dim]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.patches
    }
}

impl PatchGeometry {
    pub fn new(layout: PatchLayout, patch_side: usize) -> Self {
        Self { layout, patch_side }
    }

    /// `(plane_height, plane_width, depth)` of the plane patches are cut from.
    fn plane(&self, window: (usize, usize, usize)) -> (usize, usize, usize) {
        let (t, rows, cols) = window;
        match self.layout {
            PatchLayout::TimeByChannels => (t, rows * cols, 1),
            PatchLayout::GridDepth => (rows, cols, t),
        }
    }

    /// `(num_patches, patch_dim)` for a window of the given shape.
    pub fn dims(&self, window: (usize, usize, usize)) -> Result<(usize, usize)> {
        let (h, w, depth) = self.plane(window);
        let p = self.patch_side;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Shape(format!(
                "{h}x{w} patch plane ({:?}) is not divisible into {p}x{p} patches",
                self.layout
            )));
        }
        Ok(((h / p) * (w / p), p * p * depth))
    }

    /// Plane element `(y, x, d)` → flat window index.
    fn window_index(&self, window: (usize, usize, usize), y: usize, x: usize, d: usize) -> usize {
        let (_, rows, cols) = window;
        match self.layout {
            PatchLayout::TimeByChannels => y * rows * cols + x,
            PatchLayout::GridDepth => (d * rows + y) * cols + x,
        }
    }

    /// Visits every (patch index, offset in patch, window index) triple.
    fn for_each_element(
        &self,
        window: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize),
    ) -> Result<(usize, usize)> {
        let (num_patches, patch_dim) = self.dims(window)?;
        let (_, w, depth) = self.plane(window);
        let p = self.patch_side;
        let grid_w = w / p;
        for patch in 0..num_patches {
            let (py, px) = (patch / grid_w, patch % grid_w);
            let mut offset = 0;
            for dy in 0..p {
                for dx in 0..p {
                    for d in 0..depth {
                        let idx = self.window_index(window, py * p + dy, px * p + dx, d);
                        f(patch, offset, idx);
                        offset += 1;
                    }
                }
            }
        }
        Ok((num_patches, patch_dim))
    }

    /// Splits a window into row-major ordered, row-major flattened patches.
    pub fn patchify(&self, window: &WindowTensor) -> Result<PatchSequence> {
        let shape = window.shape();
        let (num_patches, patch_dim) = self.dims(shape)?;
        let mut patches = vec![0.0; num_patches * patch_dim];
        let src = window.data();
        self.for_each_element(shape, |patch, offset, idx| {
            patches[patch * patch_dim + offset] = src[idx];
        })?;
        Ok(PatchSequence {
            patches,
            num_patches,
            patch_dim,
        })
    }

    /// Inverse of [`PatchGeometry::patchify`]; labels are taken from `labels`.
    pub fn unpatchify(
        &self,
        patches: &PatchSequence,
        shape: (usize, usize, usize),
        labels: (u32, u32, u32),
    ) -> Result<WindowTensor> {
        let (num_patches, patch_dim) = self.dims(shape)?;
        if (num_patches, patch_dim) != (patches.num_patches, patches.patch_dim) {
            return Err(Error::Shape(format!(
                "patch sequence {}x{} does not match window {shape:?}",
                patches.num_patches, patches.patch_dim
            )));
        }
        let mut data = vec![0.0; shape.0 * shape.1 * shape.2];
        self.for_each_element(shape, |patch, offset, idx| {
            data[idx] = patches.patches[patch * patch_dim + offset];
        })?;
        WindowTensor::new(data, shape.0, shape.1, shape.2, labels.0, labels.1, labels.2)
    }
}

/// Segmentation settings as they appear in run configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub window_size: usize,
    pub skip_step: usize,
    pub patch_side: usize,
    pub patch_layout: PatchLayout,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            window_size: 64,
            skip_step: 32,
            patch_side: 4,
            patch_layout: PatchLayout::TimeByChannels,
        }
    }
}

impl SegmentConfig {
    pub fn windowing(&self) -> WindowingSpec {
        WindowingSpec {
            window_size: self.window_size,
            skip_step: self.skip_step,
        }
    }

    pub fn geometry(&self) -> PatchGeometry {
        PatchGeometry::new(self.patch_layout, self.patch_side)
    }
}
