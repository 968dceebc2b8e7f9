//! CT volumes: the in-memory grid, slice-stack loading, resampling, the
//! binary volume file format and a synthetic scan generator.

mod format;
mod resample;
mod scan;
mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{load_volume, save_volume, VOLUME_FORMAT_VERSION, VOLUME_MAGIC};
pub use resample::resample;
pub use scan::{load_scan, slice_index, DatasetManifest, ManifestEntry};
pub use synth::{generate_synthetic_dataset, write_synthetic_dataset, SynthConfig};

/// Depth × height × width extent of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Shape3 {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub const fn new(d: usize, h: usize, w: usize) -> Self {
        Shape3 { d, h, w }
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.h < 1 || self.w < 1 {
            return Err(Error::Shape(format!(
                "every dimension must be at least 1, got {self}"
            )));
        }
        Ok(())
    }
}

impl From<[usize; 3]> for Shape3 {
    fn from([d, h, w]: [usize; 3]) -> Self {
        Shape3 { d, h, w }
    }
}

impl From<Shape3> for [usize; 3] {
    fn from(s: Shape3) -> Self {
        [s.d, s.h, s.w]
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.d, self.h, self.w)
    }
}

impl FromStr for Shape3 {
    type Err = Error;

    /// Parses `DxHxW`, e.g. `128x256x256`.
    fn from_str(s: &str) -> Result<Self> {
        let dims: Vec<usize> = s
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Shape(format!("cannot parse shape {s:?}, expected DxHxW")))?;
        match dims.as_slice() {
            &[d, h, w] => {
                let shape = Shape3 { d, h, w };
                shape.validate()?;
                Ok(shape)
            }
            _ => Err(Error::Shape(format!(
                "cannot parse shape {s:?}, expected DxHxW"
            ))),
        }
    }
}

/// Classification task. Detection is COVID vs non-COVID; severity has the
/// four stages Mild, Moderate, Severe and Critical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    Severity,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Detection => 2,
            Task::Severity => 4,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Detection => "detection",
            Task::Severity => "severity",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "detection" => Ok(Task::Detection),
            "severity" => Ok(Task::Severity),
            other => Err(Error::Config(format!(
                "unknown task {other:?}, expected detection or severity"
            ))),
        }
    }
}

/// One CT scan as a dense intensity grid stored depth-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Vec<f32>,
    shape: Shape3,
    scan_id: String,
    source_slice_count: u32,
}

impl Volume {
    pub fn new(
        data: Vec<f32>,
        shape: Shape3,
        scan_id: impl Into<String>,
        source_slice_count: u32,
    ) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} voxels supplied for shape {shape}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite voxel at flat index {pos}"
            )));
        }
        Ok(Volume {
            data,
            shape,
            scan_id: scan_id.into(),
            source_slice_count,
        })
    }

    pub fn filled(shape: Shape3, value: f32, scan_id: impl Into<String>) -> Result<Self> {
        Volume::new(vec![value; shape.len()], shape, scan_id, shape.d as u32)
    }

    /// Builds a volume by evaluating `f(z, y, x)` at every voxel.
    pub fn from_fn(
        shape: Shape3,
        scan_id: impl Into<String>,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for z in 0..shape.d {
            for y in 0..shape.h {
                for x in 0..shape.w {
                    data.push(f(z, y, x));
                }
            }
        }
        Volume::new(data, shape, scan_id, shape.d as u32)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn scan_id(&self) -> &str {
        &self.scan_id
    }

    pub fn source_slice_count(&self) -> u32 {
        self.source_slice_count
    }

    pub fn with_scan_id(mut self, scan_id: impl Into<String>) -> Self {
        self.scan_id = scan_id.into();
        self
    }

    pub fn with_source_slice_count(mut self, n: u32) -> Self {
        self.source_slice_count = n;
        self
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    /// One depth plane as a row-major `h × w` slice.
    pub fn plane(&self, z: usize) -> &[f32] {
        let n = self.shape.h * self.shape.w;
        &self.data[z * n..(z + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copies the sub-box starting at `origin` with extent `extent`.
    pub fn crop(&self, origin: (usize, usize, usize), extent: Shape3) -> Result<Volume> {
        extent.validate()?;
        let (z0, y0, x0) = origin;
        if z0 + extent.d > self.shape.d
            || y0 + extent.h > self.shape.h
            || x0 + extent.w > self.shape.w
        {
            return Err(Error::Shape(format!(
                "crop {extent} at {origin:?} exceeds volume {}",
                self.shape
            )));
        }
        let mut data = Vec::with_capacity(extent.len());
        for z in z0..z0 + extent.d {
            for y in y0..y0 + extent.h {
                let start = self.index(z, y, x0);
                data.extend_from_slice(&self.data[start..start + extent.w]);
            }
        }
        Ok(Volume {
            data,
            shape: extent,
            scan_id: self.scan_id.clone(),
            source_slice_count: self.source_slice_count,
        })
    }

    /// Keeps the `depth` contiguous slices starting at `start`.
    pub fn z_window(&self, start: usize, depth: usize) -> Result<Volume> {
        self.crop(
            (start, 0, 0),
            Shape3::new(depth, self.shape.h, self.shape.w),
        )
    }

    pub(crate) fn map_data(&self, data: Vec<f32>) -> Volume {
        debug_assert_eq!(data.len(), self.data.len());
        Volume {
            data,
            shape: self.shape,
            scan_id: self.scan_id.clone(),
            source_slice_count: self.source_slice_count,
        }
    }

    pub(crate) fn from_parts_unchecked(
        data: Vec<f32>,
        shape: Shape3,
        scan_id: String,
        source_slice_count: u32,
    ) -> Volume {
        Volume {
            data,
            shape,
            scan_id,
            source_slice_count,
        }
    }
}

/// A volume with its class label for a given task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub volume: Volume,
    pub label: usize,
    pub task: Task,
}

impl LabeledSample {
    pub fn new(volume: Volume, label: usize, task: Task) -> Result<Self> {
        if label >= task.num_classes() {
            return Err(Error::Input(format!(
                "label {label} out of range for {task} task with {} classes",
                task.num_classes()
            )));
        }
        Ok(LabeledSample {
            volume,
            label,
            task,
        })
    }
}
