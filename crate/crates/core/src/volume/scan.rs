use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;

use super::{format, resample, Shape3, Task, Volume};
use crate::error::{Error, Result};

const SLICE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
const PREPROCESSED_EXTENSION: &str = "cmcvol";

/// Slice index taken from the last contiguous run of ASCII digits in the
/// filename stem (`ct_0007_slice12` → 12).
pub fn slice_index(stem: &str) -> Option<u64> {
    let bytes = stem.as_bytes();
    let end = bytes.iter().rposition(u8::is_ascii_digit)? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |p| p + 1);
    stem[start..end].parse().ok()
}

fn is_slice_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| SLICE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn list_slices(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let read = fs::read_dir(dir).map_err(|e| {
        Error::Dataset(format!("cannot read scan directory {}: {e}", dir.display()))
    })?;
    let mut slices = Vec::new();
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() || !is_slice_file(&path) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let idx = slice_index(stem).ok_or_else(|| {
            Error::Dataset(format!(
                "slice file {} has no numeric index in its name",
                path.display()
            ))
        })?;
        slices.push((idx, path));
    }
    if slices.is_empty() {
        return Err(Error::Dataset(format!(
            "scan directory {} contains no slice images",
            dir.display()
        )));
    }
    slices.sort_by_key(|(i, _)| *i);
    if let Some(w) = slices.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Dataset(format!(
            "slices {} and {} share index {}",
            w[0].1.display(),
            w[1].1.display(),
            w[0].0
        )));
    }
    Ok(slices)
}

/// Decodes one slice to intensities in `[0, 1]`, rescaled by the image's
/// own value range (8-bit by 255, 16-bit by 65535).
fn read_slice(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let bad = |e: &dyn std::fmt::Display| {
        Error::Dataset(format!("unreadable slice {}: {e}", path.display()))
    };
    let img = image::ImageReader::open(path)
        .map_err(|e| bad(&e))?
        .with_guessed_format()
        .map_err(|e| bad(&e))?
        .decode()
        .map_err(|e| bad(&e))?;
    let (w, h) = (img.width(), img.height());
    let data = match &img {
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 65535.0)
            .collect(),
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => img
            .to_luma32f()
            .into_raw()
            .into_iter()
            .map(|v| {
                if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect(),
        _ => img
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
    };
    Ok((w, h, data))
}

/// Loads a slice-stack directory, orders slices by numeric index, rescales
/// intensities to `[0, 1]` and resamples to `target`.
pub fn load_scan(scan_directory: impl AsRef<Path>, target: Shape3) -> Result<Volume> {
    let dir = scan_directory.as_ref();
    target.validate()?;
    let slices = list_slices(dir)?;

    let mut dims: Option<(u32, u32)> = None;
    let mut data = Vec::new();
    for (_, path) in &slices {
        let (w, h, pixels) = read_slice(path)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) if d != (w, h) => {
                return Err(Error::Dataset(format!(
                    "slice {} is {w}x{h}, expected {}x{}",
                    path.display(),
                    d.0,
                    d.1
                )));
            }
            Some(_) => {}
        }
        data.extend(pixels);
    }
    let (w, h) = dims.expect("at least one slice");
    let n = slices.len();
    let scan_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stacked = Volume::new(
        data,
        Shape3::new(n, h as usize, w as usize),
        scan_id,
        n as u32,
    )?;
    resample(&stacked, target)
}

/// One manifest row. `scan_dir` is either a slice-stack directory or a
/// preprocessed `.cmcvol` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub scan_dir: PathBuf,
    pub label: usize,
}

impl ManifestEntry {
    pub fn load(&self, target: Shape3) -> Result<Volume> {
        let p = &self.scan_dir;
        let preprocessed = p.is_file()
            && p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case(PREPROCESSED_EXTENSION));
        if preprocessed {
            let v = format::decode(&fs::read(p).map_err(|e| Error::io(p, e))?)
                .map_err(|e| Error::Dataset(format!("{}: {e}", p.display())))?;
            resample(&v, target)
        } else {
            load_scan(p, target)
        }
    }
}

/// A labelled list of scans, read from and written to `scan_dir,label` CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub task: Task,
}

#[derive(serde::Deserialize, serde::Serialize)]
struct Row {
    scan_dir: String,
    label: usize,
}

impl DatasetManifest {
    /// Reads a manifest; relative paths resolve against the manifest's directory.
    pub fn from_csv(path: impl AsRef<Path>, task: Task) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Dataset(format!("cannot open manifest {}: {e}", path.display())))?;
        let headers = rdr
            .headers()
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        if headers.iter().collect::<Vec<_>>() != ["scan_dir", "label"] {
            return Err(Error::Dataset(format!(
                "{}: header must be `scan_dir,label`",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        for (line, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row
                .map_err(|e| Error::Dataset(format!("{} row {}: {e}", path.display(), line + 1)))?;
            let dir = PathBuf::from(&row.scan_dir);
            let scan_dir = if dir.is_absolute() {
                dir
            } else {
                base.join(dir)
            };
            entries.push(ManifestEntry {
                scan_dir,
                label: row.label,
            });
        }
        let manifest = DatasetManifest { entries, task };
        manifest.check_labels()?;
        Ok(manifest)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut wtr = csv::Writer::from_path(path)
            .map_err(|e| Error::Dataset(format!("cannot write {}: {e}", path.display())))?;
        for e in &self.entries {
            let rel = e.scan_dir.strip_prefix(base).unwrap_or(&e.scan_dir);
            wtr.serialize(Row {
                scan_dir: rel.to_string_lossy().into_owned(),
                label: e.label,
            })
            .map_err(|e| Error::Dataset(format!("cannot write {}: {e}", path.display())))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_labels(&self) -> Result<()> {
        let k = self.task.num_classes();
        if let Some(e) = self.entries.iter().find(|e| e.label >= k) {
            return Err(Error::Dataset(format!(
                "label {} of {} out of range for {} task (K={k})",
                e.label,
                e.scan_dir.display(),
                self.task
            )));
        }
        Ok(())
    }

    /// Checks that every entry exists and, for directories, holds at least
    /// one slice.
    pub fn validate(&self) -> Result<()> {
        self.check_labels()?;
        for e in &self.entries {
            if e.scan_dir.is_file() {
                continue;
            }
            list_slices(&e.scan_dir)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_last_digit_run() {
        assert_eq!(slice_index("slice_9"), Some(9));
        assert_eq!(slice_index("slice_10"), Some(10));
        assert_eq!(slice_index("ct01_img0042"), Some(42));
        assert_eq!(slice_index("7"), Some(7));
        assert_eq!(slice_index("img12b"), Some(12));
        assert_eq!(slice_index("cover"), None);
    }

    fn write_png(path: &Path, w: u32, h: u32, f: impl Fn(u32, u32) -> u8) {
        image::GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn numeric_not_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        for i in [1u8, 2, 9, 10, 11] {
            write_png(&dir.path().join(format!("slice_{i}.png")), 2, 2, |_, _| {
                i * 20
            });
        }
        let v = load_scan(dir.path(), Shape3::new(5, 2, 2)).unwrap();
        let firsts: Vec<f32> = (0..5).map(|z| v.get(z, 0, 0)).collect();
        let expect: Vec<f32> = [1u8, 2, 9, 10, 11]
            .iter()
            .map(|&i| (i * 20) as f32 / 255.0)
            .collect();
        assert_eq!(firsts, expect);
        assert_eq!(v.source_slice_count(), 5);
    }

    #[test]
    fn sixteen_bit_slices_use_full_range() {
        let dir = tempfile::tempdir().unwrap();
        image::ImageBuffer::<image::Luma<u16>, _>::from_fn(2, 1, |x, _| {
            image::Luma([if x == 0 { 0 } else { 65535 }])
        })
        .save(dir.path().join("s0.png"))
        .unwrap();
        let v = load_scan(dir.path(), Shape3::new(1, 1, 2)).unwrap();
        assert_eq!(v.data(), &[0.0, 1.0]);
    }

    #[test]
    fn errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_scan(dir.path(), Shape3::new(1, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("no slice")));

        write_png(&dir.path().join("a1.png"), 2, 2, |_, _| 0);
        write_png(&dir.path().join("a2.png"), 3, 2, |_, _| 0);
        let err = load_scan(dir.path(), Shape3::new(1, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("a2.png")));

        fs::remove_file(dir.path().join("a2.png")).unwrap();
        fs::write(dir.path().join("a3.png"), b"not a png").unwrap();
        let err = load_scan(dir.path(), Shape3::new(1, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("a3.png")));

        fs::remove_file(dir.path().join("a3.png")).unwrap();
        write_png(&dir.path().join("cover.png"), 2, 2, |_, _| 0);
        let err = load_scan(dir.path(), Shape3::new(1, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("cover.png")));
    }

    #[test]
    fn manifest_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "scan_dir,label\nscans/a,0\nscans/b,1\n").unwrap();
        let m = DatasetManifest::from_csv(&path, Task::Detection).unwrap();
        assert_eq!(m.entries[1].scan_dir, dir.path().join("scans/b"));
        assert_eq!(m.labels(), vec![0, 1]);

        let out = dir.path().join("m2.csv");
        m.write_csv(&out).unwrap();
        assert_eq!(
            fs::read_to_string(&out).unwrap(),
            "scan_dir,label\nscans/a,0\nscans/b,1\n"
        );

        fs::write(&path, "dir,label\na,0\n").unwrap();
        assert!(DatasetManifest::from_csv(&path, Task::Detection).is_err());
        fs::write(&path, "scan_dir,label\na,2\n").unwrap();
        assert!(DatasetManifest::from_csv(&path, Task::Detection).is_err());
        assert!(DatasetManifest::from_csv(&path, Task::Severity).is_ok());
    }
}
