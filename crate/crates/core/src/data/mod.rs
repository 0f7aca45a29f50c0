//! Dataset ingestion and synthetic sequences with exact ground truth.

mod synth;

pub use synth::{
    synth_sequence, translating_dataset, MotionLayer, Synthetic, SyntheticSpec, Texture,
    TranslatingSet,
};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::field::{FlowField, ValidMask};
use crate::flow_io::FloFile;
use crate::tensor::Tensor3;

/// Frames plus full-resolution ground truth for the reference pair.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub name: String,
    /// Grayscale planes in `[0, 1]`.
    pub frames: Vec<Tensor3>,
    pub flow: FlowField,
    pub mask: ValidMask,
}

impl TrainingSample {
    pub fn height(&self) -> usize {
        self.flow.height()
    }

    pub fn width(&self) -> usize {
        self.flow.width()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> TrainingSample {
        let frames = self
            .frames
            .iter()
            .map(|f| Tensor3::from_fn(height, width, 1, |i, j, _| f[(top + i, left + j, 0)]))
            .collect();
        TrainingSample {
            name: self.name.clone(),
            frames,
            flow: FlowField::from_fn(height, width, |i, j| self.flow.at(top + i, left + j)),
            mask: self.mask.crop(top, left, height, width),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub const MIDDLEBURY_TRAIN: [&str; 3] = ["Grove2", "RubberWhale", "Urban3"];
pub const MIDDLEBURY_TEST: [&str; 3] = ["Grove3", "Dimetrodon", "Hydrangea"];

/// Where frames and ground truth live below the dataset root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiddleburyLayout {
    pub frames_dir: String,
    pub flow_dir: String,
    /// Number of the first frame of the annotated pair.
    pub annotated_frame: usize,
    pub flow_file: String,
}

impl Default for MiddleburyLayout {
    fn default() -> Self {
        MiddleburyLayout {
            frames_dir: "other-data".into(),
            flow_dir: "other-gt-flow".into(),
            annotated_frame: 10,
            flow_file: "flow10.flo".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceRecord {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub flow: PathBuf,
    pub split: Split,
}

impl MiddleburyLayout {
    /// Frame paths for an `F`-frame stack centered so that the annotated pair
    /// sits at zero-based positions `ceil(F/2) - 1` and `ceil(F/2)`.
    pub fn record(&self, root: &Path, name: &str, frames: usize, split: Split) -> Result<SequenceRecord> {
        let reference = frames.div_ceil(2) - 1;
        let first = self
            .annotated_frame
            .checked_sub(reference)
            .ok_or_else(|| Error::Data(format!("{name}: not enough frames before the annotated pair")))?;
        let dir = root.join(&self.frames_dir).join(name);
        let paths: Vec<PathBuf> = (first..first + frames)
            .map(|n| dir.join(format!("frame{n:02}.png")))
            .collect();
        if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
            return Err(Error::Data(format!(
                "{name}: {frames}-frame stack needs {}, which is missing",
                missing.display()
            )));
        }
        let flow = root.join(&self.flow_dir).join(name).join(&self.flow_file);
        if !flow.is_file() {
            return Err(Error::Data(format!("{name}: missing ground truth {}", flow.display())));
        }
        Ok(SequenceRecord {
            name: name.into(),
            frames: paths,
            flow,
            split,
        })
    }
}

/// Reads an image as grayscale in `[0, 1]` with luma weights
/// 0.299 / 0.587 / 0.114.
pub fn load_gray(path: impl AsRef<Path>) -> Result<Tensor3> {
    let img = image::open(path.as_ref())?.into_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor3::from_fn(h, w, 1, |i, j, _| {
        let p = img.get_pixel(j as u32, i as u32).0;
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    }))
}

/// Writes channel 0 as an 8-bit grayscale PNG, clamping to `[0, 1]`.
pub fn save_gray(path: impl AsRef<Path>, plane: &Tensor3) -> Result<()> {
    let img = image::GrayImage::from_fn(plane.width() as u32, plane.height() as u32, |x, y| {
        let v = plane[(y as usize, x as usize, 0)].clamp(0.0, 1.0);
        image::Luma([(v * 255.0).round() as u8])
    });
    img.save(path)?;
    Ok(())
}

pub fn load_record(record: &SequenceRecord) -> Result<TrainingSample> {
    let frames = record
        .frames
        .iter()
        .map(load_gray)
        .collect::<Result<Vec<_>>>()?;
    let flo = FloFile::parse(&std::fs::read(&record.flow)?)?;
    let (h, w) = (flo.height, flo.width);
    if frames.iter().any(|f| (f.height(), f.width()) != (h, w)) {
        return Err(Error::Data(format!(
            "{}: frames and ground truth differ in size",
            record.name
        )));
    }
    Ok(TrainingSample {
        name: record.name.clone(),
        frames,
        flow: flo.flow(),
        mask: flo.mask(),
    })
}

/// Loads the six-sequence half split: `(train, test)`.
pub fn load_middlebury(root: impl AsRef<Path>, frames: usize) -> Result<(Vec<TrainingSample>, Vec<TrainingSample>)> {
    let layout = MiddleburyLayout::default();
    let load = |names: &[&str], split| -> Result<Vec<TrainingSample>> {
        names
            .iter()
            .map(|n| load_record(&layout.record(root.as_ref(), n, frames, split)?))
            .collect()
    };
    Ok((load(&MIDDLEBURY_TRAIN, Split::Train)?, load(&MIDDLEBURY_TEST, Split::Test)?))
}
