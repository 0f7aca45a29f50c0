use std::path::{Path, PathBuf};

use motionnet::data::{load_middlebury, load_record, MiddleburyLayout, Split, TranslatingSet, TrainingSample};
use motionnet::data::{MIDDLEBURY_TEST, MIDDLEBURY_TRAIN};
use motionnet::training::Schedule;
use motionnet::{Error, NetworkConfig, Result};
use serde::{Deserialize, Serialize};

/// The `train` / `ablate` configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub schedule: Schedule,
    pub data: DataConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataConfig {
    /// The Middlebury training sequences with public ground truth, split
    /// into a training and a test half.
    Middlebury {
        root: PathBuf,
        /// Use the test half for plateau detection during training.
        #[serde(default)]
        heldout: bool,
    },
    /// Generated translating textures.
    Synthetic {
        train: TranslatingSet,
        #[serde(default)]
        heldout: Option<TranslatingSet>,
    },
}

pub struct Datasets {
    pub train: Vec<TrainingSample>,
    pub heldout: Vec<TrainingSample>,
    /// Samples for the final report: the held-out set, or the Middlebury
    /// test half.
    pub test: Vec<TrainingSample>,
}

impl TrainFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut file: TrainFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let DataConfig::Middlebury { root, .. } = &mut file.data {
            if root.is_relative() {
                *root = path.parent().unwrap_or(Path::new(".")).join(&*root);
            }
        }
        file.network.validate()?;
        file.schedule.validate()?;
        Ok(file)
    }
}

impl DataConfig {
    pub fn load(&self, frames: usize) -> Result<Datasets> {
        match self {
            DataConfig::Middlebury { root, heldout } => {
                let (train, test) = load_middlebury(root, frames)?;
                Ok(Datasets {
                    train,
                    heldout: if *heldout { test.clone() } else { Vec::new() },
                    test,
                })
            }
            DataConfig::Synthetic { train, heldout } => {
                let heldout = match heldout {
                    Some(set) => set.generate(frames)?,
                    None => Vec::new(),
                };
                Ok(Datasets {
                    train: train.generate(frames)?,
                    test: heldout.clone(),
                    heldout,
                })
            }
        }
    }
}

/// Sequences of a Middlebury-layout tree: `names` if given, else the split.
pub fn middlebury_sequences(
    root: &Path,
    split: Split,
    names: Option<&[String]>,
    frames: usize,
) -> Result<Vec<TrainingSample>> {
    let layout = MiddleburyLayout::default();
    let defaults: Vec<String> = match split {
        Split::Train => MIDDLEBURY_TRAIN.iter().map(|s| s.to_string()).collect(),
        Split::Test => MIDDLEBURY_TEST.iter().map(|s| s.to_string()).collect(),
    };
    let names = names.unwrap_or(&defaults);
    if names.is_empty() {
        return Err(Error::Data("the split holds no sequences".into()));
    }
    names
        .iter()
        .map(|n| load_record(&layout.record(root, n, frames, split)?))
        .collect()
}
