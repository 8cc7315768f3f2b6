//! Resolving node data sources and cutting them into model inputs.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::{DataSource, ExperimentConfig};
use super::HarnessError;
use crate::fed::NodeData;
use crate::signal::{
    chronological_split, downsample, expected_ims_files, load_csv_dataset, load_ims_channels,
    make_windows, parse_ims_timestamp, standardize, synth_generate, Dataset, Split, Window,
};

/// A dataset after resampling, with its size before resampling.
#[derive(Clone, Debug)]
pub struct LoadedSource {
    pub dataset: Dataset,
    pub raw_original_bytes: u64,
}

fn ims_hint(dir: &Path) -> String {
    format!(
        "download the IMS bearing run-to-failure data from the NASA prognostics data repository \
         and extract one test set so that {} holds the timestamp-named measurement files \
         (`fedvib fetch-ims` checks the result)",
        dir.display()
    )
}

/// Counts IMS measurement files in `dir`; with `set`, also checks the count
/// against that test set's size.
pub fn verify_ims_dir(dir: &Path, set: Option<u8>) -> Result<usize, HarnessError> {
    let missing = || HarnessError::DatasetMissing {
        path: dir.to_path_buf(),
        hint: ims_hint(dir),
    };
    let entries = std::fs::read_dir(dir).map_err(|_| missing())?;
    let mut count = 0;
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.is_file() && parse_ims_timestamp(&path).is_ok() {
            count += 1;
        }
    }
    if count == 0 {
        return Err(missing());
    }
    if let Some(expected) = set.and_then(expected_ims_files) {
        if count != expected {
            return Err(HarnessError::DatasetMissing {
                path: dir.to_path_buf(),
                hint: format!(
                    "found {count} measurement files, test set {} has {expected}; {}",
                    set.unwrap_or_default(),
                    ims_hint(dir)
                ),
            });
        }
    }
    Ok(count)
}

fn resample(dataset: Dataset, cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    if cfg.downsample_factor == 1 {
        return Ok(dataset);
    }
    Ok(dataset.map_batches(|b| downsample(b, cfg.downsample_factor, cfg.downsample_method))?)
}

/// Loads and resamples one source.
pub fn load_source(source: &DataSource, cfg: &ExperimentConfig) -> Result<LoadedSource, HarnessError> {
    let dataset = match source {
        DataSource::Synth(s) => synth_generate(s)?,
        DataSource::Csv { manifest } => {
            if !manifest.exists() {
                return Err(HarnessError::DatasetMissing {
                    path: manifest.clone(),
                    hint: "run `fedvib synth --out <dir>` or point `manifest` at an existing manifest.csv".into(),
                });
            }
            load_csv_dataset(manifest)?
        }
        DataSource::Ims { dir, channel } => return Ok(load_ims(dir, &[*channel], cfg)?.remove(0)),
    };
    let raw_original_bytes = dataset.raw_bytes();
    Ok(LoadedSource {
        dataset: resample(dataset, cfg)?,
        raw_original_bytes,
    })
}

fn load_ims(dir: &Path, channels: &[usize], cfg: &ExperimentConfig) -> Result<Vec<LoadedSource>, HarnessError> {
    verify_ims_dir(dir, None)?;
    // counts bytes over all channels; they share every file so split evenly
    let original = Cell::new(0u64);
    let datasets = load_ims_channels(dir, channels, |b| {
        original.set(original.get() + b.raw_bytes());
        downsample(&b, cfg.downsample_factor, cfg.downsample_method)
    })?;
    let per_channel = original.get() / channels.len() as u64;
    Ok(datasets
        .into_iter()
        .map(|dataset| LoadedSource {
            dataset,
            raw_original_bytes: per_channel,
        })
        .collect())
}

/// Loads several sources, reading each IMS directory only once.
pub(crate) fn load_sources(sources: &[&DataSource], cfg: &ExperimentConfig) -> Result<Vec<LoadedSource>, HarnessError> {
    let mut out: Vec<Option<LoadedSource>> = vec![None; sources.len()];
    let mut ims: BTreeMap<PathBuf, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, s) in sources.iter().enumerate() {
        match s {
            DataSource::Ims { dir, channel } => ims.entry(dir.clone()).or_default().push((i, *channel)),
            other => out[i] = Some(load_source(other, cfg)?),
        }
    }
    for (dir, members) in ims {
        let channels: Vec<usize> = members.iter().map(|&(_, c)| c).collect();
        for ((i, _), loaded) in members.iter().zip(load_ims(&dir, &channels, cfg)?) {
            out[*i] = Some(loaded);
        }
    }
    Ok(out.into_iter().map(|o| o.expect("every source loaded")).collect())
}

/// One node's data, split chronologically and windowed.
#[derive(Clone, Debug)]
pub struct PreparedNode {
    pub id: String,
    /// Resampled and, if configured, standardized batches.
    pub dataset: Dataset,
    pub split: Split,
    pub fit: Vec<Window>,
    pub val: Vec<Window>,
    /// Windows of each validation batch, the threshold reference set.
    pub calibration: Vec<Vec<Window>>,
    pub raw_bytes: u64,
    pub raw_original_bytes: u64,
}

impl PreparedNode {
    pub fn node_data(&self) -> NodeData {
        NodeData {
            train: self.fit.clone(),
            val: self.val.clone(),
            calibration: self.calibration.clone(),
        }
    }
}

pub(crate) fn batch_windows(dataset: &Dataset, range: std::ops::Range<usize>, window: usize) -> Result<Vec<Vec<Window>>, HarnessError> {
    range
        .map(|i| Ok(make_windows(&dataset.batches()[i], i, window)?))
        .collect()
}

pub fn prepare_node(id: &str, loaded: LoadedSource, cfg: &ExperimentConfig) -> Result<PreparedNode, HarnessError> {
    let LoadedSource {
        dataset,
        raw_original_bytes,
    } = loaded;
    if dataset.feature_count != cfg.model.feature_count {
        return Err(HarnessError::Config(format!(
            "node {id}: data has {} features, model expects {}",
            dataset.feature_count, cfg.model.feature_count
        )));
    }
    let raw_bytes = dataset.raw_bytes();
    let split = chronological_split(dataset.len(), &cfg.split)?;
    let dataset = if cfg.standardize {
        standardize(&dataset, split.fit.clone())?.0
    } else {
        dataset
    };
    let w = cfg.model.window_size;
    let fit: Vec<Window> = batch_windows(&dataset, split.fit.clone(), w)?.into_iter().flatten().collect();
    let calibration = batch_windows(&dataset, split.validation.clone(), w)?;
    if fit.is_empty() || calibration.iter().any(Vec::is_empty) {
        return Err(HarnessError::Config(format!(
            "node {id}: batches are shorter than the window size {w}"
        )));
    }
    let val = calibration.iter().flatten().cloned().collect();
    Ok(PreparedNode {
        id: id.to_string(),
        dataset,
        split,
        fit,
        val,
        calibration,
        raw_bytes,
        raw_original_bytes,
    })
}

pub fn prepare_nodes(cfg: &ExperimentConfig) -> Result<Vec<PreparedNode>, HarnessError> {
    let sources: Vec<&DataSource> = cfg.nodes.iter().map(|n| &n.source).collect();
    load_sources(&sources, cfg)?
        .into_iter()
        .zip(&cfg.nodes)
        .map(|(loaded, spec)| prepare_node(&spec.id, loaded, cfg))
        .collect()
}
