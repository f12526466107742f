//! Cached dataset, model and denoiser stages shared by all subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use pnp_cosmo::csmodel::{
    finetune, pretrain, CosmoModel, LossWeights, ModelConfig, TrainConfig, TrainData,
};
use pnp_cosmo::dataset::{
    build_dataset, read_dataset, write_dataset, Dataset, DatasetConfig, Split,
};
use pnp_cosmo::denoiser::{CnnDenoiser, DenoiserConfig};
use pnp_cosmo::{CosmoError, Result};
use serde::Serialize;

use crate::spec::{hash_hex, ExperimentSpec};

/// One trained model configuration in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    /// `alpha2 = alpha3`, when swept.
    pub alpha: Option<f64>,
    pub downsample: usize,
    pub degrade: usize,
}

impl Variant {
    pub fn label(&self) -> String {
        let a = self.alpha.map(|a| format!("a{a}_")).unwrap_or_default();
        format!("{a}m{}_n{}", self.downsample, self.degrade)
    }

    pub fn capacity(&self) -> f64 {
        1.0 / (self.downsample * self.downsample) as f64
    }

    pub fn model_config(&self, spec: &ExperimentSpec) -> ModelConfig {
        ModelConfig {
            downsample: self.downsample,
            ..spec.model.clone()
        }
    }

    pub fn pretrain_config(&self, spec: &ExperimentSpec) -> TrainConfig {
        let mut cfg = spec.pretrain.clone();
        if let Some(a) = self.alpha {
            cfg.weights = LossWeights {
                alpha2: a,
                alpha3: a,
                ..cfg.weights
            };
        }
        cfg
    }
}

pub fn variants(spec: &ExperimentSpec) -> Vec<Variant> {
    let g = &spec.grid;
    let alphas: Vec<Option<f64>> = if g.alphas.is_empty() {
        vec![None]
    } else {
        g.alphas.iter().map(|&a| Some(a)).collect()
    };
    let downs = if g.downsamples.is_empty() {
        vec![spec.model.downsample]
    } else {
        g.downsamples.clone()
    };
    let mut out = Vec::new();
    for &alpha in &alphas {
        for &downsample in &downs {
            for &degrade in &g.degradations {
                out.push(Variant {
                    alpha,
                    downsample,
                    degrade,
                });
            }
        }
    }
    out
}

fn stamp<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("stamp serializes")
}

fn stamp_matches(dir: &Path, text: &str) -> bool {
    fs::read_to_string(dir.join("stamp.toml")).is_ok_and(|s| s == text)
}

fn write_stamp(dir: &Path, text: &str) -> Result<()> {
    fs::write(dir.join("stamp.toml"), text)?;
    Ok(())
}

/// Datasets and trained models are shared by every experiment under `out`.
fn cache_dir(spec: &ExperimentSpec) -> PathBuf {
    spec.out.join("cache")
}

fn data_dir(spec: &ExperimentSpec) -> PathBuf {
    cache_dir(spec).join(format!(
        "data-{}",
        hash_hex(stamp(&spec.dataset).as_bytes())
    ))
}

/// Builds the dataset, or reads it back when an identical one is on disk.
pub fn dataset(spec: &ExperimentSpec) -> Result<Dataset> {
    dataset_at(&spec.dataset, &data_dir(spec))
}

fn dataset_at(cfg: &DatasetConfig, dir: &Path) -> Result<Dataset> {
    let text = stamp(cfg);
    if stamp_matches(dir, &text) {
        return read_dataset(dir);
    }
    let ds = build_dataset(cfg)?;
    write_dataset(&ds, dir)?;
    write_stamp(dir, &text)?;
    Ok(ds)
}

#[derive(Serialize)]
struct ModelStamp<'a> {
    dataset: &'a DatasetConfig,
    model: ModelConfig,
    degrade: usize,
    pretrain: TrainConfig,
    finetune: Option<&'a TrainConfig>,
}

fn model_dir(spec: &ExperimentSpec, stage: &str, text: &str) -> PathBuf {
    cache_dir(spec).join(format!("{stage}-{}", hash_hex(text.as_bytes())))
}

fn load_or_train(
    dir: &Path,
    text: &str,
    train: impl FnOnce() -> Result<(CosmoModel, pnp_cosmo::csmodel::LossHistory)>,
) -> Result<CosmoModel> {
    if stamp_matches(dir, text) {
        return CosmoModel::load(dir);
    }
    let (model, history) = train()?;
    model.save(dir)?;
    history.save(&dir.join("loss.csv"))?;
    write_stamp(dir, text)?;
    Ok(model)
}

/// Pre-trained model of `v`, trained on first use.
pub fn pretrained(spec: &ExperimentSpec, ds: &Dataset, v: &Variant) -> Result<CosmoModel> {
    let text = stamp(&ModelStamp {
        dataset: &spec.dataset,
        model: v.model_config(spec),
        degrade: v.degrade,
        pretrain: v.pretrain_config(spec),
        finetune: None,
    });
    let dir = model_dir(spec, "pretrained", &text);
    load_or_train(&dir, &text, || {
        let data = TrainData::from_dataset(ds, Split::Train, v.degrade)?;
        let mut model = CosmoModel::new(v.model_config(spec))?;
        let history = pretrain(&mut model, &data, &v.pretrain_config(spec))?;
        Ok((model, history))
    })
}

/// Model of `v` as used in reconstruction: pre-trained, then fine-tuned if
/// the grid asks for it.
pub fn trained(spec: &ExperimentSpec, ds: &Dataset, v: &Variant) -> Result<CosmoModel> {
    let base = pretrained(spec, ds, v)?;
    if !spec.grid.finetune {
        return Ok(base);
    }
    let text = stamp(&ModelStamp {
        dataset: &spec.dataset,
        model: v.model_config(spec),
        degrade: v.degrade,
        pretrain: v.pretrain_config(spec),
        finetune: Some(&spec.finetune),
    });
    let dir = model_dir(spec, "finetuned", &text);
    load_or_train(&dir, &text, || {
        let data = TrainData::from_dataset(ds, Split::Train, v.degrade)?;
        let mut model = base;
        let history = finetune(&mut model, &data, &spec.finetune)?;
        Ok((model, history))
    })
}

#[derive(Serialize)]
struct DenoiserStamp<'a> {
    dataset: &'a DatasetConfig,
    denoiser: &'a DenoiserConfig,
}

/// CNN denoiser trained on the target contrast of the training split.
pub fn denoiser(spec: &ExperimentSpec, ds: &Dataset) -> Result<CnnDenoiser> {
    let text = stamp(&DenoiserStamp {
        dataset: &spec.dataset,
        denoiser: &spec.denoiser,
    });
    let dir = cache_dir(spec).join(format!("denoiser-{}", hash_hex(text.as_bytes())));
    if stamp_matches(&dir, &text) {
        return CnnDenoiser::load(&dir);
    }
    let images: Vec<_> = ds
        .split(Split::Train)
        .map(|it| it.t2.pixels.clone())
        .collect();
    if images.is_empty() {
        return Err(CosmoError::Config("training split is empty".into()));
    }
    let mut d = CnnDenoiser::new(spec.denoiser.clone())?;
    let losses = d.train(&images)?;
    d.save(&dir)?;
    let mut wtr = csv::Writer::from_path(dir.join("loss.csv"))?;
    wtr.write_record(["iteration", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        wtr.write_record([i.to_string(), l.to_string()])?;
    }
    wtr.flush()?;
    write_stamp(&dir, &text)?;
    Ok(d)
}
