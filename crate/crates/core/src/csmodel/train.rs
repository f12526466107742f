use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tensorgrad::{Adam, AdamConfig, Graph, Tensor, Var};

use super::losses::{discriminator_loss, munit_losses, pft_losses, Batch, LossWeights};
use super::networks::CosmoModel;
use crate::dataset::{Dataset, Split};
use crate::error::{config, CosmoError, Result};
use crate::image::Image;
use crate::phantom::{lowpass, Contrast, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    /// Record losses every this many iterations (plus the first and last).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            iterations: 2000,
            batch_size: 1,
            seed: 0,
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            weights: LossWeights::default(),
            log_every: 50,
        }
    }
}

impl TrainConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.log_every == 0 {
            return config("batch_size and log_every must be positive");
        }
        if !(self.lr > 0.0) {
            return config(format!("learning rate must be positive, got {}", self.lr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x1: Image,
    pub x2: Image,
    pub mask: Image,
    pub id: Provenance,
    pub paired: bool,
}

/// Training slices; unpaired batches draw `x1` and `x2` independently.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub items: Vec<TrainItem>,
}

impl TrainData {
    /// Slices of `split`, with the reference contrast low-passed to the
    /// central `1/reference_degrade` of k-space.
    pub fn from_dataset(ds: &Dataset, split: Split, reference_degrade: usize) -> Result<Self> {
        let items = ds
            .split(split)
            .map(|it| {
                Ok(TrainItem {
                    x1: lowpass(&it.t1.pixels, reference_degrade)?,
                    x2: it.t2.pixels.clone(),
                    mask: it.foreground.clone(),
                    id: it.t1.provenance,
                    paired: it.paired,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if items.is_empty() {
            return config(format!("split {} is empty", split.as_str()));
        }
        Ok(TrainData { items })
    }

    pub fn paired_indices(&self) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| self.items[i].paired)
            .collect()
    }

    fn stack(imgs: &[&Image]) -> Tensor {
        let (h, w) = imgs[0].dims();
        let data = imgs.iter().flat_map(|i| i.data().iter().copied()).collect();
        Tensor::new(&[imgs.len(), 1, h, w], data).expect("uniform image sizes")
    }

    /// Batch from explicit indices for each domain.
    pub fn batch(&self, idx1: &[usize], idx2: &[usize], masks: bool) -> Batch {
        let it1: Vec<&TrainItem> = idx1.iter().map(|&i| &self.items[i]).collect();
        let it2: Vec<&TrainItem> = idx2.iter().map(|&i| &self.items[i]).collect();
        Batch {
            x1: Self::stack(&it1.iter().map(|t| &t.x1).collect::<Vec<_>>()),
            x2: Self::stack(&it2.iter().map(|t| &t.x2).collect::<Vec<_>>()),
            m1: masks.then(|| Self::stack(&it1.iter().map(|t| &t.mask).collect::<Vec<_>>())),
            m2: masks.then(|| Self::stack(&it2.iter().map(|t| &t.mask).collect::<Vec<_>>())),
            ids1: it1.iter().map(|t| t.id).collect(),
            ids2: it2.iter().map(|t| t.id).collect(),
        }
    }
}

/// Samples `[n, d]` from the standard normal style prior.
pub fn sample_style_prior<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Tensor {
    let data = (0..n * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(&[n, d], data).expect("prior shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossRecord {
    pub iteration: usize,
    pub gan: f64,
    pub image_self: f64,
    pub content_self: f64,
    pub style_self: f64,
    pub image_cross: f64,
    pub content_cross: f64,
    pub discriminator: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "iteration",
            "gan",
            "image_self",
            "content_self",
            "style_self",
            "image_cross",
            "content_cross",
            "discriminator",
            "total",
        ])?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string()];
            row.extend(
                [
                    r.gan,
                    r.image_self,
                    r.content_self,
                    r.style_self,
                    r.image_cross,
                    r.content_cross,
                    r.discriminator,
                    r.total,
                ]
                .iter()
                .map(|v| v.to_string()),
            );
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

enum Phase {
    Pretrain,
    Finetune,
}

fn finite(iteration: usize, name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CosmoError::Divergence {
            iteration,
            term: name.to_string(),
        })
    }
}

fn run(
    model: &mut CosmoModel,
    data: &TrainData,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<LossHistory> {
    cfg.validate()?;
    let paired = data.paired_indices();
    if matches!(phase, Phase::Finetune) && paired.is_empty() && cfg.iterations > 0 {
        return Err(CosmoError::Usage(
            "fine-tuning needs at least one paired slice".into(),
        ));
    }
    if data
        .items
        .iter()
        .any(|it| it.x1.dims() != (model.config.height, model.config.width))
    {
        return config("training images do not match the model resolution");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_g = Adam::new(&model.store, model.generator_ids().to_vec(), cfg.adam());
    let mut opt_d = Adam::new(&model.store, model.discriminator_ids().to_vec(), cfg.adam());
    let masks = model.config.mask_discriminator;
    let d = model.config.style_dim;
    let n = cfg.batch_size;
    let mut history = LossHistory::default();

    for it in 0..cfg.iterations {
        let batch = match phase {
            Phase::Pretrain => {
                let i1: Vec<usize> = (0..n)
                    .map(|_| rng.random_range(0..data.items.len()))
                    .collect();
                let i2: Vec<usize> = (0..n)
                    .map(|_| rng.random_range(0..data.items.len()))
                    .collect();
                data.batch(&i1, &i2, masks)
            }
            Phase::Finetune => {
                let idx: Vec<usize> = (0..n)
                    .map(|_| paired[rng.random_range(0..paired.len())])
                    .collect();
                data.batch(&idx, &idx, masks)
            }
        };
        let s1 = sample_style_prior(n, d, &mut rng);
        let s2 = sample_style_prior(n, d, &mut rng);

        let mut g = Graph::new();
        let mut rec = LossRecord {
            iteration: it,
            ..Default::default()
        };
        let val = |g: &Graph, v: Var| g.value(v).item();
        let (total, fake1, fake2) = match phase {
            Phase::Pretrain => {
                let t = munit_losses(&mut g, &*model, &*model, &batch, &s1, &s2, &cfg.weights)?;
                rec.gan = val(&g, t.gan);
                rec.image_self = val(&g, t.image_self);
                rec.content_self = val(&g, t.content_self);
                rec.style_self = val(&g, t.style_self);
                (t.total, t.fake1, t.fake2)
            }
            Phase::Finetune => {
                let t = pft_losses(&mut g, &*model, &*model, &batch, &s1, &s2, &cfg.weights)?;
                rec.gan = val(&g, t.gan);
                rec.image_self = val(&g, t.image_self);
                rec.image_cross = val(&g, t.image_cross);
                rec.content_cross = val(&g, t.content_cross);
                (t.total, t.fake1, t.fake2)
            }
        };
        rec.total = finite(it, "generator loss", val(&g, total))?;
        g.backward(total)?;
        model.store.zero_grad();
        g.accumulate_param_grads(&mut model.store);
        opt_g.step(&mut model.store);
        let (fake1, fake2) = (g.value(fake1).clone(), g.value(fake2).clone());
        drop(g);

        // Translated images keep the anatomy, hence the mask, of their source.
        let mut g = Graph::new();
        let l1 = discriminator_loss(
            &mut g,
            &*model,
            Contrast::T1w,
            &batch.x1,
            batch.m1.as_ref(),
            &fake1,
            batch.m2.as_ref(),
        )?;
        let l2 = discriminator_loss(
            &mut g,
            &*model,
            Contrast::T2w,
            &batch.x2,
            batch.m2.as_ref(),
            &fake2,
            batch.m1.as_ref(),
        )?;
        let dl = g.add(l1, l2)?;
        rec.discriminator = finite(it, "discriminator loss", g.value(dl).item())?;
        g.backward(dl)?;
        model.store.zero_grad();
        g.accumulate_param_grads(&mut model.store);
        opt_d.step(&mut model.store);
        model.store.power_iterate(1);

        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            history.records.push(rec);
        }
    }
    Ok(history)
}

/// Unpaired pre-training with alternating generator and discriminator
/// updates.
pub fn pretrain(
    model: &mut CosmoModel,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<LossHistory> {
    run(model, data, cfg, Phase::Pretrain)
}

/// Paired fine-tuning on the slices flagged as paired.
pub fn finetune(
    model: &mut CosmoModel,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<LossHistory> {
    run(model, data, cfg, Phase::Finetune)
}
