//! Train/validation/test splits of two-contrast phantom slices.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, CosmoError, Result};
use crate::image::Image;
use crate::phantom::{self, Contrast, ContrastImage, Provenance, SequenceParams};

/// Deterministic child seed for independent sub-streams of one base seed.
pub fn sub_seed(base: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub paired_fraction: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_tissues: usize,
    pub slices_per_phantom: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 18,
            n_val: 1,
            n_test: 1,
            paired_fraction: 0.1,
            seed: 0,
            height: 64,
            width: 64,
            n_tissues: 5,
            slices_per_phantom: 4,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return config("every split needs at least one phantom");
        }
        if !(0.0..=1.0).contains(&self.paired_fraction) {
            return config(format!(
                "paired_fraction must be in [0, 1], got {}",
                self.paired_fraction
            ));
        }
        if self.slices_per_phantom == 0 {
            return config("slices_per_phantom must be at least 1");
        }
        Ok(())
    }

    pub fn n_paired(&self) -> usize {
        (self.paired_fraction * self.n_train as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = CosmoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => config(format!("unknown split {other:?}")),
        }
    }
}

/// One slice with both contrasts and the mask of its head region.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub phantom_id: u64,
    pub split: Split,
    pub slice: usize,
    pub paired: bool,
    pub t1: ContrastImage,
    pub t2: ContrastImage,
    pub foreground: Image,
}

impl DatasetItem {
    pub fn image(&self, contrast: Contrast) -> &ContrastImage {
        match contrast {
            Contrast::T1w => &self.t1,
            Contrast::T2w => &self.t2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    /// Per-contrast scale applied to every image, `1 / max` over training.
    pub scale: [f64; 2],
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &DatasetItem> {
        self.items.iter().filter(move |it| it.split == split)
    }

    pub fn paired(&self) -> impl Iterator<Item = &DatasetItem> {
        self.items.iter().filter(|it| it.paired)
    }

    pub fn phantom_ids(&self, split: Split) -> Vec<u64> {
        let mut ids: Vec<u64> = self.split(split).map(|it| it.phantom_id).collect();
        ids.dedup();
        ids
    }
}

fn slice_positions(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|k| -0.6 + 1.2 * k as f64 / (n - 1) as f64)
        .collect()
}

pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n_paired = cfg.n_paired();
    let splits = std::iter::repeat_n(Split::Train, cfg.n_train)
        .chain(std::iter::repeat_n(Split::Val, cfg.n_val))
        .chain(std::iter::repeat_n(Split::Test, cfg.n_test));
    let mut items = Vec::new();
    for (idx, split) in splits.enumerate() {
        let id = idx as u64;
        let phantom_seed = sub_seed(cfg.seed, 2 * id);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 2 * id + 1));
        let p1 = SequenceParams::sample(Contrast::T1w, &mut rng);
        let p2 = SequenceParams::sample(Contrast::T2w, &mut rng);
        for (slice, z) in slice_positions(cfg.slices_per_phantom)
            .into_iter()
            .enumerate()
        {
            let ph =
                phantom::make_phantom_slice(phantom_seed, z, cfg.height, cfg.width, cfg.n_tissues)?;
            let mut t1 = phantom::simulate_contrast(&ph, p1, Contrast::T1w, slice);
            let mut t2 = phantom::simulate_contrast(&ph, p2, Contrast::T2w, slice);
            t1.provenance = Provenance { phantom: id, slice };
            t2.provenance = Provenance { phantom: id, slice };
            items.push(DatasetItem {
                phantom_id: id,
                split,
                slice,
                paired: split == Split::Train && idx < n_paired,
                t1,
                t2,
                foreground: ph.foreground_mask(),
            });
        }
    }
    let mut scale = [0.0; 2];
    for c in [Contrast::T1w, Contrast::T2w] {
        let max = items
            .iter()
            .filter(|it| it.split == Split::Train)
            .map(|it| it.image(c).pixels.max())
            .fold(0.0, f64::max);
        scale[c.index()] = 1.0 / max;
    }
    for it in &mut items {
        it.t1.pixels = it.t1.pixels.scaled(scale[0]);
        it.t2.pixels = it.t2.pixels.scaled(scale[1]);
    }
    Ok(Dataset {
        config: cfg.clone(),
        scale,
        items,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    split: Split,
    phantom: u64,
    slice: usize,
    contrast: String,
    path: String,
    te: f64,
    tr: f64,
    paired: bool,
}

fn file_name(it: &DatasetItem, kind: &str) -> String {
    format!("p{:03}_s{:02}_{kind}.rimg", it.phantom_id, it.slice)
}

/// Writes every image as a raw grid plus `manifest.csv` and `dataset.toml`.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    let mut wtr = csv::Writer::from_path(dir.join("manifest.csv"))?;
    for it in &ds.items {
        for (kind, img) in [
            ("t1w", &it.t1.pixels),
            ("t2w", &it.t2.pixels),
            ("mask", &it.foreground),
        ] {
            let rel = PathBuf::from("images").join(file_name(it, kind));
            img.write_raw(&dir.join(&rel))?;
            let params = match kind {
                "t1w" => Some(it.t1.params),
                "t2w" => Some(it.t2.params),
                _ => None,
            };
            wtr.serialize(ManifestRow {
                id: format!("p{:03}_s{:02}", it.phantom_id, it.slice),
                split: it.split,
                phantom: it.phantom_id,
                slice: it.slice,
                contrast: kind.to_string(),
                path: rel.to_string_lossy().into_owned(),
                te: params.map_or(0.0, |p| p.te),
                tr: params.map_or(0.0, |p| p.tr),
                paired: it.paired,
            })?;
        }
    }
    wtr.flush()?;
    let meta = DatasetMeta {
        config: ds.config.clone(),
        scale: ds.scale,
    };
    fs::write(
        dir.join("dataset.toml"),
        toml::to_string(&meta).map_err(|e| CosmoError::Format(e.to_string()))?,
    )?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    config: DatasetConfig,
    scale: [f64; 2],
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join("dataset.toml"))?;
    let meta: DatasetMeta = toml::from_str(&text).map_err(|e| CosmoError::Format(e.to_string()))?;
    let mut rdr = csv::Reader::from_path(dir.join("manifest.csv"))?;
    let mut rows: Vec<ManifestRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    rows.sort_by_key(|r| (r.phantom, r.slice));
    let mut items = Vec::new();
    for group in rows.chunk_by(|a, b| (a.phantom, a.slice) == (b.phantom, b.slice)) {
        let find = |kind: &str| {
            group.iter().find(|r| r.contrast == kind).ok_or_else(|| {
                CosmoError::Format(format!("manifest lacks {kind} for {}", group[0].id))
            })
        };
        let load = |r: &ManifestRow, c: Contrast| -> Result<ContrastImage> {
            Ok(ContrastImage {
                pixels: Image::read_raw(&dir.join(&r.path))?,
                contrast: c,
                params: SequenceParams::new(r.te, r.tr)?,
                provenance: Provenance {
                    phantom: r.phantom,
                    slice: r.slice,
                },
            })
        };
        let (r1, r2, rm) = (find("t1w")?, find("t2w")?, find("mask")?);
        items.push(DatasetItem {
            phantom_id: r1.phantom,
            split: r1.split,
            slice: r1.slice,
            paired: r1.paired,
            t1: load(r1, Contrast::T1w)?,
            t2: load(r2, Contrast::T2w)?,
            foreground: Image::read_raw(&dir.join(&rm.path))?,
        });
    }
    Ok(Dataset {
        config: meta.config,
        scale: meta.scale,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(n_train: usize, pf: f64) -> DatasetConfig {
        DatasetConfig {
            n_train,
            paired_fraction: pf,
            height: 32,
            width: 32,
            slices_per_phantom: 1,
            ..Default::default()
        }
    }

    #[test]
    fn paired_counts() {
        assert_eq!(build_dataset(&small(4, 0.0)).unwrap().paired().count(), 0);
        let ds = build_dataset(&small(18, 0.1)).unwrap();
        assert_eq!(ds.phantom_ids(Split::Train).len(), 18);
        // 20 phantoms in total with 18 for training; the fraction applies
        // to the training phantoms.
        assert_eq!(small(20, 0.1).n_paired(), 2);
        assert_eq!(ds.paired().count(), 2);
    }

    #[test]
    fn splits_are_disjoint() {
        let ds = build_dataset(&small(5, 0.2)).unwrap();
        let sets: Vec<HashSet<u64>> = [Split::Train, Split::Val, Split::Test]
            .iter()
            .map(|&s| ds.phantom_ids(s).into_iter().collect())
            .collect();
        assert!(
            sets[0].is_disjoint(&sets[1])
                && sets[0].is_disjoint(&sets[2])
                && sets[1].is_disjoint(&sets[2])
        );
    }

    #[test]
    fn normalized_and_deterministic() {
        let a = build_dataset(&small(3, 0.0)).unwrap();
        let b = build_dataset(&small(3, 0.0)).unwrap();
        assert_eq!(a, b);
        for c in [Contrast::T1w, Contrast::T2w] {
            let max = a
                .split(Split::Train)
                .map(|it| it.image(c).pixels.max())
                .fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(2, 0.5);
        cfg.slices_per_phantom = 2;
        let ds = build_dataset(&cfg).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }
}
