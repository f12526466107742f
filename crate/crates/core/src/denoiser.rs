//! Residual CNN denoiser for the plug-and-play baseline.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tensorgrad::nn::Conv2d;
use tensorgrad::{Adam, AdamConfig, Graph, ParamStore, Tensor};

use crate::error::{config, CosmoError, Result};
use crate::image::Image;

/// Image-to-image map `f(x)` applied to magnitude images.
pub trait Denoiser {
    fn denoise(&self, x: &Image) -> Result<Image>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(x.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub depth: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            channels: 16,
            depth: 5,
            sigma_min: 0.01,
            sigma_max: 0.1,
            iterations: 1000,
            batch_size: 4,
            lr: AdamConfig::default().lr,
            seed: 0,
        }
    }
}

/// `f(x) = x - r(x)` with a plain conv/relu residual predictor `r`.
#[derive(Debug, Clone)]
pub struct CnnDenoiser {
    pub config: DenoiserConfig,
    pub store: ParamStore,
    layers: Vec<Conv2d>,
}

impl CnnDenoiser {
    pub fn new(cfg: DenoiserConfig) -> Result<Self> {
        if cfg.depth < 2 || cfg.channels == 0 {
            return config("denoiser needs depth >= 2 and positive channels");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let c = cfg.channels;
        let layers: Vec<Conv2d> = (0..cfg.depth)
            .map(|k| {
                let cin = if k == 0 { 1 } else { c };
                let cout = if k + 1 == cfg.depth { 1 } else { c };
                Conv2d::new(
                    &mut store,
                    &mut rng,
                    &format!("dn.c{k}"),
                    cin,
                    cout,
                    3,
                    1,
                    1,
                    false,
                )
            })
            .collect();
        // Start close to the identity map.
        let last = layers[layers.len() - 1].weight;
        store
            .value_mut(last)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= 0.01);
        Ok(CnnDenoiser {
            config: cfg,
            store,
            layers,
        })
    }

    fn forward(&self, g: &mut Graph, x: tensorgrad::Var) -> Result<tensorgrad::Var> {
        let mut h = x;
        for (k, l) in self.layers.iter().enumerate() {
            h = l.forward(g, &self.store, h)?;
            if k + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(g.sub(x, h)?)
    }

    /// Trains on clean images with Gaussian noise of a random level in
    /// `[sigma_min, sigma_max]` per sample; returns the loss per iteration.
    pub fn train(&mut self, images: &[Image]) -> Result<Vec<f64>> {
        if images.is_empty() {
            return config("denoiser training set is empty");
        }
        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let ids: Vec<_> = self.store.ids().collect();
        let mut opt = Adam::new(
            &self.store,
            ids,
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
        );
        let (h, w) = images[0].dims();
        let mut losses = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            let mut clean = Vec::with_capacity(cfg.batch_size * h * w);
            let mut noisy = Vec::with_capacity(cfg.batch_size * h * w);
            for _ in 0..cfg.batch_size {
                let img = &images[rng.random_range(0..images.len())];
                let sigma = rng.random_range(cfg.sigma_min..=cfg.sigma_max);
                for &v in img.data() {
                    clean.push(v);
                    noisy.push(v + sigma * rng.sample::<f64, _>(StandardNormal));
                }
            }
            let shape = [cfg.batch_size, 1, h, w];
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(&shape, noisy)?);
            let t = g.constant(Tensor::new(&shape, clean)?);
            let y = self.forward(&mut g, x)?;
            let loss = g.mse_loss(y, t)?;
            let l = g.value(loss).item();
            if !l.is_finite() {
                return Err(CosmoError::Divergence {
                    iteration: it,
                    term: "denoiser loss".into(),
                });
            }
            losses.push(l);
            g.backward(loss)?;
            self.store.zero_grad();
            g.accumulate_param_grads(&mut self.store);
            opt.step(&mut self.store);
        }
        Ok(losses)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = toml::to_string(&self.config).map_err(|e| CosmoError::Format(e.to_string()))?;
        fs::write(dir.join("denoiser.toml"), text)?;
        self.store.save(&dir.join("denoiser.ckpt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("denoiser.toml"))?;
        let cfg: DenoiserConfig =
            toml::from_str(&text).map_err(|e| CosmoError::Format(e.to_string()))?;
        let mut d = CnnDenoiser::new(cfg)?;
        d.store
            .copy_from(&ParamStore::load(&dir.join("denoiser.ckpt"))?)?;
        Ok(d)
    }
}

impl Denoiser for CnnDenoiser {
    fn denoise(&self, x: &Image) -> Result<Image> {
        let (h, w) = x.dims();
        let mut g = Graph::inference();
        let xv = g.constant(Tensor::new(&[1, 1, h, w], x.data().to_vec())?);
        let y = self.forward(&mut g, xv)?;
        Image::new(h, w, g.value(y).data().to_vec())
    }
}
