use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorgrad::nn::{Conv2d, Linear};
use tensorgrad::{Graph, ParamId, ParamStore, Tensor, Var};

use super::ContentStyleModel;
use crate::error::{config, CosmoError, Result};
use crate::phantom::Contrast;

const EPS: f64 = 1e-5;
const LEAK: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    /// Content downsampling factor `m`, a power of two.
    pub downsample: usize,
    /// Defaults to 4 channels for `m = 1` and 2 otherwise.
    pub content_channels: Option<usize>,
    pub style_dim: usize,
    pub base_channels: usize,
    pub n_res: usize,
    pub mlp_hidden: usize,
    /// Condition the discriminators on a foreground mask.
    pub mask_discriminator: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 64,
            width: 64,
            downsample: 1,
            content_channels: None,
            style_dim: 8,
            base_channels: 8,
            n_res: 2,
            mlp_hidden: 32,
            mask_discriminator: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn content_channels(&self) -> usize {
        self.content_channels
            .unwrap_or(if self.downsample == 1 { 4 } else { 2 })
    }

    fn n_down(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.downsample.is_power_of_two() {
            return config(format!(
                "downsample must be a power of two, got {}",
                self.downsample
            ));
        }
        // The style encoder halves the grid four times.
        if self.height % 16 != 0 || self.width % 16 != 0 || self.height % self.downsample != 0 {
            return config(format!(
                "image size {}x{} must be a multiple of 16",
                self.height, self.width
            ));
        }
        if self.style_dim == 0 || self.base_channels == 0 || self.content_channels() == 0 {
            return config("style_dim, base_channels and content_channels must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, ch: usize) -> Self {
        ResBlock {
            c1: Conv2d::new(store, rng, &format!("{name}.c1"), ch, ch, 3, 1, 1, false),
            c2: Conv2d::new(store, rng, &format!("{name}.c2"), ch, ch, 3, 1, 1, false),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.c1.forward(g, store, x)?;
        let h = g.instance_norm(h, EPS)?;
        let h = g.relu(h);
        let h = self.c2.forward(g, store, h)?;
        let h = g.instance_norm(h, EPS)?;
        Ok(g.add(x, h)?)
    }

    fn forward_adain(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        affine: &[Var],
    ) -> Result<Var> {
        let h = self.c1.forward(g, store, x)?;
        let h = g.adain(h, affine[0], affine[1], EPS)?;
        let h = g.relu(h);
        let h = self.c2.forward(g, store, h)?;
        let h = g.adain(h, affine[2], affine[3], EPS)?;
        Ok(g.add(x, h)?)
    }
}

#[derive(Debug, Clone)]
struct ContentEncoder {
    input: Conv2d,
    downs: Vec<Conv2d>,
    res: Vec<ResBlock>,
    out: Conv2d,
}

#[derive(Debug, Clone)]
struct StyleEncoder {
    input: Conv2d,
    downs: Vec<Conv2d>,
    fc: Linear,
}

#[derive(Debug, Clone)]
struct Decoder {
    input: Conv2d,
    res: Vec<ResBlock>,
    ups: Vec<Conv2d>,
    out: Conv2d,
    mlp: Vec<Linear>,
    /// One `(gamma, beta)` head per AdaIN layer.
    heads: Vec<(Linear, Linear)>,
}

#[derive(Debug, Clone)]
struct Discriminator {
    convs: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
struct Domain {
    content: ContentEncoder,
    style: StyleEncoder,
    decoder: Decoder,
    disc: Discriminator,
}

/// Trainable two-domain content/style model with its discriminators.
#[derive(Debug, Clone)]
pub struct CosmoModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    domains: [Domain; 2],
    generator_ids: Vec<ParamId>,
    discriminator_ids: Vec<ParamId>,
}

fn affine(g: &mut Graph, x: Var, a: f64, b: f64) -> Result<Var> {
    let y = g.scale(x, a);
    let t = g.constant(Tensor::full(g.shape(x), b));
    Ok(g.add(y, t)?)
}

impl CosmoModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut gen_ids = Vec::new();
        let mut disc_ids = Vec::new();
        let domains = [Contrast::T1w, Contrast::T2w].map(|d| {
            let before = store.len();
            let dom = Self::build_domain(&config, &mut store, &mut rng, d);
            let disc_start = before + dom.0;
            gen_ids.extend(store.ids().skip(before).take(dom.0));
            disc_ids.extend(store.ids().skip(disc_start));
            dom.1
        });
        Ok(CosmoModel {
            config,
            store,
            domains,
            generator_ids: gen_ids,
            discriminator_ids: disc_ids,
        })
    }

    /// Returns the number of generator parameters registered and the domain.
    fn build_domain(
        cfg: &ModelConfig,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        d: Contrast,
    ) -> (usize, Domain) {
        let p = d.as_str();
        let nf = cfg.base_channels;
        let before = store.len();

        let mut ch = nf;
        let input = Conv2d::new(store, rng, &format!("{p}.ec.in"), 1, nf, 7, 1, 3, false);
        let mut downs = Vec::new();
        for k in 0..cfg.n_down() {
            downs.push(Conv2d::new(
                store,
                rng,
                &format!("{p}.ec.down{k}"),
                ch,
                2 * ch,
                4,
                2,
                1,
                false,
            ));
            ch *= 2;
        }
        let res = (0..cfg.n_res)
            .map(|k| ResBlock::new(store, rng, &format!("{p}.ec.res{k}"), ch))
            .collect();
        let out = Conv2d::new(
            store,
            rng,
            &format!("{p}.ec.out"),
            ch,
            cfg.content_channels(),
            1,
            1,
            0,
            false,
        );
        let content = ContentEncoder {
            input,
            downs,
            res,
            out,
        };

        let s_in = Conv2d::new(store, rng, &format!("{p}.es.in"), 1, nf, 7, 1, 3, false);
        let mut sch = nf;
        let mut s_downs = Vec::new();
        for k in 0..4 {
            let next = (2 * sch).min(4 * nf);
            s_downs.push(Conv2d::new(
                store,
                rng,
                &format!("{p}.es.down{k}"),
                sch,
                next,
                4,
                2,
                1,
                false,
            ));
            sch = next;
        }
        let fc = Linear::new(store, rng, &format!("{p}.es.fc"), sch, cfg.style_dim);
        let style = StyleEncoder {
            input: s_in,
            downs: s_downs,
            fc,
        };

        let dch = ch;
        let d_in = Conv2d::new(
            store,
            rng,
            &format!("{p}.g.in"),
            cfg.content_channels(),
            dch,
            1,
            1,
            0,
            false,
        );
        let d_res = (0..cfg.n_res)
            .map(|k| ResBlock::new(store, rng, &format!("{p}.g.res{k}"), dch))
            .collect();
        let mut uch = dch;
        let mut ups = Vec::new();
        for k in 0..cfg.n_down() {
            ups.push(Conv2d::new(
                store,
                rng,
                &format!("{p}.g.up{k}"),
                uch,
                uch / 2,
                5,
                1,
                2,
                false,
            ));
            uch /= 2;
        }
        let d_out = Conv2d::new(store, rng, &format!("{p}.g.out"), uch, 1, 7, 1, 3, false);
        let mlp = vec![
            Linear::new(
                store,
                rng,
                &format!("{p}.g.mlp0"),
                cfg.style_dim,
                cfg.mlp_hidden,
            ),
            Linear::new(
                store,
                rng,
                &format!("{p}.g.mlp1"),
                cfg.mlp_hidden,
                cfg.mlp_hidden,
            ),
        ];
        let heads = (0..2 * cfg.n_res)
            .map(|k| {
                (
                    Linear::new(store, rng, &format!("{p}.g.gamma{k}"), cfg.mlp_hidden, dch),
                    Linear::new(store, rng, &format!("{p}.g.beta{k}"), cfg.mlp_hidden, dch),
                )
            })
            .collect();
        let decoder = Decoder {
            input: d_in,
            res: d_res,
            ups,
            out: d_out,
            mlp,
            heads,
        };
        let n_gen = store.len() - before;

        let cin = if cfg.mask_discriminator { 2 } else { 1 };
        let disc = Discriminator {
            convs: vec![
                Conv2d::new(store, rng, &format!("{p}.d.c0"), cin, nf, 4, 2, 1, true),
                Conv2d::new(store, rng, &format!("{p}.d.c1"), nf, 2 * nf, 4, 2, 1, true),
                Conv2d::new(store, rng, &format!("{p}.d.c2"), 2 * nf, 1, 3, 1, 1, true),
            ],
        };
        (
            n_gen,
            Domain {
                content,
                style,
                decoder,
                disc,
            },
        )
    }

    fn domain(&self, d: Contrast) -> &Domain {
        &self.domains[d.index()]
    }

    pub fn generator_ids(&self) -> &[ParamId] {
        &self.generator_ids
    }

    pub fn discriminator_ids(&self) -> &[ParamId] {
        &self.discriminator_ids
    }

    /// Per-patch realism scores `[n, 1, h/4, w/4]`.
    pub fn discriminator_net(
        &self,
        g: &mut Graph,
        domain: Contrast,
        x: Var,
        mask: Option<Var>,
    ) -> Result<Var> {
        let mut h = affine(g, x, 2.0, -1.0)?;
        if self.config.mask_discriminator {
            let m = match mask {
                Some(m) => m,
                None => g.constant(Tensor::full(g.shape(x), 1.0)),
            };
            let hm = g.mul(h, m)?;
            h = g.concat_channels(&[hm, m])?;
        }
        let convs = &self.domain(domain).disc.convs;
        for (k, c) in convs.iter().enumerate() {
            h = c.forward(g, &self.store, h)?;
            if k + 1 < convs.len() {
                h = g.leaky_relu(h, LEAK);
            }
        }
        Ok(h)
    }

    /// Writes `model.toml` and `weights.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = toml::to_string(&self.config).map_err(|e| CosmoError::Format(e.to_string()))?;
        fs::write(dir.join("model.toml"), text)?;
        self.store.save(&dir.join("weights.ckpt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("model.toml"))?;
        let config: ModelConfig =
            toml::from_str(&text).map_err(|e| CosmoError::Format(e.to_string()))?;
        let mut model = CosmoModel::new(config)?;
        let weights = ParamStore::load(&dir.join("weights.ckpt"))?;
        model.store.copy_from(&weights)?;
        Ok(model)
    }
}

impl ContentStyleModel for CosmoModel {
    fn image_dims(&self) -> (usize, usize) {
        (self.config.height, self.config.width)
    }

    fn content_shape(&self) -> [usize; 3] {
        let m = self.config.downsample;
        [
            self.config.content_channels(),
            self.config.height / m,
            self.config.width / m,
        ]
    }

    fn style_dim(&self) -> usize {
        self.config.style_dim
    }

    fn content_net(&self, g: &mut Graph, domain: Contrast, x: Var) -> Result<Var> {
        let e = &self.domain(domain).content;
        let s = &self.store;
        let x = affine(g, x, 2.0, -1.0)?;
        let h = e.input.forward(g, s, x)?;
        let h = g.instance_norm(h, EPS)?;
        let mut h = g.relu(h);
        for c in &e.downs {
            h = c.forward(g, s, h)?;
            h = g.instance_norm(h, EPS)?;
            h = g.relu(h);
        }
        for r in &e.res {
            h = r.forward(g, s, h)?;
        }
        Ok(e.out.forward(g, s, h)?)
    }

    fn style_net(&self, g: &mut Graph, domain: Contrast, x: Var) -> Result<Var> {
        let e = &self.domain(domain).style;
        let s = &self.store;
        let x = affine(g, x, 2.0, -1.0)?;
        let mut h = e.input.forward(g, s, x)?;
        h = g.relu(h);
        for c in &e.downs {
            h = c.forward(g, s, h)?;
            h = g.relu(h);
        }
        let pooled = g.global_avg_pool(h)?;
        Ok(e.fc.forward(g, s, pooled)?)
    }

    fn decoder_net(&self, g: &mut Graph, domain: Contrast, c: Var, style: Var) -> Result<Var> {
        let d = &self.domain(domain).decoder;
        let s = &self.store;
        let mut m = style;
        for l in &d.mlp {
            m = l.forward(g, s, m)?;
            m = g.relu(m);
        }
        let mut affine_params = Vec::new();
        for (gh, bh) in &d.heads {
            let gamma = gh.forward(g, s, m)?;
            let gamma = affine(g, gamma, 1.0, 1.0)?;
            let beta = bh.forward(g, s, m)?;
            affine_params.push(gamma);
            affine_params.push(beta);
        }
        let mut h = d.input.forward(g, s, c)?;
        for (k, r) in d.res.iter().enumerate() {
            h = r.forward_adain(g, s, h, &affine_params[4 * k..4 * k + 4])?;
        }
        for u in &d.ups {
            h = g.upsample_nearest(h, 2)?;
            h = u.forward(g, s, h)?;
            h = g.relu(h);
        }
        let h = d.out.forward(g, s, h)?;
        let h = g.tanh(h);
        affine(g, h, 0.5, 0.5)
    }
}
