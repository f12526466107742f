//! Content/style image model: latent types, networks, losses and training.

mod losses;
mod networks;
mod train;

pub use losses::{
    discriminator_loss, munit_losses, pft_losses, Batch, LossWeights, MunitTerms,
    PatchDiscriminator, PftTerms,
};
pub use networks::{CosmoModel, ModelConfig};
pub use train::{
    finetune, pretrain, sample_style_prior, LossHistory, LossRecord, TrainConfig, TrainData,
};

use tensorgrad::{Graph, Tensor, Var};

use crate::error::{shape, Result};
use crate::image::Image;
use crate::phantom::Contrast;

/// Multi-channel spatial latent `c`, shape `[channels, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentMap {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl ContentMap {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        ContentMap {
            channels,
            h,
            w,
            data: vec![0.0; channels * h * w],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.h, self.w]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.channels, self.h, self.w], self.data.clone()).expect("content shape")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [1, channels, h, w] => Ok(ContentMap {
                channels,
                h,
                w,
                data: t.data().to_vec(),
            }),
            ref s => shape(format!("content tensor {s:?} is not [1, c, h, w]")),
        }
    }

    /// Mean absolute difference.
    pub fn mean_abs_diff(&self, other: &ContentMap) -> Result<f64> {
        if self.shape() != other.shape() {
            return shape(format!("content {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64)
    }

    /// `sum |a - b|`.
    pub fn l1_dist(&self, other: &ContentMap) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// `self - step * grad`.
    pub fn axpy(&self, step: f64, grad: &ContentMap) -> ContentMap {
        ContentMap {
            data: self
                .data
                .iter()
                .zip(&grad.data)
                .map(|(c, g)| c - step * g)
                .collect(),
            ..self.clone()
        }
    }
}

/// Low-dimensional style vector `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleCode(pub Vec<f64>);

impl StyleCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.0.len()], self.0.clone()).expect("style shape")
    }

    pub fn l2_dist(&self, other: &StyleCode) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn image_tensor(x: &Image) -> Tensor {
    let (h, w) = x.dims();
    Tensor::new(&[1, 1, h, w], x.data().to_vec()).expect("image shape")
}

fn tensor_image(t: &Tensor) -> Result<Image> {
    match *t.shape() {
        [1, 1, h, w] => Image::new(h, w, t.data().to_vec()),
        ref s => shape(format!("image tensor {s:?} is not [1, 1, h, w]")),
    }
}

/// The six networks `E1c, E2c, E1s, E2s, G1, G2` as graph builders, with
/// image-level inference on top. Images and contents enter as
/// `[n, channels, h, w]` tensors and styles as `[n, d]`.
pub trait ContentStyleModel {
    fn image_dims(&self) -> (usize, usize);
    fn content_shape(&self) -> [usize; 3];
    fn style_dim(&self) -> usize;

    fn content_net(&self, g: &mut Graph, domain: Contrast, x: Var) -> Result<Var>;
    fn style_net(&self, g: &mut Graph, domain: Contrast, x: Var) -> Result<Var>;
    fn decoder_net(&self, g: &mut Graph, domain: Contrast, c: Var, s: Var) -> Result<Var>;

    fn check_image(&self, x: &Image) -> Result<()> {
        if x.dims() != self.image_dims() {
            return shape(format!(
                "model expects {:?} images, got {:?}",
                self.image_dims(),
                x.dims()
            ));
        }
        Ok(())
    }

    fn encode_content(&self, domain: Contrast, x: &Image) -> Result<ContentMap> {
        self.check_image(x)?;
        let mut g = Graph::inference();
        let xv = g.constant(image_tensor(x));
        let c = self.content_net(&mut g, domain, xv)?;
        ContentMap::from_tensor(g.value(c))
    }

    fn encode_style(&self, domain: Contrast, x: &Image) -> Result<StyleCode> {
        self.check_image(x)?;
        let mut g = Graph::inference();
        let xv = g.constant(image_tensor(x));
        let s = self.style_net(&mut g, domain, xv)?;
        Ok(StyleCode(g.value(s).data().to_vec()))
    }

    fn decode(&self, domain: Contrast, c: &ContentMap, s: &StyleCode) -> Result<Image> {
        self.check_latents(c, s)?;
        let mut g = Graph::inference();
        let cv = g.constant(c.to_tensor());
        let sv = g.constant(s.to_tensor());
        let x = self.decoder_net(&mut g, domain, cv, sv)?;
        tensor_image(g.value(x))
    }

    /// Decodes `x = G(c, s)` and returns it with `J_c^T u`, where the
    /// upstream gradient `u` is computed from `x` by `upstream`.
    fn decode_vjp(
        &self,
        domain: Contrast,
        c: &ContentMap,
        s: &StyleCode,
        upstream: &dyn Fn(&Image) -> Result<Image>,
    ) -> Result<(Image, ContentMap)> {
        self.check_latents(c, s)?;
        let mut g = Graph::inference();
        let cv = g.variable(c.to_tensor());
        let sv = g.constant(s.to_tensor());
        let x = self.decoder_net(&mut g, domain, cv, sv)?;
        let out = tensor_image(g.value(x))?;
        let u = upstream(&out)?;
        self.check_image(&u)?;
        let loss = g.dot_const(x, u.data())?;
        g.backward(loss)?;
        let grad = match g.grad(cv) {
            Some(gr) => gr.to_vec(),
            None => vec![0.0; c.data.len()],
        };
        Ok((
            out,
            ContentMap {
                data: grad,
                ..c.clone()
            },
        ))
    }

    fn check_latents(&self, c: &ContentMap, s: &StyleCode) -> Result<()> {
        if c.shape() != self.content_shape() {
            return shape(format!(
                "model expects content {:?}, got {:?}",
                self.content_shape(),
                c.shape()
            ));
        }
        if s.dim() != self.style_dim() {
            return shape(format!(
                "model expects style dim {}, got {}",
                self.style_dim(),
                s.dim()
            ));
        }
        Ok(())
    }

    /// `J_M = (H_c W_c) / (H_x W_x)`.
    fn content_capacity(&self) -> f64 {
        let [_, hc, wc] = self.content_shape();
        let (hx, wx) = self.image_dims();
        (hc * wc) as f64 / (hx * wx) as f64
    }
}
