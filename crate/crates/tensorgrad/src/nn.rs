//! Parameterized layers built on [`Graph`] ops.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

fn init_weight<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: String,
    shape: &[usize],
    fan_in: usize,
    spectral: bool,
) -> ParamId {
    // He initialization for rectifier networks.
    let w = Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng);
    if spectral {
        store.add_spectral(name, w, rng)
    } else {
        store.add(name, w)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        spectral: bool,
    ) -> Self {
        let weight = init_weight(
            store,
            rng,
            format!("{name}.weight"),
            &[cout, cin, kernel, kernel],
            cin * kernel * kernel,
            spectral,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let weight = init_weight(
            store,
            rng,
            format!("{name}.weight"),
            &[cin, cout, kernel, kernel],
            cin * kernel * kernel / (stride * stride).max(1),
            false,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        ConvTranspose2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        g.conv_transpose2d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fin: usize,
        fout: usize,
    ) -> Self {
        let weight = init_weight(
            store,
            rng,
            format!("{name}.weight"),
            &[fout, fin],
            fin,
            false,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fout]));
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight)?;
        let b = g.param(store, self.bias)?;
        g.linear(x, w, Some(b))
    }
}
