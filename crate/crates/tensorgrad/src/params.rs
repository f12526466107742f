//! Named parameter storage, spectral-normalization state and checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::bilinear;
use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

/// Power-iteration vectors for a spectrally normalized weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    spectral: Option<SpectralState>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

const MAGIC: &[u8; 8] = b"TGCKPT\0\0";
const VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.len()];
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            spectral: None,
        });
        ParamId(self.params.len() - 1)
    }

    /// Registers a weight whose forward use is divided by its largest
    /// singular value (rows = first dimension).
    pub fn add_spectral<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        rng: &mut R,
    ) -> ParamId {
        let rows = value.shape()[0];
        let cols = value.len() / rows;
        let mut u = Tensor::randn(&[rows], 1.0, rng).into_data();
        normalize(&mut u);
        let id = self.add(name, value);
        let mut state = SpectralState {
            u,
            v: vec![0.0; cols],
        };
        power_step(self.params[id.0].value.data(), &mut state);
        self.params[id.0].spectral = Some(state);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn spectral(&self, id: ParamId) -> Option<&SpectralState> {
        self.params[id.0].spectral.as_ref()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub(crate) fn value_and_grad(&mut self, id: ParamId) -> (&mut [f64], &[f64]) {
        let p = &mut self.params[id.0];
        (p.value.data_mut(), &p.grad)
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &[f64]) {
        self.params[id.0]
            .grad
            .iter_mut()
            .zip(g)
            .for_each(|(a, b)| *a += b);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Refreshes every spectral-normalization estimate with `iters` power steps.
    pub fn power_iterate(&mut self, iters: usize) {
        for p in &mut self.params {
            if let Some(state) = p.spectral.as_mut() {
                for _ in 0..iters {
                    power_step(p.value.data(), state);
                }
            }
        }
    }

    /// Current estimate `u^T W v` of the largest singular value.
    pub fn sigma_estimate(&self, id: ParamId) -> Option<f64> {
        let p = &self.params[id.0];
        p.spectral
            .as_ref()
            .map(|s| bilinear(&s.u, p.value.data(), &s.v))
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Writes all values (and spectral vectors) to a versioned binary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            write_str(w, &p.name)?;
            write_floats(w, p.value.shape(), p.value.data())?;
            match &p.spectral {
                Some(s) => {
                    w.write_all(&[1])?;
                    write_floats(w, &[s.u.len()], &s.u)?;
                    write_floats(w, &[s.v.len()], &s.v)?;
                }
                None => w.write_all(&[0])?,
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(TensorError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let count = read_u32(r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = read_str(r)?;
            let (shape, data) = read_floats(r)?;
            let id = store.add(name, Tensor::new(&shape, data)?);
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            if flag[0] == 1 {
                let (_, u) = read_floats(r)?;
                let (_, v) = read_floats(r)?;
                store.params[id.0].spectral = Some(SpectralState { u, v });
            }
        }
        Ok(store)
    }

    /// Copies values from `other` into parameters of the same name and shape.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| TensorError::Format(format!("missing parameter {}", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(TensorError::Format(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    src.value.shape()
                )));
            }
            p.value = src.value.clone();
            p.spectral = src.spectral.clone();
        }
        Ok(())
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    x.iter_mut().for_each(|v| *v /= n);
}

fn power_step(w: &[f64], s: &mut SpectralState) {
    let cols = s.v.len();
    s.v.fill(0.0);
    for (row, ur) in w.chunks(cols).zip(&s.u) {
        s.v.iter_mut().zip(row).for_each(|(v, a)| *v += ur * a);
    }
    normalize(&mut s.v);
    for (row, ur) in w.chunks(cols).zip(s.u.iter_mut()) {
        *ur = row.iter().zip(&s.v).map(|(a, b)| a * b).sum();
    }
    normalize(&mut s.u);
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_floats<W: Write>(w: &mut W, shape: &[usize], data: &[f64]) -> Result<()> {
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| TensorError::Format(e.to_string()))
}

fn read_floats<R: Read>(r: &mut R) -> Result<(Vec<usize>, Vec<f64>)> {
    let ndim = read_u32(r)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n = Tensor::numel(&shape);
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((shape, data))
}
