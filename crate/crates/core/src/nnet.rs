//! Minimal fully-connected networks with hand-rolled reverse-mode gradients.
//!
//! Everything is f64 and runs on plain slices. A forward pass records a
//! [`Tape`] which `backward` consumes (by value, so it cannot be replayed).

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Softplus,
    /// Negative slope 0.01.
    LeakyRelu,
    /// a(t) = exp(-t^2 / (2 sigma^2)).
    Gaussian(f64),
    Identity,
}

impl Activation {
    fn eval(&self, t: f64) -> f64 {
        match *self {
            Activation::Softplus => t.max(0.0) + (-t.abs()).exp().ln_1p(),
            Activation::LeakyRelu => {
                if t > 0.0 {
                    t
                } else {
                    0.01 * t
                }
            }
            Activation::Gaussian(sigma) => (-t * t / (2.0 * sigma * sigma)).exp(),
            Activation::Identity => t,
        }
    }

    fn grad(&self, t: f64) -> f64 {
        match *self {
            Activation::Softplus => 1.0 / (1.0 + (-t).exp()),
            Activation::LeakyRelu => {
                if t > 0.0 {
                    1.0
                } else {
                    0.01
                }
            }
            Activation::Gaussian(sigma) => {
                let s2 = sigma * sigma;
                -(t / s2) * (-t * t / (2.0 * s2)).exp()
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Activation::Softplus => 0,
            Activation::LeakyRelu => 1,
            Activation::Gaussian(_) => 2,
            Activation::Identity => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    /// Layer index whose input gets the network input concatenated.
    pub skip_at: Option<usize>,
    pub final_softmax: bool,
    pub input_dim: usize,
}

/// Intermediate activations of one forward pass.
pub struct Tape {
    /// Input vector actually fed to each layer (post-concat for the skip).
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    softmax: Option<Vec<f64>>,
}

impl Mlp {
    /// `dims` lists the input dimension followed by each layer's output
    /// dimension; `dims = [in, h, ..., out]` yields `dims.len() - 1` layers.
    pub fn new<R: Rng>(
        dims: &[usize],
        activation: Activation,
        skip_at: Option<usize>,
        final_softmax: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::DimMismatch { expected: 2, got: dims.len() });
        }
        if let Activation::Gaussian(sigma) = activation {
            assert!(sigma > 0.0, "gaussian width must be positive");
        }
        let input_dim = dims[0];
        let n_layers = dims.len() - 1;
        if let Some(k) = skip_at {
            if k == 0 || k >= n_layers {
                return Err(Error::DimMismatch { expected: n_layers, got: k });
            }
        }
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let mut in_dim = dims[i];
            if skip_at == Some(i) {
                in_dim += input_dim;
            }
            let out_dim = dims[i + 1];
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let weight = (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(Layer { in_dim, out_dim, weight, bias: vec![0.0; out_dim] });
        }
        Ok(Mlp { layers, activation, skip_at, final_softmax, input_dim })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch { expected: self.input_dim, got: x.len() });
        }
        let n = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            if self.skip_at == Some(i) {
                h.extend_from_slice(x);
            }
            debug_assert_eq!(h.len(), layer.in_dim);
            let mut z = layer.bias.clone();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                *zr += row.iter().zip(&h).map(|(w, a)| w * a).sum::<f64>();
            }
            layer_inputs.push(std::mem::replace(&mut h, Vec::new()));
            if i + 1 < n {
                h = z.iter().map(|&t| self.activation.eval(t)).collect();
            } else {
                h = z.clone();
            }
            pre.push(z);
        }
        let softmax = if self.final_softmax {
            let m = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = h.iter().map(|&t| (t - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            h = exps.iter().map(|e| e / sum).collect();
            Some(h.clone())
        } else {
            None
        };
        Ok((
            h,
            Tape { layer_inputs, pre, softmax },
        ))
    }

    /// Reverse-mode gradients of `y . dy` with respect to the input and all
    /// parameters (same flat layout as [`Mlp::params`]).
    pub fn backward(&self, tape: Tape, dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.layers.len();
        assert_eq!(dy.len(), self.output_dim());
        let mut dparams = vec![0.0; self.param_count()];
        // offsets of each layer's parameter block
        let mut offsets = Vec::with_capacity(n);
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weight.len() + l.bias.len();
        }

        // through the softmax: dz_i = y_i (dy_i - sum_j y_j dy_j)
        let mut d_pre: Vec<f64> = match &tape.softmax {
            Some(y) => {
                let s: f64 = y.iter().zip(dy).map(|(yi, di)| yi * di).sum();
                y.iter().zip(dy).map(|(yi, di)| yi * (di - s)).collect()
            }
            None => dy.to_vec(),
        };
        let mut dx = vec![0.0; self.input_dim];
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let a = &tape.layer_inputs[i];
            let base = offsets[i];
            // weight and bias gradients
            for (r, dpr) in d_pre.iter().enumerate() {
                if *dpr != 0.0 {
                    let wrow = base + r * layer.in_dim;
                    for (c, ac) in a.iter().enumerate() {
                        dparams[wrow + c] += dpr * ac;
                    }
                }
                dparams[base + layer.weight.len() + r] += dpr;
            }
            // gradient w.r.t. this layer's input
            let mut da = vec![0.0; layer.in_dim];
            for (r, dpr) in d_pre.iter().enumerate() {
                if *dpr != 0.0 {
                    let row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (c, w) in row.iter().enumerate() {
                        da[c] += w * dpr;
                    }
                }
            }
            // peel off the skip concatenation
            if self.skip_at == Some(i) {
                let split = layer.in_dim - self.input_dim;
                for (k, d) in da[split..].iter().enumerate() {
                    dx[k] += d;
                }
                da.truncate(split);
            }
            if i == 0 {
                for (k, d) in da.iter().enumerate() {
                    dx[k] += d;
                }
            } else {
                let prev_pre = &tape.pre[i - 1];
                d_pre = da
                    .iter()
                    .zip(prev_pre)
                    .map(|(d, &t)| d * self.activation.grad(t))
                    .collect();
            }
        }
        (dx, dparams)
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"MLP1");
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.push(self.activation.tag());
        let sigma = match self.activation {
            Activation::Gaussian(s) => s,
            _ => 0.0,
        };
        out.extend_from_slice(&sigma.to_le_bytes());
        let skip = self.skip_at.map(|k| k as u32).unwrap_or(u32::MAX);
        out.extend_from_slice(&skip.to_le_bytes());
        out.push(self.final_softmax as u8);
        for l in &self.layers {
            out.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
            out.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
            for w in &l.weight {
                out.extend_from_slice(&w.to_le_bytes());
            }
            for b in &l.bias {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != b"MLP1" {
            return Err(Error::BadMagic("MLP1"));
        }
        let n_layers = cur.u32()? as usize;
        if n_layers == 0 {
            return Err(Error::DimMismatch { expected: 1, got: 0 });
        }
        let input_dim = cur.u32()? as usize;
        let tag = cur.u8()?;
        let sigma = cur.f64()?;
        let activation = match tag {
            0 => Activation::Softplus,
            1 => Activation::LeakyRelu,
            2 => Activation::Gaussian(sigma),
            3 => Activation::Identity,
            _ => return Err(Error::BadMagic("activation tag")),
        };
        let skip_raw = cur.u32()?;
        let skip_at = if skip_raw == u32::MAX { None } else { Some(skip_raw as usize) };
        let final_softmax = cur.u8()? != 0;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let in_dim = cur.u32()? as usize;
            let out_dim = cur.u32()? as usize;
            let mut weight = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..in_dim * out_dim {
                weight.push(cur.f64()?);
            }
            let mut bias = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                bias.push(cur.f64()?);
            }
            layers.push(Layer { in_dim, out_dim, weight, bias });
        }
        Ok(Mlp { layers, activation, skip_at, final_softmax, input_dim })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
