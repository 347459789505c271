//! Residual map `z ↦ z_B` with `z_{b+1} = z_b + h_b(z_b)`.

use ndarray::Array2;

use super::net::{Activations, ArchTag, DenseNet, GradientSet, InitScheme, NetSpec, init_params};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap {
    blocks: Vec<DenseNet>,
}

#[derive(Debug, Clone)]
pub struct ResidualActivations {
    /// Input of each block; `block_inputs[0]` is the map input.
    pub block_inputs: Vec<Array2<f64>>,
    pub block_acts: Vec<Activations>,
    pub output: Array2<f64>,
}

impl ResidualActivations {
    /// Residual `h_b(z_b)` added by block `b`.
    pub fn residual(&self, b: usize) -> &Array2<f64> {
        self.block_acts[b].output()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualGradients {
    pub blocks: Vec<GradientSet>,
}

impl ResidualGradients {
    pub fn add_assign(&mut self, other: &ResidualGradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.blocks {
            b.scale(factor);
        }
    }
}

impl ResidualMap {
    pub fn from_blocks(blocks: Vec<DenseNet>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::InvalidSpec("residual map needs at least one block".into()));
        };
        let d = first.input_dim();
        for b in &blocks {
            if b.tag() != ArchTag::ResidualMap || b.input_dim() != d || b.output_dim() != d {
                return Err(Error::InvalidSpec(format!(
                    "every residual block must be a {d} -> {d} residual-map net"
                )));
            }
        }
        Ok(Self { blocks })
    }

    /// `n_blocks` two-layer blocks `d -> hidden -> d`.
    pub fn init(dim: usize, hidden: usize, n_blocks: usize, scheme: InitScheme, gain: f64, seed: u64) -> Result<Self> {
        if n_blocks == 0 {
            return Err(Error::InvalidSpec("residual map needs at least one block".into()));
        }
        let spec = NetSpec::new(ArchTag::ResidualMap, dim, &[hidden], dim);
        let blocks = (0..n_blocks)
            .map(|b| init_params(&spec, scheme, gain, rng::derive_seed(seed, "residual-block", b as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(blocks)
    }

    /// Same as [`ResidualMap::init`] but with every block's last layer zeroed,
    /// so the map is exactly the identity.
    pub fn identity(dim: usize, hidden: usize, n_blocks: usize, scheme: InitScheme, gain: f64, seed: u64) -> Result<Self> {
        let mut map = Self::init(dim, hidden, n_blocks, scheme, gain, seed)?;
        for b in &mut map.blocks {
            let last = b.layers_mut().last_mut().expect("non-empty block");
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
        Ok(map)
    }

    pub fn blocks(&self) -> &[DenseNet] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [DenseNet] {
        &mut self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].input_dim()
    }

    pub fn forward(&self, z: &Array2<f64>) -> Result<ResidualActivations> {
        if z.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, residual map expects {}",
                z.ncols(),
                self.dim()
            )));
        }
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        let mut block_acts = Vec::with_capacity(self.blocks.len());
        let mut cur = z.clone();
        for block in &self.blocks {
            let acts = block.forward(&cur)?;
            let next = &cur + acts.output();
            block_inputs.push(cur);
            block_acts.push(acts);
            cur = next;
        }
        Ok(ResidualActivations {
            block_inputs,
            block_acts,
            output: cur,
        })
    }

    pub fn apply(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(z)?.output)
    }

    /// Backward pass given the gradient on the map output and, optionally,
    /// extra gradients on each block's residual `h_b(z_b)` (used by the
    /// dynamic transport cost). Returns parameter gradients and the gradient
    /// on the map input.
    pub fn backward(
        &self,
        acts: &ResidualActivations,
        out_grad: &Array2<f64>,
        residual_grads: Option<&[Array2<f64>]>,
    ) -> Result<(ResidualGradients, Array2<f64>)> {
        if acts.block_acts.len() != self.blocks.len() || out_grad.dim() != acts.output.dim() {
            return Err(Error::Shape("activations were not produced by this residual map".into()));
        }
        if let Some(extra) = residual_grads {
            if extra.len() != self.blocks.len() || extra.iter().any(|e| e.dim() != out_grad.dim()) {
                return Err(Error::Shape("one residual gradient per block expected".into()));
            }
        }
        let mut grads = Vec::with_capacity(self.blocks.len());
        let mut g = out_grad.clone();
        for (b, block) in self.blocks.iter().enumerate().rev() {
            let on_residual = match residual_grads {
                Some(extra) => &g + &extra[b],
                None => g.clone(),
            };
            let bp = block.backward(&acts.block_acts[b], &on_residual)?;
            g += &bp.input_grad;
            grads.push(bp.grads);
        }
        grads.reverse();
        Ok((ResidualGradients { blocks: grads }, g))
    }

    pub fn zero_grads(&self) -> ResidualGradients {
        ResidualGradients {
            blocks: self.blocks.iter().map(DenseNet::zero_grads).collect(),
        }
    }
}
