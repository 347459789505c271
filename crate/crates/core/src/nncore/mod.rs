//! Minimal dense-network engine: exact manual backpropagation, Adam, and
//! normal / orthogonal initialization.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod loss;
mod net;
mod residual;

use ndarray::Array2;

pub use adam::{AdamConfig, AdamState, Params, adam_step};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use net::{
    Activation, Activations, ArchTag, Backprop, DenseNet, GradientSet, InitScheme, Layer, LayerGrad, NetSpec,
    init_params, spectral_norm,
};
pub(crate) use net::standard;
pub use residual::{ResidualActivations, ResidualGradients, ResidualMap};

fn slice_of(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are kept in standard layout")
}

fn slice_of_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are kept in standard layout")
}

impl Params for DenseNet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .iter()
            .flat_map(|l| [slice_of(&l.weight), l.bias.as_slice().expect("contiguous bias")])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .iter_mut()
            .flat_map(|l| [slice_of_mut(&mut l.weight), l.bias.as_slice_mut().expect("contiguous bias")])
            .collect()
    }
}

impl Params for GradientSet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [slice_of(&l.weight), l.bias.as_slice().expect("contiguous bias")])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [slice_of_mut(&mut l.weight), l.bias.as_slice_mut().expect("contiguous bias")])
            .collect()
    }
}

impl Params for ResidualMap {
    fn tensors(&self) -> Vec<&[f64]> {
        self.blocks().iter().flat_map(Params::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks_mut().iter_mut().flat_map(Params::tensors_mut).collect()
    }
}

impl Params for ResidualGradients {
    fn tensors(&self) -> Vec<&[f64]> {
        self.blocks.iter().flat_map(Params::tensors).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.blocks.iter_mut().flat_map(Params::tensors_mut).collect()
    }
}

/// A data batch treated as a parameter tensor, for input-gradient checks.
impl Params for Array2<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice_of(self)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice_of_mut(self)]
    }
}
