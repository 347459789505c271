//! Dense feed-forward networks.
//!
//! Batches are row-major: one sample per row. A layer computes
//! `pre = x · W + b` with `W` of shape `(in_dim, out_dim)`, then
//! `post = activation(pre)`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, BoxMuller};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
    /// Row-wise softmax; only valid on the last layer.
    Softmax,
}

impl Activation {
    pub fn apply(self, pre: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Identity => pre.clone(),
            Activation::Softmax => super::loss::softmax_rows(pre),
        }
    }

    /// Pulls a gradient on the post-activation back to the pre-activation.
    pub fn backprop(self, pre: &Array2<f64>, post: &Array2<f64>, grad_post: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => {
                let mut g = grad_post.clone();
                g.zip_mut_with(pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
                g
            }
            Activation::Identity => grad_post.clone(),
            Activation::Softmax => {
                let mut g = grad_post * post;
                for (mut row, y) in g.axis_iter_mut(Axis(0)).zip(post.axis_iter(Axis(0))) {
                    let dot: f64 = row.sum();
                    row.zip_mut_with(&y, |gi, &yi| *gi -= yi * dot);
                }
                g
            }
        }
    }

    /// Elementwise derivative for piecewise-linear activations.
    pub fn slope(self, pre: &Array2<f64>) -> Option<Array2<f64>> {
        match self {
            Activation::Relu => Some(pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })),
            Activation::Identity => Some(Array2::ones(pre.raw_dim())),
            Activation::Softmax => None,
        }
    }
}

/// Role of a network in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchTag {
    Encoder,
    Classifier,
    /// One block `h_b` of a residual map.
    ResidualMap,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    Normal,
    Orthogonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(in_dim, out_dim)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Architecture description used by [`init_params`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub tag: ArchTag,
    pub input_dim: usize,
    /// Hidden widths; hidden layers use relu.
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub head: Activation,
}

impl NetSpec {
    pub fn new(tag: ArchTag, input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self {
            tag,
            input_dim,
            hidden: hidden.to_vec(),
            output_dim,
            head: Activation::Identity,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims
    }
}

/// Parameters of one feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    tag: ArchTag,
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a network after checking that layer shapes compose and the
    /// tag's constraints hold.
    pub fn from_layers(tag: ArchTag, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::InvalidSpec(format!("layer {i} has a zero dimension")));
            }
            if l.bias.len() != l.out_dim() {
                return Err(Error::InvalidSpec(format!(
                    "layer {i}: bias length {} != out dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            if l.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::InvalidSpec("softmax is only allowed at the head".into()));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::InvalidSpec(format!(
                    "layer {i} out dim {} does not match layer {} in dim {}",
                    w[0].out_dim(),
                    i + 1,
                    w[1].in_dim()
                )));
            }
        }
        let net = Self { tag, layers };
        match tag {
            ArchTag::Critic if net.output_dim() != 1 => {
                Err(Error::InvalidSpec("critic must have scalar output".into()))
            }
            ArchTag::ResidualMap if net.output_dim() != net.input_dim() => Err(Error::InvalidSpec(
                "residual block must map dimension d to d".into(),
            )),
            _ => Ok(net),
        }
    }

    pub fn tag(&self) -> ArchTag {
        self.tag
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, batch: &Array2<f64>) -> Result<Activations> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = post.last().unwrap_or(batch);
            let s = x.dot(&layer.weight) + &layer.bias;
            post.push(layer.activation.apply(&s));
            pre.push(s);
        }
        Ok(Activations {
            input: batch.clone(),
            pre,
            post,
        })
    }

    /// Convenience: final output only.
    pub fn predict(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(batch)?.post.pop().expect("non-empty network"))
    }

    /// Reverse-mode pass for a scalar loss whose gradient with respect to the
    /// network output is `out_grad`.
    pub fn backward(&self, acts: &Activations, out_grad: &Array2<f64>) -> Result<Backprop> {
        if acts.pre.len() != self.layers.len()
            || acts
                .pre
                .iter()
                .zip(&self.layers)
                .any(|(p, l)| p.ncols() != l.out_dim() || p.nrows() != acts.input.nrows())
            || acts.input.ncols() != self.input_dim()
        {
            return Err(Error::Shape("activations were not produced by this network".into()));
        }
        if out_grad.dim() != acts.output().dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                out_grad.dim(),
                acts.output().dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = out_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let gs = layer.activation.backprop(&acts.pre[i], &acts.post[i], &g);
            let x = if i == 0 { &acts.input } else { &acts.post[i - 1] };
            grads.push(LayerGrad {
                weight: standard(x.t().dot(&gs)),
                bias: gs.sum_axis(Axis(0)),
            });
            g = standard(gs.dot(&layer.weight.t()));
        }
        grads.reverse();
        Ok(Backprop {
            grads: GradientSet { layers: grads },
            input_grad: g,
        })
    }

    /// Product of the spectral norms of the weight matrices. For relu and
    /// identity activations this upper-bounds the network's Lipschitz
    /// constant with respect to the Euclidean norm.
    pub fn lipschitz_upper_bound(&self) -> f64 {
        self.layers.iter().map(|l| spectral_norm(&l.weight)).product()
    }

    pub fn zero_grads(&self) -> GradientSet {
        GradientSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }
}

/// Everything the forward pass produced, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
}

impl Activations {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("non-empty network")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-parameter gradients, shape-congruent with a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone)]
pub struct Backprop {
    pub grads: GradientSet,
    /// Gradient with respect to the network input batch.
    pub input_grad: Array2<f64>,
}

/// Draws fresh parameters for `spec`. Biases start at zero; weights are
/// scaled by `gain`.
pub fn init_params(spec: &NetSpec, scheme: InitScheme, gain: f64, seed: u64) -> Result<DenseNet> {
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::InvalidSpec(format!("init gain must be positive, got {gain}")));
    }
    let dims = spec.dims();
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidSpec(format!("zero dimension in {dims:?}")));
    }
    let n_layers = dims.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for (i, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let mut r = rng::stream(seed, "init-layer", i as u64);
        let weight = match scheme {
            InitScheme::Normal => {
                let mut bm = BoxMuller::new();
                Array2::from_shape_fn((fan_in, fan_out), |_| gain * bm.sample(&mut r))
            }
            InitScheme::Orthogonal => orthogonal(fan_in, fan_out, &mut r) * gain,
        };
        let activation = if i + 1 == n_layers {
            spec.head
        } else {
            Activation::Relu
        };
        layers.push(Layer {
            weight,
            bias: Array1::zeros(fan_out),
            activation,
        });
    }
    DenseNet::from_layers(spec.tag, layers)
}

/// Matrix with orthonormal columns (or rows, when wide) from the QR
/// decomposition of a Gaussian matrix, signs fixed so `R` has a positive
/// diagonal.
fn orthogonal<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let mut bm = BoxMuller::new();
    let a = DMatrix::from_fn(tall, short, |_, _| bm.sample(rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        Array2::from_shape_fn((rows, cols), |(i, j)| q[(i, j)])
    } else {
        Array2::from_shape_fn((rows, cols), |(i, j)| q[(j, i)])
    }
}

/// Matrix products may come back column-major; parameter views need
/// row-major storage.
pub(crate) fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Array2<f64>) -> f64 {
    let dm = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]);
    dm.singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn linear(w: Array2<f64>, b: Array1<f64>, act: Activation) -> Layer {
        Layer {
            weight: w,
            bias: b,
            activation: act,
        }
    }

    #[test]
    fn normal_init_has_requested_scale() {
        let spec = NetSpec::new(ArchTag::Encoder, 256, &[], 256);
        let net = init_params(&spec, InitScheme::Normal, 0.02, 11).unwrap();
        let w = &net.layers()[0].weight;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let sd = (w.mapv(|v| (v - mean).powi(2)).sum() / (n - 1.0)).sqrt();
        assert!((sd - 0.02).abs() < 0.2 * 0.02, "sd {sd}");
        assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_gain_is_rejected() {
        let spec = NetSpec::new(ArchTag::Encoder, 4, &[3], 2);
        assert!(matches!(
            init_params(&spec, InitScheme::Normal, 0.0, 0),
            Err(Error::InvalidSpec(_))
        ));
        let bad = NetSpec::new(ArchTag::Encoder, 0, &[3], 2);
        assert!(matches!(
            init_params(&bad, InitScheme::Normal, 1.0, 0),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn orthogonal_square_is_orthogonal() {
        let spec = NetSpec::new(ArchTag::ResidualMap, 16, &[], 16);
        let net = init_params(&spec, InitScheme::Orthogonal, 1.0, 5).unwrap();
        let w = &net.layers()[0].weight;
        let wtw = w.t().dot(w);
        let max_dev = wtw
            .indexed_iter()
            .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-6, "max deviation {max_dev}");
    }

    #[test]
    fn orthogonal_rectangular_has_orthonormal_short_side() {
        let spec = NetSpec::new(ArchTag::Encoder, 3, &[], 7);
        let net = init_params(&spec, InitScheme::Orthogonal, 1.0, 5).unwrap();
        let w = &net.layers()[0].weight;
        let wwt = w.dot(&w.t());
        for ((i, j), &v) in wwt.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((v - target).abs() < 1e-9);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let spec = NetSpec::new(ArchTag::Classifier, 5, &[8, 8], 3);
        let a = init_params(&spec, InitScheme::Orthogonal, 0.02, 9).unwrap();
        let b = init_params(&spec, InitScheme::Orthogonal, 0.02, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tag_invariants_are_enforced() {
        let two_out = vec![linear(Array2::zeros((3, 2)), Array1::zeros(2), Activation::Identity)];
        assert!(DenseNet::from_layers(ArchTag::Critic, two_out.clone()).is_err());
        assert!(DenseNet::from_layers(ArchTag::ResidualMap, two_out.clone()).is_err());
        assert!(DenseNet::from_layers(ArchTag::Encoder, two_out).is_ok());
        let broken = vec![
            linear(Array2::zeros((3, 2)), Array1::zeros(2), Activation::Relu),
            linear(Array2::zeros((3, 1)), Array1::zeros(1), Activation::Identity),
        ];
        assert!(DenseNet::from_layers(ArchTag::Encoder, broken).is_err());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = DenseNet::from_layers(
            ArchTag::Encoder,
            vec![linear(Array2::eye(3), Array1::zeros(3), Activation::Identity)],
        )
        .unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn relu_layer_hand_computed() {
        // W (in x out) = [[1, -1], [2, 1]], b = [0.5, -3]
        // x = [1, 2]: pre = [1 + 4 + 0.5, -1 + 2 - 3] = [5.5, -2] -> relu [5.5, 0]
        let net = DenseNet::from_layers(
            ArchTag::Encoder,
            vec![linear(array![[1.0, -1.0], [2.0, 1.0]], array![0.5, -3.0], Activation::Relu)],
        )
        .unwrap();
        let y = net.predict(&array![[1.0, 2.0]]).unwrap();
        assert_eq!(y, array![[5.5, 0.0]]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let spec = NetSpec::new(ArchTag::Encoder, 4, &[3], 2);
        let net = init_params(&spec, InitScheme::Normal, 1.0, 0).unwrap();
        assert!(matches!(net.forward(&Array2::zeros((2, 5))), Err(Error::Shape(_))));
    }

    #[test]
    fn scalar_linear_gradient() {
        let net = DenseNet::from_layers(
            ArchTag::Critic,
            vec![linear(array![[0.7]], array![0.0], Activation::Identity)],
        )
        .unwrap();
        let acts = net.forward(&array![[3.0]]).unwrap();
        let bp = net.backward(&acts, &array![[1.0]]).unwrap();
        assert_eq!(bp.grads.layers[0].weight[[0, 0]], 3.0);
        assert_eq!(bp.input_grad[[0, 0]], 0.7);
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let spec = NetSpec::new(ArchTag::Classifier, 4, &[6], 3);
        let net = init_params(&spec, InitScheme::Normal, 0.5, 2).unwrap();
        let acts = net.forward(&Array2::from_elem((5, 4), 0.3)).unwrap();
        let bp = net.backward(&acts, &Array2::zeros((5, 3))).unwrap();
        assert!(bp.grads.is_zero());
    }

    #[test]
    fn stale_activations_are_rejected() {
        let a = init_params(&NetSpec::new(ArchTag::Encoder, 4, &[6], 3), InitScheme::Normal, 0.5, 2).unwrap();
        let b = init_params(&NetSpec::new(ArchTag::Encoder, 4, &[5], 3), InitScheme::Normal, 0.5, 2).unwrap();
        let acts = a.forward(&Array2::zeros((2, 4))).unwrap();
        assert!(matches!(b.backward(&acts, &Array2::zeros((2, 3))), Err(Error::Shape(_))));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = array![[3.0, 0.0], [0.0, -5.0], [0.0, 0.0]];
        assert!((spectral_norm(&m) - 5.0).abs() < 1e-12);
    }
}
