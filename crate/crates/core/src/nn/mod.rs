//! Layers, manual back-propagation and the SGD update.
//!
//! A [`NetworkSegment`] is an ordered stack of layers owned by one role. The
//! full model is a chain of segments: each domain runs one, the server runs
//! one, and the label holder may run a final head. `forward` caches the
//! activations needed by the paired `backward` call; the cache must be empty
//! again once backward completes, which keeps segments honest about the
//! strict forward/backward pairing the round protocol relies on.
//!
//! Parameter gradients accumulate (`+=`) and are zeroed by the SGD step, so
//! a role that is traversed more than once per round still ends up with the
//! right total gradient.

mod gradcheck;
mod loss;

pub use gradcheck::{finite_difference_gradcheck, relu_kink_margin};
pub use loss::{bce_loss, sigmoid};

use crate::error::{Error, Result};
use crate::rng::{rng_uniform, RngState};
use crate::tensor::{matmul, Tensor};

/// One layer of a segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Linear {
        in_dim: usize,
        out_dim: usize,
        with_bias: bool,
    },
    /// Lookup table applied per input column: an integer tensor of shape
    /// `batch×c` becomes `batch×(c·dim)` by concatenating the embedding of
    /// each column's index.
    Embedding {
        vocab_size: usize,
        dim: usize,
    },
    ReLU,
    Sigmoid,
}

impl LayerSpec {
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Linear {
            in_dim,
            out_dim,
            with_bias: true,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            LayerSpec::Linear { with_bias, .. } => 1 + usize::from(*with_bias),
            LayerSpec::Embedding { .. } => 1,
            LayerSpec::ReLU | LayerSpec::Sigmoid => 0,
        }
    }
}

/// A tensor-valued parameter with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name, value, grad }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentRole {
    Domain,
    Server,
    LabelHead,
}

/// Plain SGD: `W := W − α·∇W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::Argument(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        Ok(Self { learning_rate })
    }
}

/// What each layer must remember between forward and backward.
#[derive(Debug, Clone)]
enum LayerCache {
    /// Input to a linear layer.
    LinearInput(Tensor),
    /// Integer input to an embedding layer.
    EmbeddingInput(Tensor),
    /// Input to a ReLU (the mask is `x > 0`; the derivative at exactly 0 is 0).
    ReluInput(Tensor),
    /// Output of a sigmoid (its derivative is `y·(1−y)`).
    SigmoidOutput(Tensor),
}

#[derive(Debug, Clone)]
pub struct NetworkSegment {
    layers: Vec<LayerSpec>,
    params: Vec<Parameter>,
    /// Start index into `params` for each layer.
    param_starts: Vec<usize>,
    role: SegmentRole,
    trainable: bool,
    cache: Vec<LayerCache>,
    last_output_shape: Option<Vec<usize>>,
}

impl NetworkSegment {
    /// Builds a segment with zero-initialized parameters; call
    /// [`init_params`] to fill them.
    pub fn new(role: SegmentRole, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("segment needs at least one layer".into()));
        }
        let mut params = Vec::new();
        let mut param_starts = Vec::with_capacity(layers.len());
        let mut prev_out: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            param_starts.push(params.len());
            match layer {
                LayerSpec::Linear {
                    in_dim,
                    out_dim,
                    with_bias,
                } => {
                    if *in_dim == 0 || *out_dim == 0 {
                        return Err(Error::Argument(format!(
                            "layer {i}: linear dims must be positive"
                        )));
                    }
                    if let Some(w) = prev_out {
                        if w != *in_dim {
                            return Err(Error::Dimension(format!(
                                "layer {i}: expects {in_dim} inputs but the previous layer produces {w}"
                            )));
                        }
                    }
                    params.push(Parameter::new(
                        format!("layer{i}.weight"),
                        Tensor::zeros(&[*in_dim, *out_dim]),
                    ));
                    if *with_bias {
                        params.push(Parameter::new(
                            format!("layer{i}.bias"),
                            Tensor::zeros(&[1, *out_dim]),
                        ));
                    }
                    prev_out = Some(*out_dim);
                }
                LayerSpec::Embedding { vocab_size, dim } => {
                    if i != 0 {
                        return Err(Error::Argument(format!(
                            "layer {i}: embedding is only allowed as the first layer of a segment"
                        )));
                    }
                    if *vocab_size == 0 || *dim == 0 {
                        return Err(Error::Argument(
                            "embedding dims must be positive".into(),
                        ));
                    }
                    params.push(Parameter::new(
                        format!("layer{i}.table"),
                        Tensor::zeros(&[*vocab_size, *dim]),
                    ));
                    // Output width depends on the number of input columns,
                    // so the chain check resumes at the first linear layer.
                    prev_out = None;
                }
                LayerSpec::ReLU | LayerSpec::Sigmoid => {}
            }
        }
        Ok(Self {
            layers,
            params,
            param_starts,
            role,
            trainable: true,
            cache: Vec::new(),
            last_output_shape: None,
        })
    }

    pub fn role(&self) -> SegmentRole {
        self.role
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Freezes or unfreezes the segment's parameters; frozen segments still
    /// propagate gradients but skip the SGD update.
    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Width of the cut produced by this segment, when it is statically
    /// known (the out dim of the last linear layer).
    pub fn output_width(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            LayerSpec::Linear { out_dim, .. } => Some(*out_dim),
            _ => None,
        })
    }

    fn params_for(&self, layer_idx: usize) -> &[Parameter] {
        let start = self.param_starts[layer_idx];
        let count = self.layers[layer_idx].param_count();
        &self.params[start..start + count]
    }

    /// Training forward pass: caches activations for the paired `backward`.
    /// Fails if a previous forward has not been consumed yet.
    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        if !self.cache.is_empty() {
            return Err(Error::Protocol(
                "forward called while a previous forward awaits its backward".into(),
            ));
        }
        let mut x = input.clone();
        let mut cache = Vec::with_capacity(self.layers.len());
        for i in 0..self.layers.len() {
            let (y, entry) = apply_layer(&self.layers[i], self.params_for(i), &x)?;
            cache.push(entry);
            x = y;
        }
        self.cache = cache;
        self.last_output_shape = Some(x.shape().to_vec());
        Ok(x)
    }

    /// Inference-only forward pass; never touches the activation cache.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            x = self.infer_layer(i, &x)?;
        }
        Ok(x)
    }

    /// Applies a single layer without caching.
    pub(crate) fn infer_layer(&self, layer_idx: usize, x: &Tensor) -> Result<Tensor> {
        let (y, _) = apply_layer(&self.layers[layer_idx], self.params_for(layer_idx), x)?;
        Ok(y)
    }

    /// Back-propagates `upstream_grad`, accumulating parameter gradients and
    /// returning the gradient with respect to the segment input. Consumes
    /// the activation cache, leaving it empty.
    pub fn backward(&mut self, upstream_grad: &Tensor) -> Result<Tensor> {
        if self.cache.len() != self.layers.len() {
            return Err(Error::Protocol(
                "backward called without a matching forward".into(),
            ));
        }
        if let Some(shape) = &self.last_output_shape {
            if upstream_grad.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "upstream gradient shape {:?} does not match output shape {shape:?}",
                    upstream_grad.shape()
                )));
            }
        }
        let mut grad = upstream_grad.clone();
        for i in (0..self.layers.len()).rev() {
            let entry = self.cache.pop().expect("cache length checked above");
            let start = self.param_starts[i];
            let count = self.layers[i].param_count();
            grad = backprop_layer(
                &self.layers[i],
                &mut self.params[start..start + count],
                entry,
                &grad,
            )?;
        }
        self.last_output_shape = None;
        Ok(grad)
    }

    /// True when a forward pass is waiting for its backward.
    pub fn has_pending_forward(&self) -> bool {
        !self.cache.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Applies the SGD update to this segment's parameters (skipped when
    /// frozen) and zeroes the gradients either way.
    pub fn sgd_step(&mut self, cfg: &OptimizerConfig) -> Result<()> {
        if self.trainable {
            sgd_step(&mut self.params, cfg)?;
        } else {
            self.zero_grads();
        }
        Ok(())
    }

    /// Serializes parameter values into a flat blob using the wire codec's
    /// tensor framing, in parameter order.
    pub fn params_to_blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.params {
            crate::protocol::wire::encode_tensor(&p.value, &mut out);
        }
        out
    }

    /// Restores parameter values from a blob written by [`params_to_blob`]
    /// for a segment of identical structure.
    pub fn load_params_from_blob(&mut self, bytes: &[u8]) -> Result<()> {
        let mut pos = 0usize;
        for p in &mut self.params {
            let t = crate::protocol::wire::decode_tensor(bytes, &mut pos)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor {:?} does not fit parameter {} of shape {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last parameter",
                bytes.len() - pos
            )));
        }
        Ok(())
    }

    /// Stacks several segments into one sequential segment with the same
    /// parameter values. The fused segment is the monolithic counterpart of
    /// running the originals in a chain.
    pub fn stacked(segments: &[NetworkSegment], role: SegmentRole) -> Result<NetworkSegment> {
        let layers: Vec<LayerSpec> = segments
            .iter()
            .flat_map(|s| s.layers.iter().cloned())
            .collect();
        // Embeddings deeper in the chain would be rejected by `new`; stacking
        // is only meaningful for chains where that cannot happen.
        let mut fused = NetworkSegment::new(role, layers)?;
        let values: Vec<Tensor> = segments
            .iter()
            .flat_map(|s| s.params.iter().map(|p| p.value.clone()))
            .collect();
        debug_assert_eq!(values.len(), fused.params.len());
        for (p, v) in fused.params.iter_mut().zip(values) {
            p.value = v;
            p.grad = Tensor::zeros(p.grad.shape());
        }
        Ok(fused)
    }
}

fn apply_layer(
    layer: &LayerSpec,
    params: &[Parameter],
    x: &Tensor,
) -> Result<(Tensor, LayerCache)> {
    match layer {
        LayerSpec::Linear {
            in_dim, with_bias, ..
        } => {
            if x.shape().len() != 2 || x.cols() != *in_dim {
                return Err(Error::Dimension(format!(
                    "linear layer expects batch×{in_dim}, got {:?}",
                    x.shape()
                )));
            }
            let mut y = matmul(x, &params[0].value)?;
            if *with_bias {
                y = y.add_row_vector(&params[1].value)?;
            }
            Ok((y, LayerCache::LinearInput(x.clone())))
        }
        LayerSpec::Embedding { vocab_size, dim } => {
            let (batch, cols) = (x.rows(), x.cols());
            let table = &params[0].value;
            let mut data = Vec::with_capacity(batch * cols * dim);
            for r in 0..batch {
                for j in 0..cols {
                    let v = x.get(r, j);
                    if v.fract() != 0.0 || v < 0.0 || v >= *vocab_size as f64 {
                        return Err(Error::Index(format!(
                            "embedding index {v} at row {r} col {j} is outside 0..{vocab_size}"
                        )));
                    }
                    data.extend_from_slice(table.row(v as usize));
                }
            }
            let y = Tensor::new(vec![batch, cols * dim], data)?;
            Ok((y, LayerCache::EmbeddingInput(x.clone())))
        }
        LayerSpec::ReLU => {
            let y = x.map(|v| if v > 0.0 { v } else { 0.0 })?;
            Ok((y, LayerCache::ReluInput(x.clone())))
        }
        LayerSpec::Sigmoid => {
            let y = x.map(sigmoid)?;
            Ok((y.clone(), LayerCache::SigmoidOutput(y)))
        }
    }
}

fn backprop_layer(
    layer: &LayerSpec,
    params: &mut [Parameter],
    cache: LayerCache,
    grad: &Tensor,
) -> Result<Tensor> {
    match (layer, cache) {
        (LayerSpec::Linear { with_bias, .. }, LayerCache::LinearInput(x)) => {
            let dw = matmul(&x.transpose()?, grad)?;
            params[0].grad = params[0].grad.add(&dw)?;
            if *with_bias {
                let db = grad.column_sums()?;
                params[1].grad = params[1].grad.add(&db)?;
            }
            matmul(grad, &params[0].value.transpose()?)
        }
        (LayerSpec::Embedding { dim, .. }, LayerCache::EmbeddingInput(x)) => {
            let (batch, cols) = (x.rows(), x.cols());
            if grad.shape() != [batch, cols * dim] {
                return Err(Error::Dimension(format!(
                    "embedding gradient shape {:?}, expected {:?}",
                    grad.shape(),
                    [batch, cols * dim]
                )));
            }
            let mut table_grad = params[0].grad.clone();
            for r in 0..batch {
                for j in 0..cols {
                    let idx = x.get(r, j) as usize;
                    for d in 0..*dim {
                        let v = table_grad.get(idx, d) + grad.get(r, j * dim + d);
                        table_grad.set(idx, d, v);
                    }
                }
            }
            params[0].grad = table_grad;
            // Indices are not differentiable; the input gradient is zero.
            Ok(Tensor::zeros(&[batch, cols]))
        }
        (LayerSpec::ReLU, LayerCache::ReluInput(x)) => {
            grad.zip_with(&x, |g, v| if v > 0.0 { g } else { 0.0 })
        }
        (LayerSpec::Sigmoid, LayerCache::SigmoidOutput(y)) => {
            grad.zip_with(&y, |g, s| g * s * (1.0 - s))
        }
        _ => Err(Error::Protocol("activation cache out of sync".into())),
    }
}

/// Updates every parameter as `W := W − α·∇W`, then zeroes the gradients.
pub fn sgd_step(params: &mut [Parameter], cfg: &OptimizerConfig) -> Result<()> {
    for p in params.iter_mut() {
        if p.grad.shape() != p.value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {}: grad shape {:?} vs value shape {:?}",
                p.name,
                p.grad.shape(),
                p.value.shape()
            )));
        }
        p.value = p
            .value
            .zip_with(&p.grad, |w, g| w - cfg.learning_rate * g)?;
        p.grad = Tensor::zeros(p.grad.shape());
    }
    Ok(())
}

/// Fills a segment's parameters from the RNG stream.
///
/// Consumption order is fixed: layers in order; for a linear layer the
/// weights row-major (biases stay zero and consume nothing); for an
/// embedding the table row-major. Linear weights are Xavier-uniform,
/// `U(−√(6/(in+out)), +√(6/(in+out)))`; embedding tables are `U(−0.05, 0.05)`.
pub fn init_params(seg: &mut NetworkSegment, rng: &mut RngState) -> Result<()> {
    for i in 0..seg.layers.len() {
        let start = seg.param_starts[i];
        match seg.layers[i] {
            LayerSpec::Linear {
                in_dim, out_dim, ..
            } => {
                let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                seg.params[start].value = rng_uniform(rng, &[in_dim, out_dim], -limit, limit)?;
            }
            LayerSpec::Embedding { vocab_size, dim } => {
                seg.params[start].value = rng_uniform(rng, &[vocab_size, dim], -0.05, 0.05)?;
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(layers: Vec<LayerSpec>) -> NetworkSegment {
        NetworkSegment::new(SegmentRole::Domain, layers).unwrap()
    }

    fn set_linear(seg: &mut NetworkSegment, w: Tensor, b: Option<Tensor>) {
        seg.params_mut()[0].value = w;
        if let Some(b) = b {
            seg.params_mut()[1].value = b;
        }
    }

    #[test]
    fn identity_linear_is_identity() {
        let mut s = seg(vec![LayerSpec::linear(3, 3)]);
        set_linear(&mut s, Tensor::identity(3), Some(Tensor::zeros(&[1, 3])));
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
        let y = s.forward(&x).unwrap();
        assert_eq!(y, x);
        s.backward(&y).unwrap();
    }

    #[test]
    fn linear_hand_oracle() {
        // W=[[2]], b=[1]: 3 → 7.
        let mut s = seg(vec![LayerSpec::linear(1, 1)]);
        set_linear(
            &mut s,
            Tensor::from_rows(&[vec![2.0]]).unwrap(),
            Some(Tensor::from_rows(&[vec![1.0]]).unwrap()),
        );
        let y = s.forward(&Tensor::from_rows(&[vec![3.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn relu_definition() {
        let mut s = seg(vec![LayerSpec::ReLU]);
        let y = s
            .forward(&Tensor::from_rows(&[vec![-1.0, 2.0]]).unwrap())
            .unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
        let g = s
            .backward(&Tensor::from_rows(&[vec![5.0, 5.0]]).unwrap())
            .unwrap();
        assert_eq!(g.data(), &[0.0, 5.0]);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut s = seg(vec![LayerSpec::ReLU]);
        s.forward(&Tensor::from_rows(&[vec![0.0]]).unwrap()).unwrap();
        let g = s.backward(&Tensor::from_rows(&[vec![3.0]]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0]);
    }

    #[test]
    fn linear_backward_hand_oracle() {
        // W=[[2]], input [[3]], upstream [[1]] → dW=[[3]], input grad [[2]].
        let mut s = seg(vec![LayerSpec::Linear {
            in_dim: 1,
            out_dim: 1,
            with_bias: false,
        }]);
        set_linear(&mut s, Tensor::from_rows(&[vec![2.0]]).unwrap(), None);
        s.forward(&Tensor::from_rows(&[vec![3.0]]).unwrap()).unwrap();
        let gx = s
            .backward(&Tensor::from_rows(&[vec![1.0]]).unwrap())
            .unwrap();
        assert_eq!(s.params()[0].grad.data(), &[3.0]);
        assert_eq!(gx.data(), &[2.0]);
    }

    #[test]
    fn identity_linear_backward_passes_grad_through() {
        let mut s = seg(vec![LayerSpec::linear(2, 2)]);
        set_linear(&mut s, Tensor::identity(2), Some(Tensor::zeros(&[1, 2])));
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        s.forward(&x).unwrap();
        let g = Tensor::from_rows(&[vec![0.5, -0.25]]).unwrap();
        let gx = s.backward(&g).unwrap();
        assert_eq!(gx, g);
    }

    #[test]
    fn backward_without_forward_is_protocol_error() {
        let mut s = seg(vec![LayerSpec::linear(2, 2)]);
        let err = s.backward(&Tensor::zeros(&[1, 2])).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn forward_twice_without_backward_is_protocol_error() {
        let mut s = seg(vec![LayerSpec::linear(2, 2)]);
        let x = Tensor::zeros(&[1, 2]);
        s.forward(&x).unwrap();
        assert!(matches!(s.forward(&x).unwrap_err(), Error::Protocol(_)));
    }

    #[test]
    fn cache_is_empty_after_backward() {
        let mut s = seg(vec![LayerSpec::linear(2, 3), LayerSpec::ReLU]);
        let mut rng = RngState::new(1);
        init_params(&mut s, &mut rng).unwrap();
        let x = Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap();
        let y = s.forward(&x).unwrap();
        assert!(s.has_pending_forward());
        s.backward(&y).unwrap();
        assert!(!s.has_pending_forward());
    }

    #[test]
    fn embedding_lookup_and_grad() {
        let mut s = seg(vec![LayerSpec::Embedding {
            vocab_size: 3,
            dim: 2,
        }]);
        s.params_mut()[0].value =
            Tensor::from_rows(&[vec![0.0, 1.0], vec![10.0, 11.0], vec![20.0, 21.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let y = s.forward(&x).unwrap();
        assert_eq!(
            y,
            Tensor::from_rows(&[vec![20.0, 21.0, 0.0, 1.0], vec![10.0, 11.0, 10.0, 11.0]])
                .unwrap()
        );
        let g = Tensor::filled(&[2, 4], 1.0).unwrap();
        let gx = s.backward(&g).unwrap();
        assert_eq!(gx, Tensor::zeros(&[2, 2]));
        // Row 1 was hit twice in the second sample, so it accumulates 2.0.
        assert_eq!(
            s.params()[0].grad,
            Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, 1.0]]).unwrap()
        );
    }

    #[test]
    fn embedding_rejects_bad_indices() {
        let mut s = seg(vec![LayerSpec::Embedding {
            vocab_size: 3,
            dim: 2,
        }]);
        let too_big = Tensor::from_rows(&[vec![3.0]]).unwrap();
        assert!(matches!(s.forward(&too_big).unwrap_err(), Error::Index(_)));
        let fractional = Tensor::from_rows(&[vec![0.5]]).unwrap();
        assert!(matches!(
            s.forward(&fractional).unwrap_err(),
            Error::Index(_)
        ));
    }

    #[test]
    fn embedding_must_be_first_layer() {
        let err = NetworkSegment::new(
            SegmentRole::Domain,
            vec![
                LayerSpec::linear(2, 2),
                LayerSpec::Embedding {
                    vocab_size: 4,
                    dim: 2,
                },
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn sgd_zero_grad_leaves_weights() {
        let mut s = seg(vec![LayerSpec::linear(2, 2)]);
        let mut rng = RngState::new(9);
        init_params(&mut s, &mut rng).unwrap();
        let before = s.params()[0].value.clone();
        s.sgd_step(&OptimizerConfig::new(0.1).unwrap()).unwrap();
        assert_eq!(s.params()[0].value, before);
    }

    #[test]
    fn sgd_hand_oracle() {
        // W=1.0, grad=0.5, α=0.1 → 0.95.
        let mut params = vec![Parameter::new(
            "w".into(),
            Tensor::from_rows(&[vec![1.0]]).unwrap(),
        )];
        params[0].grad = Tensor::from_rows(&[vec![0.5]]).unwrap();
        sgd_step(&mut params, &OptimizerConfig::new(0.1).unwrap()).unwrap();
        assert!((params[0].value.data()[0] - 0.95).abs() < 1e-15);
        // Gradients are zeroed by the step.
        assert_eq!(params[0].grad.data(), &[0.0]);
    }

    #[test]
    fn two_steps_with_same_grad() {
        let g = Tensor::from_rows(&[vec![0.25]]).unwrap();
        let mut params = vec![Parameter::new(
            "w".into(),
            Tensor::from_rows(&[vec![1.0]]).unwrap(),
        )];
        let cfg = OptimizerConfig::new(0.2).unwrap();
        for _ in 0..2 {
            params[0].grad = g.clone();
            sgd_step(&mut params, &cfg).unwrap();
        }
        let expected = 1.0 - 2.0 * 0.2 * 0.25;
        assert!((params[0].value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn sgd_step_back_restores_weights_bit_exactly() {
        let mut rng = RngState::new(21);
        let mut s = seg(vec![LayerSpec::linear(3, 2)]);
        init_params(&mut s, &mut rng).unwrap();
        let before: Vec<Tensor> = s.params().iter().map(|p| p.value.clone()).collect();
        let g = rng_uniform(&mut rng, &[3, 2], -1.0, 1.0).unwrap();
        let gb = rng_uniform(&mut rng, &[1, 2], -1.0, 1.0).unwrap();

        let forward = OptimizerConfig::new(0.05).unwrap();
        s.params_mut()[0].grad = g.clone();
        s.params_mut()[1].grad = gb.clone();
        s.sgd_step(&forward).unwrap();

        // Stepping with −α and the same gradient must undo the move exactly:
        // (w − αg) + αg == w in IEEE 754 for finite values.
        s.params_mut()[0].grad = g.scale(-1.0).unwrap();
        s.params_mut()[1].grad = gb.scale(-1.0).unwrap();
        s.sgd_step(&forward).unwrap();

        for (p, b) in s.params().iter().zip(&before) {
            assert_eq!(&p.value, b);
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let make = || {
            let mut s = seg(vec![LayerSpec::linear(100, 100)]);
            let mut rng = RngState::new(1234);
            init_params(&mut s, &mut rng).unwrap();
            s
        };
        let a = make();
        let b = make();
        assert_eq!(a.params()[0].value, b.params()[0].value);
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(a.params()[0].value.data().iter().all(|v| v.abs() <= bound));
        // Biases are exactly zero.
        assert!(a.params()[1].value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stacked_chain_matches_two_segment_backward() {
        let mut rng = RngState::new(77);
        let mut lower = seg(vec![LayerSpec::linear(4, 3), LayerSpec::ReLU]);
        let mut upper = seg(vec![LayerSpec::linear(3, 2), LayerSpec::Sigmoid]);
        init_params(&mut lower, &mut rng).unwrap();
        init_params(&mut upper, &mut rng).unwrap();
        let mut fused =
            NetworkSegment::stacked(&[lower.clone(), upper.clone()], SegmentRole::Server).unwrap();

        let x = rng_uniform(&mut rng, &[5, 4], -1.0, 1.0).unwrap();
        let up = rng_uniform(&mut rng, &[5, 2], -1.0, 1.0).unwrap();

        let mid = lower.forward(&x).unwrap();
        let out_chain = upper.forward(&mid).unwrap();
        let g_mid = upper.backward(&up).unwrap();
        let gx_chain = lower.backward(&g_mid).unwrap();

        let out_fused = fused.forward(&x).unwrap();
        let gx_fused = fused.backward(&up).unwrap();

        assert_eq!(out_chain, out_fused);
        for (a, b) in gx_chain.data().iter().zip(gx_fused.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let chain_grads: Vec<&Tensor> = lower
            .params()
            .iter()
            .chain(upper.params())
            .map(|p| &p.grad)
            .collect();
        for (cg, fp) in chain_grads.iter().zip(fused.params()) {
            for (a, b) in cg.data().iter().zip(fp.grad.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
