//! The bag classifier: a shared embedding stack feeding a sigmoid
//! classifier head and a non-negative measure head, pooled per class by one
//! of four strategies.
//!
//! For attention pooling, the measure head output `v` is normalized over
//! the bag's instances into a per-class probability measure `p` (each class
//! column sums to 1), and the bag prediction is the expectation of the
//! instance classifier outputs under `p`. Collective pooling is the
//! unweighted mean, maximum selection takes the per-class max, and
//! weighted-collective runs the same normalize-and-weigh machinery as
//! attention with the measure head as its weight source.

mod adam;
mod backward;
mod checkpoint;

pub use adam::Adam;
pub use backward::{backward, Gradients};
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Axis, Matrix, TensorError};

/// Floor added to measure values before normalizing, so an all-zero column
/// (possible with a ReLU measure head) degrades to the uniform measure
/// instead of dividing by zero.
pub const MEASURE_EPSILON: f64 = 1e-8;

/// Bag probabilities are clamped to this range before logs in the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("measure values must be non-negative, found {value} at ({row}, {col})")]
    NegativeMeasure { row: usize, col: usize, value: f64 },
    #[error("{strategy:?} pooling requires a probability measure")]
    MissingMeasure { strategy: PoolingStrategy },
}

/// Non-negative function applied by the measure head. Softmax normalizes
/// along the class axis per instance; the per-bag normalization over
/// instances happens afterwards in [`normalize_measure`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phi {
    Relu,
    Sigmoid,
    Softmax,
}

impl Phi {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phi::Relu => "relu",
            Phi::Sigmoid => "sigmoid",
            Phi::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for Phi {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relu" => Ok(Phi::Relu),
            "sigmoid" => Ok(Phi::Sigmoid),
            "softmax" => Ok(Phi::Softmax),
            other => Err(format!("unknown phi {other:?} (expected relu, sigmoid or softmax)")),
        }
    }
}

/// How instance predictions are pooled into a bag prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingStrategy {
    /// Unweighted mean of instance predictions.
    Collective,
    /// Per-class maximum; gradients flow only through each class's argmax
    /// instance.
    MaxSelection,
    /// Measure-head-weighted mean. Same computation as attention; named
    /// separately for comparisons against the classical formulation.
    WeightedCollective,
    /// Expectation of instance predictions under the learned measure.
    Attention,
}

impl PoolingStrategy {
    pub fn uses_measure(&self) -> bool {
        matches!(self, PoolingStrategy::WeightedCollective | PoolingStrategy::Attention)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PoolingStrategy::Collective => "collective",
            PoolingStrategy::MaxSelection => "max",
            PoolingStrategy::WeightedCollective => "weighted-collective",
            PoolingStrategy::Attention => "attention",
        }
    }
}

impl std::str::FromStr for PoolingStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "collective" => Ok(PoolingStrategy::Collective),
            "max" => Ok(PoolingStrategy::MaxSelection),
            "weighted-collective" => Ok(PoolingStrategy::WeightedCollective),
            "attention" => Ok(PoolingStrategy::Attention),
            other => Err(format!(
                "unknown strategy {other:?} (expected collective, max, weighted-collective or attention)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One dense layer: `in x out` weight and `1 x out` bias. Also reused as
/// the per-layer gradient container, since gradients share these shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl DenseLayer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        DenseLayer { weight: Matrix::zeros(fan_in, fan_out), bias: Matrix::zeros(1, fan_out) }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        DenseLayer {
            weight: rng.uniform_range(fan_in, fan_out, -limit, limit),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn affine(&self, input: &Matrix) -> Result<Matrix, TensorError> {
        input.matmul(&self.weight)?.add_row_bias(&self.bias)
    }
}

/// Per-bag, per-class probability measure over instances: an `L x K` matrix
/// with non-negative entries whose columns each sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMeasure {
    p: Matrix,
}

impl ProbabilityMeasure {
    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn num_instances(&self) -> usize {
        self.p.rows()
    }
}

/// Normalizes non-negative measure values column-wise into a probability
/// measure: `p[l][k] = (v[l][k] + eps) / sum_l (v[l][k] + eps)`.
pub fn normalize_measure(v: &Matrix) -> Result<ProbabilityMeasure, ModelError> {
    for r in 0..v.rows() {
        for (c, &value) in v.row(r).iter().enumerate() {
            if value < 0.0 {
                return Err(ModelError::NegativeMeasure { row: r, col: c, value });
            }
        }
    }
    let (l, k) = v.shape();
    let mut p = Matrix::zeros(l, k);
    for c in 0..k {
        let mut sum = 0.0;
        for r in 0..l {
            sum += v[(r, c)] + MEASURE_EPSILON;
        }
        for r in 0..l {
            p[(r, c)] = (v[(r, c)] + MEASURE_EPSILON) / sum;
        }
    }
    Ok(ProbabilityMeasure { p })
}

/// Pools instance predictions `f` (`L x K`) into a `1 x K` bag prediction.
/// The measure is required for the attention-style strategies.
pub fn pool(
    strategy: PoolingStrategy,
    f: &Matrix,
    p: Option<&ProbabilityMeasure>,
) -> Result<Matrix, ModelError> {
    match strategy {
        PoolingStrategy::Collective => Ok(f.mean_axis(Axis::Rows)),
        PoolingStrategy::MaxSelection => Ok(f.max_axis(Axis::Rows)),
        PoolingStrategy::WeightedCollective | PoolingStrategy::Attention => {
            let p = p.ok_or(ModelError::MissingMeasure { strategy })?;
            Ok(f.mul(p.matrix())?.sum_axis(Axis::Rows))
        }
    }
}

/// Output of a full bag forward pass.
#[derive(Debug, Clone)]
pub struct BagPrediction {
    /// `1 x K` bag probabilities.
    pub prediction: Matrix,
    /// `L x K` per-instance classifier outputs.
    pub instance_probs: Matrix,
    /// Learned measure, present for the attention-style strategies.
    pub measure: Option<ProbabilityMeasure>,
}

/// Everything backward needs from a forward pass. Obtained from
/// [`MilNetwork::forward_traced`]; its existence is the proof that forward
/// ran, so gradients cannot be requested out of order.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    strategy: PoolingStrategy,
    /// Input to each embed layer: `layer_inputs[0]` is the bag itself.
    layer_inputs: Vec<Matrix>,
    /// Pre-ReLU activations per embed layer.
    pre_activations: Vec<Matrix>,
    /// Inverted-dropout masks actually applied (entries 0 or 1/(1-rate)),
    /// `None` for eval mode or zero rate.
    dropout_masks: Vec<Option<Matrix>>,
    /// Final embedding, `L x H`.
    embedding: Matrix,
    /// Instance probabilities `f` and, when the strategy needs them, the
    /// measure values `v` and normalized measure `p`.
    instance_probs: Matrix,
    measure_values: Option<Matrix>,
    measure: Option<ProbabilityMeasure>,
    /// Column sums of `v + eps`, the normalizer denominators.
    measure_denoms: Option<Vec<f64>>,
    prediction: Matrix,
}

impl ForwardTrace {
    pub fn prediction(&self) -> &Matrix {
        &self.prediction
    }

    pub fn instance_probs(&self) -> &Matrix {
        &self.instance_probs
    }

    pub fn measure(&self) -> Option<&ProbabilityMeasure> {
        self.measure.as_ref()
    }

    pub(crate) fn strategy(&self) -> PoolingStrategy {
        self.strategy
    }

    pub(crate) fn parts(
        &self,
    ) -> (&[Matrix], &[Matrix], &[Option<Matrix>], &Matrix, &Matrix, Option<&Matrix>, Option<&ProbabilityMeasure>, Option<&[f64]>)
    {
        (
            &self.layer_inputs,
            &self.pre_activations,
            &self.dropout_masks,
            &self.embedding,
            &self.instance_probs,
            self.measure_values.as_ref(),
            self.measure.as_ref(),
            self.measure_denoms.as_deref(),
        )
    }
}

/// The network: embedding stack plus classifier and measure heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MilNetwork {
    pub embed_layers: Vec<DenseLayer>,
    pub classifier_head: DenseLayer,
    pub measure_head: DenseLayer,
    pub dropout_rate: f64,
    pub phi: Phi,
    pub mode: Mode,
    feature_dim: usize,
    num_classes: usize,
}

impl MilNetwork {
    /// Builds a network with Glorot-uniform weights and zero biases. The
    /// hidden list gives the embedding widths; both heads consume the last
    /// width and emit `num_classes` outputs.
    pub fn init(
        feature_dim: usize,
        num_classes: usize,
        hidden: &[usize],
        dropout_rate: f64,
        phi: Phi,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(ModelError::Config(format!(
                "feature_dim {feature_dim} and num_classes {num_classes} must be at least 1"
            )));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(ModelError::Config(format!(
                "hidden widths must be non-empty and positive, got {hidden:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut embed_layers = Vec::with_capacity(hidden.len());
        let mut fan_in = feature_dim;
        for &width in hidden {
            embed_layers.push(DenseLayer::glorot(fan_in, width, rng));
            fan_in = width;
        }
        Ok(MilNetwork {
            embed_layers,
            classifier_head: DenseLayer::glorot(fan_in, num_classes, rng),
            measure_head: DenseLayer::glorot(fan_in, num_classes, rng),
            dropout_rate,
            phi,
            mode: Mode::Train,
            feature_dim,
            num_classes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.embed_layers.iter().map(|l| l.weight.cols()).collect()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embed_layers.last().expect("at least one layer").weight.cols()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.rows() * m.cols()).sum()
    }

    /// Parameter matrices in declaration order: each embed layer's weight
    /// then bias, then the classifier head, then the measure head. The
    /// checkpoint format and the optimizer both rely on this order.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(2 * self.embed_layers.len() + 4);
        for layer in &self.embed_layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.classifier_head.weight);
        out.push(&self.classifier_head.bias);
        out.push(&self.measure_head.weight);
        out.push(&self.measure_head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(2 * self.embed_layers.len() + 4);
        for layer in &mut self.embed_layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.classifier_head.weight);
        out.push(&mut self.classifier_head.bias);
        out.push(&mut self.measure_head.weight);
        out.push(&mut self.measure_head.bias);
        out
    }

    fn check_input(&self, instances: &Matrix) -> Result<(), ModelError> {
        if instances.cols() != self.feature_dim {
            return Err(ModelError::Shape(TensorError::ShapeMismatch {
                op: "embed",
                left_rows: instances.rows(),
                left_cols: instances.cols(),
                right_rows: self.feature_dim,
                right_cols: self.embed_layers[0].weight.cols(),
            }));
        }
        Ok(())
    }

    fn embed_traced(
        &self,
        instances: &Matrix,
        rng: &mut Rng,
    ) -> Result<(Vec<Matrix>, Vec<Matrix>, Vec<Option<Matrix>>, Matrix), ModelError> {
        self.check_input(instances)?;
        let mut layer_inputs = Vec::with_capacity(self.embed_layers.len());
        let mut pre_activations = Vec::with_capacity(self.embed_layers.len());
        let mut dropout_masks = Vec::with_capacity(self.embed_layers.len());
        let mut current = instances.clone();
        for layer in &self.embed_layers {
            let z = layer.affine(&current)?;
            let mut activated = z.relu();
            let mask = if self.mode == Mode::Train && self.dropout_rate > 0.0 {
                let keep_scale = 1.0 / (1.0 - self.dropout_rate);
                let mask = rng
                    .uniform(activated.rows(), activated.cols())
                    .map(|u| if u < self.dropout_rate { 0.0 } else { keep_scale });
                activated = activated.mul(&mask)?;
                Some(mask)
            } else {
                None
            };
            layer_inputs.push(current);
            pre_activations.push(z);
            dropout_masks.push(mask);
            current = activated;
        }
        Ok((layer_inputs, pre_activations, dropout_masks, current))
    }

    /// Embeds a bag of instances (`L x M` to `L x H`). Train mode applies
    /// inverted dropout after each ReLU; eval mode is deterministic and
    /// leaves the rng untouched.
    pub fn embed(&self, instances: &Matrix, rng: &mut Rng) -> Result<Matrix, ModelError> {
        let (_, _, _, embedding) = self.embed_traced(instances, rng)?;
        Ok(embedding)
    }

    /// Per-instance class probabilities: sigmoid of the classifier head.
    pub fn classify_instances(&self, embedding: &Matrix) -> Result<Matrix, ModelError> {
        Ok(self.classifier_head.affine(embedding)?.sigmoid())
    }

    /// Per-instance measure values: phi of the measure head. Non-negative
    /// for every phi choice.
    pub fn measure_instances(&self, embedding: &Matrix) -> Result<Matrix, ModelError> {
        let logits = self.measure_head.affine(embedding)?;
        Ok(match self.phi {
            Phi::Relu => logits.relu(),
            Phi::Sigmoid => logits.sigmoid(),
            Phi::Softmax => logits.softmax_rows(),
        })
    }

    /// Full forward pass retaining everything backward needs.
    pub fn forward_traced(
        &self,
        strategy: PoolingStrategy,
        bag: &Matrix,
        rng: &mut Rng,
    ) -> Result<ForwardTrace, ModelError> {
        let (layer_inputs, pre_activations, dropout_masks, embedding) =
            self.embed_traced(bag, rng)?;
        let instance_probs = self.classify_instances(&embedding)?;
        let (measure_values, measure, measure_denoms, prediction) = if strategy.uses_measure() {
            let v = self.measure_instances(&embedding)?;
            let p = normalize_measure(&v)?;
            let denoms: Vec<f64> = (0..v.cols())
                .map(|c| (0..v.rows()).map(|r| v[(r, c)] + MEASURE_EPSILON).sum())
                .collect();
            let prediction = pool(strategy, &instance_probs, Some(&p))?;
            (Some(v), Some(p), Some(denoms), prediction)
        } else {
            let prediction = pool(strategy, &instance_probs, None)?;
            (None, None, None, prediction)
        };
        Ok(ForwardTrace {
            strategy,
            layer_inputs,
            pre_activations,
            dropout_masks,
            embedding,
            instance_probs,
            measure_values,
            measure,
            measure_denoms,
            prediction,
        })
    }

    /// Forward pass returning just the prediction bundle.
    pub fn forward_bag(
        &self,
        strategy: PoolingStrategy,
        bag: &Matrix,
        rng: &mut Rng,
    ) -> Result<BagPrediction, ModelError> {
        let trace = self.forward_traced(strategy, bag, rng)?;
        Ok(BagPrediction {
            prediction: trace.prediction,
            instance_probs: trace.instance_probs,
            measure: trace.measure,
        })
    }
}

/// Mean over classes of binary cross-entropy, with predictions clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]` before the logs.
pub fn bce_loss(prediction: &Matrix, label: &Matrix) -> Result<f64, ModelError> {
    if prediction.shape() != label.shape() || prediction.rows() != 1 {
        return Err(ModelError::Shape(TensorError::ShapeMismatch {
            op: "bce_loss",
            left_rows: prediction.rows(),
            left_cols: prediction.cols(),
            right_rows: label.rows(),
            right_cols: label.cols(),
        }));
    }
    let k = prediction.cols() as f64;
    let mut total = 0.0;
    for (&f, &d) in prediction.data().iter().zip(label.data()) {
        let f = f.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= d * f.ln() + (1.0 - d) * (1.0 - f).ln();
    }
    Ok(total / k)
}

/// Multi-hot label as a `1 x K` matrix of 0/1.
pub fn label_matrix(label: &[bool]) -> Matrix {
    Matrix::from_vec(1, label.len(), label.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
        .expect("labels are non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(phi: Phi, seed: u64) -> MilNetwork {
        let mut rng = Rng::new(seed).split("init");
        MilNetwork::init(4, 3, &[5], 0.0, phi, &mut rng).unwrap()
    }

    #[test]
    fn init_param_count_matches_architecture() {
        let mut rng = Rng::new(0).split("init");
        let net = MilNetwork::init(128, 527, &[500, 500, 500], 0.2, Phi::Softmax, &mut rng).unwrap();
        let expected = 128 * 500 + 500 + 2 * (500 * 500 + 500) + 2 * (500 * 527 + 527);
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn init_same_seed_identical() {
        let a = small_net(Phi::Relu, 9);
        let b = small_net(Phi::Relu, 9);
        assert_eq!(a, b);
        let c = small_net(Phi::Relu, 10);
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_config() {
        let mut rng = Rng::new(0);
        assert!(MilNetwork::init(0, 3, &[5], 0.0, Phi::Relu, &mut rng).is_err());
        assert!(MilNetwork::init(4, 0, &[5], 0.0, Phi::Relu, &mut rng).is_err());
        assert!(MilNetwork::init(4, 3, &[], 0.0, Phi::Relu, &mut rng).is_err());
        assert!(MilNetwork::init(4, 3, &[5, 0], 0.0, Phi::Relu, &mut rng).is_err());
        assert!(MilNetwork::init(4, 3, &[5], 1.0, Phi::Relu, &mut rng).is_err());
    }

    #[test]
    fn minimal_net_runs_single_instance_bag() {
        let mut rng = Rng::new(1).split("init");
        let net = MilNetwork::init(6, 2, &[1], 0.0, Phi::Relu, &mut rng).unwrap();
        let bag = Rng::new(2).uniform(1, 6);
        let out = net.forward_bag(PoolingStrategy::Attention, &bag, &mut Rng::new(3)).unwrap();
        assert_eq!(out.prediction.shape(), (1, 2));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut net = small_net(Phi::Softmax, 4);
        net.set_mode(Mode::Eval);
        let bag = Rng::new(5).uniform(6, 4);
        let a = net.forward_bag(PoolingStrategy::Attention, &bag, &mut Rng::new(1)).unwrap();
        let b = net.forward_bag(PoolingStrategy::Attention, &bag, &mut Rng::new(2)).unwrap();
        assert_eq!(a.prediction, b.prediction);
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let mut net = small_net(Phi::Sigmoid, 6);
        let bag = Rng::new(7).uniform(5, 4);
        net.set_mode(Mode::Train);
        let train = net.embed(&bag, &mut Rng::new(1)).unwrap();
        net.set_mode(Mode::Eval);
        let eval = net.embed(&bag, &mut Rng::new(2)).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn dropout_scales_or_zeroes() {
        let mut rng = Rng::new(8).split("init");
        let net = MilNetwork::init(4, 3, &[16], 0.5, Phi::Relu, &mut rng).unwrap();
        let bag = Rng::new(9).uniform(4, 4);
        let mut dropout_rng = Rng::new(10);
        let dropped = net.embed(&bag, &mut dropout_rng).unwrap();
        let mut eval_net = net.clone();
        eval_net.set_mode(Mode::Eval);
        let clean = eval_net.embed(&bag, &mut Rng::new(11)).unwrap();
        let mut zeroed = 0;
        for (d, c) in dropped.data().iter().zip(clean.data()) {
            if *d == 0.0 {
                zeroed += 1;
            } else {
                assert!((d - 2.0 * c).abs() < 1e-12, "kept units are scaled by 1/(1-rate)");
            }
        }
        assert!(zeroed > 0);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_embedding() {
        let net = small_net(Phi::Relu, 12);
        let bag = Matrix::zeros(3, 4);
        let h = net.embed(&bag, &mut Rng::new(0)).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classify_zero_params_is_half() {
        let mut net = small_net(Phi::Relu, 13);
        net.classifier_head = DenseLayer::zeros(5, 3);
        let h = Rng::new(14).uniform(4, 5);
        let f = net.classify_instances(&h).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn classify_matches_straight_line_oracle() {
        let net = small_net(Phi::Relu, 15);
        let h = Rng::new(16).uniform(4, 5);
        let f = net.classify_instances(&h).unwrap();
        // Independent elementwise recomputation.
        for l in 0..4 {
            for k in 0..3 {
                let mut z = net.classifier_head.bias[(0, k)];
                for j in 0..5 {
                    z += h[(l, j)] * net.classifier_head.weight[(j, k)];
                }
                let expect = 1.0 / (1.0 + (-z).exp());
                assert!((f[(l, k)] - expect).abs() < 1e-12);
            }
        }
        assert!(f.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn measure_phi_ranges() {
        let h = Rng::new(17).uniform(4, 5);

        let mut relu_net = small_net(Phi::Relu, 18);
        relu_net.measure_head = DenseLayer::zeros(5, 3);
        let v = relu_net.measure_instances(&h).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));

        let sigmoid_net = small_net(Phi::Sigmoid, 19);
        let v = sigmoid_net.measure_instances(&h).unwrap();
        assert!(v.data().iter().all(|&x| x > 0.0 && x < 1.0));

        let softmax_net = small_net(Phi::Softmax, 20);
        let v = softmax_net.measure_instances(&h).unwrap();
        for r in 0..v.rows() {
            let row_sum: f64 = v.row(r).iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_constant_column_is_uniform() {
        let v = Matrix::filled(4, 2, 0.7);
        let p = normalize_measure(&v).unwrap();
        for &x in p.matrix().data() {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_single_instance_is_one() {
        let v = Matrix::row_vector(&[0.3, 0.0, 8.0]).unwrap();
        let p = normalize_measure(&v).unwrap();
        assert!(p.matrix().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn normalize_zero_column_falls_back_to_uniform() {
        let v = Matrix::zeros(5, 2);
        let p = normalize_measure(&v).unwrap();
        for &x in p.matrix().data() {
            assert!((x - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_negative() {
        let v = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4]]).unwrap();
        assert!(matches!(
            normalize_measure(&v),
            Err(ModelError::NegativeMeasure { row: 1, col: 0, .. })
        ));
    }

    #[test]
    fn normalize_columns_sum_to_one() {
        let v = Rng::new(22).uniform(7, 4);
        let p = normalize_measure(&v).unwrap();
        for c in 0..4 {
            let sum: f64 = (0..7).map(|r| p.matrix()[(r, c)]).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for r in 0..7 {
                assert!(p.matrix()[(r, c)] >= 0.0);
            }
        }
    }

    #[test]
    fn pool_uniform_measure_equals_collective() {
        let f = Rng::new(23).uniform(6, 3);
        let uniform = normalize_measure(&Matrix::filled(6, 3, 1.0)).unwrap();
        let attention = pool(PoolingStrategy::Attention, &f, Some(&uniform)).unwrap();
        let collective = pool(PoolingStrategy::Collective, &f, None).unwrap();
        assert!(attention.max_abs_diff(&collective).unwrap() < 1e-12);
    }

    #[test]
    fn pool_single_instance_all_strategies_agree() {
        let f = Matrix::row_vector(&[0.2, 0.9]).unwrap();
        let p = normalize_measure(&Matrix::filled(1, 2, 0.4)).unwrap();
        for strategy in [
            PoolingStrategy::Collective,
            PoolingStrategy::MaxSelection,
            PoolingStrategy::WeightedCollective,
            PoolingStrategy::Attention,
        ] {
            let out = pool(strategy, &f, Some(&p)).unwrap();
            assert_eq!(out, f);
        }
    }

    #[test]
    fn pool_hand_example() {
        let f = Matrix::from_rows(&[vec![0.9], vec![0.1]]).unwrap();
        let v = Matrix::from_rows(&[vec![0.75], vec![0.25]]).unwrap();
        let p = normalize_measure(&v).unwrap();
        let attention = pool(PoolingStrategy::Attention, &f, Some(&p)).unwrap();
        assert!((attention[(0, 0)] - 0.7).abs() < 1e-7);
        let collective = pool(PoolingStrategy::Collective, &f, None).unwrap();
        assert!((collective[(0, 0)] - 0.5).abs() < 1e-12);
        let max = pool(PoolingStrategy::MaxSelection, &f, None).unwrap();
        assert_eq!(max[(0, 0)], 0.9);
    }

    #[test]
    fn pool_missing_measure_is_error() {
        let f = Matrix::zeros(3, 2);
        assert!(matches!(
            pool(PoolingStrategy::Attention, &f, None),
            Err(ModelError::MissingMeasure { .. })
        ));
    }

    #[test]
    fn pool_zero_instances_give_zero_bag() {
        let f = Matrix::zeros(4, 3);
        let p = normalize_measure(&Rng::new(24).uniform(4, 3)).unwrap();
        for strategy in [
            PoolingStrategy::Collective,
            PoolingStrategy::MaxSelection,
            PoolingStrategy::WeightedCollective,
            PoolingStrategy::Attention,
        ] {
            let out = pool(strategy, &f, Some(&p)).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.0), "{strategy:?}");
        }
    }

    #[test]
    fn forward_outputs_bounded_and_within_instance_range() {
        let mut net = small_net(Phi::Softmax, 25);
        net.set_mode(Mode::Eval);
        let bag = Rng::new(26).normal(8, 4, 0.0, 2.0);
        let out = net.forward_bag(PoolingStrategy::Attention, &bag, &mut Rng::new(0)).unwrap();
        for k in 0..3 {
            let f_k = out.prediction[(0, k)];
            assert!((0.0..=1.0).contains(&f_k));
            let col: Vec<f64> = (0..8).map(|l| out.instance_probs[(l, k)]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(f_k >= lo - 1e-12 && f_k <= hi + 1e-12);
        }
    }

    #[test]
    fn forward_permutation_invariant_in_eval() {
        let mut net = small_net(Phi::Softmax, 27);
        net.set_mode(Mode::Eval);
        let bag = Rng::new(28).normal(6, 4, 0.0, 1.0);
        let mut permuted_rows: Vec<Vec<f64>> = (0..6).map(|r| bag.row(r).to_vec()).collect();
        permuted_rows.reverse();
        permuted_rows.swap(1, 3);
        let permuted = Matrix::from_rows(&permuted_rows).unwrap();
        for strategy in [
            PoolingStrategy::Collective,
            PoolingStrategy::MaxSelection,
            PoolingStrategy::WeightedCollective,
            PoolingStrategy::Attention,
        ] {
            let a = net.forward_bag(strategy, &bag, &mut Rng::new(0)).unwrap();
            let b = net.forward_bag(strategy, &permuted, &mut Rng::new(0)).unwrap();
            assert!(
                a.prediction.max_abs_diff(&b.prediction).unwrap() < 1e-12,
                "{strategy:?} not permutation invariant"
            );
        }
    }

    #[test]
    fn loss_perfect_prediction_near_zero() {
        let prediction = Matrix::row_vector(&[1.0, 0.0, 0.0]).unwrap();
        let label = Matrix::row_vector(&[1.0, 0.0, 0.0]).unwrap();
        let loss = bce_loss(&prediction, &label).unwrap();
        assert!(loss >= 0.0 && loss < 1e-11, "loss {loss}");
    }

    #[test]
    fn loss_half_everywhere_is_ln_two() {
        let prediction = Matrix::filled(1, 4, 0.5);
        let label = Matrix::row_vector(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        let loss = bce_loss(&prediction, &label).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_hand_example() {
        let prediction = Matrix::row_vector(&[0.9, 0.1]).unwrap();
        let label = Matrix::row_vector(&[1.0, 0.0]).unwrap();
        let loss = bce_loss(&prediction, &label).unwrap();
        assert!((loss - 0.10536051565782630).abs() < 1e-12);
    }

    #[test]
    fn strategy_and_phi_round_trip_strings() {
        for s in ["collective", "max", "weighted-collective", "attention"] {
            let strategy: PoolingStrategy = s.parse().unwrap();
            assert_eq!(strategy.as_str(), s);
        }
        for s in ["relu", "sigmoid", "softmax"] {
            let phi: Phi = s.parse().unwrap();
            assert_eq!(phi.as_str(), s);
        }
        assert!("mean".parse::<PoolingStrategy>().is_err());
    }
}
