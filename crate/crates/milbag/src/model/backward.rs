//! Hand-derived backpropagation through the full bag forward pass.
//!
//! The chain starts at the per-class BCE loss, splits per strategy at the
//! pooling step, passes through the measure normalizer's quotient rule for
//! the attention strategies, and walks the embedding stack in reverse
//! (dropout mask, ReLU gate, affine) accumulating parameter gradients.

use crate::tensor::{Axis, Matrix};

use super::{DenseLayer, ForwardTrace, MilNetwork, ModelError, Phi, PoolingStrategy, PROB_CLAMP};

/// Parameter gradients, shaped exactly like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embed_layers: Vec<DenseLayer>,
    pub classifier_head: DenseLayer,
    pub measure_head: DenseLayer,
}

impl Gradients {
    pub fn zeros_like(net: &MilNetwork) -> Self {
        let zero = |layer: &DenseLayer| DenseLayer::zeros(layer.weight.rows(), layer.weight.cols());
        Gradients {
            embed_layers: net.embed_layers.iter().map(zero).collect(),
            classifier_head: zero(&net.classifier_head),
            measure_head: zero(&net.measure_head),
        }
    }

    /// Same declaration order as [`MilNetwork::params`].
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

    pub fn accumulate(&mut self, other: &Gradients) -> Result<(), ModelError> {
        let add = |a: &mut DenseLayer, b: &DenseLayer| -> Result<(), ModelError> {
            a.weight = a.weight.add(&b.weight)?;
            a.bias = a.bias.add(&b.bias)?;
            Ok(())
        };
        for (mine, theirs) in self.embed_layers.iter_mut().zip(&other.embed_layers) {
            add(mine, theirs)?;
        }
        add(&mut self.classifier_head, &other.classifier_head)?;
        add(&mut self.measure_head, &other.measure_head)
    }

    pub fn scale(&mut self, factor: f64) {
        let scale = |layer: &mut DenseLayer| {
            layer.weight = layer.weight.scale(factor);
            layer.bias = layer.bias.scale(factor);
        };
        for layer in &mut self.embed_layers {
            scale(layer);
        }
        scale(&mut self.classifier_head);
        scale(&mut self.measure_head);
    }

    pub fn max_abs(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|m| m.data().iter())
            .fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|m| m.is_finite())
    }
}

/// Gradient of the mean-over-classes BCE with respect to the prediction.
fn loss_grad(prediction: &Matrix, label: &Matrix) -> Matrix {
    let k = prediction.cols() as f64;
    let mut out = Matrix::zeros(1, prediction.cols());
    for c in 0..prediction.cols() {
        let f = prediction[(0, c)].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let d = label[(0, c)];
        out[(0, c)] = (f - d) / (f * (1.0 - f)) / k;
    }
    out
}

/// Gradients of the BCE loss with respect to every parameter, for the
/// forward pass captured in `trace`. The trace argument is what makes the
/// "forward ran first" precondition structural.
pub fn backward(
    net: &MilNetwork,
    trace: &ForwardTrace,
    label: &Matrix,
) -> Result<Gradients, ModelError> {
    let (layer_inputs, pre_activations, dropout_masks, embedding, f, v, p, denoms) = trace.parts();
    let strategy = trace.strategy();
    let prediction = trace.prediction();
    let (l, k) = f.shape();

    let d_prediction = loss_grad(prediction, label);

    // Pooling backward: d loss / d f, plus d loss / d p for the
    // attention-style strategies.
    let mut d_f = Matrix::zeros(l, k);
    let mut d_p: Option<Matrix> = None;
    match strategy {
        PoolingStrategy::Collective => {
            for r in 0..l {
                for c in 0..k {
                    d_f[(r, c)] = d_prediction[(0, c)] / l as f64;
                }
            }
        }
        PoolingStrategy::MaxSelection => {
            // Only each class's argmax instance receives gradient; ties
            // resolve to the lowest index, matching the forward max.
            for c in 0..k {
                let mut best = 0usize;
                for r in 1..l {
                    if f[(r, c)] > f[(best, c)] {
                        best = r;
                    }
                }
                d_f[(best, c)] = d_prediction[(0, c)];
            }
        }
        PoolingStrategy::WeightedCollective | PoolingStrategy::Attention => {
            let p = p.expect("measure present for attention strategies");
            let mut dp = Matrix::zeros(l, k);
            for r in 0..l {
                for c in 0..k {
                    d_f[(r, c)] = d_prediction[(0, c)] * p.matrix()[(r, c)];
                    dp[(r, c)] = d_prediction[(0, c)] * f[(r, c)];
                }
            }
            d_p = Some(dp);
        }
    }

    // Classifier head: f = sigmoid(h W_f + b_f).
    let d_zf = d_f.mul(&f.map(|x| x * (1.0 - x)))?;
    let classifier_head = DenseLayer {
        weight: embedding.transpose().matmul(&d_zf)?,
        bias: d_zf.sum_axis(Axis::Rows),
    };
    let mut d_embedding = d_zf.matmul(&net.classifier_head.weight.transpose())?;

    // Measure head, through the column normalizer's quotient rule:
    // p[:,c] = (v[:,c] + eps) / s_c  =>  dv = (dp - <dp, p>_col * 1) / s_c.
    let measure_head = if let Some(d_p) = d_p {
        let v = v.expect("measure values present");
        let p = p.expect("measure present").matrix();
        let denoms = denoms.expect("denominators present");
        let mut d_v = Matrix::zeros(l, k);
        for c in 0..k {
            let mut weighted: f64 = 0.0;
            for r in 0..l {
                weighted += d_p[(r, c)] * p[(r, c)];
            }
            for r in 0..l {
                d_v[(r, c)] = (d_p[(r, c)] - weighted) / denoms[c];
            }
        }

        // Through phi to the measure head's pre-activation.
        let d_zv = match net.phi {
            Phi::Relu => {
                // v = max(z, 0): the gate is v > 0 (v and z share sign off
                // the kink, and the epsilon floor never enters v itself).
                let mut d = d_v;
                for r in 0..l {
                    for c in 0..k {
                        if v[(r, c)] <= 0.0 {
                            d[(r, c)] = 0.0;
                        }
                    }
                }
                d
            }
            Phi::Sigmoid => d_v.mul(&v.map(|x| x * (1.0 - x)))?,
            Phi::Softmax => {
                // Row-wise softmax Jacobian: dz_i = v_i (dv_i - sum_j dv_j v_j).
                let mut d = Matrix::zeros(l, k);
                for r in 0..l {
                    let mut dot = 0.0;
                    for c in 0..k {
                        dot += d_v[(r, c)] * v[(r, c)];
                    }
                    for c in 0..k {
                        d[(r, c)] = v[(r, c)] * (d_v[(r, c)] - dot);
                    }
                }
                d
            }
        };

        let head = DenseLayer {
            weight: embedding.transpose().matmul(&d_zv)?,
            bias: d_zv.sum_axis(Axis::Rows),
        };
        d_embedding = d_embedding.add(&d_zv.matmul(&net.measure_head.weight.transpose())?)?;
        head
    } else {
        DenseLayer::zeros(net.measure_head.weight.rows(), net.measure_head.weight.cols())
    };

    // Embedding stack in reverse: dropout mask, ReLU gate, affine.
    let mut embed_grads: Vec<DenseLayer> = Vec::with_capacity(net.embed_layers.len());
    let mut d_out = d_embedding;
    for i in (0..net.embed_layers.len()).rev() {
        if let Some(mask) = &dropout_masks[i] {
            d_out = d_out.mul(mask)?;
        }
        let gated = d_out.mul(&pre_activations[i].map(|z| if z > 0.0 { 1.0 } else { 0.0 }))?;
        embed_grads.push(DenseLayer {
            weight: layer_inputs[i].transpose().matmul(&gated)?,
            bias: gated.sum_axis(Axis::Rows),
        });
        if i > 0 {
            d_out = gated.matmul(&net.embed_layers[i].weight.transpose())?;
        }
    }
    embed_grads.reverse();

    Ok(Gradients { embed_layers: embed_grads, classifier_head, measure_head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bce_loss, pool, MilNetwork, Mode};
    use crate::rng::Rng;

    const STRATEGIES: [PoolingStrategy; 4] = [
        PoolingStrategy::Collective,
        PoolingStrategy::MaxSelection,
        PoolingStrategy::WeightedCollective,
        PoolingStrategy::Attention,
    ];

    /// Central finite differences over every parameter. The dropout rng is
    /// cloned per evaluation so stochastic masks are held fixed.
    fn finite_difference_check(net: &MilNetwork, strategy: PoolingStrategy, bag: &Matrix, label: &Matrix, dropout_rng: &Rng) {
        let step = 1e-5;
        let trace = net.forward_traced(strategy, bag, &mut dropout_rng.clone()).unwrap();
        let analytic = backward(net, &trace, label).unwrap();

        let loss_at = |candidate: &MilNetwork| -> f64 {
            let trace = candidate.forward_traced(strategy, bag, &mut dropout_rng.clone()).unwrap();
            bce_loss(trace.prediction(), label).unwrap()
        };

        let mut worst = 0.0f64;
        let param_count = net.params().len();
        for which in 0..param_count {
            let (rows, cols) = net.params()[which].shape();
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = net.clone();
                    plus.params_mut()[which][(r, c)] += step;
                    let mut minus = net.clone();
                    minus.params_mut()[which][(r, c)] -= step;
                    let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
                    let a = analytic.params()[which][(r, c)];
                    let denom = (a.abs() + numeric.abs()).max(1e-8);
                    let rel = (a - numeric).abs() / denom;
                    // Below the central-difference roundoff floor the
                    // relative error is meaningless; treat tiny absolute
                    // agreement as a pass.
                    if (a - numeric).abs() > 1e-9 {
                        assert!(
                            rel < 1e-5,
                            "{strategy:?} param {which} ({r},{c}): analytic {a}, numeric {numeric}, rel {rel}"
                        );
                    }
                    worst = worst.max(rel.min(1.0));
                }
            }
        }
        assert!(worst < 1.0, "sanity");
    }

    fn check_net(phi: Phi, dropout: f64, seed: u64) {
        let mut init_rng = Rng::new(seed).split("init");
        let mut net = MilNetwork::init(4, 3, &[5], dropout, phi, &mut init_rng).unwrap();
        net.set_mode(if dropout > 0.0 { Mode::Train } else { Mode::Eval });
        let bag = Rng::new(seed ^ 0xabcd).normal(4, 4, 0.0, 1.0);
        let label = Matrix::row_vector(&[1.0, 0.0, 1.0]).unwrap();
        let dropout_rng = Rng::new(seed ^ 0x1234).split("dropout");
        for strategy in STRATEGIES {
            finite_difference_check(&net, strategy, &bag, &label, &dropout_rng);
        }
    }

    #[test]
    fn gradients_match_finite_differences_eval() {
        for phi in [Phi::Relu, Phi::Sigmoid, Phi::Softmax] {
            check_net(phi, 0.0, 42);
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_dropout() {
        check_net(Phi::Softmax, 0.2, 7);
    }

    #[test]
    fn max_selection_ignores_non_argmax_instances() {
        let f = Matrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]]).unwrap();
        let pooled = pool(PoolingStrategy::MaxSelection, &f, None).unwrap();
        // Perturbing a non-argmax entry leaves the pooled value unchanged.
        let mut perturbed = f.clone();
        perturbed[(1, 0)] += 0.05;
        perturbed[(0, 1)] -= 0.05;
        let pooled_perturbed = pool(PoolingStrategy::MaxSelection, &perturbed, None).unwrap();
        assert_eq!(pooled, pooled_perturbed);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // All-zero parameters: f is 0.5 everywhere and the measure is
        // uniform, so a label of 0.5 per class makes the loss stationary.
        let mut rng = Rng::new(0).split("init");
        let mut net = MilNetwork::init(4, 3, &[5], 0.0, Phi::Softmax, &mut rng).unwrap();
        for param in net.params_mut() {
            for v in param.data_mut() {
                *v = 0.0;
            }
        }
        net.set_mode(Mode::Eval);
        let bag = Rng::new(1).normal(4, 4, 0.0, 1.0);
        let label = Matrix::filled(1, 3, 0.5);
        for strategy in STRATEGIES {
            let trace = net.forward_traced(strategy, &bag, &mut Rng::new(2)).unwrap();
            assert_eq!(trace.prediction(), &Matrix::filled(1, 3, 0.5));
            if let Some(p) = trace.measure() {
                assert!(p.matrix().data().iter().all(|&x| (x - 0.25).abs() < 1e-12));
            }
            let grads = backward(&net, &trace, &label).unwrap();
            assert!(grads.max_abs() < 1e-8, "{strategy:?}: {}", grads.max_abs());
        }
    }

    #[test]
    fn collective_and_max_leave_measure_head_untouched() {
        let mut rng = Rng::new(5).split("init");
        let net = MilNetwork::init(4, 2, &[6], 0.0, Phi::Relu, &mut rng).unwrap();
        let bag = Rng::new(6).normal(3, 4, 0.0, 1.0);
        let label = Matrix::row_vector(&[1.0, 0.0]).unwrap();
        for strategy in [PoolingStrategy::Collective, PoolingStrategy::MaxSelection] {
            let trace = net.forward_traced(strategy, &bag, &mut Rng::new(0)).unwrap();
            let grads = backward(&net, &trace, &label).unwrap();
            assert!(grads.measure_head.weight.data().iter().all(|&v| v == 0.0));
            assert!(grads.measure_head.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn accumulate_and_scale() {
        let mut rng = Rng::new(9).split("init");
        let net = MilNetwork::init(3, 2, &[4], 0.0, Phi::Sigmoid, &mut rng).unwrap();
        let bag = Rng::new(10).normal(5, 3, 0.0, 1.0);
        let label = Matrix::row_vector(&[0.0, 1.0]).unwrap();
        let trace = net.forward_traced(PoolingStrategy::Attention, &bag, &mut Rng::new(0)).unwrap();
        let single = backward(&net, &trace, &label).unwrap();
        let mut doubled = Gradients::zeros_like(&net);
        doubled.accumulate(&single).unwrap();
        doubled.accumulate(&single).unwrap();
        doubled.scale(0.5);
        for (a, b) in doubled.params().iter().zip(single.params()) {
            assert!(a.max_abs_diff(b).unwrap() < 1e-15);
        }
    }
}
