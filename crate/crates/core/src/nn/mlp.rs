//! Feed-forward stack of dense, batch-norm, leaky-ReLU and dropout layers
//! with optional additive skip connections and a recorded tape for
//! reverse-mode gradients.

use rand::Rng;

use super::activation::{leaky_relu_backward, leaky_relu_unchecked, DEFAULT_NEGATIVE_SLOPE};
use super::dropout::apply_dropout_mask;
use super::batchnorm::{
    batch_norm_backward, BatchNormCache, BatchNormState, Mode, DEFAULT_BN_EPSILON,
    DEFAULT_BN_MOMENTUM,
};
use super::matrix::{gemm, Matrix, Op};
use super::params::{Gradients, ParameterSet};
use crate::error::{ensure_finite, Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    BatchNorm,
    LeakyRelu,
    Dropout,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::LeakyRelu => "leaky_relu",
            LayerKind::Dropout => "dropout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "dense" => LayerKind::Dense,
            "batch_norm" => LayerKind::BatchNorm,
            "leaky_relu" => LayerKind::LeakyRelu,
            "dropout" => LayerKind::Dropout,
            _ => return None,
        })
    }
}

/// One layer. `skip_from` adds the output of an earlier layer of equal width
/// to this layer's output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub width: usize,
    pub skip_from: Option<usize>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, width: usize) -> Self {
        Self {
            kind,
            width,
            skip_from: None,
        }
    }

    pub fn with_skip(mut self, from: usize) -> Self {
        self.skip_from = Some(from);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub negative_slope: f64,
    pub dropout: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Self {
        Self {
            input_dim,
            layers,
            negative_slope: DEFAULT_NEGATIVE_SLOPE,
            dropout: 0.1,
            bn_epsilon: DEFAULT_BN_EPSILON,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    /// Encoder/decoder stack of `dense → batch_norm → leaky_relu → dropout`
    /// blocks followed by a linear head. With `skips`, each decoder block
    /// adds the output of the mirrored encoder block when widths agree.
    pub fn encoder_decoder(
        input_dim: usize,
        encoder: &[usize],
        decoder: &[usize],
        skips: bool,
        output_dim: usize,
    ) -> Self {
        let mut layers = Vec::new();
        let mut encoder_ends = Vec::new();
        let push_block = |layers: &mut Vec<LayerSpec>, w: usize, skip: Option<usize>| {
            layers.push(LayerSpec::new(LayerKind::Dense, w));
            layers.push(LayerSpec::new(LayerKind::BatchNorm, w));
            layers.push(LayerSpec::new(LayerKind::LeakyRelu, w));
            let mut drop = LayerSpec::new(LayerKind::Dropout, w);
            drop.skip_from = skip;
            layers.push(drop);
            layers.len() - 1
        };
        for &w in encoder {
            let end = push_block(&mut layers, w, None);
            encoder_ends.push((end, w));
        }
        for (k, &w) in decoder.iter().enumerate() {
            let skip = if skips && k < encoder_ends.len() {
                let (end, ew) = encoder_ends[encoder_ends.len() - 1 - k];
                (ew == w).then_some(end)
            } else {
                None
            };
            push_block(&mut layers, w, skip);
        }
        layers.push(LayerSpec::new(LayerKind::Dense, output_dim));
        Self::new(input_dim, layers)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::shape("input width must be > 0"));
        }
        if !(self.negative_slope > 0.0 && self.negative_slope < 1.0) {
            return Err(Error::invalid("negative slope must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout rate must be in [0, 1)"));
        }
        BatchNormState::with_params(1, self.bn_epsilon, self.bn_momentum)?;
        let mut width = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.width == 0 {
                return Err(Error::shape(format!("layer {i}: width must be > 0")));
            }
            if layer.kind != LayerKind::Dense && layer.width != width {
                return Err(Error::shape(format!(
                    "layer {i} ({}): width {} does not match incoming width {width}",
                    layer.kind.as_str(),
                    layer.width
                )));
            }
            if let Some(j) = layer.skip_from {
                if j >= i {
                    return Err(Error::shape(format!(
                        "layer {i}: skip source {j} is not an earlier layer"
                    )));
                }
                if self.layers[j].width != layer.width {
                    return Err(Error::shape(format!(
                        "layer {i}: skip source {j} has width {}, expected {}",
                        self.layers[j].width, layer.width
                    )));
                }
            }
            width = layer.width;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slots {
    None,
    Dense { w: usize, b: usize },
    Norm { gamma: usize, beta: usize },
}

#[derive(Debug, Clone)]
enum Record {
    Plain,
    Norm(BatchNormCache),
    /// Seed of the dropout mask, regenerated in the reverse pass.
    Dropout(Option<u64>),
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    mode: Mode,
    input: Matrix,
    outputs: Vec<Matrix>,
    records: Vec<Record>,
}

impl Tape {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Input to layer `i` (the network input for `i == 0`).
    pub fn layer_input(&self, i: usize) -> &Matrix {
        if i == 0 {
            &self.input
        } else {
            &self.outputs[i - 1]
        }
    }

    pub fn layer_output(&self, i: usize) -> &Matrix {
        &self.outputs[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: ParameterSet,
    bn: Vec<Option<BatchNormState>>,
    slots: Vec<Slots>,
}

impl Mlp {
    /// Builds a network with seeded uniform fan-in initialization,
    /// `U(-sqrt(3/fan_in), sqrt(3/fan_in))` for weights and zero biases.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::seeded(seed);
        let mut params = ParameterSet::new();
        let mut bn = Vec::with_capacity(spec.layers.len());
        let mut width = spec.input_dim;
        for (i, layer) in spec.layers.iter().enumerate() {
            match layer.kind {
                LayerKind::Dense => {
                    let limit = (3.0 / width as f64).sqrt();
                    let data = (0..width * layer.width)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect();
                    params.insert(format!("l{i}.w"), Matrix::from_vec(width, layer.width, data)?)?;
                    params.insert(format!("l{i}.b"), Matrix::zeros(1, layer.width))?;
                    bn.push(None);
                }
                LayerKind::BatchNorm => {
                    params.insert(format!("l{i}.gamma"), Matrix::filled(1, layer.width, 1.0))?;
                    params.insert(format!("l{i}.beta"), Matrix::zeros(1, layer.width))?;
                    bn.push(Some(BatchNormState::with_params(
                        layer.width,
                        spec.bn_epsilon,
                        spec.bn_momentum,
                    )?));
                }
                LayerKind::LeakyRelu | LayerKind::Dropout => bn.push(None),
            }
            width = layer.width;
        }
        let slots = resolve_slots(&spec, &params);
        Ok(Self {
            spec,
            params,
            bn,
            slots,
        })
    }

    /// Reassembles a network from stored parts, checking the layout.
    pub fn from_parts(
        spec: MlpSpec,
        params: ParameterSet,
        bn: Vec<Option<BatchNormState>>,
    ) -> Result<Self> {
        let template = Mlp::new(spec.clone(), 0)?;
        if !template.params.same_layout(&params) {
            return Err(Error::shape("parameter layout does not match architecture"));
        }
        if bn.len() != template.bn.len()
            || bn
                .iter()
                .zip(&template.bn)
                .any(|(a, b)| a.as_ref().map(|s| s.width()) != b.as_ref().map(|s| s.width()))
        {
            return Err(Error::shape("batch-norm states do not match architecture"));
        }
        let slots = template.slots;
        Ok(Self {
            spec,
            params,
            bn,
            slots,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn batch_norm_states(&self) -> &[Option<BatchNormState>] {
        &self.bn
    }

    pub fn batch_norm_states_mut(&mut self) -> &mut [Option<BatchNormState>] {
        &mut self.bn
    }

    /// Forward pass recording a tape. `rng` is only drawn from for dropout
    /// masks in training mode.
    pub fn forward<R: Rng>(
        &self,
        x: &Matrix,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Matrix, Tape)> {
        self.check_input(x)?;
        let mut outputs: Vec<Matrix> = Vec::with_capacity(self.spec.layers.len());
        let mut records = Vec::with_capacity(self.spec.layers.len());
        for i in 0..self.spec.layers.len() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let (mut out, rec) = self.apply_layer(i, input, mode, Some(&mut *rng))?;
            if let Some(j) = self.spec.layers[i].skip_from {
                out.add_assign(&outputs[j]);
            }
            outputs.push(out);
            records.push(rec);
        }
        let y = outputs.last().cloned().unwrap_or_else(|| x.clone());
        Ok((
            y,
            Tape {
                version: self.params.version(),
                mode,
                input: x.clone(),
                outputs,
                records,
            },
        ))
    }

    /// Inference-mode forward without a tape.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let n = self.spec.layers.len();
        let mut outputs: Vec<Option<Matrix>> = vec![None; n];
        // Only keep outputs that a later skip reads.
        let mut needed = vec![false; n];
        for l in &self.spec.layers {
            if let Some(j) = l.skip_from {
                needed[j] = true;
            }
        }
        let mut current = x.clone();
        for i in 0..n {
            let (mut out, _) = self.apply_layer(i, &current, Mode::Inference, None)?;
            if let Some(j) = self.spec.layers[i].skip_from {
                out.add_assign(outputs[j].as_ref().expect("skip source retained"));
            }
            if needed[i] {
                outputs[i] = Some(out.clone());
            }
            current = out;
        }
        Ok(current)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::shape(format!(
                "layer 0: input has {} columns, network expects {}",
                x.cols(),
                self.spec.input_dim
            )));
        }
        ensure_finite(x.data())
    }

    fn apply_layer(
        &self,
        i: usize,
        input: &Matrix,
        mode: Mode,
        rng: Option<&mut (dyn rand::RngCore + '_)>,
    ) -> Result<(Matrix, Record)> {
        let spec = &self.spec.layers[i];
        Ok(match (spec.kind, self.slots[i]) {
            (LayerKind::Dense, Slots::Dense { w, b }) => {
                let w = self.params.at(w);
                let mut out = Matrix::zeros(input.rows(), spec.width);
                gemm(1.0, input, Op::N, w, Op::N, 0.0, &mut out);
                out.add_row_broadcast(self.params.at(b).data());
                (out, Record::Plain)
            }
            (LayerKind::BatchNorm, Slots::Norm { gamma, beta }) => {
                let state = self.bn[i].as_ref().expect("batch-norm state");
                let (out, cache) = state
                    .normalize(input, self.params.at(gamma).data(), self.params.at(beta).data(), mode)
                    .map_err(|e| match e {
                        Error::InsufficientData(m) => Error::InsufficientData(format!("layer {i}: {m}")),
                        other => other,
                    })?;
                (out, Record::Norm(cache))
            }
            (LayerKind::LeakyRelu, _) => {
                (leaky_relu_unchecked(input, self.spec.negative_slope), Record::Plain)
            }
            (LayerKind::Dropout, _) => {
                let p = self.spec.dropout;
                match mode {
                    Mode::Training if p > 0.0 => {
                        let rng = rng.ok_or_else(|| Error::invalid("training forward needs an rng"))?;
                        let mask_seed = rng.next_u64();
                        let mut out = input.clone();
                        apply_dropout_mask(out.data_mut(), mask_seed, p);
                        (out, Record::Dropout(Some(mask_seed)))
                    }
                    Mode::Training => (input.clone(), Record::Dropout(None)),
                    Mode::Inference => {
                        let mut out = input.clone();
                        out.scale(1.0 - p);
                        (out, Record::Dropout(None))
                    }
                }
            }
            _ => unreachable!("slots follow layer kinds"),
        })
    }

    /// Reverse pass from `upstream = dL/d(output)`.
    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<Gradients> {
        self.backward_full(tape, upstream).map(|(g, _)| g)
    }

    /// Like [`Mlp::backward`] but also returns `dL/d(input)`.
    pub fn backward_full(&self, tape: &Tape, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        if tape.version != self.params.version() {
            return Err(Error::StaleTape {
                tape: tape.version,
                current: self.params.version(),
            });
        }
        let n = self.spec.layers.len();
        let out_shape = tape.outputs.last().map_or(tape.input.shape(), Matrix::shape);
        if upstream.shape() != out_shape {
            return Err(Error::shape(format!(
                "upstream gradient is {:?}, output is {:?}",
                upstream.shape(),
                out_shape
            )));
        }
        let mut grads = self.params.zeros_like();
        let mut pending: Vec<Option<Matrix>> = vec![None; n];
        let mut input_grad = None;
        if n > 0 {
            pending[n - 1] = Some(upstream.clone());
        }
        for i in (0..n).rev() {
            let g = pending[i].take().unwrap_or_else(|| {
                let (r, c) = tape.outputs[i].shape();
                Matrix::zeros(r, c)
            });
            if let Some(j) = self.spec.layers[i].skip_from {
                accumulate(&mut pending[j], g.clone());
            }
            let input = tape.layer_input(i);
            let gin = match (self.spec.layers[i].kind, self.slots[i], &tape.records[i]) {
                (LayerKind::Dense, Slots::Dense { w, b }, _) => {
                    let gw = grads.at_mut(w);
                    gemm(1.0, input, Op::T, &g, Op::N, 0.0, gw);
                    grads.at_mut(b).data_mut().copy_from_slice(&g.column_sums());
                    let mut gin = Matrix::zeros(input.rows(), input.cols());
                    gemm(1.0, &g, Op::N, self.params.at(w), Op::T, 0.0, &mut gin);
                    gin
                }
                (LayerKind::BatchNorm, Slots::Norm { gamma, beta }, Record::Norm(cache)) => {
                    let (dx, dg, db) = batch_norm_backward(cache, self.params.at(gamma).data(), &g);
                    grads.at_mut(gamma).data_mut().copy_from_slice(&dg);
                    grads.at_mut(beta).data_mut().copy_from_slice(&db);
                    dx
                }
                (LayerKind::LeakyRelu, _, _) => {
                    leaky_relu_backward(input, g, self.spec.negative_slope)
                }
                (LayerKind::Dropout, _, Record::Dropout(mask)) => {
                    let mut gin = g;
                    match (mask, tape.mode) {
                        (Some(mask_seed), _) => {
                            apply_dropout_mask(gin.data_mut(), *mask_seed, self.spec.dropout)
                        }
                        (None, Mode::Inference) => gin.scale(1.0 - self.spec.dropout),
                        (None, Mode::Training) => {}
                    }
                    gin
                }
                _ => return Err(Error::invalid(format!("layer {i}: tape does not match network"))),
            };
            if i == 0 {
                input_grad = Some(gin);
            } else {
                accumulate(&mut pending[i - 1], gin);
            }
        }
        Ok((grads, input_grad.unwrap_or_else(|| upstream.clone())))
    }

    /// Folds the batch statistics recorded in a training tape into the
    /// running batch-norm estimates.
    pub fn commit_batch_stats(&mut self, tape: &Tape) {
        if tape.mode != Mode::Training {
            return;
        }
        let batch = tape.input.rows();
        for (state, rec) in self.bn.iter_mut().zip(&tape.records) {
            if let (Some(state), Record::Norm(cache)) = (state, rec) {
                state.update_running(cache, batch);
            }
        }
    }
}

fn resolve_slots(spec: &MlpSpec, params: &ParameterSet) -> Vec<Slots> {
    let find = |name: String| params.index_of(&name).expect("parameter inserted at construction");
    spec.layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match layer.kind {
            LayerKind::Dense => Slots::Dense {
                w: find(format!("l{i}.w")),
                b: find(format!("l{i}.b")),
            },
            LayerKind::BatchNorm => Slots::Norm {
                gamma: find(format!("l{i}.gamma")),
                beta: find(format!("l{i}.beta")),
            },
            _ => Slots::None,
        })
        .collect()
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_only(input: usize, out: usize) -> MlpSpec {
        let mut s = MlpSpec::new(input, vec![LayerSpec::new(LayerKind::Dense, out)]);
        s.dropout = 0.0;
        s
    }

    #[test]
    fn identity_dense_layer_is_identity() {
        let mut mlp = Mlp::new(dense_only(3, 3), 1).unwrap();
        mlp.params_mut().get_mut("l0.w").unwrap().data_mut().copy_from_slice(Matrix::identity(3).data());
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, 4.0]]).unwrap();
        assert_eq!(mlp.predict(&x).unwrap(), x);
    }

    #[test]
    fn dropout_only_zero_rate_modes_agree() {
        let mut spec = MlpSpec::new(
            3,
            vec![
                LayerSpec::new(LayerKind::Dense, 3),
                LayerSpec::new(LayerKind::LeakyRelu, 3),
                LayerSpec::new(LayerKind::Dropout, 3),
                LayerSpec::new(LayerKind::Dense, 1),
            ],
        );
        spec.dropout = 0.0;
        let mlp = Mlp::new(spec, 9).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]]).unwrap();
        let mut r = rng::seeded(1);
        let (a, _) = mlp.forward(&x, Mode::Training, &mut r).unwrap();
        let (b, _) = mlp.forward(&x, Mode::Inference, &mut r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn skip_with_zeroed_weights_passes_skipped_activation() {
        let spec = MlpSpec::new(
            2,
            vec![
                LayerSpec::new(LayerKind::Dense, 2),
                LayerSpec::new(LayerKind::Dense, 2).with_skip(0),
            ],
        );
        let mut mlp = Mlp::new(spec, 5).unwrap();
        mlp.params_mut().get_mut("l1.w").unwrap().fill(0.0);
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap();
        let mut r = rng::seeded(0);
        let (y, tape) = mlp.forward(&x, Mode::Inference, &mut r).unwrap();
        assert_eq!(&y, tape.layer_output(0));
    }

    #[test]
    fn width_mismatch_names_layer() {
        let spec = MlpSpec::new(
            3,
            vec![
                LayerSpec::new(LayerKind::Dense, 4),
                LayerSpec::new(LayerKind::BatchNorm, 5),
            ],
        );
        let err = Mlp::new(spec, 0).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
        let spec = MlpSpec::new(
            3,
            vec![
                LayerSpec::new(LayerKind::Dense, 4),
                LayerSpec::new(LayerKind::Dense, 5).with_skip(0),
            ],
        );
        assert!(Mlp::new(spec, 0).is_err());
    }

    #[test]
    fn wrong_input_width_rejected() {
        let mlp = Mlp::new(dense_only(3, 1), 0).unwrap();
        assert!(matches!(mlp.predict(&Matrix::zeros(2, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut spec = MlpSpec::encoder_decoder(3, &[4], &[4], true, 1);
        spec.dropout = 0.1;
        let mlp = Mlp::new(spec, 2).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [0.0, 1.0, -1.0], [2.0, 2.0, 0.5]]).unwrap();
        let mut r = rng::seeded(0);
        let (y, tape) = mlp.forward(&x, Mode::Training, &mut r).unwrap();
        let g = mlp.backward(&tape, &Matrix::zeros(y.rows(), y.cols())).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn dense_weight_gradient_is_column_sums_of_input() {
        // loss = sum of outputs, so dL/dW[k][j] = sum_r x[r][k] for every j.
        let mlp = Mlp::new(dense_only(3, 2), 4).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let mut r = rng::seeded(0);
        let (y, tape) = mlp.forward(&x, Mode::Training, &mut r).unwrap();
        let g = mlp.backward(&tape, &Matrix::filled(y.rows(), y.cols(), 1.0)).unwrap();
        let gw = g.get("l0.w").unwrap();
        let sums = [5.0, 7.0, 9.0];
        for k in 0..3 {
            for j in 0..2 {
                assert_eq!(gw.get(k, j), sums[k]);
            }
        }
        assert_eq!(g.get("l0.b").unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn stale_tape_rejected() {
        let mut mlp = Mlp::new(dense_only(2, 1), 0).unwrap();
        let x = Matrix::zeros(2, 2);
        let mut r = rng::seeded(0);
        let (_, tape) = mlp.forward(&x, Mode::Training, &mut r).unwrap();
        mlp.params_mut().get_mut("l0.b").unwrap().set(0, 0, 1.0);
        assert!(matches!(
            mlp.backward(&tape, &Matrix::zeros(2, 1)),
            Err(Error::StaleTape { .. })
        ));
    }

    #[test]
    fn encoder_decoder_skips_mirror_widths() {
        let spec = MlpSpec::encoder_decoder(10, &[32, 16], &[16, 32], true, 1);
        spec.validate().unwrap();
        let skips: Vec<_> = spec.layers.iter().filter_map(|l| l.skip_from).collect();
        assert_eq!(skips, vec![7, 3]);
        let plain = MlpSpec::encoder_decoder(32, &[128, 64, 32, 16], &[16, 32, 64, 128], false, 1);
        assert!(plain.layers.iter().all(|l| l.skip_from.is_none()));
        assert_eq!(plain.layers.len(), 8 * 4 + 1);
    }
}
