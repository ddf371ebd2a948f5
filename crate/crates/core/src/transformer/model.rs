use rand::{Rng, RngCore};

use super::attention::{attention_backward, attention_forward, AttentionWeights};
use super::layernorm::{layer_norm, layer_norm_backward, LayerNormCache, LAYER_NORM_EPSILON};
use super::{decide, TransformerConfig};
use crate::error::{ensure_finite, Error, Result};
use crate::nn::activation::{gelu_grad_with, gelu_tanh, gelu_with, sigmoid};
use crate::nn::dropout::apply_dropout_mask;
use crate::nn::matrix::{gemm, Op};
use crate::nn::{Gradients, Matrix, Mode, ParameterSet};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
struct LayerSlots {
    ln1_g: usize,
    ln1_b: usize,
    wqkv: usize,
    bqkv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Slots {
    in_w: usize,
    in_b: usize,
    layers: Vec<LayerSlots>,
    ln_g: usize,
    ln_b: usize,
    head_w: usize,
    head_b: usize,
}

fn resolve_slots(config: &TransformerConfig, params: &ParameterSet) -> Result<Slots> {
    let find = |name: String| {
        params
            .index_of(&name)
            .ok_or_else(|| Error::shape(format!("missing parameter `{name}`")))
    };
    let layers = (0..config.num_layers)
        .map(|l| {
            Ok(LayerSlots {
                ln1_g: find(format!("l{l}.ln1.g"))?,
                ln1_b: find(format!("l{l}.ln1.b"))?,
                wqkv: find(format!("l{l}.attn.wqkv"))?,
                bqkv: find(format!("l{l}.attn.bqkv"))?,
                wo: find(format!("l{l}.attn.wo"))?,
                bo: find(format!("l{l}.attn.bo"))?,
                ln2_g: find(format!("l{l}.ln2.g"))?,
                ln2_b: find(format!("l{l}.ln2.b"))?,
                w1: find(format!("l{l}.ffn.w1"))?,
                b1: find(format!("l{l}.ffn.b1"))?,
                w2: find(format!("l{l}.ffn.w2"))?,
                b2: find(format!("l{l}.ffn.b2"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Slots {
        in_w: find("in.w".into())?,
        in_b: find("in.b".into())?,
        layers,
        ln_g: find("ln.g".into())?,
        ln_b: find("ln.b".into())?,
        head_w: find("head.w".into())?,
        head_b: find("head.b".into())?,
    })
}

/// Sinusoidal position table, `T × d`: sin on even columns, cos on odd.
pub fn positional_encoding(length: usize, dim: usize) -> Matrix {
    let mut pe = Matrix::zeros(length, dim);
    for t in 0..length {
        for i in (0..dim).step_by(2) {
            let angle = t as f64 / 10_000f64.powf(i as f64 / dim as f64);
            pe.set(t, i, angle.sin());
            if i + 1 < dim {
                pe.set(t, i + 1, angle.cos());
            }
        }
    }
    pe
}

/// How a residual branch is treated by dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Branch {
    Identity,
    Mask(u64),
    Scale(f64),
}

impl Branch {
    fn draw<R: RngCore>(p: f64, mode: Mode, rng: &mut R) -> Self {
        match mode {
            _ if p == 0.0 => Branch::Identity,
            Mode::Training => Branch::Mask(rng.next_u64()),
            Mode::Inference => Branch::Scale(1.0 - p),
        }
    }

    fn apply(self, values: &mut Matrix, p: f64) {
        match self {
            Branch::Identity => {}
            Branch::Mask(seed) => apply_dropout_mask(values.data_mut(), seed, p),
            Branch::Scale(s) => values.scale(s),
        }
    }
}

#[derive(Debug, Clone)]
struct LayerTape {
    ln1: LayerNormCache,
    qkv: Matrix,
    probs: Vec<f64>,
    ctx: Matrix,
    attn_branch: Branch,
    ln2: LayerNormCache,
    pre_act: Matrix,
    tanh: Vec<f64>,
    act: Matrix,
    ffn_branch: Branch,
}

/// Intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct TransformerTape {
    version: u64,
    batch: usize,
    length: usize,
    input: Matrix,
    layers: Vec<LayerTape>,
    final_ln: LayerNormCache,
    pooled: Matrix,
    logits: Vec<f64>,
}

impl TransformerTape {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Per-layer attention weights of sequence `index` in the batch.
    pub fn attention_weights(&self, index: usize) -> Vec<AttentionWeights> {
        let t = self.length;
        self.layers
            .iter()
            .map(|l| {
                let heads = l.probs.len() / (self.batch * t * t);
                let base = index * heads * t * t;
                AttentionWeights {
                    heads: (0..heads)
                        .map(|h| {
                            let p = &l.probs[base + h * t * t..base + (h + 1) * t * t];
                            Matrix::from_vec(t, t, p.to_vec()).expect("t x t block")
                        })
                        .collect(),
                }
            })
            .collect()
    }
}

/// Encoder weights plus the fixed per-feature input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    config: TransformerConfig,
    params: ParameterSet,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    slots: Slots,
}

fn uniform(rows: usize, cols: usize, rng: &mut rng::Rng) -> Result<Matrix> {
    let limit = (3.0 / rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data)
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), w.cols());
    gemm(1.0, x, Op::N, w, Op::N, 0.0, &mut y);
    y.add_row_broadcast(b.data());
    y
}

impl TransformerModel {
    /// Seeded initialization: `U(-sqrt(3/fan_in), sqrt(3/fan_in))` weights,
    /// zero biases, unit layer-norm gains. Standardization starts as identity.
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(seed);
        let (s, d, f) = (config.input_dim, config.model_dim, config.ffn_dim);
        let mut p = ParameterSet::new();
        p.insert("in.w", uniform(s, d, &mut r)?)?;
        p.insert("in.b", Matrix::zeros(1, d))?;
        for l in 0..config.num_layers {
            p.insert(format!("l{l}.ln1.g"), Matrix::filled(1, d, 1.0))?;
            p.insert(format!("l{l}.ln1.b"), Matrix::zeros(1, d))?;
            p.insert(format!("l{l}.attn.wqkv"), uniform(d, 3 * d, &mut r)?)?;
            p.insert(format!("l{l}.attn.bqkv"), Matrix::zeros(1, 3 * d))?;
            p.insert(format!("l{l}.attn.wo"), uniform(d, d, &mut r)?)?;
            p.insert(format!("l{l}.attn.bo"), Matrix::zeros(1, d))?;
            p.insert(format!("l{l}.ln2.g"), Matrix::filled(1, d, 1.0))?;
            p.insert(format!("l{l}.ln2.b"), Matrix::zeros(1, d))?;
            p.insert(format!("l{l}.ffn.w1"), uniform(d, f, &mut r)?)?;
            p.insert(format!("l{l}.ffn.b1"), Matrix::zeros(1, f))?;
            p.insert(format!("l{l}.ffn.w2"), uniform(f, d, &mut r)?)?;
            p.insert(format!("l{l}.ffn.b2"), Matrix::zeros(1, d))?;
        }
        p.insert("ln.g", Matrix::filled(1, d, 1.0))?;
        p.insert("ln.b", Matrix::zeros(1, d))?;
        p.insert("head.w", uniform(d, 1, &mut r)?)?;
        p.insert("head.b", Matrix::zeros(1, 1))?;
        let slots = resolve_slots(&config, &p)?;
        Ok(Self {
            input_shift: vec![0.0; s],
            input_scale: vec![1.0; s],
            config,
            params: p,
            slots,
        })
    }

    /// Reassembles a model from stored parts, checking the layout.
    pub fn from_parts(
        config: TransformerConfig,
        params: ParameterSet,
        input_shift: Vec<f64>,
        input_scale: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if !model.params.same_layout(&params) {
            return Err(Error::shape("parameter layout does not match architecture"));
        }
        model.params = params;
        model.slots = resolve_slots(&model.config, &model.params)?;
        model.set_standardization(input_shift, input_scale)?;
        Ok(model)
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn input_shift(&self) -> &[f64] {
        &self.input_shift
    }

    pub fn input_scale(&self) -> &[f64] {
        &self.input_scale
    }

    /// Inputs are mapped to `(x - shift) / scale` per feature column.
    pub fn set_standardization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        let s = self.config.input_dim;
        if shift.len() != s || scale.len() != s {
            return Err(Error::shape(format!(
                "standardization has {} shifts and {} scales for {s} features",
                shift.len(),
                scale.len()
            )));
        }
        ensure_finite(&shift)?;
        ensure_finite(&scale)?;
        if scale.iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("standardization scales must be > 0"));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    /// Column means and standard deviations over every row of `seqs`;
    /// constant columns get scale 1.
    pub fn fit_standardization(&mut self, seqs: &[&Matrix]) -> Result<()> {
        let s = self.config.input_dim;
        let mut sum = vec![0.0; s];
        let mut n = 0usize;
        for m in seqs {
            self.check_shape(m)?;
            for r in 0..m.rows() {
                sum.iter_mut().zip(m.row(r)).for_each(|(a, v)| *a += v);
            }
            n += m.rows();
        }
        if n == 0 {
            return Err(Error::InsufficientData("no rows to standardize".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|v| v / n as f64).collect();
        let mut sq = vec![0.0; s];
        for m in seqs {
            for r in 0..m.rows() {
                for ((a, v), mu) in sq.iter_mut().zip(m.row(r)).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
        }
        let scale = sq
            .iter()
            .map(|v| {
                let sd = (v / n as f64).sqrt();
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        self.set_standardization(mean, scale)
    }

    fn check_shape(&self, m: &Matrix) -> Result<()> {
        let want = (self.config.sequence_length, self.config.input_dim);
        if m.shape() != want {
            return Err(Error::shape(format!(
                "sequence is {:?}, model expects {want:?}",
                m.shape()
            )));
        }
        Ok(())
    }

    /// Batched forward pass returning logits and the tape needed for
    /// `backward`. `rng` is drawn from only for training-mode dropout masks.
    pub fn forward<R: RngCore>(
        &self,
        batch: &[&Matrix],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, TransformerTape)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        for m in batch {
            self.check_shape(m)?;
            ensure_finite(m.data())?;
        }
        let cfg = &self.config;
        let (b, t, s, d) = (batch.len(), cfg.sequence_length, cfg.input_dim, cfg.model_dim);
        let p = cfg.dropout;
        let w = |i: usize| self.params.at(i);

        let mut input = Matrix::zeros(b * t, s);
        for (k, m) in batch.iter().enumerate() {
            for r in 0..t {
                let dst = input.row_mut(k * t + r);
                for (((o, &v), &mu), &sd) in dst
                    .iter_mut()
                    .zip(m.row(r))
                    .zip(&self.input_shift)
                    .zip(&self.input_scale)
                {
                    *o = (v - mu) / sd;
                }
            }
        }
        let mut h = linear(&input, w(self.slots.in_w), w(self.slots.in_b));
        let pe = positional_encoding(t, d);
        for k in 0..b {
            for r in 0..t {
                h.row_mut(k * t + r)
                    .iter_mut()
                    .zip(pe.row(r))
                    .for_each(|(x, e)| *x += e);
            }
        }

        let heads = cfg.num_heads;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for ls in &self.slots.layers {
            let ln1 = layer_norm(&h, w(ls.ln1_g).data(), w(ls.ln1_b).data(), LAYER_NORM_EPSILON);
            let qkv = linear(&ln1.out, w(ls.wqkv), w(ls.bqkv));
            let mut probs = vec![0.0; b * heads * t * t];
            let mut ctx = Matrix::zeros(b * t, d);
            for k in 0..b {
                attention_forward(
                    &qkv.data()[k * t * 3 * d..(k + 1) * t * 3 * d],
                    t,
                    d,
                    heads,
                    &mut probs[k * heads * t * t..(k + 1) * heads * t * t],
                    &mut ctx.data_mut()[k * t * d..(k + 1) * t * d],
                );
            }
            let mut o = linear(&ctx, w(ls.wo), w(ls.bo));
            let attn_branch = Branch::draw(p, mode, rng);
            attn_branch.apply(&mut o, p);
            h.add_assign(&o);

            let ln2 = layer_norm(&h, w(ls.ln2_g).data(), w(ls.ln2_b).data(), LAYER_NORM_EPSILON);
            let pre_act = linear(&ln2.out, w(ls.w1), w(ls.b1));
            let tanh: Vec<f64> = pre_act.data().iter().map(|&u| gelu_tanh(u)).collect();
            let mut act = pre_act.clone();
            act.data_mut()
                .iter_mut()
                .zip(&tanh)
                .for_each(|(a, &th)| *a = gelu_with(*a, th));
            let mut v = linear(&act, w(ls.w2), w(ls.b2));
            let ffn_branch = Branch::draw(p, mode, rng);
            ffn_branch.apply(&mut v, p);
            h.add_assign(&v);

            layers.push(LayerTape {
                ln1,
                qkv,
                probs,
                ctx,
                attn_branch,
                ln2,
                pre_act,
                tanh,
                act,
                ffn_branch,
            });
        }

        let final_ln = layer_norm(
            &h,
            w(self.slots.ln_g).data(),
            w(self.slots.ln_b).data(),
            LAYER_NORM_EPSILON,
        );
        let mut pooled = Matrix::zeros(b, d);
        for k in 0..b {
            let acc = pooled.row_mut(k);
            for r in 0..t {
                acc.iter_mut()
                    .zip(final_ln.out.row(k * t + r))
                    .for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= t as f64);
        }
        let head_w = w(self.slots.head_w).data();
        let head_b = w(self.slots.head_b).data()[0];
        let logits: Vec<f64> = (0..b)
            .map(|k| pooled.row(k).iter().zip(head_w).map(|(x, y)| x * y).sum::<f64>() + head_b)
            .collect();
        let tape = TransformerTape {
            version: self.params.version(),
            batch: b,
            length: t,
            input,
            layers,
            final_ln,
            pooled,
            logits: logits.clone(),
        };
        Ok((logits, tape))
    }

    /// Gradients of `Σ upstream[k] · logit[k]` with respect to every parameter.
    pub fn backward(&self, tape: &TransformerTape, upstream: &[f64]) -> Result<Gradients> {
        if tape.version != self.params.version() {
            return Err(Error::StaleTape {
                tape: tape.version,
                current: self.params.version(),
            });
        }
        if upstream.len() != tape.batch {
            return Err(Error::shape(format!(
                "{} upstream values for a batch of {}",
                upstream.len(),
                tape.batch
            )));
        }
        let cfg = &self.config;
        let (b, t, d) = (tape.batch, tape.length, cfg.model_dim);
        let heads = cfg.num_heads;
        let p = cfg.dropout;
        let w = |i: usize| self.params.at(i);
        let mut grads = self.params.zeros_like();

        let head_w = w(self.slots.head_w).data();
        {
            let gw = grads.at_mut(self.slots.head_w).data_mut();
            for (k, &u) in upstream.iter().enumerate() {
                gw.iter_mut().zip(tape.pooled.row(k)).for_each(|(g, x)| *g += u * x);
            }
        }
        grads.at_mut(self.slots.head_b).data_mut()[0] = upstream.iter().sum();
        let mut dh = Matrix::zeros(b * t, d);
        for (k, &u) in upstream.iter().enumerate() {
            for r in 0..t {
                dh.row_mut(k * t + r)
                    .iter_mut()
                    .zip(head_w)
                    .for_each(|(g, hw)| *g = u * hw / t as f64);
            }
        }
        dh = self.ln_backward(&mut grads, &tape.final_ln, self.slots.ln_g, self.slots.ln_b, &dh);

        let mut scratch = Vec::new();
        for (ls, lt) in self.slots.layers.iter().zip(&tape.layers).rev() {
            let mut dv = dh.clone();
            lt.ffn_branch.apply(&mut dv, p);
            accumulate_linear(&mut grads, ls.w2, ls.b2, &lt.act, &dv);
            let mut dact = Matrix::zeros(b * t, cfg.ffn_dim);
            gemm(1.0, &dv, Op::N, w(ls.w2), Op::T, 0.0, &mut dact);
            for ((g, &u), &th) in dact.data_mut().iter_mut().zip(lt.pre_act.data()).zip(&lt.tanh) {
                *g *= gelu_grad_with(u, th);
            }
            accumulate_linear(&mut grads, ls.w1, ls.b1, &lt.ln2.out, &dact);
            let mut dc = Matrix::zeros(b * t, d);
            gemm(1.0, &dact, Op::N, w(ls.w1), Op::T, 0.0, &mut dc);
            dh.add_assign(&self.ln_backward(&mut grads, &lt.ln2, ls.ln2_g, ls.ln2_b, &dc));

            let mut d_o = dh.clone();
            lt.attn_branch.apply(&mut d_o, p);
            accumulate_linear(&mut grads, ls.wo, ls.bo, &lt.ctx, &d_o);
            let mut dctx = Matrix::zeros(b * t, d);
            gemm(1.0, &d_o, Op::N, w(ls.wo), Op::T, 0.0, &mut dctx);
            let mut dqkv = Matrix::zeros(b * t, 3 * d);
            for k in 0..b {
                attention_backward(
                    &lt.qkv.data()[k * t * 3 * d..(k + 1) * t * 3 * d],
                    &lt.probs[k * heads * t * t..(k + 1) * heads * t * t],
                    &dctx.data()[k * t * d..(k + 1) * t * d],
                    t,
                    d,
                    heads,
                    &mut dqkv.data_mut()[k * t * 3 * d..(k + 1) * t * 3 * d],
                    &mut scratch,
                );
            }
            accumulate_linear(&mut grads, ls.wqkv, ls.bqkv, &lt.ln1.out, &dqkv);
            let mut da = Matrix::zeros(b * t, d);
            gemm(1.0, &dqkv, Op::N, w(ls.wqkv), Op::T, 0.0, &mut da);
            dh.add_assign(&self.ln_backward(&mut grads, &lt.ln1, ls.ln1_g, ls.ln1_b, &da));
        }
        accumulate_linear(&mut grads, self.slots.in_w, self.slots.in_b, &tape.input, &dh);
        Ok(grads)
    }

    fn ln_backward(
        &self,
        grads: &mut Gradients,
        cache: &LayerNormCache,
        g_slot: usize,
        b_slot: usize,
        upstream: &Matrix,
    ) -> Matrix {
        let d = upstream.cols();
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        let dx = layer_norm_backward(cache, self.params.at(g_slot).data(), upstream, &mut dg, &mut db);
        grads.at_mut(g_slot).data_mut().iter_mut().zip(&dg).for_each(|(a, v)| *a += v);
        grads.at_mut(b_slot).data_mut().iter_mut().zip(&db).for_each(|(a, v)| *a += v);
        dx
    }

    /// Inference-mode logits for many sequences.
    pub fn predict_logits(&self, seqs: &[&Matrix]) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(CHUNK) {
            out.extend(self.forward(chunk, Mode::Inference, &mut NoRng)?.0);
        }
        Ok(out)
    }

    /// Inference-mode probabilities for many sequences.
    pub fn predict_batch(&self, seqs: &[&Matrix]) -> Result<Vec<f64>> {
        Ok(self.predict_logits(seqs)?.into_iter().map(sigmoid).collect())
    }

    /// Breakdown probability for one `T × S` sequence.
    pub fn predict_proba(&self, seq: &Matrix) -> Result<f64> {
        Ok(self.predict_batch(&[seq])?[0])
    }

    /// 1 iff the probability exceeds `threshold`.
    pub fn classify(&self, seq: &Matrix, threshold: f64) -> Result<u8> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(decide(self.predict_proba(seq)?, threshold))
    }

    /// Per-layer attention weights for one sequence in inference mode.
    pub fn attention_maps(&self, seq: &Matrix) -> Result<Vec<AttentionWeights>> {
        let (_, tape) = self.forward(&[seq], Mode::Inference, &mut NoRng)?;
        Ok(tape.attention_weights(0))
    }
}

fn accumulate_linear(grads: &mut Gradients, w_slot: usize, b_slot: usize, x: &Matrix, dy: &Matrix) {
    gemm(1.0, x, Op::T, dy, Op::N, 1.0, grads.at_mut(w_slot));
    let gb = grads.at_mut(b_slot).data_mut();
    for r in 0..dy.rows() {
        gb.iter_mut().zip(dy.row(r)).for_each(|(a, v)| *a += v);
    }
}

/// Stand-in generator for inference passes, which never draw.
struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("inference does not draw random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("inference does not draw random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("inference does not draw random numbers")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("inference does not draw random numbers")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TransformerConfig {
        TransformerConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            dropout: 0.0,
            sequence_length: 4,
            input_dim: 3,
        }
    }

    fn seq(seed: f64) -> Matrix {
        Matrix::from_vec(4, 3, (0..12).map(|i| ((i as f64 + seed) * 1.37).sin()).collect()).unwrap()
    }

    fn loss(m: &TransformerModel, xs: &[&Matrix], up: &[f64]) -> f64 {
        let (l, _) = m.forward(xs, Mode::Inference, &mut NoRng).unwrap();
        l.iter().zip(up).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = TransformerModel::new(toy(), 5).unwrap();
        // move gains and biases off their trivial initial values
        let mut r = rng::seeded(9);
        for v in m.params_mut().values_mut() {
            v.data_mut().iter_mut().for_each(|x| *x += r.gen_range(-0.3..0.3));
        }
        let (a, b) = (seq(0.0), seq(5.0));
        let xs = [&a, &b];
        let up = [0.7, -1.3];
        let (_, tape) = m.forward(&xs, Mode::Inference, &mut NoRng).unwrap();
        let g = m.backward(&tape, &up).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..m.params().len() {
            for j in 0..m.params().at(i).len() {
                let orig = m.params().at(i).data()[j];
                m.params_mut().at_mut(i).data_mut()[j] = orig + h;
                let lp = loss(&m, &xs, &up);
                m.params_mut().at_mut(i).data_mut()[j] = orig - h;
                let lm = loss(&m, &xs, &up);
                m.params_mut().at_mut(i).data_mut()[j] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = g.at(i).data()[j];
                worst = worst.max((fd - an).abs() / (fd.abs() + an.abs()).max(1e-6));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn stale_tape_rejected() {
        let mut m = TransformerModel::new(toy(), 1).unwrap();
        let a = seq(0.0);
        let (_, tape) = m.forward(&[&a], Mode::Inference, &mut NoRng).unwrap();
        m.params_mut().at_mut(0).data_mut()[0] += 1.0;
        assert!(matches!(m.backward(&tape, &[1.0]), Err(Error::StaleTape { .. })));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = TransformerModel::new(toy(), 1).unwrap();
        assert!(m.predict_proba(&Matrix::zeros(4, 2)).is_err());
        assert!(m.predict_proba(&Matrix::zeros(5, 3)).is_err());
    }
}
