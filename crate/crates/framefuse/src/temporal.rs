//! Sequential temporal encoders (LSTM, pre-norm Transformer) composed
//! with gated aggregation heads, and the tight cross-modal scorer that
//! joint-encodes a text token with (optionally pre-excited) frame
//! tokens and regresses a scalar similarity from the first token.
//!
//! Token convention: sequences are NxC matrices with one token per
//! row; projections act as `x W + b` on row vectors. Both encoders
//! preserve shape NxC and zero the rows of masked-out (padded) frames.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gates::{
    self, aggregation_node, excitation_node, mean_pool_node, random_matrix, BoundGate,
    FrameFeatures, GateParams, VideoRepresentation,
};
use crate::params::{BindCtx, Parameterized};
use crate::tape::{Tape, Var};
use crate::tensor::{Matrix, Vector};

/// Layer-norm epsilon used by the encoder layers.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub const LSTM_GATE_NAMES: [&str; 4] = ["i", "f", "g", "o"];

/// One LSTM layer: input maps `w`, recurrent maps `u` and biases `b`
/// for the input/forget/cell/output gates, in that order. All maps are
/// square CxC; biases are 1xC rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w: [Matrix; 4],
    pub u: [Matrix; 4],
    pub b: [Matrix; 4],
}

/// Stacked LSTM parameters. The forget-gate bias starts at 1 in every
/// init mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub layers: Vec<LstmLayer>,
}

impl LstmParams {
    pub fn zeros(width: usize, layers: usize) -> Self {
        let make = || LstmLayer {
            w: std::array::from_fn(|_| Matrix::zeros(width, width)),
            u: std::array::from_fn(|_| Matrix::zeros(width, width)),
            b: std::array::from_fn(|g| {
                // forget gate bias = 1
                Matrix::from_raw(1, width, vec![if g == 1 { 1.0 } else { 0.0 }; width])
            }),
        };
        Self {
            layers: (0..layers).map(|_| make()).collect(),
        }
    }

    pub fn random(width: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..layers)
            .map(|_| LstmLayer {
                w: std::array::from_fn(|_| random_matrix(width, width, width, rng)),
                u: std::array::from_fn(|_| random_matrix(width, width, width, rng)),
                b: std::array::from_fn(|g| {
                    if g == 1 {
                        Matrix::from_raw(1, width, vec![1.0; width])
                    } else {
                        Matrix::zeros(1, width)
                    }
                }),
            })
            .collect();
        Self { layers }
    }

    pub fn width(&self) -> usize {
        self.layers[0].w[0].rows()
    }
}

impl Parameterized for LstmParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for (l, layer) in self.layers.iter().enumerate() {
            for (g, name) in LSTM_GATE_NAMES.iter().enumerate() {
                f(&format!("layers.{l}.w_{name}"), &layer.w[g]);
                f(&format!("layers.{l}.u_{name}"), &layer.u[g]);
                f(&format!("layers.{l}.b_{name}"), &layer.b[g]);
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (g, name) in LSTM_GATE_NAMES.iter().enumerate() {
                f(&format!("layers.{l}.w_{name}"), &mut layer.w[g]);
                f(&format!("layers.{l}.u_{name}"), &mut layer.u[g]);
                f(&format!("layers.{l}.b_{name}"), &mut layer.b[g]);
            }
        }
    }
}

pub struct BoundLstmLayer {
    w: [Var; 4],
    u: [Var; 4],
    b: [Var; 4],
}

pub struct BoundLstm {
    layers: Vec<BoundLstmLayer>,
}

impl BoundLstm {
    pub fn bind_with(tape: &Tape, ctx: &mut BindCtx<'_>, p: &LstmParams) -> Self {
        let layers = p
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| BoundLstmLayer {
                w: std::array::from_fn(|g| {
                    ctx.bind(tape, &format!("layers.{l}.w_{}", LSTM_GATE_NAMES[g]), &layer.w[g])
                }),
                u: std::array::from_fn(|g| {
                    ctx.bind(tape, &format!("layers.{l}.u_{}", LSTM_GATE_NAMES[g]), &layer.u[g])
                }),
                b: std::array::from_fn(|g| {
                    ctx.bind(tape, &format!("layers.{l}.b_{}", LSTM_GATE_NAMES[g]), &layer.b[g])
                }),
            })
            .collect();
        Self { layers }
    }
}

/// One pre-norm transformer encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w_ff1: Matrix,
    pub b_ff1: Matrix,
    pub w_ff2: Matrix,
    pub b_ff2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

impl EncoderLayer {
    fn zeros(c: usize) -> Self {
        let ff = 4 * c;
        Self {
            wq: Matrix::zeros(c, c),
            bq: Matrix::zeros(1, c),
            wk: Matrix::zeros(c, c),
            bk: Matrix::zeros(1, c),
            wv: Matrix::zeros(c, c),
            bv: Matrix::zeros(1, c),
            wo: Matrix::zeros(c, c),
            bo: Matrix::zeros(1, c),
            ln1_gain: Matrix::from_raw(1, c, vec![1.0; c]),
            ln1_bias: Matrix::zeros(1, c),
            w_ff1: Matrix::zeros(c, ff),
            b_ff1: Matrix::zeros(1, ff),
            w_ff2: Matrix::zeros(ff, c),
            b_ff2: Matrix::zeros(1, c),
            ln2_gain: Matrix::from_raw(1, c, vec![1.0; c]),
            ln2_bias: Matrix::zeros(1, c),
        }
    }

    fn random(c: usize, rng: &mut impl Rng) -> Self {
        let ff = 4 * c;
        Self {
            wq: random_matrix(c, c, c, rng),
            bq: Matrix::zeros(1, c),
            wk: random_matrix(c, c, c, rng),
            bk: Matrix::zeros(1, c),
            wv: random_matrix(c, c, c, rng),
            bv: Matrix::zeros(1, c),
            wo: random_matrix(c, c, c, rng),
            bo: Matrix::zeros(1, c),
            ln1_gain: Matrix::from_raw(1, c, vec![1.0; c]),
            ln1_bias: Matrix::zeros(1, c),
            w_ff1: random_matrix(c, ff, c, rng),
            b_ff1: Matrix::zeros(1, ff),
            w_ff2: random_matrix(ff, c, ff, rng),
            b_ff2: Matrix::zeros(1, c),
            ln2_gain: Matrix::from_raw(1, c, vec![1.0; c]),
            ln2_bias: Matrix::zeros(1, c),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("wq", &self.wq);
        f("bq", &self.bq);
        f("wk", &self.wk);
        f("bk", &self.bk);
        f("wv", &self.wv);
        f("bv", &self.bv);
        f("wo", &self.wo);
        f("bo", &self.bo);
        f("ln1_gain", &self.ln1_gain);
        f("ln1_bias", &self.ln1_bias);
        f("w_ff1", &self.w_ff1);
        f("b_ff1", &self.b_ff1);
        f("w_ff2", &self.w_ff2);
        f("b_ff2", &self.b_ff2);
        f("ln2_gain", &self.ln2_gain);
        f("ln2_bias", &self.ln2_bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("wq", &mut self.wq);
        f("bq", &mut self.bq);
        f("wk", &mut self.wk);
        f("bk", &mut self.bk);
        f("wv", &mut self.wv);
        f("bv", &mut self.bv);
        f("wo", &mut self.wo);
        f("bo", &mut self.bo);
        f("ln1_gain", &mut self.ln1_gain);
        f("ln1_bias", &mut self.ln1_bias);
        f("w_ff1", &mut self.w_ff1);
        f("b_ff1", &mut self.b_ff1);
        f("w_ff2", &mut self.w_ff2);
        f("b_ff2", &mut self.b_ff2);
        f("ln2_gain", &mut self.ln2_gain);
        f("ln2_bias", &mut self.ln2_bias);
    }
}

/// Pre-norm transformer encoder parameters with a learned,
/// zero-initialized position table.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub layers: Vec<EncoderLayer>,
    pub heads: usize,
    /// n_max x C learned position embeddings.
    pub pos_embedding: Matrix,
    /// Add the original frame features back after the encoder stack
    /// (drop-in replacement behavior for sequential aggregation).
    pub residual: bool,
}

impl TransformerParams {
    pub fn zeros(width: usize, layers: usize, heads: usize, n_max: usize) -> Result<Self> {
        Self::validate(width, heads)?;
        Ok(Self {
            layers: (0..layers).map(|_| EncoderLayer::zeros(width)).collect(),
            heads,
            pos_embedding: Matrix::zeros(n_max, width),
            residual: true,
        })
    }

    pub fn random(
        width: usize,
        layers: usize,
        heads: usize,
        n_max: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::validate(width, heads)?;
        Ok(Self {
            layers: (0..layers).map(|_| EncoderLayer::random(width, rng)).collect(),
            heads,
            pos_embedding: Matrix::zeros(n_max, width),
            residual: true,
        })
    }

    fn validate(width: usize, heads: usize) -> Result<()> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {width} must be divisible by head count {heads}"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.pos_embedding.cols()
    }

    pub fn max_len(&self) -> usize {
        self.pos_embedding.rows()
    }
}

impl Parameterized for TransformerParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("pos_embedding", &self.pos_embedding);
        for (l, layer) in self.layers.iter().enumerate() {
            layer.visit(&mut |name, m| f(&format!("layers.{l}.{name}"), m));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("pos_embedding", &mut self.pos_embedding);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&mut |name, m| f(&format!("layers.{l}.{name}"), m));
        }
    }
}

pub struct BoundEncoderLayer {
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln1_gain: Var,
    ln1_bias: Var,
    w_ff1: Var,
    b_ff1: Var,
    w_ff2: Var,
    b_ff2: Var,
    ln2_gain: Var,
    ln2_bias: Var,
}

pub struct BoundTransformer {
    layers: Vec<BoundEncoderLayer>,
    heads: usize,
    pos_embedding: Var,
    residual: bool,
    max_len: usize,
}

impl BoundTransformer {
    pub fn bind_with(tape: &Tape, ctx: &mut BindCtx<'_>, p: &TransformerParams) -> Self {
        let pos_embedding = ctx.bind(tape, "pos_embedding", &p.pos_embedding);
        let layers = p
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let mut scope = ctx.scope(&format!("layers.{l}"));
                BoundEncoderLayer {
                    wq: scope.bind(tape, "wq", &layer.wq),
                    bq: scope.bind(tape, "bq", &layer.bq),
                    wk: scope.bind(tape, "wk", &layer.wk),
                    bk: scope.bind(tape, "bk", &layer.bk),
                    wv: scope.bind(tape, "wv", &layer.wv),
                    bv: scope.bind(tape, "bv", &layer.bv),
                    wo: scope.bind(tape, "wo", &layer.wo),
                    bo: scope.bind(tape, "bo", &layer.bo),
                    ln1_gain: scope.bind(tape, "ln1_gain", &layer.ln1_gain),
                    ln1_bias: scope.bind(tape, "ln1_bias", &layer.ln1_bias),
                    w_ff1: scope.bind(tape, "w_ff1", &layer.w_ff1),
                    b_ff1: scope.bind(tape, "b_ff1", &layer.b_ff1),
                    w_ff2: scope.bind(tape, "w_ff2", &layer.w_ff2),
                    b_ff2: scope.bind(tape, "b_ff2", &layer.b_ff2),
                    ln2_gain: scope.bind(tape, "ln2_gain", &layer.ln2_gain),
                    ln2_bias: scope.bind(tape, "ln2_bias", &layer.ln2_bias),
                }
            })
            .collect();
        Self {
            layers,
            heads: p.heads,
            pos_embedding,
            residual: p.residual,
            max_len: p.max_len(),
        }
    }
}

// ---- encoder forward passes -------------------------------------------------

/// Row-vector projection `x W + b` for token matrices.
fn project(tape: &Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_broadcast_row(xw, b)
}

/// One pre-norm encoder layer over an NxC token matrix. Attention is
/// restricted to masked-in key positions; each attention row is a
/// simplex over those keys.
fn encoder_layer_node(
    tape: &Tape,
    x: Var,
    key_mask: &[bool],
    layer: &BoundEncoderLayer,
    heads: usize,
) -> Result<Var> {
    let (_, width) = tape.shape(x);
    let head_dim = width / heads;

    let normed = tape.layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias, LAYER_NORM_EPS)?;
    let q = project(tape, normed, layer.wq, layer.bq)?;
    let k = project(tape, normed, layer.wk, layer.bk)?;
    let v = project(tape, normed, layer.wv, layer.bv)?;

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
        let attn = tape.masked_softmax_rows(scores, key_mask)?;
        head_outputs.push(tape.matmul(attn, vh)?);
    }
    let context = if heads == 1 {
        head_outputs[0]
    } else {
        tape.concat_cols(&head_outputs)?
    };
    let attn_out = project(tape, context, layer.wo, layer.bo)?;
    let x = tape.add(x, attn_out)?;

    let normed = tape.layer_norm_rows(x, layer.ln2_gain, layer.ln2_bias, LAYER_NORM_EPS)?;
    let hidden = project(tape, normed, layer.w_ff1, layer.b_ff1)?;
    let hidden = tape.relu(hidden);
    let ffn_out = project(tape, hidden, layer.w_ff2, layer.b_ff2)?;
    tape.add(x, ffn_out)
}

/// Position add + encoder stack, shared by the sequential and tight
/// paths. `mask` marks valid tokens (keys).
fn encoder_stack_node(
    tape: &Tape,
    tokens: Var,
    mask: &[bool],
    encoder: &BoundTransformer,
) -> Result<Var> {
    let (n, _) = tape.shape(tokens);
    if n > encoder.max_len {
        return Err(Error::PositionOverflow {
            len: n,
            max: encoder.max_len,
        });
    }
    let pos = tape.slice_rows(encoder.pos_embedding, 0, n)?;
    let mut x = tape.add(tokens, pos)?;
    for layer in &encoder.layers {
        x = encoder_layer_node(tape, x, mask, layer, encoder.heads)?;
    }
    Ok(x)
}

/// LSTM over masked-in positions in order; masked positions emit a
/// zero row and leave the recurrent state untouched. Output is NxC.
pub fn lstm_encode_node(tape: &Tape, frames: Var, mask: &[bool], lstm: &BoundLstm) -> Result<Var> {
    let (n, width) = tape.shape(frames);
    if mask.len() != n {
        return Err(Error::shape(
            "lstm_encode",
            format!("mask of length {n}"),
            format!("mask of length {}", mask.len()),
        ));
    }
    let zero_row = tape.constant(Matrix::zeros(1, width));
    let mut layer_input = frames;
    for layer in &lstm.layers {
        let mut hidden = zero_row;
        let mut cell = zero_row;
        let mut outputs = Vec::with_capacity(n);
        for (t, keep) in mask.iter().enumerate() {
            if !keep {
                outputs.push(zero_row);
                continue;
            }
            let x_t = tape.slice_row(layer_input, t)?;
            let mut gates = [zero_row; 4];
            for (g, gate) in gates.iter_mut().enumerate() {
                let xw = tape.matmul(x_t, layer.w[g])?;
                let hu = tape.matmul(hidden, layer.u[g])?;
                let sum = tape.add(xw, hu)?;
                *gate = tape.add(sum, layer.b[g])?;
            }
            let input_gate = tape.sigmoid(gates[0]);
            let forget_gate = tape.sigmoid(gates[1]);
            let cell_cand = tape.tanh(gates[2]);
            let output_gate = tape.sigmoid(gates[3]);
            let kept = tape.mul(forget_gate, cell)?;
            let written = tape.mul(input_gate, cell_cand)?;
            cell = tape.add(kept, written)?;
            let cell_act = tape.tanh(cell);
            hidden = tape.mul(output_gate, cell_act)?;
            outputs.push(hidden);
        }
        layer_input = tape.concat_rows(&outputs)?;
    }
    Ok(layer_input)
}

/// Transformer encoder over frame tokens: position add, pre-norm
/// layers with attention masked to valid frames, optional residual
/// from the original frames, masked rows zeroed.
pub fn transformer_encode_node(
    tape: &Tape,
    frames: Var,
    mask: &[bool],
    encoder: &BoundTransformer,
) -> Result<Var> {
    let encoded = encoder_stack_node(tape, frames, mask, encoder)?;
    let out = if encoder.residual {
        tape.add(encoded, frames)?
    } else {
        encoded
    };
    tape.mask_rows(out, mask)
}

// ---- tight cross-modal scorer ------------------------------------------------

/// Cross-modal scorer: a shared encoder over `[text; frames]` with
/// segment embeddings, followed by a two-layer score head on the first
/// (text) token.
#[derive(Debug, Clone, PartialEq)]
pub struct TightParams {
    pub encoder: TransformerParams,
    /// 2 x C: row 0 added to the text token, row 1 to every frame token.
    pub segment: Matrix,
    /// ceil(C/2) x C
    pub score_w1: Matrix,
    /// ceil(C/2) x 1
    pub score_b1: Matrix,
    /// 1 x ceil(C/2)
    pub score_w2: Matrix,
    /// 1 x 1
    pub score_b2: Matrix,
}

impl TightParams {
    pub fn zeros(width: usize, layers: usize, heads: usize, n_max: usize) -> Result<Self> {
        let mut encoder = TransformerParams::zeros(width, layers, heads, n_max)?;
        encoder.residual = false;
        let h = width.div_ceil(2);
        Ok(Self {
            encoder,
            segment: Matrix::zeros(2, width),
            score_w1: Matrix::zeros(h, width),
            score_b1: Matrix::zeros(h, 1),
            score_w2: Matrix::zeros(1, h),
            score_b2: Matrix::zeros(1, 1),
        })
    }

    pub fn random(
        width: usize,
        layers: usize,
        heads: usize,
        n_max: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut encoder = TransformerParams::random(width, layers, heads, n_max, rng)?;
        encoder.residual = false;
        let h = width.div_ceil(2);
        Ok(Self {
            encoder,
            segment: random_matrix(2, width, width, rng),
            score_w1: random_matrix(h, width, width, rng),
            score_b1: Matrix::zeros(h, 1),
            score_w2: random_matrix(1, h, h, rng),
            score_b2: Matrix::zeros(1, 1),
        })
    }

    pub fn width(&self) -> usize {
        self.encoder.width()
    }
}

impl Parameterized for TightParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.encoder
            .visit_params(&mut |name, m| f(&format!("encoder.{name}"), m));
        f("segment", &self.segment);
        f("score_w1", &self.score_w1);
        f("score_b1", &self.score_b1);
        f("score_w2", &self.score_w2);
        f("score_b2", &self.score_b2);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.encoder
            .visit_params_mut(&mut |name, m| f(&format!("encoder.{name}"), m));
        f("segment", &mut self.segment);
        f("score_w1", &mut self.score_w1);
        f("score_b1", &mut self.score_b1);
        f("score_w2", &mut self.score_w2);
        f("score_b2", &mut self.score_b2);
    }
}

pub struct BoundTight {
    encoder: BoundTransformer,
    segment: Var,
    score_w1: Var,
    score_b1: Var,
    score_w2: Var,
    score_b2: Var,
}

impl BoundTight {
    pub fn bind_with(tape: &Tape, ctx: &mut BindCtx<'_>, p: &TightParams) -> Self {
        let encoder = BoundTransformer::bind_with(tape, &mut ctx.scope("encoder"), &p.encoder);
        Self {
            encoder,
            segment: ctx.bind(tape, "segment", &p.segment),
            score_w1: ctx.bind(tape, "score_w1", &p.score_w1),
            score_b1: ctx.bind(tape, "score_b1", &p.score_b1),
            score_w2: ctx.bind(tape, "score_w2", &p.score_w2),
            score_b2: ctx.bind(tape, "score_b2", &p.score_b2),
        }
    }
}

/// Tight similarity: concat [text; frames], add segment + position
/// embeddings, joint-encode, then score the first-token output through
/// affine -> ReLU -> affine. Returns a 1x1 scalar node.
///
/// `pre_excite`, when present, is a sigmoid gate applied to the frames
/// before fusion.
pub fn tight_score_node(
    tape: &Tape,
    text: Var,
    frames: Var,
    mask: &[bool],
    tight: &BoundTight,
    pre_excite: Option<&BoundGate>,
) -> Result<Var> {
    let (text_rows, text_width) = tape.shape(text);
    let (_, frame_width) = tape.shape(frames);
    if text_rows != 1 || text_width != frame_width {
        return Err(Error::shape(
            "tight_score",
            format!("text 1x{frame_width}"),
            format!("text {text_rows}x{text_width}"),
        ));
    }
    let frames = match pre_excite {
        Some(gate) => excitation_node(tape, frames, mask, gate)?,
        None => frames,
    };
    let (n, _) = tape.shape(frames);

    let tokens = tape.concat_rows(&[text, frames])?;
    let text_segment = tape.slice_row(tight.segment, 0)?;
    let frame_segment = tape.slice_row(tight.segment, 1)?;
    let frame_segments = tape.repeat_row(frame_segment, n)?;
    let segments = tape.concat_rows(&[text_segment, frame_segments])?;
    let tokens = tape.add(tokens, segments)?;

    // Text token first, then frame validity.
    let mut token_mask = Vec::with_capacity(n + 1);
    token_mask.push(true);
    token_mask.extend_from_slice(mask);

    let encoded = encoder_stack_node(tape, tokens, &token_mask, &tight.encoder)?;
    let first = tape.slice_row(encoded, 0)?;
    let first_col = tape.transpose(first);
    let hidden = tape.affine(first_col, tight.score_w1, tight.score_b1)?;
    let hidden = tape.relu(hidden);
    tape.affine(hidden, tight.score_w2, tight.score_b2)
}

// ---- value-level operations ---------------------------------------------------

/// Which temporal encoder a sequential calculator uses.
#[derive(Debug, Clone, PartialEq)]
pub enum SequentialEncoder {
    Lstm(LstmParams),
    Transformer(TransformerParams),
}

/// Pooling head applied to encoder output.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregationHead {
    MeanPool,
    Aggregation(GateParams),
    ExcitationMeanPool(GateParams),
    ExcitationAggregation {
        excite: GateParams,
        aggregate: GateParams,
    },
}

pub enum BoundHead {
    MeanPool,
    Aggregation(BoundGate),
    ExcitationMeanPool(BoundGate),
    ExcitationAggregation { excite: BoundGate, aggregate: BoundGate },
}

impl BoundHead {
    pub fn bind_with(tape: &Tape, ctx: &mut BindCtx<'_>, head: &AggregationHead) -> Self {
        match head {
            AggregationHead::MeanPool => BoundHead::MeanPool,
            AggregationHead::Aggregation(g) => {
                BoundHead::Aggregation(BoundGate::bind_with(tape, &mut ctx.scope("aggregation"), g))
            }
            AggregationHead::ExcitationMeanPool(g) => BoundHead::ExcitationMeanPool(
                BoundGate::bind_with(tape, &mut ctx.scope("excitation"), g),
            ),
            AggregationHead::ExcitationAggregation { excite, aggregate } => {
                BoundHead::ExcitationAggregation {
                    excite: BoundGate::bind_with(tape, &mut ctx.scope("excitation"), excite),
                    aggregate: BoundGate::bind_with(tape, &mut ctx.scope("aggregation"), aggregate),
                }
            }
        }
    }
}

pub fn head_node(tape: &Tape, features: Var, mask: &[bool], head: &BoundHead) -> Result<Var> {
    match head {
        BoundHead::MeanPool => mean_pool_node(tape, features, mask),
        BoundHead::Aggregation(gate) => aggregation_node(tape, features, mask, gate),
        BoundHead::ExcitationMeanPool(gate) => {
            let excited = excitation_node(tape, features, mask, gate)?;
            mean_pool_node(tape, excited, mask)
        }
        BoundHead::ExcitationAggregation { excite, aggregate } => {
            let excited = excitation_node(tape, features, mask, excite)?;
            aggregation_node(tape, excited, mask, aggregate)
        }
    }
}

/// Runs a temporal encoder over the frames (value level).
pub fn encode(v: &FrameFeatures, encoder: &SequentialEncoder) -> Result<FrameFeatures> {
    let tape = Tape::new();
    let frames = tape.constant(v.features().clone());
    let out = match encoder {
        SequentialEncoder::Lstm(p) => {
            let bound = BoundLstm::bind_with(&tape, &mut BindCtx::frozen(), p);
            lstm_encode_node(&tape, frames, v.mask(), &bound)?
        }
        SequentialEncoder::Transformer(p) => {
            let bound = BoundTransformer::bind_with(&tape, &mut BindCtx::frozen(), p);
            transformer_encode_node(&tape, frames, v.mask(), &bound)?
        }
    };
    FrameFeatures::new(tape.value(out), v.mask().to_vec())
}

/// LSTM encoding at the value level.
pub fn lstm_encode(v: &FrameFeatures, p: &LstmParams) -> Result<FrameFeatures> {
    if p.width() != v.channels() {
        return Err(Error::shape(
            "lstm_encode",
            format!("width {}", p.width()),
            format!("width {}", v.channels()),
        ));
    }
    encode(v, &SequentialEncoder::Lstm(p.clone()))
}

/// Transformer encoding at the value level.
pub fn transformer_encode(v: &FrameFeatures, p: &TransformerParams) -> Result<FrameFeatures> {
    if p.width() != v.channels() {
        return Err(Error::shape(
            "transformer_encode",
            format!("width {}", p.width()),
            format!("width {}", v.channels()),
        ));
    }
    encode(v, &SequentialEncoder::Transformer(p.clone()))
}

/// Sequential calculator: temporal encoder followed by a pooling head.
pub fn sequential_aggregate(
    v: &FrameFeatures,
    encoder: &SequentialEncoder,
    head: &AggregationHead,
) -> Result<VideoRepresentation> {
    let encoded = encode(v, encoder)?;
    let tape = Tape::new();
    let features = tape.constant(encoded.features().clone());
    let bound_head = BoundHead::bind_with(&tape, &mut BindCtx::frozen(), head);
    let out = head_node(&tape, features, encoded.mask(), &bound_head)?;
    Ok(VideoRepresentation {
        vector: tape.value(out).to_vector()?,
    })
}

/// Tight similarity score at the value level.
pub fn tight_score(
    text: &Vector,
    v: &FrameFeatures,
    p: &TightParams,
    pre_excite: Option<&GateParams>,
) -> Result<f64> {
    if text.len() != v.channels() || p.width() != v.channels() {
        return Err(Error::shape(
            "tight_score",
            format!("width {}", v.channels()),
            format!("text {} / scorer {}", text.len(), p.width()),
        ));
    }
    if let Some(g) = pre_excite {
        if g.head != gates::GateHead::Sigmoid {
            return Err(Error::Config(
                "tight pre-excitation requires a sigmoid head".into(),
            ));
        }
    }
    let tape = Tape::new();
    let text_node = tape.constant(Matrix::row(text));
    let frames = tape.constant(v.features().clone());
    let bound = BoundTight::bind_with(&tape, &mut BindCtx::frozen(), p);
    let gate = pre_excite.map(|g| BoundGate::bind_with(&tape, &mut BindCtx::frozen(), g));
    let score = tight_score_node(&tape, text_node, frames, v.mask(), &bound, gate.as_ref())?;
    Ok(tape.value(score).scalar())
}
