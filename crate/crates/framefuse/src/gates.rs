//! Frame-weighting modules: mean pooling, excitation (sigmoid gating),
//! aggregation (softmax-weighted pooling), and their composition.
//!
//! A gate maps per-frame statistics through a two-layer bottleneck
//! (squeeze paradigm narrows to N/r, expansion widens to N*k) and a
//! head activation. Sigmoid heads model non-mutually-exclusive frame
//! relationships and rescale frames in place; softmax heads model
//! mutually exclusive ones and collapse frames into a single video
//! representation by weighted summation.
//!
//! Masking semantics: padded frames carry all-zero features, sigmoid
//! gates force their weights to 0, softmax gates exclude them from the
//! simplex, and mean pooling divides by the masked-in count only.
//!
//! Mean pooling is invariant under permutations of the masked-in
//! frames; the gate-based modules are not — their bottleneck weights
//! are indexed by frame position, so reordering frames reorders and
//! changes the learned weighting.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::params::{BindCtx, ParamRegistry, Parameterized};
use crate::tape::{Tape, Var};
use crate::tensor::{Matrix, Vector};

/// Per-frame embeddings plus a validity mask (true = real frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    features: Matrix,
    mask: Vec<bool>,
}

impl FrameFeatures {
    /// Validates the invariants: at least one frame, at least one
    /// masked-in frame, and all-zero rows behind the mask.
    pub fn new(features: Matrix, mask: Vec<bool>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidValue {
                op: "FrameFeatures::new",
                reason: "need at least one frame".into(),
            });
        }
        if mask.len() != features.rows() {
            return Err(Error::shape(
                "FrameFeatures::new",
                format!("mask of length {}", features.rows()),
                format!("mask of length {}", mask.len()),
            ));
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::EmptyMask);
        }
        for (r, keep) in mask.iter().enumerate() {
            if !keep && features.row_slice(r).iter().any(|x| *x != 0.0) {
                return Err(Error::InvalidValue {
                    op: "FrameFeatures::new",
                    reason: format!("masked-out row {r} is not all-zero"),
                });
            }
        }
        Ok(Self { features, mask })
    }

    /// All frames valid.
    pub fn full(features: Matrix) -> Result<Self> {
        let mask = vec![true; features.rows()];
        Self::new(features, mask)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Total frame slots N, padding included.
    pub fn frame_count(&self) -> usize {
        self.features.rows()
    }

    pub fn channels(&self) -> usize {
        self.features.cols()
    }

    /// Number of masked-in frames.
    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Aggregated video vector of length C.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRepresentation {
    pub vector: Vector,
}

/// Frame weights emitted by a gate; sigmoid heads give per-frame
/// factors in (0,1) (0 on padding), softmax heads a simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub weights: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParadigmKind {
    Squeeze,
    Expansion,
}

/// Bottleneck shape of a gate: squeeze narrows the hidden layer to
/// ceil(N/r) (floor 1), expansion widens it to N*k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateParadigm {
    pub kind: ParadigmKind,
    pub ratio: usize,
}

impl GateParadigm {
    pub fn squeeze(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::Config("squeeze ratio must be positive".into()));
        }
        Ok(Self {
            kind: ParadigmKind::Squeeze,
            ratio: r,
        })
    }

    pub fn expansion(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("expansion ratio must be positive".into()));
        }
        Ok(Self {
            kind: ParadigmKind::Expansion,
            ratio: k,
        })
    }

    pub fn hidden_width(&self, n: usize) -> usize {
        match self.kind {
            ParadigmKind::Squeeze => n.div_ceil(self.ratio).max(1),
            ParadigmKind::Expansion => n * self.ratio,
        }
    }
}

/// Head activation of a gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateHead {
    /// Per-frame factors for excitation.
    Sigmoid,
    /// Simplex weights for aggregation.
    Softmax,
}

impl GateHead {
    pub fn name(&self) -> &'static str {
        match self {
            GateHead::Sigmoid => "sigmoid",
            GateHead::Softmax => "softmax",
        }
    }
}

/// Weight initialization for gates and other trainable modules.
#[derive(Debug, Clone, Copy)]
pub enum InitMode {
    /// All-zero parameters (test fixture: uniform softmax, 0.5 sigmoid).
    Zero,
    /// Uniform entries in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seeded.
    ScaledUniform { seed: u64 },
}

/// Two-layer bottleneck gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// h x N
    pub w_in: Matrix,
    /// h x 1
    pub b_in: Matrix,
    /// N x h
    pub w_out: Matrix,
    /// N x 1
    pub b_out: Matrix,
    pub paradigm: GateParadigm,
    pub head: GateHead,
}

impl GateParams {
    pub fn zeros(n: usize, paradigm: GateParadigm, head: GateHead) -> Self {
        let h = paradigm.hidden_width(n);
        Self {
            w_in: Matrix::zeros(h, n),
            b_in: Matrix::zeros(h, 1),
            w_out: Matrix::zeros(n, h),
            b_out: Matrix::zeros(n, 1),
            paradigm,
            head,
        }
    }

    pub fn random(n: usize, paradigm: GateParadigm, head: GateHead, rng: &mut impl Rng) -> Self {
        let h = paradigm.hidden_width(n);
        Self {
            w_in: random_matrix(h, n, n, rng),
            b_in: random_matrix(h, 1, n, rng),
            w_out: random_matrix(n, h, h, rng),
            b_out: random_matrix(n, 1, h, rng),
            paradigm,
            head,
        }
    }

    /// Frame count N this gate was built for.
    pub fn frame_count(&self) -> usize {
        self.w_out.rows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w_in.rows()
    }

    fn expect_head(&self, head: GateHead, op: &str) -> Result<()> {
        if self.head != head {
            return Err(Error::Config(format!(
                "{op} requires a {} head, gate has {}",
                head.name(),
                self.head.name()
            )));
        }
        Ok(())
    }
}

impl Parameterized for GateParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w_in", &self.w_in);
        f("b_in", &self.b_in);
        f("w_out", &self.w_out);
        f("b_out", &self.b_out);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w_in", &mut self.w_in);
        f("b_in", &mut self.b_in);
        f("w_out", &mut self.w_out);
        f("b_out", &mut self.b_out);
    }
}

/// Builds a gate per the requested init mode.
pub fn init_gate(n: usize, paradigm: GateParadigm, head: GateHead, mode: InitMode) -> Result<GateParams> {
    if n == 0 {
        return Err(Error::Config("gate needs at least one frame".into()));
    }
    Ok(match mode {
        InitMode::Zero => GateParams::zeros(n, paradigm, head),
        InitMode::ScaledUniform { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            GateParams::random(n, paradigm, head, &mut rng)
        }
    })
}

pub(crate) fn random_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_raw(rows, cols, data)
}

// ---- tape-level building blocks ---------------------------------------------

/// Gate parameters bound onto a tape.
#[derive(Clone, Copy)]
pub struct BoundGate {
    pub w_in: Var,
    pub b_in: Var,
    pub w_out: Var,
    pub b_out: Var,
    pub head: GateHead,
}

impl BoundGate {
    pub fn bind_with(tape: &Tape, ctx: &mut BindCtx<'_>, g: &GateParams) -> Self {
        Self {
            w_in: ctx.bind(tape, "w_in", &g.w_in),
            b_in: ctx.bind(tape, "b_in", &g.b_in),
            w_out: ctx.bind(tape, "w_out", &g.w_out),
            b_out: ctx.bind(tape, "b_out", &g.b_out),
            head: g.head,
        }
    }

    /// Binds as trainable parameters, recording them under `prefix`.
    pub fn bind(tape: &Tape, reg: &mut ParamRegistry, prefix: &str, g: &GateParams) -> Self {
        Self::bind_with(tape, &mut BindCtx::trainable(reg, prefix), g)
    }

    /// Binds as fixed constants (forward-only evaluation).
    pub fn bind_const(tape: &Tape, g: &GateParams) -> Self {
        Self::bind_with(tape, &mut BindCtx::frozen(), g)
    }
}

/// Per-frame channel means (Nx1) of an NxC frame matrix node.
/// Masked-out rows are all-zero, so their statistic is 0.
pub fn frame_stats_node(tape: &Tape, features: Var) -> Var {
    tape.row_means(features)
}

/// Bottleneck gate forward: head(W_out relu(W_in u + b_in) + b_out).
/// Sigmoid heads zero masked-out weights; softmax heads exclude
/// masked-out frames from the simplex.
pub fn gate_forward_node(tape: &Tape, stats: Var, gate: &BoundGate, mask: &[bool]) -> Result<Var> {
    let hidden = tape.affine(stats, gate.w_in, gate.b_in)?;
    let hidden = tape.relu(hidden);
    let logits = tape.affine(hidden, gate.w_out, gate.b_out)?;
    match gate.head {
        GateHead::Sigmoid => {
            let z = tape.sigmoid(logits);
            tape.mask_rows(z, mask)
        }
        GateHead::Softmax => tape.masked_softmax_vec(logits, mask),
    }
}

/// Excitation: rescale each frame row by its sigmoid gate weight.
pub fn excitation_node(tape: &Tape, features: Var, mask: &[bool], gate: &BoundGate) -> Result<Var> {
    if gate.head != GateHead::Sigmoid {
        return Err(Error::Config(
            "excitation requires a sigmoid head, gate has softmax".into(),
        ));
    }
    let stats = frame_stats_node(tape, features);
    let weights = gate_forward_node(tape, stats, gate, mask)?;
    tape.scale_rows(features, weights)
}

/// Aggregation: softmax-weighted sum of frame rows into 1xC. The gate
/// statistics are recomputed from the given features, so composing
/// after excitation pools the recalibrated frames.
pub fn aggregation_node(tape: &Tape, features: Var, mask: &[bool], gate: &BoundGate) -> Result<Var> {
    if gate.head != GateHead::Softmax {
        return Err(Error::Config(
            "aggregation requires a softmax head, gate has sigmoid".into(),
        ));
    }
    let stats = frame_stats_node(tape, features);
    let weights = gate_forward_node(tape, stats, gate, mask)?;
    tape.weighted_sum_rows(features, weights)
}

/// Masked mean pooling into 1xC.
pub fn mean_pool_node(tape: &Tape, features: Var, mask: &[bool]) -> Result<Var> {
    tape.masked_mean_rows(features, mask)
}

// ---- value-level operations -------------------------------------------------

/// Per-frame channel means; masked-out rows produce 0.
pub fn frame_stats(v: &FrameFeatures) -> Vector {
    let c = v.channels() as f64;
    let data = (0..v.frame_count())
        .map(|r| v.features().row_slice(r).iter().sum::<f64>() / c)
        .collect();
    Vector::from_raw(data)
}

/// Runs the bottleneck gate on explicit statistics.
pub fn gate_forward(stats: &Vector, g: &GateParams, mask: &[bool]) -> Result<GateWeights> {
    if stats.len() != g.frame_count() {
        return Err(Error::shape(
            "gate_forward",
            format!("stats of length {}", g.frame_count()),
            format!("stats of length {}", stats.len()),
        ));
    }
    let tape = Tape::new();
    let u = tape.constant(Matrix::column(stats));
    let gate = BoundGate::bind_const(&tape, g);
    let z = gate_forward_node(&tape, u, &gate, mask)?;
    Ok(GateWeights {
        weights: tape.value(z).to_vector()?,
    })
}

/// Excitation module: v_hat[i][j] = z_i * v[i][j], mask preserved.
pub fn excitation(v: &FrameFeatures, g: &GateParams) -> Result<FrameFeatures> {
    g.expect_head(GateHead::Sigmoid, "excitation")?;
    let tape = Tape::new();
    let features = tape.constant(v.features().clone());
    let gate = BoundGate::bind_const(&tape, g);
    let out = excitation_node(&tape, features, v.mask(), &gate)?;
    FrameFeatures::new(tape.value(out), v.mask().to_vec())
}

/// Aggregation module: softmax-weighted sum of frames.
pub fn aggregation(v: &FrameFeatures, g: &GateParams) -> Result<VideoRepresentation> {
    g.expect_head(GateHead::Softmax, "aggregation")?;
    let tape = Tape::new();
    let features = tape.constant(v.features().clone());
    let gate = BoundGate::bind_const(&tape, g);
    let out = aggregation_node(&tape, features, v.mask(), &gate)?;
    Ok(VideoRepresentation {
        vector: tape.value(out).to_vector()?,
    })
}

/// Excitation followed by aggregation; the aggregation stage pools the
/// recalibrated frames. The two gate paradigms are independent, which
/// covers all four squeeze/expansion combinations.
pub fn excitation_and_aggregation(
    v: &FrameFeatures,
    excite: &GateParams,
    aggregate: &GateParams,
) -> Result<VideoRepresentation> {
    excite.expect_head(GateHead::Sigmoid, "excitation_and_aggregation")?;
    aggregate.expect_head(GateHead::Softmax, "excitation_and_aggregation")?;
    let tape = Tape::new();
    let features = tape.constant(v.features().clone());
    let ge = BoundGate::bind_const(&tape, excite);
    let ga = BoundGate::bind_const(&tape, aggregate);
    let excited = excitation_node(&tape, features, v.mask(), &ge)?;
    let out = aggregation_node(&tape, excited, v.mask(), &ga)?;
    Ok(VideoRepresentation {
        vector: tape.value(out).to_vector()?,
    })
}

/// Arithmetic mean over masked-in frames only. Plain loop, independent
/// of the tape path, so zero-init gate equivalences are cross-checked
/// against separate code.
pub fn mean_pool(v: &FrameFeatures) -> Result<VideoRepresentation> {
    let count = v.valid_count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let mut acc = vec![0.0; v.channels()];
    for (r, keep) in v.mask().iter().enumerate() {
        if *keep {
            for (a, x) in acc.iter_mut().zip(v.features().row_slice(r)) {
                *a += x;
            }
        }
    }
    for a in &mut acc {
        *a /= count as f64;
    }
    Ok(VideoRepresentation {
        vector: Vector::from_raw(acc),
    })
}
