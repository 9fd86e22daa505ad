//! Training loop: Adam with a cosine learning-rate schedule over the
//! symmetric contrastive loss, plus checkpoint serialization.
//!
//! Only the new-module parameters train; caption and frame embeddings
//! are frozen inputs. Training is single-threaded and fully
//! deterministic for a given (config, seed): shuffling, init and the
//! backward pass all derive from seeded generators and fixed traversal
//! orders.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculator::{score_node, video_rep_node, Calculator, CalculatorConfig};
use crate::data::{decode_feat, encode_feat, Dataset};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::gates::{FrameFeatures, InitMode};
use crate::params::{ParamRegistry, Parameterized};
use crate::retrieval::{contrastive_loss_node, rank_metrics, RetrievalReport};
use crate::tape::{Tape, Var};
use crate::tensor::Matrix;

type NamedTensorList = Vec<(String, Matrix)>;

fn default_epochs() -> usize {
    5
}

fn default_batch_size() -> usize {
    128
}

fn default_learning_rate() -> f64 {
    1e-4
}

fn default_temperature() -> f64 {
    0.05
}

fn default_frames() -> usize {
    12
}

fn default_dim() -> usize {
    32
}

/// Training-run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub calculator: CalculatorConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Initial learning rate for the new-module parameters.
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Contrastive temperature; fixed unless `learnable_temperature`.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub learnable_temperature: bool,
    /// Fixed frame count N after padding/subsampling.
    #[serde(default = "default_frames")]
    pub frames: usize,
    /// Embedding width C.
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop once the train-set T2V R@1 reaches this percentage.
    #[serde(default)]
    pub early_stop_t2v_r1: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.frames == 0 || self.dim == 0 {
            return Err(Error::Config(format!(
                "sizes must be positive: batch_size={} frames={} dim={}",
                self.batch_size, self.frames, self.dim
            )));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Cosine decay: base_lr * (1 + cos(pi * step / total)) / 2.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("cosine schedule needs total_steps > 0".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!(
            "step {step} outside schedule of {total_steps} steps"
        )));
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + phase.cos()))
}

/// One bias-corrected Adam update on a single tensor.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    step: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != m.shape() || param.shape() != v.shape() {
        return Err(Error::shape(
            "adam_step",
            param.shape_string(),
            format!(
                "grad {} m {} v {}",
                grad.shape_string(),
                m.shape_string(),
                v.shape_string()
            ),
        ));
    }
    debug_assert!(step >= 1);
    let bias1 = 1.0 - beta1.powi(step as i32);
    let bias2 = 1.0 - beta2.powi(step as i32);
    for i in 0..param.data().len() {
        let g = grad.data()[i];
        let m_i = beta1 * m.data()[i] + (1.0 - beta1) * g;
        let v_i = beta2 * v.data()[i] + (1.0 - beta2) * g * g;
        m.data_mut()[i] = m_i;
        v.data_mut()[i] = v_i;
        let m_hat = m_i / bias1;
        let v_hat = v_i / bias2;
        param.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Adam optimizer state over a named parameter set.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    moments: Vec<(String, Matrix, Matrix)>,
    step: usize,
}

impl Adam {
    pub fn new(params: &impl Parameterized) -> Self {
        let moments = params
            .named_tensors()
            .into_iter()
            .map(|(name, m)| {
                let zeros = Matrix::zeros(m.rows(), m.cols());
                (name, zeros.clone(), zeros)
            })
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments,
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Applies one update; parameters without a gradient entry are
    /// treated as having zero gradient and stay unchanged.
    pub fn step(
        &mut self,
        params: &mut impl Parameterized,
        grads: &BTreeMap<String, Matrix>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let step = self.step;
        let (beta1, beta2, epsilon) = (self.beta1, self.beta2, self.epsilon);
        let mut result = Ok(());
        let mut cursor = 0;
        params.visit_params_mut(&mut |name, tensor| {
            if result.is_err() {
                return;
            }
            let (stored_name, m, v) = &mut self.moments[cursor];
            cursor += 1;
            debug_assert_eq!(stored_name, name, "moment order drifted from visit order");
            let zero;
            let grad = match grads.get(name) {
                Some(g) => g,
                None => {
                    zero = Matrix::zeros(tensor.rows(), tensor.cols());
                    &zero
                }
            };
            result = adam_step(tensor, grad, m, v, step, lr, beta1, beta2, epsilon);
        });
        result
    }

    fn moment_tensors(&self) -> (NamedTensorList, NamedTensorList) {
        let m = self.moments.iter().map(|(n, m, _)| (n.clone(), m.clone())).collect();
        let v = self.moments.iter().map(|(n, _, v)| (n.clone(), v.clone())).collect();
        (m, v)
    }
}

/// Trainable state: calculator parameters plus the optional learnable
/// log-temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: crate::calculator::CalculatorParams,
    /// 1x1 log(tau) when the temperature is learnable.
    pub log_temperature: Option<Matrix>,
}

impl Parameterized for TrainState {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.params.visit_params(f);
        if let Some(t) = &self.log_temperature {
            f("log_temperature", t);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.params.visit_params_mut(f);
        if let Some(t) = &mut self.log_temperature {
            f("log_temperature", t);
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    pub t2v: RetrievalReport,
    pub v2t: RetrievalReport,
}

/// Result of a training run.
pub struct TrainOutput {
    pub calculator: Calculator,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

/// Builds the batch loss graph shared by training and gradient checks:
/// in-batch similarity scores through the calculator, then the
/// symmetric contrastive loss.
pub fn batch_loss_node(
    tape: &Tape,
    calc: &Calculator,
    reg: &mut ParamRegistry,
    state: &TrainState,
    texts: &Matrix,
    items: &[&FrameFeatures],
    temperature: f64,
) -> Result<Var> {
    let current = Calculator {
        config: calc.config.clone(),
        params: state.params.clone(),
        frames: calc.frames,
        dim: calc.dim,
    };
    let bound = current.bind_trainable(tape, reg);
    let b = items.len();
    let tau = match &state.log_temperature {
        Some(t) => {
            let log_tau = reg.bind(tape, "log_temperature", t);
            tape.exp(log_tau)
        }
        None => tape.scalar_constant(temperature),
    };

    let scores = if calc.is_tight() {
        let mut cells = Vec::with_capacity(b * b);
        for q in 0..b {
            let text = tape.constant(Matrix::from_raw(1, texts.cols(), texts.row_slice(q).to_vec()));
            for item in items {
                let frames = tape.constant(item.features().clone());
                cells.push(score_node(tape, &bound, text, frames, item.mask())?);
            }
        }
        tape.stack_scalars(b, b, &cells)?
    } else {
        let mut reps = Vec::with_capacity(b);
        for item in items {
            let frames = tape.constant(item.features().clone());
            reps.push(video_rep_node(tape, &bound, frames, item.mask())?);
        }
        let stacked = tape.concat_rows(&reps)?;
        let normalized = tape.l2_normalize_rows(stacked)?;
        let text_const = tape.constant(normalized_rows(texts)?);
        let reps_t = tape.transpose(normalized);
        tape.matmul(text_const, reps_t)?
    };
    contrastive_loss_node(tape, scores, tau)
}

fn normalized_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let norm = m.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegenerateVector { norm });
        }
        for x in &mut out.data_mut()[r * m.cols()..(r + 1) * m.cols()] {
            *x /= norm;
        }
    }
    Ok(out)
}

/// Full train/eval similarity of the current parameters over a padded
/// dataset (sequential; the training loop is single-threaded).
pub fn evaluate(
    calc: &Calculator,
    texts: &Matrix,
    items: &[FrameFeatures],
) -> Result<(RetrievalReport, RetrievalReport)> {
    let sims = calc.similarity(texts, items, true, Parallelism::Sequential)?;
    let gt: Vec<usize> = (0..items.len()).collect();
    let t2v = rank_metrics(&sims, &gt, Parallelism::Sequential)?;
    let v2t = rank_metrics(&sims.transposed(), &gt, Parallelism::Sequential)?;
    Ok((t2v, v2t))
}

/// Trains the configured calculator on a paired dataset.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutput> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 pairs, got {}",
            dataset.len()
        )));
    }
    let dim = dataset.dim()?;
    if dim != config.dim {
        return Err(Error::shape(
            "train",
            format!("dataset width {}", config.dim),
            format!("dataset width {dim}"),
        ));
    }

    let mut calc = Calculator::init(
        &config.calculator,
        config.frames,
        config.dim,
        InitMode::ScaledUniform { seed: config.seed },
    )?;
    let mut state = TrainState {
        params: calc.params.clone(),
        log_temperature: config
            .learnable_temperature
            .then(|| Matrix::from_raw(1, 1, vec![config.temperature.ln()])),
    };

    let texts = dataset.caption_matrix()?;
    let padded = dataset.padded_frames(config.frames)?;

    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let mut adam = Adam::new(&state);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut log = Vec::with_capacity(config.epochs);
    let mut global_step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut counted_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            // A singleton batch has no negatives; skip it.
            if chunk.len() < 2 {
                global_step += 1;
                continue;
            }
            let lr = cosine_lr(global_step, total_steps, config.learning_rate)?;
            let batch_texts = {
                let mut data = Vec::with_capacity(chunk.len() * dim);
                for &i in chunk {
                    data.extend_from_slice(texts.row_slice(i));
                }
                Matrix::from_raw(chunk.len(), dim, data)
            };
            let batch_items: Vec<&FrameFeatures> = chunk.iter().map(|&i| &padded[i]).collect();

            let tape = Tape::new();
            let mut reg = ParamRegistry::new();
            let loss = batch_loss_node(
                &tape,
                &calc,
                &mut reg,
                &state,
                &batch_texts,
                &batch_items,
                config.temperature,
            )?;
            let loss_value = tape.value(loss).scalar();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: global_step,
                    value: loss_value,
                });
            }
            epoch_loss += loss_value;
            counted_batches += 1;

            let grads = tape.backward(loss)?;
            let named = reg.named_grads(&tape, &grads);
            adam.step(&mut state, &named, lr)?;
            calc.params = state.params.clone();
            global_step += 1;
        }

        let loss = if counted_batches > 0 {
            epoch_loss / counted_batches as f64
        } else {
            f64::NAN
        };
        let (t2v, v2t) = evaluate(&calc, &texts, &padded)?;
        let stop = config
            .early_stop_t2v_r1
            .map(|threshold| t2v.r_at_1 >= threshold)
            .unwrap_or(false);
        log.push(EpochLog {
            epoch,
            loss,
            t2v,
            v2t,
        });
        if stop {
            break;
        }
    }

    let checkpoint = Checkpoint::capture(config, &state, &adam);
    Ok(TrainOutput {
        calculator: calc,
        state,
        log,
        checkpoint,
    })
}

// ---- checkpoints -----------------------------------------------------------------

/// One named tensor as a base64 FEAT block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub feat: String,
}

fn tensor_entries(tensors: &[(String, Matrix)]) -> Vec<TensorEntry> {
    tensors
        .iter()
        .map(|(name, m)| TensorEntry {
            name: name.clone(),
            feat: BASE64.encode(encode_feat(m)),
        })
        .collect()
}

fn decode_entries(entries: &[TensorEntry]) -> Result<BTreeMap<String, Matrix>> {
    entries
        .iter()
        .map(|e| {
            let bytes = BASE64.decode(&e.feat).map_err(|err| Error::Format {
                path: e.name.clone(),
                reason: format!("bad base64: {err}"),
            })?;
            Ok((e.name.clone(), decode_feat(&bytes, &e.name)?))
        })
        .collect()
}

/// Serialized training state: config echo, parameters and optimizer
/// moments as FEAT blocks in a JSON index. Values are stored at f32
/// (FEAT precision); save -> load -> save is byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub config_hash: String,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
    pub adam_m: Vec<TensorEntry>,
    pub adam_v: Vec<TensorEntry>,
}

/// FNV-1a over the canonical JSON encoding.
pub fn config_hash(config: &TrainConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in json.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

impl Checkpoint {
    pub fn capture(config: &TrainConfig, state: &TrainState, adam: &Adam) -> Self {
        let (m, v) = adam.moment_tensors();
        Self {
            version: 1,
            config: config.clone(),
            config_hash: config_hash(config),
            step: adam.step_count() as u64,
            tensors: tensor_entries(&state.named_tensors()),
            adam_m: tensor_entries(&m),
            adam_v: tensor_entries(&v),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Rebuilds the calculator with the stored parameter values.
    pub fn to_calculator(&self) -> Result<Calculator> {
        let mut calc = Calculator::init(
            &self.config.calculator,
            self.config.frames,
            self.config.dim,
            InitMode::Zero,
        )?;
        let stored = decode_entries(&self.tensors)?;
        let mut missing = Vec::new();
        calc.params.visit_params_mut(&mut |name, tensor| {
            match stored.get(name) {
                Some(value) if value.shape() == tensor.shape() => *tensor = value.clone(),
                Some(value) => missing.push(format!(
                    "{name}: stored {} vs expected {}",
                    value.shape_string(),
                    tensor.shape_string()
                )),
                None => missing.push(format!("{name}: absent")),
            }
        });
        if !missing.is_empty() {
            return Err(Error::Format {
                path: "checkpoint".into(),
                reason: format!("parameter mismatch: {}", missing.join("; ")),
            });
        }
        Ok(calc)
    }
}
