//! Similarity calculators: every frame-aggregation design in one enum.
//!
//! A calculator either produces a per-video representation that is
//! scored against captions by cosine/dot similarity (mean pooling,
//! gated variants, sequential encoders with gated heads) or, in the
//! tight case, cross-encodes each caption-video pair into a scalar
//! score directly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_items, map_range, Parallelism};
use crate::gates::{
    self, aggregation_node, excitation_node, frame_stats, gate_forward, mean_pool_node, BoundGate,
    FrameFeatures, GateHead, GateParadigm, GateParams, InitMode, VideoRepresentation,
};
use crate::params::{BindCtx, ParamRegistry, Parameterized};
use crate::retrieval::{similarity_matrix, SimilarityMatrix};
use crate::tape::{Tape, Var};
use crate::temporal::{
    head_node, lstm_encode_node, tight_score_node, transformer_encode_node, AggregationHead,
    BoundHead, BoundLstm, BoundTight, BoundTransformer, LstmParams, TightParams, TransformerParams,
};
use crate::tensor::{Matrix, Vector};

fn default_ratio() -> usize {
    4
}

fn default_lstm_layers() -> usize {
    1
}

fn default_transformer_layers() -> usize {
    4
}

fn default_heads() -> usize {
    8
}

fn default_residual() -> bool {
    true
}

/// Gate shape in a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSpec {
    pub paradigm: ParadigmSpec,
    /// Reduction ratio r (squeeze) or expansion ratio k (expansion).
    #[serde(default = "default_ratio")]
    pub ratio: usize,
}

impl GateSpec {
    pub fn squeeze(ratio: usize) -> Self {
        Self {
            paradigm: ParadigmSpec::Squeeze,
            ratio,
        }
    }

    pub fn expansion(ratio: usize) -> Self {
        Self {
            paradigm: ParadigmSpec::Expansion,
            ratio,
        }
    }

    pub fn paradigm(&self) -> Result<GateParadigm> {
        match self.paradigm {
            ParadigmSpec::Squeeze => GateParadigm::squeeze(self.ratio),
            ParadigmSpec::Expansion => GateParadigm::expansion(self.ratio),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParadigmSpec {
    Squeeze,
    Expansion,
}

/// Pooling head configuration for the sequential calculators.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadConfig {
    MeanPool,
    Aggregation { aggregation: GateSpec },
    ExcitationMeanPool { excitation: GateSpec },
    ExcitationAggregation { excitation: GateSpec, aggregation: GateSpec },
}

/// Which similarity calculator to build.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalculatorConfig {
    MeanPool,
    ExcitationMeanPool {
        excitation: GateSpec,
    },
    Aggregation {
        aggregation: GateSpec,
    },
    ExcitationAndAggregation {
        excitation: GateSpec,
        aggregation: GateSpec,
    },
    SeqLstm {
        #[serde(default = "default_lstm_layers")]
        layers: usize,
        head: HeadConfig,
    },
    SeqTransformer {
        #[serde(default = "default_transformer_layers")]
        layers: usize,
        #[serde(default = "default_heads")]
        heads: usize,
        #[serde(default = "default_residual")]
        residual: bool,
        head: HeadConfig,
    },
    Tight {
        #[serde(default = "default_transformer_layers")]
        layers: usize,
        #[serde(default = "default_heads")]
        heads: usize,
        #[serde(default)]
        pre_excitation: Option<GateSpec>,
    },
}

/// Strict object parser: every key must be consumed. Tagged serde
/// enums ignore unknown keys, so the config deserializers go through
/// this instead (typos in run configs must fail loudly).
struct StrictObject {
    context: &'static str,
    map: serde_json::Map<String, serde_json::Value>,
}

impl StrictObject {
    fn new(context: &'static str, value: serde_json::Value) -> Result<Self, String> {
        match value {
            serde_json::Value::Object(map) => Ok(Self { context, map }),
            other => Err(format!("{context}: expected an object, got {other}")),
        }
    }

    fn kind(&mut self) -> Result<String, String> {
        match self.map.remove("kind") {
            Some(serde_json::Value::String(s)) => Ok(s),
            Some(other) => Err(format!("{}: kind must be a string, got {other}", self.context)),
            None => Err(format!("{}: missing \"kind\"", self.context)),
        }
    }

    fn required<T: serde::de::DeserializeOwned>(&mut self, key: &str) -> Result<T, String> {
        let value = self
            .map
            .remove(key)
            .ok_or_else(|| format!("{}: missing \"{key}\"", self.context))?;
        serde_json::from_value(value).map_err(|e| format!("{}: {key}: {e}", self.context))
    }

    fn optional<T: serde::de::DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>, String> {
        match self.map.remove(key) {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(value) => serde_json::from_value(value)
                .map(Some)
                .map_err(|e| format!("{}: {key}: {e}", self.context)),
        }
    }

    fn or_default<T: serde::de::DeserializeOwned>(&mut self, key: &str, default: T) -> Result<T, String> {
        Ok(self.optional(key)?.unwrap_or(default))
    }

    fn finish(self) -> Result<(), String> {
        if self.map.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.map.keys().map(|k| k.as_str()).collect();
            Err(format!("{}: unknown keys: {}", self.context, keys.join(", ")))
        }
    }
}

impl<'de> Deserialize<'de> for HeadConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        let mut obj = StrictObject::new("head", value).map_err(serde::de::Error::custom)?;
        let mut parse = || -> Result<HeadConfig, String> {
            let head = match obj.kind()?.as_str() {
                "mean_pool" => HeadConfig::MeanPool,
                "aggregation" => HeadConfig::Aggregation {
                    aggregation: obj.required("aggregation")?,
                },
                "excitation_mean_pool" => HeadConfig::ExcitationMeanPool {
                    excitation: obj.required("excitation")?,
                },
                "excitation_aggregation" => HeadConfig::ExcitationAggregation {
                    excitation: obj.required("excitation")?,
                    aggregation: obj.required("aggregation")?,
                },
                other => return Err(format!("head: unknown kind \"{other}\"")),
            };
            Ok(head)
        };
        let head = parse().map_err(serde::de::Error::custom)?;
        obj.finish().map_err(serde::de::Error::custom)?;
        Ok(head)
    }
}

impl<'de> Deserialize<'de> for CalculatorConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        let mut obj = StrictObject::new("calculator", value).map_err(serde::de::Error::custom)?;
        let mut parse = || -> Result<CalculatorConfig, String> {
            let config = match obj.kind()?.as_str() {
                "mean_pool" => CalculatorConfig::MeanPool,
                "excitation_mean_pool" => CalculatorConfig::ExcitationMeanPool {
                    excitation: obj.required("excitation")?,
                },
                "aggregation" => CalculatorConfig::Aggregation {
                    aggregation: obj.required("aggregation")?,
                },
                "excitation_and_aggregation" => CalculatorConfig::ExcitationAndAggregation {
                    excitation: obj.required("excitation")?,
                    aggregation: obj.required("aggregation")?,
                },
                "seq_lstm" => CalculatorConfig::SeqLstm {
                    layers: obj.or_default("layers", default_lstm_layers())?,
                    head: obj.required("head")?,
                },
                "seq_transformer" => CalculatorConfig::SeqTransformer {
                    layers: obj.or_default("layers", default_transformer_layers())?,
                    heads: obj.or_default("heads", default_heads())?,
                    residual: obj.or_default("residual", default_residual())?,
                    head: obj.required("head")?,
                },
                "tight" => CalculatorConfig::Tight {
                    layers: obj.or_default("layers", default_transformer_layers())?,
                    heads: obj.or_default("heads", default_heads())?,
                    pre_excitation: obj.optional("pre_excitation")?,
                },
                other => return Err(format!("calculator: unknown kind \"{other}\"")),
            };
            Ok(config)
        };
        let config = parse().map_err(serde::de::Error::custom)?;
        obj.finish().map_err(serde::de::Error::custom)?;
        Ok(config)
    }
}

impl CalculatorConfig {
    pub fn name(&self) -> String {
        match self {
            CalculatorConfig::MeanPool => "mean_pool".into(),
            CalculatorConfig::ExcitationMeanPool { .. } => "excitation+mean_pool".into(),
            CalculatorConfig::Aggregation { .. } => "aggregation".into(),
            CalculatorConfig::ExcitationAndAggregation { .. } => "excitation_and_aggregation".into(),
            CalculatorConfig::SeqLstm { .. } => "seq_lstm".into(),
            CalculatorConfig::SeqTransformer { .. } => "seq_transformer".into(),
            CalculatorConfig::Tight { .. } => "tight".into(),
        }
    }

    pub fn is_tight(&self) -> bool {
        matches!(self, CalculatorConfig::Tight { .. })
    }
}

/// Instantiated calculator parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum CalculatorParams {
    MeanPool,
    ExcitationMeanPool {
        excite: GateParams,
    },
    Aggregation {
        aggregate: GateParams,
    },
    ExcitationAndAggregation {
        excite: GateParams,
        aggregate: GateParams,
    },
    SeqLstm {
        lstm: LstmParams,
        head: AggregationHead,
    },
    SeqTransformer {
        transformer: TransformerParams,
        head: AggregationHead,
    },
    Tight {
        tight: TightParams,
        pre_excite: Option<GateParams>,
    },
}

impl Parameterized for AggregationHead {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        match self {
            AggregationHead::MeanPool => {}
            AggregationHead::Aggregation(g) => {
                g.visit_params(&mut |n, m| f(&format!("aggregation.{n}"), m))
            }
            AggregationHead::ExcitationMeanPool(g) => {
                g.visit_params(&mut |n, m| f(&format!("excitation.{n}"), m))
            }
            AggregationHead::ExcitationAggregation { excite, aggregate } => {
                excite.visit_params(&mut |n, m| f(&format!("excitation.{n}"), m));
                aggregate.visit_params(&mut |n, m| f(&format!("aggregation.{n}"), m));
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        match self {
            AggregationHead::MeanPool => {}
            AggregationHead::Aggregation(g) => {
                g.visit_params_mut(&mut |n, m| f(&format!("aggregation.{n}"), m))
            }
            AggregationHead::ExcitationMeanPool(g) => {
                g.visit_params_mut(&mut |n, m| f(&format!("excitation.{n}"), m))
            }
            AggregationHead::ExcitationAggregation { excite, aggregate } => {
                excite.visit_params_mut(&mut |n, m| f(&format!("excitation.{n}"), m));
                aggregate.visit_params_mut(&mut |n, m| f(&format!("aggregation.{n}"), m));
            }
        }
    }
}

impl Parameterized for CalculatorParams {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        match self {
            CalculatorParams::MeanPool => {}
            CalculatorParams::ExcitationMeanPool { excite } => {
                excite.visit_params(&mut |n, m| f(&format!("excitation.{n}"), m))
            }
            CalculatorParams::Aggregation { aggregate } => {
                aggregate.visit_params(&mut |n, m| f(&format!("aggregation.{n}"), m))
            }
            CalculatorParams::ExcitationAndAggregation { excite, aggregate } => {
                excite.visit_params(&mut |n, m| f(&format!("excitation.{n}"), m));
                aggregate.visit_params(&mut |n, m| f(&format!("aggregation.{n}"), m));
            }
            CalculatorParams::SeqLstm { lstm, head } => {
                lstm.visit_params(&mut |n, m| f(&format!("lstm.{n}"), m));
                head.visit_params(&mut |n, m| f(&format!("head.{n}"), m));
            }
            CalculatorParams::SeqTransformer { transformer, head } => {
                transformer.visit_params(&mut |n, m| f(&format!("transformer.{n}"), m));
                head.visit_params(&mut |n, m| f(&format!("head.{n}"), m));
            }
            CalculatorParams::Tight { tight, pre_excite } => {
                if let Some(g) = pre_excite {
                    g.visit_params(&mut |n, m| f(&format!("pre_excitation.{n}"), m));
                }
                tight.visit_params(&mut |n, m| f(&format!("tight.{n}"), m));
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        match self {
            CalculatorParams::MeanPool => {}
            CalculatorParams::ExcitationMeanPool { excite } => {
                excite.visit_params_mut(&mut |n, m| f(&format!("excitation.{n}"), m))
            }
            CalculatorParams::Aggregation { aggregate } => {
                aggregate.visit_params_mut(&mut |n, m| f(&format!("aggregation.{n}"), m))
            }
            CalculatorParams::ExcitationAndAggregation { excite, aggregate } => {
                excite.visit_params_mut(&mut |n, m| f(&format!("excitation.{n}"), m));
                aggregate.visit_params_mut(&mut |n, m| f(&format!("aggregation.{n}"), m));
            }
            CalculatorParams::SeqLstm { lstm, head } => {
                lstm.visit_params_mut(&mut |n, m| f(&format!("lstm.{n}"), m));
                head.visit_params_mut(&mut |n, m| f(&format!("head.{n}"), m));
            }
            CalculatorParams::SeqTransformer { transformer, head } => {
                transformer.visit_params_mut(&mut |n, m| f(&format!("transformer.{n}"), m));
                head.visit_params_mut(&mut |n, m| f(&format!("head.{n}"), m));
            }
            CalculatorParams::Tight { tight, pre_excite } => {
                if let Some(g) = pre_excite {
                    g.visit_params_mut(&mut |n, m| f(&format!("pre_excitation.{n}"), m));
                }
                tight.visit_params_mut(&mut |n, m| f(&format!("tight.{n}"), m));
            }
        }
    }
}

/// Gate stage label used by the weight dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateStage {
    Excitation,
    Aggregation,
}

impl GateStage {
    pub fn name(&self) -> &'static str {
        match self {
            GateStage::Excitation => "excitation",
            GateStage::Aggregation => "aggregation",
        }
    }
}

fn build_gate(
    frames: usize,
    spec: &GateSpec,
    head: GateHead,
    rng: &mut Option<ChaCha8Rng>,
) -> Result<GateParams> {
    let paradigm = spec.paradigm()?;
    Ok(match rng {
        Some(rng) => GateParams::random(frames, paradigm, head, rng),
        None => GateParams::zeros(frames, paradigm, head),
    })
}

/// A calculator configuration instantiated for a fixed frame count N
/// and channel width C.
#[derive(Debug, Clone, PartialEq)]
pub struct Calculator {
    pub config: CalculatorConfig,
    pub params: CalculatorParams,
    pub frames: usize,
    pub dim: usize,
}

impl Calculator {
    /// Builds parameters for `config`. Random draws come from a single
    /// seeded stream in a fixed construction order, so a given
    /// (config, seed) pair always produces the same calculator.
    pub fn init(config: &CalculatorConfig, frames: usize, dim: usize, mode: InitMode) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "calculator needs positive sizes, got frames={frames} dim={dim}"
            )));
        }
        let mut rng = match mode {
            InitMode::Zero => None,
            InitMode::ScaledUniform { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        let head_params =
            |cfg: &HeadConfig, rng: &mut Option<ChaCha8Rng>| -> Result<AggregationHead> {
                Ok(match cfg {
                    HeadConfig::MeanPool => AggregationHead::MeanPool,
                    HeadConfig::Aggregation { aggregation } => AggregationHead::Aggregation(
                        build_gate(frames, aggregation, GateHead::Softmax, rng)?,
                    ),
                    HeadConfig::ExcitationMeanPool { excitation } => {
                        AggregationHead::ExcitationMeanPool(build_gate(
                            frames,
                            excitation,
                            GateHead::Sigmoid,
                            rng,
                        )?)
                    }
                    HeadConfig::ExcitationAggregation {
                        excitation,
                        aggregation,
                    } => AggregationHead::ExcitationAggregation {
                        excite: build_gate(frames, excitation, GateHead::Sigmoid, rng)?,
                        aggregate: build_gate(frames, aggregation, GateHead::Softmax, rng)?,
                    },
                })
            };

        let params = match config {
            CalculatorConfig::MeanPool => CalculatorParams::MeanPool,
            CalculatorConfig::ExcitationMeanPool { excitation } => {
                CalculatorParams::ExcitationMeanPool {
                    excite: build_gate(frames, excitation, GateHead::Sigmoid, &mut rng)?,
                }
            }
            CalculatorConfig::Aggregation { aggregation } => CalculatorParams::Aggregation {
                aggregate: build_gate(frames, aggregation, GateHead::Softmax, &mut rng)?,
            },
            CalculatorConfig::ExcitationAndAggregation {
                excitation,
                aggregation,
            } => CalculatorParams::ExcitationAndAggregation {
                excite: build_gate(frames, excitation, GateHead::Sigmoid, &mut rng)?,
                aggregate: build_gate(frames, aggregation, GateHead::Softmax, &mut rng)?,
            },
            CalculatorConfig::SeqLstm { layers, head } => CalculatorParams::SeqLstm {
                lstm: match &mut rng {
                    Some(rng) => LstmParams::random(dim, *layers, rng),
                    None => LstmParams::zeros(dim, *layers),
                },
                head: head_params(head, &mut rng)?,
            },
            CalculatorConfig::SeqTransformer {
                layers,
                heads,
                residual,
                head,
            } => {
                let mut transformer = match &mut rng {
                    Some(rng) => TransformerParams::random(dim, *layers, *heads, frames, rng)?,
                    None => TransformerParams::zeros(dim, *layers, *heads, frames)?,
                };
                transformer.residual = *residual;
                CalculatorParams::SeqTransformer {
                    transformer,
                    head: head_params(head, &mut rng)?,
                }
            }
            CalculatorConfig::Tight {
                layers,
                heads,
                pre_excitation,
            } => CalculatorParams::Tight {
                pre_excite: match pre_excitation {
                    Some(spec) => Some(build_gate(frames, spec, GateHead::Sigmoid, &mut rng)?),
                    None => None,
                },
                tight: match &mut rng {
                    Some(rng) => TightParams::random(dim, *layers, *heads, frames + 1, rng)?,
                    None => TightParams::zeros(dim, *layers, *heads, frames + 1)?,
                },
            },
        };
        Ok(Self {
            config: config.clone(),
            params,
            frames,
            dim,
        })
    }

    pub fn is_tight(&self) -> bool {
        self.config.is_tight()
    }

    /// True when the calculator has at least one trainable tensor.
    pub fn is_trainable(&self) -> bool {
        self.params.param_count() > 0
    }

    pub fn bind_trainable(&self, tape: &Tape, reg: &mut ParamRegistry) -> BoundCalculator {
        self.bind(tape, &mut BindCtx::trainable(reg, ""))
    }

    pub fn bind_frozen(&self, tape: &Tape) -> BoundCalculator {
        self.bind(tape, &mut BindCtx::frozen())
    }

    fn bind(&self, tape: &Tape, ctx: &mut BindCtx<'_>) -> BoundCalculator {
        match &self.params {
            CalculatorParams::MeanPool => BoundCalculator::MeanPool,
            CalculatorParams::ExcitationMeanPool { excite } => BoundCalculator::ExcitationMeanPool {
                excite: BoundGate::bind_with(tape, &mut ctx.scope("excitation"), excite),
            },
            CalculatorParams::Aggregation { aggregate } => BoundCalculator::Aggregation {
                aggregate: BoundGate::bind_with(tape, &mut ctx.scope("aggregation"), aggregate),
            },
            CalculatorParams::ExcitationAndAggregation { excite, aggregate } => {
                BoundCalculator::ExcitationAndAggregation {
                    excite: BoundGate::bind_with(tape, &mut ctx.scope("excitation"), excite),
                    aggregate: BoundGate::bind_with(tape, &mut ctx.scope("aggregation"), aggregate),
                }
            }
            CalculatorParams::SeqLstm { lstm, head } => BoundCalculator::SeqLstm {
                lstm: BoundLstm::bind_with(tape, &mut ctx.scope("lstm"), lstm),
                head: BoundHead::bind_with(tape, &mut ctx.scope("head"), head),
            },
            CalculatorParams::SeqTransformer { transformer, head } => {
                BoundCalculator::SeqTransformer {
                    transformer: BoundTransformer::bind_with(
                        tape,
                        &mut ctx.scope("transformer"),
                        transformer,
                    ),
                    head: BoundHead::bind_with(tape, &mut ctx.scope("head"), head),
                }
            }
            CalculatorParams::Tight { tight, pre_excite } => BoundCalculator::Tight {
                pre_excite: pre_excite
                    .as_ref()
                    .map(|g| BoundGate::bind_with(tape, &mut ctx.scope("pre_excitation"), g)),
                tight: BoundTight::bind_with(tape, &mut ctx.scope("tight"), tight),
            },
        }
    }

    /// Video representation of one item (rep-producing calculators).
    pub fn video_representation(&self, v: &FrameFeatures) -> Result<VideoRepresentation> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let frames = tape.constant(v.features().clone());
        let rep = video_rep_node(&tape, &bound, frames, v.mask())?;
        Ok(VideoRepresentation {
            vector: tape.value(rep).to_vector()?,
        })
    }

    /// Pair score of one caption against one video (tight calculator).
    pub fn pair_score(&self, text: &Vector, v: &FrameFeatures) -> Result<f64> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let text_node = tape.constant(Matrix::row(text));
        let frames = tape.constant(v.features().clone());
        let score = score_node(&tape, &bound, text_node, frames, v.mask())?;
        Ok(tape.value(score).scalar())
    }

    /// Full QxM similarity matrix between caption embeddings (rows of
    /// `texts`) and videos. Rep-producing calculators use cosine
    /// (`normalize`, the default training/eval scoring) or raw dots;
    /// the tight calculator cross-encodes every pair and ignores
    /// `normalize`.
    pub fn similarity(
        &self,
        texts: &Matrix,
        items: &[FrameFeatures],
        normalize: bool,
        mode: Parallelism,
    ) -> Result<SimilarityMatrix> {
        if self.is_tight() {
            let rows: Vec<Result<Vec<f64>>> = map_range(mode, texts.rows(), |q| {
                let text = Vector::from_raw(texts.row_slice(q).to_vec());
                self.tight_row_scores(&text, items)
            });
            let mut data = Vec::with_capacity(texts.rows() * items.len());
            for row in rows {
                data.extend(row?);
            }
            Ok(SimilarityMatrix {
                scores: Matrix::from_raw(texts.rows(), items.len(), data),
            })
        } else {
            let reps: Vec<Result<VideoRepresentation>> =
                map_items(mode, items, |v| self.video_representation(v));
            let mut data = Vec::with_capacity(items.len() * self.dim);
            for rep in reps {
                data.extend_from_slice(rep?.vector.data());
            }
            let videos = Matrix::from_raw(items.len(), self.dim, data);
            similarity_matrix(texts, &videos, normalize, mode)
        }
    }

    /// All tight scores for one caption, sharing one tape (parameters
    /// are bound once per row instead of once per pair).
    fn tight_row_scores(&self, text: &Vector, items: &[FrameFeatures]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let text_node = tape.constant(Matrix::row(text));
        items
            .iter()
            .map(|v| {
                let frames = tape.constant(v.features().clone());
                let score = score_node(&tape, &bound, text_node, frames, v.mask())?;
                Ok(tape.value(score).scalar())
            })
            .collect()
    }

    /// Per-stage gate weights for one video, for the weight dump.
    /// Errors with `NoGates` when the calculator has no gate stage.
    pub fn gate_weights(&self, v: &FrameFeatures) -> Result<Vec<(GateStage, Vec<f64>)>> {
        let head_weights = |encoded: &FrameFeatures, head: &AggregationHead| -> Result<Vec<(GateStage, Vec<f64>)>> {
            match head {
                AggregationHead::MeanPool => Ok(Vec::new()),
                AggregationHead::Aggregation(g) => Ok(vec![(
                    GateStage::Aggregation,
                    gate_forward(&frame_stats(encoded), g, encoded.mask())?
                        .weights
                        .data()
                        .to_vec(),
                )]),
                AggregationHead::ExcitationMeanPool(g) => Ok(vec![(
                    GateStage::Excitation,
                    gate_forward(&frame_stats(encoded), g, encoded.mask())?
                        .weights
                        .data()
                        .to_vec(),
                )]),
                AggregationHead::ExcitationAggregation { excite, aggregate } => {
                    let z = gate_forward(&frame_stats(encoded), excite, encoded.mask())?;
                    let excited = gates::excitation(encoded, excite)?;
                    let zhat = gate_forward(&frame_stats(&excited), aggregate, excited.mask())?;
                    Ok(vec![
                        (GateStage::Excitation, z.weights.data().to_vec()),
                        (GateStage::Aggregation, zhat.weights.data().to_vec()),
                    ])
                }
            }
        };

        let stages = match &self.params {
            CalculatorParams::MeanPool => Vec::new(),
            CalculatorParams::ExcitationMeanPool { excite } => vec![(
                GateStage::Excitation,
                gate_forward(&frame_stats(v), excite, v.mask())?.weights.data().to_vec(),
            )],
            CalculatorParams::Aggregation { aggregate } => vec![(
                GateStage::Aggregation,
                gate_forward(&frame_stats(v), aggregate, v.mask())?.weights.data().to_vec(),
            )],
            CalculatorParams::ExcitationAndAggregation { excite, aggregate } => {
                let z = gate_forward(&frame_stats(v), excite, v.mask())?;
                let excited = gates::excitation(v, excite)?;
                let zhat = gate_forward(&frame_stats(&excited), aggregate, excited.mask())?;
                vec![
                    (GateStage::Excitation, z.weights.data().to_vec()),
                    (GateStage::Aggregation, zhat.weights.data().to_vec()),
                ]
            }
            CalculatorParams::SeqLstm { lstm, head } => {
                let encoded = crate::temporal::lstm_encode(v, lstm)?;
                head_weights(&encoded, head)?
            }
            CalculatorParams::SeqTransformer { transformer, head } => {
                let encoded = crate::temporal::transformer_encode(v, transformer)?;
                head_weights(&encoded, head)?
            }
            CalculatorParams::Tight { pre_excite, .. } => match pre_excite {
                Some(g) => vec![(
                    GateStage::Excitation,
                    gate_forward(&frame_stats(v), g, v.mask())?.weights.data().to_vec(),
                )],
                None => Vec::new(),
            },
        };
        if stages.is_empty() {
            return Err(Error::NoGates(self.config.name()));
        }
        Ok(stages)
    }
}

/// Calculator parameters bound onto a tape.
pub enum BoundCalculator {
    MeanPool,
    ExcitationMeanPool {
        excite: BoundGate,
    },
    Aggregation {
        aggregate: BoundGate,
    },
    ExcitationAndAggregation {
        excite: BoundGate,
        aggregate: BoundGate,
    },
    SeqLstm {
        lstm: BoundLstm,
        head: BoundHead,
    },
    SeqTransformer {
        transformer: BoundTransformer,
        head: BoundHead,
    },
    Tight {
        tight: BoundTight,
        pre_excite: Option<BoundGate>,
    },
}

/// Builds the video-representation subgraph (1xC) for one item.
pub fn video_rep_node(
    tape: &Tape,
    bound: &BoundCalculator,
    frames: Var,
    mask: &[bool],
) -> Result<Var> {
    match bound {
        BoundCalculator::MeanPool => mean_pool_node(tape, frames, mask),
        BoundCalculator::ExcitationMeanPool { excite } => {
            let excited = excitation_node(tape, frames, mask, excite)?;
            mean_pool_node(tape, excited, mask)
        }
        BoundCalculator::Aggregation { aggregate } => aggregation_node(tape, frames, mask, aggregate),
        BoundCalculator::ExcitationAndAggregation { excite, aggregate } => {
            let excited = excitation_node(tape, frames, mask, excite)?;
            aggregation_node(tape, excited, mask, aggregate)
        }
        BoundCalculator::SeqLstm { lstm, head } => {
            let encoded = lstm_encode_node(tape, frames, mask, lstm)?;
            head_node(tape, encoded, mask, head)
        }
        BoundCalculator::SeqTransformer { transformer, head } => {
            let encoded = transformer_encode_node(tape, frames, mask, transformer)?;
            head_node(tape, encoded, mask, head)
        }
        BoundCalculator::Tight { .. } => Err(Error::Config(
            "tight calculator produces pair scores, not video representations".into(),
        )),
    }
}

/// Builds the pair-score subgraph (1x1) for one caption-video pair.
pub fn score_node(
    tape: &Tape,
    bound: &BoundCalculator,
    text: Var,
    frames: Var,
    mask: &[bool],
) -> Result<Var> {
    match bound {
        BoundCalculator::Tight { tight, pre_excite } => {
            tight_score_node(tape, text, frames, mask, tight, pre_excite.as_ref())
        }
        _ => Err(Error::Config(
            "pair scoring is only defined for the tight calculator".into(),
        )),
    }
}
