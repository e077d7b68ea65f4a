//! Link-prediction network.
//!
//! The encoder stacks residual gated graph convolutions. In each block every
//! relation type has its own weights:
//!
//! ```text
//! h_r(v) = W_self h(v) + b_self + sum_{u -> v} gate(v, u) * W_msg h(u)
//! gate(v, u) = sigmoid(W_dst h(v) + W_src h(u) + b_gate)
//! h'(v) = relu(mean_r h_r(v)) + residual(h(v))
//! ```
//!
//! and the block outputs are mixed per node by attention weights from a
//! bidirectional LSTM run over the layer sequence (jumping knowledge). The
//! predictor is an MLP over `[h(u); h(v)]` ending in a sigmoid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use voicelink_autodiff::{Index, ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FEATURE_DIM};
use crate::graph::{RelationType, ScoreGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub jk_hidden: usize,
    pub predictor_layers: usize,
    /// One weight group per relation type; `false` shares one group across all edges.
    pub heterogeneous: bool,
    pub layer_norm: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: FEATURE_DIM,
            hidden: 128,
            layers: 3,
            jk_hidden: 64,
            predictor_layers: 3,
            heterogeneous: true,
            layer_norm: false,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn num_relations(&self) -> usize {
        if self.heterogeneous {
            RelationType::ALL.len()
        } else {
            1
        }
    }

    fn relation_names(&self) -> Vec<&'static str> {
        if self.heterogeneous {
            RelationType::ALL.iter().map(|r| r.name()).collect()
        } else {
            vec!["all"]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.jk_hidden == 0 {
            return Err(Error::Config("model dimensions and layer count must be positive".into()));
        }
        if self.predictor_layers < 2 {
            return Err(Error::Config("predictor needs at least two layers".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct RelationWeights {
    w_self: ParamId,
    b_self: ParamId,
    w_msg: ParamId,
    w_gate_dst: ParamId,
    w_gate_src: ParamId,
    b_gate: ParamId,
}

#[derive(Debug, Clone)]
struct LstmWeights {
    w_input: ParamId,
    w_hidden: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct ModelIds {
    input_proj: ParamId,
    layers: Vec<Vec<RelationWeights>>,
    jk_forward: LstmWeights,
    jk_backward: LstmWeights,
    jk_score: ParamId,
    jk_score_bias: ParamId,
    pred_src: ParamId,
    pred_dst: ParamId,
    pred_bias: ParamId,
    pred_hidden: Vec<(ParamId, ParamId)>,
}

/// Network weights plus the ids needed to address them.
#[derive(Debug, Clone)]
pub struct VoiceModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    ids: ModelIds,
}

/// Per-piece tensors the network consumes, precomputed once.
#[derive(Debug, Clone)]
pub struct GraphTensors {
    pub num_nodes: usize,
    pub features: Tensor,
    /// `(sources, destinations)` per weight group.
    pub relations: Vec<(Index, Index)>,
    pub cand_src: Index,
    pub cand_dst: Index,
}

impl GraphTensors {
    /// Groups edges by relation type, or into one group when `heterogeneous` is off.
    pub fn new(graph: &ScoreGraph, features: &FeatureMatrix, heterogeneous: bool) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n {
            return Err(Error::Consistency(format!("{} feature rows for {n} nodes", features.rows())));
        }
        let per_relation = graph.relation_edges();
        let relations = if heterogeneous {
            per_relation.into_iter().map(|(s, d)| (s.into(), d.into())).collect()
        } else {
            let (mut src, mut dst) = (Vec::new(), Vec::new());
            for (s, d) in per_relation {
                src.extend(s);
                dst.extend(d);
            }
            vec![(src.into(), dst.into())]
        };
        Self::from_parts(n, features.values.clone(), relations, &graph.candidates)
    }

    pub fn from_parts(num_nodes: usize, features: Tensor, relations: Vec<(Index, Index)>, candidates: &[(usize, usize)]) -> Result<Self> {
        for (src, dst) in &relations {
            if src.len() != dst.len() || src.iter().chain(dst.iter()).any(|&i| i >= num_nodes) {
                return Err(Error::Consistency("edge list references unknown nodes".into()));
            }
        }
        if let Some(&(u, v)) = candidates.iter().find(|&&(u, v)| u >= num_nodes || v >= num_nodes) {
            return Err(Error::Consistency(format!("candidate ({u}, {v}) references an unknown node")));
        }
        Ok(Self {
            num_nodes,
            features,
            relations,
            cand_src: candidates.iter().map(|p| p.0).collect(),
            cand_dst: candidates.iter().map(|p| p.1).collect(),
        })
    }

    pub fn with_features(&self, features: Tensor) -> Self {
        Self {
            features,
            ..self.clone()
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.cand_src.len()
    }
}

/// Intermediate encoder results.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub embeddings: Var,
    pub layer_outputs: Vec<Var>,
    /// `|V| x layers` attention weights.
    pub alpha: Var,
}

/// Predicted probability for every candidate pair, in candidate order.
/// Pairs outside the candidate set implicitly score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkScores {
    pub pairs: Vec<(usize, usize)>,
    pub probs: Vec<f64>,
}

impl LinkScores {
    pub fn new(pairs: Vec<(usize, usize)>, probs: Vec<f64>) -> Self {
        debug_assert_eq!(pairs.len(), probs.len());
        Self { pairs, probs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.pairs.iter().copied().zip(self.probs.iter().copied())
    }
}

/// Pairs scoring at least `tau`.
pub fn threshold_links(scores: &LinkScores, tau: f64) -> Vec<(usize, usize)> {
    scores.iter().filter(|&(_, p)| p >= tau).map(|(pair, _)| pair).collect()
}

impl VoiceModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let h = config.hidden;
        let input_proj = params.add_glorot("enc.input_proj", config.input_dim, h, &mut rng);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d_in = if l == 0 { config.input_dim } else { h };
            let group = config
                .relation_names()
                .into_iter()
                .map(|rel| {
                    let p = format!("enc.l{l}.{rel}");
                    RelationWeights {
                        w_self: params.add_glorot(format!("{p}.w_self"), d_in, h, &mut rng),
                        b_self: params.add_zeros(format!("{p}.b_self"), 1, h),
                        w_msg: params.add_glorot(format!("{p}.w_msg"), d_in, h, &mut rng),
                        w_gate_dst: params.add_glorot(format!("{p}.w_gate_dst"), d_in, h, &mut rng),
                        w_gate_src: params.add_glorot(format!("{p}.w_gate_src"), d_in, h, &mut rng),
                        b_gate: params.add_zeros(format!("{p}.b_gate"), 1, h),
                    }
                })
                .collect();
            layers.push(group);
        }
        let jh = config.jk_hidden;
        let lstm = |dir: &str, params: &mut ParamStore, rng: &mut ChaCha8Rng| LstmWeights {
            w_input: params.add_glorot(format!("jk.{dir}.w_input"), h, 4 * jh, rng),
            w_hidden: params.add_glorot(format!("jk.{dir}.w_hidden"), jh, 4 * jh, rng),
            bias: params.add_zeros(format!("jk.{dir}.bias"), 1, 4 * jh),
        };
        let jk_forward = lstm("fwd", &mut params, &mut rng);
        let jk_backward = lstm("bwd", &mut params, &mut rng);
        let jk_score = params.add_glorot("jk.score.w", 2 * jh, 1, &mut rng);
        let jk_score_bias = params.add_zeros("jk.score.b", 1, 1);
        // First predictor layer acts on [h_u; h_v] (2h wide), stored as its
        // source and destination halves.
        let pred_src = params.add_glorot("pred.l0.w_src", h, h, &mut rng);
        let pred_dst = params.add_glorot("pred.l0.w_dst", h, h, &mut rng);
        let pred_bias = params.add_zeros("pred.l0.b", 1, h);
        let mut pred_hidden = Vec::new();
        for l in 1..config.predictor_layers {
            let out = if l + 1 == config.predictor_layers { 1 } else { h };
            pred_hidden.push((
                params.add_glorot(format!("pred.l{l}.w"), h, out, &mut rng),
                params.add_zeros(format!("pred.l{l}.b"), 1, out),
            ));
        }
        Ok(Self {
            config,
            params,
            ids: ModelIds {
                input_proj,
                layers,
                jk_forward,
                jk_backward,
                jk_score,
                jk_score_bias,
                pred_src,
                pred_dst,
                pred_bias,
                pred_hidden,
            },
        })
    }

    /// Replaces every weight with the same-named tensor from `store`.
    pub fn load_params(&mut self, store: &ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                store.len(),
                self.params.len()
            )));
        }
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id).to_string();
            let src = store
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if store.value(src).shape() != self.params.value(id).shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
            }
            *self.params.value_mut(id) = store.value(src).clone();
        }
        Ok(())
    }

    pub fn num_weights(&self) -> usize {
        self.params.num_weights()
    }

    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(&self.params, id)
    }

    /// Node embeddings (`|V| x hidden`).
    pub fn encode(&self, tape: &mut Tape, inputs: &GraphTensors, mut dropout_rng: Option<&mut ChaCha8Rng>) -> Result<EncoderOutput> {
        if inputs.relations.len() != self.config.num_relations() {
            return Err(Error::Consistency(format!(
                "{} relation groups given, model has {}",
                inputs.relations.len(),
                self.config.num_relations()
            )));
        }
        if inputs.features.cols() != self.config.input_dim {
            return Err(Error::Consistency(format!(
                "features have {} columns, model expects {}",
                inputs.features.cols(),
                self.config.input_dim
            )));
        }
        let n = inputs.num_nodes;
        let mut h = tape.constant(inputs.features.clone());
        let mut layer_outputs = Vec::with_capacity(self.config.layers);
        for (l, group) in self.ids.layers.iter().enumerate() {
            let mut total: Option<Var> = None;
            for (rel, (src, dst)) in group.iter().zip(&inputs.relations) {
                let hr = self.relation_message(tape, h, rel, src, dst, n)?;
                total = Some(match total {
                    None => hr,
                    Some(t) => tape.add(t, hr)?,
                });
            }
            let mean = tape.scale(total.expect("at least one relation"), 1.0 / group.len() as f64)?;
            let mut out = tape.relu(mean)?;
            if self.config.layer_norm {
                out = layer_norm(tape, out)?;
            }
            let residual = if l == 0 {
                let w = self.p(tape, self.ids.input_proj);
                tape.matmul(h, w)?
            } else {
                h
            };
            out = tape.add(out, residual)?;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                out = dropout(tape, out, self.config.dropout, rng)?;
            }
            layer_outputs.push(out);
            h = out;
        }
        let (embeddings, alpha) = self.jumping_knowledge(tape, &layer_outputs)?;
        Ok(EncoderOutput {
            embeddings,
            layer_outputs,
            alpha,
        })
    }

    fn relation_message(&self, tape: &mut Tape, h: Var, rel: &RelationWeights, src: &Index, dst: &Index, n: usize) -> Result<Var> {
        let w_self = self.p(tape, rel.w_self);
        let b_self = self.p(tape, rel.b_self);
        let own = tape.matmul(h, w_self)?;
        let own = tape.add_row(own, b_self)?;
        if src.is_empty() {
            return Ok(own);
        }
        let (w_msg, w_gd, w_gs, b_gate) = (
            self.p(tape, rel.w_msg),
            self.p(tape, rel.w_gate_dst),
            self.p(tape, rel.w_gate_src),
            self.p(tape, rel.b_gate),
        );
        let msg = tape.matmul(h, w_msg)?;
        let msg = tape.gather_rows(msg, src)?;
        let gd = tape.matmul(h, w_gd)?;
        let gd = tape.gather_rows(gd, dst)?;
        let gs = tape.matmul(h, w_gs)?;
        let gs = tape.gather_rows(gs, src)?;
        let gate = tape.add(gd, gs)?;
        let gate = tape.add_row(gate, b_gate)?;
        let gate = tape.sigmoid(gate)?;
        let gated = tape.mul(gate, msg)?;
        let agg = tape.scatter_add_rows(gated, dst, n)?;
        Ok(tape.add(own, agg)?)
    }

    fn lstm_step(&self, tape: &mut Tape, w: &LstmWeights, x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
        let jh = self.config.jk_hidden;
        let w_in = self.p(tape, w.w_input);
        let bias = self.p(tape, w.bias);
        let mut gates = tape.matmul(x, w_in)?;
        if let Some((h, _)) = state {
            let w_h = self.p(tape, w.w_hidden);
            let rec = tape.matmul(h, w_h)?;
            gates = tape.add(gates, rec)?;
        }
        let gates = tape.add_row(gates, bias)?;
        let i = tape.narrow_cols(gates, 0, jh)?;
        let i = tape.sigmoid(i)?;
        let f = tape.narrow_cols(gates, jh, jh)?;
        let f = tape.sigmoid(f)?;
        let g = tape.narrow_cols(gates, 2 * jh, jh)?;
        let g = tape.tanh(g)?;
        let o = tape.narrow_cols(gates, 3 * jh, jh)?;
        let o = tape.sigmoid(o)?;
        let mut c = tape.mul(i, g)?;
        if let Some((_, c_prev)) = state {
            let keep = tape.mul(f, c_prev)?;
            c = tape.add(c, keep)?;
        }
        let ct = tape.tanh(c)?;
        let h = tape.mul(o, ct)?;
        Ok((h, c))
    }

    fn jumping_knowledge(&self, tape: &mut Tape, layers: &[Var]) -> Result<(Var, Var)> {
        let steps = layers.len();
        let mut fwd = Vec::with_capacity(steps);
        let mut state = None;
        for &x in layers {
            let s = self.lstm_step(tape, &self.ids.jk_forward, x, state)?;
            fwd.push(s.0);
            state = Some(s);
        }
        let mut bwd = vec![None; steps];
        let mut state = None;
        for t in (0..steps).rev() {
            let s = self.lstm_step(tape, &self.ids.jk_backward, layers[t], state)?;
            bwd[t] = Some(s.0);
            state = Some(s);
        }
        let w = self.p(tape, self.ids.jk_score);
        let b = self.p(tape, self.ids.jk_score_bias);
        let mut scores = Vec::with_capacity(steps);
        for t in 0..steps {
            let both = tape.concat_cols(&[fwd[t], bwd[t].expect("filled above")])?;
            scores.push(tape.matmul(both, w)?);
        }
        // The score bias is shared by all layers, so it cancels in the
        // softmax; it is still applied to keep the head an ordinary linear map.
        let mut biased = Vec::with_capacity(steps);
        for s in scores {
            biased.push(tape.add_row(s, b)?);
        }
        let scores = tape.concat_cols(&biased)?;
        let alpha = tape.softmax_rows(scores)?;
        let mut out: Option<Var> = None;
        for (t, &x) in layers.iter().enumerate() {
            let a = tape.narrow_cols(alpha, t, 1)?;
            let weighted = tape.mul_col(x, a)?;
            out = Some(match out {
                None => weighted,
                Some(o) => tape.add(o, weighted)?,
            });
        }
        Ok((out.expect("at least one layer"), alpha))
    }

    /// Candidate probabilities (`|Lambda| x 1`) from node embeddings.
    pub fn predict(&self, tape: &mut Tape, embeddings: Var, inputs: &GraphTensors) -> Result<Var> {
        let ws = self.p(tape, self.ids.pred_src);
        let wd = self.p(tape, self.ids.pred_dst);
        let b0 = self.p(tape, self.ids.pred_bias);
        let from_src = tape.matmul(embeddings, ws)?;
        let from_src = tape.gather_rows(from_src, &inputs.cand_src)?;
        let from_dst = tape.matmul(embeddings, wd)?;
        let from_dst = tape.gather_rows(from_dst, &inputs.cand_dst)?;
        let z = tape.add(from_src, from_dst)?;
        let mut z = tape.add_row(z, b0)?;
        for &(w, b) in &self.ids.pred_hidden {
            z = tape.relu(z)?;
            let (w, b) = (self.p(tape, w), self.p(tape, b));
            z = tape.matmul(z, w)?;
            z = tape.add_row(z, b)?;
        }
        Ok(tape.sigmoid(z)?)
    }

    /// Encoder plus predictor; returns the `|Lambda| x 1` probability node.
    pub fn forward(&self, tape: &mut Tape, inputs: &GraphTensors, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let enc = self.encode(tape, inputs, dropout_rng)?;
        self.predict(tape, enc.embeddings, inputs)
    }

    /// Inference on a frozen model.
    pub fn predict_links(&self, inputs: &GraphTensors) -> Result<LinkScores> {
        let mut tape = Tape::new();
        let probs = self.forward(&mut tape, inputs, None)?;
        let pairs = inputs.cand_src.iter().copied().zip(inputs.cand_dst.iter().copied()).collect();
        Ok(LinkScores::new(pairs, tape.value(probs).data().to_vec()))
    }
}

/// Row-wise normalization to zero mean and unit variance, without affine terms.
fn layer_norm(tape: &mut Tape, x: Var) -> Result<Var> {
    let d = tape.shape(x).1 as f64;
    let sum = tape.sum_rows(x)?;
    let neg_mean = tape.scale(sum, -1.0 / d)?;
    let centred = tape.add_col(x, neg_mean)?;
    let sq = tape.square(centred)?;
    let var = tape.sum_rows(sq)?;
    let var = tape.scale(var, 1.0 / d)?;
    let var = tape.add_scalar(var, 1e-5)?;
    let std = tape.sqrt(var)?;
    let inv = tape.recip(std)?;
    Ok(tape.mul_col(centred, inv)?)
}

fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - p);
    let mask = (0..r * c).map(|_| if rng.gen_bool(p) { 0.0 } else { keep }).collect();
    let mask = tape.constant(Tensor::from_vec(r, c, mask)?);
    Ok(tape.mul(x, mask)?)
}
