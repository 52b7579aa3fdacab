use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::params::{AttnIdx, FfIdx, Init, LinearIdx, NormIdx, ParamGroup, ParamStore};
use super::{ModelConfig, ModelError, Modality};
use crate::diffcore::{Graph, Tensor, Var};
use crate::rewards::SegmentBoundaries;
use crate::tokens::{TokenId, TokenSequence, BOS, EOS, PAD};

#[derive(Clone)]
struct EncStream {
    self_attn: AttnIdx,
    norm_self: NormIdx,
    cross: Option<(AttnIdx, NormIdx)>,
    ff: FfIdx,
    norm_ff: NormIdx,
}

#[derive(Clone)]
struct EncLayer {
    audio: Option<EncStream>,
    video: Option<EncStream>,
}

#[derive(Clone)]
struct CrossBlock {
    attn: AttnIdx,
    norm_attn: NormIdx,
    ff: FfIdx,
    norm_ff: NormIdx,
}

#[derive(Clone)]
struct DecLayer {
    self_attn: AttnIdx,
    norm_self: NormIdx,
    streams: Vec<CrossBlock>,
}

#[derive(Clone)]
struct DecoderLayout {
    embed: usize,
    embed_proj: LinearIdx,
    layers: Vec<DecLayer>,
    gate: Option<usize>,
}

#[derive(Clone)]
struct Layout {
    audio_in: Option<LinearIdx>,
    video_in: Option<LinearIdx>,
    encoder: Vec<EncLayer>,
    worker: DecoderLayout,
    manager: DecoderLayout,
    goal: LinearIdx,
    goal_q: LinearIdx,
    goal_k: LinearIdx,
    goal_v: LinearIdx,
    vocab_out: LinearIdx,
}

/// Encoder outputs. For the bimodal network these are `[V^A, A^V]`; a
/// single-modality network has one self-attended stream.
#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub memories: [Option<Var>; 2],
}

impl EncodedVars {
    fn iter(&self) -> impl Iterator<Item = Var> + '_ {
        self.memories.iter().flatten().copied()
    }
}

#[derive(Debug, Clone)]
pub struct DecodedVars {
    /// Convex mix of `streams` (or the single stream).
    pub fused: Var,
    /// Per-memory streams: `C^{V^A}`, `C^{A^V}` in bimodal mode.
    pub streams: Vec<Var>,
    /// `σ(k)`, absent in single-modality mode.
    pub gate: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub encoded: EncodedVars,
    pub worker: DecodedVars,
    pub manager: DecodedVars,
    pub goals: Var,
    /// Additive exploration noise actually applied to the goals.
    pub noise: Option<Vec<f64>>,
    /// `Ĉ^{V,A}_g`, the worker features joined with the goal attention output.
    pub features: Var,
    pub log_probs: Var,
}

/// Exploration noise for the goal vectors.
pub enum GoalNoise<'a> {
    Off,
    /// Zero-mean Gaussian with std `σ_rel · |g_i|` per component.
    Sample(&'a mut ChaCha8Rng),
    /// A previously drawn additive perturbation, reused verbatim.
    Fixed(&'a [f64]),
}

/// Teacher-forcing view of one caption.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// Decoder inputs: `<bos>` then the targets shifted right.
    pub inputs: Vec<TokenId>,
    /// Caption followed by `<eos>`, truncated to `max_len`.
    pub targets: Vec<TokenId>,
    pub bounds: SegmentBoundaries,
}

/// Tensor-level encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    /// `V^A` `[L_V × d_latent]`; the self-attended video in vision-only mode.
    pub video_att_audio: Option<Tensor>,
    /// `A^V` `[L_A × d_latent]`; the self-attended audio in audio-only mode.
    pub audio_att_video: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    pub worker: Tensor,
    pub manager: Tensor,
    pub worker_gate: Option<f64>,
    pub manager_gate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSequence {
    pub goals: Tensor,
    pub bounds: SegmentBoundaries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerOutput {
    pub log_probs: Tensor,
    pub features: Tensor,
}

/// The hierarchical captioning network.
#[derive(Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    delimiters: Vec<TokenId>,
    layout: Layout,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.params.len())
            .field("delimiters", &self.delimiters)
            .finish()
    }
}

fn linear(g: &mut Graph, p: &[Var], idx: LinearIdx, x: Var) -> Result<Var, ModelError> {
    Ok(g.linear(x, p[idx.w], Some(p[idx.b]))?)
}

fn norm(g: &mut Graph, p: &[Var], idx: NormIdx, x: Var) -> Result<Var, ModelError> {
    Ok(g.layer_norm(x, p[idx.gain], p[idx.bias])?)
}

fn mha(g: &mut Graph, p: &[Var], idx: &AttnIdx, xq: Var, xkv: Var, heads: usize, causal: bool) -> Result<Var, ModelError> {
    let q = linear(g, p, idx.q, xq)?;
    let k = linear(g, p, idx.k, xkv)?;
    let v = linear(g, p, idx.v, xkv)?;
    let a = g.attention(q, k, v, heads, causal)?;
    linear(g, p, idx.o, a)
}

fn feed_forward(g: &mut Graph, p: &[Var], idx: &FfIdx, x: Var) -> Result<Var, ModelError> {
    let h = linear(g, p, idx.hidden, x)?;
    let h = g.relu(h)?;
    linear(g, p, idx.out, h)
}

/// `LN(x + f(x))`.
fn residual(g: &mut Graph, p: &[Var], n: NormIdx, x: Var, fx: Var) -> Result<Var, ModelError> {
    let s = g.add(x, fx)?;
    norm(g, p, n, s)
}

impl Model {
    /// Builds a freshly initialized model. `delimiters` are the token ids the
    /// critic treats as clause ends.
    pub fn new(config: ModelConfig, delimiters: Vec<TokenId>, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if let Some(&bad) = delimiters.iter().find(|&&d| d as usize >= config.vocab_size) {
            return Err(ModelError::Config(format!("delimiter id {bad} outside the vocabulary")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let d = c.d_latent;
        let bimodal = c.modality == Modality::Bimodal;

        let mut init = Init { store: &mut store, rng: &mut rng, group: ParamGroup::Encoder };
        let audio_in = c.modality.uses_audio().then(|| init.linear("encoder.audio_in", c.d_audio_in, d));
        let video_in = c.modality.uses_video().then(|| init.linear("encoder.video_in", c.d_video_in, d));
        let mut encoder = Vec::new();
        for l in 0..c.encoder_layers {
            let stream = |init: &mut Init, m: &str| EncStream {
                self_attn: init.attention(&format!("encoder.{l}.{m}.self"), d),
                norm_self: init.norm(&format!("encoder.{l}.{m}.norm_self"), d),
                cross: bimodal.then(|| {
                    (init.attention(&format!("encoder.{l}.{m}.cross"), d), init.norm(&format!("encoder.{l}.{m}.norm_cross"), d))
                }),
                ff: init.ff(&format!("encoder.{l}.{m}.ff"), d, c.d_ff),
                norm_ff: init.norm(&format!("encoder.{l}.{m}.norm_ff"), d),
            };
            let audio = c.modality.uses_audio().then(|| stream(&mut init, "audio"));
            let video = c.modality.uses_video().then(|| stream(&mut init, "video"));
            encoder.push(EncLayer { audio, video });
        }

        let n_streams = if bimodal { 2 } else { 1 };
        let decoder = |init: &mut Init, name: &str| {
            let embed = init.uniform(format!("{name}.embed"), c.vocab_size, c.d_text, 1.0);
            let embed_proj = init.linear(&format!("{name}.embed_proj"), c.d_text, d);
            let layers = (0..c.decoder_layers)
                .map(|l| DecLayer {
                    self_attn: init.attention(&format!("{name}.{l}.self"), d),
                    norm_self: init.norm(&format!("{name}.{l}.norm_self"), d),
                    streams: (0..n_streams)
                        .map(|s| CrossBlock {
                            attn: init.attention(&format!("{name}.{l}.stream{s}.cross"), d),
                            norm_attn: init.norm(&format!("{name}.{l}.stream{s}.norm_cross"), d),
                            ff: init.ff(&format!("{name}.{l}.stream{s}.ff"), d, c.d_ff),
                            norm_ff: init.norm(&format!("{name}.{l}.stream{s}.norm_ff"), d),
                        })
                        .collect(),
                })
                .collect();
            let gate = bimodal.then(|| init.constant(format!("{name}.gate_k"), vec![1], 0.0));
            DecoderLayout { embed, embed_proj, layers, gate }
        };
        init.group = ParamGroup::WorkerDecoder;
        let worker = decoder(&mut init, "worker");
        init.group = ParamGroup::ManagerDecoder;
        let manager = decoder(&mut init, "manager");
        init.group = ParamGroup::GoalHead;
        let goal = init.linear("goal", d, c.d_goal);
        init.group = ParamGroup::WorkerHead;
        let goal_q = init.linear("head.goal_q", c.d_goal, c.d_goal);
        let goal_k = init.linear("head.goal_k", d, c.d_goal);
        let goal_v = init.linear("head.goal_v", d, c.d_goal);
        let vocab_out = init.linear("head.vocab", d + c.d_goal, c.vocab_size);

        let layout = Layout { audio_in, video_in, encoder, worker, manager, goal, goal_q, goal_k, goal_v, vocab_out };
        Ok(Model { config, params: store, delimiters, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn delimiters(&self) -> &[TokenId] {
        &self.delimiters
    }

    /// Segment starts for a decoder input sequence: position `t` opens a new
    /// segment when `t = 0` or the previous target token (`inputs[t]`) is a
    /// delimiter. This is the critic rule on the target-aligned sequence.
    pub fn boundaries_for_inputs(&self, inputs: &[TokenId]) -> SegmentBoundaries {
        let starts: Vec<usize> =
            (0..inputs.len()).filter(|&t| t == 0 || self.delimiters.contains(&inputs[t])).collect();
        SegmentBoundaries::new(starts, inputs.len()).unwrap_or_else(|_| SegmentBoundaries::single())
    }

    pub fn prepare(&self, caption: &TokenSequence) -> Prepared {
        let mut targets = caption.with_eos().0;
        targets.truncate(self.config.max_len);
        let mut inputs = vec![BOS];
        inputs.extend_from_slice(&targets[..targets.len() - 1]);
        let bounds = self.boundaries_for_inputs(&inputs);
        Prepared { inputs, targets, bounds }
    }

    fn check_features(&self, audio: &Tensor, video: &Tensor) -> Result<(), ModelError> {
        let c = &self.config;
        let check = |name: &str, t: &Tensor, width: usize| {
            if t.shape().len() != 2 || t.rows() == 0 || t.cols() != width {
                Err(ModelError::Shape(format!("{name} features {:?}, expected [L × {width}]", t.shape())))
            } else {
                Ok(())
            }
        };
        if c.modality.uses_audio() {
            check("audio", audio, c.d_audio_in)?;
        }
        if c.modality.uses_video() {
            check("video", video, c.d_video_in)?;
        }
        Ok(())
    }

    fn check_tokens(&self, ids: &[TokenId]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Shape("empty token sequence".into()));
        }
        match ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(&t) => Err(ModelError::Shape(format!("token {t} outside vocabulary {}", self.config.vocab_size))),
            None => Ok(()),
        }
    }

    /// Adds parameters to `g`; groups rejected by `trainable` become constants.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(ParamGroup) -> bool) -> Result<Vec<Var>, ModelError> {
        Ok(self.params.bind(g, trainable)?)
    }

    fn encode_stream(&self, g: &mut Graph, p: &[Var], s: &EncStream, x: Var) -> Result<Var, ModelError> {
        let a = mha(g, p, &s.self_attn, x, x, self.config.heads, false)?;
        residual(g, p, s.norm_self, x, a)
    }

    fn encode_ff(&self, g: &mut Graph, p: &[Var], s: &EncStream, x: Var) -> Result<Var, ModelError> {
        let f = feed_forward(g, p, &s.ff, x)?;
        residual(g, p, s.norm_ff, x, f)
    }

    pub fn encode_vars(&self, g: &mut Graph, p: &[Var], audio: &Tensor, video: &Tensor) -> Result<EncodedVars, ModelError> {
        self.check_features(audio, video)?;
        let heads = self.config.heads;
        let positional = self.config.positional_encoding;
        let embed = |g: &mut Graph, idx: Option<LinearIdx>, t: &Tensor| -> Result<Option<Var>, ModelError> {
            let Some(idx) = idx else { return Ok(None) };
            let x = g.constant(t.clone())?;
            let x = linear(g, p, idx, x)?;
            Ok(Some(if positional { g.add_positional(x)? } else { x }))
        };
        let mut a = embed(g, self.layout.audio_in, audio)?;
        let mut v = embed(g, self.layout.video_in, video)?;
        for layer in &self.layout.encoder {
            let a1 = match (&layer.audio, a) {
                (Some(s), Some(x)) => Some(self.encode_stream(g, p, s, x)?),
                _ => None,
            };
            let v1 = match (&layer.video, v) {
                (Some(s), Some(x)) => Some(self.encode_stream(g, p, s, x)?),
                _ => None,
            };
            let (a2, v2) = match (a1, v1) {
                (Some(a1), Some(v1)) => {
                    let (sa, sv) = (layer.audio.as_ref().unwrap(), layer.video.as_ref().unwrap());
                    let (ca, na) = sa.cross.as_ref().expect("bimodal layer");
                    let (cv, nv) = sv.cross.as_ref().expect("bimodal layer");
                    let av = mha(g, p, ca, a1, v1, heads, false)?;
                    let va = mha(g, p, cv, v1, a1, heads, false)?;
                    (Some(residual(g, p, *na, a1, av)?), Some(residual(g, p, *nv, v1, va)?))
                }
                other => other,
            };
            a = match (&layer.audio, a2) {
                (Some(s), Some(x)) => Some(self.encode_ff(g, p, s, x)?),
                _ => None,
            };
            v = match (&layer.video, v2) {
                (Some(s), Some(x)) => Some(self.encode_ff(g, p, s, x)?),
                _ => None,
            };
        }
        Ok(EncodedVars { memories: [v, a] })
    }

    fn decode_one(
        &self,
        g: &mut Graph,
        p: &[Var],
        dec: &DecoderLayout,
        enc: &EncodedVars,
        inputs: &[TokenId],
    ) -> Result<DecodedVars, ModelError> {
        let heads = self.config.heads;
        let ids: Vec<usize> = inputs.iter().map(|&t| t as usize).collect();
        let e = g.embedding(p[dec.embed], &ids)?;
        let e = linear(g, p, dec.embed_proj, e)?;
        let mut x = if self.config.positional_encoding { g.add_positional(e)? } else { e };
        let memories: Vec<Var> = enc.iter().collect();
        let gate = match dec.gate {
            Some(k) => Some(g.sigmoid(p[k])?),
            None => None,
        };
        let mut streams = Vec::new();
        for layer in &dec.layers {
            let s = mha(g, p, &layer.self_attn, x, x, heads, true)?;
            let h = residual(g, p, layer.norm_self, x, s)?;
            streams.clear();
            for (block, &mem) in layer.streams.iter().zip(&memories) {
                let c = mha(g, p, &block.attn, h, mem, heads, false)?;
                let c = residual(g, p, block.norm_attn, h, c)?;
                let f = feed_forward(g, p, &block.ff, c)?;
                streams.push(residual(g, p, block.norm_ff, c, f)?);
            }
            x = match gate {
                Some(gv) => g.mix(gv, streams[0], streams[1])?,
                None => streams[0],
            };
        }
        Ok(DecodedVars { fused: x, streams, gate })
    }

    /// Runs both decoders over `inputs` (decoder input ids, `<bos>` first).
    pub fn decode_vars(
        &self,
        g: &mut Graph,
        p: &[Var],
        enc: &EncodedVars,
        inputs: &[TokenId],
    ) -> Result<(DecodedVars, DecodedVars), ModelError> {
        self.check_tokens(inputs)?;
        let worker = self.decode_one(g, p, &self.layout.worker, enc, inputs)?;
        let manager = self.decode_one(g, p, &self.layout.manager, enc, inputs)?;
        Ok((worker, manager))
    }

    /// Goal vectors: projected manager features at each segment start, held
    /// through the segment, plus optional exploration noise.
    pub fn goals_vars(
        &self,
        g: &mut Graph,
        p: &[Var],
        manager_features: Var,
        bounds: &SegmentBoundaries,
        noise: GoalNoise<'_>,
    ) -> Result<(Var, Option<Vec<f64>>), ModelError> {
        let len = g.value(manager_features).rows();
        bounds.check(len)?;
        let raw = linear(g, p, self.layout.goal, manager_features)?;
        let held = g.gather_rows(raw, &bounds.segment_start_of(len))?;
        let applied = match noise {
            GoalNoise::Off => None,
            GoalNoise::Fixed(n) => Some(n.to_vec()),
            GoalNoise::Sample(rng) => {
                // one draw per segment, shared by its rows
                let dg = self.config.d_goal;
                let starts = bounds.segment_start_of(len);
                let values = g.value(held).data().to_vec();
                let mut out = vec![0.0; values.len()];
                for t in 0..len {
                    for i in 0..dg {
                        out[t * dg + i] = if starts[t] == t {
                            let z: f64 = StandardNormal.sample(rng);
                            self.config.sigma_rel * values[t * dg + i].abs() * z
                        } else {
                            out[starts[t] * dg + i]
                        };
                    }
                }
                Some(out)
            }
        };
        let goals = match &applied {
            Some(n) => g.add_constant(held, n)?,
            None => held,
        };
        Ok((goals, applied))
    }

    /// Goal attention (goals as queries over worker features), the joined
    /// feature `Ĉ_g` and the vocabulary log-probabilities.
    pub fn classify_vars(&self, g: &mut Graph, p: &[Var], worker_features: Var, goals: Var) -> Result<(Var, Var), ModelError> {
        if g.value(worker_features).rows() != g.value(goals).rows() {
            return Err(ModelError::Shape(format!(
                "{} feature rows vs {} goal rows",
                g.value(worker_features).rows(),
                g.value(goals).rows()
            )));
        }
        let q = linear(g, p, self.layout.goal_q, goals)?;
        let k = linear(g, p, self.layout.goal_k, worker_features)?;
        let v = linear(g, p, self.layout.goal_v, worker_features)?;
        let attended = g.attention(q, k, v, 1, true)?;
        let features = g.concat(&[worker_features, attended])?;
        let logits = linear(g, p, self.layout.vocab_out, features)?;
        Ok((features, g.log_softmax(logits)?))
    }

    /// Full teacher-forced forward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_vars(
        &self,
        g: &mut Graph,
        p: &[Var],
        audio: &Tensor,
        video: &Tensor,
        inputs: &[TokenId],
        bounds: &SegmentBoundaries,
        noise: GoalNoise<'_>,
    ) -> Result<ForwardVars, ModelError> {
        let encoded = self.encode_vars(g, p, audio, video)?;
        let (worker, manager) = self.decode_vars(g, p, &encoded, inputs)?;
        let (goals, noise) = self.goals_vars(g, p, manager.fused, bounds, noise)?;
        let (features, log_probs) = self.classify_vars(g, p, worker.fused, goals)?;
        Ok(ForwardVars { encoded, worker, manager, goals, noise, features, log_probs })
    }

    fn frozen_graph(&self) -> Result<(Graph, Vec<Var>), ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, |_| false)?;
        Ok((g, p))
    }

    pub fn encode(&self, audio: &Tensor, video: &Tensor) -> Result<EncodedPair, ModelError> {
        let (mut g, p) = self.frozen_graph()?;
        let enc = self.encode_vars(&mut g, &p, audio, video)?;
        let get = |v: Option<Var>| v.map(|v| g.value(v).clone());
        Ok(EncodedPair { video_att_audio: get(enc.memories[0]), audio_att_video: get(enc.memories[1]) })
    }

    fn encoded_constants(&self, g: &mut Graph, pair: &EncodedPair) -> Result<EncodedVars, ModelError> {
        let mut mk = |t: &Option<Tensor>| -> Result<Option<Var>, ModelError> {
            match t {
                Some(t) if t.cols() == self.config.d_latent => Ok(Some(g.constant(t.clone())?)),
                Some(t) => Err(ModelError::Shape(format!("encoded features {:?}", t.shape()))),
                None => Ok(None),
            }
        };
        let memories = [mk(&pair.video_att_audio)?, mk(&pair.audio_att_video)?];
        let expected = if self.config.modality == Modality::Bimodal { 2 } else { 1 };
        if memories.iter().flatten().count() != expected {
            return Err(ModelError::Shape("encoded pair does not match the model's modality".into()));
        }
        Ok(EncodedVars { memories })
    }

    /// Both decoders over a decoder input sequence (`<bos>` first).
    pub fn decode(&self, pair: &EncodedPair, inputs: &TokenSequence) -> Result<FusedFeatures, ModelError> {
        let (mut g, p) = self.frozen_graph()?;
        let enc = self.encoded_constants(&mut g, pair)?;
        let (w, m) = self.decode_vars(&mut g, &p, &enc, inputs.ids())?;
        let gate = |d: &DecodedVars| d.gate.and_then(|v| g.value(v).item());
        Ok(FusedFeatures {
            worker: g.value(w.fused).clone(),
            manager: g.value(m.fused).clone(),
            worker_gate: gate(&w),
            manager_gate: gate(&m),
        })
    }

    pub fn generate_goals(
        &self,
        manager_features: &Tensor,
        bounds: &SegmentBoundaries,
        explore: Option<&mut ChaCha8Rng>,
    ) -> Result<GoalSequence, ModelError> {
        let (mut g, p) = self.frozen_graph()?;
        let m = g.constant(manager_features.clone())?;
        let noise = match explore {
            Some(rng) => GoalNoise::Sample(rng),
            None => GoalNoise::Off,
        };
        let (goals, _) = self.goals_vars(&mut g, &p, m, bounds, noise)?;
        Ok(GoalSequence { goals: g.value(goals).clone(), bounds: bounds.clone() })
    }

    pub fn classify(&self, worker_features: &Tensor, goals: &GoalSequence) -> Result<WorkerOutput, ModelError> {
        let (mut g, p) = self.frozen_graph()?;
        let w = g.constant(worker_features.clone())?;
        let gl = g.constant(goals.goals.clone())?;
        let (features, lp) = self.classify_vars(&mut g, &p, w, gl)?;
        Ok(WorkerOutput { log_probs: g.value(lp).clone(), features: g.value(features).clone() })
    }

    /// Teacher-forced prediction for decoder inputs, with critic boundaries
    /// and no exploration.
    pub fn predict(&self, audio: &Tensor, video: &Tensor, inputs: &[TokenId]) -> Result<WorkerOutput, ModelError> {
        let (mut g, p) = self.frozen_graph()?;
        let bounds = self.boundaries_for_inputs(inputs);
        let f = self.forward_vars(&mut g, &p, audio, video, inputs, &bounds, GoalNoise::Off)?;
        Ok(WorkerOutput { log_probs: g.value(f.log_probs).clone(), features: g.value(f.features).clone() })
    }

    /// Argmax decoding from `<bos>` until `<eos>` or `max_len` tokens. The
    /// padding and start markers are never emitted. The returned sequence
    /// includes the final `<eos>` when one was produced.
    pub fn greedy_decode(&self, audio: &Tensor, video: &Tensor, max_len: usize) -> Result<TokenSequence, ModelError> {
        let enc = self.encode(audio, video)?;
        let mut inputs = vec![BOS];
        let mut out = Vec::new();
        while out.len() < max_len {
            let (mut g, p) = self.frozen_graph()?;
            let e = self.encoded_constants(&mut g, &enc)?;
            let (w, m) = self.decode_vars(&mut g, &p, &e, &inputs)?;
            let bounds = self.boundaries_for_inputs(&inputs);
            let (goals, _) = self.goals_vars(&mut g, &p, m.fused, &bounds, GoalNoise::Off)?;
            let (_, lp) = self.classify_vars(&mut g, &p, w.fused, goals)?;
            let row = g.value(lp).row(inputs.len() - 1);
            let mut best = EOS;
            for (id, &v) in row.iter().enumerate() {
                let id = id as TokenId;
                if id != PAD && id != BOS && v > row[best as usize] {
                    best = id;
                }
            }
            out.push(best);
            if best == EOS {
                break;
            }
            inputs.push(best);
        }
        Ok(TokenSequence(out))
    }
}
