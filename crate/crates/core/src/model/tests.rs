use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::{gradient_check_with, GradCheckOptions, Graph, Optimizer, OptimizerConfig, OptimizerKind, Tensor};
use crate::metrics::MeteorParams;
use crate::rewards::SegmentBoundaries;
use crate::signal::{Baseline, SignalConfig};
use crate::tokens::{TokenId, TokenSequence, Vocab, EOS};

fn small(modality: Modality) -> ModelConfig {
    ModelConfig {
        d_latent: 8,
        d_audio_in: 3,
        d_video_in: 4,
        d_text: 5,
        d_ff: 12,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 2,
        d_goal: 4,
        vocab_size: 12,
        max_len: 8,
        sigma_rel: 0.1,
        modality,
        positional_encoding: true,
    }
}

fn vocab() -> Vocab {
    Vocab::new(["and", "a", "b", "c", "d", "e", "f", "g", "h"])
}

fn features(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn model(modality: Modality) -> Model {
    Model::new(small(modality), vec![3], 7).unwrap()
}

fn caption(ids: &[TokenId]) -> TokenSequence {
    TokenSequence(ids.to_vec())
}

#[test]
fn encoder_output_shapes() {
    let m = model(Modality::Bimodal);
    let pair = m.encode(&features(5, 3, 1), &features(4, 4, 2)).unwrap();
    assert_eq!(pair.video_att_audio.as_ref().unwrap().shape(), &[4, 8]);
    assert_eq!(pair.audio_att_video.as_ref().unwrap().shape(), &[5, 8]);
    let single = m.encode(&features(1, 3, 1), &features(1, 4, 2)).unwrap();
    assert!(single.video_att_audio.unwrap().is_finite());
    assert!(m.encode(&features(5, 2, 1), &features(4, 4, 2)).is_err());
}

#[test]
fn encoder_equivariance_needs_no_positional_encoding() {
    let permute = |t: &Tensor| {
        let rows: Vec<Vec<f64>> = [2, 0, 1].iter().map(|&r| t.row(r).to_vec()).collect();
        Tensor::from_rows(&rows).unwrap()
    };
    let (a, v) = (features(3, 3, 5), features(3, 4, 6));
    for positional in [false, true] {
        let cfg = ModelConfig { positional_encoding: positional, ..small(Modality::Bimodal) };
        let m = Model::new(cfg, vec![3], 1).unwrap();
        let base = m.encode(&a, &v).unwrap().audio_att_video.unwrap();
        let perm = m.encode(&permute(&a), &permute(&v)).unwrap().audio_att_video.unwrap();
        let diff = permute(&base).data().iter().zip(perm.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if positional {
            assert!(diff > 1e-6);
        } else {
            assert!(diff < 1e-12);
        }
    }
}

fn fused_and_streams(m: &Model, inputs: &[TokenId]) -> (Tensor, Vec<Tensor>, f64) {
    let mut g = Graph::new();
    let p = m.bind(&mut g, |_| false).unwrap();
    let enc = m.encode_vars(&mut g, &p, &features(3, 3, 1), &features(2, 4, 2)).unwrap();
    let (w, _) = m.decode_vars(&mut g, &p, &enc, inputs).unwrap();
    let gate = g.value(w.gate.unwrap()).item().unwrap();
    (g.value(w.fused).clone(), w.streams.iter().map(|s| g.value(*s).clone()).collect(), gate)
}

#[test]
fn fusion_gate_is_convex() {
    let mut m = model(Modality::Bimodal);
    let inputs = [1, 4, 5, 3, 6];
    let (fused, streams, gate) = fused_and_streams(&m, &inputs);
    assert_eq!(gate, 0.5);
    for i in 0..fused.len() {
        let mid = 0.5 * (streams[0].data()[i] + streams[1].data()[i]);
        assert!((fused.data()[i] - mid).abs() < 1e-12);
    }
    for (k, which) in [(40.0, 0), (-40.0, 1)] {
        m.params_mut().get_mut("worker.gate_k").unwrap().data_mut()[0] = k;
        let (fused, streams, _) = fused_and_streams(&m, &inputs);
        for i in 0..fused.len() {
            assert!((fused.data()[i] - streams[which].data()[i]).abs() < 1e-12);
        }
    }
    m.params_mut().get_mut("worker.gate_k").unwrap().data_mut()[0] = 1.3;
    let (fused, streams, _) = fused_and_streams(&m, &inputs);
    for i in 0..fused.len() {
        let (lo, hi) = (streams[0].data()[i].min(streams[1].data()[i]), streams[0].data()[i].max(streams[1].data()[i]));
        assert!(fused.data()[i] >= lo - 1e-12 && fused.data()[i] <= hi + 1e-12);
    }
}

#[test]
fn decoder_and_prediction_are_causal() {
    let m = model(Modality::Bimodal);
    let (a, v) = (features(3, 3, 1), features(2, 4, 2));
    let base = m.predict(&a, &v, &[1, 4, 5, 3, 6, 7]).unwrap();
    let pair = m.encode(&a, &v).unwrap();
    let fa = m.decode(&pair, &caption(&[1, 4, 5, 3, 6, 7])).unwrap();
    for t in 1..6 {
        let mut changed = vec![1, 4, 5, 3, 6, 7];
        changed[t] = 8;
        let other = m.predict(&a, &v, &changed).unwrap();
        let fb = m.decode(&pair, &caption(&changed)).unwrap();
        for r in 0..t {
            assert_eq!(base.log_probs.row(r), other.log_probs.row(r), "position {t} leaked into row {r}");
            assert_eq!(fa.worker.row(r), fb.worker.row(r));
            assert_eq!(fa.manager.row(r), fb.manager.row(r));
        }
    }
}

#[test]
fn goals_follow_segments() {
    let m = model(Modality::Bimodal);
    let feats = features(4, 8, 3);
    let one = SegmentBoundaries::single();
    let gs = m.generate_goals(&feats, &one, None).unwrap();
    for r in 1..4 {
        assert_eq!(gs.goals.row(r), gs.goals.row(0));
    }
    assert_eq!(m.generate_goals(&feats, &one, None).unwrap(), gs);

    let two = SegmentBoundaries::new(vec![0, 2], 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noisy = m.generate_goals(&feats, &two, Some(&mut rng)).unwrap();
    let clean = m.generate_goals(&feats, &two, None).unwrap();
    assert_ne!(noisy.goals, clean.goals);
    assert_eq!(noisy.goals.row(0), noisy.goals.row(1));
    assert_eq!(noisy.goals.row(2), noisy.goals.row(3));
    assert_ne!(noisy.goals.row(1), noisy.goals.row(2));

    let mut quiet_cfg = small(Modality::Bimodal);
    quiet_cfg.sigma_rel = 0.0;
    let quiet = Model::new(quiet_cfg, vec![3], 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(quiet.generate_goals(&feats, &two, Some(&mut rng)).unwrap(), clean);
}

#[test]
fn classifier_width_and_normalization() {
    let m = model(Modality::Bimodal);
    let feats = features(5, 8, 4);
    let goals = m.generate_goals(&feats, &SegmentBoundaries::new(vec![0, 3], 5).unwrap(), None).unwrap();
    let out = m.classify(&feats, &goals).unwrap();
    assert_eq!(out.features.shape(), &[5, 12]);
    assert_eq!(out.log_probs.shape(), &[5, 12]);
    for r in 0..5 {
        let s: f64 = out.log_probs.row(r).iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert!(m.classify(&features(4, 8, 4), &goals).is_err());
}

#[test]
fn greedy_decode_is_deterministic_and_bounded() {
    for modality in [Modality::Bimodal, Modality::AudioOnly, Modality::VisionOnly] {
        let m = model(modality);
        let (a, v) = (features(3, 3, 1), features(2, 4, 2));
        let x = m.greedy_decode(&a, &v, 6).unwrap();
        assert!(x.len() <= 6 && !x.is_empty());
        assert_eq!(x, m.greedy_decode(&a, &v, 6).unwrap());
    }
}

#[test]
fn boundaries_from_inputs() {
    let m = model(Modality::Bimodal);
    let prep = m.prepare(&caption(&[4, 5, 3, 6]));
    assert_eq!(prep.inputs, vec![1, 4, 5, 3, 6]);
    assert_eq!(prep.targets, vec![4, 5, 3, 6, EOS]);
    assert_eq!(prep.bounds.starts(), &[0, 3]);
}

struct Fixture {
    audio: Vec<Tensor>,
    video: Vec<Tensor>,
    captions: Vec<TokenSequence>,
}

impl Fixture {
    fn new(n: usize) -> Self {
        let captions = [[4, 5, 3, 6], [7, 5, 3, 8], [4, 9, 3, 10], [11, 5, 3, 6]];
        Fixture {
            audio: (0..n).map(|i| features(3, 3, 10 + i as u64)).collect(),
            video: (0..n).map(|i| features(2, 4, 20 + i as u64)).collect(),
            captions: (0..n).map(|i| caption(&captions[i % 4])).collect(),
        }
    }

    fn batch(&self) -> Vec<BatchItem<'_>> {
        (0..self.audio.len())
            .map(|i| BatchItem { audio: &self.audio[i], video: &self.video[i], caption: &self.captions[i] })
            .collect()
    }
}

fn adam(lr: f64) -> Optimizer {
    Optimizer::new(OptimizerConfig { kind: OptimizerKind::Adam, learning_rate: lr, ..Default::default() }).unwrap()
}

#[test]
fn warmstart_memorizes_and_reaches_all_parameters() {
    let mut m = model(Modality::Bimodal);
    let fx = Fixture::new(4);
    let batch = fx.batch();
    let signal = SignalConfig::with_vocab(12);

    let mut g = Graph::new();
    let p = m.bind(&mut g, |_| true).unwrap();
    let (loss, _, _) = warmstart_loss(&m, &mut g, &p, &batch, &signal).unwrap();
    g.backward(loss).unwrap();
    for (name, v) in m.params().names().iter().zip(&p) {
        let grad = g.grad(*v).unwrap_or(&[]);
        assert!(grad.iter().any(|x| *x != 0.0), "{name} received no gradient");
    }

    let mut opt = adam(0.01);
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let r = warmstart_step(&mut m, &mut opt, &batch, &signal).unwrap();
        assert!(r.loss < prev, "{} !< {prev}", r.loss);
        prev = r.loss;
    }
}

#[test]
fn sampled_ground_truth_reduces_to_supervised_loss() {
    let m = model(Modality::Bimodal);
    let fx = Fixture::new(2);
    let batch = fx.batch();
    let signal = SignalConfig::with_vocab(12);
    let v = vocab();
    let settings = RlSettings { vocab: &v, signal: &signal, meteor: &MeteorParams::default(), gamma: 0.7, objective: Objective::Biased };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut frozen = rl_targets(&m, &batch, &settings, &Baseline::new(8, 0.0), Role::Worker, &mut rng).unwrap();
    // Replace the sampled tokens by the ground truth: targets collapse to d_LS.
    for st in &mut frozen {
        for (t, &y) in st.prepared.targets.iter().enumerate() {
            let ls = crate::signal::label_smoothed(y, &signal).unwrap();
            st.targets[t * 12..(t + 1) * 12].copy_from_slice(ls.probs());
        }
        st.sampled = st.prepared.targets.clone();
    }
    let mut g = Graph::new();
    let p = m.bind(&mut g, |_| false).unwrap();
    let (rl, _) = rl_loss(&m, &mut g, &p, &batch, &frozen).unwrap();
    let (ws, _, _) = warmstart_loss(&m, &mut g, &p, &batch, &signal).unwrap();
    assert_eq!(g.value(rl).item(), g.value(ws).item());
}

fn rl_gradcheck(role: Role) {
    let m = model(Modality::Bimodal);
    let fx = Fixture::new(2);
    let batch = fx.batch();
    let signal = SignalConfig::with_vocab(12);
    let v = vocab();
    let settings = RlSettings { vocab: &v, signal: &signal, meteor: &MeteorParams::default(), gamma: 0.8, objective: Objective::Biased };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let frozen = rl_targets(&m, &batch, &settings, &Baseline::new(8, 0.0), role, &mut rng).unwrap();
    let leaves: Vec<Tensor> = m
        .params()
        .tensors()
        .iter()
        .zip(m.params().groups())
        .filter(|(_, g)| role.trains(**g))
        .map(|(t, _)| Tensor::new(t.shape().to_vec(), t.data().to_vec()).unwrap())
        .collect();
    let groups = m.params().groups().to_vec();
    let all: Vec<Tensor> = m.params().tensors().to_vec();
    let opts = GradCheckOptions { sample: Some((80, 5)), ..GradCheckOptions::default() };
    let report = gradient_check_with(
        |g, vars| {
            let mut it = vars.iter();
            let mut p = Vec::with_capacity(all.len());
            for (t, grp) in all.iter().zip(&groups) {
                p.push(if role.trains(*grp) { *it.next().unwrap() } else { g.constant(t.clone())? });
            }
            rl_loss(&m, g, &p, &batch, &frozen).map(|(l, _)| l).map_err(|e| match e {
                ModelError::Diff(d) => d,
                other => panic!("{other}"),
            })
        },
        &leaves,
        &opts,
    );
    assert!(report.passed(), "{role:?}: max rel error {}", report.max_rel_error());
}

#[test]
fn worker_loss_gradients_match_finite_differences() {
    rl_gradcheck(Role::Worker);
}

#[test]
fn manager_loss_gradients_match_finite_differences() {
    rl_gradcheck(Role::Manager);
}

#[test]
fn rl_steps_respect_freeze_contracts() {
    let fx = Fixture::new(2);
    let batch = fx.batch();
    let signal = SignalConfig::with_vocab(12);
    let v = vocab();
    let meteor = MeteorParams::default();
    for role in [Role::Worker, Role::Manager] {
        let mut m = model(Modality::Bimodal);
        let before = m.params().clone();
        let mut opt = adam(0.01);
        let mut base = Baseline::new(8, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let settings = RlSettings { vocab: &v, signal: &signal, meteor: &meteor, gamma: 0.7, objective: Objective::Biased };
        for _ in 0..3 {
            let r = match role {
                Role::Worker => train_worker_step(&mut m, &mut opt, &mut base, &batch, &settings, &mut rng),
                Role::Manager => train_manager_step(&mut m, &mut opt, &mut base, &batch, &settings, &mut rng),
            }
            .unwrap();
            assert!(r.loss.is_finite());
        }
        let mut moved = false;
        for ((a, b), grp) in before.tensors().iter().zip(m.params().tensors()).zip(before.groups()) {
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            if role.trains(*grp) {
                moved |= !same;
            } else {
                assert!(same, "{role:?} step changed a frozen {grp:?} parameter");
            }
        }
        assert!(moved);
    }
}

#[test]
fn single_segment_manager_reward_is_full_score() {
    use crate::rewards::{delta_meteor_trace, manager_rewards};
    let pred = ["a", "b", "c"];
    let trace = delta_meteor_trace(&pred, &["a", "c", "b"], &MeteorParams::default()).unwrap();
    for gamma in [0.0, 0.5, 1.0] {
        let r = manager_rewards(&trace, &SegmentBoundaries::single(), gamma).unwrap();
        assert!((r[0] - trace.full_score).abs() < 1e-12);
    }
}
