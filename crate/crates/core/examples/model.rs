//! Runs the encoder, both decoders, the goal generator and the classifier of
//! an untrained model on random features, then greedy-decodes.

use bmhrl::diffcore::Tensor;
use bmhrl::model::{Model, ModelConfig};
use bmhrl::tokens::{TokenSequence, BOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() {
    let cfg = ModelConfig { d_latent: 32, d_ff: 64, d_text: 16, vocab_size: 30, ..ModelConfig::default() };
    let delimiter = 3;
    let model = Model::new(cfg.clone(), vec![delimiter], 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let audio = random(6, cfg.d_audio_in, &mut rng);
    let video = random(4, cfg.d_video_in, &mut rng);

    let pair = model.encode(&audio, &video).unwrap();
    let shape = |t: &Option<Tensor>| t.as_ref().map(|t| t.shape().to_vec());
    println!("V^A {:?}, A^V {:?}", shape(&pair.video_att_audio), shape(&pair.audio_att_video));

    let inputs = TokenSequence(vec![BOS, 10, 11, delimiter, 12]);
    let fused = model.decode(&pair, &inputs).unwrap();
    println!("worker features {:?}, gate σ(k) {:.3}", fused.worker.shape(), fused.worker_gate.unwrap_or(1.0));

    let bounds = model.boundaries_for_inputs(inputs.ids());
    println!("segment starts {:?}", bounds.starts());
    let goals = model.generate_goals(&fused.manager, &bounds, None).unwrap();
    let out = model.classify(&fused.worker, &goals).unwrap();
    println!("log-probs {:?}, goals {:?}", out.log_probs.shape(), goals.goals.shape());

    let caption = model.greedy_decode(&audio, &video, cfg.max_len).unwrap();
    println!("greedy decode of an untrained model: {:?}", caption.ids());
    println!("{} parameter tensors", model.params().names().len());
}
