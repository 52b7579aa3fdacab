//! Warm-starts a small model on the noise-free grammar, fine-tunes it with the
//! Manager/Worker steps, and prints a few greedy decodes.
//!
//! Pass an output directory as the first argument (defaults to a temp dir).

use bmhrl::diffcore::OptimizerKind;
use bmhrl::harness::{gen_dataset, run_training_on, ExperimentConfig};
use bmhrl::model::ModelConfig;

fn main() {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("bmhrl-train-example"));
    let mut cfg = ExperimentConfig { seed: 1, output_dir: out, ..Default::default() };
    cfg.grammar.n_samples = 600;
    cfg.model = ModelConfig { d_latent: 32, d_ff: 64, d_text: 16, encoder_layers: 1, decoder_layers: 1, d_goal: 8, ..Default::default() };
    cfg.optimizer.kind = OptimizerKind::Adam;
    cfg.optimizer.learning_rate = 0.003;
    cfg.training.warmstart_epochs = 4;
    cfg.training.hrl_epochs = 2;
    cfg.training.hrl_learning_rate = Some(0.0005);

    let data = gen_dataset(&cfg.grammar, cfg.seed).unwrap();
    let outcome = run_training_on(&cfg, &data, None, |r| {
        println!(
            "epoch {} {:<9} loss {:.4} val acc {:.3} meteor {:.2} bleu4 {:.2}",
            r.epoch,
            r.phase.name(),
            r.train_loss,
            r.token_accuracy,
            r.meteor,
            r.bleu4
        );
    })
    .unwrap();

    let (_, val) = data.split(cfg.training.val_fraction, cfg.seed);
    for &i in val.iter().take(3) {
        let s = &data.samples[i];
        let hyp = outcome.model.greedy_decode(&s.audio, &s.video, cfg.model.max_len).unwrap();
        println!("ref {:<32} hyp {}", data.vocab.render(&s.caption), data.vocab.render(&hyp.content()));
    }
    println!("log written to {}", outcome.log_path.display());
}
