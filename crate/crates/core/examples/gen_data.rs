//! Generates the two-clause synthetic grammar and prints a few samples.

use bmhrl::harness::{gen_dataset, GrammarConfig};

fn main() {
    let cfg = GrammarConfig { n_samples: 200, jitter: 0.3, ..GrammarConfig::default() };
    let data = gen_dataset(&cfg, 7).unwrap();
    println!(
        "{} samples, vocab {}, audio dim {}, video dim {}",
        data.samples.len(),
        data.vocab.len(),
        data.d_audio,
        data.d_video
    );
    for s in data.samples.iter().take(5) {
        println!(
            "video class {} audio class {} -> {:<32} segments start at {:?}",
            s.video_class,
            s.audio_class,
            data.vocab.render(&s.caption),
            s.boundaries.starts()
        );
    }
    let (train, val) = data.split(0.2, 7);
    println!("split: {} train / {} val", train.len(), val.len());

    let mut bytes = Vec::new();
    data.write(&mut bytes).unwrap();
    println!("serialized size {} bytes", bytes.len());
}
