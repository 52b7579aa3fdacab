//! ΔMETEOR trace of a prediction and the Worker / Manager rewards built on it.

use bmhrl::metrics::{tokenize, MeteorParams};
use bmhrl::rewards::{critic_boundaries, delta_meteor_trace, CriticRule, RewardTrace};

fn main() {
    let reference = tokenize("a man plays guitar and a woman sings");
    let pred = tokenize("a man plays and woman a sings loudly");
    let trace = delta_meteor_trace(&pred, &reference, &MeteorParams::default()).unwrap();
    let bounds = critic_boundaries(&pred, &CriticRule::new(["and"])).unwrap();
    let rewards = RewardTrace::compute(&trace, &bounds, 0.7, 0.8).unwrap();

    println!("segment starts: {:?}", bounds.starts());
    println!("{:>3} {:>8} {:>9} {:>9} {:>9}", "t", "token", "delta", "worker", "manager");
    for (t, tok) in pred.iter().enumerate() {
        println!(
            "{t:>3} {:>8} {:>9.4} {:>9.4} {:>9.4}",
            tok.as_str(),
            trace.deltas[t],
            rewards.worker[t],
            rewards.manager[t]
        );
    }
    println!("sum of deltas {:.6} = full METEOR {:.6}", trace.deltas.iter().sum::<f64>(), trace.full_score);
}
