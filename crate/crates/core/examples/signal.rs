//! Label-smoothed and reward-scaled targets for a single timestep, and the
//! sequence losses over a toy model.

use bmhrl::signal::{
    advantage, biased_sequence_loss, kl_divergence, label_smoothed, reward_scaled, standard_sequence_loss, ProbDist,
    SignalConfig,
};

fn main() {
    let cfg = SignalConfig::with_vocab(6);
    let (y, y_hat) = (2, 4);
    let d_ls = label_smoothed(y, &cfg).unwrap();

    let mut model = vec![0.02; 6];
    model[y_hat as usize] = 0.9;
    let model = ProbDist::new(model).unwrap();

    println!("d_LS      {:?}", round(d_ls.probs()));
    for reward in [-0.2, 0.0, 0.1, 0.3] {
        let eta = advantage(reward, 0.0, 5, model.get(y_hat), None);
        let d_rs = reward_scaled(&d_ls, y, y_hat, eta, &cfg).unwrap();
        println!(
            "R={reward:+.1} η={eta:+.3} d_RS {:?}  KL {:.4} (standard {:.4})",
            round(d_rs.probs()),
            kl_divergence(&d_rs, &model).unwrap(),
            kl_divergence(&d_ls, &model).unwrap()
        );
    }

    let dists = vec![model.clone(), model];
    let gt = [y, 1];
    let sampled = [y_hat, 1];
    let biased = biased_sequence_loss(&dists, &gt, &sampled, &[0.3, 0.1], &[0.0, 0.0], &cfg).unwrap();
    let standard = standard_sequence_loss(&dists, &gt, &cfg).unwrap();
    println!("sequence loss: biased {biased:.4}, standard {standard:.4}");
}

fn round(p: &[f64]) -> Vec<f64> {
    p.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
