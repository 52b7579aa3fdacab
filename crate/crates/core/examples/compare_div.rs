//! Per-token standard vs biased divergence for a word swap and a stem
//! variant, written as CSV plus a bar chart.

use bmhrl::harness::{compare_divergence, CompareConfig};

fn main() {
    let out = std::env::temp_dir().join("bmhrl-compare-example");
    for (name, pred) in [("swap", "a man the plays guitar"), ("stem", "a man played the guitars")] {
        let cfg = CompareConfig { gt: "a man plays the guitar".into(), pred: pred.into(), ..CompareConfig::default() };
        let cmp = compare_divergence(&cfg).unwrap();
        println!("{pred:?}");
        for r in &cmp.rows {
            println!(
                "  {} {:>7} / {:<7} R {:+.3} η {:+.3}  standard {:.3}  biased {:.3}",
                r.t, r.gt, r.pred, r.reward, r.eta, r.standard_kl, r.biased_kl
            );
        }
        println!("  normalized: standard {:.4}, biased {:.4}", cmp.standard_total, cmp.biased_total);
        let dir = out.join(name);
        cmp.write_csv(&dir).unwrap();
        cmp.render_plot(&dir.join("divergence.png")).unwrap();
    }
    println!("outputs in {}", out.display());
}
