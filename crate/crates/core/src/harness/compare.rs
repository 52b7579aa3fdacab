use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::metrics::{align, tokenize, MatchKind, MeteorParams};
use crate::rewards::{delta_meteor_trace, worker_rewards};
use crate::signal::{biased_targets, kl_divergence, label_smoothed, ProbDist, SignalConfig};
use crate::tokens::{TokenId, Vocab, PAD};

/// Inputs for one ground-truth / prediction comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub gt: String,
    pub pred: String,
    /// Mass the synthetic model puts on each predicted token.
    pub peak: f64,
    pub gamma_worker: f64,
    pub signal: SignalConfig,
    pub meteor: MeteorParams,
    pub plot: bool,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            gt: String::new(),
            pred: String::new(),
            peak: 0.9,
            gamma_worker: 0.7,
            signal: SignalConfig::default(),
            meteor: MeteorParams::default(),
            plot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub t: usize,
    pub gt: String,
    pub pred: String,
    pub reward: f64,
    pub eta: f64,
    pub standard_kl: f64,
    pub biased_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenPair {
    pub gt_index: usize,
    pub pred_index: usize,
    pub gt: String,
    pub pred: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<TokenRow>,
    /// Mean per-token KLs over the compared timesteps.
    pub standard_total: f64,
    pub biased_total: f64,
    pub pairs: Vec<TokenPair>,
}

/// Per-token standard and biased KL for a synthetic model that puts `peak`
/// on each predicted token and spreads the rest uniformly. Timesteps run
/// over the prediction; positions past the end of the ground truth carry no
/// target and are skipped.
pub fn compare_divergence(cfg: &CompareConfig) -> Result<Comparison, HarnessError> {
    let gt = tokenize(&cfg.gt);
    let pred = tokenize(&cfg.pred);
    if gt.is_empty() || pred.is_empty() {
        return Err(HarnessError::Data("ground truth and prediction must both have tokens".into()));
    }
    if !(cfg.peak > 0.0 && cfg.peak < 1.0) {
        return Err(HarnessError::Config(format!("peak {} not in (0, 1)", cfg.peak)));
    }
    let vocab = Vocab::new(gt.iter().chain(&pred).map(|t| t.as_str().to_string()));
    let v = cfg.signal.vocab_size.max(vocab.len());
    let signal = SignalConfig { vocab_size: v, ..cfg.signal.clone() };
    let id = |s: &str| vocab.id(s).expect("token in vocabulary");
    let gt_ids: Vec<TokenId> = (0..pred.len()).map(|t| gt.get(t).map_or(PAD, |g| id(g.as_str()))).collect();
    let pred_ids: Vec<TokenId> = pred.iter().map(|p| id(p.as_str())).collect();

    let off = (1.0 - cfg.peak) / (v - 1) as f64;
    let dists: Vec<ProbDist> = pred_ids
        .iter()
        .map(|&p| {
            let mut probs = vec![off; v];
            probs[p as usize] = cfg.peak;
            ProbDist::new(probs)
        })
        .collect::<Result<_, _>>()?;

    let trace = delta_meteor_trace(&pred, &gt, &cfg.meteor)?;
    let rewards = worker_rewards(&trace, cfg.gamma_worker)?;
    let mut cfg_len = signal.clone();
    // The advantage scale is the ground-truth length even when the
    // prediction is longer.
    cfg_len.length_scale = Some(cfg_len.length_scale.unwrap_or(gt.len()));
    let steps = biased_targets(&dists, &gt_ids, &pred_ids, &rewards, &vec![0.0; pred.len()], &cfg_len)?;

    let mut rows = Vec::with_capacity(steps.len());
    for s in &steps {
        let t = s.timestep;
        let standard = kl_divergence(&label_smoothed(gt_ids[t], &signal)?, &dists[t])?;
        let biased = kl_divergence(&s.target, &dists[t])?;
        rows.push(TokenRow {
            t,
            gt: gt[t].to_string(),
            pred: pred[t].to_string(),
            reward: rewards[t],
            eta: s.eta,
            standard_kl: standard,
            biased_kl: biased,
        });
    }
    let n = rows.len().max(1) as f64;
    let standard_total = rows.iter().map(|r| r.standard_kl).sum::<f64>() / n;
    let biased_total = rows.iter().map(|r| r.biased_kl).sum::<f64>() / n;

    let alignment = align(&pred, &gt, &cfg.meteor);
    let pairs = alignment
        .pairs
        .iter()
        .map(|p| TokenPair {
            gt_index: p.reference,
            pred_index: p.hyp,
            gt: gt[p.reference].to_string(),
            pred: pred[p.hyp].to_string(),
            kind: match p.kind {
                MatchKind::Exact => "exact",
                MatchKind::Stem => "stem",
            }
            .to_string(),
        })
        .collect();
    Ok(Comparison { rows, standard_total, biased_total, pairs })
}

impl Comparison {
    /// Writes `tokens.csv`, `pairs.csv` and `summary.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("tokens.csv"))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("pairs.csv"))?;
        for p in &self.pairs {
            w.serialize(p)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["standard_total", "biased_total"])?;
        w.write_record([self.standard_total.to_string(), self.biased_total.to_string()])?;
        w.flush()?;
        Ok(())
    }

    /// Bar chart of per-token divergences: standard in grey, biased in blue.
    pub fn render_plot(&self, path: &Path) -> Result<(), HarnessError> {
        let (bar, gap, height, margin) = (18u32, 14u32, 240u32, 10u32);
        let n = self.rows.len().max(1) as u32;
        let width = margin * 2 + n * (2 * bar + gap);
        let mut img = RgbImage::from_pixel(width, height + 2 * margin, Rgb([255, 255, 255]));
        let max = self.rows.iter().map(|r| r.standard_kl.max(r.biased_kl)).fold(1e-12, f64::max);
        let mut fill = |x0: u32, h: u32, color: Rgb<u8>| {
            for x in x0..x0 + bar {
                for y in (margin + height - h)..(margin + height) {
                    img.put_pixel(x, y, color);
                }
            }
        };
        for (i, r) in self.rows.iter().enumerate() {
            let x = margin + i as u32 * (2 * bar + gap);
            let h = |v: f64| ((v / max) * height as f64).round().clamp(0.0, height as f64) as u32;
            fill(x, h(r.standard_kl), Rgb([150, 150, 150]));
            fill(x + bar, h(r.biased_kl), Rgb([40, 90, 200]));
        }
        for x in 0..width {
            img.put_pixel(x, margin + height - 1, Rgb([0, 0, 0]));
        }
        img.save(path).map_err(|e| HarnessError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmp(gt: &str, pred: &str) -> Comparison {
        compare_divergence(&CompareConfig { gt: gt.into(), pred: pred.into(), ..Default::default() }).unwrap()
    }

    #[test]
    fn identical_prediction_has_equal_totals() {
        let c = cmp("a man is playing a guitar", "a man is playing a guitar");
        assert_eq!(c.standard_total, c.biased_total);
        assert_eq!(c.pairs.len(), 6);
    }

    #[test]
    fn adjacent_swap_lowers_biased_divergence() {
        let c = cmp("a man is playing a guitar", "a man is playing guitar a");
        assert!(c.biased_total < c.standard_total, "{} vs {}", c.biased_total, c.standard_total);
    }

    #[test]
    fn shared_stems_lower_biased_divergence() {
        let c = cmp("the dog runs in the park", "the dogs running in the park");
        assert!(c.pairs.iter().any(|p| p.kind == "stem"));
        assert!(c.biased_total < c.standard_total);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(compare_divergence(&CompareConfig { gt: "  ".into(), pred: "a".into(), ..Default::default() }).is_err());
    }

    #[test]
    fn writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let c = cmp("a b c", "a c b");
        c.write_csv(dir.path()).unwrap();
        c.render_plot(&dir.path().join("plot.png")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("tokens.csv")).unwrap();
        assert!(text.starts_with("t,gt,pred,reward,eta,standard_kl,biased_kl"));
        assert!(dir.path().join("plot.png").exists());
    }
}
