use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{Dataset, HarnessError};
use crate::metrics::{bleu_n, meteor_score, MeteorParams};
use crate::model::Model;
use crate::tokens::{is_special, TokenSequence, Vocab};

/// Corpus means of sentence-level scores, ×100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    /// Distinct non-special tokens emitted across all hypotheses.
    pub vocab_usage: usize,
    /// Teacher-forced argmax accuracy over target tokens (`<eos>` included);
    /// zero when the report was computed from captions alone.
    pub token_accuracy: f64,
    pub samples: usize,
}

/// Scores hypotheses against references (content tokens only).
pub fn evaluate_captions(
    hyps: &[TokenSequence],
    refs: &[TokenSequence],
    vocab: &Vocab,
    meteor: &MeteorParams,
) -> Result<EvalReport, HarnessError> {
    if hyps.len() != refs.len() {
        return Err(HarnessError::Data(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let mut report = EvalReport { samples: hyps.len(), ..Default::default() };
    let mut used = HashSet::new();
    for (h, r) in hyps.iter().zip(refs) {
        let h = h.content();
        used.extend(h.ids().iter().copied().filter(|&t| !is_special(t)));
        let hs = vocab.surfaces(&h);
        let rs = vocab.surfaces(&r.content());
        report.bleu3 += bleu_n(&hs, &rs, 3)?;
        report.bleu4 += bleu_n(&hs, &rs, 4)?;
        report.meteor += meteor_score(&hs, &rs, meteor).value;
    }
    let n = hyps.len().max(1) as f64;
    report.bleu3 *= 100.0 / n;
    report.bleu4 *= 100.0 / n;
    report.meteor *= 100.0 / n;
    report.vocab_usage = used.len();
    Ok(report)
}

/// Greedy-decodes `indices` of the dataset and scores the output. Also
/// measures teacher-forced token accuracy on the same samples.
pub fn evaluate_model(
    model: &Model,
    data: &Dataset,
    indices: &[usize],
    meteor: &MeteorParams,
) -> Result<(EvalReport, Vec<TokenSequence>), HarnessError> {
    let mut hyps = Vec::with_capacity(indices.len());
    let mut refs = Vec::with_capacity(indices.len());
    let (mut tokens, mut correct) = (0usize, 0usize);
    for &i in indices {
        let s = data
            .samples
            .get(i)
            .ok_or_else(|| HarnessError::Data(format!("sample index {i} out of range")))?;
        hyps.push(model.greedy_decode(&s.audio, &s.video, model.config().max_len)?);
        refs.push(s.caption.clone());
        let prep = model.prepare(&s.caption);
        let out = model.predict(&s.audio, &s.video, &prep.inputs)?;
        for (t, &y) in prep.targets.iter().enumerate() {
            let row = out.log_probs.row(t);
            let best = row.iter().enumerate().fold(0, |b, (k, v)| if *v > row[b] { k } else { b });
            tokens += 1;
            correct += usize::from(best == y as usize);
        }
    }
    let mut report = evaluate_captions(&hyps, &refs, &data.vocab, meteor)?;
    report.token_accuracy = if tokens == 0 { 0.0 } else { correct as f64 / tokens as f64 };
    Ok((report, hyps))
}
