use std::collections::HashMap;

use super::MetricsError;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], k: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= k {
        for window in tokens.windows(k) {
            let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Modified (clipped) k-gram precision as `(clipped matches, hypothesis k-grams)`.
pub fn modified_precision<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R], k: usize) -> (usize, usize) {
    let hyp_counts = ngram_counts(hyp, k);
    let ref_counts = ngram_counts(reference, k);
    let clipped = hyp_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (clipped, hyp.len().saturating_sub(k - 1))
}

/// Single-reference sentence BLEU-n with uniform weights and brevity penalty.
///
/// Any zero k-gram precision (including a hypothesis shorter than k) yields 0.
pub fn bleu_n<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R], n: usize) -> Result<f64, MetricsError> {
    if !(1..=4).contains(&n) {
        return Err(MetricsError::BleuOrder(n));
    }
    if hyp.is_empty() || reference.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 1..=n {
        let (matched, total) = modified_precision(hyp, reference, k);
        if matched == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let bp = if hyp.len() < reference.len() {
        (1.0 - reference.len() as f64 / hyp.len() as f64).exp()
    } else {
        1.0
    };
    Ok(bp * (log_sum / n as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_match_is_one() {
        let s = ["a", "man", "plays", "a", "guitar"];
        for n in 1..=4 {
            assert!((bleu_n(&s, &s, n).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_unigrams_zero() {
        assert_eq!(bleu_n(&["x", "y"], &["a", "b"], 1).unwrap(), 0.0);
    }

    #[test]
    fn bigram_example() {
        let v = bleu_n(&["a", "b", "c"], &["a", "b", "d"], 2).unwrap();
        assert!((v - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn clipping_and_brevity() {
        // "the the the" vs "the cat": clipped unigram precision 1/3.
        assert_eq!(modified_precision(&["the", "the", "the"], &["the", "cat"], 1), (1, 3));
        // Short hypothesis: p1 = 1, BP = exp(1 - 4/2).
        let v = bleu_n(&["a", "b"], &["a", "b", "c", "d"], 1).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn order_out_of_range() {
        assert!(matches!(bleu_n(&["a"], &["a"], 0), Err(MetricsError::BleuOrder(0))));
        assert!(bleu_n(&["a"], &["a"], 5).is_err());
    }
}
