use super::align::{align, Alignment};
use super::{MeteorParams, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeteorScore {
    pub value: f64,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
}

impl MeteorParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = (0.0..=1.0).contains(&self.alpha) && self.beta > 0.0 && (0.0..=1.0).contains(&self.gamma);
        if ok {
            Ok(())
        } else {
            Err(MetricsError::InvalidParams { alpha: self.alpha, beta: self.beta, gamma: self.gamma })
        }
    }
}

/// Single-reference METEOR over the exact and stem matching stages.
pub fn meteor_score<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R], params: &MeteorParams) -> MeteorScore {
    if hyp.is_empty() || reference.is_empty() {
        return MeteorScore::default();
    }
    let alignment = align(hyp, reference, params);
    score_from_alignment(&alignment, hyp.len(), reference.len(), params)
}

/// METEOR from an already computed alignment.
pub fn score_from_alignment(alignment: &Alignment, hyp_len: usize, ref_len: usize, params: &MeteorParams) -> MeteorScore {
    if alignment.matches == 0 || hyp_len == 0 || ref_len == 0 {
        return MeteorScore::default();
    }
    let m = alignment.matches as f64;
    let precision = m / hyp_len as f64;
    let recall = m / ref_len as f64;
    let fmean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let penalty = params.gamma * (alignment.chunks as f64 / m).powf(params.beta);
    MeteorScore { value: fmean * (1.0 - penalty), precision, recall, fmean, penalty }
}
