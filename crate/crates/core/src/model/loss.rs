/// Lower bound applied to the true-class probability inside the log.
pub const PROB_EPSILON: f64 = 1e-12;

/// `-pos_weight * ln p1` for positives, `-ln p0` for negatives.
pub fn weighted_cross_entropy(probs: [f64; 2], label: u8, pos_weight: f64) -> f64 {
    let p = probs[usize::from(label == 1)].max(PROB_EPSILON);
    let w = if label == 1 { pos_weight } else { 1.0 };
    -w * p.ln()
}
