use std::collections::HashMap;

use crate::error::{Error, Result};

/// Fraction of positions where `predicted` differs from `truth`.
pub fn classification_error(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidInput("no test documents".into()));
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

pub fn classification_accuracy(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    Ok(1.0 - classification_error(predicted, truth)?)
}

/// Sums after sorting, so the value depends only on the multiset of terms.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    sorted_sum(
        counts
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .collect(),
    )
}

/// Normalized mutual information `I(a;b) / sqrt(H(a)·H(b))`. Two constant
/// labelings score 1; exactly one constant labeling scores 0.
pub fn nmi(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("empty labelings".into()));
    }
    let n = a.len() as f64;
    let mut ca: HashMap<u32, usize> = HashMap::new();
    let mut cb: HashMap<u32, usize> = HashMap::new();
    let mut joint: HashMap<(u32, u32), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ca.len() == 1 && cb.len() == 1 {
        return Ok(1.0);
    }
    if ca.len() == 1 || cb.len() == 1 {
        return Ok(0.0);
    }
    let mi = sorted_sum(
        joint
            .iter()
            .map(|(&(x, y), &c)| {
                let pxy = c as f64 / n;
                let px = ca[&x] as f64 / n;
                let py = cb[&y] as f64 / n;
                pxy * (pxy / (px * py)).ln()
            })
            .collect(),
    );
    let (lo, hi) = if ha <= hb { (ha, hb) } else { (hb, ha) };
    Ok((mi / (lo * hi).sqrt()).clamp(0.0, 1.0))
}
