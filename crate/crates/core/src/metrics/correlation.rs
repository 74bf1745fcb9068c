use crate::error::{Error, Result};

/// Ranks starting at 1, ties receiving the mean of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end (0-based) share rank mean(start+1..=end)
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

pub fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Pearson correlation, `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    let n = x.len() as f64;
    if x.is_empty() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub(crate) fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Metrics(format!(
            "length mismatch: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.len() < 3 {
        return Err(Error::Metrics(format!(
            "need at least 3 samples, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::Metrics("non-finite value".into()));
    }
    Ok(())
}

/// Spearman rank correlation with average ranks for ties.
///
/// A constant `pred` yields 0; callers that need to distinguish that case
/// check [`is_constant`] first.
pub fn srcc(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    if is_constant(target) {
        return Err(Error::Metrics("target is constant".into()));
    }
    if is_constant(pred) {
        return Ok(0.0);
    }
    Ok(pearson(&average_ranks(pred), &average_ranks(target)).unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 20.0, 5.0]),
            vec![2.0, 3.5, 3.5, 1.0]
        );
    }

    #[test]
    fn perfect_and_reversed() {
        let p = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = [10.0, 20.0, 30.0, 40.0, 50.0];
        assert_eq!(srcc(&p, &t).unwrap(), 1.0);
        let r: Vec<f64> = p.iter().rev().copied().collect();
        assert_eq!(srcc(&r, &t).unwrap(), -1.0);
    }

    #[test]
    fn tied_example_matches_hand_computation() {
        // ranks of pred: [1, 2.5, 2.5, 4]; target ranks [1,2,3,4]
        // centred: [-1.5,0,0,1.5] and [-1.5,-.5,.5,1.5]; sxy = 4.5, sxx = 4.5, syy = 5
        let v = srcc(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((v - 4.5 / (4.5f64.sqrt() * 5f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn errors_and_degenerate_cases() {
        assert!(srcc(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(srcc(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        assert!(srcc(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).is_err());
        assert_eq!(srcc(&[7.0, 7.0, 7.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }
}
