use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KappaError {
    #[error("rating matrix is empty")]
    Empty,
    #[error("rating matrix shape error: {0}")]
    Shape(String),
    #[error("expected agreement is 1 (all ratings in one category); kappa is undefined")]
    Degenerate,
}

/// Fleiss' kappa for `counts[item][category]` = number of raters who put
/// the item in that category. Every item must have the same number of
/// raters, at least two.
pub fn fleiss_kappa(counts: &[Vec<u32>]) -> Result<f64, KappaError> {
    let first = counts.first().ok_or(KappaError::Empty)?;
    let k = first.len();
    if k == 0 {
        return Err(KappaError::Shape("no categories".into()));
    }
    let raters: u64 = first.iter().map(|&c| u64::from(c)).sum();
    if raters < 2 {
        return Err(KappaError::Shape(format!("{raters} rater(s) per item; need at least 2")));
    }
    for (i, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(KappaError::Shape(format!(
                "item {i} has {} categories, expected {k}",
                row.len()
            )));
        }
        let total: u64 = row.iter().map(|&c| u64::from(c)).sum();
        if total != raters {
            return Err(KappaError::Shape(format!(
                "item {i} has {total} ratings, expected {raters}"
            )));
        }
    }
    let n_items = counts.len() as f64;
    let n = raters as f64;

    let mut category_totals = vec![0.0f64; k];
    let mut p_bar = 0.0;
    for row in counts {
        let mut sq = 0.0;
        for (j, &c) in row.iter().enumerate() {
            let c = f64::from(c);
            category_totals[j] += c;
            sq += c * c;
        }
        p_bar += (sq - n) / (n * (n - 1.0));
    }
    p_bar /= n_items;
    let p_e: f64 = category_totals
        .iter()
        .map(|t| {
            let p = t / (n_items * n);
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(KappaError::Degenerate);
    }
    Ok(((p_bar - p_e) / (1.0 - p_e)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_agreement() {
        let m = vec![vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3], vec![3, 0, 0]];
        assert_eq!(fleiss_kappa(&m), Ok(1.0));
    }

    #[test]
    fn hand_computed_two_by_two() {
        // item1: both A, item2: one A one B
        // P1 = 1, P2 = 0 -> P̄ = 1/2; p_A = 3/4, p_B = 1/4 -> P̄e = 10/16
        // κ = (1/2 - 5/8) / (3/8) = -1/3
        let k = fleiss_kappa(&[vec![2, 0], vec![1, 1]]).unwrap();
        assert!((k - (-1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_single_category() {
        assert_eq!(fleiss_kappa(&[vec![2, 0], vec![2, 0]]), Err(KappaError::Degenerate));
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(fleiss_kappa(&[vec![2, 0], vec![1, 0]]), Err(KappaError::Shape(_))));
        assert!(matches!(fleiss_kappa(&[vec![1, 0]]), Err(KappaError::Shape(_))));
        assert!(matches!(fleiss_kappa(&[vec![2, 0], vec![2]]), Err(KappaError::Shape(_))));
        assert_eq!(fleiss_kappa(&[]), Err(KappaError::Empty));
    }
}
