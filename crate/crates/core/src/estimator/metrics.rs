use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Goodness of fit of an estimate against a reference series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    /// `None` when the reference has zero variance or is empty.
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub n: usize,
}

pub fn compute_metrics(estimate: &[f64], reference: &[f64]) -> Result<FitMetrics> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "estimate has {} values, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric inputs".into()));
    }
    let n = reference.len();
    if n == 0 {
        return Ok(FitMetrics {
            r2: None,
            mae: 0.0,
            rmse: 0.0,
            n,
        });
    }
    let nf = n as f64;
    let mean = reference.iter().sum::<f64>() / nf;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean).powi(2)).sum();
    let ss_res: f64 = estimate.iter().zip(reference).map(|(e, r)| (e - r).powi(2)).sum();
    let mae = estimate.iter().zip(reference).map(|(e, r)| (e - r).abs()).sum::<f64>() / nf;
    Ok(FitMetrics {
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        mae,
        rmse: (ss_res / nf).sqrt(),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_fit() {
        let m = compute_metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(m.r2, Some(1.0));
        assert_eq!(m.mae, 0.0);
    }

    #[test]
    fn mean_estimate_scores_zero() {
        let m = compute_metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.r2, Some(0.0));
        assert!((m.mae - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.rmse - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_reference_has_no_r2() {
        assert_eq!(compute_metrics(&[1.0, 2.0], &[5.0, 5.0]).unwrap().r2, None);
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn r2_ignores_ordering(pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..40), seed in 0u64..1000) {
            let (e, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let mut idx: Vec<usize> = (0..e.len()).collect();
            let n = idx.len();
            for i in 0..n {
                idx.swap(i, (seed as usize * 31 + i * 17) % n);
            }
            let e2: Vec<f64> = idx.iter().map(|&i| e[i]).collect();
            let r2: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
            let a = compute_metrics(&e, &r).unwrap();
            let b = compute_metrics(&e2, &r2).unwrap();
            match (a.r2, b.r2) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9 * x.abs().max(1.0)),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}
