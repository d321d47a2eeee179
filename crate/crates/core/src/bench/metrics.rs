//! Reconstruction metrics.

use crate::error::{Error, Result};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `‖a − b‖₂`.
pub fn metric_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `10 log10(peak² / MSE)`; `+∞` for identical inputs.
pub fn metric_psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    check_pair(a, b)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::InvalidConfig(format!("psnr peak must be positive, got {peak}")));
    }
    if a.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, actual: 0 });
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_cases() {
        assert_eq!(metric_l2(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((metric_l2(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(metric_l2(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn psnr_cases() {
        assert_eq!(metric_psnr(&[0.5, 0.5], &[0.5, 0.5], 1.0).unwrap(), f64::INFINITY);
        assert!(metric_psnr(&[2.0, 0.0], &[0.0, 2.0], 2.0).unwrap().abs() < 1e-12);
        assert!(metric_psnr(&[1.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(mean(&[1.0, 3.0]), Some(2.0));
    }
}
