//! Error metrics shared by the reconstruction and forecasting experiments.

use crate::error::{invalid, Result};

fn residual_ratio(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(invalid(format!(
            "length mismatch: reference {} vs estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    let norm = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(invalid("reference signal has zero norm"));
    }
    let err = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(err / norm)
}

/// Relative l2 error `‖S − S̃‖ / ‖S‖` as a fraction.
pub fn rel_l2(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    residual_ratio(reference, estimate)
}

/// Reconstruction energy `(1 − ‖S − S̃‖ / ‖S‖) · 100`, in percent.
///
/// Not clamped: an estimate further from `S` than the zero signal scores below 0.
pub fn reconstruction_energy(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    Ok((1.0 - residual_ratio(reference, estimate)?) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits() {
        let s = [1.0, -2.0, 3.0];
        assert_eq!(rel_l2(&s, &s).unwrap(), 0.0);
        assert_eq!(reconstruction_energy(&s, &s).unwrap(), 100.0);
        assert_eq!(rel_l2(&s, &[0.0; 3]).unwrap(), 1.0);
        assert_eq!(reconstruction_energy(&s, &[0.0; 3]).unwrap(), 0.0);
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(reconstruction_energy(&s, &doubled).unwrap(), 0.0);
    }

    #[test]
    fn negative_energy_is_not_clamped() {
        let s = [1.0, 1.0];
        assert!((reconstruction_energy(&s, &[-1.0, -1.0]).unwrap() + 100.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_reference() {
        assert!(rel_l2(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(rel_l2(&[1.0], &[1.0, 0.0]).is_err());
    }
}
