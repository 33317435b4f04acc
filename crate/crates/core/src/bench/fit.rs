use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Least-squares polynomial fit, coefficients lowest degree first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    pub r_squared: f64,
}

impl PolyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Coefficient of the highest power.
    pub fn leading(&self) -> f64 {
        *self.coeffs.last().expect("at least one coefficient")
    }
}

pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit> {
    if xs.len() != ys.len() || xs.len() <= degree {
        return Err(Error::Config(format!(
            "degree-{degree} fit needs more than {degree} points, got {}",
            xs.len()
        )));
    }
    let a = DMatrix::from_fn(xs.len(), degree + 1, |i, j| xs[i].powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let coef = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Config(format!("least squares failed: {e}")))?;
    let fitted = &a * &coef;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = ys.iter().zip(fitted.iter()).map(|(y, f)| (y - f).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(PolyFit {
        coeffs: coef.iter().copied().collect(),
        r_squared,
    })
}
