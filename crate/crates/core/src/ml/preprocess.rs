use super::MlError;

/// 1 where the value reaches the threshold (inclusive), else 0.
pub fn binarize(column: &[f64], threshold: f64) -> Result<Vec<u8>, MlError> {
    if column.is_empty() {
        return Err(MlError::Invalid("empty column".into()));
    }
    column
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.is_nan() {
                Err(MlError::Invalid(format!("NaN at row {i}")))
            } else {
                Ok(u8::from(v >= threshold))
            }
        })
        .collect()
}

/// Scale to zero mean and unit population standard deviation.
pub fn standardize(column: &[f64]) -> Result<(Vec<f64>, f64, f64), MlError> {
    if column.len() < 2 {
        return Err(MlError::Invalid("standardize needs at least two values".into()));
    }
    if let Some(i) = column.iter().position(|v| !v.is_finite()) {
        return Err(MlError::Invalid(format!("non-finite value at row {i}")));
    }
    let n = column.len() as f64;
    let mean = column.iter().sum::<f64>() / n;
    let std = (column.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return Err(MlError::Degenerate);
    }
    Ok((column.iter().map(|v| (v - mean) / std).collect(), mean, std))
}
