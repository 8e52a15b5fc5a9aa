use crate::error::{Error, Result};

/// Predicts every horizon step as the last observed value.
pub fn persistence_predict(y_history: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let last = *y_history.last().ok_or(Error::EmptyHistory)?;
    Ok(vec![last; horizon])
}
