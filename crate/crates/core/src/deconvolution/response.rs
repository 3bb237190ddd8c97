use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowstats::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFunction {
    /// `R(tau)` for `tau = 0..=max_lag`.
    pub values: Vec<f64>,
    /// `R(tau) / R(0)`.
    pub normalized: Vec<f64>,
}

/// Bare response: running sum over lags of the pooled mean of
/// `residual(t + lag) * flow(t)`, with no correction for flow autocorrelation.
pub fn response_function(flows: &Grid, residual: &Grid, max_lag: usize) -> Result<ResponseFunction> {
    let n_days = flows.first().map_or(0, Vec::len);
    if max_lag >= n_days {
        return Err(Error::InvalidArgument(format!("max_lag {max_lag} beyond {n_days} days")));
    }
    if flows.iter().flatten().flatten().all(|f| *f == 0.0) {
        return Err(Error::Data("flow has zero variance; response is undefined".into()));
    }
    let mut values = Vec::with_capacity(max_lag + 1);
    let mut acc = 0.0;
    for lag in 0..=max_lag {
        let (mut sum, mut n) = (0.0, 0usize);
        for (f, r) in flows.iter().zip(residual) {
            for t in 0..n_days - lag {
                if let (Some(x), Some(y)) = (f[t], r[t + lag]) {
                    sum += x * y;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::Data(format!("no flow/return pairs at lag {lag}")));
        }
        acc += sum / n as f64;
        values.push(acc);
    }
    if values[0] == 0.0 {
        return Err(Error::Data("R(0) is zero; cannot normalize".into()));
    }
    let r0 = values[0];
    Ok(ResponseFunction { normalized: values.iter().map(|v| v / r0).collect(), values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_response() {
        let f: Grid = vec![vec![Some(1.0), Some(-1.0), Some(1.0)]];
        let r: Grid = vec![vec![Some(2.0), Some(-1.0), Some(0.5)]];
        let out = response_function(&f, &r, 1).unwrap();
        // lag 0: (2 + 1 + 0.5) / 3; lag 1: (-1 - 0.5) / 2
        assert!((out.values[0] - 3.5 / 3.0).abs() < 1e-15);
        assert!((out.values[1] - (3.5 / 3.0 - 0.75)).abs() < 1e-15);
        assert_eq!(out.normalized[0], 1.0);
    }

    #[test]
    fn zero_flow_and_long_lag_rejected() {
        let f: Grid = vec![vec![Some(0.0); 5]];
        let r: Grid = vec![vec![Some(1.0); 5]];
        assert!(response_function(&f, &r, 2).is_err());
        let f: Grid = vec![vec![Some(1.0); 5]];
        assert!(response_function(&f, &r, 5).is_err());
    }
}
