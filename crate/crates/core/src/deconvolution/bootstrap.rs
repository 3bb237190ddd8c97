use log::warn;
use rand::Rng;

use super::kernel::{solve_factors, BootstrapBands};
use crate::curvefit::CompressedBlock;
use crate::error::{Error, Result};
use crate::par::map_range;
use crate::seeds::{stream_rng, Stream};

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resample whole stocks with replacement and re-solve each replicate from
/// the per-stock factors. Replicate `r` draws from its own stream of the
/// master seed, so the result does not depend on thread scheduling. A single
/// replicate uses the original sample.
pub fn bootstrap_blocks(
    blocks: &[CompressedBlock],
    horizon: usize,
    replicates: usize,
    seed: u64,
    ridge: Option<f64>,
) -> Result<BootstrapBands> {
    let n = blocks.len();
    if n < 2 {
        return Err(Error::Data(format!("bootstrap needs at least 2 stocks, got {n}")));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be positive".into()));
    }
    let columns = blocks[0].columns();
    let draws = map_range(replicates, |r| {
        let picks: Vec<usize> = if replicates == 1 {
            (0..n).collect()
        } else {
            let mut rng = stream_rng(seed, Stream::Bootstrap, r as u64);
            (0..n).map(|_| rng.random_range(0..n)).collect()
        };
        solve_factors(picks.iter().map(|&i| &blocks[i]), horizon, columns, ridge)
            .ok()
            .map(|k| k.normalized)
            .filter(|v| v.iter().all(|x| x.is_finite()))
    });
    let ok: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let failed = replicates - ok.len();
    if ok.is_empty() {
        return Err(Error::Data("every bootstrap replicate failed to solve".into()));
    }
    if failed > 0 {
        warn!("{failed} of {replicates} bootstrap replicates were singular and skipped");
    }
    let k = horizon + 1;
    let m = ok.len() as f64;
    let (mut mean, mut std, mut p05, mut p95) = (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for t in 0..k {
        let mut col: Vec<f64> = ok.iter().map(|v| v[t]).collect();
        let mu = col.iter().sum::<f64>() / m;
        mean[t] = mu;
        std[t] = if ok.len() > 1 { (col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m - 1.0)).sqrt() } else { 0.0 };
        col.sort_by(f64::total_cmp);
        p05[t] = quantile(&col, 0.05);
        p95[t] = quantile(&col, 0.95);
    }
    Ok(BootstrapBands { replicates, failed, mean, std, p05, p95 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.05) - 1.2).abs() < 1e-12);
        assert!((quantile(&v, 0.95) - 4.8).abs() < 1e-12);
    }
}
