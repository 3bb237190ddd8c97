//! Linear least squares by Householder QR.
//!
//! Large pooled systems are handled as a tall-skinny QR: each block of rows
//! is reduced to the triangular factor of its augmented matrix `[X | y]`,
//! and the stacked factors are reduced again. The last diagonal entry of the
//! augmented factor is the residual norm, so no residual vector is ever
//! formed. Resampling blocks (bootstrap) only restacks the small factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold on |R_jj| / max |R_kk| below which a column is treated
/// as linearly dependent on the preceding ones.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Coefficient covariance, `s^2 (R^T R)^{-1}`.
    pub covariance: DMatrix<f64>,
    /// Weighted residual sum of squares.
    pub rss: f64,
    pub rows: usize,
    pub dof: usize,
}

/// Triangular summary of a block of rows of `[X | y]`.
#[derive(Debug, Clone)]
pub struct CompressedBlock {
    factor: DMatrix<f64>,
    rows: usize,
}

impl CompressedBlock {
    /// Reduce `design` (n x p) and `response` (n) to a (min(n, p+1)) x (p+1)
    /// upper-trapezoidal factor.
    pub fn new(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<Self> {
        if design.nrows() != response.len() {
            return Err(Error::InvalidArgument(format!(
                "design has {} rows but response has {}",
                design.nrows(),
                response.len()
            )));
        }
        let n = design.nrows();
        let p = design.ncols();
        let mut aug = DMatrix::zeros(n, p + 1);
        aug.view_mut((0, 0), (n, p)).copy_from(design);
        aug.set_column(p, response);
        if aug.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in least-squares system".into()));
        }
        Ok(Self { factor: triangularize(aug), rows: n })
    }

    /// Ridge penalty rows `sqrt(lambda) * I` on the first `penalized` columns.
    pub fn ridge(columns: usize, penalized: usize, lambda: f64) -> Self {
        let mut factor = DMatrix::zeros(penalized, columns + 1);
        for j in 0..penalized {
            factor[(j, j)] = lambda.sqrt();
        }
        // penalty rows carry no observations
        Self { factor, rows: 0 }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn columns(&self) -> usize {
        self.factor.ncols() - 1
    }
}

fn triangularize(m: DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m;
    }
    let qr = m.qr();
    qr.r()
}

/// Ordinary (optionally weighted) least squares.
pub fn linear_lsq(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: Option<&[f64]>,
) -> Result<LinearFit> {
    let (n, p) = design.shape();
    if n < p {
        return Err(Error::InvalidArgument(format!("{n} rows for {p} columns")));
    }
    match weights {
        None => solve_blocks(&[CompressedBlock::new(design, response)?]),
        Some(w) => {
            if w.len() != n {
                return Err(Error::InvalidArgument("weights length mismatch".into()));
            }
            if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
            }
            let mut x = design.clone();
            let mut y = response.clone();
            for (i, &wi) in w.iter().enumerate() {
                let s = wi.sqrt();
                x.row_mut(i).scale_mut(s);
                y[i] *= s;
            }
            solve_blocks(&[CompressedBlock::new(&x, &y)?])
        }
    }
}

/// Solve the system made of the stacked blocks.
pub fn solve_blocks(blocks: &[CompressedBlock]) -> Result<LinearFit> {
    solve_block_refs(blocks.iter())
}

/// Same as [`solve_blocks`] but over borrowed blocks, so a bootstrap draw can
/// reuse one block several times without cloning.
pub fn solve_block_refs<'a, I>(blocks: I) -> Result<LinearFit>
where
    I: IntoIterator<Item = &'a CompressedBlock>,
{
    let blocks: Vec<&CompressedBlock> = blocks.into_iter().collect();
    let Some(first) = blocks.first() else {
        return Err(Error::InvalidArgument("no rows".into()));
    };
    let p = first.columns();
    let total: usize = blocks.iter().map(|b| b.factor.nrows()).sum();
    let rows: usize = blocks.iter().map(|b| b.rows).sum();
    let mut stacked = DMatrix::zeros(total, p + 1);
    let mut at = 0;
    for b in &blocks {
        if b.columns() != p {
            return Err(Error::InvalidArgument("blocks disagree on column count".into()));
        }
        let k = b.factor.nrows();
        stacked.view_mut((at, 0), (k, p + 1)).copy_from(&b.factor);
        at += k;
    }
    if rows < p {
        return Err(Error::RankDeficient { columns: (rows..p).collect() });
    }
    let r = if blocks.len() == 1 { stacked } else { triangularize(stacked) };
    finish(&r, p, rows)
}

fn finish(r_aug: &DMatrix<f64>, p: usize, rows: usize) -> Result<LinearFit> {
    if r_aug.nrows() < p {
        return Err(Error::RankDeficient { columns: (r_aug.nrows()..p).collect() });
    }
    let diag_max = (0..p).map(|j| r_aug[(j, j)].abs()).fold(0.0, f64::max);
    let deficient: Vec<usize> = (0..p)
        .filter(|&j| !(r_aug[(j, j)].abs() > RANK_TOLERANCE * diag_max))
        .collect();
    if !deficient.is_empty() {
        return Err(Error::RankDeficient { columns: deficient });
    }
    let r = r_aug.view((0, 0), (p, p)).into_owned();
    let qty = r_aug.view((0, p), (p, 1)).column(0).into_owned();
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: vec![] })?;
    let rss = if r_aug.nrows() > p { r_aug[(p, p)].powi(2) } else { 0.0 };
    let dof = rows.saturating_sub(p);
    let s2 = if dof > 0 { rss / dof as f64 } else { 0.0 };
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient { columns: vec![] })?;
    let covariance = (&r_inv * r_inv.transpose()) * s2;
    let std_errors = (0..p).map(|j| covariance[(j, j)].max(0.0).sqrt()).collect();
    Ok(LinearFit {
        coefficients: beta.iter().copied().collect(),
        std_errors,
        covariance,
        rss,
        rows,
        dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn identity_design_returns_response() {
        let x = DMatrix::identity(4, 4);
        let y = DVector::from_vec(vec![1.0, -2.0, 3.5, 0.25]);
        let fit = linear_lsq(&x, &y, None).unwrap();
        for (c, e) in fit.coefficients.iter().zip(y.iter()) {
            assert!((c - e).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = DVector::from_iterator(10, xs.iter().map(|v| 2.0 * v + 1.0));
        let fit = linear_lsq(&x, &y, None).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
    }

    #[test]
    fn collinear_columns_are_named() {
        let x = DMatrix::from_fn(8, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64,
        });
        let y = DVector::from_element(8, 1.0);
        match linear_lsq(&x, &y, None) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![2]),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn zero_response_gives_zero_coefficients() {
        let x = DMatrix::from_fn(20, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 + j as f64);
        let y = DVector::zeros(20);
        let fit = linear_lsq(&x, &y, None).unwrap();
        assert!(fit.coefficients.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn blockwise_solution_matches_single_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 300;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 3)] + rng.sample::<f64, _>(StandardNormal));
        let whole = linear_lsq(&x, &y, None).unwrap();
        let blocks: Vec<CompressedBlock> = (0..3)
            .map(|b| {
                let xs = x.rows(b * 100, 100).into_owned();
                let ys = y.rows(b * 100, 100).into_owned();
                CompressedBlock::new(&xs, &ys).unwrap()
            })
            .collect();
        let split = solve_blocks(&blocks).unwrap();
        for j in 0..4 {
            assert!((whole.coefficients[j] - split.coefficients[j]).abs() < 1e-12);
            assert!((whole.std_errors[j] - split.std_errors[j]).abs() < 1e-12);
        }
        assert!((whole.rss - split.rss).abs() < 1e-9 * whole.rss);
    }

    #[test]
    fn weights_match_row_duplication() {
        // weight 2 on a row is the same as repeating that row
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![0.1, 0.9, 2.2, 2.8]);
        let w = [1.0, 2.0, 1.0, 1.0];
        let weighted = linear_lsq(&x, &y, Some(&w)).unwrap();
        let xd = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let yd = DVector::from_vec(vec![0.1, 0.9, 0.9, 2.2, 2.8]);
        let dup = linear_lsq(&xd, &yd, None).unwrap();
        for j in 0..2 {
            assert!((weighted.coefficients[j] - dup.coefficients[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_interval_coverage_is_nominal() {
        // Monte-Carlo calibration of the standard errors: 1000 replicates of a
        // known 3-coefficient system, 95% normal intervals.
        let truth = [0.5, -1.0, 2.0];
        let n = 60;
        let mut covered = 0usize;
        let mut total = 0usize;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { ((i * (j + 3)) % 11) as f64 / 3.0 });
        for _ in 0..1000 {
            let y = DVector::from_fn(n, |i, _| {
                truth[0] + truth[1] * x[(i, 1)] + truth[2] * x[(i, 2)] + 0.7 * rng.sample::<f64, _>(StandardNormal)
            });
            let fit = linear_lsq(&x, &y, None).unwrap();
            for j in 0..3 {
                total += 1;
                // t quantile for 57 dof at 97.5%
                if (fit.coefficients[j] - truth[j]).abs() <= 2.0025 * fit.std_errors[j] {
                    covered += 1;
                }
            }
        }
        let coverage = covered as f64 / total as f64;
        assert!((coverage - 0.95).abs() < 0.02, "coverage {coverage}");
    }
}
