//! Box-bounded damped Gauss-Newton (Levenberg-Marquardt) least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    /// Relative step size below which iteration stops.
    pub step: f64,
    /// Cosine between residual and Jacobian columns below which iteration stops.
    pub gradient: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { step: 1e-10, gradient: 1e-10, max_iterations: 200 }
    }
}

/// Relative step of the central-difference Jacobian.
pub const FD_STEP: f64 = 1e-6;

type Model<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;
type Jacobian<'a> = Box<dyn Fn(&[f64]) -> DMatrix<f64> + 'a>;

/// A weighted least-squares problem `min sum_i w_i (model_i(p) - y_i)^2`
/// subject to `lower <= p <= upper`.
pub struct FitProblem<'a> {
    model: Model<'a>,
    jacobian: Option<Jacobian<'a>>,
    observed: Vec<f64>,
    weights: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    initial: Vec<f64>,
    pub tolerances: Tolerances,
}

impl<'a> FitProblem<'a> {
    pub fn new<F>(model: F, observed: Vec<f64>, initial: Vec<f64>) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + 'a,
    {
        let p = initial.len();
        let n = observed.len();
        Self {
            model: Box::new(model),
            jacobian: None,
            observed,
            weights: vec![1.0; n],
            lower: vec![f64::NEG_INFINITY; p],
            upper: vec![f64::INFINITY; p],
            initial,
            tolerances: Tolerances::default(),
        }
    }

    pub fn weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    /// Use an analytic Jacobian (n x p) instead of finite differences.
    pub fn analytic_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + 'a,
    {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn tolerances(mut self, tol: Tolerances) -> Self {
        self.tolerances = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        let p = self.initial.len();
        if p == 0 {
            return Err(Error::InvalidArgument("no parameters".into()));
        }
        if self.lower.len() != p || self.upper.len() != p {
            return Err(Error::InvalidArgument("bounds length mismatch".into()));
        }
        if self.weights.len() != self.observed.len() {
            return Err(Error::InvalidArgument("weights length mismatch".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and >= 0".into()));
        }
        if self.observed.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite observation".into()));
        }
        for j in 0..p {
            if !(self.lower[j] <= self.initial[j] && self.initial[j] <= self.upper[j]) {
                return Err(Error::InvalidArgument(format!(
                    "initial value {} of parameter {j} outside [{}, {}]",
                    self.initial[j], self.lower[j], self.upper[j]
                )));
            }
        }
        Ok(())
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let pred = (self.model)(p);
        DVector::from_iterator(
            self.observed.len(),
            pred.iter()
                .zip(&self.observed)
                .zip(&self.weights)
                .map(|((m, y), w)| w.sqrt() * (m - y)),
        )
    }

    /// Jacobian of the model (unweighted), n x p.
    pub fn model_jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(p),
            None => finite_difference_jacobian(&self.model, p, &self.lower, &self.upper),
        }
    }

    fn weighted_jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let mut j = self.model_jacobian(p);
        for (i, w) in self.weights.iter().enumerate() {
            j.row_mut(i).scale_mut(w.sqrt());
        }
        j
    }
}

/// Central differences with relative step [`FD_STEP`]; one-sided next to a bound.
pub fn finite_difference_jacobian<F>(model: &F, p: &[f64], lower: &[f64], upper: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let base = model(p);
    let n = base.len();
    let mut jac = DMatrix::zeros(n, p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = FD_STEP * p[k].abs().max(1e-3);
        let can_up = p[k] + h <= upper[k];
        let can_down = p[k] - h >= lower[k];
        let col: Vec<f64> = if can_up && can_down {
            q[k] = p[k] + h;
            let fp = model(&q);
            q[k] = p[k] - h;
            let fm = model(&q);
            fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        } else if can_up {
            q[k] = p[k] + h;
            let fp = model(&q);
            fp.iter().zip(&base).map(|(a, b)| (a - b) / h).collect()
        } else {
            q[k] = p[k] - h;
            let fm = model(&q);
            base.iter().zip(&fm).map(|(a, b)| (a - b) / h).collect()
        };
        q[k] = p[k];
        for i in 0..n {
            jac[(i, k)] = col[i];
        }
    }
    jac
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// `(J^T W J)^{-1}`: correct when weights are inverse variances.
    pub covariance: Vec<Vec<f64>>,
    /// Covariance rescaled by the reduced chi-square.
    pub scaled_covariance: Vec<Vec<f64>>,
    /// Square roots of the diagonal of `scaled_covariance`.
    pub errors: Vec<f64>,
    /// Weighted sum of squared residuals at the solution.
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
    pub iterations: usize,
    pub at_lower: Vec<bool>,
    pub at_upper: Vec<bool>,
    /// Objective after each accepted iteration (starting point first).
    pub cost_trace: Vec<f64>,
}

impl FitResult {
    pub fn boundary_hit(&self) -> bool {
        self.at_lower.iter().chain(&self.at_upper).any(|b| *b)
    }

    /// Turn a non-converged result into an error carrying the cost trace.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence { iterations: self.iterations, trace: self.cost_trace })
        }
    }
}

fn clamp(p: &mut [f64], lower: &[f64], upper: &[f64]) {
    for j in 0..p.len() {
        p[j] = p[j].max(lower[j]).min(upper[j]);
    }
}

/// Damped Gauss-Newton with adaptive damping and projection onto the box.
///
/// Never errors on non-convergence: the caller inspects `converged`.
pub fn nonlinear_lsq(problem: &FitProblem<'_>) -> Result<FitResult> {
    problem.validate()?;
    let tol = problem.tolerances;
    let np = problem.initial.len();
    let (lower, upper) = (&problem.lower, &problem.upper);

    let mut p = problem.initial.clone();
    clamp(&mut p, lower, upper);
    let mut r = problem.residuals(&p);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::InvalidArgument("model is not finite at the initial guess".into()));
    }
    let mut trace = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < tol.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jac = problem.weighted_jacobian(&p);
        let grad = jac.transpose() * &r;
        // free set: parameters not pinned against a bound by the gradient
        let free: Vec<usize> = (0..np)
            .filter(|&j| {
                let pinned_low = p[j] <= lower[j] && grad[j] > 0.0;
                let pinned_high = p[j] >= upper[j] && grad[j] < 0.0;
                !(pinned_low || pinned_high)
            })
            .collect();
        let rnorm = cost.sqrt();
        let gcos = free
            .iter()
            .map(|&j| {
                let cn = jac.column(j).norm();
                if cn == 0.0 { 0.0 } else { grad[j].abs() / (cn * rnorm) }
            })
            .fold(0.0, f64::max);
        if free.is_empty() || gcos <= tol.gradient {
            converged = true;
            break;
        }
        let nf = free.len();
        let mut a = DMatrix::zeros(nf, nf);
        let mut g = DVector::zeros(nf);
        for (ii, &i) in free.iter().enumerate() {
            g[ii] = grad[i];
            for (jj, &j) in free.iter().enumerate() {
                a[(ii, jj)] = jac.column(i).dot(&jac.column(j));
            }
        }
        let mut accepted = false;
        let mut step_small = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for d in 0..nf {
                damped[(d, d)] += lambda * a[(d, d)].max(1e-12);
            }
            let Some(delta) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p.clone();
            for (ii, &i) in free.iter().enumerate() {
                trial[i] += delta[ii];
            }
            clamp(&mut trial, lower, upper);
            let step: f64 = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let pnorm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            step_small = step <= tol.step * (pnorm + tol.step);
            let r_trial = problem.residuals(&trial);
            let c_trial = r_trial.norm_squared();
            if c_trial.is_finite() && c_trial < cost {
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            if step_small {
                break;
            }
            lambda *= 4.0;
        }
        iterations += 1;
        if accepted {
            trace.push(cost);
        }
        if step_small || !accepted {
            converged = step_small;
            break;
        }
    }

    // covariance from the full Jacobian at the solution
    let jac = problem.weighted_jacobian(&p);
    let jtj = jac.transpose() * &jac;
    let cov = match jtj.clone().cholesky() {
        Some(c) => c.inverse(),
        None => jtj.pseudo_inverse(1e-14).unwrap_or_else(|_| DMatrix::from_element(np, np, f64::NAN)),
    };
    let dof = problem.observed.len().saturating_sub(np);
    let scale = if dof > 0 { cost / dof as f64 } else { 1.0 };
    let scaled = &cov * scale;
    let to_rows = |m: &DMatrix<f64>| (0..np).map(|i| (0..np).map(|j| m[(i, j)]).collect()).collect();
    let errors = (0..np).map(|j| scaled[(j, j)].max(0.0).sqrt()).collect();
    Ok(FitResult {
        at_lower: (0..np).map(|j| lower[j].is_finite() && p[j] <= lower[j]).collect(),
        at_upper: (0..np).map(|j| upper[j].is_finite() && p[j] >= upper[j]).collect(),
        params: p,
        covariance: to_rows(&cov),
        scaled_covariance: to_rows(&scaled),
        errors,
        chi2: cost,
        dof,
        converged,
        iterations,
        cost_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_model(taus: &[f64]) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
        move |p: &[f64]| taus.iter().map(|t| p[0] * (-p[1] * t).exp()).collect()
    }

    #[test]
    fn recovers_noiseless_exponential() {
        let taus: Vec<f64> = (1..=50).map(|t| t as f64).collect();
        let y: Vec<f64> = taus.iter().map(|t| 0.24 * (-0.038 * t).exp()).collect();
        let prob = FitProblem::new(exp_model(&taus), y, vec![0.1, 0.1]);
        let fit = nonlinear_lsq(&prob).unwrap();
        assert!(fit.converged);
        assert!((fit.params[0] - 0.24).abs() < 1e-8, "{:?}", fit.params);
        assert!((fit.params[1] - 0.038).abs() < 1e-8);
    }

    #[test]
    fn start_at_optimum_stops_immediately() {
        let taus: Vec<f64> = (1..=20).map(|t| t as f64).collect();
        let y: Vec<f64> = taus.iter().map(|t| 0.24 * (-0.038 * t).exp()).collect();
        let prob = FitProblem::new(exp_model(&taus), y, vec![0.24, 0.038]);
        let fit = nonlinear_lsq(&prob).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations <= 2);
    }

    #[test]
    fn negative_asymptote_is_projected_onto_bound() {
        // y = c + 0.5 e^{-t/5} with c = -0.2, but c constrained to [0, 1]
        let taus: Vec<f64> = (0..30).map(|t| t as f64).collect();
        let y: Vec<f64> = taus.iter().map(|t| -0.2 + 0.5 * (-t / 5.0).exp()).collect();
        let model = |p: &[f64]| taus.iter().map(|t| p[0] + 0.5 * (-t / 5.0).exp()).collect::<Vec<_>>();
        let prob = FitProblem::new(model, y, vec![0.5]).bounds(vec![0.0], vec![1.0]);
        let fit = nonlinear_lsq(&prob).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.params[0], 0.0);
        assert!(fit.at_lower[0]);
        assert!(fit.boundary_hit());
    }

    #[test]
    fn objective_never_increases() {
        let taus: Vec<f64> = (1..=40).map(|t| t as f64).collect();
        let y: Vec<f64> = taus
            .iter()
            .enumerate()
            .map(|(i, t)| 0.3 * t.powf(-0.5) * (-0.02 * t).exp() + 0.01 * ((i * 37 % 11) as f64 - 5.0) / 5.0)
            .collect();
        let model = |p: &[f64]| taus.iter().map(|t| p[0] * t.powf(-p[2]) * (-p[1] * t).exp()).collect::<Vec<_>>();
        let prob = FitProblem::new(model, y, vec![1.0, 0.5, 0.1]).bounds(vec![0.0; 3], vec![10.0; 3]);
        let fit = nonlinear_lsq(&prob).unwrap();
        for w in fit.cost_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn weight_scaling_leaves_estimates_unchanged() {
        let taus: Vec<f64> = (1..=30).map(|t| t as f64).collect();
        let y: Vec<f64> = taus
            .iter()
            .enumerate()
            .map(|(i, t)| 0.2 * (-0.05 * t).exp() + 0.002 * (((i * 7) % 5) as f64 - 2.0))
            .collect();
        let w: Vec<f64> = (0..30).map(|i| 1.0 + (i % 3) as f64).collect();
        let a = nonlinear_lsq(&FitProblem::new(exp_model(&taus), y.clone(), vec![0.1, 0.1]).weights(w.clone())).unwrap();
        let w7: Vec<f64> = w.iter().map(|v| 7.0 * v).collect();
        let b = nonlinear_lsq(&FitProblem::new(exp_model(&taus), y, vec![0.1, 0.1]).weights(w7)).unwrap();
        for j in 0..2 {
            assert!((a.params[j] - b.params[j]).abs() < 1e-9);
            // absolute covariance scales with 1/c, the rescaled one does not
            assert!((a.covariance[j][j] / b.covariance[j][j] - 7.0).abs() < 1e-6);
            assert!((a.scaled_covariance[j][j] / b.scaled_covariance[j][j] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_initial_guess_rejected() {
        let prob = FitProblem::new(|p: &[f64]| vec![p[0]], vec![1.0], vec![2.0]).bounds(vec![0.0], vec![1.0]);
        assert!(nonlinear_lsq(&prob).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let taus: Vec<f64> = (1..=50).map(|t| t as f64).collect();
        let y: Vec<f64> = taus.iter().map(|t| 0.24 * (-0.038 * t).exp()).collect();
        let prob = FitProblem::new(exp_model(&taus), y, vec![5.0, 2.0])
            .tolerances(Tolerances { max_iterations: 1, ..Tolerances::default() });
        let fit = nonlinear_lsq(&prob).unwrap();
        assert!(!fit.converged);
        assert!(matches!(fit.require_converged(), Err(Error::NoConvergence { .. })));
    }
}
