//! Per-path observables and ensemble statistics: norms, mass, entropies,
//! decay-rate and convergence-order fits.

use crate::error::{Error, Result};
use crate::grid::{weighted_mass, GridSpec};
use crate::model::{rao_entropy, relative_rao_entropy, ModelParams, SpeciesField};

/// Trapezoid-weighted ℓ² norm `sqrt(Σ_j w_j u_j²)`.
pub fn l2_norm(u: &[f64], grid: &GridSpec) -> f64 {
    u.iter()
        .enumerate()
        .map(|(j, v)| grid.weight(j) * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Time series recorded along one path.
///
/// Per-species series are indexed `[species][record]`. The entropy series
/// are `None` when the coefficient matrix has no detailed-balance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub times: Vec<f64>,
    pub l2: Vec<Vec<f64>>,
    pub mass: Vec<Vec<f64>>,
    pub min_value: Vec<Vec<f64>>,
    pub rao_entropy: Option<Vec<f64>>,
    pub relative_rao_entropy: Option<Vec<f64>>,
    pub clamp_events: usize,
}

impl DiagnosticsRecord {
    pub fn new(n: usize) -> Self {
        DiagnosticsRecord {
            times: Vec::new(),
            l2: vec![Vec::new(); n],
            mass: vec![Vec::new(); n],
            min_value: vec![Vec::new(); n],
            rao_entropy: Some(Vec::new()),
            relative_rao_entropy: Some(Vec::new()),
            clamp_events: 0,
        }
    }

    pub fn n_species(&self) -> usize {
        self.l2.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, u: &SpeciesField, params: &ModelParams, grid: &GridSpec) -> Result<()> {
        u.check_species(self.n_species(), "DiagnosticsRecord::push")?;
        self.times.push(t);
        for i in 0..u.n_species() {
            let ui = u.species(i);
            self.l2[i].push(l2_norm(ui, grid));
            self.mass[i].push(weighted_mass(ui, grid));
            self.min_value[i].push(ui.iter().copied().fold(f64::INFINITY, f64::min));
        }
        match &params.pi {
            Some(pi) => {
                let h = rao_entropy(u, pi, &params.a, grid)?;
                let rel = relative_rao_entropy(u, pi, &params.a, grid)?;
                if let Some(s) = self.rao_entropy.as_mut() {
                    s.push(h);
                }
                if let Some(s) = self.relative_rao_entropy.as_mut() {
                    s.push(rel);
                }
            }
            None => {
                self.rao_entropy = None;
                self.relative_rao_entropy = None;
            }
        }
        Ok(())
    }
}

/// Least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Ordinary least squares on `(x, y)`. Points are sorted first so the result
/// does not depend on input order.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "linear_fit",
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {}", x.len())));
    }
    if let Some(bad) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("non-finite coordinate {bad}")));
    }
    let mut pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * m {
        return Err(Error::Fit("degenerate abscissae: all points share one x".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
        points: pts.len(),
    })
}

/// Fit `log value = intercept + slope t`; `-slope` estimates the decay rate.
pub fn fit_exponential_rate(times: &[f64], values: &[f64]) -> Result<FitResult> {
    if let Some(v) = values.iter().find(|v| v.is_nan() || **v <= 0.0) {
        return Err(Error::Fit(format!("decay fit needs positive values, got {v}")));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    linear_fit(times, &logs)
}

/// [`fit_exponential_rate`] on the points with `t ≥ skip_fraction · t_max`.
pub fn fit_exponential_rate_after(times: &[f64], values: &[f64], skip_fraction: f64) -> Result<FitResult> {
    let t_max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = skip_fraction * t_max;
    let (t, v): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= cutoff)
        .map(|(t, v)| (*t, *v))
        .unzip();
    fit_exponential_rate(&t, &v)
}

/// Fit `log error = intercept + slope log h`; the slope is the observed order.
pub fn fit_order(h_values: &[f64], errors: &[f64]) -> Result<FitResult> {
    if let Some(v) = h_values.iter().chain(errors).find(|v| v.is_nan() || **v <= 0.0) {
        return Err(Error::Fit(format!("order fit needs positive inputs, got {v}")));
    }
    let lh: Vec<f64> = h_values.iter().map(|v| v.ln()).collect();
    let le: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    linear_fit(&lh, &le)
}

/// Monte Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl ErrorEstimate {
    /// Mean and standard error of `values`, summed in slice order.
    pub fn from_samples(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return ErrorEstimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                samples: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let std_error = if m > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        ErrorEstimate {
            mean,
            std_error,
            samples: m,
        }
    }
}

/// Strong error of one pair: `Σ_i ‖u_i - v_i‖` in the weighted ℓ² norm.
pub fn pathwise_error(u: &SpeciesField, reference: &SpeciesField, grid: &GridSpec) -> Result<f64> {
    u.check_grid(grid, "pathwise_error")?;
    reference.check_grid(grid, "pathwise_error reference")?;
    reference.check_species(u.n_species(), "pathwise_error reference")?;
    let mut diff = vec![0.0; grid.nodes()];
    let mut total = 0.0;
    for i in 0..u.n_species() {
        for ((d, a), b) in diff.iter_mut().zip(u.species(i)).zip(reference.species(i)) {
            *d = a - b;
        }
        total += l2_norm(&diff, grid);
    }
    Ok(total)
}

/// Mean over paired samples of [`pathwise_error`], with its standard error.
pub fn ensemble_mean_error(
    final_states: &[SpeciesField],
    reference_states: &[SpeciesField],
    grid: &GridSpec,
) -> Result<ErrorEstimate> {
    if final_states.len() != reference_states.len() {
        return Err(Error::DimensionMismatch {
            context: "ensemble_mean_error",
            expected: reference_states.len(),
            actual: final_states.len(),
        });
    }
    let errs = final_states
        .iter()
        .zip(reference_states)
        .map(|(u, r)| pathwise_error(u, r, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorEstimate::from_samples(&errs))
}
