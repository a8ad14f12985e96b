//! Monte Carlo ensembles and the convergence and long-time studies built on them.
//!
//! Every sample draws its noise from `(seed, sample_index)`, and all reductions
//! run serially in sample order, so results do not depend on the worker count.

use rayon::prelude::*;

use crate::config::{ExperimentConfig, StudyKind};
use crate::diagnostics::{fit_exponential_rate_after, fit_order, pathwise_error, DiagnosticsRecord, ErrorEstimate, FitResult};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::SpeciesField;
use crate::noise::{sample_path, NoisePath};
use crate::scheme::{Scheme, TimeSpec};

/// A level is dropped from the fit when more than this fraction of samples abort.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

/// Worker count for an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Fixed(usize),
}

impl Threads {
    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Threads::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Threads::Fixed(k)),
            _ => Err(Error::param("threads", format!("expected a positive integer or `auto`, got `{s}`"))),
        }
    }
}

/// Run `f(0..samples)` on a dedicated pool; results come back in index order.
pub fn run_ensemble<T, F>(samples: usize, threads: Threads, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Threads::Fixed(k) = threads {
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| Error::param("threads", e.to_string()))?;
    Ok(pool.install(|| (0..samples).into_par_iter().map(&f).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub index: usize,
    pub clamp_events: usize,
    /// First failure seen for this sample, if any.
    pub abort: Option<String>,
}

/// Mean error at one discretisation level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    /// Step size `dt` or mesh width `1/J`.
    pub h: f64,
    pub error: ErrorEstimate,
    pub n_valid: usize,
    pub n_aborted: usize,
    /// Counted in the order fit.
    pub used: bool,
}

/// Ensemble means of the recorded diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSeries {
    pub times: Vec<f64>,
    pub l2: Vec<Vec<f64>>,
    pub mass: Vec<Vec<f64>>,
    pub min_value: Vec<Vec<f64>>,
    pub rao_entropy: Option<Vec<f64>>,
    pub relative_rao_entropy: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub kind: StudyKind,
    pub seed: u64,
    pub samples: Vec<SampleMeta>,
    pub levels: Vec<LevelResult>,
    /// Log-log fit of error against `h` over the used levels.
    pub fit: Option<FitResult>,
    pub fit_error: Option<String>,
    pub series: Option<MeanSeries>,
    /// Log-linear fit of the mean relative entropy after the transient.
    pub decay_fit: Option<FitResult>,
    /// Per-sample records, kept for single-path runs.
    pub records: Vec<DiagnosticsRecord>,
}

impl EnsembleResult {
    fn new(kind: StudyKind, seed: u64) -> Self {
        EnsembleResult {
            kind,
            seed,
            samples: Vec::new(),
            levels: Vec::new(),
            fit: None,
            fit_error: None,
            series: None,
            decay_fit: None,
            records: Vec::new(),
        }
    }

    pub fn n_aborted(&self) -> usize {
        self.samples.iter().filter(|s| s.abort.is_some()).count()
    }
}

fn noise_path(cfg: &ExperimentConfig, n_steps: usize, dt: f64, index: usize) -> NoisePath {
    let drivers = cfg.params.noise.drivers(cfg.params.n());
    if cfg.params.noise.is_off() {
        NoisePath::zeros(drivers, n_steps, dt)
    } else {
        sample_path(drivers, n_steps, dt, cfg.seed, index as u64).expect("validated step size")
    }
}

/// Refuse level sets whose abscissae cannot support a slope.
fn check_distinct(h: &[f64]) -> Result<()> {
    let first = h[0];
    if h.iter().all(|&v| v == first) {
        return Err(Error::Fit(format!("all {} levels share h = {first}; degenerate abscissae", h.len())));
    }
    Ok(())
}

struct SampleOutcome {
    clamp_events: usize,
    abort: Option<String>,
    errors: Vec<Option<f64>>,
}

fn reduce_levels(
    kind: StudyKind,
    cfg: &ExperimentConfig,
    h: &[f64],
    outcomes: Vec<SampleOutcome>,
) -> EnsembleResult {
    let mut result = EnsembleResult::new(kind, cfg.seed);
    let m = outcomes.len();
    for (l, &hl) in h.iter().enumerate() {
        let errs: Vec<f64> = outcomes.iter().filter_map(|o| o.errors[l]).collect();
        let n_valid = errs.len();
        let n_aborted = m - n_valid;
        let used = n_valid > 0 && (n_aborted as f64) <= MAX_ABORT_FRACTION * m as f64;
        result.levels.push(LevelResult {
            h: hl,
            error: ErrorEstimate::from_samples(&errs),
            n_valid,
            n_aborted,
            used,
        });
    }
    result.samples = outcomes
        .into_iter()
        .enumerate()
        .map(|(index, o)| SampleMeta {
            index,
            clamp_events: o.clamp_events,
            abort: o.abort,
        })
        .collect();

    let (hs, es): (Vec<f64>, Vec<f64>) = result
        .levels
        .iter()
        .filter(|l| l.used)
        .map(|l| (l.h, l.error.mean))
        .unzip();
    if hs.len() < 2 {
        result.fit_error = Some(format!("only {} usable level(s) after aborts", hs.len()));
    } else {
        match fit_order(&hs, &es) {
            Ok(f) => result.fit = Some(f),
            Err(e) => result.fit_error = Some(e.to_string()),
        }
    }
    result
}

/// Strong error in time against a fine reference driven by the same Brownian path.
pub fn temporal_convergence_study(cfg: &ExperimentConfig, threads: Threads) -> Result<EnsembleResult> {
    let (reference, levels) = cfg.time_levels()?;
    let h: Vec<f64> = levels.iter().map(|l| l.0).collect();
    check_distinct(&h)?;
    let horizon = cfg.raw.time.horizon;
    let ref_time = TimeSpec::with_horizon(reference, horizon)?;
    let ref_scheme = Scheme::new(cfg.params.clone(), cfg.grid, reference)?;
    let coarse: Vec<(Scheme, TimeSpec, usize)> = levels
        .iter()
        .map(|&(dt, factor)| {
            Ok((Scheme::new(cfg.params.clone(), cfg.grid, dt)?, TimeSpec::with_horizon(dt, horizon)?, factor))
        })
        .collect::<Result<_>>()?;
    let u0 = cfg.initial_state(&cfg.grid);

    let outcomes = run_ensemble(cfg.samples, threads, |index| {
        let fine = noise_path(cfg, ref_time.n_steps, reference, index);
        let mut out = SampleOutcome {
            clamp_events: 0,
            abort: None,
            errors: vec![None; coarse.len()],
        };
        let reference_state = match ref_scheme.run(&u0, &ref_time, &fine, 0) {
            Ok((u, rec)) => {
                out.clamp_events += rec.clamp_events;
                u
            }
            Err(e) => {
                out.abort = Some(format!("reference: {e}"));
                return out;
            }
        };
        for (l, (scheme, time, factor)) in coarse.iter().enumerate() {
            let path = fine.coarsen(*factor).expect("levels validated against the reference");
            match scheme.run(&u0, time, &path, 0) {
                Ok((u, rec)) => {
                    out.clamp_events += rec.clamp_events;
                    out.errors[l] = Some(pathwise_error(&u, &reference_state, &cfg.grid).expect("same grid"));
                }
                Err(e) => {
                    out.abort.get_or_insert_with(|| format!("dt = {}: {e}", time.dt));
                }
            }
        }
        out
    })?;
    Ok(reduce_levels(StudyKind::ConvergenceTime, cfg, &h, outcomes))
}

/// Strong error in space against a fine reference grid, compared at coarse nodes.
pub fn spatial_convergence_study(cfg: &ExperimentConfig, threads: Threads) -> Result<EnsembleResult> {
    let (ref_cells, levels) = cfg.space_levels()?;
    let h: Vec<f64> = levels.iter().map(|l| 1.0 / l.0 as f64).collect();
    check_distinct(&h)?;
    let dt = cfg.time.dt;
    let time = cfg.time;
    let ref_grid = GridSpec::new(ref_cells)?;
    let ref_scheme = Scheme::new(cfg.params.clone(), ref_grid, dt)?;
    let ref_u0 = cfg.initial_state(&ref_grid);
    let coarse: Vec<(Scheme, SpeciesField, usize)> = levels
        .iter()
        .map(|&(cells, stride)| {
            let grid = GridSpec::new(cells)?;
            Ok((Scheme::new(cfg.params.clone(), grid, dt)?, cfg.initial_state(&grid), stride))
        })
        .collect::<Result<_>>()?;

    let outcomes = run_ensemble(cfg.samples, threads, |index| {
        let path = noise_path(cfg, time.n_steps, dt, index);
        let mut out = SampleOutcome {
            clamp_events: 0,
            abort: None,
            errors: vec![None; coarse.len()],
        };
        let reference_state = match ref_scheme.run(&ref_u0, &time, &path, 0) {
            Ok((u, rec)) => {
                out.clamp_events += rec.clamp_events;
                u
            }
            Err(e) => {
                out.abort = Some(format!("reference J = {ref_cells}: {e}"));
                return out;
            }
        };
        for (l, (scheme, u0, stride)) in coarse.iter().enumerate() {
            match scheme.run(u0, &time, &path, 0) {
                Ok((u, rec)) => {
                    out.clamp_events += rec.clamp_events;
                    let restricted = reference_state.restrict(*stride).expect("levels validated");
                    out.errors[l] = Some(pathwise_error(&u, &restricted, scheme.grid()).expect("same grid"));
                }
                Err(e) => {
                    out.abort.get_or_insert_with(|| format!("J = {}: {e}", scheme.grid().cells()));
                }
            }
        }
        out
    })?;
    Ok(reduce_levels(StudyKind::ConvergenceSpace, cfg, &h, outcomes))
}

fn run_records(cfg: &ExperimentConfig, threads: Threads, samples: usize) -> Result<Vec<Result<DiagnosticsRecord>>> {
    let scheme = Scheme::new(cfg.params.clone(), cfg.grid, cfg.time.dt)?;
    let u0 = cfg.initial_state(&cfg.grid);
    let record_every = cfg.study().record_every;
    run_ensemble(samples, threads, |index| {
        let path = noise_path(cfg, cfg.time.n_steps, cfg.time.dt, index);
        scheme.run(&u0, &cfg.time, &path, record_every).map(|(_, rec)| rec)
    })
}

fn meta(index: usize, rec: &Result<DiagnosticsRecord>) -> SampleMeta {
    match rec {
        Ok(r) => SampleMeta {
            index,
            clamp_events: r.clamp_events,
            abort: None,
        },
        Err(e) => SampleMeta {
            index,
            clamp_events: 0,
            abort: Some(e.to_string()),
        },
    }
}

/// One path (sample index 0) with its diagnostics.
pub fn simulate(cfg: &ExperimentConfig, threads: Threads) -> Result<EnsembleResult> {
    let mut records = run_records(cfg, threads, 1)?;
    let rec = records.pop().expect("one sample");
    let mut result = EnsembleResult::new(StudyKind::Simulate, cfg.seed);
    result.samples.push(meta(0, &rec));
    result.records.push(rec?);
    Ok(result)
}

fn mean_of(rows: &[&Vec<f64>]) -> Vec<f64> {
    let m = rows.len() as f64;
    let mut out = vec![0.0; rows[0].len()];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= m);
    out
}

/// Ensemble-mean diagnostics over the horizon and the relative-entropy decay rate.
pub fn longtime_study(cfg: &ExperimentConfig, threads: Threads) -> Result<EnsembleResult> {
    let records = run_records(cfg, threads, cfg.samples)?;
    let mut result = EnsembleResult::new(StudyKind::Longtime, cfg.seed);
    result.samples = records.iter().enumerate().map(|(i, r)| meta(i, r)).collect();
    let ok: Vec<&DiagnosticsRecord> = records.iter().filter_map(|r| r.as_ref().ok()).collect();
    if ok.is_empty() {
        let first = result.samples[0].abort.clone().unwrap_or_default();
        return Err(Error::Fit(format!("every sample aborted; first: {first}")));
    }
    let n = cfg.params.n();
    let per_species = |pick: fn(&DiagnosticsRecord) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| mean_of(&ok.iter().map(|r| &pick(r)[i]).collect::<Vec<_>>()))
            .collect()
    };
    let entropy = |pick: fn(&DiagnosticsRecord) -> &Option<Vec<f64>>| -> Option<Vec<f64>> {
        let rows: Option<Vec<&Vec<f64>>> = ok.iter().map(|r| pick(r).as_ref()).collect();
        rows.map(|rows| mean_of(&rows))
    };
    let series = MeanSeries {
        times: ok[0].times.clone(),
        l2: per_species(|r| &r.l2),
        mass: per_species(|r| &r.mass),
        min_value: per_species(|r| &r.min_value),
        rao_entropy: entropy(|r| &r.rao_entropy),
        relative_rao_entropy: entropy(|r| &r.relative_rao_entropy),
    };
    if let Some(rel) = &series.relative_rao_entropy {
        match fit_exponential_rate_after(&series.times, rel, cfg.study().transient_fraction) {
            Ok(f) => result.decay_fit = Some(f),
            Err(e) => result.fit_error = Some(e.to_string()),
        }
    } else {
        result.fit_error = Some("relative entropy unavailable: no detailed-balance weights".into());
    }
    result.series = Some(series);
    Ok(result)
}

/// Dispatch on the configured study kind.
pub fn run_study(cfg: &ExperimentConfig, threads: Threads) -> Result<EnsembleResult> {
    match cfg.study().kind {
        StudyKind::Simulate => simulate(cfg, threads),
        StudyKind::ConvergenceTime => temporal_convergence_study(cfg, threads),
        StudyKind::ConvergenceSpace => spatial_convergence_study(cfg, threads),
        StudyKind::Longtime => longtime_study(cfg, threads),
    }
}
