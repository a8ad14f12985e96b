//! CSV output for study results.
//!
//! Every file opens with `# key=value` comment lines. Floats use Rust's
//! shortest round-trip formatting, so files are byte-stable for equal results.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, StudyKind};
use crate::diagnostics::{DiagnosticsRecord, FitResult};
use crate::error::Result;
use crate::harness::EnsembleResult;

pub const SERIES_HEADER: &str = "sample,t,species,l2_norm,mass,min_value,rao_entropy,rel_entropy";
pub const CONVERGENCE_HEADER: &str = "level,h,mean_error,std_error,n_valid,n_aborted";
pub const FIT_HEADER: &str = "study,slope,intercept,r_squared";

/// Marker for quantities that are undefined for the model, such as entropies
/// without detailed-balance weights.
pub const UNAVAILABLE: &str = "NA";

fn preamble(cfg: &ExperimentConfig) -> String {
    format!(
        "# seed={}\n# config_hash={}\n# error_norm=sum over species of trapezoid-weighted l2 norms\n",
        cfg.seed,
        cfg.hash()
    )
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNAVAILABLE.to_string(), |x| x.to_string())
}

fn series_rows(out: &mut String, label: &str, rec: &DiagnosticsRecord) {
    for (k, t) in rec.times.iter().enumerate() {
        let h = rec.rao_entropy.as_ref().map(|s| s[k]);
        let rel = rec.relative_rao_entropy.as_ref().map(|s| s[k]);
        for i in 0..rec.n_species() {
            writeln!(
                out,
                "{label},{t},{i},{},{},{},{},{}",
                rec.l2[i][k],
                rec.mass[i][k],
                rec.min_value[i][k],
                opt(h),
                opt(rel)
            )
            .unwrap();
        }
    }
}

/// `series.csv` body: per-sample rows for single runs, `mean` rows for ensembles.
pub fn series_csv(cfg: &ExperimentConfig, result: &EnsembleResult) -> Option<String> {
    let mut out = preamble(cfg);
    out.push_str(SERIES_HEADER);
    out.push('\n');
    if let Some(s) = &result.series {
        let rec = DiagnosticsRecord {
            times: s.times.clone(),
            l2: s.l2.clone(),
            mass: s.mass.clone(),
            min_value: s.min_value.clone(),
            rao_entropy: s.rao_entropy.clone(),
            relative_rao_entropy: s.relative_rao_entropy.clone(),
            clamp_events: 0,
        };
        series_rows(&mut out, "mean", &rec);
    } else if !result.records.is_empty() {
        for (meta, rec) in result.samples.iter().zip(&result.records) {
            series_rows(&mut out, &meta.index.to_string(), rec);
        }
    } else {
        return None;
    }
    Some(out)
}

pub fn convergence_csv(cfg: &ExperimentConfig, result: &EnsembleResult) -> Option<String> {
    if result.levels.is_empty() {
        return None;
    }
    let mut out = preamble(cfg);
    out.push_str(CONVERGENCE_HEADER);
    out.push('\n');
    for (l, level) in result.levels.iter().enumerate() {
        writeln!(
            out,
            "{l},{},{},{},{},{}",
            level.h, level.error.mean, level.error.std_error, level.n_valid, level.n_aborted
        )
        .unwrap();
    }
    Some(out)
}

fn fit_row(out: &mut String, study: &str, f: &FitResult) {
    writeln!(out, "{study},{},{},{}", f.slope, f.intercept, f.r_squared).unwrap();
}

pub fn fit_csv(cfg: &ExperimentConfig, result: &EnsembleResult) -> Option<String> {
    let mut out = preamble(cfg);
    if let Some(reason) = &result.fit_error {
        writeln!(out, "# fit_unavailable={reason}").unwrap();
    }
    out.push_str(FIT_HEADER);
    out.push('\n');
    match result.kind {
        StudyKind::ConvergenceTime | StudyKind::ConvergenceSpace => {
            if let Some(f) = &result.fit {
                fit_row(&mut out, result.kind.name(), f);
            }
        }
        StudyKind::Longtime => {
            if let Some(f) = &result.decay_fit {
                fit_row(&mut out, "decay", f);
            }
        }
        StudyKind::Simulate => return None,
    }
    Some(out)
}

/// Write every applicable CSV into `dir`, returning the paths written.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, result: &EnsembleResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let files = [
        ("series.csv", series_csv(cfg, result)),
        ("convergence.csv", convergence_csv(cfg, result)),
        ("fit.csv", fit_csv(cfg, result)),
    ];
    for (name, body) in files {
        if let Some(body) = body {
            let path = dir.join(name);
            std::fs::write(&path, body)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigFile;
    use crate::diagnostics::ErrorEstimate;
    use crate::harness::{LevelResult, SampleMeta};

    fn cfg() -> ExperimentConfig {
        let text = r#"{
            "model": {"n": 3, "delta": 1.0, "A": [[0, 1, 0], [0, 0, 1], [1, 0, 0]], "noise": {"kind": "off"}},
            "grid": {"J": 4}, "time": {"dt": 0.1, "T": 0.2},
            "ensemble": {"samples": 1, "seed": 11},
            "study": {"kind": "simulate", "record_every": 1},
            "output": {"dir": "x"}
        }"#;
        ExperimentConfig::from_file(ConfigFile::from_json(text).unwrap()).unwrap()
    }

    #[test]
    fn preamble_carries_seed_and_hash() {
        let c = cfg();
        let p = preamble(&c);
        assert!(p.starts_with("# seed=11\n# config_hash="));
        let hash = p.lines().nth(1).unwrap().trim_start_matches("# config_hash=");
        assert_eq!(hash.len(), 64);
        assert!(hash.chars().all(|ch| ch.is_ascii_hexdigit()));
    }

    #[test]
    fn series_marks_missing_entropy() {
        let c = cfg();
        let mut result = EnsembleResult {
            kind: StudyKind::Simulate,
            seed: 11,
            samples: vec![SampleMeta {
                index: 0,
                clamp_events: 0,
                abort: None,
            }],
            levels: vec![],
            fit: None,
            fit_error: None,
            series: None,
            decay_fit: None,
            records: vec![],
        };
        let mut rec = DiagnosticsRecord::new(3);
        let u = c.initial_state(&c.grid);
        rec.push(0.0, &u, &c.params, &c.grid).unwrap();
        result.records.push(rec);
        let body = series_csv(&c, &result).unwrap();
        let rows: Vec<&str> = body.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], SERIES_HEADER);
        assert_eq!(rows.len(), 4);
        assert!(rows[1].starts_with("0,0,0,"));
        assert!(rows[1].ends_with(",NA,NA"));
        assert!(fit_csv(&c, &result).is_none());
        assert!(convergence_csv(&c, &result).is_none());
    }

    #[test]
    fn convergence_rows_round_trip_floats() {
        let c = cfg();
        let h = 1e-4 / 3.0;
        let result = EnsembleResult {
            kind: StudyKind::ConvergenceTime,
            seed: 11,
            samples: vec![],
            levels: vec![LevelResult {
                h,
                error: ErrorEstimate::from_samples(&[0.1, 0.2]),
                n_valid: 2,
                n_aborted: 0,
                used: true,
            }],
            fit: Some(FitResult {
                slope: 0.5,
                intercept: -1.0,
                r_squared: 1.0,
                points: 2,
            }),
            fit_error: None,
            series: None,
            decay_fit: None,
            records: vec![],
        };
        let body = convergence_csv(&c, &result).unwrap();
        let row = body.lines().last().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[1].parse::<f64>().unwrap(), h);
        assert_eq!(fields[4], "2");
        let fit = fit_csv(&c, &result).unwrap();
        assert_eq!(fit.lines().last().unwrap(), "convergence_time,0.5,-1,1");
    }

    #[test]
    fn writes_files() {
        let c = cfg();
        let dir = tempfile::tempdir().unwrap();
        let result = crate::harness::simulate(&c, crate::harness::Threads::Fixed(1)).unwrap();
        let written = write_outputs(dir.path(), &c, &result).unwrap();
        assert_eq!(written, vec![dir.path().join("series.csv")]);
        let body = std::fs::read_to_string(&written[0]).unwrap();
        assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 3);
    }
}
