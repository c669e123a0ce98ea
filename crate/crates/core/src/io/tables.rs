use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::detector::{DetectionEvent, Exclusion, ExclusionReason, ResidualSeries};
use crate::error::{Error, Result};
use crate::fitting::{FitResult, Trace};
use crate::stats::{DensitySampleSet, MorphologyRecord};

pub const TRACE_COLUMNS: &[&str] = &["current_mA", "freq_GHz", "re_s21", "im_s21"];
pub const FIT_COLUMNS: &[&str] = &["current_mA", "f0_GHz", "Ql", "Qe", "theta", "residual_metric", "converged"];
pub const EXCLUSION_COLUMNS: &[&str] = &["start", "end", "reason"];
pub const RESIDUAL_COLUMNS: &[&str] = &["shift_kappa", "residual"];
pub const EVENT_COLUMNS: &[&str] = &["shift_kappa", "freq_GHz", "peak_residual"];
pub const POSTERIOR_COLUMNS: &[&str] = &["n_t", "prob"];
pub const DENSITY_COLUMNS: &[&str] = &["treatment", "resonator_id", "rho", "ci_lo", "ci_hi"];
pub const MORPHOLOGY_COLUMNS: &[&str] = &[
    "device_label",
    "electrode_thickness_mean",
    "electrode_thickness_std",
    "electrode_thickness_rms",
    "grain_width_mean",
    "grain_width_std",
    "junction_thickness_mean",
    "junction_thickness_std",
    "junction_thickness_rms",
    "tls_density",
];

fn record_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Record { path: path.to_path_buf(), line, message: message.into() }
}

/// CSV bytes with a header row.
pub fn to_csv<T: Serialize>(columns: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Schema(e.to_string());
    w.write_record(columns).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Schema(e.to_string()))
}

fn write_table<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    write_atomic(path, &to_csv(columns, rows)?)
}

/// Rows of a CSV file whose header must hold exactly `columns`, in any order,
/// each with its 1-based line number.
fn read_table<T: DeserializeOwned>(path: &Path, columns: &[&str]) -> Result<Vec<(u64, T)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => record_error(path, 1, format!("{other:?}")),
    })?;
    let headers = rdr.headers().map_err(|e| record_error(path, 1, e.to_string()))?.clone();
    for want in columns {
        if !headers.iter().any(|h| h == *want) {
            return Err(Error::Schema(format!("{}: missing column `{want}`", path.display())));
        }
    }
    if let Some(extra) = headers.iter().find(|h| !columns.contains(h)) {
        return Err(Error::Schema(format!("{}: unexpected column `{extra}`", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            record_error(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: T = rec.deserialize(Some(&headers)).map_err(|e| record_error(path, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

fn check_finite(path: &Path, line: u64, values: &[(&str, f64)]) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((name, v)) => Err(record_error(path, line, format!("{name} = {v} is not finite"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    #[serde(rename = "current_mA")]
    pub current_ma: f64,
    #[serde(rename = "freq_GHz")]
    pub freq_ghz: f64,
    pub re_s21: f64,
    pub im_s21: f64,
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let rows: Vec<TraceRow> = trace
        .freqs
        .iter()
        .zip(&trace.s21)
        .map(|(&f, z)| TraceRow { current_ma: trace.bias_current, freq_ghz: f, re_s21: z.re, im_s21: z.im })
        .collect();
    write_table(path, TRACE_COLUMNS, &rows)
}

/// One trace; every row must carry the same bias current.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let rows: Vec<(u64, TraceRow)> = read_table(path, TRACE_COLUMNS)?;
    let Some((_, first)) = rows.first() else {
        return Err(record_error(path, 2, "trace has no rows"));
    };
    let bias = first.current_ma;
    for (line, r) in &rows {
        check_finite(path, *line, &[("current_mA", r.current_ma), ("freq_GHz", r.freq_ghz), ("re_s21", r.re_s21), ("im_s21", r.im_s21)])?;
        if r.current_ma != bias {
            return Err(record_error(path, *line, format!("bias {} differs from {bias} on the first row", r.current_ma)));
        }
    }
    for w in rows.windows(2) {
        if !(w[1].1.freq_ghz > w[0].1.freq_ghz) {
            return Err(record_error(path, w[1].0, "frequencies must increase strictly"));
        }
    }
    let freqs = rows.iter().map(|(_, r)| r.freq_ghz).collect();
    let s21 = rows.iter().map(|(_, r)| Complex64::new(r.re_s21, r.im_s21)).collect();
    Trace::new(freqs, s21, bias).map_err(|e| record_error(path, 0, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    #[serde(rename = "current_mA")]
    pub current_ma: f64,
    #[serde(rename = "f0_GHz")]
    pub f0_ghz: f64,
    #[serde(rename = "Ql")]
    pub q_loaded: f64,
    #[serde(rename = "Qe")]
    pub q_ext: f64,
    pub theta: f64,
    pub residual_metric: f64,
    pub converged: bool,
}

impl FitRow {
    pub fn new(bias_current: f64, fit: &FitResult) -> Self {
        FitRow {
            current_ma: bias_current,
            f0_ghz: fit.params.f_r,
            q_loaded: fit.params.q_loaded,
            q_ext: fit.params.q_ext_mag,
            theta: fit.params.theta,
            residual_metric: fit.residual_metric,
            converged: fit.converged,
        }
    }
}

pub fn write_fits(path: &Path, traces: &[Trace], fits: &[FitResult]) -> Result<()> {
    let rows: Vec<FitRow> = traces.iter().zip(fits).map(|(t, f)| FitRow::new(t.bias_current, f)).collect();
    write_table(path, FIT_COLUMNS, &rows)
}

/// Failed fits are written with NaN parameters, so these rows are not
/// checked for finiteness.
pub fn read_fits(path: &Path) -> Result<Vec<FitRow>> {
    Ok(read_table(path, FIT_COLUMNS)?.into_iter().map(|(_, r)| r).collect())
}

pub fn write_exclusions(path: &Path, exclusions: &[Exclusion]) -> Result<()> {
    write_table(path, EXCLUSION_COLUMNS, exclusions)
}

pub fn read_exclusions(path: &Path) -> Result<Vec<Exclusion>> {
    let rows: Vec<(u64, Exclusion)> = read_table(path, EXCLUSION_COLUMNS)?;
    for (line, e) in &rows {
        if e.start > e.end {
            return Err(record_error(path, *line, "start after end"));
        }
    }
    Ok(rows.into_iter().map(|(_, e)| e).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub shift_kappa: f64,
    pub residual: f64,
}

pub fn write_residuals(path: &Path, series: &ResidualSeries) -> Result<()> {
    let rows: Vec<ResidualRow> = series
        .shift_axis
        .iter()
        .zip(&series.residuals)
        .map(|(&shift_kappa, &residual)| ResidualRow { shift_kappa, residual })
        .collect();
    write_table(path, RESIDUAL_COLUMNS, &rows)
}

pub fn read_residuals(path: &Path) -> Result<Vec<ResidualRow>> {
    let rows: Vec<(u64, ResidualRow)> = read_table(path, RESIDUAL_COLUMNS)?;
    for (line, r) in &rows {
        check_finite(path, *line, &[("shift_kappa", r.shift_kappa), ("residual", r.residual)])?;
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub shift_kappa: f64,
    #[serde(rename = "freq_GHz")]
    pub freq_ghz: f64,
    pub peak_residual: f64,
}

pub fn write_events(path: &Path, events: &[DetectionEvent]) -> Result<()> {
    let rows: Vec<EventRow> = events
        .iter()
        .map(|e| EventRow { shift_kappa: e.shift_position, freq_ghz: e.frequency, peak_residual: e.peak_residual })
        .collect();
    write_table(path, EVENT_COLUMNS, &rows)
}

pub fn read_events(path: &Path) -> Result<Vec<EventRow>> {
    let rows: Vec<(u64, EventRow)> = read_table(path, EVENT_COLUMNS)?;
    for (line, r) in &rows {
        check_finite(path, *line, &[("shift_kappa", r.shift_kappa), ("freq_GHz", r.freq_ghz), ("peak_residual", r.peak_residual)])?;
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRow {
    pub n_t: usize,
    pub prob: f64,
}

pub fn write_posterior(path: &Path, pmf: &[f64]) -> Result<()> {
    let rows: Vec<PosteriorRow> = pmf.iter().enumerate().map(|(n_t, &prob)| PosteriorRow { n_t, prob }).collect();
    write_table(path, POSTERIOR_COLUMNS, &rows)
}

pub fn read_posterior(path: &Path) -> Result<Vec<f64>> {
    let rows: Vec<(u64, PosteriorRow)> = read_table(path, POSTERIOR_COLUMNS)?;
    let mut pmf = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if r.n_t != pmf.len() {
            return Err(record_error(path, line, format!("expected n_t = {}, found {}", pmf.len(), r.n_t)));
        }
        if !(r.prob >= 0.0 && r.prob <= 1.0) {
            return Err(record_error(path, line, format!("probability {} outside [0, 1]", r.prob)));
        }
        pmf.push(r.prob);
    }
    Ok(pmf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub treatment: String,
    pub resonator_id: String,
    pub rho: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn write_densities(path: &Path, rows: &[DensityRow]) -> Result<()> {
    write_table(path, DENSITY_COLUMNS, rows)
}

pub fn read_densities(path: &Path) -> Result<Vec<DensityRow>> {
    let rows: Vec<(u64, DensityRow)> = read_table(path, DENSITY_COLUMNS)?;
    for (line, r) in &rows {
        check_finite(path, *line, &[("rho", r.rho), ("ci_lo", r.ci_lo), ("ci_hi", r.ci_hi)])?;
        if r.rho < 0.0 {
            return Err(record_error(path, *line, format!("negative density {}", r.rho)));
        }
        if !(r.ci_lo <= r.rho && r.rho <= r.ci_hi) {
            return Err(record_error(path, *line, "rho must lie within [ci_lo, ci_hi]"));
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Densities grouped by treatment, in order of first appearance.
pub fn density_sets(rows: &[DensityRow]) -> Vec<DensitySampleSet> {
    let mut sets: Vec<DensitySampleSet> = Vec::new();
    for r in rows {
        match sets.iter_mut().find(|s| s.treatment_label == r.treatment) {
            Some(s) => s.densities.push(r.rho),
            None => sets.push(DensitySampleSet { treatment_label: r.treatment.clone(), densities: vec![r.rho] }),
        }
    }
    sets
}

pub fn write_morphology(path: &Path, records: &[MorphologyRecord]) -> Result<()> {
    write_table(path, MORPHOLOGY_COLUMNS, records)
}

pub fn read_morphology(path: &Path) -> Result<Vec<MorphologyRecord>> {
    let rows: Vec<(u64, MorphologyRecord)> = read_table(path, MORPHOLOGY_COLUMNS)?;
    for (line, r) in &rows {
        r.validate().map_err(|e| record_error(path, *line, e.to_string()))?;
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn exclusion_reason_name(reason: ExclusionReason) -> &'static str {
    match reason {
        ExclusionReason::Collision => "collision",
        ExclusionReason::PastMaximum => "past-maximum",
        ExclusionReason::Manual => "manual",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::FEATURE_NAMES;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn column_lists_agree_with_types() {
        assert_eq!(&MORPHOLOGY_COLUMNS[1..9], &FEATURE_NAMES[..]);
        let text = String::from_utf8(to_csv(FIT_COLUMNS, &[] as &[FitRow]).unwrap()).unwrap();
        assert_eq!(text.trim(), FIT_COLUMNS.join(","));
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let d = tmp();
        let p = d.path().join("t.csv");
        let freqs: Vec<f64> = (0..20).map(|k| 7.0 + k as f64 * 1e-4 / 3.0).collect();
        let s21 = freqs.iter().map(|f| Complex64::new(f.sin(), -f.cos() / 7.0)).collect();
        let t = Trace::new(freqs, s21, 2.7182818).unwrap();
        write_trace(&p, &t).unwrap();
        assert_eq!(read_trace(&p).unwrap(), t);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("current_mA,freq_GHz,re_s21,im_s21\n"));
    }

    #[test]
    fn corrupt_row_names_file_and_line() {
        let d = tmp();
        let p = d.path().join("t.csv");
        let mut text = String::from("current_mA,freq_GHz,re_s21,im_s21\n");
        for k in 0..20 {
            if k == 6 {
                text.push_str("1.0,7.6,abc,0.1\n");
            } else {
                text.push_str(&format!("1.0,{},0.5,0.1\n", 7.0 + k as f64 * 0.1));
            }
        }
        std::fs::write(&p, text).unwrap();
        let err = read_trace(&p).unwrap_err();
        match &err {
            Error::Record { path, line, .. } => {
                assert_eq!(path, &p);
                assert_eq!(*line, 8);
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("t.csv:8:"));
    }

    #[test]
    fn mixed_bias_is_rejected() {
        let d = tmp();
        let p = d.path().join("t.csv");
        let mut text = String::from("current_mA,freq_GHz,re_s21,im_s21\n");
        for k in 0..20 {
            text.push_str(&format!("{},{},0.5,0.1\n", if k == 10 { 2.0 } else { 1.0 }, 7.0 + k as f64 * 0.1));
        }
        std::fs::write(&p, text).unwrap();
        assert!(matches!(read_trace(&p), Err(Error::Record { line: 12, .. })));
    }

    #[test]
    fn schema_errors_name_the_column() {
        let d = tmp();
        let p = d.path().join("m.csv");
        std::fs::write(&p, "device_label,grain_width\nX,1\n").unwrap();
        let err = read_morphology(&p).unwrap_err().to_string();
        assert!(err.contains("missing column `electrode_thickness_mean`"), "{err}");
        let mut header = MORPHOLOGY_COLUMNS.join(",");
        header.push_str(",colour");
        std::fs::write(&p, format!("{header}\n")).unwrap();
        let err = read_morphology(&p).unwrap_err().to_string();
        assert!(err.contains("unexpected column `colour`"), "{err}");
    }

    #[test]
    fn morphology_and_density_round_trip() {
        let d = tmp();
        let rec = MorphologyRecord {
            device_label: "D1".into(),
            electrode_thickness_mean: 30.0,
            electrode_thickness_std: 2.0,
            electrode_thickness_rms: 30.1,
            grain_width_mean: 40.0,
            grain_width_std: 9.0,
            junction_thickness_mean: 2.1,
            junction_thickness_std: 0.3,
            junction_thickness_rms: 2.2,
            tls_density: 0.15,
        };
        let p = d.path().join("m.csv");
        write_morphology(&p, &[rec.clone()]).unwrap();
        assert_eq!(read_morphology(&p).unwrap(), vec![rec]);

        let rows = vec![
            DensityRow { treatment: "A".into(), resonator_id: "r1".into(), rho: 0.2, ci_lo: 0.1, ci_hi: 0.3 },
            DensityRow { treatment: "B".into(), resonator_id: "r2".into(), rho: 0.1, ci_lo: 0.0, ci_hi: 0.2 },
            DensityRow { treatment: "A".into(), resonator_id: "r3".into(), rho: 0.25, ci_lo: 0.2, ci_hi: 0.3 },
        ];
        let p = d.path().join("d.csv");
        write_densities(&p, &rows).unwrap();
        let back = read_densities(&p).unwrap();
        assert_eq!(back, rows);
        let sets = density_sets(&back);
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].densities, vec![0.2, 0.25]);
    }

    #[test]
    fn posterior_must_be_indexed_in_order() {
        let d = tmp();
        let p = d.path().join("p.csv");
        write_posterior(&p, &[0.5, 0.3, 0.2]).unwrap();
        assert_eq!(read_posterior(&p).unwrap(), vec![0.5, 0.3, 0.2]);
        std::fs::write(&p, "n_t,prob\n0,0.5\n2,0.5\n").unwrap();
        assert!(matches!(read_posterior(&p), Err(Error::Record { line: 3, .. })));
    }

    #[test]
    fn exclusions_use_kebab_case_reasons() {
        let d = tmp();
        let p = d.path().join("x.csv");
        let ex = vec![Exclusion { start: 3, end: 9, reason: ExclusionReason::PastMaximum }];
        write_exclusions(&p, &ex).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("3,9,past-maximum"));
        assert_eq!(read_exclusions(&p).unwrap(), ex);
        assert_eq!(exclusion_reason_name(ExclusionReason::PastMaximum), "past-maximum");
    }
}
