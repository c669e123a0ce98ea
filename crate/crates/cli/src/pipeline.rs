use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use tlsdetect::bayes::{density, detection_likelihood, posterior};
use tlsdetect::detector::{apply_exclusions, curve_follow, detect, DetectionConfig, DetectorCalibration, SweepDataset};
use tlsdetect::io::{
    density_sets, read_densities, read_json, read_morphology, read_trace, to_csv, write_atomic, write_densities,
    write_events, write_exclusions, write_fits, write_json, write_posterior, write_residuals, write_trace, DensityRow,
    EstimateFile, InferenceFile,
};
use tlsdetect::physics::VirtualInstrument;
use tlsdetect::rng::{child_seed, stage_rng, Stage};
use tlsdetect::stats::{
    compare_treatments, morphology_design, pearson, permutation_p_value, pool, ridge_permutation_importance, spearman,
    ClusterOptions, CorrelationKind, DensitySampleSet, RegressionOptions, TreatmentComparison, FEATURE_NAMES,
};

use crate::config::{invalid, LoadedConfig, ResonatorEntry};
use crate::manifest::{file_record, portable, sha256_hex, FileRecord, RunManifest, StageRecord};
use crate::plot::{Chart, Mark, Series};

/// Permutation repeats behind the optional permutation p-values.
const PERMUTATION_P_REPEATS: usize = 9999;

fn random_u64(mut rng: rand_chacha::ChaCha8Rng) -> u64 {
    use rand::Rng;
    rng.random()
}

/// Everything a stage needs.
pub struct Run {
    pub out: PathBuf,
    pub config: Option<LoadedConfig>,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub record_timings: bool,
    pub config_sha256: String,
}

impl Run {
    pub fn new(out: PathBuf, config: Option<LoadedConfig>, seed_override: Option<u64>, jobs: usize, record_timings: bool) -> Result<Self> {
        let seed = seed_override.or(config.as_ref().and_then(|c| c.config.seed));
        let config_sha256 = match &config {
            Some(c) => sha256_hex(&serde_json::to_vec(c)?),
            None => String::new(),
        };
        Ok(Run { out, config, seed, jobs: jobs.max(1), record_timings, config_sha256 })
    }

    fn loaded(&self) -> Result<&LoadedConfig> {
        self.config.as_ref().ok_or_else(|| anyhow!(invalid("this command needs --config")))
    }

    fn root_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn manifest(&self) -> Result<RunManifest> {
        RunManifest::open(&self.out, &self.config_sha256, self.seed)
    }

    /// Replace a stage's entry, recording the files it wrote.
    fn finish_stage(&self, manifest: &mut RunManifest, stage: &str, mut record: StageRecord, outputs: &[PathBuf], started: Instant) -> Result<()> {
        let mut files: Vec<FileRecord> = outputs.iter().map(|p| file_record(&self.out, p)).collect::<Result<_>>()?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        record.outputs = files;
        record.inputs.sort_by(|a, b| a.path.cmp(&b.path));
        if self.record_timings {
            record.elapsed_s = Some(started.elapsed().as_secs_f64());
        }
        manifest.stages.insert(stage.to_string(), record);
        manifest.save(&self.out)
    }

    /// Remove what a previous run of this stage left behind.
    fn clean_stage_dir(&self, stage: &str) -> Result<PathBuf> {
        let dir = self.out.join(stage);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        Ok(PathBuf::from(stage))
    }
}

/// Apply `f` to every item on up to `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(k, t)| f(k, t)).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs.min(items.len()))
            .map(|w| {
                let f = &f;
                scope.spawn(move || {
                    (w..items.len()).step_by(jobs).map(|k| (k, f(k, &items[k]))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (k, r) in h.join().expect("worker panicked") {
                slots[k] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// The first failure, after the manifest has recorded all of them.
fn first_failure(errors: Vec<anyhow::Error>, total: usize) -> Result<()> {
    let n = errors.len();
    match errors.into_iter().next() {
        None => Ok(()),
        Some(e) => Err(e.context(format!("{n} of {total} resonators failed"))),
    }
}

fn write_text(out: &Path, rel: &Path, text: &str) -> Result<()> {
    write_atomic(&out.join(rel), text.as_bytes())?;
    Ok(())
}

pub fn simulate(run: &Run) -> Result<()> {
    let started = Instant::now();
    let loaded = run.loaded()?;
    let mut manifest = run.manifest()?;
    let stage = run.clean_stage_dir("simulate")?;
    let sweep = loaded.config.sweep.clone();
    let root = run.root_seed();

    let entries: Vec<(usize, &ResonatorEntry)> = loaded.config.resonators.iter().enumerate().collect();
    let results = par_map(&entries, run.jobs, |_, &(k, entry)| -> Result<Vec<PathBuf>> {
        let Some(scenario) = &loaded.scenarios[k] else {
            return Ok(Vec::new());
        };
        let sweep = sweep.as_ref().expect("validated");
        let mut scenario = scenario.clone();
        scenario.rng_seed = random_u64(stage_rng(child_seed(root, k as u64), Stage::Simulate));
        let plan = loaded.bias_currents(&scenario)?;
        let start = scenario.tuned_params(plan[0]);
        let span = sweep.span_kappa * start.kappa();
        let mut instrument = VirtualInstrument::new(scenario)?;
        let data = curve_follow(&mut instrument, &plan, span, sweep.n_points, start.f_r)?;
        let width = data.len().to_string().len().max(3);
        let mut written = Vec::with_capacity(data.len());
        for (i, trace) in data.traces.iter().enumerate() {
            let rel = stage.join(&entry.id).join(format!("trace_{i:0width$}.csv"));
            write_trace(&run.out.join(&rel), trace)?;
            written.push(rel);
        }
        Ok(written)
    });

    let mut record = StageRecord::default();
    let mut outputs = Vec::new();
    let mut errors = Vec::new();
    for ((_, entry), r) in entries.iter().zip(results) {
        match r {
            Ok(files) if files.is_empty() => record.notices.push(format!("{}: measured traces, nothing to simulate", entry.id)),
            Ok(files) => outputs.extend(files),
            Err(e) => {
                record.failures.push(format!("{}: {e:#}", entry.id));
                errors.push(e.context(format!("resonator `{}`", entry.id)));
            }
        }
    }
    run.finish_stage(&mut manifest, "simulate", record, &outputs, started)?;
    first_failure(errors, entries.len())
}

/// Calibration summary written next to the detections.
#[derive(Serialize)]
struct CalibrationFile<'a> {
    kappa_ghz: f64,
    calibration: &'a DetectorCalibration,
    n_bins: usize,
    n_events: usize,
    swept_frequency_ghz: f64,
    excluded_traces: usize,
}

/// Trace files of a resonator with their manifest records.
fn trace_inputs(run: &Run, manifest: &RunManifest, loaded: &LoadedConfig, entry: &ResonatorEntry) -> Result<(Vec<PathBuf>, Vec<FileRecord>)> {
    match &entry.traces {
        None => {
            let prefix = format!("simulate/{}/", entry.id);
            let paths = manifest.verified_outputs(&run.out, "simulate", &prefix)?;
            if paths.is_empty() {
                bail!(invalid(format!("no simulated traces for `{}`; run `tlsdetect simulate` first", entry.id)));
            }
            let records = paths
                .iter()
                .map(|p| manifest.output_record("simulate", &portable(p.strip_prefix(&run.out).unwrap_or(p))).cloned())
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| anyhow!("manifest lost a simulate record"))?;
            Ok((paths, records))
        }
        Some(dir) => {
            let full = loaded.resolve(dir);
            let mut names: Vec<PathBuf> = std::fs::read_dir(&full)
                .with_context(|| format!("listing {}", full.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            names.sort();
            if names.is_empty() {
                bail!(invalid(format!("{} holds no .csv traces", full.display())));
            }
            let records = names
                .iter()
                .map(|p| file_record(&loaded.base_dir, p.strip_prefix(&loaded.base_dir).unwrap_or(p)))
                .collect::<Result<_>>()?;
            Ok((names, records))
        }
    }
}

fn residual_chart(id: &str, outcome: &tlsdetect::detector::DetectionOutcome) -> Chart {
    let s = &outcome.series;
    let valid: Vec<(f64, f64)> = s.shift_axis.iter().zip(&s.residuals).zip(&s.valid).map(|((&x, &y), &v)| (x, if v { y } else { f64::NAN })).collect();
    // Break the line at excluded stretches.
    let mut series = Vec::new();
    let mut run: Vec<(f64, f64)> = Vec::new();
    for p in valid {
        if p.1.is_finite() {
            run.push(p);
        } else if !run.is_empty() {
            series.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        series.push(run);
    }
    let mut chart = Chart {
        title: format!("{id}: residual metric along the sweep"),
        x_label: "frequency shift (linewidths)".into(),
        y_label: "residual metric".into(),
        hlines: vec![(outcome.calibration.threshold, "threshold".into())],
        ..Default::default()
    };
    let mut first = true;
    for pts in series {
        chart.series.push(Series::new(if first { "residual" } else { "" }, Mark::Line, pts));
        first = false;
    }
    chart.series.push(Series::new(
        "detections",
        Mark::Points,
        outcome.events.iter().map(|e| (e.shift_position, e.peak_residual)).collect(),
    ));
    chart
}

pub fn detect_stage(run: &Run) -> Result<()> {
    let started = Instant::now();
    let loaded = run.loaded()?;
    let mut manifest = run.manifest()?;
    let stage = run.clean_stage_dir("detect")?;
    let root = run.root_seed();
    let settings = &loaded.config.detect;

    let entries: Vec<(usize, &ResonatorEntry)> = loaded.config.resonators.iter().enumerate().collect();
    let inputs: Vec<Result<(Vec<PathBuf>, Vec<FileRecord>)>> =
        entries.iter().map(|(_, e)| trace_inputs(run, &manifest, loaded, e)).collect();

    let results = par_map(&entries, run.jobs, |i, &(k, entry)| -> (Vec<PathBuf>, Result<()>) {
        let mut written = Vec::new();
        let result = (|| -> Result<()> {
            let (paths, _) = inputs[i].as_ref().map_err(|e| anyhow!("{e:#}"))?;
            let traces = paths.iter().map(|p| read_trace(p)).collect::<tlsdetect::Result<Vec<_>>>()?;
            let sweep = SweepDataset::from_traces(traces)?;
            let sweep = apply_exclusions(&sweep, &entry.exclusions)?;
            let dir = stage.join(&entry.id);
            // Fits and exclusions first, so they survive a calibration failure.
            write_fits(&run.out.join(dir.join("fits.csv")), &sweep.traces, &sweep.fits)?;
            written.push(dir.join("fits.csv"));
            write_exclusions(&run.out.join(dir.join("exclusions.csv")), &sweep.exclusions)?;
            written.push(dir.join("exclusions.csv"));

            let child = child_seed(root, k as u64);
            let mut noise = settings.noise;
            noise.seed = random_u64(stage_rng(child, Stage::NoiseCalibration));
            let mut threshold = settings.threshold;
            threshold.seed = random_u64(stage_rng(child, Stage::Threshold));
            let cfg = DetectionConfig {
                calibration_interval: settings.calibration_interval,
                manual_exclusions: entry.exclusions.clone(),
                noise,
                threshold,
            };
            let outcome = detect(&sweep, &cfg)?;
            let input = outcome.inference_input()?;
            let delta_f = outcome.series.swept_frequency();

            for (name, bytes) in [
                ("residuals.csv", None),
                ("events.csv", None),
                ("calibration.json", Some(tlsdetect::io::to_json(&CalibrationFile {
                    kappa_ghz: outcome.kappa,
                    calibration: &outcome.calibration,
                    n_bins: input.n_bins,
                    n_events: outcome.events.len(),
                    swept_frequency_ghz: delta_f,
                    excluded_traces: sweep.len() - sweep.included().len(),
                })?)),
                ("inference.json", Some(tlsdetect::io::to_json(&InferenceFile::new(&input, delta_f, entry.area_um2))?)),
                ("residuals.svg", Some(residual_chart(&entry.id, &outcome).to_svg().into_bytes())),
            ] {
                let rel = dir.join(name);
                let path = run.out.join(&rel);
                match (name, bytes) {
                    ("residuals.csv", _) => write_residuals(&path, &outcome.series)?,
                    ("events.csv", _) => write_events(&path, &outcome.events)?,
                    (_, Some(b)) => write_atomic(&path, &b)?,
                    _ => unreachable!(),
                }
                written.push(rel);
            }
            Ok(())
        })();
        (written, result)
    });

    let mut record = StageRecord::default();
    for r in inputs.iter().flatten() {
        record.inputs.extend(r.1.iter().cloned());
    }
    let mut outputs = Vec::new();
    let mut errors = Vec::new();
    for ((_, entry), (written, r)) in entries.iter().zip(results) {
        outputs.extend(written);
        if let Err(e) = r {
            record.failures.push(format!("{}: {e:#}", entry.id));
            errors.push(e.context(format!("resonator `{}`", entry.id)));
        }
    }
    run.finish_stage(&mut manifest, "detect", record, &outputs, started)?;
    first_failure(errors, entries.len())
}

fn posterior_chart(title: &str, input: &tlsdetect::bayes::InferenceInput, pmf: &[f64]) -> Result<Chart> {
    // Likelihood of the observed count for each true count, scaled to peak 1.
    let like: Vec<f64> = (0..pmf.len())
        .map(|n_t| detection_likelihood(input.n_detected, n_t, input.n_bins, &input.rates))
        .collect::<tlsdetect::Result<_>>()?;
    let peak = like.iter().copied().fold(0.0, f64::max);
    let pmax = pmf.iter().copied().fold(0.0, f64::max);
    let scale = if peak > 0.0 { pmax / peak } else { 0.0 };
    let last = pmf.iter().rposition(|&p| p > 1e-6 * pmax).unwrap_or(0).max(like.iter().rposition(|&l| l > 1e-6 * peak).unwrap_or(0));
    let n = (last + 2).min(pmf.len());
    Ok(Chart {
        title: title.to_string(),
        x_label: "true TLS count".into(),
        y_label: "probability".into(),
        series: vec![
            Series::new("posterior", Mark::Bars { width: 0.8 }, (0..n).map(|k| (k as f64, pmf[k])).collect()),
            Series::new("likelihood (scaled)", Mark::Line, (0..n).map(|k| (k as f64, like[k] * scale)).collect()),
        ],
        ..Default::default()
    })
}

/// Posterior, estimate and plot for one inference file, written under `dir`.
fn infer_one(out: &Path, dir: &Path, title: &str, file: &InferenceFile) -> Result<(EstimateFile, Vec<PathBuf>)> {
    if !(file.delta_f_ghz > 0.0) || !(file.area_um2 > 0.0) {
        bail!(invalid(format!(
            "delta_f_ghz and area_um2 must be positive (got {} and {})",
            file.delta_f_ghz, file.area_um2
        )));
    }
    let input = file.to_input()?;
    let post = posterior(&input)?;
    let est = density(&post, file.delta_f_ghz, file.area_um2)?;
    let estimate = EstimateFile::new(&input, &post, &est);
    let files = [dir.join("posterior.csv"), dir.join("estimate.json"), dir.join("posterior.svg")];
    write_posterior(&out.join(&files[0]), &post.pmf)?;
    write_json(&out.join(&files[1]), &estimate)?;
    write_text(out, &files[2], &posterior_chart(title, &input, &post.pmf)?.to_svg())?;
    Ok((estimate, files.to_vec()))
}

/// `infer` on a single inference file, outside any pipeline.
pub fn infer_file(run: &Run, input: &Path) -> Result<()> {
    let started = Instant::now();
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    // The input file stands in for the config when tying the directory to a run.
    let run = Run { out: run.out.clone(), config: None, seed: None, jobs: 1, record_timings: run.record_timings, config_sha256: sha256_hex(&bytes) };
    let mut manifest = run.manifest()?;
    let file: InferenceFile = read_json(input)?;
    let (_, outputs) = infer_one(&run.out, Path::new(""), "posterior", &file)?;
    let name = input.file_name().map(PathBuf::from).unwrap_or_default();
    let record = StageRecord {
        inputs: vec![FileRecord { path: portable(&name), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 }],
        ..Default::default()
    };
    run.finish_stage(&mut manifest, "infer", record, &outputs, started)
}

pub fn infer_stage(run: &Run) -> Result<()> {
    let started = Instant::now();
    let loaded = run.loaded()?;
    let mut manifest = run.manifest()?;
    let stage = run.clean_stage_dir("infer")?;
    let detect_outputs = manifest.verified_outputs(&run.out, "detect", "detect/")?;

    let mut record = StageRecord::default();
    let mut outputs = Vec::new();
    let mut errors = Vec::new();
    let mut rows = Vec::new();
    for entry in &loaded.config.resonators {
        let rel = format!("detect/{}/inference.json", entry.id);
        let Some(path) = detect_outputs.iter().find(|p| p.ends_with(&rel)) else {
            record.notices.push(format!("{}: no detection results, skipped", entry.id));
            continue;
        };
        record.inputs.push(manifest.output_record("detect", &rel).cloned().expect("verified"));
        let result = (|| -> Result<EstimateFile> {
            let file: InferenceFile = read_json(path)?;
            let (estimate, files) = infer_one(&run.out, &stage.join(&entry.id), &format!("{}: posterior TLS count", entry.id), &file)?;
            outputs.extend(files);
            Ok(estimate)
        })();
        match result {
            Ok(e) => rows.push(DensityRow {
                treatment: entry.treatment.clone(),
                resonator_id: entry.id.clone(),
                rho: e.rho,
                ci_lo: e.ci68.0,
                ci_hi: e.ci68.1,
            }),
            Err(e) => {
                record.failures.push(format!("{}: {e:#}", entry.id));
                errors.push(e.context(format!("resonator `{}`", entry.id)));
            }
        }
    }
    let densities = stage.join("densities.csv");
    write_densities(&run.out.join(&densities), &rows)?;
    outputs.push(densities);
    let total = loaded.config.resonators.len();
    run.finish_stage(&mut manifest, "infer", record, &outputs, started)?;
    first_failure(errors, total)
}

/// Where `correlate` takes its tables from.
pub struct CorrelateInputs {
    pub densities: PathBuf,
    pub morphology: Option<PathBuf>,
}

#[derive(Serialize)]
struct NormalityCsv<'a> {
    treatment: &'a str,
    n: usize,
    #[serde(rename = "W")]
    w: Option<f64>,
    p: Option<f64>,
    rejected: Option<bool>,
}

#[derive(Serialize)]
struct PairwiseCsv<'a> {
    first: &'a str,
    second: &'a str,
    #[serde(rename = "H")]
    h: f64,
    p: f64,
    significant: bool,
}

#[derive(Serialize)]
struct GammaCsv<'a> {
    treatment: &'a str,
    n: usize,
    shape: Option<f64>,
    scale: Option<f64>,
    mean: Option<f64>,
    mean_stderr: Option<f64>,
}

#[derive(Serialize)]
struct CorrelationCsv<'a> {
    feature: &'a str,
    pearson_r: f64,
    pearson_p: f64,
    permutation_p: f64,
    spearman_rho: f64,
    spearman_p: f64,
}

#[derive(Serialize)]
struct ImportanceCsv<'a> {
    rank: usize,
    feature: &'a str,
    mean: f64,
    std: f64,
}

/// Pool treatments as configured; pooled sets take the place of their first member.
fn pooled_sets(sets: Vec<DensitySampleSet>, groups: &std::collections::BTreeMap<String, Vec<String>>, notices: &mut Vec<String>) -> Vec<DensitySampleSet> {
    let mut out: Vec<DensitySampleSet> = Vec::new();
    let mut done: Vec<&str> = Vec::new();
    for s in &sets {
        match groups.iter().find(|(_, members)| members.contains(&s.treatment_label)) {
            Some((label, members)) => {
                if done.contains(&label.as_str()) {
                    continue;
                }
                done.push(label);
                let parts: Vec<&DensitySampleSet> = sets.iter().filter(|t| members.contains(&t.treatment_label)).collect();
                if parts.len() < members.len() {
                    notices.push(format!("pool {label}: some of {members:?} have no densities"));
                }
                out.push(pool(label, &parts));
            }
            None => out.push(s.clone()),
        }
    }
    out
}

fn gamma_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if x <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()).exp()
}

fn density_chart(cmp: &TreatmentComparison, sets: &[DensitySampleSet]) -> Chart {
    let all: Vec<f64> = sets.iter().flat_map(|s| s.densities.iter().copied()).collect();
    let hi = all.iter().copied().fold(0.0, f64::max).max(1e-12) * 1.1;
    let bins = 12;
    let width = hi / bins as f64;
    let mut chart = Chart {
        title: "TLS density by treatment".into(),
        x_label: "TLS density (/GHz/um^2)".into(),
        y_label: "resonators".into(),
        ..Default::default()
    };
    for (s, g) in sets.iter().zip(&cmp.gamma) {
        let mut counts = vec![0.0; bins];
        for &d in &s.densities {
            counts[((d / width) as usize).min(bins - 1)] += 1.0;
        }
        chart.series.push(Series::new(
            format!("{} (n={})", s.treatment_label, s.densities.len()),
            Mark::Bars { width: width * 0.9 },
            counts.iter().enumerate().map(|(k, &c)| ((k as f64 + 0.5) * width, c)).collect(),
        ));
        if let Some(fit) = g.fit {
            let n = s.densities.len() as f64;
            chart.series.push(Series::new(
                format!("{} gamma fit", s.treatment_label),
                Mark::Line,
                (1..=120).map(|k| {
                    let x = hi * k as f64 / 120.0;
                    (x, n * width * gamma_pdf(x, fit.shape, fit.scale))
                })
                .collect(),
            ));
        }
    }
    chart
}

pub fn correlate(run: &Run, inputs: &CorrelateInputs) -> Result<()> {
    let started = Instant::now();
    let mut manifest = run.manifest()?;
    let stage = run.clean_stage_dir("correlate")?;
    let settings = run.config.as_ref().map(|c| c.config.correlate.clone()).unwrap_or_default();
    let mut record = StageRecord::default();
    for p in std::iter::once(&inputs.densities).chain(inputs.morphology.as_ref()) {
        let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let rel = p.strip_prefix(&run.out).map(Path::to_path_buf).unwrap_or_else(|_| PathBuf::from(p.file_name().unwrap_or_default()));
        record.inputs.push(FileRecord { path: portable(&rel), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
    }

    let rows = read_densities(&inputs.densities)?;
    let sets = pooled_sets(density_sets(&rows), &settings.pool, &mut record.notices);
    let cmp = compare_treatments(&sets, settings.significance)?;
    record.notices.extend(cmp.notices.iter().cloned());

    let mut outputs = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let rel = stage.join(name);
        write_atomic(&run.out.join(&rel), &bytes)?;
        outputs.push(rel);
        Ok(())
    };
    put(
        "normality.csv",
        to_csv(
            &["treatment", "n", "W", "p", "rejected"],
            &cmp.normality.iter().map(|r| NormalityCsv { treatment: &r.treatment, n: r.n, w: r.w, p: r.p_value, rejected: r.rejected }).collect::<Vec<_>>(),
        )?,
    )?;
    put(
        "pairwise.csv",
        to_csv(
            &["first", "second", "H", "p", "significant"],
            &cmp.pairwise.iter().map(|r| PairwiseCsv { first: &r.first, second: &r.second, h: r.h, p: r.p_value, significant: r.significant }).collect::<Vec<_>>(),
        )?,
    )?;
    put(
        "gamma.csv",
        to_csv(
            &["treatment", "n", "shape", "scale", "mean", "mean_stderr"],
            &cmp.gamma
                .iter()
                .zip(&sets)
                .map(|(g, s)| GammaCsv {
                    treatment: &g.treatment,
                    n: s.densities.len(),
                    shape: g.fit.map(|f| f.shape),
                    scale: g.fit.map(|f| f.scale),
                    mean: g.fit.map(|f| f.mean),
                    mean_stderr: g.fit.map(|f| f.mean_stderr),
                })
                .collect::<Vec<_>>(),
        )?,
    )?;
    put("treatments.json", tlsdetect::io::to_json(&cmp)?)?;
    put("densities.svg", density_chart(&cmp, &sets).to_svg().into_bytes())?;

    match &inputs.morphology {
        None => record.notices.push("no morphology table; correlation analysis skipped".into()),
        Some(path) => {
            let records = read_morphology(path)?;
            let (columns, target) = morphology_design(&records)?;
            let root = run.root_seed();
            let perm_seed = random_u64(stage_rng(root, Stage::Correlate));
            let mut table = Vec::new();
            for (j, name) in FEATURE_NAMES.iter().enumerate() {
                let p = pearson(&columns[j], &target).with_context(|| format!("feature `{name}`"))?;
                let s = spearman(&columns[j], &target).with_context(|| format!("feature `{name}`"))?;
                let perm = permutation_p_value(CorrelationKind::Pearson, &columns[j], &target, PERMUTATION_P_REPEATS, perm_seed.wrapping_add(j as u64))?;
                table.push(CorrelationCsv { feature: name, pearson_r: p.statistic, pearson_p: p.p_value, permutation_p: perm, spearman_rho: s.statistic, spearman_p: s.p_value });
            }
            put("correlations.csv", to_csv(&["feature", "pearson_r", "pearson_p", "permutation_p", "spearman_rho", "spearman_p"], &table)?)?;

            let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
            let opts = RegressionOptions {
                cluster: ClusterOptions { alpha: settings.ridge_alpha, rule: settings.cut_rule },
                repeats: settings.permutation_repeats,
                seed: random_u64(stage_rng(root, Stage::Permutation)),
            };
            let report = ridge_permutation_importance(&names, &columns, &target, &opts)?;
            put("regression.json", tlsdetect::io::to_json(&report)?)?;
            put(
                "importance.csv",
                to_csv(
                    &["rank", "feature", "mean", "std"],
                    &report.importances.iter().enumerate().map(|(k, i)| ImportanceCsv { rank: k + 1, feature: &i.feature, mean: i.mean, std: i.std }).collect::<Vec<_>>(),
                )?,
            )?;
            let mut bars = Series::new("LOOCV R^2 drop", Mark::ErrorBars, report.importances.iter().enumerate().map(|(k, i)| (k as f64, i.mean)).collect());
            bars.errors = report.importances.iter().map(|i| i.std).collect();
            let chart = Chart {
                title: "Permutation importance of representative features".into(),
                x_label: "feature".into(),
                y_label: "mean drop in LOOCV R^2".into(),
                series: vec![bars],
                hlines: vec![(0.0, String::new())],
                x_categories: report.importances.iter().map(|i| i.feature.clone()).collect(),
            };
            put("importance.svg", chart.to_svg().into_bytes())?;
            let top = FEATURE_NAMES.iter().position(|n| *n == report.top_feature()).expect("known feature");
            let scatter = Chart {
                title: format!("TLS density against {}", FEATURE_NAMES[top]),
                x_label: format!("{} (nm)", FEATURE_NAMES[top]),
                y_label: "TLS density (/GHz/um^2)".into(),
                series: vec![Series::new("devices", Mark::Points, columns[top].iter().copied().zip(target.iter().copied()).collect())],
                ..Default::default()
            };
            put("top_feature.svg", scatter.to_svg().into_bytes())?;
        }
    }
    run.finish_stage(&mut manifest, "correlate", record, &outputs, started)
}

/// `correlate` within a pipeline run: densities from `infer`, morphology from the config.
pub fn correlate_stage(run: &Run) -> Result<()> {
    let loaded = run.loaded()?;
    let manifest = run.manifest()?;
    let densities = manifest
        .verified_outputs(&run.out, "infer", "infer/densities.csv")?
        .into_iter()
        .next()
        .ok_or_else(|| anyhow!(invalid("`infer` wrote no densities table")))?;
    let morphology = loaded.config.correlate.morphology.as_ref().map(|m| loaded.resolve(m));
    correlate(run, &CorrelateInputs { densities, morphology })
}

/// Markdown summary of every finished stage.
pub fn report(run: &Run) -> Result<()> {
    use std::fmt::Write;
    let started = Instant::now();
    let mut manifest = run.manifest()?;
    let stage = run.clean_stage_dir("report")?;
    let mut md = String::from("# TLS detection run\n\n");
    let _ = writeln!(md, "Seed: {}\n", run.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into()));
    let mut record = StageRecord::default();

    if let Some(loaded) = &run.config {
        if manifest.stages.contains_key("infer") {
            md.push_str("## Resonators\n\n| resonator | treatment | events | bins | rho (/GHz/um^2) | 68% interval |\n|---|---|---|---|---|---|\n");
            for entry in &loaded.config.resonators {
                let rel = format!("infer/{}/estimate.json", entry.id);
                match manifest.verified_outputs(&run.out, "infer", &rel)?.first() {
                    Some(p) => {
                        let e: EstimateFile = read_json(p)?;
                        record.inputs.push(manifest.output_record("infer", &rel).cloned().expect("verified"));
                        let _ = writeln!(
                            md,
                            "| {} | {} | {} | {} | {:.4} | [{:.4}, {:.4}] |",
                            entry.id, entry.treatment, e.n_detected, e.n_bins, e.rho, e.ci68.0, e.ci68.1
                        );
                    }
                    None => {
                        let _ = writeln!(md, "| {} | {} | - | - | failed | - |", entry.id, entry.treatment);
                    }
                }
            }
            md.push('\n');
        }
    }
    if manifest.stages.contains_key("correlate") {
        let rel = "correlate/treatments.json";
        if let Some(p) = manifest.verified_outputs(&run.out, "correlate", rel)?.first() {
            let cmp: TreatmentComparison = read_json(p)?;
            record.inputs.push(manifest.output_record("correlate", rel).cloned().expect("verified"));
            md.push_str("## Treatments\n\n| treatment | n | Shapiro-Wilk p | gamma mean | stderr |\n|---|---|---|---|---|\n");
            for (n, g) in cmp.normality.iter().zip(&cmp.gamma) {
                let p = n.p_value.map(|p| format!("{p:.3}")).unwrap_or_else(|| "-".into());
                let (m, se) = g.fit.map(|f| (format!("{:.4}", f.mean), format!("{:.4}", f.mean_stderr))).unwrap_or(("-".into(), "-".into()));
                let _ = writeln!(md, "| {} | {} | {p} | {m} | {se} |", n.treatment, n.n);
            }
            if !cmp.pairwise.is_empty() {
                md.push_str("\n| pair | Kruskal-Wallis H | p | significant |\n|---|---|---|---|\n");
                for r in &cmp.pairwise {
                    let _ = writeln!(md, "| {} vs {} | {:.3} | {:.4} | {} |", r.first, r.second, r.h, r.p_value, if r.significant { "yes" } else { "no" });
                }
            }
            md.push('\n');
        }
        let rel = "correlate/regression.json";
        if let Some(p) = manifest.verified_outputs(&run.out, "correlate", rel)?.first() {
            let reg: tlsdetect::stats::RegressionReport = read_json(p)?;
            record.inputs.push(manifest.output_record("correlate", rel).cloned().expect("verified"));
            let _ = writeln!(md, "## Microstructure\n\nLOOCV R^2 {:.3} at ridge alpha {:.3}, {} feature clusters.\n", reg.loocv_r2, reg.ridge_alpha, reg.feature_clusters.len());
            md.push_str("| rank | feature | importance | std |\n|---|---|---|---|\n");
            for (k, i) in reg.importances.iter().enumerate() {
                let _ = writeln!(md, "| {} | {} | {:.4} | {:.4} |", k + 1, i.feature, i.mean, i.std);
            }
            md.push('\n');
        }
    }
    let mut issues = Vec::new();
    for (name, s) in &manifest.stages {
        for n in &s.notices {
            issues.push(format!("- {name}: {n}"));
        }
        for f in &s.failures {
            issues.push(format!("- {name} FAILED: {f}"));
        }
    }
    if !issues.is_empty() {
        md.push_str("## Notices\n\n");
        md.push_str(&issues.join("\n"));
        md.push('\n');
    }
    let rel = stage.join("summary.md");
    write_text(&run.out, &rel, &md)?;
    run.finish_stage(&mut manifest, "report", record, &[rel], started)
}
