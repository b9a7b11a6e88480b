//! The `cstq` command line.
//!
//! Exit codes: 0 success, 2 input validation, 3 model or file format,
//! 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthChoice;
use crate::error::Error;
use crate::io::{fmt_f64, read_dataset, read_query, IoError, ModelEnvelope, Provenance};
use crate::model::{FitSettings, Strategy};
use crate::quantreg::Kernel;
use crate::simulation::{table_markdown, write_table_csv, ExperimentFile};
use crate::tail::{BaselineAnchor, KRule};
use crate::verification::{
    grouped_cv, mean_qvss, write_reliability_csv, write_report_csv, CvOptions, RowFilter,
};
use crate::zeroinfl::CovariateKind;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "cstq",
    version,
    about = "Extreme conditional quantiles with a common-shape tail"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write model.json.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict quantiles for the rows of a query CSV; writes quantiles.csv.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Comma-separated levels; defaults to the configured `taus`.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
    },
    /// Leave-one-group-out verification; writes report.csv, reliability.csv
    /// and verify.json.
    Verify {
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a simulation design; writes table.csv, table.md and
    /// simulate.json.
    Simulate {
        #[arg(long)]
        design: PathBuf,
    },
    /// Select the threshold-curve bandwidth; writes h.json and
    /// diagnostics.csv.
    Bandwidth {
        #[arg(long)]
        data: PathBuf,
    },
}

fn default_tau_c() -> f64 {
    0.95
}
fn default_taus() -> Vec<f64> {
    vec![0.95, 0.99]
}
fn default_trim() -> usize {
    3
}
fn default_n_bins() -> usize {
    10
}

/// Contents of `--config`. Every field has a default; the resolved values
/// are echoed in the provenance block of each output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_tau_c")]
    pub tau_c: f64,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub k_rule: Option<KRule>,
    #[serde(default)]
    pub h: BandwidthChoice,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub estimator: Strategy,
    #[serde(default)]
    pub filter: Option<RowFilter>,
    #[serde(default = "default_trim")]
    pub trim: usize,
    #[serde(default)]
    pub anchor: BaselineAnchor,
    #[serde(default)]
    pub ridge: Option<f64>,
    #[serde(default)]
    pub covariate_kind: CovariateKind,
    #[serde(default = "default_n_bins")]
    pub n_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults parse")
    }
}

impl RunConfig {
    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            strategy: self.estimator,
            tau_c: self.tau_c,
            k_rule: Some(self.k_rule.unwrap_or(match self.estimator {
                Strategy::LinearBaseline => KRule::NThirdBaseline,
                _ => KRule::NQuarter,
            })),
            h: self.h.clone(),
            kernel: self.kernel,
            trim: self.trim,
            anchor: self.anchor,
            ridge: self.ridge,
            covariate_kind: self.covariate_kind,
        }
    }

    fn resolved(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.k_rule = self.fit_settings().k_rule;
        serde_json::to_value(c).expect("config serializes")
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn core_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => EXIT_INPUT,
        _ => EXIT_NUMERIC,
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let code = match &e {
            IoError::File { .. }
            | IoError::MissingColumn(_)
            | IoError::Row { .. }
            | IoError::Csv(_)
            | IoError::Json(_) => EXIT_INPUT,
            IoError::ModelFormat(_) => EXIT_FORMAT,
            IoError::Core(c) => core_code(c),
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: core_code(&e),
            message: e.to_string(),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&path, bytes))
        .map_err(|e| CliError {
            code: EXIT_INPUT,
            message: format!("{}: {e}", path.display()),
        })?;
    Ok(path)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s.into_bytes()
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let bytes = read(p)?;
            serde_json::from_slice(&bytes)
                .map_err(|e| IoError::Json(format!("{}: {e}", p.display())).into())
        }
    }
}

fn validate_taus(taus: &[f64]) -> Result<(), CliError> {
    if taus.is_empty() {
        return Err(CliError {
            code: EXIT_INPUT,
            message: "no levels given".into(),
        });
    }
    for &t in taus {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError {
                code: EXIT_INPUT,
                message: format!("level {t} is outside (0, 1)"),
            });
        }
    }
    Ok(())
}

/// Runs a parsed command line; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_INPUT;
        }
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let mut config = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let out = &cli.output_dir;
    match &cli.command {
        Command::Fit { data } => cmd_fit(&config, data, out),
        Command::Predict { model, query, taus } => {
            cmd_predict(&config, model, query, taus.as_deref(), out)
        }
        Command::Verify { data } => cmd_verify(&config, data, out),
        Command::Simulate { design } => cmd_simulate(cli.seed, design, out),
        Command::Bandwidth { data } => cmd_bandwidth(&config, data, out),
    }
}

fn cmd_fit(config: &RunConfig, data: &Path, out: &Path) -> Result<i32, CliError> {
    let bytes = read(data)?;
    let d = read_dataset(&bytes)?;
    let model = config
        .fit_settings()
        .fit(&d.sample()?, d.zs.as_deref(), config.seed)?;
    let prov = Provenance::new(
        "fit",
        config.seed,
        config.resolved(),
        Some(&bytes),
        Some(d.len()),
    );
    let env = ModelEnvelope::wrap(&model, prov);
    write(out, "model.json", env.to_json().as_bytes())?;
    Ok(EXIT_OK)
}

fn cmd_predict(
    config: &RunConfig,
    model: &Path,
    query: &Path,
    taus: Option<&[f64]>,
    out: &Path,
) -> Result<i32, CliError> {
    let taus = taus.unwrap_or(&config.taus);
    validate_taus(taus)?;
    let env = ModelEnvelope::from_json(&read(model)?)?;
    let m = env.unwrap_model()?;
    let q = read_query(&read(query)?)?;
    let has_z = q.zs.is_some();
    let mut failed = false;
    let bytes = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec!["row", "x"];
        if has_z {
            header.push("z");
        }
        header.extend(["tau", "quantile", "error"]);
        w.write_record(&header)?;
        for (i, &x) in q.xs.iter().enumerate() {
            let z = q.zs.as_ref().map(|z| z[i]);
            for &tau in taus {
                let mut rec = vec![i.to_string(), fmt_f64(x)];
                if let Some(z) = z {
                    rec.push(fmt_f64(z));
                }
                rec.push(fmt_f64(tau));
                match m.quantile(tau, x, z) {
                    Ok(v) => rec.extend([fmt_f64(v), String::new()]),
                    Err(e) => {
                        failed = true;
                        rec.extend([String::new(), e.to_string()]);
                    }
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()
    });
    write(out, "quantiles.csv", &bytes)?;
    if failed {
        eprintln!("error: some predictions failed; see the error column of quantiles.csv");
        return Ok(EXIT_NUMERIC);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VerifySummary {
    provenance: Provenance,
    mean_qvss: Vec<(f64, f64)>,
    scored_rows: usize,
    skipped: Vec<(String, String)>,
}

fn cmd_verify(config: &RunConfig, data: &Path, out: &Path) -> Result<i32, CliError> {
    validate_taus(&config.taus)?;
    let bytes = read(data)?;
    let d = read_dataset(&bytes)?;
    let opts = CvOptions {
        taus: config.taus.clone(),
        filter: config.filter,
        n_bins: config.n_bins,
        seed: config.seed,
    };
    let cv = grouped_cv(&d, &config.fit_settings(), &opts)?;
    for (g, reason) in &cv.skipped {
        eprintln!("warning: group {g} skipped: {reason}");
    }
    write(
        out,
        "report.csv",
        &csv_bytes(|b| write_report_csv(&cv.reports, b)),
    )?;
    write(
        out,
        "reliability.csv",
        &csv_bytes(|b| write_reliability_csv(&cv.reports, b)),
    )?;
    let summary = VerifySummary {
        provenance: Provenance::new(
            "verify",
            config.seed,
            config.resolved(),
            Some(&bytes),
            Some(d.len()),
        ),
        mean_qvss: config
            .taus
            .iter()
            .map(|&t| (t, mean_qvss(&cv.reports, t)))
            .collect(),
        scored_rows: cv
            .reports
            .iter()
            .filter(|r| r.tau == config.taus[0])
            .map(|r| r.n)
            .sum(),
        skipped: cv.skipped.clone(),
    };
    write(out, "verify.json", &json_bytes(&summary))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SimulateSummary {
    provenance: Provenance,
    rows: usize,
    failures: usize,
}

fn cmd_simulate(seed: Option<u64>, design: &Path, out: &Path) -> Result<i32, CliError> {
    let bytes = read(design)?;
    let file: ExperimentFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::from(IoError::Json(format!("{}: {e}", design.display()))))?;
    let rows = file.run(seed)?;
    write(out, "table.csv", &csv_bytes(|b| write_table_csv(&rows, b)))?;
    write(out, "table.md", table_markdown(&rows).as_bytes())?;
    let summary = SimulateSummary {
        provenance: Provenance::new(
            "simulate",
            seed.unwrap_or(file.seed),
            serde_json::to_value(&file).expect("design serializes"),
            Some(&bytes),
            None,
        ),
        rows: rows.len(),
        failures: rows.iter().map(|r| r.failures).sum(),
    };
    write(out, "simulate.json", &json_bytes(&summary))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct BandwidthOutput {
    h: f64,
    provenance: Provenance,
}

fn cmd_bandwidth(config: &RunConfig, data: &Path, out: &Path) -> Result<i32, CliError> {
    let bytes = read(data)?;
    let d = read_dataset(&bytes)?;
    let settings = config.fit_settings();
    let sample = d.sample()?;
    let (h, diagnostics) = match settings.bandwidth_scores(&sample, config.seed)? {
        Some(scores) => (scores.argmin()?, csv_bytes(|b| scores.write_csv(b))),
        None => (
            settings.select_bandwidth(&sample, config.seed)?,
            csv_bytes(|b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["h", "mean_S", "se_S"])?;
                w.flush()
            }),
        ),
    };
    let prov = Provenance::new(
        "bandwidth",
        config.seed,
        config.resolved(),
        Some(&bytes),
        Some(d.len()),
    );
    write(
        out,
        "h.json",
        &json_bytes(&BandwidthOutput {
            h,
            provenance: prov,
        }),
    )?;
    write(out, "diagnostics.csv", &diagnostics)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_rejection() {
        let c = RunConfig::default();
        assert_eq!(c.tau_c, 0.95);
        assert_eq!(c.n_bins, 10);
        assert!(serde_json::from_str::<RunConfig>(r#"{"tau": 0.9}"#).is_err());
        let c: RunConfig = serde_json::from_str(
            r#"{"k_rule": {"fixed": 7}, "filter": "x > 5", "h": {"loocv": {}}}"#,
        )
        .unwrap();
        assert_eq!(c.k_rule, Some(KRule::Fixed(7)));
        assert_eq!(c.filter.unwrap().value, 5.0);
        assert_eq!(c.resolved()["filter"], "x>5.0");
    }

    #[test]
    fn resolved_config_records_k_rule() {
        let c = RunConfig::default();
        assert_eq!(c.resolved()["k_rule"], "n_quarter");
        let c: RunConfig = serde_json::from_str(r#"{"estimator": "linear_baseline"}"#).unwrap();
        assert_eq!(c.resolved()["k_rule"], "n_third_baseline");
    }

    #[test]
    fn error_codes() {
        assert_eq!(
            CliError::from(IoError::MissingColumn("y".into())).code,
            EXIT_INPUT
        );
        assert_eq!(
            CliError::from(IoError::ModelFormat("x".into())).code,
            EXIT_FORMAT
        );
        assert_eq!(
            CliError::from(Error::NonPositiveThreshold {
                threshold: 0.0,
                k: 1,
                n: 2
            })
            .code,
            EXIT_NUMERIC
        );
        assert_eq!(CliError::from(Error::Domain("x".into())).code, EXIT_INPUT);
    }
}
