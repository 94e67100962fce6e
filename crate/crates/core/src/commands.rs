//! File-level entry points behind the command-line tool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{GenSpec, PgdrConfig};
use crate::data::{build_blurry_stream, make_gaussian_dataset, TaskStream};
use crate::error::{Error, Result};
use crate::formats::{
    parse_stream, write_checkpoint, write_stream, Checkpoint, MEMORY_CSV_HEADER,
    METRICS_CSV_HEADER, SEPARATION_CSV_HEADER,
};
use crate::trainer::{
    average_incremental_accuracy, run_stream, ExperimentReport, RunResult, VariantTag,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MEMORY_FILE: &str = "memory.csv";
pub const SEPARATION_FILE: &str = "separation.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const RESOLVED_CONFIG_FILE: &str = "config.txt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const LONG_FILE: &str = "long.csv";

pub fn generate(spec: &GenSpec) -> Result<TaskStream> {
    let dataset = make_gaussian_dataset(&spec.dataset)?;
    build_blurry_stream(&dataset, &spec.stream)
}

pub fn gen_command(spec_path: &Path, out: &Path) -> Result<TaskStream> {
    let spec = GenSpec::parse(&fs::read_to_string(spec_path)?)?;
    let stream = generate(&spec)?;
    fs::write(out, write_stream(&stream))?;
    Ok(stream)
}

pub fn load_stream(path: &Path) -> Result<TaskStream> {
    parse_stream(&fs::read_to_string(path)?)
}

/// Reads a config file; `seed_env` is the raw value of the seed override
/// variable, if set.
pub fn load_config(path: &Path, seed_env: Option<&str>) -> Result<PgdrConfig> {
    PgdrConfig::parse(&fs::read_to_string(path)?)?.with_seed_override(seed_env)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_csv(report: &ExperimentReport) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for t in &report.tasks {
        let l = t.final_losses();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.task,
            t.accuracy.all,
            cell(t.accuracy.new),
            cell(t.accuracy.old),
            cell(t.outcome.separation_accuracy),
            l.ce,
            l.kd,
            l.cr
        );
    }
    out
}

pub fn memory_csv(report: &ExperimentReport) -> String {
    let mut out = format!("{MEMORY_CSV_HEADER}\n");
    for t in &report.tasks {
        for m in &t.outcome.memory {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.task,
                m.class,
                m.id,
                m.kind,
                m.prototype_distance,
                cell(m.knn_score)
            );
        }
    }
    out
}

pub fn separation_csv(report: &ExperimentReport) -> String {
    let mut out = format!("{SEPARATION_CSV_HEADER}\n");
    for t in &report.tasks {
        for r in &t.outcome.separation {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                t.task,
                r.id,
                cell(r.distance),
                cell(r.posterior),
                r.membership,
                r.candidates,
                r.reallocated,
                r.truly_old
            );
        }
    }
    out
}

/// Writes every run artefact into `out_dir`, creating it if needed.
pub fn write_run_outputs(result: &RunResult, config: &PgdrConfig, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(METRICS_FILE), metrics_csv(&result.report))?;
    fs::write(out_dir.join(MEMORY_FILE), memory_csv(&result.report))?;
    fs::write(
        out_dir.join(SEPARATION_FILE),
        separation_csv(&result.report),
    )?;
    fs::write(out_dir.join(RESOLVED_CONFIG_FILE), config.to_string())?;
    let ckpt = Checkpoint {
        model: result.state.model.clone(),
        bank: result.state.bank.clone(),
    };
    fs::write(out_dir.join(CHECKPOINT_FILE), write_checkpoint(&ckpt))?;
    Ok(())
}

pub fn run_command(stream: &TaskStream, config: &PgdrConfig, out_dir: &Path) -> Result<RunResult> {
    let result = run_stream(stream, config)?;
    write_run_outputs(&result, config, out_dir)?;
    Ok(result)
}

/// One run per variant, in parallel, each into `out_dir/<VARIANT>`.
pub fn ablate_command(
    stream: &TaskStream,
    config: &PgdrConfig,
    variants: &[VariantTag],
    out_dir: &Path,
) -> Result<Vec<(VariantTag, ExperimentReport)>> {
    if variants.is_empty() {
        return Err(Error::EmptyInput("variant list"));
    }
    let results: Vec<Result<ExperimentReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = variants
            .iter()
            .map(|&v| {
                scope.spawn(move || {
                    let cfg = PgdrConfig {
                        variant: v,
                        ..config.clone()
                    };
                    run_command(stream, &cfg, &out_dir.join(v.name())).map(|r| r.report)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Internal("ablation worker panicked".into())))
            })
            .collect()
    });
    variants
        .iter()
        .zip(results)
        .map(|(&v, r)| r.map(|rep| (v, rep)))
        .collect()
}

pub fn parse_variant_list(raw: &str) -> Result<Vec<VariantTag>> {
    let mut out = Vec::new();
    for name in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: VariantTag = name.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("variant list"));
    }
    Ok(out)
}

/// One row of a `metrics.csv` file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub task: usize,
    pub values: BTreeMap<String, Option<f64>>,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != METRICS_CSV_HEADER {
        return Err(Error::parse(1, "unexpected metrics header"));
    }
    let names: Vec<&str> = header.split(',').collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::parse(i + 2, "wrong number of columns"));
        }
        let task = fields[0]
            .parse()
            .map_err(|_| Error::parse(i + 2, "bad task number"))?;
        let mut values = BTreeMap::new();
        for (name, raw) in names.iter().zip(&fields).skip(1) {
            let v = if raw.is_empty() {
                None
            } else {
                Some(
                    raw.parse()
                        .map_err(|_| Error::parse(i + 2, format!("bad value `{raw}`")))?,
                )
            };
            values.insert(name.to_string(), v);
        }
        rows.push(MetricsRow { task, values });
    }
    Ok(rows)
}

/// Per-run summary used by `report`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub average_accuracy: f64,
    pub final_accuracy: f64,
    pub final_old_accuracy: Option<f64>,
    pub rows: Vec<MetricsRow>,
}

fn summarize(name: String, rows: Vec<MetricsRow>) -> Result<RunSummary> {
    let acc: Vec<f64> = rows
        .iter()
        .map(|r| r.values.get("acc_all").copied().flatten())
        .collect::<Option<_>>()
        .ok_or_else(|| Error::config(format!("run `{name}` has a task without acc_all")))?;
    let last = rows.last().ok_or(Error::EmptyInput("metrics rows"))?;
    Ok(RunSummary {
        average_accuracy: average_incremental_accuracy(&acc)?,
        final_accuracy: acc[acc.len() - 1],
        final_old_accuracy: last.values.get("acc_old").copied().flatten(),
        name,
        rows,
    })
}

/// Collects runs under `in_dir` (each subdirectory holding a metrics file,
/// or `in_dir` itself) and writes the summary and long-format tables there.
pub fn report_command(in_dir: &Path) -> Result<Vec<RunSummary>> {
    let mut runs: Vec<(String, PathBuf)> = Vec::new();
    if in_dir.join(METRICS_FILE).is_file() {
        let name = in_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        runs.push((name, in_dir.join(METRICS_FILE)));
    }
    for entry in fs::read_dir(in_dir)? {
        let path = entry?.path();
        let metrics = path.join(METRICS_FILE);
        if path.is_dir() && metrics.is_file() {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            runs.push((name, metrics));
        }
    }
    if runs.is_empty() {
        return Err(Error::EmptyInput("no metrics files found"));
    }
    runs.sort();

    let mut summaries = Vec::with_capacity(runs.len());
    for (name, path) in runs {
        summaries.push(summarize(
            name,
            parse_metrics_csv(&fs::read_to_string(path)?)?,
        )?);
    }

    let mut summary = String::from("variant,avg_acc,final_acc,final_old_acc\n");
    let mut long = String::from("variant,task,metric,value\n");
    for s in &summaries {
        let _ = writeln!(
            summary,
            "{},{},{},{}",
            s.name,
            s.average_accuracy,
            s.final_accuracy,
            cell(s.final_old_accuracy)
        );
        for row in &s.rows {
            for (metric, v) in &row.values {
                if let Some(v) = v {
                    let _ = writeln!(long, "{},{},{},{}", s.name, row.task, metric, v);
                }
            }
        }
    }
    fs::write(in_dir.join(SUMMARY_FILE), summary)?;
    fs::write(in_dir.join(LONG_FILE), long)?;
    Ok(summaries)
}
