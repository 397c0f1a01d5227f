use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_checkpoint, rho_report, save_checkpoint, EvalReport, RhoReport, RoundRecord, TrainConfig, Trainer};
use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EvalLine {
    schema_version: u32,
    round: usize,
    #[serde(flatten)]
    report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Summary {
    schema_version: u32,
    rounds_completed: usize,
    rho: Option<RhoReport>,
    final_eval: Option<EvalReport>,
}

/// What a call to [`run_experiment`] did.
#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Completed { rounds_run: usize, out_dir: PathBuf },
    AlreadyFinished { rounds: usize },
}

fn csv_err(e: csv::Error) -> Error {
    Error::Schema(format!("metrics csv: {e}"))
}

/// Reads every record of a `metrics.csv`.
pub fn read_round_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Reads every `(round, report)` line of an `eval.jsonl`.
pub fn read_eval_reports(path: &Path) -> Result<Vec<(usize, EvalReport)>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: EvalLine = serde_json::from_str(&line)?;
        out.push((l.round, l.report));
    }
    Ok(out)
}

fn write_records(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if records.is_empty() {
        w.write_record([
            "round",
            "batch_size",
            "meta_loss",
            "meta_loss_std",
            "grad_z_norm",
            "grad_h_norm",
            "beta1",
            "beta2",
            "ghat1",
            "ghat2",
            "wall_time_s",
        ])
        .map_err(csv_err)?;
    }
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn append_record(path: &Path, rec: &RoundRecord) -> Result<()> {
    let f = OpenOptions::new().append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    w.serialize(rec).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

fn write_eval_lines(path: &Path, lines: &[(usize, EvalReport)]) -> Result<()> {
    let mut f = File::create(path)?;
    for (round, report) in lines {
        let l = EvalLine { schema_version: 1, round: *round, report: report.clone() };
        writeln!(f, "{}", serde_json::to_string(&l)?)?;
    }
    Ok(())
}

/// Trains with files in `out_dir`: `metrics.csv` (one row per round),
/// `eval.jsonl`, `checkpoint.json` (every `checkpoint_every` rounds and at
/// the end) and `summary.json`. With `resume`, continues from that
/// checkpoint and drops any rows written after it.
pub fn run_experiment(
    config: &TrainConfig,
    out_dir: &Path,
    resume: Option<&Path>,
    checkpoint_every: usize,
) -> Result<RunOutcome> {
    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let eval_path = out_dir.join(EVAL_FILE);
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);

    let mut trainer = match resume {
        Some(p) => {
            let trainer = Trainer::from_checkpoint(load_checkpoint(p)?)?;
            if trainer.is_finished() {
                return Ok(RunOutcome::AlreadyFinished { rounds: trainer.config().rounds });
            }
            let start = trainer.next_round();
            let kept: Vec<RoundRecord> = if metrics_path.exists() {
                read_round_records(&metrics_path)?.into_iter().filter(|r| r.round < start).collect()
            } else {
                Vec::new()
            };
            if kept.len() != start {
                return Err(Error::Schema(format!(
                    "{} holds {} rows before round {start}; cannot resume consistently",
                    metrics_path.display(),
                    kept.len()
                )));
            }
            write_records(&metrics_path, &kept)?;
            let evals: Vec<_> = if eval_path.exists() {
                read_eval_reports(&eval_path)?.into_iter().filter(|(r, _)| *r < start).collect()
            } else {
                Vec::new()
            };
            write_eval_lines(&eval_path, &evals)?;
            trainer
        }
        None => {
            write_records(&metrics_path, &[])?;
            write_eval_lines(&eval_path, &[])?;
            Trainer::new(config.clone())?
        }
    };

    let start = trainer.next_round();
    let mut last_eval = None;
    trainer.run(|t, rec, report| {
        append_record(&metrics_path, rec)?;
        if let Some(r) = report {
            let mut f = OpenOptions::new().append(true).open(&eval_path)?;
            let l = EvalLine { schema_version: 1, round: rec.round, report: r.clone() };
            writeln!(f, "{}", serde_json::to_string(&l)?)?;
            last_eval = Some(r.clone());
        }
        if t.is_finished() || (checkpoint_every > 0 && (rec.round + 1) % checkpoint_every == 0) {
            save_checkpoint(&t.checkpoint(), &ckpt_path)?;
        }
        Ok(())
    })?;

    let all = read_round_records(&metrics_path)?;
    let summary = Summary {
        schema_version: 1,
        rounds_completed: trainer.next_round(),
        rho: rho_report(trainer.config().seed, &all),
        final_eval: last_eval,
    };
    fs::write(out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunOutcome::Completed { rounds_run: trainer.next_round() - start, out_dir: out_dir.to_path_buf() })
}
