//! Trajectory records, output files and checkpoints.
//!
//! An output directory holds `trajectory.jsonl` (one record per line),
//! `metadata.json` (the only file with timestamps) and `checkpoints/`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nqsdyn::checkpoint::{write_atomic, Checkpoint};
use nqsdyn::globalopt::{GlobalRecord, OptTraceEntry};
use nqsdyn::tdvp::{ObservableValue, SolverDiagnostics, StepRecord};
use nqsdyn::ChainDiagnostics;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const TRAJECTORY_FILE: &str = "trajectory.jsonl";
pub const METADATA_FILE: &str = "metadata.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodTag {
    Tdvp,
    Global,
    Ed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableEntry {
    pub mean: f64,
    pub mean_imag: f64,
    pub std_error: f64,
}

/// One trajectory line. Every key is always present; fields a method does
/// not produce are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub schema_version: u32,
    pub method: MethodTag,
    pub step: usize,
    pub t: f64,
    pub tau: f64,
    pub energy: f64,
    pub energy_error: f64,
    pub energy_variance: f64,
    pub observables: BTreeMap<String, ObservableEntry>,
    pub loschmidt_rate: Option<f64>,
    pub residual: Option<f64>,
    pub error_estimate: Option<f64>,
    pub rejected_steps: Option<usize>,
    pub phase_re: Option<f64>,
    pub phase_im: Option<f64>,
    pub infidelity: Option<f64>,
    pub infidelity_error: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub optimization_trace: Option<Vec<OptTraceEntry>>,
    pub sampler: Option<ChainDiagnostics>,
    pub solver: Option<SolverDiagnostics>,
    pub vanishing_connections: Option<usize>,
    /// Checkpoint written at this record, relative to the output directory.
    pub checkpoint: Option<String>,
}

pub fn observable_map(values: &[ObservableValue]) -> BTreeMap<String, ObservableEntry> {
    values
        .iter()
        .map(|v| {
            (
                v.name.clone(),
                ObservableEntry {
                    mean: v.mean,
                    mean_imag: v.mean_imag,
                    std_error: v.std_error,
                },
            )
        })
        .collect()
}

impl Record {
    fn empty(method: MethodTag, step: usize, t: f64, tau: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            method,
            step,
            t,
            tau,
            energy: 0.0,
            energy_error: 0.0,
            energy_variance: 0.0,
            observables: BTreeMap::new(),
            loschmidt_rate: None,
            residual: None,
            error_estimate: None,
            rejected_steps: None,
            phase_re: None,
            phase_im: None,
            infidelity: None,
            infidelity_error: None,
            iterations: None,
            converged: None,
            optimization_trace: None,
            sampler: None,
            solver: None,
            vanishing_connections: None,
            checkpoint: None,
        }
    }

    pub fn from_tdvp(r: &StepRecord) -> Self {
        Self {
            energy: r.energy,
            energy_error: r.energy_error,
            energy_variance: r.energy_variance,
            observables: observable_map(&r.observables),
            residual: Some(r.residual),
            error_estimate: Some(r.error_estimate),
            rejected_steps: Some(r.rejected_steps),
            phase_re: Some(r.phase_re),
            phase_im: Some(r.phase_im),
            sampler: Some(r.sampler.clone()),
            solver: Some(r.solver.clone()),
            vanishing_connections: Some(r.vanishing_connections),
            ..Self::empty(MethodTag::Tdvp, r.step, r.t, r.tau)
        }
    }

    pub fn from_global(r: &GlobalRecord) -> Self {
        Self {
            energy: r.energy,
            energy_error: r.energy_error,
            energy_variance: r.energy_variance,
            observables: observable_map(&r.observables),
            infidelity: Some(r.infidelity),
            infidelity_error: Some(r.infidelity_error),
            iterations: Some(r.iterations),
            converged: Some(r.converged),
            optimization_trace: Some(r.trace.clone()),
            sampler: Some(r.sampler.clone()),
            vanishing_connections: Some(r.vanishing_connections),
            ..Self::empty(MethodTag::Global, r.step, r.t, r.tau)
        }
    }

    pub fn exact(step: usize, t: f64, tau: f64, energy: f64, energy_variance: f64) -> Self {
        Self {
            energy,
            energy_variance,
            ..Self::empty(MethodTag::Ed, step, t, tau)
        }
    }
}

/// Streams records to a hidden temporary file that replaces the trajectory
/// on `finish`, so readers never see a half-written trajectory.
pub struct TrajectoryWriter {
    tmp: PathBuf,
    path: PathBuf,
    out: BufWriter<File>,
    n_records: usize,
}

impl TrajectoryWriter {
    /// Start a trajectory in `dir`. When `keep_through` is given, existing
    /// lines with `step <= keep_through` are carried over (resume).
    pub fn create(dir: &Path, keep_through: Option<usize>) -> Result<Self, CliError> {
        let path = dir.join(TRAJECTORY_FILE);
        let tmp = dir.join(format!(".{TRAJECTORY_FILE}.tmp{}", std::process::id()));
        let mut w = Self {
            out: BufWriter::new(File::create(&tmp)?),
            tmp,
            path: path.clone(),
            n_records: 0,
        };
        if let (Some(last), true) = (keep_through, path.exists()) {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                let rec: Record = serde_json::from_str(&line)
                    .map_err(|e| CliError::Config(format!("existing trajectory is not schema-valid: {e}")))?;
                if rec.step <= last {
                    writeln!(w.out, "{line}")?;
                    w.n_records += 1;
                }
            }
        }
        Ok(w)
    }

    pub fn push(&mut self, rec: &Record) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")?;
        self.n_records += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<usize, CliError> {
        let file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        fs::rename(&self.tmp, &self.path)?;
        Ok(self.n_records)
    }
}

/// Checkpoint cadence and file naming.
pub struct Checkpointer {
    dir: PathBuf,
    every: usize,
}

impl Checkpointer {
    pub fn new(out_dir: &Path, every: usize) -> Result<Self, CliError> {
        let dir = out_dir.join(CHECKPOINT_DIR);
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, every })
    }

    pub fn due(&self, step: usize, last: bool) -> bool {
        last || (self.every > 0 && step > 0 && step % self.every == 0)
    }

    /// Save and return the path relative to the output directory.
    pub fn save(&self, ck: &Checkpoint, step: usize) -> nqsdyn::Result<String> {
        let name = format!("step_{step:06}.json");
        ck.save(&self.dir.join(&name))?;
        Ok(format!("{CHECKPOINT_DIR}/{name}"))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Metadata {
    pub schema_version: u32,
    pub program: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub threads: usize,
    pub resumed_from: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub n_records: usize,
}

pub fn write_metadata(dir: &Path, meta: &Metadata) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(meta).map_err(std::io::Error::from)?;
    write_atomic(&dir.join(METADATA_FILE), text.as_bytes())?;
    Ok(())
}
