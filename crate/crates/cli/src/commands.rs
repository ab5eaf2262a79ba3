//! Subcommand drivers.

use std::path::{Path, PathBuf};

use nqsdyn::checkpoint::{write_atomic, Checkpoint, GlobalProgress};
use nqsdyn::globalopt::{evolve_global, PropagatorApplication};
use nqsdyn::observables::{loschmidt_rate, State};
use nqsdyn::oracle::{apply, exact_evolve, nqs_to_dense, DenseState};
use nqsdyn::sampler::{sample_exact, EXACT_SITE_CAP};
use nqsdyn::tdvp::{evolve, Integrator, TdvpState};
use nqsdyn::{Ansatz, ParameterVector};
use serde::Serialize;

use crate::config::{MethodConfig, RunConfig, Setup};
use crate::output::{Checkpointer, Record, TrajectoryWriter, SCHEMA_VERSION};
use crate::CliError;

/// Inputs shared by all run commands.
pub struct Run {
    pub cfg: RunConfig,
    pub output: PathBuf,
    pub resume: Option<PathBuf>,
}

/// Outcome of a command that produced a trajectory.
pub struct Summary {
    pub n_records: usize,
}

fn at_end(t: f64, max_time: f64) -> bool {
    max_time - t <= 1e-12 * max_time.max(1.0)
}

fn load_resume(path: &Path, cfg: &RunConfig, ansatz: &Ansatz) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::Config(format!("resume: {e}")))?;
    if &ck.ansatz != ansatz {
        return Err(CliError::Config("resume: checkpoint ansatz differs from the configured one".into()));
    }
    if ck.seed != cfg.seed {
        return Err(CliError::Config(format!(
            "resume: checkpoint seed {} differs from the run seed {}",
            ck.seed, cfg.seed
        )));
    }
    Ok(ck)
}

fn dense_initial(setup: &Setup, cfg: &RunConfig) -> Result<Option<DenseState>, CliError> {
    if !cfg.output.loschmidt {
        return Ok(None);
    }
    Ok(Some(DenseState::from_product(&setup.psi0)?))
}

fn rate(psi0: Option<&DenseState>, ansatz: &Ansatz, theta: &ParameterVector) -> nqsdyn::Result<Option<f64>> {
    psi0.map(|p| loschmidt_rate(p, &nqs_to_dense(ansatz, theta)?)).transpose()
}

/// Run `body` with a trajectory writer and flush whatever it produced, also
/// when it fails.
fn with_writer(
    out: &Path,
    keep_through: Option<usize>,
    body: impl FnOnce(&mut TrajectoryWriter) -> Result<(), CliError>,
) -> Result<Summary, CliError> {
    std::fs::create_dir_all(out)?;
    let mut writer = TrajectoryWriter::create(out, keep_through)?;
    let result = body(&mut writer);
    let n_records = writer.finish()?;
    result.map(|()| Summary { n_records })
}

pub fn evolve_tdvp(run: &Run) -> Result<Summary, CliError> {
    let cfg = &run.cfg;
    let MethodConfig::Tdvp(tcfg) = &cfg.method else {
        return Err(CliError::Config("evolve-tdvp needs method.kind = \"tdvp\"".into()));
    };
    let setup = cfg.setup()?;
    let integrator = Integrator::new(&setup.ansatz, &setup.hamiltonian, tcfg.clone(), setup.sampling.clone())
        .map_err(|e| CliError::Config(format!("method: {e}")))?;
    let state = match &run.resume {
        Some(path) => load_resume(path, cfg, &setup.ansatz)?
            .tdvp
            .ok_or_else(|| CliError::Config("resume: checkpoint holds no integrator state".into()))?,
        None => {
            let mut s = TdvpState::initial(setup.theta0.clone(), tcfg, &setup.sampling);
            s.t = setup.t0;
            s
        }
    };
    let keep = run.resume.as_ref().map(|_| state.step);
    let psi0 = dense_initial(&setup, cfg)?;
    let checkpoints = Checkpointer::new(&run.output, cfg.output.checkpoint_every)?;
    let max_time = tcfg.max_time;
    with_writer(&run.output, keep, |writer| {
        evolve(&integrator, state, &setup.observables, |r, st| {
            let mut rec = Record::from_tdvp(r);
            rec.loschmidt_rate = rate(psi0.as_ref(), &setup.ansatz, &st.theta)?;
            if checkpoints.due(r.step, at_end(st.t, max_time)) {
                let ck = Checkpoint::new(&setup.ansatz, &st.theta, cfg.seed)?.with_tdvp(st.clone());
                rec.checkpoint = Some(checkpoints.save(&ck, r.step)?);
            }
            Ok(writer.push(&rec)?)
        })?;
        Ok(())
    })
}

pub fn evolve_global_run(run: &Run) -> Result<Summary, CliError> {
    let cfg = &run.cfg;
    let MethodConfig::Global(gcfg) = &cfg.method else {
        return Err(CliError::Config("evolve-global needs method.kind = \"global\"".into()));
    };
    let setup = cfg.setup()?;
    PropagatorApplication::new(gcfg.propagator, &setup.hamiltonian, gcfg.tau)
        .map_err(|e| CliError::Config(format!("method: {e}")))?;
    let (theta, progress) = match &run.resume {
        Some(path) => {
            let ck = load_resume(path, cfg, &setup.ansatz)?;
            let p = ck
                .global
                .ok_or_else(|| CliError::Config("resume: checkpoint holds no global progress".into()))?;
            (ck.theta, p)
        }
        None => (
            setup.theta0.clone(),
            GlobalProgress {
                t: setup.t0,
                step: 0,
                stream: 0,
                tau: gcfg.tau,
            },
        ),
    };
    let keep = run.resume.as_ref().map(|_| progress.step);
    let psi0 = dense_initial(&setup, cfg)?;
    let checkpoints = Checkpointer::new(&run.output, cfg.output.checkpoint_every)?;
    with_writer(&run.output, keep, |writer| {
        evolve_global(
            &setup.ansatz,
            &setup.hamiltonian,
            gcfg,
            &setup.sampling,
            theta,
            progress,
            &setup.observables,
            |r, th, p| {
                let mut rec = Record::from_global(r);
                rec.loschmidt_rate = rate(psi0.as_ref(), &setup.ansatz, th)?;
                if checkpoints.due(r.step, at_end(p.t, gcfg.max_time)) {
                    let ck = Checkpoint::new(&setup.ansatz, th, cfg.seed)?.with_global(p.clone());
                    rec.checkpoint = Some(checkpoints.save(&ck, r.step)?);
                }
                Ok(writer.push(&rec)?)
            },
        )?;
        Ok(())
    })
}

fn exact_record(
    setup: &Setup,
    psi: &DenseState,
    psi0: Option<&DenseState>,
    step: usize,
    t: f64,
    tau: f64,
) -> Result<Record, CliError> {
    let h = &setup.hamiltonian;
    let hpsi = apply(h, psi)?;
    let norm = psi.norm_sqr();
    let energy = psi.inner(&hpsi)?.re / norm;
    let variance = (hpsi.norm_sqr() / norm - energy * energy).max(0.0);
    let mut rec = Record::exact(step, t, tau, energy, variance);
    for o in &setup.observables {
        let e = State::Dense(psi).measure(&o.op)?;
        rec.observables.insert(
            o.name.clone(),
            crate::output::ObservableEntry {
                mean: e.mean.re,
                mean_imag: e.mean.im,
                std_error: 0.0,
            },
        );
    }
    rec.loschmidt_rate = psi0.map(|p| loschmidt_rate(p, psi)).transpose()?;
    Ok(rec)
}

pub fn benchmark_ed(run: &Run) -> Result<Summary, CliError> {
    let cfg = &run.cfg;
    if run.resume.is_some() {
        return Err(CliError::Config("benchmark-ed does not resume".into()));
    }
    let setup = cfg.setup()?;
    if setup.n_sites > cfg.output.dense_site_cap {
        return Err(CliError::Config(format!(
            "benchmark-ed: {} sites exceed dense_site_cap {}",
            setup.n_sites, cfg.output.dense_site_cap
        )));
    }
    let max_time = cfg.method.max_time();
    let dt = cfg.output.record_interval;
    let start = DenseState::from_product(&setup.psi0)?;
    let psi0 = cfg.output.loschmidt.then(|| start.clone());
    let n_steps = if max_time > 0.0 { (max_time / dt - 1e-9).ceil() as usize } else { 0 };
    with_writer(&run.output, None, |writer| {
        let mut psi = start.clone();
        let mut t = 0.0;
        writer.push(&exact_record(&setup, &psi, psi0.as_ref(), 0, t, 0.0)?)?;
        for k in 1..=n_steps {
            let next = if k == n_steps { max_time } else { k as f64 * dt };
            psi = exact_evolve(&psi, &setup.hamiltonian, next - t, None)?;
            let rec = exact_record(&setup, &psi, psi0.as_ref(), k, next, next - t)?;
            t = next;
            writer.push(&rec)?;
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct Comparison {
    name: String,
    sampled: f64,
    std_error: f64,
    exact: f64,
    z: f64,
}

#[derive(Serialize)]
struct SampleCheck {
    schema_version: u32,
    n_sites: usize,
    diagnostics: nqsdyn::ChainDiagnostics,
    total_variation: f64,
    checks: Vec<Comparison>,
    consistent: bool,
}

/// Largest `|z|` accepted by `sample-check`.
const Z_LIMIT: f64 = 4.0;

pub fn sample_check(run: &Run) -> Result<Summary, CliError> {
    let cfg = &run.cfg;
    let setup = cfg.setup()?;
    if setup.sampling.is_exact() {
        return Err(CliError::Config("sample-check needs sampler.kind = \"mcmc\"".into()));
    }
    if setup.n_sites > EXACT_SITE_CAP {
        return Err(CliError::Config(format!(
            "sample-check: {} sites exceed the exact-sum cap {EXACT_SITE_CAP}",
            setup.n_sites
        )));
    }
    let (a, theta) = (&setup.ansatz, &setup.theta0);
    let mc = setup.sampling.draw(a, theta, 0)?;
    let exact = sample_exact(a, theta)?;
    let mut p = vec![0.0; 1 << setup.n_sites];
    for (x, w) in exact.configurations().iter().zip(exact.weights()) {
        p[x.index()] += w;
    }
    for (x, w) in mc.configurations().iter().zip(mc.weights()) {
        p[x.index()] -= w;
    }
    let total_variation = 0.5 * p.iter().map(|d| d.abs()).sum::<f64>();
    let mut checks = Vec::new();
    let mut ops = vec![("energy".to_string(), setup.hamiltonian.clone())];
    ops.extend(setup.observables.iter().map(|o| (o.name.clone(), o.op.clone())));
    for (name, op) in ops {
        let s = nqsdyn::estimators::expectation(&op, a, theta, &mc)?;
        let e = nqsdyn::estimators::expectation(&op, a, theta, &exact)?;
        let diff = (s.mean.re - e.mean.re).abs();
        let z = if s.std_error > 0.0 {
            diff / s.std_error
        } else if diff <= 1e-12 * e.mean.re.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        };
        checks.push(Comparison {
            name,
            sampled: s.mean.re,
            std_error: s.std_error,
            exact: e.mean.re,
            z,
        });
    }
    let consistent = checks.iter().all(|c| c.z <= Z_LIMIT);
    let report = SampleCheck {
        schema_version: SCHEMA_VERSION,
        n_sites: setup.n_sites,
        diagnostics: mc.diagnostics().clone(),
        total_variation,
        checks,
        consistent,
    };
    std::fs::create_dir_all(&run.output)?;
    let text = serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?;
    write_atomic(&run.output.join("sample_check.json"), text.as_bytes())?;
    for c in &report.checks {
        println!(
            "{:<12} sampled {:>12.6} ± {:.2e}  exact {:>12.6}  z {:.2}",
            c.name, c.sampled, c.std_error, c.exact, c.z
        );
    }
    println!(
        "acceptance {:.3}  tau_int {:.2}  total variation {:.4}",
        report.diagnostics.acceptance_rate, report.diagnostics.autocorrelation_time, total_variation
    );
    if !consistent {
        return Err(CliError::Check(format!("sampled estimates deviate by more than {Z_LIMIT} standard errors")));
    }
    Ok(Summary { n_records: 0 })
}

pub fn validate_config(cfg: &RunConfig) -> Result<String, CliError> {
    let setup = cfg.setup()?;
    match &cfg.method {
        MethodConfig::Tdvp(t) => {
            Integrator::new(&setup.ansatz, &setup.hamiltonian, t.clone(), setup.sampling.clone())
                .map_err(|e| CliError::Config(format!("method: {e}")))?;
        }
        MethodConfig::Global(g) => {
            PropagatorApplication::new(g.propagator, &setup.hamiltonian, g.tau)
                .map_err(|e| CliError::Config(format!("method: {e}")))?;
        }
    }
    let method = match cfg.method {
        MethodConfig::Tdvp(_) => "tdvp",
        MethodConfig::Global(_) => "global",
    };
    Ok(format!(
        "{} sites, {} ansatz with {} real parameters, method {method}, {} observables",
        setup.n_sites,
        setup.ansatz.architecture().tag(),
        setup.ansatz.n_params(),
        setup.observables.len()
    ))
}
