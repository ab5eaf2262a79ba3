//! Time-dependent variational principle: regularized solution of the
//! equations of motion and adaptive Heun integration.

use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, ParameterVector};
use crate::error::{Error, Result};
use crate::estimators::{self, ForceEstimate, QgtEstimate, ScalarEstimate, TdvpSystem};
use crate::model::PauliOperator;
use crate::sampler::{ChainDiagnostics, SampleSet, Sampling};

/// Which projection of the complex TDVP equation is solved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `Re S θ̇ = Re F`: minimizes the Fubini-Study distance per step.
    #[default]
    Distance,
    /// `Im S θ̇ = Im F`: stationary action; conserves energy for exact sums.
    Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Regularization {
    /// Eigenvalues below `svd_cutoff · λ_max` are discarded.
    pub svd_cutoff: f64,
    /// Added to every retained eigenvalue (Tikhonov damping).
    pub diagonal_shift: f64,
    /// Eigencomponents whose force signal is below this multiple of its
    /// statistical error are discarded.
    pub snr_threshold: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            svd_cutoff: 1e-8,
            diagonal_shift: 0.0,
            snr_threshold: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepControl {
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Target for the embedded error estimate of each step, measured in the
    /// metric of the geometric tensor.
    pub local_error_target: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            tau0: 1e-2,
            tau_min: 1e-6,
            tau_max: 0.1,
            local_error_target: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdvpConfig {
    pub variant: Variant,
    pub regularization: Regularization,
    pub step: StepControl,
    pub max_time: f64,
    /// Largest parameter count accepted by the dense solver.
    pub max_params: usize,
    /// Double the Monte-Carlo sample count whenever more than half of the
    /// eigencomponents are removed by the signal-to-noise filter.
    pub adaptive_samples: bool,
}

impl Default for TdvpConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Distance,
            regularization: Regularization::default(),
            step: StepControl::default(),
            max_time: 1.0,
            max_params: 5000,
            adaptive_samples: false,
        }
    }
}

impl TdvpConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.regularization;
        let s = &self.step;
        let bad = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if !(r.svd_cutoff >= 0.0 && r.diagonal_shift >= 0.0 && r.snr_threshold >= 0.0) {
            return bad("regularization parameters must be non-negative");
        }
        if !(s.tau_min > 0.0 && s.tau_min <= s.tau0 && s.tau0 <= s.tau_max) {
            return bad("step sizes must satisfy 0 < tau_min <= tau0 <= tau_max");
        }
        if !(s.local_error_target > 0.0) {
            return bad("local_error_target must be positive");
        }
        if !(self.max_time >= 0.0 && self.max_time.is_finite()) {
            return bad("max_time must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Ratio of largest to smallest retained eigen- or singular value.
    pub condition_estimate: f64,
    /// Components above the cutoff but removed by the signal-to-noise filter.
    pub n_filtered: usize,
    /// Components above the cutoff.
    pub rank: usize,
    pub dim: usize,
}

/// Eigenvalues and eigenvectors (as columns) of a real symmetric matrix.
/// Only the lower triangle is read. Runs sequentially, so results do not
/// depend on the thread pool.
fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let evd = a
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("symmetric eigendecomposition did not converge ({e:?}); matrix not finite?")))?;
    let values = (0..n).map(|j| evd.S().column_vector()[j]).collect();
    let u = evd.U();
    Ok((values, DMatrix::from_fn(n, n, |i, j| u[(i, j)])))
}

/// Spectral pseudo-inverse solve of `M x = b` for symmetric `M`. Components
/// with `|signal| < snr · error` are dropped when errors are given.
fn spectral_solve(
    values: &[f64],
    basis: &DMatrix<f64>,
    signal: &[f64],
    errors: &[f64],
    reg: &Regularization,
) -> Result<(Vec<f64>, SolverDiagnostics)> {
    let dim = basis.nrows();
    let max = values.iter().copied().fold(0.0, f64::max);
    let cutoff = reg.svd_cutoff * max;
    let mut x = vec![0.0; dim];
    let mut rank = 0;
    let mut filtered = 0;
    let mut min_kept = f64::INFINITY;
    for (j, &lambda) in values.iter().enumerate() {
        if !(lambda > cutoff) || lambda <= 0.0 {
            continue;
        }
        rank += 1;
        if errors[j] > 0.0 && signal[j].abs() < reg.snr_threshold * errors[j] {
            filtered += 1;
            continue;
        }
        min_kept = min_kept.min(lambda);
        let c = signal[j] / (lambda + reg.diagonal_shift);
        for (xi, b) in x.iter_mut().zip(basis.column(j).iter()) {
            *xi += c * b;
        }
    }
    if rank == 0 {
        return Err(Error::RankZeroGeometricTensor { cutoff });
    }
    let condition_estimate = if min_kept.is_finite() { max / min_kept } else { 1.0 };
    Ok((
        x,
        SolverDiagnostics {
            condition_estimate,
            n_filtered: filtered,
            rank,
            dim,
        },
    ))
}

/// Regularized solve of `m x = rhs` for a real symmetric positive
/// semidefinite `m`, without noise filtering.
pub fn solve_symmetric(m: &DMatrix<f64>, rhs: &[f64], reg: &Regularization) -> Result<(Vec<f64>, SolverDiagnostics)> {
    let (values, vectors) = symmetric_eigen(m)?;
    let signal: Vec<f64> = (0..rhs.len())
        .map(|j| vectors.column(j).iter().zip(rhs).map(|(v, b)| v * b).sum())
        .collect();
    let zeros = vec![0.0; rhs.len()];
    spectral_solve(&values, &vectors, &signal, &zeros, reg)
}

/// `θ̇` from the distance (`Re S θ̇ = Re F`) or action (`Im S θ̇ = Im F`)
/// equation via a truncated, signal-to-noise filtered pseudo-inverse.
pub fn solve_tdvp_system(
    s: &QgtEstimate,
    f: &ForceEstimate,
    variant: Variant,
    reg: &Regularization,
) -> Result<(Vec<f64>, SolverDiagnostics)> {
    if s.dim() != f.len() {
        return Err(Error::InvalidInput(format!(
            "geometric tensor of size {} with force of length {}",
            s.dim(),
            f.len()
        )));
    }
    match variant {
        Variant::Distance => {
            let (values, vectors) = symmetric_eigen(&s.re)?;
            let (signal, errors) = f.projected(&vectors, false);
            spectral_solve(&values, &vectors, &signal, &errors, reg)
        }
        Variant::Action => {
            // Im S is antisymmetric: x = Σ_j v_j (u_jᵀ b)/σ_j
            let svd = SVD::new(s.im.clone(), true, true);
            let u = svd.u.expect("left singular vectors");
            let vt = svd.v_t.expect("right singular vectors");
            let (signal, errors) = f.projected(&u, true);
            let v = vt.transpose();
            spectral_solve(svd.singular_values.as_slice(), &v, &signal, &errors, reg)
        }
    }
}

/// One right-hand side evaluation at fixed parameters.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub theta: ParameterVector,
    pub samples: SampleSet,
    pub system: TdvpSystem,
    pub theta_dot: Vec<f64>,
    /// `φ̇ = −i⟨H⟩ − Σ_k θ̇_k ⟨Γ_k⟩` for the prefactor `e^φ` of `ψ_θ`.
    pub phase_rate: Complex64,
    pub solver: SolverDiagnostics,
}

/// Integrator state; serializable so runs can resume bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdvpState {
    pub theta: ParameterVector,
    pub t: f64,
    /// Accumulated `φ`: `e^φ ψ_θ` approximates the evolved state.
    pub phase: Complex64,
    /// Step size to try next.
    pub tau: f64,
    pub step: usize,
    /// Random stream for the next evaluation.
    pub stream: u64,
    /// Current Monte-Carlo sample count (changes in adaptive mode).
    pub n_samples: Option<usize>,
}

impl TdvpState {
    pub fn initial(theta: ParameterVector, cfg: &TdvpConfig, sampling: &Sampling) -> Self {
        Self {
            theta,
            t: 0.0,
            phase: Complex64::new(0.0, 0.0),
            tau: cfg.step.tau0,
            step: 0,
            stream: 0,
            n_samples: match sampling {
                Sampling::Exact => None,
                Sampling::Mcmc { n_samples, .. } => Some(*n_samples),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct TdvpStep {
    pub theta_new: ParameterVector,
    /// Heun average of the two slopes.
    pub theta_dot: Vec<f64>,
    /// `r²` of the predictor slope over the accepted step.
    pub residual: f64,
    pub delta_phase: Complex64,
    pub tau_used: f64,
    pub next_tau: f64,
    pub error_estimate: f64,
    pub rejected: usize,
    pub solver: SolverDiagnostics,
}

/// Sequential integrator over one Hamiltonian and ansatz.
pub struct Integrator<'a> {
    ansatz: &'a Ansatz,
    h: &'a PauliOperator,
    cfg: TdvpConfig,
    sampling: Sampling,
}

impl<'a> Integrator<'a> {
    pub fn new(ansatz: &'a Ansatz, h: &'a PauliOperator, cfg: TdvpConfig, sampling: Sampling) -> Result<Self> {
        cfg.validate()?;
        if ansatz.n_params() > cfg.max_params {
            return Err(Error::TooManyParameters {
                n_params: ansatz.n_params(),
                cap: cfg.max_params,
            });
        }
        if h.n_sites() != ansatz.n_sites() {
            return Err(Error::SiteMismatch {
                expected: ansatz.n_sites(),
                got: h.n_sites(),
            });
        }
        Ok(Self {
            ansatz,
            h,
            cfg,
            sampling,
        })
    }

    pub fn config(&self) -> &TdvpConfig {
        &self.cfg
    }

    fn sampling_for(&self, state: &TdvpState) -> Sampling {
        match (&self.sampling, state.n_samples) {
            (Sampling::Mcmc { chain, .. }, Some(n)) => Sampling::Mcmc {
                n_samples: n,
                chain: chain.clone(),
            },
            (s, _) => s.clone(),
        }
    }

    /// Sample and solve at `theta`, consuming one random stream.
    pub fn evaluate(&self, theta: &ParameterVector, state: &mut TdvpState) -> Result<Evaluation> {
        if let Some(k) = theta.first_non_finite() {
            return Err(Error::NonFiniteParameter(k));
        }
        let samples = self.sampling_for(state).draw(self.ansatz, theta, state.stream)?;
        state.stream += 1;
        let system = estimators::tdvp_system(self.h, self.ansatz, theta, &samples)?;
        let (theta_dot, solver) =
            solve_tdvp_system(&system.qgt, &system.force, self.cfg.variant, &self.cfg.regularization)?;
        let mut phase_rate = Complex64::new(0.0, -1.0) * system.energy.mean;
        for (td, g) in theta_dot.iter().zip(&system.qgt.mean_gamma) {
            phase_rate -= td * g;
        }
        if self.cfg.adaptive_samples && 2 * solver.n_filtered > solver.rank {
            if let Some(n) = state.n_samples.as_mut() {
                *n *= 2;
            }
        }
        Ok(Evaluation {
            theta: theta.clone(),
            samples,
            system,
            theta_dot,
            phase_rate,
            solver,
        })
    }

    /// One accepted Heun step from `state`, whose slope `k1` was evaluated
    /// at `state.theta`. Rejected trials shrink `τ` and retry.
    pub fn heun_step(&self, state: &mut TdvpState, k1: &Evaluation) -> Result<TdvpStep> {
        let sc = &self.cfg.step;
        let remaining = self.cfg.max_time - state.t;
        let mut tau = state.tau.clamp(sc.tau_min, sc.tau_max).min(remaining);
        let mut rejected = 0;
        loop {
            let predictor = k1.theta.axpy(tau, &k1.theta_dot);
            let k2 = self.evaluate(&predictor, state)?;
            let slope: Vec<f64> = k1
                .theta_dot
                .iter()
                .zip(&k2.theta_dot)
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let corrector = k1.theta.axpy(tau, &slope);
            let delta: Vec<f64> = corrector
                .as_slice()
                .iter()
                .zip(predictor.as_slice())
                .map(|(c, p)| c - p)
                .collect();
            let error = 0.5 * metric_norm(&k1.system.qgt.re, &delta);
            if error <= sc.local_error_target {
                let growth = if error > 0.0 {
                    (0.9 * (sc.local_error_target / error).sqrt()).clamp(0.5, 2.0)
                } else {
                    2.0
                };
                // a step shortened only to land on max_time keeps the old size
                let base = if rejected == 0 { tau.max(state.tau) } else { tau };
                let residual = estimators::tdvp_residual(
                    &k1.system.qgt,
                    &k1.system.force,
                    &k1.theta_dot,
                    k1.system.energy_variance.mean.re,
                    tau,
                );
                return Ok(TdvpStep {
                    theta_new: corrector,
                    theta_dot: slope,
                    residual,
                    delta_phase: 0.5 * tau * (k1.phase_rate + k2.phase_rate),
                    tau_used: tau,
                    next_tau: (base * growth).clamp(sc.tau_min, sc.tau_max),
                    error_estimate: error,
                    rejected,
                    solver: k1.solver.clone(),
                });
            }
            if tau <= sc.tau_min.min(remaining) * (1.0 + 1e-12) {
                return Err(Error::StepUnderflow {
                    t: state.t,
                    tau,
                    error,
                    target: sc.local_error_target,
                });
            }
            rejected += 1;
            let shrink = (0.9 * (sc.local_error_target / error).sqrt()).clamp(0.1, 0.5);
            tau = (tau * shrink).max(sc.tau_min.min(remaining));
        }
    }
}

fn metric_norm(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let p = v.len();
    let mut acc = 0.0;
    for j in 0..p {
        if v[j] == 0.0 {
            continue;
        }
        let col: f64 = m.column(j).iter().zip(v).map(|(a, b)| a * b).sum();
        acc += v[j] * col;
    }
    acc.max(0.0).sqrt()
}

/// Named Pauli operator measured along a trajectory.
#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub op: PauliOperator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableValue {
    pub name: String,
    pub mean: f64,
    pub mean_imag: f64,
    pub std_error: f64,
}

/// One line of the trajectory output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    /// Step size that led to this record; zero for the initial record.
    pub tau: f64,
    pub residual: f64,
    pub error_estimate: f64,
    pub rejected_steps: usize,
    pub energy: f64,
    pub energy_error: f64,
    pub energy_variance: f64,
    pub phase_re: f64,
    pub phase_im: f64,
    pub observables: Vec<ObservableValue>,
    pub sampler: ChainDiagnostics,
    pub solver: SolverDiagnostics,
    /// Connected configurations with vanishing amplitude met by the local
    /// estimators; nonzero values flag biased estimates.
    pub vanishing_connections: usize,
}

fn measure(
    ansatz: &Ansatz,
    eval: &Evaluation,
    observables: &[Observable],
) -> Result<Vec<ObservableValue>> {
    observables
        .iter()
        .map(|o| {
            let e: ScalarEstimate = estimators::expectation(&o.op, ansatz, &eval.theta, &eval.samples)?;
            Ok(ObservableValue {
                name: o.name.clone(),
                mean: e.mean.re,
                mean_imag: e.mean.im,
                std_error: e.std_error,
            })
        })
        .collect()
}

fn record(
    ansatz: &Ansatz,
    state: &TdvpState,
    eval: &Evaluation,
    step: Option<&TdvpStep>,
    observables: &[Observable],
) -> Result<StepRecord> {
    Ok(StepRecord {
        step: state.step,
        t: state.t,
        tau: step.map_or(0.0, |s| s.tau_used),
        residual: step.map_or(0.0, |s| s.residual),
        error_estimate: step.map_or(0.0, |s| s.error_estimate),
        rejected_steps: step.map_or(0, |s| s.rejected),
        energy: eval.system.energy.mean.re,
        energy_error: eval.system.energy.std_error,
        energy_variance: eval.system.energy_variance.mean.re,
        phase_re: state.phase.re,
        phase_im: state.phase.im,
        observables: measure(ansatz, eval, observables)?,
        sampler: eval.samples.diagnostics().clone(),
        solver: step.map_or_else(|| eval.solver.clone(), |s| s.solver.clone()),
        vanishing_connections: eval.system.vanishing_connections,
    })
}

/// Integrate from `state` to `cfg.max_time`, handing every record (the
/// initial one included when `state.step == 0`) and the state after it to
/// `sink`. Errors are returned after all records produced so far were sunk.
pub fn evolve(
    integrator: &Integrator,
    mut state: TdvpState,
    observables: &[Observable],
    mut sink: impl FnMut(&StepRecord, &TdvpState) -> Result<()>,
) -> Result<TdvpState> {
    let max_time = integrator.cfg.max_time;
    let mut eval = integrator.evaluate(&state.theta.clone(), &mut state)?;
    if state.step == 0 {
        let rec = record(integrator.ansatz, &state, &eval, None, observables)?;
        sink(&rec, &state)?;
    }
    while max_time - state.t > 1e-12 * max_time.max(1.0) {
        let step = integrator.heun_step(&mut state, &eval)?;
        state.theta = step.theta_new.clone();
        state.t += step.tau_used;
        if (max_time - state.t).abs() <= 1e-12 * max_time.max(1.0) {
            state.t = max_time;
        }
        state.phase += step.delta_phase;
        state.tau = step.next_tau;
        state.step += 1;
        // the slope at the new point doubles as the next predictor slope
        let resume_point = state.clone();
        eval = integrator.evaluate(&state.theta.clone(), &mut state)?;
        let rec = record(integrator.ansatz, &state, &eval, Some(&step), observables)?;
        sink(&rec, &resume_point)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity_qgt(p: usize) -> QgtEstimate {
        QgtEstimate::from_matrix(&DMatrix::identity(p, p))
    }

    #[test]
    fn identity_metric_returns_real_force() {
        let f = vec![
            Complex64::new(0.3, 1.0),
            Complex64::new(-2.0, 0.5),
            Complex64::new(0.0, 0.0),
        ];
        let (x, d) = solve_tdvp_system(
            &identity_qgt(3),
            &ForceEstimate::exact(f.clone()),
            Variant::Distance,
            &Regularization::default(),
        )
        .unwrap();
        for (a, b) in x.iter().zip(&f) {
            assert!((a - b.re).abs() < 1e-15);
        }
        assert_eq!(d.rank, 3);
        assert_eq!(d.n_filtered, 0);
    }

    #[test]
    fn zero_metric_is_rank_zero() {
        let s = QgtEstimate::from_matrix(&DMatrix::zeros(2, 2));
        let f = ForceEstimate::exact(vec![Complex64::new(1.0, 0.0); 2]);
        assert!(matches!(
            solve_tdvp_system(&s, &f, Variant::Distance, &Regularization::default()),
            Err(Error::RankZeroGeometricTensor { .. })
        ));
    }

    #[test]
    fn action_variant_inverts_antisymmetric_part() {
        // S = [[1, i], [-i, 1]] has Im S = [[0, 1], [-1, 0]]
        let s = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(1.0, 0.0),
            ],
        );
        let q = QgtEstimate::from_matrix(&s);
        let f = ForceEstimate::exact(vec![Complex64::new(0.0, 2.0), Complex64::new(0.0, -3.0)]);
        let (x, _) = solve_tdvp_system(&q, &f, Variant::Action, &Regularization::default()).unwrap();
        // [[0,1],[-1,0]] x = [2, -3]
        assert!((x[1] - 2.0).abs() < 1e-14 && (x[0] - 3.0).abs() < 1e-14, "{x:?}");
    }

    #[test]
    fn cutoff_drops_small_eigenvalues() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1e-12]));
        let (x, d) = solve_symmetric(&m, &[1.0, 1.0], &Regularization::default()).unwrap();
        assert_eq!(d.rank, 1);
        assert!((x[0] - 1.0).abs() < 1e-14 && x[1] == 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TdvpConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.step.tau0 = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TdvpConfig::default();
        cfg.regularization.svd_cutoff = -1.0;
        assert!(cfg.validate().is_err());
    }

    fn noisy_force(p: usize, n: usize, seed: u64) -> (QgtEstimate, ForceEstimate) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        let s = &a * a.transpose();
        let per_sample = DMatrix::from_fn(n, p, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
        let w = vec![1.0 / n as f64; n];
        let f: Vec<Complex64> = (0..p)
            .map(|k| per_sample.column(k).iter().zip(&w).map(|(v, w)| v * w).sum())
            .collect();
        let force = ForceEstimate {
            std_errors: vec![0.0; p],
            f,
            per_sample,
            weights: w,
            n_effective: n as f64,
        };
        (QgtEstimate::from_matrix(&s.map(|v| Complex64::new(v, 0.0))), force)
    }

    proptest! {
        #[test]
        fn raising_snr_threshold_never_keeps_more(seed in any::<u64>(), lo in 0.0f64..3.0, extra in 0.0f64..3.0) {
            let (s, f) = noisy_force(6, 40, seed);
            let keep = |snr: f64| {
                let reg = Regularization { snr_threshold: snr, ..Default::default() };
                let (_, d) = solve_tdvp_system(&s, &f, Variant::Distance, &reg).unwrap();
                d.rank - d.n_filtered
            };
            prop_assert!(keep(lo + extra) <= keep(lo));
        }
    }
}
