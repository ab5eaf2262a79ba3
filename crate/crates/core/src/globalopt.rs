//! Step-wise infidelity minimization against an approximate propagator.
//!
//! The propagator `Φ_τ ≈ e^{-iHτ}` is either a symmetric second-order
//! product of Pauli rotations or a truncated Taylor series. Its amplitudes
//! `⟨x|Φ_τ|ψ_θ⟩` are evaluated exactly from the network, and new parameters
//! are found by (natural) gradient descent on the sampled infidelity.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{is_vanishing, Ansatz, ParameterVector};
use crate::error::{Error, Result};
use crate::checkpoint::GlobalProgress;
use crate::estimators::{self, InfidelityEstimate, LogPsiCache, ScalarEstimate};
use crate::oracle::DenseState;
use crate::model::{PauliOperator, PauliString, SpinConfiguration};
use crate::sampler::{ChainDiagnostics, Sampling};
use crate::tdvp::{solve_symmetric, Observable, ObservableValue, Regularization};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default limit on intermediate configurations in a Trotter amplitude.
pub const DEFAULT_BRANCHING_BUDGET: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorKind {
    Trotter2,
    Taylor1,
    Taylor2,
}

/// `e^{-iθP}` for a unit-coefficient Pauli word `P`.
#[derive(Clone, Debug)]
struct Rotation {
    word: PauliOperator,
    angle: f64,
    diagonal: bool,
}

#[derive(Clone, Debug)]
enum Form {
    /// Product in operator order: the first rotation acts last on the ket.
    Product(Vec<Rotation>),
    /// Polynomial operator and its adjoint.
    Polynomial { forward: PauliOperator, adjoint: PauliOperator },
}

/// An approximate propagator ready for amplitude evaluation.
#[derive(Clone, Debug)]
pub struct PropagatorApplication {
    kind: PropagatorKind,
    tau: f64,
    n_sites: usize,
    form: Form,
    budget: usize,
}

/// Symmetric second-order splitting `Π_k e^{-i c_k P_k τ/2} · reversed`,
/// diagonal strings first; the two middle half-steps are merged.
pub fn trotter_factorize(h: &PauliOperator, tau: f64, order: usize) -> Result<PropagatorApplication> {
    if order != 2 {
        return Err(Error::InvalidInput(format!(
            "only second-order splitting is available, got order {order}"
        )));
    }
    if !tau.is_finite() {
        return Err(Error::InvalidInput("non-finite time step".into()));
    }
    let h = h.simplified();
    let n = h.n_sites();
    let mut terms: Vec<&PauliString> = h.terms().iter().collect();
    if let Some(t) = terms.iter().find(|t| t.locality() > 2) {
        return Err(Error::LocalityTooHigh {
            locality: t.locality(),
        });
    }
    if let Some(t) = terms.iter().find(|t| t.coefficient().im != 0.0) {
        return Err(Error::InvalidInput(format!(
            "rotation generator with complex coefficient {}",
            t.coefficient()
        )));
    }
    terms.sort_by_key(|t| !t.is_diagonal());
    let rotation = |t: &PauliString, dt: f64| -> Result<Rotation> {
        Ok(Rotation {
            word: PauliOperator::new(n, vec![t.scaled(1.0 / t.coefficient())])?,
            angle: t.coefficient().re * dt,
            diagonal: t.is_diagonal(),
        })
    };
    let mut rotations = Vec::with_capacity(2 * terms.len());
    if let Some((last, rest)) = terms.split_last() {
        for t in rest {
            rotations.push(rotation(t, tau / 2.0)?);
        }
        rotations.push(rotation(last, tau)?);
        for t in rest.iter().rev() {
            rotations.push(rotation(t, tau / 2.0)?);
        }
    }
    Ok(PropagatorApplication {
        kind: PropagatorKind::Trotter2,
        tau,
        n_sites: n,
        form: Form::Product(rotations),
        budget: DEFAULT_BRANCHING_BUDGET,
    })
}

/// `Σ_{k≤p} (−iτH)^k / k!` for `p ∈ {1, 2}`.
pub fn taylor_propagator(h: &PauliOperator, tau: f64, order: usize) -> Result<PropagatorApplication> {
    let kind = match order {
        1 => PropagatorKind::Taylor1,
        2 => PropagatorKind::Taylor2,
        _ => {
            return Err(Error::InvalidInput(format!(
                "Taylor order must be 1 or 2, got {order}"
            )))
        }
    };
    let n = h.n_sites();
    let build = |s: f64| -> Result<PauliOperator> {
        let mut op = PauliOperator::identity(n)?.plus(&h.scaled(Complex64::new(0.0, -s)))?;
        if order == 2 {
            op = op.plus(&h.mul(h)?.scaled(-s * s / 2.0))?;
        }
        Ok(op)
    };
    Ok(PropagatorApplication {
        kind,
        tau,
        n_sites: n,
        form: Form::Polynomial {
            forward: build(tau)?,
            adjoint: build(-tau)?,
        },
        budget: DEFAULT_BRANCHING_BUDGET,
    })
}

impl PropagatorApplication {
    /// Build the propagator of the given kind for `H` and step `tau`.
    pub fn new(kind: PropagatorKind, h: &PauliOperator, tau: f64) -> Result<Self> {
        match kind {
            PropagatorKind::Trotter2 => trotter_factorize(h, tau, 2),
            PropagatorKind::Taylor1 => taylor_propagator(h, tau, 1),
            PropagatorKind::Taylor2 => taylor_propagator(h, tau, 2),
        }
    }

    pub fn kind(&self) -> PropagatorKind {
        self.kind
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn is_unitary(&self) -> bool {
        self.kind == PropagatorKind::Trotter2
    }

    /// Number of rotation factors (zero for Taylor propagators).
    pub fn n_factors(&self) -> usize {
        match &self.form {
            Form::Product(r) => r.len(),
            Form::Polynomial { .. } => 0,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    /// `⟨x|Φ|ψ⟩` (or `⟨x|Φ†|ψ⟩`) for amplitudes supplied by `amp`.
    fn contract(
        &self,
        x: SpinConfiguration,
        adjoint: bool,
        mut amp: impl FnMut(SpinConfiguration) -> Complex64,
    ) -> Result<Complex64> {
        let mut acc = ZERO;
        match &self.form {
            Form::Polynomial { forward, adjoint: adj } => {
                let op = if adjoint { adj } else { forward };
                op.for_each_connected(x, |y, m| acc += m * amp(y));
            }
            Form::Product(rotations) => {
                for (bits, c) in self.expand_bra(rotations, x, adjoint)? {
                    acc += c * amp(SpinConfiguration::from_bits_unchecked(bits, self.n_sites));
                }
            }
        }
        Ok(acc)
    }

    /// `⟨x|Φ|ψ⟩ / e^{log_denominator}` (or with `Φ†` when `adjoint`).
    pub(crate) fn ratio(
        &self,
        cache: &mut LogPsiCache,
        x: SpinConfiguration,
        log_denominator: Complex64,
        adjoint: bool,
    ) -> Result<Complex64> {
        self.contract(x, adjoint, |y| {
            let chi = cache.get(y);
            if is_vanishing(chi) {
                ZERO
            } else {
                (chi - log_denominator).exp()
            }
        })
    }

    /// `Φ|ψ⟩` on a dense state.
    pub fn apply_dense(&self, psi: &DenseState) -> Result<DenseState> {
        if psi.n_sites() != self.n_sites {
            return Err(Error::SiteMismatch {
                expected: self.n_sites,
                got: psi.n_sites(),
            });
        }
        let amps = SpinConfiguration::basis(self.n_sites)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|x| self.contract(x, false, |y| psi.amplitude(y)))
            .collect::<Result<Vec<_>>>()?;
        DenseState::new(amps, self.n_sites)
    }

    /// `⟨x|Φ = Σ_y c_y ⟨y|`, merging equal `y` after every factor.
    fn expand_bra(&self, rotations: &[Rotation], x: SpinConfiguration, adjoint: bool) -> Result<Vec<(u64, Complex64)>> {
        let mut current: HashMap<u64, Complex64> = HashMap::from([(x.bits(), Complex64::new(1.0, 0.0))]);
        let sign = if adjoint { -1.0 } else { 1.0 };
        let mut apply = |r: &Rotation| -> Result<()> {
            let (c, s) = ((sign * r.angle).cos(), (sign * r.angle).sin());
            if r.diagonal {
                for (bits, amp) in current.iter_mut() {
                    let p = r.word.diagonal_element(SpinConfiguration::from_bits_unchecked(*bits, self.n_sites));
                    *amp *= c - I * s * p;
                }
                return Ok(());
            }
            let mut next: HashMap<u64, Complex64> = HashMap::with_capacity(2 * current.len());
            for (&bits, &amp) in &current {
                *next.entry(bits).or_insert(ZERO) += c * amp;
                r.word
                    .for_each_connected(SpinConfiguration::from_bits_unchecked(bits, self.n_sites), |y, m| {
                        *next.entry(y.bits()).or_insert(ZERO) += -I * s * m * amp;
                    });
            }
            next.retain(|_, v| *v != ZERO);
            if next.len() > self.budget {
                return Err(Error::BranchingBudgetExceeded {
                    needed: next.len(),
                    budget: self.budget,
                });
            }
            current = next;
            Ok(())
        };
        // operator order for Φ; the reversed sequence of inverses for Φ†
        if adjoint {
            for r in rotations.iter().rev() {
                apply(r)?;
            }
        } else {
            for r in rotations {
                apply(r)?;
            }
        }
        let mut out: Vec<(u64, Complex64)> = current.into_iter().collect();
        out.sort_by_key(|e| e.0);
        Ok(out)
    }
}

/// `⟨x|Φ|ψ_θ⟩`.
pub fn apply_propagator_amplitude(
    phi: &PropagatorApplication,
    ansatz: &Ansatz,
    theta: &ParameterVector,
    x: SpinConfiguration,
) -> Result<Complex64> {
    ansatz.check_parameters(theta)?;
    if phi.n_sites != ansatz.n_sites() || x.n_sites() != ansatz.n_sites() {
        return Err(Error::SiteMismatch {
            expected: ansatz.n_sites(),
            got: phi.n_sites.max(x.n_sites()),
        });
    }
    let mut cache = LogPsiCache::new(ansatz, theta);
    phi.ratio(&mut cache, x, ZERO, false)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptMethod {
    PlainGradient,
    #[default]
    NaturalGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub method: OptMethod,
    /// Initial learning rate; halved on every restart.
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub infidelity_target: f64,
    /// Regularization of the geometric-tensor solve (natural gradient).
    pub regularization: Regularization,
    /// Estimates above `1 + 5σ` this many times in a row abort the step.
    pub divergence_patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptMethod::NaturalGradient,
            learning_rate: 1.0,
            max_iterations: 100,
            infidelity_target: 1e-9,
            // small hidden weights enter the amplitude at second order, so
            // their metric directions are nearly singular
            regularization: Regularization {
                svd_cutoff: 1e-6,
                diagonal_shift: 0.0,
                snr_threshold: 0.0,
            },
            divergence_patience: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptTraceEntry {
    pub iteration: usize,
    pub infidelity: f64,
    pub std_error: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct OptStep {
    pub theta_new: ParameterVector,
    /// Estimate at `theta_new`.
    pub infidelity: InfidelityEstimate,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<OptTraceEntry>,
}

/// Minimize the infidelity between `ψ_new` and `Φ ψ_old`, warm-started at
/// `theta_old`. Samples of `ψ_old` are drawn once; samples of `ψ_new` are
/// redrawn every iteration. `stream` is advanced once per draw.
pub fn optimize_step(
    phi: &PropagatorApplication,
    ansatz: &Ansatz,
    theta_old: &ParameterVector,
    cfg: &OptimizerConfig,
    sampling: &Sampling,
    stream: &mut u64,
) -> Result<OptStep> {
    ansatz.check_parameters(theta_old)?;
    if phi.n_sites != ansatz.n_sites() {
        return Err(Error::SiteMismatch {
            expected: ansatz.n_sites(),
            got: phi.n_sites,
        });
    }
    let mut draw = |theta: &ParameterVector| {
        let s = sampling.draw(ansatz, theta, *stream);
        *stream += 1;
        s
    };
    let old_samples = draw(theta_old)?;
    let mut theta = theta_old.clone();
    let mut lr = cfg.learning_rate;
    let mut best: Option<(ParameterVector, InfidelityEstimate)> = None;
    let mut trace = Vec::new();
    let mut divergent = 0;
    for iteration in 0..=cfg.max_iterations {
        let new_samples = draw(&theta)?;
        let est = estimators::estimate_infidelity(
            phi,
            ansatz,
            theta_old,
            &old_samples,
            ansatz,
            &theta,
            &new_samples,
            true,
        )?;
        trace.push(OptTraceEntry {
            iteration,
            infidelity: est.value,
            std_error: est.std_error,
            learning_rate: lr,
        });
        if est.value > 1.0 + 5.0 * est.std_error {
            divergent += 1;
            if divergent >= cfg.divergence_patience {
                return Err(Error::DivergentInfidelity {
                    value: est.value,
                    std_error: est.std_error,
                    iteration,
                });
            }
        } else {
            divergent = 0;
        }
        if est.value + est.std_error < cfg.infidelity_target {
            return Ok(OptStep {
                theta_new: theta,
                infidelity: est,
                iterations: iteration,
                converged: true,
                trace,
            });
        }
        let improved = best
            .as_ref()
            .is_none_or(|(_, b)| est.value <= b.value + 3.0 * (est.std_error + b.std_error) + 1e-15);
        if !improved {
            // restart from the best point with a smaller step
            let (bt, _) = best.as_ref().expect("best point recorded");
            theta = bt.clone();
            lr *= 0.5;
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| est.value < b.value) {
            best = Some((theta.clone(), est.clone()));
        }
        if iteration == cfg.max_iterations {
            break;
        }
        let grad = est.gradient.as_ref().expect("gradient requested");
        let direction: Vec<f64> = match cfg.method {
            OptMethod::PlainGradient => grad.iter().map(|g| -g).collect(),
            OptMethod::NaturalGradient => {
                let qgt = estimators::estimate_qgt(ansatz, &theta, &new_samples)?;
                let rhs: Vec<f64> = grad.iter().map(|g| -0.5 * g).collect();
                solve_symmetric(&qgt.re, &rhs, &cfg.regularization)?.0
            }
        };
        theta = theta.axpy(lr, &direction);
        if let Some(k) = theta.first_non_finite() {
            return Err(Error::NonFiniteParameter(k));
        }
    }
    let (theta_new, infidelity) = best.expect("at least one iteration");
    Ok(OptStep {
        theta_new,
        infidelity,
        iterations: cfg.max_iterations,
        converged: false,
        trace,
    })
}

/// Settings of a step-wise global evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub propagator: PropagatorKind,
    pub tau: f64,
    pub max_time: f64,
    pub branching_budget: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            propagator: PropagatorKind::Trotter2,
            tau: 1e-2,
            max_time: 1.0,
            branching_budget: DEFAULT_BRANCHING_BUDGET,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl GlobalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if !(self.max_time >= 0.0 && self.max_time.is_finite()) {
            return bad("max_time must be finite and non-negative");
        }
        if self.branching_budget == 0 {
            return bad("branching_budget must be positive");
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.infidelity_target > 0.0) || o.divergence_patience == 0 {
            return bad("optimizer learning_rate, infidelity_target and divergence_patience must be positive");
        }
        Ok(())
    }
}

/// One line of a global evolution trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalRecord {
    pub step: usize,
    pub t: f64,
    /// Zero for the initial record.
    pub tau: f64,
    pub infidelity: f64,
    pub infidelity_error: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Optimizer iterations of this step.
    pub trace: Vec<OptTraceEntry>,
    pub energy: f64,
    pub energy_error: f64,
    pub energy_variance: f64,
    pub observables: Vec<ObservableValue>,
    pub sampler: ChainDiagnostics,
    pub vanishing_connections: usize,
}

struct Measurement {
    energy: ScalarEstimate,
    variance: f64,
    observables: Vec<ObservableValue>,
    sampler: ChainDiagnostics,
    vanishing: usize,
}

fn measure(
    h: &PauliOperator,
    ansatz: &Ansatz,
    theta: &ParameterVector,
    sampling: &Sampling,
    stream: &mut u64,
    observables: &[Observable],
) -> Result<Measurement> {
    let samples = sampling.draw(ansatz, theta, *stream)?;
    *stream += 1;
    let lv = estimators::local_values(h, ansatz, theta, &samples)?;
    let energy = ScalarEstimate::from_values(&lv.values, &samples);
    let sq: Vec<Complex64> = lv
        .values
        .iter()
        .map(|v| Complex64::new((v - energy.mean).norm_sqr(), 0.0))
        .collect();
    let variance = ScalarEstimate::from_values(&sq, &samples).mean.re;
    let observables = observables
        .iter()
        .map(|o| {
            let e = estimators::expectation(&o.op, ansatz, theta, &samples)?;
            Ok(ObservableValue {
                name: o.name.clone(),
                mean: e.mean.re,
                mean_imag: e.mean.im,
                std_error: e.std_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Measurement {
        energy,
        variance,
        observables,
        sampler: samples.diagnostics().clone(),
        vanishing: lv.vanishing_connections,
    })
}

/// Step `theta` from `progress.t` to `cfg.max_time` in steps of `cfg.tau`
/// (the last one shortened to land on `max_time`). Every record is handed
/// to `sink` with the parameters and progress right after it, which is a
/// valid resume point. The initial record is emitted when `progress.step == 0`.
pub fn evolve_global(
    ansatz: &Ansatz,
    h: &PauliOperator,
    cfg: &GlobalConfig,
    sampling: &Sampling,
    mut theta: ParameterVector,
    mut progress: GlobalProgress,
    observables: &[Observable],
    mut sink: impl FnMut(&GlobalRecord, &ParameterVector, &GlobalProgress) -> Result<()>,
) -> Result<(ParameterVector, GlobalProgress)> {
    cfg.validate()?;
    ansatz.check_parameters(&theta)?;
    if h.n_sites() != ansatz.n_sites() {
        return Err(Error::SiteMismatch {
            expected: ansatz.n_sites(),
            got: h.n_sites(),
        });
    }
    let record = |m: Measurement, step: usize, t: f64, tau: f64, opt: Option<&OptStep>| GlobalRecord {
        step,
        t,
        tau,
        infidelity: opt.map_or(0.0, |o| o.infidelity.value),
        infidelity_error: opt.map_or(0.0, |o| o.infidelity.std_error),
        iterations: opt.map_or(0, |o| o.iterations),
        converged: opt.is_none_or(|o| o.converged),
        trace: opt.map_or_else(Vec::new, |o| o.trace.clone()),
        energy: m.energy.mean.re,
        energy_error: m.energy.std_error,
        energy_variance: m.variance,
        observables: m.observables,
        sampler: m.sampler,
        vanishing_connections: m.vanishing,
    };
    if progress.step == 0 {
        let m = measure(h, ansatz, &theta, sampling, &mut progress.stream, observables)?;
        let rec = record(m, 0, progress.t, 0.0, None);
        sink(&rec, &theta, &progress)?;
    }
    let tol = 1e-12 * cfg.max_time.max(1.0);
    let full = PropagatorApplication::new(cfg.propagator, h, cfg.tau)?.with_budget(cfg.branching_budget);
    while cfg.max_time - progress.t > tol {
        let remaining = cfg.max_time - progress.t;
        let (tau, short);
        let phi = if remaining < cfg.tau - tol {
            tau = remaining;
            short = PropagatorApplication::new(cfg.propagator, h, tau)?.with_budget(cfg.branching_budget);
            &short
        } else {
            tau = cfg.tau;
            &full
        };
        let opt = optimize_step(phi, ansatz, &theta, &cfg.optimizer, sampling, &mut progress.stream)?;
        theta = opt.theta_new.clone();
        progress.step += 1;
        progress.t = if (cfg.max_time - (progress.t + tau)).abs() <= tol {
            cfg.max_time
        } else {
            progress.t + tau
        };
        progress.tau = tau;
        let m = measure(h, ansatz, &theta, sampling, &mut progress.stream, observables)?;
        let rec = record(m, progress.step, progress.t, tau, Some(&opt));
        sink(&rec, &theta, &progress)?;
    }
    Ok((theta, progress))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_tfim, Boundary, Lattice, PauliAxis};

    #[test]
    fn zero_step_is_identity() {
        let h = build_tfim(&Lattice::chain(4, Boundary::Periodic).unwrap(), 1.0, 0.7, 0.0).unwrap();
        let phi = trotter_factorize(&h, 0.0, 2).unwrap();
        let a = Ansatz::rbm(4, 1).unwrap();
        let theta = a.random_parameters(0.3, 1);
        for x in SpinConfiguration::basis(4) {
            let amp = apply_propagator_amplitude(&phi, &a, &theta, x).unwrap();
            let want = a.log_amplitude(&theta, x).unwrap().exp();
            assert!((amp - want).norm() < 1e-13);
        }
    }

    #[test]
    fn dense_application_matches_amplitudes() {
        let n = 4;
        let h = build_tfim(&Lattice::chain(n, Boundary::Periodic).unwrap(), 1.0, 0.9, 0.2).unwrap();
        let a = Ansatz::rbm(n, 1).unwrap();
        let theta = a.random_parameters(0.3, 8);
        let dense = crate::oracle::nqs_to_dense(&a, &theta).unwrap();
        for phi in [trotter_factorize(&h, 0.2, 2).unwrap(), taylor_propagator(&h, 0.2, 2).unwrap()] {
            let out = phi.apply_dense(&dense).unwrap();
            for x in SpinConfiguration::basis(n) {
                let amp = apply_propagator_amplitude(&phi, &a, &theta, x).unwrap();
                assert!((out.amplitude(x) - amp).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_propagator_is_a_phase() {
        let n = 3;
        let h = build_tfim(&Lattice::chain(n, Boundary::Open).unwrap(), 0.7, 0.0, 0.4).unwrap();
        let tau = 0.37;
        let phi = trotter_factorize(&h, tau, 2).unwrap();
        let a = Ansatz::rbm(n, 1).unwrap();
        let theta = a.random_parameters(0.3, 2);
        for x in SpinConfiguration::basis(n) {
            let e = h.diagonal_element(x);
            let want = a.log_amplitude(&theta, x).unwrap().exp() * (-I * e * tau).exp();
            let amp = apply_propagator_amplitude(&phi, &a, &theta, x).unwrap();
            assert!((amp - want).norm() < 1e-13);
        }
    }

    #[test]
    fn single_rotation_superposes_two_amplitudes() {
        let n = 2;
        let h = PauliOperator::single(n, 1, PauliAxis::X, 0.8).unwrap();
        let tau = 0.5;
        let phi = trotter_factorize(&h, tau, 2).unwrap();
        assert_eq!(phi.n_factors(), 1);
        let a = Ansatz::full(n).unwrap();
        let theta = a.random_parameters(0.5, 3);
        let psi = |x: SpinConfiguration| a.log_amplitude(&theta, x).unwrap().exp();
        for x in SpinConfiguration::basis(n) {
            let want = (0.4f64).cos() * psi(x) - I * (0.4f64).sin() * psi(x.flipped(0b10));
            let amp = apply_propagator_amplitude(&phi, &a, &theta, x).unwrap();
            assert!((amp - want).norm() < 1e-14);
        }
    }

    #[test]
    fn taylor_first_order_uses_local_energy() {
        let n = 3;
        let h = build_tfim(&Lattice::chain(n, Boundary::Periodic).unwrap(), 1.0, 0.6, 0.2).unwrap();
        let tau = 0.05;
        let phi = taylor_propagator(&h, tau, 1).unwrap();
        assert!(!phi.is_unitary());
        let a = Ansatz::rbm(n, 1).unwrap();
        let theta = a.random_parameters(0.3, 4);
        for x in SpinConfiguration::basis(n) {
            let e = estimators::local_estimator(&h, &a, &theta, x).unwrap();
            let want = a.log_amplitude(&theta, x).unwrap().exp() * (1.0 - I * tau * e);
            let amp = apply_propagator_amplitude(&phi, &a, &theta, x).unwrap();
            assert!((amp - want).norm() < 1e-13);
        }
    }

    #[test]
    fn rejects_high_locality_and_wrong_order() {
        let h = PauliOperator::new(
            3,
            vec![PauliString::new(1.0, vec![(0, PauliAxis::X), (1, PauliAxis::X), (2, PauliAxis::X)]).unwrap()],
        )
        .unwrap();
        assert!(matches!(trotter_factorize(&h, 0.1, 2), Err(Error::LocalityTooHigh { locality: 3 })));
        let h2 = PauliOperator::single(3, 0, PauliAxis::X, 1.0).unwrap();
        assert!(trotter_factorize(&h2, 0.1, 4).is_err());
        assert!(taylor_propagator(&h2, 0.1, 3).is_err());
    }

    #[test]
    fn branching_budget_is_enforced() {
        let n = 8;
        let h = build_tfim(&Lattice::chain(n, Boundary::Periodic).unwrap(), 1.0, 1.0, 0.0).unwrap();
        let phi = trotter_factorize(&h, 0.1, 2).unwrap().with_budget(16);
        let a = Ansatz::rbm(n, 1).unwrap();
        let theta = a.random_parameters(0.1, 1);
        let x = SpinConfiguration::all_up(n);
        assert!(matches!(
            apply_propagator_amplitude(&phi, &a, &theta, x),
            Err(Error::BranchingBudgetExceeded { budget: 16, .. })
        ));
    }

    #[test]
    fn identity_propagator_converges_immediately() {
        let n = 4;
        let h = build_tfim(&Lattice::chain(n, Boundary::Periodic).unwrap(), 1.0, 1.0, 0.0).unwrap();
        let phi = trotter_factorize(&h, 0.0, 2).unwrap();
        let a = Ansatz::rbm(n, 1).unwrap();
        let theta = a.random_parameters(0.2, 5);
        let mut stream = 0;
        let step = optimize_step(&phi, &a, &theta, &OptimizerConfig::default(), &Sampling::Exact, &mut stream).unwrap();
        assert!(step.converged);
        assert_eq!(step.iterations, 0);
        assert!(step.infidelity.value.abs() < 1e-14);
    }

    #[test]
    fn global_evolution_tracks_exact_dynamics_and_resumes() {
        use crate::ansatz::ProductState;
        use crate::oracle::{exact_evolve, nqs_to_dense};
        let n = 4;
        let h = build_tfim(&Lattice::chain(n, Boundary::Periodic).unwrap(), 1.0, 1.0, 0.0).unwrap();
        let a = Ansatz::full(n).unwrap();
        let plus = ProductState::polarized(n, "+x").unwrap();
        let theta0 = a.initial_parameters(&plus, 0.0, 1).unwrap();
        let cfg = GlobalConfig {
            tau: 0.05,
            max_time: 0.12,
            ..Default::default()
        };
        let start = GlobalProgress { t: 0.0, step: 0, stream: 0, tau: cfg.tau };
        let mut records = Vec::new();
        let mut resume = None;
        let (theta, progress) = evolve_global(&a, &h, &cfg, &Sampling::Exact, theta0.clone(), start.clone(), &[], |r, th, p| {
            records.push(r.clone());
            if r.step == 1 {
                resume = Some((th.clone(), p.clone()));
            }
            Ok(())
        })
        .unwrap();
        let ts: Vec<f64> = records.iter().map(|r| r.t).collect();
        assert_eq!(ts.len(), 4);
        assert!((ts[2] - 0.1).abs() < 1e-14 && ts[3] == 0.12, "{ts:?}");
        assert!((records[3].tau - 0.02).abs() < 1e-14);
        let exact = exact_evolve(&DenseState::from_product(&plus).unwrap(), &h, 0.12, None).unwrap();
        let f = crate::oracle::fidelity(&exact, &nqs_to_dense(&a, &theta).unwrap()).unwrap();
        assert!(1.0 - f < 1e-5, "infidelity {}", 1.0 - f);
        let (th, p) = resume.unwrap();
        let (theta2, progress2) = evolve_global(&a, &h, &cfg, &Sampling::Exact, th, p, &[], |_, _, _| Ok(())).unwrap();
        assert_eq!(theta2, theta);
        assert_eq!(progress2, progress);
    }
}
