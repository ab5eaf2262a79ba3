//! Monte-Carlo estimators over a [`SampleSet`].
//!
//! All second moments are computed in centered form, so the estimates do not
//! depend on the normalization or global phase of `ψ_θ`. Under exact
//! summation every estimator equals its dense linear-algebra counterpart.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ansatz::{is_vanishing, Ansatz, ParameterVector};
use crate::error::{Error, Result};
use crate::globalopt::PropagatorApplication;
use crate::model::{PauliOperator, SpinConfiguration};
use crate::sampler::SampleSet;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Weighted mean with its Monte-Carlo error `sqrt(variance / n_effective)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub mean: Complex64,
    pub std_error: f64,
    pub variance: f64,
    /// Infinite for exact sums.
    pub n_effective: f64,
}

impl ScalarEstimate {
    /// Estimate from one value per distinct configuration of `samples`.
    pub fn from_values(values: &[Complex64], samples: &SampleSet) -> Self {
        let w = samples.weights();
        let mean: Complex64 = values.iter().zip(w).map(|(v, w)| v * w).sum();
        let variance: f64 = values.iter().zip(w).map(|(v, w)| w * (v - mean).norm_sqr()).sum();
        let n_effective = samples.effective_size(values);
        Self {
            mean,
            std_error: standard_error(variance, n_effective),
            variance,
            n_effective,
        }
    }

    /// Exact value with no statistical error.
    pub fn exact(mean: Complex64) -> Self {
        Self {
            mean,
            std_error: 0.0,
            variance: 0.0,
            n_effective: f64::INFINITY,
        }
    }
}

fn standard_error(variance: f64, n_effective: f64) -> f64 {
    if n_effective.is_infinite() {
        0.0
    } else {
        (variance / n_effective).sqrt()
    }
}

/// Memoized `χ_θ` over configurations, seeded with the sampled values.
pub(crate) struct LogPsiCache<'a> {
    ansatz: &'a Ansatz,
    theta: &'a [f64],
    map: HashMap<u64, Complex64>,
}

impl<'a> LogPsiCache<'a> {
    pub(crate) fn new(ansatz: &'a Ansatz, theta: &'a ParameterVector) -> Self {
        Self {
            ansatz,
            theta: theta.as_slice(),
            map: HashMap::new(),
        }
    }

    pub(crate) fn seeded(ansatz: &'a Ansatz, theta: &'a ParameterVector, samples: &SampleSet) -> Self {
        let mut c = Self::new(ansatz, theta);
        c.map.reserve(samples.len() * 4);
        for (x, chi) in samples.configurations().iter().zip(samples.log_amplitudes()) {
            c.map.insert(x.bits(), *chi);
        }
        c
    }

    #[inline]
    pub(crate) fn get(&mut self, x: SpinConfiguration) -> Complex64 {
        let (ansatz, theta) = (self.ansatz, self.theta);
        *self
            .map
            .entry(x.bits())
            .or_insert_with(|| ansatz.eval_log_amplitude(theta, x))
    }
}

/// `Σ_x' ⟨x|O|x'⟩ exp(χ(x') − log_denominator)`, counting vanishing `ψ(x')`.
fn ratio_sum(
    op: &PauliOperator,
    cache: &mut LogPsiCache,
    x: SpinConfiguration,
    log_denominator: Complex64,
    vanishing: &mut usize,
) -> Complex64 {
    let mut acc = ZERO;
    op.for_each_connected(x, |xp, m| {
        let chi = cache.get(xp);
        if is_vanishing(chi) {
            *vanishing += 1;
        } else {
            acc += m * (chi - log_denominator).exp();
        }
    });
    acc
}

fn check_inputs(op: &PauliOperator, ansatz: &Ansatz, theta: &ParameterVector) -> Result<()> {
    ansatz.check_parameters(theta)?;
    if op.n_sites() != ansatz.n_sites() {
        return Err(Error::SiteMismatch {
            expected: ansatz.n_sites(),
            got: op.n_sites(),
        });
    }
    Ok(())
}

fn check_support(samples: &SampleSet, context: &'static str) -> Result<()> {
    for (x, chi) in samples.configurations().iter().zip(samples.log_amplitudes()) {
        if is_vanishing(*chi) {
            return Err(Error::IllDefinedEstimator { config: x.bits(), context });
        }
    }
    Ok(())
}

/// `O^loc(x) = Σ_x' ⟨x|O|x'⟩ ψ(x')/ψ(x)`.
pub fn local_estimator(
    op: &PauliOperator,
    ansatz: &Ansatz,
    theta: &ParameterVector,
    x: SpinConfiguration,
) -> Result<Complex64> {
    check_inputs(op, ansatz, theta)?;
    if x.n_sites() != ansatz.n_sites() {
        return Err(Error::SiteMismatch {
            expected: ansatz.n_sites(),
            got: x.n_sites(),
        });
    }
    let mut cache = LogPsiCache::new(ansatz, theta);
    let chi = cache.get(x);
    if is_vanishing(chi) {
        return Err(Error::IllDefinedEstimator {
            config: x.bits(),
            context: "local estimator",
        });
    }
    let mut vanishing = 0;
    Ok(ratio_sum(op, &mut cache, x, chi, &mut vanishing))
}

/// Local estimator per distinct sampled configuration.
#[derive(Clone, Debug)]
pub struct LocalValues {
    pub values: Vec<Complex64>,
    /// Connected configurations with vanishing amplitude that were met.
    /// Nonzero counts flag the biased-estimator regime.
    pub vanishing_connections: usize,
}

pub fn local_values(
    op: &PauliOperator,
    ansatz: &Ansatz,
    theta: &ParameterVector,
    samples: &SampleSet,
) -> Result<LocalValues> {
    check_inputs(op, ansatz, theta)?;
    check_support(samples, "local estimator")?;
    let mut cache = LogPsiCache::seeded(ansatz, theta, samples);
    let mut vanishing = 0;
    let values = samples
        .configurations()
        .iter()
        .zip(samples.log_amplitudes())
        .map(|(&x, &chi)| ratio_sum(op, &mut cache, x, chi, &mut vanishing))
        .collect();
    Ok(LocalValues {
        values,
        vanishing_connections: vanishing,
    })
}

/// `⟨O⟩` as the weighted mean of the local estimator.
pub fn expectation(
    op: &PauliOperator,
    ansatz: &Ansatz,
    theta: &ParameterVector,
    samples: &SampleSet,
) -> Result<ScalarEstimate> {
    let lv = local_values(op, ansatz, theta, samples)?;
    Ok(ScalarEstimate::from_values(&lv.values, samples))
}

/// `Var H = ⟨|H^loc − ⟨H⟩|²⟩`.
pub fn energy_variance(
    h: &PauliOperator,
    ansatz: &Ansatz,
    theta: &ParameterVector,
    samples: &SampleSet,
) -> Result<ScalarEstimate> {
    let lv = local_values(h, ansatz, theta, samples)?;
    Ok(variance_of(&lv.values, samples))
}

fn variance_of(values: &[Complex64], samples: &SampleSet) -> ScalarEstimate {
    let mean = ScalarEstimate::from_values(values, samples).mean;
    let sq: Vec<Complex64> = values
        .iter()
        .map(|v| Complex64::new((v - mean).norm_sqr(), 0.0))
        .collect();
    ScalarEstimate::from_values(&sq, samples)
}

/// `Γ` with one row per distinct configuration.
pub(crate) fn log_derivative_matrix(
    ansatz: &Ansatz,
    theta: &ParameterVector,
    samples: &SampleSet,
) -> DMatrix<Complex64> {
    let p = ansatz.n_params();
    let n = samples.len();
    let mut g = DMatrix::<Complex64>::zeros(n, p);
    let mut row = vec![ZERO; p];
    for (r, &x) in samples.configurations().iter().enumerate() {
        ansatz.fill_log_derivatives(theta.as_slice(), x, &mut row);
        for (k, v) in row.iter().enumerate() {
            g[(r, k)] = *v;
        }
    }
    g
}

/// `S = ⟨Γ*Γ⟩ − ⟨Γ*⟩⟨Γ⟩`, stored as its real symmetric and imaginary
/// antisymmetric parts.
#[derive(Clone, Debug)]
pub struct QgtEstimate {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
    /// `⟨Γ⟩`, needed for the phase equation.
    pub mean_gamma: Vec<Complex64>,
    pub n_samples: usize,
}

impl QgtEstimate {
    pub fn dim(&self) -> usize {
        self.re.nrows()
    }

    pub fn matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            Complex64::new(self.re[(i, j)], self.im[(i, j)])
        })
    }

    /// Build directly from a Hermitian matrix, e.g. for synthetic systems.
    pub fn from_matrix(s: &DMatrix<Complex64>) -> Self {
        let re = s.map(|c| c.re);
        let im = s.map(|c| c.im);
        Self {
            re: (&re + re.transpose()) * 0.5,
            im: (&im - im.transpose()) * 0.5,
            mean_gamma: vec![ZERO; s.nrows()],
            n_samples: 0,
        }
    }
}

/// `F = −i(⟨Γ* H^loc⟩ − ⟨Γ*⟩⟨H^loc⟩)` with per-sample contributions kept for
/// signal-to-noise analysis.
#[derive(Clone, Debug)]
pub struct ForceEstimate {
    pub f: Vec<Complex64>,
    /// Errors of `Re F_k` and `Im F_k` combined in quadrature.
    pub std_errors: Vec<f64>,
    /// `f_k(x) = −i conj(Γ_k(x) − ⟨Γ_k⟩)(H^loc(x) − ⟨H⟩)`, one row per
    /// distinct configuration.
    pub per_sample: DMatrix<Complex64>,
    pub weights: Vec<f64>,
    pub n_effective: f64,
}

impl ForceEstimate {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Noise-free force, e.g. for synthetic systems.
    pub fn exact(f: Vec<Complex64>) -> Self {
        let p = f.len();
        Self {
            std_errors: vec![0.0; p],
            per_sample: DMatrix::zeros(0, p),
            weights: Vec::new(),
            n_effective: f64::INFINITY,
            f,
        }
    }

    /// Mean and standard error of `Σ_k B_kj part(f_k)` for each column `j`
    /// of `basis`. `imaginary` selects `Im f` instead of `Re f`.
    pub fn projected(&self, basis: &DMatrix<f64>, imaginary: bool) -> (Vec<f64>, Vec<f64>) {
        let part: Vec<f64> = self.f.iter().map(|c| if imaginary { c.im } else { c.re }).collect();
        let signal: Vec<f64> = (0..basis.ncols())
            .map(|j| basis.column(j).iter().zip(&part).map(|(b, f)| b * f).sum())
            .collect();
        if self.n_effective.is_infinite() || self.per_sample.nrows() == 0 {
            return (signal, vec![0.0; basis.ncols()]);
        }
        let samples = if imaginary {
            self.per_sample.map(|c| c.im)
        } else {
            self.per_sample.map(|c| c.re)
        };
        let rho = samples * basis;
        let errors = (0..basis.ncols())
            .map(|j| {
                let var: f64 = rho
                    .column(j)
                    .iter()
                    .zip(&self.weights)
                    .map(|(r, w)| w * (r - signal[j]).powi(2))
                    .sum();
                standard_error(var, self.n_effective)
            })
            .collect();
        (signal, errors)
    }
}

/// Everything one TDVP right-hand side evaluation needs, from a single pass
/// over the samples.
#[derive(Clone, Debug)]
pub struct TdvpSystem {
    pub qgt: QgtEstimate,
    pub force: ForceEstimate,
    pub energy: ScalarEstimate,
    pub energy_variance: ScalarEstimate,
    pub vanishing_connections: usize,
}

fn centered_parts(g: &DMatrix<Complex64>, w: &[f64]) -> (Vec<Complex64>, DMatrix<f64>, DMatrix<f64>) {
    let (n, p) = g.shape();
    let mean: Vec<Complex64> = (0..p)
        .map(|k| g.column(k).iter().zip(w).map(|(v, w)| v * w).sum())
        .collect();
    let mut a = DMatrix::<f64>::zeros(n, p);
    let mut b = DMatrix::<f64>::zeros(n, p);
    for k in 0..p {
        for r in 0..n {
            let s = w[r].sqrt();
            let c = g[(r, k)] - mean[k];
            a[(r, k)] = s * c.re;
            b[(r, k)] = s * c.im;
        }
    }
    (mean, a, b)
}

fn qgt_from_parts(mean: Vec<Complex64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> QgtEstimate {
    let re = a.tr_mul(a) + b.tr_mul(b);
    let cross = a.tr_mul(b);
    let im = &cross - cross.transpose();
    QgtEstimate {
        re: (&re + re.transpose()) * 0.5,
        im,
        mean_gamma: mean,
        n_samples: a.nrows(),
    }
}

pub fn estimate_qgt(ansatz: &Ansatz, theta: &ParameterVector, samples: &SampleSet) -> Result<QgtEstimate> {
    ansatz.check_parameters(theta)?;
    check_support(samples, "geometric tensor")?;
    let g = log_derivative_matrix(ansatz, theta, samples);
    let (mean, a, b) = centered_parts(&g, samples.weights());
    Ok(qgt_from_parts(mean, &a, &b))
}

fn force_from(g: &DMatrix<Complex64>, mean: &[Complex64], e: &[Complex64], samples: &SampleSet) -> ForceEstimate {
    let (n, p) = g.shape();
    let w = samples.weights();
    let e_mean: Complex64 = e.iter().zip(w).map(|(v, w)| v * w).sum();
    let n_effective = samples.effective_size(e);
    let mut per_sample = DMatrix::<Complex64>::zeros(n, p);
    let mut f = vec![ZERO; p];
    let minus_i = Complex64::new(0.0, -1.0);
    for k in 0..p {
        for r in 0..n {
            let v = minus_i * (g[(r, k)] - mean[k]).conj() * (e[r] - e_mean);
            per_sample[(r, k)] = v;
            f[k] += w[r] * v;
        }
    }
    let std_errors = (0..p)
        .map(|k| {
            if n_effective.is_infinite() {
                return 0.0;
            }
            let var: f64 = (0..n).map(|r| w[r] * (per_sample[(r, k)] - f[k]).norm_sqr()).sum();
            standard_error(var, n_effective)
        })
        .collect();
    ForceEstimate {
        f,
        std_errors,
        per_sample,
        weights: w.to_vec(),
        n_effective,
    }
}

pub fn estimate_force(
    h: &PauliOperator,
    ansatz: &Ansatz,
    theta: &ParameterVector,
    samples: &SampleSet,
) -> Result<ForceEstimate> {
    let lv = local_values(h, ansatz, theta, samples)?;
    let g = log_derivative_matrix(ansatz, theta, samples);
    let (mean, _, _) = centered_parts(&g, samples.weights());
    Ok(force_from(&g, &mean, &lv.values, samples))
}

/// QGT, force, energy and energy variance from one pass.
pub fn tdvp_system(
    h: &PauliOperator,
    ansatz: &Ansatz,
    theta: &ParameterVector,
    samples: &SampleSet,
) -> Result<TdvpSystem> {
    let lv = local_values(h, ansatz, theta, samples)?;
    let g = log_derivative_matrix(ansatz, theta, samples);
    let (mean, a, b) = centered_parts(&g, samples.weights());
    let force = force_from(&g, &mean, &lv.values, samples);
    let qgt = qgt_from_parts(mean, &a, &b);
    Ok(TdvpSystem {
        qgt,
        force,
        energy: ScalarEstimate::from_values(&lv.values, samples),
        energy_variance: variance_of(&lv.values, samples),
        vanishing_connections: lv.vanishing_connections,
    })
}

/// `r² = τ²[θ̇ᵀ Re S θ̇ − 2 Re F·θ̇ + Var H]`, clipped at zero.
pub fn tdvp_residual(s: &QgtEstimate, f: &ForceEstimate, theta_dot: &[f64], var_h: f64, tau: f64) -> f64 {
    let p = theta_dot.len();
    let mut quad = 0.0;
    for i in 0..p {
        let row: f64 = (0..p).map(|j| s.re[(i, j)] * theta_dot[j]).sum();
        quad += theta_dot[i] * row;
    }
    let lin: f64 = f.f.iter().zip(theta_dot).map(|(f, t)| f.re * t).sum();
    (tau * tau * (quad - 2.0 * lin + var_h)).max(0.0)
}

/// `1 − R(x) R'(y)` with `R(x) = ⟨x|Φ|ψ_old⟩/ψ_new(x)` and
/// `R'(y) = ⟨y|Φ†|ψ_new⟩/ψ_old(y)`.
pub fn local_infidelity(
    phi: &PropagatorApplication,
    ansatz_old: &Ansatz,
    theta_old: &ParameterVector,
    ansatz_new: &Ansatz,
    theta_new: &ParameterVector,
    x: SpinConfiguration,
    y: SpinConfiguration,
) -> Result<Complex64> {
    ansatz_old.check_parameters(theta_old)?;
    ansatz_new.check_parameters(theta_new)?;
    let mut old = LogPsiCache::new(ansatz_old, theta_old);
    let mut new = LogPsiCache::new(ansatz_new, theta_new);
    let (cx, cy) = (new.get(x), old.get(y));
    if is_vanishing(cx) {
        return Err(Error::IllDefinedEstimator {
            config: x.bits(),
            context: "local infidelity",
        });
    }
    if is_vanishing(cy) {
        return Err(Error::IllDefinedEstimator {
            config: y.bits(),
            context: "local infidelity",
        });
    }
    let r = phi.ratio(&mut old, x, cx, false)?;
    let rp = phi.ratio(&mut new, y, cy, true)?;
    Ok(1.0 - r * rp)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfidelityEstimate {
    pub value: f64,
    pub std_error: f64,
    /// `E_x[R]` over `|ψ_new|²`.
    pub mean_ratio: Complex64,
    /// `E_y[R']` over `|ψ_old|²`.
    pub mean_adjoint_ratio: Complex64,
    /// `‖Φψ_old‖²/‖ψ_old‖²`; one for unitary propagators.
    pub norm_ratio: f64,
    /// `∂I/∂θ_new` when requested.
    pub gradient: Option<Vec<f64>>,
}

/// Sampled infidelity `1 − |⟨ψ_new|Φ|ψ_old⟩|²/(‖ψ_new‖²‖Φψ_old‖²)` from
/// `x ~ |ψ_new|²` and `y ~ |ψ_old|²`, averaged over all `(x, y)` pairs.
#[allow(clippy::too_many_arguments)]
pub fn estimate_infidelity(
    phi: &PropagatorApplication,
    ansatz_old: &Ansatz,
    theta_old: &ParameterVector,
    old_samples: &SampleSet,
    ansatz_new: &Ansatz,
    theta_new: &ParameterVector,
    new_samples: &SampleSet,
    with_gradient: bool,
) -> Result<InfidelityEstimate> {
    ansatz_old.check_parameters(theta_old)?;
    ansatz_new.check_parameters(theta_new)?;
    check_support(old_samples, "local infidelity")?;
    check_support(new_samples, "local infidelity")?;
    let mut old = LogPsiCache::seeded(ansatz_old, theta_old, old_samples);
    let mut new = LogPsiCache::seeded(ansatz_new, theta_new, new_samples);

    let r: Vec<Complex64> = new_samples
        .configurations()
        .iter()
        .zip(new_samples.log_amplitudes())
        .map(|(&x, &cx)| phi.ratio(&mut old, x, cx, false))
        .collect::<Result<_>>()?;
    let rp: Vec<Complex64> = old_samples
        .configurations()
        .iter()
        .zip(old_samples.log_amplitudes())
        .map(|(&y, &cy)| phi.ratio(&mut new, y, cy, true))
        .collect::<Result<_>>()?;
    let est_r = ScalarEstimate::from_values(&r, new_samples);
    let est_rp = ScalarEstimate::from_values(&rp, old_samples);

    let norm_ratio = if phi.is_unitary() {
        1.0
    } else {
        let forward: Vec<Complex64> = old_samples
            .configurations()
            .iter()
            .zip(old_samples.log_amplitudes())
            .map(|(&y, &cy)| phi.ratio(&mut old, y, cy, false).map(|v| Complex64::new(v.norm_sqr(), 0.0)))
            .collect::<Result<_>>()?;
        ScalarEstimate::from_values(&forward, old_samples).mean.re
    };

    let product = est_r.mean * est_rp.mean / norm_ratio;
    let value = 1.0 - product.re;
    let std_error = ((est_r.std_error * est_rp.mean.norm()).powi(2)
        + (est_rp.std_error * est_r.mean.norm()).powi(2))
    .sqrt()
        / norm_ratio;

    let gradient = with_gradient.then(|| {
        let g = log_derivative_matrix(ansatz_new, theta_new, new_samples);
        let w = new_samples.weights();
        let scale = est_rp.mean / norm_ratio;
        (0..g.ncols())
            .map(|k| {
                let mut g_r = ZERO;
                let mut g_mean = ZERO;
                for (row, (&rv, &wv)) in r.iter().zip(w).enumerate() {
                    let c = g[(row, k)].conj();
                    g_r += wv * c * rv;
                    g_mean += wv * c;
                }
                -2.0 * (scale * (g_r - g_mean * est_r.mean)).re
            })
            .collect()
    });

    Ok(InfidelityEstimate {
        value,
        std_error,
        mean_ratio: est_r.mean,
        mean_adjoint_ratio: est_rp.mean,
        norm_ratio,
        gradient,
    })
}
