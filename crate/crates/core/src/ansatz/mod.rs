//! Variational log-amplitude maps `x ↦ χ_θ(x)` with `ψ_θ(x) = exp χ_θ(x)`.

mod cumulant;
mod networks;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PauliOperator, SpinConfiguration};

pub use cumulant::cumulant_init;

/// Log-amplitude of a vanishing amplitude.
pub const LOG_ZERO: Complex64 = Complex64::new(f64::NEG_INFINITY, 0.0);

/// `true` for the [`LOG_ZERO`] sentinel (or any `χ` with `Re χ = -∞`).
#[inline]
pub fn is_vanishing(chi: Complex64) -> bool {
    chi.re == f64::NEG_INFINITY
}

#[inline]
fn normalize_log(chi: Complex64) -> Complex64 {
    if chi.re == f64::NEG_INFINITY {
        LOG_ZERO
    } else {
        chi
    }
}

/// Real parameter vector. Complex parameters are stored as `(re, im)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `self + scale · direction`.
    pub fn axpy(&self, scale: f64, direction: &[f64]) -> Self {
        assert_eq!(self.0.len(), direction.len());
        Self(self.0.iter().zip(direction).map(|(a, d)| a + scale * d).collect())
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterKind {
    Real,
    /// Consecutive `(re, im)` pairs.
    Complex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBlock {
    pub name: String,
    pub offset: usize,
    /// Length in real slots.
    pub len: usize,
    pub kind: ParameterKind,
}

/// Partition of the parameter indices into named blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterLayout {
    blocks: Vec<ParameterBlock>,
}

impl ParameterLayout {
    fn from_blocks(spec: &[(&str, usize, ParameterKind)]) -> Self {
        let mut offset = 0;
        let blocks = spec
            .iter()
            .map(|&(name, count, kind)| {
                let len = match kind {
                    ParameterKind::Real => count,
                    ParameterKind::Complex => 2 * count,
                };
                let b = ParameterBlock {
                    name: name.to_string(),
                    offset,
                    len,
                    kind,
                };
                offset += len;
                b
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[ParameterBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, name: &str) -> Option<&ParameterBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// `(re, im)` slot pairs of every complex parameter.
    pub fn complex_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocks
            .iter()
            .filter(|b| b.kind == ParameterKind::Complex)
            .flat_map(|b| (b.offset..b.offset + b.len).step_by(2).map(|k| (k, k + 1)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Restricted Boltzmann machine, `χ = Σ a_i s_i + Σ_j ln 2cosh(b_j + Σ_i W_ji s_i)`.
    Rbm { n_hidden: usize },
    /// Spin-product expansion `χ = Σ_S w_S Π_{i∈S} s_i` over bit masks `S`.
    Jastrow { monomials: Vec<u64> },
    Feedforward { widths: Vec<usize> },
    /// One complex parameter per basis state, `χ(x) = θ_x`.
    Full,
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Rbm { .. } => "rbm",
            Architecture::Jastrow { .. } => "jastrow",
            Architecture::Feedforward { .. } => "feedforward",
            Architecture::Full => "full",
        }
    }
}

/// Parameter gradients `Γ_k(x) = ∂_k χ_θ(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogDerivatives(pub Vec<Complex64>);

/// Per-site amplitudes `(⟨↑|φ_i⟩, ⟨↓|φ_i⟩)` of a product state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductState {
    sites: Vec<[Complex64; 2]>,
}

impl ProductState {
    pub fn new(sites: Vec<[Complex64; 2]>) -> Result<Self> {
        if sites.is_empty() || sites.len() > crate::model::MAX_SITES {
            return Err(Error::InvalidInput("product state site count".into()));
        }
        if sites.iter().any(|s| s[0].norm_sqr() + s[1].norm_sqr() == 0.0) {
            return Err(Error::InvalidInput("product state with a null site".into()));
        }
        Ok(Self { sites })
    }

    pub fn uniform(n_sites: usize, site: [Complex64; 2]) -> Result<Self> {
        Self::new(vec![site; n_sites])
    }

    /// Every spin along the given direction: one of `+x -x +y -y +z -z`.
    pub fn polarized(n_sites: usize, direction: &str) -> Result<Self> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let site = match direction {
            "+x" => [c(h, 0.0), c(h, 0.0)],
            "-x" => [c(h, 0.0), c(-h, 0.0)],
            "+y" => [c(h, 0.0), c(0.0, h)],
            "-y" => [c(h, 0.0), c(0.0, -h)],
            "+z" | "up" => [c(1.0, 0.0), c(0.0, 0.0)],
            "-z" | "down" => [c(0.0, 0.0), c(1.0, 0.0)],
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown polarization direction {other:?}"
                )))
            }
        };
        Self::uniform(n_sites, site)
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn site(&self, i: usize) -> [Complex64; 2] {
        self.sites[i]
    }

    pub fn amplitude(&self, x: SpinConfiguration) -> Complex64 {
        self.sites
            .iter()
            .enumerate()
            .map(|(i, s)| if x.is_up(i) { s[0] } else { s[1] })
            .product()
    }

    pub fn has_full_support(&self) -> bool {
        self.sites.iter().all(|s| s[0] != Complex64::new(0.0, 0.0) && s[1] != Complex64::new(0.0, 0.0))
    }
}

/// A variational log-amplitude map together with a stack of parameter-free
/// diagonal factors `O_x` multiplying the amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ansatz {
    n_sites: usize,
    architecture: Architecture,
    layout: ParameterLayout,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    factors: Vec<PauliOperator>,
}

impl Ansatz {
    pub fn new(n_sites: usize, architecture: Architecture) -> Result<Self> {
        use ParameterKind::*;
        if n_sites == 0 || n_sites > crate::model::MAX_SITES {
            return Err(Error::InvalidInput(format!("site count {n_sites}")));
        }
        let layout = match &architecture {
            Architecture::Rbm { n_hidden } => ParameterLayout::from_blocks(&[
                ("visible_bias", n_sites, Complex),
                ("hidden_bias", *n_hidden, Complex),
                ("weights", n_hidden * n_sites, Complex),
            ]),
            Architecture::Jastrow { monomials } => {
                if monomials.iter().any(|m| m & !crate::model::full_mask(n_sites) != 0) {
                    return Err(Error::InvalidInput("Jastrow monomial outside lattice".into()));
                }
                ParameterLayout::from_blocks(&[("couplings", monomials.len(), Complex)])
            }
            Architecture::Feedforward { widths } => {
                if widths.is_empty() || widths.contains(&0) {
                    return Err(Error::InvalidInput("feedforward widths must be positive".into()));
                }
                let mut spec = Vec::new();
                let names: Vec<(String, String)> = (0..widths.len())
                    .map(|l| (format!("layer{l}.weights"), format!("layer{l}.bias")))
                    .collect();
                let mut fan_in = n_sites;
                for (l, &w) in widths.iter().enumerate() {
                    spec.push((names[l].0.as_str(), w * fan_in, Real));
                    spec.push((names[l].1.as_str(), w, Real));
                    fan_in = w;
                }
                spec.push(("amplitude_head.weights", fan_in, Real));
                spec.push(("amplitude_head.bias", 1, Real));
                spec.push(("phase_head.weights", fan_in, Real));
                spec.push(("phase_head.bias", 1, Real));
                ParameterLayout::from_blocks(&spec)
            }
            Architecture::Full => {
                if n_sites > 24 {
                    return Err(Error::InvalidInput(
                        "full parametrization limited to 24 sites".into(),
                    ));
                }
                ParameterLayout::from_blocks(&[("amplitudes", 1 << n_sites, Complex)])
            }
        };
        Ok(Self {
            n_sites,
            architecture,
            layout,
            factors: Vec::new(),
        })
    }

    /// RBM with `alpha · n_sites` hidden units.
    pub fn rbm(n_sites: usize, alpha: usize) -> Result<Self> {
        Self::new(n_sites, Architecture::Rbm { n_hidden: alpha * n_sites })
    }

    /// Standard two-body Jastrow: one field per site and one coupling per pair.
    pub fn jastrow(n_sites: usize) -> Result<Self> {
        let mut monomials: Vec<u64> = (0..n_sites).map(|i| 1 << i).collect();
        for i in 0..n_sites {
            for j in i + 1..n_sites {
                monomials.push(1 << i | 1 << j);
            }
        }
        Self::new(n_sites, Architecture::Jastrow { monomials })
    }

    pub fn feedforward(n_sites: usize, widths: Vec<usize>) -> Result<Self> {
        Self::new(n_sites, Architecture::Feedforward { widths })
    }

    pub fn full(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, Architecture::Full)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn diagonal_factors(&self) -> &[PauliOperator] {
        &self.factors
    }

    /// Rejects wrong lengths and non-finite entries.
    pub fn check_parameters(&self, theta: &ParameterVector) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::ParameterLength {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        if let Some(k) = theta.first_non_finite() {
            return Err(Error::NonFiniteParameter(k));
        }
        Ok(())
    }

    fn check_config(&self, x: SpinConfiguration) -> Result<()> {
        if x.n_sites() != self.n_sites {
            return Err(Error::SiteMismatch {
                expected: self.n_sites,
                got: x.n_sites(),
            });
        }
        Ok(())
    }

    /// `χ_θ(x)` including the diagonal factors; [`LOG_ZERO`] where the
    /// amplitude vanishes.
    pub fn log_amplitude(&self, theta: &ParameterVector, x: SpinConfiguration) -> Result<Complex64> {
        self.check_parameters(theta)?;
        self.check_config(x)?;
        Ok(self.eval_log_amplitude(theta.as_slice(), x))
    }

    /// Unchecked evaluation; callers validate `theta` and `x` once up front.
    pub(crate) fn eval_log_amplitude(&self, theta: &[f64], x: SpinConfiguration) -> Complex64 {
        let n = self.n_sites;
        let mut chi = match &self.architecture {
            Architecture::Rbm { n_hidden } => networks::rbm::log_amplitude(theta, n, *n_hidden, x),
            Architecture::Jastrow { monomials } => networks::jastrow::log_amplitude(theta, monomials, x),
            Architecture::Feedforward { widths } => {
                networks::feedforward::log_amplitude(theta, n, widths, x)
            }
            Architecture::Full => networks::full::log_amplitude(theta, x),
        };
        for f in &self.factors {
            let o = f.diagonal_element(x);
            if o == Complex64::new(0.0, 0.0) {
                return LOG_ZERO;
            }
            chi += o.ln();
        }
        normalize_log(chi)
    }

    pub fn log_derivatives(&self, theta: &ParameterVector, x: SpinConfiguration) -> Result<LogDerivatives> {
        self.check_parameters(theta)?;
        self.check_config(x)?;
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_params()];
        self.fill_log_derivatives(theta.as_slice(), x, &mut out);
        Ok(LogDerivatives(out))
    }

    /// Diagonal factors are parameter-free and do not contribute.
    pub(crate) fn fill_log_derivatives(&self, theta: &[f64], x: SpinConfiguration, out: &mut [Complex64]) {
        let n = self.n_sites;
        match &self.architecture {
            Architecture::Rbm { n_hidden } => {
                networks::rbm::log_derivatives(theta, n, *n_hidden, x, out)
            }
            Architecture::Jastrow { monomials } => networks::jastrow::log_derivatives(monomials, x, out),
            Architecture::Feedforward { widths } => {
                networks::feedforward::log_derivatives(theta, n, widths, x, out)
            }
            Architecture::Full => networks::full::log_derivatives(x, out),
        }
    }

    /// New ansatz with `χ̃(x) = χ(x) + ln O_x`; parameters are unchanged.
    pub fn attach_diagonal(&self, op: &PauliOperator) -> Result<Ansatz> {
        if op.n_sites() != self.n_sites {
            return Err(Error::SiteMismatch {
                expected: self.n_sites,
                got: op.n_sites(),
            });
        }
        if !op.is_diagonal() {
            return Err(Error::NotDiagonal(format!("{} terms", op.terms().len())));
        }
        let mut out = self.clone();
        out.factors.push(op.clone());
        Ok(out)
    }

    /// Uniform random parameters in `[-scale, scale]`, reproducible from `seed`.
    pub fn random_parameters(&self, scale: f64, seed: u64) -> ParameterVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParameterVector((0..self.n_params()).map(|_| rng.gen_range(-scale..=scale)).collect())
    }

    /// Parameters encoding `psi0` (exactly for rbm hidden weights aside, for
    /// jastrow and full; feedforward only for site-uniform equal-weight
    /// states). Parameters not fixed by `psi0` are random with `scale`.
    pub fn initial_parameters(&self, psi0: &ProductState, scale: f64, seed: u64) -> Result<ParameterVector> {
        if psi0.n_sites() != self.n_sites {
            return Err(Error::SiteMismatch {
                expected: self.n_sites,
                got: psi0.n_sites(),
            });
        }
        let mut theta = self.random_parameters(scale, seed);
        let t = theta.as_mut_slice();
        let set = |t: &mut [f64], k: usize, c: Complex64| {
            t[2 * k] = c.re;
            t[2 * k + 1] = c.im;
        };
        let site_logs = || -> Result<Vec<(Complex64, Complex64)>> {
            if !psi0.has_full_support() {
                return Err(Error::InvalidInput(format!(
                    "{} ansatz cannot encode a product state with vanishing amplitudes",
                    self.architecture.tag()
                )));
            }
            Ok((0..psi0.n_sites())
                .map(|i| {
                    let [u, d] = psi0.site(i);
                    (u.ln(), d.ln())
                })
                .collect())
        };
        match &self.architecture {
            Architecture::Rbm { .. } => {
                for (i, (lu, ld)) in site_logs()?.into_iter().enumerate() {
                    set(t, i, (lu - ld) / 2.0);
                }
            }
            Architecture::Jastrow { .. } => {
                let poly = cumulant::product_log_polynomial(psi0)?;
                return cumulant::jastrow_parameters(self, &poly);
            }
            Architecture::Full => {
                for x in SpinConfiguration::basis(self.n_sites) {
                    let a = psi0.amplitude(x);
                    if a == Complex64::new(0.0, 0.0) {
                        return Err(Error::InvalidInput(
                            "full parametrization cannot encode zero amplitudes".into(),
                        ));
                    }
                    set(t, x.index(), a.ln());
                }
            }
            Architecture::Feedforward { .. } => {
                let [u0, d0] = psi0.site(0);
                let uniform = (0..psi0.n_sites()).all(|i| {
                    let [u, d] = psi0.site(i);
                    (u - d).norm() <= 1e-15 * u.norm() && (u - u0).norm() <= 1e-15 * u0.norm()
                });
                if !uniform || u0 != d0 {
                    return Err(Error::InvalidInput(
                        "feedforward initialization supports only the uniform superposition".into(),
                    ));
                }
                for name in ["amplitude_head.weights", "phase_head.weights"] {
                    let b = self.layout.block(name).expect("head block").clone();
                    t[b.offset..b.offset + b.len].fill(0.0);
                }
                let log_u = u0.ln() * self.n_sites as f64;
                let ab = self.layout.block("amplitude_head.bias").expect("head").offset;
                let pb = self.layout.block("phase_head.bias").expect("head").offset;
                t[ab] = log_u.re;
                t[pb] = log_u.im;
            }
        }
        Ok(theta)
    }
}

#[cfg(test)]
mod tests;
