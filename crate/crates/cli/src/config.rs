//! Run configuration: a strict, versioned TOML document.

use std::path::Path;

use nqsdyn::ansatz::cumulant_init;
use nqsdyn::globalopt::GlobalConfig;
use nqsdyn::model::{build_heisenberg, build_tfim};
use nqsdyn::observables::ObservableSpec;
use nqsdyn::oracle::DENSE_SITE_CAP;
use nqsdyn::tdvp::{Observable, TdvpConfig};
use nqsdyn::{
    Ansatz, Boundary, ChainConfig, Lattice, ParameterVector, PauliOperator, ProductState, Proposal,
    Sampling,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub ansatz: AnsatzConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub observables: Vec<ObservableSpec>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Tfim,
    Heisenberg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Chain,
    Square,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    pub lattice: LatticeKind,
    /// `[L]` for a chain, `[Lx, Ly]` for a square lattice.
    pub extent: Vec<usize>,
    pub boundary: Boundary,
    #[serde(default = "one")]
    pub j: f64,
    #[serde(default)]
    pub hx: f64,
    #[serde(default)]
    pub hz: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureName {
    Rbm,
    Jastrow,
    Feedforward,
    Full,
    Cumulant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzConfig {
    pub architecture: ArchitectureName,
    /// Hidden-unit density of the rbm.
    #[serde(default)]
    pub alpha: Option<usize>,
    /// Hidden-layer widths of the feedforward network.
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    /// Product state direction, one of `+x -x +y -y +z -z`.
    pub initial_state: String,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    /// Time at which the cumulant expansion starts the evolution.
    #[serde(default)]
    pub cumulant_time: Option<f64>,
}

fn default_init_scale() -> f64 {
    1e-2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[default]
    Exact,
    Mcmc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n_samples: usize,
    pub n_chains: usize,
    /// Sweeps discarded per chain; one sweep per site when absent.
    pub burn_in: Option<usize>,
    pub thinning: usize,
    pub proposal: Proposal,
    pub acceptance_floor: f64,
    pub magnetization: Option<i64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let c = ChainConfig::default();
        Self {
            kind: SamplerKind::Exact,
            n_samples: 4096,
            n_chains: c.n_chains,
            burn_in: c.burn_in_sweeps,
            thinning: c.thinning,
            proposal: c.proposal,
            acceptance_floor: c.acceptance_floor,
            magnetization: c.magnetization,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MethodConfig {
    Tdvp(TdvpConfig),
    Global(GlobalConfig),
}

impl MethodConfig {
    pub fn max_time(&self) -> f64 {
        match self {
            MethodConfig::Tdvp(c) => c.max_time,
            MethodConfig::Global(c) => c.max_time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write a checkpoint every this many steps; zero keeps only the final one.
    pub checkpoint_every: usize,
    /// Record the Loschmidt rate against the dense initial state.
    pub loschmidt: bool,
    /// Time grid of `benchmark-ed` records.
    pub record_interval: f64,
    /// Largest site count for dense computations; at most the oracle cap.
    pub dense_site_cap: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 0,
            loschmidt: false,
            record_interval: 0.05,
            dense_site_cap: DENSE_SITE_CAP,
        }
    }
}

/// Everything a run needs, built from a validated configuration.
pub struct Setup {
    pub n_sites: usize,
    pub hamiltonian: PauliOperator,
    pub psi0: ProductState,
    pub ansatz: Ansatz,
    pub theta0: ParameterVector,
    pub t0: f64,
    pub sampling: Sampling,
    pub observables: Vec<Observable>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn lattice(&self) -> Result<Lattice, CliError> {
        let m = &self.model;
        let lattice = match (m.lattice, m.extent.as_slice()) {
            (LatticeKind::Chain, &[l]) => Lattice::chain(l, m.boundary),
            (LatticeKind::Square, &[lx, ly]) => Lattice::square(lx, ly, m.boundary),
            (kind, e) => {
                return Err(invalid(format!("{kind:?} lattice does not take extent {e:?}")));
            }
        };
        lattice.map_err(|e| invalid(format!("model: {e}")))
    }

    pub fn hamiltonian(&self) -> Result<PauliOperator, CliError> {
        let lattice = self.lattice()?;
        let m = &self.model;
        match m.name {
            ModelName::Tfim => build_tfim(&lattice, m.j, m.hx, m.hz),
            ModelName::Heisenberg => {
                if m.hx != 0.0 || m.hz != 0.0 {
                    return Err(invalid("heisenberg model takes no fields hx, hz"));
                }
                build_heisenberg(&lattice, m.j)
            }
        }
        .map_err(|e| invalid(format!("model: {e}")))
    }

    fn sampling(&self) -> Result<Sampling, CliError> {
        let s = &self.sampler;
        match s.kind {
            SamplerKind::Exact => Ok(Sampling::Exact),
            SamplerKind::Mcmc => {
                if s.n_samples == 0 || s.n_chains == 0 || s.thinning == 0 {
                    return Err(invalid("sampler: n_samples, n_chains and thinning must be positive"));
                }
                if !(0.0..1.0).contains(&s.acceptance_floor) {
                    return Err(invalid("sampler: acceptance_floor must lie in [0, 1)"));
                }
                Ok(Sampling::Mcmc {
                    n_samples: s.n_samples,
                    chain: ChainConfig {
                        n_chains: s.n_chains,
                        burn_in_sweeps: s.burn_in,
                        thinning: s.thinning,
                        proposal: s.proposal,
                        seed: self.seed,
                        acceptance_floor: s.acceptance_floor,
                        magnetization: s.magnetization,
                    },
                })
            }
        }
    }

    fn ansatz(&self, h: &PauliOperator, psi0: &ProductState) -> Result<(Ansatz, ParameterVector, f64), CliError> {
        let a = &self.ansatz;
        let n = psi0.n_sites();
        let unused = |field: &str, used: bool| {
            if used {
                Err(invalid(format!("ansatz: {field} does not apply to {:?}", a.architecture)))
            } else {
                Ok(())
            }
        };
        unused("alpha", a.alpha.is_some() && a.architecture != ArchitectureName::Rbm)?;
        unused("widths", a.widths.is_some() && a.architecture != ArchitectureName::Feedforward)?;
        unused("cumulant_time", a.cumulant_time.is_some() && a.architecture != ArchitectureName::Cumulant)?;
        if !(a.init_scale >= 0.0 && a.init_scale.is_finite()) {
            return Err(invalid("ansatz: init_scale must be finite and non-negative"));
        }
        let wrap = |e: nqsdyn::Error| invalid(format!("ansatz: {e}"));
        let ansatz = match a.architecture {
            ArchitectureName::Rbm => Ansatz::rbm(n, a.alpha.unwrap_or(1)),
            ArchitectureName::Jastrow => Ansatz::jastrow(n),
            ArchitectureName::Feedforward => {
                let widths = a.widths.clone().ok_or_else(|| invalid("ansatz: feedforward needs widths"))?;
                Ansatz::feedforward(n, widths)
            }
            ArchitectureName::Full => Ansatz::full(n),
            ArchitectureName::Cumulant => {
                let t = a.cumulant_time.unwrap_or(0.0);
                if !(t >= 0.0 && t <= self.method.max_time()) {
                    return Err(invalid("ansatz: cumulant_time must lie in [0, max_time]"));
                }
                let (ansatz, theta) = cumulant_init(psi0, h, t).map_err(wrap)?;
                return Ok((ansatz, theta, t));
            }
        }
        .map_err(wrap)?;
        let theta = ansatz.initial_parameters(psi0, a.init_scale, self.seed).map_err(wrap)?;
        Ok((ansatz, theta, 0.0))
    }

    /// Validate every section and build the run inputs.
    pub fn setup(&self) -> Result<Setup, CliError> {
        let hamiltonian = self.hamiltonian()?;
        let n_sites = hamiltonian.n_sites();
        let psi0 = ProductState::polarized(n_sites, &self.ansatz.initial_state)
            .map_err(|e| invalid(format!("ansatz: {e}")))?;
        let (ansatz, theta0, t0) = self.ansatz(&hamiltonian, &psi0)?;
        let sampling = self.sampling()?;
        match &self.method {
            MethodConfig::Tdvp(c) => c.validate(),
            MethodConfig::Global(c) => c.validate(),
        }
        .map_err(|e| invalid(format!("method: {e}")))?;
        let observables = self
            .observables
            .iter()
            .map(|o| o.build(n_sites))
            .collect::<nqsdyn::Result<Vec<_>>>()
            .map_err(|e| invalid(format!("observables: {e}")))?;
        let mut names: Vec<&str> = observables.iter().map(|o| o.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("observables: duplicate entries"));
        }
        let o = &self.output;
        if o.dense_site_cap > DENSE_SITE_CAP {
            return Err(invalid(format!("output: dense_site_cap above the oracle limit {DENSE_SITE_CAP}")));
        }
        if o.loschmidt && n_sites > o.dense_site_cap {
            return Err(invalid(format!(
                "output: loschmidt needs a dense state, but {n_sites} sites exceed dense_site_cap {}",
                o.dense_site_cap
            )));
        }
        if !(o.record_interval > 0.0 && o.record_interval.is_finite()) {
            return Err(invalid("output: record_interval must be positive"));
        }
        Ok(Setup {
            n_sites,
            hamiltonian,
            psi0,
            ansatz,
            theta0,
            t0,
            sampling,
            observables,
        })
    }
}
