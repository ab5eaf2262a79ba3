//! Magnetizations, two-point correlations and the Loschmidt rate, on dense
//! or sampled states.

use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, ParameterVector};
use crate::error::{Error, Result};
use crate::estimators::{self, ScalarEstimate};
use crate::model::{PauliAxis, PauliOperator, PauliString};
use crate::oracle::{self, DenseState};
use crate::sampler::SampleSet;
use crate::tdvp::Observable;

/// A state an observable can be measured on.
#[derive(Clone, Copy, Debug)]
pub enum State<'a> {
    Dense(&'a DenseState),
    Sampled {
        ansatz: &'a Ansatz,
        theta: &'a ParameterVector,
        samples: &'a SampleSet,
    },
}

impl State<'_> {
    pub fn n_sites(&self) -> usize {
        match self {
            State::Dense(d) => d.n_sites(),
            State::Sampled { ansatz, .. } => ansatz.n_sites(),
        }
    }

    /// `⟨O⟩`; exact for dense states.
    pub fn measure(&self, op: &PauliOperator) -> Result<ScalarEstimate> {
        match self {
            State::Dense(d) => Ok(ScalarEstimate::exact(d.expectation(op)?)),
            State::Sampled { ansatz, theta, samples } => estimators::expectation(op, ansatz, theta, samples),
        }
    }
}

fn check_site(site: usize, n: usize) -> Result<()> {
    if site >= n {
        return Err(Error::InvalidInput(format!("site {site} outside 0..{n}")));
    }
    Ok(())
}

/// `σ^a_i`, or `(1/N) Σ_i σ^a_i` when `site` is `None`.
pub fn magnetization_operator(n_sites: usize, axis: PauliAxis, site: Option<usize>) -> Result<PauliOperator> {
    match site {
        Some(i) => {
            check_site(i, n_sites)?;
            PauliOperator::single(n_sites, i, axis, 1.0)
        }
        None => {
            let w = 1.0 / n_sites as f64;
            let terms = (0..n_sites)
                .map(|i| PauliString::new(w, vec![(i, axis)]))
                .collect::<Result<Vec<_>>>()?;
            PauliOperator::new(n_sites, terms)
        }
    }
}

/// `σ^a_i σ^a_j`.
pub fn correlation_operator(n_sites: usize, axis: PauliAxis, i: usize, j: usize) -> Result<PauliOperator> {
    check_site(i, n_sites)?;
    check_site(j, n_sites)?;
    if i == j {
        return PauliOperator::identity(n_sites);
    }
    PauliOperator::new(n_sites, vec![PauliString::new(1.0, vec![(i, axis), (j, axis)])?])
}

pub fn magnetization(axis: PauliAxis, state: State, site: Option<usize>) -> Result<ScalarEstimate> {
    state.measure(&magnetization_operator(state.n_sites(), axis, site)?)
}

pub fn correlation(axis: PauliAxis, i: usize, j: usize, state: State) -> Result<ScalarEstimate> {
    state.measure(&correlation_operator(state.n_sites(), axis, i, j)?)
}

/// `λ = −(1/N) ln F(ψ0, ψ)`. An orthogonal state is capped at
/// `−ln(f64::MIN_POSITIVE)/N` instead of infinity.
pub fn loschmidt_rate(psi0: &DenseState, state: &DenseState) -> Result<f64> {
    let f = oracle::fidelity(psi0, state)?;
    Ok(-f.max(f64::MIN_POSITIVE).ln() / psi0.n_sites() as f64)
}

/// Observable requested by name in a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableSpec {
    Magnetization {
        axis: PauliAxis,
        #[serde(default)]
        site: Option<usize>,
    },
    Correlation {
        axis: PauliAxis,
        i: usize,
        j: usize,
    },
}

impl ObservableSpec {
    /// Stable key used in output records, e.g. `mx`, `mz_3`, `czz_0_4`.
    pub fn name(&self) -> String {
        let a = |axis: &PauliAxis| match axis {
            PauliAxis::X => "x",
            PauliAxis::Y => "y",
            PauliAxis::Z => "z",
        };
        match self {
            ObservableSpec::Magnetization { axis, site: None } => format!("m{}", a(axis)),
            ObservableSpec::Magnetization { axis, site: Some(i) } => format!("m{}_{i}", a(axis)),
            ObservableSpec::Correlation { axis, i, j } => format!("c{0}{0}_{i}_{j}", a(axis)),
        }
    }

    pub fn operator(&self, n_sites: usize) -> Result<PauliOperator> {
        match *self {
            ObservableSpec::Magnetization { axis, site } => magnetization_operator(n_sites, axis, site),
            ObservableSpec::Correlation { axis, i, j } => correlation_operator(n_sites, axis, i, j),
        }
    }

    pub fn build(&self, n_sites: usize) -> Result<Observable> {
        Ok(Observable {
            name: self.name(),
            op: self.operator(n_sites)?,
        })
    }
}
