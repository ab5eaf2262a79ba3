//! Dense state-vector reference for small systems.
//!
//! Amplitudes are indexed by [`SpinConfiguration::index`]. Nothing here is
//! normalized implicitly; norms are carried along and divided out where a
//! quantity needs it.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{is_vanishing, Ansatz, ParameterVector, ProductState};
use crate::error::{Error, Result};
use crate::model::{PauliOperator, SpinConfiguration};

/// Largest system held as a dense vector.
pub const DENSE_SITE_CAP: usize = 16;
/// Largest system assembled as a dense matrix.
pub const DENSE_MATRIX_CAP: usize = 12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const CONVERGENCE_TOLERANCE: f64 = 1e-10;
const MAX_HALVINGS: usize = 14;

fn check_cap(n_sites: usize, cap: usize, bytes_per_entry: u128) -> Result<()> {
    if n_sites > cap {
        return Err(Error::HilbertSpaceTooLarge {
            n_sites,
            cap,
            required_bytes: (1u128 << n_sites.min(127)).saturating_mul(bytes_per_entry),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseState {
    amplitudes: Vec<Complex64>,
    n_sites: usize,
}

impl DenseState {
    pub fn new(amplitudes: Vec<Complex64>, n_sites: usize) -> Result<Self> {
        check_cap(n_sites, DENSE_SITE_CAP, 16)?;
        if amplitudes.len() != 1 << n_sites {
            return Err(Error::InvalidInput(format!(
                "{} amplitudes for {n_sites} sites",
                amplitudes.len()
            )));
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("non-finite amplitude".into()));
        }
        Ok(Self { amplitudes, n_sites })
    }

    pub fn basis_state(x: SpinConfiguration) -> Result<Self> {
        check_cap(x.n_sites(), DENSE_SITE_CAP, 16)?;
        let mut amps = vec![ZERO; 1 << x.n_sites()];
        amps[x.index()] = Complex64::new(1.0, 0.0);
        Self::new(amps, x.n_sites())
    }

    pub fn from_product(psi: &ProductState) -> Result<Self> {
        check_cap(psi.n_sites(), DENSE_SITE_CAP, 16)?;
        let amps = SpinConfiguration::basis(psi.n_sites()).map(|x| psi.amplitude(x)).collect();
        Self::new(amps, psi.n_sites())
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitude(&self, x: SpinConfiguration) -> Complex64 {
        self.amplitudes[x.index()]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return Err(Error::InvalidInput("zero state cannot be normalized".into()));
        }
        Ok(Self {
            amplitudes: self.amplitudes.iter().map(|a| a / n).collect(),
            n_sites: self.n_sites,
        })
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &DenseState) -> Result<Complex64> {
        self.check_sites(other.n_sites)?;
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `⟨ψ|O|ψ⟩ / ⟨ψ|ψ⟩`.
    pub fn expectation(&self, op: &PauliOperator) -> Result<Complex64> {
        let n2 = self.norm_sqr();
        if n2 == 0.0 {
            return Err(Error::InvalidInput("expectation in the zero state".into()));
        }
        Ok(self.inner(&apply(op, self)?)? / n2)
    }

    fn check_sites(&self, n: usize) -> Result<()> {
        if n != self.n_sites {
            return Err(Error::SiteMismatch {
                expected: self.n_sites,
                got: n,
            });
        }
        Ok(())
    }

    fn axpy(&self, s: Complex64, d: &[Complex64]) -> Vec<Complex64> {
        self.amplitudes.iter().zip(d).map(|(a, b)| a + s * b).collect()
    }
}

/// Dense matrix with `M[x, x'] = ⟨x|O|x'⟩`.
pub fn dense_matrix(op: &PauliOperator) -> Result<DMatrix<Complex64>> {
    let n = op.n_sites();
    check_cap(n, DENSE_MATRIX_CAP, 16u128 << n)?;
    let dim = 1 << n;
    let mut m = DMatrix::zeros(dim, dim);
    for x in SpinConfiguration::basis(n) {
        op.for_each_connected(x, |xp, v| m[(x.index(), xp.index())] += v);
    }
    Ok(m)
}

/// `O|ψ⟩`, matrix-free and parallel over rows.
pub fn apply(op: &PauliOperator, psi: &DenseState) -> Result<DenseState> {
    psi.check_sites(op.n_sites())?;
    let n = psi.n_sites;
    let amps: Vec<Complex64> = (0..1usize << n)
        .into_par_iter()
        .map(|k| {
            let x = SpinConfiguration::from_bits_unchecked(k as u64, n);
            let mut acc = ZERO;
            op.for_each_connected(x, |xp, m| acc += m * psi.amplitudes[xp.index()]);
            acc
        })
        .collect();
    Ok(DenseState { amplitudes: amps, n_sites: n })
}

fn norm_bound(h: &PauliOperator) -> f64 {
    h.terms().iter().map(|t| t.coefficient().norm()).sum()
}

fn rk4(psi0: &DenseState, h: &PauliOperator, t: f64, n_steps: usize) -> Result<DenseState> {
    let dt = t / n_steps as f64;
    let minus_i = Complex64::new(0.0, -1.0);
    let rhs = |s: &DenseState| -> Result<Vec<Complex64>> {
        Ok(apply(h, s)?.amplitudes.into_iter().map(|a| minus_i * a).collect())
    };
    let mut psi = psi0.clone();
    for _ in 0..n_steps {
        let k1 = rhs(&psi)?;
        let p2 = DenseState { amplitudes: psi.axpy((dt / 2.0).into(), &k1), n_sites: psi.n_sites };
        let k2 = rhs(&p2)?;
        let p3 = DenseState { amplitudes: psi.axpy((dt / 2.0).into(), &k2), n_sites: psi.n_sites };
        let k3 = rhs(&p3)?;
        let p4 = DenseState { amplitudes: psi.axpy(dt.into(), &k3), n_sites: psi.n_sites };
        let k4 = rhs(&p4)?;
        for (i, a) in psi.amplitudes.iter_mut().enumerate() {
            *a += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(psi)
}

/// `e^{-iHt}|ψ0⟩` by fixed-step fourth-order Runge-Kutta. The step starts at
/// `dt_ref` (default `0.05 / Σ|c_k|`) and is halved until two successive
/// results differ by less than `1e-10` relative to `‖ψ0‖`.
pub fn exact_evolve(psi0: &DenseState, h: &PauliOperator, t: f64, dt_ref: Option<f64>) -> Result<DenseState> {
    psi0.check_sites(h.n_sites())?;
    if !t.is_finite() {
        return Err(Error::InvalidInput("non-finite evolution time".into()));
    }
    let bound = norm_bound(h);
    if t == 0.0 || bound == 0.0 {
        return Ok(psi0.clone());
    }
    let dt = dt_ref.unwrap_or(0.05 / bound);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("reference step must be positive, got {dt}")));
    }
    let scale = psi0.norm_sqr().sqrt().max(f64::MIN_POSITIVE);
    let mut n_steps = (t.abs() / dt).ceil().max(1.0) as usize;
    let mut coarse = rk4(psi0, h, t, n_steps)?;
    for _ in 0..MAX_HALVINGS {
        n_steps *= 2;
        let fine = rk4(psi0, h, t, n_steps)?;
        let diff: f64 = coarse
            .amplitudes
            .iter()
            .zip(&fine.amplitudes)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if diff < CONVERGENCE_TOLERANCE * scale {
            return Ok(fine);
        }
        coarse = fine;
    }
    Err(Error::InvalidInput(format!(
        "dense integration did not converge after {MAX_HALVINGS} halvings"
    )))
}

/// `|⟨a|b⟩|² / (⟨a|a⟩⟨b|b⟩)`.
pub fn fidelity(a: &DenseState, b: &DenseState) -> Result<f64> {
    let den = a.norm_sqr() * b.norm_sqr();
    if den == 0.0 {
        return Err(Error::InvalidInput("fidelity with the zero state".into()));
    }
    Ok((a.inner(b)?.norm_sqr() / den).clamp(0.0, 1.0))
}

/// Dense amplitudes `exp χ_θ(x)`; vanishing configurations map to 0.
pub fn nqs_to_dense(ansatz: &Ansatz, theta: &ParameterVector) -> Result<DenseState> {
    let n = ansatz.n_sites();
    check_cap(n, DENSE_SITE_CAP, 16)?;
    ansatz.check_parameters(theta)?;
    let amps = (0..1usize << n)
        .into_par_iter()
        .map(|k| {
            let chi = ansatz.eval_log_amplitude(theta.as_slice(), SpinConfiguration::from_bits_unchecked(k as u64, n));
            if is_vanishing(chi) {
                ZERO
            } else {
                chi.exp()
            }
        })
        .collect();
    DenseState::new(amps, n)
}

/// `⟨ψ0| e^{iHt} B e^{-iHt} A |ψ0⟩` for diagonal `A`.
pub fn two_time_correlator(
    psi0: &DenseState,
    h: &PauliOperator,
    a: &PauliOperator,
    b: &PauliOperator,
    t: f64,
) -> Result<Complex64> {
    if !a.is_diagonal() {
        return Err(Error::NotDiagonal("first correlator operator".into()));
    }
    let psi_t = exact_evolve(psi0, h, t, None)?;
    let phi_t = exact_evolve(&apply(a, psi0)?, h, t, None)?;
    psi_t.inner(&apply(b, &phi_t)?)
}
