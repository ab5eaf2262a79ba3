//! Short-time analytic initialization from a product state.
//!
//! For a product state with full support, the local estimators of any
//! Pauli-string operator are multilinear polynomials in the spin variables.
//! The second-order cumulant expansion of `⟨x|e^{-iHt}|ψ₀⟩ / ψ₀(x)` is then
//! an exact spin-product expansion, which a Jastrow ansatz with the right
//! monomials represents without approximation.

use std::collections::BTreeMap;

use num_complex::Complex64;

use super::{Ansatz, Architecture, ParameterVector, ProductState};
use crate::error::{Error, Result};
use crate::model::{PauliAxis, PauliOperator};

type Polynomial = BTreeMap<u64, Complex64>;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn add_into(acc: &mut Polynomial, other: &Polynomial, scale: Complex64) {
    for (&m, &c) in other {
        *acc.entry(m).or_default() += scale * c;
    }
}

fn multiply(a: &Polynomial, b: &Polynomial) -> Polynomial {
    let mut out = Polynomial::new();
    for (&ma, &ca) in a {
        for (&mb, &cb) in b {
            // s_i² = 1
            *out.entry(ma ^ mb).or_default() += ca * cb;
        }
    }
    out
}

/// `Σ_i ln φ_i(s_i)` as a spin polynomial.
pub(super) fn product_log_polynomial(psi0: &ProductState) -> Result<Polynomial> {
    if !psi0.has_full_support() {
        return Err(Error::InvalidInput(
            "cumulant expansion needs a product state with nonzero amplitudes".into(),
        ));
    }
    let mut poly = Polynomial::new();
    for i in 0..psi0.n_sites() {
        let [u, d] = psi0.site(i);
        let (lu, ld) = (u.ln(), d.ln());
        *poly.entry(0).or_default() += (lu + ld) / 2.0;
        *poly.entry(1 << i).or_default() += (lu - ld) / 2.0;
    }
    Ok(poly)
}

/// `O^loc(x) = Σ_x' ⟨x|O|x'⟩ ψ₀(x')/ψ₀(x)` for a product state, as a polynomial.
fn local_estimator_polynomial(op: &PauliOperator, psi0: &ProductState) -> Polynomial {
    let mut out = Polynomial::new();
    for term in op.terms() {
        let mut poly = Polynomial::from([(0u64, term.coefficient())]);
        for &(site, axis) in term.factors() {
            let [u, d] = psi0.site(site);
            let r = d / u;
            // single-site factor α + β s
            let (alpha, beta) = match axis {
                PauliAxis::Z => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
                PauliAxis::X => ((r + 1.0 / r) / 2.0, (r - 1.0 / r) / 2.0),
                PauliAxis::Y => ((-I * r + I / r) / 2.0, (-I * r - I / r) / 2.0),
            };
            let factor = Polynomial::from([(0u64, alpha), (1u64 << site, beta)]);
            poly = multiply(&poly, &factor);
        }
        add_into(&mut out, &poly, Complex64::new(1.0, 0.0));
    }
    out
}

fn prune(poly: Polynomial) -> Polynomial {
    let scale = poly.values().map(|c| c.norm()).fold(0.0, f64::max);
    poly.into_iter()
        .filter(|(_, c)| c.norm() > 1e-15 * scale.max(1.0))
        .collect()
}

/// Map polynomial coefficients onto the monomials of a Jastrow ansatz. A
/// missing constant monomial only changes normalization and global phase
/// and is dropped.
pub(super) fn jastrow_parameters(ansatz: &Ansatz, poly: &Polynomial) -> Result<ParameterVector> {
    let Architecture::Jastrow { monomials } = ansatz.architecture() else {
        return Err(Error::InvalidInput("expected a jastrow ansatz".into()));
    };
    let index: BTreeMap<u64, usize> = monomials.iter().enumerate().map(|(k, &m)| (m, k)).collect();
    let mut theta = vec![0.0; ansatz.n_params()];
    for (&m, &c) in poly {
        match index.get(&m) {
            Some(&k) => {
                theta[2 * k] = c.re;
                theta[2 * k + 1] = c.im;
            }
            None if m == 0 => {}
            None if c == Complex64::new(0.0, 0.0) => {}
            None => {
                return Err(Error::InvalidInput(format!(
                    "jastrow ansatz lacks monomial {m:#b}"
                )))
            }
        }
    }
    Ok(ParameterVector::new(theta))
}

/// Ansatz and parameters with amplitudes
/// `ψ₀(x) · exp(-i t E_loc(x) - t²/2 · (H²_loc(x) - E_loc(x)²))`.
///
/// The returned ansatz is a Jastrow spin-product expansion containing
/// exactly the monomials the expansion generates; at `t = 0` it encodes
/// `ψ₀` exactly.
pub fn cumulant_init(psi0: &ProductState, h: &PauliOperator, t: f64) -> Result<(Ansatz, ParameterVector)> {
    if h.n_sites() != psi0.n_sites() {
        return Err(Error::SiteMismatch {
            expected: h.n_sites(),
            got: psi0.n_sites(),
        });
    }
    if !t.is_finite() {
        return Err(Error::InvalidInput("non-finite time".into()));
    }
    let mut chi = product_log_polynomial(psi0)?;
    if t != 0.0 {
        let e = local_estimator_polynomial(h, psi0);
        let h2 = local_estimator_polynomial(&h.mul(h)?, psi0);
        let mut fluct = h2;
        add_into(&mut fluct, &multiply(&e, &e), Complex64::new(-1.0, 0.0));
        add_into(&mut chi, &e, Complex64::new(0.0, -t));
        add_into(&mut chi, &fluct, Complex64::new(-t * t / 2.0, 0.0));
    }
    let chi = prune(chi);
    let monomials: Vec<u64> = chi.keys().copied().collect();
    let ansatz = Ansatz::new(psi0.n_sites(), Architecture::Jastrow { monomials })?;
    let theta = jastrow_parameters(&ansatz, &chi)?;
    Ok((ansatz, theta))
}
