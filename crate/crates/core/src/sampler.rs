//! Samples from the Born distribution `p_θ(x) ∝ |ψ_θ(x)|²`.
//!
//! Both samplers return a compressed [`SampleSet`]: distinct configurations
//! with their empirical (or exact) weights. For Markov chains the visit order
//! is kept as indices into the distinct list so estimators can measure
//! autocorrelation of any per-sample quantity.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{is_vanishing, Ansatz, ParameterVector};
use crate::error::{Error, Result};
use crate::model::SpinConfiguration;

/// Largest site count accepted by [`sample_exact`].
pub const EXACT_SITE_CAP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Flip one uniformly chosen site.
    SingleFlip,
    /// Swap one up spin with one down spin; conserves the magnetization.
    Exchange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub n_chains: usize,
    /// Sweeps discarded per chain. `None` means one sweep per site.
    #[serde(default)]
    pub burn_in_sweeps: Option<usize>,
    /// Sweeps between recorded samples; one sweep is `n_sites` proposals,
    /// or one more at random (see `run_chain`).
    #[serde(default = "one")]
    pub thinning: usize,
    #[serde(default = "single_flip")]
    pub proposal: Proposal,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_floor")]
    pub acceptance_floor: f64,
    /// Magnetization `Σ s_i` of the initial states. Required to pin a sector
    /// with the exchange proposal; random otherwise.
    #[serde(default)]
    pub magnetization: Option<i64>,
}

fn one() -> usize {
    1
}
fn single_flip() -> Proposal {
    Proposal::SingleFlip
}
fn default_floor() -> f64 {
    1e-3
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            burn_in_sweeps: None,
            thinning: 1,
            proposal: Proposal::SingleFlip,
            seed: 0,
            acceptance_floor: default_floor(),
            magnetization: None,
        }
    }
}

/// How a propagation step obtains its samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    /// Full summation over the basis.
    Exact,
    Mcmc { n_samples: usize, chain: ChainConfig },
}

impl Sampling {
    /// Draw a sample set. `stream` selects an independent random stream so
    /// successive calls within one run never reuse chains.
    pub fn draw(&self, ansatz: &Ansatz, theta: &ParameterVector, stream: u64) -> Result<SampleSet> {
        match self {
            Sampling::Exact => sample_exact(ansatz, theta),
            Sampling::Mcmc { n_samples, chain } => {
                let mut cfg = chain.clone();
                cfg.seed = derive_seed(chain.seed, stream);
                sample_mcmc(ansatz, theta, *n_samples, &cfg)
            }
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Sampling::Exact)
    }
}

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Accepted over attempted moves after burn-in. `1.0` for exact sums.
    pub acceptance_rate: f64,
    /// Integrated autocorrelation time of `Re χ` in recorded samples.
    pub autocorrelation_time: f64,
    pub n_chains: usize,
    pub n_sweeps: usize,
    pub n_samples: usize,
    pub n_distinct: usize,
    pub seed: u64,
    pub exact: bool,
}

/// Weighted distinct configurations with cached log-amplitudes.
#[derive(Clone, Debug)]
pub struct SampleSet {
    configurations: Vec<SpinConfiguration>,
    weights: Vec<f64>,
    log_amplitudes: Vec<Complex64>,
    /// Per chain, the visited configurations as indices into `configurations`.
    chains: Vec<Vec<u32>>,
    diagnostics: ChainDiagnostics,
}

impl SampleSet {
    pub fn configurations(&self) -> &[SpinConfiguration] {
        &self.configurations
    }

    /// Non-negative, summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_amplitudes(&self) -> &[Complex64] {
        &self.log_amplitudes
    }

    pub fn chains(&self) -> &[Vec<u32>] {
        &self.chains
    }

    pub fn diagnostics(&self) -> &ChainDiagnostics {
        &self.diagnostics
    }

    pub fn len(&self) -> usize {
        self.configurations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configurations.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.diagnostics.exact
    }

    /// Total number of recorded (uncompressed) samples; `0` for exact sums.
    pub fn n_samples(&self) -> usize {
        self.diagnostics.n_samples
    }

    /// Effective sample size of a per-configuration quantity, from the
    /// integrated autocorrelation time of its chain series. Infinite for
    /// exact sums.
    pub fn effective_size(&self, values: &[Complex64]) -> f64 {
        if self.is_exact() {
            return f64::INFINITY;
        }
        let tau = self.autocorrelation_time(values);
        self.n_samples() as f64 / tau
    }

    /// Sample-weighted mean of the per-chain integrated autocorrelation
    /// times of `values` (real and imaginary parts, the larger one).
    pub fn autocorrelation_time(&self, values: &[Complex64]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        let mut re = Vec::new();
        let mut im = Vec::new();
        for chain in &self.chains {
            if chain.is_empty() {
                continue;
            }
            re.clear();
            im.clear();
            re.extend(chain.iter().map(|&k| values[k as usize].re));
            im.extend(chain.iter().map(|&k| values[k as usize].im));
            let tau = integrated_autocorrelation(&re).max(integrated_autocorrelation(&im));
            total += tau * chain.len() as f64;
            count += chain.len();
        }
        if count == 0 {
            1.0
        } else {
            total / count as f64
        }
    }

    /// Assemble from explicit weights, mainly for synthetic tests.
    pub fn from_weighted(
        configurations: Vec<SpinConfiguration>,
        weights: Vec<f64>,
        log_amplitudes: Vec<Complex64>,
    ) -> Result<Self> {
        if configurations.len() != weights.len() || weights.len() != log_amplitudes.len() {
            return Err(Error::InvalidInput("sample set arrays differ in length".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidInput("sample weights must be non-negative".into()));
        }
        let n = configurations.len();
        Ok(Self {
            configurations,
            weights: weights.into_iter().map(|w| w / total).collect(),
            log_amplitudes,
            chains: Vec::new(),
            diagnostics: ChainDiagnostics {
                acceptance_rate: 1.0,
                autocorrelation_time: 1.0,
                n_distinct: n,
                exact: true,
                ..Default::default()
            },
        })
    }
}

/// Integrated autocorrelation time `τ = 1 + 2 Σ_k ρ_k`, truncated by Geyer's
/// initial positive sequence. At least 1; 1 for constant series.
pub fn integrated_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if !(c0 > 1e-300) {
        return 1.0;
    }
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    // Γ_m = ρ_{2m} + ρ_{2m+1}; sum while positive.
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    tau.max(1.0)
}

/// Exact Born weights over the full basis; configurations with vanishing
/// amplitude are left out.
pub fn sample_exact(ansatz: &Ansatz, theta: &ParameterVector) -> Result<SampleSet> {
    let n = ansatz.n_sites();
    if n > EXACT_SITE_CAP {
        return Err(Error::HilbertSpaceTooLarge {
            n_sites: n,
            cap: EXACT_SITE_CAP,
            required_bytes: (1u128 << n) * 40,
        });
    }
    ansatz.check_parameters(theta)?;
    let t = theta.as_slice();
    let mut configurations = Vec::with_capacity(1 << n);
    let mut logs = Vec::with_capacity(1 << n);
    for x in SpinConfiguration::basis(n) {
        let chi = ansatz.eval_log_amplitude(t, x);
        if !is_vanishing(chi) {
            configurations.push(x);
            logs.push(chi);
        }
    }
    if configurations.is_empty() {
        return Err(Error::InvalidInput("state vanishes identically".into()));
    }
    let max_re = logs.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|c| (2.0 * (c.re - max_re)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.into_iter().map(|w| w / total).collect();
    let n_distinct = configurations.len();
    Ok(SampleSet {
        configurations,
        weights,
        log_amplitudes: logs,
        chains: Vec::new(),
        diagnostics: ChainDiagnostics {
            acceptance_rate: 1.0,
            autocorrelation_time: 1.0,
            n_distinct,
            exact: true,
            ..Default::default()
        },
    })
}

struct ChainResult {
    visited: Vec<SpinConfiguration>,
    cache: HashMap<u64, Complex64>,
    accepted: u64,
    attempted: u64,
}

fn initial_state(rng: &mut ChaCha8Rng, n: usize, magnetization: Option<i64>) -> Result<SpinConfiguration> {
    match magnetization {
        None => SpinConfiguration::new(rng.gen::<u64>() & crate::model::full_mask(n), n),
        Some(m) => {
            if m.unsigned_abs() as usize > n || (n as i64 - m) % 2 != 0 {
                return Err(Error::InvalidInput(format!(
                    "magnetization {m} impossible on {n} sites"
                )));
            }
            let n_down = ((n as i64 - m) / 2) as usize;
            let mut sites: Vec<usize> = (0..n).collect();
            for i in 0..n_down {
                let j = rng.gen_range(i..n);
                sites.swap(i, j);
            }
            let bits = sites[..n_down].iter().fold(0u64, |b, &s| b | 1 << s);
            SpinConfiguration::new(bits, n)
        }
    }
}

fn run_chain(
    ansatz: &Ansatz,
    theta: &[f64],
    n_keep: usize,
    cfg: &ChainConfig,
    burn_in: usize,
    chain_index: usize,
) -> Result<ChainResult> {
    let n = ansatz.n_sites();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain_index as u64);
    let mut cache: HashMap<u64, Complex64> = HashMap::new();
    let mut log_psi = |x: SpinConfiguration| -> Complex64 {
        *cache
            .entry(x.bits())
            .or_insert_with(|| ansatz.eval_log_amplitude(theta, x))
    };

    let mut x = initial_state(&mut rng, n, cfg.magnetization)?;
    let mut chi = log_psi(x);
    let mut tries = 0;
    while is_vanishing(chi) {
        tries += 1;
        if tries > 10_000 {
            return Err(Error::InvalidInput(
                "no initial configuration with nonzero amplitude found".into(),
            ));
        }
        x = initial_state(&mut rng, n, cfg.magnetization)?;
        chi = log_psi(x);
    }

    let mut accepted = 0u64;
    let mut attempted = 0u64;
    let mut visited = Vec::with_capacity(n_keep);
    let total_sweeps = burn_in + n_keep * cfg.thinning;
    for sweep in 0..total_sweeps {
        let counting = sweep >= burn_in;
        // A sweep is `n` attempts plus one more with probability 1/2. With
        // every move accepted (flat distribution) a fixed even sweep length
        // would confine the stored samples to one magnetization parity.
        let attempts = n + usize::from(rng.gen::<bool>());
        for _ in 0..attempts {
            let flip = match cfg.proposal {
                Proposal::SingleFlip => 1u64 << rng.gen_range(0..n),
                Proposal::Exchange => {
                    let down = x.bits();
                    let n_down = down.count_ones() as usize;
                    if n_down == 0 || n_down == n {
                        // single-state sector: every move is trivially accepted
                        if counting {
                            attempted += 1;
                            accepted += 1;
                        }
                        continue;
                    }
                    let a = nth_set_bit(down, rng.gen_range(0..n_down));
                    let up = !down & crate::model::full_mask(n);
                    let b = nth_set_bit(up, rng.gen_range(0..n - n_down));
                    (1u64 << a) | (1u64 << b)
                }
            };
            let y = x.flipped(flip);
            let chi_y = log_psi(y);
            // |ψ(y)/ψ(x)|²; a vanishing proposal has ratio 0
            let ratio = (2.0 * (chi_y.re - chi.re)).exp();
            let accept = ratio >= 1.0 || rng.gen::<f64>() < ratio;
            if counting {
                attempted += 1;
            }
            if accept {
                x = y;
                chi = chi_y;
                if counting {
                    accepted += 1;
                }
            }
        }
        if counting && (sweep - burn_in + 1) % cfg.thinning == 0 {
            visited.push(x);
        }
    }
    Ok(ChainResult {
        visited,
        cache,
        accepted,
        attempted,
    })
}

fn nth_set_bit(mut word: u64, k: usize) -> u32 {
    for _ in 0..k {
        word &= word - 1;
    }
    word.trailing_zeros()
}

/// Metropolis sampling with independent chains. Chain `c` uses stream `c`
/// of a ChaCha8 generator keyed by `cfg.seed`; results are merged in chain
/// order so output is reproducible.
pub fn sample_mcmc(
    ansatz: &Ansatz,
    theta: &ParameterVector,
    n_samples: usize,
    cfg: &ChainConfig,
) -> Result<SampleSet> {
    ansatz.check_parameters(theta)?;
    if n_samples == 0 || cfg.n_chains == 0 || cfg.thinning == 0 {
        return Err(Error::InvalidInput(
            "n_samples, n_chains and thinning must be positive".into(),
        ));
    }
    if cfg.proposal == Proposal::Exchange && cfg.magnetization.is_none() {
        return Err(Error::InvalidInput(
            "exchange proposal needs a magnetization sector".into(),
        ));
    }
    let n = ansatz.n_sites();
    let burn_in = cfg.burn_in_sweeps.unwrap_or(n);
    let per_chain = n_samples.div_ceil(cfg.n_chains);
    let t = theta.as_slice();
    let results: Vec<ChainResult> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let keep = per_chain.min(n_samples - (c * per_chain).min(n_samples));
            run_chain(ansatz, t, keep, cfg, burn_in, c)
        })
        .collect::<Result<_>>()?;

    let accepted: u64 = results.iter().map(|r| r.accepted).sum();
    let attempted: u64 = results.iter().map(|r| r.attempted).sum();
    let acceptance_rate = if attempted == 0 {
        1.0
    } else {
        accepted as f64 / attempted as f64
    };

    let mut counts: BTreeMap<SpinConfiguration, usize> = BTreeMap::new();
    for r in &results {
        for &x in &r.visited {
            *counts.entry(x).or_default() += 1;
        }
    }
    let index: HashMap<u64, u32> = counts
        .keys()
        .enumerate()
        .map(|(k, x)| (x.bits(), k as u32))
        .collect();
    let total = n_samples as f64;
    let configurations: Vec<SpinConfiguration> = counts.keys().copied().collect();
    let weights: Vec<f64> = counts.values().map(|&c| c as f64 / total).collect();
    let log_amplitudes: Vec<Complex64> = configurations
        .iter()
        .map(|x| {
            results
                .iter()
                .find_map(|r| r.cache.get(&x.bits()).copied())
                .expect("visited configurations are cached")
        })
        .collect();
    let chains: Vec<Vec<u32>> = results
        .iter()
        .map(|r| r.visited.iter().map(|x| index[&x.bits()]).collect())
        .collect();

    let mut set = SampleSet {
        configurations,
        weights,
        log_amplitudes,
        chains,
        diagnostics: ChainDiagnostics::default(),
    };
    let re_chi: Vec<Complex64> = set.log_amplitudes.iter().map(|c| Complex64::new(c.re, 0.0)).collect();
    let tau = set.autocorrelation_time(&re_chi);
    set.diagnostics = ChainDiagnostics {
        acceptance_rate,
        autocorrelation_time: tau,
        n_chains: cfg.n_chains,
        n_sweeps: burn_in + per_chain * cfg.thinning,
        n_samples,
        n_distinct: set.configurations.len(),
        seed: cfg.seed,
        exact: false,
    };
    if acceptance_rate < cfg.acceptance_floor {
        return Err(Error::StuckChain {
            acceptance_rate,
            floor: cfg.acceptance_floor,
            diagnostics: Box::new(set.diagnostics),
        });
    }
    Ok(set)
}
