//! Brute-force stationary distribution of the capped-state chain on tiny
//! domains.
//!
//! Queue lengths are capped at a per-site maximum and arrivals into a
//! full site are dropped, which truncates the state space to
//! `(cap+1)^sites` states. The stationary vector is found by power
//! iteration on the uniformized kernel `P = I + Q/Lambda`. Because the
//! true marginals have exponential tails, a moderate cap makes the
//! truncation bias negligible; the mass sitting at the cap is reported so
//! callers can enforce cap adequacy instead of trusting it.

use std::sync::Arc;

use serde::Serialize;

use crate::domain::Domain;
use crate::dynamics::NeighborTable;
use crate::error::{Error, Result};
use crate::kernel::InterferenceKernel;

/// Hard limit on the number of enumerated states.
pub const STATE_LIMIT: usize = 1_000_000;

/// Enumeration of capped queue configurations on a small domain.
///
/// Frozen sites are pinned to zero and excluded from the digits, so the
/// state count is `(cap+1)^(unfrozen sites)`.
#[derive(Debug, Clone)]
pub struct CappedStateSpace {
    dom: Arc<Domain>,
    cap: u32,
    free_sites: Vec<usize>,
    count: usize,
}

impl CappedStateSpace {
    pub fn new(dom: Arc<Domain>, cap: u32) -> Result<Self> {
        let free_sites: Vec<usize> = dom.sites().filter(|&s| !dom.is_frozen(s)).collect();
        let base = cap as usize + 1;
        let mut count: usize = 1;
        for _ in &free_sites {
            count = count.checked_mul(base).filter(|&c| c <= STATE_LIMIT).ok_or_else(|| {
                let approx = (base as f64).powi(free_sites.len() as i32);
                Error::StateSpaceTooLarge {
                    states: approx.min(usize::MAX as f64) as usize,
                    limit: STATE_LIMIT,
                }
            })?;
        }
        Ok(Self { dom, cap, free_sites, count })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.dom
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn state_count(&self) -> usize {
        self.count
    }

    /// Flat state index of a full-length value vector.
    pub fn index_of(&self, values: &[u32]) -> usize {
        debug_assert_eq!(values.len(), self.dom.site_count());
        let base = self.cap as usize + 1;
        let mut idx = 0usize;
        for &site in &self.free_sites {
            debug_assert!(values[site] <= self.cap);
            idx = idx * base + values[site] as usize;
        }
        idx
    }

    /// Full-length value vector of a flat state index (frozen sites zero).
    pub fn values_of(&self, index: usize) -> Vec<u32> {
        debug_assert!(index < self.count);
        let base = self.cap as usize + 1;
        let mut values = vec![0u32; self.dom.site_count()];
        let mut rest = index;
        for &site in self.free_sites.iter().rev() {
            values[site] = (rest % base) as u32;
            rest /= base;
        }
        values
    }
}

/// Sparse generator of the capped chain plus its uniformization constant.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    rates: Vec<f64>,
    out_rate: Vec<f64>,
    /// `Lambda = (lambda + 1) * sites`, an upper bound on every exit rate.
    pub uniformization: f64,
}

impl GeneratorMatrix {
    pub fn state_count(&self) -> usize {
        self.out_rate.len()
    }

    /// Off-diagonal entries of one row as `(target, rate)`.
    pub fn row(&self, state: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[state];
        let hi = self.row_ptr[state + 1];
        self.cols[lo..hi]
            .iter()
            .zip(&self.rates[lo..hi])
            .map(|(&c, &r)| (c as usize, r))
    }

    /// Diagonal entry, `-sum` of the row's off-diagonal rates.
    pub fn diagonal(&self, state: usize) -> f64 {
        -self.out_rate[state]
    }

    /// `max_x |(pi Q)(x)|`, a stationarity residual.
    pub fn residual_inf(&self, pi: &[f64]) -> f64 {
        let mut flow = vec![0.0f64; self.state_count()];
        for s in 0..self.state_count() {
            flow[s] -= pi[s] * self.out_rate[s];
            for (t, rate) in self.row(s) {
                flow[t] += pi[s] * rate;
            }
        }
        flow.iter().fold(0.0f64, |acc, f| acc.max(f.abs()))
    }
}

/// Builds the generator: arrivals at rate `lambda` into unmasked sites
/// below the cap, departures at the interference service rate.
pub fn build_generator(
    space: &CappedStateSpace,
    kernel: &InterferenceKernel,
    lambda: f64,
) -> Result<GeneratorMatrix> {
    assert!(lambda >= 0.0);
    let dom = space.domain();
    let table = NeighborTable::build(dom, kernel);
    let states = space.state_count();
    let base = space.cap as usize + 1;
    let mut row_ptr = Vec::with_capacity(states + 1);
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    let mut out_rate = Vec::with_capacity(states);
    row_ptr.push(0usize);
    // Stride of a free site's digit in the flat index.
    let strides: Vec<usize> = (0..space.free_sites.len())
        .map(|k| base.pow((space.free_sites.len() - 1 - k) as u32))
        .collect();
    for idx in 0..states {
        let values = space.values_of(idx);
        let mut total = 0.0;
        for (k, &site) in space.free_sites.iter().enumerate() {
            let x = values[site];
            if lambda > 0.0 && x < space.cap {
                cols.push((idx + strides[k]) as u32);
                rates.push(lambda);
                total += lambda;
            }
            if x > 0 {
                let r = table.rate(&values, site);
                debug_assert!(r > 0.0 && r <= 1.0);
                cols.push((idx - strides[k]) as u32);
                rates.push(r);
                total += r;
            }
        }
        out_rate.push(total);
        row_ptr.push(cols.len());
    }
    let uniformization = (lambda + 1.0) * space.free_sites.len() as f64;
    Ok(GeneratorMatrix { row_ptr, cols, rates, out_rate, uniformization })
}

/// Solves `pi Q = 0`, `sum pi = 1` by power iteration on the uniformized
/// kernel, stopping when successive iterates are within `tol` in L1.
pub fn stationary_solve(gen: &GeneratorMatrix, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let states = gen.state_count();
    let lam = gen.uniformization;
    let mut pi = vec![1.0 / states as f64; states];
    let mut next = vec![0.0f64; states];
    let mut delta = f64::INFINITY;
    for _ in 0..max_iter {
        for slot in next.iter_mut() {
            *slot = 0.0;
        }
        for s in 0..states {
            let mass = pi[s];
            if mass == 0.0 {
                continue;
            }
            next[s] += mass * (1.0 - gen.out_rate[s] / lam);
            let lo = gen.row_ptr[s];
            let hi = gen.row_ptr[s + 1];
            for (c, r) in gen.cols[lo..hi].iter().zip(&gen.rates[lo..hi]) {
                next[*c as usize] += mass * r / lam;
            }
        }
        let total: f64 = next.iter().sum();
        delta = 0.0;
        for (n, p) in next.iter_mut().zip(&pi) {
            *n /= total;
            delta += (*n - p).abs();
        }
        std::mem::swap(&mut pi, &mut next);
        if delta < tol {
            return Ok(pi);
        }
    }
    Err(Error::NoConvergence { max_iter, delta })
}

/// Which functionals to evaluate under the stationary vector.
#[derive(Debug, Clone)]
pub struct OracleRequests {
    /// Highest moment order, `mu_k` for `k = 0..=k_max`.
    pub k_max: usize,
    /// Exponential-moment arguments for `E[exp(c X_0)]`.
    pub mgf_c: Vec<f64>,
    /// Sites paired with the center for covariances.
    pub cov_sites: Vec<usize>,
}

impl Default for OracleRequests {
    fn default() -> Self {
        Self { k_max: 5, mgf_c: Vec::new(), cov_sites: Vec::new() }
    }
}

/// Exact functionals of the capped stationary law.
#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    #[serde(skip)]
    pub pi: Vec<f64>,
    /// Stationary probability that some site sits at the cap.
    pub truncation_mass: f64,
    /// Marginal law of the center site, `P(X_0 = x)` for `x = 0..=cap`.
    pub marginal: Vec<f64>,
    /// `E[X_0]`.
    pub mean: f64,
    /// `mu_k = E[X_0^k]` for `k = 0..=k_max`.
    pub moments: Vec<f64>,
    /// `(c, E[exp(c X_0)])` pairs.
    pub mgf: Vec<(f64, f64)>,
    /// `P(X_0 >= x)` for `x = 0..=cap`.
    pub ccdf: Vec<f64>,
    /// `(site, E[X_0 X_site], Cov(X_0, X_site))` per requested site.
    pub covariances: Vec<(usize, f64, f64)>,
}

/// Evaluates exact expectations under `pi`. The reference site is the
/// center of the box.
pub fn oracle_functionals(
    pi: &[f64],
    space: &CappedStateSpace,
    requests: &OracleRequests,
) -> OracleResult {
    assert_eq!(pi.len(), space.state_count());
    let dom = space.domain();
    let center = dom
        .index_of(&vec![0; dom.dim()])
        .expect("center site exists");
    let cap = space.cap as usize;
    let mut marginal = vec![0.0f64; cap + 1];
    let mut truncation_mass = 0.0;
    let mut products = vec![0.0f64; requests.cov_sites.len()];
    let mut partner_means = vec![0.0f64; requests.cov_sites.len()];
    for idx in 0..space.state_count() {
        let p = pi[idx];
        let values = space.values_of(idx);
        marginal[values[center] as usize] += p;
        if values.iter().any(|&v| v as usize == cap) {
            truncation_mass += p;
        }
        for (slot, &site) in requests.cov_sites.iter().enumerate() {
            products[slot] += p * values[center] as f64 * values[site] as f64;
            partner_means[slot] += p * values[site] as f64;
        }
    }
    let mean: f64 = marginal
        .iter()
        .enumerate()
        .map(|(x, p)| x as f64 * p)
        .sum();
    let moments: Vec<f64> = (0..=requests.k_max)
        .map(|k| {
            marginal
                .iter()
                .enumerate()
                .map(|(x, p)| (x as f64).powi(k as i32) * p)
                .sum()
        })
        .collect();
    let mgf: Vec<(f64, f64)> = requests
        .mgf_c
        .iter()
        .map(|&c| {
            let value = marginal
                .iter()
                .enumerate()
                .map(|(x, p)| (c * x as f64).exp() * p)
                .sum();
            (c, value)
        })
        .collect();
    let mut ccdf = vec![0.0f64; cap + 1];
    let mut acc = 0.0;
    for x in (0..=cap).rev() {
        acc += marginal[x];
        ccdf[x] = acc;
    }
    ccdf[0] = 1.0;
    let covariances: Vec<(usize, f64, f64)> = requests
        .cov_sites
        .iter()
        .zip(products)
        .zip(partner_means)
        .map(|((&site, prod), pm)| (site, prod, prod - mean * pm))
        .collect();
    OracleResult {
        pi: pi.to_vec(),
        truncation_mass,
        marginal,
        mean,
        moments,
        mgf,
        ccdf,
        covariances,
    }
}

/// Convenience: build, solve and evaluate in one call.
pub fn solve_oracle(
    dom: Arc<Domain>,
    kernel: &InterferenceKernel,
    lambda: f64,
    cap: u32,
    requests: &OracleRequests,
    tol: f64,
) -> Result<OracleResult> {
    let space = CappedStateSpace::new(dom, cap)?;
    let gen = build_generator(&space, kernel, lambda)?;
    let pi = stationary_solve(&gen, tol, 2_000_000)?;
    Ok(oracle_functionals(&pi, &space, requests))
}
