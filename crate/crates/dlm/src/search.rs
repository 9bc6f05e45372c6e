//! Coordinate line search over a log-spaced weight grid.
//!
//! Models weight tuning as a hyperparameter search: each supported weight
//! ranges over the grid `S = {α^k : -K <= k <= K}`, and an external
//! valuation oracle scores whole weight vectors. Under a monotone oracle
//! (value weakly increases as every coordinate approaches the target) the
//! coordinate-wise walk provably lands on the grid argmax in O(|support|·K)
//! oracle calls; the verification harness checks exactly that against an
//! exhaustive brute-force argmax, and fits the call count growth.
//!
//! Weights are tracked as grid indices and materialized through one shared
//! `α^k` table, so walked values and brute-force values compare exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("grid base must exceed 1, got {0}")]
    BadAlpha(f64),
    #[error("brute force would enumerate {0} points (limit {MAX_BRUTE_FORCE})")]
    TooLarge(u128),
}

/// Enumeration cap for [`brute_force_argmax`].
pub const MAX_BRUTE_FORCE: u128 = 100_000;

/// The discretized weight space: grid `{α^k : -K <= k <= K}` applied to an
/// ordered list of supported weight indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    pub alpha: f64,
    pub k: u32,
    /// Indices of the weights being searched; all others stay zero.
    pub support: Vec<usize>,
}

impl SearchSpace {
    pub fn new(alpha: f64, k: u32, support: Vec<usize>) -> Result<Self, SearchError> {
        if alpha.is_nan() || alpha <= 1.0 {
            return Err(SearchError::BadAlpha(alpha));
        }
        Ok(Self { alpha, k, support })
    }

    /// Grid values in increasing order; `2K + 1` of them.
    pub fn grid(&self) -> Vec<f64> {
        (-(self.k as i32)..=self.k as i32)
            .map(|e| self.alpha.powi(e))
            .collect()
    }

    pub fn grid_len(&self) -> usize {
        2 * self.k as usize + 1
    }

    fn values(&self, grid: &[f64], positions: &[usize]) -> Vec<f64> {
        positions.iter().map(|&p| grid[p]).collect()
    }
}

type ValuationFn<'a> = Box<dyn FnMut(&[f64]) -> f64 + 'a>;

/// Wraps the external valuation function and counts every call.
pub struct ValuationOracle<'a> {
    f: ValuationFn<'a>,
    calls: u64,
}

impl<'a> ValuationOracle<'a> {
    pub fn new(f: impl FnMut(&[f64]) -> f64 + 'a) -> Self {
        Self {
            f: Box::new(f),
            calls: 0,
        }
    }

    /// Evaluate a weight vector (one entry per supported index).
    pub fn value(&mut self, weights: &[f64]) -> f64 {
        self.calls += 1;
        (self.f)(weights)
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

/// Mutable state of one line search: current accepted point `w`, probe
/// point `w'`, and the active coordinate. Positions index into the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchState {
    pub w: Vec<usize>,
    pub w_prime: Vec<usize>,
    pub coord: usize,
}

impl SearchState {
    /// Both points start at the grid minimum; the probe leads the first
    /// coordinate by one grid step so the opening comparison is
    /// informative.
    pub fn initial(space: &SearchSpace) -> Self {
        let n = space.support.len();
        let mut state = Self {
            w: vec![0; n],
            w_prime: vec![0; n],
            coord: 0,
        };
        state.seed_probe(space);
        state
    }

    /// Point the probe one grid step above the active coordinate, when the
    /// grid allows it.
    fn seed_probe(&mut self, space: &SearchSpace) {
        self.w_prime.copy_from_slice(&self.w);
        let i = self.coord;
        if i < self.w.len() && self.w[i] + 1 < space.grid_len() {
            self.w_prime[i] = self.w[i] + 1;
        }
    }

    pub fn weights(&self, space: &SearchSpace) -> Vec<f64> {
        space.values(&space.grid(), &self.w)
    }

    pub fn probe_weights(&self, space: &SearchSpace) -> Vec<f64> {
        space.values(&space.grid(), &self.w_prime)
    }
}

/// One optimization step. Accept the probe and push it one grid step
/// further while it improves and headroom remains; otherwise advance to the
/// next coordinate. Returns true when every coordinate is exhausted.
///
/// Equal valuations count as non-improvement, so plateaus advance rather
/// than loop.
pub fn optimize_step(
    space: &SearchSpace,
    state: &mut SearchState,
    v_w: f64,
    v_w_prime: f64,
) -> bool {
    let i = state.coord;
    let at_max = state.w[i] + 1 >= space.grid_len();
    if v_w_prime > v_w && !at_max {
        state.w.copy_from_slice(&state.w_prime);
        if state.w[i] + 1 < space.grid_len() {
            state.w_prime[i] = state.w[i] + 1;
        }
        false
    } else {
        state.coord += 1;
        if state.coord >= space.support.len() {
            return true;
        }
        state.seed_probe(space);
        false
    }
}

/// Walk every supported coordinate up from the grid minimum, keeping the
/// probe while the oracle improves. Returns the final weights and the
/// number of oracle calls spent.
pub fn iterated_line_search(
    space: &SearchSpace,
    oracle: &mut ValuationOracle<'_>,
) -> (Vec<f64>, u64) {
    if space.support.is_empty() {
        return (Vec::new(), oracle.calls());
    }
    let grid = space.grid();
    let mut state = SearchState::initial(space);
    loop {
        let v_w = oracle.value(&space.values(&grid, &state.w));
        let v_w_prime = oracle.value(&space.values(&grid, &state.w_prime));
        if optimize_step(space, &mut state, v_w, v_w_prime) {
            break;
        }
    }
    (space.values(&grid, &state.w), oracle.calls())
}

/// Exhaustive argmax over the full grid product, ties resolved to the
/// lexicographically smallest point. The reference the line search is
/// verified against.
pub fn brute_force_argmax(
    space: &SearchSpace,
    oracle: &mut ValuationOracle<'_>,
) -> Result<Vec<f64>, SearchError> {
    let n = space.support.len();
    let total = (space.grid_len() as u128).pow(n as u32);
    if total > MAX_BRUTE_FORCE {
        return Err(SearchError::TooLarge(total));
    }
    let grid = space.grid();
    let mut positions = vec![0usize; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let value = oracle.value(&space.values(&grid, &positions));
        // Strict improvement keeps the first (lexicographically smallest)
        // maximizer.
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((positions.clone(), value));
        }
        // Odometer increment in lexicographic order.
        let mut digit = n;
        loop {
            if digit == 0 {
                let (positions, _) = best.expect("at least one point was evaluated");
                return Ok(space.values(&grid, &positions));
            }
            digit -= 1;
            positions[digit] += 1;
            if positions[digit] < space.grid_len() {
                break;
            }
            positions[digit] = 0;
        }
    }
}

/// One randomized verification case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseResult {
    pub support_size: usize,
    pub k: u32,
    pub alpha: f64,
    pub target: Vec<f64>,
    pub found: Vec<f64>,
    pub expected: Vec<f64>,
    pub matched: bool,
    pub calls: u64,
}

/// Aggregate of a randomized verification run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub cases: Vec<CaseResult>,
    pub mismatches: usize,
    /// Least-squares fit of mean oracle calls against `|support| · K`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub monotone: bool,
}

/// Run randomized cases comparing the line search against brute force.
///
/// Monotone cases use `V(w) = -Σ |w_i - w*_i|` with the target on the grid,
/// the family under which coordinate-wise optimality is guaranteed; every
/// case must match. Non-monotone stress cases use an oscillatory valuation
/// and are reported informationally — divergence there is expected, not a
/// failure.
pub fn run_verification(
    cases: usize,
    support_max: usize,
    k_max: u32,
    alphas: &[f64],
    seed: u64,
    monotone: bool,
) -> VerificationReport {
    use rand::Rng;
    let mut rng = crate::seed::rng(seed);
    let mut results = Vec::with_capacity(cases);
    for _ in 0..cases {
        let support_size = rng.random_range(1..=support_max);
        let k = rng.random_range(1..=k_max);
        let alpha = alphas[rng.random_range(0..alphas.len())];
        let space =
            SearchSpace::new(alpha, k, (0..support_size).collect()).expect("alphas exceed 1");
        let grid = space.grid();
        let target: Vec<f64> = (0..support_size)
            .map(|_| grid[rng.random_range(0..grid.len())])
            .collect();

        let valuation = |w: &[f64]| -> f64 {
            let distance: f64 = w.iter().zip(&target).map(|(x, t)| (x - t).abs()).sum();
            if monotone {
                -distance
            } else {
                -distance + (w.iter().sum::<f64>() * 3.0).sin()
            }
        };

        let (found, calls) = {
            let mut search_oracle = ValuationOracle::new(valuation);
            iterated_line_search(&space, &mut search_oracle)
        };
        let expected = {
            let mut brute_oracle = ValuationOracle::new(valuation);
            brute_force_argmax(&space, &mut brute_oracle)
                .expect("verification spaces stay under the enumeration cap")
        };
        let matched = found == expected;
        results.push(CaseResult {
            support_size,
            k,
            alpha,
            target,
            found,
            expected,
            matched,
            calls,
        });
    }

    let mismatches = results.iter().filter(|c| !c.matched).count();
    let (slope, intercept, r_squared) = fit_calls(&results);
    VerificationReport {
        cases: results,
        mismatches,
        slope,
        intercept,
        r_squared,
        monotone,
    }
}

/// Least squares of per-cell mean call counts on `|support| · K`. Averaging
/// within each (support, K) cell removes the target-position noise so the
/// fit reflects the growth law.
fn fit_calls(cases: &[CaseResult]) -> (f64, f64, f64) {
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(usize, u32), (f64, u32)> = BTreeMap::new();
    for case in cases {
        let cell = cells.entry((case.support_size, case.k)).or_insert((0.0, 0));
        cell.0 += case.calls as f64;
        cell.1 += 1;
    }
    let points: Vec<(f64, f64)> = cells
        .into_iter()
        .map(|((s, k), (sum, n))| ((s as f64) * f64::from(k), sum / f64::from(n)))
        .collect();
    if points.len() < 2 {
        return (0.0, points.first().map(|p| p.1).unwrap_or(0.0), 1.0);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    (slope, intercept, r_squared)
}

/// Markdown summary of a verification run.
pub fn render_verification_report(report: &VerificationReport) -> String {
    use std::fmt::Write;
    let mut out = String::from("# Grid-search verification\n\n");
    let _ = writeln!(
        out,
        "Mode: {}\n",
        if report.monotone {
            "monotone valuations"
        } else {
            "non-monotone stress valuations"
        }
    );
    let _ = writeln!(
        out,
        "- cases: {}\n- mismatches vs brute force: {}\n- call-count fit: calls ≈ {:.2} + {:.2} · |support|·K (R² = {:.3})",
        report.cases.len(),
        report.mismatches,
        report.intercept,
        report.slope,
        report.r_squared
    );
    if report.mismatches > 0 {
        out.push_str("\n## Mismatches\n\n");
        for case in report.cases.iter().filter(|c| !c.matched) {
            let _ = writeln!(
                out,
                "- support {}, K {}, α {}: target {:?}, found {:?}, expected {:?}",
                case.support_size, case.k, case.alpha, case.target, case.found, case.expected
            );
        }
    }
    out
}
