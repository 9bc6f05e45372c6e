//! Arms, instances, and the stochastic transition simulator.
//!
//! An instance is a population of independent two-state arms ("engaged" /
//! "not engaged"), each carrying a 43-bit demographic feature vector and a
//! 2-state × 2-action transition table. Populations are synthetic: feature
//! bits are one-hot within seven category blocks and transitions are drawn
//! from Beta priors so that acting is always at least as good as not acting.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of every feature vector.
pub const NUM_FEATURES: usize = 43;

/// Indices 0–6 are reserved (sensitive, hidden) and always zero.
pub const RESERVED_FEATURES: usize = 7;

/// One demographic category block: a contiguous index range in which every
/// arm has exactly one bit set.
pub struct FeatureCategory {
    /// Section title used in outcome reports, e.g. "Ages".
    pub title: &'static str,
    /// First feature index of the block.
    pub start: usize,
    /// Names as listed in the feature catalog shown to the language model.
    pub catalog: &'static [&'static str],
    /// Group labels used in outcome reports.
    pub labels: &'static [&'static str],
}

impl FeatureCategory {
    pub fn len(&self) -> usize {
        self.catalog.len()
    }

    pub fn is_empty(&self) -> bool {
        self.catalog.is_empty()
    }

    /// Feature indices covered by this block.
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

/// The seven category blocks, in feature-index order.
pub const CATEGORIES: [FeatureCategory; 7] = [
    FeatureCategory {
        title: "Ages",
        start: 7,
        catalog: &[
            "Ages 10-20",
            "Ages 21-30",
            "Ages 31-40",
            "Ages 41-50",
            "Ages 51-60",
        ],
        labels: &[
            "Ages 10-20",
            "Ages 21-30",
            "Ages 31-40",
            "Ages 41-50",
            "Ages 51-60",
        ],
    },
    FeatureCategory {
        title: "Languages Spoken",
        start: 12,
        catalog: &[
            "Speaks Hindi",
            "Speaks Marathi",
            "Speaks Gujurati",
            "Speaks Kannada",
        ],
        labels: &[
            "Speaks Hindi",
            "Speaks Marathi",
            "Speaks Gujurati",
            "Speaks Kannada",
        ],
    },
    FeatureCategory {
        title: "Education Levels",
        start: 16,
        catalog: &[
            "Education level 1/7 -- illiterate",
            "Education level 2/7 -- 1-5th Grade Completed",
            "Education level 3/7 -- 6-9th Grade Completed",
            "Education level 4/7 -- 10th Grade Passed",
            "Education level 5/7 -- 12th Grade Passed",
            "Education level 6/7 -- Graduate",
            "Education level 7/7 -- Post graduate",
        ],
        labels: &[
            "Illiterate",
            "1-5th Grade Completed",
            "6-9th Grade Completed",
            "10th Grade Passed",
            "12th Grade Passed",
            "Graduate",
            "Post graduate",
        ],
    },
    FeatureCategory {
        title: "Phone Owners",
        start: 23,
        catalog: &[
            "Phone owner 0 (e.g., woman)",
            "Phone owner 1 (e.g., husband)",
            "Phone owner 2 (e.g., family)",
        ],
        labels: &[
            "Phone owner - Woman",
            "Phone owner - Husband",
            "Phone owner - Family",
        ],
    },
    FeatureCategory {
        title: "Calling Times",
        start: 26,
        catalog: &[
            "To be called from 8:30am-10:30am",
            "To be called from 10:30am-12:30pm",
            "To be called from 12:30pm-3:30pm",
            "To be called from 3:30pm-5:30pm",
            "To be called from 5:30pm-7:30pm",
            "To be called from 7:30pm-9:30pm",
        ],
        labels: &[
            "8:30am-10:30am",
            "10:30am-12:30pm",
            "12:30pm-3:30pm",
            "3:30pm-5:30pm",
            "5:30pm-7:30pm",
            "7:30pm-9:30pm",
        ],
    },
    FeatureCategory {
        title: "Organizations",
        start: 32,
        catalog: &["NGO", "ARMMAN", "PHC"],
        labels: &["NGO", "ARMMAN", "PHC"],
    },
    FeatureCategory {
        title: "Income",
        start: 35,
        catalog: &[
            "Income bracket -1 (no income)",
            "Income bracket 1 (e.g., 0-5000)",
            "Income bracket 2 (e.g., 5001-10000)",
            "Income bracket 3 (e.g., 10001-15000)",
            "Income bracket 4 (e.g., 15001-20000)",
            "Income bracket 5 (e.g., 20001-25000)",
            "Income bracket 6 (e.g., 25001-30000)",
            "Income bracket 7 (e.g., 30000-999999)",
        ],
        labels: &[
            "Income bracket -1 (no income)",
            "Income bracket 1 (e.g., 0-5000)",
            "Income bracket 2 (e.g., 5001-10000)",
            "Income bracket 3 (e.g., 10001-15000)",
            "Income bracket 4 (e.g., 15001-20000)",
            "Income bracket 5 (e.g., 20001-25000)",
            "Income bracket 6 (e.g., 25001-30000)",
            "Income bracket 7 (e.g., 30000-999999)",
        ],
    },
];

/// Category order used when rendering outcome reports.
pub const REPORT_ORDER: [usize; 7] = [0, 6, 4, 2, 1, 3, 5];

/// Category block containing feature index `k`, with the group offset.
pub fn category_of(k: usize) -> Option<(&'static FeatureCategory, usize)> {
    CATEGORIES
        .iter()
        .find(|c| c.indices().contains(&k))
        .map(|c| (c, k - c.start))
}

#[derive(Debug, Error)]
pub enum RmabError {
    #[error("feature vector must have length {NUM_FEATURES}, got {0}")]
    BadFeatureLength(usize),
    #[error("feature values must be 0 or 1, got {value} at index {index}")]
    BadFeatureValue { index: usize, value: u8 },
    #[error("transition probability out of [0, 1]: p[{s}][{a}] = {value}")]
    BadProbability { s: usize, a: usize, value: f64 },
    #[error("acting must not hurt: p[{s}][1] = {p1} < p[{s}][0] = {p0}")]
    ActionHurts { s: usize, p0: f64, p1: f64 },
    #[error("action vector length {got} does not match arm count {expected}")]
    ActionLength { got: usize, expected: usize },
    #[error("budget {budget} exceeds arm count {n_arms}")]
    BudgetExceedsArms { budget: usize, n_arms: usize },
    #[error("instance must have at least one arm")]
    NoArms,
    #[error("discount must lie in [0, 1), got {0}")]
    BadDiscount(f64),
    #[error("invalid population config: {0}")]
    BadConfig(String),
    #[error("arm {arm} violates the one-hot invariant in category {category}")]
    NotOneHot { arm: usize, category: &'static str },
}

/// 43 binary demographic features. Indices 0–6 are reserved and always zero
/// in synthetic populations; indices 7–42 are one-hot within each category
/// block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct FeatureVector {
    bits: [u8; NUM_FEATURES],
}

impl FeatureVector {
    pub fn zeros() -> Self {
        Self {
            bits: [0; NUM_FEATURES],
        }
    }

    /// Vector with the given indices set to 1.
    pub fn with_bits(indices: &[usize]) -> Self {
        let mut fv = Self::zeros();
        for &k in indices {
            fv.bits[k] = 1;
        }
        fv
    }

    pub fn get(&self, k: usize) -> u8 {
        self.bits[k]
    }

    pub fn set(&mut self, k: usize, v: u8) {
        self.bits[k] = v;
    }

    /// Exactly one bit set in every category block, none in the reserved
    /// range.
    pub fn is_one_hot(&self) -> bool {
        if self.bits[..RESERVED_FEATURES].iter().any(|&b| b != 0) {
            return false;
        }
        CATEGORIES.iter().all(|c| {
            self.bits[c.indices()]
                .iter()
                .map(|&b| b as u32)
                .sum::<u32>()
                == 1
        })
    }
}

impl TryFrom<Vec<u8>> for FeatureVector {
    type Error = RmabError;

    fn try_from(v: Vec<u8>) -> Result<Self, Self::Error> {
        if v.len() != NUM_FEATURES {
            return Err(RmabError::BadFeatureLength(v.len()));
        }
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(RmabError::BadFeatureValue { index, value });
        }
        let mut bits = [0; NUM_FEATURES];
        bits.copy_from_slice(&v);
        Ok(Self { bits })
    }
}

impl From<FeatureVector> for Vec<u8> {
    fn from(fv: FeatureVector) -> Self {
        fv.bits.to_vec()
    }
}

/// `p[s][a]` = probability that the next state is 1, for state `s` and
/// action `a`. Acting never hurts: `p[s][1] >= p[s][0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 2]", into = "[[f64; 2]; 2]")]
pub struct TransitionTable {
    p: [[f64; 2]; 2],
}

impl TransitionTable {
    pub fn new(p: [[f64; 2]; 2]) -> Result<Self, RmabError> {
        for (s, row) in p.iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(RmabError::BadProbability { s, a, value: v });
                }
            }
            if row[1] < row[0] {
                return Err(RmabError::ActionHurts {
                    s,
                    p0: row[0],
                    p1: row[1],
                });
            }
        }
        Ok(Self { p })
    }

    /// P(next state = 1 | state, action).
    pub fn engage_prob(&self, s: u8, a: u8) -> f64 {
        self.p[s as usize][a as usize]
    }
}

impl TryFrom<[[f64; 2]; 2]> for TransitionTable {
    type Error = RmabError;

    fn try_from(p: [[f64; 2]; 2]) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<TransitionTable> for [[f64; 2]; 2] {
    fn from(t: TransitionTable) -> Self {
        t.p
    }
}

/// One beneficiary: features, transition dynamics, and the initial
/// engagement state simulations start from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Arm {
    pub id: usize,
    pub features: FeatureVector,
    pub p: TransitionTable,
    pub state: u8,
}

/// A population of arms plus the allocation budget and discount factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmabInstance {
    pub seed: u64,
    pub budget: usize,
    pub discount: f64,
    pub arms: Vec<Arm>,
}

impl RmabInstance {
    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    /// Initial state vector simulations start from.
    pub fn initial_states(&self) -> Vec<u8> {
        self.arms.iter().map(|a| a.state).collect()
    }

    /// Check every structural invariant; used when loading instance files.
    pub fn validate(&self) -> Result<(), RmabError> {
        if self.arms.is_empty() {
            return Err(RmabError::NoArms);
        }
        if self.budget > self.arms.len() {
            return Err(RmabError::BudgetExceedsArms {
                budget: self.budget,
                n_arms: self.arms.len(),
            });
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(RmabError::BadDiscount(self.discount));
        }
        for arm in &self.arms {
            if !arm.features.is_one_hot() {
                let category = CATEGORIES
                    .iter()
                    .find(|c| {
                        arm.features.bits[c.indices()]
                            .iter()
                            .map(|&b| b as u32)
                            .sum::<u32>()
                            != 1
                    })
                    .map(|c| c.title)
                    .unwrap_or("reserved");
                return Err(RmabError::NotOneHot {
                    arm: arm.id,
                    category,
                });
            }
        }
        Ok(())
    }
}

/// Parameters of the synthetic population sampler.
///
/// Baseline engagement `p[0][0]` and the action lift are Beta-distributed;
/// already-engaged arms get a fixed stickiness bonus. Feature group weights
/// default to uniform within each category.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationConfig {
    /// Beta(a, b) prior for the no-action engage probability from state 0.
    pub base_engage: (f64, f64),
    /// Beta(a, b) prior for the action lift added to `p[s][0]`.
    pub action_lift: (f64, f64),
    /// Bonus added to both actions when the arm is already engaged.
    pub stickiness: f64,
    /// Probability that an arm starts engaged.
    pub init_engaged: f64,
    /// Discount factor written into generated instances.
    pub discount: f64,
    /// Per-category sampling weights, in [`CATEGORIES`] order. `None` means
    /// uniform within every category.
    pub category_weights: Option<Vec<Vec<f64>>>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            base_engage: (2.0, 4.0),
            action_lift: (2.0, 6.0),
            stickiness: 0.15,
            init_engaged: 0.5,
            discount: 0.9,
            category_weights: None,
        }
    }
}

impl PopulationConfig {
    /// Mean of the configured action-lift prior.
    pub fn mean_lift(&self) -> f64 {
        self.action_lift.0 / (self.action_lift.0 + self.action_lift.1)
    }

    fn validate(&self) -> Result<(), RmabError> {
        let beta_ok = |(a, b): (f64, f64)| a > 0.0 && b > 0.0;
        if !beta_ok(self.base_engage) || !beta_ok(self.action_lift) {
            return Err(RmabError::BadConfig(
                "Beta parameters must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.stickiness) {
            return Err(RmabError::BadConfig(format!(
                "stickiness {} outside [0, 1]",
                self.stickiness
            )));
        }
        if !(0.0..=1.0).contains(&self.init_engaged) {
            return Err(RmabError::BadConfig(format!(
                "init_engaged {} outside [0, 1]",
                self.init_engaged
            )));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(RmabError::BadDiscount(self.discount));
        }
        if let Some(weights) = &self.category_weights {
            if weights.len() != CATEGORIES.len() {
                return Err(RmabError::BadConfig(format!(
                    "expected {} weight groups, got {}",
                    CATEGORIES.len(),
                    weights.len()
                )));
            }
            for (c, w) in CATEGORIES.iter().zip(weights) {
                if w.len() != c.len() {
                    return Err(RmabError::BadConfig(format!(
                        "category {} expects {} weights, got {}",
                        c.title,
                        c.len(),
                        w.len()
                    )));
                }
                if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                    return Err(RmabError::BadConfig(format!(
                        "weights for {} must be nonnegative with positive sum",
                        c.title
                    )));
                }
            }
        }
        Ok(())
    }
}

fn pick_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Sample a synthetic instance. Deterministic in `seed`.
pub fn generate_instance(
    seed: u64,
    n_arms: usize,
    budget: usize,
    config: &PopulationConfig,
) -> Result<RmabInstance, RmabError> {
    if n_arms == 0 {
        return Err(RmabError::NoArms);
    }
    if budget > n_arms {
        return Err(RmabError::BudgetExceedsArms { budget, n_arms });
    }
    config.validate()?;

    let base = Beta::new(config.base_engage.0, config.base_engage.1)
        .map_err(|e| RmabError::BadConfig(e.to_string()))?;
    let lift = Beta::new(config.action_lift.0, config.action_lift.1)
        .map_err(|e| RmabError::BadConfig(e.to_string()))?;
    let uniform: Vec<Vec<f64>> = CATEGORIES.iter().map(|c| vec![1.0; c.len()]).collect();
    let weights = config.category_weights.as_ref().unwrap_or(&uniform);

    let mut rng = crate::seed::rng(seed);
    let arms = (0..n_arms)
        .map(|id| {
            let mut features = FeatureVector::zeros();
            for (category, w) in CATEGORIES.iter().zip(weights) {
                let group = pick_weighted(&mut rng, w);
                features.set(category.start + group, 1);
            }
            let p00 = base.sample(&mut rng);
            let delta = lift.sample(&mut rng);
            let p01 = (p00 + delta).min(1.0);
            let p10 = (p00 + config.stickiness).min(1.0);
            let p11 = (p01 + config.stickiness).min(1.0);
            let p = TransitionTable::new([[p00, p01], [p10, p11]])
                .expect("sampled probabilities are clamped to [0, 1]");
            let state = u8::from(rng.random_bool(config.init_engaged));
            Arm {
                id,
                features,
                p,
                state,
            }
        })
        .collect();

    Ok(RmabInstance {
        seed,
        budget,
        discount: config.discount,
        arms,
    })
}

/// Result of one simulation step.
#[derive(Debug, Clone)]
pub struct Step {
    pub prev: Vec<u8>,
    pub next: Vec<u8>,
}

/// Mutable state of one rollout over an instance. Arms transition
/// independently; the caller owns the RNG stream.
pub struct Simulation<'a> {
    instance: &'a RmabInstance,
    states: Vec<u8>,
}

impl<'a> Simulation<'a> {
    /// Start from the instance's initial states.
    pub fn new(instance: &'a RmabInstance) -> Self {
        Self {
            states: instance.initial_states(),
            instance,
        }
    }

    /// Start from explicit states (length must match the arm count).
    pub fn with_states(instance: &'a RmabInstance, states: Vec<u8>) -> Result<Self, RmabError> {
        if states.len() != instance.n_arms() {
            return Err(RmabError::ActionLength {
                got: states.len(),
                expected: instance.n_arms(),
            });
        }
        Ok(Self { instance, states })
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    /// Advance every arm one step under the given action vector.
    pub fn step(&mut self, actions: &[u8], rng: &mut impl Rng) -> Result<Step, RmabError> {
        if actions.len() != self.states.len() {
            return Err(RmabError::ActionLength {
                got: actions.len(),
                expected: self.states.len(),
            });
        }
        let prev = self.states.clone();
        for (n, arm) in self.instance.arms.iter().enumerate() {
            let p = arm.p.engage_prob(self.states[n], actions[n]);
            self.states[n] = u8::from(rng.random::<f64>() < p);
        }
        Ok(Step {
            prev,
            next: self.states.clone(),
        })
    }
}
