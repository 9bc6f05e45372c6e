//! State-feature outcome analysis.
//!
//! Rolls a trained policy out under the hard budget, counts the steps each
//! arm spends engaged, and attributes the accumulated positive states to
//! demographic groups: for group `g`, the share is `Σ_{i in g} S_i / Σ S`.
//! The rendered percentage report is the reflection signal shown to the
//! language model and is a stable format contract.

use crate::policy::{select_actions, ActionMode, PolicyTable};
use crate::rmab::{RmabInstance, Simulation, CATEGORIES, REPORT_ORDER};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write;

/// Group percentages for one category, in catalog order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoryShare {
    pub title: String,
    pub groups: Vec<(String, f64)>,
}

/// Accumulated positive-state totals and their demographic breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub totals: Vec<u64>,
    pub categories: Vec<CategoryShare>,
    /// True when no positive state was observed at all; every share is then
    /// reported as zero.
    pub no_positive: bool,
    pub rendered: String,
}

impl OutcomeReport {
    /// Percentage attributed to the group containing feature index `k`.
    pub fn share_of_feature(&self, k: usize) -> f64 {
        let Some((category, offset)) = crate::rmab::category_of(k) else {
            return 0.0;
        };
        self.categories
            .iter()
            .find(|c| c.title == category.title)
            .map(|c| c.groups[offset].1)
            .unwrap_or(0.0)
    }
}

/// Count, per arm, the steps spent in state 1 over `n_steps` budgeted
/// eval-mode steps starting from the given states.
pub fn accumulate_from(
    policy: &PolicyTable,
    instance: &RmabInstance,
    states: Vec<u8>,
    n_steps: usize,
    rng: &mut impl Rng,
) -> Vec<u64> {
    let mut sim =
        Simulation::with_states(instance, states).expect("caller provides a state per arm");
    let mut totals = vec![0u64; instance.n_arms()];
    for _ in 0..n_steps {
        let actions = select_actions(policy, sim.states(), instance.budget, ActionMode::Eval, rng);
        let acted: usize = actions.iter().map(|&a| usize::from(a)).sum();
        assert!(
            acted <= instance.budget,
            "budget violated: {acted} > {}",
            instance.budget
        );
        for (t, &s) in totals.iter_mut().zip(sim.states()) {
            *t += u64::from(s);
        }
        sim.step(&actions, rng)
            .expect("eval action vectors match the arm count");
    }
    totals
}

/// [`accumulate_from`] starting at the instance's initial states.
pub fn accumulate(
    policy: &PolicyTable,
    instance: &RmabInstance,
    n_steps: usize,
    rng: &mut impl Rng,
) -> Vec<u64> {
    accumulate_from(policy, instance, instance.initial_states(), n_steps, rng)
}

/// Per-category group shares of the accumulated positive states, in report
/// order. All zero when `totals` sums to zero.
pub fn distributions(totals: &[u64], instance: &RmabInstance) -> Vec<CategoryShare> {
    let total: u64 = totals.iter().sum();
    REPORT_ORDER
        .iter()
        .map(|&ci| {
            let category = &CATEGORIES[ci];
            let groups = category
                .labels
                .iter()
                .enumerate()
                .map(|(g, &label)| {
                    let k = category.start + g;
                    let group_sum: u64 = instance
                        .arms
                        .iter()
                        .zip(totals)
                        .filter(|(arm, _)| arm.features.get(k) == 1)
                        .map(|(_, &s)| s)
                        .sum();
                    let pct = if total == 0 {
                        0.0
                    } else {
                        100.0 * group_sum as f64 / total as f64
                    };
                    (label.to_string(), pct)
                })
                .collect();
            CategoryShare {
                title: category.title.to_string(),
                groups,
            }
        })
        .collect()
}

/// Render the category distributions in the fixed report layout.
pub fn render(categories: &[CategoryShare], no_positive: bool) -> String {
    let mut out = String::from("[sensitive features hidden]\n");
    if no_positive {
        out.push_str("(no positive states observed)\n");
    }
    for category in categories {
        out.push('\n');
        let _ = writeln!(out, "Category: {}", category.title);
        for (label, pct) in &category.groups {
            let _ = writeln!(out, "{label}: {pct:.2}%");
        }
    }
    out
}

/// Roll out, attribute, and render in one go.
pub fn analyze(
    policy: &PolicyTable,
    instance: &RmabInstance,
    n_steps: usize,
    rng: &mut impl Rng,
) -> OutcomeReport {
    let totals = accumulate(policy, instance, n_steps, rng);
    report_from_totals(totals, instance)
}

/// Build the report for already-accumulated totals.
pub fn report_from_totals(totals: Vec<u64>, instance: &RmabInstance) -> OutcomeReport {
    let no_positive = totals.iter().all(|&s| s == 0);
    let categories = distributions(&totals, instance);
    let rendered = render(&categories, no_positive);
    OutcomeReport {
        totals,
        categories,
        no_positive,
        rendered,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rmab::{Arm, FeatureVector, TransitionTable};

    fn arm_with(id: usize, age_bit: usize, p: [[f64; 2]; 2], state: u8) -> Arm {
        Arm {
            id,
            features: FeatureVector::with_bits(&[age_bit, 12, 16, 23, 26, 32, 35]),
            p: TransitionTable::new(p).unwrap(),
            state,
        }
    }

    fn pinned(engage: f64) -> [[f64; 2]; 2] {
        [[engage, engage], [engage, engage]]
    }

    fn tiny_instance(arms: Vec<Arm>) -> RmabInstance {
        RmabInstance {
            seed: 0,
            budget: 1,
            discount: 0.9,
            arms,
        }
    }

    #[test]
    fn absorbing_state_accumulates_every_step() {
        let inst = tiny_instance(vec![arm_with(0, 7, pinned(1.0), 1)]);
        let policy = PolicyTable::zeros(1);
        let mut rng = crate::seed::rng(0);
        let totals = accumulate(&policy, &inst, 10, &mut rng);
        assert_eq!(totals, vec![10]);
    }

    #[test]
    fn never_engaged_arm_accumulates_nothing() {
        let inst = tiny_instance(vec![arm_with(0, 7, pinned(0.0), 0)]);
        let policy = PolicyTable::zeros(1);
        let mut rng = crate::seed::rng(0);
        let totals = accumulate(&policy, &inst, 10, &mut rng);
        assert_eq!(totals, vec![0]);
    }

    #[test]
    fn stationary_arm_engagement_frequency() {
        // With P(engage) = 0.5 everywhere, the occupancy measured over
        // 10,000 steps stays within 0.02 of one half.
        let inst = tiny_instance(vec![arm_with(0, 7, pinned(0.5), 0)]);
        let policy = PolicyTable::zeros(1);
        let mut rng = crate::seed::rng(31);
        let totals = accumulate(&policy, &inst, 10_000, &mut rng);
        let freq = totals[0] as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn distribution_attributes_shares_by_group() {
        // Arms 0-1 in "Ages 10-20", arms 2-3 in "Ages 21-30"; only the
        // first group accumulated anything: 100% vs 0%.
        let inst = tiny_instance(vec![
            arm_with(0, 7, pinned(0.5), 0),
            arm_with(1, 7, pinned(0.5), 0),
            arm_with(2, 8, pinned(0.5), 0),
            arm_with(3, 8, pinned(0.5), 0),
        ]);
        let shares = distributions(&[3, 1, 0, 0], &inst);
        let ages = &shares[0];
        assert_eq!(ages.title, "Ages");
        assert_eq!(ages.groups[0], ("Ages 10-20".to_string(), 100.0));
        assert_eq!(ages.groups[1].1, 0.0);
    }

    #[test]
    fn uniform_totals_give_equal_shares() {
        let inst = tiny_instance(vec![
            arm_with(0, 7, pinned(0.5), 0),
            arm_with(1, 8, pinned(0.5), 0),
        ]);
        let shares = distributions(&[5, 5], &inst);
        assert_eq!(shares[0].groups[0].1, 50.0);
        assert_eq!(shares[0].groups[1].1, 50.0);
    }

    #[test]
    fn zero_totals_flag_the_report() {
        let inst = tiny_instance(vec![arm_with(0, 7, pinned(0.0), 0)]);
        let report = report_from_totals(vec![0], &inst);
        assert!(report.no_positive);
        assert!(report.rendered.contains("no positive states"));
        assert!(report.rendered.contains("Ages 10-20: 0.00%"));
        assert!(report
            .categories
            .iter()
            .all(|c| c.groups.iter().all(|(_, pct)| *pct == 0.0)));
    }

    #[test]
    fn rendered_layout_matches_the_contract() {
        let inst = tiny_instance(vec![
            arm_with(0, 7, pinned(1.0), 1),
            arm_with(1, 11, pinned(1.0), 1),
        ]);
        let policy = PolicyTable::zeros(2);
        let mut rng = crate::seed::rng(4);
        let report = analyze(&policy, &inst, 11, &mut rng);

        assert!(report.rendered.starts_with("[sensitive features hidden]\n"));
        assert!(report
            .rendered
            .contains("Category: Ages\nAges 10-20: 50.00%"));
        assert!(report.rendered.contains("Ages 51-60: 50.00%"));
        // Section order is fixed.
        let order: Vec<usize> = [
            "Category: Ages",
            "Category: Income",
            "Category: Calling Times",
            "Category: Education Levels",
            "Category: Languages Spoken",
            "Category: Phone Owners",
            "Category: Organizations",
        ]
        .iter()
        .map(|s| report.rendered.find(s).unwrap())
        .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn rendered_percentages_reparse_to_the_same_values() {
        let inst = crate::rmab::generate_instance(2, 24, 3, &Default::default()).unwrap();
        let policy = PolicyTable::zeros(24);
        let mut rng = crate::seed::rng(8);
        let report = analyze(&policy, &inst, 200, &mut rng);

        let mut parsed = Vec::new();
        for line in report.rendered.lines() {
            if let Some((_, value)) = line.rsplit_once(": ") {
                if let Some(pct) = value.strip_suffix('%') {
                    parsed.push(pct.parse::<f64>().unwrap());
                }
            }
        }
        let expected: Vec<f64> = report
            .categories
            .iter()
            .flat_map(|c| c.groups.iter().map(|(_, p)| *p))
            .collect();
        assert_eq!(parsed.len(), expected.len());
        for (a, b) in parsed.iter().zip(&expected) {
            assert!((a - b).abs() <= 0.005, "rendered {a} vs computed {b}");
        }
    }

    #[test]
    fn boosted_group_gains_share_in_aggregate() {
        // Two age groups with identical transition dynamics. Training with
        // a bonus on the first group must weakly raise that group's share
        // of accumulated positive states, aggregated over seeds.
        use crate::policy::TrainConfig;
        let arms: Vec<Arm> = (0..24)
            .map(|id| arm_with(id, if id < 12 { 7 } else { 8 }, [[0.3, 0.7], [0.4, 0.8]], 0))
            .collect();
        let inst = RmabInstance {
            seed: 0,
            budget: 3,
            discount: 0.9,
            arms,
        };
        let boosted =
            crate::reward::parse("state * 0.1 + if_(state) * 2.0 * agent_feats[7]").unwrap();
        let neutral = crate::reward::parse("state").unwrap();
        let config = TrainConfig::default();

        let share_of_young = |expr: &crate::reward::Expr, seed: u64| -> f64 {
            let policy = crate::policy::train(&inst, expr, &config, seed).unwrap();
            let mut rng = crate::seed::rng(seed ^ 0xABCD);
            let report = analyze(&policy, &inst, 200, &mut rng);
            report.share_of_feature(7)
        };

        let seeds = 50;
        let mut boosted_shares: Vec<f64> =
            (0..seeds).map(|s| share_of_young(&boosted, s)).collect();
        let mut neutral_shares: Vec<f64> =
            (0..seeds).map(|s| share_of_young(&neutral, s)).collect();
        boosted_shares.sort_by(|a, b| a.partial_cmp(b).unwrap());
        neutral_shares.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let iqm = |xs: &[f64]| -> f64 {
            let drop = xs.len() / 4;
            let central = &xs[drop..xs.len() - drop];
            central.iter().sum::<f64>() / central.len() as f64
        };
        assert!(
            iqm(&boosted_shares) >= iqm(&neutral_shares),
            "boosted {:.2}% vs neutral {:.2}%",
            iqm(&boosted_shares),
            iqm(&neutral_shares)
        );
    }

    #[test]
    fn one_hot_categories_partition_to_100() {
        let inst = crate::rmab::generate_instance(6, 48, 5, &Default::default()).unwrap();
        let policy = PolicyTable::zeros(48);
        let mut rng = crate::seed::rng(12);
        let report = analyze(&policy, &inst, 300, &mut rng);
        assert!(!report.no_positive);
        for category in &report.categories {
            let sum: f64 = category.groups.iter().map(|(_, p)| p).sum();
            assert!(
                (sum - 100.0).abs() < 0.1,
                "{} sums to {sum}",
                category.title
            );
        }
    }
}
