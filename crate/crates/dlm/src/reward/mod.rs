//! The single-line reward-expression language.
//!
//! Candidate reward functions arrive as text and are sandboxed in a small
//! expression language instead of being executed as code. An expression may
//! reference the binary `state`, indexed features `agent_feats[k]` (the
//! spelling `feature[k]` is accepted and canonicalized), numeric literals,
//! arithmetic `+ - * /`, value-returning short-circuit `and` / `or`, unary
//! `not` and minus, and the indicator call `if_(expr)`. Bitwise `&` and `|`
//! are rejected with a pointed error, as are any other names.
//!
//! `and` / `or` keep their operand-returning semantics (`a and b` is `b`
//! when `a` is nonzero, else `a`), which is what lets `state and expr`
//! gate a bonus on engagement.

mod parse;

pub use parse::parse;

use crate::rmab::{FeatureVector, NUM_FEATURES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Enumeration bound for [`bonus_set`]: at most 2^16 assignments.
pub const MAX_BONUS_INDICES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("feature index {0} out of range (0-{max})", max = NUM_FEATURES - 1)]
    IndexOutOfRange(usize),
    #[error("division by zero while evaluating the reward expression")]
    DivisionByZero,
    #[error("bonus-set enumeration limited to {MAX_BONUS_INDICES} indices, got {0}")]
    TooManyIndices(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Or,
    And,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    /// Binding strength; `or` binds loosest.
    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Mul | BinOp::Div => 5,
        }
    }
}

/// Parsed reward expression. Immutable after parse; safe to share across
/// threads and evaluate concurrently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Number(f64),
    State,
    /// `agent_feats[k]`
    Feature(usize),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    /// `if_(x)`: 1 when the argument is nonzero, else 0.
    If(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Number(_) | Expr::State | Expr::Feature(_) | Expr::If(_) => 7,
            Expr::Neg(_) => 6,
            Expr::Not(_) => 3,
            Expr::Bin(op, _, _) => op.precedence(),
        }
    }

    /// Canonical one-line rendering: minimal parentheses, spaces around
    /// binary operators, `agent_feats[k]` spelling.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Expr::Number(v) => {
                use fmt::Write;
                write!(out, "{v}").expect("writing to a String cannot fail");
            }
            Expr::State => out.push_str("state"),
            Expr::Feature(k) => {
                use fmt::Write;
                write!(out, "agent_feats[{k}]").expect("writing to a String cannot fail");
            }
            Expr::Neg(inner) => {
                out.push('-');
                self.render_child(inner, false, out);
            }
            Expr::Not(inner) => {
                out.push_str("not ");
                self.render_child(inner, false, out);
            }
            Expr::If(inner) => {
                out.push_str("if_(");
                inner.render_into(out);
                out.push(')');
            }
            Expr::Bin(op, lhs, rhs) => {
                self.render_child(lhs, false, out);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                // All binary operators associate left, so a right child at
                // equal precedence needs parentheses to survive reparsing.
                self.render_child(rhs, true, out);
            }
        }
    }

    fn render_child(&self, child: &Expr, is_right: bool, out: &mut String) {
        let needs_parens = child.precedence() < self.precedence()
            || (is_right && child.precedence() == self.precedence());
        if needs_parens {
            out.push('(');
            child.render_into(out);
            out.push(')');
        } else {
            child.render_into(out);
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

fn truthy(v: f64) -> bool {
    v != 0.0
}

/// Evaluate an expression for one arm. Deterministic and side-effect free.
pub fn evaluate(expr: &Expr, state: u8, features: &FeatureVector) -> Result<f64, RewardError> {
    Ok(match expr {
        Expr::Number(v) => *v,
        Expr::State => f64::from(state),
        Expr::Feature(k) => f64::from(features.get(*k)),
        Expr::Neg(inner) => -evaluate(inner, state, features)?,
        Expr::Not(inner) => {
            if truthy(evaluate(inner, state, features)?) {
                0.0
            } else {
                1.0
            }
        }
        Expr::If(inner) => {
            if truthy(evaluate(inner, state, features)?) {
                1.0
            } else {
                0.0
            }
        }
        Expr::Bin(op, lhs, rhs) => {
            let a = evaluate(lhs, state, features)?;
            match op {
                // Short-circuit, operand-returning: the right side is only
                // touched when the left side does not decide.
                BinOp::And => {
                    if truthy(a) {
                        evaluate(rhs, state, features)?
                    } else {
                        a
                    }
                }
                BinOp::Or => {
                    if truthy(a) {
                        a
                    } else {
                        evaluate(rhs, state, features)?
                    }
                }
                BinOp::Add => a + evaluate(rhs, state, features)?,
                BinOp::Sub => a - evaluate(rhs, state, features)?,
                BinOp::Mul => a * evaluate(rhs, state, features)?,
                BinOp::Div => {
                    let b = evaluate(rhs, state, features)?;
                    if b == 0.0 {
                        return Err(RewardError::DivisionByZero);
                    }
                    a / b
                }
            }
        }
    })
}

/// Exactly the feature indices appearing as `agent_feats[k]` in the tree.
pub fn used_features(expr: &Expr) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    collect_features(expr, &mut out);
    out
}

fn collect_features(expr: &Expr, out: &mut BTreeSet<usize>) {
    match expr {
        Expr::Number(_) | Expr::State => {}
        Expr::Feature(k) => {
            out.insert(*k);
        }
        Expr::Neg(inner) | Expr::Not(inner) | Expr::If(inner) => collect_features(inner, out),
        Expr::Bin(_, lhs, rhs) => {
            collect_features(lhs, out);
            collect_features(rhs, out);
        }
    }
}

/// Feature assignments (over the given indices, all other features zero,
/// state fixed to 1) whose reward strictly exceeds the minimum across all
/// 2^n assignments. Bit `j` of a returned mask corresponds to the `j`-th
/// index in ascending order.
///
/// This is the behavioral fingerprint of a reward's logic: base rewards are
/// constant-plus-bonus-indicator shaped, so the set of bonus-receiving
/// assignments captures which feature combinations the reward singles out.
pub fn bonus_set(expr: &Expr, indices: &BTreeSet<usize>) -> Result<BTreeSet<u64>, RewardError> {
    let sorted: Vec<usize> = indices.iter().copied().collect();
    if sorted.len() > MAX_BONUS_INDICES {
        return Err(RewardError::TooManyIndices(sorted.len()));
    }
    let n = sorted.len();
    let mut rewards = Vec::with_capacity(1 << n);
    for mask in 0u64..(1 << n) {
        let mut fv = FeatureVector::zeros();
        for (j, &k) in sorted.iter().enumerate() {
            if mask >> j & 1 == 1 {
                fv.set(k, 1);
            }
        }
        rewards.push((mask, evaluate(expr, 1, &fv)?));
    }
    let min = rewards
        .iter()
        .map(|&(_, r)| r)
        .fold(f64::INFINITY, f64::min);
    Ok(rewards
        .into_iter()
        .filter(|&(_, r)| r > min + 1e-9)
        .map(|(mask, _)| mask)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(ones: &[usize]) -> FeatureVector {
        FeatureVector::with_bits(ones)
    }

    const TASK0_BASE: &str = "state * 0.1 + if_(state) * 2.0 * feature[11]";

    #[test]
    fn task0_base_parses_and_uses_feature_11() {
        let expr = parse(TASK0_BASE).unwrap();
        assert_eq!(used_features(&expr), BTreeSet::from([11]));
    }

    #[test]
    fn bitwise_operators_are_rejected() {
        let err = parse("state & agent_feats[3]").unwrap_err();
        assert!(err.to_string().contains("bitwise"), "{err}");
        let err = parse("state | agent_feats[3]").unwrap_err();
        assert!(err.to_string().contains("bitwise"), "{err}");
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(matches!(
            parse("agent_feats[43]"),
            Err(RewardError::IndexOutOfRange(43))
        ));
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(parse("state + reward").is_err());
        assert!(parse("max(state, 1)").is_err());
        assert!(parse("return state").is_err());
    }

    #[test]
    fn task0_base_evaluates_by_substitution() {
        // state=1, f11=1: 1*0.1 + 1*2.0*1 = 2.1
        // state=1, f11=0: 1*0.1 + 1*2.0*0 = 0.1
        // state=0 zeroes both terms.
        let expr = parse(TASK0_BASE).unwrap();
        assert_eq!(evaluate(&expr, 1, &fv(&[11])).unwrap(), 2.1);
        assert_eq!(evaluate(&expr, 1, &fv(&[])).unwrap(), 0.1);
        assert_eq!(evaluate(&expr, 0, &fv(&[11])).unwrap(), 0.0);
    }

    #[test]
    fn conjunction_reward_evaluates_by_substitution() {
        // 2*1 + 2*(1 and (f9 and f13)): both set -> 4, f13 clear -> 2.
        let expr =
            parse("2 * state + 2 * (state and (agent_feats[9] and agent_feats[13]))").unwrap();
        assert_eq!(evaluate(&expr, 1, &fv(&[9, 13])).unwrap(), 4.0);
        assert_eq!(evaluate(&expr, 1, &fv(&[9])).unwrap(), 2.0);
    }

    #[test]
    fn short_circuit_returns_operands() {
        let e = parse("state and 5").unwrap();
        assert_eq!(evaluate(&e, 0, &fv(&[])).unwrap(), 0.0);
        assert_eq!(evaluate(&e, 1, &fv(&[])).unwrap(), 5.0);
        let e = parse("state or 5").unwrap();
        assert_eq!(evaluate(&e, 0, &fv(&[])).unwrap(), 5.0);
        assert_eq!(evaluate(&e, 1, &fv(&[])).unwrap(), 1.0);
        // Short-circuit skips the poisoned branch entirely.
        let e = parse("0 and 1 / 0").unwrap();
        assert_eq!(evaluate(&e, 1, &fv(&[])).unwrap(), 0.0);
    }

    #[test]
    fn boolean_value_semantics_on_binary_operands() {
        // On {0, 1} operands: and is product, or is max. All four cases.
        let and = parse("agent_feats[1] and agent_feats[2]").unwrap();
        let or = parse("agent_feats[1] or agent_feats[2]").unwrap();
        for (a, b) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
            let mut v = FeatureVector::zeros();
            v.set(1, a);
            v.set(2, b);
            assert_eq!(evaluate(&and, 1, &v).unwrap(), f64::from(a) * f64::from(b));
            assert_eq!(
                evaluate(&or, 1, &v).unwrap(),
                f64::from(a.max(b)),
                "a={a} b={b}"
            );
        }
    }

    #[test]
    fn division_by_zero_poisons_evaluation() {
        let e = parse("1 / agent_feats[3]").unwrap();
        assert!(matches!(
            evaluate(&e, 1, &fv(&[])),
            Err(RewardError::DivisionByZero)
        ));
        assert_eq!(evaluate(&e, 1, &fv(&[3])).unwrap(), 1.0);
    }

    #[test]
    fn not_and_unary_minus() {
        let e = parse("not state").unwrap();
        assert_eq!(evaluate(&e, 0, &fv(&[])).unwrap(), 1.0);
        assert_eq!(evaluate(&e, 1, &fv(&[])).unwrap(), 0.0);
        // `not` binds looser than arithmetic: not (0.5 + 0.5) = not 1 = 0.
        let e = parse("not 0.5 + 0.5").unwrap();
        assert_eq!(evaluate(&e, 0, &fv(&[])).unwrap(), 0.0);
        // Unary minus binds tighter than `*`.
        let e = parse("-2 * 3").unwrap();
        assert_eq!(evaluate(&e, 0, &fv(&[])).unwrap(), -6.0);
    }

    #[test]
    fn used_features_examples() {
        let reflect_sample =
            parse("3*(state) + 4*((state)*(agent_feats[9] or agent_feats[10] or agent_feats[11]))")
                .unwrap();
        assert_eq!(used_features(&reflect_sample), BTreeSet::from([9, 10, 11]));
        assert_eq!(
            used_features(&parse("state * 0.1").unwrap()),
            BTreeSet::new()
        );
    }

    #[test]
    fn feature_spelling_canonicalizes_to_agent_feats() {
        let expr = parse(TASK0_BASE).unwrap();
        let rendered = expr.render();
        assert!(rendered.contains("agent_feats[11]"), "{rendered}");
        assert!(!rendered.contains("feature["), "{rendered}");
        assert_eq!(parse(&rendered).unwrap(), expr);
    }

    #[test]
    fn bonus_set_single_feature() {
        // Over {11}: assignment f11=1 earns 2.1 vs minimum 0.1.
        let expr = parse(TASK0_BASE).unwrap();
        let set = bonus_set(&expr, &BTreeSet::from([11])).unwrap();
        assert_eq!(set, BTreeSet::from([0b1]));
    }

    #[test]
    fn bonus_set_of_constant_reward_is_empty() {
        let expr = parse("state").unwrap();
        let set = bonus_set(&expr, &BTreeSet::from([7, 11, 36])).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn bonus_set_conjunction_of_disjunction() {
        // f13 and (f9 or f10) over sorted indices [9, 10, 13]: exactly the
        // three assignments with bit 13 set and at least one of 9, 10.
        let expr = parse(
            "state * 0.1 + if_(state) * 2.0 * if_(feature[13] and (feature[9] or feature[10]))",
        )
        .unwrap();
        let set = bonus_set(&expr, &BTreeSet::from([9, 10, 13])).unwrap();
        assert_eq!(set, BTreeSet::from([0b101, 0b110, 0b111]));
    }

    #[test]
    fn bonus_set_index_bound() {
        let expr = parse("state").unwrap();
        let indices: BTreeSet<usize> = (0..17).collect();
        assert!(matches!(
            bonus_set(&expr, &indices),
            Err(RewardError::TooManyIndices(17))
        ));
    }

    #[test]
    fn parse_reports_positions() {
        let err = parse("state * ").unwrap_err();
        match err {
            RewardError::Parse { position, .. } => assert_eq!(position, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..=400).prop_map(|n| Expr::Number(f64::from(n) / 4.0)),
            Just(Expr::State),
            (0usize..NUM_FEATURES).prop_map(Expr::Feature),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            let op = prop_oneof![
                Just(BinOp::Or),
                Just(BinOp::And),
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div),
            ];
            prop_oneof![
                (op, inner.clone(), inner.clone()).prop_map(|(op, a, b)| Expr::Bin(
                    op,
                    Box::new(a),
                    Box::new(b)
                )),
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                inner.clone().prop_map(|e| Expr::Not(Box::new(e))),
                inner.prop_map(|e| Expr::If(Box::new(e))),
            ]
        })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(expr in arb_expr()) {
            let rendered = expr.render();
            let back = parse(&rendered).unwrap();
            prop_assert_eq!(back, expr);
        }

        #[test]
        fn used_features_matches_token_scan(expr in arb_expr()) {
            // Independent second pass: recover indices from the rendered
            // source text rather than the tree.
            let rendered = expr.render();
            let mut scanned = BTreeSet::new();
            let mut rest = rendered.as_str();
            while let Some(at) = rest.find("agent_feats[") {
                rest = &rest[at + "agent_feats[".len()..];
                let end = rest.find(']').unwrap();
                scanned.insert(rest[..end].parse::<usize>().unwrap());
                rest = &rest[end..];
            }
            prop_assert_eq!(scanned, used_features(&expr));
        }

        #[test]
        fn parser_never_panics(input in "[a-z0-9_+*/()\\[\\]&|. -]{0,40}") {
            let _ = parse(&input);
        }

        #[test]
        fn evaluation_is_pure(expr in arb_expr(), state in 0u8..2, ones in proptest::collection::btree_set(0usize..NUM_FEATURES, 0..6)) {
            let v = FeatureVector::with_bits(&ones.iter().copied().collect::<Vec<_>>());
            let a = evaluate(&expr, state, &v);
            let b = evaluate(&expr, state, &v);
            prop_assert_eq!(a, b);
        }
    }
}
