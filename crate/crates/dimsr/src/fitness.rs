//! Numeric evaluation of expression trees over datasets, the regularized
//! loss, and gradient-free coefficient tuning.
//!
//! Evaluation is column-oriented: every tree node produces a full vector
//! of per-row values. Domain violations — log of a non-positive number,
//! division by zero, overflow — surface as NaN at the affected rows and
//! turn the loss into +∞; there are no silently "protected" operators.

use thiserror::Error;

use crate::dimension::{l2_norm_diff, DimResult, DimVec, Op};
use crate::genome::{ExprTree, Node, SymbolTable};

/// A regression task: feature columns, targets, and the dimensional
/// signature the engine must honor.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Column-major feature data: `x[c][r]` is feature `c` at row `r`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub feature_dims: Vec<DimVec>,
    pub target_dim: DimVec,
    pub table: SymbolTable,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitnessError {
    #[error("{n_cols} feature columns but {n_dims} feature dimensions")]
    FeatureCountMismatch { n_cols: usize, n_dims: usize },
    #[error("feature column {column} has {len} rows, expected {expected}")]
    RowCountMismatch {
        column: usize,
        len: usize,
        expected: usize,
    },
    #[error("tree reads feature column {column} but the data has {n_features}")]
    UnknownFeature { column: usize, n_features: usize },
    #[error("{given} coefficients supplied for a tree with {expected} slots")]
    CoefficientCount { expected: usize, given: usize },
}

impl Problem {
    /// Assembles a problem, building the symbol table from the operator
    /// set, the features, and (optionally) the ephemeral-constant
    /// terminal.
    pub fn new(
        feature_names: Vec<String>,
        feature_dims: Vec<DimVec>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        target_dim: DimVec,
        ops: &[Op],
        with_constant: bool,
    ) -> Result<Problem, FitnessError> {
        if x.len() != feature_dims.len() || x.len() != feature_names.len() {
            return Err(FitnessError::FeatureCountMismatch {
                n_cols: x.len(),
                n_dims: feature_dims.len(),
            });
        }
        for (column, col) in x.iter().enumerate() {
            if col.len() != y.len() {
                return Err(FitnessError::RowCountMismatch {
                    column,
                    len: col.len(),
                    expected: y.len(),
                });
            }
        }
        let vars: Vec<(String, DimVec)> = feature_names
            .iter()
            .cloned()
            .zip(feature_dims.iter().copied())
            .collect();
        let table = SymbolTable::new(ops, &vars, with_constant);
        Ok(Problem {
            x,
            y,
            feature_names,
            feature_dims,
            target_dim,
            table,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.len()
    }

    /// A copy of this problem restricted to the given rows (train/test
    /// splits). Row indices may repeat or reorder.
    pub fn subset(&self, rows: &[usize]) -> Problem {
        Problem {
            x: self
                .x
                .iter()
                .map(|col| rows.iter().map(|r| col[*r]).collect())
                .collect(),
            y: rows.iter().map(|r| self.y[*r]).collect(),
            feature_names: self.feature_names.clone(),
            feature_dims: self.feature_dims.clone(),
            target_dim: self.target_dim,
            table: self.table.clone(),
        }
    }
}

/// Pre-order indices of a tree's coefficient slots.
pub fn const_slots(tree: &ExprTree) -> Vec<usize> {
    tree.nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| matches!(n, Node::Const(_)).then_some(i))
        .collect()
}

/// Current coefficient values in slot order.
pub fn tree_coefficients(tree: &ExprTree) -> Vec<f64> {
    tree.nodes
        .iter()
        .filter_map(|n| match n {
            Node::Const(v) => Some(*v),
            _ => None,
        })
        .collect()
}

/// Writes coefficients back into the tree's constant nodes, slot order.
pub fn set_tree_coefficients(tree: &mut ExprTree, coefficients: &[f64]) {
    let mut it = coefficients.iter();
    for node in tree.nodes.iter_mut() {
        if let Node::Const(v) = node {
            *v = *it.next().expect("coefficient per slot");
        }
    }
}

fn squash(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Evaluates a tree over every row of `x` at once.
///
/// `coefficients` overrides the tree's constant slots in pre-order slot
/// order; pass an empty slice to use the values stored in the tree.
/// Domain violations yield NaN at the affected rows only.
pub fn evaluate_batch(
    tree: &ExprTree,
    x: &[Vec<f64>],
    coefficients: &[f64],
) -> Result<Vec<f64>, FitnessError> {
    let n_rows = x.first().map_or(0, Vec::len);
    let n_slots = tree.nodes.iter().filter(|n| matches!(n, Node::Const(_))).count();
    if !coefficients.is_empty() && coefficients.len() != n_slots {
        return Err(FitnessError::CoefficientCount {
            expected: n_slots,
            given: coefficients.len(),
        });
    }

    // Reverse pre-order visits children before parents; a value stack
    // then receives the left operand as the top element. Freed buffers
    // are recycled within the call.
    let mut stack: Vec<Vec<f64>> = Vec::new();
    let mut free: Vec<Vec<f64>> = Vec::new();
    let mut slot = n_slots;
    let alloc = |free: &mut Vec<Vec<f64>>| -> Vec<f64> {
        free.pop().unwrap_or_else(|| vec![0.0; n_rows])
    };
    for node in tree.nodes.iter().rev() {
        match node {
            Node::Var(col) => {
                let column = x.get(*col).ok_or(FitnessError::UnknownFeature {
                    column: *col,
                    n_features: x.len(),
                })?;
                let mut buf = alloc(&mut free);
                buf.copy_from_slice(column);
                stack.push(buf);
            }
            Node::Const(v) => {
                let value = if coefficients.is_empty() {
                    *v
                } else {
                    slot -= 1;
                    coefficients[slot]
                };
                let mut buf = alloc(&mut free);
                buf.fill(value);
                stack.push(buf);
            }
            Node::Op(op) => match op.arity() {
                1 => {
                    let a = stack.last_mut().expect("complete tree");
                    match op {
                        Op::Sqrt => a.iter_mut().for_each(|v| *v = squash(v.sqrt())),
                        Op::Sin => a.iter_mut().for_each(|v| *v = squash(v.sin())),
                        Op::Cos => a.iter_mut().for_each(|v| *v = squash(v.cos())),
                        Op::Log => a.iter_mut().for_each(|v| *v = squash(v.ln())),
                        Op::Exp => a.iter_mut().for_each(|v| *v = squash(v.exp())),
                        Op::Pow(n) => {
                            if n.is_integer() && i32::try_from(*n.numer()).is_ok() {
                                let e = *n.numer() as i32;
                                a.iter_mut().for_each(|v| *v = squash(v.powi(e)));
                            } else {
                                let e = *n.numer() as f64 / *n.denom() as f64;
                                a.iter_mut().for_each(|v| *v = squash(v.powf(e)));
                            }
                        }
                        _ => unreachable!("binary ops handled below"),
                    }
                }
                _ => {
                    let left = stack.pop().expect("complete tree");
                    let b = stack.last_mut().expect("complete tree");
                    match op {
                        Op::Add => {
                            for (r, l) in b.iter_mut().zip(&left) {
                                *r = squash(l + *r);
                            }
                        }
                        Op::Sub => {
                            for (r, l) in b.iter_mut().zip(&left) {
                                *r = squash(l - *r);
                            }
                        }
                        Op::Mul => {
                            for (r, l) in b.iter_mut().zip(&left) {
                                *r = squash(l * *r);
                            }
                        }
                        Op::Div => {
                            for (r, l) in b.iter_mut().zip(&left) {
                                *r = squash(l / *r);
                            }
                        }
                        _ => unreachable!("unary ops handled above"),
                    }
                    free.push(left);
                }
            },
        }
    }
    let out = stack.pop().expect("complete tree");
    debug_assert!(stack.is_empty());
    Ok(out)
}

/// Mean squared error; any NaN prediction (or a non-finite mean) gives +∞.
pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), y.len());
    if pred.is_empty() {
        return f64::INFINITY;
    }
    let mut acc = 0.0f64;
    for (p, t) in pred.iter().zip(y) {
        let d = p - t;
        acc += d * d;
    }
    let m = acc / pred.len() as f64;
    if m.is_finite() {
        m
    } else {
        f64::INFINITY
    }
}

/// Dimensional penalty of a tree against the target dimension: 0 when the
/// root dimension matches exactly, the Euclidean exponent distance when it
/// is defined but different, and +∞ when any node is dimensionally
/// undefined.
pub fn dimension_penalty(tree: &ExprTree, target: &DimVec) -> f64 {
    if !tree.fully_defined() {
        return f64::INFINITY;
    }
    match tree.root_dim() {
        DimResult::Defined(d) if d == target => 0.0,
        DimResult::Defined(d) => l2_norm_diff(d, target),
        DimResult::Undefined => f64::INFINITY,
    }
}

/// Regularized loss: `MSE + λ · dimension_penalty`.
///
/// With λ = 0 this is exactly the MSE, bit for bit — the penalty term is
/// skipped entirely, so an infinite penalty cannot leak through as 0·∞.
pub fn loss(problem: &Problem, tree: &ExprTree, coefficients: &[f64], lambda: f64) -> f64 {
    let pred = match evaluate_batch(tree, &problem.x, coefficients) {
        Ok(p) => p,
        Err(_) => {
            debug_assert!(false, "tree/problem structure mismatch");
            return f64::INFINITY;
        }
    };
    let base = mse(&pred, &problem.y);
    if lambda == 0.0 {
        return base;
    }
    let total = base + lambda * dimension_penalty(tree, &problem.target_dim);
    if total.is_nan() {
        f64::INFINITY
    } else {
        total
    }
}

/// Hard cap on objective evaluations for a run. Consumption is
/// all-or-nothing so the cap is never overshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalBudget {
    limit: u64,
    used: u64,
}

impl EvalBudget {
    pub fn new(limit: u64) -> EvalBudget {
        EvalBudget { limit, used: 0 }
    }

    pub fn unlimited() -> EvalBudget {
        EvalBudget::new(u64::MAX)
    }

    /// Consumes `n` evaluations if they fit; returns false (consuming
    /// nothing) otherwise.
    pub fn try_consume(&mut self, n: u64) -> bool {
        if self.used.saturating_add(n) > self.limit {
            false
        } else {
            self.used += n;
            true
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used
    }

    pub fn is_exhausted(&self) -> bool {
        self.used >= self.limit
    }
}

/// Knobs for the conjugate-gradient coefficient optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct CgOptions {
    /// Outer iteration cap.
    pub max_iters: usize,
    /// Stop when the gradient's max component falls below this.
    pub grad_tolerance: f64,
    /// Stop when an iteration improves the objective by less than this.
    pub loss_tolerance: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            max_iters: 50,
            grad_tolerance: 1e-8,
            loss_tolerance: 1e-12,
        }
    }
}

/// Tunes a tree's coefficients by nonlinear conjugate gradient
/// (Polak–Ribière with automatic restarts) on the MSE.
///
/// Gradients come from central finite differences with per-component step
/// `1e-6 · max(1, |θ_i|)`; the line search is backtracking with an Armijo
/// condition. Every objective call is charged to `budget`, and the search
/// stops early when the budget runs dry. The returned coefficients are
/// never worse than the input; with zero slots the input is returned with
/// its current MSE.
pub fn optimize_coefficients(
    problem: &Problem,
    tree: &ExprTree,
    coefficients: &[f64],
    opts: &CgOptions,
    budget: &mut EvalBudget,
) -> (Vec<f64>, f64) {
    let mut eval = |theta: &[f64], budget: &mut EvalBudget| -> Option<f64> {
        if !budget.try_consume(1) {
            return None;
        }
        let pred = evaluate_batch(tree, &problem.x, theta).expect("consistent tree");
        Some(mse(&pred, &problem.y))
    };

    let theta0 = coefficients.to_vec();
    let f0 = match eval(&theta0, budget) {
        Some(f) => f,
        None => return (theta0, f64::INFINITY),
    };
    let n = theta0.len();
    if n == 0 {
        return (theta0, f0);
    }

    let mut best = (theta0.clone(), f0);
    let mut theta = theta0;
    let mut f_cur = f0;
    // A non-finite start gives the gradient nothing to work with.
    if !f_cur.is_finite() {
        return best;
    }

    let grad = |theta: &[f64], budget: &mut EvalBudget, eval: &mut dyn FnMut(&[f64], &mut EvalBudget) -> Option<f64>| -> Option<Vec<f64>> {
        let mut g = vec![0.0; theta.len()];
        let mut probe = theta.to_vec();
        for i in 0..theta.len() {
            let h = 1e-6 * theta[i].abs().max(1.0);
            probe[i] = theta[i] + h;
            let fp = eval(&probe, budget)?;
            probe[i] = theta[i] - h;
            let fm = eval(&probe, budget)?;
            probe[i] = theta[i];
            g[i] = (fp - fm) / (2.0 * h);
            if !g[i].is_finite() {
                g[i] = 0.0;
            }
        }
        Some(g)
    };

    let mut g = match grad(&theta, budget, &mut eval) {
        Some(g) => g,
        None => return best,
    };
    let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();

    'outer: for iter in 0..opts.max_iters {
        let g_max = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if g_max < opts.grad_tolerance {
            break;
        }
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // Not a descent direction; restart along steepest descent.
            dir = g.iter().map(|v| -v).collect();
        }
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            break; // zero gradient after restart
        }

        // Backtracking line search with the Armijo sufficient-decrease
        // condition f(θ + αd) ≤ f(θ) + 10⁻⁴ α (g·d).
        let mut alpha = 1.0f64;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + alpha * d).collect();
            let fc = match eval(&cand, budget) {
                Some(f) => f,
                None => break 'outer,
            };
            if fc < best.1 {
                best = (cand.clone(), fc);
            }
            if fc <= f_cur + 1e-4 * alpha * slope {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, f_next)) = accepted else {
            break; // no acceptable step along this direction
        };
        let improvement = f_cur - f_next;
        theta = next;
        f_cur = f_next;
        if improvement < opts.loss_tolerance {
            break;
        }

        let g_next = match grad(&theta, budget, &mut eval) {
            Some(g) => g,
            None => break,
        };
        // Polak–Ribière β, clamped at zero (automatic restart), with a
        // periodic full restart every n iterations.
        let denom: f64 = g.iter().map(|v| v * v).sum();
        let beta = if denom == 0.0 || (iter + 1) % n.max(2) == 0 {
            0.0
        } else {
            let num: f64 = g_next.iter().zip(&g).map(|(gn, go)| gn * (gn - go)).sum();
            (num / denom).max(0.0)
        };
        dir = g_next
            .iter()
            .zip(&dir)
            .map(|(gn, d)| -gn + beta * d)
            .collect();
        g = g_next;
    }

    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimension::parse_unit;
    use crate::genome::{decode, random_gene};
    use num_rational::Rational64;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn sq() -> Op {
        Op::Pow(Rational64::from_integer(2))
    }

    fn plain_problem(x: Vec<Vec<f64>>, y: Vec<f64>) -> Problem {
        let n = x.len();
        Problem::new(
            (0..n).map(|i| format!("x{i}")).collect(),
            vec![DimVec::ZERO; n],
            x,
            y,
            DimVec::ZERO,
            &[Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Sqrt, Op::Log, sq()],
            true,
        )
        .unwrap()
    }

    fn tree_of(nodes: Vec<Node>, problem: &Problem) -> ExprTree {
        ExprTree::from_preorder(nodes, &problem.table).unwrap()
    }

    #[test]
    fn identity_tree_returns_column() {
        let p = plain_problem(vec![vec![1.0, 2.0, 3.0]], vec![0.0; 3]);
        let t = tree_of(vec![Node::Var(0)], &p);
        assert_eq!(evaluate_batch(&t, &p.x, &[]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn division_by_zero_yields_nan_at_that_row() {
        let p = plain_problem(
            vec![vec![1.0, 4.0], vec![2.0, 0.0]],
            vec![0.0; 2],
        );
        let t = tree_of(
            vec![Node::Op(Op::Div), Node::Var(0), Node::Var(1)],
            &p,
        );
        let out = evaluate_batch(&t, &p.x, &[]).unwrap();
        assert_eq!(out[0], 0.5);
        assert!(out[1].is_nan());
    }

    #[test]
    fn log_of_nonpositive_yields_nan() {
        let p = plain_problem(vec![vec![std::f64::consts::E, 0.0, -1.0]], vec![0.0; 3]);
        let t = tree_of(vec![Node::Op(Op::Log), Node::Var(0)], &p);
        let out = evaluate_batch(&t, &p.x, &[]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!(out[1].is_nan());
        assert!(out[2].is_nan());
    }

    #[test]
    fn product_of_singletons() {
        let p = plain_problem(vec![vec![2.0], vec![3.0]], vec![0.0]);
        let t = tree_of(vec![Node::Op(Op::Mul), Node::Var(0), Node::Var(1)], &p);
        assert_eq!(evaluate_batch(&t, &p.x, &[]).unwrap(), vec![6.0]);
    }

    #[test]
    fn coefficient_override_respects_slot_order() {
        let p = plain_problem(vec![vec![1.0, 1.0]], vec![0.0; 2]);
        // c0 * x + c1, slots in pre-order: c0 then c1.
        let t = tree_of(
            vec![
                Node::Op(Op::Add),
                Node::Op(Op::Mul),
                Node::Const(0.0),
                Node::Var(0),
                Node::Const(0.0),
            ],
            &p,
        );
        let out = evaluate_batch(&t, &p.x, &[2.0, 5.0]).unwrap();
        assert_eq!(out, vec![7.0, 7.0]);
        assert_eq!(
            evaluate_batch(&t, &p.x, &[1.0]).unwrap_err(),
            FitnessError::CoefficientCount {
                expected: 2,
                given: 1
            }
        );
    }

    #[test]
    fn unknown_feature_is_an_error() {
        let p = plain_problem(vec![vec![1.0]], vec![0.0]);
        let t = ExprTree {
            nodes: vec![Node::Var(5)],
            sizes: vec![1],
            dims: vec![DimResult::Defined(DimVec::ZERO)],
        };
        assert_eq!(
            evaluate_batch(&t, &p.x, &[]).unwrap_err(),
            FitnessError::UnknownFeature {
                column: 5,
                n_features: 1
            }
        );
    }

    #[test]
    fn vectorized_matches_scalar_oracle() {
        // Independent scalar evaluator over the same trees.
        fn scalar_eval(tree: &ExprTree, i: usize, x: &[Vec<f64>], row: usize) -> (f64, usize) {
            match tree.nodes[i] {
                Node::Const(v) => (v, i + 1),
                Node::Var(c) => (x[c][row], i + 1),
                Node::Op(op) => {
                    let (a, next) = scalar_eval(tree, i + 1, x, row);
                    let (v, end) = match op {
                        Op::Add | Op::Sub | Op::Mul | Op::Div => {
                            let (b, end) = scalar_eval(tree, next, x, row);
                            let v = match op {
                                Op::Add => a + b,
                                Op::Sub => a - b,
                                Op::Mul => a * b,
                                _ => a / b,
                            };
                            (v, end)
                        }
                        Op::Sqrt => (a.sqrt(), next),
                        Op::Sin => (a.sin(), next),
                        Op::Cos => (a.cos(), next),
                        Op::Log => (a.ln(), next),
                        Op::Exp => (a.exp(), next),
                        Op::Pow(n) => (a.powi(*n.numer() as i32), next),
                    };
                    (if v.is_finite() { v } else { f64::NAN }, end)
                }
            }
        }

        let mut rng = StdRng::seed_from_u64(21);
        let p = plain_problem(
            vec![
                (0..8).map(|i| (i as f64) * 0.37 - 1.2).collect(),
                (0..8).map(|i| (i as f64) * -0.91 + 2.4).collect(),
            ],
            vec![0.0; 8],
        );
        for _ in 0..1_000 {
            let gene = random_gene(&p.table, 5, &mut rng).unwrap();
            let (tree, _) = decode(&gene, &p.table);
            let batch = evaluate_batch(&tree, &p.x, &[]).unwrap();
            for row in 0..8 {
                let (expect, _) = scalar_eval(&tree, 0, &p.x, row);
                if expect.is_nan() {
                    assert!(batch[row].is_nan());
                } else {
                    assert_eq!(batch[row], expect, "row {row}");
                }
            }
        }
    }

    #[test]
    fn penalty_three_cases() {
        let p = Problem::new(
            vec!["q".into(), "E".into()],
            vec![parse_unit("C").unwrap(), parse_unit("V/m").unwrap()],
            vec![vec![1.0], vec![1.0]],
            vec![1.0],
            parse_unit("N").unwrap(),
            &[Op::Add, Op::Mul],
            true,
        )
        .unwrap();
        // q*E is exactly a force.
        let good = tree_of(
            vec![Node::Op(Op::Mul), Node::Var(0), Node::Var(1)],
            &p,
        );
        assert_eq!(dimension_penalty(&good, &p.target_dim), 0.0);
        // (1+q)*E is undefined at the addition.
        let bad = tree_of(
            vec![
                Node::Op(Op::Mul),
                Node::Op(Op::Add),
                Node::Const(1.0),
                Node::Var(0),
                Node::Var(1),
            ],
            &p,
        );
        assert_eq!(dimension_penalty(&bad, &p.target_dim), f64::INFINITY);
        // Defined but wrong: bare q against a force target.
        let off = tree_of(vec![Node::Var(0)], &p);
        let expect = l2_norm_diff(&p.feature_dims[0], &p.target_dim);
        assert_eq!(dimension_penalty(&off, &p.target_dim), expect);
    }

    #[test]
    fn penalty_single_component_case() {
        let p = Problem::new(
            vec!["a".into()],
            vec![DimVec::from_ints([2, 0, 0, 0, 0, 0, 0])],
            vec![vec![1.0]],
            vec![1.0],
            DimVec::ZERO,
            &[Op::Add],
            false,
        )
        .unwrap();
        let t = tree_of(vec![Node::Var(0)], &p);
        assert_eq!(dimension_penalty(&t, &p.target_dim), 2.0);
    }

    #[test]
    fn loss_examples() {
        let p = plain_problem(vec![vec![1.0, 2.0]], vec![1.0, 2.0]);
        let t = tree_of(vec![Node::Var(0)], &p);
        // Perfect and homogeneous: zero at any λ.
        assert_eq!(loss(&p, &t, &[], 0.0), 0.0);
        assert_eq!(loss(&p, &t, &[], 10.0), 0.0);

        // Perfect prediction but a dimension mismatch of exactly 2.
        let p2 = Problem::new(
            vec!["a".into()],
            vec![DimVec::from_ints([2, 0, 0, 0, 0, 0, 0])],
            vec![vec![1.0, 2.0]],
            vec![1.0, 2.0],
            DimVec::ZERO,
            &[Op::Add],
            false,
        )
        .unwrap();
        let t2 = ExprTree::from_preorder(vec![Node::Var(0)], &p2.table).unwrap();
        assert_eq!(loss(&p2, &t2, &[], 10.0), 20.0);
        // λ=0 mode never sees the penalty.
        assert_eq!(loss(&p2, &t2, &[], 0.0), 0.0);

        // Undefined dimension with λ>0 is infinitely bad.
        let p3 = Problem::new(
            vec!["t".into()],
            vec![parse_unit("s").unwrap()],
            vec![vec![1.0]],
            vec![2.0],
            parse_unit("s").unwrap(),
            &[Op::Add],
            true,
        )
        .unwrap();
        let t3 = ExprTree::from_preorder(
            vec![Node::Op(Op::Add), Node::Const(1.0), Node::Var(0)],
            &p3.table,
        )
        .unwrap();
        assert_eq!(loss(&p3, &t3, &[], 1.0), f64::INFINITY);
        // ... but λ=0 only cares about numbers.
        assert_eq!(loss(&p3, &t3, &[], 0.0), mse(&[2.0], &[2.0]));
    }

    #[test]
    fn loss_monotone_in_lambda() {
        let p = Problem::new(
            vec!["a".into()],
            vec![DimVec::from_ints([1, 0, 0, 0, 0, 0, 0])],
            vec![vec![1.0, 2.0, 3.0]],
            vec![1.1, 1.9, 3.2],
            DimVec::ZERO,
            &[Op::Add],
            false,
        )
        .unwrap();
        let t = ExprTree::from_preorder(vec![Node::Var(0)], &p.table).unwrap();
        let mut prev = loss(&p, &t, &[], 0.0);
        for lambda in [0.1, 0.5, 1.0, 5.0, 50.0] {
            let cur = loss(&p, &t, &[], lambda);
            assert!(cur >= prev, "λ={lambda}: {cur} < {prev}");
            prev = cur;
        }
    }

    #[test]
    fn nan_prediction_gives_infinite_loss() {
        let p = plain_problem(vec![vec![1.0, 0.0]], vec![1.0, 1.0]);
        let t = tree_of(vec![Node::Op(Op::Log), Node::Var(0)], &p);
        assert_eq!(loss(&p, &t, &[], 0.0), f64::INFINITY);
    }

    #[test]
    fn cg_recovers_linear_scale() {
        // y = 3 x over a small grid; the slope slot must land on 3.
        let xs: Vec<f64> = (0..32).map(|i| i as f64 * 0.25 - 4.0).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 3.0 * v).collect();
        let p = plain_problem(vec![xs], ys);
        let t = tree_of(
            vec![Node::Op(Op::Mul), Node::Const(0.5), Node::Var(0)],
            &p,
        );
        let mut budget = EvalBudget::unlimited();
        let (theta, best) = optimize_coefficients(
            &p,
            &t,
            &tree_coefficients(&t),
            &CgOptions::default(),
            &mut budget,
        );
        assert!((theta[0] - 3.0).abs() < 1e-4, "theta {theta:?}");
        assert!(best < 1e-8, "loss {best}");
        assert!(budget.used() > 0);
    }

    #[test]
    fn cg_recovers_offset() {
        let xs: Vec<f64> = (0..32).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|v| v + 5.0).collect();
        let p = plain_problem(vec![xs], ys);
        let t = tree_of(
            vec![Node::Op(Op::Add), Node::Const(-1.0), Node::Var(0)],
            &p,
        );
        let mut budget = EvalBudget::unlimited();
        let (theta, best) = optimize_coefficients(
            &p,
            &t,
            &tree_coefficients(&t),
            &CgOptions::default(),
            &mut budget,
        );
        assert!((theta[0] - 5.0).abs() < 1e-4, "theta {theta:?}");
        assert!(best < 1e-8);
    }

    #[test]
    fn cg_without_slots_is_identity() {
        let p = plain_problem(vec![vec![1.0, 2.0]], vec![1.0, 2.0]);
        let t = tree_of(vec![Node::Var(0)], &p);
        let mut budget = EvalBudget::unlimited();
        let (theta, best) = optimize_coefficients(&p, &t, &[], &CgOptions::default(), &mut budget);
        assert!(theta.is_empty());
        assert_eq!(best, 0.0);
        assert_eq!(budget.used(), 1);
    }

    #[test]
    fn cg_never_returns_worse_than_input() {
        let xs: Vec<f64> = (0..16).map(|i| i as f64 * 0.3 + 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|v| v.sqrt() * 2.0).collect();
        let p = plain_problem(vec![xs], ys);
        let t = tree_of(
            vec![
                Node::Op(Op::Mul),
                Node::Const(1.7),
                Node::Op(Op::Sqrt),
                Node::Var(0),
            ],
            &p,
        );
        let start = tree_coefficients(&t);
        let f_start = {
            let pred = evaluate_batch(&t, &p.x, &start).unwrap();
            mse(&pred, &p.y)
        };
        let mut budget = EvalBudget::unlimited();
        let (_, best) =
            optimize_coefficients(&p, &t, &start, &CgOptions::default(), &mut budget);
        assert!(best <= f_start);
    }

    #[test]
    fn cg_respects_budget() {
        let xs: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 3.0 * v).collect();
        let p = plain_problem(vec![xs], ys);
        let t = tree_of(
            vec![Node::Op(Op::Mul), Node::Const(0.5), Node::Var(0)],
            &p,
        );
        for limit in [0u64, 1, 2, 5, 17] {
            let mut budget = EvalBudget::new(limit);
            let _ = optimize_coefficients(
                &p,
                &t,
                &tree_coefficients(&t),
                &CgOptions::default(),
                &mut budget,
            );
            assert!(budget.used() <= limit, "limit {limit}: used {}", budget.used());
        }
    }

    #[test]
    fn finite_difference_gradient_matches_analytic() {
        // f(c0, c1) = mean((c0 x + c1 x^2 - y)^2); analytic gradient
        // components are 2·mean(r·x) and 2·mean(r·x²).
        let xs: Vec<f64> = (1..=20).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 1.5 * v - 0.7 * v * v).collect();
        let p = plain_problem(vec![xs.clone()], ys.clone());
        let t = tree_of(
            vec![
                Node::Op(Op::Add),
                Node::Op(Op::Mul),
                Node::Const(0.0),
                Node::Var(0),
                Node::Op(Op::Mul),
                Node::Const(0.0),
                Node::Op(sq()),
                Node::Var(0),
            ],
            &p,
        );
        let theta = [0.9, -0.2];
        let n = xs.len() as f64;
        let resid: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| theta[0] * x + theta[1] * x * x - y)
            .collect();
        let analytic = [
            2.0 / n * resid.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>(),
            2.0 / n * resid.iter().zip(&xs).map(|(r, x)| r * x * x).sum::<f64>(),
        ];
        // Reproduce the optimizer's finite-difference scheme directly.
        let f = |th: &[f64]| {
            let pred = evaluate_batch(&t, &p.x, th).unwrap();
            mse(&pred, &p.y)
        };
        for i in 0..2 {
            let h = 1e-6 * theta[i].abs().max(1.0);
            let mut up = theta.to_vec();
            up[i] += h;
            let mut dn = theta.to_vec();
            dn[i] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            let rel = (fd - analytic[i]).abs() / analytic[i].abs().max(1e-12);
            assert!(rel < 1e-4, "component {i}: fd {fd} vs analytic {}", analytic[i]);
        }
    }

    #[test]
    fn problem_constructor_validates_shapes() {
        assert!(matches!(
            Problem::new(
                vec!["a".into()],
                vec![DimVec::ZERO, DimVec::ZERO],
                vec![vec![1.0]],
                vec![1.0],
                DimVec::ZERO,
                &[Op::Add],
                false,
            ),
            Err(FitnessError::FeatureCountMismatch { .. })
        ));
        assert!(matches!(
            Problem::new(
                vec!["a".into()],
                vec![DimVec::ZERO],
                vec![vec![1.0, 2.0]],
                vec![1.0],
                DimVec::ZERO,
                &[Op::Add],
                false,
            ),
            Err(FitnessError::RowCountMismatch { .. })
        ));
    }

    #[test]
    fn subset_picks_rows() {
        let p = plain_problem(vec![vec![10.0, 20.0, 30.0]], vec![1.0, 2.0, 3.0]);
        let s = p.subset(&[2, 0]);
        assert_eq!(s.x[0], vec![30.0, 10.0]);
        assert_eq!(s.y, vec![3.0, 1.0]);
    }

    #[test]
    fn coefficient_round_trip_through_tree() {
        let p = plain_problem(vec![vec![1.0]], vec![1.0]);
        let mut t = tree_of(
            vec![
                Node::Op(Op::Add),
                Node::Const(1.0),
                Node::Op(Op::Mul),
                Node::Const(2.0),
                Node::Var(0),
            ],
            &p,
        );
        assert_eq!(const_slots(&t), vec![1, 3]);
        assert_eq!(tree_coefficients(&t), vec![1.0, 2.0]);
        set_tree_coefficients(&mut t, &[7.0, -3.0]);
        assert_eq!(tree_coefficients(&t), vec![7.0, -3.0]);
    }

    /// A tiny sanity check that `fresh` uniform draws land inside the
    /// documented constant-initialization range.
    #[test]
    fn const_init_range_is_respected() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..1_000 {
            let v = crate::genome::fresh_const(&mut rng);
            assert!((-2.0..2.0).contains(&v));
        }
    }
}
