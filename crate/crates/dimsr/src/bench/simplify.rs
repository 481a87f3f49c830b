//! Bounded algebraic simplifier, reported-complexity measure, and the
//! symbolic-solution test used when scoring recovered expressions.
//!
//! The simplifier applies a fixed local rule set bottom-up until no rule
//! fires: constant folding, additive/multiplicative identities and
//! annihilators, cancellation of structurally identical operands
//! (`x − x`, `x / x`), power collapses, and `log`/`exp` inverses. Rules
//! preserve values at every input where the original expression is
//! finite; a few (like `exp(log(x)) → x`) extend the domain, which is
//! exactly the equivalence the evaluation protocol asks for. Rewrites
//! also ignore physical dimensions — the output is for reporting, not
//! for evolution.

use num_rational::Rational64;
use num_traits::{One, Zero};

use crate::dimension::Op;
use crate::fitness::evaluate_batch;
use crate::genome::{ExprTree, Node, SymbolTable};

/// Relative tolerance for the constancy tests in [`symbolic_solution`].
pub const SOLUTION_TOLERANCE: f64 = 1e-6;

/// Minimum fraction of probe rows on which both expressions must be
/// finite for the numeric constancy tests to be trusted.
const USABLE_FRACTION: f64 = 0.8;

/// Recursive working form; trees convert in and out around rewriting.
#[derive(Debug, Clone, PartialEq)]
enum SExpr {
    Const(f64),
    Var(usize),
    Un(Op, Box<SExpr>),
    Bin(Op, Box<SExpr>, Box<SExpr>),
}

fn from_nodes(nodes: &[Node], idx: &mut usize) -> SExpr {
    let node = nodes[*idx];
    *idx += 1;
    match node {
        Node::Const(v) => SExpr::Const(v),
        Node::Var(col) => SExpr::Var(col),
        Node::Op(op) => match op.arity() {
            1 => SExpr::Un(op, Box::new(from_nodes(nodes, idx))),
            _ => {
                let left = from_nodes(nodes, idx);
                let right = from_nodes(nodes, idx);
                SExpr::Bin(op, Box::new(left), Box::new(right))
            }
        },
    }
}

fn to_nodes(expr: &SExpr, out: &mut Vec<Node>) {
    match expr {
        SExpr::Const(v) => out.push(Node::Const(*v)),
        SExpr::Var(col) => out.push(Node::Var(*col)),
        SExpr::Un(op, a) => {
            out.push(Node::Op(*op));
            to_nodes(a, out);
        }
        SExpr::Bin(op, a, b) => {
            out.push(Node::Op(*op));
            to_nodes(a, out);
            to_nodes(b, out);
        }
    }
}

/// Scalar evaluation of one operator, matching the batch evaluator:
/// non-finite intermediate results squash to NaN, integer powers use
/// integer exponentiation.
fn apply_scalar(op: Op, a: f64, b: f64) -> f64 {
    let v = match op {
        Op::Add => a + b,
        Op::Sub => a - b,
        Op::Mul => a * b,
        Op::Div => a / b,
        Op::Sqrt => a.sqrt(),
        Op::Sin => a.sin(),
        Op::Cos => a.cos(),
        Op::Log => a.ln(),
        Op::Exp => a.exp(),
        Op::Pow(n) => {
            if n.is_integer() && i32::try_from(*n.numer()).is_ok() {
                a.powi(*n.numer() as i32)
            } else {
                a.powf(*n.numer() as f64 / *n.denom() as f64)
            }
        }
    };
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

fn simplify_expr(expr: SExpr) -> SExpr {
    match expr {
        SExpr::Const(_) | SExpr::Var(_) => expr,
        SExpr::Un(op, a) => {
            let a = simplify_expr(*a);
            match rewrite_unary(op, &a) {
                Some(rewritten) => simplify_expr(rewritten),
                None => SExpr::Un(op, Box::new(a)),
            }
        }
        SExpr::Bin(op, a, b) => {
            let a = simplify_expr(*a);
            let b = simplify_expr(*b);
            match rewrite_binary(op, &a, &b) {
                Some(rewritten) => simplify_expr(rewritten),
                None => SExpr::Bin(op, Box::new(a), Box::new(b)),
            }
        }
    }
}

/// Every rewrite strictly shrinks the expression (or converts a power
/// into `sqrt` without growing it), so the mutual recursion with
/// `simplify_expr` terminates.
fn rewrite_unary(op: Op, a: &SExpr) -> Option<SExpr> {
    if let SExpr::Const(v) = a {
        let folded = apply_scalar(op, *v, 0.0);
        if folded.is_finite() {
            return Some(SExpr::Const(folded));
        }
    }
    match op {
        Op::Pow(n) if n.is_zero() => Some(SExpr::Const(1.0)),
        Op::Pow(n) if n.is_one() => Some(a.clone()),
        Op::Pow(n) if n == Rational64::new(1, 2) => {
            Some(SExpr::Un(Op::Sqrt, Box::new(a.clone())))
        }
        // (x^b)^a = x^(a·b) is exact for integer exponents; other
        // combinations can change values on negative bases.
        Op::Pow(n) => match a {
            SExpr::Un(Op::Pow(m), inner) if n.is_integer() && m.is_integer() => {
                Some(SExpr::Un(Op::Pow(n * m), inner.clone()))
            }
            // (sqrt(x))^a = x^(a/2): both sides are NaN for x < 0
            // unless a/2 is an integer, where the collapse extends the
            // domain like the other inverse rules.
            SExpr::Un(Op::Sqrt, inner) => Some(SExpr::Un(Op::Pow(n / 2), inner.clone())),
            _ => None,
        },
        Op::Sqrt => match a {
            SExpr::Un(Op::Sqrt, inner) => Some(SExpr::Un(
                Op::Pow(Rational64::new(1, 4)),
                inner.clone(),
            )),
            _ => None,
        },
        Op::Log => match a {
            SExpr::Un(Op::Exp, inner) => Some((**inner).clone()),
            _ => None,
        },
        Op::Exp => match a {
            SExpr::Un(Op::Log, inner) => Some((**inner).clone()),
            _ => None,
        },
        _ => None,
    }
}

fn rewrite_binary(op: Op, a: &SExpr, b: &SExpr) -> Option<SExpr> {
    if let (SExpr::Const(x), SExpr::Const(y)) = (a, b) {
        let folded = apply_scalar(op, *x, *y);
        if folded.is_finite() {
            return Some(SExpr::Const(folded));
        }
    }
    let is_const = |e: &SExpr, v: f64| matches!(e, SExpr::Const(c) if *c == v);
    match op {
        Op::Add => {
            if is_const(a, 0.0) {
                Some(b.clone())
            } else if is_const(b, 0.0) {
                Some(a.clone())
            } else {
                None
            }
        }
        Op::Sub => {
            if a == b {
                Some(SExpr::Const(0.0))
            } else if is_const(b, 0.0) {
                Some(a.clone())
            } else {
                None
            }
        }
        Op::Mul => {
            if is_const(a, 0.0) || is_const(b, 0.0) {
                Some(SExpr::Const(0.0))
            } else if is_const(a, 1.0) {
                Some(b.clone())
            } else if is_const(b, 1.0) {
                Some(a.clone())
            } else {
                None
            }
        }
        Op::Div => {
            if a == b {
                Some(SExpr::Const(1.0))
            } else if is_const(b, 1.0) {
                Some(a.clone())
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Returns an equivalent tree with the rewrite rules applied to a fixed
/// point. Equivalence means equal values wherever the input expression
/// evaluates to a finite number.
pub fn simplify(tree: &ExprTree, table: &SymbolTable) -> ExprTree {
    let mut idx = 0;
    let expr = from_nodes(&tree.nodes, &mut idx);
    let simplified = simplify_expr(expr);
    let mut nodes = Vec::new();
    to_nodes(&simplified, &mut nodes);
    ExprTree::from_preorder(nodes, table).expect("rewrites preserve tree completeness")
}

/// Node count of the simplified expression — the reported size measure,
/// so `(x + 0) * 1` and `x` count the same.
pub fn complexity(tree: &ExprTree, table: &SymbolTable) -> usize {
    simplify(tree, table).len()
}

/// Population standard deviation is small relative to the mean (with an
/// absolute floor so an exactly-zero constant passes).
fn nearly_constant(values: &[f64]) -> bool {
    if values.len() < 2 {
        return false;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / values.len() as f64;
    var.sqrt() <= SOLUTION_TOLERANCE * (1.0 + mean.abs())
}

fn combine(op: Op, truth: &ExprTree, candidate: &ExprTree, table: &SymbolTable) -> ExprTree {
    let mut nodes = Vec::with_capacity(1 + truth.len() + candidate.len());
    nodes.push(Node::Op(op));
    nodes.extend_from_slice(&truth.nodes);
    nodes.extend_from_slice(&candidate.nodes);
    ExprTree::from_preorder(nodes, table).expect("two complete trees under a binary op")
}

/// Decides whether `candidate` matches `truth` up to an additive or a
/// non-zero multiplicative constant.
///
/// Tries symbolic reduction first: if `truth − candidate` or
/// `truth / candidate` simplifies to a single constant (non-zero for the
/// ratio), that settles it. Otherwise both expressions are evaluated on
/// the probe rows (callers should supply at least 64, drawn from the
/// training domain); rows where either side is non-finite are dropped,
/// and if fewer than 80% remain the answer is `false`. The difference
/// and then the ratio are tested for near-constancy across the surviving
/// rows.
pub fn symbolic_solution(
    truth: &ExprTree,
    candidate: &ExprTree,
    x_probe: &[Vec<f64>],
    table: &SymbolTable,
) -> bool {
    let diff = simplify(&combine(Op::Sub, truth, candidate, table), table);
    if let [Node::Const(_)] = diff.nodes[..] {
        return true;
    }
    let ratio = simplify(&combine(Op::Div, truth, candidate, table), table);
    if let [Node::Const(c)] = ratio.nodes[..] {
        if c != 0.0 {
            return true;
        }
    }

    let n_rows = x_probe.first().map_or(0, Vec::len);
    if n_rows == 0 {
        return false;
    }
    let (Ok(t_vals), Ok(c_vals)) = (
        evaluate_batch(truth, x_probe, &[]),
        evaluate_batch(candidate, x_probe, &[]),
    ) else {
        return false;
    };
    let needed = (USABLE_FRACTION * n_rows as f64).ceil() as usize;

    let diffs: Vec<f64> = t_vals
        .iter()
        .zip(&c_vals)
        .filter(|(t, c)| t.is_finite() && c.is_finite())
        .map(|(t, c)| t - c)
        .collect();
    if diffs.len() < needed {
        return false;
    }
    if nearly_constant(&diffs) {
        return true;
    }

    let ratios: Vec<f64> = t_vals
        .iter()
        .zip(&c_vals)
        .map(|(t, c)| t / c)
        .filter(|r| r.is_finite())
        .collect();
    if ratios.len() >= needed && nearly_constant(&ratios) {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        if mean.abs() > SOLUTION_TOLERANCE {
            return true;
        }
    }
    false
}
