//! Physical-dimension vectors over the seven SI base units and the
//! forward/backward transformation rules that define dimensional homogeneity.
//!
//! A quantity's dimension is a vector of seven signed rational exponents in
//! the fixed order mass, length, time, temperature, current, amount,
//! luminous intensity. Exponents are rationals rather than integers because
//! square roots halve them; rational arithmetic keeps equality checks exact.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

// Re-exported because exponents appear throughout the public API
// ([`DimVec`] components, [`Op::Pow`]).
pub use num_rational::Rational64;

/// Number of SI base dimensions.
pub const BASE_DIMS: usize = 7;

/// Names of the base dimensions, index-aligned with [`DimVec`] components.
pub const BASE_NAMES: [&str; BASE_DIMS] = ["kg", "m", "s", "K", "A", "mol", "cd"];

const ZERO_RAT: Rational64 = Rational64::new_raw(0, 1);

/// Exponent vector over the SI base units.
///
/// Component order: mass (kg), length (m), time (s), temperature (K),
/// current (A), amount (mol), luminous intensity (cd). The all-zero vector
/// denotes a dimensionless quantity. Equality is exact component-wise
/// equality of rationals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DimVec(pub [Rational64; BASE_DIMS]);

impl DimVec {
    /// The dimensionless (all-zero) vector.
    pub const ZERO: DimVec = DimVec([ZERO_RAT; BASE_DIMS]);

    /// Builds a vector from integer exponents in base-dimension order.
    pub fn from_ints(exps: [i64; BASE_DIMS]) -> Self {
        DimVec(exps.map(Rational64::from_integer))
    }

    /// True iff every exponent is zero.
    pub fn is_dimensionless(&self) -> bool {
        self.0.iter().all(Zero::is_zero)
    }

    /// Component-wise multiplication by a rational scalar.
    pub fn scale(&self, k: Rational64) -> DimVec {
        DimVec(self.0.map(|e| e * k))
    }

    /// Exact rational halving of every exponent.
    pub fn halve(&self) -> DimVec {
        self.scale(Rational64::new(1, 2))
    }
}

impl Add for DimVec {
    type Output = DimVec;
    fn add(self, rhs: DimVec) -> DimVec {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0.iter()) {
            *o += *r;
        }
        DimVec(out)
    }
}

impl Sub for DimVec {
    type Output = DimVec;
    fn sub(self, rhs: DimVec) -> DimVec {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0.iter()) {
            *o -= *r;
        }
        DimVec(out)
    }
}

impl Neg for DimVec {
    type Output = DimVec;
    fn neg(self) -> DimVec {
        DimVec(self.0.map(|e| -e))
    }
}

impl fmt::Display for DimVec {
    /// Renders as a unit product, e.g. `kg*m*s^-2`, or `1` when dimensionless.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_dimensionless() {
            return write!(f, "1");
        }
        let mut first = true;
        for (exp, name) in self.0.iter().zip(BASE_NAMES) {
            if exp.is_zero() {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if *exp == Rational64::from_integer(1) {
                write!(f, "{name}")?;
            } else if exp.is_integer() {
                write!(f, "{name}^{}", exp.numer())?;
            } else {
                write!(f, "{name}^{}/{}", exp.numer(), exp.denom())?;
            }
        }
        Ok(())
    }
}

/// Outcome of a dimensional evaluation.
///
/// `Undefined` marks a rule violation (adding unequal dimensions, a
/// dimensioned argument to a transcendental) and is an ordinary value, not
/// an error: population-scale evaluation must never unwind on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DimResult {
    Defined(DimVec),
    Undefined,
}

impl DimResult {
    pub fn defined(&self) -> Option<&DimVec> {
        match self {
            DimResult::Defined(d) => Some(d),
            DimResult::Undefined => None,
        }
    }

    pub fn is_undefined(&self) -> bool {
        matches!(self, DimResult::Undefined)
    }
}

impl From<DimVec> for DimResult {
    fn from(d: DimVec) -> Self {
        DimResult::Defined(d)
    }
}

/// Mathematical operators the engine composes expressions from.
///
/// `Pow` carries a fixed rational exponent known at table-construction time
/// (the squaring operator is `Pow(2)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow(Rational64),
    Sqrt,
    Sin,
    Cos,
    Log,
    Exp,
}

impl Op {
    pub fn arity(&self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            _ => 1,
        }
    }

    /// True for the unary transcendentals whose nesting the semantic
    /// library prunes by default.
    pub fn is_transcendental(&self) -> bool {
        matches!(self, Op::Sin | Op::Cos | Op::Log | Op::Exp)
    }

    /// Short operator name used in expression text and library dumps.
    pub fn name(&self) -> String {
        match self {
            Op::Add => "+".into(),
            Op::Sub => "-".into(),
            Op::Mul => "*".into(),
            Op::Div => "/".into(),
            Op::Pow(n) if n.is_integer() => format!("^{}", n.numer()),
            Op::Pow(n) => format!("^{}/{}", n.numer(), n.denom()),
            Op::Sqrt => "sqrt".into(),
            Op::Sin => "sin".into(),
            Op::Cos => "cos".into(),
            Op::Log => "log".into(),
            Op::Exp => "exp".into(),
        }
    }

    /// Inverse of [`Op::name`] for the operator tokens that appear in
    /// library dumps and configuration lists.
    pub fn from_name(s: &str) -> Option<Op> {
        match s {
            "+" => Some(Op::Add),
            "-" => Some(Op::Sub),
            "*" => Some(Op::Mul),
            "/" => Some(Op::Div),
            "sqrt" => Some(Op::Sqrt),
            "sin" => Some(Op::Sin),
            "cos" => Some(Op::Cos),
            "log" => Some(Op::Log),
            "exp" => Some(Op::Exp),
            _ => {
                let body = s.strip_prefix('^')?;
                let rat = if let Some((n, d)) = body.split_once('/') {
                    Rational64::new(n.parse().ok()?, d.parse().ok()?)
                } else {
                    Rational64::from_integer(body.parse().ok()?)
                };
                Some(Op::Pow(rat))
            }
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Errors from the dimension algebra itself, kept distinct from the
/// `Undefined` value: these signal misuse, not a homogeneity violation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DimError {
    #[error("operator {op} expects {expected} operand(s), got {given}")]
    ArityMismatch {
        op: String,
        expected: usize,
        given: usize,
    },
    #[error("pow(0) has no backward rule")]
    NonInvertiblePow,
}

/// Applies an operator's forward dimension rule.
///
/// `b` must be present exactly when `op` is binary. Rule violations (unequal
/// operands under `+`/`-`, dimensioned input to a transcendental) yield
/// `Undefined` rather than an error.
pub fn forward_apply(op: Op, a: &DimVec, b: Option<&DimVec>) -> Result<DimResult, DimError> {
    let expected = op.arity();
    let given = 1 + usize::from(b.is_some());
    if expected != given {
        return Err(DimError::ArityMismatch {
            op: op.name(),
            expected,
            given,
        });
    }
    Ok(match op {
        Op::Add | Op::Sub => {
            let b = b.expect("binary");
            if a == b {
                DimResult::Defined(*a)
            } else {
                DimResult::Undefined
            }
        }
        Op::Mul => DimResult::Defined(*a + *b.expect("binary")),
        Op::Div => DimResult::Defined(*a - *b.expect("binary")),
        Op::Pow(n) => DimResult::Defined(a.scale(n)),
        Op::Sqrt => DimResult::Defined(a.halve()),
        Op::Sin | Op::Cos | Op::Log | Op::Exp => {
            if a.is_dimensionless() {
                DimResult::Defined(DimVec::ZERO)
            } else {
                DimResult::Undefined
            }
        }
    })
}

/// Inverts an operator's forward rule: given the dimension the node should
/// produce, derives target dimensions for its children.
///
/// For binary `*` and `/`, a child whose current dimension is known keeps
/// it and the sibling receives the exact residual; with neither known the
/// target is split in half (exact rational halving). For unary operators
/// only the first component of the returned pair is meaningful.
pub fn backward_split(
    op: Op,
    target: &DimVec,
    left_known: Option<&DimVec>,
    right_known: Option<&DimVec>,
) -> Result<(DimVec, DimVec), DimError> {
    let t = *target;
    Ok(match op {
        Op::Add | Op::Sub => (t, t),
        Op::Mul => match (left_known, right_known) {
            (Some(l), _) => (*l, t - *l),
            (None, Some(r)) => (t - *r, *r),
            (None, None) => {
                let left = t - t.halve();
                (left, t - left)
            }
        },
        // Forward rule is target = left - right, so right = left - target
        // and left = target + right.
        Op::Div => match (left_known, right_known) {
            (Some(l), _) => (*l, *l - t),
            (None, Some(r)) => (t + *r, *r),
            (None, None) => {
                let left = t - t.halve();
                (left, left - t)
            }
        },
        Op::Pow(n) => {
            if n.is_zero() {
                return Err(DimError::NonInvertiblePow);
            }
            (t.scale(n.recip()), DimVec::ZERO)
        }
        Op::Sqrt => (t.scale(Rational64::from_integer(2)), DimVec::ZERO),
        Op::Sin | Op::Cos | Op::Log | Op::Exp => (DimVec::ZERO, DimVec::ZERO),
    })
}

/// Mean squared component difference: `(1/7) * sum((a_i - b_i)^2)`.
///
/// Symmetric, non-negative, zero iff `a == b`. This is the metric the
/// semantic-repair machinery compares against its tolerance.
pub fn distance(a: &DimVec, b: &DimVec) -> f64 {
    let sum: Rational64 = a
        .0
        .iter()
        .zip(b.0.iter())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum();
    (sum / Rational64::from_integer(BASE_DIMS as i64))
        .to_f64()
        .expect("rational to f64")
}

/// Euclidean norm of the component difference: `sqrt(sum((a_i - b_i)^2))`.
///
/// This is the loss-penalty magnitude; note it is not the same quantity as
/// [`distance`] (no 1/7 factor, square root applied).
pub fn l2_norm_diff(a: &DimVec, b: &DimVec) -> f64 {
    let sum: Rational64 = a
        .0
        .iter()
        .zip(b.0.iter())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum();
    sum.to_f64().expect("rational to f64").sqrt()
}

/// Distance from a possibly-undefined dimension to a target; `Undefined`
/// compares as infinitely far.
pub fn result_distance(r: &DimResult, target: &DimVec) -> f64 {
    match r {
        DimResult::Defined(d) => distance(d, target),
        DimResult::Undefined => f64::INFINITY,
    }
}

/// Parse error for unit expressions, carrying the byte offset of the
/// offending token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unit parse error at byte {pos}: {msg}")]
pub struct UnitParseError {
    pub pos: usize,
    pub msg: String,
}

fn base_unit(tok: &str) -> Option<DimVec> {
    let idx = match tok {
        "kg" => 0,
        "m" => 1,
        "s" => 2,
        "K" => 3,
        "A" => 4,
        "mol" => 5,
        "cd" => 6,
        _ => return None,
    };
    let mut exps = [0i64; BASE_DIMS];
    exps[idx] = 1;
    Some(DimVec::from_ints(exps))
}

fn derived_unit(tok: &str) -> Option<DimVec> {
    let exps: [i64; BASE_DIMS] = match tok {
        "N" => [1, 1, -2, 0, 0, 0, 0],
        "J" => [1, 2, -2, 0, 0, 0, 0],
        "W" => [1, 2, -3, 0, 0, 0, 0],
        "Pa" => [1, -1, -2, 0, 0, 0, 0],
        "C" => [0, 0, 1, 0, 1, 0, 0],
        "V" => [1, 2, -3, 0, -1, 0, 0],
        "Ohm" | "Ω" => [1, 2, -3, 0, -2, 0, 0],
        "Wb" => [1, 2, -2, 0, -1, 0, 0],
        _ => return None,
    };
    Some(DimVec::from_ints(exps))
}

/// Parses a unit expression into its exponent vector.
///
/// The grammar is a product/quotient of factors separated by `*` or `/`,
/// where each factor is a base-unit symbol (`kg m s K A mol cd`), a named
/// derived unit (`N J W Pa C V Ohm Wb`), or `1` for dimensionless, with an
/// optional integer exponent after `^`. A `/` negates the exponent of the
/// factor that follows it. Examples: `kg*m^2*s^-3*A^-1`, `V/m`, `1`.
pub fn parse_unit(text: &str) -> Result<DimVec, UnitParseError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(UnitParseError {
            pos: 0,
            msg: "empty unit expression".into(),
        });
    }
    let mut result = DimVec::ZERO;
    let mut pos = 0usize;
    let bytes = s.as_bytes();
    let mut invert_next = false;
    loop {
        // factor: ident [^ int]
        let start = pos;
        while pos < bytes.len() && !matches!(bytes[pos], b'*' | b'/' | b'^') {
            pos += 1;
        }
        let ident = s[start..pos].trim();
        if ident.is_empty() {
            return Err(UnitParseError {
                pos: start,
                msg: "expected unit symbol".into(),
            });
        }
        let base = if ident == "1" {
            DimVec::ZERO
        } else {
            base_unit(ident)
                .or_else(|| derived_unit(ident))
                .ok_or_else(|| UnitParseError {
                    pos: start,
                    msg: format!("unknown unit symbol `{ident}`"),
                })?
        };
        let mut exp = Rational64::from_integer(1);
        if pos < bytes.len() && bytes[pos] == b'^' {
            pos += 1;
            let estart = pos;
            if pos < bytes.len() && (bytes[pos] == b'-' || bytes[pos] == b'+') {
                pos += 1;
            }
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            let etext = &s[estart..pos];
            let n: i64 = etext.parse().map_err(|_| UnitParseError {
                pos: estart,
                msg: format!("malformed exponent `{etext}`"),
            })?;
            exp = Rational64::from_integer(n);
        }
        if invert_next {
            exp = -exp;
        }
        result = result + base.scale(exp);
        if pos == bytes.len() {
            break;
        }
        match bytes[pos] {
            b'*' => invert_next = false,
            b'/' => invert_next = true,
            _ => {
                return Err(UnitParseError {
                    pos,
                    msg: format!("unexpected character `{}`", &s[pos..pos + 1]),
                })
            }
        }
        pos += 1;
    }
    Ok(result)
}

/// Formats a rational exponent for dumps (`3`, `-1/2`).
pub fn format_rational(r: &Rational64) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses the output of [`format_rational`].
pub fn parse_rational(s: &str) -> Option<Rational64> {
    if let Some((n, d)) = s.split_once('/') {
        let d: i64 = d.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        Some(Rational64::new(n.trim().parse().ok()?, d))
    } else {
        Some(Rational64::from_integer(s.trim().parse().ok()?))
    }
}

/// Signum helper used when rendering scripts and reports.
pub fn rational_is_negative(r: &Rational64) -> bool {
    r.is_negative()
}
