//! Parser for ground-truth expressions written as infix text, e.g.
//! `(m1*r1 + m2*r2) / (m1 + m2)` or `8.9875e9 * q1 * q2 / r^2`.
//!
//! The grammar covers the operator set of the engine: `+ - * /` with the
//! usual precedence, `^` with a rational exponent (`x^2`, `x^-1/2`),
//! unary function calls (`sqrt`, `sin`, `cos`, `log`, `exp`), numeric
//! literals, parentheses, and unary minus. Identifiers resolve against
//! the symbol table's variable names. The text produced by
//! [`ExprTree::render`] parses back to the identical tree.

use std::fmt;

use num_rational::Rational64;

use crate::dimension::Op;
use crate::genome::{ExprTree, Node, SymbolTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprParseError {
    /// Byte offset of the offending character.
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ExprParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at byte {}: {}", self.pos, self.msg)
    }
}

impl std::error::Error for ExprParseError {}

/// Parses infix expression text into a tree over `table`'s variables.
pub fn parse_expression(text: &str, table: &SymbolTable) -> Result<ExprTree, ExprParseError> {
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        names: table.var_names(),
    };
    let mut nodes = Vec::new();
    parser.expr(&mut nodes)?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    ExprTree::from_preorder(nodes, table).map_err(|e| ExprParseError {
        pos: 0,
        msg: e.to_string(),
    })
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    names: Vec<String>,
}

impl Parser<'_> {
    fn error(&self, msg: impl Into<String>) -> ExprParseError {
        ExprParseError {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    /// expr := term (('+' | '-') term)*
    fn expr(&mut self, out: &mut Vec<Node>) -> Result<(), ExprParseError> {
        let mut lhs = Vec::new();
        self.term(&mut lhs)?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let mut rhs = Vec::new();
            self.term(&mut rhs)?;
            let op = if c == b'+' { Op::Add } else { Op::Sub };
            prepend_op(&mut lhs, op, rhs);
        }
        out.append(&mut lhs);
        Ok(())
    }

    /// term := factor (('*' | '/') factor)*
    fn term(&mut self, out: &mut Vec<Node>) -> Result<(), ExprParseError> {
        let mut lhs = Vec::new();
        self.factor(&mut lhs)?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let mut rhs = Vec::new();
            self.factor(&mut rhs)?;
            let op = if c == b'*' { Op::Mul } else { Op::Div };
            prepend_op(&mut lhs, op, rhs);
        }
        out.append(&mut lhs);
        Ok(())
    }

    /// factor := '-' factor | power
    ///
    /// A negated literal folds into a negative constant; any other
    /// negated operand becomes `(-1) * operand`, which preserves the
    /// operand's physical dimension.
    fn factor(&mut self, out: &mut Vec<Node>) -> Result<(), ExprParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let mut inner = Vec::new();
            self.factor(&mut inner)?;
            if let [Node::Const(v)] = inner[..] {
                out.push(Node::Const(-v));
            } else {
                out.push(Node::Op(Op::Mul));
                out.push(Node::Const(-1.0));
                out.append(&mut inner);
            }
            return Ok(());
        }
        self.power(out)
    }

    /// power := atom ('^' rational)*   (left-associative)
    fn power(&mut self, out: &mut Vec<Node>) -> Result<(), ExprParseError> {
        let mut base = Vec::new();
        self.atom(&mut base)?;
        while self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.rational()?;
            prepend_unary(&mut base, Op::Pow(exponent));
        }
        out.append(&mut base);
        Ok(())
    }

    /// atom := number | ident | ident '(' expr ')' | '(' expr ')'
    fn atom(&mut self, out: &mut Vec<Node>) -> Result<(), ExprParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                self.expr(out)?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(())
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let value = self.number()?;
                out.push(Node::Const(value));
                Ok(())
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                let name = self.ident();
                if self.peek() == Some(b'(') {
                    let op = match name.as_str() {
                        "sqrt" => Op::Sqrt,
                        "sin" => Op::Sin,
                        "cos" => Op::Cos,
                        "log" => Op::Log,
                        "exp" => Op::Exp,
                        _ => {
                            self.pos = start;
                            return Err(self.error(format!("unknown function '{name}'")));
                        }
                    };
                    self.pos += 1;
                    let mut arg = Vec::new();
                    self.expr(&mut arg)?;
                    if self.peek() != Some(b')') {
                        return Err(self.error("expected ')'"));
                    }
                    self.pos += 1;
                    prepend_unary(&mut arg, op);
                    out.append(&mut arg);
                    return Ok(());
                }
                match self.names.iter().position(|n| *n == name) {
                    Some(column) => {
                        out.push(Node::Var(column));
                        Ok(())
                    }
                    None => {
                        self.pos = start;
                        Err(self.error(format!("unknown variable '{name}'")))
                    }
                }
            }
            _ => Err(self.error("expected a number, variable, call, or '('")),
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }

    /// Scans a float literal: digits, optional fraction, optional
    /// exponent. The 'e' of an exponent is consumed only when digits
    /// follow, so `2*e` with a variable named `e` still scans correctly.
    fn number(&mut self) -> Result<f64, ExprParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if let Some(b'e' | b'E') = self.bytes.get(self.pos) {
            let mut after = self.pos + 1;
            if let Some(b'+' | b'-') = self.bytes.get(after) {
                after += 1;
            }
            if self.bytes.get(after).is_some_and(|b| b.is_ascii_digit()) {
                self.pos = after;
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse::<f64>().map_err(|_| ExprParseError {
            pos: start,
            msg: format!("invalid number '{text}'"),
        })
    }

    /// Scans a rational exponent: optional '-', integer, optional
    /// '/' integer, as in `^2`, `^-1`, or `^-1/2`.
    fn rational(&mut self) -> Result<Rational64, ExprParseError> {
        self.skip_ws();
        let start = self.pos;
        let negative = self.bytes.get(self.pos) == Some(&b'-');
        if negative {
            self.pos += 1;
        }
        let numer = self.integer("exponent")?;
        let mut value = Rational64::from_integer(numer);
        if self.bytes.get(self.pos) == Some(&b'/') {
            self.pos += 1;
            let denom = self.integer("exponent denominator")?;
            if denom == 0 {
                return Err(ExprParseError {
                    pos: start,
                    msg: "exponent denominator is zero".into(),
                });
            }
            value = Rational64::new(numer, denom);
        }
        Ok(if negative { -value } else { value })
    }

    fn integer(&mut self, what: &str) -> Result<i64, ExprParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ExprParseError {
                pos: start,
                msg: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse::<i64>()
            .map_err(|_| ExprParseError {
                pos: start,
                msg: format!("{what} out of range"),
            })
    }
}

/// Turns `lhs` into `[op, lhs..., rhs...]` in place.
fn prepend_op(lhs: &mut Vec<Node>, op: Op, mut rhs: Vec<Node>) {
    lhs.insert(0, Node::Op(op));
    lhs.append(&mut rhs);
}

/// Turns `arg` into `[op, arg...]` in place.
fn prepend_unary(arg: &mut Vec<Node>, op: Op) {
    arg.insert(0, Node::Op(op));
}

/// Draws `rows` probe points uniformly from the per-column bounding box
/// of `x` (column-major). Constant columns stay constant.
pub fn make_probe(x: &[Vec<f64>], rows: usize, rng: &mut impl rand::Rng) -> Vec<Vec<f64>> {
    x.iter()
        .map(|col| {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (0..rows)
                .map(|_| {
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..hi)
                    }
                })
                .collect()
        })
        .collect()
}
