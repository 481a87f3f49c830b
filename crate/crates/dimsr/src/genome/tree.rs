//! Flat pre-order expression trees with cached subtree sizes and
//! per-node dimension results.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dimension::{forward_apply, DimResult, DimVec, Op};
use crate::genome::SymbolTable;

/// One expression-tree node. Constants carry their own coefficient value;
/// variables carry the index of the data column they read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Op(Op),
    Var(usize),
    Const(f64),
}

impl Node {
    pub fn arity(&self) -> usize {
        match self {
            Node::Op(op) => op.arity(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("pre-order sequence is not a single complete tree")]
    MalformedPreorder,
    #[error("variable column {column} out of range ({n_vars} variables)")]
    VariableOutOfRange { column: usize, n_vars: usize },
}

/// Expression tree stored as a pre-order node array.
///
/// `sizes[i]` is the node count of the subtree rooted at `i`, so the
/// subtree occupies the contiguous slice `[i, i + sizes[i])`; a node's
/// first child sits at `i + 1` and its second at `i + 1 + sizes[i + 1]`.
/// `dims[i]` caches the dimension of the subtree rooted at `i` and is kept
/// consistent by every mutating method.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprTree {
    pub nodes: Vec<Node>,
    pub sizes: Vec<u32>,
    pub dims: Vec<DimResult>,
}

impl ExprTree {
    /// Builds a tree from a complete pre-order node sequence, computing
    /// sizes and dimensions. Fails if the sequence does not form exactly
    /// one tree or references a variable the table does not know.
    pub fn from_preorder(nodes: Vec<Node>, table: &SymbolTable) -> Result<ExprTree, TreeError> {
        let sizes = compute_sizes(&nodes)?;
        let mut tree = ExprTree {
            nodes,
            sizes,
            dims: Vec::new(),
        };
        tree.compute_dims(table)?;
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Dimension of the whole expression.
    pub fn root_dim(&self) -> &DimResult {
        &self.dims[0]
    }

    /// Index of node `i`'s first child. Caller must ensure arity ≥ 1.
    pub fn child1(&self, i: usize) -> usize {
        i + 1
    }

    /// Index of node `i`'s second child. Caller must ensure arity = 2.
    pub fn child2(&self, i: usize) -> usize {
        i + 1 + self.sizes[i + 1] as usize
    }

    /// The contiguous pre-order slice of the subtree rooted at `i`.
    pub fn subtree(&self, i: usize) -> &[Node] {
        &self.nodes[i..i + self.sizes[i] as usize]
    }

    /// Replaces the subtree rooted at `i` with `replacement` (a complete
    /// pre-order sequence) and restores the size/dimension caches.
    pub fn replace_subtree(
        &mut self,
        i: usize,
        replacement: &[Node],
        table: &SymbolTable,
    ) -> Result<(), TreeError> {
        let end = i + self.sizes[i] as usize;
        self.nodes.splice(i..end, replacement.iter().copied());
        self.recompute(table)
    }

    /// Recomputes both caches after external manipulation of `nodes`.
    pub fn recompute(&mut self, table: &SymbolTable) -> Result<(), TreeError> {
        self.sizes = compute_sizes(&self.nodes)?;
        self.compute_dims(table)
    }

    fn compute_dims(&mut self, table: &SymbolTable) -> Result<(), TreeError> {
        let n = self.nodes.len();
        let mut dims = vec![DimResult::Undefined; n];
        // Reverse pre-order visits children before parents.
        for i in (0..n).rev() {
            dims[i] = match self.nodes[i] {
                Node::Const(_) => DimResult::Defined(DimVec::ZERO),
                Node::Var(col) => {
                    let dim = table
                        .var_dim(col)
                        .ok_or(TreeError::VariableOutOfRange {
                            column: col,
                            n_vars: table.n_vars(),
                        })?;
                    DimResult::Defined(*dim)
                }
                Node::Op(op) => {
                    let c1 = self.child1(i);
                    match op.arity() {
                        1 => match &dims[c1] {
                            DimResult::Defined(a) => {
                                forward_apply(op, a, None).expect("arity checked")
                            }
                            DimResult::Undefined => DimResult::Undefined,
                        },
                        _ => {
                            let c2 = self.child2(i);
                            match (&dims[c1], &dims[c2]) {
                                (DimResult::Defined(a), DimResult::Defined(b)) => {
                                    forward_apply(op, a, Some(b)).expect("arity checked")
                                }
                                _ => DimResult::Undefined,
                            }
                        }
                    }
                }
            };
        }
        self.dims = dims;
        Ok(())
    }

    /// True iff every node, not just the root, has a defined dimension.
    pub fn fully_defined(&self) -> bool {
        self.dims.iter().all(|d| !d.is_undefined())
    }

    /// Renders the expression as infix text, using `var_names` for
    /// variable leaves (falls back to `x<col>` past the end).
    pub fn render(&self, var_names: &[String]) -> String {
        let mut out = String::new();
        self.render_at(0, var_names, &mut out);
        out
    }

    fn render_at(&self, i: usize, var_names: &[String], out: &mut String) {
        match self.nodes[i] {
            Node::Const(v) => {
                if v < 0.0 {
                    let _ = write!(out, "({v})");
                } else {
                    let _ = write!(out, "{v}");
                }
            }
            Node::Var(col) => match var_names.get(col) {
                Some(name) => out.push_str(name),
                None => {
                    let _ = write!(out, "x{col}");
                }
            },
            Node::Op(op) => match op {
                Op::Add | Op::Sub | Op::Mul | Op::Div => {
                    out.push('(');
                    self.render_at(self.child1(i), var_names, out);
                    let _ = write!(out, " {} ", op.name());
                    self.render_at(self.child2(i), var_names, out);
                    out.push(')');
                }
                Op::Pow(_) => {
                    out.push('(');
                    self.render_at(self.child1(i), var_names, out);
                    out.push(')');
                    out.push_str(&op.name());
                }
                _ => {
                    out.push_str(&op.name());
                    out.push('(');
                    self.render_at(self.child1(i), var_names, out);
                    out.push(')');
                }
            },
        }
    }
}

/// Computes subtree sizes for a pre-order sequence, verifying along the
/// way that the sequence forms exactly one complete tree.
pub fn compute_sizes(nodes: &[Node]) -> Result<Vec<u32>, TreeError> {
    let n = nodes.len();
    if n == 0 {
        return Err(TreeError::MalformedPreorder);
    }
    let mut sizes = vec![0u32; n];
    let mut stack: Vec<u32> = Vec::new();
    for i in (0..n).rev() {
        let arity = nodes[i].arity();
        if stack.len() < arity {
            return Err(TreeError::MalformedPreorder);
        }
        let mut size = 1u32;
        for _ in 0..arity {
            size += stack.pop().expect("checked above");
        }
        sizes[i] = size;
        stack.push(size);
    }
    if stack.len() == 1 && stack[0] as usize == n {
        Ok(sizes)
    } else {
        Err(TreeError::MalformedPreorder)
    }
}
