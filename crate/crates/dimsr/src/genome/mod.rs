//! Linear genotypes and their expression-tree phenotypes.
//!
//! A gene is a fixed-length symbol string: a head of `h` positions that may
//! hold any symbol followed by a tail of `h + 1` positions restricted to
//! terminals. The tail arithmetic guarantees that reading the string left
//! to right always yields a complete expression — the consumed prefix is
//! the gene's K-expression, and it is simultaneously the pre-order layout
//! of the phenotype tree. Chromosomes hold one or more genes joined by a
//! linking operator.

mod tree;

pub use tree::{compute_sizes, ExprTree, Node, TreeError};

use rand::Rng;
use thiserror::Error;

use crate::dimension::{DimVec, Op};

/// Dense symbol identifier; an index into the [`SymbolTable`].
pub type SymbolId = u16;

/// What a symbol stands for.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolKind {
    /// Non-terminal: a mathematical operator.
    Operator(Op),
    /// Terminal: a dataset feature, reading `column` of the input matrix.
    Variable { column: usize, dim: DimVec },
    /// Terminal: an ephemeral numeric coefficient. Each occurrence in a
    /// gene carries its own dimensionless value.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolEntry {
    pub name: String,
    pub kind: SymbolKind,
}

/// Immutable registry of the symbols a run composes expressions from.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTable {
    entries: Vec<SymbolEntry>,
    terminals: Vec<SymbolId>,
    nonterminals: Vec<SymbolId>,
    var_dims: Vec<DimVec>,
    var_ids: Vec<SymbolId>,
    constant: Option<SymbolId>,
}

impl SymbolTable {
    /// Builds a table from an operator set and named, dimensioned
    /// variables; `with_constant` adds the ephemeral-constant terminal.
    pub fn new(ops: &[Op], variables: &[(String, DimVec)], with_constant: bool) -> SymbolTable {
        let mut entries = Vec::new();
        let mut terminals = Vec::new();
        let mut nonterminals = Vec::new();
        let mut var_dims = Vec::new();
        let mut var_ids = Vec::new();
        for op in ops {
            let id = entries.len() as SymbolId;
            entries.push(SymbolEntry {
                name: op.name(),
                kind: SymbolKind::Operator(*op),
            });
            nonterminals.push(id);
        }
        for (column, (name, dim)) in variables.iter().enumerate() {
            let id = entries.len() as SymbolId;
            entries.push(SymbolEntry {
                name: name.clone(),
                kind: SymbolKind::Variable { column, dim: *dim },
            });
            terminals.push(id);
            var_dims.push(*dim);
            var_ids.push(id);
        }
        let constant = with_constant.then(|| {
            let id = entries.len() as SymbolId;
            entries.push(SymbolEntry {
                name: "C".into(),
                kind: SymbolKind::Constant,
            });
            terminals.push(id);
            id
        });
        SymbolTable {
            entries,
            terminals,
            nonterminals,
            var_dims,
            var_ids,
            constant,
        }
    }

    pub fn entry(&self, id: SymbolId) -> &SymbolEntry {
        &self.entries[id as usize]
    }

    pub fn arity(&self, id: SymbolId) -> usize {
        match &self.entry(id).kind {
            SymbolKind::Operator(op) => op.arity(),
            _ => 0,
        }
    }

    pub fn is_terminal(&self, id: SymbolId) -> bool {
        !matches!(self.entry(id).kind, SymbolKind::Operator(_))
    }

    pub fn terminals(&self) -> &[SymbolId] {
        &self.terminals
    }

    pub fn nonterminals(&self) -> &[SymbolId] {
        &self.nonterminals
    }

    pub fn constant_id(&self) -> Option<SymbolId> {
        self.constant
    }

    pub fn n_vars(&self) -> usize {
        self.var_dims.len()
    }

    /// Dimension of the variable reading data column `column`.
    pub fn var_dim(&self, column: usize) -> Option<&DimVec> {
        self.var_dims.get(column)
    }

    /// Symbol id of the variable reading data column `column`.
    pub fn var_id(&self, column: usize) -> Option<SymbolId> {
        self.var_ids.get(column).copied()
    }

    /// Symbol id of an operator, if the table contains it.
    pub fn op_id(&self, op: Op) -> Option<SymbolId> {
        self.nonterminals
            .iter()
            .copied()
            .find(|id| matches!(&self.entry(*id).kind, SymbolKind::Operator(o) if *o == op))
    }

    /// All operators in the table, in id order.
    pub fn ops(&self) -> Vec<Op> {
        self.nonterminals
            .iter()
            .map(|id| match &self.entry(*id).kind {
                SymbolKind::Operator(op) => *op,
                _ => unreachable!("nonterminals hold operators"),
            })
            .collect()
    }

    /// Variable names in column order.
    pub fn var_names(&self) -> Vec<String> {
        self.var_ids
            .iter()
            .map(|id| self.entry(*id).name.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenomeError {
    #[error("head length must be at least 1")]
    HeadLenZero,
    #[error("symbol table has no terminals")]
    NoTerminals,
    #[error("symbol table has no operators")]
    NoOperators,
    #[error("tree of {size} nodes exceeds gene capacity {capacity}")]
    CapacityExceeded { size: usize, capacity: usize },
    #[error("operator at pre-order position {position} falls outside head of length {head_len}")]
    OperatorOutsideHead { position: usize, head_len: usize },
    #[error("operator `{name}` is not in the symbol table")]
    UnknownOperator { name: String },
}

/// Fixed-length genotype string.
///
/// `symbols` has length `2 * head_len + 1`. `consts` is position-parallel:
/// `consts[i]` is the coefficient value of position `i` when `symbols[i]`
/// is the constant terminal, and meaningless otherwise. Carrying values by
/// position lets crossover and inversion move coefficients together with
/// the symbols that own them.
#[derive(Debug, Clone, PartialEq)]
pub struct Gene {
    pub head_len: usize,
    pub symbols: Vec<SymbolId>,
    pub consts: Vec<f64>,
}

impl Gene {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Structural validity: correct length and terminals-only tail.
    pub fn validate(&self, table: &SymbolTable) -> bool {
        self.symbols.len() == 2 * self.head_len + 1
            && self.consts.len() == self.symbols.len()
            && self.symbols[self.head_len..]
                .iter()
                .all(|id| table.is_terminal(*id))
    }
}

/// Range coefficients are drawn from when a constant terminal materializes.
pub const CONST_INIT_RANGE: (f64, f64) = (-2.0, 2.0);

/// Draws a fresh ephemeral-constant value.
pub fn fresh_const(rng: &mut impl Rng) -> f64 {
    rng.random_range(CONST_INIT_RANGE.0..CONST_INIT_RANGE.1)
}

/// Uniform choice over all symbols (head positions).
pub fn random_head_symbol(table: &SymbolTable, rng: &mut impl Rng) -> SymbolId {
    let n_term = table.terminals().len();
    let n_all = n_term + table.nonterminals().len();
    let k = rng.random_range(0..n_all);
    if k < n_term {
        table.terminals()[k]
    } else {
        table.nonterminals()[k - n_term]
    }
}

/// Uniform choice over terminals (tail positions).
pub fn random_tail_symbol(table: &SymbolTable, rng: &mut impl Rng) -> SymbolId {
    table.terminals()[rng.random_range(0..table.terminals().len())]
}

/// Generates a structurally valid random gene: any symbol in the head,
/// terminals only in the tail, constants materialized with fresh values.
pub fn random_gene(
    table: &SymbolTable,
    head_len: usize,
    rng: &mut impl Rng,
) -> Result<Gene, GenomeError> {
    if head_len < 1 {
        return Err(GenomeError::HeadLenZero);
    }
    if table.terminals().is_empty() {
        return Err(GenomeError::NoTerminals);
    }
    if table.nonterminals().is_empty() {
        return Err(GenomeError::NoOperators);
    }
    let len = 2 * head_len + 1;
    let mut symbols = Vec::with_capacity(len);
    let mut consts = vec![0.0; len];
    for pos in 0..len {
        let id = if pos < head_len {
            random_head_symbol(table, rng)
        } else {
            random_tail_symbol(table, rng)
        };
        symbols.push(id);
        if Some(id) == table.constant_id() {
            consts[pos] = fresh_const(rng);
        }
    }
    Ok(Gene {
        head_len,
        symbols,
        consts,
    })
}

/// One or more genes joined by a linking operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome {
    pub genes: Vec<Gene>,
    pub linker: Op,
}

/// Generates a chromosome of `n_genes` random genes.
pub fn random_chromosome(
    table: &SymbolTable,
    head_len: usize,
    n_genes: usize,
    linker: Op,
    rng: &mut impl Rng,
) -> Result<Chromosome, GenomeError> {
    let genes = (0..n_genes)
        .map(|_| random_gene(table, head_len, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Chromosome { genes, linker })
}

/// Decodes a gene into its phenotype tree.
///
/// Reads symbols left to right; each symbol claims the next `arity`
/// subtrees, and reading stops once the open-slot count drops to zero.
/// The consumed prefix (the K-expression) is already the pre-order node
/// layout, so the tree is that prefix with symbols resolved. Returns the
/// tree and the K-expression length.
pub fn decode(gene: &Gene, table: &SymbolTable) -> (ExprTree, usize) {
    let mut open = 1usize;
    let mut k_len = 0usize;
    while open > 0 {
        let id = gene.symbols[k_len];
        open = open - 1 + table.arity(id);
        k_len += 1;
    }
    let nodes: Vec<Node> = gene.symbols[..k_len]
        .iter()
        .enumerate()
        .map(|(pos, id)| match &table.entry(*id).kind {
            SymbolKind::Operator(op) => Node::Op(*op),
            SymbolKind::Variable { column, .. } => Node::Var(*column),
            SymbolKind::Constant => Node::Const(gene.consts[pos]),
        })
        .collect();
    let tree = ExprTree::from_preorder(nodes, table)
        .expect("prefix consumed by arity walk is a complete tree");
    (tree, k_len)
}

/// Encodes a tree back into a gene: the pre-order symbols become the
/// K-expression prefix and the remaining positions are filled with random
/// terminals. Inverse of [`decode`] on the consumed prefix.
///
/// Fails if the tree has more nodes than the gene holds, or if any
/// operator would land in the tail (tail positions are terminals-only, so
/// such a tree is not representable at this head length).
pub fn encode(
    tree: &ExprTree,
    head_len: usize,
    table: &SymbolTable,
    rng: &mut impl Rng,
) -> Result<Gene, GenomeError> {
    if head_len < 1 {
        return Err(GenomeError::HeadLenZero);
    }
    let len = 2 * head_len + 1;
    if tree.len() > len {
        return Err(GenomeError::CapacityExceeded {
            size: tree.len(),
            capacity: len,
        });
    }
    let mut symbols = Vec::with_capacity(len);
    let mut consts = vec![0.0; len];
    for (pos, node) in tree.nodes.iter().enumerate() {
        let id = match node {
            Node::Op(op) => {
                if pos >= head_len {
                    return Err(GenomeError::OperatorOutsideHead {
                        position: pos,
                        head_len,
                    });
                }
                table.op_id(*op).ok_or_else(|| GenomeError::UnknownOperator {
                    name: op.name(),
                })?
            }
            Node::Var(col) => table.var_id(*col).expect("tree built over this table"),
            Node::Const(v) => {
                let id = table.constant_id().ok_or_else(|| GenomeError::UnknownOperator {
                    name: "C".into(),
                })?;
                consts[pos] = *v;
                id
            }
        };
        symbols.push(id);
    }
    for pos in tree.len()..len {
        let id = random_tail_symbol(table, rng);
        symbols.push(id);
        if Some(id) == table.constant_id() {
            consts[pos] = fresh_const(rng);
        }
    }
    Ok(Gene {
        head_len,
        symbols,
        consts,
    })
}

/// Checks whether a tree fits a gene of the given head length without
/// actually encoding it: node count within capacity and every operator at
/// a head position.
pub fn encodable(nodes: &[Node], head_len: usize) -> bool {
    nodes.len() <= 2 * head_len + 1
        && nodes
            .iter()
            .enumerate()
            .all(|(pos, n)| n.arity() == 0 || pos < head_len)
}

/// Decodes every gene and left-folds the per-gene trees with the linking
/// operator: `link(link(t1, t2), t3)…`. A single gene's tree is returned
/// unchanged.
pub fn link(chromosome: &Chromosome, table: &SymbolTable) -> ExprTree {
    let mut trees = chromosome.genes.iter().map(|g| decode(g, table).0);
    let first = trees.next().expect("chromosome has at least one gene");
    trees.fold(first, |acc, next| {
        let mut nodes = Vec::with_capacity(1 + acc.len() + next.len());
        nodes.push(Node::Op(chromosome.linker));
        nodes.extend_from_slice(&acc.nodes);
        nodes.extend_from_slice(&next.nodes);
        ExprTree::from_preorder(nodes, table).expect("fold of complete trees is complete")
    })
}
