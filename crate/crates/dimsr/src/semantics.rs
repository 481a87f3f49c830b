//! Dimension-indexed subtree library and the correction pass that repairs
//! dimensional violations in place.
//!
//! The library maps `(dimension, size)` keys to lists of pre-order
//! subtrees whose forward dimension equals the key exactly. The repair
//! pass walks a tree top-down: at each node it derives what dimension each
//! child ought to have (the backward rules), replaces mismatched children
//! from the library when an entry fits, and recurses otherwise. Repairs
//! operate per gene so a corrected tree always re-encodes into its gene.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dimension::{
    backward_split, format_rational, forward_apply, parse_rational, result_distance, DimResult,
    DimVec, Op,
};
use crate::genome::{
    compute_sizes, decode, encodable, encode, Chromosome, ExprTree, Node, SymbolKind, SymbolTable,
};

/// Tolerance under which two dimensions count as matching. Exponent
/// arithmetic is exact, so anything below this is a true match.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Unary operators whose direct composition (e.g. `exp(log(x))`,
/// `sin(sin(x))`) the library construction rejects by default.
pub const DEFAULT_BANNED_NESTING: [Op; 4] = [Op::Sin, Op::Cos, Op::Log, Op::Exp];

/// Value given to constant leaves stored in the library. Neutral start;
/// coefficient optimization retunes materialized copies.
const LIBRARY_CONST_VALUE: f64 = 1.0;

/// Precomputed store of dimension-correct subtrees, keyed by the exact
/// dimension they produce and their pre-order size.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticLibrary {
    entries: BTreeMap<(DimVec, usize), Vec<Vec<Node>>>,
    head_len: usize,
    cap: usize,
    banned: Vec<Op>,
}

impl SemanticLibrary {
    pub fn head_len(&self) -> usize {
        self.head_len
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn n_entries(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn n_keys(&self) -> usize {
        self.entries.len()
    }

    /// Entry count per size class, indexed by size (position 0 = size 1).
    pub fn size_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.head_len];
        for ((_, size), list) in &self.entries {
            counts[*size - 1] += list.len();
        }
        counts
    }

    /// Iterates `(dimension, size, subtree)` in deterministic key order.
    pub fn iter(&self) -> impl Iterator<Item = (&DimVec, usize, &Vec<Node>)> {
        self.entries
            .iter()
            .flat_map(|((dim, size), list)| list.iter().map(move |t| (dim, *size, t)))
    }

    pub fn entries_for(&self, dim: &DimVec, size: usize) -> &[Vec<Node>] {
        self.entries
            .get(&(*dim, size))
            .map_or(&[], Vec::as_slice)
    }
}

/// Loose upper bound on the number of distinct subtrees with a given
/// terminal count `m`, operator count `o`, and head length `head_len`:
/// `(4(m+1)o)^((head_len−1)/2)`. Diagnostic only.
pub fn search_space_bound(m: usize, o: usize, head_len: usize) -> f64 {
    (4.0 * (m as f64 + 1.0) * o as f64).powf((head_len as f64 - 1.0) / 2.0)
}

fn node_for_terminal(table: &SymbolTable, id: u16) -> (Node, DimVec) {
    match &table.entry(id).kind {
        SymbolKind::Variable { column, dim } => (Node::Var(*column), *dim),
        SymbolKind::Constant => (Node::Const(LIBRARY_CONST_VALUE), DimVec::ZERO),
        SymbolKind::Operator(_) => unreachable!("terminal ids only"),
    }
}

/// Compact byte encoding of a node list, used to deduplicate sampled
/// candidates within a size class.
fn candidate_key(nodes: &[Node]) -> Vec<u8> {
    let mut out = Vec::with_capacity(nodes.len() * 9);
    for n in nodes {
        match n {
            Node::Var(c) => {
                out.push(0);
                out.extend((*c as u64).to_le_bytes());
            }
            Node::Const(v) => {
                out.push(1);
                out.extend(v.to_bits().to_le_bytes());
            }
            Node::Op(op) => {
                out.push(2);
                out.extend(op.name().as_bytes());
                out.push(0xFF);
            }
        }
    }
    out
}

struct ClassEntry {
    dim: DimVec,
    nodes: Vec<Node>,
}

/// Builds the subtree library bottom-up by size.
///
/// Size-1 entries are the terminals themselves. A size-k entry is an
/// operator over previously built subtrees whose sizes sum to k−1.
/// Candidates whose dimension is undefined, or whose root composes two
/// directly nested operators from `banned`, are rejected. Per size class,
/// construction enumerates the candidate space exhaustively when it fits
/// under `cap` and otherwise samples, deduplicated, until `cap` entries
/// are stored (with a bounded number of attempts so construction always
/// terminates). Deterministic for a fixed seed.
pub fn build_library(
    table: &SymbolTable,
    head_len: usize,
    cap: usize,
    banned: &[Op],
    rng: &mut impl Rng,
) -> SemanticLibrary {
    let mut by_size: Vec<Vec<ClassEntry>> = Vec::with_capacity(head_len);

    // Size 1: every terminal, all dimension-valid by definition.
    let mut size_one: Vec<ClassEntry> = table
        .terminals()
        .iter()
        .map(|id| {
            let (node, dim) = node_for_terminal(table, *id);
            ClassEntry {
                dim,
                nodes: vec![node],
            }
        })
        .collect();
    size_one.truncate(cap);
    by_size.push(size_one);

    let ops = table.ops();
    let is_banned = |op: &Op| banned.contains(op);
    let banned_pair = |op: &Op, child: &[Node]| {
        is_banned(op) && matches!(child.first(), Some(Node::Op(c)) if is_banned(c))
    };

    for size in 2..=head_len {
        // Candidate shapes: (op, left-size) with right-size implied for
        // binary operators. Count the raw space to pick a strategy.
        let mut shapes: Vec<(usize, usize, u64)> = Vec::new(); // (op index, left size, count)
        for (oi, op) in ops.iter().enumerate() {
            match op.arity() {
                1 => {
                    let c = by_size[size - 2].len() as u64;
                    if c > 0 {
                        shapes.push((oi, size - 1, c));
                    }
                }
                _ => {
                    for ls in 1..size - 1 {
                        let rs = size - 1 - ls;
                        let c = by_size[ls - 1].len() as u64 * by_size[rs - 1].len() as u64;
                        if c > 0 {
                            shapes.push((oi, ls, c));
                        }
                    }
                }
            }
        }
        let total: u64 = shapes.iter().map(|s| s.2).sum();
        let mut class: Vec<ClassEntry> = Vec::new();

        let consider = |class: &mut Vec<ClassEntry>,
                            by_size: &[Vec<ClassEntry>],
                            oi: usize,
                            ls: usize,
                            li: usize,
                            ri: usize|
         -> Option<()> {
            let op = ops[oi];
            let left = &by_size[ls - 1][li];
            if banned_pair(&op, &left.nodes) {
                return None;
            }
            let dim = if op.arity() == 1 {
                forward_apply(op, &left.dim, None)
            } else {
                let right = &by_size[size - 1 - ls - 1][ri];
                forward_apply(op, &left.dim, Some(&right.dim))
            }
            .expect("arity consistent");
            let DimResult::Defined(dim) = dim else {
                return None;
            };
            let mut nodes = Vec::with_capacity(size);
            nodes.push(Node::Op(op));
            nodes.extend_from_slice(&left.nodes);
            if op.arity() == 2 {
                nodes.extend_from_slice(&by_size[size - 1 - ls - 1][ri].nodes);
            }
            class.push(ClassEntry { dim, nodes });
            Some(())
        };

        if total <= cap as u64 {
            // Small space: enumerate everything in deterministic order.
            for (oi, ls, _) in &shapes {
                let op = ops[*oi];
                let ln = by_size[ls - 1].len();
                let rn = if op.arity() == 1 {
                    1
                } else {
                    by_size[size - 1 - ls - 1].len()
                };
                for li in 0..ln {
                    for ri in 0..rn {
                        let _ = consider(&mut class, &by_size, *oi, *ls, li, ri);
                    }
                }
            }
        } else {
            // Large space: sample shapes weighted by their raw counts,
            // rejecting duplicates. The attempt bound keeps construction
            // finite when most of the space is invalid.
            let mut seen: HashSet<Vec<u8>> = HashSet::new();
            let mut attempts = 0u64;
            let max_attempts = 4 * cap as u64;
            while class.len() < cap && attempts < max_attempts {
                attempts += 1;
                let mut pick = rng.random_range(0..total);
                let &(oi, ls, _) = shapes
                    .iter()
                    .find(|(_, _, c)| {
                        if pick < *c {
                            true
                        } else {
                            pick -= c;
                            false
                        }
                    })
                    .expect("pick < total");
                let op = ops[oi];
                let li = rng.random_range(0..by_size[ls - 1].len());
                let ri = if op.arity() == 1 {
                    0
                } else {
                    rng.random_range(0..by_size[size - 1 - ls - 1].len())
                };
                let before = class.len();
                if consider(&mut class, &by_size, oi, ls, li, ri).is_some() {
                    let key = candidate_key(&class[before].nodes);
                    if !seen.insert(key) {
                        class.truncate(before);
                    }
                }
            }
        }
        class.truncate(cap);
        by_size.push(class);
    }

    let mut entries: BTreeMap<(DimVec, usize), Vec<Vec<Node>>> = BTreeMap::new();
    for (si, class) in by_size.into_iter().enumerate() {
        for entry in class {
            entries
                .entry((entry.dim, si + 1))
                .or_default()
                .push(entry.nodes);
        }
    }
    SemanticLibrary {
        entries,
        head_len,
        cap,
        banned: banned.to_vec(),
    }
}

/// Fetches a random subtree producing exactly `dim` with size ≤
/// `max_size`: a uniform choice among the non-empty size classes, then a
/// uniform entry within the class. Returns a copy, or nothing when no key
/// matches.
pub fn lookup(
    lib: &SemanticLibrary,
    dim: &DimVec,
    max_size: usize,
    rng: &mut impl Rng,
) -> Option<Vec<Node>> {
    let top = max_size.min(lib.head_len);
    if top < 1 {
        return None;
    }
    let classes: Vec<&Vec<Vec<Node>>> = lib
        .entries
        .range((*dim, 1)..=(*dim, top))
        .map(|(_, list)| list)
        .filter(|list| !list.is_empty())
        .collect();
    if classes.is_empty() {
        return None;
    }
    let class = classes[rng.random_range(0..classes.len())];
    Some(class[rng.random_range(0..class.len())].clone())
}

fn gene_capacity(head_len: usize) -> usize {
    2 * head_len + 1
}

/// The child-visit step of the repair pass: accept the child if its
/// dimension already matches `target`, otherwise try a library
/// substitution (bounded so the gene still encodes) and fall back to
/// recursing into the child.
fn repair_child(
    tree: &mut ExprTree,
    child: usize,
    target: &DimVec,
    lib: &SemanticLibrary,
    epsilon: f64,
    head_len: usize,
    table: &SymbolTable,
    rng: &mut impl Rng,
) -> bool {
    if result_distance(&tree.dims[child], target) < epsilon {
        return true;
    }
    // Everything outside this subtree stays; the replacement may use
    // whatever capacity remains.
    let outside = tree.len() - tree.sizes[child] as usize;
    let budget = gene_capacity(head_len).saturating_sub(outside);
    if budget >= 1 {
        if let Some(replacement) = lookup(lib, target, budget, rng) {
            let saved = tree.nodes.clone();
            tree.replace_subtree(child, &replacement, table)
                .expect("library entries are complete trees");
            if encodable(&tree.nodes, head_len) {
                return true;
            }
            // The size fit but an operator would land in the tail; undo
            // and repair inside the child instead.
            tree.nodes = saved;
            tree.recompute(table).expect("restoring the original tree");
        }
    }
    propagate_change(tree, child, target, lib, epsilon, head_len, table, rng)
}

/// Attempts to drive the dimension of the subtree rooted at `node` to
/// `target` by backpropagating child targets and substituting mismatched
/// children from the library.
///
/// Children are visited left then right; the right child's target is
/// re-derived after the left visit so it absorbs the actual residual.
/// Substitutions are size-bounded by the gene capacity remaining outside
/// the replaced subtree, and are rolled back if the repaired tree would
/// not re-encode. Returns whether the subtree's dimension matches
/// `target` within `epsilon` afterwards (verified by the forward pass the
/// tree caches maintain); on failure the tree keeps any partial repairs.
#[allow(clippy::too_many_arguments)]
pub fn propagate_change(
    tree: &mut ExprTree,
    node: usize,
    target: &DimVec,
    lib: &SemanticLibrary,
    epsilon: f64,
    head_len: usize,
    table: &SymbolTable,
    rng: &mut impl Rng,
) -> bool {
    if result_distance(&tree.dims[node], target) < epsilon {
        return true;
    }
    let Node::Op(op) = tree.nodes[node] else {
        // A leaf has no children to adjust; substitution was the parent's
        // job.
        return false;
    };
    if op.arity() == 1 {
        match backward_split(op, target, None, None) {
            Ok((child_target, _)) => {
                repair_child(
                    tree,
                    node + 1,
                    &child_target,
                    lib,
                    epsilon,
                    head_len,
                    table,
                    rng,
                );
            }
            Err(_) => return false, // no backward rule (pow 0)
        }
    } else {
        let c1 = tree.child1(node);
        let c2 = tree.child2(node);
        let left_known = tree.dims[c1].defined().copied();
        let right_known = tree.dims[c2].defined().copied();
        let Ok((left_target, right_fallback)) =
            backward_split(op, target, left_known.as_ref(), right_known.as_ref())
        else {
            return false;
        };
        repair_child(tree, c1, &left_target, lib, epsilon, head_len, table, rng);
        // The left subtree may have changed size and dimension; re-derive
        // the right child's position and residual target.
        let c2 = tree.child2(node);
        let right_target = match tree.dims[c1].defined() {
            Some(left_now) => backward_split(op, target, Some(left_now), None)
                .map(|(_, r)| r)
                .unwrap_or(right_fallback),
            None => right_fallback,
        };
        repair_child(tree, c2, &right_target, lib, epsilon, head_len, table, rng);
    }
    result_distance(&tree.dims[node], target) < epsilon
}

/// Folds per-gene dimensions through the linking operator.
fn linked_dim(trees: &[ExprTree], linker: Op) -> DimResult {
    let mut acc = *trees[0].root_dim();
    for t in &trees[1..] {
        acc = match (&acc, t.root_dim()) {
            (DimResult::Defined(a), DimResult::Defined(b)) => {
                forward_apply(linker, a, Some(b)).expect("binary linker")
            }
            _ => DimResult::Undefined,
        };
    }
    acc
}

/// Derives a per-gene target dimension by backward-splitting the root
/// target down the left-leaning linker spine. Genes whose current
/// dimension already serves as the known side keep it; the sibling
/// receives the residual.
fn gene_targets(trees: &[ExprTree], linker: Op, root_target: &DimVec) -> Vec<DimVec> {
    let n = trees.len();
    let mut targets = vec![DimVec::ZERO; n];
    let mut current = *root_target;
    for i in (1..n).rev() {
        let left_fold = linked_dim(&trees[..i], linker);
        let (lt, rt) = backward_split(
            linker,
            &current,
            left_fold.defined(),
            trees[i].root_dim().defined(),
        )
        .expect("binary linker");
        targets[i] = rt;
        current = lt;
    }
    targets[0] = current;
    targets
}

/// Per-chromosome correction outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChromosomeCorrection {
    /// Linked dimension matched the target before any repair.
    pub was_homogeneous: bool,
    /// Linked dimension matches the target now.
    pub is_homogeneous: bool,
    /// At least one gene was rewritten.
    pub modified: bool,
}

/// Runs up to `cycles` repair attempts on one chromosome.
///
/// Each cycle derives per-gene targets from the root target, repairs
/// mismatched gene trees, and stops early once the linked dimension
/// matches. Repaired trees are re-encoded into their genes; if any
/// re-encoding fails the chromosome reverts to its original state.
pub fn correct_chromosome(
    chromosome: &mut Chromosome,
    table: &SymbolTable,
    lib: &SemanticLibrary,
    target: &DimVec,
    cycles: usize,
    epsilon: f64,
    rng: &mut impl Rng,
) -> ChromosomeCorrection {
    let head_len = chromosome.genes[0].head_len;
    let mut trees: Vec<ExprTree> = chromosome
        .genes
        .iter()
        .map(|g| decode(g, table).0)
        .collect();
    let matches = |trees: &[ExprTree]| {
        result_distance(&linked_dim(trees, chromosome.linker), target) < epsilon
    };
    let was_homogeneous = matches(&trees);
    let mut gene_modified = vec![false; trees.len()];
    let mut is_homogeneous = was_homogeneous;
    if !was_homogeneous {
        for _ in 0..cycles {
            let targets = gene_targets(&trees, chromosome.linker, target);
            for (i, tree) in trees.iter_mut().enumerate() {
                if result_distance(tree.root_dim(), &targets[i]) < epsilon {
                    continue;
                }
                let before = tree.nodes.clone();
                repair_child(
                    tree, 0, &targets[i], lib, epsilon, head_len, table, rng,
                );
                if tree.nodes != before {
                    gene_modified[i] = true;
                }
            }
            if matches(&trees) {
                is_homogeneous = true;
                break;
            }
        }
        is_homogeneous = is_homogeneous || matches(&trees);
    }
    let modified = gene_modified.iter().any(|m| *m);
    if modified {
        let original = chromosome.clone();
        for (i, tree) in trees.iter().enumerate() {
            if !gene_modified[i] {
                continue;
            }
            match encode(tree, head_len, table, rng) {
                Ok(gene) => chromosome.genes[i] = gene,
                Err(_) => {
                    // Should be unreachable thanks to the encodability
                    // guard at splice time, but never corrupt a genome.
                    *chromosome = original;
                    return ChromosomeCorrection {
                        was_homogeneous,
                        is_homogeneous: was_homogeneous,
                        modified: false,
                    };
                }
            }
        }
    }
    ChromosomeCorrection {
        was_homogeneous,
        is_homogeneous,
        modified,
    }
}

/// Aggregate statistics from a population correction pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrectionStats {
    pub population: usize,
    pub homogeneous_before: usize,
    pub homogeneous_after: usize,
}

impl CorrectionStats {
    pub fn fraction_before(&self) -> f64 {
        self.homogeneous_before as f64 / self.population.max(1) as f64
    }

    pub fn fraction_after(&self) -> f64 {
        self.homogeneous_after as f64 / self.population.max(1) as f64
    }
}

/// Applies [`correct_chromosome`] to a whole population, using an
/// independent deterministic random stream per individual (streamed off
/// `seed` by index, so results do not depend on iteration order).
pub fn correct_population(
    population: &mut [Chromosome],
    table: &SymbolTable,
    lib: &SemanticLibrary,
    target: &DimVec,
    cycles: usize,
    epsilon: f64,
    seed: u64,
) -> CorrectionStats {
    let mut stats = CorrectionStats {
        population: population.len(),
        homogeneous_before: 0,
        homogeneous_after: 0,
    };
    for (i, chromosome) in population.iter_mut().enumerate() {
        let mut rng = crate::stream_rng(seed, i as u64);
        let outcome =
            correct_chromosome(chromosome, table, lib, target, cycles, epsilon, &mut rng);
        stats.homogeneous_before += usize::from(outcome.was_homogeneous);
        stats.homogeneous_after += usize::from(outcome.is_homogeneous);
    }
    stats
}

// ---------------------------------------------------------------------------
// Persistence

/// On-disk schema version for library dumps.
pub const LIBRARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LibraryIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed library file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("library format version {found} (this build reads {LIBRARY_FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("library checksum mismatch: file is corrupt or was edited")]
    ChecksumMismatch,
    #[error("library references unknown symbol `{name}`")]
    UnknownSymbol { name: String },
    #[error("library entry under key ({dim}, {size}) is invalid: {reason}")]
    BadEntry {
        dim: String,
        size: usize,
        reason: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryDump {
    dim: Vec<String>,
    size: usize,
    trees: Vec<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LibraryDump {
    version: u32,
    head_len: usize,
    cap: usize,
    banned: Vec<String>,
    sha256: String,
    entries: Vec<EntryDump>,
}

fn node_name(node: &Node, table: &SymbolTable) -> String {
    match node {
        Node::Op(op) => op.name(),
        Node::Var(col) => table.entry(table.var_id(*col).expect("known column")).name.clone(),
        Node::Const(v) => format!("{v}"),
    }
}

fn dump_entries(lib: &SemanticLibrary, table: &SymbolTable) -> Vec<EntryDump> {
    lib.entries
        .iter()
        .map(|((dim, size), list)| EntryDump {
            dim: dim.0.iter().map(format_rational).collect(),
            size: *size,
            trees: list
                .iter()
                .map(|nodes| nodes.iter().map(|n| node_name(n, table)).collect())
                .collect(),
        })
        .collect()
}

fn entries_checksum(entries: &[EntryDump]) -> String {
    let bytes = serde_json::to_vec(entries).expect("serializable");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a library to disk as versioned, checksummed JSON. Symbols are
/// stored by name so a dump is readable and survives id reassignment.
pub fn save_library(
    lib: &SemanticLibrary,
    table: &SymbolTable,
    path: &Path,
) -> Result<(), LibraryIoError> {
    let entries = dump_entries(lib, table);
    let dump = LibraryDump {
        version: LIBRARY_FORMAT_VERSION,
        head_len: lib.head_len,
        cap: lib.cap,
        banned: lib.banned.iter().map(Op::name).collect(),
        sha256: entries_checksum(&entries),
        entries,
    };
    let json = serde_json::to_string_pretty(&dump)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Reads a library dump back, verifying the format version, the
/// checksum, and that every entry still decodes over `table` to a tree
/// whose dimension equals its key.
pub fn load_library(path: &Path, table: &SymbolTable) -> Result<SemanticLibrary, LibraryIoError> {
    let text = std::fs::read_to_string(path)?;
    let dump: LibraryDump = serde_json::from_str(&text)?;
    if dump.version != LIBRARY_FORMAT_VERSION {
        return Err(LibraryIoError::VersionMismatch {
            found: dump.version,
        });
    }
    if entries_checksum(&dump.entries) != dump.sha256 {
        return Err(LibraryIoError::ChecksumMismatch);
    }

    let mut name_to_node = std::collections::HashMap::new();
    for col in 0..table.n_vars() {
        let id = table.var_id(col).expect("column in range");
        name_to_node.insert(table.entry(id).name.clone(), Node::Var(col));
    }

    let resolve = |name: &str| -> Result<Node, LibraryIoError> {
        if let Some(node) = name_to_node.get(name) {
            return Ok(*node);
        }
        if let Some(op) = Op::from_name(name) {
            return Ok(Node::Op(op));
        }
        if let Ok(v) = name.parse::<f64>() {
            return Ok(Node::Const(v));
        }
        Err(LibraryIoError::UnknownSymbol { name: name.into() })
    };

    let mut entries: BTreeMap<(DimVec, usize), Vec<Vec<Node>>> = BTreeMap::new();
    for entry in &dump.entries {
        let bad = |reason: &str| LibraryIoError::BadEntry {
            dim: entry.dim.join(","),
            size: entry.size,
            reason: reason.into(),
        };
        if entry.dim.len() != 7 {
            return Err(bad("dimension must have 7 components"));
        }
        let mut comps = [DimVec::ZERO.0[0]; 7];
        for (c, text) in comps.iter_mut().zip(&entry.dim) {
            *c = parse_rational(text).ok_or_else(|| bad("unparseable exponent"))?;
        }
        let dim = DimVec(comps);
        let mut list = Vec::with_capacity(entry.trees.len());
        for tree_names in &entry.trees {
            let nodes = tree_names
                .iter()
                .map(|n| resolve(n))
                .collect::<Result<Vec<Node>, _>>()?;
            if nodes.len() != entry.size {
                return Err(bad("tree size differs from key size"));
            }
            compute_sizes(&nodes).map_err(|_| bad("not a complete pre-order tree"))?;
            let tree = ExprTree::from_preorder(nodes.clone(), table)
                .map_err(|_| bad("tree does not evaluate over this symbol table"))?;
            if *tree.root_dim() != DimResult::Defined(dim) {
                return Err(bad("tree dimension differs from key"));
            }
            list.push(nodes);
        }
        entries.insert((dim, entry.size), list);
    }
    Ok(SemanticLibrary {
        entries,
        head_len: dump.head_len,
        cap: dump.cap,
        banned: dump
            .banned
            .iter()
            .map(|n| Op::from_name(n).ok_or(LibraryIoError::UnknownSymbol { name: n.clone() }))
            .collect::<Result<_, _>>()?,
    })
}
