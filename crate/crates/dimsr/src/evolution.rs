//! Canonical gene-expression-programming operators, tournament
//! selection, and the generational loop with the repair hook.
//!
//! All variation acts on the linear genotype only; phenotype trees are
//! re-decoded after every modification. Because heads and tails keep
//! their position classes under every operator, offspring are always
//! structurally valid. Every stochastic decision draws from a stream
//! keyed by `(seed, generation, slot)`, so runs are bit-reproducible
//! and independent of evaluation order.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::RunRecord;
use crate::dimension::{DimResult, Op};
use crate::fitness::{
    dimension_penalty, loss, optimize_coefficients, tree_coefficients, CgOptions, EvalBudget,
    Problem,
};
use crate::genome::{
    fresh_const, link, random_chromosome, Chromosome, GenomeError, SymbolTable,
};
use crate::semantics::{correct_chromosome, SemanticLibrary, DEFAULT_EPSILON};
use crate::stream_rng;

/// Stream-id stride between generations; slot indices stay below it.
const GENERATION_STRIDE: u64 = 1 << 24;

/// How fitness accounts for dimensional homogeneity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HomogeneityMode {
    /// Plain MSE; dimensions ignored entirely.
    None,
    /// MSE plus λ times the dimension penalty.
    Penalty,
    /// Semantic repair before evaluation; λ may add a residual penalty.
    Sbp,
    /// Hard rejection: infinite fitness unless the root dimension
    /// matches the target exactly.
    Discard,
}

impl fmt::Display for HomogeneityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HomogeneityMode::None => "none",
            HomogeneityMode::Penalty => "penalty",
            HomogeneityMode::Sbp => "sbp",
            HomogeneityMode::Discard => "discard",
        })
    }
}

impl FromStr for HomogeneityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(HomogeneityMode::None),
            "penalty" => Ok(HomogeneityMode::Penalty),
            "sbp" => Ok(HomogeneityMode::Sbp),
            "discard" => Ok(HomogeneityMode::Discard),
            other => Err(format!(
                "unknown mode '{other}' (expected none, penalty, sbp, or discard)"
            )),
        }
    }
}

/// Engine parameters. Defaults follow common GEP practice for the small
/// recovery problems; sweeps override them per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub generations: usize,
    pub head_length: usize,
    pub gene_count: usize,
    pub tournament_size: usize,
    /// Probability that a next-generation slot is bred by variation
    /// operators; the remainder copies tournament winners unchanged.
    pub mating_fraction: f64,
    /// Per-position resampling probability.
    pub p_mutation: f64,
    /// Per-gene head-segment reversal probability.
    pub p_inversion: f64,
    pub p_xover1: f64,
    pub p_xover2: f64,
    /// Weight of the dimension penalty in the loss.
    pub lambda: f64,
    /// Repair attempts per individual in `sbp` mode.
    pub correction_cycles: usize,
    /// Hard cap on fitness evaluations, including coefficient tuning.
    pub max_evaluations: u64,
    pub seed: u64,
    /// Stop once the best loss falls below this; 0 disables the stop.
    pub loss_tolerance: f64,
    pub mode: HomogeneityMode,
    /// Number of best individuals whose coefficients are tuned per
    /// generation; 0 disables tuning.
    pub cg_top_k: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            population_size: 500,
            generations: 1000,
            head_length: 8,
            gene_count: 3,
            tournament_size: 3,
            mating_fraction: 0.5,
            p_mutation: 0.2,
            p_inversion: 0.1,
            p_xover1: 0.5,
            p_xover2: 0.4,
            lambda: 0.0,
            correction_cycles: 5,
            max_evaluations: 1_000_000,
            seed: 0,
            loss_tolerance: 0.0,
            mode: HomogeneityMode::None,
            cg_top_k: 10,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let fail = |msg: String| Err(EvolutionError::InvalidConfig(msg));
        if self.head_length < 1 {
            return fail("head_length must be at least 1".into());
        }
        if self.gene_count < 1 {
            return fail("gene_count must be at least 1".into());
        }
        if self.population_size < 1 {
            return fail("population_size must be at least 1".into());
        }
        if self.population_size as u64 >= GENERATION_STRIDE {
            return fail(format!(
                "population_size must stay below {GENERATION_STRIDE} to fit the stream index space"
            ));
        }
        if self.tournament_size < 1 || self.tournament_size > self.population_size {
            return fail(format!(
                "tournament_size must lie in 1..={}, got {}",
                self.population_size, self.tournament_size
            ));
        }
        if !(self.mating_fraction > 0.0 && self.mating_fraction <= 1.0) {
            return fail(format!(
                "mating_fraction must lie in (0, 1], got {}",
                self.mating_fraction
            ));
        }
        for (name, p) in [
            ("p_mutation", self.p_mutation),
            ("p_inversion", self.p_inversion),
            ("p_xover1", self.p_xover1),
            ("p_xover2", self.p_xover2),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return fail(format!("lambda must be finite and ≥ 0, got {}", self.lambda));
        }
        match self.mode {
            HomogeneityMode::None if self.lambda != 0.0 => {
                return fail(format!(
                    "mode 'none' ignores the penalty; set lambda to 0 (got {})",
                    self.lambda
                ));
            }
            HomogeneityMode::Penalty if self.lambda == 0.0 => {
                return fail("mode 'penalty' requires lambda > 0".into());
            }
            HomogeneityMode::Discard if self.lambda != 0.0 => {
                return fail(format!(
                    "mode 'discard' rejects violations outright; set lambda to 0 (got {})",
                    self.lambda
                ));
            }
            HomogeneityMode::Sbp if self.correction_cycles < 1 => {
                return fail("mode 'sbp' requires correction_cycles ≥ 1".into());
            }
            _ => {}
        }
        if self.max_evaluations < self.population_size as u64 {
            return fail(format!(
                "max_evaluations ({}) must cover at least one full population ({})",
                self.max_evaluations, self.population_size
            ));
        }
        if !(self.loss_tolerance >= 0.0) {
            return fail(format!(
                "loss_tolerance must be ≥ 0, got {}",
                self.loss_tolerance
            ));
        }
        Ok(())
    }
}

/// One candidate solution: the genotype plus caches derived from its
/// linked phenotype tree. Caches (and the fitness) are rebuilt whenever
/// the chromosome changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub chromosome: Chromosome,
    /// Mode-dependent loss; +∞ until evaluated (or for rejected trees).
    pub fitness: f64,
    pub dim_of_root: DimResult,
    /// Current coefficient values in slot order.
    pub coefficients: Vec<f64>,
    /// Linked-tree node count; the selection tie-breaker.
    pub complexity: usize,
    /// Whether `fitness` reflects the current chromosome.
    pub evaluated: bool,
}

impl Individual {
    pub fn from_chromosome(chromosome: Chromosome, table: &SymbolTable) -> Individual {
        let tree = link(&chromosome, table);
        Individual {
            fitness: f64::INFINITY,
            dim_of_root: *tree.root_dim(),
            coefficients: tree_coefficients(&tree),
            complexity: tree.len(),
            chromosome,
            evaluated: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvolutionError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mode 'sbp' needs a semantic library; none was supplied")]
    LibraryRequired,
    #[error("crossover requires identical genome shapes")]
    ShapeMismatch,
    #[error("cannot select from an empty population")]
    EmptyPopulation,
    #[error("tournament size {k} exceeds population size {n}")]
    TournamentTooLarge { k: usize, n: usize },
    #[error(transparent)]
    Genome(#[from] GenomeError),
}

/// Resamples every position independently with probability `p`: head
/// positions draw from the full symbol set, tail positions from
/// terminals only. A resampled constant position receives a fresh value.
pub fn mutate(
    ind: &Individual,
    p: f64,
    table: &SymbolTable,
    rng: &mut impl Rng,
) -> Individual {
    let mut chromosome = ind.chromosome.clone();
    let n_symbols = table.nonterminals().len() + table.terminals().len();
    for gene in &mut chromosome.genes {
        for pos in 0..gene.symbols.len() {
            if rng.random::<f64>() < p {
                let id = if pos < gene.head_len {
                    let pick = rng.random_range(0..n_symbols);
                    if pick < table.nonterminals().len() {
                        table.nonterminals()[pick]
                    } else {
                        table.terminals()[pick - table.nonterminals().len()]
                    }
                } else {
                    let pick = rng.random_range(0..table.terminals().len());
                    table.terminals()[pick]
                };
                gene.symbols[pos] = id;
                if table.constant_id() == Some(id) {
                    gene.consts[pos] = fresh_const(rng);
                }
            }
        }
    }
    Individual::from_chromosome(chromosome, table)
}

/// Reverses `gene`'s head segment `[i, j]`, carrying constants along.
fn reverse_head_segment(gene: &mut crate::genome::Gene, i: usize, j: usize) {
    debug_assert!(j < gene.head_len);
    gene.symbols[i..=j].reverse();
    gene.consts[i..=j].reverse();
}

/// With probability `p` per gene, reverses a random contiguous segment
/// inside the head. The tail is never touched, so validity is preserved.
pub fn invert(ind: &Individual, p: f64, table: &SymbolTable, rng: &mut impl Rng) -> Individual {
    let mut chromosome = ind.chromosome.clone();
    for gene in &mut chromosome.genes {
        if rng.random::<f64>() < p {
            let a = rng.random_range(0..gene.head_len);
            let b = rng.random_range(0..gene.head_len);
            reverse_head_segment(gene, a.min(b), a.max(b));
        }
    }
    Individual::from_chromosome(chromosome, table)
}

fn same_shape(a: &Chromosome, b: &Chromosome) -> bool {
    a.genes.len() == b.genes.len()
        && a.genes.iter().zip(&b.genes).all(|(x, y)| {
            x.head_len == y.head_len && x.symbols.len() == y.symbols.len()
        })
}

/// Swaps the flat chromosome-string positions `[from, to)` between two
/// chromosomes, constants included.
fn swap_range(a: &mut Chromosome, b: &mut Chromosome, from: usize, to: usize) {
    let gene_len = a.genes[0].symbols.len();
    for t in from..to {
        let (g, pos) = (t / gene_len, t % gene_len);
        std::mem::swap(&mut a.genes[g].symbols[pos], &mut b.genes[g].symbols[pos]);
        std::mem::swap(&mut a.genes[g].consts[pos], &mut b.genes[g].consts[pos]);
    }
}

fn one_point_at(
    a: &Chromosome,
    b: &Chromosome,
    cut: usize,
    table: &SymbolTable,
) -> (Individual, Individual) {
    let total = a.genes.len() * a.genes[0].symbols.len();
    let mut ca = a.clone();
    let mut cb = b.clone();
    swap_range(&mut ca, &mut cb, cut, total);
    (
        Individual::from_chromosome(ca, table),
        Individual::from_chromosome(cb, table),
    )
}

fn two_point_at(
    a: &Chromosome,
    b: &Chromosome,
    cut1: usize,
    cut2: usize,
    table: &SymbolTable,
) -> (Individual, Individual) {
    let mut ca = a.clone();
    let mut cb = b.clone();
    swap_range(&mut ca, &mut cb, cut1, cut2);
    (
        Individual::from_chromosome(ca, table),
        Individual::from_chromosome(cb, table),
    )
}

/// Exchanges the suffixes of the two chromosome strings from a uniform
/// cut position. Position classes align, so validity is preserved.
pub fn crossover_one_point(
    a: &Individual,
    b: &Individual,
    table: &SymbolTable,
    rng: &mut impl Rng,
) -> Result<(Individual, Individual), EvolutionError> {
    if !same_shape(&a.chromosome, &b.chromosome) {
        return Err(EvolutionError::ShapeMismatch);
    }
    let total = a.chromosome.genes.len() * a.chromosome.genes[0].symbols.len();
    let cut = rng.random_range(0..total);
    Ok(one_point_at(&a.chromosome, &b.chromosome, cut, table))
}

/// Exchanges the segment between two sorted uniform cut positions.
pub fn crossover_two_point(
    a: &Individual,
    b: &Individual,
    table: &SymbolTable,
    rng: &mut impl Rng,
) -> Result<(Individual, Individual), EvolutionError> {
    if !same_shape(&a.chromosome, &b.chromosome) {
        return Err(EvolutionError::ShapeMismatch);
    }
    let total = a.chromosome.genes.len() * a.chromosome.genes[0].symbols.len();
    let c1 = rng.random_range(0..=total);
    let c2 = rng.random_range(0..=total);
    Ok(two_point_at(
        &a.chromosome,
        &b.chromosome,
        c1.min(c2),
        c1.max(c2),
        table,
    ))
}

/// Samples `k` contenders without replacement and returns the best:
/// lowest fitness, ties broken by lower complexity, then lower index.
pub fn tournament_select<'a>(
    pop: &'a [Individual],
    k: usize,
    rng: &mut impl Rng,
) -> Result<&'a Individual, EvolutionError> {
    if pop.is_empty() {
        return Err(EvolutionError::EmptyPopulation);
    }
    if k > pop.len() {
        return Err(EvolutionError::TournamentTooLarge { k, n: pop.len() });
    }
    let contenders = rand::seq::index::sample(rng, pop.len(), k);
    let winner = contenders
        .iter()
        .min_by(|&i, &j| {
            pop[i]
                .fitness
                .total_cmp(&pop[j].fitness)
                .then(pop[i].complexity.cmp(&pop[j].complexity))
                .then(i.cmp(&j))
        })
        .expect("k >= 1");
    Ok(&pop[winner])
}

/// Assigns mode-dependent fitness from the current chromosome. Counts as
/// one evaluation regardless of mode.
fn evaluate(ind: &mut Individual, problem: &Problem, config: &EvolutionConfig) {
    let tree = link(&ind.chromosome, &problem.table);
    ind.dim_of_root = *tree.root_dim();
    ind.complexity = tree.len();
    ind.coefficients = tree_coefficients(&tree);
    ind.fitness = match config.mode {
        HomogeneityMode::None => loss(problem, &tree, &[], 0.0),
        HomogeneityMode::Penalty | HomogeneityMode::Sbp => {
            loss(problem, &tree, &[], config.lambda)
        }
        HomogeneityMode::Discard => match tree.root_dim() {
            DimResult::Defined(d) if *d == problem.target_dim => loss(problem, &tree, &[], 0.0),
            _ => f64::INFINITY,
        },
    };
    ind.evaluated = true;
}

/// Writes tuned coefficients back into the gene constants that the
/// K-expressions read, in linked-tree slot order.
fn write_coefficients(chromosome: &mut Chromosome, table: &SymbolTable, coefficients: &[f64]) {
    let mut it = coefficients.iter();
    for gene in &mut chromosome.genes {
        let mut open = 1usize;
        let mut pos = 0usize;
        while open > 0 {
            let id = gene.symbols[pos];
            open = open - 1 + table.arity(id);
            if table.constant_id() == Some(id) {
                gene.consts[pos] = *it.next().expect("coefficient per constant slot");
            }
            pos += 1;
        }
    }
    debug_assert!(it.next().is_none(), "coefficient count matches slots");
}

/// Applies the repair pass if the mode asks for it; a modified
/// chromosome invalidates the cached fitness.
fn maybe_correct(
    ind: &mut Individual,
    problem: &Problem,
    config: &EvolutionConfig,
    library: Option<&SemanticLibrary>,
    rng: &mut impl Rng,
) {
    if config.mode != HomogeneityMode::Sbp {
        return;
    }
    let lib = library.expect("validated before the loop");
    let outcome = correct_chromosome(
        &mut ind.chromosome,
        &problem.table,
        lib,
        &problem.target_dim,
        config.correction_cycles,
        DEFAULT_EPSILON,
        rng,
    );
    if outcome.modified {
        *ind = Individual::from_chromosome(ind.chromosome.clone(), &problem.table);
    }
}

/// Breeds one next-generation slot: a tournament winner copied
/// unchanged, or — with probability `mating_fraction` — a child of two
/// winners passed through the variation operators in fixed order
/// (one-point crossover, two-point crossover, inversion, mutation).
fn breed(
    pop: &[Individual],
    config: &EvolutionConfig,
    table: &SymbolTable,
    rng: &mut impl Rng,
) -> Result<Individual, EvolutionError> {
    let k = config.tournament_size;
    if rng.random::<f64>() >= config.mating_fraction {
        return Ok(tournament_select(pop, k, rng)?.clone());
    }
    let mut first = tournament_select(pop, k, rng)?.clone();
    let mut second = tournament_select(pop, k, rng)?.clone();
    if rng.random::<f64>() < config.p_xover1 {
        (first, second) = crossover_one_point(&first, &second, table, rng)?;
    }
    if rng.random::<f64>() < config.p_xover2 {
        (first, second) = crossover_two_point(&first, &second, table, rng)?;
    }
    let _ = second;
    let inverted = invert(&first, config.p_inversion, table, rng);
    Ok(mutate(&inverted, config.p_mutation, table, rng))
}

fn best_index(pop: &[Individual]) -> usize {
    (0..pop.len())
        .min_by(|&i, &j| {
            pop[i]
                .fitness
                .total_cmp(&pop[j].fitness)
                .then(pop[i].complexity.cmp(&pop[j].complexity))
                .then(i.cmp(&j))
        })
        .expect("non-empty population")
}

/// Runs the generational loop and reports the best expression found.
///
/// Per generation: build the population (initial sampling, or elitism
/// plus bred offspring), repair it in `sbp` mode, evaluate what the
/// budget allows, tune the coefficients of the `cg_top_k` best, record
/// the best loss, and check the stop conditions (loss below tolerance,
/// budget exhausted, generations exhausted). Test-side record fields
/// (R², solution flag, complexity) are left unset for the harness.
pub fn evolve(
    config: &EvolutionConfig,
    problem: &Problem,
    library: Option<&SemanticLibrary>,
) -> Result<RunRecord, EvolutionError> {
    config.validate()?;
    if config.mode == HomogeneityMode::Sbp && library.is_none() {
        return Err(EvolutionError::LibraryRequired);
    }
    let start = Instant::now();
    let table = &problem.table;
    let mut budget = EvalBudget::new(config.max_evaluations);
    let cg_opts = CgOptions::default();

    let mut pop: Vec<Individual> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut best = 0usize;
    let mut stop_reason = "generations";

    for g in 0..=config.generations {
        // (1) Build this generation; repair travels with each slot's
        // random stream so parallel slot construction stays equivalent.
        if g == 0 {
            pop = (0..config.population_size)
                .map(|i| {
                    let mut rng = stream_rng(config.seed, i as u64);
                    let chromosome = random_chromosome(
                        table,
                        config.head_length,
                        config.gene_count,
                        Op::Add,
                        &mut rng,
                    )?;
                    let mut ind = Individual::from_chromosome(chromosome, table);
                    maybe_correct(&mut ind, problem, config, library, &mut rng);
                    Ok(ind)
                })
                .collect::<Result<_, EvolutionError>>()?;
        } else {
            let elite = pop[best].clone();
            let mut next = Vec::with_capacity(config.population_size);
            next.push(elite);
            for i in 1..config.population_size {
                let mut rng = stream_rng(config.seed, g as u64 * GENERATION_STRIDE + i as u64);
                let mut child = breed(&pop, config, table, &mut rng)?;
                maybe_correct(&mut child, problem, config, library, &mut rng);
                next.push(child);
            }
            pop = next;
        }

        // (2) Evaluate as many stale individuals as the budget allows,
        // in slot order; the cutoff is fixed before any evaluation so
        // the outcome does not depend on scheduling.
        let stale: Vec<usize> = (0..pop.len()).filter(|&i| !pop[i].evaluated).collect();
        let n_eval = stale.len().min(budget.remaining() as usize);
        let charged = budget.try_consume(n_eval as u64);
        debug_assert!(charged);
        for &i in &stale[..n_eval] {
            evaluate(&mut pop[i], problem, config);
        }
        let starved = n_eval < stale.len();

        // (3) Coefficient tuning for the current leaders; each objective
        // call is charged against the same budget.
        if !starved && config.cg_top_k > 0 {
            let mut leaders: Vec<usize> = (0..pop.len())
                .filter(|&i| {
                    pop[i].evaluated
                        && pop[i].fitness.is_finite()
                        && !pop[i].coefficients.is_empty()
                })
                .collect();
            leaders.sort_by(|&i, &j| {
                pop[i]
                    .fitness
                    .total_cmp(&pop[j].fitness)
                    .then(pop[i].complexity.cmp(&pop[j].complexity))
                    .then(i.cmp(&j))
            });
            for &i in leaders.iter().take(config.cg_top_k) {
                let tree = link(&pop[i].chromosome, table);
                let (coefs, tuned_mse) = optimize_coefficients(
                    problem,
                    &tree,
                    &pop[i].coefficients,
                    &cg_opts,
                    &mut budget,
                );
                let tuned_fitness = if config.lambda == 0.0 {
                    tuned_mse
                } else {
                    tuned_mse + config.lambda * dimension_penalty(&tree, &problem.target_dim)
                };
                if tuned_fitness < pop[i].fitness {
                    write_coefficients(&mut pop[i].chromosome, table, &coefs);
                    pop[i].coefficients = coefs;
                    pop[i].fitness = tuned_fitness;
                }
            }
        }

        // (4) Record and test the stop conditions.
        best = best_index(&pop);
        history.push(pop[best].fitness);
        if config.loss_tolerance > 0.0 && pop[best].fitness < config.loss_tolerance {
            stop_reason = "loss_tolerance";
            break;
        }
        if starved || budget.is_exhausted() {
            stop_reason = "evaluations";
            break;
        }
    }

    let champion = &pop[best];
    // A search that never produced a single finite-fitness candidate
    // (e.g. discard mode with no homogeneous individual ever appearing)
    // stagnated, whatever condition formally ended the loop.
    if !champion.fitness.is_finite() {
        stop_reason = "stagnation";
    }
    let tree = link(&champion.chromosome, table);
    let best_mse_train = loss(problem, &tree, &[], 0.0);
    let homogeneous = matches!(
        &champion.dim_of_root,
        DimResult::Defined(d) if *d == problem.target_dim
    );
    Ok(RunRecord {
        problem: String::new(),
        mode: config.mode.to_string(),
        gamma: 0.0,
        trial: 0,
        seed: config.seed,
        best_expression: tree.render(&problem.feature_names),
        best_preorder: preorder_names(&tree, &problem.feature_names),
        best_loss: champion.fitness,
        best_mse_train,
        generations_run: history.len().saturating_sub(1),
        per_generation_best_loss: history,
        evaluations: budget.used(),
        wall_time_ms: start.elapsed().as_millis() as u64,
        stop_reason: stop_reason.to_string(),
        homogeneous,
        r2_test: None,
        symbolic_solution: None,
        complexity: None,
        config: serde_json::to_value(config).expect("config serializes"),
    })
}

/// Pre-order symbol names of a tree, for flat storage in run records.
fn preorder_names(tree: &crate::genome::ExprTree, feature_names: &[String]) -> Vec<String> {
    tree.nodes
        .iter()
        .map(|node| match node {
            crate::genome::Node::Op(op) => op.name(),
            crate::genome::Node::Var(col) => feature_names
                .get(*col)
                .cloned()
                .unwrap_or_else(|| format!("x{col}")),
            crate::genome::Node::Const(v) => v.to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimension::DimVec;
    use crate::genome::{decode, Gene, Node, SymbolKind};
    use crate::semantics::build_library;

    fn dimless_table() -> SymbolTable {
        SymbolTable::new(
            &[Op::Add, Op::Sub, Op::Mul, Op::Div],
            &[
                ("x1".to_string(), DimVec::ZERO),
                ("x2".to_string(), DimVec::ZERO),
            ],
            true,
        )
    }

    fn product_problem(rows: usize) -> Problem {
        let table = dimless_table();
        let mut rng = stream_rng(77, 0);
        let x: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..rows).map(|_| rng.random_range(0.5..3.0)).collect())
            .collect();
        let y: Vec<f64> = (0..rows).map(|r| x[0][r] * x[1][r]).collect();
        Problem {
            x,
            y,
            feature_names: vec!["x1".into(), "x2".into()],
            feature_dims: vec![DimVec::ZERO, DimVec::ZERO],
            target_dim: DimVec::ZERO,
            table,
        }
    }

    fn random_individual(table: &SymbolTable, seed: u64) -> Individual {
        let mut rng = stream_rng(seed, 0);
        let chromosome = random_chromosome(table, 6, 2, Op::Add, &mut rng).unwrap();
        Individual::from_chromosome(chromosome, table)
    }

    fn assert_valid(ind: &Individual, table: &SymbolTable) {
        for gene in &ind.chromosome.genes {
            assert_eq!(gene.symbols.len(), 2 * gene.head_len + 1);
            assert_eq!(gene.consts.len(), gene.symbols.len());
            for pos in gene.head_len..gene.symbols.len() {
                assert!(table.is_terminal(gene.symbols[pos]), "tail holds terminals");
            }
            let (tree, k_len) = decode(gene, table);
            assert!(k_len <= gene.symbols.len());
            assert_eq!(tree.len(), k_len);
        }
    }

    #[test]
    fn mutation_probability_extremes() {
        let table = dimless_table();
        let ind = random_individual(&table, 1);
        let mut rng = stream_rng(1, 1);
        let same = mutate(&ind, 0.0, &table, &mut rng);
        assert_eq!(same.chromosome, ind.chromosome);

        let terminals_only = SymbolTable::new(
            &[],
            &[
                ("x1".to_string(), DimVec::ZERO),
                ("x2".to_string(), DimVec::ZERO),
            ],
            true,
        );
        let base = {
            // Heads may hold terminals, so an all-terminal gene is valid.
            let x1 = terminals_only.var_id(0).unwrap();
            let gene = Gene {
                head_len: 6,
                symbols: vec![x1; 13],
                consts: vec![0.0; 13],
            };
            let chromosome = Chromosome {
                genes: vec![gene.clone(), gene],
                linker: Op::Add,
            };
            Individual::from_chromosome(chromosome, &terminals_only)
        };
        let mut changed_somewhere = false;
        for s in 0..20 {
            let mut rng = stream_rng(3, s);
            let shaken = mutate(&base, 1.0, &terminals_only, &mut rng);
            assert_valid(&shaken, &terminals_only);
            for gene in &shaken.chromosome.genes {
                for &id in &gene.symbols {
                    assert!(terminals_only.is_terminal(id));
                }
            }
            changed_somewhere |= shaken.chromosome != base.chromosome;
        }
        assert!(changed_somewhere, "full resampling leaves traces");
    }

    #[test]
    fn head_mutation_can_break_homogeneity() {
        // Charge q and field E: (1 × q) × E is fine, (1 + q) × E adds a
        // dimensionless constant to a dimensioned quantity.
        let q_dim = DimVec::from_ints([0, 0, 1, 0, 1, 0, 0]);
        let e_dim = DimVec::from_ints([1, 1, -3, 0, -1, 0, 0]);
        let table = SymbolTable::new(
            &[Op::Add, Op::Mul],
            &[("q".to_string(), q_dim), ("E".to_string(), e_dim)],
            true,
        );
        let mul = table.op_id(Op::Mul).unwrap();
        let add = table.op_id(Op::Add).unwrap();
        let c = table.constant_id().unwrap();
        let q = table.var_id(0).unwrap();
        let e = table.var_id(1).unwrap();
        let mut gene = Gene {
            head_len: 2,
            symbols: vec![mul, mul, c, q, e],
            consts: vec![0.0, 0.0, 1.0, 0.0, 0.0],
        };
        let (before, _) = decode(&gene, &table);
        assert!(before.fully_defined());

        gene.symbols[1] = add;
        let (after, _) = decode(&gene, &table);
        assert_eq!(after.nodes[0], Node::Op(Op::Mul));
        assert_eq!(after.nodes[1], Node::Op(Op::Add));
        assert!(after.root_dim().is_undefined());
        assert_eq!(dimension_penalty(&after, &e_dim), f64::INFINITY);
    }

    #[test]
    fn inversion_reverses_head_segments_only() {
        let table = dimless_table();
        let ind = random_individual(&table, 4);
        let mut rng = stream_rng(4, 1);
        let same = invert(&ind, 0.0, &table, &mut rng);
        assert_eq!(same.chromosome, ind.chromosome);

        let mut gene = ind.chromosome.genes[0].clone();
        let head_len = gene.head_len;
        let head: Vec<_> = gene.symbols[..head_len].to_vec();
        reverse_head_segment(&mut gene, 0, head_len - 1);
        let reversed: Vec<_> = gene.symbols[..gene.head_len].to_vec();
        assert_eq!(
            reversed,
            head.iter().rev().copied().collect::<Vec<_>>()
        );
        assert_eq!(
            gene.symbols[gene.head_len..],
            ind.chromosome.genes[0].symbols[gene.head_len..]
        );

        let mut single = ind.chromosome.genes[0].clone();
        let before = single.clone();
        reverse_head_segment(&mut single, 3, 3);
        assert_eq!(single, before);

        for s in 0..50 {
            let mut rng = stream_rng(5, s);
            let flipped = invert(&ind, 1.0, &table, &mut rng);
            assert_valid(&flipped, &table);
            for (g, gene) in flipped.chromosome.genes.iter().enumerate() {
                assert_eq!(
                    gene.symbols[gene.head_len..],
                    ind.chromosome.genes[g].symbols[gene.head_len..],
                    "tail untouched"
                );
            }
        }
    }

    #[test]
    fn crossover_cut_positions() {
        let table = dimless_table();
        let a = random_individual(&table, 6);
        let b = random_individual(&table, 7);
        let total = a.chromosome.genes.len() * a.chromosome.genes[0].symbols.len();

        let (c1, c2) = one_point_at(&a.chromosome, &b.chromosome, 0, &table);
        assert_eq!(c1.chromosome, b.chromosome);
        assert_eq!(c2.chromosome, a.chromosome);

        let (c1, c2) = one_point_at(&a.chromosome, &b.chromosome, total - 1, &table);
        let diff = |x: &Chromosome, y: &Chromosome| {
            x.genes
                .iter()
                .zip(&y.genes)
                .map(|(gx, gy)| {
                    gx.symbols
                        .iter()
                        .zip(&gy.symbols)
                        .filter(|(sx, sy)| sx != sy)
                        .count()
                })
                .sum::<usize>()
        };
        assert!(diff(&c1.chromosome, &a.chromosome) <= 1);
        assert!(diff(&c2.chromosome, &b.chromosome) <= 1);

        let (c1, c2) = two_point_at(&a.chromosome, &b.chromosome, 5, 5, &table);
        assert_eq!(c1.chromosome, a.chromosome);
        assert_eq!(c2.chromosome, b.chromosome);

        let (c1, c2) = two_point_at(&a.chromosome, &b.chromosome, 0, total, &table);
        assert_eq!(c1.chromosome, b.chromosome);
        assert_eq!(c2.chromosome, a.chromosome);

        let mut rng = stream_rng(8, 0);
        let (c1, c2) = crossover_one_point(&a, &a, &table, &mut rng).unwrap();
        assert_eq!(c1.chromosome, a.chromosome);
        assert_eq!(c2.chromosome, a.chromosome);
        let (c1, c2) = crossover_two_point(&a, &a, &table, &mut rng).unwrap();
        assert_eq!(c1.chromosome, a.chromosome);
        assert_eq!(c2.chromosome, a.chromosome);
    }

    #[test]
    fn crossover_rejects_shape_mismatch() {
        let table = dimless_table();
        let a = random_individual(&table, 9);
        let mut rng = stream_rng(9, 0);
        let small = random_chromosome(&table, 3, 2, Op::Add, &mut rng).unwrap();
        let b = Individual::from_chromosome(small, &table);
        let mut rng = stream_rng(9, 1);
        assert_eq!(
            crossover_one_point(&a, &b, &table, &mut rng).unwrap_err(),
            EvolutionError::ShapeMismatch
        );
        assert_eq!(
            crossover_two_point(&a, &b, &table, &mut rng).unwrap_err(),
            EvolutionError::ShapeMismatch
        );
    }

    #[test]
    fn tournament_selection_rules() {
        let table = dimless_table();
        let mut pop: Vec<Individual> =
            (0..8).map(|s| random_individual(&table, 100 + s)).collect();
        for (i, ind) in pop.iter_mut().enumerate() {
            ind.fitness = (8 - i) as f64;
            ind.evaluated = true;
        }
        // k = |pop| always finds the global best (index 7 here).
        let mut rng = stream_rng(10, 0);
        let winner = tournament_select(&pop, pop.len(), &mut rng).unwrap();
        assert_eq!(winner.fitness, 1.0);

        // k = 1 is a uniform draw: different seeds reach different
        // individuals.
        let mut seen = std::collections::BTreeSet::new();
        for s in 0..40 {
            let mut rng = stream_rng(11, s);
            let w = tournament_select(&pop, 1, &mut rng).unwrap();
            seen.insert(w.fitness as i64);
        }
        assert!(seen.len() > 2);

        // All-equal fitness: complexity decides.
        for ind in pop.iter_mut() {
            ind.fitness = 1.0;
        }
        let least = pop.iter().map(|i| i.complexity).min().unwrap();
        let mut rng = stream_rng(12, 0);
        let winner = tournament_select(&pop, pop.len(), &mut rng).unwrap();
        assert_eq!(winner.complexity, least);

        assert_eq!(
            tournament_select(&[], 1, &mut rng).unwrap_err(),
            EvolutionError::EmptyPopulation
        );
        assert!(matches!(
            tournament_select(&pop, 99, &mut rng).unwrap_err(),
            EvolutionError::TournamentTooLarge { k: 99, n: 8 }
        ));
    }

    #[test]
    fn offspring_stay_structurally_valid_under_fuzz() {
        let table = dimless_table();
        let mut rng = stream_rng(13, 0);
        let mut a = random_individual(&table, 14);
        let mut b = random_individual(&table, 15);
        // 25_000 rounds × 4 operators = 100_000 applications.
        for round in 0..25_000 {
            let m = mutate(&a, 0.3, &table, &mut rng);
            let v = invert(&b, 0.5, &table, &mut rng);
            let (c1, c2) = crossover_one_point(&m, &v, &table, &mut rng).unwrap();
            let (d1, _d2) = crossover_two_point(&c1, &c2, &table, &mut rng).unwrap();
            assert_valid(&m, &table);
            assert_valid(&v, &table);
            assert_valid(&c1, &table);
            assert_valid(&d1, &table);
            if round % 2 == 0 {
                a = d1;
            } else {
                b = c2;
            }
        }
    }

    fn quick_config() -> EvolutionConfig {
        EvolutionConfig {
            population_size: 40,
            generations: 10,
            head_length: 4,
            gene_count: 2,
            max_evaluations: 100_000,
            seed: 123,
            cg_top_k: 2,
            ..EvolutionConfig::default()
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let ok = quick_config();
        assert!(ok.validate().is_ok());
        for broken in [
            EvolutionConfig { head_length: 0, ..quick_config() },
            EvolutionConfig { tournament_size: 41, ..quick_config() },
            EvolutionConfig { mating_fraction: 0.0, ..quick_config() },
            EvolutionConfig { p_mutation: 1.5, ..quick_config() },
            EvolutionConfig { lambda: -1.0, ..quick_config() },
            EvolutionConfig { lambda: 1.0, ..quick_config() }, // mode none
            EvolutionConfig { mode: HomogeneityMode::Penalty, ..quick_config() }, // λ = 0
            EvolutionConfig { max_evaluations: 10, ..quick_config() },
        ] {
            assert!(matches!(
                broken.validate(),
                Err(EvolutionError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn zero_generations_evaluates_initial_population_only() {
        let problem = product_problem(32);
        let config = EvolutionConfig {
            generations: 0,
            cg_top_k: 0,
            ..quick_config()
        };
        let record = evolve(&config, &problem, None).unwrap();
        assert_eq!(record.generations_run, 0);
        assert_eq!(record.per_generation_best_loss.len(), 1);
        assert_eq!(record.evaluations, 40);
        assert_eq!(record.stop_reason, "generations");
        assert!(record.best_loss.is_finite());
        assert_eq!(record.per_generation_best_loss[0], record.best_loss);
    }

    #[test]
    fn evolve_is_bit_reproducible() {
        let problem = product_problem(32);
        let config = quick_config();
        let mut a = evolve(&config, &problem, None).unwrap();
        let mut b = evolve(&config, &problem, None).unwrap();
        // Wall time legitimately differs between repeats.
        a.wall_time_ms = 0;
        b.wall_time_ms = 0;
        assert_eq!(a, b);
    }

    #[test]
    fn budget_is_never_exceeded() {
        let problem = product_problem(32);
        for max in [40, 55, 90, 130] {
            let config = EvolutionConfig {
                max_evaluations: max,
                ..quick_config()
            };
            let record = evolve(&config, &problem, None).unwrap();
            assert!(record.evaluations <= max, "{} > {max}", record.evaluations);
            if record.generations_run < config.generations {
                assert_eq!(record.stop_reason, "evaluations");
            }
        }
    }

    #[test]
    fn best_loss_is_monotone_under_elitism() {
        let problem = product_problem(32);
        let config = EvolutionConfig {
            generations: 15,
            ..quick_config()
        };
        let record = evolve(&config, &problem, None).unwrap();
        for pair in record.per_generation_best_loss.windows(2) {
            assert!(pair[1] <= pair[0], "{:?}", record.per_generation_best_loss);
        }
    }

    #[test]
    fn recovers_a_product_law_quickly() {
        let problem = product_problem(64);
        let mut hits = 0;
        for seed in 0..3 {
            let config = EvolutionConfig {
                population_size: 200,
                generations: 60,
                head_length: 4,
                gene_count: 2,
                loss_tolerance: 1e-18,
                max_evaluations: 2_000_000,
                seed,
                ..EvolutionConfig::default()
            };
            let record = evolve(&config, &problem, None).unwrap();
            if record.stop_reason == "loss_tolerance" {
                hits += 1;
            }
        }
        assert!(hits >= 2, "only {hits}/3 seeds converged");
    }

    #[test]
    fn sbp_mode_requires_a_library() {
        let problem = product_problem(16);
        let config = EvolutionConfig {
            mode: HomogeneityMode::Sbp,
            ..quick_config()
        };
        assert_eq!(
            evolve(&config, &problem, None).unwrap_err(),
            EvolutionError::LibraryRequired
        );
    }

    #[test]
    fn sbp_mode_runs_with_a_library() {
        let problem = product_problem(32);
        let mut rng = stream_rng(21, 0);
        let library = build_library(&problem.table, 4, 1000, &[], &mut rng);
        let config = EvolutionConfig {
            mode: HomogeneityMode::Sbp,
            generations: 3,
            ..quick_config()
        };
        let record = evolve(&config, &problem, Some(&library)).unwrap();
        assert_eq!(record.mode, "sbp");
        assert!(record.best_loss.is_finite());
        assert!(record.homogeneous);
    }

    #[test]
    fn discard_mode_stagnates_without_reachable_dimension() {
        // Only a meter-valued feature but a kilogram target: no tree is
        // homogeneous, so every individual keeps infinite fitness.
        let table = SymbolTable::new(
            &[Op::Add, Op::Sub, Op::Mul, Op::Div],
            &[("d".to_string(), DimVec::from_ints([0, 1, 0, 0, 0, 0, 0]))],
            false,
        );
        let mut rng = stream_rng(31, 0);
        let x: Vec<Vec<f64>> = vec![(0..16).map(|_| rng.random_range(1.0..2.0)).collect()];
        let y: Vec<f64> = x[0].iter().map(|v| v * 2.0).collect();
        let problem = Problem {
            x,
            y,
            feature_names: vec!["d".into()],
            feature_dims: vec![DimVec::from_ints([0, 1, 0, 0, 0, 0, 0])],
            target_dim: DimVec::from_ints([1, 0, 0, 0, 0, 0, 0]),
            table,
        };
        let config = EvolutionConfig {
            population_size: 20,
            generations: 3,
            head_length: 3,
            gene_count: 1,
            tournament_size: 3,
            mode: HomogeneityMode::Discard,
            max_evaluations: 10_000,
            seed: 5,
            cg_top_k: 2,
            ..EvolutionConfig::default()
        };
        let record = evolve(&config, &problem, None).unwrap();
        assert_eq!(record.best_loss, f64::INFINITY);
        assert_eq!(record.stop_reason, "stagnation");
        assert!(!record.homogeneous);
        assert!(record
            .per_generation_best_loss
            .iter()
            .all(|l| *l == f64::INFINITY));
    }

    #[test]
    fn mode_strings_round_trip() {
        for mode in [
            HomogeneityMode::None,
            HomogeneityMode::Penalty,
            HomogeneityMode::Sbp,
            HomogeneityMode::Discard,
        ] {
            assert_eq!(mode.to_string().parse::<HomogeneityMode>().unwrap(), mode);
        }
        assert!("exact".parse::<HomogeneityMode>().is_err());
    }

    #[test]
    fn coefficients_write_back_into_gene_constants() {
        let table = dimless_table();
        let mut seed = 0;
        // Find a chromosome whose expressed part uses ≥ 2 constants.
        let (mut chromosome, slots) = loop {
            let mut rng = stream_rng(40, seed);
            let c = random_chromosome(&table, 5, 2, Op::Add, &mut rng).unwrap();
            let tree = link(&c, &table);
            let n = tree_coefficients(&tree).len();
            if n >= 2 {
                break (c, n);
            }
            seed += 1;
        };
        let new: Vec<f64> = (0..slots).map(|i| 10.0 + i as f64).collect();
        write_coefficients(&mut chromosome, &table, &new);
        let tree = link(&chromosome, &table);
        assert_eq!(tree_coefficients(&tree), new);
    }

    #[test]
    fn table_symbol_kinds_are_as_expected() {
        // The mutation operator relies on the id layout: nonterminals
        // then terminals covering every symbol exactly once.
        let table = dimless_table();
        let total = table.nonterminals().len() + table.terminals().len();
        let mut seen = std::collections::BTreeSet::new();
        for &id in table.nonterminals().iter().chain(table.terminals()) {
            assert!(seen.insert(id));
            match table.entry(id).kind {
                SymbolKind::Operator(_) => assert!(!table.is_terminal(id)),
                _ => assert!(table.is_terminal(id)),
            }
        }
        assert_eq!(seen.len(), total);
    }
}
