//! Symbolic regression by gene expression programming with unit-aware
//! expression repair.
//!
//! The crate evolves fixed-length linear genomes that decode into
//! expression trees, and keeps candidate expressions dimensionally
//! homogeneous: every subexpression carries a vector of SI base-unit
//! exponents, violations are detected by forward propagation, and a
//! library of dimension-indexed subtrees repairs offending branches by
//! backpropagating target dimensions down the tree.
//!
//! Module map:
//!
//! - [`dimension`]: exponent vectors, forward/backward operator rules,
//!   distance metrics, unit-expression parsing.
//! - [`genome`]: symbol tables, genes and chromosomes, decoding to and
//!   encoding from expression trees.
//! - [`semantics`]: the subtree library and the repair pass.
//! - [`fitness`]: datasets, batch evaluation, regularized loss, and
//!   gradient-free coefficient tuning.
//! - [`evolution`]: variation operators and the generational loop.
//! - [`bench`]: benchmark protocol pieces — noise injection, splits,
//!   accuracy and solution checks, rank statistics, run records.
//! - [`problems`]: built-in physics recovery problems.
//! - [`cli`]: the command-line front end.

pub mod bench;
pub mod cli;
pub mod dimension;
pub mod evolution;
pub mod fitness;
pub mod genome;
pub mod problems;
pub mod semantics;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent deterministic random stream from a run seed.
///
/// Everything stochastic in the engine draws from streams keyed by the
/// run seed plus a structural index (individual, generation, trial), so
/// results are bit-reproducible and identical whether work is executed
/// serially or in parallel.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Compiles every Rust snippet in the guide (and the README) as a doc
/// test, so the prose can never drift out of sync with the API.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(readme, "../../../README.md");
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(units, "../../../book/src/units.md");
    chapter!(genomes, "../../../book/src/genomes.md");
    chapter!(repair, "../../../book/src/repair.md");
    chapter!(search, "../../../book/src/search.md");
    chapter!(benchmarking, "../../../book/src/benchmarking.md");
    chapter!(cli, "../../../book/src/cli.md");
}
