//! Regenerates the bundled problem files.
//!
//! ```text
//! cargo run --example make_problems -- problems
//! ```
//!
//! Output is deterministic, so running this twice produces identical
//! files; the `problems/` directory in the repository is its output.

use std::path::PathBuf;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("problems"));
    dimsr::problems::write_builtin_files(&dir).expect("write problem files");
    for name in dimsr::problems::builtin_names() {
        println!("wrote {}/{name}.spec and {}/{name}.csv", dir.display(), dir.display());
    }
}
