pub mod benchmark;
pub mod detect;
pub mod nbv;
pub mod register;
pub mod render;

use std::path::{Path, PathBuf};

/// `explicit`, or `name` inside the output directory.
pub(crate) fn out_path(explicit: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| dir.join(name))
}
