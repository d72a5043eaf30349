//! Reference Python listings of the native generators.
//!
//! A candidate whose normalized source matches one of these listings can be
//! executed by the matching native generator instead of a guest worker.

use sha2::{Digest, Sha256};

use crate::generators::NativeGenerator;

/// Reference listing for a native generator.
pub fn listing(g: NativeGenerator) -> &'static str {
    match g {
        NativeGenerator::Tnga => include_str!("../listings/tnga.py"),
        NativeGenerator::Tnls => include_str!("../listings/tnls.py"),
        NativeGenerator::GreedyAsTnls => include_str!("../listings/greedy_tnls.py"),
        NativeGenerator::Greedy => include_str!("../listings/greedy.py"),
        NativeGenerator::Ho1 => include_str!("../listings/ho1.py"),
        NativeGenerator::Ho2 => include_str!("../listings/ho2.py"),
        NativeGenerator::Ho3 => include_str!("../listings/ho3.py"),
        NativeGenerator::AblationComponents => include_str!("../listings/ablation_components.py"),
        NativeGenerator::AblationInterface => include_str!("../listings/ablation_interface.py"),
    }
}

/// Line endings unified, trailing whitespace and surrounding blank lines
/// dropped.
pub fn normalize(source: &str) -> String {
    let lines: Vec<&str> = source.lines().map(str::trim_end).collect();
    let joined = lines.join("\n");
    let trimmed = joined.trim_matches('\n');
    format!("{trimmed}\n")
}

/// Hex SHA-256 of the normalized source.
pub fn source_hash(source: &str) -> String {
    Sha256::digest(normalize(source).as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// The native generator whose listing matches `source`, if any.
///
/// Listings with identical text resolve to the first match in
/// [`NativeGenerator::ALL`].
pub fn identify(source: &str) -> Option<NativeGenerator> {
    let normalized = normalize(source);
    NativeGenerator::ALL.into_iter().find(|&g| normalize(listing(g)) == normalized)
}
