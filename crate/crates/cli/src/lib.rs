//! Command-line driver for the part-model pipeline.
//!
//! `epm <subcommand> [--config FILE] [--key value ...]`; see [`config::KEYS`]
//! for every key and its default.

pub mod commands;
pub mod config;
pub mod linear;
pub mod visualize;

use anyhow::Result;

pub use config::{RunConfig, UsageError};
pub use visualize::visualize_selection;

pub const SUBCOMMANDS: &[&str] = &["synth", "codebook", "features", "train", "score", "eval", "baseline", "visualize"];

pub fn usage_text() -> String {
    format!(
        "usage: epm <{}> [--config FILE] [--key value ...]\n\nkeys:\n{}",
        SUBCOMMANDS.join("|"),
        config::describe_keys()
    )
}

/// Runs one invocation; `args` excludes the program name.
pub fn run(args: &[String]) -> Result<()> {
    let Some(sub) = args.first() else {
        return Err(UsageError(format!("missing subcommand\n{}", usage_text())).into());
    };
    if matches!(sub.as_str(), "help" | "--help" | "-h") {
        print!("{}", usage_text());
        return Ok(());
    }
    if !SUBCOMMANDS.contains(&sub.as_str()) {
        return Err(
            UsageError(format!("unknown subcommand `{sub}` (expected one of {})", SUBCOMMANDS.join(", "))).into()
        );
    }
    let cfg = RunConfig::from_args(&args[1..])?;
    match sub.as_str() {
        "synth" => commands::synth(&cfg),
        "codebook" => commands::codebook(&cfg),
        "features" => commands::features(&cfg),
        "train" => commands::train(&cfg),
        "score" => commands::score(&cfg),
        "eval" => commands::eval(&cfg),
        "baseline" => commands::baseline(&cfg),
        "visualize" => commands::visualize(&cfg),
        _ => unreachable!("checked against SUBCOMMANDS"),
    }
}

/// 2 for usage errors, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<UsageError>().is_some()) {
        2
    } else {
        1
    }
}
