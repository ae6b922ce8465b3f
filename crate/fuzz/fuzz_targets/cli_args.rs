//! Command-line parsing and problem loading, one argument per line.

#![no_main]

use clap::Parser;
use idsq_cli::{load_problem, Cli};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let args = std::iter::once("idsq").chain(text.lines());
    if let Ok(cli) = Cli::try_parse_from(args) {
        // File paths are left alone; inline JSON and flag-built problems load.
        let inline = cli
            .cfg
            .input
            .as_deref()
            .is_none_or(|s| s.trim_start().starts_with('{'));
        if inline {
            let _ = load_problem(&cli.cfg);
        }
    }
});
