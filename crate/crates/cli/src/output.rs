use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;

/// Leading comment line of every CSV.
pub fn schema_line(kind: &str, timing_columns: &[&str]) -> String {
    let timing = if timing_columns.is_empty() {
        "none".to_string()
    } else {
        timing_columns.join(" ")
    };
    format!("# ldbound {kind} v1; nondeterministic columns: {timing}\n")
}

pub fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn opt<T: Display>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).context("writing to stdout")?;
            out.flush().context("writing to stdout")
        }
    }
}
