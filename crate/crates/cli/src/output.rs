//! Small helpers for writing into the output directory.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn out_dir(dir: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    Ok(dir.to_path_buf())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::write(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &text)
}

pub fn create(path: &Path) -> CliResult<File> {
    File::create(path).map_err(|e| CliError::write(path, e))
}

pub fn write_line(f: &mut impl Write, path: &Path, line: &str) -> CliResult<()> {
    writeln!(f, "{line}").map_err(|e| CliError::write(path, e))
}
