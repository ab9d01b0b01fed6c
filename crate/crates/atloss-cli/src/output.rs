//! Output plumbing: directory resolution, atomic file writes, and report
//! serialization in the selected format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::FormatChoice;
use crate::CliError;

pub const OUT_DIR_ENV: &str = "ATLOSS_OUT_DIR";

/// Destination directory: `--out` flag, then the config file, then the
/// environment default, then the current directory.
pub fn resolve_out_dir(flag: Option<PathBuf>, config: Option<PathBuf>) -> PathBuf {
    flag.or(config)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Write the whole file, then rename into place so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("cannot rename to {}: {e}", path.display())))
}

/// Write a report as `<stem>.csv` or `<stem>.json` under `dir` and return
/// the path written.
pub fn write_report<T: Serialize>(
    dir: &Path,
    stem: &str,
    format: FormatChoice,
    csv: &str,
    value: &T,
) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let bytes = match format {
        FormatChoice::Csv => csv.as_bytes().to_vec(),
        FormatChoice::Json => {
            let mut s = serde_json::to_string_pretty(value)
                .map_err(|e| CliError::Runtime(format!("cannot serialize {stem}: {e}")))?;
            s.push('\n');
            s.into_bytes()
        }
    };
    write_atomic(&path, &bytes)?;
    Ok(path)
}

/// Resolve a user-supplied input path against `dir` when relative.
pub fn resolve_input(dir: &Path, input: &str) -> PathBuf {
    let p = PathBuf::from(input);
    if p.is_absolute() {
        p
    } else {
        dir.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = std::env::temp_dir().join("atloss-output-test");
        let path = dir.join("r.csv");
        write_atomic(&path, b"a,b\n1,2\n").unwrap();
        write_atomic(&path, b"a,b\n3,4\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n3,4\n");
        assert!(!path.with_extension("csv.tmp").exists());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn input_resolution_keeps_absolute_paths() {
        let dir = Path::new("/out");
        assert_eq!(resolve_input(dir, "a.grid"), PathBuf::from("/out/a.grid"));
        assert_eq!(resolve_input(dir, "/tmp/a.grid"), PathBuf::from("/tmp/a.grid"));
    }
}
