//! All-or-nothing writes into the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::CliError;

/// Relative path to file contents.
pub type Files = BTreeMap<String, Vec<u8>>;

/// Writes every file into a staging directory inside `out`, then moves
/// them into place. Nothing is written outside `out`, and a failure
/// while staging leaves no report files behind.
pub fn write_all(out: &Path, files: &Files) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let staging = out.join(format!(".staging-{}", std::process::id()));
    let result = stage(&staging, files).and_then(|()| publish(&staging, out, files));
    let _ = fs::remove_dir_all(&staging);
    result
}

fn stage(staging: &Path, files: &Files) -> Result<(), CliError> {
    for (name, bytes) in files {
        let path = staging.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn publish(staging: &Path, out: &Path, files: &Files) -> Result<(), CliError> {
    for name in files.keys() {
        let target = out.join(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::rename(staging.join(name), &target).map_err(|e| CliError::io(&target, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_nested_files_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("report");
        let files = Files::from([
            ("a.json".to_string(), b"{}".to_vec()),
            ("shifted/b.csv".to_string(), b"x\n".to_vec()),
        ]);
        write_all(&out, &files).unwrap();
        assert_eq!(fs::read(out.join("a.json")).unwrap(), b"{}");
        assert_eq!(fs::read(out.join("shifted/b.csv")).unwrap(), b"x\n");
        let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2, "{names:?}");
    }
}
