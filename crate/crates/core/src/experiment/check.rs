//! Condition checks on mask files and dataset directories.
//!
//! A mask file is either a JSON [`StructureMask`] or plain text with one row
//! per line, entries `0`/`1` optionally separated by spaces or commas. Blank
//! lines and lines starting with `#` are skipped.

use std::fs;
use std::path::Path;

use crate::conditions::{check_intersection_condition, check_undercomplete_condition, ConditionReport};
use crate::data::{DatasetMeta, StructureMask};
use crate::error::{Error, Result};
use crate::support::SupportPattern;

pub fn parse_mask_text(text: &str, path: &Path) -> Result<StructureMask> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut rows: Vec<Vec<u8>> = Vec::new();
    let mut first_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for c in line.chars().filter(|c| !c.is_whitespace() && *c != ',') {
            match c {
                '0' => row.push(0),
                '1' => row.push(1),
                other => return Err(err(idx + 1, format!("unexpected character `{other}`, expected 0 or 1"))),
            }
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(err(
                    idx + 1,
                    format!("row has {} entries, line {first_line} has {}", row.len(), first.len()),
                ));
            }
        } else {
            first_line = idx + 1;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(err(1, "no mask rows".into()));
    }
    StructureMask::new(SupportPattern::from_rows(&rows)?)
}

/// Reads a mask from JSON or text.
pub fn read_mask(path: &Path) -> Result<StructureMask> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    } else {
        parse_mask_text(&text, path)
    }
}

/// Intersection and undercomplete reports for a mask file, or for the mask
/// recorded in a dataset directory.
pub fn run_check(path: &Path) -> Result<Vec<ConditionReport>> {
    let mask = if path.is_dir() {
        let meta_path = path.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        meta.mask
            .ok_or_else(|| Error::Invalid(format!("{} records no mask", meta_path.display())))?
    } else {
        read_mask(path)?
    };
    Ok(vec![
        check_intersection_condition(mask.pattern()),
        check_undercomplete_condition(mask.pattern())?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::ConditionDetail;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn identity_mask_passes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "eye.txt", "1 0 0\n0 1 0\n0 0 1\n");
        let reports = run_check(&p).unwrap();
        assert!(reports.iter().all(|r| r.verdict));
    }

    #[test]
    fn full_mask_fails_with_counterexample() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "full.txt", "11\n11\n");
        let reports = run_check(&p).unwrap();
        assert!(!reports[0].verdict);
        match &reports[0].details[0] {
            ConditionDetail::Intersection { holds, intersection, .. } => {
                assert!(!holds);
                assert_eq!(intersection, &vec![0, 1]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn chain_mask_lists_witnesses() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "tri.txt", "# chain\n1,0,0\n1,1,0\n\n0,1,1\n0,0,1\n");
        let reports = run_check(&p).unwrap();
        assert!(reports[0].verdict);
        let rows: Vec<Vec<usize>> = reports[0]
            .details
            .iter()
            .map(|d| match d {
                ConditionDetail::Intersection { rows, .. } => rows.clone(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(rows, vec![vec![0, 1], vec![1, 2], vec![2, 3]]);
    }

    #[test]
    fn malformed_masks_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.txt", "10\n1x\n");
        match run_check(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        let p = write(dir.path(), "ragged.txt", "10\n\n101\n");
        match run_check(&p).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("line 1"));
            }
            e => panic!("{e}"),
        }
        let p = write(dir.path(), "bad.json", "{\n\"rows\": 2,\n oops }");
        assert!(matches!(run_check(&p).unwrap_err(), Error::Parse { line: 3, .. }));
        assert!(matches!(run_check(&dir.path().join("missing.txt")).unwrap_err(), Error::Io { .. }));
    }

    #[test]
    fn json_masks_and_dataset_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let mask = StructureMask::new(SupportPattern::identity(2)).unwrap();
        let p = write(dir.path(), "eye.json", &serde_json::to_string(&mask).unwrap());
        assert!(run_check(&p).unwrap()[0].verdict);
        let meta = serde_json::json!({"generator": "ss", "seed": 0, "n": 2, "m": 2, "k": 1, "variances": [1.0, 1.0], "mask": mask});
        let ds = dir.path().join("ds");
        fs::create_dir(&ds).unwrap();
        write(&ds, "meta.json", &meta.to_string());
        assert!(run_check(&ds).unwrap()[1].verdict);
    }
}
