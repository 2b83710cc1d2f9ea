//! Atomic file writes and the small CSV formats used by the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use pmbtbd::measurement::Frame;
use pmbtbd::state::GroundTruthFrame;

use crate::error::{HarnessError, Result};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| HarnessError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub fn truth_csv(truth: &[GroundTruthFrame]) -> String {
    let mut s = String::from("k,id,px,py,vx,vy,gamma\n");
    for t in truth {
        for (id, x) in &t.objects {
            writeln!(s, "{},{},{},{},{},{},{}", t.k, id, x.px, x.py, x.vx, x.vy, x.gamma).unwrap();
        }
    }
    s
}

/// Writes `truth.csv` and one `frame_NNNN.csv` per step into `dir`.
pub fn write_frames(dir: &Path, truth: &[GroundTruthFrame], frames: &[Frame]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = vec![dir.join("truth.csv")];
    write_atomic(&written[0], truth_csv(truth).as_bytes())?;
    for (t, f) in truth.iter().zip(frames) {
        let path = dir.join(format!("frame_{:04}.csv", t.k));
        let mut buf = Vec::new();
        f.write_csv(&mut buf).map_err(|e| HarnessError::io(&path, e))?;
        write_atomic(&path, &buf)?;
        written.push(path);
    }
    Ok(written)
}

/// Positions per step from a CSV with a header naming `k`, `px` and `py`
/// columns. With a `run` column, only rows of `run` are kept.
pub fn read_points(path: &Path, run: usize) -> Result<BTreeMap<u64, Vec<[f64; 2]>>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let err = |line: usize, msg: String| HarnessError::Parse { path: path.display().to_string(), line, msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| cols.iter().position(|c| *c == name);
    let (ck, cx, cy) = match (col("k"), col("px"), col("py")) {
        (Some(k), Some(x), Some(y)) => (k, x, y),
        _ => return Err(err(1, "header needs k, px and py".into())),
    };
    let crun = col("run");
    let mut out: BTreeMap<u64, Vec<[f64; 2]>> = BTreeMap::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(err(i + 1, format!("expected {} fields, got {}", cols.len(), f.len())));
        }
        let num = |c: usize| f[c].parse::<f64>().map_err(|e| err(i + 1, format!("{}: {e}", cols[c])));
        if let Some(c) = crun {
            if f[c].parse::<usize>().map_err(|e| err(i + 1, format!("run: {e}")))? != run {
                continue;
            }
        }
        let k = f[ck].parse::<u64>().map_err(|e| err(i + 1, format!("k: {e}")))?;
        out.entry(k).or_default().push([num(cx)?, num(cy)?]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pmbtbd::state::ObjectState;

    #[test]
    fn truth_round_trips_through_read_points() {
        let dir = tempfile::tempdir().unwrap();
        let x = ObjectState::new(1.5, 2.5, 0.1, 0.0, 10.0).unwrap();
        let truth = vec![
            GroundTruthFrame::new(1, vec![(0, x)]).unwrap(),
            GroundTruthFrame::new(2, vec![(0, x), (1, x)]).unwrap(),
        ];
        let p = dir.path().join("truth.csv");
        write_atomic(&p, truth_csv(&truth).as_bytes()).unwrap();
        let pts = read_points(&p, 0).unwrap();
        assert_eq!(pts[&1], vec![[1.5, 2.5]]);
        assert_eq!(pts[&2].len(), 2);
        assert!(std::fs::read_dir(dir.path()).unwrap().count() == 1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "k,px,py\n1,2,3\n2,x,3\n").unwrap();
        let e = read_points(&p, 0).unwrap_err().to_string();
        assert!(e.contains(":3:"), "{e}");
    }
}
