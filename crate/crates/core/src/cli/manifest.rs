use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::training::{ShiftData, ShiftTask};

/// Reads a shift manifest. Relative paths are resolved against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ShiftTask>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, path, base)
}

/// Parses `source -> target [name]` lines; blank lines and `#` comments are
/// skipped. The default name is `<source stem>-><target stem>`.
pub fn parse_manifest(text: &str, origin: &Path, base: &Path) -> Result<Vec<ShiftTask>> {
    let mut tasks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg: format!("{msg}: '{}'", raw.trim()),
        };
        let (src, rest) = line.split_once("->").ok_or_else(|| bad("expected 'source -> target [name]'"))?;
        let src = src.trim();
        let mut rest = rest.split_whitespace();
        let tgt = rest.next().ok_or_else(|| bad("missing target path"))?;
        let name = rest.next();
        if src.is_empty() || src.contains(char::is_whitespace) {
            return Err(bad("source path must be a single token"));
        }
        if rest.next().is_some() {
            return Err(bad("too many fields"));
        }
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let stem = |p: &str| {
            Path::new(p)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.to_string())
        };
        tasks.push(ShiftTask {
            name: name.map_or_else(|| format!("{}->{}", stem(src), stem(tgt)), str::to_string),
            data: ShiftData::Files {
                source: resolve(src),
                target: resolve(tgt),
            },
        });
    }
    if tasks.is_empty() {
        return Err(Error::Usage(format!("manifest {} lists no shifts", origin.display())));
    }
    Ok(tasks)
}
