//! Artifact metadata, hashing and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "remplan";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub stage: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputHash>,
    #[serde(default)]
    pub params: Value,
}

impl Meta {
    pub fn new(stage: &str, seed: Option<u64>, inputs: &[PathBuf], params: Value) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputHash {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Meta {
            tool: TOOL.into(),
            version: VERSION.into(),
            stage: stage.into(),
            seed,
            inputs,
            params,
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("meta serializes")
    }

    /// One-line `# {...}` comment for CSV artifacts.
    pub fn csv_comment(&self) -> String {
        format!("# {}\n", serde_json::to_string(self).expect("meta serializes"))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".tmp-{}", std::process::id()));
    PathBuf::from(s)
}

/// Writes via a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    with_temp(path, |tmp| {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(())
    })
}

/// Runs `write` against a temporary path, then renames it to `path`.
pub fn with_temp(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = temp_path(path);
    match write(&tmp) {
        Ok(()) => {
            fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// JSON object `{"meta": ..., <fields of body>}`.
pub fn write_json_artifact<T: Serialize>(path: &Path, meta: &Meta, body: &T) -> Result<()> {
    let mut v = serde_json::to_value(body)?;
    let Some(obj) = v.as_object_mut() else {
        bail!("artifact body must be a JSON object");
    };
    obj.insert("meta".into(), meta.to_value());
    let mut bytes = serde_json::to_vec_pretty(&v)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads a JSON artifact, splitting off its `meta` field when present.
pub fn read_json_artifact<T: DeserializeOwned>(path: &Path) -> Result<(Option<Meta>, T)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut v: Value = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    let meta = match v.as_object_mut().and_then(|o| o.remove("meta")) {
        Some(m) => Some(serde_json::from_value(m).context("bad meta block")?),
        None => None,
    };
    let body = serde_json::from_value(v).with_context(|| format!("decoding {}", path.display()))?;
    Ok((meta, body))
}

/// Meta from the first line of a CSV artifact, if it carries one.
pub fn read_csv_meta(path: &Path) -> Result<Option<Meta>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match text.lines().next().and_then(|l| l.strip_prefix("# ")) {
        Some(j) => Ok(serde_json::from_str(j).ok()),
        None => Ok(None),
    }
}

/// Loads JSON or TOML (by extension) into `T`.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        let mut v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(o) = v.as_object_mut() {
            o.remove("meta");
        }
        serde_json::from_value(v).with_context(|| format!("decoding {}", path.display()))
    }
}

/// Re-hashes every recorded input. Inputs are looked up as recorded, then
/// by file name next to the artifact. Returns one message per problem.
pub fn check_hash_chain(artifact: &Path, meta: &Meta) -> Vec<String> {
    let mut problems = Vec::new();
    let dir = artifact.parent().unwrap_or(Path::new("."));
    for input in &meta.inputs {
        let recorded = PathBuf::from(&input.path);
        let candidates = [
            recorded.clone(),
            dir.join(recorded.file_name().unwrap_or_default()),
        ];
        match candidates.iter().find(|p| p.is_file()) {
            None => problems.push(format!("input {} not found", input.path)),
            Some(p) => match sha256_file(p) {
                Ok(h) if h == input.sha256 => {}
                Ok(h) => problems.push(format!(
                    "input {} changed: recorded sha256 {}, now {h}",
                    input.path, input.sha256
                )),
                Err(e) => problems.push(format!("input {}: {e}", input.path)),
            },
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_artifact_roundtrip_and_chain() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "abc").unwrap();
        let meta = Meta::new("test", Some(3), std::slice::from_ref(&input), Value::Null).unwrap();
        assert_eq!(
            meta.inputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let out = dir.path().join("a.json");
        write_json_artifact(&out, &meta, &serde_json::json!({"x": 1.5})).unwrap();
        let (m, body): (_, Value) = read_json_artifact(&out).unwrap();
        assert_eq!(m.as_ref(), Some(&meta));
        assert_eq!(body, serde_json::json!({"x": 1.5}));
        assert!(check_hash_chain(&out, &meta).is_empty());
        fs::write(&input, "abd").unwrap();
        assert_eq!(check_hash_chain(&out, &meta).len(), 1);
    }
}
