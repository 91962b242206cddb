//! JSON run configuration: file contents layered over defaults, then flags
//! layered over both.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

/// Keys a config file may carry for every subcommand; they are removed
/// before the rest is parsed as the subcommand's own config.
#[derive(Debug, Default)]
pub struct GlobalKeys {
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub plot: Option<bool>,
}

pub fn read_file(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !value.is_object() {
        return Err(Failure::Usage(format!("config {} must hold a JSON object", path.display())));
    }
    Ok(value)
}

pub fn take_globals(file: &mut Value) -> Result<GlobalKeys, Failure> {
    let Some(obj) = file.as_object_mut() else {
        return Ok(GlobalKeys::default());
    };
    let bad = |k: &str, e: serde_json::Error| Failure::Usage(format!("config key `{k}`: {e}"));
    let mut g = GlobalKeys::default();
    if let Some(v) = obj.remove("threads") {
        g.threads = Some(serde_json::from_value(v).map_err(|e| bad("threads", e))?);
    }
    if let Some(v) = obj.remove("out_dir") {
        g.out_dir = Some(serde_json::from_value(v).map_err(|e| bad("out_dir", e))?);
    }
    if let Some(v) = obj.remove("plot") {
        g.plot = Some(serde_json::from_value(v).map_err(|e| bad("plot", e))?);
    }
    Ok(g)
}

/// Recursively overlays `top` on `base`. Objects tagged with `kind` select
/// an enum variant, so they replace the base wholesale instead of merging
/// fields from a different variant.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) if !t.contains_key("kind") => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, t) => *slot = t,
    }
}

fn set_path(v: &mut Value, path: &[&str], new: Value) {
    let mut cur = v;
    for key in &path[..path.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        cur = cur
            .as_object_mut()
            .expect("just made an object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    if let Some(obj) = cur.as_object_mut() {
        obj.insert(path[path.len() - 1].to_string(), new);
    }
}

/// A flag value to write at a dotted path, e.g. `train.epochs`.
pub struct Override {
    pub path: &'static str,
    pub value: Value,
}

pub fn set<T: Serialize>(path: &'static str, value: Option<T>) -> Option<Override> {
    value.map(|v| Override {
        path,
        value: serde_json::to_value(v).expect("flag values serialize"),
    })
}

/// `defaults ← file ← flags`, parsed as `T` (which rejects unknown keys).
pub fn resolve<T: Serialize + DeserializeOwned>(
    defaults: &T,
    file: Option<Value>,
    overrides: impl IntoIterator<Item = Option<Override>>,
    seed: Option<u64>,
) -> Result<T, Failure> {
    let mut v = serde_json::to_value(defaults).expect("configs serialize");
    if let Some(f) = file {
        merge(&mut v, f);
    }
    for o in overrides.into_iter().flatten() {
        let path: Vec<&str> = o.path.split('.').collect();
        set_path(&mut v, &path, o.value);
    }
    if let (Some(seed), Some(obj)) = (seed, v.as_object_mut()) {
        if obj.contains_key("seed") {
            obj.insert("seed".into(), seed.into());
        }
    }
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("invalid configuration: {e}")))
}
