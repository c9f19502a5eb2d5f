//! Checkpoint files: a UTF-8 manifest of `key = value` lines and
//! `tensor <name> <shape> <offset>` lines terminated by `end`, followed by
//! the tensors as little-endian 32-bit floats in manifest order. Offsets
//! are in bytes from the start of the data section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::backend::Backend;
use crate::context::{ContextFlags, StructureDims};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &str = "qembed-checkpoint 1";
const END: &str = "end\n";

/// Serialises `model` together with free-form metadata pairs.
pub fn encode(model: &Model, metadata: &[(&str, String)]) -> Vec<u8> {
    let c = model.config();
    let mut head = String::new();
    let mut kv = |k: &str, v: String| {
        head.push_str(k);
        head.push_str(" = ");
        head.push_str(&v);
        head.push('\n');
    };
    kv("backend", c.backend.to_string());
    kv("dim", c.dim.to_string());
    kv("structure.position", c.structure.position.to_string());
    kv("structure.role", c.structure.role.to_string());
    kv("structure.type", c.structure.query_type.to_string());
    match c.context {
        None => kv("context", "off".into()),
        Some(f) => {
            kv("context", "on".into());
            kv("context.use_position", f.use_position.to_string());
            kv("context.use_role", f.use_role.to_string());
            kv("context.use_type", f.use_type.to_string());
            kv(
                "context.use_relation_induced",
                f.use_relation_induced.to_string(),
            );
        }
    }
    kv("context.samples", c.context_samples.to_string());
    kv("context.seed", c.context_seed.to_string());
    kv("alpha_in", format!("{:?}", c.alpha_in));
    kv("init_range", format!("{:?}", c.init_range));
    kv("init_seed", c.init_seed.to_string());
    kv("entities", model.num_entities().to_string());
    kv("relations", model.num_relations().to_string());
    for (k, v) in metadata {
        kv(&format!("meta.{k}"), v.clone());
    }
    let mut offset = 0usize;
    let mut body = Vec::new();
    let mut out = format!("{MAGIC}\n{head}");
    for (_, name, t) in model.store().iter() {
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let shape = if shape.is_empty() {
            "scalar".to_string()
        } else {
            shape.join("x")
        };
        out.push_str(&format!("tensor {name} {shape} {offset}\n"));
        for &x in t.data() {
            body.extend_from_slice(&(x as f32).to_le_bytes());
        }
        offset += 4 * t.len();
    }
    out.push_str(END);
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(&body);
    bytes
}

pub fn save(model: &Model, metadata: &[(&str, String)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, metadata)).map_err(|e| Error::io(path, e))
}

/// A decoded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub metadata: BTreeMap<String, String>,
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let marker = format!("\n{END}");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| bad("manifest terminator not found"))?;
    let manifest = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("manifest is not UTF-8"))?;
    let data = &bytes[end + marker.len()..];
    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("unrecognised header"));
    }
    let mut keys = BTreeMap::new();
    let mut tensors = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad tensor line `{line}`")));
            }
            let shape: Vec<usize> = if parts[1] == "scalar" {
                Vec::new()
            } else {
                parts[1]
                    .split('x')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad shape in `{line}`"))))
                    .collect::<Result<_>>()?
            };
            let offset: usize = parts[2]
                .parse()
                .map_err(|_| bad(format!("bad offset in `{line}`")))?;
            tensors.push((parts[0].to_string(), shape, offset));
        } else if let Some((k, v)) = line.split_once(" = ") {
            keys.insert(k.to_string(), v.to_string());
        } else {
            return Err(bad(format!("unparseable manifest line `{line}`")));
        }
    }
    let get = |k: &str| keys.get(k).ok_or_else(|| bad(format!("missing key `{k}`")));
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| bad(format!("bad value for `{k}`: `{v}`")))
    }
    let flag = |k: &str| -> Result<bool> { num(k, get(k)?) };
    let backend: Backend = get("backend")?.parse()?;
    let context = match get("context")?.as_str() {
        "off" => None,
        "on" => Some(ContextFlags {
            use_position: flag("context.use_position")?,
            use_role: flag("context.use_role")?,
            use_type: flag("context.use_type")?,
            use_relation_induced: flag("context.use_relation_induced")?,
        }),
        other => return Err(bad(format!("bad context value `{other}`"))),
    };
    let config = ModelConfig {
        backend,
        dim: num("dim", get("dim")?)?,
        structure: StructureDims {
            position: num("structure.position", get("structure.position")?)?,
            role: num("structure.role", get("structure.role")?)?,
            query_type: num("structure.type", get("structure.type")?)?,
        },
        context,
        context_samples: num("context.samples", get("context.samples")?)?,
        context_seed: num("context.seed", get("context.seed")?)?,
        alpha_in: num("alpha_in", get("alpha_in")?)?,
        init_range: num("init_range", get("init_range")?)?,
        init_seed: num("init_seed", get("init_seed")?)?,
    };
    let entities: usize = num("entities", get("entities")?)?;
    let relations: usize = num("relations", get("relations")?)?;
    let mut store = ParamStore::new();
    for (name, shape, offset) in tensors {
        let n: usize = shape.iter().product();
        let raw = data
            .get(offset..offset + 4 * n)
            .ok_or_else(|| bad(format!("tensor `{name}` runs past the end of the file")))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.add(name, Tensor::new(shape, values)?);
    }
    let metadata = keys
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(Checkpoint {
        model: Model::with_params(config, entities, relations, store)?,
        metadata,
    })
}
