//! Checkpoint file: a text header (magic line, configuration, tensor
//! manifest) followed by raw little-endian `f64` payload in manifest order.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{DropoutScope, GraphError, ModelConfig, ModelParams, Variant};
use crate::features::SPATIAL_ORDER_TAG;
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &str = "VSGAT-CKPT v1";

fn scope_tag(s: DropoutScope) -> &'static str {
    match s {
        DropoutScope::ReadoutOnly => "readout_only",
        DropoutScope::AllHidden => "all_hidden",
    }
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<(), GraphError> {
    let cfg = params.config();
    let mut out = Vec::new();
    let mut header = format!(
        "{CHECKPOINT_MAGIC}\nvariant {}\nvisual_dim {}\nword_dim {}\nhidden {}\nreadout_hidden {}\nn_actions {}\nattn_leaky {}\ndropout_scope {}\nhuman_objects {}\nspatial_order {SPATIAL_ORDER_TAG}\nparams {}\n",
        cfg.variant,
        cfg.visual_dim,
        cfg.word_dim,
        cfg.hidden,
        cfg.readout_hidden,
        cfg.n_actions,
        cfg.attn_leaky,
        scope_tag(cfg.dropout_scope),
        cfg.human_objects,
        params.names().len()
    );
    for (name, t) in params.names().iter().zip(params.tensors()) {
        let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
        header.push_str(&format!("{name} {}\n", dims.join(" ")));
    }
    header.push_str("end\n");
    out.extend_from_slice(header.as_bytes());
    for t in params.tensors() {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let io = |e: std::io::Error| GraphError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&out).map_err(io)?;
    Ok(())
}

struct Header {
    config: ModelConfig,
    entries: Vec<(String, Vec<usize>)>,
}

fn read_header<R: BufRead>(r: &mut R, path: &str) -> Result<Header, GraphError> {
    let corrupt = |message: String| GraphError::CorruptCheckpoint {
        path: path.to_string(),
        message,
    };
    let mut line = String::new();
    let mut next = |r: &mut R| -> Result<String, GraphError> {
        line.clear();
        let n = r
            .read_line(&mut line)
            .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
        if n == 0 {
            return Err(corrupt("header ends early".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    let magic = next(r)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(corrupt(format!("bad magic line `{magic}`")));
    }
    let mut field = |r: &mut R, key: &str| -> Result<String, GraphError> {
        let l = next(r)?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => Err(corrupt(format!("expected `{key}` entry, found `{l}`"))),
        }
    };
    let num = |v: String, key: &str| -> Result<usize, GraphError> {
        v.parse()
            .map_err(|_| corrupt(format!("entry `{key}` is not an integer: `{v}`")))
    };
    let flag = |v: String, key: &str| -> Result<bool, GraphError> {
        v.parse()
            .map_err(|_| corrupt(format!("entry `{key}` is not a boolean: `{v}`")))
    };
    let variant: Variant = field(r, "variant")?.parse().map_err(corrupt)?;
    let visual_dim = num(field(r, "visual_dim")?, "visual_dim")?;
    let word_dim = num(field(r, "word_dim")?, "word_dim")?;
    let hidden = num(field(r, "hidden")?, "hidden")?;
    let readout_hidden = num(field(r, "readout_hidden")?, "readout_hidden")?;
    let n_actions = num(field(r, "n_actions")?, "n_actions")?;
    let attn_leaky = flag(field(r, "attn_leaky")?, "attn_leaky")?;
    let dropout_scope = match field(r, "dropout_scope")?.as_str() {
        "readout_only" => DropoutScope::ReadoutOnly,
        "all_hidden" => DropoutScope::AllHidden,
        other => return Err(corrupt(format!("unknown dropout scope `{other}`"))),
    };
    let human_objects = flag(field(r, "human_objects")?, "human_objects")?;
    let order = field(r, "spatial_order")?;
    if order != SPATIAL_ORDER_TAG {
        return Err(corrupt(format!("unsupported spatial feature order `{order}`")));
    }
    let count = num(field(r, "params")?, "params")?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let l = next(r)?;
        let mut parts = l.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| corrupt("empty manifest entry".into()))?
            .to_string();
        let shape = parts
            .map(|p| p.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| corrupt(format!("manifest entry `{l}` has a bad shape")))?;
        entries.push((name, shape));
    }
    let end = next(r)?;
    if end != "end" {
        return Err(corrupt(format!("expected `end` after manifest, found `{end}`")));
    }
    Ok(Header {
        config: ModelConfig {
            variant,
            visual_dim,
            word_dim,
            hidden,
            readout_hidden,
            n_actions,
            attn_leaky,
            dropout_scope,
            human_objects,
        },
        entries,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, GraphError> {
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| GraphError::Io {
        path: name.clone(),
        message: e.to_string(),
    })?;
    let mut r = BufReader::new(file);
    let header = read_header(&mut r, &name)?;
    let corrupt = |message: String| GraphError::CorruptCheckpoint {
        path: name.clone(),
        message,
    };
    let layout = header.config.layout();
    if layout.len() != header.entries.len() {
        return Err(corrupt(format!(
            "manifest lists {} tensors, variant {} needs {}",
            header.entries.len(),
            header.config.variant,
            layout.len()
        )));
    }
    for ((name, shape), (want, want_shape)) in header.entries.iter().zip(&layout) {
        if name != want || shape != want_shape {
            return Err(corrupt(format!(
                "manifest entry `{name}` {shape:?} does not match `{want}` {want_shape:?}"
            )));
        }
    }
    let mut tensors = Vec::with_capacity(layout.len());
    let mut buf = [0u8; 8];
    for (name, shape) in header.entries {
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf)
                .map_err(|_| corrupt(format!("payload truncated inside `{name}`")))?;
            values.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::new(shape, values)?;
        tensors.push((name, t));
    }
    if r.read(&mut buf).map_err(|e| corrupt(e.to_string()))? != 0 {
        return Err(corrupt("trailing bytes after payload".into()));
    }
    ModelParams::from_tensors(header.config, tensors)
}

/// Loads a checkpoint and checks that it was written for `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<ModelParams, GraphError> {
    let params = load_checkpoint(path)?;
    let got = params.config();
    let mismatch = |message: String| GraphError::CheckpointMismatch {
        path: path.display().to_string(),
        message,
    };
    if got.variant != expected.variant {
        return Err(mismatch(format!(
            "checkpoint holds variant {}, configuration asks for {}",
            got.variant, expected.variant
        )));
    }
    if got.layout() != expected.layout() {
        let theirs = got.layout();
        let ours = expected.layout();
        let first = ours
            .iter()
            .zip(&theirs)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("`{}` {:?} vs `{}` {:?}", a.0, a.1, b.0, b.1))
            .unwrap_or_else(|| format!("{} vs {} tensors", ours.len(), theirs.len()));
        return Err(mismatch(format!("manifest differs: {first}")));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(v: Variant) -> ModelConfig {
        ModelConfig {
            hidden: 6,
            readout_hidden: 5,
            ..ModelConfig::toy(v, 4, 3, 2)
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for v in Variant::ALL {
            let p = ModelParams::init(&cfg(v), &mut ChaCha8Rng::seed_from_u64(9));
            let path = dir.path().join(format!("{v}.ckpt"));
            save_checkpoint(&p, &path).unwrap();
            let q = load_checkpoint(&path).unwrap();
            assert_eq!(p.names(), q.names());
            for (a, b) in p.tensors().iter().zip(q.tensors()) {
                let ab: Vec<u64> = a.values().iter().map(|x| x.to_bits()).collect();
                let bb: Vec<u64> = b.values().iter().map(|x| x.to_bits()).collect();
                assert_eq!(ab, bb);
            }
            assert_eq!(p.config(), q.config());
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = ModelParams::init(&cfg(Variant::Full), &mut ChaCha8Rng::seed_from_u64(1));
        save_checkpoint(&p, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(matches!(err, GraphError::CorruptCheckpoint { .. }), "{err}");
        assert!(err.to_string().contains("readout.out.bias"));
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v01.ckpt");
        let p = ModelParams::init(&cfg(Variant::VisualOnly), &mut ChaCha8Rng::seed_from_u64(1));
        save_checkpoint(&p, &path).unwrap();
        let err = load_checkpoint_for(&path, &cfg(Variant::Full)).unwrap_err();
        assert!(matches!(err, GraphError::CheckpointMismatch { .. }));
        assert!(load_checkpoint_for(&path, &cfg(Variant::VisualOnly)).is_ok());
    }

    #[test]
    fn edited_manifest_names_offending_entry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = ModelParams::init(&cfg(Variant::SemanticOnly), &mut ChaCha8Rng::seed_from_u64(1));
        save_checkpoint(&p, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("semantic.f_update.weight 6 6", "semantic.f_update.weight 6 7");
        fs::write(&path, text.as_bytes()).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("semantic.f_update.weight"), "{err}");
    }
}
