//! Checkpoint container for model parameters and optimizer state.
//!
//! Layout: `CAMBCKPT` magic, a u32 format version, a length-prefixed
//! `key=value` config section describing the model, a u32 tensor count, then
//! named tensors in registry order. Each tensor is a u32 name length, the
//! name bytes, a u32 rank, u32 extents, and a little-endian f32 payload.
//! Optimizer moments follow the parameters as `adam.m.<name>` and
//! `adam.v.<name>`, present exactly when the config carries `adam_step`.

use std::collections::HashMap;
use std::path::Path;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::network::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CAMBCKPT";
const VERSION: u32 = 1;

struct BinCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> BinCursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        BinCursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(
                self.buf.len(),
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let raw: [u8; 4] = self.take(4, what)?.try_into().unwrap();
        Ok(u32::from_le_bytes(raw))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_config(config: &ModelConfig, adam_step: Option<u64>) -> String {
    let channels: Vec<String> = config.stage_channels.iter().map(|c| c.to_string()).collect();
    let mut s = format!(
        "stage_channels={}\ninput_channels={}\nreduction={}\np={:?}\nuse_camb={}\n",
        channels.join(","),
        config.input_channels,
        config.reduction,
        config.p,
        config.use_camb,
    );
    if let Some(step) = adam_step {
        s.push_str(&format!("adam_step={step}\n"));
    }
    s
}

fn decode_config(bytes: &[u8], offset: usize) -> Result<(ModelConfig, Option<u64>)> {
    let parse_err = |msg: String| Error::parse(offset, msg);
    let text = std::str::from_utf8(bytes)
        .map_err(|_| parse_err("config section is not valid UTF-8".into()))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("config line without '=': {line:?}")))?;
        if fields.insert(key, value).is_some() {
            return Err(parse_err(format!("duplicate config key {key:?}")));
        }
    }
    let required = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| parse_err(format!("config is missing key {key:?}")))
    };
    let stage_channels = required("stage_channels")?
        .split(',')
        .map(|tok| tok.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| parse_err("stage_channels must be a comma-separated integer list".into()))?;
    let input_channels = required("input_channels")?
        .parse::<usize>()
        .map_err(|_| parse_err("input_channels must be an integer".into()))?;
    let reduction = required("reduction")?
        .parse::<usize>()
        .map_err(|_| parse_err("reduction must be an integer".into()))?;
    let p = required("p")?
        .parse::<f64>()
        .map_err(|_| parse_err("p must be a number".into()))?;
    let use_camb = match required("use_camb")? {
        "true" => true,
        "false" => false,
        other => return Err(parse_err(format!("use_camb must be true or false, found {other:?}"))),
    };
    let adam_step = match fields.get("adam_step") {
        Some(tok) => Some(
            tok.parse::<u64>()
                .map_err(|_| parse_err("adam_step must be an integer".into()))?,
        ),
        None => None,
    };
    let config = ModelConfig {
        stage_channels,
        input_channels,
        reduction,
        p,
        use_camb,
    };
    config.validate()?;
    Ok((config, adam_step))
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &extent in tensor.shape() {
        buf.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_tensor<'a>(cur: &mut BinCursor<'a>) -> Result<(String, Tensor)> {
    let name_off = cur.pos;
    let name_len = cur.read_u32("tensor name length")? as usize;
    if name_len == 0 || name_len > 4096 {
        return Err(Error::parse(
            name_off,
            format!("implausible tensor name length {name_len}"),
        ));
    }
    let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
        .map_err(|_| Error::parse(name_off + 4, "tensor name is not valid UTF-8"))?
        .to_string();
    let rank_off = cur.pos;
    let rank = cur.read_u32("tensor rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::parse(
            rank_off,
            format!("implausible tensor rank {rank} for {name:?}"),
        ));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel = 1usize;
    for _ in 0..rank {
        let extent_off = cur.pos;
        let extent = cur.read_u32("tensor extent")? as usize;
        if extent == 0 {
            return Err(Error::parse(
                extent_off,
                format!("zero extent in tensor {name:?}"),
            ));
        }
        numel = numel.checked_mul(extent).ok_or_else(|| {
            Error::parse(extent_off, format!("tensor {name:?} extent overflow"))
        })?;
        shape.push(extent);
    }
    let payload = cur.take(numel * 4, "tensor payload")?;
    let mut data = Vec::with_capacity(numel);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    Ok((name, Tensor::new(shape, data)?))
}

/// Serializes model parameters, and optionally Adam state, to `path`.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    adam: Option<&AdamState>,
) -> Result<()> {
    let registry = params.registry();
    if let Some(state) = adam {
        if state.m.len() != registry.len() {
            return Err(Error::Contract(
                "optimizer state does not match the parameter registry".into(),
            ));
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let config = encode_config(&params.config, adam.map(|s| s.step));
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config.as_bytes());

    let per_param = if adam.is_some() { 3 } else { 1 };
    buf.extend_from_slice(&((registry.len() * per_param) as u32).to_le_bytes());
    for (name, tensor) in &registry {
        push_tensor(&mut buf, name, tensor);
    }
    if let Some(state) = adam {
        for (i, (name, _)) in registry.iter().enumerate() {
            push_tensor(&mut buf, &format!("adam.m.{name}"), &state.m[i]);
            push_tensor(&mut buf, &format!("adam.v.{name}"), &state.v[i]);
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

type Records = (ModelConfig, Option<u64>, Vec<(String, Tensor)>);

fn parse_records(buf: &[u8]) -> Result<Records> {
    let mut cur = BinCursor::new(buf);
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::parse(0, "expected checkpoint magic CAMBCKPT"));
    }
    let version_off = cur.pos;
    let version = cur.read_u32("format version")?;
    if version != VERSION {
        return Err(Error::parse(
            version_off,
            format!("unsupported checkpoint version {version}, expected {VERSION}"),
        ));
    }
    let config_len = cur.read_u32("config length")? as usize;
    let config_off = cur.pos;
    let config_bytes = cur.take(config_len, "config section")?;
    let (config, adam_step) = decode_config(config_bytes, config_off)?;

    let count = cur.read_u32("tensor count")? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let (name, tensor) = read_tensor(&mut cur)?;
        if records.iter().any(|(n, _)| *n == name) {
            return Err(Error::Contract(format!(
                "checkpoint contains duplicate tensor {name:?}"
            )));
        }
        records.push((name, tensor));
    }
    if !cur.done() {
        return Err(Error::parse(cur.pos, "trailing bytes after the declared tensors"));
    }
    Ok((config, adam_step, records))
}

/// Restores model parameters, and Adam state when present, from `path`.
///
/// Every registry parameter must appear with a matching shape and no
/// unexpected tensors may remain; on any error no state is returned.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Option<AdamState>)> {
    let buf = std::fs::read(path)?;
    let (config, adam_step, records) = parse_records(&buf)?;
    let mut by_name: HashMap<String, Tensor> = HashMap::with_capacity(records.len());
    for (name, tensor) in records {
        by_name.insert(name, tensor);
    }

    let mut params = ModelParams::init(config, 0)?;
    for (name, param) in params.registry_mut() {
        let src = by_name.remove(&name).ok_or_else(|| {
            Error::Contract(format!("checkpoint is missing tensor {name:?}"))
        })?;
        if src.shape() != param.shape() {
            return Err(Error::Shape {
                op: "load_checkpoint",
                msg: format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    src.shape(),
                    param.shape()
                ),
            });
        }
        param.data_mut().copy_from_slice(src.data());
    }

    let adam = match adam_step {
        Some(step) => {
            let mut state = AdamState::new(&params);
            state.step = step;
            for (i, (name, param)) in params.registry().iter().enumerate() {
                for (prefix, slot) in [("adam.m", 0), ("adam.v", 1)] {
                    let key = format!("{prefix}.{name}");
                    let src = by_name.remove(&key).ok_or_else(|| {
                        Error::Contract(format!("checkpoint is missing tensor {key:?}"))
                    })?;
                    if src.shape() != param.shape() {
                        return Err(Error::Shape {
                            op: "load_checkpoint",
                            msg: format!(
                                "tensor {key:?} has shape {:?}, expected {:?}",
                                src.shape(),
                                param.shape()
                            ),
                        });
                    }
                    let dst = if slot == 0 { &mut state.m[i] } else { &mut state.v[i] };
                    dst.data_mut().copy_from_slice(src.data());
                }
            }
            Some(state)
        }
        None => None,
    };

    if let Some(name) = by_name.keys().next() {
        return Err(Error::Contract(format!(
            "checkpoint contains unexpected tensor {name:?}"
        )));
    }
    Ok((params, adam))
}

/// Lists the tensor names stored at `path`, in file order.
pub fn read_checkpoint_names(path: &Path) -> Result<Vec<String>> {
    let buf = std::fs::read(path)?;
    let (_, _, records) = parse_records(&buf)?;
    Ok(records.into_iter().map(|(name, _)| name).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::AdamState;

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("camb_ckpt_{}_{name}", std::process::id()))
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            stage_channels: vec![4, 8],
            input_channels: 3,
            reduction: 4,
            p: 3.0,
            use_camb: true,
        }
    }

    #[test]
    fn round_trip_is_bit_exact_at_f32() {
        let path = tmp("round_trip.ckpt");
        let params = ModelParams::init(toy_config(), 7).unwrap();
        save_checkpoint(&path, &params, None).unwrap();
        let (loaded, adam) = load_checkpoint(&path).unwrap();
        assert!(adam.is_none());
        assert_eq!(loaded.config, params.config);
        for ((name_a, a), (name_b, b)) in params.registry().iter().zip(loaded.registry().iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
                assert_eq!(*y, (*x as f32) as f64);
            }
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn optimizer_state_round_trips() {
        let path = tmp("adam.ckpt");
        let params = ModelParams::init(toy_config(), 11).unwrap();
        let mut state = AdamState::new(&params);
        state.step = 42;
        for (i, t) in state.m.iter_mut().enumerate() {
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v = (i as f64 + 1.0) * 0.25 + j as f64 * 0.125;
            }
        }
        save_checkpoint(&path, &params, Some(&state)).unwrap();
        let (_, loaded) = load_checkpoint(&path).unwrap();
        let loaded = loaded.expect("optimizer state present");
        assert_eq!(loaded.step, 42);
        for (a, b) in state.m.iter().zip(loaded.m.iter()) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in state.v.iter().zip(loaded.v.iter()) {
            assert_eq!(a.data(), b.data());
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn names_match_registry_in_order() {
        let path = tmp("names.ckpt");
        let params = ModelParams::init(toy_config(), 3).unwrap();
        save_checkpoint(&path, &params, None).unwrap();
        let names = read_checkpoint_names(&path).unwrap();
        let expected: Vec<String> = params.registry().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names, expected);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let path = tmp("trunc.ckpt");
        let params = ModelParams::init(toy_config(), 5).unwrap();
        save_checkpoint(&path, &params, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let path = tmp("magic.ckpt");
        let params = ModelParams::init(toy_config(), 5).unwrap();
        save_checkpoint(&path, &params, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let original = bytes.clone();

        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }

        bytes = original;
        bytes[8] = 99;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("version")),
            other => panic!("expected parse error, got {other:?}"),
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn duplicate_tensor_is_rejected() {
        let path = tmp("dup.ckpt");
        let params = ModelParams::init(toy_config(), 5).unwrap();
        save_checkpoint(&path, &params, None).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let config_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let count_off = 16 + config_len;
        let count = u32::from_le_bytes(bytes[count_off..count_off + 4].try_into().unwrap());
        let first = count_off + 4;
        let name_len =
            u32::from_le_bytes(bytes[first..first + 4].try_into().unwrap()) as usize;
        let rank_off = first + 4 + name_len;
        let rank = u32::from_le_bytes(bytes[rank_off..rank_off + 4].try_into().unwrap()) as usize;
        let mut numel = 1usize;
        for r in 0..rank {
            let at = rank_off + 4 + r * 4;
            numel *= u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        }
        let record_end = rank_off + 4 + rank * 4 + numel * 4;

        let mut patched = bytes.clone();
        patched.extend_from_slice(&bytes[first..record_end]);
        patched[count_off..count_off + 4].copy_from_slice(&(count + 1).to_le_bytes());
        std::fs::write(&path, &patched).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Contract(msg)) => assert!(msg.contains("duplicate")),
            other => panic!("expected contract error, got {other:?}"),
        }

        let trimmed = &bytes[..record_end];
        let mut missing = trimmed.to_vec();
        missing[count_off..count_off + 4].copy_from_slice(&1u32.to_le_bytes());
        std::fs::write(&path, &missing).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Contract(msg)) => assert!(msg.contains("missing")),
            other => panic!("expected contract error, got {other:?}"),
        }
        let _ = std::fs::remove_file(&path);
    }
}
