//! Weight persistence. A checkpoint file is an 8-byte little-endian length
//! prefix, a plain-text manifest (magic line, format version, config echo,
//! parameter table), then the raw f32 payload in little-endian order.
//! Saving the same weights twice produces byte-identical files.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, UniPose, UniPoseLstm};
use crate::error::{Error, Result};
use crate::nn::BackboneConfig;
use crate::tensor::{Shape, Tensor};
use crate::wasp::WaspConfig;

const MAGIC: &str = "unipose-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Single,
    Lstm,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Single => "single",
            Variant::Lstm => "lstm",
        })
    }
}

/// Manifest summary, readable without materializing the model.
#[derive(Debug, Clone)]
pub struct CheckpointInfo {
    pub variant: Variant,
    pub config: ModelConfig,
    pub parameter_count: usize,
}

struct Manifest {
    variant: Variant,
    config: ModelConfig,
    entries: Vec<(String, Shape, usize)>,
    payload_elements: usize,
}

fn csv4(v: &[usize; 4]) -> String {
    format!("{},{},{},{}", v[0], v[1], v[2], v[3])
}

fn flatten_config(c: &ModelConfig, out: &mut String) {
    use fmt::Write;
    let mut kv = |k: &str, v: String| writeln!(out, "config {k} {v}").unwrap();
    kv("joints", c.joints.to_string());
    kv("input_h", c.input_h.to_string());
    kv("input_w", c.input_w.to_string());
    kv("lstm_frames", c.lstm_frames.to_string());
    kv("dropout", c.dropout.to_string());
    kv("decoder_channels", c.decoder_channels.to_string());
    kv("lstm_post_channels", c.lstm_post_channels.to_string());
    kv("backbone_stem", c.backbone.stem_channels.to_string());
    kv("backbone_channels", csv4(&c.backbone.stage_channels));
    kv("backbone_blocks", csv4(&c.backbone.blocks_per_stage));
    kv("wasp_in", c.wasp.in_channels.to_string());
    kv("wasp_branch", c.wasp.branch_channels.to_string());
    kv("wasp_out", c.wasp.out_channels.to_string());
    kv("wasp_rates", csv4(&c.wasp.rates));
}

fn bad(msg: impl Into<String>) -> Error {
    Error::CheckpointFormat(msg.into())
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| bad(format!("{what}: expected an unsigned integer, got {s:?}")))
}

fn parse_csv4(s: &str, what: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(bad(format!("{what}: expected 4 comma-separated values, got {s:?}")));
    }
    let mut out = [0usize; 4];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = parse_usize(p, what)?;
    }
    Ok(out)
}

fn parse_config(pairs: &HashMap<String, String>) -> Result<ModelConfig> {
    let get = |k: &str| -> Result<&String> {
        pairs.get(k).ok_or_else(|| bad(format!("manifest missing config key {k:?}")))
    };
    let config = ModelConfig {
        joints: parse_usize(get("joints")?, "joints")?,
        input_h: parse_usize(get("input_h")?, "input_h")?,
        input_w: parse_usize(get("input_w")?, "input_w")?,
        lstm_frames: parse_usize(get("lstm_frames")?, "lstm_frames")?,
        dropout: get("dropout")?
            .parse()
            .map_err(|_| bad("dropout: expected a float"))?,
        decoder_channels: parse_usize(get("decoder_channels")?, "decoder_channels")?,
        lstm_post_channels: parse_usize(get("lstm_post_channels")?, "lstm_post_channels")?,
        backbone: BackboneConfig {
            stem_channels: parse_usize(get("backbone_stem")?, "backbone_stem")?,
            stage_channels: parse_csv4(get("backbone_channels")?, "backbone_channels")?,
            blocks_per_stage: parse_csv4(get("backbone_blocks")?, "backbone_blocks")?,
        },
        wasp: WaspConfig {
            in_channels: parse_usize(get("wasp_in")?, "wasp_in")?,
            branch_channels: parse_usize(get("wasp_branch")?, "wasp_branch")?,
            out_channels: parse_usize(get("wasp_out")?, "wasp_out")?,
            rates: parse_csv4(get("wasp_rates")?, "wasp_rates")?,
        },
    };
    config.validate()?;
    Ok(config)
}

fn build_manifest(variant: Variant, config: &ModelConfig, entries: &[(String, Shape)]) -> String {
    let mut m = String::new();
    m.push_str(MAGIC);
    m.push('\n');
    m.push_str(&format!("format_version {FORMAT_VERSION}\n"));
    m.push_str("endianness little\n");
    m.push_str("element f32\n");
    m.push_str(&format!("variant {variant}\n"));
    flatten_config(config, &mut m);
    let mut offset = 0usize;
    for (name, shape) in entries {
        m.push_str(&format!(
            "param {name} {} {} {} {} {offset}\n",
            shape.n, shape.c, shape.h, shape.w
        ));
        offset += shape.numel();
    }
    m.push_str(&format!("payload_elements {offset}\n"));
    m
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("not a pose checkpoint (bad magic line)"));
    }
    let version_line = lines.next().unwrap_or_default();
    let found = version_line
        .strip_prefix("format_version ")
        .ok_or_else(|| bad("manifest missing format_version"))
        .and_then(|v| v.parse::<u32>().map_err(|_| bad("format_version is not an integer")))?;
    if found != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found, supported: FORMAT_VERSION });
    }
    match lines.next() {
        Some("endianness little") => {}
        other => return Err(bad(format!("unsupported endianness line {other:?}"))),
    }
    match lines.next() {
        Some("element f32") => {}
        other => return Err(bad(format!("unsupported element line {other:?}"))),
    }
    let variant = match lines.next().and_then(|l| l.strip_prefix("variant ")) {
        Some("single") => Variant::Single,
        Some("lstm") => Variant::Lstm,
        other => return Err(bad(format!("unknown model variant {other:?}"))),
    };

    let mut config_pairs = HashMap::new();
    let mut entries = Vec::new();
    let mut payload_elements = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix("config ") {
            let (k, v) = rest
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed config line {line:?}")))?;
            config_pairs.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("param ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 6 {
                return Err(bad(format!("malformed param line {line:?}")));
            }
            let dim = |i: usize| parse_usize(parts[i], "param dimension");
            entries.push((
                parts[0].to_string(),
                Shape::new(dim(1)?, dim(2)?, dim(3)?, dim(4)?),
                parse_usize(parts[5], "param offset")?,
            ));
        } else if let Some(rest) = line.strip_prefix("payload_elements ") {
            payload_elements = Some(parse_usize(rest, "payload_elements")?);
        } else {
            return Err(bad(format!("unrecognized manifest line {line:?}")));
        }
    }
    let payload_elements =
        payload_elements.ok_or_else(|| bad("manifest missing payload_elements"))?;

    let mut offset = 0usize;
    for (name, shape, recorded) in &entries {
        if *recorded != offset {
            return Err(bad(format!(
                "param {name}: offset {recorded} breaks contiguity (expected {offset})"
            )));
        }
        offset += shape.numel();
    }
    if offset != payload_elements {
        return Err(bad(format!(
            "payload_elements {payload_elements} disagrees with parameter table total {offset}"
        )));
    }
    Ok(Manifest { variant, config: parse_config(&config_pairs)?, entries, payload_elements })
}

fn encode(variant: Variant, config: &ModelConfig, params: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let shapes: Vec<(String, Shape)> =
        params.iter().map(|(n, t)| (n.clone(), t.shape())).collect();
    let manifest = build_manifest(variant, config, &shapes);
    let payload_len: usize = params.iter().map(|(_, t)| t.numel()).sum();
    let mut bytes = Vec::with_capacity(8 + manifest.len() + 4 * payload_len);
    bytes.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    bytes.extend_from_slice(manifest.as_bytes());
    for (_, t) in params {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

fn decode(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 8 {
        return Err(bad("file shorter than the manifest length prefix"));
    }
    let manifest_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if manifest_len > 1 << 24 {
        return Err(bad(format!(
            "implausible manifest length {manifest_len}; not a pose checkpoint"
        )));
    }
    if bytes.len() < 8 + manifest_len {
        return Err(Error::CheckpointTruncated {
            expected: 8 + manifest_len,
            found: bytes.len(),
        });
    }
    let manifest_text = std::str::from_utf8(&bytes[8..8 + manifest_len])
        .map_err(|_| bad("manifest is not valid UTF-8"))?;
    let manifest = parse_manifest(manifest_text)?;
    let payload = &bytes[8 + manifest_len..];
    let expected = 8 + manifest_len + 4 * manifest.payload_elements;
    if payload.len() != 4 * manifest.payload_elements {
        return Err(Error::CheckpointTruncated { expected, found: bytes.len() });
    }
    Ok((manifest, payload))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads just the manifest of a checkpoint.
pub fn peek(path: &Path) -> Result<CheckpointInfo> {
    let bytes = read_file(path)?;
    let (manifest, _) = decode(&bytes)?;
    Ok(CheckpointInfo {
        variant: manifest.variant,
        config: manifest.config,
        parameter_count: manifest.payload_elements,
    })
}

fn collect_params(
    visit: &mut dyn FnMut(&mut dyn FnMut(String, &mut Tensor<f32>)),
) -> Vec<(String, Tensor<f32>)> {
    let mut out = Vec::new();
    visit(&mut |name, t: &mut Tensor<f32>| out.push((name, t.clone())));
    out
}

fn assign_params(
    manifest: &Manifest,
    payload: &[u8],
    visit: &mut dyn FnMut(&mut dyn FnMut(String, &mut Tensor<f32>)),
) -> Result<()> {
    let table: HashMap<&str, (Shape, usize)> = manifest
        .entries
        .iter()
        .map(|(n, s, o)| (n.as_str(), (*s, *o)))
        .collect();
    let mut missing = Vec::new();
    let mut failure = None;
    visit(&mut |name, t: &mut Tensor<f32>| {
        if failure.is_some() {
            return;
        }
        match table.get(name.as_str()) {
            None => missing.push(name),
            Some((shape, offset)) => {
                if *shape != t.shape() {
                    failure = Some(Error::shape(
                        format!("checkpoint param {name}"),
                        t.shape().to_string(),
                        shape.to_string(),
                    ));
                    return;
                }
                let start = 4 * offset;
                let data: Vec<f32> = payload[start..start + 4 * shape.numel()]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                *t = Tensor::new_param(*shape, data).unwrap();
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(bad(format!("checkpoint has no data for params {missing:?}")));
    }
    Ok(())
}

impl UniPose<f32> {
    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let config = self.config().clone();
        let params = collect_params(&mut |f| self.visit_params(f));
        write_file(path.as_ref(), &encode(Variant::Single, &config, &params))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let (manifest, payload) = decode(&bytes)?;
        if manifest.variant != Variant::Single {
            return Err(bad(format!(
                "checkpoint holds a {} model, expected single",
                manifest.variant
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = UniPose::new(manifest.config.clone(), &mut rng)?;
        assign_params(&manifest, payload, &mut |f| model.visit_params(f))?;
        Ok(model)
    }
}

impl UniPoseLstm<f32> {
    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let config = self.config().clone();
        let params = collect_params(&mut |f| self.visit_params(f));
        write_file(path.as_ref(), &encode(Variant::Lstm, &config, &params))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let (manifest, payload) = decode(&bytes)?;
        if manifest.variant != Variant::Lstm {
            return Err(bad(format!(
                "checkpoint holds a {} model, expected lstm",
                manifest.variant
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = UniPoseLstm::new(manifest.config.clone(), &mut rng)?;
        assign_params(&manifest, payload, &mut |f| model.visit_params(f))?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;

    fn tiny_single() -> UniPose<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        UniPose::new(ModelConfig::tiny(2, 16, 16), &mut rng).unwrap()
    }

    fn edit_manifest(bytes: &[u8], from: &str, to: &str) -> Vec<u8> {
        assert_eq!(from.len(), to.len(), "edit must preserve manifest length");
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[8..8 + len]).unwrap();
        assert!(text.contains(from), "manifest lacks {from:?}");
        let edited = text.replacen(from, to, 1);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(edited.as_bytes());
        out.extend_from_slice(&bytes[8 + len..]);
        out
    }

    #[test]
    fn round_trip_is_byte_identical_and_behavior_preserving() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let mut model = tiny_single();
        model.save(&p1).unwrap();
        let mut loaded = UniPose::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let x = Tensor::new(
            Shape::new(1, 3, 16, 16),
            (0..768).map(|i| (i as f32 * 0.01).cos()).collect(),
        )
        .unwrap();
        let a = model.forward(&x, &mut Mode::Eval).unwrap();
        let b = loaded.forward(&x, &mut Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());

        let info = peek(&p1).unwrap();
        assert_eq!(info.variant, Variant::Single);
        assert_eq!(info.config, *model.config());
        assert!(info.parameter_count > 0);
    }

    #[test]
    fn lstm_round_trip_and_variant_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut model = UniPoseLstm::new(ModelConfig::tiny(2, 16, 16), &mut rng).unwrap();
        model.save(&p).unwrap();
        let mut loaded = UniPoseLstm::load(&p).unwrap();

        let frames = vec![Tensor::new(
            Shape::new(1, 3, 16, 16),
            (0..768).map(|i| (i as f32 * 0.02).sin()).collect(),
        )
        .unwrap()];
        let a = model.forward_clip(&frames, 1, &mut Mode::Eval).unwrap();
        let b = loaded.forward_clip(&frames, 1, &mut Mode::Eval).unwrap();
        assert_eq!(a[0].data(), b[0].data());
        let p2 = dir.path().join("clip2.ckpt");
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());

        match UniPose::load(&p).err() {
            Some(Error::CheckpointFormat(msg)) => assert!(msg.contains("lstm")),
            other => panic!("expected variant mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_version_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.ckpt");
        tiny_single().save(&p).unwrap();
        let edited = edit_manifest(
            &std::fs::read(&p).unwrap(),
            "format_version 1",
            "format_version 7",
        );
        std::fs::write(&p, edited).unwrap();
        match UniPose::load(&p).err() {
            Some(Error::CheckpointVersion { found: 7, supported: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn edited_joint_count_fails_shape_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.ckpt");
        tiny_single().save(&p).unwrap();
        let edited = edit_manifest(
            &std::fs::read(&p).unwrap(),
            "config joints 2",
            "config joints 3",
        );
        std::fs::write(&p, edited).unwrap();
        match UniPose::load(&p).err() {
            Some(Error::ShapeMismatch { context, .. }) => {
                assert!(context.contains("decoder.head"), "context {context:?}")
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_garbage_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        tiny_single().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();

        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        match UniPose::load(&p).err() {
            Some(Error::CheckpointTruncated { expected, found }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(found, bytes.len() - 10);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }

        std::fs::write(&p, b"definitely not a checkpoint").unwrap();
        assert!(matches!(UniPose::load(&p).err(), Some(Error::CheckpointFormat(_))));
    }
}
