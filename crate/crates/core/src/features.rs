//! Token snapshot dumps: one raw little-endian `f32` file per tensor plus a
//! `manifest.txt` listing `file rows cols` per line.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::model::{BlockSnapshot, ForwardTrace};
use crate::tensor::Tensor;

fn write_f32(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for &v in t.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes `trace` into `dir` (created if missing) and returns the manifest text.
pub fn dump_trace(trace: &ForwardTrace, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut emit = |stage: &str, snap: &BlockSnapshot| -> Result<()> {
        let parts = [
            ("spatial", &snap.spatial),
            ("spectral", &snap.spectral),
            ("gate", &snap.gate),
        ];
        for (kind, t) in parts {
            if let Some(t) = t {
                let name = format!("{stage}_{kind}.f32");
                write_f32(&dir.join(&name), t)?;
                let (r, c) = t.dims2()?;
                manifest.push_str(&format!("{name} {r} {c}\n"));
            }
        }
        Ok(())
    };
    emit("input", &trace.input)?;
    for (l, b) in trace.blocks.iter().enumerate() {
        emit(&format!("block{l}"), b)?;
    }
    fs::write(dir.join("manifest.txt"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_manifest_and_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let snap = |v: f64| BlockSnapshot {
            spatial: Some(Tensor::full(&[9, 4], v)),
            spectral: Some(Tensor::full(&[2, 4], v)),
            gate: None,
        };
        let trace = ForwardTrace {
            input: snap(1.0),
            blocks: vec![snap(2.0)],
        };
        let manifest = dump_trace(&trace, dir.path()).unwrap();
        assert_eq!(
            manifest,
            "input_spatial.f32 9 4\ninput_spectral.f32 2 4\nblock0_spatial.f32 9 4\nblock0_spectral.f32 2 4\n"
        );
        let raw = fs::read(dir.path().join("block0_spectral.f32")).unwrap();
        assert_eq!(raw.len(), 8 * 4);
        assert_eq!(f32::from_le_bytes(raw[..4].try_into().unwrap()), 2.0);
    }
}
