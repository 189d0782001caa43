//! HSIC scene files.
//!
//! ```text
//! magic            "HSIC"
//! version          u16 = 1
//! h, w, b, K       u32 each
//! dtype            u8 = 0 (f32)
//! has_wavelengths  u8 (0 or 1)
//! reserved         6 zero bytes
//! wavelengths      b × f32          only when has_wavelengths = 1
//! values           h·w·b × f32      band-interleaved by pixel
//! labels           h·w × i32        0 = unlabelled, 1..=K
//! class names      K × (u32 byte length, UTF-8 bytes)
//! ```
//!
//! All integers and floats little-endian.

use std::fs;
use std::path::Path;

use super::HsiCube;
use crate::checkpoint::Reader;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HSIC";
const VERSION: u16 = 1;

pub fn write_hsic(cube: &HsiCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + cube.data.len() * 4 + cube.labels.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [cube.h, cube.w, cube.b, cube.classes()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(0);
    out.push(cube.wavelengths.is_some() as u8);
    out.extend_from_slice(&[0; 6]);
    if let Some(wl) = &cube.wavelengths {
        wl.iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    cube.data
        .iter()
        .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    cube.labels
        .iter()
        .for_each(|&l| out.extend_from_slice(&(l as i32).to_le_bytes()));
    for name in &cube.class_names {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out
}

pub fn read_hsic(bytes: &[u8]) -> Result<HsiCube> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not an HSIC file (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported HSIC version {version}")));
    }
    let (h, w, b, k) = (
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
        r.u32()? as usize,
    );
    let dtype = r.u8()?;
    if dtype != 0 {
        return Err(Error::Format(format!("unsupported HSIC dtype {dtype}")));
    }
    let has_wl = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("has_wavelengths flag {v}"))),
    };
    r.take(6)?;
    let pixels = h
        .checked_mul(w)
        .ok_or_else(|| Error::Format("scene extent overflow".into()))?;
    let values = pixels
        .checked_mul(b)
        .ok_or_else(|| Error::Format("scene extent overflow".into()))?;
    let f32s = |r: &mut Reader, n: usize| -> Result<Vec<f32>> {
        Ok(r.chunks(n, 4)?
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let wavelengths = if has_wl { Some(f32s(&mut r, b)?) } else { None };
    let data = f32s(&mut r, values)?;
    let mut labels = Vec::with_capacity(pixels);
    for c in r.chunks(pixels, 4)? {
        let l = i32::from_le_bytes(c.try_into().unwrap());
        if l < 0 {
            return Err(Error::Format(format!("negative label {l}")));
        }
        labels.push(l as u32);
    }
    let mut class_names = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("class name is not UTF-8".into()))?;
        class_names.push(name.to_string());
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after class names".into()));
    }
    HsiCube::new((h, w, b), data, labels, class_names, wavelengths)
        .map_err(|e| Error::Format(format!("inconsistent HSIC contents: {e}")))
}

pub fn save_hsic(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_hsic(cube))?;
    Ok(())
}

pub fn load_hsic(path: impl AsRef<Path>) -> Result<HsiCube> {
    read_hsic(&fs::read(path)?)
}
