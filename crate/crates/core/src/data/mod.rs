//! Scenes: the in-memory cube, its file format, window extraction, metrics,
//! map rendering and synthetic scene generation.

mod hsic;
mod metrics;
mod render;
mod synthetic;

pub use hsic::{load_hsic, read_hsic, save_hsic, write_hsic};
pub use metrics::{ConfusionMatrix, Metrics};
pub use render::{render_map, PALETTE};
pub use synthetic::{make_synthetic, Layout, SyntheticSpec};

use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

/// A labelled hyperspectral scene, band-interleaved by pixel.
///
/// Labels are `0` for unlabelled pixels and `1..=K` for classes.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    h: usize,
    w: usize,
    b: usize,
    data: Vec<f32>,
    labels: Vec<u32>,
    class_names: Vec<String>,
    wavelengths: Option<Vec<f32>>,
}

impl HsiCube {
    pub fn new(
        (h, w, b): (usize, usize, usize),
        data: Vec<f32>,
        labels: Vec<u32>,
        class_names: Vec<String>,
        wavelengths: Option<Vec<f32>>,
    ) -> Result<Self> {
        if h == 0 || w == 0 || b == 0 {
            return dim_err(format!("empty scene {h}×{w}×{b}"));
        }
        let pixels = h.checked_mul(w).and_then(|p| p.checked_mul(b));
        if pixels != Some(data.len()) || labels.len() != h * w {
            return dim_err(format!(
                "{h}×{w}×{b} scene with {} values and {} labels",
                data.len(),
                labels.len()
            ));
        }
        if wavelengths.as_ref().is_some_and(|wl| wl.len() != b) {
            return dim_err("wavelength count differs from band count");
        }
        let k = class_names.len();
        let mut counts = vec![0usize; k];
        for &l in &labels {
            if l as usize > k {
                return contract_err(format!("label {l} exceeds the {k} declared classes"));
            }
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return contract_err(format!(
                "class {} ({}) has no labelled pixel",
                c + 1,
                class_names[c]
            ));
        }
        Ok(HsiCube {
            h,
            w,
            b,
            data,
            labels,
            class_names,
            wavelengths,
        })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn bands(&self) -> usize {
        self.b
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.w + col]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn wavelengths(&self) -> Option<&[f32]> {
        self.wavelengths.as_deref()
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.w + col) * self.b;
        &self.data[start..start + self.b]
    }

    /// Labelled pixel count per class (index 0 is class 1).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes()];
        for &l in self.labels.iter().filter(|&&l| l > 0) {
            counts[l as usize - 1] += 1;
        }
        counts
    }

    /// Pixel indices (`row·w + col`) of every labelled pixel of class `c` (1-based).
    pub fn pixels_of_class(&self, c: u32) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == c)
            .collect()
    }

    /// Scales each band independently to `[0, 1]` over the whole scene.
    /// Constant bands map to zero.
    pub fn normalized(&self) -> HsiCube {
        let b = self.b;
        let mut lo = vec![f32::INFINITY; b];
        let mut hi = vec![f32::NEG_INFINITY; b];
        for px in self.data.chunks_exact(b) {
            for (j, &v) in px.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let mut data = self.data.clone();
        for px in data.chunks_exact_mut(b) {
            for (j, v) in px.iter_mut().enumerate() {
                let span = hi[j] - lo[j];
                *v = if span > 0.0 { (*v - lo[j]) / span } else { 0.0 };
            }
        }
        HsiCube {
            data,
            ..self.clone()
        }
    }

    /// `size × size × b` window centred on `(row, col)`, mirror-padded at the
    /// scene borders. The centre sits at `((size−1)/2, (size−1)/2)`.
    pub fn extract_window(&self, row: usize, col: usize, size: usize) -> Tensor {
        let half = (size / 2) as isize;
        let b = self.b;
        let mut out = Vec::with_capacity(size * size * b);
        for i in 0..size as isize {
            let r = mirror(row as isize + i - half, self.h);
            for j in 0..size as isize {
                let c = mirror(col as isize + j - half, self.w);
                out.extend(self.spectrum(r, c).iter().map(|&v| v as f64));
            }
        }
        Tensor::new(vec![size, size, b], out).expect("window extents are positive")
    }
}

/// Reflects an out-of-range index back into `0..n` without repeating the edge
/// (`-1 → 1`, `n → n−2`), folding repeatedly for windows wider than the scene.
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}
