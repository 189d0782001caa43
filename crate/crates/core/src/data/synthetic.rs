//! Deterministic synthetic scenes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::error::{contract_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layout {
    /// Square `tile × tile` regions, one class per region. Every pixel is
    /// labelled and carries its class signature.
    Regions { tile: usize },
    /// Four classes from two cues. The centre material (one of two
    /// signatures, assigned in random `clump × clump` cells) picks the low
    /// bit; the context of the surrounding `tile × tile` region (checkerboard)
    /// picks the high bit. A context is only visible through sparse marker
    /// pixels on a `marker_period` lattice, whose material differs between the
    /// two contexts. Markers and pixels within `margin` of a context border
    /// are unlabelled.
    Joint {
        tile: usize,
        clump: usize,
        marker_period: usize,
        margin: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub layout: Layout,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

/// Signature `k` of `n`: a gentle linear continuum plus one Gaussian bump,
/// bumps spread evenly across the bands.
pub(crate) fn signature(k: usize, n: usize, bands: usize) -> Vec<f64> {
    let mu = (k as f64 + 0.5) / n as f64 * bands as f64;
    let s = (bands as f64 / (4.0 * n as f64)).max(1.0);
    (0..bands)
        .map(|j| {
            let x = j as f64;
            0.3 + 0.2 * x / bands as f64 + 0.5 * (-(x - mu).powi(2) / (2.0 * s * s)).exp()
        })
        .collect()
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<HsiCube> {
    let (h, w, b) = (spec.height, spec.width, spec.bands);
    if h == 0 || w == 0 || b == 0 || spec.noise.is_nan() || spec.noise < 0.0 {
        return contract_err(
            "synthetic scene needs positive extents and a non-negative noise level",
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // material index per pixel into `sigs`, and label per pixel
    let (material, labels, sigs, names) = match spec.layout {
        Layout::Regions { tile } => regions(spec, tile, &mut rng)?,
        Layout::Joint {
            tile,
            clump,
            marker_period,
            margin,
        } => joint(spec, tile, clump, marker_period, margin, &mut rng)?,
    };
    let noise = Normal::new(0.0, spec.noise).expect("noise level checked above");
    let mut data = Vec::with_capacity(h * w * b);
    for &m in &material {
        for &v in &sigs[m] {
            let e = if spec.noise > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            data.push((v + e) as f32);
        }
    }
    HsiCube::new((h, w, b), data, labels, names, None)
}

type Layers = (Vec<usize>, Vec<u32>, Vec<Vec<f64>>, Vec<String>);

fn regions(spec: &SyntheticSpec, tile: usize, rng: &mut ChaCha8Rng) -> Result<Layers> {
    let k = spec.classes;
    if tile == 0 || k == 0 {
        return contract_err("regions layout needs a positive tile size and class count");
    }
    let (th, tw) = (spec.height.div_ceil(tile), spec.width.div_ceil(tile));
    if th * tw < k {
        return contract_err(format!("{} tiles cannot hold {k} classes", th * tw));
    }
    let mut tile_class: Vec<usize> = (0..th * tw).map(|t| t % k).collect();
    tile_class.shuffle(rng);
    let material: Vec<usize> = (0..spec.height * spec.width)
        .map(|i| tile_class[(i / spec.width / tile) * tw + (i % spec.width) / tile])
        .collect();
    let labels = material.iter().map(|&m| m as u32 + 1).collect();
    let sigs = (0..k).map(|c| signature(c, k, spec.bands)).collect();
    let names = (1..=k).map(|c| format!("class{c}")).collect();
    Ok((material, labels, sigs, names))
}

fn joint(
    spec: &SyntheticSpec,
    tile: usize,
    clump: usize,
    period: usize,
    margin: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Layers> {
    if spec.classes != 4 {
        return contract_err(format!(
            "joint layout has exactly 4 classes, got {}",
            spec.classes
        ));
    }
    if tile == 0 || clump == 0 || period == 0 {
        return contract_err("joint layout needs positive tile, clump and marker period");
    }
    let (h, w) = (spec.height, spec.width);
    let cw = w.div_ceil(clump);
    let cells: Vec<usize> = (0..h.div_ceil(clump) * cw)
        .map(|_| rng.random_range(0..2))
        .collect();
    let context = |r: usize, c: usize| (r / tile + c / tile) % 2;
    let mut material = Vec::with_capacity(h * w);
    let mut labels = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let ctx = context(r, c);
            if r % period == 0 && c % period == 0 {
                material.push(2 + ctx);
                labels.push(0);
                continue;
            }
            let m = cells[(r / clump) * cw + c / clump];
            material.push(m);
            let (r0, r1) = (r.saturating_sub(margin), (r + margin).min(h - 1));
            let (c0, c1) = (c.saturating_sub(margin), (c + margin).min(w - 1));
            let mixed = [(r0, c0), (r0, c1), (r1, c0), (r1, c1)]
                .iter()
                .any(|&(a, b)| context(a, b) != ctx);
            labels.push(if mixed { 0 } else { (1 + m + 2 * ctx) as u32 });
        }
    }
    let sigs = (0..4).map(|s| signature(s, 4, spec.bands)).collect();
    let names = ["a_ctx0", "b_ctx0", "a_ctx1", "b_ctx1"]
        .map(String::from)
        .to_vec();
    Ok((material, labels, sigs, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regions_spec(noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            height: 12,
            width: 12,
            bands: 10,
            layout: Layout::Regions { tile: 4 },
            noise,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_classes_share_one_spectrum() {
        let cube = make_synthetic(&regions_spec(0.0)).unwrap();
        let mut seen: Vec<Option<Vec<f32>>> = vec![None; 3];
        for r in 0..12 {
            for c in 0..12 {
                let l = cube.label(r, c) as usize - 1;
                let s = cube.spectrum(r, c).to_vec();
                match &seen[l] {
                    Some(prev) => assert_eq!(prev, &s),
                    None => seen[l] = Some(s),
                }
            }
        }
        assert!(seen.iter().all(Option::is_some));
    }

    #[test]
    fn seeded_and_noisy() {
        let a = make_synthetic(&regions_spec(0.05)).unwrap();
        assert_eq!(a, make_synthetic(&regions_spec(0.05)).unwrap());
        let mut other = regions_spec(0.05);
        other.seed = 8;
        assert_ne!(a, make_synthetic(&other).unwrap());
    }

    #[test]
    fn nearest_centroid_is_perfect_without_noise() {
        let cube = make_synthetic(&regions_spec(0.0)).unwrap();
        let (k, b) = (cube.classes(), cube.bands());
        let mut sums = vec![vec![0.0f64; b]; k];
        let counts = cube.class_counts();
        for (i, &l) in cube.labels().iter().enumerate() {
            for j in 0..b {
                sums[l as usize - 1][j] += cube.data()[i * b + j] as f64;
            }
        }
        let centroids: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
            .collect();
        let mut correct = 0;
        for (i, &l) in cube.labels().iter().enumerate() {
            let px = &cube.data()[i * b..(i + 1) * b];
            let dist = |c: &Vec<f64>| {
                c.iter()
                    .zip(px)
                    .map(|(a, &v)| (a - v as f64).powi(2))
                    .sum::<f64>()
            };
            let best = (0..k)
                .min_by(|&x, &y| dist(&centroids[x]).total_cmp(&dist(&centroids[y])))
                .unwrap();
            correct += (best + 1 == l as usize) as usize;
        }
        assert_eq!(correct, cube.labels().len());
    }

    #[test]
    fn joint_layout_structure() {
        let spec = SyntheticSpec {
            classes: 4,
            height: 32,
            width: 32,
            bands: 8,
            layout: Layout::Joint {
                tile: 16,
                clump: 2,
                marker_period: 4,
                margin: 4,
            },
            noise: 0.0,
            seed: 1,
        };
        let cube = make_synthetic(&spec).unwrap();
        assert!(cube.class_counts().iter().all(|&n| n > 0));
        // markers are unlabelled and carry the context material
        assert_eq!(cube.label(4, 4), 0);
        assert_eq!(
            cube.spectrum(4, 4),
            signature(2, 4, 8)
                .iter()
                .map(|&v| v as f32)
                .collect::<Vec<_>>()
        );
        assert_eq!(
            cube.spectrum(4, 20),
            signature(3, 4, 8)
                .iter()
                .map(|&v| v as f32)
                .collect::<Vec<_>>()
        );
        // border band between contexts is unlabelled
        assert_eq!(cube.label(5, 15), 0);
        assert_eq!(cube.label(6, 17), 0);
        assert!(cube.label(6, 6) == 1 || cube.label(6, 6) == 2);
        assert!(cube.label(6, 26) == 3 || cube.label(6, 26) == 4);
        let mut bad = spec;
        bad.classes = 3;
        assert!(make_synthetic(&bad).is_err());
    }
}
