//! Spatial and spectral token generation.
//!
//! Spatial branch: every pixel's spectrum goes through a small MLP (`B → D′`),
//! the window is cut into non-overlapping `P_spa × P_spa` patches and each
//! flattened patch is projected to `D` by `e_spa`.
//!
//! Spectral branch: an `S × S` centre crop is read band by band, each band's
//! `S²` values go through a second MLP (`S² → D′`), consecutive groups of
//! `P_spe` bands are flattened and projected to `D` by `e_spe`.
//!
//! Orderings are fixed: patches row-major over the patch grid, pixels
//! row-major inside a patch, bands ascending. The centre-token index used by
//! the enhancement gate depends on the patch order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, dim_err, Result};
use crate::ssm::block_uniform as uniform;
use crate::tensor::{Graph, ParamStore, Tensor, Var, VarMap};

/// Geometry of the tokenizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    /// Window side `H = W`.
    pub window: usize,
    pub bands: usize,
    pub p_spa: usize,
    pub p_spe: usize,
    pub d: usize,
    pub d_prime: usize,
    /// Side `S` of the spectral branch's centre crop.
    pub s_center: usize,
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.p_spa == 0 || !self.window.is_multiple_of(self.p_spa) {
            return contract_err(format!(
                "window {} is not divisible by the spatial patch size {}",
                self.window, self.p_spa
            ));
        }
        if self.p_spe == 0 || self.bands == 0 || !self.bands.is_multiple_of(self.p_spe) {
            return contract_err(format!(
                "{} bands are not divisible by the spectral patch size {}",
                self.bands, self.p_spe
            ));
        }
        if self.s_center.is_multiple_of(2) || self.s_center > self.window {
            return contract_err(format!(
                "centre crop {} must be odd and at most the window {}",
                self.s_center, self.window
            ));
        }
        if !self.d.is_multiple_of(2) {
            return contract_err(format!("token dimension {} must be even", self.d));
        }
        if self.d_prime == 0 {
            return contract_err("mapped dimension must be positive");
        }
        Ok(())
    }

    /// Side of the (square) spatial patch grid.
    pub fn grid_side(&self) -> usize {
        self.window / self.p_spa
    }

    /// `N = HW / P_spa²`
    pub fn n_spatial(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// `M = B / P_spe`
    pub fn n_spectral(&self) -> usize {
        self.bands / self.p_spe
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    /// Tokens over a `rows × cols` patch grid, row-major.
    Spatial {
        rows: usize,
        cols: usize,
    },
    Spectral,
}

/// A `count × D` token sequence living in a graph.
#[derive(Clone, Copy, Debug)]
pub struct TokenSeq {
    pub tokens: Var,
    pub kind: TokenKind,
    pub count: usize,
    positional_applied: bool,
}

impl TokenSeq {
    pub fn new(tokens: Var, kind: TokenKind, count: usize) -> Self {
        TokenSeq {
            tokens,
            kind,
            count,
            positional_applied: false,
        }
    }

    pub fn positional_applied(&self) -> bool {
        self.positional_applied
    }
}

/// Handles to a two-layer perceptron `Linear → silu → Linear`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

impl Mlp {
    pub fn lookup(vars: &VarMap, prefix: &str) -> Result<Self> {
        let v = |n: &str| vars.get(&format!("{prefix}.{n}"));
        Ok(Mlp {
            fc1_w: v("fc1.w")?,
            fc1_b: v("fc1.b")?,
            fc2_w: v("fc2.w")?,
            fc2_b: v("fc2.b")?,
        })
    }

    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) {
        let b1 = 1.0 / (d_in as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        store.insert(format!("{prefix}.fc1.w"), uniform(rng, &[d_in, hidden], b1));
        store.insert(format!("{prefix}.fc1.b"), uniform(rng, &[hidden], b1));
        store.insert(
            format!("{prefix}.fc2.w"),
            uniform(rng, &[hidden, d_out], b2),
        );
        store.insert(format!("{prefix}.fc2.b"), uniform(rng, &[d_out], b2));
    }

    /// Applies the perceptron to every row of `x`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.fc1_w)?;
        let h = g.add(h, self.fc1_b)?;
        let h = g.silu(h)?;
        let o = g.matmul(h, self.fc2_w)?;
        g.add(o, self.fc2_b)
    }
}

fn sample_dims(sample: &Tensor) -> Result<(usize, usize, usize)> {
    match sample.shape() {
        [h, w, b] => Ok((*h, *w, *b)),
        s => dim_err(format!("expected an H×W×B sample, got {s:?}")),
    }
}

/// Reshapes `H×W×B` to `HW×B` and maps every pixel spectrum to `D′`.
pub fn spectral_map(g: &mut Graph, sample: &Tensor, mlp: &Mlp) -> Result<Var> {
    let (h, w, b) = sample_dims(sample)?;
    if g.shape(mlp.fc1_w)[0] != b {
        return dim_err(format!(
            "spectral MLP expects {} bands, sample has {b}",
            g.shape(mlp.fc1_w)[0]
        ));
    }
    let x = g.constant(sample.clone().reshaped(&[h * w, b])?);
    mlp.forward(g, x)
}

/// Gather index that rearranges an `HW×D′` pixel matrix into
/// `N × (P²·D′)` flattened patches.
fn patch_index(h: usize, w: usize, p: usize, dp: usize) -> Vec<usize> {
    let (gh, gw) = (h / p, w / p);
    let mut idx = Vec::with_capacity(h * w * dp);
    for pr in 0..gh {
        for pc in 0..gw {
            for dr in 0..p {
                for dc in 0..p {
                    let pix = (pr * p + dr) * w + (pc * p + dc);
                    idx.extend(pix * dp..(pix + 1) * dp);
                }
            }
        }
    }
    idx
}

/// Partitions the mapped `H×W` grid into `P×P` patches and embeds them.
pub fn spatial_tokenize(
    g: &mut Graph,
    mapped: Var,
    h: usize,
    w: usize,
    p_spa: usize,
    e_spa: Var,
) -> Result<TokenSeq> {
    if p_spa == 0 || !h.is_multiple_of(p_spa) || !w.is_multiple_of(p_spa) {
        return contract_err(format!(
            "{h}×{w} is not divisible into {p_spa}×{p_spa} patches"
        ));
    }
    let (rows, dp) = g.value(mapped).dims2()?;
    if rows != h * w {
        return dim_err(format!(
            "mapped matrix has {rows} rows for a {h}×{w} window"
        ));
    }
    let n = (h / p_spa) * (w / p_spa);
    let patches = g.gather(
        mapped,
        patch_index(h, w, p_spa, dp),
        &[n, p_spa * p_spa * dp],
    )?;
    let tokens = g.matmul(patches, e_spa)?;
    Ok(TokenSeq::new(
        tokens,
        TokenKind::Spatial {
            rows: h / p_spa,
            cols: w / p_spa,
        },
        n,
    ))
}

/// The `S×S×B` window centred on pixel `((H−1)/2, (W−1)/2)`.
pub fn center_crop(sample: &Tensor, s: usize) -> Result<Tensor> {
    let (h, w, b) = sample_dims(sample)?;
    if s.is_multiple_of(2) || s > h.min(w) {
        return contract_err(format!("crop size {s} must be odd and fit in {h}×{w}"));
    }
    let (r0, c0) = ((h - 1) / 2 - (s - 1) / 2, (w - 1) / 2 - (s - 1) / 2);
    let src = sample.data();
    let mut out = Vec::with_capacity(s * s * b);
    for r in r0..r0 + s {
        let start = (r * w + c0) * b;
        out.extend_from_slice(&src[start..start + s * b]);
    }
    Tensor::new(vec![s, s, b], out)
}

/// Maps each band of the crop (`S²` values) to `D′`, groups `P_spe`
/// consecutive bands per token and embeds them.
pub fn spectral_tokenize(
    g: &mut Graph,
    crop: &Tensor,
    p_spe: usize,
    mlp: &Mlp,
    e_spe: Var,
) -> Result<TokenSeq> {
    let (s1, s2, b) = sample_dims(crop)?;
    if p_spe == 0 || b % p_spe != 0 {
        return contract_err(format!(
            "{b} bands are not divisible into groups of {p_spe}"
        ));
    }
    let per_band = crop.clone().reshaped(&[s1 * s2, b])?.transpose2()?;
    let x = g.constant(per_band);
    let mapped = mlp.forward(g, x)?;
    let dp = g.shape(mapped)[1];
    let m = b / p_spe;
    let grouped = g.reshape(mapped, &[m, p_spe * dp])?;
    let tokens = g.matmul(grouped, e_spe)?;
    Ok(TokenSeq::new(tokens, TokenKind::Spectral, m))
}

fn sinusoid(pos: usize, j: usize, dim: usize) -> f64 {
    let freq = 10000f64.powf(-((2 * (j / 2)) as f64) / dim as f64);
    let angle = pos as f64 * freq;
    if j.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

/// Standard 1-D sinusoidal table, `count × dim`.
pub fn sinusoidal_1d(count: usize, dim: usize) -> Tensor {
    Tensor::from_fn(&[count, dim], |i| sinusoid(i / dim, i % dim, dim))
}

/// 2-D table over a `rows × cols` grid: the first `dim/2` columns encode the
/// grid row, the last `dim/2` the grid column.
pub fn sinusoidal_2d(rows: usize, cols: usize, dim: usize) -> Result<Tensor> {
    if !dim.is_multiple_of(2) {
        return contract_err(format!(
            "2-D positional table needs an even dimension, got {dim}"
        ));
    }
    let half = dim / 2;
    Ok(Tensor::from_fn(&[rows * cols, dim], |i| {
        let (tok, j) = (i / dim, i % dim);
        let (r, c) = (tok / cols, tok % cols);
        if j < half {
            sinusoid(r, j, half)
        } else {
            sinusoid(c, j - half, half)
        }
    }))
}

/// Fixed positional table for a sequence: 2-D for spatial tokens, 1-D for spectral.
pub fn positional_table(kind: TokenKind, count: usize, dim: usize) -> Result<Tensor> {
    match kind {
        TokenKind::Spatial { rows, cols } => sinusoidal_2d(rows, cols, dim),
        TokenKind::Spectral => Ok(sinusoidal_1d(count, dim)),
    }
}

/// Adds the fixed positional table. Applying it a second time is an error.
pub fn add_positional(g: &mut Graph, seq: TokenSeq) -> Result<TokenSeq> {
    if seq.positional_applied {
        return contract_err("positional embedding already applied");
    }
    let dim = g.value(seq.tokens).dims2()?.1;
    let table = g.constant(positional_table(seq.kind, seq.count, dim)?);
    let tokens = g.add(seq.tokens, table)?;
    Ok(TokenSeq {
        tokens,
        positional_applied: true,
        ..seq
    })
}

/// Tokenizer parameter names, relative to the model root.
pub(crate) fn init_tokenizer(
    store: &mut ParamStore,
    cfg: &TokenizerConfig,
    spatial: bool,
    spectral: bool,
    rng: &mut impl Rng,
) {
    let (dp, d) = (cfg.d_prime, cfg.d);
    if spatial {
        Mlp::init(store, "tok.mlp_spa", cfg.bands, dp, dp, rng);
        let fan = cfg.p_spa * cfg.p_spa * dp;
        store.insert(
            "tok.e_spa",
            uniform(rng, &[fan, d], 1.0 / (fan as f64).sqrt()),
        );
    }
    if spectral {
        let s2 = cfg.s_center * cfg.s_center;
        Mlp::init(store, "tok.mlp_spe", s2, dp, dp, rng);
        let fan = cfg.p_spe * dp;
        store.insert(
            "tok.e_spe",
            uniform(rng, &[fan, d], 1.0 / (fan as f64).sqrt()),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_cfg() -> TokenizerConfig {
        TokenizerConfig {
            window: 27,
            bands: 200,
            p_spa: 3,
            p_spe: 2,
            d: 64,
            d_prime: 32,
            s_center: 3,
        }
    }

    fn store_for(cfg: &TokenizerConfig) -> ParamStore {
        let mut store = ParamStore::new();
        init_tokenizer(
            &mut store,
            cfg,
            true,
            true,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        store
    }

    fn random_sample(cfg: &TokenizerConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[cfg.window, cfg.window, cfg.bands], |_| {
            rng.random_range(0.0..1.0)
        })
    }

    #[test]
    fn reference_geometry() {
        let cfg = reference_cfg();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_spatial(), 81);
        assert_eq!(cfg.n_spectral(), 100);
        let store = store_for(&cfg);
        let sample = random_sample(&cfg, 2);
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mlp = Mlp::lookup(&vars, "tok.mlp_spa").unwrap();
        let mapped = spectral_map(&mut g, &sample, &mlp).unwrap();
        assert_eq!(g.shape(mapped), &[729, 32]);
        let spa =
            spatial_tokenize(&mut g, mapped, 27, 27, 3, vars.get("tok.e_spa").unwrap()).unwrap();
        assert_eq!(g.shape(spa.tokens), &[81, 64]);
        let crop = center_crop(&sample, 3).unwrap();
        let mlp = Mlp::lookup(&vars, "tok.mlp_spe").unwrap();
        let spe =
            spectral_tokenize(&mut g, &crop, 2, &mlp, vars.get("tok.e_spe").unwrap()).unwrap();
        assert_eq!(g.shape(spe.tokens), &[100, 64]);
    }

    #[test]
    fn crop_is_centred() {
        let s = Tensor::from_fn(&[27, 27, 2], |i| i as f64);
        let crop = center_crop(&s, 3).unwrap();
        // first crop element is pixel (12, 12), band 0
        assert_eq!(crop.data()[0], ((12 * 27 + 12) * 2) as f64);
        assert_eq!(
            crop.data()[crop.numel() - 1],
            ((14 * 27 + 14) * 2 + 1) as f64
        );
        let one = center_crop(&s, 1).unwrap();
        assert_eq!(
            one.data(),
            &[((13 * 27 + 13) * 2) as f64, ((13 * 27 + 13) * 2 + 1) as f64]
        );
        assert!(center_crop(&s, 2).is_err());
        assert!(center_crop(&s, 29).is_err());
        let c = center_crop(&Tensor::full(&[9, 9, 4], 0.25), 5).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn non_divisible_geometry_rejected() {
        let mut cfg = reference_cfg();
        cfg.window = 26;
        assert!(cfg.validate().is_err());
        let mut cfg = reference_cfg();
        cfg.bands = 201;
        assert!(cfg.validate().is_err());
        let mut g = Graph::new();
        let m = g.constant(Tensor::zeros(&[25, 2]));
        let e = g.constant(Tensor::zeros(&[18, 4]));
        assert!(spatial_tokenize(&mut g, m, 5, 5, 3, e).is_err());
    }

    #[test]
    fn single_patch_is_flatten_times_embedding() {
        let mut g = Graph::new();
        let mapped = g.constant(Tensor::from_fn(&[9, 2], |i| i as f64));
        let e = g.constant(Tensor::from_fn(
            &[18, 1],
            |i| if i == 5 { 1.0 } else { 0.0 },
        ));
        let seq = spatial_tokenize(&mut g, mapped, 3, 3, 3, e).unwrap();
        assert_eq!(seq.count, 1);
        assert_eq!(g.value(seq.tokens).data(), &[5.0]);
    }

    #[test]
    fn spatial_tokens_are_patch_local() {
        let cfg = TokenizerConfig {
            window: 9,
            bands: 4,
            p_spa: 3,
            p_spe: 2,
            d: 6,
            d_prime: 3,
            s_center: 3,
        };
        let store = store_for(&cfg);
        let base = random_sample(&cfg, 4);
        let tokens = |s: &Tensor| {
            let mut g = Graph::new();
            let vars = store.bind(&mut g);
            let mlp = Mlp::lookup(&vars, "tok.mlp_spa").unwrap();
            let m = spectral_map(&mut g, s, &mlp).unwrap();
            let seq = spatial_tokenize(&mut g, m, 9, 9, 3, vars.get("tok.e_spa").unwrap()).unwrap();
            (g.value(m).clone(), g.value(seq.tokens).clone())
        };
        let (m0, t0) = tokens(&base);
        let mut pert = base.clone();
        // pixel (4, 7) lies in patch (1, 2)
        pert.data_mut()[(4 * 9 + 7) * 4 + 1] += 1.0;
        let (m1, t1) = tokens(&pert);
        let changed_rows = |a: &Tensor, b: &Tensor, width: usize| -> Vec<usize> {
            (0..a.numel() / width)
                .filter(|&r| {
                    a.data()[r * width..(r + 1) * width] != b.data()[r * width..(r + 1) * width]
                })
                .collect()
        };
        assert_eq!(changed_rows(&m0, &m1, 3), vec![4 * 9 + 7]);
        assert_eq!(changed_rows(&t0, &t1, 6), vec![3 + 2]);
    }

    #[test]
    fn spectral_tokens_are_band_local() {
        let cfg = TokenizerConfig {
            window: 5,
            bands: 8,
            p_spa: 5,
            p_spe: 2,
            d: 4,
            d_prime: 3,
            s_center: 3,
        };
        let store = store_for(&cfg);
        let base = random_sample(&cfg, 6);
        let tokens = |s: &Tensor| {
            let mut g = Graph::new();
            let vars = store.bind(&mut g);
            let mlp = Mlp::lookup(&vars, "tok.mlp_spe").unwrap();
            let crop = center_crop(s, 3).unwrap();
            let seq =
                spectral_tokenize(&mut g, &crop, 2, &mlp, vars.get("tok.e_spe").unwrap()).unwrap();
            g.value(seq.tokens).clone()
        };
        let t0 = tokens(&base);
        let mut pert = base.clone();
        // centre pixel (2, 2), band 5 → token 2
        pert.data_mut()[(2 * 5 + 2) * 8 + 5] += 1.0;
        let t1 = tokens(&pert);
        for j in 0..4 {
            let same = t0.data()[j * 4..(j + 1) * 4] == t1.data()[j * 4..(j + 1) * 4];
            assert_eq!(same, j != 2, "token {j}");
        }
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mlp = Mlp::lookup(&vars, "tok.mlp_spe").unwrap();
        let crop = Tensor::zeros(&[3, 3, 2]);
        let e = g.constant(Tensor::zeros(&[6, 4]));
        let one = spectral_tokenize(&mut g, &crop, 2, &mlp, e).unwrap();
        assert_eq!(one.count, 1);
    }

    #[test]
    fn constant_input_maps_to_constant_rows() {
        let mut g = Graph::new();
        let eye = |n: usize| Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 });
        let mlp = Mlp {
            fc1_w: g.constant(eye(3)),
            fc1_b: g.constant(Tensor::zeros(&[3])),
            fc2_w: g.constant(eye(3)),
            fc2_b: g.constant(Tensor::zeros(&[3])),
        };
        let sample = Tensor::from_fn(&[4, 4, 3], |i| [0.2, -0.4, 1.0][i % 3]);
        let m = spectral_map(&mut g, &sample, &mlp).unwrap();
        let v = g.value(m);
        for r in 1..16 {
            assert_eq!(v.data()[r * 3..(r + 1) * 3], v.data()[..3]);
        }
    }

    #[test]
    fn positional_tables() {
        let t = sinusoidal_2d(9, 9, 64).unwrap();
        assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let rows: Vec<&[f64]> = t.data().chunks(64).collect();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                assert_ne!(rows[i], rows[j], "tokens {i} and {j} collide");
            }
        }
        assert!(sinusoidal_2d(3, 3, 7).is_err());
        let s = sinusoidal_1d(100, 64);
        assert!(s.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(s.at2(0, 0), 0.0);
        assert_eq!(s.at2(0, 1), 1.0);
    }

    #[test]
    fn positional_is_invertible_and_guarded() {
        let mut g = Graph::new();
        let x = Tensor::from_fn(&[9, 4], |i| (i as f64).sin());
        let v = g.constant(x.clone());
        let seq = TokenSeq::new(v, TokenKind::Spatial { rows: 3, cols: 3 }, 9);
        let with = add_positional(&mut g, seq).unwrap();
        assert!(with.positional_applied());
        let table = positional_table(seq.kind, 9, 4).unwrap();
        let back: Vec<f64> = g
            .value(with.tokens)
            .data()
            .iter()
            .zip(table.data())
            .map(|(a, b)| a - b)
            .collect();
        for (a, b) in back.iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(add_positional(&mut g, with).is_err());
    }
}
