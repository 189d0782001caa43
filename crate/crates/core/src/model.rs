//! The dual-branch classifier: tokenization, `L` stacked spectral-spatial
//! blocks with the shared enhancement gate, pooling fusion and the linear head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, dim_err, Error, Result};
use crate::ssm::{init_mamba_block, mamba_block_forward, BlockConfig, MambaBlockParams};
use crate::tensor::{Graph, ParamStore, Tensor, Var, VarMap};
use crate::tokens::{
    add_positional, center_crop, init_tokenizer, spatial_tokenize, spectral_map, spectral_tokenize,
    Mlp, TokenizerConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    SpectralOnly,
    SpatialOnly,
    SpectralSpatial,
}

impl BranchMode {
    pub const ALL: [BranchMode; 3] = [
        BranchMode::SpectralOnly,
        BranchMode::SpatialOnly,
        BranchMode::SpectralSpatial,
    ];

    pub fn spatial(self) -> bool {
        self != BranchMode::SpectralOnly
    }

    pub fn spectral(self) -> bool {
        self != BranchMode::SpatialOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            BranchMode::SpectralOnly => "spectral_only",
            BranchMode::SpatialOnly => "spatial_only",
            BranchMode::SpectralSpatial => "spectral_spatial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown branch mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enhancement {
    On,
    Off,
}

impl Enhancement {
    pub fn name(self) -> &'static str {
        match self {
            Enhancement::On => "on",
            Enhancement::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(Enhancement::On),
            "off" => Ok(Enhancement::Off),
            _ => Err(Error::Config(format!("unknown enhancement setting {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub tokenizer: TokenizerConfig,
    pub l_blocks: usize,
    pub classes: usize,
    pub branch_mode: BranchMode,
    pub enhancement: Enhancement,
    pub expand: usize,
    pub n_state: usize,
    pub k_conv: usize,
}

impl ModelConfig {
    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            d_model: self.tokenizer.d,
            expand: self.expand,
            n_state: self.n_state,
            k_conv: self.k_conv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        if !(1..=4).contains(&self.l_blocks) {
            return contract_err(format!("block count {} outside 1..=4", self.l_blocks));
        }
        if self.classes < 2 {
            return contract_err(format!("need at least two classes, got {}", self.classes));
        }
        if self.expand == 0 || self.n_state == 0 || self.k_conv == 0 {
            return contract_err("block extents must be positive");
        }
        if self.enhancement == Enhancement::On && self.branch_mode.spatial() {
            let side = self.tokenizer.grid_side();
            center_token_index(side, side)?;
        }
        Ok(())
    }
}

/// Row-major index (0-based) of the centre patch; `(N+1)/2` in 1-based terms.
/// Both grid sides must be odd.
pub fn center_token_index(rows: usize, cols: usize) -> Result<usize> {
    if rows.is_multiple_of(2) || cols.is_multiple_of(2) {
        return contract_err(format!("a {rows}×{cols} patch grid has no centre token"));
    }
    Ok((rows / 2) * cols + cols / 2)
}

/// Token sets entering or leaving a block; a branch is `None` when disabled.
#[derive(Clone, Copy, Debug)]
pub struct BranchTokens {
    pub spa: Option<Var>,
    pub spe: Option<Var>,
}

/// Per-block handles.
#[derive(Clone, Copy, Debug)]
pub struct SsBlockParams {
    pub mb_spa: Option<MambaBlockParams>,
    pub mb_spe: Option<MambaBlockParams>,
    pub enhance: Option<Mlp>,
}

impl SsBlockParams {
    pub fn lookup(vars: &VarMap, cfg: &ModelConfig, l: usize) -> Result<Self> {
        let p = format!("blocks.{l}");
        let mode = cfg.branch_mode;
        Ok(SsBlockParams {
            mb_spa: mode
                .spatial()
                .then(|| MambaBlockParams::lookup(vars, &format!("{p}.spa")))
                .transpose()?,
            mb_spe: mode
                .spectral()
                .then(|| MambaBlockParams::lookup(vars, &format!("{p}.spe")))
                .transpose()?,
            enhance: (cfg.enhancement == Enhancement::On)
                .then(|| Mlp::lookup(vars, &format!("{p}.enhance")))
                .transpose()?,
        })
    }
}

/// Gate from the centre spatial token and the mean spectral token:
/// `s = sigmoid(mlp((z_spa[center] + mean(z_spe)) / 2))`, then both token
/// sets are scaled by `s` row-wise. With a single branch the gate is fed by
/// that branch's feature alone. `unit_gate` replaces `s` by ones.
///
/// Returns the scaled tokens and the `1×D` gate.
pub fn enhance(
    g: &mut Graph,
    z: BranchTokens,
    grid: (usize, usize),
    mlp: &Mlp,
    unit_gate: bool,
) -> Result<(BranchTokens, Var)> {
    let f1 = match z.spa {
        Some(spa) => {
            let center = center_token_index(grid.0, grid.1)?;
            if g.shape(spa)[0] != grid.0 * grid.1 {
                return dim_err(format!(
                    "{:?} spatial tokens for a {grid:?} grid",
                    g.shape(spa)
                ));
            }
            Some(g.row(spa, center)?)
        }
        None => None,
    };
    let f2 = z.spe.map(|spe| g.mean_rows(spe)).transpose()?;
    let f = match (f1, f2) {
        (Some(a), Some(b)) => {
            let s = g.add(a, b)?;
            g.scale(s, 0.5)?
        }
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => return contract_err("enhancement needs at least one branch"),
    };
    let s = if unit_gate {
        let d = g.shape(f)[1];
        g.constant(Tensor::ones(&[1, d]))
    } else {
        let pre = mlp.forward(g, f)?;
        g.sigmoid(pre)?
    };
    let spa = z.spa.map(|t| g.mul(t, s)).transpose()?;
    let spe = z.spe.map(|t| g.mul(t, s)).transpose()?;
    Ok((BranchTokens { spa, spe }, s))
}

/// One spectral-spatial block: each branch through its Mamba block, then the
/// shared enhancement gate when enabled.
pub fn ss_block_forward(
    g: &mut Graph,
    z: BranchTokens,
    grid: (usize, usize),
    p: &SsBlockParams,
    unit_gate: bool,
) -> Result<(BranchTokens, Option<Var>)> {
    let run =
        |g: &mut Graph, t: Option<Var>, mb: Option<MambaBlockParams>| -> Result<Option<Var>> {
            match (t, mb) {
                (Some(t), Some(mb)) => Ok(Some(mamba_block_forward(g, t, &mb)?)),
                (None, None) => Ok(None),
                _ => contract_err("branch tokens and block parameters disagree"),
            }
        };
    let mixed = BranchTokens {
        spa: run(g, z.spa, p.mb_spa)?,
        spe: run(g, z.spe, p.mb_spe)?,
    };
    match &p.enhance {
        Some(mlp) => {
            let (out, s) = enhance(g, mixed, grid, mlp, unit_gate)?;
            Ok((out, Some(s)))
        }
        None => Ok((mixed, None)),
    }
}

/// `mean_rows(z_spa) + mean_rows(z_spe)`, as a `1×D` row.
pub fn pool_and_fuse(g: &mut Graph, z: BranchTokens) -> Result<Var> {
    let a = z.spa.map(|t| g.mean_rows(t)).transpose()?;
    let b = z.spe.map(|t| g.mean_rows(t)).transpose()?;
    match (a, b) {
        (Some(a), Some(b)) => g.add(a, b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => contract_err("nothing to pool"),
    }
}

/// `f · W + b` with `W` stored `D × K`.
pub fn classify(g: &mut Graph, f: Var, w: Var, b: Var) -> Result<Var> {
    let z = g.matmul(f, w)?;
    g.add(z, b)
}

/// `−log softmax(logits)[label]`, evaluated after subtracting the max logit.
pub fn cross_entropy(g: &mut Graph, logits: Var, label: usize) -> Result<Var> {
    let z = g.value(logits).data();
    let k = z.len();
    if label >= k {
        return contract_err(format!("label {label} out of range for {k} classes"));
    }
    let probs = softmax(z);
    let loss = -probs[label].ln();
    let loss = if loss.is_finite() {
        loss
    } else {
        // p underflowed; fall back to the log-sum-exp form
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[label]
    };
    let shape = g.shape(logits).to_vec();
    g.custom(
        &[logits],
        Tensor::scalar(loss),
        Box::new(move |_, _, up| {
            let u = up.data()[0];
            let mut d: Vec<f64> = probs.iter().map(|p| p * u).collect();
            d[label] -= u;
            vec![Tensor::new(shape.clone(), d).expect("logit gradient shape")]
        }),
    )
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSnapshot {
    pub spatial: Option<Tensor>,
    pub spectral: Option<Tensor>,
    pub gate: Option<Tensor>,
}

/// Token sets after positional embedding and after every block.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub input: BlockSnapshot,
    pub blocks: Vec<BlockSnapshot>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub trace: bool,
    /// Replace every enhancement gate by the constant 1.
    pub unit_gate: bool,
}

pub struct ForwardOutput {
    pub logits: Var,
    pub trace: Option<ForwardTrace>,
}

/// Parameters and configuration of a classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    /// Fresh parameters: tokenizer, then blocks in order, then the head.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mode = config.branch_mode;
        init_tokenizer(
            &mut store,
            &config.tokenizer,
            mode.spatial(),
            mode.spectral(),
            rng,
        );
        let block = config.block();
        let d = config.tokenizer.d;
        for l in 0..config.l_blocks {
            if mode.spatial() {
                init_mamba_block(&mut store, &format!("blocks.{l}.spa"), &block, rng);
            }
            if mode.spectral() {
                init_mamba_block(&mut store, &format!("blocks.{l}.spe"), &block, rng);
            }
            if config.enhancement == Enhancement::On {
                Mlp::init(&mut store, &format!("blocks.{l}.enhance"), d, d, d, rng);
            }
        }
        let bound = 1.0 / (d as f64).sqrt();
        store.insert(
            "head.w",
            crate::ssm::block_uniform(rng, &[d, config.classes], bound),
        );
        store.insert("head.b", Tensor::zeros(&[config.classes]));
        Ok(Model {
            config,
            params: store,
        })
    }

    /// Wraps loaded parameters after checking names and shapes against a
    /// freshly initialized template.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let template = Model::init(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected: Vec<(&str, &[usize])> = template
            .params
            .iter()
            .map(|(n, t)| (n, t.shape()))
            .collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != got {
            return Err(Error::Format(
                "parameter set does not match the model configuration".into(),
            ));
        }
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Trainable scalars per group: `tokenizer`, `blocks.{l}`, `head`.
    pub fn param_groups(&self) -> Vec<(String, usize)> {
        let mut out = vec![(
            "tokenizer".to_string(),
            self.params.scalar_count_with_prefix("tok."),
        )];
        for l in 0..self.config.l_blocks {
            let p = format!("blocks.{l}.");
            out.push((
                format!("blocks.{l}"),
                self.params.scalar_count_with_prefix(&p),
            ));
        }
        out.push((
            "head".to_string(),
            self.params.scalar_count_with_prefix("head."),
        ));
        out
    }

    /// Builds the forward pass for one `H×W×B` sample into `g`, using the
    /// parameter leaves in `vars`.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &VarMap,
        sample: &Tensor,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let tc = &cfg.tokenizer;
        if sample.shape() != [tc.window, tc.window, tc.bands] {
            return dim_err(format!(
                "sample {:?} does not match a {}×{}×{} window",
                sample.shape(),
                tc.window,
                tc.window,
                tc.bands
            ));
        }
        let side = tc.grid_side();
        let mut z = BranchTokens {
            spa: None,
            spe: None,
        };
        if cfg.branch_mode.spatial() {
            let mlp = Mlp::lookup(vars, "tok.mlp_spa")?;
            let mapped = spectral_map(g, sample, &mlp)?;
            let seq = spatial_tokenize(
                g,
                mapped,
                tc.window,
                tc.window,
                tc.p_spa,
                vars.get("tok.e_spa")?,
            )?;
            z.spa = Some(add_positional(g, seq)?.tokens);
        }
        if cfg.branch_mode.spectral() {
            let mlp = Mlp::lookup(vars, "tok.mlp_spe")?;
            let crop = center_crop(sample, tc.s_center)?;
            let seq = spectral_tokenize(g, &crop, tc.p_spe, &mlp, vars.get("tok.e_spe")?)?;
            z.spe = Some(add_positional(g, seq)?.tokens);
        }
        let snap = |g: &Graph, z: &BranchTokens, s: Option<Var>| BlockSnapshot {
            spatial: z.spa.map(|v| g.value(v).clone()),
            spectral: z.spe.map(|v| g.value(v).clone()),
            gate: s.map(|v| g.value(v).clone()),
        };
        let mut trace = opts.trace.then(|| ForwardTrace {
            input: snap(g, &z, None),
            blocks: Vec::new(),
        });
        for l in 0..cfg.l_blocks {
            let p = SsBlockParams::lookup(vars, cfg, l)?;
            let (next, s) = ss_block_forward(g, z, (side, side), &p, opts.unit_gate)?;
            z = next;
            if let Some(t) = trace.as_mut() {
                t.blocks.push(snap(g, &z, s));
            }
        }
        let f = pool_and_fuse(g, z)?;
        let logits = classify(g, f, vars.get("head.w")?, vars.get("head.b")?)?;
        Ok(ForwardOutput { logits, trace })
    }

    /// Logits for one sample, without keeping the graph.
    pub fn logits(&self, sample: &Tensor) -> Result<Vec<f64>> {
        self.logits_with(sample, ForwardOptions::default())
    }

    pub fn logits_with(&self, sample: &Tensor, opts: ForwardOptions) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let out = self.forward(&mut g, &vars, sample, opts)?;
        Ok(g.value(out.logits).data().to_vec())
    }

    pub fn predict(&self, sample: &Tensor) -> Result<usize> {
        Ok(argmax(&self.logits(sample)?))
    }

    /// Loss and parameter gradients for one labelled sample.
    pub fn loss_and_grads(
        &self,
        sample: &Tensor,
        label: usize,
    ) -> Result<(f64, Vec<f64>, ParamStore)> {
        let mut g = Graph::new();
        let vars = self.params.bind(&mut g);
        let out = self.forward(&mut g, &vars, sample, ForwardOptions::default())?;
        let logits = g.value(out.logits).data().to_vec();
        let loss = cross_entropy(&mut g, out.logits, label)?;
        g.backward(loss)?;
        Ok((
            g.value(loss).data()[0],
            logits,
            self.params.grads(&g, &vars),
        ))
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(branch_mode: BranchMode, enhancement: Enhancement) -> ModelConfig {
        ModelConfig {
            tokenizer: TokenizerConfig {
                window: 6,
                bands: 8,
                p_spa: 2,
                p_spe: 2,
                d: 8,
                d_prime: 4,
                s_center: 3,
            },
            l_blocks: 1,
            classes: 3,
            branch_mode,
            enhancement,
            expand: 2,
            n_state: 4,
            k_conv: 4,
        }
    }

    fn sample(cfg: &ModelConfig, seed: u64) -> Tensor {
        let tc = cfg.tokenizer;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[tc.window, tc.window, tc.bands], |_| {
            rng.random_range(0.0..1.0)
        })
    }

    #[test]
    fn center_index() {
        assert_eq!(center_token_index(9, 9).unwrap() + 1, 41);
        assert_eq!(center_token_index(1, 1).unwrap(), 0);
        assert_eq!(center_token_index(3, 5).unwrap(), 7);
        assert!(center_token_index(2, 2).is_err());
    }

    #[test]
    fn even_grid_rejected_only_with_enhancement() {
        let mut cfg = tiny(BranchMode::SpectralSpatial, Enhancement::On);
        cfg.tokenizer.p_spa = 3;
        assert!(cfg.validate().is_err());
        cfg.enhancement = Enhancement::Off;
        cfg.validate().unwrap();
        cfg.enhancement = Enhancement::On;
        cfg.branch_mode = BranchMode::SpectralOnly;
        cfg.validate().unwrap();
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(&[1, 16]));
        let l = cross_entropy(&mut g, z, 3).unwrap();
        assert!((g.value(l).data()[0] - 16f64.ln()).abs() < 1e-14);

        let z = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let l = cross_entropy(&mut g, z, 2).unwrap();
        let oracle = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        assert!((g.value(l).data()[0] - oracle).abs() < 1e-14);
        assert!((oracle - 0.40761).abs() < 1e-5);

        let z = g.constant(Tensor::new(vec![1, 3], vec![30.0, 0.0, 0.0]).unwrap());
        let l = cross_entropy(&mut g, z, 0).unwrap();
        assert!(g.value(l).data()[0] < 1e-12);
        let z = g.constant(Tensor::new(vec![1, 2], vec![-800.0, 800.0]).unwrap());
        let l = cross_entropy(&mut g, z, 0).unwrap();
        assert!((g.value(l).data()[0] - 1600.0).abs() < 1e-9);
        assert!(cross_entropy(&mut g, z, 2).is_err());
    }

    #[test]
    fn pool_and_classify() {
        let mut g = Graph::new();
        let a = g.constant(
            Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0]]).unwrap(),
        );
        let b = g.constant(Tensor::from_rows(&[vec![0.5, -1.0], vec![1.5, 1.0]]).unwrap());
        let f = pool_and_fuse(
            &mut g,
            BranchTokens {
                spa: Some(a),
                spe: Some(b),
            },
        )
        .unwrap();
        assert_eq!(g.value(f).data(), &[3.0 + 1.0, 5.0 + 0.0]);
        let w = g.constant(Tensor::zeros(&[2, 3]));
        let bias = g.constant(Tensor::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let y = classify(&mut g, f, w, bias).unwrap();
        assert_eq!(g.value(y).data(), &[0.1, 0.2, 0.3]);
        let w = g.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        let zero = g.constant(Tensor::zeros(&[2]));
        let y = classify(&mut g, f, w, zero).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 4.0]);
    }

    #[test]
    fn enhance_uses_center_and_mean() {
        let mut g = Graph::new();
        let spa = g.constant(Tensor::from_fn(&[9, 2], |i| i as f64));
        let spe = g.constant(Tensor::from_fn(&[4, 2], |i| [1.0, -1.0][i % 2]));
        // identity-free MLP with zero weights: gate = sigmoid(bias)
        let mlp = Mlp {
            fc1_w: g.constant(Tensor::zeros(&[2, 2])),
            fc1_b: g.constant(Tensor::zeros(&[2])),
            fc2_w: g.constant(Tensor::zeros(&[2, 2])),
            fc2_b: g.constant(Tensor::new(vec![2], vec![0.0, 50.0]).unwrap()),
        };
        let (out, s) = enhance(
            &mut g,
            BranchTokens {
                spa: Some(spa),
                spe: Some(spe),
            },
            (3, 3),
            &mlp,
            false,
        )
        .unwrap();
        assert_eq!(g.value(s).data()[0], 0.5);
        assert!((g.value(s).data()[1] - 1.0).abs() < 1e-15);
        let spa_out = g.value(out.spa.unwrap()).clone();
        assert_eq!(spa_out.at2(4, 0), 4.0);
        assert_eq!(spa_out.at2(4, 1), 9.0 * g.value(s).data()[1]);
        assert!(enhance(
            &mut g,
            BranchTokens {
                spa: Some(spa),
                spe: None
            },
            (2, 2),
            &mlp,
            false
        )
        .is_err());
    }

    #[test]
    fn gate_sees_center_token_and_spectral_mean() {
        // fc1 identity, fc2 identity: s = sigmoid(silu(f))
        let mut g = Graph::new();
        let eye = Tensor::from_fn(&[2, 2], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let mlp = Mlp {
            fc1_w: g.constant(eye.clone()),
            fc1_b: g.constant(Tensor::zeros(&[2])),
            fc2_w: g.constant(eye),
            fc2_b: g.constant(Tensor::zeros(&[2])),
        };
        let spa = g.constant(Tensor::from_fn(&[9, 2], |i| {
            if i / 2 == 4 {
                0.8
            } else {
                -5.0
            }
        }));
        let spe = g.constant(Tensor::from_fn(&[3, 2], |i| (i / 2) as f64 * 0.1));
        let (_, s) = enhance(
            &mut g,
            BranchTokens {
                spa: Some(spa),
                spe: Some(spe),
            },
            (3, 3),
            &mlp,
            false,
        )
        .unwrap();
        let f: f64 = (0.8 + 0.1) / 2.0;
        let expect = crate::tensor::sigmoid_value(f * crate::tensor::sigmoid_value(f));
        for v in g.value(s).data() {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn shapes_and_determinism() {
        for mode in BranchMode::ALL {
            for enh in [Enhancement::On, Enhancement::Off] {
                let cfg = tiny(mode, enh);
                let model = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
                let s = sample(&cfg, 4);
                let a = model.logits(&s).unwrap();
                assert_eq!(a.len(), 3);
                assert_eq!(a, model.logits(&s).unwrap());
                let mut g = Graph::new();
                let vars = model.params.bind(&mut g);
                let out = model
                    .forward(
                        &mut g,
                        &vars,
                        &s,
                        ForwardOptions {
                            trace: true,
                            unit_gate: false,
                        },
                    )
                    .unwrap();
                let t = out.trace.unwrap();
                assert_eq!(t.blocks.len(), 1);
                let b = &t.blocks[0];
                assert_eq!(
                    b.spatial.as_ref().map(|t| t.shape().to_vec()),
                    mode.spatial().then(|| vec![9, 8])
                );
                assert_eq!(
                    b.spectral.as_ref().map(|t| t.shape().to_vec()),
                    mode.spectral().then(|| vec![4, 8])
                );
                if let Some(gate) = &b.gate {
                    assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
                }
                assert_eq!(b.gate.is_some(), enh == Enhancement::On);
            }
        }
    }

    #[test]
    fn unit_gate_equals_disabled_enhancement() {
        for mode in BranchMode::ALL {
            let on = Model::init(
                tiny(mode, Enhancement::On),
                &mut ChaCha8Rng::seed_from_u64(9),
            )
            .unwrap();
            let mut params = ParamStore::new();
            for (n, t) in on.params().iter().filter(|(n, _)| !n.contains(".enhance.")) {
                params.insert(n, t.clone());
            }
            let off = Model::from_params(tiny(mode, Enhancement::Off), params).unwrap();
            let s = sample(on.config(), 5);
            let forced = on
                .logits_with(
                    &s,
                    ForwardOptions {
                        trace: false,
                        unit_gate: true,
                    },
                )
                .unwrap();
            assert_eq!(forced, off.logits(&s).unwrap());
            assert_ne!(on.logits(&s).unwrap(), forced);
        }
    }

    #[test]
    fn from_params_rejects_mismatch() {
        let cfg = tiny(BranchMode::SpectralSpatial, Enhancement::On);
        let m = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut p = m.params().clone();
        p.insert("extra", Tensor::zeros(&[1]));
        assert!(Model::from_params(cfg, p).is_err());
    }

    #[test]
    fn reference_config_parameter_arithmetic() {
        let cfg = ModelConfig {
            tokenizer: TokenizerConfig {
                window: 27,
                bands: 200,
                p_spa: 3,
                p_spe: 2,
                d: 64,
                d_prime: 32,
                s_center: 3,
            },
            l_blocks: 2,
            classes: 16,
            branch_mode: BranchMode::SpectralSpatial,
            enhancement: Enhancement::On,
            expand: 2,
            n_state: 16,
            k_conv: 4,
        };
        let m = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.params().scalar_count_with_prefix("head."), 64 * 16 + 16);
        assert_eq!(m.params().get("tok.e_spa").unwrap().numel(), 9 * 32 * 64);
        let groups: usize = m.param_groups().iter().map(|(_, n)| n).sum();
        assert_eq!(groups, m.params().scalar_count());
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[1.0, 3.0, 2.0].map(|v| v + 100.0)), 1);
    }
}
