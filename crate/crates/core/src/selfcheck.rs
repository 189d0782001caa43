//! Fast invariant suite: gradient checks, scan/convolution duality and
//! metric oracles. Each check reports pass/fail with a short detail line.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ConfusionMatrix;
use crate::error::Result;
use crate::model::{cross_entropy, BranchMode, Enhancement, ForwardOptions, Model, ModelConfig};
use crate::ssm::{conv_apply, discretize_zoh, recurrent_scan, ssm_conv_kernel};
use crate::tensor::{grad_check, Graph, LeafReport, Tensor, VarMap};
use crate::tokens::TokenizerConfig;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// The smallest configuration with an odd patch grid that still exercises
/// every parameter group.
pub fn tiny_model_config() -> ModelConfig {
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
        branch_mode: BranchMode::SpectralSpatial,
        enhancement: Enhancement::On,
        expand: 2,
        n_state: 4,
        k_conv: 4,
    }
}

/// Finite-difference check of the cross-entropy loss of `model` on one
/// sample; returns one report per parameter tensor, by name.
pub fn model_grad_check(
    model: &Model,
    sample: &Tensor,
    label: usize,
    h: f64,
    tol: f64,
) -> Result<Vec<(String, LeafReport)>> {
    let names: Vec<String> = model.params().names().map(String::from).collect();
    let leaves: Vec<Tensor> = model.params().iter().map(|(_, t)| t.clone()).collect();
    let report = grad_check(
        |g: &mut Graph, vars| {
            let map = VarMap::from_vars(names.iter().map(String::as_str), vars);
            let out = model.forward(g, &map, sample, ForwardOptions::default())?;
            cross_entropy(g, out.logits, label)
        },
        &leaves,
        h,
        tol,
    )?;
    Ok(names.into_iter().zip(report.leaves).collect())
}

fn duality_check(seeds: u64) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (len, n) = (rng.random_range(1..=64), rng.random_range(1..=8));
        let a: Vec<f64> = (0..n).map(|_| -rng.random_range(0.05..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a_bar, b_bar) = discretize_zoh(&a, &b, rng.random_range(0.01..0.5))?;
        let rep = |v: &[f64]| v.repeat(len);
        let y = recurrent_scan(&rep(&a_bar), &rep(&b_bar), &rep(&c), &x, n, None)?;
        let k = ssm_conv_kernel(&a_bar, &b_bar, &c, len)?;
        let yc = conv_apply(&k, &x);
        worst = y
            .iter()
            .zip(&yc)
            .fold(worst, |m, (p, q)| m.max((p - q).abs()));
    }
    Ok(CheckResult {
        name: "scan/convolution duality".into(),
        passed: worst < 1e-10,
        detail: format!("{seeds} seeds, max |scan − conv| = {worst:.2e}"),
    })
}

fn grad_checks() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = tiny_model_config();
    let model = Model::init(cfg, &mut rng)?;
    let tc = cfg.tokenizer;
    let sample = Tensor::from_fn(&[tc.window, tc.window, tc.bands], |_| {
        rng.random_range(0.0..1.0)
    });
    let reports = model_grad_check(&model, &sample, 1, 1e-5, 1e-4)?;
    for group in [
        "tok.",
        "blocks.0.spa.",
        "blocks.0.spe.",
        "blocks.0.enhance.",
        "head.",
    ] {
        let worst = reports
            .iter()
            .filter(|(n, _)| n.starts_with(group))
            .fold(0.0f64, |m, (_, r)| m.max(r.max_rel_err));
        out.push(CheckResult {
            name: format!("gradient {}", group.trim_end_matches('.')),
            passed: worst < 1e-4,
            detail: format!("max relative error {worst:.2e}"),
        });
    }
    Ok(out)
}

fn metric_checks() -> Result<Vec<CheckResult>> {
    let m = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3])?.metrics()?;
    let hand = m.oa == 0.75 && m.kappa == 0.5;
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let k = rng.random_range(2..=3);
        let pairs: Vec<(usize, usize)> = (0..9)
            .map(|_| (rng.random_range(0..k), rng.random_range(0..k)))
            .collect();
        let cm = ConfusionMatrix::from_pairs(k, pairs.iter().copied())?;
        let Ok(m) = cm.metrics() else { continue };
        let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
        ok &= (m.oa - correct / 9.0).abs() < 1e-15;
        ok &= m.kappa <= m.oa + 1e-15;
    }
    Ok(vec![CheckResult {
        name: "metrics oracle".into(),
        passed: hand && ok,
        detail: format!(
            "kappa([[3,1],[1,3]]) = {}, random tallies {}",
            m.kappa,
            if ok { "agree" } else { "disagree" }
        ),
    }])
}

pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut out = vec![duality_check(100)?];
    out.extend(grad_checks()?);
    out.extend(metric_checks()?);
    Ok(out)
}
