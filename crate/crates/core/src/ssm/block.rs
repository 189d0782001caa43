use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{causal_conv1d, rms_norm, selective_scan};
use crate::error::{dim_err, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var, VarMap};

/// Internal extents of a basic Mamba block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub d_model: usize,
    pub expand: usize,
    pub n_state: usize,
    pub k_conv: usize,
}

impl BlockConfig {
    pub const NORM_EPS: f64 = 1e-5;

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }
}

/// Handles to the selective-SSM parameters of one block.
///
/// `a_log` is `D_inner × n_state` (with `A = −exp(a_log)`), `w_delta` is
/// `D_inner × D_inner` plus `delta_bias`, `w_b`/`w_c` are `D_inner × n_state`,
/// `d_skip` is `[D_inner]`.
#[derive(Clone, Copy, Debug)]
pub struct SsmParams {
    pub a_log: Var,
    pub w_delta: Var,
    pub delta_bias: Var,
    pub w_b: Var,
    pub w_c: Var,
    pub d_skip: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct MambaBlockParams {
    pub norm_gain: Var,
    pub norm_bias: Var,
    /// `D × 2·D_inner`; the first half of the columns is the main path, the
    /// second half the gate.
    pub in_proj: Var,
    pub conv_w: Var,
    pub conv_b: Var,
    pub ssm: SsmParams,
    pub out_proj: Var,
}

impl SsmParams {
    pub fn lookup(vars: &VarMap, prefix: &str) -> Result<Self> {
        let v = |n: &str| vars.get(&format!("{prefix}.{n}"));
        Ok(SsmParams {
            a_log: v("a_log")?,
            w_delta: v("w_delta")?,
            delta_bias: v("delta_bias")?,
            w_b: v("w_b")?,
            w_c: v("w_c")?,
            d_skip: v("d_skip")?,
        })
    }
}

impl MambaBlockParams {
    pub fn lookup(vars: &VarMap, prefix: &str) -> Result<Self> {
        let v = |n: &str| vars.get(&format!("{prefix}.{n}"));
        Ok(MambaBlockParams {
            norm_gain: v("norm_gain")?,
            norm_bias: v("norm_bias")?,
            in_proj: v("in_proj")?,
            conv_w: v("conv_w")?,
            conv_b: v("conv_b")?,
            ssm: SsmParams::lookup(vars, &format!("{prefix}.ssm"))?,
            out_proj: v("out_proj")?,
        })
    }
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Inverse of softplus, for placing the initial step sizes.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Adds freshly initialized block parameters under `prefix`.
///
/// `a_log[d, n] = ln(n + 1)` (S4D-real), step bias such that the initial
/// softplus output is log-uniform on `[1e-3, 1e-1]`, `d_skip = 1`, unit
/// norm gain, linear layers uniform in `±1/sqrt(fan_in)`.
pub fn init_mamba_block(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &BlockConfig,
    rng: &mut impl Rng,
) {
    let (d, di, n, k) = (cfg.d_model, cfg.d_inner(), cfg.n_state, cfg.k_conv);
    let bound = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
    store.insert(format!("{prefix}.norm_gain"), Tensor::ones(&[d]));
    store.insert(format!("{prefix}.norm_bias"), Tensor::zeros(&[d]));
    store.insert(
        format!("{prefix}.in_proj"),
        uniform(rng, &[d, 2 * di], bound(d)),
    );
    store.insert(format!("{prefix}.conv_w"), uniform(rng, &[di, k], bound(k)));
    store.insert(format!("{prefix}.conv_b"), uniform(rng, &[di], bound(k)));
    store.insert(
        format!("{prefix}.ssm.a_log"),
        Tensor::from_fn(&[di, n], |i| ((i % n) as f64 + 1.0).ln()),
    );
    store.insert(
        format!("{prefix}.ssm.w_delta"),
        uniform(rng, &[di, di], bound(di)),
    );
    let (lo, hi) = (1e-3_f64.ln(), 1e-1_f64.ln());
    store.insert(
        format!("{prefix}.ssm.delta_bias"),
        Tensor::from_fn(&[di], |_| softplus_inv(rng.random_range(lo..hi).exp())),
    );
    store.insert(
        format!("{prefix}.ssm.w_b"),
        uniform(rng, &[di, n], bound(di)),
    );
    store.insert(
        format!("{prefix}.ssm.w_c"),
        uniform(rng, &[di, n], bound(di)),
    );
    store.insert(format!("{prefix}.ssm.d_skip"), Tensor::ones(&[di]));
    store.insert(
        format!("{prefix}.out_proj"),
        uniform(rng, &[di, d], bound(di)),
    );
}

/// Input-dependent step, input and output projections:
/// `delta = softplus(x·w_delta + bias)`, `b = x·w_b`, `c = x·w_c`.
pub fn selective_params(g: &mut Graph, x: Var, p: &SsmParams) -> Result<(Var, Var, Var)> {
    let pre = g.matmul(x, p.w_delta)?;
    let pre = g.add(pre, p.delta_bias)?;
    let delta = g.softplus(pre)?;
    let b = g.matmul(x, p.w_b)?;
    let c = g.matmul(x, p.w_c)?;
    Ok((delta, b, c))
}

/// `tokens + OutProj(SSM(silu(conv(main))) ⊙ silu(gate))` where
/// `(main, gate)` split `InProj(norm(tokens))`. Shape `N×D` in and out.
pub fn mamba_block_forward(g: &mut Graph, tokens: Var, p: &MambaBlockParams) -> Result<Var> {
    let (n, d) = g.value(tokens).dims2()?;
    if n == 0 || g.shape(p.in_proj)[0] != d {
        return dim_err(format!(
            "tokens {:?} vs in_proj {:?}",
            g.shape(tokens),
            g.shape(p.in_proj)
        ));
    }
    let di = g.shape(p.in_proj)[1] / 2;
    let normed = rms_norm(g, tokens, BlockConfig::NORM_EPS)?;
    let normed = g.mul(normed, p.norm_gain)?;
    let normed = g.add(normed, p.norm_bias)?;
    let proj = g.matmul(normed, p.in_proj)?;
    let main = g.slice_cols(proj, 0, di)?;
    let gate = g.slice_cols(proj, di, 2 * di)?;

    let conv = causal_conv1d(g, main, p.conv_w, p.conv_b)?;
    let u = g.silu(conv)?;
    let (delta, b, c) = selective_params(g, u, &p.ssm)?;
    let y = selective_scan(g, u, delta, p.ssm.a_log, b, c, p.ssm.d_skip)?;

    let gate = g.silu(gate)?;
    let z = g.mul(y, gate)?;
    let out = g.matmul(z, p.out_proj)?;
    g.add(tokens, out)
}
