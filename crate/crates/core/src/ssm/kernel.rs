//! Plain-slice state-space kernels: discretization, the recurrent scan and its
//! convolutional dual. No autodiff here; the graph op in `ops` wraps these.

use crate::error::{contract_err, dim_err, Result};

/// Below this `|delta·a|` the ZOH input gain switches to its Taylor series.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-6;

/// Zero-order-hold coefficients for one diagonal state entry: returns
/// `(a_bar, gain)` with `a_bar = e^{delta·a}` and `b_bar = gain · b`, where
/// `gain = (e^{delta·a} − 1) / a`.
#[inline]
pub fn zoh_coeffs(a: f64, delta: f64) -> (f64, f64) {
    let z = delta * a;
    let a_bar = z.exp();
    let gain = if z.abs() < ZOH_SERIES_THRESHOLD {
        delta * (1.0 + z * (0.5 + z / 6.0))
    } else {
        z.exp_m1() / a
    };
    (a_bar, gain)
}

/// Partial derivatives of [`zoh_coeffs`]:
/// `(d a_bar/d delta, d a_bar/d a, d gain/d delta, d gain/d a)`.
#[inline]
pub(crate) fn zoh_partials(a: f64, delta: f64, a_bar: f64, gain: f64) -> (f64, f64, f64, f64) {
    let z = delta * a;
    let (dg_dd, dg_da) = if z.abs() < ZOH_SERIES_THRESHOLD {
        (1.0 + z * (1.0 + 0.5 * z), delta * delta * (0.5 + z / 3.0))
    } else {
        (a_bar, (delta * a_bar - gain) / a)
    };
    (a * a_bar, delta * a_bar, dg_dd, dg_da)
}

/// ZOH discretization of a diagonal system: `a_bar = e^{delta·a}`,
/// `b_bar = ((e^{delta·a} − 1)/a)·b`, with the series limit near `a = 0`.
pub fn discretize_zoh(a_diag: &[f64], b: &[f64], delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if delta.is_nan() || delta <= 0.0 {
        return contract_err(format!("discretization step must be positive, got {delta}"));
    }
    if a_diag.len() != b.len() {
        return dim_err(format!("a has {} states, b has {}", a_diag.len(), b.len()));
    }
    Ok(a_diag
        .iter()
        .zip(b)
        .map(|(&a, &bv)| {
            let (a_bar, gain) = zoh_coeffs(a, delta);
            (a_bar, gain * bv)
        })
        .unzip())
}

/// Single-channel linear recurrence `h_t = a_bar_t ⊙ h_{t−1} + b_bar_t·x_t`,
/// `y_t = ⟨c_t, h_t⟩ (+ d_skip·x_t)`, from `h_0 = 0`.
///
/// `a_bar`, `b_bar`, `c` are `L × n_state`, row-major.
pub fn recurrent_scan(
    a_bar: &[f64],
    b_bar: &[f64],
    c: &[f64],
    x: &[f64],
    n_state: usize,
    d_skip: Option<f64>,
) -> Result<Vec<f64>> {
    let len = x.len();
    if n_state == 0
        || [a_bar.len(), b_bar.len(), c.len()]
            .iter()
            .any(|&l| l != len * n_state)
    {
        return contract_err(format!(
            "scan sequences must all be {len}×{n_state} (got {}, {}, {})",
            a_bar.len(),
            b_bar.len(),
            c.len()
        ));
    }
    let mut h = vec![0.0; n_state];
    let mut y = Vec::with_capacity(len);
    for t in 0..len {
        let row = t * n_state..(t + 1) * n_state;
        let (ab, bb, ct) = (&a_bar[row.clone()], &b_bar[row.clone()], &c[row]);
        let mut acc = 0.0;
        for n in 0..n_state {
            h[n] = ab[n] * h[n] + bb[n] * x[t];
            acc += ct[n] * h[n];
        }
        y.push(acc + d_skip.map_or(0.0, |d| d * x[t]));
    }
    Ok(y)
}

/// Structured kernel `K[i] = ⟨c, a_bar^i ⊙ b_bar⟩` for `i < len` of a
/// time-invariant diagonal system.
pub fn ssm_conv_kernel(a_bar: &[f64], b_bar: &[f64], c: &[f64], len: usize) -> Result<Vec<f64>> {
    if len < 1 {
        return contract_err("kernel length must be at least 1");
    }
    if a_bar.len() != b_bar.len() || a_bar.len() != c.len() {
        return dim_err("a_bar, b_bar and c must have one entry per state");
    }
    let mut power: Vec<f64> = b_bar.to_vec();
    let mut k = Vec::with_capacity(len);
    for _ in 0..len {
        k.push(c.iter().zip(&power).map(|(a, b)| a * b).sum());
        power.iter_mut().zip(a_bar).for_each(|(p, a)| *p *= a);
    }
    Ok(k)
}

/// Causal convolution `y_t = Σ_{i ≤ t} K[i]·x_{t−i}`.
pub fn conv_apply(kernel: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            (0..=t.min(kernel.len().saturating_sub(1)))
                .map(|i| kernel[i] * x[t - i])
                .sum()
        })
        .collect()
}

/// Extents of a multi-channel selective scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub len: usize,
    pub channels: usize,
    pub n_state: usize,
}

/// Multi-channel selective scan with input-dependent step and projections.
///
/// Layouts: `x`, `delta` are `L × C`; `a_log` is `C × n`; `b`, `c` are
/// `L × n` (shared across channels); `d_skip` is `C`. The state matrix is
/// `A = −exp(a_log)`. When `states` is given it receives every `h_t`
/// (`L × C × n`) for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_forward(
    dims: ScanDims,
    x: &[f64],
    delta: &[f64],
    a_log: &[f64],
    b: &[f64],
    c: &[f64],
    d_skip: &[f64],
    mut states: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    let ScanDims {
        len,
        channels,
        n_state,
    } = dims;
    let a: Vec<f64> = a_log.iter().map(|v| -v.exp()).collect();
    let mut h = vec![0.0; channels * n_state];
    let mut y = vec![0.0; len * channels];
    if let Some(s) = states.as_deref_mut() {
        s.clear();
        s.reserve(len * channels * n_state);
    }
    for t in 0..len {
        let bt = &b[t * n_state..(t + 1) * n_state];
        let ct = &c[t * n_state..(t + 1) * n_state];
        for d in 0..channels {
            let dt = delta[t * channels + d];
            let xv = x[t * channels + d];
            let hd = &mut h[d * n_state..(d + 1) * n_state];
            let ad = &a[d * n_state..(d + 1) * n_state];
            let mut acc = 0.0;
            for n in 0..n_state {
                let (a_bar, gain) = zoh_coeffs(ad[n], dt);
                hd[n] = a_bar * hd[n] + gain * bt[n] * xv;
                acc += ct[n] * hd[n];
            }
            y[t * channels + d] = acc + d_skip[d] * xv;
        }
        if let Some(s) = states.as_deref_mut() {
            s.extend_from_slice(&h);
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoh_half_life() {
        let (a_bar, b_bar) = discretize_zoh(&[-1.0], &[1.0], std::f64::consts::LN_2).unwrap();
        assert!((a_bar[0] - 0.5).abs() < 1e-15);
        assert!((b_bar[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zoh_small_step_limit() {
        let (a_bar, b_bar) = discretize_zoh(&[-2.0, -0.5], &[1.0, 3.0], 1e-12).unwrap();
        for v in a_bar {
            assert!((v - 1.0).abs() < 1e-11);
        }
        for v in b_bar {
            assert!(v.abs() < 1e-11);
        }
    }

    #[test]
    fn zoh_euler_limit_at_zero_a() {
        let (a_bar, b_bar) = discretize_zoh(&[0.0], &[2.0], 0.3).unwrap();
        assert_eq!(a_bar[0], 1.0);
        assert!((b_bar[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn zoh_series_branch_is_continuous() {
        let (_, limit) = discretize_zoh(&[0.0], &[2.0], 0.3).unwrap();
        let (_, near) = discretize_zoh(&[1e-9], &[2.0], 0.3).unwrap();
        assert!((near[0] - limit[0]).abs() < 1e-9);
        // either side of the switch point
        let a_lo = -0.999e-6 / 0.3;
        let a_hi = -1.001e-6 / 0.3;
        let (_, lo) = zoh_coeffs(a_lo, 0.3);
        let (_, hi) = zoh_coeffs(a_hi, 0.3);
        let series = |a: f64| {
            let z = a * 0.3;
            0.3 * (1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0)
        };
        assert!((lo - series(a_lo)).abs() < 1e-15);
        assert!((hi - series(a_hi)).abs() < 1e-15);
    }

    #[test]
    fn zoh_rejects_nonpositive_step() {
        assert!(discretize_zoh(&[-1.0], &[1.0], 0.0).is_err());
        assert!(discretize_zoh(&[-1.0], &[1.0], -0.1).is_err());
        assert!(discretize_zoh(&[-1.0], &[1.0], f64::NAN).is_err());
    }

    #[test]
    fn memoryless_and_single_step() {
        let c = [0.5, 2.0, 1.0, -1.0];
        let bb = [1.0, 3.0, 2.0, 0.5];
        let x = [2.0, -1.0];
        let y = recurrent_scan(&[0.0; 4], &bb, &c, &x, 2, None).unwrap();
        assert_eq!(y, vec![(0.5 * 1.0 + 2.0 * 3.0) * 2.0, -(1.0 * 2.0 - 0.5)]);

        let y1 = recurrent_scan(&[0.7, 0.2], &bb[..2], &c[..2], &x[..1], 2, None).unwrap();
        assert_eq!(y1, vec![(0.5 + 6.0) * 2.0]);
    }

    #[test]
    fn scan_length_mismatch() {
        assert!(recurrent_scan(&[0.0; 3], &[0.0; 4], &[0.0; 4], &[0.0; 2], 2, None).is_err());
    }

    #[test]
    fn geometric_kernel() {
        let k = ssm_conv_kernel(&[0.5], &[1.0], &[1.0], 4).unwrap();
        assert_eq!(k, vec![1.0, 0.5, 0.25, 0.125]);
        let k = ssm_conv_kernel(&[0.0, 0.0], &[1.0, 2.0], &[3.0, 4.0], 3).unwrap();
        assert_eq!(k, vec![11.0, 0.0, 0.0]);
        let k = ssm_conv_kernel(&[0.9, 0.3], &[1.0, 2.0], &[0.0, 0.0], 5).unwrap();
        assert!(k.iter().all(|&v| v == 0.0));
        assert!(ssm_conv_kernel(&[0.5], &[1.0], &[1.0], 0).is_err());
    }

    #[test]
    fn conv_is_causal() {
        let y = conv_apply(&[1.0, 0.5], &[1.0, 0.0, 0.0]);
        assert_eq!(y, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn state_decays_without_input() {
        let a_log = [0.0, 1.0_f64.ln(), 2.0_f64.ln()];
        let dims = ScanDims {
            len: 20,
            channels: 1,
            n_state: 3,
        };
        let mut x = vec![0.0; 20];
        x[0] = 1.0;
        let mut states = Vec::new();
        selective_scan_forward(
            dims,
            &x,
            &[0.2; 20],
            &a_log,
            &[1.0; 60],
            &[1.0; 60],
            &[0.0],
            Some(&mut states),
        );
        let norms: Vec<f64> = states
            .chunks(3)
            .map(|h| h.iter().map(|v| v * v).sum::<f64>())
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] < w[0]);
        }
    }
}
