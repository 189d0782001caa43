//! Wall-clock scaling of the forward scan against a naive attention kernel.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ssm::recurrent_scan;

pub const DEFAULT_LENGTHS: [usize; 5] = [256, 512, 1024, 2048, 4096];

#[derive(Clone, Copy, Debug)]
pub struct BenchSettings {
    pub channels: usize,
    pub n_state: usize,
    /// Head width of the reference attention.
    pub attn_dim: usize,
    /// Each measurement repeats the kernel until at least this much time has
    /// passed and keeps the fastest call.
    pub min_time: Duration,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            channels: 64,
            n_state: 16,
            attn_dim: 16,
            min_time: Duration::from_millis(30),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    pub scan_secs: f64,
    pub attn_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub scan_exponent: f64,
    pub attn_exponent: f64,
}

impl BenchReport {
    /// Largest time ratio between consecutive lengths, for the scan.
    pub fn max_scan_step_ratio(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| w[1].scan_secs / w[0].scan_secs)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("len,scan_secs,attention_secs\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.9},{:.9}\n",
                r.len, r.scan_secs, r.attn_secs
            ));
        }
        out.push_str(&format!(
            "# fitted exponent: scan {:.3}, attention {:.3}\n",
            self.scan_exponent, self.attn_exponent
        ));
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn fastest(min_time: Duration, mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    let mut best = f64::INFINITY;
    let mut calls = 0;
    while calls < 3 || start.elapsed() < min_time {
        let t = Instant::now();
        f();
        best = best.min(t.elapsed().as_secs_f64());
        calls += 1;
    }
    best
}

/// Softmax(Q·Kᵀ/√d)·V with every score materialized, `L × d` inputs.
pub fn naive_attention(q: &[f64], k: &[f64], v: &[f64], len: usize, d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; len * d];
    let mut scores = vec![0.0; len];
    for i in 0..len {
        let qi = &q[i * d..(i + 1) * d];
        let mut m = f64::NEG_INFINITY;
        for j in 0..len {
            let s = qi
                .iter()
                .zip(&k[j * d..(j + 1) * d])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * scale;
            scores[j] = s;
            m = m.max(s);
        }
        let mut z = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - m).exp();
            z += *s;
        }
        let oi = &mut out[i * d..(i + 1) * d];
        for j in 0..len {
            let w = scores[j] / z;
            for (o, vv) in oi.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *o += w * vv;
            }
        }
    }
    out
}

pub fn bench_scan(lengths: &[usize], settings: &BenchSettings) -> BenchReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (c, n, d) = (settings.channels, settings.n_state, settings.attn_dim);
    let mut rows = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let a_bar: Vec<f64> = (0..len * n).map(|_| rng.random_range(0.5..0.99)).collect();
        let b_bar: Vec<f64> = (0..len * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cc: Vec<f64> = (0..len * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let scan_secs = fastest(settings.min_time, || {
            for x in &xs {
                black_box(recurrent_scan(&a_bar, &b_bar, &cc, black_box(x), n, Some(1.0)).unwrap());
            }
        });
        let qkv: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..len * d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let attn_secs = fastest(settings.min_time, || {
            black_box(naive_attention(
                black_box(&qkv[0]),
                &qkv[1],
                &qkv[2],
                len,
                d,
            ));
        });
        rows.push(BenchRow {
            len,
            scan_secs,
            attn_secs,
        });
    }
    let ls: Vec<f64> = rows.iter().map(|r| r.len as f64).collect();
    let scan_exponent = loglog_slope(&ls, &rows.iter().map(|r| r.scan_secs).collect::<Vec<_>>());
    let attn_exponent = loglog_slope(&ls, &rows.iter().map(|r| r.attn_secs).collect::<Vec<_>>());
    BenchReport {
        rows,
        scan_exponent,
        attn_exponent,
    }
}
