use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ss_mamba::model::{
    center_token_index, BranchMode, Enhancement, ForwardOptions, ForwardTrace, Model, ModelConfig,
};
use ss_mamba::selfcheck::{model_grad_check, tiny_model_config};
use ss_mamba::tensor::{Graph, Tensor};
use ss_mamba::tokens::{
    add_positional, sinusoidal_1d, sinusoidal_2d, TokenKind, TokenSeq, TokenizerConfig,
};

fn trace(model: &Model, sample: &Tensor) -> (ForwardTrace, Vec<usize>) {
    let mut g = Graph::new();
    let vars = model.params().bind(&mut g);
    let out = model
        .forward(
            &mut g,
            &vars,
            sample,
            ForwardOptions {
                trace: true,
                unit_gate: false,
            },
        )
        .unwrap();
    (out.trace.unwrap(), g.value(out.logits).shape().to_vec())
}

fn config(tokenizer: TokenizerConfig, classes: usize) -> ModelConfig {
    ModelConfig {
        tokenizer,
        l_blocks: 1,
        classes,
        branch_mode: BranchMode::SpectralSpatial,
        enhancement: Enhancement::On,
        expand: 2,
        n_state: 4,
        k_conv: 3,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn token_counts_follow_geometry(
        side in (0usize..3).prop_map(|s| 2 * s + 1),
        p_spa in 1usize..=3,
        m in 1usize..=6,
        p_spe in 1usize..=3,
        half_d in 1usize..=4,
        s_pick in 0usize..3,
        classes in 2usize..=4,
        seed in any::<u64>(),
    ) {
        let window = side * p_spa;
        let s_center = [1, 3, 5].into_iter().filter(|&s| s <= window).nth(s_pick).unwrap_or(1);
        let tc = TokenizerConfig { window, bands: m * p_spe, p_spa, p_spe, d: 2 * half_d, d_prime: 3, s_center };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(config(tc, classes), &mut rng).unwrap();
        let sample = Tensor::from_fn(&[window, window, tc.bands], |_| rng.random_range(0.0..1.0));
        let (t, logits) = trace(&model, &sample);
        prop_assert_eq!(t.input.spatial.as_ref().unwrap().shape(), &[side * side, tc.d]);
        prop_assert_eq!(t.input.spectral.as_ref().unwrap().shape(), &[m, tc.d]);
        prop_assert_eq!(t.blocks[0].gate.as_ref().unwrap().numel(), tc.d);
        prop_assert_eq!(logits.iter().product::<usize>(), classes);
    }
}

#[test]
fn centre_index_of_odd_grids() {
    assert_eq!(center_token_index(9, 9).unwrap(), 40);
    assert_eq!(center_token_index(1, 1).unwrap(), 0);
    assert_eq!(center_token_index(3, 5).unwrap(), 7);
    assert!(center_token_index(2, 2).is_err());
}

#[test]
fn two_dimensional_table_splits_row_and_column() {
    let (rows, cols, dim) = (3, 4, 8);
    let t2 = sinusoidal_2d(rows, cols, dim).unwrap();
    let r1 = sinusoidal_1d(rows, dim / 2);
    let c1 = sinusoidal_1d(cols, dim / 2);
    for r in 0..rows {
        for c in 0..cols {
            let tok = r * cols + c;
            for j in 0..dim / 2 {
                assert_eq!(t2.at2(tok, j), r1.at2(r, j));
                assert_eq!(t2.at2(tok, dim / 2 + j), c1.at2(c, j));
            }
        }
    }
    // distinct positions get distinct rows
    for a in 0..rows * cols {
        for b in 0..a {
            assert!((0..dim).any(|j| t2.at2(a, j) != t2.at2(b, j)));
        }
    }
}

#[test]
fn positional_embedding_applies_once() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4, 6]));
    let seq = add_positional(&mut g, TokenSeq::new(x, TokenKind::Spectral, 4)).unwrap();
    assert!(seq.positional_applied());
    assert!(add_positional(&mut g, seq).is_err());
}

#[test]
fn spatial_tokens_are_patch_local() {
    let cfg = tiny_model_config();
    let tc = cfg.tokenizer;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::init(cfg, &mut rng).unwrap();
    let base = Tensor::from_fn(&[tc.window, tc.window, tc.bands], |_| {
        rng.random_range(0.0..1.0)
    });
    let (t0, _) = trace(&model, &base);
    // pixel (0, 5) lies in patch (0, 2) of the 3×3 grid, outside the centre crop
    let mut moved = base.clone();
    moved.data_mut()[5 * tc.bands] += 1.0;
    let (t1, _) = trace(&model, &moved);
    let (a, b) = (t0.input.spatial.unwrap(), t1.input.spatial.unwrap());
    for tok in 0..9 {
        let changed = (0..tc.d).any(|j| a.at2(tok, j) != b.at2(tok, j));
        assert_eq!(changed, tok == 2, "token {tok}");
    }
    assert_eq!(t0.input.spectral, t1.input.spectral);

    // a centre pixel moves the spectral tokens
    let mut centre = base.clone();
    centre.data_mut()[(3 * tc.window + 3) * tc.bands] += 1.0;
    let (t2, _) = trace(&model, &centre);
    assert_ne!(t0.input.spectral, t2.input.spectral);
}

#[test]
fn gradients_for_every_variant() {
    for mode in BranchMode::ALL {
        for enhancement in [Enhancement::On, Enhancement::Off] {
            let cfg = ModelConfig {
                branch_mode: mode,
                enhancement,
                ..tiny_model_config()
            };
            let tc = cfg.tokenizer;
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let model = Model::init(cfg, &mut rng).unwrap();
            let sample = Tensor::from_fn(&[tc.window, tc.window, tc.bands], |_| {
                rng.random_range(0.0..1.0)
            });
            for (name, rep) in model_grad_check(&model, &sample, 0, 1e-5, 1e-4).unwrap() {
                assert!(
                    rep.max_rel_err < 1e-4,
                    "{} {}: {} {:?}",
                    mode.name(),
                    enhancement.name(),
                    name,
                    rep
                );
            }
        }
    }
}

#[test]
fn branch_modes_own_only_their_parameters() {
    let names = |mode, enhancement| {
        let cfg = ModelConfig {
            branch_mode: mode,
            enhancement,
            ..tiny_model_config()
        };
        let m = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.params().names().map(String::from).collect::<Vec<_>>()
    };
    let spa = names(BranchMode::SpatialOnly, Enhancement::On);
    assert!(spa.iter().all(|n| !n.contains("spe")));
    let spe = names(BranchMode::SpectralOnly, Enhancement::Off);
    assert!(spe
        .iter()
        .all(|n| !n.contains("spa") && !n.contains("enhance")));
    let both = names(BranchMode::SpectralSpatial, Enhancement::On);
    assert!(both.iter().any(|n| n.starts_with("blocks.0.enhance.")));
}

#[test]
fn logits_do_not_depend_on_graph_reuse() {
    let cfg = tiny_model_config();
    let tc = cfg.tokenizer;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::init(cfg, &mut rng).unwrap();
    let a = Tensor::from_fn(&[tc.window, tc.window, tc.bands], |_| {
        rng.random_range(0.0..1.0)
    });
    let b = Tensor::from_fn(&[tc.window, tc.window, tc.bands], |_| {
        rng.random_range(0.0..1.0)
    });
    let mut g = Graph::new();
    let vars = model.params().bind(&mut g);
    let _ = model
        .forward(&mut g, &vars, &a, ForwardOptions::default())
        .unwrap();
    let out = model
        .forward(&mut g, &vars, &b, ForwardOptions::default())
        .unwrap();
    assert_eq!(g.value(out.logits).data(), &model.logits(&b).unwrap()[..]);
}
