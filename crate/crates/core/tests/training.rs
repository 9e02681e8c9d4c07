use otesgn::ot::OtMode;
use otesgn::synthetic::{generate, toy_config, ToySpec};
use otesgn::tensor::{grad_check, Tape};
use otesgn::training::{
    evaluate, prepare, train, Checkpoint, Model, ModelConfig, ModelParams, ParamVars, TrainState,
};
use otesgn::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod common;

fn small_toy(seed: u64, sentences: usize) -> otesgn::ingest::Dataset {
    generate(
        &ToySpec {
            sentences,
            ..ToySpec::default()
        },
        seed,
    )
    .unwrap()
}

fn quick_config(seed: u64, epochs: usize) -> ModelConfig {
    ModelConfig {
        epochs,
        ..toy_config(seed)
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = small_toy(5, 40);
    let cfg = quick_config(11, 3);
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.log[0].loss.to_bits(), b.log[0].loss.to_bits());
    assert_eq!(a.log, b.log);
    assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
    assert_eq!(
        evaluate(&a.config, &a.params, &data).unwrap(),
        evaluate(&b.config, &b.params, &data).unwrap()
    );
    let c = train(&data, &quick_config(12, 3)).unwrap();
    assert_ne!(a.checkpoint().to_bytes(), c.checkpoint().to_bytes());
}

#[test]
fn no_cl_logs_zero_lambda_and_pure_cross_entropy() {
    let data = small_toy(6, 40);
    let mut cfg = quick_config(1, 3);
    cfg.ablations.no_cl = true;
    let state = train(&data, &cfg).unwrap();
    for e in &state.log {
        assert_eq!(e.lambda, 0.0);
        assert_eq!(e.loss, e.ce);
    }
}

#[test]
fn loss_is_non_increasing_for_small_learning_rate() {
    // Full-batch steps without dropout, so the logged loss is the objective itself.
    let mut monotone = 0;
    for seed in 0..10 {
        let data = small_toy(100 + seed, 100);
        let cfg = ModelConfig {
            lr: 1e-3,
            batch_size: 100,
            dropout: 0.0,
            epochs: 20,
            ..toy_config(seed)
        };
        let state = train(&data, &cfg).unwrap();
        if state.log.windows(2).all(|w| w[1].loss <= w[0].loss) {
            monotone += 1;
        }
    }
    assert!(monotone >= 9, "{monotone} of 10 seeds");
}

fn fused(cfg: &ModelConfig, params: &ModelParams, ex: &otesgn::ingest::Example) -> Vec<f64> {
    let model = Model::new(cfg).unwrap();
    let tape = Tape::new();
    let pv = params.on_tape(&tape, false);
    let prep = prepare(ex, cfg).unwrap();
    model
        .forward(&pv, ex, &prep, None)
        .unwrap()
        .fused
        .value()
        .into_data()
}

#[test]
fn ablations_match_beta_endpoints_exactly() {
    let data = small_toy(7, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let full = ModelConfig::default();
    let mut params = ModelParams::init(data.dim, &full, &mut rng);
    let mut no_ot = full.clone();
    no_ot.ablations.no_ot = true;
    let mut no_ga = full.clone();
    no_ga.ablations.no_ga = true;
    for ex in &data.examples {
        params.fusion.beta.data_mut()[0] = 1.0;
        assert_eq!(fused(&full, &params, ex), fused(&no_ot, &params, ex));
        params.fusion.beta.data_mut()[0] = 0.0;
        assert_eq!(fused(&full, &params, ex), fused(&no_ga, &params, ex));
    }
}

#[test]
fn both_channels_removed_gives_uniform_attention() {
    let data = small_toy(8, 3);
    let mut cfg = ModelConfig::default();
    cfg.ablations.no_ga = true;
    cfg.ablations.no_ot = true;
    let params = ModelParams::init(data.dim, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
    for ex in &data.examples {
        let n = ex.sentence.len() as f64;
        assert!(fused(&cfg, &params, ex).iter().all(|&v| v == 1.0 / n));
    }
}

#[test]
fn no_sm_unmasks_every_head() {
    let data = small_toy(9, 3);
    let mut cfg = ModelConfig::default();
    cfg.ablations.no_sm = true;
    for ex in &data.examples {
        let prep = prepare(ex, &cfg).unwrap();
        assert_eq!(prep.masks.heads(), cfg.heads);
        assert!(prep
            .masks
            .masks
            .iter()
            .all(|m| m.data().iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn beta_stays_clamped_under_aggressive_steps() {
    let data = small_toy(10, 40);
    let cfg = ModelConfig {
        lr: 0.2,
        ..quick_config(2, 4)
    };
    let state = train(&data, &cfg).unwrap();
    assert_eq!(state.log.len(), 4);
    assert!(state.log.iter().all(|e| (0.0..=1.0).contains(&e.beta)));
    assert!((0.0..=1.0).contains(&state.params.beta()));
}

#[test]
fn checkpoint_reload_reproduces_metrics() {
    let data = small_toy(11, 30);
    let state = train(&data, &quick_config(4, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.otck");
    state.checkpoint().save(&path).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.params, state.params);
    assert_eq!(
        evaluate(&back.config, &back.params, &data).unwrap(),
        evaluate(&state.config, &state.params, &data).unwrap()
    );
}

#[test]
fn config_dim_must_match_embeddings() {
    let cfg = ModelConfig {
        dim: Some(7),
        ..ModelConfig::default()
    };
    assert!(matches!(TrainState::init(&cfg, 8), Err(Error::Config(_))));
}

#[test]
fn full_model_gradients_under_every_ablation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let batch = common::four_token_pair(3, &mut rng);
    let flags = [
        (false, false, false),
        (true, false, false),
        (false, true, false),
        (false, false, true),
        (false, true, true),
    ];
    for (no_sm, no_ga, no_ot) in flags {
        for mode in [OtMode::Strict, OtMode::CostAware] {
            let mut cfg = ModelConfig {
                heads: 2,
                layers: 2,
                dropout: 0.0,
                ot_mode: mode,
                ..ModelConfig::default()
            };
            cfg.ablations.no_sm = no_sm;
            cfg.ablations.no_ga = no_ga;
            cfg.ablations.no_ot = no_ot;
            let params = ModelParams::init(3, &cfg, &mut rng);
            let prepared: Vec<_> = batch.iter().map(|e| prepare(e, &cfg).unwrap()).collect();
            let model = Model::new(&cfg).unwrap();
            let pairs: Vec<_> = batch.iter().zip(&prepared).collect();
            let err = grad_check(
                |_, v| {
                    Ok(model
                        .batch_loss(&ParamVars::from_vars(v), &pairs, None)?
                        .loss)
                },
                &params.tensors(),
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-4, "{cfg:?}: {err}");
        }
    }
}
