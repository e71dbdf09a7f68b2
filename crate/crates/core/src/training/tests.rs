use super::*;
use crate::autodiff::Gradients;
use crate::data::{generate_synthetic, SynthSpec};
use crate::model::{forward, ViewState};

fn single_weight_params(value: f64) -> ModelParams {
    let cfg = ModelConfig::new(vec![1], 1, 1);
    let mut p = ModelParams::init(&cfg, 1, &mut SeededRng::new(0)).unwrap();
    *p.get_mut(ParamId::EncoderWeight { view: 0, layer: 0 }) = Matrix::filled(1, 1, value);
    *p.get_mut(ParamId::DecoderWeight { view: 0, layer: 0 }) = Matrix::zeros(1, 1);
    *p.get_mut(ParamId::Attention(0)) = Matrix::filled(1, 1, 5.0);
    p
}

#[test]
fn reconstruction_loss_examples() {
    let zero = single_weight_params(0.0);
    let x = vec![Matrix::from_rows(&[[1.0], [2.0]])];
    let w0 = LossWeights {
        beta2: 0.0,
        ..LossWeights::default()
    };
    assert_eq!(reconstruction_loss(&x, &x, &zero, &LossWeights::default()).unwrap(), 0.0);

    let x_hat = vec![Matrix::from_rows(&[[0.0], [1.0]])];
    assert_eq!(reconstruction_loss(&x, &x_hat, &zero, &w0).unwrap(), 1.0);

    // Only the single encoder weight (value 2) is nonzero among W1/W3;
    // attention weights are excluded from the regularizer.
    let p = single_weight_params(2.0);
    let r = reconstruction_loss(&x, &x, &p, &LossWeights::default()).unwrap();
    assert!((r - 0.4).abs() < 1e-15);
    let l1 = LossWeights {
        omega: OmegaKind::L1,
        ..LossWeights::default()
    };
    assert!((reconstruction_loss(&x, &x, &p, &l1).unwrap() - 0.2).abs() < 1e-15);

    assert!(reconstruction_loss(&x, &[Matrix::zeros(3, 1)], &zero, &w0).is_err());
}

#[test]
fn selfrep_loss_examples() {
    let w = LossWeights::default();
    let z = Matrix::zeros(2, 2);
    let zero = selfrep_loss(&[z.clone(), z.clone()], &[z.clone(), z.clone()], &[z.clone(), z.clone()], &w);
    assert_eq!(zero.unwrap(), 0.0);

    let mut c1 = Matrix::zeros(2, 2);
    c1.set(0, 1, 1.0);
    let (_, align) = selfrep_terms(
        &[z.clone(), z.clone()],
        &[z.clone(), z.clone()],
        &[c1.clone(), z.clone()],
        &w,
    )
    .unwrap();
    assert!((align - 0.05).abs() < 1e-15);

    // Single view: alignment term absent, F-norm of C present.
    let (res, align) = selfrep_terms(std::slice::from_ref(&z), std::slice::from_ref(&z), &[c1.clone()], &w).unwrap();
    assert_eq!(align, 0.0);
    assert_eq!(res, 1.0);

    let mut bad = z.clone();
    bad.set(1, 1, 1.0);
    assert!(matches!(
        selfrep_loss(std::slice::from_ref(&z), std::slice::from_ref(&z), &[bad], &w),
        Err(Error::Invariant(_))
    ));
}

fn toy_config() -> ModelConfig {
    ModelConfig::new(vec![5, 6, 7], 4, 2)
}

#[test]
fn tape_loss_matches_direct_formula() {
    for mode in [crate::model::AttentionMode::Paper, crate::model::AttentionMode::Mixed] {
        let mut cfg = toy_config();
        cfg.attention_mode = mode;
        let (views, params) = toy_problem(&cfg, 8, 3).unwrap();
        for omega in [OmegaKind::L1, OmegaKind::L2] {
            let w = LossWeights {
                omega,
                beta1: 0.3,
                beta2: 0.07,
                c_fro_weight: 0.5,
            };
            let (tape_loss, state) = evaluate(&views, &params, &w).unwrap();
            let direct = total_loss(&state, &views, &params, &w).unwrap();
            let tol = 1e-12 * direct.total.max(1.0);
            assert!((tape_loss.total - direct.total).abs() < tol);
            assert!((tape_loss.recon - direct.recon).abs() < tol);
            assert!((tape_loss.selfrep - direct.selfrep).abs() < tol);
            assert!((tape_loss.align - direct.align).abs() < tol);
            assert!(direct.total >= 0.0);
        }
    }
}

#[test]
fn zero_network_on_zero_data_has_zero_loss() {
    let cfg = toy_config();
    let mut params = ModelParams::init(&cfg, 4, &mut SeededRng::new(0)).unwrap();
    for (_, m) in params.iter_mut() {
        *m = Matrix::zeros(m.rows(), m.cols());
    }
    let views: Vec<Matrix> = cfg.feature_dims.iter().map(|&f| Matrix::zeros(f, 4)).collect();
    let (loss, _) = evaluate(&views, &params, &LossWeights::default()).unwrap();
    assert_eq!(loss.total, 0.0);
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    for mode in [crate::model::AttentionMode::Paper, crate::model::AttentionMode::Mixed] {
        let mut cfg = toy_config();
        cfg.attention_mode = mode;
        let (views, params) = toy_problem(&cfg, 8, 11).unwrap();
        for omega in [OmegaKind::L2, OmegaKind::L1] {
            let w = LossWeights {
                omega,
                ..LossWeights::default()
            };
            let report = grad_check_loss(&views, &params, &w, 1e-6, false).unwrap();
            assert!(report.max_rel_error < 1e-5, "{mode:?} {omega:?}: {report:?}");
        }
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    let (views, params) = toy_problem(&toy_config(), 8, 11).unwrap();
    let report = grad_check_loss(&views, &params, &LossWeights::default(), 1e-6, true).unwrap();
    assert!(report.max_rel_error > 1e-2);
    assert_eq!(report.worst.unwrap().0, ParamId::Attention(0));
}

#[test]
fn self_rep_diagonal_gradient_is_exactly_zero() {
    let (views, params) = toy_problem(&toy_config(), 8, 2).unwrap();
    let (_, grads) = loss_and_gradients(&views, &params, &LossWeights::default()).unwrap();
    for v in 0..3 {
        let g = grads.get(&ParamId::SelfRep { view: v }).unwrap();
        assert!(g.diagonal().iter().all(|&d| d == 0.0));
        assert!(g.max_abs() > 0.0);
    }
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let (_, params) = toy_problem(&toy_config(), 8, 2).unwrap();
    let mut updated = params.clone();
    let mut adam = Adam::new(AdamConfig::default(), &params);
    let zeros: BTreeMap<ParamId, Matrix> = params
        .iter()
        .map(|(id, m)| (*id, Matrix::zeros(m.rows(), m.cols())))
        .collect();
    let grads = zero_gradients(zeros);
    for _ in 0..5 {
        adam.step(&mut updated, &grads, 0.001).unwrap();
    }
    assert_eq!(updated, params);
}

fn zero_gradients(map: BTreeMap<ParamId, Matrix>) -> Gradients<ParamId> {
    // Build through a tape: a constant loss yields all-zero gradients.
    let mut tape = Tape::new();
    for (id, m) in map {
        tape.param(id, m);
    }
    let c = tape.constant(Matrix::zeros(1, 1));
    tape.backward(c).unwrap()
}

#[test]
fn adam_first_step_moves_by_lr() {
    let (views, params) = toy_problem(&toy_config(), 8, 4).unwrap();
    let (_, grads) = loss_and_gradients(&views, &params, &LossWeights::default()).unwrap();
    let mut updated = params.clone();
    let mut adam = Adam::new(AdamConfig::default(), &params);
    adam.step(&mut updated, &grads, 0.01).unwrap();
    // First bias-corrected step is lr * g / (|g| + eps) per entry.
    let id = ParamId::Attention(1);
    let (g, before, after) = (grads.get(&id).unwrap(), params.get(id), updated.get(id));
    for i in 0..g.as_slice().len() {
        let gi = g.as_slice()[i];
        let expected = before.as_slice()[i] - 0.01 * gi / (gi.abs() + 1e-8);
        assert!((after.as_slice()[i] - expected).abs() < 1e-15);
    }
}

#[test]
fn lr_schedule_is_geometric() {
    let c = AdamConfig::default();
    assert_eq!(c.lr_at(0), 0.001);
    let mut expected = 0.001;
    for t in 0..500 {
        let lr = c.lr_at(t);
        assert!((lr - expected).abs() <= 1e-12 * expected, "epoch {t}");
        expected *= 0.99;
    }
}

fn small_synthetic() -> (Vec<Matrix>, ModelConfig) {
    let spec = SynthSpec {
        num_views: 2,
        num_clusters: 3,
        points_per_cluster: 8,
        ambient_dims: vec![10, 8],
        subspace_dim: 2,
        noise_sigma: 0.01,
    };
    let data = generate_synthetic(&spec, 5).unwrap();
    let views = data.views.clone();
    (views, ModelConfig::new(vec![10, 8], 6, 2))
}

#[test]
fn zero_epochs_rejected() {
    let (views, cfg) = small_synthetic();
    let opts = TrainOptions {
        epochs: 0,
        ..TrainOptions::default()
    };
    assert!(matches!(
        train(&views, &cfg, &LossWeights::default(), &opts),
        Err(TrainError::Invalid(Error::InvalidArgument(_)))
    ));
}

#[test]
fn training_reduces_loss_and_keeps_diagonal_zero() {
    let (views, cfg) = small_synthetic();
    let opts = TrainOptions {
        epochs: 150,
        checkpoint_every: 1,
        ..TrainOptions::default()
    };
    let mut checked = 0;
    let (params, report) = train_with(&views, &cfg, &LossWeights::default(), &opts, |cp| {
        assert!(cp.params.self_rep_diagonals_are_zero());
        checked += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(checked, report.epochs_run);
    assert!(params.self_rep_diagonals_are_zero());
    assert!(report.final_loss.total < report.initial_loss().unwrap());
    for r in &report.history {
        assert!(r.loss.total.is_finite() && r.loss.total >= 0.0);
        assert!(r.loss.recon >= 0.0 && r.loss.selfrep >= 0.0 && r.loss.align >= 0.0);
    }
}

#[test]
fn training_is_deterministic() {
    let (views, cfg) = small_synthetic();
    let opts = TrainOptions {
        epochs: 40,
        seed: 9,
        ..TrainOptions::default()
    };
    let (p1, r1) = train(&views, &cfg, &LossWeights::default(), &opts).unwrap();
    let (p2, r2) = train(&views, &cfg, &LossWeights::default(), &opts).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1.history, r2.history);
    assert_eq!(r1.history_csv(), r2.history_csv());
    let (p3, _) = train(
        &views,
        &cfg,
        &LossWeights::default(),
        &TrainOptions {
            seed: 10,
            ..opts.clone()
        },
    )
    .unwrap();
    assert_ne!(p1, p3);
}

#[test]
fn early_stop_triggers_on_flat_loss() {
    let (views, cfg) = small_synthetic();
    // A vanishing learning rate freezes the loss.
    let opts = TrainOptions {
        epochs: 500,
        optimizer: AdamConfig {
            base_lr: 1e-300,
            ..AdamConfig::default()
        },
        early_stop: Some(EarlyStop {
            patience: 5,
            tol: 1e-7,
        }),
        ..TrainOptions::default()
    };
    let (_, report) = train(&views, &cfg, &LossWeights::default(), &opts).unwrap();
    assert!(report.stopped_early);
    assert_eq!(report.epochs_run, 6);
}

#[test]
fn divergence_is_reported_with_last_good_params() {
    let (mut views, cfg) = small_synthetic();
    views[0].set(0, 0, 1e200);
    let opts = TrainOptions {
        epochs: 3,
        ..TrainOptions::default()
    };
    match train(&views, &cfg, &LossWeights::default(), &opts) {
        Err(TrainError::Diverged { epoch, term, last_good, .. }) => {
            assert_eq!(epoch, 0);
            assert_eq!(term, "reconstruction");
            assert!(last_good.is_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn history_csv_layout() {
    let (views, cfg) = small_synthetic();
    let opts = TrainOptions {
        epochs: 2,
        ..TrainOptions::default()
    };
    let (_, report) = train(&views, &cfg, &LossWeights::default(), &opts).unwrap();
    let csv = report.history_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,lr,loss_total,loss_recon,loss_selfrep,loss_align");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,0.001,"));
    assert!(lines[2].starts_with("1,0.00099,"));
}

fn state_with_residuals(residuals: &[f64]) -> ForwardState {
    let views = residuals
        .iter()
        .map(|&r| {
            let h = Matrix::filled(1, 1, 1.0);
            ViewState {
                z: h.clone(),
                q: h.clone(),
                k: h.clone(),
                v: h.clone(),
                weights: h.clone(),
                h: h.clone(),
                h_sr: Matrix::filled(1, 1, 1.0 + r.sqrt()),
                x_hat: h.clone(),
            }
        })
        .collect();
    ForwardState { views }
}

#[test]
fn best_view_selection() {
    assert_eq!(select_best_view(&state_with_residuals(&[0.3])), 0);
    assert_eq!(select_best_view(&state_with_residuals(&[0.2, 0.1])), 1);
    assert_eq!(select_best_view(&state_with_residuals(&[0.1, 0.2])), 0);
    assert_eq!(select_best_view(&state_with_residuals(&[0.5, 0.5, 0.5])), 0);

    let cfg = toy_config();
    let (views, params) = toy_problem(&cfg, 8, 1).unwrap();
    let state = forward(&views, &params).unwrap();
    assert!(select_best_view(&state) < 3);
}
