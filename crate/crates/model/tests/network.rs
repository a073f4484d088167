mod common;

use std::cell::RefCell;

use aura_core::RgbImage;
use aura_model::losses::LossWeights;
use aura_model::trainer::conversation_objective;
use aura_model::vocab::{SEG_ID, UNK_ID};
use aura_model::{ModelConfig, ModelError, TrainConfig, Trainer};
use aura_tensor::gradcheck::{numeric_grad, relative_error, STEP};
use aura_tensor::{ParamId, Tensor};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_heads() -> ModelConfig {
    ModelConfig {
        embed_dim: 6,
        ..ModelConfig::default()
    }
}

#[test]
fn image_encoding_shape_determinism_and_flip() {
    let data = synthetic(1);
    let model = model_for(&data, ModelConfig::default());
    let zero = RgbImage::filled(64, 64, [0, 0, 0]);
    let f = model.encode_image(&zero).unwrap();
    assert_eq!(f.features.shape(), [32, 16, 16]);
    assert!(f.features.is_finite());

    let a = model.encode_image(&data[0].image).unwrap();
    let b = model.encode_image(&data[0].image).unwrap();
    assert_eq!(a, b);
    let flipped = model.encode_image(&data[0].image.flip_horizontal()).unwrap();
    assert_ne!(a.features, flipped.features);

    let wrong = RgbImage::filled(32, 32, [0, 0, 0]);
    assert!(matches!(model.encode_image(&wrong), Err(ModelError::Shape(_))));
}

#[test]
fn text_logits_have_one_row_per_target_token() {
    let data = synthetic(1);
    let model = model_for(&data, ModelConfig::default());
    let visual = model.encode_image(&data[0].image).unwrap();
    let (question, target) = model.encode_conversation(&data[0].conversations[0]);
    let out = model.forward_text(&visual, &question, &target).unwrap();
    assert_eq!(out.logits.shape(), [target.len(), model.vocab().len()]);
    assert_eq!(out.hidden.shape(), [target.len(), 128]);

    let bad = vec![model.vocab().len() + 3];
    assert!(matches!(model.forward_text(&visual, &bad, &target), Err(ModelError::Vocab(_))));
}

#[test]
fn seg_embeddings_follow_textual_order() {
    let data = synthetic(1);
    let model = model_for(&data, ModelConfig::default());
    let ids = [UNK_ID, SEG_ID, UNK_ID, UNK_ID, SEG_ID];
    let hidden = Tensor::from_fn([5, 128], |i| (i / 128) as f64 + 0.001 * (i % 128) as f64);
    let e = model.extract_seg_embeddings(&hidden, &ids).unwrap();
    assert_eq!(e.len(), 2);
    let only_first = model.extract_seg_embeddings(&hidden.clone(), &[UNK_ID, SEG_ID, UNK_ID, UNK_ID, UNK_ID]).unwrap();
    let only_last = model.extract_seg_embeddings(&hidden, &[UNK_ID, UNK_ID, UNK_ID, UNK_ID, SEG_ID]).unwrap();
    assert_eq!(e[0], only_first[0]);
    assert_eq!(e[1], only_last[0]);
    assert!(model.extract_seg_embeddings(&hidden, &[UNK_ID; 5]).unwrap().is_empty());
    for k in [1, 3, 5] {
        let ids: Vec<usize> = (0..5).map(|i| if i < k { SEG_ID } else { UNK_ID }).collect();
        assert_eq!(model.extract_seg_embeddings(&hidden, &ids).unwrap().len(), k);
    }
}

#[test]
fn prompt_encoder_basics() {
    let data = synthetic(1);
    let model = model_for(&data, ModelConfig::default());
    let zero = model.prompt_encode(&[0.0; 64]).unwrap();
    assert_eq!(zero.len(), 64);
    assert!(zero.iter().all(|v| v.is_finite()));
    let a = model.prompt_encode(&[0.1; 64]).unwrap();
    let b = model.prompt_encode(&[-0.2; 64]).unwrap();
    assert_ne!(a, b);
    assert!(model.prompt_encode(&[0.0; 10]).is_err());
}

#[test]
fn occlusion_encoder_basics() {
    let data = synthetic(1);
    let mut model = model_for(&data, ModelConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let e: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (e_oa, r) = model.occlusion_condition_encode(&e).unwrap();
        assert_eq!(e_oa.len(), 64);
        assert!(r > 0.0 && r < 1.0);
    }
    for name in ["occlusion.rate.weight", "occlusion.rate.bias"] {
        let id = model.params().id(name).unwrap();
        model.params_mut().get_mut(id).data_mut().fill(0.0);
    }
    let (_, r) = model.occlusion_condition_encode(&[0.7; 64]).unwrap();
    assert_eq!(r, 0.5);

    let off = model_for(&data, ModelConfig { enable_oc: false, ..ModelConfig::default() });
    assert!(matches!(off.occlusion_condition_encode(&[0.0; 64]), Err(ModelError::Config(_))));
}

/// Checks the gradient of `sum(probe * f(x))` with respect to the input and
/// to every parameter whose name starts with `prefix`.
fn check_head(prefix: &str, which_output: usize, seed: u64) {
    let data = synthetic(1);
    let model = RefCell::new(model_for(&data, ModelConfig { init_seed: seed, ..small_heads() }));
    let d = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn([2, d], |_| rng.random_range(-1.5..1.5));
    let out_width = if which_output == 1 { 1 } else { d };
    let probe = Tensor::from_fn([2, out_width], |_| rng.random_range(-1.0..1.0));

    let apply = |m: &aura_model::AuraModel, x: &Tensor, as_input: bool| -> (f64, Option<(Tensor, Vec<(ParamId, Tensor)>)>) {
        let mut t = m.tape();
        let xv = if as_input { t.g.input(x.clone()) } else { t.g.constant(x.clone()) };
        let net = m.network();
        let out = if prefix == "prompt" {
            net.prompt(&mut t, xv).unwrap()
        } else {
            let (e_oa, r) = net.occlusion(&mut t, xv).unwrap();
            if which_output == 1 { r } else { e_oa }
        };
        let p = t.g.constant(probe.clone());
        let prod = t.g.mul(out, p);
        let loss = t.g.sum(prod);
        let value = t.g.value(loss).item();
        if !as_input {
            return (value, None);
        }
        let grads = t.g.backward(loss);
        let dx = grads.wrt(xv).unwrap().clone();
        let pg = grads.param_grads(m.params().len());
        let params = pg.iter().map(|(id, g)| (id, g.clone())).collect();
        (value, Some((dx, params)))
    };

    let (_, analytic) = apply(&model.borrow(), &x, true);
    let (dx, param_grads) = analytic.unwrap();
    let numeric = numeric_grad(|p| apply(&model.borrow(), p, false).0, &x, STEP);
    let err = relative_error(&dx, &numeric);
    assert!(err < 1e-4, "{prefix} input gradient error {err}");

    let ids: Vec<ParamId> = {
        let m = model.borrow();
        m.params().ids().filter(|&id| m.params().name(id).starts_with(prefix)).collect()
    };
    assert!(!ids.is_empty());
    for id in ids {
        let base = model.borrow().params().get(id).clone();
        let analytic = param_grads
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Tensor::zeros(base.shape().to_vec()));
        let numeric = numeric_grad(
            |p| {
                *model.borrow_mut().params_mut().get_mut(id) = p.clone();
                apply(&model.borrow(), &x, false).0
            },
            &base,
            STEP,
        );
        *model.borrow_mut().params_mut().get_mut(id) = base;
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "{} gradient error {err}", model.borrow().params().name(id));
    }
}

#[test]
fn prompt_encoder_gradients_match_finite_differences() {
    for seed in 0..20 {
        check_head("prompt", 0, seed);
    }
}

#[test]
fn occlusion_heads_gradients_match_finite_differences() {
    for seed in 0..20 {
        check_head("occlusion", 0, seed);
        check_head("occlusion", 1, seed);
    }
}

#[test]
fn decoders_condition_on_embedding_and_share_no_parameters() {
    let data = synthetic(1);
    let model = model_for(&data, ModelConfig::default());
    let visual = model.encode_image(&data[0].image).unwrap();
    let a = model.decode_visible(&visual, &[0.3; 64]).unwrap();
    let b = model.decode_visible(&visual, &[-0.3; 64]).unwrap();
    assert_eq!(a.shape(), [64, 64]);
    assert_ne!(a, b);
    let c = model.decode_amodal(&visual, &[0.3; 64]).unwrap();
    assert_eq!(c.shape(), [64, 64]);
    assert_ne!(a, c);
    assert!(matches!(model.decode_visible(&visual, &[0.0; 5]), Err(ModelError::Shape(_))));

    let names = |prefix: &str| -> Vec<String> {
        model
            .params()
            .iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(_, n, _)| n.trim_start_matches(prefix).to_string())
            .collect()
    };
    let vis = names("decoder.visible.");
    let amo = names("decoder.amodal.");
    assert!(!vis.is_empty());
    assert_eq!(vis, amo, "same architecture");
    let vis_ids: Vec<_> = model.params().iter().filter(|(_, n, _)| n.starts_with("decoder.visible.")).map(|(id, _, _)| id).collect();
    assert!(model
        .params()
        .iter()
        .filter(|(_, n, _)| n.starts_with("decoder.amodal."))
        .all(|(id, _, _)| !vis_ids.contains(&id)));
}

#[test]
fn spatial_encoder_distinguishes_its_inputs() {
    let data = synthetic(1);
    let model = model_for(&data, ModelConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = Tensor::from_fn([64, 64], |_| rng.random_range(-4.0..4.0));
    let a = Tensor::from_fn([64, 64], |_| rng.random_range(-4.0..4.0));
    let out = model.spatial_occlusion_encode(&v, &a).unwrap();
    assert_eq!(out.shape(), [3, 64, 64]);
    let swapped = model.spatial_occlusion_encode(&a, &v).unwrap();
    assert_ne!(out, swapped);
    assert!(matches!(
        model.spatial_occlusion_encode(&v, &Tensor::zeros([32, 32])),
        Err(ModelError::Shape(_))
    ));
}

#[test]
fn spatial_loss_reaches_the_visible_decoder() {
    let sample = scene_with_all_conversations();
    let model = model_for(std::slice::from_ref(&sample), ModelConfig::default());
    let only_spatial = LossWeights {
        text: 0.0,
        mask_ce_v: 0.0,
        mask_ce_a: 0.0,
        dice_v: 0.0,
        dice_a: 0.0,
        occ_rate: 0.0,
        occ_spatial: 1.0,
    };
    let mut t = model.tape();
    let (total, _) = conversation_objective(&model, &mut t, &sample, &sample.conversations[2], &only_spatial).unwrap();
    let grads = t.g.backward(total).param_grads(model.params().len());
    let norm: f64 = grads
        .iter()
        .filter(|(id, _)| model.params().name(*id).starts_with("decoder.visible."))
        .map(|(_, g)| g.sq_norm())
        .sum();
    assert!(norm > 0.0);
}

#[test]
fn one_mask_pair_per_seg_token() {
    let sample = scene_with_all_conversations();
    let model = model_for(std::slice::from_ref(&sample), ModelConfig::default());
    for (conv, k) in sample.conversations.iter().zip([0, 1, 2, 3, 5]) {
        let out = model.forward(&sample, conv).unwrap();
        assert_eq!(out.segs.len(), k);
        for seg in &out.segs {
            assert_eq!(seg.visible.shape(), [64, 64]);
            assert_eq!(seg.amodal.shape(), [64, 64]);
            let r = seg.rate.unwrap();
            assert!(r > 0.0 && r < 1.0);
            assert_eq!(seg.spatial.as_ref().unwrap().shape(), [3, 64, 64]);
        }
    }
}

#[test]
fn disabled_encoders_drop_their_outputs() {
    let sample = scene_with_all_conversations();
    let cfg = ModelConfig {
        enable_oc: false,
        enable_so: false,
        ..ModelConfig::default()
    };
    let model = model_for(std::slice::from_ref(&sample), cfg);
    let out = model.forward(&sample, &sample.conversations[3]).unwrap();
    assert_eq!(out.segs.len(), 3);
    for seg in &out.segs {
        assert!(seg.rate.is_none());
        assert!(seg.spatial.is_none());
        assert_eq!(seg.e_oa, seg.e_r);
    }
    assert!(model.params().iter().all(|(_, n, _)| !n.starts_with("occlusion.") && !n.starts_with("spatial.")));
}

#[test]
fn forward_is_bit_identical_across_calls() {
    let sample = scene_with_all_conversations();
    let model = model_for(std::slice::from_ref(&sample), ModelConfig::default());
    let a = model.forward(&sample, &sample.conversations[2]).unwrap();
    let b = model.forward(&sample, &sample.conversations[2]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn adapter_receives_text_gradient() {
    let sample = scene_with_all_conversations();
    let model = model_for(std::slice::from_ref(&sample), ModelConfig::default());
    let text_only = LossWeights {
        mask_ce_v: 0.0,
        mask_ce_a: 0.0,
        dice_v: 0.0,
        dice_a: 0.0,
        occ_rate: 0.0,
        occ_spatial: 0.0,
        ..LossWeights::default()
    };
    let mut t = model.tape();
    let (total, _) = conversation_objective(&model, &mut t, &sample, &sample.conversations[1], &text_only).unwrap();
    let grads = t.g.backward(total).param_grads(model.params().len());
    let id = model.params().id("text.block0.attn.query.adapter_up").unwrap();
    assert!(grads.get(id).unwrap().sq_norm() > 0.0);
}

#[test]
fn frozen_base_without_adapters_gets_no_gradient() {
    let sample = scene_with_all_conversations();
    let mut model = model_for(
        std::slice::from_ref(&sample),
        ModelConfig {
            adapter_rank: 0,
            ..ModelConfig::default()
        },
    );
    model.freeze_base();
    let mut t = model.tape();
    let (total, _) =
        conversation_objective(&model, &mut t, &sample, &sample.conversations[2], &LossWeights::default()).unwrap();
    let grads = t.g.backward(total).param_grads(model.params().len());
    assert!(grads.iter().all(|(_, g)| g.sq_norm() == 0.0));
}

#[test]
fn frozen_base_step_changes_only_adapters() {
    let data = vec![scene_with_all_conversations()];
    let cfg = TrainConfig {
        freeze_base: true,
        total_steps: 10,
        warmup_steps: 2,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, &data).unwrap();
    let before = trainer.model().params().clone();
    trainer.step().unwrap();
    let after = trainer.model().params();
    let mut adapters_changed = 0;
    for (id, name, t) in after.iter() {
        let same = t.data().iter().zip(before.get(id).data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if name.contains(".adapter_") {
            adapters_changed += usize::from(!same);
        } else {
            assert!(same, "{name} changed");
        }
    }
    assert!(adapters_changed >= 1);
}

#[test]
fn cached_generation_matches_teacher_forced_logits() {
    let data = synthetic(1);
    let model = model_for(&data, ModelConfig::default());
    let visual = model.encode_image(&data[0].image).unwrap();
    let question = model.vocab().encode(&data[0].conversations[0].question);
    let gen = model.generate_answer(&visual, &question, 6).unwrap();
    assert_eq!(gen.tokens.len(), gen.step_logits.len() - usize::from(!gen.truncated));
    let mut target = gen.tokens.clone();
    if !gen.truncated {
        target.push(aura_model::vocab::EOS_ID);
    } else {
        target.push(0);
    }
    let out = model.forward_text(&visual, &question, &target).unwrap();
    for (i, row) in gen.step_logits.iter().enumerate() {
        for (a, b) in row.iter().zip(out.logits.row(i)) {
            assert!((a - b).abs() < 1e-9, "step {i}: {a} vs {b}");
        }
    }

    let again = model.generate_answer(&visual, &question, 6).unwrap();
    assert_eq!(gen, again);
    assert!(model.generate_answer(&visual, &question, 1).unwrap().tokens.len() <= 1);
}
