mod common;

use common::{rng, tiny_config, uniform};
use hydra::model::{
    body_forward, load_checkpoint, Checkpoint, CheckpointKind, Encoder, HydraHeads, ModelConfig, TaskInfo, TokenBatch,
    TransformerBody,
};
use hydra::param::bitwise_eq;
use hydra::{HydraError, Tensor};

fn body() -> TransformerBody {
    TransformerBody::init(tiny_config(20), 1).unwrap()
}

fn same_params(a: &hydra::ParamSet, b: &hydra::ParamSet) -> bool {
    a.len() == b.len() && a.differing_names(b).is_empty()
}

#[test]
fn init_is_deterministic_in_seed() {
    let a = body();
    assert!(same_params(&a.params, &body().params));
    let c = TransformerBody::init(tiny_config(20), 2).unwrap();
    assert!(!a.params.differing_names(&c.params).is_empty());
}

#[test]
fn forward_shape_contract() {
    let config = ModelConfig {
        vocab_size: 30,
        d_model: 16,
        n_heads: 4,
        n_body_layers: 2,
        d_ff: 32,
        max_len: 8,
    };
    let body = TransformerBody::init(config, 0).unwrap();
    let ids = Tensor::new(vec![2, 8], (0..16).map(|i| (i % 30) as f64).collect()).unwrap();
    let h = body_forward(&body, &ids, &Tensor::full(&[2, 8], 1.0)).unwrap();
    assert_eq!(h.shape(), &[2, 8, 16]);
}

#[test]
fn sequence_longer_than_max_len_is_rejected() {
    let b = body();
    let long = vec![vec![2; 17]];
    assert!(matches!(
        b.forward(&TokenBatch::from_sequences(&long).unwrap()),
        Err(HydraError::Length { len: 17, max: 16 })
    ));
}

#[test]
fn padded_ids_do_not_affect_real_positions() {
    let b = body();
    let mask = Tensor::new(vec![1, 6], vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
    let a = Tensor::new(vec![1, 6], vec![2.0, 5.0, 6.0, 7.0, 0.0, 0.0]).unwrap();
    let c = Tensor::new(vec![1, 6], vec![2.0, 5.0, 6.0, 7.0, 13.0, 19.0]).unwrap();
    let ha = body_forward(&b, &a, &mask).unwrap();
    let hc = body_forward(&b, &c, &mask).unwrap();
    let d = 8;
    let worst = ha.data()[..4 * d]
        .iter()
        .zip(&hc.data()[..4 * d])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst:e}");
}

#[test]
fn batch_rows_are_independent() {
    let b = body();
    let first = vec![2, 4, 9, 11];
    let second = vec![2, 3, 3, 5, 8, 1, 17];
    let alone = b
        .forward(&TokenBatch::from_sequences(std::slice::from_ref(&first)).unwrap())
        .unwrap();
    let both = b
        .forward(&TokenBatch::from_sequences(&[first, second]).unwrap())
        .unwrap();
    let d = 8;
    let worst = alone
        .data()
        .iter()
        .zip(&both.data()[..4 * d])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst:e}");
}

#[test]
fn forward_is_bitwise_deterministic() {
    let b = body();
    let batch = TokenBatch::from_sequences(&[vec![2, 7, 8, 9]]).unwrap();
    assert!(bitwise_eq(&b.forward(&batch).unwrap(), &b.forward(&batch).unwrap()));
}

#[test]
fn attach_appends_one_layer_and_keeps_body() {
    let b = body();
    let before = b.params.clone();
    let heads = HydraHeads::init(b.config.clone(), 3).unwrap();
    let model = Encoder::attach(&b, &heads, TaskInfo::classes(2), 4).unwrap();
    assert_eq!(model.layer_count(), b.layer_count() + 1);
    assert!(model.has_hydra());
    assert!(same_params(&b.params, &before));
    for p in b.params.iter() {
        assert!(
            bitwise_eq(&p.value, &model.params.by_name(&p.name).unwrap().value),
            "{}",
            p.name
        );
    }
    for p in heads.params.iter() {
        assert!(
            bitwise_eq(&p.value, &model.params.by_name(&p.name).unwrap().value),
            "{}",
            p.name
        );
    }
    let batch = TokenBatch::from_sequences(&[vec![2, 5, 6], vec![2, 7]]).unwrap();
    assert_eq!(model.hidden(&batch).unwrap().shape(), &[2, 3, 8]);
    let baseline = Encoder::baseline(&b, TaskInfo::classes(2), 4).unwrap();
    assert_eq!(baseline.layer_count(), b.layer_count());
}

#[test]
fn attach_rejects_mismatched_heads() {
    let b = body();
    let other = ModelConfig {
        d_model: 12,
        n_heads: 3,
        ..tiny_config(20)
    };
    let heads = HydraHeads::init(other, 0).unwrap();
    assert!(matches!(
        Encoder::attach(&b, &heads, TaskInfo::classes(2), 0),
        Err(HydraError::Compatibility(_))
    ));
}

#[test]
fn zeroed_sublayers_pass_the_residual_through_both_norms() {
    let b = body();
    let heads = HydraHeads::init(b.config.clone(), 3).unwrap();
    let mut model = Encoder::attach(&b, &heads, TaskInfo::classes(2), 4).unwrap();
    for name in [
        "hydra.attn.wo.weight",
        "hydra.attn.wo.bias",
        "hydra.ffn.fc2.weight",
        "hydra.ffn.fc2.bias",
    ] {
        let p = model.params.by_name_mut(name).unwrap();
        p.value = Tensor::zeros(p.value.shape());
    }
    let batch = TokenBatch::from_sequences(&[vec![2, 5, 6, 9]]).unwrap();
    let h_l = b.forward(&batch).unwrap();
    let (ones, zeros) = (vec![1.0; 8], vec![0.0; 8]);
    // post-norm: LN2(LN1(x + 0) + 0)
    let once = h_l.layer_norm(&ones, &zeros).unwrap();
    let expected = once.layer_norm(&ones, &zeros).unwrap();
    let got = model.hidden(&batch).unwrap();
    assert!(got.max_abs_diff(&expected) <= 1e-12);
    // a second unit-gain norm of normalized rows barely moves them
    assert!(got.max_abs_diff(&once) <= 1e-4);
}

#[test]
fn task_head_pools_position_zero() {
    let b = body();
    let mut model = Encoder::baseline(&b, TaskInfo::regression(), 0).unwrap();
    let mut r = rng(2);
    let h = uniform(&mut r, &[3, 5, 8]);
    let out = model.pool_and_project(&h).unwrap();
    assert_eq!(out.shape(), &[3, 1]);

    let mut changed = h.clone();
    for bi in 0..3 {
        for t in 1..5 {
            for e in 0..8 {
                changed.data_mut()[(bi * 5 + t) * 8 + e] += 1.0;
            }
        }
    }
    assert!(bitwise_eq(&out, &model.pool_and_project(&changed).unwrap()));

    for name in ["task.weight", "task.bias"] {
        let p = model.params.by_name_mut(name).unwrap();
        p.value = Tensor::zeros(p.value.shape());
    }
    assert!(model.pool_and_project(&h).unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn checkpoints_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let b = body();
    let heads = HydraHeads::init(b.config.clone(), 3).unwrap();
    let model = Encoder::attach(&b, &heads, TaskInfo::classification(vec!["x".into(), "y".into()]), 4).unwrap();
    let items: [(&str, Checkpoint); 3] = [
        ("body", b.to_checkpoint()),
        ("heads", heads.to_checkpoint()),
        ("model", model.to_checkpoint()),
    ];
    for (name, ckpt) in items {
        let first = dir.path().join(format!("{name}.1"));
        let second = dir.path().join(format!("{name}.2"));
        ckpt.save(&first).unwrap();
        let loaded = load_checkpoint(&first).unwrap();
        let rebuilt = match loaded.kind {
            CheckpointKind::Body => TransformerBody::from_checkpoint(&loaded).unwrap().to_checkpoint(),
            CheckpointKind::Heads => HydraHeads::from_checkpoint(&loaded).unwrap().to_checkpoint(),
            CheckpointKind::Model => Encoder::from_checkpoint(&loaded).unwrap().to_checkpoint(),
        };
        rebuilt.save(&second).unwrap();
        assert_eq!(
            std::fs::read(&first).unwrap(),
            std::fs::read(&second).unwrap(),
            "{name}"
        );
    }
    let loaded = Encoder::from_checkpoint(&load_checkpoint(dir.path().join("model.1")).unwrap()).unwrap();
    assert_eq!(loaded.task, model.task);
    assert_eq!(loaded.layer_count(), 3);
}

#[test]
fn heads_checkpoint_holds_only_hydra_projections() {
    let heads = HydraHeads::init(tiny_config(20), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heads.ckpt");
    hydra::pretrain::export_heads(&heads, &path).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();
    let names: Vec<&str> = ckpt.names().collect();
    assert_eq!(
        names,
        [
            "hydra.attn.wq.weight",
            "hydra.attn.wq.bias",
            "hydra.attn.wk.weight",
            "hydra.attn.wk.bias"
        ]
    );
    let back = HydraHeads::from_checkpoint(&ckpt).unwrap();
    for p in heads.params.iter() {
        let q = back.params.by_name(&p.name).unwrap();
        let as_f32: Vec<f64> = p.value.data().iter().map(|&x| x as f32 as f64).collect();
        assert_eq!(q.value.data(), as_f32.as_slice());
    }
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        load_checkpoint("/nonexistent/heads.ckpt"),
        Err(HydraError::Io { .. })
    ));
}
