mod common;

use common::{matmul_oracle, rows_of, sdoi_oracle};
use hydra::autodiff::Tape;
use hydra::ingest::{align_sdoi_to_tokens, build_sdoi, parse_conllu, write_minimal_conllu, ParsedSentence, Vocabulary};
use hydra::model::{Checkpoint, CheckpointKind, ModelConfig};
use hydra::optim::{AdamConfig, AdamState};
use hydra::{ParamSet, Parameter, Tensor};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Tensor::new(vec![r, c], d).unwrap())
    })
}

/// Head vectors of a valid tree: a random parent order guarantees acyclicity.
fn parse(max_n: usize) -> impl Strategy<Value = ParsedSentence> {
    (1..=max_n)
        .prop_flat_map(|n| {
            (
                Just(n),
                Just(n).prop_shuffle_order(),
                prop::collection::vec(any::<prop::sample::Index>(), n),
            )
        })
        .prop_map(|(n, order, picks)| {
            let mut heads = vec![0; n];
            for (pos, &word) in order.iter().enumerate().skip(1) {
                heads[word] = order[picks[pos].index(pos)] + 1;
            }
            let tokens = (0..n).map(|i| format!("t{i}")).collect();
            ParsedSentence::new(tokens, heads).unwrap()
        })
}

trait ShuffleOrder {
    fn prop_shuffle_order(self) -> BoxedStrategy<Vec<usize>>;
}

impl ShuffleOrder for Just<usize> {
    fn prop_shuffle_order(self) -> BoxedStrategy<Vec<usize>> {
        let n = self.0;
        Just((0..n).collect::<Vec<_>>()).prop_shuffle().boxed()
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(m in matrix(5, 6), shift in -50.0f64..50.0) {
        let s = m.softmax_rows();
        for row in rows_of(&s) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let shifted = Tensor::new(m.shape().to_vec(), m.data().iter().map(|x| x + shift).collect()).unwrap();
        prop_assert!(shifted.softmax_rows().max_abs_diff(&s) <= 1e-9);
    }

    #[test]
    fn matmul_agrees_with_loops(a in matrix(8, 8), cols in 1usize..=8, seed in any::<u64>()) {
        let k = a.shape()[1];
        let b = common::uniform(&mut common::rng(seed), &[k, cols]);
        let got = a.matmul(&b).unwrap();
        let want = matmul_oracle(&rows_of(&a), &rows_of(&b));
        for (g, w) in got.data().iter().zip(want.iter().flatten()) {
            prop_assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn ops_keep_finite_values(m in matrix(4, 6)) {
        prop_assert!(m.softmax_rows().is_finite());
        prop_assert!(m.gelu().is_finite());
        let d = m.shape()[1];
        let normed = m.layer_norm(&vec![1.0; d], &vec![0.0; d]);
        if d >= 2 {
            prop_assert!(normed.unwrap().is_finite());
        } else {
            prop_assert!(normed.is_err());
        }
        prop_assert!(m.transpose().unwrap().matmul(&m).unwrap().is_finite());
    }

    #[test]
    fn sdoi_is_symmetric_with_unit_diagonal(s in parse(12)) {
        let m = build_sdoi(&s);
        let n = s.len();
        for i in 0..n {
            prop_assert_eq!(m.get(i, i), 1);
            for j in 0..n {
                prop_assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        let non_root = s.heads.iter().filter(|&&h| h != 0).count();
        prop_assert_eq!(m.ones(), n + 2 * non_root);
        prop_assert_eq!(m.rows(), sdoi_oracle(&s.heads));
    }

    #[test]
    fn conllu_round_trip_keeps_heads(sentences in prop::collection::vec(parse(9), 0..5)) {
        let text = write_minimal_conllu(&sentences);
        let back = parse_conllu(text.as_bytes()).unwrap();
        prop_assert_eq!(back, sentences);
    }

    #[test]
    fn alignment_mask_avoids_cls_and_padding(s in parse(8), extra in 0usize..4) {
        let n = s.len();
        let seq = n + 1 + extra;
        let (target, mask) = align_sdoi_to_tokens(&build_sdoi(&s), seq).unwrap();
        prop_assert_eq!(mask.data().iter().sum::<f64>(), (n * n) as f64);
        for i in 0..seq {
            for j in 0..seq {
                let inside = (1..=n).contains(&i) && (1..=n).contains(&j);
                prop_assert_eq!(mask.at2(i, j), if inside { 1.0 } else { 0.0 });
                if !inside {
                    prop_assert_eq!(target.at2(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn loss_ignores_target_outside_mask(s in parse(6), noise in prop::collection::vec(-5.0f64..5.0, 64)) {
        let n = s.len();
        let seq = n + 2;
        let (target, mask) = align_sdoi_to_tokens(&build_sdoi(&s), seq).unwrap();
        let mut perturbed = target.clone();
        for (idx, v) in perturbed.data_mut().iter_mut().enumerate() {
            if mask.data()[idx] == 0.0 {
                *v = noise[idx % noise.len()];
            }
        }
        let pred = common::uniform(&mut common::rng(n as u64), &[seq, seq]);
        let loss = |t: &Tensor| {
            let mut tape = Tape::inference();
            let p = tape.constant(pred.clone());
            let l = tape.masked_mse(p, t, &mask).unwrap();
            tape.value(l).item()
        };
        prop_assert_eq!(loss(&target).to_bits(), loss(&perturbed).to_bits());
    }

    #[test]
    fn adam_never_touches_frozen_parameters(
        grads in prop::collection::vec(-100.0f64..100.0, 6),
        steps in 1usize..5,
    ) {
        let mut params = ParamSet::new();
        let mut frozen = Parameter::new("frozen", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap());
        frozen.trainable = false;
        params.insert(frozen).unwrap();
        params.insert(Parameter::new("live", Tensor::zeros(&[3]))).unwrap();
        let before = params.by_name("frozen").unwrap().value.clone();
        let mut adam = AdamState::new(AdamConfig::default());
        for k in 0..steps {
            params.by_name_mut("frozen").unwrap().grad = Tensor::new(vec![3], grads[..3].to_vec()).unwrap();
            params.by_name_mut("live").unwrap().grad = Tensor::new(vec![3], grads[3..].to_vec()).unwrap();
            adam.step(&mut params);
            prop_assert_eq!(adam.step_count(), k as u64 + 1);
        }
        prop_assert!(hydra::param::bitwise_eq(&params.by_name("frozen").unwrap().value, &before));
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical(
        shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..=3), 1..6),
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let mut params = ParamSet::new();
        for (i, shape) in shapes.iter().enumerate() {
            params.insert(Parameter::new(format!("p{i}.w"), common::uniform(&mut r, shape))).unwrap();
        }
        let ckpt = Checkpoint::from_params(CheckpointKind::Body, ModelConfig::default(), &params);
        let bytes = ckpt.to_bytes();
        let loaded = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&loaded, &ckpt);
        let again = Checkpoint::from_params(CheckpointKind::Body, ModelConfig::default(), &loaded.to_param_set().unwrap());
        prop_assert_eq!(again.to_bytes(), bytes);
    }

    #[test]
    fn vocabulary_ids_are_dense(words in prop::collection::vec("[a-e]{1,3}", 0..40)) {
        let v = Vocabulary::build(&words, 2);
        for id in 0..v.len() {
            let w = v.word(id).unwrap();
            prop_assert_eq!(v.id(w), id);
        }
        prop_assert_eq!(v.word(0), Some("[PAD]"));
        let back = Vocabulary::read(v.to_file_string().as_bytes()).unwrap();
        prop_assert_eq!(back.len(), v.len());
    }
}
