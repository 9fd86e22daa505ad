//! End-to-end checks that padded frames never leak into any
//! calculator output: the same clip padded to different lengths must
//! produce the same video representation (or tight score) wherever the
//! module's parameters are independent of the padded length.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use framefuse::data::pad_and_mask;
use framefuse::gates::{self, FrameFeatures, GateHead, GateParadigm, GateParams};
use framefuse::temporal::{
    sequential_aggregate, tight_score, AggregationHead, LstmParams, SequentialEncoder, TightParams,
    TransformerParams,
};
use framefuse::tensor::{Matrix, Vector};

fn random_clip(n: usize, c: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(
        n,
        c,
        (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn mean_pool_ignores_padding() {
    let clip = random_clip(5, 6, 1);
    let tight_fit = pad_and_mask(&clip, 5).unwrap();
    let padded = pad_and_mask(&clip, 9).unwrap();
    let a = gates::mean_pool(&tight_fit).unwrap();
    let b = gates::mean_pool(&padded).unwrap();
    for (x, y) in a.vector.data().iter().zip(b.vector.data()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn lstm_mean_pool_ignores_padding() {
    // LSTM parameters are width-only, so the same clip padded to two
    // lengths must produce identical representations.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lstm = LstmParams::random(6, 1, &mut rng);
    let clip = random_clip(4, 6, 3);
    let short = pad_and_mask(&clip, 4).unwrap();
    let long = pad_and_mask(&clip, 8).unwrap();
    let a = sequential_aggregate(&short, &SequentialEncoder::Lstm(lstm.clone()), &AggregationHead::MeanPool).unwrap();
    let b = sequential_aggregate(&long, &SequentialEncoder::Lstm(lstm), &AggregationHead::MeanPool).unwrap();
    for (x, y) in a.vector.data().iter().zip(b.vector.data()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn transformer_mean_pool_ignores_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut encoder = TransformerParams::random(8, 2, 2, 16, &mut rng).unwrap();
    encoder.residual = true;
    // A non-zero position table makes this a real test: pad rows get
    // position embeddings too, but attention and pooling must ignore them.
    encoder.pos_embedding = random_clip(16, 8, 5);
    let clip = random_clip(5, 8, 6);
    let short = pad_and_mask(&clip, 5).unwrap();
    let long = pad_and_mask(&clip, 9).unwrap();
    let a = sequential_aggregate(&short, &SequentialEncoder::Transformer(encoder.clone()), &AggregationHead::MeanPool).unwrap();
    let b = sequential_aggregate(&long, &SequentialEncoder::Transformer(encoder), &AggregationHead::MeanPool).unwrap();
    for (x, y) in a.vector.data().iter().zip(b.vector.data()) {
        assert!((x - y).abs() <= 1e-12);
    }
}

#[test]
fn tight_score_ignores_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut params = TightParams::random(6, 1, 2, 12, &mut rng).unwrap();
    params.encoder.pos_embedding = random_clip(12, 6, 8);
    let clip = random_clip(4, 6, 9);
    let text = Vector::new((0..6).map(|i| (i as f64 * 0.41).cos()).collect()).unwrap();
    let short = pad_and_mask(&clip, 4).unwrap();
    let long = pad_and_mask(&clip, 7).unwrap();
    let a = tight_score(&text, &short, &params, None).unwrap();
    let b = tight_score(&text, &long, &params, None).unwrap();
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
}

#[test]
fn gate_weights_are_zero_on_padding_and_output_matches_valid_rows_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let clip = random_clip(4, 5, 11);
    let padded = pad_and_mask(&clip, 7).unwrap();

    let softmax_gate = GateParams::random(7, GateParadigm::squeeze(2).unwrap(), GateHead::Softmax, &mut rng);
    let rep = gates::aggregation(&padded, &softmax_gate).unwrap();
    let weights = gates::gate_forward(&gates::frame_stats(&padded), &softmax_gate, padded.mask()).unwrap();
    // Oracle over valid rows only.
    for j in 0..5 {
        let expected: f64 = (0..4)
            .map(|i| weights.weights.get(i) * padded.features().get(i, j))
            .sum();
        assert!((rep.vector.get(j) - expected).abs() <= 1e-12);
    }
    assert_eq!(weights.weights.get(4), 0.0);
    assert_eq!(weights.weights.get(5), 0.0);
    assert_eq!(weights.weights.get(6), 0.0);

    let sigmoid_gate = GateParams::random(7, GateParadigm::expansion(2).unwrap(), GateHead::Sigmoid, &mut rng);
    let excited = gates::excitation(&padded, &sigmoid_gate).unwrap();
    for r in 4..7 {
        assert!(excited.features().row_slice(r).iter().all(|x| *x == 0.0));
    }
    assert_eq!(excited.mask(), padded.mask());
}

#[test]
fn padded_frame_features_reject_dirty_padding() {
    let mut features = Matrix::zeros(3, 2);
    features.set(2, 0, 0.5);
    assert!(FrameFeatures::new(features, vec![true, true, false]).is_err());
}
