mod support;

use mtfh::codes::CodeMatrix;
use mtfh::dataset::{split_indices, synth_multimodal, unpaired_rows, LabelMatrix};
use mtfh::encoder::{encode, translate_with};
use mtfh::eval::{mean_ap, ApNorm, RelevanceJudge};
use mtfh::hashfn::{kernel_features, train_klr, AnchorScheme, sample_anchors};
use mtfh::optimizer::{objective, OptimizerConfig};
use mtfh::pipeline::{train_model, RunConfig};
use mtfh::retrieval::{cross_modal_query, rank_all, CodeIndex, Direction};
use mtfh::{Error, Modality};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_matches_reference(seed in any::<u64>(), n1 in 1usize..12, n2 in 1usize..12, q1 in 1usize..8, q2 in 1usize..8,
                                   alpha in 0.01f64..0.99, beta in 0.01f64..3.0, lambda in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_affinity(&mut rng, n1, n2);
        let st = random_state(&mut rng, n1, n2, q1, q2);
        let cfg = OptimizerConfig { q1, q2, alpha, beta, lambda, ..Default::default() };
        let got = objective(&s, &st, &cfg).unwrap();
        let want = reference_objective(&s.s, &st, alpha, beta, lambda);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn translation_ignores_positive_scale(seed in any::<u64>(), n in 0usize..10, q1 in 1usize..20, q2 in 1usize..20, c in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = CodeMatrix::new(signs(&mut rng, n, q1)).unwrap();
        let h = gaussian(&mut rng, q1, q2);
        let a = translate_with(&codes, &h).unwrap();
        let b = translate_with(&codes, &(&h * c)).unwrap();
        prop_assert_eq!(a.bits(), q2);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn split_partitions_rows(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
        if let Ok((train, query)) = split_indices(n, frac, seed) {
            prop_assert_eq!(query.len(), (frac * n as f64).round() as usize);
            let mut all: Vec<usize> = train.iter().chain(&query).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn unpaired_subsets_are_nested(n in 1usize..200, a in 0.05f64..1.0, b in 0.05f64..1.0, seed in any::<u64>()) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let small = unpaired_rows(n, lo, seed).unwrap();
        let large = unpaired_rows(n, hi, seed).unwrap();
        prop_assert!(small.iter().all(|r| large.binary_search(r).is_ok()));
    }

    #[test]
    fn all_relevant_database_scores_one(n in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let db = CodeMatrix::new(signs(&mut rng, n, 16)).unwrap();
        let q = CodeMatrix::new(signs(&mut rng, 3, 16)).unwrap();
        let rankings = rank_all(&q, &CodeIndex::new(&db), None).unwrap();
        let judge = RelevanceJudge::new(
            LabelMatrix::one_hot(&[1, 1, 1], 2).unwrap(),
            LabelMatrix::one_hot(&vec![1; n], 2).unwrap(),
        ).unwrap();
        prop_assert_eq!(mean_ap(&rankings, &judge, None, ApNorm::Window).unwrap(), 1.0);
    }
}

#[test]
fn no_relevant_items_anywhere_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let db = CodeMatrix::new(signs(&mut rng, 5, 8)).unwrap();
    let q = CodeMatrix::new(signs(&mut rng, 2, 8)).unwrap();
    let rankings = rank_all(&q, &CodeIndex::new(&db), None).unwrap();
    let judge = RelevanceJudge::new(
        LabelMatrix::one_hot(&[0, 0], 2).unwrap(),
        LabelMatrix::one_hot(&[1; 5], 2).unwrap(),
    )
    .unwrap();
    assert!(matches!(mean_ap(&rankings, &judge, None, ApNorm::Window), Err(Error::NoEvaluableQueries)));
}

#[test]
fn separable_toy_fits_without_error() {
    let x = DMatrix::from_fn(60, 2, |i, j| if i < 30 { -4.0 } else { 4.0 } + 0.1 * ((i * 7 + j * 3) % 11) as f64);
    let bits = DMatrix::from_fn(60, 3, |i, j| if (i < 30) ^ (j == 1) { 1.0 } else { -1.0 });
    let codes = CodeMatrix::new(bits).unwrap();
    let anchors = sample_anchors(&x, 20, AnchorScheme::Km, 1).unwrap();
    let k = kernel_features(&x, &anchors).unwrap();
    let w = train_klr(&k, &codes, 0.01).unwrap();
    assert_eq!(CodeMatrix::from_signs(&(k * w)), codes);
}

#[test]
fn queries_against_mismatched_or_empty_indexes() {
    let (x, y) = synth_multimodal(10, 2, 4, 6, 3.0, 1).unwrap();
    let cfg = RunConfig {
        optimizer: OptimizerConfig { q1: 8, q2: 24, max_iter: 3, ..Default::default() },
        anchors: 10,
        ..Default::default()
    };
    let model = train_model(&x, &y, &cfg).unwrap().model;

    let y_codes = encode(&y.features, &model, Modality::Y).unwrap();
    let x_codes = encode(&x.features, &model, Modality::X).unwrap();
    assert_eq!((x_codes.bits(), y_codes.bits()), (8, 24));

    let wrong = CodeIndex::new(&x_codes);
    assert!(matches!(
        cross_modal_query(&x.features, &model, Direction::I2T, &wrong, None),
        Err(Error::Dimension(_))
    ));

    let empty = CodeIndex::new(&CodeMatrix::empty(24));
    let hits = cross_modal_query(&x.features, &model, Direction::I2T, &empty, Some(5)).unwrap();
    assert_eq!(hits.len(), x.n());
    assert!(hits.iter().all(|r| r.is_empty()));

    let full = cross_modal_query(&x.features, &model, Direction::I2T, &CodeIndex::new(&y_codes), Some(7)).unwrap();
    assert!(full.iter().all(|r| r.len() == 7 && r.hits.windows(2).all(|w| (w[0].distance, w[0].id) < (w[1].distance, w[1].id))));
}
