mod common;

use common::{episode_gradient_error, random_episode, random_model, reference_distances};
use trx::episodes::VideoFeatures;
use trx::model::{attention_scores, ModelConfig, TrxModel};
use trx::tensor::{Tape, Tensor};
use trx::tuples::{build_tuple_representation, enumerate_tuples};

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn batched_pipeline_matches_loop_reference() {
    for seed in 0..12 {
        let omegas = match seed % 4 {
            0 => vec![1],
            1 => vec![2],
            2 => vec![3],
            _ => vec![1, 2, 3],
        };
        let model = random_model(seed, omegas, 4, 6);
        let episode = random_episode(100 + seed, 3, 2, 4, 6, 2);
        let got: Vec<Vec<f64>> = model
            .episode_distances(&episode)
            .unwrap()
            .into_iter()
            .map(|d| d.0)
            .collect();
        let want = reference_distances(&model, &episode);
        assert!(max_abs_diff(&got, &want) < 1e-5, "seed {seed}: {got:?} vs {want:?}");
    }
}

#[test]
fn support_order_and_duplication_do_not_matter() {
    for seed in 0..8 {
        let model = random_model(seed, vec![1, 2], 4, 6);
        let episode = random_episode(200 + seed, 3, 3, 4, 6, 2);
        let base: Vec<Vec<f64>> = model
            .episode_distances(&episode)
            .unwrap()
            .into_iter()
            .map(|d| d.0)
            .collect();

        let mut shuffled = episode.clone();
        for class in &mut shuffled.support {
            class.rotate_left(1);
            class.swap(0, 1);
        }
        let got: Vec<Vec<f64>> = model
            .episode_distances(&shuffled)
            .unwrap()
            .into_iter()
            .map(|d| d.0)
            .collect();
        assert!(max_abs_diff(&base, &got) < 1e-6);

        let mut doubled = episode.clone();
        for class in &mut doubled.support {
            let copy = class.clone();
            class.extend(copy);
        }
        let got: Vec<Vec<f64>> = model
            .episode_distances(&doubled)
            .unwrap()
            .into_iter()
            .map(|d| d.0)
            .collect();
        assert!(max_abs_diff(&base, &got) < 1e-6);
    }
}

#[test]
fn attention_maps_are_distributions() {
    let model = random_model(3, vec![2, 3], 5, 4);
    let episode = random_episode(9, 3, 2, 5, 4, 2);
    let mut tape = Tape::new();
    let queries: Vec<&VideoFeatures> = episode.queries.iter().map(|q| &q.video).collect();
    let pass = model.forward(&mut tape, &episode.support, &queries, false).unwrap();
    for per_query in &pass.attention {
        for (wi, per_omega) in per_query.iter().enumerate() {
            assert_eq!(per_omega.len(), 3);
            for map in per_omega {
                let a = tape.value(*map);
                // one map per query tuple, over all (k, m)
                assert_eq!(a.rows(), model.tuple_sets()[wi].len());
                assert_eq!(a.cols(), 2 * model.tuple_sets()[wi].len());
                for r in 0..a.rows() {
                    assert!(a.row(r).iter().all(|v| *v >= 0.0));
                    assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn shared_query_key_scores_are_symmetric() {
    let config = ModelConfig {
        omegas: vec![2],
        frames: 4,
        input_dim: 4,
        embed_dim: 4,
        d_k: 5,
        d_v: 3,
        ..ModelConfig::default()
    };
    let model = TrxModel::<f64>::new(config, 8).unwrap();
    let episode = random_episode(4, 2, 1, 4, 4, 1);
    let a = model.embed_video(&episode.support[0][0].to_tensor()).unwrap();
    let b = model.embed_video(&episode.support[1][0].to_tensor()).unwrap();
    let enc = model.encoder();
    for p in enumerate_tuples(4, 2).unwrap().tuples() {
        let qa = build_tuple_representation(&a, p, enc).unwrap();
        let qb = build_tuple_representation(&b, &[0, 3], enc).unwrap();
        let params = &model.transformers()[0];
        let ab = attention_scores(params, model.store(), &qa, std::slice::from_ref(&qb)).unwrap()[0];
        let ba = attention_scores(params, model.store(), &qb, std::slice::from_ref(&qa)).unwrap()[0];
        assert!((ab - ba).abs() < 1e-12);
    }
}

#[test]
fn single_frames_without_encoding_use_raw_embeddings() {
    let config = ModelConfig {
        omegas: vec![1],
        frames: 3,
        input_dim: 2,
        embed_dim: 2,
        head: trx::model::HeadKind::Identity,
        pe: false,
        ..ModelConfig::default()
    };
    let model = TrxModel::<f64>::new(config, 1).unwrap();
    let frames = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
    for (i, p) in enumerate_tuples(3, 1).unwrap().tuples().enumerate() {
        let rep = build_tuple_representation(&frames, p, model.encoder()).unwrap();
        assert_eq!(rep.flatten(), frames.row(i));
    }
}

#[test]
fn class_distances_are_nonnegative_and_complete() {
    let model = random_model(5, vec![2], 4, 6);
    let episode = random_episode(1, 4, 2, 4, 6, 3);
    for d in model.episode_distances(&episode).unwrap() {
        assert_eq!(d.0.len(), 4);
        assert!(d.0.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn episode_loss_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut model = random_model(seed, vec![1, 2], 3, 4);
        let episode = random_episode(50 + seed, 2, 2, 3, 4, 2);
        let err = episode_gradient_error(&mut model, &episode, 1e-5);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}
