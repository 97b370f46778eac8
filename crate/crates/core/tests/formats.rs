use pct_core::checkpoint::{
    load_estimator, load_predictor, load_tokenizer, save_bins, save_estimator, save_regression, save_tokenizer,
    sidecar_path, Predictor,
};
use pct_core::estimator::{BinsModel, EstimatorConfig, EstimatorModel, Observation, PosePredictor, RegressionModel};
use pct_core::posedata::{
    denormalize, load_jsonl, load_pose_records, normalize, save_jsonl, save_pose_records, DatasetSplit, Skeleton,
};
use pct_core::rng::rng_from_seed;
use pct_core::tokenizer::{TokenizerConfig, TokenizerModel};
use pct_core::Error;
use std::path::Path;

fn small_tokenizer(seed: u64) -> TokenizerModel {
    let config = TokenizerConfig {
        num_tokens: 4,
        token_dim: 8,
        hidden_dim: 12,
        codebook_size: 16,
        encoder_blocks: 1,
        ..TokenizerConfig::default()
    };
    TokenizerModel::new(config, &mut rng_from_seed(seed)).unwrap()
}

fn small_head() -> EstimatorConfig {
    EstimatorConfig {
        obs_hidden: 6,
        featurizer_blocks: 1,
        ..EstimatorConfig::default()
    }
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for s in [Skeleton::mpii16(), Skeleton::mpii16_3d()] {
        let data = DatasetSplit::generate(&s, 3, 12, 4, 5).unwrap();
        let p = dir.path().join(format!("{}.jsonl", s.name));
        save_jsonl(&data, &p).unwrap();
        let back = load_jsonl(&p).unwrap();
        assert_eq!(back, data);
        let q = dir.path().join("again.jsonl");
        save_jsonl(&back, &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }
}

#[test]
fn pose_records_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = DatasetSplit::generate(&Skeleton::mpii16(), 1, 6, 0, 0).unwrap();
    let p = dir.path().join("poses.jsonl");
    save_pose_records(&data.train, &p).unwrap();
    assert_eq!(load_pose_records(&p, 16, 2).unwrap(), data.train);
    assert!(matches!(load_pose_records(&p, 16, 3), Err(Error::Schema { line: 1, .. })));
}

#[test]
fn malformed_files_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    let data = DatasetSplit::generate(&Skeleton::mpii16(), 1, 2, 0, 0).unwrap();
    save_jsonl(&data, &p).unwrap();
    let good = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = good.lines().collect();

    write(&p, "");
    assert!(matches!(load_jsonl(&p), Err(Error::Parse { line: 1, .. })));

    write(&p, &format!("{}\n{}\n{{not json\n", lines[0], lines[1]));
    assert!(matches!(load_jsonl(&p), Err(Error::Parse { line: 3, .. })));

    let short = lines[2].replacen("[[", "[[0.5],[", 1);
    write(&p, &format!("{}\n{}\n{}\n", lines[0], lines[1], short));
    assert!(matches!(load_jsonl(&p), Err(Error::Schema { line: 3, .. })));

    let extra = lines[1].replacen('{', "{\"score\":1,", 1);
    write(&p, &format!("{}\n{}\n{}\n", lines[0], extra, lines[2]));
    assert!(matches!(load_jsonl(&p), Err(Error::Parse { line: 2, .. })));

    write(&p, &format!("{}\n{}\n", lines[0], lines[1]));
    assert!(matches!(load_jsonl(&p), Err(Error::Schema { line: 1, .. })));

    let header = lines[0].replace("mpii16", "coco17");
    write(&p, &format!("{header}\n{}\n{}\n", lines[1], lines[2]));
    assert!(matches!(load_jsonl(&p), Err(Error::Schema { line: 1, .. })));

    let header = lines[0].replace("\"k\":16", "\"k\":15");
    write(&p, &format!("{header}\n{}\n{}\n", lines[1], lines[2]));
    assert!(matches!(load_jsonl(&p), Err(Error::Schema { line: 1, .. })));
}

#[test]
fn normalize_round_trip_recovers_raw_coordinates() {
    let raw = vec![3.0, -1.0, 5.0, 2.0, 4.0, 0.5, 3.5, 1.0];
    let (pose, bbox) = normalize(4, 2, &raw).unwrap();
    assert!(pose.coords().iter().all(|v| (0.0..=1.0).contains(v)));
    let back = denormalize(&pose, &bbox).unwrap();
    for (a, b) in raw.iter().zip(&back) {
        assert!((a - b).abs() <= 1e-12);
    }
    // the longest axis spans the box exactly
    assert_eq!(bbox.side, 3.0);
}

#[test]
fn tokenizer_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("tok.pctc");
    let tok = small_tokenizer(5);
    let sha = save_tokenizer(&tok, &p).unwrap();
    assert_eq!(sha.len(), 64);
    assert!(sidecar_path(&p).exists());
    let back = load_tokenizer(&p).unwrap();
    let poses = DatasetSplit::generate(&Skeleton::mpii16(), 2, 8, 0, 0).unwrap().train;
    assert_eq!(back.tokenize_batch(&poses).unwrap(), tok.tokenize_batch(&poses).unwrap());
    assert_eq!(back.reconstruct_batch(&poses).unwrap(), tok.reconstruct_batch(&poses).unwrap());
}

#[test]
fn stage_two_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let tok_path = dir.path().join("tok.pctc");
    let tok = small_tokenizer(5);
    let sha = save_tokenizer(&tok, &tok_path).unwrap();
    let poses = DatasetSplit::generate(&Skeleton::mpii16(), 2, 6, 0, 0).unwrap().train;
    let obs: Vec<Observation> = poses.iter().map(Observation::exact).collect();

    let est = EstimatorModel::new(small_head(), tok, &mut rng_from_seed(8)).unwrap();
    let p = dir.path().join("est.pctc");
    save_estimator(&est, &sha, &p).unwrap();
    let back = load_estimator(&p, &tok_path).unwrap();
    assert_eq!(back.predict_poses(&obs).unwrap(), est.predict_poses(&obs).unwrap());
    let any = load_predictor(&p, Some(&tok_path)).unwrap();
    assert_eq!(any.kind(), "estimator");
    assert!(load_predictor(&p, None).is_err());

    let reg = RegressionModel::new(small_head(), 16, 2, &mut rng_from_seed(9)).unwrap();
    let p = dir.path().join("reg.pctc");
    save_regression(&reg, &p).unwrap();
    let back = load_predictor(&p, None).unwrap();
    assert!(matches!(back, Predictor::Regression(_)));
    assert_eq!(back.pose_shape(), (16, 2));
    assert_eq!(back.predict_poses(&obs).unwrap(), reg.predict_poses(&obs).unwrap());

    let bins = BinsModel::new(small_head(), 16, 2, &mut rng_from_seed(10)).unwrap();
    let p = dir.path().join("bins.pctc");
    save_bins(&bins, &p).unwrap();
    let back = load_predictor(&p, None).unwrap();
    assert_eq!(back.kind(), "bins");
    assert_eq!(back.predict_poses(&obs).unwrap(), bins.predict_poses(&obs).unwrap());
}

#[test]
fn estimator_refuses_a_different_tokenizer() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pctc"), dir.path().join("b.pctc"));
    let sha = save_tokenizer(&small_tokenizer(1), &a).unwrap();
    save_tokenizer(&small_tokenizer(2), &b).unwrap();
    let est = EstimatorModel::new(small_head(), small_tokenizer(1), &mut rng_from_seed(3)).unwrap();
    let p = dir.path().join("est.pctc");
    save_estimator(&est, &sha, &p).unwrap();
    assert!(load_estimator(&p, &a).is_ok());
    match load_estimator(&p, &b) {
        Err(Error::HashMismatch { expected, found }) => {
            assert_eq!(expected, sha);
            assert_ne!(found, sha);
        }
        other => panic!("expected a hash mismatch, got {other:?}"),
    }
}

#[test]
fn missing_or_wrong_checkpoints_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.pctc");
    assert!(load_tokenizer(&missing).is_err());
    assert!(load_predictor(&missing, None).is_err());

    let tok = dir.path().join("tok.pctc");
    save_tokenizer(&small_tokenizer(1), &tok).unwrap();
    assert!(matches!(load_predictor(&tok, None), Err(Error::Checkpoint(_))));

    let reg = dir.path().join("reg.pctc");
    save_regression(&RegressionModel::new(small_head(), 16, 2, &mut rng_from_seed(1)).unwrap(), &reg).unwrap();
    assert!(matches!(load_tokenizer(&reg), Err(Error::Checkpoint(_))));

    let mut bytes = std::fs::read(&tok).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&tok, bytes).unwrap();
    assert!(load_tokenizer(&tok).is_err());
}
