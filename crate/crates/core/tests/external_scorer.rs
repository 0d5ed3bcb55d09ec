mod common;

use std::path::{Path, PathBuf};

use sampling_mbr::mbr::{compute_utility_matrix, utility_matrix_cached, MatrixCache};
use sampling_mbr::metrics::{ExternalScorer, ExternalScorerConfig, UtilityMetric};
use sampling_mbr::{CandidatePool, Detokenizer, Error, ScorerError, TokenSequence};

fn stub(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn scorer(script: &Path, batch_size: usize, timeout_ms: u64) -> ExternalScorer {
    ExternalScorer::new(ExternalScorerConfig {
        id: "stub".into(),
        command: vec!["python3".into(), script.display().to_string()],
        batch_size,
        timeout_ms,
        range: (0.0, 1.0),
    })
    .unwrap()
}

const EQUAL: &str = r#"import json, sys
for line in sys.stdin:
    r = json.loads(line)
    print(json.dumps({"id": r["id"], "score": 1.0 if r["hyp"] == r["ref"] else 0.0}))
"#;

const REVERSED: &str = r#"import json, sys
reqs = [json.loads(l) for l in sys.stdin]
for r in reversed(reqs):
    print(json.dumps({"id": r["id"], "score": 0.25}))
"#;

#[test]
fn responses_may_arrive_in_any_order() {
    let dir = tempfile::tempdir().unwrap();
    let s = scorer(&stub(dir.path(), "rev.py", REVERSED), 10, 30_000);
    let out = s
        .score_batch(&[(5, "a", "b"), (3, "c", "d"), (9, "e", "f")])
        .unwrap();
    assert_eq!(out, vec![(5, 0.25), (3, 0.25), (9, 0.25)]);
    assert_eq!(s.batches_sent(), 1);
    assert_eq!(s.pairs_scored(), 3);
}

#[test]
fn score_pairs_goes_through_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let s = scorer(&stub(dir.path(), "eq.py", EQUAL), 2, 30_000);
    assert_eq!(s.id(), "external:stub");
    let scores = s
        .score_pairs(&[("a", "a"), ("a", "b"), ("b", "b")])
        .unwrap();
    assert_eq!(scores, vec![1.0, 0.0, 1.0]);
    assert_eq!(s.batches_sent(), 2);
}

#[test]
fn missing_id_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"import json, sys
for line in sys.stdin:
    r = json.loads(line)
    if r["id"] != 1:
        print(json.dumps({"id": r["id"], "score": 0.5}))
"#;
    let s = scorer(&stub(dir.path(), "miss.py", body), 64, 30_000);
    let err = s.score_batch(&[(0, "a", "b"), (1, "c", "d")]).unwrap_err();
    assert!(matches!(err, ScorerError::MissingId(1)), "{err:?}");
}

#[test]
fn out_of_range_score_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"import json, sys
for line in sys.stdin:
    r = json.loads(line)
    print(json.dumps({"id": r["id"], "score": 1.5}))
"#;
    let s = scorer(&stub(dir.path(), "range.py", body), 64, 30_000);
    let err = s.score_batch(&[(7, "a", "b")]).unwrap_err();
    assert!(
        matches!(err, ScorerError::OutOfRange { id: 7, .. }),
        "{err:?}"
    );
}

#[test]
fn malformed_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let body = "import sys\nfor line in sys.stdin:\n    print('not json')\n";
    let s = scorer(&stub(dir.path(), "bad.py", body), 64, 30_000);
    let err = s.score_batch(&[(0, "a", "b")]).unwrap_err();
    assert!(matches!(err, ScorerError::Malformed { .. }), "{err:?}");
}

#[test]
fn slow_scorer_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let body = "import sys, time\nsys.stdin.read()\ntime.sleep(30)\n";
    let s = scorer(&stub(dir.path(), "slow.py", body), 64, 300);
    let err = s.score_batch(&[(0, "a", "b")]).unwrap_err();
    assert!(matches!(err, ScorerError::Timeout(_)), "{err:?}");
}

#[test]
fn missing_program_fails_to_spawn() {
    let s = ExternalScorer::new(ExternalScorerConfig {
        id: "none".into(),
        command: vec!["/nonexistent/scorer-binary".into()],
        batch_size: 4,
        timeout_ms: 1000,
        range: (0.0, 1.0),
    })
    .unwrap();
    let err = s.score_batch(&[(0, "a", "b")]).unwrap_err();
    assert!(matches!(err, ScorerError::Spawn { .. }), "{err:?}");
}

fn small_pool() -> (CandidatePool, sampling_mbr::Vocabulary) {
    let v = common::vocab(3);
    let seq = |ids: &[u32]| TokenSequence::new(ids.to_vec(), &v).unwrap();
    let pool = CandidatePool::from_draws([
        (seq(&[0, 3]), -1.0),
        (seq(&[1, 3]), -1.5),
        (seq(&[0, 3]), -1.0),
        (seq(&[0, 1, 3]), -2.0),
    ]);
    (pool, v)
}

#[test]
fn warm_cache_makes_no_scorer_calls() {
    let dir = tempfile::tempdir().unwrap();
    let s = scorer(&stub(dir.path(), "eq.py", EQUAL), 64, 30_000);
    let cache = MatrixCache::new(dir.path().join("cache")).unwrap();
    let (pool, v) = small_pool();
    let detok = Detokenizer::default();
    let cold = utility_matrix_cached(Some(&cache), &pool, &v, &s, &detok).unwrap();
    let calls = s.batches_sent();
    assert!(calls > 0);
    let warm = utility_matrix_cached(Some(&cache), &pool, &v, &s, &detok).unwrap();
    assert_eq!(s.batches_sent(), calls);
    assert_eq!(cold, warm);
    assert_eq!(cold.get(0, 0), 1.0);
    assert_eq!(cold.get(0, 1), 0.0);
}

#[test]
fn scorer_failure_maps_to_pair_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"import json, sys
for line in sys.stdin:
    r = json.loads(line)
    if r["id"] != 4:
        print(json.dumps({"id": r["id"], "score": 0.5}))
"#;
    let s = scorer(&stub(dir.path(), "miss.py", body), 64, 30_000);
    let (pool, v) = small_pool();
    let err = compute_utility_matrix(&pool, &v, &s, &Detokenizer::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    match err {
        Error::MetricPair { row, col, .. } => assert_eq!((row, col), (1, 1)),
        other => panic!("unexpected error {other:?}"),
    }
}
