mod common;

use codetrail_core::forge::{forge_corpus, random_splice_session};
use codetrail_core::provenance::{label_session, ProvenanceConfig};
use codetrail_core::session_log::serialize_session;
use codetrail_core::timeline::{build_timeline, empty_model, ViewportHints};
use common::session_fixtures;
use serde_json::Value;

fn schema(name: &str) -> jsonschema::Validator {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let v: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, doc: &Value, what: &str) {
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{what}: {errors:?}");
}

#[test]
fn session_logs_conform() {
    let v = schema("session-log.schema.json");
    let mut logs = session_fixtures();
    logs.extend(forge_corpus(5, 5, 50..=200).into_iter().map(|s| s.log));
    logs.push(random_splice_session(1, 50));
    for log in logs {
        let doc: Value = serde_json::from_slice(&serialize_session(&log)).unwrap();
        assert_valid(&v, &doc, &log.session_id);
    }
}

#[test]
fn exported_timelines_conform() {
    let v = schema("timeline.schema.json");
    let mut logs = session_fixtures();
    logs.extend(forge_corpus(6, 5, 50..=300).into_iter().map(|s| s.log));
    for log in &logs {
        let labeled = label_session(log, &ProvenanceConfig::default()).unwrap();
        for file in log.file_paths() {
            let model = build_timeline(log, &labeled, Some(&file), &ViewportHints::default()).unwrap();
            assert_valid(&v, &serde_json::to_value(&model).unwrap(), &log.session_id);
        }
        assert_valid(&v, &serde_json::to_value(empty_model(log)).unwrap(), "empty");
    }
}
