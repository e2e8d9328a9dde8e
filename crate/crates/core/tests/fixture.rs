//! The checked-in corpus must stay in sync with the generator.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use popsweeper::backend::OracleScript;
use popsweeper::corpus::{synthetic_corpus, CorpusSpec, ANNOTATIONS_FILE, ORACLE_FILE};
use popsweeper::engine::{Backends, Engine, EngineConfig};
use popsweeper::eval::load_annotations;
use popsweeper::frame::{decode_image, ImageEncoding};
use popsweeper::replay::replay_directory;
use popsweeper::source::read_manifest;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic_corpus")
}

#[test]
fn fixture_matches_generator() {
    let dir = fixture();
    let corpus = synthetic_corpus(&CorpusSpec::default());
    assert_eq!(read_manifest(&dir).unwrap(), corpus.manifest);

    let ann = load_annotations(&dir.join(ANNOTATIONS_FILE)).unwrap();
    assert_eq!(ann.len(), 1);
    assert_eq!(
        serde_json::to_value(&ann[0]).unwrap(),
        serde_json::to_value(&corpus.annotation).unwrap()
    );

    let script = OracleScript::load(&dir.join(ORACLE_FILE)).unwrap();
    assert_eq!(script.to_json(), corpus.script.to_json());

    for (name, img) in &corpus.images {
        let bytes = std::fs::read(dir.join(name)).unwrap();
        let decoded = decode_image(&bytes, ImageEncoding::Png, None).unwrap();
        assert_eq!(&decoded, img, "{name}");
    }
}

#[test]
fn fixture_replays_cleanly() {
    let dir = fixture();
    let script = OracleScript::load(&dir.join(ORACLE_FILE)).unwrap();
    let engine = Engine::new(EngineConfig::default(), Backends::scripted(Arc::new(script))).unwrap();
    let run = replay_directory(&engine, &dir, None).unwrap();
    assert_eq!(run.session_id, "synthetic_corpus");
    assert_eq!(run.responses.len(), 360);
    assert_eq!(run.events.len(), 120);
    // recorded pop-ups never go away, so each tick inside one is clicked
    assert_eq!(run.dismissals(), 10 + 15 + 10);

    let report = run.evaluate(&load_annotations(&dir.join(ANNOTATIONS_FILE)).unwrap()).unwrap();
    assert_eq!((report.precision, report.recall), (1.0, 1.0));
    assert_eq!((report.e2e_precision, report.e2e_recall), (1.0, 1.0));
    assert_eq!(report.end_to_end.popup_groups, 3);
    assert_eq!(report.apps_fully_resolved_fraction, 1.0);
}
