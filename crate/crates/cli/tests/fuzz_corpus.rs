//! Replays the checked-in fuzz seeds through the same properties the fuzz
//! targets assert.

use std::fs;
use std::path::{Path, PathBuf};

use eal::{ExperimentConfig, Overrides, RawConfig};
use eal_core::dynsys::Trajectory;
use eal_core::tensor::{decode_checkpoint, encode_checkpoint};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds() {
    let mut resolved = 0;
    for (path, bytes) in seeds("config_parse") {
        let text = String::from_utf8(bytes).unwrap();
        let Ok(raw) = RawConfig::parse(&text) else { continue };
        if let Ok(cfg) = raw.resolve(&Overrides::default()) {
            let back: ExperimentConfig = serde_json::from_str(&cfg.canonical_json()).unwrap();
            assert_eq!(back.hash(), cfg.hash(), "{}", path.display());
            resolved += 1;
        }
    }
    assert!(resolved > 0);
}

#[test]
fn trajectory_seeds() {
    let mut parsed = 0;
    for (path, bytes) in seeds("trajectory_csv") {
        let Ok(traj) = Trajectory::read_csv(bytes.as_slice()) else {
            continue;
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let again = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(again.columns, traj.columns, "{}", path.display());
        assert!(again
            .states
            .iter()
            .zip(&traj.states)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        parsed += 1;
    }
    assert!(parsed > 0);
}

#[test]
fn checkpoint_seeds() {
    let mut decoded = 0;
    for (path, bytes) in seeds("checkpoint_decode") {
        let Ok(store) = decode_checkpoint(&bytes) else { continue };
        assert_eq!(encode_checkpoint(&store), bytes, "{}", path.display());
        decoded += 1;
    }
    assert!(decoded > 0);
}
