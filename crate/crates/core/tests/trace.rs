mod common;

use proptest::prelude::*;

use archfuzz::trace::{decode, encode, read_trace, write_trace, NodeMeta, TraceBundle, TraceError, FORMAT_VERSION};
use common::random_bundle;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn random_bundles_round_trip(seed: u64) {
        let t = random_bundle(seed);
        let back = decode(&encode(&t).unwrap()).unwrap();
        prop_assert!(back.bitwise_eq(&t));
    }

    #[test]
    fn truncation_never_decodes(seed: u64, cut in 1usize..64) {
        let t = random_bundle(seed);
        let bytes = encode(&t).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        let blobs = t.fc.values().chain(t.bc.values()).map(|x| x.data.len()).sum::<usize>()
            + t.lc.as_ref().map_or(0, |l| 1 + l.loss_gradient.data.len());
        prop_assume!(blobs > 0);
        prop_assert!(decode(&bytes[..keep]).is_err());
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..20 {
        let t = random_bundle(seed);
        let p = dir.path().join(format!("nested/{seed}.trace"));
        write_trace(&t, &p).unwrap();
        assert!(read_trace(&p).unwrap().bitwise_eq(&t));
    }
}

#[test]
fn empty_crash_bundle_is_valid() {
    let t = TraceBundle::crash("naive", "m00003", vec![], "killed");
    let back = decode(&encode(&t).unwrap()).unwrap();
    assert!(back.bitwise_eq(&t));
}

fn ok_bundle() -> TraceBundle {
    (0..).map(random_bundle).find(|t| t.outcome.is_ok() && t.fc.values().any(|x| !x.data.is_empty())).unwrap()
}

#[test]
fn truncated_blob_is_a_length_mismatch() {
    let bytes = encode(&ok_bundle()).unwrap();
    let err = decode(&bytes[..bytes.len() - 4]).unwrap_err();
    assert!(matches!(err, TraceError::BlobLength(_)), "{err}");
    assert!(err.to_string().contains("blob length mismatch"));
}

#[test]
fn unknown_version_is_reported() {
    let mut bytes = encode(&ok_bundle()).unwrap();
    bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let err = decode(&bytes).unwrap_err();
    assert!(matches!(err, TraceError::Version(v) if v == FORMAT_VERSION + 1));
    assert!(err.to_string().contains("version"));
}

#[test]
fn malformed_manifest_and_magic() {
    let mut bytes = encode(&ok_bundle()).unwrap();
    bytes[20] = b'#';
    assert!(matches!(decode(&bytes), Err(TraceError::Manifest(_))));
    assert!(matches!(decode(b"NOTATRACE-------------"), Err(TraceError::BadMagic)));
}

#[test]
fn inconsistent_bundles_are_refused() {
    let mut t = ok_bundle();
    t.bc.clear();
    assert!(matches!(encode(&t), Err(TraceError::Inconsistent(_))));
    let t = TraceBundle::crash("naive", "m0", vec![NodeMeta { id: 0, kind: "Input".into(), inputs: vec![] }], "");
    assert!(encode(&t).is_err());
}

#[test]
fn io_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.trace");
    let err = read_trace(&missing).unwrap_err();
    assert!(err.to_string().contains("absent.trace"));
}
