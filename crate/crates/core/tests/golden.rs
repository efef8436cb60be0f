//! Cross-writer compatibility of the trace container.
//!
//! Set `ARCHFUZZ_BLESS=1` to rewrite the engine-written golden files.

use std::collections::BTreeMap;
use std::path::PathBuf;

use archfuzz::tensor::Tensor;
use archfuzz::trace::{decode, encode, read_trace, LossTrace, NodeMeta, Outcome, TraceBundle};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn bits(shape: &[usize], b: &[u32]) -> Tensor<f32> {
    Tensor::from_vec(shape.to_vec(), b.iter().map(|&x| f32::from_bits(x)).collect())
}

fn nodes() -> Vec<NodeMeta> {
    vec![
        NodeMeta { id: 0, kind: "Input".into(), inputs: vec![] },
        NodeMeta { id: 1, kind: "Dense".into(), inputs: vec![0] },
        NodeMeta { id: 2, kind: "ReLU".into(), inputs: vec![1] },
    ]
}

fn ok_bundle() -> TraceBundle {
    let fc = BTreeMap::from([
        (0, bits(&[2, 3], &[0x3F800000, 0xC0200000, 0x00000000, 0x80000000, 0x40400000, 0x3F000000])),
        (1, bits(&[2, 2], &[0x7FC00001, 0xFF800000, 0x00000001, 0x40000000])),
        (2, bits(&[2, 2], &[0x7FC00001, 0x00000000, 0x00000001, 0x40000000])),
    ]);
    let bc = BTreeMap::from([
        (0, bits(&[1, 2, 3], &[0x3DCCCCCD, 0xBDCCCCCD, 0x00000000, 0x7F7FFFFF, 0xFF7FFFFF, 0x00800000])),
        (1, bits(&[1, 2, 2], &[0x3F800000, 0x3F800000, 0xFFC00000, 0x00000000])),
        (2, bits(&[1, 2, 2], &[0x3E800000, 0xBE800000, 0x7F800000, 0x80000000])),
    ]);
    TraceBundle {
        backend_id: "naive".into(),
        model_id: "m00000".into(),
        outcome: Outcome::Nan,
        precision: "float32".into(),
        loss: Some("mean_squared_error".into()),
        nodes: nodes(),
        fc,
        lc: Some(LossTrace {
            loss_output: f32::from_bits(0x7FC00000),
            loss_gradient: bits(&[2, 2], &[0x3E800000, 0xBE800000, 0x7F800000, 0x80000000]),
        }),
        bc,
    }
}

fn crash_bundle() -> TraceBundle {
    TraceBundle::crash("naive+debug-abort", "m00001", nodes(), "debug-abort: aborting at node 2")
}

fn check_engine_golden(name: &str, bundle: &TraceBundle) {
    let bytes = encode(bundle).unwrap();
    let path = golden(name);
    if std::env::var_os("ARCHFUZZ_BLESS").is_some() {
        std::fs::write(&path, &bytes).unwrap();
    }
    let on_disk = std::fs::read(&path).unwrap();
    assert_eq!(bytes, on_disk, "{name} differs from the current encoder output");
    assert!(decode(&on_disk).unwrap().bitwise_eq(bundle));
}

#[test]
fn engine_golden_files_are_stable() {
    check_engine_golden("engine.trace", &ok_bundle());
    check_engine_golden("engine_crash.trace", &crash_bundle());
}

#[test]
fn python_written_traces_parse_identically() {
    let py = read_trace(&golden("python.trace")).unwrap();
    let rs = read_trace(&golden("engine.trace")).unwrap();
    assert!(py.bitwise_eq(&rs));
    assert!(py.bitwise_eq(&ok_bundle()));
    assert_eq!(py.fc[&1].data[0].to_bits(), 0x7FC00001);

    let py = read_trace(&golden("python_crash.trace")).unwrap();
    assert!(py.bitwise_eq(&crash_bundle()));
    assert_eq!(py.outcome, Outcome::Crash("debug-abort: aborting at node 2".into()));
}
