use super::*;
use crate::trace::{LossTrace, Outcome};

fn t1(v: f32) -> Tensor<f32> {
    Tensor::from_vec(vec![1], vec![v])
}

fn chain_meta(n: usize) -> Vec<NodeMeta> {
    (0..n)
        .map(|i| NodeMeta {
            id: i,
            kind: match i {
                0 => "Input".into(),
                i if i % 2 == 1 => "Dense".into(),
                _ => "ReLU".into(),
            },
            inputs: if i == 0 { vec![] } else { vec![i - 1] },
        })
        .collect()
}

/// A chain model trace with one scalar per node.
fn trace(backend: &str, fc: &[f32], bc: &[f32], lo: f32, lg: f32) -> TraceBundle {
    TraceBundle {
        backend_id: backend.into(),
        model_id: "m00000".into(),
        outcome: Outcome::Ok,
        precision: "float32".into(),
        loss: Some("mean_squared_error".into()),
        nodes: chain_meta(fc.len()),
        fc: fc.iter().enumerate().map(|(i, &v)| (i, t1(v))).collect(),
        lc: Some(LossTrace { loss_output: lo, loss_gradient: t1(lg) }),
        bc: bc.iter().enumerate().map(|(i, &v)| (i, t1(v))).collect(),
    }
}

fn topo(n: usize) -> Topology {
    Topology::from_meta(&chain_meta(n)).unwrap()
}

fn cfg() -> DetectorConfig {
    DetectorConfig::default()
}

fn dist(x: &[f32], y: &[f32]) -> Distance {
    let a = Tensor::from_vec(vec![x.len()], x.to_vec());
    let b = Tensor::from_vec(vec![y.len()], y.to_vec());
    chebyshev_distance(&a, &b).unwrap()
}

#[test]
fn chebyshev_examples() {
    assert_eq!(dist(&[1.0, -4.0, 0.5], &[1.0, -4.0, 0.5]), Distance::Value(0.0));
    assert_eq!(dist(&[1.0, 2.0, 3.0], &[1.0, 2.5, 1.0]), Distance::Value(2.0));
    assert_eq!(dist(&[0.0], &[f32::NAN]), Distance::Tainted);
    assert_eq!(dist(&[f32::NEG_INFINITY], &[f32::NEG_INFINITY]), Distance::Value(0.0));
    assert_eq!(dist(&[f32::INFINITY], &[1.0]), Distance::Value(f64::INFINITY));
    let a = Tensor::from_vec(vec![2], vec![0.0, 0.0]);
    let b = Tensor::from_vec(vec![1, 2], vec![0.0, 0.0]);
    assert!(matches!(chebyshev_distance(&a, &b), Err(DetectError::ShapeMismatch(_, _))));
}

#[test]
fn chebyshev_is_computed_in_double_precision() {
    let d = dist(&[16_777_216.0], &[16_777_218.0]).value().unwrap();
    assert_eq!(d, 2.0);
    let d = dist(&[1.0e-30], &[-1.0e-30]).value().unwrap();
    assert!((d - 2.0e-30).abs() < 1e-36);
}

#[test]
fn config_validation() {
    assert!(cfg().validate().is_ok());
    assert!(DetectorConfig { epsilon: 0.2, ..cfg() }.validate().is_err());
    assert!(DetectorConfig { epsilon: 0.0, ..cfg() }.validate().is_err());
}

#[test]
fn fc_flags_amplified_deviation() {
    let a = trace("a", &[1.0, 2.0, 3.0], &[0.0; 3], 1.0, 1.0);
    let b = trace("b", &[1.0, 2.0 + 1e-7, 3.2], &[0.0; 3], 1.0, 1.0);
    let f = detect_fc(&a, &b, &topo(3), &cfg()).findings;
    assert_eq!(f.len(), 1);
    assert_eq!((f[0].node, f[0].kind.as_str(), f[0].stage), (Some(2), "ReLU", Stage::FC));
    assert!((f[0].distance - 0.2).abs() < 1e-6);
    assert_eq!(f[0].neighbours.len(), 1);
    assert!(f[0].neighbours[0].1 < 1e-5);
}

#[test]
fn fc_gate_blocks_transmitted_error() {
    let a = trace("a", &[1.0, 2.0, 3.0], &[0.0; 3], 1.0, 1.0);
    let b = trace("b", &[1.0, 2.01, 8.0], &[0.0; 3], 1.0, 1.0);
    assert!(detect_fc(&a, &b, &topo(3), &cfg()).findings.is_empty());
}

#[test]
fn fc_source_is_vacuously_gated() {
    let a = trace("a", &[1.0, 2.0], &[0.0; 2], 1.0, 1.0);
    let b = trace("b", &[1.5, 2.5], &[0.0; 2], 1.0, 1.0);
    let f = detect_fc(&a, &b, &topo(2), &cfg()).findings;
    assert_eq!(f.iter().map(|f| f.node).collect::<Vec<_>>(), vec![Some(0)]);
}

#[test]
fn fc_missing_trace_is_a_gap() {
    let a = trace("a", &[1.0, 2.0, 3.0], &[0.0; 3], 1.0, 1.0);
    let mut b = trace("b", &[1.0, 2.0, 3.5], &[0.0; 3], 1.0, 1.0);
    b.fc.remove(&1);
    let r = detect_fc(&a, &b, &topo(3), &cfg());
    assert!(r.findings.is_empty());
    assert_eq!(r.gaps.len(), 2);
    assert!(r.gaps.iter().all(|g| g.stage == Stage::FC));
}

#[test]
fn lc_reproduces_catalogue_values() {
    let a = trace("a", &[1.0, 2.0], &[0.0; 2], 15.942385, 1.0);
    let b = trace("b", &[1.0, 2.0 + 1e-6], &[0.0; 2], 15.333239, 1.0);
    let f = detect_lc(&a, &b, &topo(2), &cfg()).findings;
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].kind, "mean_squared_error");
    assert!((f[0].loss_output_diff.unwrap() - 0.609146).abs() < 1e-5);
}

#[test]
fn lc_gate_and_identity() {
    let a = trace("a", &[1.0, 2.0], &[0.0; 2], 15.0, 1.0);
    let b = trace("b", &[1.0, 2.02], &[0.0; 2], 16.0, 1.0);
    assert!(detect_lc(&a, &b, &topo(2), &cfg()).findings.is_empty());
    assert!(detect_lc(&a, &a.clone(), &topo(2), &cfg()).findings.is_empty());
    let c = trace("c", &[1.0, 2.0], &[0.0; 2], 15.0, 1.3);
    let f = detect_lc(&a, &c, &topo(2), &cfg()).findings;
    assert_eq!(f.len(), 1);
    assert!((f[0].loss_gradient_distance.unwrap() - 0.3).abs() < 1e-6);
}

#[test]
fn lc_scaled_threshold_is_opt_in() {
    let mut a = trace("a", &[1.0, 2.0], &[0.0; 2], 15.0, 1.0);
    a.loss = Some("mean_absolute_percentage_error".into());
    let mut b = a.clone();
    b.backend_id = "b".into();
    b.lc.as_mut().unwrap().loss_output = 15.5;
    assert_eq!(detect_lc(&a, &b, &topo(2), &cfg()).findings.len(), 1);
    let scaled = DetectorConfig { scale_loss_threshold: true, ..cfg() };
    assert!(detect_lc(&a, &b, &topo(2), &scaled).findings.is_empty());
}

#[test]
fn bc_blame_stays_at_first_divergent_successor() {
    // Node 2 is the sink; its successor is the loss gradient.
    let a = trace("a", &[0.0; 3], &[1.0, 1.0, 1.0], 1.0, 1.0);
    let b = trace("b", &[0.0; 3], &[1.5, 1.3, 1.0], 1.0, 1.0);
    let f = detect_bc(&a, &b, &topo(3), &cfg()).findings;
    assert_eq!(f.iter().map(|f| f.node).collect::<Vec<_>>(), vec![Some(1)]);
}

#[test]
fn bc_sink_is_gated_by_loss_gradient() {
    let a = trace("a", &[0.0; 2], &[1.0, 1.0], 1.0, 1.0);
    let b = trace("b", &[0.0; 2], &[1.0, 2.0], 1.0, 1.0);
    let f = detect_bc(&a, &b, &topo(2), &cfg()).findings;
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].neighbours, vec![(None, 0.0)]);
}

#[test]
fn bc_requires_agreeing_loss() {
    let a = trace("a", &[0.0; 2], &[1.0, 1.0], 1.0, 1.0);
    let b = trace("b", &[0.0; 2], &[1.0, 2.0], 1.001, 1.0);
    assert!(detect_bc(&a, &b, &topo(2), &cfg()).findings.is_empty());
    let c = trace("c", &[0.0; 2], &[1.0, 1.0 + 1e-7], 1.0, 1.0);
    assert!(detect_bc(&a, &c, &topo(2), &cfg()).findings.is_empty());
}

#[test]
fn tainted_distances_never_flag() {
    let a = trace("a", &[1.0, 2.0, 3.0], &[0.0; 3], 1.0, 1.0);
    let b = trace("b", &[1.0, f32::NAN, 9.0], &[0.0; 3], 1.0, 1.0);
    assert!(detect_fc(&a, &b, &topo(3), &cfg()).findings.is_empty());
}

#[test]
fn pair_requires_both_ok() {
    let a = trace("a", &[1.0, 2.0], &[0.0; 2], 1.0, 1.0);
    let mut b = trace("b", &[5.0, 2.0], &[0.0; 2], 1.0, 1.0);
    assert_eq!(detect_pair(&a, &b, &topo(2), &cfg()).findings.len(), 1);
    b.outcome = Outcome::Nan;
    assert!(detect_pair(&a, &b, &topo(2), &cfg()).findings.is_empty());
}

#[test]
fn pair_is_canonical() {
    let a = trace("zeta", &[1.0, 2.0], &[0.0; 2], 1.0, 1.0);
    let b = trace("alpha", &[5.0, 2.0], &[0.0; 2], 1.0, 1.0);
    let ab = detect_pair(&a, &b, &topo(2), &cfg()).findings;
    let ba = detect_pair(&b, &a, &topo(2), &cfg()).findings;
    assert_eq!(ab, ba);
    assert_eq!(ab[0].pair, ("alpha".to_string(), "zeta".to_string()));
}

fn nan_trace(backend: &str, n: usize, first_nan: usize) -> TraceBundle {
    let fc: Vec<f32> = (0..n).map(|i| if i >= first_nan { f32::NAN } else { i as f32 }).collect();
    let mut t = trace(backend, &fc, &vec![f32::NAN; n], f32::NAN, f32::NAN);
    t.outcome = Outcome::Nan;
    t
}

#[test]
fn nan_event_attributed_to_first_nonfinite_node() {
    let ok = trace("ok", &(0..10).map(|i| i as f32).collect::<Vec<_>>(), &[0.0; 10], 1.0, 1.0);
    let bad = nan_trace("bad", 10, 7);
    let (nans, crashes) = classify_nan_crash(&[ok, bad], Some(&topo(10)));
    assert!(crashes.is_empty());
    assert_eq!(nans.len(), 1);
    assert_eq!(nans[0].node, Some(7));
    assert_eq!(nans[0].affected, vec!["bad".to_string()]);
    assert_eq!(nans[0].healthy, vec!["ok".to_string()]);
}

#[test]
fn nan_without_healthy_backend_is_dropped() {
    let (nans, _) = classify_nan_crash(&[nan_trace("a", 5, 3), nan_trace("b", 5, 3)], Some(&topo(5)));
    assert!(nans.is_empty());
}

#[test]
fn nan_with_finite_loss_counts_as_healthy() {
    let mut healed = nan_trace("healed", 4, 2);
    healed.fc.insert(3, t1(0.0));
    healed.lc = Some(LossTrace { loss_output: 0.5, loss_gradient: t1(0.1) });
    let bad = nan_trace("bad", 4, 2);
    let (nans, _) = classify_nan_crash(&[healed, bad], Some(&topo(4)));
    assert_eq!(nans.len(), 1);
    assert_eq!(nans[0].healthy, vec!["healed".to_string()]);
    assert_eq!(nans[0].node, Some(3));
}

#[test]
fn crash_classification() {
    let ok = trace("ok", &[1.0, 2.0], &[0.0; 2], 1.0, 1.0);
    let c1 = TraceBundle::crash("x", "m00000", chain_meta(2), "segfault at 0x7fff1234 in /usr/lib/libfoo.so line 12");
    let (_, crashes) = classify_nan_crash(&[ok, c1.clone()], Some(&topo(2)));
    assert_eq!(crashes.len(), 1);
    assert_eq!(crashes[0].message, "segfault at <addr> in <path> line <n>");

    let c2 = TraceBundle::crash("y", "m00000", chain_meta(2), "segfault at 0xdeadbeef in /opt/lib/libfoo.so line 99");
    let (_, crashes) = classify_nan_crash(&[c1, c2], Some(&topo(2)));
    assert!(crashes.is_empty(), "identical failure everywhere is dropped");
}

#[test]
fn crash_events_merge_across_models() {
    let mk = |model: &str, msg: &str| {
        let mut ok = trace("ok", &[1.0, 2.0], &[0.0; 2], 1.0, 1.0);
        ok.model_id = model.into();
        let c = TraceBundle::crash("x", model, chain_meta(2), msg);
        detect_model(&[ok, c], &cfg()).unwrap()
    };
    let r =
        InconsistencyReport::from_models(cfg(), [mk("m00001", "abort at node 3"), mk("m00002", "abort at node 11")]);
    assert_eq!(r.crash_events.len(), 1);
    assert_eq!(r.crash_events[0].models, vec!["m00001".to_string(), "m00002".to_string()]);
    assert!(r.has_failures());
}

#[test]
fn normalization_examples() {
    assert_eq!(normalize_message("  timeout  "), "timeout");
    assert_eq!(normalize_message("index 5 out of\tbounds  for len 3"), "index <n> out of bounds for len <n>");
    assert_eq!(normalize_message("bad value -1.5e-3"), "bad value <n>");
}

fn finding(stage: Stage, kind: &str, pair: (&str, &str), distance: f64, model: &str) -> Finding {
    Finding {
        stage,
        kind: kind.into(),
        node: Some(1),
        model_id: model.into(),
        pair: (pair.0.into(), pair.1.into()),
        distance,
        loss_output_diff: None,
        loss_gradient_distance: None,
        neighbours: vec![],
        count: 1,
    }
}

fn backends(ids: &[&str]) -> Vec<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

#[test]
fn vote_implicates_common_backend() {
    let f = [finding(Stage::BC, "ReLU", ("A", "B"), 1.0, "m0"), finding(Stage::BC, "ReLU", ("A", "C"), 1.0, "m0")];
    let v = vote_localize(&f, &backends(&["A", "B", "C"]));
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].vote, Vote::Implicated("A".into()));
    assert_eq!(v[0].channel, "BC");
}

#[test]
fn vote_ambiguous_cases() {
    let all = [
        finding(Stage::FC, "Conv2D", ("A", "B"), 1.0, "m0"),
        finding(Stage::FC, "Conv2D", ("A", "C"), 1.0, "m0"),
        finding(Stage::FC, "Conv2D", ("B", "C"), 1.0, "m0"),
    ];
    assert_eq!(vote_localize(&all, &backends(&["A", "B", "C"]))[0].vote, Vote::Ambiguous);
    let one = [finding(Stage::FC, "Conv2D", ("A", "B"), 1.0, "m0")];
    assert_eq!(vote_localize(&one, &backends(&["A", "B"]))[0].vote, Vote::Ambiguous);
    assert_eq!(vote_localize(&one, &backends(&["A", "B", "C"]))[0].vote, Vote::Ambiguous);
}

#[test]
fn dedup_examples() {
    let four: Vec<Finding> =
        (0..4).map(|i| finding(Stage::FC, "Conv2D", ("a", "b"), i as f64, &format!("m{i}"))).collect();
    let d = deduplicate(four);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].count, 4);
    assert_eq!(d[0].distance, 3.0);
    assert_eq!(d[0].model_id, "m3");

    let two =
        vec![finding(Stage::FC, "Conv2D", ("a", "b"), 1.0, "m0"), finding(Stage::BC, "Conv2D", ("a", "b"), 1.0, "m0")];
    assert_eq!(deduplicate(two).len(), 2);
    assert!(deduplicate(Vec::new()).is_empty());
}

#[test]
fn dedup_ties_prefer_smaller_model() {
    let d = deduplicate(vec![
        finding(Stage::FC, "Dense", ("a", "b"), 2.0, "m9"),
        finding(Stage::FC, "Dense", ("a", "b"), 2.0, "m1"),
    ]);
    assert_eq!(d[0].model_id, "m1");
}

#[test]
fn report_round_trips_through_json() {
    let a = trace("a", &[1.0, 2.0], &[0.0; 2], 1.0, 1.0);
    let b = trace("b", &[5.0, 2.0], &[0.0; 2], 1.0, 1.0);
    let r = InconsistencyReport::from_models(cfg(), [detect_model(&[a, b], &cfg()).unwrap()]);
    assert_eq!(r.findings.len(), 1);
    let back = InconsistencyReport::from_json(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert!(r.to_table().contains("Input"));
}
