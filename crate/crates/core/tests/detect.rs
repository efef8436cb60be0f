use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use archfuzz::detect::{
    chebyshev_distance, deduplicate, detect_model, detect_pair, DetectorConfig, Distance, Finding, InconsistencyReport,
    Stage, Topology,
};
use archfuzz::tensor::Tensor;
use archfuzz::trace::{LossTrace, NodeMeta, Outcome, TraceBundle};

const STEPS: [f32; 7] = [0.0, 0.0, 1e-7, 1e-3, 0.1, 0.5, 4.0];

fn perturb(rng: &mut ChaCha8Rng, x: &Tensor<f32>) -> Tensor<f32> {
    let step = STEPS[rng.gen_range(0..STEPS.len())];
    let mut y = x.clone();
    if step > 0.0 {
        let k = rng.gen_range(0..y.data.len());
        y.data[k] += if rng.gen_bool(0.5) { step } else { -step };
    }
    y
}

/// Two ok traces of the same chain-with-skips model, the second randomly
/// perturbed at each node and in the loss section.
fn pair(seed: u64, backend_b: &str) -> (TraceBundle, TraceBundle) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=7);
    let nodes: Vec<NodeMeta> = (0..n)
        .map(|i| {
            let mut inputs = if i == 0 { vec![] } else { vec![i - 1] };
            if i >= 2 && rng.gen_bool(0.3) {
                inputs.push(rng.gen_range(0..i - 1));
            }
            let kind = if i == 0 { "Input" } else { ["Dense", "ReLU", "Add", "Conv1D"][rng.gen_range(0..4)] };
            NodeMeta { id: i, kind: kind.into(), inputs }
        })
        .collect();
    let tensor = |rng: &mut ChaCha8Rng| Tensor::from_vec(vec![3], (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect());
    let fc: BTreeMap<usize, Tensor<f32>> = (0..n).map(|i| (i, tensor(&mut rng))).collect();
    let bc: BTreeMap<usize, Tensor<f32>> = (0..n).map(|i| (i, tensor(&mut rng))).collect();
    let lc = LossTrace { loss_output: rng.gen_range(0.0..3.0), loss_gradient: tensor(&mut rng) };
    let a = TraceBundle {
        backend_id: "naive".into(),
        model_id: format!("m{seed:05}"),
        outcome: Outcome::Ok,
        precision: "float32".into(),
        loss: Some("mean_squared_error".into()),
        nodes,
        fc,
        lc: Some(lc),
        bc,
    };
    let mut b = a.clone();
    b.backend_id = backend_b.into();
    for x in b.fc.values_mut().chain(b.bc.values_mut()) {
        *x = perturb(&mut rng, x);
    }
    let lc = b.lc.as_mut().unwrap();
    lc.loss_gradient = perturb(&mut rng, &lc.loss_gradient);
    if rng.gen_bool(0.3) {
        lc.loss_output += STEPS[rng.gen_range(0..STEPS.len())];
    }
    (a, b)
}

fn keys(fs: &[Finding]) -> Vec<(Stage, Option<usize>)> {
    let mut k: Vec<_> = fs.iter().map(|f| (f.stage, f.node)).collect();
    k.sort();
    k
}

fn cfg(t: f64, epsilon: f64) -> DetectorConfig {
    DetectorConfig { t, epsilon, ..Default::default() }
}

fn finite_tensor() -> impl Strategy<Value = Tensor<f32>> {
    prop::collection::vec(-1e6f32..1e6, 1..8).prop_map(|v| Tensor::from_vec(vec![v.len()], v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn raising_t_only_removes_findings(seed: u64, t1 in 1e-4f64..1.0, dt in 0.0f64..3.0) {
        let (a, b) = pair(seed, "reordered");
        let topo = Topology::from_meta(&a.nodes).unwrap();
        let lo = keys(&detect_pair(&a, &b, &topo, &cfg(t1, 1e-5)).findings);
        let hi = keys(&detect_pair(&a, &b, &topo, &cfg(t1 + dt, 1e-5)).findings);
        prop_assert!(hi.iter().all(|k| lo.contains(k)), "{hi:?} not within {lo:?}");
    }

    #[test]
    fn raising_epsilon_only_adds_findings(seed: u64, e1 in 1e-8f64..1e-2, factor in 1.0f64..50.0) {
        let (a, b) = pair(seed, "reordered");
        let topo = Topology::from_meta(&a.nodes).unwrap();
        let small = keys(&detect_pair(&a, &b, &topo, &cfg(0.15, e1)).findings);
        let large = keys(&detect_pair(&a, &b, &topo, &cfg(0.15, (e1 * factor).min(0.1))).findings);
        prop_assert!(small.iter().all(|k| large.contains(k)));
    }

    #[test]
    fn detection_is_symmetric(seed: u64) {
        let (a, b) = pair(seed, "reordered");
        let topo = Topology::from_meta(&a.nodes).unwrap();
        let c = DetectorConfig::default();
        prop_assert_eq!(detect_pair(&a, &b, &topo, &c), detect_pair(&b, &a, &topo, &c));
    }

    #[test]
    fn identical_traces_never_flag(seed: u64) {
        let (a, _) = pair(seed, "reordered");
        let mut b = a.clone();
        b.backend_id = "other".into();
        let topo = Topology::from_meta(&a.nodes).unwrap();
        let r = detect_pair(&a, &b, &topo, &DetectorConfig::default());
        prop_assert!(r.findings.is_empty() && r.gaps.is_empty());
    }

    #[test]
    fn findings_satisfy_their_gates(seed: u64) {
        let (a, b) = pair(seed, "reordered");
        let topo = Topology::from_meta(&a.nodes).unwrap();
        let c = DetectorConfig { t: 0.05, epsilon: 1e-3, ..Default::default() };
        for f in detect_pair(&a, &b, &topo, &c).findings {
            prop_assert!(f.distance > c.t);
            prop_assert!(!f.neighbours.is_empty() || f.stage == Stage::FC);
            for &(_, d) in &f.neighbours {
                prop_assert!(d < c.epsilon, "{f:?}");
            }
            match f.stage {
                Stage::FC => {
                    let preds = &topo.preds[f.node.unwrap()];
                    prop_assert_eq!(f.neighbours.len(), preds.len());
                }
                Stage::LC => prop_assert_eq!(f.neighbours[0].0, Some(topo.sink)),
                Stage::BC => {
                    let lc_a = a.lc.as_ref().unwrap();
                    let lc_b = b.lc.as_ref().unwrap();
                    prop_assert!(((lc_a.loss_output - lc_b.loss_output) as f64).abs() < c.epsilon);
                }
            }
        }
    }

    #[test]
    fn chebyshev_is_a_metric(x in finite_tensor(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = perturb(&mut rng, &x);
        let z = perturb(&mut rng, &y);
        let d = |p: &Tensor<f32>, q: &Tensor<f32>| chebyshev_distance(p, q).unwrap().value().unwrap();
        prop_assert_eq!(d(&x, &x), 0.0);
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z));
        let oracle = x.data.iter().zip(&y.data).map(|(p, q)| (*p as f64 - *q as f64).abs()).fold(0.0, f64::max);
        prop_assert_eq!(d(&x, &y), oracle);
    }

    #[test]
    fn nan_taints_the_distance(x in finite_tensor(), k: prop::sample::Index) {
        let mut y = x.clone();
        let i = k.index(y.data.len());
        y.data[i] = f32::NAN;
        prop_assert_eq!(chebyshev_distance(&x, &y).unwrap(), Distance::Tainted);
    }

    #[test]
    fn dedup_preserves_counts_and_is_idempotent(seeds in prop::collection::vec(any::<u64>(), 1..12)) {
        let c = DetectorConfig { t: 0.05, epsilon: 1e-3, ..Default::default() };
        let all: Vec<Finding> = seeds
            .iter()
            .flat_map(|&s| {
                let (a, b) = pair(s, "reordered");
                detect_pair(&a, &b, &Topology::from_meta(&a.nodes).unwrap(), &c).findings
            })
            .collect();
        let once = deduplicate(all.clone());
        prop_assert_eq!(once.iter().map(|f| f.count).sum::<usize>(), all.len());
        for f in &once {
            let max = all.iter().filter(|g| g.stage == f.stage && g.kind == f.kind).map(|g| g.distance).fold(0.0, f64::max);
            prop_assert_eq!(f.distance, max);
        }
        prop_assert_eq!(deduplicate(once.clone()), once);
    }

    #[test]
    fn report_merge_is_associative_and_commutative(s1: u64, s2: u64, s3: u64) {
        let c = DetectorConfig { t: 0.05, epsilon: 1e-3, ..Default::default() };
        let report = |s: u64| {
            let (a, b) = pair(s, "naive+relu-eq-zero");
            let (_, r) = pair(s ^ 0x9e37, "reordered");
            let mut r = r;
            r.model_id = a.model_id.clone();
            r.nodes = a.nodes.clone();
            r.fc = a.fc.clone();
            r.bc = a.bc.clone();
            r.lc = a.lc.clone();
            InconsistencyReport::from_models(c, [detect_model(&[a, b, r], &c).unwrap()])
        };
        let (x, y, z) = (report(s1), report(s2), report(s3));
        let left = x.clone().merge(y.clone()).merge(z.clone());
        let right = x.clone().merge(y.clone().merge(z.clone()));
        prop_assert_eq!(&left, &right);
        prop_assert_eq!(&x.clone().merge(y.clone()), &y.merge(x));
    }
}

#[test]
fn synthetic_corpus_exercises_every_stage() {
    let c = DetectorConfig { t: 0.05, epsilon: 1e-3, ..Default::default() };
    let mut seen = std::collections::BTreeSet::new();
    for s in 0..300 {
        let (a, b) = pair(s, "reordered");
        for f in detect_pair(&a, &b, &Topology::from_meta(&a.nodes).unwrap(), &c).findings {
            seen.insert(f.stage);
        }
    }
    assert_eq!(seen.len(), 3, "{seen:?}");
}
