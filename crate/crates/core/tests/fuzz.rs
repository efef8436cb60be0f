mod common;

use std::collections::BTreeSet;

use num_rational::Ratio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use archfuzz::fuzz::stats::{probabilities, score};
use archfuzz::fuzz::{
    assign_layers, generate_cell_dag, generate_chain_dag, generate_models, GenerationConfig, LayerUsageStats, Role,
    Skeleton, Template,
};
use archfuzz::ir::{infer_shapes, validate_dag, validate_graph, Arity, Dag, LayerKind, LossKind, ModelSpec};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn selection_probabilities_are_exact() {
    let p = probabilities(&[0, 1, 3]);
    let want = [Ratio::new(4i64, 7), Ratio::new(2, 7), Ratio::new(1, 7)];
    for (got, w) in p.iter().zip(want) {
        let w = *w.numer() as f64 / *w.denom() as f64;
        assert!((got - w).abs() < 1e-15);
    }
    assert_eq!(score(3), 0.25);
    let uniform = probabilities(&[0; 6]);
    assert!(uniform.iter().all(|&q| (q - 1.0 / 6.0).abs() < 1e-15));
}

#[test]
fn class_probabilities_sum_to_one() {
    let cfg = GenerationConfig::default();
    let mut stats = LayerUsageStats::new(cfg.registry(), LossKind::ALL.iter().copied());
    let mut r = rng(1);
    for _ in 0..200 {
        stats.select_layer(Arity::Si, &mut r).unwrap();
        stats.select_layer(Arity::Mi, &mut r).unwrap();
    }
    for arity in [Arity::Si, Arity::Mi] {
        let total: f64 = stats.class_probabilities(arity).iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

fn skeleton_is_valid(s: &Skeleton) -> bool {
    validate_dag(&s.dag).is_empty() && s.dag.sources().len() == 1 && s.dag.sinks().len() == 1
}

#[test]
fn single_vertex_skeleton_gets_a_head() {
    let cfg = GenerationConfig::default();
    let s = generate_chain_dag(1, 0.3, &mut rng(0));
    let mut stats = LayerUsageStats::new(cfg.registry(), cfg.losses.iter().copied());
    let g = assign_layers(&s, &cfg, LossKind::MeanSquaredError, &mut stats, &mut rng(0)).unwrap();
    assert!(g.len() >= 2);
    assert_eq!(g.nodes[g.source()].kind(), LayerKind::Input);
    assert_eq!(g.nodes[g.sink()].shape(), &cfg.output_shape);
}

#[test]
fn diamond_merge_inputs_share_a_shape() {
    let cfg = GenerationConfig::default();
    let s = Skeleton {
        template: Template::Chain,
        dag: Dag::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]),
        roles: vec![Role::Input, Role::Plain, Role::Plain, Role::Plain],
    };
    for seed in 0..20 {
        let mut stats = LayerUsageStats::new(cfg.registry(), cfg.losses.iter().copied());
        let Ok(g) = assign_layers(&s, &cfg, LossKind::MeanSquaredError, &mut stats, &mut rng(seed)) else { continue };
        let merges: Vec<_> = g.nodes.iter().filter(|n| n.kind().arity() == Arity::Mi).collect();
        assert_eq!(merges.len(), 1, "seed {seed}");
        let shapes: BTreeSet<_> = merges[0].inputs.iter().map(|&p| g.nodes[p].shape().clone()).collect();
        assert_eq!(shapes.len(), 1, "seed {seed}");
    }
}

#[test]
fn fifty_default_models_are_valid() {
    let g = generate_models(&GenerationConfig::default()).unwrap();
    assert_eq!(g.specs.len(), 50);
    for s in &g.specs {
        s.validate().unwrap();
        assert_eq!(s.input_shape().dims(), &[8, 8, 3]);
        assert_eq!(s.output_shape().dims(), &[10]);
    }
}

#[test]
fn generation_is_deterministic_to_the_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenerationConfig { n_models: 3, seed: 99, ..Default::default() };
    let (a, b) = (generate_models(&cfg).unwrap(), generate_models(&cfg).unwrap());
    for (x, y) in a.specs.iter().zip(&b.specs) {
        x.write_dir(&dir.path().join("a")).unwrap();
        y.write_dir(&dir.path().join("b")).unwrap();
        for entry in std::fs::read_dir(dir.path().join("a")).unwrap() {
            let name = entry.unwrap().file_name();
            let fa = std::fs::read(dir.path().join("a").join(&name)).unwrap();
            let fb = std::fs::read(dir.path().join("b").join(&name)).unwrap();
            assert_eq!(fa, fb, "{name:?}");
        }
    }
    assert_eq!(a.records, b.records);
}

#[test]
fn model_directories_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for s in common::generated(10, 2) {
        let p = dir.path().join(&s.model_id);
        s.write_dir(&p).unwrap();
        assert_eq!(ModelSpec::read_dir(&p).unwrap(), s);
    }
}

#[test]
fn coverage_is_monotone_in_model_count() {
    let mut last: BTreeSet<LayerKind> = BTreeSet::new();
    for n in [5, 10, 20, 40] {
        let cfg = GenerationConfig { n_models: n, seed: 8, ..Default::default() };
        let used: BTreeSet<LayerKind> =
            generate_models(&cfg).unwrap().specs.iter().flat_map(|s| s.graph.kinds()).collect();
        assert!(last.is_subset(&used));
        last = used;
    }
}

#[test]
fn excluded_kinds_never_appear() {
    let mut cfg = GenerationConfig { n_models: 40, seed: 4, ..Default::default() };
    cfg.excluded_kinds.extend([LayerKind::Conv2D, LayerKind::LSTM, LayerKind::Add]);
    for s in generate_models(&cfg).unwrap().specs {
        for k in [LayerKind::Conv2D, LayerKind::LSTM, LayerKind::Add, LayerKind::Dropout, LayerKind::GaussianNoise] {
            assert!(!s.graph.kinds().contains(&k), "{} uses {k}", s.model_id);
        }
    }
}

#[test]
fn empty_loss_list_is_rejected() {
    let cfg = GenerationConfig { losses: vec![], ..Default::default() };
    assert!(generate_models(&cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chain_skeletons_are_valid(n_v in 1usize..=30, p in 0.0f64..=1.0, seed: u64) {
        let s = generate_chain_dag(n_v, p, &mut rng(seed));
        prop_assert_eq!(s.len(), n_v);
        prop_assert!(skeleton_is_valid(&s));
    }

    #[test]
    fn cell_skeletons_are_valid(n_c in 1usize..=5, seed: u64) {
        let s = generate_cell_dag(n_c, &mut rng(seed));
        prop_assert!(skeleton_is_valid(&s));
        prop_assert_eq!(s.count(Role::Reduction), n_c - 1);
    }

    #[test]
    fn topological_order_is_a_valid_permutation(n in 1usize..25, edges in prop::collection::vec((0usize..25, 0usize..25), 0..60)) {
        let edges: Vec<(usize, usize)> = edges.into_iter().filter(|&(a, b)| a < n && b < n && a < b).collect();
        let dag = Dag::from_edges(n, &edges);
        let order = dag.topological_order().unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        let pos: Vec<usize> = {
            let mut p = vec![0; n];
            for (k, &v) in order.iter().enumerate() { p[v] = k; }
            p
        };
        for (a, b) in dag.edges() {
            prop_assert!(pos[a] < pos[b]);
        }
        prop_assert_eq!(dag.topological_order().unwrap(), order);
    }

    #[test]
    fn generated_graphs_validate_and_reinfer(seed in 0u64..10_000) {
        let cfg = GenerationConfig { n_models: 1, seed, ..Default::default() };
        let spec = &generate_models(&cfg).unwrap().specs[0];
        prop_assert!(validate_graph(&spec.graph).is_empty());
        let again = infer_shapes(&spec.graph, spec.input_shape()).unwrap();
        prop_assert_eq!(&again, &spec.graph);
    }
}
