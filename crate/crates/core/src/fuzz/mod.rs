//! Model generation: structure templates, fitness-proportionate layer
//! selection and materialization into model specs.

pub mod assign;
pub mod config;
pub mod data;
pub mod params;
pub mod skeleton;
pub mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use assign::assign_layers;
pub use config::{DataConfig, GenerationConfig, SchemaBias};
pub use data::Dataset;
pub use skeleton::{generate_cell_dag, generate_chain_dag, Role, Skeleton, Template};
pub use stats::LayerUsageStats;

use crate::engine::{run_training_step, Backend};
use crate::ir::{Arity, ModelSpec};
use crate::tensor::Tensor;

/// Consecutive failed skeletons tolerated before generation gives up.
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error("no selectable layer kinds in the {0:?} class")]
    EmptyClass(Arity),
    #[error("no loss kinds enabled")]
    NoLoss,
    #[error("generation retry: {0}")]
    Retry(String),
    #[error("gave up after {0} consecutive failed skeletons")]
    Exhausted(usize),
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
}

/// Draws one skeleton from either template.
pub fn random_skeleton<R: Rng + ?Sized>(cfg: &GenerationConfig, rng: &mut R) -> Skeleton {
    if rng.gen_bool(cfg.p_chain) {
        let n_v = rng.gen_range(1..=cfg.max_vertices);
        generate_chain_dag(n_v, cfg.p_skip, rng)
    } else {
        let n_c = rng.gen_range(1..=cfg.max_cells);
        generate_cell_dag(n_c, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: String,
    pub seed: u64,
    pub template: Template,
    pub retries: usize,
}

/// Output of a generation run.
#[derive(Debug, Clone)]
pub struct Generation {
    pub specs: Vec<ModelSpec>,
    pub records: Vec<ModelRecord>,
    pub stats: LayerUsageStats,
}

/// Largest finite magnitude among the outputs, loss gradient and backward
/// traces of one honest training step.
pub fn peak_magnitude(spec: &ModelSpec) -> f64 {
    let r = run_training_step(spec, Backend::NAIVE);
    let finite_max =
        |t: &Tensor<f32>| t.data.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, v| m.max(v.abs() as f64));
    let mut m = r.loss_gradient.as_ref().map_or(0.0, finite_max);
    for t in r.fc.values().chain(r.bc.values()) {
        m = m.max(finite_max(t));
    }
    m
}

pub fn model_id(index: usize) -> String {
    format!("m{index:05}")
}

/// Generates `cfg.n_models` specs. Output is a pure function of `cfg`.
pub fn generate_models(cfg: &GenerationConfig) -> Result<Generation, FuzzError> {
    cfg.validate().map_err(FuzzError::Config)?;
    let dataset = match &cfg.data.dataset {
        Some(p) => {
            let d = Dataset::load(p)?;
            if d.example_shape != cfg.input_shape {
                return Err(FuzzError::Data(format!(
                    "dataset examples are {}, input shape is {}",
                    d.example_shape, cfg.input_shape
                )));
            }
            Some(d)
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = LayerUsageStats::new(cfg.registry(), cfg.losses.iter().copied());
    let mut specs = Vec::with_capacity(cfg.n_models);
    let mut records = Vec::with_capacity(cfg.n_models);
    for index in 0..cfg.n_models {
        let seed: u64 = rng.gen();
        let loss = stats.select_loss(&mut rng)?;
        let input = match &dataset {
            Some(d) => d.batch(index * cfg.batch_size, cfg.batch_size),
            None => data::synthetic_input(&cfg.data, &cfg.input_shape, cfg.batch_size, seed),
        };
        let labels = data::labels(loss, &cfg.output_shape, cfg.batch_size, seed);
        let mut retries = 0;
        let (skeleton, spec) = loop {
            let snapshot = stats.clone();
            let skeleton = random_skeleton(cfg, &mut rng);
            let outcome = assign_layers(&skeleton, cfg, loss, &mut stats, &mut rng).and_then(|graph| {
                let spec = ModelSpec {
                    model_id: model_id(index),
                    seed,
                    batch_size: cfg.batch_size,
                    loss,
                    weights: data::init_weights(&graph, seed),
                    labels: labels.clone(),
                    graph,
                    input: input.clone(),
                };
                match cfg.max_magnitude {
                    Some(bound) if peak_magnitude(&spec) > bound => {
                        Err(FuzzError::Retry(format!("magnitude exceeds {bound}")))
                    }
                    _ => Ok(spec),
                }
            });
            match outcome {
                Ok(spec) => break (skeleton, spec),
                Err(FuzzError::Retry(_)) => {
                    stats = snapshot;
                    retries += 1;
                    if retries >= MAX_RETRIES {
                        return Err(FuzzError::Exhausted(retries));
                    }
                }
                Err(e) => return Err(e),
            }
        };
        records.push(ModelRecord { model_id: spec.model_id.clone(), seed, template: skeleton.template, retries });
        specs.push(spec);
    }
    Ok(Generation { specs, records, stats })
}
