//! Structure templates: untyped DAG skeletons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ir::Dag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The model input vertex.
    Input,
    Plain,
    /// Single downsampling vertex between two cells.
    Reduction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Chain,
    Cell,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub template: Template,
    pub dag: Dag,
    pub roles: Vec<Role>,
}

impl Skeleton {
    pub fn len(&self) -> usize {
        self.dag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dag.is_empty()
    }

    pub fn count(&self, role: Role) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }
}

/// Backbone path over `n_v` vertices plus independent forward skips.
pub fn generate_chain_dag<R: Rng + ?Sized>(n_v: usize, p_skip: f64, rng: &mut R) -> Skeleton {
    assert!(n_v >= 1, "chain needs at least one vertex");
    let mut dag = Dag::new(n_v);
    for j in 1..n_v {
        dag.add_edge(j - 1, j);
        for i in 0..j.saturating_sub(1) {
            if rng.gen_bool(p_skip) {
                dag.add_edge(i, j);
            }
        }
    }
    let mut roles = vec![Role::Plain; n_v];
    roles[0] = Role::Input;
    Skeleton { template: Template::Chain, dag, roles }
}

/// Random cell of `k` vertices over the order 0..k, repaired so that vertex
/// 0 is the only entry and `k-1` the only exit.
pub fn random_cell<R: Rng + ?Sized>(k: usize, p_edge: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut has_in = vec![false; k];
    let mut has_out = vec![false; k];
    let mut edges = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if rng.gen_bool(p_edge) {
                edges.push((i, j));
                has_out[i] = true;
                has_in[j] = true;
            }
        }
    }
    for j in 1..k {
        if !has_in[j] {
            edges.push((0, j));
            has_out[0] = true;
        }
    }
    for i in 0..k.saturating_sub(1) {
        if !has_out[i] {
            edges.push((i, k - 1));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Input vertex, then `n_c` random cells of 2..=6 vertices separated by
/// single reduction vertices. The last cell's exit is the sink.
pub fn generate_cell_dag<R: Rng + ?Sized>(n_c: usize, rng: &mut R) -> Skeleton {
    assert!(n_c >= 1, "cell template needs at least one cell");
    let mut dag = Dag::new(1);
    let mut roles = vec![Role::Input];
    let mut prev = 0;
    for c in 0..n_c {
        if c > 0 {
            let r = dag.add_node();
            roles.push(Role::Reduction);
            dag.add_edge(prev, r);
            prev = r;
        }
        let k = rng.gen_range(2..=6);
        let base = dag.len();
        for _ in 0..k {
            dag.add_node();
            roles.push(Role::Plain);
        }
        dag.add_edge(prev, base);
        for (u, v) in random_cell(k, 0.5, rng) {
            dag.add_edge(base + u, base + v);
        }
        prev = base + k - 1;
    }
    Skeleton { template: Template::Cell, dag, roles }
}
