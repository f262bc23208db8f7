//! UCT planning over the deterministic environment model, with two-stage
//! action sampling and the distillation loss that pulls network Q-values
//! toward search Q-values.
//!
//! The environment itself is the model: simulation steps clones of the real
//! state. Actions are sampled in two stages — first a node or an edge, then
//! the remaining dimension — with UCT statistics kept per stage. Leaves
//! bootstrap from the network's masked max-Q; backups keep running means of
//! discounted returns. Search is fully deterministic: ties break by higher
//! value, then lower index.

use crate::error::{Error, Result};
use crate::learning::Environment;
use crate::graph_net::masked_argmax;
use crate::scene::SceneGraph;
use std::collections::HashMap;

/// Search statistics for one state in the tree.
struct SearchNode<E> {
    env: E,
    mask: Vec<bool>,
    /// Network Q-values, the priors for unvisited actions.
    prior: Vec<f64>,
    /// Stage-one stats per element: (visits, running mean).
    stats1: Vec<(u32, f64)>,
    /// Stage-two stats per flat action.
    stats2: Vec<(u32, f64)>,
    /// Total simulations that passed through this node.
    total: u32,
    terminal: bool,
    n_nodes: usize,
}

/// Result of one search from a root state.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Flat index of the action to play.
    pub chosen: usize,
    /// Valid flat indices at the root, ascending.
    pub valid: Vec<usize>,
    /// Search-improved Q per valid action (prior where unvisited).
    pub root_q: Vec<f64>,
    /// Simulation visits per valid action.
    pub visits: Vec<u32>,
}

fn uct(value: f64, visits: u32, parent_total: u32, c: f64) -> f64 {
    value + c * ((1.0 + parent_total as f64).ln() / (1.0 + visits as f64)).sqrt()
}

impl<E: Environment> SearchNode<E> {
    fn new<F>(env: E, evaluate: &F) -> Result<(Self, f64)>
    where
        F: Fn(&SceneGraph) -> Result<Vec<f64>>,
    {
        let terminal = env.is_terminal();
        let (mask, prior) = if terminal {
            (Vec::new(), Vec::new())
        } else {
            let mask = env.valid_mask();
            let prior = evaluate(env.observation())?;
            if prior.len() != mask.len() {
                return Err(Error::Contract("evaluator output does not match mask".into()));
            }
            (mask, prior)
        };
        let value = if terminal {
            0.0
        } else {
            prior
                .iter()
                .zip(&mask)
                .filter(|(_, &ok)| ok)
                .map(|(&q, _)| q)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let n_nodes = env.observation().len();
        let space = env.space();
        let elements = space.element_count(n_nodes);
        let mut node = SearchNode {
            env,
            mask,
            prior,
            stats1: vec![(0, f64::NEG_INFINITY); elements],
            stats2: Vec::new(),
            total: 0,
            terminal,
            n_nodes,
        };
        if !terminal {
            node.stats2 = node.prior.iter().map(|&q| (0, q)).collect();
            // Stage-one priors: best sub-action under each element.
            for el in 0..elements {
                let arity = space.element_arity(el, n_nodes);
                let mut best = f64::NEG_INFINITY;
                for sub in 0..arity {
                    let flat = space.flat_of(el, sub, n_nodes);
                    if node.mask[flat] {
                        best = best.max(node.prior[flat]);
                    }
                }
                node.stats1[el] = (0, best);
            }
        }
        Ok((node, value))
    }

    /// Two-stage UCT: element by stage-one stats, then sub-action by
    /// stage-two stats local to that element.
    fn select(&self, c: f64) -> usize {
        let space = self.env.space();
        let mut best_el: Option<(usize, f64)> = None;
        for (el, &(n1, q1)) in self.stats1.iter().enumerate() {
            if q1 == f64::NEG_INFINITY {
                continue; // no valid sub-action under this element
            }
            let score = uct(q1, n1, self.total, c);
            if best_el.is_none_or(|(_, b)| score > b) {
                best_el = Some((el, score));
            }
        }
        let (el, _) = best_el.expect("select on a node with no valid actions");
        let el_visits = self.stats1[el].0;
        let arity = space.element_arity(el, self.n_nodes);
        let mut best: Option<(usize, f64)> = None;
        for sub in 0..arity {
            let flat = space.flat_of(el, sub, self.n_nodes);
            if !self.mask[flat] {
                continue;
            }
            let (n2, q2) = self.stats2[flat];
            let score = uct(q2, n2, el_visits, c);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((flat, score));
            }
        }
        best.expect("element had no valid sub-action").0
    }

    fn element_of(&self, flat: usize) -> usize {
        let space = self.env.space();
        let per_node = space.per_node();
        let per_edge = space.per_edge();
        match (per_node, per_edge) {
            (0, pe) => flat / pe,
            (pn, 0) => flat / pn,
            (pn, pe) => {
                let node_section = self.n_nodes * pn;
                if flat < node_section {
                    flat / pn
                } else {
                    self.n_nodes + (flat - node_section) / pe
                }
            }
        }
    }

    fn record(&mut self, flat: usize, ret: f64) {
        self.total += 1;
        let el = self.element_of(flat);
        let (n1, q1) = self.stats1[el];
        let q1 = if n1 == 0 { ret } else { q1 + (ret - q1) / (n1 + 1) as f64 };
        self.stats1[el] = (n1 + 1, q1);
        let (n2, q2) = self.stats2[flat];
        let q2 = if n2 == 0 { ret } else { q2 + (ret - q2) / (n2 + 1) as f64 };
        self.stats2[flat] = (n2 + 1, q2);
    }
}

/// Run `budget` simulations from the root environment state.
///
/// Budget 0 degenerates to the evaluator's greedy action.
pub fn mcts_search<E, F>(
    root_env: &E,
    evaluate: &F,
    budget: u32,
    c_uct: f64,
    gamma: f64,
) -> Result<SearchOutcome>
where
    E: Environment,
    F: Fn(&SceneGraph) -> Result<Vec<f64>>,
{
    if root_env.is_terminal() {
        return Err(Error::Contract("search from a terminal state".into()));
    }
    let (root, _) = SearchNode::new(root_env.clone(), evaluate)?;
    let mut nodes: Vec<SearchNode<E>> = vec![root];
    // (node, flat action) -> (child, reward, terminal)
    let mut children: HashMap<(usize, usize), (usize, f64)> = HashMap::new();

    for _ in 0..budget {
        let mut path: Vec<(usize, usize, f64)> = Vec::new();
        let mut cursor = 0usize;
        let tail_value;
        loop {
            if nodes[cursor].terminal {
                tail_value = 0.0;
                break;
            }
            let flat = nodes[cursor].select(c_uct);
            if let Some(&(child, reward)) = children.get(&(cursor, flat)) {
                path.push((cursor, flat, reward));
                cursor = child;
                continue;
            }
            // Expand.
            let mut env = nodes[cursor].env.clone();
            let outcome = env.step(flat)?;
            let (node, leaf_value) = SearchNode::new(env, evaluate)?;
            let child_idx = nodes.len();
            nodes.push(node);
            children.insert((cursor, flat), (child_idx, outcome.reward));
            path.push((cursor, flat, outcome.reward));
            tail_value = if outcome.terminal { 0.0 } else { leaf_value };
            break;
        }
        let mut ret = tail_value;
        for &(node_idx, flat, reward) in path.iter().rev() {
            ret = reward + gamma * ret;
            nodes[node_idx].record(flat, ret);
        }
    }

    let root = &nodes[0];
    let valid: Vec<usize> =
        root.mask.iter().enumerate().filter_map(|(i, &ok)| ok.then_some(i)).collect();
    if valid.is_empty() {
        return Err(Error::Contract("no valid actions at the search root".into()));
    }
    let root_q: Vec<f64> = valid.iter().map(|&i| root.stats2[i].1).collect();
    let visits: Vec<u32> = valid.iter().map(|&i| root.stats2[i].0).collect();
    let chosen = if budget == 0 {
        masked_argmax(&root.prior, &root.mask)
            .ok_or_else(|| Error::Contract("no valid actions".into()))?
    } else {
        // Highest visit count; ties by higher value, then lower index.
        let mut best = 0usize;
        for i in 1..valid.len() {
            let better = visits[i] > visits[best]
                || (visits[i] == visits[best] && root_q[i] > root_q[best]);
            if better {
                best = i;
            }
        }
        valid[best]
    };
    Ok(SearchOutcome { chosen, valid, root_q, visits })
}

fn softmax(xs: &[f64], tau: f64) -> Vec<f64> {
    let max = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = xs.iter().map(|&x| ((x - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy between softmaxed search Q-values (teacher) and softmaxed
/// network Q-values, with the gradient w.r.t. the network values:
/// `(softmax(net/τ) − softmax(search/τ)) / τ`.
pub fn ce_distillation_grad(net_q: &[f64], search_q: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    if net_q.len() != search_q.len() {
        return Err(Error::Contract(format!(
            "distillation length mismatch: {} vs {}",
            net_q.len(),
            search_q.len()
        )));
    }
    if net_q.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let teacher = softmax(search_q, tau);
    let student = softmax(net_q, tau);
    let loss = -teacher
        .iter()
        .zip(&student)
        .map(|(&p, &q)| p * q.max(1e-300).ln())
        .sum::<f64>();
    let grad = student.iter().zip(&teacher).map(|(&q, &p)| (q - p) / tau).collect();
    Ok((loss, grad))
}
