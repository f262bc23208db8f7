//! Message-passing Q-network over scene graphs, written from scratch.
//!
//! Architecture: an encoder (one two-layer MLP for nodes, one for edges),
//! three processor blocks, and linear decoder heads. Each block updates every
//! edge from `[edge, source, destination]` latents, then every node from
//! `[node, sum of incoming updated edges]`. Q-values come out per node and/or
//! per edge depending on the head widths, matching an
//! [`ActionSpace`](crate::actions::ActionSpace) flat layout.
//!
//! Parameters live in one flat `Vec<f64>` with a deterministic layout, which
//! keeps the optimizer, checkpointing, and finite-difference checks trivial.
//! Backpropagation is hand-derived; the test suite holds it to central
//! finite differences at 1e-5 relative error.

use crate::actions::ActionSpace;
use crate::error::{Error, Result};
use crate::scene::{enumerate_edges, SceneGraph};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Raw node features: x/16, y/16, w/3.5, h/0.7, kind one-hot (5), active, sticky.
pub const NODE_FEATURES: usize = 11;
/// Raw edge features: Δx/16, Δy/16 from source to destination center.
pub const EDGE_FEATURES: usize = 2;
/// Message-passing rounds, each with its own parameters.
pub const PROCESSOR_BLOCKS: usize = 3;

const POSITION_SCALE: f64 = 16.0;
const WIDTH_SCALE: f64 = 3.5;
const HEIGHT_SCALE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphNetConfig {
    pub latent: usize,
    pub hidden: usize,
    pub node_out: usize,
    pub edge_out: usize,
}

impl GraphNetConfig {
    /// Head widths demanded by an action space, with the given body size.
    pub fn for_space(space: ActionSpace, latent: usize, hidden: usize) -> Self {
        GraphNetConfig {
            latent,
            hidden,
            node_out: space.per_node(),
            edge_out: space.per_edge(),
        }
    }

    /// Default body size: two-layer MLPs of width 64, latent 64.
    pub fn default_for_space(space: ActionSpace) -> Self {
        Self::for_space(space, 64, 64)
    }
}

/// One linear layer's slice of the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct LinearSpec {
    rows: usize,
    cols: usize,
    w_off: usize,
    b_off: usize,
}

impl LinearSpec {
    fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

/// Indices of the linears in layout order.
mod lin {
    pub const NODE_ENC_1: usize = 0;
    pub const NODE_ENC_2: usize = 1;
    pub const EDGE_ENC_1: usize = 2;
    pub const EDGE_ENC_2: usize = 3;
    /// First of 4 per-block linears: edge1, edge2, node1, node2.
    pub const BLOCK_BASE: usize = 4;
    pub const PER_BLOCK: usize = 4;
    pub fn node_head(blocks: usize) -> usize {
        BLOCK_BASE + blocks * PER_BLOCK
    }
    pub fn edge_head(blocks: usize) -> usize {
        node_head(blocks) + 1
    }
}

fn build_layout(cfg: &GraphNetConfig) -> Vec<LinearSpec> {
    let mut specs = Vec::new();
    let mut off = 0;
    let mut push = |rows: usize, cols: usize| {
        let spec = LinearSpec { rows, cols, w_off: off, b_off: off + rows * cols };
        off += spec.len();
        specs.push(spec);
    };
    push(cfg.hidden, NODE_FEATURES);
    push(cfg.latent, cfg.hidden);
    push(cfg.hidden, EDGE_FEATURES);
    push(cfg.latent, cfg.hidden);
    for _ in 0..PROCESSOR_BLOCKS {
        push(cfg.hidden, 3 * cfg.latent);
        push(cfg.latent, cfg.hidden);
        push(cfg.hidden, 2 * cfg.latent);
        push(cfg.latent, cfg.hidden);
    }
    push(cfg.node_out, cfg.latent);
    push(cfg.edge_out, cfg.latent);
    specs
}

/// Network weights: a config plus one flat array in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNetParams {
    pub config: GraphNetConfig,
    pub data: Vec<f64>,
}

impl GraphNetParams {
    pub fn zeros(config: GraphNetConfig) -> Self {
        let total = build_layout(&config).iter().map(|s| s.len()).sum();
        GraphNetParams { config, data: vec![0.0; total] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Named parameter blocks (weights and biases separately), for
    /// block-by-block gradient audits.
    pub fn block_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let names = [
            "node_enc_1",
            "node_enc_2",
            "edge_enc_1",
            "edge_enc_2",
            "block0_edge_1",
            "block0_edge_2",
            "block0_node_1",
            "block0_node_2",
            "block1_edge_1",
            "block1_edge_2",
            "block1_node_1",
            "block1_node_2",
            "block2_edge_1",
            "block2_edge_2",
            "block2_node_1",
            "block2_node_2",
            "node_head",
            "edge_head",
        ];
        build_layout(&self.config)
            .iter()
            .zip(names)
            .flat_map(|(spec, name)| {
                [
                    (format!("{name}.w"), spec.w_off..spec.b_off),
                    (format!("{name}.b"), spec.b_off..spec.b_off + spec.rows),
                ]
            })
            .filter(|(_, r)| !r.is_empty())
            .collect()
    }
}

/// Deterministic Glorot-uniform initialization, biases zero.
pub fn init_params(seed: u64, config: GraphNetConfig) -> GraphNetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = GraphNetParams::zeros(config);
    for spec in build_layout(&config) {
        let bound = (6.0 / (spec.cols + spec.rows) as f64).sqrt();
        for i in 0..spec.rows * spec.cols {
            params.data[spec.w_off + i] = rng.gen_range(-bound..=bound);
        }
    }
    params
}

/// Per-node and per-edge Q-values for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct QOutput {
    /// Row-major `n_nodes × node_out`.
    pub node_q: Vec<f64>,
    /// Row-major `n_edges × edge_out`, edges in [`enumerate_edges`] order.
    pub edge_q: Vec<f64>,
}

impl QOutput {
    /// Flat action-value vector: node section then edge section, matching the
    /// layout in [`crate::actions`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.node_q.len() + self.edge_q.len());
        out.extend_from_slice(&self.node_q);
        out.extend_from_slice(&self.edge_q);
        out
    }
}


/// Everything the backward pass needs from a forward pass. Reusable: a long
/// training loop keeps one around and refills it every step.
#[derive(Default)]
pub struct ForwardTrace {
    pairs: Vec<(usize, usize)>,
    node_feats: Vec<f64>,
    edge_feats: Vec<f64>,
    /// Latents entering each block: index 0 is the encoder output,
    /// index `PROCESSOR_BLOCKS` is the decoder input.
    node_lats: Vec<Vec<f64>>,
    edge_lats: Vec<Vec<f64>>,
    /// Post-ReLU hidden activations.
    enc_node_h: Vec<f64>,
    enc_edge_h: Vec<f64>,
    block_edge_h: Vec<Vec<f64>>,
    block_node_h: Vec<Vec<f64>>,
    /// Aggregated incoming messages per block (node-MLP input halves).
    block_agg: Vec<Vec<f64>>,
    /// Scratch: concatenated MLP inputs.
    edge_in: Vec<f64>,
    node_in: Vec<f64>,
}

fn resize_zeroed(buf: &mut Vec<f64>, len: usize) {
    buf.clear();
    buf.resize(len, 0.0);
}

fn affine(w: &[f64], b: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    // Four-lane accumulation so the reduction vectorizes.
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = [0.0f64; 4];
        let mut rc = row.chunks_exact(4);
        let mut xc = x.chunks_exact(4);
        for (r4, x4) in (&mut rc).zip(&mut xc) {
            acc[0] += r4[0] * x4[0];
            acc[1] += r4[1] * x4[1];
            acc[2] += r4[2] * x4[2];
            acc[3] += r4[3] * x4[3];
        }
        let tail: f64 =
            rc.remainder().iter().zip(xc.remainder()).map(|(a, b)| a * b).sum();
        y[r] = b[r] + ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
    }
}

fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

struct ParamView<'a> {
    specs: Vec<LinearSpec>,
    data: &'a [f64],
}

impl<'a> ParamView<'a> {
    fn new(p: &'a GraphNetParams) -> Self {
        ParamView { specs: build_layout(&p.config), data: &p.data }
    }

    fn wb(&self, idx: usize) -> (&'a [f64], &'a [f64], usize, usize) {
        let s = self.specs[idx];
        (
            &self.data[s.w_off..s.w_off + s.rows * s.cols],
            &self.data[s.b_off..s.b_off + s.rows],
            s.rows,
            s.cols,
        )
    }
}

fn check_finite(stage: &'static str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { stage })
    }
}

/// Apply one two-layer MLP (linear, ReLU, linear) to `count` rows of `input`.
fn mlp_rows(
    view: &ParamView,
    l1: usize,
    l2: usize,
    count: usize,
    input: &[f64],
    hidden_out: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    let (w1, b1, h, in_dim) = view.wb(l1);
    let (w2, b2, out_dim, _) = view.wb(l2);
    hidden_out.resize(count * h, 0.0);
    out.resize(count * out_dim, 0.0);
    for i in 0..count {
        let x = &input[i * in_dim..(i + 1) * in_dim];
        let hid = &mut hidden_out[i * h..(i + 1) * h];
        affine(w1, b1, h, in_dim, x, hid);
        relu_inplace(hid);
        affine(w2, b2, out_dim, h, hid, &mut out[i * out_dim..(i + 1) * out_dim]);
    }
}

fn encode_features_into(
    g: &SceneGraph,
    node_feats: &mut Vec<f64>,
    edge_feats: &mut Vec<f64>,
    pairs: &mut Vec<(usize, usize)>,
) {
    let n = g.len();
    resize_zeroed(node_feats, n * NODE_FEATURES);
    for (i, node) in g.nodes.iter().enumerate() {
        let f = &mut node_feats[i * NODE_FEATURES..(i + 1) * NODE_FEATURES];
        f[0] = node.x / POSITION_SCALE;
        f[1] = node.y / POSITION_SCALE;
        f[2] = node.width / WIDTH_SCALE;
        f[3] = node.height / HEIGHT_SCALE;
        f[4 + node.kind.index()] = 1.0;
        f[9] = node.active as u8 as f64;
        f[10] = node.sticky as u8 as f64;
    }
    let edges = enumerate_edges(g);
    pairs.clear();
    pairs.extend(
        edges
            .iter()
            .map(|&(u, v)| (g.node_index(u).unwrap(), g.node_index(v).unwrap())),
    );
    resize_zeroed(edge_feats, pairs.len() * EDGE_FEATURES);
    for (e, &(s, d)) in pairs.iter().enumerate() {
        let src = &g.nodes[s];
        let dst = &g.nodes[d];
        edge_feats[e * EDGE_FEATURES] = (dst.x - src.x) / POSITION_SCALE;
        edge_feats[e * EDGE_FEATURES + 1] = (dst.y - src.y) / POSITION_SCALE;
    }
}

/// Forward pass into a reusable trace; Q-values land in `node_q`/`edge_q`.
pub fn forward_traced_into(
    params: &GraphNetParams,
    g: &SceneGraph,
    trace: &mut ForwardTrace,
    node_q: &mut Vec<f64>,
    edge_q: &mut Vec<f64>,
) -> Result<()> {
    let cfg = &params.config;
    let view = ParamView::new(params);
    let n = g.len();
    encode_features_into(g, &mut trace.node_feats, &mut trace.edge_feats, &mut trace.pairs);
    let m = trace.pairs.len();
    let lat = cfg.latent;

    trace.node_lats.resize_with(PROCESSOR_BLOCKS + 1, Vec::new);
    trace.edge_lats.resize_with(PROCESSOR_BLOCKS + 1, Vec::new);
    trace.block_edge_h.resize_with(PROCESSOR_BLOCKS, Vec::new);
    trace.block_node_h.resize_with(PROCESSOR_BLOCKS, Vec::new);
    trace.block_agg.resize_with(PROCESSOR_BLOCKS, Vec::new);

    {
        let (node_lat, rest) = trace.node_lats.split_first_mut().unwrap();
        let _ = rest;
        mlp_rows(
            &view,
            lin::NODE_ENC_1,
            lin::NODE_ENC_2,
            n,
            &trace.node_feats,
            &mut trace.enc_node_h,
            node_lat,
        );
    }
    {
        let (edge_lat, _) = trace.edge_lats.split_first_mut().unwrap();
        mlp_rows(
            &view,
            lin::EDGE_ENC_1,
            lin::EDGE_ENC_2,
            m,
            &trace.edge_feats,
            &mut trace.enc_edge_h,
            edge_lat,
        );
    }
    check_finite("encoder", &trace.node_lats[0])?;
    check_finite("encoder", &trace.edge_lats[0])?;

    for b in 0..PROCESSOR_BLOCKS {
        let base = lin::BLOCK_BASE + b * lin::PER_BLOCK;

        // Edge update from [edge, source, destination].
        resize_zeroed(&mut trace.edge_in, m * 3 * lat);
        {
            let nodes_in = &trace.node_lats[b];
            let edges_in = &trace.edge_lats[b];
            for (e, &(s, d)) in trace.pairs.iter().enumerate() {
                let row = &mut trace.edge_in[e * 3 * lat..(e + 1) * 3 * lat];
                row[..lat].copy_from_slice(&edges_in[e * lat..(e + 1) * lat]);
                row[lat..2 * lat].copy_from_slice(&nodes_in[s * lat..(s + 1) * lat]);
                row[2 * lat..].copy_from_slice(&nodes_in[d * lat..(d + 1) * lat]);
            }
        }
        {
            let (head, tail) = trace.edge_lats.split_at_mut(b + 1);
            let _ = head;
            mlp_rows(
                &view,
                base,
                base + 1,
                m,
                &trace.edge_in,
                &mut trace.block_edge_h[b],
                &mut tail[0],
            );
        }

        // Node update from [node, sum of incoming messages].
        resize_zeroed(&mut trace.block_agg[b], n * lat);
        {
            let e_out = &trace.edge_lats[b + 1];
            let agg = &mut trace.block_agg[b];
            for (e, &(_, d)) in trace.pairs.iter().enumerate() {
                let msg = &e_out[e * lat..(e + 1) * lat];
                let acc = &mut agg[d * lat..(d + 1) * lat];
                for k in 0..lat {
                    acc[k] += msg[k];
                }
            }
        }
        resize_zeroed(&mut trace.node_in, n * 2 * lat);
        {
            let nodes_in = &trace.node_lats[b];
            let agg = &trace.block_agg[b];
            for v in 0..n {
                let row = &mut trace.node_in[v * 2 * lat..(v + 1) * 2 * lat];
                row[..lat].copy_from_slice(&nodes_in[v * lat..(v + 1) * lat]);
                row[lat..].copy_from_slice(&agg[v * lat..(v + 1) * lat]);
            }
        }
        {
            let (head, tail) = trace.node_lats.split_at_mut(b + 1);
            let _ = head;
            mlp_rows(
                &view,
                base + 2,
                base + 3,
                n,
                &trace.node_in,
                &mut trace.block_node_h[b],
                &mut tail[0],
            );
        }

        check_finite("processor", &trace.edge_lats[b + 1])?;
        check_finite("processor", &trace.node_lats[b + 1])?;
    }

    let (w_nh, b_nh, node_out, _) = view.wb(lin::node_head(PROCESSOR_BLOCKS));
    let (w_eh, b_eh, edge_out, _) = view.wb(lin::edge_head(PROCESSOR_BLOCKS));
    let final_nodes = trace.node_lats.last().unwrap();
    let final_edges = trace.edge_lats.last().unwrap();
    resize_zeroed(node_q, n * node_out);
    for v in 0..n {
        affine(
            w_nh,
            b_nh,
            node_out,
            lat,
            &final_nodes[v * lat..(v + 1) * lat],
            &mut node_q[v * node_out..(v + 1) * node_out],
        );
    }
    resize_zeroed(edge_q, m * edge_out);
    for e in 0..m {
        affine(
            w_eh,
            b_eh,
            edge_out,
            lat,
            &final_edges[e * lat..(e + 1) * lat],
            &mut edge_q[e * edge_out..(e + 1) * edge_out],
        );
    }
    check_finite("decoder", node_q)?;
    check_finite("decoder", edge_q)?;
    Ok(())
}

/// Forward pass producing Q-values and a fresh backprop cache.
pub fn forward_traced(params: &GraphNetParams, g: &SceneGraph) -> Result<(QOutput, ForwardTrace)> {
    let mut trace = ForwardTrace::default();
    let mut node_q = Vec::new();
    let mut edge_q = Vec::new();
    forward_traced_into(params, g, &mut trace, &mut node_q, &mut edge_q)?;
    Ok((QOutput { node_q, edge_q }, trace))
}

/// Raw node/edge feature arrays for a graph, plus the edge endpoint indices
/// (positions into `g.nodes`) in enumeration order.
pub fn encode_features(g: &SceneGraph) -> (Vec<f64>, Vec<f64>, Vec<(usize, usize)>) {
    let mut node_feats = Vec::new();
    let mut edge_feats = Vec::new();
    let mut pairs = Vec::new();
    encode_features_into(g, &mut node_feats, &mut edge_feats, &mut pairs);
    (node_feats, edge_feats, pairs)
}

thread_local! {
    static FORWARD_SCRATCH: std::cell::RefCell<ForwardTrace> =
        std::cell::RefCell::new(ForwardTrace::default());
}

/// Forward pass without keeping the cache; scratch space is reused
/// thread-locally, so repeated evaluation does not churn the allocator.
pub fn forward(params: &GraphNetParams, g: &SceneGraph) -> Result<QOutput> {
    FORWARD_SCRATCH.with(|cell| {
        let mut trace = cell.borrow_mut();
        let mut node_q = Vec::new();
        let mut edge_q = Vec::new();
        forward_traced_into(params, g, &mut trace, &mut node_q, &mut edge_q)?;
        Ok(QOutput { node_q, edge_q })
    })
}

struct GradView<'a> {
    specs: Vec<LinearSpec>,
    data: &'a mut [f64],
}

impl<'a> GradView<'a> {
    fn accumulate_linear(&mut self, idx: usize, x: &[f64], dy: &[f64]) {
        let s = self.specs[idx];
        for r in 0..s.rows {
            let g = dy[r];
            if g == 0.0 {
                continue;
            }
            let row = &mut self.data[s.w_off + r * s.cols..s.w_off + (r + 1) * s.cols];
            for c in 0..s.cols {
                row[c] += g * x[c];
            }
            self.data[s.b_off + r] += g;
        }
    }
}

fn affine_backward_input(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    for r in 0..rows {
        let g = dy[r];
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for c in 0..cols {
            dx[c] += g * row[c];
        }
    }
}

/// Backward through one two-layer MLP for a single row. The input gradient is
/// accumulated into `dx`, parameter grads into `grads`.
#[allow(clippy::too_many_arguments)]
fn mlp_row_backward(
    view: &ParamView,
    grads: &mut GradView,
    l1: usize,
    l2: usize,
    x: &[f64],
    h_post: &[f64],
    d_out: &[f64],
    dx: &mut [f64],
    scratch: &mut Vec<f64>,
) {
    let (w1, _, h_dim, _) = view.wb(l1);
    let (w2, _, out_dim, _) = view.wb(l2);
    scratch.resize(h_dim, 0.0);
    let dh = &mut scratch[..h_dim];
    dh.iter_mut().for_each(|v| *v = 0.0);
    affine_backward_input(w2, out_dim, h_dim, d_out, dh);
    grads.accumulate_linear(l2, h_post, d_out);
    for k in 0..h_dim {
        if h_post[k] <= 0.0 {
            dh[k] = 0.0;
        }
    }
    affine_backward_input(w1, h_dim, x.len(), dh, dx);
    grads.accumulate_linear(l1, x, dh);
}

/// Backpropagate Q-value gradients through the network, accumulating
/// parameter gradients into `grads` (same layout as `params.data`).
pub fn backward(
    params: &GraphNetParams,
    trace: &ForwardTrace,
    d_node_q: &[f64],
    d_edge_q: &[f64],
    grads: &mut [f64],
) {
    let cfg = &params.config;
    let lat = cfg.latent;
    let view = ParamView::new(params);
    let mut gv = GradView { specs: build_layout(cfg), data: grads };
    let n = trace.node_lats[0].len() / lat.max(1);
    let m = trace.pairs.len();
    let mut scratch = Vec::new();

    // Decoder heads.
    let (w_nh, _, node_out, _) = view.wb(lin::node_head(PROCESSOR_BLOCKS));
    let (w_eh, _, edge_out, _) = view.wb(lin::edge_head(PROCESSOR_BLOCKS));
    let mut d_node_lat = vec![0.0; n * lat];
    let mut d_edge_lat = vec![0.0; m * lat];
    let final_nodes = trace.node_lats.last().unwrap();
    let final_edges = trace.edge_lats.last().unwrap();
    if node_out > 0 {
        for v in 0..n {
            let dy = &d_node_q[v * node_out..(v + 1) * node_out];
            affine_backward_input(w_nh, node_out, lat, dy, &mut d_node_lat[v * lat..(v + 1) * lat]);
            gv.accumulate_linear(
                lin::node_head(PROCESSOR_BLOCKS),
                &final_nodes[v * lat..(v + 1) * lat],
                dy,
            );
        }
    }
    if edge_out > 0 {
        for e in 0..m {
            let dy = &d_edge_q[e * edge_out..(e + 1) * edge_out];
            affine_backward_input(w_eh, edge_out, lat, dy, &mut d_edge_lat[e * lat..(e + 1) * lat]);
            gv.accumulate_linear(
                lin::edge_head(PROCESSOR_BLOCKS),
                &final_edges[e * lat..(e + 1) * lat],
                dy,
            );
        }
    }

    // Processor blocks in reverse: node MLP first (its aggregate gradient
    // fans out to this block's edge outputs), then the edge MLP.
    for b in (0..PROCESSOR_BLOCKS).rev() {
        let base = lin::BLOCK_BASE + b * lin::PER_BLOCK;
        let nodes_in = &trace.node_lats[b];
        let edges_in = &trace.edge_lats[b];
        let agg = &trace.block_agg[b];
        let mut d_nodes_in = vec![0.0; n * lat];
        let mut d_edges_out = d_edge_lat;

        let mut node_in = vec![0.0; 2 * lat];
        let mut d_in2 = vec![0.0; 2 * lat];
        for v in 0..n {
            node_in[..lat].copy_from_slice(&nodes_in[v * lat..(v + 1) * lat]);
            node_in[lat..].copy_from_slice(&agg[v * lat..(v + 1) * lat]);
            d_in2.iter_mut().for_each(|x| *x = 0.0);
            mlp_row_backward(
                &view,
                &mut gv,
                base + 2,
                base + 3,
                &node_in,
                &trace.block_node_h[b][v * cfg.hidden..(v + 1) * cfg.hidden],
                &d_node_lat[v * lat..(v + 1) * lat],
                &mut d_in2,
                &mut scratch,
            );
            for k in 0..lat {
                d_nodes_in[v * lat + k] += d_in2[k];
            }
            for (e, &(_, dst)) in trace.pairs.iter().enumerate() {
                if dst == v {
                    for k in 0..lat {
                        d_edges_out[e * lat + k] += d_in2[lat + k];
                    }
                }
            }
        }

        let mut d_edges_in = vec![0.0; m * lat];
        let mut edge_in = vec![0.0; 3 * lat];
        let mut d_in3 = vec![0.0; 3 * lat];
        for (e, &(s, d)) in trace.pairs.iter().enumerate() {
            edge_in[..lat].copy_from_slice(&edges_in[e * lat..(e + 1) * lat]);
            edge_in[lat..2 * lat].copy_from_slice(&nodes_in[s * lat..(s + 1) * lat]);
            edge_in[2 * lat..].copy_from_slice(&nodes_in[d * lat..(d + 1) * lat]);
            d_in3.iter_mut().for_each(|x| *x = 0.0);
            mlp_row_backward(
                &view,
                &mut gv,
                base,
                base + 1,
                &edge_in,
                &trace.block_edge_h[b][e * cfg.hidden..(e + 1) * cfg.hidden],
                &d_edges_out[e * lat..(e + 1) * lat],
                &mut d_in3,
                &mut scratch,
            );
            for k in 0..lat {
                d_edges_in[e * lat + k] += d_in3[k];
                d_nodes_in[s * lat + k] += d_in3[lat + k];
                d_nodes_in[d * lat + k] += d_in3[2 * lat + k];
            }
        }

        d_node_lat = d_nodes_in;
        d_edge_lat = d_edges_in;
    }

    // Encoders; input gradients are discarded.
    let mut sink = vec![0.0; NODE_FEATURES.max(EDGE_FEATURES)];
    for v in 0..n {
        sink.iter_mut().for_each(|s| *s = 0.0);
        mlp_row_backward(
            &view,
            &mut gv,
            lin::NODE_ENC_1,
            lin::NODE_ENC_2,
            &trace.node_feats[v * NODE_FEATURES..(v + 1) * NODE_FEATURES],
            &trace.enc_node_h[v * cfg.hidden..(v + 1) * cfg.hidden],
            &d_node_lat[v * lat..(v + 1) * lat],
            &mut sink[..NODE_FEATURES],
            &mut scratch,
        );
    }
    for e in 0..m {
        sink.iter_mut().for_each(|s| *s = 0.0);
        mlp_row_backward(
            &view,
            &mut gv,
            lin::EDGE_ENC_1,
            lin::EDGE_ENC_2,
            &trace.edge_feats[e * EDGE_FEATURES..(e + 1) * EDGE_FEATURES],
            &trace.enc_edge_h[e * cfg.hidden..(e + 1) * cfg.hidden],
            &d_edge_lat[e * lat..(e + 1) * lat],
            &mut sink[..EDGE_FEATURES],
            &mut scratch,
        );
    }
}

// --- Q-learning loss -----------------------------------------------------------

/// One TD sample, referencing graphs owned by the replay buffer.
pub struct TdSample<'a> {
    pub graph: &'a SceneGraph,
    /// Flat action index taken in `graph`.
    pub action: usize,
    pub reward: f64,
    /// Successor observation; `None` for terminal transitions.
    pub next_graph: Option<&'a SceneGraph>,
    /// Valid-action mask of the successor.
    pub next_mask: Option<&'a [bool]>,
}

/// Masked maximum of a flat Q vector.
pub fn masked_max(q: &[f64], mask: &[bool]) -> Option<f64> {
    q.iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
}

/// Masked argmax; ties break to the lowest index.
pub fn masked_argmax(q: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Mean squared TD error over a batch, with gradients accumulated into
/// `grads`. Targets use `target_params` (held fixed):
/// `y = r + γ·max_a' Q_target(s', a')`, or `y = r` when terminal.
pub fn q_learning_loss(
    params: &GraphNetParams,
    target_params: &GraphNetParams,
    batch: &[TdSample<'_>],
    gamma: f64,
    grads: &mut [f64],
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut trace = ForwardTrace::default();
    let mut node_q = Vec::new();
    let mut edge_q = Vec::new();
    let mut d_node = Vec::new();
    let mut d_edge = Vec::new();
    for sample in batch {
        forward_traced_into(params, sample.graph, &mut trace, &mut node_q, &mut edge_q)?;
        let flat_len = node_q.len() + edge_q.len();
        if sample.action >= flat_len {
            return Err(Error::Contract(format!(
                "action index {} out of range {flat_len}",
                sample.action
            )));
        }
        let q_sa = if sample.action < node_q.len() {
            node_q[sample.action]
        } else {
            edge_q[sample.action - node_q.len()]
        };
        let y = match (sample.next_graph, sample.next_mask) {
            (Some(g2), Some(mask)) => {
                let q2 = forward(target_params, g2)?.flatten();
                if q2.len() != mask.len() {
                    return Err(Error::Contract("next-state mask length mismatch".into()));
                }
                let best = masked_max(&q2, mask)
                    .ok_or_else(|| Error::Contract("empty next-state mask".into()))?;
                sample.reward + gamma * best
            }
            _ => sample.reward,
        };
        let err = q_sa - y;
        loss += err * err * scale;
        // Seed only the taken action's output.
        resize_zeroed(&mut d_node, node_q.len());
        resize_zeroed(&mut d_edge, edge_q.len());
        let seed = 2.0 * err * scale;
        if sample.action < d_node.len() {
            d_node[sample.action] = seed;
        } else {
            d_edge[sample.action - d_node.len()] = seed;
        }
        backward(params, &trace, &d_node, &d_edge, grads);
    }
    Ok(loss)
}

/// Q-learning loss with double-Q targets: the online network chooses the
/// successor action, the target network evaluates it.
pub fn double_q_loss(
    params: &GraphNetParams,
    target_params: &GraphNetParams,
    batch: &[TdSample<'_>],
    gamma: f64,
    grads: &mut [f64],
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut trace = ForwardTrace::default();
    let mut node_q = Vec::new();
    let mut edge_q = Vec::new();
    let mut d_node = Vec::new();
    let mut d_edge = Vec::new();
    for sample in batch {
        forward_traced_into(params, sample.graph, &mut trace, &mut node_q, &mut edge_q)?;
        let flat_len = node_q.len() + edge_q.len();
        if sample.action >= flat_len {
            return Err(Error::Contract(format!(
                "action index {} out of range {flat_len}",
                sample.action
            )));
        }
        let q_sa = if sample.action < node_q.len() {
            node_q[sample.action]
        } else {
            edge_q[sample.action - node_q.len()]
        };
        let y = match (sample.next_graph, sample.next_mask) {
            (Some(g2), Some(mask)) => {
                let q_online = forward(params, g2)?.flatten();
                if q_online.len() != mask.len() {
                    return Err(Error::Contract("next-state mask length mismatch".into()));
                }
                let chosen = masked_argmax(&q_online, mask)
                    .ok_or_else(|| Error::Contract("empty next-state mask".into()))?;
                let q_eval = forward(target_params, g2)?.flatten();
                sample.reward + gamma * q_eval[chosen]
            }
            _ => sample.reward,
        };
        let err = q_sa - y;
        loss += err * err * scale;
        resize_zeroed(&mut d_node, node_q.len());
        resize_zeroed(&mut d_edge, edge_q.len());
        let seed = 2.0 * err * scale;
        if sample.action < d_node.len() {
            d_node[sample.action] = seed;
        } else {
            d_edge[sample.action - d_node.len()] = seed;
        }
        backward(params, &trace, &d_node, &d_edge, grads);
    }
    Ok(loss)
}

// --- Adam ------------------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// Standard Adam update with bias correction.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let b1t = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let b2t = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / b1t;
        let v_hat = state.v[i] / b2t;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

// --- checkpoints -------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"GQNC";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &GraphNetParams) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + params.data.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        params.config.latent as u32,
        params.config.hidden as u32,
        params.config.node_out as u32,
        params.config.edge_out as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(params.data.len() as u64).to_le_bytes());
    for v in &params.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<GraphNetParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 32 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let read_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    if read_u32(4) != CHECKPOINT_VERSION {
        return Err(fail("unsupported version"));
    }
    let config = GraphNetConfig {
        latent: read_u32(8) as usize,
        hidden: read_u32(12) as usize,
        node_out: read_u32(16) as usize,
        edge_out: read_u32(20) as usize,
    };
    let count = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let expected = GraphNetParams::zeros(config).len();
    if count != expected {
        return Err(fail("parameter count does not match architecture"));
    }
    if bytes.len() != 32 + count * 8 {
        return Err(fail("truncated parameter body"));
    }
    let data = bytes[32..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(GraphNetParams { config, data })
}
