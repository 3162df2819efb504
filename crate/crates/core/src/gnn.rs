//! Encoder–processor–decoder GNN surrogates with four interchangeable
//! processor layers (GCN, GAT, MPNN, Graph Transformer), a continuous field
//! decoder for off-node evaluation, and the checkpoint container.
//!
//! All four processors operate on a directed edge list sorted by destination
//! (the canonical message-passing order); attention-based layers add
//! self-loops so every neighborhood N(v) ∪ {v} forms one contiguous softmax
//! segment.

use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{feature_vector, NormalizationStats, Sample, Task, Topology};
use crate::jet::JetMat;
use crate::nn::{glorot_uniform, Activation, DenseLayer, ParamStore};
use crate::tape::{Tape, UnaryFn, Var};
use crate::{Error, Result};

/// Processor architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    Gcn,
    Gat,
    Mpnn,
    Transformer,
}

/// Model hyper-parameters. `heads` is only consulted by GAT and Transformer;
/// per-head width equals `hidden`, heads concatenated on all but the last
/// layer (head schedule [4, 4, 1] by default).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub task: Task,
    pub in_width: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: Vec<usize>,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(arch: Arch, task: Task) -> Self {
        ModelConfig {
            arch,
            task,
            in_width: task.feature_width(),
            hidden: 128,
            layers: 3,
            heads: vec![4, 4, 1],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::ConfigMismatch("layers and hidden must be positive".into()));
        }
        if self.in_width < 3 {
            return Err(Error::ConfigMismatch("in_width must cover pos(3)".into()));
        }
        if self.uses_heads() {
            if self.heads.len() != self.layers {
                return Err(Error::ConfigMismatch(format!(
                    "heads length {} != layers {}",
                    self.heads.len(),
                    self.layers
                )));
            }
            if self.heads.iter().any(|&h| h == 0) {
                return Err(Error::ConfigMismatch("heads must be positive".into()));
            }
        }
        Ok(())
    }

    fn uses_heads(&self) -> bool {
        matches!(self.arch, Arch::Gat | Arch::Transformer)
    }

    /// Input width of processor layer `l`.
    pub fn layer_in(&self, l: usize) -> usize {
        if self.uses_heads() && l > 0 {
            self.heads[l - 1] * self.hidden
        } else {
            self.hidden
        }
    }

    /// Output width of processor layer `l`.
    pub fn layer_out(&self, l: usize) -> usize {
        if self.uses_heads() {
            self.heads[l] * self.hidden
        } else {
            self.hidden
        }
    }

    /// Width of the latent field fed to the decoder.
    pub fn latent_width(&self) -> usize {
        self.layer_out(self.layers - 1)
    }
}

/// Normalized node features and targets of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphData {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

impl GraphData {
    pub fn from_sample(task: Task, sample: &Sample, stats: &NormalizationStats) -> Self {
        let w = task.feature_width();
        let n = sample.coords.len();
        let mut features = Array2::zeros((n, w));
        let mut targets = Array2::zeros((n, 3));
        for (node, &pos) in sample.coords.iter().enumerate() {
            let raw = feature_vector(task, &sample.params, pos);
            for (k, &v) in raw.iter().enumerate() {
                features[[node, k]] = stats.normalize_feature(k, v);
            }
            for c in 0..3 {
                targets[[node, c]] = stats.normalize_disp(c, sample.disp[node][c]);
            }
        }
        GraphData { features, targets }
    }
}

/// Maximum graphs per batch (Appendix: batch size 16).
pub const MAX_BATCH: usize = 16;

/// A stack of graphs sharing one topology, with precomputed message-passing
/// index arrays. Edge lists are sorted by (destination, source); `srcl`/`dstl`
/// additionally carry self-loops for the attention softmax segments and the
/// GCN normalization.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    pub n_nodes: usize,
    pub n_graphs: usize,
    pub nodes_per_graph: usize,
    pub src: Rc<Vec<u32>>,
    pub dst: Rc<Vec<u32>>,
    pub srcl: Rc<Vec<u32>>,
    pub dstl: Rc<Vec<u32>>,
    /// Symmetric-degree GCN coefficient per self-loop-augmented edge:
    /// 1/sqrt((d_u+1)(d_v+1)) for u -> v, 1/(d_v+1) for the loop.
    pub gcn_coeff: Array2<f64>,
}

impl GraphBatch {
    pub fn build(
        nodes_per_graph: usize,
        undirected: &[[u32; 2]],
        graphs: &[&GraphData],
    ) -> Result<Self> {
        if graphs.is_empty() || graphs.len() > MAX_BATCH {
            return Err(Error::ConfigMismatch(format!(
                "batch size {} outside 1..={MAX_BATCH}",
                graphs.len()
            )));
        }
        for g in graphs {
            if g.features.nrows() != nodes_per_graph || g.targets.nrows() != nodes_per_graph {
                return Err(Error::ConfigMismatch("graph size mismatch in batch".into()));
            }
        }
        let n_graphs = graphs.len();
        let n_nodes = n_graphs * nodes_per_graph;
        let width = graphs[0].features.ncols();
        let mut features = Array2::zeros((n_nodes, width));
        let mut targets = Array2::zeros((n_nodes, 3));
        for (gi, g) in graphs.iter().enumerate() {
            let o = gi * nodes_per_graph;
            features
                .slice_mut(ndarray::s![o..o + nodes_per_graph, ..])
                .assign(&g.features);
            targets
                .slice_mut(ndarray::s![o..o + nodes_per_graph, ..])
                .assign(&g.targets);
        }

        // Per-graph directed edges and undirected degrees.
        let mut degree = vec![0usize; nodes_per_graph];
        let mut base: Vec<[u32; 2]> = Vec::with_capacity(2 * undirected.len());
        for &[a, b] in undirected {
            debug_assert!(a != b, "self-loops are added internally");
            base.push([a, b]);
            base.push([b, a]);
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        base.sort_unstable_by_key(|&[s, d]| (d, s));
        let mut basel = base.clone();
        for v in 0..nodes_per_graph as u32 {
            basel.push([v, v]);
        }
        basel.sort_unstable_by_key(|&[s, d]| (d, s));

        let mut src = Vec::with_capacity(n_graphs * base.len());
        let mut dst = Vec::with_capacity(n_graphs * base.len());
        let mut srcl = Vec::with_capacity(n_graphs * basel.len());
        let mut dstl = Vec::with_capacity(n_graphs * basel.len());
        let mut gcn_coeff = Array2::zeros((n_graphs * basel.len(), 1));
        for gi in 0..n_graphs {
            let o = (gi * nodes_per_graph) as u32;
            for &[s, d] in &base {
                src.push(s + o);
                dst.push(d + o);
            }
            for (e, &[s, d]) in basel.iter().enumerate() {
                srcl.push(s + o);
                dstl.push(d + o);
                let c = if s == d {
                    1.0 / (degree[d as usize] + 1) as f64
                } else {
                    1.0 / (((degree[s as usize] + 1) * (degree[d as usize] + 1)) as f64).sqrt()
                };
                gcn_coeff[[gi * basel.len() + e, 0]] = c;
            }
        }
        Ok(GraphBatch {
            features,
            targets,
            n_nodes,
            n_graphs,
            nodes_per_graph,
            src: Rc::new(src),
            dst: Rc::new(dst),
            srcl: Rc::new(srcl),
            dstl: Rc::new(dstl),
            gcn_coeff,
        })
    }

    pub fn from_topology(topo: &Topology, graphs: &[&GraphData]) -> Result<Self> {
        Self::build(topo.n_nodes, &topo.edges, graphs)
    }

    pub fn single(topo: &Topology, graph: &GraphData) -> Result<Self> {
        Self::from_topology(topo, &[graph])
    }
}

/// One processor layer's parameter ids.
#[derive(Debug, Clone)]
enum Layer {
    Gcn {
        w: usize,
        b: usize,
    },
    Gat {
        w: Vec<usize>,
        a_dst: Vec<usize>,
        a_src: Vec<usize>,
        b: usize,
    },
    Mpnn {
        psi1: DenseLayer,
        psi2: DenseLayer,
        phi1: DenseLayer,
        phi2: DenseLayer,
    },
    Transformer {
        q: Vec<DenseLayer>,
        k: Vec<DenseLayer>,
        v: Vec<DenseLayer>,
        skip: DenseLayer,
    },
}

impl Layer {
    /// Forward one layer; returns the new hidden state and, for attention
    /// layers, the per-head attention columns (aligned with `srcl`/`dstl`).
    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        batch: &GraphBatch,
        act: Activation,
    ) -> (Var, Vec<Var>) {
        let n = batch.n_nodes;
        match self {
            Layer::Gcn { w, b } => {
                let coeff = tape.constant(batch.gcn_coeff.clone());
                let z = tape.gather(h, Rc::clone(&batch.srcl));
                let zc = tape.row_scale(z, coeff);
                let agg = tape.scatter_add(zc, Rc::clone(&batch.dstl), n);
                let wv = store.var(tape, *w);
                let bv = store.var(tape, *b);
                let out = tape.matmul(agg, wv);
                let out = tape.add_row(out, bv);
                (act.apply(tape, out), Vec::new())
            }
            Layer::Gat { w, a_dst, a_src, b } => {
                let mut outs = Vec::with_capacity(w.len());
                let mut alphas = Vec::with_capacity(w.len());
                for hd in 0..w.len() {
                    let wv = store.var(tape, w[hd]);
                    let adv = store.var(tape, a_dst[hd]);
                    let asv = store.var(tape, a_src[hd]);
                    let z = tape.matmul(h, wv);
                    let sd = tape.matmul(z, adv);
                    let ss = tape.matmul(z, asv);
                    let ed = tape.gather(sd, Rc::clone(&batch.dstl));
                    let es = tape.gather(ss, Rc::clone(&batch.srcl));
                    let e = tape.add(ed, es);
                    let e = tape.unary(e, UnaryFn::LeakyRelu);
                    let alpha = tape.segment_softmax(e, Rc::clone(&batch.dstl));
                    let zg = tape.gather(z, Rc::clone(&batch.srcl));
                    let msg = tape.row_scale(zg, alpha);
                    outs.push(tape.scatter_add(msg, Rc::clone(&batch.dstl), n));
                    alphas.push(alpha);
                }
                let mut cat = outs[0];
                for &o in &outs[1..] {
                    cat = tape.concat_cols(cat, o);
                }
                let bv = store.var(tape, *b);
                let out = tape.add_row(cat, bv);
                (act.apply(tape, out), alphas)
            }
            Layer::Mpnn { psi1, psi2, phi1, phi2 } => {
                let hd = tape.gather(h, Rc::clone(&batch.dst));
                let hs = tape.gather(h, Rc::clone(&batch.src));
                let cat = tape.concat_cols(hd, hs);
                let m = psi1.forward(tape, store, cat);
                let m = psi2.forward(tape, store, m);
                let agg = tape.scatter_add(m, Rc::clone(&batch.dst), n);
                let cat2 = tape.concat_cols(h, agg);
                let upd = phi1.forward(tape, store, cat2);
                let upd = phi2.forward(tape, store, upd);
                (tape.add(h, upd), Vec::new())
            }
            Layer::Transformer { q, k, v, skip } => {
                let d_head = store.values[q[0].w].ncols();
                let inv_sqrt = 1.0 / (d_head as f64).sqrt();
                let mut outs = Vec::with_capacity(q.len());
                let mut alphas = Vec::with_capacity(q.len());
                for hd in 0..q.len() {
                    let qv = q[hd].forward(tape, store, h);
                    let kv = k[hd].forward(tape, store, h);
                    let vv = v[hd].forward(tape, store, h);
                    let qe = tape.gather(qv, Rc::clone(&batch.dstl));
                    let ke = tape.gather(kv, Rc::clone(&batch.srcl));
                    let prod = tape.mul(qe, ke);
                    let e = tape.sum_cols(prod);
                    let e = tape.scale(e, inv_sqrt);
                    let alpha = tape.segment_softmax(e, Rc::clone(&batch.dstl));
                    let ve = tape.gather(vv, Rc::clone(&batch.srcl));
                    let msg = tape.row_scale(ve, alpha);
                    outs.push(tape.scatter_add(msg, Rc::clone(&batch.dstl), n));
                    alphas.push(alpha);
                }
                let mut cat = outs[0];
                for &o in &outs[1..] {
                    cat = tape.concat_cols(cat, o);
                }
                let sk = skip.forward(tape, store, h);
                let out = tape.add(cat, sk);
                (act.apply(tape, out), alphas)
            }
        }
    }
}

/// Full surrogate: encoder, processor stack, field decoder.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub seed: u64,
    encoder: DenseLayer,
    layers: Vec<Layer>,
    dec1: DenseLayer,
    dec2: DenseLayer,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = config.activation;
        let h = config.hidden;
        let encoder = DenseLayer::init(&mut store, &mut rng, "encoder", config.in_width, h, act);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let din = config.layer_in(l);
            let layer = match config.arch {
                Arch::Gcn => Layer::Gcn {
                    w: store.register(&format!("layer{l}.w"), glorot_uniform(&mut rng, din, h)),
                    b: store.register(&format!("layer{l}.b"), Array2::zeros((1, h))),
                },
                Arch::Gat => {
                    let nh = config.heads[l];
                    let mut w = Vec::new();
                    let mut a_dst = Vec::new();
                    let mut a_src = Vec::new();
                    for hd in 0..nh {
                        w.push(store.register(
                            &format!("layer{l}.head{hd}.w"),
                            glorot_uniform(&mut rng, din, h),
                        ));
                        a_dst.push(store.register(
                            &format!("layer{l}.head{hd}.a_dst"),
                            glorot_uniform(&mut rng, h, 1),
                        ));
                        a_src.push(store.register(
                            &format!("layer{l}.head{hd}.a_src"),
                            glorot_uniform(&mut rng, h, 1),
                        ));
                    }
                    let b = store.register(&format!("layer{l}.b"), Array2::zeros((1, nh * h)));
                    Layer::Gat { w, a_dst, a_src, b }
                }
                Arch::Mpnn => Layer::Mpnn {
                    psi1: DenseLayer::init(&mut store, &mut rng, &format!("layer{l}.psi1"), 2 * h, h, act),
                    psi2: DenseLayer::init(&mut store, &mut rng, &format!("layer{l}.psi2"), h, h, act),
                    phi1: DenseLayer::init(&mut store, &mut rng, &format!("layer{l}.phi1"), 2 * h, h, act),
                    phi2: DenseLayer::init(
                        &mut store,
                        &mut rng,
                        &format!("layer{l}.phi2"),
                        h,
                        h,
                        Activation::Identity,
                    ),
                },
                Arch::Transformer => {
                    let nh = config.heads[l];
                    let mut q = Vec::new();
                    let mut k = Vec::new();
                    let mut v = Vec::new();
                    for hd in 0..nh {
                        q.push(DenseLayer::init(
                            &mut store,
                            &mut rng,
                            &format!("layer{l}.head{hd}.q"),
                            din,
                            h,
                            Activation::Identity,
                        ));
                        k.push(DenseLayer::init(
                            &mut store,
                            &mut rng,
                            &format!("layer{l}.head{hd}.k"),
                            din,
                            h,
                            Activation::Identity,
                        ));
                        v.push(DenseLayer::init(
                            &mut store,
                            &mut rng,
                            &format!("layer{l}.head{hd}.v"),
                            din,
                            h,
                            Activation::Identity,
                        ));
                    }
                    let skip = DenseLayer::init(
                        &mut store,
                        &mut rng,
                        &format!("layer{l}.skip"),
                        din,
                        nh * h,
                        Activation::Identity,
                    );
                    Layer::Transformer { q, k, v, skip }
                }
            };
            layers.push(layer);
        }
        let dec1 = DenseLayer::init(
            &mut store,
            &mut rng,
            "decoder1",
            config.latent_width() + 3,
            h,
            act,
        );
        let dec2 = DenseLayer::init(&mut store, &mut rng, "decoder2", h, 3, Activation::Identity);
        Ok(Model {
            config,
            store,
            seed,
            encoder,
            layers,
            dec1,
            dec2,
        })
    }

    /// Exact count of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Encoder plus processor stack: normalized features to nodal latents.
    pub fn encode_process(&self, tape: &mut Tape, batch: &GraphBatch) -> Var {
        self.encode_process_attn(tape, batch).0
    }

    fn encode_process_attn(&self, tape: &mut Tape, batch: &GraphBatch) -> (Var, Vec<Var>) {
        debug_assert_eq!(batch.features.ncols(), self.config.in_width);
        let x = tape.constant(batch.features.clone());
        let mut h = self.encoder.forward(tape, &self.store, x);
        let mut alphas = Vec::new();
        for layer in &self.layers {
            let (hn, a) = layer.forward(tape, &self.store, h, batch, self.config.activation);
            h = hn;
            alphas.extend(a);
        }
        (h, alphas)
    }

    /// Field decoder on (latent ⊕ normalized pos).
    pub fn decode(&self, tape: &mut Tape, latent: Var, pos: Var) -> Var {
        let cat = tape.concat_cols(latent, pos);
        let d = self.dec1.forward(tape, &self.store, cat);
        self.dec2.forward(tape, &self.store, d)
    }

    /// Jet-lane decoder for the physics loss; requires a smooth activation.
    pub fn decode_jet(&self, tape: &mut Tape, latent: JetMat, pos: JetMat) -> Result<JetMat> {
        let cat = latent.concat_cols(tape, pos);
        let w1 = self.store.var(tape, self.dec1.w);
        let b1 = self.store.var(tape, self.dec1.b);
        let jm = cat.matmul(tape, w1).add_row(tape, b1);
        let jm = match self.config.activation {
            Activation::Silu => jm.activate_silu(tape),
            Activation::Identity => jm,
            other => {
                return Err(Error::ConfigMismatch(format!(
                    "physics decoding needs a smooth activation, got {other:?}"
                )))
            }
        };
        let w2 = self.store.var(tape, self.dec2.w);
        let b2 = self.store.var(tape, self.dec2.b);
        Ok(jm.matmul(tape, w2).add_row(tape, b2))
    }

    /// Full pipeline: normalized features to normalized nodal displacements.
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Var {
        let (latent, _) = self.encode_process_attn(tape, batch);
        let x = tape.constant(batch.features.clone());
        let pos = tape.slice_cols(x, 0, 3);
        self.decode(tape, latent, pos)
    }
}

/// Barycentric evaluation plan for a set of points inside known tets:
/// weights, vertex indices, and the (per-tet constant) weight gradients.
#[derive(Debug, Clone)]
pub struct Interpolator {
    pub idx: [Rc<Vec<u32>>; 4],
    pub w: [Array2<f64>; 4],
    /// dwdx[i][k] is the Q x 1 column of dw_i/dx_k (physical mm).
    pub dwdx: [[Array2<f64>; 3]; 4],
}

impl Interpolator {
    /// `points` pairs a containing tet id with a physical location.
    pub fn new(
        coords: &[[f64; 3]],
        tets: &[[u32; 4]],
        points: &[(usize, [f64; 3])],
    ) -> Result<Self> {
        let q = points.len();
        let mut idx = [(); 4].map(|_| Vec::with_capacity(q));
        let mut w = [(); 4].map(|_| Array2::zeros((q, 1)));
        let mut dwdx: [[Array2<f64>; 3]; 4] =
            [(); 4].map(|_| [(); 3].map(|_| Array2::zeros((q, 1))));
        for (p, &(tet, x)) in points.iter().enumerate() {
            let t = tets[tet];
            let a = coords[t[0] as usize];
            // Columns of m are the edge vectors from vertex 0.
            let mut m = [[0.0; 3]; 3];
            for j in 0..3 {
                let vj = coords[t[j + 1] as usize];
                for r in 0..3 {
                    m[r][j] = vj[r] - a[r];
                }
            }
            let inv = invert3(&m).ok_or(Error::DegenerateElement {
                volume: 0.0,
                floor: 0.0,
            })?;
            let rhs = [x[0] - a[0], x[1] - a[1], x[2] - a[2]];
            let mut bary = [0.0; 4];
            for j in 0..3 {
                bary[j + 1] = inv[j][0] * rhs[0] + inv[j][1] * rhs[1] + inv[j][2] * rhs[2];
            }
            bary[0] = 1.0 - bary[1] - bary[2] - bary[3];
            for i in 0..4 {
                idx[i].push(t[i]);
                w[i][[p, 0]] = bary[i];
                for k in 0..3 {
                    // dw_{j+1}/dx_k = inv[j][k]; dw_0 = -sum of the others.
                    let d = if i == 0 {
                        -(inv[0][k] + inv[1][k] + inv[2][k])
                    } else {
                        inv[i - 1][k]
                    };
                    dwdx[i][k][[p, 0]] = d;
                }
            }
        }
        Ok(Interpolator {
            idx: idx.map(Rc::new),
            w,
            dwdx,
        })
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((i + 1) % 3, (i + 2) % 3);
            let (c, d) = ((j + 1) % 3, (j + 2) % 3);
            // Transposed cofactor.
            inv[j][i] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) * inv_det;
        }
    }
    Some(inv)
}

/// Piecewise-affine latent field at the interpolator's points, as a jet whose
/// gradient lanes are physical-coordinate derivatives and whose Hessian lanes
/// vanish (the field is affine per tet).
pub fn interpolate_latent(tape: &mut Tape, h: Var, it: &Interpolator) -> JetMat {
    let width = tape.value(h).ncols();
    let q = it.w[0].nrows();
    let mut val: Option<Var> = None;
    let mut g: [Option<Var>; 3] = [None; 3];
    for i in 0..4 {
        let z = tape.gather(h, Rc::clone(&it.idx[i]));
        let wi = tape.constant(it.w[i].clone());
        let term = tape.row_scale(z, wi);
        val = Some(match val {
            Some(v) => tape.add(v, term),
            None => term,
        });
        for k in 0..3 {
            let dk = tape.constant(it.dwdx[i][k].clone());
            let term = tape.row_scale(z, dk);
            g[k] = Some(match g[k] {
                Some(v) => tape.add(v, term),
                None => term,
            });
        }
    }
    let zero = tape.constant(Array2::zeros((q, width)));
    JetMat::new(val.unwrap(), g.map(|v| v.unwrap()), [zero; 6])
}

// --- Checkpoints ---------------------------------------------------------

pub const CKPT_MAGIC: [u8; 4] = *b"IBCK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: u64,
}

/// JSON header preceding the flat little-endian f64 payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub norm_stats_hash: u64,
    params: Vec<ParamEntry>,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    epoch: usize,
    norm_stats_hash: u64,
) -> Result<()> {
    let mut params = Vec::with_capacity(model.store.len());
    let mut offset = 0u64;
    for (name, value) in model.store.names.iter().zip(&model.store.values) {
        params.push(ParamEntry {
            name: name.clone(),
            rows: value.nrows(),
            cols: value.ncols(),
            offset,
        });
        offset += 8 * value.len() as u64;
    }
    let header = CheckpointHeader {
        config: model.config.clone(),
        seed: model.seed,
        epoch,
        norm_stats_hash,
        params,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut body = Vec::new();
    body.extend((header_json.len() as u32).to_le_bytes());
    body.extend(&header_json);
    for value in &model.store.values {
        for &x in value.iter() {
            body.extend(x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&body);
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend(CKPT_MAGIC);
    out.extend(CKPT_VERSION.to_le_bytes());
    out.extend(&body);
    out.extend(crc.to_le_bytes());
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&out)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointHeader)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 {
        return Err(Error::TruncatedFile {
            needed: 12,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic {
            expected: CKPT_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CKPT_VERSION,
        });
    }
    let body = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    if body.len() < 4 {
        return Err(Error::TruncatedFile {
            needed: 4,
            available: body.len(),
        });
    }
    let hlen = u32::from_le_bytes(body[0..4].try_into().unwrap()) as usize;
    if body.len() < 4 + hlen {
        return Err(Error::TruncatedFile {
            needed: 4 + hlen,
            available: body.len(),
        });
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[4..4 + hlen])?;
    let payload = &body[4 + hlen..];
    let mut model = Model::new(header.config.clone(), header.seed)?;
    if header.params.len() != model.store.len() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {} tensors, model expects {}",
            header.params.len(),
            model.store.len()
        )));
    }
    for (pid, entry) in header.params.iter().enumerate() {
        let value = &mut model.store.values[pid];
        if entry.name != model.store.names[pid]
            || entry.rows != value.nrows()
            || entry.cols != value.ncols()
        {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint tensor `{}` ({}x{}) does not match model `{}` ({}x{})",
                entry.name,
                entry.rows,
                entry.cols,
                model.store.names[pid],
                value.nrows(),
                value.ncols()
            )));
        }
        let start = entry.offset as usize;
        let need = start + 8 * value.len();
        if payload.len() < need {
            return Err(Error::TruncatedFile {
                needed: need,
                available: payload.len(),
            });
        }
        for (j, x) in value.iter_mut().enumerate() {
            let o = start + 8 * j;
            *x = f64::from_le_bytes(payload[o..o + 8].try_into().unwrap());
        }
    }
    Ok((model, header))
}
