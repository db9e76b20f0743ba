use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Arm, ModelConfig};
use super::construct::{diff_hyp_con, ConstructionTrace};
use crate::datasets::TaskKind;
use crate::error::Result;
use crate::gradnet::{BatchNorm, Forward, Linear, Matrix, Mlp, Mode, ParamId, ParamStore, Tape, Var};
use crate::graph::{Batch, Graph};
use crate::wlcolor::{build_hierarchy, wl_colorings, ColorHierarchy, Coloring};

/// A disjoint-union batch with its WL colorings `c₀ … c_T`.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub batch: Batch,
    pub colorings: Vec<Coloring>,
}

impl PreparedBatch {
    pub fn new(graphs: &[&Graph], layers: usize) -> Self {
        let batch = Batch::union(graphs);
        let colorings = wl_colorings(std::slice::from_ref(&batch.graph), layers);
        PreparedBatch { batch, colorings }
    }

    pub fn graph(&self) -> &Graph {
        &self.batch.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.batch.graph.num_nodes()
    }

    /// The batch's WL tree, annotated with the graph of every node.
    pub fn hierarchy(&self) -> ColorHierarchy {
        let mut h = build_hierarchy(&self.colorings).expect("WL colorings always refine");
        h.set_node_graph(self.batch.graph_of.clone());
        h
    }

    /// For every node, the representative of its class at iteration `t`.
    fn rep_of_node(&self, t: usize) -> Vec<usize> {
        let c = &self.colorings[t];
        let reps = c.representatives();
        c.colors().iter().map(|&k| reps[k as usize]).collect()
    }
}

#[derive(Debug, Clone)]
struct GinLayer {
    eps: ParamId,
    blocks: Vec<(Linear, BatchNorm)>,
}

/// Input projection, `T` GIN layers with the hyperbolic construction run in
/// lockstep, readout and prediction head.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub arm: Arm,
    pub task: TaskKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub params: ParamStore,
    input: Linear,
    layers: Vec<GinLayer>,
    head: Mlp,
}

/// Tape handles produced by [`Model::forward`].
pub struct ForwardOutput {
    /// `H⁽⁰⁾ … H⁽ᵀ⁾`, one row per node.
    pub h: Vec<Var>,
    /// `Z⁽⁰⁾ … Z⁽ᵀ⁾`; empty for the GIN arm.
    pub z: Vec<Var>,
    pub traces: Vec<ConstructionTrace>,
    /// Head input: one row per graph or per node.
    pub readout: Var,
    pub output: Var,
}

/// Plain values of every layer from an evaluation-mode pass.
#[derive(Debug, Clone)]
pub struct Inspection {
    pub h: Vec<Matrix>,
    pub z: Vec<Matrix>,
    /// Per layer and class: rotated child direction before scaling.
    pub directions: Vec<Matrix>,
    /// Per layer and class: unit direction of the moved grandparent.
    pub reflected_parent_dir: Vec<Option<Matrix>>,
    pub reps: Vec<Vec<usize>>,
    pub output: Matrix,
}

impl Model {
    /// Parameters are created in forward order (input projection, GIN
    /// layers, head) from one seeded stream, so models that differ only in
    /// depth share their leading layers.
    pub fn new(
        config: ModelConfig,
        arm: Arm,
        task: TaskKind,
        input_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.dim;
        let input = Linear::new(&mut params, "input", input_dim, d, &mut rng);
        let layers = (1..=config.layers)
            .map(|t| GinLayer {
                eps: params.add(format!("gin.{t}.eps"), Matrix::zeros((1, 1)), config.epsilon_trainable),
                blocks: (0..config.mlp_depth)
                    .map(|b| {
                        let name = format!("gin.{t}.mlp.{b}");
                        (
                            Linear::new(&mut params, &name, d, d, &mut rng),
                            BatchNorm::new(&mut params, &format!("{name}.bn"), d),
                        )
                    })
                    .collect(),
            })
            .collect();
        let head = Mlp::new(
            &mut params,
            "head",
            d,
            &config.head,
            output_dim,
            config.dropout,
            &mut rng,
        );
        Ok(Model {
            config,
            arm,
            task,
            input_dim,
            output_dim,
            params,
            input,
            layers,
            head,
        })
    }

    fn is_graph_task(&self) -> bool {
        self.task == TaskKind::GraphClassification
    }

    /// `(1 + ε) h_v + Σ_{u∈N(v)} h_u` through the layer's MLP, then every row
    /// replaced by its class representative's row.
    fn gin_layer(&self, fwd: &Forward<'_>, layer: &GinLayer, graph: &Graph, h: Var, reps: Vec<usize>) -> Var {
        let t = fwd.tape;
        let scaled = t.scale_by(h, fwd.param(layer.eps));
        let mut s = t.add(t.add(h, scaled), t.scatter_sum(h, graph));
        for (lin, bn) in &layer.blocks {
            s = t.relu(bn.forward(fwd, lin.forward(fwd, s)));
        }
        t.gather_rows(s, reps)
    }

    pub fn forward(&self, fwd: &Forward<'_>, prep: &PreparedBatch) -> ForwardOutput {
        let t = fwd.tape;
        let graph = prep.graph();
        let tau = self.config.tau;
        let x = t.constant(graph.features().clone());
        let h0 = t.relu(self.input.forward(fwd, x));
        let mut h = vec![t.gather_rows(h0, prep.rep_of_node(0))];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = self.gin_layer(fwd, layer, graph, h[i], prep.rep_of_node(i + 1));
            h.push(next);
        }

        let mut z: Vec<Var> = Vec::new();
        let mut traces = Vec::new();
        if self.arm == Arm::Wlhn {
            for (i, &hi) in h.iter().enumerate() {
                let prev = i.checked_sub(1).map(|j| z[j]);
                let prevprev = i.checked_sub(2).map(|j| z[j]);
                let (zi, trace) = diff_hyp_con(t, hi, prev, prevprev, &prep.colorings[i], tau);
                z.push(zi);
                traces.push(trace);
            }
        }

        let last = match self.arm {
            Arm::Wlhn => t.log0(*z.last().unwrap()),
            Arm::Gin => *h.last().unwrap(),
        };
        let readout = if self.is_graph_task() {
            let k = prep.batch.num_graphs();
            let pooled = t.segment_sum(last, prep.batch.graph_of.clone(), k);
            match self.arm {
                Arm::Wlhn => pooled,
                Arm::Gin => {
                    let inv = Matrix::from_shape_fn((k, 1), |(g, _)| {
                        let size = prep.batch.offsets[g + 1] - prep.batch.offsets[g];
                        1.0 / size.max(1) as f64
                    });
                    t.mul_col(pooled, t.constant(inv))
                }
            }
        } else {
            last
        };
        let output = self.head.forward(fwd, readout);
        ForwardOutput {
            h,
            z,
            traces,
            readout,
            output,
        }
    }

    /// Evaluation-mode pass returning plain matrices.
    pub fn inspect(&self, prep: &PreparedBatch) -> Inspection {
        self.inspect_in(prep, Mode::Eval)
    }

    /// Pass in the given mode returning plain matrices. Training mode
    /// normalizes with batch statistics (and applies dropout); running
    /// statistics are left untouched.
    pub fn inspect_in(&self, prep: &PreparedBatch, mode: Mode) -> Inspection {
        let tape = Tape::new();
        let fwd = Forward::new(&tape, &self.params, mode, 0);
        let out = self.forward(&fwd, prep);
        let val = |v: Var| tape.value(v).clone();
        Inspection {
            h: out.h.iter().map(|&v| val(v)).collect(),
            z: out.z.iter().map(|&v| val(v)).collect(),
            directions: out.traces.iter().map(|tr| val(tr.directions)).collect(),
            reflected_parent_dir: out
                .traces
                .iter()
                .map(|tr| tr.reflected_parent_dir.map(val))
                .collect(),
            reps: prep.colorings.iter().map(Coloring::representatives).collect(),
            output: val(out.output),
        }
    }
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSpace {
    /// Ball points `z⁽ᵗ⁾`.
    Hyperbolic,
    /// GIN representations `h⁽ᵗ⁾`.
    Euclidean,
}

/// One row per hierarchy node: the root maps to the origin, a class at
/// iteration `t` to the layer-`t` row of its lowest-indexed member.
pub fn class_embeddings(insp: &Inspection, h: &ColorHierarchy, space: EmbeddingSpace) -> Vec<Vec<f64>> {
    let layers = match space {
        EmbeddingSpace::Hyperbolic => &insp.z,
        EmbeddingSpace::Euclidean => &insp.h,
    };
    let d = layers.first().map_or(0, |m| m.ncols());
    h.nodes()
        .iter()
        .map(|node| match usize::try_from(node.depth) {
            Err(_) => vec![0.0; d],
            Ok(t) => layers[t].row(node.members[0]).to_vec(),
        })
        .collect()
}

/// `node_id,graph_id,layer,x0,…` rows for layers `0..=T` (or only `layer`),
/// with node ids local to their graph. Only class representatives are
/// written unless `all_nodes` is set.
pub fn write_embeddings_csv(
    mut w: impl Write,
    insp: &Inspection,
    prep: &PreparedBatch,
    space: EmbeddingSpace,
    layer: Option<usize>,
    all_nodes: bool,
) -> std::io::Result<()> {
    let layers = match space {
        EmbeddingSpace::Hyperbolic => &insp.z,
        EmbeddingSpace::Euclidean => &insp.h,
    };
    let d = layers.first().map_or(0, |m| m.ncols());
    write!(w, "node_id,graph_id,layer")?;
    for j in 0..d {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for (t, m) in layers.iter().enumerate() {
        if layer.is_some_and(|l| l != t) {
            continue;
        }
        let nodes: Vec<usize> = if all_nodes {
            (0..prep.num_nodes()).collect()
        } else {
            insp.reps[t].clone()
        };
        for v in nodes {
            let g = prep.batch.graph_of[v];
            write!(w, "{},{},{}", v - prep.batch.offsets[g], g, t)?;
            for x in m.row(v) {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
