use serde::{Deserialize, Serialize};

use super::jet::Activation;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Four independent branches, one per output.
    Split,
    /// Shared `t` and `r` trunks feeding per-output branches.
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Dense,
    Residual,
    GradientPathology,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

/// The four model outputs, in network head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    AnodeConc,
    CathodeConc,
    PhiE,
    PhiSCathode,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::AnodeConc, Head::CathodeConc, Head::PhiE, Head::PhiSCathode];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Concentration heads depend on `(t, r)`; potentials on `t` only.
    pub fn uses_r(self) -> bool {
        matches!(self, Head::AnodeConc | Head::CathodeConc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub block_kind: BlockKind,
    /// Dense layers in each trunk (merged) or ahead of each branch (split).
    pub trunk_layers: usize,
    /// Hidden layers per branch.
    pub branch_layers: usize,
    pub width: usize,
    pub conc_activation: OutputActivation,
    pub precision: Precision,
}

impl Default for NetworkSpec {
    /// Merged trunks with one dense layer each, two gated layers per branch,
    /// 20 neurons per layer.
    fn default() -> Self {
        Self {
            architecture: Architecture::Merged,
            block_kind: BlockKind::GradientPathology,
            trunk_layers: 1,
            branch_layers: 2,
            width: 20,
            conc_activation: OutputActivation::Sigmoid,
            precision: Precision::F64,
        }
    }
}

/// Node handle inside a [`Program`].
pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    InputT,
    InputR,
    Dense { layer: usize, src: NodeId },
    Act { act: Activation, src: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Concat { a: NodeId, b: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of the weight matrix (row-major, `fan_in x fan_out`); the bias
    /// follows immediately.
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.fan_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Straight-line program realizing a [`NetworkSpec`].
#[derive(Debug, Clone)]
pub struct Program {
    pub ops: Vec<Op>,
    pub widths: Vec<usize>,
    pub layers: Vec<LayerShape>,
    pub heads: [NodeId; 4],
    pub n_params: usize,
}

struct Builder {
    ops: Vec<Op>,
    widths: Vec<usize>,
    layers: Vec<LayerShape>,
    n_params: usize,
}

impl Builder {
    fn push(&mut self, op: Op, width: usize) -> NodeId {
        self.ops.push(op);
        self.widths.push(width);
        self.ops.len() - 1
    }

    fn dense(&mut self, name: String, src: NodeId, fan_out: usize) -> NodeId {
        let fan_in = self.widths[src];
        let layer = LayerShape {
            name,
            fan_in,
            fan_out,
            offset: self.n_params,
        };
        self.n_params += layer.len();
        self.layers.push(layer);
        self.push(
            Op::Dense {
                layer: self.layers.len() - 1,
                src,
            },
            fan_out,
        )
    }

    fn act(&mut self, act: Activation, src: NodeId) -> NodeId {
        let w = self.widths[src];
        self.push(Op::Act { act, src }, w)
    }

    fn tanh_dense(&mut self, name: String, src: NodeId, width: usize) -> NodeId {
        let z = self.dense(name, src, width);
        self.act(Activation::Tanh, z)
    }

    fn binary(&mut self, op: Op, a: NodeId) -> NodeId {
        let w = match op {
            Op::Concat { a, b } => self.widths[a] + self.widths[b],
            _ => self.widths[a],
        };
        self.push(op, w)
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.width == 0 || self.branch_layers == 0 {
            return Err(NnError::InvalidSpec("width and branch_layers must be positive".into()));
        }
        if self.architecture == Architecture::Merged && self.trunk_layers == 0 {
            return Err(NnError::InvalidSpec(
                "merged architecture needs at least one trunk layer".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.program().n_params
    }

    /// Layer-by-layer lowering of the network description.
    pub fn program(&self) -> Program {
        let w = self.width;
        let mut b = Builder {
            ops: Vec::new(),
            widths: Vec::new(),
            layers: Vec::new(),
            n_params: 0,
        };
        let t_in = b.push(Op::InputT, 1);
        let r_in = b.push(Op::InputR, 1);

        let mut branch_inputs = [0; 4];
        match self.architecture {
            Architecture::Merged => {
                let mut ht = t_in;
                let mut hr = r_in;
                for k in 0..self.trunk_layers {
                    ht = b.tanh_dense(format!("trunk_t.{k}"), ht, w);
                }
                for k in 0..self.trunk_layers {
                    hr = b.tanh_dense(format!("trunk_r.{k}"), hr, w);
                }
                let tr = b.binary(Op::Concat { a: ht, b: hr }, ht);
                for head in Head::ALL {
                    branch_inputs[head.index()] = if head.uses_r() { tr } else { ht };
                }
            }
            Architecture::Split => {
                let tr = b.binary(Op::Concat { a: t_in, b: r_in }, t_in);
                for head in Head::ALL {
                    let mut h = if head.uses_r() { tr } else { t_in };
                    for k in 0..self.trunk_layers {
                        h = b.tanh_dense(format!("{}.input.{k}", head_name(head)), h, w);
                    }
                    branch_inputs[head.index()] = h;
                }
            }
        }

        let mut heads = [0; 4];
        for head in Head::ALL {
            let name = head_name(head);
            let x = branch_inputs[head.index()];
            let h = match self.block_kind {
                BlockKind::Dense => {
                    let mut h = x;
                    for k in 0..self.branch_layers {
                        h = b.tanh_dense(format!("{name}.dense.{k}"), h, w);
                    }
                    h
                }
                BlockKind::Residual => {
                    let mut h = b.tanh_dense(format!("{name}.proj"), x, w);
                    let rest = self.branch_layers - 1;
                    for k in 0..rest / 2 {
                        let f1 = b.tanh_dense(format!("{name}.res.{k}.a"), h, w);
                        let f2 = b.tanh_dense(format!("{name}.res.{k}.b"), f1, w);
                        h = b.binary(Op::Add { a: h, b: f2 }, h);
                    }
                    if rest % 2 == 1 {
                        h = b.tanh_dense(format!("{name}.tail"), h, w);
                    }
                    h
                }
                BlockKind::GradientPathology => {
                    let u = b.tanh_dense(format!("{name}.gate_u"), x, w);
                    let v = b.tanh_dense(format!("{name}.gate_v"), x, w);
                    let diff = b.binary(Op::Sub { a: v, b: u }, v);
                    let mut h = x;
                    for k in 0..self.branch_layers {
                        let z = b.tanh_dense(format!("{name}.gp.{k}"), h, w);
                        // (1 - z) * u + z * v  ==  u + z * (v - u)
                        let zd = b.binary(Op::Mul { a: z, b: diff }, z);
                        h = b.binary(Op::Add { a: u, b: zd }, u);
                    }
                    h
                }
            };
            let out = b.dense(format!("{name}.out"), h, 1);
            heads[head.index()] = if head.uses_r() && self.conc_activation == OutputActivation::Sigmoid {
                b.act(Activation::Sigmoid, out)
            } else {
                out
            };
        }
        Program {
            ops: b.ops,
            widths: b.widths,
            layers: b.layers,
            heads,
            n_params: b.n_params,
        }
    }

    /// Same architecture with the branch depth chosen so the parameter count
    /// lands as close as possible to `target`.
    pub fn balanced(mut self, target: usize) -> Self {
        let best = (1..=40)
            .map(|l| {
                self.branch_layers = l;
                (l, (self.param_count() as i64 - target as i64).abs())
            })
            .min_by_key(|&(_, d)| d)
            .map(|(l, _)| l)
            .unwrap_or(1);
        self.branch_layers = best;
        self
    }
}

fn head_name(h: Head) -> &'static str {
    match h {
        Head::AnodeConc => "c_s_an",
        Head::CathodeConc => "c_s_ca",
        Head::PhiE => "phi_e",
        Head::PhiSCathode => "phi_s_ca",
    }
}
