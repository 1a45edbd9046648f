use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::jet::{self, Jet};
use super::spec::{Head, NetworkSpec, Op, Precision, Program};
use super::{NnError, Real};

/// Which input-derivative channels to propagate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub t: bool,
    pub r: bool,
}

impl Channels {
    pub const VALUE: Channels = Channels { t: false, r: false };
    pub const ALL: Channels = Channels { t: true, r: true };
    pub const R: Channels = Channels { t: false, r: true };
}

/// A batch of scaled inputs together with what should be computed for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub channels: Channels,
    pub heads: [bool; 4],
}

impl Batch {
    pub fn new(t: Vec<f64>, r: Vec<f64>) -> Self {
        Self {
            t,
            r,
            channels: Channels::VALUE,
            heads: [true; 4],
        }
    }

    pub fn with_channels(mut self, channels: Channels) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_heads(mut self, heads: &[Head]) -> Self {
        self.heads = [false; 4];
        for h in heads {
            self.heads[h.index()] = true;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Raw output of one head: values and, when propagated, derivatives with
/// respect to the scaled inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HeadEval {
    pub v: Vec<f64>,
    pub t: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
    pub rr: Option<Vec<f64>>,
}

impl HeadEval {
    pub fn zeros_like(&self) -> Self {
        let z = |o: &Option<Vec<f64>>| o.as_ref().map(|v| vec![0.0; v.len()]);
        Self {
            v: vec![0.0; self.v.len()],
            t: z(&self.t),
            r: z(&self.r),
            rr: z(&self.rr),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalResult {
    pub heads: [Option<HeadEval>; 4],
}

/// Adjoint of an [`EvalResult`]; absent entries count as zero.
pub type EvalAdjoint = EvalResult;

impl EvalResult {
    pub fn head(&self, h: Head) -> &HeadEval {
        self.heads[h.index()].as_ref().expect("head was not evaluated")
    }

    pub fn head_mut(&mut self, h: Head) -> &mut HeadEval {
        self.heads[h.index()].as_mut().expect("head was not evaluated")
    }

    /// All-zero adjoint with the layout of `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            heads: self.heads.clone().map(|h| h.map(|h| h.zeros_like())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    program: Program,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, NnError> {
        spec.validate()?;
        Ok(Self {
            program: spec.program(),
            spec,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn n_params(&self) -> usize {
        self.program.n_params
    }

    /// Runs the forward pass and keeps every intermediate for a later
    /// [`Tape::backward`]. Arithmetic uses the network's precision.
    pub fn record(&self, params: &[f64], batch: &Batch) -> Result<Tape<'_>, NnError> {
        Ok(match self.spec.precision {
            Precision::F32 => Tape::F32(TapeT::record(self, params, batch)?),
            Precision::F64 => Tape::F64(TapeT::record(self, params, batch)?),
        })
    }

    pub fn evaluate(&self, params: &[f64], batch: &Batch) -> Result<EvalResult, NnError> {
        Ok(self.record(params, batch)?.outputs())
    }

    /// Head values at `(t, r)`.
    pub fn forward(&self, params: &[f64], t: &[f64], r: &[f64]) -> Result<EvalResult, NnError> {
        self.evaluate(params, &Batch::new(t.to_vec(), r.to_vec()))
    }

    /// Head values plus `d/dt`, `d/dr` and `d2/dr2` of every head that
    /// depends on the corresponding input.
    pub fn forward_with_input_derivatives(&self, params: &[f64], t: &[f64], r: &[f64]) -> Result<EvalResult, NnError> {
        self.evaluate(params, &Batch::new(t.to_vec(), r.to_vec()).with_channels(Channels::ALL))
    }

    /// Value and parameter gradient of `loss(outputs)`; the closure returns
    /// the loss and its adjoint with respect to every output entry.
    pub fn loss_gradient<F>(&self, params: &[f64], batch: &Batch, loss: F) -> Result<(f64, Vec<f64>), NnError>
    where
        F: FnOnce(&EvalResult) -> (f64, EvalAdjoint),
    {
        let tape = self.record(params, batch)?;
        let (value, adj) = loss(&tape.outputs());
        let mut grad = vec![0.0; self.n_params()];
        tape.backward(&adj, &mut grad)?;
        Ok((value, grad))
    }
}

/// Recorded forward pass at either precision.
pub enum Tape<'a> {
    F32(TapeT<'a, f32>),
    F64(TapeT<'a, f64>),
}

impl Tape<'_> {
    pub fn outputs(&self) -> EvalResult {
        match self {
            Tape::F32(t) => t.outputs(),
            Tape::F64(t) => t.outputs(),
        }
    }

    /// Adds the parameter gradient implied by `adj` into `grad`.
    pub fn backward(&self, adj: &EvalAdjoint, grad: &mut [f64]) -> Result<(), NnError> {
        match self {
            Tape::F32(t) => t.backward(adj, grad),
            Tape::F64(t) => t.backward(adj, grad),
        }
    }
}

pub struct TapeT<'a, T: Real> {
    net: &'a Network,
    weights: Vec<T>,
    nodes: Vec<Option<Jet<T>>>,
    rows: usize,
}

fn column<T: Real>(x: &[f64]) -> Array2<T> {
    Array2::from_shape_fn((x.len(), 1), |(i, _)| T::from_f64_lossy(x[i]))
}

impl<'a, T: Real> TapeT<'a, T> {
    fn record(net: &'a Network, params: &[f64], batch: &Batch) -> Result<Self, NnError> {
        let prog = &net.program;
        if params.len() != prog.n_params {
            return Err(NnError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                prog.n_params,
                params.len()
            )));
        }
        if batch.t.len() != batch.r.len() {
            return Err(NnError::ShapeMismatch(format!(
                "t has {} rows, r has {}",
                batch.t.len(),
                batch.r.len()
            )));
        }
        let rows = batch.t.len();
        let weights: Vec<T> = params.iter().map(|&x| T::from_f64_lossy(x)).collect();
        let needed = needed_nodes(prog, &batch.heads);
        let mut nodes: Vec<Option<Jet<T>>> = Vec::with_capacity(prog.ops.len());
        for (i, op) in prog.ops.iter().enumerate() {
            if !needed[i] {
                nodes.push(None);
                continue;
            }
            let get = |k: usize| nodes[k].as_ref().expect("topological order");
            let jet = match *op {
                Op::InputT => Jet {
                    v: column(&batch.t),
                    t: batch.channels.t.then(|| Array2::ones((rows, 1))),
                    r: None,
                },
                Op::InputR => Jet {
                    v: column(&batch.r),
                    t: None,
                    r: batch
                        .channels
                        .r
                        .then(|| (Array2::ones((rows, 1)), Array2::zeros((rows, 1)))),
                },
                Op::Dense { layer, src } => {
                    let (w, b) = layer_views(prog, &weights, layer);
                    let x = get(src);
                    let mut v = x.v.dot(&w);
                    v += &b;
                    Jet {
                        v,
                        t: x.t.as_ref().map(|a| a.dot(&w)),
                        r: x.r.as_ref().map(|(a, aa)| (a.dot(&w), aa.dot(&w))),
                    }
                }
                Op::Act { act, src } => act.forward(get(src)),
                Op::Add { a, b } => jet::add(get(a), get(b), T::one()),
                Op::Sub { a, b } => jet::add(get(a), get(b), -T::one()),
                Op::Mul { a, b } => jet::mul(get(a), get(b)),
                Op::Concat { a, b } => jet::concat(get(a), get(b)),
            };
            nodes.push(Some(jet));
        }
        Ok(Self {
            net,
            weights,
            nodes,
            rows,
        })
    }

    fn outputs(&self) -> EvalResult {
        let to_vec = |a: &Array2<T>| a.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        let mut out = EvalResult::default();
        for h in Head::ALL {
            if let Some(j) = &self.nodes[self.net.program.heads[h.index()]] {
                out.heads[h.index()] = Some(HeadEval {
                    v: to_vec(&j.v),
                    t: j.t.as_ref().map(to_vec),
                    r: j.r.as_ref().map(|(r, _)| to_vec(r)),
                    rr: j.r.as_ref().map(|(_, rr)| to_vec(rr)),
                });
            }
        }
        out
    }

    fn backward(&self, adj: &EvalAdjoint, grad_out: &mut [f64]) -> Result<(), NnError> {
        let prog = &self.net.program;
        if grad_out.len() != prog.n_params {
            return Err(NnError::ShapeMismatch("gradient buffer length".into()));
        }
        let mut adjs: Vec<Option<Jet<T>>> = vec![None; prog.ops.len()];
        for h in Head::ALL {
            let (Some(a), Some(node)) = (&adj.heads[h.index()], &self.nodes[prog.heads[h.index()]]) else {
                continue;
            };
            adjs[prog.heads[h.index()]] = Some(seed_adjoint(node, a, self.rows)?);
        }

        let mut grad = vec![T::zero(); prog.n_params];
        for i in (0..prog.ops.len()).rev() {
            let Some(d) = adjs[i].take() else { continue };
            let node = |k: usize| self.nodes[k].as_ref().expect("forward node");
            match prog.ops[i] {
                Op::InputT | Op::InputR => {}
                Op::Dense { layer, src } => {
                    let l = &prog.layers[layer];
                    let x = node(src);
                    {
                        let (gw, gb) = grad[l.offset..l.offset + l.len()].split_at_mut(l.weight_len());
                        let mut gw = ArrayViewMut2::from_shape((l.fan_in, l.fan_out), gw).expect("layout");
                        let one = T::one();
                        general_mat_mul(one, &x.v.t(), &d.v, one, &mut gw);
                        if let (Some(xt), Some(dt)) = (&x.t, &d.t) {
                            general_mat_mul(one, &xt.t(), dt, one, &mut gw);
                        }
                        if let (Some((xr, xrr)), Some((dr, drr))) = (&x.r, &d.r) {
                            general_mat_mul(one, &xr.t(), dr, one, &mut gw);
                            general_mat_mul(one, &xrr.t(), drr, one, &mut gw);
                        }
                        let mut gb = ArrayViewMut1::from(gb);
                        gb += &d.v.sum_axis(Axis(0));
                    }
                    if matches!(prog.ops[src], Op::InputT | Op::InputR) {
                        continue;
                    }
                    let (w, _) = layer_views(prog, &self.weights, layer);
                    let wt = w.t();
                    let dx = Jet {
                        v: d.v.dot(&wt),
                        t: d.t.as_ref().map(|a| a.dot(&wt)),
                        r: d.r.as_ref().map(|(a, aa)| (a.dot(&wt), aa.dot(&wt))),
                    };
                    accumulate(&mut adjs, src, dx);
                }
                Op::Act { act, src } => {
                    let dz = act.backward(node(src), node(i), &d);
                    accumulate(&mut adjs, src, dz);
                }
                Op::Add { a, b } | Op::Sub { a, b } => {
                    let sign = if matches!(prog.ops[i], Op::Add { .. }) {
                        T::one()
                    } else {
                        -T::one()
                    };
                    let (da, db) = jet::add_backward(node(a), node(b), &d, sign);
                    accumulate(&mut adjs, a, da);
                    accumulate(&mut adjs, b, db);
                }
                Op::Mul { a, b } => {
                    let (da, db) = jet::mul_backward(node(a), node(b), &d);
                    accumulate(&mut adjs, a, da);
                    accumulate(&mut adjs, b, db);
                }
                Op::Concat { a, b } => {
                    let (da, db) = jet::concat_backward(node(a), node(b), &d);
                    accumulate(&mut adjs, a, da);
                    accumulate(&mut adjs, b, db);
                }
            }
        }
        for (k, (o, g)) in grad_out.iter_mut().zip(&grad).enumerate() {
            let g = g.to_f64_lossy();
            if !g.is_finite() {
                return Err(NnError::NonFiniteGradient { index: k });
            }
            *o += g;
        }
        Ok(())
    }
}

fn layer_views<'w, T: Real>(prog: &Program, weights: &'w [T], layer: usize) -> (ArrayView2<'w, T>, ArrayView1<'w, T>) {
    let l = &prog.layers[layer];
    let w = ArrayView2::from_shape((l.fan_in, l.fan_out), &weights[l.offset..l.bias_offset()]).expect("layout");
    let b = ArrayView1::from(&weights[l.bias_offset()..l.offset + l.len()]);
    (w, b)
}

fn accumulate<T: Real>(adjs: &mut [Option<Jet<T>>], k: usize, d: Jet<T>) {
    match &mut adjs[k] {
        Some(acc) => acc.accumulate(&d),
        slot @ None => *slot = Some(d),
    }
}

fn seed_adjoint<T: Real>(node: &Jet<T>, a: &HeadEval, rows: usize) -> Result<Jet<T>, NnError> {
    let check = |v: &[f64]| {
        if v.len() == rows {
            Ok(column::<T>(v))
        } else {
            Err(NnError::ShapeMismatch(format!(
                "adjoint has {} rows, batch {rows}",
                v.len()
            )))
        }
    };
    let mut out = node.zeros_like();
    out.v = check(&a.v)?;
    if let (Some(o), Some(src)) = (out.t.as_mut(), &a.t) {
        *o = check(src)?;
    }
    if let Some((o, oo)) = out.r.as_mut() {
        if let Some(src) = &a.r {
            *o = check(src)?;
        }
        if let Some(src) = &a.rr {
            *oo = check(src)?;
        }
    }
    Ok(out)
}

/// Marks the nodes the requested heads depend on.
fn needed_nodes(prog: &Program, heads: &[bool; 4]) -> Vec<bool> {
    let mut needed = vec![false; prog.ops.len()];
    for h in Head::ALL {
        if heads[h.index()] {
            needed[prog.heads[h.index()]] = true;
        }
    }
    for i in (0..prog.ops.len()).rev() {
        if !needed[i] {
            continue;
        }
        match prog.ops[i] {
            Op::InputT | Op::InputR => {}
            Op::Dense { src, .. } | Op::Act { src, .. } => needed[src] = true,
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::Concat { a, b } => {
                needed[a] = true;
                needed[b] = true;
            }
        }
    }
    needed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, BlockKind, OutputActivation};

    fn small(arch: Architecture, kind: BlockKind) -> Network {
        Network::new(NetworkSpec {
            architecture: arch,
            block_kind: kind,
            trunk_layers: 1,
            branch_layers: 3,
            width: 3,
            conc_activation: OutputActivation::Sigmoid,
            precision: Precision::F64,
        })
        .unwrap()
    }

    #[test]
    fn zero_network_outputs() {
        let net = small(Architecture::Merged, BlockKind::GradientPathology);
        let p = vec![0.0; net.n_params()];
        let out = net
            .forward_with_input_derivatives(&p, &[0.1, 0.9], &[0.3, 0.7])
            .unwrap();
        for h in Head::ALL {
            let e = out.head(h);
            let want = if h.uses_r() { 0.5 } else { 0.0 };
            assert!(e.v.iter().all(|&x| x == want));
            assert!(e.t.as_ref().unwrap().iter().all(|&x| x == 0.0));
            assert_eq!(e.r.is_some(), h.uses_r());
        }
    }

    #[test]
    fn head_subset_skips_other_branches() {
        let net = small(Architecture::Split, BlockKind::Dense);
        let p: Vec<f64> = (0..net.n_params())
            .map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5)
            .collect();
        let b = Batch::new(vec![0.2], vec![0.4]).with_heads(&[Head::PhiE]);
        let out = net.evaluate(&p, &b).unwrap();
        assert!(out.heads[Head::AnodeConc.index()].is_none());
        let full = net.forward(&p, &[0.2], &[0.4]).unwrap();
        assert_eq!(out.head(Head::PhiE).v, full.head(Head::PhiE).v);
    }
}
