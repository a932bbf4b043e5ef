//! Reader forward pass.
//!
//! Question and passage go through a shared two-layer window contextualizer.
//! A projected scaled dot product gives the similarity matrix `E` (`n x m`);
//! each passage word attends over the question with a softmax of its column,
//! the attended summary is fused back into the word, and two pointer heads
//! read the fused passage. The end head also sees a summary of the fused
//! passage weighted by the start distribution.

use super::params::{ReaderParams, EMBEDDING, PARAM_NAMES};
use crate::corpus::EncodedExample;
use crate::error::{Error, Result};
use crate::numerics::{softmax_temp, Tape, Tensor, Var};

/// Tape handles of the eleven parameter arrays, in [`PARAM_NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars(pub [Var; 11]);

impl ParamVars {
    fn get(&self, name: &str) -> Var {
        let i = PARAM_NAMES.iter().position(|n| *n == name).expect("known parameter name");
        self.0[i]
    }
}

/// Outputs of [`forward_graph`], all on the tape.
#[derive(Debug, Clone, Copy)]
pub struct ReaderGraph {
    /// `[m]`
    pub start_logits: Var,
    /// `[m]`
    pub end_logits: Var,
    /// `[m, n]`, rows over question positions.
    pub attention: Var,
}

/// Parameters placed on a tape with the token ids rewritten against the
/// bound embedding table.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: ParamVars,
    pub question: Vec<usize>,
    pub passage: Vec<usize>,
    /// Global embedding row of each bound table row.
    pub rows: Vec<usize>,
}

/// Places parameters on the tape. Only the embedding rows used by `enc` are
/// copied, so gradients for the table come back compact; see [`Bound::rows`].
pub fn bind(tape: &mut Tape, params: &ReaderParams, enc: &EncodedExample, trainable: bool) -> Result<Bound> {
    let table = &params.tensors()[EMBEDDING];
    let vocab = table.rows();
    let mut rows: Vec<usize> = enc.question.iter().chain(&enc.passage).copied().collect();
    rows.sort_unstable();
    rows.dedup();
    if let Some(&bad) = rows.last().filter(|&&r| r >= vocab) {
        return Err(Error::Internal(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let local = |id: usize| rows.binary_search(&id).expect("id collected above");
    let question = enc.question.iter().map(|&t| local(t)).collect();
    let passage = enc.passage.iter().map(|&t| local(t)).collect();
    let d = table.cols();
    let mut data = Vec::with_capacity(rows.len() * d);
    for &r in &rows {
        data.extend_from_slice(table.row(r));
    }
    let compact = Tensor::new(vec![rows.len(), d], data)?;

    let mut put = |t: Tensor| if trainable { tape.leaf(t) } else { tape.constant(t) };
    let mut vars = Vec::with_capacity(PARAM_NAMES.len());
    vars.push(put(compact));
    for t in &params.tensors()[1..] {
        vars.push(put(t.clone()));
    }
    Ok(Bound {
        vars: ParamVars(vars.try_into().expect("eleven parameters")),
        question,
        passage,
        rows,
    })
}

/// Places every parameter array (including the full embedding table) on the tape.
pub fn bind_full(tape: &mut Tape, params: &ReaderParams, trainable: bool) -> ParamVars {
    let vars: Vec<Var> = params
        .tensors()
        .iter()
        .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
        .collect();
    ParamVars(vars.try_into().expect("eleven parameters"))
}

fn window(tape: &mut Tape, x: Var) -> Result<Var> {
    let prev = tape.shift_rows(x, 1)?;
    let next = tape.shift_rows(x, -1)?;
    tape.concat_cols(&[prev, x, next])
}

fn context_layer(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let win = window(tape, x)?;
    let lin = tape.matmul(win, w)?;
    let lin = tape.add_bias(lin, b)?;
    tape.tanh(lin)
}

fn contextualize(tape: &mut Tape, p: &ParamVars, ids: &[usize]) -> Result<Var> {
    let x = tape.gather_rows(p.get("embedding"), ids)?;
    let h1 = context_layer(tape, x, p.get("ctx1_w"), p.get("ctx1_b"))?;
    context_layer(tape, h1, p.get("ctx2_w"), p.get("ctx2_b"))
}

/// `(V [n, h], U [m, h])`.
pub fn encode_graph(tape: &mut Tape, p: &ParamVars, question: &[usize], passage: &[usize]) -> Result<(Var, Var)> {
    if question.is_empty() || passage.is_empty() {
        return Err(Error::Degenerate(format!(
            "reader needs a non-empty question and passage (n={}, m={})",
            question.len(),
            passage.len()
        )));
    }
    Ok((contextualize(tape, p, question)?, contextualize(tape, p, passage)?))
}

/// `E = (V Wq)(U Wp)^T / sqrt(h)`, shape `[n, m]`.
pub fn similarity_graph(tape: &mut Tape, p: &ParamVars, v: Var, u: Var) -> Result<Var> {
    let h = tape.value(v).cols();
    let vq = tape.matmul(v, p.get("sim_q"))?;
    let up = tape.matmul(u, p.get("sim_p"))?;
    let upt = tape.transpose(up)?;
    let e = tape.matmul(vq, upt)?;
    tape.scale(e, 1.0 / (h as f64).sqrt())
}

/// Returns `(fused [m, h], attention [m, n])`.
pub fn attend_fuse_graph(tape: &mut Tape, p: &ParamVars, e: Var, v: Var, u: Var) -> Result<(Var, Var)> {
    let et = tape.transpose(e)?;
    let attention = tape.row_softmax(et, 1.0, None)?;
    let summary = tape.matmul(attention, v)?;
    let prod = tape.mul(u, summary)?;
    let cat = tape.concat_cols(&[u, summary, prod])?;
    let lin = tape.matmul(cat, p.get("fuse_w"))?;
    let lin = tape.add_bias(lin, p.get("fuse_b"))?;
    Ok((tape.tanh(lin)?, attention))
}

/// Full forward pass on the tape. `question` and `passage` index the bound
/// embedding table.
pub fn forward_graph(tape: &mut Tape, p: &ParamVars, question: &[usize], passage: &[usize]) -> Result<ReaderGraph> {
    let m = passage.len();
    let (v, u) = encode_graph(tape, p, question, passage)?;
    let e = similarity_graph(tape, p, v, u)?;
    let (fused, attention) = attend_fuse_graph(tape, p, e, v, u)?;

    let g = window(tape, fused)?;
    let start = tape.matmul(g, p.get("start_w"))?;
    let start_logits = tape.reshape(start, vec![m])?;

    let p1 = tape.row_softmax(start_logits, 1.0, None)?;
    let p1 = tape.reshape(p1, vec![1, m])?;
    let c = tape.matmul(p1, fused)?;
    let c = tape.repeat_rows(c, m)?;
    let fc = tape.mul(fused, c)?;
    let end_in = tape.concat_cols(&[g, c, fc])?;
    let end = tape.matmul(end_in, p.get("end_w"))?;
    let end_logits = tape.reshape(end, vec![m])?;

    Ok(ReaderGraph {
        start_logits,
        end_logits,
        attention,
    })
}

/// Value-level outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderOutput {
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    /// `[m, n]`
    pub attention: Tensor,
    /// Distributions at temperature 1.
    pub start_dist: Vec<f64>,
    pub end_dist: Vec<f64>,
    /// The same logits renormalized at `tau`.
    pub tau: f64,
    pub start_soft: Vec<f64>,
    pub end_soft: Vec<f64>,
}

impl ReaderOutput {
    pub fn passage_len(&self) -> usize {
        self.start_logits.len()
    }
}

/// Runs the reader with frozen parameters. Pure: repeated calls are bit-identical.
pub fn forward(params: &ReaderParams, enc: &EncodedExample, tau: f64) -> Result<ReaderOutput> {
    let mut tape = Tape::new();
    let b = bind(&mut tape, params, enc, false)?;
    let g = forward_graph(&mut tape, &b.vars, &b.question, &b.passage)?;
    let start_logits = tape.value(g.start_logits).data().to_vec();
    let end_logits = tape.value(g.end_logits).data().to_vec();
    Ok(ReaderOutput {
        start_dist: softmax_temp(&start_logits, 1.0, None)?,
        end_dist: softmax_temp(&end_logits, 1.0, None)?,
        start_soft: softmax_temp(&start_logits, tau, None)?,
        end_soft: softmax_temp(&end_logits, tau, None)?,
        tau,
        attention: tape.value(g.attention).clone(),
        start_logits,
        end_logits,
    })
}

/// Contextualized question and passage representations `(V, U)`.
pub fn encode(params: &ReaderParams, enc: &EncodedExample) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let b = bind(&mut tape, params, enc, false)?;
    let (v, u) = encode_graph(&mut tape, &b.vars, &b.question, &b.passage)?;
    Ok((tape.value(v).clone(), tape.value(u).clone()))
}

/// Similarity matrix `E [n, m]` of given representations.
pub fn similarity(params: &ReaderParams, v: &Tensor, u: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = bind_full(&mut tape, params, false);
    let (v, u) = (tape.constant(v.clone()), tape.constant(u.clone()));
    check_hidden(&tape, params, v, u)?;
    let e = similarity_graph(&mut tape, &p, v, u)?;
    Ok(tape.value(e).clone())
}

/// Fused passage `[m, h]` and attention `[m, n]` for a similarity matrix.
pub fn attend_and_fuse(params: &ReaderParams, e: &Tensor, v: &Tensor, u: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, m) = (v.rows(), u.rows());
    if e.shape() != [n, m] {
        return Err(Error::Shape {
            op: "attend_and_fuse",
            left: e.shape().to_vec(),
            right: vec![n, m],
        });
    }
    let mut tape = Tape::new();
    let p = bind_full(&mut tape, params, false);
    let (e, v, u) = (tape.constant(e.clone()), tape.constant(v.clone()), tape.constant(u.clone()));
    check_hidden(&tape, params, v, u)?;
    let (f, a) = attend_fuse_graph(&mut tape, &p, e, v, u)?;
    Ok((tape.value(f).clone(), tape.value(a).clone()))
}

fn check_hidden(tape: &Tape, params: &ReaderParams, v: Var, u: Var) -> Result<()> {
    let h = params.dims().hidden;
    let (vs, us) = (tape.value(v).shape(), tape.value(u).shape());
    if vs.len() != 2 || us.len() != 2 || vs[1] != h || us[1] != h {
        return Err(Error::Shape {
            op: "reader representations",
            left: vs.to_vec(),
            right: us.to_vec(),
        });
    }
    Ok(())
}
