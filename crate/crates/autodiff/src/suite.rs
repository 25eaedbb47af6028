//! Finite-difference checks for every primitive, used by the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::check::{grad_check_on, GradCheckOptions, GradCheckReport};
use crate::graph::{Fault, Graph, Var};
use crate::tensor::Tensor;
use crate::Result;

type Build = fn(&mut Graph, &[Var]) -> Result<Var>;

/// One primitive under test. Inputs are drawn uniformly from `[-1, 1]`, or from
/// `[0.5, 2]` when `positive` is set (log, division). The last input is a readout
/// weight, so the checked scalar is `sum(op(inputs) * w)`.
pub struct PrimitiveCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub positive: bool,
    pub build: Build,
}

fn readout(g: &mut Graph, y: Var, w: Var) -> Result<Var> {
    let p = g.mul(y, w)?;
    g.sum(p)
}

macro_rules! case {
    ($name:expr, [$($s:expr),*], $pos:expr, |$g:ident, $v:ident| $body:expr) => {
        PrimitiveCase {
            name: $name,
            shapes: vec![$($s.to_vec()),*],
            positive: $pos,
            build: |$g, $v| {
                let y = $body?;
                let w = *$v.last().expect("readout weight");
                readout($g, y, w)
            },
        }
    };
}

pub fn primitive_cases() -> Vec<PrimitiveCase> {
    vec![
        case!("matmul", [[3, 4], [4, 2], [3, 2]], false, |g, v| g.matmul(v[0], v[1])),
        case!("add", [[2, 3], [2, 3], [2, 3]], false, |g, v| g.add(v[0], v[1])),
        case!("sub", [[2, 3], [2, 3], [2, 3]], false, |g, v| g.sub(v[0], v[1])),
        case!("mul", [[2, 3], [2, 3], [2, 3]], false, |g, v| g.mul(v[0], v[1])),
        case!("div", [[2, 3], [2, 3], [2, 3]], true, |g, v| g.div(v[0], v[1])),
        case!("add_row", [[3, 4], [1, 4], [3, 4]], false, |g, v| g.add_row(v[0], v[1])),
        case!("mul_row", [[3, 4], [4], [3, 4]], false, |g, v| g.mul_row(v[0], v[1])),
        case!("scale", [[2, 3], [2, 3]], false, |g, v| g.scale(v[0], -1.7)),
        case!("add_scalar", [[2, 3], [2, 3]], false, |g, v| g.add_scalar(v[0], 0.3)),
        case!("relu", [[3, 5], [3, 5]], false, |g, v| g.relu(v[0])),
        case!("sigmoid", [[3, 5], [3, 5]], false, |g, v| g.sigmoid(v[0])),
        case!("exp", [[3, 5], [3, 5]], false, |g, v| g.exp(v[0])),
        case!("log", [[3, 5], [3, 5]], true, |g, v| g.log(v[0])),
        case!("softmax", [[3, 5], [3, 5]], false, |g, v| g.softmax(v[0], None)),
        case!("softmax_masked", [[4, 4], [4, 4]], false, |g, v| {
            let mask = Tensor::from_fn(&[4, 4], |k| if k % 4 > k / 4 { f64::NEG_INFINITY } else { 0.0 });
            g.softmax(v[0], Some(&mask))
        }),
        case!("log_softmax", [[3, 5], [3, 5]], false, |g, v| g.log_softmax(v[0])),
        case!("layer_norm", [[3, 6], [3, 6]], false, |g, v| g.layer_norm(v[0], 1e-10)),
        case!("gather", [[3, 4], [5]], false, |g, v| g.gather(v[0], vec![0, 5, 5, 11, 7], &[5])),
        case!("embedding", [[4, 3], [3, 3]], false, |g, v| g.embedding(v[0], &[2, 0, 2])),
        case!("transpose", [[2, 5], [5, 2]], false, |g, v| g.transpose(v[0])),
        case!("reshape", [[2, 6], [3, 4]], false, |g, v| g.reshape(v[0], &[3, 4])),
        case!("concat_cols", [[3, 2], [3, 3], [3, 5]], false, |g, v| g.concat_cols(&[v[0], v[1]])),
        case!("concat_rows", [[2, 3], [1, 3], [3, 3]], false, |g, v| g.concat_rows(&[v[0], v[1]])),
        case!("slice_cols", [[3, 6], [3, 3]], false, |g, v| g.slice_cols(v[0], 2, 5)),
        case!("sum", [[3, 4], []], false, |g, v| g.sum(v[0])),
        case!("mean", [[3, 4], []], false, |g, v| g.mean(v[0])),
        case!("sum_axis0", [[3, 4], [1, 4]], false, |g, v| g.sum_axis(v[0], 0)),
        case!("sum_axis1", [[3, 4], [3, 1]], false, |g, v| g.sum_axis(v[0], 1)),
    ]
}

pub fn random_inputs(case: &PrimitiveCase, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    case.shapes
        .iter()
        .map(|s| {
            Tensor::from_fn(s, |_| if case.positive { rng.gen_range(0.5..2.0) } else { rng.gen_range(-1.0..1.0) })
        })
        .collect()
}

/// Checks one primitive on every coordinate, optionally with a corrupted backward rule.
pub fn check_case(case: &PrimitiveCase, seed: u64, fault: Option<Fault>) -> Result<GradCheckReport> {
    let graph = fault.map_or_else(Graph::new, Graph::with_fault);
    grad_check_on(graph, case.build, &random_inputs(case, seed), &GradCheckOptions::default())
}
