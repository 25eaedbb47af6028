use crate::graph::{Graph, Var};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Upper bound on coordinates probed per input, spread evenly; `None` probes all.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-5, max_coords: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Probe>,
    pub probes: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central finite
/// differences. `f` builds its computation on the graph it is handed, once for the
/// analytic pass and twice per probed coordinate.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_on(Graph::new(), f, inputs, opts)
}

/// As [`grad_check`], with the analytic pass run on `graph` (for example one built
/// by [`Graph::with_fault`]).
pub fn grad_check_on<F>(mut graph: Graph, f: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let vars = inputs.iter().map(|t| graph.param(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut graph, &vars)?;
    let grads = graph.backward(out)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, probes: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (input, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[input], t);
        let n = t.len();
        let k = opts.max_coords.map_or(n, |m| m.min(n));
        for s in 0..k {
            let coord = s * n / k.max(1);
            let x0 = t.data()[coord];
            work[input].data_mut()[coord] = x0 + opts.h;
            let fp = eval(&f, &work)?;
            work[input].data_mut()[coord] = x0 - opts.h;
            let fm = eval(&f, &work)?;
            work[input].data_mut()[coord] = x0;
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = analytic.data()[coord];
            let e = relative_error(a, numeric);
            report.probes += 1;
            if e >= report.max_rel_error {
                report.max_rel_error = e;
                report.worst = Some(Probe { input, coord, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}
