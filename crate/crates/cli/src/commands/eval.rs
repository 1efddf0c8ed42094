use std::path::Path;

use serde::{Deserialize, Serialize};
use volmatte::metrics::{aggregate, evaluate, AggregateReport, ConnParams, MatteMetrics, MetricOptions};

use super::{print_json, read_alpha, write_json};
use crate::args::EvalArgs;
use crate::fail::{CmdResult, Failure};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCase {
    pub pred: String,
    pub gt: String,
    pub metrics: MatteMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub options: MetricOptions,
    pub cases: Vec<EvalCase>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<AggregateReport>,
}

pub fn evaluate_pair(pred: &Path, gt: &Path, opts: &MetricOptions) -> Result<MatteMetrics, Failure> {
    let p = read_alpha(pred)?;
    let g = read_alpha(gt)?;
    if p.geom.dims != g.geom.dims {
        return Err(Failure::Usage(format!(
            "{} has dims {:?} but {} has {:?}",
            pred.display(),
            p.geom.dims,
            gt.display(),
            g.geom.dims
        )));
    }
    Ok(evaluate(&p, &g, opts)?)
}

pub fn run(args: &EvalArgs) -> CmdResult {
    let gts: Vec<_> = match (args.pred.len(), args.gt.len()) {
        (n, m) if n == m => args.gt.clone(),
        (n, 1) => vec![args.gt[0].clone(); n],
        (n, m) => {
            return Err(Failure::Usage(format!(
                "{n} predictions but {m} references; pass one reference or one per prediction"
            )))
        }
    };
    let opts = MetricOptions {
        grad_sigma: args.grad_sigma,
        conn: ConnParams {
            theta_step: args.conn_step,
            delta: args.conn_delta,
        },
    };
    let mut cases = Vec::with_capacity(args.pred.len());
    for (p, g) in args.pred.iter().zip(&gts) {
        cases.push(EvalCase {
            pred: p.display().to_string(),
            gt: g.display().to_string(),
            metrics: evaluate_pair(p, g, &opts)?,
        });
    }
    let aggregate = if args.aggregate {
        let m: Vec<MatteMetrics> = cases.iter().map(|c| c.metrics).collect();
        Some(aggregate(&m)?)
    } else {
        None
    };
    let report = EvalReport {
        options: opts,
        cases,
        aggregate,
    };
    if let Some(out) = &args.out {
        write_json(&report, out)?;
    }
    print_json(&report)
}
