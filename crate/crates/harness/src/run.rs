//! Stage execution, output files and the run summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mgdfis_core::dpam::dpam;
use mgdfis_core::ftssa::ftssa;
use mgdfis_core::gdim::{dmm, gdim_trace, gmm};
use mgdfis_core::io::{read_tensor, write_tensor};
use mgdfis_core::pipeline::mgdfis_trace;
use mgdfis_core::{MgdfisParams, Tensor, TensorError};

use crate::config::{dims_string, RunConfig, Stage};
use crate::error::HarnessError;
use crate::init::{init_inputs, init_params};
use crate::threads::{for_each_batch, thread_cap};

pub const SUMMARY_FILE: &str = "summary.txt";
/// Everything after this line of the summary is timing and varies between runs.
pub const TIMING_MARKER: &str = "[timing]";

/// Named output maps in the order they are written.
pub type Outputs = Vec<(&'static str, Tensor<f64>)>;

fn names(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Ftssa => &["ftssa"],
        Stage::Gmm => &["f_gmm"],
        Stage::Dmm => &["f_hat"],
        Stage::Gdim => &["f_agg", "f_gmm", "f_hat"],
        Stage::Dpam => &["amap"],
        Stage::Full => &["f_agg", "f_gmm", "f_hat", "amap", "out"],
    }
}

/// One batch item through `stage`.
fn execute_item(
    stage: Stage,
    p: &MgdfisParams<f64>,
    f1: &Tensor<f64>,
    f2: &Tensor<f64>,
) -> mgdfis_core::Result<Vec<Tensor<f64>>> {
    let d = &p.gdim;
    Ok(match stage {
        Stage::Ftssa => vec![ftssa(f1, &d.dmm.ftssa)?],
        Stage::Gmm => vec![gmm(f1, &d.gmm)?],
        Stage::Dmm => vec![dmm(f1, &d.dmm)?],
        Stage::Gdim => {
            let t = gdim_trace(f1, f2, d)?;
            vec![t.f_agg, t.f_gmm, t.f_hat]
        }
        Stage::Dpam => {
            let t = gdim_trace(f1, f2, d)?;
            vec![dpam(&t.f_agg, &t.f_hat, &p.dpam)?]
        }
        Stage::Full => {
            let t = mgdfis_trace(f1, f2, p)?;
            vec![t.f_agg, t.f_gmm, t.f_hat, t.amap, t.out]
        }
    })
}

/// Runs `stage` on every batch item, items spread over at most `threads`
/// workers. Results do not depend on the thread count.
pub fn execute(
    stage: Stage,
    p: &MgdfisParams<f64>,
    f1: &Tensor<f64>,
    f2: &Tensor<f64>,
    threads: usize,
) -> mgdfis_core::Result<Outputs> {
    if f1.batch() != f2.batch() {
        return Err(TensorError::ShapeMismatch {
            op: "run",
            axis: "batch",
            expected: f1.batch(),
            actual: f2.batch(),
        });
    }
    let per_item = for_each_batch(f1.batch(), threads, |b| {
        execute_item(stage, p, &item(f1, b), &item(f2, b))
    })?;
    let names = names(stage);
    let mut out = Vec::with_capacity(names.len());
    for (i, &name) in names.iter().enumerate() {
        let parts: Vec<&Tensor<f64>> = per_item.iter().map(|v| &v[i]).collect();
        out.push((name, stack(&parts)?));
    }
    Ok(out)
}

fn item(t: &Tensor<f64>, b: usize) -> Tensor<f64> {
    let [_, c, h, w] = t.dims();
    let len = c * h * w;
    Tensor::from_vec([1, c, h, w], t.data()[b * len..(b + 1) * len].to_vec())
        .expect("batch slice has item dims")
}

fn stack(items: &[&Tensor<f64>]) -> mgdfis_core::Result<Tensor<f64>> {
    let [_, c, h, w] = items[0].dims();
    let data = items
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    Tensor::from_vec([items.len(), c, h, w], data)
}

fn load(path: &Path) -> Result<Tensor<f64>, HarnessError> {
    read_tensor(path).map_err(|e| HarnessError::in_file(path, e))
}

/// Inputs from the configured files, or drawn from the seed. File inputs
/// override the configured dims.
pub fn inputs(cfg: &RunConfig) -> Result<(RunConfig, Tensor<f64>, Tensor<f64>), HarnessError> {
    match (&cfg.f1_path, &cfg.f2_path) {
        (Some(a), Some(b)) => {
            let (f1, f2) = (load(a)?, load(b)?);
            let mut cfg = cfg.clone();
            cfg.f1 = f1.dims();
            cfg.f2 = f2.dims();
            Ok((cfg, f1, f2))
        }
        (None, None) => {
            let (f1, f2) = init_inputs(cfg);
            Ok((cfg.clone(), f1, f2))
        }
        _ => Err(HarnessError::Usage(
            "f1_path and f2_path must be given together".into(),
        )),
    }
}

pub struct RunReport {
    pub outputs: Outputs,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn stats_line(name: &str, t: &Tensor<f64>) -> String {
    format!(
        "output.{name} = {} min={:e} max={:e} mean={:e}",
        dims_string(t.dims()),
        t.min(),
        t.max(),
        t.mean()
    )
}

/// Loads or draws inputs, initializes parameters, runs the configured
/// stage and writes `<name>.mgdt` files plus the summary into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    let start = Instant::now();
    let (cfg, f1, f2) = inputs(cfg)?;
    let params = init_params(&cfg)?;
    let outputs = execute(cfg.stage, &params, &f1, &f2, thread_cap())?;
    let elapsed = start.elapsed();

    fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::in_file(&cfg.out, e.into()))?;
    let mut files = Vec::new();
    let mut summary = String::new();
    let _ = writeln!(summary, "stage = {}", cfg.stage);
    let _ = writeln!(summary, "seed = {}", cfg.seed);
    let _ = writeln!(summary, "f1 = {}", dims_string(cfg.f1));
    let _ = writeln!(summary, "f2 = {}", dims_string(cfg.f2));
    for (name, t) in &outputs {
        let path = cfg.out.join(format!("{name}.mgdt"));
        write_tensor(&path, t).map_err(|e| HarnessError::in_file(&path, e))?;
        let _ = writeln!(summary, "{}", stats_line(name, t));
        files.push(path);
    }
    let _ = writeln!(summary, "{TIMING_MARKER}");
    let _ = writeln!(summary, "wall_ms = {:.3}", elapsed.as_secs_f64() * 1e3);
    let path = cfg.out.join(SUMMARY_FILE);
    fs::write(&path, &summary).map_err(|e| HarnessError::in_file(&path, e.into()))?;
    files.push(path);
    Ok(RunReport {
        outputs,
        files,
        summary,
    })
}

/// The summary without its timing section.
pub fn deterministic_part(summary: &str) -> &str {
    summary.split(TIMING_MARKER).next().unwrap_or(summary)
}
