//! Subcommand implementations behind the `gprf` binary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;

use crate::blocks::{grid_partition, pa_tree_partition, EdgeSet, Partition, Rect};
use crate::config::{EdgeRule, ExperimentConfig, Generator, Method, PartitionKind};
use crate::datagen::{gen_events, gen_events_at, gen_uniform, read_catalog, Dataset, GENERATOR_ID};
use crate::error::{GprfError, Result};
use crate::mapfit::{fit, fit_hybrid, map_objective, mean_location_error, ExactModel, FitResult, LocationPrior};
use crate::objective::{AssemblyFault, GprfModel};
use crate::verify::{run_suite, VerifyReport};

/// Runs `f` on a rayon pool with the requested number of threads.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    let pool = b.build().map_err(|e| GprfError::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn write_key_values(path: &Path, kv: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in kv {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `manifest_<command>.txt` echoing the resolved configuration.
pub fn write_manifest(dir: &Path, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let mut kv = vec![
        ("command".to_string(), command.to_string()),
        ("gprf_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("rng".to_string(), GENERATOR_ID.to_string()),
    ];
    kv.extend(cfg.resolved()?);
    let path = dir.join(format!("manifest_{command}.txt"));
    write_key_values(&path, &kv)?;
    Ok(path)
}

/// Generates the configured dataset; returns the CSV path.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir)?;
    let path = cfg.dataset_path().unwrap_or_else(|| out_dir.join("dataset.csv"));
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut spec = cfg.synthetic_spec()?;
    let ds = match cfg.generator()? {
        Generator::Uniform => gen_uniform(&spec)?,
        Generator::Events => match cfg.event_catalog() {
            Some(cat) => {
                let loc = read_catalog(&cat)?;
                spec.n = loc.nrows();
                gen_events_at(&spec, loc)?
            }
            None => gen_events(&spec, &cfg.event_geometry()?)?,
        },
    };
    ds.save(&path)?;
    write_manifest(&out_dir, "generate", cfg)?;
    log::info!("wrote {} ({} points)", path.display(), ds.n());
    Ok(path)
}

pub fn build_partition(cfg: &ExperimentConfig, x: &Array2<f64>) -> Result<Partition> {
    let n = x.nrows();
    let m = cfg.block_size()?;
    match cfg.partition_kind()? {
        PartitionKind::Grid => {
            if x.ncols() != 2 {
                return Err(GprfError::WrongPartitionKind(format!(
                    "grid partition needs 2-D inputs, data has {}",
                    x.ncols()
                )));
            }
            let cells = ((n as f64 / m as f64).sqrt().round() as usize).max(1);
            grid_partition(x.view(), cells, Rect::bounding(x.view()))
        }
        PartitionKind::PaTree => pa_tree_partition(x.view(), m),
        PartitionKind::Contiguous => Partition::contiguous(n, m),
        PartitionKind::Single => Partition::single(n),
    }
}

pub fn build_edges(rule: EdgeRule, partition: &Partition, x: &Array2<f64>) -> Result<EdgeSet> {
    let m = partition.n_blocks();
    match rule {
        EdgeRule::Empty => Ok(EdgeSet::empty(m)),
        EdgeRule::Complete => Ok(EdgeSet::complete(m)),
        EdgeRule::Chain => Ok(EdgeSet::chain(m)),
        EdgeRule::Grid8 => EdgeSet::grid_neighbors(partition),
        EdgeRule::Distance(tau) => EdgeSet::distance_threshold(partition, x.view(), tau),
    }
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg
        .dataset_path()
        .ok_or_else(|| GprfError::Config("dataset path is required".into()))?;
    if !path.exists() {
        return Err(GprfError::Config(format!("dataset {} does not exist", path.display())));
    }
    Dataset::load(&path)
}

/// Final metrics of a fit run, also written to `summary.txt`.
#[derive(Debug, Clone)]
pub struct FitSummary {
    pub method: Method,
    pub final_objective: f64,
    pub initial_mean_error: f64,
    pub final_mean_error: f64,
    pub wall_time_s: f64,
    pub n_blocks: usize,
    pub max_block_size: usize,
    pub n_edges: usize,
    pub iterations: usize,
    pub termination: &'static str,
    pub grad_norm: f64,
    pub output_dir: PathBuf,
}

impl FitSummary {
    fn key_values(&self) -> Vec<(String, String)> {
        vec![
            ("method".into(), self.method.name().into()),
            ("final_objective".into(), self.final_objective.to_string()),
            ("initial_mean_error".into(), self.initial_mean_error.to_string()),
            ("final_mean_error".into(), self.final_mean_error.to_string()),
            ("wall_time_s".into(), format!("{:.3}", self.wall_time_s)),
            ("blocks".into(), self.n_blocks.to_string()),
            ("max_block_size".into(), self.max_block_size.to_string()),
            ("edges".into(), self.n_edges.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("termination".into(), self.termination.into()),
            ("grad_norm".into(), self.grad_norm.to_string()),
        ]
    }
}

pub fn write_matrix_csv(path: &Path, prefix: &str, a: &Array2<f64>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    wr.write_record((1..=a.ncols()).map(|c| format!("{prefix}{c}")))?;
    for row in a.outer_iter() {
        wr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let label = path.display().to_string();
    let mut rd = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let d = rd.headers()?.len();
    let mut vals = Vec::new();
    for rec in rd.records() {
        for f in rec?.iter() {
            vals.push(f.trim().parse::<f64>().map_err(|_| GprfError::Parse {
                path: label.clone(),
                msg: format!("bad number {f:?}"),
            })?);
        }
    }
    let n = if d == 0 { 0 } else { vals.len() / d };
    Array2::from_shape_vec((n, d), vals).map_err(|e| GprfError::Parse {
        path: label,
        msg: e.to_string(),
    })
}

/// Builds the configured model at the observed locations.
fn build_model(cfg: &ExperimentConfig, ds: &Dataset, x: Array2<f64>) -> Result<(Option<GprfModel<f64>>, Partition, EdgeSet)> {
    let kernel = cfg.kernel()?;
    let method = cfg.method()?;
    if method == Method::FullGp {
        let p = Partition::single(ds.n())?;
        return Ok((None, p, EdgeSet::empty(1)));
    }
    let partition = build_partition(cfg, &ds.x_obs)?;
    let edges = if method == Method::Local {
        EdgeSet::empty(partition.n_blocks())
    } else {
        build_edges(cfg.edge_rule()?, &partition, &ds.x_obs)?
    };
    let model = GprfModel::new(kernel, partition.clone(), edges.clone(), x, ds.y.clone())?;
    Ok((Some(model), partition, edges))
}

/// Fits the configured method and writes `x_hat.csv`, `trajectory.csv`,
/// `summary.txt`, `partition.csv`, `edges.csv` and the manifest.
pub fn cmd_fit(cfg: &ExperimentConfig, origin: Instant) -> Result<FitSummary> {
    let mut cfg = cfg.clone();
    cfg.attach_dataset_meta()?;
    let ds = load_dataset(&cfg)?;
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir)?;
    write_manifest(&out_dir, "fit", &cfg)?;
    let method = cfg.method()?;
    let mut fc = cfg.fit_config()?;
    fc.clock_origin = Some(origin);
    let prior = LocationPrior::new(ds.x_obs.clone(), cfg.sigma_obs()?)?;
    let initial = mean_location_error(&ds.x_obs, &ds.x_true)?;
    let start = Instant::now();

    let (model, partition, edges) = build_model(&cfg, &ds, ds.x_obs.clone())?;
    let result: FitResult<f64> = with_workers(cfg.workers()?, || match (method, model) {
        (Method::FullGp, _) => {
            let mut m = ExactModel::new(cfg.kernel()?, ds.x_obs.clone(), ds.y.clone())?;
            fit(&mut m, &prior, &fc, Some(&ds.x_true))
        }
        (Method::Hybrid, Some(mut m)) => fit_hybrid(&mut m, &prior, &fc, cfg.hybrid_stage1_iters()?, Some(&ds.x_true)),
        (_, Some(mut m)) => fit(&mut m, &prior, &fc, Some(&ds.x_true)),
        (_, None) => unreachable!("surrogate methods always build a model"),
    })?;

    write_matrix_csv(&out_dir.join("x_hat.csv"), "x", &result.x_hat)?;
    result
        .trajectory
        .write_csv(BufWriter::new(File::create(out_dir.join("trajectory.csv"))?))?;
    partition.write_csv(BufWriter::new(File::create(out_dir.join("partition.csv"))?))?;
    edges.write_csv(BufWriter::new(File::create(out_dir.join("edges.csv"))?))?;

    let summary = FitSummary {
        method,
        final_objective: result.objective,
        initial_mean_error: initial,
        final_mean_error: mean_location_error(&result.x_hat, &ds.x_true)?,
        wall_time_s: start.elapsed().as_secs_f64(),
        n_blocks: partition.n_blocks(),
        max_block_size: partition.max_block_size(),
        n_edges: edges.len(),
        iterations: result.iterations,
        termination: result.termination.name(),
        grad_norm: result.grad_norm,
        output_dir: out_dir.clone(),
    };
    let mut kv = summary.key_values();
    let h = &result.kernel.hyper;
    kv.push(("signal_variance".into(), h.signal_variance.to_string()));
    kv.push((
        "lengthscales".into(),
        h.lengthscales.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
    ));
    kv.push(("noise_variance".into(), h.noise_variance.to_string()));
    write_key_values(&out_dir.join("summary.txt"), &kv)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub initial_mean_error: f64,
    pub mean_error: f64,
    pub objective: f64,
}

/// Recomputes metrics for a saved `X_hat` (default `output_dir/x_hat.csv`).
pub fn cmd_eval(cfg: &ExperimentConfig, x_hat_path: Option<&Path>) -> Result<EvalSummary> {
    let mut cfg = cfg.clone();
    cfg.attach_dataset_meta()?;
    let ds = load_dataset(&cfg)?;
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir)?;
    let path = x_hat_path.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("x_hat.csv"));
    let x_hat = read_matrix_csv(&path)?;
    if x_hat.dim() != ds.x_true.dim() {
        return Err(GprfError::DimensionMismatch(format!(
            "X_hat is {:?}, dataset locations are {:?}",
            x_hat.dim(),
            ds.x_true.dim()
        )));
    }
    let prior = LocationPrior::new(ds.x_obs.clone(), cfg.sigma_obs()?)?;
    let (model, _, _) = build_model(&cfg, &ds, x_hat.clone())?;
    let objective = with_workers(cfg.workers()?, || match model {
        Some(m) => map_objective(&m, &prior).map(|r| r.value),
        None => map_objective(&ExactModel::new(cfg.kernel()?, x_hat.clone(), ds.y.clone())?, &prior).map(|r| r.value),
    })?;
    let s = EvalSummary {
        initial_mean_error: mean_location_error(&ds.x_obs, &ds.x_true)?,
        mean_error: mean_location_error(&x_hat, &ds.x_true)?,
        objective,
    };
    write_key_values(
        &out_dir.join("eval.txt"),
        &[
            ("x_hat".into(), path.display().to_string()),
            ("method".into(), cfg.method()?.name().into()),
            ("objective".into(), s.objective.to_string()),
            ("initial_mean_error".into(), s.initial_mean_error.to_string()),
            ("mean_error".into(), s.mean_error.to_string()),
        ],
    )?;
    write_manifest(&out_dir, "eval", &cfg)?;
    Ok(s)
}

pub fn cmd_verify(fault: AssemblyFault) -> Result<VerifyReport> {
    run_suite(fault)
}
