//! Flat `key=value` experiment configuration.
//!
//! Unknown keys are rejected. Relative paths resolve against the directory of
//! the config file. Keys left unset fall back to the dataset sidecar (for
//! kernel and noise settings) and then to generator defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::datagen::{read_key_values, EventGeometry, SyntheticSpec};
use crate::error::{GprfError, Result};
use crate::kernels::{Hyperparams, KernelFamily, KernelSpec};
use crate::mapfit::FitConfig;

pub const KEYS: &[&str] = &[
    "dataset",
    "generator",
    "n",
    "dim",
    "outputs",
    "seed",
    "sigma_obs",
    "event_region_km",
    "event_clusters",
    "event_cluster_std_km",
    "event_depth_mean_km",
    "event_depth_std_km",
    "event_catalog",
    "kernel",
    "signal_variance",
    "lengthscales",
    "noise_variance",
    "jitter",
    "coord_groups",
    "method",
    "partition",
    "block_size",
    "edges",
    "optimize_x",
    "optimize_theta",
    "max_iters",
    "grad_tol",
    "wall_clock_budget_s",
    "trajectory_stride",
    "hybrid_stage1_iters",
    "nonneg_coords",
    "workers",
    "output_dir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Uniform,
    Events,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    FullGp,
    Local,
    Gprf,
    Hybrid,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::FullGp => "full_gp",
            Method::Local => "local",
            Method::Gprf => "gprf",
            Method::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Grid,
    PaTree,
    Contiguous,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeRule {
    Empty,
    Complete,
    Chain,
    Grid8,
    Distance(f64),
}

impl EdgeRule {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "empty" => EdgeRule::Empty,
            "complete" => EdgeRule::Complete,
            "chain" => EdgeRule::Chain,
            "grid8" => EdgeRule::Grid8,
            _ => {
                let tau = s
                    .strip_prefix("dist:")
                    .and_then(|t| t.trim().parse::<f64>().ok())
                    .filter(|t| *t >= 0.0)
                    .ok_or_else(|| GprfError::Config(format!("unknown edge rule {s:?}")))?;
                EdgeRule::Distance(tau)
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            EdgeRule::Empty => "empty".into(),
            EdgeRule::Complete => "complete".into(),
            EdgeRule::Chain => "chain".into(),
            EdgeRule::Grid8 => "grid8".into(),
            EdgeRule::Distance(t) => format!("dist:{t}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    raw: BTreeMap<String, String>,
    base_dir: PathBuf,
    /// Sidecar of the dataset, when one exists.
    dataset_meta: BTreeMap<String, String>,
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| GprfError::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<V: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(GprfError::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let pairs = read_key_values(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_pairs(pairs, &base)
    }

    pub fn from_pairs(pairs: Vec<(String, String)>, base_dir: &Path) -> Result<Self> {
        let mut raw = BTreeMap::new();
        for (k, v) in pairs {
            if !KEYS.contains(&k.as_str()) {
                return Err(GprfError::Config(format!("unknown key {k:?}")));
            }
            if raw.insert(k.clone(), v).is_some() {
                return Err(GprfError::Config(format!("duplicate key {k:?}")));
            }
        }
        let cfg = ExperimentConfig {
            raw,
            base_dir: base_dir.to_path_buf(),
            dataset_meta: BTreeMap::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `key=value` lines from a string.
    pub fn parse_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| GprfError::Config(format!("line {}: expected key=value", ln + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(pairs, base_dir)
    }

    fn validate(&self) -> Result<()> {
        self.generator()?;
        self.method()?;
        self.partition_kind()?;
        self.edge_rule()?;
        self.fit_config()?;
        self.workers()?;
        self.hybrid_stage1_iters()?;
        for k in ["n", "dim", "outputs", "seed", "block_size"] {
            if let Some(v) = self.raw.get(k) {
                parse_num::<u64>(k, v)?;
            }
        }
        Ok(())
    }

    /// Loads the dataset sidecar so that unset kernel keys follow the data.
    pub fn attach_dataset_meta(&mut self) -> Result<()> {
        if let Some(p) = self.dataset_path() {
            let mp = crate::datagen::meta_path(&p);
            if mp.exists() {
                self.dataset_meta = read_key_values(&mp)?.into_iter().collect();
            }
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.raw.get(key).map(String::as_str)
    }

    /// Explicit key, then dataset sidecar.
    fn get_or_meta(&self, key: &str) -> Option<&str> {
        self.get(key).or_else(|| self.dataset_meta.get(key).map(String::as_str))
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.get("dataset").map(|p| self.resolve(p))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(self.get("output_dir").unwrap_or("out"))
    }

    pub fn generator(&self) -> Result<Generator> {
        match self.get_or_meta("generator").unwrap_or("uniform") {
            "uniform" => Ok(Generator::Uniform),
            "events" | "events-catalog" => Ok(Generator::Events),
            g => Err(GprfError::Config(format!("unknown generator {g:?}"))),
        }
    }

    pub fn method(&self) -> Result<Method> {
        match self.get("method").unwrap_or("gprf") {
            "full_gp" => Ok(Method::FullGp),
            "local" => Ok(Method::Local),
            "gprf" => Ok(Method::Gprf),
            "hybrid" => Ok(Method::Hybrid),
            m => Err(GprfError::Config(format!("unknown method {m:?}"))),
        }
    }

    pub fn partition_kind(&self) -> Result<PartitionKind> {
        let default = if self.generator()? == Generator::Events { "patree" } else { "grid" };
        match self.get("partition").unwrap_or(default) {
            "grid" => Ok(PartitionKind::Grid),
            "patree" => Ok(PartitionKind::PaTree),
            "contiguous" => Ok(PartitionKind::Contiguous),
            "single" => Ok(PartitionKind::Single),
            p => Err(GprfError::Config(format!("unknown partition {p:?}"))),
        }
    }

    pub fn block_size(&self) -> Result<usize> {
        let m: usize = parse_num("block_size", self.get("block_size").unwrap_or("100"))?;
        if m == 0 {
            return Err(GprfError::Config("block_size must be positive".into()));
        }
        Ok(m)
    }

    pub fn edge_rule(&self) -> Result<EdgeRule> {
        match self.get("edges") {
            Some(v) => EdgeRule::parse(v),
            None if self.partition_kind()? == PartitionKind::Grid => Ok(EdgeRule::Grid8),
            // Blocks within one lengthscale of each other.
            None => {
                let ls = self.kernel()?.hyper.lengthscales;
                Ok(EdgeRule::Distance(ls.iter().fold(0.0, |a: f64, &b| a.max(b))))
            }
        }
    }

    pub fn seed(&self) -> Result<u64> {
        parse_num("seed", self.get_or_meta("seed").unwrap_or("1"))
    }

    pub fn sigma_obs(&self) -> Result<Vec<f64>> {
        let default = if self.generator()? == Generator::Events { "20" } else { "2" };
        let v: Vec<f64> = parse_list("sigma_obs", self.get_or_meta("sigma_obs").unwrap_or(default))?;
        if v.is_empty() {
            return Err(GprfError::Config("sigma_obs is empty".into()));
        }
        Ok(v)
    }

    pub fn kernel(&self) -> Result<KernelSpec<f64>> {
        let events = self.generator()? == Generator::Events;
        let fam_name = self.get_or_meta("kernel").unwrap_or(if events { "matern32" } else { "se_plain" });
        let family = KernelFamily::from_name(fam_name)
            .ok_or_else(|| GprfError::Config(format!("unknown kernel {fam_name:?}")))?;
        let sf2: f64 = parse_num("signal_variance", self.get_or_meta("signal_variance").unwrap_or("1"))?;
        let ls: Vec<f64> = parse_list(
            "lengthscales",
            self.get_or_meta("lengthscales").unwrap_or(if events { "40" } else { "6" }),
        )?;
        let sn2: f64 = parse_num("noise_variance", self.get_or_meta("noise_variance").unwrap_or("0.01"))?;
        let mut k = KernelSpec::new(
            family,
            Hyperparams {
                signal_variance: sf2,
                lengthscales: ls,
                noise_variance: sn2,
            },
        )?;
        if let Some(j) = self.get_or_meta("jitter") {
            k = k.with_jitter(parse_num("jitter", j)?);
        }
        if let Some(g) = self.get_or_meta("coord_groups") {
            k = k.with_coord_groups(parse_list("coord_groups", g)?);
        }
        Ok(k)
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let events = self.generator()? == Generator::Events;
        let n: usize = parse_num("n", self.get("n").unwrap_or("1000"))?;
        let d: usize = parse_num("dim", self.get("dim").unwrap_or(if events { "3" } else { "2" }))?;
        let outputs: usize = parse_num("outputs", self.get("outputs").unwrap_or("50"))?;
        Ok(SyntheticSpec {
            n,
            d,
            outputs,
            kernel: self.kernel()?,
            sigma_obs: self.sigma_obs()?,
            seed: self.seed()?,
        })
    }

    pub fn event_geometry(&self) -> Result<EventGeometry> {
        let mut g = EventGeometry::default();
        if let Some(v) = self.get("event_region_km") {
            g.region_km = parse_num("event_region_km", v)?;
        }
        if let Some(v) = self.get("event_clusters") {
            g.n_clusters = parse_num("event_clusters", v)?;
        }
        if let Some(v) = self.get("event_cluster_std_km") {
            g.cluster_std_km = parse_num("event_cluster_std_km", v)?;
        }
        if let Some(v) = self.get("event_depth_mean_km") {
            g.depth_mean_km = parse_num("event_depth_mean_km", v)?;
        }
        if let Some(v) = self.get("event_depth_std_km") {
            g.depth_std_km = parse_num("event_depth_std_km", v)?;
        }
        Ok(g)
    }

    pub fn event_catalog(&self) -> Option<PathBuf> {
        self.get("event_catalog").map(|p| self.resolve(p))
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        let events = self.generator()? == Generator::Events;
        let mut c = FitConfig::default();
        if let Some(v) = self.get("optimize_x") {
            c.optimize_x = parse_bool("optimize_x", v)?;
        }
        if let Some(v) = self.get("optimize_theta") {
            c.optimize_theta = parse_bool("optimize_theta", v)?;
        }
        if let Some(v) = self.get("max_iters") {
            c.max_iters = parse_num("max_iters", v)?;
        }
        if c.max_iters == 0 {
            return Err(GprfError::Config("max_iters must be at least 1".into()));
        }
        if let Some(v) = self.get("grad_tol") {
            c.grad_tol = parse_num("grad_tol", v)?;
        }
        if let Some(v) = self.get("wall_clock_budget_s") {
            c.wall_clock_budget_s = Some(parse_num("wall_clock_budget_s", v)?);
        }
        if let Some(v) = self.get("trajectory_stride") {
            c.trajectory_stride = parse_num("trajectory_stride", v)?;
        }
        c.nonneg_coords = match self.get("nonneg_coords") {
            Some(v) => parse_list("nonneg_coords", v)?,
            None if events => vec![2],
            None => Vec::new(),
        };
        Ok(c)
    }

    pub fn hybrid_stage1_iters(&self) -> Result<usize> {
        match self.get("hybrid_stage1_iters") {
            Some(v) => parse_num("hybrid_stage1_iters", v),
            None => Ok(self.fit_config()?.max_iters),
        }
    }

    /// Worker threads; `None` means all cores.
    pub fn workers(&self) -> Result<Option<usize>> {
        match self.get("workers") {
            None | Some("all") => Ok(None),
            Some(v) => {
                let w: usize = parse_num("workers", v)?;
                if w == 0 {
                    return Err(GprfError::Config("workers must be positive".into()));
                }
                Ok(Some(w))
            }
        }
    }

    /// Every key with its effective value, for run manifests.
    pub fn resolved(&self) -> Result<Vec<(String, String)>> {
        let fit = self.fit_config()?;
        let k = self.kernel()?;
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out: Vec<(String, String)> = vec![
            ("dataset".into(), self.dataset_path().map(|p| p.display().to_string()).unwrap_or_default()),
            ("generator".into(), format!("{:?}", self.generator()?).to_lowercase()),
            ("seed".into(), self.seed()?.to_string()),
            ("sigma_obs".into(), join(&self.sigma_obs()?)),
            ("kernel".into(), k.family.name().into()),
            ("signal_variance".into(), k.hyper.signal_variance.to_string()),
            ("lengthscales".into(), join(&k.hyper.lengthscales)),
            ("noise_variance".into(), k.hyper.noise_variance.to_string()),
            ("jitter".into(), k.jitter.to_string()),
            (
                "coord_groups".into(),
                k.coord_groups
                    .as_ref()
                    .map(|g| g.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
                    .unwrap_or_default(),
            ),
            ("method".into(), self.method()?.name().into()),
            ("partition".into(), format!("{:?}", self.partition_kind()?).to_lowercase()),
            ("block_size".into(), self.block_size()?.to_string()),
            ("edges".into(), self.edge_rule()?.name()),
            ("optimize_x".into(), fit.optimize_x.to_string()),
            ("optimize_theta".into(), fit.optimize_theta.to_string()),
            ("max_iters".into(), fit.max_iters.to_string()),
            ("grad_tol".into(), fit.grad_tol.to_string()),
            (
                "wall_clock_budget_s".into(),
                fit.wall_clock_budget_s.map(|b| b.to_string()).unwrap_or_else(|| "none".into()),
            ),
            ("trajectory_stride".into(), fit.trajectory_stride.to_string()),
            ("hybrid_stage1_iters".into(), self.hybrid_stage1_iters()?.to_string()),
            (
                "nonneg_coords".into(),
                fit.nonneg_coords.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
            ),
            (
                "workers".into(),
                self.workers()?.map(|w| w.to_string()).unwrap_or_else(|| "all".into()),
            ),
            ("output_dir".into(), self.output_dir().display().to_string()),
        ];
        for key in ["n", "dim", "outputs", "event_region_km", "event_clusters", "event_cluster_std_km", "event_depth_mean_km", "event_depth_std_km"] {
            if let Some(v) = self.get(key) {
                out.push((key.into(), v.into()));
            }
        }
        if let Some(p) = self.event_catalog() {
            out.push(("event_catalog".into(), p.display().to_string()));
        }
        Ok(out)
    }
}
