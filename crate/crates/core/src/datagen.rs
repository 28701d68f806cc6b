//! Seeded synthetic datasets: uniform points in a square and clustered
//! seismic-style event locations, with GP outputs and noisy observed locations.
//!
//! Randomness comes from ChaCha20 keyed by the little-endian seed (zero
//! padded to 32 bytes), one stream per purpose:
//! stream 0 for true locations, 1 for location noise, `2 + j` for output column `j`.
//! Uniforms take the top 53 bits of `next_u64`; normals use the cosine branch
//! of Box-Muller. Both are spelled out so other implementations can match.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{GprfError, Result};
use crate::full_gp::size_guard;
use crate::gaussian::factorize;
use crate::kernels::{cov_matrix, Hyperparams, KernelFamily, KernelSpec};
use crate::scalar::Real;

/// Identifier written to dataset sidecars.
pub const GENERATOR_ID: &str = "chacha20-le64seed;streams:0=x,1=xnoise,2+j=y[j];u=top53;normal=box-muller-cos";

pub struct StreamRng {
    inner: ChaCha20Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream);
        StreamRng { inner }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub outputs: usize,
    pub kernel: KernelSpec<f64>,
    /// Per-coordinate observation noise standard deviation; a single entry applies to all.
    pub sigma_obs: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Uniform-square defaults: SE kernel with lengthscale 6, noise sd 0.1, location noise 2, 50 outputs.
    pub fn uniform_default(n: usize, seed: u64) -> Self {
        SyntheticSpec {
            n,
            d: 2,
            outputs: 50,
            kernel: KernelSpec::new(
                KernelFamily::SquaredExponentialPlain,
                Hyperparams::isotropic(1.0, 6.0, 0.01),
            )
            .expect("valid defaults"),
            sigma_obs: vec![2.0],
            seed,
        }
    }

    /// Event-task defaults: Matern 3/2 with lengthscale 40 km, noise sd 0.1, location noise 20 km.
    pub fn events_default(n: usize, seed: u64) -> Self {
        SyntheticSpec {
            n,
            d: 3,
            outputs: 50,
            kernel: KernelSpec::new(KernelFamily::Matern32, Hyperparams::isotropic(1.0, 40.0, 0.01))
                .expect("valid defaults"),
            sigma_obs: vec![20.0],
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.outputs == 0 || self.d == 0 {
            return Err(GprfError::InvalidInput("n, d and outputs must be positive".into()));
        }
        size_guard(self.n)?;
        self.kernel.validate(self.d)?;
        if self.sigma_obs.len() != 1 && self.sigma_obs.len() != self.d {
            return Err(GprfError::DimensionMismatch(format!(
                "sigma_obs has {} entries for dimension {}",
                self.sigma_obs.len(),
                self.d
            )));
        }
        if self.sigma_obs.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(GprfError::InvalidInput("sigma_obs must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn sigma_obs_for(&self, c: usize) -> f64 {
        if self.sigma_obs.len() == 1 {
            self.sigma_obs[0]
        } else {
            self.sigma_obs[c]
        }
    }
}

/// Cluster-mixture geometry for [`gen_events`]. Lengths in km.
#[derive(Debug, Clone)]
pub struct EventGeometry {
    pub region_km: f64,
    pub n_clusters: usize,
    pub cluster_std_km: f64,
    pub depth_mean_km: f64,
    pub depth_std_km: f64,
}

impl Default for EventGeometry {
    fn default() -> Self {
        EventGeometry {
            region_km: 500.0,
            n_clusters: 8,
            cluster_std_km: 40.0,
            depth_mean_km: 15.0,
            depth_std_km: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_true: Array2<f64>,
    pub x_obs: Array2<f64>,
    pub y: Array2<f64>,
    /// Sidecar entries, in write order.
    pub meta: Vec<(String, String)>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x_true.nrows()
    }

    pub fn d(&self) -> usize {
        self.x_true.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Converts the arrays to another scalar type.
    pub fn cast<T: Real>(a: &Array2<f64>) -> Array2<T> {
        a.mapv(T::lit)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let (d, dd) = (self.d(), self.outputs());
        let mut wr = csv::Writer::from_writer(w);
        let header: Vec<String> = (1..=d)
            .map(|c| format!("x{c}"))
            .chain((1..=d).map(|c| format!("xobs{c}")))
            .chain((1..=dd).map(|j| format!("y{j}")))
            .collect();
        wr.write_record(&header)?;
        for i in 0..self.n() {
            let row: Vec<String> = self
                .x_true
                .row(i)
                .iter()
                .chain(self.x_obs.row(i).iter())
                .chain(self.y.row(i).iter())
                .map(|v| v.to_string())
                .collect();
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, label: &str) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        let perr = |msg: String| GprfError::Parse {
            path: label.to_string(),
            msg,
        };
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                })
                .count()
        };
        let d = count("x");
        let d_obs = count("xobs");
        let dd = count("y");
        if d == 0 || d != d_obs || dd == 0 || header.len() != 2 * d + dd {
            return Err(perr(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
        }
        let mut expected = (1..=d).map(|c| format!("x{c}")).collect::<Vec<_>>();
        expected.extend((1..=d).map(|c| format!("xobs{c}")));
        expected.extend((1..=dd).map(|j| format!("y{j}")));
        if header.iter().zip(&expected).any(|(a, b)| a != b) {
            return Err(perr("columns must be x1..xd,xobs1..xobsd,y1..yD".into()));
        }
        let mut vals = Vec::new();
        let mut n = 0;
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            for f in rec.iter() {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| perr(format!("row {}: bad number {f:?}", line + 2)))?;
                vals.push(v);
            }
            n += 1;
        }
        let all = Array2::from_shape_vec((n, 2 * d + dd), vals).map_err(|e| perr(e.to_string()))?;
        let x_true = all.slice(ndarray::s![.., 0..d]).to_owned();
        let x_obs = all.slice(ndarray::s![.., d..2 * d]).to_owned();
        let y = all.slice(ndarray::s![.., 2 * d..]).to_owned();
        Ok((x_true, x_obs, y))
    }

    /// Writes `path` and its `path.meta` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))?;
        let mut m = BufWriter::new(File::create(meta_path(path))?);
        for (k, v) in &self.meta {
            writeln!(m, "{k}={v}")?;
        }
        m.flush()?;
        Ok(())
    }

    /// Reads a dataset; the sidecar is optional.
    pub fn load(path: &Path) -> Result<Self> {
        let label = path.display().to_string();
        let (x_true, x_obs, y) = Self::read_csv(BufReader::new(File::open(path)?), &label)?;
        let mp = meta_path(path);
        let meta = if mp.exists() {
            read_key_values(&mp)?
        } else {
            Vec::new()
        };
        Ok(Dataset { x_true, x_obs, y, meta })
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let label = path.display().to_string();
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| GprfError::Parse {
            path: label.clone(),
            msg: format!("line {}: expected key=value", ln + 1),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn spec_meta(spec: &SyntheticSpec, generator: &str) -> Vec<(String, String)> {
    let k = &spec.kernel;
    let mut m = vec![
        ("n".to_string(), spec.n.to_string()),
        ("d".to_string(), spec.d.to_string()),
        ("D".to_string(), spec.outputs.to_string()),
        ("generator".to_string(), generator.to_string()),
        ("kernel".to_string(), k.family.name().to_string()),
        ("signal_variance".to_string(), k.hyper.signal_variance.to_string()),
        ("lengthscales".to_string(), join(&k.hyper.lengthscales)),
        ("noise_variance".to_string(), k.hyper.noise_variance.to_string()),
        ("jitter".to_string(), k.jitter.to_string()),
    ];
    if let Some(g) = &k.coord_groups {
        let s = g.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        m.push(("coord_groups".to_string(), s));
    }
    m.push(("sigma_obs".to_string(), join(&spec.sigma_obs)));
    m.push(("seed".to_string(), spec.seed.to_string()));
    m.push(("rng".to_string(), GENERATOR_ID.to_string()));
    m
}

/// Draws `Y` columns from `N(0, K_y)` at `x` and perturbs `x` with location noise.
fn complete(spec: &SyntheticSpec, x_true: Array2<f64>, floor: Option<(usize, f64)>, generator: &str) -> Result<Dataset> {
    let n = x_true.nrows();
    let k = cov_matrix(&spec.kernel, x_true.view(), x_true.view(), true)?;
    let l = factorize(&k)?.chol().clone();
    let mut y = Array2::<f64>::zeros((n, spec.outputs));
    for j in 0..spec.outputs {
        let mut rng = StreamRng::new(spec.seed, 2 + j as u64);
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for i in 0..n {
            let row = l.row(i);
            let mut acc = 0.0;
            for (t, zt) in z.iter().enumerate().take(i + 1) {
                acc += row[t] * zt;
            }
            y[(i, j)] = acc;
        }
    }
    let x_obs = observe(spec, &x_true, floor);
    Ok(Dataset {
        x_true,
        x_obs,
        y,
        meta: spec_meta(spec, generator),
    })
}

fn uniform_locations(spec: &SyntheticSpec) -> Array2<f64> {
    let side = (spec.n as f64).sqrt();
    let mut rng = StreamRng::new(spec.seed, 0);
    Array2::from_shape_simple_fn((spec.n, spec.d), || side * rng.uniform())
}

fn observe(spec: &SyntheticSpec, x_true: &Array2<f64>, floor: Option<(usize, f64)>) -> Array2<f64> {
    let mut rng = StreamRng::new(spec.seed, 1);
    let mut x_obs = x_true.clone();
    for i in 0..x_obs.nrows() {
        for c in 0..spec.d {
            x_obs[(i, c)] += spec.sigma_obs_for(c) * rng.normal();
        }
    }
    if let Some((c, lo)) = floor {
        x_obs.column_mut(c).mapv_inplace(|v| v.max(lo));
    }
    x_obs
}

/// Points uniform in the square (or cube) of side `sqrt(n)`.
pub fn gen_uniform(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    complete(spec, uniform_locations(spec), None, "uniform")
}

/// The `(X_true, X_obs)` pair of [`gen_uniform`] without sampling outputs,
/// so it has no size limit.
pub fn gen_uniform_locations(spec: &SyntheticSpec) -> (Array2<f64>, Array2<f64>) {
    let x = uniform_locations(spec);
    let x_obs = observe(spec, &x, None);
    (x, x_obs)
}

/// Events from a Gaussian cluster mixture over a square region, depth
/// truncated at the surface. Coordinates are `(east, north, depth)` in km.
pub fn gen_events(spec: &SyntheticSpec, geom: &EventGeometry) -> Result<Dataset> {
    if spec.d != 3 {
        return Err(GprfError::InvalidInput("event data has three coordinates".into()));
    }
    spec.validate()?;
    if geom.n_clusters == 0 {
        return Err(GprfError::InvalidInput("n_clusters must be positive".into()));
    }
    let mut rng = StreamRng::new(spec.seed, 0);
    let centers: Vec<[f64; 2]> = (0..geom.n_clusters)
        .map(|_| [geom.region_km * rng.uniform(), geom.region_km * rng.uniform()])
        .collect();
    let mut x = Array2::<f64>::zeros((spec.n, 3));
    for i in 0..spec.n {
        let c = ((rng.uniform() * geom.n_clusters as f64) as usize).min(geom.n_clusters - 1);
        x[(i, 0)] = centers[c][0] + geom.cluster_std_km * rng.normal();
        x[(i, 1)] = centers[c][1] + geom.cluster_std_km * rng.normal();
        x[(i, 2)] = (geom.depth_mean_km + geom.depth_std_km * rng.normal()).max(0.0);
    }
    complete(spec, x, Some((2, 0.0)), "events")
}

/// As [`gen_events`] with locations taken from an external catalog.
pub fn gen_events_at(spec: &SyntheticSpec, locations: Array2<f64>) -> Result<Dataset> {
    if locations.ncols() != 3 || locations.nrows() != spec.n {
        return Err(GprfError::DimensionMismatch(format!(
            "catalog is {}x{}, expected {}x3",
            locations.nrows(),
            locations.ncols(),
            spec.n
        )));
    }
    spec.validate()?;
    let mut x = locations;
    x.column_mut(2).mapv_inplace(|v| v.max(0.0));
    complete(spec, x, Some((2, 0.0)), "events-catalog")
}

/// Reads `east_km,north_km,depth_km` rows (header required).
pub fn read_catalog(path: &Path) -> Result<Array2<f64>> {
    let label = path.display().to_string();
    let mut rd = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut vals = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(GprfError::Parse {
                path: label,
                msg: "catalog rows need three columns".into(),
            });
        }
        for f in rec.iter() {
            vals.push(f.trim().parse::<f64>().map_err(|_| GprfError::Parse {
                path: label.clone(),
                msg: format!("bad number {f:?}"),
            })?);
        }
    }
    let n = vals.len() / 3;
    Array2::from_shape_vec((n, 3), vals).map_err(|e| GprfError::Parse {
        path: label,
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct_and_repeatable() {
        let a: Vec<f64> = {
            let mut r = StreamRng::new(7, 0);
            (0..4).map(|_| r.uniform()).collect()
        };
        let b: Vec<f64> = {
            let mut r = StreamRng::new(7, 0);
            (0..4).map(|_| r.uniform()).collect()
        };
        let c: Vec<f64> = {
            let mut r = StreamRng::new(7, 1);
            (0..4).map(|_| r.uniform()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|u| (0.0..1.0).contains(u)));
    }

    #[test]
    fn normal_moments() {
        let mut r = StreamRng::new(3, 5);
        let z: Vec<f64> = (0..200_000).map(|_| r.normal()).collect();
        let m = z.iter().sum::<f64>() / z.len() as f64;
        let v = z.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / z.len() as f64;
        assert!(m.abs() < 0.01);
        assert!((v - 1.0).abs() < 0.01);
    }

    #[test]
    fn single_point_in_unit_square() {
        let ds = gen_uniform(&SyntheticSpec::uniform_default(1, 4)).unwrap();
        assert!(ds.x_true.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ds.y.dim(), (1, 50));
    }

    #[test]
    fn size_guard_applies() {
        let r = gen_uniform(&SyntheticSpec::uniform_default(30_000, 1));
        assert!(matches!(r, Err(GprfError::SizeGuard { .. })));
    }

    #[test]
    fn events_depth_nonnegative_and_deterministic() {
        let spec = SyntheticSpec::events_default(200, 11);
        let a = gen_events(&spec, &EventGeometry::default()).unwrap();
        let b = gen_events(&spec, &EventGeometry::default()).unwrap();
        assert!(a.x_true.column(2).iter().all(|v| *v >= 0.0));
        assert!(a.x_obs.column(2).iter().all(|v| *v >= 0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = gen_uniform(&SyntheticSpec {
            outputs: 3,
            ..SyntheticSpec::uniform_default(10, 2)
        })
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let (xt, xo, y) = Dataset::read_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(xt, ds.x_true);
        assert_eq!(xo, ds.x_obs);
        assert_eq!(y, ds.y);
    }
}
