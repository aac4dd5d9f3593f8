//! Toy datasets, normalization, and persistence: binary checkpoints for
//! trained networks and CSV files for positions.
//!
//! Generators are pure functions of (name, count, seed). Datasets are
//! normalized per component to zero mean and unit population std so the
//! same training configuration works across shapes. File writes go
//! through a temp file and rename, so readers never see partial output.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::dynamics::DriftSpec;
use crate::error::{Error, Result};
use crate::parallel;
use crate::score::{ScoreNet, TrainConfig, TIME_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetName {
    EightGaussians,
    TwoMoons,
    SwissRoll2d,
    Gaussian1d,
}

impl DatasetName {
    pub fn dim(self) -> usize {
        match self {
            DatasetName::Gaussian1d => 1,
            _ => 2,
        }
    }

    pub const ALL: [DatasetName; 4] = [
        DatasetName::EightGaussians,
        DatasetName::TwoMoons,
        DatasetName::SwissRoll2d,
        DatasetName::Gaussian1d,
    ];
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetName::EightGaussians => "eight_gaussians",
            DatasetName::TwoMoons => "two_moons",
            DatasetName::SwissRoll2d => "swiss_roll_2d",
            DatasetName::Gaussian1d => "gaussian_1d",
        };
        f.write_str(s)
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eight_gaussians" => Ok(DatasetName::EightGaussians),
            "two_moons" => Ok(DatasetName::TwoMoons),
            "swiss_roll_2d" => Ok(DatasetName::SwissRoll2d),
            "gaussian_1d" => Ok(DatasetName::Gaussian1d),
            other => Err(Error::Usage(format!(
                "unknown dataset {:?}; expected one of eight_gaussians, two_moons, swiss_roll_2d, gaussian_1d",
                other
            ))),
        }
    }
}

/// A generated dataset after normalization, together with the affine map
/// (per-component mean and scale) that undoes it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: DatasetName,
    pub points: Vec<Vec<f64>>,
    pub h: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Dataset {
    pub fn normalize_point(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.h);
        (0..self.h).map(|c| (p[c] - self.mean[c]) / self.scale[c]).collect()
    }

    pub fn denormalize_point(&self, p: &[f64]) -> Vec<f64> {
        assert_eq!(p.len(), self.h);
        (0..self.h).map(|c| p[c] * self.scale[c] + self.mean[c]).collect()
    }
}

/// Centers of the circular Gaussian mixture in raw (pre-normalization)
/// coordinates: eight points on a radius-4 circle.
pub fn eight_gaussian_centroids() -> Vec<Vec<f64>> {
    (0..8)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / 8.0;
            vec![4.0 * angle.cos(), 4.0 * angle.sin()]
        })
        .collect()
}

/// Draws `count` points of the named dataset and normalizes them to zero
/// mean and unit per-component population std. Deterministic given seed.
pub fn make_dataset(name: DatasetName, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidSpec("dataset count must be at least 1".into()));
    }
    let h = name.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha12Rng| rng.sample::<f64, _>(StandardNormal);
    let mut points = Vec::with_capacity(count);
    match name {
        DatasetName::EightGaussians => {
            let centroids = eight_gaussian_centroids();
            for _ in 0..count {
                let c = &centroids[rng.random_range(0..8)];
                points.push(vec![c[0] + 0.1 * normal(&mut rng), c[1] + 0.1 * normal(&mut rng)]);
            }
        }
        DatasetName::TwoMoons => {
            for _ in 0..count {
                let lower = rng.random_range(0..2) == 1;
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let (mut x, mut y) = (theta.cos(), theta.sin());
                if lower {
                    x = 1.0 - x;
                    y = 0.5 - y;
                }
                points.push(vec![x + 0.05 * normal(&mut rng), y + 0.05 * normal(&mut rng)]);
            }
        }
        DatasetName::SwissRoll2d => {
            for _ in 0..count {
                let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * rng.random_range(0.0..1.0));
                points.push(vec![
                    t * t.cos() + 0.05 * normal(&mut rng),
                    t * t.sin() + 0.05 * normal(&mut rng),
                ]);
            }
        }
        DatasetName::Gaussian1d => {
            for _ in 0..count {
                points.push(vec![1.5 + 0.7 * normal(&mut rng)]);
            }
        }
    }
    let mut mean = vec![0.0; h];
    for p in &points {
        for c in 0..h {
            mean[c] += p[c];
        }
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mut scale = vec![0.0; h];
    for p in &points {
        for c in 0..h {
            let d = p[c] - mean[c];
            scale[c] += d * d;
        }
    }
    for s in scale.iter_mut() {
        *s = (*s / count as f64).sqrt();
        // Degenerate component (e.g. count == 1): leave it unscaled.
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }
    for p in points.iter_mut() {
        for c in 0..h {
            p[c] = (p[c] - mean[c]) / scale[c];
        }
    }
    Ok(Dataset {
        name,
        points,
        h,
        mean,
        scale,
    })
}

/// Fraction of points whose nearest centroid (squared Euclidean, ties to
/// the lower index) is each given centroid.
pub fn mode_shares(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<f64> {
    assert!(!points.is_empty() && !centroids.is_empty());
    let mut counts = vec![0usize; centroids.len()];
    for p in points {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in centroids.iter().enumerate() {
            let d: f64 = p.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        counts[best] += 1;
    }
    counts.iter().map(|c| *c as f64 / points.len() as f64).collect()
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

const CKPT_MAGIC: &[u8; 4] = b"HPP1";
const CKPT_VERSION: u32 = 1;

fn fmt_f64_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{:?}", v)).collect::<Vec<_>>().join(",")
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("bad float {:?} in header", tok)))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|tok| {
            tok.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad integer {:?} in header", tok)))
        })
        .collect()
}

/// Writes a trained network plus the process and training configuration
/// it belongs to. Layout: magic "HPP1", u32 LE header length, plain-text
/// key=value header, f64 LE parameter payload, u32 LE CRC32 of the
/// payload.
pub fn save_checkpoint(
    net: &ScoreNet,
    spec: &DriftSpec,
    cfg: &TrainConfig,
    path: &Path,
) -> Result<()> {
    let h = net.output_dim();
    let mut header = String::new();
    header.push_str(&format!("version={}\n", CKPT_VERSION));
    header.push_str(&format!("n={}\n", spec.n));
    header.push_str(&format!("h={}\n", h));
    header.push_str(&format!("gammas={}\n", fmt_f64_list(&spec.gammas)));
    header.push_str(&format!("xi={:?}\n", spec.xi));
    header.push_str(&format!("l_inv={:?}\n", spec.l_inv));
    match spec.lambda_star {
        Some(l) => header.push_str(&format!("lambda_star={:?}\n", l)),
        None => header.push_str("lambda_star=none\n"),
    }
    let dims: Vec<String> = net.layer_dims().iter().map(|d| d.to_string()).collect();
    header.push_str(&format!("layer_dims={}\n", dims.join(",")));
    header.push_str(&format!("T={:?}\n", cfg.t_horizon));
    header.push_str(&format!("alpha={:?}\n", cfg.alpha));
    header.push_str(&format!("t_eps={:?}\n", cfg.t_eps));
    header.push_str(&format!("seed={}\n", cfg.seed));
    header.push_str(&format!("batch={}\n", cfg.batch));
    header.push_str(&format!("iters={}\n", cfg.iters));
    header.push_str(&format!("lr={:?}\n", cfg.lr));

    let mut bytes = Vec::with_capacity(8 + header.len() + net.params().len() * 8 + 4);
    bytes.extend_from_slice(CKPT_MAGIC);
    bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    let payload_start = bytes.len();
    for p in net.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&bytes[payload_start..]);
    bytes.extend_from_slice(&crc.to_le_bytes());
    write_atomic(path, &bytes)
}

fn header_field<'a>(
    fields: &'a std::collections::HashMap<&str, &str>,
    key: &str,
) -> Result<&'a str> {
    fields
        .get(key)
        .copied()
        .ok_or_else(|| Error::Checkpoint(format!("missing header key {:?}", key)))
}

/// Reads a checkpoint back; the returned parameters are bit-identical to
/// the saved ones.
pub fn load_checkpoint(path: &Path) -> Result<(ScoreNet, DriftSpec, TrainConfig)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 || &bytes[0..4] != CKPT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len + 4 {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let header = std::str::from_utf8(&bytes[8..8 + header_len])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let mut fields = std::collections::HashMap::new();
    for line in header.lines() {
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line {:?}", line)))?;
        fields.insert(key, value);
    }
    let version: u32 = header_field(&fields, "version")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad version field".into()))?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {})",
            version, CKPT_VERSION
        )));
    }
    let parse_f64 = |key: &str| -> Result<f64> {
        header_field(&fields, key)?
            .parse::<f64>()
            .map_err(|_| Error::Checkpoint(format!("bad float in key {:?}", key)))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        header_field(&fields, key)?
            .parse::<usize>()
            .map_err(|_| Error::Checkpoint(format!("bad integer in key {:?}", key)))
    };
    let n = parse_usize("n")?;
    let h = parse_usize("h")?;
    let gammas = parse_f64_list(header_field(&fields, "gammas")?)?;
    let lambda_star = match header_field(&fields, "lambda_star")? {
        "none" => None,
        s => Some(
            s.parse::<f64>()
                .map_err(|_| Error::Checkpoint("bad lambda_star field".into()))?,
        ),
    };
    let spec = DriftSpec {
        n,
        gammas,
        xi: parse_f64("xi")?,
        l_inv: parse_f64("l_inv")?,
        lambda_star,
    };
    spec.validate()?;
    let cfg = TrainConfig {
        t_horizon: parse_f64("T")?,
        l_inv: spec.l_inv,
        alpha: parse_f64("alpha")?,
        batch: parse_usize("batch")?,
        iters: parse_usize("iters")?,
        lr: parse_f64("lr")?,
        t_eps: parse_f64("t_eps")?,
        seed: header_field(&fields, "seed")?
            .parse::<u64>()
            .map_err(|_| Error::Checkpoint("bad seed field".into()))?,
    };
    cfg.validate()?;
    let layer_dims = parse_usize_list(header_field(&fields, "layer_dims")?)?;
    if layer_dims.len() < 2
        || *layer_dims.last().unwrap() != h
        || layer_dims[0] != n * h + TIME_FEATURES
    {
        return Err(Error::Checkpoint(format!(
            "layer dims {:?} inconsistent with n={} h={}",
            layer_dims, n, h
        )));
    }
    let count = ScoreNet::param_count_for(&layer_dims);
    let payload = &bytes[8 + header_len..bytes.len() - 4];
    if payload.len() != count * 8 {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, layer dims need {}",
            payload.len(),
            count * 8
        )));
    }
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let crc = crc32fast::hash(payload);
    if crc != stored_crc {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {:08x}, computed {:08x}",
            stored_crc, crc
        )));
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = ScoreNet::from_parts(layer_dims, params, cfg.t_horizon)?;
    Ok((net, spec, cfg))
}

/// Writes positions as CSV with a `dim_0,...` header and 17 significant
/// digits per value, enough for an exact f64 round trip.
pub fn save_positions_csv(path: &Path, points: &[Vec<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidSpec("no points to write".into()));
    }
    let h = points[0].len();
    if h == 0 || points.iter().any(|p| p.len() != h) {
        return Err(Error::Dimension("points must share a positive dimension".into()));
    }
    let mut out = String::new();
    let header: Vec<String> = (0..h).map(|c| format!("dim_{}", c)).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{:.16e}", v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn csv_error(path: &Path, msg: String) -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::InvalidData,
        format!("{}: {}", path.display(), msg),
    ))
}

/// Reads positions written by `save_positions_csv`.
pub fn load_positions_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| csv_error(path, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let h = cols.len();
    for (c, name) in cols.iter().enumerate() {
        if *name != format!("dim_{}", c) {
            return Err(csv_error(path, format!("unexpected header {:?}", header)));
        }
    }
    let mut points = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != h {
            return Err(csv_error(path, format!("row {} has {} fields, expected {}", idx + 2, vals.len(), h)));
        }
        let mut p = Vec::with_capacity(h);
        for v in vals {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| csv_error(path, format!("row {}: bad number {:?}", idx + 2, v)))?;
            p.push(x);
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(csv_error(path, "no data rows".into()));
    }
    Ok(points)
}

fn mean_pair_dist(a: &[Vec<f64>], b: &[Vec<f64>], parallel: bool) -> f64 {
    let rows = parallel::map_chunks(a, 16, parallel, |chunk| {
        let mut sum = 0.0;
        for x in chunk {
            for y in b {
                let d: f64 = x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
                sum += d.sqrt();
            }
        }
        sum
    });
    rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

fn energy_distance_impl(xs: &[Vec<f64>], ys: &[Vec<f64>], parallel: bool) -> f64 {
    assert!(!xs.is_empty() && !ys.is_empty());
    assert_eq!(xs[0].len(), ys[0].len());
    2.0 * mean_pair_dist(xs, ys, parallel)
        - mean_pair_dist(xs, xs, parallel)
        - mean_pair_dist(ys, ys, parallel)
}

/// Sample energy distance between two point clouds: twice the mean
/// cross-distance minus both mean within-distances (all ordered pairs).
/// Nonnegative in expectation; zero iff the distributions agree.
pub fn energy_distance(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    energy_distance_impl(xs, ys, parallel::parallel_enabled())
}

/// Single-thread variant of `energy_distance`; agrees bit for bit.
pub fn energy_distance_sequential(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    energy_distance_impl(xs, ys, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics;
    use crate::sde::{self, ReverseConfig};

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("holdpp-test-{}-{}", std::process::id(), name));
        p
    }

    #[test]
    fn normalization_centers_and_scales() {
        for name in DatasetName::ALL {
            let ds = make_dataset(name, 100_000, 3).unwrap();
            assert_eq!(ds.h, name.dim());
            for c in 0..ds.h {
                let mean: f64 = ds.points.iter().map(|p| p[c]).sum::<f64>() / ds.points.len() as f64;
                let var: f64 =
                    ds.points.iter().map(|p| (p[c] - mean) * (p[c] - mean)).sum::<f64>()
                        / ds.points.len() as f64;
                assert!(mean.abs() <= 1e-12, "{} mean {}", name, mean);
                assert!((var.sqrt() - 1.0).abs() <= 1e-10, "{} std {}", name, var.sqrt());
            }
            assert!(ds.points.iter().all(|p| p.iter().all(|v| v.is_finite())));
        }
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = make_dataset(DatasetName::TwoMoons, 500, 9).unwrap();
        let b = make_dataset(DatasetName::TwoMoons, 500, 9).unwrap();
        for (p, q) in a.points.iter().zip(b.points.iter()) {
            assert!(p.iter().zip(q.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let c = make_dataset(DatasetName::TwoMoons, 500, 10).unwrap();
        assert!(a.points != c.points);
        assert!(make_dataset(DatasetName::Gaussian1d, 0, 0).is_err());
    }

    #[test]
    fn eight_gaussians_modes_are_balanced() {
        let ds = make_dataset(DatasetName::EightGaussians, 80_000, 4).unwrap();
        let centroids: Vec<Vec<f64>> = eight_gaussian_centroids()
            .iter()
            .map(|c| ds.normalize_point(c))
            .collect();
        let shares = mode_shares(&ds.points, &centroids);
        for (k, s) in shares.iter().enumerate() {
            assert!((s - 0.125).abs() <= 0.01, "mode {} share {}", k, s);
        }
        let raw = ds.denormalize_point(&ds.points[0]);
        let back = ds.normalize_point(&raw);
        assert!((back[0] - ds.points[0][0]).abs() <= 1e-12);
        assert!((back[1] - ds.points[0][1]).abs() <= 1e-12);
    }

    #[test]
    fn dataset_names_round_trip() {
        for name in DatasetName::ALL {
            assert_eq!(name.to_string().parse::<DatasetName>().unwrap(), name);
        }
        assert!("mnist".parse::<DatasetName>().is_err());
    }

    fn sample_net_and_cfg() -> (ScoreNet, DriftSpec, TrainConfig) {
        let spec = dynamics::critical_params(3).unwrap();
        let cfg = TrainConfig {
            batch: 17,
            iters: 321,
            lr: 3.5e-4,
            seed: 77,
            ..TrainConfig::default()
        };
        let dims = vec![3 * 2 + TIME_FEATURES, 24, 16, 2];
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let net = ScoreNet::new(dims, cfg.t_horizon, &mut rng).unwrap();
        (net, spec, cfg)
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (net, spec, cfg) = sample_net_and_cfg();
        let path = temp_path("roundtrip.hpp1");
        save_checkpoint(&net, &spec, &cfg, &path).unwrap();
        let (net2, spec2, cfg2) = load_checkpoint(&path).unwrap();
        assert_eq!(net.layer_dims(), net2.layer_dims());
        assert!(net
            .params()
            .iter()
            .zip(net2.params().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(spec, spec2);
        assert_eq!(cfg, cfg2);
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn checkpoint_detects_corruption_truncation_and_version() {
        let (net, spec, cfg) = sample_net_and_cfg();
        let path = temp_path("corrupt.hpp1");
        save_checkpoint(&net, &spec, &cfg, &path).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        let k = bad.len() - 40;
        bad[k] ^= 0x10;
        fs::write(&path, &bad).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("checksum"), "{}", msg),
            other => panic!("expected checksum failure, got {:?}", other.map(|_| ())),
        }

        fs::write(&path, &good[..good.len() - 10]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

        let line = b"version=1\n";
        let pos = good
            .windows(line.len())
            .position(|w| w == line)
            .expect("version line present");
        let mut patched = good.clone();
        patched[pos + 8] = b'2';
        fs::write(&path, &patched).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version"), "{}", msg),
            other => panic!("expected version failure, got {:?}", other.map(|_| ())),
        }

        fs::write(&path, b"nope").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn loaded_checkpoint_drives_reverse_sampler() {
        let (net, spec, cfg) = sample_net_and_cfg();
        let path = temp_path("sampler.hpp1");
        save_checkpoint(&net, &spec, &cfg, &path).unwrap();
        let (net2, spec2, cfg2) = load_checkpoint(&path).unwrap();
        let h = net2.output_dim();
        assert_eq!(net2.state_dim(), spec2.n * h);
        let rev = ReverseConfig {
            steps: 5,
            t_end: cfg2.t_horizon,
            t_eps: cfg2.t_eps,
            seed: 1,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(rev.seed);
        let out = sde::em_reverse(
            &spec2,
            h,
            |state, t| crate::score::net_forward(&net2, state, t),
            &rev,
            &mut rng,
        )
        .unwrap();
        assert!(out.all_finite());
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let path = temp_path("points.csv");
        let points = vec![
            vec![1.0 / 3.0, -2.5e-17],
            vec![std::f64::consts::PI, 1e300],
            vec![-0.0, 4.625],
        ];
        save_positions_csv(&path, &points).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("dim_0,dim_1\n"));
        let back = load_positions_csv(&path).unwrap();
        assert_eq!(points.len(), back.len());
        for (p, q) in points.iter().zip(back.iter()) {
            assert!(p.iter().zip(q.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        fs::write(&path, "dim_0\n").unwrap();
        assert!(load_positions_csv(&path).is_err());
        fs::write(&path, "x,y\n1,2\n").unwrap();
        assert!(load_positions_csv(&path).is_err());
        fs::write(&path, "dim_0\nnot-a-number\n").unwrap();
        assert!(load_positions_csv(&path).is_err());
        assert!(save_positions_csv(&path, &[]).is_err());
        assert!(save_positions_csv(&path, &[vec![1.0], vec![1.0, 2.0]]).is_err());
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn energy_distance_basics() {
        let xs = vec![vec![0.0]];
        let ys = vec![vec![2.0]];
        assert_eq!(energy_distance(&xs, &ys), 4.0);

        let cloud: Vec<Vec<f64>> = (0..64).map(|i| vec![(i as f64 * 0.3).sin(), (i as f64 * 0.7).cos()]).collect();
        assert_eq!(energy_distance(&cloud, &cloud), 0.0);

        let shifted: Vec<Vec<f64>> = cloud.iter().map(|p| vec![p[0] + 3.0, p[1]]).collect();
        let jittered: Vec<Vec<f64>> = cloud.iter().map(|p| vec![p[0] + 1e-3, p[1]]).collect();
        let far = energy_distance(&cloud, &shifted);
        let near = energy_distance(&cloud, &jittered);
        assert!(far > 1.0 && near < 0.01 && near < far);

        let par = energy_distance(&cloud, &shifted);
        let seq = energy_distance_sequential(&cloud, &shifted);
        assert_eq!(par.to_bits(), seq.to_bits());
    }

    #[test]
    fn mode_shares_counts_nearest() {
        let centroids = vec![vec![0.0, 0.0], vec![10.0, 0.0]];
        let points = vec![vec![1.0, 0.0], vec![9.0, 1.0], vec![11.0, 0.0], vec![0.5, 0.5]];
        assert_eq!(mode_shares(&points, &centroids), vec![0.5, 0.5]);
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let path = temp_path("atomic.csv");
        save_positions_csv(&path, &[vec![1.0]]).unwrap();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        assert!(!std::path::Path::new(&tmp).exists());
        fs::remove_file(&path).unwrap();
    }
}
