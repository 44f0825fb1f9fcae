//! Place images, synthetic worlds, ψ-labelled pairs and their file formats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{fov_overlap, frustum_polygon, CameraPose, GeometryError, SimilarityLabel};

const OBS_MAGIC: &[u8; 4] = b"FOVR";
const OBS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate image id {0}")]
    DuplicateId(u32),
    #[error("unknown image id {0}")]
    UnknownId(u32),
    #[error("observation dimension mismatch: expected {expected}, got {got} (id {id})")]
    DimensionMismatch {
        id: u32,
        expected: usize,
        got: usize,
    },
    #[error("dataset has no observations")]
    MissingObservations,
    #[error("requested {requested} pairs but only {available} distinct pairs exist")]
    NotEnoughPairs { requested: usize, available: usize },
    #[error("invalid observations file: {0}")]
    Format(String),
    #[error("invalid pose: {0}")]
    Geometry(#[from] GeometryError),
    #[error("invalid world config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Map,
    Query,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceImage {
    pub id: u32,
    pub pose: CameraPose,
    pub role: Role,
    pub observation: Option<Vec<f64>>,
}

/// Immutable collection of map and query images with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<PlaceImage>,
    by_id: HashMap<u32, usize>,
    d_in: Option<usize>,
}

impl Dataset {
    pub fn new(images: Vec<PlaceImage>) -> Result<Self, DatasetError> {
        let mut by_id = HashMap::with_capacity(images.len());
        let mut d_in = None;
        for (idx, img) in images.iter().enumerate() {
            if by_id.insert(img.id, idx).is_some() {
                return Err(DatasetError::DuplicateId(img.id));
            }
            if let Some(obs) = &img.observation {
                match d_in {
                    None => d_in = Some(obs.len()),
                    Some(d) if d != obs.len() => {
                        return Err(DatasetError::DimensionMismatch {
                            id: img.id,
                            expected: d,
                            got: obs.len(),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(Self {
            images,
            by_id,
            d_in,
        })
    }

    pub fn images(&self) -> &[PlaceImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn d_in(&self) -> Option<usize> {
        self.d_in
    }

    pub fn get(&self, id: u32) -> Option<&PlaceImage> {
        self.by_id.get(&id).map(|&i| &self.images[i])
    }

    pub fn ids_with_role(&self, role: Role) -> Vec<u32> {
        self.images
            .iter()
            .filter(|img| img.role == role)
            .map(|img| img.id)
            .collect()
    }

    pub fn map_ids(&self) -> Vec<u32> {
        self.ids_with_role(Role::Map)
    }

    pub fn query_ids(&self) -> Vec<u32> {
        self.ids_with_role(Role::Query)
    }

    /// Observation of image `id`; errors if the id is unknown or the image
    /// has no observation attached.
    pub fn observation(&self, id: u32) -> Result<&[f64], DatasetError> {
        let img = self.get(id).ok_or(DatasetError::UnknownId(id))?;
        img.observation
            .as_deref()
            .ok_or(DatasetError::MissingObservations)
    }

    pub fn has_observations(&self) -> bool {
        !self.images.is_empty() && self.images.iter().all(|img| img.observation.is_some())
    }

    /// Attaches observations by id. Every image must receive one.
    pub fn with_observations(
        self,
        observations: Vec<(u32, Vec<f64>)>,
    ) -> Result<Self, DatasetError> {
        let mut images = self.images;
        let by_id = self.by_id;
        let mut seen = vec![false; images.len()];
        for (id, obs) in observations {
            let idx = *by_id.get(&id).ok_or(DatasetError::UnknownId(id))?;
            if seen[idx] {
                return Err(DatasetError::DuplicateId(id));
            }
            seen[idx] = true;
            images[idx].observation = Some(obs);
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            return Err(DatasetError::Format(format!(
                "no observation for image id {}",
                images[idx].id
            )));
        }
        Dataset::new(images)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub i: u32,
    pub j: u32,
    pub psi: f64,
}

impl SimilarityPair {
    pub fn label(&self) -> SimilarityLabel {
        SimilarityLabel::new(self.psi).expect("psi validated at construction")
    }
}

#[derive(Debug, Deserialize)]
struct PoseRow {
    id: u32,
    x: f64,
    y: f64,
    heading_deg: f64,
    fov_deg: f64,
    range_m: f64,
    role: Role,
}

const POSES_HEADER: [&str; 7] = ["id", "x", "y", "heading_deg", "fov_deg", "range_m", "role"];

/// Reads a `poses.csv` file. Observations are left empty.
pub fn load_poses(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    read_poses(File::open(path)?)
}

pub fn read_poses(reader: impl Read) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| DatasetError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(POSES_HEADER.iter().copied()) {
        return Err(DatasetError::Parse {
            line: 1,
            message: format!("expected header `{}`", POSES_HEADER.join(",")),
        });
    }
    let mut images = Vec::new();
    let mut lines = HashMap::new();
    for result in rdr.deserialize::<PoseRow>() {
        let row = result.map_err(|e| DatasetError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = images.len() as u64 + 2;
        let pose = CameraPose::new(
            row.id,
            row.x,
            row.y,
            row.heading_deg.to_radians(),
            row.fov_deg.to_radians(),
            row.range_m,
        )
        .map_err(|e| DatasetError::Parse {
            line,
            message: e.to_string(),
        })?;
        if let Some(first) = lines.insert(row.id, line) {
            return Err(DatasetError::Parse {
                line,
                message: format!("duplicate image id {} (first seen on line {first})", row.id),
            });
        }
        images.push(PlaceImage {
            id: row.id,
            pose,
            role: row.role,
            observation: None,
        });
    }
    Dataset::new(images)
}

pub fn write_poses(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", POSES_HEADER.join(","))?;
    for img in ds.images() {
        let p = &img.pose;
        let role = match img.role {
            Role::Map => "map",
            Role::Query => "query",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            img.id,
            p.x,
            p.y,
            p.heading().to_degrees(),
            p.fov_angle().to_degrees(),
            p.range(),
            role
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `(id, vector)` records in the little-endian `FOVR` format.
pub fn write_vectors<'a>(
    mut out: impl Write,
    dim: usize,
    records: impl ExactSizeIterator<Item = (u32, &'a [f64])>,
) -> Result<(), DatasetError> {
    out.write_all(OBS_MAGIC)?;
    out.write_all(&OBS_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    out.write_all(&(dim as u32).to_le_bytes())?;
    for (id, values) in records {
        if values.len() != dim {
            return Err(DatasetError::DimensionMismatch {
                id,
                expected: dim,
                got: values.len(),
            });
        }
        out.write_all(&id.to_le_bytes())?;
        for &v in values {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, DatasetError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| DatasetError::Format(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

/// Reads a `FOVR` vector file; returns the dimension and the records.
pub fn read_vectors(mut r: impl Read) -> Result<(usize, Vec<(u32, Vec<f64>)>), DatasetError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| DatasetError::Format("missing magic bytes".into()))?;
    if &magic != OBS_MAGIC {
        return Err(DatasetError::Format("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != OBS_VERSION {
        return Err(DatasetError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let dim = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    let mut buf = vec![0u8; 4 * dim];
    for _ in 0..count {
        let id = read_u32(&mut r)?;
        r.read_exact(&mut buf)
            .map_err(|e| DatasetError::Format(format!("truncated record {id}: {e}")))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        records.push((id, values));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DatasetError::Format(
            "trailing bytes after last record".into(),
        ));
    }
    Ok((dim, records))
}

pub fn write_observations(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DatasetError> {
    let dim = ds.d_in().ok_or(DatasetError::MissingObservations)?;
    let records = ds
        .images()
        .iter()
        .map(|img| {
            img.observation
                .as_deref()
                .map(|o| (img.id, o))
                .ok_or(DatasetError::MissingObservations)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_vectors(
        BufWriter::new(File::create(path)?),
        dim,
        records.into_iter(),
    )
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<Vec<(u32, Vec<f64>)>, DatasetError> {
    Ok(read_vectors(BufReader::new(File::open(path)?))?.1)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[SimilarityPair]) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut out, p).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<SimilarityPair>, DatasetError> {
    let reader = BufReader::new(File::open(path)?);
    let mut pairs = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DatasetError::Parse {
            line: n as u64 + 1,
            message,
        };
        let pair: SimilarityPair =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if pair.i == pair.j {
            return Err(parse_err(format!("self-pair on id {}", pair.i)));
        }
        if !(0.0..=1.0).contains(&pair.psi) {
            return Err(parse_err(format!("psi {} outside [0, 1]", pair.psi)));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

fn default_heading_jitter_deg() -> f64 {
    10.0
}
fn default_lateral_jitter_m() -> f64 {
    2.0
}
fn default_reverse_fraction() -> f64 {
    0.25
}

/// Parameters of a synthetic landmark world.
///
/// Landmarks and the observation projection depend on `seed` only;
/// camera placement and observation noise additionally depend on
/// `camera_seed` (defaults to `seed`), so several camera sets can be drawn in
/// the same world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub n_landmarks: usize,
    pub feature_dim: usize,
    pub n_map: usize,
    pub n_query: usize,
    pub trajectory_length_m: f64,
    pub fov_deg: f64,
    pub range_m: f64,
    pub noise_sigma: f64,
    pub d_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub camera_seed: Option<u64>,
    #[serde(default = "default_heading_jitter_deg")]
    pub heading_jitter_deg: f64,
    #[serde(default = "default_lateral_jitter_m")]
    pub lateral_jitter_m: f64,
    /// Fraction of cameras travelling the trajectory backwards.
    #[serde(default = "default_reverse_fraction")]
    pub reverse_fraction: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 3000,
            feature_dim: 16,
            n_map: 300,
            n_query: 100,
            trajectory_length_m: 600.0,
            fov_deg: 70.0,
            range_m: 40.0,
            noise_sigma: 0.05,
            d_in: 32,
            seed: 1,
            camera_seed: None,
            heading_jitter_deg: default_heading_jitter_deg(),
            lateral_jitter_m: default_lateral_jitter_m(),
            reverse_fraction: default_reverse_fraction(),
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Config(m.to_string()));
        if self.n_landmarks == 0 || self.feature_dim == 0 || self.d_in == 0 {
            return bad("n_landmarks, feature_dim and d_in must be > 0");
        }
        if self.n_map == 0 || self.n_query == 0 {
            return bad("n_map and n_query must be > 0");
        }
        if !(self.trajectory_length_m > 0.0) {
            return bad("trajectory_length_m must be > 0");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0");
        }
        if !(self.heading_jitter_deg >= 0.0) || !(self.lateral_jitter_m >= 0.0) {
            return bad("jitter values must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.reverse_fraction) {
            return bad("reverse_fraction must lie in [0, 1]");
        }
        if self.n_map + self.n_query > u32::MAX as usize {
            return bad("too many cameras");
        }
        CameraPose::new(0, 0.0, 0.0, 0.0, self.fov_deg.to_radians(), self.range_m)?;
        Ok(())
    }

    fn amplitude(&self) -> f64 {
        0.1 * self.trajectory_length_m
    }

    fn wavelength(&self) -> f64 {
        self.trajectory_length_m / 2.0
    }

    /// Point and tangent heading of the trajectory at arc parameter `s`.
    fn trajectory(&self, s: f64) -> ([f64; 2], f64) {
        let k = std::f64::consts::TAU / self.wavelength();
        let a = self.amplitude();
        let y = a * (k * s).sin();
        let dy = a * k * (k * s).cos();
        ([s, y], dy.atan2(1.0))
    }
}

/// Scales `v` by `1 / max(1, ‖v‖)`.
pub fn normalize_input(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

// Independent ChaCha streams per generator stage.
const STREAM_LANDMARKS: u64 = 1;
const STREAM_PROJECTION: u64 = 2;
const STREAM_CAMERAS: u64 = 3;
const STREAM_NOISE: u64 = 4;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Landmark {
    pos: [f64; 2],
    feature: Vec<f64>,
}

/// Builds a deterministic synthetic world: landmarks with random features,
/// cameras along a sinusoidal road, and observations that mix the features
/// of the landmarks inside each camera's frustum.
///
/// Observations are rounded to `f32` so that they survive a round trip
/// through the observations file unchanged.
pub fn generate_synthetic_world(cfg: &SyntheticWorldConfig) -> Result<Dataset, DatasetError> {
    cfg.validate()?;
    let fov = cfg.fov_deg.to_radians();
    let margin = cfg.range_m + 3.0 * cfg.lateral_jitter_m;
    let (x0, x1) = (-margin, cfg.trajectory_length_m + margin);
    let (y0, y1) = (-cfg.amplitude() - margin, cfg.amplitude() + margin);

    let mut rng = stream_rng(cfg.seed, STREAM_LANDMARKS);
    let landmarks: Vec<Landmark> = (0..cfg.n_landmarks)
        .map(|_| {
            let pos = [rng.random_range(x0..x1), rng.random_range(y0..y1)];
            let feature = (0..cfg.feature_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            Landmark { pos, feature }
        })
        .collect();

    let mut rng = stream_rng(cfg.seed, STREAM_PROJECTION);
    let proj_std = 1.0 / (cfg.feature_dim as f64).sqrt();
    let projection: Vec<f64> = (0..cfg.d_in * cfg.feature_dim)
        .map(|_| proj_std * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let camera_seed = cfg.camera_seed.unwrap_or(cfg.seed);
    let mut rng = stream_rng(camera_seed, STREAM_CAMERAS);
    let lateral = Normal::new(0.0, cfg.lateral_jitter_m).expect("validated sigma");
    let jitter = Normal::new(0.0, cfg.heading_jitter_deg.to_radians()).expect("validated sigma");
    let place = |id: u32, s: f64, rng: &mut ChaCha8Rng| -> Result<CameraPose, DatasetError> {
        let ([px, py], tangent) = cfg.trajectory(s);
        let offset = lateral.sample(rng);
        let (nx, ny) = (-tangent.sin(), tangent.cos());
        let reversed = rng.random_bool(cfg.reverse_fraction);
        let heading =
            tangent + jitter.sample(rng) + if reversed { std::f64::consts::PI } else { 0.0 };
        Ok(CameraPose::new(
            id,
            px + offset * nx,
            py + offset * ny,
            heading,
            fov,
            cfg.range_m,
        )?)
    };
    let spacing = cfg.trajectory_length_m / cfg.n_map as f64;
    let mut cameras = Vec::with_capacity(cfg.n_map + cfg.n_query);
    for k in 0..cfg.n_map {
        let pose = place(k as u32, (k as f64 + 0.5) * spacing, &mut rng)?;
        cameras.push((pose, Role::Map));
    }
    for k in 0..cfg.n_query {
        let s = rng.random_range(0.0..cfg.trajectory_length_m);
        let pose = place((cfg.n_map + k) as u32, s, &mut rng)?;
        cameras.push((pose, Role::Query));
    }

    let mut noise_rng = stream_rng(camera_seed, STREAM_NOISE);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
    let images = cameras
        .into_iter()
        .map(|(pose, role)| {
            let frustum = frustum_polygon(&pose);
            let mut mixture = vec![0.0; cfg.feature_dim];
            for lm in &landmarks {
                if !frustum.contains(lm.pos) {
                    continue;
                }
                let dist = (lm.pos[0] - pose.x).hypot(lm.pos[1] - pose.y);
                let w = (1.0 - dist / pose.range()).max(0.0);
                for (m, f) in mixture.iter_mut().zip(&lm.feature) {
                    *m += w * f;
                }
            }
            let mut obs: Vec<f64> = projection
                .chunks_exact(cfg.feature_dim)
                .map(|row| row.iter().zip(&mixture).map(|(p, m)| p * m).sum::<f64>())
                .collect();
            for o in obs.iter_mut() {
                *o += noise.sample(&mut noise_rng);
            }
            normalize_input(&mut obs);
            obs.iter_mut().for_each(|o| *o = *o as f32 as f64);
            PlaceImage {
                id: pose.id,
                pose,
                role,
                observation: Some(obs),
            }
        })
        .collect();
    Dataset::new(images)
}

/// Every candidate pair: map×map (unordered) followed by map×query.
pub fn pair_pool(ds: &Dataset) -> Vec<(u32, u32)> {
    let maps = ds.map_ids();
    let queries = ds.query_ids();
    let mut pool = Vec::with_capacity(
        maps.len() * (maps.len().saturating_sub(1)) / 2 + maps.len() * queries.len(),
    );
    for (a, &i) in maps.iter().enumerate() {
        for &j in &maps[a + 1..] {
            pool.push((i, j));
        }
    }
    for &i in &maps {
        for &j in &queries {
            pool.push((i, j));
        }
    }
    pool
}

/// Samples `n_pairs` distinct pairs uniformly from the pair pool and labels
/// them with their FoV overlap. `None` takes the whole pool in order.
pub fn build_pairs(
    ds: &Dataset,
    n_pairs: Option<usize>,
    seed: u64,
) -> Result<Vec<SimilarityPair>, DatasetError> {
    let pool = pair_pool(ds);
    let chosen: Vec<(u32, u32)> = match n_pairs {
        None => pool,
        Some(n) if n > pool.len() => {
            return Err(DatasetError::NotEnoughPairs {
                requested: n,
                available: pool.len(),
            })
        }
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            index::sample(&mut rng, pool.len(), n)
                .into_iter()
                .map(|k| pool[k])
                .collect()
        }
    };
    Ok(chosen
        .into_iter()
        .map(|(i, j)| {
            let a = &ds.get(i).expect("pool ids come from dataset").pose;
            let b = &ds.get(j).expect("pool ids come from dataset").pose;
            SimilarityPair {
                i,
                j,
                psi: fov_overlap(a, b).value(),
            }
        })
        .collect())
}
