//! Keyframe database: interval sampling, precomputed representations and a
//! little-endian binary file format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "BEVLMAP\0"
//! version    u32      = 1
//! fp_len     u32      length of the fingerprint block
//! fingerprint         side u32, cell f64, z_min f64, z_max f64, n_z u32,
//!                     n_theta u32, n_tau u32, n_omega u32,
//!                     bank kind u8 (0 uniform, 1 seeded), bank seed u64,
//!                     ground_z f64, antialias sigma f64, plane sigma f64,
//!                     plane window f64
//! count      u64
//! per keyframe:
//!   id u64, theta f64, x f64, y f64
//!   bev      rows u32, cols u32, channels u32, f32 data
//!   spectrum n_theta u32, n_omega u32, f32 data
//!   neural   rows u32, cols u32, channels u32, f32 data
//! ```

use std::borrow::Cow;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::correlation::PlaneSpectrum;
use crate::exec::Exec;
use crate::geometry::{PointCloud, Pose2};
use crate::grid::{voxelize_to_bev, BevGrid, GridError, GridSpec};
use crate::repr::{neural_plane, rotation_spectrum, BankSpec, FilterBank, ReprConfig, ReprError, Spectrum};

pub const MAP_MAGIC: [u8; 8] = *b"BEVLMAP\0";
pub const MAP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("no observations to build a map from")]
    EmptyObservations,
    #[error("database is empty")]
    EmptyDatabase,
    #[error("interval must be positive and finite, got {0}")]
    InvalidInterval(f64),
    #[error("observation {0} has a non-finite pose or cloud")]
    NonFinite(u64),
    #[error("keyframe ids must be strictly increasing ({prev} then {next})")]
    IdsNotIncreasing { prev: u64, next: u64 },
    #[error("keyframe {0} does not match the database configuration")]
    ShapeMismatch(u64),
    #[error("invalid map configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error("not a map file (bad magic)")]
    BadMagic,
    #[error("unsupported map format version {0}")]
    UnsupportedVersion(u32),
    #[error("configuration fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("map file is truncated")]
    Truncated,
    #[error("corrupt map file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<GridError> for MapError {
    fn from(e: GridError) -> Self {
        MapError::InvalidConfig(e.to_string())
    }
}

/// Everything that determines how a scan becomes a keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub grid: GridSpec,
    pub repr: ReprConfig,
    pub ground_z_m: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        Self {
            grid,
            repr: ReprConfig::for_grid(&grid),
            ground_z_m: 0.3,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        self.grid.validate()?;
        self.repr.validate()?;
        if !self.ground_z_m.is_finite() {
            return Err(MapError::InvalidConfig("ground_z_m must be finite".into()));
        }
        Ok(())
    }

    pub fn bank(&self) -> FilterBank {
        self.repr.bank.build(self.grid.n_z_channels)
    }

    /// Canonical byte encoding of the configuration.
    pub fn fingerprint_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u32(self.grid.side_cells as u32);
        w.f64(self.grid.cell_size_m);
        w.f64(self.grid.z_min_m);
        w.f64(self.grid.z_max_m);
        w.u32(self.grid.n_z_channels as u32);
        w.u32(self.repr.n_theta as u32);
        w.u32(self.repr.n_tau as u32);
        w.u32(self.repr.n_omega as u32);
        match self.repr.bank {
            BankSpec::Uniform => {
                w.u8(0);
                w.u64(0);
            }
            BankSpec::Seeded { seed } => {
                w.u8(1);
                w.u64(seed);
            }
        }
        w.f64(self.ground_z_m);
        w.f64(self.repr.antialias_sigma_cells);
        w.f64(self.repr.plane_sigma_cells);
        w.f64(self.repr.plane_window_cells);
        w.buf
    }

    /// Hex SHA-256 of [`MapConfig::fingerprint_bytes`].
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.fingerprint_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn from_fingerprint_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        let mut r = Reader::new(bytes);
        let grid = GridSpec {
            side_cells: r.u32()? as usize,
            cell_size_m: r.f64()?,
            z_min_m: r.f64()?,
            z_max_m: r.f64()?,
            n_z_channels: r.u32()? as usize,
        };
        let n_theta = r.u32()? as usize;
        let n_tau = r.u32()? as usize;
        let n_omega = r.u32()? as usize;
        let kind = r.u8()?;
        let seed = r.u64()?;
        let bank = match kind {
            0 => BankSpec::Uniform,
            1 => BankSpec::Seeded { seed },
            k => return Err(MapError::Corrupt(format!("unknown bank kind {k}"))),
        };
        let ground_z_m = r.f64()?;
        let antialias_sigma_cells = r.f64()?;
        let plane_sigma_cells = r.f64()?;
        let plane_window_cells = r.f64()?;
        let cfg = Self {
            grid,
            repr: ReprConfig {
                n_theta,
                n_tau,
                n_omega,
                bank,
                antialias_sigma_cells,
                plane_sigma_cells,
                plane_window_cells,
            },
            ground_z_m,
        };
        cfg.validate().map_err(|e| MapError::Corrupt(e.to_string()))?;
        Ok(cfg)
    }
}

/// Rasterizes a sensor-frame scan under a map configuration.
pub fn scan_to_bev(cloud: &PointCloud, cfg: &MapConfig) -> BevGrid {
    voxelize_to_bev(&cloud.remove_ground(cfg.ground_z_m), &cfg.grid)
}

/// One raw map observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: u64,
    pub cloud: PointCloud,
    pub pose: Pose2,
}

/// A map keyframe with its precomputed representations.
#[derive(Debug)]
pub struct Keyframe {
    pub id: u64,
    pub pose: Pose2,
    pub bev: BevGrid,
    pub spectrum: Spectrum,
    pub neural: BevGrid,
    plane_cache: OnceLock<PlaneSpectrum>,
}

impl Clone for Keyframe {
    fn clone(&self) -> Self {
        Self::new(self.id, self.pose, self.bev.clone(), self.spectrum.clone(), self.neural.clone())
    }
}

impl PartialEq for Keyframe {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.pose == other.pose
            && self.bev == other.bev
            && self.spectrum == other.spectrum
            && self.neural == other.neural
    }
}

impl Keyframe {
    pub fn new(id: u64, pose: Pose2, bev: BevGrid, spectrum: Spectrum, neural: BevGrid) -> Self {
        Self {
            id,
            pose,
            bev,
            spectrum,
            neural,
            plane_cache: OnceLock::new(),
        }
    }

    pub fn from_bev(id: u64, pose: Pose2, bev: BevGrid, cfg: &MapConfig, bank: &FilterBank) -> Result<Self, MapError> {
        let spectrum = rotation_spectrum(&bev, bank, &cfg.repr)?;
        let neural = neural_plane(&bev, bank, &cfg.repr.plane_filter())?;
        Ok(Self::new(id, pose, bev, spectrum, neural))
    }

    pub fn from_cloud(
        id: u64,
        pose: Pose2,
        cloud: &PointCloud,
        cfg: &MapConfig,
        bank: &FilterBank,
    ) -> Result<Self, MapError> {
        Self::from_bev(id, pose, scan_to_bev(cloud, cfg), cfg, bank)
    }

    /// Transform of the neural plane at `padded`, cached for the first size
    /// requested.
    pub(crate) fn plane_spectrum(&self, padded: usize) -> Cow<'_, PlaneSpectrum> {
        let make = || PlaneSpectrum::with_padding(&self.neural, padded).expect("neural plane is single-channel");
        let cached = self.plane_cache.get_or_init(make);
        if cached.padded() == padded {
            Cow::Borrowed(cached)
        } else {
            Cow::Owned(make())
        }
    }

    fn matches(&self, cfg: &MapConfig) -> bool {
        let side = cfg.grid.side_cells;
        self.bev.side() == side
            && self.bev.channels() == cfg.grid.n_z_channels
            && self.neural.side() == side
            && self.neural.channels() == 1
            && self.spectrum.n_theta() == cfg.repr.n_theta
            && self.spectrum.n_omega() == cfg.repr.n_omega
    }
}

/// Immutable, id-ordered keyframe collection sharing one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeDatabase {
    config: MapConfig,
    keyframes: Vec<Keyframe>,
}

impl KeyframeDatabase {
    pub fn new(config: MapConfig, keyframes: Vec<Keyframe>) -> Result<Self, MapError> {
        config.validate()?;
        for pair in keyframes.windows(2) {
            if pair[1].id <= pair[0].id {
                return Err(MapError::IdsNotIncreasing {
                    prev: pair[0].id,
                    next: pair[1].id,
                });
            }
        }
        if let Some(bad) = keyframes.iter().find(|k| !k.matches(&config)) {
            return Err(MapError::ShapeMismatch(bad.id));
        }
        Ok(Self { config, keyframes })
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Keyframe> {
        self.keyframes
            .binary_search_by_key(&id, |k| k.id)
            .ok()
            .map(|i| &self.keyframes[i])
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }
}

/// Greedy interval sampling: the first pose is kept, then every pose at least
/// `interval_m` (XY) from the last kept one.
pub fn select_keyframes(poses: &[Pose2], interval_m: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, p) in poses.iter().enumerate() {
        match kept.last() {
            Some(&last) if poses[last].distance_xy(p) < interval_m => {}
            _ => kept.push(i),
        }
    }
    kept
}

pub fn build_map(
    observations: &[Observation],
    interval_m: f64,
    cfg: &MapConfig,
    exec: Exec,
) -> Result<KeyframeDatabase, MapError> {
    cfg.validate()?;
    if observations.is_empty() {
        return Err(MapError::EmptyObservations);
    }
    if !(interval_m.is_finite() && interval_m > 0.0) {
        return Err(MapError::InvalidInterval(interval_m));
    }
    if let Some(bad) = observations.iter().find(|o| !o.pose.is_finite() || !o.cloud.is_finite()) {
        return Err(MapError::NonFinite(bad.id));
    }
    for pair in observations.windows(2) {
        if pair[1].id <= pair[0].id {
            return Err(MapError::IdsNotIncreasing {
                prev: pair[0].id,
                next: pair[1].id,
            });
        }
    }
    let poses: Vec<Pose2> = observations.iter().map(|o| o.pose).collect();
    let kept = select_keyframes(&poses, interval_m);
    let bank = cfg.bank();
    let keyframes = exec
        .map(&kept, |&i| {
            let o = &observations[i];
            Keyframe::from_cloud(o.id, o.pose, &o.cloud, cfg, &bank)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    KeyframeDatabase::new(*cfg, keyframes)
}

/// Closest pose by XY distance; ties go to the earlier entry.
pub fn nearest_pose(poses: impl IntoIterator<Item = (u64, Pose2)>, query: &Pose2) -> Option<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for (id, p) in poses {
        let d = p.distance_xy(query);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((id, d));
        }
    }
    best
}

pub fn nearest_keyframe(db: &KeyframeDatabase, pose: &Pose2) -> Result<(u64, f64), MapError> {
    nearest_pose(db.keyframes.iter().map(|k| (k.id, k.pose)), pose).ok_or(MapError::EmptyDatabase)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn grid(&mut self, g: &BevGrid) {
        self.u32(g.side() as u32);
        self.u32(g.side() as u32);
        self.u32(g.channels() as u32);
        self.f32s(g.data());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MapError> {
        let end = self.pos.checked_add(n).ok_or(MapError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(MapError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MapError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, MapError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, MapError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, MapError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, MapError> {
        let bytes = self.take(n.checked_mul(4).ok_or(MapError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn grid(&mut self, spec: &GridSpec, channels: usize) -> Result<BevGrid, MapError> {
        let (rows, cols, ch) = (self.u32()? as usize, self.u32()? as usize, self.u32()? as usize);
        if rows != spec.side_cells || cols != spec.side_cells || ch != channels {
            return Err(MapError::Corrupt(format!("grid dims {rows}x{cols}x{ch}")));
        }
        let data = self.f32s(rows * cols * ch)?;
        BevGrid::from_data(*spec, ch, data).map_err(|e| MapError::Corrupt(e.to_string()))
    }
}

fn write_header(w: &mut Writer, cfg: &MapConfig, count: usize) {
    w.buf.extend_from_slice(&MAP_MAGIC);
    w.u32(MAP_VERSION);
    let fp = cfg.fingerprint_bytes();
    w.u32(fp.len() as u32);
    w.buf.extend_from_slice(&fp);
    w.u64(count as u64);
}

fn write_keyframe(w: &mut Writer, k: &Keyframe) {
    w.u64(k.id);
    w.f64(k.pose.theta);
    w.f64(k.pose.x);
    w.f64(k.pose.y);
    w.grid(&k.bev);
    w.u32(k.spectrum.n_theta() as u32);
    w.u32(k.spectrum.n_omega() as u32);
    w.f32s(k.spectrum.data());
    w.grid(&k.neural);
}

pub fn encode_map(db: &KeyframeDatabase) -> Vec<u8> {
    let mut w = Writer::default();
    write_header(&mut w, &db.config, db.keyframes.len());
    for k in &db.keyframes {
        write_keyframe(&mut w, k);
    }
    w.buf
}

fn read_header(r: &mut Reader<'_>) -> Result<(MapConfig, u64), MapError> {
    let magic = r.take(MAP_MAGIC.len()).map_err(|_| MapError::BadMagic)?;
    if magic != MAP_MAGIC {
        return Err(MapError::BadMagic);
    }
    let version = r.u32()?;
    if version != MAP_VERSION {
        return Err(MapError::UnsupportedVersion(version));
    }
    let fp_len = r.u32()? as usize;
    let cfg = MapConfig::from_fingerprint_bytes(r.take(fp_len)?)?;
    let count = r.u64()?;
    Ok((cfg, count))
}

pub fn decode_map(bytes: &[u8]) -> Result<KeyframeDatabase, MapError> {
    let mut r = Reader::new(bytes);
    let (cfg, count) = read_header(&mut r)?;
    let mut keyframes = Vec::new();
    for _ in 0..count {
        let id = r.u64()?;
        let (theta, x, y) = (r.f64()?, r.f64()?, r.f64()?);
        let bev = r.grid(&cfg.grid, cfg.grid.n_z_channels)?;
        let (nt, nw) = (r.u32()? as usize, r.u32()? as usize);
        if nt != cfg.repr.n_theta || nw != cfg.repr.n_omega {
            return Err(MapError::Corrupt(format!("spectrum dims {nt}x{nw}")));
        }
        let spectrum = Spectrum::from_data(nt, nw, r.f32s(nt * nw)?);
        let neural = r.grid(&cfg.grid, 1)?;
        // stored theta is already wrapped; keep the bits as written
        let pose = Pose2 { theta, x, y };
        keyframes.push(Keyframe::new(id, pose, bev, spectrum, neural));
    }
    if r.pos != bytes.len() {
        return Err(MapError::Corrupt("trailing bytes".into()));
    }
    KeyframeDatabase::new(cfg, keyframes).map_err(|e| MapError::Corrupt(e.to_string()))
}

pub fn save_map(db: &KeyframeDatabase, path: impl AsRef<Path>) -> Result<(), MapError> {
    std::fs::write(path, encode_map(db))?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<KeyframeDatabase, MapError> {
    decode_map(&std::fs::read(path)?)
}

/// Reads only the header of a map file.
pub fn read_map_config(path: impl AsRef<Path>) -> Result<MapConfig, MapError> {
    let bytes = std::fs::read(path)?;
    Ok(read_header(&mut Reader::new(&bytes))?.0)
}

/// Appends keyframes built under `cfg` to an existing map file.
pub fn append_keyframes(path: impl AsRef<Path>, cfg: &MapConfig, keyframes: Vec<Keyframe>) -> Result<(), MapError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (stored, _) = read_header(&mut Reader::new(&bytes))?;
    if stored.fingerprint() != cfg.fingerprint() {
        return Err(MapError::FingerprintMismatch {
            expected: stored.fingerprint(),
            found: cfg.fingerprint(),
        });
    }
    let db = decode_map(&bytes)?;
    let mut all = db.keyframes;
    all.extend(keyframes);
    save_map(&KeyframeDatabase::new(stored, all)?, path)
}
