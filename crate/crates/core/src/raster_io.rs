//! Scene and ground-truth raster I/O plus the on-disk dataset layout.
//!
//! A dataset root is organised per split and per band:
//!
//! ```text
//! <root>/<split>/<band>/<band>_<key>.TIF      band ∈ {blue, green, red, nir, gt}
//! ```
//!
//! `key` is a scene id for whole scenes or `patch_<row>_<col>_<scene_id>` for
//! prepared patches. Bands are single-channel 16-bit TIFFs, ground truth is
//! single-channel 8-bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};

use crate::tiling::{PatchGrid, PATCH_SIZE};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("scene `{scene_id}` is missing its {band} band")]
    MissingBand { scene_id: String, band: String },
    #[error("dimension mismatch for `{what}`: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset layout error: missing directory {0}")]
    Layout(PathBuf),
    #[error("training scene `{0}` has no ground truth")]
    MissingGt(String),
    #[error("duplicate scene id `{0}`")]
    DuplicateScene(String),
    #[error("invalid raster: {0}")]
    Invalid(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, RasterError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasterError + '_ {
    move |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn decode_err(path: &Path, message: impl ToString) -> RasterError {
    RasterError::Decode {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Row-major single-channel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<P> {
    height: usize,
    width: usize,
    data: Vec<P>,
}

impl<P: Copy> Raster<P> {
    pub fn new(height: usize, width: usize, data: Vec<P>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(RasterError::Invalid(format!(
                "raster must be at least 1x1, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(RasterError::Invalid(format!(
                "{} values for a {height}x{width} raster",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: P) -> Self {
        assert!(height > 0 && width > 0, "raster must be at least 1x1");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> P) -> Self {
        assert!(height > 0 && width > 0, "raster must be at least 1x1");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> P {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: P) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[P] {
        &self.data
    }

    pub fn into_data(self) -> Vec<P> {
        self.data
    }

    pub fn map<Q: Copy>(&self, f: impl Fn(P) -> Q) -> Raster<Q> {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }
}

/// Landsat 8 bands 2–5 in the fixed channel order used everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Blue,
    Green,
    Red,
    Nir,
}

impl Band {
    pub const ORDER: [Band; 4] = [Band::Blue, Band::Green, Band::Red, Band::Nir];

    pub fn name(self) -> &'static str {
        match self {
            Band::Blue => "blue",
            Band::Green => "green",
            Band::Red => "red",
            Band::Nir => "nir",
        }
    }

    pub fn landsat8_band(self) -> u8 {
        match self {
            Band::Blue => 2,
            Band::Green => 3,
            Band::Red => 4,
            Band::Nir => 5,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

pub const GT_DIR: &str = "gt";

/// One acquisition as four co-registered 16-bit band rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralScene {
    scene_id: String,
    bands: [Raster<u16>; 4],
}

impl SpectralScene {
    /// Bands in [`Band::ORDER`]; all four must share dimensions.
    pub fn new(scene_id: impl Into<String>, bands: [Raster<u16>; 4]) -> Result<Self> {
        let scene_id = scene_id.into();
        let expected = bands[0].dims();
        for (band, raster) in Band::ORDER.iter().zip(&bands) {
            if raster.dims() != expected {
                return Err(RasterError::DimensionMismatch {
                    what: format!("{scene_id}/{}", band.name()),
                    expected,
                    found: raster.dims(),
                });
            }
        }
        Ok(Self { scene_id, bands })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn height(&self) -> usize {
        self.bands[0].height()
    }

    pub fn width(&self) -> usize {
        self.bands[0].width()
    }

    pub fn band(&self, band: Band) -> &Raster<u16> {
        &self.bands[band.index()]
    }

    pub fn bands(&self) -> &[Raster<u16>; 4] {
        &self.bands
    }
}

/// Binary cloud mask: 0 = clear, 1 = cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthMask {
    scene_id: String,
    mask: Raster<u8>,
}

impl GroundTruthMask {
    pub fn new(scene_id: impl Into<String>, mask: Raster<u8>) -> Result<Self> {
        if mask.data().iter().any(|&v| v > 1) {
            return Err(RasterError::Invalid("ground truth must be binary".into()));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            mask,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn mask(&self) -> &Raster<u8> {
        &self.mask
    }

    pub fn into_mask(self) -> Raster<u8> {
        self.mask
    }
}

/// Decoded single-channel raster, keeping the on-disk sample type.
#[derive(Clone, Debug, PartialEq)]
pub enum GrayRaster {
    U8(Raster<u8>),
    U16(Raster<u16>),
    F32(Raster<f32>),
}

impl GrayRaster {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            GrayRaster::U8(r) => r.dims(),
            GrayRaster::U16(r) => r.dims(),
            GrayRaster::F32(r) => r.dims(),
        }
    }
}

pub fn read_gray(path: &Path) -> Result<GrayRaster> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = Decoder::new(BufReader::new(file))
        .map_err(|e| decode_err(path, e))?
        .with_limits(Limits::unlimited());
    let (w, h) = decoder.dimensions().map_err(|e| decode_err(path, e))?;
    match decoder.colortype().map_err(|e| decode_err(path, e))? {
        tiff::ColorType::Gray(_) => {}
        other => {
            return Err(decode_err(
                path,
                format!("expected a single-channel raster, found {other:?}"),
            ))
        }
    }
    let (h, w) = (h as usize, w as usize);
    let raster = match decoder.read_image().map_err(|e| decode_err(path, e))? {
        DecodingResult::U8(v) => GrayRaster::U8(Raster::new(h, w, v)?),
        DecodingResult::U16(v) => GrayRaster::U16(Raster::new(h, w, v)?),
        DecodingResult::F32(v) => GrayRaster::F32(Raster::new(h, w, v)?),
        _ => return Err(decode_err(path, "unsupported sample format")),
    };
    Ok(raster)
}

/// Reads only the header to obtain `(height, width)`.
pub fn read_dimensions(path: &Path) -> Result<(usize, usize)> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut decoder = Decoder::new(BufReader::new(file)).map_err(|e| decode_err(path, e))?;
    let (w, h) = decoder.dimensions().map_err(|e| decode_err(path, e))?;
    Ok((h as usize, w as usize))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

pub fn write_u16(path: &Path, raster: &Raster<u16>) -> Result<()> {
    let mut out = create(path)?;
    let mut enc = TiffEncoder::new(&mut out).map_err(|e| decode_err(path, e))?;
    enc.write_image::<colortype::Gray16>(raster.width as u32, raster.height as u32, raster.data())
        .map_err(|e| decode_err(path, e))
}

pub fn write_u8(path: &Path, raster: &Raster<u8>) -> Result<()> {
    let mut out = create(path)?;
    let mut enc = TiffEncoder::new(&mut out).map_err(|e| decode_err(path, e))?;
    enc.write_image::<colortype::Gray8>(raster.width as u32, raster.height as u32, raster.data())
        .map_err(|e| decode_err(path, e))
}

pub fn write_f32(path: &Path, raster: &Raster<f32>) -> Result<()> {
    let mut out = create(path)?;
    let mut enc = TiffEncoder::new(&mut out).map_err(|e| decode_err(path, e))?;
    enc.write_image::<colortype::Gray32Float>(
        raster.width as u32,
        raster.height as u32,
        raster.data(),
    )
    .map_err(|e| decode_err(path, e))
}

fn read_band(path: &Path) -> Result<Raster<u16>> {
    match read_gray(path)? {
        GrayRaster::U16(r) => Ok(r),
        GrayRaster::U8(r) => Ok(r.map(u16::from)),
        GrayRaster::F32(_) => Err(decode_err(path, "band rasters must be unsigned integers")),
    }
}

/// Loads four band files given in blue, green, red, nir order.
pub fn load_scene(scene_id: &str, band_paths: &[PathBuf]) -> Result<SpectralScene> {
    for (i, band) in Band::ORDER.iter().enumerate() {
        match band_paths.get(i) {
            Some(p) if p.is_file() => {}
            _ => {
                return Err(RasterError::MissingBand {
                    scene_id: scene_id.to_string(),
                    band: band.name().to_string(),
                })
            }
        }
    }
    if band_paths.len() > 4 {
        return Err(RasterError::Invalid(format!(
            "expected 4 band files, got {}",
            band_paths.len()
        )));
    }
    let bands = [
        read_band(&band_paths[0])?,
        read_band(&band_paths[1])?,
        read_band(&band_paths[2])?,
        read_band(&band_paths[3])?,
    ];
    SpectralScene::new(scene_id, bands)
}

/// Any nonzero sample becomes cloud (1).
pub fn load_gt(path: &Path, scene: &SpectralScene) -> Result<GroundTruthMask> {
    let mask = match read_gray(path)? {
        GrayRaster::U8(r) => r.map(|v| u8::from(v != 0)),
        GrayRaster::U16(r) => r.map(|v| u8::from(v != 0)),
        GrayRaster::F32(r) => r.map(|v| u8::from(v != 0.0)),
    };
    let expected = (scene.height(), scene.width());
    if mask.dims() != expected {
        return Err(RasterError::DimensionMismatch {
            what: format!("{}/gt", scene.scene_id()),
            expected,
            found: mask.dims(),
        });
    }
    GroundTruthMask::new(scene.scene_id(), mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn layout_path(root: &Path, split: Split, dir: &str, key: &str) -> PathBuf {
    root.join(split.name())
        .join(dir)
        .join(format!("{dir}_{key}.TIF"))
}

/// Writes the four bands of `scene` under `key` in the dataset layout.
pub fn write_scene(root: &Path, split: Split, key: &str, scene: &SpectralScene) -> Result<()> {
    for band in Band::ORDER {
        write_u16(&layout_path(root, split, band.name(), key), scene.band(band))?;
    }
    Ok(())
}

/// Writes a binary mask as `{0, 255}` in the `gt` directory.
pub fn write_gt(root: &Path, split: Split, key: &str, mask: &Raster<u8>) -> Result<()> {
    write_u8(
        &layout_path(root, split, GT_DIR, key),
        &mask.map(|v| if v != 0 { 255 } else { 0 }),
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub bands: [PathBuf; 4],
    pub gt: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn load_scene(&self) -> Result<SpectralScene> {
        load_scene(&self.scene_id, &self.bands)
    }

    pub fn load_gt(&self, scene: &SpectralScene) -> Result<Option<GroundTruthMask>> {
        self.gt.as_deref().map(|p| load_gt(p, scene)).transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    /// Number of 384x384 grid cells across all entries.
    pub patch_count: usize,
}

impl DatasetManifest {
    /// Validates entries and counts patches from raster headers.
    pub fn from_entries(split: Split, mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        let mut seen = BTreeSet::new();
        let mut patch_count = 0;
        for e in &entries {
            if !seen.insert(e.scene_id.as_str()) {
                return Err(RasterError::DuplicateScene(e.scene_id.clone()));
            }
            if split == Split::Train && e.gt.is_none() {
                return Err(RasterError::MissingGt(e.scene_id.clone()));
            }
            let (h, w) = read_dimensions(&e.bands[0])?;
            patch_count += PatchGrid::new(&e.scene_id, h, w, PATCH_SIZE).cell_count();
        }
        Ok(Self {
            split,
            entries,
            patch_count,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| RasterError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(["scene_id", "blue", "green", "red", "nir", "gt"])
            .map_err(csv_err)?;
        for e in &self.entries {
            let mut rec = vec![e.scene_id.clone()];
            rec.extend(e.bands.iter().map(|p| p.display().to_string()));
            rec.push(e.gt.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn read_csv(path: &Path, split: Split) -> Result<Self> {
        let bad = |message: String| RasterError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != ["scene_id", "blue", "green", "red", "nir", "gt"] {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let field = |i: usize| rec.get(i).unwrap_or_default().to_string();
            let gt = field(5);
            entries.push(ManifestEntry {
                scene_id: field(0),
                bands: [1, 2, 3, 4].map(|i| PathBuf::from(field(i))),
                gt: (!gt.is_empty()).then(|| PathBuf::from(gt)),
            });
        }
        Self::from_entries(split, entries)
    }
}

fn is_tiff(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
}

/// Maps `key -> path` for every `<dir>_<key>.TIF` file in `dir_path`.
fn scan_dir(dir_path: &Path, dir: &str) -> Result<BTreeMap<String, PathBuf>> {
    let prefix = format!("{dir}_");
    let mut found = BTreeMap::new();
    for item in fs::read_dir(dir_path).map_err(io_err(dir_path))? {
        let path = item.map_err(io_err(dir_path))?.path();
        if !path.is_file() || !is_tiff(&path) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(key) = stem.strip_prefix(&prefix) {
            if found.insert(key.to_string(), path.clone()).is_some() {
                return Err(RasterError::DuplicateScene(key.to_string()));
            }
        }
    }
    Ok(found)
}

/// Discovers every scene (or patch) under `<root>/<split>/`.
///
/// An absent or empty split directory yields an empty manifest. Once any band
/// directory exists, all four must.
pub fn build_manifest(root: &Path, split: Split) -> Result<DatasetManifest> {
    let split_dir = root.join(split.name());
    let band_dirs = Band::ORDER.map(|b| split_dir.join(b.name()));
    let gt_dir = split_dir.join(GT_DIR);
    if band_dirs.iter().all(|d| !d.is_dir()) {
        return DatasetManifest::from_entries(split, Vec::new());
    }
    if let Some(missing) = band_dirs.iter().find(|d| !d.is_dir()) {
        return Err(RasterError::Layout(missing.clone()));
    }

    let mut per_band = Vec::with_capacity(4);
    for (band, dir) in Band::ORDER.iter().zip(&band_dirs) {
        per_band.push(scan_dir(dir, band.name())?);
    }
    let gts = if gt_dir.is_dir() {
        scan_dir(&gt_dir, GT_DIR)?
    } else {
        BTreeMap::new()
    };

    let keys: BTreeSet<&String> = per_band.iter().flat_map(|m| m.keys()).collect();
    let mut entries = Vec::with_capacity(keys.len());
    for key in keys {
        let mut paths = Vec::with_capacity(4);
        for (band, files) in Band::ORDER.iter().zip(&per_band) {
            match files.get(key) {
                Some(p) => paths.push(p.clone()),
                None => {
                    return Err(RasterError::MissingBand {
                        scene_id: key.clone(),
                        band: band.name().to_string(),
                    })
                }
            }
        }
        entries.push(ManifestEntry {
            scene_id: key.clone(),
            bands: paths.try_into().expect("four bands"),
            gt: gts.get(key).cloned(),
        });
    }
    DatasetManifest::from_entries(split, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn scene(id: &str, h: usize, w: usize) -> SpectralScene {
        let bands = [0u16, 1, 2, 3].map(|b| {
            Raster::from_fn(h, w, |r, c| ((r * 131 + c * 7 + b as usize * 1000) % 65536) as u16)
        });
        SpectralScene::new(id, bands).unwrap()
    }

    fn paths(root: &Path, split: Split, key: &str) -> Vec<PathBuf> {
        Band::ORDER
            .iter()
            .map(|b| layout_path(root, split, b.name(), key))
            .collect()
    }

    #[test]
    fn load_scene_passes_dimensions_through() {
        let dir = tempdir().unwrap();
        let s = scene("s1", 768, 768);
        write_scene(dir.path(), Split::Train, "s1", &s).unwrap();
        let loaded = load_scene("s1", &paths(dir.path(), Split::Train, "s1")).unwrap();
        assert_eq!((loaded.height(), loaded.width()), (768, 768));
        assert_eq!(loaded, s);
    }

    #[test]
    fn three_band_files_is_missing_band() {
        let dir = tempdir().unwrap();
        write_scene(dir.path(), Split::Train, "s1", &scene("s1", 4, 4)).unwrap();
        let mut p = paths(dir.path(), Split::Train, "s1");
        p.pop();
        match load_scene("s1", &p) {
            Err(RasterError::MissingBand { band, .. }) => assert_eq!(band, "nir"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn absent_path_is_missing_band() {
        let dir = tempdir().unwrap();
        write_scene(dir.path(), Split::Train, "s1", &scene("s1", 4, 4)).unwrap();
        let p = paths(dir.path(), Split::Train, "s1");
        fs::remove_file(&p[1]).unwrap();
        assert!(matches!(
            load_scene("s1", &p),
            Err(RasterError::MissingBand { band, .. }) if band == "green"
        ));
    }

    #[test]
    fn unequal_band_shapes_are_rejected() {
        let dir = tempdir().unwrap();
        let p = paths(dir.path(), Split::Train, "s1");
        for (i, path) in p.iter().enumerate() {
            let w = if i == 2 { 767 } else { 768 };
            write_u16(path, &Raster::filled(768, w, 9)).unwrap();
        }
        assert!(matches!(
            load_scene("s1", &p),
            Err(RasterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn garbage_file_is_decode_error() {
        let dir = tempdir().unwrap();
        let p = paths(dir.path(), Split::Train, "s1");
        for path in &p {
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, b"not a tiff").unwrap();
        }
        assert!(matches!(load_scene("s1", &p), Err(RasterError::Decode { .. })));
    }

    #[test]
    fn gt_canonicalizes_255_to_one() {
        let dir = tempdir().unwrap();
        let s = scene("s", 3, 3);
        let path = dir.path().join("gt.TIF");
        write_u8(&path, &Raster::from_fn(3, 3, |r, _| if r == 1 { 255 } else { 0 })).unwrap();
        let gt = load_gt(&path, &s).unwrap();
        assert_eq!(gt.mask().data(), &[0, 0, 0, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn all_zero_gt_stays_zero() {
        let dir = tempdir().unwrap();
        let s = scene("s", 5, 2);
        let path = dir.path().join("gt.TIF");
        write_u8(&path, &Raster::filled(5, 2, 0)).unwrap();
        assert!(load_gt(&path, &s).unwrap().mask().data().iter().all(|&v| v == 0));
    }

    #[test]
    fn gt_dimension_mismatch() {
        let dir = tempdir().unwrap();
        let s = scene("s", 384, 384);
        let path = dir.path().join("gt.TIF");
        write_u8(&path, &Raster::filled(768, 768, 1)).unwrap();
        assert!(matches!(
            load_gt(&path, &s),
            Err(RasterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn manifest_of_eighteen_training_scenes() {
        let dir = tempdir().unwrap();
        for i in 0..18 {
            let id = format!("LC08_{i:02}");
            write_scene(dir.path(), Split::Train, &id, &scene(&id, 8, 8)).unwrap();
            write_gt(dir.path(), Split::Train, &id, &Raster::filled(8, 8, 1)).unwrap();
        }
        let m = build_manifest(dir.path(), Split::Train).unwrap();
        assert_eq!(m.entries.len(), 18);
        assert_eq!(m.patch_count, 18);
        assert_eq!(m.entries[0].scene_id, "LC08_00");
        assert_eq!(m, build_manifest(dir.path(), Split::Train).unwrap());
    }

    #[test]
    fn empty_root_gives_empty_manifest() {
        let dir = tempdir().unwrap();
        let m = build_manifest(dir.path(), Split::Test).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.patch_count, 0);
    }

    #[test]
    fn missing_nir_file_names_the_scene() {
        let dir = tempdir().unwrap();
        for id in ["a", "b"] {
            write_scene(dir.path(), Split::Test, id, &scene(id, 4, 4)).unwrap();
        }
        fs::remove_file(layout_path(dir.path(), Split::Test, "nir", "b")).unwrap();
        match build_manifest(dir.path(), Split::Test) {
            Err(RasterError::MissingBand { scene_id, band }) => {
                assert_eq!((scene_id.as_str(), band.as_str()), ("b", "nir"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_band_directory_is_layout_error() {
        let dir = tempdir().unwrap();
        write_scene(dir.path(), Split::Test, "a", &scene("a", 4, 4)).unwrap();
        fs::remove_dir_all(dir.path().join("test").join("red")).unwrap();
        assert!(matches!(
            build_manifest(dir.path(), Split::Test),
            Err(RasterError::Layout(p)) if p.ends_with("red")
        ));
    }

    #[test]
    fn train_split_requires_gt() {
        let dir = tempdir().unwrap();
        write_scene(dir.path(), Split::Train, "a", &scene("a", 4, 4)).unwrap();
        assert!(matches!(
            build_manifest(dir.path(), Split::Train),
            Err(RasterError::MissingGt(id)) if id == "a"
        ));
        // Test split entries may omit GT.
        write_scene(dir.path(), Split::Test, "a", &scene("a", 4, 4)).unwrap();
        assert_eq!(build_manifest(dir.path(), Split::Test).unwrap().entries.len(), 1);
    }

    #[test]
    fn manifest_csv_round_trip() {
        let dir = tempdir().unwrap();
        for id in ["x", "y"] {
            write_scene(dir.path(), Split::Train, id, &scene(id, 400, 10)).unwrap();
            write_gt(dir.path(), Split::Train, id, &Raster::filled(400, 10, 0)).unwrap();
        }
        let m = build_manifest(dir.path(), Split::Train).unwrap();
        assert_eq!(m.patch_count, 4);
        let csv_path = dir.path().join("train_manifest.csv");
        m.write_csv(&csv_path).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("scene_id,blue,green,red,nir,gt\n"));
        assert_eq!(DatasetManifest::read_csv(&csv_path, Split::Train).unwrap(), m);
    }
}
