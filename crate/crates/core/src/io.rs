//! On-disk formats.
//!
//! * Camera manifests are JSON lines, one [`CameraRecord`] per view.
//! * Point clouds are text lines of three whitespace-separated floats.
//!   Blank lines and lines starting with `#` are skipped.
//! * Volumes use the `VXG1` layout: the magic bytes, then `u32` side,
//!   `u32` channels and a zero `u32`, then `side^3 * channels` little-endian
//!   `f32` values ordered z, y, x, channel. Radiance grids have 4 channels.
//! * `.f32img` images hold `u32` height, width and channel count (3),
//!   then little-endian `f32` values in row-major, channel-last order.
//! * Fit histories are lines of `iter loss psnr_train psnr_unseen`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::FeatureVolume;
use crate::field::{VoxelGrid, CHANNELS, DEFAULT_WORLD_SIZE};
use crate::fit::FitRecord;
use crate::geometry::{CameraPose, ImageSize, Intrinsics, Mat3, Vec3};
use crate::imaging::Image;
use crate::minens::{Articulation, MinensExample, RgbaImage, Skin, View};

pub const VOLUME_MAGIC: &[u8; 4] = b"VXG1";
const VOLUME_HEADER: usize = 16;
const IMAGE_HEADER: usize = 12;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), message: message.into() }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|e| IoError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

/// One camera of a manifest. Rotation is row-major and intrinsics are
/// `[fx, fy, cx, cy]` in NDC units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub view: String,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub intrinsics: [f64; 4],
}

impl CameraRecord {
    pub fn from_pose(view: impl Into<String>, pose: &CameraPose) -> Self {
        let r = pose.rotation();
        let t = pose.translation();
        let k = pose.intrinsics();
        Self {
            view: view.into(),
            rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
            translation: [t.x, t.y, t.z],
            intrinsics: [k.fx, k.fy, k.cx, k.cy],
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose, crate::geometry::GeometryError> {
        let [fx, fy, cx, cy] = self.intrinsics;
        let k = Intrinsics::new(fx, fy, cx, cy)?;
        CameraPose::new(Mat3::from_row_slice(&self.rotation), Vec3::from(self.translation), k)
    }
}

pub fn format_camera_manifest(records: &[CameraRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("camera records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_camera_manifest(path: &Path, records: &[CameraRecord]) -> Result<(), IoError> {
    write_file(path, format_camera_manifest(records))
}

pub fn parse_camera_manifest(path: &Path, text: &str) -> Result<Vec<CameraRecord>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CameraRecord =
            serde_json::from_str(line).map_err(|e| IoError::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        record.to_pose().map_err(|e| IoError::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_camera_manifest(path: &Path) -> Result<Vec<CameraRecord>, IoError> {
    parse_camera_manifest(path, &read_text(path)?)
}

pub fn parse_point_cloud(path: &Path, text: &str) -> Result<Vec<Vec3>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| IoError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 values, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (v, f) in p.iter_mut().zip(&fields) {
            *v = f.parse::<f64>().map_err(|e| err(format!("{f:?}: {e}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite coordinate {f:?}")));
            }
        }
        out.push(Vec3::from(p));
    }
    Ok(out)
}

pub fn read_point_cloud(path: &Path) -> Result<Vec<Vec3>, IoError> {
    parse_point_cloud(path, &read_text(path)?)
}

pub fn format_point_cloud(points: &[Vec3]) -> String {
    points.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect()
}

pub fn encode_volume(side: usize, channels: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), side * side * side * channels, "volume buffer length");
    let mut out = Vec::with_capacity(VOLUME_HEADER + values.len() * 4);
    out.extend_from_slice(VOLUME_MAGIC);
    for v in [side as u32, channels as u32, 0u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn f32_values(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64).collect()
}

/// Side, channel count and values of a `VXG1` buffer.
pub fn decode_volume(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<f64>), IoError> {
    if bytes.len() < VOLUME_HEADER || &bytes[..4] != VOLUME_MAGIC {
        return Err(IoError::format(path, "missing VXG1 header"));
    }
    let side = u32_at(bytes, 4) as usize;
    let channels = u32_at(bytes, 8) as usize;
    if u32_at(bytes, 12) != 0 {
        return Err(IoError::format(path, "reserved header field is not zero"));
    }
    let expected = side.checked_pow(3).and_then(|n| n.checked_mul(channels)).and_then(|n| n.checked_mul(4));
    if side == 0 || channels == 0 || expected != Some(bytes.len() - VOLUME_HEADER) {
        return Err(IoError::format(path, format!("payload of {} bytes does not match side {side} and {channels} channels", bytes.len() - VOLUME_HEADER)));
    }
    Ok((side, channels, f32_values(&bytes[VOLUME_HEADER..])))
}

pub fn write_grid(path: &Path, grid: &VoxelGrid) -> Result<(), IoError> {
    write_file(path, encode_volume(grid.side(), CHANNELS, grid.values()))
}

/// Reads a radiance grid; the file does not store the extent, so the grid
/// spans the default world size.
pub fn read_grid(path: &Path) -> Result<VoxelGrid, IoError> {
    let (side, channels, values) = decode_volume(path, &read_bytes(path)?)?;
    if channels != CHANNELS {
        return Err(IoError::format(path, format!("radiance grids have {CHANNELS} channels, found {channels}")));
    }
    VoxelGrid::from_values(side, DEFAULT_WORLD_SIZE, values).ok_or_else(|| IoError::format(path, "non-finite grid values"))
}

pub fn write_feature_volume(path: &Path, volume: &FeatureVolume) -> Result<(), IoError> {
    write_file(path, encode_volume(volume.side(), volume.channels(), volume.values()))
}

pub fn read_feature_volume(path: &Path) -> Result<FeatureVolume, IoError> {
    let (side, channels, values) = decode_volume(path, &read_bytes(path)?)?;
    FeatureVolume::from_values(channels, side, values).map_err(|e| IoError::format(path, e.to_string()))
}

pub fn encode_f32img(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(IMAGE_HEADER + image.data().len() * 4);
    for v in [image.height() as u32, image.width() as u32, 3u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in image.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32img(path: &Path, bytes: &[u8]) -> Result<Image, IoError> {
    if bytes.len() < IMAGE_HEADER {
        return Err(IoError::format(path, "truncated f32img header"));
    }
    let (h, w, c) = (u32_at(bytes, 0) as usize, u32_at(bytes, 4) as usize, u32_at(bytes, 8) as usize);
    if c != 3 {
        return Err(IoError::format(path, format!("expected 3 channels, found {c}")));
    }
    if h * w * c * 4 != bytes.len() - IMAGE_HEADER {
        return Err(IoError::format(path, format!("payload does not match {h}x{w}x{c}")));
    }
    Ok(Image::new(ImageSize::new(h, w), f32_values(&bytes[IMAGE_HEADER..])).expect("payload length checked above"))
}

pub fn write_f32img(path: &Path, image: &Image) -> Result<(), IoError> {
    write_file(path, encode_f32img(image))
}

pub fn read_f32img(path: &Path) -> Result<Image, IoError> {
    decode_f32img(path, &read_bytes(path)?)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, image: &Image) -> Result<(), IoError> {
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, image.data().iter().map(|&v| to_u8(v)).collect())
        .expect("buffer sized from image");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| IoError::format(path, e.to_string()))
}

pub fn write_png_rgba(path: &Path, image: &RgbaImage) -> Result<(), IoError> {
    let rgb = image.rgb.data();
    let mut data = Vec::with_capacity(image.alpha.len() * 4);
    for (px, a) in rgb.chunks_exact(3).zip(&image.alpha) {
        data.extend(px.iter().map(|&v| to_u8(v)));
        data.push(to_u8(*a));
    }
    let buf = image::RgbaImage::from_raw(image.rgb.width() as u32, image.rgb.height() as u32, data).expect("buffer sized from image");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| IoError::format(path, e.to_string()))
}

/// Reads the RGB and alpha planes of an 8-bit PNG.
pub fn read_png_rgba(path: &Path) -> Result<RgbaImage, IoError> {
    let img = image::open(path).map_err(|e| IoError::format(path, e.to_string()))?.to_rgba8();
    let size = ImageSize::new(img.height() as usize, img.width() as usize);
    let mut rgb = Vec::with_capacity(size.pixels() * 3);
    let mut alpha = Vec::with_capacity(size.pixels());
    for px in img.pixels() {
        rgb.extend(px.0[..3].iter().map(|&v| v as f64 / 255.0));
        alpha.push(px.0[3] as f64 / 255.0);
    }
    Ok(RgbaImage { rgb: Image::new(size, rgb).expect("8-bit values are in range"), alpha })
}

pub fn format_history(history: &[FitRecord]) -> String {
    let mut out = String::from("# iter loss psnr_train psnr_unseen\n");
    for r in history {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub const TRAIN_VIEW_NAMES: [&str; 3] = ["train_0", "train_1", "train_2"];
pub const VAL_VIEW_NAME: &str = "val";
pub const CAMERAS_FILE: &str = "cameras.jsonl";
pub const METADATA_FILE: &str = "metadata.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetadata {
    pub view: String,
    pub split: String,
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetadata {
    pub seed: u64,
    pub index: u64,
    pub image_size: [usize; 2],
    pub articulation: Articulation,
    pub skin: Skin,
    pub background: [u8; 3],
    pub views: Vec<ViewMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub count: u64,
    pub image_size: [usize; 2],
    pub train_views_per_example: usize,
    pub val_views_per_example: usize,
    pub examples: Vec<String>,
}

pub fn example_dir_name(index: u64) -> String {
    format!("example_{index:05}")
}

/// Writes one example into `dir`: RGBA PNGs, `.f32img` images, the camera
/// manifest and the metadata record.
pub fn write_example(dir: &Path, example: &MinensExample) -> Result<(), IoError> {
    create_dir(dir)?;
    let named: Vec<(&str, &str, &View)> = TRAIN_VIEW_NAMES
        .iter()
        .zip(&example.train_views)
        .map(|(n, v)| (*n, "train", v))
        .chain(std::iter::once((VAL_VIEW_NAME, "val", &example.val_view)))
        .collect();
    let mut cameras = Vec::with_capacity(named.len());
    let mut views = Vec::with_capacity(named.len());
    for (name, split, view) in &named {
        write_png_rgba(&dir.join(format!("{name}.png")), &view.image)?;
        write_f32img(&dir.join(format!("{name}.f32img")), &view.image.rgb)?;
        cameras.push(CameraRecord::from_pose(*name, &view.pose));
        views.push(ViewMetadata { view: name.to_string(), split: split.to_string(), azimuth: view.angles.azimuth, elevation: view.angles.elevation });
    }
    write_camera_manifest(&dir.join(CAMERAS_FILE), &cameras)?;
    let size = example.val_view.image.rgb.size();
    let meta = ExampleMetadata {
        seed: example.seed,
        index: example.index,
        image_size: [size.height, size.width],
        articulation: example.articulation,
        skin: example.skin,
        background: example.background,
        views,
    };
    write_json(&dir.join(METADATA_FILE), &meta)
}

/// An example read back from disk, with exact float images.
#[derive(Debug, Clone)]
pub struct StoredExample {
    pub metadata: ExampleMetadata,
    pub train: Vec<(Image, CameraPose)>,
    pub val: (Image, CameraPose),
}

impl StoredExample {
    pub fn background_rgb(&self) -> [f64; 3] {
        self.metadata.background.map(|c| c as f64 / 255.0)
    }
}

pub fn read_example(dir: &Path) -> Result<StoredExample, IoError> {
    let metadata: ExampleMetadata = read_json(&dir.join(METADATA_FILE))?;
    let cam_path = dir.join(CAMERAS_FILE);
    let cameras = read_camera_manifest(&cam_path)?;
    let load = |name: &str| -> Result<(Image, CameraPose), IoError> {
        let record = cameras.iter().find(|r| r.view == name).ok_or_else(|| IoError::format(&cam_path, format!("no camera for view {name}")))?;
        let pose = record.to_pose().map_err(|e| IoError::format(&cam_path, e.to_string()))?;
        Ok((read_f32img(&dir.join(format!("{name}.f32img")))?, pose))
    };
    let train = TRAIN_VIEW_NAMES.iter().map(|n| load(n)).collect::<Result<Vec<_>, _>>()?;
    let val = load(VAL_VIEW_NAME)?;
    Ok(StoredExample { metadata, train, val })
}
