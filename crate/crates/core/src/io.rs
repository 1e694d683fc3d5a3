//! On-disk formats: JSON dataset manifests, per-plane PNG stacks, and raw
//! little-endian grids with a JSON dims header.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ExtendedColorType, ImageReader};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClassLabel, Dims, ProbabilityField, RasterVolume, SegmentationMap};

pub const FORMAT_VERSION: u32 = 1;

/// Describes a dataset on disk. Relative paths resolve against the
/// directory holding the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub v: u32,
    /// 8-bit grayscale PNG, one per z-plane.
    pub image_planes: Vec<PathBuf>,
    /// Optional 16-bit PNG class-label planes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_planes: Option<Vec<PathBuf>>,
    /// Optional groundtruth segmentation (JSON header of a raw id grid).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<PathBuf>,
    /// Voxel size in nanometres (x, y, z).
    #[serde(default = "default_resolution")]
    pub resolution_nm: [f64; 3],
    #[serde(default)]
    pub anisotropic: bool,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_resolution() -> [f64; 3] {
    [10.0, 10.0, 10.0]
}

impl DatasetManifest {
    pub fn new(image_planes: Vec<PathBuf>) -> Self {
        DatasetManifest {
            v: FORMAT_VERSION,
            image_planes,
            label_planes: None,
            segmentation: None,
            resolution_nm: default_resolution(),
            anisotropic: false,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut manifest: DatasetManifest = read_json(path)?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image_paths(&self) -> Vec<PathBuf> {
        self.image_planes.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn label_paths(&self) -> Option<Vec<PathBuf>> {
        self.label_planes.as_ref().map(|v| v.iter().map(|p| self.resolve(p)).collect())
    }

    pub fn segmentation_path(&self) -> Option<PathBuf> {
        self.segmentation.as_ref().map(|p| self.resolve(p))
    }

    /// Checks that every referenced file exists and that all stacks agree
    /// in dims. Returns the dims.
    pub fn validate(&self) -> Result<Dims> {
        let images = self.image_paths();
        for p in images.iter().chain(self.label_paths().iter().flatten()) {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        let volume = load_volume(self)?;
        let dims = volume.dims();
        if let Some(labels) = self.label_paths() {
            load_label_stack(&labels, dims)?;
        }
        if let Some(seg) = self.segmentation_path() {
            let seg = load_segmentation(&seg)?;
            if seg.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "segmentation dims {:?} vs image dims {:?}",
                    seg.dims(),
                    dims
                )));
            }
        }
        Ok(dims)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: path.to_path_buf(), message: e.to_string() })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Json { path: path.to_path_buf(), message: e.to_string() })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Loads the manifest's image stack as one volume.
pub fn load_volume(manifest: &DatasetManifest) -> Result<RasterVolume> {
    let paths = manifest.image_paths();
    let mut volume = load_plane_stack(&paths)?;
    volume.anisotropic = manifest.anisotropic;
    Ok(volume)
}

/// Loads 8-bit grayscale planes; all planes must share width and height.
pub fn load_plane_stack(paths: &[PathBuf]) -> Result<RasterVolume> {
    if paths.is_empty() {
        return Err(Error::Empty("image plane list".into()));
    }
    let mut voxels = Vec::new();
    let mut plane_dims: Option<(u32, u32)> = None;
    for path in paths {
        let img = match open_image(path)? {
            DynamicImage::ImageLuma8(buf) => buf,
            other => {
                return Err(Error::UnsupportedBitDepth {
                    path: path.clone(),
                    detail: format!("expected 8-bit grayscale, found {:?}", other.color()),
                })
            }
        };
        let wh = img.dimensions();
        match plane_dims {
            None => plane_dims = Some(wh),
            Some(first) if first != wh => {
                return Err(Error::DimensionMismatch(format!(
                    "plane {} is {}x{}, expected {}x{}",
                    path.display(),
                    wh.0,
                    wh.1,
                    first.0,
                    first.1
                )))
            }
            Some(_) => {}
        }
        voxels.extend_from_slice(img.as_raw());
    }
    let (w, h) = plane_dims.expect("non-empty plane list");
    RasterVolume::new(Dims::new(w as usize, h as usize, paths.len())?, voxels)
}

/// Writes one PNG per z-plane as `{prefix}_{z:04}.png` and returns the paths.
pub fn save_volume(volume: &RasterVolume, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = volume.dims();
    (0..d.z)
        .map(|z| {
            let path = dir.join(format!("{prefix}_{z:04}.png"));
            image::save_buffer(&path, volume.plane(z), d.x as u32, d.y as u32, ExtendedColorType::L8)
                .map_err(|e| Error::Image { path: path.clone(), message: e.to_string() })?;
            Ok(path)
        })
        .collect()
}

/// Writes class labels as 16-bit PNG planes.
pub fn save_label_stack(
    labels: &[ClassLabel],
    dims: Dims,
    dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    if labels.len() != dims.len() {
        return Err(Error::DimensionMismatch("label count vs dims".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plane = dims.x * dims.y;
    (0..dims.z)
        .map(|z| {
            let path = dir.join(format!("{prefix}_{z:04}.png"));
            let bytes: Vec<u8> = labels[z * plane..(z + 1) * plane]
                .iter()
                .flat_map(|l| (l.index() as u16).to_ne_bytes())
                .collect();
            image::save_buffer(&path, &bytes, dims.x as u32, dims.y as u32, ExtendedColorType::L16)
                .map_err(|e| Error::Image { path: path.clone(), message: e.to_string() })?;
            Ok(path)
        })
        .collect()
}

pub fn load_label_stack(paths: &[PathBuf], dims: Dims) -> Result<Vec<ClassLabel>> {
    if paths.len() != dims.z {
        return Err(Error::DimensionMismatch(format!(
            "{} label planes for {} image planes",
            paths.len(),
            dims.z
        )));
    }
    let mut labels = Vec::with_capacity(dims.len());
    for path in paths {
        let img = open_image(path)?;
        if (img.width() as usize, img.height() as usize) != (dims.x, dims.y) {
            return Err(Error::DimensionMismatch(format!(
                "label plane {} is {}x{}",
                path.display(),
                img.width(),
                img.height()
            )));
        }
        let values: Vec<u16> = match img {
            DynamicImage::ImageLuma16(buf) => buf.into_raw(),
            DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
            other => {
                return Err(Error::UnsupportedBitDepth {
                    path: path.clone(),
                    detail: format!("expected grayscale labels, found {:?}", other.color()),
                })
            }
        };
        for v in values {
            let label = ClassLabel::from_index(v as usize).ok_or_else(|| {
                Error::InvalidArgument(format!("class label {v} in {}", path.display()))
            })?;
            labels.push(label);
        }
    }
    Ok(labels)
}

/// JSON header describing a raw little-endian grid stored next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGridHeader {
    pub v: u32,
    pub dims: [usize; 3],
    pub dtype: String,
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_count: Option<usize>,
}

fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

/// Writes `seg` as `<stem>.raw` (u32 LE) plus the JSON header at `header`.
pub fn save_segmentation(seg: &SegmentationMap, header: &Path) -> Result<()> {
    let raw = raw_path_for(header);
    let bytes: Vec<u8> = seg.ids().iter().flat_map(|id| id.to_le_bytes()).collect();
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    let d = seg.dims();
    write_json(
        header,
        &RawGridHeader {
            v: FORMAT_VERSION,
            dims: [d.x, d.y, d.z],
            dtype: "u32le".into(),
            data: PathBuf::from(raw.file_name().expect("raw file name")),
            region_count: Some(seg.region_count()),
        },
    )
}

pub fn load_segmentation(header: &Path) -> Result<SegmentationMap> {
    let h: RawGridHeader = read_json(header)?;
    if h.dtype != "u32le" {
        return Err(Error::UnsupportedBitDepth {
            path: header.to_path_buf(),
            detail: format!("segmentation dtype {}", h.dtype),
        });
    }
    let dims = Dims::new(h.dims[0], h.dims[1], h.dims[2])?;
    let raw = header.parent().unwrap_or(Path::new(".")).join(&h.data);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() != dims.len() * 4 {
        return Err(Error::DimensionMismatch(format!(
            "{} bytes in {} for dims {:?}",
            bytes.len(),
            raw.display(),
            dims
        )));
    }
    let ids: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    SegmentationMap::new(dims, ids)
}

/// Raw f32 little-endian matrix with a JSON header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub v: u32,
    pub n: usize,
    pub d: usize,
    pub names: Vec<String>,
    pub dtype: String,
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<[usize; 3]>,
}

pub fn save_matrix_f32(
    header: &Path,
    values: &[f64],
    n: usize,
    names: &[String],
    dims: Option<Dims>,
) -> Result<()> {
    let d = names.len();
    if values.len() != n * d {
        return Err(Error::DimensionMismatch(format!("{} values for {n}x{d}", values.len())));
    }
    let raw = raw_path_for(header);
    let bytes: Vec<u8> = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    write_json(
        header,
        &MatrixHeader {
            v: FORMAT_VERSION,
            n,
            d,
            names: names.to_vec(),
            dtype: "f32le".into(),
            data: PathBuf::from(raw.file_name().expect("raw file name")),
            dims: dims.map(|d| d.as_array()),
        },
    )
}

pub fn load_matrix_f32(header: &Path) -> Result<(MatrixHeader, Vec<f64>)> {
    let h: MatrixHeader = read_json(header)?;
    if h.dtype != "f32le" || h.names.len() != h.d {
        return Err(Error::Json {
            path: header.to_path_buf(),
            message: "expected f32le matrix with one name per column".into(),
        });
    }
    let raw = header.parent().unwrap_or(Path::new(".")).join(&h.data);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() != h.n * h.d * 4 {
        return Err(Error::DimensionMismatch(format!(
            "{} bytes in {} for {}x{}",
            bytes.len(),
            raw.display(),
            h.n,
            h.d
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((h, values))
}

/// Headerless little-endian f64 vector.
pub fn save_f64(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_f64(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::DimensionMismatch(format!("{} is not a whole number of f64 values", path.display())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

/// JSON header of a raw f64 probability field (`k` values per voxel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub v: u32,
    pub dims: [usize; 3],
    pub k: usize,
    pub dtype: String,
    pub data: PathBuf,
}

/// Writes `field` losslessly as `<stem>.raw` (f64 LE) plus the JSON header.
pub fn save_probability_field(field: &ProbabilityField, header: &Path) -> Result<()> {
    let raw = raw_path_for(header);
    save_f64(&raw, field.data())?;
    let d = field.dims();
    write_json(
        header,
        &FieldHeader {
            v: FORMAT_VERSION,
            dims: d.as_array(),
            k: field.k(),
            dtype: "f64le".into(),
            data: PathBuf::from(raw.file_name().expect("raw file name")),
        },
    )
}

pub fn load_probability_field(header: &Path) -> Result<ProbabilityField> {
    let h: FieldHeader = read_json(header)?;
    if h.dtype != "f64le" {
        return Err(Error::UnsupportedBitDepth {
            path: header.to_path_buf(),
            detail: format!("probability dtype {}", h.dtype),
        });
    }
    let dims = Dims::new(h.dims[0], h.dims[1], h.dims[2])?;
    let raw = header.parent().unwrap_or(Path::new(".")).join(&h.data);
    ProbabilityField::new(dims, h.k, load_f64(&raw)?)
}

/// Everything a manifest points at, loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub volume: RasterVolume,
    pub labels: Option<Vec<ClassLabel>>,
    pub segmentation: Option<SegmentationMap>,
}

pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    let volume = load_volume(manifest)?;
    let dims = volume.dims();
    let labels = match manifest.label_paths() {
        Some(paths) => Some(load_label_stack(&paths, dims)?),
        None => None,
    };
    let segmentation = match manifest.segmentation_path() {
        Some(path) => {
            let seg = load_segmentation(&path)?;
            if seg.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "segmentation dims {:?} vs image dims {:?}",
                    seg.dims(),
                    dims
                )));
            }
            Some(seg)
        }
        None => None,
    };
    Ok(Dataset { volume, labels, segmentation })
}

/// Writes a dataset under `dir` (images, optional class labels and
/// groundtruth segmentation) with a `manifest.json` using relative paths.
/// Returns the manifest path.
pub fn save_dataset(
    dir: &Path,
    volume: &RasterVolume,
    labels: Option<&[ClassLabel]>,
    segmentation: Option<&SegmentationMap>,
) -> Result<PathBuf> {
    let relative = |paths: Vec<PathBuf>| -> Vec<PathBuf> {
        paths.into_iter().map(|p| PathBuf::from(p.file_name().expect("plane file name"))).collect()
    };
    let mut manifest = DatasetManifest::new(relative(save_volume(volume, dir, "image")?));
    manifest.anisotropic = volume.anisotropic;
    if let Some(labels) = labels {
        manifest.label_planes = Some(relative(save_label_stack(labels, volume.dims(), dir, "labels")?));
    }
    if let Some(seg) = segmentation {
        save_segmentation(seg, &dir.join("groundtruth.json"))?;
        manifest.segmentation = Some(PathBuf::from("groundtruth.json"));
    }
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
