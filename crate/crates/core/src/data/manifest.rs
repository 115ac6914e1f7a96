use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::SemanticImage;
use crate::error::{Error, Result};
use crate::render::{CameraIntrinsics, Pose};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CAMERA_CONVENTION: &str = "x-right y-down z-forward";

/// One labelled view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    /// Label PNG, relative to the manifest directory.
    pub file: String,
    /// Row-major 4×4 camera-to-world matrix.
    pub c2w: Vec<f64>,
    #[serde(default = "default_convention")]
    pub convention: String,
}

fn default_convention() -> String {
    CAMERA_CONVENTION.to_string()
}

/// On-disk dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<Vec<[u8; 3]>>,
    /// Raw PNG value → class index (or 255 for void), applied before validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_remap: Option<BTreeMap<u8, u8>>,
    /// Axis-aligned `[min, max]` box enclosing the scene, in world units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_bounds: Option<[[f64; 3]; 2]>,
    pub frames: Vec<FrameEntry>,
}

impl DatasetManifest {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Decoded dataset: manifest plus one label map and pose per frame.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<Pose>,
    pub images: Vec<SemanticImage>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.manifest.near, self.manifest.far)
    }

    /// Scene box from the manifest, else the camera centres' box grown by
    /// `far` on every side, which contains every sample point.
    pub fn scene_box(&self) -> [[f64; 3]; 2] {
        if let Some(b) = self.manifest.scene_bounds {
            return b;
        }
        let far = self.manifest.far;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for pose in &self.poses {
            for i in 0..3 {
                lo[i] = lo[i].min(pose.translation[i] - far);
                hi[i] = hi[i].max(pose.translation[i] + far);
            }
        }
        [lo, hi]
    }

    pub fn palette(&self) -> Vec<[u8; 3]> {
        self.manifest
            .palette
            .clone()
            .unwrap_or_else(|| super::image::default_palette(self.num_classes()))
    }
}

/// Resolves a dataset argument that names either the manifest file or its directory.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads a manifest and decodes every frame. With `resize`, label maps are
/// nearest-neighbour resampled and the intrinsics rescaled to match.
pub fn load_dataset(path: &Path, resize: Option<(usize, usize)>) -> Result<Dataset> {
    let manifest_file = manifest_path(path);
    let fail = |p: &Path, detail: String| Error::Load {
        path: p.to_path_buf(),
        detail,
    };
    let text = fs::read_to_string(&manifest_file).map_err(|e| fail(&manifest_file, e.to_string()))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| fail(&manifest_file, format!("malformed manifest: {e}")))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(fail(
            &manifest_file,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    if manifest.frames.is_empty() {
        return Err(fail(&manifest_file, "manifest lists no frames".into()));
    }
    if manifest.num_classes < 2 || manifest.num_classes > 255 {
        return Err(fail(
            &manifest_file,
            format!("num_classes {} outside 2..=255", manifest.num_classes),
        ));
    }
    if !(manifest.near > 0.0 && manifest.near < manifest.far) {
        return Err(fail(&manifest_file, "need 0 < near < far".into()));
    }
    if let Some([lo, hi]) = manifest.scene_bounds {
        if (0..3).any(|i| !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i])) {
            return Err(fail(&manifest_file, "scene_bounds must satisfy min < max".into()));
        }
    }
    let intrinsics = manifest.intrinsics();
    intrinsics
        .validate()
        .map_err(|e| fail(&manifest_file, e.to_string()))?;

    let root = manifest_file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut poses = Vec::with_capacity(manifest.frames.len());
    let mut images = Vec::with_capacity(manifest.frames.len());
    for (i, frame) in manifest.frames.iter().enumerate() {
        let file = root.join(&frame.file);
        if frame.convention != CAMERA_CONVENTION {
            return Err(fail(
                &file,
                format!("frame {i}: unsupported camera convention {:?}", frame.convention),
            ));
        }
        let pose = Pose::from_row_major(&frame.c2w).map_err(|e| fail(&file, format!("frame {i}: {e}")))?;
        let mut img = SemanticImage::load_png(&file)?;
        if (img.width(), img.height()) != (manifest.width, manifest.height) {
            return Err(fail(
                &file,
                format!(
                    "image is {}×{}, manifest says {}×{}",
                    img.width(),
                    img.height(),
                    manifest.width,
                    manifest.height
                ),
            ));
        }
        if let Some(remap) = &manifest.label_remap {
            for l in img.labels_mut() {
                if let Some(&to) = remap.get(l) {
                    *l = to;
                }
            }
        }
        img.check_alphabet(manifest.num_classes)
            .map_err(|e| fail(&file, e.to_string()))?;
        if let Some((w, h)) = resize {
            if (w, h) != (img.width(), img.height()) {
                img = img.resize_nearest(w, h);
            }
        }
        poses.push(pose);
        images.push(img);
    }
    let intrinsics = match resize {
        Some((w, h)) => intrinsics.resized(w, h),
        None => intrinsics,
    };
    Ok(Dataset {
        root,
        manifest,
        intrinsics,
        poses,
        images,
    })
}

/// Writes label maps and a manifest for them into `dir`.
pub fn write_dataset(
    dir: &Path,
    template: &DatasetManifest,
    poses: &[Pose],
    images: &[SemanticImage],
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut manifest = template.clone();
    manifest.frames = poses
        .iter()
        .zip(images)
        .enumerate()
        .map(|(i, (pose, img))| -> Result<FrameEntry> {
            let file = format!("frame_{i:04}.png");
            img.save_png(&dir.join(&file))?;
            Ok(FrameEntry {
                file,
                c2w: pose.to_row_major().to_vec(),
                convention: CAMERA_CONVENTION.to_string(),
            })
        })
        .collect::<Result<_>>()?;
    manifest.write(dir)?;
    Ok(manifest)
}

