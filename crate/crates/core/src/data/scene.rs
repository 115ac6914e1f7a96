//! Voxelized box-room scenes with an exact label oracle.
//!
//! The room is an axis-aligned box in world coordinates (y up). Its outermost
//! voxel shell carries the floor, ceiling and four wall classes, so every ray
//! cast from inside the room terminates on a labelled voxel.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{SemanticImage, VOID};
use super::manifest::{write_dataset, DatasetManifest, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::render::{generate_ray, CameraIntrinsics, Pose, Ray};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Voxel count along x, y, z.
    pub resolution: [usize; 3],
}

/// Class of each room surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Background {
    pub floor: u8,
    pub ceiling: u8,
    pub wall_x_min: u8,
    pub wall_x_max: u8,
    pub wall_z_min: u8,
    pub wall_z_max: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Primitive {
    Box { min: [f64; 3], max: [f64; 3], class: u8 },
    Sphere { center: [f64; 3], radius: f64, class: u8 },
}

impl Primitive {
    pub fn class(&self) -> u8 {
        match self {
            Primitive::Box { class, .. } | Primitive::Sphere { class, .. } => *class,
        }
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Primitive::Box { min, max, .. } => (0..3).all(|i| min[i] <= p[i] && p[i] <= max[i]),
            Primitive::Sphere { center, radius, .. } => {
                (0..3).map(|i| (p[i] - center[i]).powi(2)).sum::<f64>() <= radius * radius
            }
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Primitive::Box { min, max, .. } => (*min, *max),
            Primitive::Sphere { center, radius, .. } => (
                center.map(|c| c - radius),
                center.map(|c| c + radius),
            ),
        }
    }
}

/// Cameras on a horizontal circle around `center`, all aimed at `look_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub count: usize,
    pub radius: f64,
    /// Circle center; cameras sit at its height.
    pub center: [f64; 3],
    pub look_at: [f64; 3],
    pub arc_start_deg: f64,
    /// Exclusive end when the arc spans a full turn.
    pub arc_end_deg: f64,
    /// Seeded uniform perturbation (meters) of camera height and aim point.
    #[serde(default)]
    pub jitter: f64,
    /// Aim points orbit `look_at` on a circle of this radius (0 = fixed aim).
    #[serde(default)]
    pub aim_radius: f64,
    /// Angular lead of the aim point over the camera.
    #[serde(default)]
    pub aim_phase_deg: f64,
    /// Peak vertical excursion of the cameras, `waves` cycles per turn.
    #[serde(default)]
    pub height_amplitude: f64,
    #[serde(default)]
    pub waves: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub num_classes: usize,
    pub room: Room,
    pub background: Background,
    pub primitives: Vec<Primitive>,
    pub cameras: Trajectory,
    pub image: ImageSpec,
    pub near: f64,
    pub far: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette: Option<Vec<[u8; 3]>>,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec =
            serde_json::from_str(text).map_err(|e| Error::Spec(format!("malformed scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The scene shipped with the crate: a 6 m × 3 m × 6 m room, six surface
    /// classes and ten interior objects, 100 inward-looking cameras at 80×60.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../../assets/room.json")).expect("bundled scene is valid")
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            width: self.image.width,
            height: self.image.height,
            fx: self.image.fx,
            fy: self.image.fy,
            cx: self.image.width as f64 / 2.0,
            cy: self.image.height as f64 / 2.0,
        }
    }

    /// Every class index used by the room surfaces and primitives.
    pub fn declared_classes(&self) -> std::collections::BTreeSet<u8> {
        let b = &self.background;
        [b.floor, b.ceiling, b.wall_x_min, b.wall_x_max, b.wall_z_min, b.wall_z_max]
            .into_iter()
            .chain(self.primitives.iter().map(Primitive::class))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Spec(m));
        if self.num_classes < 2 || self.num_classes > 255 {
            return err(format!("num_classes {} outside 2..=255", self.num_classes));
        }
        if let Some(c) = self
            .declared_classes()
            .into_iter()
            .find(|&c| c as usize >= self.num_classes)
        {
            return err(format!("class {c} >= num_classes {}", self.num_classes));
        }
        let r = &self.room;
        if (0..3).any(|i| !(r.min[i] < r.max[i]) || r.resolution[i] < 3) {
            return err("room needs min < max and at least 3 voxels per axis".into());
        }
        for (i, p) in self.primitives.iter().enumerate() {
            let (lo, hi) = p.bounds();
            if (0..3).any(|k| lo[k] < r.min[k] || hi[k] > r.max[k] || lo[k] > hi[k]) {
                return err(format!("primitive {i} extends outside the room"));
            }
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return err("need 0 < near < far".into());
        }
        let diagonal = (0..3).map(|i| (r.max[i] - r.min[i]).powi(2)).sum::<f64>().sqrt();
        if diagonal > self.far {
            return err(format!("room diagonal {diagonal:.2} m exceeds far bound {}", self.far));
        }
        if self.cameras.count == 0 {
            return err("trajectory needs at least one camera".into());
        }
        if self.image.width == 0 || self.image.height == 0 || !(self.image.fx > 0.0 && self.image.fy > 0.0) {
            return err("invalid image spec".into());
        }
        if let Some(p) = &self.palette {
            if p.len() < self.num_classes {
                return err("palette shorter than class count".into());
            }
        }
        Ok(())
    }

    /// Camera poses along the trajectory; `seed` drives the jitter.
    pub fn camera_poses(&self, seed: u64) -> Result<Vec<Pose>> {
        let t = &self.cameras;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = t.arc_end_deg - t.arc_start_deg;
        let full_turn = (span.abs() - 360.0).abs() < 1e-9;
        let steps = if full_turn || t.count == 1 { t.count } else { t.count - 1 };
        let mut jitter = |scale: f64| {
            if scale > 0.0 {
                rng.random_range(-scale..=scale)
            } else {
                0.0
            }
        };
        (0..t.count)
            .map(|i| {
                let angle = (t.arc_start_deg + span * i as f64 / steps.max(1) as f64).to_radians();
                let wave = t.height_amplitude * (t.waves as f64 * angle).sin();
                let eye = Vector3::new(
                    t.center[0] + t.radius * angle.cos(),
                    t.center[1] + wave + jitter(t.jitter),
                    t.center[2] + t.radius * angle.sin(),
                );
                let aim = angle + t.aim_phase_deg.to_radians();
                let target = Vector3::new(
                    t.look_at[0] + t.aim_radius * aim.cos() + jitter(t.jitter),
                    t.look_at[1] + jitter(t.jitter),
                    t.look_at[2] + t.aim_radius * aim.sin() + jitter(t.jitter),
                );
                Pose::look_at(eye, target, Vector3::y()).map_err(|e| Error::Spec(e.to_string()))
            })
            .collect()
    }
}

/// Dense class grid; [`VOID`] marks empty space.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub min: [f64; 3],
    pub voxel: [f64; 3],
    pub dims: [usize; 3],
    cells: Vec<u8>,
}

impl VoxelGrid {
    pub fn from_spec(spec: &SceneSpec) -> Self {
        let r = &spec.room;
        let dims = r.resolution;
        let voxel = [0, 1, 2].map(|i| (r.max[i] - r.min[i]) / dims[i] as f64);
        let b = &spec.background;
        let mut cells = vec![VOID; dims[0] * dims[1] * dims[2]];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let label = if y == 0 {
                        b.floor
                    } else if y == dims[1] - 1 {
                        b.ceiling
                    } else if x == 0 {
                        b.wall_x_min
                    } else if x == dims[0] - 1 {
                        b.wall_x_max
                    } else if z == 0 {
                        b.wall_z_min
                    } else if z == dims[2] - 1 {
                        b.wall_z_max
                    } else {
                        let c = [x, y, z].map(|i| i as f64 + 0.5);
                        let p = [0, 1, 2].map(|k| r.min[k] + c[k] * voxel[k]);
                        spec.primitives
                            .iter()
                            .rev()
                            .find(|prim| prim.contains(p))
                            .map_or(VOID, Primitive::class)
                    };
                    cells[(z * dims[1] + y) * dims[0] + x] = label;
                }
            }
        }
        Self {
            min: r.min,
            voxel,
            dims,
            cells,
        }
    }

    pub fn get(&self, idx: [usize; 3]) -> u8 {
        self.cells[(idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0]]
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn locate(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let f = ((p[k] - self.min[k]) / self.voxel[k]).floor();
            if f < 0.0 || f >= self.dims[k] as f64 {
                return None;
            }
            idx[k] = f as usize;
        }
        Some(idx)
    }

    /// Label of the first occupied voxel along `ray` by integer grid
    /// traversal (Amanatides–Woo), starting at the ray origin.
    pub fn first_hit(&self, ray: &Ray) -> Option<u8> {
        let o = [ray.origin.x, ray.origin.y, ray.origin.z];
        let d = [ray.direction.x, ray.direction.y, ray.direction.z];
        let mut idx = self.locate(o)?.map(|i| i as i64);
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for k in 0..3 {
            if d[k] > 0.0 {
                step[k] = 1;
                let boundary = self.min[k] + (idx[k] + 1) as f64 * self.voxel[k];
                t_max[k] = (boundary - o[k]) / d[k];
                t_delta[k] = self.voxel[k] / d[k];
            } else if d[k] < 0.0 {
                step[k] = -1;
                let boundary = self.min[k] + idx[k] as f64 * self.voxel[k];
                t_max[k] = (boundary - o[k]) / d[k];
                t_delta[k] = -self.voxel[k] / d[k];
            }
        }
        loop {
            let label = self.get(idx.map(|i| i as usize));
            if label != VOID {
                return Some(label);
            }
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            idx[axis] += step[axis];
            if idx[axis] < 0 || idx[axis] >= self.dims[axis] as i64 {
                return None;
            }
            t_max[axis] += t_delta[axis];
        }
    }
}

/// Ground-truth label map for one camera.
pub fn oracle_render(grid: &VoxelGrid, intr: &CameraIntrinsics, pose: &Pose, bounds: (f64, f64)) -> Result<SemanticImage> {
    let origin = [pose.translation.x, pose.translation.y, pose.translation.z];
    if grid.locate(origin).is_none_or(|v| grid.get(v) != VOID) {
        return Err(Error::Spec(format!(
            "camera at {origin:?} is outside the room's free space"
        )));
    }
    let mut labels = Vec::with_capacity(intr.pixel_count());
    for py in 0..intr.height {
        for px in 0..intr.width {
            let ray = generate_ray(intr, pose, px, py, bounds)?;
            labels.push(grid.first_hit(&ray).unwrap_or(VOID));
        }
    }
    SemanticImage::new(intr.width, intr.height, labels)
}

/// Renders every trajectory view and writes PNGs plus `manifest.json` to `out`.
pub fn generate_synthetic(spec: &SceneSpec, seed: u64, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let grid = VoxelGrid::from_spec(spec);
    let intr = spec.intrinsics();
    let poses = spec.camera_poses(seed)?;
    let images = poses
        .iter()
        .map(|pose| oracle_render(&grid, &intr, pose, (spec.near, spec.far)))
        .collect::<Result<Vec<_>>>()?;
    let template = DatasetManifest {
        version: MANIFEST_VERSION,
        width: intr.width,
        height: intr.height,
        fx: intr.fx,
        fy: intr.fy,
        cx: intr.cx,
        cy: intr.cy,
        near: spec.near,
        far: spec.far,
        num_classes: spec.num_classes,
        palette: spec.palette.clone(),
        label_remap: None,
        scene_bounds: Some([spec.room.min, spec.room.max]),
        frames: Vec::new(),
    };
    write_dataset(out, &template, &poses, &images)
}
