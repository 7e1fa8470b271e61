//! Procedural articulated block characters and their posed renders.
//!
//! A character is six oriented cuboids in blocky 8:12:4 proportions:
//! head, torso, two arms and two legs. The torso sits at the origin facing
//! `+z`; the character's left is `+x`. Limbs hang from shoulder and hip
//! joints, the head from the neck. Pitch turns about the body's `x` axis
//! (positive swings a limb forward), roll about the forward `z` axis
//! (positive moves the left side outward) and yaw about `y`.
//!
//! Every random quantity of an example comes from its own named stream,
//! so example `i` of a seed can be regenerated on its own.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::field::{logit, softplus_inv, VoxelGrid, CHANNELS, DEFAULT_DENSITY_BIAS, PADDING_RAW};
use crate::geometry::{axis_angle, CameraPose, ImageSize, Intrinsics, Mat3, Ray, Vec3};
use crate::imaging::Image;
use crate::rng::stream;

pub const TRAIN_VIEWS: usize = 3;
pub const DEFAULT_IMAGE_SIDE: usize = 48;
pub const CAMERA_RADIUS: f64 = 2.0;
/// NDC focal length; the extended character spans about 70% of the frame.
pub const CAMERA_FOCAL: f64 = 2.8;
/// World size of one skin pixel; the character is 32 of them tall.
pub const BLOCK: f64 = 0.03;

const ELEVATION_LIMIT: f64 = std::f64::consts::PI / 8.0;

/// Angle distributions, in degrees.
pub mod ranges {
    pub const ARM_PITCH: (f64, f64) = (-20.0, 45.0);
    pub const LEFT_ARM_ROLL: (f64, f64) = (0.0, 10.0);
    pub const RIGHT_ARM_ROLL: (f64, f64) = (-10.0, 0.0);
    pub const LEG_PITCH: (f64, f64) = (-30.0, 30.0);
    pub const LEFT_LEG_ROLL: (f64, f64) = (0.0, 10.0);
    pub const RIGHT_LEG_ROLL: (f64, f64) = (-10.0, 0.0);
    pub const HEAD_PITCH: (f64, f64) = (-10.0, 10.0);
    pub const HEAD_ROLL: (f64, f64) = (-5.0, 5.0);
    /// Mean and standard deviation of the normal head yaw.
    pub const HEAD_YAW: (f64, f64) = (10.0, 10.0);
}

/// Source of the random angles, so tests can inject fixed draws.
pub trait AngleSource {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64;
    fn normal(&mut self, mean: f64, std: f64) -> f64;
}

impl<R: Rng> AngleSource for R {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.random::<f64>()
    }

    fn normal(&mut self, mean: f64, std: f64) -> f64 {
        Normal::new(mean, std).expect("positive std").sample(self)
    }
}

/// Joint angles in degrees; index 0 is the left limb, 1 the right.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Articulation {
    pub arm_pitch: [f64; 2],
    pub arm_roll: [f64; 2],
    pub leg_pitch: [f64; 2],
    pub leg_roll: [f64; 2],
    pub head_pitch: f64,
    pub head_roll: f64,
    pub head_yaw: f64,
}

pub fn sample_articulation<S: AngleSource + ?Sized>(src: &mut S) -> Articulation {
    use ranges::*;
    let mut u = |r: (f64, f64)| src.uniform(r.0, r.1);
    let arm_pitch = [u(ARM_PITCH), u(ARM_PITCH)];
    let arm_roll = [u(LEFT_ARM_ROLL), u(RIGHT_ARM_ROLL)];
    let leg_pitch = [u(LEG_PITCH), u(LEG_PITCH)];
    let leg_roll = [u(LEFT_LEG_ROLL), u(RIGHT_LEG_ROLL)];
    let head_pitch = u(HEAD_PITCH);
    let head_roll = u(HEAD_ROLL);
    let head_yaw = src.normal(HEAD_YAW.0, HEAD_YAW.1);
    Articulation { arm_pitch, arm_roll, leg_pitch, leg_roll, head_pitch, head_roll, head_yaw }
}

/// Azimuth and elevation of a camera, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraAngles {
    pub azimuth: f64,
    pub elevation: f64,
}

impl CameraAngles {
    pub fn sample<S: AngleSource + ?Sized>(src: &mut S) -> Self {
        let azimuth = src.uniform(0.0, std::f64::consts::TAU);
        let elevation = src.uniform(-ELEVATION_LIMIT, ELEVATION_LIMIT);
        Self { azimuth, elevation }
    }

    /// Camera at `radius` on the sphere, looking at the origin with `+y` up.
    /// Azimuth 0 and elevation 0 put it on the `+x` axis.
    pub fn pose(&self, radius: f64, focal: f64) -> CameraPose {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        let eye = Vec3::new(radius * ce * ca, radius * se, radius * ce * sa);
        CameraPose::look_at(eye, Vec3::zeros(), Vec3::y(), Intrinsics::symmetric(focal)).expect("elevation stays below the pole")
    }
}

pub fn sample_camera<S: AngleSource + ?Sized>(src: &mut S) -> CameraPose {
    CameraAngles::sample(src).pose(CAMERA_RADIUS, CAMERA_FOCAL)
}

/// Per-part base colors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skin {
    pub head: [f64; 3],
    pub torso: [f64; 3],
    pub arms: [[f64; 3]; 2],
    pub legs: [[f64; 3]; 2],
}

const PALETTE: [[f64; 3]; 12] = [
    [0.85, 0.65, 0.50],
    [0.55, 0.38, 0.26],
    [0.20, 0.45, 0.75],
    [0.15, 0.60, 0.30],
    [0.80, 0.20, 0.20],
    [0.90, 0.80, 0.25],
    [0.45, 0.25, 0.60],
    [0.30, 0.30, 0.35],
    [0.95, 0.95, 0.92],
    [0.10, 0.70, 0.70],
    [0.95, 0.50, 0.15],
    [0.40, 0.55, 0.20],
];

impl Skin {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut pick = || {
            let base = PALETTE[rng.random_range(0..PALETTE.len())];
            base.map(|c| (c + rng.random_range(-0.08..0.08)).clamp(0.02, 0.98))
        };
        let head = pick();
        let torso = pick();
        let arm = pick();
        let leg = pick();
        Self { head, torso, arms: [arm, arm], legs: [leg, leg] }
    }

    pub fn uniform(rgb: [f64; 3]) -> Self {
        Self { head: rgb, torso: rgb, arms: [rgb; 2], legs: [rgb; 2] }
    }
}

/// Face order for per-face data: +x, -x, +y, -y, +z, -z.
const FACE_SHADE: [f64; 6] = [0.9, 0.9, 1.0, 0.8, 0.95, 0.85];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    pub center: Vec3,
    pub half_extents: Vec3,
    /// Local-to-world rotation.
    pub rotation: Mat3,
    pub face_colors: [[f64; 3]; 6],
}

impl Cuboid {
    pub fn local_to_world(&self, p: &Vec3) -> Vec3 {
        self.center + self.rotation * p
    }

    pub fn world_to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.center)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.world_to_local(p);
        (0..3).all(|i| l[i].abs() <= self.half_extents[i])
    }

    /// Entry distance and face index of a ray hit.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, usize)> {
        let o = self.world_to_local(&ray.origin);
        let d = self.rotation.transpose() * ray.direction;
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut face = 0;
        for axis in 0..3 {
            let h = self.half_extents[axis];
            if d[axis].abs() < 1e-15 {
                if o[axis].abs() > h {
                    return None;
                }
                continue;
            }
            let a = (-h - o[axis]) / d[axis];
            let b = (h - o[axis]) / d[axis];
            let (near, far, near_face) = if a < b { (a, b, 2 * axis + 1) } else { (b, a, 2 * axis) };
            if near > t_enter {
                t_enter = near;
                face = near_face;
            }
            t_exit = t_exit.min(far);
        }
        (t_enter <= t_exit && t_enter > 0.0).then_some((t_enter, face))
    }

    /// Face whose plane is nearest to a local point inside the box.
    fn nearest_face(&self, local: &Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for axis in 0..3 {
            let gap = self.half_extents[axis] - local[axis].abs();
            if gap < best.0 {
                best = (gap, 2 * axis + usize::from(local[axis] < 0.0));
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    Head,
    Torso,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Part {
    pub kind: PartKind,
    pub cuboid: Cuboid,
    /// Joint position in world space and in the part's local frame; the torso has none.
    pub joint: Option<(Vec3, Vec3)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Character {
    pub parts: Vec<Part>,
}

fn shaded(base: [f64; 3]) -> [[f64; 3]; 6] {
    FACE_SHADE.map(|s| base.map(|c| c * s))
}

fn rot_x(deg: f64) -> Mat3 {
    axis_angle(&Vec3::x(), deg.to_radians())
}

fn rot_y(deg: f64) -> Mat3 {
    axis_angle(&Vec3::y(), deg.to_radians())
}

fn rot_z(deg: f64) -> Mat3 {
    axis_angle(&Vec3::z(), deg.to_radians())
}

/// Lays out the character's cuboids for the given pose and skin.
pub fn build_character(art: &Articulation, skin: &Skin) -> Character {
    let b = BLOCK;
    let mut parts = Vec::with_capacity(6);
    parts.push(Part {
        kind: PartKind::Torso,
        cuboid: Cuboid { center: Vec3::zeros(), half_extents: Vec3::new(4.0 * b, 6.0 * b, 2.0 * b), rotation: Mat3::identity(), face_colors: shaded(skin.torso) },
        joint: None,
    });

    // a part hanging from (or sitting on) a joint: `offset` is the part
    // center relative to the joint in the part's own frame
    let mut attach = |kind, joint: Vec3, rotation: Mat3, half: Vec3, offset: Vec3, color| {
        let center = joint + rotation * offset;
        parts.push(Part {
            kind,
            cuboid: Cuboid { center, half_extents: half, rotation, face_colors: shaded(color) },
            joint: Some((joint, -offset)),
        });
    };

    let head_rot = rot_y(art.head_yaw) * rot_x(-art.head_pitch) * rot_z(art.head_roll);
    attach(PartKind::Head, Vec3::new(0.0, 6.0 * b, 0.0), head_rot, Vec3::new(4.0 * b, 4.0 * b, 4.0 * b), Vec3::new(0.0, 4.0 * b, 0.0), skin.head);

    let limb_half = Vec3::new(2.0 * b, 6.0 * b, 2.0 * b);
    let hang = Vec3::new(0.0, -6.0 * b, 0.0);
    // pitch about -x so that positive pitch moves the hanging end towards +z
    for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
        let rot = rot_z(art.arm_roll[side]) * rot_x(-art.arm_pitch[side]);
        let kind = if side == 0 { PartKind::LeftArm } else { PartKind::RightArm };
        attach(kind, Vec3::new(sign * 6.0 * b, 6.0 * b, 0.0), rot, limb_half, hang, skin.arms[side]);
    }
    for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
        let rot = rot_z(art.leg_roll[side]) * rot_x(-art.leg_pitch[side]);
        let kind = if side == 0 { PartKind::LeftLeg } else { PartKind::RightLeg };
        attach(kind, Vec3::new(sign * 2.0 * b, -6.0 * b, 0.0), rot, limb_half, hang, skin.legs[side]);
    }
    Character { parts }
}

/// Color and hit flag of a ray against the character.
pub fn trace(character: &Character, ray: &Ray) -> Option<[f64; 3]> {
    let mut best: Option<(f64, [f64; 3])> = None;
    for p in &character.parts {
        if let Some((t, face)) = p.cuboid.intersect(ray) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, p.cuboid.face_colors[face]));
            }
        }
    }
    best.map(|(_, c)| c)
}

/// RGB image composited over a background, plus a binary alpha mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbaImage {
    pub rgb: Image,
    pub alpha: Vec<f64>,
}

pub fn render_character(character: &Character, pose: &CameraPose, size: ImageSize, background: [f64; 3]) -> RgbaImage {
    let mut rgb = Image::filled(size, background);
    let mut alpha = vec![0.0; size.pixels()];
    for row in 0..size.height {
        for col in 0..size.width {
            if let Some(c) = trace(character, &pose.ray_for_pixel(row, col, size)) {
                rgb.set_pixel(row, col, c);
                alpha[row * size.width + col] = 1.0;
            }
        }
    }
    RgbaImage { rgb, alpha }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub image: RgbaImage,
    pub pose: CameraPose,
    pub angles: CameraAngles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinensExample {
    pub seed: u64,
    pub index: u64,
    pub articulation: Articulation,
    pub skin: Skin,
    /// Background color in 8-bit units.
    pub background: [u8; 3],
    pub train_views: Vec<View>,
    pub val_view: View,
}

impl MinensExample {
    pub fn background_rgb(&self) -> [f64; 3] {
        self.background.map(|c| c as f64 / 255.0)
    }

    pub fn character(&self) -> Character {
        build_character(&self.articulation, &self.skin)
    }

    /// Training views followed by the validation view.
    pub fn views(&self) -> impl Iterator<Item = &View> {
        self.train_views.iter().chain(std::iter::once(&self.val_view))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinensConfig {
    pub image_size: ImageSize,
    pub radius: f64,
    pub focal: f64,
}

impl Default for MinensConfig {
    fn default() -> Self {
        Self { image_size: ImageSize::square(DEFAULT_IMAGE_SIDE), radius: CAMERA_RADIUS, focal: CAMERA_FOCAL }
    }
}

/// Example `index` of the dataset generated from `seed`.
pub fn render_example(seed: u64, index: u64, cfg: &MinensConfig) -> MinensExample {
    let articulation = sample_articulation(&mut stream(seed, "minens/articulation", index));
    let skin = Skin::sample(&mut stream(seed, "minens/skin", index));
    let mut bg_rng = stream(seed, "minens/background", index);
    let background = [bg_rng.random::<u8>(), bg_rng.random::<u8>(), bg_rng.random::<u8>()];
    let character = build_character(&articulation, &skin);
    let bg = background.map(|c| c as f64 / 255.0);
    let mut cam_rng = stream(seed, "minens/camera", index);
    let mut views: Vec<View> = (0..=TRAIN_VIEWS)
        .map(|_| {
            let angles = CameraAngles::sample(&mut cam_rng);
            let pose = angles.pose(cfg.radius, cfg.focal);
            View { image: render_character(&character, &pose, cfg.image_size, bg), pose, angles }
        })
        .collect();
    let val_view = views.pop().expect("four views");
    MinensExample { seed, index, articulation, skin, background, train_views: views, val_view }
}

/// Rasterizes a character into a radiance grid: per voxel, the fraction of
/// `k^3` sub-samples inside the character sets the density, and the
/// nearest-face colors of the inside samples set the color.
pub fn voxelize(character: &Character, side: usize, world_size: f64, k: usize, max_density: f64) -> VoxelGrid {
    let mut grid = VoxelGrid::filled(side, world_size, PADDING_RAW);
    let vs = grid.voxel_size();
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let c = grid.voxel_center(x, y, z);
                let mut inside = 0usize;
                let mut color = [0.0; 3];
                for i in 0..k {
                    for j in 0..k {
                        for l in 0..k {
                            let off = |n: usize| ((n as f64 + 0.5) / k as f64 - 0.5) * vs;
                            let p = c + Vec3::new(off(i), off(j), off(l));
                            if let Some(part) = character.parts.iter().find(|p2| p2.cuboid.contains(&p)) {
                                let local = part.cuboid.world_to_local(&p);
                                let face = part.cuboid.nearest_face(&local);
                                let fc = part.cuboid.face_colors[face];
                                for ch in 0..3 {
                                    color[ch] += fc[ch];
                                }
                                inside += 1;
                            }
                        }
                    }
                }
                if inside == 0 {
                    continue;
                }
                let frac = inside as f64 / (k * k * k) as f64;
                let mut raw = [0.0; CHANNELS];
                raw[0] = softplus_inv(frac * max_density) - DEFAULT_DENSITY_BIAS;
                for ch in 0..3 {
                    raw[ch + 1] = logit(color[ch] / inside as f64);
                }
                grid.set_raw(x, y, z, raw);
            }
        }
    }
    grid
}
