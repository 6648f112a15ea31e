//! The differentiable pose-aware simulator: a procedurally textured cuboid
//! rendered with a soft rasterizer, plus the image-discrepancy loss.
//!
//! Render pipeline for a state `(θ, t, z)`:
//!
//! 1. `latent_map · z` perturbs the cuboid's log half-extents, the per-face
//!    albedo logits and the base-colour logits.
//! 2. Corners are rotated by `euler_to_matrix(θ)`, scaled by `exp(t.scale)`,
//!    orthographically projected (camera on +z looking down −z, image y
//!    down) and shifted by `(t.tx · width, t.ty · height)`.
//! 3. Each face gets soft coverage from its four edge lines, Lambertian
//!    shading from `light_dir`, and faces are blended by a softmax over face
//!    depth before compositing over a constant background.
//!
//! The latent code is always initialised at zero by policies; there is no
//! encoder for `z`.

mod image;
mod loss;
mod raster;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{EulerPose, Translation, Vec3};

pub use image::{Image, CHANNELS};
pub use loss::{perceptual_proxy_loss, PerceptualLoss, FEATURE_WEIGHT, PYRAMID_LEVELS};
pub use raster::{SoftRaster, PRUNE_LOG_COVERAGE};

pub const LATENT_DIM: usize = 16;
pub const LATENT_LIMIT: f64 = 3.0;
/// Number of scalars in a pose state: 3 angles, 3 translation, 16 latent.
pub const STATE_DIM: usize = 22;
pub const FACES: usize = 6;
/// Rows of the latent map: 3 half-extent, 6 albedo and 3 colour deltas.
pub const LATENT_OUTPUTS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentCode(pub [f64; LATENT_DIM]);

impl LatentCode {
    /// Components are clamped to `[-3, 3]`.
    pub fn new(mut z: [f64; LATENT_DIM]) -> Self {
        for v in &mut z {
            *v = v.clamp(-LATENT_LIMIT, LATENT_LIMIT);
        }
        Self(z)
    }

    pub fn zero() -> Self {
        Self([0.0; LATENT_DIM])
    }

    pub fn from_slice(z: &[f64]) -> Self {
        let mut a = [0.0; LATENT_DIM];
        a.copy_from_slice(z);
        Self::new(a)
    }
}

/// The navigable simulator input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseState {
    pub theta: EulerPose,
    pub t: Translation,
    pub z: LatentCode,
}

impl PoseState {
    pub fn new(theta: EulerPose, t: Translation, z: LatentCode) -> Self {
        Self { theta, t, z }
    }

    /// `[az, el, in, tx, ty, scale, z0..z15]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM);
        v.extend_from_slice(&self.theta.to_array());
        v.extend_from_slice(&self.t.to_array());
        v.extend_from_slice(&self.z.0);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::shape("PoseState", format!("{} values", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("PoseState::from_slice"));
        }
        Ok(Self {
            theta: EulerPose::new(v[0], v[1], v[2]),
            t: Translation::new(v[3], v[4], v[5]),
            z: LatentCode::from_slice(&v[6..]),
        })
    }
}

/// Built-in object categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    /// Square-footprint box with identical side faces; symmetric about y.
    Box,
    /// Flat, wide slab with clearly distinct face albedos (asymmetric).
    Laptop,
    /// Elongated cuboid whose front/back (and left/right) albedos are nearly
    /// equal, giving a loss basin at a 180° azimuth offset.
    Twin,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Box, Category::Laptop, Category::Twin];

    pub fn name(self) -> &'static str {
        match self {
            Category::Box => "box",
            Category::Laptop => "laptop",
            Category::Twin => "twin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown category {s:?}")))
    }

    fn seed(self) -> u64 {
        match self {
            Category::Box => 0x0b0c,
            Category::Laptop => 0x1a9f,
            Category::Twin => 0x7a11,
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Uniform sampling ranges for pose states (`z` is always standard normal).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingRanges {
    pub azimuth: (f64, f64),
    pub elevation: (f64, f64),
    pub inplane: (f64, f64),
    pub shift: (f64, f64),
    pub scale: (f64, f64),
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            azimuth: (-PI, PI),
            elevation: (-PI / 6.0, PI / 3.0),
            inplane: (-PI / 12.0, PI / 12.0),
            shift: (-0.15, 0.15),
            scale: (-0.3, 0.3),
        }
    }
}

fn mid(r: (f64, f64)) -> f64 {
    0.5 * (r.0 + r.1)
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorSpec {
    pub category: Category,
    pub symmetry_axis: Option<Vec3>,
    pub light_dir: Vec3,
    /// Edge temperature τ in pixels.
    pub softness: f64,
    /// Face-depth blend temperature β.
    pub depth_temp: f64,
    pub width: usize,
    pub height: usize,
    /// Pixels per object unit at scale 0.
    pub focal: f64,
    pub ambient: f64,
    pub background: f64,
    pub half_extents: Vec3,
    /// Albedo per face, ordered +x, −x, +y, −y, +z (front), −z (back).
    pub albedo: [f64; FACES],
    pub color: Vec3,
    /// `[12, 16]`, fixed per category seed.
    pub latent_map: Array,
    pub ranges: SamplingRanges,
}

pub const DEFAULT_SOFTNESS: f64 = 1.5;
pub const DEFAULT_DEPTH_TEMP: f64 = 25.0;
pub const DEFAULT_RESOLUTION: usize = 64;
pub const BACKGROUND: f64 = 0.05;

fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Standard deviations of the latent-map rows for each output group.
const LATENT_SCALE_EXTENT: f64 = 0.03;
const LATENT_SCALE_ALBEDO: f64 = 0.04;
const LATENT_SCALE_COLOR: f64 = 0.05;

impl GeneratorSpec {
    pub fn new(category: Category) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(category.seed());
        let mut map = Vec::with_capacity(LATENT_OUTPUTS * LATENT_DIM);
        for row in 0..LATENT_OUTPUTS {
            let s = match row {
                0..=2 => LATENT_SCALE_EXTENT,
                3..=8 => LATENT_SCALE_ALBEDO,
                _ => LATENT_SCALE_COLOR,
            };
            for _ in 0..LATENT_DIM {
                let n: f64 = StandardNormal.sample(&mut rng);
                map.push(s * n);
            }
        }
        let latent_map =
            Array::new(vec![LATENT_OUTPUTS, LATENT_DIM], map).expect("latent map shape");
        let (symmetry_axis, half_extents, albedo, color) = match category {
            Category::Box => (
                Some([0.0, 1.0, 0.0]),
                [0.6, 0.75, 0.6],
                [0.7, 0.7, 0.95, 0.35, 0.7, 0.7],
                [0.85, 0.55, 0.35],
            ),
            Category::Laptop => (
                None,
                [0.95, 0.3, 0.6],
                [0.45, 0.8, 0.95, 0.3, 0.65, 0.2],
                [0.55, 0.65, 0.9],
            ),
            Category::Twin => (
                None,
                [0.95, 0.55, 0.45],
                [0.6, 0.5, 0.95, 0.3, 0.8, 0.7],
                [0.7, 0.8, 0.6],
            ),
        };
        Self {
            category,
            symmetry_axis,
            light_dir: normalize([0.4, 0.7, 0.6]),
            softness: DEFAULT_SOFTNESS,
            depth_temp: DEFAULT_DEPTH_TEMP,
            width: DEFAULT_RESOLUTION,
            height: DEFAULT_RESOLUTION,
            focal: 22.0,
            ambient: 0.35,
            background: BACKGROUND,
            half_extents,
            albedo,
            color,
            latent_map,
            ranges: SamplingRanges::default(),
        }
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.focal *= width as f64 / DEFAULT_RESOLUTION as f64;
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.softness > 0.0 && self.depth_temp > 0.0) {
            return Err(Error::InvalidArgument("softness and depth_temp must be > 0".into()));
        }
        if !self.width.is_multiple_of(8) || !self.height.is_multiple_of(8) || self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {}x{} must be a nonzero multiple of 8",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// The category's mean pose: midpoint of every sampling range, `z = 0`.
    pub fn mean_pose(&self) -> PoseState {
        let r = &self.ranges;
        PoseState {
            theta: EulerPose::new(mid(r.azimuth), mid(r.elevation), mid(r.inplane)),
            t: Translation::new(mid(r.shift), mid(r.shift), mid(r.scale)),
            z: LatentCode::zero(),
        }
    }

    /// Draw a random state from the sampling ranges.
    pub fn sample_state(&self, rng: &mut ChaCha8Rng) -> PoseState {
        sample_state(rng, &self.ranges)
    }

    fn raster(&self) -> SoftRaster {
        SoftRaster {
            width: self.width,
            height: self.height,
            tau: self.softness,
            beta: self.depth_temp,
            background: self.background,
        }
    }

    /// Render a state to an image (no gradients).
    pub fn render(&self, s: &PoseState) -> Image {
        let mut tape = Tape::new();
        let vars = StateVars::constant(&mut tape, s);
        let img = self
            .render_on_tape(&mut tape, &vars)
            .expect("rendering a valid state is total");
        Image::from_array(tape.value(img)).expect("render output is an image")
    }

    /// Record the render of `vars` on `tape`, returning a `[3, H, W]` node.
    pub fn render_on_tape(&self, tape: &mut Tape, vars: &StateVars) -> Result<Var> {
        let geo = geometry_tables();

        // latent perturbations
        let map = tape.constant(self.latent_map.clone());
        let z_col = tape.reshape(vars.z, &[LATENT_DIM, 1])?;
        let delta = tape.matmul(map, z_col)?;
        let delta = tape.reshape(delta, &[LATENT_OUTPUTS])?;
        let d_ext = tape.slice(delta, 0, 0, 3)?;
        let d_alb = tape.slice(delta, 0, 3, 9)?;
        let d_col = tape.slice(delta, 0, 9, 12)?;

        let base_ext = tape.constant(Array::from_slice(&self.half_extents));
        let ext_scale = tape.exp(d_ext)?;
        let ext = tape.mul(base_ext, ext_scale)?;

        let alb_logit = tape.constant(Array::from_vec(self.albedo.iter().map(|&a| logit(a)).collect()));
        let alb = tape.add(alb_logit, d_alb)?;
        let alb = tape.sigmoid(alb)?;
        let col_logit = tape.constant(Array::from_vec(self.color.iter().map(|&a| logit(a)).collect()));
        let col = tape.add(col_logit, d_col)?;
        let col = tape.sigmoid(col)?;

        // rotation R = Rz(inplane) Rx(elevation) Ry(azimuth), applied as rows·Rᵀ
        let rot = rotation_on_tape(tape, vars.theta)?;
        let rot_t = tape.transpose(rot)?;

        let signs = tape.constant(geo.corner_signs.clone());
        let ext_row = tape.reshape(ext, &[1, 3])?;
        let corners = tape.mul(signs, ext_row)?;
        let cam = tape.matmul(corners, rot_t)?; // [8,3]

        // projection
        let t_scale = tape.slice(vars.t, 0, 2, 3)?;
        let s = tape.exp(t_scale)?;
        let s = tape.scale(s, self.focal)?;
        let xy = tape.slice(cam, 1, 0, 2)?; // [8,2]
        let xy = tape.mul(xy, s)?;
        let flip = tape.constant(Array::from_slice(&[1.0, -1.0]));
        let xy = tape.mul(xy, flip)?;
        let shift_frac = tape.slice(vars.t, 0, 0, 2)?;
        let dims = tape.constant(Array::from_slice(&[self.width as f64, self.height as f64]));
        let shift = tape.mul(shift_frac, dims)?;
        let center = tape.constant(Array::from_slice(&[
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
        ]));
        let shift = tape.add(shift, center)?;
        let proj = tape.add(xy, shift)?; // [8,2] pixels

        // edge lines, inside-positive for faces seen from the front
        let p0 = tape.gather(proj, geo.edge_start.clone(), &[FACES, 4, 2])?;
        let p1 = tape.gather(proj, geo.edge_end.clone(), &[FACES, 4, 2])?;
        let e = tape.sub(p1, p0)?;
        let ex = tape.slice(e, 2, 0, 1)?;
        let ey = tape.slice(e, 2, 1, 2)?;
        let x0 = tape.slice(p0, 2, 0, 1)?;
        let y0 = tape.slice(p0, 2, 1, 2)?;
        let ex2 = tape.square(ex)?;
        let ey2 = tape.square(ey)?;
        let len2 = tape.add(ex2, ey2)?;
        let len2 = tape.add_scalar(len2, EDGE_LEN_EPS)?;
        let len = tape.sqrt(len2)?;
        let a = tape.div(ey, len)?;
        let nex = tape.neg(ex)?;
        let b = tape.div(nex, len)?;
        let exy = tape.mul(ex, y0)?;
        let eyx = tape.mul(ey, x0)?;
        let c = tape.sub(exy, eyx)?;
        let c = tape.div(c, len)?;
        let edges = tape.concat(&[a, b, c], 2)?; // [6,4,3]

        // face depth: mean camera-z of the face corners, scaled like x/y
        let cam_z = tape.slice(cam, 1, 2, 3)?;
        let face_z = tape.gather(cam_z, geo.face_corners.clone(), &[FACES, 4])?;
        let face_z = tape.sum_axis(face_z, 1)?;
        let face_z = tape.reshape(face_z, &[FACES])?;
        let s_unit = tape.exp(t_scale)?;
        let depth = tape.mul(face_z, s_unit)?;
        let depth = tape.scale(depth, 0.25)?;

        // Lambertian shading
        let normals = tape.constant(geo.face_normals.clone());
        let n_cam = tape.matmul(normals, rot_t)?; // [6,3]
        let light = tape.constant(Array::new(vec![3, 1], self.light_dir.to_vec())?);
        let ndotl = tape.matmul(n_cam, light)?; // [6,1]
        let diffuse = tape.relu(ndotl)?;
        let diffuse = tape.scale(diffuse, 1.0 - self.ambient)?;
        let lum = tape.add_scalar(diffuse, self.ambient)?;
        let alb_col = tape.reshape(alb, &[FACES, 1])?;
        let lum = tape.mul(lum, alb_col)?;
        let col_row = tape.reshape(col, &[1, 3])?;
        let shade = tape.mul(lum, col_row)?; // [6,3]

        let img = self.raster().record(tape, edges, depth, shade)?;
        tape.clamp(img, 0.0, 1.0)
    }
}

/// Squared-length regularizer for projected edges (pixels²).
const EDGE_LEN_EPS: f64 = 0.25;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Tape leaves for the three state blocks.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub theta: Var,
    pub t: Var,
    pub z: Var,
}

impl StateVars {
    /// Differentiable leaves.
    pub fn params(tape: &mut Tape, s: &PoseState) -> Self {
        Self {
            theta: tape.param(Array::from_slice(&s.theta.to_array())),
            t: tape.param(Array::from_slice(&s.t.to_array())),
            z: tape.param(Array::from_slice(&s.z.0)),
        }
    }

    pub fn constant(tape: &mut Tape, s: &PoseState) -> Self {
        Self {
            theta: tape.constant(Array::from_slice(&s.theta.to_array())),
            t: tape.constant(Array::from_slice(&s.t.to_array())),
            z: tape.constant(Array::from_slice(&s.z.0)),
        }
    }
}

/// `R_z(θ[2]) · R_x(θ[1]) · R_y(θ[0])` as a `[3,3]` node.
pub fn rotation_on_tape(tape: &mut Tape, theta: Var) -> Result<Var> {
    let sin = tape.sin(theta)?;
    let cos = tape.cos(theta)?;
    let zero = tape.constant(Array::from_slice(&[0.0]));
    let one = tape.constant(Array::from_slice(&[1.0]));
    let mut parts = Vec::with_capacity(3);
    for axis in 0..3 {
        let s = tape.slice(sin, 0, axis, axis + 1)?;
        let c = tape.slice(cos, 0, axis, axis + 1)?;
        let ns = tape.neg(s)?;
        let entries = match axis {
            0 => [c, zero, s, zero, one, zero, ns, zero, c],  // R_y(azimuth)
            1 => [one, zero, zero, zero, c, ns, zero, s, c],  // R_x(elevation)
            _ => [c, ns, zero, s, c, zero, zero, zero, one], // R_z(inplane)
        };
        let flat = tape.concat(&entries, 0)?;
        parts.push(tape.reshape(flat, &[3, 3])?);
    }
    let zx = tape.matmul(parts[2], parts[1])?;
    tape.matmul(zx, parts[0])
}

struct GeometryTables {
    corner_signs: Array,
    face_normals: Array,
    face_corners: Arc<[usize]>,
    edge_start: Arc<[usize]>,
    edge_end: Arc<[usize]>,
}

fn geometry_tables() -> &'static GeometryTables {
    static TABLES: std::sync::OnceLock<GeometryTables> = std::sync::OnceLock::new();
    TABLES.get_or_init(|| {
        let corner = |s: [i32; 3]| -> usize {
            (if s[0] > 0 { 1 } else { 0 }) | (if s[1] > 0 { 2 } else { 0 }) | (if s[2] > 0 { 4 } else { 0 })
        };
        let mut signs = Vec::with_capacity(24);
        for i in 0..8usize {
            for bit in 0..3 {
                signs.push(if i & (1 << bit) != 0 { 1.0 } else { -1.0 });
            }
        }
        let mut normals = Vec::with_capacity(18);
        let mut face_corners = Vec::with_capacity(24);
        // faces +x, −x, +y, −y, +z, −z; (u, v) chosen so u × v = outward normal
        for (axis, sign) in [(0usize, 1i32), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)] {
            let mut n = [0.0; 3];
            n[axis] = sign as f64;
            normals.extend_from_slice(&n);
            let (mut u, mut v) = ((axis + 1) % 3, (axis + 2) % 3);
            if sign < 0 {
                std::mem::swap(&mut u, &mut v);
            }
            for (su, sv) in [(-1, -1), (1, -1), (1, 1), (-1, 1)] {
                let mut s = [0i32; 3];
                s[axis] = sign;
                s[u] = su;
                s[v] = sv;
                face_corners.push(corner(s));
            }
        }
        let mut start = Vec::with_capacity(48);
        let mut end = Vec::with_capacity(48);
        for f in 0..FACES {
            for e in 0..4 {
                let a = face_corners[f * 4 + e];
                let b = face_corners[f * 4 + (e + 1) % 4];
                start.extend_from_slice(&[2 * a, 2 * a + 1]);
                end.extend_from_slice(&[2 * b, 2 * b + 1]);
            }
        }
        GeometryTables {
            corner_signs: Array::new(vec![8, 3], signs).expect("corner table"),
            face_normals: Array::new(vec![FACES, 3], normals).expect("normal table"),
            face_corners: face_corners.into(),
            edge_start: start.into(),
            edge_end: end.into(),
        }
    })
}

/// Draw a pose state: uniform angles and translation within `ranges`,
/// `z ~ N(0, I)` clamped to `[-3, 3]`.
pub fn sample_state(rng: &mut ChaCha8Rng, ranges: &SamplingRanges) -> PoseState {
    let az = uniform(rng, ranges.azimuth);
    let el = uniform(rng, ranges.elevation);
    let ip = uniform(rng, ranges.inplane);
    let tx = uniform(rng, ranges.shift);
    let ty = uniform(rng, ranges.shift);
    let sc = uniform(rng, ranges.scale);
    let mut z = [0.0; LATENT_DIM];
    for v in &mut z {
        *v = StandardNormal.sample(rng);
    }
    PoseState {
        theta: EulerPose::new(az, el, ip),
        t: Translation::new(tx, ty, sc),
        z: LatentCode::new(z),
    }
}

#[cfg(test)]
mod tests;
