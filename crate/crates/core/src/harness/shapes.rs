use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud};

pub const MIN_SHAPE_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Torus,
    FoldedSheet,
    BoxComposite,
    SpikedSphere,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Sphere,
        ShapeKind::Torus,
        ShapeKind::FoldedSheet,
        ShapeKind::BoxComposite,
        ShapeKind::SpikedSphere,
    ];

    /// Shapes without creases or spikes.
    pub const SMOOTH: [ShapeKind; 3] = [ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::FoldedSheet];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Torus => "torus",
            ShapeKind::FoldedSheet => "folded_sheet",
            ShapeKind::BoxComposite => "box_composite",
            ShapeKind::SpikedSphere => "spiked_sphere",
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown shape kind '{s}'")))
    }
}

/// Samples a synthetic surface and scales it so the farthest point from the
/// origin has norm 1. Every generator is centered at the origin by construction.
pub fn gen_shape(kind: ShapeKind, n_points: usize, seed: u64) -> Result<PointCloud> {
    if n_points < MIN_SHAPE_POINTS {
        return Err(Error::TooFewPoints {
            found: n_points,
            required: MIN_SHAPE_POINTS,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let points = match kind {
        ShapeKind::Sphere => (0..n_points).map(|_| unit_vector(&mut rng)).collect(),
        ShapeKind::Torus => torus(n_points, &mut rng),
        ShapeKind::FoldedSheet => folded_sheet(n_points, &mut rng)?,
        ShapeKind::BoxComposite => box_composite(n_points, &mut rng),
        ShapeKind::SpikedSphere => spiked_sphere(n_points, &mut rng),
    };
    let radius = points.iter().map(|p: &Point3| p.norm()).fold(0.0, f64::max);
    Ok(PointCloud::new(points.into_iter().map(|p| p / radius).collect()).with_tag(format!("{kind}_{seed}")))
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = Point3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn torus(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let (major, minor) = (1.0, 0.4);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u = rng.random_range(0.0..2.0 * PI);
        let v = rng.random_range(0.0..2.0 * PI);
        // area element is proportional to major + minor cos v
        if rng.random::<f64>() * (major + minor) > major + minor * v.cos() {
            continue;
        }
        let ring = major + minor * v.cos();
        out.push(Point3::new(ring * u.cos(), ring * u.sin(), minor * v.sin()));
    }
    out
}

const SHEET_LAYERS: usize = 3;
const SHEET_GAP: f64 = 0.25;

/// Centerline of a Z-folded strip: flat layers of unit length joined by
/// half-circle bends of diameter `SHEET_GAP`.
fn sheet_centerline(s: f64) -> (f64, f64) {
    let bend = PI * SHEET_GAP / 2.0;
    let period = 1.0 + bend;
    let layer = ((s / period).floor() as usize).min(SHEET_LAYERS - 1);
    let local = s - layer as f64 * period;
    let forward = layer % 2 == 0;
    let z0 = layer as f64 * SHEET_GAP;
    if local <= 1.0 {
        let x = if forward { local } else { 1.0 - local };
        return (x, z0);
    }
    let phi = (local - 1.0) / (SHEET_GAP / 2.0);
    let r = SHEET_GAP / 2.0;
    let (cx, cz) = (if forward { 1.0 } else { 0.0 }, z0 + r);
    let sign = if forward { 1.0 } else { -1.0 };
    (cx + sign * r * phi.sin(), cz - r * phi.cos())
}

fn folded_sheet(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Point3>> {
    let length = SHEET_LAYERS as f64 + (SHEET_LAYERS - 1) as f64 * PI * SHEET_GAP / 2.0;
    let width = 1.0;
    let intrinsic: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..length), rng.random_range(0.0..width)))
        .collect();
    let offset = Point3::new(0.5, width / 2.0, (SHEET_LAYERS - 1) as f64 * SHEET_GAP / 2.0);
    let points: Vec<Point3> = intrinsic
        .iter()
        .map(|&(s, y)| {
            let (x, z) = sheet_centerline(s);
            Point3::new(x, y, z) - offset
        })
        .collect();
    // The strip unfolds isometrically onto a rectangle, so intrinsic distance
    // is planar distance in (s, y).
    let mut best: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let e = (points[i] - points[j]).norm();
            if e > 1e-9 {
                let geo = (intrinsic[i].0 - intrinsic[j].0).hypot(intrinsic[i].1 - intrinsic[j].1);
                best = best.max(geo / e);
            }
        }
    }
    if best < 2.0 {
        return Err(Error::Assertion(format!("folded sheet geodesic/euclidean ratio {best:.3} below 2")));
    }
    Ok(points)
}

/// Axis-aligned box given by center and half extents.
#[derive(Clone, Copy)]
struct Cuboid {
    center: [f64; 3],
    half: [f64; 3],
}

impl Cuboid {
    fn face_areas(&self) -> [f64; 3] {
        let [a, b, c] = self.half;
        // pairs of faces normal to x, y, z
        [8.0 * b * c, 8.0 * a * c, 8.0 * a * b]
    }

    fn area(&self) -> f64 {
        self.face_areas().iter().sum()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Point3 {
        let areas = self.face_areas();
        let mut pick = rng.random::<f64>() * self.area();
        let mut axis = 2;
        for (k, a) in areas.iter().enumerate() {
            if pick < *a {
                axis = k;
                break;
            }
            pick -= a;
        }
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = if k == axis {
                if rng.random::<bool>() {
                    self.half[k]
                } else {
                    -self.half[k]
                }
            } else {
                rng.random_range(-self.half[k]..self.half[k])
            };
        }
        Point3::new(p[0] + self.center[0], p[1] + self.center[1], p[2] + self.center[2])
    }
}

/// A table: slab top, four legs and a lower shelf.
fn box_composite(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let leg = 0.06;
    let mut parts = vec![
        Cuboid { center: [0.0, 0.0, 0.45], half: [1.0, 0.6, 0.05] },
        Cuboid { center: [0.0, 0.0, -0.2], half: [0.85, 0.45, 0.025] },
    ];
    for (sx, sy) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        parts.push(Cuboid { center: [sx * 0.88, sy * 0.48, -0.05], half: [leg, leg, 0.45] });
    }
    let total: f64 = parts.iter().map(Cuboid::area).sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = parts[parts.len() - 1];
            for part in &parts {
                if pick < part.area() {
                    chosen = *part;
                    break;
                }
                pick -= part.area();
            }
            chosen.sample(rng)
        })
        .collect()
}

/// Sphere of radius 0.7 with six cones of seeded direction.
fn spiked_sphere(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    let (body, spike_len, base) = (0.7, 0.55, 0.18);
    let dirs: Vec<Point3> = (0..6).map(|_| unit_vector(rng)).collect();
    let n_spikes = n * 3 / 10;
    let mut out = Vec::with_capacity(n);
    while out.len() < n - n_spikes {
        let p = unit_vector(rng) * body;
        out.push(p);
    }
    for i in 0..n_spikes {
        let d = dirs[i % dirs.len()];
        let helper = if d.x.abs() < 0.9 { Point3::x() } else { Point3::y() };
        let e1 = d.cross(&helper).normalize();
        let e2 = d.cross(&e1);
        // lateral area density grows linearly toward the base
        let t: f64 = rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..2.0 * PI);
        let r = t * base;
        let along = body + spike_len * (1.0 - t);
        out.push(d * along + (e1 * theta.cos() + e2 * theta.sin()) * r);
    }
    out
}

/// Domain-shift perturbation of a cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    Identity,
    /// Angle in radians about a (not necessarily unit) axis.
    Rotate { axis: [f64; 3], angle: f64 },
    /// Uniform over SO(3).
    RandomRotation { seed: u64 },
    GaussianNoise { std: f64, seed: u64 },
    /// Drops `fraction` of the points on the far side of a seeded plane.
    Occlude { fraction: f64, seed: u64 },
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::GaussianNoise { std, .. } if !(std >= 0.0 && std.is_finite()) => {
                Err(Error::InvalidArgument(format!("noise std {std} must be finite and non-negative")))
            }
            Perturbation::Occlude { fraction, .. } if !(0.0..=0.9).contains(&fraction) => {
                Err(Error::InvalidArgument(format!("occlusion fraction {fraction} outside [0, 0.9]")))
            }
            Perturbation::Rotate { axis, angle } if !angle.is_finite() || Vector3::from(axis).norm() == 0.0 => {
                Err(Error::InvalidArgument("rotation needs a nonzero axis and finite angle".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Perturbation::Identity => "identity".into(),
            Perturbation::Rotate { axis, angle } => format!("rotate[{},{},{}]:{angle}", axis[0], axis[1], axis[2]),
            Perturbation::RandomRotation { seed } => format!("rotation:{seed}"),
            Perturbation::GaussianNoise { std, seed } => format!("noise:{std}:{seed}"),
            Perturbation::Occlude { fraction, seed } => format!("occlude:{fraction}:{seed}"),
        }
    }
}

pub fn random_rotation(seed: u64) -> Rotation3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = nalgebra::Quaternion::new(
        StandardNormal.sample(&mut rng),
        StandardNormal.sample(&mut rng),
        StandardNormal.sample(&mut rng),
        StandardNormal.sample(&mut rng),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix()
}

pub fn rotate_about_centroid(cloud: &PointCloud, rotation: &Rotation3<f64>) -> PointCloud {
    let c = cloud.centroid();
    PointCloud {
        points: cloud.points.iter().map(|p| rotation * (p - c) + c).collect(),
        source_tag: cloud.source_tag.clone(),
    }
}

/// Points kept after occluding `fraction`: `⌈(1 − fraction)·P⌉`.
pub fn occlusion_keep_count(n: usize, fraction: f64) -> usize {
    (((1.0 - fraction) * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Applies `p`; occlusion must leave at least `4 · patch_size` points.
/// Clouds are never renormalized.
pub fn perturb(cloud: &PointCloud, p: &Perturbation, patch_size: usize) -> Result<PointCloud> {
    p.validate()?;
    match *p {
        Perturbation::Identity => Ok(cloud.clone()),
        Perturbation::Rotate { axis, angle } => {
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
            Ok(rotate_about_centroid(cloud, &rot))
        }
        Perturbation::RandomRotation { seed } => Ok(rotate_about_centroid(cloud, &random_rotation(seed))),
        Perturbation::GaussianNoise { std, seed } => {
            if std == 0.0 {
                return Ok(cloud.clone());
            }
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(PointCloud {
                points: cloud
                    .points
                    .iter()
                    .map(|q| q + Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
                    .collect(),
                source_tag: cloud.source_tag.clone(),
            })
        }
        Perturbation::Occlude { fraction, seed } => {
            let keep = occlusion_keep_count(cloud.len(), fraction);
            let required = 4 * patch_size;
            if keep < required {
                return Err(Error::TooFewPoints { found: keep, required });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dir = unit_vector(&mut rng);
            let c = cloud.centroid();
            let heights: Vec<f64> = cloud.points.iter().map(|q| (q - c).dot(&dir)).collect();
            let mut idx: Vec<usize> = (0..cloud.len()).collect();
            idx.sort_by(|&a, &b| heights[a].total_cmp(&heights[b]).then(a.cmp(&b)));
            let mut kept: Vec<usize> = idx[..keep].to_vec();
            kept.sort_unstable();
            Ok(PointCloud {
                points: kept.iter().map(|&i| cloud.points[i]).collect(),
                source_tag: cloud.source_tag.clone(),
            })
        }
    }
}
