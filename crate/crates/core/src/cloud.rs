//! Point-cloud data model, synthetic primitive shapes, unit-cube
//! normalization and the XYZ text format.
//!
//! Point order is significant everywhere: index `i` names the same physical
//! point through I/O, normalization and every attack iteration.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result, Scalar};

pub type Point3<T> = [T; 3];

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: &Point3<T>, b: &Point3<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// An ordered set of `N >= 1` finite points with an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Point3<T>>,
    label: Option<usize>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>, label: Option<usize>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points, label })
    }

    /// Builds a cloud the caller already knows to be valid.
    pub(crate) fn from_parts(points: Vec<Point3<T>>, label: Option<usize>) -> Self {
        debug_assert!(!points.is_empty());
        Self { points, label }
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3<T>> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false for a constructed cloud; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    /// Converts coordinates to another precision.
    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.map(|c| U::of(c.to_f64_lossy())))
                .collect(),
            label: self.label,
        }
    }

    /// `self - original`, point by point.
    pub fn perturbation_from(&self, original: &PointCloud<T>) -> Result<Perturbation<T>> {
        if self.len() != original.len() {
            return Err(Error::invalid(format!(
                "perturbation needs equal sizes, got {} and {}",
                self.len(),
                original.len()
            )));
        }
        let deltas = self
            .points
            .iter()
            .zip(&original.points)
            .map(|(a, o)| [a[0] - o[0], a[1] - o[1], a[2] - o[2]])
            .collect();
        Ok(Perturbation { deltas })
    }

    /// Largest absolute coordinate difference to `other` (both must be the same size).
    pub fn linf_distance(&self, other: &PointCloud<T>) -> T {
        assert_eq!(self.len(), other.len(), "linf_distance on clouds of different size");
        self.points
            .iter()
            .zip(&other.points)
            .flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs()))
            .fold(T::zero(), T::max)
    }

    /// Applies a per-point permutation: output point `i` is input point `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid("not a permutation of the point indices"));
            }
        }
        if order.len() != self.len() {
            return Err(Error::invalid("not a permutation of the point indices"));
        }
        Ok(Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
            label: self.label,
        })
    }
}

/// Per-point displacement `P' - P`, in the order of the owning cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<T> {
    pub deltas: Vec<Point3<T>>,
}

impl<T: Scalar> Perturbation<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            deltas: vec![[T::zero(); 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn linf(&self) -> T {
        self.deltas
            .iter()
            .flatten()
            .fold(T::zero(), |m, d| m.max(d.abs()))
    }

    /// Clamps every entry into `[-epsilon, epsilon]`.
    pub fn project_linf(&mut self, epsilon: T) {
        for d in self.deltas.iter_mut().flatten() {
            *d = d.max(-epsilon).min(epsilon);
        }
    }
}

/// The six synthetic primitive classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeClass {
    Sphere = 0,
    Cube = 1,
    Cylinder = 2,
    Cone = 3,
    Torus = 4,
    Plane = 5,
}

impl ShapeClass {
    pub const COUNT: usize = 6;
    pub const ALL: [ShapeClass; 6] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
        ShapeClass::Plane,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
            ShapeClass::Plane => "plane",
        }
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape class `{s}`")))
    }
}

/// Torus tube radius; the ring radius is `1 - TORUS_TUBE` so the outer extent is 2.
const TORUS_TUBE: f64 = 0.3;
/// Largest axis-aligned extent of every raw primitive.
const RAW_EXTENT: f64 = 2.0;
const JITTER_FRACTION: f64 = 0.005;

/// Samples `n` points on the surface of the raw (unrotated, unjittered)
/// primitive. Every primitive fits the box `[-1, 1]^3` and has extent 2 along
/// its largest axis. Sampling is uniform by surface area.
pub fn sample_primitive<R: Rng + ?Sized>(class: ShapeClass, n: usize, rng: &mut R) -> Vec<Point3<f64>> {
    (0..n).map(|_| sample_surface_point(class, rng)).collect()
}

fn sample_surface_point<R: Rng + ?Sized>(class: ShapeClass, rng: &mut R) -> Point3<f64> {
    match class {
        ShapeClass::Sphere => {
            let normal = Normal::new(0.0, 1.0).unwrap();
            loop {
                let v: [f64; 3] = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
                let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if r > 1e-12 {
                    return [v[0] / r, v[1] / r, v[2] / r];
                }
            }
        }
        ShapeClass::Cube => {
            let face = rng.random_range(0..6usize);
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut p = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), 0.0];
            p.swap(2, axis);
            p[axis] = sign;
            p
        }
        ShapeClass::Cylinder => {
            // Lateral area 4*pi, caps 2*pi in total.
            let theta = rng.random_range(0.0..2.0 * PI);
            if rng.random_range(0.0..1.0) < 2.0 / 3.0 {
                [theta.cos(), theta.sin(), rng.random_range(-1.0..=1.0)]
            } else {
                let r = rng.random_range(0.0f64..1.0).sqrt();
                let z = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                [r * theta.cos(), r * theta.sin(), z]
            }
        }
        ShapeClass::Cone => {
            // Apex at z = 1, unit base at z = -1. Lateral area pi*sqrt(5), base pi.
            let lateral = 5f64.sqrt() / (5f64.sqrt() + 1.0);
            let theta = rng.random_range(0.0..2.0 * PI);
            let s = rng.random_range(0.0f64..1.0).sqrt();
            if rng.random_range(0.0..1.0) < lateral {
                [s * theta.cos(), s * theta.sin(), 1.0 - 2.0 * s]
            } else {
                [s * theta.cos(), s * theta.sin(), -1.0]
            }
        }
        ShapeClass::Torus => {
            let ring = 1.0 - TORUS_TUBE;
            loop {
                let u = rng.random_range(0.0..2.0 * PI);
                let v = rng.random_range(0.0..2.0 * PI);
                let accept = (ring + TORUS_TUBE * v.cos()) / (ring + TORUS_TUBE);
                if rng.random_range(0.0..1.0) <= accept {
                    let w = ring + TORUS_TUBE * v.cos();
                    return [w * u.cos(), w * u.sin(), TORUS_TUBE * v.sin()];
                }
            }
        }
        ShapeClass::Plane => [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), 0.0],
    }
}

/// Uniformly random rotation matrix from a uniform unit quaternion.
fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let u1: f64 = rng.random_range(0.0..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let u3: f64 = rng.random_range(0.0..1.0);
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (x, y, z, w) = (
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn shape_rng(class: ShapeClass, n: usize, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Distinct streams per (class, n) for the same seed.
    rng.set_stream(((class.index() as u64) << 32) | n as u64);
    rng
}

/// Samples a labeled, randomly rotated, jittered primitive and normalizes it
/// into the unit cube. Pure function of `(class, n, seed)`.
pub fn generate_shape<T: Scalar>(class: ShapeClass, n: usize, seed: u64) -> Result<PointCloud<T>> {
    if n < 8 {
        return Err(Error::invalid(format!("generate_shape needs n >= 8, got {n}")));
    }
    let mut rng = shape_rng(class, n, seed);
    let raw = sample_primitive(class, n, &mut rng);
    let rot = random_rotation(&mut rng);
    let jitter = Normal::new(0.0, JITTER_FRACTION * RAW_EXTENT).unwrap();
    let points: Vec<Point3<T>> = raw
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for (r, row) in rot.iter().enumerate() {
                q[r] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + jitter.sample(&mut rng);
            }
            q.map(T::of)
        })
        .collect();
    normalize_unit_cube(&PointCloud::new(points, Some(class.index()))?)
}

/// Centers the bounding box at the origin and scales isotropically so the
/// largest axis-aligned extent is 1. Output lies in `[-0.5, 0.5]^3`.
pub fn normalize_unit_cube<T: Scalar>(cloud: &PointCloud<T>) -> Result<PointCloud<T>> {
    let mut lo = cloud.points[0];
    let mut hi = cloud.points[0];
    for p in &cloud.points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(T::zero(), T::max);
    if !(extent > T::zero()) {
        return Err(Error::Degenerate("all points are identical".into()));
    }
    let half = T::of(0.5);
    let center = [0, 1, 2].map(|k| (lo[k] + hi[k]) * half);
    let points = cloud
        .points
        .iter()
        .map(|p| [0, 1, 2].map(|k| ((p[k] - center[k]) / extent).max(-half).min(half)))
        .collect();
    Ok(PointCloud::from_parts(points, cloud.label))
}

/// Parses the XYZ text format: an optional `# label <k>` first line, then one
/// `x y z` point per line. Blank lines and other `#` comments are skipped.
pub fn parse_xyz<T: Scalar>(text: &str, path: &Path) -> Result<PointCloud<T>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut label = None;
    let mut points = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            if idx == 0 && parts.next() == Some("label") {
                let value = parts
                    .next()
                    .ok_or_else(|| parse_err(line_no, "missing label value".into()))?;
                label = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| parse_err(line_no, format!("invalid label `{value}`")))?,
                );
            }
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 coordinates, found {}", tokens.len())));
        }
        let mut p = [T::zero(); 3];
        for (slot, tok) in p.iter_mut().zip(&tokens) {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid number `{tok}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite coordinate `{tok}`")));
            }
            *slot = T::of(v);
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::invalid(format!("{}: no points", path.display())));
    }
    PointCloud::new(points, label)
}

pub fn format_xyz<T: Scalar>(cloud: &PointCloud<T>) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    if let Some(label) = cloud.label {
        let _ = writeln!(out, "# label {label}");
    }
    for p in &cloud.points {
        // Shortest round-trip representation of the f64 value.
        let _ = writeln!(
            out,
            "{} {} {}",
            p[0].to_f64_lossy(),
            p[1].to_f64_lossy(),
            p[2].to_f64_lossy()
        );
    }
    out
}

pub fn read_xyz<T: Scalar>(path: impl AsRef<Path>) -> Result<PointCloud<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

pub fn write_xyz<T: Scalar>(cloud: &PointCloud<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}
