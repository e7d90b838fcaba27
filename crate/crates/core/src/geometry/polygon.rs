use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Minimum distance between any vertex and the unit-square border.
pub const MARGIN: f64 = 0.05;
/// Circumradius of the unperturbed regular polygon.
pub const BASE_RADIUS: f64 = 0.3;
pub const MAX_JITTER: f64 = 0.3;
const MAX_ATTEMPTS: usize = 100;

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Pentagon,
    Hexagon,
    Octagon,
}

impl Family {
    pub fn sides(self) -> usize {
        match self {
            Family::Pentagon => 5,
            Family::Hexagon => 6,
            Family::Octagon => 8,
        }
    }

    pub fn from_sides(n: usize) -> Option<Self> {
        match n {
            5 => Some(Family::Pentagon),
            6 => Some(Family::Hexagon),
            8 => Some(Family::Octagon),
            _ => None,
        }
    }
}

/// Simple polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
    family: Option<Family>,
}

impl Polygon {
    /// Validates vertex count, simplicity and counter-clockwise orientation.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Config(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("polygon has non-finite vertex".into()));
        }
        let p = Self {
            family: Family::from_sides(vertices.len()),
            vertices,
        };
        if p.signed_area() <= 0.0 {
            return Err(Error::Config(
                "polygon must be counter-clockwise with positive area".into(),
            ));
        }
        if !p.is_simple() {
            return Err(Error::Config("polygon self-intersects".into()));
        }
        Ok(p)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn family(&self) -> Option<Family> {
        self.family
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area, positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        0.5 * self
            .edges()
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| dist(a, b)).sum()
    }

    /// Smallest distance from a vertex to the border of the unit square.
    pub fn margin(&self) -> f64 {
        self.vertices
            .iter()
            .flat_map(|v| [v[0], v[1], 1.0 - v[0], 1.0 - v[1]])
            .fold(f64::INFINITY, f64::min)
    }

    /// No two non-adjacent edges touch and no adjacent edges overlap.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if adjacent {
                    // shared vertex; reject only folding back onto the other edge
                    let shared = if j == i + 1 { b } else { a };
                    let (p, q) = if j == i + 1 { (a, d) } else { (b, c) };
                    if cross(shared, p, q).abs() < 1e-15 && dot(sub(p, shared), sub(q, shared)) > 0.0
                    {
                        return false;
                    }
                } else if segments_touch(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Even-odd ray casting (ray towards +x).
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Exact Euclidean distance from `p` to the boundary.
    pub fn boundary_distance(&self, p: Point) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// z-component of (b − o) × (c − o).
fn cross(o: Point, b: Point, c: Point) -> f64 {
    (b[0] - o[0]) * (c[1] - o[1]) - (b[1] - o[1]) * (c[0] - o[0])
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test, including touching and collinear overlap.
pub fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Perturbed regular polygon centred at (0.5, 0.5).
///
/// Vertex `k` of the base polygon sits at angle `π/2 + 2πk/n` and radius
/// [`BASE_RADIUS`]; each radius is scaled by `1 + U(±jitter)` and each angle
/// shifted by `U(±jitter·π/n)`. Candidates violating simplicity or the
/// [`MARGIN`] are redrawn from the same stream.
pub fn sample_polygon(family: Family, jitter: f64, seed: u64) -> Result<Polygon> {
    if !(0.0..=MAX_JITTER).contains(&jitter) {
        return Err(Error::Config(format!(
            "jitter {jitter} outside [0, {MAX_JITTER}]"
        )));
    }
    let n = family.sides();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let vertices: Vec<Point> = (0..n)
            .map(|k| {
                let (dr, da) = if jitter > 0.0 {
                    (
                        rng.gen_range(-jitter..=jitter),
                        rng.gen_range(-jitter..=jitter) * PI / n as f64,
                    )
                } else {
                    (0.0, 0.0)
                };
                let r = BASE_RADIUS * (1.0 + dr);
                let theta = FRAC_PI_2 + 2.0 * PI * k as f64 / n as f64 + da;
                [0.5 + r * theta.cos(), 0.5 + r * theta.sin()]
            })
            .collect();
        if let Ok(mut p) = Polygon::new(vertices) {
            if p.margin() >= MARGIN {
                p.family = Some(family);
                return Ok(p);
            }
        }
    }
    Err(Error::Generation(format!(
        "no valid {family:?} after {MAX_ATTEMPTS} attempts at jitter {jitter}, seed {seed}"
    )))
}
