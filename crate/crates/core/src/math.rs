//! Small vector helpers shared by the geometry modules.

use nalgebra::{Vector2, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Unit vector orthogonal to `v` (which need not be normalized).
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let a = v.abs();
    let axis = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    v.cross(&axis)
        .try_normalize(f64::EPSILON)
        .unwrap_or_else(Vec3::y)
}

/// Rodrigues rotation of `v` about the unit `axis`.
pub fn rotate_about_axis(v: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// Applies the minimal rotation taking unit vector `from` onto unit vector `to`.
///
/// For antiparallel inputs the rotation axis is ambiguous; we rotate by pi
/// about an axis perpendicular to `from`, preferring one orthogonal to `v`.
pub fn minimal_rotation(v: &Vec3, from: &Vec3, to: &Vec3) -> Vec3 {
    let axis = from.cross(to);
    let sin = axis.norm();
    let cos = from.dot(to).clamp(-1.0, 1.0);
    if sin < 1e-15 {
        if cos > 0.0 {
            return *v;
        }
        let mut k = v.cross(from);
        if k.norm() < 1e-12 {
            k = any_perpendicular(from);
        }
        return rotate_about_axis(v, &k.normalize(), std::f64::consts::PI);
    }
    rotate_about_axis(v, &(axis / sin), sin.atan2(cos))
}

/// Which feature of a triangle realizes the closest point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangleFeature {
    Face,
    /// Edge `i` joins corner `i` and corner `(i + 1) % 3`.
    Edge(usize),
    Vertex(usize),
}

/// Result of a point-to-triangle projection.
#[derive(Debug, Clone, Copy)]
pub struct TriangleProjection {
    pub point: Vec3,
    /// Barycentric weights of corners a, b, c.
    pub weights: [f64; 3],
    pub feature: TriangleFeature,
}

/// Closest point on triangle (a, b, c) to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> TriangleProjection {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return vertex_hit(*a, 0);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return vertex_hit(*b, 1);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return TriangleProjection {
            point: a + ab * t,
            weights: [1.0 - t, t, 0.0],
            feature: TriangleFeature::Edge(0),
        };
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return vertex_hit(*c, 2);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return TriangleProjection {
            point: a + ac * t,
            weights: [1.0 - t, 0.0, t],
            feature: TriangleFeature::Edge(2),
        };
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return TriangleProjection {
            point: b + (c - b) * t,
            weights: [0.0, 1.0 - t, t],
            feature: TriangleFeature::Edge(1),
        };
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    TriangleProjection {
        point: a + ab * v + ac * w,
        weights: [1.0 - v - w, v, w],
        feature: TriangleFeature::Face,
    }
}

fn vertex_hit(point: Vec3, i: usize) -> TriangleProjection {
    let mut weights = [0.0; 3];
    weights[i] = 1.0;
    TriangleProjection {
        point,
        weights,
        feature: TriangleFeature::Vertex(i),
    }
}

/// Unnormalized face normal `(b - a) x (c - a)`.
pub fn triangle_cross(a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    (b - a).cross(&(c - a))
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * triangle_cross(a, b, c).norm()
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn inflate(&self, r: f64) -> Aabb {
        Aabb {
            min: self.min.add_scalar(-r),
            max: self.max.add_scalar(r),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vec3::zeros());
        d.norm_squared()
    }

    /// Slab test; returns the entry parameter if the ray hits within `[0, t_max]`.
    pub fn ray_entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0_f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // f64::max/min drop the NaN produced by 0 * inf (origin on a slab plane).
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}
