//! Small fixed-size vector and matrix helpers used throughout the crate.
//!
//! Points are plain arrays (`[f64; 2]`, `[f64; 3]`) so meshes stay simple
//! indexed buffers.

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];

/// Standard normal draw via Box-Muller.
pub fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn normalize3(a: Vec3) -> Vec3 {
    let n = norm3(a);
    if n == 0.0 {
        [0.0, 0.0, 0.0]
    } else {
        scale3(a, 1.0 / n)
    }
}

#[inline]
pub fn lerp3(a: Vec3, b: Vec3, t: f64) -> Vec3 {
    add3(scale3(a, 1.0 - t), scale3(b, t))
}

#[inline]
pub fn add2(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub2(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale2(a: Vec2, s: f64) -> Vec2 {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot2(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// z component of the 2D cross product.
#[inline]
pub fn cross2(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm2(a: Vec2) -> f64 {
    dot2(a, a).sqrt()
}

#[inline]
pub fn lerp2(a: Vec2, b: Vec2, t: f64) -> Vec2 {
    add2(scale2(a, 1.0 - t), scale2(b, t))
}

/// Area of the 3D triangle (p0, p1, p2).
#[inline]
pub fn tri_area3(p0: Vec3, p1: Vec3, p2: Vec3) -> f64 {
    0.5 * norm3(cross3(sub3(p1, p0), sub3(p2, p0)))
}

/// Signed area of the 2D triangle (p0, p1, p2); positive if counter-clockwise.
#[inline]
pub fn tri_area2(p0: Vec2, p1: Vec2, p2: Vec2) -> f64 {
    0.5 * cross2(sub2(p1, p0), sub2(p2, p0))
}

/// Column-major 2x2 rotation by `angle`.
#[inline]
pub fn rot2(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = angle.sin_cos();
    [[c, s], [-s, c]]
}

#[inline]
pub fn mat2_mul_vec(m: [[f64; 2]; 2], v: Vec2) -> Vec2 {
    [
        m[0][0] * v[0] + m[1][0] * v[1],
        m[0][1] * v[0] + m[1][1] * v[1],
    ]
}

/// 3x3 rotation matrix (row-major) from an axis-angle vector.
pub fn rot3_axis_angle(axis_angle: Vec3) -> [[f64; 3]; 3] {
    let angle = norm3(axis_angle);
    if angle < 1e-18 {
        return [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    }
    let [x, y, z] = scale3(axis_angle, 1.0 / angle);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

#[inline]
pub fn mat3_mul_vec(m: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

#[inline]
pub fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

#[inline]
pub fn mat3_transpose(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid3 {
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

impl Rigid3 {
    pub fn identity() -> Self {
        Rigid3 {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        add3(mat3_mul_vec(&self.rotation, p), self.translation)
    }

    pub fn compose(&self, other: &Rigid3) -> Rigid3 {
        Rigid3 {
            rotation: mat3_mul(&self.rotation, &other.rotation),
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> Rigid3 {
        let rt = mat3_transpose(&self.rotation);
        Rigid3 {
            rotation: rt,
            translation: scale3(mat3_mul_vec(&rt, self.translation), -1.0),
        }
    }
}

/// Closest point on triangle (a, b, c) to point p (Ericson, Real-Time
/// Collision Detection).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = sub3(b, a);
    let ac = sub3(c, a);
    let ap = sub3(p, a);
    let d1 = dot3(ab, ap);
    let d2 = dot3(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub3(p, b);
    let d3 = dot3(ab, bp);
    let d4 = dot3(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return add3(a, scale3(ab, t));
    }
    let cp = sub3(p, c);
    let d5 = dot3(ab, cp);
    let d6 = dot3(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return add3(a, scale3(ac, t));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add3(b, scale3(sub3(c, b), t));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add3(a, add3(scale3(ab, v), scale3(ac, w)))
}
