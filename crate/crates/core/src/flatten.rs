//! Flattening of disk-topology 3D pieces into 2D panels.
//!
//! LSCM gives the initial parameterization, then a local/global loop
//! alternates per-triangle Procrustes fits with a sparse least-squares
//! solve of the rigidity energy, under category-specific hard constraints.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math::{
    add2, mat2_mul_vec, norm3, rot2, sub2, sub3, tri_area3, Vec2, Vec3,
};
use crate::mesh::{is_disk_topology, GarmentCategory, TriMesh};
use crate::optim::{solve_normal_cg, SparseMatrix};

pub const CG_TOL: f64 = 1e-10;
pub const DEFAULT_ARAP_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Front,
    Back,
}

/// 2D panel: one flattened coordinate per piece vertex.
#[derive(Debug, Clone)]
pub struct Panel2D {
    pub coords: Vec<Vec2>,
    pub piece_ref: String,
    pub side: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Hard constraints for the global ARAP step.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    /// (vertex, axis, value) single-coordinate pins.
    pub pins: Vec<(usize, Axis, f64)>,
    /// (vertex, target) full-position pins used for sleeve repositioning.
    pub offsets: Vec<(usize, Vec2)>,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.pins.is_empty() && self.offsets.is_empty()
    }

    /// Per-axis pinned values; errors if a vertex is pinned twice on the
    /// same axis with different values.
    fn per_axis(&self) -> Result<[HashMap<usize, f64>; 2]> {
        let mut maps: [HashMap<usize, f64>; 2] = [HashMap::new(), HashMap::new()];
        let mut insert = |axis: usize, v: usize, value: f64| -> Result<()> {
            if let Some(&old) = maps[axis].get(&v) {
                if old != value {
                    return Err(Error::ConstraintConflict(v));
                }
            }
            maps[axis].insert(v, value);
            Ok(())
        };
        for &(v, axis, value) in &self.pins {
            insert(if axis == Axis::X { 0 } else { 1 }, v, value)?;
        }
        for &(v, target) in &self.offsets {
            insert(0, v, target[0])?;
            insert(1, v, target[1])?;
        }
        Ok(maps)
    }
}

/// 2D rigid transform `p -> R p + t` with det(R) = +1.
#[derive(Debug, Clone, Copy)]
pub struct Rigid2 {
    pub angle: f64,
    pub translation: Vec2,
}

impl Rigid2 {
    pub fn apply(&self, p: Vec2) -> Vec2 {
        add2(mat2_mul_vec(rot2(self.angle), p), self.translation)
    }
}

/// Isometric unfold of a 3D triangle into its own plane: p0 at the origin,
/// p1 on the +x axis.
pub fn unfold_triangle(p0: Vec3, p1: Vec3, p2: Vec3) -> Result<[Vec2; 3]> {
    if tri_area3(p0, p1, p2) <= 1e-12 {
        return Err(Error::DegenerateTriangle);
    }
    let e1 = sub3(p1, p0);
    let len1 = norm3(e1);
    let x_axis = crate::math::scale3(e1, 1.0 / len1);
    let e2 = sub3(p2, p0);
    let n = crate::math::cross3(e1, e2);
    let y_axis = crate::math::normalize3(crate::math::cross3(n, e1));
    Ok([
        [0.0, 0.0],
        [len1, 0.0],
        [crate::math::dot3(e2, x_axis), crate::math::dot3(e2, y_axis)],
    ])
}

/// Best rigid 2D transform mapping the isometric unfold of `tri3d` onto
/// `tri2d` in the least-squares sense.
pub fn procrustes_rigid(tri3d: [Vec3; 3], tri2d: [Vec2; 3]) -> Result<Rigid2> {
    let q = unfold_triangle(tri3d[0], tri3d[1], tri3d[2])?;
    procrustes_rigid_2d(q, tri2d)
}

/// Same as [`procrustes_rigid`] but with the source triangle already in 2D.
pub fn procrustes_rigid_2d(q: [Vec2; 3], t: [Vec2; 3]) -> Result<Rigid2> {
    let qc = centroid(&q);
    let tc = centroid(&t);
    // maximize sum t' . R q' over rotations R(theta)
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..3 {
        let qp = sub2(q[i], qc);
        let tp = sub2(t[i], tc);
        a += qp[0] * tp[0] + qp[1] * tp[1];
        b += qp[0] * tp[1] - qp[1] * tp[0];
    }
    let angle = b.atan2(a);
    let rq = mat2_mul_vec(rot2(angle), qc);
    Ok(Rigid2 { angle, translation: sub2(tc, rq) })
}

fn centroid(pts: &[Vec2; 3]) -> Vec2 {
    [
        (pts[0][0] + pts[1][0] + pts[2][0]) / 3.0,
        (pts[0][1] + pts[1][1] + pts[2][1]) / 3.0,
    ]
}

/// Least-squares conformal parameterization of a disk-topology piece.
///
/// The two most distant boundary vertices are pinned at (0,0) and (d,0)
/// with d their Euclidean distance, fixing scale and gauge.
pub fn lscm_init(piece: &TriMesh, piece_ref: &str, side: Side) -> Result<Panel2D> {
    piece.validate()?;
    if piece.faces.len() < 2 || !is_disk_topology(piece) {
        return Err(Error::MissingFeature("disk-topology piece"));
    }
    let boundary = &piece.boundary_loops()[0];
    // most distant boundary pair
    let (mut best, mut pin_a, mut pin_b) = (0.0f64, boundary[0], boundary[0]);
    for (i, &a) in boundary.iter().enumerate() {
        for &b in boundary.iter().skip(i + 1) {
            let d = norm3(sub3(piece.vertices[a], piece.vertices[b]));
            if d > best {
                best = d;
                pin_a = a;
                pin_b = b;
            }
        }
    }
    let n = piece.vertices.len();
    let mut pinned: HashMap<usize, Vec2> = HashMap::new();
    pinned.insert(pin_a, [0.0, 0.0]);
    pinned.insert(pin_b, [best, 0.0]);

    // free-variable numbering: (vertex u, vertex v) for unpinned vertices
    let mut var_of: Vec<Option<usize>> = vec![None; n];
    let mut n_free = 0;
    for v in 0..n {
        if !pinned.contains_key(&v) {
            var_of[v] = Some(n_free);
            n_free += 1;
        }
    }
    let ucol = |v: usize| var_of[v].map(|k| 2 * k);
    let vcol = |v: usize| var_of[v].map(|k| 2 * k + 1);

    let mut triplets = Vec::new();
    let mut rhs = Vec::new();
    let mut row = 0usize;
    for f in &piece.faces {
        let q = unfold_triangle(
            piece.vertices[f[0]],
            piece.vertices[f[1]],
            piece.vertices[f[2]],
        )?;
        let area = crate::math::tri_area2(q[0], q[1], q[2]).abs();
        let inv_2a = 1.0 / (2.0 * area);
        let w = area.sqrt();
        // linear gradient coefficients: du/dx = sum_i u_i * gx_i etc.
        let gx = [
            (q[1][1] - q[2][1]) * inv_2a,
            (q[2][1] - q[0][1]) * inv_2a,
            (q[0][1] - q[1][1]) * inv_2a,
        ];
        let gy = [
            (q[2][0] - q[1][0]) * inv_2a,
            (q[0][0] - q[2][0]) * inv_2a,
            (q[1][0] - q[0][0]) * inv_2a,
        ];
        // Cauchy-Riemann residuals: du/dx - dv/dy and du/dy + dv/dx
        let mut b_real = 0.0;
        let mut b_imag = 0.0;
        for i in 0..3 {
            let v = f[i];
            if let Some(&p) = pinned.get(&v) {
                b_real -= w * (gx[i] * p[0] - gy[i] * p[1]);
                b_imag -= w * (gy[i] * p[0] + gx[i] * p[1]);
            } else {
                triplets.push((row, ucol(v).unwrap(), w * gx[i]));
                triplets.push((row, vcol(v).unwrap(), -w * gy[i]));
                triplets.push((row + 1, ucol(v).unwrap(), w * gy[i]));
                triplets.push((row + 1, vcol(v).unwrap(), w * gx[i]));
            }
        }
        rhs.push(b_real);
        rhs.push(b_imag);
        row += 2;
    }
    let a = SparseMatrix::from_triplets(row, 2 * n_free, &triplets);
    let x = solve_normal_cg(&a, &rhs, CG_TOL).map_err(|e| match e {
        Error::NoConvergence(_) => Error::SingularSystem,
        other => other,
    })?;
    let mut coords = vec![[0.0, 0.0]; n];
    for v in 0..n {
        coords[v] = match pinned.get(&v) {
            Some(&p) => p,
            None => [x[ucol(v).unwrap()], x[vcol(v).unwrap()]],
        };
    }
    if coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(Panel2D { coords, piece_ref: piece_ref.to_string(), side })
}

/// The rigidity energy: for every triangle, the squared difference between
/// each 2D edge and the rigidly transformed unfold of its 3D counterpart.
pub fn rigid_energy(piece: &TriMesh, panel: &Panel2D) -> Result<f64> {
    let mut total = 0.0;
    for f in &piece.faces {
        let tri2d = [panel.coords[f[0]], panel.coords[f[1]], panel.coords[f[2]]];
        let q = unfold_triangle(
            piece.vertices[f[0]],
            piece.vertices[f[1]],
            piece.vertices[f[2]],
        )?;
        let r = procrustes_rigid_2d(q, tri2d)?;
        for k in 0..3 {
            let (i, j) = (k, (k + 1) % 3);
            let target = sub2(r.apply(q[j]), r.apply(q[i]));
            let actual = sub2(tri2d[j], tri2d[i]);
            let d = sub2(actual, target);
            total += d[0] * d[0] + d[1] * d[1];
        }
    }
    Ok(total)
}

/// Local/global ARAP flattening with hard constraints, starting from `init`.
/// The energy is non-increasing across iterations; stops early when the
/// decrease falls below 1e-9.
pub fn arap_flatten(
    piece: &TriMesh,
    init: &Panel2D,
    constraints: &ConstraintSet,
    iters: usize,
) -> Result<Panel2D> {
    assert!(iters >= 1);
    if init.coords.len() != piece.vertices.len() {
        return Err(Error::LengthMismatch(init.coords.len(), piece.vertices.len()));
    }
    let n = piece.vertices.len();
    let unfolds: Vec<[Vec2; 3]> = piece
        .faces
        .iter()
        .map(|f| unfold_triangle(piece.vertices[f[0]], piece.vertices[f[1]], piece.vertices[f[2]]))
        .collect::<Result<_>>()?;

    let mut pinned = constraints.per_axis()?;
    // gauge: anchor one coordinate per unconstrained axis so the
    // difference system is definite
    for (axis, map) in pinned.iter_mut().enumerate() {
        if map.is_empty() {
            map.insert(0, init.coords[0][axis]);
        }
    }

    // per-axis free-variable numbering
    let mut var_of: [Vec<Option<usize>>; 2] = [vec![None; n], vec![None; n]];
    let mut n_free = [0usize; 2];
    for axis in 0..2 {
        for v in 0..n {
            if !pinned[axis].contains_key(&v) {
                var_of[axis][v] = Some(n_free[axis]);
                n_free[axis] += 1;
            }
        }
    }

    let mut coords = init.coords.clone();
    for (v, map) in pinned.iter().enumerate() {
        for (&vertex, &value) in map {
            coords[vertex][v] = value;
        }
    }

    let mut panel = Panel2D { coords, piece_ref: init.piece_ref.clone(), side: init.side };
    let mut prev_energy = f64::INFINITY;
    for _ in 0..iters {
        // local step: ideal rigid transform per triangle
        let mut targets: Vec<[Vec2; 3]> = Vec::with_capacity(piece.faces.len());
        for (f, q) in piece.faces.iter().zip(&unfolds) {
            let tri2d = [panel.coords[f[0]], panel.coords[f[1]], panel.coords[f[2]]];
            let r = procrustes_rigid_2d(*q, tri2d)?;
            targets.push([r.apply(q[0]), r.apply(q[1]), r.apply(q[2])]);
        }
        // global step: one sparse least-squares solve per axis
        for axis in 0..2 {
            let mut triplets = Vec::new();
            let mut rhs = Vec::new();
            let mut row = 0usize;
            for (f, t) in piece.faces.iter().zip(&targets) {
                for k in 0..3 {
                    let (i, j) = (f[k], f[(k + 1) % 3]);
                    let mut b = t[(k + 1) % 3][axis] - t[k][axis];
                    match var_of[axis][j] {
                        Some(col) => triplets.push((row, col, 1.0)),
                        None => b -= pinned[axis][&j],
                    }
                    match var_of[axis][i] {
                        Some(col) => triplets.push((row, col, -1.0)),
                        None => b += pinned[axis][&i],
                    }
                    rhs.push(b);
                    row += 1;
                }
            }
            if n_free[axis] == 0 {
                continue;
            }
            let a = SparseMatrix::from_triplets(row, n_free[axis], &triplets);
            let x = solve_normal_cg(&a, &rhs, CG_TOL).map_err(|e| match e {
                Error::NoConvergence(_) => Error::SingularSystem,
                other => other,
            })?;
            for v in 0..n {
                if let Some(col) = var_of[axis][v] {
                    panel.coords[v][axis] = x[col];
                }
            }
        }
        let energy = rigid_energy(piece, &panel)?;
        debug_assert!(energy <= prev_energy + 1e-9, "rigid energy increased");
        if prev_energy - energy < 1e-9 {
            break;
        }
        prev_energy = energy;
    }
    Ok(panel)
}

/// Boundary tolerance for feature detection (waist / center / sleeve).
const FEATURE_EPS: f64 = 1e-6;

/// Category-specific constraints that make panels consistent across a
/// dataset. Values follow the garment-fabrication conventions: trouser
/// waists at y = 0, shirt openings at x = +/-0.04, sleeves offset by 0.1
/// along the arm axis.
pub fn category_constraints(
    category: GarmentCategory,
    piece: &TriMesh,
    side_tag: &str,
) -> Result<ConstraintSet> {
    let loops = piece.boundary_loops();
    if loops.is_empty() {
        return Err(Error::MissingFeature("boundary"));
    }
    match category {
        GarmentCategory::Skirt => Ok(ConstraintSet::default()),
        GarmentCategory::Trousers => {
            // waist line: the boundary loop with the highest mean height
            let waist = loops
                .iter()
                .max_by(|a, b| {
                    let ma = mean_y(piece, a);
                    let mb = mean_y(piece, b);
                    ma.partial_cmp(&mb).unwrap()
                })
                .unwrap();
            let mut set = ConstraintSet::default();
            for &v in waist {
                set.pins.push((v, Axis::Y, 0.0));
            }
            // center vertex: waist vertex closest to the body midline
            let center = *waist
                .iter()
                .min_by(|&&a, &&b| {
                    piece.vertices[a][0]
                        .abs()
                        .partial_cmp(&piece.vertices[b][0].abs())
                        .unwrap()
                })
                .unwrap();
            set.pins.push((center, Axis::X, 0.0));
            Ok(set)
        }
        GarmentCategory::Shirt | GarmentCategory::ShirtOpen => {
            let left = side_tag.contains("left");
            let right = side_tag.contains("right");
            let mut set = ConstraintSet::default();
            let boundary: Vec<usize> = loops.iter().flatten().cloned().collect();
            if category == GarmentCategory::ShirtOpen && (left || right) {
                // central boundary: vertices on the x = 0 opening cut
                let center_x = if right { 0.04 } else { -0.04 };
                let mut found = false;
                for &v in &boundary {
                    if piece.vertices[v][0].abs() <= FEATURE_EPS {
                        set.pins.push((v, Axis::X, center_x));
                        found = true;
                    }
                }
                if !found {
                    return Err(Error::MissingFeature("central opening boundary"));
                }
            }
            // sleeve upper boundary: boundary vertices in the top 10% of
            // the arm-axis extent on each covered side
            let xs: Vec<f64> = boundary.iter().map(|&v| piece.vertices[v][0]).collect();
            let (xmin, xmax) = xs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
            let extent = xmax - xmin;
            if extent <= FEATURE_EPS {
                return Err(Error::MissingFeature("sleeve boundary"));
            }
            let both = !(left || right);
            if right || both {
                for (&v, &x) in boundary.iter().zip(&xs) {
                    if x >= xmax - 0.1 * extent {
                        let p = piece.vertices[v];
                        set.offsets.push((v, [p[0] + 0.1, p[1]]));
                    }
                }
            }
            if left || both {
                for (&v, &x) in boundary.iter().zip(&xs) {
                    if x <= xmin + 0.1 * extent {
                        let p = piece.vertices[v];
                        set.offsets.push((v, [p[0] - 0.1, p[1]]));
                    }
                }
            }
            Ok(set)
        }
    }
}

fn mean_y(piece: &TriMesh, loop_: &[usize]) -> f64 {
    loop_.iter().map(|&v| piece.vertices[v][1]).sum::<f64>() / loop_.len() as f64
}

/// Concatenate two panels with `right` translated by `gap`. The left
/// panel's vertices keep their indices; the right panel's follow.
pub fn merge_panels(left: &Panel2D, right: &Panel2D, gap: Vec2) -> Panel2D {
    let mut coords = left.coords.clone();
    coords.extend(right.coords.iter().map(|&c| add2(c, gap)));
    Panel2D {
        coords,
        piece_ref: format!("{}+{}", left.piece_ref, right.piece_ref),
        side: left.side,
    }
}

/// PCA-align a panel into the registration frame: centroid at the origin,
/// principal axis along +y, boundary counter-clockwise, then rescale to fit
/// [-1,1]^2 with a 5% margin. Returns the applied scale.
pub fn align_panel(panel: &Panel2D, boundary: &[usize]) -> Result<(Panel2D, f64)> {
    let n = panel.coords.len();
    if n < 3 {
        return Err(Error::DegeneratePanel);
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    for c in &panel.coords {
        cx += c[0];
        cy += c[1];
    }
    cx /= n as f64;
    cy /= n as f64;
    let mut centered: Vec<Vec2> = panel.coords.iter().map(|c| [c[0] - cx, c[1] - cy]).collect();
    // covariance
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for c in &centered {
        sxx += c[0] * c[0];
        sxy += c[0] * c[1];
        syy += c[1] * c[1];
    }
    let trace = sxx + syy;
    if trace <= 0.0 {
        return Err(Error::DegeneratePanel);
    }
    let disc = ((sxx - syy) * 0.5).hypot(sxy);
    let lambda_min = trace * 0.5 - disc;
    if lambda_min <= 1e-12 * trace {
        return Err(Error::DegeneratePanel);
    }
    // rotate the principal eigenvector onto +y
    let principal_angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let rot_angle = std::f64::consts::FRAC_PI_2 - principal_angle;
    let r = rot2(rot_angle);
    for c in &mut centered {
        *c = mat2_mul_vec(r, *c);
    }
    // reflection: make the boundary polygon counter-clockwise
    let mut area2 = 0.0;
    for i in 0..boundary.len() {
        let a = centered[boundary[i]];
        let b = centered[boundary[(i + 1) % boundary.len()]];
        area2 += a[0] * b[1] - a[1] * b[0];
    }
    if area2 < 0.0 {
        for c in &mut centered {
            c[0] = -c[0];
        }
    }
    // axis sign: orient by y-skewness, falling back to the farthest vertex
    let scale0 = (trace / n as f64).sqrt();
    let skew: f64 = centered.iter().map(|c| c[1] * c[1] * c[1]).sum();
    let flip = if skew.abs() > 1e-9 * scale0.powi(3) * n as f64 {
        skew < 0.0
    } else {
        let far = centered
            .iter()
            .max_by(|a, b| a[1].abs().partial_cmp(&b[1].abs()).unwrap())
            .unwrap();
        far[1] < 0.0
    };
    if flip {
        // rotate by pi, which preserves orientation
        for c in &mut centered {
            c[0] = -c[0];
            c[1] = -c[1];
        }
    }
    let m = centered
        .iter()
        .map(|c| c[0].abs().max(c[1].abs()))
        .fold(0.0f64, f64::max);
    if m <= 0.0 {
        return Err(Error::DegeneratePanel);
    }
    let scale = 0.95 / m;
    for c in &mut centered {
        *c = crate::math::scale2(*c, scale);
    }
    Ok((
        Panel2D { coords: centered, piece_ref: panel.piece_ref.clone(), side: panel.side },
        scale,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn planar_piece() -> TriMesh {
        synth::planar_grid(1.0, 0.8, 5, 4)
    }

    #[test]
    fn unfold_preserves_edge_lengths() {
        let p = ([0.1, 0.4, -0.3], [1.2, 0.0, 0.5], [0.3, 1.1, 0.2]);
        let q = unfold_triangle(p.0, p.1, p.2).unwrap();
        assert!((norm3(sub3(p.1, p.0)) - crate::math::norm2(sub2(q[1], q[0]))).abs() < 1e-12);
        assert!((norm3(sub3(p.2, p.1)) - crate::math::norm2(sub2(q[2], q[1]))).abs() < 1e-12);
    }

    #[test]
    fn procrustes_identity_and_rotation() {
        let tri3d: [Vec3; 3] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.2, 0.9, 0.0]];
        let q = unfold_triangle(tri3d[0], tri3d[1], tri3d[2]).unwrap();
        let r = procrustes_rigid(tri3d, q).unwrap();
        assert!(r.angle.abs() < 1e-12);
        assert!(crate::math::norm2(r.translation) < 1e-12);
        // rotate the target by 90 degrees
        let rot: Vec<Vec2> = q.iter().map(|&p| [-p[1], p[0]]).collect();
        let r = procrustes_rigid(tri3d, [rot[0], rot[1], rot[2]]).unwrap();
        assert!((r.angle - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn procrustes_matches_grid_search_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let tri3d: [Vec3; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            if tri_area3(tri3d[0], tri3d[1], tri3d[2]) < 1e-3 {
                continue;
            }
            let tri2d: [Vec2; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            let best = procrustes_rigid(tri3d, tri2d).unwrap();
            let q = unfold_triangle(tri3d[0], tri3d[1], tri3d[2]).unwrap();
            let cost = |angle: f64| {
                // optimal translation given the angle is centroid-matching
                let r = rot2(angle);
                let qr: Vec<Vec2> = q.iter().map(|&p| mat2_mul_vec(r, p)).collect();
                let qc = [(qr[0][0] + qr[1][0] + qr[2][0]) / 3.0, (qr[0][1] + qr[1][1] + qr[2][1]) / 3.0];
                let tc = centroid(&tri2d);
                (0..3)
                    .map(|i| {
                        let d = sub2(sub2(qr[i], qc), sub2(tri2d[i], tc));
                        d[0] * d[0] + d[1] * d[1]
                    })
                    .sum::<f64>()
            };
            // brute-force grid over angles
            let mut best_grid = (f64::INFINITY, 0.0);
            let mut a = -std::f64::consts::PI;
            while a < std::f64::consts::PI {
                let c = cost(a);
                if c < best_grid.0 {
                    best_grid = (c, a);
                }
                a += 0.001;
            }
            let diff = (best.angle - best_grid.1).rem_euclid(2.0 * std::f64::consts::PI);
            let diff = diff.min(2.0 * std::f64::consts::PI - diff);
            assert!(diff < 0.002, "angle off by {diff}");
        }
    }

    #[test]
    fn lscm_on_planar_piece_is_rigid() {
        let piece = planar_piece();
        let panel = lscm_init(&piece, "planar", Side::Front).unwrap();
        // every triangle should map rigidly (up to the global similarity
        // fixed by the two pins): per-triangle Procrustes residual ~ 0
        for f in &piece.faces {
            let tri3d = [piece.vertices[f[0]], piece.vertices[f[1]], piece.vertices[f[2]]];
            let tri2d = [panel.coords[f[0]], panel.coords[f[1]], panel.coords[f[2]]];
            let q = unfold_triangle(tri3d[0], tri3d[1], tri3d[2]).unwrap();
            let r = procrustes_rigid_2d(q, tri2d).unwrap();
            let res: f64 = (0..3)
                .map(|i| {
                    let d = sub2(r.apply(q[i]), tri2d[i]);
                    d[0] * d[0] + d[1] * d[1]
                })
                .sum();
            assert!(res < 1e-6, "residual {res}");
        }
    }

    #[test]
    fn lscm_half_cylinder_angle_distortion_small() {
        let piece = synth::half_cylinder(1.0, 1.0, 16, 8);
        let panel = lscm_init(&piece, "hc", Side::Front).unwrap();
        for f in &piece.faces {
            let a3 = tri_angles3(
                piece.vertices[f[0]],
                piece.vertices[f[1]],
                piece.vertices[f[2]],
            );
            let a2 = tri_angles2(panel.coords[f[0]], panel.coords[f[1]], panel.coords[f[2]]);
            for k in 0..3 {
                assert!((a3[k] - a2[k]).abs() < 1e-3, "angle distortion {}", (a3[k] - a2[k]).abs());
            }
        }
    }

    fn tri_angles3(a: Vec3, b: Vec3, c: Vec3) -> [f64; 3] {
        let la = norm3(sub3(c, b));
        let lb = norm3(sub3(c, a));
        let lc = norm3(sub3(b, a));
        angles_from_lengths(la, lb, lc)
    }

    fn tri_angles2(a: Vec2, b: Vec2, c: Vec2) -> [f64; 3] {
        let la = crate::math::norm2(sub2(c, b));
        let lb = crate::math::norm2(sub2(c, a));
        let lc = crate::math::norm2(sub2(b, a));
        angles_from_lengths(la, lb, lc)
    }

    fn angles_from_lengths(la: f64, lb: f64, lc: f64) -> [f64; 3] {
        let alpha = ((lb * lb + lc * lc - la * la) / (2.0 * lb * lc)).clamp(-1.0, 1.0).acos();
        let beta = ((la * la + lc * lc - lb * lb) / (2.0 * la * lc)).clamp(-1.0, 1.0).acos();
        [alpha, beta, std::f64::consts::PI - alpha - beta]
    }

    #[test]
    fn arap_planar_reaches_zero_energy_in_one_iteration() {
        let piece = planar_piece();
        let init = lscm_init(&piece, "planar", Side::Front).unwrap();
        let panel = arap_flatten(&piece, &init, &ConstraintSet::default(), 1).unwrap();
        let e = rigid_energy(&piece, &panel).unwrap();
        assert!(e < 1e-10, "energy {e}");
    }

    #[test]
    fn arap_half_cylinder_area_preserving() {
        let piece = synth::half_cylinder(1.0, 1.0, 16, 8);
        let init = lscm_init(&piece, "hc", Side::Front).unwrap();
        let panel = arap_flatten(&piece, &init, &ConstraintSet::default(), 50).unwrap();
        for f in &piece.faces {
            let a3 = tri_area3(piece.vertices[f[0]], piece.vertices[f[1]], piece.vertices[f[2]]);
            let a2 = crate::math::tri_area2(panel.coords[f[0]], panel.coords[f[1]], panel.coords[f[2]]).abs();
            let ratio = a2 / a3;
            assert!((0.99..=1.01).contains(&ratio), "area ratio {ratio}");
        }
    }

    #[test]
    fn arap_energy_monotone() {
        let piece = synth::half_cylinder(1.0, 1.0, 12, 6);
        let init = lscm_init(&piece, "hc", Side::Front).unwrap();
        let mut prev = f64::INFINITY;
        let mut panel = init.clone();
        for _ in 0..10 {
            panel = arap_flatten(&piece, &panel, &ConstraintSet::default(), 1).unwrap();
            let e = rigid_energy(&piece, &panel).unwrap();
            assert!(e <= prev + 1e-9, "energy increased: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn arap_hard_pin_respected() {
        let piece = synth::half_cylinder(1.0, 1.0, 10, 5);
        let init = lscm_init(&piece, "hc", Side::Front).unwrap();
        let constraints = ConstraintSet { pins: vec![(0, Axis::Y, 0.0)], offsets: vec![] };
        let panel = arap_flatten(&piece, &init, &constraints, 10).unwrap();
        assert!(panel.coords[0][1].abs() < 1e-9);
    }

    #[test]
    fn conflicting_pins_rejected() {
        let piece = planar_piece();
        let init = lscm_init(&piece, "p", Side::Front).unwrap();
        let constraints = ConstraintSet {
            pins: vec![(0, Axis::Y, 0.0), (0, Axis::Y, 1.0)],
            offsets: vec![],
        };
        assert!(matches!(
            arap_flatten(&piece, &init, &constraints, 1),
            Err(Error::ConstraintConflict(0))
        ));
    }

    #[test]
    fn flatten_is_rigid_motion_invariant() {
        let piece = synth::half_cylinder(1.0, 1.0, 10, 5);
        let init = lscm_init(&piece, "hc", Side::Front).unwrap();
        let flat_a = arap_flatten(&piece, &init, &ConstraintSet::default(), 30).unwrap();

        let rot = crate::math::rot3_axis_angle([0.4, 1.1, -0.2]);
        let mut rotated = piece.clone();
        for v in &mut rotated.vertices {
            *v = crate::math::add3(crate::math::mat3_mul_vec(&rot, *v), [0.3, -0.7, 0.2]);
        }
        let init_b = lscm_init(&rotated, "hc", Side::Front).unwrap();
        let flat_b = arap_flatten(&rotated, &init_b, &ConstraintSet::default(), 30).unwrap();

        // compare per-triangle: both flattenings must be rigid motions of
        // each other
        for f in &piece.faces {
            let ta = [flat_a.coords[f[0]], flat_a.coords[f[1]], flat_a.coords[f[2]]];
            let tb = [flat_b.coords[f[0]], flat_b.coords[f[1]], flat_b.coords[f[2]]];
            let r = procrustes_rigid_2d(ta, tb);
            let r = match r {
                Ok(r) => r,
                Err(_) => continue,
            };
            let res: f64 = (0..3)
                .map(|i| {
                    let d = sub2(r.apply(ta[i]), tb[i]);
                    d[0] * d[0] + d[1] * d[1]
                })
                .sum();
            // reflections also count as rigid here; accept either chirality
            let refl: f64 = {
                let tam: [Vec2; 3] = [
                    [-ta[0][0], ta[0][1]],
                    [-ta[1][0], ta[1][1]],
                    [-ta[2][0], ta[2][1]],
                ];
                match procrustes_rigid_2d(tam, tb) {
                    Ok(r) => (0..3)
                        .map(|i| {
                            let d = sub2(r.apply(tam[i]), tb[i]);
                            d[0] * d[0] + d[1] * d[1]
                        })
                        .sum(),
                    Err(_) => f64::INFINITY,
                }
            };
            assert!(res.min(refl) < 1e-6, "not rigid: {res} / {refl}");
        }
    }

    #[test]
    fn skirt_constraints_empty() {
        let piece = synth::half_cylinder(0.4, 0.6, 10, 5);
        let set = category_constraints(GarmentCategory::Skirt, &piece, "front").unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn trousers_waist_pins_are_y_zero() {
        let trousers = synth::toy_trousers(16, 5, 0.05);
        let pieces = crate::mesh::apply_category_cuts(&trousers, GarmentCategory::Trousers).unwrap();
        let set = category_constraints(GarmentCategory::Trousers, &pieces[0], "front-left").unwrap();
        let y_pins: Vec<_> = set.pins.iter().filter(|p| p.1 == Axis::Y).collect();
        assert!(!y_pins.is_empty());
        assert!(y_pins.iter().all(|p| p.2 == 0.0));
        let x_pins: Vec<_> = set.pins.iter().filter(|p| p.1 == Axis::X).collect();
        assert_eq!(x_pins.len(), 1);
        assert_eq!(x_pins[0].2, 0.0);
    }

    #[test]
    fn shirt_open_center_pins() {
        let shirt = synth::tube(0.18, 0.18, 0.5, 16, 6, [0.0, 0.0, 0.0]);
        let pieces = crate::mesh::apply_category_cuts(&shirt, GarmentCategory::ShirtOpen).unwrap();
        // identify the front-right piece: front (z > -0.03) and x > 0
        let mut found = false;
        for piece in &pieces {
            let cx: f64 = piece.vertices.iter().map(|v| v[0]).sum::<f64>() / piece.vertices.len() as f64;
            let cz: f64 = piece.vertices.iter().map(|v| v[2]).sum::<f64>() / piece.vertices.len() as f64;
            if cz > -0.03 && cx > 0.0 {
                let set =
                    category_constraints(GarmentCategory::ShirtOpen, piece, "front-right").unwrap();
                let center: Vec<_> = set.pins.iter().filter(|p| p.1 == Axis::X).collect();
                assert!(!center.is_empty());
                assert!(center.iter().all(|p| p.2 == 0.04));
                // sleeve offsets shift by +0.1 on the right
                assert!(!set.offsets.is_empty());
                for &(v, target) in &set.offsets {
                    let p = piece.vertices[v];
                    assert_eq!(target[0], p[0] + 0.1);
                    assert_eq!(target[1], p[1]);
                }
                found = true;
            }
        }
        assert!(found, "front-right piece not found");
    }

    #[test]
    fn merge_translates_right_panel() {
        let a = Panel2D {
            coords: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            piece_ref: "l".into(),
            side: Side::Front,
        };
        let b = a.clone();
        let merged = merge_panels(&a, &b, [0.5, 0.0]);
        assert_eq!(merged.coords.len(), 6);
        // right centroid shifted by exactly the gap
        let c_left: f64 = merged.coords[..3].iter().map(|c| c[0]).sum::<f64>() / 3.0;
        let c_right: f64 = merged.coords[3..].iter().map(|c| c[0]).sum::<f64>() / 3.0;
        assert!((c_right - c_left - 0.5).abs() < 1e-12);
    }

    fn aligned_test_panel() -> (Panel2D, Vec<usize>) {
        // irregular quad with connectivity so the boundary is well defined;
        // the y warp keeps the skewness decisively nonzero
        let piece = synth::planar_grid(0.6, 1.4, 4, 7);
        let panel = Panel2D {
            coords: piece.vertices.iter().map(|v| [v[0] + 0.1 * v[1], v[1] + 0.3 * v[1] * v[1]]).collect(),
            piece_ref: "q".into(),
            side: Side::Front,
        };
        let boundary = piece.boundary_loops()[0].clone();
        (panel, boundary)
    }

    #[test]
    fn align_panel_idempotent_and_rotation_invariant() {
        let (panel, boundary) = aligned_test_panel();
        let (aligned, _) = align_panel(&panel, &boundary).unwrap();
        let (again, scale2) = align_panel(&aligned, &boundary).unwrap();
        assert!((scale2 - 1.0).abs() < 1e-9);
        for (a, b) in aligned.coords.iter().zip(&again.coords) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
        // rotating the input panel by 30 degrees must not change the output
        let r = rot2(30f64.to_radians());
        let rotated = Panel2D {
            coords: panel.coords.iter().map(|&c| mat2_mul_vec(r, c)).collect(),
            piece_ref: panel.piece_ref.clone(),
            side: panel.side,
        };
        let (aligned_rot, _) = align_panel(&rotated, &boundary).unwrap();
        for (a, b) in aligned.coords.iter().zip(&aligned_rot.coords) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn align_panel_diagonalizes_second_moment() {
        let (panel, boundary) = aligned_test_panel();
        let (aligned, _) = align_panel(&panel, &boundary).unwrap();
        let mut sxy = 0.0;
        for c in &aligned.coords {
            sxy += c[0] * c[1];
        }
        assert!(sxy.abs() < 1e-9, "cross moment {sxy}");
        // fits the registration square with margin
        for c in &aligned.coords {
            assert!(c[0].abs() <= 0.95 + 1e-12 && c[1].abs() <= 0.95 + 1e-12);
        }
    }

    #[test]
    fn align_panel_rejects_collinear() {
        let panel = Panel2D {
            coords: vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]],
            piece_ref: "line".into(),
            side: Side::Front,
        };
        assert!(matches!(align_panel(&panel, &[0, 1, 2]), Err(Error::DegeneratePanel)));
    }
}
