//! Image-fitting losses and two-stage optimization: z-buffer rasterization,
//! 2D Chamfer distance, normal cosine loss, cloth energies (stretch, bend,
//! gravity, collision) with analytic gradients, and vertex refinement.

use crate::body::TriBvh;
use crate::error::{Error, Result};
use crate::grid::{GridMap, MapSemantics};
use crate::math::{
    add3, cross2, cross3, dot3, mat3_mul_vec, mat3_transpose, norm3, scale3, sub2, sub3,
    tri_area3, Rigid3, Vec2, Vec3,
};
use crate::mesh::TriMesh;
use crate::optim::{adam_step, AdamState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraMode {
    Orthographic,
    /// Focal length in normalized units.
    Pinhole(f64),
}

/// Camera with a world-to-camera rigid transform; the camera looks along +z
/// and the normalized image square [-1,1]^2 maps onto W x H pixels.
#[derive(Debug, Clone)]
pub struct Camera {
    pub mode: CameraMode,
    pub extrinsic: Rigid3,
    pub height: usize,
    pub width: usize,
}

impl Camera {
    pub fn front_orthographic(height: usize, width: usize, center: Vec3, zoom: f64) -> Camera {
        // looks along +z after mapping world z to camera depth
        let rotation = [[zoom, 0.0, 0.0], [0.0, zoom, 0.0], [0.0, 0.0, -1.0]];
        let translation = [
            -zoom * center[0],
            -zoom * center[1],
            center[2] + 2.0, // keep depths positive
        ];
        Camera {
            mode: CameraMode::Orthographic,
            extrinsic: Rigid3 { rotation, translation },
            height,
            width,
        }
    }

    /// Pixel coordinates ([col, row]) and depth of a world point.
    pub fn project(&self, p: Vec3) -> (Vec2, f64) {
        let q = self.extrinsic.apply(p);
        let (x, y) = match self.mode {
            CameraMode::Orthographic => (q[0], q[1]),
            CameraMode::Pinhole(f) => (f * q[0] / q[2], f * q[1] / q[2]),
        };
        (
            [
                (x + 1.0) * 0.5 * (self.width - 1) as f64,
                (y + 1.0) * 0.5 * (self.height - 1) as f64,
            ],
            q[2],
        )
    }

    /// Pulls a pixel-space gradient back to the world point.
    fn project_grad(&self, p: Vec3, dpx: Vec2) -> Vec3 {
        let q = self.extrinsic.apply(p);
        let sx = 0.5 * (self.width - 1) as f64;
        let sy = 0.5 * (self.height - 1) as f64;
        let (dx, dy) = (dpx[0] * sx, dpx[1] * sy);
        let dq = match self.mode {
            CameraMode::Orthographic => [dx, dy, 0.0],
            CameraMode::Pinhole(f) => [
                f / q[2] * dx,
                f / q[2] * dy,
                -f * (q[0] * dx + q[1] * dy) / (q[2] * q[2]),
            ],
        };
        mat3_mul_vec(&mat3_transpose(&self.extrinsic.rotation), dq)
    }

    /// World direction rotated into the camera frame.
    pub fn to_camera_dir(&self, d: Vec3) -> Vec3 {
        mat3_mul_vec(&self.extrinsic.rotation, d)
    }
}

/// Output of z-buffer rasterization.
#[derive(Debug, Clone)]
pub struct RasterResult {
    pub visible: Vec<usize>,
    /// Projected face centers ([col, row]), aligned with `visible`.
    pub centers: Vec<Vec2>,
    pub height: usize,
    pub width: usize,
    /// Winning face per pixel, -1 where empty (row-major).
    pub face_id: Vec<i64>,
    /// Depth of the winning fragment (f64::INFINITY where empty).
    pub depth: Vec<f64>,
}

fn barycentric(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> Option<[f64; 3]> {
    let denom = cross2(sub2(b, a), sub2(c, a));
    if denom.abs() < 1e-12 {
        return None;
    }
    let w0 = cross2(sub2(b, p), sub2(c, p)) / denom;
    let w1 = cross2(sub2(c, p), sub2(a, p)) / denom;
    let w2 = 1.0 - w0 - w1;
    Some([w0, w1, w2])
}

/// Rasterize at the camera resolution. A face is visible iff it wins the
/// depth test on at least one covered pixel; depth ties break toward the
/// lower face id.
pub fn rasterize(mesh: &TriMesh, camera: &Camera) -> RasterResult {
    let (h, w) = (camera.height, camera.width);
    let mut face_id = vec![-1i64; h * w];
    let mut depth = vec![f64::INFINITY; h * w];
    let projected: Vec<(Vec2, f64)> =
        mesh.vertices.iter().map(|&v| camera.project(v)).collect();
    for (f, face) in mesh.faces.iter().enumerate() {
        let (pa, da) = projected[face[0]];
        let (pb, db) = projected[face[1]];
        let (pc, dc) = projected[face[2]];
        if da <= 0.0 || db <= 0.0 || dc <= 0.0 {
            continue; // behind the camera
        }
        let min_x = pa[0].min(pb[0]).min(pc[0]).floor().max(0.0) as usize;
        let max_x = pa[0].max(pb[0]).max(pc[0]).ceil().min((w - 1) as f64) as usize;
        let min_y = pa[1].min(pb[1]).min(pc[1]).floor().max(0.0) as usize;
        let max_y = pa[1].max(pb[1]).max(pc[1]).ceil().min((h - 1) as f64) as usize;
        for i in min_y..=max_y {
            for j in min_x..=max_x {
                let p = [j as f64, i as f64];
                let Some(bary) = barycentric(p, pa, pb, pc) else { continue };
                if bary.iter().any(|&t| t < -1e-9) {
                    continue;
                }
                let d = bary[0] * da + bary[1] * db + bary[2] * dc;
                let k = i * w + j;
                let closer = d < depth[k] - 1e-12;
                let tie = (d - depth[k]).abs() <= 1e-12 && (f as i64) < face_id[k];
                if closer || tie {
                    depth[k] = d;
                    face_id[k] = f as i64;
                }
            }
        }
    }
    let mut seen = vec![false; mesh.faces.len()];
    for &f in face_id.iter() {
        if f >= 0 {
            seen[f as usize] = true;
        }
    }
    let visible: Vec<usize> = (0..mesh.faces.len()).filter(|&f| seen[f]).collect();
    let centers = visible
        .iter()
        .map(|&f| camera.project(mesh.face_centroid(f)).0)
        .collect();
    RasterResult { visible, centers, height: h, width: w, face_id, depth }
}

/// Per-pixel images rendered from a mesh: camera-frame unit normals,
/// foreground mask and interpolated world positions.
pub fn render_images(mesh: &TriMesh, camera: &Camera) -> (GridMap, GridMap, GridMap) {
    let raster = rasterize(mesh, camera);
    let (h, w) = (camera.height, camera.width);
    let mut normals = GridMap::zeros(h, w, 3, MapSemantics::Normal);
    let mut mask = GridMap::zeros(h, w, 1, MapSemantics::Mask);
    let mut positions = GridMap::zeros(h, w, 3, MapSemantics::Position);
    let projected: Vec<Vec2> =
        mesh.vertices.iter().map(|&v| camera.project(v).0).collect();
    for i in 0..h {
        for j in 0..w {
            let f = raster.face_id[i * w + j];
            if f < 0 {
                continue;
            }
            let face = mesh.faces[f as usize];
            let n = camera.to_camera_dir(mesh.face_normal(f as usize));
            for c in 0..3 {
                normals.set(i, j, c, n[c] as f32);
            }
            mask.set(i, j, 0, 1.0);
            let bary = barycentric(
                [j as f64, i as f64],
                projected[face[0]],
                projected[face[1]],
                projected[face[2]],
            )
            .unwrap_or([1.0 / 3.0; 3]);
            for c in 0..3 {
                let v = bary[0] * mesh.vertices[face[0]][c]
                    + bary[1] * mesh.vertices[face[1]][c]
                    + bary[2] * mesh.vertices[face[2]][c];
                positions.set(i, j, c, v as f32);
            }
        }
    }
    (normals, mask, positions)
}

// ---------------------------------------------------------------------------
// 2D Chamfer

/// Uniform-grid accelerator for exact nearest-neighbor queries in 2D.
pub struct PointGrid {
    pts: Vec<Vec2>,
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    bins: Vec<Vec<usize>>,
}

impl PointGrid {
    pub fn build(pts: &[Vec2]) -> PointGrid {
        assert!(!pts.is_empty());
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let span = ((hi[0] - lo[0]).max(hi[1] - lo[1])).max(1e-9);
        let cell = span / (pts.len() as f64).sqrt().ceil().max(1.0);
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1);
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1);
        let mut bins = vec![Vec::new(); nx * ny];
        for (i, p) in pts.iter().enumerate() {
            let cx = (((p[0] - lo[0]) / cell) as usize).min(nx - 1);
            let cy = (((p[1] - lo[1]) / cell) as usize).min(ny - 1);
            bins[cy * nx + cx].push(i);
        }
        PointGrid { pts: pts.to_vec(), origin: lo, cell, nx, ny, bins }
    }

    /// Index and squared distance of the nearest stored point.
    pub fn nearest(&self, q: Vec2) -> (usize, f64) {
        let cx = (((q[0] - self.origin[0]) / self.cell).floor().max(0.0) as usize)
            .min(self.nx - 1);
        let cy = (((q[1] - self.origin[1]) / self.cell).floor().max(0.0) as usize)
            .min(self.ny - 1);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = self.nx.max(self.ny);
        for r in 0..=max_ring {
            // conservative bound: cells in ring r are at least (r-1) cells
            // from the query cell
            if best.1.is_finite() {
                let ring_min = (r as f64 - 1.0).max(0.0) * self.cell
                    - 2.0 * self.cell; // slack for query outside the grid
                if ring_min > 0.0 && ring_min * ring_min > best.1 {
                    break;
                }
            }
            let r = r as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue;
                    }
                    let x = cx as isize + dx;
                    let y = cy as isize + dy;
                    if x < 0 || y < 0 || x >= self.nx as isize || y >= self.ny as isize {
                        continue;
                    }
                    for &i in &self.bins[y as usize * self.nx + x as usize] {
                        let d = sub2(self.pts[i], q);
                        let d2 = d[0] * d[0] + d[1] * d[1];
                        if d2 < best.1 || (d2 == best.1 && i < best.0) {
                            best = (i, d2);
                        }
                    }
                }
            }
        }
        best
    }
}

/// Symmetric mean of squared nearest-neighbor distances.
pub fn chamfer2d(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let ga = PointGrid::build(a);
    let gb = PointGrid::build(b);
    let ab: f64 = a.iter().map(|&p| gb.nearest(p).1).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|&p| ga.nearest(p).1).sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

/// Brute-force O(n^2) reference used as a test oracle.
pub fn chamfer2d_brute(a: &[Vec2], b: &[Vec2]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let min2 = |p: Vec2, set: &[Vec2]| {
        set.iter()
            .map(|&q| {
                let d = sub2(q, p);
                d[0] * d[0] + d[1] * d[1]
            })
            .fold(f64::INFINITY, f64::min)
    };
    let ab: f64 = a.iter().map(|&p| min2(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|&p| min2(p, a)).sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

// ---------------------------------------------------------------------------
// normal loss

/// Bilinear sample of one channel at pixel coordinates ([col, row]) with
/// its spatial derivative; clamps at the border.
fn sample_pixel(map: &GridMap, px: Vec2, c: usize) -> (f64, Vec2) {
    let col = px[0].clamp(0.0, (map.width - 1) as f64);
    let row = px[1].clamp(0.0, (map.height - 1) as f64);
    let j0 = (col.floor() as usize).min(map.width.saturating_sub(2));
    let i0 = (row.floor() as usize).min(map.height.saturating_sub(2));
    let i1 = (i0 + 1).min(map.height - 1);
    let j1 = (j0 + 1).min(map.width - 1);
    let fi = row - i0 as f64;
    let fj = col - j0 as f64;
    let g = |i: usize, j: usize| map.get(i, j, c) as f64;
    let v = (1.0 - fi) * ((1.0 - fj) * g(i0, j0) + fj * g(i0, j1))
        + fi * ((1.0 - fj) * g(i1, j0) + fj * g(i1, j1));
    let dcol = (1.0 - fi) * (g(i0, j1) - g(i0, j0)) + fi * (g(i1, j1) - g(i1, j0));
    let drow = (1.0 - fj) * (g(i1, j0) - g(i0, j0)) + fj * (g(i1, j1) - g(i0, j1));
    let clamped_c = px[0] < 0.0 || px[0] > (map.width - 1) as f64;
    let clamped_r = px[1] < 0.0 || px[1] > (map.height - 1) as f64;
    (v, [if clamped_c { 0.0 } else { dcol }, if clamped_r { 0.0 } else { drow }])
}

/// Sum of 1 - cos between visible-face normals (camera frame) and the
/// normal image sampled at the projected face centers; background pixels
/// (zero normals) are skipped.
pub fn normal_loss(mesh: &TriMesh, raster: &RasterResult, normal_image: &GridMap, camera: &Camera) -> f64 {
    normal_loss_grad(mesh, &raster.visible, normal_image, camera).0
}

/// Loss and its vertex gradient with the visible set frozen.
pub fn normal_loss_grad(
    mesh: &TriMesh,
    visible: &[usize],
    normal_image: &GridMap,
    camera: &Camera,
) -> (f64, Vec<Vec3>) {
    assert_eq!(normal_image.channels, 3);
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 3]; mesh.vertices.len()];
    for &f in visible {
        let [ia, ib, ic] = mesh.faces[f];
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        let centroid = scale3(add3(add3(a, b), c), 1.0 / 3.0);
        let (px, _) = camera.project(centroid);
        let mut m = [0.0; 3];
        let mut dm_dpx = [[0.0; 2]; 3];
        for ch in 0..3 {
            let (v, d) = sample_pixel(normal_image, px, ch);
            m[ch] = v;
            dm_dpx[ch] = d;
        }
        let m_norm = norm3(m);
        if m_norm < 0.5 {
            continue; // background
        }
        let mh = scale3(m, 1.0 / m_norm);
        let raw_n = cross3(sub3(b, a), sub3(c, a));
        let n_len = norm3(raw_n);
        if n_len < 1e-15 {
            continue;
        }
        let nh = scale3(raw_n, 1.0 / n_len);
        let n_cam = camera.to_camera_dir(nh);
        let cos = dot3(n_cam, mh);
        loss += 1.0 - cos;

        // gradient through the face normal
        let d_ncam = scale3(mh, -1.0);
        let d_nh = mat3_mul_vec(&mat3_transpose(&camera.extrinsic.rotation), d_ncam);
        let d_raw = scale3(sub3(d_nh, scale3(nh, dot3(nh, d_nh))), 1.0 / n_len);
        let du = cross3(sub3(c, a), d_raw); // raw_n = (b-a) x (c-a)
        let dv = cross3(d_raw, sub3(b, a));
        grad[ib] = add3(grad[ib], du);
        grad[ic] = add3(grad[ic], dv);
        grad[ia] = sub3(grad[ia], add3(du, dv));

        // gradient through the sampled image normal and the sample point
        let d_mh = scale3(n_cam, -1.0);
        let d_m = scale3(sub3(d_mh, scale3(mh, dot3(mh, d_mh))), 1.0 / m_norm);
        let mut dpx = [0.0; 2];
        for ch in 0..3 {
            dpx[0] += d_m[ch] * dm_dpx[ch][0];
            dpx[1] += d_m[ch] * dm_dpx[ch][1];
        }
        let dc = camera.project_grad(centroid, dpx);
        let third = scale3(dc, 1.0 / 3.0);
        for &vi in &[ia, ib, ic] {
            grad[vi] = add3(grad[vi], third);
        }
    }
    (loss, grad)
}

// ---------------------------------------------------------------------------
// physics energies

#[derive(Debug, Clone)]
pub struct PhysicsParams {
    pub stretch_stiffness: f64,
    pub bend_stiffness: f64,
    pub area_density: f64,
    pub gravity: f64,
    pub collision_margin: f64,
    pub collision_stiffness: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            stretch_stiffness: 100.0,
            bend_stiffness: 0.1,
            area_density: 0.15,
            gravity: 9.81,
            collision_margin: 0.002,
            collision_stiffness: 1e4,
        }
    }
}

/// SVK membrane energy of one face given the inverse rest edge matrix.
fn strain_face(
    x0: Vec3,
    x1: Vec3,
    x2: Vec3,
    inv: &[[f64; 2]; 2],
    area: f64,
    ks: f64,
) -> (f64, Vec3, Vec3) {
    let e1 = sub3(x1, x0);
    let e2 = sub3(x2, x0);
    // deformation gradient F = Ds * Dm^-1, columns f1, f2 in R^3
    let f1 = add3(scale3(e1, inv[0][0]), scale3(e2, inv[1][0]));
    let f2 = add3(scale3(e1, inv[0][1]), scale3(e2, inv[1][1]));
    // Green strain E = (F^T F - I) / 2
    let c11 = dot3(f1, f1);
    let c12 = dot3(f1, f2);
    let c22 = dot3(f2, f2);
    let (s11, s12, s22) = (0.5 * (c11 - 1.0), 0.5 * c12, 0.5 * (c22 - 1.0));
    let energy = ks * area * (s11 * s11 + s22 * s22 + 2.0 * s12 * s12);
    // dPsi/dF = 2 ks A F E
    let coeff = 2.0 * ks * area;
    let g1 = scale3(add3(scale3(f1, s11), scale3(f2, s12)), coeff);
    let g2 = scale3(add3(scale3(f1, s12), scale3(f2, s22)), coeff);
    // chain back through Dm^-1 to the edge vectors
    let de1 = add3(scale3(g1, inv[0][0]), scale3(g2, inv[0][1]));
    let de2 = add3(scale3(g1, inv[1][0]), scale3(g2, inv[1][1]));
    (energy, de1, de2)
}

fn invert_rest(dm: &[[f64; 2]; 2], f: usize) -> Result<([[f64; 2]; 2], f64)> {
    let det = dm[0][0] * dm[1][1] - dm[0][1] * dm[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::DegenerateRestTriangle(f));
    }
    let inv = [[dm[1][1] / det, -dm[0][1] / det], [-dm[1][0] / det, dm[0][0] / det]];
    Ok((inv, 0.5 * det.abs()))
}

/// Saint-Venant-Kirchhoff membrane energy of the 2D-rest -> 3D map,
/// k_s * A_rest * ||E||_F^2 per face with Green strain E.
pub fn strain_energy(
    mesh: &TriMesh,
    rest_uv: &[Vec2],
    params: &PhysicsParams,
) -> Result<(f64, Vec<Vec3>)> {
    if rest_uv.len() != mesh.vertices.len() {
        return Err(Error::LengthMismatch(mesh.vertices.len(), rest_uv.len()));
    }
    let ks = params.stretch_stiffness;
    let mut energy = 0.0;
    let mut grad = vec![[0.0; 3]; mesh.vertices.len()];
    for (f, &[ia, ib, ic]) in mesh.faces.iter().enumerate() {
        let (u0, u1, u2) = (rest_uv[ia], rest_uv[ib], rest_uv[ic]);
        let dm = [[u1[0] - u0[0], u2[0] - u0[0]], [u1[1] - u0[1], u2[1] - u0[1]]];
        let (inv, area) = invert_rest(&dm, f)?;
        let (e, de1, de2) = strain_face(
            mesh.vertices[ia],
            mesh.vertices[ib],
            mesh.vertices[ic],
            &inv,
            area,
            ks,
        );
        energy += e;
        grad[ib] = add3(grad[ib], de1);
        grad[ic] = add3(grad[ic], de2);
        grad[ia] = sub3(grad[ia], add3(de1, de2));
    }
    Ok((energy, grad))
}

/// Same membrane energy with the rest shape taken face-by-face from a 3D
/// rest mesh (each rest triangle laid out isometrically in 2D).
pub fn strain_energy_rest3d(
    mesh: &TriMesh,
    rest: &TriMesh,
    params: &PhysicsParams,
) -> Result<(f64, Vec<Vec3>)> {
    if rest.vertices.len() != mesh.vertices.len() || rest.faces != mesh.faces {
        return Err(Error::TopologyMismatch);
    }
    let ks = params.stretch_stiffness;
    let mut energy = 0.0;
    let mut grad = vec![[0.0; 3]; mesh.vertices.len()];
    for (f, &[ia, ib, ic]) in mesh.faces.iter().enumerate() {
        let e1 = sub3(rest.vertices[ib], rest.vertices[ia]);
        let e2 = sub3(rest.vertices[ic], rest.vertices[ia]);
        let l1 = norm3(e1);
        if l1 < 1e-12 {
            return Err(Error::DegenerateRestTriangle(f));
        }
        // local isometric frame: e1 along +u
        let dm = [[l1, dot3(e1, e2) / l1], [0.0, norm3(cross3(e1, e2)) / l1]];
        let (inv, area) = invert_rest(&dm, f)?;
        let (e, de1, de2) = strain_face(
            mesh.vertices[ia],
            mesh.vertices[ib],
            mesh.vertices[ic],
            &inv,
            area,
            ks,
        );
        energy += e;
        grad[ib] = add3(grad[ib], de1);
        grad[ic] = add3(grad[ic], de2);
        grad[ia] = sub3(grad[ia], add3(de1, de2));
    }
    Ok((energy, grad))
}

/// Interior-edge hinge data captured from a rest mesh.
#[derive(Debug, Clone)]
pub struct BendRest {
    /// (edge v0, edge v1, opposite vertex in face A, opposite in face B).
    pub hinges: Vec<[usize; 4]>,
    pub rest_angle: Vec<f64>,
    pub rest_length: Vec<f64>,
}

/// Signed dihedral angle at a hinge and its gradient w.r.t. the four
/// vertices (edge x0-x1, opposite x2 and x3).
fn dihedral_grad(x0: Vec3, x1: Vec3, x2: Vec3, x3: Vec3) -> Option<(f64, [Vec3; 4])> {
    let e0 = sub3(x1, x0);
    let e0_len = norm3(e0);
    if e0_len < 1e-12 {
        return None;
    }
    let na_raw = cross3(sub3(x1, x0), sub3(x2, x0));
    let nb_raw = cross3(sub3(x3, x0), sub3(x1, x0));
    let (la, lb) = (norm3(na_raw), norm3(nb_raw));
    if la < 1e-15 || lb < 1e-15 {
        return None;
    }
    let a = scale3(na_raw, 1.0 / la);
    let b = scale3(nb_raw, 1.0 / lb);
    let eh = scale3(e0, 1.0 / e0_len);
    let s = dot3(cross3(a, b), eh);
    let c = dot3(a, b);
    let theta = s.atan2(c);
    let denom = s * s + c * c;
    // d theta = (c ds - s dc) / (s^2 + c^2)
    let ds_da = cross3(b, eh);
    let ds_db = cross3(eh, a);
    let ds_de = cross3(a, b);
    let da = scale3(sub3(scale3(ds_da, c), scale3(b, s)), 1.0 / denom);
    let db = scale3(sub3(scale3(ds_db, c), scale3(a, s)), 1.0 / denom);
    let de = scale3(ds_de, c / denom);
    // back through the normalizations
    let unnorm = |nh: Vec3, len: f64, g: Vec3| scale3(sub3(g, scale3(nh, dot3(nh, g))), 1.0 / len);
    let d_na = unnorm(a, la, da);
    let d_nb = unnorm(b, lb, db);
    let d_e0 = unnorm(eh, e0_len, de);
    // na = (x1-x0) x (x2-x0): dL/du = cross(v, g), dL/dv = cross(g, u)
    let mut g = [[0.0; 3]; 4];
    {
        let u = sub3(x1, x0);
        let v = sub3(x2, x0);
        let du = cross3(v, d_na);
        let dv = cross3(d_na, u);
        g[1] = add3(g[1], du);
        g[2] = add3(g[2], dv);
        g[0] = sub3(g[0], add3(du, dv));
    }
    {
        let u = sub3(x3, x0);
        let v = sub3(x1, x0);
        let du = cross3(v, d_nb);
        let dv = cross3(d_nb, u);
        g[3] = add3(g[3], du);
        g[1] = add3(g[1], dv);
        g[0] = sub3(g[0], add3(du, dv));
    }
    g[1] = add3(g[1], d_e0);
    g[0] = sub3(g[0], d_e0);
    Some((theta, g))
}

/// Collect interior-edge hinges with their rest dihedral angles and edge
/// lengths.
pub fn bend_rest(mesh: &TriMesh) -> BendRest {
    use std::collections::HashMap;
    let mut half: HashMap<(usize, usize), usize> = HashMap::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            half.insert((face[k], face[(k + 1) % 3]), f);
        }
    }
    let mut hinges = Vec::new();
    let mut rest_angle = Vec::new();
    let mut rest_length = Vec::new();
    for (&(v0, v1), &fa) in half.iter() {
        if v0 > v1 {
            continue; // one record per undirected edge
        }
        let Some(&fb) = half.get(&(v1, v0)) else { continue };
        let opp = |f: usize| {
            mesh.faces[f]
                .iter()
                .copied()
                .find(|&v| v != v0 && v != v1)
                .unwrap()
        };
        let (x2, x3) = (opp(fa), opp(fb));
        if let Some((theta, _)) = dihedral_grad(
            mesh.vertices[v0],
            mesh.vertices[v1],
            mesh.vertices[x2],
            mesh.vertices[x3],
        ) {
            hinges.push([v0, v1, x2, x3]);
            rest_angle.push(theta);
            rest_length.push(norm3(sub3(mesh.vertices[v1], mesh.vertices[v0])));
        }
    }
    // deterministic order regardless of hash iteration
    let mut order: Vec<usize> = (0..hinges.len()).collect();
    order.sort_by_key(|&i| hinges[i]);
    BendRest {
        hinges: order.iter().map(|&i| hinges[i]).collect(),
        rest_angle: order.iter().map(|&i| rest_angle[i]).collect(),
        rest_length: order.iter().map(|&i| rest_length[i]).collect(),
    }
}

/// Hinge bending energy sum k_b * |e|_rest * (theta - theta_rest)^2.
pub fn bend_energy(mesh: &TriMesh, rest: &BendRest, params: &PhysicsParams) -> (f64, Vec<Vec3>) {
    let kb = params.bend_stiffness;
    let mut energy = 0.0;
    let mut grad = vec![[0.0; 3]; mesh.vertices.len()];
    for (h, &[v0, v1, v2, v3]) in rest.hinges.iter().enumerate() {
        let Some((theta, g)) = dihedral_grad(
            mesh.vertices[v0],
            mesh.vertices[v1],
            mesh.vertices[v2],
            mesh.vertices[v3],
        ) else {
            continue;
        };
        let mut delta = theta - rest.rest_angle[h];
        // wrap to (-pi, pi] so the energy is continuous across the cut
        if delta > std::f64::consts::PI {
            delta -= 2.0 * std::f64::consts::PI;
        } else if delta < -std::f64::consts::PI {
            delta += 2.0 * std::f64::consts::PI;
        }
        let w = kb * rest.rest_length[h];
        energy += w * delta * delta;
        let coeff = 2.0 * w * delta;
        for (k, &vi) in [v0, v1, v2, v3].iter().enumerate() {
            grad[vi] = add3(grad[vi], scale3(g[k], coeff));
        }
    }
    (energy, grad)
}

/// Gravitational potential sum rho * A_f * g * h_f (face-center height
/// along +y).
pub fn gravity_energy(mesh: &TriMesh, params: &PhysicsParams) -> (f64, Vec<Vec3>) {
    let rg = params.area_density * params.gravity;
    let mut energy = 0.0;
    let mut grad = vec![[0.0; 3]; mesh.vertices.len()];
    for &[ia, ib, ic] in &mesh.faces {
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        let area = tri_area3(a, b, c);
        let h = (a[1] + b[1] + c[1]) / 3.0;
        energy += rg * area * h;
        // d(area)/dx via the raw cross product
        let u = sub3(b, a);
        let v = sub3(c, a);
        let raw = cross3(u, v);
        let len = norm3(raw);
        if len > 1e-15 {
            let g_raw = scale3(raw, rg * h * 0.5 / len);
            let du = cross3(v, g_raw);
            let dv = cross3(g_raw, u);
            grad[ib] = add3(grad[ib], du);
            grad[ic] = add3(grad[ic], dv);
            grad[ia] = sub3(grad[ia], add3(du, dv));
        }
        let dh = rg * area / 3.0;
        for &vi in &[ia, ib, ic] {
            grad[vi][1] += dh;
        }
    }
    (energy, grad)
}

/// Cubic penalty on body penetration: k_c * sum max(0, eps_c - s_b)^3 over
/// garment vertices, with s_b the signed body distance.
pub fn collision_energy(mesh: &TriMesh, body: &TriBvh, params: &PhysicsParams) -> (f64, Vec<Vec3>) {
    let kc = params.collision_stiffness;
    let eps = params.collision_margin;
    let mut energy = 0.0;
    let mut grad = vec![[0.0; 3]; mesh.vertices.len()];
    for (i, &p) in mesh.vertices.iter().enumerate() {
        let s = body.signed_distance(p);
        let pen = eps - s;
        if pen <= 0.0 {
            continue;
        }
        energy += kc * pen * pen * pen;
        let (d, q, _) = body.closest_point(p);
        if d < 1e-12 {
            continue; // gradient direction undefined exactly on the surface
        }
        // grad s = outward unit direction at p
        let dir = scale3(sub3(p, q), if s < 0.0 { -1.0 / d } else { 1.0 / d });
        grad[i] = add3(grad[i], scale3(dir, -3.0 * kc * pen * pen));
    }
    (energy, grad)
}

// ---------------------------------------------------------------------------
// total loss and refinement

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub chamfer: f64,
    pub normal: f64,
    pub physics: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { chamfer: 0.2, normal: 1.0, physics: 1.0 }
    }
}

/// Image observations the fit is driven by: foreground pixels ([col, row])
/// and the normal image.
#[derive(Debug, Clone)]
pub struct FitTargets {
    pub seg_pixels: Vec<Vec2>,
    pub normal_image: GridMap,
}

/// Rest-state data needed by the physics terms.
#[derive(Debug, Clone)]
pub struct RestState {
    pub rest_uv: Vec<Vec2>,
    pub bend: BendRest,
}

impl RestState {
    /// Capture the rest state of a mesh whose `uv` holds the 2D pattern.
    pub fn capture(mesh: &TriMesh) -> Result<RestState> {
        let rest_uv = mesh.uv.clone().ok_or(Error::MissingFeature("rest uv"))?;
        Ok(RestState { rest_uv, bend: bend_rest(mesh) })
    }
}

fn chamfer_grad_to_vertices(
    mesh: &TriMesh,
    visible: &[usize],
    centers: &[Vec2],
    targets: &[Vec2],
    camera: &Camera,
    grad: &mut [Vec3],
    scale: f64,
) -> Result<f64> {
    if centers.is_empty() || targets.is_empty() {
        return Err(Error::EmptySet);
    }
    let gc = PointGrid::build(centers);
    let gt = PointGrid::build(targets);
    let mut dcenters = vec![[0.0; 2]; centers.len()];
    let mut loss = 0.0;
    let inv_a = 1.0 / centers.len() as f64;
    for (i, &p) in centers.iter().enumerate() {
        let (j, d2) = gt.nearest(p);
        loss += d2 * inv_a;
        let d = sub2(p, targets[j]);
        dcenters[i][0] += 2.0 * d[0] * inv_a;
        dcenters[i][1] += 2.0 * d[1] * inv_a;
    }
    let inv_b = 1.0 / targets.len() as f64;
    for &q in targets.iter() {
        let (i, d2) = gc.nearest(q);
        loss += d2 * inv_b;
        let d = sub2(centers[i], q);
        dcenters[i][0] += 2.0 * d[0] * inv_b;
        dcenters[i][1] += 2.0 * d[1] * inv_b;
    }
    for (k, &f) in visible.iter().enumerate() {
        let centroid = mesh.face_centroid(f);
        let dpx = [dcenters[k][0] * scale, dcenters[k][1] * scale];
        let dc = camera.project_grad(centroid, dpx);
        let third = scale3(dc, 1.0 / 3.0);
        for &vi in &mesh.faces[f] {
            grad[vi] = add3(grad[vi], third);
        }
    }
    Ok(loss)
}

/// Eq.-10-style objective: weighted Chamfer + normal + physics, with the
/// gradient taken at frozen visibility.
pub fn total_loss(
    mesh: &TriMesh,
    rest: &RestState,
    body: Option<&TriBvh>,
    targets: &FitTargets,
    camera: &Camera,
    weights: &LossWeights,
    params: &PhysicsParams,
) -> Result<(f64, Vec<Vec3>)> {
    let raster = rasterize(mesh, camera);
    total_loss_with_raster(mesh, rest, body, targets, camera, weights, params, &raster)
}

pub fn total_loss_with_raster(
    mesh: &TriMesh,
    rest: &RestState,
    body: Option<&TriBvh>,
    targets: &FitTargets,
    camera: &Camera,
    weights: &LossWeights,
    params: &PhysicsParams,
    raster: &RasterResult,
) -> Result<(f64, Vec<Vec3>)> {
    let n = mesh.vertices.len();
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 3]; n];
    if weights.chamfer != 0.0 {
        let centers: Vec<Vec2> = raster
            .visible
            .iter()
            .map(|&f| camera.project(mesh.face_centroid(f)).0)
            .collect();
        let c = chamfer_grad_to_vertices(
            mesh,
            &raster.visible,
            &centers,
            &targets.seg_pixels,
            camera,
            &mut grad,
            weights.chamfer,
        )?;
        loss += weights.chamfer * c;
    }
    if weights.normal != 0.0 {
        let (l, g) = normal_loss_grad(mesh, &raster.visible, &targets.normal_image, camera);
        loss += weights.normal * l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a = add3(*a, scale3(*b, weights.normal));
        }
    }
    if weights.physics != 0.0 {
        let (ls, gs) = strain_energy(mesh, &rest.rest_uv, params)?;
        let (lb, gb) = bend_energy(mesh, &rest.bend, params);
        let (lg, gg) = gravity_energy(mesh, params);
        let mut l = ls + lb + lg;
        let mut parts = vec![gs, gb, gg];
        if let Some(bvh) = body {
            let (lc, gc) = collision_energy(mesh, bvh, params);
            l += lc;
            parts.push(gc);
        }
        loss += weights.physics * l;
        for part in parts {
            for (a, b) in grad.iter_mut().zip(&part) {
                *a = add3(*a, scale3(*b, weights.physics));
            }
        }
    }
    Ok((loss, grad))
}

/// Everything a fitting stage needs to evaluate the objective.
#[derive(Debug, Clone)]
pub struct FitScene {
    pub targets: FitTargets,
    pub camera: Camera,
    pub rest: RestState,
    pub body: Option<TriMesh>,
    pub weights: LossWeights,
    pub physics: PhysicsParams,
}

/// Stage-2 refinement: Adam over the vertex coordinates, visibility
/// recomputed (but non-differentiable) per iteration; returns the
/// best-loss iterate. Face connectivity is untouched.
pub fn stage2_refine(mesh: &TriMesh, scene: &FitScene, iters: usize, lr: f64) -> Result<TriMesh> {
    let bvh = scene.body.as_ref().map(TriBvh::build);
    let mut current = mesh.clone();
    let mut x: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
    let mut adam = AdamState::new(x.len(), lr);
    let mut best: Option<(f64, Vec<Vec3>)> = None;
    for _ in 0..iters {
        let (loss, grad) = total_loss(
            &current,
            &scene.rest,
            bvh.as_ref(),
            &scene.targets,
            &scene.camera,
            &scene.weights,
            &scene.physics,
        )?;
        if best.as_ref().map_or(true, |(b, _)| loss < *b) {
            best = Some((loss, current.vertices.clone()));
        }
        let flat: Vec<f64> = grad.iter().flatten().copied().collect();
        adam_step(&mut x, &flat, &mut adam)?;
        for (v, chunk) in current.vertices.iter_mut().zip(x.chunks_exact(3)) {
            *v = [chunk[0], chunk[1], chunk[2]];
        }
    }
    if let Some((best_loss, vertices)) = best {
        // keep the best iterate unless the final one improved on it
        let (final_loss, _) = total_loss(
            &current,
            &scene.rest,
            bvh.as_ref(),
            &scene.targets,
            &scene.camera,
            &scene.weights,
            &scene.physics,
        )?;
        if best_loss <= final_loss {
            current.vertices = vertices;
        }
    }
    Ok(current)
}


/// Symmetric mean point-to-point distance (not squared) between two 3D
/// point sets; the usual mesh-recovery metric, in world units.
pub fn chamfer3d(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let one_way = |p: &[Vec3], q: &[Vec3]| -> f64 {
        let total: f64 = p
            .iter()
            .map(|&x| {
                q.iter().map(|&y| norm3(sub3(x, y))).fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / p.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

/// Inputs stage 1 optimizes over: fixed mesh connectivity recovered from
/// the occupancy maps, with per-vertex pattern coordinates and base
/// (skinned) positions; the network supplies the displacements.
#[derive(Debug, Clone)]
pub struct Stage1Garment {
    pub faces: Vec<[usize; 3]>,
    /// Pattern coordinate and panel side per vertex.
    pub pattern: Vec<(Vec2, crate::flatten::Side)>,
    /// X_u per vertex; gradients do not flow through these.
    pub base: Vec<Vec3>,
    pub obs: crate::deform::ObservationImages,
}

impl Stage1Garment {
    /// Current mesh under the network: base + predicted displacement.
    pub fn mesh(&self, net: &crate::deform::DeformNet, camera: &Camera) -> Result<TriMesh> {
        let pyr = crate::deform::FeaturePyramid::build(&self.obs, net.levels);
        let mut vertices = Vec::with_capacity(self.base.len());
        for ((uv, side), &xu) in self.pattern.iter().zip(&self.base) {
            let (_, d) = crate::deform::predict(net, *uv, *side, xu, &pyr, camera)?;
            vertices.push(add3(xu, d));
        }
        Ok(TriMesh { vertices, faces: self.faces.clone(), uv: None })
    }
}

/// Stage-1 fitting: Adam over the network parameters with the mesh rebuilt
/// from the network every iteration; per-iteration visibility is frozen
/// and gradients flow through the vertex positions only. The best-loss
/// parameters are kept. Returns the per-iteration losses.
pub fn stage1_fit(
    net: &mut crate::deform::DeformNet,
    garment: &Stage1Garment,
    scene: &FitScene,
    iters: usize,
    lr: f64,
) -> Result<Vec<f64>> {
    let pyr = crate::deform::FeaturePyramid::build(&garment.obs, net.levels);
    let bvh = scene.body.as_ref().map(TriBvh::build);
    let mut x = net.params();
    let mut adam = AdamState::new(x.len(), lr);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut losses = Vec::with_capacity(iters);
    for _ in 0..iters {
        let mut vertices = Vec::with_capacity(garment.base.len());
        let mut tapes = Vec::with_capacity(garment.base.len());
        for ((uv, side), &xu) in garment.pattern.iter().zip(&garment.base) {
            let (px, _) = scene.camera.project(xu);
            let feats = crate::deform::sample_features(&pyr, px);
            let (out, tape) = net.forward_raw(*uv, *side, xu, &feats)?;
            vertices.push(add3(xu, [out[1], out[2], out[3]]));
            tapes.push(tape);
        }
        let mesh = TriMesh { vertices, faces: garment.faces.clone(), uv: None };
        let (loss, grad) = total_loss(
            &mesh,
            &scene.rest,
            bvh.as_ref(),
            &scene.targets,
            &scene.camera,
            &scene.weights,
            &scene.physics,
        )?;
        losses.push(loss);
        if best.as_ref().map_or(true, |(b, _)| loss < *b) {
            best = Some((loss, x.clone()));
        }
        let mut dparams = vec![0.0; x.len()];
        for (tape, g) in tapes.into_iter().zip(&grad) {
            let dy = [0.0, g[0], g[1], g[2]];
            let dp = net.backward_params(tape, &dy);
            for (a, b) in dparams.iter_mut().zip(&dp) {
                *a += b;
            }
        }
        adam_step(&mut x, &dparams, &mut adam)?;
        net.set_params(&x);
    }
    if let Some((_, params)) = best {
        net.set_params(&params);
    }
    Ok(losses)
}
