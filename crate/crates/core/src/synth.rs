//! Procedural toy garments, a capsule body and drape scenes, so every stage
//! of the pipeline runs without external datasets.

use rand::Rng;

use crate::isp::{PanelShape, TrainGarment};
use crate::math::{Vec2, Vec3};
use crate::mesh::TriMesh;

/// Open tube around the y axis: radius interpolates from `r_bottom` to
/// `r_top` over `height`, starting at `center` (the bottom-ring center).
/// `n_rings` counts vertex rings, so the tube has `n_rings - 1` quad rows.
pub fn tube(
    r_bottom: f64,
    r_top: f64,
    height: f64,
    n_around: usize,
    n_rings: usize,
    center: Vec3,
) -> TriMesh {
    assert!(n_around >= 3 && n_rings >= 2);
    let mut vertices = Vec::with_capacity(n_around * n_rings);
    for j in 0..n_rings {
        let t = j as f64 / (n_rings - 1) as f64;
        let r = r_bottom * (1.0 - t) + r_top * t;
        let y = center[1] + height * t;
        for k in 0..n_around {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n_around as f64;
            vertices.push([center[0] + r * theta.cos(), y, center[2] + r * theta.sin()]);
        }
    }
    let mut faces = Vec::with_capacity(2 * n_around * (n_rings - 1));
    for j in 0..n_rings - 1 {
        for k in 0..n_around {
            let a = j * n_around + k;
            let b = j * n_around + (k + 1) % n_around;
            let c = (j + 1) * n_around + (k + 1) % n_around;
            let d = (j + 1) * n_around + k;
            faces.push([a, d, c]);
            faces.push([a, c, b]);
        }
    }
    TriMesh::new(vertices, faces)
}

/// Toy trousers: a waist tube branching into two leg tubes joined along a
/// crotch seam at x = 0. `n_around` is the waist ring resolution (must be a
/// multiple of 4), `n_rings` the ring count per section, `z_center` the z
/// offset of the whole garment.
pub fn toy_trousers(n_around: usize, n_rings: usize, z_center: f64) -> TriMesh {
    assert!(n_around >= 8 && n_around % 4 == 0 && n_rings >= 2);
    let n2 = n_around;
    let waist_r = 0.3;
    let leg_r = 0.14;
    let leg_dx = 0.15;
    let (y_top, y_crotch, y_bottom) = (0.8, 0.5, 0.0);

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    // waist tube, ring 0 at the crotch (so the bottom ring is shared with
    // the legs), built by the same quad scheme as `tube`
    for j in 0..n_rings {
        let t = j as f64 / (n_rings - 1) as f64;
        let y = y_crotch + (y_top - y_crotch) * t;
        for k in 0..n2 {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n2 as f64;
            vertices.push([waist_r * theta.cos(), y, z_center + waist_r * theta.sin()]);
        }
    }
    for j in 0..n_rings - 1 {
        for k in 0..n2 {
            let a = j * n2 + k;
            let b = j * n2 + (k + 1) % n2;
            let c = (j + 1) * n2 + (k + 1) % n2;
            let d = (j + 1) * n2 + k;
            faces.push([a, d, c]);
            faces.push([a, c, b]);
        }
    }

    // crotch seam: interior points on x = 0 from front (z max) to back
    let front = n2 / 4; // theta = 90 deg -> (0, ., z_center + R)
    let back = 3 * n2 / 4;
    let m_b = n2 / 2 - 1;
    let bridge_start = vertices.len();
    for i in 1..=m_b {
        let t = i as f64 / (m_b + 1) as f64;
        let z = z_center + waist_r * (1.0 - 2.0 * t);
        vertices.push([0.0, y_crotch, z]);
    }
    let bridge = |i: usize| bridge_start + i - 1; // i in 1..=m_b

    // top loops of the two legs, both traversed with increasing angle
    // around their own axis so the quad scheme below stays outward
    let mut right_loop: Vec<usize> = Vec::new();
    for i in 0..=n2 / 2 {
        right_loop.push((back + i) % n2); // arc back -> front through x > 0
    }
    for i in 1..=m_b {
        right_loop.push(bridge(i)); // bridge front -> back
    }
    let mut left_loop: Vec<usize> = Vec::new();
    for i in 0..=n2 / 2 {
        left_loop.push((front + i) % n2); // arc front -> back through x < 0
    }
    for i in (1..=m_b).rev() {
        left_loop.push(bridge(i)); // bridge back -> front
    }

    for (loop_idx, center_x) in [(&right_loop, leg_dx), (&left_loop, -leg_dx)] {
        let l = loop_idx.len();
        // unwrapped angle and radial distance of each loop vertex around
        // the leg axis
        let mut angles = Vec::with_capacity(l);
        let mut radii = Vec::with_capacity(l);
        let mut prev = 0.0f64;
        for (i, &v) in loop_idx.iter().enumerate() {
            let dx = vertices[v][0] - center_x;
            let dz = vertices[v][2] - z_center;
            let mut a = dz.atan2(dx);
            if i > 0 {
                while a < prev {
                    a += 2.0 * std::f64::consts::PI;
                }
            }
            prev = a;
            angles.push(a);
            radii.push((dx * dx + dz * dz).sqrt());
        }
        // rings below the loop, shrinking to a circular leg
        let mut rings: Vec<Vec<usize>> = vec![loop_idx.clone()];
        for j in 1..n_rings {
            let t = j as f64 / (n_rings - 1) as f64;
            let y = y_crotch + (y_bottom - y_crotch) * t;
            let mut ring = Vec::with_capacity(l);
            for i in 0..l {
                let r = radii[i] * (1.0 - t) + leg_r * t;
                ring.push(vertices.len());
                vertices.push([
                    center_x + r * angles[i].cos(),
                    y,
                    z_center + r * angles[i].sin(),
                ]);
            }
            rings.push(ring);
        }
        for j in 0..n_rings - 1 {
            let (upper, lower) = (&rings[j], &rings[j + 1]);
            for i in 0..l {
                let u0 = upper[i];
                let u1 = upper[(i + 1) % l];
                let w0 = lower[i];
                let w1 = lower[(i + 1) % l];
                faces.push([w0, u0, u1]);
                faces.push([w0, u1, w1]);
            }
        }
    }

    TriMesh::new(vertices, faces)
}

/// Half cylinder (radius 1) around the y axis, open along the seam; a
/// developable test surface that flattens isometrically.
pub fn half_cylinder(radius: f64, height: f64, n_around: usize, n_rings: usize) -> TriMesh {
    assert!(n_around >= 2 && n_rings >= 2);
    let mut vertices = Vec::new();
    for j in 0..n_rings {
        let y = height * j as f64 / (n_rings - 1) as f64;
        for k in 0..=n_around {
            let theta = std::f64::consts::PI * k as f64 / n_around as f64;
            vertices.push([radius * theta.cos(), y, radius * theta.sin()]);
        }
    }
    let w = n_around + 1;
    let mut faces = Vec::new();
    for j in 0..n_rings - 1 {
        for k in 0..n_around {
            let a = j * w + k;
            let b = j * w + k + 1;
            let c = (j + 1) * w + k + 1;
            let d = (j + 1) * w + k;
            faces.push([a, d, c]);
            faces.push([a, c, b]);
        }
    }
    TriMesh::new(vertices, faces)
}

/// Flat rectangular grid in the z = 0 plane.
pub fn planar_grid(width: f64, height: f64, nx: usize, ny: usize) -> TriMesh {
    assert!(nx >= 2 && ny >= 2);
    let mut vertices = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([
                width * i as f64 / (nx - 1) as f64,
                height * j as f64 / (ny - 1) as f64,
                0.0,
            ]);
        }
    }
    let mut faces = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let b = j * nx + i + 1;
            let c = (j + 1) * nx + i + 1;
            let d = (j + 1) * nx + i;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriMesh::new(vertices, faces)
}

fn circle_boundary(r: f64, n: usize) -> Vec<Vec2> {
    (0..n)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            [r * t.cos(), r * t.sin()]
        })
        .collect()
}

/// Pattern-training toy: circular panels of radius `r` bulging into
/// paraboloid domes (front +z, back -z), boundary split into three stitch
/// arcs. `n_surface` (u, 3D) samples are drawn per side.
pub fn dome_garment<R: Rng>(r: f64, bulge: f64, n_surface: usize, rng: &mut R) -> TrainGarment {
    let n_edges = 64;
    let boundary = circle_boundary(r, n_edges);
    let edge_labels: Vec<usize> = (0..n_edges).map(|i| i * 3 / n_edges).collect();
    let panel = PanelShape { boundary: boundary.clone(), edge_labels };
    let height = |u: Vec2| bulge * (r * r - u[0] * u[0] - u[1] * u[1]);
    let sample = |sign: f64, rng: &mut R| {
        let mut out = Vec::with_capacity(n_surface);
        while out.len() < n_surface {
            let u = [rng.gen_range(-r..r), rng.gen_range(-r..r)];
            if u[0] * u[0] + u[1] * u[1] <= r * r {
                out.push((u, [u[0], u[1], sign * height(u)]));
            }
        }
        out
    };
    let surface_front = sample(1.0, rng);
    let surface_back = sample(-1.0, rng);
    // boundary points coincide in 3D, so seams pair each point with itself
    let seams = circle_boundary(r, 16).into_iter().map(|p| (p, p)).collect();
    TrainGarment { front: panel.clone(), back: panel, surface_front, surface_back, seams }
}

/// Pattern-training toy shaped like a skirt: rectangular panels
/// `[-w,w] x [-h,h]` wrapping onto a half-cylinder of the given radius.
/// Side seams carry labels 0 (left) and 1 (right); waist and hem are free
/// (label 2).
pub fn skirt_garment<R: Rng>(
    w: f64,
    h: f64,
    radius: f64,
    n_surface: usize,
    rng: &mut R,
) -> TrainGarment {
    // rectangle boundary subdivided so the exact SDF stays polygonal while
    // labels resolve per edge
    let per_side = 8;
    let mut boundary: Vec<Vec2> = Vec::new();
    let mut edge_labels: Vec<usize> = Vec::new();
    let corners = [[-w, -h], [w, -h], [w, h], [-w, h]];
    let side_label = [2usize, 1, 2, 0]; // bottom, right, top, left
    for k in 0..4 {
        let a = corners[k];
        let b = corners[(k + 1) % 4];
        for i in 0..per_side {
            let t = i as f64 / per_side as f64;
            boundary.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            edge_labels.push(side_label[k]);
        }
    }
    let panel = PanelShape { boundary, edge_labels };
    let angle = std::f64::consts::FRAC_PI_2;
    let pos = |u: Vec2, sign: f64| -> Vec3 {
        let t = u[0] / w * angle;
        [radius * t.sin(), u[1], sign * radius * t.cos()]
    };
    let sample = |sign: f64, rng: &mut R| {
        (0..n_surface)
            .map(|_| {
                let u = [rng.gen_range(-w..w), rng.gen_range(-h..h)];
                (u, pos(u, sign))
            })
            .collect::<Vec<_>>()
    };
    let surface_front = sample(1.0, rng);
    let surface_back = sample(-1.0, rng);
    let seams = (0..16)
        .map(|i| {
            let v = -h + 2.0 * h * i as f64 / 15.0;
            let x = if i % 2 == 0 { w } else { -w };
            ([x, v], [x, v])
        })
        .collect();
    TrainGarment { front: panel.clone(), back: panel, surface_front, surface_back, seams }
}

// ---------------------------------------------------------------------------
// Drape scenes

use crate::body::{capsule_body, TriBvh};
use crate::error::{Error, Result};
use crate::fit::{
    bend_energy, bend_rest, collision_energy, gravity_energy, render_images,
    strain_energy_rest3d, Camera, PhysicsParams,
};
use crate::flatten::Side;
use crate::grid::{GridMap, MapSemantics};
use crate::math::{add3, scale3, standard_normal};
use crate::mesh::GarmentCategory;
use crate::optim::{adam_step, AdamState};

/// Normalized pattern half-extent: panels live inside
/// `[-x, x] x [-y, y]` of the `[-1, 1]^2` map square so occupancy maps
/// carry a real boundary.
pub const PATTERN_EXTENT: Vec2 = [0.85, 0.8];

/// Closed tube garment carrying a two-panel sewing pattern. `mesh.uv` holds
/// world-scale rest coordinates (arc length, height) and `pattern` the
/// normalized per-vertex map coordinate; the two side seams get matching
/// values from both panels, so a single per-vertex assignment is consistent.
#[derive(Debug, Clone)]
pub struct ShellGarment {
    pub mesh: TriMesh,
    pub pattern: Vec<(Vec2, Side)>,
    pub face_side: Vec<Side>,
    /// world rest-uv units per normalized pattern unit
    pub uv_scale: Vec2,
}

/// Tube around the y axis split into front (z >= 0) and back panels.
/// `n_around` must be even.
pub fn shell_tube(
    r_bottom: f64,
    r_top: f64,
    y_bottom: f64,
    height: f64,
    n_around: usize,
    n_rings: usize,
) -> ShellGarment {
    assert!(n_around % 2 == 0);
    let mut mesh = tube(r_bottom, r_top, height, n_around, n_rings, [0.0, y_bottom, 0.0]);
    let r_mid = 0.5 * (r_bottom + r_top);
    let half = std::f64::consts::FRAC_PI_2;
    let mut uv = Vec::with_capacity(mesh.vertices.len());
    let mut pattern = Vec::with_capacity(mesh.vertices.len());
    for j in 0..n_rings {
        let v = 2.0 * j as f64 / (n_rings - 1) as f64 - 1.0;
        for k in 0..n_around {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n_around as f64;
            // u tracks the sign of x on both panels and agrees at the seams
            let (u, side) = if k <= n_around / 2 {
                ((half - theta) / half, Side::Front)
            } else {
                ((theta - 3.0 * half) / half, Side::Back)
            };
            uv.push([u * r_mid * half, mesh.vertices[j * n_around + k][1]]);
            pattern.push(([u * PATTERN_EXTENT[0], v * PATTERN_EXTENT[1]], side));
        }
    }
    mesh.uv = Some(uv);
    let face_side = (0..mesh.faces.len())
        .map(|f| if (f / 2) % n_around < n_around / 2 { Side::Front } else { Side::Back })
        .collect();
    ShellGarment { mesh, pattern, face_side, uv_scale: [r_mid * half, 0.5 * height] }
}

/// Quasi-static drape: Adam descent on membrane + bending + gravity +
/// collision from `start`, with per-face rest shapes taken from `rest`.
/// Vertices listed in `pinned` stay fixed; returns the best-energy iterate.
pub fn drape(
    start: &TriMesh,
    rest: &TriMesh,
    body: Option<&TriBvh>,
    pinned: &[usize],
    params: &PhysicsParams,
    iters: usize,
    lr: f64,
) -> Result<TriMesh> {
    let bend = bend_rest(rest);
    let mut mesh = start.clone();
    let n = mesh.vertices.len();
    let mut state = AdamState::new(3 * n, lr);
    let mut best: Option<(f64, Vec<Vec3>)> = None;
    let pinned: std::collections::HashSet<usize> = pinned.iter().copied().collect();
    for _ in 0..=iters {
        let (es, gs) = strain_energy_rest3d(&mesh, rest, params)?;
        let (eb, gb) = bend_energy(&mesh, &bend, params);
        let (eg, gg) = gravity_energy(&mesh, params);
        let (ec, gc) = match body {
            Some(b) => collision_energy(&mesh, b, params),
            None => (0.0, vec![[0.0; 3]; n]),
        };
        let energy = es + eb + eg + ec;
        if best.as_ref().map_or(true, |(e, _)| energy < *e) {
            best = Some((energy, mesh.vertices.clone()));
        }
        let mut flat = vec![0.0; 3 * n];
        for i in 0..n {
            if pinned.contains(&i) {
                continue;
            }
            for c in 0..3 {
                flat[3 * i + c] = gs[i][c] + gb[i][c] + gg[i][c] + gc[i][c];
            }
        }
        let mut x: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
        adam_step(&mut x, &flat, &mut state)?;
        for i in 0..n {
            mesh.vertices[i] = [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
        }
    }
    mesh.vertices = best.unwrap().1;
    Ok(mesh)
}

/// One synthetic observation: a garment draped over the capsule body plus
/// the images a real capture pipeline would hand us.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub category: GarmentCategory,
    pub rest: TriMesh,
    /// pattern data; `None` for categories without a two-panel shell
    pub shell: Option<ShellGarment>,
    pub garment: TriMesh,
    pub body: TriMesh,
    pub camera: Camera,
    pub normal_image: GridMap,
    pub garment_mask: GridMap,
    pub body_seg: GridMap,
    pub body_pos: GridMap,
}

#[derive(Debug, Clone)]
pub struct SceneParams {
    pub resolution: usize,
    pub drape_iters: usize,
    pub noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams { resolution: 64, drape_iters: 250, noise: 0.01 }
    }
}

/// Builds a seeded drape scene for one garment category.
pub fn toy_scene<R: Rng>(
    category: GarmentCategory,
    params: &SceneParams,
    rng: &mut R,
) -> Result<ToyScene> {
    let body_model = capsule_body();
    let body = body_model.surface.clone();
    let (shell, rest, pinned) = match category {
        GarmentCategory::Skirt => {
            let s = shell_tube(0.26, 0.30, 0.45, 0.43, 24, 8);
            let top = top_ring(&s.mesh, 24);
            (Some(s.clone()), s.mesh, top)
        }
        GarmentCategory::Shirt | GarmentCategory::ShirtOpen => {
            let s = shell_tube(0.24, 0.22, 0.92, 0.40, 24, 8);
            let top = top_ring(&s.mesh, 24);
            (Some(s.clone()), s.mesh, top)
        }
        GarmentCategory::Trousers => {
            let m = toy_trousers(16, 5, 0.0);
            // hold the waist ring (the first ring of the waist tube sits at
            // the crotch; the last ring is the top)
            let top: Vec<usize> = (16 * 4..16 * 5).collect();
            (None, m, top)
        }
    };
    let mut start = rest.clone();
    for (i, v) in start.vertices.iter_mut().enumerate() {
        if pinned.contains(&i) {
            continue;
        }
        for c in v.iter_mut() {
            *c += params.noise * standard_normal(rng);
        }
    }
    let bvh = TriBvh::build(&body);
    let physics = PhysicsParams { stretch_stiffness: 20.0, ..PhysicsParams::default() };
    let garment = drape(&start, &rest, Some(&bvh), &pinned, &physics, params.drape_iters, 2e-3)?;

    // frame the garment
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for v in &garment.vertices {
        for c in 0..3 {
            lo[c] = lo[c].min(v[c]);
            hi[c] = hi[c].max(v[c]);
        }
    }
    let center = scale3(add3(lo, hi), 0.5);
    let extent = 0.5 * (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let res = params.resolution;
    let camera = Camera::front_orthographic(res, res, center, 0.85 / extent);

    let (normal_image, garment_mask, _) = render_images(&garment, &camera);
    let (_, body_seg, body_pos) = render_images(&body, &camera);
    Ok(ToyScene {
        category,
        rest,
        shell,
        garment,
        body,
        camera,
        normal_image,
        garment_mask,
        body_seg,
        body_pos,
    })
}

fn top_ring(mesh: &TriMesh, n_around: usize) -> Vec<usize> {
    (mesh.vertices.len() - n_around..mesh.vertices.len()).collect()
}

/// Rasterizes per-vertex positions into pattern space for one panel:
/// channels `[x, y, z, validity]`, validity 1 inside the panel's triangles.
pub fn pattern_position_map(
    shell: &ShellGarment,
    positions: &[Vec3],
    side: Side,
    size: usize,
) -> Result<GridMap> {
    if positions.len() != shell.mesh.vertices.len() {
        return Err(Error::LengthMismatch(shell.mesh.vertices.len(), positions.len()));
    }
    let mut map = GridMap::zeros(size, size, 4, MapSemantics::Position);
    for i in 0..size {
        for j in 0..size {
            let uv = map.pixel_uv(i, j);
            'faces: for (f, face) in shell.mesh.faces.iter().enumerate() {
                if shell.face_side[f] != side {
                    continue;
                }
                let (a, b, c) =
                    (shell.pattern[face[0]].0, shell.pattern[face[1]].0, shell.pattern[face[2]].0);
                if let Some(w) = bary2d(uv, a, b, c) {
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        for c3 in 0..3 {
                            p[c3] += w[k] * positions[face[k]][c3];
                        }
                    }
                    let px = map.pixel_mut(i, j);
                    for c3 in 0..3 {
                        px[c3] = p[c3] as f32;
                    }
                    px[3] = 1.0;
                    break 'faces;
                }
            }
        }
    }
    Ok(map)
}

fn bary2d(p: Vec2, a: Vec2, b: Vec2, c: Vec2) -> Option<[f64; 3]> {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    if det.abs() < 1e-15 {
        return None;
    }
    let wb = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let wc = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    let wa = 1.0 - wb - wc;
    let eps = -1e-9;
    if wa >= eps && wb >= eps && wc >= eps {
        Some([wa, wb, wc])
    } else {
        None
    }
}

/// Rebuilds a panel mesh from occupancy + position maps: one vertex per
/// occupied pixel, two triangles per fully occupied pixel quad. Returns the
/// mesh (with world-scale rest uv) and the per-vertex pattern coordinates.
pub fn mesh_from_maps(
    occ: &GridMap,
    pos: &GridMap,
    side: Side,
    uv_scale: Vec2,
) -> Result<(TriMesh, Vec<(Vec2, Side)>)> {
    let (h, w) = (occ.height, occ.width);
    if pos.height != h || pos.width != w {
        return Err(Error::DimMismatch { expected: h, got: pos.height });
    }
    let mut index = vec![usize::MAX; h * w];
    let mut vertices = Vec::new();
    let mut uv = Vec::new();
    let mut pattern = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if occ.get(i, j, 0) < 0.5 {
                continue;
            }
            index[i * w + j] = vertices.len();
            vertices.push([
                pos.get(i, j, 0) as f64,
                pos.get(i, j, 1) as f64,
                pos.get(i, j, 2) as f64,
            ]);
            let p = occ.pixel_uv(i, j);
            uv.push([
                p[0] / PATTERN_EXTENT[0] * uv_scale[0],
                p[1] / PATTERN_EXTENT[1] * uv_scale[1],
            ]);
            pattern.push((p, side));
        }
    }
    let mut faces = Vec::new();
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let q = [
                index[i * w + j],
                index[i * w + j + 1],
                index[(i + 1) * w + j + 1],
                index[(i + 1) * w + j],
            ];
            if q.iter().any(|&k| k == usize::MAX) {
                continue;
            }
            faces.push([q[0], q[1], q[2]]);
            faces.push([q[0], q[2], q[3]]);
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut mesh = TriMesh::new(vertices, faces);
    mesh.uv = Some(uv);
    Ok((mesh, pattern))
}

/// Concatenates two meshes (and their aligned pattern lists) into one.
pub fn merge_meshes(
    a: (TriMesh, Vec<(Vec2, Side)>),
    b: (TriMesh, Vec<(Vec2, Side)>),
) -> (TriMesh, Vec<(Vec2, Side)>) {
    let (mut m, mut pat) = a;
    let off = m.vertices.len();
    m.vertices.extend(b.0.vertices);
    if let (Some(ua), Some(ub)) = (m.uv.as_mut(), b.0.uv) {
        ua.extend(ub);
    }
    m.faces.extend(b.0.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    pat.extend(b.1);
    (m, pat)
}
