//! Implicit sewing patterns: latent-conditioned SDF/label and UV networks,
//! their training losses, coverage maps, panel meshing with sewing, and
//! latent recovery from occupancy maps.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::flatten::Side;
use crate::grid::{GridMap, MapSemantics};
use crate::math::{norm2, sub2, Vec2, Vec3};
use crate::mesh::TriMesh;
use crate::nnet::{Activation, Mlp};
use crate::optim::{adam_step, AdamState};

// ---------------------------------------------------------------------------
// Polygon geometry

/// Distance from `p` to segment `ab`.
pub fn point_segment_distance(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let ab = sub2(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    norm2([p[0] - a[0] - t * ab[0], p[1] - a[1] - t * ab[1]])
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &[Vec2], p: Vec2) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if x > p[0] {
                inside = !inside;
            }
        }
    }
    inside
}

/// Exact signed distance to a simple polygon; negative inside.
pub fn polygon_signed_distance(poly: &[Vec2], p: Vec2) -> f64 {
    let n = poly.len();
    let mut d = f64::INFINITY;
    for i in 0..n {
        d = d.min(point_segment_distance(poly[i], poly[(i + 1) % n], p));
    }
    if point_in_polygon(poly, p) {
        -d
    } else {
        d
    }
}

/// Index of the boundary edge closest to `p`.
pub fn nearest_polygon_edge(poly: &[Vec2], p: Vec2) -> usize {
    let n = poly.len();
    let mut best = (f64::INFINITY, 0);
    for i in 0..n {
        let d = point_segment_distance(poly[i], poly[(i + 1) % n], p);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

// ---------------------------------------------------------------------------
// Model

/// Latent garment code (32-dimensional by default).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

/// Front/back pattern fields (SDF + stitch-label logits) and UV networks,
/// plus one latent code per training garment.
pub struct IspModel {
    pub pattern_front: Mlp,
    pub pattern_back: Mlp,
    pub uv_front: Mlp,
    pub uv_back: Mlp,
    pub latent_table: Vec<Vec<f64>>,
    pub label_count: usize,
    pub latent_dim: usize,
}

/// Weight-layer count of every ISP network.
pub const ISP_LAYERS: usize = 7;

impl IspModel {
    pub fn new<R: Rng>(
        latent_dim: usize,
        hidden: usize,
        label_count: usize,
        n_garments: usize,
        rng: &mut R,
    ) -> Result<Self> {
        assert!(label_count >= 1);
        let input = 2 + latent_dim;
        let mut dims = vec![input];
        dims.extend(std::iter::repeat(hidden).take(ISP_LAYERS - 1));
        let mut pattern_dims = dims.clone();
        pattern_dims.push(1 + label_count);
        let mut uv_dims = dims;
        uv_dims.push(3);
        let mk = |dims: &[usize], rng: &mut R| {
            Mlp::new(dims, Activation::Softplus, Some(ISP_LAYERS / 2), false, rng)
        };
        let pattern_front = mk(&pattern_dims, rng)?;
        let pattern_back = mk(&pattern_dims, rng)?;
        let uv_front = mk(&uv_dims, rng)?;
        let uv_back = mk(&uv_dims, rng)?;
        let latent_table = (0..n_garments)
            .map(|_| (0..latent_dim).map(|_| rng.gen_range(-0.01..0.01)).collect())
            .collect();
        Ok(IspModel {
            pattern_front,
            pattern_back,
            uv_front,
            uv_back,
            latent_table,
            label_count,
            latent_dim,
        })
    }

    fn input(&self, u: Vec2, z: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 + self.latent_dim);
        x.push(u[0]);
        x.push(u[1]);
        x.extend_from_slice(z);
        x
    }

    fn pattern_net(&self, side: Side) -> &Mlp {
        match side {
            Side::Front => &self.pattern_front,
            Side::Back => &self.pattern_back,
        }
    }

    fn uv_net(&self, side: Side) -> &Mlp {
        match side {
            Side::Front => &self.uv_front,
            Side::Back => &self.uv_back,
        }
    }

    /// Signed distance to the panel boundary (negative inside) and the
    /// argmax stitch label at `u`.
    pub fn eval_pattern(&self, u: Vec2, z: &[f64], side: Side) -> Result<(f64, usize)> {
        let (out, _) = self.pattern_net(side).forward(&self.input(u, z))?;
        let label = out[1..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        Ok((out[0], label))
    }

    /// Rest 3D position of the UV point `u`.
    pub fn eval_uv(&self, u: Vec2, z: &[f64], side: Side) -> Result<Vec3> {
        let (out, _) = self.uv_net(side).forward(&self.input(u, z))?;
        Ok([out[0], out[1], out[2]])
    }

    /// All trainable parameters: the four networks then the latent table.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.pattern_front.params();
        p.extend(self.pattern_back.params());
        p.extend(self.uv_front.params());
        p.extend(self.uv_back.params());
        for z in &self.latent_table {
            p.extend_from_slice(z);
        }
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let mut off = 0;
        for net in [
            &mut self.pattern_front,
            &mut self.pattern_back,
            &mut self.uv_front,
            &mut self.uv_back,
        ] {
            let n = net.param_count();
            net.set_params(&p[off..off + n]);
            off += n;
        }
        for z in &mut self.latent_table {
            z.copy_from_slice(&p[off..off + self.latent_dim]);
            off += self.latent_dim;
        }
        assert_eq!(off, p.len());
    }

    fn param_offsets(&self) -> [usize; 5] {
        let a = self.pattern_front.param_count();
        let b = a + self.pattern_back.param_count();
        let c = b + self.uv_front.param_count();
        let d = c + self.uv_back.param_count();
        [0, a, b, c, d]
    }
}

// ---------------------------------------------------------------------------
// Training

/// Panel outline in Omega with a stitch label per boundary edge.
#[derive(Debug, Clone)]
pub struct PanelShape {
    pub boundary: Vec<Vec2>,
    pub edge_labels: Vec<usize>,
}

/// One training garment: front/back panel shapes, (u, 3D rest position)
/// supervision for the UV nets, and front/back seam point pairs that must
/// map to the same 3D point.
#[derive(Debug, Clone)]
pub struct TrainGarment {
    pub front: PanelShape,
    pub back: PanelShape,
    pub surface_front: Vec<(Vec2, Vec3)>,
    pub surface_back: Vec<(Vec2, Vec3)>,
    pub seams: Vec<(Vec2, Vec2)>,
}

impl TrainGarment {
    fn panel(&self, side: Side) -> &PanelShape {
        match side {
            Side::Front => &self.front,
            Side::Back => &self.back,
        }
    }
}

/// One optimizer-step worth of supervision.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    /// (side, u, target signed distance, target label)
    pub sdf: Vec<(Side, Vec2, f64, usize)>,
    /// (side, u, target 3D position)
    pub surface: Vec<(Side, Vec2, Vec3)>,
    /// (front u, back u) pairs on shared seams
    pub seams: Vec<(Vec2, Vec2)>,
}

/// Training loss for one garment on one batch, with gradients over the
/// model's flat parameter vector. The loss is
/// L1(SDF) + cross-entropy(labels) + |z|^2 + MSE(positions) + seam gap.
pub fn isp_loss_grad(model: &IspModel, garment: usize, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    let offs = model.param_offsets();
    let z = &model.latent_table[garment];
    let mut grads = vec![0.0; offs[4] + model.latent_table.len() * model.latent_dim];
    let z_off = offs[4] + garment * model.latent_dim;
    let mut loss = 0.0;

    // SDF + label terms
    if !batch.sdf.is_empty() {
        let inv_n = 1.0 / batch.sdf.len() as f64;
        for &(side, u, s_target, label) in &batch.sdf {
            let net = model.pattern_net(side);
            let off = if side == Side::Front { offs[0] } else { offs[1] };
            let (out, tape) = net.forward(&model.input(u, z))?;
            let mut dy = vec![0.0; out.len()];
            // L1 on the signed distance
            let r = out[0] - s_target;
            loss += r.abs() * inv_n;
            dy[0] = r.signum() * inv_n;
            // cross entropy on the label logits
            let logits = &out[1..];
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
            loss += (sum.ln() + m - logits[label]) * inv_n;
            for (k, &l) in logits.iter().enumerate() {
                let p = (l - m).exp() / sum;
                dy[1 + k] = (p - if k == label { 1.0 } else { 0.0 }) * inv_n;
            }
            let (dx, dp) = net.backward(tape, &dy);
            for (g, d) in grads[off..off + dp.len()].iter_mut().zip(&dp) {
                *g += d;
            }
            for (g, d) in grads[z_off..z_off + model.latent_dim].iter_mut().zip(&dx[2..]) {
                *g += d;
            }
        }
    }

    // position supervision
    if !batch.surface.is_empty() {
        let inv_n = 1.0 / batch.surface.len() as f64;
        for &(side, u, x_target) in &batch.surface {
            let net = model.uv_net(side);
            let off = if side == Side::Front { offs[2] } else { offs[3] };
            let (out, tape) = net.forward(&model.input(u, z))?;
            let d = [out[0] - x_target[0], out[1] - x_target[1], out[2] - x_target[2]];
            loss += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) * inv_n;
            let dy: Vec<f64> = d.iter().map(|&v| 2.0 * v * inv_n).collect();
            let (dx, dp) = net.backward(tape, &dy);
            for (g, gd) in grads[off..off + dp.len()].iter_mut().zip(&dp) {
                *g += gd;
            }
            for (g, gd) in grads[z_off..z_off + model.latent_dim].iter_mut().zip(&dx[2..]) {
                *g += gd;
            }
        }
    }

    // seam consistency: front and back must agree in 3D
    if !batch.seams.is_empty() {
        let inv_n = 1.0 / batch.seams.len() as f64;
        for &(uf, ub) in &batch.seams {
            let (xf, tape_f) = model.uv_front.forward(&model.input(uf, z))?;
            let (xb, tape_b) = model.uv_back.forward(&model.input(ub, z))?;
            let d = [xf[0] - xb[0], xf[1] - xb[1], xf[2] - xb[2]];
            loss += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) * inv_n;
            let dy_f: Vec<f64> = d.iter().map(|&v| 2.0 * v * inv_n).collect();
            let dy_b: Vec<f64> = d.iter().map(|&v| -2.0 * v * inv_n).collect();
            let (dxf, dpf) = model.uv_front.backward(tape_f, &dy_f);
            let (dxb, dpb) = model.uv_back.backward(tape_b, &dy_b);
            for (g, gd) in grads[offs[2]..offs[2] + dpf.len()].iter_mut().zip(&dpf) {
                *g += gd;
            }
            for (g, gd) in grads[offs[3]..offs[3] + dpb.len()].iter_mut().zip(&dpb) {
                *g += gd;
            }
            for (g, gd) in grads[z_off..z_off + model.latent_dim].iter_mut().zip(&dxf[2..]) {
                *g += gd;
            }
            for (g, gd) in grads[z_off..z_off + model.latent_dim].iter_mut().zip(&dxb[2..]) {
                *g += gd;
            }
        }
    }

    // latent regularizer |z|^2
    for (k, &v) in z.iter().enumerate() {
        loss += v * v;
        grads[z_off + k] += 2.0 * v;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct IspTrainParams {
    pub epochs: usize,
    pub lr: f64,
    /// Fresh uniform SDF samples drawn per panel per epoch.
    pub sdf_samples: usize,
    /// Seam pairs used per step.
    pub seam_samples: usize,
    pub batch: usize,
}

impl Default for IspTrainParams {
    fn default() -> Self {
        IspTrainParams { epochs: 40, lr: 1e-3, sdf_samples: 2000, seam_samples: 200, batch: 64 }
    }
}

/// Joint training of the pattern/UV networks and the latent table.
/// Returns the mean loss per epoch.
pub fn train_isp<R: Rng>(
    model: &mut IspModel,
    dataset: &[TrainGarment],
    params: &IspTrainParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert!(dataset.len() <= model.latent_table.len());
    let mut flat = model.flat_params();
    let mut adam = AdamState::new(flat.len(), params.lr);
    let mut report = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        // cosine decay to 2% of the base rate
        let t = epoch as f64 / params.epochs.max(1) as f64;
        adam.lr = params.lr * (0.02 + 0.49 * (1.0 + (std::f64::consts::PI * t).cos()));
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for (g, garment) in dataset.iter().enumerate() {
            // fresh SDF supervision for this epoch
            let mut pool: Vec<(Side, Vec2, f64, usize)> = Vec::new();
            for side in [Side::Front, Side::Back] {
                let panel = garment.panel(side);
                for _ in 0..params.sdf_samples {
                    let u = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                    let s = polygon_signed_distance(&panel.boundary, u);
                    let label = panel.edge_labels[nearest_polygon_edge(&panel.boundary, u)];
                    pool.push((side, u, s, label));
                }
            }
            for chunk in pool.chunks(params.batch) {
                let mut batch = Batch { sdf: chunk.to_vec(), ..Batch::default() };
                let n_surf = params.batch.max(1);
                for _ in 0..n_surf {
                    if !garment.surface_front.is_empty() {
                        let (u, x) =
                            garment.surface_front[rng.gen_range(0..garment.surface_front.len())];
                        batch.surface.push((Side::Front, u, x));
                    }
                    if !garment.surface_back.is_empty() {
                        let (u, x) =
                            garment.surface_back[rng.gen_range(0..garment.surface_back.len())];
                        batch.surface.push((Side::Back, u, x));
                    }
                }
                if !garment.seams.is_empty() {
                    for _ in 0..params.seam_samples.min(garment.seams.len()).max(1) {
                        batch.seams.push(garment.seams[rng.gen_range(0..garment.seams.len())]);
                    }
                }
                let (loss, grads) = isp_loss_grad_flat(model, &flat, g, &batch)?;
                adam_step(&mut flat, &grads, &mut adam)?;
                model.set_flat_params(&flat);
                epoch_loss += loss;
                steps += 1;
            }
        }
        report.push(epoch_loss / steps as f64);
    }
    Ok(report)
}

fn isp_loss_grad_flat(
    model: &mut IspModel,
    flat: &[f64],
    garment: usize,
    batch: &Batch,
) -> Result<(f64, Vec<f64>)> {
    model.set_flat_params(flat);
    isp_loss_grad(model, garment, batch)
}

// ---------------------------------------------------------------------------
// Coverage and occupancy maps

/// Binarized SDF raster: 1 where the panel covers the pixel.
pub fn occupancy_map(model: &IspModel, z: &[f64], side: Side, size: usize) -> Result<GridMap> {
    let mut map = GridMap::zeros(size, size, 1, MapSemantics::Occupancy);
    for i in 0..size {
        for j in 0..size {
            let (s, _) = model.eval_pattern(map.pixel_uv(i, j), z, side)?;
            if s <= 0.0 {
                map.set(i, j, 0, 1.0);
            }
        }
    }
    Ok(map)
}

/// Maximum-coverage map: per pixel, the mean rest position over all
/// garments whose panel covers it (channels 0..3), and a validity flag
/// equal to the OR of the individual occupancies (channel 3).
pub fn max_coverage_map(
    model: &IspModel,
    latents: &[Vec<f64>],
    side: Side,
    size: usize,
) -> Result<GridMap> {
    if latents.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut map = GridMap::zeros(size, size, 4, MapSemantics::Coverage);
    for i in 0..size {
        for j in 0..size {
            let u = map.pixel_uv(i, j);
            let mut acc = [0.0f64; 3];
            let mut count = 0usize;
            for z in latents {
                let (s, _) = model.eval_pattern(u, z, side)?;
                if s <= 0.0 {
                    let x = model.eval_uv(u, z, side)?;
                    for k in 0..3 {
                        acc[k] += x[k];
                    }
                    count += 1;
                }
            }
            if count > 0 {
                for k in 0..3 {
                    map.set(i, j, k, (acc[k] / count as f64) as f32);
                }
                map.set(i, j, 3, 1.0);
            }
        }
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Meshing and sewing

/// Scalar fields describing one panel side for meshing.
pub struct SideField<'a> {
    pub sdf: Box<dyn Fn(Vec2) -> f64 + 'a>,
    pub position: Box<dyn Fn(Vec2) -> Vec3 + 'a>,
    pub label: Box<dyn Fn(Vec2) -> usize + 'a>,
}

/// Marching-squares triangulation of `sdf < 0` on a `res x res` grid over
/// Omega. Returns UV vertices and CCW faces.
fn mesh_side(sdf: &dyn Fn(Vec2) -> f64, res: usize) -> Result<(Vec<Vec2>, Vec<[usize; 3]>)> {
    assert!(res >= 2);
    let uv = |i: usize, j: usize| -> Vec2 {
        [
            2.0 * j as f64 / (res - 1) as f64 - 1.0,
            2.0 * i as f64 / (res - 1) as f64 - 1.0,
        ]
    };
    let mut s = vec![0.0f64; res * res];
    for i in 0..res {
        for j in 0..res {
            s[i * res + j] = sdf(uv(i, j));
        }
    }
    let inside = |i: usize, j: usize| s[i * res + j] < 0.0;

    let mut verts: Vec<Vec2> = Vec::new();
    let mut node_ids: HashMap<(usize, usize), usize> = HashMap::new();
    // crossing key: (i, j, 0) for the edge (i,j)-(i,j+1), (i, j, 1) for
    // (i,j)-(i+1,j)
    let mut cross_ids: HashMap<(usize, usize, u8), usize> = HashMap::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    for i in 0..res - 1 {
        for j in 0..res - 1 {
            // corners counter-clockwise in (u, v)
            let corners = [(i, j), (i, j + 1), (i + 1, j + 1), (i + 1, j)];
            let edge_keys = [(i, j, 0u8), (i, j + 1, 1), (i + 1, j, 0), (i, j, 1)];
            let mut poly: Vec<usize> = Vec::new();
            for k in 0..4 {
                let a = corners[k];
                let b = corners[(k + 1) % 4];
                if inside(a.0, a.1) {
                    let id = *node_ids.entry(a).or_insert_with(|| {
                        verts.push(uv(a.0, a.1));
                        verts.len() - 1
                    });
                    poly.push(id);
                }
                if inside(a.0, a.1) != inside(b.0, b.1) {
                    let key = edge_keys[k];
                    let id = *cross_ids.entry(key).or_insert_with(|| {
                        // interpolate from the canonical (lower-index) end
                        let (p, q) = match key.2 {
                            0 => ((key.0, key.1), (key.0, key.1 + 1)),
                            _ => ((key.0, key.1), (key.0 + 1, key.1)),
                        };
                        let sp = s[p.0 * res + p.1];
                        let sq = s[q.0 * res + q.1];
                        let t = sp / (sp - sq);
                        let up = uv(p.0, p.1);
                        let uq = uv(q.0, q.1);
                        verts.push([
                            up[0] + t * (uq[0] - up[0]),
                            up[1] + t * (uq[1] - up[1]),
                        ]);
                        verts.len() - 1
                    });
                    poly.push(id);
                }
            }
            for k in 1..poly.len().saturating_sub(1) {
                faces.push([poly[0], poly[k], poly[k + 1]]);
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyPanel);
    }
    Ok((verts, faces))
}

/// Longest circular run of boundary vertices carrying `label`, in loop
/// order, across all boundary loops of `mesh`.
fn boundary_arc(mesh: &TriMesh, labels: &dyn Fn(Vec2) -> usize, label: usize) -> Vec<usize> {
    let uv = mesh.uv.as_ref().unwrap();
    let mut best: Vec<usize> = Vec::new();
    for loop_ in mesh.boundary_loops() {
        let tags: Vec<bool> = loop_.iter().map(|&v| labels(uv[v]) == label).collect();
        let n = loop_.len();
        if tags.iter().all(|&t| t) {
            if n > best.len() {
                best = loop_.clone();
            }
            continue;
        }
        // circular runs: start after a false, extend while true
        let mut k = 0;
        while k < n && tags[k] {
            k += 1;
        }
        if k == n {
            continue;
        }
        let mut run: Vec<usize> = Vec::new();
        for step in 0..n {
            let idx = (k + 1 + step) % n;
            if tags[idx] {
                run.push(loop_[idx]);
            } else {
                if run.len() > best.len() {
                    best = run.clone();
                }
                run.clear();
            }
        }
        if run.len() > best.len() {
            best = run;
        }
    }
    best
}

fn arc_params(uvs: &[Vec2]) -> Vec<f64> {
    let mut t = vec![0.0];
    for w in uvs.windows(2) {
        t.push(t.last().unwrap() + norm2(sub2(w[1], w[0])));
    }
    let total = *t.last().unwrap();
    if total > 0.0 {
        for v in &mut t {
            *v /= total;
        }
    }
    t
}

/// Meshes both sides and sews label-matched boundary arcs with zero-width
/// triangle strips, pairing points by normalized arc length. Back faces are
/// flipped so the combined mesh is consistently oriented.
pub fn mesh_fields(
    front: &SideField,
    back: &SideField,
    resolution: usize,
    sew_labels: &[usize],
) -> Result<TriMesh> {
    let (fv, ff) = mesh_side(&*front.sdf, resolution)?;
    let (bv, mut bf) = mesh_side(&*back.sdf, resolution)?;
    for f in &mut bf {
        f.swap(1, 2);
    }
    let mut front_mesh = TriMesh::new(fv.iter().map(|&u| (front.position)(u)).collect(), ff);
    front_mesh.uv = Some(fv);
    let mut back_mesh = TriMesh::new(bv.iter().map(|&u| (back.position)(u)).collect(), bf);
    back_mesh.uv = Some(bv);

    let n_front = front_mesh.vertices.len();
    let mut vertices = front_mesh.vertices.clone();
    vertices.extend_from_slice(&back_mesh.vertices);
    let mut uv = front_mesh.uv.clone().unwrap();
    uv.extend_from_slice(back_mesh.uv.as_ref().unwrap());
    let mut faces = front_mesh.faces.clone();
    faces.extend(back_mesh.faces.iter().map(|f| [f[0] + n_front, f[1] + n_front, f[2] + n_front]));

    for &label in sew_labels {
        let f_arc = boundary_arc(&front_mesh, &*front.label, label);
        let b_arc = boundary_arc(&back_mesh, &*back.label, label);
        if f_arc.len() < 2 || b_arc.len() < 2 {
            continue;
        }
        // the back arc runs opposite to the front arc along the seam
        let c_arc: Vec<usize> = b_arc.iter().rev().map(|&v| v + n_front).collect();
        let f_uv: Vec<Vec2> = f_arc.iter().map(|&v| uv[v]).collect();
        let c_uv: Vec<Vec2> = c_arc.iter().map(|&v| uv[v]).collect();
        let tf = arc_params(&f_uv);
        let tc = arc_params(&c_uv);
        let (mut i, mut j) = (0usize, 0usize);
        while i + 1 < f_arc.len() || j + 1 < c_arc.len() {
            let advance_front = if i + 1 >= f_arc.len() {
                false
            } else if j + 1 >= c_arc.len() {
                true
            } else {
                tf[i + 1] <= tc[j + 1]
            };
            if advance_front {
                faces.push([f_arc[i + 1], f_arc[i], c_arc[j]]);
                i += 1;
            } else {
                faces.push([f_arc[i], c_arc[j], c_arc[j + 1]]);
                j += 1;
            }
        }
    }

    let mut mesh = TriMesh::new(vertices, faces);
    mesh.uv = Some(uv);
    Ok(mesh)
}

/// Rest garment mesh for latent `z`: marching-squares panels plus sewing.
pub fn mesh_panels(
    model: &IspModel,
    z: &[f64],
    resolution: usize,
    sew_labels: &[usize],
) -> Result<TriMesh> {
    let field = |side: Side| SideField {
        sdf: Box::new(move |u| model.eval_pattern(u, z, side).unwrap().0),
        position: Box::new(move |u| model.eval_uv(u, z, side).unwrap()),
        label: Box::new(move |u| model.eval_pattern(u, z, side).unwrap().1),
    };
    mesh_fields(&field(Side::Front), &field(Side::Back), resolution, sew_labels)
}

// ---------------------------------------------------------------------------
// Latent recovery

#[derive(Debug, Clone)]
pub struct RecoverParams {
    pub iters: usize,
    pub lr: f64,
    pub lambda_z: f64,
    /// Pixels sampled per iteration per side; 0 uses all pixels.
    pub pixels_per_iter: usize,
}

impl Default for RecoverParams {
    fn default() -> Self {
        RecoverParams { iters: 1000, lr: 1e-3, lambda_z: 0.04, pixels_per_iter: 0 }
    }
}

/// Hinge data terms of Eq.-9-style latent recovery at a fixed `z`:
/// occupied pixels penalize positive SDF, free pixels penalize negative
/// SDF. Also returns the gradient with respect to `z`.
pub fn recover_loss_grad(
    model: &IspModel,
    occ: [(&GridMap, Side); 2],
    z: &[f64],
    lambda_z: f64,
    pixels: Option<&[(usize, usize, usize)]>,
) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut grad = vec![0.0; z.len()];
    let mut count = 0usize;
    let visit = |k: usize, i: usize, j: usize, loss: &mut f64, grad: &mut Vec<f64>| -> Result<()> {
        let (map, side) = occ[k];
        let u = map.pixel_uv(i, j);
        let occupied = map.get(i, j, 0) > 0.5;
        let net = model.pattern_net(side);
        let (out, tape) = net.forward(&model.input(u, z))?;
        let s = out[0];
        let ds = if occupied {
            if s > 0.0 {
                *loss += s;
                1.0
            } else {
                0.0
            }
        } else if s < 0.0 {
            *loss += -s;
            -1.0
        } else {
            0.0
        };
        if ds != 0.0 {
            let mut dy = vec![0.0; out.len()];
            dy[0] = ds;
            let (dx, _) = net.backward(tape, &dy);
            for (g, d) in grad.iter_mut().zip(&dx[2..]) {
                *g += d;
            }
        }
        Ok(())
    };
    match pixels {
        Some(list) => {
            for &(k, i, j) in list {
                visit(k, i, j, &mut loss, &mut grad)?;
                count += 1;
            }
        }
        None => {
            for (k, (map, _)) in occ.iter().enumerate() {
                for i in 0..map.height {
                    for j in 0..map.width {
                        visit(k, i, j, &mut loss, &mut grad)?;
                        count += 1;
                    }
                }
            }
        }
    }
    let inv = 1.0 / count.max(1) as f64;
    loss *= inv;
    for g in &mut grad {
        *g *= inv;
    }
    // lambda_z * |z|_2
    let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    loss += lambda_z * zn;
    if zn > 0.0 {
        for (g, &v) in grad.iter_mut().zip(z) {
            *g += lambda_z * v / zn;
        }
    }
    Ok((loss, grad))
}

/// Recovers the latent code whose SDFs best match binary occupancy maps.
/// Returns the best iterate found.
pub fn recover_latent<R: Rng>(
    model: &IspModel,
    occ_front: &GridMap,
    occ_back: &GridMap,
    params: &RecoverParams,
    rng: &mut R,
) -> Result<LatentCode> {
    let occ = [(occ_front, Side::Front), (occ_back, Side::Back)];
    let mut z = vec![0.0; model.latent_dim];
    let mut adam = AdamState::new(z.len(), params.lr);
    let mut best = (f64::INFINITY, z.clone());
    for _ in 0..params.iters {
        let pixels: Option<Vec<(usize, usize, usize)>> = if params.pixels_per_iter > 0 {
            let mut list = Vec::with_capacity(2 * params.pixels_per_iter);
            for (k, (map, _)) in occ.iter().enumerate() {
                for _ in 0..params.pixels_per_iter {
                    list.push((k, rng.gen_range(0..map.height), rng.gen_range(0..map.width)));
                }
            }
            Some(list)
        } else {
            None
        };
        let (loss, grad) = recover_loss_grad(model, occ, &z, params.lambda_z, pixels.as_deref())?;
        if loss < best.0 {
            best = (loss, z.clone());
        }
        adam_step(&mut z, &grad, &mut adam)?;
    }
    let (final_loss, _) = recover_loss_grad(model, occ, &z, params.lambda_z, None)?;
    if final_loss < best.0 {
        best = (final_loss, z);
    }
    Ok(LatentCode(best.1))
}

/// Intersection-over-union of two binary occupancy maps.
pub fn occupancy_iou(a: &GridMap, b: &GridMap) -> f64 {
    assert_eq!((a.height, a.width), (b.height, b.width));
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.data.iter().zip(&b.data) {
        let (p, q) = (*x > 0.5, *y > 0.5);
        if p && q {
            inter += 1;
        }
        if p || q {
            union += 1;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{norm3, sub3};
    use crate::synth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn circle_polygon(r: f64, n: usize) -> Vec<Vec2> {
        (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                [r * t.cos(), r * t.sin()]
            })
            .collect()
    }

    /// Winding-number point-in-polygon, independent of the even-odd
    /// implementation under test.
    fn winding_inside(poly: &[Vec2], p: Vec2) -> bool {
        let mut angle = 0.0;
        for i in 0..poly.len() {
            let a = sub2(poly[i], p);
            let b = sub2(poly[(i + 1) % poly.len()], p);
            angle += (a[0] * b[1] - a[1] * b[0]).atan2(a[0] * b[0] + a[1] * b[1]);
        }
        angle.abs() > std::f64::consts::PI
    }

    #[test]
    fn polygon_sdf_matches_analytic_circle() {
        let poly = circle_polygon(0.6, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let analytic = norm2(p) - 0.6;
            let s = polygon_signed_distance(&poly, p);
            assert!((s - analytic).abs() < 1e-3, "{s} vs {analytic}");
            assert_eq!(point_in_polygon(&poly, p), winding_inside(&poly, p));
        }
    }

    #[test]
    fn untrained_model_outputs_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = IspModel::new(8, 8, 3, 1, &mut rng).unwrap();
        let z = vec![0.1; 8];
        let (s, l) = model.eval_pattern([0.3, -0.2], &z, Side::Front).unwrap();
        assert!(s.is_finite() && l < 3);
        let x = model.eval_uv([0.3, -0.2], &z, Side::Back).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uv_field_is_lipschitz_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = IspModel::new(4, 8, 2, 1, &mut rng).unwrap();
        let z = vec![0.05; 4];
        let n = 16;
        let mut max_slope = 0.0f64;
        for i in 0..n {
            for j in 0..n - 1 {
                let h = 2.0 / (n - 1) as f64;
                let u0 = [-1.0 + j as f64 * h, -1.0 + i as f64 * h];
                let u1 = [u0[0] + h, u0[1]];
                let x0 = model.eval_uv(u0, &z, Side::Front).unwrap();
                let x1 = model.eval_uv(u1, &z, Side::Front).unwrap();
                max_slope = max_slope.max(norm3(sub3(x1, x0)) / h);
            }
        }
        assert!(max_slope.is_finite() && max_slope < 1e3, "slope {max_slope}");
    }

    #[test]
    fn training_loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut model = IspModel::new(4, 6, 3, 2, &mut rng).unwrap();
        // keep the L1 residuals far from the kink so central differences
        // see a smooth function
        let z = model.latent_table[1].clone();
        let points = [
            (Side::Front, [0.2, 0.3], 1usize),
            (Side::Back, [-0.4, 0.1], 0),
            (Side::Front, [0.0, -0.5], 2),
        ];
        let sdf = points
            .iter()
            .map(|&(side, u, label)| {
                let (s, _) = model.eval_pattern(u, &z, side).unwrap();
                (side, u, s - 0.5, label)
            })
            .collect();
        let batch = Batch {
            sdf,
            surface: vec![
                (Side::Front, [0.1, 0.1], [0.2, -0.3, 0.4]),
                (Side::Back, [-0.2, 0.2], [0.0, 0.1, -0.1]),
            ],
            seams: vec![([0.5, 0.0], [0.5, 0.1])],
        };
        let x0 = model.flat_params();
        let err = crate::optim::fd_check(
            |p: &[f64]| {
                model.set_flat_params(p);
                isp_loss_grad(&model, 1, &batch).unwrap()
            },
            &x0,
            1e-4,
        );
        assert!(err < 1e-4, "fd error {err}");
    }

    #[test]
    fn latent_regularizer_drives_z_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = IspModel::new(4, 6, 2, 1, &mut rng).unwrap();
        model.latent_table[0] = vec![0.5, -0.3, 0.2, 0.8];
        let empty = Batch::default();
        let mut flat = model.flat_params();
        let mut adam = AdamState::new(flat.len(), 0.05);
        for _ in 0..400 {
            let (_, grads) = isp_loss_grad_flat(&mut model, &flat, 0, &empty).unwrap();
            adam_step(&mut flat, &grads, &mut adam).unwrap();
        }
        model.set_flat_params(&flat);
        let zn = norm2([model.latent_table[0][0], model.latent_table[0][1]])
            + norm2([model.latent_table[0][2], model.latent_table[0][3]]);
        assert!(zn < 1e-2, "latent norm {zn}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = IspModel::new(4, 6, 2, 1, &mut rng).unwrap();
        assert!(matches!(
            train_isp(&mut model, &[], &IspTrainParams::default(), &mut rng),
            Err(Error::EmptyDataset)
        ));
    }

    // -- trained fixture --------------------------------------------------

    struct Fixture {
        model: IspModel,
        garment: TrainGarment,
    }

    fn trained() -> &'static Fixture {
        static FIX: OnceLock<Fixture> = OnceLock::new();
        FIX.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let garment = synth::dome_garment(0.6, 0.5, 600, &mut rng);
            let mut model = IspModel::new(8, 32, 3, 1, &mut rng).unwrap();
            let params = IspTrainParams {
                epochs: 140,
                lr: 3e-3,
                sdf_samples: 1500,
                seam_samples: 16,
                batch: 64,
            };
            let report = train_isp(&mut model, std::slice::from_ref(&garment), &params, &mut rng)
                .unwrap();
            assert!(
                report.last().unwrap() < &(report[0] * 0.5),
                "loss did not halve: {} -> {}",
                report[0],
                report.last().unwrap()
            );
            Fixture { model, garment }
        })
    }

    #[test]
    fn trained_sdf_sign_accuracy_on_grid() {
        let fix = trained();
        let z = &fix.model.latent_table[0];
        let poly = &fix.garment.front.boundary;
        let n = 64;
        let mut correct = 0;
        for i in 0..n {
            for j in 0..n {
                let u = [
                    2.0 * j as f64 / (n - 1) as f64 - 1.0,
                    2.0 * i as f64 / (n - 1) as f64 - 1.0,
                ];
                let (s, _) = fix.model.eval_pattern(u, z, Side::Front).unwrap();
                if (s <= 0.0) == point_in_polygon(poly, u) {
                    correct += 1;
                }
            }
        }
        let acc = correct as f64 / (n * n) as f64;
        assert!(acc >= 0.99, "sign accuracy {acc}");
    }

    #[test]
    fn trained_centroid_inside_corner_outside() {
        let fix = trained();
        let z = &fix.model.latent_table[0];
        let (s_in, _) = fix.model.eval_pattern([0.0, 0.0], z, Side::Front).unwrap();
        assert!(s_in < 0.0, "centroid sdf {s_in}");
        let (s_out, _) = fix.model.eval_pattern([1.0, 1.0], z, Side::Front).unwrap();
        assert!(s_out > 0.0, "corner sdf {s_out}");
    }

    #[test]
    fn trained_uv_residual_small() {
        let fix = trained();
        let z = &fix.model.latent_table[0];
        let mut worst = 0.0f64;
        for &(u, x) in fix.garment.surface_front.iter().take(50) {
            let pred = fix.model.eval_uv(u, z, Side::Front).unwrap();
            worst = worst.max(norm3(sub3(pred, x)));
        }
        assert!(worst < 5e-3, "uv residual {worst}");
    }

    #[test]
    fn two_garments_get_distinct_latents() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g1 = synth::dome_garment(0.5, 0.7, 50, &mut rng);
        let g2 = synth::dome_garment(0.8, 0.9, 50, &mut rng);
        let mut model = IspModel::new(4, 8, 3, 2, &mut rng).unwrap();
        let params =
            IspTrainParams { epochs: 2, lr: 1e-3, sdf_samples: 100, seam_samples: 8, batch: 32 };
        train_isp(&mut model, &[g1, g2], &params, &mut rng).unwrap();
        let d: f64 = model.latent_table[0]
            .iter()
            .zip(&model.latent_table[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(d > 0.0);
    }

    // -- coverage ----------------------------------------------------------

    #[test]
    fn coverage_single_garment_equals_own_maps() {
        let fix = trained();
        let z = fix.model.latent_table[0].clone();
        let size = 24;
        let cov = max_coverage_map(&fix.model, &[z.clone()], Side::Front, size).unwrap();
        let occ = occupancy_map(&fix.model, &z, Side::Front, size).unwrap();
        for i in 0..size {
            for j in 0..size {
                assert_eq!(cov.get(i, j, 3), occ.get(i, j, 0));
                if occ.get(i, j, 0) > 0.5 {
                    let x = fix.model.eval_uv(cov.pixel_uv(i, j), &z, Side::Front).unwrap();
                    for k in 0..3 {
                        assert!((cov.get(i, j, k) as f64 - x[k]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn coverage_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = IspModel::new(4, 8, 2, 2, &mut rng).unwrap();
        let latents = vec![vec![0.3, -0.2, 0.1, 0.4], vec![-0.5, 0.2, 0.0, -0.1]];
        let size = 16;
        let cov = max_coverage_map(&model, &latents, Side::Back, size).unwrap();
        for i in 0..size {
            for j in 0..size {
                let u = cov.pixel_uv(i, j);
                let mut acc = [0.0f64; 3];
                let mut m = 0usize;
                for z in &latents {
                    if model.eval_pattern(u, z, Side::Back).unwrap().0 <= 0.0 {
                        let x = model.eval_uv(u, z, Side::Back).unwrap();
                        for k in 0..3 {
                            acc[k] += x[k];
                        }
                        m += 1;
                    }
                }
                assert_eq!(cov.get(i, j, 3) > 0.5, m > 0);
                if m > 0 {
                    for k in 0..3 {
                        assert!((cov.get(i, j, k) as f64 - acc[k] / m as f64).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn coverage_requires_latents() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = IspModel::new(4, 8, 2, 1, &mut rng).unwrap();
        assert!(matches!(
            max_coverage_map(&model, &[], Side::Front, 8),
            Err(Error::EmptySet)
        ));
    }

    // -- meshing -----------------------------------------------------------

    #[test]
    fn circle_panel_area_within_two_percent() {
        let r = 0.6;
        let field = SideField {
            sdf: Box::new(move |u: Vec2| norm2(u) - r),
            position: Box::new(|u: Vec2| [u[0], u[1], 0.0]),
            label: Box::new(|_| 0),
        };
        let back = SideField {
            sdf: Box::new(move |u: Vec2| norm2(u) - r),
            position: Box::new(|u: Vec2| [u[0], u[1], -0.01]),
            label: Box::new(|_| 0),
        };
        let mesh = mesh_fields(&field, &back, 64, &[]).unwrap();
        mesh.validate().unwrap();
        // both sides flat, so total area = 2 * circle area
        let target = 2.0 * std::f64::consts::PI * r * r;
        let area = mesh.total_area();
        assert!((area - target).abs() / target < 0.02, "area {area} vs {target}");
    }

    #[test]
    fn contour_vertices_lie_near_zero_level() {
        let r = 0.55;
        let sdf = move |u: Vec2| norm2(u) - r;
        let (verts, faces) = mesh_side(&sdf, 48).unwrap();
        let mesh = TriMesh::new(verts.iter().map(|&u| [u[0], u[1], 0.0]).collect(), faces);
        let cell = 2.0 / 47.0;
        for loop_ in mesh.boundary_loops() {
            for &v in &loop_ {
                let s = sdf([mesh.vertices[v][0], mesh.vertices[v][1]]);
                // boundary vertices are crossings or inside nodes of cut cells
                assert!(s.abs() <= cell * 1.5, "contour sdf {s}");
            }
        }
    }

    #[test]
    fn sewn_rectangle_panels_form_tube() {
        // skirt-like rectangle panels: left seam label 0, right seam 1,
        // waist/hem free (label 2)
        let w = 0.7;
        let h = 0.5;
        let rect_sdf = move |u: Vec2| (u[0].abs() - w).max(u[1].abs() - h);
        let label = move |u: Vec2| {
            let dx = w - u[0].abs();
            let dy = h - u[1].abs();
            if dx < dy {
                if u[0] < 0.0 {
                    0
                } else {
                    1
                }
            } else {
                2
            }
        };
        let radius = 0.3;
        let front_pos = move |u: Vec2| {
            let t = u[0] / w * std::f64::consts::FRAC_PI_2;
            [radius * t.sin(), u[1], radius * t.cos()]
        };
        let back_pos = move |u: Vec2| {
            let t = u[0] / w * std::f64::consts::FRAC_PI_2;
            [radius * t.sin(), u[1], -radius * t.cos()]
        };
        let front = SideField {
            sdf: Box::new(rect_sdf),
            position: Box::new(front_pos),
            label: Box::new(label),
        };
        let back = SideField {
            sdf: Box::new(rect_sdf),
            position: Box::new(back_pos),
            label: Box::new(label),
        };
        let mesh = mesh_fields(&front, &back, 32, &[0, 1]).unwrap();
        mesh.validate().unwrap();
        let loops = mesh.boundary_loops();
        assert_eq!(loops.len(), 2, "expected waist and hem loops");
        // seam vertices meet in 3D: paired points nearly coincide
        assert_eq!(mesh.connected_component_count(), 1);
    }

    #[test]
    fn empty_field_gives_empty_panel_error() {
        let sdf = |_: Vec2| 1.0;
        assert!(matches!(mesh_side(&sdf, 16), Err(Error::EmptyPanel)));
    }

    // -- latent recovery ---------------------------------------------------

    #[test]
    fn recover_latent_reproduces_occupancy() {
        let fix = trained();
        let z_true = fix.model.latent_table[0].clone();
        let size = 32;
        let occ_f = occupancy_map(&fix.model, &z_true, Side::Front, size).unwrap();
        let occ_b = occupancy_map(&fix.model, &z_true, Side::Back, size).unwrap();
        let params = RecoverParams { iters: 400, ..RecoverParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = recover_latent(&fix.model, &occ_f, &occ_b, &params, &mut rng).unwrap();
        let rec_f = occupancy_map(&fix.model, &z.0, Side::Front, size).unwrap();
        let iou = occupancy_iou(&occ_f, &rec_f);
        assert!(iou >= 0.95, "IoU {iou}");
    }

    #[test]
    fn recover_is_robust_to_flipped_pixels() {
        let fix = trained();
        let z_true = fix.model.latent_table[0].clone();
        let size = 32;
        let clean_f = occupancy_map(&fix.model, &z_true, Side::Front, size).unwrap();
        let clean_b = occupancy_map(&fix.model, &z_true, Side::Back, size).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut noisy_f = clean_f.clone();
        let mut noisy_b = clean_b.clone();
        for m in [&mut noisy_f, &mut noisy_b] {
            for x in &mut m.data {
                if rng.gen_bool(0.05) {
                    *x = 1.0 - *x;
                }
            }
        }
        let params = RecoverParams { iters: 400, ..RecoverParams::default() };
        let z = recover_latent(&fix.model, &noisy_f, &noisy_b, &params, &mut rng).unwrap();
        let rec = occupancy_map(&fix.model, &z.0, Side::Front, size).unwrap();
        let iou = occupancy_iou(&clean_f, &rec);
        assert!(iou >= 0.90, "IoU {iou}");
    }

    #[test]
    fn warm_start_hinge_losses_vanish() {
        let fix = trained();
        let z = fix.model.latent_table[0].clone();
        let size = 24;
        let occ_f = occupancy_map(&fix.model, &z, Side::Front, size).unwrap();
        let occ_b = occupancy_map(&fix.model, &z, Side::Back, size).unwrap();
        let (loss, _) = recover_loss_grad(
            &fix.model,
            [(&occ_f, Side::Front), (&occ_b, Side::Back)],
            &z,
            0.0,
            None,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn all_zero_occupancy_uses_only_outside_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = IspModel::new(4, 8, 2, 1, &mut rng).unwrap();
        let zero = GridMap::zeros(8, 8, 1, MapSemantics::Occupancy);
        let z = vec![0.2, -0.1, 0.3, 0.0];
        let (loss, _) = recover_loss_grad(
            &model,
            [(&zero, Side::Front), (&zero, Side::Back)],
            &z,
            0.0,
            None,
        )
        .unwrap();
        // every contribution is an outside hinge max(0, -s)
        let mut expect = 0.0;
        for (map, side) in [(&zero, Side::Front), (&zero, Side::Back)] {
            for i in 0..8 {
                for j in 0..8 {
                    let (s, _) = model.eval_pattern(map.pixel_uv(i, j), &z, side).unwrap();
                    expect += (-s).max(0.0);
                }
            }
        }
        expect /= 128.0;
        assert!((loss - expect).abs() < 1e-12);
    }
}
