//! Stand-in parametric body: a capsule-limb humanoid with an analytic shape
//! basis, diffused neural skinning and garment transfer onto the neutral
//! shape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{GridMap, MapSemantics};
use crate::math::{
    add3, closest_point_on_triangle, cross3, dot3, mat3_mul_vec, norm3, normalize3, scale3,
    standard_normal, sub3, Rigid3, Vec3,
};
use crate::mesh::TriMesh;
use crate::nnet::{Activation, Mlp};
use crate::optim::{adam_step, AdamState};

#[derive(Debug, Clone)]
pub struct Joint {
    /// `None` only for the root (index 0); parents precede children.
    pub parent: Option<usize>,
    /// Rest-space position.
    pub rest: Vec3,
}

/// Per-joint local rotations (about each joint's rest position, composed
/// down the kinematic chain) plus a root translation.
#[derive(Debug, Clone)]
pub struct Pose {
    pub rotations: Vec<[[f64; 3]; 3]>,
    pub root_translation: Vec3,
}

impl Pose {
    pub fn identity(n_joints: usize) -> Self {
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Pose { rotations: vec![eye; n_joints], root_translation: [0.0; 3] }
    }
}

/// Rigged body: surface mesh, joint hierarchy and per-vertex skinning
/// weights. The shape basis is analytic (global scale about the root plus a
/// limb-radius inflation) and the pose displacement basis is zero, so
/// `shape_displacement` vanishes at `beta = 0` by construction.
#[derive(Debug, Clone)]
pub struct BodyModel {
    pub surface: TriMesh,
    pub joints: Vec<Joint>,
    /// `N_B x J`, rows non-negative and summing to 1.
    pub skin_weights: Vec<Vec<f64>>,
}

pub const SHAPE_DIM: usize = 2;

impl BodyModel {
    pub fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        let j = self.joints.len();
        if self.skin_weights.len() != self.surface.vertices.len() {
            return Err(Error::LengthMismatch(self.surface.vertices.len(), self.skin_weights.len()));
        }
        for (i, joint) in self.joints.iter().enumerate() {
            match joint.parent {
                None if i != 0 => return Err(Error::TopologyMismatch),
                Some(p) if p >= i => return Err(Error::TopologyMismatch),
                _ => {}
            }
        }
        for (i, row) in self.skin_weights.iter().enumerate() {
            if row.len() != j {
                return Err(Error::LengthMismatch(j, row.len()));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::BadWeightRow(i));
            }
        }
        Ok(())
    }

    /// Skeleton bones as (parent, child) joint pairs.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.parent.map(|p| (p, i)))
            .collect()
    }

    /// World transform of every joint under `pose` (rest space -> posed
    /// space).
    pub fn joint_transforms(&self, pose: &Pose) -> Result<Vec<Rigid3>> {
        if pose.rotations.len() != self.joints.len() {
            return Err(Error::LengthMismatch(self.joints.len(), pose.rotations.len()));
        }
        let mut world: Vec<Rigid3> = Vec::with_capacity(self.joints.len());
        for (i, joint) in self.joints.iter().enumerate() {
            let r = pose.rotations[i];
            // rotate about the joint's rest position
            let mut local = Rigid3 {
                rotation: r,
                translation: sub3(joint.rest, mat3_mul_vec(&r, joint.rest)),
            };
            if i == 0 {
                local.translation = add3(local.translation, pose.root_translation);
            }
            let t = match joint.parent {
                Some(p) => world[p].compose(&local),
                None => local,
            };
            world.push(t);
        }
        Ok(world)
    }

    /// Distance from `p` to the nearest skeleton bone segment, and the
    /// closest point on it.
    pub fn nearest_bone_point(&self, p: Vec3) -> Vec3 {
        let mut best = (f64::INFINITY, p);
        for (a, b) in self.bones() {
            let (pa, pb) = (self.joints[a].rest, self.joints[b].rest);
            let d = sub3(pb, pa);
            let len2 = dot3(d, d);
            let t = if len2 > 0.0 { (dot3(sub3(p, pa), d) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = add3(pa, scale3(d, t));
            let dist = norm3(sub3(p, q));
            if dist < best.0 {
                best = (dist, q);
            }
        }
        best.1
    }

    /// Analytic shape displacement `B_beta(p)`: `beta[0]` scales about the
    /// root joint, `beta[1]` inflates along the radial direction from the
    /// nearest bone. Linear in beta and exactly zero at beta = 0.
    pub fn shape_displacement(&self, p: Vec3, beta: &[f64]) -> Vec3 {
        assert_eq!(beta.len(), SHAPE_DIM);
        let root = self.joints[0].rest;
        let mut d = scale3(sub3(p, root), beta[0]);
        if beta[1] != 0.0 {
            let radial = sub3(p, self.nearest_bone_point(p));
            let n = norm3(radial);
            if n > 1e-12 {
                d = add3(d, scale3(radial, beta[1] / n));
            }
        }
        d
    }

    /// The body surface under shape and pose, skinned with the weight
    /// matrix rows.
    pub fn posed_surface(&self, beta: &[f64], pose: &Pose) -> Result<TriMesh> {
        let transforms = self.joint_transforms(pose)?;
        let vertices = self
            .surface
            .vertices
            .iter()
            .zip(&self.skin_weights)
            .map(|(&v, row)| {
                let shaped = add3(v, self.shape_displacement(v, beta));
                lbs(row, &transforms, shaped)
            })
            .collect();
        Ok(TriMesh { vertices, faces: self.surface.faces.clone(), uv: None })
    }
}

/// Linear blend skinning written as `p + sum_j w_j (T_j p - p)` so identity
/// transforms reproduce `p` exactly even when the weights sum to 1 only up
/// to rounding.
pub fn lbs(weights: &[f64], transforms: &[Rigid3], p: Vec3) -> Vec3 {
    let mut out = p;
    for (w, t) in weights.iter().zip(transforms) {
        if *w != 0.0 {
            out = add3(out, scale3(sub3(t.apply(p), p), *w));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// capsule humanoid

/// Closed capsule mesh from `p0` to `p1`: a cylinder wall with hemispherical
/// caps, `n_around` vertices per ring and `n_cap` latitude rows per cap.
pub fn capsule(p0: Vec3, p1: Vec3, radius: f64, n_around: usize, n_cap: usize) -> TriMesh {
    assert!(n_around >= 3 && n_cap >= 1);
    let axis = normalize3(sub3(p1, p0));
    // deterministic frame; bones are never exactly diagonal here
    let pick = if axis[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
    let u = normalize3(cross3(axis, pick));
    let v = cross3(axis, u);

    let mut vertices: Vec<Vec3> = Vec::new();
    vertices.push(sub3(p0, scale3(axis, radius))); // bottom pole
    let mut ring = |center: Vec3, phi: f64| {
        let (rr, h) = (radius * phi.cos(), radius * phi.sin());
        for k in 0..n_around {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / n_around as f64;
            let radial = add3(scale3(u, theta.cos()), scale3(v, theta.sin()));
            vertices.push(add3(center, add3(scale3(radial, rr), scale3(axis, h))));
        }
    };
    for k in 1..=n_cap {
        ring(p0, -std::f64::consts::FRAC_PI_2 * (1.0 - k as f64 / n_cap as f64));
    }
    for k in 0..n_cap {
        ring(p1, std::f64::consts::FRAC_PI_2 * k as f64 / n_cap as f64);
    }
    let top_pole = vertices.len();
    vertices.push(add3(p1, scale3(axis, radius)));

    let n_rings = 2 * n_cap;
    let ring_base = |r: usize| 1 + r * n_around;
    let mut faces = Vec::new();
    for k in 0..n_around {
        let k1 = (k + 1) % n_around;
        faces.push([0, ring_base(0) + k1, ring_base(0) + k]);
        faces.push([top_pole, ring_base(n_rings - 1) + k, ring_base(n_rings - 1) + k1]);
    }
    for r in 0..n_rings - 1 {
        let (lo, hi) = (ring_base(r), ring_base(r + 1));
        for k in 0..n_around {
            let k1 = (k + 1) % n_around;
            faces.push([lo + k, lo + k1, hi + k1]);
            faces.push([lo + k, hi + k1, hi + k]);
        }
    }
    TriMesh::new(vertices, faces)
}

fn mirror_x(mesh: &TriMesh) -> TriMesh {
    let vertices = mesh.vertices.iter().map(|v| [-v[0], v[1], v[2]]).collect();
    let faces = mesh.faces.iter().map(|f| [f[0], f[2], f[1]]).collect();
    TriMesh { vertices, faces, uv: None }
}

const PELVIS: usize = 0;
const SPINE: usize = 1;
const CHEST: usize = 2;
const HEAD: usize = 3;
const SHOULDER_L: usize = 4;
const SHOULDER_R: usize = 5;
const ELBOW_L: usize = 6;
const ELBOW_R: usize = 7;
const HIP_L: usize = 8;
const HIP_R: usize = 9;
const KNEE_L: usize = 10;
const KNEE_R: usize = 11;

/// Joint index with left/right swapped; identity for the torso chain.
pub fn mirror_joint(j: usize) -> usize {
    match j {
        SHOULDER_L => SHOULDER_R,
        SHOULDER_R => SHOULDER_L,
        ELBOW_L => ELBOW_R,
        ELBOW_R => ELBOW_L,
        HIP_L => HIP_R,
        HIP_R => HIP_L,
        KNEE_L => KNEE_R,
        KNEE_R => KNEE_L,
        other => other,
    }
}

/// 12-joint capsule humanoid, exactly mirror-symmetric in x (right-side
/// limbs are built by reflecting the left-side capsules). Roughly 1.6 units
/// tall, pelvis at y = 0.9.
pub fn capsule_body() -> BodyModel {
    let joints = vec![
        Joint { parent: None, rest: [0.0, 0.9, 0.0] },           // pelvis
        Joint { parent: Some(PELVIS), rest: [0.0, 1.05, 0.0] },  // spine
        Joint { parent: Some(SPINE), rest: [0.0, 1.25, 0.0] },   // chest
        Joint { parent: Some(CHEST), rest: [0.0, 1.5, 0.0] },    // head
        Joint { parent: Some(CHEST), rest: [-0.22, 1.38, 0.0] }, // shoulder l
        Joint { parent: Some(CHEST), rest: [0.22, 1.38, 0.0] },  // shoulder r
        Joint { parent: Some(SHOULDER_L), rest: [-0.52, 1.38, 0.0] }, // elbow l
        Joint { parent: Some(SHOULDER_R), rest: [0.52, 1.38, 0.0] },  // elbow r
        Joint { parent: Some(PELVIS), rest: [-0.12, 0.82, 0.0] }, // hip l
        Joint { parent: Some(PELVIS), rest: [0.12, 0.82, 0.0] },  // hip r
        Joint { parent: Some(HIP_L), rest: [-0.13, 0.42, 0.0] },  // knee l
        Joint { parent: Some(HIP_R), rest: [0.13, 0.42, 0.0] },   // knee r
    ];
    let j_at = |j: usize| joints[j].rest;

    // capsules: (start, end, radius, parent joint, child joint); the end
    // point need not be a joint (head top, shins)
    struct Limb {
        a: Vec3,
        b: Vec3,
        r: f64,
        ja: usize,
        jb: usize,
        mirrored: bool,
    }
    let mut limbs = vec![
        Limb { a: j_at(PELVIS), b: j_at(SPINE), r: 0.16, ja: PELVIS, jb: SPINE, mirrored: false },
        Limb { a: j_at(SPINE), b: j_at(CHEST), r: 0.15, ja: SPINE, jb: CHEST, mirrored: false },
        Limb { a: j_at(CHEST), b: j_at(HEAD), r: 0.09, ja: CHEST, jb: HEAD, mirrored: false },
        Limb {
            a: add3(j_at(HEAD), [0.0, 0.02, 0.0]),
            b: add3(j_at(HEAD), [0.0, 0.12, 0.0]),
            r: 0.1,
            ja: HEAD,
            jb: HEAD,
            mirrored: false,
        },
    ];
    let left = [
        (j_at(CHEST), j_at(SHOULDER_L), 0.07, CHEST, SHOULDER_L),
        (j_at(SHOULDER_L), j_at(ELBOW_L), 0.055, SHOULDER_L, ELBOW_L),
        (j_at(ELBOW_L), add3(j_at(ELBOW_L), [-0.26, 0.0, 0.0]), 0.05, ELBOW_L, ELBOW_L),
        (j_at(PELVIS), j_at(HIP_L), 0.1, PELVIS, HIP_L),
        (j_at(HIP_L), j_at(KNEE_L), 0.08, HIP_L, KNEE_L),
        (j_at(KNEE_L), add3(j_at(KNEE_L), [0.0, -0.32, 0.0]), 0.065, KNEE_L, KNEE_L),
    ];
    for &(a, b, r, ja, jb) in &left {
        limbs.push(Limb { a, b, r, ja, jb, mirrored: false });
        limbs.push(Limb { a, b, r, ja: mirror_joint(ja), jb: mirror_joint(jb), mirrored: true });
    }

    let n_joints = joints.len();
    // skinning segments: smooth weights fall off with distance to each
    // bone segment, so the weight field is a continuous function of
    // position (and exactly mirror-symmetric)
    let mut segments: Vec<(Vec3, Vec3, usize, usize)> = Vec::new();
    for limb in &limbs {
        let (a, b) = if limb.mirrored {
            ([-limb.a[0], limb.a[1], limb.a[2]], [-limb.b[0], limb.b[1], limb.b[2]])
        } else {
            (limb.a, limb.b)
        };
        segments.push((a, b, limb.ja, limb.jb));
    }
    let tau = 0.08;
    let weight_row = |p: Vec3| -> Vec<f64> {
        let mut row = vec![0.0; n_joints];
        for &(a, b, drive, _) in &segments {
            let axis = sub3(b, a);
            let len2 = dot3(axis, axis);
            let t = if len2 > 0.0 { (dot3(sub3(p, a), axis) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = add3(a, scale3(axis, t));
            row[drive] += (-norm3(sub3(p, q)) / tau).exp();
        }
        let sum: f64 = row.iter().sum();
        for r in &mut row {
            *r /= sum;
        }
        // drop negligible weights so far joints have exactly zero influence
        for r in &mut row {
            if *r < 5e-3 {
                *r = 0.0;
            }
        }
        let sum: f64 = row.iter().sum();
        for r in &mut row {
            *r /= sum;
        }
        row
    };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut skin_weights: Vec<Vec<f64>> = Vec::new();
    for limb in &limbs {
        let mut part = capsule(limb.a, limb.b, limb.r, 8, 2);
        if limb.mirrored {
            part = mirror_x(&part);
        }
        let base = vertices.len();
        for &p in &part.vertices {
            skin_weights.push(weight_row(p));
            vertices.push(p);
        }
        for f in &part.faces {
            faces.push([f[0] + base, f[1] + base, f[2] + base]);
        }
    }
    BodyModel { surface: TriMesh::new(vertices, faces), joints, skin_weights }
}

// ---------------------------------------------------------------------------
// closest-point BVH

#[derive(Debug, Clone)]
struct BvhNode {
    bb_min: Vec3,
    bb_max: Vec3,
    /// Leaf: (start, count) into `order`; inner: (left, right) child nodes.
    a: usize,
    b: usize,
    leaf: bool,
}

/// Bounding-volume hierarchy over a triangle mesh supporting exact
/// closest-point and face-normal signed-distance queries. Immutable after
/// construction, so queries are thread-safe.
#[derive(Debug, Clone)]
pub struct TriBvh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

const BVH_LEAF: usize = 8;

impl TriBvh {
    pub fn build(mesh: &TriMesh) -> TriBvh {
        let centroids: Vec<Vec3> = (0..mesh.faces.len()).map(|f| mesh.face_centroid(f)).collect();
        let mut bvh = TriBvh {
            vertices: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            nodes: Vec::new(),
            order: (0..mesh.faces.len()).collect(),
        };
        if !bvh.faces.is_empty() {
            bvh.split(0, mesh.faces.len(), &centroids);
        }
        bvh
    }

    fn bounds(&self, start: usize, count: usize) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &f in &self.order[start..start + count] {
            for &vi in &self.faces[f] {
                let p = self.vertices[vi];
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        (lo, hi)
    }

    fn split(&mut self, start: usize, count: usize, centroids: &[Vec3]) -> usize {
        let (bb_min, bb_max) = self.bounds(start, count);
        let id = self.nodes.len();
        self.nodes.push(BvhNode { bb_min, bb_max, a: start, b: count, leaf: true });
        if count <= BVH_LEAF {
            return id;
        }
        // median split along the widest centroid axis
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &f in &self.order[start..start + count] {
            for k in 0..3 {
                lo[k] = lo[k].min(centroids[f][k]);
                hi[k] = hi[k].max(centroids[f][k]);
            }
        }
        let axis = (0..3).max_by(|&i, &j| (hi[i] - lo[i]).total_cmp(&(hi[j] - lo[j]))).unwrap();
        if hi[axis] - lo[axis] < 1e-12 {
            return id;
        }
        self.order[start..start + count]
            .sort_by(|&f, &g| centroids[f][axis].total_cmp(&centroids[g][axis]));
        let half = count / 2;
        let left = self.split(start, half, centroids);
        let right = self.split(start + half, count - half, centroids);
        let node = &mut self.nodes[id];
        node.a = left;
        node.b = right;
        node.leaf = false;
        id
    }

    fn box_dist2(&self, node: &BvhNode, p: Vec3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let c = p[k].clamp(node.bb_min[k], node.bb_max[k]);
            d2 += (p[k] - c) * (p[k] - c);
        }
        d2
    }

    /// Distance, closest surface point and its face index.
    pub fn closest_point(&self, p: Vec3) -> (f64, Vec3, usize) {
        assert!(!self.faces.is_empty());
        let mut best = (f64::INFINITY, p, 0usize);
        self.query(0, p, &mut best);
        (best.0.sqrt(), best.1, best.2)
    }

    fn query(&self, node_id: usize, p: Vec3, best: &mut (f64, Vec3, usize)) {
        let node = &self.nodes[node_id];
        if self.box_dist2(node, p) >= best.0 {
            return;
        }
        if node.leaf {
            for &f in &self.order[node.a..node.a + node.b] {
                let [a, b, c] = self.faces[f];
                let q = closest_point_on_triangle(
                    p,
                    self.vertices[a],
                    self.vertices[b],
                    self.vertices[c],
                );
                let d = sub3(p, q);
                let d2 = dot3(d, d);
                if d2 < best.0 {
                    *best = (d2, q, f);
                }
            }
        } else {
            let (l, r) = (node.a, node.b);
            if self.box_dist2(&self.nodes[l], p) <= self.box_dist2(&self.nodes[r], p) {
                self.query(l, p, best);
                self.query(r, p, best);
            } else {
                self.query(r, p, best);
                self.query(l, p, best);
            }
        }
    }

    /// Signed distance with the sign taken from the closest face's normal
    /// (negative inside a closed, outward-oriented mesh).
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        let (d, q, f) = self.closest_point(p);
        let [a, b, c] = self.faces[f];
        let n = cross3(sub3(self.vertices[b], self.vertices[a]), sub3(self.vertices[c], self.vertices[a]));
        if dot3(sub3(p, q), n) < 0.0 {
            -d
        } else {
            d
        }
    }
}

// ---------------------------------------------------------------------------
// diffused skinning field

/// Neural skinning weights: 3D point -> probability simplex over joints.
#[derive(Debug, Clone)]
pub struct SkinField {
    pub net: Mlp,
}

const SKIN_LAYERS: usize = 9;

/// Input normalization applied before the network: roughly centers the
/// body and spreads it over [-2, 2].
const SKIN_CENTER: Vec3 = [0.0, 0.9, 0.0];
const SKIN_SCALE: f64 = 2.5;

/// Fourier feature frequencies for the field input encoding.
const SKIN_FREQS: [f64; 3] = [1.0, 2.0, 4.0];

impl SkinField {
    pub fn new<R: Rng>(hidden: usize, n_joints: usize, rng: &mut R) -> SkinField {
        let mut dims = vec![3 + 6 * SKIN_FREQS.len()];
        dims.extend(std::iter::repeat(hidden).take(SKIN_LAYERS - 1));
        dims.push(n_joints);
        SkinField { net: Mlp::new(&dims, Activation::LeakyRelu, None, true, rng).unwrap() }
    }

    /// Centered, rescaled point plus sin/cos features, which sharpen the
    /// fit around joint transitions.
    fn encode(p: Vec3) -> Vec<f64> {
        let q = scale3(sub3(p, SKIN_CENTER), SKIN_SCALE);
        let mut out = q.to_vec();
        for &f in &SKIN_FREQS {
            for &x in &q {
                out.push((f * x).sin());
                out.push((f * x).cos());
            }
        }
        out
    }

    pub fn weights(&self, p: Vec3) -> Vec<f64> {
        self.net.forward(&Self::encode(p)).unwrap().0
    }
}

/// Target weights for a training sample: inverse-distance-weighted average
/// of the `k` nearest body vertices' weight rows (the row itself when the
/// sample coincides with a vertex).
pub fn knn_weight_targets(body: &BodyModel, p: Vec3, k: usize) -> Vec<f64> {
    let n = body.surface.vertices.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let dist = |i: usize| norm3(sub3(p, body.surface.vertices[i]));
    idx.sort_by(|&i, &j| dist(i).total_cmp(&dist(j)));
    idx.truncate(k.min(n));
    if dist(idx[0]) < 1e-9 {
        return body.skin_weights[idx[0]].clone();
    }
    let mut target = vec![0.0; body.joints.len()];
    let mut total = 0.0;
    for &i in &idx {
        let w = 1.0 / dist(i);
        total += w;
        for (t, r) in target.iter_mut().zip(&body.skin_weights[i]) {
            *t += w * r;
        }
    }
    for t in &mut target {
        *t /= total;
    }
    target
}

#[derive(Debug, Clone)]
pub struct SkinTrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub knn: usize,
    /// Mini-batch size; 0 means full-batch.
    pub batch: usize,
}

impl Default for SkinTrainParams {
    fn default() -> Self {
        SkinTrainParams { epochs: 40, lr: 1e-3, knn: 30, batch: 64 }
    }
}

/// Fit the skinning field to k-NN targets by full-batch cross-entropy;
/// returns the per-epoch losses.
const MSE_WEIGHT: f64 = 5.0;

pub fn train_skin_field(
    body: &BodyModel,
    field: &mut SkinField,
    samples: &[Vec3],
    params: &SkinTrainParams,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let targets: Vec<Vec<f64>> =
        samples.iter().map(|&p| knn_weight_targets(body, p, params.knn)).collect();
    let mut theta = field.net.params();
    let mut adam = AdamState::new(theta.len(), params.lr);
    let n = samples.len();
    let batch = if params.batch == 0 { n } else { params.batch.min(n) };
    let mut losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        // cosine decay to 0.5% of the base rate
        let t = epoch as f64 / params.epochs.max(1) as f64;
        adam.lr = params.lr * (0.005 + 0.4975 * (1.0 + (std::f64::consts::PI * t).cos()));
        let mut loss = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let inv_b = 1.0 / (end - start) as f64;
            let mut grad = vec![0.0; theta.len()];
            for (p, t) in samples[start..end].iter().zip(&targets[start..end]) {
                let (y, tape) = field.net.forward(&SkinField::encode(*p))?;
                let mut dy = vec![0.0; y.len()];
                for j in 0..y.len() {
                    let yj = y[j].max(1e-12);
                    loss -= t[j] * yj.ln() / n as f64;
                    // squared-error companion term: cross-entropy alone is
                    // nearly flat in the small per-entry deviations that
                    // matter for pointwise weight accuracy
                    dy[j] = inv_b * (MSE_WEIGHT * 2.0 * (y[j] - t[j]) - t[j] / yj);
                }
                let (_, dtheta) = field.net.backward(tape, &dy);
                for (g, d) in grad.iter_mut().zip(&dtheta) {
                    *g += d;
                }
            }
            adam_step(&mut theta, &grad, &mut adam)?;
            field.net.set_params(&theta);
            start = end;
        }
        losses.push(loss);
    }
    Ok(losses)
}

/// Diffused skinning (shape displacement, then blend skinning with field
/// weights). Exact identity at `beta = 0` under the identity pose.
pub fn skin_point(
    body: &BodyModel,
    field: &SkinField,
    xbar: Vec3,
    beta: &[f64],
    pose: &Pose,
) -> Result<Vec3> {
    let w = field.weights(xbar);
    let transforms = body.joint_transforms(pose)?;
    let shaped = add3(xbar, body.shape_displacement(xbar, beta));
    Ok(lbs(&w, &transforms, shaped))
}

/// Skin every valid pixel of a rest-pose position map; invalid pixels stay
/// zero and the validity channel is copied through.
pub fn build_position_map(
    body: &BodyModel,
    field: &SkinField,
    coverage: &GridMap,
    beta: &[f64],
    pose: &Pose,
) -> Result<GridMap> {
    assert_eq!(coverage.channels, 4, "expected 3 position channels + validity");
    let transforms = body.joint_transforms(pose)?;
    let mut out =
        GridMap::zeros(coverage.height, coverage.width, 4, MapSemantics::Position);
    for i in 0..coverage.height {
        for j in 0..coverage.width {
            let px = coverage.pixel(i, j);
            if px[3] <= 0.5 {
                continue;
            }
            let xbar = [px[0] as f64, px[1] as f64, px[2] as f64];
            let w = field.weights(xbar);
            let shaped = add3(xbar, body.shape_displacement(xbar, beta));
            let x = lbs(&w, &transforms, shaped);
            let o = out.pixel_mut(i, j);
            o[0] = x[0] as f32;
            o[1] = x[1] as f32;
            o[2] = x[2] as f32;
            o[3] = px[3];
        }
    }
    Ok(out)
}

/// Undo the source body's shape displacement on a drape-registered garment:
/// each vertex moves by the negated mean shape displacement at the closest
/// body points of `n` Gaussian samples (std = distance to the body).
pub fn transfer_to_neutral<R: Rng>(
    garment: &TriMesh,
    body: &BodyModel,
    beta: &[f64],
    n: usize,
    rng: &mut R,
) -> TriMesh {
    assert!(n >= 1);
    let bvh = TriBvh::build(&body.surface);
    let vertices = garment
        .vertices
        .iter()
        .map(|&v| {
            let (d, _, _) = bvh.closest_point(v);
            let mut mean = [0.0; 3];
            for _ in 0..n {
                let s = [
                    v[0] + d * standard_normal(rng),
                    v[1] + d * standard_normal(rng),
                    v[2] + d * standard_normal(rng),
                ];
                let (_, phi, _) = bvh.closest_point(s);
                mean = add3(mean, body.shape_displacement(phi, beta));
            }
            sub3(v, scale3(mean, 1.0 / n as f64))
        })
        .collect();
    TriMesh { vertices, faces: garment.faces.clone(), uv: garment.uv.clone() }
}

pub const STYLE_SHAPE_WEIGHT: f64 = 10.0;
pub const STYLE_EDGE_WEIGHT: f64 = 0.5;

/// Style preservation terms: lambda_s * sum_f ||n_f - n_f^o||^2 plus
/// lambda_e * sum over boundary edges of 1 - cos(e, e^o).
pub fn style_loss(garment: &TriMesh, original: &TriMesh) -> Result<(f64, Vec<Vec3>)> {
    if garment.vertices.len() != original.vertices.len() || garment.faces != original.faces {
        return Err(Error::TopologyMismatch);
    }
    let mut loss = 0.0;
    let mut grad = vec![[0.0; 3]; garment.vertices.len()];
    for (f, &[ia, ib, ic]) in garment.faces.iter().enumerate() {
        let raw = cross3(
            sub3(garment.vertices[ib], garment.vertices[ia]),
            sub3(garment.vertices[ic], garment.vertices[ia]),
        );
        let len = norm3(raw);
        if len < 1e-15 {
            continue;
        }
        let n = scale3(raw, 1.0 / len);
        let no = original.face_normal(f);
        let d = sub3(n, no);
        loss += STYLE_SHAPE_WEIGHT * dot3(d, d);
        let dn = scale3(d, 2.0 * STYLE_SHAPE_WEIGHT);
        let d_raw = scale3(sub3(dn, scale3(n, dot3(n, dn))), 1.0 / len);
        let u = sub3(garment.vertices[ib], garment.vertices[ia]);
        let v = sub3(garment.vertices[ic], garment.vertices[ia]);
        let du = cross3(v, d_raw);
        let dv = cross3(d_raw, u);
        grad[ib] = add3(grad[ib], du);
        grad[ic] = add3(grad[ic], dv);
        grad[ia] = sub3(grad[ia], add3(du, dv));
    }
    for (a, b) in garment.boundary_edges() {
        let e = sub3(garment.vertices[b], garment.vertices[a]);
        let eo = sub3(original.vertices[b], original.vertices[a]);
        let (le, lo) = (norm3(e), norm3(eo));
        if le < 1e-15 || lo < 1e-15 {
            continue;
        }
        let eh = scale3(e, 1.0 / le);
        let eo_h = scale3(eo, 1.0 / lo);
        loss += STYLE_EDGE_WEIGHT * (1.0 - dot3(eh, eo_h));
        let deh = scale3(eo_h, -STYLE_EDGE_WEIGHT);
        let de = scale3(sub3(deh, scale3(eh, dot3(eh, deh))), 1.0 / le);
        grad[b] = add3(grad[b], de);
        grad[a] = sub3(grad[a], de);
    }
    Ok((loss, grad))
}

/// Eq.-S2-style cleanup after shape transfer: minimizes style terms plus
/// membrane, bending and body-collision energies over the vertices.
pub fn style_optimize(
    garment: &TriMesh,
    original: &TriMesh,
    body: &BodyModel,
    iters: usize,
) -> Result<TriMesh> {
    use crate::fit::{bend_energy, bend_rest, collision_energy, strain_energy_rest3d};
    if garment.vertices.len() != original.vertices.len() || garment.faces != original.faces {
        return Err(Error::TopologyMismatch);
    }
    let params = crate::fit::PhysicsParams::default();
    let rest_bend = bend_rest(original);
    let bvh = TriBvh::build(&body.surface);
    let mut current = garment.clone();
    let mut x: Vec<f64> = garment.vertices.iter().flatten().copied().collect();
    let mut adam = AdamState::new(x.len(), 1e-3);
    for _ in 0..iters {
        let (_, gs) = style_loss(&current, original)?;
        let (_, gm) = strain_energy_rest3d(&current, original, &params)?;
        let (_, gb) = bend_energy(&current, &rest_bend, &params);
        let (_, gc) = collision_energy(&current, &bvh, &params);
        let grad: Vec<f64> = (0..current.vertices.len())
            .flat_map(|i| (0..3).map(move |c| (i, c)))
            .map(|(i, c)| gs[i][c] + gm[i][c] + gb[i][c] + gc[i][c])
            .collect();
        adam_step(&mut x, &grad, &mut adam)?;
        for (v, chunk) in current.vertices.iter_mut().zip(x.chunks_exact(3)) {
            *v = [chunk[0], chunk[1], chunk[2]];
        }
    }
    Ok(current)
}
