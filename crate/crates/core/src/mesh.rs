//! Indexed triangle meshes, plane cutting and the category-specific cut
//! rules that subdivide garments into disk-topology pieces.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math::{add3, dot3, lerp2, lerp3, norm3, scale3, sub3, tri_area3, Vec2, Vec3};

/// On-plane tolerance in meters; vertices closer than this are snapped onto
/// the cut plane to avoid sliver triangles.
pub const PLANE_EPS: f64 = 1e-9;

/// Indexed triangle mesh with optional per-vertex 2D pattern coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise vertex index triples.
    pub faces: Vec<[usize; 3]>,
    pub uv: Option<Vec<Vec2>>,
}

/// Plane `{p : normal . p = offset}` with unit normal.
#[derive(Debug, Clone, Copy)]
pub struct CutPlane {
    pub normal: Vec3,
    pub offset: f64,
}

impl CutPlane {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        let n = norm3(normal);
        assert!(n > 0.0, "plane normal must be nonzero");
        CutPlane { normal: scale3(normal, 1.0 / n), offset: offset / n }
    }

    /// Sheared plane `z = a*y + b`, i.e. normal (0, -a, 1), offset b.
    pub fn sheared_z(a: f64, b: f64) -> Self {
        CutPlane::new([0.0, -a, 1.0], b)
    }

    pub fn signed_distance(&self, p: Vec3) -> f64 {
        dot3(self.normal, p) - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GarmentCategory {
    Shirt,
    ShirtOpen,
    Trousers,
    Skirt,
}

impl GarmentCategory {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shirt" => Some(GarmentCategory::Shirt),
            "shirt-open" | "shirt_open" => Some(GarmentCategory::ShirtOpen),
            "trousers" => Some(GarmentCategory::Trousers),
            "skirt" => Some(GarmentCategory::Skirt),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GarmentCategory::Shirt => "shirt",
            GarmentCategory::ShirtOpen => "shirt-open",
            GarmentCategory::Trousers => "trousers",
            GarmentCategory::Skirt => "skirt",
        }
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        TriMesh { vertices, faces, uv: None }
    }

    /// Check the structural invariants: index ranges, non-degenerate faces
    /// and consistent orientation (every interior edge appears exactly once
    /// in each direction).
    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if let Some(uv) = &self.uv {
            if uv.len() != self.vertices.len() {
                return Err(Error::LengthMismatch(uv.len(), self.vertices.len()));
            }
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                if f[k] >= self.vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: f[k],
                        count: self.vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace(fi));
            }
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                *directed.entry(e).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count > 1 || (directed.contains_key(&(b, a)) && directed[&(b, a)] > 1) {
                return Err(Error::InconsistentOrientation(a, b));
            }
        }
        Ok(())
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| tri_area3(self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]))
            .sum()
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        scale3(add3(add3(self.vertices[a], self.vertices[b]), self.vertices[c]), 1.0 / 3.0)
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        crate::math::normalize3(crate::math::cross3(
            sub3(self.vertices[b], self.vertices[a]),
            sub3(self.vertices[c], self.vertices[a]),
        ))
    }

    /// Directed boundary edges: face edges whose reverse is not present.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut directed = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                directed.insert((f[k], f[(k + 1) % 3]));
            }
        }
        directed
            .iter()
            .filter(|&&(a, b)| !directed.contains(&(b, a)))
            .cloned()
            .collect()
    }

    /// Ordered boundary vertex cycles; every boundary edge appears in exactly
    /// one cycle. Cycles follow face orientation (interior on the left).
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        let edges = self.boundary_edges();
        let mut outgoing: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(a, b) in &edges {
            outgoing.entry(a).or_default().push(b);
        }
        // deterministic traversal order
        for v in outgoing.values_mut() {
            v.sort_unstable();
        }
        let mut starts: Vec<usize> = outgoing.keys().cloned().collect();
        starts.sort_unstable();
        let mut loops = Vec::new();
        for start in starts {
            while outgoing.get(&start).map_or(false, |v| !v.is_empty()) {
                let mut cycle = vec![start];
                let mut cur = outgoing.get_mut(&start).unwrap().remove(0);
                while cur != start {
                    cycle.push(cur);
                    let next_list = outgoing
                        .get_mut(&cur)
                        .expect("boundary edge chain broken: non-manifold boundary");
                    cur = next_list.remove(0);
                }
                loops.push(cycle);
            }
        }
        loops
    }

    pub fn connected_component_count(&self) -> usize {
        let mut uf = UnionFind::new(self.faces.len());
        let mut edge_face: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some(&other) = edge_face.get(&key) {
                    uf.union(fi, other);
                } else {
                    edge_face.insert(key, fi);
                }
            }
        }
        let mut roots = std::collections::HashSet::new();
        for i in 0..self.faces.len() {
            roots.insert(uf.find(i));
        }
        roots.len()
    }

    fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// Number of vertices referenced by at least one face.
    fn used_vertex_count(&self) -> usize {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &v in f {
                used[v] = true;
            }
        }
        used.iter().filter(|&&u| u).count()
    }
}

/// True iff the mesh is a topological disk: Euler characteristic 1, one
/// boundary loop, one connected component.
pub fn is_disk_topology(mesh: &TriMesh) -> bool {
    if mesh.faces.is_empty() {
        return false;
    }
    let v = mesh.used_vertex_count() as i64;
    let e = mesh.edge_count() as i64;
    let f = mesh.faces.len() as i64;
    v - e + f == 1 && mesh.boundary_loops().len() == 1 && mesh.connected_component_count() == 1
}

/// Split every face that crosses `plane` so that no output face straddles it.
///
/// Edges whose endpoints have strictly opposite signed distances are split at
/// the intersection point; vertices within [`PLANE_EPS`] are snapped onto the
/// plane and shared between both sides.
pub fn cut_by_plane(mesh: &TriMesh, plane: &CutPlane) -> Result<TriMesh> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut vertices = mesh.vertices.clone();
    let mut uv = mesh.uv.clone();
    let mut dist: Vec<f64> = Vec::with_capacity(vertices.len());
    for v in &mut vertices {
        let d = plane.signed_distance(*v);
        if d.abs() <= PLANE_EPS {
            *v = sub3(*v, scale3(plane.normal, d));
            dist.push(0.0);
        } else {
            dist.push(d);
        }
    }

    let mut split_cache: HashMap<(usize, usize), usize> = HashMap::new();
    let mut split = |a: usize,
                     b: usize,
                     vertices: &mut Vec<Vec3>,
                     uv: &mut Option<Vec<Vec2>>,
                     dist: &mut Vec<f64>|
     -> usize {
        let key = (a.min(b), a.max(b));
        if let Some(&idx) = split_cache.get(&key) {
            return idx;
        }
        // parameterize from the smaller index for bit-reproducibility
        let (lo, hi) = key;
        let t = dist[lo] / (dist[lo] - dist[hi]);
        let p = lerp3(vertices[lo], vertices[hi], t);
        let idx = vertices.len();
        vertices.push(p);
        if let Some(uvs) = uv {
            let q = lerp2(uvs[lo], uvs[hi], t);
            uvs.push(q);
        }
        dist.push(0.0);
        split_cache.insert(key, idx);
        idx
    };

    let mut faces: Vec<[usize; 3]> = Vec::with_capacity(mesh.faces.len());
    for f in &mesh.faces {
        let s = [sign(dist[f[0]]), sign(dist[f[1]]), sign(dist[f[2]])];
        let crossing = (0..3).any(|k| s[k] * s[(k + 1) % 3] < 0);
        if !crossing {
            faces.push(*f);
            continue;
        }
        // count strict signs
        let pos = s.iter().filter(|&&x| x > 0).count();
        let neg = s.iter().filter(|&&x| x < 0).count();
        if pos == 1 && neg == 1 {
            // one vertex on the plane, the other two on opposite sides
            let k = (0..3).find(|&k| s[k] == 0).unwrap();
            let (v0, v1, v2) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let p = split(v1, v2, &mut vertices, &mut uv, &mut dist);
            faces.push([v0, v1, p]);
            faces.push([v0, p, v2]);
        } else {
            // one vertex alone on its side, two on the other
            let lone_sign = if pos == 1 { 1 } else { -1 };
            let k = (0..3).find(|&k| s[k] == lone_sign).unwrap();
            let (v0, v1, v2) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
            let p01 = split(v0, v1, &mut vertices, &mut uv, &mut dist);
            let p02 = split(v0, v2, &mut vertices, &mut uv, &mut dist);
            faces.push([v0, p01, p02]);
            faces.push([p01, v1, v2]);
            faces.push([p01, v2, p02]);
        }
    }
    Ok(TriMesh { vertices, faces, uv })
}

fn sign(d: f64) -> i32 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

/// Side of a face relative to a plane, assuming no face crosses it.
fn face_side(mesh: &TriMesh, plane: &CutPlane, f: usize) -> i32 {
    let mut best = 0.0f64;
    for &v in &mesh.faces[f] {
        let d = plane.signed_distance(mesh.vertices[v]);
        if d.abs() > best.abs() {
            best = d;
        }
    }
    sign(if best.abs() <= PLANE_EPS { 0.0 } else { best })
}

/// Connected components of the face-adjacency graph restricted to faces with
/// equal labels. Output pieces are densely re-indexed, coordinates preserved
/// bit-exactly.
pub fn split_by_labels(mesh: &TriMesh, labels: &[i64]) -> Vec<TriMesh> {
    assert_eq!(labels.len(), mesh.faces.len());
    let mut uf = UnionFind::new(mesh.faces.len());
    let mut edge_face: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            edge_face.entry((a.min(b), a.max(b))).or_default().push(fi);
        }
    }
    for faces in edge_face.values() {
        for w in faces.windows(2) {
            if labels[w[0]] == labels[w[1]] {
                uf.union(w[0], w[1]);
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for fi in 0..mesh.faces.len() {
        groups.entry(uf.find(fi)).or_default().push(fi);
    }
    let mut roots: Vec<usize> = groups.keys().cloned().collect();
    roots.sort_by_key(|r| groups[r][0]); // deterministic: by first face id
    let mut pieces = Vec::new();
    for root in roots {
        let face_ids = &groups[&root];
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut uv = mesh.uv.as_ref().map(|_| Vec::new());
        let mut faces = Vec::with_capacity(face_ids.len());
        for &fi in face_ids {
            let mut nf = [0usize; 3];
            for k in 0..3 {
                let v = mesh.faces[fi][k];
                let nv = *remap.entry(v).or_insert_with(|| {
                    vertices.push(mesh.vertices[v]);
                    if let (Some(out), Some(src)) = (uv.as_mut(), mesh.uv.as_ref()) {
                        out.push(src[v]);
                    }
                    vertices.len() - 1
                });
                nf[k] = nv;
            }
            faces.push(nf);
        }
        pieces.push(TriMesh { vertices, faces, uv });
    }
    pieces
}

/// Connected components on each side of a plane the mesh was already cut by.
pub fn split_components(mesh: &TriMesh, plane: &CutPlane) -> Vec<TriMesh> {
    let labels: Vec<i64> = (0..mesh.faces.len())
        .map(|f| face_side(mesh, plane, f) as i64)
        .collect();
    split_by_labels(mesh, &labels)
}

/// Cut planes for a category, in application order.
pub fn category_planes(category: GarmentCategory) -> Vec<CutPlane> {
    match category {
        GarmentCategory::Shirt => vec![CutPlane::new([0.0, 0.0, 1.0], -0.03)],
        GarmentCategory::ShirtOpen => vec![
            CutPlane::new([0.0, 0.0, 1.0], -0.03),
            CutPlane::new([1.0, 0.0, 0.0], 0.0),
        ],
        GarmentCategory::Trousers => vec![
            CutPlane::new([1.0, 0.0, 0.0], 0.0),
            CutPlane::sheared_z(0.07, 0.03),
        ],
        GarmentCategory::Skirt => vec![CutPlane::new([0.0, 0.0, 1.0], 0.03)],
    }
}

pub fn expected_piece_count(category: GarmentCategory) -> usize {
    match category {
        GarmentCategory::Shirt | GarmentCategory::Skirt => 2,
        GarmentCategory::ShirtOpen => 3,
        GarmentCategory::Trousers => 4,
    }
}

/// Apply the per-category cut rules. The mesh must be a rest-pose garment in
/// the body frame (y up, z front). Returns exactly the rule's piece count or
/// a `PieceCountMismatch`.
pub fn apply_category_cuts(mesh: &TriMesh, category: GarmentCategory) -> Result<Vec<TriMesh>> {
    mesh.validate()?;
    let planes = category_planes(category);
    let mut cut = mesh.clone();
    for plane in &planes {
        cut = cut_by_plane(&cut, plane)?;
    }
    let labels: Vec<i64> = (0..cut.faces.len())
        .map(|f| match category {
            GarmentCategory::ShirtOpen => {
                // the opening cut only separates front-side faces
                let front = face_side(&cut, &planes[0], f);
                if front > 0 {
                    10 + face_side(&cut, &planes[1], f) as i64
                } else {
                    -10
                }
            }
            _ => planes
                .iter()
                .enumerate()
                .map(|(i, p)| (face_side(&cut, p, f) as i64) * 10i64.pow(i as u32 + 1))
                .sum(),
        })
        .collect();
    let pieces = split_by_labels(&cut, &labels);
    let expected = expected_piece_count(category);
    if pieces.len() != expected {
        return Err(Error::PieceCountMismatch { expected, got: pieces.len() });
    }
    Ok(pieces)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Unit icosphere subdivided `level` times, used by tests and toys.
pub fn icosphere(level: usize) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = vec![
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    for v in &mut vertices {
        *v = crate::math::normalize3(*v);
    }
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = crate::math::normalize3(scale3(
                        add3(vertices[a], vertices[b]),
                        0.5,
                    ));
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            new_faces.push([f[0], mids[0], mids[2]]);
            new_faces.push([f[1], mids[1], mids[0]]);
            new_faces.push([f[2], mids[2], mids[1]]);
            new_faces.push([mids[0], mids[1], mids[2]]);
        }
        faces = new_faces;
    }
    TriMesh::new(vertices, faces)
}
