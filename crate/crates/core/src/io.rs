//! File formats: OBJ meshes, GMAP rasters, PFM / 16-bit PNM images and the
//! line-based configuration file. All binary payloads are little-endian and
//! all readers reject trailing bytes.

use std::io::{Read, Write};

use crate::body::{BodyModel, Joint};
use crate::error::{Error, Result};
use crate::fit::{Camera, CameraMode};
use crate::grid::{GridMap, MapSemantics};
use crate::math::Rigid3;
use crate::mesh::TriMesh;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::ParseError { line, message: message.into() }
}

// ---------------------------------------------------------------------------
// OBJ

/// Writes `v`, optional `vt` and `f` lines; floats carry 9 significant
/// digits so a round trip reproduces coordinates to that precision.
pub fn write_obj<W: Write>(mesh: &TriMesh, mut out: W) -> Result<()> {
    let fmt = |x: f64| format!("{:.8e}", x);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", fmt(v[0]), fmt(v[1]), fmt(v[2]))?;
    }
    if let Some(uv) = &mesh.uv {
        for t in uv {
            writeln!(out, "vt {} {}", fmt(t[0]), fmt(t[1]))?;
        }
    }
    for f in &mesh.faces {
        if mesh.uv.is_some() {
            writeln!(
                out,
                "f {}/{} {}/{} {}/{}",
                f[0] + 1,
                f[0] + 1,
                f[1] + 1,
                f[1] + 1,
                f[2] + 1,
                f[2] + 1
            )?;
        } else {
            writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
    }
    Ok(())
}

/// Reads `v`, `vt` and triangular `f` lines; other directives are ignored.
pub fn read_obj<R: Read>(mut input: R) -> Result<TriMesh> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    *c = it
                        .next()
                        .ok_or_else(|| parse_err(lineno, "vertex needs 3 coordinates"))?
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad vertex coordinate"))?;
                }
                vertices.push(coords);
            }
            Some("vt") => {
                let mut coords = [0.0; 2];
                for c in &mut coords {
                    *c = it
                        .next()
                        .ok_or_else(|| parse_err(lineno, "vt needs 2 coordinates"))?
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad texture coordinate"))?;
                }
                uvs.push(coords);
            }
            Some("f") => {
                let mut idx = [0usize; 3];
                for (k, slot) in idx.iter_mut().enumerate() {
                    let token = it
                        .next()
                        .ok_or_else(|| parse_err(lineno, "face needs 3 vertices"))?;
                    let first = token.split('/').next().unwrap();
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad face index"))?;
                    if i < 1 {
                        return Err(parse_err(lineno, "face indices must be positive"));
                    }
                    *slot = (i - 1) as usize;
                    let _ = k;
                }
                if it.next().is_some() {
                    return Err(parse_err(lineno, "only triangular faces supported"));
                }
                faces.push(idx);
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, faces);
    if !uvs.is_empty() {
        if uvs.len() != mesh.vertices.len() {
            return Err(Error::LengthMismatch(uvs.len(), mesh.vertices.len()));
        }
        mesh.uv = Some(uvs);
    }
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// GMAP

const GMAP_MAGIC: &[u8; 4] = b"GMAP";
const GMAP_VERSION: u16 = 1;

pub fn write_gmap<W: Write>(map: &GridMap, mut out: W) -> Result<()> {
    out.write_all(GMAP_MAGIC)?;
    out.write_all(&GMAP_VERSION.to_le_bytes())?;
    out.write_all(&(map.height as u32).to_le_bytes())?;
    out.write_all(&(map.width as u32).to_le_bytes())?;
    out.write_all(&(map.channels as u32).to_le_bytes())?;
    out.write_all(&[map.semantics as u8])?;
    for x in &map.data {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_gmap<R: Read>(mut input: R) -> Result<GridMap> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cursor = Cursor::new(&bytes);
    if cursor.take(4)? != GMAP_MAGIC {
        return Err(Error::BadMagic("GMAP"));
    }
    if u16::from_le_bytes(cursor.take(2)?.try_into().unwrap()) != GMAP_VERSION {
        return Err(Error::BadMagic("GMAP version"));
    }
    let height = cursor.u32()? as usize;
    let width = cursor.u32()? as usize;
    let channels = cursor.u32()? as usize;
    let semantics = MapSemantics::from_tag(cursor.take(1)?[0])?;
    if height < 2 || width < 2 || channels == 0 {
        return Err(Error::BadMagic("GMAP dimensions"));
    }
    let n = height * width * channels;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(f32::from_le_bytes(cursor.take(4)?.try_into().unwrap()));
    }
    cursor.expect_end()?;
    Ok(GridMap { height, width, channels, semantics, data })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::ParseError {
                line: 0,
                message: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// MLP1 (flat network weights, one f64 section per parameter vector)

const MLP1_MAGIC: &[u8; 4] = b"MLP1";
const MLP1_VERSION: u16 = 1;

pub fn write_mlp1<W: Write>(sections: &[Vec<f64>], mut out: W) -> Result<()> {
    out.write_all(MLP1_MAGIC)?;
    out.write_all(&MLP1_VERSION.to_le_bytes())?;
    out.write_all(&(sections.len() as u32).to_le_bytes())?;
    for s in sections {
        out.write_all(&(s.len() as u32).to_le_bytes())?;
        for x in s {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_mlp1<R: Read>(mut input: R) -> Result<Vec<Vec<f64>>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cursor = Cursor::new(&bytes);
    if cursor.take(4)? != MLP1_MAGIC {
        return Err(Error::BadMagic("MLP1"));
    }
    if u16::from_le_bytes(cursor.take(2)?.try_into().unwrap()) != MLP1_VERSION {
        return Err(Error::BadMagic("MLP1 version"));
    }
    let n = cursor.u32()? as usize;
    let mut sections = Vec::with_capacity(n);
    for _ in 0..n {
        let len = cursor.u32()? as usize;
        let mut s = Vec::with_capacity(len);
        for _ in 0..len {
            s.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
        }
        sections.push(s);
    }
    cursor.expect_end()?;
    Ok(sections)
}

// ---------------------------------------------------------------------------
// Camera text file: mode, 3x4 extrinsic (rotation row | translation), size

pub fn write_camera<W: Write>(camera: &Camera, mut out: W) -> Result<()> {
    match camera.mode {
        CameraMode::Orthographic => writeln!(out, "mode orthographic")?,
        CameraMode::Pinhole(f) => writeln!(out, "mode pinhole {:.17e}", f)?,
    }
    for r in 0..3 {
        writeln!(
            out,
            "extrinsic {:.17e} {:.17e} {:.17e} {:.17e}",
            camera.extrinsic.rotation[r][0],
            camera.extrinsic.rotation[r][1],
            camera.extrinsic.rotation[r][2],
            camera.extrinsic.translation[r],
        )?;
    }
    writeln!(out, "size {} {}", camera.height, camera.width)?;
    Ok(())
}

pub fn read_camera<R: Read>(mut input: R) -> Result<Camera> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut mode = None;
    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut size = None;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first() {
            Some(&"mode") => {
                mode = Some(match toks.get(1) {
                    Some(&"orthographic") => CameraMode::Orthographic,
                    Some(&"pinhole") => CameraMode::Pinhole(
                        toks.get(2)
                            .ok_or_else(|| parse_err(lineno, "pinhole needs a focal length"))?
                            .parse()
                            .map_err(|_| parse_err(lineno, "bad focal length"))?,
                    ),
                    _ => return Err(parse_err(lineno, "unknown camera mode")),
                });
            }
            Some(&"extrinsic") => {
                if toks.len() != 5 {
                    return Err(parse_err(lineno, "extrinsic row needs 4 numbers"));
                }
                let mut row = [0.0; 4];
                for (k, slot) in row.iter_mut().enumerate() {
                    *slot = toks[k + 1]
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad extrinsic entry"))?;
                }
                rows.push(row);
            }
            Some(&"size") => {
                if toks.len() != 3 {
                    return Err(parse_err(lineno, "size needs height and width"));
                }
                let h: usize = toks[1].parse().map_err(|_| parse_err(lineno, "bad height"))?;
                let w: usize = toks[2].parse().map_err(|_| parse_err(lineno, "bad width"))?;
                size = Some((h, w));
            }
            None => {}
            _ => return Err(parse_err(lineno, "unknown camera directive")),
        }
    }
    let mode = mode.ok_or_else(|| parse_err(0, "missing mode"))?;
    let (height, width) = size.ok_or_else(|| parse_err(0, "missing size"))?;
    if rows.len() != 3 {
        return Err(parse_err(0, "expected 3 extrinsic rows"));
    }
    let mut rotation = [[0.0; 3]; 3];
    let mut translation = [0.0; 3];
    for r in 0..3 {
        rotation[r].copy_from_slice(&rows[r][..3]);
        translation[r] = rows[r][3];
    }
    Ok(Camera { mode, extrinsic: Rigid3 { rotation, translation }, height, width })
}

// ---------------------------------------------------------------------------
// Body sidecar: joint hierarchy and skin weight rows accompanying the
// surface OBJ.

pub fn write_body_sidecar<W: Write>(body: &BodyModel, mut out: W) -> Result<()> {
    for j in &body.joints {
        let parent = j.parent.map_or(-1, |p| p as i64);
        writeln!(
            out,
            "joint {} {:.17e} {:.17e} {:.17e}",
            parent, j.rest[0], j.rest[1], j.rest[2]
        )?;
    }
    for row in &body.skin_weights {
        write!(out, "w")?;
        for v in row {
            write!(out, " {:.17e}", v)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Rebuilds a body model from a surface mesh plus its sidecar text.
pub fn read_body_sidecar<R: Read>(surface: TriMesh, mut input: R) -> Result<BodyModel> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut joints = Vec::new();
    let mut skin_weights = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first() {
            Some(&"joint") => {
                if toks.len() != 5 {
                    return Err(parse_err(lineno, "joint needs parent and 3 coordinates"));
                }
                let parent: i64 =
                    toks[1].parse().map_err(|_| parse_err(lineno, "bad parent index"))?;
                let mut rest = [0.0; 3];
                for (k, slot) in rest.iter_mut().enumerate() {
                    *slot = toks[k + 2]
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad joint coordinate"))?;
                }
                joints.push(Joint {
                    parent: if parent < 0 { None } else { Some(parent as usize) },
                    rest,
                });
            }
            Some(&"w") => {
                let row: std::result::Result<Vec<f64>, _> =
                    toks[1..].iter().map(|t| t.parse()).collect();
                skin_weights.push(row.map_err(|_| parse_err(lineno, "bad weight"))?);
            }
            None => {}
            _ => return Err(parse_err(lineno, "unknown sidecar directive")),
        }
    }
    let body = BodyModel { surface, joints, skin_weights };
    body.validate()?;
    Ok(body)
}

// ---------------------------------------------------------------------------
// PFM (f32 image, scanlines bottom-to-top per the format convention)

pub fn write_pfm<W: Write>(map: &GridMap, mut out: W) -> Result<()> {
    let header = match map.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::DimMismatch { expected: 3, got: c }),
    };
    // negative scale marks little-endian data
    write!(out, "{}\n{} {}\n-1.0\n", header, map.width, map.height)?;
    for i in (0..map.height).rev() {
        for j in 0..map.width {
            for c in 0..map.channels {
                out.write_all(&map.get(i, j, c).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_pfm<R: Read>(mut input: R, semantics: MapSemantics) -> Result<GridMap> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let (header, body_off) = pnm_header(&bytes, 3)?;
    let channels = match header.0.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::BadMagic("PFM")),
    };
    let dims: Vec<&str> = header.1[0].split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(2, "expected width and height"));
    }
    let width: usize = dims[0].parse().map_err(|_| parse_err(2, "bad width"))?;
    let height: usize = dims[1].parse().map_err(|_| parse_err(2, "bad height"))?;
    let scale: f64 = header.1[1].trim().parse().map_err(|_| parse_err(3, "bad scale"))?;
    if scale == 0.0 {
        return Err(parse_err(3, "scale must be nonzero"));
    }
    let little = scale < 0.0;
    let mag = scale.abs() as f32;
    let n = height * width * channels;
    if bytes.len() != body_off + 4 * n {
        return Err(Error::TruncatedFile);
    }
    let mut map = GridMap::zeros(height, width, channels, semantics);
    let mut k = body_off;
    for i in (0..height).rev() {
        for j in 0..width {
            for c in 0..channels {
                let raw: [u8; 4] = bytes[k..k + 4].try_into().unwrap();
                let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
                map.set(i, j, c, v * mag);
                k += 4;
            }
        }
    }
    Ok(map)
}

/// Parses `n_fields` whitespace-separated header tokens of a PNM-style file.
/// Returns (magic, remaining fields) and the byte offset of the payload,
/// which starts right after the single whitespace ending the last field.
fn pnm_header(bytes: &[u8], n_fields: usize) -> Result<((String, Vec<String>), usize)> {
    let mut fields: Vec<String> = Vec::new();
    // magic: first line
    let eol = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(Error::TruncatedFile)?;
    let magic = String::from_utf8_lossy(&bytes[..eol]).trim().to_string();
    let mut pos = eol + 1;
    // subsequent fields, one per line (comments not supported)
    for _ in 0..n_fields - 1 {
        let eol = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(Error::TruncatedFile)?;
        fields.push(String::from_utf8_lossy(&bytes[pos..pos + eol]).to_string());
        pos += eol + 1;
    }
    Ok(((magic, fields), pos))
}

// ---------------------------------------------------------------------------
// 16-bit PGM (P5) and PPM (P6); samples big-endian as the format requires,
// values scaled to [0,1] on read.

pub fn write_pnm16<W: Write>(map: &GridMap, mut out: W) -> Result<()> {
    let magic = match map.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::DimMismatch { expected: 3, got: c }),
    };
    write!(out, "{}\n{} {}\n65535\n", magic, map.width, map.height)?;
    for i in 0..map.height {
        for j in 0..map.width {
            for c in 0..map.channels {
                let v = (map.get(i, j, c).clamp(0.0, 1.0) * 65535.0).round() as u16;
                out.write_all(&v.to_be_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_pnm16<R: Read>(mut input: R, semantics: MapSemantics) -> Result<GridMap> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let (header, body_off) = pnm_header(&bytes, 3)?;
    let channels = match header.0.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(Error::BadMagic("PNM")),
    };
    let dims: Vec<&str> = header.1[0].split_whitespace().collect();
    if dims.len() != 2 {
        return Err(parse_err(2, "expected width and height"));
    }
    let width: usize = dims[0].parse().map_err(|_| parse_err(2, "bad width"))?;
    let height: usize = dims[1].parse().map_err(|_| parse_err(2, "bad height"))?;
    let maxval: u32 = header.1[1].trim().parse().map_err(|_| parse_err(3, "bad maxval"))?;
    if maxval != 65535 {
        return Err(parse_err(3, "only 16-bit images supported"));
    }
    let n = height * width * channels;
    if bytes.len() != body_off + 2 * n {
        return Err(Error::TruncatedFile);
    }
    let mut map = GridMap::zeros(height, width, channels, semantics);
    let mut k = body_off;
    for i in 0..height {
        for j in 0..width {
            for c in 0..channels {
                let raw: [u8; 2] = bytes[k..k + 2].try_into().unwrap();
                map.set(i, j, c, u16::from_be_bytes(raw) as f32 / 65535.0);
                k += 2;
            }
        }
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Config

macro_rules! config {
    ($($field:ident : $ty:ty = $default:expr),* $(,)?) => {
        /// Pipeline hyperparameters; serialized as `key = value` lines.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Config {
            $(pub $field: $ty,)*
        }

        impl Default for Config {
            fn default() -> Self {
                Config { $($field: $default,)* }
            }
        }

        impl Config {
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(s.push_str(&format!("{} = {}\n", stringify!($field), self.$field));)*
                s
            }

            /// Parses overrides onto the defaults; unknown keys and
            /// malformed lines are rejected with their location.
            pub fn parse(text: &str) -> Result<Config> {
                let mut cfg = Config::default();
                for (lineno, raw) in text.lines().enumerate() {
                    let lineno = lineno + 1;
                    let line = raw.split('#').next().unwrap().trim();
                    if line.is_empty() {
                        continue;
                    }
                    let (key, value) = line
                        .split_once('=')
                        .ok_or_else(|| parse_err(lineno, "expected `key = value`"))?;
                    let key = key.trim();
                    let value = value.trim();
                    match key {
                        $(stringify!($field) => {
                            cfg.$field = value.parse().map_err(|_| {
                                parse_err(lineno, format!("bad value for {}", key))
                            })?;
                        })*
                        _ => {
                            return Err(parse_err(
                                lineno,
                                format!("unknown key `{}`", key),
                            ));
                        }
                    }
                }
                Ok(cfg)
            }
        }
    };
}

config! {
    seed: u64 = 0,
    // pattern maps
    map_size: usize = 128,
    latent_dim: usize = 32,
    // rendered observations
    image_size: usize = 64,
    // deformation network shape
    deform_levels: usize = 3,
    deform_proj: usize = 64,
    // network widths
    isp_hidden: usize = 32,
    skin_hidden: usize = 32,
    deform_hidden: usize = 48,
    // training schedules
    isp_epochs: usize = 60,
    isp_lr: f64 = 1e-3,
    skin_epochs: usize = 40,
    skin_lr: f64 = 1e-3,
    deform_epochs: usize = 40,
    deform_lr: f64 = 1e-3,
    recover_iters: usize = 1000,
    recover_lr: f64 = 1e-3,
    stage1_iters: usize = 300,
    stage1_lr: f64 = 1e-4,
    stage2_iters: usize = 400,
    stage2_lr: f64 = 1e-4,
    // loss weights
    lambda_occ: f64 = 0.05,
    lambda_z: f64 = 0.04,
    lambda_chamfer: f64 = 0.2,
    lambda_normal: f64 = 1.0,
    lambda_physics: f64 = 1.0,
    lambda_shape: f64 = 10.0,
    lambda_edge: f64 = 0.5,
    lambda_rigid: f64 = 1.0,
    lambda_flat: f64 = 1.0,
    // physics constants
    stretch_stiffness: f64 = 100.0,
    bend_stiffness: f64 = 0.1,
    area_density: f64 = 0.15,
    collision_margin: f64 = 0.002,
    collision_stiffness: f64 = 1e4,
    gravity: f64 = 9.81,
}
