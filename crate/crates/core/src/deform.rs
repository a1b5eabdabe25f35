//! Deformation network: pixel-aligned features sampled from a Gaussian
//! pyramid of the observation images, four linear projections feeding a
//! Gaussian-activation trunk that predicts per-pixel occupancy and a 3D
//! displacement, plus its training loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fit::Camera;
use crate::flatten::Side;
use crate::grid::{GridMap, MapSemantics};
use crate::math::{add3, norm3, sub3, Vec2, Vec3};
use crate::nnet::{Activation, Mlp, Tape};
use crate::optim::{adam_step, AdamState};

/// Rendered inputs the network conditions on: garment normals plus body
/// segmentation and body surface positions, all pixel-aligned.
#[derive(Debug, Clone)]
pub struct ObservationImages {
    pub normal: GridMap,
    pub body_seg: GridMap,
    pub body_pos: GridMap,
}

impl ObservationImages {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.normal.height, self.normal.width);
        if self.normal.channels != 3 || self.body_seg.channels != 1 || self.body_pos.channels != 3
        {
            return Err(Error::DimMismatch { expected: 3, got: self.normal.channels });
        }
        for m in [&self.body_seg, &self.body_pos] {
            if m.height != h || m.width != w {
                return Err(Error::LengthMismatch(h * w, m.height * m.width));
            }
        }
        for i in 0..h {
            for j in 0..w {
                let n = [
                    self.normal.get(i, j, 0) as f64,
                    self.normal.get(i, j, 1) as f64,
                    self.normal.get(i, j, 2) as f64,
                ];
                let len = norm3(n);
                if len != 0.0 && (len - 1.0).abs() > 1e-3 {
                    return Err(Error::ParseError {
                        line: i * w + j,
                        message: format!("normal length {len} at pixel ({i}, {j})"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// 5-tap binomial blur followed by factor-2 decimation, border clamped.
fn downsample(map: &GridMap) -> GridMap {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (h, w, ch) = (map.height, map.width, map.channels);
    let mut blur_h = GridMap::zeros(h, w, ch, map.semantics);
    for i in 0..h {
        for j in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, k) in K.iter().enumerate() {
                    let jj = (j as isize + t as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += k * map.get(i, jj, c) as f64;
                }
                blur_h.set(i, j, c, acc as f32);
            }
        }
    }
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = GridMap::zeros(oh, ow, ch, map.semantics);
    for i in 0..oh {
        for j in 0..ow {
            for c in 0..ch {
                let mut acc = 0.0;
                for (t, k) in K.iter().enumerate() {
                    let ii =
                        (2 * i as isize + t as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += k * blur_h.get(ii, 2 * j, c) as f64;
                }
                out.set(i, j, c, acc as f32);
            }
        }
    }
    out
}

pub fn gaussian_pyramid(map: &GridMap, levels: usize) -> Vec<GridMap> {
    assert!(levels >= 1);
    let mut out = vec![map.clone()];
    while out.len() < levels {
        out.push(downsample(out.last().unwrap()));
    }
    out
}

/// Precomputed pyramids of one observation set; `body` stacks seg and pos
/// into a 4-channel image before decimation.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub normal: Vec<GridMap>,
    pub body: Vec<GridMap>,
}

impl FeaturePyramid {
    pub fn build(obs: &ObservationImages, levels: usize) -> FeaturePyramid {
        let (h, w) = (obs.body_seg.height, obs.body_seg.width);
        let mut body = GridMap::zeros(h, w, 4, MapSemantics::Feature);
        for i in 0..h {
            for j in 0..w {
                body.set(i, j, 0, obs.body_seg.get(i, j, 0));
                for c in 0..3 {
                    body.set(i, j, 1 + c, obs.body_pos.get(i, j, c));
                }
            }
        }
        FeaturePyramid {
            normal: gaussian_pyramid(&obs.normal, levels),
            body: gaussian_pyramid(&body, levels),
        }
    }

    pub fn levels(&self) -> usize {
        self.normal.len()
    }
}

/// Bilinear sample at continuous pixel coordinates ([col, row]), clamped.
fn bilinear(map: &GridMap, px: Vec2, c: usize) -> f64 {
    let col = px[0].clamp(0.0, (map.width - 1) as f64);
    let row = px[1].clamp(0.0, (map.height - 1) as f64);
    let j0 = (col.floor() as usize).min(map.width.saturating_sub(2));
    let i0 = (row.floor() as usize).min(map.height.saturating_sub(2));
    let i1 = (i0 + 1).min(map.height - 1);
    let j1 = (j0 + 1).min(map.width - 1);
    let fi = row - i0 as f64;
    let fj = col - j0 as f64;
    let g = |i: usize, j: usize| map.get(i, j, c) as f64;
    (1.0 - fi) * ((1.0 - fj) * g(i0, j0) + fj * g(i0, j1))
        + fi * ((1.0 - fj) * g(i1, j0) + fj * g(i1, j1))
}

/// Pixel-aligned multi-scale features at pixel coordinates `x`: normal
/// samples across all levels, then body seg+pos samples across all levels.
pub fn sample_features(pyr: &FeaturePyramid, x: Vec2) -> Vec<f64> {
    let mut out = Vec::with_capacity(7 * pyr.levels());
    for (l, map) in pyr.normal.iter().enumerate() {
        let s = 0.5f64.powi(l as i32);
        for c in 0..3 {
            out.push(bilinear(map, [x[0] * s, x[1] * s], c));
        }
    }
    for (l, map) in pyr.body.iter().enumerate() {
        let s = 0.5f64.powi(l as i32);
        for c in 0..4 {
            out.push(bilinear(map, [x[0] * s, x[1] * s], c));
        }
    }
    out
}

/// Occupancy/displacement predictor: four linear projections (uv+side,
/// base position, garment features, body features) and a 10-layer
/// Gaussian-activation trunk with a skip at layer 5. Garment and body
/// projections are summed so the trunk always sees 3 blocks.
#[derive(Debug, Clone)]
pub struct DeformNet {
    pub levels: usize,
    pub proj_uv: Mlp,
    pub proj_pos: Mlp,
    pub proj_garment: Mlp,
    pub proj_body: Mlp,
    pub trunk: Mlp,
}

pub const DEFORM_TRUNK_LAYERS: usize = 10;
pub const DEFORM_PROJ_DIM: usize = 384;

impl DeformNet {
    pub fn new<R: Rng>(levels: usize, proj_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut trunk_dims = vec![3 * proj_dim];
        trunk_dims.extend(std::iter::repeat(hidden).take(DEFORM_TRUNK_LAYERS - 1));
        trunk_dims.push(4);
        Ok(DeformNet {
            levels,
            proj_uv: Mlp::new(&[3, proj_dim], Activation::Identity, None, false, rng)?,
            proj_pos: Mlp::new(&[3, proj_dim], Activation::Identity, None, false, rng)?,
            proj_garment: Mlp::new(&[3 * levels, proj_dim], Activation::Identity, None, false, rng)?,
            proj_body: Mlp::new(&[4 * levels, proj_dim], Activation::Identity, None, false, rng)?,
            trunk: Mlp::new(
                &trunk_dims,
                Activation::Gaussian(1.0),
                Some(DEFORM_TRUNK_LAYERS / 2),
                false,
                rng,
            )?,
        })
    }

    /// Paper-sized architecture: 4 pyramid levels, 384-dim projections.
    pub fn default_arch<R: Rng>(rng: &mut R) -> Self {
        Self::new(4, DEFORM_PROJ_DIM, DEFORM_PROJ_DIM, rng).unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|m| m.param_count()).sum()
    }

    fn parts(&self) -> [&Mlp; 5] {
        [&self.proj_uv, &self.proj_pos, &self.proj_garment, &self.proj_body, &self.trunk]
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in self.parts() {
            out.extend(m.params());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut off = 0;
        for m in [
            &mut self.proj_uv,
            &mut self.proj_pos,
            &mut self.proj_garment,
            &mut self.proj_body,
            &mut self.trunk,
        ] {
            let n = m.param_count();
            m.set_params(&p[off..off + n]);
            off += n;
        }
    }

    /// Raw 4-vector (occupancy logit + displacement) with the tapes needed
    /// for a later backward pass.
    pub(crate) fn forward_raw(&self, u: Vec2, side: Side, xu: Vec3, feats: &[f64]) -> Result<(Vec<f64>, DeformTape)> {
        let side_code = match side {
            Side::Front => 1.0,
            Side::Back => -1.0,
        };
        let (e_uv, t_uv) = self.proj_uv.forward(&[u[0], u[1], side_code])?;
        let (e_pos, t_pos) = self.proj_pos.forward(&xu)?;
        let n_feat = 3 * self.levels;
        let (e_g, t_g) = self.proj_garment.forward(&feats[..n_feat])?;
        let (e_b, t_b) = self.proj_body.forward(&feats[n_feat..])?;
        let mut input = Vec::with_capacity(3 * e_uv.len());
        input.extend_from_slice(&e_uv);
        input.extend_from_slice(&e_pos);
        input.extend(e_g.iter().zip(&e_b).map(|(a, b)| a + b));
        let (out, t_trunk) = self.trunk.forward(&input)?;
        Ok((out, DeformTape { t_uv, t_pos, t_g, t_b, t_trunk }))
    }

    /// Parameter gradients of `out . dy` (flat, same layout as `params`).
    pub(crate) fn backward_params(&self, tape: DeformTape, dy: &[f64]) -> Vec<f64> {
        let d = self.proj_uv.output_dim();
        let (dinput, dp_trunk) = self.trunk.backward(tape.t_trunk, dy);
        let (_, dp_uv) = self.proj_uv.backward(tape.t_uv, &dinput[..d]);
        let (_, dp_pos) = self.proj_pos.backward(tape.t_pos, &dinput[d..2 * d]);
        // the summed block sends the same gradient to both projections
        let (_, dp_g) = self.proj_garment.backward(tape.t_g, &dinput[2 * d..]);
        let (_, dp_b) = self.proj_body.backward(tape.t_b, &dinput[2 * d..]);
        let mut out = Vec::with_capacity(self.param_count());
        for part in [dp_uv, dp_pos, dp_g, dp_b, dp_trunk] {
            out.extend(part);
        }
        out
    }
}

pub(crate) struct DeformTape {
    t_uv: Tape,
    t_pos: Tape,
    t_g: Tape,
    t_b: Tape,
    t_trunk: Tape,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Occupancy probability and displacement at one pattern point.
pub fn predict(
    net: &DeformNet,
    u: Vec2,
    side: Side,
    xu: Vec3,
    pyr: &FeaturePyramid,
    camera: &Camera,
) -> Result<(f64, Vec3)> {
    let (px, _) = camera.project(xu);
    let feats = sample_features(pyr, px);
    let (out, _) = net.forward_raw(u, side, xu, &feats)?;
    Ok((sigmoid(out[0]), [out[1], out[2], out[3]]))
}

/// One supervised view-side: observation images plus the skinned base
/// position map (3 channels + validity) and ground-truth maps.
#[derive(Debug, Clone)]
pub struct DeformFrame {
    pub obs: ObservationImages,
    pub camera: Camera,
    pub side: Side,
    /// X_u per pixel, channels [x, y, z, validity].
    pub base: GridMap,
    /// Ground-truth positions, channels [x, y, z, validity ignored].
    pub gt_pos: GridMap,
    /// Ground-truth occupancy in {0, 1}.
    pub gt_occ: GridMap,
}

pub const DEFORM_OCC_WEIGHT: f64 = 0.05;

/// Eq.-8 loss of one frame and its gradient with respect to the network
/// parameters: sum over valid pixels of ||X_u + dX_u - gt||_2 (where
/// gt occupancy is 1) plus lambda * BCE(occupancy logit, gt occupancy).
pub fn deform_loss_grad(
    net: &DeformNet,
    frame: &DeformFrame,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let pyr = FeaturePyramid::build(&frame.obs, net.levels);
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.param_count()];
    for i in 0..frame.base.height {
        for j in 0..frame.base.width {
            if frame.base.get(i, j, 3) <= 0.5 {
                continue;
            }
            let u = frame.base.pixel_uv(i, j);
            let xu = [
                frame.base.get(i, j, 0) as f64,
                frame.base.get(i, j, 1) as f64,
                frame.base.get(i, j, 2) as f64,
            ];
            let (px, _) = frame.camera.project(xu);
            let feats = sample_features(&pyr, px);
            let (out, tape) = net.forward_raw(u, frame.side, xu, &feats)?;
            let occ_target = frame.gt_occ.get(i, j, 0) as f64;
            let mut dy = [0.0; 4];
            if occ_target > 0.5 {
                let gt = [
                    frame.gt_pos.get(i, j, 0) as f64,
                    frame.gt_pos.get(i, j, 1) as f64,
                    frame.gt_pos.get(i, j, 2) as f64,
                ];
                let r = sub3(add3(xu, [out[1], out[2], out[3]]), gt);
                let rn = norm3(r);
                loss += rn;
                if rn > 1e-12 {
                    for c in 0..3 {
                        dy[1 + c] = r[c] / rn;
                    }
                }
            }
            if lambda != 0.0 {
                let z = out[0];
                // numerically stable BCE with logits
                loss += lambda * (z.max(0.0) - z * occ_target + (-z.abs()).exp().ln_1p());
                dy[0] = lambda * (sigmoid(z) - occ_target);
            }
            let dp = net.backward_params(tape, &dy);
            for (g, d) in grad.iter_mut().zip(&dp) {
                *g += d;
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct DeformTrainParams {
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
}

impl Default for DeformTrainParams {
    fn default() -> Self {
        DeformTrainParams { epochs: 200, lr: 1e-3, lambda: DEFORM_OCC_WEIGHT }
    }
}

/// Full-batch Adam over all frames; returns the per-epoch total losses.
pub fn train_deform(
    net: &mut DeformNet,
    frames: &[DeformFrame],
    params: &DeformTrainParams,
) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut x = net.params();
    let mut adam = AdamState::new(x.len(), params.lr);
    let mut losses = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        let mut total = 0.0;
        let mut grad = vec![0.0; x.len()];
        for frame in frames {
            let (l, g) = deform_loss_grad(net, frame, params.lambda)?;
            total += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        losses.push(total);
        adam_step(&mut x, &grad, &mut adam)?;
        net.set_params(&x);
    }
    Ok(losses)
}

/// Inference over one base map: thresholded occupancy and the displaced
/// position map (validity propagated).
pub fn build_maps(
    net: &DeformNet,
    base: &GridMap,
    obs: &ObservationImages,
    camera: &Camera,
    side: Side,
) -> Result<(GridMap, GridMap)> {
    assert_eq!(base.channels, 4, "expected 3 position channels + validity");
    let pyr = FeaturePyramid::build(obs, net.levels);
    let mut occ = GridMap::zeros(base.height, base.width, 1, MapSemantics::Occupancy);
    let mut pos = GridMap::zeros(base.height, base.width, 4, MapSemantics::Position);
    for i in 0..base.height {
        for j in 0..base.width {
            if base.get(i, j, 3) <= 0.5 {
                continue;
            }
            let u = base.pixel_uv(i, j);
            let xu = [
                base.get(i, j, 0) as f64,
                base.get(i, j, 1) as f64,
                base.get(i, j, 2) as f64,
            ];
            let (o, d) = predict(net, u, side, xu, &pyr, camera)?;
            occ.set(i, j, 0, if o > 0.5 { 1.0 } else { 0.0 });
            let p = pos.pixel_mut(i, j);
            for c in 0..3 {
                p[c] = (xu[c] + d[c]) as f32;
            }
            p[3] = 1.0;
        }
    }
    Ok((occ, pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::CameraMode;
    use crate::math::Rigid3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    const RES: usize = 16;

    fn toy_camera(res: usize) -> Camera {
        Camera::front_orthographic(res, res, [0.5, 0.5, 0.0], 1.5)
    }

    /// Plane garment at z=0 displaced along z by an amount the normal image
    /// encodes; occupancy is a disk the body segmentation encodes.
    fn toy_frame(k: usize, res: usize) -> DeformFrame {
        let amp = 0.02 + 0.01 * k as f64;
        let radius = 0.45 + 0.1 * (k % 3) as f64; // in uv units
        let mut normal = GridMap::zeros(res, res, 3, MapSemantics::Normal);
        let mut body_seg = GridMap::zeros(res, res, 1, MapSemantics::Mask);
        let mut body_pos = GridMap::zeros(res, res, 3, MapSemantics::Position);
        let mut base = GridMap::zeros(res, res, 4, MapSemantics::Position);
        let mut gt_pos = GridMap::zeros(res, res, 4, MapSemantics::Position);
        let mut gt_occ = GridMap::zeros(res, res, 1, MapSemantics::Occupancy);
        for i in 0..res {
            for j in 0..res {
                let uv = base.pixel_uv(i, j);
                let n = crate::math::normalize3([
                    8.0 * amp * (3.0 * uv[0]).sin(),
                    0.1 * k as f64,
                    -1.0,
                ]);
                for c in 0..3 {
                    normal.set(i, j, c, n[c] as f32);
                }
                let inside = (uv[0] * uv[0] + uv[1] * uv[1]).sqrt() < radius;
                body_seg.set(i, j, 0, if inside { 1.0 } else { 0.0 });
                body_pos.set(i, j, 0, uv[0] as f32);
                body_pos.set(i, j, 1, uv[1] as f32);
                body_pos.set(i, j, 2, 0.05 * k as f32);
                if i == 0 || j == 0 || i == res - 1 || j == res - 1 {
                    continue; // border pixels invalid
                }
                let world = [0.5 + uv[0] / 3.0, 0.5 + uv[1] / 3.0, 0.0];
                let b = base.pixel_mut(i, j);
                b[0] = world[0] as f32;
                b[1] = world[1] as f32;
                b[2] = world[2] as f32;
                b[3] = 1.0;
                let dz = amp * (1.0 + (3.0 * uv[0]).sin());
                let g = gt_pos.pixel_mut(i, j);
                g[0] = world[0] as f32;
                g[1] = world[1] as f32;
                g[2] = (world[2] + dz) as f32;
                g[3] = 1.0;
                gt_occ.set(i, j, 0, if inside { 1.0 } else { 0.0 });
            }
        }
        DeformFrame {
            obs: ObservationImages { normal, body_seg, body_pos },
            camera: toy_camera(res),
            side: if k % 2 == 0 { Side::Front } else { Side::Back },
            base,
            gt_pos,
            gt_occ,
        }
    }

    #[test]
    fn observation_validate_checks_normals_and_shapes() {
        let frame = toy_frame(0, 8);
        frame.obs.validate().unwrap();
        let mut bad = frame.obs.clone();
        bad.normal.set(3, 3, 0, 0.5);
        bad.normal.set(3, 3, 1, 0.0);
        bad.normal.set(3, 3, 2, 0.0);
        assert!(bad.validate().is_err());
        let mut mismatched = frame.obs.clone();
        mismatched.body_seg = GridMap::zeros(4, 4, 1, MapSemantics::Mask);
        assert!(mismatched.validate().is_err());
    }

    #[test]
    fn pyramid_halves_resolution_per_level() {
        let map = GridMap::zeros(16, 16, 3, MapSemantics::Normal);
        let pyr = gaussian_pyramid(&map, 4);
        let dims: Vec<(usize, usize)> = pyr.iter().map(|m| (m.height, m.width)).collect();
        assert_eq!(dims, vec![(16, 16), (8, 8), (4, 4), (2, 2)]);
    }

    #[test]
    fn features_constant_image_are_position_independent() {
        let res = 16;
        let mut obs = toy_frame(0, res).obs;
        for m in [&mut obs.normal, &mut obs.body_pos] {
            for v in m.data.iter_mut() {
                *v = 0.25;
            }
        }
        for v in obs.body_seg.data.iter_mut() {
            *v = 1.0;
        }
        let pyr = FeaturePyramid::build(&obs, 4);
        let a = sample_features(&pyr, [3.7, 9.1]);
        let b = sample_features(&pyr, [12.2, 5.6]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn features_at_pixel_center_single_level_are_raw_values() {
        let frame = toy_frame(1, 8);
        let pyr = FeaturePyramid::build(&frame.obs, 1);
        let f = sample_features(&pyr, [5.0, 3.0]);
        assert_eq!(f.len(), 7);
        for c in 0..3 {
            assert!((f[c] - frame.obs.normal.get(3, 5, c) as f64).abs() < 1e-12);
        }
        assert!((f[3] - frame.obs.body_seg.get(3, 5, 0) as f64).abs() < 1e-12);
        for c in 0..3 {
            assert!((f[4 + c] - frame.obs.body_pos.get(3, 5, c) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn features_shift_equivariant_away_from_borders() {
        // blur influence grows to ~2*(2^l - 1) source pixels at level l, so
        // the sample must sit well inside a large image
        let res = 128;
        let frame = toy_frame(2, res);
        let shift = 8usize; // divisible by 2^(levels-1)
        let shift_map = |m: &GridMap| {
            let mut out = GridMap::zeros(m.height, m.width, m.channels, m.semantics);
            for i in shift..m.height {
                for j in shift..m.width {
                    for c in 0..m.channels {
                        out.set(i, j, c, m.get(i - shift, j - shift, c));
                    }
                }
            }
            out
        };
        let shifted = ObservationImages {
            normal: shift_map(&frame.obs.normal),
            body_seg: shift_map(&frame.obs.body_seg),
            body_pos: shift_map(&frame.obs.body_pos),
        };
        let pyr = FeaturePyramid::build(&frame.obs, 4);
        let pyr_s = FeaturePyramid::build(&shifted, 4);
        let x = [59.3, 60.6]; // interior before and after the shift
        let a = sample_features(&pyr, x);
        let b = sample_features(&pyr_s, [x[0] + shift as f64, x[1] + shift as f64]);
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }

    #[test]
    fn default_arch_matches_paper_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let net = DeformNet::default_arch(&mut rng);
        assert_eq!(net.trunk.input_dim, 3 * DEFORM_PROJ_DIM);
        assert_eq!(net.trunk.layers.len(), DEFORM_TRUNK_LAYERS);
        assert_eq!(net.trunk.skip_at, Some(5));
        assert_eq!(net.trunk.output_dim(), 4);
        assert_eq!(net.proj_uv.output_dim(), DEFORM_PROJ_DIM);
    }

    #[test]
    fn untrained_predict_is_finite_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let net = DeformNet::new(3, 12, 16, &mut rng).unwrap();
        let frame = toy_frame(0, RES);
        let pyr = FeaturePyramid::build(&frame.obs, 3);
        let (o, d) = predict(&net, [0.1, -0.2], Side::Front, [0.5, 0.5, 0.0], &pyr, &frame.camera)
            .unwrap();
        assert!(o > 0.0 && o < 1.0);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn params_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut net = DeformNet::new(2, 5, 7, &mut rng).unwrap();
        let p = net.params();
        assert_eq!(p.len(), net.param_count());
        let doubled: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        net.set_params(&doubled);
        assert_eq!(net.params(), doubled);
    }

    #[test]
    fn loss_gradient_matches_fd_over_all_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let net = DeformNet::new(2, 4, 6, &mut rng).unwrap();
        let frame = toy_frame(1, 6);
        let template = net.clone();
        let f = |x: &[f64]| {
            let mut n = template.clone();
            n.set_params(x);
            let (l, g) = deform_loss_grad(&n, &frame, DEFORM_OCC_WEIGHT).unwrap();
            (l, g)
        };
        let p = net.params();
        let err = crate::optim::fd_check(f, &p, 1e-5);
        assert!(err < 1e-4, "fd error {err}");
    }

    #[test]
    fn lambda_controls_the_occupancy_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let net = DeformNet::new(2, 6, 8, &mut rng).unwrap();
        let frame = toy_frame(2, 8);
        let (l0, _) = deform_loss_grad(&net, &frame, 0.0).unwrap();
        let (l1, _) = deform_loss_grad(&net, &frame, DEFORM_OCC_WEIGHT).unwrap();
        // independently accumulated BCE over the valid pixels
        let pyr = FeaturePyramid::build(&frame.obs, net.levels);
        let mut bce = 0.0;
        for i in 0..frame.base.height {
            for j in 0..frame.base.width {
                if frame.base.get(i, j, 3) <= 0.5 {
                    continue;
                }
                let xu = [
                    frame.base.get(i, j, 0) as f64,
                    frame.base.get(i, j, 1) as f64,
                    frame.base.get(i, j, 2) as f64,
                ];
                let (o, _) = predict(
                    &net,
                    frame.base.pixel_uv(i, j),
                    frame.side,
                    xu,
                    &pyr,
                    &frame.camera,
                )
                .unwrap();
                let t = frame.gt_occ.get(i, j, 0) as f64;
                bce -= t * o.ln() + (1.0 - t) * (1.0 - o).ln();
            }
        }
        assert!((l1 - l0 - DEFORM_OCC_WEIGHT * bce).abs() < 1e-9);
    }

    #[test]
    fn duplicate_frames_give_identical_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let net = DeformNet::new(2, 6, 8, &mut rng).unwrap();
        let frame = toy_frame(3, 8);
        let (a, ga) = deform_loss_grad(&net, &frame, DEFORM_OCC_WEIGHT).unwrap();
        let (b, gb) = deform_loss_grad(&net, &frame.clone(), DEFORM_OCC_WEIGHT).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
    }

    #[test]
    fn train_rejects_empty_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut net = DeformNet::new(2, 4, 6, &mut rng).unwrap();
        assert!(matches!(
            train_deform(&mut net, &[], &DeformTrainParams::default()),
            Err(Error::EmptyDataset)
        ));
    }

    fn trained() -> &'static (DeformNet, Vec<DeformFrame>, Vec<f64>) {
        static CELL: OnceLock<(DeformNet, Vec<DeformFrame>, Vec<f64>)> = OnceLock::new();
        CELL.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(73);
            let mut net = DeformNet::new(3, 16, 24, &mut rng).unwrap();
            let frames: Vec<DeformFrame> = (0..5).map(|k| toy_frame(k, RES)).collect();
            let params = DeformTrainParams { epochs: 1500, lr: 2e-3, ..Default::default() };
            let losses = train_deform(&mut net, &frames, &params).unwrap();
            (net, frames, losses)
        })
    }

    #[test]
    fn training_halves_the_loss() {
        let (_, _, losses) = trained();
        let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(best < 0.5 * losses[0], "{} -> {best}", losses[0]);
    }

    #[test]
    fn overfit_position_error_and_occupancy_accuracy() {
        let (net, frames, _) = trained();
        let mut errs = Vec::new();
        let mut occ_right = 0usize;
        let mut occ_total = 0usize;
        for frame in frames {
            let pyr = FeaturePyramid::build(&frame.obs, net.levels);
            for i in 0..RES {
                for j in 0..RES {
                    if frame.base.get(i, j, 3) <= 0.5 {
                        continue;
                    }
                    let xu = [
                        frame.base.get(i, j, 0) as f64,
                        frame.base.get(i, j, 1) as f64,
                        frame.base.get(i, j, 2) as f64,
                    ];
                    let (o, d) = predict(
                        net,
                        frame.base.pixel_uv(i, j),
                        frame.side,
                        xu,
                        &pyr,
                        &frame.camera,
                    )
                    .unwrap();
                    let t = frame.gt_occ.get(i, j, 0) as f64;
                    occ_total += 1;
                    if (o > 0.5) == (t > 0.5) {
                        occ_right += 1;
                    }
                    if t > 0.5 {
                        let gt = [
                            frame.gt_pos.get(i, j, 0) as f64,
                            frame.gt_pos.get(i, j, 1) as f64,
                            frame.gt_pos.get(i, j, 2) as f64,
                        ];
                        errs.push(norm3(sub3(add3(xu, d), gt)));
                    }
                }
            }
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errs[errs.len() / 2];
        assert!(median < 1e-2, "median position error {median}");
        let acc = occ_right as f64 / occ_total as f64;
        assert!(acc > 0.98, "occupancy accuracy {acc}");
    }

    #[test]
    fn build_maps_iou_and_determinism() {
        let (net, frames, _) = trained();
        let frame = &frames[0];
        let (occ, pos) = build_maps(net, &frame.base, &frame.obs, &frame.camera, frame.side)
            .unwrap();
        let (occ2, pos2) = build_maps(net, &frame.base, &frame.obs, &frame.camera, frame.side)
            .unwrap();
        assert_eq!(occ.data, occ2.data);
        assert_eq!(pos.data, pos2.data);
        let (mut inter, mut union) = (0.0, 0.0);
        for i in 0..RES {
            for j in 0..RES {
                if frame.base.get(i, j, 3) <= 0.5 {
                    continue;
                }
                let a = occ.get(i, j, 0) > 0.5;
                let b = frame.gt_occ.get(i, j, 0) > 0.5;
                if a && b {
                    inter += 1.0;
                }
                if a || b {
                    union += 1.0;
                }
            }
        }
        assert!(inter / union >= 0.95, "IoU {}", inter / union);
        // invalid pixels untouched
        assert_eq!(pos.get(0, 0, 3), 0.0);
    }

    #[test]
    fn build_maps_all_invalid_yields_zero_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let net = DeformNet::new(2, 4, 6, &mut rng).unwrap();
        let frame = toy_frame(0, 8);
        let empty = GridMap::zeros(8, 8, 4, MapSemantics::Position);
        let (occ, pos) = build_maps(&net, &empty, &frame.obs, &frame.camera, Side::Front).unwrap();
        assert!(occ.data.iter().all(|&v| v == 0.0));
        assert!(pos.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn camera_modes_share_the_projection_contract() {
        // pinhole feature sampling stays in bounds for the toy scene
        let frame = toy_frame(1, RES);
        let cam = Camera {
            mode: CameraMode::Pinhole(2.0),
            extrinsic: Rigid3 {
                rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                translation: [-0.5, -0.5, 2.0],
            },
            height: RES,
            width: RES,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let net = DeformNet::new(2, 6, 8, &mut rng).unwrap();
        let pyr = FeaturePyramid::build(&frame.obs, 2);
        let (o, d) = predict(&net, [0.0, 0.0], Side::Back, [0.5, 0.5, 0.0], &pyr, &cam).unwrap();
        assert!(o.is_finite() && d.iter().all(|v| v.is_finite()));
    }
}
