//! Finite-difference validation of every analytic gradient in the crate,
//! shared by the `check-grad` command and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body::{style_loss, TriBvh};
use crate::deform::{
    deform_loss_grad, DeformFrame, DeformNet, ObservationImages, DEFORM_OCC_WEIGHT,
};
use crate::fit::{
    bend_energy, bend_rest, collision_energy, gravity_energy, normal_loss_grad, rasterize,
    strain_energy, strain_energy_rest3d, total_loss_with_raster, Camera, FitTargets,
    LossWeights, PhysicsParams, RestState,
};
use crate::flatten::Side;
use crate::grid::{GridMap, MapSemantics};
use crate::isp::{isp_loss_grad, recover_loss_grad, Batch, IspModel};
use crate::math::{standard_normal, Vec3};
use crate::mesh::TriMesh;
use crate::optim::fd_check;
use crate::synth::planar_grid;
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
}

impl GradReport {
    pub fn pass(&self) -> bool {
        self.worst < self.tol
    }
}

fn flatten_vertices(mesh: &TriMesh) -> Vec<f64> {
    mesh.vertices.iter().flatten().copied().collect()
}

fn with_vertices(base: &TriMesh, x: &[f64]) -> TriMesh {
    let mut m = base.clone();
    for (i, v) in m.vertices.iter_mut().enumerate() {
        *v = [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
    }
    m
}

fn flat_grad(g: &[Vec3]) -> Vec<f64> {
    g.iter().flatten().copied().collect()
}

fn wavy<R: Rng>(rng: &mut R) -> TriMesh {
    let mut m = planar_grid(1.0, 1.0, 4, 4);
    m.uv = Some(m.vertices.iter().map(|v| [v[0], v[1]]).collect());
    for v in &mut m.vertices {
        for c in v.iter_mut() {
            *c += 0.05 * standard_normal(rng);
        }
    }
    m
}

fn random_normal_image<R: Rng>(res: usize, rng: &mut R) -> GridMap {
    let mut img = GridMap::zeros(res, res, 3, MapSemantics::Normal);
    for i in 0..res {
        for j in 0..res {
            let n = crate::math::normalize3([
                0.3 * standard_normal(rng),
                0.3 * standard_normal(rng),
                -1.0,
            ]);
            for c in 0..3 {
                img.set(i, j, c, n[c] as f32);
            }
        }
    }
    img
}

fn toy_deform_frame<R: Rng>(res: usize, rng: &mut R) -> DeformFrame {
    let camera = Camera::front_orthographic(res, res, [0.5, 0.5, 0.0], 1.5);
    let normal = random_normal_image(res, rng);
    let mut body_seg = GridMap::zeros(res, res, 1, MapSemantics::Mask);
    let mut body_pos = GridMap::zeros(res, res, 3, MapSemantics::Position);
    let mut base = GridMap::zeros(res, res, 4, MapSemantics::Position);
    let mut gt_pos = GridMap::zeros(res, res, 4, MapSemantics::Position);
    let mut gt_occ = GridMap::zeros(res, res, 1, MapSemantics::Occupancy);
    for i in 0..res {
        for j in 0..res {
            let uv = base.pixel_uv(i, j);
            body_seg.set(i, j, 0, if uv[0] * uv[0] + uv[1] * uv[1] < 0.5 { 1.0 } else { 0.0 });
            for c in 0..3 {
                body_pos.set(i, j, c, (0.3 * uv[c.min(1)]) as f32);
            }
            if uv[0].abs() < 0.8 && uv[1].abs() < 0.8 {
                let p = [0.5 + 0.3 * uv[0], 0.5 + 0.3 * uv[1], 0.0];
                // keep the position residual far from zero: the L2-norm term's
                // curvature is 1/|r|, which would sink the fd comparison
                let d = 1.0 + 0.05 * (3.0 * uv[0]).sin();
                for c in 0..3 {
                    base.set(i, j, c, p[c] as f32);
                    gt_pos.set(i, j, c, p[c] as f32);
                }
                gt_pos.set(i, j, 2, d as f32);
                base.set(i, j, 3, 1.0);
                gt_occ.set(i, j, 0, 1.0);
            }
        }
    }
    DeformFrame {
        obs: ObservationImages { normal, body_seg, body_pos },
        camera,
        side: Side::Front,
        base,
        gt_pos,
        gt_occ,
    }
}

/// Runs central finite differences against every analytic gradient on
/// `n_seeds` random instances each; returns the worst relative error per
/// term.
pub fn gradient_report(n_seeds: usize) -> Result<Vec<GradReport>> {
    let params = PhysicsParams::default();
    let mut reports: Vec<GradReport> = [
        ("membrane strain (uv rest)", 1e-4),
        ("membrane strain (3d rest)", 1e-4),
        ("bending", 1e-4),
        ("gravity", 1e-4),
        ("collision", 1e-3),
        ("normal image loss", 1e-4),
        ("total fitting loss", 1e-4),
        ("style loss", 1e-4),
        ("deformation training loss", 1e-4),
        ("pattern training loss", 1e-4),
        ("latent recovery loss", 1e-3),
    ]
    .iter()
    .map(|&(name, tol)| GradReport { name, worst: 0.0, tol })
    .collect();
    let record = |idx: usize, err: f64, reports: &mut Vec<GradReport>| {
        reports[idx].worst = reports[idx].worst.max(err);
    };

    for seed in 0..n_seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + seed);
        let rest = {
            let mut m = planar_grid(1.0, 1.0, 4, 4);
            m.uv = Some(m.vertices.iter().map(|v| [v[0], v[1]]).collect());
            m
        };
        let mesh = wavy(&mut rng);
        let x0 = flatten_vertices(&mesh);
        let h = 1e-5;

        let rest_uv = rest.uv.clone().unwrap();
        let err = fd_check(
            |x| {
                let m = with_vertices(&mesh, x);
                let (e, g) = strain_energy(&m, &rest_uv, &params).unwrap();
                (e, flat_grad(&g))
            },
            &x0,
            h,
        );
        record(0, err, &mut reports);

        let err = fd_check(
            |x| {
                let m = with_vertices(&mesh, x);
                let (e, g) = strain_energy_rest3d(&m, &rest, &params).unwrap();
                (e, flat_grad(&g))
            },
            &x0,
            h,
        );
        record(1, err, &mut reports);

        let bend = bend_rest(&rest);
        let err = fd_check(
            |x| {
                let m = with_vertices(&mesh, x);
                let (e, g) = bend_energy(&m, &bend, &params);
                (e, flat_grad(&g))
            },
            &x0,
            h,
        );
        record(2, err, &mut reports);

        let err = fd_check(
            |x| {
                let m = with_vertices(&mesh, x);
                let (e, g) = gravity_energy(&m, &params);
                (e, flat_grad(&g))
            },
            &x0,
            h,
        );
        record(3, err, &mut reports);

        // large flat floor just below the grid so the margin band is active
        let floor = TriMesh::new(
            vec![[-4.0, -4.0, -0.004], [4.0, -4.0, -0.004], [4.0, 4.0, -0.004], [-4.0, 4.0, -0.004]],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        let bvh = TriBvh::build(&floor);
        // keep every vertex a safe band away from the margin boundary,
        // where the cubic's third derivative jumps and central differences
        // degrade
        let mut contact = mesh.clone();
        for v in &mut contact.vertices {
            let delta = rng.gen_range(0.0005..0.0015);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            v[2] = -0.002 + sign * delta;
        }
        let xc = flatten_vertices(&contact);
        let err = fd_check(
            |x| {
                let m = with_vertices(&contact, x);
                let (e, g) = collision_energy(&m, &bvh, &params);
                (e, flat_grad(&g))
            },
            &xc,
            h,
        );
        record(4, err, &mut reports);

        let res = 32;
        let camera = Camera::front_orthographic(res, res, [0.5, 0.5, 0.0], 1.5);
        let image = random_normal_image(res, &mut rng);
        let raster = rasterize(&mesh, &camera);
        let err = fd_check(
            |x| {
                let m = with_vertices(&mesh, x);
                let (e, g) = normal_loss_grad(&m, &raster.visible, &image, &camera);
                (e, flat_grad(&g))
            },
            &x0,
            h,
        );
        record(5, err, &mut reports);

        let targets = FitTargets {
            seg_pixels: raster.centers.iter().map(|p| [p[0] + 1.5, p[1] - 0.5]).collect(),
            normal_image: image.clone(),
        };
        let rest_state = RestState::capture(&rest)?;
        let weights = LossWeights::default();
        let err = fd_check(
            |x| {
                let m = with_vertices(&mesh, x);
                let (e, g) = total_loss_with_raster(
                    &m, &rest_state, None, &targets, &camera, &weights, &params, &raster,
                )
                .unwrap();
                (e, flat_grad(&g))
            },
            &x0,
            h,
        );
        record(6, err, &mut reports);

        let err = fd_check(
            |x| {
                let m = with_vertices(&mesh, x);
                let (e, g) = style_loss(&m, &rest).unwrap();
                (e, flat_grad(&g))
            },
            &x0,
            h,
        );
        record(7, err, &mut reports);

        let net = DeformNet::new(2, 4, 6, &mut rng)?;
        let frame = toy_deform_frame(6, &mut rng);
        let p0 = net.params();
        let mut probe = net;
        let err = fd_check(
            |p| {
                probe.set_params(p);
                let (l, g) = deform_loss_grad(&probe, &frame, DEFORM_OCC_WEIGHT).unwrap();
                (l, g)
            },
            // the frame loss is O(20), so roundoff swamps near-zero
            // parameter gradients below this step
            &p0,
            1e-4,
        );
        record(8, err, &mut reports);

        let mut isp = IspModel::new(4, 6, 3, 1, &mut rng)?;
        let mut batch = Batch::default();
        for _ in 0..6 {
            let u = [rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9)];
            batch.sdf.push((Side::Front, u, rng.gen_range(-0.5..0.5), rng.gen_range(0..3)));
            batch.surface.push((
                Side::Back,
                u,
                [u[0], u[1], 0.1 * standard_normal(&mut rng)],
            ));
        }
        batch.seams.push(([0.5, 0.0], [0.5, 0.0]));
        let p0 = isp.flat_params();
        let err = fd_check(
            |p| {
                isp.set_flat_params(p);
                let (l, g) = isp_loss_grad(&isp, 0, &batch).unwrap();
                (l, g)
            },
            &p0,
            1e-4,
        );
        record(9, err, &mut reports);

        let occ: Vec<GridMap> = (0..2)
            .map(|_| {
                let mut m = GridMap::zeros(12, 12, 1, MapSemantics::Occupancy);
                for i in 0..12 {
                    for j in 0..12 {
                        let uv = m.pixel_uv(i, j);
                        if uv[0] * uv[0] + uv[1] * uv[1] < 0.4 {
                            m.set(i, j, 0, 1.0);
                        }
                    }
                }
                m
            })
            .collect();
        let z0: Vec<f64> = (0..4).map(|_| 0.1 * standard_normal(&mut rng)).collect();
        let pair = [(&occ[0], Side::Front), (&occ[1], Side::Back)];
        let err = fd_check(
            |z| {
                let (l, g) = recover_loss_grad(&isp, pair, z, 0.04, None).unwrap();
                (l, g)
            },
            &z0,
            1e-6,
        );
        record(10, err, &mut reports);
    }
    Ok(reports)
}
