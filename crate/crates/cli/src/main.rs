//! Pipeline driver: synthetic scene generation, pattern/deformation
//! training and two-stage fitting, all runnable without external datasets.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stitchkit_core::body::capsule_body;
use stitchkit_core::check::gradient_report;
use stitchkit_core::deform::{
    build_maps, train_deform, DeformFrame, DeformNet, DeformTrainParams, ObservationImages,
};
use stitchkit_core::fit::{
    chamfer3d, rasterize, stage1_fit, stage2_refine, Camera, FitScene, FitTargets, LossWeights,
    PhysicsParams, RestState, Stage1Garment,
};
use stitchkit_core::flatten::{
    arap_flatten, category_constraints, lscm_init, rigid_energy, Side, DEFAULT_ARAP_ITERS,
};
use stitchkit_core::grid::{GridMap, MapSemantics};
use stitchkit_core::io::{
    read_camera, read_gmap, read_mlp1, read_obj, read_pfm, read_pnm16, write_body_sidecar,
    write_camera, write_gmap, write_mlp1, write_obj, write_pfm, write_pnm16, Config,
};
use stitchkit_core::isp::{
    max_coverage_map, occupancy_iou, train_isp, IspModel, IspTrainParams,
};
use stitchkit_core::math::Vec2;
use stitchkit_core::mesh::{apply_category_cuts, is_disk_topology};
use stitchkit_core::synth::{
    dome_garment, merge_meshes, mesh_from_maps, pattern_position_map, skirt_garment, toy_scene,
    SceneParams,
};
use stitchkit_core::{Error, GarmentCategory, TriMesh};

#[derive(Parser)]
#[command(name = "stitchkit", version, about = "Sewing-pattern garment fitting pipeline")]
struct Cli {
    /// Directory all inputs and outputs live under.
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate drape scenes for one garment category.
    SynthData {
        #[arg(long)]
        category: String,
        #[arg(long, default_value_t = 1)]
        frames: usize,
    },
    /// Cut a scene's rest garment into disk-topology pieces.
    Cut {
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
    /// Flatten the pieces into 2D panels with category constraints.
    Flatten {
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
    /// Train the implicit sewing-pattern model on toy garments.
    TrainIsp,
    /// Write max-coverage maps from the trained pattern model.
    Coverage,
    /// Train the deformation network on the generated scenes.
    TrainDeform,
    /// Predict occupancy/position maps and recover a mesh for one scene.
    Infer {
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
    /// Stage-1 fitting: optimize the network against the scene images.
    Fit {
        #[arg(long, default_value_t = 0)]
        scene: usize,
    },
    /// Stage-2 fitting: refine mesh vertices directly.
    Refine {
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Mesh to refine, relative to the scene directory.
        #[arg(long, default_value = "stage1.obj")]
        input: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    CheckGrad,
    /// Report 3D Chamfer distance (mm) and mask IoU against a reference.
    Eval {
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Mesh to evaluate, relative to the scene directory.
        #[arg(long)]
        mesh: PathBuf,
        /// Reference mesh; defaults to the scene's ground truth.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Failure {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match e {
            Error::SingularSystem
            | Error::NoConvergence(_)
            | Error::DegenerateTriangle
            | Error::DegeneratePanel
            | Error::DegenerateFace(_)
            | Error::DegenerateRestTriangle(_)
            | Error::ConstraintConflict(_)
            | Error::TapeReuse => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure { code: 2, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => Config::parse(&fs::read_to_string(path)?)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let w = cli.workdir.as_path();
    match cli.cmd {
        Cmd::SynthData { category, frames } => cmd_synth_data(w, &cfg, &category, frames),
        Cmd::Cut { scene } => cmd_cut(w, scene),
        Cmd::Flatten { scene } => cmd_flatten(w, scene),
        Cmd::TrainIsp => cmd_train_isp(w, &cfg),
        Cmd::Coverage => cmd_coverage(w, &cfg),
        Cmd::TrainDeform => cmd_train_deform(w, &cfg),
        Cmd::Infer { scene } => cmd_infer(w, &cfg, scene),
        Cmd::Fit { scene } => cmd_fit(w, &cfg, scene),
        Cmd::Refine { scene, input } => cmd_refine(w, &cfg, scene, &input),
        Cmd::CheckGrad => cmd_check_grad(),
        Cmd::Eval { scene, mesh, reference } => cmd_eval(w, scene, &mesh, reference.as_deref()),
    }
}

// ---------------------------------------------------------------------------
// scene files

fn scene_dir(workdir: &Path, k: usize) -> PathBuf {
    workdir.join("scenes").join(format!("scene_{k:03}"))
}

fn writer(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

fn reader(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

struct SceneMeta {
    category: GarmentCategory,
    uv_scale: Option<Vec2>,
}

fn write_meta(path: &Path, meta: &SceneMeta) -> Result<(), Failure> {
    let mut text = format!("category = {}\n", meta.category.name());
    if let Some(s) = meta.uv_scale {
        text.push_str(&format!("uv_scale = {:.17e} {:.17e}\n", s[0], s[1]));
    }
    fs::write(path, text)?;
    Ok(())
}

fn read_meta(path: &Path) -> Result<SceneMeta, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let mut category = None;
    let mut uv_scale = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else { continue };
        match key.trim() {
            "category" => {
                category = GarmentCategory::parse(value.trim());
                if category.is_none() {
                    return Err(Failure::validation(format!("unknown category `{}`", value.trim())));
                }
            }
            "uv_scale" => {
                let v: Vec<f64> =
                    value.split_whitespace().filter_map(|t| t.parse().ok()).collect();
                if v.len() != 2 {
                    return Err(Failure::validation("uv_scale needs two numbers"));
                }
                uv_scale = Some([v[0], v[1]]);
            }
            other => return Err(Failure::validation(format!("unknown scene key `{other}`"))),
        }
    }
    let category = category.ok_or_else(|| Failure::validation("scene meta missing category"))?;
    Ok(SceneMeta { category, uv_scale })
}

fn load_obs(dir: &Path) -> Result<ObservationImages, Failure> {
    Ok(ObservationImages {
        normal: read_pfm(reader(&dir.join("normal.pfm"))?, MapSemantics::Normal)?,
        body_seg: read_pnm16(reader(&dir.join("body_seg.pgm"))?, MapSemantics::Mask)?,
        body_pos: read_gmap(reader(&dir.join("body_pos.gmap"))?)?,
    })
}

fn load_camera(dir: &Path) -> Result<Camera, Failure> {
    Ok(read_camera(reader(&dir.join("camera.txt"))?)?)
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Front => "front",
        Side::Back => "back",
    }
}

// ---------------------------------------------------------------------------
// commands

fn cmd_synth_data(
    workdir: &Path,
    cfg: &Config,
    category: &str,
    frames: usize,
) -> Result<(), Failure> {
    let category = GarmentCategory::parse(category)
        .ok_or_else(|| Failure::validation(format!("unknown category `{category}`")))?;
    let params = SceneParams { resolution: cfg.image_size, ..SceneParams::default() };
    let body_model = capsule_body();
    for k in 0..frames {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        let scene = toy_scene(category, &params, &mut rng)?;
        let dir = scene_dir(workdir, k);
        fs::create_dir_all(&dir)?;
        write_obj(&scene.garment, writer(&dir.join("garment.obj"))?)?;
        write_obj(&scene.rest, writer(&dir.join("rest.obj"))?)?;
        write_obj(&scene.body, writer(&dir.join("body.obj"))?)?;
        write_body_sidecar(&body_model, writer(&dir.join("body.txt"))?)?;
        write_camera(&scene.camera, writer(&dir.join("camera.txt"))?)?;
        write_pfm(&scene.normal_image, writer(&dir.join("normal.pfm"))?)?;
        write_pnm16(&scene.garment_mask, writer(&dir.join("garment_seg.pgm"))?)?;
        write_pnm16(&scene.body_seg, writer(&dir.join("body_seg.pgm"))?)?;
        write_gmap(&scene.body_pos, writer(&dir.join("body_pos.gmap"))?)?;
        let uv_scale = scene.shell.as_ref().map(|s| s.uv_scale);
        if let Some(shell) = &scene.shell {
            for side in [Side::Front, Side::Back] {
                let name = side_name(side);
                let base =
                    pattern_position_map(shell, &shell.mesh.vertices, side, cfg.map_size)?;
                write_gmap(&base, writer(&dir.join(format!("base_{name}.gmap")))?)?;
                let gt =
                    pattern_position_map(shell, &scene.garment.vertices, side, cfg.map_size)?;
                write_gmap(&gt, writer(&dir.join(format!("gt_{name}.gmap")))?)?;
            }
        }
        write_meta(&dir.join("scene.txt"), &SceneMeta { category, uv_scale })?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_cut(workdir: &Path, scene: usize) -> Result<(), Failure> {
    let dir = scene_dir(workdir, scene);
    let meta = read_meta(&dir.join("scene.txt"))?;
    let rest = read_obj(reader(&dir.join("rest.obj"))?)?;
    let pieces = apply_category_cuts(&rest, meta.category)?;
    let out = dir.join("pieces");
    fs::create_dir_all(&out)?;
    for (i, piece) in pieces.iter().enumerate() {
        if !is_disk_topology(piece) {
            return Err(Failure::validation(format!("piece {i} is not a topological disk")));
        }
        write_obj(piece, writer(&out.join(format!("piece_{i}.obj")))?)?;
    }
    println!("{} pieces", pieces.len());
    Ok(())
}

fn cmd_flatten(workdir: &Path, scene: usize) -> Result<(), Failure> {
    let dir = scene_dir(workdir, scene);
    let meta = read_meta(&dir.join("scene.txt"))?;
    let pieces_dir = dir.join("pieces");
    let out = dir.join("panels");
    fs::create_dir_all(&out)?;
    let mut i = 0usize;
    loop {
        let path = pieces_dir.join(format!("piece_{i}.obj"));
        if !path.exists() {
            break;
        }
        let piece = read_obj(reader(&path)?)?;
        let mean_z: f64 =
            piece.vertices.iter().map(|v| v[2]).sum::<f64>() / piece.vertices.len() as f64;
        let side = if mean_z >= 0.0 { Side::Front } else { Side::Back };
        let tag = side_name(side);
        let init = lscm_init(&piece, &format!("piece_{i}"), side)?;
        let cons = category_constraints(meta.category, &piece, tag)?;
        let panel = arap_flatten(&piece, &init, &cons, DEFAULT_ARAP_ITERS)?;
        let mut flat = TriMesh::new(
            panel.coords.iter().map(|&c| [c[0], c[1], 0.0]).collect(),
            piece.faces.clone(),
        );
        flat.uv = Some(panel.coords.clone());
        write_obj(&flat, writer(&out.join(format!("panel_{i}.obj")))?)?;
        println!("panel_{i} ({tag}): rigid energy {:.3e}", rigid_energy(&piece, &panel)?);
        i += 1;
    }
    if i == 0 {
        return Err(Failure::validation("no pieces found; run `cut` first"));
    }
    Ok(())
}

fn cmd_train_isp(workdir: &Path, cfg: &Config) -> Result<(), Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x15b));
    let dataset = vec![
        dome_garment(0.6, 0.25, 600, &mut rng),
        skirt_garment(0.55, 0.5, 0.35, 600, &mut rng),
        dome_garment(0.45, 0.15, 600, &mut rng),
    ];
    let mut model = IspModel::new(cfg.latent_dim, cfg.isp_hidden, 3, dataset.len(), &mut rng)?;
    let params = IspTrainParams {
        epochs: cfg.isp_epochs,
        lr: cfg.isp_lr,
        ..IspTrainParams::default()
    };
    let losses = train_isp(&mut model, &dataset, &params, &mut rng)?;
    let mut sections = vec![model.flat_params()];
    sections.extend(model.latent_table.iter().cloned());
    write_mlp1(&sections, writer(&workdir.join("isp.mlp1"))?)?;
    println!(
        "pattern model: loss {:.4} -> {:.4} over {} epochs",
        losses.first().unwrap_or(&0.0),
        losses.last().unwrap_or(&0.0),
        losses.len()
    );
    Ok(())
}

fn load_isp(workdir: &Path, cfg: &Config) -> Result<IspModel, Failure> {
    let sections = read_mlp1(reader(&workdir.join("isp.mlp1"))?)?;
    if sections.len() < 2 {
        return Err(Failure::validation("isp.mlp1 has no latent sections"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model =
        IspModel::new(cfg.latent_dim, cfg.isp_hidden, 3, sections.len() - 1, &mut rng)?;
    model.set_flat_params(&sections[0]);
    model.latent_table = sections[1..].to_vec();
    Ok(model)
}

fn cmd_coverage(workdir: &Path, cfg: &Config) -> Result<(), Failure> {
    let model = load_isp(workdir, cfg)?;
    for side in [Side::Front, Side::Back] {
        let map = max_coverage_map(&model, &model.latent_table, side, cfg.map_size)?;
        let path = workdir.join(format!("coverage_{}.gmap", side_name(side)));
        write_gmap(&map, writer(&path)?)?;
        let covered = map.data.chunks(4).filter(|px| px[3] > 0.5).count();
        println!("{}: {covered} covered pixels", path.display());
    }
    Ok(())
}

fn occupancy_from_validity(base: &GridMap) -> GridMap {
    let mut occ = GridMap::zeros(base.height, base.width, 1, MapSemantics::Occupancy);
    for i in 0..base.height {
        for j in 0..base.width {
            occ.set(i, j, 0, if base.get(i, j, 3) > 0.5 { 1.0 } else { 0.0 });
        }
    }
    occ
}

fn scene_frames(workdir: &Path, k: usize) -> Result<Vec<DeformFrame>, Failure> {
    let dir = scene_dir(workdir, k);
    let mut frames = Vec::new();
    for side in [Side::Front, Side::Back] {
        let name = side_name(side);
        let base_path = dir.join(format!("base_{name}.gmap"));
        if !base_path.exists() {
            continue;
        }
        let base = read_gmap(reader(&base_path)?)?;
        let gt_pos = read_gmap(reader(&dir.join(format!("gt_{name}.gmap")))?)?;
        let gt_occ = occupancy_from_validity(&base);
        frames.push(DeformFrame {
            obs: load_obs(&dir)?,
            camera: load_camera(&dir)?,
            side,
            base,
            gt_pos,
            gt_occ,
        });
    }
    Ok(frames)
}

fn cmd_train_deform(workdir: &Path, cfg: &Config) -> Result<(), Failure> {
    let mut frames = Vec::new();
    let mut k = 0;
    while scene_dir(workdir, k).exists() {
        frames.extend(scene_frames(workdir, k)?);
        k += 1;
    }
    if frames.is_empty() {
        return Err(Failure::validation("no scenes with pattern maps; run `synth-data` first"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xdef));
    let mut net = DeformNet::new(cfg.deform_levels, cfg.deform_proj, cfg.deform_hidden, &mut rng)?;
    let params = DeformTrainParams {
        epochs: cfg.deform_epochs,
        lr: cfg.deform_lr,
        lambda: cfg.lambda_occ,
    };
    let losses = train_deform(&mut net, &frames, &params)?;
    write_mlp1(&[net.params()], writer(&workdir.join("deform.mlp1"))?)?;
    println!(
        "deformation net on {} frames: loss {:.4} -> {:.4}",
        frames.len(),
        losses.first().unwrap_or(&0.0),
        losses.last().unwrap_or(&0.0)
    );
    Ok(())
}

fn load_deform(workdir: &Path, cfg: &Config) -> Result<DeformNet, Failure> {
    let sections = read_mlp1(reader(&workdir.join("deform.mlp1"))?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = DeformNet::new(cfg.deform_levels, cfg.deform_proj, cfg.deform_hidden, &mut rng)?;
    if sections.len() != 1 || sections[0].len() != net.param_count() {
        return Err(Failure::validation("deform.mlp1 does not match the configured architecture"));
    }
    net.set_params(&sections[0]);
    Ok(net)
}

/// Predicted occupancy intersected with the base map's validity, so every
/// kept pixel has a usable skinned position.
fn infer_side(
    net: &DeformNet,
    dir: &Path,
    side: Side,
    camera: &Camera,
    obs: &ObservationImages,
) -> Result<(GridMap, GridMap, GridMap), Failure> {
    let base = read_gmap(reader(&dir.join(format!("base_{}.gmap", side_name(side))))?)?;
    let (mut occ, pos) = build_maps(net, &base, obs, camera, side)?;
    for i in 0..occ.height {
        for j in 0..occ.width {
            if base.get(i, j, 3) < 0.5 {
                occ.set(i, j, 0, 0.0);
            }
        }
    }
    Ok((occ, pos, base))
}

fn cmd_infer(workdir: &Path, cfg: &Config, scene: usize) -> Result<(), Failure> {
    let dir = scene_dir(workdir, scene);
    let meta = read_meta(&dir.join("scene.txt"))?;
    let uv_scale = meta
        .uv_scale
        .ok_or_else(|| Failure::validation("scene has no pattern maps; inference unsupported"))?;
    let net = load_deform(workdir, cfg)?;
    let camera = load_camera(&dir)?;
    let obs = load_obs(&dir)?;
    let mut halves = Vec::new();
    for side in [Side::Front, Side::Back] {
        let name = side_name(side);
        let (occ, pos, _) = infer_side(&net, &dir, side, &camera, &obs)?;
        write_gmap(&occ, writer(&dir.join(format!("occ_{name}.gmap")))?)?;
        write_gmap(&pos, writer(&dir.join(format!("pos_{name}.gmap")))?)?;
        halves.push(mesh_from_maps(&occ, &pos, side, uv_scale)?);
    }
    let (mesh, _) = merge_meshes(halves.remove(0), halves.remove(0));
    write_obj(&mesh, writer(&dir.join("infer.obj"))?)?;
    println!("infer.obj: {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
    Ok(())
}

fn load_fit_scene(dir: &Path, cfg: &Config, rest_source: &TriMesh) -> Result<FitScene, Failure> {
    let camera = load_camera(dir)?;
    let seg = read_pnm16(reader(&dir.join("garment_seg.pgm"))?, MapSemantics::Mask)?;
    let mut seg_pixels: Vec<Vec2> = Vec::new();
    for i in 0..seg.height {
        for j in 0..seg.width {
            if seg.get(i, j, 0) >= 0.5 {
                seg_pixels.push([j as f64, i as f64]);
            }
        }
    }
    if seg_pixels.is_empty() {
        return Err(Failure::validation("garment segmentation is empty"));
    }
    let normal_image = read_pfm(reader(&dir.join("normal.pfm"))?, MapSemantics::Normal)?;
    let body = read_obj(reader(&dir.join("body.obj"))?)?;
    Ok(FitScene {
        targets: FitTargets { seg_pixels, normal_image },
        camera,
        rest: RestState::capture(rest_source)?,
        body: Some(body),
        weights: LossWeights {
            chamfer: cfg.lambda_chamfer,
            normal: cfg.lambda_normal,
            physics: cfg.lambda_physics,
        },
        physics: PhysicsParams {
            stretch_stiffness: cfg.stretch_stiffness,
            bend_stiffness: cfg.bend_stiffness,
            area_density: cfg.area_density,
            gravity: cfg.gravity,
            collision_margin: cfg.collision_margin,
            collision_stiffness: cfg.collision_stiffness,
        },
    })
}

fn cmd_fit(workdir: &Path, cfg: &Config, scene: usize) -> Result<(), Failure> {
    let dir = scene_dir(workdir, scene);
    let meta = read_meta(&dir.join("scene.txt"))?;
    let uv_scale = meta
        .uv_scale
        .ok_or_else(|| Failure::validation("scene has no pattern maps; fitting unsupported"))?;
    let mut net = load_deform(workdir, cfg)?;
    let camera = load_camera(&dir)?;
    let obs = load_obs(&dir)?;
    // connectivity from predicted occupancy, base positions from skinning
    let mut halves = Vec::new();
    for side in [Side::Front, Side::Back] {
        let (occ, _, base) = infer_side(&net, &dir, side, &camera, &obs)?;
        halves.push(mesh_from_maps(&occ, &base, side, uv_scale)?);
    }
    let (base_mesh, pattern) = merge_meshes(halves.remove(0), halves.remove(0));
    let scene_data = load_fit_scene(&dir, cfg, &base_mesh)?;
    let garment = Stage1Garment {
        faces: base_mesh.faces.clone(),
        pattern,
        base: base_mesh.vertices.clone(),
        obs,
    };
    let losses = stage1_fit(&mut net, &garment, &scene_data, cfg.stage1_iters, cfg.stage1_lr)?;
    let mut out = garment.mesh(&net, &scene_data.camera)?;
    out.uv = base_mesh.uv.clone();
    write_obj(&out, writer(&dir.join("stage1.obj"))?)?;
    let best = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "stage 1: loss {:.4} -> {:.4} over {} iterations",
        losses.first().unwrap_or(&0.0),
        best,
        losses.len()
    );
    Ok(())
}

fn cmd_refine(workdir: &Path, cfg: &Config, scene: usize, input: &Path) -> Result<(), Failure> {
    let dir = scene_dir(workdir, scene);
    let mesh = read_obj(reader(&dir.join(input))?)?;
    if mesh.uv.is_none() {
        return Err(Failure::validation("input mesh has no uv; cannot form a rest state"));
    }
    let scene_data = load_fit_scene(&dir, cfg, &mesh)?;
    let out = stage2_refine(&mesh, &scene_data, cfg.stage2_iters, cfg.stage2_lr)?;
    write_obj(&out, writer(&dir.join("refined.obj"))?)?;
    println!("refined.obj: {} vertices", out.vertices.len());
    Ok(())
}

fn cmd_check_grad() -> Result<(), Failure> {
    let reports = gradient_report(20)?;
    let mut failed = false;
    for r in &reports {
        let status = if r.pass() { "ok" } else { "FAIL" };
        println!("{status:4} {:28} worst {:.3e} (tol {:.0e})", r.name, r.worst, r.tol);
        failed |= !r.pass();
    }
    if failed {
        return Err(Failure { code: 3, message: "gradient check failed".into() });
    }
    Ok(())
}

fn silhouette(mesh: &TriMesh, camera: &Camera) -> GridMap {
    let raster = rasterize(mesh, camera);
    let mut mask = GridMap::zeros(camera.height, camera.width, 1, MapSemantics::Mask);
    for (k, &f) in raster.face_id.iter().enumerate() {
        if f >= 0 {
            mask.data[k] = 1.0;
        }
    }
    mask
}

fn cmd_eval(
    workdir: &Path,
    scene: usize,
    mesh_path: &Path,
    reference: Option<&Path>,
) -> Result<(), Failure> {
    let dir = scene_dir(workdir, scene);
    let mesh = read_obj(reader(&dir.join(mesh_path))?)?;
    let ref_path = reference.map(|p| dir.join(p)).unwrap_or_else(|| dir.join("garment.obj"));
    let truth = read_obj(reader(&ref_path)?)?;
    let cd_mm = 1000.0 * chamfer3d(&mesh.vertices, &truth.vertices)?;
    let mut camera = load_camera(&dir)?;
    camera.height = 256;
    camera.width = 256;
    let iou = occupancy_iou(&silhouette(&mesh, &camera), &silhouette(&truth, &camera));
    println!("CD {cd_mm:.3} mm  IoU {iou:.4}");
    Ok(())
}
