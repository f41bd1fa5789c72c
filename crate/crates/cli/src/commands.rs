use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;

use gvgs_core::calibration::{calibrate as calibrate_depth, residual_by_level, CalibrationConfig, DepthPair, Spread};
use gvgs_core::consistency::{gvmv_loss, reprojection_error, ConsistencyError, SupervisionMask};
use gvgs_core::image::{Mask, ScalarMap};
use gvgs_core::io::cameras::{read_cameras, write_cameras};
use gvgs_core::io::config::{serialize_config, ConfigValue, PipelineConfig};
use gvgs_core::io::mono::read_mono;
use gvgs_core::io::pfm::{read_pfm, write_pfm};
use gvgs_core::io::ply::{read_gaussians, write_gaussians, write_mesh_ply, write_obj, PlyFormat};
use gvgs_core::io::png::{encode_gray8, encode_heatmap, encode_mask, encode_normals8, encode_rgb8, read_mask, read_rgb, write_png};
use gvgs_core::io::IoError;
use gvgs_core::meshing::mesh_gaussians;
use gvgs_core::objective::ViewData;
use gvgs_core::render::{render_gaussians, RenderConfig};
use gvgs_core::scene::{CameraView, Gaussian3D};
use gvgs_core::synth::{MonoDepthModel, SceneDescriptor};
use gvgs_core::train::{metrics_csv, synthetic_problem, train as run_training};
use gvgs_core::visibility::{covis_mask, gaussian_visibility, selective_opacity_from_buffers, visibility_from_buffers};

use crate::error::{CliError, Kind};

type Result<T> = std::result::Result<T, CliError>;

fn load_scene(scene: &Path, cameras: &Path) -> Result<(Vec<Gaussian3D>, Vec<CameraView>)> {
    Ok((read_gaussians(scene)?, read_cameras(cameras)?))
}

fn find_view(views: &[CameraView], id: u32) -> Result<&CameraView> {
    views
        .iter()
        .find(|v| v.view_id == id)
        .ok_or_else(|| CliError::usage(format!("no camera with view id {id}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| IoError::io(path, e).into())
}

pub fn synth(scene: &str, seed: u64, size: Option<usize>, init_noise: f64, out: &Path) -> Result<()> {
    let mut desc = SceneDescriptor::from_name(scene, seed).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(s) = size {
        desc.width = s;
        desc.height = s;
    }
    let mono = MonoDepthModel::default();
    let problem = synthetic_problem(&desc, init_noise, &mono).map_err(|e| CliError::usage(e.to_string()))?;
    write_gaussians(&out.join("scene.ply"), &problem.synthetic.scene.gaussians)?;
    write_gaussians(&out.join("init.ply"), &problem.init)?;
    write_cameras(&out.join("cameras.json"), &problem.views)?;
    for ((view, data), gt) in problem.views.iter().zip(&problem.data).zip(&problem.gt_depth) {
        let id = view.view_id;
        write_png(&out.join(format!("images/{id}.png")), &encode_rgb8(&data.target))?;
        write_pfm(&out.join(format!("depth/{id}.pfm")), gt)?;
        if let Some(m) = &data.mono {
            write_pfm(&out.join(format!("mono/{id}.pfm")), m)?;
        }
    }
    let mut map = PipelineConfig::default().to_map();
    for (k, v) in [
        ("paths.scene", "init.ply"),
        ("paths.cameras", "cameras.json"),
        ("paths.images", "images"),
        ("paths.mono", "mono"),
        ("paths.gt_depth", "depth"),
        ("paths.output", "train"),
    ] {
        map.insert(k.into(), ConfigValue::Str(v.into()));
    }
    write_text(&out.join("config.toml"), &serialize_config(&map))?;
    info!("wrote {} views of {} to {}", problem.views.len(), scene, out.display());
    Ok(())
}

pub fn render(scene: &Path, cameras: &Path, view: u32, out: &Path) -> Result<()> {
    let (gs, views) = load_scene(scene, cameras)?;
    let cam = find_view(&views, view)?;
    let b = render_gaussians(&gs, cam, &RenderConfig::default(), false);
    write_png(&out.join("color.png"), &encode_rgb8(&b.color))?;
    write_pfm(&out.join("depth.pfm"), &b.depth)?;
    write_png(&out.join("alpha.png"), &encode_gray8(&b.acc_alpha, 0.0, 1.0))?;
    write_png(&out.join("normal.png"), &encode_normals8(&b.normal))?;
    Ok(())
}

pub fn visibility(scene: &Path, cameras: &Path, reference: u32, neighbor: u32, tau: f64, threshold: f64, out: &Path) -> Result<()> {
    let (gs, views) = load_scene(scene, cameras)?;
    let (rf, nb) = (find_view(&views, reference)?, find_view(&views, neighbor)?);
    let cfg = RenderConfig::default();
    let record = gaussian_visibility(&gs, nb, tau, &cfg);
    let buffers = render_gaussians(&gs, rf, &cfg, true);
    let opacity = selective_opacity_from_buffers(&buffers, &record.indicators, reference, neighbor).map_err(CliError::runtime)?;

    let mut csv = String::from("index,weight,indicator\n");
    for (i, (w, d)) in record.weights.iter().zip(&record.indicators).enumerate() {
        let _ = writeln!(csv, "{i},{w},{}", u8::from(*d));
    }
    write_text(&out.join("weights.csv"), &csv)?;
    write_pfm(&out.join("opacity.pfm"), &opacity.values)?;
    write_png(&out.join("covis.png"), &encode_mask(&covis_mask(&opacity, threshold)))?;

    // Reference-view splat of each Gaussian's neighbor weight, normalized by
    // the largest weight.
    let w_max = record.weights.iter().copied().fold(0.0, f64::max);
    let contribs = buffers.contribs.as_ref().expect("contributions were recorded");
    let heat = ScalarMap::from_fn(rf.width, rf.height, |x, y| {
        contribs
            .pixel_at(y * rf.width + x)
            .iter()
            .map(|c| c.weight() * record.weights[c.gaussian as usize])
            .sum::<f64>()
            / w_max.max(f64::MIN_POSITIVE)
    });
    write_png(&out.join("weights.png"), &encode_heatmap(&heat, 0.0, 1.0))?;
    info!("{} of {} gaussians visible from view {neighbor}", record.visible_count(), gs.len());
    Ok(())
}

pub struct PairSettings {
    pub reference: u32,
    pub neighbor: u32,
    pub tau: f64,
    pub threshold: f64,
    pub phi_max: f64,
    pub lambda_vis: f64,
}

fn json_number(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

pub fn consistency(scene: &Path, cameras: &Path, p: PairSettings, out: &Path) -> Result<()> {
    let (gs, views) = load_scene(scene, cameras)?;
    let (rf, nb) = (find_view(&views, p.reference)?, find_view(&views, p.neighbor)?);
    let cfg = RenderConfig::default();
    let ref_buf = render_gaussians(&gs, rf, &cfg, true);
    let nb_buf = render_gaussians(&gs, nb, &cfg, true);
    let field = reprojection_error(&ref_buf.depth, &nb_buf.depth, rf, nb).map_err(CliError::runtime)?;
    let record = visibility_from_buffers(gs.len(), &nb_buf, p.neighbor, p.tau).map_err(CliError::runtime)?;
    let opacity =
        selective_opacity_from_buffers(&ref_buf, &record.indicators, p.reference, p.neighbor).map_err(CliError::runtime)?;
    let covis = covis_mask(&opacity, p.threshold);
    let mask = SupervisionMask::new(&field, covis, p.phi_max);
    let (loss, count) = match gvmv_loss(&field, &opacity, &mask, p.lambda_vis) {
        Ok(l) => (Some(l.value), l.count),
        Err(ConsistencyError::EmptySupervision { .. }) => (None, 0),
        Err(e) => return Err(CliError::runtime(e)),
    };

    write_pfm(&out.join("phi.pfm"), &field.phi)?;
    write_png(&out.join("depth_ok.png"), &encode_mask(&mask.depth_ok))?;
    write_png(&out.join("covis.png"), &encode_mask(&mask.covis))?;
    write_png(&out.join("union.png"), &encode_mask(&mask.union_v))?;
    let report = serde_json::json!({
        "pair": [p.reference, p.neighbor],
        "loss": loss.map_or(serde_json::Value::Null, json_number),
        "count": count,
        "union_pixels": mask.union_v.count(),
        "mean_phi": field.mean_phi().map_or(serde_json::Value::Null, json_number),
        "covis_fraction": json_number(mask.covis.count() as f64 / mask.covis.len().max(1) as f64),
        "normalization": "pixels of the union set with a valid reprojection error",
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_text(&out.join("report.json"), &text)
}

pub fn calibrate(
    mono: &Path,
    rendered: &Path,
    mask: Option<&Path>,
    level: usize,
    spread: &str,
    n_min: Option<usize>,
    out: &Path,
) -> Result<()> {
    if level > 12 {
        return Err(CliError::usage("level must be at most 12"));
    }
    let mut cfg = CalibrationConfig::default();
    cfg.spread = match spread {
        "mean" => Spread::MeanAbsDev,
        "median" => Spread::MedianAbsDev,
        other => return Err(CliError::usage(format!("unknown spread {other:?}, expected mean or median"))),
    };
    if let Some(n) = n_min {
        cfg.n_min = n;
    }
    let mono = read_pfm(mono)?;
    let rendered_map = read_pfm(rendered)?;
    let mask = match mask {
        Some(p) => read_mask(p)?,
        None => Mask::filled(mono.width(), mono.height(), true),
    };
    if !mono.same_dims(&rendered_map) || !mono.same_dims(&mask) {
        return Err(CliError::new(
            Kind::Format,
            format!(
                "input sizes differ: mono {:?}, rendered {:?}, mask {:?}",
                mono.dims(),
                rendered_map.dims(),
                mask.dims()
            ),
        ));
    }
    let pair = DepthPair::new(&mono, &rendered_map, &mask);
    let (calibrated, q) = calibrate_depth(&pair, level, &cfg, 0);
    write_pfm(&out.join("calibrated.pfm"), &calibrated)?;
    let mut csv = String::from("row,col,a,b,valid_count,fallback\n");
    let side = q.side();
    for row in 0..side {
        for col in 0..side {
            let b = q.block(row, col);
            let _ = writeln!(csv, "{row},{col},{},{},{},{}", b.a, b.b, b.valid_count, u8::from(b.fallback));
        }
    }
    write_text(&out.join("blocks.csv"), &csv)?;
    let levels: Vec<serde_json::Value> = residual_by_level(&pair, level, &cfg)
        .into_iter()
        .map(|(l, r, f)| serde_json::json!({"level": l, "residual": json_number(r), "fallback_blocks": f}))
        .collect();
    let text = serde_json::to_string_pretty(&serde_json::json!({ "levels": levels })).expect("report serializes") + "\n";
    write_text(&out.join("residuals.json"), &text)
}

struct Inputs {
    init: Vec<Gaussian3D>,
    views: Vec<CameraView>,
    data: Vec<ViewData>,
    gt_depth: Option<Vec<ScalarMap>>,
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::new(Kind::Config, format!("'{key}' is required unless synth.scene is set")))
}

fn load_training_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    if let Some(s) = &cfg.synth {
        let p = synthetic_problem(&s.descriptor, s.init_noise, &s.mono).map_err(|e| CliError::new(Kind::Config, e.to_string()))?;
        return Ok(Inputs {
            init: p.init,
            views: p.views,
            data: p.data,
            gt_depth: Some(p.gt_depth),
        });
    }
    let paths = &cfg.paths;
    let init = read_gaussians(required(&paths.scene, "paths.scene")?)?;
    let views = read_cameras(required(&paths.cameras, "paths.cameras")?)?;
    let images = required(&paths.images, "paths.images")?;
    let mut data = Vec::with_capacity(views.len());
    for v in &views {
        let target = read_rgb(&images.join(format!("{}.png", v.view_id)))?;
        let mono = match &paths.mono {
            Some(dir) => read_mono(dir, v.view_id)?,
            None => None,
        };
        let sizes_ok = target.dims() == (v.width, v.height) && mono.as_ref().is_none_or(|m| m.dims() == (v.width, v.height));
        if !sizes_ok {
            return Err(CliError::new(Kind::Format, format!("inputs of view {} do not match its camera size", v.view_id)));
        }
        data.push(ViewData::new(target, mono));
    }
    let gt_depth = match &paths.gt_depth {
        Some(dir) => Some(
            views
                .iter()
                .map(|v| read_pfm(&dir.join(format!("{}.pfm", v.view_id))))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    Ok(Inputs {
        init,
        views,
        data,
        gt_depth,
    })
}

pub fn train(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| CliError::new(Kind::Config, "no output directory: pass --out or set paths.output"))?;
    let inputs = load_training_inputs(&cfg)?;
    info!(
        "training {} gaussians over {} views for {} iterations",
        inputs.init.len(),
        inputs.views.len(),
        cfg.train.iterations
    );
    let result = run_training(&inputs.init, &inputs.views, &inputs.data, inputs.gt_depth.as_deref(), &cfg.train)
        .map_err(CliError::runtime)?;
    for flag in &result.flags {
        log::warn!("{flag}");
    }
    write_text(&out.join("metrics.csv"), &metrics_csv(&result.metrics))?;
    write_gaussians(&out.join("scene.ply"), &result.gaussians)?;
    write_text(&out.join("config.toml"), &serialize_config(&cfg.to_map()))
}

pub fn mesh(
    scene: &Path,
    cameras: &Path,
    resolution: usize,
    padding: f64,
    acc_threshold: f64,
    ascii: bool,
    out: &Path,
) -> Result<()> {
    let (gs, views) = load_scene(scene, cameras)?;
    let mesh = mesh_gaussians(&gs, &views, &RenderConfig::default(), resolution, padding, acc_threshold)
        .map_err(|e| CliError::usage(e.to_string()))?;
    info!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    match out.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("obj") => write_obj(out, &mesh)?,
        Some(e) if e.eq_ignore_ascii_case("ply") => {
            let format = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            write_mesh_ply(out, &mesh, format)?
        }
        _ => return Err(CliError::usage("mesh output must end in .ply or .obj")),
    }
    Ok(())
}
