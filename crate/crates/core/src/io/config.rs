//! Pipeline configuration: a flat key-value map read from TOML or JSON.
//!
//! Nested tables flatten into dotted keys, so `[lr] center = 1e-4`,
//! `lr.center = 1e-4` and `{"lr": {"center": 1e-4}}` all produce the key
//! `lr.center`. Unknown keys are rejected and every referenced input path must
//! exist when the configuration is loaded. Relative paths resolve against the
//! configuration file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{offset_of, read_bytes, FormatError, FormatErrorKind, IoError};
use crate::calibration::Spread;
use crate::objective::QuadtreeMode;
use crate::synth::{MonoDepthModel, SceneDescriptor, SceneKind};
use crate::train::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ConfigValue>),
}

pub type ConfigMap = BTreeMap<String, ConfigValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigSyntax {
    Toml,
    Json,
}

impl ConfigSyntax {
    /// `.json` files are JSON; everything else is TOML.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Toml,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("configuration key '{key}': {reason}")]
    BadValue { key: String, reason: String },
    #[error("configuration key '{key}' names a missing input: {path}")]
    MissingInput { key: String, path: PathBuf },
    #[error(transparent)]
    Io(#[from] IoError),
}

const FORMAT_TOML: &str = "config-toml";
const FORMAT_JSON: &str = "config-json";

fn from_toml(value: toml::Value, key: &str, out: &mut ConfigMap) -> Result<(), String> {
    let v = match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let full = if key.is_empty() { k } else { format!("{key}.{k}") };
                from_toml(v, &full, out)?;
            }
            return Ok(());
        }
        other => scalar_from_toml(other).map_err(|e| format!("{key}: {e}"))?,
    };
    out.insert(key.to_string(), v);
    Ok(())
}

fn scalar_from_toml(v: toml::Value) -> Result<ConfigValue, String> {
    Ok(match v {
        toml::Value::Boolean(b) => ConfigValue::Bool(b),
        toml::Value::Integer(i) => ConfigValue::Int(i),
        toml::Value::Float(f) => ConfigValue::Float(f),
        toml::Value::String(s) => ConfigValue::Str(s),
        toml::Value::Array(a) => ConfigValue::List(a.into_iter().map(scalar_from_toml).collect::<Result<_, _>>()?),
        toml::Value::Datetime(_) => return Err("dates are not supported".into()),
        toml::Value::Table(_) => return Err("tables inside arrays are not supported".into()),
    })
}

fn from_json(value: serde_json::Value, key: &str, out: &mut ConfigMap) -> Result<(), String> {
    let v = match value {
        serde_json::Value::Object(o) => {
            for (k, v) in o {
                let full = if key.is_empty() { k } else { format!("{key}.{k}") };
                from_json(v, &full, out)?;
            }
            return Ok(());
        }
        other => scalar_from_json(other).map_err(|e| format!("{key}: {e}"))?,
    };
    if key.is_empty() {
        return Err("top level must be an object".into());
    }
    out.insert(key.to_string(), v);
    Ok(())
}

fn scalar_from_json(v: serde_json::Value) -> Result<ConfigValue, String> {
    Ok(match v {
        serde_json::Value::Bool(b) => ConfigValue::Bool(b),
        serde_json::Value::Number(n) => match n.as_i64() {
            Some(i) => ConfigValue::Int(i),
            None => ConfigValue::Float(n.as_f64().ok_or("number out of range")?),
        },
        serde_json::Value::String(s) => ConfigValue::Str(s),
        serde_json::Value::Array(a) => ConfigValue::List(a.into_iter().map(scalar_from_json).collect::<Result<_, _>>()?),
        serde_json::Value::Null => return Err("null is not a value".into()),
        serde_json::Value::Object(_) => return Err("objects inside arrays are not supported".into()),
    })
}

/// Parses configuration text into its flat key-value map.
pub fn parse_config(text: &str, syntax: ConfigSyntax) -> Result<ConfigMap, FormatError> {
    let mut map = ConfigMap::new();
    match syntax {
        ConfigSyntax::Toml => {
            let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
                let at = e.span().map_or(0, |s| s.start);
                FormatError::new(FORMAT_TOML, FormatErrorKind::MalformedHeader, at, e.message().to_string())
            })?;
            from_toml(toml::Value::Table(table), "", &mut map)
                .map_err(|e| FormatError::new(FORMAT_TOML, FormatErrorKind::InvalidValue, 0, e))?;
        }
        ConfigSyntax::Json => {
            let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
                let kind = if e.is_eof() { FormatErrorKind::Truncated } else { FormatErrorKind::MalformedHeader };
                FormatError::new(FORMAT_JSON, kind, offset_of(text, e.line(), e.column()), e.to_string())
            })?;
            from_json(value, "", &mut map).map_err(|e| FormatError::new(FORMAT_JSON, FormatErrorKind::InvalidValue, 0, e))?;
        }
    }
    Ok(map)
}

fn to_toml(v: &ConfigValue) -> toml::Value {
    match v {
        ConfigValue::Bool(b) => toml::Value::Boolean(*b),
        ConfigValue::Int(i) => toml::Value::Integer(*i),
        ConfigValue::Float(f) => toml::Value::Float(*f),
        ConfigValue::Str(s) => toml::Value::String(s.clone()),
        ConfigValue::List(l) => toml::Value::Array(l.iter().map(to_toml).collect()),
    }
}

/// Serializes a flat map as TOML with one quoted dotted key per line.
pub fn serialize_config(map: &ConfigMap) -> String {
    let table: toml::Table = map.iter().map(|(k, v)| (k.clone(), to_toml(v))).collect();
    toml::to_string(&table).expect("flat scalar tables always serialize")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub scene: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    /// Directory of `<view_id>.png` training targets.
    pub images: Option<PathBuf>,
    /// Directory of `<view_id>.pfm` monocular depth (plus optional `.meta`).
    pub mono: Option<PathBuf>,
    /// Directory of `<view_id>.pfm` reference depth used for `depth_rmse`.
    pub gt_depth: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Generated training problem, used instead of scene/camera/image inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub descriptor: SceneDescriptor,
    /// Initial center noise as a fraction of the scene extent.
    pub init_noise: f64,
    pub mono: MonoDepthModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSettings {
    pub resolution: usize,
    pub padding: f64,
    /// Only pixels whose accumulated alpha exceeds this are fused.
    pub acc_threshold: f64,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self {
            resolution: crate::meshing::DEFAULT_RESOLUTION,
            padding: crate::meshing::DEFAULT_PADDING,
            acc_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub synth: Option<SynthSettings>,
    pub train: TrainConfig,
    pub mesh: MeshSettings,
}

struct Reader {
    map: ConfigMap,
}

impl Reader {
    fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::BadValue {
            key: key.into(),
            reason: reason.into(),
        }
    }

    fn f64(&mut self, key: &str, slot: &mut f64) -> Result<(), ConfigError> {
        match self.map.remove(key) {
            None => Ok(()),
            Some(ConfigValue::Float(v)) if v.is_finite() => {
                *slot = v;
                Ok(())
            }
            Some(ConfigValue::Int(v)) => {
                *slot = v as f64;
                Ok(())
            }
            Some(_) => Err(Self::bad(key, "expected a finite number")),
        }
    }

    fn u64(&mut self, key: &str, slot: &mut u64) -> Result<(), ConfigError> {
        match self.map.remove(key) {
            None => Ok(()),
            Some(ConfigValue::Int(v)) if v >= 0 => {
                *slot = v as u64;
                Ok(())
            }
            Some(_) => Err(Self::bad(key, "expected a non-negative integer")),
        }
    }

    fn usize(&mut self, key: &str, slot: &mut usize) -> Result<(), ConfigError> {
        let mut v = *slot as u64;
        self.u64(key, &mut v)?;
        *slot = usize::try_from(v).map_err(|_| Self::bad(key, "integer too large"))?;
        Ok(())
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(ConfigValue::Str(s)) => Ok(Some(s)),
            Some(_) => Err(Self::bad(key, "expected a string")),
        }
    }

    fn u64_list(&mut self, key: &str, slot: &mut Vec<u64>) -> Result<(), ConfigError> {
        match self.map.remove(key) {
            None => Ok(()),
            Some(ConfigValue::List(items)) => {
                *slot = items
                    .into_iter()
                    .map(|v| match v {
                        ConfigValue::Int(i) if i >= 0 => Ok(i as u64),
                        _ => Err(Self::bad(key, "expected a list of non-negative integers")),
                    })
                    .collect::<Result<_, _>>()?;
                Ok(())
            }
            Some(_) => Err(Self::bad(key, "expected a list")),
        }
    }

    fn path(&mut self, key: &str, base: &Path, must_exist: bool) -> Result<Option<PathBuf>, ConfigError> {
        let Some(s) = self.string(key)? else {
            return Ok(None);
        };
        let p = base.join(s);
        if must_exist && !p.exists() {
            return Err(ConfigError::MissingInput { key: key.into(), path: p });
        }
        Ok(Some(p))
    }
}

fn spread_name(s: Spread) -> &'static str {
    match s {
        Spread::MeanAbsDev => "mean",
        Spread::MedianAbsDev => "median",
    }
}

impl PipelineConfig {
    /// Builds a configuration from a flat map, resolving relative paths
    /// against `base`. Keys not present keep their defaults.
    pub fn from_map(map: ConfigMap, base: &Path) -> Result<Self, ConfigError> {
        let mut r = Reader { map };
        let mut cfg = PipelineConfig::default();
        let t = &mut cfg.train;

        cfg.paths = Paths {
            scene: r.path("paths.scene", base, true)?,
            cameras: r.path("paths.cameras", base, true)?,
            images: r.path("paths.images", base, true)?,
            mono: r.path("paths.mono", base, true)?,
            gt_depth: r.path("paths.gt_depth", base, true)?,
            output: r.path("paths.output", base, false)?,
        };

        r.u64("seed", &mut t.seed)?;
        r.u64("iterations", &mut t.iterations)?;
        if let Some(o) = r.string("optimizer")? {
            t.optimizer = OptimizerKind::parse(&o).ok_or_else(|| Reader::bad("optimizer", "expected 'gd' or 'adam'"))?;
        }
        r.f64("lr.center", &mut t.lr.center)?;
        r.f64("lr.scale", &mut t.lr.scale)?;
        r.f64("lr.rotation", &mut t.lr.rotation)?;
        r.f64("lr.opacity", &mut t.lr.opacity)?;
        r.f64("lr.color", &mut t.lr.color)?;
        let w = &mut t.weights;
        r.f64("loss.lambda1", &mut w.lambda1)?;
        r.f64("loss.lambda2", &mut w.lambda2)?;
        r.f64("loss.lambda3", &mut w.lambda3)?;
        r.f64("loss.lambda4", &mut w.lambda4)?;
        r.f64("loss.lambda_vis", &mut w.lambda_vis)?;
        r.f64("vis.tau", &mut w.tau)?;
        r.f64("vis.covis_threshold", &mut w.covis_threshold)?;
        r.f64("consistency.phi_max", &mut w.phi_max)?;
        r.u64("qdc.start", &mut w.qdc_window.0)?;
        r.u64("qdc.end", &mut w.qdc_window.1)?;
        r.u64_list("quadtree.milestones", &mut w.quadtree_milestones)?;
        match r.map.remove("quadtree.level") {
            None => {}
            Some(ConfigValue::Str(s)) if s == "progressive" => w.quadtree_mode = QuadtreeMode::Progressive,
            Some(ConfigValue::Int(l)) if (0..=16).contains(&l) => w.quadtree_mode = QuadtreeMode::Fixed(l as usize),
            Some(_) => return Err(Reader::bad("quadtree.level", "expected 'progressive' or a level in 0..=16")),
        }
        r.usize("calib.n_min", &mut w.calibration.n_min)?;
        r.f64("calib.sigma_min", &mut w.calibration.sigma_min)?;
        if let Some(s) = r.string("calib.spread")? {
            w.calibration.spread = match s.as_str() {
                "mean" => Spread::MeanAbsDev,
                "median" => Spread::MedianAbsDev,
                _ => return Err(Reader::bad("calib.spread", "expected 'mean' or 'median'")),
            };
        }
        r.usize("train.neighbors", &mut t.neighbors)?;
        r.f64("train.max_neighbor_angle", &mut t.max_neighbor_angle_deg)?;
        r.u64("train.eval_every", &mut t.eval_every)?;
        let rc = &mut t.render;
        r.f64("render.alpha_max", &mut rc.alpha_max)?;
        r.f64("render.alpha_cut", &mut rc.alpha_cut)?;
        r.f64("render.t_stop", &mut rc.t_stop)?;
        r.f64("render.cov2d_eps", &mut rc.cov2d_eps)?;
        r.f64("render.cutoff_sigma", &mut rc.cutoff_sigma)?;
        r.f64("render.near_clip", &mut rc.near_clip)?;
        r.usize("render.tile_size", &mut rc.tile_size)?;
        r.usize("mesh.resolution", &mut cfg.mesh.resolution)?;
        r.f64("mesh.padding", &mut cfg.mesh.padding)?;
        r.f64("mesh.acc_threshold", &mut cfg.mesh.acc_threshold)?;

        if let Some(kind) = r.string("synth.scene")? {
            let kind = SceneKind::parse(&kind).map_err(|e| Reader::bad("synth.scene", e.to_string()))?;
            let mut s = SynthSettings {
                descriptor: SceneDescriptor::new(kind, 0),
                init_noise: 0.02,
                mono: MonoDepthModel::default(),
            };
            let d = &mut s.descriptor;
            r.u64("synth.seed", &mut d.seed)?;
            r.usize("synth.views", &mut d.num_views)?;
            r.usize("synth.width", &mut d.width)?;
            r.usize("synth.height", &mut d.height)?;
            r.usize("synth.density", &mut d.density)?;
            r.f64("synth.init_noise", &mut s.init_noise)?;
            r.f64("synth.mono_scale", &mut s.mono.scale)?;
            r.f64("synth.mono_shift", &mut s.mono.shift)?;
            r.f64("synth.mono_bias", &mut s.mono.bias)?;
            r.f64("synth.mono_noise", &mut s.mono.noise)?;
            cfg.synth = Some(s);
        }

        if let Some(key) = r.map.keys().next() {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
        cfg.train
            .validate()
            .map_err(|e| Reader::bad("train", e.to_string()))?;
        if cfg.mesh.resolution < 2 {
            return Err(Reader::bad("mesh.resolution", "must be at least 2"));
        }
        Ok(cfg)
    }

    /// Every key with its current value; paths are written as stored.
    pub fn to_map(&self) -> ConfigMap {
        let mut m = ConfigMap::new();
        let f = |v: f64| ConfigValue::Float(v);
        let i = |v: u64| ConfigValue::Int(v as i64);
        let p = &self.paths;
        for (k, v) in [
            ("paths.scene", &p.scene),
            ("paths.cameras", &p.cameras),
            ("paths.images", &p.images),
            ("paths.mono", &p.mono),
            ("paths.gt_depth", &p.gt_depth),
            ("paths.output", &p.output),
        ] {
            if let Some(v) = v {
                m.insert(k.into(), ConfigValue::Str(v.to_string_lossy().into_owned()));
            }
        }
        let t = &self.train;
        let w = &t.weights;
        let rc = &t.render;
        let entries = [
            ("seed", i(t.seed)),
            ("iterations", i(t.iterations)),
            ("optimizer", ConfigValue::Str(t.optimizer.name().into())),
            ("lr.center", f(t.lr.center)),
            ("lr.scale", f(t.lr.scale)),
            ("lr.rotation", f(t.lr.rotation)),
            ("lr.opacity", f(t.lr.opacity)),
            ("lr.color", f(t.lr.color)),
            ("loss.lambda1", f(w.lambda1)),
            ("loss.lambda2", f(w.lambda2)),
            ("loss.lambda3", f(w.lambda3)),
            ("loss.lambda4", f(w.lambda4)),
            ("loss.lambda_vis", f(w.lambda_vis)),
            ("vis.tau", f(w.tau)),
            ("vis.covis_threshold", f(w.covis_threshold)),
            ("consistency.phi_max", f(w.phi_max)),
            ("qdc.start", i(w.qdc_window.0)),
            ("qdc.end", i(w.qdc_window.1)),
            ("quadtree.milestones", ConfigValue::List(w.quadtree_milestones.iter().map(|&v| i(v)).collect())),
            (
                "quadtree.level",
                match w.quadtree_mode {
                    QuadtreeMode::Progressive => ConfigValue::Str("progressive".into()),
                    QuadtreeMode::Fixed(l) => i(l as u64),
                },
            ),
            ("calib.n_min", i(w.calibration.n_min as u64)),
            ("calib.sigma_min", f(w.calibration.sigma_min)),
            ("calib.spread", ConfigValue::Str(spread_name(w.calibration.spread).into())),
            ("train.neighbors", i(t.neighbors as u64)),
            ("train.max_neighbor_angle", f(t.max_neighbor_angle_deg)),
            ("train.eval_every", i(t.eval_every)),
            ("render.alpha_max", f(rc.alpha_max)),
            ("render.alpha_cut", f(rc.alpha_cut)),
            ("render.t_stop", f(rc.t_stop)),
            ("render.cov2d_eps", f(rc.cov2d_eps)),
            ("render.cutoff_sigma", f(rc.cutoff_sigma)),
            ("render.near_clip", f(rc.near_clip)),
            ("render.tile_size", i(rc.tile_size as u64)),
            ("mesh.resolution", i(self.mesh.resolution as u64)),
            ("mesh.padding", f(self.mesh.padding)),
            ("mesh.acc_threshold", f(self.mesh.acc_threshold)),
        ];
        m.extend(entries.into_iter().map(|(k, v)| (k.to_string(), v)));
        if let Some(s) = &self.synth {
            let d = &s.descriptor;
            m.extend(
                [
                    ("synth.scene", ConfigValue::Str(d.kind.name().into())),
                    ("synth.seed", i(d.seed)),
                    ("synth.views", i(d.num_views as u64)),
                    ("synth.width", i(d.width as u64)),
                    ("synth.height", i(d.height as u64)),
                    ("synth.density", i(d.density as u64)),
                    ("synth.init_noise", f(s.init_noise)),
                    ("synth.mono_scale", f(s.mono.scale)),
                    ("synth.mono_shift", f(s.mono.shift)),
                    ("synth.mono_bias", f(s.mono.bias)),
                    ("synth.mono_noise", f(s.mono.noise)),
                ]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v)),
            );
        }
        m
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = read_bytes(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| {
            FormatError::new(FORMAT_TOML, FormatErrorKind::MalformedHeader, e.valid_up_to(), "configuration is not UTF-8")
        })?;
        let map = parse_config(text, ConfigSyntax::for_path(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_map(map, base)
    }
}
