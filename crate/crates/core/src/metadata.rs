//! Per-session factory metadata (`meta.json`) and the bundled device database.
//!
//! ```json
//! {
//!   "device": "iPad 12.9'' 5gen",
//!   "api": "av",
//!   "os_version": "14",
//!   "lens_distortion_center": [1009.73, 759.42],
//!   "intrinsic_reference_dimensions": [2016, 1512],
//!   "depth_intrinsics_unscaled": {"fx": 1781.78, "fy": 1781.78, "cx": 1009.89, "cy": 759.69},
//!   "color_intrinsics": {"fx": 565.64, "fy": 565.64, "cx": 320.53, "cy": 242.1, "ref_w": 640, "ref_h": 480},
//!   "distortion_lut": [0.0, ...],
//!   "inverse_distortion_lut": [0.0, ...],
//!   "ultra_wide": true
//! }
//! ```
//!
//! The two LUT keys and `ultra_wide` are optional. Any other key is kept
//! verbatim in [`CaptureMeta::extra`] and written back on serialization.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::camera::{rescale_intrinsics, Intrinsics, DEPTH_HEIGHT, DEPTH_WIDTH};
use crate::distortion::RadialLut;
use crate::error::{Error, Result};

/// Tolerance for the "distortion center equals principal point" check.
pub const LDC_PP_TOLERANCE_PX: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Api {
    #[serde(rename = "av")]
    Av,
    #[serde(rename = "arkit")]
    ArKit,
}

impl Api {
    pub fn as_str(self) -> &'static str {
        match self {
            Api::Av => "av",
            Api::ArKit => "arkit",
        }
    }
}

impl fmt::Display for Api {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Api {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "av" | "avsession" | "avfoundation" => Ok(Api::Av),
            "ar" | "arkit" | "arsession" => Ok(Api::ArKit),
            _ => Err(Error::BadType {
                field: "api".into(),
                expected: "\"av\" or \"arkit\"",
            }),
        }
    }
}

/// One API session's factory metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureMeta {
    pub device: String,
    pub api: Api,
    pub os_version: String,
    pub lens_distortion_center: (f64, f64),
    pub intrinsic_reference_dimensions: (u32, u32),
    /// Depth intrinsics at `intrinsic_reference_dimensions`.
    pub depth_intrinsics_unscaled: Intrinsics,
    pub color_intrinsics: Intrinsics,
    pub forward_lut: Option<RadialLut>,
    pub inverse_lut: Option<RadialLut>,
    pub ultra_wide: bool,
    pub extra: Map<String, Value>,
}

impl CaptureMeta {
    pub fn depth_f(&self) -> f64 {
        self.depth_intrinsics_unscaled.f
    }

    /// Depth intrinsics rescaled to the 640x480 depth raster.
    pub fn depth_intrinsics_vga(&self) -> Result<Intrinsics> {
        rescale_intrinsics(
            &self.depth_intrinsics_unscaled,
            DEPTH_WIDTH as u32,
            DEPTH_HEIGHT as u32,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.depth_intrinsics_unscaled;
        k.validate().map_err(|e| prefix_field(e, "depth_intrinsics_unscaled"))?;
        self.color_intrinsics
            .validate()
            .map_err(|e| prefix_field(e, "color_intrinsics"))?;
        if k.aspect != 1.0 {
            return Err(Error::invariant(
                "depth_intrinsics_unscaled.fy",
                format!("factory intrinsics must have aspect 1, got {}", k.aspect),
            ));
        }
        if k.skew != 0.0 {
            return Err(Error::invariant(
                "depth_intrinsics_unscaled.skew",
                "factory intrinsics must have zero skew",
            ));
        }
        if (k.ref_w, k.ref_h) != self.intrinsic_reference_dimensions {
            return Err(Error::invariant(
                "depth_intrinsics_unscaled",
                "reference dimensions differ from intrinsic_reference_dimensions",
            ));
        }
        let (lx, ly) = self.lens_distortion_center;
        if !(lx.is_finite() && ly.is_finite()) {
            return Err(Error::invariant("lens_distortion_center", "must be finite"));
        }
        if self.api == Api::Av
            && !self.ultra_wide
            && ((lx - k.cx).abs() > LDC_PP_TOLERANCE_PX || (ly - k.cy).abs() > LDC_PP_TOLERANCE_PX)
        {
            return Err(Error::invariant(
                "lens_distortion_center",
                format!(
                    "({lx}, {ly}) differs from the principal point ({}, {}) by more than {LDC_PP_TOLERANCE_PX} px",
                    k.cx, k.cy
                ),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let k = &self.depth_intrinsics_unscaled;
        let c = &self.color_intrinsics;
        let mut m = Map::new();
        m.insert("device".into(), json!(self.device));
        m.insert("api".into(), json!(self.api.as_str()));
        m.insert("os_version".into(), json!(self.os_version));
        m.insert(
            "lens_distortion_center".into(),
            json!([self.lens_distortion_center.0, self.lens_distortion_center.1]),
        );
        m.insert(
            "intrinsic_reference_dimensions".into(),
            json!([
                self.intrinsic_reference_dimensions.0,
                self.intrinsic_reference_dimensions.1
            ]),
        );
        m.insert(
            "depth_intrinsics_unscaled".into(),
            json!({"fx": k.f, "fy": k.fy(), "cx": k.cx, "cy": k.cy}),
        );
        m.insert(
            "color_intrinsics".into(),
            json!({"fx": c.f, "fy": c.fy(), "cx": c.cx, "cy": c.cy, "ref_w": c.ref_w, "ref_h": c.ref_h}),
        );
        if let Some(l) = &self.forward_lut {
            m.insert("distortion_lut".into(), json!(l.magnifications()));
        }
        if let Some(l) = &self.inverse_lut {
            m.insert("inverse_distortion_lut".into(), json!(l.magnifications()));
        }
        m.insert("ultra_wide".into(), json!(self.ultra_wide));
        for (key, v) in &self.extra {
            m.insert(key.clone(), v.clone());
        }
        Value::Object(m)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("meta serializes");
        s.push('\n');
        s
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_meta(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    /// Appends an entry to the `corrections` provenance array.
    pub fn push_correction(&mut self, entry: Value) {
        let list = self
            .extra
            .entry("corrections")
            .or_insert_with(|| Value::Array(Vec::new()));
        if !list.is_array() {
            *list = Value::Array(Vec::new());
        }
        if let Value::Array(a) = list {
            a.push(entry);
        }
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvariantViolation { field, reason } => Error::InvariantViolation {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

const KNOWN_KEYS: &[&str] = &[
    "device",
    "api",
    "os_version",
    "lens_distortion_center",
    "intrinsic_reference_dimensions",
    "depth_intrinsics_unscaled",
    "color_intrinsics",
    "distortion_lut",
    "inverse_distortion_lut",
    "ultra_wide",
];

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    prefix: &'a str,
}

impl<'a> Fields<'a> {
    fn name(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn get(&self, key: &str) -> Result<&'a Value> {
        self.obj.get(key).ok_or_else(|| Error::MissingField(self.name(key)))
    }

    fn string(&self, key: &str) -> Result<String> {
        self.get(key)?.as_str().map(str::to_owned).ok_or(Error::BadType {
            field: self.name(key),
            expected: "string",
        })
    }

    fn number(&self, key: &str) -> Result<f64> {
        number(self.get(key)?, &self.name(key))
    }

    fn dimension(&self, key: &str) -> Result<u32> {
        dimension(self.get(key)?, &self.name(key))
    }

    fn pair<T>(&self, key: &str, each: impl Fn(&Value, &str) -> Result<T>) -> Result<(T, T)> {
        let field = self.name(key);
        let arr = self.get(key)?.as_array().ok_or(Error::BadType {
            field: field.clone(),
            expected: "array of two numbers",
        })?;
        if arr.len() != 2 {
            return Err(Error::BadType {
                field,
                expected: "array of two numbers",
            });
        }
        Ok((each(&arr[0], &field)?, each(&arr[1], &field)?))
    }

    fn object(&self, key: &'a str) -> Result<Fields<'a>> {
        let obj = self.get(key)?.as_object().ok_or(Error::BadType {
            field: self.name(key),
            expected: "object",
        })?;
        Ok(Fields { obj, prefix: key })
    }

    fn numbers(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| number(v, &self.name(key)))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(Error::BadType {
                field: self.name(key),
                expected: "array of numbers",
            }),
        }
    }
}

fn number(v: &Value, field: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::BadType {
        field: field.to_string(),
        expected: "number",
    })
}

fn dimension(v: &Value, field: &str) -> Result<u32> {
    let x = number(v, field)?;
    if x.fract() != 0.0 || x <= 0.0 || x > u32::MAX as f64 {
        return Err(Error::invariant(field, format!("expected a positive integer, got {x}")));
    }
    Ok(x as u32)
}

fn intrinsics_from(
    obj: &Fields<'_>,
    ref_dims: Option<(u32, u32)>,
) -> Result<Intrinsics> {
    let fx = obj.number("fx")?;
    let fy = obj.number("fy")?;
    let cx = obj.number("cx")?;
    let cy = obj.number("cy")?;
    let skew = match obj.obj.get("skew") {
        None => 0.0,
        Some(v) => number(v, &obj.name("skew"))?,
    };
    let (ref_w, ref_h) = match ref_dims {
        Some(d) => d,
        None => (obj.dimension("ref_w")?, obj.dimension("ref_h")?),
    };
    if !(fx.is_finite() && fx > 0.0) {
        return Err(Error::invariant(obj.name("fx"), "must be > 0"));
    }
    let k = Intrinsics {
        f: fx,
        aspect: fy / fx,
        skew,
        cx,
        cy,
        ref_w,
        ref_h,
    };
    k.validate().map_err(|e| prefix_field(e, obj.prefix))?;
    Ok(k)
}

/// Parses and validates one `meta.json` document.
pub fn parse_meta(text: &[u8]) -> Result<CaptureMeta> {
    let text = std::str::from_utf8(text)
        .map_err(|e| Error::format("meta.json", format!("not UTF-8: {e}")))?;
    let value: Value = if text.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(text)?
    };
    meta_from_value(&value)
}

pub fn meta_from_value(value: &Value) -> Result<CaptureMeta> {
    let obj = value.as_object().ok_or(Error::BadType {
        field: "<root>".into(),
        expected: "object",
    })?;
    let root = Fields { obj, prefix: "" };

    let device = root.string("device")?;
    let api: Api = root.string("api")?.parse()?;
    let os_version = root.string("os_version")?;
    let lens_distortion_center = root.pair("lens_distortion_center", number)?;
    let ird = root.pair("intrinsic_reference_dimensions", dimension)?;
    let depth = intrinsics_from(&root.object("depth_intrinsics_unscaled")?, Some(ird))?;
    let color = intrinsics_from(&root.object("color_intrinsics")?, None)?;
    let ultra_wide = match obj.get("ultra_wide") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            return Err(Error::BadType {
                field: "ultra_wide".into(),
                expected: "boolean",
            })
        }
    };
    let lut = |key: &str| -> Result<Option<RadialLut>> {
        root.numbers(key)?
            .map(|m| {
                RadialLut::new(m, lens_distortion_center, ird.0, ird.1)
                    .map_err(|e| prefix_field(e, key))
            })
            .transpose()
    };
    let forward_lut = lut("distortion_lut")?;
    let inverse_lut = lut("inverse_distortion_lut")?;

    let extra = obj
        .iter()
        .filter(|(k, _)| !KNOWN_KEYS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    let meta = CaptureMeta {
        device,
        api,
        os_version,
        lens_distortion_center,
        intrinsic_reference_dimensions: ird,
        depth_intrinsics_unscaled: depth,
        color_intrinsics: color,
        forward_lut,
        inverse_lut,
        ultra_wide,
        extra,
    };
    meta.validate()?;
    Ok(meta)
}

/// AV and ARKit metadata for the same device and OS.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionPair {
    pub av: CaptureMeta,
    pub ar: CaptureMeta,
}

impl SessionPair {
    pub fn new(av: CaptureMeta, ar: CaptureMeta) -> Result<Self> {
        if av.api != Api::Av {
            return Err(Error::invariant("av.api", "expected an AV session record"));
        }
        if ar.api != Api::ArKit {
            return Err(Error::invariant("ar.api", "expected an ARKit session record"));
        }
        if av.device != ar.device {
            return Err(Error::invariant(
                "device",
                format!("session devices differ: {:?} vs {:?}", av.device, ar.device),
            ));
        }
        Ok(SessionPair { av, ar })
    }

    pub fn device(&self) -> &str {
        &self.av.device
    }

    pub fn session(&self, api: Api) -> &CaptureMeta {
        match api {
            Api::Av => &self.av,
            Api::ArKit => &self.ar,
        }
    }
}

/// ARKit-over-AV ratios of depth focal and reference dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetaRatios {
    pub depth_intrinsics_ratio: f64,
    pub ird_ratio_w: f64,
    pub ird_ratio_h: f64,
}

impl MetaRatios {
    /// `100 * (ratio - 1)`, the tables' percent-difference convention.
    pub fn depth_diff_percent(&self) -> f64 {
        100.0 * (self.depth_intrinsics_ratio - 1.0)
    }

    pub fn ird_diff_percent(&self) -> f64 {
        100.0 * (self.ird_ratio_w - 1.0)
    }
}

pub fn meta_ratios(pair: &SessionPair) -> Result<MetaRatios> {
    let (av_w, av_h) = pair.av.intrinsic_reference_dimensions;
    let (ar_w, ar_h) = pair.ar.intrinsic_reference_dimensions;
    let f_av = pair.av.depth_f();
    if !(f_av > 0.0) || av_w == 0 || av_h == 0 {
        return Err(Error::invariant("av", "zero denominator in session ratios"));
    }
    Ok(MetaRatios {
        depth_intrinsics_ratio: pair.ar.depth_f() / f_av,
        ird_ratio_w: ar_w as f64 / av_w as f64,
        ird_ratio_h: ar_h as f64 / av_h as f64,
    })
}

macro_rules! fixture {
    ($name:literal) => {
        ($name, include_str!(concat!("../fixtures/", $name)))
    };
}

/// Records transcribed from the AV and ARKit parameter tables, AV first.
const BUNDLED: &[(&str, &str)] = &[
    fixture!("ipad11_3gen_v1_av.json"),
    fixture!("ipad11_3gen_v1_arkit.json"),
    fixture!("ipad11_3gen_v2_av.json"),
    fixture!("ipad11_3gen_v2_arkit.json"),
    fixture!("ipad129_5gen_av_ios14.json"),
    fixture!("ipad129_5gen_arkit_ios14.json"),
    fixture!("ipad129_5gen_av_ios15.json"),
    fixture!("ipad129_5gen_arkit_ios15.json"),
    fixture!("ipad11_2gen_v1_av.json"),
    fixture!("ipad11_2gen_v1_arkit.json"),
    fixture!("ipad11_2gen_v2_av.json"),
    fixture!("ipad11_2gen_v2_arkit.json"),
    fixture!("ipad129_4gen_v1_av.json"),
    fixture!("ipad129_4gen_v1_arkit.json"),
    fixture!("ipad129_4gen_v2_av.json"),
    fixture!("ipad129_4gen_v2_arkit.json"),
    fixture!("iphone11pro_av_ios14.json"),
    fixture!("iphone11pro_arkit_ios14.json"),
    fixture!("iphone11pro_av_ios15.json"),
    fixture!("iphone11pro_arkit_ios15.json"),
];

/// Raw text of a bundled fixture file, by file name.
pub fn bundled_fixture(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled_fixture_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Groups records into pairs by `(device, os_version)`, in first-seen order.
pub fn pair_records(records: Vec<CaptureMeta>) -> Result<Vec<SessionPair>> {
    let mut slots: Vec<(String, String, Option<CaptureMeta>, Option<CaptureMeta>)> = Vec::new();
    for m in records {
        let idx = match slots
            .iter()
            .position(|(d, o, _, _)| *d == m.device && *o == m.os_version)
        {
            Some(i) => i,
            None => {
                slots.push((m.device.clone(), m.os_version.clone(), None, None));
                slots.len() - 1
            }
        };
        let slot = &mut slots[idx];
        let target = match m.api {
            Api::Av => &mut slot.2,
            Api::ArKit => &mut slot.3,
        };
        if target.is_some() {
            return Err(Error::invariant(
                "device",
                format!("duplicate {} record for {} (OS {})", m.api, m.device, m.os_version),
            ));
        }
        *target = Some(m);
    }
    slots
        .into_iter()
        .map(|(device, os, av, ar)| match (av, ar) {
            (Some(av), Some(ar)) => SessionPair::new(av, ar),
            _ => Err(Error::invariant(
                "device",
                format!("{device} (OS {os}) lacks one of the two sessions"),
            )),
        })
        .collect()
}

/// Every bundled record, paired.
pub fn fixture_database() -> Vec<SessionPair> {
    let records = BUNDLED
        .iter()
        .map(|(name, text)| {
            parse_meta(text.as_bytes()).unwrap_or_else(|e| panic!("bundled fixture {name}: {e}"))
        })
        .collect();
    pair_records(records).expect("bundled fixtures pair up")
}

/// Loads every `*.json` record in `dir` (sorted by file name) and pairs them.
pub fn load_fixture_dir(dir: impl AsRef<Path>) -> Result<Vec<SessionPair>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let records = paths
        .iter()
        .map(CaptureMeta::from_path)
        .collect::<Result<Vec<_>>>()?;
    pair_records(records)
}

/// Finds a record. `os` matches an exact version, a version prefix, or either
/// with an `iOS` prefix (`"iOS14"` matches `"14"`).
pub fn lookup<'a>(
    db: &'a [SessionPair],
    device: &str,
    api: Api,
    os: Option<&str>,
) -> Option<&'a CaptureMeta> {
    find_pair(db, device, os).map(|p| p.session(api))
}

pub fn find_pair<'a>(db: &'a [SessionPair], device: &str, os: Option<&str>) -> Option<&'a SessionPair> {
    let os = os.map(|o| o.trim_start_matches("iOS").trim_start_matches("ios").trim());
    db.iter().find(|p| {
        p.device() == device
            && os.map_or(true, |o| {
                let v = p.av.os_version.as_str();
                v == o || v.starts_with(&format!("{o}.")) || v.starts_with(o)
            })
    })
}
