//! JSON network files. Every dimensional field carries its unit as a key
//! suffix (`length_mm`, `compliance_ml_per_mmhg`, ...); values are converted
//! to SI on load. See `docs/network-format.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{ArterialNetwork, ArterySegment, BloodProperties, WindkesselBed};
use crate::error::{HemoError, Result};
use crate::units::PA_PER_MMHG;

type Units = &'static [(&'static str, f64)];

const LENGTH: Units = &[("m", 1.0), ("cm", 1e-2), ("mm", 1e-3)];
const PRESSURE: Units = &[("pa", 1.0), ("kpa", 1e3), ("mmhg", PA_PER_MMHG)];
const MODULUS: Units = &[("pa", 1.0), ("kpa", 1e3), ("mpa", 1e6)];
const VISCOSITY: Units = &[("pa_s", 1.0), ("mpa_s", 1e-3), ("poise", 0.1)];
const DENSITY: Units = &[("kg_per_m3", 1.0), ("g_per_cm3", 1e3)];
const RESISTANCE: Units = &[
    ("pa_s_per_m3", 1.0),
    ("mmhg_s_per_ml", PA_PER_MMHG * 1e6),
];
const COMPLIANCE: Units = &[
    ("m3_per_pa", 1.0),
    ("ml_per_mmhg", 1e-6 / PA_PER_MMHG),
];
const DIMENSIONLESS: Units = &[("", 1.0)];

struct Reader<'a> {
    origin: &'a str,
    context: String,
    obj: &'a Map<String, Value>,
}

impl<'a> Reader<'a> {
    fn new(origin: &'a str, context: String, value: &'a Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| HemoError::format(origin, format!("{context}: expected an object")))?;
        Ok(Reader { origin, context, obj })
    }

    fn err(&self, message: String) -> HemoError {
        HemoError::format(self.origin, format!("{}: {message}", self.context))
    }

    /// Read `base` in whichever unit variant is present; exactly one may be.
    fn quantity(&self, base: &str, units: Units, default: Option<f64>) -> Result<f64> {
        let mut found = None;
        for &(suffix, factor) in units {
            let key = if suffix.is_empty() {
                base.to_string()
            } else {
                format!("{base}_{suffix}")
            };
            if let Some(v) = self.obj.get(&key) {
                if found.is_some() {
                    return Err(self.err(format!("'{base}' given in more than one unit")));
                }
                let x = v
                    .as_f64()
                    .ok_or_else(|| self.err(format!("'{key}' must be a number")))?;
                found = Some(x * factor);
            }
        }
        match (found, default) {
            (Some(x), _) => Ok(x),
            (None, Some(d)) => Ok(d),
            (None, None) => {
                let keys: Vec<String> = units.iter().map(|(s, _)| format!("{base}_{s}")).collect();
                Err(self.err(format!("missing '{base}' (one of {})", keys.join(", "))))
            }
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.err(format!("'{key}' must be a string"))),
        }
    }
}

fn parse_blood(origin: &str, value: Option<&Value>) -> Result<BloodProperties> {
    let d = BloodProperties::default();
    let Some(value) = value else { return Ok(d) };
    let r = Reader::new(origin, "blood".into(), value)?;
    Ok(BloodProperties {
        density: r.quantity("density", DENSITY, Some(d.density))?,
        dynamic_viscosity: r.quantity("dynamic_viscosity", VISCOSITY, Some(d.dynamic_viscosity))?,
        coriolis_coefficient: r.quantity("coriolis_coefficient", DIMENSIONLESS, Some(d.coriolis_coefficient))?,
        velocity_profile_shape: r.quantity(
            "velocity_profile_shape",
            DIMENSIONLESS,
            Some(d.velocity_profile_shape),
        )?,
    })
}

fn parse_segment(origin: &str, index: usize, value: &Value) -> Result<ArterySegment> {
    let r = Reader::new(origin, format!("segments[{index}]"), value)?;
    let id = r
        .string("id")?
        .ok_or_else(|| r.err("missing 'id'".into()))?;
    let r = Reader {
        context: format!("segment '{id}'"),
        ..r
    };
    let children = match r.obj.get("children") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|c| {
                c.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| r.err("'children' must be a list of ids".into()))
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(r.err("'children' must be a list of ids".into())),
    };
    Ok(ArterySegment {
        name: r.string("name")?.unwrap_or_else(|| id.clone()),
        length: r.quantity("length", LENGTH, None)?,
        proximal_radius: r.quantity("proximal_radius", LENGTH, None)?,
        distal_radius: r.quantity("distal_radius", LENGTH, None)?,
        wall_thickness: r.quantity("wall_thickness", LENGTH, None)?,
        elastic_modulus: r.quantity("elastic_modulus", MODULUS, None)?,
        wall_viscosity: r.quantity("wall_viscosity", VISCOSITY, Some(0.0))?,
        external_pressure: r.quantity("external_pressure", PRESSURE, Some(0.0))?,
        terminal_bed: r.string("terminal_bed")?,
        children,
        id,
    })
}

fn parse_bed(origin: &str, id: &str, value: &Value) -> Result<WindkesselBed> {
    let r = Reader::new(origin, format!("bed '{id}'"), value)?;
    Ok(WindkesselBed {
        proximal_resistance: r.quantity("proximal_resistance", RESISTANCE, None)?,
        distal_resistance: r.quantity("distal_resistance", RESISTANCE, None)?,
        compliance: r.quantity("compliance", COMPLIANCE, None)?,
        outflow_pressure: r.quantity("outflow_pressure", PRESSURE, Some(0.0))?,
    })
}

/// Parse a network document. `origin` names the source in error messages.
/// Structural problems (unknown children, cycles, ...) are left to
/// `validate_network`; only malformed fields and duplicate ids fail here.
pub fn network_from_json(text: &str, origin: &str) -> Result<ArterialNetwork> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| HemoError::format(origin, format!("invalid JSON: {e}")))?;
    let top = Reader::new(origin, "network".into(), &doc)?;
    let blood = parse_blood(origin, top.obj.get("blood"))?;
    let root = top
        .string("root")?
        .ok_or_else(|| top.err("missing 'root'".into()))?;

    let items = top
        .obj
        .get("segments")
        .and_then(Value::as_array)
        .ok_or_else(|| top.err("'segments' must be a list".into()))?;
    let mut segments = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let seg = parse_segment(origin, i, item)?;
        if segments.contains_key(&seg.id) {
            return Err(top.err(format!("duplicate segment id '{}'", seg.id)));
        }
        segments.insert(seg.id.clone(), seg);
    }

    let mut beds = BTreeMap::new();
    match top.obj.get("beds") {
        None => {}
        Some(Value::Object(map)) => {
            for (id, v) in map {
                beds.insert(id.clone(), parse_bed(origin, id, v)?);
            }
        }
        Some(_) => return Err(top.err("'beds' must be an object keyed by bed id".into())),
    }

    Ok(ArterialNetwork {
        segments,
        root,
        beds,
        blood,
    })
}

/// Serialize with SI-suffixed keys; `network_from_json` reads it back exactly.
pub fn network_to_json(net: &ArterialNetwork) -> String {
    let segments: Vec<Value> = net
        .segments
        .values()
        .map(|s| {
            json!({
                "id": s.id,
                "name": s.name,
                "length_m": s.length,
                "proximal_radius_m": s.proximal_radius,
                "distal_radius_m": s.distal_radius,
                "wall_thickness_m": s.wall_thickness,
                "elastic_modulus_pa": s.elastic_modulus,
                "wall_viscosity_pa_s": s.wall_viscosity,
                "external_pressure_pa": s.external_pressure,
                "children": s.children,
                "terminal_bed": s.terminal_bed,
            })
        })
        .collect();
    let beds: Map<String, Value> = net
        .beds
        .iter()
        .map(|(id, b)| {
            (
                id.clone(),
                json!({
                    "proximal_resistance_pa_s_per_m3": b.proximal_resistance,
                    "distal_resistance_pa_s_per_m3": b.distal_resistance,
                    "compliance_m3_per_pa": b.compliance,
                    "outflow_pressure_pa": b.outflow_pressure,
                }),
            )
        })
        .collect();
    let doc = json!({
        "root": net.root,
        "blood": {
            "density_kg_per_m3": net.blood.density,
            "dynamic_viscosity_pa_s": net.blood.dynamic_viscosity,
            "coriolis_coefficient": net.blood.coriolis_coefficient,
            "velocity_profile_shape": net.blood.velocity_profile_shape,
        },
        "segments": segments,
        "beds": beds,
    });
    serde_json::to_string_pretty(&doc).expect("network serializes")
}

pub fn read_network(path: impl AsRef<Path>) -> Result<ArterialNetwork> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HemoError::io(path, e))?;
    network_from_json(&text, &path.display().to_string())
}

pub fn write_network(net: &ArterialNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, network_to_json(net)).map_err(|e| HemoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vascular::{reference_network, validate_network};

    const SMALL: &str = r#"{
        "root": "a",
        "blood": { "density_g_per_cm3": 1.05, "dynamic_viscosity_mpa_s": 3.5 },
        "segments": [
            { "id": "a", "length_cm": 10, "proximal_radius_mm": 10, "distal_radius_mm": 9,
              "wall_thickness_mm": 1.5, "elastic_modulus_kpa": 400, "children": ["b"] },
            { "id": "b", "length_mm": 120, "proximal_radius_mm": 3, "distal_radius_m": 0.002,
              "wall_thickness_mm": 0.5, "elastic_modulus_mpa": 1.2, "external_pressure_mmhg": 5,
              "terminal_bed": "w" }
        ],
        "beds": { "w": { "proximal_resistance_mmhg_s_per_ml": 0.1, "distal_resistance_pa_s_per_m3": 1e9,
                         "compliance_ml_per_mmhg": 1.0, "outflow_pressure_mmhg": 0 } }
    }"#;

    #[test]
    fn units_are_converted_to_si() {
        let net = network_from_json(SMALL, "small.json").unwrap();
        assert!(validate_network(&net).is_empty());
        assert!((net.blood.density - 1050.0).abs() < 1e-9);
        assert!((net.blood.dynamic_viscosity - 3.5e-3).abs() < 1e-15);
        assert_eq!(net.blood.velocity_profile_shape, 9.0);
        let a = &net.segments["a"];
        assert!((a.length - 0.1).abs() < 1e-15);
        assert!((a.elastic_modulus - 4e5).abs() < 1e-6);
        let b = &net.segments["b"];
        assert!((b.length - 0.12).abs() < 1e-15);
        assert!((b.external_pressure - 5.0 * PA_PER_MMHG).abs() < 1e-9);
        let w = &net.beds["w"];
        assert!((w.proximal_resistance - 0.1 * PA_PER_MMHG * 1e6).abs() < 1e-3);
        assert!((w.compliance - 1e-6 / PA_PER_MMHG).abs() < 1e-20);
    }

    #[test]
    fn round_trip_is_exact() {
        let net = reference_network();
        let back = network_from_json(&network_to_json(&net), "mem").unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let missing = SMALL.replace("\"length_cm\": 10,", "");
        let e = network_from_json(&missing, "x.json").unwrap_err();
        assert!(e.to_string().contains("missing 'length'"), "{e}");
        let twice = SMALL.replace("\"length_cm\": 10,", "\"length_cm\": 10, \"length_m\": 0.1,");
        assert!(network_from_json(&twice, "x.json").is_err());
        let dup = SMALL.replace("\"id\": \"b\"", "\"id\": \"a\"");
        assert!(network_from_json(&dup, "x.json").unwrap_err().to_string().contains("duplicate"));
        assert!(network_from_json("[1,2]", "x.json").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = reference_network();
        write_network(&net, &path).unwrap();
        assert_eq!(read_network(&path).unwrap(), net);
    }
}
