use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{ArterialNetwork, ArterySegment, BloodProperties, TubeLaw, WindkesselBed};
use crate::error::{HemoError, Result};
use crate::population::WallStiffness;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    InvalidBlood(String),
    InvalidSegment(String),
    InvalidBed(String),
    KeyMismatch { key: String, id: String },
    MissingRoot(String),
    UnknownChild { parent: String, child: String },
    UnknownBed { segment: String, bed: String },
    NotATree(String),
    Unreachable(String),
    MissingTerminalBed(String),
    ChildrenAndBed(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidBlood(m) | Violation::InvalidSegment(m) | Violation::InvalidBed(m) => {
                write!(f, "{m}")
            }
            Violation::KeyMismatch { key, id } => {
                write!(f, "segment stored under '{key}' has id '{id}'")
            }
            Violation::MissingRoot(r) => write!(f, "root segment '{r}' does not exist"),
            Violation::UnknownChild { parent, child } => {
                write!(f, "segment '{parent}' lists unknown child '{child}'")
            }
            Violation::UnknownBed { segment, bed } => {
                write!(f, "segment '{segment}' references unknown bed '{bed}'")
            }
            Violation::NotATree(at) => write!(f, "not a tree: segment '{at}' is reached twice"),
            Violation::Unreachable(s) => write!(f, "segment '{s}' is not reachable from the root"),
            Violation::MissingTerminalBed(s) => write!(f, "missing terminal bed on leaf '{s}'"),
            Violation::ChildrenAndBed(s) => {
                write!(f, "segment '{s}' has both children and a terminal bed")
            }
        }
    }
}

/// All invariant violations of `net`; empty iff the network can be simulated.
pub fn validate_network(net: &ArterialNetwork) -> Vec<Violation> {
    let mut out: Vec<Violation> = net
        .blood
        .violations()
        .into_iter()
        .map(Violation::InvalidBlood)
        .collect();

    for (key, seg) in &net.segments {
        if key != &seg.id {
            out.push(Violation::KeyMismatch {
                key: key.clone(),
                id: seg.id.clone(),
            });
        }
        out.extend(seg.violations().into_iter().map(Violation::InvalidSegment));
        for child in &seg.children {
            if !net.segments.contains_key(child) {
                out.push(Violation::UnknownChild {
                    parent: key.clone(),
                    child: child.clone(),
                });
            }
        }
        match (&seg.terminal_bed, seg.children.is_empty()) {
            (Some(_), false) => out.push(Violation::ChildrenAndBed(key.clone())),
            (None, true) => out.push(Violation::MissingTerminalBed(key.clone())),
            _ => {}
        }
        if let Some(bed) = &seg.terminal_bed {
            if !net.beds.contains_key(bed) {
                out.push(Violation::UnknownBed {
                    segment: key.clone(),
                    bed: bed.clone(),
                });
            }
        }
    }
    for (id, bed) in &net.beds {
        out.extend(bed.violations(id).into_iter().map(Violation::InvalidBed));
    }

    if !net.segments.contains_key(&net.root) {
        out.push(Violation::MissingRoot(net.root.clone()));
        return out;
    }

    let mut visited = BTreeSet::new();
    let mut stack = vec![net.root.as_str()];
    let mut repeated = None;
    while let Some(id) = stack.pop() {
        if !visited.insert(id) {
            repeated = Some(id.to_string());
            break;
        }
        if let Some(seg) = net.segments.get(id) {
            stack.extend(
                seg.children
                    .iter()
                    .map(String::as_str)
                    .filter(|c| net.segments.contains_key(*c)),
            );
        }
    }
    match repeated {
        Some(at) => out.push(Violation::NotATree(at)),
        None => {
            for id in net.segments.keys() {
                if !visited.contains(id.as_str()) {
                    out.push(Violation::Unreachable(id.clone()));
                }
            }
        }
    }
    out
}

/// Rescale every segment length by `(height + eps) / 170`.
pub fn scale_network_to_height(
    net: &ArterialNetwork,
    height_cm: f64,
    eps_cm: f64,
) -> Result<ArterialNetwork> {
    let factor = (height_cm + eps_cm) / 170.0;
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(HemoError::domain(
            "vascular_model",
            format!("height scaling needs height + eps > 0, got {height_cm} + {eps_cm}"),
        ));
    }
    let mut scaled = net.clone();
    for seg in scaled.segments.values_mut() {
        seg.length *= factor;
    }
    Ok(scaled)
}

struct SegmentSpec {
    id: &'static str,
    name: &'static str,
    length: f64,
    proximal_radius: f64,
    distal_radius: f64,
    wall_thickness: f64,
    children: &'static [&'static str],
    bed: Option<&'static str>,
}

/// Wall viscosity shared by all reference segments, Pa·s.
const REFERENCE_WALL_VISCOSITY: f64 = 100.0;
/// Equivalent resistance of all beds in parallel, Pa·s·m⁻³ (≈ 90 mmHg at 4.9 L/min).
const REFERENCE_TOTAL_RESISTANCE: f64 = 1.46e8;
/// Total bed compliance, m³·Pa⁻¹.
const REFERENCE_BED_COMPLIANCE: f64 = 7.0e-9;

/// Six-segment desk-scale tree: aortic root feeding the descending aorta and
/// a brachial → radial chain on each arm. Wall stiffness follows the default
/// `Eh(R_d)` relation at age 50.
pub fn reference_network() -> ArterialNetwork {
    let specs = [
        SegmentSpec {
            id: "aorta",
            name: "ascending aorta and arch",
            length: 0.20,
            proximal_radius: 0.0125,
            distal_radius: 0.0110,
            wall_thickness: 1.6e-3,
            children: &["desc_aorta", "l_brachial", "r_brachial"],
            bed: None,
        },
        SegmentSpec {
            id: "desc_aorta",
            name: "descending aorta",
            length: 0.30,
            proximal_radius: 0.0100,
            distal_radius: 0.0080,
            wall_thickness: 1.2e-3,
            children: &[],
            bed: Some("trunk"),
        },
        SegmentSpec {
            id: "l_brachial",
            name: "left subclavian and brachial",
            length: 0.44,
            proximal_radius: 0.0045,
            distal_radius: 0.0030,
            wall_thickness: 0.6e-3,
            children: &["l_radial"],
            bed: None,
        },
        SegmentSpec {
            id: "l_radial",
            name: "left radial",
            length: 0.23,
            proximal_radius: 0.0018,
            distal_radius: 0.0014,
            wall_thickness: 0.4e-3,
            children: &[],
            bed: Some("l_hand"),
        },
        SegmentSpec {
            id: "r_brachial",
            name: "right subclavian and brachial",
            length: 0.40,
            proximal_radius: 0.0045,
            distal_radius: 0.0030,
            wall_thickness: 0.6e-3,
            children: &["r_radial"],
            bed: None,
        },
        SegmentSpec {
            id: "r_radial",
            name: "right radial",
            length: 0.23,
            proximal_radius: 0.0018,
            distal_radius: 0.0014,
            wall_thickness: 0.4e-3,
            children: &[],
            bed: Some("r_hand"),
        },
    ];
    let stiffness = WallStiffness::default();
    let blood = BloodProperties::default();
    let segments: BTreeMap<String, ArterySegment> = specs
        .iter()
        .map(|s| {
            let eh = stiffness.eh(s.distal_radius, 50.0);
            let seg = ArterySegment {
                id: s.id.to_string(),
                name: s.name.to_string(),
                length: s.length,
                proximal_radius: s.proximal_radius,
                distal_radius: s.distal_radius,
                wall_thickness: s.wall_thickness,
                elastic_modulus: eh / s.wall_thickness,
                wall_viscosity: REFERENCE_WALL_VISCOSITY,
                external_pressure: 0.0,
                children: s.children.iter().map(|c| c.to_string()).collect(),
                terminal_bed: s.bed.map(str::to_string),
            };
            (seg.id.clone(), seg)
        })
        .collect();

    // fraction of cardiac output drained by each bed
    let shares = [("trunk", "desc_aorta", 0.92), ("l_hand", "l_radial", 0.04), ("r_hand", "r_radial", 0.04)];
    let beds = shares
        .iter()
        .map(|&(bed, seg_id, share)| {
            let seg = &segments[seg_id];
            let law = seg.tube_law_at(1.0);
            let impedance = blood.density * law.wave_speed(law.reference_area, blood.density)
                / law.reference_area;
            let total = REFERENCE_TOTAL_RESISTANCE / share;
            let r1 = impedance.min(0.9 * total);
            (
                bed.to_string(),
                WindkesselBed {
                    proximal_resistance: r1,
                    distal_resistance: total - r1,
                    compliance: REFERENCE_BED_COMPLIANCE * share,
                    outflow_pressure: 0.0,
                },
            )
        })
        .collect();

    ArterialNetwork {
        segments,
        root: "aorta".to_string(),
        beds,
        blood,
    }
}

/// A single untapered vessel ending in a Windkessel bed whose proximal
/// resistance matches the characteristic impedance, so forward waves are not
/// reflected at the outlet.
pub fn uniform_vessel(
    length: f64,
    radius: f64,
    wall_thickness: f64,
    elastic_modulus: f64,
    blood: BloodProperties,
) -> ArterialNetwork {
    let seg = ArterySegment {
        id: "vessel".to_string(),
        name: "uniform vessel".to_string(),
        length,
        proximal_radius: radius,
        distal_radius: radius,
        wall_thickness,
        elastic_modulus,
        wall_viscosity: 0.0,
        external_pressure: 0.0,
        children: vec![],
        terminal_bed: Some("outlet".to_string()),
    };
    let law = TubeLaw::new(&seg, seg.reference_area_at(0.0));
    let impedance = blood.density * law.wave_speed(law.reference_area, blood.density) / law.reference_area;
    let bed = WindkesselBed {
        proximal_resistance: impedance,
        distal_resistance: 10.0 * impedance,
        compliance: 1e-9,
        outflow_pressure: 0.0,
    };
    ArterialNetwork {
        segments: BTreeMap::from([(seg.id.clone(), seg)]),
        root: "vessel".to_string(),
        beds: BTreeMap::from([("outlet".to_string(), bed)]),
        blood,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_network_is_valid() {
        let net = reference_network();
        let v = validate_network(&net);
        assert!(v.is_empty(), "{v:?}");
        assert_eq!(net.depth_first()[0], "aorta");
        assert_eq!(net.segments.len(), 6);
    }

    #[test]
    fn cycle_is_reported_once() {
        let mut net = reference_network();
        let radial = net.segments.get_mut("l_radial").unwrap();
        radial.children = vec!["l_brachial".to_string()];
        radial.terminal_bed = None;
        let v = validate_network(&net);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::NotATree(_)));
    }

    #[test]
    fn leaf_without_bed_is_reported() {
        let mut net = reference_network();
        net.segments.get_mut("r_radial").unwrap().terminal_bed = None;
        let v = validate_network(&net);
        assert_eq!(v, vec![Violation::MissingTerminalBed("r_radial".to_string())]);
        assert!(v[0].to_string().contains("missing terminal bed"));
    }

    #[test]
    fn bad_parameters_are_reported() {
        let mut net = reference_network();
        net.segments.get_mut("aorta").unwrap().distal_radius = 0.02;
        net.beds.get_mut("trunk").unwrap().compliance = 0.0;
        net.root = "aorta".into();
        let v = validate_network(&net);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn unreachable_and_unknown_references() {
        let mut net = reference_network();
        net.segments.get_mut("aorta").unwrap().children.retain(|c| c != "r_brachial");
        net.segments.get_mut("aorta").unwrap().children.push("ghost".into());
        let v = validate_network(&net);
        assert!(v.contains(&Violation::UnknownChild {
            parent: "aorta".into(),
            child: "ghost".into()
        }));
        assert!(v.contains(&Violation::Unreachable("r_brachial".into())));
        assert!(v.contains(&Violation::Unreachable("r_radial".into())));
    }

    #[test]
    fn height_scaling() {
        let net = reference_network();
        let same = scale_network_to_height(&net, 170.0, 0.0).unwrap();
        for (a, b) in net.segments.values().zip(same.segments.values()) {
            assert_eq!(a.length, b.length);
        }
        let mut one = net.clone();
        one.segments.get_mut("aorta").unwrap().length = 0.1;
        let tall = scale_network_to_height(&one, 187.0, 0.0).unwrap();
        assert!((tall.segments["aorta"].length - 0.110).abs() < 1e-12);
        assert_eq!(tall.segments["aorta"].proximal_radius, one.segments["aorta"].proximal_radius);
        let shifted = scale_network_to_height(&net, 160.0, 10.0).unwrap();
        assert_eq!(shifted.segments["aorta"].length, net.segments["aorta"].length);
        assert!(scale_network_to_height(&net, 100.0, -100.0).is_err());
    }

    #[test]
    fn reference_wave_speeds_are_physiological() {
        let net = reference_network();
        let c = |id: &str| {
            let law = net.segments[id].tube_law_at(0.5);
            law.wave_speed(law.reference_area, net.blood.density)
        };
        assert!((3.0..9.0).contains(&c("aorta")));
        assert!(c("l_radial") > c("aorta"));
    }
}
