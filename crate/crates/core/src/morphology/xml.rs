//! On-disk genome format:
//!
//! ```xml
//! <morphology version="1" mutation_count="2">
//!   <limb id="0" attach_angle="0" length="0.4" ... foot="0"/>
//!   <limb id="1" parent="0" attach_angle="-1.5708" ... foot="1"/>
//! </morphology>
//! ```
//!
//! Limbs appear in limb_id order, the root carries no `parent` attribute and
//! every float is written in plain decimal with six significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{GenomeError, LimbGene, MorphologyGenome};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum XmlError {
    #[error("malformed XML: {0}")]
    Malformed(#[from] roxmltree::Error),
    #[error("unexpected document structure: {0}")]
    Structure(String),
    #[error("limb {limb_id:?}: missing attribute `{attr}`")]
    MissingAttribute { limb_id: Option<u32>, attr: &'static str },
    #[error("limb {limb_id:?}: attribute `{attr}` has unparsable value {value:?}")]
    BadValue { limb_id: Option<u32>, attr: &'static str, value: String },
    #[error("limb {limb_id}: duplicate limb id")]
    DuplicateLimb { limb_id: u32 },
    #[error("invalid genome: {0}")]
    Invalid(#[from] GenomeError),
}

/// Plain-decimal rendering with exactly six significant digits.
pub(crate) fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".to_string() } else { format!("{x}") };
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if exp >= 5 {
        out.push_str(&digits);
        out.extend(std::iter::repeat_n('0', (exp - 5) as usize));
    } else if exp >= 0 {
        let split = exp as usize + 1;
        out.push_str(&digits[..split]);
        out.push('.');
        out.push_str(&digits[split..]);
    } else {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    }
    out
}

pub fn serialize_genome(genome: &MorphologyGenome) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<morphology version="{FORMAT_VERSION}" mutation_count="{}">"#,
        genome.mutation_count
    );
    for limb in genome.limbs.values() {
        let _ = write!(s, r#"  <limb id="{}""#, limb.limb_id);
        if let Some(p) = limb.parent_id {
            let _ = write!(s, r#" parent="{p}""#);
        }
        let fields = [
            ("attach_angle", limb.attach_angle),
            ("length", limb.length),
            ("radius", limb.radius),
            ("density", limb.density),
            ("joint_lo", limb.joint_limit_lo),
            ("joint_hi", limb.joint_limit_hi),
            ("torque_limit", limb.torque_limit),
        ];
        for (name, v) in fields {
            let _ = write!(s, r#" {name}="{}""#, format_sig6(v));
        }
        let _ = writeln!(s, r#" foot="{}"/>"#, u8::from(limb.is_foot));
    }
    s.push_str("</morphology>\n");
    s
}

fn parse_attr<T: std::str::FromStr>(
    node: &roxmltree::Node<'_, '_>,
    limb_id: Option<u32>,
    attr: &'static str,
) -> Result<T, XmlError> {
    let raw = node.attribute(attr).ok_or(XmlError::MissingAttribute { limb_id, attr })?;
    raw.trim().parse().map_err(|_| XmlError::BadValue { limb_id, attr, value: raw.to_string() })
}

pub fn deserialize_genome(doc: &str) -> Result<MorphologyGenome, XmlError> {
    let doc = roxmltree::Document::parse(doc)?;
    let root = doc.root_element();
    if root.tag_name().name() != "morphology" {
        return Err(XmlError::Structure(format!("root element is <{}>", root.tag_name().name())));
    }
    match root.attribute("version") {
        Some(FORMAT_VERSION) => {}
        other => return Err(XmlError::Structure(format!("unsupported version {other:?}"))),
    }
    let mutation_count = match root.attribute("mutation_count") {
        Some(_) => parse_attr(&root, None, "mutation_count")?,
        None => 0,
    };
    let mut limbs = BTreeMap::new();
    let mut roots = Vec::new();
    for node in root.children().filter(|n| n.is_element()) {
        if node.tag_name().name() != "limb" {
            return Err(XmlError::Structure(format!("unexpected element <{}>", node.tag_name().name())));
        }
        let limb_id: u32 = parse_attr(&node, None, "id")?;
        let id = Some(limb_id);
        let parent_id = match node.attribute("parent") {
            Some(_) => Some(parse_attr(&node, id, "parent")?),
            None => None,
        };
        let foot: u8 = parse_attr(&node, id, "foot")?;
        if foot > 1 {
            return Err(XmlError::BadValue { limb_id: id, attr: "foot", value: foot.to_string() });
        }
        let limb = LimbGene {
            limb_id,
            parent_id,
            attach_angle: parse_attr(&node, id, "attach_angle")?,
            length: parse_attr(&node, id, "length")?,
            radius: parse_attr(&node, id, "radius")?,
            density: parse_attr(&node, id, "density")?,
            joint_limit_lo: parse_attr(&node, id, "joint_lo")?,
            joint_limit_hi: parse_attr(&node, id, "joint_hi")?,
            torque_limit: parse_attr(&node, id, "torque_limit")?,
            is_foot: foot == 1,
        };
        if parent_id.is_none() {
            roots.push(limb_id);
        }
        if limbs.insert(limb_id, limb).is_some() {
            return Err(XmlError::DuplicateLimb { limb_id });
        }
    }
    if limbs.is_empty() {
        return Err(GenomeError::Empty.into());
    }
    // With no parentless limb every chain loops; report the first one.
    let Some(&root_id) = roots.first() else {
        let limb_id = *limbs.keys().next().expect("non-empty");
        return Err(GenomeError::Cycle { limb_id }.into());
    };
    let genome = MorphologyGenome { limbs, root_id, mutation_count };
    genome.validate()?;
    Ok(genome)
}
