//! TOML case files.
//!
//! ```toml
//! schema_version = 1
//! name = "A_gen"
//! horizon = 8
//! cost = "gen"            # or "curt", which needs a [curtailment] table
//!
//! [[bus]]
//! id = "1"
//! v_min = 0.9
//! v_max = 1.1
//!
//! [[link]]
//! from = "1"
//! to = "2"
//! g = 2.0
//! b = -4.0
//!
//! [[device]]
//! id = "G1"
//! kind = "generator"      # generator | static-load | flexible-load
//! bus = "1"
//! p_min = [0.5, ...]      # one entry per period
//! p_max = [2.0, ...]
//! q_min = -1.0            # reactive box, or q_ratio for Q = q_ratio * P
//! q_max = 1.0
//! curtailable = false
//! [device.cost]           # generators of "gen" cases
//! a = [...]
//! b = [...]
//! c = [...]
//! [device.flex]           # flexible loads
//! baseline = [...]
//! fee = 10.0
//! ```
//!
//! Extra capability rows can be given as `[[capability]]` tables with
//! `rhs` and `terms = [{ device = "G1", var = "q", coef = 1.0 }, ...]`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bus, CapabilityRow, CostSpec, Device, DeviceKind, FlexLoad, Instance, Link, Network};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub schema_version: u32,
    pub name: String,
    pub horizon: usize,
    pub cost: CostSelector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curtailment: Option<CurtailmentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe_seed: Option<u64>,
    #[serde(rename = "bus")]
    pub buses: Vec<BusEntry>,
    #[serde(rename = "link", default)]
    pub links: Vec<LinkEntry>,
    #[serde(rename = "device", default)]
    pub devices: Vec<DeviceEntry>,
    #[serde(rename = "capability", default, skip_serializing_if = "Vec::is_empty")]
    pub capability: Vec<CapabilityEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostSelector {
    Gen,
    Curt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurtailmentSection {
    pub c_curt: f64,
    pub c_losses: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusEntry {
    pub id: String,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub from: String,
    pub to: String,
    pub g: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindEntry {
    Generator,
    StaticLoad,
    FlexibleLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub id: String,
    pub kind: KindEntry,
    pub bus: String,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub curtailable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flex: Option<FlexEntry>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostEntry {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexEntry {
    pub baseline: Vec<f64>,
    pub fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityEntry {
    pub rhs: f64,
    pub terms: Vec<TermEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermEntry {
    pub device: String,
    pub var: PqVar,
    pub coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PqVar {
    P,
    Q,
}

impl CaseFile {
    pub fn from_toml_str(text: &str, file: &str) -> Result<Self> {
        let case: CaseFile = toml::from_str(text).map_err(|e| toml_error(text, file, &e))?;
        if case.schema_version != SCHEMA_VERSION {
            return Err(parse_err(
                file,
                "",
                "schema_version",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", case.schema_version),
            ));
        }
        Ok(case)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Canonical text form; `parse ∘ serialize` is the identity on `CaseFile`.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("case file serialization cannot fail")
    }

    /// Builds and validates the instance over `periods` periods, truncating
    /// or cycling the per-period arrays. `None` keeps the stored horizon.
    pub fn to_instance(&self, periods: Option<usize>, file: &str) -> Result<Instance> {
        let horizon = self.horizon;
        if horizon == 0 {
            return Err(parse_err(file, "", "horizon", "horizon must be at least 1"));
        }
        let t_len = periods.unwrap_or(horizon);
        if t_len == 0 {
            return Err(Error::Config("number of periods must be at least 1".into()));
        }
        let per_period = |v: &[f64], section: String, field: &str| -> Result<Vec<f64>> {
            if v.len() != horizon {
                return Err(parse_err(
                    file,
                    &section,
                    field,
                    format!("expected {horizon} per-period values, found {}", v.len()),
                ));
            }
            Ok((0..t_len).map(|t| v[t % horizon]).collect())
        };

        let mut bus_index = HashMap::new();
        let mut buses = Vec::with_capacity(self.buses.len());
        for (i, b) in self.buses.iter().enumerate() {
            if bus_index.insert(b.id.clone(), i).is_some() {
                return Err(parse_err(file, &format!("bus[{i}]"), "id", format!("duplicate bus id {:?}", b.id)));
            }
            buses.push(Bus {
                id: b.id.clone(),
                v_min: b.v_min,
                v_max: b.v_max,
            });
        }
        let lookup = |id: &str, section: String, field: &str| -> Result<usize> {
            bus_index
                .get(id)
                .copied()
                .ok_or_else(|| parse_err(file, &section, field, format!("unknown bus id {id:?}")))
        };
        let mut links = Vec::with_capacity(self.links.len());
        for (l, e) in self.links.iter().enumerate() {
            links.push(Link {
                from: lookup(&e.from, format!("link[{l}]"), "from")?,
                to: lookup(&e.to, format!("link[{l}]"), "to")?,
                g: e.g,
                b: e.b,
            });
        }
        let network = Network::new(buses, links)?;

        let nd = self.devices.len();
        let mut devices = Vec::with_capacity(nd);
        let mut flex = Vec::new();
        let mut capability = Vec::new();
        let mut device_index = HashMap::new();
        let (mut ca, mut cb, mut cc) = (vec![vec![0.0; t_len]; nd], vec![vec![0.0; t_len]; nd], vec![vec![0.0; t_len]; nd]);
        for (k, d) in self.devices.iter().enumerate() {
            let sec = || format!("device[{k}] ({})", d.id);
            if device_index.insert(d.id.clone(), k).is_some() {
                return Err(parse_err(file, &sec(), "id", format!("duplicate device id {:?}", d.id)));
            }
            let kind = match d.kind {
                KindEntry::Generator => DeviceKind::Generator,
                KindEntry::StaticLoad => DeviceKind::StaticLoad,
                KindEntry::FlexibleLoad => DeviceKind::FlexibleLoad,
            };
            devices.push(Device {
                id: d.id.clone(),
                bus: lookup(&d.bus, sec(), "bus")?,
                kind,
                p_min: per_period(&d.p_min, sec(), "p_min")?,
                p_max: per_period(&d.p_max, sec(), "p_max")?,
                curtailable: d.curtailable,
            });

            let (p, q) = (2 * k, 2 * k + 1);
            match (d.q_min, d.q_max, d.q_ratio) {
                (Some(lo), Some(hi), None) => {
                    if !(lo <= hi) {
                        return Err(parse_err(file, &sec(), "q_min", format!("q_min {lo} exceeds q_max {hi}")));
                    }
                    capability.push(CapabilityRow {
                        coeffs: vec![(q, 1.0)],
                        rhs: hi,
                    });
                    capability.push(CapabilityRow {
                        coeffs: vec![(q, -1.0)],
                        rhs: -lo,
                    });
                }
                (None, None, Some(r)) => {
                    capability.push(CapabilityRow {
                        coeffs: vec![(q, 1.0), (p, -r)],
                        rhs: 0.0,
                    });
                    capability.push(CapabilityRow {
                        coeffs: vec![(q, -1.0), (p, r)],
                        rhs: 0.0,
                    });
                }
                _ => {
                    return Err(parse_err(
                        file,
                        &sec(),
                        "q_min",
                        "reactive power needs either both q_min and q_max, or q_ratio",
                    ))
                }
            }

            match (&d.cost, self.cost, kind) {
                (Some(c), CostSelector::Gen, DeviceKind::Generator) => {
                    ca[k] = per_period(&c.a, sec(), "cost.a")?;
                    cb[k] = per_period(&c.b, sec(), "cost.b")?;
                    cc[k] = per_period(&c.c, sec(), "cost.c")?;
                }
                (None, CostSelector::Gen, DeviceKind::Generator) => {
                    return Err(parse_err(file, &sec(), "cost", "generators of a gen case need cost coefficients"))
                }
                (Some(_), _, _) => {
                    return Err(parse_err(file, &sec(), "cost", "cost coefficients only apply to generators of gen cases"))
                }
                (None, _, _) => {}
            }
            if d.curtailable && (self.cost != CostSelector::Curt || kind != DeviceKind::Generator) {
                return Err(parse_err(file, &sec(), "curtailable", "only generators of curt cases can be curtailable"));
            }
            match (&d.flex, kind) {
                (Some(fx), DeviceKind::FlexibleLoad) => flex.push(FlexLoad {
                    device: k,
                    baseline: per_period(&fx.baseline, sec(), "flex.baseline")?,
                    fee: fx.fee,
                }),
                (None, DeviceKind::FlexibleLoad) => {
                    return Err(parse_err(file, &sec(), "flex", "flexible loads need a [device.flex] table"))
                }
                (Some(_), _) => return Err(parse_err(file, &sec(), "flex", "flex block on a non-flexible device")),
                (None, _) => {}
            }
        }
        for (r, row) in self.capability.iter().enumerate() {
            let mut coeffs = Vec::with_capacity(row.terms.len());
            for t in &row.terms {
                let k = *device_index
                    .get(&t.device)
                    .ok_or_else(|| parse_err(file, &format!("capability[{r}]"), "terms.device", format!("unknown device id {:?}", t.device)))?;
                coeffs.push((2 * k + (t.var == PqVar::Q) as usize, t.coef));
            }
            capability.push(CapabilityRow { coeffs, rhs: row.rhs });
        }

        let cost = match (self.cost, &self.curtailment) {
            (CostSelector::Gen, None) => CostSpec::Gen { a: ca, b: cb, c: cc },
            (CostSelector::Curt, Some(c)) => {
                if !(c.c_curt >= 0.0 && c.c_losses >= 0.0) {
                    return Err(parse_err(file, "curtailment", "c_curt", "cost weights must be non-negative"));
                }
                CostSpec::Curt {
                    c_curt: c.c_curt,
                    c_losses: c.c_losses,
                }
            }
            (CostSelector::Gen, Some(_)) => {
                return Err(parse_err(file, "curtailment", "", "curtailment table given for a gen case"))
            }
            (CostSelector::Curt, None) => {
                return Err(parse_err(file, "", "curtailment", "curt case needs a [curtailment] table"))
            }
        };

        let name = match periods {
            Some(t) => format!("{}_T{t}", self.name),
            None => self.name.clone(),
        };
        let inst = Instance {
            name,
            network,
            devices,
            flex,
            horizon: t_len,
            capability,
            cost,
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Reads and validates a case file over `periods` periods.
pub fn parse_case(path: &Path, periods: Option<usize>) -> Result<Instance> {
    CaseFile::read(path)?.to_instance(periods, &path.display().to_string())
}

fn parse_err(file: &str, section: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        section: section.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

/// Maps a TOML error to the enclosing `[section]` header and the offending
/// key, located through the error span.
fn toml_error(text: &str, file: &str, err: &toml::de::Error) -> Error {
    let msg = err.message().to_string();
    let (mut section, mut field) = (String::new(), String::new());
    if let Some(span) = err.span() {
        let start = span.start.min(text.len());
        let line_no = text[..start].matches('\n').count() + 1;
        for line in text.lines().take(line_no).collect::<Vec<_>>().into_iter().rev() {
            let l = line.trim();
            if l.starts_with('[') {
                section = l.trim_matches(|c| c == '[' || c == ']').to_string();
                break;
            }
        }
        let line = text.lines().nth(line_no - 1).unwrap_or("");
        if let Some((key, _)) = line.split_once('=') {
            field = key.trim().to_string();
        }
        section = if section.is_empty() {
            format!("line {line_no}")
        } else {
            format!("{section}, line {line_no}")
        };
    }
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            field = msg[start + 1..start + 1 + len].to_string();
        }
    }
    parse_err(file, &section, &field, msg)
}
