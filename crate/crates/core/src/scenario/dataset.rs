//! JSON-lines dataset files. The first line is a header; every following line
//! holds one scenario. Floats are written as the hexadecimal form of their
//! IEEE-754 bit pattern so a save/load cycle is lossless.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::generate::GeneratorParams;
use super::{AgentPose, ExpertTrajectory, Goal, OtherAgent, Roadgraph, Scenario, ScenarioKind};
use crate::dynamics::{Action, VehicleState};
use crate::error::{DatasetError, Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
const FORMAT_TAG: &str = "awm-dataset";

#[derive(Debug, Clone, Copy, PartialEq)]
struct Hf(f64);

impl Serialize for Hf {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", self.0.to_bits()))
    }
}

impl<'de> Deserialize<'de> for Hf {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() != 16 {
            return Err(D::Error::custom(format!("bad float bit pattern {s:?}")));
        }
        u64::from_str_radix(&s, 16)
            .map(|b| Hf(f64::from_bits(b)))
            .map_err(|_| D::Error::custom(format!("bad float bit pattern {s:?}")))
    }
}

fn hx<const N: usize>(v: [f64; N]) -> [Hf; N] {
    v.map(Hf)
}

fn unhx<const N: usize>(v: [Hf; N]) -> [f64; N] {
    v.map(|h| h.0)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    schema_version: u32,
    count: usize,
    generator: GeneratorParams,
}

#[derive(Serialize, Deserialize)]
struct AgentRecord {
    radius: Hf,
    /// x, y, yaw, speed
    poses: Vec<[Hf; 4]>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioRecord {
    kind: ScenarioKind,
    seed: u64,
    half_width: Hf,
    polylines: Vec<Vec<[Hf; 2]>>,
    states: Vec<[Hf; 5]>,
    actions: Vec<[Hf; 2]>,
    others: Vec<AgentRecord>,
    /// x, y, yaw
    goal: [Hf; 3],
}

impl From<&Scenario> for ScenarioRecord {
    fn from(s: &Scenario) -> Self {
        Self {
            kind: s.kind,
            seed: s.seed,
            half_width: Hf(s.roadgraph.half_width),
            polylines: s
                .roadgraph
                .polylines
                .iter()
                .map(|l| l.iter().map(|p| hx(*p)).collect())
                .collect(),
            states: s.expert.states.iter().map(|st| hx(st.to_array())).collect(),
            actions: s.expert.actions.iter().map(|a| hx(a.to_array())).collect(),
            others: s
                .others
                .iter()
                .map(|o| AgentRecord {
                    radius: Hf(o.radius),
                    poses: o.poses.iter().map(|p| hx([p.x, p.y, p.yaw, p.speed])).collect(),
                })
                .collect(),
            goal: hx([s.goal.x, s.goal.y, s.goal.yaw]),
        }
    }
}

impl ScenarioRecord {
    fn into_scenario(self) -> std::result::Result<Scenario, String> {
        let states: Vec<VehicleState> = self.states.into_iter().map(|v| VehicleState::from_slice(&unhx(v))).collect();
        let actions: Vec<Action> = self.actions.into_iter().map(|v| Action::from_slice(&unhx(v))).collect();
        if states.is_empty() {
            return Err("expert trajectory is empty".into());
        }
        if actions.len() + 1 != states.len() {
            return Err(format!("{} states but {} actions", states.len(), actions.len()));
        }
        let roadgraph = Roadgraph {
            polylines: self
                .polylines
                .into_iter()
                .map(|l| l.into_iter().map(unhx).collect())
                .collect(),
            half_width: self.half_width.0,
        };
        if !roadgraph.is_valid() {
            return Err("roadgraph needs polylines of >= 2 distinct consecutive points".into());
        }
        let others = self
            .others
            .into_iter()
            .map(|o| {
                if o.poses.is_empty() {
                    return Err("agent without poses".to_string());
                }
                Ok(OtherAgent {
                    radius: o.radius.0,
                    poses: o
                        .poses
                        .into_iter()
                        .map(|p| {
                            let [x, y, yaw, speed] = unhx(p);
                            AgentPose { x, y, yaw, speed }
                        })
                        .collect(),
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let [gx, gy, gyaw] = unhx(self.goal);
        Ok(Scenario {
            kind: self.kind,
            seed: self.seed,
            roadgraph,
            expert: ExpertTrajectory { states, actions },
            others,
            goal: Goal { x: gx, y: gy, yaw: gyaw },
        })
    }
}

pub fn save_dataset(scenarios: &[Scenario], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: FORMAT_TAG.to_string(),
        schema_version: DATASET_SCHEMA_VERSION,
        count: scenarios.len(),
        generator: GeneratorParams::default(),
    };
    let mut write_line = |line: String| -> Result<()> {
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write_line(serde_json::to_string(&header).expect("header serializes"))?;
    for s in scenarios {
        write_line(serde_json::to_string(&ScenarioRecord::from(s)).expect("record serializes"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(DatasetError::MissingHeader.into()),
    };
    let header: serde_json::Value = serde_json::from_str(&header_line).map_err(|e| DatasetError::Header(e.to_string()))?;
    let version = header
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DatasetError::Header("missing schema_version".into()))?;
    if version != DATASET_SCHEMA_VERSION as u64 {
        return Err(DatasetError::Version {
            found: version as u32,
            expected: DATASET_SCHEMA_VERSION,
        }
        .into());
    }
    let header: Header = serde_json::from_value(header).map_err(|e| DatasetError::Header(e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(DatasetError::Header(format!("unexpected format tag {:?}", header.format)).into());
    }

    let mut out = Vec::with_capacity(header.count);
    for (index, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScenarioRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Record {
            index,
            reason: e.to_string(),
        })?;
        let scenario = record
            .into_scenario()
            .map_err(|reason| DatasetError::Record { index, reason })?;
        out.push(scenario);
    }
    if out.len() != header.count {
        return Err(DatasetError::Header(format!("header announces {} scenarios, found {}", header.count, out.len())).into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_suite;

    #[test]
    fn round_trip_is_field_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let scenarios = generate_suite(&ScenarioKind::ALL, 5, 3);
        save_dataset(&scenarios, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, scenarios);
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        save_dataset(&[], &path).unwrap();
        assert!(load_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        save_dataset(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\":1", "\"schema_version\":9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Dataset(DatasetError::Version { found: 9, .. }))
        ));
    }

    #[test]
    fn malformed_record_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let scenarios = generate_suite(&[ScenarioKind::Straight], 3, 0);
        save_dataset(&scenarios, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replacen("\"states\":[[\"", "\"states\":[[\"zz", 1);
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Dataset(DatasetError::Record { index, .. })) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
