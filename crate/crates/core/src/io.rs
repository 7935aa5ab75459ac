//! Scenario and trace serialization.
//!
//! Scenarios are JSON documents. Traces are written as four CSV tables:
//!
//! * `flows.csv`: `tick,flow_id,cost,active,spacing_err`, one row per tick per flow
//! * `ticks.csv`: `tick,connected,icp_ran,core_connected,retention_violations`
//! * `commands.csv`: `tick,agent,target`
//! * `positions.csv`: `tick,agent,x,y`, only for ticks that kept positions
//!
//! Floating point values are written with 9 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::geom::Vec2;
use crate::icp::IcpCommand;
use crate::model::{AgentId, FlowId, Scenario};
use crate::sim::{FlowMetrics, TickRecord, Trace};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{table}.csv line {line}: {msg}")]
    Csv {
        table: &'static str,
        line: usize,
        msg: String,
    },
}

pub const FLOWS_HEADER: &str = "tick,flow_id,cost,active,spacing_err";
pub const TICKS_HEADER: &str = "tick,connected,icp_ran,core_connected,retention_violations";
pub const COMMANDS_HEADER: &str = "tick,agent,target";
pub const POSITIONS_HEADER: &str = "tick,agent,x,y";

/// Formats `x` rounded to 9 significant digits in plain decimal notation.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{:.8e}", x).parse().expect("formatted float parses");
    format!("{}", rounded)
}

fn read_file(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, body: &str) -> Result<(), IoError> {
    fs::write(path, body).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_scenario(text: &str) -> Result<Scenario, IoError> {
    Ok(serde_json::from_str(text)?)
}

pub fn scenario_to_json(sc: &Scenario) -> String {
    serde_json::to_string_pretty(sc).expect("scenario serializes")
}

pub fn load_scenario(path: &Path) -> Result<Scenario, IoError> {
    parse_scenario(&read_file(path)?)
}

pub fn save_scenario(path: &Path, sc: &Scenario) -> Result<(), IoError> {
    write_file(path, &(scenario_to_json(sc) + "\n"))
}

/// The four CSV tables of a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceCsv {
    pub flows: String,
    pub ticks: String,
    pub commands: String,
    pub positions: String,
}

impl TraceCsv {
    const FILES: [&'static str; 4] = ["flows.csv", "ticks.csv", "commands.csv", "positions.csv"];

    pub fn write_dir(&self, dir: &Path) -> Result<(), IoError> {
        for (name, body) in Self::FILES.iter().zip(self.tables()) {
            write_file(&dir.join(name), body)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, IoError> {
        let mut t = Self::FILES.iter().map(|name| read_file(&dir.join(name)));
        Ok(TraceCsv {
            flows: t.next().unwrap()?,
            ticks: t.next().unwrap()?,
            commands: t.next().unwrap()?,
            positions: t.next().unwrap()?,
        })
    }

    fn tables(&self) -> [&String; 4] {
        [&self.flows, &self.ticks, &self.commands, &self.positions]
    }
}

fn opt_bool(b: Option<bool>) -> &'static str {
    match b {
        Some(true) => "true",
        Some(false) => "false",
        None => "",
    }
}

pub fn emit_csv(trace: &Trace) -> TraceCsv {
    let mut flows = format!("{FLOWS_HEADER}\n");
    let mut ticks = format!("{TICKS_HEADER}\n");
    let mut commands = format!("{COMMANDS_HEADER}\n");
    let mut positions = format!("{POSITIONS_HEADER}\n");
    for r in &trace.records {
        for f in &r.flows {
            let _ = writeln!(
                flows,
                "{},{},{},{},{}",
                r.tick,
                f.flow.0,
                fmt_sig(f.cost),
                f.active,
                fmt_sig(f.spacing_err)
            );
        }
        let _ = writeln!(
            ticks,
            "{},{},{},{},{}",
            r.tick,
            r.connected,
            r.icp_ran,
            opt_bool(r.core_connected),
            r.retention_violations
        );
        for c in &r.commands {
            let _ = writeln!(commands, "{},{},{}", r.tick, c.agent.0, c.target.0);
        }
        if let Some(ps) = &r.positions {
            for (i, x) in ps.iter().enumerate() {
                let _ = writeln!(
                    positions,
                    "{},{},{},{}",
                    r.tick,
                    AgentId::from_index(i).0,
                    fmt_sig(x.x),
                    fmt_sig(x.y)
                );
            }
        }
    }
    TraceCsv {
        flows,
        ticks,
        commands,
        positions,
    }
}

struct Table<'a> {
    name: &'static str,
    rows: Vec<(usize, Vec<&'a str>)>,
}

impl<'a> Table<'a> {
    fn new(name: &'static str, text: &'a str, header: &str) -> Result<Self, IoError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == header => {}
            _ => {
                return Err(IoError::Csv {
                    table: name,
                    line: 1,
                    msg: format!("expected header `{header}`"),
                })
            }
        }
        let width = header.split(',').count();
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != width {
                return Err(IoError::Csv {
                    table: name,
                    line: i + 1,
                    msg: format!("expected {width} fields, found {}", cells.len()),
                });
            }
            rows.push((i + 1, cells));
        }
        Ok(Table { name, rows })
    }

    fn field<T: std::str::FromStr>(&self, line: usize, cell: &str) -> Result<T, IoError> {
        cell.parse().map_err(|_| IoError::Csv {
            table: self.name,
            line,
            msg: format!("cannot parse `{cell}`"),
        })
    }
}

pub fn parse_csv(csv: &TraceCsv) -> Result<Trace, IoError> {
    let flows = Table::new("flows", &csv.flows, FLOWS_HEADER)?;
    let ticks = Table::new("ticks", &csv.ticks, TICKS_HEADER)?;
    let commands = Table::new("commands", &csv.commands, COMMANDS_HEADER)?;
    let positions = Table::new("positions", &csv.positions, POSITIONS_HEADER)?;

    let mut records: BTreeMap<u64, TickRecord> = BTreeMap::new();
    for (line, c) in &ticks.rows {
        let tick: u64 = ticks.field(*line, c[0])?;
        let core_connected = match c[3] {
            "" => None,
            s => Some(ticks.field(*line, s)?),
        };
        records.insert(
            tick,
            TickRecord {
                tick,
                flows: Vec::new(),
                connected: ticks.field(*line, c[1])?,
                icp_ran: ticks.field(*line, c[2])?,
                core_connected,
                commands: Vec::new(),
                retention_violations: ticks.field(*line, c[4])?,
                positions: None,
            },
        );
    }
    let missing = |table: &Table, line: usize, tick: u64| IoError::Csv {
        table: table.name,
        line,
        msg: format!("tick {tick} has no row in ticks.csv"),
    };
    let mut flow_ids = Vec::new();
    for (line, c) in &flows.rows {
        let tick: u64 = flows.field(*line, c[0])?;
        let flow = FlowId(flows.field(*line, c[1])?);
        let metrics = FlowMetrics {
            flow,
            cost: flows.field(*line, c[2])?,
            active: flows.field(*line, c[3])?,
            spacing_err: flows.field(*line, c[4])?,
        };
        if !flow_ids.contains(&flow) {
            flow_ids.push(flow);
        }
        let rec = records
            .get_mut(&tick)
            .ok_or_else(|| missing(&flows, *line, tick))?;
        rec.flows.push(metrics);
    }
    for (line, c) in &commands.rows {
        let tick: u64 = commands.field(*line, c[0])?;
        let cmd = IcpCommand {
            agent: AgentId(commands.field(*line, c[1])?),
            target: FlowId(commands.field(*line, c[2])?),
        };
        let rec = records
            .get_mut(&tick)
            .ok_or_else(|| missing(&commands, *line, tick))?;
        rec.commands.push(cmd);
    }
    for (line, c) in &positions.rows {
        let tick: u64 = positions.field(*line, c[0])?;
        let x = Vec2::new(positions.field(*line, c[2])?, positions.field(*line, c[3])?);
        let rec = records
            .get_mut(&tick)
            .ok_or_else(|| missing(&positions, *line, tick))?;
        rec.positions.get_or_insert_with(Vec::new).push(x);
    }
    Ok(Trace {
        flow_ids,
        records: records.into_values().collect(),
    })
}

pub fn trace_to_json(trace: &Trace) -> String {
    serde_json::to_string(trace).expect("trace serializes")
}

pub fn parse_trace_json(text: &str) -> Result<Trace, IoError> {
    Ok(serde_json::from_str(text)?)
}

pub fn to_pretty_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}
