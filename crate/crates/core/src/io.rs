//! JSON game files and leader-trace output.
//!
//! A game file carries `schema_version` and exactly one of `game` (dense
//! row-major matrices) or `scenario`:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "game": {
//!     "followers": [{"P": [[2,0],[0,2]], "Q": [[1,0],[0,1]], "r": [0,0], "S": [[1,0],[0,1]],
//!                    "A": [[1,1]], "b": [1], "G": [[-1,0],[0,-1]], "h": [0,0]}],
//!     "price_lo": [0,0], "price_hi": [5,5],
//!     "leader": {"tracking": {"target": [0.5, 0.5]}}
//!   }
//! }
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::game::{FollowerSpec, LeaderObjective, PricingGame};
use crate::leader::LeaderTrace;
use crate::scenario::{build_game_from_scenario, ChargingScenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowerRecord {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(rename = "G", default)]
    pub g: Vec<Vec<f64>>,
    #[serde(default)]
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum LeaderRecord {
    Tracking { target: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameRecord {
    pub followers: Vec<FollowerRecord>,
    pub price_lo: Vec<f64>,
    pub price_hi: Vec<f64>,
    pub leader: LeaderRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub game: Option<GameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ChargingScenario>,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { path: path.into(), message: message.into() }
}

fn matrix(rows: &[Vec<f64>], ncols: usize, path: &str) -> Result<DMatrix<f64>> {
    if let Some(k) = rows.iter().position(|r| r.len() != ncols) {
        return Err(schema(format!("{path}[{k}]"), format!("expected {ncols} entries, found {}", rows[k].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl FollowerRecord {
    fn to_spec(&self, path: &str, m_l: usize) -> Result<FollowerSpec> {
        let m_f = self.r.len();
        let at = |f: &str| format!("{path}.{f}");
        Ok(FollowerSpec {
            p: matrix(&self.p, m_f, &at("P"))?,
            q: matrix(&self.q, m_f, &at("Q"))?,
            r: DVector::from_column_slice(&self.r),
            s: matrix(&self.s, m_l, &at("S"))?,
            a: matrix(&self.a, m_f, &at("A"))?,
            b: DVector::from_column_slice(&self.b),
            g: matrix(&self.g, m_f, &at("G"))?,
            h: DVector::from_column_slice(&self.h),
        })
    }

    fn from_spec(f: &FollowerSpec) -> Self {
        FollowerRecord {
            p: rows_of(&f.p),
            q: rows_of(&f.q),
            r: f.r.iter().copied().collect(),
            s: rows_of(&f.s),
            a: rows_of(&f.a),
            b: f.b.iter().copied().collect(),
            g: rows_of(&f.g),
            h: f.h.iter().copied().collect(),
        }
    }
}

impl GameFile {
    pub fn from_game(game: &PricingGame) -> Self {
        let LeaderObjective::Tracking { target } = &game.leader;
        GameFile {
            schema_version: SCHEMA_VERSION,
            description: None,
            game: Some(GameRecord {
                followers: game.followers.iter().map(FollowerRecord::from_spec).collect(),
                price_lo: game.price_lo.iter().copied().collect(),
                price_hi: game.price_hi.iter().copied().collect(),
                leader: LeaderRecord::Tracking { target: target.iter().copied().collect() },
            }),
            scenario: None,
        }
    }

    pub fn from_scenario(scenario: ChargingScenario) -> Self {
        GameFile { schema_version: SCHEMA_VERSION, description: None, game: None, scenario: Some(scenario) }
    }

    /// Builds the game, mapping a scenario if that is what the file holds.
    pub fn to_game(&self) -> Result<PricingGame> {
        match (&self.game, &self.scenario) {
            (Some(g), None) => {
                let m_l = g.price_lo.len();
                let followers = g
                    .followers
                    .iter()
                    .enumerate()
                    .map(|(i, f)| f.to_spec(&format!("game.followers[{i}]"), m_l))
                    .collect::<Result<Vec<_>>>()?;
                let LeaderRecord::Tracking { target } = &g.leader;
                PricingGame::new(
                    followers,
                    DVector::from_column_slice(&g.price_lo),
                    DVector::from_column_slice(&g.price_hi),
                    LeaderObjective::Tracking { target: DVector::from_column_slice(target) },
                )
            }
            (None, Some(s)) => build_game_from_scenario(s),
            _ => Err(schema("", "exactly one of `game` and `scenario` must be present")),
        }
    }
}

fn check_finite(v: &Value, path: &mut Vec<String>) -> Result<()> {
    match v {
        Value::Number(n) if !n.as_f64().is_some_and(f64::is_finite) => {
            Err(schema(path.concat(), format!("non-finite number {n}")))
        }
        Value::Array(items) => items.iter().enumerate().try_for_each(|(k, x)| {
            path.push(format!("[{k}]"));
            let r = check_finite(x, path);
            path.pop();
            r
        }),
        Value::Object(map) => map.iter().try_for_each(|(k, x)| {
            path.push(if path.is_empty() { k.clone() } else { format!(".{k}") });
            let r = check_finite(x, path);
            path.pop();
            r
        }),
        _ => Ok(()),
    }
}

impl FromStr for GameFile {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| schema("", e.to_string()))?;
        check_finite(&value, &mut Vec::new())?;
        let file: GameFile = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            schema(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version),
            ));
        }
        if file.game.is_some() == file.scenario.is_some() {
            return Err(schema("", "exactly one of `game` and `scenario` must be present"));
        }
        Ok(file)
    }
}

pub fn parse_game_file(path: impl AsRef<Path>) -> Result<GameFile> {
    std::fs::read_to_string(path)?.parse()
}

/// Reads a file and builds its game.
pub fn load_game(path: impl AsRef<Path>) -> Result<PricingGame> {
    parse_game_file(path)?.to_game()
}

pub fn game_file_to_string(file: &GameFile) -> String {
    // every field is plain data; serialization cannot fail
    serde_json::to_string_pretty(file).expect("game file serializes") + "\n"
}

/// Numbers are written in shortest round-trip form, so reading the file back
/// reproduces every value bit for bit.
pub fn write_game_file(file: &GameFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, game_file_to_string(file))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Json,
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TraceFormat::Csv),
            "json" => Ok(TraceFormat::Json),
            other => Err(Error::Config(format!("unknown trace format `{other}`"))),
        }
    }
}

/// `t, pi_1..pi_mL, JL, grad_norm, armijo_l, step, nash_iters, wall_ms`.
pub fn trace_columns(price_dim: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=price_dim).map(|k| format!("pi_{k}")));
    cols.extend(["JL", "grad_norm", "armijo_l", "step", "nash_iters", "wall_ms"].map(String::from));
    cols
}

/// One JSON object per iteration, keys in column order.
pub fn trace_records(trace: &LeaderTrace) -> Vec<Map<String, Value>> {
    trace
        .rows
        .iter()
        .map(|row| {
            let mut m = Map::new();
            m.insert("t".into(), row.t.into());
            for (k, p) in row.price.iter().enumerate() {
                m.insert(format!("pi_{}", k + 1), (*p).into());
            }
            m.insert("JL".into(), row.value.into());
            m.insert("grad_norm".into(), row.grad_norm.into());
            m.insert("armijo_l".into(), row.armijo_l.into());
            m.insert("step".into(), row.step.into());
            m.insert("nash_iters".into(), row.nash_iters.into());
            m.insert("wall_ms".into(), row.wall_ms.into());
            m
        })
        .collect()
}

pub fn write_trace_to<W: Write>(trace: &LeaderTrace, out: W, format: TraceFormat) -> Result<()> {
    match format {
        TraceFormat::Csv => {
            let m_l = trace.rows.first().map_or(0, |r| r.price.len());
            let mut w = csv::Writer::from_writer(out);
            w.write_record(trace_columns(m_l)).map_err(csv_err)?;
            for row in &trace.rows {
                let mut rec = vec![row.t.to_string()];
                rec.extend(row.price.iter().map(|&p| fmt_f64(p)));
                rec.extend([
                    fmt_f64(row.value),
                    fmt_f64(row.grad_norm),
                    row.armijo_l.to_string(),
                    fmt_f64(row.step),
                    row.nash_iters.to_string(),
                    fmt_f64(row.wall_ms),
                ]);
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush()?;
        }
        TraceFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &trace_records(trace)).map_err(std::io::Error::from)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    ryu::Buffer::new().format(v).to_string()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_trace(trace: &LeaderTrace, path: impl AsRef<Path>, format: TraceFormat) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_trace_to(trace, file, format)
}
