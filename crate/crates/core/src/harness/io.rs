//! CSV tables exchanged between subcommands.
//!
//! * detections: `fix,t,pci,delay_samples,subsample_offset,amplitude,score`
//! * trajectory: `fix,t,x_est,y_est,objective,n_towers,status,error_m`
//!   (`x_est`, `y_est`, `objective`, `error_m` empty when absent)
//! * snapped:    `fix,t,x_raw,y_raw,x_snap,y_snap,snap_status`
//! * alerts:     `t,fix,event`
//! * cdf:        `error_m,cdf`

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::detect::Detection;
use crate::geom::Point;
use crate::lte::Pci;
use crate::route::{FenceEvent, Fix, GeofenceAlert};

use super::pipeline::{snap_label, FixStatus};
use super::HarnessError;

fn verr(name: &str, line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Validation {
        context: format!("{name}:{line}"),
        msg: msg.into(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Table {
    name: String,
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn read<R: Read>(r: R, name: &str, expected: &[&str]) -> Result<Self, HarnessError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr.headers().map_err(|e| verr(name, 1, e.to_string()))?.iter().map(str::to_string).collect();
        if headers != expected {
            return Err(verr(name, 1, format!("expected header {}", expected.join(","))));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            rows.push((i + 2, rec.map_err(|e| verr(name, i + 2, e.to_string()))?));
        }
        Ok(Self {
            name: name.to_string(),
            headers,
            rows,
        })
    }

    fn str<'a>(&self, rec: &'a csv::StringRecord, j: usize) -> &'a str {
        rec.get(j).unwrap_or("")
    }

    fn num<T: std::str::FromStr>(&self, line: usize, rec: &csv::StringRecord, j: usize) -> Result<T, HarnessError> {
        let s = self.str(rec, j);
        s.parse().map_err(|_| verr(&self.name, line, format!("{}: '{s}' is not valid", self.headers[j])))
    }

    fn float(&self, line: usize, rec: &csv::StringRecord, j: usize) -> Result<f64, HarnessError> {
        let v: f64 = self.num(line, rec, j)?;
        if !v.is_finite() {
            return Err(verr(&self.name, line, format!("{}: not finite", self.headers[j])));
        }
        Ok(v)
    }

    fn opt_float(&self, line: usize, rec: &csv::StringRecord, j: usize) -> Result<Option<f64>, HarnessError> {
        if self.str(rec, j).is_empty() {
            Ok(None)
        } else {
            self.float(line, rec, j).map(Some)
        }
    }
}

pub const DETECTION_HEADER: [&str; 7] = ["fix", "t", "pci", "delay_samples", "subsample_offset", "amplitude", "score"];

/// One fix's detections with its timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FixDetections {
    pub fix: usize,
    pub t: f64,
    pub detections: Vec<Detection>,
}

pub fn write_detections<W: Write>(w: W, fixes: &[FixDetections]) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(DETECTION_HEADER)?;
    for f in fixes {
        for d in &f.detections {
            wr.write_record([
                f.fix.to_string(),
                f.t.to_string(),
                d.pci.to_string(),
                d.delay_samples.to_string(),
                d.subsample_offset.to_string(),
                d.amplitude.to_string(),
                d.score.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Groups rows by fix index (ascending); row order within a fix is kept.
pub fn read_detections<R: Read>(r: R, name: &str) -> Result<Vec<FixDetections>, HarnessError> {
    let t = Table::read(r, name, &DETECTION_HEADER)?;
    let mut by_fix: BTreeMap<usize, FixDetections> = BTreeMap::new();
    for (line, rec) in &t.rows {
        let fix: usize = t.num(*line, rec, 0)?;
        let time = t.float(*line, rec, 1)?;
        let pci_v: u16 = t.num(*line, rec, 2)?;
        let pci = Pci::new(pci_v).map_err(|e| verr(name, *line, e.to_string()))?;
        let d = Detection {
            pci,
            delay_samples: t.num(*line, rec, 3)?,
            subsample_offset: t.float(*line, rec, 4)?,
            amplitude: t.float(*line, rec, 5)?,
            score: t.float(*line, rec, 6)?,
        };
        let e = by_fix.entry(fix).or_insert_with(|| FixDetections {
            fix,
            t: time,
            detections: Vec::new(),
        });
        if e.t != time {
            return Err(verr(name, *line, format!("fix {fix} appears with two different times")));
        }
        e.detections.push(d);
    }
    Ok(by_fix.into_values().collect())
}

pub const TRAJECTORY_HEADER: [&str; 8] = ["fix", "t", "x_est", "y_est", "objective", "n_towers", "status", "error_m"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub fix: usize,
    pub t: f64,
    pub estimate: Option<Point>,
    pub objective: Option<f64>,
    pub n_towers: usize,
    pub status: FixStatus,
    pub error_m: Option<f64>,
}

fn status_str(s: FixStatus) -> &'static str {
    match s {
        FixStatus::Resolved => "resolved",
        FixStatus::Unresolvable => "unresolvable",
    }
}

pub fn write_trajectory<W: Write>(w: W, rows: &[TrajectoryRow]) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        wr.write_record([
            r.fix.to_string(),
            r.t.to_string(),
            opt(r.estimate.map(|p| p.x)),
            opt(r.estimate.map(|p| p.y)),
            opt(r.objective),
            r.n_towers.to_string(),
            status_str(r.status).to_string(),
            opt(r.error_m),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(r: R, name: &str) -> Result<Vec<TrajectoryRow>, HarnessError> {
    let t = Table::read(r, name, &TRAJECTORY_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in &t.rows {
        let x = t.opt_float(*line, rec, 2)?;
        let y = t.opt_float(*line, rec, 3)?;
        let estimate = match (x, y) {
            (Some(x), Some(y)) => Some(Point::new(x, y)),
            (None, None) => None,
            _ => return Err(verr(name, *line, "x_est and y_est must both be present or both empty")),
        };
        let status = match t.str(rec, 6) {
            "resolved" => FixStatus::Resolved,
            "unresolvable" => FixStatus::Unresolvable,
            other => return Err(verr(name, *line, format!("status: '{other}' is not valid"))),
        };
        out.push(TrajectoryRow {
            fix: t.num(*line, rec, 0)?,
            t: t.float(*line, rec, 1)?,
            estimate,
            objective: t.opt_float(*line, rec, 4)?,
            n_towers: t.num(*line, rec, 5)?,
            status,
            error_m: t.opt_float(*line, rec, 7)?,
        });
    }
    Ok(out)
}

/// `fix_ids[i]` labels `fixes[i]`.
pub fn write_snapped<W: Write>(w: W, fix_ids: &[usize], fixes: &[Fix]) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["fix", "t", "x_raw", "y_raw", "x_snap", "y_snap", "snap_status"])?;
    for (id, f) in fix_ids.iter().zip(fixes) {
        wr.write_record([
            id.to_string(),
            f.t.to_string(),
            f.position.x.to_string(),
            f.position.y.to_string(),
            opt(f.snapped.map(|p| p.x)),
            opt(f.snapped.map(|p| p.y)),
            snap_label(f.status).to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_alerts<W: Write>(w: W, fix_ids: &[usize], alerts: &[GeofenceAlert]) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "fix", "event"])?;
    for a in alerts {
        let ev = match a.event {
            FenceEvent::Enter => "enter",
            FenceEvent::Exit => "exit",
        };
        wr.write_record([a.t.to_string(), fix_ids[a.fix_index].to_string(), ev.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// Empirical CDF of localization errors, one row per sorted sample.
pub fn write_cdf<W: Write>(w: W, errors: &[f64]) -> Result<(), HarnessError> {
    let mut e = errors.to_vec();
    e.sort_by(f64::total_cmp);
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["error_m", "cdf"])?;
    let n = e.len() as f64;
    for (i, v) in e.iter().enumerate() {
        wr.write_record([v.to_string(), ((i + 1) as f64 / n).to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detections_round_trip() {
        let fixes = vec![
            FixDetections {
                fix: 0,
                t: 0.0,
                detections: vec![Detection {
                    pci: Pci::new(17).unwrap(),
                    delay_samples: 120,
                    score: 0.91,
                    amplitude: 3.5e-6,
                    subsample_offset: -0.23,
                }],
            },
            FixDetections {
                fix: 2,
                t: 2.0,
                detections: vec![],
            },
        ];
        let mut out = Vec::new();
        write_detections(&mut out, &fixes).unwrap();
        let back = read_detections(out.as_slice(), "d.csv").unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], fixes[0]);
    }

    #[test]
    fn trajectory_round_trip_with_gaps() {
        let rows = vec![
            TrajectoryRow {
                fix: 0,
                t: 0.5,
                estimate: Some(Point::new(1.25, -3.0)),
                objective: Some(1e-9),
                n_towers: 3,
                status: FixStatus::Resolved,
                error_m: Some(0.7),
            },
            TrajectoryRow {
                fix: 1,
                t: 1.5,
                estimate: None,
                objective: None,
                n_towers: 2,
                status: FixStatus::Unresolvable,
                error_m: None,
            },
        ];
        let mut out = Vec::new();
        write_trajectory(&mut out, &rows).unwrap();
        assert_eq!(read_trajectory(out.as_slice(), "t.csv").unwrap(), rows);
        let bad = "fix,t,x_est,y_est,objective,n_towers,status,error_m\n0,0,1,,0,3,resolved,\n";
        assert!(read_trajectory(bad.as_bytes(), "t.csv").is_err());
    }
}
