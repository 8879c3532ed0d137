//! Flat-file cell database.
//!
//! CSV with header `pci,x,y,carrier_hz,bandwidth_mhz,tx_power_dbm`, or
//! `pci,lat,lon,carrier_hz,bandwidth_mhz,tx_power_dbm` (projected about a
//! given origin, else about the first row).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::CellConfig;
use crate::geom::{latlon_to_local, Point};
use crate::lte::{Bandwidth, Pci};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub pci: Pci,
    pub position: Point,
    pub carrier_hz: f64,
    pub bandwidth: Bandwidth,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lookup<'a> {
    Found(&'a CellRecord),
    Missing,
    /// Several rows share the PCI and there is no previous fix to pick one.
    Ambiguous(usize),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellDatabase {
    rows: Vec<CellRecord>,
}

impl CellDatabase {
    pub fn new(rows: Vec<CellRecord>) -> Result<Self, HarnessError> {
        for (i, r) in rows.iter().enumerate() {
            if !r.position.is_finite() || !r.carrier_hz.is_finite() || !r.tx_power_dbm.is_finite() || r.carrier_hz <= 0.0 {
                return Err(HarnessError::Validation {
                    context: format!("cell database row {i}"),
                    msg: "values must be finite and the carrier positive".into(),
                });
            }
            if rows[..i].iter().any(|o| o.pci == r.pci && o.carrier_hz == r.carrier_hz) {
                return Err(HarnessError::Validation {
                    context: format!("cell database row {i}"),
                    msg: format!("duplicate (pci {}, carrier {} Hz)", r.pci, r.carrier_hz),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn from_cells(cells: &[CellConfig]) -> Result<Self, HarnessError> {
        Self::new(
            cells
                .iter()
                .map(|c| CellRecord {
                    pci: c.pci,
                    position: c.position,
                    carrier_hz: c.carrier_hz,
                    bandwidth: c.bandwidth,
                    tx_power_dbm: c.tx_power_dbm,
                })
                .collect(),
        )
    }

    pub fn rows(&self) -> &[CellRecord] {
        &self.rows
    }

    /// Resolves a PCI. With several rows, `carrier_hz` (when given) narrows the
    /// set first; the row nearest `previous` wins, and without a previous fix
    /// the lookup is ambiguous.
    pub fn lookup(&self, pci: Pci, carrier_hz: Option<f64>, previous: Option<Point>) -> Lookup<'_> {
        let mut hits: Vec<&CellRecord> = self.rows.iter().filter(|r| r.pci == pci).collect();
        if let Some(f) = carrier_hz {
            let same: Vec<&CellRecord> = hits.iter().copied().filter(|r| r.carrier_hz == f).collect();
            if !same.is_empty() {
                hits = same;
            }
        }
        match (hits.len(), previous) {
            (0, _) => Lookup::Missing,
            (1, _) => Lookup::Found(hits[0]),
            (n, None) => Lookup::Ambiguous(n),
            (_, Some(p)) => Lookup::Found(
                hits.into_iter()
                    .min_by(|a, b| a.position.distance(p).total_cmp(&b.position.distance(p)))
                    .unwrap(),
            ),
        }
    }

    pub fn read<R: Read>(reader: R, name: &str, origin: Option<(f64, f64)>) -> Result<Self, HarnessError> {
        let verr = |line: usize, msg: String| HarnessError::Validation {
            context: format!("{name}:{line}"),
            msg,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| verr(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let planar = ["pci", "x", "y", "carrier_hz", "bandwidth_mhz", "tx_power_dbm"];
        let geo = ["pci", "lat", "lon", "carrier_hz", "bandwidth_mhz", "tx_power_dbm"];
        let latlon = if headers == planar {
            false
        } else if headers == geo {
            true
        } else {
            return Err(verr(1, format!("expected header {} or {}", planar.join(","), geo.join(","))));
        };
        let mut origin = origin;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| verr(line, e.to_string()))?;
            let num = |j: usize| -> Result<f64, HarnessError> {
                let s = rec.get(j).unwrap_or("");
                let v: f64 = s.parse().map_err(|_| verr(line, format!("{}: '{s}' is not a number", headers[j])))?;
                if !v.is_finite() {
                    return Err(verr(line, format!("{}: not finite", headers[j])));
                }
                Ok(v)
            };
            let pci_s = rec.get(0).unwrap_or("");
            let pci = pci_s
                .parse::<u16>()
                .ok()
                .and_then(|v| Pci::new(v).ok())
                .ok_or_else(|| verr(line, format!("pci: '{pci_s}' is not in 0..=503")))?;
            let (a, b) = (num(1)?, num(2)?);
            let position = if latlon {
                let o = *origin.get_or_insert((a, b));
                latlon_to_local(a, b, o.0, o.1)
            } else {
                Point::new(a, b)
            };
            let bw = num(4)?;
            let bandwidth = Bandwidth::from_mhz(bw).map_err(|_| verr(line, format!("bandwidth_mhz: {bw} is not an LTE bandwidth")))?;
            rows.push(CellRecord {
                pci,
                position,
                carrier_hz: num(3)?,
                bandwidth,
                tx_power_dbm: num(5)?,
            });
        }
        Self::new(rows)
    }

    pub fn load(path: &Path, origin: Option<(f64, f64)>) -> Result<Self, HarnessError> {
        let f = std::fs::File::open(path).map_err(|e| HarnessError::Validation {
            context: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::read(f, &path.display().to_string(), origin)
    }

    /// Planar CSV form.
    pub fn write<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["pci", "x", "y", "carrier_hz", "bandwidth_mhz", "tx_power_dbm"])?;
        for r in &self.rows {
            wr.write_record([
                r.pci.to_string(),
                r.position.x.to_string(),
                r.position.y.to_string(),
                r.carrier_hz.to_string(),
                r.bandwidth.mhz().to_string(),
                r.tx_power_dbm.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
