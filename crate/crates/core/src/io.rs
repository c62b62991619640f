//! Serialized artifact formats.
//!
//! * Photon streams: binary `PHTS` (16-byte header + u64 LE timestamps)
//!   and plain one-timestamp-per-line CSV.
//! * Implant plans / defect maps: versioned JSON `{version, kind, spots[],
//!   defects[]}`.
//! * Correlation curves and ODMR sweeps: CSV with a `#`-prefixed metadata
//!   header line.
//! * Scan images: 16-bit binary PGM (P5, maxval 65535) and CSV grid.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::correlator::CorrelationCurve;
use crate::emitter::{Channel, PhotonStream};
use crate::error::{Error, Result};
use crate::implantation::{Defect, DefectMap, ImplantPlan, PlanKind, Spot};
use crate::odmr::SweepPoint;
use crate::scanner::{ScanImage, SpotStat};

pub const PHOTON_STREAM_MAGIC: &[u8; 4] = b"PHTS";
pub const PHOTON_STREAM_VERSION: u16 = 1;
pub const LAYOUT_VERSION: u32 = 1;

/// Writes the binary stream format: magic "PHTS", version u16 LE, channel
/// u8, one reserved byte, then the stream duration as u64 LE filling the
/// rest of the 16-byte header, followed by u64 LE timestamps.
pub fn write_photon_stream(stream: &PhotonStream, mut w: impl Write) -> Result<()> {
    stream.validate()?;
    let mut header = [0u8; 16];
    header[..4].copy_from_slice(PHOTON_STREAM_MAGIC);
    header[4..6].copy_from_slice(&PHOTON_STREAM_VERSION.to_le_bytes());
    header[6] = stream.channel.code();
    header[8..16].copy_from_slice(&stream.duration_ns.to_le_bytes());
    w.write_all(&header)?;
    for &t in &stream.timestamps {
        w.write_all(&t.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_photon_stream(mut r: impl Read) -> Result<PhotonStream> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != PHOTON_STREAM_MAGIC {
        return Err(Error::Format("bad photon stream magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != PHOTON_STREAM_VERSION {
        return Err(Error::Format(format!("unsupported stream version {version}")));
    }
    let channel = Channel::from_code(header[6])?;
    let duration_ns = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % 8 != 0 {
        return Err(Error::Format("truncated timestamp payload".into()));
    }
    let timestamps: Vec<u64> = body
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let stream = PhotonStream {
        timestamps,
        duration_ns,
        channel,
    };
    stream.validate()?;
    Ok(stream)
}

/// One timestamp per line, nanoseconds.
pub fn write_photon_stream_csv(stream: &PhotonStream, mut w: impl Write) -> Result<()> {
    for &t in &stream.timestamps {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpotRecord {
    spot_id: u32,
    center_xy: [f64; 2],
    dose: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DefectRecord {
    spot_id: u32,
    position_xyz: [f64; 3],
}

/// Versioned JSON document carrying a plan and (optionally) the defects
/// realized from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutDocument {
    version: u32,
    kind: PlanKind,
    spots: Vec<SpotRecord>,
    defects: Vec<DefectRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plan_ref: Option<u64>,
}

impl LayoutDocument {
    pub fn from_plan(plan: &ImplantPlan) -> Self {
        LayoutDocument {
            version: LAYOUT_VERSION,
            kind: plan.kind,
            spots: plan
                .spots
                .iter()
                .map(|s| SpotRecord {
                    spot_id: s.spot_id,
                    center_xy: [s.center_xy.0, s.center_xy.1],
                    dose: s.dose,
                })
                .collect(),
            defects: Vec::new(),
            plan_ref: None,
        }
    }

    pub fn from_plan_and_defects(plan: &ImplantPlan, map: &DefectMap) -> Self {
        let mut doc = LayoutDocument::from_plan(plan);
        doc.defects = map
            .defects
            .iter()
            .map(|d| DefectRecord {
                spot_id: d.spot_id,
                position_xyz: [d.position_xyz.0, d.position_xyz.1, d.position_xyz.2],
            })
            .collect();
        doc.plan_ref = Some(map.plan_ref);
        doc
    }

    pub fn plan(&self) -> Result<ImplantPlan> {
        if self.version != LAYOUT_VERSION {
            return Err(Error::Format(format!(
                "unsupported layout version {}",
                self.version
            )));
        }
        let plan = ImplantPlan {
            kind: self.kind,
            spots: self
                .spots
                .iter()
                .map(|r| Spot {
                    spot_id: r.spot_id,
                    center_xy: (r.center_xy[0], r.center_xy[1]),
                    dose: r.dose,
                })
                .collect(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn defect_map(&self) -> Result<Option<DefectMap>> {
        if self.defects.is_empty() && self.plan_ref.is_none() {
            return Ok(None);
        }
        let plan = self.plan()?;
        let map = DefectMap {
            plan_ref: self.plan_ref.unwrap_or_else(|| plan.fingerprint()),
            defects: self
                .defects
                .iter()
                .map(|r| Defect {
                    spot_id: r.spot_id,
                    position_xyz: (r.position_xyz[0], r.position_xyz[1], r.position_xyz[2]),
                })
                .collect(),
        };
        for d in &map.defects {
            if !plan.spots.iter().any(|s| s.spot_id == d.spot_id) {
                return Err(Error::Format(format!(
                    "defect references unknown spot {}",
                    d.spot_id
                )));
            }
        }
        Ok(Some(map))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Curve CSV: a metadata comment line, a column header, then
/// `tau_ns,value,std_error` rows.
pub fn write_curve_csv(curve: &CorrelationCurve, mut w: impl Write) -> Result<()> {
    curve.validate()?;
    writeln!(
        w,
        "# bin_width_ns={},normalized={},corrected={},counts_scale={}",
        curve.bin_width_ns, curve.normalized, curve.corrected, curve.counts_scale
    )?;
    writeln!(w, "tau_ns,value,std_error")?;
    for i in 0..curve.values.len() {
        writeln!(
            w,
            "{},{},{}",
            curve.tau_centers[i], curve.values[i], curve.std_errors[i]
        )?;
    }
    Ok(())
}

pub fn read_curve_csv(text: &str) -> Result<CorrelationCurve> {
    let mut lines = text.lines();
    let meta = lines
        .next()
        .ok_or_else(|| Error::Format("empty curve file".into()))?;
    let meta = meta
        .strip_prefix("# ")
        .ok_or_else(|| Error::Format("missing curve metadata line".into()))?;
    let mut bin_width_ns = None;
    let mut normalized = None;
    let mut corrected = None;
    let mut counts_scale = 0.0;
    for field in meta.split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad metadata field '{field}'")))?;
        match key {
            "bin_width_ns" => bin_width_ns = Some(parse_f64(value)?),
            "normalized" => normalized = Some(parse_bool(value)?),
            "corrected" => corrected = Some(parse_bool(value)?),
            "counts_scale" => counts_scale = parse_f64(value)?,
            _ => {}
        }
    }
    let header = lines.next();
    if header != Some("tau_ns,value,std_error") {
        return Err(Error::Format("missing curve column header".into()));
    }
    let mut tau_centers = Vec::new();
    let mut values = Vec::new();
    let mut std_errors = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let mut next = || {
            cols.next()
                .ok_or_else(|| Error::Format(format!("short row '{line}'")))
        };
        tau_centers.push(parse_f64(next()?)?);
        values.push(parse_f64(next()?)?);
        std_errors.push(parse_f64(next()?)?);
    }
    let curve = CorrelationCurve {
        tau_centers,
        values,
        std_errors,
        bin_width_ns: bin_width_ns.ok_or_else(|| Error::Format("missing bin_width_ns".into()))?,
        normalized: normalized.ok_or_else(|| Error::Format("missing normalized flag".into()))?,
        corrected: corrected.ok_or_else(|| Error::Format("missing corrected flag".into()))?,
        counts_scale,
    };
    curve.validate()?;
    Ok(curve)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("bad number '{s}'")))
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Format(format!("bad flag '{s}'"))),
    }
}

/// Sweep CSV: `freq_mhz,contrast,std_error`.
pub fn write_sweep_csv(sweep: &[SweepPoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "freq_mhz,contrast,std_error")?;
    for p in sweep {
        writeln!(w, "{},{},{}", p.freq_mhz, p.contrast, p.std_error)?;
    }
    Ok(())
}

pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some("freq_mhz,contrast,std_error") {
        return Err(Error::Format("missing sweep header".into()));
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!("bad sweep row '{line}'")));
        }
        out.push(SweepPoint {
            freq_mhz: parse_f64(cols[0])?,
            contrast: parse_f64(cols[1])?,
            std_error: parse_f64(cols[2])?,
        });
    }
    Ok(out)
}

/// 16-bit binary PGM (P5, maxval 65535, big-endian samples per the netpbm
/// convention). Counts above 65535 clamp to white.
pub fn write_image_pgm(image: &ScanImage, mut w: impl Write) -> Result<()> {
    write!(w, "P5\n{} {}\n65535\n", image.width, image.height)?;
    for &c in &image.pixels {
        let v = c.min(65535) as u16;
        w.write_all(&v.to_be_bytes())?;
    }
    Ok(())
}

/// CSV grid of raw counts, one image row per line.
pub fn write_image_csv(image: &ScanImage, mut w: impl Write) -> Result<()> {
    for iy in 0..image.height {
        let row: Vec<String> = (0..image.width)
            .map(|ix| image.at(ix, iy).to_string())
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Spot statistics CSV; `estimated_k` stays blank until classification.
pub fn write_spot_stats_csv(stats: &[SpotStat], mut w: impl Write) -> Result<()> {
    writeln!(w, "spot_id,centroid_x_nm,centroid_y_nm,integrated_kcps,estimated_k")?;
    for s in stats {
        let k = s.estimated_k.map_or(String::new(), |k| k.to_string());
        writeln!(
            w,
            "{},{},{},{},{}",
            s.spot_id, s.centroid_xy.0, s.centroid_xy.1, s.integrated_kcps, k
        )?;
    }
    Ok(())
}
