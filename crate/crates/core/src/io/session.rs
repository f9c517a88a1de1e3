//! Session directories on disk.
//!
//! A session directory holds `emg.csv` (header `t,ch1,…,ch6`, seconds and
//! normalized volts), `angles.csv` (header `t,fe,ps,ru`, seconds and degrees,
//! inactive DoF columns zero) and an optional `meta.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{Dof, Protocol, SemgRecording};
use crate::error::{Error, Result};
use crate::synth::CHANNELS;
use crate::tensor::Tensor;

use super::write_atomic;

pub const EMG_FILE: &str = "emg.csv";
pub const ANGLES_FILE: &str = "angles.csv";
pub const META_FILE: &str = "meta.json";
pub const DEFAULT_EMG_FS: f64 = 1024.0;
pub const DEFAULT_ANGLE_FS: f64 = 100.0;
/// Allowed relative gap between the timestamp-implied and declared rate.
pub const RATE_TOLERANCE: f64 = 0.01;

const ALL_DOFS: [Dof; 3] = [Dof::Fe, Dof::Ps, Dof::Ru];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emg_fs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_fs: Option<f64>,
}

fn load_err(path: &Path, line: Option<u64>, detail: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

/// A uniformly sampled table: first column time, then the named columns.
struct Table {
    start: f64,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path, columns: &[String], fs: f64) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => load_err(path, None, format!("{other:?}")),
        })?;
    let header = reader
        .headers()
        .map_err(|e| load_err(path, Some(1), e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let expected: Vec<&str> = std::iter::once("t")
        .chain(columns.iter().map(String::as_str))
        .collect();
    if let Some(missing) = expected.iter().find(|c| !names.contains(c)) {
        return Err(load_err(
            path,
            Some(1),
            format!("missing column `{missing}` (expected {})", expected.join(",")),
        ));
    }
    if let Some(extra) = names.iter().find(|c| !expected.contains(c)) {
        return Err(load_err(
            path,
            Some(1),
            format!("unexpected column `{extra}` (expected {})", expected.join(",")),
        ));
    }
    if names.len() != expected.len() {
        return Err(load_err(path, Some(1), "duplicate column"));
    }
    let order: Vec<usize> = expected
        .iter()
        .map(|c| names.iter().position(|n| n == c).unwrap())
        .collect();

    let mut times = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            load_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line());
        let mut values = Vec::with_capacity(order.len());
        for (&col, name) in order.iter().zip(&expected) {
            let cell = &record[col];
            let v: f64 = cell
                .parse()
                .map_err(|_| load_err(path, line, format!("`{name}` is not a number: `{cell}`")))?;
            if !v.is_finite() {
                return Err(load_err(path, line, format!("`{name}` is not finite: `{cell}`")));
            }
            values.push(v);
        }
        let t = values[0];
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(load_err(
                    path,
                    line,
                    format!("time {t} does not increase (previous {prev})"),
                ));
            }
        }
        times.push(t);
        rows.push(values[1..].to_vec());
    }
    if times.len() < 2 {
        return Err(load_err(path, None, "need at least two samples"));
    }
    let implied = (times.len() - 1) as f64 / (times[times.len() - 1] - times[0]);
    if ((implied - fs) / fs).abs() > RATE_TOLERANCE {
        return Err(load_err(
            path,
            None,
            format!("timestamps imply {implied:.3} Hz, declared rate is {fs} Hz"),
        ));
    }
    Ok(Table {
        start: times[0],
        rows,
    })
}

fn read_meta(dir: &Path) -> Result<SessionMeta> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Ok(SessionMeta::default());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| load_err(&path, Some(e.line() as u64), e.to_string()))
}

fn infer_protocol(path: &Path, active: [bool; 3]) -> Result<Protocol> {
    match active {
        [true, false, false] => Ok(Protocol::P1),
        [false, true, false] => Ok(Protocol::P2),
        [false, false, true] => Ok(Protocol::P3),
        [true, true, true] => Ok(Protocol::P4),
        _ => Err(load_err(
            path,
            None,
            format!(
                "cannot infer protocol from nonzero columns {:?}; add `protocol` to {META_FILE}",
                active
            ),
        )),
    }
}

/// Reads and validates one session directory.
pub fn load_session(dir: &Path) -> Result<SemgRecording> {
    let meta = read_meta(dir)?;
    let emg_fs = meta.emg_fs.unwrap_or(DEFAULT_EMG_FS);
    let angle_fs = meta.angle_fs.unwrap_or(DEFAULT_ANGLE_FS);
    for (name, fs) in [("emg_fs", emg_fs), ("angle_fs", angle_fs)] {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(load_err(&dir.join(META_FILE), None, format!("{name} must be positive")));
        }
    }

    let emg_path = dir.join(EMG_FILE);
    let channels: Vec<String> = (1..=CHANNELS).map(|c| format!("ch{c}")).collect();
    let emg = read_table(&emg_path, &channels, emg_fs)?;

    let angle_path = dir.join(ANGLES_FILE);
    let dof_names: Vec<String> = ALL_DOFS.iter().map(|d| d.name().to_string()).collect();
    let angles = read_table(&angle_path, &dof_names, angle_fs)?;

    let nonzero = |d: usize| angles.rows.iter().any(|r| r[d] != 0.0);
    let active = [nonzero(0), nonzero(1), nonzero(2)];
    let protocol = match meta.protocol {
        Some(p) => {
            if let Some(d) = ALL_DOFS
                .iter()
                .find(|d| active[d.index()] && !p.dofs().contains(d))
            {
                return Err(load_err(
                    &angle_path,
                    None,
                    format!("protocol {p} does not use `{}` but the column is nonzero", d.name()),
                ));
            }
            p
        }
        None => infer_protocol(&angle_path, active)?,
    };

    let emg_rows = emg.rows.len();
    let emg_tensor = Tensor::new([emg_rows, CHANNELS], emg.rows.into_iter().flatten().collect())?;
    let dofs = protocol.dofs();
    let angle_rows = angles.rows.len();
    let angle_tensor = Tensor::from_fn([angle_rows, dofs.len()], |i| {
        angles.rows[i / dofs.len()][dofs[i % dofs.len()].index()]
    });
    let session_id = meta.session_id.unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "session".into())
    });
    SemgRecording::new(
        emg_tensor,
        angle_tensor,
        emg_fs,
        angle_fs,
        emg.start,
        angles.start,
        protocol,
        session_id,
    )
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Data(format!("csv encoding: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv encoding: {e}")))
}

/// Writes a session directory that [`load_session`] reads back exactly.
pub fn save_session(dir: &Path, rec: &SemgRecording) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if rec.channels() != CHANNELS {
        return Err(Error::Dimension(format!(
            "session files hold {CHANNELS} channels, recording has {}",
            rec.channels()
        )));
    }
    let mut header = vec!["t".to_string()];
    header.extend((1..=CHANNELS).map(|c| format!("ch{c}")));
    let emg = csv_bytes(
        &header,
        (0..rec.emg_len()).map(|i| {
            let mut row = vec![rec.emg_time(i)];
            row.extend_from_slice(rec.emg().row(i));
            row
        }),
    )?;
    write_atomic(&dir.join(EMG_FILE), &emg)?;

    let mut header = vec!["t".to_string()];
    header.extend(ALL_DOFS.iter().map(|d| d.name().to_string()));
    let dofs = rec.protocol().dofs();
    let angles = csv_bytes(
        &header,
        (0..rec.angle_len()).map(|j| {
            let mut row = vec![rec.angle_time(j), 0.0, 0.0, 0.0];
            for (c, d) in dofs.iter().enumerate() {
                row[1 + d.index()] = rec.angles().row(j)[c];
            }
            row
        }),
    )?;
    write_atomic(&dir.join(ANGLES_FILE), &angles)?;

    let meta = SessionMeta {
        session_id: Some(rec.session_id().to_string()),
        protocol: Some(rec.protocol()),
        emg_fs: Some(rec.emg_fs()),
        angle_fs: Some(rec.angle_fs()),
    };
    write_atomic(&dir.join(META_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())
}

/// Session directories under `dir`: `dir` itself when it holds `emg.csv`,
/// otherwise its subdirectories that do, sorted by name.
pub fn find_sessions(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(load_err(dir, None, "not a directory"));
    }
    if dir.join(EMG_FILE).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.join(EMG_FILE).exists() {
            found.push(path);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(load_err(dir, None, format!("no session directory ({EMG_FILE}) found")));
    }
    Ok(found)
}

pub fn load_sessions(dir: &Path) -> Result<Vec<SemgRecording>> {
    find_sessions(dir)?.iter().map(|d| load_session(d)).collect()
}
