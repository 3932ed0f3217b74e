//! CSV traces.
//!
//! Every file starts with `# key=value` comment lines recording the
//! effective configuration, then a fixed header row, then one row per
//! record. Lines end in LF and times are integer microseconds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::analytics::RunReport;
use crate::error::{Error, Result};
use crate::mux::{Bundle, FlushCause};
use crate::profile::Direction;
use crate::traffic::NativePacket;

pub const NATIVE_HEADER: &[&str] = &["t_us", "flow", "dir", "payload", "seq", "ack", "window", "ipid", "push"];
pub const BUNDLE_HEADER: &[&str] = &["send_t_us", "n_records", "wire_size", "cause"];
pub const DELAY_HEADER: &[&str] = &["t_arrival_us", "t_send_us", "flow"];
pub const SWEEP_HEADER: &[&str] = &[
    "players",
    "period_ms",
    "direction",
    "bws_measured",
    "bws_analytic",
    "native_pps",
    "mux_pps",
    "e_k",
    "mean_delay_ms",
    "max_delay_ms",
];

pub type Provenance = BTreeMap<String, String>;

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::io(path, std::io::Error::other("not a file path")))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn render(provenance: &Provenance, header: &[&str], rows: impl Iterator<Item = String>) -> String {
    let mut out = String::new();
    for (k, v) in provenance {
        writeln!(out, "# {k}={v}").unwrap();
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn render_native(provenance: &Provenance, packets: &[NativePacket]) -> String {
    render(
        provenance,
        NATIVE_HEADER,
        packets.iter().map(|p| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                p.arrival_us,
                p.flow_id,
                p.direction,
                p.payload_len,
                p.seq,
                p.ack,
                p.window,
                p.ipid,
                u8::from(p.push)
            )
        }),
    )
}

pub fn render_bundles(provenance: &Provenance, bundles: &[Bundle]) -> String {
    render(
        provenance,
        BUNDLE_HEADER,
        bundles
            .iter()
            .map(|b| format!("{},{},{},{}", b.send_us, b.len(), b.wire_size, b.cause.as_str())),
    )
}

pub fn render_delays(provenance: &Provenance, bundles: &[Bundle]) -> String {
    render(
        provenance,
        DELAY_HEADER,
        bundles.iter().flat_map(|b| {
            b.entries
                .iter()
                .map(move |e| format!("{},{},{}", e.arrival_us, b.send_us, e.flow_id))
        }),
    )
}

pub fn render_reports(provenance: &Provenance, reports: &[RunReport]) -> String {
    render(
        provenance,
        SWEEP_HEADER,
        reports.iter().map(|r| SweepRow::from(r).to_csv()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleRow {
    pub send_us: u64,
    pub n_records: usize,
    pub wire_size: u32,
    pub cause: FlushCause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayRow {
    pub arrival_us: u64,
    pub send_us: u64,
    pub flow_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub players: usize,
    pub period_ms: f64,
    pub direction: Direction,
    pub bws_measured: f64,
    pub bws_analytic: f64,
    pub native_pps: f64,
    pub mux_pps: f64,
    pub e_k: f64,
    pub mean_delay_ms: f64,
    pub max_delay_ms: f64,
}

impl From<&RunReport> for SweepRow {
    fn from(r: &RunReport) -> Self {
        SweepRow {
            players: r.n_players,
            period_ms: r.period_ms(),
            direction: r.direction,
            bws_measured: r.bws_measured,
            bws_analytic: r.bws_analytic,
            native_pps: r.native_pps,
            mux_pps: r.muxed_pps,
            e_k: r.e_k,
            mean_delay_ms: r.delay.mean_us / 1000.0,
            max_delay_ms: r.delay.max_us as f64 / 1000.0,
        }
    }
}

impl SweepRow {
    fn to_csv(self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.3},{:.3},{:.4},{:.3},{:.3}",
            self.players,
            self.period_ms,
            self.direction,
            self.bws_measured,
            self.bws_analytic,
            self.native_pps,
            self.mux_pps,
            self.e_k,
            self.mean_delay_ms,
            self.max_delay_ms
        )
    }
}

/// A parsed trace: provenance comments plus raw string records.
struct RawTrace {
    provenance: Provenance,
    records: Vec<csv::StringRecord>,
}

fn read_raw(path: &Path, header: &[&str]) -> Result<RawTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let schema = |reason: String| Error::Schema {
        path: path.to_path_buf(),
        reason,
    };
    let mut provenance = Provenance::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        if let Some((k, v)) = body.split_once('=') {
            provenance.insert(k.to_string(), v.to_string());
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(schema(format!(
            "header `{}` does not match `{}`",
            found.iter().collect::<Vec<_>>().join(","),
            header.join(",")
        )));
    }
    let records = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(RawTrace { provenance, records })
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::Schema {
        path: path.to_path_buf(),
        reason: format!(
            "line {}: bad `{name}` value {:?}",
            rec.position().map_or(0, |p| p.line()),
            rec.get(i)
        ),
    })
}

pub fn read_native(path: &Path) -> Result<(Provenance, Vec<NativePacket>)> {
    let raw = read_raw(path, NATIVE_HEADER)?;
    let packets = raw
        .records
        .iter()
        .map(|r| {
            let push: u8 = field(path, r, 8, "push")?;
            if push > 1 {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    reason: format!("push flag {push} is not 0 or 1"),
                });
            }
            let dir: String = field(path, r, 2, "dir")?;
            Ok(NativePacket {
                arrival_us: field(path, r, 0, "t_us")?,
                flow_id: field(path, r, 1, "flow")?,
                direction: dir.parse().map_err(|_| Error::Schema {
                    path: path.to_path_buf(),
                    reason: format!("bad direction {dir:?}"),
                })?,
                payload_len: field(path, r, 3, "payload")?,
                seq: field(path, r, 4, "seq")?,
                ack: field(path, r, 5, "ack")?,
                window: field(path, r, 6, "window")?,
                ipid: field(path, r, 7, "ipid")?,
                push: push == 1,
            })
        })
        .collect::<Result<_>>()?;
    Ok((raw.provenance, packets))
}

pub fn read_bundles(path: &Path) -> Result<(Provenance, Vec<BundleRow>)> {
    let raw = read_raw(path, BUNDLE_HEADER)?;
    let rows = raw
        .records
        .iter()
        .map(|r| {
            let cause: String = field(path, r, 3, "cause")?;
            Ok(BundleRow {
                send_us: field(path, r, 0, "send_t_us")?,
                n_records: field(path, r, 1, "n_records")?,
                wire_size: field(path, r, 2, "wire_size")?,
                cause: match cause.as_str() {
                    "period" => FlushCause::PeriodEnd,
                    "threshold" => FlushCause::ThresholdReached,
                    other => {
                        return Err(Error::Schema {
                            path: path.to_path_buf(),
                            reason: format!("unknown flush cause {other:?}"),
                        })
                    }
                },
            })
        })
        .collect::<Result<_>>()?;
    Ok((raw.provenance, rows))
}

pub fn read_delays(path: &Path) -> Result<(Provenance, Vec<DelayRow>)> {
    let raw = read_raw(path, DELAY_HEADER)?;
    let rows = raw
        .records
        .iter()
        .map(|r| {
            Ok(DelayRow {
                arrival_us: field(path, r, 0, "t_arrival_us")?,
                send_us: field(path, r, 1, "t_send_us")?,
                flow_id: field(path, r, 2, "flow")?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((raw.provenance, rows))
}

pub fn read_sweep(path: &Path) -> Result<(Provenance, Vec<SweepRow>)> {
    let raw = read_raw(path, SWEEP_HEADER)?;
    let rows = raw
        .records
        .iter()
        .map(|r| {
            let dir: String = field(path, r, 2, "direction")?;
            Ok(SweepRow {
                players: field(path, r, 0, "players")?,
                period_ms: field(path, r, 1, "period_ms")?,
                direction: dir.parse().map_err(|_| Error::Schema {
                    path: path.to_path_buf(),
                    reason: format!("bad direction {dir:?}"),
                })?,
                bws_measured: field(path, r, 3, "bws_measured")?,
                bws_analytic: field(path, r, 4, "bws_analytic")?,
                native_pps: field(path, r, 5, "native_pps")?,
                mux_pps: field(path, r, 6, "mux_pps")?,
                e_k: field(path, r, 7, "e_k")?,
                mean_delay_ms: field(path, r, 8, "mean_delay_ms")?,
                max_delay_ms: field(path, r, 9, "max_delay_ms")?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((raw.provenance, rows))
}
