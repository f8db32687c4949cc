//! Campaign directories: config snapshot, append-only attempt log and exports.
//!
//! The attempt log is JSON lines. Each line is `{"v":<schema>,"record":{...}}`.
//! Schema 2 is the current [`AttemptRecord`]. Schema 1 lines predate die
//! coordinates, cycle durations and step traces; they load with the die point
//! taken from the stage position, a zero duration and an empty trace.

use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::campaign::{stats_by_plan, CampaignConfig, CampaignMode, ScanResult};
use crate::error::{Error, Result};
use crate::model::{
    AttemptOutcome, AttemptRecord, DiePoint, PayloadKind, StagePosition, SuccessStats,
    SupplyVoltages, TriggerPlan,
};
use crate::pulse::PulseConfig;
use crate::stats::success_rate;

pub const LOG_SCHEMA: u32 = 2;
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "attempts.jsonl";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Serialize)]
struct LineOut<'a> {
    v: u32,
    record: &'a AttemptRecord,
}

#[derive(Deserialize)]
struct LineIn {
    v: u32,
    record: serde_json::Value,
}

#[derive(Deserialize)]
struct RecordV1 {
    seq: u64,
    timestamp: DateTime<Utc>,
    position: StagePosition,
    pulse: PulseConfig,
    supply: SupplyVoltages,
    trigger: TriggerPlan,
    effective_delay: Option<u32>,
    payload: PayloadKind,
    outcome: AttemptOutcome,
    output: String,
}

impl From<RecordV1> for AttemptRecord {
    fn from(r: RecordV1) -> Self {
        AttemptRecord {
            seq: r.seq,
            timestamp: r.timestamp,
            duration_ns: 0,
            position: r.position,
            die_point: DiePoint::new(r.position.x, r.position.y),
            pulse: r.pulse,
            supply: r.supply,
            trigger: r.trigger,
            effective_delay: r.effective_delay,
            payload: r.payload,
            outcome: r.outcome,
            output: r.output,
            steps: Vec::new(),
        }
    }
}

/// One log line, without the trailing newline.
pub fn encode_line(record: &AttemptRecord) -> Result<String> {
    Ok(serde_json::to_string(&LineOut {
        v: LOG_SCHEMA,
        record,
    })?)
}

/// Parses one log line of any supported schema.
pub fn decode_line(line: &str) -> Result<AttemptRecord> {
    let raw: LineIn = serde_json::from_str(line)?;
    match raw.v {
        1 => Ok(serde_json::from_value::<RecordV1>(raw.record)?.into()),
        2 => Ok(serde_json::from_value(raw.record)?),
        v => Err(Error::validation(format!("unsupported log schema {v}"))),
    }
}

/// An incomplete final line left by a crash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TornLine {
    /// Byte offset where the torn line starts.
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedLog {
    pub records: Vec<AttemptRecord>,
    pub torn: Option<TornLine>,
}

/// Reads a log without modifying it. A bad final line is reported as torn;
/// a bad line anywhere else is an error.
pub fn read_log(path: &Path) -> Result<LoadedLog> {
    let mut text = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut text)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(LoadedLog::default()),
        Err(e) => return Err(e.into()),
    }
    let mut out = LoadedLog::default();
    let mut offset = 0usize;
    while offset < text.len() {
        let end = text[offset..].iter().position(|&b| b == b'\n');
        let line_end = end.map_or(text.len(), |e| offset + e);
        let line = &text[offset..line_end];
        let parsed = std::str::from_utf8(line)
            .map_err(|e| Error::Parse {
                offset,
                message: e.to_string(),
            })
            .and_then(|s| decode_line(s.trim_end_matches('\r')));
        let last = end.is_none() || line_end + 1 == text.len();
        match parsed {
            Ok(r) if end.is_some() => out.records.push(r),
            Err(e) if !last => {
                return Err(Error::Parse {
                    offset,
                    message: format!("log line: {e}"),
                })
            }
            _ => {
                out.torn = Some(TornLine {
                    offset: offset as u64,
                    bytes: (text.len() - offset) as u64,
                });
                break;
            }
        }
        offset = line_end + 1;
    }
    Ok(out)
}

/// Append-only attempt log. Every append is flushed before returning.
#[derive(Debug)]
pub struct AttemptLog {
    file: File,
    path: PathBuf,
    count: u64,
    last_seq: Option<u64>,
}

impl AttemptLog {
    /// Opens (or creates) a log for appending. A torn final line is cut off
    /// so new records start on a clean line; it is reported in the result.
    pub fn open(path: &Path) -> Result<(AttemptLog, LoadedLog)> {
        let loaded = read_log(path)?;
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        if let Some(torn) = &loaded.torn {
            tracing::warn!(path = %path.display(), offset = torn.offset, "truncating torn log line");
            file.set_len(torn.offset)?;
            file.seek(SeekFrom::End(0))?;
        }
        let log = AttemptLog {
            file,
            path: path.to_path_buf(),
            count: loaded.records.len() as u64,
            last_seq: loaded.records.last().map(|r| r.seq),
        };
        Ok((log, loaded))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn append(&mut self, record: &AttemptRecord) -> Result<()> {
        if let Some(last) = self.last_seq {
            if record.seq <= last {
                return Err(Error::validation(format!(
                    "sequence id {} does not follow {last}",
                    record.seq
                )));
            }
        }
        let mut line = encode_line(record)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.count += 1;
        self.last_seq = Some(record.seq);
        Ok(())
    }
}

impl crate::campaign::AttemptSink for AttemptLog {
    fn record(&mut self, record: &AttemptRecord) -> Result<()> {
        self.append(record)
    }
}

/// One directory per campaign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignDir {
    root: PathBuf,
}

impl CampaignDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CampaignDir { root: root.into() }
    }

    /// Creates the directory and writes the config snapshot. Reopening an
    /// existing directory requires the same config.
    pub fn create(root: impl Into<PathBuf>, cfg: &CampaignConfig) -> Result<Self> {
        let dir = Self::new(root);
        std::fs::create_dir_all(&dir.root)?;
        let path = dir.config_path();
        if path.exists() {
            let existing: CampaignConfig = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
            if existing != *cfg {
                return Err(Error::validation(format!(
                    "{} holds a different campaign",
                    dir.root.display()
                )));
            }
        } else {
            std::fs::write(&path, serde_json::to_string_pretty(cfg)?)?;
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(LOG_FILE)
    }

    pub fn config(&self) -> Result<CampaignConfig> {
        let path = self.config_path();
        let text = std::fs::read_to_string(&path)
            .map_err(|_| Error::NotFound(path.display().to_string()))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn open_log(&self) -> Result<(AttemptLog, LoadedLog)> {
        AttemptLog::open(&self.log_path())
    }

    /// Writes the heatmap and summary next to the log. The log is only read.
    pub fn write_exports(&self) -> Result<LoadedCampaign> {
        let loaded = load_campaign(&self.root)?;
        std::fs::write(self.root.join(HEATMAP_FILE), export_heatmap(&loaded.scan))?;
        std::fs::write(self.root.join(SUMMARY_FILE), export_summary(&loaded.by_plan))?;
        Ok(loaded)
    }
}

/// A campaign rebuilt from its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCampaign {
    pub config: Option<CampaignConfig>,
    pub records: Vec<AttemptRecord>,
    pub torn: Option<TornLine>,
    pub scan: ScanResult,
    pub by_plan: Vec<(TriggerPlan, SuccessStats)>,
}

/// Loads a campaign directory, or a bare log file.
pub fn load_campaign(path: &Path) -> Result<LoadedCampaign> {
    let (config, log) = if path.is_dir() {
        let dir = CampaignDir::new(path);
        (dir.config().ok(), read_log(&dir.log_path())?)
    } else {
        (None, read_log(path)?)
    };
    let exclude = config.as_ref().is_some_and(|c| c.exclude_errors);
    let mut scan = ScanResult::from_records(&log.records, exclude);
    if let Some(CampaignMode::Scan { grid, .. }) = config.as_ref().map(|c| &c.mode) {
        scan.grid = Some(*grid);
    }
    let by_plan = stats_by_plan(&log.records, exclude);
    Ok(LoadedCampaign {
        config,
        records: log.records,
        torn: log.torn,
        scan,
        by_plan,
    })
}

pub const HEATMAP_HEADER: &str = "x_mm,y_mm,attempts,faults,crashes,bypasses";

/// One row per position, in die coordinates.
pub fn export_heatmap(result: &ScanResult) -> String {
    let mut out = String::from(HEATMAP_HEADER);
    out.push('\n');
    for p in &result.positions {
        let h = &p.histogram;
        let _ = writeln!(
            out,
            "{:.3},{:.3},{},{},{},{}",
            p.die_point.x,
            p.die_point.y,
            h.total(),
            h.get(AttemptOutcome::PayloadFault),
            h.get(AttemptOutcome::Crash),
            h.get(AttemptOutcome::BypassSuccess),
        );
    }
    out
}

pub const SUMMARY_COLUMNS: [&str; 3] = ["Delay/ΔDelay", "Success/Attempts", "Success Rate"];

/// Success rate as a percentage with two decimals, e.g. `22.06%`.
pub fn format_rate(stats: SuccessStats) -> String {
    match success_rate(stats) {
        Ok(r) => format!("{:.2}%", r * 100.0),
        Err(_) => "n/a".into(),
    }
}

/// Summary table: a header line, then one right-aligned row per plan.
/// Rows are padded to the widest data cell in each column only.
pub fn export_summary(rows: &[(TriggerPlan, SuccessStats)]) -> String {
    let cells: Vec<[String; 3]> = rows
        .iter()
        .map(|(plan, stats)| [plan.to_string(), stats.to_string(), format_rate(*stats)])
        .collect();
    let mut widths = [0usize; 3];
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = SUMMARY_COLUMNS.join(" | ");
    out.push('\n');
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        out.push_str(&line.join(" | "));
        out.push('\n');
    }
    out
}

/// Cuts a log back to its first `n` lines, as if the campaign had stopped
/// after `n` attempts.
pub fn truncate_log(path: &Path, n: usize) -> Result<()> {
    let file = File::open(path)?;
    let mut keep = 0u64;
    for (i, line) in BufReader::new(file).split(b'\n').enumerate() {
        if i == n {
            break;
        }
        keep += line?.len() as u64 + 1;
    }
    OpenOptions::new().write(true).open(path)?.set_len(keep)?;
    Ok(())
}
