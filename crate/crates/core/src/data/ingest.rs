//! Builds a [`GridStack`] from per-week CSV rasters.
//!
//! The manifest names each channel and a file pattern whose single `*`
//! stands for the week number, e.g. `t2m_*.csv` matching `t2m_0.csv`,
//! `t2m_007.csv`. Weeks run from 0 to the largest number found. A week
//! missing for a channel repeats that channel's previous week and is listed
//! in the QA report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::stack::{GridStack, StackHeader};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSource {
    pub name: String,
    pub pattern: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestManifest {
    /// Date of week 0.
    pub week0: NaiveDate,
    pub channels: Vec<ChannelSource>,
    /// Total weeks; defaults to one past the largest week found.
    #[serde(default)]
    pub weeks: Option<usize>,
}

impl IngestManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledWeek {
    pub channel: String,
    pub week: usize,
    /// Week whose values were repeated.
    pub source_week: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QaReport {
    pub weeks: usize,
    pub files_read: usize,
    pub forward_filled: Vec<FilledWeek>,
    /// Channels whose values were all equal and were set to 0.5.
    pub degenerate_channels: Vec<String>,
}

impl QaReport {
    pub fn forward_fill_count(&self) -> usize {
        self.forward_filled.len()
    }
}

/// Week number if `file` matches `pattern` (one `*` standing for digits).
fn match_week(pattern: &str, file: &str) -> Option<usize> {
    let (prefix, suffix) = pattern.split_once('*')?;
    let middle = file.strip_prefix(prefix)?.strip_suffix(suffix)?;
    if middle.is_empty() || !middle.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    middle.parse().ok()
}

fn read_grid(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let ingest = |message: String| Error::Ingest {
        file: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(e.to_string()))?;
    let mut width = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingest(e.to_string()))?;
        if width.is_some_and(|w| w != record.len()) {
            return Err(ingest(format!("row {r} has {} columns, expected {}", record.len(), width.unwrap_or(0))));
        }
        width = Some(record.len());
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| ingest(format!("row {r} column {c}: `{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(ingest(format!("row {r} column {c}: non-finite value")));
            }
            values.push(v);
        }
        rows += 1;
    }
    match width {
        Some(w) if w > 0 => Ok((rows, w, values)),
        _ => Err(ingest("empty grid".into())),
    }
}

/// Reads and normalises every channel listed in `manifest` from `dir`.
pub fn ingest_csv_rasters(dir: &Path, manifest: &IngestManifest) -> Result<(GridStack, QaReport)> {
    if manifest.channels.is_empty() {
        return Err(Error::Config("ingest manifest lists no channels".into()));
    }
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();

    let mut per_channel: Vec<BTreeMap<usize, PathBuf>> = Vec::new();
    for ch in &manifest.channels {
        if ch.pattern.matches('*').count() != 1 {
            return Err(Error::Config(format!(
                "pattern `{}` for channel `{}` must contain exactly one `*`",
                ch.pattern, ch.name
            )));
        }
        let mut files = BTreeMap::new();
        for name in &names {
            if let Some(week) = match_week(&ch.pattern, name) {
                if let Some(prev) = files.insert(week, dir.join(name)) {
                    return Err(Error::Ingest {
                        file: dir.join(name),
                        message: format!("week {week} also provided by {}", prev.display()),
                    });
                }
            }
        }
        per_channel.push(files);
    }
    let found = per_channel.iter().filter_map(|f| f.keys().next_back()).max().map(|w| w + 1);
    let weeks = manifest
        .weeks
        .or(found)
        .ok_or_else(|| Error::Config("no files match the manifest patterns".into()))?;

    let mut qa = QaReport {
        weeks,
        ..QaReport::default()
    };
    let mut dims: Option<(usize, usize, PathBuf)> = None;
    // raw[channel][week] = grid
    let mut raw: Vec<Vec<Vec<f64>>> = Vec::with_capacity(manifest.channels.len());
    for (ch, files) in manifest.channels.iter().zip(&per_channel) {
        let mut grids: Vec<Vec<f64>> = Vec::with_capacity(weeks);
        let mut last: Option<usize> = None;
        for week in 0..weeks {
            match files.get(&week) {
                Some(path) => {
                    let (h, w, values) = read_grid(path)?;
                    match &dims {
                        None => dims = Some((h, w, path.clone())),
                        Some((eh, ew, first)) if (*eh, *ew) != (h, w) => {
                            return Err(Error::Ingest {
                                file: path.clone(),
                                message: format!("grid is {h}×{w} but {} is {eh}×{ew}", first.display()),
                            })
                        }
                        _ => {}
                    }
                    qa.files_read += 1;
                    grids.push(values);
                    last = Some(week);
                }
                None => {
                    let source = last.ok_or_else(|| Error::Ingest {
                        file: dir.join(&ch.pattern),
                        message: format!("channel `{}` has no file for week {week} and nothing to fill from", ch.name),
                    })?;
                    grids.push(grids[source].clone());
                    qa.forward_filled.push(FilledWeek {
                        channel: ch.name.clone(),
                        week,
                        source_week: source,
                    });
                }
            }
        }
        raw.push(grids);
    }
    let (h, w, _) = dims.ok_or_else(|| Error::Config("no grids were read".into()))?;

    let c = manifest.channels.len();
    let mut channel_min = Vec::with_capacity(c);
    let mut channel_max = Vec::with_capacity(c);
    for (ch, grids) in manifest.channels.iter().zip(&raw) {
        let (lo, hi) = grids
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo == hi {
            qa.degenerate_channels.push(ch.name.clone());
        }
        channel_min.push(lo);
        channel_max.push(hi);
    }
    let mut data = Vec::with_capacity(weeks * c * h * w);
    for week in 0..weeks {
        for ch in 0..c {
            let (lo, hi) = (channel_min[ch], channel_max[ch]);
            data.extend(raw[ch][week].iter().map(|&v| normalise(v, lo, hi)));
        }
    }
    let header = StackHeader {
        height: h,
        width: w,
        channels: c,
        frame_count: weeks,
        week0: manifest.week0,
        first_week: 0,
        channel_names: manifest.channels.iter().map(|c| c.name.clone()).collect(),
        channel_min,
        channel_max,
    };
    Ok((GridStack::new(header, data)?, qa))
}

/// Min-max scaling into `[0,1]`; a constant channel maps to 0.5.
pub fn normalise(v: f64, lo: f64, hi: f64) -> f32 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0) as f32
    } else {
        0.5
    }
}

/// Inverse of [`normalise`] for a non-degenerate channel.
pub fn denormalise(v: f32, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + v as f64 * (hi - lo)
    } else {
        lo
    }
}

/// Binary fire stack from channel 0 thresholded at 0.5.
pub fn truth_from_fire_channel(obs: &GridStack) -> Result<GridStack> {
    let h = &obs.header;
    let plane = h.height * h.width;
    let mut data = Vec::with_capacity(h.frame_count * plane);
    for i in 0..h.frame_count {
        data.extend(obs.frame_data(i)[..plane].iter().map(|&v| if v >= 0.5 { 1.0f32 } else { 0.0 }));
    }
    let header = StackHeader {
        channels: 1,
        channel_names: vec!["fire_truth".into()],
        channel_min: vec![0.0],
        channel_max: vec![1.0],
        ..h.clone()
    };
    GridStack::new(header, data)
}
