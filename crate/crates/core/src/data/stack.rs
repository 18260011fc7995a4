//! `GSTK1` container: magic, header length, JSON header, raw f32 payload.
//!
//! ```text
//! offset 0   b"GSTK1\0"
//! offset 6   u64 LE  header length in bytes (h)
//! offset 14  UTF-8 JSON header (h bytes)
//! offset 14+h payload: frames × channels × height × width f32 LE
//! ```

use std::fs;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{FireMap, ObservationFrame};

pub const MAGIC: &[u8; 6] = b"GSTK1\0";
const PREFIX: usize = MAGIC.len() + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frame_count: usize,
    /// Calendar date of the first frame.
    pub week0: NaiveDate,
    /// Global week index of the first frame.
    pub first_week: i64,
    pub channel_names: Vec<String>,
    /// Raw extremes used to normalise each channel into `[0,1]`.
    pub channel_min: Vec<f64>,
    pub channel_max: Vec<f64>,
}

impl StackHeader {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn payload_bytes(&self) -> u64 {
        4 * self.frame_count as u64 * self.frame_len() as u64
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err("grid dimensions and channel count must be positive".into());
        }
        let c = self.channels;
        if self.channel_names.len() != c || self.channel_min.len() != c || self.channel_max.len() != c {
            return Err(format!("header lists per-channel metadata of the wrong length for {c} channels"));
        }
        Ok(())
    }

    /// Date of global week `week`.
    pub fn date_of(&self, week: i64) -> Option<NaiveDate> {
        let offset = week - self.first_week;
        let days = offset.checked_mul(7)?;
        if days >= 0 {
            self.week0.checked_add_days(Days::new(days as u64))
        } else {
            self.week0.checked_sub_days(Days::new(days.unsigned_abs()))
        }
    }
}

/// Weekly normalised grids with their header.
#[derive(Clone, Debug, PartialEq)]
pub struct GridStack {
    pub header: StackHeader,
    data: Vec<f32>,
}

impl GridStack {
    pub fn new(header: StackHeader, data: Vec<f32>) -> Result<Self> {
        header.validate().map_err(Error::Config)?;
        if data.len() as u64 * 4 != header.payload_bytes() {
            return Err(Error::Dimension {
                op: "grid_stack",
                lhs: vec![header.frame_count, header.channels, header.height, header.width],
                rhs: vec![data.len()],
            });
        }
        Ok(Self { header, data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame_count(&self) -> usize {
        self.header.frame_count
    }

    pub fn frame_data(&self, i: usize) -> &[f32] {
        let n = self.header.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frame(&self, i: usize) -> ObservationFrame {
        let h = &self.header;
        ObservationFrame {
            channels: h.channels,
            height: h.height,
            width: h.width,
            week: h.first_week + i as i64,
            data: self.frame_data(i).to_vec(),
        }
    }

    pub fn frames(&self) -> Vec<ObservationFrame> {
        (0..self.frame_count()).map(|i| self.frame(i)).collect()
    }

    /// Channel 0 of each frame as a binary ground-truth map.
    pub fn fire_maps(&self) -> Result<Vec<FireMap>> {
        let h = &self.header;
        (0..self.frame_count())
            .map(|i| {
                let plane = &self.frame_data(i)[..h.height * h.width];
                FireMap::ground_truth(h.height, h.width, h.first_week + i as i64, plane.to_vec())
            })
            .collect()
    }

    /// Frames `start..end` as a new stack with shifted week metadata.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.frame_count() {
            return Err(Error::Config(format!(
                "frame range {start}..{end} outside 0..{}",
                self.frame_count()
            )));
        }
        let mut header = self.header.clone();
        header.first_week += start as i64;
        header.week0 = self
            .header
            .date_of(header.first_week)
            .ok_or_else(|| Error::Config("week date out of range".into()))?;
        header.frame_count = end - start;
        let n = header.frame_len();
        Ok(Self {
            data: self.data[start * n..end * n].to_vec(),
            header,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(PREFIX + header.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::format(0, "bad magic, expected GSTK1"));
        }
        if bytes.len() < PREFIX {
            return Err(Error::format(
                bytes.len() as u64,
                "file ends inside the header length field",
            ));
        }
        let hlen = u64::from_le_bytes(bytes[MAGIC.len()..PREFIX].try_into().expect("8 bytes"));
        let header_end = (PREFIX as u64).checked_add(hlen).filter(|&e| e <= bytes.len() as u64);
        let Some(header_end) = header_end else {
            return Err(Error::format(
                bytes.len() as u64,
                format!("header of {hlen} bytes runs past the end of the file"),
            ));
        };
        let header_end = header_end as usize;
        let header: StackHeader = serde_json::from_slice(&bytes[PREFIX..header_end])
            .map_err(|e| Error::format(PREFIX as u64, format!("invalid header: {e}")))?;
        header
            .validate()
            .map_err(|m| Error::format(PREFIX as u64, format!("invalid header: {m}")))?;
        let payload = &bytes[header_end..];
        let expected = header.payload_bytes();
        if payload.len() as u64 != expected {
            let at = header_end as u64 + (payload.len() as u64).min(expected);
            return Err(Error::format(
                at,
                format!(
                    "payload length mismatch: header implies {expected} bytes, found {}",
                    payload.len()
                ),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { header, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Stable digest of header and payload.
    pub fn fingerprint(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_bytes()?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
