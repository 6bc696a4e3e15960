use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::merge::MergedCapture;
use super::record::{CaptureRecord, PayloadKind};
use super::DataplaneError;
use crate::geometry::{Intrinsics, Pose};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One line of a trigger directory's manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub device: u16,
    pub trigger_id: u32,
    pub capture_time_ns: i64,
    pub pose: [f64; 12],
    pub intrinsics: [f64; 6],
    pub payload_kind: PayloadKind,
    pub payload_file: String,
    pub payload_len: usize,
    pub payload_crc32: u32,
    pub completeness: f64,
}

/// One line of the store-level manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEntry {
    pub trigger_id: u32,
    pub directory: String,
    pub devices: Vec<u16>,
    pub expected: usize,
    pub completeness: f64,
}

pub fn trigger_dir_name(trigger_id: u32) -> String {
    format!("trigger_{trigger_id:06}")
}

fn payload_file_name(device: u16) -> String {
    format!("device_{device:02}.payload")
}

fn write_jsonl<T: Serialize>(w: &mut impl Write, value: &T) -> Result<(), DataplaneError> {
    serde_json::to_writer(&mut *w, value).map_err(io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataplaneError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(io::Error::from)?);
        }
    }
    Ok(out)
}

/// Directory-per-trigger store; the merge stage is its only writer.
#[derive(Debug)]
pub struct DirectoryStore {
    root: PathBuf,
    persisted: u64,
}

impl DirectoryStore {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, DataplaneError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, persisted: 0 })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn persisted(&self) -> u64 {
        self.persisted
    }

    /// Writes payloads and manifests; returns the paths written.
    pub fn persist(&mut self, merged: &MergedCapture) -> Result<Vec<PathBuf>, DataplaneError> {
        let dir_name = trigger_dir_name(merged.trigger_id);
        let dir = self.root.join(&dir_name);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                return Err(DataplaneError::DuplicateTrigger(merged.trigger_id))
            }
            Err(e) => return Err(e.into()),
        }
        let mut paths = Vec::with_capacity(merged.records.len() + 1);
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut manifest = BufWriter::new(File::create(&manifest_path)?);
        for (device, r) in &merged.records {
            let name = payload_file_name(*device);
            let path = dir.join(&name);
            fs::write(&path, &r.payload)?;
            paths.push(path);
            let k = &r.intrinsics;
            let entry = RecordEntry {
                device: *device,
                trigger_id: r.trigger_id,
                capture_time_ns: r.capture_time_ns,
                pose: r.pose.to_row_major(),
                intrinsics: [k.fx, k.fy, k.cx, k.cy, k.width, k.height],
                payload_kind: r.payload_kind,
                payload_file: name,
                payload_len: r.payload.len(),
                payload_crc32: r.payload_checksum,
                completeness: merged.completeness(),
            };
            write_jsonl(&mut manifest, &entry)?;
        }
        manifest.flush()?;
        paths.push(manifest_path);

        let mut index = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(MANIFEST_FILE))?;
        let entry = TriggerEntry {
            trigger_id: merged.trigger_id,
            directory: dir_name,
            devices: merged.records.keys().copied().collect(),
            expected: merged.expected,
            completeness: merged.completeness(),
        };
        let mut line = serde_json::to_vec(&entry).map_err(io::Error::from)?;
        line.push(b'\n');
        index.write_all(&line)?;
        self.persisted += 1;
        Ok(paths)
    }
}

/// The store-level manifest, in persistence order.
pub fn load_index(root: &Path) -> Result<Vec<TriggerEntry>, DataplaneError> {
    read_jsonl(&root.join(MANIFEST_FILE))
}

/// Reads every persisted trigger back, re-checking payload checksums.
pub fn load_store(root: &Path) -> Result<Vec<MergedCapture>, DataplaneError> {
    let mut out = Vec::new();
    for t in load_index(root)? {
        let dir = root.join(&t.directory);
        let mut records = BTreeMap::new();
        for e in read_jsonl::<RecordEntry>(&dir.join(MANIFEST_FILE))? {
            let payload = fs::read(dir.join(&e.payload_file))?;
            let actual = crc32fast::hash(&payload);
            if actual != e.payload_crc32 {
                return Err(DataplaneError::ChecksumMismatch {
                    stored: e.payload_crc32,
                    actual,
                });
            }
            let k = e.intrinsics;
            let record = CaptureRecord::new(
                e.device,
                e.trigger_id,
                e.capture_time_ns,
                Pose::from_row_major(&e.pose),
                Intrinsics {
                    fx: k[0],
                    fy: k[1],
                    cx: k[2],
                    cy: k[3],
                    width: k[4],
                    height: k[5],
                },
                e.payload_kind,
                payload,
            );
            records.insert(e.device, record);
        }
        out.push(MergedCapture {
            trigger_id: t.trigger_id,
            records,
            expected: t.expected,
        });
    }
    Ok(out)
}
