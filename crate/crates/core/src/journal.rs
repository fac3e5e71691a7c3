//! Append-only journal with snapshots, shared by both services.
//!
//! Each journal line is one canonical entry. A snapshot replaces the state
//! up to some sequence number; entries at or below it are skipped on
//! replay. A trailing line without its newline is a torn write from a
//! crash and is discarded.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// A snapshot, if one was written, and the journal lines after it.
pub type Loaded = (Option<Vec<u8>>, Vec<Vec<u8>>);

pub trait Journal: Send {
    /// Durably appends one line. Returns only after the bytes are on stable
    /// storage.
    fn append(&mut self, line: &[u8]) -> io::Result<()>;

    /// Latest snapshot, if any, and all complete journal lines.
    fn load(&mut self) -> io::Result<Loaded>;

    /// Atomically installs a snapshot and empties the journal.
    fn write_snapshot(&mut self, snapshot: &[u8]) -> io::Result<()>;
}

fn split_complete_lines(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut lines: Vec<Vec<u8>> = bytes.split(|&b| b == b'\n').map(<[u8]>::to_vec).collect();
    // The element after the final newline is either empty or a torn write.
    lines.pop();
    lines
}

pub struct FileJournal {
    dir: PathBuf,
    log: File,
    sync: bool,
}

impl FileJournal {
    pub const LOG: &'static str = "journal.log";
    pub const SNAPSHOT: &'static str = "snapshot.canon";

    pub fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(dir.join(Self::LOG))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            sync: true,
        })
    }

    /// Disables fsync. Only for throwaway data directories in tests.
    pub fn without_sync(mut self) -> Self {
        self.sync = false;
        self
    }

    fn sync_dir(&self) -> io::Result<()> {
        if self.sync {
            File::open(&self.dir)?.sync_all()?;
        }
        Ok(())
    }
}

impl Journal for FileJournal {
    fn append(&mut self, line: &[u8]) -> io::Result<()> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line);
        buf.push(b'\n');
        self.log.write_all(&buf)?;
        if self.sync {
            self.log.sync_data()?;
        }
        Ok(())
    }

    fn load(&mut self) -> io::Result<Loaded> {
        let snapshot = match fs::read(self.dir.join(Self::SNAPSHOT)) {
            Ok(b) => Some(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e),
        };
        let bytes = fs::read(self.dir.join(Self::LOG))?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        if complete < bytes.len() {
            // Drop the torn tail so later appends start on a fresh line.
            self.log.set_len(complete as u64)?;
        }
        Ok((snapshot, split_complete_lines(&bytes[..complete])))
    }

    fn write_snapshot(&mut self, snapshot: &[u8]) -> io::Result<()> {
        let tmp = self.dir.join(format!("{}.tmp", Self::SNAPSHOT));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(snapshot)?;
            if self.sync {
                f.sync_all()?;
            }
        }
        fs::rename(&tmp, self.dir.join(Self::SNAPSHOT))?;
        self.sync_dir()?;
        // Crashing here leaves old entries in the log; replay skips them by
        // sequence number.
        self.log.set_len(0)?;
        if self.sync {
            self.log.sync_all()?;
        }
        Ok(())
    }
}

/// Contents of an in-memory "disk". Survives the service that wrote it.
#[derive(Debug, Default, Clone)]
pub struct MemDisk {
    pub snapshot: Option<Vec<u8>>,
    pub log: Vec<u8>,
}

/// In-memory journal for simulation. Clones share one disk.
#[derive(Debug, Default, Clone)]
pub struct MemJournal(Arc<Mutex<MemDisk>>);

impl MemJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn disk(&self) -> MemDisk {
        self.0.lock().expect("mem journal lock").clone()
    }

    /// Simulates a torn write: appends bytes without a terminating newline.
    pub fn append_torn(&self, bytes: &[u8]) {
        self.0.lock().expect("mem journal lock").log.extend_from_slice(bytes);
    }
}

impl Journal for MemJournal {
    fn append(&mut self, line: &[u8]) -> io::Result<()> {
        let mut disk = self.0.lock().expect("mem journal lock");
        disk.log.extend_from_slice(line);
        disk.log.push(b'\n');
        Ok(())
    }

    fn load(&mut self) -> io::Result<Loaded> {
        let mut disk = self.0.lock().expect("mem journal lock");
        let complete = disk.log.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        disk.log.truncate(complete);
        Ok((disk.snapshot.clone(), split_complete_lines(&disk.log)))
    }

    fn write_snapshot(&mut self, snapshot: &[u8]) -> io::Result<()> {
        let mut disk = self.0.lock().expect("mem journal lock");
        disk.snapshot = Some(snapshot.to_vec());
        disk.log.clear();
        Ok(())
    }
}
