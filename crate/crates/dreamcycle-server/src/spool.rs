//! Write-ahead spool: every accepted log becomes one file, durable before
//! the upload is acknowledged. File names are zero-padded sequence numbers
//! so recovery after a restart replays uploads in arrival order.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpoolError {
    #[error("spool {action} failed at {path}: {message}")]
    Io {
        action: &'static str,
        path: PathBuf,
        message: String,
    },
}

fn io_err<'a>(
    action: &'static str,
    path: &'a Path,
) -> impl FnOnce(std::io::Error) -> SpoolError + 'a {
    move |e| SpoolError::Io {
        action,
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct SpoolEntry {
    pub seq: u64,
    pub path: PathBuf,
}

impl SpoolEntry {
    pub fn file_name(&self) -> String {
        format!("{:08}.explog", self.seq)
    }
}

#[derive(Debug)]
pub struct Spool {
    dir: PathBuf,
    next_seq: u64,
}

impl Spool {
    /// Opens (creating if needed) a spool directory and scans it so new
    /// appends continue the persisted sequence.
    pub fn open(dir: &Path) -> Result<Spool, SpoolError> {
        fs::create_dir_all(dir).map_err(io_err("create", dir))?;
        let mut next_seq = 1;
        for entry in list_entries(dir)? {
            next_seq = next_seq.max(entry.seq + 1);
        }
        Ok(Spool {
            dir: dir.to_path_buf(),
            next_seq,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Durably stores one log: temp file, fsync, rename, fsync the
    /// directory. Only after this returns may the upload be acknowledged.
    pub fn append(&mut self, log_bytes: &[u8]) -> Result<SpoolEntry, SpoolError> {
        let seq = self.next_seq;
        let final_path = self.dir.join(format!("{:08}.explog", seq));
        let tmp_path = self.dir.join(format!("{:08}.explog.tmp", seq));
        {
            let mut f = File::create(&tmp_path).map_err(io_err("write", &tmp_path))?;
            f.write_all(log_bytes).map_err(io_err("write", &tmp_path))?;
            f.sync_all().map_err(io_err("sync", &tmp_path))?;
        }
        fs::rename(&tmp_path, &final_path).map_err(io_err("rename", &final_path))?;
        let d = OpenOptions::new()
            .read(true)
            .open(&self.dir)
            .map_err(io_err("open", &self.dir))?;
        d.sync_all().map_err(io_err("sync", &self.dir))?;
        self.next_seq = seq + 1;
        Ok(SpoolEntry {
            seq,
            path: final_path,
        })
    }

    /// Pending entries in arrival order.
    pub fn pending(&self) -> Result<Vec<SpoolEntry>, SpoolError> {
        list_entries(&self.dir)
    }

    /// Removes consumed entries; missing files are not an error.
    pub fn clear(&mut self, entries: &[SpoolEntry]) -> Result<(), SpoolError> {
        for e in entries {
            match fs::remove_file(&e.path) {
                Ok(()) => {}
                Err(err) if err.kind() == std::io::ErrorKind::NotFound => {}
                Err(err) => return Err(io_err("remove", &e.path)(err)),
            }
        }
        Ok(())
    }
}

fn list_entries(dir: &Path) -> Result<Vec<SpoolEntry>, SpoolError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err("read", dir))? {
        let entry = entry.map_err(io_err("read", dir))?;
        let path = entry.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        let stem = match name.strip_suffix(".explog") {
            Some(s) => s,
            None => continue,
        };
        if stem.len() != 8 || !stem.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let seq: u64 = stem.parse().expect("checked digits");
        out.push(SpoolEntry { seq, path });
    }
    out.sort_by_key(|e| e.seq);
    Ok(out)
}
