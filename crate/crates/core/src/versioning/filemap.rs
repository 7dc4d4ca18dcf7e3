//! Logical-to-physical file map for image files.
//!
//! The database only keeps survey-structured logical paths; the physical
//! location can change freely underneath. Logical paths derive from header
//! fields alone, so the whole map can be rebuilt by scanning file headers.
//!
//! Image files here are stubs: a block of `KEY = VALUE` header lines closed
//! by `END`, followed by an opaque payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::catalog::Checksum;
use crate::error::{Error, Result};

pub type Header = BTreeMap<String, String>;

const MAGIC: &str = "SIMPLE  = T";
const END: &str = "END";

/// Builds stub file bytes. Keys are upper-cased and padded like card images.
pub fn stub_bytes(header: &Header, payload: &[u8]) -> Vec<u8> {
    let mut out = String::from(MAGIC);
    out.push('\n');
    for (k, v) in header {
        out.push_str(&format!("{:<8}= {v}\n", k.to_ascii_uppercase()));
    }
    out.push_str(END);
    out.push('\n');
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(payload);
    bytes
}

/// Splits stub bytes into header and payload.
pub fn parse_stub(bytes: &[u8]) -> Result<(Header, &[u8])> {
    let mut header = Header::new();
    let mut pos = 0;
    let mut first = true;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse("unterminated stub header".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Parse("stub header is not text".into()))?;
        pos += nl + 1;
        if first {
            if line != MAGIC {
                return Err(Error::Parse("not an image stub".into()));
            }
            first = false;
            continue;
        }
        if line == END {
            return Ok((header, &bytes[pos..]));
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header card {line:?}")))?;
        header.insert(k.trim().to_string(), v.trim().to_string());
    }
}

/// `raw/<NIGHT>/<VISIT>/<CCD>.img` from the header.
pub fn logical_path_from_header(header: &Header) -> Result<String> {
    let field = |k: &str| -> Result<u64> {
        let v = header
            .get(k)
            .ok_or_else(|| Error::MissingHeaderField(k.into()))?;
        v.parse()
            .map_err(|_| Error::Parse(format!("header {k} is not an integer: {v:?}")))
    };
    Ok(format!(
        "raw/{}/{}/{}.img",
        field("NIGHT")?,
        field("VISIT")?,
        field("CCD")?
    ))
}

pub fn raw_header(night: u64, visit: u64, ccd: u16) -> Header {
    Header::from([
        ("NIGHT".to_string(), night.to_string()),
        ("VISIT".to_string(), visit.to_string()),
        ("CCD".to_string(), ccd.to_string()),
    ])
}

/// Writes a stub file, creating parent directories.
pub fn write_stub(path: &Path, header: &Header, payload: &[u8]) -> Result<Checksum> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let bytes = stub_bytes(header, payload);
    fs::write(path, &bytes)?;
    Ok(Checksum::of(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMapEntry {
    pub logical_path: String,
    pub physical_path: PathBuf,
    pub header: Header,
    pub checksum: Checksum,
    pub immutable: bool,
}

#[derive(Debug, Default)]
pub struct FileMap {
    entries: RwLock<BTreeMap<String, FileMapEntry>>,
}

impl FileMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the file at `physical_path`, whose logical path derives from
    /// `header`. The checksum is taken from the file as it is now.
    pub fn register_file(&self, header: &Header, physical_path: &Path) -> Result<FileMapEntry> {
        let logical_path = logical_path_from_header(header)?;
        let bytes = fs::read(physical_path)?;
        let mut entries = self.entries.write();
        if entries.contains_key(&logical_path) {
            return Err(Error::DuplicateLogicalPath(logical_path));
        }
        let entry = FileMapEntry {
            logical_path: logical_path.clone(),
            physical_path: physical_path.to_path_buf(),
            header: header.clone(),
            checksum: Checksum::of(&bytes),
            immutable: true,
        };
        entries.insert(logical_path, entry.clone());
        Ok(entry)
    }

    pub fn resolve(&self, logical_path: &str) -> Result<PathBuf> {
        self.get(logical_path).map(|e| e.physical_path)
    }

    pub fn get(&self, logical_path: &str) -> Result<FileMapEntry> {
        self.entries
            .read()
            .get(logical_path)
            .cloned()
            .ok_or_else(|| Error::UnknownLogicalPath(logical_path.into()))
    }

    /// Points `logical_path` at `new_physical` after checking that the file
    /// there is byte-identical to the registered one.
    pub fn relocate(&self, logical_path: &str, new_physical: &Path) -> Result<FileMapEntry> {
        let mut entries = self.entries.write();
        let entry = entries
            .get_mut(logical_path)
            .ok_or_else(|| Error::UnknownLogicalPath(logical_path.into()))?;
        let found = Checksum::of(&fs::read(new_physical)?);
        if found != entry.checksum {
            return Err(Error::ChecksumMismatch {
                subject: logical_path.into(),
                expected: entry.checksum.to_string(),
                found: found.to_string(),
            });
        }
        entry.physical_path = new_physical.to_path_buf();
        Ok(entry.clone())
    }

    /// Moves the file on disk, then relocates it in the map.
    pub fn move_file(&self, logical_path: &str, new_physical: &Path) -> Result<FileMapEntry> {
        let old = self.resolve(logical_path)?;
        if let Some(dir) = new_physical.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::rename(&old, new_physical)?;
        self.relocate(logical_path, new_physical)
    }

    /// Reads the registered bytes back, checking the checksum.
    pub fn read(&self, logical_path: &str) -> Result<Vec<u8>> {
        let e = self.get(logical_path)?;
        let bytes = fs::read(&e.physical_path)
            .map_err(|_| Error::InputsMissing(format!("file {logical_path}")))?;
        let found = Checksum::of(&bytes);
        if found != e.checksum {
            return Err(Error::ChecksumMismatch {
                subject: logical_path.into(),
                expected: e.checksum.to_string(),
                found: found.to_string(),
            });
        }
        Ok(bytes)
    }

    pub fn entries(&self) -> Vec<FileMapEntry> {
        self.entries.read().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_entries(entries: Vec<FileMapEntry>) -> Self {
        FileMap {
            entries: RwLock::new(
                entries
                    .into_iter()
                    .map(|e| (e.logical_path.clone(), e))
                    .collect(),
            ),
        }
    }
}

/// Reconstructs a map by scanning every stub file under `root`. Files that
/// are not stubs are skipped.
pub fn rebuild_from_headers(root: &Path) -> Result<BTreeMap<String, FileMapEntry>> {
    let mut out = BTreeMap::new();
    for item in WalkDir::new(root).sort_by_file_name() {
        let item = item.map_err(|e| Error::Io(e.into()))?;
        if !item.file_type().is_file() {
            continue;
        }
        let path = item.into_path();
        let bytes = fs::read(&path)?;
        let Ok((header, _)) = parse_stub(&bytes) else {
            continue;
        };
        let logical_path = logical_path_from_header(&header)?;
        if out.contains_key(&logical_path) {
            return Err(Error::DuplicateLogicalPath(logical_path));
        }
        out.insert(
            logical_path.clone(),
            FileMapEntry {
                logical_path,
                physical_path: path,
                header,
                checksum: Checksum::of(&bytes),
                immutable: true,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_round_trip() {
        let h = raw_header(3, 41, 7);
        let bytes = stub_bytes(&h, b"\x00\x01payload");
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("SIMPLE  = T\nCCD     = 7\nNIGHT   = 3\nVISIT   = 41\nEND\n"));
        let (back, payload) = parse_stub(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(payload, b"\x00\x01payload");
        assert_eq!(logical_path_from_header(&back).unwrap(), "raw/3/41/7.img");
    }

    #[test]
    fn missing_field_reported() {
        let mut h = raw_header(1, 2, 3);
        h.remove("VISIT");
        assert!(matches!(
            logical_path_from_header(&h),
            Err(Error::MissingHeaderField(f)) if f == "VISIT"
        ));
    }

    #[test]
    fn register_resolve_relocate() {
        let dir = tempfile::tempdir().unwrap();
        let h = raw_header(0, 1, 2);
        let p = dir.path().join("a/img0");
        write_stub(&p, &h, b"abc").unwrap();
        let map = FileMap::new();
        let e = map.register_file(&h, &p).unwrap();
        assert_eq!(e.logical_path, "raw/0/1/2.img");
        assert_eq!(map.resolve("raw/0/1/2.img").unwrap(), p);
        assert!(matches!(
            map.register_file(&h, &p),
            Err(Error::DuplicateLogicalPath(_))
        ));

        let q = dir.path().join("b/elsewhere.img");
        let moved = map.move_file("raw/0/1/2.img", &q).unwrap();
        assert_eq!(moved.logical_path, e.logical_path);
        assert_eq!(moved.checksum, e.checksum);
        assert_eq!(map.resolve("raw/0/1/2.img").unwrap(), q);

        let bogus = dir.path().join("bogus.img");
        write_stub(&bogus, &h, b"different").unwrap();
        assert!(matches!(
            map.relocate("raw/0/1/2.img", &bogus),
            Err(Error::ChecksumMismatch { .. })
        ));
        assert!(matches!(map.resolve("raw/9/9/9.img"), Err(Error::UnknownLogicalPath(_))));
    }
}
