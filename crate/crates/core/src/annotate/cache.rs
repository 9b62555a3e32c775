use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use super::{AnnotateError, Result, SyntaxAnnotation};

/// One cache line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub version: String,
    pub text: String,
    pub annotation: SyntaxAnnotation,
}

/// Line-delimited annotation cache keyed by sentence id and annotator version.
///
/// Writes append to the backing file; later lines for the same id win when
/// the file is reopened. Lines that fail to parse or validate are ignored.
#[derive(Debug)]
pub struct AnnotationCache {
    path: Option<PathBuf>,
    entries: DashMap<String, CacheEntry>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl AnnotationCache {
    pub fn in_memory() -> Self {
        AnnotationCache {
            path: None,
            entries: DashMap::new(),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let entries = DashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| io_err(&path, e))?;
            let mut corrupt = 0usize;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| io_err(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(&line) {
                    Ok(entry) if entry.annotation.validate(&entry.text).is_ok() => {
                        entries.insert(entry.id.clone(), entry);
                    }
                    _ => corrupt += 1,
                }
            }
            if corrupt > 0 {
                log::warn!("{}: ignored {corrupt} corrupt cache line(s)", path.display());
            }
        }
        Ok(AnnotationCache {
            path: Some(path),
            entries,
            writer: Mutex::new(None),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str, version: &str) -> Option<SyntaxAnnotation> {
        self.entries
            .get(id)
            .filter(|e| e.version == version)
            .map(|e| e.annotation.clone())
    }

    pub fn put(&self, id: &str, version: &str, text: &str, annotation: &SyntaxAnnotation) -> Result<()> {
        let entry = CacheEntry {
            id: id.to_string(),
            version: version.to_string(),
            text: text.to_string(),
            annotation: annotation.clone(),
        };
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&entry).expect("cache entries serialize");
            let mut guard = self.writer.lock().expect("cache writer poisoned");
            if guard.is_none() {
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| io_err(path, e))?;
                *guard = Some(BufWriter::new(file));
            }
            let writer = guard.as_mut().expect("writer opened above");
            writeln!(writer, "{line}").map_err(|e| io_err(path, e))?;
        }
        self.entries.insert(id.to_string(), entry);
        Ok(())
    }

    pub fn flush(&self) -> Result<()> {
        if let (Some(path), Some(w)) = (&self.path, self.writer.lock().expect("poisoned").as_mut()) {
            w.flush().map_err(|e| io_err(path, e))?;
        }
        Ok(())
    }

    /// Rewrites the backing file with one line per id, sorted by id.
    pub fn compact(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut guard = self.writer.lock().expect("cache writer poisoned");
        *guard = None;
        let mut entries: Vec<CacheEntry> = self.entries.iter().map(|e| e.value().clone()).collect();
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?);
            for entry in &entries {
                let line = serde_json::to_string(entry).expect("cache entries serialize");
                writeln!(w, "{line}").map_err(|e| io_err(&tmp, e))?;
            }
            w.flush().map_err(|e| io_err(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
        Ok(())
    }
}

impl Drop for AnnotationCache {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

fn io_err(path: &Path, source: std::io::Error) -> AnnotateError {
    AnnotateError::CacheIo {
        path: path.display().to_string(),
        source,
    }
}
