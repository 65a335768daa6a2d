//! Campaign directory layout:
//!
//! ```text
//! <output_dir>/
//!   config.json        resolved config
//!   report.json
//!   timing.json        wall-clock only
//!   provenance.jsonl   one line per generated input
//!   corpus/batch_<i>.tds
//!   trace.jsonl        optional
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FuzzError, Result};
use crate::io::tds::{self, Dataset};
use crate::mutation::CompleteAction;
use crate::tensor::Tensor;

/// How one generated input came to be. `id` and `parent` index the growing
/// test set: initial inputs first, then generated ones in commit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub id: usize,
    pub batch: usize,
    pub parent: usize,
    /// Index of the original test input this one descends from.
    pub root_seed: usize,
    pub label: Option<u8>,
    pub actions: Vec<CompleteAction>,
}

pub fn batch_path(dir: &Path, batch: usize) -> PathBuf {
    dir.join("corpus").join(format!("batch_{batch}.tds"))
}

pub struct CorpusWriter {
    dir: PathBuf,
    provenance: BufWriter<File>,
    trace: Option<BufWriter<File>>,
}

impl CorpusWriter {
    /// Creates the directory layout, truncating any previous provenance.
    pub fn create(dir: &Path, trace: bool) -> Result<Self> {
        let corpus = dir.join("corpus");
        std::fs::create_dir_all(&corpus).map_err(|e| FuzzError::io(&corpus, e))?;
        for entry in std::fs::read_dir(&corpus).map_err(|e| FuzzError::io(&corpus, e))? {
            let p = entry.map_err(|e| FuzzError::io(&corpus, e))?.path();
            if p.extension().is_some_and(|x| x == "tds") {
                std::fs::remove_file(&p).map_err(|e| FuzzError::io(&p, e))?;
            }
        }
        let open = |name: &str| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(&p)
                .map_err(|e| FuzzError::io(&p, e))?;
            Ok(BufWriter::new(f))
        };
        let trace = if trace {
            Some(open("trace.jsonl")?)
        } else {
            let _ = std::fs::remove_file(dir.join("trace.jsonl"));
            None
        };
        Ok(CorpusWriter {
            dir: dir.to_path_buf(),
            provenance: open("provenance.jsonl")?,
            trace,
        })
    }

    pub fn write_batch(&mut self, batch: usize, images: &[Tensor], entries: &[ProvenanceEntry]) -> Result<()> {
        let shape = images.first().map(|t| t.shape().to_vec()).unwrap_or_default();
        let labels = entries.iter().map(|e| e.label).collect::<Option<Vec<u8>>>();
        let ds = Dataset::new(shape, images.to_vec(), labels)?;
        tds::save_dataset(&ds, batch_path(&self.dir, batch))?;
        for e in entries {
            serde_json::to_writer(&mut self.provenance, e)?;
            self.provenance
                .write_all(b"\n")
                .map_err(|err| FuzzError::io(&self.dir, err))?;
        }
        self.provenance.flush().map_err(|e| FuzzError::io(&self.dir, e))
    }

    pub fn write_trace<T: Serialize>(&mut self, records: &[T]) -> Result<()> {
        if let Some(w) = &mut self.trace {
            for r in records {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n").map_err(|e| FuzzError::io(&self.dir, e))?;
            }
            w.flush().map_err(|e| FuzzError::io(&self.dir, e))?;
        }
        Ok(())
    }
}

pub fn read_provenance(dir: &Path) -> Result<Vec<ProvenanceEntry>> {
    let p = dir.join("provenance.jsonl");
    let f = File::open(&p).map_err(|e| FuzzError::io(&p, e))?;
    BufReader::new(f)
        .lines()
        .map(|line| {
            let line = line.map_err(|e| FuzzError::io(&p, e))?;
            Ok(serde_json::from_str(&line)?)
        })
        .collect()
}

/// Generated inputs in id order, paired with their provenance.
pub fn load_corpus(dir: &Path) -> Result<Vec<(ProvenanceEntry, Tensor)>> {
    let entries = read_provenance(dir)?;
    let mut out = Vec::with_capacity(entries.len());
    let mut i = 0;
    while i < entries.len() {
        let batch = entries[i].batch;
        let ds = tds::load_dataset(batch_path(dir, batch))?;
        let members = entries[i..].iter().take_while(|e| e.batch == batch).count();
        if members != ds.len() {
            return Err(FuzzError::ShapeMismatch(format!(
                "batch {batch}: {members} provenance lines for {} images",
                ds.len()
            )));
        }
        for (e, img) in entries[i..i + members].iter().zip(ds.samples) {
            out.push((e.clone(), img));
        }
        i += members;
    }
    Ok(out)
}
