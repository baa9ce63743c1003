//! Append-only store of reflective experiences, categorized by task unit and
//! retrieved by embedding similarity over the task-unit text (instruction +
//! rationale) — never over plan snapshots.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::refine::ReflectiveExperience;

pub const RECORDS_FILE: &str = "experiences.jsonl";
pub const VECTORS_FILE: &str = "experiences.vec";
const VEC_MAGIC: &[u8; 4] = b"BXV1";

#[derive(Debug, Error)]
pub enum ExperienceError {
    #[error("persistence error: {0}")]
    Persistence(String),
    #[error("corrupt record at line {0}: {1}")]
    CorruptRecord(usize, String),
}

pub trait EmbeddingProvider {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Deterministic per (provider, text); unit norm within 1e-6.
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Default embedder: hashed bag of tokens, dimension 256, unit-normalized.
/// Needs no model download; a sentence-transformer provider can be swapped in
/// through the trait.
pub struct HashedBagEmbedder;

impl EmbeddingProvider for HashedBagEmbedder {
    fn name(&self) -> &str {
        "hashed-bag-256"
    }

    fn dimension(&self) -> usize {
        256
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; 256];
        let mut any = false;
        for token in text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let digest = Sha256::digest(token.as_bytes());
            let idx = (u64::from_le_bytes(digest[..8].try_into().unwrap()) % 256) as usize;
            v[idx] += 1.0;
            any = true;
        }
        if !any {
            v[0] = 1.0;
            return v;
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        v
    }
}

/// JSONL records plus a binary vector sidecar. Records are the source of
/// truth: a missing or short sidecar is rebuilt on open.
pub struct ExperienceBase {
    dir: PathBuf,
    records: Vec<ReflectiveExperience>,
    vectors: Vec<Vec<f32>>,
    embedder: Box<dyn EmbeddingProvider>,
}

impl ExperienceBase {
    pub fn open(dir: &Path) -> Result<Self, ExperienceError> {
        Self::open_with(dir, Box::new(HashedBagEmbedder))
    }

    pub fn open_with(dir: &Path, embedder: Box<dyn EmbeddingProvider>) -> Result<Self, ExperienceError> {
        std::fs::create_dir_all(dir).map_err(|e| ExperienceError::Persistence(e.to_string()))?;
        let mut base = ExperienceBase {
            dir: dir.to_path_buf(),
            records: Vec::new(),
            vectors: Vec::new(),
            embedder,
        };
        base.load()?;
        Ok(base)
    }

    fn records_path(&self) -> PathBuf {
        self.dir.join(RECORDS_FILE)
    }

    fn vectors_path(&self) -> PathBuf {
        self.dir.join(VECTORS_FILE)
    }

    fn load(&mut self) -> Result<(), ExperienceError> {
        self.records.clear();
        self.vectors.clear();
        let path = self.records_path();
        if !path.exists() {
            return Ok(());
        }
        let text =
            std::fs::read_to_string(&path).map_err(|e| ExperienceError::Persistence(e.to_string()))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ReflectiveExperience = serde_json::from_str(line)
                .map_err(|e| ExperienceError::CorruptRecord(i + 1, e.to_string()))?;
            self.records.push(record);
        }
        if !self.load_vectors() {
            // Sidecar missing or out of sync with the records: rebuild.
            self.vectors = self.records.iter().map(|r| self.embed_record(r)).collect();
            self.write_vectors()?;
        }
        Ok(())
    }

    fn load_vectors(&mut self) -> bool {
        let Ok(mut file) = std::fs::File::open(self.vectors_path()) else {
            return self.records.is_empty();
        };
        let mut bytes = Vec::new();
        if file.read_to_end(&mut bytes).is_err() || bytes.len() < 8 || &bytes[..4] != VEC_MAGIC {
            return false;
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if dim != self.embedder.dimension() {
            return false;
        }
        let body = &bytes[8..];
        if body.len() != self.records.len() * dim * 4 {
            return false;
        }
        self.vectors = body
            .chunks_exact(dim * 4)
            .map(|chunk| {
                chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect()
            })
            .collect();
        true
    }

    fn write_vectors(&self) -> Result<(), ExperienceError> {
        let mut bytes = Vec::with_capacity(8 + self.vectors.len() * self.embedder.dimension() * 4);
        bytes.extend_from_slice(VEC_MAGIC);
        bytes.extend_from_slice(&(self.embedder.dimension() as u32).to_le_bytes());
        for v in &self.vectors {
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        std::fs::write(self.vectors_path(), bytes)
            .map_err(|e| ExperienceError::Persistence(e.to_string()))
    }

    fn embed_record(&self, record: &ReflectiveExperience) -> Vec<f32> {
        self.embedder.embed(&format!("{} {}", record.instruction, record.rationale))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ReflectiveExperience] {
        &self.records
    }

    /// Append atomically: records land on disk before return; the sidecar is
    /// extended afterwards (recovery rebuilds it if we die in between).
    pub fn append(&mut self, experiences: &[ReflectiveExperience]) -> Result<(), ExperienceError> {
        if experiences.is_empty() {
            return Ok(());
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.records_path())
            .map_err(|e| ExperienceError::Persistence(e.to_string()))?;
        for exp in experiences {
            let line =
                serde_json::to_string(exp).map_err(|e| ExperienceError::Persistence(e.to_string()))?;
            writeln!(file, "{}", line).map_err(|e| ExperienceError::Persistence(e.to_string()))?;
        }
        file.sync_all().map_err(|e| ExperienceError::Persistence(e.to_string()))?;
        for exp in experiences {
            self.vectors.push(self.embed_record(exp));
            self.records.push(exp.clone());
        }
        self.write_vectors()
    }

    /// Top-k by cosine similarity over the query instruction; ties broken by
    /// recency (newest first). Fewer than k records returns all.
    pub fn retrieve(&self, query_instruction: &str, k: usize) -> Vec<RetrievedExperience> {
        let q = self.embedder.embed(query_instruction);
        let mut scored: Vec<(f32, usize)> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (v.iter().zip(&q).map(|(a, b)| a * b).sum::<f32>(), i))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
        scored
            .into_iter()
            .take(k)
            .map(|(score, i)| RetrievedExperience { score, record: self.records[i].clone() })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RetrievedExperience {
    pub score: f32,
    pub record: ReflectiveExperience,
}

impl RetrievedExperience {
    /// One-line rendering injected into the planner prompt.
    pub fn render(&self) -> String {
        format!(
            "[task {} iter {} {:?}] {}",
            self.record.task_unit, self.record.iteration, self.record.stratum, self.record.rationale
        )
    }
}
