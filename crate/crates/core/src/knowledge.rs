//! Knowledge base of domain documents with cosine top-k retrieval.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default hash-embedder dimension.
pub const DEFAULT_DIM: usize = 256;
/// Default number of retrieved documents.
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text embeds to the zero vector")]
    ZeroEmbedding,
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine of a zero vector is undefined")]
    ZeroVector,
    #[error("embedding transport failed: {0}")]
    Transport(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no .txt or .md documents in {0}")]
    EmptyCorpus(String),
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("malformed index file: {0}")]
    BadIndex(String),
    #[error("unsupported embedder `{0}`")]
    UnknownEmbedder(String),
    #[error("k must be at least 1")]
    ZeroK,
}

pub type Result<T, E = KnowledgeError> = std::result::Result<T, E>;

/// Turns text into a fixed-dimension vector.
pub trait Embedder: Send + Sync {
    /// Identifies the configuration; stored in the index so queries are
    /// embedded the same way as documents.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Signed feature-hashing bag-of-words embedder.
///
/// Text is lowercased and split on non-alphanumeric characters. Each token
/// adds ±1 to one bucket, both chosen by hashing the token; the result is
/// L2-normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], basis: u64) -> u64 {
    bytes
        .iter()
        .fold(basis, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

impl HashEmbedder {
    pub const ID_PREFIX: &'static str = "hash-v1:dim=";

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder { dim }
    }

    /// Bucket and sign of one (already lowercased) token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let bucket = (fnv1a(token.as_bytes(), FNV_OFFSET) % self.dim as u64) as usize;
        // second hash: same function, different basis
        let sign = if fnv1a(token.as_bytes(), FNV_OFFSET ^ 0x9e37_79b9_7f4a_7c15) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        (bucket, sign)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_DIM)
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("{}{}", Self::ID_PREFIX, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(KnowledgeError::EmptyText);
        }
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let (bucket, sign) = self.slot(&token);
            v[bucket] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(KnowledgeError::ZeroEmbedding);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Embeddings from an HTTP endpoint speaking the common
/// `{"model", "input"} -> {"data": [{"embedding": [...]}]}` shape.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub const ID_PREFIX: &'static str = "remote:";

    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, dim: usize, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| KnowledgeError::Transport(e.to_string()))?;
        Ok(RemoteEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            dim,
            api_key,
            client,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("{}{}:dim={}", Self::ID_PREFIX, self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(KnowledgeError::EmptyText);
        }
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| KnowledgeError::Transport(e.to_string()))?;
        let body: EmbeddingResponse = resp.json().map_err(|e| KnowledgeError::Transport(e.to_string()))?;
        let v = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| KnowledgeError::Transport("response has no embedding".into()))?
            .embedding;
        if v.len() != self.dim {
            return Err(KnowledgeError::DimensionMismatch(v.len(), self.dim));
        }
        Ok(v)
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(KnowledgeError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(KnowledgeError::ZeroVector);
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub embedder_id: String,
    pub dim: usize,
    pub docs: Vec<Document>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_text: String,
    pub ranked: Vec<Hit>,
}

fn title_of(stem: &str, body: &str) -> String {
    body.lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .map(|t| t.trim().to_string())
        .unwrap_or_else(|| stem.to_string())
}

impl KnowledgeBase {
    /// Builds a knowledge base from in-memory `(id, body)` pairs.
    pub fn from_texts<I, S, T>(texts: I, embedder: &dyn Embedder) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut docs = Vec::new();
        let mut seen = HashSet::new();
        for (id, body) in texts {
            let (id, body) = (id.into(), body.into());
            if !seen.insert(id.clone()) {
                return Err(KnowledgeError::DuplicateId(id));
            }
            let embedding = embedder.embed(&body)?;
            docs.push(Document {
                title: title_of(&id, &body),
                id,
                body,
                embedding,
            });
        }
        if docs.is_empty() {
            return Err(KnowledgeError::EmptyCorpus("<memory>".into()));
        }
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(KnowledgeBase {
            embedder_id: embedder.id(),
            dim: embedder.dim(),
            docs,
        })
    }

    /// Indexes every `.txt` and `.md` file directly inside `dir`. The file
    /// stem is the document id.
    pub fn index_dir(dir: impl AsRef<Path>, embedder: &dyn Embedder) -> Result<Self> {
        let dir = dir.as_ref();
        let io = |source| KnowledgeError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut files = Vec::new();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            let ext = path.extension().and_then(|e| e.to_str());
            if path.is_file() && matches!(ext, Some("txt" | "md")) {
                files.push(path);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(KnowledgeError::EmptyCorpus(dir.display().to_string()));
        }
        let mut texts = Vec::with_capacity(files.len());
        for path in files {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let body = fs::read_to_string(&path).map_err(|source| KnowledgeError::Io {
                path: path.display().to_string(),
                source,
            })?;
            texts.push((stem, body));
        }
        KnowledgeBase::from_texts(texts, embedder)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.iter().find(|d| d.id == id)
    }

    /// Top-`k` documents by cosine similarity to `query`, ties broken by
    /// ascending id. Documents in `exclude` are skipped.
    pub fn retrieve(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<RetrievalResult> {
        if k == 0 {
            return Err(KnowledgeError::ZeroK);
        }
        let q = embedder.embed(query)?;
        let mut scored = Vec::with_capacity(self.docs.len());
        for doc in self.docs.iter().filter(|d| !exclude.contains(&d.id)) {
            scored.push(Hit {
                id: doc.id.clone(),
                score: cosine(&q, &doc.embedding)?,
            });
        }
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        scored.truncate(k);
        Ok(RetrievalResult {
            query_text: query.to_string(),
            ranked: scored,
        })
    }

    /// Serialized form; stable field order so re-indexing the same corpus
    /// with the same embedder is byte-identical.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("index serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let kb: KnowledgeBase = serde_json::from_str(&text).map_err(|e| KnowledgeError::BadIndex(e.to_string()))?;
        kb.check()?;
        Ok(kb)
    }

    fn check(&self) -> Result<()> {
        if self.docs.is_empty() {
            return Err(KnowledgeError::EmptyCorpus("index".into()));
        }
        let mut ids = HashMap::new();
        for d in &self.docs {
            if ids.insert(d.id.as_str(), ()).is_some() {
                return Err(KnowledgeError::DuplicateId(d.id.clone()));
            }
            if d.embedding.len() != self.dim {
                return Err(KnowledgeError::DimensionMismatch(d.embedding.len(), self.dim));
            }
            if d.embedding.iter().all(|&x| x == 0.0) {
                return Err(KnowledgeError::BadIndex(format!("document `{}` has a zero embedding", d.id)));
            }
        }
        Ok(())
    }

    /// Recreates the hash embedder recorded in the index. Remote embedders
    /// need endpoint configuration and are built by the caller.
    pub fn hash_embedder(&self) -> Result<HashEmbedder> {
        let dim: usize = self
            .embedder_id
            .strip_prefix(HashEmbedder::ID_PREFIX)
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| KnowledgeError::UnknownEmbedder(self.embedder_id.clone()))?;
        Ok(HashEmbedder::new(dim))
    }
}
