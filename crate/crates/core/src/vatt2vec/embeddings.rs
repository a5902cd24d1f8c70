use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schema::AttributeSchema;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const EMBEDDINGS_HEADER: &str = "# vfmdet-embeddings v1";

/// One text vector per schema tag, in schema order. Read-only input.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingTable {
    pub names: Vec<String>,
    pub dim: usize,
    /// Row-major `[names.len(), dim]`.
    pub vectors: Vec<f64>,
    pub provider: String,
}

/// Where tag embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingProvider {
    /// Standard-normal rows, each seeded by SHA-256 of `(seed, tag)`.
    Seeded { seed: u64, dim: usize },
    File { path: PathBuf },
    /// POSTs `{"tags": [...]}` and expects `{"vectors": [[...], ...]}` in the
    /// same order. Successful responses are written to `cache`; when every
    /// attempt fails, a valid cache is used instead.
    Remote {
        url: String,
        timeout_ms: u64,
        retries: u32,
        cache: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    tags: &'a [String],
}

#[derive(Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f64>>,
}

fn seeded_row(seed: u64, tag: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

impl TextEmbeddingTable {
    pub fn rows(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Constant `[rows, dim]` tensor.
    pub fn tensor(&self) -> Tensor {
        Tensor::from_vec(self.vectors.clone(), &[self.rows(), self.dim]).expect("table shape")
    }

    /// Hash over names, dim and value bit patterns.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        for v in &self.vectors {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check(&self, schema: &AttributeSchema, origin: &Path) -> Result<()> {
        let expected = schema.flat_tags();
        let bad = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        if self.names.len() != expected.len() {
            return Err(bad(format!("expected {} embedding rows, found {}", expected.len(), self.names.len())));
        }
        if let Some((got, want)) = self.names.iter().zip(&expected).find(|(a, b)| a != b) {
            return Err(bad(format!("row `{got}` where `{want}` was expected")));
        }
        if let Some(i) = self.vectors.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("non-finite value in row `{}`", self.names[i / self.dim])));
        }
        Ok(())
    }

    /// Text form: version comment, `"<rows> <dim> <provider>"`, then one
    /// `name<TAB>v1 v2 ...` line per tag (shortest round-trip decimals).
    pub fn to_text(&self) -> String {
        let mut s = format!("{EMBEDDINGS_HEADER}\n{} {} {}\n", self.rows(), self.dim, self.provider);
        for (i, n) in self.names.iter().enumerate() {
            let vals: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&format!("{n}\t{}\n", vals.join(" ")));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(EMBEDDINGS_HEADER) {
            return Err(bad(format!("missing `{EMBEDDINGS_HEADER}` header")));
        }
        let head = lines.next().ok_or_else(|| bad("missing size line".into()))?;
        let mut parts = head.splitn(3, ' ');
        let rows: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad size line `{head}`")))?;
        let dim: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad size line `{head}`")))?;
        let provider = parts.next().unwrap_or("unknown").to_string();
        let mut names = Vec::new();
        let mut vectors = Vec::new();
        for line in lines {
            let (name, vals) = line.split_once('\t').ok_or_else(|| bad(format!("expected `name<TAB>values`, got `{line}`")))?;
            let row = vals
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad value `{v}` in row `{name}`"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != dim {
                return Err(bad(format!("row `{name}` has {} values, expected {dim}", row.len())));
            }
            names.push(name.to_string());
            vectors.extend(row);
        }
        if names.len() != rows {
            return Err(bad(format!("header declares {rows} rows, found {}", names.len())));
        }
        Ok(TextEmbeddingTable {
            names,
            dim,
            vectors,
            provider,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Reads a table and checks it against `schema`.
    pub fn load(path: &Path, schema: &AttributeSchema) -> Result<Self> {
        let t = Self::parse(&std::fs::read_to_string(path)?, path)?;
        t.check(schema, path)?;
        Ok(t)
    }
}

fn fetch_remote(url: &str, timeout_ms: u64, tags: &[String]) -> std::result::Result<Vec<Vec<f64>>, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .build()
        .into();
    let mut resp = agent.post(url).send_json(RemoteRequest { tags }).map_err(|e| e.to_string())?;
    let body: RemoteResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
    Ok(body.vectors)
}

/// Builds the tag table for `schema` from `provider`.
pub fn get_text_embeddings(schema: &AttributeSchema, provider: &EmbeddingProvider) -> Result<TextEmbeddingTable> {
    let names = schema.flat_tags();
    match provider {
        EmbeddingProvider::Seeded { seed, dim } => {
            if *dim == 0 {
                return Err(Error::Config("embedding dim must be positive".into()));
            }
            let vectors = names.iter().flat_map(|n| seeded_row(*seed, n, *dim)).collect();
            Ok(TextEmbeddingTable {
                names,
                dim: *dim,
                vectors,
                provider: format!("seeded:{seed}"),
            })
        }
        EmbeddingProvider::File { path } => TextEmbeddingTable::load(path, schema),
        EmbeddingProvider::Remote {
            url,
            timeout_ms,
            retries,
            cache,
        } => {
            let attempts = retries + 1;
            let mut last = String::new();
            for _ in 0..attempts {
                match fetch_remote(url, *timeout_ms, &names) {
                    Ok(rows) => {
                        let dim = rows.first().map_or(0, Vec::len);
                        if rows.len() != names.len() || dim == 0 || rows.iter().any(|r| r.len() != dim) {
                            last = format!("expected {} rows of equal positive width, got {}", names.len(), rows.len());
                            continue;
                        }
                        let table = TextEmbeddingTable {
                            names: names.clone(),
                            dim,
                            vectors: rows.concat(),
                            provider: format!("remote:{url}"),
                        };
                        table.check(schema, Path::new(url))?;
                        if let Some(c) = cache {
                            table.save(c)?;
                        }
                        return Ok(table);
                    }
                    Err(e) => last = e,
                }
            }
            if let Some(c) = cache.as_ref().filter(|c| c.exists()) {
                return TextEmbeddingTable::load(c, schema);
            }
            Err(Error::Provider {
                provider: format!("remote:{url}"),
                attempts,
                message: last,
            })
        }
    }
}
