use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::export::{export_transcription, export_wordlist, WordlistFilter};
use super::pagexml::export_pagexml;
use super::{exports_dir, write_atomic, STORE_VERSION};
use crate::error::{Error, Result};
use crate::harvest::Engine;
use crate::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportKind {
    Wordlist,
    Transcription,
    Pagexml,
}

impl ExportKind {
    pub fn extension(self) -> &'static str {
        match self {
            ExportKind::Wordlist => "tsv",
            ExportKind::Transcription => "txt",
            ExportKind::Pagexml => "xml",
        }
    }

    pub fn media_type(self) -> &'static str {
        match self {
            ExportKind::Wordlist => "text/tab-separated-values; charset=utf-8",
            ExportKind::Transcription => "text/plain; charset=utf-8",
            ExportKind::Pagexml => "application/xml",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub export_id: String,
    pub kind: ExportKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_id: Option<String>,
    pub filename: String,
    pub sha256: String,
    /// Last event visible to the export.
    pub watermark: u64,
    pub created_at: Timestamp,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

/// Time-limited access to one export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownloadToken {
    /// 128 random bits, hex.
    pub token: String,
    pub export_id: String,
    pub expires_at: Timestamp,
}

#[derive(Serialize, Deserialize)]
struct ExportIndex {
    version: u32,
    exports: Vec<ExportRecord>,
}

/// Export files and their download tokens.
#[derive(Clone, Debug, Default)]
pub struct Exports {
    dir: Option<PathBuf>,
    records: BTreeMap<String, ExportRecord>,
    tokens: BTreeMap<String, DownloadToken>,
}

impl Exports {
    /// In-memory exports, or the `exports/` directory of a collection.
    pub fn open(root: Option<&Path>) -> Result<Self> {
        let Some(root) = root else { return Ok(Self::default()) };
        let dir = exports_dir(root);
        fs::create_dir_all(&dir)?;
        let mut out = Self {
            dir: Some(dir.clone()),
            ..Self::default()
        };
        if let Ok(bytes) = fs::read(dir.join("index.json")) {
            let index: ExportIndex = serde_json::from_slice(&bytes)?;
            if index.version != STORE_VERSION {
                return Err(Error::Migration {
                    what: "export index".into(),
                    found: index.version,
                    supported: STORE_VERSION,
                });
            }
            for mut r in index.exports {
                r.bytes = fs::read(dir.join(&r.filename))?;
                out.records.insert(r.export_id.clone(), r);
            }
        }
        if let Ok(bytes) = fs::read(dir.join("tokens.json")) {
            let tokens: Vec<DownloadToken> = serde_json::from_slice(&bytes)?;
            out.tokens = tokens.into_iter().map(|t| (t.token.clone(), t)).collect();
        }
        Ok(out)
    }

    pub fn get(&self, export_id: &str) -> Option<&ExportRecord> {
        self.records.get(export_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ExportRecord> {
        self.records.values()
    }

    /// Renders an export from the engine's current state. Page exports need
    /// `page_id`.
    pub fn create(
        &mut self,
        e: &Engine,
        kind: ExportKind,
        page_id: Option<&str>,
        filter: &WordlistFilter,
        floor_offset: f64,
        now: Timestamp,
    ) -> Result<&ExportRecord> {
        let page = || page_id.ok_or_else(|| Error::domain(format!("{kind:?} export needs a page")));
        let bytes = match kind {
            ExportKind::Wordlist => export_wordlist(e, filter).into_bytes(),
            ExportKind::Transcription => export_transcription(e, page()?, floor_offset)?.to_text().into_bytes(),
            ExportKind::Pagexml => export_pagexml(e, page()?, floor_offset)?.into_bytes(),
        };
        let export_id = format!("export-{:06}", self.records.len() + 1);
        let record = ExportRecord {
            filename: format!("{export_id}.{}", kind.extension()),
            export_id: export_id.clone(),
            kind,
            page_id: page_id.filter(|_| kind != ExportKind::Wordlist).map(str::to_string),
            sha256: hex::encode(Sha256::digest(&bytes)),
            watermark: e.label_state().watermark,
            created_at: now,
            bytes,
        };
        if let Some(dir) = &self.dir {
            write_atomic(&dir.join(&record.filename), &record.bytes)?;
        }
        self.records.insert(export_id.clone(), record);
        self.save_index()?;
        Ok(&self.records[&export_id])
    }

    pub fn issue_download(&mut self, export_id: &str, ttl_ms: i64, now: Timestamp) -> Result<DownloadToken> {
        if ttl_ms <= 0 {
            return Err(Error::param("ttl must be positive"));
        }
        if !self.records.contains_key(export_id) {
            return Err(Error::NotFound {
                kind: "export",
                id: export_id.to_string(),
            });
        }
        let token = DownloadToken {
            token: format!("{:032x}", rand::random::<u128>()),
            export_id: export_id.to_string(),
            expires_at: now.saturating_add(ttl_ms),
        };
        self.tokens.insert(token.token.clone(), token.clone());
        self.save_tokens()?;
        Ok(token)
    }

    /// The export behind `token`, if `now` is before its expiry.
    pub fn redeem(&self, token: &str, now: Timestamp) -> Result<&ExportRecord> {
        let t = self.tokens.get(token).ok_or(Error::UnknownToken)?;
        if now >= t.expires_at {
            return Err(Error::TokenExpired);
        }
        self.records.get(&t.export_id).ok_or(Error::UnknownToken)
    }

    fn save_index(&self) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let index = ExportIndex {
            version: STORE_VERSION,
            exports: self.records.values().cloned().collect(),
        };
        write_atomic(&dir.join("index.json"), &serde_json::to_vec_pretty(&index)?)
    }

    fn save_tokens(&self) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let tokens: Vec<&DownloadToken> = self.tokens.values().collect();
        write_atomic(&dir.join("tokens.json"), &serde_json::to_vec_pretty(&tokens)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harvest::EngineConfig;

    fn with_export() -> (Engine, Exports, String) {
        let e = Engine::new(EngineConfig::synthetic());
        let mut x = Exports::default();
        let id = x
            .create(&e, ExportKind::Wordlist, None, &WordlistFilter::default(), 0.0, 0)
            .unwrap()
            .export_id
            .clone();
        (e, x, id)
    }

    #[test]
    fn token_is_valid_until_expiry() {
        let (_, mut x, id) = with_export();
        let t = x.issue_download(&id, 1000, 50).unwrap();
        assert_eq!(t.token.len(), 32);
        assert_eq!(x.redeem(&t.token, 50).unwrap().export_id, id);
        assert_eq!(x.redeem(&t.token, 1049).unwrap().bytes, b"label\tconfirmed_count\thypothesis_count\tzone_ids\n");
        assert!(matches!(x.redeem(&t.token, 1050), Err(Error::TokenExpired)));
        assert_eq!(x.redeem("feed", 0).unwrap_err().to_string(), "unknown token");
    }

    #[test]
    fn tokens_are_independent() {
        let (_, mut x, id) = with_export();
        let a = x.issue_download(&id, 10, 0).unwrap();
        let b = x.issue_download(&id, 100, 0).unwrap();
        assert_ne!(a.token, b.token);
        assert!(x.redeem(&a.token, 20).is_err());
        assert!(x.redeem(&b.token, 20).is_ok());
    }

    #[test]
    fn issue_checks_inputs() {
        let (_, mut x, id) = with_export();
        assert!(matches!(x.issue_download(&id, 0, 0), Err(Error::Parameter(_))));
        assert!(matches!(x.issue_download("export-999999", 5, 0), Err(Error::NotFound { .. })));
    }

    #[test]
    fn exports_persist_with_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let e = Engine::new(EngineConfig::synthetic());
        let mut x = Exports::open(Some(dir.path())).unwrap();
        let r = x.create(&e, ExportKind::Wordlist, None, &WordlistFilter::default(), 0.0, 5).unwrap().clone();
        let t = x.issue_download(&r.export_id, 60_000, 5).unwrap();
        let y = Exports::open(Some(dir.path())).unwrap();
        assert_eq!(y.redeem(&t.token, 6).unwrap(), &r);
        assert!(Exports::default()
            .create(&e, ExportKind::Pagexml, None, &WordlistFilter::default(), 0.0, 0)
            .is_err());
    }
}
