//! Offline tool corpus.
//!
//! A fixture directory holds JSON files, each containing one document or an
//! array of documents. Search documents mirror a search API's `organic`
//! result list; page documents mirror a reader API's `{url, title, content}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tools::{SourceDescriptor, ToolBackend, ToolResult, BROWSE_TOOL, SEARCH_TOOL};
use super::BackendError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub link: String,
    #[serde(default)]
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FixtureDoc {
    Search { query: String, organic: Vec<SearchHit> },
    Page { url: String, #[serde(default)] title: String, content: String },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(FixtureDoc),
    Many(Vec<FixtureDoc>),
}

pub fn normalize_query(q: &str) -> String {
    q.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn normalize_url(u: &str) -> String {
    u.trim().trim_end_matches('/').to_string()
}

#[derive(Debug, Clone, Default)]
pub struct FixtureTools {
    searches: BTreeMap<String, Vec<SearchHit>>,
    pages: BTreeMap<String, (String, String)>,
}

impl FixtureTools {
    pub fn from_docs(docs: impl IntoIterator<Item = FixtureDoc>) -> Self {
        let mut out = Self::default();
        for doc in docs {
            out.insert(doc);
        }
        out
    }

    pub fn insert(&mut self, doc: FixtureDoc) {
        match doc {
            FixtureDoc::Search { query, organic } => {
                self.searches.insert(normalize_query(&query), organic);
            }
            FixtureDoc::Page { url, title, content } => {
                self.pages.insert(normalize_url(&url), (title, content));
            }
        }
    }

    /// Loads every `*.json` file directly inside `dir`, in file-name order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| BackendError::Storage(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut out = Self::default();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(|e| BackendError::Storage(format!("{}: {e}", p.display())))?;
            let docs = serde_json::from_str::<OneOrMany>(&text)
                .map_err(|e| BackendError::Storage(format!("{}: {e}", p.display())))?;
            match docs {
                OneOrMany::One(d) => out.insert(d),
                OneOrMany::Many(ds) => ds.into_iter().for_each(|d| out.insert(d)),
            }
        }
        Ok(out)
    }

    pub fn docs(&self) -> Vec<FixtureDoc> {
        let mut out: Vec<FixtureDoc> = self
            .searches
            .iter()
            .map(|(q, hits)| FixtureDoc::Search { query: q.clone(), organic: hits.clone() })
            .collect();
        out.extend(self.pages.iter().map(|(u, (t, c))| FixtureDoc::Page {
            url: u.clone(),
            title: t.clone(),
            content: c.clone(),
        }));
        out
    }
}

impl ToolBackend for FixtureTools {
    fn search(&mut self, query: &str) -> Result<Vec<ToolResult>, BackendError> {
        let key = normalize_query(query);
        let hits = self.searches.get(&key).ok_or(BackendError::FixtureMiss { key })?;
        Ok(hits
            .iter()
            .enumerate()
            .map(|(rank, h)| ToolResult {
                tool: SEARCH_TOOL.into(),
                input: query.into(),
                output: format!("{}\nURL: {}\n{}", h.title, h.link, h.snippet),
                source: Some(SourceDescriptor { url: h.link.clone(), rank: Some(rank + 1) }),
            })
            .collect())
    }

    fn browse(&mut self, url: &str) -> Result<ToolResult, BackendError> {
        let key = normalize_url(url);
        let (title, content) = self.pages.get(&key).ok_or(BackendError::FixtureMiss { key })?;
        Ok(ToolResult {
            tool: BROWSE_TOOL.into(),
            input: url.into(),
            output: format!("Title: {title}\n\n{content}"),
            source: Some(SourceDescriptor { url: url.into(), rank: None }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ToolRegistry;

    fn corpus() -> FixtureTools {
        FixtureTools::from_docs([
            FixtureDoc::Search {
                query: "Three Gorges Dam annual report 2023 pdf".into(),
                organic: vec![SearchHit {
                    title: "Annual report 2023".into(),
                    link: "https://example.org/tgd-2023.pdf".into(),
                    snippet: "monitoring".into(),
                }],
            },
            FixtureDoc::Page {
                url: "https://example.org/tgd-2023.pdf".into(),
                title: "Report".into(),
                content: "x".repeat(50),
            },
        ])
    }

    #[test]
    fn lookups_use_normalized_keys() {
        let mut tools = corpus();
        let hits = tools.search("  three gorges DAM annual report 2023   pdf").unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].source.as_ref().unwrap().rank, Some(1));
        let page = tools.browse("https://example.org/tgd-2023.pdf/").unwrap();
        assert!(page.output.contains("xxxx"));
    }

    #[test]
    fn miss_reports_normalized_key() {
        let mut tools = corpus();
        assert_eq!(
            tools.search("Some  Other Query").unwrap_err(),
            BackendError::FixtureMiss { key: "some other query".into() }
        );
    }

    #[test]
    fn registry_enforces_truncation() {
        let mut reg = ToolRegistry::new(Box::new(corpus())).with_limit(10);
        let page = reg.browse("https://example.org/tgd-2023.pdf").unwrap();
        assert!(page.output.chars().count() <= 10);
        assert!(reg.call("browse", "https://example.org/tgd-2023.pdf").unwrap().chars().count() <= 10);
        assert!(matches!(reg.call("fax", "x"), Err(BackendError::UnknownTool(_))));
    }

    #[test]
    fn loads_directory_of_documents() {
        let dir = tempfile::tempdir().unwrap();
        let docs = corpus().docs();
        std::fs::write(dir.path().join("a.json"), serde_json::to_string(&docs[0]).unwrap()).unwrap();
        std::fs::write(dir.path().join("b.json"), serde_json::to_string(&docs[1..]).unwrap()).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let mut tools = FixtureTools::load_dir(dir.path()).unwrap();
        assert!(tools.search("three gorges dam annual report 2023 pdf").is_ok());
        assert!(tools.browse("https://example.org/tgd-2023.pdf").is_ok());
    }
}
