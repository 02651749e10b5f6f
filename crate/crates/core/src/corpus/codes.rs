use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Diagnosis,
    Procedure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IcdVersion {
    #[serde(rename = "ICD-9")]
    Icd9,
    #[serde(rename = "ICD-10")]
    Icd10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub description: String,
    pub chapter_id: String,
    pub chapter_label: String,
    pub category: String,
    pub kind: CodeKind,
    pub version: IcdVersion,
}

/// Code metadata keyed by code; each code belongs to exactly one chapter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodeSystem {
    pub entries: BTreeMap<String, CodeEntry>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    code: String,
    description: String,
    chapter_id: String,
    chapter_label: String,
    category: String,
    kind: CodeKind,
    version: IcdVersion,
}

impl CodeSystem {
    pub fn get(&self, code: &str) -> Option<&CodeEntry> {
        self.entries.get(code)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut entries = BTreeMap::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            // header is line 1
            let row = row.map_err(|e| Error::Record {
                line: i + 2,
                message: e.to_string(),
            })?;
            let entry = CodeEntry {
                description: row.description,
                chapter_id: row.chapter_id,
                chapter_label: row.chapter_label,
                category: row.category,
                kind: row.kind,
                version: row.version,
            };
            if entries.insert(row.code.clone(), entry).is_some() {
                return Err(Error::Record {
                    line: i + 2,
                    message: format!("duplicate code {:?}", row.code),
                });
            }
        }
        Ok(CodeSystem { entries })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for (code, e) in &self.entries {
            writer.serialize(Row {
                code: code.clone(),
                description: e.description.clone(),
                chapter_id: e.chapter_id.clone(),
                chapter_label: e.chapter_label.clone(),
                category: e.category.clone(),
                kind: e.kind,
                version: e.version,
            })?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}
