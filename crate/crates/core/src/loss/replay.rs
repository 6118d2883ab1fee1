//! Losses computed by an external trainer and replayed into the reweighting
//! loop.
//!
//! Input is line-delimited JSON:
//! `{"example_id": .., "role": "proxy"|"reference", "step": .., "domain": .., "losses": [..]}`
//! where `step` is required for proxy records and refers to the 1-based
//! reweighting step whose proxy produced the losses.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_losses, LossModel};
use crate::corpus::{Corpus, Example};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ReplayRecord {
    pub example_id: String,
    pub role: RecordRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub domain: String,
    pub losses: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "lowercase")]
pub enum RecordRole {
    Proxy,
    Reference,
}

/// Which losses a [`ReplayedLossModel`] serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReplayRole {
    /// Proxy losses for the current step.
    Proxy,
    Reference,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Key {
    Proxy { id: String, step: usize },
    Reference { id: String },
}

/// All ingested records, keyed by example and role.
#[derive(Clone, Debug, Default)]
pub struct ReplayStore {
    losses: HashMap<Key, Vec<f64>>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses records and checks each against the example it names in
    /// `corpus`. Errors carry the 1-based line number.
    pub fn from_jsonl<R: BufRead>(reader: R, corpus: &Corpus) -> Result<Self> {
        let index: HashMap<&str, (usize, &Example)> = (0..corpus.num_domains())
            .flat_map(|d| corpus.examples(d).iter().map(move |e| (e.id(), (d, e))))
            .collect();
        let mut store = ReplayStore::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let at = || format!("line {lineno}");
            let line = line.map_err(|e| Error::parse(at(), e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(&line).map_err(|e| Error::parse(at(), e.to_string()))?;
            let (domain, example) = index
                .get(record.example_id.as_str())
                .ok_or_else(|| Error::parse(at(), format!("unknown example `{}`", record.example_id)))?;
            if corpus.domains()[*domain] != *record.domain {
                return Err(Error::parse(
                    at(),
                    format!(
                        "example `{}` belongs to domain `{}`, record says `{}`",
                        record.example_id,
                        &corpus.domains()[*domain],
                        record.domain
                    ),
                ));
            }
            check_losses(example, &record.losses).map_err(|e| Error::parse(at(), e.to_string()))?;
            store.insert(record).map_err(|e| Error::parse(at(), e.to_string()))?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, record: ReplayRecord) -> Result<()> {
        let key = match (record.role, record.step) {
            (RecordRole::Proxy, Some(step)) => Key::Proxy {
                id: record.example_id,
                step,
            },
            (RecordRole::Proxy, None) => return Err(Error::InvalidParameter("proxy record without step".into())),
            (RecordRole::Reference, _) => Key::Reference { id: record.example_id },
        };
        self.losses.insert(key, record.losses);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }
}

/// Serves stored losses verbatim for one role.
#[derive(Clone, Debug)]
pub struct ReplayedLossModel {
    store: Arc<ReplayStore>,
    role: ReplayRole,
    step: usize,
}

impl ReplayedLossModel {
    pub fn new(store: Arc<ReplayStore>, role: ReplayRole) -> Self {
        ReplayedLossModel { store, role, step: 1 }
    }

    pub fn role(&self) -> ReplayRole {
        self.role
    }
}

impl LossModel for ReplayedLossModel {
    fn per_token_losses(&self, example: &Example) -> Result<Vec<f64>> {
        let id = example.id().to_string();
        let (key, role) = match self.role {
            ReplayRole::Proxy => (
                Key::Proxy {
                    id: id.clone(),
                    step: self.step,
                },
                format!("proxy step {}", self.step),
            ),
            ReplayRole::Reference => (Key::Reference { id: id.clone() }, "reference".to_string()),
        };
        let losses = self
            .store
            .losses
            .get(&key)
            .ok_or(Error::MissingLosses { example_id: id, role })?;
        check_losses(example, losses)?;
        Ok(losses.clone())
    }

    fn begin_step(&mut self, step: usize) {
        self.step = step;
    }
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;
    use crate::simplex::DomainSet;

    fn corpus() -> Corpus {
        let domains = DomainSet::new(["a", "b"]).unwrap();
        Corpus::new(
            domains,
            vec![
                vec![Example::single_domain("a0", vec![1, 2, 3], 0).unwrap()],
                vec![Example::single_domain("b0", vec![4], 1).unwrap()],
            ],
            "test",
            8,
            8,
        )
        .unwrap()
    }

    const GOOD: &str = r#"{"example_id": "a0", "role": "reference", "domain": "a", "losses": [0.5, 1.0, 1.5]}
{"example_id": "a0", "role": "proxy", "step": 1, "domain": "a", "losses": [1.0, 1.0, 1.0]}

{"example_id": "a0", "role": "proxy", "step": 2, "domain": "a", "losses": [0.25, 0.0, 2.0]}
"#;

    #[test]
    fn replays_verbatim_per_role_and_step() {
        let c = corpus();
        let store = Arc::new(ReplayStore::from_jsonl(Cursor::new(GOOD), &c).unwrap());
        assert_eq!(store.len(), 3);
        let ex = &c.examples(0)[0];

        let reference = ReplayedLossModel::new(store.clone(), ReplayRole::Reference);
        assert_eq!(reference.per_token_losses(ex).unwrap(), vec![0.5, 1.0, 1.5]);

        let mut proxy = ReplayedLossModel::new(store, ReplayRole::Proxy);
        assert_eq!(proxy.per_token_losses(ex).unwrap(), vec![1.0, 1.0, 1.0]);
        proxy.begin_step(2);
        assert_eq!(proxy.per_token_losses(ex).unwrap(), vec![0.25, 0.0, 2.0]);
        proxy.begin_step(3);
        assert!(matches!(proxy.per_token_losses(ex), Err(Error::MissingLosses { .. })));
        assert!(!proxy.is_trainable());
    }

    #[test]
    fn length_mismatch_reports_line() {
        let bad = format!(
            "{}\n{}\n",
            r#"{"example_id": "b0", "role": "reference", "domain": "b", "losses": [0.1]}"#,
            r#"{"example_id": "a0", "role": "reference", "domain": "a", "losses": [0.1, 0.2]}"#
        );
        let err = ReplayStore::from_jsonl(Cursor::new(bad), &corpus()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn rejects_unknown_example_wrong_domain_and_missing_step() {
        let c = corpus();
        for line in [
            r#"{"example_id": "zz", "role": "reference", "domain": "a", "losses": [0.1]}"#,
            r#"{"example_id": "b0", "role": "reference", "domain": "a", "losses": [0.1]}"#,
            r#"{"example_id": "b0", "role": "proxy", "domain": "b", "losses": [0.1]}"#,
            r#"{"example_id": "b0", "role": "reference", "domain": "b", "losses": [-0.1]}"#,
        ] {
            let err = ReplayStore::from_jsonl(Cursor::new(line), &c).unwrap_err();
            assert!(err.to_string().contains("line 1"), "{err}");
        }
    }
}
