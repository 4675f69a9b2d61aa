//! Human-verification queue backed by an append-only event log.
//!
//! Every state change is one JSON line: a grounded verdict, an enqueued
//! item, or a decision. Replaying the file rebuilds the queue exactly. A
//! record is appended and synced before the in-memory state changes, so a
//! crash leaves either the whole line or nothing past the last newline.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use cog_core::eval::{classification_metrics, ClassificationMetrics, EvalReport};
use cog_core::{GroundingVerdict, Stages};
use serde::{Deserialize, Serialize};

use crate::error::QueueError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Accepted,
    Rejected,
}

impl std::str::FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(Self::Pending),
            "accepted" => Ok(Self::Accepted),
            "rejected" => Ok(Self::Rejected),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub item_id: String,
    pub verdict: GroundingVerdict,
    pub status: Status,
    #[serde(default)]
    pub decided_by: Option<String>,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub decided_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub item_id: String,
    pub annotator: String,
    pub decision: Decision,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
enum Event {
    Verdict {
        verdict: GroundingVerdict,
    },
    Enqueued {
        item_id: String,
        verdict: GroundingVerdict,
    },
    Decision(DecisionRecord),
}

/// Queue state plus its log. Callers serialize access (the service holds it
/// behind a mutex), which makes decision recording a compare-and-set.
#[derive(Debug)]
pub struct VerificationQueue {
    log: Option<(PathBuf, File)>,
    verdicts: Vec<GroundingVerdict>,
    verdict_index: HashMap<(String, String), usize>,
    items: Vec<QueueItem>,
    item_index: HashMap<String, usize>,
    pair_index: HashMap<(String, String), String>,
    decisions: Vec<DecisionRecord>,
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

fn pair_key(v: &GroundingVerdict) -> (String, String) {
    (v.entity_id.clone(), v.image_id.clone())
}

impl VerificationQueue {
    /// Queue without persistence.
    pub fn in_memory() -> Self {
        Self {
            log: None,
            verdicts: Vec::new(),
            verdict_index: HashMap::new(),
            items: Vec::new(),
            item_index: HashMap::new(),
            pair_index: HashMap::new(),
            decisions: Vec::new(),
        }
    }

    /// Opens (creating if needed) the log at `path` and replays it. A torn
    /// final line without a trailing newline is discarded and truncated.
    pub fn open(path: &Path) -> Result<Self, QueueError> {
        let io = |source| QueueError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut queue = Self::in_memory();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io)?;

        let mut good_len = 0u64;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            let mut line_no = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line).map_err(io)?;
                if read == 0 {
                    break;
                }
                line_no += 1;
                if !line.ends_with('\n') {
                    // Torn tail from an interrupted append.
                    break;
                }
                if !line.trim().is_empty() {
                    let corrupt = |message: String| QueueError::Corrupt {
                        path: path.to_path_buf(),
                        line: line_no,
                        message,
                    };
                    let event: Event = serde_json::from_str(line.trim_end()).map_err(|e| corrupt(e.to_string()))?;
                    queue.apply(event).map_err(|e| corrupt(e.to_string()))?;
                }
                good_len += read as u64;
            }
        }
        if file.metadata().map_err(io)?.len() > good_len {
            file.set_len(good_len).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        queue.log = Some((path.to_path_buf(), file));
        Ok(queue)
    }

    fn apply(&mut self, event: Event) -> Result<(), QueueError> {
        match event {
            Event::Verdict { verdict } => {
                let key = pair_key(&verdict);
                match self.verdict_index.get(&key) {
                    Some(&i) => self.verdicts[i] = verdict,
                    None => {
                        self.verdict_index.insert(key, self.verdicts.len());
                        self.verdicts.push(verdict);
                    }
                }
            }
            Event::Enqueued { item_id, verdict } => {
                let key = pair_key(&verdict);
                if self.item_index.contains_key(&item_id) || self.pair_index.contains_key(&key) {
                    return Err(QueueError::Duplicate(item_id));
                }
                self.item_index.insert(item_id.clone(), self.items.len());
                self.pair_index.insert(key, item_id.clone());
                self.items.push(QueueItem {
                    item_id,
                    verdict,
                    status: Status::Pending,
                    decided_by: None,
                    decided_at: None,
                });
            }
            Event::Decision(record) => {
                let &i = self
                    .item_index
                    .get(&record.item_id)
                    .ok_or_else(|| QueueError::NotFound(record.item_id.clone()))?;
                let item = &mut self.items[i];
                if item.status != Status::Pending {
                    return Err(QueueError::AlreadyDecided(record.item_id.clone()));
                }
                item.status = match record.decision {
                    Decision::Accept => Status::Accepted,
                    Decision::Reject => Status::Rejected,
                };
                item.decided_by = Some(record.annotator.clone());
                item.decided_at = Some(record.timestamp);
                self.decisions.push(record);
            }
        }
        Ok(())
    }

    fn append(&mut self, events: &[Event]) -> Result<(), QueueError> {
        let Some((path, file)) = self.log.as_mut() else {
            return Ok(());
        };
        let mut buf = Vec::new();
        for event in events {
            serde_json::to_writer(&mut buf, event).expect("events serialize");
            buf.push(b'\n');
        }
        let io = |source| QueueError::Io {
            path: path.clone(),
            source,
        };
        file.write_all(&buf).map_err(io)?;
        file.sync_data().map_err(io)
    }

    /// Logs the latest verdict for each pair; later verdicts replace earlier
    /// ones for the same `(entity, image)`.
    pub fn record_verdicts(&mut self, verdicts: &[GroundingVerdict]) -> Result<(), QueueError> {
        let events: Vec<Event> = verdicts.iter().map(|v| Event::Verdict { verdict: v.clone() }).collect();
        self.append(&events)?;
        for event in events {
            self.apply(event)?;
        }
        Ok(())
    }

    /// Adds one pending item per stage-1 rejection. All-or-nothing: any
    /// accepted verdict or duplicate pair fails the whole call.
    pub fn enqueue_rejections(&mut self, verdicts: &[GroundingVerdict]) -> Result<usize, QueueError> {
        let mut batch_keys = std::collections::HashSet::new();
        for v in verdicts {
            if v.stage1_accept {
                return Err(QueueError::Validation(format!(
                    "verdict for ({}, {}) was accepted by stage 1",
                    v.entity_id, v.image_id
                )));
            }
            let key = pair_key(v);
            if let Some(existing) = self.pair_index.get(&key) {
                return Err(QueueError::Duplicate(existing.clone()));
            }
            if !batch_keys.insert(key) {
                return Err(QueueError::Duplicate(format!("{}/{}", v.entity_id, v.image_id)));
            }
        }
        let events: Vec<Event> = verdicts
            .iter()
            .enumerate()
            .map(|(offset, v)| Event::Enqueued {
                item_id: format!("item-{:06}", self.items.len() + offset + 1),
                verdict: v.clone(),
            })
            .collect();
        self.append(&events)?;
        for event in events {
            self.apply(event)?;
        }
        Ok(verdicts.len())
    }

    pub fn is_queued(&self, entity_id: &str, image_id: &str) -> bool {
        self.pair_index.contains_key(&(entity_id.to_string(), image_id.to_string()))
    }

    /// First decision wins; the record is durable before this returns.
    pub fn record_decision(&mut self, item_id: &str, annotator: &str, decision: Decision) -> Result<QueueItem, QueueError> {
        if annotator.trim().is_empty() {
            return Err(QueueError::Validation("annotator must be non-empty".into()));
        }
        let &i = self.item_index.get(item_id).ok_or_else(|| QueueError::NotFound(item_id.to_string()))?;
        if self.items[i].status != Status::Pending {
            return Err(QueueError::AlreadyDecided(item_id.to_string()));
        }
        let event = Event::Decision(DecisionRecord {
            item_id: item_id.to_string(),
            annotator: annotator.to_string(),
            decision,
            timestamp: now_millis(),
        });
        self.append(std::slice::from_ref(&event))?;
        self.apply(event)?;
        Ok(self.items[i].clone())
    }

    pub fn get(&self, item_id: &str) -> Option<&QueueItem> {
        self.item_index.get(item_id).map(|&i| &self.items[i])
    }

    pub fn items(&self) -> &[QueueItem] {
        &self.items
    }

    pub fn list(&self, status: Option<Status>, limit: usize) -> Vec<QueueItem> {
        self.items
            .iter()
            .filter(|item| status.is_none_or(|s| item.status == s))
            .take(limit)
            .cloned()
            .collect()
    }

    pub fn verdicts(&self) -> &[GroundingVerdict] {
        &self.verdicts
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }
}

/// Classification report over labeled verdicts, with human decisions
/// overriding the machine label of the pairs they cover.
///
/// `labeled` holds `(verdict, actual)`; `decisions` is keyed by item and
/// resolved through `items`.
pub fn recompute_with_decisions(
    labeled: &[(GroundingVerdict, bool)],
    items: &[QueueItem],
    decisions: &[DecisionRecord],
    stages: Stages,
    strategy: cog_core::ConceptStrategy,
) -> Result<EvalReport, QueueError> {
    let item_pairs: HashMap<&str, (&str, &str)> = items
        .iter()
        .map(|i| (i.item_id.as_str(), (i.verdict.entity_id.as_str(), i.verdict.image_id.as_str())))
        .collect();
    let mut overrides: HashMap<(&str, &str), bool> = HashMap::new();
    for d in decisions {
        let pair = item_pairs
            .get(d.item_id.as_str())
            .ok_or_else(|| QueueError::NotFound(d.item_id.clone()))?;
        // First decision wins.
        overrides.entry(*pair).or_insert(d.decision == Decision::Accept);
    }
    let outcomes: Vec<(bool, bool)> = labeled
        .iter()
        .map(|(v, actual)| {
            let predicted = overrides
                .get(&(v.entity_id.as_str(), v.image_id.as_str()))
                .copied()
                .unwrap_or(v.final_label);
            (predicted, *actual)
        })
        .collect();
    let classification: ClassificationMetrics =
        classification_metrics(&outcomes).map_err(|e| QueueError::Validation(e.to_string()))?;
    Ok(EvalReport {
        strategy,
        stages,
        seed: 0,
        ranking: None,
        classification: Some(classification),
    })
}
