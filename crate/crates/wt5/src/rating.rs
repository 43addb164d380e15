//! Batched human rating of generated explanations.
//!
//! Raters receive batches of nine real items and one attention check in
//! random order and answer yes/no to "does the explanation support the
//! label?". A batch with a missing answer or a wrong check answer is
//! discarded and its items go back to the pool. Each real item needs five
//! accepted verdicts from five different raters; it counts as correct when
//! at least three are yes.
//!
//! State changes are recorded as [`Event`]s. [`Session::replay`] rebuilds
//! identical state from the event list, which is what the JSONL log stores.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const BATCH_SIZE: usize = 10;
pub const REAL_PER_BATCH: usize = BATCH_SIZE - 1;
pub const VERDICTS_PER_ITEM: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingItem {
    pub id: String,
    pub input: String,
    pub label: String,
    /// Abstractive text, or a single extracted span.
    pub explanation: String,
    #[serde(default)]
    pub is_attention_check: bool,
    /// Required for checks, absent for real items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_answer: Option<bool>,
}

impl RatingItem {
    pub fn real(
        id: impl Into<String>,
        input: impl Into<String>,
        label: impl Into<String>,
        explanation: impl Into<String>,
    ) -> Self {
        RatingItem {
            id: id.into(),
            input: input.into(),
            label: label.into(),
            explanation: explanation.into(),
            is_attention_check: false,
            expected_answer: None,
        }
    }

    pub fn check(
        id: impl Into<String>,
        input: impl Into<String>,
        label: impl Into<String>,
        explanation: impl Into<String>,
        expected: bool,
    ) -> Self {
        RatingItem {
            is_attention_check: true,
            expected_answer: Some(expected),
            ..RatingItem::real(id, input, label, explanation)
        }
    }
}

/// What a rater is shown; checks are indistinguishable from real items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicItem {
    pub id: String,
    pub input: String,
    pub label: String,
    pub explanation: String,
}

impl From<&RatingItem> for PublicItem {
    fn from(i: &RatingItem) -> Self {
        PublicItem {
            id: i.id.clone(),
            input: i.input.clone(),
            label: i.label.clone(),
            explanation: i.explanation.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchStatus {
    Open,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub id: u64,
    pub rater: String,
    /// Display order, check included.
    pub items: Vec<String>,
    pub check: String,
    /// Real items already fully rated, used only to fill the batch; their
    /// answers are discarded.
    pub filler: Vec<String>,
    pub status: BatchStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchView {
    pub batch_id: u64,
    pub rater: String,
    pub items: Vec<PublicItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        items: Vec<RatingItem>,
        checks: Vec<RatingItem>,
        seed: u64,
    },
    BatchIssued {
        batch_id: u64,
        rater: String,
        items: Vec<String>,
        check: String,
        filler: Vec<String>,
    },
    BatchSubmitted {
        batch_id: u64,
        answers: Vec<Option<bool>>,
        outcome: Outcome,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RatingError {
    #[error("session needs at least {REAL_PER_BATCH} real items, got {0}")]
    TooFewItems(usize),
    #[error("{items} real items need at least {needed} attention checks, got {got}")]
    InsufficientChecks { items: usize, needed: usize, got: usize },
    #[error("item `{0}`: attention checks need an expected answer and real items must not have one")]
    BadItem(String),
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("unknown batch {0}")]
    UnknownBatch(u64),
    #[error("batch {0} was already submitted")]
    AlreadySubmitted(u64),
    #[error("batch {batch} belongs to rater `{owner}`")]
    WrongRater { batch: u64, owner: String },
    #[error("expected {BATCH_SIZE} answers, got {0}")]
    AnswerCount(usize),
    #[error("rater id is empty")]
    EmptyRater,
    #[error("items not yet final: {}", .0.join(", "))]
    NotFinal(Vec<String>),
    #[error("event log: {0}")]
    Log(String),
}

/// Result of asking for work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextBatch {
    Open(BatchView),
    /// Nothing this rater may still rate.
    Drained,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub id: String,
    pub yes: usize,
    pub no: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingReport {
    pub items: Vec<ItemVerdict>,
    pub correct: usize,
    pub total: usize,
    /// Percentage of items judged correct.
    pub he: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    items: Vec<RatingItem>,
    checks: Vec<RatingItem>,
    seed: u64,
    /// Seeded tie-break rank per real item.
    priority: Vec<usize>,
    index: BTreeMap<String, usize>,
    verdicts: Vec<Vec<(String, bool)>>,
    in_flight: Vec<usize>,
    seen: BTreeMap<String, BTreeSet<String>>,
    checks_seen: BTreeMap<String, Vec<usize>>,
    batches: Vec<Batch>,
    events: Vec<Event>,
}

fn batch_rng(seed: u64, batch_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ batch_id.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

impl Session {
    pub fn create(items: Vec<RatingItem>, checks: Vec<RatingItem>, seed: u64) -> Result<Self, RatingError> {
        let event = Event::SessionCreated { items, checks, seed };
        Self::from_created(&event)
    }

    fn from_created(event: &Event) -> Result<Self, RatingError> {
        let Event::SessionCreated { items, checks, seed } = event else {
            return Err(RatingError::Log("log must start with session_created".into()));
        };
        if items.len() < REAL_PER_BATCH {
            return Err(RatingError::TooFewItems(items.len()));
        }
        let needed = items.len().div_ceil(REAL_PER_BATCH);
        if checks.len() < needed {
            return Err(RatingError::InsufficientChecks {
                items: items.len(),
                needed,
                got: checks.len(),
            });
        }
        let mut ids = BTreeSet::new();
        for item in items.iter().chain(checks) {
            let is_check = checks.iter().any(|c| std::ptr::eq(c, item));
            if item.is_attention_check != is_check || item.expected_answer.is_some() != is_check {
                return Err(RatingError::BadItem(item.id.clone()));
            }
            if !ids.insert(item.id.clone()) {
                return Err(RatingError::DuplicateId(item.id.clone()));
            }
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
        let mut priority = vec![0; items.len()];
        for (rank, &i) in order.iter().enumerate() {
            priority[i] = rank;
        }
        Ok(Session {
            index: items.iter().enumerate().map(|(i, it)| (it.id.clone(), i)).collect(),
            verdicts: vec![Vec::new(); items.len()],
            in_flight: vec![0; items.len()],
            items: items.clone(),
            checks: checks.clone(),
            seed: *seed,
            priority,
            seen: BTreeMap::new(),
            checks_seen: BTreeMap::new(),
            batches: Vec::new(),
            events: vec![event.clone()],
        })
    }

    /// Rebuilds a session from its event log.
    pub fn replay(events: &[Event]) -> Result<Self, RatingError> {
        let first = events.first().ok_or_else(|| RatingError::Log("empty log".into()))?;
        let mut session = Self::from_created(first)?;
        for e in &events[1..] {
            session.apply(e.clone())?;
        }
        Ok(session)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn items(&self) -> &[RatingItem] {
        &self.items
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn batch(&self, id: u64) -> Option<&Batch> {
        self.batches.get(id as usize)
    }

    /// Accepted verdicts for a real item.
    pub fn verdicts(&self, item_id: &str) -> Option<&[(String, bool)]> {
        self.index.get(item_id).map(|&i| self.verdicts[i].as_slice())
    }

    pub fn in_flight(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).map(|&i| self.in_flight[i])
    }

    pub fn is_complete(&self) -> bool {
        self.verdicts.iter().all(|v| v.len() == VERDICTS_PER_ITEM)
    }

    pub fn pending_items(&self) -> Vec<String> {
        self.items
            .iter()
            .zip(&self.verdicts)
            .filter(|(_, v)| v.len() < VERDICTS_PER_ITEM)
            .map(|(i, _)| i.id.clone())
            .collect()
    }

    fn apply(&mut self, event: Event) -> Result<(), RatingError> {
        match &event {
            Event::SessionCreated { .. } => return Err(RatingError::Log("session_created after start".into())),
            Event::BatchIssued {
                batch_id,
                rater,
                items,
                check,
                filler,
            } => {
                if *batch_id != self.batches.len() as u64 {
                    return Err(RatingError::Log(format!("batch {batch_id} issued out of order")));
                }
                let check_idx = self
                    .checks
                    .iter()
                    .position(|c| &c.id == check)
                    .ok_or_else(|| RatingError::Log(format!("unknown check `{check}`")))?;
                let seen = self.seen.entry(rater.clone()).or_default();
                for id in items.iter().filter(|id| *id != check) {
                    let &i = self
                        .index
                        .get(id)
                        .ok_or_else(|| RatingError::Log(format!("unknown item `{id}`")))?;
                    seen.insert(id.clone());
                    if !filler.contains(id) {
                        self.in_flight[i] += 1;
                    }
                }
                let counts = self
                    .checks_seen
                    .entry(rater.clone())
                    .or_insert_with(|| vec![0; self.checks.len()]);
                counts[check_idx] += 1;
                self.batches.push(Batch {
                    id: *batch_id,
                    rater: rater.clone(),
                    items: items.clone(),
                    check: check.clone(),
                    filler: filler.clone(),
                    status: BatchStatus::Open,
                });
            }
            Event::BatchSubmitted {
                batch_id,
                answers,
                outcome,
            } => {
                let batch = self
                    .batches
                    .get_mut(*batch_id as usize)
                    .ok_or(RatingError::UnknownBatch(*batch_id))?;
                if batch.status != BatchStatus::Open {
                    return Err(RatingError::AlreadySubmitted(*batch_id));
                }
                batch.status = match outcome {
                    Outcome::Accepted => BatchStatus::Accepted,
                    Outcome::Rejected => BatchStatus::Rejected,
                };
                for (id, answer) in batch.items.iter().zip(answers) {
                    if *id == batch.check || batch.filler.contains(id) {
                        continue;
                    }
                    let i = self.index[id];
                    self.in_flight[i] -= 1;
                    if *outcome == Outcome::Accepted {
                        let yes =
                            answer.ok_or_else(|| RatingError::Log("accepted batch with missing answer".into()))?;
                        self.verdicts[i].push((batch.rater.clone(), yes));
                    }
                }
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// Issues the next batch for `rater`: the nine unseen items owing the
    /// most verdicts (fewest accepted plus in flight, ties by a seeded
    /// order), topped up with already complete unseen items if fewer than
    /// nine still need verdicts, plus one attention check, shuffled.
    pub fn next_batch(&mut self, rater: &str) -> Result<NextBatch, RatingError> {
        if rater.is_empty() {
            return Err(RatingError::EmptyRater);
        }
        let empty = BTreeSet::new();
        let seen = self.seen.get(rater).unwrap_or(&empty);
        let unseen: Vec<usize> = (0..self.items.len())
            .filter(|&i| !seen.contains(&self.items[i].id))
            .collect();
        let load = |i: usize| self.verdicts[i].len() + self.in_flight[i];
        let mut eligible: Vec<usize> = unseen
            .iter()
            .copied()
            .filter(|&i| load(i) < VERDICTS_PER_ITEM)
            .collect();
        if eligible.is_empty() || unseen.len() < REAL_PER_BATCH {
            return Ok(NextBatch::Drained);
        }
        eligible.sort_by_key(|&i| (load(i), self.priority[i]));
        eligible.truncate(REAL_PER_BATCH);
        let mut filler: Vec<usize> = unseen
            .iter()
            .copied()
            .filter(|&i| load(i) >= VERDICTS_PER_ITEM)
            .collect();
        filler.sort_by_key(|&i| self.priority[i]);
        filler.truncate(REAL_PER_BATCH - eligible.len());

        let batch_id = self.batches.len() as u64;
        let counts = self.checks_seen.get(rater);
        let n_checks = self.checks.len();
        let check = (0..n_checks)
            .map(|k| (k + batch_id as usize) % n_checks)
            .min_by_key(|&k| counts.map_or(0, |c| c[k]))
            .expect("sessions have checks");

        let mut ids: Vec<String> = eligible
            .iter()
            .chain(&filler)
            .map(|&i| self.items[i].id.clone())
            .collect();
        ids.push(self.checks[check].id.clone());
        ids.shuffle(&mut batch_rng(self.seed, batch_id));
        self.apply(Event::BatchIssued {
            batch_id,
            rater: rater.to_string(),
            items: ids,
            check: self.checks[check].id.clone(),
            filler: filler.iter().map(|&i| self.items[i].id.clone()).collect(),
        })?;
        Ok(NextBatch::Open(self.view(batch_id).expect("just issued")))
    }

    pub fn view(&self, batch_id: u64) -> Option<BatchView> {
        let b = self.batch(batch_id)?;
        let items = b
            .items
            .iter()
            .map(|id| match self.index.get(id) {
                Some(&i) => PublicItem::from(&self.items[i]),
                None => PublicItem::from(self.checks.iter().find(|c| &c.id == id).expect("check exists")),
            })
            .collect();
        Some(BatchView {
            batch_id,
            rater: b.rater.clone(),
            items,
        })
    }

    /// `answers` follow the batch's display order; `None` is unanswered.
    pub fn submit_batch(
        &mut self,
        batch_id: u64,
        rater: &str,
        answers: &[Option<bool>],
    ) -> Result<Outcome, RatingError> {
        let batch = self.batch(batch_id).ok_or(RatingError::UnknownBatch(batch_id))?;
        if batch.status != BatchStatus::Open {
            return Err(RatingError::AlreadySubmitted(batch_id));
        }
        if batch.rater != rater {
            return Err(RatingError::WrongRater {
                batch: batch_id,
                owner: batch.rater.clone(),
            });
        }
        if answers.len() != BATCH_SIZE {
            return Err(RatingError::AnswerCount(answers.len()));
        }
        let check_pos = batch
            .items
            .iter()
            .position(|id| *id == batch.check)
            .expect("batch holds its check");
        let expected = self
            .checks
            .iter()
            .find(|c| c.id == batch.check)
            .and_then(|c| c.expected_answer);
        let outcome = if answers.iter().any(Option::is_none) || answers[check_pos] != expected {
            Outcome::Rejected
        } else {
            Outcome::Accepted
        };
        self.apply(Event::BatchSubmitted {
            batch_id,
            answers: answers.to_vec(),
            outcome,
        })?;
        Ok(outcome)
    }

    /// Majority verdict per item and the percentage judged correct.
    pub fn aggregate(&self) -> Result<RatingReport, RatingError> {
        let pending = self.pending_items();
        if !pending.is_empty() {
            return Err(RatingError::NotFinal(pending));
        }
        let items: Vec<ItemVerdict> = self
            .items
            .iter()
            .zip(&self.verdicts)
            .map(|(item, v)| {
                let yes = v.iter().filter(|(_, y)| *y).count();
                ItemVerdict {
                    id: item.id.clone(),
                    yes,
                    no: v.len() - yes,
                    correct: 2 * yes > v.len(),
                }
            })
            .collect();
        let correct = items.iter().filter(|i| i.correct).count();
        let total = items.len();
        Ok(RatingReport {
            he: 100.0 * correct as f64 / total as f64,
            items,
            correct,
            total,
        })
    }

    /// SHA-256 over a canonical JSON rendering of the derived state.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            seed: u64,
            items: &'a [RatingItem],
            checks: &'a [RatingItem],
            verdicts: BTreeMap<&'a str, &'a [(String, bool)]>,
            in_flight: BTreeMap<&'a str, usize>,
            seen: &'a BTreeMap<String, BTreeSet<String>>,
            batches: &'a [Batch],
        }
        let snapshot = Snapshot {
            seed: self.seed,
            items: &self.items,
            checks: &self.checks,
            verdicts: self
                .items
                .iter()
                .zip(&self.verdicts)
                .map(|(i, v)| (i.id.as_str(), v.as_slice()))
                .collect(),
            in_flight: self
                .items
                .iter()
                .zip(&self.in_flight)
                .map(|(i, &n)| (i.id.as_str(), n))
                .collect(),
            seen: &self.seen,
            batches: &self.batches,
        };
        let bytes = serde_json::to_vec(&snapshot).expect("snapshot serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Appends one event as a JSON line and syncs it to disk.
pub fn append_event(path: impl AsRef<Path>, event: &Event) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(event).map_err(std::io::Error::other)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<Event>, RatingError> {
    let f = File::open(path).map_err(|e| RatingError::Log(e.to_string()))?;
    let mut events = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| RatingError::Log(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(|e| RatingError::Log(format!("line {}: {e}", n + 1)))?);
    }
    Ok(events)
}
