//! The review state machine.
//!
//! Every accepted mutation is an [`Event`] appended to the record history.
//! Commands are checked against the current record and turned into events by
//! [`ReviewRecord::decide`]; [`ReviewRecord::apply`] is the only code that
//! changes a record, so replaying the history rebuilds it exactly.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use aura_core::io::SampleRecord;
use aura_core::validate::check_conversation;
use aura_core::Conversation;
use serde::{Deserialize, Serialize};

use crate::{Result, ReviewError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    Generated,
    InReview,
    NeedsRevision,
    Revised,
    CrossCheck,
    Finalized,
    Replaced,
}

impl ReviewState {
    pub const ALL: [ReviewState; 7] = [
        Self::Generated,
        Self::InReview,
        Self::NeedsRevision,
        Self::Revised,
        Self::CrossCheck,
        Self::Finalized,
        Self::Replaced,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Generated => "generated",
            Self::InReview => "in_review",
            Self::NeedsRevision => "needs_revision",
            Self::Revised => "revised",
            Self::CrossCheck => "cross_check",
            Self::Finalized => "finalized",
            Self::Replaced => "replaced",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Finalized | Self::Replaced)
    }
}

impl fmt::Display for ReviewState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReviewState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown state {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Policy {
    pub min_approvers: usize,
    /// Disputes after which a record is replaced instead of revised again.
    pub dispute_cap: u32,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            min_approvers: 2,
            dispute_cap: 5,
        }
    }
}

/// A problem found before the record reached a human, e.g. by the QA parser.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemIssue {
    /// Item index, or `None` for the whole response.
    pub item: Option<usize>,
    pub message: String,
}

/// The sample under review. `sample.conversations` holds the current QA items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewPayload {
    pub sample: SampleRecord,
    /// Source image file; masks travel inside `sample` as run lengths.
    pub image_path: PathBuf,
    #[serde(default)]
    pub issues: Vec<ItemIssue>,
}

impl ReviewPayload {
    pub fn items(&self) -> &[Conversation] {
        &self.sample.conversations
    }

    /// Dataset rules every revised item list must satisfy.
    pub fn check_items(&self, items: &[Conversation]) -> Vec<String> {
        let mut messages = Vec::new();
        for (i, conv) in items.iter().enumerate() {
            if conv.question.trim().is_empty() {
                messages.push(format!("conversation {i}: question is empty"));
            }
            let mut violations = Vec::new();
            check_conversation(i, conv, |t| self.sample.objects.iter().any(|o| o.id == t), &mut violations);
            messages.extend(violations.iter().map(ToString::to_string));
        }
        if items.is_empty() {
            messages.push("a revision needs at least one conversation".into());
        }
        messages
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignments {
    pub reviewer: Option<String>,
    pub cross_checker: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Review,
    CrossCheck,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemChange {
    pub index: usize,
    pub before: Option<Conversation>,
    pub after: Option<Conversation>,
}

pub fn diff_items(before: &[Conversation], after: &[Conversation]) -> Vec<ItemChange> {
    (0..before.len().max(after.len()))
        .filter_map(|index| {
            let (b, a) = (before.get(index), after.get(index));
            (b != a).then(|| ItemChange {
                index,
                before: b.cloned(),
                after: a.cloned(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Event {
    Claimed { phase: Phase },
    Approved,
    Revised { items: Vec<Conversation>, diff: Vec<ItemChange> },
    CrossApproved { finalized: bool },
    Disputed { reason: String, replaced: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// Record version after this event.
    pub version: u64,
    pub actor: String,
    pub timestamp_ms: u64,
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewDecision {
    Approve,
    Revise { items: Vec<Conversation> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossVerdict {
    Approve,
    Dispute { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    /// `expected` pins the version the caller saw, when it has one.
    Claim { expected: Option<u64> },
    Review { decision: ReviewDecision, version: u64 },
    CrossCheck { verdict: CrossVerdict, version: u64 },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Claim { .. } => "claim",
            Self::Review { .. } => "review",
            Self::CrossCheck { .. } => "cross-check",
        }
    }

    fn version(&self) -> Option<u64> {
        match self {
            Self::Claim { expected } => *expected,
            Self::Review { version, .. } | Self::CrossCheck { version, .. } => Some(*version),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub record_id: String,
    pub payload: ReviewPayload,
    pub state: ReviewState,
    pub version: u64,
    pub assignments: Assignments,
    /// Distinct approvers since the last revision or dispute.
    pub approvers: BTreeSet<String>,
    /// Authors of the revision under check.
    pub revisers: BTreeSet<String>,
    pub disputes: u32,
    /// Set by a dispute: the next reviewer must revise, not approve.
    pub revision_required: bool,
    pub history: Vec<HistoryEntry>,
}

impl ReviewRecord {
    pub fn new(payload: ReviewPayload) -> Self {
        Self {
            record_id: payload.sample.sample_id.clone(),
            payload,
            state: ReviewState::Generated,
            version: 0,
            assignments: Assignments::default(),
            approvers: BTreeSet::new(),
            revisers: BTreeSet::new(),
            disputes: 0,
            revision_required: false,
            history: Vec::new(),
        }
    }

    fn conflict(&self, message: String) -> ReviewError {
        ReviewError::Conflict {
            record_id: self.record_id.clone(),
            message,
        }
    }

    fn state_error(&self, action: &'static str) -> ReviewError {
        ReviewError::State {
            state: self.state,
            action,
        }
    }

    fn is_fresh_checker(&self, actor: &str) -> bool {
        !self.approvers.contains(actor) && !self.revisers.contains(actor)
    }

    /// Checks `cmd` against the current record without changing it.
    pub fn decide(&self, actor: &str, cmd: &Command, policy: &Policy) -> Result<Event> {
        if let Some(v) = cmd.version() {
            if v != self.version {
                return Err(self.conflict(format!("stale version {v}, current is {}", self.version)));
            }
        }
        if self.state.is_terminal() {
            return Err(self.state_error(cmd.name()));
        }
        match cmd {
            Command::Claim { .. } => self.decide_claim(actor),
            Command::Review { decision, .. } => self.decide_review(actor, decision),
            Command::CrossCheck { verdict, .. } => self.decide_cross_check(actor, verdict, policy),
        }
    }

    fn decide_claim(&self, actor: &str) -> Result<Event> {
        match self.state {
            ReviewState::Generated | ReviewState::NeedsRevision => Ok(Event::Claimed { phase: Phase::Review }),
            ReviewState::InReview => {
                let holder = self.assignments.reviewer.as_deref().unwrap_or("?");
                Err(self.conflict(format!("already claimed by {holder}")))
            }
            ReviewState::Revised | ReviewState::CrossCheck => {
                if let Some(holder) = &self.assignments.cross_checker {
                    return Err(self.conflict(format!("already claimed by {holder}")));
                }
                if self.revisers.contains(actor) {
                    return Err(ReviewError::Policy(format!("{actor} cannot cross-check their own revision")));
                }
                if self.approvers.contains(actor) {
                    return Err(ReviewError::Policy(format!("{actor} already approved this record")));
                }
                Ok(Event::Claimed { phase: Phase::CrossCheck })
            }
            ReviewState::Finalized | ReviewState::Replaced => Err(self.state_error("claim")),
        }
    }

    fn decide_review(&self, actor: &str, decision: &ReviewDecision) -> Result<Event> {
        if self.state != ReviewState::InReview {
            return Err(self.state_error("review"));
        }
        if self.assignments.reviewer.as_deref() != Some(actor) {
            let holder = self.assignments.reviewer.as_deref().unwrap_or("nobody");
            return Err(ReviewError::Policy(format!("record is claimed by {holder}, not {actor}")));
        }
        match decision {
            ReviewDecision::Approve if self.revision_required => {
                Err(ReviewError::Policy("a disputed record must be revised before approval".into()))
            }
            ReviewDecision::Approve => Ok(Event::Approved),
            ReviewDecision::Revise { items } => {
                let violations = self.payload.check_items(items);
                if !violations.is_empty() {
                    return Err(ReviewError::Validation(violations));
                }
                Ok(Event::Revised {
                    items: items.clone(),
                    diff: diff_items(self.payload.items(), items),
                })
            }
        }
    }

    fn decide_cross_check(&self, actor: &str, verdict: &CrossVerdict, policy: &Policy) -> Result<Event> {
        match self.state {
            ReviewState::CrossCheck => {}
            ReviewState::Revised => {
                return Err(ReviewError::Policy("claim the revision before cross-checking it".into()))
            }
            _ => return Err(self.state_error("cross-check")),
        }
        if let Some(holder) = &self.assignments.cross_checker {
            if holder != actor {
                return Err(ReviewError::Policy(format!("cross-check is assigned to {holder}")));
            }
        }
        if !self.is_fresh_checker(actor) {
            return Err(ReviewError::Policy(format!(
                "{actor} already approved or revised this record in the current cycle"
            )));
        }
        Ok(match verdict {
            CrossVerdict::Approve => Event::CrossApproved {
                finalized: self.approvers.len() + 1 >= policy.min_approvers,
            },
            CrossVerdict::Dispute { reason } => {
                if reason.trim().is_empty() {
                    return Err(ReviewError::Validation(vec!["a dispute needs a reason".into()]));
                }
                Event::Disputed {
                    reason: reason.clone(),
                    replaced: self.disputes + 1 >= policy.dispute_cap,
                }
            }
        })
    }

    /// Applies an accepted event and bumps the version by one.
    pub fn apply(&mut self, actor: &str, timestamp_ms: u64, event: Event) {
        match &event {
            Event::Claimed { phase: Phase::Review } => {
                self.state = ReviewState::InReview;
                self.assignments.reviewer = Some(actor.to_string());
            }
            Event::Claimed { phase: Phase::CrossCheck } => {
                self.state = ReviewState::CrossCheck;
                self.assignments.cross_checker = Some(actor.to_string());
            }
            Event::Approved => {
                self.state = ReviewState::CrossCheck;
                self.approvers.insert(actor.to_string());
                self.assignments = Assignments::default();
            }
            Event::Revised { items, .. } => {
                self.payload.sample.conversations = items.clone();
                self.state = ReviewState::Revised;
                self.approvers.clear();
                self.revisers = BTreeSet::from([actor.to_string()]);
                self.revision_required = false;
                self.assignments = Assignments::default();
            }
            Event::CrossApproved { finalized } => {
                self.approvers.insert(actor.to_string());
                self.state = if *finalized {
                    ReviewState::Finalized
                } else {
                    ReviewState::CrossCheck
                };
                self.assignments.cross_checker = None;
            }
            Event::Disputed { replaced, .. } => {
                self.disputes += 1;
                self.approvers.clear();
                self.revisers.clear();
                self.assignments = Assignments::default();
                self.revision_required = !replaced;
                self.state = if *replaced {
                    ReviewState::Replaced
                } else {
                    ReviewState::NeedsRevision
                };
            }
        }
        self.version += 1;
        self.history.push(HistoryEntry {
            version: self.version,
            actor: actor.to_string(),
            timestamp_ms,
            event,
        });
    }

    /// `decide` then `apply` on a copy.
    pub fn execute(&self, actor: &str, cmd: &Command, policy: &Policy, timestamp_ms: u64) -> Result<ReviewRecord> {
        let event = self.decide(actor, cmd, policy)?;
        let mut next = self.clone();
        next.apply(actor, timestamp_ms, event);
        Ok(next)
    }

    /// Folds `history` over a fresh record built from `initial`.
    pub fn replay(initial: ReviewPayload, history: &[HistoryEntry]) -> Result<ReviewRecord> {
        let mut record = ReviewRecord::new(initial);
        for entry in history {
            if entry.version != record.version + 1 {
                return Err(record.conflict(format!(
                    "history jumps from version {} to {}",
                    record.version, entry.version
                )));
            }
            record.apply(&entry.actor, entry.timestamp_ms, entry.event.clone());
        }
        Ok(record)
    }
}
