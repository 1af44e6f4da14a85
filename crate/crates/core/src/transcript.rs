//! Session transcript and the human feedback inbox.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

pub const HUMAN: &str = "human";

/// One utterance: an agent's tool step or analysis, or a human note.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub seq: u64,
    pub speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    pub analysis: String,
    /// Collaboration round the record belongs to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
}

impl ChatRecord {
    pub fn analysis(speaker: impl Into<String>, analysis: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            analysis: analysis.into(),
            ..Default::default()
        }
    }

    pub fn is_human(&self) -> bool {
        self.speaker == HUMAN
    }

    pub fn has_tool_action(&self) -> bool {
        self.action.as_deref().is_some_and(|a| !a.trim().is_empty())
    }
}

#[derive(Default)]
struct Inner {
    records: Vec<ChatRecord>,
    inbox: VecDeque<String>,
    next_seq: u64,
    awaiting: bool,
    closed: bool,
}

/// Ordered transcript plus the feedback inbox. API handlers write feedback
/// while the session loop reads; everything goes through one mutex.
#[derive(Default)]
pub struct SessionLog {
    inner: Mutex<Inner>,
    arrived: Condvar,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("session log poisoned")
    }

    /// Appends with the next seq (starting at 1) and returns the stored copy.
    pub fn append(&self, mut rec: ChatRecord) -> ChatRecord {
        let mut g = self.lock();
        g.next_seq += 1;
        rec.seq = g.next_seq;
        g.records.push(rec.clone());
        rec
    }

    /// Records a human note in the transcript right away and queues it for
    /// the engine to pick up before its next scheduling step.
    pub fn submit_feedback(&self, text: &str) -> ChatRecord {
        let rec = {
            let mut g = self.lock();
            g.next_seq += 1;
            let rec = ChatRecord {
                seq: g.next_seq,
                ..ChatRecord::analysis(HUMAN, text)
            };
            g.records.push(rec.clone());
            g.inbox.push_back(text.to_string());
            rec
        };
        self.arrived.notify_all();
        rec
    }

    pub fn drain_feedback(&self) -> Vec<String> {
        self.lock().inbox.drain(..).collect()
    }

    /// Blocks until feedback arrives or `timeout` passes, flagging the
    /// session as awaiting meanwhile.
    pub fn wait_for_feedback(&self, timeout: Duration) -> Vec<String> {
        let deadline = Instant::now() + timeout;
        let mut g = self.lock();
        g.awaiting = true;
        while g.inbox.is_empty() && !g.closed {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            g = self.arrived.wait_timeout(g, deadline - now).expect("session log poisoned").0;
        }
        g.awaiting = false;
        g.inbox.drain(..).collect()
    }

    pub fn is_awaiting(&self) -> bool {
        self.lock().awaiting
    }

    /// Wakes any waiter for good; used on shutdown.
    pub fn close(&self) {
        self.lock().closed = true;
        self.arrived.notify_all();
    }

    pub fn records(&self) -> Vec<ChatRecord> {
        self.lock().records.clone()
    }

    /// Records with seq strictly greater than `seq`, in order.
    pub fn since(&self, seq: u64) -> Vec<ChatRecord> {
        let g = self.lock();
        let start = g.records.partition_point(|r| r.seq <= seq);
        g.records[start..].to_vec()
    }

    pub fn last_seq(&self) -> u64 {
        self.lock().next_seq
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn seqs_increase_and_since_is_exclusive() {
        let log = SessionLog::new();
        for i in 0..5 {
            log.append(ChatRecord::analysis("a", format!("r{i}")));
        }
        let tail = log.since(2);
        assert_eq!(tail.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert!(log.since(5).is_empty());
        assert_eq!(log.since(0).len(), 5);
    }

    #[test]
    fn feedback_is_recorded_and_queued() {
        let log = SessionLog::new();
        let r = log.submit_feedback("check memory");
        assert_eq!(r.speaker, HUMAN);
        assert_eq!(log.records().len(), 1);
        assert_eq!(log.drain_feedback(), vec!["check memory"]);
        assert!(log.drain_feedback().is_empty());
    }

    #[test]
    fn waiting_wakes_on_feedback() {
        let log = Arc::new(SessionLog::new());
        let l2 = log.clone();
        let h = std::thread::spawn(move || l2.wait_for_feedback(Duration::from_secs(10)));
        while !log.is_awaiting() {
            std::thread::yield_now();
        }
        log.submit_feedback("go on");
        assert_eq!(h.join().unwrap(), vec!["go on"]);
        assert!(!log.is_awaiting());
        assert!(log.wait_for_feedback(Duration::from_millis(1)).is_empty());
    }
}
