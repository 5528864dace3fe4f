//! Per-NS FIFO command queue with bounded retries and idempotent enqueue.
//!
//! At most one task per NS runs at a time. A failed task goes back to the
//! head of its NS queue after an exponential backoff, so per-NS completion
//! order always matches enqueue order.

use std::collections::{BTreeMap, VecDeque};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infra::{Command, Outcome};
use crate::SimTime;

pub type TaskId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: TaskId,
    pub ns_id: String,
    pub command: Command,
    pub state: TaskState,
    pub attempts: u32,
    pub max_attempts: u32,
    pub idempotency_key: String,
    pub enqueued_at: SimTime,
    pub started_at: Option<SimTime>,
    pub finished_at: Option<SimTime>,
    /// Earliest dispatch time; moves forward on retry backoff.
    pub ready_at: SimTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_s: f64,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_s: 2.0,
            backoff_factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before the next attempt after `attempts` failures.
    pub fn backoff(&self, attempts: u32) -> f64 {
        self.backoff_base_s * self.backoff_factor.powi(attempts.saturating_sub(1) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Completion {
    Done(Outcome),
    Retry { attempts: u32, ready_at: SimTime },
    Failed(Outcome),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("task {0} not found")]
    UnknownTask(TaskId),
    #[error("task {0} is not running")]
    IllegalState(TaskId),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    tasks: BTreeMap<TaskId, Task>,
    pending: BTreeMap<String, VecDeque<TaskId>>,
    running: BTreeMap<String, TaskId>,
    keys: BTreeMap<String, TaskId>,
    next_id: TaskId,
    /// Round-robin cursor: the NS served first on the previous dispatch.
    cursor: Option<String>,
    policy: RetryPolicy,
}

/// Safe for concurrent `enqueue` against a single dispatcher.
#[derive(Debug, Default)]
pub struct TaskQueue {
    state: Mutex<State>,
}

impl Clone for TaskQueue {
    fn clone(&self) -> Self {
        Self {
            state: Mutex::new(self.state.lock().clone()),
        }
    }
}

impl Serialize for TaskQueue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.state.lock().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TaskQueue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        State::deserialize(d).map(|state| Self {
            state: Mutex::new(state),
        })
    }
}

impl TaskQueue {
    pub fn new(policy: RetryPolicy) -> Self {
        Self {
            state: Mutex::new(State {
                next_id: 1,
                policy,
                ..State::default()
            }),
        }
    }

    pub fn policy(&self) -> RetryPolicy {
        self.state.lock().policy
    }

    /// Enqueue; a known idempotency key returns the existing task id.
    pub fn enqueue(
        &self,
        ns_id: &str,
        mut command: Command,
        idempotency_key: &str,
        now: SimTime,
    ) -> TaskId {
        let mut s = self.state.lock();
        if let Some(id) = s.keys.get(idempotency_key) {
            return *id;
        }
        let id = s.next_id.max(1);
        s.next_id = id + 1;
        command.command_id = id;
        let max_attempts = s.policy.max_attempts;
        s.tasks.insert(
            id,
            Task {
                task_id: id,
                ns_id: ns_id.to_string(),
                command,
                state: TaskState::Queued,
                attempts: 0,
                max_attempts,
                idempotency_key: idempotency_key.to_string(),
                enqueued_at: now,
                started_at: None,
                finished_at: None,
                ready_at: now,
                last_error: None,
            },
        );
        s.keys.insert(idempotency_key.to_string(), id);
        s.pending
            .entry(ns_id.to_string())
            .or_default()
            .push_back(id);
        id
    }

    /// Start the head task of every idle NS whose head is ready at `now`.
    /// NSs are visited round-robin starting after the last served one.
    pub fn dispatch(&self, now: SimTime) -> Vec<Task> {
        let mut s = self.state.lock();
        let mut ns_ids: Vec<String> = s
            .pending
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(k, _)| k.clone())
            .collect();
        if let Some(c) = &s.cursor {
            let split = ns_ids.partition_point(|k| k <= c);
            ns_ids.rotate_left(split);
        }
        let mut started = Vec::new();
        for ns in ns_ids {
            if s.running.contains_key(&ns) {
                continue;
            }
            let head = s.pending[&ns][0];
            if s.tasks[&head].ready_at > now {
                continue;
            }
            s.pending.get_mut(&ns).unwrap().pop_front();
            s.running.insert(ns.clone(), head);
            let task = s.tasks.get_mut(&head).unwrap();
            task.state = TaskState::Running;
            task.attempts += 1;
            task.started_at = Some(now);
            started.push(task.clone());
            s.cursor = Some(ns);
        }
        started
    }

    /// Earliest `ready_at` among heads of idle NS queues.
    pub fn next_ready_at(&self) -> Option<SimTime> {
        let s = self.state.lock();
        s.pending
            .iter()
            .filter(|(ns, q)| !q.is_empty() && !s.running.contains_key(*ns))
            .map(|(_, q)| s.tasks[&q[0]].ready_at)
            .min_by(|a, b| a.total_cmp(b))
    }

    pub fn complete(&self, task_id: TaskId, outcome: Outcome) -> Result<Completion, QueueError> {
        let mut s = self.state.lock();
        let policy = s.policy;
        let task = s
            .tasks
            .get_mut(&task_id)
            .ok_or(QueueError::UnknownTask(task_id))?;
        if task.state != TaskState::Running {
            return Err(QueueError::IllegalState(task_id));
        }
        let ns = task.ns_id.clone();
        let at = outcome.completed_at;
        let completion = if outcome.is_done() {
            task.state = TaskState::Done;
            task.finished_at = Some(at);
            Completion::Done(outcome)
        } else if task.attempts >= task.max_attempts {
            task.state = TaskState::Failed;
            task.finished_at = Some(at);
            task.last_error = Some(outcome.detail.clone());
            Completion::Failed(outcome)
        } else {
            task.state = TaskState::Queued;
            task.ready_at = at + policy.backoff(task.attempts);
            task.last_error = Some(outcome.detail.clone());
            let retry = Completion::Retry {
                attempts: task.attempts,
                ready_at: task.ready_at,
            };
            s.pending.entry(ns.clone()).or_default().push_front(task_id);
            retry
        };
        s.running.remove(&ns);
        Ok(completion)
    }

    /// Cancel every queued task of `ns_id`; a running task is left alone.
    pub fn cancel_pending(&self, ns_id: &str, now: SimTime) -> usize {
        let mut s = self.state.lock();
        let ids: Vec<TaskId> = s
            .pending
            .get_mut(ns_id)
            .map(|q| q.drain(..).collect())
            .unwrap_or_default();
        for id in &ids {
            let t = s.tasks.get_mut(id).unwrap();
            t.state = TaskState::Cancelled;
            t.finished_at = Some(now);
        }
        ids.len()
    }

    pub fn running_for(&self, ns_id: &str) -> Option<TaskId> {
        self.state.lock().running.get(ns_id).copied()
    }

    pub fn pending_len(&self, ns_id: &str) -> usize {
        self.state
            .lock()
            .pending
            .get(ns_id)
            .map_or(0, VecDeque::len)
    }

    pub fn is_idle(&self, ns_id: &str) -> bool {
        self.running_for(ns_id).is_none() && self.pending_len(ns_id) == 0
    }

    pub fn get(&self, task_id: TaskId) -> Option<Task> {
        self.state.lock().tasks.get(&task_id).cloned()
    }

    pub fn tasks(&self, ns_id: Option<&str>) -> Vec<Task> {
        self.state
            .lock()
            .tasks
            .values()
            .filter(|t| ns_id.is_none_or(|ns| t.ns_id == ns))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.state.lock().tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop queued and running work, keeping finished history. Used on
    /// restart, where plans are rebuilt from NS state.
    pub fn clear_in_flight(&self, now: SimTime) {
        let mut s = self.state.lock();
        let live: Vec<TaskId> = s
            .tasks
            .values()
            .filter(|t| matches!(t.state, TaskState::Queued | TaskState::Running))
            .map(|t| t.task_id)
            .collect();
        for id in live {
            let t = s.tasks.get_mut(&id).unwrap();
            t.state = TaskState::Cancelled;
            t.finished_at = Some(now);
        }
        s.pending.clear();
        s.running.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infra::{Operation, OutcomeStatus};

    fn cmd(vnf: &str) -> Command {
        Command {
            command_id: 0,
            ns_id: String::new(),
            op: Operation::BootVnf { vnf_id: vnf.into() },
            duration_s: 1.0,
        }
    }

    fn done(id: TaskId, at: f64) -> Outcome {
        Outcome {
            command_id: id,
            status: OutcomeStatus::Done,
            detail: String::new(),
            completed_at: at,
            carrier: None,
        }
    }

    #[test]
    fn fifo_within_ns() {
        let q = TaskQueue::new(RetryPolicy::default());
        let a = q.enqueue("ns", cmd("a"), "a", 0.0);
        let b = q.enqueue("ns", cmd("b"), "b", 0.0);
        let started = q.dispatch(0.0);
        assert_eq!(
            started.iter().map(|t| t.task_id).collect::<Vec<_>>(),
            vec![a]
        );
        assert!(q.dispatch(0.0).is_empty());
        q.complete(a, done(a, 1.0)).unwrap();
        assert_eq!(q.dispatch(1.0)[0].task_id, b);
    }

    #[test]
    fn idempotent_enqueue() {
        let q = TaskQueue::new(RetryPolicy::default());
        let a = q.enqueue("ns", cmd("a"), "k", 0.0);
        let b = q.enqueue("ns", cmd("a"), "k", 0.0);
        assert_eq!(a, b);
        assert_eq!(q.pending_len("ns"), 1);
    }

    #[test]
    fn independent_namespaces_both_start() {
        let q = TaskQueue::new(RetryPolicy::default());
        q.enqueue("ns-1", cmd("a"), "a", 0.0);
        q.enqueue("ns-2", cmd("b"), "b", 0.0);
        assert_eq!(q.dispatch(0.0).len(), 2);
        assert!(TaskQueue::new(RetryPolicy::default())
            .dispatch(0.0)
            .is_empty());
    }

    #[test]
    fn retries_back_off_then_fail() {
        let q = TaskQueue::new(RetryPolicy::default());
        let id = q.enqueue("ns", cmd("a"), "a", 0.0);
        let mut now = 0.0;
        let mut delays = Vec::new();
        loop {
            let started = q.dispatch(now);
            assert_eq!(started.len(), 1);
            let c = q
                .complete(id, Outcome::failed(id, now + 1.0, "boom"))
                .unwrap();
            match c {
                Completion::Retry { ready_at, .. } => {
                    delays.push(ready_at - (now + 1.0));
                    assert!(q.dispatch(ready_at - 0.5).is_empty());
                    now = ready_at;
                }
                Completion::Failed(_) => break,
                Completion::Done(_) => unreachable!(),
            }
        }
        assert_eq!(delays, vec![2.0, 4.0]);
        let t = q.get(id).unwrap();
        assert_eq!(t.state, TaskState::Failed);
        assert_eq!(t.attempts, 3);
    }

    #[test]
    fn complete_requires_running() {
        let q = TaskQueue::new(RetryPolicy::default());
        let id = q.enqueue("ns", cmd("a"), "a", 0.0);
        assert_eq!(
            q.complete(id, done(id, 1.0)),
            Err(QueueError::IllegalState(id))
        );
        assert_eq!(
            q.complete(99, done(99, 1.0)),
            Err(QueueError::UnknownTask(99))
        );
    }

    #[test]
    fn cancel_leaves_running_task() {
        let q = TaskQueue::new(RetryPolicy::default());
        let a = q.enqueue("ns", cmd("a"), "a", 0.0);
        q.enqueue("ns", cmd("b"), "b", 0.0);
        q.enqueue("ns", cmd("c"), "c", 0.0);
        q.dispatch(0.0);
        assert_eq!(q.cancel_pending("ns", 0.0), 2);
        assert_eq!(q.cancel_pending("ns", 0.0), 0);
        assert_eq!(q.get(a).unwrap().state, TaskState::Running);
        q.complete(a, done(a, 1.0)).unwrap();
        assert!(q.dispatch(1.0).is_empty());
    }

    #[test]
    fn round_robin_rotates() {
        let q = TaskQueue::new(RetryPolicy::default());
        for ns in ["a", "b", "c"] {
            q.enqueue(ns, cmd(ns), ns, 0.0);
        }
        let order: Vec<String> = q.dispatch(0.0).into_iter().map(|t| t.ns_id).collect();
        assert_eq!(order, vec!["a", "b", "c"]);
        for t in q.tasks(None) {
            q.complete(t.task_id, done(t.task_id, 1.0)).unwrap();
        }
        q.enqueue("a", cmd("a2"), "a2", 1.0);
        q.enqueue("c", cmd("c2"), "c2", 1.0);
        let order: Vec<String> = q.dispatch(1.0).into_iter().map(|t| t.ns_id).collect();
        // cursor was left at "c", so "a" is next in rotation
        assert_eq!(order, vec!["a", "c"]);
    }
}
