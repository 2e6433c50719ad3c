//! Per-channel trigger cell.
//!
//! Sources call [`TriggerCell::trigger`]; the cycle executor takes work with
//! [`TriggerCell::try_begin`] and hands it back with [`TriggerCell::finish`].
//! A trigger that arrives while a cycle is in flight only sets the dirty flag,
//! and a dirty flag turns into exactly one pending follow-up when the cycle
//! finishes, however many triggers arrived.

use std::time::Duration;

use parking_lot::{Condvar, Mutex};

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct TriggerState {
    pub pending: bool,
    pub in_flight: bool,
    pub dirty: bool,
    pub shutdown: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerEffect {
    /// A cycle is now pending (or already was).
    Pending,
    /// A cycle is in flight; a follow-up was requested.
    Coalesced,
    /// The cell is shut down.
    Ignored,
}

#[derive(Debug, Default)]
pub struct TriggerCell {
    state: Mutex<TriggerState>,
    cv: Condvar,
}

impl TriggerCell {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn trigger(&self) -> TriggerEffect {
        let mut st = self.state.lock();
        if st.shutdown {
            return TriggerEffect::Ignored;
        }
        if st.in_flight {
            st.dirty = true;
            TriggerEffect::Coalesced
        } else {
            st.pending = true;
            self.cv.notify_all();
            TriggerEffect::Pending
        }
    }

    /// Take a pending trigger and mark a cycle in flight. Atomic
    /// test-and-set: at most one caller wins.
    pub fn try_begin(&self) -> bool {
        let mut st = self.state.lock();
        if st.shutdown || st.in_flight || !st.pending {
            return false;
        }
        st.pending = false;
        st.in_flight = true;
        true
    }

    /// Mark a cycle in flight whether or not one was pending.
    pub fn begin_now(&self) -> bool {
        let mut st = self.state.lock();
        if st.in_flight {
            return false;
        }
        st.pending = false;
        st.in_flight = true;
        true
    }

    /// End the in-flight cycle. Returns true when triggers arrived meanwhile,
    /// in which case one follow-up is now pending.
    pub fn finish(&self) -> bool {
        let mut st = self.state.lock();
        st.in_flight = false;
        let follow_up = st.dirty && !st.shutdown;
        st.dirty = false;
        if follow_up {
            st.pending = true;
        }
        self.cv.notify_all();
        follow_up
    }

    /// Block until a trigger is pending, the cell shuts down, or `timeout`
    /// passes. Returns whether work is pending.
    pub fn wait(&self, timeout: Duration) -> bool {
        let mut st = self.state.lock();
        if !st.pending && !st.shutdown {
            self.cv.wait_for(&mut st, timeout);
        }
        st.pending && !st.in_flight && !st.shutdown
    }

    /// Block until no cycle is in flight or `timeout` passes. Returns true if
    /// the cell went idle.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        let mut st = self.state.lock();
        while st.in_flight {
            if self.cv.wait_until(&mut st, deadline).timed_out() {
                return !st.in_flight;
            }
        }
        true
    }

    pub fn shutdown(&self) {
        let mut st = self.state.lock();
        st.shutdown = true;
        st.pending = false;
        self.cv.notify_all();
    }

    pub fn reset(&self) {
        *self.state.lock() = TriggerState::default();
    }

    pub fn snapshot(&self) -> TriggerState {
        *self.state.lock()
    }
}
