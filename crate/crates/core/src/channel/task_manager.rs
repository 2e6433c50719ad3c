//! Threads that keep one channel running: a loop per source or proxy and a
//! cycle executor. Stopping one task manager leaves the others untouched.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use super::runner::{Channel, ChannelState, ChannelStatus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("cannot {command} channel `{channel}` while it is {state}")]
    InvalidTransition { channel: String, command: &'static str, state: ChannelState },
}

#[derive(Default)]
struct StopSignal {
    stopped: Mutex<bool>,
    cv: Condvar,
}

impl StopSignal {
    fn set(&self) {
        *self.stopped.lock() = true;
        self.cv.notify_all();
    }

    fn is_set(&self) -> bool {
        *self.stopped.lock()
    }

    /// Sleep up to `d`; true if stop was requested.
    fn wait(&self, d: Duration) -> bool {
        let deadline = Instant::now() + d;
        let mut s = self.stopped.lock();
        while !*s {
            if self.cv.wait_until(&mut s, deadline).timed_out() {
                break;
            }
        }
        *s
    }
}

struct Running {
    stop: Arc<StopSignal>,
    done: mpsc::Receiver<()>,
    handles: Vec<JoinHandle<()>>,
}

pub struct TaskManager {
    channel: Arc<Channel>,
    stop_grace: Duration,
    running: Mutex<Option<Running>>,
}

impl TaskManager {
    pub fn new(channel: Arc<Channel>, stop_grace: Duration) -> Self {
        TaskManager { channel, stop_grace, running: Mutex::new(None) }
    }

    pub fn channel(&self) -> &Arc<Channel> {
        &self.channel
    }

    pub fn is_running(&self) -> bool {
        self.running.lock().is_some()
    }

    fn invalid(&self, command: &'static str) -> LifecycleError {
        LifecycleError::InvalidTransition {
            channel: self.channel.id().to_string(),
            command,
            state: self.channel.state(),
        }
    }

    /// Launch the source loops and the cycle executor. The channel enters boot.
    pub fn start(&self) -> Result<ChannelState, LifecycleError> {
        let mut running = self.running.lock();
        if running.is_some() {
            return Err(self.invalid("start"));
        }
        if !matches!(self.channel.state(), ChannelState::Boot | ChannelState::Stopped | ChannelState::Failed) {
            return Err(self.invalid("start"));
        }
        self.channel.reset_for_start();
        let stop = Arc::new(StopSignal::default());
        let (tx, done) = mpsc::channel();
        let mut handles = Vec::new();
        for (index, (name, period)) in self.channel.feeds().into_iter().enumerate() {
            let (channel, stop, tx) = (self.channel.clone(), stop.clone(), tx.clone());
            let h = thread::Builder::new()
                .name(format!("{}:{}", channel.id(), name))
                .spawn(move || {
                    loop {
                        channel.run_feed(index);
                        channel.check_boot_deadline();
                        if stop.wait(period) {
                            break;
                        }
                    }
                    let _ = tx.send(());
                })
                .expect("spawn source loop");
            handles.push(h);
        }
        let (channel, stop2) = (self.channel.clone(), stop.clone());
        let h = thread::Builder::new()
            .name(format!("{}:cycle", channel.id()))
            .spawn(move || {
                while !stop2.is_set() {
                    channel.trigger_cell().wait(Duration::from_millis(100));
                    channel.poll();
                    channel.check_boot_deadline();
                }
                let _ = tx.send(());
            })
            .expect("spawn cycle executor");
        handles.push(h);
        *running = Some(Running { stop, done, handles });
        Ok(self.channel.state())
    }

    /// Let an in-flight cycle finish (up to the grace period), halt the
    /// loops and close the channel's space.
    pub fn stop(&self) -> Result<ChannelState, LifecycleError> {
        let mut running = self.running.lock();
        let Some(run) = running.take() else {
            return Err(self.invalid("stop"));
        };
        let deadline = Instant::now() + self.stop_grace;
        self.channel.begin_stop();
        run.stop.set();
        if !self.channel.trigger_cell().wait_idle(self.stop_grace) {
            log::warn!(target: "decision_engine", "{} - stop_grace_exceeded cycle still running", self.channel.id());
        }
        let mut finished = 0;
        while finished < run.handles.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            match run.done.recv_timeout(left) {
                Ok(()) => finished += 1,
                Err(_) => break,
            }
        }
        if finished == run.handles.len() {
            for h in run.handles {
                let _ = h.join();
            }
        } else {
            log::warn!(
                target: "decision_engine",
                "{} - stop_grace_exceeded {} module thread(s) abandoned",
                self.channel.id(),
                run.handles.len() - finished
            );
        }
        self.channel.finish_stop();
        Ok(self.channel.state())
    }

    pub fn status(&self) -> ChannelStatus {
        self.channel.status()
    }
}

impl Drop for TaskManager {
    fn drop(&mut self) {
        if self.is_running() {
            let _ = self.stop();
        }
    }
}
