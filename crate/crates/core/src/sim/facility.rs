//! Discrete-event model of a facility: queued jobs, slots on cloud, hpc and
//! grid providers, and the accounting ledger.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scenario::{ProviderSpec, SimScenario};
use crate::stdlib::{
    BudgetStatus, IdleJob, ProvisionRequest, Receipt, Requirements, ResourceClass, ResourceKind, ResourceState,
};

const MS_PER_HOUR: f64 = 3_600_000.0;

fn secs_to_ms(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Ledger {
    pub cloud_spend: f64,
    pub hpc_hours_used: f64,
    pub slot_hours: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SimEvents {
    pub jobs_released: u64,
    pub slots_ready: u64,
    pub jobs_started: u64,
    pub jobs_completed: u64,
    pub preemptions: u64,
    pub slots_retired: u64,
    pub budget_terminations: u64,
}

impl SimEvents {
    fn add(&mut self, o: &SimEvents) {
        self.jobs_released += o.jobs_released;
        self.slots_ready += o.slots_ready;
        self.jobs_started += o.jobs_started;
        self.jobs_completed += o.jobs_completed;
        self.preemptions += o.preemptions;
        self.slots_retired += o.slots_retired;
        self.budget_terminations += o.budget_terminations;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct JobCounts {
    pub total: u64,
    pub released: u64,
    pub queued: u64,
    pub running: u64,
    pub completed: u64,
    /// Times a running job lost its slot and went back to the queue.
    pub requeued: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum JobState {
    Queued,
    Running,
    Done,
}

#[derive(Debug, Clone)]
struct Job {
    requirements: Requirements,
    preferred: Vec<usize>,
    state: JobState,
    /// Queue position, reassigned on every (re)queue so stale per-class
    /// queue entries can be skipped.
    epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SlotState {
    Pending { ready_at: u64 },
    Idle { since: u64 },
    Busy { job: usize, done_at: u64 },
}

#[derive(Debug, Clone)]
struct Slot {
    class: usize,
    state: SlotState,
}

impl Slot {
    fn alive(&self) -> bool {
        !matches!(self.state, SlotState::Pending { .. })
    }
}

pub struct FacilitySim {
    scenario: SimScenario,
    class_index: BTreeMap<String, usize>,
    now: u64,
    idle_timeout: u64,
    rng: ChaCha8Rng,
    jobs: Vec<Job>,
    class_queues: Vec<VecDeque<(usize, u64)>>,
    next_wave: usize,
    queue_seq: u64,
    slots: BTreeMap<u64, Slot>,
    next_slot: u64,
    ledger: Ledger,
    peak: Vec<u64>,
    counts: JobCounts,
    totals: SimEvents,
    receipts: (u64, u64),
}

impl FacilitySim {
    pub fn new(scenario: SimScenario) -> Self {
        let class_index = scenario.providers.iter().enumerate().map(|(i, p)| (p.class_id.clone(), i)).collect();
        let n = scenario.providers.len();
        let mut waves: Vec<_> = scenario.job_waves.clone();
        waves.sort_by(|a, b| a.at.total_cmp(&b.at));
        let scenario = SimScenario { job_waves: waves, ..scenario };
        let mut sim = FacilitySim {
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            idle_timeout: secs_to_ms(scenario.idle_timeout),
            counts: JobCounts { total: scenario.total_jobs(), ..Default::default() },
            ledger: Ledger {
                slot_hours: scenario.providers.iter().map(|p| (p.class_id.clone(), 0.0)).collect(),
                ..Default::default()
            },
            scenario,
            class_index,
            now: 0,
            jobs: Vec::new(),
            class_queues: vec![VecDeque::new(); n],
            next_wave: 0,
            queue_seq: 0,
            slots: BTreeMap::new(),
            next_slot: 0,
            peak: vec![0; n],
            totals: SimEvents::default(),
            receipts: (0, 0),
        };
        let mut ev = SimEvents::default();
        sim.process_instant(&mut ev);
        sim.totals.add(&ev);
        sim
    }

    pub fn scenario(&self) -> &SimScenario {
        &self.scenario
    }

    pub fn now_ms(&self) -> u64 {
        self.now
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn counts(&self) -> JobCounts {
        self.counts
    }

    pub fn totals(&self) -> SimEvents {
        self.totals
    }

    pub fn funds_remaining(&self) -> f64 {
        (self.scenario.initial_funds - self.ledger.cloud_spend).max(0.0)
    }

    pub fn allocation_remaining(&self) -> f64 {
        (self.scenario.initial_allocation - self.ledger.hpc_hours_used).max(0.0)
    }

    /// Every wave released and every job finished.
    pub fn all_done(&self) -> bool {
        self.next_wave == self.scenario.job_waves.len() && self.counts.completed == self.counts.released
    }

    /// Each released job is in exactly one of queued, running, completed.
    pub fn conservation_holds(&self) -> bool {
        let c = self.counts;
        let states = self.jobs.iter().fold([0u64; 3], |mut acc, j| {
            acc[match j.state {
                JobState::Queued => 0,
                JobState::Running => 1,
                JobState::Done => 2,
            }] += 1;
            acc
        });
        c.released == c.queued + c.running + c.completed
            && states == [c.queued, c.running, c.completed]
            && c.released == self.jobs.len() as u64
    }

    pub fn peak_slots(&self) -> BTreeMap<String, u64> {
        self.scenario.providers.iter().zip(&self.peak).map(|(p, &n)| (p.class_id.clone(), n)).collect()
    }

    /// Slots that are up (idle or busy), per class.
    pub fn running_slots(&self) -> BTreeMap<String, u64> {
        let mut out: BTreeMap<String, u64> = self.scenario.providers.iter().map(|p| (p.class_id.clone(), 0)).collect();
        for s in self.slots.values().filter(|s| s.alive()) {
            *out.get_mut(&self.scenario.providers[s.class].class_id).expect("known class") += 1;
        }
        out
    }

    fn occupancy(&self, class: usize) -> u64 {
        self.slots.values().filter(|s| s.class == class).count() as u64
    }

    pub fn idle_jobs(&self) -> Vec<IdleJob> {
        let mut queued: Vec<(u64, &Job)> =
            self.jobs.iter().filter(|j| j.state == JobState::Queued).map(|j| (j.epoch, j)).collect();
        queued.sort_by_key(|(e, _)| *e);
        queued
            .into_iter()
            .map(|(_, j)| IdleJob {
                requirements: j.requirements.clone(),
                preferred_resources: j.preferred.iter().map(|&c| self.scenario.providers[c].class_id.clone()).collect(),
            })
            .collect()
    }

    pub fn resources(&self) -> Vec<ResourceClass> {
        self.scenario
            .providers
            .iter()
            .enumerate()
            .map(|(i, p)| ResourceClass {
                class_id: p.class_id.clone(),
                kind: p.kind,
                price_performance: p.price_performance,
                unit_cost: if p.kind == ResourceKind::Grid { 0.0 } else { p.unit_cost },
                capacity_limit: p.capacity,
                current_occupancy: self.occupancy(i),
                state: if p.up { ResourceState::Up } else { ResourceState::Down },
            })
            .collect()
    }

    pub fn budget(&self) -> BudgetStatus {
        BudgetStatus {
            cloud_funds_remaining: self.funds_remaining(),
            hpc_allocation_remaining: self.allocation_remaining(),
        }
    }

    /// Requests accepted and rejected so far.
    pub fn receipts(&self) -> (u64, u64) {
        self.receipts
    }

    /// Accept or reject a request as of the current simulated time.
    pub fn submit(&mut self, req: &ProvisionRequest) -> Receipt {
        let r = self.try_submit(req);
        if r.accepted {
            self.receipts.0 += 1;
        } else {
            self.receipts.1 += 1;
        }
        r
    }

    fn try_submit(&mut self, req: &ProvisionRequest) -> Receipt {
        let Some(&class) = self.class_index.get(&req.class_id) else {
            return Receipt::rejected(req, format!("unknown resource class `{}`", req.class_id));
        };
        let p = &self.scenario.providers[class];
        if !p.up {
            return Receipt::rejected(req, "resource is down");
        }
        if req.slots == 0 {
            return Receipt::rejected(req, "zero slots requested");
        }
        let headroom = p.capacity.saturating_sub(self.occupancy(class));
        if req.slots > headroom {
            return Receipt::rejected(req, format!("exceeds remaining capacity ({headroom} slots)"));
        }
        if p.kind == ResourceKind::Cloud && req.slots as f64 * p.unit_cost > self.funds_remaining() {
            return Receipt::rejected(req, "insufficient funds for one hour of the requested slots");
        }
        let ready_at = self.now + secs_to_ms(p.startup_latency);
        for _ in 0..req.slots {
            self.slots.insert(self.next_slot, Slot { class, state: SlotState::Pending { ready_at } });
            self.next_slot += 1;
        }
        let mut ev = SimEvents::default();
        self.process_instant(&mut ev);
        self.totals.add(&ev);
        Receipt::accepted(req)
    }

    pub fn step(&mut self, dt_secs: f64) -> SimEvents {
        self.advance_to(self.now + secs_to_ms(dt_secs))
    }

    /// Run every event up to and including `t` (milliseconds since start).
    pub fn advance_to(&mut self, t: u64) -> SimEvents {
        let mut ev = SimEvents::default();
        while self.now < t {
            let next = self.next_event_after().map_or(t, |e| e.min(t));
            self.accrue(next);
            self.preempt(next, &mut ev);
            self.now = next;
            self.process_instant(&mut ev);
        }
        self.totals.add(&ev);
        ev
    }

    fn next_event_after(&self) -> Option<u64> {
        let mut best: Option<u64> = None;
        let mut consider = |t: u64| {
            if t > self.now {
                best = Some(best.map_or(t, |b| b.min(t)));
            }
        };
        if let Some(w) = self.scenario.job_waves.get(self.next_wave) {
            consider(secs_to_ms(w.at));
        }
        for s in self.slots.values() {
            match s.state {
                SlotState::Pending { ready_at } => consider(ready_at),
                SlotState::Busy { done_at, .. } => consider(done_at),
                SlotState::Idle { since } => consider(since + self.idle_timeout),
            }
        }
        let (cloud_rate, hpc_rate) = self.burn_rates();
        if cloud_rate > 0.0 {
            consider(self.now + (self.funds_remaining() / cloud_rate * MS_PER_HOUR).ceil().max(1.0) as u64);
        }
        if hpc_rate > 0.0 {
            consider(self.now + (self.allocation_remaining() / hpc_rate * MS_PER_HOUR).ceil().max(1.0) as u64);
        }
        best
    }

    /// Currency per hour and allocation hours per hour at current occupancy.
    fn burn_rates(&self) -> (f64, f64) {
        let mut cloud = 0.0;
        let mut hpc = 0.0;
        for s in self.slots.values().filter(|s| s.alive()) {
            let p = &self.scenario.providers[s.class];
            match p.kind {
                ResourceKind::Cloud => cloud += p.unit_cost,
                ResourceKind::Hpc => hpc += p.unit_cost,
                ResourceKind::Grid => {}
            }
        }
        (cloud, hpc)
    }

    fn accrue(&mut self, until: u64) {
        let hours = (until - self.now) as f64 / MS_PER_HOUR;
        let mut per_class = vec![0u64; self.scenario.providers.len()];
        for s in self.slots.values().filter(|s| s.alive()) {
            per_class[s.class] += 1;
        }
        for (p, &n) in self.scenario.providers.iter().zip(&per_class) {
            if n == 0 {
                continue;
            }
            *self.ledger.slot_hours.get_mut(&p.class_id).expect("known class") += n as f64 * hours;
            let charge = n as f64 * p.unit_cost * hours;
            match p.kind {
                ResourceKind::Cloud => {
                    self.ledger.cloud_spend = (self.ledger.cloud_spend + charge).min(self.scenario.initial_funds)
                }
                ResourceKind::Hpc => {
                    self.ledger.hpc_hours_used =
                        (self.ledger.hpc_hours_used + charge).min(self.scenario.initial_allocation)
                }
                ResourceKind::Grid => {}
            }
        }
    }

    fn preempt(&mut self, until: u64, ev: &mut SimEvents) {
        let hours = (until - self.now) as f64 / MS_PER_HOUR;
        let victims: Vec<u64> = {
            let providers = &self.scenario.providers;
            let rng = &mut self.rng;
            self.slots
                .iter()
                .filter(|(_, s)| s.alive() && providers[s.class].preemption_rate > 0.0)
                .filter_map(|(&id, s)| {
                    let q = 1.0 - (1.0 - providers[s.class].preemption_rate).powf(hours);
                    (rng.random::<f64>() < q).then_some(id)
                })
                .collect()
        };
        for id in victims {
            self.kill_slot(id);
            ev.preemptions += 1;
        }
    }

    /// Remove a slot; a job it was running goes back to the queue.
    fn kill_slot(&mut self, id: u64) {
        if let Some(Slot { state: SlotState::Busy { job, .. }, .. }) = self.slots.remove(&id) {
            self.counts.running -= 1;
            self.counts.requeued += 1;
            self.enqueue(job);
        }
    }

    fn enqueue(&mut self, job: usize) {
        let j = &mut self.jobs[job];
        j.state = JobState::Queued;
        j.epoch = self.queue_seq;
        self.queue_seq += 1;
        let epoch = j.epoch;
        for &c in &j.preferred {
            self.class_queues[c].push_back((job, epoch));
        }
        self.counts.queued += 1;
    }

    fn release_waves(&mut self, ev: &mut SimEvents) {
        while let Some(w) = self.scenario.job_waves.get(self.next_wave) {
            if secs_to_ms(w.at) > self.now {
                break;
            }
            let preferred: Vec<usize> = w.preferred_resources.iter().map(|c| self.class_index[c]).collect();
            for _ in 0..w.count {
                let idx = self.jobs.len();
                let epoch = self.queue_seq;
                self.queue_seq += 1;
                self.jobs.push(Job {
                    requirements: w.requirements.clone(),
                    preferred: preferred.clone(),
                    state: JobState::Queued,
                    epoch,
                });
                for &c in &preferred {
                    self.class_queues[c].push_back((idx, epoch));
                }
            }
            self.counts.released += w.count;
            self.counts.queued += w.count;
            ev.jobs_released += w.count;
            self.next_wave += 1;
        }
    }

    /// Settle everything due at the current instant.
    fn process_instant(&mut self, ev: &mut SimEvents) {
        let now = self.now;
        self.release_waves(ev);

        let mut finished = Vec::new();
        for s in self.slots.values_mut() {
            match s.state {
                SlotState::Pending { ready_at } if ready_at <= now => {
                    s.state = SlotState::Idle { since: now };
                    ev.slots_ready += 1;
                }
                SlotState::Busy { job, done_at } if done_at <= now => {
                    s.state = SlotState::Idle { since: now };
                    finished.push(job);
                }
                _ => {}
            }
        }
        for job in finished {
            self.jobs[job].state = JobState::Done;
            self.counts.running -= 1;
            self.counts.completed += 1;
            ev.jobs_completed += 1;
        }

        self.enforce_budget(ev);
        self.match_slots(ev);

        let expired: Vec<u64> = self
            .slots
            .iter()
            .filter(|(_, s)| matches!(s.state, SlotState::Idle { since } if since + self.idle_timeout <= now))
            .map(|(&id, _)| id)
            .collect();
        for id in expired {
            self.slots.remove(&id);
            ev.slots_retired += 1;
        }

        for (class, n) in self.alive_per_class().into_iter().enumerate() {
            self.peak[class] = self.peak[class].max(n);
        }
    }

    fn alive_per_class(&self) -> Vec<u64> {
        let mut v = vec![0; self.scenario.providers.len()];
        for s in self.slots.values().filter(|s| s.alive()) {
            v[s.class] += 1;
        }
        v
    }

    /// With funds or allocation used up, every slot of that kind goes away.
    fn enforce_budget(&mut self, ev: &mut SimEvents) {
        const EPS: f64 = 1e-9;
        let broke = |p: &ProviderSpec, funds: f64, alloc: f64| match p.kind {
            ResourceKind::Cloud => p.unit_cost > 0.0 && funds <= EPS,
            ResourceKind::Hpc => p.unit_cost > 0.0 && alloc <= EPS,
            ResourceKind::Grid => false,
        };
        let (funds, alloc) = (self.funds_remaining(), self.allocation_remaining());
        let doomed: Vec<u64> = self
            .slots
            .iter()
            .filter(|(_, s)| broke(&self.scenario.providers[s.class], funds, alloc))
            .map(|(&id, _)| id)
            .collect();
        for id in doomed {
            self.kill_slot(id);
            ev.budget_terminations += 1;
        }
    }

    fn match_slots(&mut self, ev: &mut SimEvents) {
        let idle: Vec<u64> =
            self.slots.iter().filter(|(_, s)| matches!(s.state, SlotState::Idle { .. })).map(|(&id, _)| id).collect();
        for id in idle {
            let class = self.slots[&id].class;
            let Some(job) = self.pop_job(class) else { continue };
            let wall = (self.jobs[job].requirements.wall_hours * MS_PER_HOUR).round() as u64;
            self.jobs[job].state = JobState::Running;
            self.counts.queued -= 1;
            self.counts.running += 1;
            ev.jobs_started += 1;
            self.slots.get_mut(&id).expect("idle slot").state =
                SlotState::Busy { job, done_at: self.now + wall.max(1) };
        }
    }

    fn pop_job(&mut self, class: usize) -> Option<usize> {
        while let Some((job, epoch)) = self.class_queues[class].pop_front() {
            let j = &self.jobs[job];
            if j.state == JobState::Queued && j.epoch == epoch {
                return Some(job);
            }
        }
        None
    }
}
