//! The advice source that answers from a human trainer's command channel.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bpa_core::advisor::{AdviceSource, DecisionContext};
use bpa_core::agent::{Provenance, StepHook, StepRecord};
use bpa_core::env::Environment;
use bpa_core::rng::StreamRng;
use tokio::sync::{broadcast, oneshot};

use super::protocol::{Counters, LastStep, RunStatus, ServerEnvelope, ServerMessage, StateFrame};
use super::SharedInfo;

/// A request from a connected client, answered exactly once.
#[derive(Debug)]
pub enum Command {
    Advice {
        step: u64,
        action: usize,
        reply: oneshot::Sender<ServerMessage>,
    },
    Pause(oneshot::Sender<ServerMessage>),
    Resume(oneshot::Sender<ServerMessage>),
    Stop(oneshot::Sender<ServerMessage>),
}

#[derive(Debug, Clone, Copy)]
pub struct Pacing {
    /// Longest wait for advice at each decision.
    pub decision_interval: Duration,
    /// Pause after this long without any viewer.
    pub idle_pause: Duration,
}

/// Step bookkeeping shared between the advice source and the step hook.
#[derive(Debug, Default)]
pub struct Progress {
    last: Option<LastStep>,
    counters: Option<Counters>,
    episode_reward: f64,
}

pub struct ProgressHook(pub Rc<RefCell<Progress>>);

impl StepHook for ProgressHook {
    fn on_step(&mut self, r: &StepRecord<'_>) {
        let mut p = self.0.borrow_mut();
        if r.at.step == 0 {
            p.episode_reward = 0.0;
        }
        p.episode_reward += r.outcome.reward;
        p.last = Some(LastStep {
            step: r.at.global_step,
            action: r.decision.action,
            provenance: r.decision.provenance,
            cluster: r.decision.cluster,
            reward: r.outcome.reward,
        });
        let c = p.counters.get_or_insert(Counters {
            advised: 0,
            reused: 0,
            random: 0,
            greedy: 0,
        });
        match r.decision.provenance {
            Provenance::Advised => c.advised += 1,
            Provenance::Reused => c.reused += 1,
            Provenance::Random => c.random += 1,
            Provenance::Greedy => c.greedy += 1,
        }
    }
}

pub struct LiveAdvisor {
    pub session: u64,
    pub commands: flume::Receiver<Command>,
    pub events: broadcast::Sender<String>,
    pub info: SharedInfo,
    /// Most recent state frame, for viewers that connect mid-decision.
    pub latest: Arc<Mutex<Option<String>>>,
    pub pacing: Pacing,
    pub progress: Rc<RefCell<Progress>>,
    paused: bool,
    stop: bool,
    /// Accepted while paused, executed on resume.
    held: Option<usize>,
    idle_since: Option<Instant>,
}

enum Wait {
    Advice(usize),
    Timeout,
}

impl LiveAdvisor {
    pub fn new(
        session: u64,
        commands: flume::Receiver<Command>,
        events: broadcast::Sender<String>,
        info: SharedInfo,
        latest: Arc<Mutex<Option<String>>>,
        pacing: Pacing,
        progress: Rc<RefCell<Progress>>,
    ) -> Self {
        Self {
            session,
            commands,
            events,
            info,
            latest,
            pacing,
            progress,
            paused: false,
            stop: false,
            held: None,
            idle_since: None,
        }
    }

    fn status(&self) -> RunStatus {
        if self.paused {
            RunStatus::Paused
        } else {
            RunStatus::Running
        }
    }

    pub fn publish(&self, message: ServerMessage) {
        let state = matches!(message, ServerMessage::State(_));
        let text = ServerEnvelope::new(self.session, message).to_json();
        if state {
            *self.latest.lock().unwrap() = Some(text.clone());
        }
        // No viewer is not an error; frames are simply not seen.
        let _ = self.events.send(text);
    }

    fn set_paused(&mut self, paused: bool, reason: &str) {
        if self.paused != paused {
            self.paused = paused;
            self.info.lock().unwrap().status = self.status();
            self.publish(ServerMessage::Status {
                status: self.status(),
                reason: reason.into(),
            });
        }
    }

    fn check_idle(&mut self) {
        if self.events.receiver_count() > 0 {
            self.idle_since = None;
            return;
        }
        let since = *self.idle_since.get_or_insert_with(Instant::now);
        if !self.paused && since.elapsed() >= self.pacing.idle_pause {
            self.set_paused(true, "idle");
        }
    }

    fn ack(&self, command: &str, step: Option<u64>, accepted: bool, stale: bool) -> ServerMessage {
        ServerMessage::Ack {
            command: command.into(),
            step,
            accepted,
            stale,
            status: self.status(),
        }
    }

    /// Handles one command; returns advice to execute now, if any.
    fn handle(&mut self, cmd: Command, pending: u64, actions: usize) -> Option<usize> {
        match cmd {
            Command::Advice {
                step,
                action,
                reply,
            } => {
                if action >= actions {
                    let _ = reply.send(ServerMessage::error(format!(
                        "action {action} out of range (environment has {actions})"
                    )));
                    return None;
                }
                let current = step == pending && self.held.is_none() && !self.stop;
                let _ = reply.send(self.ack("advice", Some(step), current, !current));
                if !current {
                    return None;
                }
                if self.paused {
                    self.held = Some(action);
                    None
                } else {
                    Some(action)
                }
            }
            Command::Pause(reply) => {
                self.set_paused(true, "requested");
                let _ = reply.send(self.ack("pause", None, true, false));
                None
            }
            Command::Resume(reply) => {
                self.idle_since = None;
                self.set_paused(false, "requested");
                let _ = reply.send(self.ack("resume", None, true, false));
                self.held.take()
            }
            Command::Stop(reply) => {
                self.stop = true;
                self.paused = false;
                let _ = reply.send(self.ack("stop", None, true, false));
                None
            }
        }
    }

    fn wait(&mut self, pending: u64, actions: usize) -> Wait {
        let mut deadline = Instant::now() + self.pacing.decision_interval;
        loop {
            if self.stop {
                return Wait::Timeout;
            }
            self.check_idle();
            let cmd = if self.paused {
                // Wake periodically so the idle clock keeps running.
                match self.commands.recv_timeout(Duration::from_millis(250)) {
                    Ok(c) => Some(c),
                    Err(flume::RecvTimeoutError::Timeout) => None,
                    Err(flume::RecvTimeoutError::Disconnected) => {
                        self.stop = true;
                        None
                    }
                }
            } else {
                match self
                    .commands
                    .recv_deadline(deadline.min(Instant::now() + Duration::from_millis(250)))
                {
                    Ok(c) => Some(c),
                    Err(flume::RecvTimeoutError::Timeout) if Instant::now() >= deadline => {
                        return Wait::Timeout
                    }
                    Err(flume::RecvTimeoutError::Timeout) => None,
                    Err(flume::RecvTimeoutError::Disconnected) => {
                        self.stop = true;
                        None
                    }
                }
            };
            let was_paused = self.paused;
            if let Some(cmd) = cmd {
                if let Some(a) = self.handle(cmd, pending, actions) {
                    return Wait::Advice(a);
                }
            }
            if was_paused && !self.paused {
                deadline = Instant::now() + self.pacing.decision_interval;
            }
        }
    }
}

impl AdviceSource for LiveAdvisor {
    fn advise(&mut self, ctx: &DecisionContext<'_>, _: &mut StreamRng) -> Option<usize> {
        let actions = ctx.env.action_count();
        // Commands that arrived between decisions target past steps.
        while let Ok(cmd) = self.commands.try_recv() {
            self.handle(cmd, u64::MAX, actions);
        }
        if self.stop {
            return None;
        }
        {
            let mut info = self.info.lock().unwrap();
            info.episode = ctx.episode;
            info.step = ctx.global_step;
        }
        let frame = {
            let p = self.progress.borrow();
            StateFrame {
                env: ctx.env.id(),
                status: self.status(),
                episode: ctx.episode,
                episode_step: ctx.step,
                step: ctx.global_step,
                obs: ctx.obs.values().to_vec(),
                frame: ctx.env.render(ctx.obs),
                actions: ctx
                    .env
                    .id()
                    .action_labels()
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                epsilon: ctx.epsilon,
                episode_reward: if ctx.step == 0 { 0.0 } else { p.episode_reward },
                last: p.last.clone(),
                counters: p.counters.clone().unwrap_or(Counters {
                    advised: 0,
                    reused: 0,
                    random: 0,
                    greedy: 0,
                }),
                store: ctx.store.snapshot(),
            }
        };
        self.publish(ServerMessage::State(Box::new(frame)));
        match self.wait(ctx.global_step, actions) {
            Wait::Advice(a) => Some(a),
            Wait::Timeout => None,
        }
    }

    fn stop_requested(&self) -> bool {
        self.stop
    }
}
