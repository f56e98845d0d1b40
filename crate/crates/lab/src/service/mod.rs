//! Live human-in-the-loop sessions.
//!
//! Each session runs one training loop on its own thread. Clients talk to it
//! through a bounded command queue (advice and control, every command gets a
//! reply) and watch it through a lossy broadcast of JSON frames; a viewer
//! that falls behind loses frames, never replies.

mod http;
mod live;
pub mod protocol;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::rc::Rc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use bpa_core::agent::{AgentMode, RunResult, Trainer};
use bpa_core::env::EnvId;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, oneshot};

pub use http::{bind, router, serve};
pub use live::{Command, Pacing};

use crate::campaign::{prepare_model, write_run, RunSpec};
use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use live::{LiveAdvisor, Progress, ProgressHook};
use protocol::{ClientMessage, RunStatus, ServerEnvelope, ServerMessage};

const COMMAND_CAPACITY: usize = 64;

/// Listing entry for `GET /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: u64,
    pub env: EnvId,
    pub mode: AgentMode,
    pub profile: Option<String>,
    pub status: RunStatus,
    pub episode: usize,
    pub step: u64,
    pub episodes_done: usize,
    pub last_reward: Option<f64>,
    pub output: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub(crate) type SharedInfo = Arc<Mutex<SessionInfo>>;

/// Body of `POST /sessions`; unset fields come from the server's config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartRequest {
    pub env: Option<EnvId>,
    pub mode: Option<AgentMode>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    pub decision_interval_ms: Option<u64>,
    /// A complete TOML configuration replacing the server's.
    pub config: Option<String>,
}

struct Session {
    info: SharedInfo,
    latest: Arc<Mutex<Option<String>>>,
    commands: flume::Sender<Command>,
    /// Weak so that viewers see the stream close when the loop ends.
    events: broadcast::WeakSender<String>,
    thread: Mutex<Option<JoinHandle<Result<RunResult>>>>,
}

pub struct SessionManager {
    base: ExperimentConfig,
    out: PathBuf,
    sessions: Mutex<BTreeMap<u64, Arc<Session>>>,
    next_id: Mutex<u64>,
}

impl SessionManager {
    pub fn new(base: ExperimentConfig, out: PathBuf) -> Self {
        Self {
            base,
            out,
            sessions: Mutex::new(BTreeMap::new()),
            next_id: Mutex::new(1),
        }
    }

    fn resolve(&self, req: &StartRequest) -> Result<ExperimentConfig> {
        let mut cfg = match &req.config {
            Some(text) => {
                ExperimentConfig::parse(text).map_err(|e| LabError::Invalid(e.to_string()))?
            }
            None => self.base.clone(),
        };
        if let Some(env) = req.env {
            cfg.env = env;
        }
        if let Some(mode) = req.mode {
            cfg.mode = mode;
        }
        if let Some(n) = req.episodes {
            cfg.hyperparams.episodes = n;
        }
        if let Some(seed) = req.seed {
            cfg.seeds.base = seed;
        }
        if let Some(ms) = req.decision_interval_ms {
            cfg.live.decision_interval_ms = ms;
        }
        if !cfg.mode.uses_advisor() {
            return Err(LabError::Invalid(
                "live sessions need an advised mode".into(),
            ));
        }
        Ok(cfg)
    }

    /// Starts a session and returns its id.
    pub fn start(&self, req: &StartRequest) -> Result<u64> {
        let cfg = self.resolve(req)?;
        let id = {
            let mut n = self.next_id.lock().unwrap();
            *n += 1;
            *n - 1
        };
        let dir = self.out.join("live").join(format!("session-{id}"));
        let model = prepare_model(&cfg, &self.out, cfg.mode == AgentMode::Persistent)?;
        // The profile only labels the run; advice comes from the channel.
        let profile = cfg.profile()?;
        let training = cfg.training_config(cfg.mode, Some(profile.clone()), cfg.seed_set());
        let trainer = Trainer::new(training.clone(), model)?;
        let spec = RunSpec {
            name: format!("session-{id}"),
            key: format!("live-{}-{}", cfg.env, cfg.mode),
            repeat: 0,
            training,
        };

        let info = Arc::new(Mutex::new(SessionInfo {
            id,
            env: cfg.env,
            mode: cfg.mode,
            profile: Some(profile.name),
            status: RunStatus::Running,
            episode: 0,
            step: 0,
            episodes_done: 0,
            last_reward: None,
            output: dir.clone(),
            error: None,
        }));
        let (tx, rx) = flume::bounded(COMMAND_CAPACITY);
        let (events, _) = broadcast::channel(cfg.live.frame_buffer.max(1));
        let pacing = Pacing {
            decision_interval: Duration::from_millis(cfg.live.decision_interval_ms),
            idle_pause: Duration::from_secs(cfg.live.idle_pause_s),
        };
        let latest = Arc::new(Mutex::new(None));
        let thread_latest = latest.clone();
        let thread_info = info.clone();
        let thread_events = events.clone();
        let weak = events.downgrade();
        drop(events);
        let handle = std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || {
                let progress = Rc::new(RefCell::new(Progress::default()));
                let mut advisor = LiveAdvisor::new(
                    id,
                    rx,
                    thread_events,
                    thread_info.clone(),
                    thread_latest,
                    pacing,
                    progress.clone(),
                );
                let outcome = drive(
                    trainer,
                    &mut advisor,
                    &mut ProgressHook(progress),
                    &thread_info,
                )
                .and_then(|result| write_run(&dir, &spec, &result).map(|_| result));
                let mut info = thread_info.lock().unwrap();
                match &outcome {
                    Ok(r) => {
                        info.status = RunStatus::Finished;
                        advisor.publish(ServerMessage::Finished {
                            stopped: r.stopped,
                            episodes: r.episodes.len(),
                        });
                    }
                    Err(e) => {
                        info.status = RunStatus::Failed;
                        info.error = Some(e.to_string());
                        advisor.publish(ServerMessage::error(e.to_string()));
                    }
                }
                outcome
            })
            .map_err(|e| LabError::Invalid(format!("cannot start session thread: {e}")))?;

        self.sessions.lock().unwrap().insert(
            id,
            Arc::new(Session {
                info,
                latest,
                commands: tx,
                events: weak,
                thread: Mutex::new(Some(handle)),
            }),
        );
        Ok(id)
    }

    fn get(&self, id: u64) -> Option<Arc<Session>> {
        self.sessions.lock().unwrap().get(&id).cloned()
    }

    pub fn list(&self) -> Vec<SessionInfo> {
        let sessions = self.sessions.lock().unwrap();
        sessions
            .values()
            .map(|s| s.info.lock().unwrap().clone())
            .collect()
    }

    pub fn info(&self, id: u64) -> Option<SessionInfo> {
        self.get(id).map(|s| s.info.lock().unwrap().clone())
    }

    /// A new stream of JSON frames for the session.
    /// The last state frame published, as sent on the wire.
    pub fn latest_state(&self, id: u64) -> Option<String> {
        self.get(id)?.latest.lock().unwrap().clone()
    }

    /// `None` for unknown or finished sessions.
    pub fn subscribe(&self, id: u64) -> Option<broadcast::Receiver<String>> {
        self.get(id)?.events.upgrade().map(|tx| tx.subscribe())
    }

    /// Delivers a client message and waits for the loop's reply.
    pub async fn send(&self, id: u64, msg: ClientMessage) -> ServerMessage {
        let Some(session) = self.get(id) else {
            return ServerMessage::error(format!("unknown session {id}"));
        };
        let (reply, answer) = oneshot::channel();
        let cmd = match msg {
            ClientMessage::Advice { step, action } => Command::Advice {
                step,
                action,
                reply,
            },
            ClientMessage::Pause => Command::Pause(reply),
            ClientMessage::Resume => Command::Resume(reply),
            ClientMessage::Stop => Command::Stop(reply),
        };
        if session.commands.send_async(cmd).await.is_err() {
            return ServerMessage::error(format!("session {id} has ended"));
        }
        answer
            .await
            .unwrap_or_else(|_| ServerMessage::error(format!("session {id} has ended")))
    }

    /// Blocks until the session's loop has finished.
    pub fn join(&self, id: u64) -> Option<Result<RunResult>> {
        let handle = self.get(id)?.thread.lock().unwrap().take()?;
        Some(
            handle
                .join()
                .unwrap_or_else(|_| Err(LabError::Invalid(format!("session {id} panicked")))),
        )
    }

    /// Serialized envelope for replies addressed to one client.
    pub fn envelope(id: u64, msg: ServerMessage) -> String {
        ServerEnvelope::new(id, msg).to_json()
    }
}

fn drive(
    mut trainer: Trainer,
    advisor: &mut LiveAdvisor,
    hook: &mut ProgressHook,
    info: &SharedInfo,
) -> Result<RunResult> {
    let total = trainer.config().hyper.episodes;
    let mut episodes = Vec::with_capacity(total);
    let mut stopped = false;
    while trainer.episode() < total {
        let (metrics, stop) = trainer.run_episode(advisor, hook)?;
        {
            let mut i = info.lock().unwrap();
            i.episodes_done += 1;
            i.last_reward = Some(metrics.reward);
        }
        advisor.publish(ServerMessage::Episode {
            metrics: metrics.clone(),
        });
        episodes.push(metrics);
        if stop {
            stopped = true;
            break;
        }
    }
    Ok(RunResult {
        episodes,
        network: trainer.network().clone(),
        store: trainer.store().snapshot(),
        stopped,
    })
}
