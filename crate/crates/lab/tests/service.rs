use std::sync::Arc;
use std::time::Duration;

use bpa_core::advisor::AdvisorProfile;
use bpa_core::agent::{run_training, AgentMode, Provenance};
use bpa_core::env::{Environment, Observation};
use bpa_lab::campaign::clusters_dir;
use bpa_lab::config::ExperimentConfig;
use bpa_lab::formats;
use bpa_lab::service::protocol::{
    ClientMessage, RunStatus, ServerEnvelope, ServerMessage, StateFrame,
};
use bpa_lab::service::{self, SessionManager, StartRequest};
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::sync::broadcast;
use tokio_tungstenite::tungstenite::Message;

fn base(episodes: usize, interval_ms: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.mode = AgentMode::Persistent;
    c.hyperparams.hidden = vec![16];
    c.hyperparams.episodes = episodes;
    c.clusters.corpus_size = 300;
    c.clusters.k = Some(3);
    c.clusters.k_max = 4;
    c.live.decision_interval_ms = interval_ms;
    c.live.idle_pause_s = 600;
    c.live.frame_buffer = 1024;
    c.seeds.base = 5;
    c
}

async fn next(rx: &mut broadcast::Receiver<String>) -> ServerEnvelope {
    let text = tokio::time::timeout(Duration::from_secs(60), rx.recv())
        .await
        .expect("frame within a minute")
        .expect("stream open");
    serde_json::from_str(&text).unwrap()
}

async fn next_state(rx: &mut broadcast::Receiver<String>) -> StateFrame {
    loop {
        if let ServerMessage::State(s) = next(rx).await.message {
            return *s;
        }
    }
}

fn parse_state(text: &str) -> Option<StateFrame> {
    match serde_json::from_str::<ServerEnvelope>(text)
        .unwrap()
        .message
    {
        ServerMessage::State(s) => Some(*s),
        _ => None,
    }
}

/// The first pending decision after step `after`, whether it was published
/// before or after subscribing.
async fn pending(
    m: &SessionManager,
    id: u64,
    rx: &mut broadcast::Receiver<String>,
    after: Option<u64>,
) -> StateFrame {
    let newer = |s: &StateFrame| after.is_none_or(|a| s.step > a);
    if let Some(s) = m.latest_state(id).as_deref().and_then(parse_state) {
        if newer(&s) {
            return s;
        }
    }
    loop {
        let s = next_state(rx).await;
        if newer(&s) {
            return s;
        }
    }
}

fn oracle(cfg: &ExperimentConfig, obs: &[f64]) -> usize {
    let env = cfg.env_config().build().unwrap();
    env.oracle_action(&Observation::new(obs.to_vec()))
        .unwrap()
        .index
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scripted_oracle_client_reproduces_the_optimistic_advisor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base(3, 30_000);
    let m = SessionManager::new(cfg.clone(), dir.path().to_path_buf());
    let id = m.start(&StartRequest::default()).unwrap();
    let mut rx = m.subscribe(id).unwrap();
    let mut decisions = 0u64;
    let mut handled = None;
    loop {
        let cached = m
            .latest_state(id)
            .as_deref()
            .and_then(parse_state)
            .filter(|s| handled.is_none_or(|h| s.step > h));
        let s = match cached {
            Some(s) => s,
            None => match next(&mut rx).await.message {
                ServerMessage::State(s) if handled.is_none_or(|h| s.step > h) => *s,
                ServerMessage::Finished { stopped, episodes } => {
                    assert!(!stopped);
                    assert_eq!(episodes, 3);
                    break;
                }
                _ => continue,
            },
        };
        assert_eq!(s.step, decisions);
        let action = oracle(&cfg, &s.obs);
        let ack = m
            .send(
                id,
                ClientMessage::Advice {
                    step: s.step,
                    action,
                },
            )
            .await;
        assert!(
            matches!(
                ack,
                ServerMessage::Ack {
                    accepted: true,
                    stale: false,
                    ..
                }
            ),
            "{ack:?}"
        );
        handled = Some(s.step);
        decisions += 1;
    }
    let live = m.join(id).unwrap().unwrap();
    assert_eq!(m.info(id).unwrap().status, RunStatus::Finished);

    let model =
        formats::read_cluster_model(&clusters_dir(dir.path(), cfg.env).join("model.txt")).unwrap();
    let sim = cfg.training_config(
        AgentMode::Persistent,
        Some(AdvisorProfile::optimistic()),
        cfg.seed_set(),
    );
    let simulated = run_training(&sim, Some(model)).unwrap();
    assert_eq!(live.episodes, simulated.episodes);
    assert_eq!(live.network, simulated.network);
    assert_eq!(live.store, simulated.store);
    assert_eq!(
        decisions as usize,
        live.episodes.iter().map(|e| e.steps).sum::<usize>()
    );
    assert!(live.episodes.iter().all(|e| e.advised == e.steps));

    let written = formats::read_metrics(&dir.path().join("live/session-1/metrics.jsonl")).unwrap();
    assert_eq!(written, live.episodes);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stale_advice_is_acknowledged_and_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base(1, 150);
    let m = SessionManager::new(cfg.clone(), dir.path().to_path_buf());
    let id = m.start(&StartRequest::default()).unwrap();
    let mut rx = m.subscribe(id).unwrap();

    let s0 = pending(&m, id, &mut rx, None).await;
    assert_eq!(s0.step, 0);
    let a0 = oracle(&cfg, &s0.obs);
    let ack = m
        .send(
            id,
            ClientMessage::Advice {
                step: 0,
                action: a0,
            },
        )
        .await;
    assert!(matches!(ack, ServerMessage::Ack { accepted: true, .. }));

    let s1 = pending(&m, id, &mut rx, Some(0)).await;
    assert_eq!(s1.step, 1);
    let last = s1.last.clone().unwrap();
    assert_eq!(
        (last.step, last.action, last.provenance),
        (0, a0, Provenance::Advised)
    );
    let cluster = last.cluster.unwrap();
    assert!(s1
        .store
        .iter()
        .any(|e| e.cluster == cluster && e.action == a0 && e.created_at == 0));

    // Advice for step 0 again, now that step 1 is pending.
    let ack = m
        .send(
            id,
            ClientMessage::Advice {
                step: 0,
                action: 1 - a0,
            },
        )
        .await;
    assert!(
        matches!(
            ack,
            ServerMessage::Ack {
                accepted: false,
                stale: true,
                step: Some(0),
                ..
            }
        ),
        "{ack:?}"
    );
    // And advice for a future step.
    let ack = m
        .send(id, ClientMessage::Advice { step: 7, action: 0 })
        .await;
    assert!(matches!(ack, ServerMessage::Ack { stale: true, .. }));

    // Nobody answers step 1: the loop falls through to its own policy.
    let s2 = pending(&m, id, &mut rx, Some(1)).await;
    let last = s2.last.unwrap();
    assert_eq!(last.step, 1);
    assert_ne!(last.provenance, Provenance::Advised);
    assert!(s2.store.iter().all(|e| e.created_at == 0));
    assert_eq!(s2.store.len(), 1);
    assert_eq!(s2.counters.advised, 1);

    let err = m
        .send(id, ClientMessage::Advice { step: 2, action: 9 })
        .await;
    assert!(matches!(err, ServerMessage::Error { .. }));
    m.send(id, ClientMessage::Stop).await;
    m.join(id).unwrap().unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_holds_advice_until_resume_and_stop_finalises() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base(50, 100);
    let m = SessionManager::new(cfg.clone(), dir.path().to_path_buf());
    let id = m
        .start(&StartRequest {
            mode: Some(AgentMode::NonPersistent),
            ..Default::default()
        })
        .unwrap();
    let mut rx = m.subscribe(id).unwrap();

    let ack = m.send(id, ClientMessage::Pause).await;
    assert!(
        matches!(
            ack,
            ServerMessage::Ack {
                status: RunStatus::Paused,
                ..
            }
        ),
        "{ack:?}"
    );
    // The loop is now parked on one pending step.
    tokio::time::sleep(Duration::from_millis(400)).await;
    let pending = parse_state(&m.latest_state(id).unwrap()).unwrap();
    assert_eq!(m.info(id).unwrap().status, RunStatus::Paused);
    assert_eq!(m.info(id).unwrap().step, pending.step);

    let ack = m
        .send(
            id,
            ClientMessage::Advice {
                step: pending.step,
                action: 1,
            },
        )
        .await;
    assert!(matches!(
        ack,
        ServerMessage::Ack {
            accepted: true,
            status: RunStatus::Paused,
            ..
        }
    ));
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert_eq!(m.info(id).unwrap().step, pending.step);

    let ack = m.send(id, ClientMessage::Resume).await;
    assert!(matches!(
        ack,
        ServerMessage::Ack {
            status: RunStatus::Running,
            ..
        }
    ));
    let after = self::pending(&m, id, &mut rx, Some(pending.step)).await;
    let last = after.last.unwrap();
    assert_eq!(
        (last.step, last.action, last.provenance),
        (pending.step, 1, Provenance::Advised)
    );
    assert!(after.store.is_empty());

    let ack = m.send(id, ClientMessage::Stop).await;
    assert!(matches!(ack, ServerMessage::Ack { accepted: true, .. }));
    loop {
        if let ServerMessage::Finished { stopped, .. } = next(&mut rx).await.message {
            assert!(stopped);
            break;
        }
    }
    let result = m.join(id).unwrap().unwrap();
    assert!(result.stopped);
    assert!(result.episodes.len() < 50);
    assert!(dir.path().join("live/session-1/metrics.jsonl").exists());
    let reply = m.send(id, ClientMessage::Pause).await;
    assert!(matches!(reply, ServerMessage::Error { .. }));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unwatched_session_pauses_itself() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(5, 50);
    cfg.live.idle_pause_s = 0;
    let m = SessionManager::new(cfg, dir.path().to_path_buf());
    let id = m.start(&StartRequest::default()).unwrap();
    let mut paused = false;
    for _ in 0..100 {
        if m.info(id).unwrap().status == RunStatus::Paused {
            paused = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert!(paused);
    let step = m.info(id).unwrap().step;
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert_eq!(m.info(id).unwrap().step, step);

    let mut rx = m.subscribe(id).unwrap();
    let ack = m.send(id, ClientMessage::Resume).await;
    assert!(matches!(
        ack,
        ServerMessage::Ack {
            status: RunStatus::Running,
            ..
        }
    ));
    let s = pending(&m, id, &mut rx, Some(step)).await;
    assert!(s.step > step);
    m.send(id, ClientMessage::Stop).await;
    m.join(id).unwrap().unwrap();
}

async fn http(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    let status = buf[9..12].parse().unwrap();
    let body = buf
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .unwrap_or_default();
    (status, body)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn websocket_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = base(2, 5_000);
    let manager = Arc::new(SessionManager::new(cfg.clone(), dir.path().to_path_buf()));
    let listener = service::bind(0).await.unwrap();
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], listener.local_addr().unwrap().port()));
    tokio::spawn(service::serve(manager.clone(), listener));

    let (status, body) = http(addr, "GET", "/sessions", "").await;
    assert_eq!((status, body.as_str()), (200, "[]"));
    let (status, body) = http(addr, "POST", "/sessions", r#"{"mode":"baseline"}"#).await;
    assert_eq!(status, 400, "{body}");
    let (status, body) = http(
        addr,
        "POST",
        "/sessions",
        r#"{"env":"cartpole","episodes":2}"#,
    )
    .await;
    assert_eq!(status, 201, "{body}");
    let info: serde_json::Value = serde_json::from_str(&body).unwrap();
    let id = info["id"].as_u64().unwrap();
    let (_, body) = http(addr, "GET", "/sessions", "").await;
    let list: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(list[0]["id"], id);
    assert_eq!(list[0]["mode"], "persistent");

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session/{id}"))
        .await
        .unwrap();
    let mut state = None;
    while state.is_none() {
        let msg = ws.next().await.unwrap().unwrap();
        let v: serde_json::Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        assert_eq!(v["v"], 1);
        if v["type"] == "state" {
            state = Some(v);
        }
    }
    let state = state.unwrap();
    assert_eq!(state["env"], "cartpole");
    assert_eq!(state["actions"], serde_json::json!(["left", "right"]));
    assert_eq!(state["frame"]["cart_x"], state["obs"][0]);
    let step = state["step"].as_u64().unwrap();

    ws.send(Message::text(r#"{"v":2,"type":"pause"}"#))
        .await
        .unwrap();
    ws.send(Message::text(format!(
        r#"{{"v":1,"type":"advice","step":{step},"action":1}}"#
    )))
    .await
    .unwrap();
    let mut replies = Vec::new();
    while replies.len() < 2 {
        let msg = ws.next().await.unwrap().unwrap();
        let v: serde_json::Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        if v["type"] == "error" || v["type"] == "ack" {
            replies.push(v);
        }
    }
    assert!(replies[0]["message"].as_str().unwrap().contains("version"));
    assert_eq!(replies[1]["accepted"], true);
    assert_eq!(replies[1]["step"], step);

    let (status, _) = http(addr, "GET", "/session/999", "").await;
    assert_eq!(status, 404);

    ws.send(Message::text(r#"{"v":1,"type":"stop"}"#))
        .await
        .unwrap();
    let mut finished = false;
    while let Some(Ok(msg)) = ws.next().await {
        if let Message::Text(t) = msg {
            let v: serde_json::Value = serde_json::from_str(&t).unwrap();
            if v["type"] == "finished" {
                assert_eq!(v["stopped"], true);
                finished = true;
            }
        }
    }
    assert!(finished, "socket closed without a finished message");
    manager.join(id).unwrap().unwrap();

    // Late viewers of a finished session get the outcome and a close.
    let (mut late, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session/{id}"))
        .await
        .unwrap();
    let msg = late.next().await.unwrap().unwrap();
    assert!(msg.to_text().unwrap().contains("\"finished\""));
}
