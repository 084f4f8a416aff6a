//! Line-delimited JSON protocol for driving an environment from another
//! process. One request per line, one response per line, strictly in order.
//! See `docs/protocol.md` for the message schemas.

use std::io::{BufRead, Write};
use std::net::{TcpListener, ToSocketAddrs};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::EnvConfig;
use crate::data::{format_timestamp, TimeSeriesDataset};
use crate::env::{EnvError, Environment, Selector};

pub const PROTOCOL_VERSION: u32 = 1;

/// Errors that stop the TCP accept loop.
#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ErrorCode {
    MalformedJson,
    InvalidRequest,
    UnknownCommand,
    ProtocolViolation,
    EpisodeFinished,
    ActionDimensionMismatch,
    InvalidAction,
    InvalidSelector,
    Internal,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: ErrorCode,
    message: String,
}

fn ok(payload: Value) -> String {
    json!({ "ok": true, "payload": payload }).to_string()
}

fn err(code: ErrorCode, message: impl Into<String>) -> String {
    let body = ErrorBody {
        code,
        message: message.into(),
    };
    json!({ "ok": false, "error": body }).to_string()
}

/// One client's view of one environment.
pub struct Session {
    env: Environment,
    default_seed: u64,
    resets: u64,
}

impl Session {
    pub fn new(env: Environment, default_seed: u64) -> Self {
        Session {
            env,
            default_seed,
            resets: 0,
        }
    }

    /// Handles one request line. Returns the response line (without a
    /// newline) and whether the session should end.
    pub fn handle_line(&mut self, line: &str) -> (String, bool) {
        let request: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return (err(ErrorCode::MalformedJson, e.to_string()), false),
        };
        let Some(cmd) = request.get("cmd").and_then(Value::as_str) else {
            return (
                err(
                    ErrorCode::InvalidRequest,
                    "request must be an object with a string `cmd`",
                ),
                false,
            );
        };
        match cmd {
            "hello" => (ok(self.hello()), false),
            "reset" => (self.reset(&request), false),
            "step" => (self.step(&request), false),
            "close" => (ok(json!({})), true),
            other => (
                err(
                    ErrorCode::UnknownCommand,
                    format!("unknown command `{other}`"),
                ),
                false,
            ),
        }
    }

    fn hello(&self) -> Value {
        let cfg = self.env.config();
        json!({
            "version": PROTOCOL_VERSION,
            "state_dim": cfg.state_dim(),
            "action_dim": cfg.action_dim(),
            "horizon": cfg.horizon,
            "dt_hours": cfg.dt_hours,
            "action_bounds": cfg.fleet.iter().map(|e| [e.p_min, e.p_max]).collect::<Vec<_>>(),
            "ess_nodes": cfg.fleet.iter().map(|e| e.node).collect::<Vec<_>>(),
            "node_ids": cfg.network.nodes.iter().map(|n| n.id).collect::<Vec<_>>(),
            "days": self.env.day_count(),
        })
    }

    fn selector(&mut self, request: &Value) -> Result<Selector, String> {
        let Some(sel) = request.get("selector") else {
            // without a selector, successive resets walk a seeded sequence
            let seed = self.default_seed.wrapping_add(self.resets);
            return Ok(Selector::Random(seed));
        };
        if let Some(day) = sel.get("day") {
            return day
                .as_u64()
                .map(|d| Selector::Day(d as usize))
                .ok_or_else(|| "`day` must be a non-negative integer".into());
        }
        if let Some(seed) = sel.get("random") {
            return seed
                .as_u64()
                .map(Selector::Random)
                .ok_or_else(|| "`random` must be a non-negative integer seed".into());
        }
        Err("selector must be {\"day\": i} or {\"random\": seed}".into())
    }

    fn reset(&mut self, request: &Value) -> String {
        let selector = match self.selector(request) {
            Ok(s) => s,
            Err(m) => return err(ErrorCode::InvalidRequest, m),
        };
        self.resets += 1;
        match self.env.reset(selector) {
            Ok(state) => {
                let day_start = self
                    .env
                    .state()
                    .map(|s| format_timestamp(&s.episode.day_start));
                ok(json!({ "state": state.to_vec(), "day_start": day_start }))
            }
            Err(EnvError::Data(e)) => err(ErrorCode::InvalidSelector, e.to_string()),
            Err(e) => err(ErrorCode::Internal, e.to_string()),
        }
    }

    fn step(&mut self, request: &Value) -> String {
        let Some(raw) = request.get("action").and_then(Value::as_array) else {
            return err(
                ErrorCode::InvalidRequest,
                "`action` must be an array of numbers",
            );
        };
        let mut action = Vec::with_capacity(raw.len());
        for (i, a) in raw.iter().enumerate() {
            match a.as_f64() {
                Some(x) => action.push(x),
                None => {
                    return err(
                        ErrorCode::InvalidAction,
                        format!("action[{i}] is not a number"),
                    )
                }
            }
        }
        match self.env.step(&action) {
            Ok(tr) => ok(json!({
                "state": tr.state.to_vec(),
                "reward": tr.reward,
                "done": tr.done,
                "info": tr.info,
            })),
            Err(e @ EnvError::NotReset) => err(ErrorCode::ProtocolViolation, e.to_string()),
            Err(e @ EnvError::EpisodeFinished) => err(ErrorCode::EpisodeFinished, e.to_string()),
            Err(e @ EnvError::ActionDimensionMismatch { .. }) => {
                err(ErrorCode::ActionDimensionMismatch, e.to_string())
            }
            Err(e @ EnvError::NonFiniteAction(_)) => err(ErrorCode::InvalidAction, e.to_string()),
            Err(e) => err(ErrorCode::Internal, e.to_string()),
        }
    }
}

/// Runs a session over a line stream until `close` or end of input.
/// Blank lines are ignored.
pub fn serve_stream<R: BufRead, W: Write>(
    session: &mut Session,
    reader: R,
    mut writer: W,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (response, close) = session.handle_line(&line);
        writer.write_all(response.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if close {
            break;
        }
    }
    Ok(())
}

/// Accepts TCP connections, one independent session per connection.
pub fn serve_tcp(
    addr: impl ToSocketAddrs,
    cfg: Arc<EnvConfig>,
    data: Arc<TimeSeriesDataset>,
    seed: u64,
) -> Result<(), ServeError> {
    let listener = TcpListener::bind(addr)?;
    log::info!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let env = Environment::new(Arc::clone(&cfg), Arc::clone(&data))?;
        std::thread::spawn(move || {
            let peer = stream
                .peer_addr()
                .map(|a| a.to_string())
                .unwrap_or_default();
            let reader = match stream.try_clone() {
                Ok(r) => std::io::BufReader::new(r),
                Err(e) => {
                    log::warn!("{peer}: {e}");
                    return;
                }
            };
            let mut session = Session::new(env, seed);
            if let Err(e) = serve_stream(&mut session, reader, stream) {
                log::warn!("{peer}: {e}");
            }
            log::info!("{peer}: session closed");
        });
    }
    Ok(())
}
