//! The local broker: one process hosts the C&C channel plus the
//! front-channel mailboxes, and every bot or REPL talks to it over TCP.
//!
//! Time is the broker's: logical ticks derive from its wall clock, so all
//! connected processes share one clock. The channel mutex is what makes
//! `try_delete` linearizable across processes.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use fedbot_core::channel::{Channel, ChannelConfig, Cursor, Tick};

use crate::proto::{FrontLine, Request, Response};

pub struct BrokerState {
    channel: Mutex<Channel>,
    to_bot: Mutex<HashMap<String, VecDeque<FrontLine>>>,
    to_user: Mutex<HashMap<String, VecDeque<FrontLine>>>,
    started: Instant,
    tick_ms: u64,
}

impl BrokerState {
    pub fn new(has_memory: bool, tick_ms: u64) -> BrokerState {
        BrokerState {
            channel: Mutex::new(Channel::new(ChannelConfig { has_memory })),
            to_bot: Mutex::new(HashMap::new()),
            to_user: Mutex::new(HashMap::new()),
            started: Instant::now(),
            tick_ms: tick_ms.max(1),
        }
    }

    fn now(&self) -> Tick {
        self.started.elapsed().as_millis() as u64 / self.tick_ms
    }

    fn handle(&self, req: Request) -> Response {
        match req {
            Request::Attach { bot } => {
                let now = self.now();
                let channel = self.channel.lock().unwrap();
                let Cursor {
                    next_id,
                    attached_at,
                    ..
                } = channel.attach(&bot, now);
                Response {
                    next_id: Some(next_id),
                    attached_at: Some(attached_at),
                    ..Response::ok()
                }
            }
            Request::Post { author, body } => {
                let now = self.now();
                let mut channel = self.channel.lock().unwrap();
                match channel.post(&author, &body, now) {
                    Ok(id) => Response {
                        id: Some(id),
                        ..Response::ok()
                    },
                    Err(e) => Response::error(e.to_string()),
                }
            }
            Request::Read { next_id, limit } => {
                let channel = self.channel.lock().unwrap();
                let mut cursor = Cursor {
                    owner: String::new(),
                    next_id,
                    attached_at: 0,
                };
                let messages = channel.read(&mut cursor, limit);
                Response {
                    messages: Some(messages),
                    next_id: Some(cursor.next_id),
                    ..Response::ok()
                }
            }
            Request::TryDelete { bot, id } => {
                let mut channel = self.channel.lock().unwrap();
                Response {
                    claimed: Some(channel.try_delete(&bot, id)),
                    ..Response::ok()
                }
            }
            Request::History { from } => {
                let channel = self.channel.lock().unwrap();
                Response {
                    messages: Some(channel.visible_history(from)),
                    ..Response::ok()
                }
            }
            Request::Info => {
                let channel = self.channel.lock().unwrap();
                Response {
                    has_memory: Some(channel.has_memory()),
                    ..Response::ok()
                }
            }
            Request::Now => Response {
                tick: Some(self.now()),
                ..Response::ok()
            },
            Request::FrontSend { bot, user, text } => {
                self.to_bot
                    .lock()
                    .unwrap()
                    .entry(bot)
                    .or_default()
                    .push_back(FrontLine { user, text });
                Response::ok()
            }
            Request::FrontPoll { bot } => {
                let lines = self
                    .to_bot
                    .lock()
                    .unwrap()
                    .get_mut(&bot)
                    .map(|q| q.drain(..).collect())
                    .unwrap_or_default();
                Response {
                    lines: Some(lines),
                    ..Response::ok()
                }
            }
            Request::FrontDeliver { user, text } => {
                self.to_user
                    .lock()
                    .unwrap()
                    .entry(user.clone())
                    .or_default()
                    .push_back(FrontLine { user, text });
                Response::ok()
            }
            Request::FrontRecv { user } => {
                let lines = self
                    .to_user
                    .lock()
                    .unwrap()
                    .get_mut(&user)
                    .map(|q| q.drain(..).collect())
                    .unwrap_or_default();
                Response {
                    lines: Some(lines),
                    ..Response::ok()
                }
            }
        }
    }
}

/// Binds `addr` and serves forever on background threads.
pub fn spawn_broker(
    addr: &str,
    has_memory: bool,
    tick_ms: u64,
) -> std::io::Result<(SocketAddr, Arc<BrokerState>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let state = Arc::new(BrokerState::new(has_memory, tick_ms));
    let serve_state = Arc::clone(&state);
    std::thread::spawn(move || {
        for conn in listener.incoming() {
            match conn {
                Ok(stream) => {
                    let state = Arc::clone(&serve_state);
                    std::thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, &state) {
                            log::debug!("connection closed: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
    log::info!("broker listening on {local}");
    Ok((local, state))
}

fn serve_connection(stream: TcpStream, state: &BrokerState) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => state.handle(req),
            Err(e) => Response::error(format!("bad request: {e}")),
        };
        let mut out = serde_json::to_string(&response).expect("response serialization");
        out.push('\n');
        writer.write_all(out.as_bytes())?;
    }
    Ok(())
}
