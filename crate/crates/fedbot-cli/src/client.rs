//! Blocking broker client. Implements [`ChannelApi`], so the bot loop from
//! the core crate runs against a remote broker exactly as it runs against
//! the in-memory channel in the simulator.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use fedbot_core::channel::{
    ChannelApi, ChannelError, ChannelMessage, Cursor, MessageId, Tick,
};
use fedbot_core::wire::WireError;

use crate::proto::{FrontLine, Request, Response};

pub struct BrokerClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    has_memory: Option<bool>,
}

impl BrokerClient {
    pub fn connect(addr: &str) -> Result<BrokerClient> {
        let stream =
            TcpStream::connect(addr).with_context(|| format!("connecting to broker {addr}"))?;
        stream.set_nodelay(true).ok();
        let writer = stream.try_clone()?;
        Ok(BrokerClient {
            reader: BufReader::new(stream),
            writer,
            has_memory: None,
        })
    }

    /// Retries while the hosting process is still binding its listener.
    pub fn connect_with_retry(addr: &str, attempts: u32, delay: Duration) -> Result<BrokerClient> {
        let mut last = None;
        for _ in 0..attempts {
            match BrokerClient::connect(addr) {
                Ok(client) => return Ok(client),
                Err(e) => last = Some(e),
            }
            std::thread::sleep(delay);
        }
        Err(last.unwrap_or_else(|| anyhow!("broker {addr} unreachable")))
    }

    fn call(&mut self, req: &Request) -> Result<Response> {
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            bail!("broker closed the connection");
        }
        let resp: Response = serde_json::from_str(&buf)?;
        if !resp.ok {
            bail!("broker error: {}", resp.err.unwrap_or_default());
        }
        Ok(resp)
    }

    pub fn now(&mut self) -> Result<Tick> {
        Ok(self.call(&Request::Now)?.tick.unwrap_or(0))
    }

    pub fn front_send(&mut self, bot: &str, user: &str, text: &str) -> Result<()> {
        self.call(&Request::FrontSend {
            bot: bot.to_string(),
            user: user.to_string(),
            text: text.to_string(),
        })?;
        Ok(())
    }

    pub fn front_poll(&mut self, bot: &str) -> Result<Vec<FrontLine>> {
        Ok(self
            .call(&Request::FrontPoll {
                bot: bot.to_string(),
            })?
            .lines
            .unwrap_or_default())
    }

    pub fn front_deliver(&mut self, user: &str, text: &str) -> Result<()> {
        self.call(&Request::FrontDeliver {
            user: user.to_string(),
            text: text.to_string(),
        })?;
        Ok(())
    }

    pub fn front_recv(&mut self, user: &str) -> Result<Vec<FrontLine>> {
        Ok(self
            .call(&Request::FrontRecv {
                user: user.to_string(),
            })?
            .lines
            .unwrap_or_default())
    }
}

// The broker's clock is authoritative, so the `now` arguments callers pass
// are ignored; bots fetch their tick from the broker each loop anyway.
impl ChannelApi for BrokerClient {
    fn attach(&mut self, bot: &str, _now: Tick) -> Cursor {
        match self.call(&Request::Attach {
            bot: bot.to_string(),
        }) {
            Ok(resp) => Cursor {
                owner: bot.to_string(),
                next_id: resp.next_id.unwrap_or(0),
                attached_at: resp.attached_at.unwrap_or(0),
            },
            Err(e) => {
                log::error!("attach failed: {e}");
                Cursor {
                    owner: bot.to_string(),
                    next_id: 0,
                    attached_at: 0,
                }
            }
        }
    }

    fn post(&mut self, author: &str, body: &str, _now: Tick) -> Result<MessageId, ChannelError> {
        match self.call(&Request::Post {
            author: author.to_string(),
            body: body.to_string(),
        }) {
            Ok(resp) => Ok(resp.id.unwrap_or(0)),
            Err(e) => Err(ChannelError::InvalidBody(WireError::Parse(e.to_string()))),
        }
    }

    fn read(&mut self, cursor: &mut Cursor, limit: usize) -> Vec<ChannelMessage> {
        match self.call(&Request::Read {
            next_id: cursor.next_id,
            limit,
        }) {
            Ok(resp) => {
                if let Some(next) = resp.next_id {
                    cursor.next_id = next;
                }
                resp.messages.unwrap_or_default()
            }
            Err(e) => {
                log::error!("read failed: {e}");
                Vec::new()
            }
        }
    }

    fn try_delete(&mut self, bot: &str, id: MessageId) -> bool {
        self.call(&Request::TryDelete {
            bot: bot.to_string(),
            id,
        })
        .ok()
        .and_then(|r| r.claimed)
        .unwrap_or(false)
    }

    fn visible_history(&mut self, horizon: Option<Tick>) -> Vec<ChannelMessage> {
        self.call(&Request::History { from: horizon })
            .ok()
            .and_then(|r| r.messages)
            .unwrap_or_default()
    }

    fn has_memory(&mut self) -> bool {
        if let Some(cached) = self.has_memory {
            return cached;
        }
        let value = self
            .call(&Request::Info)
            .ok()
            .and_then(|r| r.has_memory)
            .unwrap_or(true);
        self.has_memory = Some(value);
        value
    }
}
