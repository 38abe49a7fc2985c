//! Line-delimited JSON messages between the coordinator and agents serving
//! best responses over TCP.
//!
//! Every message is one JSON object on one line, tagged by `kind`. Vectors
//! are written as `{"dim": n, "values": [...]}` and floats use the shortest
//! text that parses back to the same `f64`, so a run over the wire sees
//! exactly the numbers an in-process run would.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::consensus::{AgentPool, BestResponder, BestResponseConfig};
use crate::error::{Error, ParseError, ParseReason, Result};
use crate::mechanism::MONEY_TOLERANCE;
use crate::transport::UtilityOracle;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Environment variable holding the default listen address.
pub const LISTEN_ENV: &str = "CPPVCG_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireVector {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl WireVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            dim: values.len(),
            values,
        }
    }
}

impl From<&[f64]> for WireVector {
    fn from(v: &[f64]) -> Self {
        Self::new(v.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfferOption {
    pub plan: WireVector,
    pub fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Message {
    Hello {
        session: String,
        dim: usize,
        rho: f64,
    },
    Query {
        session: String,
        iteration: u64,
        prices: WireVector,
        consensus: WireVector,
    },
    Response {
        session: String,
        iteration: u64,
        plan: WireVector,
    },
    Offer {
        session: String,
        options: Vec<OfferOption>,
    },
    Accept {
        session: String,
        index: usize,
    },
    Decline {
        session: String,
    },
    Error {
        session: String,
        reason: String,
    },
    Bye {
        session: String,
    },
}

impl Message {
    pub fn session(&self) -> &str {
        match self {
            Message::Hello { session, .. }
            | Message::Query { session, .. }
            | Message::Response { session, .. }
            | Message::Offer { session, .. }
            | Message::Accept { session, .. }
            | Message::Decline { session }
            | Message::Error { session, .. }
            | Message::Bye { session } => session,
        }
    }

    fn vectors(&self) -> Vec<&WireVector> {
        match self {
            Message::Query {
                prices, consensus, ..
            } => vec![prices, consensus],
            Message::Response { plan, .. } => vec![plan],
            Message::Offer { options, .. } => options.iter().map(|o| &o.plan).collect(),
            _ => Vec::new(),
        }
    }
}

/// One line of JSON, without the trailing newline.
pub fn encode(msg: &Message) -> String {
    serde_json::to_string(msg).expect("messages always serialize")
}

fn parse_error(offset: usize, reason: ParseReason, detail: impl Into<String>) -> ParseError {
    ParseError {
        offset,
        reason,
        detail: detail.into(),
    }
}

fn classify(err: &serde_json::Error, line: &str) -> ParseError {
    let text = err.to_string();
    let reason = if text.starts_with("unknown variant") || text.starts_with("missing field `kind`") {
        ParseReason::UnknownKind
    } else if text.starts_with("missing field") {
        ParseReason::MissingField
    } else if text.contains("number")
        || text.contains("expected f64")
        || text.contains("expected usize")
        || text.contains("expected u64")
    {
        ParseReason::MalformedNumber
    } else {
        ParseReason::Malformed
    };
    // serde_json columns are 1-based; clamp to the line for errors at EOF
    let offset = err.column().saturating_sub(1).min(line.len());
    parse_error(offset, reason, text)
}

pub fn decode(line: &[u8]) -> std::result::Result<Message, ParseError> {
    let text = std::str::from_utf8(line)
        .map_err(|e| parse_error(e.valid_up_to(), ParseReason::Malformed, "invalid UTF-8"))?;
    let text = text.trim_end_matches(['\n', '\r']);
    if text.trim().is_empty() {
        return Err(parse_error(0, ParseReason::Empty, "empty line"));
    }
    if let Some(pos) = text.find('\n') {
        return Err(parse_error(pos, ParseReason::Malformed, "embedded newline"));
    }
    let msg: Message = serde_json::from_str(text).map_err(|e| classify(&e, text))?;
    for v in msg.vectors() {
        if v.dim != v.values.len() {
            return Err(parse_error(
                text.len(),
                ParseReason::DimensionMismatch,
                format!("declared dim {} but {} values", v.dim, v.values.len()),
            ));
        }
    }
    Ok(msg)
}

/// Index of the best option by `u(plan) - fee` (lowest index on ties), if it
/// clears the reservation utility.
pub fn pick_offer<A: UtilityOracle + ?Sized>(
    agent: &A,
    reservation_utility: f64,
    options: &[OfferOption],
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, opt) in options.iter().enumerate() {
        if let Ok(eval) = agent.evaluate(&opt.plan.values) {
            let net = eval.utility - opt.fee;
            if best.is_none_or(|(_, b)| net > b) {
                best = Some((idx, net));
            }
        }
    }
    best.filter(|&(_, net)| net >= reservation_utility - MONEY_TOLERANCE)
        .map(|(idx, _)| idx)
}

/// How a served session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    Bye,
    Disconnected,
    Rejected,
}

/// An agent answering queries over the wire.
pub struct AgentService<A> {
    pub agent: A,
    /// Utility the agent keeps without an agreement; offers are only
    /// answered when this is set.
    pub reservation_utility: Option<f64>,
    pub best_response: BestResponseConfig,
}

impl<A: UtilityOracle> AgentService<A> {
    pub fn new(agent: A) -> Self {
        Self {
            agent,
            reservation_utility: None,
            best_response: BestResponseConfig::default(),
        }
    }

    pub fn with_reservation(mut self, utility: f64) -> Self {
        self.reservation_utility = Some(utility);
        self
    }

    /// Serves sessions until one ends with `bye`.
    pub fn serve(&self, listener: &TcpListener) -> Result<()> {
        loop {
            let (stream, _) = listener.accept()?;
            if self.serve_connection(stream)? == SessionEnd::Bye {
                return Ok(());
            }
        }
    }

    pub fn serve_connection(&self, stream: TcpStream) -> Result<SessionEnd> {
        stream.set_nodelay(true)?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut responder = BestResponder::new(&self.agent, self.best_response);
        let mut session: Option<(String, usize, f64)> = None;
        let mut line = Vec::new();
        loop {
            line.clear();
            if reader.read_until(b'\n', &mut line)? == 0 {
                return Ok(SessionEnd::Disconnected);
            }
            let reply = match decode(&line) {
                Err(e) => Err(e.to_string()),
                Ok(msg) => self.handle(msg, &mut session, &mut responder),
            };
            match reply {
                Ok(Some(out)) => send(&mut writer, &out)?,
                Ok(None) => return Ok(SessionEnd::Bye),
                Err(reason) => {
                    let sid = session.as_ref().map_or(String::new(), |s| s.0.clone());
                    send(&mut writer, &Message::Error { session: sid, reason })?;
                    return Ok(SessionEnd::Rejected);
                }
            }
        }
    }

    fn handle(
        &self,
        msg: Message,
        session: &mut Option<(String, usize, f64)>,
        responder: &mut BestResponder<&A>,
    ) -> std::result::Result<Option<Message>, String> {
        if let Message::Hello { session: sid, dim, rho } = msg {
            if dim != self.agent.dim() {
                return Err(format!("agent plans have {} entries, session declares {dim}", self.agent.dim()));
            }
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(format!("invalid rho {rho}"));
            }
            *session = Some((sid.clone(), dim, rho));
            return Ok(Some(Message::Hello { session: sid, dim, rho }));
        }
        let Some((sid, dim, rho)) = session.clone() else {
            return Err("expected hello first".into());
        };
        if msg.session() != sid {
            return Err(format!("unknown session {:?}", msg.session()));
        }
        if msg.vectors().iter().any(|v| v.dim != dim) {
            return Err(format!("vector dimension differs from the session's {dim}"));
        }
        match msg {
            Message::Query {
                iteration,
                prices,
                consensus,
                ..
            } => {
                let plan = responder
                    .respond(&prices.values, &consensus.values, rho)
                    .map_err(|e| e.to_string())?;
                Ok(Some(Message::Response {
                    session: sid,
                    iteration,
                    plan: WireVector::new(plan.into_inner()),
                }))
            }
            Message::Offer { options, .. } => {
                let Some(reservation) = self.reservation_utility else {
                    return Err("this agent does not take offers".into());
                };
                Ok(Some(match pick_offer(&self.agent, reservation, &options) {
                    Some(index) => Message::Accept { session: sid, index },
                    None => Message::Decline { session: sid },
                }))
            }
            Message::Bye { .. } => Ok(None),
            other => Err(format!("unexpected message {:?}", kind_of(&other))),
        }
    }
}

fn kind_of(msg: &Message) -> &'static str {
    match msg {
        Message::Hello { .. } => "hello",
        Message::Query { .. } => "query",
        Message::Response { .. } => "response",
        Message::Offer { .. } => "offer",
        Message::Accept { .. } => "accept",
        Message::Decline { .. } => "decline",
        Message::Error { .. } => "error",
        Message::Bye { .. } => "bye",
    }
}

fn send(writer: &mut TcpStream, msg: &Message) -> Result<()> {
    let mut line = encode(msg);
    line.push('\n');
    writer.write_all(line.as_bytes())?;
    writer.flush()?;
    Ok(())
}

struct Session {
    id: String,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Reply to an offer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferReply {
    Accept(usize),
    Decline,
}

/// Agents reached over TCP, queried in lockstep.
pub struct RemotePool {
    sessions: Vec<Session>,
    dim: usize,
    rho: Option<f64>,
    timeout: Duration,
}

impl RemotePool {
    pub fn connect<E: ToSocketAddrs>(endpoints: &[E], dim: usize, timeout: Duration) -> Result<Self> {
        if endpoints.is_empty() {
            return Err(Error::Parameter("no agent endpoints".into()));
        }
        let sessions = endpoints
            .iter()
            .enumerate()
            .map(|(agent, ep)| {
                let stream = TcpStream::connect(ep)?;
                stream.set_nodelay(true)?;
                stream.set_read_timeout(Some(timeout))?;
                Ok(Session {
                    id: format!("agent-{agent}"),
                    writer: stream.try_clone()?,
                    reader: BufReader::new(stream),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            sessions,
            dim,
            rho: None,
            timeout,
        })
    }

    fn receive(&mut self, agent: usize) -> Result<Message> {
        let timeout = self.timeout;
        let session = &mut self.sessions[agent];
        let mut line = Vec::new();
        match session.reader.read_until(b'\n', &mut line) {
            Ok(0) => Err(Error::Protocol(format!("agent {agent} closed the connection"))),
            Ok(_) => {
                let msg = decode(&line)?;
                if let Message::Error { reason, .. } = &msg {
                    return Err(Error::Protocol(format!("agent {agent} reported: {reason}")));
                }
                if msg.session() != session.id {
                    return Err(Error::Protocol(format!(
                        "agent {agent} answered for session {:?}",
                        msg.session()
                    )));
                }
                Ok(msg)
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Err(Error::Timeout { agent, timeout })
            }
            Err(e) => Err(e.into()),
        }
    }

    fn handshake(&mut self, rho: f64) -> Result<()> {
        for s in &mut self.sessions {
            let hello = Message::Hello {
                session: s.id.clone(),
                dim: self.dim,
                rho,
            };
            send(&mut s.writer, &hello)?;
        }
        for agent in 0..self.sessions.len() {
            match self.receive(agent)? {
                Message::Hello { dim, rho: r, .. } if dim == self.dim && r == rho => {}
                other => {
                    return Err(Error::Protocol(format!(
                        "agent {agent} answered hello with {}",
                        kind_of(&other)
                    )))
                }
            }
        }
        self.rho = Some(rho);
        Ok(())
    }

    /// Sends every agent its query, then collects the responses in agent order.
    pub fn query_agents(
        &mut self,
        iteration: u64,
        prices: &[Vec<f64>],
        z: &[f64],
        rho: f64,
    ) -> Result<Vec<Vec<f64>>> {
        if prices.len() != self.sessions.len() {
            return Err(Error::Dimension(format!(
                "{} price vectors for {} agents",
                prices.len(),
                self.sessions.len()
            )));
        }
        if self.rho != Some(rho) {
            self.handshake(rho)?;
        }
        for (s, p) in self.sessions.iter_mut().zip(prices) {
            let q = Message::Query {
                session: s.id.clone(),
                iteration,
                prices: WireVector::from(p.as_slice()),
                consensus: WireVector::from(z),
            };
            send(&mut s.writer, &q)?;
        }
        (0..self.sessions.len())
            .map(|agent| match self.receive(agent)? {
                Message::Response {
                    iteration: echoed,
                    plan,
                    ..
                } => {
                    if echoed != iteration {
                        return Err(Error::Protocol(format!(
                            "agent {agent} answered iteration {echoed} to query {iteration}"
                        )));
                    }
                    if plan.dim != self.dim {
                        return Err(Error::Parse(parse_error(
                            0,
                            ParseReason::DimensionMismatch,
                            format!("agent {agent} sent {} entries, session has {}", plan.dim, self.dim),
                        )));
                    }
                    Ok(plan.values)
                }
                other => Err(Error::Protocol(format!(
                    "agent {agent} answered a query with {}",
                    kind_of(&other)
                ))),
            })
            .collect()
    }

    /// Sends a take-it-or-leave-it menu to one agent.
    pub fn offer(&mut self, agent: usize, options: Vec<OfferOption>) -> Result<OfferReply> {
        if agent >= self.sessions.len() {
            return Err(Error::Parameter(format!("no agent {agent}")));
        }
        if self.rho.is_none() {
            self.handshake(1.0)?;
        }
        let count = options.len();
        let msg = Message::Offer {
            session: self.sessions[agent].id.clone(),
            options,
        };
        send(&mut self.sessions[agent].writer, &msg)?;
        match self.receive(agent)? {
            Message::Accept { index, .. } if index < count => Ok(OfferReply::Accept(index)),
            Message::Decline { .. } => Ok(OfferReply::Decline),
            other => Err(Error::Protocol(format!(
                "agent {agent} answered an offer with {}",
                kind_of(&other)
            ))),
        }
    }

    /// Ends every session.
    pub fn close(mut self) -> Result<()> {
        for s in &mut self.sessions {
            send(&mut s.writer, &Message::Bye { session: s.id.clone() })?;
        }
        Ok(())
    }
}

impl AgentPool for RemotePool {
    fn agent_count(&self) -> usize {
        self.sessions.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn query(
        &mut self,
        iteration: usize,
        prices: &[Vec<f64>],
        z: &[f64],
        rho: f64,
    ) -> Result<Vec<Vec<f64>>> {
        self.query_agents(iteration as u64, prices, z, rho)
    }
}

/// Listen address from the environment, or the default.
pub fn default_listen_address() -> String {
    std::env::var(LISTEN_ENV).unwrap_or_else(|_| DEFAULT_LISTEN.to_string())
}
