//! Line-delimited JSON environment protocol.
//!
//! ```text
//! → {"cmd":"spec"}                 ← {"obs_dim":11,"act_dim":3,"m":2,"horizon":1000}
//! → {"cmd":"reset","seed":0}       ← {"obs":[...]}
//! → {"cmd":"step","action":[...]}  ← {"obs":[...],"reward":[...],"terminated":false,"truncated":false}
//! → {"cmd":"close"}                ← {"ok":true}
//! ```
//!
//! One message per line, replies in request order. A request the server
//! cannot handle gets `{"error":"..."}` and the session continues.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment, StepResult};
use crate::error::{check_dim, Error, Result};
use crate::pref::RewardVector;

/// Reference point used for bridged environments without one of their own.
pub const BRIDGE_HV_REFERENCE: f64 = -100.0;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
enum Request {
    Spec,
    Reset { seed: u64 },
    Step { action: Vec<f64> },
    Close,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpecReply {
    obs_dim: usize,
    act_dim: usize,
    m: usize,
    horizon: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ResetReply {
    obs: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepReply {
    obs: Vec<f64>,
    reward: Vec<f64>,
    terminated: bool,
    truncated: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CloseReply {
    ok: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorReply {
    error: String,
}

/// Answers protocol requests from `input` on `output` until `close` or end
/// of input.
pub fn serve<E, R, W>(env: &mut E, input: R, mut output: W) -> Result<()>
where
    E: Environment + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Err(e) => serde_json::to_string(&ErrorReply {
                error: format!("malformed request: {e}"),
            })?,
            Ok(Request::Close) => {
                writeln!(output, "{}", serde_json::to_string(&CloseReply { ok: true })?)?;
                output.flush()?;
                return Ok(());
            }
            Ok(req) => match handle(env, req) {
                Ok(json) => json,
                Err(e) => serde_json::to_string(&ErrorReply { error: e.to_string() })?,
            },
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

fn handle<E: Environment + ?Sized>(env: &mut E, req: Request) -> Result<String> {
    Ok(match req {
        Request::Spec => {
            let s = env.spec();
            serde_json::to_string(&SpecReply {
                obs_dim: s.obs_dim,
                act_dim: s.act_dim,
                m: s.m,
                horizon: s.horizon,
            })?
        }
        Request::Reset { seed } => serde_json::to_string(&ResetReply { obs: env.reset(seed)? })?,
        Request::Step { action } => {
            let s = env.step(&action)?;
            serde_json::to_string(&StepReply {
                obs: s.observation,
                reward: s.reward.into(),
                terminated: s.terminated,
                truncated: s.truncated,
            })?
        }
        Request::Close => unreachable!("handled by serve"),
    })
}

/// An environment reached over the protocol.
pub struct ProtocolClient {
    spec: EnvSpec,
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    closed: bool,
}

impl std::fmt::Debug for ProtocolClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProtocolClient").field("spec", &self.spec).finish_non_exhaustive()
    }
}

impl ProtocolClient {
    /// Performs the `spec` handshake over an existing byte stream.
    pub fn handshake<R, W>(id: &str, reader: R, writer: W) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut client = Self {
            spec: EnvSpec {
                id: id.to_owned(),
                obs_dim: 0,
                act_dim: 0,
                m: 0,
                horizon: 0,
                hv_reference: Vec::new(),
            },
            reader: Box::new(BufReader::new(reader)),
            writer: Box::new(writer),
            child: None,
            closed: false,
        };
        let reply: SpecReply = client.call(&Request::Spec)?;
        if reply.m < 2 || reply.horizon == 0 {
            return Err(Error::Protocol(format!("invalid spec reply {reply:?}")));
        }
        client.spec.obs_dim = reply.obs_dim;
        client.spec.act_dim = reply.act_dim;
        client.spec.m = reply.m;
        client.spec.horizon = reply.horizon;
        client.spec.hv_reference = vec![BRIDGE_HV_REFERENCE; reply.m];
        Ok(client)
    }

    /// Launches `command` and talks to it over its stdin/stdout.
    pub fn spawn(id: &str, command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::handshake(id, stdout, stdin)?;
        client.child = Some(child);
        Ok(client)
    }

    pub fn connect_tcp(id: &str, addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        let reader = stream.try_clone()?;
        Self::handshake(id, reader, stream)
    }

    pub fn set_hv_reference(&mut self, reference: Vec<f64>) -> Result<()> {
        check_dim(self.spec.m, reference.len())?;
        self.spec.hv_reference = reference;
        Ok(())
    }

    fn call<T: for<'de> Deserialize<'de>>(&mut self, req: &Request) -> Result<T> {
        if self.closed {
            return Err(Error::Protocol("session closed".into()));
        }
        writeln!(self.writer, "{}", serde_json::to_string(req)?)?;
        self.writer.flush()?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(Error::Protocol("server closed the stream".into()));
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("unparseable reply `{}`: {e}", line.trim())))?;
        if let Some(err) = value.get("error") {
            return Err(Error::Protocol(format!("server error: {err}")));
        }
        serde_json::from_value(value).map_err(|e| Error::Protocol(format!("unexpected reply `{}`: {e}", line.trim())))
    }

    /// Sends `close` and waits for the acknowledgement.
    pub fn close(&mut self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        let reply: CloseReply = self.call(&Request::Close)?;
        self.closed = true;
        if let Some(mut child) = self.child.take() {
            child.wait()?;
        }
        if reply.ok {
            Ok(())
        } else {
            Err(Error::Protocol("close not acknowledged".into()))
        }
    }
}

impl Drop for ProtocolClient {
    fn drop(&mut self) {
        if !self.closed {
            let _ = self.close();
        }
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Environment for ProtocolClient {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let reply: ResetReply = self.call(&Request::Reset { seed })?;
        check_dim(self.spec.obs_dim, reply.obs.len())?;
        Ok(reply.obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_dim(self.spec.act_dim, action.len())?;
        let reply: StepReply = self.call(&Request::Step {
            action: action.to_vec(),
        })?;
        check_dim(self.spec.obs_dim, reply.obs.len())?;
        check_dim(self.spec.m, reply.reward.len())?;
        Ok(StepResult {
            observation: reply.obs,
            reward: RewardVector::new(reply.reward)?,
            terminated: reply.terminated,
            truncated: reply.truncated,
        })
    }
}

/// Fixed-output environment for protocol tests: observation
/// `[0.25, −0.5, 1.0]`, reward `(1, −1)`, three-step episodes.
#[derive(Debug, Clone)]
pub struct StubEnv {
    spec: EnvSpec,
    t: Option<usize>,
}

impl StubEnv {
    pub const OBSERVATION: [f64; 3] = [0.25, -0.5, 1.0];

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: "stub".into(),
                obs_dim: 3,
                act_dim: 2,
                m: 2,
                horizon: 3,
                hv_reference: vec![BRIDGE_HV_REFERENCE; 2],
            },
            t: None,
        }
    }
}

impl Default for StubEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for StubEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
        self.t = Some(0);
        Ok(Self::OBSERVATION.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let t = self.t.ok_or_else(|| Error::Env("step before reset".into()))?;
        super::clip_action(action, self.spec.act_dim)?;
        let t = t + 1;
        let truncated = t >= self.spec.horizon;
        self.t = if truncated { None } else { Some(t) };
        Ok(StepResult {
            observation: Self::OBSERVATION.to_vec(),
            reward: RewardVector::new(vec![1.0, -1.0])?,
            terminated: false,
            truncated,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BridgeReport {
    pub spec: EnvSpec,
    pub steps: usize,
    pub checks: Vec<(String, bool)>,
}

impl BridgeReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }
}

/// Exercises spec/reset/step/close against a connected server and records
/// one pass/fail entry per conformance check. Steps with a zero action until
/// the episode ends or `max_steps` is reached.
pub fn bridge_check(mut client: ProtocolClient, expected: Option<(usize, usize, usize)>, max_steps: usize) -> Result<BridgeReport> {
    let spec = client.spec().clone();
    let mut checks = Vec::new();
    if let Some((obs, act, m)) = expected {
        checks.push((
            format!("spec ({}, {}, {}) == ({obs}, {act}, {m})", spec.obs_dim, spec.act_dim, spec.m),
            (spec.obs_dim, spec.act_dim, spec.m) == (obs, act, m),
        ));
    }
    let first = client.reset(0);
    checks.push(("reset observation has obs_dim entries".into(), first.is_ok()));
    let again = client.reset(0);
    checks.push((
        "reset is deterministic for a fixed seed".into(),
        matches!((&first, &again), (Ok(a), Ok(b)) if a == b),
    ));
    let zero = vec![0.0; spec.act_dim];
    let mut steps = 0;
    let mut step_ok = again.is_ok();
    while step_ok && steps < max_steps.min(spec.horizon) {
        match client.step(&zero) {
            Ok(s) => {
                steps += 1;
                if s.done() {
                    break;
                }
            }
            Err(_) => step_ok = false,
        }
    }
    checks.push(("step replies carry obs_dim observations and m rewards".into(), step_ok && steps > 0));
    checks.push(("close acknowledged".into(), client.close().is_ok()));
    Ok(BridgeReport { spec, steps, checks })
}
