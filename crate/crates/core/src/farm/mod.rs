// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
// License for the specific language governing permissions and limitations
// under the License.

//! Fitness backends.
//!
//! [`SequentialBackend`] evaluates in the calling thread. [`Farm`] is a
//! master/worker pool: the master ships the graph and parameters once in a
//! HELLO, then hands out one EVAL per idle worker and collects RESULTs,
//! always refilling whichever worker answered first. Workers are threads,
//! child processes on stdin/stdout, or child processes on loopback TCP.

pub mod protocol;
pub mod speedup;

use std::fmt;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::belonging::LogisticParams;
use crate::ga::{decode, Genotype};
use crate::graph::DirectedGraph;
use crate::qov::{qov, QovError};

use protocol::{read_message, write_message, Message, PROTOCOL_VERSION};

pub use speedup::{measure_speedup, MeasureError, SpeedupRecord};

/// How long the master waits for every worker to acknowledge HELLO.
pub const STARTUP_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("cannot evaluate an empty batch")]
    EmptyBatch,
    #[error("worker startup failed: {0}")]
    Startup(String),
    #[error("protocol version mismatch: master speaks {expected}, worker speaks {found}")]
    VersionMismatch { expected: u8, found: u8 },
    #[error("lost jobs {job_ids:?}: {reason}")]
    LostJobs { job_ids: Vec<u64>, reason: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("evaluation of job {job_id} failed: {message}")]
    Evaluation { job_id: u64, message: String },
    #[error("farm is unusable after an earlier failure")]
    Poisoned,
    #[error(transparent)]
    Qov(#[from] QovError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Anything the GA can ask for fitness values.
pub trait FitnessBackend {
    /// Fitness of every genotype, in input order.
    fn evaluate_batch(&mut self, genotypes: &[Genotype]) -> Result<Vec<f64>, BackendError>;
}

/// Immutable state every evaluator holds: the graph, the logistic
/// parameters, and an artificial cost multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    pub graph: DirectedGraph,
    pub params: LogisticParams,
    /// Number of times each fitness is recomputed; `0` and `1` both mean once.
    pub busywork: u32,
}

impl EvalContext {
    pub fn new(graph: DirectedGraph, params: LogisticParams) -> Self {
        Self {
            graph,
            params,
            busywork: 1,
        }
    }

    pub fn with_busywork(mut self, busywork: u32) -> Self {
        self.busywork = busywork;
        self
    }
}

/// Per-genotype fitness function run by workers.
pub trait Evaluate: Send {
    fn evaluate(&self, genotype: &Genotype) -> Result<f64, String>;
}

impl Evaluate for EvalContext {
    fn evaluate(&self, genotype: &Genotype) -> Result<f64, String> {
        let cover = decode(genotype);
        let mut total = 0.0;
        for _ in 0..self.busywork.max(1) {
            let q = qov(
                std::hint::black_box(&self.graph),
                std::hint::black_box(&cover),
                self.params,
            )
            .map_err(|e| e.to_string())?;
            total = std::hint::black_box(q.total);
        }
        Ok(total)
    }
}

/// Evaluates in the caller's thread, in input order.
pub struct SequentialBackend {
    context: EvalContext,
}

impl SequentialBackend {
    pub fn new(context: EvalContext) -> Self {
        Self { context }
    }
}

impl FitnessBackend for SequentialBackend {
    fn evaluate_batch(&mut self, genotypes: &[Genotype]) -> Result<Vec<f64>, BackendError> {
        if genotypes.is_empty() {
            return Err(BackendError::EmptyBatch);
        }
        genotypes
            .iter()
            .enumerate()
            .map(|(job, g)| {
                self.context.evaluate(g).map_err(|message| BackendError::Evaluation {
                    job_id: job as u64,
                    message,
                })
            })
            .collect()
    }
}

/// Worker side of the protocol with the standard evaluator.
pub fn serve<R: Read, W: Write>(reader: R, writer: W) -> Result<(), BackendError> {
    serve_with(reader, writer, |ctx| Box::new(ctx))
}

/// Worker loop: answer HELLO, then evaluate EVALs until SHUTDOWN or end of
/// input. `make` turns the received context into the evaluator.
pub fn serve_with<R, W, F>(reader: R, writer: W, make: F) -> Result<(), BackendError>
where
    R: Read,
    W: Write,
    F: FnOnce(EvalContext) -> Box<dyn Evaluate>,
{
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let hello = read_message(&mut reader)?
        .ok_or_else(|| BackendError::Startup("stream closed before HELLO".into()))?;
    let version_only = Message::Hello {
        version: PROTOCOL_VERSION,
        context: None,
    };
    let context = match hello {
        Message::Hello {
            version,
            context: Some(ctx),
        } if version == PROTOCOL_VERSION => ctx,
        Message::Hello { version, .. } => {
            write_message(&mut writer, &version_only)?;
            return Err(BackendError::VersionMismatch {
                expected: PROTOCOL_VERSION,
                found: version,
            });
        }
        other => return Err(BackendError::Protocol(format!("expected HELLO, got {other:?}"))),
    };
    let evaluator = make(context);
    write_message(&mut writer, &version_only)?;

    while let Some(msg) = read_message(&mut reader)? {
        match msg {
            Message::Eval { job_id, genotype } => {
                let reply = match evaluator.evaluate(&genotype) {
                    Ok(fitness) => Message::Result { job_id, fitness },
                    Err(message) => Message::Error { job_id, message },
                };
                write_message(&mut writer, &reply)?;
            }
            Message::Shutdown => break,
            other => return Err(BackendError::Protocol(format!("unexpected {other:?}"))),
        }
    }
    Ok(())
}

/// Connection kind between master and workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Worker threads in this process joined by OS pipes.
    InProcess,
    /// Child processes speaking over stdin/stdout.
    Pipe,
    /// Child processes connecting back to a loopback listener.
    Tcp,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inprocess" | "in-process" | "thread" => Ok(Self::InProcess),
            "pipe" => Ok(Self::Pipe),
            "tcp" => Ok(Self::Tcp),
            other => Err(format!("unknown transport {other:?} (expected pipe, tcp or inprocess)")),
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::InProcess => "inprocess",
            Self::Pipe => "pipe",
            Self::Tcp => "tcp",
        })
    }
}

pub type LinkReader = Box<dyn Read + Send>;
pub type LinkWriter = Box<dyn Write + Send>;

enum Event {
    Message(Message),
    Closed(String),
}

struct Worker {
    writer: Option<BufWriter<LinkWriter>>,
}

/// Master side of a worker pool.
pub struct Farm {
    workers: Vec<Worker>,
    events: Receiver<(usize, Event)>,
    children: Vec<Child>,
    threads: Vec<JoinHandle<()>>,
    timeout: Option<Duration>,
    trace: Vec<usize>,
    poisoned: bool,
}

fn spawn_reader(idx: usize, mut reader: LinkReader, tx: Sender<(usize, Event)>) {
    thread::spawn(move || loop {
        let event = match read_message(&mut reader) {
            Ok(Some(msg)) => Event::Message(msg),
            Ok(None) => Event::Closed("connection closed".into()),
            Err(e) => Event::Closed(e.to_string()),
        };
        let last = matches!(event, Event::Closed(_));
        if tx.send((idx, event)).is_err() || last {
            break;
        }
    });
}

impl Farm {
    /// Handshakes with already-connected workers.
    pub fn from_links(
        links: Vec<(LinkReader, LinkWriter)>,
        context: &EvalContext,
    ) -> Result<Self, BackendError> {
        if links.is_empty() {
            return Err(BackendError::Startup("a farm needs at least one worker".into()));
        }
        let (tx, rx) = mpsc::channel();
        let hello = Message::Hello {
            version: PROTOCOL_VERSION,
            context: Some(context.clone()),
        };
        let mut workers = Vec::with_capacity(links.len());
        for (idx, (reader, writer)) in links.into_iter().enumerate() {
            spawn_reader(idx, reader, tx.clone());
            let mut writer = BufWriter::new(writer);
            // a worker that already died shows up as a Closed event below
            let _ = write_message(&mut writer, &hello);
            workers.push(Worker {
                writer: Some(writer),
            });
        }
        let mut farm = Self {
            workers,
            events: rx,
            children: Vec::new(),
            threads: Vec::new(),
            timeout: None,
            trace: Vec::new(),
            poisoned: false,
        };
        farm.await_acks()?;
        Ok(farm)
    }

    fn await_acks(&mut self) -> Result<(), BackendError> {
        let deadline = Instant::now() + STARTUP_TIMEOUT;
        let mut acked = vec![false; self.workers.len()];
        while acked.iter().any(|a| !a) {
            let left = deadline.saturating_duration_since(Instant::now());
            let (idx, event) = match self.events.recv_timeout(left) {
                Ok(ev) => ev,
                Err(_) => {
                    let missing: Vec<usize> = (0..acked.len()).filter(|&i| !acked[i]).collect();
                    return Err(BackendError::Startup(format!("workers {missing:?} did not answer HELLO")));
                }
            };
            match event {
                Event::Message(Message::Hello { version, .. }) if version == PROTOCOL_VERSION => {
                    acked[idx] = true
                }
                Event::Message(Message::Hello { version, .. }) => {
                    return Err(BackendError::VersionMismatch {
                        expected: PROTOCOL_VERSION,
                        found: version,
                    })
                }
                Event::Message(other) => {
                    return Err(BackendError::Startup(format!(
                        "worker {idx} answered HELLO with {other:?}"
                    )))
                }
                Event::Closed(reason) => {
                    return Err(BackendError::Startup(format!("worker {idx} failed: {reason}")))
                }
            }
        }
        Ok(())
    }

    /// `count` worker threads in this process, each behind a pair of OS pipes.
    pub fn in_process(count: usize, context: &EvalContext) -> Result<Self, BackendError> {
        Self::in_process_with(count, context, |ctx| Box::new(ctx))
    }

    /// Like [`Farm::in_process`] with a custom evaluator per worker.
    pub fn in_process_with<F>(count: usize, context: &EvalContext, make: F) -> Result<Self, BackendError>
    where
        F: Fn(EvalContext) -> Box<dyn Evaluate> + Clone + Send + 'static,
    {
        let mut links = Vec::with_capacity(count);
        let mut threads = Vec::with_capacity(count);
        for _ in 0..count {
            let (to_worker_r, to_worker_w) = io::pipe()?;
            let (to_master_r, to_master_w) = io::pipe()?;
            let make = make.clone();
            threads.push(thread::spawn(move || {
                let _ = serve_with(to_worker_r, to_master_w, make);
            }));
            links.push((Box::new(to_master_r) as LinkReader, Box::new(to_worker_w) as LinkWriter));
        }
        let mut farm = Self::from_links(links, context)?;
        farm.threads = threads;
        Ok(farm)
    }

    /// `count` child processes of `worker_exe`, connected over their
    /// standard streams.
    pub fn spawn_pipe(worker_exe: &Path, count: usize, context: &EvalContext) -> Result<Self, BackendError> {
        let mut children = Vec::with_capacity(count);
        let mut links = Vec::with_capacity(count);
        for _ in 0..count {
            let mut child = Command::new(worker_exe)
                .args(["--worker", "--transport", "pipe", "--connect", "stdio"])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| BackendError::Startup(format!("cannot spawn {}: {e}", worker_exe.display())))?;
            let stdin = child.stdin.take().unwrap();
            let stdout = child.stdout.take().unwrap();
            links.push((Box::new(stdout) as LinkReader, Box::new(stdin) as LinkWriter));
            children.push(child);
        }
        match Self::from_links(links, context) {
            Ok(mut farm) => {
                farm.children = children;
                Ok(farm)
            }
            Err(e) => {
                reap(&mut children);
                Err(e)
            }
        }
    }

    /// `count` child processes of `worker_exe` that connect to a fresh
    /// listener on 127.0.0.1.
    pub fn spawn_tcp(worker_exe: &Path, count: usize, context: &EvalContext) -> Result<Self, BackendError> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?.to_string();
        let mut children = Vec::with_capacity(count);
        for _ in 0..count {
            let child = Command::new(worker_exe)
                .args(["--worker", "--transport", "tcp", "--connect", &addr])
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| BackendError::Startup(format!("cannot spawn {}: {e}", worker_exe.display())));
            match child {
                Ok(c) => children.push(c),
                Err(e) => {
                    reap(&mut children);
                    return Err(e);
                }
            }
        }
        let links = accept_all(&listener, count, &mut children);
        let links = match links {
            Ok(l) => l,
            Err(e) => {
                reap(&mut children);
                return Err(e);
            }
        };
        match Self::from_links(links, context) {
            Ok(mut farm) => {
                farm.children = children;
                Ok(farm)
            }
            Err(e) => {
                reap(&mut children);
                Err(e)
            }
        }
    }

    /// Starts `count` workers over `transport`. Process transports need the
    /// worker executable.
    pub fn launch(
        transport: Transport,
        count: usize,
        context: &EvalContext,
        worker_exe: Option<&Path>,
    ) -> Result<Self, BackendError> {
        let exe = || -> Result<PathBuf, BackendError> {
            match worker_exe {
                Some(p) => Ok(p.to_path_buf()),
                None => std::env::current_exe().map_err(BackendError::from),
            }
        };
        match transport {
            Transport::InProcess => Self::in_process(count, context),
            Transport::Pipe => Self::spawn_pipe(&exe()?, count, context),
            Transport::Tcp => Self::spawn_tcp(&exe()?, count, context),
        }
    }

    /// Fails a batch if no result arrives for this long.
    pub fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    /// Worker index that evaluated each job of the last successful batch.
    pub fn last_trace(&self) -> &[usize] {
        &self.trace
    }

    fn send(&mut self, worker: usize, msg: &Message) -> io::Result<()> {
        match self.workers[worker].writer.as_mut() {
            Some(w) => write_message(w, msg),
            None => Err(io::ErrorKind::BrokenPipe.into()),
        }
    }

    fn run_batch(&mut self, genotypes: &[Genotype]) -> Result<Vec<f64>, BackendError> {
        let total = genotypes.len();
        let mut results: Vec<Option<f64>> = vec![None; total];
        let mut trace = vec![usize::MAX; total];
        let mut in_flight: Vec<Option<u64>> = vec![None; self.workers.len()];
        let mut next = 0usize;
        let mut done = 0usize;

        let lost = |in_flight: &[Option<u64>], reason: String| BackendError::LostJobs {
            job_ids: in_flight.iter().flatten().copied().collect(),
            reason,
        };

        let dispatch = |farm: &mut Self, worker: usize, in_flight: &mut [Option<u64>], next: &mut usize| {
            if *next < total {
                let job_id = *next as u64;
                *next += 1;
                in_flight[worker] = Some(job_id);
                let msg = Message::Eval {
                    job_id,
                    genotype: genotypes[job_id as usize].clone(),
                };
                if let Err(e) = farm.send(worker, &msg) {
                    return Err(BackendError::LostJobs {
                        job_ids: vec![job_id],
                        reason: format!("worker {worker} unreachable: {e}"),
                    });
                }
            }
            Ok(())
        };

        for worker in 0..self.workers.len() {
            dispatch(self, worker, &mut in_flight, &mut next)?;
        }

        while done < total {
            let event = match self.timeout {
                Some(t) => match self.events.recv_timeout(t) {
                    Ok(ev) => ev,
                    Err(RecvTimeoutError::Timeout) => {
                        return Err(lost(&in_flight, format!("no result within {t:?}")))
                    }
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(lost(&in_flight, "all workers gone".into()))
                    }
                },
                None => self
                    .events
                    .recv()
                    .map_err(|_| lost(&in_flight, "all workers gone".into()))?,
            };
            match event {
                (worker, Event::Message(Message::Result { job_id, fitness })) => {
                    if in_flight[worker] != Some(job_id) {
                        return Err(BackendError::Protocol(format!(
                            "worker {worker} returned unrequested job {job_id}"
                        )));
                    }
                    in_flight[worker] = None;
                    results[job_id as usize] = Some(fitness);
                    trace[job_id as usize] = worker;
                    done += 1;
                    dispatch(self, worker, &mut in_flight, &mut next)?;
                }
                (_, Event::Message(Message::Error { job_id, message })) => {
                    return Err(BackendError::Evaluation { job_id, message })
                }
                (worker, Event::Message(other)) => {
                    return Err(BackendError::Protocol(format!("worker {worker} sent {other:?}")))
                }
                (worker, Event::Closed(reason)) => {
                    self.workers[worker].writer = None;
                    let job_ids: Vec<u64> = in_flight[worker].into_iter().collect();
                    if !job_ids.is_empty() || next < total {
                        return Err(BackendError::LostJobs {
                            job_ids: in_flight.iter().flatten().copied().collect(),
                            reason: format!("worker {worker} died: {reason}"),
                        });
                    }
                }
            }
        }
        self.trace = trace;
        Ok(results.into_iter().map(|r| r.unwrap()).collect())
    }
}

impl FitnessBackend for Farm {
    fn evaluate_batch(&mut self, genotypes: &[Genotype]) -> Result<Vec<f64>, BackendError> {
        if genotypes.is_empty() {
            return Err(BackendError::EmptyBatch);
        }
        if self.poisoned {
            return Err(BackendError::Poisoned);
        }
        let out = self.run_batch(genotypes);
        if out.is_err() {
            self.poisoned = true;
        }
        out
    }
}

impl Drop for Farm {
    fn drop(&mut self) {
        for worker in 0..self.workers.len() {
            let _ = self.send(worker, &Message::Shutdown);
            self.workers[worker].writer = None;
        }
        if self.poisoned {
            for child in &mut self.children {
                let _ = child.kill();
            }
        }
        for child in &mut self.children {
            let _ = child.wait();
        }
        if !self.poisoned {
            for t in self.threads.drain(..) {
                let _ = t.join();
            }
        }
    }
}

fn reap(children: &mut Vec<Child>) {
    for mut child in children.drain(..) {
        let _ = child.kill();
        let _ = child.wait();
    }
}

fn accept_all(
    listener: &TcpListener,
    count: usize,
    children: &mut [Child],
) -> Result<Vec<(LinkReader, LinkWriter)>, BackendError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + STARTUP_TIMEOUT;
    let mut links = Vec::with_capacity(count);
    while links.len() < count {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                links.push((Box::new(reader) as LinkReader, Box::new(stream) as LinkWriter));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                for child in children.iter_mut() {
                    if let Some(status) = child.try_wait()? {
                        return Err(BackendError::Startup(format!("worker exited early with {status}")));
                    }
                }
                if Instant::now() >= deadline {
                    return Err(BackendError::Startup(format!(
                        "only {} of {count} workers connected",
                        links.len()
                    )));
                }
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(links)
}

/// Entry point of a worker process.
pub fn run_worker(transport: Transport, connect: &str) -> Result<(), BackendError> {
    match transport {
        Transport::Pipe => {
            if connect != "stdio" && connect != "-" {
                return Err(BackendError::Startup(format!(
                    "pipe workers only connect to stdio, got {connect:?}"
                )));
            }
            serve(io::stdin().lock(), io::stdout().lock())
        }
        Transport::Tcp => {
            let stream = TcpStream::connect(connect)
                .map_err(|e| BackendError::Startup(format!("cannot connect to {connect}: {e}")))?;
            stream.set_nodelay(true)?;
            serve(stream.try_clone()?, stream)
        }
        Transport::InProcess => Err(BackendError::Startup(
            "in-process workers cannot be started as a process".into(),
        )),
    }
}
