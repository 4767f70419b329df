//! Splits batches across workers and reassembles the results in request order.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use tagfuzz_core::coverage::{CoverageSet, HarnessDescriptor, TargetHarness};

use crate::error::{Result, ServiceError};
use crate::protocol::{
    read_frame, write_frame, CaseResult, Envelope, Frame, JobRequest, JobResult, Kind, WorkerInfo,
};
use crate::worker::DEFAULT_TIMEOUT;

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Connection {
    fn open(addr: SocketAddr, timeout: Duration) -> std::io::Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    fn set_read_timeout(&self, t: Duration) -> std::io::Result<()> {
        self.reader.get_ref().set_read_timeout(Some(t))
    }

    fn call(&mut self, env: &Envelope) -> Result<Envelope> {
        write_frame(&mut self.writer, env)?;
        match read_frame(&mut self.reader)? {
            Frame::Message(reply) if reply.job_id == env.job_id => Ok(reply),
            Frame::Message(reply) => Err(ServiceError::Protocol(format!(
                "reply for job {} while waiting for {}",
                reply.job_id, env.job_id
            ))),
            Frame::Malformed { reason, .. } => Err(ServiceError::Protocol(reason)),
            Frame::Closed => Err(ServiceError::Protocol("connection closed".into())),
        }
    }
}

struct RemoteWorker {
    addr: SocketAddr,
    info: WorkerInfo,
    conn: Option<Connection>,
}

enum ShareOutcome {
    Done(Vec<CaseResult>),
    /// The worker is gone; its share must go elsewhere.
    Lost,
    Rejected(String),
}

/// Client side of the evaluation service.
pub struct Coordinator {
    workers: Vec<RemoteWorker>,
    next_job: u64,
    case_timeout: Duration,
}

impl Coordinator {
    /// Connects to every address and health-checks it. Unreachable workers are
    /// skipped; an empty result is [`ServiceError::NoWorkers`].
    pub fn connect<A: ToSocketAddrs>(addrs: &[A], case_timeout: Duration) -> Result<Self> {
        let mut c = Self {
            workers: Vec::new(),
            next_job: 1,
            case_timeout,
        };
        for a in addrs {
            for addr in a.to_socket_addrs()? {
                let _ = c.add_worker(addr);
            }
        }
        if c.workers.is_empty() {
            return Err(ServiceError::NoWorkers);
        }
        Ok(c)
    }

    pub fn with_default_timeout<A: ToSocketAddrs>(addrs: &[A]) -> Result<Self> {
        Self::connect(addrs, DEFAULT_TIMEOUT)
    }

    pub fn add_worker(&mut self, addr: SocketAddr) -> Result<WorkerInfo> {
        let mut conn = Connection::open(addr, Duration::from_secs(5))?;
        conn.set_read_timeout(Duration::from_secs(10))?;
        let job_id = self.job_id();
        let reply = conn.call(&Envelope {
            kind: Kind::Health,
            job_id,
            payload: Vec::new(),
        })?;
        if reply.kind != Kind::HealthReply {
            return Err(ServiceError::Protocol(format!("health check answered with {:?}", reply.kind)));
        }
        let info = WorkerInfo::from_envelope(&reply)?;
        self.workers.push(RemoteWorker {
            addr,
            info: info.clone(),
            conn: Some(conn),
        });
        Ok(info)
    }

    fn job_id(&mut self) -> u64 {
        let id = self.next_job;
        self.next_job += 1;
        id
    }

    pub fn alive(&self) -> usize {
        self.workers.iter().filter(|w| w.conn.is_some()).count()
    }

    pub fn workers(&self) -> impl Iterator<Item = (&SocketAddr, &WorkerInfo, bool)> {
        self.workers.iter().map(|w| (&w.addr, &w.info, w.conn.is_some()))
    }

    /// Evaluates `cases` on the live workers.
    ///
    /// Cases are dealt round-robin; a worker that drops its connection or stops
    /// answering is marked dead and its cases are dealt again among the rest.
    /// `worker_id` of the merged result lists every worker that contributed.
    pub fn submit_batch(&mut self, target_name: &str, cases: &[Vec<u8>]) -> Result<JobResult> {
        if self.alive() == 0 {
            return Err(ServiceError::NoWorkers);
        }
        if cases.is_empty() {
            return Err(ServiceError::Protocol("batch has no test cases".into()));
        }
        let first_job = self.next_job;
        let slots: Mutex<Vec<Option<CaseResult>>> = Mutex::new(vec![None; cases.len()]);
        let mut contributors: Vec<String> = Vec::new();
        let mut pending: Vec<usize> = (0..cases.len()).collect();
        while !pending.is_empty() {
            let live = self.alive();
            if live == 0 {
                return Err(ServiceError::Worker {
                    worker: "all".into(),
                    message: format!("every worker failed with {} cases outstanding", pending.len()),
                });
            }
            let mut shares: Vec<Vec<usize>> = vec![Vec::new(); live];
            for (k, &case) in pending.iter().enumerate() {
                shares[k % live].push(case);
            }
            let timeout = self.case_timeout;
            // Every sub-batch gets its own id so retries never reuse one on a connection.
            let first_id = self.next_job;
            self.next_job += live as u64;
            let mut assigned = Vec::new();
            for (k, (w, share)) in self.workers.iter_mut().filter(|w| w.conn.is_some()).zip(shares).enumerate() {
                if !share.is_empty() {
                    assigned.push((w, share, first_id + k as u64));
                }
            }
            let outcomes: Vec<(String, Vec<usize>, ShareOutcome)> = thread::scope(|s| {
                let handles: Vec<_> = assigned
                    .into_iter()
                    .map(|(w, share, job_id)| {
                        let slots = &slots;
                        s.spawn(move || {
                            let outcome = run_share(w, job_id, target_name, cases, &share, timeout);
                            if let ShareOutcome::Done(results) = &outcome {
                                let mut slots = slots.lock().unwrap_or_else(|e| e.into_inner());
                                for (&i, r) in share.iter().zip(results) {
                                    slots[i] = Some(r.clone());
                                }
                            }
                            (w.info.worker_id.clone(), share, outcome)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("share thread")).collect()
            });
            pending.clear();
            for (worker, share, outcome) in outcomes {
                match outcome {
                    ShareOutcome::Done(_) => {
                        if !contributors.contains(&worker) {
                            contributors.push(worker);
                        }
                    }
                    ShareOutcome::Lost => pending.extend(share),
                    ShareOutcome::Rejected(message) => return Err(ServiceError::Worker { worker, message }),
                }
            }
            pending.sort_unstable();
        }
        let results = slots
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .into_iter()
            .map(|r| r.expect("every case answered"))
            .collect();
        Ok(JobResult {
            job_id: first_job,
            worker_id: contributors.join(","),
            results,
        })
    }
}

fn run_share(
    w: &mut RemoteWorker,
    job_id: u64,
    target_name: &str,
    cases: &[Vec<u8>],
    share: &[usize],
    case_timeout: Duration,
) -> ShareOutcome {
    let Some(conn) = w.conn.as_mut() else {
        return ShareOutcome::Lost;
    };
    let request = JobRequest {
        job_id,
        target_name: target_name.to_string(),
        test_cases: share.iter().map(|&i| cases[i].clone()).collect(),
    };
    // Each case may use its full timeout; the slack covers transfer.
    let budget = case_timeout * (share.len() as u32 + 1) + Duration::from_secs(5);
    let reply = conn.set_read_timeout(budget).map_err(ServiceError::from).and_then(|_| conn.call(&request.to_envelope()));
    let reply = match reply {
        Ok(r) => r,
        Err(_) => {
            w.conn = None;
            return ShareOutcome::Lost;
        }
    };
    match reply.kind {
        Kind::JobResult => match JobResult::from_envelope(&reply) {
            Ok(res) if res.results.len() == share.len() => ShareOutcome::Done(res.results),
            Ok(res) => {
                w.conn = None;
                ShareOutcome::Rejected(format!("{} results for {} cases", res.results.len(), share.len()))
            }
            Err(e) => {
                w.conn = None;
                ShareOutcome::Rejected(e.to_string())
            }
        },
        Kind::Error => ShareOutcome::Rejected(String::from_utf8_lossy(&reply.payload).into_owned()),
        other => {
            w.conn = None;
            ShareOutcome::Rejected(format!("unexpected reply {other:?}"))
        }
    }
}

/// A [`TargetHarness`] that evaluates remotely, one case per call.
pub struct RemoteHarness {
    coordinator: Mutex<Coordinator>,
    descriptor: HarnessDescriptor,
}

impl RemoteHarness {
    pub fn new(coordinator: Coordinator, descriptor: HarnessDescriptor) -> Self {
        Self {
            coordinator: Mutex::new(coordinator),
            descriptor,
        }
    }

    pub fn execute_batch(&self, cases: &[Vec<u8>]) -> Result<JobResult> {
        self.coordinator
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .submit_batch(&self.descriptor.name, cases)
    }
}

impl TargetHarness for RemoteHarness {
    fn descriptor(&self) -> HarnessDescriptor {
        self.descriptor.clone()
    }

    fn execute(&self, test_case: &[u8]) -> tagfuzz_core::Result<CoverageSet> {
        let mut res = self
            .execute_batch(&[test_case.to_vec()])
            .map_err(|e| tagfuzz_core::Error::Harness(e.to_string()))?;
        let r = res.results.pop().expect("one result");
        if r.failed {
            return Err(tagfuzz_core::Error::Harness("remote execution failed".into()));
        }
        Ok(r.coverage)
    }
}
