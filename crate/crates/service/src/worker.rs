//! Evaluation worker: executes test cases one at a time and returns coverage.

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tagfuzz_core::coverage::{CoverageSet, TargetHarness};

use crate::error::Result;
use crate::protocol::{
    error_envelope, read_frame, write_frame, CaseResult, Frame, JobRequest, JobResult, Kind, WorkerInfo,
};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

pub struct Worker {
    id: String,
    harness: Arc<dyn TargetHarness>,
    timeout: Duration,
    exec: Mutex<()>,
}

impl Worker {
    pub fn new(id: impl Into<String>, harness: Arc<dyn TargetHarness>, timeout: Duration) -> Self {
        Self {
            id: id.into(),
            harness,
            timeout,
            exec: Mutex::new(()),
        }
    }

    pub fn info(&self) -> WorkerInfo {
        WorkerInfo {
            worker_id: self.id.clone(),
            target_name: self.harness.descriptor().name,
        }
    }

    /// Runs one case on a helper thread. A case that errors or outlives the
    /// timeout is reported as failed with empty coverage; a timed-out thread is
    /// abandoned.
    pub fn run_case(&self, case: &[u8]) -> CaseResult {
        let harness = Arc::clone(&self.harness);
        let input = case.to_vec();
        let (tx, rx) = mpsc::channel();
        let start = Instant::now();
        let spawned = thread::Builder::new()
            .name("tagfuzz-case".into())
            .spawn(move || {
                let _ = tx.send(harness.execute(&input));
            });
        let outcome = match spawned {
            Ok(_) => rx.recv_timeout(self.timeout).ok().and_then(|r| r.ok()),
            Err(_) => None,
        };
        let wall_time = start.elapsed();
        match outcome {
            Some(coverage) => CaseResult {
                coverage,
                wall_time,
                failed: false,
            },
            None => CaseResult {
                coverage: CoverageSet::new(),
                wall_time,
                failed: true,
            },
        }
    }

    /// Executes a whole job while holding the execution lock, so jobs from
    /// different connections never interleave.
    pub fn run_job(&self, request: &JobRequest) -> JobResult {
        let _guard = self.exec.lock().unwrap_or_else(|e| e.into_inner());
        JobResult {
            job_id: request.job_id,
            worker_id: self.id.clone(),
            results: request.test_cases.iter().map(|c| self.run_case(c)).collect(),
        }
    }

    /// Serves one connection until the peer closes it or `killed` is set.
    pub fn handle_connection(&self, stream: TcpStream, killed: &AtomicBool) -> Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = BufWriter::new(stream);
        let target = self.harness.descriptor().name;
        loop {
            let reply = match read_frame(&mut reader)? {
                Frame::Closed => return Ok(()),
                Frame::Malformed { job_id, reason } => error_envelope(job_id, &reason),
                Frame::Message(env) => match env.kind {
                    Kind::Health => self.info().to_envelope(env.job_id),
                    Kind::Job => match JobRequest::from_envelope(&env) {
                        Ok(req) if req.target_name != target => error_envelope(
                            env.job_id,
                            &format!("worker serves target {target:?}, job asks for {:?}", req.target_name),
                        ),
                        Ok(req) => self.run_job(&req).to_envelope(),
                        Err(e) => error_envelope(env.job_id, &e.to_string()),
                    },
                    other => error_envelope(env.job_id, &format!("unexpected message type {other:?}")),
                },
            };
            if killed.load(Ordering::SeqCst) {
                return Ok(());
            }
            write_frame(&mut writer, &reply)?;
        }
    }
}

/// Makes a running server drop every connection without replying, as if the
/// process had died.
#[derive(Clone)]
pub struct KillSwitch {
    killed: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    addr: SocketAddr,
}

impl KillSwitch {
    pub fn kill(&self) {
        if self.killed.swap(true, Ordering::SeqCst) {
            return;
        }
        for c in self.connections.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
    }

    pub fn is_killed(&self) -> bool {
        self.killed.load(Ordering::SeqCst)
    }
}

/// A worker listening on a socket, one thread per connection.
pub struct WorkerServer {
    addr: SocketAddr,
    switch: KillSwitch,
    accept: Option<JoinHandle<()>>,
}

impl WorkerServer {
    pub fn spawn(listener: TcpListener, worker: Arc<Worker>) -> Result<Self> {
        let addr = listener.local_addr()?;
        let switch = KillSwitch {
            killed: Arc::new(AtomicBool::new(false)),
            connections: Arc::new(Mutex::new(Vec::new())),
            addr,
        };
        let s = switch.clone();
        let accept = thread::Builder::new()
            .name("tagfuzz-accept".into())
            .spawn(move || accept_loop(listener, worker, s))?;
        Ok(Self {
            addr,
            switch,
            accept: Some(accept),
        })
    }

    /// Binds `addr` (port 0 picks a free one) and starts serving.
    pub fn bind(addr: &str, worker: Arc<Worker>) -> Result<Self> {
        Self::spawn(TcpListener::bind(addr)?, worker)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn kill_switch(&self) -> KillSwitch {
        self.switch.clone()
    }

    pub fn kill(&self) {
        self.switch.kill();
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WorkerServer {
    fn drop(&mut self) {
        self.switch.kill();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, worker: Arc<Worker>, switch: KillSwitch) {
    for stream in listener.incoming() {
        if switch.is_killed() {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        match stream.try_clone() {
            Ok(c) => switch.connections.lock().unwrap_or_else(|e| e.into_inner()).push(c),
            Err(_) => continue,
        }
        let worker = Arc::clone(&worker);
        let killed = Arc::clone(&switch.killed);
        let _ = thread::Builder::new()
            .name("tagfuzz-conn".into())
            .spawn(move || {
                let _ = worker.handle_connection(stream, &killed);
            });
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use tagfuzz_core::coverage::{toy_target_execute, HarnessDescriptor, ToyTarget};

    use super::*;
    use crate::protocol::Envelope;

    struct Sleepy;

    impl TargetHarness for Sleepy {
        fn descriptor(&self) -> HarnessDescriptor {
            HarnessDescriptor {
                name: "sleepy".into(),
                modules: Vec::new(),
            }
        }

        fn execute(&self, case: &[u8]) -> tagfuzz_core::Result<CoverageSet> {
            if case == b"hang" {
                thread::sleep(Duration::from_secs(2));
            }
            if case == b"crash" {
                return Err(tagfuzz_core::Error::Harness("boom".into()));
            }
            Ok(toy_target_execute(case))
        }
    }

    #[test]
    fn timeout_and_crash_only_fail_their_case() {
        let w = Worker::new("w", Arc::new(Sleepy), Duration::from_millis(100));
        let req = JobRequest {
            job_id: 1,
            target_name: "sleepy".into(),
            test_cases: vec![b"<p>".to_vec(), b"hang".to_vec(), b"crash".to_vec(), b"<br>".to_vec()],
        };
        let res = w.run_job(&req);
        let failed: Vec<bool> = res.results.iter().map(|r| r.failed).collect();
        assert_eq!(failed, [false, true, true, false]);
        assert!(res.results[1].coverage.is_empty());
        assert_eq!(res.results[3].coverage, toy_target_execute(b"<br>"));
    }

    #[test]
    fn malformed_message_keeps_connection() {
        let server = WorkerServer::bind("127.0.0.1:0", Arc::new(Worker::new("w7", Arc::new(ToyTarget), DEFAULT_TIMEOUT)))
            .unwrap();
        let mut s = TcpStream::connect(server.addr()).unwrap();
        s.write_all(&[0, 0, 0, 2, 9, 9]).unwrap();
        let Frame::Message(reply) = read_frame(&mut s).unwrap() else {
            panic!("no reply")
        };
        assert_eq!(reply.kind, Kind::Error);
        let bad_job = Envelope {
            kind: Kind::Job,
            job_id: 5,
            payload: vec![1, 2, 3],
        };
        write_frame(&mut s, &bad_job).unwrap();
        let Frame::Message(reply) = read_frame(&mut s).unwrap() else {
            panic!("no reply")
        };
        assert_eq!((reply.kind, reply.job_id), (Kind::Error, 5));
        write_frame(
            &mut s,
            &Envelope {
                kind: Kind::Health,
                job_id: 6,
                payload: Vec::new(),
            },
        )
        .unwrap();
        let Frame::Message(reply) = read_frame(&mut s).unwrap() else {
            panic!("no reply")
        };
        assert_eq!(reply.kind, Kind::HealthReply);
        let info = WorkerInfo::from_envelope(&reply).unwrap();
        assert_eq!(info.worker_id, "w7");
        assert_eq!(info.target_name, ToyTarget::NAME);
    }
}
