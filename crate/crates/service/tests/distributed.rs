use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagfuzz_core::coverage::{toy_target_execute, CoverageSet, HarnessDescriptor, TargetHarness, ToyTarget};
use tagfuzz_core::grammar::{GrammarConfig, TagGenerator};
use tagfuzz_service::{Coordinator, KillSwitch, ServiceError, Worker, WorkerServer, DEFAULT_TIMEOUT};

fn cases(n: usize, seed: u64) -> Vec<Vec<u8>> {
    let grammar = GrammarConfig::with_seed(seed);
    let gen = TagGenerator::from_config(&grammar);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let tags = rng.gen_range(1..40);
            let body: String = (0..tags)
                .map(|_| {
                    let spec = &grammar.tags[rng.gen_range(0..grammar.tags.len())];
                    gen.generate(&mut rng, spec)
                })
                .collect();
            format!("<html><body>{body}</body></html>").into_bytes()
        })
        .collect()
}

fn local(cases: &[Vec<u8>]) -> Vec<CoverageSet> {
    cases.iter().map(|c| toy_target_execute(c)).collect()
}

fn toy_server(id: &str) -> WorkerServer {
    WorkerServer::bind("127.0.0.1:0", Arc::new(Worker::new(id, Arc::new(ToyTarget), DEFAULT_TIMEOUT))).unwrap()
}

/// Toy target that pulls its own worker's plug after a number of cases and
/// optionally sleeps a random time per case.
struct Faulty {
    executed: AtomicUsize,
    kill_after: Option<usize>,
    switch: OnceLock<KillSwitch>,
    jitter_ms: u64,
}

impl TargetHarness for Faulty {
    fn descriptor(&self) -> HarnessDescriptor {
        ToyTarget.descriptor()
    }

    fn execute(&self, case: &[u8]) -> tagfuzz_core::Result<CoverageSet> {
        let n = self.executed.fetch_add(1, Ordering::SeqCst) + 1;
        if self.kill_after == Some(n) {
            self.switch.get().expect("switch installed").kill();
        }
        if self.jitter_ms > 0 {
            let ms = case.len() as u64 % self.jitter_ms;
            thread::sleep(Duration::from_millis(ms));
        }
        Ok(toy_target_execute(case))
    }
}

fn faulty_server(id: &str, kill_after: Option<usize>, jitter_ms: u64) -> (WorkerServer, Arc<Faulty>) {
    let harness = Arc::new(Faulty {
        executed: AtomicUsize::new(0),
        kill_after,
        switch: OnceLock::new(),
        jitter_ms,
    });
    let server = WorkerServer::bind(
        "127.0.0.1:0",
        Arc::new(Worker::new(id, harness.clone(), DEFAULT_TIMEOUT)),
    )
    .unwrap();
    let _ = harness.switch.set(server.kill_switch());
    (server, harness)
}

#[test]
fn single_case_passthrough_matches_local() {
    let server = toy_server("w0");
    let mut c = Coordinator::connect(&[server.addr()], DEFAULT_TIMEOUT).unwrap();
    let batch = cases(1, 3);
    let res = c.submit_batch(ToyTarget::NAME, &batch).unwrap();
    assert_eq!(res.results.len(), 1);
    assert!(!res.results[0].failed);
    assert_eq!(res.results[0].coverage, local(&batch)[0]);
    assert_eq!(res.worker_id, "w0");
}

#[test]
fn even_split_across_four_workers() {
    let servers: Vec<_> = (0..4).map(|i| faulty_server(&format!("w{i}"), None, 0)).collect();
    let addrs: Vec<_> = servers.iter().map(|(s, _)| s.addr()).collect();
    let mut c = Coordinator::connect(&addrs, DEFAULT_TIMEOUT).unwrap();
    let batch = cases(128, 11);
    let res = c.submit_batch(ToyTarget::NAME, &batch).unwrap();
    for (_, h) in &servers {
        assert_eq!(h.executed.load(Ordering::SeqCst), 32);
    }
    let remote: Vec<_> = res.results.into_iter().map(|r| r.coverage).collect();
    assert_eq!(remote, local(&batch));
}

#[test]
fn killed_worker_share_is_reassigned() {
    let (dying, dying_h) = faulty_server("dying", Some(10), 0);
    let healthy: Vec<_> = (0..3).map(|i| faulty_server(&format!("w{i}"), None, 0)).collect();
    let mut addrs = vec![dying.addr()];
    addrs.extend(healthy.iter().map(|(s, _)| s.addr()));
    let mut c = Coordinator::connect(&addrs, DEFAULT_TIMEOUT).unwrap();
    let batch = cases(128, 12);
    let res = c.submit_batch(ToyTarget::NAME, &batch).unwrap();
    assert!(dying_h.executed.load(Ordering::SeqCst) >= 10);
    assert_eq!(c.alive(), 3);
    assert!(!res.worker_id.split(',').any(|w| w == "dying"));
    let remote: Vec<_> = res.results.iter().map(|r| r.coverage.clone()).collect();
    assert_eq!(remote, local(&batch));
    assert!(res.results.iter().all(|r| !r.failed));
    let extra: usize = healthy.iter().map(|(_, h)| h.executed.load(Ordering::SeqCst)).sum();
    assert_eq!(extra, 128);

    // Later batches only use the survivors.
    let again = c.submit_batch(ToyTarget::NAME, &batch[..8]).unwrap();
    assert_eq!(again.results.len(), 8);
}

#[test]
fn all_workers_dead_is_an_error() {
    let (a, _) = faulty_server("a", Some(1), 0);
    let mut c = Coordinator::connect(&[a.addr()], DEFAULT_TIMEOUT).unwrap();
    assert!(matches!(
        c.submit_batch(ToyTarget::NAME, &cases(4, 1)),
        Err(ServiceError::Worker { .. })
    ));
    assert!(matches!(
        c.submit_batch(ToyTarget::NAME, &cases(4, 1)),
        Err(ServiceError::NoWorkers)
    ));
}

#[test]
fn order_survives_uneven_worker_speed() {
    let servers: Vec<_> = (0..3).map(|i| faulty_server(&format!("w{i}"), None, 7 + i as u64 * 5)).collect();
    let addrs: Vec<_> = servers.iter().map(|(s, _)| s.addr()).collect();
    let mut c = Coordinator::connect(&addrs, DEFAULT_TIMEOUT).unwrap();
    let batch = cases(45, 13);
    let remote: Vec<_> = c
        .submit_batch(ToyTarget::NAME, &batch)
        .unwrap()
        .results
        .into_iter()
        .map(|r| r.coverage)
        .collect();
    assert_eq!(remote, local(&batch));
}

#[test]
fn concurrent_coordinators_are_both_answered() {
    let server = toy_server("shared");
    let addr = server.addr();
    let handles: Vec<_> = (0..2)
        .map(|k| {
            thread::spawn(move || {
                let mut c = Coordinator::connect(&[addr], DEFAULT_TIMEOUT).unwrap();
                let batch = cases(40, 20 + k);
                let res = c.submit_batch(ToyTarget::NAME, &batch).unwrap();
                let remote: Vec<_> = res.results.into_iter().map(|r| r.coverage).collect();
                assert_eq!(remote, local(&batch));
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn wrong_target_is_rejected_without_dropping_worker() {
    let server = toy_server("w");
    let mut c = Coordinator::connect(&[server.addr()], DEFAULT_TIMEOUT).unwrap();
    assert!(c.submit_batch("something-else", &cases(2, 1)).is_err());
    assert_eq!(c.alive(), 1);
    assert!(c.submit_batch(ToyTarget::NAME, &cases(2, 1)).is_ok());
}
