use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use tagfuzz_core::corpus::EncodedSequence;
use tagfuzz_core::ddqn::Experience;
use tagfuzz_service::store::HEADER_LEN;
use tagfuzz_service::{ExperienceRecord, ExperienceStore, ServiceError, StoreReader};

fn record(i: u64) -> ExperienceRecord {
    let len = (i % 13) as u32;
    ExperienceRecord {
        episode_id: i / 10,
        sequence: (i % 10) as u32,
        generator_hash: format!("{:064x}", i % 3),
        experience: Experience {
            state: EncodedSequence::new((0..len).map(|k| k * 7 % 101).collect()),
            action: (i % 17) as usize,
            reward: if i % 10 == 9 { i as f64 / 1e3 } else { 0.0 },
            next_state: EncodedSequence::new((0..len + 1).collect()),
            terminal: i % 10 == 9,
        },
    }
}

#[test]
fn hundred_thousand_records_stream_back_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.log");
    let n = 100_000u64;
    let mut store = ExperienceStore::open(&path).unwrap();
    let batch: Vec<_> = (0..n).map(record).collect();
    for chunk in batch.chunks(5_000) {
        store.append(chunk).unwrap();
    }
    assert_eq!(store.len(), n);

    let mut count = 0u64;
    for (i, r) in store.stream(0).unwrap().enumerate() {
        assert_eq!(r.unwrap(), batch[i]);
        count += 1;
    }
    assert_eq!(count, n);
    assert_eq!(store.stream(n).unwrap().count(), 0);
    assert_eq!(store.stream(n - 3).unwrap().count(), 3);

    drop(store);
    let store = ExperienceStore::open(&path).unwrap();
    assert_eq!(store.len(), n);
    assert!(store.recovered().is_none());
    let first = store.stream(50_000).unwrap().next().unwrap().unwrap();
    assert_eq!(first, batch[50_000]);
}

#[test]
fn every_torn_tail_is_dropped_on_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.log");
    let mut store = ExperienceStore::open(&path).unwrap();
    store.append(&(0..5).map(record).collect::<Vec<_>>()).unwrap();
    let good_len = store.end_offset();
    drop(store);
    let full = std::fs::read(&path).unwrap();

    let extra = record(99);
    let payload = extra.to_bytes();
    let mut framed = Vec::new();
    framed.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    framed.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    framed.extend_from_slice(&payload);

    for cut in 1..framed.len() {
        let mut bytes = full.clone();
        bytes.extend_from_slice(&framed[..cut]);
        std::fs::write(&path, &bytes).unwrap();

        let items: Vec<_> = StoreReader::open(&path, 0).unwrap().collect();
        assert_eq!(items.len(), 6, "cut {cut}");
        assert!(matches!(&items[5], Err(ServiceError::Corrupt { offset, .. }) if *offset == good_len));

        let store = ExperienceStore::open(&path).unwrap();
        assert_eq!(store.len(), 5);
        assert_eq!(store.recovered().unwrap().offset, good_len);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), good_len);
    }

    // A whole record without its commit marker is still dropped.
    let mut bytes = full;
    bytes.extend_from_slice(&framed);
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(ExperienceStore::open(&path).unwrap().len(), 5);

    let mut store = ExperienceStore::open(&path).unwrap();
    store.append(&[record(99)]).unwrap();
    assert_eq!(store.len(), 6);
    store.append(&[record(100)]).unwrap();
    assert_eq!(store.stream(0).unwrap().count(), 7);
}

#[test]
fn empty_store_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.log");
    let store = ExperienceStore::open(&path).unwrap();
    assert!(store.is_empty());
    assert_eq!(store.stream(0).unwrap().count(), 0);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len() as u64, HEADER_LEN);
    assert_eq!(&bytes[..8], b"TFXSTORE");
    assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
}

const CHILD_ENV: &str = "TAGFUZZ_STORE_WRITER";

/// Body of the child process: appends acknowledged batches forever and logs
/// each acknowledged count to a side file.
#[test]
fn writer_child() {
    let Ok(dir) = std::env::var(CHILD_ENV) else { return };
    let dir = Path::new(&dir);
    let mut store = ExperienceStore::open(&dir.join("exp.log")).unwrap();
    let mut acks = OpenOptions::new().create(true).append(true).open(dir.join("acks")).unwrap();
    let mut i = store.len();
    loop {
        let batch: Vec<_> = (i..i + 50).map(record).collect();
        store.append(&batch).unwrap();
        i += 50;
        writeln!(acks, "{i}").unwrap();
        acks.sync_data().unwrap();
    }
}

#[cfg(unix)]
#[test]
fn killed_writer_leaves_only_whole_records() {
    let dir = tempfile::tempdir().unwrap();
    let exe = std::env::current_exe().unwrap();
    for round in 0..3u64 {
        let mut child = Command::new(&exe)
            .args(["writer_child", "--exact", "--nocapture", "--test-threads", "1"])
            .env(CHILD_ENV, dir.path())
            .spawn()
            .unwrap();
        let acks = dir.path().join("acks");
        let start = Instant::now();
        let target = 200 * (round + 1);
        loop {
            let acked = std::fs::read_to_string(&acks)
                .ok()
                .and_then(|s| s.lines().filter_map(|l| l.parse::<u64>().ok()).next_back())
                .unwrap_or(0);
            if acked >= target || start.elapsed() > Duration::from_secs(30) {
                break;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        child.kill().unwrap();
        child.wait().unwrap();

        let acked: u64 = std::fs::read_to_string(&acks)
            .unwrap()
            .lines()
            .filter_map(|l| l.parse().ok())
            .next_back()
            .unwrap_or(0);
        let store = ExperienceStore::open(&dir.path().join("exp.log")).unwrap();
        // Every acknowledged batch survived; the batch in flight is whole or gone.
        assert!(
            store.len() == acked || store.len() == acked + 50,
            "round {round}: {} records, {acked} acknowledged",
            store.len()
        );
        for (i, r) in store.stream(0).unwrap().enumerate() {
            assert_eq!(r.unwrap(), record(i as u64));
        }
    }
}
