//! Append-only experience log.
//!
//! Layout: a 16-byte header (`TFXSTORE`, version u32 LE, reserved u32) followed
//! by records `[len u32 LE][crc32 u32 LE][payload]`. Each appended batch ends
//! with a commit marker: a zero length and a fixed tag in the checksum field.

use std::collections::{HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use tagfuzz_core::ddqn::Experience;

use crate::error::{Result, ServiceError};

pub const MAGIC: &[u8; 8] = b"TFXSTORE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 16;
const MAX_RECORD: u32 = 64 << 20;
/// Checksum field of the zero-length frame that closes each appended batch.
const COMMIT_TAG: u32 = 0x434f_4d54;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceRecord {
    pub episode_id: u64,
    pub sequence: u32,
    /// Hash of the generator checkpoint that produced the episode.
    pub generator_hash: String,
    pub experience: Experience,
}

impl ExperienceRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let exp = self.experience.to_bytes();
        let hash = self.generator_hash.as_bytes();
        let mut out = Vec::with_capacity(14 + hash.len() + exp.len());
        out.extend_from_slice(&self.episode_id.to_le_bytes());
        out.extend_from_slice(&self.sequence.to_le_bytes());
        out.extend_from_slice(&(hash.len() as u16).to_le_bytes());
        out.extend_from_slice(hash);
        out.extend_from_slice(&exp);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| ServiceError::Protocol(format!("experience record: {m}"));
        if bytes.len() < 14 {
            return Err(bad("truncated header"));
        }
        let episode_id = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
        let sequence = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        let hash_len = u16::from_le_bytes(bytes[12..14].try_into().expect("2 bytes")) as usize;
        let rest = &bytes[14..];
        if rest.len() < hash_len {
            return Err(bad("truncated generator hash"));
        }
        let generator_hash = std::str::from_utf8(&rest[..hash_len])
            .map_err(|_| bad("generator hash is not UTF-8"))?
            .to_string();
        Ok(Self {
            episode_id,
            sequence,
            generator_hash,
            experience: Experience::from_bytes(&rest[hash_len..])?,
        })
    }

    pub fn key(&self) -> (u64, u32) {
        (self.episode_id, self.sequence)
    }
}

fn header() -> [u8; HEADER_LEN as usize] {
    let mut h = [0u8; HEADER_LEN as usize];
    h[..8].copy_from_slice(MAGIC);
    h[8..12].copy_from_slice(&VERSION.to_le_bytes());
    h
}

fn check_header(file: &mut File) -> Result<()> {
    let mut h = [0u8; HEADER_LEN as usize];
    file.seek(SeekFrom::Start(0))?;
    file.read_exact(&mut h).map_err(|_| ServiceError::Corrupt {
        offset: 0,
        message: "missing header".into(),
    })?;
    if &h[..8] != MAGIC {
        return Err(ServiceError::Corrupt {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = u32::from_le_bytes(h[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(ServiceError::Corrupt {
            offset: 8,
            message: format!("unsupported version {version}"),
        });
    }
    Ok(())
}

/// Where a scan stopped early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub offset: u64,
    pub message: String,
}

/// Sequential reader over committed records.
///
/// After the first corrupt, torn or uncommitted record it yields one
/// [`ServiceError::Corrupt`] and then ends.
pub struct StoreReader {
    reader: BufReader<File>,
    pos: u64,
    /// Bytes past this offset are not read.
    limit: Option<u64>,
    committed: u64,
    pending: Vec<(u64, ExperienceRecord)>,
    ready: VecDeque<(u64, ExperienceRecord)>,
    done: bool,
}

enum RawFrame {
    Record(Vec<u8>),
    Commit,
}

impl StoreReader {
    fn at(file: File, pos: u64, limit: Option<u64>) -> Self {
        Self {
            reader: BufReader::with_capacity(1 << 16, file),
            pos,
            limit,
            committed: pos,
            pending: Vec::new(),
            ready: VecDeque::new(),
            done: false,
        }
    }

    /// Opens a store file read-only and skips the first `from` records.
    pub fn open(path: &Path, from: u64) -> Result<Self> {
        let mut file = File::open(path)?;
        check_header(&mut file)?;
        let mut r = Self::at(file, HEADER_LEN, None);
        for _ in 0..from {
            match r.next_with_offset() {
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(e),
                None => break,
            }
        }
        Ok(r)
    }

    /// Offset just past the last commit marker read so far.
    pub fn committed_offset(&self) -> u64 {
        self.committed
    }

    fn corrupt(&mut self, offset: u64, message: impl Into<String>) -> Result<Option<RawFrame>> {
        self.done = true;
        Err(ServiceError::Corrupt {
            offset,
            message: message.into(),
        })
    }

    fn next_frame(&mut self) -> Result<Option<RawFrame>> {
        if self.limit.is_some_and(|l| self.pos >= l) {
            return Ok(None);
        }
        let mut head = [0u8; 8];
        let mut got = 0;
        while got < 8 {
            match self.reader.read(&mut head[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => {
                    self.done = true;
                    return Err(e.into());
                }
            }
        }
        if got == 0 {
            return Ok(None);
        }
        if got < 8 {
            return self.corrupt(self.pos, "torn record header");
        }
        let len = u32::from_le_bytes(head[..4].try_into().expect("4 bytes"));
        let crc = u32::from_le_bytes(head[4..].try_into().expect("4 bytes"));
        if len == 0 {
            if crc != COMMIT_TAG {
                return self.corrupt(self.pos, "bad commit marker");
            }
            self.pos += 8;
            return Ok(Some(RawFrame::Commit));
        }
        if len > MAX_RECORD {
            return self.corrupt(self.pos, format!("record length {len} exceeds limit"));
        }
        let mut payload = vec![0u8; len as usize];
        if self.reader.read_exact(&mut payload).is_err() {
            return self.corrupt(self.pos, "torn record payload");
        }
        if crc32fast::hash(&payload) != crc {
            return self.corrupt(self.pos, "checksum mismatch");
        }
        self.pos += 8 + len as u64;
        Ok(Some(RawFrame::Record(payload)))
    }

    /// Like [`Iterator::next`], with the byte offset of each record.
    pub fn next_with_offset(&mut self) -> Option<Result<(u64, ExperienceRecord)>> {
        loop {
            if let Some(item) = self.ready.pop_front() {
                return Some(Ok(item));
            }
            if self.done {
                return None;
            }
            let offset = self.pos;
            match self.next_frame() {
                Ok(Some(RawFrame::Record(payload))) => match ExperienceRecord::from_bytes(&payload) {
                    Ok(rec) => self.pending.push((offset, rec)),
                    Err(e) => {
                        self.done = true;
                        return Some(Err(ServiceError::Corrupt {
                            offset,
                            message: e.to_string(),
                        }));
                    }
                },
                Ok(Some(RawFrame::Commit)) => {
                    self.committed = self.pos;
                    self.ready.extend(self.pending.drain(..));
                }
                Ok(None) => {
                    self.done = true;
                    if let Some(&(first, _)) = self.pending.first() {
                        return Some(Err(ServiceError::Corrupt {
                            offset: first,
                            message: format!("{} uncommitted records", self.pending.len()),
                        }));
                    }
                    return None;
                }
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

impl Iterator for StoreReader {
    type Item = Result<ExperienceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_with_offset()?.map(|(_, r)| r))
    }
}

/// Single-writer handle. Opening rebuilds the offset index; anything after
/// the last intact commit is cut off and reported through
/// [`ExperienceStore::recovered`].
pub struct ExperienceStore {
    path: PathBuf,
    file: File,
    offsets: Vec<u64>,
    keys: HashSet<(u64, u32)>,
    end: u64,
    recovered: Option<Corruption>,
}

impl ExperienceStore {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        if file.metadata()?.len() == 0 {
            file.write_all(&header())?;
            file.sync_all()?;
        }
        check_header(&mut file)?;
        let mut offsets = Vec::new();
        let mut keys = HashSet::new();
        let mut recovered = None;
        let mut reader = StoreReader::open(path, 0)?;
        let mut end = HEADER_LEN;
        loop {
            match reader.next_with_offset() {
                None => break,
                Some(Ok((at, rec))) => {
                    if !keys.insert(rec.key()) {
                        recovered = Some(Corruption {
                            offset: at,
                            message: format!("duplicate key {:?}", rec.key()),
                        });
                        break;
                    }
                    offsets.push(at);
                    end = reader.committed_offset();
                }
                Some(Err(ServiceError::Corrupt { offset, message })) => {
                    recovered = Some(Corruption { offset, message });
                    break;
                }
                Some(Err(e)) => return Err(e),
            }
        }
        if recovered.is_none() {
            end = reader.committed_offset();
        } else {
            // Keep only records of fully committed batches.
            offsets.retain(|&o| o < end);
            keys = HashSet::new();
            let mut keep = StoreReader::open(path, 0)?;
            for _ in 0..offsets.len() {
                if let Some(Ok((_, rec))) = keep.next_with_offset() {
                    keys.insert(rec.key());
                }
            }
        }
        if file.metadata()?.len() != end {
            file.set_len(end)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::Start(end))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            offsets,
            keys,
            end,
            recovered,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.offsets.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// File size covered by acknowledged records.
    pub fn end_offset(&self) -> u64 {
        self.end
    }

    /// Byte offset of record `index`.
    pub fn offset_of(&self, index: u64) -> Option<u64> {
        self.offsets.get(index as usize).copied()
    }

    pub fn recovered(&self) -> Option<&Corruption> {
        self.recovered.as_ref()
    }

    /// Appends `records` as one batch and returns the index of its first
    /// record. The batch is synced, then a commit marker is written and synced;
    /// a crash before the marker reaches the disk loses the whole batch.
    /// Nothing is written if any key is already present.
    pub fn append(&mut self, records: &[ExperienceRecord]) -> Result<u64> {
        let first = self.len();
        if records.is_empty() {
            return Ok(first);
        }
        let mut batch_keys = HashSet::with_capacity(records.len());
        for r in records {
            if self.keys.contains(&r.key()) || !batch_keys.insert(r.key()) {
                return Err(ServiceError::Duplicate {
                    episode: r.episode_id,
                    sequence: r.sequence,
                });
            }
        }
        let mut offsets = Vec::with_capacity(records.len());
        let mut pos = self.end;
        {
            let mut w = BufWriter::with_capacity(1 << 16, &mut self.file);
            for r in records {
                let payload = r.to_bytes();
                w.write_all(&(payload.len() as u32).to_le_bytes())?;
                w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
                w.write_all(&payload)?;
                offsets.push(pos);
                pos += 8 + payload.len() as u64;
            }
            w.flush()?;
        }
        self.file.sync_data()?;
        let mut marker = [0u8; 8];
        marker[4..].copy_from_slice(&COMMIT_TAG.to_le_bytes());
        self.file.write_all(&marker)?;
        self.file.sync_data()?;
        self.offsets.extend(offsets);
        self.keys.extend(batch_keys);
        self.end = pos + 8;
        Ok(first)
    }

    /// Records from index `from` in append order, limited to what was
    /// acknowledged when the stream was opened.
    pub fn stream(&self, from: u64) -> Result<StoreReader> {
        let mut file = File::open(&self.path)?;
        let start = self.offset_of(from).unwrap_or(self.end);
        file.seek(SeekFrom::Start(start))?;
        Ok(StoreReader::at(file, start, Some(self.end)))
    }
}

#[cfg(test)]
mod tests {
    use tagfuzz_core::corpus::EncodedSequence;

    use super::*;

    pub(crate) fn record(episode: u64, seq: u32) -> ExperienceRecord {
        ExperienceRecord {
            episode_id: episode,
            sequence: seq,
            generator_hash: "ab".repeat(32),
            experience: Experience {
                state: EncodedSequence::new((0..(seq % 7)).collect()),
                action: (episode % 5) as usize,
                reward: episode as f64 * 0.25 - 1.0,
                next_state: EncodedSequence::new(vec![seq; 3]),
                terminal: seq.is_multiple_of(2),
            },
        }
    }

    #[test]
    fn record_round_trip() {
        for (e, s) in [(0, 0), (1, 1), (u64::MAX, u32::MAX)] {
            let r = record(e, s);
            assert_eq!(ExperienceRecord::from_bytes(&r.to_bytes()).unwrap(), r);
        }
        let bytes = record(3, 4).to_bytes();
        for cut in 0..bytes.len() {
            assert!(ExperienceRecord::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn append_stream_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.log");
        let mut store = ExperienceStore::open(&path).unwrap();
        assert_eq!(store.append(&[record(1, 0), record(1, 1)]).unwrap(), 0);
        assert_eq!(store.append(&[record(2, 0)]).unwrap(), 2);
        assert!(matches!(
            store.append(&[record(3, 0), record(1, 1)]),
            Err(ServiceError::Duplicate { episode: 1, sequence: 1 })
        ));
        assert!(store.append(&[record(4, 0), record(4, 0)]).is_err());
        assert_eq!(store.len(), 3);
        let all: Vec<_> = store.stream(0).unwrap().map(|r| r.unwrap().key()).collect();
        assert_eq!(all, [(1, 0), (1, 1), (2, 0)]);
        let tail: Vec<_> = store.stream(2).unwrap().map(|r| r.unwrap().key()).collect();
        assert_eq!(tail, [(2, 0)]);
        assert_eq!(store.stream(3).unwrap().count(), 0);
        drop(store);
        let store = ExperienceStore::open(&path).unwrap();
        assert_eq!(store.len(), 3);
        assert!(store.recovered().is_none());
        assert_eq!(StoreReader::open(&path, 1).unwrap().count(), 2);
    }

    #[test]
    fn corruption_stops_stream_and_is_trimmed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.log");
        let mut store = ExperienceStore::open(&path).unwrap();
        for seq in 0..3 {
            store.append(&[record(1, seq)]).unwrap();
        }
        let bad_at = store.offset_of(1).unwrap();
        drop(store);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[bad_at as usize + 10] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();

        let items: Vec<_> = StoreReader::open(&path, 0).unwrap().collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].is_ok());
        assert!(matches!(items[1], Err(ServiceError::Corrupt { offset, .. }) if offset == bad_at));

        let store = ExperienceStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.recovered().unwrap().offset, bad_at);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), bad_at);
    }

    #[test]
    fn batch_without_commit_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.log");
        let mut store = ExperienceStore::open(&path).unwrap();
        store.append(&[record(1, 0)]).unwrap();
        store.append(&[record(2, 0), record(2, 1)]).unwrap();
        let second = store.offset_of(1).unwrap();
        drop(store);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let store = ExperienceStore::open(&path).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.end_offset(), second);
        assert_eq!(store.recovered().unwrap().offset, second);
    }

    #[test]
    fn foreign_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"not a store at all").unwrap();
        assert!(ExperienceStore::open(&path).is_err());
    }
}
