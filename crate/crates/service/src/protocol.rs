//! Length-prefixed binary messages.
//!
//! A frame is a 4-byte big-endian length followed by that many bytes:
//! `[kind u8][job_id u64 BE][payload]`. Integers inside payloads are big-endian.

use std::io::{self, Read, Write};
use std::time::Duration;

use tagfuzz_core::coverage::{BasicBlockId, CoverageSet};

use crate::error::{Result, ServiceError};

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Health = 1,
    HealthReply = 2,
    Job = 3,
    JobResult = 4,
    Error = 5,
}

impl Kind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Kind::Health,
            2 => Kind::HealthReply,
            3 => Kind::Job,
            4 => Kind::JobResult,
            5 => Kind::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub kind: Kind,
    pub job_id: u64,
    pub payload: Vec<u8>,
}

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope) -> io::Result<()> {
    let len = 9 + env.payload.len();
    let mut buf = Vec::with_capacity(4 + len);
    buf.extend_from_slice(&(len as u32).to_be_bytes());
    buf.push(env.kind as u8);
    buf.extend_from_slice(&env.job_id.to_be_bytes());
    buf.extend_from_slice(&env.payload);
    w.write_all(&buf)?;
    w.flush()
}

/// What came off the wire: a message, a clean end of stream, or a well-framed
/// message that could not be understood.
#[derive(Debug)]
pub enum Frame {
    Message(Envelope),
    Malformed { job_id: u64, reason: String },
    Closed,
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(Frame::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(ServiceError::Protocol(format!("frame of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    if len < 9 {
        return Ok(Frame::Malformed {
            job_id: 0,
            reason: format!("frame of {len} bytes is shorter than the envelope header"),
        });
    }
    let job_id = u64::from_be_bytes(body[1..9].try_into().expect("8 bytes"));
    match Kind::from_u8(body[0]) {
        Some(kind) => Ok(Frame::Message(Envelope {
            kind,
            job_id,
            payload: body.split_off(9),
        })),
        None => Ok(Frame::Malformed {
            job_id,
            reason: format!("unknown message type {}", body[0]),
        }),
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| ServiceError::Protocol(format!("payload truncated at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| ServiceError::Protocol("string is not UTF-8".into()))
    }
    fn finish(&self) -> Result<()> {
        if self.pos == self.data.len() {
            Ok(())
        } else {
            Err(ServiceError::Protocol(format!("{} trailing payload bytes", self.data.len() - self.pos)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobRequest {
    pub job_id: u64,
    pub target_name: String,
    pub test_cases: Vec<Vec<u8>>,
}

impl JobRequest {
    pub fn to_envelope(&self) -> Envelope {
        let mut w = Writer(Vec::new());
        w.bytes(self.target_name.as_bytes());
        w.u32(self.test_cases.len() as u32);
        for case in &self.test_cases {
            w.bytes(case);
        }
        Envelope {
            kind: Kind::Job,
            job_id: self.job_id,
            payload: w.0,
        }
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self> {
        let mut r = Reader::new(&env.payload);
        let target_name = r.string()?;
        let n = r.u32()? as usize;
        let mut test_cases = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            test_cases.push(r.bytes()?.to_vec());
        }
        r.finish()?;
        if test_cases.is_empty() {
            return Err(ServiceError::Protocol("job has no test cases".into()));
        }
        Ok(Self {
            job_id: env.job_id,
            target_name,
            test_cases,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseResult {
    pub coverage: CoverageSet,
    pub wall_time: Duration,
    /// Timed out or crashed; coverage is then empty.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobResult {
    pub job_id: u64,
    pub worker_id: String,
    pub results: Vec<CaseResult>,
}

impl JobResult {
    pub fn to_envelope(&self) -> Envelope {
        let mut w = Writer(Vec::new());
        w.bytes(self.worker_id.as_bytes());
        w.u32(self.results.len() as u32);
        for r in &self.results {
            w.u8(u8::from(r.failed));
            w.u64(r.wall_time.as_micros() as u64);
            w.u32(r.coverage.len() as u32);
            for b in r.coverage.iter() {
                w.u16(b.module_id);
                w.u64(b.offset);
            }
        }
        Envelope {
            kind: Kind::JobResult,
            job_id: self.job_id,
            payload: w.0,
        }
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self> {
        let mut r = Reader::new(&env.payload);
        let worker_id = r.string()?;
        let n = r.u32()? as usize;
        let mut results = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let failed = match r.u8()? {
                0 => false,
                1 => true,
                v => return Err(ServiceError::Protocol(format!("bad failure flag {v}"))),
            };
            let wall_time = Duration::from_micros(r.u64()?);
            let blocks = r.u32()? as usize;
            let mut coverage = CoverageSet::new();
            for _ in 0..blocks {
                let module = r.u16()?;
                let offset = r.u64()?;
                coverage.insert(BasicBlockId::new(module, offset));
            }
            results.push(CaseResult {
                coverage,
                wall_time,
                failed,
            });
        }
        r.finish()?;
        Ok(Self {
            job_id: env.job_id,
            worker_id,
            results,
        })
    }
}

/// Worker identity returned by a health check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerInfo {
    pub worker_id: String,
    pub target_name: String,
}

impl WorkerInfo {
    pub fn to_envelope(&self, job_id: u64) -> Envelope {
        let mut w = Writer(Vec::new());
        w.bytes(self.worker_id.as_bytes());
        w.bytes(self.target_name.as_bytes());
        Envelope {
            kind: Kind::HealthReply,
            job_id,
            payload: w.0,
        }
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self> {
        let mut r = Reader::new(&env.payload);
        let worker_id = r.string()?;
        let target_name = r.string()?;
        r.finish()?;
        Ok(Self { worker_id, target_name })
    }
}

pub fn error_envelope(job_id: u64, message: &str) -> Envelope {
    Envelope {
        kind: Kind::Error,
        job_id,
        payload: message.as_bytes().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout_is_big_endian() {
        let env = Envelope {
            kind: Kind::Health,
            job_id: 0x0102_0304_0506_0708,
            payload: vec![0xAA],
        };
        let mut buf = Vec::new();
        write_frame(&mut buf, &env).unwrap();
        assert_eq!(buf, [0, 0, 0, 10, 1, 1, 2, 3, 4, 5, 6, 7, 8, 0xAA]);
        match read_frame(&mut buf.as_slice()).unwrap() {
            Frame::Message(e) => assert_eq!(e, env),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_frame(&mut [].as_slice()).unwrap(), Frame::Closed));
    }

    #[test]
    fn malformed_frames_are_reported_not_fatal() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&9u32.to_be_bytes());
        buf.push(99);
        buf.extend_from_slice(&7u64.to_be_bytes());
        assert!(matches!(
            read_frame(&mut buf.as_slice()).unwrap(),
            Frame::Malformed { job_id: 7, .. }
        ));
    }

    #[test]
    fn messages_round_trip() {
        let req = JobRequest {
            job_id: 42,
            target_name: "toy-html".into(),
            test_cases: vec![b"<p>".to_vec(), Vec::new(), vec![0xff, 0]],
        };
        assert_eq!(JobRequest::from_envelope(&req.to_envelope()).unwrap(), req);
        let res = JobResult {
            job_id: 42,
            worker_id: "w0".into(),
            results: vec![
                CaseResult {
                    coverage: [BasicBlockId::new(0, 5), BasicBlockId::new(3, u64::MAX)].into_iter().collect(),
                    wall_time: Duration::from_micros(1234),
                    failed: false,
                },
                CaseResult {
                    coverage: CoverageSet::new(),
                    wall_time: Duration::from_secs(10),
                    failed: true,
                },
            ],
        };
        assert_eq!(JobResult::from_envelope(&res.to_envelope()).unwrap(), res);
        let info = WorkerInfo {
            worker_id: "w1".into(),
            target_name: "toy-html".into(),
        };
        assert_eq!(WorkerInfo::from_envelope(&info.to_envelope(3)).unwrap(), info);
        let mut bad = req.to_envelope();
        bad.payload.pop();
        assert!(JobRequest::from_envelope(&bad).is_err());
    }
}
