//! DrCov version 2 log reader and writer.
//!
//! A log is a text header followed by a binary basic-block table:
//!
//! ```text
//! DRCOV VERSION: 2
//! DRCOV FLAVOR: drcov
//! Module Table: version 2, count 1
//! Columns: id, base, end, entry, checksum, timestamp, path
//!   0, 0x00007f0000000000, 0x00007f0000100000, 0x0000000000000000, 0x00000000, 0x00000000, /usr/lib/libxul.so
//! BB Table: 2 bbs
//! <2 × {start: u32, size: u16, mod_id: u16} little-endian>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{BasicBlockId, CoverageSet};
use crate::error::{Error, Result};

const RECORD_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleEntry {
    pub id: u16,
    pub base: u64,
    pub end: u64,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BbRecord {
    pub start: u32,
    pub size: u16,
    pub mod_id: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrcovLog {
    pub flavor: String,
    pub modules: Vec<ModuleEntry>,
    pub records: Vec<BbRecord>,
    /// Distinct `(mod_id, start)` pairs.
    pub blocks: CoverageSet,
}

impl DrcovLog {
    pub fn new(flavor: &str, modules: Vec<ModuleEntry>, records: Vec<BbRecord>) -> Self {
        let blocks = records
            .iter()
            .map(|r| BasicBlockId::new(r.mod_id, u64::from(r.start)))
            .collect();
        Self {
            flavor: flavor.to_owned(),
            modules,
            records,
            blocks,
        }
    }

    /// Blocks of every module whose path contains `selector`.
    pub fn coverage_for_module(&self, selector: &str) -> CoverageSet {
        let ids: Vec<u16> = self
            .modules
            .iter()
            .filter(|m| m.path.contains(selector))
            .map(|m| m.id)
            .collect();
        self.blocks
            .iter()
            .filter(|b| ids.contains(&b.module_id))
            .copied()
            .collect()
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Drcov {
            offset,
            message: message.into(),
        }
    }

    /// Next `\n`-terminated line; a missing terminator is an error.
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.data[start..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.err(start, "unterminated header line"))?;
        let raw = &rest[..nl];
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| self.err(start, "header line is not UTF-8"))?;
        self.pos = start + nl + 1;
        Ok((start, line))
    }
}

fn parse_int(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

pub fn parse_drcov(data: &[u8]) -> Result<DrcovLog> {
    let mut r = Reader { data, pos: 0 };

    let (off, line) = r.line()?;
    match line.strip_prefix("DRCOV VERSION:").map(str::trim) {
        Some("2") => {}
        Some(v) => return Err(r.err(off, format!("unsupported DrCov version {v:?}"))),
        None => return Err(r.err(off, "missing DRCOV VERSION line")),
    }

    let (off, line) = r.line()?;
    let flavor = line
        .strip_prefix("DRCOV FLAVOR:")
        .ok_or_else(|| r.err(off, "missing DRCOV FLAVOR line"))?
        .trim()
        .to_owned();

    let (off, line) = r.line()?;
    let table = line
        .strip_prefix("Module Table:")
        .ok_or_else(|| r.err(off, "missing Module Table line"))?
        .trim();
    // Either "version N, count M" or the legacy bare count.
    let count = match table.rsplit_once("count") {
        Some((_, n)) => parse_int(n),
        None => parse_int(table),
    }
    .ok_or_else(|| r.err(off, format!("bad module count in {line:?}")))? as usize;

    let (off, line) = r.line()?;
    let columns: Vec<String> = line
        .strip_prefix("Columns:")
        .ok_or_else(|| r.err(off, "missing Columns line"))?
        .split(',')
        .map(|c| c.trim().to_owned())
        .collect();
    let col = |names: &[&str]| columns.iter().position(|c| names.contains(&c.as_str()));
    let (id_col, base_col, end_col, path_col) = match (
        col(&["id"]),
        col(&["base", "start"]),
        col(&["end"]),
        col(&["path"]),
    ) {
        (Some(i), Some(b), Some(e), Some(p)) => (i, b, e, p),
        _ => return Err(r.err(off, "Columns line lacks id/base/end/path")),
    };
    if path_col + 1 != columns.len() {
        return Err(r.err(off, "path must be the last column"));
    }

    let mut modules = Vec::with_capacity(count);
    for _ in 0..count {
        let (off, line) = r.line()?;
        let fields: Vec<&str> = line.trim_start().splitn(columns.len(), ',').collect();
        if fields.len() != columns.len() {
            return Err(r.err(off, format!("module line has {} of {} columns", fields.len(), columns.len())));
        }
        let num = |i: usize| parse_int(fields[i]).ok_or_else(|| r.err(off, format!("bad number {:?}", fields[i])));
        let id = num(id_col)?;
        let id = u16::try_from(id).map_err(|_| r.err(off, format!("module id {id} exceeds 16 bits")))?;
        modules.push(ModuleEntry {
            id,
            base: num(base_col)?,
            end: num(end_col)?,
            path: fields[path_col].trim().to_owned(),
        });
    }

    let (off, line) = r.line()?;
    let n_bbs = line
        .strip_prefix("BB Table:")
        .and_then(|rest| rest.trim().strip_suffix("bbs"))
        .and_then(parse_int)
        .ok_or_else(|| r.err(off, format!("bad BB Table line {line:?}")))? as usize;

    let body_start = r.pos;
    let body = &data[body_start..];
    let expected = n_bbs
        .checked_mul(RECORD_SIZE)
        .ok_or_else(|| r.err(off, "BB count overflows"))?;
    if body.len() != expected {
        return Err(r.err(
            body_start + body.len().min(expected),
            format!("BB table declares {n_bbs} records ({expected} bytes) but {} bytes follow", body.len()),
        ));
    }

    let known: BTreeMap<u16, ()> = modules.iter().map(|m| (m.id, ())).collect();
    let mut records = Vec::with_capacity(n_bbs);
    for (i, chunk) in body.chunks_exact(RECORD_SIZE).enumerate() {
        let rec = BbRecord {
            start: u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]),
            size: u16::from_le_bytes([chunk[4], chunk[5]]),
            mod_id: u16::from_le_bytes([chunk[6], chunk[7]]),
        };
        if !known.contains_key(&rec.mod_id) {
            return Err(r.err(
                body_start + i * RECORD_SIZE + 6,
                format!("record {i} references unknown module {}", rec.mod_id),
            ));
        }
        records.push(rec);
    }
    Ok(DrcovLog::new(&flavor, modules, records))
}

pub fn emit_drcov(log: &DrcovLog) -> Vec<u8> {
    let mut header = String::new();
    let _ = writeln!(header, "DRCOV VERSION: 2");
    let _ = writeln!(header, "DRCOV FLAVOR: {}", log.flavor);
    let _ = writeln!(header, "Module Table: version 2, count {}", log.modules.len());
    let _ = writeln!(header, "Columns: id, base, end, entry, checksum, timestamp, path");
    for m in &log.modules {
        let _ = writeln!(
            header,
            " {}, 0x{:016x}, 0x{:016x}, 0x{:016x}, 0x{:08x}, 0x{:08x}, {}",
            m.id, m.base, m.end, 0, 0, 0, m.path
        );
    }
    let _ = writeln!(header, "BB Table: {} bbs", log.records.len());
    let mut out = header.into_bytes();
    out.reserve(log.records.len() * RECORD_SIZE);
    for r in &log.records {
        out.extend_from_slice(&r.start.to_le_bytes());
        out.extend_from_slice(&r.size.to_le_bytes());
        out.extend_from_slice(&r.mod_id.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modules() -> Vec<ModuleEntry> {
        vec![
            ModuleEntry { id: 0, base: 0x400000, end: 0x401000, path: "/bin/firefox".into() },
            ModuleEntry { id: 1, base: 0x7f00_0000_0000, end: 0x7f00_0100_0000, path: "/opt/firefox/libxul.so".into() },
        ]
    }

    #[test]
    fn duplicates_collapse() {
        let records = vec![
            BbRecord { start: 0x10, size: 4, mod_id: 1 },
            BbRecord { start: 0x20, size: 2, mod_id: 1 },
            BbRecord { start: 0x10, size: 4, mod_id: 1 },
        ];
        let bytes = emit_drcov(&DrcovLog::new("drcov", modules(), records));
        let log = parse_drcov(&bytes).unwrap();
        assert_eq!(log.records.len(), 3);
        assert_eq!(log.blocks.len(), 2);
    }

    #[test]
    fn empty_table() {
        let bytes = emit_drcov(&DrcovLog::new("drcov", modules(), vec![]));
        assert!(String::from_utf8_lossy(&bytes).ends_with("BB Table: 0 bbs\n"));
        assert!(parse_drcov(&bytes).unwrap().blocks.is_empty());
    }

    #[test]
    fn module_filter() {
        let records = vec![
            BbRecord { start: 1, size: 1, mod_id: 0 },
            BbRecord { start: 2, size: 1, mod_id: 1 },
        ];
        let log = parse_drcov(&emit_drcov(&DrcovLog::new("drcov", modules(), records))).unwrap();
        let xul = log.coverage_for_module("libxul");
        assert_eq!(xul.len(), 1);
        assert!(xul.contains(&BasicBlockId::new(1, 2)));
    }

    #[test]
    fn reads_real_style_header() {
        let mut bytes = b"DRCOV VERSION: 2\nDRCOV FLAVOR: drcov-64\nModule Table: version 2, count 1\nColumns: id, base, end, entry, checksum, timestamp, path\n  0, 0x0000000000400000, 0x0000000000401000, 0x0000000000400010, 0x00000000, 0x5c3e8a21, /usr/lib/a, b.so\nBB Table: 1 bbs\n".to_vec();
        bytes.extend_from_slice(&[0x34, 0x12, 0, 0, 3, 0, 0, 0]);
        let log = parse_drcov(&bytes).unwrap();
        assert_eq!(log.flavor, "drcov-64");
        assert_eq!(log.modules[0].path, "/usr/lib/a, b.so");
        assert!(log.blocks.contains(&BasicBlockId::new(0, 0x1234)));
    }

    #[test]
    fn errors_name_offsets() {
        let records = vec![BbRecord { start: 1, size: 1, mod_id: 7 }];
        let bytes = emit_drcov(&DrcovLog::new("drcov", modules(), records));
        match parse_drcov(&bytes) {
            Err(Error::Drcov { offset, .. }) => assert_eq!(offset, bytes.len() - 2),
            other => panic!("{other:?}"),
        }

        let mut bytes = emit_drcov(&DrcovLog::new("drcov", modules(), vec![]));
        bytes.push(0);
        assert!(matches!(parse_drcov(&bytes), Err(Error::Drcov { .. })));

        assert!(parse_drcov(b"DRCOV VERSION: 3\n").is_err());
        assert!(parse_drcov(b"hello\n").is_err());
    }
}
