//! The impression record and its line-delimited file format.
//!
//! One JSON object per line, UTF-8, with the fields
//! `user_id`, `ad_id`, `shown_creative_id`, `candidate_creative_ids`,
//! `click` (0 or 1) and `cpc_bid`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AdId, CreativeId, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionRecord {
    pub user_id: UserId,
    pub ad_id: AdId,
    pub shown_creative_id: CreativeId,
    pub candidate_creative_ids: Vec<CreativeId>,
    pub click: u8,
    pub cpc_bid: f64,
}

impl ImpressionRecord {
    pub fn clicked(&self) -> bool {
        self.click == 1
    }

    /// Checks the record invariants: binary click, shown creative among the
    /// candidates, no duplicate candidates, at most `max_candidates`.
    pub fn validate(&self, max_candidates: usize) -> Result<()> {
        if self.click > 1 {
            return Err(Error::InvalidInput(format!(
                "click must be 0 or 1, got {}",
                self.click
            )));
        }
        let n = self.candidate_creative_ids.len();
        if n == 0 || n > max_candidates {
            return Err(Error::InvalidInput(format!(
                "candidate list length {n} outside [1, {max_candidates}]"
            )));
        }
        if !self.candidate_creative_ids.contains(&self.shown_creative_id) {
            return Err(Error::InvalidInput(format!(
                "shown creative {} not among candidates of ad {}",
                self.shown_creative_id, self.ad_id
            )));
        }
        let mut sorted = self.candidate_creative_ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!(
                "duplicate candidate creatives for ad {}",
                self.ad_id
            )));
        }
        if !(self.cpc_bid.is_finite() && self.cpc_bid >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "cpc_bid must be finite and non-negative, got {}",
                self.cpc_bid
            )));
        }
        Ok(())
    }
}

/// Upper bound on candidate list length accepted when reading logs.
pub const MAX_CANDIDATES: usize = 64;

pub fn write_log(path: &Path, records: &[ImpressionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_log_to(&mut out, records).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_log_to<W: Write>(out: &mut W, records: &[ImpressionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<ImpressionRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let rec: ImpressionRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        rec.validate(MAX_CANDIDATES)
            .map_err(|e| parse_err(e.to_string()))?;
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec() -> ImpressionRecord {
        ImpressionRecord {
            user_id: UserId(3),
            ad_id: AdId(1),
            shown_creative_id: CreativeId(11),
            candidate_creative_ids: vec![CreativeId(10), CreativeId(11)],
            click: 1,
            cpc_bid: 0.75,
        }
    }

    #[test]
    fn field_names_are_stable() {
        let line = serde_json::to_string(&rec()).unwrap();
        assert_eq!(
            line,
            r#"{"user_id":3,"ad_id":1,"shown_creative_id":11,"candidate_creative_ids":[10,11],"click":1,"cpc_bid":0.75}"#
        );
    }

    #[test]
    fn validation_rejects_bad_records() {
        let mut r = rec();
        r.shown_creative_id = CreativeId(99);
        assert!(r.validate(8).is_err());
        let mut r = rec();
        r.candidate_creative_ids = vec![CreativeId(11), CreativeId(11)];
        assert!(r.validate(8).is_err());
        let mut r = rec();
        r.click = 2;
        assert!(r.validate(8).is_err());
        assert!(rec().validate(1).is_err());
        assert!(rec().validate(8).is_ok());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let recs = vec![rec(), rec()];
        write_log(&path, &recs).unwrap();
        assert_eq!(read_log(&path).unwrap(), recs);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"user_id\":1}\n").unwrap();
        match read_log(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
