//! The replayable run trace: newline-delimited records with a stable field
//! order, hashed line by line into the run digest.

use crate::time::SimTime;
use sha2::{Digest, Sha256};
use std::fmt;

/// One trace record. Field order in the rendered line is fixed:
/// `t kind from to term index digest note`; absent fields render as `-`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: SimTime,
    pub kind: String,
    pub from: Option<usize>,
    pub to: Option<usize>,
    pub term: Option<u64>,
    pub index: Option<u64>,
    pub digest: Option<String>,
    pub note: String,
}

impl TraceRecord {
    pub fn new(t: SimTime, kind: &str) -> TraceRecord {
        TraceRecord {
            t,
            kind: kind.to_string(),
            from: None,
            to: None,
            term: None,
            index: None,
            digest: None,
            note: String::new(),
        }
    }

    pub fn render(&self) -> String {
        fn opt<T: fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_else(|| "-".to_string())
        }
        format!(
            "t={:.3} kind={} from={} to={} term={} index={} digest={} note={}",
            self.t.as_ms(),
            self.kind,
            opt(&self.from),
            opt(&self.to),
            opt(&self.term),
            opt(&self.index),
            self.digest.as_deref().unwrap_or("-"),
            if self.note.is_empty() { "-" } else { &self.note },
        )
    }

    /// Parses a rendered line back into a record. Returns None on any
    /// malformed field.
    pub fn parse(line: &str) -> Option<TraceRecord> {
        let mut rec = TraceRecord::new(SimTime::ZERO, "");
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (key, value) = field.split_once('=')?;
            match key {
                "t" => rec.t = SimTime::from_ms(value.parse::<f64>().ok()?),
                "kind" => rec.kind = value.to_string(),
                "from" => rec.from = parse_opt(value)?,
                "to" => rec.to = parse_opt(value)?,
                "term" => rec.term = parse_opt(value)?,
                "index" => rec.index = parse_opt(value)?,
                "digest" => {
                    rec.digest = if value == "-" { None } else { Some(value.to_string()) }
                }
                "note" => rec.note = if value == "-" { String::new() } else { value.to_string() },
                _ => return None,
            }
            seen += 1;
        }
        if seen != 8 {
            return None;
        }
        Some(rec)
    }

    /// Looks up `key:` in the comma-separated note field.
    pub fn note_value(&self, key: &str) -> Option<&str> {
        self.note
            .split(',')
            .find_map(|kv| kv.strip_prefix(key).and_then(|rest| rest.strip_prefix(':')))
    }
}

fn parse_opt<T: std::str::FromStr>(value: &str) -> Option<Option<T>> {
    if value == "-" {
        Some(None)
    } else {
        value.parse::<T>().ok().map(Some)
    }
}

/// Short hex form of an entry digest used throughout the trace.
pub fn short_digest(d: &[u8; 32]) -> String {
    hex::encode(&d[..8])
}

#[derive(Debug, Default, Clone)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Trace {
        Trace::default()
    }

    pub fn push(&mut self, rec: TraceRecord) {
        self.records.push(rec);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// SHA-256 over the rendered lines (each newline-terminated), hex-encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(r.render());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.render());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Option<Trace> {
        let mut records = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(TraceRecord::parse(line)?);
        }
        Some(Trace { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut rec = TraceRecord::new(SimTime::from_ms(1.5), "send");
        rec.from = Some(0);
        rec.to = Some(3);
        rec.term = Some(2);
        rec.index = Some(7);
        rec.digest = Some("00aabb".into());
        rec.note = "msg:append,mid:5".into();
        let line = rec.render();
        assert_eq!(TraceRecord::parse(&line).unwrap(), rec);
        assert_eq!(rec.note_value("mid"), Some("5"));
        assert_eq!(rec.note_value("msg"), Some("append"));
        assert_eq!(rec.note_value("absent"), None);
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let mut a = Trace::new();
        a.push(TraceRecord::new(SimTime::ZERO, "commit"));
        let mut b = Trace::new();
        b.push(TraceRecord::new(SimTime::ZERO, "commit"));
        assert_eq!(a.digest(), b.digest());
        b.push(TraceRecord::new(SimTime::ZERO, "role"));
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn parse_rejects_malformed_lines() {
        assert!(TraceRecord::parse("nonsense").is_none());
        assert!(TraceRecord::parse("t=1.0 kind=send").is_none());
    }

    #[test]
    fn trace_text_round_trip() {
        let mut tr = Trace::new();
        let mut rec = TraceRecord::new(SimTime::from_ms(0.25), "deliver");
        rec.from = Some(1);
        tr.push(rec);
        let text = tr.render();
        let parsed = Trace::parse(&text).unwrap();
        assert_eq!(parsed.records(), tr.records());
        assert_eq!(parsed.digest(), tr.digest());
    }
}
