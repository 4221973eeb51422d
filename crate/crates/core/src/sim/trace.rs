//! Line-delimited JSON trace of processed events.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One trace line. Optional fields are omitted when absent so that lines
/// stay short; the field order is fixed, so identical runs produce
/// identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TraceRecord {
    pub t: f64,
    pub seq: u64,
    pub ev: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub msg_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent_at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl TraceRecord {
    pub fn new(t: f64, seq: u64, ev: &str) -> Self {
        Self {
            t,
            seq,
            ev: ev.to_owned(),
            ..Default::default()
        }
    }

    pub fn node(mut self, n: u64) -> Self {
        self.node = Some(n);
        self
    }

    pub fn peer(mut self, n: u64) -> Self {
        self.peer = Some(n);
        self
    }

    pub fn label(mut self, l: impl Into<String>) -> Self {
        self.label = Some(l.into());
        self
    }

    pub fn reason(mut self, r: &str) -> Self {
        self.reason = Some(r.to_owned());
        self
    }

    pub fn parse(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}

/// Collects the trace: always hashes it, optionally keeps lines in memory
/// and/or streams them to a writer.
pub struct Trace {
    hasher: Sha256,
    count: u64,
    keep: Option<Vec<String>>,
    writer: Option<Box<dyn Write>>,
    io_error: Option<io::Error>,
}

impl Default for Trace {
    fn default() -> Self {
        Self::hash_only()
    }
}

impl Trace {
    pub fn hash_only() -> Self {
        Self {
            hasher: Sha256::new(),
            count: 0,
            keep: None,
            writer: None,
            io_error: None,
        }
    }

    pub fn in_memory() -> Self {
        Self {
            keep: Some(Vec::new()),
            ..Self::hash_only()
        }
    }

    pub fn to_writer(w: Box<dyn Write>) -> Self {
        Self {
            writer: Some(w),
            ..Self::hash_only()
        }
    }

    pub fn record(&mut self, rec: &TraceRecord) {
        let line = serde_json::to_string(rec).expect("trace records always serialize");
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
        if let Some(w) = self.writer.as_mut() {
            if self.io_error.is_none() {
                if let Err(e) = writeln!(w, "{line}") {
                    self.io_error = Some(e);
                }
            }
        }
        if let Some(keep) = self.keep.as_mut() {
            keep.push(line);
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if let Some(e) = self.io_error.take() {
            return Err(e);
        }
        match self.writer.as_mut() {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Kept lines, if the trace was created with [`Trace::in_memory`].
    pub fn lines(&self) -> &[String] {
        self.keep.as_deref().unwrap_or(&[])
    }

    /// SHA-256 over all lines so far, hex encoded.
    pub fn digest_hex(&self) -> String {
        let d = self.hasher.clone().finalize();
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}
