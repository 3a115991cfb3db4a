use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::{Map, Value};

use crate::error::Result;

/// Line-delimited JSON event log. Each line carries `event`, the elapsed
/// milliseconds since the log was opened and the given fields.
pub struct EventLog {
    out: Option<BufWriter<File>>,
    started: Instant,
    events: Vec<Value>,
}

impl EventLog {
    /// Appends to `path`, creating it if needed.
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::options().create(true).append(true).open(path)?;
        Ok(Self { out: Some(BufWriter::new(f)), started: Instant::now(), events: Vec::new() })
    }

    /// Keeps events in memory only.
    pub fn memory() -> Self {
        Self { out: None, started: Instant::now(), events: Vec::new() }
    }

    pub fn event(&mut self, name: &str, fields: Value) {
        let mut m = Map::new();
        m.insert("event".into(), name.into());
        m.insert("ms".into(), (self.started.elapsed().as_secs_f64() * 1e3).into());
        if let Value::Object(f) = fields {
            m.extend(f);
        }
        let v = Value::Object(m);
        if let Some(w) = &mut self.out {
            if serde_json::to_writer(&mut *w, &v).is_ok() {
                let _ = w.write_all(b"\n");
                let _ = w.flush();
            }
        }
        ::log::debug!("{v}");
        self.events.push(v);
    }

    pub fn events(&self) -> &[Value] {
        &self.events
    }

    /// Events with the given name.
    pub fn named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Value> + 'a {
        self.events.iter().filter(move |e| e["event"] == name)
    }
}
