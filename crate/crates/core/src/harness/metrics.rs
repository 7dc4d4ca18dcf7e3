//! ND-JSON metric events.
//!
//! Every line is one object that starts with `"event"` and `"t"` (simulated
//! seconds), followed by the event's own fields. Anything measured on the
//! wall clock is nested under a `"wall"` key so that runs can be compared
//! with [`strip_wall`].

use std::io::Write;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub struct MetricsSink {
    writer: Option<Box<dyn Write + Send>>,
    captured: Option<Vec<String>>,
    events: u64,
}

impl std::fmt::Debug for MetricsSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsSink")
            .field("events", &self.events)
            .field("capturing", &self.captured.is_some())
            .finish()
    }
}

impl MetricsSink {
    /// Drops every event.
    pub fn null() -> Self {
        MetricsSink {
            writer: None,
            captured: None,
            events: 0,
        }
    }

    /// Keeps events in memory; see [`lines`](Self::lines).
    pub fn memory() -> Self {
        MetricsSink {
            captured: Some(Vec::new()),
            ..Self::null()
        }
    }

    pub fn writer(w: impl Write + Send + 'static) -> Self {
        MetricsSink {
            writer: Some(Box::new(w)),
            ..Self::null()
        }
    }

    pub fn lines(&self) -> &[String] {
        self.captured.as_deref().unwrap_or(&[])
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    /// Emits one event. `fields` must serialize to a JSON object.
    pub fn emit<T: Serialize>(&mut self, event: &str, t: f64, fields: &T) -> Result<()> {
        let Value::Object(map) = serde_json::to_value(fields)? else {
            return Err(Error::Parse(format!("fields of {event:?} are not an object")));
        };
        let mut line = format!(
            "{{\"event\":{},\"t\":{}",
            serde_json::to_string(event)?,
            serde_json::to_string(&t)?
        );
        for (k, v) in map {
            if k == "event" || k == "t" {
                continue;
            }
            line.push(',');
            line.push_str(&serde_json::to_string(&k)?);
            line.push(':');
            line.push_str(&serde_json::to_string(&v)?);
        }
        line.push('}');
        if let Some(w) = self.writer.as_mut() {
            writeln!(w, "{line}")?;
        }
        if let Some(c) = self.captured.as_mut() {
            c.push(line);
        }
        self.events += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

/// Parses one metric line and removes every `"wall"` member, at any depth.
pub fn strip_wall(line: &str) -> Result<Value> {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(m) => {
                m.remove("wall");
                m.values_mut().for_each(strip);
            }
            Value::Array(a) => a.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v: Value = serde_json::from_str(line)?;
    strip(&mut v);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn event_and_time_lead() {
        let mut m = MetricsSink::memory();
        m.emit("visit", 13.0, &json!({"a": 1, "wall": {"s": 0.2}}))
            .unwrap();
        assert_eq!(m.lines()[0], r#"{"event":"visit","t":13.0,"a":1,"wall":{"s":0.2}}"#);
        let v = strip_wall(&m.lines()[0]).unwrap();
        assert_eq!(v, json!({"event": "visit", "t": 13.0, "a": 1}));
    }

    #[test]
    fn non_object_rejected() {
        let mut m = MetricsSink::memory();
        assert!(m.emit("x", 0.0, &3).is_err());
        assert_eq!(m.events(), 0);
    }
}
