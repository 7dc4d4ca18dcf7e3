//! ND-JSON batch files: one header line, then one source record per line.
//!
//! ```text
//! {"visit_id":12,"ccd_id":7,"server_id":"A"}
//! {"source_id":1,"visit_id":12,"ccd_id":7,"ra":10.0,"dec":-3.5,"epoch":156.0,"flux":4.2,"filter":"r"}
//! ```

use serde::{Deserialize, Serialize};

use super::{DetectionBatch, ServerId};
use crate::error::{Error, Result};
use crate::types::{CcdId, SourceRecord, VisitId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub visit_id: VisitId,
    pub ccd_id: CcdId,
    pub server_id: ServerId,
}

pub fn parse_batch_ndjson(text: &str, received_at: f64) -> Result<DetectionBatch> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::Parse("batch file is empty".into()))?;
    let header: BatchHeader = serde_json::from_str(head)
        .map_err(|e| Error::Parse(format!("line 1: bad batch header: {e}")))?;
    let records = lines
        .map(|(n, l)| {
            serde_json::from_str::<SourceRecord>(l)
                .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionBatch {
        visit_id: header.visit_id,
        ccd_id: header.ccd_id,
        server_id: header.server_id,
        records,
        received_at,
    })
}

pub fn write_batch_ndjson(batch: &DetectionBatch) -> String {
    let header = BatchHeader {
        visit_id: batch.visit_id,
        ccd_id: batch.ccd_id,
        server_id: batch.server_id,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in &batch.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}
