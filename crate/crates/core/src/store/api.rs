//! Request/response protocol for hosting the store behind a socket or pipe.
//!
//! Every message is a frame: a 4-byte big-endian length followed by that
//! many bytes of UTF-8 JSON. Requests carry an `op` tag.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Ack, CheckOutcome, Store, StoreError};
use crate::ids::{ExerciseId, StudentId, Timestamp};
use crate::intervention::Disposition;
use crate::working_time::WorkEvent;

/// Frames larger than this are rejected.
pub const MAX_FRAME_BYTES: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ApiRequest {
    IngestEvent {
        event: WorkEvent,
    },
    TimerStatus {
        student_id: StudentId,
        exercise_id: ExerciseId,
    },
    InterventionCheck {
        student_id: StudentId,
        exercise_id: ExerciseId,
        now: Timestamp,
    },
    SubmitOutcome {
        student_id: StudentId,
        exercise_id: ExerciseId,
        score_fraction: f64,
        timestamp: Timestamp,
    },
    RecordDisposition {
        decision_id: u64,
        disposition: Disposition,
    },
    KnowledgeSnapshot {
        student_id: StudentId,
    },
    Recommend {
        student_id: StudentId,
        week: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ApiResponse {
    pub fn success(result: Value) -> Self {
        Self {
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(error: impl ToString) -> Self {
        Self {
            ok: false,
            result: None,
            error: Some(error.to_string()),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("API values serialize")
}

fn ack_json(ack: Ack) -> Value {
    json!({ "stored": ack == Ack::Stored })
}

/// Executes one request against the store.
pub fn handle(store: &mut Store, request: ApiRequest) -> ApiResponse {
    match dispatch(store, request) {
        Ok(v) => ApiResponse::success(v),
        Err(e) => ApiResponse::failure(e),
    }
}

fn dispatch(store: &mut Store, request: ApiRequest) -> Result<Value, StoreError> {
    Ok(match request {
        ApiRequest::IngestEvent { event } => ack_json(store.ingest_event(event)?),
        ApiRequest::TimerStatus {
            student_id,
            exercise_id,
        } => to_value(&store.timer_status(&student_id, &exercise_id)?),
        ApiRequest::InterventionCheck {
            student_id,
            exercise_id,
            now,
        } => match store.intervention_check(&student_id, &exercise_id, now)? {
            CheckOutcome::None => json!({ "fire": false }),
            CheckOutcome::Fired(r) => json!({
                "fire": true,
                "kind": r.kind,
                "decision_id": r.id,
                "target_seconds": r.target_seconds,
            }),
            CheckOutcome::Shadow(r) => json!({
                "fire": false,
                "decision_id": r.id,
                "target_seconds": r.target_seconds,
            }),
        },
        ApiRequest::SubmitOutcome {
            student_id,
            exercise_id,
            score_fraction,
            timestamp,
        } => ack_json(store.submit_outcome(&student_id, &exercise_id, score_fraction, timestamp)?),
        ApiRequest::RecordDisposition {
            decision_id,
            disposition,
        } => {
            store.record_disposition(decision_id, disposition)?;
            json!({})
        }
        ApiRequest::KnowledgeSnapshot { student_id } => to_value(&store.knowledge_snapshot(&student_id)?),
        ApiRequest::Recommend { student_id, week } => to_value(&store.recommend(&student_id, week)?),
    })
}

/// Reads one frame. Returns `None` on a clean end of stream.
pub fn read_frame(reader: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match reader.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut buf = vec![0u8; len as usize];
    reader.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn write_frame(writer: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l <= MAX_FRAME_BYTES)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    writer.write_all(&len.to_be_bytes())?;
    writer.write_all(payload)?;
    writer.flush()
}

/// Serves framed requests until the reader is exhausted. Returns the number
/// of requests handled.
pub fn serve(store: &mut Store, mut reader: impl Read, mut writer: impl Write) -> io::Result<usize> {
    let mut handled = 0;
    while let Some(frame) = read_frame(&mut reader)? {
        let response = match serde_json::from_slice::<ApiRequest>(&frame) {
            Ok(request) => handle(store, request),
            Err(e) => ApiResponse::failure(StoreError::Malformed(e.to_string())),
        };
        let bytes = serde_json::to_vec(&response).expect("responses serialize");
        write_frame(&mut writer, &bytes)?;
        handled += 1;
    }
    store.flush().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(handled)
}
