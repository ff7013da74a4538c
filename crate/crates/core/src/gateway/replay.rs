//! Replays a recorded manifest: answers each call from the matching record
//! instead of the network.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use super::{
    canonical_hash, read_manifest, Backend, BackendInfo, CallCtx, CallRecord, Conversation,
    GatewayError, Stage,
};

/// Serves responses from recorded calls. Lookup is by canonical request
/// hash first — the request being asked now is byte-identical to the one
/// recorded. When prompts have drifted since recording, hash lookup fails;
/// non-strict replay then falls back to the next unconsumed record for the
/// same (case, stage), in turn order. Strict replay treats a hash miss as
/// an error, which is what the determinism check wants.
///
/// Every record is served at most once, so a pipeline that makes more calls
/// than were recorded fails rather than looping on a stale answer.
pub struct ReplayBackend {
    state: Mutex<ReplayState>,
    strict: bool,
    model_name: String,
}

struct ReplayState {
    records: Vec<CallRecord>,
    consumed: Vec<bool>,
    by_hash: HashMap<String, VecDeque<usize>>,
    by_key: HashMap<(String, Stage), VecDeque<usize>>,
}

impl ReplayBackend {
    pub fn from_records(records: Vec<CallRecord>, strict: bool) -> Self {
        let mut by_hash: HashMap<String, VecDeque<usize>> = HashMap::new();
        let mut by_key: HashMap<(String, Stage), VecDeque<usize>> = HashMap::new();
        let mut order: Vec<usize> = (0..records.len()).collect();
        // Queue per key in turn order regardless of file order.
        order.sort_by_key(|&i| (records[i].case_id.clone(), records[i].stage, records[i].turn_index));
        for i in order {
            let r = &records[i];
            by_hash.entry(r.request_hash.clone()).or_default().push_back(i);
            by_key
                .entry((r.case_id.clone(), r.stage))
                .or_default()
                .push_back(i);
        }
        let consumed = vec![false; records.len()];
        let model_name = records
            .first()
            .map(|r| r.model_name.clone())
            .unwrap_or_else(|| "replay".to_string());
        Self {
            state: Mutex::new(ReplayState {
                records,
                consumed,
                by_hash,
                by_key,
            }),
            strict,
            model_name,
        }
    }

    pub fn from_manifest(path: &Path, strict: bool) -> Result<Self, GatewayError> {
        let manifest = read_manifest(path)?;
        Ok(Self::from_records(manifest.records, strict))
    }

    /// Records never served. Empty after a faithful replay.
    pub fn unconsumed(&self) -> usize {
        let state = self.state.lock().unwrap();
        state.consumed.iter().filter(|&&c| !c).count()
    }
}

fn pop_unconsumed(queue: &mut VecDeque<usize>, consumed: &[bool]) -> Option<usize> {
    while let Some(i) = queue.pop_front() {
        if !consumed[i] {
            return Some(i);
        }
    }
    None
}

impl Backend for ReplayBackend {
    fn complete(&self, ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError> {
        let hash = canonical_hash(conversation);
        let mut state = self.state.lock().unwrap();
        let ReplayState {
            records,
            consumed,
            by_hash,
            by_key,
        } = &mut *state;

        let found = by_hash
            .get_mut(&hash)
            .and_then(|q| pop_unconsumed(q, consumed))
            .or_else(|| {
                if self.strict {
                    return None;
                }
                by_key
                    .get_mut(&(ctx.case_id.clone(), ctx.stage))
                    .and_then(|q| pop_unconsumed(q, consumed))
            });

        match found {
            Some(i) => {
                consumed[i] = true;
                Ok(records[i].response.clone())
            }
            None => Err(GatewayError::ReplayMiss {
                case_id: ctx.case_id.clone(),
                stage: ctx.stage,
            }),
        }
    }

    fn info(&self) -> BackendInfo {
        BackendInfo {
            model_name: self.model_name.clone(),
            temperature: 0.0,
        }
    }
}
