//! FIFO fixture backend for tests: preloaded responses, popped in order.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Backend, CallCtx, Conversation, GatewayError};

/// Answers each call with the next queued response; errors with
/// [`GatewayError::ScriptExhausted`] when the queue runs dry. Also keeps
/// every request it saw so tests can assert on prompt contents.
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    requests: Mutex<Vec<(CallCtx, Conversation)>>,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(responses: Vec<String>) -> Self {
        Self {
            queue: Mutex::new(responses.into()),
            requests: Mutex::new(Vec::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_strs(responses: &[&str]) -> Self {
        Self::new(responses.iter().map(|s| s.to_string()).collect())
    }

    /// Append another response to the back of the queue.
    pub fn push(&self, response: impl Into<String>) {
        self.queue.lock().unwrap().push_back(response.into());
    }

    /// Number of completed calls (successful pops and exhausted attempts).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    /// Every request seen so far, in call order.
    pub fn requests(&self) -> Vec<(CallCtx, Conversation)> {
        self.requests.lock().unwrap().clone()
    }

    /// Concatenated text of the `i`-th request; panics when out of range.
    pub fn request_text(&self, i: usize) -> String {
        self.requests.lock().unwrap()[i].1.text_content()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, ctx: &CallCtx, conversation: &Conversation) -> Result<String, GatewayError> {
        self.requests
            .lock()
            .unwrap()
            .push((ctx.clone(), conversation.clone()));
        let popped = self.queue.lock().unwrap().pop_front();
        let calls = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        popped.ok_or(GatewayError::ScriptExhausted { calls })
    }
}
