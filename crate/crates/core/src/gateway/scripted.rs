use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{fingerprint, ChatBackend, CompletionRequest, GatewayError};

/// Recorded replies keyed by request fingerprint. On disk: a JSON object
/// `{fingerprint: [reply, ...]}` with keys sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    entries: BTreeMap<String, Vec<String>>,
}

impl Transcript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("malformed transcript: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GatewayError> {
        let text = serde_json::to_string_pretty(self).expect("transcript serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn insert(&mut self, model_id: &str, req: &CompletionRequest, replies: Vec<String>) {
        self.entries.insert(fingerprint(model_id, req), replies);
    }

    pub fn insert_fingerprint(&mut self, fingerprint: String, replies: Vec<String>) {
        self.entries.insert(fingerprint, replies);
    }

    pub fn get(&self, fingerprint: &str) -> Option<&[String]> {
        self.entries.get(fingerprint).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn merge(&mut self, other: Transcript) {
        self.entries.extend(other.entries);
    }
}

/// Replays a [`Transcript`]. Bit-deterministic: same fingerprint, same reply.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    transcript: Transcript,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self { transcript }
    }

    fn replies(&self, model_id: &str, req: &CompletionRequest) -> Result<&[String], GatewayError> {
        let fp = fingerprint(model_id, req);
        match self.transcript.get(&fp) {
            Some(r) if !r.is_empty() => Ok(r),
            _ => Err(GatewayError::TranscriptMiss { fingerprint: fp }),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, model_id: &str, req: &CompletionRequest) -> Result<String, GatewayError> {
        Ok(self.replies(model_id, req)?[0].clone())
    }

    fn sample_n(
        &self,
        model_id: &str,
        req: &CompletionRequest,
        n: usize,
    ) -> Result<Vec<String>, GatewayError> {
        let replies = self.replies(model_id, req)?;
        if replies.len() < n {
            return Err(GatewayError::TranscriptShort {
                fingerprint: fingerprint(model_id, req),
                available: replies.len(),
                requested: n,
            });
        }
        Ok(replies[..n].to_vec())
    }
}

type ReplyFn = dyn Fn(&CompletionRequest, usize) -> Result<Vec<String>, GatewayError> + Send + Sync;

/// Programmatic backend: a closure receives the request and sample count and returns the
/// replies. Used to author transcripts (wrapped in a [`Recorder`]) and as a test double.
pub struct FnBackend {
    reply: Box<ReplyFn>,
}

impl FnBackend {
    pub fn new<F>(reply: F) -> Self
    where
        F: Fn(&CompletionRequest, usize) -> Result<Vec<String>, GatewayError> + Send + Sync + 'static,
    {
        Self { reply: Box::new(reply) }
    }

    /// Backend whose single reply depends only on the request.
    pub fn single<F>(reply: F) -> Self
    where
        F: Fn(&CompletionRequest) -> String + Send + Sync + 'static,
    {
        Self::new(move |req, n| Ok(vec![reply(req); n]))
    }
}

impl ChatBackend for FnBackend {
    fn complete(&self, _model_id: &str, req: &CompletionRequest) -> Result<String, GatewayError> {
        let mut out = (self.reply)(req, 1)?;
        if out.is_empty() {
            return Err(GatewayError::Protocol("empty reply list".into()));
        }
        Ok(out.swap_remove(0))
    }

    fn sample_n(
        &self,
        _model_id: &str,
        req: &CompletionRequest,
        n: usize,
    ) -> Result<Vec<String>, GatewayError> {
        (self.reply)(req, n)
    }
}

/// Wraps a backend and records every reply into a transcript that a [`ScriptedBackend`]
/// can replay later.
pub struct Recorder {
    inner: Arc<dyn ChatBackend>,
    transcript: Arc<Mutex<Transcript>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn ChatBackend>, transcript: Arc<Mutex<Transcript>>) -> Self {
        Self { inner, transcript }
    }

    fn record(&self, model_id: &str, req: &CompletionRequest, replies: &[String]) {
        let fp = fingerprint(model_id, req);
        let mut t = self.transcript.lock().expect("transcript poisoned");
        let longer = t.get(&fp).is_none_or(|r| r.len() < replies.len());
        if longer {
            t.insert_fingerprint(fp, replies.to_vec());
        }
    }
}

impl ChatBackend for Recorder {
    fn complete(&self, model_id: &str, req: &CompletionRequest) -> Result<String, GatewayError> {
        let reply = self.inner.complete(model_id, req)?;
        self.record(model_id, req, std::slice::from_ref(&reply));
        Ok(reply)
    }

    fn sample_n(
        &self,
        model_id: &str,
        req: &CompletionRequest,
        n: usize,
    ) -> Result<Vec<String>, GatewayError> {
        let replies = self.inner.sample_n(model_id, req, n)?;
        self.record(model_id, req, &replies);
        Ok(replies)
    }
}
