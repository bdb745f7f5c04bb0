use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateRequest<'a> {
    pub prompt: &'a str,
    pub temperature: f64,
    pub n: usize,
    pub max_tokens: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn fatal(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retryable: false,
        }
    }

    pub fn retryable(message: impl Into<String>) -> Self {
        BackendError {
            message: message.into(),
            retryable: true,
        }
    }
}

/// Anything that turns a prompt into `n` completions.
///
/// Implementations must be callable from several threads at once.
pub trait ModelBackend: Send + Sync {
    /// Stable description folded into cache fingerprints.
    fn identity(&self) -> String;

    /// Whether identical requests (same prompt, seed and `n`) return identical text.
    fn is_deterministic(&self) -> bool;

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<String>, BackendError>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<String>, BackendError> {
        (**self).generate(req)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for Box<B> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<String>, BackendError> {
        (**self).generate(req)
    }
}

type Responder = dyn Fn(&GenerateRequest<'_>) -> Result<Vec<String>, BackendError> + Send + Sync;

/// Scripted backend for tests and examples.
pub struct MockBackend {
    name: String,
    respond: Box<Responder>,
}

impl MockBackend {
    pub fn new<F>(name: impl Into<String>, respond: F) -> Self
    where
        F: Fn(&GenerateRequest<'_>) -> Result<Vec<String>, BackendError> + Send + Sync + 'static,
    {
        MockBackend {
            name: name.into(),
            respond: Box::new(respond),
        }
    }

    /// Always answers `text`, `n` times.
    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        let name = format!("mock-constant:{text}");
        MockBackend::new(name, move |req| Ok(vec![text.clone(); req.n]))
    }

    pub fn failing(message: impl Into<String>) -> Self {
        let message = message.into();
        MockBackend::new("mock-failing", move |_| Err(BackendError::fatal(message.clone())))
    }
}

impl ModelBackend for MockBackend {
    fn identity(&self) -> String {
        self.name.clone()
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<String>, BackendError> {
        (self.respond)(req)
    }
}

/// Counts `generate` calls on the wrapped backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: Arc<AtomicUsize>,
}

impl<B: ModelBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: ModelBackend> ModelBackend for CountingBackend<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    fn generate(&self, req: &GenerateRequest<'_>) -> Result<Vec<String>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(req)
    }
}
