//! Opt-in per-thread op instrumentation.
//!
//! Ops report what they executed (multiplications for the MAC-bearing kernels,
//! element counts for everything else) tagged with the innermost active layer
//! scope. Nothing is recorded unless [`profiled`] is running on this thread.

use std::cell::RefCell;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    /// Dense matrix product.
    MatMul,
    /// 1D/2D convolution (pointwise included).
    Conv,
    /// Complex channel mixing of Fourier coefficients.
    SpectralMix,
    /// Forward or inverse real FFT.
    Fft,
    /// Linear / bilinear resampling.
    Resize,
    /// Activations, norms and elementwise arithmetic.
    Elementwise,
    /// Fake quantization (simulation only, not an inference op).
    FakeQuant,
}

impl OpKind {
    /// Ops whose multiplications the cost model must attribute to a layer.
    pub fn is_mac(self) -> bool {
        matches!(self, OpKind::MatMul | OpKind::Conv | OpKind::SpectralMix)
    }
}

#[derive(Clone, Debug)]
pub struct OpRecord {
    pub scope: Option<String>,
    pub kind: OpKind,
    pub op: &'static str,
    /// Multiplications executed (nominal, padding taps included).
    pub mults: u64,
    /// Output elements produced.
    pub elements: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Profile {
    pub records: Vec<OpRecord>,
}

impl Profile {
    pub fn mac_mults(&self) -> u64 {
        self.records.iter().filter(|r| r.kind.is_mac()).map(|r| r.mults).sum()
    }

    pub fn mults_in_scope(&self, scope: &str) -> u64 {
        self.records
            .iter()
            .filter(|r| r.kind.is_mac() && r.scope.as_deref() == Some(scope))
            .map(|r| r.mults)
            .sum()
    }

    pub fn count(&self, op: &str) -> usize {
        self.records.iter().filter(|r| r.op == op).count()
    }
}

#[derive(Default)]
struct State {
    active: Option<Profile>,
    scopes: Vec<String>,
}

thread_local! {
    static STATE: RefCell<State> = RefCell::new(State::default());
}

/// Runs `f` with instrumentation enabled and returns what it recorded.
/// Nested calls are not supported; the inner call takes over.
pub fn profiled<R>(f: impl FnOnce() -> R) -> (R, Profile) {
    let previous = STATE.with(|s| s.borrow_mut().active.replace(Profile::default()));
    let out = f();
    let profile = STATE.with(|s| {
        let mut s = s.borrow_mut();
        let p = s.active.take().unwrap_or_default();
        s.active = previous;
        p
    });
    (out, profile)
}

/// Tags everything recorded inside `f` with `name`.
pub fn scoped<R>(name: &str, f: impl FnOnce() -> R) -> R {
    let pushed = STATE.with(|s| {
        let mut s = s.borrow_mut();
        if s.active.is_some() {
            s.scopes.push(name.to_string());
            true
        } else {
            false
        }
    });
    let out = f();
    if pushed {
        STATE.with(|s| s.borrow_mut().scopes.pop());
    }
    out
}

pub(crate) fn record(kind: OpKind, op: &'static str, mults: u64, elements: u64) {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        let scope = s.scopes.last().cloned();
        if let Some(p) = s.active.as_mut() {
            p.records.push(OpRecord { scope, kind, op, mults, elements });
        }
    });
}
