//! Process-wide kernel variant switches.
//!
//! The autotuner (runtime::autotune) writes selections here; compute kernels
//! read them at call sites. Selections only affect which implementation runs,
//! never the result, so sharing them across concurrently running harnesses is
//! harmless.

use std::sync::atomic::{AtomicUsize, Ordering};

pub const LOCAL_GRAD_NAIVE: usize = 0;
pub const LOCAL_GRAD_SLICED: usize = 1;

pub const LAPLACE_STAGED: usize = 0;
pub const LAPLACE_FUSED: usize = 1;

pub const GS_PREPACK: usize = 0;
pub const GS_PERMESSAGE: usize = 1;

pub const ADV_INTERP_RST: usize = 0;
pub const ADV_INTERP_TSR: usize = 1;

static LOCAL_GRAD: AtomicUsize = AtomicUsize::new(LOCAL_GRAD_NAIVE);
static LAPLACE: AtomicUsize = AtomicUsize::new(LAPLACE_STAGED);
static GS_EXCHANGE: AtomicUsize = AtomicUsize::new(GS_PREPACK);
static ADV_INTERP: AtomicUsize = AtomicUsize::new(ADV_INTERP_RST);

pub fn local_grad_variant() -> usize {
    LOCAL_GRAD.load(Ordering::Relaxed)
}

pub fn set_local_grad_variant(v: usize) {
    LOCAL_GRAD.store(v, Ordering::Relaxed);
}

pub fn laplace_variant() -> usize {
    LAPLACE.load(Ordering::Relaxed)
}

pub fn set_laplace_variant(v: usize) {
    LAPLACE.store(v, Ordering::Relaxed);
}

pub fn gs_variant() -> usize {
    GS_EXCHANGE.load(Ordering::Relaxed)
}

pub fn set_gs_variant(v: usize) {
    GS_EXCHANGE.store(v, Ordering::Relaxed);
}

pub fn adv_interp_variant() -> usize {
    ADV_INTERP.load(Ordering::Relaxed)
}

pub fn set_adv_interp_variant(v: usize) {
    ADV_INTERP.store(v, Ordering::Relaxed);
}
