//! Simulated time, in microseconds.

pub type Micros = u64;

pub const MICROS_PER_MS: Micros = 1_000;
pub const MICROS_PER_SEC: Micros = 1_000_000;

pub const fn ms(n: u64) -> Micros {
    n * MICROS_PER_MS
}

pub const fn secs(n: u64) -> Micros {
    n * MICROS_PER_SEC
}
