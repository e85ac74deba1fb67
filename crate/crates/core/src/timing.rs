//! Wall-clock measurement that degrades to zero on targets without a clock.

#[cfg(not(all(target_arch = "wasm32", target_os = "unknown")))]
mod imp {
    use std::time::Instant;

    #[derive(Clone, Copy, Debug)]
    pub struct Stopwatch(Instant);

    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch(Instant::now())
        }

        pub fn elapsed_seconds(&self) -> f64 {
            self.0.elapsed().as_secs_f64()
        }
    }
}

#[cfg(all(target_arch = "wasm32", target_os = "unknown"))]
mod imp {
    #[derive(Clone, Copy, Debug)]
    pub struct Stopwatch;

    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch
        }

        pub fn elapsed_seconds(&self) -> f64 {
            0.0
        }
    }
}

pub use imp::Stopwatch;
