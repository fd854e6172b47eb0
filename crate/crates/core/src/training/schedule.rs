use alloc::format;

use crate::{Error, Result};

/// Linear warmup from 0 to `lr` over `warmup` steps, then cosine decay to 0
/// at `total`.
pub fn lr_at(step: u64, lr: f64, warmup: u64, total: u64) -> Result<f64> {
    if warmup > total {
        return Err(Error::invalid("warmup_steps", format!("{warmup} exceeds total_steps {total}")));
    }
    if step > total {
        return Err(Error::invalid("step", format!("{step} outside [0, {total}]")));
    }
    if step < warmup {
        return Ok(lr * step as f64 / warmup as f64);
    }
    if total == warmup {
        return Ok(lr);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    Ok(lr * 0.5 * (1.0 + num_traits::Float::cos(core::f64::consts::PI * progress)))
}
