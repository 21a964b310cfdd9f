use std::f64::consts::PI;

/// Steps of linear warmup: `⌈warmup_frac · total⌉`.
pub fn warmup_steps(total_steps: u64, warmup_frac: f64) -> u64 {
    (warmup_frac * total_steps as f64).ceil() as u64
}

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: u64, total_steps: u64, peak: f64, warmup_frac: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps);
    let warmup = warmup_steps(total_steps, warmup_frac);
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total_steps == warmup {
        return peak;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    peak * 0.5 * (1.0 + (PI * progress).cos())
}
