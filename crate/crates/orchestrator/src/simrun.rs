//! Drives a simulated run, optionally paced against the wall clock.

use std::thread;
use std::time::{Duration, Instant};

use chainbox_core::experiment::SimulatedRun;
use chainbox_core::ExperimentConfig;

use crate::registry::{Observer, Outcome};
use crate::snapshot::{ReorgWatch, Tile};
use crate::SNAPSHOT_INTERVAL_MS;

fn tiles(run: &SimulatedRun, watch: &mut ReorgWatch) -> Vec<Tile> {
    let logs = run.simulation().logs();
    run.statuses()
        .into_iter()
        .enumerate()
        .map(|(i, status)| Tile { status, reorg_depth: watch.observe(i, &logs[i].events) })
        .collect()
}

/// Runs `config` to its stop condition, publishing a snapshot every
/// [`SNAPSHOT_INTERVAL_MS`] of simulated time. With `pace`, simulated time
/// advances at `pace` times wall-clock speed.
pub fn run_simulated(config: &ExperimentConfig, pace: Option<f64>, observer: &mut dyn Observer) -> Outcome {
    let mut run = match SimulatedRun::new(config.clone()) {
        Ok(run) => run,
        Err(e) => return Outcome { error: Some(e.to_string()), ..Outcome::default() },
    };
    let mut watch = ReorgWatch::new(config.n);
    let step_us = SNAPSHOT_INTERVAL_MS * 1000;
    let wall_start = Instant::now();
    let mut until_us = step_us;
    loop {
        if observer.stop_requested() {
            return Outcome { logs: run.into_logs(), aborted: true, ..Outcome::default() };
        }
        let done = run.advance(until_us);
        observer.publish(run.now_us() / 1000, tiles(&run, &mut watch));
        if done {
            break;
        }
        if let Some(pace) = pace {
            let due = wall_start + Duration::from_secs_f64(until_us as f64 / 1e6 / pace);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        until_us += step_us;
    }
    run.finish();
    observer.publish(run.now_us() / 1000, tiles(&run, &mut watch));
    let settle_rounds = run.settle_rounds();
    Outcome { logs: run.into_logs(), settle_rounds, ..Outcome::default() }
}
