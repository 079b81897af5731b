//! Thread-parallel drivers. Each job is deterministic on its own, so results
//! are collected in input order and equal the serial ones.

use std::time::Instant;

use sls_core::data::EdgePartition;
use sls_core::edge::{train_edge, EdgeModelSet, EdgeSpec};
use sls_core::fl::{FlConfig, FlState, FlTrace};
use sls_core::nn::Network;
use sls_core::Matrix;

use crate::error::Result;

/// `f` over `items` on up to `jobs` threads, results in input order.
pub fn map_jobs<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let workers = jobs.min(items.len());
    let f = &f;
    let mut out: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..items.len())
                        .step_by(workers)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Edge training with one job per edge.
pub fn train_edges_parallel(partition: &EdgePartition, spec: &EdgeSpec, jobs: usize) -> Result<EdgeModelSet> {
    let ids: Vec<usize> = (1..=partition.m()).collect();
    let trained = map_jobs(&ids, jobs, |&k| train_edge(k, &partition.edges[k - 1], spec))
        .into_iter()
        .collect::<sls_core::Result<Vec<_>>>()?;
    Ok(EdgeModelSet::from_parts(partition, spec.clone(), trained)?)
}

/// FedAvg with client updates of each round run in parallel. `wall_clock`
/// stamps each round record with elapsed seconds.
pub fn fl_run_parallel(
    clients: &[&Matrix],
    val: &Matrix,
    config: &FlConfig,
    jobs: usize,
    wall_clock: bool,
) -> Result<(FlTrace, Network)> {
    let mut state = FlState::new(config.clone())?;
    let counts: Vec<usize> = clients.iter().map(|c| c.rows()).collect();
    let ids: Vec<usize> = (1..=clients.len()).collect();
    let start = Instant::now();
    while !state.is_done() {
        let st = &state;
        let updates = map_jobs(&ids, jobs, |&k| st.local_update(k, clients[k - 1]))
            .into_iter()
            .collect::<sls_core::Result<Vec<_>>>()?;
        state.apply_round(updates, &counts, val)?;
        if wall_clock {
            if let Some(r) = state.trace.rounds.last_mut() {
                r.wall_clock_s = Some(start.elapsed().as_secs_f64());
            }
        }
    }
    Ok((state.trace, state.global))
}
