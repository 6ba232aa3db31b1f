//! Peak-memory analysis of a genotype's forward execution.
//!
//! Two routes compute the same quantity: [`estimate_peak_memory`] accumulates
//! the closed-form per-operation byte costs, while [`simulate_memory_trace`]
//! replays the execution against an explicit allocation ledger. Their peaks
//! must agree exactly; the trace additionally exposes the step-by-step
//! totals. Message buffers are recycled once broadcasting completes, so the
//! running total only keeps the broadcast output, but the transient total
//! right after message construction is a peak candidate.

use serde::Serialize;

use crate::arch_graph::GraphStats;
use crate::design_space::{ConnectFn, FunctionChoice, Genotype, SampleFn};

/// One per-operation entry of the allocation trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    /// Position index, or `None` for the implicit initial sample.
    pub position: Option<usize>,
    pub label: String,
    /// Net byte effect of the operation on the running total.
    pub bytes_delta: i64,
    /// Live bytes after the operation.
    pub running_total: u64,
    /// Largest live total observed while the operation executed.
    pub transient_peak: u64,
}

/// Step-by-step allocation ledger with running and peak byte counts.
#[derive(Debug, Clone, Serialize)]
pub struct MemoryTrace {
    /// Model plus input bytes resident before the first operation.
    pub base_bytes: u64,
    pub steps: Vec<TraceStep>,
    pub peak_bytes: u64,
    /// Transient totals right after each aggregate's message construction.
    pub message_construction_peaks: Vec<u64>,
}

impl MemoryTrace {
    pub fn peak_mib(&self) -> f64 {
        self.peak_bytes as f64 / (1024.0 * 1024.0)
    }

    /// Live bytes after the last operation.
    pub fn final_total(&self) -> u64 {
        self.steps
            .last()
            .map(|s| s.running_total)
            .unwrap_or(self.base_bytes)
    }
}

/// When the learned prediction undercuts the closed-form estimate the
/// prediction is biased; the estimate acts as a floor.
pub fn robust_peak_memory(predicted: u64, estimated: u64) -> u64 {
    predicted.max(estimated)
}

fn to_u64(bytes: u128) -> u64 {
    u64::try_from(bytes).expect("byte total exceeds u64")
}

/// Closed-form peak-memory estimate in bytes for a canonical genotype.
///
/// Walks the positions in order tracking the current feature length: sample
/// allocates the edge index, aggregate allocates messages (transient) and the
/// broadcast output, combine allocates its output, skip-connect allocates one
/// feature-sized tensor. The peak is the maximum of the final total and every
/// post-message-construction total.
pub fn estimate_peak_memory(g: &Genotype, stats: &GraphStats) -> u64 {
    let uk = stats.weight_precision as u128;
    let uidx = stats.index_precision as u128;
    let batch = stats.batch_size as u128;
    let n = stats.num_points as u128;
    let edges = stats.num_edges() as u128;
    let dim = stats.input_feature_dim as u128;

    // Model parameters: each combine is a linear layer on the feature length
    // reaching it; dimension-alignment transforms are dropped from finalized
    // architectures and contribute nothing.
    let mut feature_len = dim;
    let mut param_count: u128 = 0;
    for idx in 0..g.num_positions() {
        match g.function_choice_at(idx) {
            FunctionChoice::Combine { output_dim } => {
                let out = output_dim as u128;
                param_count += feature_len * out + out;
                feature_len = out;
            }
            FunctionChoice::Aggregate { message_type, .. } => {
                feature_len = message_type.message_len(feature_len as usize) as u128;
            }
            _ => {}
        }
    }

    let mut total = uk * param_count + batch * n * dim * uk;
    let mut construction_peaks: Vec<u128> = Vec::new();
    let mut feature_len = dim;

    if g.has_implicit_initial_sample() {
        total += batch * edges * 2 * uidx;
    }
    for idx in 0..g.num_positions() {
        match g.function_choice_at(idx) {
            FunctionChoice::Sample(_) => {
                total += batch * edges * 2 * uidx;
            }
            FunctionChoice::Aggregate { message_type, .. } => {
                let msg_len = message_type.message_len(feature_len as usize) as u128;
                let message_bytes = batch * edges * msg_len * uk;
                construction_peaks.push(total + message_bytes);
                total += batch * n * msg_len * uk;
                feature_len = msg_len;
            }
            FunctionChoice::Combine { output_dim } => {
                total += batch * n * output_dim as u128 * uk;
                feature_len = output_dim as u128;
            }
            FunctionChoice::Connect(ConnectFn::SkipConnect) => {
                total += batch * n * feature_len * uk;
            }
            FunctionChoice::Connect(ConnectFn::Identity) => {}
        }
    }

    let peak = construction_peaks
        .into_iter()
        .fold(total, |acc, mc| acc.max(mc));
    to_u64(peak)
}

/// Explicit allocation ledger: a list of live buffers whose sizes are summed
/// after every allocate/free event.
#[derive(Default)]
struct Ledger {
    live: Vec<u128>,
    event_peak: u128,
}

impl Ledger {
    fn current(&self) -> u128 {
        self.live.iter().sum()
    }

    fn alloc(&mut self, bytes: u128) -> usize {
        self.live.push(bytes);
        self.event_peak = self.event_peak.max(self.current());
        self.live.len() - 1
    }

    fn free(&mut self, id: usize) {
        self.live[id] = 0;
    }
}

/// Replay a canonical genotype's execution against an explicit allocator and
/// return the full trace. The trace peak equals [`estimate_peak_memory`].
pub fn simulate_memory_trace(g: &Genotype, stats: &GraphStats) -> MemoryTrace {
    let uk = stats.weight_precision as u128;
    let uidx = stats.index_precision as u128;
    let batch = stats.batch_size as u128;
    let n = stats.num_points as u128;
    let edges = stats.num_edges() as u128;
    let dim = stats.input_feature_dim as u128;

    let mut ledger = Ledger::default();

    // Load the model: one weight plus one bias buffer per combine layer.
    let mut feature_len = dim;
    for idx in 0..g.num_positions() {
        match g.function_choice_at(idx) {
            FunctionChoice::Combine { output_dim } => {
                let out = output_dim as u128;
                ledger.alloc(feature_len * out * uk);
                ledger.alloc(out * uk);
                feature_len = out;
            }
            FunctionChoice::Aggregate { message_type, .. } => {
                feature_len = message_type.message_len(feature_len as usize) as u128;
            }
            _ => {}
        }
    }
    // Load the input batch.
    ledger.alloc(batch * n * dim * uk);
    let base = ledger.current();

    let mut steps = Vec::new();
    let mut construction_peaks = Vec::new();
    let mut feature_len = dim;

    let record = |ledger: &mut Ledger,
                      steps: &mut Vec<TraceStep>,
                      position: Option<usize>,
                      label: String,
                      before: u128,
                      transient: u128| {
        let after = ledger.current();
        steps.push(TraceStep {
            position,
            label,
            bytes_delta: i64::try_from(after as i128 - before as i128)
                .expect("step delta fits i64"),
            running_total: to_u64(after),
            transient_peak: to_u64(transient.max(after)),
        });
    };

    if g.has_implicit_initial_sample() {
        let before = ledger.current();
        ledger.alloc(batch * edges * 2 * uidx);
        let transient = ledger.current();
        record(
            &mut ledger,
            &mut steps,
            None,
            "sample(implicit_knn)".into(),
            before,
            transient,
        );
    }

    for idx in 0..g.num_positions() {
        let before = ledger.current();
        match g.function_choice_at(idx) {
            FunctionChoice::Sample(sample) => {
                ledger.alloc(batch * edges * 2 * uidx);
                let transient = ledger.current();
                let name = match sample {
                    SampleFn::Knn => "knn",
                    SampleFn::Random => "random",
                };
                record(
                    &mut ledger,
                    &mut steps,
                    Some(idx),
                    format!("sample({name})"),
                    before,
                    transient,
                );
            }
            FunctionChoice::Aggregate {
                aggregator,
                message_type,
            } => {
                let msg_len = message_type.message_len(feature_len as usize) as u128;
                // Message construction materializes one message per edge.
                let messages = ledger.alloc(batch * edges * msg_len * uk);
                let mc = ledger.current();
                construction_peaks.push(to_u64(mc));
                // Broadcasting reduces messages into per-node features and
                // recycles the message buffer.
                ledger.free(messages);
                ledger.alloc(batch * n * msg_len * uk);
                feature_len = msg_len;
                let agg = serde_json::to_value(aggregator)
                    .expect("aggregator serializes")
                    .as_str()
                    .expect("string form")
                    .to_string();
                let msg = serde_json::to_value(message_type)
                    .expect("message type serializes")
                    .as_str()
                    .expect("string form")
                    .to_string();
                record(
                    &mut ledger,
                    &mut steps,
                    Some(idx),
                    format!("aggregate({agg},{msg})"),
                    before,
                    mc,
                );
            }
            FunctionChoice::Combine { output_dim } => {
                ledger.alloc(batch * n * output_dim as u128 * uk);
                feature_len = output_dim as u128;
                let transient = ledger.current();
                record(
                    &mut ledger,
                    &mut steps,
                    Some(idx),
                    format!("combine({output_dim})"),
                    before,
                    transient,
                );
            }
            FunctionChoice::Connect(connect) => {
                let name = match connect {
                    ConnectFn::SkipConnect => {
                        ledger.alloc(batch * n * feature_len * uk);
                        "skip_connect"
                    }
                    ConnectFn::Identity => "identity",
                };
                let transient = ledger.current();
                record(
                    &mut ledger,
                    &mut steps,
                    Some(idx),
                    format!("connect({name})"),
                    before,
                    transient,
                );
            }
        }
    }

    MemoryTrace {
        base_bytes: to_u64(base),
        steps,
        peak_bytes: to_u64(ledger.event_peak),
        message_construction_peaks: construction_peaks,
    }
}
