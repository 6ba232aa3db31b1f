//! Two-stage constrained architecture search.
//!
//! Stage 1 evolves a pair of shared function sets scored by mean accuracy over
//! a fixed panel of random operation layouts; stage 2 evolves the operation
//! sequence under the scalarized hardware-aware objective: candidates that
//! violate a latency or peak-memory constraint score zero, feasible ones score
//! `alpha * accuracy - beta * normalized_efficiency`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch_graph::{build_arch_graph, GraphStats};
use crate::design_space::{dgcnn_preset, DesignSpace, FunctionSet, Genotype, OperationKind};
use crate::device_cost::{self, DeviceProfile};
use crate::mem_model::estimate_peak_memory;
use crate::predictor::predict;
use crate::scalar::Scalar;
use crate::seeds::derive_seed;
use crate::{Error, RealModelWeights, Result};

/// Hard latency/peak-memory bounds; `None` means unconstrained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub c_lat_ms: Option<f64>,
    pub c_mem_bytes: Option<f64>,
}

impl Constraints {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("c_lat_ms", self.c_lat_ms), ("c_mem_bytes", self.c_mem_bytes)] {
            if let Some(v) = value {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Strict feasibility: a candidate meeting a bound exactly violates it.
    pub fn admits(&self, metrics: &EfficiencyMetrics) -> bool {
        if let Some(c_lat) = self.c_lat_ms {
            if metrics.latency_ms >= c_lat {
                return false;
            }
        }
        if let Some(c_mem) = self.c_mem_bytes {
            if metrics.peak_mem_bytes >= c_mem {
                return false;
            }
        }
        true
    }
}

/// Hardware efficiency of one candidate on one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyMetrics {
    pub latency_ms: f64,
    pub peak_mem_bytes: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_mj: Option<f64>,
}

/// Which evaluator scores hardware efficiency during the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HwEvalKind {
    CostModel,
    Predictor,
}

/// Search hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub alpha: f64,
    pub beta: f64,
    pub constraints: Constraints,
    pub population: usize,
    pub max_iterations: usize,
    /// Stage budgets; both default to `max_iterations`.
    pub stage1_iterations: Option<usize>,
    pub stage2_iterations: Option<usize>,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub elite_count: usize,
    pub seed: u64,
    pub device: String,
    pub stats: GraphStats,
    pub hw_eval: HwEvalKind,
    pub accuracy_eval: String,
    /// Size of the fixed operation-layout panel scoring stage-1 candidates.
    pub stage1_samples: usize,
    /// Reference scales making the efficiency term unitless. Default to the
    /// finite constraints, else to the DGCNN preset on the target device.
    pub lat_ref: Option<f64>,
    pub mem_ref: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            alpha: 1.0,
            beta: 0.1,
            constraints: Constraints::default(),
            population: 20,
            max_iterations: 1000,
            stage1_iterations: None,
            stage2_iterations: None,
            mutation_rate: 0.1,
            crossover_rate: 0.9,
            elite_count: 2,
            seed: 0,
            device: "gpu_like".into(),
            stats: GraphStats::default(),
            hw_eval: HwEvalKind::CostModel,
            accuracy_eval: "default".into(),
            stage1_samples: 8,
            lat_ref: None,
            mem_ref: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if self.population < 2 {
            return Err(Error::Config("population must be at least 2".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.elite_count >= self.population {
            return Err(Error::Config("elite_count must be below population".into()));
        }
        for (name, rate) in [
            ("mutation_rate", self.mutation_rate),
            ("crossover_rate", self.crossover_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {rate}")));
            }
        }
        if self.stage1_samples == 0 {
            return Err(Error::Config("stage1_samples must be at least 1".into()));
        }
        self.constraints.validate()?;
        self.stats.validate()
    }

    fn stage1_budget(&self) -> usize {
        self.stage1_iterations.unwrap_or(self.max_iterations)
    }

    fn stage2_budget(&self) -> usize {
        self.stage2_iterations.unwrap_or(self.max_iterations)
    }
}

/// Hardware evaluator backing the objective.
pub enum HwEvaluator<'a> {
    /// Deterministic cost model plus the closed-form memory estimate.
    CostModel { profile: &'a DeviceProfile },
    /// Learned predictors; the peak-memory prediction is floored by the
    /// closed-form estimate.
    Predictor {
        latency_model: &'a RealModelWeights,
        memory_model: Option<&'a RealModelWeights>,
        device_index: usize,
        profile: Option<&'a DeviceProfile>,
    },
}

impl HwEvaluator<'_> {
    pub fn evaluate(&self, canonical: &Genotype, stats: &GraphStats) -> Result<EfficiencyMetrics> {
        match self {
            HwEvaluator::CostModel { profile } => {
                let latency_ms: f64 = device_cost::latency(profile, canonical, stats);
                let peak = estimate_peak_memory(canonical, stats) as f64;
                Ok(EfficiencyMetrics {
                    latency_ms,
                    peak_mem_bytes: peak,
                    energy_mj: Some(device_cost::energy(profile, latency_ms)),
                })
            }
            HwEvaluator::Predictor {
                latency_model,
                memory_model,
                device_index,
                profile,
            } => {
                let ag = build_arch_graph(canonical, stats)?;
                let latency_ms = predict(latency_model, &ag, *device_index)?;
                let estimated = estimate_peak_memory(canonical, stats) as f64;
                let peak = match memory_model {
                    Some(model) => predict(model, &ag, *device_index)?.max(estimated),
                    None => estimated,
                };
                Ok(EfficiencyMetrics {
                    latency_ms,
                    peak_mem_bytes: peak,
                    energy_mj: profile.map(|p| device_cost::energy(p, latency_ms)),
                })
            }
        }
    }
}

fn resolve_refs(
    cfg: &SearchConfig,
    hw_eval: &HwEvaluator<'_>,
) -> Result<(f64, f64)> {
    if cfg.beta == 0.0 {
        return Ok((1.0, 1.0));
    }
    let preset_metrics = || -> Result<EfficiencyMetrics> {
        hw_eval.evaluate(&dgcnn_preset().canonicalize(), &cfg.stats)
    };
    let lat_ref = match cfg.lat_ref.or(cfg.constraints.c_lat_ms) {
        Some(v) => v,
        None => preset_metrics()?.latency_ms,
    };
    let mem_ref = match cfg.mem_ref.or(cfg.constraints.c_mem_bytes) {
        Some(v) => v,
        None => preset_metrics()?.peak_mem_bytes,
    };
    if !(lat_ref > 0.0) || !(mem_ref > 0.0) {
        return Err(Error::Config(format!(
            "efficiency reference scales must be positive, got {lat_ref} / {mem_ref}"
        )));
    }
    Ok((lat_ref, mem_ref))
}

/// Scalarized hardware-aware objective.
///
/// Candidates violating a constraint score exactly zero; feasible ones score
/// `alpha * acc - beta * (latency / lat_ref + peak_mem / mem_ref)`. When beta
/// is positive the reference scales come from `lat_ref`/`mem_ref` or, absent
/// those, the finite constraints.
pub fn objective(acc: f64, eff: &EfficiencyMetrics, cfg: &SearchConfig) -> Result<f64> {
    if cfg.alpha < 0.0 || cfg.beta < 0.0 {
        return Err(Error::Config("alpha and beta must be non-negative".into()));
    }
    if !cfg.constraints.admits(eff) {
        return Ok(0.0);
    }
    if cfg.beta == 0.0 {
        return Ok(cfg.alpha * acc);
    }
    let lat_ref = cfg.lat_ref.or(cfg.constraints.c_lat_ms).ok_or_else(|| {
        Error::Config("beta > 0 needs lat_ref or a finite latency constraint".into())
    })?;
    let mem_ref = cfg.mem_ref.or(cfg.constraints.c_mem_bytes).ok_or_else(|| {
        Error::Config("beta > 0 needs mem_ref or a finite memory constraint".into())
    })?;
    let efficiency = eff.latency_ms / lat_ref + eff.peak_mem_bytes / mem_ref;
    Ok(cfg.alpha * acc - cfg.beta * efficiency)
}

/// Deterministic stand-in for validation accuracy.
///
/// Counts effective aggregate/combine/sample positions after
/// canonicalization: aggregates help up to three, combines up to four, one
/// sample helps and surplus samples beyond two hurt; relative-position
/// messages in either half add a small bonus. Clamped to [0, 0.95].
pub fn default_accuracy_landscape(g: &Genotype) -> f64 {
    let canonical = g.canonicalize();
    let aggregates = canonical.count_of(OperationKind::Aggregate) as f64;
    let combines = canonical.count_of(OperationKind::Combine) as f64;
    let samples = canonical.count_of(OperationKind::Sample) as f64;
    let relative = canonical.upper_fns.message_type.uses_relative_position()
        || canonical.lower_fns.message_type.uses_relative_position();
    let acc = 0.55
        + 0.06 * aggregates.min(3.0)
        + 0.04 * combines.min(4.0)
        + 0.05 * samples.min(1.0)
        - 0.02 * (samples - 2.0).max(0.0)
        + if relative { 0.02 } else { 0.0 };
    acc.clamp(0.0, 0.95)
}

/// Boxed accuracy evaluator over canonical genotypes.
pub type AccuracyEval = Box<dyn Fn(&Genotype) -> f64 + Send + Sync>;

/// Resolve an accuracy-evaluator identifier.
///
/// `default` is the synthetic landscape; `constant:<v>` scores every
/// candidate the same, which is occasionally useful for debugging.
pub fn resolve_accuracy_eval(id: &str) -> Result<AccuracyEval> {
    if id == "default" {
        return Ok(Box::new(default_accuracy_landscape));
    }
    if let Some(value) = id.strip_prefix("constant:") {
        let v: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("bad constant accuracy value {value}")))?;
        return Ok(Box::new(move |_| v));
    }
    Err(Error::Config(format!("unknown accuracy evaluator {id}")))
}

/// Total order used everywhere a best candidate is tracked: higher score
/// wins, ties go to the lexicographically smaller serialized form.
fn better(score_a: f64, key_a: &str, score_b: f64, key_b: &str) -> bool {
    score_a > score_b || (score_a == score_b && key_a < key_b)
}

/// Evolutionary operators over one individual representation.
pub trait EaDomain {
    type Individual: Clone;
    fn mutate(&self, ind: &Self::Individual, rate: f64, rng: &mut ChaCha8Rng) -> Self::Individual;
    fn crossover(
        &self,
        a: &Self::Individual,
        b: &Self::Individual,
        rng: &mut ChaCha8Rng,
    ) -> Self::Individual;
    fn tie_key(&self, ind: &Self::Individual) -> String;
}

/// Operation-sequence search with the function sets held fixed.
pub struct OperationDomain<'a> {
    pub space: &'a DesignSpace,
}

impl EaDomain for OperationDomain<'_> {
    type Individual = Vec<OperationKind>;

    fn mutate(&self, ind: &Vec<OperationKind>, rate: f64, rng: &mut ChaCha8Rng) -> Vec<OperationKind> {
        self.space.mutate_positions_with(ind, rate, rng)
    }

    fn crossover(
        &self,
        a: &Vec<OperationKind>,
        b: &Vec<OperationKind>,
        rng: &mut ChaCha8Rng,
    ) -> Vec<OperationKind> {
        let cut = rng.gen_range(1..a.len());
        let mut child = a[..cut].to_vec();
        child.extend_from_slice(&b[cut..]);
        child
    }

    fn tie_key(&self, ind: &Vec<OperationKind>) -> String {
        serde_json::to_string(ind).expect("positions serialize")
    }
}

/// Function-pair search over (upper, lower) shared sets.
pub struct FunctionPairDomain<'a> {
    pub space: &'a DesignSpace,
}

impl EaDomain for FunctionPairDomain<'_> {
    type Individual = (FunctionSet, FunctionSet);

    fn mutate(
        &self,
        ind: &(FunctionSet, FunctionSet),
        rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> (FunctionSet, FunctionSet) {
        (
            self.space.mutate_function_set_with(&ind.0, rate, rng),
            self.space.mutate_function_set_with(&ind.1, rate, rng),
        )
    }

    fn crossover(
        &self,
        a: &(FunctionSet, FunctionSet),
        b: &(FunctionSet, FunctionSet),
        rng: &mut ChaCha8Rng,
    ) -> (FunctionSet, FunctionSet) {
        let upper = if rng.gen_bool(0.5) { a.0 } else { b.0 };
        let lower = if rng.gen_bool(0.5) { a.1 } else { b.1 };
        (upper, lower)
    }

    fn tie_key(&self, ind: &(FunctionSet, FunctionSet)) -> String {
        serde_json::to_string(ind).expect("function pair serializes")
    }
}

/// EA generation parameters.
#[derive(Debug, Clone)]
pub struct EaParams {
    pub population: usize,
    pub elite_count: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
}

impl From<&SearchConfig> for EaParams {
    fn from(cfg: &SearchConfig) -> Self {
        EaParams {
            population: cfg.population,
            elite_count: cfg.elite_count,
            mutation_rate: cfg.mutation_rate,
            crossover_rate: cfg.crossover_rate,
        }
    }
}

/// One elitist generation: keep the best unchanged, refill via binary
/// tournaments, crossover and mutation. Deterministic for a given rng state.
pub fn ea_step<D: EaDomain>(
    domain: &D,
    scored: &[(D::Individual, f64)],
    params: &EaParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<D::Individual>> {
    if scored.is_empty() {
        return Err(Error::InvalidInput("empty population".into()));
    }
    if scored.iter().any(|(_, s)| s.is_nan()) {
        return Err(Error::InvalidInput("population contains unscored individuals".into()));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    let keys: Vec<String> = scored.iter().map(|(i, _)| domain.tie_key(i)).collect();
    order.sort_by(|a, b| {
        if better(scored[*a].1, &keys[*a], scored[*b].1, &keys[*b]) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });

    let mut next = Vec::with_capacity(params.population);
    for idx in order.iter().take(params.elite_count.min(params.population)) {
        next.push(scored[*idx].0.clone());
    }
    let tournament = |rng: &mut ChaCha8Rng| -> usize {
        let a = rng.gen_range(0..scored.len());
        let b = rng.gen_range(0..scored.len());
        if better(scored[a].1, &keys[a], scored[b].1, &keys[b]) {
            a
        } else {
            b
        }
    };
    while next.len() < params.population {
        let p1 = tournament(rng);
        let p2 = tournament(rng);
        let child = if rng.gen_bool(params.crossover_rate) {
            domain.crossover(&scored[p1].0, &scored[p2].0, rng)
        } else {
            scored[p1].0.clone()
        };
        next.push(domain.mutate(&child, params.mutation_rate, rng));
    }
    Ok(next)
}

/// Per-generation summary.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationStats {
    pub iteration: usize,
    pub best_score: f64,
    pub mean_score: f64,
}

/// Stage-1 outcome.
#[derive(Debug, Clone, Serialize)]
pub struct FunctionSearchResult {
    pub upper: FunctionSet,
    pub lower: FunctionSet,
    pub score: f64,
    pub evaluated_count: u64,
    pub history: Vec<GenerationStats>,
}

/// Stage 1: evolve the (upper, lower) function pair for accuracy alone.
///
/// Every candidate pair is scored by the mean accuracy over the same fixed
/// panel of random operation layouts, so pairs compete on equal footing.
pub fn search_functions(
    space: &DesignSpace,
    acc_eval: &(dyn Fn(&Genotype) -> f64 + Sync),
    cfg: &SearchConfig,
) -> Result<FunctionSearchResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "stage1", 0));
    let panel: Vec<Vec<OperationKind>> = (0..cfg.stage1_samples)
        .map(|_| space.sample_positions_with(&mut rng))
        .collect();

    let domain = FunctionPairDomain { space };
    let params = EaParams::from(cfg);
    let mut cache: HashMap<String, f64> = HashMap::new();
    let mut evaluated = 0u64;
    let mut score_pair = |pair: &(FunctionSet, FunctionSet), evaluated: &mut u64| -> f64 {
        let key = serde_json::to_string(pair).expect("pair serializes");
        if let Some(score) = cache.get(&key) {
            return *score;
        }
        let mut total = 0.0;
        for positions in &panel {
            let g = Genotype {
                positions: positions.clone(),
                upper_fns: pair.0,
                lower_fns: pair.1,
            }
            .canonicalize();
            total += acc_eval(&g);
            *evaluated += 1;
        }
        let score = total / panel.len() as f64;
        cache.insert(key, score);
        score
    };

    let mut population: Vec<(FunctionSet, FunctionSet)> = (0..cfg.population)
        .map(|_| {
            (
                space.sample_function_set_with(&mut rng),
                space.sample_function_set_with(&mut rng),
            )
        })
        .collect();

    let mut best: Option<((FunctionSet, FunctionSet), f64, String)> = None;
    let mut history = Vec::new();
    for iteration in 0..cfg.stage1_budget() {
        let scored: Vec<((FunctionSet, FunctionSet), f64)> = population
            .iter()
            .map(|pair| (*pair, score_pair(pair, &mut evaluated)))
            .collect();
        for (pair, score) in &scored {
            let key = domain.tie_key(pair);
            let improves = match &best {
                None => true,
                Some((_, best_score, best_key)) => better(*score, &key, *best_score, best_key),
            };
            if improves {
                best = Some((*pair, *score, key));
            }
        }
        let best_score = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        let mean_score = scored.iter().map(|(_, s)| *s).sum::<f64>() / scored.len() as f64;
        history.push(GenerationStats {
            iteration,
            best_score,
            mean_score,
        });
        if iteration + 1 < cfg.stage1_budget() {
            population = ea_step(&domain, &scored, &params, &mut rng)?;
        }
    }

    let (pair, score, _) = best.expect("at least one generation ran");
    Ok(FunctionSearchResult {
        upper: pair.0,
        lower: pair.1,
        score,
        evaluated_count: evaluated,
        history,
    })
}

/// Search outcome. `best` is the best constraint-satisfying genotype found;
/// when nothing feasible was ever scored the result is flagged infeasible.
#[derive(Debug, Clone, Serialize)]
pub struct SearchResult {
    pub best: Option<Genotype>,
    pub feasible: bool,
    pub best_score: f64,
    pub accuracy: Option<f64>,
    pub metrics: Option<EfficiencyMetrics>,
    pub history: Vec<GenerationStats>,
    pub evaluated_count: u64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1: Option<StageOneSummary>,
}

/// Function pair fixed by stage 1, embedded in the final result.
#[derive(Debug, Clone, Serialize)]
pub struct StageOneSummary {
    pub upper: FunctionSet,
    pub lower: FunctionSet,
    pub score: f64,
}

struct ScoredCandidate {
    objective: f64,
    feasible: bool,
    accuracy: f64,
    metrics: EfficiencyMetrics,
}

struct OperationScorer<'a> {
    fns: (FunctionSet, FunctionSet),
    acc_eval: &'a (dyn Fn(&Genotype) -> f64 + Sync),
    hw_eval: &'a HwEvaluator<'a>,
    cfg: SearchConfig,
    cache: HashMap<Vec<OperationKind>, ScoredCandidate>,
    evaluated: u64,
}

impl<'a> OperationScorer<'a> {
    fn genotype(&self, positions: &[OperationKind]) -> Genotype {
        Genotype {
            positions: positions.to_vec(),
            upper_fns: self.fns.0,
            lower_fns: self.fns.1,
        }
    }

    fn score(&mut self, positions: &[OperationKind]) -> Result<&ScoredCandidate> {
        if !self.cache.contains_key(positions) {
            let canonical = self.genotype(positions).canonicalize();
            let metrics = self.hw_eval.evaluate(&canonical, &self.cfg.stats)?;
            self.evaluated += 1;
            let feasible = self.cfg.constraints.admits(&metrics);
            // Infeasible candidates are marked zero without an accuracy query.
            let (accuracy, score) = if feasible {
                let acc = (self.acc_eval)(&canonical);
                (acc, objective(acc, &metrics, &self.cfg)?)
            } else {
                (0.0, 0.0)
            };
            self.cache.insert(
                positions.to_vec(),
                ScoredCandidate {
                    objective: score,
                    feasible,
                    accuracy,
                    metrics,
                },
            );
        }
        Ok(self.cache.get(positions).expect("just inserted"))
    }
}

/// Stage 2: evolve operation sequences under fixed function sets.
pub fn search_operations(
    space: &DesignSpace,
    fns: (FunctionSet, FunctionSet),
    acc_eval: &(dyn Fn(&Genotype) -> f64 + Sync),
    hw_eval: &HwEvaluator<'_>,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    let (lat_ref, mem_ref) = resolve_refs(cfg, hw_eval)?;
    let mut resolved = cfg.clone();
    resolved.lat_ref = Some(lat_ref);
    resolved.mem_ref = Some(mem_ref);

    let mut scorer = OperationScorer {
        fns,
        acc_eval,
        hw_eval,
        cfg: resolved,
        cache: HashMap::new(),
        evaluated: 0,
    };
    let domain = OperationDomain { space };
    let params = EaParams::from(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "stage2", 0));

    let mut population: Vec<Vec<OperationKind>> = (0..cfg.population)
        .map(|_| space.sample_positions_with(&mut rng))
        .collect();

    let mut best: Option<(Vec<OperationKind>, f64, String)> = None;
    let mut history = Vec::new();
    for iteration in 0..cfg.stage2_budget() {
        let mut scored: Vec<(Vec<OperationKind>, f64)> = Vec::with_capacity(population.len());
        for positions in &population {
            let candidate = scorer.score(positions)?;
            let score = candidate.objective;
            if candidate.feasible {
                let key = domain.tie_key(positions);
                let improves = match &best {
                    None => true,
                    Some((_, best_score, best_key)) => better(score, &key, *best_score, best_key),
                };
                if improves {
                    best = Some((positions.clone(), score, key));
                }
            }
            scored.push((positions.clone(), score));
        }
        let best_score = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        let mean_score = scored.iter().map(|(_, s)| *s).sum::<f64>() / scored.len() as f64;
        history.push(GenerationStats {
            iteration,
            best_score,
            mean_score,
        });
        if iteration + 1 < cfg.stage2_budget() {
            population = ea_step(&domain, &scored, &params, &mut rng)?;
        }
    }

    let evaluated_count = scorer.evaluated;
    match best {
        Some((positions, score, _)) => {
            let candidate = scorer.score(&positions)?;
            let accuracy = candidate.accuracy;
            let metrics = candidate.metrics;
            Ok(SearchResult {
                best: Some(scorer.genotype(&positions)),
                feasible: true,
                best_score: score,
                accuracy: Some(accuracy),
                metrics: Some(metrics),
                history,
                evaluated_count,
                seed: cfg.seed,
                stage1: None,
            })
        }
        None => Ok(SearchResult {
            best: None,
            feasible: false,
            best_score: 0.0,
            accuracy: None,
            metrics: None,
            history,
            evaluated_count,
            seed: cfg.seed,
            stage1: None,
        }),
    }
}

/// Exhaustively score every operation sequence under fixed function sets and
/// return the feasible argmax, ties broken by the lexicographically smallest
/// sequence. Guarded to spaces of at most 10^6 sequences.
pub fn brute_force_optimum(
    space: &DesignSpace,
    fns: (FunctionSet, FunctionSet),
    acc_eval: &(dyn Fn(&Genotype) -> f64 + Sync),
    hw_eval: &HwEvaluator<'_>,
    cfg: &SearchConfig,
) -> Result<(Genotype, f64)> {
    let n = space.num_positions();
    let total = 4u64.checked_pow(n as u32).filter(|t| *t <= 1_000_000);
    let total = total.ok_or_else(|| {
        Error::InvalidInput(format!(
            "operation space 4^{n} exceeds the brute-force guard of 10^6"
        ))
    })?;

    let (lat_ref, mem_ref) = resolve_refs(cfg, hw_eval)?;
    let mut resolved = cfg.clone();
    resolved.lat_ref = Some(lat_ref);
    resolved.mem_ref = Some(mem_ref);

    // Enumerate in serialized-lexicographic order so the first strict
    // improvement is automatically the smallest tie.
    let mut kinds = OperationKind::ALL;
    kinds.sort_by_key(|k| k.name());

    let mut best: Option<(Vec<OperationKind>, f64)> = None;
    let mut digits = vec![0usize; n];
    for _ in 0..total {
        let positions: Vec<OperationKind> = digits.iter().map(|d| kinds[*d]).collect();
        let genotype = Genotype {
            positions: positions.clone(),
            upper_fns: fns.0,
            lower_fns: fns.1,
        };
        let canonical = genotype.canonicalize();
        let metrics = hw_eval.evaluate(&canonical, &resolved.stats)?;
        if resolved.constraints.admits(&metrics) {
            let score = objective(acc_eval(&canonical), &metrics, &resolved)?;
            let improves = match &best {
                None => true,
                Some((_, best_score)) => score > *best_score,
            };
            if improves {
                best = Some((positions, score));
            }
        }
        // Odometer increment, most significant digit first.
        for slot in (0..n).rev() {
            digits[slot] += 1;
            if digits[slot] < kinds.len() {
                break;
            }
            digits[slot] = 0;
        }
    }

    let (positions, score) = best.ok_or_else(|| {
        Error::InvalidInput("no feasible candidate in the operation space".into())
    })?;
    Ok((
        Genotype {
            positions,
            upper_fns: fns.0,
            lower_fns: fns.1,
        },
        score,
    ))
}

/// Full two-stage search: function search, then constrained operation search
/// with the winning pair fixed.
pub fn run_search(
    space: &DesignSpace,
    cfg: &SearchConfig,
    acc_eval: &(dyn Fn(&Genotype) -> f64 + Sync),
    hw_eval: &HwEvaluator<'_>,
) -> Result<SearchResult> {
    cfg.validate()?;
    let stage1 = search_functions(space, acc_eval, cfg)?;
    let mut result = search_operations(
        space,
        (stage1.upper, stage1.lower),
        acc_eval,
        hw_eval,
        cfg,
    )?;
    result.evaluated_count += stage1.evaluated_count;
    result.stage1 = Some(StageOneSummary {
        upper: stage1.upper,
        lower: stage1.lower,
        score: stage1.score,
    });
    Ok(result)
}

/// Pearson product-moment correlation coefficient.
pub fn correlation<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "correlation needs two equal-length series of at least 2, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = T::from_real(xs.len() as f64);
    let mean_x = xs.iter().copied().sum::<T>() / n;
    let mean_y = ys.iter().copied().sum::<T>() / n;
    let mut cov = T::zero();
    let mut var_x = T::zero();
    let mut var_y = T::zero();
    for (x, y) in xs.iter().zip(ys) {
        let dx = *x - mean_x;
        let dy = *y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x.is_zero() || var_y.is_zero() {
        return Err(Error::InvalidInput("undefined correlation: zero variance".into()));
    }
    Ok(cov / (var_x * var_y).sqrt())
}
