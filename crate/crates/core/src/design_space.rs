//! Fine-grained hierarchical design space.
//!
//! An architecture candidate (a [`Genotype`]) is an ordered sequence of
//! operations over `num_positions` supernet positions plus two shared
//! [`FunctionSet`]s: positions in the upper half resolve their functions from
//! one set, positions in the lower half from the other. The operation level
//! and the function level can be searched separately.

use num_bigint::BigUint;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The four fundamental operations a supernet position can host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationKind {
    Connect,
    Aggregate,
    Combine,
    Sample,
}

impl OperationKind {
    pub const ALL: [OperationKind; 4] = [
        OperationKind::Connect,
        OperationKind::Aggregate,
        OperationKind::Combine,
        OperationKind::Sample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperationKind::Connect => "connect",
            OperationKind::Aggregate => "aggregate",
            OperationKind::Combine => "combine",
            OperationKind::Sample => "sample",
        }
    }
}

/// Connect operation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectFn {
    SkipConnect,
    Identity,
}

impl ConnectFn {
    pub const ALL: [ConnectFn; 2] = [ConnectFn::SkipConnect, ConnectFn::Identity];
}

/// Aggregation operators for the aggregate operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Sum,
    Min,
    Max,
    Mean,
}

impl Aggregator {
    pub const ALL: [Aggregator; 4] = [
        Aggregator::Sum,
        Aggregator::Min,
        Aggregator::Max,
        Aggregator::Mean,
    ];

    /// Index in the fixed table order.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|a| *a == self).expect("listed")
    }
}

/// Per-edge message construction rules for the aggregate operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    SourcePos,
    TargetPos,
    RelativePos,
    SourceConcatRelative,
    TargetConcatRelative,
    EuclideanDistance,
    Full,
}

impl MessageType {
    pub const ALL: [MessageType; 7] = [
        MessageType::SourcePos,
        MessageType::TargetPos,
        MessageType::RelativePos,
        MessageType::SourceConcatRelative,
        MessageType::TargetConcatRelative,
        MessageType::EuclideanDistance,
        MessageType::Full,
    ];

    /// Index in the fixed table order.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|m| *m == self).expect("listed")
    }

    /// Length of a constructed message given the incoming feature length.
    pub fn message_len(self, feature_len: usize) -> usize {
        match self {
            MessageType::SourcePos | MessageType::TargetPos | MessageType::RelativePos => {
                feature_len
            }
            MessageType::SourceConcatRelative | MessageType::TargetConcatRelative => {
                2 * feature_len
            }
            MessageType::EuclideanDistance => 1,
            MessageType::Full => 3 * feature_len,
        }
    }

    /// Whether the rule carries relative-position information.
    pub fn uses_relative_position(self) -> bool {
        matches!(
            self,
            MessageType::RelativePos
                | MessageType::SourceConcatRelative
                | MessageType::TargetConcatRelative
        )
    }
}

/// Graph construction functions for the sample operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFn {
    Knn,
    Random,
}

impl SampleFn {
    pub const ALL: [SampleFn; 2] = [SampleFn::Knn, SampleFn::Random];
}

/// Combine output widths available by default.
pub const COMBINE_DIMS: [u32; 6] = [8, 16, 32, 64, 128, 256];

/// One chosen function per operation kind, shared by half of the positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionSet {
    pub connect_fn: ConnectFn,
    pub aggregator: Aggregator,
    pub message_type: MessageType,
    pub combine_dim: u32,
    pub sample_fn: SampleFn,
}

/// The function resolved for a single position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionChoice {
    Connect(ConnectFn),
    Aggregate {
        aggregator: Aggregator,
        message_type: MessageType,
    },
    Combine {
        output_dim: u32,
    },
    Sample(SampleFn),
}

impl FunctionChoice {
    /// Operation kind this choice parameterizes.
    pub fn kind(&self) -> OperationKind {
        match self {
            FunctionChoice::Connect(_) => OperationKind::Connect,
            FunctionChoice::Aggregate { .. } => OperationKind::Aggregate,
            FunctionChoice::Combine { .. } => OperationKind::Combine,
            FunctionChoice::Sample(_) => OperationKind::Sample,
        }
    }
}

/// Configuration of the design space: position count and function tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub num_positions: usize,
    pub connect_fns: Vec<ConnectFn>,
    pub aggregators: Vec<Aggregator>,
    pub message_types: Vec<MessageType>,
    pub combine_dims: Vec<u32>,
    pub sample_fns: Vec<SampleFn>,
    pub input_feature_dim: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            num_positions: 12,
            connect_fns: ConnectFn::ALL.to_vec(),
            aggregators: Aggregator::ALL.to_vec(),
            message_types: MessageType::ALL.to_vec(),
            combine_dims: COMBINE_DIMS.to_vec(),
            sample_fns: SampleFn::ALL.to_vec(),
            input_feature_dim: 3,
        }
    }
}

/// An architecture candidate: one operation per position plus the two shared
/// function sets. Positions `0..N/2` resolve functions from `upper`, the rest
/// from `lower`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub positions: Vec<OperationKind>,
    #[serde(rename = "upper")]
    pub upper_fns: FunctionSet,
    #[serde(rename = "lower")]
    pub lower_fns: FunctionSet,
}

impl Genotype {
    pub fn num_positions(&self) -> usize {
        self.positions.len()
    }

    /// Shared function set governing position `index`.
    pub fn function_set_at(&self, index: usize) -> &FunctionSet {
        if index < self.positions.len() / 2 {
            &self.upper_fns
        } else {
            &self.lower_fns
        }
    }

    /// Resolved function for position `index`.
    pub fn function_choice_at(&self, index: usize) -> FunctionChoice {
        let set = self.function_set_at(index);
        match self.positions[index] {
            OperationKind::Connect => FunctionChoice::Connect(set.connect_fn),
            OperationKind::Aggregate => FunctionChoice::Aggregate {
                aggregator: set.aggregator,
                message_type: set.message_type,
            },
            OperationKind::Combine => FunctionChoice::Combine {
                output_dim: set.combine_dim,
            },
            OperationKind::Sample => FunctionChoice::Sample(set.sample_fn),
        }
    }

    /// Collapse runs of consecutive sample positions so that only the last of
    /// each run stays effective; the earlier ones become connect positions.
    /// Idempotent.
    ///
    /// Note the rewritten positions resolve their function through the shared
    /// set like any other connect; with the default tables that is `identity`.
    pub fn canonicalize(&self) -> Genotype {
        let mut positions = self.positions.clone();
        let mut i = 0;
        while i < positions.len() {
            if positions[i] == OperationKind::Sample {
                let mut end = i;
                while end + 1 < positions.len() && positions[end + 1] == OperationKind::Sample {
                    end += 1;
                }
                for pos in positions.iter_mut().take(end).skip(i) {
                    *pos = OperationKind::Connect;
                }
                i = end + 1;
            } else {
                i += 1;
            }
        }
        Genotype {
            positions,
            upper_fns: self.upper_fns,
            lower_fns: self.lower_fns,
        }
    }

    /// Whether execution needs an implicit initial KNN graph: true when an
    /// aggregate appears before any sample position.
    pub fn has_implicit_initial_sample(&self) -> bool {
        for kind in &self.positions {
            match kind {
                OperationKind::Aggregate => return true,
                OperationKind::Sample => return false,
                _ => {}
            }
        }
        false
    }

    /// Count of positions holding `kind`.
    pub fn count_of(&self, kind: OperationKind) -> usize {
        self.positions.iter().filter(|k| **k == kind).count()
    }

    /// Single-line JSON form, also used as the deterministic tie-break key.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("genotype serializes")
    }

    pub fn from_json(text: &str) -> Result<Genotype> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Report of admissibility violations; empty means the genotype is admissible.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            write!(f, "admissible")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

/// Cardinality levels of the hierarchical space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CardinalityLevel {
    Operations,
    Functions,
    Joint,
}

/// A validated design space handle.
#[derive(Debug, Clone)]
pub struct DesignSpace {
    cfg: SpaceConfig,
}

impl DesignSpace {
    /// Validate the configuration and return a space handle.
    pub fn new(cfg: SpaceConfig) -> Result<DesignSpace> {
        if cfg.num_positions < 2 {
            return Err(Error::Config("num_positions must be at least 2".into()));
        }
        if cfg.num_positions % 2 != 0 {
            return Err(Error::Config("num_positions must be even".into()));
        }
        if cfg.input_feature_dim == 0 {
            return Err(Error::Config("input_feature_dim must be positive".into()));
        }
        if cfg.connect_fns.is_empty() {
            return Err(Error::Config("function table connect_fns is empty".into()));
        }
        if cfg.aggregators.is_empty() {
            return Err(Error::Config("function table aggregators is empty".into()));
        }
        if cfg.message_types.is_empty() {
            return Err(Error::Config("function table message_types is empty".into()));
        }
        if cfg.combine_dims.is_empty() {
            return Err(Error::Config("function table combine_dims is empty".into()));
        }
        if cfg.sample_fns.is_empty() {
            return Err(Error::Config("function table sample_fns is empty".into()));
        }
        if let Some(dim) = cfg.combine_dims.iter().find(|d| !COMBINE_DIMS.contains(d)) {
            return Err(Error::Config(format!(
                "combine_dims entry {dim} is not one of {COMBINE_DIMS:?}"
            )));
        }
        Ok(DesignSpace { cfg })
    }

    pub fn config(&self) -> &SpaceConfig {
        &self.cfg
    }

    pub fn num_positions(&self) -> usize {
        self.cfg.num_positions
    }

    /// Uniformly random genotype, deterministic for a given seed.
    pub fn sample_genotype(&self, seed: u64) -> Genotype {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_genotype_with(&mut rng)
    }

    pub fn sample_genotype_with(&self, rng: &mut ChaCha8Rng) -> Genotype {
        let positions = self.sample_positions_with(rng);
        let upper_fns = self.sample_function_set_with(rng);
        let lower_fns = self.sample_function_set_with(rng);
        Genotype {
            positions,
            upper_fns,
            lower_fns,
        }
    }

    pub fn sample_positions_with(&self, rng: &mut ChaCha8Rng) -> Vec<OperationKind> {
        (0..self.cfg.num_positions)
            .map(|_| OperationKind::ALL[rng.gen_range(0..OperationKind::ALL.len())])
            .collect()
    }

    pub fn sample_function_set_with(&self, rng: &mut ChaCha8Rng) -> FunctionSet {
        FunctionSet {
            connect_fn: self.cfg.connect_fns[rng.gen_range(0..self.cfg.connect_fns.len())],
            aggregator: self.cfg.aggregators[rng.gen_range(0..self.cfg.aggregators.len())],
            message_type: self.cfg.message_types[rng.gen_range(0..self.cfg.message_types.len())],
            combine_dim: self.cfg.combine_dims[rng.gen_range(0..self.cfg.combine_dims.len())],
            sample_fn: self.cfg.sample_fns[rng.gen_range(0..self.cfg.sample_fns.len())],
        }
    }

    /// List all admissibility violations of `g` against this space.
    pub fn validate(&self, g: &Genotype) -> ValidationReport {
        let mut violations = Vec::new();
        if g.positions.len() != self.cfg.num_positions {
            violations.push(format!(
                "length mismatch: {} positions, space has {}",
                g.positions.len(),
                self.cfg.num_positions
            ));
        }
        for (half, set) in [("upper", &g.upper_fns), ("lower", &g.lower_fns)] {
            if !self.cfg.connect_fns.contains(&set.connect_fn) {
                violations.push(format!("{half} connect_fn not in table"));
            }
            if !self.cfg.aggregators.contains(&set.aggregator) {
                violations.push(format!("{half} aggregator not in table"));
            }
            if !self.cfg.message_types.contains(&set.message_type) {
                violations.push(format!("{half} message_type not in table"));
            }
            if !self.cfg.combine_dims.contains(&set.combine_dim) {
                violations.push(format!("{half} combine_dim not in table"));
            }
            if !self.cfg.sample_fns.contains(&set.sample_fn) {
                violations.push(format!("{half} sample_fn not in table"));
            }
        }
        ValidationReport { violations }
    }

    /// Exact candidate counts at the requested level of the hierarchy.
    ///
    /// Operations level is `4^N`; functions level is the function-table
    /// product squared (one set per half); joint is their product.
    pub fn cardinality(&self, level: CardinalityLevel) -> BigUint {
        let operations = BigUint::from(4u32).pow(self.cfg.num_positions as u32);
        let per_set = BigUint::from(self.cfg.connect_fns.len())
            * BigUint::from(self.cfg.aggregators.len())
            * BigUint::from(self.cfg.message_types.len())
            * BigUint::from(self.cfg.combine_dims.len())
            * BigUint::from(self.cfg.sample_fns.len());
        let functions = per_set.pow(2);
        match level {
            CardinalityLevel::Operations => operations,
            CardinalityLevel::Functions => functions,
            CardinalityLevel::Joint => operations * functions,
        }
    }

    /// Resample each position and each function-set field independently with
    /// probability `rate`. Resampling draws uniformly and may reproduce the
    /// current value.
    pub fn mutate(&self, g: &Genotype, rate: f64, seed: u64) -> Result<Genotype> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidInput(format!(
                "mutation rate {rate} outside [0, 1]"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = self.mutate_positions_with(&g.positions, rate, &mut rng);
        let upper_fns = self.mutate_function_set_with(&g.upper_fns, rate, &mut rng);
        let lower_fns = self.mutate_function_set_with(&g.lower_fns, rate, &mut rng);
        Ok(Genotype {
            positions,
            upper_fns,
            lower_fns,
        })
    }

    pub fn mutate_positions_with(
        &self,
        positions: &[OperationKind],
        rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<OperationKind> {
        positions
            .iter()
            .map(|kind| {
                if rng.gen_bool(rate) {
                    OperationKind::ALL[rng.gen_range(0..OperationKind::ALL.len())]
                } else {
                    *kind
                }
            })
            .collect()
    }

    pub fn mutate_function_set_with(
        &self,
        set: &FunctionSet,
        rate: f64,
        rng: &mut ChaCha8Rng,
    ) -> FunctionSet {
        let mut out = *set;
        if rng.gen_bool(rate) {
            out.connect_fn = self.cfg.connect_fns[rng.gen_range(0..self.cfg.connect_fns.len())];
        }
        if rng.gen_bool(rate) {
            out.aggregator = self.cfg.aggregators[rng.gen_range(0..self.cfg.aggregators.len())];
        }
        if rng.gen_bool(rate) {
            out.message_type =
                self.cfg.message_types[rng.gen_range(0..self.cfg.message_types.len())];
        }
        if rng.gen_bool(rate) {
            out.combine_dim = self.cfg.combine_dims[rng.gen_range(0..self.cfg.combine_dims.len())];
        }
        if rng.gen_bool(rate) {
            out.sample_fn = self.cfg.sample_fns[rng.gen_range(0..self.cfg.sample_fns.len())];
        }
        out
    }

    /// Single-point crossover on positions; each function set is taken wholly
    /// from one parent by a coin flip.
    pub fn crossover(&self, a: &Genotype, b: &Genotype, seed: u64) -> Result<Genotype> {
        if a.positions.len() != b.positions.len() {
            return Err(Error::InvalidInput(format!(
                "crossover parents disagree on length: {} vs {}",
                a.positions.len(),
                b.positions.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(self.crossover_with(a, b, &mut rng))
    }

    pub fn crossover_with(&self, a: &Genotype, b: &Genotype, rng: &mut ChaCha8Rng) -> Genotype {
        let n = a.positions.len();
        let cut = rng.gen_range(1..n);
        let mut positions = a.positions[..cut].to_vec();
        positions.extend_from_slice(&b.positions[cut..]);
        let upper_fns = if rng.gen_bool(0.5) {
            a.upper_fns
        } else {
            b.upper_fns
        };
        let lower_fns = if rng.gen_bool(0.5) {
            a.lower_fns
        } else {
            b.lower_fns
        };
        Genotype {
            positions,
            upper_fns,
            lower_fns,
        }
    }
}

/// The DGCNN backbone expressed in this space: four repetitions of
/// sample/aggregate/combine with summed target-and-relative messages.
pub fn dgcnn_preset() -> Genotype {
    let fns = FunctionSet {
        connect_fn: ConnectFn::Identity,
        aggregator: Aggregator::Sum,
        message_type: MessageType::TargetConcatRelative,
        combine_dim: 64,
        sample_fn: SampleFn::Knn,
    };
    let mut positions = Vec::with_capacity(12);
    for _ in 0..4 {
        positions.extend([
            OperationKind::Sample,
            OperationKind::Aggregate,
            OperationKind::Combine,
        ]);
    }
    Genotype {
        positions,
        upper_fns: fns,
        lower_fns: fns,
    }
}
