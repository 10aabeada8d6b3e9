//! Fault campaigns: plan enumeration, execution under the gcd oracle, and
//! per-site statistics.
//!
//! A campaign works on probe groups. A group fixes the sites of a plan and a
//! fault kind per site; it expands into concrete plans once the replacement
//! values of its Randomize probes are chosen against a fault-free baseline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_bigint::RandBigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::circuit::{
    enumerate_sites, execute, execute_resumed, execute_untraced, nominal_prefix, smallest_draw, BinOp, ExecError,
    ExecResult, FaultAction, FaultKind, FaultPlan, FaultSite, Instr, Prefix, Program,
};
use crate::countermeasures::{build, AlgoId, BuildError};
use crate::keytools::{CrtKey, KeyError};
use crate::modmath::{bellcore_extract, AttackClass, AttackResult, Nat};

pub const DEFAULT_MAX_SKIP_LEN: usize = 2;
pub const DEFAULT_THRESHOLD: u64 = 16384;
pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_R_BITS: u32 = 8;
/// Success recipes kept per probe group.
pub const RECIPES_PER_GROUP: usize = 4;

const FAULT_MODEL: &str = "every fault kind is allowed at every position of a plan";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindTag {
    Zero,
    Randomize,
    Skip,
}

impl KindTag {
    pub const ALL: [KindTag; 3] = [KindTag::Zero, KindTag::Randomize, KindTag::Skip];

    pub fn name(self) -> &'static str {
        match self {
            KindTag::Zero => "zero",
            KindTag::Randomize => "randomize",
            KindTag::Skip => "skip",
        }
    }

    fn is_data(self) -> bool {
        self != KindTag::Skip
    }
}

impl fmt::Display for KindTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KindTag {
    type Err = CampaignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KindTag::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CampaignError::UnknownKind(s.to_string()))
    }
}

/// Parse a comma-separated kind list such as `zero,randomize`.
pub fn parse_kinds(list: &str) -> Result<BTreeSet<KindTag>, CampaignError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("attack order must be at least 1")]
    ZeroOrder,
    #[error("the message set is empty")]
    NoMessages,
    #[error("no fault kinds selected")]
    NoKinds,
    #[error("unknown fault kind {0:?} (expected zero, randomize or skip)")]
    UnknownKind(String),
    #[error("message {0} is not below N")]
    MessageOutOfRange(Nat),
    #[error("fault-free run does not sign message {message}: {result:?}")]
    NoBaseline { message: Nat, result: ExecResult },
    #[error("malformed recipe: {0}")]
    MalformedRecipe(String),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone)]
pub struct CampaignSpec {
    pub algo: AlgoId,
    pub key: CrtKey,
    pub messages: Vec<Nat>,
    pub order: usize,
    pub kinds: BTreeSet<KindTag>,
    pub max_skip_len: usize,
    pub exhaustive_threshold: u64,
    /// Draws per probe group when its Randomize domain is too large.
    pub samples: usize,
    pub seed: u64,
    pub r_bits: u32,
}

impl CampaignSpec {
    /// Order 1, every kind, default knobs and messages.
    pub fn new(algo: AlgoId, key: CrtKey) -> Self {
        Self {
            algo,
            messages: default_messages(&key),
            key,
            order: 1,
            kinds: KindTag::ALL.into_iter().collect(),
            max_skip_len: DEFAULT_MAX_SKIP_LEN,
            exhaustive_threshold: DEFAULT_THRESHOLD,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            r_bits: DEFAULT_R_BITS,
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.order == 0 {
            return Err(CampaignError::ZeroOrder);
        }
        if self.messages.is_empty() {
            return Err(CampaignError::NoMessages);
        }
        if self.kinds.is_empty() {
            return Err(CampaignError::NoKinds);
        }
        self.key.validate()?;
        let n = self.key.modulus();
        if let Some(m) = self.messages.iter().find(|m| **m >= n) {
            return Err(CampaignError::MessageOutOfRange(m.clone()));
        }
        Ok(())
    }

    fn knobs(&self) -> Knobs {
        Knobs {
            threshold: self.exhaustive_threshold,
            samples: self.samples,
            seed: self.seed,
        }
    }
}

/// `{2, 3, N - 2}`, restricted to messages below `N`.
pub fn default_messages(key: &CrtKey) -> Vec<Nat> {
    let n = key.modulus();
    let mut v = vec![Nat::from(2u32), Nat::from(3u32)];
    if n > Nat::from(2u32) {
        v.push(&n - 2u32);
    }
    v.retain(|m| *m < n);
    v.sort();
    v.dedup();
    v
}

/// Replacement values of a Randomize probe: `[0, bound)` minus `nominal`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub bound: Nat,
    pub nominal: Nat,
}

impl Domain {
    pub fn size(&self) -> Nat {
        &self.bound - 1u32
    }

    /// All wrong values in increasing order. Only sensible for small bounds.
    pub fn values(&self) -> impl Iterator<Item = Nat> + '_ {
        let hi = self.bound.to_u64().expect("exhaustive domains fit in u64");
        (0..hi).map(Nat::from).filter(move |v| *v != self.nominal)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Nat {
        let v = rng.gen_biguint_below(&self.size());
        if v >= self.nominal {
            v + 1u32
        } else {
            v
        }
    }
}

/// Fault-free reference run for one message.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub message: Nat,
    pub seed: u64,
    pub inputs: BTreeMap<String, Nat>,
    pub signature: Nat,
    /// Smallest drawn checksum prime; the smaller key prime when nothing is
    /// drawn. Not squared for `r^2` rings: exponent faults there still only
    /// need to agree modulo `r`.
    pub r_eff: Nat,
    p: Nat,
    q: Nat,
    n: Nat,
    values: Vec<Nat>,
    bounds: Vec<Nat>,
    flags: BTreeMap<usize, Nat>,
    prefix: Prefix,
}

impl Baseline {
    pub fn new(program: &Program, key: &CrtKey, message: &Nat, seed: u64) -> Result<Self, CampaignError> {
        let inputs = key.inputs(message)?;
        let out = execute(program, &inputs, seed, &[])?;
        let signature = match &out.result {
            ExecResult::Signature(s) => s.clone(),
            other => {
                return Err(CampaignError::NoBaseline {
                    message: message.clone(),
                    result: other.clone(),
                })
            }
        };
        let mut values = vec![Nat::zero(); program.regs.len()];
        let mut flags = BTreeMap::new();
        for (idx, v) in &out.trace {
            match program.instr(*idx).dst() {
                Some(d) => values[d.0] = v.clone(),
                None => {
                    flags.insert(*idx, v.clone());
                }
            }
        }
        let bounds = register_bounds(program, &values, &key.modulus());
        let prefix = nominal_prefix(program, &inputs, seed)?;
        let r_eff = match smallest_draw(program, &out) {
            Some(r) => Nat::from(r),
            None => key.p.clone().min(key.q.clone()),
        };
        Ok(Self {
            message: message.clone(),
            seed,
            inputs,
            signature,
            r_eff,
            p: key.p.clone(),
            q: key.q.clone(),
            n: key.modulus(),
            values,
            bounds,
            flags,
            prefix,
        })
    }

    /// Run one plan against this baseline's inputs and seed.
    pub fn run(&self, program: &Program, plan: &[FaultAction]) -> Result<ExecResult, ExecError> {
        execute_resumed(program, &self.inputs, self.seed, plan, &self.prefix)
    }

    /// Randomize domain of a data site; `None` for skip windows.
    pub fn domain(&self, program: &Program, site: FaultSite) -> Option<Domain> {
        let reg_domain = |r: usize| Domain {
            bound: self.bounds[r].clone(),
            nominal: self.values[r].clone(),
        };
        match site {
            FaultSite::WriteOf(i) => Some(match program.instr(i).dst() {
                Some(d) => reg_domain(d.0),
                // A guard's flag is a single bit.
                None => Domain {
                    bound: Nat::from(2u32),
                    nominal: self.flags.get(&i).cloned().unwrap_or_default(),
                },
            }),
            FaultSite::ReadOf(i, s) => Some(reg_domain(program.instr(i).operands()[s].0)),
            FaultSite::SkipRange(..) => None,
        }
    }

    /// The gcd oracle applied to one faulted result.
    pub fn judge(&self, result: &ExecResult) -> AttackResult {
        match result {
            ExecResult::Signature(v) => bellcore_extract(&self.n, &self.signature, v, &self.p, &self.q),
            _ => AttackResult::no_output(),
        }
    }
}

fn width(v: &Nat) -> Nat {
    Nat::one() << v.bits().max(1)
}

/// Exclusive upper bound of every register: the modulus of reducing
/// instructions, the draw range of random ones, and for raw arithmetic the
/// bound implied by its operands.
const MESSAGE_INPUT: &str = "M";

fn register_bounds(program: &Program, values: &[Nat], modulus: &Nat) -> Vec<Nat> {
    let two = Nat::from(2u32);
    let mut b = vec![two.clone(); program.regs.len()];
    for slot in &program.slots {
        let Some(dst) = slot.instr.dst() else { continue };
        let bound = match &slot.instr {
            Instr::DrawRandomPrime { bits, .. } | Instr::DrawRandom { bits, .. } => Nat::one() << *bits,
            Instr::Bin { modulus: Some(m), .. }
            | Instr::ModReduce { modulus: m, .. }
            | Instr::ModExp { modulus: m, .. }
            | Instr::ModInv { modulus: m, .. } => values[m.0].clone(),
            Instr::Bin {
                op,
                a,
                b: c,
                modulus: None,
                ..
            } => match op {
                BinOp::Add => &b[a.0] + &b[c.0],
                BinOp::Mul => &b[a.0] * &b[c.0],
                BinOp::Sub => b[a.0].clone(),
            },
            Instr::DivExact { a, .. } => b[a.0].clone(),
            // The message register holds any element of Z_N.
            Instr::LoadInput { input, .. } if input == MESSAGE_INPUT => modulus.clone(),
            Instr::LoadInput { .. } | Instr::Const { .. } => width(&values[dst.0]),
            Instr::CheckEq { .. } | Instr::Return { .. } => unreachable!("no destination"),
        };
        let floor = (&values[dst.0] + 1u32).max(two.clone());
        b[dst.0] = bound.max(floor);
    }
    b
}

/// Fault-free baselines for every message under one seed.
pub fn baselines(program: &Program, key: &CrtKey, messages: &[Nat], seed: u64) -> Result<Vec<Baseline>, CampaignError> {
    messages.iter().map(|m| Baseline::new(program, key, m, seed)).collect()
}

/// One position of a plan: a site and the kind of fault injected there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Probe {
    pub site: FaultSite,
    pub kind: KindTag,
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.site, self.kind)
    }
}

/// Probes on distinct sites that are injected together.
pub type ProbeGroup = Vec<Probe>;

/// Sites usable with `kinds`, each with the kinds it accepts.
pub fn sites_for(program: &Program, kinds: &BTreeSet<KindTag>, max_skip_len: usize) -> Vec<(FaultSite, Vec<KindTag>)> {
    let data: Vec<KindTag> = kinds.iter().copied().filter(|k| k.is_data()).collect();
    let skip = if kinds.contains(&KindTag::Skip) {
        max_skip_len
    } else {
        0
    };
    enumerate_sites(program, skip)
        .into_iter()
        .filter_map(|site| {
            let ks = if site.is_skip() {
                vec![KindTag::Skip]
            } else {
                data.clone()
            };
            (!ks.is_empty()).then_some((site, ks))
        })
        .collect()
}

/// Zero and skip probes that each switch off one verification instruction.
pub fn verification_probes(program: &Program) -> Vec<Probe> {
    let mut instrs: Vec<usize> = program.verification_instrs().into_iter().collect();
    instrs.sort_unstable();
    instrs
        .into_iter()
        .flat_map(|i| {
            [
                Probe {
                    site: FaultSite::WriteOf(i),
                    kind: KindTag::Zero,
                },
                Probe {
                    site: FaultSite::SkipRange(i, i),
                    kind: KindTag::Skip,
                },
            ]
        })
        .collect()
}

/// Write and read probes outside the verifications.
pub fn data_probes(program: &Program, kinds: &BTreeSet<KindTag>) -> Vec<Probe> {
    let guarded = program.verification_instrs();
    sites_for(program, kinds, 0)
        .into_iter()
        .filter(|(site, _)| !site.instrs().any(|i| guarded.contains(&i)))
        .flat_map(|(site, ks)| ks.into_iter().map(move |kind| Probe { site, kind }))
        .collect()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every group of `spec.order` distinct sites, with every kind assignment.
pub fn plan_groups(spec: &CampaignSpec, program: &Program) -> Vec<ProbeGroup> {
    let sites = sites_for(program, &spec.kinds, spec.max_skip_len);
    let mut out = Vec::new();
    for combo in combinations(sites.len(), spec.order) {
        let mut acc: Vec<ProbeGroup> = vec![Vec::new()];
        for &i in &combo {
            let (site, kinds) = &sites[i];
            acc = acc
                .into_iter()
                .flat_map(|g| {
                    kinds.iter().map(move |&kind| {
                        let mut g = g.clone();
                        g.push(Probe { site: *site, kind });
                        g
                    })
                })
                .collect();
        }
        out.extend(acc);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Knobs {
    threshold: u64,
    samples: usize,
    seed: u64,
}

fn group_rng(seed: u64, group: usize, baseline: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (baseline as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(group as u64);
    rng
}

fn fixed_action(p: &Probe) -> FaultAction {
    match p.kind {
        KindTag::Zero => FaultAction::zero(p.site),
        KindTag::Skip => FaultAction {
            site: p.site,
            kind: FaultKind::Skip,
        },
        KindTag::Randomize => unreachable!("randomize needs a value"),
    }
}

/// Concrete plans of one group against one baseline, and whether the
/// Randomize values were enumerated exhaustively.
fn expand(
    program: &Program,
    base: &Baseline,
    group: &[Probe],
    knobs: Knobs,
    rng: &mut ChaCha8Rng,
) -> (Vec<FaultPlan>, bool) {
    let domains: Vec<Option<Domain>> = group
        .iter()
        .map(|p| {
            (p.kind == KindTag::Randomize).then(|| base.domain(program, p.site).expect("randomize on a data site"))
        })
        .collect();
    let total = domains.iter().flatten().fold(Nat::one(), |acc, d| acc * d.size());
    let exhaustive = domains.iter().all(Option::is_none) || total <= Nat::from(knobs.threshold);
    if exhaustive {
        let mut plans: Vec<FaultPlan> = vec![Vec::new()];
        for (p, d) in group.iter().zip(&domains) {
            plans = match d {
                None => plans
                    .into_iter()
                    .map(|mut pl| {
                        pl.push(fixed_action(p));
                        pl
                    })
                    .collect(),
                Some(d) => plans
                    .iter()
                    .flat_map(|pl| {
                        d.values().map(move |v| {
                            let mut pl = pl.clone();
                            pl.push(FaultAction::randomize(p.site, v));
                            pl
                        })
                    })
                    .collect(),
            };
        }
        return (plans, true);
    }
    let plans = (0..knobs.samples)
        .map(|_| {
            group
                .iter()
                .zip(&domains)
                .map(|(p, d)| match d {
                    None => fixed_action(p),
                    Some(d) => FaultAction::randomize(p.site, d.sample(rng)),
                })
                .collect()
        })
        .collect();
    (plans, false)
}

/// Concrete plans of one group for one message.
#[derive(Debug, Clone)]
pub struct PlanBatch {
    pub group: ProbeGroup,
    pub message: Nat,
    pub plans: Vec<FaultPlan>,
    pub exhaustive: bool,
}

/// All plans a campaign executes, in execution order.
pub fn plan_campaign(spec: &CampaignSpec, program: &Program) -> Result<Vec<PlanBatch>, CampaignError> {
    spec.validate()?;
    let bases = baselines(program, &spec.key, &spec.messages, spec.seed)?;
    let mut out = Vec::new();
    for (gi, group) in plan_groups(spec, program).into_iter().enumerate() {
        for (bi, base) in bases.iter().enumerate() {
            let (plans, exhaustive) = expand(program, base, &group, spec.knobs(), &mut group_rng(spec.seed, gi, bi));
            out.push(PlanBatch {
                group: group.clone(),
                message: base.message.clone(),
                plans,
                exhaustive,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteClass {
    StructuralBreak,
    SubringCollision,
    /// Sampled successes too few to tell the two apart.
    Unclassified,
    None,
}

impl SiteClass {
    pub fn name(self) -> &'static str {
        match self {
            SiteClass::StructuralBreak => "structural-break",
            SiteClass::SubringCollision => "subring-collision",
            SiteClass::Unclassified => "unclassified",
            SiteClass::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SiteTally {
    pub attempts: u64,
    pub successes: u64,
    /// Largest success fraction still explained by checksum collisions.
    pub collision_limit: f64,
    /// Every value of the domain was tried, so the fraction is exact.
    pub exhaustive: bool,
}

impl SiteTally {
    pub fn fraction(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }

    /// Wilson score interval at `z` standard deviations.
    pub fn wilson(&self, z: f64) -> (f64, f64) {
        if self.attempts == 0 {
            return (0.0, 1.0);
        }
        let n = self.attempts as f64;
        let f = self.fraction();
        let z2 = z * z;
        let centre = f + z2 / (2.0 * n);
        let spread = z * (f * (1.0 - f) / n + z2 / (4.0 * n * n)).sqrt();
        let scale = 1.0 + z2 / n;
        (
            ((centre - spread) / scale).max(0.0),
            ((centre + spread) / scale).min(1.0),
        )
    }
}

/// Width of the interval a sampled fraction must clear to be classified.
pub const SAMPLED_Z: f64 = 3.0;

pub fn classify_site(t: &SiteTally) -> SiteClass {
    if t.successes == 0 {
        return SiteClass::None;
    }
    if !t.exhaustive {
        let (lo, hi) = t.wilson(SAMPLED_Z);
        return if lo > t.collision_limit {
            SiteClass::StructuralBreak
        } else if hi <= t.collision_limit {
            SiteClass::SubringCollision
        } else {
            SiteClass::Unclassified
        };
    }
    if 2 * t.successes < t.attempts && t.fraction() <= t.collision_limit {
        SiteClass::SubringCollision
    } else {
        SiteClass::StructuralBreak
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeAction {
    pub site: FaultSite,
    pub kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

/// Everything needed to re-run one successful plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub plan: Vec<RecipeAction>,
    pub message: String,
    pub seed: u64,
    pub output: String,
    pub class: AttackClass,
    pub factor: String,
}

impl Recipe {
    fn new(plan: &[FaultAction], base: &Baseline, output: &Nat, attack: &AttackResult) -> Self {
        let plan = plan
            .iter()
            .map(|a| {
                let (kind, value) = match &a.kind {
                    FaultKind::Zero => (KindTag::Zero, None),
                    FaultKind::Randomize(v) => (KindTag::Randomize, Some(v.to_string())),
                    FaultKind::Skip => (KindTag::Skip, None),
                };
                RecipeAction {
                    site: a.site,
                    kind,
                    value,
                }
            })
            .collect();
        Self {
            plan,
            message: base.message.to_string(),
            seed: base.seed,
            output: output.to_string(),
            class: attack.class,
            factor: attack.factor.as_ref().map(ToString::to_string).unwrap_or_default(),
        }
    }

    pub fn fault_plan(&self) -> Result<FaultPlan, CampaignError> {
        self.plan
            .iter()
            .map(|a| {
                Ok(match a.kind {
                    KindTag::Randomize => {
                        let v = a
                            .value
                            .as_deref()
                            .ok_or_else(|| CampaignError::MalformedRecipe("randomize without value".into()))?;
                        let v = Nat::from_str(v).map_err(|_| CampaignError::MalformedRecipe(format!("value {v:?}")))?;
                        FaultAction::randomize(a.site, v)
                    }
                    k => fixed_action(&Probe { site: a.site, kind: k }),
                })
            })
            .collect()
    }

    pub fn replay(&self, program: &Program, key: &CrtKey) -> Result<ExecResult, CampaignError> {
        let message = Nat::from_str(&self.message).map_err(|_| CampaignError::MalformedRecipe(self.message.clone()))?;
        let inputs = key.inputs(&message)?;
        Ok(execute_untraced(program, &inputs, self.seed, &self.fault_plan()?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRow {
    pub site: String,
    pub kind: String,
    pub attempts: u64,
    pub successes: u64,
    pub fraction: f64,
    pub exhaustive: bool,
    pub limit: f64,
    pub class: SiteClass,
    #[serde(skip)]
    pub probes: ProbeGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Totals {
    pub groups: u64,
    pub plans: u64,
    pub successes: u64,
    pub error_outputs: u64,
    pub crashes: u64,
    /// Probe groups classified as structural breaks.
    pub breaks: u64,
    /// Probe groups classified as subring collisions.
    pub collisions: u64,
    /// Sampled probe groups with successes but no verdict.
    pub unclassified: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SpecRecord {
    pub program: String,
    pub mode: String,
    pub p: String,
    pub q: String,
    pub messages: Vec<String>,
    pub order: usize,
    pub kinds: Vec<KindTag>,
    pub max_skip_len: usize,
    pub exhaustive_threshold: u64,
    pub samples: usize,
    pub seed: u64,
    pub r_bits: u32,
    pub fault_model: String,
}

impl SpecRecord {
    fn new(spec: &CampaignSpec, program: &Program, mode: &str) -> Self {
        Self {
            program: program.name.clone(),
            mode: mode.to_string(),
            p: spec.key.p.to_string(),
            q: spec.key.q.to_string(),
            messages: spec.messages.iter().map(ToString::to_string).collect(),
            order: spec.order,
            kinds: spec.kinds.iter().copied().collect(),
            max_skip_len: spec.max_skip_len,
            exhaustive_threshold: spec.exhaustive_threshold,
            samples: spec.samples,
            seed: spec.seed,
            r_bits: spec.r_bits,
            fault_model: FAULT_MODEL.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignReport {
    pub spec: SpecRecord,
    #[serde(rename = "program-digest")]
    pub program_digest: String,
    pub totals: Totals,
    pub sites: Vec<SiteRow>,
    pub recipes: Vec<Recipe>,
    /// Wall-clock time; kept out of the serialized form so reruns compare
    /// byte for byte.
    #[serde(skip)]
    pub runtime: Duration,
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "site",
            "kind",
            "attempts",
            "successes",
            "fraction",
            "exhaustive",
            "limit",
            "class",
        ])
        .expect("in-memory writer");
        for r in &self.sites {
            w.write_record([
                r.site.clone(),
                r.kind.clone(),
                r.attempts.to_string(),
                r.successes.to_string(),
                format!("{:.6}", r.fraction),
                r.exhaustive.to_string(),
                format!("{:.6}", r.limit),
                r.class.name().to_string(),
            ])
            .expect("in-memory writer");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn summary_line(&self) -> String {
        format!(
            "algo={} order={} plans={} breaks={} collisions={}",
            self.spec.program, self.spec.order, self.totals.plans, self.totals.breaks, self.totals.collisions
        )
    }

    pub fn rows_of(&self, class: SiteClass) -> impl Iterator<Item = &SiteRow> {
        self.sites.iter().filter(move |r| r.class == class)
    }
}

pub fn program_digest(program: &Program) -> String {
    hex::encode(Sha256::digest(program.dump().as_bytes()))
}

#[derive(Debug, Clone, Default)]
struct GroupOutcome {
    attempts: u64,
    successes: u64,
    error_outputs: u64,
    crashes: u64,
    exhaustive: bool,
    recipes: Vec<Recipe>,
}

impl GroupOutcome {
    fn record(&mut self, plan: &[FaultAction], base: &Baseline, result: &ExecResult) {
        self.attempts += 1;
        match result {
            ExecResult::ErrorConstant => self.error_outputs += 1,
            ExecResult::Crash(_) => self.crashes += 1,
            ExecResult::Signature(_) => {}
        }
        let attack = base.judge(result);
        if attack.is_success() {
            self.successes += 1;
            if self.recipes.len() < RECIPES_PER_GROUP {
                let out = result.signature().expect("successes carry a signature");
                self.recipes.push(Recipe::new(plan, base, out, &attack));
            }
        }
    }
}

fn run_group(
    program: &Program,
    bases: &[Baseline],
    group: &[Probe],
    gi: usize,
    knobs: Knobs,
) -> Result<GroupOutcome, ExecError> {
    let mut out = GroupOutcome {
        exhaustive: true,
        ..Default::default()
    };
    for (bi, base) in bases.iter().enumerate() {
        let (plans, exhaustive) = expand(program, base, group, knobs, &mut group_rng(knobs.seed, gi, bi));
        out.exhaustive &= exhaustive;
        for plan in plans {
            let result = base.run(program, &plan)?;
            out.record(&plan, base, &result);
        }
    }
    Ok(out)
}

fn collision_limit(bases: &[Baseline]) -> f64 {
    let mean = bases
        .iter()
        .map(|b| 1.0 / b.r_eff.to_f64().unwrap_or(f64::INFINITY))
        .sum::<f64>()
        / bases.len().max(1) as f64;
    2.0 * mean
}

fn label(group: &[Probe]) -> (String, String) {
    let join = |f: &dyn Fn(&Probe) -> String| group.iter().map(f).collect::<Vec<_>>().join("+");
    (join(&|p| p.site.to_string()), join(&|p| p.kind.to_string()))
}

fn assemble(
    record: SpecRecord,
    program: &Program,
    groups: &[ProbeGroup],
    outcomes: &[GroupOutcome],
    limit: f64,
    started: Instant,
) -> CampaignReport {
    let mut totals = Totals {
        groups: groups.len() as u64,
        ..Default::default()
    };
    let mut sites = Vec::new();
    let mut recipes = Vec::new();
    for (g, o) in groups.iter().zip(outcomes) {
        totals.plans += o.attempts;
        totals.successes += o.successes;
        totals.error_outputs += o.error_outputs;
        totals.crashes += o.crashes;
        if o.attempts == 0 {
            continue;
        }
        let tally = SiteTally {
            attempts: o.attempts,
            successes: o.successes,
            collision_limit: limit,
            exhaustive: o.exhaustive,
        };
        let class = classify_site(&tally);
        match class {
            SiteClass::StructuralBreak => totals.breaks += 1,
            SiteClass::SubringCollision => totals.collisions += 1,
            SiteClass::Unclassified => totals.unclassified += 1,
            SiteClass::None => {}
        }
        let (site, kind) = label(g);
        sites.push(SiteRow {
            site,
            kind,
            attempts: o.attempts,
            successes: o.successes,
            fraction: tally.fraction(),
            exhaustive: o.exhaustive,
            limit,
            class,
            probes: g.clone(),
        });
        recipes.extend(o.recipes.iter().cloned());
    }
    CampaignReport {
        spec: record,
        program_digest: program_digest(program),
        totals,
        sites,
        recipes,
        runtime: started.elapsed(),
    }
}

fn run_mode(
    spec: &CampaignSpec,
    program: &Program,
    groups: &[ProbeGroup],
    mode: &str,
) -> Result<CampaignReport, CampaignError> {
    let started = Instant::now();
    spec.validate()?;
    let bases = baselines(program, &spec.key, &spec.messages, spec.seed)?;
    let knobs = spec.knobs();
    // Indexed collection keeps the merge independent of scheduling.
    let outcomes = groups
        .par_iter()
        .enumerate()
        .map(|(gi, g)| run_group(program, &bases, g, gi, knobs))
        .collect::<Result<Vec<_>, _>>()?;
    let record = SpecRecord::new(spec, program, mode);
    Ok(assemble(
        record,
        program,
        groups,
        &outcomes,
        collision_limit(&bases),
        started,
    ))
}

/// Build `spec.algo` and run the enumerated campaign on it.
pub fn run_campaign(spec: &CampaignSpec) -> Result<CampaignReport, CampaignError> {
    let program = build(spec.algo, &spec.key, spec.r_bits)?;
    run_campaign_on(spec, &program)
}

/// Enumerated campaign on an arbitrary program; `spec.algo` is ignored.
pub fn run_campaign_on(spec: &CampaignSpec, program: &Program) -> Result<CampaignReport, CampaignError> {
    run_mode(spec, program, &plan_groups(spec, program), "enumerated")
}

/// Campaign over caller-chosen probe groups.
pub fn run_groups(
    spec: &CampaignSpec,
    program: &Program,
    groups: &[ProbeGroup],
) -> Result<CampaignReport, CampaignError> {
    run_mode(spec, program, groups, "groups")
}

/// `count` random plans of exactly `spec.order` probes, one random value per
/// Randomize probe. Each group that yields a success is then re-run with the
/// campaign's sampling knobs to classify it. Totals count the random plans;
/// site rows describe the follow-up runs.
pub fn run_sampled(spec: &CampaignSpec, program: &Program, count: usize) -> Result<CampaignReport, CampaignError> {
    let started = Instant::now();
    spec.validate()?;
    let bases = baselines(program, &spec.key, &spec.messages, spec.seed)?;
    let sites = sites_for(program, &spec.kinds, spec.max_skip_len);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draws: Vec<(ProbeGroup, usize, u64)> = if sites.len() < spec.order {
        Vec::new()
    } else {
        (0..count)
            .map(|_| {
                let mut picked = rand::seq::index::sample(&mut rng, sites.len(), spec.order).into_vec();
                picked.sort_unstable();
                let group = picked
                    .into_iter()
                    .map(|i| {
                        let (site, kinds) = &sites[i];
                        Probe {
                            site: *site,
                            kind: *kinds.choose(&mut rng).expect("non-empty"),
                        }
                    })
                    .collect();
                (group, rng.gen_range(0..bases.len()), rng.gen())
            })
            .collect()
    };
    let single = Knobs {
        threshold: 0,
        samples: 1,
        seed: spec.seed,
    };
    let hits = draws
        .par_iter()
        .map(|(group, bi, sub)| {
            let base = &bases[*bi];
            let mut r = ChaCha8Rng::seed_from_u64(*sub);
            let (plans, _) = expand(program, base, group, single, &mut r);
            let mut o = GroupOutcome::default();
            for plan in &plans[..1] {
                let result = base.run(program, plan)?;
                o.record(plan, base, &result);
            }
            Ok(o)
        })
        .collect::<Result<Vec<_>, ExecError>>()?;

    let mut followed: Vec<ProbeGroup> = draws
        .iter()
        .zip(&hits)
        .filter(|(_, o)| o.successes > 0)
        .map(|((g, _, _), _)| g.clone())
        .collect();
    followed.sort();
    followed.dedup();
    let knobs = spec.knobs();
    let outcomes = followed
        .par_iter()
        .enumerate()
        .map(|(gi, g)| run_group(program, &bases, g, gi, knobs))
        .collect::<Result<Vec<_>, _>>()?;
    let record = SpecRecord::new(spec, program, "sampled");
    let mut report = assemble(record, program, &followed, &outcomes, collision_limit(&bases), started);
    let mut totals = Totals {
        groups: draws.len() as u64,
        breaks: report.totals.breaks,
        collisions: report.totals.collisions,
        ..Default::default()
    };
    for o in &hits {
        totals.plans += o.attempts;
        totals.successes += o.successes;
        totals.error_outputs += o.error_outputs;
        totals.crashes += o.crashes;
    }
    report.totals = totals;
    report.recipes = hits.into_iter().flat_map(|o| o.recipes).collect();
    report.runtime = started.elapsed();
    Ok(report)
}

/// One row of the skip-subsumption table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WitnessRow {
    pub message: Nat,
    /// `None` stands for the empty skip.
    pub window: Option<(usize, usize)>,
    pub result: ExecResult,
    /// Data-fault plan with the same result; `None` is a counterexample.
    pub witness: Option<FaultPlan>,
}

/// Zeroes what the window would have produced: every write in it, every
/// later read of raw inputs it loads, and the read of a skipped return.
fn zeroing_witness(program: &Program, first: usize, last: usize) -> FaultPlan {
    let mut plan = Vec::new();
    for i in first..=last {
        let instr = program.instr(i);
        if instr.writable() {
            plan.push(FaultAction::zero(FaultSite::WriteOf(i)));
        } else if let Some(d) = instr.dst() {
            for j in last + 1..program.len() {
                for (s, r) in program.instr(j).operands().into_iter().enumerate() {
                    if r == d {
                        plan.push(FaultAction::zero(FaultSite::ReadOf(j, s)));
                    }
                }
            }
        } else if matches!(instr, Instr::Return { .. }) {
            plan.push(FaultAction::zero(FaultSite::ReadOf(i, 0)));
        }
    }
    plan
}

/// For every skip window of length up to `max_skip_len`, a data-fault plan
/// (Zero or Randomize only) reproducing the same result. Uses the default
/// messages and seed.
pub fn check_skip_subsumption(
    program: &Program,
    key: &CrtKey,
    max_skip_len: usize,
) -> Result<Vec<WitnessRow>, CampaignError> {
    check_skip_subsumption_with(program, key, max_skip_len, &default_messages(key), DEFAULT_SEED)
}

pub fn check_skip_subsumption_with(
    program: &Program,
    key: &CrtKey,
    max_skip_len: usize,
    messages: &[Nat],
    seed: u64,
) -> Result<Vec<WitnessRow>, CampaignError> {
    let data: Vec<FaultSite> = enumerate_sites(program, 0);
    let mut rows = Vec::new();
    for base in baselines(program, key, messages, seed)? {
        let run = |plan: &[FaultAction]| base.run(program, plan);
        rows.push(WitnessRow {
            message: base.message.clone(),
            window: None,
            result: ExecResult::Signature(base.signature.clone()),
            witness: Some(Vec::new()),
        });
        let windows = enumerate_sites(program, max_skip_len)
            .into_iter()
            .filter_map(|s| match s {
                FaultSite::SkipRange(a, b) => Some((a, b)),
                _ => None,
            });
        for (a, b) in windows {
            let target = run(&[FaultAction::skip(a, b)])?;
            let mut witness = None;
            let mut candidates: Vec<FaultPlan> = vec![Vec::new()];
            candidates.extend(data.iter().map(|s| vec![FaultAction::zero(*s)]));
            for plan in candidates {
                if run(&plan)? == target {
                    witness = Some(plan);
                    break;
                }
            }
            if witness.is_none() {
                'search: for s in &data {
                    let d = base.domain(program, *s).expect("data site");
                    if d.size() > Nat::from(DEFAULT_THRESHOLD) {
                        continue;
                    }
                    for v in d.values() {
                        let plan = vec![FaultAction::randomize(*s, v)];
                        if run(&plan)? == target {
                            witness = Some(plan);
                            break 'search;
                        }
                    }
                }
            }
            if witness.is_none() {
                let plan = zeroing_witness(program, a, b);
                if run(&plan)? == target {
                    witness = Some(plan);
                }
            }
            rows.push(WitnessRow {
                message: base.message.clone(),
                window: Some((a, b)),
                result: target,
                witness,
            });
        }
    }
    Ok(rows)
}
