//! Construction of disjoint example/test splits satisfying per-class box
//! minimums: two-phase coverage/balance optimization with a seed search
//! ranked by the support-spread score (SSS = CPC x CBE).

pub mod exact;
mod solver;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};

use solver::{mix_seed, Ctx};

/// Role of one image within a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Example,
    Test,
    Unused,
}

/// Per-image box counts, aligned to `SplitInstance::classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageCounts {
    pub image_id: String,
    pub counts: Vec<u64>,
}

/// The split optimization input: images with per-class box counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitInstance {
    pub source: String,
    /// Sorted class names; every class has at least one box somewhere.
    pub classes: Vec<String>,
    pub images: Vec<ImageCounts>,
}

impl SplitInstance {
    pub fn new(
        source: impl Into<String>,
        images: Vec<(String, BTreeMap<String, u64>)>,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Validation("split instance has no images".into()));
        }
        let mut classes: Vec<String> = images
            .iter()
            .flat_map(|(_, counts)| {
                counts
                    .iter()
                    .filter(|(_, n)| **n > 0)
                    .map(|(c, _)| c.clone())
            })
            .collect();
        classes.sort();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::Validation(
                "split instance has no annotated classes".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        let images = images
            .into_iter()
            .map(|(image_id, counts)| {
                if !seen.insert(image_id.clone()) {
                    return Err(Error::Validation(format!(
                        "duplicate image id '{image_id}' in split instance"
                    )));
                }
                let counts = classes
                    .iter()
                    .map(|c| counts.get(c).copied().unwrap_or(0))
                    .collect();
                Ok(ImageCounts { image_id, counts })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitInstance {
            source: source.into(),
            classes,
            images,
        })
    }

    /// Derive an instance from a loaded dataset index.
    pub fn from_index(index: &DatasetIndex) -> Result<Self> {
        let mut per_image: BTreeMap<String, BTreeMap<String, u64>> = index
            .images
            .iter()
            .map(|rec| (rec.image_id.clone(), BTreeMap::new()))
            .collect();
        for ann in &index.annotations {
            *per_image
                .get_mut(&ann.image_id)
                .expect("index annotations reference known images")
                .entry(ann.class_label.clone())
                .or_insert(0) += 1;
        }
        SplitInstance::new(index.source.clone(), per_image.into_iter().collect())
    }

    pub fn total_boxes(&self) -> u64 {
        self.images
            .iter()
            .map(|img| img.counts.iter().sum::<u64>())
            .sum()
    }
}

/// Hard constraints: per-class box minimums and exact split sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConstraints {
    /// Minimum boxes per class in the example split.
    pub m_exp: u64,
    /// Minimum boxes per class in the test split.
    pub m_test: u64,
    /// Number of example images.
    pub n_exp: usize,
    /// Number of test images.
    pub n_test: usize,
}

impl Default for SplitConstraints {
    fn default() -> Self {
        SplitConstraints {
            m_exp: 6,
            m_test: 10,
            n_exp: 10,
            n_test: 53,
        }
    }
}

impl SplitConstraints {
    pub fn validate(&self, inst: &SplitInstance) -> Result<()> {
        if self.m_exp == 0 || self.m_test == 0 || self.n_exp == 0 || self.n_test == 0 {
            return Err(Error::Validation(
                "split constraints must all be positive".into(),
            ));
        }
        if self.n_exp + self.n_test > inst.images.len() {
            return Err(Error::Validation(format!(
                "split sizes {} + {} exceed the {} available images",
                self.n_exp,
                self.n_test,
                inst.images.len()
            )));
        }
        Ok(())
    }
}

/// Per-image example/test selection. The role encoding enforces
/// x_exp + x_test <= 1 by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionVector {
    pub roles: Vec<Role>,
}

impl DecisionVector {
    pub fn indices_with(&self, role: Role) -> Vec<usize> {
        (0..self.roles.len())
            .filter(|&i| self.roles[i] == role)
            .collect()
    }

    pub fn validate(&self, inst: &SplitInstance, cons: &SplitConstraints) -> Result<()> {
        if self.roles.len() != inst.images.len() {
            return Err(Error::Validation(
                "decision vector length does not match instance".into(),
            ));
        }
        let n_exp = self.indices_with(Role::Example).len();
        let n_test = self.indices_with(Role::Test).len();
        if n_exp != cons.n_exp || n_test != cons.n_test {
            return Err(Error::Validation(format!(
                "split sizes {n_exp}/{n_test} do not match required {}/{}",
                cons.n_exp, cons.n_test
            )));
        }
        Ok(())
    }
}

/// Split quality score. Invariant: sss = cpc * cbe exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub cpc: f64,
    pub cbe: f64,
    pub sss: f64,
}

impl SplitScore {
    pub fn new(cpc: f64, cbe: f64) -> Result<Self> {
        for (name, v) in [("cpc", cpc), ("cbe", cbe)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(SplitScore {
            cpc,
            cbe,
            sss: sss(cpc, cbe),
        })
    }
}

/// Support-spread score: the product of coverage and balance.
pub fn sss(cpc: f64, cbe: f64) -> f64 {
    cpc * cbe
}

/// Seed-search configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSearchConfig {
    pub trials: usize,
    pub base_seed: u64,
}

impl Default for SeedSearchConfig {
    fn default() -> Self {
        SeedSearchConfig {
            trials: 1000,
            base_seed: 0,
        }
    }
}

/// Class-presence coverage: mean over classes of the fraction of example
/// images containing the class.
pub fn cpc(inst: &SplitInstance, dv: &DecisionVector) -> Result<f64> {
    let ex = dv.indices_with(Role::Example);
    if ex.is_empty() {
        return Err(Error::Validation("cpc needs a non-empty example split".into()));
    }
    let n_exp = ex.len() as f64;
    let mean: f64 = (0..inst.classes.len())
        .map(|c| {
            let with = ex.iter().filter(|&&i| inst.images[i].counts[c] > 0).count();
            with as f64 / n_exp
        })
        .sum::<f64>()
        / inst.classes.len() as f64;
    Ok(mean)
}

/// Class-balance entropy: Shannon entropy of the example split's per-class
/// box distribution, normalized by log of the class count. Defined as 1 for
/// a single class.
pub fn cbe(inst: &SplitInstance, dv: &DecisionVector) -> Result<f64> {
    let ex = dv.indices_with(Role::Example);
    let counts: Vec<u64> = (0..inst.classes.len())
        .map(|c| ex.iter().map(|&i| inst.images[i].counts[c]).sum())
        .collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Validation(
            "cbe is undefined for an example split with zero boxes".into(),
        ));
    }
    if inst.classes.len() == 1 {
        return Ok(1.0);
    }
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok(entropy / (inst.classes.len() as f64).ln())
}

/// CPC, CBE and their product for one split.
pub fn score_split(inst: &SplitInstance, dv: &DecisionVector) -> Result<SplitScore> {
    SplitScore::new(cpc(inst, dv)?, cbe(inst, dv)?)
}

/// Phase-1 objective: number of distinct (class, example-image) incidence
/// pairs selected by the decision vector.
pub fn coverage_value(inst: &SplitInstance, dv: &DecisionVector) -> u64 {
    dv.indices_with(Role::Example)
        .iter()
        .map(|&i| inst.images[i].counts.iter().filter(|c| **c > 0).count() as u64)
        .sum()
}

/// Phase-2 primary objective in integer form: sum_c total_c * surplus_c.
/// Dividing by the instance box total gives the frequency-weighted surplus.
pub fn surplus_scaled_value(inst: &SplitInstance, cons: &SplitConstraints, dv: &DecisionVector) -> u64 {
    let ctx = Ctx::new(inst, cons);
    let st = solver::State::from_roles(&ctx, dv.roles.clone());
    solver::surplus_scaled(&ctx, &st)
}

/// Frequency-weighted example surplus: sum_c f_c * max(0, ex_c - m_exp).
pub fn surplus_weighted(inst: &SplitInstance, cons: &SplitConstraints, dv: &DecisionVector) -> f64 {
    surplus_scaled_value(inst, cons, dv) as f64 / inst.total_boxes() as f64
}

/// Phase-2 secondary objective: sum_c test_c / total_c. Multiplying by the
/// instance box total gives the 1/f_c-weighted test box count.
pub fn test_reward_value(inst: &SplitInstance, dv: &DecisionVector) -> f64 {
    let te = dv.indices_with(Role::Test);
    let mut class_tot = vec![0u64; inst.classes.len()];
    for img in &inst.images {
        for (c, n) in img.counts.iter().enumerate() {
            class_tot[c] += n;
        }
    }
    (0..inst.classes.len())
        .map(|c| {
            let boxes: u64 = te.iter().map(|&i| inst.images[i].counts[c]).sum();
            boxes as f64 / class_tot[c] as f64
        })
        .sum()
}

/// Cheap provable-infeasibility screen: for each class, the best attainable
/// box count from any n_exp (or n_test) images must reach the minimum.
fn feasibility_precheck(inst: &SplitInstance, cons: &SplitConstraints) -> Result<()> {
    for (c, class) in inst.classes.iter().enumerate() {
        let mut per_img: Vec<u64> = inst.images.iter().map(|img| img.counts[c]).collect();
        per_img.sort_unstable_by(|a, b| b.cmp(a));
        let top = |k: usize| per_img.iter().take(k).sum::<u64>();
        let total: u64 = per_img.iter().sum();
        if top(cons.n_exp) < cons.m_exp {
            return Err(Error::Infeasible {
                class: class.clone(),
                side: "example",
                required: cons.m_exp,
                attainable: top(cons.n_exp),
            });
        }
        if top(cons.n_test) < cons.m_test {
            return Err(Error::Infeasible {
                class: class.clone(),
                side: "test",
                required: cons.m_test,
                attainable: top(cons.n_test),
            });
        }
        if total < cons.m_exp + cons.m_test {
            return Err(Error::Infeasible {
                class: class.clone(),
                side: "combined",
                required: cons.m_exp + cons.m_test,
                attainable: total,
            });
        }
    }
    Ok(())
}

/// Seeds used for the two phases of one trial. Exposed so a single external
/// phase1 + phase2 composition can reproduce `solve` with trials = 1.
#[derive(Debug, Clone, Copy)]
pub struct TrialSeeds {
    pub phase1: u64,
    pub phase2: u64,
}

pub fn trial_seeds(base_seed: u64, trial: usize) -> TrialSeeds {
    let t = mix_seed(base_seed, trial as u64);
    TrialSeeds {
        phase1: mix_seed(t, 1),
        phase2: mix_seed(t, 2),
    }
}

/// Phase 1: find a feasible selection maximizing class-image coverage in the
/// example split.
pub fn phase1_coverage(
    inst: &SplitInstance,
    cons: &SplitConstraints,
    seed: u64,
) -> Result<DecisionVector> {
    cons.validate(inst)?;
    feasibility_precheck(inst, cons)?;
    let ctx = Ctx::new(inst, cons);
    let st = solver::search_phase1(&ctx, seed);
    if solver::violations(&ctx, &st) > 0 {
        return Err(Error::FeasibilityNotFound { trials: 1 });
    }
    Ok(DecisionVector { roles: st.roles })
}

/// Phase 2: among selections with coverage >= `phase1_value`, minimize the
/// frequency-weighted example surplus, then maximize the rarity-weighted
/// test boxes (two-pass lexicographic solve).
pub fn phase2_balance(
    inst: &SplitInstance,
    cons: &SplitConstraints,
    phase1_value: u64,
    seed: u64,
) -> Result<DecisionVector> {
    cons.validate(inst)?;
    feasibility_precheck(inst, cons)?;
    let ctx = Ctx::new(inst, cons);
    let st = solver::search_phase2(&ctx, seed, phase1_value);
    if solver::violations(&ctx, &st) > 0 || st.coverage() < phase1_value {
        return Err(Error::FeasibilityNotFound { trials: 1 });
    }
    Ok(DecisionVector { roles: st.roles })
}

/// Image entry of a finished split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub role: Role,
    pub counts: BTreeMap<String, u64>,
}

/// A solved split: disjoint example/test selections with per-class tallies,
/// score and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub source: String,
    pub score: SplitScore,
    pub winning_seed: u64,
    pub winning_trial: usize,
    pub trials: usize,
    pub constraints: SplitConstraints,
    pub images: BTreeMap<String, SplitEntry>,
}

impl SplitAssignment {
    fn from_decision(
        inst: &SplitInstance,
        dv: &DecisionVector,
        score: SplitScore,
        winning_seed: u64,
        winning_trial: usize,
        trials: usize,
        cons: &SplitConstraints,
    ) -> Self {
        let images = inst
            .images
            .iter()
            .zip(&dv.roles)
            .map(|(img, role)| {
                let counts = inst
                    .classes
                    .iter()
                    .zip(&img.counts)
                    .filter(|(_, n)| **n > 0)
                    .map(|(c, n)| (c.clone(), *n))
                    .collect();
                (
                    img.image_id.clone(),
                    SplitEntry {
                        role: *role,
                        counts,
                    },
                )
            })
            .collect();
        SplitAssignment {
            source: inst.source.clone(),
            score,
            winning_seed,
            winning_trial,
            trials,
            constraints: *cons,
            images,
        }
    }

    pub fn ids_with(&self, role: Role) -> Vec<&str> {
        self.images
            .iter()
            .filter(|(_, e)| e.role == role)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn role_of(&self, image_id: &str) -> Option<Role> {
        self.images.get(image_id).map(|e| e.role)
    }

    /// Per-class box tallies over the images holding `role`.
    pub fn class_tallies(&self, role: Role) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for entry in self.images.values().filter(|e| e.role == role) {
            for (class, n) in &entry.counts {
                *out.entry(class.clone()).or_insert(0) += n;
            }
        }
        out
    }
}

/// Run phases 1-2 under `trials` shuffled seeds and keep the split with the
/// highest SSS (ties broken by lowest trial index). Deterministic in
/// (instance, constraints, base seed, trial count).
pub fn solve(
    inst: &SplitInstance,
    cons: &SplitConstraints,
    search: &SeedSearchConfig,
) -> Result<(SplitAssignment, SplitScore)> {
    if search.trials == 0 {
        return Err(Error::Validation("seed search needs at least one trial".into()));
    }
    cons.validate(inst)?;
    feasibility_precheck(inst, cons)?;

    let outcomes: Vec<Option<(f64, usize, u64, DecisionVector, SplitScore)>> = (0..search.trials)
        .into_par_iter()
        .map(|trial| {
            let seeds = trial_seeds(search.base_seed, trial);
            let dv1 = phase1_coverage(inst, cons, seeds.phase1).ok()?;
            let v1 = coverage_value(inst, &dv1);
            let dv2 = phase2_balance(inst, cons, v1, seeds.phase2).ok()?;
            let score = score_split(inst, &dv2).ok()?;
            Some((score.sss, trial, seeds.phase1, dv2, score))
        })
        .collect();

    let mut best: Option<(f64, usize, u64, DecisionVector, SplitScore)> = None;
    for item in outcomes.into_iter().flatten() {
        let take = match &best {
            None => true,
            Some(b) => item.0 > b.0,
        };
        if take {
            best = Some(item);
        }
    }
    let (_, trial, seed, dv, score) = best.ok_or(Error::FeasibilityNotFound {
        trials: search.trials,
    })?;
    let assignment =
        SplitAssignment::from_decision(inst, &dv, score, seed, trial, search.trials, cons);
    Ok((assignment, score))
}

// --- split file (JSONL: header line, then one record per image) ---

#[derive(Serialize, Deserialize)]
struct SplitFileHeader {
    source: String,
    score: SplitScore,
    winning_seed: u64,
    winning_trial: usize,
    trials: usize,
    constraints: SplitConstraints,
    phase2_objective: String,
}

#[derive(Serialize, Deserialize)]
struct SplitFileRecord {
    image_id: String,
    split: Role,
    counts: BTreeMap<String, u64>,
}

const PHASE2_NOTE: &str =
    "lexicographic: minimize frequency-weighted example surplus, then maximize rarity-weighted test boxes";

pub fn write_split_file(path: &Path, split: &SplitAssignment) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let header = SplitFileHeader {
        source: split.source.clone(),
        score: split.score,
        winning_seed: split.winning_seed,
        winning_trial: split.winning_trial,
        trials: split.trials,
        constraints: split.constraints,
        phase2_objective: PHASE2_NOTE.to_string(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for (image_id, entry) in &split.images {
        let record = SplitFileRecord {
            image_id: image_id.clone(),
            split: entry.role,
            counts: entry.counts.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

pub fn read_split_file(path: &Path) -> Result<SplitAssignment> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        reason: "empty split file".into(),
    })??;
    let header: SplitFileHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: format!("bad header: {e}"),
        })?;
    let mut images = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SplitFileRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                reason: format!("bad record on line {}: {e}", i + 2),
            })?;
        if images
            .insert(
                record.image_id.clone(),
                SplitEntry {
                    role: record.split,
                    counts: record.counts,
                },
            )
            .is_some()
        {
            return Err(Error::Parse {
                path: path.display().to_string(),
                reason: format!("duplicate image id '{}'", record.image_id),
            });
        }
    }
    Ok(SplitAssignment {
        source: header.source,
        score: header.score,
        winning_seed: header.winning_seed,
        winning_trial: header.winning_trial,
        trials: header.trials,
        constraints: header.constraints,
        images,
    })
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub fn toy_instance(images: &[(&str, &[(&str, u64)])]) -> SplitInstance {
        SplitInstance::new(
            "toy",
            images
                .iter()
                .map(|(id, counts)| {
                    (
                        id.to_string(),
                        counts
                            .iter()
                            .map(|(c, n)| (c.to_string(), *n))
                            .collect::<BTreeMap<_, _>>(),
                    )
                })
                .collect(),
        )
        .unwrap()
    }
}
