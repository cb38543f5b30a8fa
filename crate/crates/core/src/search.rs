//! Three-stage 2D-3D matching against one sub-model.
//!
//! 1. coarse: union of the eight LUT buckets addressed by the query's
//!    sub-codes. Every point within Hamming distance 7 shares at least one
//!    sub-code with the query and is therefore found.
//! 2. refine: counting sort of the coarse list by full 128-bit Hamming
//!    distance (ties by point id), keep the first 40.
//! 3. precise: ADC re-ranking and the Lowe ratio tests that split matches
//!    into one-one hypotheses (`ν_h`) and one-many verification lists (`ν`).

use std::sync::OnceLock;

use crate::descriptor::Descriptor;
use crate::error::{Error, Result};
use crate::hash::{hamming, BinaryCode, HashModel, CODE_BITS, SUBCODES};
use crate::model::SubModel;
use crate::pq::{DistanceTable, PqCodebook};

pub const DEFAULT_REFINED_LEN: usize = 40;
pub const DEFAULT_NU_H: f32 = 0.8;
pub const DEFAULT_NU: f32 = 0.9;
pub const DEFAULT_M: usize = 5;
pub const DEFAULT_N_EARLY: usize = 100;

/// A query keypoint with its hash code; the ADC table is built on first use.
#[derive(Debug)]
pub struct QueryFeature {
    pub pixel: [f64; 2],
    pub descriptor: Descriptor,
    pub code: BinaryCode,
    table: OnceLock<DistanceTable>,
}

impl Clone for QueryFeature {
    fn clone(&self) -> Self {
        QueryFeature {
            pixel: self.pixel,
            descriptor: self.descriptor.clone(),
            code: self.code,
            table: OnceLock::new(),
        }
    }
}

impl QueryFeature {
    pub fn new(pixel: [f64; 2], descriptor: Descriptor, hash: &HashModel) -> Self {
        let code = hash.hash(&descriptor);
        QueryFeature {
            pixel,
            descriptor,
            code,
            table: OnceLock::new(),
        }
    }

    /// Rejects pixels outside `[0, width) × [0, height)`.
    pub fn with_bounds(
        pixel: [f64; 2],
        descriptor: Descriptor,
        hash: &HashModel,
        bounds: [f64; 2],
    ) -> Result<Self> {
        if !(0.0..bounds[0]).contains(&pixel[0]) || !(0.0..bounds[1]).contains(&pixel[1]) {
            return Err(Error::InvalidInput(format!(
                "pixel ({}, {}) outside {}x{} image",
                pixel[0], pixel[1], bounds[0], bounds[1]
            )));
        }
        Ok(Self::new(pixel, descriptor, hash))
    }

    pub fn table(&self, codebook: &PqCodebook) -> &DistanceTable {
        self.table.get_or_init(|| codebook.adc_table(&self.descriptor))
    }

    pub fn has_table(&self) -> bool {
        self.table.get().is_some()
    }
}

/// How the relaxed (verification) list is gated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxedGate {
    /// Admit the query iff `d0/d1 < ν`, then keep the top `M` candidates.
    #[default]
    FirstRatio,
    /// Keep the top candidate plus each rank `j ≥ 1` (within `M`) with `d0/dj < ν`.
    PerCandidate,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SearchParams {
    /// Strict ratio threshold for one-one hypotheses.
    pub nu_h: f32,
    /// Relaxed ratio threshold for one-many verification lists.
    pub nu: f32,
    /// Candidates kept per verification list.
    pub max_candidates: usize,
    /// Length of the refined list.
    pub refined_len: usize,
    /// Stop once this many strict matches exist; `None` searches everything.
    pub n_early: Option<usize>,
    pub relaxed_gate: RelaxedGate,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            nu_h: DEFAULT_NU_H,
            nu: DEFAULT_NU,
            max_candidates: DEFAULT_M,
            refined_len: DEFAULT_REFINED_LEN,
            n_early: Some(DEFAULT_N_EARLY),
            relaxed_gate: RelaxedGate::FirstRatio,
        }
    }
}

impl SearchParams {
    pub fn exhaustive() -> Self {
        SearchParams {
            n_early: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu_h > 0.0 && self.nu_h <= self.nu && self.nu <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "ratio thresholds must satisfy 0 < nu_h <= nu <= 1 (nu_h={}, nu={})",
                self.nu_h, self.nu
            )));
        }
        if self.max_candidates == 0 || self.refined_len < 2 {
            return Err(Error::InvalidInput(
                "need max_candidates >= 1 and refined_len >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefinedCandidate {
    pub row: u32,
    pub hamming: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub row: u32,
    pub point_id: u32,
    /// Non-squared ADC distance.
    pub distance: f32,
}

/// Result of the precise stage for one query.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchRecord {
    pub query: usize,
    /// Best point when `d0/d1 < ν_h`.
    pub strict: Option<u32>,
    /// Candidates passing the relaxed gate, ascending distance.
    pub relaxed: Vec<Candidate>,
    /// All refined candidates after ADC re-ranking, ascending distance.
    pub ranked: Vec<Candidate>,
}

impl MatchRecord {
    pub fn distances(&self) -> impl Iterator<Item = f32> + '_ {
        self.ranked.iter().map(|c| c.distance)
    }
}

/// Coarse stage: deduplicated rows sharing at least one sub-code with `code`,
/// ascending.
pub fn coarse_lookup(model: &SubModel, code: BinaryCode) -> Vec<u32> {
    let lut = model.lut();
    let buckets: [&[u32]; SUBCODES] = std::array::from_fn(|k| lut.bucket(k, code.subcode(k)));
    let mut out = Vec::with_capacity(buckets.iter().map(|b| b.len()).sum());
    for b in buckets {
        out.extend_from_slice(b);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Refined stage: order `coarse` by full-code Hamming distance with a
/// 129-bin counting sort and keep the first `limit`. `coarse` must be
/// ascending so equal distances stay in point-id order.
pub fn refine(model: &SubModel, code: BinaryCode, coarse: &[u32], limit: usize) -> Vec<RefinedCandidate> {
    let mut hist = [0u32; CODE_BITS + 2];
    let dists: Vec<u32> = coarse
        .iter()
        .map(|&row| hamming(code, model.code(row)))
        .collect();
    for &d in &dists {
        hist[d as usize + 1] += 1;
    }
    // hist[d] becomes the first output slot for distance d.
    for d in 0..=CODE_BITS {
        hist[d + 1] += hist[d];
    }
    let keep = limit.min(coarse.len());
    let mut out = vec![RefinedCandidate { row: 0, hamming: 0 }; keep];
    for (&row, &d) in coarse.iter().zip(&dists) {
        let slot = &mut hist[d as usize];
        if (*slot as usize) < keep {
            out[*slot as usize] = RefinedCandidate { row, hamming: d };
        }
        *slot += 1;
    }
    out
}

fn ratio(d0: f32, d: f32) -> f32 {
    if d > 0.0 {
        d0 / d
    } else {
        // Both zero: equidistant.
        1.0
    }
}

/// Precise stage: ADC re-ranking of the refined list and ratio tests.
pub fn precise(
    model: &SubModel,
    codebook: &PqCodebook,
    query_index: usize,
    query: &QueryFeature,
    refined: &[RefinedCandidate],
    params: &SearchParams,
) -> MatchRecord {
    let mut record = MatchRecord {
        query: query_index,
        ..MatchRecord::default()
    };
    if refined.is_empty() {
        return record;
    }
    let table = query.table(codebook);
    let mut ranked: Vec<(f32, u32)> = refined
        .iter()
        .map(|c| (table.distance(model.pq_code(c.row)), c.row))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    record.ranked = ranked
        .iter()
        .map(|&(sq, row)| Candidate {
            row,
            point_id: model.point_id(row),
            distance: sq.max(0.0).sqrt(),
        })
        .collect();

    // A single candidate has no ratio; reject.
    if record.ranked.len() < 2 {
        return record;
    }
    let d0 = record.ranked[0].distance;
    let first = ratio(d0, record.ranked[1].distance);
    let keep = params.max_candidates.min(record.ranked.len());
    record.relaxed = match params.relaxed_gate {
        RelaxedGate::FirstRatio if first < params.nu => record.ranked[..keep].to_vec(),
        RelaxedGate::FirstRatio => Vec::new(),
        RelaxedGate::PerCandidate => {
            let rest: Vec<Candidate> = record.ranked[1..keep]
                .iter()
                .filter(|c| ratio(d0, c.distance) < params.nu)
                .copied()
                .collect();
            if rest.is_empty() && first >= params.nu {
                Vec::new()
            } else {
                std::iter::once(record.ranked[0]).chain(rest).collect()
            }
        }
    };
    if first < params.nu_h && !record.relaxed.is_empty() {
        record.strict = Some(record.ranked[0].point_id);
    }
    record
}

/// A candidate 3D point for one query in the verification set.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePoint {
    pub point_id: u32,
    pub position: [f64; 3],
    pub distance: f32,
}

/// One query's one-many verification list `P_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationEntry {
    pub query: usize,
    pub pixel: [f64; 2],
    pub candidates: Vec<CandidatePoint>,
}

/// Matches handed to RANSAC: hypotheses are indices into `verification`
/// whose first candidate passed the strict ratio test.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub verification: Vec<VerificationEntry>,
    pub hypotheses: Vec<usize>,
}

impl CorrespondenceSet {
    /// `N_h`.
    pub fn n_hypotheses(&self) -> usize {
        self.hypotheses.len()
    }

    /// `N_q`.
    pub fn n_queries(&self) -> usize {
        self.verification.len()
    }

    /// One-one view: (pixel, position) of every hypothesis.
    pub fn hypothesis_pairs(&self) -> impl Iterator<Item = ([f64; 2], [f64; 3])> + '_ {
        self.hypotheses.iter().map(|&i| {
            let e = &self.verification[i];
            (e.pixel, e.candidates[0].position)
        })
    }

    /// Keeps only the top `m` candidates of each verification list.
    pub fn truncated(&self, m: usize) -> CorrespondenceSet {
        let mut out = self.clone();
        for e in &mut out.verification {
            e.candidates.truncate(m.max(1));
        }
        out
    }

    /// Builds a set from match records; queries failing the relaxed gate are
    /// dropped.
    pub fn from_records(model: &SubModel, queries: &[QueryFeature], records: &[MatchRecord]) -> Self {
        let mut set = CorrespondenceSet::default();
        for rec in records.iter().filter(|r| !r.relaxed.is_empty()) {
            if rec.strict.is_some() {
                set.hypotheses.push(set.verification.len());
            }
            set.verification.push(VerificationEntry {
                query: rec.query,
                pixel: queries[rec.query].pixel,
                candidates: rec
                    .relaxed
                    .iter()
                    .map(|c| CandidatePoint {
                        point_id: c.point_id,
                        position: model.position(c.row).map(|v| v as f64),
                        distance: c.distance,
                    })
                    .collect(),
            });
        }
        set
    }
}

#[derive(Clone, Debug, Default)]
pub struct MatchOutcome {
    pub set: CorrespondenceSet,
    pub records: Vec<MatchRecord>,
    /// Queries that went through the refined and precise stages.
    pub processed: usize,
    pub strict_matches: usize,
    /// Mean coarse-list length over all queries.
    pub mean_coarse_len: f64,
}

/// Runs the coarse stage for every query, then refines and ranks queries in
/// ascending coarse-list length (ties by query index) until `n_early` strict
/// matches are found. Records are returned in processing order.
pub fn prioritized_match(
    model: &SubModel,
    codebook: &PqCodebook,
    queries: &[QueryFeature],
    params: &SearchParams,
) -> MatchOutcome {
    let coarse: Vec<Vec<u32>> = queries.iter().map(|q| coarse_lookup(model, q.code)).collect();
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.sort_by_key(|&i| (coarse[i].len(), i));

    let mut outcome = MatchOutcome {
        mean_coarse_len: if queries.is_empty() {
            0.0
        } else {
            coarse.iter().map(Vec::len).sum::<usize>() as f64 / queries.len() as f64
        },
        ..MatchOutcome::default()
    };
    for i in order {
        if params.n_early.is_some_and(|n| outcome.strict_matches >= n) {
            break;
        }
        outcome.processed += 1;
        if coarse[i].is_empty() {
            continue;
        }
        let refined = refine(model, queries[i].code, &coarse[i], params.refined_len);
        let rec = precise(model, codebook, i, &queries[i], &refined, params);
        if rec.strict.is_some() {
            outcome.strict_matches += 1;
        }
        outcome.records.push(rec);
    }
    outcome.set = CorrespondenceSet::from_records(model, queries, &outcome.records);
    outcome
}
