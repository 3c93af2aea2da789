//! Decision fusion over groups of CSI measurements, the data-fusion baseline,
//! and the evaluation harness with sliced accuracy reporting.
//!
//! A fusion group holds the per-measurement decisions for one identification:
//! `N_c = n_csi x n_rx` instances, windows of consecutive measurements of one
//! (device, position) across all receive chains. Ties break to the higher
//! mean probability, then the lower class index, so verdicts are
//! deterministic.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::channel::channel_tag_name;
use crate::error::{Error, Result};
use crate::net::{argmax, Decision, DeepCrf};
use crate::signal::{CsiRecord, Subcarriers52};

#[derive(Debug, Clone)]
pub struct FusionGroup {
    pub decisions: Vec<Decision>,
}

impl FusionGroup {
    pub fn new(decisions: Vec<Decision>) -> Result<Self> {
        if decisions.is_empty() {
            return Err(Error::InvalidInput("fusion group is empty".into()));
        }
        let m = decisions[0].probs.len();
        if decisions.iter().any(|d| d.probs.len() != m) {
            return Err(Error::InvalidInput(
                "fusion group mixes class counts".into(),
            ));
        }
        Ok(FusionGroup { decisions })
    }

    fn num_classes(&self) -> usize {
        self.decisions[0].probs.len()
    }

    fn mean_probs(&self) -> Vec<f64> {
        let m = self.num_classes();
        let mut mean = vec![0.0; m];
        for d in &self.decisions {
            for (s, p) in mean.iter_mut().zip(&d.probs) {
                *s += p;
            }
        }
        for s in mean.iter_mut() {
            *s /= self.decisions.len() as f64;
        }
        mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMethod {
    Mv,
    Ap,
    Bc,
    Data,
}

impl FusionMethod {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mv" => Ok(FusionMethod::Mv),
            "ap" => Ok(FusionMethod::Ap),
            "bc" => Ok(FusionMethod::Bc),
            "data" => Ok(FusionMethod::Data),
            other => Err(Error::Config(format!("unknown fusion method {:?}", other))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionMethod::Mv => "mv",
            FusionMethod::Ap => "ap",
            FusionMethod::Bc => "bc",
            FusionMethod::Data => "data",
        }
    }
}

/// Average probabilities: argmax of the summed (equivalently mean) member
/// probability vectors.
pub fn fuse_ap(group: &FusionGroup) -> Result<Decision> {
    let mean = group.mean_probs();
    let label = argmax(&mean);
    Ok(Decision { probs: mean, label })
}

fn break_tie(candidates: &[usize], mean: &[f64]) -> usize {
    let mut best = candidates[0];
    for &c in candidates {
        if mean[c] > mean[best] || (mean[c] == mean[best] && c < best) {
            best = c;
        }
    }
    best
}

/// Majority voting over member argmax labels; ties go to the higher mean
/// probability, then the lower class index.
pub fn fuse_mv(group: &FusionGroup) -> Result<Decision> {
    let m = group.num_classes();
    let mut votes = vec![0usize; m];
    for d in &group.decisions {
        votes[d.label] += 1;
    }
    let top = *votes.iter().max().expect("non-empty");
    let tied: Vec<usize> = (0..m).filter(|&c| votes[c] == top).collect();
    let mean = group.mean_probs();
    let label = break_tie(&tied, &mean);
    Ok(Decision { probs: mean, label })
}

/// Borda count: each member ranks all classes by probability (rank 0 best,
/// within-member probability ties resolved toward the lower class index);
/// rank r contributes `M - 1 - r` points.
pub fn fuse_bc(group: &FusionGroup) -> Result<Decision> {
    let m = group.num_classes();
    let mut points = vec![0u64; m];
    for d in &group.decisions {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            d.probs[b]
                .partial_cmp(&d.probs[a])
                .expect("finite probabilities")
                .then(a.cmp(&b))
        });
        for (rank, &class) in order.iter().enumerate() {
            points[class] += (m - 1 - rank) as u64;
        }
    }
    let top = *points.iter().max().expect("non-empty");
    let tied: Vec<usize> = (0..m).filter(|&c| points[c] == top).collect();
    let mean = group.mean_probs();
    let label = break_tie(&tied, &mean);
    Ok(Decision { probs: mean, label })
}

/// Data fusion baseline: average the raw CSI vectors, then classify once.
pub fn fuse_data(records: &[&CsiRecord], net: &DeepCrf) -> Result<Decision> {
    if records.is_empty() {
        return Err(Error::InvalidInput("fuse_data: no records".into()));
    }
    let mut acc = [Complex64::new(0.0, 0.0); 52];
    for rec in records {
        for (a, v) in acc.iter_mut().zip(rec.csi.iter()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= records.len() as f64;
    }
    let mean_record = CsiRecord {
        csi: Subcarriers52::new(acc)?,
        ..(*records[0]).clone()
    };
    Ok(net.decide_records(&[&mean_record])?.remove(0))
}

pub fn fuse(group: &FusionGroup, method: FusionMethod) -> Result<Decision> {
    match method {
        FusionMethod::Mv => fuse_mv(group),
        FusionMethod::Ap => fuse_ap(group),
        FusionMethod::Bc => fuse_bc(group),
        FusionMethod::Data => Err(Error::InvalidInput(
            "data fusion operates on raw records, not decisions".into(),
        )),
    }
}

/// Accuracy slicing keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Snr,
    ChannelTag,
    Position,
}

impl GroupBy {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "snr" => Ok(GroupBy::Snr),
            "channel" => Ok(GroupBy::ChannelTag),
            "position" => Ok(GroupBy::Position),
            other => Err(Error::Config(format!("unknown group-by key {:?}", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub device_id: u16,
    pub correct: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceRow {
    pub key: String,
    pub groups: u64,
    pub correct: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub fused_groups: u64,
    pub correct_groups: u64,
    pub per_class: Vec<ClassAccuracy>,
    /// confusion[true_class][predicted_class], over fused verdicts.
    pub confusion: Vec<Vec<u64>>,
    pub slices: Vec<SliceRow>,
    pub dropped_groups: u64,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.fused_groups == 0 {
            return 0.0;
        }
        self.correct_groups as f64 / self.fused_groups as f64
    }

    pub fn min_class_accuracy(&self) -> f64 {
        self.per_class
            .iter()
            .filter(|c| c.total > 0)
            .map(|c| c.correct as f64 / c.total as f64)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_class_accuracy(&self) -> f64 {
        self.per_class
            .iter()
            .filter(|c| c.total > 0)
            .map(|c| c.correct as f64 / c.total as f64)
            .fold(0.0, f64::max)
    }

    /// Structured-text report: summary, per-class rows, slice rows, and the
    /// confusion matrix as a dense integer grid.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "groups\t{}\ncorrect\t{}\naccuracy\t{:.6}\ndropped_groups\t{}\n",
            self.fused_groups,
            self.correct_groups,
            self.accuracy(),
            self.dropped_groups
        );
        s.push_str("class\tdevice\tcorrect\ttotal\taccuracy\n");
        for (i, c) in self.per_class.iter().enumerate() {
            let acc = if c.total > 0 {
                c.correct as f64 / c.total as f64
            } else {
                f64::NAN
            };
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.6}\n",
                i, c.device_id, c.correct, c.total, acc
            ));
        }
        if !self.slices.is_empty() {
            s.push_str("slice\tgroups\tcorrect\taccuracy\n");
            for row in &self.slices {
                s.push_str(&format!(
                    "{}\t{}\t{}\t{:.6}\n",
                    row.key,
                    row.groups,
                    row.correct,
                    row.correct as f64 / row.groups as f64
                ));
            }
        }
        s.push_str("confusion\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }

    /// CSV rows (slice view) for plotting pipelines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("slice,groups,correct,accuracy\n");
        s.push_str(&format!(
            "overall,{},{},{:.6}\n",
            self.fused_groups,
            self.correct_groups,
            self.accuracy()
        ));
        for row in &self.slices {
            s.push_str(&format!(
                "{},{},{},{:.6}\n",
                row.key,
                row.groups,
                row.correct,
                row.correct as f64 / row.groups as f64
            ));
        }
        s
    }
}

/// One identification window: indices into the record list plus its labels.
struct Window {
    record_indices: Vec<usize>,
    true_class: usize,
    slice_key: Option<String>,
}

fn slice_key_of(rec: &CsiRecord, group_by: &[GroupBy]) -> Option<String> {
    if group_by.is_empty() {
        return None;
    }
    let mut parts = Vec::with_capacity(group_by.len());
    for key in group_by {
        parts.push(match key {
            GroupBy::Snr => match rec.snr_db {
                Some(v) => format!("snr={}", v),
                None => "snr=unknown".to_string(),
            },
            GroupBy::ChannelTag => format!("channel={}", channel_tag_name(rec.channel_tag)),
            GroupBy::Position => format!("position={}", rec.position_id),
        });
    }
    Some(parts.join(","))
}

/// Build identification windows: per (device, position), records are split by
/// receive chain, and each window takes `n_csi` consecutive measurements from
/// every chain `0..n_rx`. Groups without enough records are dropped (counted).
fn build_windows(
    records: &[CsiRecord],
    classes: &[u16],
    n_csi: usize,
    n_rx: usize,
    group_by: &[GroupBy],
) -> Result<(Vec<Window>, u64)> {
    if n_csi < 1 || n_rx < 1 {
        return Err(Error::InvalidInput("n_csi and n_rx must be >= 1".into()));
    }
    let mut by_group: BTreeMap<(u16, u8), Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        by_group
            .entry((rec.device_id, rec.position_id))
            .or_default()
            .push(i);
    }
    let mut windows = Vec::new();
    let mut dropped = 0u64;
    for ((device, _pos), members) in by_group {
        let true_class = match classes.binary_search(&device) {
            Ok(c) => c,
            Err(_) => {
                return Err(Error::InvalidInput(format!(
                    "device {} not among the classifier's classes",
                    device
                )))
            }
        };
        let mut chains: Vec<Vec<usize>> = vec![Vec::new(); n_rx];
        let mut usable = true;
        for &i in &members {
            let rx = records[i].rx_index as usize;
            if rx < n_rx {
                chains[rx].push(i);
            }
        }
        let window_count = chains.iter().map(|c| c.len() / n_csi).min().unwrap_or(0);
        if chains.iter().any(|c| c.is_empty()) {
            usable = false;
        }
        if !usable || window_count == 0 {
            dropped += 1;
            continue;
        }
        for w in 0..window_count {
            let mut record_indices = Vec::with_capacity(n_csi * n_rx);
            for chain in &chains {
                record_indices.extend_from_slice(&chain[w * n_csi..(w + 1) * n_csi]);
            }
            let slice_key = slice_key_of(&records[record_indices[0]], group_by);
            windows.push(Window {
                record_indices,
                true_class,
                slice_key,
            });
        }
    }
    Ok((windows, dropped))
}

/// Shared tabulation once each window has a fused verdict.
fn tabulate(
    windows: &[Window],
    verdicts: &[usize],
    classes: &[u16],
    dropped: u64,
) -> EvalReport {
    let m = classes.len();
    let mut report = EvalReport {
        fused_groups: 0,
        correct_groups: 0,
        per_class: classes
            .iter()
            .map(|&device_id| ClassAccuracy {
                device_id,
                correct: 0,
                total: 0,
            })
            .collect(),
        confusion: vec![vec![0; m]; m],
        slices: Vec::new(),
        dropped_groups: dropped,
    };
    let mut slice_map: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for (window, &pred) in windows.iter().zip(verdicts) {
        report.fused_groups += 1;
        report.per_class[window.true_class].total += 1;
        report.confusion[window.true_class][pred] += 1;
        let correct = pred == window.true_class;
        if correct {
            report.correct_groups += 1;
            report.per_class[window.true_class].correct += 1;
        }
        if let Some(key) = &window.slice_key {
            let slot = slice_map.entry(key.clone()).or_insert((0, 0));
            slot.0 += 1;
            if correct {
                slot.1 += 1;
            }
        }
    }
    report.slices = slice_map
        .into_iter()
        .map(|(key, (groups, correct))| SliceRow {
            key,
            groups,
            correct,
        })
        .collect();
    report
}

/// Evaluate decision or data fusion on a record set.
///
/// `classes` is the classifier's class-to-device mapping (sorted device ids,
/// as produced by training).
pub fn evaluate(
    net: &DeepCrf,
    records: &[CsiRecord],
    classes: &[u16],
    method: FusionMethod,
    n_csi: usize,
    n_rx: usize,
    group_by: &[GroupBy],
) -> Result<EvalReport> {
    let (windows, dropped) = build_windows(records, classes, n_csi, n_rx, group_by)?;
    let mut verdicts = Vec::with_capacity(windows.len());
    if method == FusionMethod::Data {
        for window in &windows {
            let refs: Vec<&CsiRecord> = window.record_indices.iter().map(|&i| &records[i]).collect();
            verdicts.push(fuse_data(&refs, net)?.label);
        }
    } else {
        // One batched inference pass over every record used by any window.
        let mut used: Vec<usize> = windows.iter().flat_map(|w| w.record_indices.clone()).collect();
        used.sort_unstable();
        used.dedup();
        let refs: Vec<&CsiRecord> = used.iter().map(|&i| &records[i]).collect();
        let decisions = net.decide_records(&refs)?;
        let lookup: BTreeMap<usize, usize> = used.iter().copied().zip(0..).collect();
        for window in &windows {
            let members: Vec<Decision> = window
                .record_indices
                .iter()
                .map(|i| decisions[lookup[i]].clone())
                .collect();
            verdicts.push(fuse(&FusionGroup::new(members)?, method)?.label);
        }
    }
    Ok(tabulate(&windows, &verdicts, classes, dropped))
}

/// Evaluation over precomputed per-record decisions (used by tests and by
/// callers that already ran inference).
pub fn evaluate_decisions(
    records: &[CsiRecord],
    decisions: &[Decision],
    classes: &[u16],
    method: FusionMethod,
    n_csi: usize,
    n_rx: usize,
    group_by: &[GroupBy],
) -> Result<EvalReport> {
    if records.len() != decisions.len() {
        return Err(Error::InvalidInput(format!(
            "{} records but {} decisions",
            records.len(),
            decisions.len()
        )));
    }
    if method == FusionMethod::Data {
        return Err(Error::InvalidInput(
            "data fusion needs the model; use evaluate()".into(),
        ));
    }
    let (windows, dropped) = build_windows(records, classes, n_csi, n_rx, group_by)?;
    let mut verdicts = Vec::with_capacity(windows.len());
    for window in &windows {
        let members: Vec<Decision> = window
            .record_indices
            .iter()
            .map(|&i| decisions[i].clone())
            .collect();
        verdicts.push(fuse(&FusionGroup::new(members)?, method)?.label);
    }
    Ok(tabulate(&windows, &verdicts, classes, dropped))
}

/// Min-max normalized feature rows for heatmap export. Constant rows map to
/// 0.5 by convention. Returns `(row id, normalized features)` pairs.
pub fn export_feature_heatmap(
    net: &DeepCrf,
    records: &[CsiRecord],
) -> Result<Vec<(String, Vec<f64>)>> {
    let refs: Vec<&CsiRecord> = records.iter().collect();
    let embeddings = net.embed_records(&refs)?;
    Ok(embeddings
        .iter()
        .zip(records)
        .enumerate()
        .map(|(i, (emb, rec))| {
            let lo = emb.r.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = emb.r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let row = if hi > lo {
                emb.r.iter().map(|v| (v - lo) / (hi - lo)).collect()
            } else {
                vec![0.5; emb.r.len()]
            };
            (
                format!(
                    "dev{}/pos{}/rx{}/{}",
                    rec.device_id, rec.position_id, rec.rx_index, i
                ),
                row,
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decision(probs: Vec<f64>) -> Decision {
        Decision::from_probs(probs).unwrap()
    }

    fn random_group(rng: &mut ChaCha8Rng, members: usize, classes: usize) -> FusionGroup {
        let decisions = (0..members)
            .map(|_| {
                let mut probs: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-6).collect();
                let sum: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= sum);
                decision(probs)
            })
            .collect();
        FusionGroup::new(decisions).unwrap()
    }

    #[test]
    fn ap_hand_example() {
        let group = FusionGroup::new(vec![
            decision(vec![0.6, 0.4]),
            decision(vec![0.3, 0.7]),
        ])
        .unwrap();
        let fused = fuse_ap(&group).unwrap();
        assert!((fused.probs[0] - 0.45).abs() < 1e-12);
        assert!((fused.probs[1] - 0.55).abs() < 1e-12);
        assert_eq!(fused.label, 1);
    }

    #[test]
    fn all_rules_are_identity_at_single_member() {
        let d = decision(vec![0.2, 0.5, 0.3]);
        let group = FusionGroup::new(vec![d.clone()]).unwrap();
        for method in [FusionMethod::Mv, FusionMethod::Ap, FusionMethod::Bc] {
            let fused = fuse(&group, method).unwrap();
            assert_eq!(fused.label, d.label, "{:?}", method);
            assert_eq!(fused.probs, d.probs);
        }
    }

    #[test]
    fn mv_hand_examples() {
        let group = FusionGroup::new(vec![
            decision(one_hot(3, 8)),
            decision(one_hot(3, 8)),
            decision(one_hot(7, 8)),
        ])
        .unwrap();
        assert_eq!(fuse_mv(&group).unwrap().label, 3);

        // Tie between 3 and 7; higher mean probability wins.
        let mut strong7 = vec![0.0; 8];
        strong7[7] = 0.9;
        strong7[3] = 0.1;
        let mut weak3 = vec![0.0; 8];
        weak3[3] = 0.5;
        weak3[7] = 0.5 - 1e-9;
        weak3[0] = 1e-9;
        let group = FusionGroup::new(vec![decision(strong7), decision(weak3)]).unwrap();
        assert_eq!(fuse_mv(&group).unwrap().label, 7);
    }

    #[test]
    fn bc_hand_count() {
        // Voter 1: A > B > C; voter 2: B > C > A.
        // Points: A = 2+0, B = 1+2, C = 0+1 -> B wins.
        let group = FusionGroup::new(vec![
            decision(vec![0.5, 0.3, 0.2]),
            decision(vec![0.1, 0.6, 0.3]),
        ])
        .unwrap();
        assert_eq!(fuse_bc(&group).unwrap().label, 1);
    }

    #[test]
    fn rules_agree_with_brute_force_on_random_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let members = rng.random_range(1..9);
            let classes = rng.random_range(2..20);
            let group = random_group(&mut rng, members, classes);

            // AP oracle: argmax of column sums.
            let mut sums = vec![0.0; classes];
            for d in &group.decisions {
                for (s, p) in sums.iter_mut().zip(&d.probs) {
                    *s += p;
                }
            }
            let ap_expect = argmax(&sums);
            assert_eq!(fuse_ap(&group).unwrap().label, ap_expect);

            // MV oracle: plurality with the documented tie rule.
            let mut votes = vec![0usize; classes];
            for d in &group.decisions {
                votes[argmax(&d.probs)] += 1;
            }
            let top = *votes.iter().max().unwrap();
            let mv_got = fuse_mv(&group).unwrap().label;
            assert_eq!(votes[mv_got], top);
            let mean = group.mean_probs();
            for c in 0..classes {
                if votes[c] == top {
                    assert!(mean[mv_got] >= mean[c] || mv_got <= c);
                }
            }

            // BC oracle: independent rank-sum computation.
            let mut points = vec![0u64; classes];
            for d in &group.decisions {
                // rank of class c = number of classes strictly better, with
                // index as tiebreak.
                for c in 0..classes {
                    let better = (0..classes)
                        .filter(|&o| {
                            o != c
                                && (d.probs[o] > d.probs[c]
                                    || (d.probs[o] == d.probs[c] && o < c))
                        })
                        .count();
                    points[c] += (classes - 1 - better) as u64;
                }
            }
            let bc_got = fuse_bc(&group).unwrap().label;
            let top = *points.iter().max().unwrap();
            assert_eq!(points[bc_got], top);
        }
    }

    #[test]
    fn fused_probs_stay_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let group = random_group(&mut rng, 7, 19);
        let fused = fuse_ap(&group).unwrap();
        assert!(fused.probs.iter().all(|p| *p >= 0.0));
        assert!((fused.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn permutation_of_members_does_not_change_verdicts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let group = random_group(&mut rng, 6, 7);
        let mut reversed = group.decisions.clone();
        reversed.reverse();
        let permuted = FusionGroup::new(reversed).unwrap();
        for method in [FusionMethod::Mv, FusionMethod::Ap, FusionMethod::Bc] {
            assert_eq!(
                fuse(&group, method).unwrap().label,
                fuse(&permuted, method).unwrap().label
            );
        }
    }

    fn one_hot(class: usize, m: usize) -> Vec<f64> {
        let mut v = vec![0.0; m];
        v[class] = 1.0;
        v
    }

    fn synthetic_records(devices: u16, per_device: usize) -> Vec<CsiRecord> {
        let mut out = Vec::new();
        for dev in 0..devices {
            for i in 0..per_device {
                out.push(CsiRecord {
                    csi: Subcarriers52::ones(),
                    device_id: dev,
                    position_id: 0,
                    rx_index: 0,
                    snr_db: Some(if i % 2 == 0 { 10.0 } else { 30.0 }),
                    channel_tag: 0,
                });
            }
        }
        out
    }

    #[test]
    fn perfect_decisions_give_accuracy_one() {
        let records = synthetic_records(4, 8);
        let classes = vec![0u16, 1, 2, 3];
        let decisions: Vec<Decision> = records
            .iter()
            .map(|r| decision(one_hot(r.device_id as usize, 4)))
            .collect();
        let report = evaluate_decisions(
            &records,
            &decisions,
            &classes,
            FusionMethod::Ap,
            4,
            1,
            &[GroupBy::Snr],
        )
        .unwrap();
        assert_eq!(report.accuracy(), 1.0);
        assert_eq!(report.fused_groups, 8); // 4 devices x 2 windows
        assert_eq!(report.min_class_accuracy(), 1.0);
        // Confusion rows sum to class support.
        for (row, class) in report.confusion.iter().zip(&report.per_class) {
            assert_eq!(row.iter().sum::<u64>(), class.total);
        }
        assert!(!report.slices.is_empty());
    }

    #[test]
    fn chance_level_for_uniform_random_decisions() {
        let records = synthetic_records(19, 40);
        let classes: Vec<u16> = (0..19).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let decisions: Vec<Decision> = records
            .iter()
            .map(|_| {
                // A random one-hot vote: uniform-random classifier.
                decision(one_hot(rng.random_range(0..19), 19))
            })
            .collect();
        let report = evaluate_decisions(
            &records,
            &decisions,
            &classes,
            FusionMethod::Mv,
            1,
            1,
            &[],
        )
        .unwrap();
        let acc = report.accuracy();
        let chance = 1.0 / 19.0;
        // 760 windows: allow a generous confidence band around chance.
        assert!(
            (acc - chance).abs() < 0.03,
            "accuracy {} vs chance {}",
            acc,
            chance
        );
    }

    #[test]
    fn short_groups_are_dropped_and_counted() {
        let mut records = synthetic_records(2, 8);
        // Device 2 has only 3 records; with n_csi = 4 its group is dropped.
        for i in 0..3 {
            records.push(CsiRecord {
                csi: Subcarriers52::ones(),
                device_id: 2,
                position_id: 0,
                rx_index: 0,
                snr_db: None,
                channel_tag: 0,
            });
            let _ = i;
        }
        let classes = vec![0u16, 1, 2];
        let decisions: Vec<Decision> = records
            .iter()
            .map(|r| decision(one_hot(r.device_id as usize, 3)))
            .collect();
        let report = evaluate_decisions(
            &records,
            &decisions,
            &classes,
            FusionMethod::Ap,
            4,
            1,
            &[],
        )
        .unwrap();
        assert_eq!(report.dropped_groups, 1);
        assert_eq!(report.fused_groups, 4);
    }

    #[test]
    fn rx_chains_are_required_and_interleaved() {
        // 2 measurements x 2 chains per device.
        let mut records = Vec::new();
        for dev in 0..2u16 {
            for m in 0..2 {
                for rx in 0..2u8 {
                    let mut r = synthetic_records(1, 1).remove(0);
                    r.device_id = dev;
                    r.rx_index = rx;
                    r.position_id = m;
                    records.push(r);
                }
            }
        }
        let classes = vec![0u16, 1];
        let decisions: Vec<Decision> = records
            .iter()
            .map(|r| decision(one_hot(r.device_id as usize, 2)))
            .collect();
        // n_csi=1, n_rx=2: each (device, position) gives one window of 2.
        let report =
            evaluate_decisions(&records, &decisions, &classes, FusionMethod::Ap, 1, 2, &[])
                .unwrap();
        assert_eq!(report.fused_groups, 4);
        assert_eq!(report.accuracy(), 1.0);
    }
}
