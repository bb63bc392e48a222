//! Magnitude-based dendrite pruning. Removing a dendrite removes all of its
//! `L` input synapses; output weights are always re-solved afterwards.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result, SkimError};
use crate::network::SkimNetwork;
use crate::rng::substream;
use crate::solver::residual_norm;
use crate::train::{fit, SolveOptions, TrainingSet};

/// Dendrite indices by descending column L1 norm of `w`; ties keep the lower
/// index first.
pub fn rank_dendrites(w: &DMatrix<f64>) -> Vec<usize> {
    let mass = column_mass(w);
    let mut order: Vec<usize> = (0..w.ncols()).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]));
    order
}

fn column_mass(w: &DMatrix<f64>) -> Vec<f64> {
    w.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum())
        .collect()
}

/// `c[m-1]` is the share of total weight magnitude held by the `m` largest
/// dendrites.
pub fn cumulative_weight_fraction(w: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut mass = column_mass(w);
    let total: f64 = mass.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(SkimError::Degenerate("output weights are all zero".into()));
    }
    mass.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut c: Vec<f64> = mass
        .iter()
        .map(|m| {
            acc += m;
            (acc / total).min(1.0)
        })
        .collect();
    if let Some(last) = c.last_mut() {
        *last = 1.0;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRound {
    pub round: usize,
    pub residual_before: f64,
    pub residual_after: f64,
    /// Whether the replacement was kept.
    pub accepted: bool,
    /// Dendrite slots redrawn in this round.
    pub replaced: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub strategy: String,
    /// Two-pass: original indices that survived. Iterative: slots never
    /// replaced by an accepted round.
    pub kept_indices: Vec<usize>,
    pub discarded_indices: Vec<usize>,
    /// Cumulative weight fraction of the input network's solution.
    pub cumulative_fraction: Vec<f64>,
    /// Training residual `||W A - Y||_F` before and after.
    pub residual_before: f64,
    pub residual_after: f64,
    pub rounds: Vec<PruneRound>,
}

fn trained_weights(net: &SkimNetwork) -> Result<&DMatrix<f64>> {
    net.output_weights().ok_or_else(|| {
        SkimError::State("pruning needs a trained network (no output weights)".into())
    })
}

fn residual_of(net: &SkimNetwork, data: &TrainingSet) -> Result<f64> {
    let w = trained_weights(net)?;
    let a = net.collect_activations(&data.inputs)?;
    residual_norm(w, a.values(), data.stacked_targets()?.values())
}

/// Keeps exactly the listed dendrites (in ascending order) and re-solves the
/// output weights on `data`.
pub fn retain_dendrites(
    net: &SkimNetwork,
    data: &TrainingSet,
    keep: &[usize],
    opts: &SolveOptions,
) -> Result<SkimNetwork> {
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != keep.len() {
        return Err(validation("retained dendrite list has duplicates"));
    }
    let mut pruned = net.with_dendrites(&sorted)?;
    fit(&mut pruned, data, opts)?;
    Ok(pruned)
}

/// Keeps the `keep` highest-ranked dendrites of a trained network and
/// re-solves its output weights.
pub fn prune_two_pass(
    net: &SkimNetwork,
    data: &TrainingSet,
    keep: usize,
    opts: &SolveOptions,
) -> Result<(SkimNetwork, PruneReport)> {
    let m = net.num_dendrites();
    if keep < 1 || keep >= m {
        return Err(validation(format!(
            "keep must be in [1, {}), got {keep}",
            m
        )));
    }
    let w = trained_weights(net)?;
    let order = rank_dendrites(w);
    let cumulative = cumulative_weight_fraction(w)?;
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    let mut discarded = order[keep..].to_vec();
    discarded.sort_unstable();
    let residual_before = residual_of(net, data)?;
    let pruned = retain_dendrites(net, data, &kept, opts)?;
    let residual_after = residual_of(&pruned, data)?;
    let report = PruneReport {
        strategy: "two_pass".into(),
        kept_indices: kept,
        discarded_indices: discarded,
        cumulative_fraction: cumulative,
        residual_before,
        residual_after,
        rounds: Vec::new(),
    };
    Ok((pruned, report))
}

fn fit_residual(net: &mut SkimNetwork, data: &TrainingSet, opts: &SolveOptions) -> Result<f64> {
    let a = fit(net, data, opts)?;
    residual_norm(
        trained_weights(net)?,
        a.values(),
        data.stacked_targets()?.values(),
    )
}

/// Repeatedly trains, discards the weakest `discard_fraction` of dendrites and
/// replaces them with freshly drawn ones. Replacements come from a stream
/// derived from `seed`, so runs are reproducible. With
/// `accept_only_improvements`, a round whose re-solved training residual is
/// worse than the current one is rolled back (its draws are still consumed).
pub fn prune_iterative(
    net: &SkimNetwork,
    data: &TrainingSet,
    discard_fraction: f64,
    rounds: usize,
    seed: u64,
    accept_only_improvements: bool,
    opts: &SolveOptions,
) -> Result<(SkimNetwork, PruneReport)> {
    if !(discard_fraction > 0.0 && discard_fraction < 1.0) {
        return Err(validation(format!(
            "discard_fraction must be in (0, 1), got {discard_fraction}"
        )));
    }
    if rounds == 0 {
        return Err(validation("rounds must be >= 1"));
    }
    let m = net.num_dendrites();
    if m < 2 {
        return Err(validation("iterative pruning needs at least 2 dendrites"));
    }
    let count = ((discard_fraction * m as f64).round() as usize).clamp(1, m - 1);
    let mut rng = substream(seed, "prune_iterative");

    let mut current = net.clone();
    let residual_before = fit_residual(&mut current, data, opts)?;
    let cumulative = cumulative_weight_fraction(trained_weights(&current)?)?;
    let mut ever_replaced = vec![false; m];
    let mut trace = Vec::with_capacity(rounds);
    let mut residual = residual_before;
    for round in 0..rounds {
        let order = rank_dendrites(trained_weights(&current)?);
        let mut replaced = order[m - count..].to_vec();
        replaced.sort_unstable();
        let mut next = current.with_redrawn_dendrites(&replaced, &mut rng)?;
        let after = fit_residual(&mut next, data, opts)?;
        let accepted = !accept_only_improvements || after <= residual;
        trace.push(PruneRound {
            round,
            residual_before: residual,
            residual_after: after,
            accepted,
            replaced: replaced.clone(),
        });
        if accepted {
            for &j in &replaced {
                ever_replaced[j] = true;
            }
            residual = after;
            current = next;
        }
    }
    let (discarded, kept): (Vec<usize>, Vec<usize>) = (0..m).partition(|&j| ever_replaced[j]);
    let report = PruneReport {
        strategy: "iterative".into(),
        kept_indices: kept,
        discarded_indices: discarded,
        cumulative_fraction: cumulative,
        residual_before,
        residual_after: residual,
        rounds: trace,
    };
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use crate::network::NetworkParams;
    use crate::patterns::{gen_embedded_task, EmbeddedTaskParams};
    use crate::solver::solve_batch;
    use proptest::prelude::*;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_dendrites(&row(&[0.1, -0.9, 0.5])), vec![1, 2, 0]);
        assert_eq!(rank_dendrites(&row(&[0.3; 5])), vec![0, 1, 2, 3, 4]);
        assert_eq!(
            rank_dendrites(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])),
            vec![0, 1]
        );
    }

    #[test]
    fn cumulative_examples() {
        let c = cumulative_weight_fraction(&row(&[0.7; 80])).unwrap();
        assert_eq!(c.len(), 80);
        assert!((c[19] - 0.25).abs() < 1e-15);
        assert_eq!(c[79], 1.0);
        let mut single = vec![0.0; 10];
        single[4] = -2.0;
        assert_eq!(cumulative_weight_fraction(&row(&single)).unwrap()[0], 1.0);
        assert!(matches!(
            cumulative_weight_fraction(&row(&[0.0; 4])),
            Err(SkimError::Degenerate(_))
        ));
    }

    fn small_task(seed: u64, m: usize) -> (SkimNetwork, TrainingSet) {
        let params = EmbeddedTaskParams {
            stream_len: 6000,
            num_embeddings: 12,
            seed,
            ..Default::default()
        };
        let (raster, target, _) = gen_embedded_task(&params).unwrap();
        let fam = KernelFamily::alpha_for_span(params.pattern_len as f64);
        let net = SkimNetwork::new(NetworkParams::new(4, m, 1, fam).seed(seed)).unwrap();
        (net, TrainingSet::single(raster, target).unwrap())
    }

    #[test]
    fn two_pass_resolves_and_partitions() {
        let (mut net, data) = small_task(5, 30);
        let opts = SolveOptions::default();
        assert!(matches!(
            prune_two_pass(&net, &data, 10, &opts),
            Err(SkimError::State(_))
        ));
        fit(&mut net, &data, &opts).unwrap();
        assert!(prune_two_pass(&net, &data, 30, &opts).is_err());
        assert!(prune_two_pass(&net, &data, 0, &opts).is_err());

        let (pruned, report) = prune_two_pass(&net, &data, 12, &opts).unwrap();
        assert_eq!(pruned.num_dendrites(), 12);
        let mut all = report.kept_indices.clone();
        all.extend(&report.discarded_indices);
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        let top: Vec<usize> = rank_dendrites(net.output_weights().unwrap())[..12].to_vec();
        assert!(top.iter().all(|j| report.kept_indices.contains(j)));

        let a = pruned.collect_activations(&data.inputs).unwrap();
        let resolved = solve_batch(a.values(), data.targets[0].values(), None).unwrap();
        assert_eq!(pruned.output_weights().unwrap(), &resolved);
        // Fewer regressors cannot fit better.
        assert!(report.residual_after >= report.residual_before - 1e-9);

        let (one_less, _) = prune_two_pass(&net, &data, 29, &opts).unwrap();
        assert_eq!(one_less.num_dendrites(), 29);
    }

    #[test]
    fn retaining_everything_is_a_no_op() {
        let (mut net, data) = small_task(8, 20);
        let opts = SolveOptions::default();
        fit(&mut net, &data, &opts).unwrap();
        let same = retain_dendrites(&net, &data, &(0..20).collect::<Vec<_>>(), &opts).unwrap();
        assert_eq!(same, net);
        assert_eq!(
            residual_of(&same, &data).unwrap(),
            residual_of(&net, &data).unwrap()
        );
    }

    #[test]
    fn iterative_validation_and_determinism() {
        let (net, data) = small_task(2, 20);
        let opts = SolveOptions::default();
        assert!(prune_iterative(&net, &data, 0.5, 0, 1, true, &opts).is_err());
        assert!(prune_iterative(&net, &data, 0.0, 1, 1, true, &opts).is_err());
        assert!(prune_iterative(&net, &data, 1.0, 1, 1, true, &opts).is_err());

        let (a, ra) = prune_iterative(&net, &data, 0.5, 3, 9, true, &opts).unwrap();
        let (b, rb) = prune_iterative(&net, &data, 0.5, 3, 9, true, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.rounds.len(), 3);
        assert!(ra.rounds.iter().all(|r| r.replaced.len() == 10));
        assert!(ra
            .rounds
            .windows(2)
            .all(|w| w[1].residual_before <= w[0].residual_before));
        assert!(ra.residual_after <= ra.residual_before);
        let mut all = ra.kept_indices.clone();
        all.extend(&ra.discarded_indices);
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn iterative_pool_of_100_replaces_50() {
        let (net, data) = small_task(4, 100);
        let (_, report) =
            prune_iterative(&net, &data, 0.5, 1, 4, false, &SolveOptions::default()).unwrap();
        assert_eq!(report.rounds[0].replaced.len(), 50);
        assert_eq!(report.discarded_indices.len(), 50);
    }

    #[test]
    fn report_serializes() {
        let (mut net, data) = small_task(1, 10);
        fit(&mut net, &data, &SolveOptions::default()).unwrap();
        let (_, report) = prune_two_pass(&net, &data, 5, &SolveOptions::default()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: PruneReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    proptest! {
        #[test]
        fn cumulative_is_monotone_and_ends_at_one(v in proptest::collection::vec(-5.0f64..5.0, 1..60)) {
            prop_assume!(v.iter().any(|x| *x != 0.0));
            let c = cumulative_weight_fraction(&row(&v)).unwrap();
            prop_assert!(c.windows(2).all(|p| p[0] <= p[1]));
            prop_assert_eq!(*c.last().unwrap(), 1.0);
            let order = rank_dendrites(&row(&v));
            let mut sorted = order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..v.len()).collect::<Vec<_>>());
            prop_assert!(order.windows(2).all(|p| v[p[0]].abs() > v[p[1]].abs() || (v[p[0]].abs() == v[p[1]].abs() && p[0] < p[1])));
        }
    }
}
