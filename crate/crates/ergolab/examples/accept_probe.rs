//! Runs a single acceptance criterion by number, for timing work.

use ergolab::harness::accept;

fn main() {
    let id: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let all: Vec<fn() -> accept::CriterionOutcome> = vec![
        accept::covering_exactness,
        accept::weighted_average_limit,
        accept::conditional_cluster_split,
        accept::maximal_tail_boundedness,
        accept::rescaled_measure_limit,
        accept::effective_matrix_oracles,
        accept::operator_identities,
        accept::operator_convergence,
        accept::displacement_crosscheck,
        accept::hydrodynamic_profile,
        accept::rerun_determinism,
    ];
    let outcome = all[(id - 1) as usize]();
    println!(
        "[{}] {}: {} ({:.1} s)\n    {}",
        outcome.id,
        outcome.label,
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.seconds,
        outcome.detail
    );
}
