//! Occupation-measure linear programming.

mod measure;
mod program;
mod simplex;

pub use measure::{
    randomized_states, solve_occupation, verify_measure, OccupationMeasure, ResidualReport,
    SUPPORT_TOL,
};
pub use program::{formulate, BlockLayout, LinearProgram, SparseRow, StackedLp};
pub use simplex::{solve_lp, solve_lp_from, LpError, LpSolution, PivotRule, SimplexOptions};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmdp::{build_model, Action};
    use crate::split::{QueueDesc, QueueKind, Subsystem};

    fn sub(rates: &[f64], mu: f64) -> Subsystem {
        Subsystem {
            id: "s".into(),
            bus: "s".into(),
            service_rate: mu,
            queues: rates
                .iter()
                .enumerate()
                .map(|(j, &r)| QueueDesc {
                    id: format!("q{j}"),
                    kind: QueueKind::Processor {
                        processor: format!("q{j}"),
                    },
                    arrival_rate: r,
                })
                .collect(),
        }
    }

    #[test]
    fn row_counts_for_single_queue_cap_one() {
        let model = build_model(&sub(&[1.0], 2.0), &[1]).unwrap();
        let stacked = formulate(&[model], 10, &[1.0]);
        // Pairs: (0, idle), (1, idle), (1, serve).
        assert_eq!(stacked.lp.var_count(), 3);
        assert_eq!(stacked.lp.eq_rows.len(), 2 + 1);
        assert_eq!(stacked.lp.le_rows.len(), 1);
        assert!(stacked.lp.is_well_formed());
    }

    #[test]
    fn zero_vector_violates_normalization() {
        let model = build_model(&sub(&[1.0, 0.5], 2.0), &[2, 2]).unwrap();
        let z = vec![0.0; model.pair_count()];
        let r = verify_measure(&model, &z, None).unwrap();
        assert_eq!(r.normalization_residual, 1.0);
        assert!(!r.is_valid());
    }

    #[test]
    fn mm1_1_closed_form_measure() {
        // Always serve when busy: pi0 = mu/(lambda+mu), pi1 = lambda/(lambda+mu).
        let (lambda, mu) = (1.0, 2.0);
        let model = build_model(&sub(&[lambda], mu), &[1]).unwrap();
        let mut z = vec![0.0; model.pair_count()];
        z[0] = mu / (lambda + mu);
        z[2] = lambda / (lambda + mu);
        let r = verify_measure(&model, &z, Some(1.0)).unwrap();
        assert!(r.max_balance_residual < 1e-12);
        assert!(r.normalization_residual < 1e-12);
        assert!((r.budget_slack.unwrap() - (1.0 - 1.0 / 3.0)).abs() < 1e-12);

        let mut perturbed = z.clone();
        perturbed[2] += 1e-3;
        let r = verify_measure(&model, &perturbed, None).unwrap();
        assert!(r.max_balance_residual >= 1e-4);
    }

    #[test]
    fn all_mass_on_empty_state_is_flagged() {
        let model = build_model(&sub(&[1.0, 1.0], 2.0), &[2, 2]).unwrap();
        let mut z = vec![0.0; model.pair_count()];
        z[0] = 1.0;
        let r = verify_measure(&model, &z, None).unwrap();
        assert!(r.max_balance_residual > 0.0);
        assert!(!r.is_valid());
    }

    #[test]
    fn dimension_mismatch() {
        let model = build_model(&sub(&[1.0], 2.0), &[1]).unwrap();
        assert!(matches!(
            verify_measure(&model, &[1.0], None),
            Err(LpError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn identical_blocks_have_identical_optima() {
        let model = build_model(&sub(&[0.8, 0.3], 1.5), &[3, 3]).unwrap();
        let opts = SimplexOptions::default();
        let alone = solve_occupation(&formulate(&[model.clone()], 6, &[1.0]), &opts).unwrap();
        let both = solve_occupation(&formulate(&[model.clone(), model.clone()], 12, &[0.5, 0.5]), &opts)
            .unwrap();
        assert!((both.objective_value - 2.0 * alone.objective_value).abs() < 1e-10);
        let per_block: Vec<f64> = both
            .z
            .iter()
            .map(|z| z.iter().zip(model.pairs()).map(|(v, p)| v * p.cost).sum())
            .collect();
        assert!((per_block[0] - per_block[1]).abs() < 1e-10);
        assert!((per_block[0] - alone.objective_value).abs() < 1e-10);
    }

    #[test]
    fn optimal_measure_is_valid_and_prefers_service() {
        let model = build_model(&sub(&[0.9, 0.4, 0.2], 2.0), &[2, 2, 2]).unwrap();
        let stacked = formulate(&[model.clone()], 30, &[1.0]);
        let m = solve_occupation(&stacked, &SimplexOptions::default()).unwrap();
        let r = verify_measure(&model, &m.z[0], Some(stacked.blocks[0].budget_rhs)).unwrap();
        assert!(r.is_valid(), "{r:?}");
        assert!(randomized_states(&model, &m.z[0], SUPPORT_TOL) <= 1);
        // Idling while work is queued never lowers the loss rate.
        let idle_mass: f64 = model
            .pairs()
            .iter()
            .zip(&m.z[0])
            .filter(|(p, _)| p.action == Action::Idle && model.occupancy(p.state) > 0)
            .map(|(_, v)| v)
            .sum();
        assert!(idle_mass < 1e-9, "{idle_mass}");
    }

    #[test]
    fn dump_lists_every_row() {
        let model = build_model(&sub(&[1.0], 2.0), &[1]).unwrap();
        let stacked = formulate(&[model], 10, &[1.0]);
        let text = stacked.lp.dump();
        assert!(text.starts_with("lp 3 3 1\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("var ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("eq ")).count(), 3);
        assert!(text.contains("z[s][1][serve:q0]"));
    }
}
