//! End-to-end helpers over concrete `f64` trajectories.

use crate::factors::LoopClosureMeasurement;
use crate::frontend::{detect_crossings, make_loop_closure, ClosureParams, Crossing, FrontendError, IcpReport, RegisteredCloud};
use crate::solver::{solve, states_from_poses, FactorGraph, Hyperparameters, SolveReport, SolverConfig, SolverError};
use crate::trajectory::Trajectory;
use crate::wnoa::Matrix12;

/// Smooths `prior` with the given loop closures. The returned trajectory
/// carries the estimated velocities.
pub fn smooth(
    prior: &Trajectory,
    closures: &[LoopClosureMeasurement<f64>],
    hyper: &Hyperparameters<f64>,
    prior_cov: Matrix12<f64>,
    config: &SolverConfig<f64>,
) -> Result<(Trajectory, SolveReport<f64>), SolverError> {
    let nodes = states_from_poses(&prior.times, &prior.poses)?;
    let mut graph = FactorGraph::from_initial(prior.times.clone(), nodes, hyper, prior_cov)?;
    graph.loop_closures = closures.to_vec();
    graph.validate()?;
    let (post, report) = solve(&graph, config)?;
    let mut out = Trajectory { times: prior.times.clone(), poses: post.poses(), velocities: None };
    out.velocities = Some(post.nodes.iter().map(|n| n.velocity).collect());
    Ok((out, report))
}

/// Outcome of running the front end over every detected crossing.
#[derive(Clone, Debug, Default)]
pub struct ClosureRun {
    pub crossings: Vec<Crossing>,
    pub closures: Vec<(LoopClosureMeasurement<f64>, IcpReport)>,
    pub dropped: Vec<(Crossing, FrontendError)>,
}

pub fn close_loops(prior: &Trajectory, cloud: &RegisteredCloud, params: &ClosureParams) -> ClosureRun {
    let crossings = detect_crossings(prior, params.delta_r, params.min_separation);
    let mut run = ClosureRun { crossings: crossings.clone(), ..ClosureRun::default() };
    for c in crossings {
        match make_loop_closure(prior, cloud, &c, params) {
            Ok(m) => run.closures.push(m),
            Err(e) => {
                log::warn!("dropping closure between nodes {} and {}: {e}", c.idx_l1, c.idx_l2);
                run.dropped.push((c, e));
            }
        }
    }
    run
}

/// Earliest node involved in any closure.
pub fn anchor_index(closures: &[LoopClosureMeasurement<f64>]) -> Option<usize> {
    closures.iter().map(|c| c.idx_l1.min(c.idx_l2)).min()
}
