use super::{argmax_lowest, h_step_policy, optimal_value};
use crate::envs::GraphWorld;
use crate::error::{Error, Result};

/// Outcome of simulating a 1-step lookahead agent and a greedy agent on the
/// graph world with the poor terminal's value overestimated by `Δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMismatchReport {
    pub delta: f64,
    pub episodes: usize,
    /// Whether the lookahead agent ever entered the poor terminal from the
    /// left start.
    pub lookahead_visited_poor: bool,
    /// `V̂(P) - V(P)` after the lookahead agent's episodes.
    pub lookahead_residual_error: f64,
    /// 1-based episode in which the greedy agent first entered the poor
    /// terminal.
    pub greedy_first_visit: Option<usize>,
    pub greedy_residual_error: f64,
    /// Node entered by the lookahead agent from the right start under the
    /// initial estimate.
    pub right_choice_before: usize,
    /// Same, after the greedy agent corrected the estimate.
    pub right_choice_after: usize,
    /// Nodes visited in the first episode of each agent from the left.
    pub lookahead_path: Vec<usize>,
    pub greedy_path: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Agent {
    Lookahead,
    Greedy,
}

fn choose(gw: &GraphWorld, v_hat: &[f64], s: usize, agent: Agent) -> Result<usize> {
    Ok(match agent {
        Agent::Lookahead => h_step_policy(gw.mdp(), v_hat, 1)?.action(s).expect("lookahead policy is deterministic"),
        Agent::Greedy => {
            let succ: Vec<f64> = (0..GraphWorld::N_ACTIONS).map(|a| v_hat[gw.successor(s, a)]).collect();
            argmax_lowest(&succ)
        }
    })
}

/// Runs `episodes` episodes from the left start, correcting `V̂` to the
/// true value at every visited node. Returns the first-episode path and
/// the 1-based episode of the first poor-terminal visit.
fn simulate(gw: &GraphWorld, v_hat: &mut [f64], v_true: &[f64], episodes: usize, agent: Agent) -> Result<(Vec<usize>, Option<usize>)> {
    let mut first_path = Vec::new();
    let mut first_visit = None;
    for ep in 1..=episodes {
        let mut s = GraphWorld::LEFT;
        let mut path = vec![s];
        v_hat[s] = v_true[s];
        for _ in 0..GraphWorld::N_STATES * 2 {
            if gw.mdp().is_terminal(s) {
                break;
            }
            let a = choose(gw, v_hat, s, agent)?;
            s = gw.successor(s, a);
            v_hat[s] = v_true[s];
            path.push(s);
        }
        if s == GraphWorld::POOR && first_visit.is_none() {
            first_visit = Some(ep);
        }
        if ep == 1 {
            first_path = path;
        }
    }
    Ok((first_path, first_visit))
}

/// Simulates the value-calibration lag of planning agents: with `V̂ = V*`
/// except `V̂(P) = V*(P) + Δ`, the 1-step lookahead agent starting left
/// never visits P, so the error persists, while the greedy agent walks into
/// P in the first episode and corrects it.
pub fn graph_world_mismatch(gw: &GraphWorld, delta: f64, episodes: usize) -> Result<GraphMismatchReport> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::config(format!("overestimate must be finite and >= 0, got {delta}")));
    }
    if episodes == 0 {
        return Err(Error::config("need at least one episode"));
    }
    let mdp = gw.mdp();
    let g = mdp.gamma();
    let good = mdp.reward(GraphWorld::LEFT, 0) + g * 0.0;
    let poor = mdp.reward(GraphWorld::LEFT, 1) + g * delta;
    if poor >= good {
        return Err(Error::config(format!(
            "Δ = {delta} makes the poor branch ({poor}) look at least as good as the reward-10 branch ({good}) from the left start"
        )));
    }
    let v_true = optimal_value(mdp);
    let mut initial = v_true.clone();
    initial[GraphWorld::POOR] += delta;

    let right_choice_before = gw.successor(GraphWorld::RIGHT, choose(gw, &initial, GraphWorld::RIGHT, Agent::Lookahead)?);

    let mut v_la = initial.clone();
    let (lookahead_path, la_visit) = simulate(gw, &mut v_la, &v_true, episodes, Agent::Lookahead)?;
    let mut v_gr = initial.clone();
    let (greedy_path, greedy_first_visit) = simulate(gw, &mut v_gr, &v_true, episodes, Agent::Greedy)?;

    let right_choice_after = gw.successor(GraphWorld::RIGHT, choose(gw, &v_gr, GraphWorld::RIGHT, Agent::Lookahead)?);

    Ok(GraphMismatchReport {
        delta,
        episodes,
        lookahead_visited_poor: la_visit.is_some(),
        lookahead_residual_error: v_la[GraphWorld::POOR] - v_true[GraphWorld::POOR],
        greedy_first_visit,
        greedy_residual_error: v_gr[GraphWorld::POOR] - v_true[GraphWorld::POOR],
        right_choice_before,
        right_choice_after,
        lookahead_path,
        greedy_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::GraphWorldConfig;

    fn world() -> GraphWorld {
        GraphWorld::new(GraphWorldConfig::default()).unwrap()
    }

    #[test]
    fn zero_delta_agents_agree() {
        let r = graph_world_mismatch(&world(), 0.0, 10).unwrap();
        assert_eq!(r.lookahead_path, r.greedy_path);
        assert!(!r.lookahead_visited_poor);
        assert_eq!(r.greedy_first_visit, None);
        assert_eq!(r.lookahead_residual_error, 0.0);
        assert_eq!(r.right_choice_before, r.right_choice_after);
    }

    #[test]
    fn overestimate_persists_for_lookahead() {
        let r = graph_world_mismatch(&world(), 0.5, 100).unwrap();
        assert!(!r.lookahead_visited_poor);
        assert_eq!(r.lookahead_residual_error, 0.5);
        assert_eq!(r.greedy_first_visit, Some(1));
        assert_eq!(r.greedy_residual_error, 0.0);
        assert_eq!(r.right_choice_before, GraphWorld::POOR);
        assert_eq!(r.right_choice_after, GraphWorld::A);
    }

    #[test]
    fn large_delta_breaks_premise() {
        assert!(matches!(graph_world_mismatch(&world(), 1.0, 10), Err(Error::Config(_))));
        assert!(graph_world_mismatch(&world(), -0.1, 10).is_err());
    }
}
