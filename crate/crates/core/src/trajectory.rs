//! Trajectory dumps.
//!
//! One CSV line per environment step:
//!
//! ```text
//! episode,t,agent0_x,agent0_y,...,agentK-1_y,action0,...,actionK-1,reward0,...,rewardK-1,target_index
//! ```
//!
//! `t` is the step counter after the transition, positions are post-step,
//! `action_i` is the action agent `i` took and `reward_i` the extrinsic reward
//! it received. The good agents come first and the adversary is the last
//! agent.

use std::io::Write;

use crate::env::Vec2;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub t: usize,
    pub positions: Vec<Vec2>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub target_index: usize,
}

pub fn header(n_agents: usize) -> String {
    let mut cols = vec!["episode".to_string(), "t".to_string()];
    for i in 0..n_agents {
        cols.push(format!("agent{i}_x"));
        cols.push(format!("agent{i}_y"));
    }
    cols.extend((0..n_agents).map(|i| format!("action{i}")));
    cols.extend((0..n_agents).map(|i| format!("reward{i}")));
    cols.push("target_index".into());
    cols.join(",")
}

pub fn write_csv<W: Write>(mut out: W, n_agents: usize, records: &[TrajectoryRecord]) -> Result<()> {
    writeln!(out, "{}", header(n_agents))?;
    for r in records {
        let mut line = format!("{},{}", r.episode, r.t);
        for p in &r.positions {
            line.push_str(&format!(",{},{}", p[0], p[1]));
        }
        for a in &r.actions {
            line.push_str(&format!(",{a}"));
        }
        for x in &r.rewards {
            line.push_str(&format!(",{x}"));
        }
        line.push_str(&format!(",{}", r.target_index));
        writeln!(out, "{line}")?;
    }
    Ok(())
}
