use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::approx::{sync_target, Approximator, OptimizerState, Params};
use crate::diagnostics::{soft_divergence_threshold, RunMetrics};
use crate::mdp::{epsilon_greedy, Env};
use crate::replay::{PrioritizedBuffer, ReplayConfig};
use crate::targets::{n_step_return, td_error, BootstrapKind, TransitionSegment};
use crate::{Error, Result};

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub params: Params,
    pub agent_steps: u64,
    pub learn_steps: u64,
    pub episodes: u64,
    pub hard_diverged: bool,
}

struct Learner<'a> {
    approx: &'a Approximator,
    gamma: f64,
    kind: BootstrapKind,
}

impl Learner<'_> {
    /// Returns `(q(S_t, ·), δ)` for a segment.
    fn td(&self, online: &Params, target: &Params, seg: &TransitionSegment) -> Result<(Vec<f64>, f64)> {
        let q = self.approx.values(online, seg.state)?;
        let ret = if seg.terminated {
            n_step_return(seg, self.kind, &[], &[], self.gamma)
        } else {
            let q_online = self.approx.values(online, seg.bootstrap_state)?;
            let q_target = if self.kind.uses_target() {
                self.approx.values(target, seg.bootstrap_state)?
            } else {
                Vec::new()
            };
            n_step_return(seg, self.kind, &q_online, &q_target, self.gamma)
        };
        let delta = td_error(ret, q[seg.action]);
        Ok((q, delta))
    }
}

fn segment(window: &VecDeque<(usize, usize, f64)>, bootstrap_state: usize, terminated: bool) -> Result<TransitionSegment> {
    let (s, a, _) = window[0];
    let rewards: Vec<f64> = window.iter().map(|&(_, _, r)| r).collect();
    TransitionSegment::new(s, a, &rewards, bootstrap_state, terminated)
}

/// Train an agent with ε-greedy acting, n-step segments in prioritized
/// replay, periodic minibatch learning and a periodically synced target.
///
/// Stops early on hard divergence; the remaining intervals are flagged.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let env: Env = cfg.env.build()?;
    let approx = Approximator::new(cfg.approximator.clone(), env.features().clone(), env.n_actions())?;
    let learner = Learner { approx: &approx, gamma: env.discount(), kind: cfg.bootstrap };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut online = approx.init_params(&mut rng);
    let mut target = sync_target(&online);
    let mut optimizer = OptimizerState::new(cfg.optimizer, approx.n_params())?;
    let mut buffer = PrioritizedBuffer::new(ReplayConfig {
        min_fill: cfg.min_fill,
        normalize_weights: cfg.normalize_is_weights,
        ..ReplayConfig::new(cfg.replay_capacity, cfg.alpha, cfg.beta)
    })?;
    let mut metrics = RunMetrics::new(cfg.interval_length, soft_divergence_threshold(env.discount(), cfg.reward_bound)?)?;

    let mut window: VecDeque<(usize, usize, f64)> = VecDeque::with_capacity(cfg.n);
    let mut state = env.reset(&mut rng);
    let (mut episode_return, mut episode_len) = (0.0, 0usize);
    let (mut learn_steps, mut episodes) = (0u64, 0u64);
    let mut direction = vec![0.0; approx.n_params()];
    let mut diverged = false;
    let mut steps_done = 0;

    'frames: for frame in 0..cfg.total_frames {
        steps_done = frame + 1;
        let q = approx.values(&online, state)?;
        let action = epsilon_greedy(&q, cfg.epsilon, &mut rng)?;
        let step = env.step(state, action, &mut rng);
        episode_return += step.raw_reward;
        episode_len += 1;
        window.push_back((state, action, step.reward));
        let truncated = !step.terminal && episode_len >= env.max_episode_steps();

        let mut ready = Vec::new();
        if window.len() == cfg.n {
            ready.push(segment(&window, step.next_state, step.terminal)?);
            window.pop_front();
        }
        if step.terminal || truncated {
            while !window.is_empty() {
                ready.push(segment(&window, step.next_state, step.terminal)?);
                window.pop_front();
            }
        }
        for seg in ready {
            let (_, delta) = learner.td(&online, &target, &seg)?;
            if !delta.is_finite() {
                metrics.record(frame, &[f64::NAN], &[], None);
                diverged = true;
                break 'frames;
            }
            buffer.push(seg, delta);
        }

        if step.terminal || truncated {
            metrics.record(frame, &[], &[episode_return], None);
            episodes += 1;
            episode_return = 0.0;
            episode_len = 0;
            state = env.reset(&mut rng);
        } else {
            state = step.next_state;
        }

        if steps_done % cfg.learn_every == 0 && buffer.can_sample() {
            let batch = buffer.sample(cfg.batch_size, &mut rng)?;
            let segments: Vec<TransitionSegment> = batch.entries.iter().map(|&s| s.clone()).collect();
            let (weights, ids) = (batch.weights, batch.ids);
            let scale = 1.0 / segments.len() as f64;
            direction.iter_mut().for_each(|d| *d = 0.0);
            let mut q_seen = Vec::with_capacity(segments.len() * env.n_actions());
            let mut deltas = Vec::with_capacity(segments.len());
            let mut loss = 0.0;
            for (seg, w) in segments.iter().zip(&weights) {
                let (q, delta) = learner.td(&online, &target, seg)?;
                q_seen.extend_from_slice(&q);
                approx.accumulate_gradient(&online, seg.state, seg.action, scale * w * delta, &mut direction)?;
                loss += 0.5 * delta * delta * scale;
                deltas.push(delta);
            }
            buffer.update_priorities(&ids, &deltas);
            metrics.record(frame, &q_seen, &[], Some(loss));
            learn_steps += 1;
            if metrics.is_hard_diverged() {
                diverged = true;
                break;
            }
            match optimizer.apply(&mut online, &direction) {
                Ok(()) => {}
                Err(Error::NonFinite) => {
                    metrics.record(frame, &[f64::NAN], &[], None);
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        if steps_done % cfg.target_sync_period == 0 {
            target = sync_target(&online);
        }
    }

    metrics.finish(cfg.total_frames);
    Ok(RunOutcome {
        hard_diverged: diverged || metrics.is_hard_diverged(),
        metrics,
        params: online,
        agent_steps: steps_done,
        learn_steps,
        episodes,
    })
}
