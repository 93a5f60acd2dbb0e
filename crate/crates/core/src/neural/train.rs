//! Interleaved data collection and learning.

use std::fmt::Write as _;
use std::io::Write;

use super::replay::{ReplayBuffer, Transition};
use super::td3::{Ensemble, Td3Config, UpdateStats};
use crate::error::{Error, Result};
use crate::oracle::mc::{mc_estimate, McEstimate};
use crate::reach::{AugmentedState, Plant, ReachEnv};
use crate::rng::RandomStream;

/// Single-threaded TD3 trainer. The environment draws from `env_rng`,
/// exploration noise from `explore_rng`, and minibatches and target
/// smoothing from `learn_rng`; all three are split from the master seed.
///
/// The in-progress episode is remembered as the `env_rng` position at its
/// reset plus the actions taken, so a saved trainer can rebuild the exact
/// plant state by replaying them.
pub struct Trainer<P> {
    pub env: ReachEnv<P>,
    pub ensemble: Ensemble,
    pub config: Td3Config,
    pub buffer: ReplayBuffer,
    pub env_rng: RandomStream,
    pub explore_rng: RandomStream,
    pub learn_rng: RandomStream,
    state: Option<AugmentedState>,
    episode_start: u128,
    episode_actions: Vec<f64>,
    pub env_steps: u64,
    pub episodes: u64,
    pub last_stats: Option<UpdateStats>,
    /// Most recent actor objective (the actor is not updated every step).
    pub last_actor_objective: f64,
}

impl<P: Plant> Trainer<P> {
    pub fn new(env: ReachEnv<P>, config: Td3Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let master = RandomStream::new(seed);
        let mut init_rng = master.split(0);
        let ensemble = Ensemble::new(env.feature_dim(), env.mechanisms(), &config, &mut init_rng);
        Self::with_ensemble(env, ensemble, config, seed)
    }

    /// Continues from an existing ensemble (e.g. a loaded checkpoint).
    pub fn with_ensemble(env: ReachEnv<P>, ensemble: Ensemble, config: Td3Config, seed: u64) -> Result<Self> {
        config.validate()?;
        if ensemble.state_dim != env.feature_dim() || ensemble.mechanisms != env.mechanisms() {
            return Err(Error::DimensionMismatch {
                expected: env.feature_dim(),
                got: ensemble.state_dim,
            });
        }
        let master = RandomStream::new(seed);
        let buffer = ReplayBuffer::new(config.buffer_capacity, env.feature_dim(), env.mechanisms());
        Ok(Self {
            env,
            ensemble,
            buffer,
            env_rng: master.split(1),
            learn_rng: master.split(2),
            explore_rng: master.split(3),
            config,
            state: None,
            episode_start: 0,
            episode_actions: Vec::new(),
            env_steps: 0,
            episodes: 0,
            last_stats: None,
            last_actor_objective: f64::NAN,
        })
    }

    fn fresh_state(&mut self) -> Result<AugmentedState> {
        // States that are already terminal carry no transition to learn from.
        for _ in 0..1000 {
            let start = self.env_rng.position();
            let s = self.env.reset(&mut self.env_rng)?;
            self.episodes += 1;
            if !self.env.is_terminal(&s) {
                self.episode_start = start;
                self.episode_actions.clear();
                return Ok(s);
            }
        }
        Err(Error::TrainingAbort("every reset produced a terminal state".into()))
    }

    /// One environment step followed by `updates_per_step` gradient steps
    /// once the buffer holds a full batch.
    pub fn step(&mut self) -> Result<()> {
        let s = match self.state.take() {
            Some(s) => s,
            None => self.fresh_state()?,
        };
        let a = if self.env_steps < self.config.start_steps {
            self.explore_rng.uniform_range(-1.0, 1.0)
        } else {
            let sigma = self.config.exploration_sigma(self.env_steps);
            (self.ensemble.act_online(&s.normalized) + sigma * self.explore_rng.normal()).clamp(-1.0, 1.0)
        };
        let st = self.env.step(&s, a, &mut self.env_rng)?;
        self.episode_actions.push(a);
        let m = self.env.mechanisms();
        self.buffer.push(&Transition {
            s: s.normalized.clone(),
            a,
            r: st.reward.mechanism.clone(),
            r_total: st.reward.total,
            s2: st.state.normalized.clone(),
            done: vec![st.done; m],
            done_total: st.done,
        })?;
        self.env_steps += 1;
        if !st.done {
            self.state = Some(st.state);
        }
        if self.buffer.len() >= self.config.batch_size && self.env_steps >= self.config.start_steps {
            for _ in 0..self.config.updates_per_step {
                let batch = self.buffer.sample(self.config.batch_size, &mut self.learn_rng)?;
                let stats = self.ensemble.update(&batch, &self.config, &mut self.learn_rng)?;
                if let Some(j) = stats.actor_objective {
                    self.last_actor_objective = j;
                }
                self.last_stats = Some(stats);
            }
            if !self.ensemble.is_finite() {
                return Err(Error::TrainingAbort(format!(
                    "non-finite network parameters after {} environment steps",
                    self.env_steps
                )));
            }
        }
        Ok(())
    }

    pub fn run(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn gradient_steps(&self) -> u64 {
        self.ensemble.updates
    }

    /// Everything besides the networks needed to continue bit-exactly.
    pub fn save_state<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{STATE_MAGIC} 1");
        for (name, r) in [("env", &self.env_rng), ("explore", &self.explore_rng), ("learn", &self.learn_rng)] {
            let _ = writeln!(out, "rng {name} {} {}", r.seed(), r.position());
        }
        let _ = writeln!(out, "episodes {}", self.episodes);
        let _ = writeln!(out, "env_steps {}", self.env_steps);
        let _ = writeln!(out, "actor_objective {:?}", self.last_actor_objective);
        let losses = self.last_stats.as_ref().map_or(vec![], |s| s.critic_loss.clone());
        let _ = writeln!(out, "critic_loss {}", join(&losses));
        match self.state {
            Some(_) => {
                let _ = writeln!(out, "episode {} {}", self.episode_start, join(&self.episode_actions));
            }
            None => {
                let _ = writeln!(out, "episode none");
            }
        }
        self.buffer.write_text(&mut out);
        w.write_all(out.as_bytes()).map_err(|e| Error::Io(e.to_string()))
    }

    /// Restores a trainer saved with [`Trainer::save_state`] around a loaded
    /// ensemble.
    pub fn restore<R: std::io::BufRead>(
        env: ReachEnv<P>,
        ensemble: Ensemble,
        config: Td3Config,
        reader: R,
    ) -> Result<Self> {
        let mut t = Self::with_ensemble(env, ensemble, config, 0)?;
        let bad = |msg: &str| Error::Checkpoint(format!("trainer state: {msg}"));
        let mut lines = reader.lines().map(|l| l.map_err(|e| Error::Io(e.to_string())));
        let mut next = move || lines.next().unwrap_or_else(|| Err(bad("truncated")));
        let head = next()?;
        if head.trim() != format!("{STATE_MAGIC} 1") {
            return Err(bad("bad header"));
        }
        let mut rngs = Vec::new();
        for _ in 0..3 {
            let l = next()?;
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                ["rng", _, seed, pos] => {
                    let seed = seed.parse().map_err(|_| bad("rng seed"))?;
                    let pos = pos.parse().map_err(|_| bad("rng position"))?;
                    rngs.push(RandomStream::at_position(seed, pos));
                }
                _ => return Err(bad("rng line")),
            }
        }
        t.learn_rng = rngs.pop().unwrap();
        t.explore_rng = rngs.pop().unwrap();
        let env_rng = rngs.pop().unwrap();
        let field = |l: String, key: &str| -> Result<Vec<String>> {
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::Checkpoint(format!("trainer state: expected `{key}`")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let num = |v: &[String]| -> Result<Vec<f64>> {
            v.iter()
                .map(|x| x.parse::<f64>().map_err(|_| Error::Checkpoint("trainer state: bad number".into())))
                .collect()
        };
        t.episodes = field(next()?, "episodes")?.first().and_then(|x| x.parse().ok()).ok_or_else(|| bad("episodes"))?;
        t.env_steps = field(next()?, "env_steps")?.first().and_then(|x| x.parse().ok()).ok_or_else(|| bad("env_steps"))?;
        t.last_actor_objective = num(&field(next()?, "actor_objective")?)?.first().copied().ok_or_else(|| bad("objective"))?;
        let losses = num(&field(next()?, "critic_loss")?)?;
        if !losses.is_empty() {
            t.last_stats = Some(UpdateStats {
                critic_loss: losses,
                actor_objective: None,
            });
        }
        let ep = field(next()?, "episode")?;
        if ep.first().map(String::as_str) != Some("none") {
            let start: u128 = ep.first().and_then(|x| x.parse().ok()).ok_or_else(|| bad("episode start"))?;
            let actions = num(&ep[1..])?;
            let mut rng = RandomStream::at_position(env_rng.seed(), start);
            let mut s = t.env.reset(&mut rng)?;
            for &a in &actions {
                s = t.env.step(&s, a, &mut rng)?.state;
            }
            if rng.position() != env_rng.position() || t.env.is_terminal(&s) {
                return Err(bad("episode replay diverged"));
            }
            t.episode_start = start;
            t.episode_actions = actions;
            t.state = Some(s);
        }
        t.env_rng = env_rng;
        t.buffer = ReplayBuffer::read_text(&mut next, t.config.buffer_capacity)?;
        Ok(t)
    }
}

const STATE_MAGIC: &str = "voltreach-trainer";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

/// Greedy-policy MC evaluation used for learning curves.
pub fn evaluate_greedy<P>(env: &ReachEnv<P>, ensemble: &Ensemble, n: usize, seed: u64, workers: usize) -> Result<McEstimate>
where
    P: Plant + Clone + Send + Sync,
{
    mc_estimate(env, &ensemble.policy(), n, &RandomStream::new(seed), workers)
}

/// One row of the learning-curve CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub critic_loss: Vec<f64>,
    pub actor_objective: f64,
    pub eval_risk_total: f64,
    pub eval_risk: Vec<f64>,
}

pub fn curve_header(mechanisms: usize) -> String {
    let mut h = String::from("step");
    for m in 1..=mechanisms {
        h.push_str(&format!(",critic_loss_m{m}"));
    }
    h.push_str(",actor_obj,eval_risk_total");
    for m in 1..=mechanisms {
        h.push_str(&format!(",eval_risk_m{m}"));
    }
    h
}

impl CurveRow {
    pub fn from_trainer<P: Plant>(t: &Trainer<P>, eval: &McEstimate) -> Self {
        let m = t.ensemble.mechanisms;
        let critic_loss = t
            .last_stats
            .as_ref()
            .map_or(vec![f64::NAN; m], |s| s.critic_loss[..m].to_vec());
        Self {
            step: t.env_steps,
            critic_loss,
            actor_objective: t.last_actor_objective,
            eval_risk_total: eval.risk,
            eval_risk: eval.risk_by_mechanism.clone(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "{}", self.step)?;
        for l in &self.critic_loss {
            write!(w, ",{l}")?;
        }
        write!(w, ",{},{}", self.actor_objective, self.eval_risk_total)?;
        for r in &self.eval_risk {
            write!(w, ",{r}")?;
        }
        writeln!(w)
    }
}
