//! Multi-critic TD3.
//!
//! Every mechanism `m` has a twin critic pair trained on its own reward;
//! the shared actor ascends `mean_b min_m Q^m_1(s_b, mu(s_b))`, with the
//! gradient routed through the per-sample minimizing critic. With more than
//! one mechanism an extra pair learns the total safety value (used for
//! evaluation only; it does not influence the actor).

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::mlp::{Activation, Mlp};
use super::replay::Batch;
use crate::error::{Error, Result};
use crate::reach::{AugmentedState, Policy};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Config {
    pub gamma: f64,
    pub polyak: f64,
    pub policy_delay: usize,
    pub sigma_expl: f64,
    /// Exploration noise after linear decay.
    pub sigma_expl_final: f64,
    pub expl_decay_steps: u64,
    pub sigma_target: f64,
    pub target_clip: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Learning rates decay linearly to `lr_final_fraction` of their
    /// initial values over this many gradient steps (0 keeps them fixed).
    pub lr_decay_updates: u64,
    pub lr_final_fraction: f64,
    /// Per-update weight of an exponential average of the actor and the
    /// first critic of each pair, used for inference (0 disables).
    pub average_tau: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Gradient steps per environment step.
    pub updates_per_step: usize,
    /// Environment steps with uniformly random actions before learning.
    pub start_steps: u64,
    /// Learn a total-safety critic pair when there are several mechanisms.
    pub total_critic: bool,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            polyak: 0.005,
            policy_delay: 2,
            sigma_expl: 0.2,
            sigma_expl_final: 0.05,
            expl_decay_steps: 100_000,
            sigma_target: 0.1,
            target_clip: 0.3,
            actor_lr: 1e-5,
            critic_lr: 1e-4,
            lr_decay_updates: 0,
            lr_final_fraction: 1.0,
            average_tau: 0.0,
            hidden: vec![64, 64, 64],
            batch_size: 256,
            buffer_capacity: 1_000_000,
            updates_per_step: 1,
            start_steps: 1_000,
            total_critic: true,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("td3.gamma must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return Err(Error::Config("td3.polyak must lie in [0, 1]".into()));
        }
        let sigmas = [self.sigma_expl, self.sigma_expl_final, self.sigma_target, self.target_clip];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("td3 noise levels must be non-negative".into()));
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("td3 policy_delay, batch_size and buffer_capacity must be positive".into()));
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::Config("td3.lr_final_fraction must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.average_tau) {
            return Err(Error::Config("td3.average_tau must lie in [0, 1]".into()));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) || self.hidden.contains(&0) {
            return Err(Error::Config("td3 learning rates and layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Learning-rate multiplier after `updates` gradient steps.
    pub fn lr_factor(&self, updates: u64) -> f64 {
        if self.lr_decay_updates == 0 {
            return 1.0;
        }
        let f = (updates as f64 / self.lr_decay_updates as f64).min(1.0);
        1.0 + (self.lr_final_fraction - 1.0) * f
    }

    /// Exploration noise after `step` environment steps.
    pub fn exploration_sigma(&self, step: u64) -> f64 {
        if self.expl_decay_steps == 0 {
            return self.sigma_expl_final;
        }
        let f = (step as f64 / self.expl_decay_steps as f64).min(1.0);
        self.sigma_expl + (self.sigma_expl_final - self.sigma_expl) * f
    }
}

/// Twin critics with targets and optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair {
    pub q: [Mlp; 2],
    pub target: [Mlp; 2],
    pub opt: [Adam; 2],
}

impl CriticPair {
    fn new(dims: &[usize], lr: f64, rng: &mut RandomStream) -> Self {
        let q1 = Mlp::new(dims, Activation::Relu, Activation::Linear, rng);
        let q2 = Mlp::new(dims, Activation::Relu, Activation::Linear, rng);
        let cfg = AdamConfig::with_lr(lr);
        Self {
            opt: [Adam::new(&q1, cfg), Adam::new(&q2, cfg)],
            target: [q1.clone(), q2.clone()],
            q: [q1, q2],
        }
    }

    /// Regresses both critics to `y`; returns the mean of the two MSEs.
    fn fit(&mut self, sa: &Array2<f64>, y: &Array1<f64>) -> Result<f64> {
        let b = y.len() as f64;
        let mut loss = 0.0;
        for k in 0..2 {
            let cache = self.q[k].forward_batch(sa.view())?;
            let err = &cache.output().column(0) - y;
            loss += err.mapv(|e| e * e).sum() / b;
            let up = err.mapv(|e| 2.0 * e / b).insert_axis(Axis(1));
            let (g, _) = self.q[k].backward(&cache, up.view());
            self.opt[k].step(&mut self.q[k], &g);
        }
        Ok(0.5 * loss)
    }

    fn min_target(&self, sa: &Array2<f64>) -> Result<Array1<f64>> {
        let t1 = self.target[0].forward_batch(sa.view())?;
        let t2 = self.target[1].forward_batch(sa.view())?;
        Ok(ndarray::Zip::from(t1.output().column(0))
            .and(t2.output().column(0))
            .map_collect(|&a, &b| a.min(b)))
    }

    fn polyak(&mut self, tau: f64) {
        for k in 0..2 {
            self.target[k].polyak(&self.q[k], tau);
        }
    }
}

/// Slow exponential average of the networks used at inference time. It
/// takes out the step-to-step jitter of the learner without feeding back
/// into training.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAverage {
    pub actor: Mlp,
    /// First critic of every pair.
    pub critics: Vec<Mlp>,
}

impl PolicyAverage {
    fn of(e: &Ensemble) -> Self {
        Self {
            actor: e.actor.clone(),
            critics: e.critics.iter().map(|c| c.q[0].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub state_dim: usize,
    pub mechanisms: usize,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub actor_opt: Adam,
    /// Mechanism critics, followed by the total-safety pair when present.
    pub critics: Vec<CriticPair>,
    /// Critic updates performed.
    pub updates: u64,
    /// Inference networks; the online ones are used when absent.
    pub average: Option<PolicyAverage>,
}

/// Losses from one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    /// Mean twin-critic MSE per mechanism (then total, if learned).
    pub critic_loss: Vec<f64>,
    /// Actor objective when the actor was updated.
    pub actor_objective: Option<f64>,
}

impl Ensemble {
    pub fn new(state_dim: usize, mechanisms: usize, cfg: &Td3Config, rng: &mut RandomStream) -> Self {
        let mut adims = vec![state_dim];
        adims.extend(&cfg.hidden);
        adims.push(1);
        let mut cdims = vec![state_dim + 1];
        cdims.extend(&cfg.hidden);
        cdims.push(1);
        let actor = Mlp::new(&adims, Activation::Relu, Activation::Tanh, rng);
        let pairs = mechanisms + usize::from(cfg.total_critic && mechanisms > 1);
        let critics = (0..pairs).map(|_| CriticPair::new(&cdims, cfg.critic_lr, rng)).collect();
        let mut e = Self {
            state_dim,
            mechanisms,
            actor_opt: Adam::new(&actor, AdamConfig::with_lr(cfg.actor_lr)),
            actor_target: actor.clone(),
            actor,
            critics,
            updates: 0,
            average: None,
        };
        if cfg.average_tau > 0.0 {
            e.average = Some(PolicyAverage::of(&e));
        }
        e
    }

    pub fn has_total_critic(&self) -> bool {
        self.critics.len() > self.mechanisms
    }

    fn inference_actor(&self) -> &Mlp {
        self.average.as_ref().map_or(&self.actor, |a| &a.actor)
    }

    /// Greedy action for a normalized state (averaged networks if kept).
    pub fn act(&self, s: &[f64]) -> f64 {
        self.inference_actor().forward(s).map(|a| a[0]).unwrap_or(0.0)
    }

    /// Action of the online actor, which drives exploration.
    pub fn act_online(&self, s: &[f64]) -> f64 {
        self.actor.forward(s).map(|a| a[0]).unwrap_or(0.0)
    }

    fn critic_input(s: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
        concatenate(Axis(1), &[s.view(), a.view()]).unwrap()
    }

    /// `Q^m_1(s, a)` for every critic pair (mechanisms, then total).
    pub fn q_values(&self, s: &[f64], a: f64) -> Vec<f64> {
        let mut x = s.to_vec();
        x.push(a);
        let q = |net: &Mlp| net.forward(&x).map(|q| q[0]).unwrap_or(f64::NAN);
        match &self.average {
            Some(avg) => avg.critics.iter().map(q).collect(),
            None => self.critics.iter().map(|c| q(&c.q[0])).collect(),
        }
    }

    /// Learned safety values under the greedy action: per-mechanism values
    /// followed by the total value. Without a total critic the total is the
    /// minimum over mechanisms (exact when there is only one).
    pub fn values(&self, s: &[f64]) -> (Vec<f64>, f64) {
        let q = self.q_values(s, self.act(s));
        let mech = q[..self.mechanisms].to_vec();
        let total = if self.has_total_critic() {
            q[self.mechanisms]
        } else {
            mech.iter().copied().fold(f64::INFINITY, f64::min)
        };
        (mech, total)
    }

    /// One TD3 gradient step: critics always, actor and targets every
    /// `policy_delay` steps.
    pub fn update(&mut self, batch: &Batch, cfg: &Td3Config, rng: &mut RandomStream) -> Result<UpdateStats> {
        let f = cfg.lr_factor(self.updates);
        self.actor_opt.config.lr = cfg.actor_lr * f;
        for c in &mut self.critics {
            for o in &mut c.opt {
                o.config.lr = cfg.critic_lr * f;
            }
        }
        let critic_loss = self.critic_update(batch, cfg, rng)?;
        self.updates += 1;
        let actor_objective = if self.updates % cfg.policy_delay as u64 == 0 {
            let j = self.actor_update(batch)?;
            self.soft_update(cfg.polyak);
            Some(j)
        } else {
            None
        };
        if let Some(avg) = &mut self.average {
            avg.actor.polyak(&self.actor, cfg.average_tau);
            for (a, c) in avg.critics.iter_mut().zip(&self.critics) {
                a.polyak(&c.q[0], cfg.average_tau);
            }
        }
        if critic_loss.iter().any(|l| !l.is_finite()) || actor_objective.is_some_and(|j| !j.is_finite()) {
            return Err(Error::TrainingAbort(format!(
                "non-finite loss after {} updates: critic {:?}, actor {:?}",
                self.updates, critic_loss, actor_objective
            )));
        }
        Ok(UpdateStats {
            critic_loss,
            actor_objective,
        })
    }

    /// Smoothed target action `clip(mu'(s') + clip(sigma xi, +-c), -1, 1)`.
    pub fn target_action(&self, s2: &Array2<f64>, cfg: &Td3Config, rng: &mut RandomStream) -> Result<Array2<f64>> {
        let mut a2 = self.actor_target.forward_batch(s2.view())?.output().clone();
        a2.mapv_inplace(|a| {
            let eps = (cfg.sigma_target * rng.normal()).clamp(-cfg.target_clip, cfg.target_clip);
            (a + eps).clamp(-1.0, 1.0)
        });
        Ok(a2)
    }

    pub fn critic_update(&mut self, batch: &Batch, cfg: &Td3Config, rng: &mut RandomStream) -> Result<Vec<f64>> {
        let a2 = self.target_action(&batch.s2, cfg, rng)?;
        let sa2 = Self::critic_input(&batch.s2, &a2);
        let sa = Self::critic_input(&batch.s, &batch.a);
        let mut losses = Vec::with_capacity(self.critics.len());
        for (m, pair) in self.critics.iter_mut().enumerate() {
            let (r, done) = if m < self.mechanisms {
                (batch.r.column(m).to_owned(), batch.done.column(m).to_owned())
            } else {
                (batch.r_total.clone(), batch.done_total.clone())
            };
            let next = pair.min_target(&sa2)?;
            let y = &r + &(cfg.gamma * (1.0 - &done) * &next);
            losses.push(pair.fit(&sa, &y)?);
        }
        Ok(losses)
    }

    /// Ascent step on `mean_b min_m Q^m_1(s_b, mu(s_b))`; returns the
    /// objective before the step.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        let b = batch.len();
        let cache = self.actor.forward_batch(batch.s.view())?;
        let sa = Self::critic_input(&batch.s, cache.output());
        let q_caches = self.critics[..self.mechanisms]
            .iter()
            .map(|c| c.q[0].forward_batch(sa.view()))
            .collect::<Result<Vec<_>>>()?;
        // Per-sample minimizing critic (first index wins ties).
        let mut pick = vec![0usize; b];
        let mut obj = 0.0;
        for (i, p) in pick.iter_mut().enumerate() {
            let mut best = q_caches[0].output()[[i, 0]];
            for (m, c) in q_caches.iter().enumerate().skip(1) {
                let q = c.output()[[i, 0]];
                if q < best {
                    best = q;
                    *p = m;
                }
            }
            obj += best;
        }
        obj /= b as f64;
        let mut da = Array2::<f64>::zeros((b, 1));
        for (m, c) in q_caches.iter().enumerate() {
            if !pick.contains(&m) {
                continue;
            }
            let up = Array2::from_shape_fn((b, 1), |(i, _)| if pick[i] == m { 1.0 / b as f64 } else { 0.0 });
            let (_, dx) = self.critics[m].q[0].backward(c, up.view());
            da += &dx.slice(s![.., self.state_dim..]);
        }
        // Descend on -J.
        da.mapv_inplace(|g| -g);
        let (g, _) = self.actor.backward(&cache, da.view());
        self.actor_opt.step(&mut self.actor, &g);
        Ok(obj)
    }

    pub fn soft_update(&mut self, tau: f64) {
        self.actor_target.polyak(&self.actor, tau);
        for c in &mut self.critics {
            c.polyak(tau);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critics.iter().all(|c| c.q.iter().all(Mlp::is_finite))
    }

    /// The greedy policy as a [`Policy`].
    pub fn policy(&self) -> ActorPolicy<'_> {
        ActorPolicy(self.inference_actor())
    }
}

/// Deterministic policy backed by an actor network.
#[derive(Debug, Clone, Copy)]
pub struct ActorPolicy<'a>(pub &'a Mlp);

impl Policy for ActorPolicy<'_> {
    fn action(&self, s: &AugmentedState) -> f64 {
        self.0.forward(&s.normalized).map(|a| a[0]).unwrap_or(0.0)
    }
}
