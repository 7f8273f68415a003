use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::policy::{critic_input, offset_head, squash, ActorNet, CriticNet, SquashedSample};
use super::replay::{Batch, ReplayBuffer};
use super::AgentError;
use crate::env::{ObsConfig, ACTION_DIM, CRITIC_OBS_DIM};
use crate::nn::{Adam, AdamConfig, Gradients, Real, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch: usize,
    pub entropy_target: f64,
    pub buffer_capacity: usize,
    pub updates_per_step: usize,
    pub warmup_steps: usize,
    pub twin_critics: bool,
    pub learn_alpha: bool,
    pub alpha_init: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch: 256,
            entropy_target: -(ACTION_DIM as f64),
            buffer_capacity: 1_000_000,
            updates_per_step: 1,
            warmup_steps: 1000,
            twin_critics: true,
            learn_alpha: true,
            alpha_init: 1.0,
            actor_hidden: vec![256, 256, 256],
            critic_hidden: vec![256, 256, 256],
            adam: AdamConfig::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let ok = self.gamma > 0.0
            && self.gamma < 1.0
            && self.tau > 0.0
            && self.tau <= 1.0
            && self.lr >= 0.0
            && self.lr.is_finite()
            && self.batch >= 1
            && self.buffer_capacity >= self.batch
            && self.alpha_init > 0.0
            && self.entropy_target.is_finite()
            && !self.actor_hidden.is_empty()
            && !self.critic_hidden.is_empty()
            && self.actor_hidden.iter().chain(&self.critic_hidden).all(|&w| w > 0);
        if ok {
            Ok(())
        } else {
            Err(AgentError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Losses reported by one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
    /// Temperature used during the update.
    pub alpha_value: f64,
    pub mean_log_prob: f64,
}

/// Actor, critics, target critics, temperature and optimiser state.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent<T = f32> {
    pub cfg: SacConfig,
    pub actor: ActorNet<T>,
    pub critic: CriticNet<T>,
    pub critic_target: CriticNet<T>,
    pub log_alpha: f64,
    actor_opt: Adam<T>,
    critic_opts: Vec<Adam<T>>,
    alpha_opt: Adam<f64>,
    o0: Vec<T>,
    pub updates: u64,
}

pub fn standard_normal<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::c(z)
        })
        .collect()
}

fn to_real<T: Real>(x: f64) -> T {
    T::c(x)
}

fn as_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

impl<T: Real> SacAgent<T> {
    pub fn new<R: Rng + ?Sized>(obs: ObsConfig, cfg: SacConfig, rng: &mut R) -> Result<Self, AgentError> {
        cfg.validate()?;
        let actor = ActorNet::new(obs, &cfg.actor_hidden, rng);
        let critic = CriticNet::new(&cfg.critic_hidden, cfg.twin_critics, rng);
        Ok(Self::from_parts(cfg, actor, critic.clone(), critic, 0))
    }

    /// Reassembles an agent with fresh optimiser state.
    pub fn from_parts(
        cfg: SacConfig,
        actor: ActorNet<T>,
        critic: CriticNet<T>,
        critic_target: CriticNet<T>,
        updates: u64,
    ) -> Self {
        let actor_opt = Adam::for_net(&actor.net, cfg.adam);
        let critic_opts = critic.nets().map(|n| Adam::for_net(n, cfg.adam)).collect();
        let alpha_opt = Adam::new(1, cfg.adam);
        let o0 = actor.obs.hover_observation().into_iter().map(to_real).collect();
        Self {
            log_alpha: cfg.alpha_init.ln(),
            cfg,
            actor,
            critic,
            critic_target,
            actor_opt,
            critic_opts,
            alpha_opt,
            o0,
            updates,
        }
    }

    pub fn obs_config(&self) -> ObsConfig {
        self.actor.obs
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// The perfect-hover observation o0 for the actor's configuration.
    pub fn hover_observation(&self) -> &[T] {
        &self.o0
    }

    /// Pre-squash mean at o0 under the current weights.
    pub fn hover_mean(&self) -> Result<[T; ACTION_DIM], AgentError> {
        self.actor.hover_mean(&self.o0)
    }

    /// Deterministic hover-corrected action.
    pub fn act(&self, obs: &[T]) -> Result<[T; ACTION_DIM], AgentError> {
        self.actor.act(obs, &self.o0)
    }

    /// Stochastic hover-corrected action.
    pub fn explore<R: Rng + ?Sized>(&self, obs: &[T], rng: &mut R) -> Result<[T; ACTION_DIM], AgentError> {
        let eps = standard_normal(ACTION_DIM, rng);
        let s = self.actor.sample_offset(obs, 1, &eps, &self.hover_mean()?)?;
        Ok(std::array::from_fn(|i| s.action[i]))
    }

    /// Samples a minibatch and noise from `rng`, then performs one update.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer<T>, rng: &mut R) -> Result<SacLosses, AgentError> {
        let batch = buffer.sample(self.cfg.batch, rng)?;
        let eps_pi = standard_normal(batch.size * ACTION_DIM, rng);
        let eps_next = standard_normal(batch.size * ACTION_DIM, rng);
        self.update_with_noise(&batch, &eps_pi, &eps_next)
    }

    /// Critic targets `r + gamma (1 - done) (min Q'(s', a') - alpha logp')`.
    pub fn critic_targets(&self, b: &Batch<T>, eps_next: &[T], alpha: T) -> Result<Vec<T>, AgentError> {
        let next = self.actor.sample_offset(&b.next_obs, b.size, eps_next, &self.hover_mean()?)?;
        let q_next = self.critic_target.min_q(&b.next_critic_obs, &next.action, b.size)?;
        let gamma = to_real::<T>(self.cfg.gamma);
        Ok((0..b.size)
            .map(|i| b.reward[i] + gamma * (T::one() - b.done[i]) * (q_next[i] - alpha * next.log_prob[i]))
            .collect())
    }

    /// One SAC step with caller-supplied reparameterisation noise.
    pub fn update_with_noise(&mut self, b: &Batch<T>, eps_pi: &[T], eps_next: &[T]) -> Result<SacLosses, AgentError> {
        let bs = b.size;
        if bs == 0 || eps_pi.len() != bs * ACTION_DIM || eps_next.len() != bs * ACTION_DIM {
            return Err(AgentError::Shape("noise does not match batch".into()));
        }
        if b.critic_obs.len() != bs * CRITIC_OBS_DIM || b.action.len() != bs * ACTION_DIM {
            return Err(AgentError::Shape("batch layout mismatch".into()));
        }
        let lr = self.cfg.lr;
        let inv_b = to_real::<T>(1.0 / bs as f64);

        let mut tape0 = Tape::new();
        let m0 = self.actor.head_tape(&self.o0, 1, &mut tape0)?[..ACTION_DIM].to_vec();
        let mut tape_pi = Tape::new();
        let head_pi = self.actor.head_tape(&b.obs, bs, &mut tape_pi)?.to_vec();
        let pi = squash(&offset_head(&head_pi, &m0), eps_pi)?;

        let alpha = self.log_alpha.exp();
        let alpha_t = to_real::<T>(alpha);
        let mean_log_prob = pi.log_prob.iter().map(|&x| as_f64(x)).sum::<f64>() / bs as f64;
        let alpha_loss = -self.log_alpha * (mean_log_prob + self.cfg.entropy_target);
        if self.cfg.learn_alpha {
            let g = -(mean_log_prob + self.cfg.entropy_target);
            self.alpha_opt.step_iter(std::iter::once(&mut self.log_alpha), std::iter::once(&g), lr);
        }

        let y = self.critic_targets(b, eps_next, alpha_t)?;
        let x = critic_input(&b.critic_obs, &b.action, bs)?;
        let mut critic_loss = 0.0;
        for (net, opt) in self.critic.nets_mut().zip(self.critic_opts.iter_mut()) {
            let mut tape = Tape::new();
            let q = net.forward_tape(&x, bs, &mut tape)?;
            let mut d = Vec::with_capacity(bs);
            let mut sq = 0.0;
            for (qi, yi) in q.iter().zip(&y) {
                let r = *qi - *yi;
                sq += as_f64(r * r);
                d.push(r * inv_b);
            }
            critic_loss += 0.5 * sq / bs as f64;
            let mut g = Gradients::zeros_like(net);
            net.backward(&tape, &d, &mut g, false)?;
            opt.step(net, &g, lr);
        }

        let (actor_loss, grads) = self.actor_objective(b, &pi, &tape_pi, &tape0, alpha_t)?;
        self.actor_opt.step(&mut self.actor.net, &grads, lr);

        let tau = to_real::<T>(self.cfg.tau);
        self.critic_target.soft_update_from(&self.critic, tau);
        self.updates += 1;

        let losses =
            SacLosses { critic: critic_loss, actor: actor_loss, alpha: alpha_loss, alpha_value: alpha, mean_log_prob };
        let finite = critic_loss.is_finite()
            && actor_loss.is_finite()
            && self.log_alpha.is_finite()
            && self.actor.net.is_finite()
            && self.critic.nets().all(|n| n.is_finite());
        if !finite {
            return Err(AgentError::DivergedTraining { update: self.updates });
        }
        Ok(losses)
    }

    /// Actor loss `mean(alpha logp - min Q(s, a))` with `a = tanh(mean(o) - mean(o0) + std eps)`
    /// and its gradient, given the noise.
    pub fn actor_loss_and_grad(&self, b: &Batch<T>, eps_pi: &[T], alpha: T) -> Result<(f64, Gradients<T>), AgentError> {
        let mut tape0 = Tape::new();
        let m0 = self.actor.head_tape(&self.o0, 1, &mut tape0)?[..ACTION_DIM].to_vec();
        let mut tape_pi = Tape::new();
        let head_pi = self.actor.head_tape(&b.obs, b.size, &mut tape_pi)?.to_vec();
        let pi = squash(&offset_head(&head_pi, &m0), eps_pi)?;
        self.actor_objective(b, &pi, &tape_pi, &tape0, alpha)
    }

    fn actor_objective(
        &self,
        b: &Batch<T>,
        pi: &SquashedSample<T>,
        tape_pi: &Tape<T>,
        tape0: &Tape<T>,
        alpha_t: T,
    ) -> Result<(f64, Gradients<T>), AgentError> {
        let bs = b.size;
        let inv_b = to_real::<T>(1.0 / bs as f64);
        let xa = critic_input(&b.critic_obs, &pi.action, bs)?;
        let mut qs = Vec::new();
        let mut tapes = Vec::new();
        for net in self.critic.nets() {
            let mut tape = Tape::new();
            qs.push(net.forward_tape(&xa, bs, &mut tape)?.to_vec());
            tapes.push(tape);
        }
        let chosen: Vec<usize> = (0..bs).map(|i| if qs.len() > 1 && qs[1][i] < qs[0][i] { 1 } else { 0 }).collect();
        let mut dq_da = vec![T::zero(); bs * ACTION_DIM];
        for (k, (net, tape)) in self.critic.nets().zip(&tapes).enumerate() {
            let up: Vec<T> = chosen.iter().map(|&c| if c == k { T::one() } else { T::zero() }).collect();
            if up.iter().all(|u| u.is_zero()) {
                continue;
            }
            let gin = net.input_gradient(tape, &up)?;
            for i in 0..bs {
                let row =
                    &gin[i * (CRITIC_OBS_DIM + ACTION_DIM) + CRITIC_OBS_DIM..(i + 1) * (CRITIC_OBS_DIM + ACTION_DIM)];
                for j in 0..ACTION_DIM {
                    dq_da[i * ACTION_DIM + j] += row[j];
                }
            }
        }
        let mut actor_loss = 0.0;
        for i in 0..bs {
            let q_min = qs[chosen[i]][i];
            actor_loss += as_f64(alpha_t * pi.log_prob[i] - q_min);
        }
        actor_loss /= bs as f64;

        let two = to_real::<T>(2.0);
        let mut d_head = vec![T::zero(); bs * 2 * ACTION_DIM];
        let mut d_head0 = vec![T::zero(); 2 * ACTION_DIM];
        for i in 0..bs {
            for j in 0..ACTION_DIM {
                let k = i * ACTION_DIM + j;
                let (t, s, e, g) = (pi.action[k], pi.std[k], pi.eps[k], dq_da[k]);
                let jac = T::one() - t * t;
                let d_mean = (alpha_t * two * t - g * jac) * inv_b;
                d_head[i * 2 * ACTION_DIM + j] = d_mean;
                if !pi.clamped[k] {
                    d_head[i * 2 * ACTION_DIM + ACTION_DIM + j] =
                        (alpha_t * (two * t * s * e - T::one()) - g * jac * s * e) * inv_b;
                }
                d_head0[j] -= d_mean;
            }
        }
        let mut grads = Gradients::zeros_like(&self.actor.net);
        self.actor.net.backward(tape_pi, &d_head, &mut grads, false)?;
        self.actor.net.backward(tape0, &d_head0, &mut grads, false)?;
        Ok((actor_loss, grads))
    }
}
