use rand::Rng;

use super::AgentError;
use crate::env::{EnvConfig, ObsConfig, PolicyAction, ACTION_DIM, CRITIC_OBS_DIM};
use crate::nn::{Activation, Dense, Mlp, Real, Tape};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_INIT: f64 = -1.0;
const HEAD_INIT_SCALE: f64 = 3e-3;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_2: f64 = std::f64::consts::LN_2;

fn trunk<T: Real, R: Rng + ?Sized>(
    input: usize,
    hidden: &[usize],
    output: usize,
    act: Activation,
    rng: &mut R,
) -> Vec<Dense<T>> {
    let gain = match act {
        Activation::Tanh => 5.0 / 3.0,
        _ => std::f64::consts::SQRT_2,
    };
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        layers.push(Dense::orthogonal(prev, h, act, gain, rng));
        prev = h;
    }
    layers.push(Dense::uniform(prev, output, Activation::Linear, HEAD_INIT_SCALE, rng));
    layers
}

/// Squashed-Gaussian policy: the network emits `[mean | log_std]` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorNet<T = f32> {
    pub net: Mlp<T>,
    pub obs: ObsConfig,
}

/// Actions and log-densities of a batch of reparameterised samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample<T> {
    /// `tanh(mean + std * eps)`, `batch x 4`.
    pub action: Vec<T>,
    pub log_prob: Vec<T>,
    pub std: Vec<T>,
    pub eps: Vec<T>,
    /// Whether the raw log-std fell outside its clamp range.
    pub clamped: Vec<bool>,
}

impl<T: Real> ActorNet<T> {
    pub fn new<R: Rng + ?Sized>(obs: ObsConfig, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = trunk(obs.input_width(), hidden, 2 * ACTION_DIM, Activation::Tanh, rng);
        let head = layers.last_mut().expect("head layer");
        for b in &mut head.bias[ACTION_DIM..] {
            *b = T::c(LOG_STD_INIT);
        }
        Self { net: Mlp::new(layers).expect("consistent widths"), obs }
    }

    pub fn zeros(obs: ObsConfig, hidden: &[usize]) -> Self {
        let mut widths = vec![obs.input_width()];
        widths.extend_from_slice(hidden);
        widths.push(2 * ACTION_DIM);
        let mut acts = vec![Activation::Tanh; hidden.len()];
        acts.push(Activation::Linear);
        Self { net: Mlp::zeros(&widths, &acts).expect("consistent widths"), obs }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn check(&self, obs: &[T], batch: usize) -> Result<(), AgentError> {
        if batch == 0 || obs.len() != batch * self.input_dim() {
            return Err(AgentError::Shape(format!(
                "observation of length {} is not {} x {}",
                obs.len(),
                batch,
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Raw head output `[mean | log_std]` for each sample.
    pub fn head(&self, obs: &[T], batch: usize) -> Result<Vec<T>, AgentError> {
        self.check(obs, batch)?;
        Ok(self.net.forward(obs, batch)?)
    }

    pub fn head_tape<'t>(&self, obs: &[T], batch: usize, tape: &'t mut Tape<T>) -> Result<&'t [T], AgentError> {
        self.check(obs, batch)?;
        Ok(self.net.forward_tape(obs, batch, tape)?)
    }

    /// `tanh(mean)` for each sample.
    pub fn deterministic(&self, obs: &[T], batch: usize) -> Result<Vec<T>, AgentError> {
        let head = self.head(obs, batch)?;
        Ok(mean_action(&head))
    }

    /// Reparameterised samples with `eps ~ N(0, I)` supplied by the caller.
    pub fn sample(&self, obs: &[T], batch: usize, eps: &[T]) -> Result<SquashedSample<T>, AgentError> {
        let head = self.head(obs, batch)?;
        squash(&head, eps)
    }

    /// Pre-squash mean at `o0`, the hover offset.
    pub fn hover_mean(&self, o0: &[T]) -> Result<[T; ACTION_DIM], AgentError> {
        let head = self.head(o0, 1)?;
        Ok(std::array::from_fn(|i| head[i]))
    }

    /// Reparameterised samples of the hover-corrected policy `tanh(mean(o) - mean(o0) + std * eps)`.
    pub fn sample_offset(&self, obs: &[T], batch: usize, eps: &[T], m0: &[T]) -> Result<SquashedSample<T>, AgentError> {
        let head = self.head(obs, batch)?;
        squash(&offset_head(&head, m0), eps)
    }

    /// Hover-corrected deterministic action `tanh(mean(o) - mean(o0))`.
    pub fn act(&self, obs: &[T], o0: &[T]) -> Result<[T; ACTION_DIM], AgentError> {
        let head = self.head(obs, 1)?;
        let m0 = self.hover_mean(o0)?;
        Ok(offset_action(&head[..ACTION_DIM], &m0))
    }

    pub fn act_policy(&self, obs: &[T], o0: &[T], env: &EnvConfig) -> Result<PolicyAction, AgentError> {
        let a = self.act(obs, o0)?;
        let a64 = a.map(|x| x.to_f64().unwrap_or(f64::NAN));
        Ok(PolicyAction::from_normalized(&a64, env))
    }
}

/// `tanh(m - m0)`, which lies in `[-1, 1]` and is exactly zero when `m == m0`.
pub fn offset_action<T: Real>(m: &[T], m0: &[T]) -> [T; ACTION_DIM] {
    std::array::from_fn(|i| (m[i] - m0[i]).tanh())
}

/// Head outputs with `m0` subtracted from every mean.
pub fn offset_head<T: Real>(head: &[T], m0: &[T]) -> Vec<T> {
    let mut out = head.to_vec();
    for row in out.chunks_exact_mut(2 * ACTION_DIM) {
        for i in 0..ACTION_DIM {
            row[i] = row[i] - m0[i];
        }
    }
    out
}

/// `tanh(mean)` from a batch of head outputs.
pub fn mean_action<T: Real>(head: &[T]) -> Vec<T> {
    head.chunks_exact(2 * ACTION_DIM).flat_map(|row| row[..ACTION_DIM].iter().map(|m| m.tanh())).collect()
}

/// `log(1 - tanh(u)^2)`, computed without cancellation.
pub fn log1m_tanh_sq<T: Real>(u: T) -> T {
    let two = T::c(2.0);
    let softplus = |x: T| if x > T::zero() { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    two * (T::c(LN_2) - u - softplus(-two * u))
}

/// Squashes a batch of head outputs with the given standard-normal noise.
pub fn squash<T: Real>(head: &[T], eps: &[T]) -> Result<SquashedSample<T>, AgentError> {
    let batch = head.len() / (2 * ACTION_DIM);
    if head.len() != batch * 2 * ACTION_DIM || eps.len() != batch * ACTION_DIM {
        return Err(AgentError::Shape(format!("noise of length {} does not match {} samples", eps.len(), batch)));
    }
    let (lo, hi) = (T::c(LOG_STD_MIN), T::c(LOG_STD_MAX));
    let half_ln_2pi = T::c(0.5 * LN_2PI);
    let mut s = SquashedSample {
        action: Vec::with_capacity(batch * ACTION_DIM),
        log_prob: Vec::with_capacity(batch),
        std: Vec::with_capacity(batch * ACTION_DIM),
        eps: eps.to_vec(),
        clamped: Vec::with_capacity(batch * ACTION_DIM),
    };
    for (row, e) in head.chunks_exact(2 * ACTION_DIM).zip(eps.chunks_exact(ACTION_DIM)) {
        let mut lp = T::zero();
        for i in 0..ACTION_DIM {
            let raw = row[ACTION_DIM + i];
            let log_std = raw.max(lo).min(hi);
            let std = log_std.exp();
            let u = row[i] + std * e[i];
            lp += -T::c(0.5) * e[i] * e[i] - log_std - half_ln_2pi - log1m_tanh_sq(u);
            s.action.push(u.tanh());
            s.std.push(std);
            s.clamped.push(raw < lo || raw > hi);
        }
        s.log_prob.push(lp);
    }
    Ok(s)
}

/// One or two Q-networks over `[critic_obs | action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet<T = f32> {
    pub q1: Mlp<T>,
    pub q2: Option<Mlp<T>>,
}

pub const CRITIC_INPUT_DIM: usize = CRITIC_OBS_DIM + ACTION_DIM;

impl<T: Real> CriticNet<T> {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], twin: bool, rng: &mut R) -> Self {
        let q1 = Mlp::new(trunk(CRITIC_INPUT_DIM, hidden, 1, Activation::Relu, rng)).expect("consistent widths");
        let q2 = twin.then(|| Mlp::new(trunk(CRITIC_INPUT_DIM, hidden, 1, Activation::Relu, rng)).expect("widths"));
        Self { q1, q2 }
    }

    pub fn zeros(hidden: &[usize], twin: bool) -> Self {
        let mut widths = vec![CRITIC_INPUT_DIM];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Linear);
        let q1 = Mlp::zeros(&widths, &acts).expect("consistent widths");
        Self { q2: twin.then(|| q1.clone()), q1 }
    }

    pub fn is_twin(&self) -> bool {
        self.q2.is_some()
    }

    pub fn nets(&self) -> impl Iterator<Item = &Mlp<T>> {
        std::iter::once(&self.q1).chain(self.q2.as_ref())
    }

    pub fn nets_mut(&mut self) -> impl Iterator<Item = &mut Mlp<T>> {
        std::iter::once(&mut self.q1).chain(self.q2.as_mut())
    }

    /// `(q1, q2)` per sample; `q2` is absent for a single critic.
    pub fn forward(
        &self,
        critic_obs: &[T],
        action: &[T],
        batch: usize,
    ) -> Result<(Vec<T>, Option<Vec<T>>), AgentError> {
        let x = critic_input(critic_obs, action, batch)?;
        let q1 = self.q1.forward(&x, batch)?;
        let q2 = match &self.q2 {
            Some(n) => Some(n.forward(&x, batch)?),
            None => None,
        };
        Ok((q1, q2))
    }

    /// Elementwise minimum over the available heads.
    pub fn min_q(&self, critic_obs: &[T], action: &[T], batch: usize) -> Result<Vec<T>, AgentError> {
        let (q1, q2) = self.forward(critic_obs, action, batch)?;
        Ok(match q2 {
            Some(q2) => q1.iter().zip(&q2).map(|(a, b)| a.min(*b)).collect(),
            None => q1,
        })
    }

    pub fn soft_update_from(&mut self, online: &CriticNet<T>, tau: T) {
        for (t, o) in self.nets_mut().zip(online.nets()) {
            t.soft_update_from(o, tau);
        }
    }
}

/// Row-wise concatenation `[critic_obs | action]`.
pub fn critic_input<T: Real>(critic_obs: &[T], action: &[T], batch: usize) -> Result<Vec<T>, AgentError> {
    if critic_obs.len() != batch * CRITIC_OBS_DIM || action.len() != batch * ACTION_DIM {
        return Err(AgentError::Shape(format!(
            "critic input of {} + {} values is not {} samples of {} + {}",
            critic_obs.len(),
            action.len(),
            batch,
            CRITIC_OBS_DIM,
            ACTION_DIM
        )));
    }
    let mut x = Vec::with_capacity(batch * CRITIC_INPUT_DIM);
    for (c, a) in critic_obs.chunks_exact(CRITIC_OBS_DIM).zip(action.chunks_exact(ACTION_DIM)) {
        x.extend_from_slice(c);
        x.extend_from_slice(a);
    }
    Ok(x)
}
