use rand::Rng;

use super::AgentError;
use crate::env::{ACTION_DIM, CRITIC_OBS_DIM};
use crate::nn::Real;

/// One transition, borrowed from the caller.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a, T> {
    pub obs: &'a [T],
    pub critic_obs: &'a [T],
    pub action: &'a [T],
    pub reward: T,
    pub next_obs: &'a [T],
    pub next_critic_obs: &'a [T],
    /// Terminal for bootstrapping purposes (crash, not time limit).
    pub done: bool,
}

/// A sampled minibatch in row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub size: usize,
    pub obs: Vec<T>,
    pub critic_obs: Vec<T>,
    pub action: Vec<T>,
    pub reward: Vec<T>,
    pub next_obs: Vec<T>,
    pub next_critic_obs: Vec<T>,
    pub done: Vec<T>,
}

/// Fixed-capacity FIFO store of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    obs_dim: usize,
    capacity: usize,
    len: usize,
    next: usize,
    obs: Vec<T>,
    critic_obs: Vec<T>,
    action: Vec<T>,
    reward: Vec<T>,
    next_obs: Vec<T>,
    next_critic_obs: Vec<T>,
    done: Vec<T>,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(obs_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            capacity: capacity.max(1),
            len: 0,
            next: 0,
            obs: Vec::new(),
            critic_obs: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            next_critic_obs: Vec::new(),
            done: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn push(&mut self, t: &Transition<'_, T>) -> Result<(), AgentError> {
        let ok = t.obs.len() == self.obs_dim
            && t.next_obs.len() == self.obs_dim
            && t.critic_obs.len() == CRITIC_OBS_DIM
            && t.next_critic_obs.len() == CRITIC_OBS_DIM
            && t.action.len() == ACTION_DIM;
        if !ok {
            return Err(AgentError::Shape("transition does not match buffer layout".into()));
        }
        let done = if t.done { T::one() } else { T::zero() };
        if self.len < self.capacity {
            self.obs.extend_from_slice(t.obs);
            self.critic_obs.extend_from_slice(t.critic_obs);
            self.action.extend_from_slice(t.action);
            self.reward.push(t.reward);
            self.next_obs.extend_from_slice(t.next_obs);
            self.next_critic_obs.extend_from_slice(t.next_critic_obs);
            self.done.push(done);
            self.len += 1;
        } else {
            let i = self.next;
            let (n, c, a) = (self.obs_dim, CRITIC_OBS_DIM, ACTION_DIM);
            self.obs[i * n..(i + 1) * n].copy_from_slice(t.obs);
            self.critic_obs[i * c..(i + 1) * c].copy_from_slice(t.critic_obs);
            self.action[i * a..(i + 1) * a].copy_from_slice(t.action);
            self.reward[i] = t.reward;
            self.next_obs[i * n..(i + 1) * n].copy_from_slice(t.next_obs);
            self.next_critic_obs[i * c..(i + 1) * c].copy_from_slice(t.next_critic_obs);
            self.done[i] = done;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Copies the transitions at `indices` into a batch.
    pub fn gather(&self, indices: &[usize]) -> Batch<T> {
        let (n, c, a) = (self.obs_dim, CRITIC_OBS_DIM, ACTION_DIM);
        let b = indices.len();
        let mut out = Batch {
            size: b,
            obs: Vec::with_capacity(b * n),
            critic_obs: Vec::with_capacity(b * c),
            action: Vec::with_capacity(b * a),
            reward: Vec::with_capacity(b),
            next_obs: Vec::with_capacity(b * n),
            next_critic_obs: Vec::with_capacity(b * c),
            done: Vec::with_capacity(b),
        };
        for &i in indices {
            out.obs.extend_from_slice(&self.obs[i * n..(i + 1) * n]);
            out.critic_obs.extend_from_slice(&self.critic_obs[i * c..(i + 1) * c]);
            out.action.extend_from_slice(&self.action[i * a..(i + 1) * a]);
            out.reward.push(self.reward[i]);
            out.next_obs.extend_from_slice(&self.next_obs[i * n..(i + 1) * n]);
            out.next_critic_obs.extend_from_slice(&self.next_critic_obs[i * c..(i + 1) * c]);
            out.done.push(self.done[i]);
        }
        out
    }

    /// Uniform minibatch of distinct transitions.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch<T>, AgentError> {
        if batch == 0 || self.len < batch {
            return Err(AgentError::NotEnoughData { have: self.len, need: batch.max(1) });
        }
        let idx = rand::seq::index::sample(rng, self.len, batch).into_vec();
        Ok(self.gather(&idx))
    }
}
