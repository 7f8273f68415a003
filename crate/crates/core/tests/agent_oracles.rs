mod common;

use common::{ks_p_value, ks_statistic, naive_forward, normal_cdf};
use quadbench::agent::{squash, Batch, CriticNet, ReplayBuffer, SacAgent, SacConfig, Transition, CRITIC_INPUT_DIM};
use quadbench::env::{ObsConfig, ACTION_DIM, CRITIC_OBS_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(twin: bool) -> SacConfig {
    SacConfig {
        batch: 2,
        buffer_capacity: 16,
        actor_hidden: vec![6, 5],
        critic_hidden: vec![7, 4],
        twin_critics: twin,
        ..Default::default()
    }
}

fn obs() -> ObsConfig {
    "eW-R-u".parse::<ObsConfig>().unwrap().with_history(2)
}

fn random_batch(dim: usize, size: usize, rng: &mut ChaCha8Rng) -> Batch<f64> {
    let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    Batch {
        size,
        obs: v(size * dim),
        critic_obs: v(size * CRITIC_OBS_DIM),
        action: v(size * ACTION_DIM),
        reward: v(size),
        next_obs: v(size * dim),
        next_critic_obs: v(size * CRITIC_OBS_DIM),
        done: (0..size).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect(),
    }
}

/// `min_k Q_k(s, a)` evaluated by straight loops.
fn oracle_min_q(critic: &CriticNet<f64>, c: &[f64], a: &[f64]) -> f64 {
    let mut x = c.to_vec();
    x.extend_from_slice(a);
    assert_eq!(x.len(), CRITIC_INPUT_DIM);
    critic.nets().map(|n| naive_forward(n, &x)[0]).fold(f64::INFINITY, f64::min)
}

/// Critic target computed from the definition, without the library's batched path.
fn oracle_targets(agent: &SacAgent<f64>, b: &Batch<f64>, eps_next: &[f64], alpha: f64) -> Vec<f64> {
    let dim = agent.actor.input_dim();
    let head0 = naive_forward(&agent.actor.net, agent.hover_observation());
    (0..b.size)
        .map(|i| {
            let head = naive_forward(&agent.actor.net, &b.next_obs[i * dim..(i + 1) * dim]);
            let mut a = [0.0; ACTION_DIM];
            let mut logp = 0.0;
            for j in 0..ACTION_DIM {
                let log_std = head[ACTION_DIM + j].clamp(-20.0, 2.0);
                let e = eps_next[i * ACTION_DIM + j];
                let u = head[j] - head0[j] + log_std.exp() * e;
                let normal = -0.5 * e * e - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln();
                logp += normal - (1.0 - u.tanh().powi(2)).ln();
                a[j] = u.tanh();
            }
            let q = oracle_min_q(
                &agent.critic_target,
                &b.next_critic_obs[i * CRITIC_OBS_DIM..(i + 1) * CRITIC_OBS_DIM],
                &a,
            );
            b.reward[i] + agent.cfg.gamma * (1.0 - b.done[i]) * (q - alpha * logp)
        })
        .collect()
}

#[test]
fn critic_loss_matches_target_formula_oracle() {
    for twin in [true, false] {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut agent = SacAgent::<f64>::new(obs(), tiny(twin), &mut rng).unwrap();
        let b = random_batch(agent.actor.input_dim(), 2, &mut rng);
        let eps_pi: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let eps_next: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let alpha = agent.alpha();
        let y = oracle_targets(&agent, &b, &eps_next, alpha);
        let before = agent.critic.clone();
        let mut expected = 0.0;
        for net in before.nets() {
            let mut sq = 0.0;
            for i in 0..2 {
                let mut x = b.critic_obs[i * CRITIC_OBS_DIM..(i + 1) * CRITIC_OBS_DIM].to_vec();
                x.extend_from_slice(&b.action[i * ACTION_DIM..(i + 1) * ACTION_DIM]);
                sq += (naive_forward(net, &x)[0] - y[i]).powi(2);
            }
            expected += 0.5 * sq / 2.0;
        }
        let losses = agent.update_with_noise(&b, &eps_pi, &eps_next).unwrap();
        assert!((losses.critic - expected).abs() < 1e-6, "twin={twin}: {} vs {expected}", losses.critic);
        assert_eq!(losses.alpha_value, alpha);
    }
}

#[test]
fn terminal_target_with_zero_discount_is_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let cfg = SacConfig { gamma: 1e-300, ..tiny(true) };
    let agent = SacAgent::<f64>::new(obs(), cfg, &mut rng).unwrap();
    let mut b = random_batch(agent.actor.input_dim(), 1, &mut rng);
    b.done = vec![1.0];
    let y = agent.critic_targets(&b, &[0.3, -0.1, 0.7, 0.0], 0.0).unwrap();
    assert_eq!(y, b.reward);
}

#[test]
fn reward_shift_moves_targets_by_the_same_amount() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let agent = SacAgent::<f64>::new(obs(), tiny(true), &mut rng).unwrap();
    let b = random_batch(agent.actor.input_dim(), 6, &mut rng);
    let eps: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y0 = agent.critic_targets(&b, &eps, 0.2).unwrap();
    let delta = 0.37;
    let mut shifted = b.clone();
    shifted.reward.iter_mut().for_each(|r| *r += delta);
    let y1 = agent.critic_targets(&shifted, &eps, 0.2).unwrap();
    for (a, c) in y0.iter().zip(&y1) {
        assert!((c - a - delta).abs() < 1e-12);
    }
    let oracle = oracle_targets(&agent, &b, &eps, 0.2);
    for (a, o) in y0.iter().zip(&oracle) {
        assert!((a - o).abs() < 1e-12);
    }
}

/// Central differences of the actor loss, including the gradient through the hover action.
#[test]
fn actor_gradient_matches_finite_differences() {
    for twin in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut agent = SacAgent::<f64>::new(obs(), tiny(twin), &mut rng).unwrap();
        for p in agent.actor.net.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let b = random_batch(agent.actor.input_dim(), 5, &mut rng);
        let eps: Vec<f64> = (0..20).map(|_| rng.random_range(-1.5..1.5)).collect();
        let alpha = 0.3;
        let (_, grads) = agent.actor_loss_and_grad(&b, &eps, alpha).unwrap();
        let analytic: Vec<f64> = grads.iter().copied().collect();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..analytic.len() {
            let mut plus = agent.clone();
            *plus.actor.net.params_mut().nth(k).unwrap() += h;
            let mut minus = agent.clone();
            *minus.actor.net.params_mut().nth(k).unwrap() -= h;
            let lp = plus.actor_loss_and_grad(&b, &eps, alpha).unwrap().0;
            let lm = minus.actor_loss_and_grad(&b, &eps, alpha).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            let err = (numeric - analytic[k]).abs() / (1e-6 + numeric.abs().max(analytic[k].abs()));
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "twin={twin}: worst relative error {worst}");
    }
}

/// The squashed-Gaussian log-density integrates to the distribution of its own samples.
#[test]
fn log_density_matches_sample_distribution() {
    let head = [0.4f64, -0.2, 0.1, 0.0, -0.6, -1.0, -1.0, -1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 100_000;
    let eps: Vec<f64> =
        (0..n * ACTION_DIM).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    let heads: Vec<f64> = head.repeat(n);
    let s = squash(&heads, &eps).unwrap();
    let mut first: Vec<f64> = s.action.chunks(ACTION_DIM).map(|a| a[0]).collect();

    // Numerical CDF of exp(logp) along the first action coordinate, others held at eps = 0.
    let std0 = head[ACTION_DIM].exp();
    let grid = 20_000;
    let xs: Vec<f64> = (0..=grid).map(|i| -1.0 + 2.0 * i as f64 / grid as f64).collect();
    let dens: Vec<f64> = xs
        .iter()
        .map(|&a| {
            if a.abs() >= 1.0 {
                return 0.0;
            }
            let e = (a.atanh() - head[0]) / std0;
            squash(&head, &[e, 0.0, 0.0, 0.0]).unwrap().log_prob[0].exp()
        })
        .collect();
    let mut cum = vec![0.0; xs.len()];
    for i in 1..xs.len() {
        cum[i] = cum[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (xs[i] - xs[i - 1]);
    }
    let total = cum[grid];
    let cdf = |x: f64| {
        let pos = ((x + 1.0) / 2.0 * grid as f64).clamp(0.0, grid as f64 - 1e-9);
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        (cum[i] * (1.0 - w) + cum[i + 1] * w) / total
    };
    let d = ks_statistic(&mut first, cdf);
    let p = ks_p_value(d, n);
    assert!(p > 0.01, "KS d={d} p={p}");

    // Sanity: the closed-form marginal CDF agrees with the numerical one.
    for &x in &[-0.5, 0.0, 0.3, 0.8] {
        let exact = normal_cdf((f64::atanh(x) - head[0]) / std0);
        assert!((cdf(x) - exact).abs() < 1e-3, "{x}: {} vs {exact}", cdf(x));
    }
}

#[test]
fn replay_sampling_is_reproducible() {
    let mut buf = ReplayBuffer::<f32>::new(3, 100);
    for k in 0..40 {
        let v = k as f32;
        buf.push(&Transition {
            obs: &[v; 3],
            critic_obs: &[v; CRITIC_OBS_DIM],
            action: &[0.0; ACTION_DIM],
            reward: v,
            next_obs: &[v; 3],
            next_critic_obs: &[v; CRITIC_OBS_DIM],
            done: false,
        })
        .unwrap();
    }
    let a = buf.sample(16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = buf.sample(16, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
}
