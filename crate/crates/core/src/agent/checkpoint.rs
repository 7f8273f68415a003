//! Binary checkpoints: magic, a length-prefixed JSON header, then little-endian `f32` parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ActorNet, AgentError, CriticNet, SacAgent, SacConfig};
use crate::env::ObsConfig;
use crate::nn::{Activation, Dense, Mlp};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QBCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerHeader {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetHeader {
    role: String,
    layers: Vec<LayerHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    obs_name: String,
    obs: ObsConfig,
    sac: SacConfig,
    step: u64,
    log_alpha: f64,
    nets: Vec<NetHeader>,
}

fn net_header(role: &str, net: &Mlp<f32>) -> NetHeader {
    NetHeader {
        role: role.to_string(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerHeader { in_dim: l.in_dim, out_dim: l.out_dim, activation: l.activation })
            .collect(),
    }
}

fn named_nets(agent: &SacAgent<f32>) -> Vec<(&'static str, &Mlp<f32>)> {
    let mut nets = vec![("actor", &agent.actor.net), ("q1", &agent.critic.q1)];
    if let Some(q2) = &agent.critic.q2 {
        nets.push(("q2", q2));
    }
    nets.push(("q1_target", &agent.critic_target.q1));
    if let Some(q2) = &agent.critic_target.q2 {
        nets.push(("q2_target", q2));
    }
    nets
}

/// Serialises the actor, critics, target critics and temperature.
pub fn write_checkpoint<W: Write>(agent: &SacAgent<f32>, step: u64, mut w: W) -> Result<(), AgentError> {
    let nets = named_nets(agent);
    let header = Header {
        obs_name: agent.actor.obs.name(),
        obs: agent.actor.obs,
        sac: agent.cfg.clone(),
        step,
        log_alpha: agent.log_alpha,
        nets: nets.iter().map(|(role, n)| net_header(role, n)).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for (_, net) in &nets {
        for layer in net.layers() {
            for x in layer.weights.iter().chain(&layer.bias) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint; optimiser state starts fresh. Returns the agent and its training step.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(SacAgent<f32>, u64), AgentError> {
    let bad = |m: &str| AgentError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let mut floats = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let expected: usize = header.nets.iter().flat_map(|n| &n.layers).map(|l| l.in_dim * l.out_dim + l.out_dim).sum();
    if body.len() != 4 * expected {
        return Err(bad("parameter block size does not match header"));
    }
    let mut nets = Vec::new();
    for nh in &header.nets {
        let mut layers = Vec::new();
        for l in &nh.layers {
            let mut d = Dense::<f32>::zeros(l.in_dim, l.out_dim, l.activation);
            for x in d.weights.iter_mut().chain(d.bias.iter_mut()) {
                *x = floats.next().ok_or_else(|| bad("truncated parameters"))?;
            }
            layers.push(d);
        }
        nets.push((nh.role.clone(), Mlp::new(layers)?));
    }
    let mut take = |role: &str| nets.iter().position(|(r, _)| r == role).map(|i| nets.remove(i).1);
    let actor = take("actor").ok_or_else(|| bad("missing actor"))?;
    let q1 = take("q1").ok_or_else(|| bad("missing q1"))?;
    let q2 = take("q2");
    let q1_target = take("q1_target").ok_or_else(|| bad("missing q1_target"))?;
    let q2_target = take("q2_target");
    if actor.input_dim() != header.obs.input_width() {
        return Err(bad("actor input width does not match observation config"));
    }
    let actor = ActorNet { net: actor, obs: header.obs };
    let critic = CriticNet { q1, q2 };
    let target = CriticNet { q1: q1_target, q2: q2_target };
    let mut agent = SacAgent::from_parts(header.sac, actor, critic, target, header.step);
    agent.log_alpha = header.log_alpha;
    Ok((agent, header.step))
}

pub fn save_checkpoint(agent: &SacAgent<f32>, step: u64, path: &Path) -> Result<(), AgentError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(agent, step, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SacAgent<f32>, u64), AgentError> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
