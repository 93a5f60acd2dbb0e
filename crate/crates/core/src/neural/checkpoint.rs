//! Plain-text checkpoints.
//!
//! ```text
//! voltreach-checkpoint 1
//! config_hash <hex>
//! state_dim <d>
//! mechanisms <M>
//! critic_pairs <P>
//! env_steps <n>
//! updates <n>
//! averaged <0|1>
//! net <name> <dims comma-separated> <hidden> <head>
//! adam <t> <lr> <beta1> <beta2> <eps>
//! <one line per weight row, then one line of biases, for every layer>
//! <the same for the Adam first and second moments>
//! ...
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so save/load is
//! bit-exact.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::adam::{Adam, AdamConfig};
use super::mlp::{Activation, Layer, Mlp};
use super::td3::{CriticPair, Ensemble, PolicyAverage};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "voltreach-checkpoint";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub env_steps: u64,
}

fn write_layers(out: &mut String, layers: &[Layer]) {
    for l in layers {
        for row in l.w.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        let line: Vec<String> = l.b.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

fn write_net(out: &mut String, name: &str, net: &Mlp, opt: Option<&Adam>) {
    let dims: Vec<String> = net.dims().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "net {name} {} {} {}", dims.join(","), net.hidden.tag(), net.head.tag());
    write_layers(out, &net.layers);
    if let Some(a) = opt {
        let c = a.config;
        let _ = writeln!(out, "adam {} {:?} {:?} {:?} {:?}", a.t, c.lr, c.beta1, c.beta2, c.eps);
        write_layers(out, &a.m);
        write_layers(out, &a.v);
    }
}

/// Networks in checkpoint order, with their optimizers where they have one.
fn named_nets(e: &Ensemble) -> Vec<(String, &Mlp, Option<&Adam>)> {
    let mut v = vec![
        ("actor".to_string(), &e.actor, Some(&e.actor_opt)),
        ("actor_target".to_string(), &e.actor_target, None),
    ];
    for (p, c) in e.critics.iter().enumerate() {
        for k in 0..2 {
            v.push((format!("critic{p}_{}", k + 1), &c.q[k], Some(&c.opt[k])));
            v.push((format!("critic{p}_{}_target", k + 1), &c.target[k], None));
        }
    }
    if let Some(avg) = &e.average {
        v.push(("average_actor".to_string(), &avg.actor, None));
        for (p, c) in avg.critics.iter().enumerate() {
            v.push((format!("average_critic{p}"), c, None));
        }
    }
    v
}

pub fn save_checkpoint<W: Write>(e: &Ensemble, meta: &CheckpointMeta, mut w: W) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "config_hash {}", meta.config_hash);
    let _ = writeln!(out, "state_dim {}", e.state_dim);
    let _ = writeln!(out, "mechanisms {}", e.mechanisms);
    let _ = writeln!(out, "critic_pairs {}", e.critics.len());
    let _ = writeln!(out, "env_steps {}", meta.env_steps);
    let _ = writeln!(out, "updates {}", e.updates);
    let _ = writeln!(out, "averaged {}", u8::from(e.average.is_some()));
    for (name, net, opt) in named_nets(e) {
        write_net(&mut out, &name, net, opt);
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::Io(e.to_string()))
}

struct Reader<I> {
    lines: I,
    line_no: usize,
}

impl<I: Iterator<Item = std::io::Result<String>>> Reader<I> {
    fn next_line(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::Io(e.to_string())),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line_no))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.err(&format!("expected `{key}`")));
        }
        Ok(parts.map(str::to_string).collect())
    }

    fn keyed_u64(&mut self, key: &str) -> Result<u64> {
        let v = self.keyed(key)?;
        v.first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(&format!("bad value for `{key}`")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err("bad float"))?;
        if v.len() != n {
            return Err(self.err(&format!("expected {n} values, found {}", v.len())));
        }
        Ok(v)
    }

    fn layers(&mut self, dims: &[usize]) -> Result<Vec<Layer>> {
        let mut out = Vec::new();
        for d in dims.windows(2) {
            let mut l = Layer::zeros(d[0], d[1]);
            for i in 0..d[0] {
                let row = self.floats(d[1])?;
                l.w.row_mut(i).iter_mut().zip(row).for_each(|(a, b)| *a = b);
            }
            l.b = self.floats(d[1])?.into();
            out.push(l);
        }
        Ok(out)
    }

    fn net(&mut self, name: &str, with_opt: bool) -> Result<(Mlp, Option<Adam>)> {
        let head = self.keyed("net")?;
        if head.len() != 4 || head[0] != name {
            return Err(self.err(&format!("expected network `{name}`")));
        }
        let dims: Vec<usize> = head[1]
            .split(',')
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.err("bad dims"))?;
        if dims.len() < 2 {
            return Err(self.err("network needs at least two sizes"));
        }
        let hidden = Activation::from_tag(&head[2]).ok_or_else(|| self.err("unknown activation"))?;
        let out_act = Activation::from_tag(&head[3]).ok_or_else(|| self.err("unknown activation"))?;
        let net = Mlp {
            layers: self.layers(&dims)?,
            hidden,
            head: out_act,
        };
        let opt = if with_opt {
            let a = self.keyed("adam")?;
            let nums: Vec<f64> = a.iter().skip(1).filter_map(|s| s.parse().ok()).collect();
            let t = a.first().and_then(|s| s.parse().ok());
            let (Some(t), [lr, beta1, beta2, eps]) = (t, nums.as_slice()) else {
                return Err(self.err("bad adam header"));
            };
            Some(Adam {
                config: AdamConfig {
                    lr: *lr,
                    beta1: *beta1,
                    beta2: *beta2,
                    eps: *eps,
                },
                t,
                m: self.layers(&dims)?,
                v: self.layers(&dims)?,
            })
        } else {
            None
        };
        Ok((net, opt))
    }
}

pub fn load_checkpoint<R: BufRead>(r: R) -> Result<(Ensemble, CheckpointMeta)> {
    let mut rd = Reader {
        lines: r.lines(),
        line_no: 0,
    };
    let head = rd.next_line()?;
    match head.split_whitespace().collect::<Vec<_>>().as_slice() {
        [MAGIC, v] if v.parse() == Ok(CHECKPOINT_VERSION) => {}
        _ => return Err(rd.err("not a version-1 checkpoint")),
    }
    let config_hash = rd.keyed("config_hash")?.first().cloned().unwrap_or_default();
    let state_dim = rd.keyed_u64("state_dim")? as usize;
    let mechanisms = rd.keyed_u64("mechanisms")? as usize;
    let pairs = rd.keyed_u64("critic_pairs")? as usize;
    let env_steps = rd.keyed_u64("env_steps")?;
    let updates = rd.keyed_u64("updates")?;
    let averaged = match rd.keyed_u64("averaged")? {
        0 => false,
        1 => true,
        _ => return Err(rd.err("bad value for `averaged`")),
    };
    let (actor, actor_opt) = rd.net("actor", true)?;
    let (actor_target, _) = rd.net("actor_target", false)?;
    let mut critics = Vec::with_capacity(pairs);
    for p in 0..pairs {
        let (q1, o1) = rd.net(&format!("critic{p}_1"), true)?;
        let (t1, _) = rd.net(&format!("critic{p}_1_target"), false)?;
        let (q2, o2) = rd.net(&format!("critic{p}_2"), true)?;
        let (t2, _) = rd.net(&format!("critic{p}_2_target"), false)?;
        critics.push(CriticPair {
            q: [q1, q2],
            target: [t1, t2],
            opt: [o1.unwrap(), o2.unwrap()],
        });
    }
    let average = if averaged {
        let (actor, _) = rd.net("average_actor", false)?;
        let critics = (0..pairs)
            .map(|p| rd.net(&format!("average_critic{p}"), false).map(|n| n.0))
            .collect::<Result<Vec<_>>>()?;
        Some(PolicyAverage { actor, critics })
    } else {
        None
    };
    if actor.input_dim() != state_dim || critics.iter().any(|c| c.q[0].input_dim() != state_dim + 1) {
        return Err(Error::Checkpoint("network dimensions disagree with state_dim".into()));
    }
    let ensemble = Ensemble {
        state_dim,
        mechanisms,
        actor,
        actor_target,
        actor_opt: actor_opt.unwrap(),
        critics,
        updates,
        average,
    };
    Ok((ensemble, CheckpointMeta { config_hash, env_steps }))
}
