//! Ring-buffer experience replay.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: f64,
    /// Per-mechanism rewards.
    pub r: Vec<f64>,
    pub r_total: f64,
    pub s2: Vec<f64>,
    pub done: Vec<bool>,
    pub done_total: bool,
}

/// Column-stacked minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Array2<f64>,
    pub r_total: Array1<f64>,
    pub s2: Array2<f64>,
    /// 1.0 where terminal.
    pub done: Array2<f64>,
    pub done_total: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub capacity: usize,
    pub state_dim: usize,
    pub mechanisms: usize,
    next: usize,
    s: Vec<f64>,
    a: Vec<f64>,
    r: Vec<f64>,
    r_total: Vec<f64>,
    s2: Vec<f64>,
    done: Vec<bool>,
    done_total: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, mechanisms: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            mechanisms,
            next: 0,
            s: Vec::new(),
            a: Vec::new(),
            r: Vec::new(),
            r_total: Vec::new(),
            s2: Vec::new(),
            done: Vec::new(),
            done_total: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Stores `t`, overwriting the oldest entry once full.
    pub fn push(&mut self, t: &Transition) -> Result<()> {
        let (d, m) = (self.state_dim, self.mechanisms);
        if t.s.len() != d || t.s2.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: t.s.len().max(t.s2.len()),
            });
        }
        if t.r.len() != m || t.done.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: t.r.len(),
            });
        }
        if self.len() < self.capacity {
            self.s.extend(&t.s);
            self.a.push(t.a);
            self.r.extend(&t.r);
            self.r_total.push(t.r_total);
            self.s2.extend(&t.s2);
            self.done.extend(&t.done);
            self.done_total.push(t.done_total);
        } else {
            let i = self.next;
            self.s[i * d..(i + 1) * d].copy_from_slice(&t.s);
            self.a[i] = t.a;
            self.r[i * m..(i + 1) * m].copy_from_slice(&t.r);
            self.r_total[i] = t.r_total;
            self.s2[i * d..(i + 1) * d].copy_from_slice(&t.s2);
            self.done[i * m..(i + 1) * m].copy_from_slice(&t.done);
            self.done_total[i] = t.done_total;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Transition {
        let (d, m) = (self.state_dim, self.mechanisms);
        Transition {
            s: self.s[i * d..(i + 1) * d].to_vec(),
            a: self.a[i],
            r: self.r[i * m..(i + 1) * m].to_vec(),
            r_total: self.r_total[i],
            s2: self.s2[i * d..(i + 1) * d].to_vec(),
            done: self.done[i * m..(i + 1) * m].to_vec(),
            done_total: self.done_total[i],
        }
    }

    /// Text dump: a `buffer <len> <next> <state_dim> <mechanisms>` header,
    /// then one transition per line in storage order.
    pub fn write_text(&self, out: &mut String) {
        use std::fmt::Write as _;
        let _ = writeln!(out, "buffer {} {} {} {}", self.len(), self.next, self.state_dim, self.mechanisms);
        for i in 0..self.len() {
            let t = self.get(i);
            let mut f: Vec<String> = t.s.iter().map(|v| format!("{v:?}")).collect();
            f.push(format!("{:?}", t.a));
            f.extend(t.r.iter().map(|v| format!("{v:?}")));
            f.push(format!("{:?}", t.r_total));
            f.extend(t.s2.iter().map(|v| format!("{v:?}")));
            f.extend(t.done.iter().map(|&d| (d as u8).to_string()));
            f.push((t.done_total as u8).to_string());
            let _ = writeln!(out, "{}", f.join(" "));
        }
    }

    pub fn read_text(next: &mut impl FnMut() -> Result<String>, capacity: usize) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("replay buffer: {m}"));
        let head = next()?;
        let h: Vec<usize> = head
            .split_whitespace()
            .skip(1)
            .map(|x| x.parse().map_err(|_| bad("header")))
            .collect::<Result<_>>()?;
        let [len, pos, d, m] = h[..] else {
            return Err(bad("header"));
        };
        if len > capacity || (len == capacity && pos >= capacity) || (len < capacity && pos != len % capacity) {
            return Err(bad("length exceeds capacity"));
        }
        let mut buf = Self::new(capacity, d, m);
        for _ in 0..len {
            let line = next()?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad("number")))
                .collect::<Result<_>>()?;
            if v.len() != 2 * d + 2 * m + 3 {
                return Err(bad("row width"));
            }
            let (s, rest) = v.split_at(d);
            let (a, rest) = rest.split_at(1);
            let (r, rest) = rest.split_at(m);
            let (rt, rest) = rest.split_at(1);
            let (s2, rest) = rest.split_at(d);
            let (done, dt) = rest.split_at(m);
            buf.push(&Transition {
                s: s.to_vec(),
                a: a[0],
                r: r.to_vec(),
                r_total: rt[0],
                s2: s2.to_vec(),
                done: done.iter().map(|&x| x != 0.0).collect(),
                done_total: dt[0] != 0.0,
            })?;
        }
        buf.next = pos;
        Ok(buf)
    }

    /// Uniform sample with replacement over the filled slots.
    pub fn sample(&self, batch: usize, rng: &mut RandomStream) -> Result<Batch> {
        if self.is_empty() || batch == 0 {
            return Err(Error::TrainingAbort(format!(
                "replay buffer underflow: {} stored, batch of {batch} requested",
                self.len()
            )));
        }
        let idx: Vec<usize> = (0..batch).map(|_| rng.below(self.len())).collect();
        let (d, m) = (self.state_dim, self.mechanisms);
        let rows = |src: &[f64], w: usize| Array2::from_shape_fn((batch, w), |(k, j)| src[idx[k] * w + j]);
        let flags = |src: &[bool], w: usize| Array2::from_shape_fn((batch, w), |(k, j)| src[idx[k] * w + j] as u8 as f64);
        Ok(Batch {
            s: rows(&self.s, d),
            a: rows(&self.a, 1),
            r: rows(&self.r, m),
            r_total: idx.iter().map(|&i| self.r_total[i]).collect(),
            s2: rows(&self.s2, d),
            done: flags(&self.done, m),
            done_total: idx.iter().map(|&i| self.done_total[i] as u8 as f64).collect(),
        })
    }
}
