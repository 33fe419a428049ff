//! Path-parallel Monte Carlo with per-path counter-based streams.
//!
//! Path `i` draws from `ChaCha8(seed)` on stream `i`, and every start point of a path
//! replays that stream. Paths are grouped into fixed chunks whose partial sums are
//! reduced in chunk order, so results do not depend on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{steps_for, McEstimate, SdeModel, SimError, Stepper, BLOWUP};
use crate::symexpr::ScalarFn;

const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// Worker cap; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: 1e-3,
            seed: 42,
            threads: None,
        }
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Clone, Copy, Debug, Default)]
struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    fn merge(&mut self, o: &Sum) {
        self.add(o.s);
        self.add(o.c);
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

struct Partial {
    first: Vec<Sum>,
    second: Vec<Sum>,
    discarded: usize,
}

impl Partial {
    fn new(nq: usize) -> Self {
        Self {
            first: vec![Sum::default(); nq],
            second: vec![Sum::default(); nq * nq],
            discarded: 0,
        }
    }

    fn merge(&mut self, o: &Partial) {
        self.first
            .iter_mut()
            .zip(&o.first)
            .for_each(|(a, b)| a.merge(b));
        self.second
            .iter_mut()
            .zip(&o.second)
            .for_each(|(a, b)| a.merge(b));
        self.discarded += o.discarded;
    }
}

/// Sample means and covariance of the derived per-path quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    /// Row-major `nq × nq` sample covariance.
    pub covariance: Vec<f64>,
}

impl Moments {
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.mean.len() + j]
    }

    pub fn estimate(&self, i: usize, seed: u64) -> McEstimate {
        McEstimate {
            mean: self.mean[i],
            stderr: (self.cov(i, i).max(0.0) / self.n as f64).sqrt(),
            n_paths: self.n,
            seed,
        }
    }
}

/// Simulates every start on a shared noise path, records `f` at each grid time
/// (`values[t * starts.len() + s]`), maps those through `derive` into `nq` quantities,
/// and returns their moments over paths.
pub fn mc_moments(
    model: &SdeModel,
    f: &ScalarFn,
    starts: &[Vec<f64>],
    times: &[f64],
    cfg: &McConfig,
    nq: usize,
    derive: &(dyn Fn(&[f64], &mut [f64]) + Sync),
) -> Result<Moments, SimError> {
    if cfg.n_paths < 2 {
        return Err(SimError::InvalidArgument(
            "n_paths must be at least 2".into(),
        ));
    }
    if !(cfg.dt > 0.0) {
        return Err(SimError::InvalidArgument(format!("dt = {}", cfg.dt)));
    }
    if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(SimError::InvalidArgument(
            "times must be non-negative and non-decreasing".into(),
        ));
    }
    for s in starts {
        model.check_point(s)?;
    }
    if f.min_dim() > model.dim() {
        return Err(SimError::Dimension {
            expected: model.dim(),
            got: f.min_dim(),
        });
    }
    let plan: Vec<(usize, f64)> = {
        let mut prev = 0.0;
        times
            .iter()
            .map(|&t| {
                let n = steps_for(t - prev, cfg.dt);
                let h = if n == 0 { 0.0 } else { (t - prev) / n as f64 };
                prev = t;
                (n, h)
            })
            .collect()
    };
    let job = Job {
        model,
        f,
        starts,
        plan: &plan,
        seed: cfg.seed,
        nq,
        derive,
    };

    // Shift by path 0 so the second moments are centred, which keeps the
    // variance exact when every path agrees.
    let mut shift = vec![0.0; nq];
    let mut scratch = job.scratch(1);
    job.block(0, 1, &mut scratch, &mut shift);
    if !scratch.alive[0] {
        return Err(SimError::NonFinite {
            discarded: 1,
            total: cfg.n_paths,
        });
    }

    let chunks = cfg.n_paths.div_ceil(CHUNK);
    let run = || -> Vec<Partial> {
        (0..chunks)
            .into_par_iter()
            .map(|c| job.chunk(c * CHUNK, ((c + 1) * CHUNK).min(cfg.n_paths), &shift))
            .collect()
    };
    let partials = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SimError::InvalidArgument(e.to_string()))?
            .install(run),
        None => run(),
    };
    let mut total = Partial::new(nq);
    for p in &partials {
        total.merge(p);
    }
    if total.discarded > 0 {
        return Err(SimError::NonFinite {
            discarded: total.discarded,
            total: cfg.n_paths,
        });
    }

    let n = cfg.n_paths as f64;
    let centred: Vec<f64> = total.first.iter().map(|s| s.value() / n).collect();
    let mean = centred.iter().zip(&shift).map(|(c, k)| c + k).collect();
    let mut covariance = vec![0.0; nq * nq];
    for i in 0..nq {
        for j in 0..nq {
            let raw = total.second[i * nq + j].value();
            covariance[i * nq + j] = (raw - n * centred[i] * centred[j]) / (n - 1.0);
        }
    }
    Ok(Moments {
        n: cfg.n_paths,
        mean,
        covariance,
    })
}

struct Job<'a> {
    model: &'a SdeModel,
    f: &'a ScalarFn,
    starts: &'a [Vec<f64>],
    plan: &'a [(usize, f64)],
    seed: u64,
    nq: usize,
    derive: &'a (dyn Fn(&[f64], &mut [f64]) + Sync),
}

/// Paths advanced together; small enough that a block's buffers stay in cache.
const LANES: usize = 64;

struct Scratch {
    x: Vec<f64>,
    dw: Vec<f64>,
    point: Vec<f64>,
    values: Vec<f64>,
    alive: Vec<bool>,
}

impl Job<'_> {
    fn scratch(&self, lanes: usize) -> Scratch {
        Scratch {
            x: vec![0.0; self.model.dim() * lanes],
            dw: vec![0.0; self.model.noise_count() * lanes],
            point: vec![0.0; self.model.dim()],
            values: vec![0.0; self.plan.len() * self.starts.len() * lanes],
            alive: vec![true; lanes],
        }
    }

    /// Simulates paths `first..first + lanes`, writing each lane's derived quantities
    /// into `q[lane * nq..]` and clearing `alive[lane]` on blow-up.
    fn block(&self, first: usize, lanes: usize, sc: &mut Scratch, q: &mut [f64]) {
        let dim = self.model.dim();
        let nw = self.model.noise_count();
        let ns = self.starts.len();
        let base: Vec<ChaCha8Rng> = (0..lanes)
            .map(|l| {
                let mut r = ChaCha8Rng::seed_from_u64(self.seed);
                r.set_stream((first + l) as u64);
                r
            })
            .collect();
        sc.alive[..lanes].fill(true);
        let mut stepper = Stepper::new(self.model, lanes);
        let nv = self.plan.len() * ns;
        for (s, x0) in self.starts.iter().enumerate() {
            let mut rngs = base.clone();
            for (c, v) in x0.iter().enumerate() {
                sc.x[c * lanes..(c + 1) * lanes].fill(*v);
            }
            for (ti, &(n, h)) in self.plan.iter().enumerate() {
                let sq = h.sqrt();
                for _ in 0..n {
                    for (l, rng) in rngs.iter_mut().enumerate() {
                        for j in 0..nw {
                            let z: f64 = StandardNormal.sample(rng);
                            sc.dw[j * lanes + l] = sq * z;
                        }
                    }
                    stepper.step(&mut sc.x[..dim * lanes], &sc.dw[..nw * lanes], h);
                    for l in 0..lanes {
                        if sc.alive[l] && (0..dim).any(|c| !(sc.x[c * lanes + l].abs() <= BLOWUP)) {
                            sc.alive[l] = false;
                        }
                    }
                }
                for l in 0..lanes {
                    for c in 0..dim {
                        sc.point[c] = sc.x[c * lanes + l];
                    }
                    sc.values[l * nv + ti * ns + s] = self.f.eval(&sc.point);
                }
            }
        }
        for l in 0..lanes {
            if sc.alive[l] {
                (self.derive)(
                    &sc.values[l * nv..(l + 1) * nv],
                    &mut q[l * self.nq..(l + 1) * self.nq],
                );
            }
        }
    }

    fn chunk(&self, from: usize, to: usize, shift: &[f64]) -> Partial {
        let nq = self.nq;
        let mut acc = Partial::new(nq);
        let mut sc = self.scratch(LANES);
        let mut q = vec![0.0; nq * LANES];
        let mut first = from;
        while first < to {
            let lanes = LANES.min(to - first);
            self.block(first, lanes, &mut sc, &mut q);
            for l in 0..lanes {
                if !sc.alive[l] {
                    acc.discarded += 1;
                    continue;
                }
                let ql = &mut q[l * nq..(l + 1) * nq];
                for (v, k) in ql.iter_mut().zip(shift) {
                    *v -= k;
                }
                for a in 0..nq {
                    acc.first[a].add(ql[a]);
                    for b in 0..nq {
                        acc.second[a * nq + b].add(ql[a] * ql[b]);
                    }
                }
            }
            first += lanes;
        }
        acc
    }
}
