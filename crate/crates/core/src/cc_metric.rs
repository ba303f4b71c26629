//! Graph approximation of the Carnot–Carathéodory distance.
//!
//! The graph lives on its own lattice over the domain's bounding box plus a
//! halo. Axes reached by the generators (weight 1) have spacing `H`; an axis
//! first reached by brackets of depth `w` has spacing `H^w / 2`. For the
//! Heisenberg group this lattice is closed under left translation by its own
//! elements, so every horizontal step between lattice points is exact and the
//! graph metric is a word metric on a discrete Heisenberg group.
//!
//! Edges follow horizontal flows: from each node, for `dir_count` unit
//! directions α ∈ S^{m−1} and lengths `step·k/K`, the endpoint of
//! `ẋ = Σ α_j X_j(x)` is snapped to the lattice (weight-1 axes to the nearest
//! value, the others to the value that keeps the step horizontal). The edge
//! length is `|α*|` where `α*` refits the snapped displacement at the
//! midpoint, which makes lengths symmetric in the endpoints.
//!
//! Balls are closed: `B(x, r) = {y : d(x, y) ≤ r}`. Ball volumes count lattice
//! cells (ambient Lebesgue measure, not intersected with Ω). Boundary samples
//! of the domain are extra graph nodes of zero volume carrying μ-weights.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::domain::GridDomain;
use crate::fields::VectorFieldSystem;
use crate::{Error, Result};

const MAX_FIELDS: usize = 8;
const MAX_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub dir_count: usize,
    /// Lattice spacing on weight-1 axes; defaults to the domain spacing.
    pub h: Option<f64>,
    /// Longest edge, in units of `h`.
    pub step_factor: f64,
    /// Number of edge lengths sampled per direction.
    pub lengths: usize,
    /// Halo added around the bounding box, as a fraction of its extent per axis.
    pub halo: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { dir_count: 32, h: None, step_factor: 3.0, lengths: 3, halo: 0.25 }
    }
}

#[derive(Clone, Debug)]
pub struct MetricGraph {
    n: usize,
    m: usize,
    spacing: Vec<f64>,
    /// Lattice index of the first node per axis (coordinates are `index · spacing`).
    first: Vec<i64>,
    dims: Vec<usize>,
    num_lattice: usize,
    boundary_points: Vec<f64>,
    boundary_mu: Vec<f64>,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    lengths: Vec<f64>,
    cell_volume: f64,
    grid: Option<u64>,
    pub dir_count: usize,
    pub step: f64,
}

/// Unit directions in R^m: equally spaced angles for m = 2, a Fibonacci
/// lattice for m = 3, seeded Gaussian samples otherwise. Closed under α → −α
/// when `count` is even.
pub fn sample_directions(m: usize, count: usize) -> Vec<Vec<f64>> {
    match m {
        1 => (0..count).map(|k| vec![if k % 2 == 0 { 1.0 } else { -1.0 }]).collect(),
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let half = count.div_ceil(2);
            let mut out: Vec<Vec<f64>> = if m == 3 {
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                (0..half)
                    .map(|k| {
                        let z = 1.0 - (k as f64 + 0.5) / half as f64;
                        let r = (1.0 - z * z).sqrt();
                        let th = golden * k as f64;
                        vec![r * th.cos(), r * th.sin(), z]
                    })
                    .collect()
            } else {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
                (0..half)
                    .map(|_| {
                        let v: Vec<f64> = (0..m)
                            .map(|_| {
                                // Box–Muller.
                                let (u1, u2): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
                                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                            })
                            .collect();
                        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                        v.into_iter().map(|x| x / nv).collect()
                    })
                    .collect()
            };
            let neg: Vec<Vec<f64>> = out.iter().map(|v| v.iter().map(|x| -x).collect()).collect();
            out.extend(neg);
            out.truncate(count);
            out
        }
    }
}

/// Solves the weighted least-squares problem `min Σ_k w_k (Bᵀα − Δ)_k²`
/// for `α ∈ R^m`, `B` row-major `m × n`.
fn refit(b: &[f64], m: usize, n: usize, delta: &[f64], w: &[f64], alpha: &mut [f64]) {
    let mut a = [0.0f64; MAX_FIELDS * MAX_FIELDS];
    let mut rhs = [0.0f64; MAX_FIELDS];
    let mut trace = 0.0;
    for i in 0..m {
        for j in 0..m {
            a[i * m + j] = (0..n).map(|k| w[k] * b[i * n + k] * b[j * n + k]).sum();
        }
        rhs[i] = (0..n).map(|k| w[k] * b[i * n + k] * delta[k]).sum();
        trace += a[i * m + i];
    }
    let reg = 1e-13 * trace.max(f64::MIN_POSITIVE);
    for i in 0..m {
        a[i * m + i] += reg;
    }
    // Gaussian elimination with partial pivoting.
    let mut perm: [usize; MAX_FIELDS] = std::array::from_fn(|i| i);
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[perm[x] * m + col].abs().total_cmp(&a[perm[y] * m + col].abs()))
            .unwrap();
        perm.swap(col, piv);
        let p = perm[col];
        let d = a[p * m + col];
        for r in col + 1..m {
            let rr = perm[r];
            let f = a[rr * m + col] / d;
            for c in col..m {
                a[rr * m + c] -= f * a[p * m + c];
            }
            rhs[rr] -= f * rhs[p];
        }
    }
    for col in (0..m).rev() {
        let p = perm[col];
        let mut s = rhs[p];
        for c in col + 1..m {
            s -= a[p * m + c] * alpha[c];
        }
        alpha[col] = s / a[p * m + col];
    }
}

struct Builder<'a> {
    sys: &'a VectorFieldSystem,
    n: usize,
    m: usize,
    spacing: Vec<f64>,
    coarse: Vec<bool>,
    has_fine: bool,
    fine_weights: Vec<f64>,
    first: Vec<i64>,
    dims: Vec<usize>,
    dirs: Vec<Vec<f64>>,
    lens: Vec<f64>,
}

impl Builder<'_> {
    fn velocity(&self, alpha: &[f64], x: &[f64], v: &mut [f64]) {
        let n = self.n;
        let mut col = [0.0f64; MAX_DIM];
        v[..n].fill(0.0);
        for (j, a) in alpha.iter().enumerate() {
            self.sys.coeff(j, x, &mut col[..n]);
            for k in 0..n {
                v[k] += a * col[k];
            }
        }
    }

    /// RK4 integration of `ẋ = Σ α_j X_j(x)` for time `len`.
    fn flow(&self, x0: &[f64], alpha: &[f64], len: f64, out: &mut [f64]) {
        let n = self.n;
        let sub = 1;
        let dt = len / sub as f64;
        let mut x = [0.0f64; MAX_DIM];
        x[..n].copy_from_slice(x0);
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            ([0.0f64; MAX_DIM], [0.0f64; MAX_DIM], [0.0f64; MAX_DIM], [0.0f64; MAX_DIM], [0.0f64; MAX_DIM]);
        for _ in 0..sub {
            self.velocity(alpha, &x[..n], &mut k1);
            for k in 0..n {
                tmp[k] = x[k] + 0.5 * dt * k1[k];
            }
            self.velocity(alpha, &tmp[..n], &mut k2);
            for k in 0..n {
                tmp[k] = x[k] + 0.5 * dt * k2[k];
            }
            self.velocity(alpha, &tmp[..n], &mut k3);
            for k in 0..n {
                tmp[k] = x[k] + dt * k3[k];
            }
            self.velocity(alpha, &tmp[..n], &mut k4);
            for k in 0..n {
                x[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
        }
        out.copy_from_slice(&x[..n]);
    }

    fn lattice_id(&self, idx: &[i64]) -> Option<usize> {
        let mut lin = 0usize;
        for k in (0..self.n).rev() {
            let i = idx[k] - self.first[k];
            if i < 0 || i as usize >= self.dims[k] {
                return None;
            }
            lin = lin * self.dims[k] + i as usize;
        }
        Some(lin)
    }

    /// Snaps a flow endpoint; returns the target lattice node and `|α*|`.
    fn snap(&self, a: &[f64], end: &[f64]) -> Option<(usize, f64)> {
        let (n, m) = (self.n, self.m);
        let mut idx = [0i64; MAX_DIM];
        let mut delta = [0.0f64; MAX_DIM];
        for k in 0..n {
            if self.coarse[k] {
                idx[k] = (end[k] / self.spacing[k]).round() as i64;
                delta[k] = idx[k] as f64 * self.spacing[k] - a[k];
            } else {
                delta[k] = end[k] - a[k];
            }
        }
        let mut b = [0.0f64; MAX_DIM * MAX_FIELDS];
        let b = &mut b[..m * n];
        let mut alpha = [0.0f64; MAX_FIELDS];
        let alpha = &mut alpha[..m];
        let mut mid = [0.0f64; MAX_DIM];
        let mid = &mut mid[..n];
        let delta = &mut delta[..n];
        let idx = &mut idx[..n];
        if self.has_fine {
            // Fine axes follow the coarse ones along a horizontal step.
            for _ in 0..2 {
                for k in 0..n {
                    mid[k] = a[k] + 0.5 * delta[k];
                }
                self.sys.matrix(mid, b);
                refit(b, m, n, delta, &self.fine_weights, alpha);
                for k in 0..n {
                    if !self.coarse[k] {
                        delta[k] = (0..m).map(|j| b[j * n + k] * alpha[j]).sum();
                    }
                }
            }
            for k in 0..n {
                if !self.coarse[k] {
                    idx[k] = ((a[k] + delta[k]) / self.spacing[k]).round() as i64;
                    delta[k] = idx[k] as f64 * self.spacing[k] - a[k];
                }
            }
        }
        if delta.iter().all(|d| d.abs() < 1e-15) {
            return None;
        }
        let target = self.lattice_id(idx)?;
        for k in 0..n {
            mid[k] = a[k] + 0.5 * delta[k];
        }
        self.sys.matrix(mid, b);
        refit(b, m, n, delta, &[1.0; MAX_DIM], alpha);
        for k in 0..n {
            let r = delta[k] - (0..m).map(|j| b[j * n + k] * alpha[j]).sum::<f64>();
            if r.abs() > self.spacing[k] * (0.5 + 1e-9) {
                return None;
            }
        }
        let len = alpha.iter().map(|x| x * x).sum::<f64>().sqrt();
        (len > 0.0 && len.is_finite()).then_some((target, len))
    }

    /// Appends the edges of `src` with both endpoints ordered, shortest per target.
    fn edges_from(&self, src: u32, x: &[f64], scratch: &mut Vec<(u32, u32, f64)>, out: &mut Vec<(u32, u32, f64)>) {
        scratch.clear();
        self.collect_edges(src, x, scratch);
        scratch.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        scratch.dedup_by(|next, prev| next.0 == prev.0 && next.1 == prev.1);
        out.extend_from_slice(scratch);
    }

    fn collect_edges(&self, src: u32, x: &[f64], out: &mut Vec<(u32, u32, f64)>) {
        let mut end = [0.0f64; MAX_DIM];
        for dir in &self.dirs {
            for &len in &self.lens {
                self.flow(x, dir, len, &mut end[..self.n]);
                if let Some((t, l)) = self.snap(x, &end[..self.n]) {
                    if t as u32 != src {
                        let (a, b) = if (t as u32) < src { (t as u32, src) } else { (src, t as u32) };
                        out.push((a, b, l));
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    d: f64,
    v: u32,
}
impl Eq for HeapItem {}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then_with(|| other.v.cmp(&self.v))
    }
}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Result of [`ball_volume`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallVolume {
    pub volume: f64,
    pub nodes: usize,
    /// The ball reaches the edge of the lattice box; the volume underestimates.
    pub exits_box: bool,
}

/// Ball volumes around one source for every radius.
#[derive(Clone, Debug)]
pub struct BallProfile {
    /// Sorted distances of reachable lattice nodes.
    dist: Vec<f64>,
    cell_volume: f64,
    box_reach: f64,
}

impl BallProfile {
    pub fn volume(&self, r: f64) -> BallVolume {
        let nodes = self.dist.partition_point(|&d| d <= r);
        BallVolume { volume: nodes as f64 * self.cell_volume, nodes, exits_box: self.box_reach <= r }
    }

    /// Distance from the source to the nearest node on the lattice box faces.
    pub fn box_reach(&self) -> f64 {
        self.box_reach
    }
}

/// Upper Ahlfors ratios `μ(B(x,r))·r^s / |B(x,r)|` over samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AhlforsReport {
    pub max_ratio: f64,
    /// `(boundary node, r)` of the maximum.
    pub arg_max: (usize, f64),
    pub ratios: Vec<f64>,
    pub any_exits_box: bool,
}

impl MetricGraph {
    /// Graph over the bounding box of `dom` plus halo, with the boundary
    /// samples of `dom` as extra nodes.
    pub fn build(sys: &VectorFieldSystem, dom: &GridDomain, opts: &MetricOptions) -> Result<Self> {
        let (lo, hi) = dom.shape().bounding_box();
        let h = opts.h.unwrap_or(dom.h());
        let mut g = Self::build_inner(
            sys,
            &lo,
            &hi,
            h,
            opts,
            &dom.boundary().points,
            &dom.boundary().mu,
        )?;
        g.grid = Some(dom.id());
        Ok(g)
    }

    /// Graph over a box (plus halo) without boundary samples.
    pub fn build_box(sys: &VectorFieldSystem, lo: &[f64], hi: &[f64], h: f64, opts: &MetricOptions) -> Result<Self> {
        Self::build_inner(sys, lo, hi, h, opts, &[], &[])
    }

    fn build_inner(
        sys: &VectorFieldSystem,
        lo: &[f64],
        hi: &[f64],
        h: f64,
        opts: &MetricOptions,
        bpoints: &[f64],
        bmu: &[f64],
    ) -> Result<Self> {
        let n = sys.ambient_dim();
        let m = sys.num_fields();
        if lo.len() != n || hi.len() != n {
            return Err(Error::InvalidParameter("metric box dimension does not match the system".into()));
        }
        if m > MAX_FIELDS || n > MAX_DIM {
            return Err(Error::InvalidParameter(format!(
                "metric graphs support at most {MAX_FIELDS} fields in dimension at most {MAX_DIM}"
            )));
        }
        if opts.dir_count < 2 * m {
            return Err(Error::InvalidParameter(format!(
                "dir_count = {} must be at least 2m = {}",
                opts.dir_count,
                2 * m
            )));
        }
        if !(h > 0.0) || opts.lengths == 0 || !(opts.halo >= 0.0) {
            return Err(Error::InvalidParameter("metric spacing, lengths and halo must be positive".into()));
        }
        let step = opts.step_factor * h;
        if !(step >= h) {
            return Err(Error::DegenerateGraph(format!("step {step} is smaller than the lattice spacing {h}")));
        }
        let spacing: Vec<f64> = sys.axis_weights().iter().map(|&w| if w == 1 { h } else { h.powi(w as i32) / 2.0 }).collect();
        let coarse: Vec<bool> = sys.axis_weights().iter().map(|&w| w == 1).collect();
        let mut first = Vec::with_capacity(n);
        let mut dims = Vec::with_capacity(n);
        for k in 0..n {
            let ext = hi[k] - lo[k];
            let a = lo[k] - opts.halo * ext;
            let b = hi[k] + opts.halo * ext;
            let i0 = (a / spacing[k] - 1e-9).floor() as i64;
            let i1 = (b / spacing[k] + 1e-9).ceil() as i64;
            first.push(i0);
            dims.push((i1 - i0 + 1) as usize);
        }
        let num_lattice: usize = dims.iter().product();
        if num_lattice > u32::MAX as usize / 2 {
            return Err(Error::InvalidParameter("metric lattice too large".into()));
        }
        let builder = Builder {
            sys,
            n,
            m,
            spacing: spacing.clone(),
            has_fine: coarse.iter().any(|c| !c),
            fine_weights: coarse.iter().map(|&c| if c { 1e8 } else { 1.0 }).collect(),
            coarse,
            first: first.clone(),
            dims: dims.clone(),
            dirs: sample_directions(m, opts.dir_count),
            lens: (1..=opts.lengths).map(|k| step * k as f64 / opts.lengths as f64).collect(),
        };
        let position = |lin: usize, out: &mut [f64]| {
            let mut r = lin;
            for k in 0..n {
                out[k] = (first[k] + (r % dims[k]) as i64) as f64 * spacing[k];
                r /= dims[k];
            }
        };
        let mut edges: Vec<(u32, u32, f64)> = Vec::new();
        let mut scratch = Vec::new();
        let mut x = vec![0.0; n];
        for v in 0..num_lattice {
            position(v, &mut x);
            builder.edges_from(v as u32, &x, &mut scratch, &mut edges);
        }
        let nb = bmu.len();
        for b in 0..nb {
            let p = &bpoints[b * n..(b + 1) * n];
            builder.edges_from((num_lattice + b) as u32, p, &mut scratch, &mut edges);
        }
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        edges.dedup_by(|next, prev| next.0 == prev.0 && next.1 == prev.1);

        let total = num_lattice + nb;
        let mut deg = vec![0usize; total + 1];
        for &(a, b, _) in &edges {
            deg[a as usize + 1] += 1;
            deg[b as usize + 1] += 1;
        }
        for i in 0..total {
            deg[i + 1] += deg[i];
        }
        let offsets = deg.clone();
        let mut fill = deg;
        let mut targets = vec![0u32; offsets[total]];
        let mut lengths = vec![0.0; offsets[total]];
        for &(a, b, l) in &edges {
            targets[fill[a as usize]] = b;
            lengths[fill[a as usize]] = l;
            fill[a as usize] += 1;
            targets[fill[b as usize]] = a;
            lengths[fill[b as usize]] = l;
            fill[b as usize] += 1;
        }
        if let Some(v) = (0..total).find(|&v| offsets[v] == offsets[v + 1]) {
            return Err(Error::DegenerateGraph(format!("node {v} has no horizontal neighbor")));
        }
        Ok(MetricGraph {
            n,
            m,
            cell_volume: spacing.iter().product(),
            spacing,
            first,
            dims,
            num_lattice,
            boundary_points: bpoints.to_vec(),
            boundary_mu: bmu.to_vec(),
            offsets,
            targets,
            lengths,
            grid: None,
            dir_count: opts.dir_count,
            step,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_lattice + self.boundary_mu.len()
    }
    pub fn num_lattice(&self) -> usize {
        self.num_lattice
    }
    pub fn num_boundary(&self) -> usize {
        self.boundary_mu.len()
    }
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }
    pub fn num_fields(&self) -> usize {
        self.m
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }
    pub fn grid_id(&self) -> Option<u64> {
        self.grid
    }

    /// Graph node of boundary sample `b`.
    pub fn boundary_node(&self, b: usize) -> usize {
        self.num_lattice + b
    }

    pub fn boundary_mu(&self) -> &[f64] {
        &self.boundary_mu
    }

    pub fn position(&self, v: usize) -> Vec<f64> {
        if v >= self.num_lattice {
            let b = v - self.num_lattice;
            return self.boundary_points[b * self.n..(b + 1) * self.n].to_vec();
        }
        let mut r = v;
        (0..self.n)
            .map(|k| {
                let c = (self.first[k] + (r % self.dims[k]) as i64) as f64 * self.spacing[k];
                r /= self.dims[k];
                c
            })
            .collect()
    }

    fn on_box_face(&self, v: usize) -> bool {
        if v >= self.num_lattice {
            return false;
        }
        let mut r = v;
        for k in 0..self.n {
            let i = r % self.dims[k];
            if i == 0 || i + 1 == self.dims[k] {
                return true;
            }
            r /= self.dims[k];
        }
        false
    }

    /// Lattice node nearest to `x` (clamped into the box).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut lin = 0usize;
        for k in (0..self.n).rev() {
            let i = ((x[k] / self.spacing[k]).round() as i64 - self.first[k]).clamp(0, self.dims[k] as i64 - 1);
            lin = lin * self.dims[k] + i as usize;
        }
        lin
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[v]..self.offsets[v + 1];
        self.targets[r.clone()].iter().map(|&t| t as usize).zip(self.lengths[r].iter().copied())
    }

    /// Single-source shortest paths; unreachable nodes get `+∞`.
    pub fn distances_from(&self, src: usize) -> Vec<f64> {
        self.dijkstra(src, None)
    }

    fn dijkstra(&self, src: usize, stop: Option<usize>) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.num_nodes()];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(HeapItem { d: 0.0, v: src as u32 });
        while let Some(HeapItem { d, v }) = heap.pop() {
            let v = v as usize;
            if d > dist[v] {
                continue;
            }
            if stop == Some(v) {
                break;
            }
            for (t, l) in self.neighbors(v) {
                let nd = d + l;
                if nd < dist[t] {
                    dist[t] = nd;
                    heap.push(HeapItem { d: nd, v: t as u32 });
                }
            }
        }
        dist
    }

    pub fn ball_profile(&self, src: usize) -> BallProfile {
        let dist = self.distances_from(src);
        self.profile_from(&dist)
    }

    /// Ball profile from precomputed distances of one source.
    pub fn profile_from(&self, dist: &[f64]) -> BallProfile {
        let mut d: Vec<f64> = dist[..self.num_lattice].iter().copied().filter(|x| x.is_finite()).collect();
        d.sort_by(|a, b| a.total_cmp(b));
        let box_reach = (0..self.num_lattice)
            .filter(|&v| self.on_box_face(v))
            .map(|v| dist[v])
            .fold(f64::INFINITY, f64::min);
        BallProfile { dist: d, cell_volume: self.cell_volume, box_reach }
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.num_nodes() {
            return Err(Error::InvalidParameter(format!("node {v} out of range ({} nodes)", self.num_nodes())));
        }
        Ok(())
    }
}

/// Builds the metric graph of `dom` with default options and `dir_count` directions.
pub fn build_metric_graph(sys: &VectorFieldSystem, dom: &GridDomain, dir_count: usize) -> Result<MetricGraph> {
    MetricGraph::build(sys, dom, &MetricOptions { dir_count, ..MetricOptions::default() })
}

/// Shortest-path distance between graph nodes.
pub fn cc_distance(g: &MetricGraph, x: usize, y: usize) -> Result<f64> {
    g.check_node(x)?;
    g.check_node(y)?;
    if x == y {
        return Ok(0.0);
    }
    let d = g.dijkstra(x, Some(y))[y];
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::Disconnected(x, y))
    }
}

/// `|B(x, r)|` over lattice cells, closed ball.
pub fn ball_volume(g: &MetricGraph, x: usize, r: f64) -> Result<BallVolume> {
    g.check_node(x)?;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("ball radius must be positive, got {r}")));
    }
    Ok(g.ball_profile(x).volume(r))
}

/// Least-squares slope of `log |B(x,r)|` against `log r` on 8 geometric radii.
pub fn estimate_q(g: &MetricGraph, x: usize, r_lo: f64, r_hi: f64) -> Result<f64> {
    g.check_node(x)?;
    if !(r_lo > 0.0 && r_lo < r_hi) {
        return Err(Error::InvalidParameter(format!("need 0 < r_lo < r_hi, got {r_lo}, {r_hi}")));
    }
    let prof = g.ball_profile(x);
    let k = 8;
    let mut pts = Vec::with_capacity(k);
    for i in 0..k {
        let r = r_lo * (r_hi / r_lo).powf(i as f64 / (k - 1) as f64);
        let b = prof.volume(r);
        if i == 0 && b.nodes < 50 {
            return Err(Error::Unresolved(format!("ball of radius {r_lo} holds {} nodes (< 50)", b.nodes)));
        }
        if b.exits_box {
            return Err(Error::Unresolved(format!("ball of radius {r} reaches the lattice box")));
        }
        pts.push((r.ln(), b.volume.ln()));
    }
    Ok(ls_slope(&pts))
}

pub(crate) fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// `max |B(x,2r)| / |B(x,r)|` over samples.
pub fn doubling_ratio(g: &MetricGraph, samples: &[(usize, f64)]) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut cache: Option<(usize, BallProfile)> = None;
    for &(x, r) in samples {
        g.check_node(x)?;
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("ball radius must be positive, got {r}")));
        }
        if cache.as_ref().map(|c| c.0) != Some(x) {
            cache = Some((x, g.ball_profile(x)));
        }
        let prof = &cache.as_ref().expect("cached").1;
        let small = prof.volume(r);
        if small.nodes == 0 {
            return Err(Error::Unresolved(format!("ball B({x}, {r}) contains no lattice node")));
        }
        worst = worst.max(prof.volume(2.0 * r).volume / small.volume);
    }
    Ok(worst)
}

/// Upper `s`-Ahlfors ratios at boundary samples for `0 < r ≤ r_o`.
pub fn ahlfors_upper_check(
    g: &MetricGraph,
    dom: &GridDomain,
    s: f64,
    samples: &[(usize, f64)],
    r_o: f64,
) -> Result<AhlforsReport> {
    if g.grid_id() != Some(dom.id()) {
        return Err(Error::GridMismatch { expected: dom.id(), found: g.grid_id().unwrap_or(0) });
    }
    let mut ratios = Vec::with_capacity(samples.len());
    let mut best = (f64::NEG_INFINITY, (0usize, 0.0));
    let mut any_exit = false;
    let mut cache: Option<(usize, Vec<f64>, BallProfile)> = None;
    for &(b, r) in samples {
        if b >= g.num_boundary() {
            return Err(Error::InvalidParameter(format!("boundary node {b} out of range")));
        }
        if !(r > 0.0 && r <= r_o) {
            return Err(Error::RadiusOutOfRange { r, max: r_o });
        }
        if cache.as_ref().map(|c| c.0) != Some(b) {
            let dist = g.distances_from(g.boundary_node(b));
            let prof = g.profile_from(&dist);
            cache = Some((b, dist, prof));
        }
        let (_, dist, prof) = cache.as_ref().expect("cached");
        let vol = prof.volume(r);
        if vol.nodes == 0 {
            return Err(Error::EmptyBall { node: b, r });
        }
        any_exit |= vol.exits_box;
        let mu: f64 = (0..g.num_boundary())
            .filter(|&c| dist[g.boundary_node(c)] <= r)
            .map(|c| g.boundary_mu[c])
            .sum();
        let ratio = mu * r.powf(s) / vol.volume;
        if ratio > best.0 {
            best = (ratio, (b, r));
        }
        ratios.push(ratio);
    }
    Ok(AhlforsReport { max_ratio: best.0.max(0.0), arg_max: best.1, ratios, any_exits_box: any_exit })
}

/// Largest distance among `nodes`, by a double sweep from the first node
/// followed by exact eccentricities of the two sweep endpoints.
pub fn estimate_diameter(g: &MetricGraph, nodes: &[usize]) -> Result<f64> {
    let Some(&start) = nodes.first() else {
        return Ok(0.0);
    };
    let mut best = 0.0f64;
    let mut src = start;
    for _ in 0..3 {
        let d = g.distances_from(src);
        let (far, dmax) = nodes
            .iter()
            .map(|&v| (v, d[v]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        if !dmax.is_finite() {
            return Err(Error::Disconnected(src, far));
        }
        best = best.max(dmax);
        src = far;
    }
    Ok(best)
}
