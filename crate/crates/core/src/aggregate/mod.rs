//! Receiver-local graph aggregation of neighbor feature maps: delay
//! compensation, SE(2) warping with overlap masks, masked messages,
//! coverage-mean pooling, ConvGRU updates and a per-cell readout.

use numcore::{ConvGruParams, ParamStore, Result, Tape, Tensor, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::geom::{Pose2, Se2};
use crate::pnp::Net;
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    pub iterations: usize,
    pub max_neighbors: usize,
    pub gru_kernel: usize,
    /// Initial update-gate bias; negative values start close to the
    /// identity update.
    pub update_bias: f64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            max_neighbors: 6,
            gru_kernel: 1,
            update_bias: -2.0,
        }
    }
}

/// Node state `h` with `2C` channels and the grid it lives on.
#[derive(Clone, Copy, Debug)]
pub struct NodeState {
    pub h: Var,
    /// World pose of cell (0, 0) as claimed by the node's sender.
    pub origin: Pose2,
    pub timestamp: f64,
    pub sdv: u32,
}

/// A received (decoded) intermediate representation.
#[derive(Clone, Copy, Debug)]
pub struct NeighborInput {
    pub z: Var,
    pub origin: Pose2,
    pub timestamp: f64,
    pub sdv: u32,
    /// Receiver sweep start minus sender sweep start.
    pub dt: f64,
}

/// `temporal.*` and `agg.*` parameters for channel width `c`.
pub fn init_params(c: usize, cfg: &AggregationConfig, seed: u64) -> ParamStore {
    let mut rng = stream(seed, "init-agg", 0);
    let mut s = ParamStore::new();
    add(&mut s, &mut rng, "temporal.conv1", 3, c + 1, c, 1.0);
    add(&mut s, &mut rng, "temporal.conv2", 3, c, c, 0.0);
    add(&mut s, &mut rng, "agg.msg1", 1, 4 * c, c, 1.0);
    add(&mut s, &mut rng, "agg.msg2", 3, c, c, 1.0);
    add(&mut s, &mut rng, "agg.msg3", 1, c, 2 * c, 0.5);
    let k = cfg.gru_kernel;
    let fan = (k * k * 4 * c) as f64;
    for gate in ["update", "reset", "cand"] {
        let w = numcore::uniform(vec![k, k, 4 * c, 2 * c], 1.0 / fan.sqrt(), &mut rng);
        s.insert(format!("agg.gru.{gate}.w"), w);
        let bias = if gate == "update" { cfg.update_bias } else { 0.0 };
        s.insert(format!("agg.gru.{gate}.b"), Tensor::full(vec![2 * c], bias));
    }
    // The readout starts near the projection onto the first C channels, so
    // an untrained aggregation passes ẑ through.
    let noise = 0.01;
    let mut w1 = Tensor::zeros(vec![1, 1, 2 * c, 2 * c]);
    for i in 0..2 * c {
        for o in 0..2 * c {
            let base = if i == o && i < c { 1.0 } else { 0.0 };
            w1.data_mut()[i * 2 * c + o] = base + noise * rng.gen_range(-1.0..1.0);
        }
    }
    let mut w2 = Tensor::zeros(vec![1, 1, 2 * c, c]);
    for i in 0..2 * c {
        for o in 0..c {
            let base = if i == o { 1.0 } else { 0.0 };
            w2.data_mut()[i * c + o] = base + noise * rng.gen_range(-1.0..1.0);
        }
    }
    s.insert("agg.mlp1.w", w1);
    s.insert("agg.mlp1.b", Tensor::zeros(vec![2 * c]));
    s.insert("agg.mlp2.w", w2);
    s.insert("agg.mlp2.b", Tensor::zeros(vec![c]));
    s
}

fn add(s: &mut ParamStore, rng: &mut Rng, name: &str, k: usize, cin: usize, cout: usize, scale: f64) {
    let w = numcore::kaiming_conv(k, cin, cout, rng).map(|v| v * scale);
    s.insert(format!("{name}.w"), w);
    s.insert(format!("{name}.b"), Tensor::zeros(vec![cout]));
}

fn zeros_like(tape: &Tape, v: Var) -> Var {
    tape.constant(Tensor::zeros(tape.shape(v)))
}

/// Delay-compensated initial state `CNN(ẑ, Δt) ∥ 0`. The compensation is a
/// residual two-layer CNN over `[ẑ, Δt]`; `compensate = false` bypasses it
/// (the receiver's own node, and synchronized training).
pub fn init_node(net: &Net, z: Var, dt: f64, compensate: bool) -> Result<Var> {
    let t = net.tape;
    if dt < 0.0 {
        return Err(numcore::NumError::Shape {
            op: "init_node",
            detail: format!("negative time delay {dt}"),
        });
    }
    let zc = if compensate {
        let dt_map = dt_channel(&t.shape(z), dt);
        let x = t.concat_channels(&[z, t.constant(dt_map)])?;
        let y = net.conv_relu(x, "temporal.conv1", 1)?;
        let y = net.conv(y, "temporal.conv2", 1)?;
        t.add(z, y)?
    } else {
        z
    };
    t.concat_channels(&[zc, zeros_like(t, z)])
}

/// Constant `[H, W, 1]` plane holding `dt`.
pub fn dt_channel(shape: &[usize], dt: f64) -> Tensor {
    Tensor::full(vec![shape[0], shape[1], 1], dt)
}

/// Grid-coordinate transform taking `(col, row)` on the sender's grid to
/// `(col, row)` on the receiver's grid, for maps anchored at the given
/// cell-(0, 0) poses.
pub fn grid_transform(sender_origin: &Pose2, receiver_origin: &Pose2, resolution: f64) -> Se2 {
    crate::geom::relative_transform(sender_origin, receiver_origin).scaled_translation(resolution)
}

/// Sampling coordinates on the sender grid for every receiver cell, given
/// `xi` = sender → receiver grid transform.
pub fn warp_coords(xi: &Se2, h: usize, w: usize) -> Tensor {
    let inv = xi.inverse();
    let mut out = Tensor::zeros(vec![h, w, 2]);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = inv.apply((c as f64, r as f64));
            let i = (r * w + c) * 2;
            out.data_mut()[i] = x;
            out.data_mut()[i + 1] = y;
        }
    }
    out
}

/// `T(h, ξ)`: bilinear resampling of a sender map onto the receiver grid,
/// with the overlap mask.
pub fn warp(tape: &Tape, h: Var, xi: &Se2, out_hw: (usize, usize)) -> Result<(Var, Tensor)> {
    let coords = tape.constant(warp_coords(xi, out_hw.0, out_hw.1));
    tape.bilinear_sample(h, coords)
}

/// Masked message `CNN(T(h_s, ξ), h_r) · M` from sender to receiver.
pub fn gnn_message(net: &Net, h_sender: Var, h_receiver: Var, xi: &Se2) -> Result<(Var, Tensor)> {
    let t = net.tape;
    let shape = t.shape(h_receiver);
    let (warped, mask) = warp(t, h_sender, xi, (shape[0], shape[1]))?;
    let x = t.concat_channels(&[warped, h_receiver])?;
    let y = net.conv_relu(x, "agg.msg1", 1)?;
    let y = net.conv_relu(y, "agg.msg2", 1)?;
    let y = net.conv(y, "agg.msg3", 1)?;
    let m = t.mul_const(y, std::rc::Rc::new(numcore::broadcast_mask(&mask, shape[2])))?;
    Ok((m, mask))
}

/// `φ_M`: per-cell sum of messages divided by the number of masks covering
/// the cell; uncovered cells get 0.
pub fn phi_m(tape: &Tape, messages: &[(Var, Tensor)], shape: &[usize]) -> Result<Var> {
    if messages.is_empty() {
        return Ok(tape.constant(Tensor::zeros(shape.to_vec())));
    }
    let mut coverage = Tensor::zeros(vec![shape[0], shape[1]]);
    for (m, mask) in messages {
        if tape.shape(*m) != shape {
            return Err(numcore::NumError::Shape {
                op: "node_update",
                detail: format!("message {:?} vs state {:?}", tape.shape(*m), shape),
            });
        }
        coverage.add_assign(mask);
    }
    let ms: Vec<Var> = messages.iter().map(|(m, _)| *m).collect();
    tape.coverage_mean(&ms, &coverage)
}

/// `ConvGRU(h, φ_M(messages))`.
pub fn node_update(net: &Net, h: Var, messages: &[(Var, Tensor)]) -> Result<Var> {
    let t = net.tape;
    let input = phi_m(t, messages, &t.shape(h))?;
    let p = gru_params(net)?;
    t.conv_gru_step(h, input, &p)
}

fn gru_params(net: &Net) -> Result<ConvGruParams> {
    Ok(ConvGruParams {
        update_w: net.p("agg.gru.update.w")?,
        update_b: net.p("agg.gru.update.b")?,
        reset_w: net.p("agg.gru.reset.w")?,
        reset_b: net.p("agg.gru.reset.b")?,
        cand_w: net.p("agg.gru.cand.w")?,
        cand_b: net.p("agg.gru.cand.b")?,
    })
}

/// Per-cell readout `MLP(h)` to `C` channels.
pub fn readout(net: &Net, h: Var) -> Result<Var> {
    let y = net.conv_relu(h, "agg.mlp1", 1)?;
    net.conv(y, "agg.mlp2", 1)
}

/// Whether two grids can overlap at all (cheap reject before warping).
fn may_overlap(xi: &Se2, h: usize, w: usize) -> bool {
    let corners = [(0.0, 0.0), (w as f64 - 1.0, 0.0), (0.0, h as f64 - 1.0), (w as f64 - 1.0, h as f64 - 1.0)];
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for c in corners {
        let (x, y) = xi.apply(c);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    x1 >= -1.0 && x0 <= w as f64 && y1 >= -1.0 && y0 <= h as f64
}

/// Full aggregation for the receiver: `L` rounds of message passing on the
/// fully connected graph of the receiver and its (sorted) neighbors, then the
/// readout of the receiver's node. The last round only updates the
/// receiver, whose output is the only one read.
pub fn aggregate(
    net: &Net,
    own_z: Var,
    own_origin: &Pose2,
    neighbors: &[NeighborInput],
    resolution: f64,
    compensate: bool,
    cfg: &AggregationConfig,
) -> Result<Var> {
    let t = net.tape;
    let shape = t.shape(own_z);
    let (h, w) = (shape[0], shape[1]);
    let mut order: Vec<&NeighborInput> = neighbors.iter().collect();
    order.sort_by_key(|n| n.sdv);
    let mut origins = vec![*own_origin];
    let mut states = vec![init_node(net, own_z, 0.0, false)?];
    for n in &order {
        origins.push(n.origin);
        states.push(init_node(net, n.z, n.dt, compensate)?);
    }
    let count = states.len();
    // ξ[j][i]: grid transform from node j to node i.
    let xi: Vec<Vec<Se2>> = (0..count)
        .map(|j| (0..count).map(|i| grid_transform(&origins[j], &origins[i], resolution)).collect())
        .collect();
    for l in 0..cfg.iterations.max(1) {
        let last = l + 1 == cfg.iterations.max(1);
        let targets = if last { 1 } else { count };
        let mut next = Vec::with_capacity(targets);
        for i in 0..targets {
            let mut msgs = Vec::new();
            for j in 0..count {
                if j == i || !may_overlap(&xi[j][i], h, w) {
                    continue;
                }
                let (m, mask) = gnn_message(net, states[j], states[i], &xi[j][i])?;
                if mask.sum() > 0.0 {
                    msgs.push((m, mask));
                }
            }
            next.push(node_update(net, states[i], &msgs)?);
        }
        if last {
            states[0] = next[0];
        } else {
            states = next;
        }
    }
    readout(net, states[0])
}

/// Uniform neighbor count on `{0, …, min(available, cap)}`.
pub fn sample_neighbor_count(available: usize, cap: usize, rng: &mut Rng) -> usize {
    rng.gen_range(0..=available.min(cap))
}
