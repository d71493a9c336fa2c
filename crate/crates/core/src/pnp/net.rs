//! Parameter layout, initialization and the encoder / output network.

use std::cell::RefCell;
use std::collections::BTreeMap;

use numcore::{kaiming_conv, ParamStore, Result, Tape, Tensor, Var};

use super::{ModelConfig, DET_CHANNELS};
use crate::rng::{stream, Rng};

pub type TrainableFn<'a> = &'a dyn Fn(&str) -> bool;

/// Parameter access for one tape: trainable names become tape params (whose
/// gradients are collected), all others enter as constants. Each name is
/// materialized once per tape.
pub struct Net<'a> {
    pub tape: &'a Tape,
    store: &'a ParamStore,
    trainable: TrainableFn<'a>,
    cache: RefCell<BTreeMap<String, Var>>,
}

fn never(_: &str) -> bool {
    false
}

impl<'a> Net<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore, trainable: TrainableFn<'a>) -> Self {
        Self {
            tape,
            store,
            trainable,
            cache: RefCell::new(BTreeMap::new()),
        }
    }

    /// Inference view: nothing is trainable.
    pub fn frozen(tape: &'a Tape, store: &'a ParamStore) -> Self {
        Self::new(tape, store, &never)
    }

    /// Routes `name` to an existing variable, e.g. a leaf under gradient
    /// check.
    pub fn bind(&self, name: &str, v: Var) {
        self.cache.borrow_mut().insert(name.to_string(), v);
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn p(&self, name: &str) -> Result<Var> {
        if let Some(v) = self.cache.borrow().get(name) {
            return Ok(*v);
        }
        let t = self.store.get(name)?.clone();
        let v = if (self.trainable)(name) {
            self.tape.param(name, t)
        } else {
            self.tape.constant(t)
        };
        self.cache.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Convolution with `{prefix}.w` and `{prefix}.b`, padding `k / 2`.
    pub fn conv(&self, x: Var, prefix: &str, stride: usize) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w"))?;
        let k = self.tape.shape(w)[0];
        let y = self.tape.conv2d(x, w, stride, k / 2)?;
        self.tape.add_bias(y, self.p(&format!("{prefix}.b"))?)
    }

    pub fn conv_relu(&self, x: Var, prefix: &str, stride: usize) -> Result<Var> {
        Ok(self.tape.relu(self.conv(x, prefix, stride)?))
    }
}

pub(crate) fn add_conv(store: &mut ParamStore, rng: &mut Rng, name: &str, k: usize, cin: usize, cout: usize) {
    store.insert(format!("{name}.w"), kaiming_conv(k, cin, cout, rng));
    store.insert(format!("{name}.b"), Tensor::zeros(vec![cout]));
}

pub(crate) fn add_conv_scaled(
    store: &mut ParamStore,
    rng: &mut Rng,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
    scale: f64,
) {
    let w = kaiming_conv(k, cin, cout, rng).map(|v| v * scale);
    store.insert(format!("{name}.w"), w);
    store.insert(format!("{name}.b"), Tensor::zeros(vec![cout]));
}

/// Backbone (`backbone.*`) and output network (`header.*`) parameters.
pub fn init_params(cfg: &ModelConfig, sweeps: usize, seed: u64) -> ParamStore {
    let mut rng = stream(seed, "init-pnp", 0);
    let mut s = ParamStore::new();
    let c = cfg.channels;
    add_conv(&mut s, &mut rng, "backbone.conv1", 3, sweeps, cfg.encoder_hidden);
    add_conv(&mut s, &mut rng, "backbone.conv2", 3, cfg.encoder_hidden, c);
    add_conv(&mut s, &mut rng, "backbone.conv3", 3, c, c);
    let b = cfg.branch_channels;
    for i in 0..cfg.blocks {
        let p = format!("header.block{i}");
        add_conv(&mut s, &mut rng, &format!("{p}.b1"), 1, c, b);
        add_conv(&mut s, &mut rng, &format!("{p}.b2"), 3, c, b);
        add_conv(&mut s, &mut rng, &format!("{p}.b3a"), 3, c, b);
        add_conv(&mut s, &mut rng, &format!("{p}.b3b"), 3, b, b);
        add_conv_scaled(&mut s, &mut rng, &format!("{p}.fuse"), 1, 3 * b, c, 0.5);
    }
    add_conv_scaled(&mut s, &mut rng, "header.det", 1, c, DET_CHANNELS, 0.1);
    add_conv_scaled(&mut s, &mut rng, "header.forecast", 1, c, 2 * cfg.forecast_steps, 0.1);
    let prior = cfg.score_prior.clamp(1e-6, 1.0 - 1e-6);
    let mut det_b = vec![0.0; DET_CHANNELS];
    det_b[0] = (prior / (1.0 - prior)).ln();
    det_b[3] = 4.5f64.ln() * super::header::SIZE_SCALE;
    det_b[4] = 1.9f64.ln() * super::header::SIZE_SCALE;
    s.insert("header.det.b", Tensor::new(vec![DET_CHANNELS], det_b).unwrap());
    s
}

/// Raster `[H, W, S]` to intermediate features `[H/4, W/4, C]`.
pub fn encode(net: &Net, raster: Var) -> Result<Var> {
    let x = net.conv_relu(raster, "backbone.conv1", 2)?;
    let x = net.conv_relu(x, "backbone.conv2", 1)?;
    net.conv_relu(x, "backbone.conv3", 2)
}

fn inception_block(net: &Net, x: Var, prefix: &str) -> Result<Var> {
    let t = net.tape;
    let b1 = net.conv_relu(x, &format!("{prefix}.b1"), 1)?;
    let b2 = net.conv_relu(x, &format!("{prefix}.b2"), 1)?;
    let b3 = net.conv_relu(x, &format!("{prefix}.b3a"), 1)?;
    let b3 = net.conv_relu(b3, &format!("{prefix}.b3b"), 1)?;
    let cat = t.concat_channels(&[b1, b2, b3])?;
    let y = net.conv(cat, &format!("{prefix}.fuse"), 1)?;
    Ok(t.relu(t.add(x, y)?))
}

/// Dense detection `[H, W, 7]` and forecast `[H, W, 2T]` grids.
pub fn output_network(net: &Net, z: Var) -> Result<(Var, Var)> {
    let mut h = z;
    let mut i = 0;
    while net.store().contains(&format!("header.block{i}.b1.w")) {
        h = inception_block(net, h, &format!("header.block{i}"))?;
        i += 1;
    }
    let det = net.conv(h, "header.det", 1)?;
    let fc = net.conv(h, "header.forecast", 1)?;
    Ok((det, fc))
}
