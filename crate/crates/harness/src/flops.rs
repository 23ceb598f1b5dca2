//! Analytic operation counts for one forward pass.
//!
//! Conventions: convolution `2·kh·kw·(C_in/groups)·C_out·H_out·W_out`
//! (direct form, bias adds not counted), linear `2·m·n·p`, FFT
//! `5·HW·log₂(HW)` per plane rounded to the nearest integer, activations
//! and other elementwise steps one op per element unless noted. Data
//! movement (regroup, restore, concat, split) is free.

use std::fmt::Write as _;

use mgdfis_core::gdim::GroupAxis;
use mgdfis_core::{ConvSpec, Dims, Padding, Result};

use crate::config::RunConfig;

/// Modules in the order they are switched on when tracing the ablation
/// ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    /// Aggregation of the two inputs only.
    Baseline,
    Gmm,
    /// DMM with the gate fed straight from `F_add`.
    Dmm,
    /// FTSSA inside the DMM gate.
    Ftssa,
    /// Pixel attention and the final fusion.
    Dpam,
}

impl Level {
    pub const LADDER: [Level; 5] = [
        Level::Baseline,
        Level::Gmm,
        Level::Dmm,
        Level::Ftssa,
        Level::Dpam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Level::Baseline => "baseline",
            Level::Gmm => "+gmm",
            Level::Dmm => "+dmm",
            Level::Ftssa => "+ftssa",
            Level::Dpam => "+dpam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopEntry {
    pub module: &'static str,
    pub op: String,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub entries: Vec<FlopEntry>,
    /// Per module in first-appearance order.
    pub module_totals: Vec<(&'static str, u64)>,
    pub total: u64,
}

impl FlopReport {
    pub fn from_entries(entries: Vec<FlopEntry>) -> Self {
        let mut module_totals: Vec<(&'static str, u64)> = Vec::new();
        for e in &entries {
            match module_totals.iter_mut().find(|(m, _)| *m == e.module) {
                Some((_, t)) => *t += e.flops,
                None => module_totals.push((e.module, e.flops)),
            }
        }
        let total = module_totals.iter().map(|(_, t)| t).sum();
        Self {
            entries,
            module_totals,
            total,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{}.{} = {}", e.module, e.op, e.flops);
        }
        for (m, t) in &self.module_totals {
            let _ = writeln!(s, "total.{m} = {t}");
        }
        let _ = writeln!(s, "total = {}", self.total);
        s
    }
}

/// Convolution count for a batch of `n` planes of `h × w`.
pub fn conv_flops(spec: &ConvSpec, n: usize, h: usize, w: usize) -> Result<u64> {
    spec.validate()?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let (kh, kw) = spec.kernel;
    Ok(2 * (kh * kw * spec.in_per_group() * spec.out_channels * ho * wo * n) as u64)
}

/// `(m × n)·(n × p)`.
pub fn linear_flops(m: usize, n: usize, p: usize) -> u64 {
    2 * (m * n * p) as u64
}

/// One 2-D transform over `planes` planes of `h × w`.
pub fn fft_flops(planes: usize, h: usize, w: usize) -> u64 {
    let hw = (h * w) as f64;
    (5.0 * hw * hw.log2() * planes as f64).round() as u64
}

struct Counter {
    module: &'static str,
    entries: Vec<FlopEntry>,
}

impl Counter {
    fn add(&mut self, op: impl Into<String>, flops: u64) {
        self.entries.push(FlopEntry {
            module: self.module,
            op: op.into(),
            flops,
        });
    }

    fn conv(&mut self, op: &str, spec: ConvSpec, n: usize, h: usize, w: usize) -> Result<()> {
        let f = conv_flops(&spec, n, h, w)?;
        self.add(op, f);
        Ok(())
    }

    fn elementwise(&mut self, op: &str, elements: usize, per_element: usize) {
        self.add(op, (elements * per_element) as u64);
    }
}

/// Bilinear resampling: four taps, one multiply-add each, per output.
const BILINEAR_PER_OUTPUT: usize = 8;

fn reconcile(c: &mut Counter, label: &str, f1: Dims, f2: Dims) -> Result<()> {
    if f1 == f2 {
        return Ok(());
    }
    let [n, c1, h, w] = f1;
    c.elementwise(
        &format!("{label}.resize"),
        n * f2[1] * h * w,
        BILINEAR_PER_OUTPUT,
    );
    c.conv(
        &format!("{label}.proj"),
        ConvSpec::pointwise(f2[1], c1),
        n,
        h,
        w,
    )
}

fn dyt(c: &mut Counter, op: &str, elements: usize) {
    // tanh plus scale, multiply and shift.
    c.elementwise(op, elements, 4);
}

fn mona(
    c: &mut Counter,
    p: &str,
    ch: usize,
    reduced: usize,
    n: usize,
    h: usize,
    w: usize,
) -> Result<()> {
    let (full, small) = (n * ch * h * w, n * reduced * h * w);
    c.conv(
        &format!("{p}.down"),
        ConvSpec::pointwise(ch, reduced),
        n,
        h,
        w,
    )?;
    for k in [3, 5, 7] {
        c.conv(
            &format!("{p}.dw{k}"),
            ConvSpec::depthwise(reduced, (k, k)),
            n,
            h,
            w,
        )?;
    }
    // Two adds and a scale for the average, then the skip add.
    c.elementwise(&format!("{p}.average"), small, 4);
    c.conv(
        &format!("{p}.mix"),
        ConvSpec::pointwise(reduced, reduced),
        n,
        h,
        w,
    )?;
    c.elementwise(&format!("{p}.mix_skip"), small, 1);
    c.elementwise(&format!("{p}.gelu"), small, 1);
    c.conv(
        &format!("{p}.up"),
        ConvSpec::pointwise(reduced, ch),
        n,
        h,
        w,
    )?;
    c.add(format!("{p}.xmona"), linear_flops(n * h * w, ch, ch));
    // Bias, scale and the add onto the main branch.
    c.elementwise(&format!("{p}.xmona_scale"), full, 3);
    Ok(())
}

fn tssa(c: &mut Counter, ch: usize, heads: usize, d: usize, n: usize, h: usize, w: usize) {
    let tokens = n * h * w;
    let inner = heads * d;
    let stat = tokens * inner;
    c.add("tssa.qkv", linear_flops(tokens, ch, inner));
    c.elementwise("tssa.norms", stat, 2);
    c.elementwise("tssa.moments", stat, 3);
    c.elementwise("tssa.pi", tokens * heads, 3);
    c.elementwise("tssa.dots", stat, 3);
    c.elementwise("tssa.attn", n * inner, 2);
    c.elementwise("tssa.mix", stat, 2);
    c.add(
        "tssa.out",
        linear_flops(tokens, inner, ch) + (tokens * ch) as u64,
    );
}

fn seff(c: &mut Counter, ch: usize, base: usize, n: usize, h: usize, w: usize) -> Result<()> {
    let plane = ch * h * w;
    c.conv("seff.split", ConvSpec::pointwise(ch, 2 * ch), n, h, w)?;
    c.conv("seff.branch1", ConvSpec::depthwise(ch, (3, 3)), n, h, w)?;
    c.conv(
        "seff.branch2",
        ConvSpec::depthwise(ch, (3, 3))
            .with_dilation((2, 2))
            .with_same_padding(),
        n,
        h,
        w,
    )?;
    for b in ["branch1", "branch2"] {
        c.add(format!("seff.{b}.fft"), fft_flops(n * ch, h, w));
        if (h, w) != (base, base) {
            c.elementwise(
                &format!("seff.{b}.weight_resize"),
                2 * plane,
                BILINEAR_PER_OUTPUT,
            );
        }
        // Complex multiply plus the real bias.
        c.elementwise(&format!("seff.{b}.reweight"), n * plane, 7);
        c.add(format!("seff.{b}.ifft"), fft_flops(n * ch, h, w));
    }
    c.elementwise("seff.gate", n * plane, 2);
    c.conv("seff.merge", ConvSpec::pointwise(ch, ch), n, h, w)
}

fn ftssa(cfg: &RunConfig, c: &mut Counter) -> Result<()> {
    let [n, ch, h, w] = cfg.f1;
    let reduced = mgdfis_core::ftssa::mona::reduced_channels(ch, cfg.mona_ratio);
    let elements = n * ch * h * w;
    dyt(c, "daff.dyt", elements);
    tssa(c, ch, cfg.heads, cfg.head_dim, n, h, w);
    c.elementwise("daff.residual", elements, 1);
    mona(c, "daff.mona", ch, reduced, n, h, w)?;
    dyt(c, "serr.dyt", elements);
    seff(c, ch, cfg.seff_base, n, h, w)?;
    c.elementwise("serr.residual", elements, 1);
    mona(c, "serr.mona", ch, reduced, n, h, w)
}

fn gmm(cfg: &RunConfig, c: &mut Counter) -> Result<()> {
    let [n, ch, h, w] = cfg.f1;
    let k = cfg.k;
    let elements = n * ch * h * w;
    for (label, axis) in [("col", GroupAxis::Width), ("row", GroupAxis::Height)] {
        let [_, gc, gh, gw] = axis.grouped_dims(cfg.f1, k);
        c.elementwise(&format!("{label}.pos"), elements, 1);
        c.conv(
            &format!("{label}.conv"),
            ConvSpec::same(gc, gc, (3, 3)),
            n,
            gh,
            gw,
        )?;
        // Normalize, scale and shift.
        c.elementwise(&format!("{label}.bn"), elements, 4);
        c.elementwise(&format!("{label}.gelu"), elements, 1);
        c.conv(
            &format!("{label}.fuse"),
            ConvSpec::pointwise(2 * ch, ch),
            n,
            h,
            w,
        )?;
    }
    Ok(())
}

fn dmm(cfg: &RunConfig, c: &mut Counter) -> Result<()> {
    let [n, ch, h, w] = cfg.f1;
    let hidden = (ch / cfg.mlp_ratio.max(1)).max(1);
    let elements = n * ch * h * w;
    c.conv("conv46", ConvSpec::same(ch, ch, (4, 6)), n, h, w)?;
    c.conv("conv64", ConvSpec::same(ch, ch, (6, 4)), n, h, w)?;
    c.elementwise("residual", elements, 2);
    c.elementwise("gap", elements, 1);
    c.add("mlp1", linear_flops(n, ch, hidden));
    c.elementwise("gelu", n * hidden, 1);
    c.add("mlp2", linear_flops(n, hidden, ch));
    c.elementwise("silu", n * ch, 1);
    c.elementwise("gate", elements, 1);
    Ok(())
}

fn dpam(cfg: &RunConfig, c: &mut Counter) -> Result<()> {
    let [n, ch, h, w] = cfg.f1;
    let spec = ConvSpec::new(2 * ch, ch, (7, 7)).with_padding(Padding::uniform(3));
    c.conv("conv7x7", spec, n, h, w)?;
    c.elementwise("sigmoid", n * ch * h * w, 1);
    Ok(())
}

fn fuse(cfg: &RunConfig, c: &mut Counter) -> Result<()> {
    reconcile(c, "x2", cfg.f1, cfg.f2)?;
    // Background sum, the two map products, the blend and the outer weight.
    c.elementwise("blend", cfg.f1.iter().product(), 8);
    Ok(())
}

/// Counts for the modules enabled at `level`.
pub fn flops_at(cfg: &RunConfig, level: Level) -> Result<FlopReport> {
    let mut entries = Vec::new();
    let mut section =
        |module: &'static str, f: &dyn Fn(&mut Counter) -> Result<()>| -> Result<()> {
            let mut c = Counter {
                module,
                entries: Vec::new(),
            };
            f(&mut c)?;
            entries.extend(c.entries);
            Ok(())
        };
    section("aggregate", &|c| {
        reconcile(c, "f2", cfg.f1, cfg.f2)?;
        c.elementwise("sum", cfg.f1.iter().product(), 1);
        Ok(())
    })?;
    if level >= Level::Gmm {
        section("gmm", &|c| gmm(cfg, c))?;
    }
    if level >= Level::Dmm {
        section("dmm", &|c| dmm(cfg, c))?;
    }
    if level >= Level::Ftssa {
        section("ftssa", &|c| ftssa(cfg, c))?;
    }
    if level >= Level::Dpam {
        section("dpam", &|c| dpam(cfg, c))?;
        section("fuse", &|c| fuse(cfg, c))?;
    }
    Ok(FlopReport::from_entries(entries))
}

/// The whole pipeline.
pub fn flops(cfg: &RunConfig) -> Result<FlopReport> {
    flops_at(cfg, Level::Dpam)
}

/// Totals at every rung of the ladder.
pub fn ladder(cfg: &RunConfig) -> Result<Vec<(Level, u64)>> {
    Level::LADDER
        .iter()
        .map(|&l| Ok((l, flops_at(cfg, l)?.total)))
        .collect()
}
