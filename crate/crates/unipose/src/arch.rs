//! Static architecture descriptions and the analyzers that run on them:
//! exact parameter counts and deepest-path receptive fields.
//!
//! A [`ModuleSpec`] is a DAG of layer descriptors with one implicit input
//! (node id 0) and exactly one sink. Analyzers never touch weights; they are
//! pure functions of the wiring.

use std::fmt;

use crate::error::{Error, Result};

/// Reserved id of the module input.
pub const INPUT: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv(ConvSpec),
    MaxPool { window: usize, stride: usize },
    /// Pools the full spatial extent to 1x1. Branches through here are
    /// excluded from the deepest-path receptive field: their field is the
    /// whole input by construction, which would drown the quantity the
    /// analyzer exists to compare.
    GlobalPool,
    /// Resolution change by interpolation or broadcast; parameter-free and
    /// neutral to the receptive-field recurrence.
    Resize,
    Concat,
}

#[derive(Debug, Clone)]
pub struct LayerNode {
    pub id: usize,
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

/// DAG of layers; single input, single output.
#[derive(Debug, Clone)]
pub struct ModuleSpec {
    pub name: String,
    nodes: Vec<LayerNode>,
}

impl ModuleSpec {
    pub fn new(name: impl Into<String>) -> Self {
        ModuleSpec {
            name: name.into(),
            nodes: Vec::new(),
        }
    }

    /// Adds a layer reading from `inputs` (node ids, or [`INPUT`]); returns
    /// the new node's id.
    pub fn add(&mut self, name: impl Into<String>, kind: LayerKind, inputs: &[usize]) -> usize {
        let id = self.nodes.len() + 1;
        self.nodes.push(LayerNode {
            id,
            name: name.into(),
            kind,
            inputs: inputs.to_vec(),
        });
        id
    }

    pub fn conv(
        &mut self,
        name: impl Into<String>,
        input: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> usize {
        self.add(
            name,
            LayerKind::Conv(ConvSpec {
                in_channels,
                out_channels,
                kernel,
                stride,
                dilation,
                bias: true,
            }),
            &[input],
        )
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    fn node(&self, id: usize) -> Option<&LayerNode> {
        (id >= 1).then(|| self.nodes.get(id - 1)).flatten()
    }

    /// The single sink node, or an error when the graph is malformed.
    fn output(&self) -> Result<&LayerNode> {
        let mut consumed = vec![false; self.nodes.len() + 1];
        for n in &self.nodes {
            for &i in &n.inputs {
                if i != INPUT && self.node(i).is_none() {
                    return Err(Error::InvalidArgument(format!(
                        "module {}: node {} reads undeclared id {i}",
                        self.name, n.name
                    )));
                }
                consumed[i] = true;
            }
        }
        let mut sinks = self.nodes.iter().filter(|n| !consumed[n.id]);
        let out = sinks.next().ok_or_else(|| {
            Error::InvalidArgument(format!("module {}: no output node", self.name))
        })?;
        if let Some(extra) = sinks.next() {
            return Err(Error::InvalidArgument(format!(
                "module {}: multiple outputs ({}, {})",
                self.name, out.name, extra.name
            )));
        }
        Ok(out)
    }
}

/// Exact learnable-parameter count: every conv contributes
/// `Cout*Cin*k*k` weights plus `Cout` bias terms.
pub fn param_count(spec: &ModuleSpec) -> u64 {
    spec.nodes()
        .iter()
        .filter_map(|n| match &n.kind {
            LayerKind::Conv(c) => {
                let w = (c.out_channels * c.in_channels * c.kernel * c.kernel) as u64;
                Some(w + if c.bias { c.out_channels as u64 } else { 0 })
            }
            _ => None,
        })
        .sum()
}

/// Square receptive field of one output value along the deepest path,
/// via the recurrence `rf += (k-1)*dilation*jump; jump *= stride`.
///
/// Global-pool branches are skipped (see [`LayerKind::GlobalPool`]); a cyclic
/// graph or a malformed output is an error.
pub fn receptive_field(spec: &ModuleSpec) -> Result<usize> {
    let out = spec.output()?;
    // (rf, jump) per node, None while unresolved, Some(None) for excluded
    // global-pool branches.
    let mut memo: Vec<Option<Option<(usize, usize)>>> = vec![None; spec.nodes().len() + 1];
    memo[INPUT] = Some(Some((1, 1)));

    // Depth-first with an explicit stack and an on-path marker for cycles.
    let mut on_path = vec![false; spec.nodes().len() + 1];
    let mut stack: Vec<(usize, bool)> = vec![(out.id, false)];
    while let Some((id, expanded)) = stack.pop() {
        if expanded {
            on_path[id] = false;
            let node = spec.node(id).expect("validated");
            let mut best: Option<(usize, usize)> = None;
            for &i in &node.inputs {
                if let Some((rf, jump)) = memo[i].expect("parents resolved first") {
                    best = Some(match best {
                        Some((brf, bj)) => (brf.max(rf), bj.max(jump)),
                        None => (rf, jump),
                    });
                }
            }
            memo[id] = Some(best.and_then(|(rf, jump)| match &node.kind {
                LayerKind::Conv(c) => {
                    Some((rf + (c.kernel - 1) * c.dilation * jump, jump * c.stride))
                }
                LayerKind::MaxPool { window, stride } => {
                    Some((rf + (window - 1) * jump, jump * stride))
                }
                LayerKind::GlobalPool => None,
                LayerKind::Resize | LayerKind::Concat => Some((rf, jump)),
            }));
            continue;
        }
        if memo[id].is_some() {
            continue;
        }
        if on_path[id] {
            return Err(Error::InvalidArgument(format!(
                "module {}: cycle through node {id}",
                spec.name
            )));
        }
        on_path[id] = true;
        stack.push((id, true));
        let node = spec.node(id).expect("validated");
        for &i in &node.inputs {
            if memo[i].is_none() {
                if on_path[i] {
                    return Err(Error::InvalidArgument(format!(
                        "module {}: cycle through node {i}",
                        spec.name
                    )));
                }
                stack.push((i, false));
            }
        }
    }

    match memo[out.id].flatten() {
        Some((rf, _)) => Ok(rf),
        None => Err(Error::InvalidArgument(format!(
            "module {}: every path to the output crosses a global pool",
            spec.name
        ))),
    }
}

/// One line per analyzed module in the machine-readable report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleReport {
    pub name: String,
    pub params: u64,
    pub receptive_field: usize,
}

impl fmt::Display for ModuleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "module={} params={} receptive_field={}",
            self.name, self.params, self.receptive_field
        )
    }
}

pub fn analyze(spec: &ModuleSpec) -> Result<ModuleReport> {
    Ok(ModuleReport {
        name: spec.name.clone(),
        params: param_count(spec),
        receptive_field: receptive_field(spec)?,
    })
}
