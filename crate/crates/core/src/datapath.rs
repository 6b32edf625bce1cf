//! Structural, cycle-accurate model of two Goldschmidt datapaths.
//!
//! * `Original`: every multiply and complement of the unrolled iteration has
//!   its own unit (`2m + 1` multipliers, `m` complement blocks).
//! * `Feedback`: `MULT1`/`MULT2` form `q_1`/`r_1`, then a single pair `X`
//!   (r path) and `Y` (q path) is reused for every later round. One
//!   complement block sits behind a logic block that selects `r_1` on the
//!   first pass and the fed-back `r_i` afterwards, with a counter that
//!   re-arms the `r_1` input after a preset number of cycles.
//!
//! Scheduling is resource-constrained list scheduling over the iteration's
//! dataflow graph with a fixed node-to-unit binding per topology. The
//! simulator also replays a schedule on real operands so timing and values
//! come from the same run.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixedpoint::FixedValue;
use crate::goldschmidt::{multiply, DivisionProblem, GoldschmidtConfig, Q_INT_BITS, R_INT_BITS};
use crate::recip_table::ReciprocalTable;

/// Absolute cycle total reported for the reference pipelined design. It
/// relies on overlapping consecutive multiplies inside a rectangular
/// multiplier, which this model does not represent.
pub const REFERENCE_ABSOLUTE_CYCLES: u64 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Path {
    Q,
    R,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NodeKind {
    RomLookup,
    /// Produces `q_step` or `r_step`.
    Multiply { path: Path, step: u32 },
    /// Forms `K_{step+1} = 2 - r_step`.
    Complement { step: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Node {
    pub id: usize,
    pub kind: NodeKind,
    pub preds: Vec<usize>,
}

impl Node {
    pub fn label(&self) -> String {
        match self.kind {
            NodeKind::RomLookup => "rom".to_string(),
            NodeKind::Multiply { path: Path::Q, step } => format!("q{step}"),
            NodeKind::Multiply { path: Path::R, step } => format!("r{step}"),
            NodeKind::Complement { step } => format!("c{step}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DataflowGraph {
    pub iterations: u32,
    /// Topologically ordered; the index is the node id.
    pub nodes: Vec<Node>,
}

impl DataflowGraph {
    /// `rom -> (q1, r1)`, `r_i -> c_i -> (q_{i+1}, r_{i+1})`, with the
    /// final round forming only `q_{m+1}`.
    pub fn build(iterations: u32) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::Argument("the datapath needs at least one Step 2 round".into()));
        }
        let mut nodes = Vec::new();
        let mut push = |kind, preds: Vec<usize>| {
            let id = nodes.len();
            nodes.push(Node { id, kind, preds });
            id
        };
        let rom = push(NodeKind::RomLookup, vec![]);
        let mut q = push(NodeKind::Multiply { path: Path::Q, step: 1 }, vec![rom]);
        let mut r = push(NodeKind::Multiply { path: Path::R, step: 1 }, vec![rom]);
        for step in 1..=iterations {
            let c = push(NodeKind::Complement { step }, vec![r]);
            let next_q = push(NodeKind::Multiply { path: Path::Q, step: step + 1 }, vec![q, c]);
            if step < iterations {
                r = push(NodeKind::Multiply { path: Path::R, step: step + 1 }, vec![r, c]);
            }
            q = next_q;
        }
        Ok(DataflowGraph { iterations, nodes })
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes.iter().flat_map(|n| n.preds.iter().map(move |&p| (p, n.id)))
    }

    pub fn count(&self, pred: impl Fn(&NodeKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    pub fn multiplies(&self) -> usize {
        self.count(|k| matches!(k, NodeKind::Multiply { .. }))
    }

    pub fn complements(&self) -> usize {
        self.count(|k| matches!(k, NodeKind::Complement { .. }))
    }

    pub fn rom_lookups(&self) -> usize {
        self.count(|k| matches!(k, NodeKind::RomLookup))
    }

    /// Nodes with no consumers.
    pub fn sinks(&self) -> Vec<usize> {
        let mut used = vec![false; self.nodes.len()];
        for (p, _) in self.edges() {
            used[p] = true;
        }
        (0..self.nodes.len()).filter(|&i| !used[i]).collect()
    }
}

pub fn build_dag(iterations: u32) -> Result<DataflowGraph> {
    DataflowGraph::build(iterations)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Original,
    Feedback,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Original => f.write_str("original"),
            Topology::Feedback => f.write_str("feedback"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TimingParams {
    pub mult_latency: u32,
    pub mult_initiation_interval: u32,
    pub rom_latency: u32,
    pub complement_latency: u32,
    /// Registered selection paid when `r_1` enters the feedback loop.
    pub logic_block_latency: u32,
    /// Cycles after `r_1` passes before the logic block re-arms its `r_1`
    /// input. `None` means `(iterations - 1) * mult_latency`.
    pub counter_preset: Option<u32>,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            mult_latency: 4,
            mult_initiation_interval: 1,
            rom_latency: 1,
            complement_latency: 0,
            logic_block_latency: 1,
            counter_preset: None,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<()> {
        if self.mult_latency == 0 {
            return Err(Error::Argument("multiplier latency must be at least one cycle".into()));
        }
        if self.mult_initiation_interval == 0 {
            return Err(Error::Argument("multiplier initiation interval must be at least one cycle".into()));
        }
        Ok(())
    }

    pub fn preset_for(&self, iterations: u32) -> u32 {
        self.counter_preset
            .unwrap_or(iterations.saturating_sub(1) * self.mult_latency)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Rom,
    Multiplier,
    Complement,
    LogicBlock,
    Counter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct UnitId {
    pub kind: UnitKind,
    pub index: u32,
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            UnitKind::Rom => f.write_str("rom"),
            UnitKind::Multiplier => write!(f, "mult{}", self.index + 1),
            UnitKind::Complement => write!(f, "compl{}", self.index + 1),
            UnitKind::LogicBlock => f.write_str("logic"),
            UnitKind::Counter => f.write_str("counter"),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct UnitInventory {
    pub roms: u32,
    pub multipliers: u32,
    pub complements: u32,
    pub logic_blocks: u32,
    pub counters: u32,
}

impl UnitInventory {
    pub fn count(&self, kind: UnitKind) -> u32 {
        match kind {
            UnitKind::Rom => self.roms,
            UnitKind::Multiplier => self.multipliers,
            UnitKind::Complement => self.complements,
            UnitKind::LogicBlock => self.logic_blocks,
            UnitKind::Counter => self.counters,
        }
    }

    /// Canonical column order: rom, mult1..multK, compl1.., logic, counter.
    pub fn columns(&self) -> Vec<UnitId> {
        [
            UnitKind::Rom,
            UnitKind::Multiplier,
            UnitKind::Complement,
            UnitKind::LogicBlock,
            UnitKind::Counter,
        ]
        .into_iter()
        .flat_map(|kind| (0..self.count(kind)).map(move |index| UnitId { kind, index }))
        .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DatapathSpec {
    pub topology: Topology,
    pub iterations: u32,
    pub units: UnitInventory,
    pub timing: TimingParams,
}

impl DatapathSpec {
    /// Physical unit that executes `node`.
    pub fn bind(&self, node: &Node, multiply_ordinal: u32) -> Result<UnitId> {
        let unit = |kind: UnitKind, index: u32| -> Result<UnitId> {
            let available = self.units.count(kind);
            if available == 0 {
                return Err(Error::Infeasible(format!("{} needs a {kind:?} unit but the datapath has none", node.label())));
            }
            Ok(UnitId { kind, index: index % available })
        };
        match (self.topology, node.kind) {
            (_, NodeKind::RomLookup) => unit(UnitKind::Rom, 0),
            (_, NodeKind::Complement { step }) => unit(UnitKind::Complement, step - 1),
            (Topology::Original, NodeKind::Multiply { .. }) => unit(UnitKind::Multiplier, multiply_ordinal),
            (Topology::Feedback, NodeKind::Multiply { path, step }) => {
                // MULT1 = q1, MULT2 = r1, X = later r rounds, Y = later q rounds.
                let index = match (path, step) {
                    (Path::Q, 1) => 0,
                    (Path::R, 1) => 1,
                    (Path::R, _) => 2,
                    (Path::Q, _) => 3,
                };
                unit(UnitKind::Multiplier, index)
            }
        }
    }

    fn latency(&self, kind: &NodeKind) -> u64 {
        let t = &self.timing;
        (match kind {
            NodeKind::RomLookup => t.rom_latency,
            NodeKind::Multiply { .. } => t.mult_latency,
            NodeKind::Complement { .. } => t.complement_latency,
        }) as u64
    }

    fn initiation_interval(&self, kind: UnitKind) -> u64 {
        match kind {
            UnitKind::Multiplier => self.timing.mult_initiation_interval as u64,
            _ => 1,
        }
    }

    /// Extra cycles on the edge `from -> to`: in the feedback design `r_1`
    /// enters the loop through the registered logic block. Later `r_i`
    /// pass while the counter holds the selection.
    fn routing_latency(&self, from: &Node, to: &Node) -> u64 {
        match (self.topology, from.kind, to.kind) {
            (Topology::Feedback, NodeKind::Multiply { path: Path::R, step: 1 }, NodeKind::Complement { .. }) => {
                self.timing.logic_block_latency as u64
            }
            _ => 0,
        }
    }
}

/// Unit inventory for a topology. The feedback inventory does not depend on
/// the iteration count.
pub fn build_topology(kind: Topology, iterations: u32, timing: TimingParams) -> Result<DatapathSpec> {
    if iterations == 0 {
        return Err(Error::Argument("the datapath needs at least one Step 2 round".into()));
    }
    timing.validate()?;
    let units = match kind {
        Topology::Original => UnitInventory {
            roms: 1,
            multipliers: 2 * iterations + 1,
            complements: iterations,
            logic_blocks: 0,
            counters: 0,
        },
        Topology::Feedback => UnitInventory { roms: 1, multipliers: 4, complements: 1, logic_blocks: 1, counters: 1 },
    };
    Ok(DatapathSpec { topology: kind, iterations, units, timing })
}

// ---------------------------------------------------------------------------
// Logic block

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Output 0: nothing passes.
    #[default]
    None,
    R1,
    Feedback,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LogicBlockState {
    /// What passed on the last step.
    pub select: Route,
    pub counter: u32,
    pub preset: u32,
    /// Counter running: `r_1` has passed and its input is ignored until the
    /// preset elapses.
    pub armed: bool,
}

impl LogicBlockState {
    pub fn new(preset: u32) -> Self {
        LogicBlockState { preset, ..Default::default() }
    }

    pub fn step(&mut self, r1_valid: bool, feedback_valid: bool) -> Route {
        let (next, out) = logic_block_step(*self, r1_valid, feedback_valid);
        *self = next;
        out
    }
}

/// One clock of the logic block.
///
/// | r1 | feedback | out      |
/// |----|----------|----------|
/// | 1  | 0        | r1       |
/// | 0  | 1        | feedback |
/// | 1  | 1        | feedback |
/// | 0  | 0        | none     |
///
/// While the counter runs, an `r_1` arriving alone is discarded. The counter
/// starts when `r_1` passes and clears once it reaches the preset.
pub fn logic_block_step(state: LogicBlockState, r1_valid: bool, feedback_valid: bool) -> (LogicBlockState, Route) {
    let out = match (r1_valid, feedback_valid) {
        (_, true) => Route::Feedback,
        (true, false) if !state.armed => Route::R1,
        _ => Route::None,
    };
    let mut next = state;
    if state.armed {
        next.counter += 1;
        if next.counter >= state.preset {
            next.armed = false;
            next.counter = 0;
        }
    } else if out == Route::R1 && state.preset > 0 {
        next.armed = true;
        next.counter = 0;
    }
    next.select = out;
    (next, out)
}

// ---------------------------------------------------------------------------
// Scheduling

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeTiming {
    pub node: usize,
    pub label: String,
    pub unit: UnitId,
    pub issue: u64,
    pub complete: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LogicCycle {
    pub cycle: u64,
    pub output: Route,
    /// Label of the value passed, if any.
    pub value: Option<String>,
    pub counter: u32,
    pub armed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScheduleReport {
    pub topology: Topology,
    pub iterations: u32,
    pub timing: TimingParams,
    pub units: UnitInventory,
    pub nodes: Vec<NodeTiming>,
    /// Per unit, the `[issue, complete)` intervals of the nodes it ran.
    pub occupancy: BTreeMap<String, Vec<(u64, u64)>>,
    /// One entry per cycle for designs with a logic block.
    pub logic: Vec<LogicCycle>,
    pub total_cycles: u64,
}

/// List scheduling: at each cycle, ready nodes issue in id order when their
/// bound unit has a free issue slot.
pub fn schedule(dag: &DataflowGraph, spec: &DatapathSpec) -> Result<ScheduleReport> {
    if dag.iterations != spec.iterations {
        return Err(Error::Argument(format!(
            "graph has {} rounds but the datapath was built for {}",
            dag.iterations, spec.iterations
        )));
    }
    spec.timing.validate()?;
    if spec.topology == Topology::Feedback && (spec.units.logic_blocks == 0 || spec.units.counters == 0) {
        return Err(Error::Infeasible("the feedback datapath needs a logic block and a counter".into()));
    }
    let mut ordinal = 0;
    let bindings = dag
        .nodes
        .iter()
        .map(|n| {
            let o = ordinal;
            if matches!(n.kind, NodeKind::Multiply { .. }) {
                ordinal += 1;
            }
            spec.bind(n, o)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = dag.nodes.len();
    let mut issue: Vec<Option<u64>> = vec![None; n];
    let mut last_issue: BTreeMap<UnitId, u64> = BTreeMap::new();
    let mut remaining = n;
    let mut cycle = 0u64;
    // Every node can issue within (sum of latencies + issue spacing) cycles.
    let horizon: u64 = dag.nodes.iter().map(|n| spec.latency(&n.kind) + 1).sum::<u64>()
        * (spec.timing.mult_initiation_interval as u64 + spec.timing.logic_block_latency as u64 + 1)
        + 16;
    while remaining > 0 {
        for node in &dag.nodes {
            if issue[node.id].is_some() {
                continue;
            }
            let ready = node.preds.iter().try_fold(0u64, |acc, &p| {
                issue[p].map(|t| acc.max(t + spec.latency(&dag.nodes[p].kind) + spec.routing_latency(&dag.nodes[p], node)))
            });
            let Some(ready) = ready else { continue };
            if ready > cycle {
                continue;
            }
            let unit = bindings[node.id];
            let free = last_issue
                .get(&unit)
                .is_none_or(|&t| t + spec.initiation_interval(unit.kind) <= cycle);
            if free {
                issue[node.id] = Some(cycle);
                last_issue.insert(unit, cycle);
                remaining -= 1;
            }
        }
        cycle += 1;
        if cycle > horizon {
            return Err(Error::Infeasible("schedule did not converge".into()));
        }
    }

    let nodes: Vec<NodeTiming> = dag
        .nodes
        .iter()
        .map(|node| {
            let t = issue[node.id].expect("all issued");
            NodeTiming {
                node: node.id,
                label: node.label(),
                unit: bindings[node.id],
                issue: t,
                complete: t + spec.latency(&node.kind),
            }
        })
        .collect();
    let total_cycles = nodes.iter().map(|t| t.complete).max().unwrap_or(0);
    let mut occupancy: BTreeMap<String, Vec<(u64, u64)>> = BTreeMap::new();
    for t in &nodes {
        occupancy.entry(t.unit.to_string()).or_default().push((t.issue, t.complete));
    }
    let logic = if spec.topology == Topology::Feedback {
        simulate_logic_block(dag, spec, &nodes, total_cycles)?
    } else {
        Vec::new()
    };
    Ok(ScheduleReport {
        topology: spec.topology,
        iterations: spec.iterations,
        timing: spec.timing,
        units: spec.units,
        nodes,
        occupancy,
        logic,
        total_cycles,
    })
}

/// The r values that reach the logic block and the cycle they arrive.
fn logic_arrivals(dag: &DataflowGraph, nodes: &[NodeTiming]) -> Vec<(u64, u32, usize)> {
    dag.nodes
        .iter()
        .filter_map(|n| match n.kind {
            NodeKind::Multiply { path: Path::R, step } => Some((nodes[n.id].complete, step, n.id)),
            _ => None,
        })
        .collect()
}

fn simulate_logic_block(
    dag: &DataflowGraph,
    spec: &DatapathSpec,
    nodes: &[NodeTiming],
    total_cycles: u64,
) -> Result<Vec<LogicCycle>> {
    let arrivals = logic_arrivals(dag, nodes);
    let mut state = LogicBlockState::new(spec.timing.preset_for(spec.iterations));
    let mut out = Vec::with_capacity(total_cycles as usize + 1);
    for cycle in 0..=total_cycles {
        let r1 = arrivals.iter().find(|a| a.0 == cycle && a.1 == 1);
        let fb = arrivals.iter().find(|a| a.0 == cycle && a.1 > 1);
        let route = state.step(r1.is_some(), fb.is_some());
        let value = match route {
            Route::R1 => r1.map(|a| dag.nodes[a.2].label()),
            Route::Feedback => fb.map(|a| dag.nodes[a.2].label()),
            Route::None => None,
        };
        if let Some(a) = r1.filter(|_| route != Route::R1) {
            return Err(Error::Infeasible(format!("logic block dropped {} at cycle {}", dag.nodes[a.2].label(), cycle)));
        }
        out.push(LogicCycle { cycle, output: route, value, counter: state.counter, armed: state.armed });
    }
    Ok(out)
}

impl ScheduleReport {
    pub fn timing_of(&self, label: &str) -> Option<&NodeTiming> {
        self.nodes.iter().find(|t| t.label == label)
    }

    /// Cell contents for every cycle, in canonical column order.
    pub fn cycle_table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let columns = self.units.columns();
        let header = columns.iter().map(|c| c.to_string()).collect();
        let rows = (0..self.total_cycles.max(1))
            .map(|cycle| {
                columns
                    .iter()
                    .map(|col| match col.kind {
                        UnitKind::LogicBlock => self
                            .logic
                            .get(cycle as usize)
                            .and_then(|l| l.value.clone())
                            .unwrap_or_default(),
                        UnitKind::Counter => self
                            .logic
                            .get(cycle as usize)
                            .filter(|l| l.armed)
                            .map(|l| l.counter.to_string())
                            .unwrap_or_default(),
                        _ => self
                            .nodes
                            .iter()
                            .filter(|t| t.unit == *col && t.issue <= cycle && cycle < t.complete.max(t.issue + 1))
                            .map(|t| t.label.clone())
                            .collect::<Vec<_>>()
                            .join("+"),
                    })
                    .collect()
            })
            .collect();
        (header, rows)
    }

    pub fn to_csv(&self) -> String {
        let (header, rows) = self.cycle_table();
        let mut out = format!("cycle,{}\n", header.join(","));
        for (cycle, row) in rows.iter().enumerate() {
            writeln!(out, "{cycle},{}", row.join(",")).unwrap();
        }
        out
    }

    pub fn render_text(&self) -> String {
        let (header, rows) = self.cycle_table();
        let width = rows
            .iter()
            .flatten()
            .chain(&header)
            .map(|c| c.len())
            .max()
            .unwrap_or(1)
            .max(3);
        let mut out = String::new();
        writeln!(out, "topology: {}  iterations: {}", self.topology, self.iterations).unwrap();
        write!(out, "{:>5}", "cycle").unwrap();
        for h in &header {
            write!(out, " {h:>width$}").unwrap();
        }
        out.push('\n');
        for (cycle, row) in rows.iter().enumerate() {
            write!(out, "{cycle:>5}").unwrap();
            for cell in row {
                let cell = if cell.is_empty() { "." } else { cell };
                write!(out, " {cell:>width$}").unwrap();
            }
            out.push('\n');
        }
        writeln!(out, "total_cycles: {}", self.total_cycles).unwrap();
        out
    }
}

/// Resource legality: issues on one unit are at least an initiation
/// interval apart, so no two nodes ever share a pipeline stage.
pub fn check_resources(report: &ScheduleReport) -> Result<()> {
    let mut per_unit: BTreeMap<UnitId, Vec<u64>> = BTreeMap::new();
    for t in &report.nodes {
        per_unit.entry(t.unit).or_default().push(t.issue);
    }
    for (unit, mut issues) in per_unit {
        issues.sort_unstable();
        let ii = match unit.kind {
            UnitKind::Multiplier => report.timing.mult_initiation_interval as u64,
            _ => 1,
        };
        if let Some(w) = issues.windows(2).find(|w| w[1] < w[0] + ii) {
            return Err(Error::Infeasible(format!("{unit} issues at cycles {} and {}", w[0], w[1])));
        }
    }
    Ok(())
}

/// Dependency legality: every node issues after its inputs complete, plus
/// routing through the logic block where applicable.
pub fn check_dependencies(report: &ScheduleReport, dag: &DataflowGraph, spec: &DatapathSpec) -> Result<()> {
    for (p, c) in dag.edges() {
        let need = report.nodes[p].complete + spec.routing_latency(&dag.nodes[p], &dag.nodes[c]);
        if report.nodes[c].issue < need {
            return Err(Error::Infeasible(format!(
                "{} issues at {} before {} is available at {need}",
                report.nodes[c].label, report.nodes[c].issue, report.nodes[p].label
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Value replay

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplayResult {
    pub k: Vec<FixedValue>,
    pub q: Vec<FixedValue>,
    /// `r_1 .. r_m`; the last round does not form `r_{m+1}`.
    pub r: Vec<FixedValue>,
}

impl ReplayResult {
    pub fn final_quotient(&self) -> &FixedValue {
        self.q.last().expect("at least q1")
    }
}

/// Executes a schedule cycle by cycle on real operands. Each cycle first
/// retires nodes completing in it, then clocks the logic block (feedback
/// design), then issues the nodes scheduled for it, reading operands from
/// retired results or the logic block's output register.
pub fn replay(
    report: &ScheduleReport,
    dag: &DataflowGraph,
    problem: &DivisionProblem,
    config: &GoldschmidtConfig,
    table: &ReciprocalTable,
) -> Result<ReplayResult> {
    if config.iterations != dag.iterations {
        return Err(Error::Argument("replay needs the same iteration count as the graph".into()));
    }
    config.validate()?;
    let prec = config.mult_frac_bits;
    let n = dag.nodes.len();
    let mut in_flight: Vec<Option<FixedValue>> = vec![None; n];
    let mut retired: Vec<Option<FixedValue>> = vec![None; n];
    let mut logic_reg: Option<FixedValue> = None;
    let mut logic = LogicBlockState::new(report.timing.preset_for(report.iterations));
    let arrivals = logic_arrivals(dag, &report.nodes);

    let operand = |retired: &[Option<FixedValue>], id: usize, cycle: u64| -> Result<FixedValue> {
        retired[id]
            .clone()
            .ok_or_else(|| Error::Infeasible(format!("{} read at cycle {cycle} before it retired", dag.nodes[id].label())))
    };

    let d = if problem.d().frac_bits() < config.p { problem.d().zero_extend(config.p)? } else { problem.d().clone() };

    for cycle in 0..=report.total_cycles {
        for t in report.nodes.iter().filter(|t| t.complete == cycle) {
            if let Some(v) = in_flight[t.node].take() {
                retired[t.node] = Some(v);
            }
        }
        if report.topology == Topology::Feedback {
            let r1 = arrivals.iter().find(|a| a.0 == cycle && a.1 == 1).map(|a| a.2);
            let fb = arrivals.iter().find(|a| a.0 == cycle && a.1 > 1).map(|a| a.2);
            match logic.step(r1.is_some(), fb.is_some()) {
                Route::R1 => logic_reg = retired[r1.expect("r1 valid")].clone(),
                Route::Feedback => logic_reg = retired[fb.expect("feedback valid")].clone(),
                Route::None => {}
            }
        }
        // Issue in id order so zero-latency producers feed same-cycle consumers.
        for t in report.nodes.iter().filter(|t| t.issue == cycle) {
            let node = &dag.nodes[t.node];
            let value = match node.kind {
                NodeKind::RomLookup => table.lookup(&d)?.clone(),
                NodeKind::Complement { .. } => {
                    let r = match report.topology {
                        Topology::Original => operand(&retired, node.preds[0], cycle)?,
                        Topology::Feedback => logic_reg
                            .clone()
                            .ok_or_else(|| Error::Infeasible(format!("logic block empty at cycle {cycle}")))?,
                    };
                    r.twos_complement(config.complement_mode)?
                }
                NodeKind::Multiply { path, step } => {
                    let (lhs, k) = if step == 1 {
                        let input = match path {
                            Path::Q => problem.n().clone(),
                            Path::R => problem.d().clone(),
                        };
                        (input, operand(&retired, node.preds[0], cycle)?)
                    } else {
                        (operand(&retired, node.preds[0], cycle)?, operand(&retired, node.preds[1], cycle)?)
                    };
                    let int_bits = if path == Path::Q { Q_INT_BITS } else { R_INT_BITS };
                    multiply(&lhs, &k, prec, int_bits)?
                }
            };
            if t.complete == t.issue {
                retired[t.node] = Some(value);
            } else {
                in_flight[t.node] = Some(value);
            }
        }
    }

    let mut out = ReplayResult { k: Vec::new(), q: Vec::new(), r: Vec::new() };
    for node in &dag.nodes {
        let v = retired[node.id]
            .clone()
            .ok_or_else(|| Error::Infeasible(format!("{} never retired", node.label())))?;
        match node.kind {
            NodeKind::RomLookup => out.k.push(v),
            NodeKind::Complement { .. } => out.k.push(v),
            NodeKind::Multiply { path: Path::Q, .. } => out.q.push(v),
            NodeKind::Multiply { path: Path::R, .. } => out.r.push(v),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Area and comparison

/// Relative area weights. These are model inputs, not measurements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AreaWeights {
    pub multiplier: u64,
    pub complement: u64,
    pub rom: u64,
    pub logic_block: u64,
    pub counter: u64,
}

pub const AREA_WEIGHTS: AreaWeights = AreaWeights { multiplier: 100, complement: 2, rom: 20, logic_block: 1, counter: 1 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AreaReport {
    pub topology: Topology,
    pub iterations: u32,
    pub units: UnitInventory,
    pub weighted_area: u64,
}

/// `a - b` per unit type: positive entries are units `b` saves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AreaDelta {
    pub multipliers: i64,
    pub complements: i64,
    pub roms: i64,
    pub logic_blocks: i64,
    pub counters: i64,
    pub weighted_area: i64,
}

pub fn area_report(spec: &DatapathSpec) -> AreaReport {
    let u = spec.units;
    let w = AREA_WEIGHTS;
    let weighted_area = u.multipliers as u64 * w.multiplier
        + u.complements as u64 * w.complement
        + u.roms as u64 * w.rom
        + u.logic_blocks as u64 * w.logic_block
        + u.counters as u64 * w.counter;
    AreaReport { topology: spec.topology, iterations: spec.iterations, units: u, weighted_area }
}

pub fn area_delta(a: &AreaReport, b: &AreaReport) -> AreaDelta {
    let d = |x: u32, y: u32| x as i64 - y as i64;
    AreaDelta {
        multipliers: d(a.units.multipliers, b.units.multipliers),
        complements: d(a.units.complements, b.units.complements),
        roms: d(a.units.roms, b.units.roms),
        logic_blocks: d(a.units.logic_blocks, b.units.logic_blocks),
        counters: d(a.units.counters, b.units.counters),
        weighted_area: a.weighted_area as i64 - b.weighted_area as i64,
    }
}

/// The published claims checked at three Step 2 rounds: three multipliers
/// and two complement blocks saved for one extra cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ClaimsCheck {
    pub expected_mult_saving: i64,
    pub expected_complement_saving: i64,
    pub expected_cycle_delta: i64,
    pub passed: bool,
}

pub const CLAIMS_ITERATIONS: u32 = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ComparisonReport {
    pub iterations: u32,
    pub timing: TimingParams,
    pub original: ScheduleReport,
    pub feedback: ScheduleReport,
    pub original_area: AreaReport,
    pub feedback_area: AreaReport,
    /// original minus feedback
    pub area_delta: AreaDelta,
    /// feedback total minus original total
    pub cycle_delta: i64,
    /// Whether `cycle_delta` equals the logic block latency.
    pub one_cycle_tradeoff: bool,
    pub claims: Option<ClaimsCheck>,
    pub reference_absolute_cycles: u64,
}

pub fn compare(iterations: u32, timing: TimingParams) -> Result<ComparisonReport> {
    let dag = DataflowGraph::build(iterations)?;
    let original_spec = build_topology(Topology::Original, iterations, timing)?;
    let feedback_spec = build_topology(Topology::Feedback, iterations, timing)?;
    let original = schedule(&dag, &original_spec)?;
    let feedback = schedule(&dag, &feedback_spec)?;
    let original_area = area_report(&original_spec);
    let feedback_area = area_report(&feedback_spec);
    let area_delta = area_delta(&original_area, &feedback_area);
    let cycle_delta = feedback.total_cycles as i64 - original.total_cycles as i64;
    let claims = (iterations == CLAIMS_ITERATIONS).then(|| {
        let (m, c, t) = (3, 2, 1);
        ClaimsCheck {
            expected_mult_saving: m,
            expected_complement_saving: c,
            expected_cycle_delta: t,
            passed: area_delta.multipliers == m && area_delta.complements == c && cycle_delta == t,
        }
    });
    Ok(ComparisonReport {
        iterations,
        timing,
        one_cycle_tradeoff: cycle_delta == timing.logic_block_latency as i64,
        original,
        feedback,
        original_area,
        feedback_area,
        area_delta,
        cycle_delta,
        claims,
        reference_absolute_cycles: REFERENCE_ABSOLUTE_CYCLES,
    })
}

impl ComparisonReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let a = &self.area_delta;
        writeln!(out, "iterations: {}", self.iterations).unwrap();
        for (name, area, sched) in [
            ("original", &self.original_area, &self.original),
            ("feedback", &self.feedback_area, &self.feedback),
        ] {
            let u = area.units;
            writeln!(
                out,
                "{name:<9} multipliers={} complements={} roms={} logic_blocks={} counters={} area={} total_cycles={}",
                u.multipliers, u.complements, u.roms, u.logic_blocks, u.counters, area.weighted_area, sched.total_cycles
            )
            .unwrap();
        }
        writeln!(
            out,
            "saved by feedback: multipliers={} complements={} roms={} logic_blocks={} counters={} area={}",
            a.multipliers, a.complements, a.roms, a.logic_blocks, a.counters, a.weighted_area
        )
        .unwrap();
        writeln!(out, "cycle delta (feedback - original): {}", self.cycle_delta).unwrap();
        writeln!(
            out,
            "cycle delta equals logic block latency ({}): {}",
            self.timing.logic_block_latency,
            if self.one_cycle_tradeoff { "yes" } else { "no" }
        )
        .unwrap();
        writeln!(
            out,
            "note: the published absolute total of {} cycles assumes an overlapped multiplier pipeline that is not modelled here",
            self.reference_absolute_cycles
        )
        .unwrap();
        if let Some(c) = &self.claims {
            writeln!(
                out,
                "claims: {} (multiplier saving {} / {}, complement saving {} / {}, cycle delta {} / {})",
                if c.passed { "PASS" } else { "FAIL" },
                a.multipliers,
                c.expected_mult_saving,
                a.complements,
                c.expected_complement_saving,
                self.cycle_delta,
                c.expected_cycle_delta
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> TimingParams {
        TimingParams::default()
    }

    #[test]
    fn dag_counts() {
        for (m, mults, compls) in [(1, 3, 1), (2, 5, 2), (3, 7, 3)] {
            let g = DataflowGraph::build(m).unwrap();
            assert_eq!(g.rom_lookups(), 1);
            assert_eq!(g.multiplies(), mults);
            assert_eq!(g.complements(), compls);
            let sinks = g.sinks();
            assert_eq!(sinks.len(), 1);
            assert_eq!(g.nodes[sinks[0]].label(), format!("q{}", m + 1));
        }
        assert!(DataflowGraph::build(0).is_err());
    }

    #[test]
    fn dag_is_topological() {
        let g = DataflowGraph::build(4).unwrap();
        assert!(g.edges().all(|(p, c)| p < c));
        let labels: Vec<_> = DataflowGraph::build(2).unwrap().nodes.iter().map(|n| n.label()).collect();
        assert_eq!(labels, ["rom", "q1", "r1", "c1", "q2", "r2", "c2", "q3"]);
    }

    #[test]
    fn inventories() {
        let o = build_topology(Topology::Original, 3, t()).unwrap();
        assert_eq!((o.units.multipliers, o.units.complements, o.units.logic_blocks), (7, 3, 0));
        let f3 = build_topology(Topology::Feedback, 3, t()).unwrap();
        assert_eq!(
            f3.units,
            UnitInventory { roms: 1, multipliers: 4, complements: 1, logic_blocks: 1, counters: 1 }
        );
        let f5 = build_topology(Topology::Feedback, 5, t()).unwrap();
        assert_eq!(f3.units, f5.units);
    }

    #[test]
    fn logic_block_table_rows() {
        let fresh = LogicBlockState::new(8);
        assert_eq!(logic_block_step(fresh, true, false).1, Route::R1);
        assert_eq!(logic_block_step(fresh, false, true).1, Route::Feedback);
        assert_eq!(logic_block_step(fresh, true, true).1, Route::Feedback);
        assert_eq!(logic_block_step(fresh, false, false).1, Route::None);
        let armed = logic_block_step(fresh, true, false).0;
        assert!(armed.armed);
        assert_eq!(logic_block_step(armed, true, true).1, Route::Feedback);
        assert_eq!(logic_block_step(armed, false, false).1, Route::None);
    }

    #[test]
    fn logic_block_revert() {
        let mut s = LogicBlockState::new(8);
        assert_eq!(s.step(true, false), Route::R1);
        for _ in 1..8 {
            assert_eq!(s.step(true, false), Route::None);
            assert!(s.counter <= s.preset);
        }
        // eighth cycle after r1 passed: counter reaches the preset and clears
        assert_eq!(s.step(false, false), Route::None);
        assert!(!s.armed);
        assert_eq!(s.counter, 0);
        assert_eq!(s.step(true, false), Route::R1);
    }

    #[test]
    fn default_totals() {
        let g = DataflowGraph::build(3).unwrap();
        let o = schedule(&g, &build_topology(Topology::Original, 3, t()).unwrap()).unwrap();
        let f = schedule(&g, &build_topology(Topology::Feedback, 3, t()).unwrap()).unwrap();
        assert_eq!(o.total_cycles, 17);
        assert_eq!(f.total_cycles, 18);
        assert_eq!(f.timing_of("c1").unwrap().issue, 6);
        assert_eq!(f.timing_of("q4").unwrap().unit, UnitId { kind: UnitKind::Multiplier, index: 3 });
        assert_eq!(f.timing_of("r3").unwrap().unit, UnitId { kind: UnitKind::Multiplier, index: 2 });
    }

    #[test]
    fn unit_latency_collapse() {
        let timing = TimingParams { mult_latency: 1, rom_latency: 0, logic_block_latency: 0, ..t() };
        let g = DataflowGraph::build(3).unwrap();
        let o = schedule(&g, &build_topology(Topology::Original, 3, timing).unwrap()).unwrap();
        assert_eq!(o.total_cycles, 4);
    }

    #[test]
    fn infeasible_without_units() {
        let g = DataflowGraph::build(2).unwrap();
        let mut spec = build_topology(Topology::Original, 2, t()).unwrap();
        spec.units.complements = 0;
        assert!(matches!(schedule(&g, &spec), Err(Error::Infeasible(_))));
        let mut spec = build_topology(Topology::Feedback, 2, t()).unwrap();
        spec.units.logic_blocks = 0;
        assert!(matches!(schedule(&g, &spec), Err(Error::Infeasible(_))));
        let spec = build_topology(Topology::Feedback, 3, t()).unwrap();
        assert!(matches!(schedule(&g, &spec), Err(Error::Argument(_))));
    }

    #[test]
    fn structural_stall_when_multipliers_are_shared() {
        // Two multipliers for five multiplies: still legal, never faster.
        let g = DataflowGraph::build(2).unwrap();
        let mut spec = build_topology(Topology::Original, 2, t()).unwrap();
        let base = schedule(&g, &spec).unwrap().total_cycles;
        spec.units.multipliers = 1;
        spec.timing.mult_initiation_interval = 4;
        let shared = schedule(&g, &spec).unwrap();
        check_resources(&shared).unwrap();
        check_dependencies(&shared, &g, &spec).unwrap();
        assert!(shared.total_cycles > base);
    }

    #[test]
    fn area_deltas() {
        let area = |k, m| area_report(&build_topology(k, m, t()).unwrap());
        let d = area_delta(&area(Topology::Original, 3), &area(Topology::Feedback, 3));
        assert_eq!((d.multipliers, d.complements, d.logic_blocks, d.counters), (3, 2, -1, -1));
        let d = area_delta(&area(Topology::Original, 1), &area(Topology::Feedback, 1));
        assert_eq!((d.multipliers, d.complements, d.logic_blocks, d.counters), (-1, 0, -1, -1));
        let d = area_delta(&area(Topology::Feedback, 3), &area(Topology::Feedback, 5));
        assert_eq!(d, AreaDelta::default());
        assert_eq!(area(Topology::Original, 3).weighted_area, 700 + 6 + 20);
    }

    #[test]
    fn comparison_cases() {
        let c = compare(3, t()).unwrap();
        assert_eq!((c.cycle_delta, c.area_delta.multipliers, c.area_delta.complements), (1, 3, 2));
        assert!(c.claims.unwrap().passed);
        let c = compare(3, TimingParams { logic_block_latency: 0, ..t() }).unwrap();
        assert_eq!(c.cycle_delta, 0);
        assert!(!c.claims.unwrap().passed);
        let c = compare(5, t()).unwrap();
        assert_eq!((c.cycle_delta, c.area_delta.multipliers), (1, 7));
        assert!(c.claims.is_none());
    }

    #[test]
    fn cycle_table_layout() {
        let g = DataflowGraph::build(3).unwrap();
        let f = schedule(&g, &build_topology(Topology::Feedback, 3, t()).unwrap()).unwrap();
        let csv = f.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "cycle,rom,mult1,mult2,mult3,mult4,compl1,logic,counter");
        assert_eq!(csv.lines().count(), 1 + 18);
        assert_eq!(lines.next().unwrap(), "0,rom,,,,,,,");
        assert!(csv.contains("\n5,,,,,,,r1,0\n"));
        assert!(f.render_text().ends_with("total_cycles: 18\n"));
    }
}
