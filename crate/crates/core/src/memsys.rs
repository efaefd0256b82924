//! DRAM, global buffers and core-local registers: event counting, energy,
//! tiling into the global buffers and double-buffered latency.
//!
//! Energy table values are picojoules per event. GLB events are counted in
//! port-width words, DRAM events in bytes, register events in elements.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    DramReadByte,
    DramWriteByte,
    WeightGlbRead,
    WeightGlbWrite,
    TtbGlbRead,
    TtbGlbWrite,
    RegisterAccess,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::DramReadByte,
        EventKind::DramWriteByte,
        EventKind::WeightGlbRead,
        EventKind::WeightGlbWrite,
        EventKind::TtbGlbRead,
        EventKind::TtbGlbWrite,
        EventKind::RegisterAccess,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::DramReadByte => "dram_read_byte",
            EventKind::DramWriteByte => "dram_write_byte",
            EventKind::WeightGlbRead => "weight_glb_read",
            EventKind::WeightGlbWrite => "weight_glb_write",
            EventKind::TtbGlbRead => "ttb_glb_read",
            EventKind::TtbGlbWrite => "ttb_glb_write",
            EventKind::RegisterAccess => "register_access",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown event kind {s:?}")))
    }
}

/// Picojoules per event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTable {
    pub dram_read_byte: f64,
    pub dram_write_byte: f64,
    /// Per weight-GLB port word.
    pub weight_glb_read: f64,
    pub weight_glb_write: f64,
    /// Per TTB-GLB port word.
    pub ttb_glb_read: f64,
    pub ttb_glb_write: f64,
    /// Per element moved between a core's registers and its local buffers.
    pub register_access: f64,
}

const DEFAULT_TABLE: &str = include_str!("../data/energy_default.json");

impl Default for EnergyTable {
    fn default() -> Self {
        Self::from_json(DEFAULT_TABLE).expect("bundled energy table parses")
    }
}

impl EnergyTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, kind: EventKind) -> f64 {
        match kind {
            EventKind::DramReadByte => self.dram_read_byte,
            EventKind::DramWriteByte => self.dram_write_byte,
            EventKind::WeightGlbRead => self.weight_glb_read,
            EventKind::WeightGlbWrite => self.weight_glb_write,
            EventKind::TtbGlbRead => self.ttb_glb_read,
            EventKind::TtbGlbWrite => self.ttb_glb_write,
            EventKind::RegisterAccess => self.register_access,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for k in EventKind::ALL {
            let e = self.get(k);
            if !(e.is_finite() && e >= 0.0) {
                return Err(SimError::Config(format!("energy for {k} must be finite and >= 0, got {e}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemConfig {
    pub clock_mhz: f64,
    pub dram_bandwidth_bytes_per_cycle: f64,
    pub dram_power_mw: f64,
    pub weight_glb_kib: u64,
    pub weight_port_bits: u64,
    /// Size of each of the two ping-pong TTB GLBs.
    pub ttb_glb_kib: u64,
    pub ttb_port_bits: u64,
    /// Tag comparators in the stratifier.
    pub stratifier_comparators: u64,
    /// Neurons the spike generator updates per cycle.
    pub spikegen_lanes: u64,
    /// Energy of one LIF neuron update in the spike generator.
    pub e_lif_pj: f64,
    /// Alternative energy table file; the bundled table is used when absent.
    pub energy_table: Option<String>,
}

impl Default for MemConfig {
    fn default() -> Self {
        Self {
            clock_mhz: 500.0,
            dram_bandwidth_bytes_per_cycle: 153.6,
            dram_power_mw: 323.9,
            weight_glb_kib: 144,
            weight_port_bits: 512,
            ttb_glb_kib: 12,
            ttb_port_bits: 128,
            stratifier_comparators: 32,
            spikegen_lanes: 512,
            e_lif_pj: 0.1,
            energy_table: None,
        }
    }
}

impl MemConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(SimError::Config(format!("mem.{name} must be positive")))
            }
        };
        pos("clock_mhz", self.clock_mhz > 0.0 && self.clock_mhz.is_finite())?;
        pos(
            "dram_bandwidth_bytes_per_cycle",
            self.dram_bandwidth_bytes_per_cycle > 0.0 && self.dram_bandwidth_bytes_per_cycle.is_finite(),
        )?;
        pos("dram_power_mw", self.dram_power_mw >= 0.0 && self.dram_power_mw.is_finite())?;
        pos("weight_glb_kib", self.weight_glb_kib > 0)?;
        pos("weight_port_bits", self.weight_port_bits > 0)?;
        pos("ttb_glb_kib", self.ttb_glb_kib > 0)?;
        pos("ttb_port_bits", self.ttb_port_bits > 0)?;
        pos("stratifier_comparators", self.stratifier_comparators > 0)?;
        pos("spikegen_lanes", self.spikegen_lanes > 0)?;
        pos("e_lif_pj", self.e_lif_pj >= 0.0)?;
        Ok(())
    }

    /// Weight-GLB bits usable by one tile (one ping-pong half).
    pub fn weight_half_bits(&self) -> u64 {
        self.weight_glb_kib * 1024 * 8 / 2
    }

    /// TTB-GLB bits for one of `types` equally sized partitions of a bank.
    pub fn ttb_partition_bits(&self, types: u64) -> u64 {
        self.ttb_glb_kib * 1024 * 8 / types.max(1)
    }

    pub fn transfer_cycles(&self, bytes: u64) -> u64 {
        (bytes as f64 / self.dram_bandwidth_bytes_per_cycle).ceil() as u64
    }

    /// DRAM background energy over `cycles`.
    pub fn dram_static_pj(&self, cycles: u64) -> f64 {
        // mW * cycles / MHz = nJ
        self.dram_power_mw * cycles as f64 / self.clock_mhz * 1e3
    }

    pub fn weight_words(&self, bits: u64) -> u64 {
        bits.div_ceil(self.weight_port_bits)
    }

    pub fn ttb_words(&self, bits: u64) -> u64 {
        bits.div_ceil(self.ttb_port_bits)
    }

    pub fn stratifier_cycles(&self, bundles: u64, features: u64) -> u64 {
        (bundles * features).div_ceil(self.stratifier_comparators)
    }

    pub fn spikegen_cycles(&self, neurons: u64) -> u64 {
        neurons.div_ceil(self.spikegen_lanes)
    }
}

/// Event counters of one simulated layer or run.
#[derive(Clone, Debug)]
pub struct MemSys {
    table: EnergyTable,
    counts: BTreeMap<EventKind, u64>,
}

impl MemSys {
    pub fn new(table: EnergyTable) -> Self {
        Self {
            table,
            counts: BTreeMap::new(),
        }
    }

    pub fn table(&self) -> &EnergyTable {
        &self.table
    }

    pub fn record(&mut self, kind: EventKind, quantity: u64) {
        if quantity > 0 {
            *self.counts.entry(kind).or_default() += quantity;
        }
    }

    /// Record by event name; unknown names are configuration errors.
    pub fn record_event(&mut self, kind: &str, quantity: u64) -> Result<()> {
        self.record(kind.parse()?, quantity);
        Ok(())
    }

    pub fn count(&self, kind: EventKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn energy_pj(&self, kind: EventKind) -> f64 {
        self.count(kind) as f64 * self.table.get(kind)
    }

    pub fn dynamic_energy_pj(&self) -> f64 {
        EventKind::ALL.iter().map(|&k| self.energy_pj(k)).sum()
    }

    pub fn merge(&mut self, other: &MemSys) {
        for (&k, &v) in &other.counts {
            self.record(k, v);
        }
    }

    /// Close the accounting for a span of `latency_cycles`.
    pub fn report(&self, cfg: &MemConfig, latency_cycles: u64, compute_pj: BTreeMap<String, f64>) -> EnergyReport {
        let events: BTreeMap<String, EventEnergy> = EventKind::ALL
            .iter()
            .map(|&k| {
                (
                    k.name().to_string(),
                    EventEnergy {
                        count: self.count(k),
                        energy_pj: self.energy_pj(k),
                    },
                )
            })
            .collect();
        let memory_pj = self.dynamic_energy_pj();
        let dram_static_pj = cfg.dram_static_pj(latency_cycles);
        let compute_total: f64 = compute_pj.values().sum();
        let total_pj = memory_pj + dram_static_pj + compute_total;
        EnergyReport {
            events,
            compute_pj,
            memory_pj,
            dram_static_pj,
            total_pj,
            latency_cycles,
            edp: total_pj * latency_cycles as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventEnergy {
    pub count: u64,
    pub energy_pj: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub events: BTreeMap<String, EventEnergy>,
    /// Compute energy per core.
    pub compute_pj: BTreeMap<String, f64>,
    pub memory_pj: f64,
    pub dram_static_pj: f64,
    pub total_pj: f64,
    pub latency_cycles: u64,
    /// `total_pj * latency_cycles`.
    pub edp: f64,
}

impl EnergyReport {
    /// Combine reports of consecutive spans.
    pub fn sum<'a>(reports: impl IntoIterator<Item = &'a EnergyReport>) -> EnergyReport {
        let mut out = EnergyReport::default();
        for r in reports {
            for (k, e) in &r.events {
                let slot = out.events.entry(k.clone()).or_default();
                slot.count += e.count;
                slot.energy_pj += e.energy_pj;
            }
            for (k, e) in &r.compute_pj {
                *out.compute_pj.entry(k.clone()).or_default() += e;
            }
            out.memory_pj += r.memory_pj;
            out.dram_static_pj += r.dram_static_pj;
            out.total_pj += r.total_pj;
            out.latency_cycles += r.latency_cycles;
        }
        out.edp = out.total_pj * out.latency_cycles as f64;
        out
    }
}

/// Effective cycles of one double-buffered step.
pub fn overlap(compute_cycles: u64, transfer_cycles: u64) -> u64 {
    compute_cycles.max(transfer_cycles)
}

/// Latency of steps with the next step's transfer hidden behind the current
/// step's compute. `transfers[0]` is the initial fill; `transfers[i + 1]`
/// overlaps `compute[i]`, the last entry being the final writeback.
pub fn double_buffered_latency(compute: &[u64], transfers: &[u64]) -> u64 {
    debug_assert_eq!(transfers.len(), compute.len() + 1);
    let fill = transfers.first().copied().unwrap_or(0);
    fill + compute
        .iter()
        .enumerate()
        .map(|(i, &c)| overlap(c, transfers.get(i + 1).copied().unwrap_or(0)))
        .sum::<u64>()
}

/// Latency with every transfer serialized against compute.
pub fn serialized_latency(compute: &[u64], transfers: &[u64]) -> u64 {
    compute.iter().sum::<u64>() + transfers.iter().sum::<u64>()
}

/// An activation tensor tiled along bundle positions.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamFootprint {
    pub name: String,
    /// Largest size of one bundle position, the indivisible unit.
    pub unit_bits: u64,
    /// GLB partition available to this tensor.
    pub capacity_bits: u64,
    /// Output tensors are written back to DRAM instead of read.
    pub output: bool,
    /// Bits each position actually moves; `None` means `unit_bits` each.
    pub payload_bits: Option<Vec<u64>>,
}

impl StreamFootprint {
    /// Bits moved for the positions in `range`.
    fn bits(&self, range: std::ops::Range<u64>) -> u64 {
        match &self.payload_bits {
            None => self.unit_bits * (range.end - range.start),
            Some(p) => range.map(|i| p.get(i as usize).copied().unwrap_or(0)).sum(),
        }
    }
}

/// A weight matrix tiled by output columns.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFootprint {
    pub name: String,
    pub column_bits: u64,
    pub columns: u64,
    pub capacity_bits: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerFootprint {
    /// Bundle positions the activation streams are tiled over.
    pub positions: u64,
    pub streams: Vec<StreamFootprint>,
    pub weight: Option<WeightFootprint>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopOrder {
    /// Each weight tile stays while all activation tiles stream past it.
    WeightOuter,
    ActivationOuter,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileStep {
    pub weight_bytes: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub positions_per_tile: u64,
    pub activation_tiles: u64,
    pub columns_per_tile: u64,
    pub weight_tiles: u64,
    pub order: LoopOrder,
    pub steps: Vec<TileStep>,
    /// DRAM bytes moved per tensor over the whole layer.
    pub per_tensor_bytes: BTreeMap<String, u64>,
}

impl TilePlan {
    pub fn dram_read_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.weight_bytes + s.input_bytes).sum()
    }

    pub fn dram_write_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.output_bytes).sum()
    }

    pub fn weight_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.weight_bytes).sum()
    }

    pub fn input_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.input_bytes).sum()
    }
}

fn bytes(bits: u64) -> u64 {
    bits.div_ceil(8)
}

/// Choose the largest tiles whose working set fits each partition and the
/// loop order moving the fewest DRAM bytes.
pub fn plan_tiles(fp: &LayerFootprint) -> Result<TilePlan> {
    let positions = fp.positions.max(1);
    let mut per_tile = positions;
    for s in &fp.streams {
        let fit = s.capacity_bits / s.unit_bits.max(1);
        if fit == 0 {
            return Err(SimError::Capacity {
                tensor: s.name.clone(),
                needed: s.unit_bits,
                available: s.capacity_bits,
            });
        }
        per_tile = per_tile.min(fit);
    }
    let act_tiles = positions.div_ceil(per_tile);

    let (cols_per_tile, w_tiles, columns) = match &fp.weight {
        Some(w) if w.columns > 0 => {
            let fit = w.capacity_bits / w.column_bits.max(1);
            if fit == 0 {
                return Err(SimError::Capacity {
                    tensor: w.name.clone(),
                    needed: w.column_bits,
                    available: w.capacity_bits,
                });
            }
            let per = fit.min(w.columns);
            (per, w.columns.div_ceil(per), w.columns)
        }
        _ => (0, 1, 0),
    };

    let span = |i: u64, per: u64, total: u64| per.min(total - i * per);
    let col_bits = fp.weight.as_ref().map_or(0, |w| w.column_bits);

    // weight-outer rereads inputs per weight tile; activation-outer rereads weights
    let in_total: u64 = fp
        .streams
        .iter()
        .filter(|s| !s.output)
        .map(|s| s.bits(0..positions))
        .sum();
    let w_total = col_bits * columns;
    let weight_outer_cost = w_total + in_total * w_tiles;
    let act_outer_cost = in_total + w_total * act_tiles;
    let order = if w_tiles > 1 && act_outer_cost < weight_outer_cost {
        LoopOrder::ActivationOuter
    } else {
        LoopOrder::WeightOuter
    };

    let mut per_tensor_bytes: BTreeMap<String, u64> = BTreeMap::new();
    let mut steps = Vec::with_capacity((act_tiles * w_tiles) as usize);
    let (outer, inner) = match order {
        LoopOrder::WeightOuter => (w_tiles, act_tiles),
        LoopOrder::ActivationOuter => (act_tiles, w_tiles),
    };
    for o in 0..outer {
        for i in 0..inner {
            let (wt, at) = match order {
                LoopOrder::WeightOuter => (o, i),
                LoopOrder::ActivationOuter => (i, o),
            };
            let start = at * per_tile;
            let range = start..start + span(at, per_tile, positions);
            let cols = if columns > 0 { span(wt, cols_per_tile, columns) } else { 0 };
            let (load_weight, load_input) = match order {
                LoopOrder::WeightOuter => (i == 0, true),
                LoopOrder::ActivationOuter => (true, i == 0),
            };
            let mut step = TileStep::default();
            if let (Some(w), true) = (&fp.weight, load_weight && cols > 0) {
                step.weight_bytes = bytes(col_bits * cols);
                *per_tensor_bytes.entry(w.name.clone()).or_default() += step.weight_bytes;
            }
            for s in &fp.streams {
                let tile_bits = s.bits(range.clone());
                let b = if s.output {
                    // a column tile writes its slice of each output position
                    if let Some(share) = (tile_bits * cols).checked_div(columns) {
                        bytes(share)
                    } else if wt == 0 {
                        bytes(tile_bits)
                    } else {
                        0
                    }
                } else if load_input {
                    bytes(tile_bits)
                } else {
                    0
                };
                if s.output {
                    step.output_bytes += b;
                } else {
                    step.input_bytes += b;
                }
                *per_tensor_bytes.entry(s.name.clone()).or_default() += b;
            }
            steps.push(step);
        }
    }

    Ok(TilePlan {
        positions_per_tile: per_tile,
        activation_tiles: act_tiles,
        columns_per_tile: cols_per_tile,
        weight_tiles: w_tiles,
        order,
        steps,
        per_tensor_bytes,
    })
}

/// Split `total` compute cycles over `steps` in proportion to equal work,
/// the remainder going to the leading steps.
pub fn split_compute(total: u64, steps: usize) -> Vec<u64> {
    let steps = steps.max(1) as u64;
    (0..steps)
        .map(|i| total / steps + u64::from(i < total % steps))
        .collect()
}

/// DRAM cycles per step: the step's loads, plus the final writeback.
pub fn step_transfers(cfg: &MemConfig, plan: &TilePlan) -> Vec<u64> {
    let mut t: Vec<u64> = plan
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            // outputs of the previous step drain while this step loads
            let prev_out = if i > 0 { plan.steps[i - 1].output_bytes } else { 0 };
            cfg.transfer_cycles(s.weight_bytes + s.input_bytes + prev_out)
        })
        .collect();
    t.push(cfg.transfer_cycles(plan.steps.last().map_or(0, |s| s.output_bytes)));
    t
}
