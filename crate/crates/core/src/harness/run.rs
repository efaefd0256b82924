//! End-to-end orchestration of one configuration.
//!
//! Per block the schedule is: fused QKV projection, attention (Mode 1 then
//! Mode 2 per head), output projection, two MLP projections. Layers run back
//! to back; a layer's latency is its double-buffered tile timeline plus the
//! stratifier pass and spike generation.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::{Mode, RunConfig};
use super::report::{EcpSummary, LayerReport, SimReport, StratSplit, TileSummary, SCHEMA_VERSION};
use super::synth::{synth_input, synth_weights};
use crate::cores::{
    simulate_dense, simulate_mode1, simulate_mode2, simulate_sparse, CoreStats, CoreWorkEstimator,
};
use crate::ecp::{ecp_prune, error_bound_check, mask_op_counts};
use crate::error::{shape_err, Result, SimError};
use crate::memsys::{
    double_buffered_latency, plan_tiles, split_compute, step_transfers, EnergyReport, EnergyTable,
    EventKind, LayerFootprint, MemSys, StreamFootprint, TilePlan, WeightFootprint,
};
use crate::reference::{
    fire_layer, flops_breakdown, model_forward, read_ttbw, spikes_as_current, BlockStates, BlockTrace,
    BlockWeights, LifParams, LifState, Pruning,
};
use crate::stratifier::{choose_theta_s, merge_and_fire, stratify, Stratification};
use crate::tensor::{Matrix, Tensor3};
use crate::ttb::{pack_ttb, sparsity_metrics, SpikeTensor, TtbGrid};

/// Block-0 activations and the weights of every block.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub x: SpikeTensor,
    pub weights: Vec<BlockWeights<i32>>,
}

impl Inputs {
    /// Inputs named by the config, synthesizing whatever is not given as a
    /// file. `input` overrides `workload.input`.
    pub fn resolve(cfg: &RunConfig, input: Option<&Path>) -> Result<Self> {
        let x = match input.or(cfg.workload.input.as_deref()) {
            Some(p) => SpikeTensor::load(p)?,
            None => synth_input(cfg)?,
        };
        let weights = match &cfg.workload.weights {
            Some(p) => weights_from_records(cfg, read_ttbw(std::io::BufReader::new(std::fs::File::open(p)?))?)?,
            None => synth_weights(cfg),
        };
        Ok(Self { x, weights })
    }
}

fn weights_from_records(cfg: &RunConfig, recs: Vec<(Matrix<i32>, u32)>) -> Result<Vec<BlockWeights<i32>>> {
    let need = 6 * cfg.model.blocks;
    if recs.len() != need {
        return Err(SimError::Format {
            format: "TTBW",
            reason: format!("{} matrices for {} blocks, expected {need}", recs.len(), cfg.model.blocks),
        });
    }
    if let Some((_, bits)) = recs.iter().find(|(_, b)| *b > cfg.model.weight_bits) {
        return Err(SimError::Config(format!(
            "weight file holds {bits}-bit entries, model.weight_bits is {}",
            cfg.model.weight_bits
        )));
    }
    let mut it = recs.into_iter().map(|(m, _)| m);
    let mut out = Vec::with_capacity(cfg.model.blocks);
    for _ in 0..cfg.model.blocks {
        let mut next = || it.next().expect("count checked");
        out.push(BlockWeights {
            w_q: next(),
            w_k: next(),
            w_v: next(),
            w_o: next(),
            w_mlp1: next(),
            w_mlp2: next(),
        });
    }
    Ok(out)
}

fn first_spike_diff(layer: &str, got: &SpikeTensor, want: &SpikeTensor) -> Result<()> {
    if got.dims() != want.dims() {
        return Err(SimError::OracleMismatch {
            layer: layer.into(),
            detail: format!("shape {:?} vs reference {:?}", got.dims(), want.dims()),
        });
    }
    let (t, n, d) = got.dims();
    for ti in 0..t {
        for ni in 0..n {
            for di in 0..d {
                if got.get(ti, ni, di) != want.get(ti, ni, di) {
                    return Err(SimError::OracleMismatch {
                        layer: layer.into(),
                        detail: format!(
                            "spike at (t={ti}, n={ni}, d={di}) is {} vs reference {}",
                            got.get(ti, ni, di) as u8,
                            want.get(ti, ni, di) as u8
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

fn first_value_diff(layer: &str, got: &Tensor3<i32>, want: &Tensor3<i32>) -> Result<()> {
    if got.dims() != want.dims() {
        return Err(SimError::OracleMismatch {
            layer: layer.into(),
            detail: format!("shape {:?} vs reference {:?}", got.dims(), want.dims()),
        });
    }
    let (_, n, d) = got.dims();
    if let Some(i) = got.as_slice().iter().zip(want.as_slice()).position(|(a, b)| a != b) {
        let (ti, ni, di) = (i / (n * d), (i / d) % n, i % d);
        return Err(SimError::OracleMismatch {
            layer: layer.into(),
            detail: format!(
                "value at ({ti}, {ni}, {di}) is {} vs reference {}",
                got.as_slice()[i],
                want.as_slice()[i]
            ),
        });
    }
    Ok(())
}

/// Partial sums of one projection and the layer's accounting so far.
struct Projection {
    dense: Tensor3<i32>,
    sparse: Tensor3<i32>,
    report: LayerReport,
    mem: MemSys,
    core_cycles: u64,
    name: String,
    /// Compressed size of each input position and the largest possible.
    input_bits: Vec<u64>,
    input_max: u64,
}

struct Sim<'a> {
    cfg: &'a RunConfig,
    table: EnergyTable,
    grids: Vec<TtbGrid>,
}

impl Sim<'_> {
    fn new_layer(&self, block: usize, name: &str, d_in: usize, d_out: usize) -> LayerReport {
        LayerReport {
            block,
            name: name.into(),
            d_in,
            d_out,
            strat: None,
            dense: CoreStats::default(),
            sparse: CoreStats::default(),
            attention: CoreStats::default(),
            ecp: None,
            stratifier_cycles: 0,
            spikegen_cycles: 0,
            compute_cycles: 0,
            transfer_cycles: 0,
            latency_cycles: 0,
            tiles: TileSummary {
                activation_tiles: 0,
                weight_tiles: 0,
                order: crate::memsys::LoopOrder::WeightOuter,
                steps: 0,
                dram_read_bytes: 0,
                dram_write_bytes: 0,
                dram_weight_bytes: 0,
                dram_activation_bytes: 0,
            },
            energy: EnergyReport::default(),
        }
    }

    fn project(&mut self, block: usize, name: &str, x: &SpikeTensor, w: &Matrix<i32>) -> Result<Projection> {
        let cfg = self.cfg;
        let shape = cfg.bundle;
        let d_out = w.cols();
        let grid = pack_ttb(x.clone(), shape);
        let strat: Stratification<i32> = match cfg.mode {
            Mode::DenseOnly => Stratification::all_dense(&grid, w)?,
            Mode::Heterogeneous => {
                let est = CoreWorkEstimator {
                    dense: cfg.dense,
                    sparse: cfg.sparse,
                    d_out,
                };
                stratify(&grid, w, choose_theta_s(&grid, &cfg.strat, &est))?
            }
        };
        let bits = cfg.model.weight_bits;
        let mut mem = MemSys::new(self.table);
        let (pd, sd) = simulate_dense(&strat.x_dense, &strat.w_dense, &cfg.dense, &cfg.mem, bits, &mut mem)?;
        let (ps, ss) = simulate_sparse(&strat.x_sparse, &strat.w_sparse, &cfg.sparse, &cfg.mem, bits, &mut mem)?;

        let mut r = self.new_layer(block, name, w.rows(), d_out);
        r.strat = Some(StratSplit {
            theta_s: strat.theta_s,
            dense_features: strat.dense.len(),
            sparse_features: strat.sparse.len(),
        });
        r.stratifier_cycles = cfg
            .mem
            .stratifier_cycles(grid.bundles_per_feature() as u64, grid.features() as u64);
        r.dense = sd;
        r.sparse = ss;

        let input_bits = grid.stored_bits();
        let input_max = grid.max_stored_bits();
        self.grids.push(grid);
        Ok(Projection {
            dense: pd,
            sparse: ps,
            core_cycles: sd.cycles.max(ss.cycles),
            report: r,
            mem,
            name: name.into(),
            input_bits,
            input_max,
        })
    }

    /// DRAM tiling of a projection once its output spikes are known. Spike
    /// tensors move bundle-compressed.
    fn projection_plan(&self, proj: &Projection, out: &SpikeTensor) -> Result<TilePlan> {
        let cfg = self.cfg;
        let out_grid = pack_ttb(out.clone(), cfg.bundle);
        let half = cfg.mem.ttb_partition_bits(2);
        let (name, d_in) = (&proj.name, proj.report.d_in as u64);
        plan_tiles(&LayerFootprint {
            positions: proj.input_bits.len() as u64,
            streams: vec![
                StreamFootprint {
                    name: format!("{name}.input"),
                    unit_bits: proj.input_max,
                    capacity_bits: half,
                    output: false,
                    payload_bits: Some(proj.input_bits.clone()),
                },
                StreamFootprint {
                    name: format!("{name}.output"),
                    unit_bits: out_grid.max_stored_bits(),
                    capacity_bits: half,
                    output: true,
                    payload_bits: Some(out_grid.stored_bits()),
                },
            ],
            weight: Some(WeightFootprint {
                name: format!("{name}.weight"),
                column_bits: d_in * cfg.model.weight_bits as u64,
                columns: proj.report.d_out as u64,
                capacity_bits: cfg.mem.weight_half_bits(),
            }),
        })
    }

    /// Close a layer: DRAM and GLB-fill events, the double-buffered timeline,
    /// spike generation for `neurons` outputs, and the energy roll-up.
    fn finish(&self, mut r: LayerReport, mut mem: MemSys, plan: &TilePlan, core_cycles: u64, neurons: u64) -> LayerReport {
        let m = &self.cfg.mem;
        mem.record(EventKind::DramReadByte, plan.dram_read_bytes());
        mem.record(EventKind::DramWriteByte, plan.dram_write_bytes());
        mem.record(EventKind::WeightGlbWrite, m.weight_words(plan.weight_bytes() * 8));
        mem.record(
            EventKind::TtbGlbWrite,
            m.ttb_words(plan.input_bytes() * 8) + m.ttb_words(plan.dram_write_bytes() * 8),
        );

        let transfers = step_transfers(m, plan);
        let compute = split_compute(core_cycles, plan.steps.len());
        r.spikegen_cycles = m.spikegen_cycles(neurons);
        r.compute_cycles = core_cycles;
        r.transfer_cycles = transfers.iter().sum();
        r.latency_cycles = r.stratifier_cycles + double_buffered_latency(&compute, &transfers) + r.spikegen_cycles;
        r.tiles = TileSummary {
            activation_tiles: plan.activation_tiles,
            weight_tiles: plan.weight_tiles,
            order: plan.order,
            steps: plan.steps.len(),
            dram_read_bytes: plan.dram_read_bytes(),
            dram_write_bytes: plan.dram_write_bytes(),
            dram_weight_bytes: plan.weight_bytes(),
            dram_activation_bytes: plan.input_bytes() + plan.dram_write_bytes(),
        };

        let mut compute_pj = BTreeMap::new();
        compute_pj.insert("dense".to_string(), r.dense.compute_pj);
        compute_pj.insert("sparse".to_string(), r.sparse.compute_pj);
        compute_pj.insert("attention".to_string(), r.attention.compute_pj);
        compute_pj.insert("spikegen".to_string(), m.e_lif_pj * neurons as f64);
        r.energy = mem.report(m, r.latency_cycles, compute_pj);
        r
    }

    /// A projection closed by one LIF layer, optionally with a residual.
    #[allow(clippy::too_many_arguments)]
    fn projection_layer(
        &mut self,
        block: usize,
        name: &str,
        x: &SpikeTensor,
        w: &Matrix<i32>,
        residual: Option<&SpikeTensor>,
        p: &LifParams<i32>,
        state: &mut LifState<i32>,
        want_current: &Tensor3<i32>,
        want: &SpikeTensor,
    ) -> Result<(SpikeTensor, LayerReport)> {
        let proj = self.project(block, name, x, w)?;
        let sparse_side = match residual {
            // the residual current enters the spike generator with the sparse sums
            Some(res) => proj.sparse.add(&spikes_as_current(res, self.cfg.model.residual_gain))?,
            None => proj.sparse.clone(),
        };
        let label = format!("block {block} {name}");
        first_value_diff(&label, &proj.dense.add(&sparse_side)?, want_current)?;
        let out = merge_and_fire(&proj.dense, &sparse_side, p, state)?;
        first_spike_diff(&label, &out, want)?;
        let (t, n, _) = x.dims();
        let neurons = (t * n * w.cols()) as u64;
        let plan = self.projection_plan(&proj, &out)?;
        let r = self.finish(proj.report, proj.mem, &plan, proj.core_cycles, neurons);
        Ok((out, r))
    }

    fn block(&mut self, b: usize, x: &SpikeTensor, w: &BlockWeights<i32>, tr: &BlockTrace<i32>) -> Result<(SpikeTensor, Vec<LayerReport>)> {
        let cfg = self.cfg;
        let m = &cfg.model;
        let mut states = BlockStates::new(m);
        let mut layers = Vec::with_capacity(5);
        first_spike_diff(&format!("block {b} input"), x, &tr.input)?;

        // fused QKV projection, three LIF layers in the spike generator
        let qkv = self.project(b, "qkv", x, &w.qkv()?)?;
        let label = format!("block {b} qkv");
        let d = m.d;
        let mut fired = Vec::with_capacity(3);
        let roles = [
            (&m.lif.q, &mut states.q, &tr.ssa.q_current, &tr.ssa.q),
            (&m.lif.k, &mut states.k, &tr.ssa.k_current, &tr.ssa.k),
            (&m.lif.v, &mut states.v, &tr.ssa.v_current, &tr.ssa.v),
        ];
        for (i, (p, st, want_i, want)) in roles.into_iter().enumerate() {
            let pd = qkv.dense.feature_slice(i * d, d)?;
            let ps = qkv.sparse.feature_slice(i * d, d)?;
            first_value_diff(&label, &pd.add(&ps)?, want_i)?;
            let s = merge_and_fire(&pd, &ps, p, st)?;
            first_spike_diff(&label, &s, want)?;
            fired.push(s);
        }
        let neurons = (m.t * m.n * 3 * d) as u64;
        let plan = self.projection_plan(&qkv, &SpikeTensor::concat_features(&fired)?)?;
        layers.push(self.finish(qkv.report, qkv.mem, &plan, qkv.core_cycles, neurons));
        let v_all = fired.pop().expect("three outputs");
        let k_all = fired.pop().expect("three outputs");
        let q_all = fired.pop().expect("three outputs");

        // attention, head by head
        let (o_temp, attn) = self.attention(b, &q_all, &k_all, &v_all, &mut states, tr)?;
        layers.push(attn);

        let (x1, r) = self.projection_layer(
            b,
            "o_proj",
            &o_temp,
            &w.w_o,
            Some(x),
            &m.lif.ssa_out,
            &mut states.ssa_out,
            &tr.ssa_out_current,
            &tr.ssa_out,
        )?;
        layers.push(r);
        let (hidden, r) = self.projection_layer(
            b,
            "mlp1",
            &x1,
            &w.w_mlp1,
            None,
            &m.lif.mlp_hidden,
            &mut states.mlp_hidden,
            &tr.mlp_hidden_current,
            &tr.mlp_hidden,
        )?;
        layers.push(r);
        let (out, r) = self.projection_layer(
            b,
            "mlp2",
            &hidden,
            &w.w_mlp2,
            Some(&x1),
            &m.lif.mlp_out,
            &mut states.mlp_out,
            &tr.mlp_out_current,
            &tr.output,
        )?;
        layers.push(r);
        Ok((out, layers))
    }

    fn attention(
        &mut self,
        b: usize,
        q: &SpikeTensor,
        k: &SpikeTensor,
        v: &SpikeTensor,
        states: &mut BlockStates<i32>,
        tr: &BlockTrace<i32>,
    ) -> Result<(SpikeTensor, LayerReport)> {
        let cfg = self.cfg;
        let m = &cfg.model;
        let shape = cfg.bundle;
        let dh = m.head_dim();
        let label = format!("block {b} attention");
        let mut mem = MemSys::new(self.table);
        let mut r = self.new_layer(b, "attention", m.d, m.d);
        let mut ecp = EcpSummary::default();
        let mut y_all = Tensor3::zeros(m.t, m.n, m.d);
        let mut attn_cycles = 0;
        let (mut q_bits, mut k_bits, mut v_bits, mut o_bits) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut unit = 0;
        for h in 0..m.heads {
            let ht = &tr.ssa.heads[h];
            let qh = q.feature_slice(h * dh, dh)?;
            let kh = k.feature_slice(h * dh, dh)?;
            let vh = v.feature_slice(h * dh, dh)?;
            let qg = pack_ttb(qh.clone(), shape);
            let kg = pack_ttb(kh.clone(), shape);
            let mask = ecp_prune(&qg, &kg, &cfg.ecp)?;
            if mask.keep_q != ht.keep_q || mask.keep_k != ht.keep_k {
                return Err(SimError::OracleMismatch {
                    layer: label,
                    detail: format!("head {h} keep masks differ from the reference scan"),
                });
            }
            let bound = error_bound_check(&ht.s_full, &mask, &cfg.ecp)?;
            // pruned Q rows and K/V rows never leave DRAM
            let vg = pack_ttb(vh.clone(), shape);
            let kept = |keep: &[bool], g: &TtbGrid| -> Vec<u64> {
                keep.iter().zip(g.stored_bits()).map(|(&k, b)| if k { b } else { 0 }).collect()
            };
            q_bits.extend(kept(&mask.keep_q, &qg));
            k_bits.extend(kept(&mask.keep_k, &kg));
            v_bits.extend(kept(&mask.keep_k, &vg));
            unit = qg.max_stored_bits();

            let (s, st1) = simulate_mode1::<i32>(&qh, &kh, &mask, &cfg.attn, &cfg.mem, &mut mem)?;
            first_value_diff(&format!("{label} head {h} scores"), &s, &ht.s)?;
            let (y, st2) = simulate_mode2(&s, &vh, &mask, m.s_shift, &cfg.attn, &cfg.mem, &mut mem)?;
            first_value_diff(&format!("{label} head {h} output"), &y, &ht.y)?;
            for ti in 0..m.t {
                for ni in 0..m.n {
                    y_all.row_mut(ti, ni)[h * dh..(h + 1) * dh].copy_from_slice(y.row(ti, ni));
                }
            }
            attn_cycles += st1.cycles + st2.cycles;
            r.attention.merge(&st1);
            r.attention.merge(&st2);

            let mut e = EcpSummary {
                q_rows_kept: mask.kept_q_rows() as u64,
                k_rows_kept: mask.kept_k_rows() as u64,
                rows: mask.keep_q.len() as u64,
                ops: mask_op_counts(&mask, dh),
                max_pruned_score: bound.max_q.max(bound.max_k),
                ..EcpSummary::default()
            };
            e.refresh();
            ecp.merge(&e);
            self.grids.push(qg);
            self.grids.push(kg);
            if cfg.metrics.bsp_includes_v {
                self.grids.push(vg);
            }
        }
        first_value_diff(&label, &y_all, &tr.ssa.attn_current)?;
        let o_temp = fire_layer(&y_all, &m.lif.attn, &mut states.attn)?;
        first_spike_diff(&label, &o_temp, &tr.ssa.o_temp)?;
        r.ecp = Some(ecp);
        for h in 0..m.heads {
            o_bits.extend(pack_ttb(o_temp.feature_slice(h * dh, dh)?, shape).stored_bits());
        }

        // Q, K, V and the spike output share a TTB bank in quarters, tiled by
        // per-head bundle position
        let quarter = cfg.mem.ttb_partition_bits(4);
        let stream = |name: &str, output, bits| StreamFootprint {
            name: format!("attention.{name}"),
            unit_bits: unit,
            capacity_bits: quarter,
            output,
            payload_bits: Some(bits),
        };
        let plan = plan_tiles(&LayerFootprint {
            positions: q_bits.len() as u64,
            streams: vec![
                stream("q", false, q_bits),
                stream("k", false, k_bits),
                stream("v", false, v_bits),
                stream("o_temp", true, o_bits),
            ],
            weight: None,
        })?;
        let neurons = (m.t * m.n * m.d) as u64;
        Ok((o_temp, self.finish(r, mem, &plan, attn_cycles, neurons)))
    }
}

/// Simulate `inputs` under `cfg`, checking every functional output against
/// the reference model.
pub fn run(cfg: &RunConfig, inputs: &Inputs) -> Result<SimReport> {
    cfg.validate()?;
    let m = &cfg.model;
    if inputs.x.dims() != (m.t, m.n, m.d) {
        return shape_err(format!(
            "input is {:?}, model expects {:?}",
            inputs.x.dims(),
            (m.t, m.n, m.d)
        ));
    }
    let prune = Pruning {
        shape: cfg.bundle,
        ecp: cfg.ecp,
    };
    let traces = model_forward(&inputs.x, &inputs.weights, m, Some(&prune))?;

    let mut sim = Sim {
        cfg,
        table: cfg.energy_table()?,
        grids: Vec::new(),
    };
    let mut layers = Vec::with_capacity(5 * m.blocks);
    let mut x = inputs.x.clone();
    for (b, (w, tr)) in inputs.weights.iter().zip(&traces).enumerate() {
        let (out, ls) = sim.block(b, &x, w, tr)?;
        layers.extend(ls);
        x = out;
    }

    let energy = EnergyReport::sum(layers.iter().map(|l| &l.energy));
    let totals = SimReport::totals_of(&layers, &energy);
    let mut ecp = EcpSummary::default();
    for l in &layers {
        if let Some(e) = &l.ecp {
            ecp.merge(e);
        }
    }
    ecp.refresh();
    Ok(SimReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        mode: cfg.mode,
        bundle: cfg.bundle.to_string(),
        layers,
        totals,
        energy,
        ecp,
        sparsity: sparsity_metrics(&sim.grids, cfg.metrics.lambda),
        flops: flops_breakdown(m),
    })
}

/// Resolve inputs from the config and run.
pub fn run_config(cfg: &RunConfig, input: Option<&Path>) -> Result<SimReport> {
    cfg.validate()?;
    run(cfg, &Inputs::resolve(cfg, input)?)
}
