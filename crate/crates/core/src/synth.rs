//! Synthetic functions and semantics-preserving variants.
//!
//! The generator stands in for a multi-compiler corpus: every group is one
//! random base function, and its members are variants produced by renaming,
//! reordering, junk insertion, re-expression and block splitting. All of
//! these transforms keep the per-block interpreter observables intact.

use std::collections::{HashMap, HashSet};
use std::fmt::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::ir::{BasicBlock, BlockId, CallTarget, Expr, IrFunction, IrType, Operand, Program, Slot, Statement, Tmp};
use crate::peephole::Peephole;
use crate::rng::{combine, stream, stream_u64, StageRng};

const REGS: [u32; 14] = [16, 24, 32, 40, 48, 56, 64, 72, 80, 88, 96, 104, 144, 152];
const PC: u32 = 184;
const FRAME: u32 = 56;
const EXTERNS: [&str; 32] = [
    "printf", "malloc", "free", "memcpy", "strlen", "puts", "fopen", "fclose", "fread", "fwrite", "strcmp", "strcpy",
    "memset", "exit", "abort", "getenv", "atoi", "snprintf", "qsort", "time", "rand", "srand", "calloc", "realloc",
    "fprintf", "fgets", "strchr", "strncmp", "memmove", "write", "read", "close",
];
const WORDS: [&str; 24] = [
    "error", "usage", "file", "open", "read", "write", "failed", "invalid", "option", "memory", "buffer", "size",
    "input", "output", "version", "help", "line", "count", "value", "missing", "argument", "config", "path", "done",
];

/// Rates of the individual variation transforms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariationProfile {
    pub rename_tmps: bool,
    pub rename_regs: bool,
    /// Probability of picking a random ready statement instead of the next one.
    pub reorder: f64,
    pub junk: f64,
    pub reexpress: f64,
    pub split_blocks: f64,
}

impl VariationProfile {
    pub fn identity() -> Self {
        VariationProfile { rename_tmps: false, rename_regs: false, reorder: 0.0, junk: 0.0, reexpress: 0.0, split_blocks: 0.0 }
    }

    pub fn rename_only() -> Self {
        VariationProfile { rename_tmps: true, rename_regs: true, ..Self::identity() }
    }

    pub fn full() -> Self {
        VariationProfile { rename_tmps: true, rename_regs: true, reorder: 0.5, junk: 0.15, reexpress: 0.5, split_blocks: 0.2 }
    }

    fn validate(&self) -> bool {
        [self.reorder, self.junk, self.reexpress, self.split_blocks].iter().all(|r| (0.0..=1.0).contains(r))
    }
}

impl Default for VariationProfile {
    fn default() -> Self {
        Self::full()
    }
}

struct BlockGen<'a> {
    rng: &'a mut StageRng,
    next_tmp: &'a mut u32,
    ints: Vec<Tmp>,
    floats: Vec<Tmp>,
    out: Vec<Statement>,
    externs: &'a [String],
}

impl BlockGen<'_> {
    fn fresh(&mut self) -> Tmp {
        *self.next_tmp += 1;
        Tmp(*self.next_tmp - 1)
    }

    fn reg(&mut self) -> u32 {
        *REGS.choose(self.rng).expect("registers")
    }

    fn constant(&mut self, ty: IrType) -> Operand {
        let v: i128 = if self.rng.random_bool(0.3) { -self.rng.random_range(1..=64) } else { self.rng.random_range(0..=64) };
        Operand::Int { value: v, ty }
    }

    fn int(&mut self, ty: IrType) -> Operand {
        if !self.ints.is_empty() && self.rng.random_bool(0.8) {
            let i = self.rng.random_range(0..self.ints.len());
            Operand::Tmp(self.ints[i])
        } else {
            self.constant(ty)
        }
    }

    fn value_tmp(&mut self) -> Operand {
        match self.ints.choose(self.rng) {
            Some(t) => Operand::Tmp(*t),
            None => self.constant(IrType::I64),
        }
    }

    fn def(&mut self, ty: IrType, expr: Expr) -> Tmp {
        let t = self.fresh();
        self.out.push(Statement::Assign { dst: Operand::Tmp(t), ty, expr });
        if ty.is_float() {
            self.floats.push(t);
        } else {
            self.ints.push(t);
        }
        t
    }

    fn op(&mut self, ty: IrType, op: &str, args: Vec<Operand>) -> Tmp {
        self.def(ty, Expr::Op { op: op.to_string(), args })
    }

    /// Append one statement group of at most `room` statements.
    fn emit(&mut self, room: usize) {
        let roll = self.rng.random_range(0..100);
        match roll {
            0..=13 => {
                let r = self.reg();
                self.def(IrType::I64, Expr::Get { reg: Operand::Reg(r), ty: IrType::I64 });
            }
            14..=21 => {
                let m = self.rng.random_range(0..12);
                self.def(IrType::I64, Expr::Load { addr: Operand::Mem(m), ty: IrType::I64 });
            }
            22..=27 if room >= 2 => {
                let base = self.address_base();
                let off = Operand::int(-8 * self.rng.random_range(1..=8), IrType::I64);
                let a = self.op(IrType::I64, "Add64", vec![base, off]);
                self.ints.pop();
                let ty = if self.rng.random_bool(0.5) { IrType::I32 } else { IrType::I64 };
                self.def(ty, Expr::Load { addr: Operand::Tmp(a), ty });
            }
            28..=52 => {
                let wide = self.rng.random_bool(0.7);
                let (ty, sfx) = if wide { (IrType::I64, "64") } else { (IrType::I32, "32") };
                let name = *["Add", "Sub", "Mul", "And", "Or", "Xor", "Shl", "Shr", "Sar", "Add", "Sub", "Mul"].choose(self.rng).unwrap();
                let a = self.value_tmp();
                let b = match name {
                    "Shl" | "Shr" | "Sar" => Operand::int(self.rng.random_range(1..32), IrType::I8),
                    "Mul" if self.rng.random_bool(0.3) => Operand::int(2, ty),
                    _ => self.int(ty),
                };
                self.op(ty, &format!("{name}{sfx}"), vec![a, b]);
            }
            53..=57 => {
                let name = *["CmpEQ64", "CmpNE64", "CmpLT64S", "CmpLE64S", "CmpLT64U"].choose(self.rng).unwrap();
                let (a, b) = (self.value_tmp(), self.int(IrType::I64));
                self.op(IrType::I8, name, vec![a, b]);
            }
            58..=62 => {
                let a = self.value_tmp();
                let (ty, name) = *[(IrType::I32, "64to32"), (IrType::I64, "32Uto64"), (IrType::I64, "32Sto64"), (IrType::I8, "64to8")]
                    .choose(self.rng)
                    .unwrap();
                self.op(ty, name, vec![a]);
            }
            63..=67 if room >= 2 => {
                let a = self.value_tmp();
                let f = self.op(IrType::F64, "I64StoF64", vec![a]);
                let name = *["AddF64", "MulF64", "SubF64", "DivF64"].choose(self.rng).unwrap();
                let other = match self.floats.choose(self.rng) {
                    Some(t) if self.rng.random_bool(0.5) => Operand::Tmp(*t),
                    _ => Operand::float(*[0.5, 1.5, 2.0, 10.0, 0.25].choose(self.rng).unwrap()),
                };
                self.op(IrType::F64, name, vec![Operand::Tmp(f), other]);
            }
            68..=80 => {
                let r = self.reg();
                let value = if self.rng.random_bool(0.85) { self.value_tmp() } else { self.constant(IrType::I64) };
                self.out.push(Statement::Put { reg: Operand::Reg(r), value });
            }
            81..=88 => {
                let value = match self.floats.choose(self.rng) {
                    Some(t) if self.rng.random_bool(0.2) => Operand::Tmp(*t),
                    _ => self.value_tmp(),
                };
                let addr = if room >= 2 && self.rng.random_bool(0.4) {
                    let base = self.address_base();
                    let off = Operand::int(-8 * self.rng.random_range(1..=8), IrType::I64);
                    let a = self.op(IrType::I64, "Add64", vec![base, off]);
                    self.ints.pop();
                    Operand::Tmp(a)
                } else {
                    Operand::Mem(self.rng.random_range(0..12))
                };
                self.out.push(Statement::Store { addr, value });
            }
            89..=92 if !self.externs.is_empty() => {
                let callee = self.externs.choose(self.rng).unwrap().clone();
                let n = self.rng.random_range(0..=2);
                let args = (0..n).map(|_| self.value_tmp()).collect();
                let t = self.fresh();
                self.out.push(Statement::Call {
                    ret: Some((Operand::Tmp(t), IrType::I64)),
                    target: CallTarget::Named(callee),
                    external: true,
                    args,
                });
                self.ints.push(t);
            }
            _ => {
                let a = self.value_tmp();
                let name = *["Add64", "Sub64", "Xor64", "And64"].choose(self.rng).unwrap();
                let b = self.int(IrType::I64);
                self.op(IrType::I64, name, vec![a, b]);
            }
        }
    }

    fn address_base(&mut self) -> Operand {
        if self.rng.random_bool(0.6) {
            let t = self.def(IrType::I64, Expr::Get { reg: Operand::Reg(FRAME), ty: IrType::I64 });
            self.ints.pop();
            Operand::Tmp(t)
        } else {
            self.value_tmp()
        }
    }
}

/// Random control-flow skeleton: a tree with extra edges from internal
/// nodes, giving roughly 1.3 to 1.4 edges per block.
fn gen_cfg(rng: &mut StageRng, n: usize) -> Vec<Vec<BlockId>> {
    let mut succ: Vec<Vec<BlockId>> = vec![Vec::new(); n];
    for i in 1..n {
        let parent = if rng.random_bool(0.3) { i - 1 } else { rng.random_range(0..i) };
        succ[parent].push(i as BlockId);
    }
    let internal: Vec<usize> = (0..n).filter(|&i| !succ[i].is_empty()).collect();
    let extra = (0.4 * n as f64).round() as usize;
    let mut added = 0;
    let mut attempts = 0;
    while added < extra && attempts < 20 * extra && !internal.is_empty() {
        attempts += 1;
        let from = *internal.choose(rng).unwrap();
        let to = rng.random_range(0..n) as BlockId;
        if !succ[from].contains(&to) {
            succ[from].push(to);
            added += 1;
        }
    }
    succ
}

/// Generate a random valid function with exactly `size` statements.
pub fn gen_function(seed: u64, size: usize) -> IrFunction {
    gen_function_named(&format!("synth_{seed:x}"), seed, size)
}

pub fn gen_function_named(name: &str, seed: u64, size: usize) -> IrFunction {
    let size = size.max(1);
    let mut rng = stream(seed, "gen_function");
    let n_blocks = (size / 5).max(1);
    let mut sizes = vec![1usize; n_blocks];
    for _ in n_blocks..size {
        let i = rng.random_range(0..n_blocks);
        sizes[i] += 1;
    }
    let succ = gen_cfg(&mut rng, n_blocks);

    let mut f = IrFunction::new(name);
    f.address = 0x400000 + (rng.random_range(0..0x10000u64) << 4);
    if rng.random_bool(0.5) {
        for _ in 0..rng.random_range(1..=3) {
            let mut s = String::new();
            for w in 0..rng.random_range(2..=4) {
                if w > 0 {
                    s.push(' ');
                }
                s.push_str(WORDS.choose(&mut rng).unwrap());
            }
            if rng.random_bool(0.3) {
                let _ = write!(s, " %d");
            }
            f.strings.push(s);
        }
    }
    if rng.random_bool(0.7) {
        let count = rng.random_range(1..=3);
        let mut names: Vec<String> = EXTERNS.choose_multiple(&mut rng, count).map(|s| s.to_string()).collect();
        names.sort();
        f.extern_calls = names;
    }

    let externs = f.extern_calls.clone();
    let mut next_tmp = 0;
    for (id, (want, successors)) in sizes.into_iter().zip(succ).enumerate() {
        let mut g = BlockGen { rng: &mut rng, next_tmp: &mut next_tmp, ints: Vec::new(), floats: Vec::new(), out: Vec::new(), externs: &externs };
        let terminate = want >= 2 && g.rng.random_bool(0.7);
        let body = if terminate { want - 1 } else { want };
        while g.out.len() < body {
            let room = body - g.out.len();
            g.emit(room);
            g.out.truncate(body);
        }
        let mut statements = g.out;
        if terminate {
            let pc = f.address + 0x10 * (id as u64 + 1);
            statements.push(Statement::Put { reg: Operand::Reg(PC), value: Operand::int(pc as i128, IrType::I64) });
        }
        f.blocks.push(BasicBlock { id: id as BlockId, statements, successors });
    }
    f
}

/// How a variant relates to its base function.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VariantTrace {
    /// Pre-rename tmp id to variant tmp id (junk tmps included).
    pub tmp_map: HashMap<u32, u32>,
    pub reg_map: HashMap<u32, u32>,
    /// For each variant block, the base block it came from.
    pub block_origin: Vec<BlockId>,
}

pub fn make_variant(f: &IrFunction, profile: &VariationProfile, seed: u64) -> IrFunction {
    make_variant_traced(f, profile, seed).0
}

fn reexpress(s: &mut Statement) {
    let Statement::Assign { expr: Expr::Op { op, args }, .. } = s else { return };
    if args.len() != 2 {
        return;
    }
    let split = op.find(|c: char| c.is_ascii_digit()).unwrap_or(op.len());
    let (base, width) = op.split_at(split);
    let width = width.to_string();
    match (base, args[1]) {
        ("Mul", Operand::Int { value: 2, .. }) => {
            *op = format!("Shl{width}");
            args[1] = Operand::int(1, IrType::I8);
        }
        ("Shl", Operand::Int { value: 1, .. }) => {
            let ty = if width == "32" { IrType::I32 } else { IrType::I64 };
            *op = format!("Mul{width}");
            args[1] = Operand::int(2, ty);
        }
        ("Add", Operand::Int { value, ty }) if value < 0 => {
            *op = format!("Sub{width}");
            args[1] = Operand::Int { value: -value, ty };
        }
        ("Sub", Operand::Int { value, ty }) if value > 0 => {
            *op = format!("Add{width}");
            args[1] = Operand::Int { value: -value, ty };
        }
        _ => {}
    }
}

fn junk(block: &mut Vec<Statement>, rng: &mut StageRng, rate: f64, next_tmp: &mut u32) {
    let mut out = Vec::with_capacity(block.len());
    let mut rename: HashMap<Tmp, Tmp> = HashMap::new();
    for mut s in block.drain(..) {
        s.for_each_use_mut(|slot, o| {
            if slot != Slot::Register {
                if let Operand::Tmp(t) = o {
                    if let Some(n) = rename.get(t) {
                        *o = Operand::Tmp(*n);
                    }
                }
            }
        });
        let extra = match &s {
            Statement::Assign { dst: Operand::Tmp(t), ty, expr } if rng.random_bool(rate) => match expr {
                Expr::Get { reg, .. } if rng.random_bool(0.5) => Some(Statement::Put { reg: *reg, value: Operand::Tmp(*t) }),
                _ => {
                    let n = Tmp(*next_tmp);
                    *next_tmp += 1;
                    rename.insert(*t, n);
                    Some(Statement::Assign { dst: Operand::Tmp(n), ty: *ty, expr: Expr::Operand(Operand::Tmp(*t)) })
                }
            },
            Statement::Put { reg, .. } if rng.random_bool(rate) => {
                out.push(Statement::Put { reg: *reg, value: Operand::int(0, IrType::I64) });
                None
            }
            _ => None,
        };
        out.push(s);
        out.extend(extra);
    }
    *block = out;
}

#[derive(Default)]
struct Effects {
    defs: Vec<Tmp>,
    uses: Vec<Tmp>,
    reg_reads: Vec<u32>,
    reg_writes: Vec<u32>,
    mem_read: Option<Option<u32>>,
    mem_write: Option<Option<u32>>,
    barrier: bool,
}

fn effects(s: &Statement) -> Effects {
    let mut e = Effects { defs: s.def_tmp().into_iter().collect(), uses: s.used_tmps(), ..Default::default() };
    let is_assign = matches!(s, Statement::Assign { .. });
    s.for_each_use(|slot, o| {
        if let Operand::Reg(r) = o {
            if slot != Slot::Register || is_assign {
                e.reg_reads.push(*r);
            }
        }
    });
    let sym = |o: &Operand| match o {
        Operand::Mem(m) => Some(*m),
        _ => None,
    };
    match s {
        Statement::Put { reg: Operand::Reg(r), .. } | Statement::PutI { reg: Operand::Reg(r), .. } => e.reg_writes.push(*r),
        Statement::Store { addr, .. } => e.mem_write = Some(sym(addr)),
        Statement::Assign { expr: Expr::Load { addr, .. }, .. } => e.mem_read = Some(sym(addr)),
        Statement::Call { .. } => e.barrier = true,
        _ => {}
    }
    e
}

fn mem_conflict(a: Option<u32>, b: Option<u32>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

fn depends(later: &Effects, earlier: &Effects) -> bool {
    if later.barrier || earlier.barrier {
        return true;
    }
    let tmp = later.uses.iter().any(|t| earlier.defs.contains(t))
        || later.defs.iter().any(|t| earlier.uses.contains(t) || earlier.defs.contains(t));
    let reg = later.reg_reads.iter().any(|r| earlier.reg_writes.contains(r))
        || later.reg_writes.iter().any(|r| earlier.reg_reads.contains(r) || earlier.reg_writes.contains(r));
    let mem = match (later.mem_write, later.mem_read, earlier.mem_write, earlier.mem_read) {
        (Some(a), _, Some(b), _) | (Some(a), _, _, Some(b)) | (_, Some(a), Some(b), _) => mem_conflict(a, b),
        _ => false,
    };
    tmp || reg || mem
}

/// Randomized topological order of the block's dependence graph.
fn reorder(block: &mut Vec<Statement>, rng: &mut StageRng, rate: f64) {
    let n = block.len();
    if n < 2 || rate <= 0.0 {
        return;
    }
    let eff: Vec<Effects> = block.iter().map(effects).collect();
    let mut preds = vec![0usize; n];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        for i in 0..j {
            if depends(&eff[j], &eff[i]) {
                preds[j] += 1;
                succs[i].push(j);
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| preds[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        ready.sort_unstable();
        let pick = if rng.random_bool(rate) { rng.random_range(0..ready.len()) } else { 0 };
        let i = ready.remove(pick);
        order.push(i);
        for &j in &succs[i] {
            preds[j] -= 1;
            if preds[j] == 0 {
                ready.push(j);
            }
        }
    }
    let old = std::mem::take(block);
    let mut slots: Vec<Option<Statement>> = old.into_iter().map(Some).collect();
    *block = order.into_iter().map(|i| slots[i].take().expect("each index once")).collect();
}

fn rename_operands(s: &mut Statement, tmps: &HashMap<u32, u32>, regs: &HashMap<u32, u32>) {
    let map = |o: &mut Operand| match o {
        Operand::Tmp(t) => {
            if let Some(n) = tmps.get(&t.0) {
                t.0 = *n;
            }
        }
        Operand::Reg(r) => {
            if let Some(n) = regs.get(r) {
                *r = *n;
            }
        }
        _ => {}
    };
    s.for_each_use_mut(|_, o| map(o));
    match s {
        Statement::Assign { dst, .. } => map(dst),
        Statement::Call { ret: Some((dst, _)), .. } => map(dst),
        _ => {}
    }
}

/// Produce a variant together with the maps needed to relate it back.
pub fn make_variant_traced(f: &IrFunction, profile: &VariationProfile, seed: u64) -> (IrFunction, VariantTrace) {
    assert!(profile.validate(), "variation rates must lie in [0, 1]");
    let mut rng = stream_u64(seed, crate::rng::fnv1a(f.name.as_bytes()));
    let mut g = f.clone();
    let mut next_tmp = f.statements().filter_map(|s| s.def_tmp()).map(|t| t.0 + 1).chain(f.statements().flat_map(|s| s.used_tmps()).map(|t| t.0 + 1)).max().unwrap_or(0);

    for b in &mut g.blocks {
        if profile.reexpress > 0.0 {
            for s in &mut b.statements {
                if rng.random_bool(profile.reexpress) {
                    reexpress(s);
                }
            }
        }
        if profile.junk > 0.0 {
            junk(&mut b.statements, &mut rng, profile.junk, &mut next_tmp);
        }
        reorder(&mut b.statements, &mut rng, profile.reorder);
    }

    let mut origin: Vec<BlockId> = g.blocks.iter().map(|b| b.id).collect();
    if profile.split_blocks > 0.0 {
        let n = g.blocks.len();
        for i in 0..n {
            if g.blocks[i].statements.len() >= 2 && rng.random_bool(profile.split_blocks) {
                let at = rng.random_range(1..g.blocks[i].statements.len());
                let new_id = g.blocks.len() as BlockId;
                let tail = g.blocks[i].statements.split_off(at);
                let succ = std::mem::replace(&mut g.blocks[i].successors, vec![new_id]);
                g.blocks.push(BasicBlock { id: new_id, statements: tail, successors: succ });
                origin.push(g.blocks[i].id);
            }
        }
    }

    let mut trace = VariantTrace { block_origin: origin, ..Default::default() };
    if profile.rename_tmps {
        let mut ids: HashSet<u32> = HashSet::new();
        for s in g.statements() {
            ids.extend(s.def_tmp().map(|t| t.0));
            ids.extend(s.used_tmps().into_iter().map(|t| t.0));
        }
        let mut ids: Vec<u32> = ids.into_iter().collect();
        ids.sort_unstable();
        let mut targets: Vec<u32> = (0..(2 * ids.len() as u32).max(1)).collect();
        targets.shuffle(&mut rng);
        trace.tmp_map = ids.into_iter().zip(targets).collect();
    }
    if profile.rename_regs {
        let mut regs: HashSet<u32> = HashSet::new();
        for s in g.statements() {
            s.for_each_use(|_, o| {
                if let Operand::Reg(r) = o {
                    regs.insert(*r);
                }
            });
        }
        let mut regs: Vec<u32> = regs.into_iter().collect();
        regs.sort_unstable();
        let mut perm = regs.clone();
        perm.shuffle(&mut rng);
        trace.reg_map = regs.into_iter().zip(perm).collect();
    }
    if !trace.tmp_map.is_empty() || !trace.reg_map.is_empty() {
        for b in &mut g.blocks {
            for s in &mut b.statements {
                rename_operands(s, &trace.tmp_map, &trace.reg_map);
            }
        }
    }
    (g, trace)
}

/// Undo the renaming of a variant so it can be compared with its base.
pub fn map_back(variant: &IrFunction, trace: &VariantTrace) -> IrFunction {
    let inv_t: HashMap<u32, u32> = trace.tmp_map.iter().map(|(a, b)| (*b, *a)).collect();
    let inv_r: HashMap<u32, u32> = trace.reg_map.iter().map(|(a, b)| (*b, *a)).collect();
    let mut g = variant.clone();
    for b in &mut g.blocks {
        for s in &mut b.statements {
            rename_operands(s, &inv_t, &inv_r);
        }
    }
    g
}

/// The statements a variant executes in place of base block `orig`.
pub fn variant_block_statements(variant: &IrFunction, trace: &VariantTrace, orig: BlockId) -> Vec<Statement> {
    variant
        .blocks
        .iter()
        .zip(&trace.block_origin)
        .filter(|(_, o)| **o == orig)
        .flat_map(|(b, _)| b.statements.iter().cloned())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub groups: usize,
    pub variants: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub seed: u64,
    pub profile: VariationProfile,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { groups: 200, variants: 4, min_size: 20, max_size: 200, seed: crate::rng::DEFAULT_SEED, profile: VariationProfile::full() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub program: Program,
    /// `(function name, group id)` for every function, in program order.
    pub groups: Vec<(String, usize)>,
}

pub fn variant_name(group: usize, variant: usize) -> String {
    format!("g{group:04}_v{variant}")
}

/// Generate `groups` base functions and `variants` variants of each.
pub fn gen_corpus(cfg: &CorpusConfig) -> Corpus {
    let mut program = Program { name: "synthetic".into(), functions: Vec::new() };
    let mut groups = Vec::new();
    let mut rng = stream(cfg.seed, "corpus");
    for g in 0..cfg.groups {
        let size = rng.random_range(cfg.min_size.max(1)..=cfg.max_size.max(cfg.min_size.max(1)));
        let base = gen_function_named(&format!("g{g:04}"), combine(cfg.seed, g as u64), size);
        for v in 0..cfg.variants {
            let mut f = make_variant(&base, &cfg.profile, combine(combine(cfg.seed, g as u64), v as u64 + 1));
            f.name = variant_name(g, v);
            groups.push((f.name.clone(), g));
            program.functions.push(f);
        }
    }
    Corpus { program, groups }
}

/// `function<TAB>group` lines.
pub fn format_groups(groups: &[(String, usize)]) -> String {
    let mut out = String::new();
    for (name, g) in groups {
        let _ = writeln!(out, "{name}\t{g}");
    }
    out
}

pub fn parse_groups(text: &str) -> crate::Result<Vec<(String, usize)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (name, g) = l.rsplit_once('\t').ok_or_else(|| crate::Error::malformed(i + 1, "expected `name<TAB>group`"))?;
            let g = g.trim().parse().map_err(|_| crate::Error::malformed(i + 1, format!("bad group id `{g}`")))?;
            Ok((name.to_string(), g))
        })
        .collect()
}

const PEEP_TMPS: u32 = 10;
const PEEP_REGS: u32 = 6;
const PEEP_MEMS: u32 = 6;

fn peep_operand(rng: &mut StageRng, float: bool) -> Operand {
    match rng.random_range(0..10) {
        0..=5 => Operand::tmp(rng.random_range(0..PEEP_TMPS)),
        6 if float => Operand::float(*[0.0, -0.0, 1.5, -2.0, f64::NAN, 1e300].choose(rng).unwrap()),
        6 | 7 => Operand::int(rng.random_range(-3..=8), IrType::Int),
        8 => Operand::Reg(rng.random_range(0..PEEP_REGS)),
        _ => Operand::tmp(rng.random_range(0..PEEP_TMPS)),
    }
}

fn peep_address(rng: &mut StageRng) -> Operand {
    match rng.random_range(0..10) {
        0..=7 => Operand::Mem(rng.random_range(0..PEEP_MEMS)),
        8 => Operand::tmp(rng.random_range(0..PEEP_TMPS)),
        _ => Operand::int(rng.random_range(0..16), IrType::Int),
    }
}

const INT_OPS: [(&str, usize); 18] = [
    ("add", 2), ("sub", 2), ("mul", 2), ("and", 2), ("or", 2), ("xor", 2), ("shl", 2), ("shr", 2), ("sar", 2),
    ("cmpeq", 2), ("cmpne", 2), ("cmplt", 2), ("cmple", 2), ("not", 1), ("divmod", 2), ("clz", 1), ("ctz", 1), ("ite", 3),
];
const FLOAT_OPS: [(&str, usize); 12] = [
    ("addf", 2), ("subf", 2), ("mulf", 2), ("divf", 2), ("negf", 1), ("sqrtf", 1), ("maxf", 2), ("minf", 2),
    ("cmpf", 2), ("itof", 1), ("ftoi", 1), ("truncf", 1),
];

/// A random straight-line peephole in canonical form, with tmps reused
/// the way repeated blocks reuse them. Used for differential testing.
pub fn random_peephole(rng: &mut StageRng, len: usize) -> Peephole {
    let mut statements = Vec::with_capacity(len);
    for _ in 0..len {
        let dst = Operand::tmp(rng.random_range(0..PEEP_TMPS));
        let s = match rng.random_range(0..100) {
            0..=11 => Statement::Assign { dst, ty: IrType::Int, expr: Expr::Get { reg: Operand::Reg(rng.random_range(0..PEEP_REGS)), ty: IrType::Int } },
            12..=13 => Statement::Assign { dst, ty: IrType::Int, expr: Expr::GetI { reg: Operand::Reg(rng.random_range(0..PEEP_REGS)), ty: IrType::Int } },
            14..=25 => Statement::Put { reg: Operand::Reg(rng.random_range(0..PEEP_REGS)), value: peep_operand(rng, false) },
            26 => Statement::PutI { reg: Operand::Reg(rng.random_range(0..PEEP_REGS)), value: peep_operand(rng, false) },
            27..=36 => Statement::Assign { dst, ty: IrType::Int, expr: Expr::Load { addr: peep_address(rng), ty: IrType::Int } },
            37..=46 => Statement::Store { addr: peep_address(rng), value: peep_operand(rng, false) },
            47..=66 => {
                let (op, n) = *INT_OPS.choose(rng).unwrap();
                let args = (0..n).map(|_| peep_operand(rng, false)).collect();
                Statement::Assign { dst, ty: IrType::Int, expr: Expr::Op { op: op.into(), args } }
            }
            67..=73 => {
                let (op, n) = *FLOAT_OPS.choose(rng).unwrap();
                let args = (0..n).map(|_| peep_operand(rng, true)).collect();
                Statement::Assign { dst, ty: IrType::Double, expr: Expr::Op { op: op.into(), args } }
            }
            74..=75 => {
                let op = *["addv", "xorv", "unk"].choose(rng).unwrap();
                let args = (0..2).map(|_| peep_operand(rng, false)).collect();
                let ty = if op == "unk" { IrType::Int } else { IrType::Vector };
                Statement::Assign { dst, ty, expr: Expr::Op { op: op.into(), args } }
            }
            76..=87 => Statement::Assign { dst, ty: IrType::Int, expr: Expr::Operand(Operand::tmp(rng.random_range(0..PEEP_TMPS))) },
            88..=93 => Statement::Assign { dst, ty: IrType::Int, expr: Expr::Operand(peep_operand(rng, false)) },
            _ => {
                let n = rng.random_range(0..=2);
                let args = (0..n).map(|_| peep_operand(rng, false)).collect();
                let ret = rng.random_bool(0.6).then_some((dst, IrType::Int));
                let callee = (*["f", "g"].choose(rng).unwrap()).to_string();
                Statement::Call { ret, target: CallTarget::Named(callee), external: true, args }
            }
        };
        statements.push(s);
    }
    Peephole { block_ids: vec![0], statements }
}
