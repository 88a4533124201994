//! A small reference interpreter for canonical peepholes.
//!
//! Values are 64-bit patterns; floating point opcodes reinterpret them as
//! IEEE doubles. Locations that are read before being written take a value
//! drawn from a seeded environment, so two runs with the same seed see the
//! same peephole inputs.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::ir::{CallTarget, Expr, Operand, Statement};
use crate::opcodes::{OpcodeTable, CAST, UNKNOWN};
use crate::peephole::Peephole;
use crate::rng::{combine, fnv1a, mix64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Value {
    Bits(u64),
    /// Result of something the interpreter does not model; carries a hash
    /// of how it was produced so identical computations still compare equal.
    Opaque(u64),
}

impl Value {
    pub fn bits(self) -> Option<u64> {
        match self {
            Value::Bits(b) => Some(b),
            Value::Opaque(_) => None,
        }
    }

    fn raw(self) -> u64 {
        match self {
            Value::Bits(b) | Value::Opaque(b) => b,
        }
    }

    fn f(self) -> f64 {
        f64::from_bits(self.raw())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Reg = 1,
    Mem = 2,
    Tmp = 3,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CallRecord {
    pub callee: String,
    pub args: Vec<Value>,
    /// Digest of the register and memory state visible to the callee.
    pub state: u64,
}

#[derive(Clone, Debug)]
pub struct MachineState {
    pub env_seed: u64,
    pub registers: BTreeMap<u32, Value>,
    /// Keyed by symbolic id for `M` addresses, by `value % 8` otherwise.
    pub memory: BTreeMap<u64, Value>,
    pub tmps: HashMap<u32, Value>,
    pub calls: Vec<CallRecord>,
}

/// Number of memory cells reachable through computed addresses.
pub const DYNAMIC_CELLS: u64 = 8;

impl MachineState {
    pub fn new(env_seed: u64) -> Self {
        MachineState {
            env_seed,
            registers: BTreeMap::new(),
            memory: BTreeMap::new(),
            tmps: HashMap::new(),
            calls: Vec::new(),
        }
    }

    fn env(&self, kind: Kind, id: u64) -> Value {
        Value::Bits(mix64(combine(self.env_seed, ((kind as u64) << 56) ^ id)))
    }

    pub fn register(&self, r: u32) -> Value {
        self.registers.get(&r).copied().unwrap_or_else(|| self.env(Kind::Reg, r as u64))
    }

    pub fn memory_at(&self, key: u64) -> Value {
        self.memory.get(&key).copied().unwrap_or_else(|| self.env(Kind::Mem, key))
    }

    pub fn tmp(&self, t: u32) -> Value {
        self.tmps.get(&t).copied().unwrap_or_else(|| self.env(Kind::Tmp, t as u64))
    }

    /// Registers and memory cells whose value differs from the environment.
    fn changed(&self) -> (Vec<(u32, Value)>, Vec<(u64, Value)>) {
        let regs = self.registers.iter().filter(|(r, v)| self.env(Kind::Reg, **r as u64) != **v).map(|(r, v)| (*r, *v)).collect();
        let mem = self.memory.iter().filter(|(k, v)| self.env(Kind::Mem, **k) != **v).map(|(k, v)| (*k, *v)).collect();
        (regs, mem)
    }

    fn digest(&self) -> u64 {
        let (regs, mem) = self.changed();
        let mut h = 0x5eed;
        for (r, v) in regs {
            h = combine(h, combine(r as u64, value_hash(v)));
        }
        h = combine(h, u64::MAX);
        for (k, v) in mem {
            h = combine(h, combine(k, value_hash(v)));
        }
        h
    }

    /// Final registers, memory and call trace agree. Locations written
    /// with their environment value count as unwritten.
    pub fn observables_equal(&self, other: &MachineState) -> bool {
        self.changed() == other.changed() && self.calls == other.calls
    }

    fn operand(&self, o: &Operand) -> Result<Value> {
        Ok(match *o {
            Operand::Tmp(t) => self.tmp(t.0),
            Operand::Int { value, .. } => Value::Bits(value as u64),
            Operand::Float(bits) => Value::Bits(bits),
            Operand::Reg(r) => self.register(r),
            Operand::Mem(m) => Value::Bits(m as u64),
            Operand::Abstract(a) => return Err(Error::Argument(format!("cannot evaluate placeholder {}", a.name()))),
        })
    }

    fn address(&self, o: &Operand) -> Result<u64> {
        match *o {
            Operand::Mem(m) => Ok(m as u64),
            _ => Ok(self.operand(o)?.raw() % DYNAMIC_CELLS),
        }
    }

    fn reg_id(o: &Operand) -> Result<u32> {
        match *o {
            Operand::Reg(r) => Ok(r),
            _ => Err(Error::Argument("register placeholder cannot be evaluated".into())),
        }
    }

    fn assign(&mut self, dst: &Operand, v: Value) -> Result<()> {
        match dst {
            Operand::Tmp(t) => {
                self.tmps.insert(t.0, v);
                Ok(())
            }
            _ => Err(Error::Argument("assignment to a placeholder".into())),
        }
    }

    pub fn step(&mut self, s: &Statement) -> Result<()> {
        match s {
            Statement::Assign { dst, expr, .. } => {
                let v = match expr {
                    Expr::Get { reg, .. } | Expr::GetI { reg, .. } => self.register(Self::reg_id(reg)?),
                    Expr::Load { addr, .. } => self.memory_at(self.address(addr)?),
                    Expr::Op { op, args } => {
                        let vals = args.iter().map(|a| self.operand(a)).collect::<Result<Vec<_>>>()?;
                        eval_op(op, &vals)
                    }
                    Expr::Operand(o) => self.operand(o)?,
                };
                self.assign(dst, v)
            }
            Statement::Put { reg, value } | Statement::PutI { reg, value } => {
                let v = self.operand(value)?;
                self.registers.insert(Self::reg_id(reg)?, v);
                Ok(())
            }
            Statement::Store { addr, value } => {
                let v = self.operand(value)?;
                let key = self.address(addr)?;
                self.memory.insert(key, v);
                Ok(())
            }
            Statement::Call { ret, target, args, .. } => {
                let args = args.iter().map(|a| self.operand(a)).collect::<Result<Vec<_>>>()?;
                let callee = match target {
                    CallTarget::Named(n) => n.clone(),
                    CallTarget::Abstract => "FUNC".to_string(),
                };
                let state = self.digest();
                let mut h = combine(fnv1a(callee.as_bytes()), state);
                for a in &args {
                    h = combine(h, value_hash(*a));
                }
                self.calls.push(CallRecord { callee, args, state });
                if let Some((dst, _)) = ret {
                    self.assign(dst, Value::Bits(h))?;
                }
                Ok(())
            }
        }
    }
}

fn value_hash(v: Value) -> u64 {
    match v {
        Value::Bits(b) => mix64(b),
        Value::Opaque(h) => mix64(h ^ 0xa5a5_a5a5_a5a5_a5a5),
    }
}

fn hash_op(op: &str, args: &[Value]) -> u64 {
    args.iter().fold(fnv1a(op.as_bytes()), |h, a| combine(h, value_hash(*a)))
}

fn fbits(x: f64) -> Value {
    Value::Bits(if x.is_nan() { f64::NAN.to_bits() } else { x.to_bits() })
}

/// Larger of two doubles, symmetric in its arguments.
fn fmax(a: f64, b: f64) -> f64 {
    match (a.is_nan(), b.is_nan()) {
        (true, _) => b,
        (_, true) => a,
        _ => match a.total_cmp(&b) {
            std::cmp::Ordering::Less => b,
            _ => a,
        },
    }
}

fn fmin(a: f64, b: f64) -> f64 {
    match (a.is_nan(), b.is_nan()) {
        (true, _) => b,
        (_, true) => a,
        _ => match a.total_cmp(&b) {
            std::cmp::Ordering::Greater => b,
            _ => a,
        },
    }
}

/// Evaluate one opcode. Raw spellings are resolved through the builtin
/// table; anything unmodelled yields an opaque value.
pub fn eval_op(op: &str, args: &[Value]) -> Value {
    let table = OpcodeTable::builtin();
    let name = if table.is_canonical(op) {
        op
    } else if let Some(info) = table.raw(op) {
        info.canonical.as_str()
    } else {
        UNKNOWN
    };
    let opaque = Value::Opaque(hash_op(name, args));
    if args.iter().any(|a| matches!(a, Value::Opaque(_))) {
        return opaque;
    }
    let arity = match name {
        CAST | "not" | "clz" | "ctz" | "negf" | "absf" | "sqrtf" | "extf" | "truncf" | "itof" | "ftoi" => 1,
        "ite" => 3,
        _ => 2,
    };
    if table.canonical(name).is_some_and(|i| i.class == crate::ir::IrType::Vector) {
        return Value::Bits(hash_op(name, args));
    }
    if name == UNKNOWN || args.len() != arity {
        return opaque;
    }
    let a = args[0].raw();
    let b = args.get(1).map_or(0, |v| v.raw());
    let (fa, fb) = (f64::from_bits(a), f64::from_bits(b));
    let int = Value::Bits;
    match name {
        CAST => args[0],
        "add" => int(a.wrapping_add(b)),
        "sub" => int(a.wrapping_sub(b)),
        "mul" => int(a.wrapping_mul(b)),
        "and" => int(a & b),
        "or" => int(a | b),
        "xor" => int(a ^ b),
        "shl" => int(a << (b & 63)),
        "shr" => int(a >> (b & 63)),
        "sar" => int(((a as i64) >> (b & 63)) as u64),
        "cmpeq" => int((a == b) as u64),
        "cmpne" => int((a != b) as u64),
        "cmplt" => int(((a as i64) < (b as i64)) as u64),
        "cmple" => int(((a as i64) <= (b as i64)) as u64),
        "not" => int(!a),
        "clz" => int(a.leading_zeros() as u64),
        "ctz" => int(a.trailing_zeros() as u64),
        "divmod" if b == 0 => opaque,
        "divmod" => int((a as i64).wrapping_div(b as i64) as u64),
        "addf" => fbits(fa + fb),
        "subf" => fbits(fa - fb),
        "mulf" => fbits(fa * fb),
        "divf" => fbits(fa / fb),
        "maxf" => fbits(fmax(fa, fb)),
        "minf" => fbits(fmin(fa, fb)),
        "negf" => fbits(-fa),
        "absf" => fbits(fa.abs()),
        "sqrtf" => fbits(fa.sqrt()),
        "cmpf" => int(match fa.partial_cmp(&fb) {
            None => 0x45,
            Some(std::cmp::Ordering::Less) => 0x01,
            Some(std::cmp::Ordering::Greater) => 0x00,
            Some(std::cmp::Ordering::Equal) => 0x40,
        }),
        "extf" => fbits(fa),
        "truncf" => fbits(fa as f32 as f64),
        "itof" => fbits(a as i64 as f64),
        "ftoi" => int(args[0].f() as i64 as u64),
        "ite" => {
            if a != 0 {
                args[1]
            } else {
                args[2]
            }
        }
        _ => opaque,
    }
}

pub fn evaluate_statements(statements: &[Statement], env_seed: u64) -> Result<MachineState> {
    let mut st = MachineState::new(env_seed);
    for s in statements {
        st.step(s)?;
    }
    Ok(st)
}

/// Run a peephole from a fresh environment and return its final state.
pub fn evaluate_peephole(p: &Peephole, env_seed: u64) -> Result<MachineState> {
    evaluate_statements(&p.statements, env_seed)
}
