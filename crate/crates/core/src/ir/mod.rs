//! The in-memory IR, its textual format and CFG validation.
//!
//! Programs are immutable values once built; every other stage consumes
//! them by reference.

mod parse;
mod print;
mod validate;

use std::fmt;
use std::str::FromStr;

pub use parse::{parse_function_body, parse_program, parse_statement, Lexer, Token, TokenKind};
pub use print::{fmt_operand, fmt_statement, quote, serialize_program};
pub use validate::{check_ssa, validate_cfg, validate_program, Diagnostic};

pub type BlockId = u32;

/// A temporary (`tN`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tmp(pub u32);

impl fmt::Display for Tmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Raw machine widths plus the four canonical type classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IrType {
    I8,
    I16,
    I32,
    I64,
    F32,
    F64,
    V128,
    V256,
    Int,
    Float,
    Double,
    Vector,
}

impl IrType {
    pub const CLASSES: [IrType; 4] = [IrType::Int, IrType::Float, IrType::Double, IrType::Vector];

    pub fn is_canonical(self) -> bool {
        matches!(self, IrType::Int | IrType::Float | IrType::Double | IrType::Vector)
    }

    /// Map a raw width onto its canonical class.
    pub fn class(self) -> IrType {
        match self {
            IrType::I8 | IrType::I16 | IrType::I32 | IrType::I64 | IrType::Int => IrType::Int,
            IrType::F32 | IrType::Float => IrType::Float,
            IrType::F64 | IrType::Double => IrType::Double,
            IrType::V128 | IrType::V256 | IrType::Vector => IrType::Vector,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self.class(), IrType::Float | IrType::Double)
    }

    pub fn name(self) -> &'static str {
        match self {
            IrType::I8 => "I8",
            IrType::I16 => "I16",
            IrType::I32 => "I32",
            IrType::I64 => "I64",
            IrType::F32 => "F32",
            IrType::F64 => "F64",
            IrType::V128 => "V128",
            IrType::V256 => "V256",
            IrType::Int => "INT",
            IrType::Float => "FLOAT",
            IrType::Double => "DOUBLE",
            IrType::Vector => "VECTOR",
        }
    }
}

impl fmt::Display for IrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IrType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "I8" => IrType::I8,
            "I16" => IrType::I16,
            "I32" => IrType::I32,
            "I64" => IrType::I64,
            "F32" => IrType::F32,
            "F64" => IrType::F64,
            "V128" => IrType::V128,
            "V256" => IrType::V256,
            "INT" => IrType::Int,
            "FLOAT" => IrType::Float,
            "DOUBLE" => IrType::Double,
            "VECTOR" => IrType::Vector,
            _ => return Err(()),
        })
    }
}

/// Placeholder tokens introduced by operand abstraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Abstract {
    Var,
    Const,
    Reg,
    Mem,
    Func,
}

impl Abstract {
    pub const ALL: [Abstract; 5] = [Abstract::Var, Abstract::Const, Abstract::Reg, Abstract::Mem, Abstract::Func];

    pub fn name(self) -> &'static str {
        match self {
            Abstract::Var => "VAR",
            Abstract::Const => "CONST",
            Abstract::Reg => "REG",
            Abstract::Mem => "MEM",
            Abstract::Func => "FUNC",
        }
    }

    pub fn from_name(s: &str) -> Option<Abstract> {
        Abstract::ALL.into_iter().find(|a| a.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Tmp(Tmp),
    /// Integer constant; the width lives in `ty` so negative values stay exact.
    Int { value: i128, ty: IrType },
    /// IEEE double, stored as its bit pattern.
    Float(u64),
    Reg(u32),
    /// Direct symbolic memory address.
    Mem(u32),
    Abstract(Abstract),
}

impl Operand {
    pub fn int(value: i128, ty: IrType) -> Self {
        Operand::Int { value, ty }
    }

    pub fn float(v: f64) -> Self {
        Operand::Float(v.to_bits())
    }

    pub fn tmp(id: u32) -> Self {
        Operand::Tmp(Tmp(id))
    }

    pub fn as_tmp(&self) -> Option<Tmp> {
        match *self {
            Operand::Tmp(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Operand::Int { .. } | Operand::Float(_))
    }

    /// The placeholder this operand abstracts to.
    pub fn abstraction(&self) -> Abstract {
        match self {
            Operand::Tmp(_) => Abstract::Var,
            Operand::Int { .. } | Operand::Float(_) => Abstract::Const,
            Operand::Reg(_) => Abstract::Reg,
            Operand::Mem(_) => Abstract::Mem,
            Operand::Abstract(a) => *a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Get { reg: Operand, ty: IrType },
    GetI { reg: Operand, ty: IrType },
    Load { addr: Operand, ty: IrType },
    /// Unary, binary or ternary operation.
    Op { op: String, args: Vec<Operand> },
    /// Plain copy of an operand (constant assignment or tmp copy).
    Operand(Operand),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CallTarget {
    Named(String),
    Abstract,
}

impl CallTarget {
    pub fn name(&self) -> Option<&str> {
        match self {
            CallTarget::Named(n) => Some(n),
            CallTarget::Abstract => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Statement {
    /// `dst:ty = expr`; `dst` is a tmp, or `VAR` after abstraction.
    Assign { dst: Operand, ty: IrType, expr: Expr },
    Put { reg: Operand, value: Operand },
    PutI { reg: Operand, value: Operand },
    Store { addr: Operand, value: Operand },
    Call {
        ret: Option<(Operand, IrType)>,
        target: CallTarget,
        external: bool,
        args: Vec<Operand>,
    },
}

/// Role of an operand inside its statement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Value,
    Address,
    /// Register named by `get`/`geti`/`put`/`puti`.
    Register,
}

impl Statement {
    pub fn assign(dst: u32, ty: IrType, expr: Expr) -> Self {
        Statement::Assign { dst: Operand::tmp(dst), ty, expr }
    }

    pub fn op(dst: u32, ty: IrType, op: &str, args: Vec<Operand>) -> Self {
        Statement::assign(dst, ty, Expr::Op { op: op.to_string(), args })
    }

    /// The tmp this statement defines, if any.
    pub fn def_tmp(&self) -> Option<Tmp> {
        match self {
            Statement::Assign { dst, .. } => dst.as_tmp(),
            Statement::Call { ret: Some((dst, _)), .. } => dst.as_tmp(),
            _ => None,
        }
    }

    /// Visit every used operand (everything except the destination).
    pub fn for_each_use(&self, mut f: impl FnMut(Slot, &Operand)) {
        match self {
            Statement::Assign { expr, .. } => match expr {
                Expr::Get { reg, .. } | Expr::GetI { reg, .. } => f(Slot::Register, reg),
                Expr::Load { addr, .. } => f(Slot::Address, addr),
                Expr::Op { args, .. } => args.iter().for_each(|a| f(Slot::Value, a)),
                Expr::Operand(o) => f(Slot::Value, o),
            },
            Statement::Put { reg, value } | Statement::PutI { reg, value } => {
                f(Slot::Register, reg);
                f(Slot::Value, value);
            }
            Statement::Store { addr, value } => {
                f(Slot::Address, addr);
                f(Slot::Value, value);
            }
            Statement::Call { args, .. } => args.iter().for_each(|a| f(Slot::Value, a)),
        }
    }

    pub fn for_each_use_mut(&mut self, mut f: impl FnMut(Slot, &mut Operand)) {
        match self {
            Statement::Assign { expr, .. } => match expr {
                Expr::Get { reg, .. } | Expr::GetI { reg, .. } => f(Slot::Register, reg),
                Expr::Load { addr, .. } => f(Slot::Address, addr),
                Expr::Op { args, .. } => args.iter_mut().for_each(|a| f(Slot::Value, a)),
                Expr::Operand(o) => f(Slot::Value, o),
            },
            Statement::Put { reg, value } | Statement::PutI { reg, value } => {
                f(Slot::Register, reg);
                f(Slot::Value, value);
            }
            Statement::Store { addr, value } => {
                f(Slot::Address, addr);
                f(Slot::Value, value);
            }
            Statement::Call { args, .. } => args.iter_mut().for_each(|a| f(Slot::Value, a)),
        }
    }

    /// Visit every type annotation, including those of constants.
    pub fn for_each_type_mut(&mut self, mut f: impl FnMut(&mut IrType)) {
        let on_operand = |o: &mut Operand, f: &mut dyn FnMut(&mut IrType)| {
            if let Operand::Int { ty, .. } = o {
                f(ty)
            }
        };
        match self {
            Statement::Assign { ty, expr, .. } => {
                f(ty);
                match expr {
                    Expr::Get { ty, .. } | Expr::GetI { ty, .. } => f(ty),
                    Expr::Load { addr, ty } => {
                        f(ty);
                        on_operand(addr, &mut f);
                    }
                    Expr::Op { args, .. } => args.iter_mut().for_each(|a| on_operand(a, &mut f)),
                    Expr::Operand(o) => on_operand(o, &mut f),
                }
            }
            Statement::Put { value, .. } | Statement::PutI { value, .. } => on_operand(value, &mut f),
            Statement::Store { addr, value } => {
                on_operand(addr, &mut f);
                on_operand(value, &mut f);
            }
            Statement::Call { ret, args, .. } => {
                if let Some((_, ty)) = ret {
                    f(ty);
                }
                args.iter_mut().for_each(|a| on_operand(a, &mut f));
            }
        }
    }

    /// Tmps read by this statement, in operand order.
    pub fn used_tmps(&self) -> Vec<Tmp> {
        let mut out = Vec::new();
        self.for_each_use(|slot, o| {
            if slot != Slot::Register {
                if let Operand::Tmp(t) = o {
                    out.push(*t);
                }
            }
        });
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub statements: Vec<Statement>,
    pub successors: Vec<BlockId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrFunction {
    pub name: String,
    pub address: u64,
    pub blocks: Vec<BasicBlock>,
    pub strings: Vec<String>,
    pub extern_calls: Vec<String>,
    pub entry: BlockId,
}

impl IrFunction {
    pub fn new(name: impl Into<String>) -> Self {
        IrFunction {
            name: name.into(),
            address: 0,
            blocks: Vec::new(),
            strings: Vec::new(),
            extern_calls: Vec::new(),
            entry: 0,
        }
    }

    /// Block lookup by id; valid functions store block `i` at index `i`.
    pub fn block(&self, id: BlockId) -> Option<&BasicBlock> {
        match self.blocks.get(id as usize) {
            Some(b) if b.id == id => Some(b),
            _ => self.blocks.iter().find(|b| b.id == id),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.blocks.iter().map(|b| b.successors.len()).sum()
    }

    pub fn statement_count(&self) -> usize {
        self.blocks.iter().map(|b| b.statements.len()).sum()
    }

    pub fn statements(&self) -> impl Iterator<Item = &Statement> {
        self.blocks.iter().flat_map(|b| b.statements.iter())
    }

    /// Names of internal callees, in first-occurrence order.
    pub fn internal_callees(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for s in self.statements() {
            if let Statement::Call { target: CallTarget::Named(n), external: false, .. } = s {
                if !seen.contains(&n.as_str()) {
                    seen.push(n.as_str());
                }
            }
        }
        seen
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub functions: Vec<IrFunction>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&IrFunction> {
        self.functions.iter().find(|f| f.name == name)
    }
}
