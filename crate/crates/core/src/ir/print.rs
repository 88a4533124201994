use std::fmt::Write;

use super::{CallTarget, Expr, Operand, Program, Statement};

/// Quote a string with the escapes the lexer understands.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn fmt_operand(o: &Operand) -> String {
    match *o {
        Operand::Tmp(t) => t.to_string(),
        Operand::Int { value, ty } if value < 0 => format!("-{}:{ty}", value.unsigned_abs()),
        Operand::Int { value, ty } => format!("0x{value:x}:{ty}"),
        Operand::Float(bits) => format!("f{:?}", f64::from_bits(bits)),
        Operand::Reg(r) => format!("r{r}"),
        Operand::Mem(m) => format!("M{m}"),
        Operand::Abstract(a) => a.name().to_string(),
    }
}

fn fmt_args(args: &[Operand]) -> String {
    args.iter().map(fmt_operand).collect::<Vec<_>>().join(", ")
}

fn fmt_expr(e: &Expr) -> String {
    match e {
        Expr::Get { reg, ty } => format!("get({}):{ty}", fmt_operand(reg)),
        Expr::GetI { reg, ty } => format!("geti({}):{ty}", fmt_operand(reg)),
        Expr::Load { addr, ty } => format!("load({}):{ty}", fmt_operand(addr)),
        Expr::Op { op, args } => format!("{op}({})", fmt_args(args)),
        Expr::Operand(o) => fmt_operand(o),
    }
}

pub fn fmt_statement(s: &Statement) -> String {
    match s {
        Statement::Assign { dst, ty, expr } => format!("{}:{ty} = {}", fmt_operand(dst), fmt_expr(expr)),
        Statement::Put { reg, value } => format!("put({}) = {}", fmt_operand(reg), fmt_operand(value)),
        Statement::PutI { reg, value } => format!("puti({}) = {}", fmt_operand(reg), fmt_operand(value)),
        Statement::Store { addr, value } => format!("store({}) = {}", fmt_operand(addr), fmt_operand(value)),
        Statement::Call { ret, target, external, args } => {
            let mut out = String::new();
            if let Some((dst, ty)) = ret {
                let _ = write!(out, "{}:{ty} = ", fmt_operand(dst));
            }
            let kind = if *external { "ext" } else { "int" };
            let callee = match target {
                CallTarget::Named(n) => quote(n),
                CallTarget::Abstract => "FUNC".to_string(),
            };
            let _ = write!(out, "call {kind} {callee}({})", fmt_args(args));
            out
        }
    }
}

impl std::fmt::Display for Statement {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&fmt_statement(self))
    }
}

impl std::fmt::Display for Operand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&fmt_operand(self))
    }
}

/// Render a program in the fixed textual layout accepted by the parser.
pub fn serialize_program(p: &Program) -> String {
    let mut out = format!("program {}\n", quote(&p.name));
    for f in &p.functions {
        let _ = write!(out, "\nfn {} addr=0x{:x}", quote(&f.name), f.address);
        if f.entry != 0 {
            let _ = write!(out, " entry={}", f.entry);
        }
        out.push('\n');
        for s in &f.strings {
            let _ = writeln!(out, "str {}", quote(s));
        }
        for c in &f.extern_calls {
            let _ = writeln!(out, "call {}", quote(c));
        }
        for b in &f.blocks {
            let _ = writeln!(out, "bb {}", b.id);
            for s in &b.statements {
                let _ = writeln!(out, "  {}", fmt_statement(s));
            }
            out.push_str("succ");
            for s in &b.successors {
                let _ = write!(out, " {s}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    #[test]
    fn empty_program_is_header_only() {
        assert_eq!(serialize_program(&Program::default()), "program \"\"\n");
    }

    #[test]
    fn round_trip_is_stable() {
        let src = "fn \"f\\t\" addr=0x10 entry=1\nstr \"a\\x01b\"\nbb 0\n  t0:I32 = Add32(0x1, -2:I8)\n  store(M3) = f-0.0\nsucc\nbb 1\n  VAR:INT = call ext FUNC(REG)\nsucc 0 1\n";
        let p = parse_program(src).unwrap();
        let text = serialize_program(&p);
        let q = parse_program(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(serialize_program(&q), text);
    }
}
