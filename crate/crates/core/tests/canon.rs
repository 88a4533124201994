mod common;

use std::collections::HashMap;

use common::{fixture_peepholes, fixture_programs};
use peepvec::canon::{abstract_operands, canonicalize_function, has_raw_types, placeholder_counts};
use peepvec::ir::{parse_program, Abstract, Expr, IrType, Operand, Statement};
use peepvec::opcodes::{OpcodeTable, UNKNOWN};
use peepvec::peephole::PeepholeConfig;
use peepvec::synth::gen_function;
use peepvec::vexine::{evaluate_statements, normalize_peephole, NormLevel};
use proptest::prelude::*;

fn one_function(body: &str) -> Vec<Statement> {
    let p = parse_program(&format!("fn \"f\" addr=0x0\nbb 0\n{body}\nsucc\n")).unwrap();
    canonicalize_function(&p.functions[0]).blocks[0].statements.clone()
}

#[test]
fn width_opcodes_collapse() {
    let s = one_function("  t3:I32 = Add32(t0, t1)");
    assert_eq!(s, vec![Statement::op(3, IrType::Int, "add", vec![Operand::tmp(0), Operand::tmp(1)])]);
}

#[test]
fn negative_constant_becomes_subtraction() {
    let s = one_function("  t21:I64 = Add64(t20, -1:I64)");
    assert_eq!(s, vec![Statement::op(21, IrType::Int, "sub", vec![Operand::tmp(20), Operand::int(1, IrType::Int)])]);
}

#[test]
fn load_chain_gets_direct_address() {
    let s = one_function("  t1:I64 = load(M1):I64\n  t2:I64 = load(t1):I64\n  t3:I64 = Add64(t2, 0x4:I64)\n  put(r16) = t3");
    let loads: Vec<&Operand> = s
        .iter()
        .filter_map(|s| match s {
            Statement::Assign { expr: Expr::Load { addr, .. }, .. } => Some(addr),
            _ => None,
        })
        .collect();
    assert_eq!(loads.len(), 1, "{s:?}");
    assert!(matches!(loads[0], Operand::Mem(m) if *m != 1));
}

fn opcodes_are_canonical(s: &[Statement]) -> bool {
    let t = OpcodeTable::builtin();
    s.iter().all(|s| match s {
        Statement::Assign { expr: Expr::Op { op, .. }, .. } => op == UNKNOWN || t.is_canonical(op),
        _ => true,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn canonical_form_invariants(seed in any::<u64>(), size in 1usize..200) {
        let f = gen_function(seed, size);
        let c = canonicalize_function(&f);
        prop_assert!(!has_raw_types(&c));
        prop_assert!(c.statement_count() <= f.statement_count());
        prop_assert_eq!(c.blocks.len(), f.blocks.len());
        for b in &c.blocks {
            prop_assert!(opcodes_are_canonical(&b.statements));
        }
        prop_assert_eq!(canonicalize_function(&c), c);
    }

    #[test]
    fn sign_rewrite_preserves_value(n in 1i128..(1 << 40), env in any::<u64>()) {
        let raw = one_function(&format!("  t0:I64 = get(r8):I64\n  t1:I64 = Add64(t0, -{n}:I64)\n  put(r16) = t1"));
        let reference = vec![
            Statement::assign(0, IrType::Int, Expr::Get { reg: Operand::Reg(8), ty: IrType::Int }),
            Statement::op(1, IrType::Int, "add", vec![Operand::tmp(0), Operand::int(-n, IrType::Int)]),
            Statement::Put { reg: Operand::Reg(16), value: Operand::tmp(1) },
        ];
        let a = evaluate_statements(&raw, env).unwrap();
        let b = evaluate_statements(&reference, env).unwrap();
        prop_assert!(a.observables_equal(&b));
    }
}

fn tally(counts: &mut HashMap<Abstract, usize>, o: &Operand) {
    let a = match o {
        Operand::Tmp(_) => Abstract::Var,
        Operand::Int { .. } | Operand::Float(_) => Abstract::Const,
        Operand::Reg(_) => Abstract::Reg,
        Operand::Mem(_) => Abstract::Mem,
        Operand::Abstract(a) => *a,
    };
    *counts.entry(a).or_insert(0) += 1;
}

/// One pass over the concrete operands, independent of the abstraction code.
fn oracle_counts(statements: &[Statement]) -> HashMap<Abstract, usize> {
    let mut c = HashMap::new();
    for s in statements {
        match s {
            Statement::Assign { dst, expr, .. } => {
                tally(&mut c, dst);
                match expr {
                    Expr::Get { reg, .. } | Expr::GetI { reg, .. } => tally(&mut c, reg),
                    Expr::Load { addr, .. } => tally(&mut c, addr),
                    Expr::Op { args, .. } => args.iter().for_each(|a| tally(&mut c, a)),
                    Expr::Operand(o) => tally(&mut c, o),
                }
            }
            Statement::Put { reg, value } | Statement::PutI { reg, value } => {
                tally(&mut c, reg);
                tally(&mut c, value);
            }
            Statement::Store { addr, value } => {
                tally(&mut c, addr);
                tally(&mut c, value);
            }
            Statement::Call { ret, args, .. } => {
                if let Some((d, _)) = ret {
                    tally(&mut c, d);
                }
                args.iter().for_each(|a| tally(&mut c, a));
                *c.entry(Abstract::Func).or_insert(0) += 1;
            }
        }
    }
    c
}

#[test]
fn placeholder_counts_match_oracle() {
    let cfg = PeepholeConfig { k: 6, c: 2, seed: 3 };
    let peeps = fixture_peepholes(&cfg);
    assert!(!peeps.is_empty());
    for p in peeps {
        for level in NormLevel::ALL {
            let n = normalize_peephole(&p, level);
            let expected = oracle_counts(&n.statements);
            assert_eq!(placeholder_counts(&n.statements), expected);
            let abs = abstract_operands(&n);
            assert_eq!(abs.statements.len(), n.statements.len());
            assert_eq!(oracle_counts(&abs.statements), expected);
        }
    }
    assert!(abstract_operands(&peepvec::peephole::Peephole { block_ids: vec![], statements: vec![] }).statements.is_empty());
}

#[test]
fn fixtures_canonicalize_cleanly() {
    for p in fixture_programs() {
        for f in &p.functions {
            let c = canonicalize_function(f);
            assert!(!has_raw_types(&c), "{}", f.name);
            assert!(c.blocks.iter().all(|b| opcodes_are_canonical(&b.statements)));
        }
    }
}
