use std::collections::{HashMap, HashSet};

use super::{Abstract, BasicBlock, CallTarget, Expr, IrFunction, IrType, Operand, Program, Statement, Tmp};
use crate::error::{Error, Result};
use crate::opcodes::OpcodeTable;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Word(String),
    Str(String),
    LParen,
    RParen,
    Comma,
    Colon,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// 1-based column of the first character.
    pub col: usize,
}

/// Splits one line into tokens. `#` outside a string ends the line.
pub struct Lexer;

impl Lexer {
    pub fn tokenize(line: &str, lineno: usize) -> Result<Vec<Token>> {
        let chars: Vec<char> = line.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            let punct = match c {
                '(' => Some(TokenKind::LParen),
                ')' => Some(TokenKind::RParen),
                ',' => Some(TokenKind::Comma),
                ':' => Some(TokenKind::Colon),
                '=' => Some(TokenKind::Eq),
                _ => None,
            };
            if let Some(kind) = punct {
                out.push(Token { kind, col });
                i += 1;
            } else if c == '#' {
                break;
            } else if c.is_whitespace() {
                i += 1;
            } else if c == '"' {
                let (s, next) = lex_string(&chars, i, lineno)?;
                out.push(Token { kind: TokenKind::Str(s), col });
                i = next;
            } else {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() && !"(),:=#\"".contains(chars[i]) {
                    i += 1;
                }
                out.push(Token { kind: TokenKind::Word(chars[start..i].iter().collect()), col });
            }
        }
        Ok(out)
    }
}

fn lex_string(chars: &[char], start: usize, lineno: usize) -> Result<(String, usize)> {
    let mut s = String::new();
    let mut i = start + 1;
    while i < chars.len() {
        match chars[i] {
            '"' => return Ok((s, i + 1)),
            '\\' => {
                let esc = chars.get(i + 1).copied();
                match esc {
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some('x') => {
                        let hex: String = chars.iter().skip(i + 2).take(2).collect();
                        let byte = (hex.len() == 2)
                            .then(|| u8::from_str_radix(&hex, 16).ok())
                            .flatten()
                            .ok_or_else(|| Error::parse(lineno, i + 1, "bad \\x escape"))?;
                        s.push(char::from(byte));
                        i += 2;
                    }
                    _ => return Err(Error::parse(lineno, i + 1, "unknown escape")),
                }
                i += 2;
            }
            c => {
                s.push(c);
                i += 1;
            }
        }
    }
    Err(Error::parse(lineno, start + 1, "unterminated string"))
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    eol: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], line: usize, text: &str) -> Self {
        Cursor { toks, pos: 0, line, eol: text.chars().count() + 1 }
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.eol, |t| t.col)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.line, self.col(), msg)
    }

    fn peek(&self) -> Option<&'a TokenKind> {
        self.toks.get(self.pos).map(|t| &t.kind)
    }

    fn peek_at(&self, k: usize) -> Option<&'a TokenKind> {
        self.toks.get(self.pos + k).map(|t| &t.kind)
    }

    fn peek_word(&self) -> Option<&'a str> {
        match self.peek() {
            Some(TokenKind::Word(w)) => Some(w),
            _ => None,
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn finish(&self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing tokens"))
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<()> {
        if self.peek() == Some(&kind) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn eat(&mut self, kind: TokenKind) -> bool {
        if self.peek() == Some(&kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn word(&mut self, what: &str) -> Result<&'a str> {
        match self.peek() {
            Some(TokenKind::Word(w)) => {
                self.pos += 1;
                Ok(w)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek_word() {
            Some(w) if w == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{kw}`"))),
        }
    }

    fn string(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(TokenKind::Str(s)) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn ty(&mut self) -> Result<IrType> {
        let col = self.col();
        let w = self.word("type")?;
        w.parse().map_err(|_| Error::parse(self.line, col, format!("unknown type `{w}`")))
    }

    fn uint(&mut self, what: &str) -> Result<u32> {
        let col = self.col();
        let w = self.word(what)?;
        w.parse().map_err(|_| Error::parse(self.line, col, format!("expected {what}, found `{w}`")))
    }

    fn hex(&mut self, what: &str) -> Result<u64> {
        let col = self.col();
        let w = self.word(what)?;
        w.strip_prefix("0x")
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .ok_or_else(|| Error::parse(self.line, col, format!("expected {what}, found `{w}`")))
    }

    /// Parse an operand; untyped integer constants take `default_ty`.
    fn operand(&mut self, default_ty: IrType) -> Result<Operand> {
        let col = self.col();
        let w = self.word("operand")?;
        let bad = |msg: &str| Error::parse(self.line, col, format!("{msg} `{w}`"));
        let index = |rest: &str| rest.parse::<u32>().ok().filter(|_| rest.bytes().all(|b| b.is_ascii_digit()));
        if let Some(a) = Abstract::from_name(w) {
            return Ok(Operand::Abstract(a));
        }
        if let Some(h) = w.strip_prefix("0x") {
            let v = u128::from_str_radix(h, 16).ok().filter(|v| *v <= i128::MAX as u128).ok_or_else(|| bad("bad hex constant"))?;
            let ty = self.const_type(default_ty)?;
            return Ok(Operand::Int { value: v as i128, ty });
        }
        if let Some(d) = w.strip_prefix('-') {
            if !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()) {
                let v: i128 = d.parse().map_err(|_| bad("bad negative constant"))?;
                let ty = self.const_type(default_ty)?;
                return Ok(Operand::Int { value: -v, ty });
            }
            return Err(bad("bad operand"));
        }
        let (head, rest) = w.split_at(1);
        match head {
            "t" => index(rest).map(|i| Operand::Tmp(Tmp(i))).ok_or_else(|| bad("bad tmp")),
            "r" => index(rest).map(Operand::Reg).ok_or_else(|| bad("bad register")),
            "M" => index(rest).map(Operand::Mem).ok_or_else(|| bad("bad memory id")),
            "f" => rest.parse::<f64>().map(Operand::float).map_err(|_| bad("bad float constant")),
            _ => Err(bad("bad operand")),
        }
    }

    fn const_type(&mut self, default_ty: IrType) -> Result<IrType> {
        if self.eat(TokenKind::Colon) {
            self.ty()
        } else {
            Ok(default_ty)
        }
    }

    fn args(&mut self, default_ty: IrType) -> Result<Vec<Operand>> {
        self.expect(TokenKind::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.eat(TokenKind::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.operand(default_ty)?);
            if self.eat(TokenKind::RParen) {
                return Ok(args);
            }
            self.expect(TokenKind::Comma, "`,` or `)`")?;
        }
    }

    fn paren_operand(&mut self, default_ty: IrType) -> Result<Operand> {
        self.expect(TokenKind::LParen, "`(`")?;
        let o = self.operand(default_ty)?;
        self.expect(TokenKind::RParen, "`)`")?;
        Ok(o)
    }

    fn register(&mut self) -> Result<Operand> {
        let col = self.col();
        let o = self.paren_operand(IrType::I64)?;
        match o {
            Operand::Reg(_) | Operand::Abstract(Abstract::Reg) => Ok(o),
            _ => Err(Error::parse(self.line, col, "expected register")),
        }
    }

    fn call(&mut self, ret: Option<(Operand, IrType)>) -> Result<Statement> {
        self.keyword("call")?;
        let external = match self.word("call kind")? {
            "int" => false,
            "ext" => true,
            other => return Err(Error::parse(self.line, self.toks[self.pos - 1].col, format!("unknown call kind `{other}`"))),
        };
        let target = if self.peek_word() == Some("FUNC") {
            self.pos += 1;
            CallTarget::Abstract
        } else {
            CallTarget::Named(self.string("callee name")?)
        };
        let args = self.args(IrType::I64)?;
        Ok(Statement::Call { ret, target, external, args })
    }

    fn statement(&mut self, opcodes: &OpcodeTable) -> Result<Statement> {
        let first = self.peek_word().ok_or_else(|| self.err("expected statement"))?;
        let next_is_paren = self.peek_at(1) == Some(&TokenKind::LParen);
        match first {
            "put" | "puti" if next_is_paren => {
                self.pos += 1;
                let reg = self.register()?;
                self.expect(TokenKind::Eq, "`=`")?;
                let value = self.operand(IrType::I64)?;
                return Ok(if first == "put" { Statement::Put { reg, value } } else { Statement::PutI { reg, value } });
            }
            "store" if next_is_paren => {
                self.pos += 1;
                let addr = self.paren_operand(IrType::I64)?;
                self.expect(TokenKind::Eq, "`=`")?;
                let value = self.operand(IrType::I64)?;
                return Ok(Statement::Store { addr, value });
            }
            "call" => return self.call(None),
            _ => {}
        }
        let col = self.col();
        let dst = self.operand(IrType::I64)?;
        if !matches!(dst, Operand::Tmp(_) | Operand::Abstract(Abstract::Var)) {
            return Err(Error::parse(self.line, col, "destination must be a tmp"));
        }
        self.expect(TokenKind::Colon, "`:`")?;
        let ty = self.ty()?;
        self.expect(TokenKind::Eq, "`=`")?;
        if self.peek_word() == Some("call") && matches!(self.peek_at(1), Some(TokenKind::Word(_))) {
            return self.call(Some((dst, ty)));
        }
        let expr = self.expr(ty, opcodes)?;
        Ok(Statement::Assign { dst, ty, expr })
    }

    fn expr(&mut self, ty: IrType, opcodes: &OpcodeTable) -> Result<Expr> {
        if self.peek_at(1) != Some(&TokenKind::LParen) {
            return Ok(Expr::Operand(self.operand(ty)?));
        }
        let col = self.col();
        let head = self.word("expression")?;
        match head {
            "get" | "geti" => {
                let reg = self.register()?;
                self.expect(TokenKind::Colon, "`:`")?;
                let ty = self.ty()?;
                Ok(if head == "get" { Expr::Get { reg, ty } } else { Expr::GetI { reg, ty } })
            }
            "load" => {
                let addr = self.paren_operand(IrType::I64)?;
                self.expect(TokenKind::Colon, "`:`")?;
                let ty = self.ty()?;
                Ok(Expr::Load { addr, ty })
            }
            op => {
                if !opcodes.is_known(op) {
                    return Err(Error::parse(self.line, col, format!("unknown opcode `{op}`")));
                }
                let args = self.args(ty)?;
                if args.is_empty() || args.len() > 3 {
                    return Err(Error::parse(self.line, col, format!("`{op}` takes 1 to 3 operands, got {}", args.len())));
                }
                Ok(Expr::Op { op: op.to_string(), args })
            }
        }
    }
}

/// Parse a single statement line, e.g. inside a normalized peephole dump.
pub fn parse_statement(line: &str, lineno: usize) -> Result<Statement> {
    let toks = Lexer::tokenize(line, lineno)?;
    let mut cur = Cursor::new(&toks, lineno, line);
    let s = cur.statement(OpcodeTable::builtin())?;
    cur.finish()?;
    Ok(s)
}

/// Parse the statements of a function body without block structure.
pub fn parse_function_body(text: &str) -> Result<Vec<Statement>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks = Lexer::tokenize(line, i + 1)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor::new(&toks, i + 1, line);
        out.push(cur.statement(OpcodeTable::builtin())?);
        cur.finish()?;
    }
    Ok(out)
}

struct PendingCall {
    line: usize,
    callee: String,
}

struct PendingSucc {
    line: usize,
    col: usize,
    block: u32,
    succ: u32,
}

struct FnState {
    func: IrFunction,
    line: usize,
    open_block: bool,
    defined: HashSet<Tmp>,
    succs: Vec<PendingSucc>,
}

/// Parse a `.vexir` document.
pub fn parse_program(text: &str) -> Result<Program> {
    let opcodes = OpcodeTable::builtin();
    let mut program = Program::default();
    let mut seen_header = false;
    let mut seen_anything = false;
    let mut current: Option<FnState> = None;
    let mut calls: Vec<PendingCall> = Vec::new();
    let mut fn_lines: HashMap<String, usize> = HashMap::new();
    let mut last_line = 0;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let toks = Lexer::tokenize(line, lineno)?;
        if toks.is_empty() {
            continue;
        }
        let mut cur = Cursor::new(&toks, lineno, line);
        let head = cur.peek_word();
        match head {
            Some("program") if !seen_anything && !seen_header => {
                cur.pos += 1;
                program.name = cur.string("program name")?;
                cur.finish()?;
                seen_header = true;
            }
            Some("fn") if current.as_ref().is_none_or(|s| !s.open_block) => {
                if let Some(state) = current.take() {
                    program.functions.push(finish_function(state)?);
                }
                cur.pos += 1;
                let name_col = cur.col();
                let name = cur.string("function name")?;
                if fn_lines.insert(name.clone(), lineno).is_some() {
                    return Err(Error::parse(lineno, name_col, format!("duplicate function `{name}`")));
                }
                cur.keyword("addr")?;
                cur.expect(TokenKind::Eq, "`=`")?;
                let address = cur.hex("hex address")?;
                let mut entry = 0;
                if cur.peek_word() == Some("entry") {
                    cur.pos += 1;
                    cur.expect(TokenKind::Eq, "`=`")?;
                    entry = cur.uint("entry block id")?;
                }
                cur.finish()?;
                let mut func = IrFunction::new(name);
                func.address = address;
                func.entry = entry;
                current = Some(FnState { func, line: lineno, open_block: false, defined: HashSet::new(), succs: Vec::new() });
            }
            _ => {
                let state = current.as_mut().ok_or_else(|| cur.err("expected `fn` or `program` header"))?;
                parse_in_function(state, &mut cur, opcodes, &mut calls)?;
            }
        }
        seen_anything = true;
    }
    if let Some(state) = current.take() {
        if state.open_block {
            return Err(Error::parse(last_line + 1, 1, "unexpected end of input, expected `succ`"));
        }
        program.functions.push(finish_function(state)?);
    }
    for call in calls {
        if !fn_lines.contains_key(&call.callee) {
            return Err(Error::parse(call.line, 1, format!("internal call to unknown function `{}`", call.callee)));
        }
    }
    Ok(program)
}

fn parse_in_function(state: &mut FnState, cur: &mut Cursor<'_>, opcodes: &OpcodeTable, calls: &mut Vec<PendingCall>) -> Result<()> {
    let lineno = cur.line;
    let head = cur.peek_word();
    if !state.open_block {
        match head {
            Some("str") | Some("call") if state.func.blocks.is_empty() && matches!(cur.peek_at(1), Some(TokenKind::Str(_))) => {
                cur.pos += 1;
                let s = cur.string("string")?;
                cur.finish()?;
                if head == Some("str") {
                    state.func.strings.push(s);
                } else {
                    state.func.extern_calls.push(s);
                }
                Ok(())
            }
            Some("bb") => {
                cur.pos += 1;
                let col = cur.col();
                let id = cur.uint("block id")?;
                cur.finish()?;
                let expected = state.func.blocks.len() as u32;
                if state.func.blocks.iter().any(|b| b.id == id) {
                    return Err(Error::parse(lineno, col, format!("duplicate block id {id}")));
                }
                if id != expected {
                    return Err(Error::parse(lineno, col, format!("expected block id {expected}, found {id}")));
                }
                state.func.blocks.push(BasicBlock { id, statements: Vec::new(), successors: Vec::new() });
                state.open_block = true;
                Ok(())
            }
            _ => Err(cur.err("expected `bb`, `str`, `call` or `fn`")),
        }
    } else if head == Some("succ") {
        cur.pos += 1;
        let block = state.func.blocks.last_mut().expect("open block");
        while !cur.at_end() {
            let col = cur.col();
            let succ = cur.uint("successor id")?;
            block.successors.push(succ);
            state.succs.push(PendingSucc { line: lineno, col, block: block.id, succ });
        }
        state.open_block = false;
        Ok(())
    } else {
        let col = cur.col();
        let stmt = cur.statement(opcodes)?;
        cur.finish()?;
        if let Some(t) = stmt.def_tmp() {
            if !state.defined.insert(t) {
                return Err(Error::parse(lineno, col, format!("{t} assigned more than once")));
            }
        }
        if let Statement::Call { target: CallTarget::Named(n), external: false, .. } = &stmt {
            calls.push(PendingCall { line: lineno, callee: n.clone() });
        }
        state.func.blocks.last_mut().expect("open block").statements.push(stmt);
        Ok(())
    }
}

fn finish_function(state: FnState) -> Result<IrFunction> {
    let f = state.func;
    if f.blocks.is_empty() {
        return Err(Error::parse(state.line, 1, format!("function `{}` has no blocks", f.name)));
    }
    if f.entry as usize >= f.blocks.len() {
        return Err(Error::parse(state.line, 1, format!("entry block {} does not exist", f.entry)));
    }
    for p in &state.succs {
        if p.succ as usize >= f.blocks.len() {
            return Err(Error::parse(p.line, p.col, format!("dangling successor {} of block {}", p.succ, p.block)));
        }
    }
    Ok(f)
}
