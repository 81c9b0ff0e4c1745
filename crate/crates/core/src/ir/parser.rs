//! Hand-written parser for the subset of textual LLVM IR that feature counting
//! needs. Anything it does not understand inside a function body is kept as an
//! opaque instruction rather than rejected.

use std::collections::{BTreeSet, HashMap};
use std::sync::LazyLock;

use regex::Regex;

use super::{IrBasicBlock, IrFunction, IrInstruction, IrModule, Opcode, Operand, ParseError};

static LABEL_DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^(?:([-a-zA-Z$._0-9]+)|"([^"]*)"):$"#).unwrap());
static OLD_STYLE_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^;\s*<label>:(\d+)").unwrap());
static LABEL_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"label\s+%(?:"([^"]*)"|([-a-zA-Z$._0-9]+))"#).unwrap());
static FUNC_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"@(?:"([^"]*)"|([-a-zA-Z$._0-9]+))\s*\("#).unwrap());
static SWITCH_CASE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(i\d+)\s+([^\s,]+)\s*,\s*label\s+%(?:"([^"]*)"|([-a-zA-Z$._0-9]+))"#).unwrap()
});
static INT_TYPE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^i(\d+)$").unwrap());

const FLAG_WORDS: &[&str] = &[
    "nuw", "nsw", "exact", "disjoint", "nneg", "fast", "nnan", "ninf", "nsz", "arcp", "contract",
    "afn", "reassoc", "inbounds", "volatile", "atomic", "inalloca", "tail", "musttail", "notail",
];

const ORDERINGS: &[&str] = &[
    "unordered",
    "monotonic",
    "acquire",
    "release",
    "acq_rel",
    "seq_cst",
];

const FLOAT_TYPES: &[&str] = &[
    "half", "bfloat", "float", "double", "fp128", "x86_fp80", "ppc_fp128",
];

const CALL_PREFIX_WORDS: &[&str] = &[
    "fast", "nnan", "ninf", "nsz", "arcp", "contract", "afn", "reassoc", "ccc", "fastcc",
    "coldcc", "tailcc", "swiftcc", "swifttailcc", "cfguard_checkcc", "ghccc", "zeroext", "signext",
    "inreg", "noalias", "nonnull", "noundef", "returned",
];

/// Parses textual LLVM IR into an [`IrModule`].
///
/// Global variables, metadata, attribute groups and type definitions are
/// skipped; only `declare` and `define` contribute to the module.
pub fn parse_ir(text: &str) -> Result<IrModule, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut module = IrModule::default();
    let mut i = 0;
    while i < lines.len() {
        let line = strip_comment(lines[i]).trim();
        if let Some(rest) = line.strip_prefix("source_filename") {
            if let Some(name) = rest.split('"').nth(1) {
                module.source_name = name.to_string();
            }
            i += 1;
        } else if line.starts_with("declare ") {
            let name = function_name(line).ok_or_else(|| ParseError {
                line: i + 1,
                column: 1,
                message: "declaration without a function name".into(),
            })?;
            module.functions.push(IrFunction {
                name,
                is_external: true,
                blocks: Vec::new(),
            });
            i += 1;
        } else if line.starts_with("define ") {
            let (function, next) = parse_function(&lines, i)?;
            module.functions.push(function);
            i = next;
        } else {
            i += 1;
        }
    }
    Ok(module)
}

fn function_name(header: &str) -> Option<String> {
    let caps = FUNC_NAME.captures(header)?;
    caps.get(1)
        .or_else(|| caps.get(2))
        .map(|m| m.as_str().to_string())
}

enum Item {
    Label { name: String, line: usize },
    Inst { text: String, line: usize, column: usize },
}

/// Parses one `define` starting at `start`; returns the function and the index
/// of the first line after its closing brace.
fn parse_function(lines: &[&str], start: usize) -> Result<(IrFunction, usize), ParseError> {
    let unterminated = || ParseError {
        line: start + 1,
        column: 1,
        message: "unterminated function body".into(),
    };

    // The header may wrap; it ends at the line that opens the body.
    let mut header = String::new();
    let mut j = start;
    loop {
        let l = strip_comment(lines.get(j).ok_or_else(unterminated)?).trim();
        header.push_str(l);
        header.push(' ');
        j += 1;
        if l.ends_with('{') {
            break;
        }
    }
    let name = function_name(&header).ok_or_else(|| ParseError {
        line: start + 1,
        column: 1,
        message: "definition without a function name".into(),
    })?;
    let entry_slot = implicit_entry_slot(&header);

    let mut items: Vec<Item> = Vec::new();
    let mut pending_depth: i32 = 0;
    let mut closed = false;
    while j < lines.len() {
        let raw = lines[j];
        let text = strip_comment(raw).trim();
        let lineno = j + 1;
        j += 1;
        if text.is_empty() {
            if let Some(c) = OLD_STYLE_LABEL.captures(raw.trim()) {
                items.push(Item::Label {
                    name: c[1].to_string(),
                    line: lineno,
                });
            }
            continue;
        }
        if pending_depth > 0 {
            if let Some(Item::Inst { text: t, .. }) = items.last_mut() {
                t.push(' ');
                t.push_str(text);
                pending_depth += bracket_delta(text);
            }
            continue;
        }
        if text == "}" {
            closed = true;
            break;
        }
        if let Some(c) = LABEL_DEF.captures(text) {
            let name = c.get(1).or_else(|| c.get(2)).unwrap().as_str().to_string();
            items.push(Item::Label { name, line: lineno });
            continue;
        }
        let continuation = ["to ", "unwind ", "catch ", "filter ", "cleanup"]
            .iter()
            .any(|k| text.starts_with(k));
        if continuation {
            if let Some(Item::Inst { text: t, .. }) = items.last_mut() {
                t.push(' ');
                t.push_str(text);
                continue;
            }
        }
        if text.starts_with("uselistorder") {
            continue;
        }
        let column = raw.len() - raw.trim_start().len() + 1;
        pending_depth = bracket_delta(text);
        items.push(Item::Inst {
            text: text.to_string(),
            line: lineno,
            column,
        });
    }
    if !closed {
        return Err(unterminated());
    }

    struct RawBlock {
        label: String,
        line: usize,
        instructions: Vec<(IrInstruction, usize, usize, Vec<String>)>,
    }
    let mut blocks: Vec<RawBlock> = Vec::new();
    for item in items {
        match item {
            Item::Label { name, line } => blocks.push(RawBlock {
                label: name,
                line,
                instructions: Vec::new(),
            }),
            Item::Inst { text, line, column } => {
                if blocks.is_empty() {
                    blocks.push(RawBlock {
                        label: entry_slot.to_string(),
                        line,
                        instructions: Vec::new(),
                    });
                }
                let (inst, succs) = parse_instruction(&text);
                blocks
                    .last_mut()
                    .unwrap()
                    .instructions
                    .push((inst, line, column, succs));
            }
        }
    }
    if blocks.is_empty() {
        return Err(ParseError {
            line: start + 1,
            column: 1,
            message: format!("function @{name} has an empty body"),
        });
    }

    let mut index: HashMap<String, usize> = HashMap::new();
    for (k, b) in blocks.iter().enumerate() {
        if index.insert(b.label.clone(), k).is_some() {
            return Err(ParseError {
                line: b.line,
                column: 1,
                message: format!("duplicate block label '{}'", b.label),
            });
        }
    }

    let mut out: Vec<IrBasicBlock> = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let n = b.instructions.len();
        match b.instructions.last() {
            Some((inst, ..)) if inst.is_terminator => {}
            _ => {
                return Err(ParseError {
                    line: b.line,
                    column: 1,
                    message: format!("block '{}' has no terminator", b.label),
                })
            }
        }
        let mut successors = BTreeSet::new();
        for (k, (inst, line, column, succs)) in b.instructions.iter().enumerate() {
            if inst.is_terminator && k + 1 != n {
                return Err(ParseError {
                    line: *line,
                    column: *column,
                    message: format!("terminator '{}' in the middle of a block", inst.opcode),
                });
            }
            for s in succs {
                if !index.contains_key(s) {
                    return Err(ParseError {
                        line: *line,
                        column: *column,
                        message: format!("branch to undefined label '%{s}'"),
                    });
                }
                successors.insert(s.clone());
            }
        }
        out.push(IrBasicBlock {
            label: b.label.clone(),
            instructions: b.instructions.iter().map(|t| t.0.clone()).collect(),
            predecessors: BTreeSet::new(),
            successors,
        });
    }
    let edges: Vec<(String, String)> = out
        .iter()
        .flat_map(|b| b.successors.iter().map(|s| (b.label.clone(), s.clone())))
        .collect();
    for (from, to) in edges {
        out[index[&to]].predecessors.insert(from);
    }

    Ok((
        IrFunction {
            name,
            is_external: false,
            blocks: out,
        },
        j,
    ))
}

/// The unnamed entry block takes the next numbered slot after unnamed
/// arguments.
fn implicit_entry_slot(header: &str) -> usize {
    let Some(open) = header.find('(') else {
        return 0;
    };
    let params = &header[open + 1..];
    let end = matching_close(params).unwrap_or(params.len());
    split_top_level(&params[..end], ',')
        .into_iter()
        .filter(|p| {
            split_ws_top(p)
                .last()
                .and_then(|t| t.strip_prefix('%'))
                .is_some_and(|n| n.chars().all(|c| c.is_ascii_digit()))
        })
        .count()
}

fn parse_instruction(text: &str) -> (IrInstruction, Vec<String>) {
    let body = match result_split(text) {
        Some(idx) => text[idx..].trim_start(),
        None => text,
    };
    let mut rest = body;
    let mnemonic = loop {
        let (word, tail) = split_first_word(rest);
        rest = tail;
        if !matches!(word, "tail" | "musttail" | "notail") {
            break word;
        }
    };
    let opcode = Opcode::from_mnemonic(mnemonic);
    let is_terminator = opcode.is_terminator();
    let mut returns_int = false;
    let operands = match mnemonic {
        m if opcode.is_binary_operator() || m == "fneg" => binary_operands(skip_flags(rest)),
        "icmp" | "fcmp" => {
            let (_pred, tail) = split_first_word(skip_flags(rest));
            binary_operands(tail)
        }
        _ if opcode.is_cast() => {
            let toks = split_ws_top(skip_flags(rest));
            let cut = toks.iter().position(|t| *t == "to").unwrap_or(toks.len());
            typed_operand(&toks[..cut]).into_iter().collect()
        }
        "load" => split_top_level(skip_flags(rest), ',')
            .iter()
            .skip(1)
            .take(1)
            .filter_map(|p| parse_typed(p))
            .collect(),
        "store" => split_top_level(skip_flags(rest), ',')
            .iter()
            .take(2)
            .filter_map(|p| parse_typed(p))
            .collect(),
        "alloca" => alloca_operands(rest),
        "getelementptr" => split_top_level(skip_flags(rest), ',')
            .iter()
            .skip(1)
            .filter_map(|p| parse_typed(p))
            .collect(),
        "call" | "invoke" | "callbr" => {
            let (ops, int_ret) = call_operands(rest);
            returns_int = int_ret && mnemonic == "call";
            ops
        }
        "ret" => {
            if rest.trim() == "void" {
                Vec::new()
            } else {
                parse_typed(rest).into_iter().collect()
            }
        }
        "switch" => switch_operands(rest),
        "phi" => phi_operands(skip_flags(rest)),
        "extractvalue" => split_top_level(rest, ',')
            .iter()
            .take(1)
            .filter_map(|p| parse_typed(p))
            .collect(),
        "insertvalue" => split_top_level(rest, ',')
            .iter()
            .take(2)
            .filter_map(|p| parse_typed(p))
            .collect(),
        "landingpad" => Vec::new(),
        _ => split_top_level(skip_flags(rest), ',')
            .iter()
            .filter_map(|p| parse_typed(p))
            .collect(),
    };
    let successors = if is_terminator {
        LABEL_REF
            .captures_iter(rest)
            .map(|c| c.get(1).or_else(|| c.get(2)).unwrap().as_str().to_string())
            .collect()
    } else {
        Vec::new()
    };
    (
        IrInstruction {
            opcode,
            operands,
            is_terminator,
            returns_int,
        },
        successors,
    )
}

/// Byte offset just past `%name = `, if the instruction defines a value.
fn result_split(text: &str) -> Option<usize> {
    if !text.starts_with('%') {
        return None;
    }
    let search_from = if let Some(rest) = text.strip_prefix("%\"") {
        rest.find('"')? + 3
    } else {
        0
    };
    let eq = text[search_from..].find(" = ")? + search_from;
    Some(eq + 3)
}

fn split_first_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

fn skip_flags(mut s: &str) -> &str {
    loop {
        let (word, tail) = split_first_word(s);
        if FLAG_WORDS.contains(&word) {
            s = tail;
        } else {
            return s.trim_start();
        }
    }
}

fn binary_operands(rest: &str) -> Vec<Operand> {
    let pieces = split_top_level(rest, ',');
    let mut ops = Vec::new();
    let mut ty: Option<String> = None;
    for p in pieces {
        let toks = split_ws_top(p);
        if toks.is_empty() || toks[0].starts_with('!') {
            continue;
        }
        if toks.len() >= 2 {
            ty = Some(toks[0].to_string());
            if let Some(op) = typed_operand(&toks) {
                ops.push(op);
            }
        } else {
            ops.push(parse_value(toks[0], ty.as_deref()));
        }
    }
    ops
}

fn phi_operands(rest: &str) -> Vec<Operand> {
    let Some(open) = find_top_level(rest, '[') else {
        return Vec::new();
    };
    let ty = rest[..open].trim();
    split_top_level(&rest[open..], ',')
        .into_iter()
        .filter_map(|item| {
            let inner = item.trim().strip_prefix('[')?.strip_suffix(']')?;
            let value = split_top_level(inner, ',').into_iter().next()?.trim();
            Some(parse_value(value, Some(ty)))
        })
        .collect()
}

fn switch_operands(rest: &str) -> Vec<Operand> {
    let open = find_top_level(rest, '[').unwrap_or(rest.len());
    let mut ops: Vec<Operand> = split_top_level(&rest[..open], ',')
        .iter()
        .filter_map(|p| parse_typed(p))
        .collect();
    for c in SWITCH_CASE.captures_iter(&rest[open..]) {
        ops.push(parse_value(&c[2], Some(&c[1])));
        let label = c.get(3).or_else(|| c.get(4)).unwrap().as_str();
        ops.push(Operand::Label(label.to_string()));
    }
    ops
}

/// Returns the call's operands (arguments then callee) and whether it
/// returns an integer.
fn call_operands(rest: &str) -> (Vec<Operand>, bool) {
    let Some((callee_start, open)) = find_call_args(rest) else {
        return (Vec::new(), false);
    };
    let prefix = &rest[..callee_start];
    let mut toks = split_ws_top(prefix).into_iter().peekable();
    let mut ret_ty = None;
    while let Some(t) = toks.next() {
        if CALL_PREFIX_WORDS.contains(&t)
            || t.starts_with("dereferenceable")
            || t.starts_with("addrspace(")
            || t.starts_with("align(")
        {
            continue;
        }
        if t == "align" || t == "cc" {
            toks.next();
            continue;
        }
        ret_ty = Some(t);
        break;
    }
    let returns_int = ret_ty.is_some_and(|t| INT_TYPE.is_match(t));

    let args_body = &rest[open + 1..];
    let close = matching_close(args_body).unwrap_or(args_body.len());
    let mut ops: Vec<Operand> = split_top_level(&args_body[..close], ',')
        .iter()
        .filter_map(|p| parse_typed(p))
        .collect();
    let callee = rest[callee_start..open].trim();
    ops.push(parse_value(callee, None));
    (ops, returns_int)
}

/// Locates the callee token and the parenthesis opening the argument list.
/// The argument list is the first top-level `(` glued to a name or to the
/// closing quote of an inline-asm constraint string.
fn find_call_args(s: &str) -> Option<(usize, usize)> {
    let bytes = s.as_bytes();
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut token_start = 0usize;
    for (i, &c) in bytes.iter().enumerate() {
        if in_quote {
            if c == b'"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            b'"' => in_quote = true,
            b'(' if depth == 0 => {
                let tok = &s[token_start..i];
                if tok.starts_with('@') || tok.starts_with('%') || tok.ends_with('"') {
                    return Some((token_start, i));
                }
                depth += 1;
            }
            b'(' | b'[' | b'{' | b'<' => depth += 1,
            b')' | b']' | b'}' | b'>' => depth -= 1,
            c if c.is_ascii_whitespace() && depth == 0 => token_start = i + 1,
            _ => {}
        }
    }
    None
}

fn typed_operand(toks: &[&str]) -> Option<Operand> {
    let toks: Vec<&str> = toks
        .iter()
        .copied()
        .filter(|t| !ORDERINGS.contains(t) && !t.starts_with("syncscope("))
        .collect();
    if toks.len() < 2 || toks[0] == "metadata" {
        return None;
    }
    let ty = toks[0];
    let value = *toks.last().unwrap();
    if ty == "label" {
        let name = value.trim_start_matches('%').trim_matches('"');
        return Some(Operand::Label(name.to_string()));
    }
    Some(parse_value(value, Some(ty)))
}

fn parse_typed(piece: &str) -> Option<Operand> {
    let toks = split_ws_top(piece);
    if toks.first().is_some_and(|t| t.starts_with('!')) {
        return None;
    }
    typed_operand(&toks)
}

fn parse_value(token: &str, ty: Option<&str>) -> Operand {
    if let Some(name) = token.strip_prefix('%') {
        return Operand::Local(name.trim_matches('"').to_string());
    }
    if let Some(name) = token.strip_prefix('@') {
        return Operand::Global(name.trim_matches('"').to_string());
    }
    let Some(ty) = ty else {
        return Operand::Other;
    };
    if let Some(c) = INT_TYPE.captures(ty) {
        let bits: u32 = c[1].parse().unwrap_or(0);
        let value = match token {
            "true" => Some(Some(1)),
            "false" => Some(Some(0)),
            t if is_int_literal(t) => Some(t.parse::<i128>().ok()),
            _ => None,
        };
        return match value {
            Some(value) => Operand::IntConst { bits, value },
            None => Operand::Other,
        };
    }
    if FLOAT_TYPES.contains(&ty)
        && (token.parse::<f64>().is_ok() || token.starts_with("0x"))
    {
        return Operand::FloatConst;
    }
    Operand::Other
}

/// The array-size operand; LLVM materializes `i32 1` when it is omitted.
fn alloca_operands(rest: &str) -> Vec<Operand> {
    let rest = rest.trim_start().strip_prefix("inalloca").unwrap_or(rest);
    let count = split_top_level(rest, ',')
        .iter()
        .skip(1)
        .map(|p| p.trim())
        .find(|p| !p.starts_with("align") && !p.starts_with("addrspace(") && !p.starts_with('!'))
        .and_then(parse_typed);
    vec![count.unwrap_or(Operand::IntConst {
        bits: 32,
        value: Some(1),
    })]
}

fn is_int_literal(t: &str) -> bool {
    let digits = t.strip_prefix('-').unwrap_or(t);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

/// Removes a trailing `;` comment, ignoring semicolons inside string literals.
fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            ';' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn bracket_delta(s: &str) -> i32 {
    let mut in_quote = false;
    let mut d = 0;
    for c in s.chars() {
        match c {
            '"' => in_quote = !in_quote,
            '[' | '(' | '{' if !in_quote => d += 1,
            ']' | ')' | '}' if !in_quote => d -= 1,
            _ => {}
        }
    }
    d
}

/// Splits on `sep` at nesting depth zero (outside brackets and quotes).
pub(crate) fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        if in_quote {
            if c == '"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            '"' => in_quote = true,
            '(' | '[' | '{' | '<' => depth += 1,
            ')' | ']' | '}' | '>' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(s[start..i].trim());
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() {
        out.push(last);
    }
    out
}

/// Splits on whitespace at nesting depth zero, so that `<4 x i32>` or
/// `dereferenceable(8)` stay single tokens.
fn split_ws_top(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut start: Option<usize> = None;
    for (i, c) in s.char_indices() {
        if !in_quote && depth == 0 && c.is_whitespace() {
            if let Some(st) = start.take() {
                out.push(&s[st..i]);
            }
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        if in_quote {
            if c == '"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            '"' => in_quote = true,
            '(' | '[' | '{' | '<' => depth += 1,
            ')' | ']' | '}' | '>' => depth -= 1,
            _ => {}
        }
    }
    if let Some(st) = start {
        out.push(&s[st..]);
    }
    out
}

fn find_top_level(s: &str, needle: char) -> Option<usize> {
    let mut depth = 0i32;
    let mut in_quote = false;
    for (i, c) in s.char_indices() {
        if in_quote {
            if c == '"' {
                in_quote = false;
            }
            continue;
        }
        if c == needle && depth == 0 {
            return Some(i);
        }
        match c {
            '"' => in_quote = true,
            '(' | '[' | '{' | '<' => depth += 1,
            ')' | ']' | '}' | '>' => depth -= 1,
            _ => {}
        }
    }
    None
}

/// Index of the `)` closing an already-opened parenthesis.
fn matching_close(s: &str) -> Option<usize> {
    let mut depth = 1i32;
    let mut in_quote = false;
    for (i, c) in s.char_indices() {
        if in_quote {
            if c == '"' {
                in_quote = false;
            }
            continue;
        }
        match c {
            '"' => in_quote = true,
            '(' | '[' | '{' | '<' => depth += 1,
            ')' | ']' | '}' | '>' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}
