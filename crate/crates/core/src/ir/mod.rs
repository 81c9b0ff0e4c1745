//! In-memory model of textual LLVM IR, sufficient for static feature counting.
//!
//! The model is intentionally shallow: functions, basic blocks with their CFG
//! edges, and instructions with an opcode plus a flat operand list. Types are
//! kept only where feature counting needs them (integer bit widths of
//! constants, integer return types of calls).

mod parser;

use std::collections::BTreeSet;
use std::fmt;

pub use parser::parse_ir;

/// A parsed IR module.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IrModule {
    pub source_name: String,
    pub functions: Vec<IrFunction>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrFunction {
    pub name: String,
    /// `declare`d functions have no body.
    pub is_external: bool,
    pub blocks: Vec<IrBasicBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrBasicBlock {
    pub label: String,
    pub instructions: Vec<IrInstruction>,
    pub predecessors: BTreeSet<String>,
    pub successors: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrInstruction {
    pub opcode: Opcode,
    pub operands: Vec<Operand>,
    pub is_terminator: bool,
    /// Set for calls whose declared return type is an integer (`iN`).
    pub returns_int: bool,
}

/// An operand as it appears in the instruction text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    /// Integer literal with the bit width of its type. `value` is `None` when
    /// the literal does not fit in an `i128`.
    IntConst { bits: u32, value: Option<i128> },
    /// Floating-point literal.
    FloatConst,
    Local(String),
    Global(String),
    Label(String),
    /// Constant expressions, aggregates, `undef`, `null`, `poison`, and
    /// anything else that is not a plain scalar literal or a name.
    Other,
}

impl Operand {
    pub fn is_scalar_constant(&self) -> bool {
        matches!(self, Operand::IntConst { .. } | Operand::FloatConst)
    }
}

/// Opcodes that the feature set counts individually; everything else is kept
/// by mnemonic in [`Opcode::Other`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Opcode {
    Add,
    Alloca,
    And,
    AShr,
    BitCast,
    Br,
    Call,
    GetElementPtr,
    ICmp,
    Load,
    LShr,
    Mul,
    Or,
    Phi,
    Ret,
    SExt,
    Select,
    Shl,
    Store,
    Sub,
    Trunc,
    Xor,
    ZExt,
    Other(String),
}

const TERMINATORS: &[&str] = &[
    "ret",
    "br",
    "switch",
    "indirectbr",
    "invoke",
    "callbr",
    "resume",
    "unreachable",
    "cleanupret",
    "catchret",
    "catchswitch",
];

const BINARY_OPERATORS: &[&str] = &[
    "add", "fadd", "sub", "fsub", "mul", "fmul", "udiv", "sdiv", "fdiv", "urem", "srem", "frem",
    "shl", "lshr", "ashr", "and", "or", "xor",
];

const CASTS: &[&str] = &[
    "trunc",
    "zext",
    "sext",
    "fptrunc",
    "fpext",
    "fptoui",
    "fptosi",
    "uitofp",
    "sitofp",
    "ptrtoint",
    "inttoptr",
    "bitcast",
    "addrspacecast",
];

impl Opcode {
    pub fn from_mnemonic(m: &str) -> Opcode {
        match m {
            "add" => Opcode::Add,
            "alloca" => Opcode::Alloca,
            "and" => Opcode::And,
            "ashr" => Opcode::AShr,
            "bitcast" => Opcode::BitCast,
            "br" => Opcode::Br,
            "call" => Opcode::Call,
            "getelementptr" => Opcode::GetElementPtr,
            "icmp" => Opcode::ICmp,
            "load" => Opcode::Load,
            "lshr" => Opcode::LShr,
            "mul" => Opcode::Mul,
            "or" => Opcode::Or,
            "phi" => Opcode::Phi,
            "ret" => Opcode::Ret,
            "sext" => Opcode::SExt,
            "select" => Opcode::Select,
            "shl" => Opcode::Shl,
            "store" => Opcode::Store,
            "sub" => Opcode::Sub,
            "trunc" => Opcode::Trunc,
            "xor" => Opcode::Xor,
            "zext" => Opcode::ZExt,
            other => Opcode::Other(other.to_string()),
        }
    }

    pub fn mnemonic(&self) -> &str {
        match self {
            Opcode::Add => "add",
            Opcode::Alloca => "alloca",
            Opcode::And => "and",
            Opcode::AShr => "ashr",
            Opcode::BitCast => "bitcast",
            Opcode::Br => "br",
            Opcode::Call => "call",
            Opcode::GetElementPtr => "getelementptr",
            Opcode::ICmp => "icmp",
            Opcode::Load => "load",
            Opcode::LShr => "lshr",
            Opcode::Mul => "mul",
            Opcode::Or => "or",
            Opcode::Phi => "phi",
            Opcode::Ret => "ret",
            Opcode::SExt => "sext",
            Opcode::Select => "select",
            Opcode::Shl => "shl",
            Opcode::Store => "store",
            Opcode::Sub => "sub",
            Opcode::Trunc => "trunc",
            Opcode::Xor => "xor",
            Opcode::ZExt => "zext",
            Opcode::Other(m) => m,
        }
    }

    pub fn is_terminator(&self) -> bool {
        TERMINATORS.contains(&self.mnemonic())
    }

    pub fn is_binary_operator(&self) -> bool {
        BINARY_OPERATORS.contains(&self.mnemonic())
    }

    pub fn is_cast(&self) -> bool {
        CASTS.contains(&self.mnemonic())
    }

    /// Matches `isa<UnaryInstruction>`: allocas, loads, casts, `fneg`,
    /// `extractvalue` and `va_arg`. `freeze` is excluded, as in LLVM's own
    /// `classof`.
    pub fn is_unary_instruction(&self) -> bool {
        self.is_cast()
            || matches!(
                self.mnemonic(),
                "alloca" | "load" | "fneg" | "extractvalue" | "va_arg"
            )
    }

    pub fn is_memory(&self) -> bool {
        matches!(
            self,
            Opcode::Load | Opcode::Store | Opcode::Alloca | Opcode::GetElementPtr
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl IrModule {
    pub fn instruction_count(&self) -> usize {
        self.functions
            .iter()
            .flat_map(|f| &f.blocks)
            .map(|b| b.instructions.len())
            .sum()
    }

    /// Appends the functions of `other`, as if the two files were linked
    /// textually.
    pub fn concat(&mut self, other: IrModule) {
        self.functions.extend(other.functions);
    }
}

/// Error for structurally invalid IR.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}
