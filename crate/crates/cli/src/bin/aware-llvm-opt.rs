//! `aware-llvm-opt`: a small `opt` look-alike over the LLVM C API.
//!
//! Loads `libLLVM` at run time, so machines that ship the shared library but
//! not the `opt` tool can still run pass sequences. Accepts legacy-style
//! `--pass` flags, `-passes=<pipeline>`, `-O0`..`-O3`/`-Os`/`-Oz`, `-S` and
//! `-o <file>`. Each flag runs as its own pipeline, in order.
//!
//! `--aware-features` prints a feature map computed through LLVM's own
//! in-memory IR instead of transforming the module.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::{c_char, c_void, CStr, CString};
use std::io::Read;
use std::process::ExitCode;

use aware_core::passes::new_pm_name;
use libloading::Library;

type Ptr = *mut c_void;

const LIB_CANDIDATES: &[&str] = &[
    "libLLVM-14.so.1",
    "libLLVM-14.so",
    "libLLVM-15.so.1",
    "libLLVM-15.so",
    "libLLVM.so",
];

macro_rules! llvm_api {
    ($($name:ident : fn($($arg:ty),*) $(-> $ret:ty)?;)*) => {
        #[allow(non_snake_case)]
        struct Api {
            _lib: Library,
            $($name: unsafe extern "C" fn($($arg),*) $(-> $ret)?,)*
        }

        impl Api {
            #[allow(non_snake_case)]
            fn load(lib: Library) -> Result<Api, String> {
                unsafe {
                    $(let $name = *lib
                        .get::<unsafe extern "C" fn($($arg),*) $(-> $ret)?>(
                            concat!(stringify!($name), "\0").as_bytes())
                        .map_err(|e| format!("missing symbol {}: {e}", stringify!($name)))?;)*
                    Ok(Api { _lib: lib, $($name,)* })
                }
            }
        }
    };
}

llvm_api! {
    LLVMContextCreate: fn() -> Ptr;
    LLVMCreateMemoryBufferWithMemoryRangeCopy: fn(*const c_char, usize, *const c_char) -> Ptr;
    LLVMParseIRInContext: fn(Ptr, Ptr, *mut Ptr, *mut *mut c_char) -> i32;
    LLVMCreatePassBuilderOptions: fn() -> Ptr;
    LLVMRunPasses: fn(Ptr, *const c_char, Ptr, Ptr) -> Ptr;
    LLVMGetErrorMessage: fn(Ptr) -> *mut c_char;
    LLVMDisposeErrorMessage: fn(*mut c_char);
    LLVMDisposeMessage: fn(*mut c_char);
    LLVMVerifyModule: fn(Ptr, u32, *mut *mut c_char) -> i32;
    LLVMPrintModuleToString: fn(Ptr) -> *mut c_char;
    LLVMGetFirstFunction: fn(Ptr) -> Ptr;
    LLVMGetNextFunction: fn(Ptr) -> Ptr;
    LLVMIsDeclaration: fn(Ptr) -> i32;
    LLVMGetFirstBasicBlock: fn(Ptr) -> Ptr;
    LLVMGetNextBasicBlock: fn(Ptr) -> Ptr;
    LLVMGetFirstInstruction: fn(Ptr) -> Ptr;
    LLVMGetNextInstruction: fn(Ptr) -> Ptr;
    LLVMGetInstructionOpcode: fn(Ptr) -> u32;
    LLVMGetBasicBlockTerminator: fn(Ptr) -> Ptr;
    LLVMGetNumSuccessors: fn(Ptr) -> u32;
    LLVMGetSuccessor: fn(Ptr, u32) -> Ptr;
    LLVMIsConditional: fn(Ptr) -> i32;
    LLVMGetNumOperands: fn(Ptr) -> i32;
    LLVMGetOperand: fn(Ptr, u32) -> Ptr;
    LLVMIsAConstantInt: fn(Ptr) -> Ptr;
    LLVMIsAConstantFP: fn(Ptr) -> Ptr;
    LLVMIsABinaryOperator: fn(Ptr) -> Ptr;
    LLVMIsAUnaryInstruction: fn(Ptr) -> Ptr;
    LLVMTypeOf: fn(Ptr) -> Ptr;
    LLVMGetTypeKind: fn(Ptr) -> u32;
    LLVMGetIntTypeWidth: fn(Ptr) -> u32;
    LLVMConstIntGetZExtValue: fn(Ptr) -> u64;
    LLVMCountIncoming: fn(Ptr) -> u32;
}

// LLVMOpcode values from llvm-c/Core.h.
const OP_BR: u32 = 2;
const OP_CALL: u32 = 45;
const OP_PHI: u32 = 44;
const OP_ALLOCA: u32 = 26;
const OP_LOAD: u32 = 27;
const OP_STORE: u32 = 28;
const OP_GEP: u32 = 29;
const COUNTED: &[(u32, &str)] = &[
    (22, "NumAShrInst"),
    (8, "NumAddInst"),
    (26, "NumAllocaInst"),
    (23, "NumAndInst"),
    (41, "NumBitCastInst"),
    (2, "NumBrInst"),
    (45, "NumCallInst"),
    (29, "NumGetElementPtrInst"),
    (42, "NumICmpInst"),
    (21, "NumLShrInst"),
    (27, "NumLoadInst"),
    (12, "NumMulInst"),
    (24, "NumOrInst"),
    (44, "NumPHIInst"),
    (1, "NumRetInst"),
    (32, "NumSExtInst"),
    (46, "NumSelectInst"),
    (20, "NumShlInst"),
    (28, "NumStoreInst"),
    (10, "NumSubInst"),
    (30, "NumTruncInst"),
    (25, "NumXorInst"),
    (31, "NumZExtInst"),
];
const INTEGER_TYPE_KIND: u32 = 8;
const VERIFY_RETURN_STATUS: u32 = 2;

struct Args {
    input: String,
    output: Option<String>,
    pipelines: Vec<String>,
    features: bool,
    version: bool,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut a = Args {
        input: "-".into(),
        output: None,
        pipelines: Vec::new(),
        features: false,
        version: false,
    };
    let mut input = None;
    let mut i = 0;
    while i < argv.len() {
        let arg = argv[i].as_str();
        i += 1;
        match arg {
            "-S" | "--S" => {}
            "--version" | "-version" => a.version = true,
            "--aware-features" => a.features = true,
            "-o" => {
                a.output = Some(argv.get(i).ok_or("-o needs a file name")?.clone());
                i += 1;
            }
            "-" => input = Some("-".to_string()),
            _ if arg.starts_with("-o=") => a.output = Some(arg[3..].to_string()),
            _ if arg.starts_with("-passes=") || arg.starts_with("--passes=") => {
                a.pipelines.push(arg.split_once('=').unwrap().1.to_string())
            }
            _ if arg.starts_with('-') => a.pipelines.push(new_pm_name(arg)),
            _ => {
                if input.replace(arg.to_string()).is_some() {
                    return Err("more than one input file".into());
                }
            }
        }
    }
    if let Some(f) = input {
        a.input = f;
    }
    Ok(a)
}

fn open_library() -> Result<(Library, String), String> {
    let env = std::env::var("AWARE_LIBLLVM").ok();
    let mut errors = Vec::new();
    for cand in env.iter().map(String::as_str).chain(LIB_CANDIDATES.iter().copied()) {
        match unsafe { Library::new(cand) } {
            Ok(lib) => return Ok((lib, cand.to_string())),
            Err(e) => errors.push(format!("{cand}: {e}")),
        }
    }
    Err(format!("cannot load libLLVM ({})", errors.join("; ")))
}

fn version_of(lib_name: &str) -> String {
    lib_name
        .rsplit('/')
        .next()
        .and_then(|f| f.strip_prefix("libLLVM-"))
        .map(|rest| rest.split(".so").next().unwrap_or(rest).to_string())
        .unwrap_or_else(|| "unknown".into())
}

unsafe fn take_message(api: &Api, msg: *mut c_char) -> String {
    if msg.is_null() {
        return String::new();
    }
    let s = CStr::from_ptr(msg).to_string_lossy().into_owned();
    (api.LLVMDisposeMessage)(msg);
    s
}

fn read_input(path: &str) -> Result<Vec<u8>, String> {
    if path == "-" {
        let mut buf = Vec::new();
        std::io::stdin()
            .read_to_end(&mut buf)
            .map_err(|e| format!("<stdin>: {e}"))?;
        Ok(buf)
    } else {
        std::fs::read(path).map_err(|e| format!("{path}: {e}"))
    }
}

fn run(args: &Args) -> Result<(), String> {
    let (lib, lib_name) = open_library()?;
    if args.version {
        println!("aware-llvm-opt (shim over {lib_name})\n  LLVM version {}", version_of(&lib_name));
        return Ok(());
    }
    let api = Api::load(lib)?;
    let bytes = read_input(&args.input)?;
    unsafe {
        let ctx = (api.LLVMContextCreate)();
        let name = CString::new(args.input.clone()).map_err(|e| e.to_string())?;
        let buf = (api.LLVMCreateMemoryBufferWithMemoryRangeCopy)(
            bytes.as_ptr() as *const c_char,
            bytes.len(),
            name.as_ptr(),
        );
        let mut module: Ptr = std::ptr::null_mut();
        let mut msg: *mut c_char = std::ptr::null_mut();
        if (api.LLVMParseIRInContext)(ctx, buf, &mut module, &mut msg) != 0 {
            return Err(format!("{}: error: {}", args.input, take_message(&api, msg)));
        }
        if args.features {
            let map = features(&api, module);
            println!("{}", serde_json::to_string(&map).map_err(|e| e.to_string())?);
            return Ok(());
        }
        let opts = (api.LLVMCreatePassBuilderOptions)();
        for p in &args.pipelines {
            let text = CString::new(p.as_str()).map_err(|e| e.to_string())?;
            let err = (api.LLVMRunPasses)(module, text.as_ptr(), std::ptr::null_mut(), opts);
            if !err.is_null() {
                let m = (api.LLVMGetErrorMessage)(err);
                let s = CStr::from_ptr(m).to_string_lossy().into_owned();
                (api.LLVMDisposeErrorMessage)(m);
                return Err(format!("pass '{p}': {s}"));
            }
        }
        let mut vmsg: *mut c_char = std::ptr::null_mut();
        if (api.LLVMVerifyModule)(module, VERIFY_RETURN_STATUS, &mut vmsg) != 0 {
            return Err(format!("broken module after passes: {}", take_message(&api, vmsg)));
        }
        take_message(&api, vmsg);
        let text = take_message(&api, (api.LLVMPrintModuleToString)(module));
        match &args.output {
            Some(out) if out != "-" => std::fs::write(out, text).map_err(|e| format!("{out}: {e}"))?,
            _ => print!("{text}"),
        }
    }
    Ok(())
}

/// Feature counts read straight off LLVM's in-memory module.
unsafe fn features(api: &Api, module: Ptr) -> BTreeMap<&'static str, u64> {
    let mut c: HashMap<&'static str, u64> = HashMap::new();
    let mut bump = |k: &'static str, n: u64| *c.entry(k).or_default() += n;
    let mut f = (api.LLVMGetFirstFunction)(module);
    while !f.is_null() {
        if (api.LLVMIsDeclaration)(f) == 0 {
            bump("TotalFuncs", 1);
            let mut blocks = Vec::new();
            let mut bb = (api.LLVMGetFirstBasicBlock)(f);
            while !bb.is_null() {
                blocks.push(bb);
                bb = (api.LLVMGetNextBasicBlock)(bb);
            }
            let mut succs: HashMap<Ptr, HashSet<Ptr>> = HashMap::new();
            let mut preds: HashMap<Ptr, HashSet<Ptr>> = HashMap::new();
            for &b in &blocks {
                let term = (api.LLVMGetBasicBlockTerminator)(b);
                let mut set = HashSet::new();
                if !term.is_null() {
                    for i in 0..(api.LLVMGetNumSuccessors)(term) {
                        let s = (api.LLVMGetSuccessor)(term, i);
                        set.insert(s);
                        preds.entry(s).or_default().insert(b);
                    }
                }
                succs.insert(b, set);
            }
            for &b in &blocks {
                let np = preds.get(&b).map_or(0, |s| s.len());
                let ns = succs[&b].len();
                bump("TotalBlocks", 1);
                bump("NumEdges", ns as u64);
                let flags = [
                    ("onePred", np == 1),
                    ("onePredOneSuc", np == 1 && ns == 1),
                    ("onePredTwoSuc", np == 1 && ns == 2),
                    ("oneSuccessor", ns == 1),
                    ("twoPred", np == 2),
                    ("twoPredOneSuc", np == 2 && ns == 1),
                    ("twoEach", np == 2 && ns == 2),
                    ("twoSuccessor", ns == 2),
                    ("morePreds", np > 2),
                ];
                for (k, on) in flags {
                    bump(k, on as u64);
                }
                if ns > 1 {
                    let crit = succs[&b]
                        .iter()
                        .filter(|s| preds.get(s).map_or(0, |p| p.len()) > 1)
                        .count();
                    bump("CriticalCount", crit as u64);
                }
                let (mut n, mut phis, mut args, mut leading, mut prefix) = (0u64, 0u64, 0u64, 0u64, true);
                let mut inst = (api.LLVMGetFirstInstruction)(b);
                while !inst.is_null() {
                    n += 1;
                    let op = (api.LLVMGetInstructionOpcode)(inst);
                    bump("TotalInsts", 1);
                    if let Some((_, k)) = COUNTED.iter().find(|(o, _)| *o == op) {
                        bump(k, 1);
                    }
                    if op == OP_PHI {
                        phis += 1;
                        args += (api.LLVMCountIncoming)(inst) as u64;
                        leading += prefix as u64;
                    } else {
                        prefix = false;
                    }
                    if matches!(op, OP_LOAD | OP_STORE | OP_ALLOCA | OP_GEP) {
                        bump("TotalMemInst", 1);
                    }
                    if !(api.LLVMIsAUnaryInstruction)(inst).is_null() {
                        bump("testUnary", 1);
                    }
                    if op == OP_BR {
                        bump("BranchCount", 1);
                        bump("UncondBranches", ((api.LLVMIsConditional)(inst) == 0) as u64);
                    }
                    if op == OP_CALL {
                        let ty = (api.LLVMTypeOf)(inst);
                        bump("returnInt", ((api.LLVMGetTypeKind)(ty) == INTEGER_TYPE_KIND) as u64);
                    }
                    let nops = (api.LLVMGetNumOperands)(inst).max(0) as u32;
                    let mut has_const = false;
                    for i in 0..nops {
                        let v = (api.LLVMGetOperand)(inst, i);
                        if v.is_null() {
                            continue;
                        }
                        if !(api.LLVMIsAConstantFP)(v).is_null() {
                            has_const = true;
                        }
                        if (api.LLVMIsAConstantInt)(v).is_null() {
                            continue;
                        }
                        has_const = true;
                        let w = (api.LLVMGetIntTypeWidth)((api.LLVMTypeOf)(v));
                        bump("const32Bit", (w == 32) as u64);
                        bump("const64Bit", (w == 64) as u64);
                        if w <= 64 {
                            let z = (api.LLVMConstIntGetZExtValue)(v);
                            bump("numConstZeroes", (z == 0) as u64);
                            bump("numConstOnes", (z == 1) as u64);
                        }
                    }
                    if has_const && !(api.LLVMIsABinaryOperator)(inst).is_null() {
                        bump("binaryConstArg", 1);
                    }
                    inst = (api.LLVMGetNextInstruction)(inst);
                }
                bump("BlockLow", (n < 15) as u64);
                bump("BlockMid", (15..=500).contains(&n) as u64);
                bump("ArgsPhi", args);
                bump("BeginPhi", leading);
                bump("BBNumArgsHi", (args > 5) as u64);
                bump("BBNumArgsLo", (1..=5).contains(&args) as u64);
                bump("BB03Phi", (1..=3).contains(&phis) as u64);
                bump("BBHiPhi", (phis > 3) as u64);
                bump("BBNoPhi", (phis == 0) as u64);
            }
        }
        f = (api.LLVMGetNextFunction)(f);
    }
    c.into_iter().filter(|(_, v)| *v > 0).collect()
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let result = parse_args(&argv).and_then(|a| run(&a));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aware-llvm-opt: {e}");
            ExitCode::FAILURE
        }
    }
}
